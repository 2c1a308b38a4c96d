#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

// Subprocess tests for the command line binary. Every run gets its own
// working directory under the system temp dir, so relative --out paths never
// touch the build tree.

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "unvp_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int run_cli(const fs::path& dir, const std::string& args) {
    const std::string cmd = "cd '" + dir.string() + "' && '" + UNVP_CLI_PATH + "' " + args +
                            " > cli_stdout.log 2> cli_stderr.log";
    const int rc = std::system(cmd.c_str());
    REQUIRE(rc != -1);
    REQUIRE(WIFEXITED(rc));
    return WEXITSTATUS(rc);
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path);
    REQUIRE(f.good());
    std::ostringstream out;
    out << f.rdbuf();
    return out.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

// Extracts the number following "key": in a flat JSON string.
double json_number(const std::string& text, const std::string& key, std::size_t from = 0) {
    const auto at = text.find("\"" + key + "\":", from);
    REQUIRE(at != std::string::npos);
    return std::strtod(text.c_str() + at + key.size() + 3, nullptr);
}

const std::string kTinyEunvp = "train --mode eunvp --dataset blobs --seed 4 --train-n 60 --batch 32"
                               " --epochs 1 --pre-epochs 1 --K 2 --t-max 2 --eta-adv 0.05"
                               " --flow-steps 2 --flow-hidden 8 --lr 1e-3 --out out";

// Several cases inspect the same trained artifacts; train once and share.
const fs::path& trained_eunvp_dir() {
    static const fs::path dir = [] {
        auto d = fresh_dir("fixture_eunvp");
        REQUIRE(run_cli(d, kTinyEunvp) == 0);
        return d;
    }();
    return dir;
}

} // namespace

TEST_CASE("train writes config, metrics, summary and a checkpoint", "[cli]") {
    const auto& dir = trained_eunvp_dir();
    CHECK(fs::exists(dir / "out" / "config.json"));
    CHECK(fs::exists(dir / "out" / "summary.json"));
    CHECK(fs::exists(dir / "out" / "checkpoint.unvpc"));

    // one config line plus one record per epoch: 1 pretrain + (2 + K) * 1
    const auto lines = lines_of(read_file(dir / "out" / "metrics.jsonl"));
    REQUIRE(lines.size() == 6);
    CHECK(lines[0].rfind("{\"config\":", 0) == 0);
    for (std::size_t i = 1; i < lines.size(); ++i) {
        CHECK(lines[i].find("\"acc_src\":") != std::string::npos);
        CHECK(lines[i].find("\"acc_unseen\":") != std::string::npos);
    }
    CHECK(lines[1].find("\"ce\":null") != std::string::npos); // pretrain row

    const auto summary = read_file(dir / "out" / "summary.json");
    CHECK(json_number(summary, "epochs_run") == 5.0);
    CHECK(json_number(summary, "rounds_done") == 2.0);
}

TEST_CASE("the hard-sample pool grows once per scheduled round", "[cli]") {
    const auto lines = lines_of(read_file(trained_eunvp_dir() / "out" / "metrics.jsonl"));
    std::vector<double> pool;
    for (std::size_t i = 1; i < lines.size(); ++i) pool.push_back(json_number(lines[i], "pool_size"));
    int growths = 0;
    for (std::size_t i = 1; i < pool.size(); ++i)
        if (pool[i] > pool[i - 1]) ++growths;
    CHECK(growths == 2);
    CHECK(pool.back() == 24.0); // two rounds of round(0.2 * 60) samples
}

TEST_CASE("identical configurations write identical artifacts", "[cli]") {
    auto a = fresh_dir("determinism_a");
    auto b = fresh_dir("determinism_b");
    REQUIRE(run_cli(a, kTinyEunvp) == 0);
    REQUIRE(run_cli(b, kTinyEunvp) == 0);
    CHECK(read_file(a / "out" / "metrics.jsonl") == read_file(b / "out" / "metrics.jsonl"));
    CHECK(read_file(a / "out" / "summary.json") == read_file(b / "out" / "summary.json"));
}

TEST_CASE("eval reproduces the trained accuracy with confusion counts", "[cli]") {
    const auto& dir = trained_eunvp_dir();
    REQUIRE(run_cli(dir, "eval --checkpoint out/checkpoint.unvpc --out-dir eval_out") == 0);

    const auto eval = read_file(dir / "eval_out" / "eval.json");
    CHECK(eval.find("\"tag\":\"blobs-source\"") != std::string::npos);
    CHECK(eval.find("\"tag\":\"blobs-unseen\"") != std::string::npos);

    // blobs are continuous, so evaluation sees the very samples trained on
    const auto summary = read_file(dir / "out" / "summary.json");
    const double trained_acc = json_number(summary, "acc_src");
    const auto src_at = eval.find("blobs-source");
    CHECK(json_number(eval, "count", src_at) == 60.0);
    CHECK(json_number(eval, "accuracy", src_at) == trained_acc);
}

TEST_CASE("export-latents writes one row per sample in both domains", "[cli]") {
    const auto& dir = trained_eunvp_dir();
    REQUIRE(run_cli(dir, "export-latents --checkpoint out/checkpoint.unvpc --out-dir latent_out") == 0);
    const auto lines = lines_of(read_file(dir / "latent_out" / "latents.tsv"));
    REQUIRE(lines.size() == 121); // comment line + 60 source + 60 unseen rows
    CHECK(lines[0].rfind("# config:", 0) == 0);
    CHECK(lines[1].find("blobs-source") != std::string::npos);
    CHECK(lines.back().find("blobs-unseen") != std::string::npos);
    CHECK(!fs::exists(dir / "latent_out" / "projection.tsv")); // 2-d data projects as-is
}

TEST_CASE("perturb appends a synthesis round with non-decreasing traces", "[cli]") {
    const auto& dir = trained_eunvp_dir();
    REQUIRE(run_cli(dir, "perturb --checkpoint out/checkpoint.unvpc --out-dir perturb_out") == 0);

    const auto rows = lines_of(read_file(dir / "perturb_out" / "perturbed.tsv"));
    CHECK(rows.size() == 13); // comment line + round(0.2 * 60) samples

    const auto traces = lines_of(read_file(dir / "perturb_out" / "traces.tsv"));
    REQUIRE(traces.size() > 1);
    int group = -1;
    double prev = 0.0;
    for (std::size_t i = 1; i < traces.size(); ++i) {
        std::istringstream in(traces[i]);
        int g, s;
        double j;
        REQUIRE(static_cast<bool>(in >> g >> s >> j));
        if (g != group)
            group = g;
        else
            CHECK(j >= prev);
        prev = j;
    }
}

TEST_CASE("pure checkpoints refuse the flow-only commands", "[cli]") {
    auto dir = fresh_dir("pure_ckpt");
    REQUIRE(run_cli(dir, "train --mode pure --dataset blobs --seed 4 --train-n 60 --batch 32"
                         " --epochs 1 --pre-epochs 1 --K 0 --lr 1e-2 --out out") == 0);

    const auto lines = lines_of(read_file(dir / "out" / "metrics.jsonl"));
    REQUIRE(lines.size() == 3); // config line + (2 + 0) * 1 epochs, no pretrain
    for (std::size_t i = 1; i < lines.size(); ++i) {
        CHECK(lines[i].find("\"nll\":null") != std::string::npos);
        CHECK(lines[i].find("\"pool_size\":0") != std::string::npos);
    }

    CHECK(run_cli(dir, "export-latents --checkpoint out/checkpoint.unvpc --out-dir l") == 2);
    CHECK(run_cli(dir, "perturb --checkpoint out/checkpoint.unvpc --out-dir p") == 2);
}

TEST_CASE("a rendered corpus trains digits end to end", "[cli][slow]") {
    auto dir = fresh_dir("digits_e2e");
    REQUIRE(run_cli(dir, "make-corpus --out corpus.ds --n-per-class 12 --seed 3") == 0);
    REQUIRE(fs::exists(dir / "corpus.ds"));

    REQUIRE(run_cli(dir, "train --mode pure --dataset digits --corpus corpus.ds --train-n 100"
                         " --unseen-n 20 --batch 32 --epochs 1 --pre-epochs 1 --K 0 --lr 1e-3 --out out") == 0);
    const auto summary = read_file(dir / "out" / "summary.json");
    CHECK(summary.find("\"acc_unseen\":null") == std::string::npos);
    CHECK(json_number(summary, "pool_size") == 0.0);
}

TEST_CASE("a grid sweep reports per-cell status and a partial-failure code", "[cli]") {
    auto dir = fresh_dir("grid_mixed");
    const int rc = run_cli(dir, "grid --mode eunvp --dataset blobs --seed 4 --train-n 60 --batch 32"
                                " --epochs 1 --pre-epochs 1 --K 1 --t-max 2 --eta-adv 0.05"
                                " --flow-steps 2 --flow-hidden 8 --out out --grid lr=1e-3,bogus");
    CHECK(rc == 1);
    const auto lines = lines_of(read_file(dir / "out" / "grid.tsv"));
    REQUIRE(lines.size() == 4); // comment, header, one cell per lr value
    CHECK(lines[1] == "lr\tacc_src\tacc_unseen\tstatus");
    CHECK(lines[2].rfind("\tok") == lines[2].size() - 3);
    CHECK(lines[3].find("failed:") != std::string::npos);
}

TEST_CASE("usage and numeric failures map to distinct exit codes", "[cli]") {
    auto dir = fresh_dir("exit_codes");
    CHECK(run_cli(dir, "train --mode bogus --out out") == 2);
    CHECK(run_cli(dir, "eval") == 2); // missing required --checkpoint
    CHECK(run_cli(dir, "train --mode eunvp --dataset blobs --seed 4 --train-n 60 --batch 32"
                       " --epochs 1 --pre-epochs 1 --K 0 --flow-steps 2 --flow-hidden 8"
                       " --lr 1e6 --out out") == 3);
}
