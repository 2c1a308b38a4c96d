#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "unvp/data.hpp"
#include "unvp/generalizer.hpp"

#include "test_util.hpp"

using namespace unvp;

namespace {

struct Run {
    std::vector<EpochMetrics> rows;
    std::vector<std::vector<double>> params;
};

Run run_blobs(const RunConfig& cfg, std::uint64_t data_seed) {
    auto pair = make_blob_domains(3, static_cast<std::size_t>(cfg.train_n) / 3, {0.5236, 1.3, 0.0, 0.0}, data_seed);
    auto x_src = preprocess(pair.source, nullptr);
    auto x_unseen = preprocess(pair.unseen, nullptr);
    auto st = make_train_state(cfg, 2, 3, 0, 0, preproc_logdet(pair.source.meta, 2));
    Run out;
    train(st, x_src, pair.source.labels, x_unseen, pair.unseen.labels,
          [&](const EpochMetrics& m) { out.rows.push_back(m); });
    for (const auto& p : st.params) out.params.push_back(p->data);
    return out;
}

} // namespace

TEST_CASE("beta 0 and K 0 degenerate to plain augmented training", "[training]") {
    RunConfig cfg;
    cfg.mode_name = "eunvp";
    cfg.train_n = 60;
    cfg.batch = 32;
    cfg.epochs = 1;
    cfg.pre_epochs = 1;
    cfg.lr = 1e-3;
    cfg.flow_steps = 2;
    cfg.flow_hidden = 8;

    // K = 0: no maximization phases ever fire
    cfg.k_rounds = 0;
    auto no_rounds = run_blobs(cfg, 70);
    REQUIRE(no_rounds.rows.size() == 3); // 1 pretrain + (2+0)*1 minimization
    for (const auto& m : no_rounds.rows) CHECK(m.pool_size == 0);

    // beta = 0: phases fire but select nothing
    cfg.k_rounds = 2;
    cfg.beta = 0.0;
    auto empty_rounds = run_blobs(cfg, 70);
    REQUIRE(empty_rounds.rows.size() == 5); // 1 pretrain + (2+2)*1 minimization
    for (const auto& m : empty_rounds.rows) CHECK(m.pool_size == 0);
}

TEST_CASE("pure training separates the blob classes", "[training]") {
    RunConfig cfg;
    cfg.mode_name = "pure";
    cfg.train_n = 300;
    cfg.batch = 64;
    cfg.epochs = 15;
    cfg.k_rounds = 0; // 30 minimization epochs in total
    cfg.lr = 1e-2;
    auto run = run_blobs(cfg, 71);
    REQUIRE(run.rows.size() == 30);
    // neighboring blobs sit 2.47 sigma from the shared boundary, so the best
    // achievable rate is about 0.987
    CHECK(run.rows.back().acc_src >= 0.97);
    for (const auto& m : run.rows) {
        CHECK(m.phase == "min");
        CHECK_FALSE(m.nll.has_value());
    }
}

TEST_CASE("identical configurations rerun bitwise identically", "[training]") {
    RunConfig cfg;
    cfg.mode_name = "eunvp";
    cfg.train_n = 60;
    cfg.batch = 32;
    cfg.epochs = 1;
    cfg.pre_epochs = 1;
    cfg.k_rounds = 1;
    cfg.beta = 0.3;
    cfg.t_max = 2;
    cfg.eta_adv = 0.05;
    cfg.lr = 1e-3;
    cfg.flow_steps = 2;
    cfg.flow_hidden = 8;
    cfg.seed = 99;

    auto a = run_blobs(cfg, 72);
    auto b = run_blobs(cfg, 72);
    REQUIRE(a.params.size() == b.params.size());
    for (std::size_t i = 0; i < a.params.size(); ++i) CHECK(a.params[i] == b.params[i]);
    REQUIRE(a.rows.size() == b.rows.size());
    for (std::size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].acc_src == b.rows[i].acc_src);
        CHECK(a.rows[i].ce == b.rows[i].ce);
        CHECK(a.rows[i].pool_size == b.rows[i].pool_size);
    }

    // a different seed leads the optimizer elsewhere
    cfg.seed = 100;
    auto c = run_blobs(cfg, 72);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.params.size() && !any_diff; ++i) any_diff = a.params[i] != c.params[i];
    CHECK(any_diff);
}

TEST_CASE("a source-only convnet drops hard on the inverted digit domain", "[training][slow]") {
    const auto corpus_path = std::filesystem::temp_directory_path() / "unvp_test_train_corpus.ds";
    save_dataset(make_glyph_corpus(120, 7), corpus_path.string());
    auto pair = make_digit_domains(corpus_path.string(), 600, 600, 7);

    auto data_rng = make_rng(7, kStreamData);
    auto x_src = preprocess(pair.source, &data_rng);
    auto x_unseen = preprocess(pair.unseen, nullptr);

    RunConfig cfg;
    cfg.mode_name = "pure";
    cfg.batch = 128;
    cfg.epochs = 8;
    cfg.k_rounds = 0;
    cfg.lr = 2e-3;
    auto st = make_train_state(cfg, pair.source.dim(), 10, pair.source.img_h(), pair.source.img_w(), 0.0);
    std::vector<EpochMetrics> rows;
    train(st, x_src, pair.source.labels, x_unseen, pair.unseen.labels,
          [&](const EpochMetrics& m) { rows.push_back(m); });

    REQUIRE(rows.size() == 16);
    const auto& last = rows.back();
    REQUIRE(last.acc_unseen.has_value());
    INFO("source accuracy " << last.acc_src << ", unseen accuracy " << *last.acc_unseen);
    CHECK(last.acc_src >= 0.95);
    CHECK(last.acc_src - *last.acc_unseen >= 0.15);
}
