// unvp command line: train UNVP/E-UNVP models, evaluate checkpoints, sweep
// parameter grids, synthesize hard samples from a checkpoint, export latent
// scatter data, and render the bundled glyph-digit corpus.
//
// Exit codes: 0 success, 1 partial grid failure, 2 usage or configuration
// error, 3 runtime error (I/O, numeric failure, unusable data).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unvp/checkpoint.hpp"
#include "unvp/config.hpp"
#include "unvp/data.hpp"
#include "unvp/generalizer.hpp"

using namespace unvp;

namespace {

// ---------------------------------------------------------------------------
// Config plumbing
// ---------------------------------------------------------------------------

// Every config key becomes a --key flag; values are applied through the same
// parser as config-file lines so errors and types stay identical.
struct FlagBag {
    std::string config_path;
    std::map<std::string, std::string> values;
    std::vector<std::pair<std::string, CLI::Option*>> options;
};

void add_config_flags(CLI::App* cmd, FlagBag& bag) {
    cmd->add_option("--config", bag.config_path, "key=value configuration file ('#' comments allowed)");
    static const std::pair<const char*, const char*> keys[] = {
        {"mode", "pure, unvp or eunvp"},
        {"dataset", "blobs, digits or file:PATH"},
        {"corpus", "digit corpus container for --dataset digits"},
        {"out", "output directory"},
        {"seed", "run seed"},
        {"lr", "learning rate"},
        {"batch", "batch size"},
        {"epochs", "minimization epochs per schedule segment"},
        {"pre-epochs", "flow pre-training epochs"},
        {"alpha", "hard-sample penalty weight"},
        {"beta", "fraction of the source set perturbed per round"},
        {"K", "maximization rounds"},
        {"gamma", "prior mean scale"},
        {"lambda", "prior noise-shift scale"},
        {"t-max", "ascent steps per synthesis"},
        {"eta-adv", "ascent step size"},
        {"feature-reg-weight", "classifier feature term weight"},
        {"flow-steps", "flow depth"},
        {"flow-hidden", "coupling net width"},
        {"train-n", "source sample count"},
        {"unseen-n", "unseen sample count"},
        {"optimizer", "adam or sgd"},
    };
    for (const auto& [key, help] : keys) {
        auto* opt = cmd->add_option("--" + std::string(key), bag.values[key], help);
        bag.options.emplace_back(key, opt);
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config file not found: " + path);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// Config file first, then explicit flags on top.
void overlay_flags(RunConfig& cfg, const FlagBag& bag) {
    if (!bag.config_path.empty()) cfg.apply_kv_lines(read_text_file(bag.config_path));
    for (const auto& [key, opt] : bag.options)
        if (opt->count() > 0) cfg.apply_kv(key, bag.values.at(key));
    cfg.validate();
}

RunConfig build_config(const FlagBag& bag) {
    RunConfig cfg;
    overlay_flags(cfg, bag);
    return cfg;
}

// ---------------------------------------------------------------------------
// Dataset resolution
// ---------------------------------------------------------------------------

constexpr double kBlobUnseenRotation = 0.5235987755982988; // 30 degrees
constexpr double kBlobUnseenScale = 1.3;

struct Domains {
    Dataset source;
    Dataset unseen;
    bool has_unseen = false;
};

Domains resolve_domains(const RunConfig& cfg) {
    Domains d;
    if (cfg.dataset == "blobs") {
        auto pair = make_blob_domains(3, static_cast<std::size_t>(cfg.train_n) / 3,
                                      {kBlobUnseenRotation, kBlobUnseenScale, 0.0, 0.0}, cfg.seed);
        d.source = std::move(pair.source);
        d.unseen = std::move(pair.unseen);
        d.has_unseen = true;
    } else if (cfg.dataset == "digits") {
        auto pair = make_digit_domains(cfg.corpus, static_cast<std::size_t>(cfg.train_n),
                                       static_cast<std::size_t>(cfg.unseen_n), cfg.seed);
        d.source = std::move(pair.source);
        d.unseen = std::move(pair.unseen);
        d.has_unseen = true;
    } else { // validate() guarantees file:PATH
        d.source = load_dataset(cfg.dataset.substr(5));
    }
    if (d.source.count() == 0) throw ConfigError("dataset '" + cfg.dataset + "' is empty");
    return d;
}

struct Prepared {
    Domains doms;
    ArrayPtr x_src;
    ArrayPtr x_unseen; // null without an unseen domain
};

// train_noise: dequantize the source with data-stream draws (training) or
// with the deterministic midpoint (evaluation). Unseen data always uses the
// midpoint.
Prepared prepare(const RunConfig& cfg, bool train_noise) {
    Prepared p;
    p.doms = resolve_domains(cfg);
    auto rng = make_rng(cfg.seed, kStreamData);
    p.x_src = preprocess(p.doms.source, train_noise ? &rng : nullptr);
    if (p.doms.has_unseen) p.x_unseen = preprocess(p.doms.unseen, nullptr);
    return p;
}

// ---------------------------------------------------------------------------
// Artifact emission
// ---------------------------------------------------------------------------

std::string opt_num(const std::optional<double>& v) { return v ? fmt_num(*v) : std::string("null"); }

// One self-contained metrics record per epoch, fixed field set.
std::string metric_json(const EpochMetrics& m) {
    std::string s = "{\"epoch\":" + std::to_string(m.epoch);
    s += ",\"ce\":" + opt_num(m.ce);
    s += ",\"nll\":" + opt_num(m.nll);
    s += ",\"acc_src\":" + fmt_num(m.acc_src);
    s += ",\"acc_unseen\":" + opt_num(m.acc_unseen);
    s += ",\"pool_size\":" + std::to_string(m.pool_size);
    s += "}";
    return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    f << text;
    if (!f) throw IoError("write failed: " + path.string());
}

// Batched argmax predictions without recording a tape.
std::vector<int> predict(const Classifier& clf, const ArrayPtr& x, std::size_t batch) {
    const std::size_t n = x->rows(), d = x->cols();
    std::vector<int> out(n);
    Tape t;
    t.recording = false;
    for (std::size_t at = 0; at < n; at += batch) {
        const std::size_t m = std::min(batch, n - at);
        auto xb = make_array({m, d});
        std::copy_n(x->data.begin() + at * d, m * d, xb->data.begin());
        auto logits = clf.forward(t, xb).logits;
        const std::size_t c = logits->cols();
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t best = 0;
            for (std::size_t j = 1; j < c; ++j)
                if (logits->data[i * c + j] > logits->data[i * c + best]) best = j;
            out[at + i] = static_cast<int>(best);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOutcome {
    TrainState st;
    std::vector<EpochMetrics> rows;
};

TrainOutcome run_training(const RunConfig& cfg, const std::function<void(const EpochMetrics&)>& on_epoch,
                          const std::function<void(const TrainState&)>& on_checkpoint) {
    auto p = prepare(cfg, true);
    const Dataset& src = p.doms.source;
    TrainOutcome out{make_train_state(cfg, src.dim(), static_cast<std::size_t>(src.num_classes), src.img_h(),
                                      src.img_w(), preproc_logdet(src.meta, src.dim())),
                     {}};
    const std::vector<int> no_labels;
    train(out.st, p.x_src, src.labels, p.x_unseen, p.doms.has_unseen ? p.doms.unseen.labels : no_labels,
          [&](const EpochMetrics& m) {
              out.rows.push_back(m);
              if (on_epoch) on_epoch(m);
          },
          on_checkpoint);
    return out;
}

int cmd_train(const FlagBag& bag) {
    const RunConfig cfg = build_config(bag);
    const std::filesystem::path out_dir = cfg.out_dir;
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "config.json", cfg.to_json() + "\n");

    std::ofstream metrics(out_dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics) throw IoError("cannot open for writing: " + (out_dir / "metrics.jsonl").string());
    metrics << "{\"config\":" << cfg.to_json() << "}\n";
    metrics.flush();

    const std::string ckpt_path = (out_dir / "checkpoint.unvpc").string();
    auto outcome = run_training(
        cfg, [&](const EpochMetrics& m) { metrics << metric_json(m) << "\n" << std::flush; },
        [&](const TrainState& st) { save_checkpoint(st, ckpt_path); });

    const EpochMetrics& last = outcome.rows.back();
    std::string summary = "{\"config\":" + cfg.to_json();
    summary += ",\"epochs_run\":" + std::to_string(outcome.rows.size());
    summary += ",\"rounds_done\":" + std::to_string(outcome.st.rounds_done);
    summary += ",\"final\":" + metric_json(last);
    summary += "}\n";
    write_text(out_dir / "summary.json", summary);

    std::printf("trained %s on %s: source accuracy %.4f", cfg.mode_name.c_str(), cfg.dataset.c_str(), last.acc_src);
    if (last.acc_unseen) std::printf(", unseen accuracy %.4f", *last.acc_unseen);
    std::printf(", hard pool %zu\n", last.pool_size);
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct DomainReport {
    std::string tag;
    std::size_t count = 0;
    double accuracy = 0.0;
    std::vector<std::vector<int>> confusion;
};

DomainReport report_domain(const TrainState& st, const Dataset& ds, const ArrayPtr& x) {
    if (ds.dim() != st.data_dim || static_cast<std::size_t>(ds.num_classes) != st.num_classes)
        throw ShapeError("dataset '" + ds.domain_tag + "' does not match the checkpointed model shape");
    DomainReport r;
    r.tag = ds.domain_tag;
    r.count = ds.count();
    r.confusion.assign(st.num_classes, std::vector<int>(st.num_classes, 0));
    const auto pred = predict(st.clf, x, static_cast<std::size_t>(st.cfg.batch));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        ++r.confusion[static_cast<std::size_t>(ds.labels[i])][static_cast<std::size_t>(pred[i])];
        if (pred[i] == ds.labels[i]) ++hits;
    }
    r.accuracy = static_cast<double>(hits) / static_cast<double>(r.count);
    return r;
}

std::string report_json(const DomainReport& r) {
    std::string s = "{\"tag\":\"" + json_escape(r.tag) + "\"";
    s += ",\"count\":" + std::to_string(r.count);
    s += ",\"accuracy\":" + fmt_num(r.accuracy);
    s += ",\"confusion\":[";
    for (std::size_t i = 0; i < r.confusion.size(); ++i) {
        s += i ? ",[" : "[";
        for (std::size_t j = 0; j < r.confusion[i].size(); ++j)
            s += (j ? "," : "") + std::to_string(r.confusion[i][j]);
        s += "]";
    }
    s += "]}";
    return s;
}

void print_report(const DomainReport& r) {
    std::printf("%s: %zu samples, accuracy %.4f\n", r.tag.c_str(), r.count, r.accuracy);
    for (std::size_t i = 0; i < r.confusion.size(); ++i) {
        std::printf("  class %zu:", i);
        for (int v : r.confusion[i]) std::printf(" %5d", v);
        std::printf("\n");
    }
}

int cmd_eval(const std::string& ckpt_path, const FlagBag& bag, const std::string& out_dir) {
    TrainState st = load_checkpoint(ckpt_path);
    RunConfig cfg = st.cfg;
    overlay_flags(cfg, bag);
    auto p = prepare(cfg, false);

    std::vector<DomainReport> reports;
    reports.push_back(report_domain(st, p.doms.source, p.x_src));
    if (p.doms.has_unseen) reports.push_back(report_domain(st, p.doms.unseen, p.x_unseen));
    for (const auto& r : reports) print_report(r);

    std::string json = "{\"config\":" + st.cfg.to_json() + ",\"domains\":[";
    for (std::size_t i = 0; i < reports.size(); ++i) json += (i ? "," : "") + report_json(reports[i]);
    json += "]}\n";
    std::filesystem::create_directories(out_dir);
    write_text(std::filesystem::path(out_dir) / "eval.json", json);
    return 0;
}

// ---------------------------------------------------------------------------
// export-latents
// ---------------------------------------------------------------------------

int cmd_export_latents(const std::string& ckpt_path, const FlagBag& bag, const std::string& out_dir) {
    TrainState st = load_checkpoint(ckpt_path);
    if (!st.uses_flow()) throw ConfigError("checkpoint was trained in pure mode and has no flow");
    RunConfig cfg = st.cfg;
    overlay_flags(cfg, bag);
    auto p = prepare(cfg, false);
    std::filesystem::create_directories(out_dir);

    // beyond two dimensions, project through a fixed seeded random matrix
    const std::size_t d = st.data_dim;
    std::vector<double> proj;
    if (d > 2) {
        auto rng = make_rng(st.cfg.seed, kStreamEval);
        proj.resize(d * 2);
        for (auto& v : proj) v = normal(rng) / std::sqrt(static_cast<double>(d));
        std::string ptext = "# config: " + st.cfg.to_json() + "\n";
        for (std::size_t i = 0; i < d; ++i)
            ptext += fmt_num(proj[i * 2]) + "\t" + fmt_num(proj[i * 2 + 1]) + "\n";
        write_text(std::filesystem::path(out_dir) / "projection.tsv", ptext);
    }

    std::string text = "# config: " + st.cfg.to_json() + "\n";
    Tape t;
    t.recording = false;
    auto emit = [&](const Dataset& ds, const ArrayPtr& x) {
        if (ds.dim() != d) throw ShapeError("dataset '" + ds.domain_tag + "' does not match the checkpointed model shape");
        auto z = st.flow.forward(t, x).y;
        for (std::size_t i = 0; i < ds.count(); ++i) {
            double a, b;
            if (d > 2) {
                a = b = 0.0;
                for (std::size_t k = 0; k < d; ++k) {
                    a += z->data[i * d + k] * proj[k * 2];
                    b += z->data[i * d + k] * proj[k * 2 + 1];
                }
            } else {
                a = z->data[i * d];
                b = z->data[i * d + 1];
            }
            text += fmt_num(a) + "\t" + fmt_num(b) + "\t" + std::to_string(ds.labels[i]) + "\t" + ds.domain_tag + "\n";
        }
    };
    emit(p.doms.source, p.x_src);
    if (p.doms.has_unseen) emit(p.doms.unseen, p.x_unseen);
    write_text(std::filesystem::path(out_dir) / "latents.tsv", text);
    std::printf("wrote %s\n", (std::filesystem::path(out_dir) / "latents.tsv").string().c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// perturb
// ---------------------------------------------------------------------------

int cmd_perturb(const std::string& ckpt_path, const FlagBag& bag, const std::string& out_dir) {
    TrainState st = load_checkpoint(ckpt_path);
    if (!st.uses_flow()) throw ConfigError("checkpoint was trained in pure mode and cannot synthesize");
    overlay_flags(st.cfg, bag); // overrides apply to the synthesis itself
    auto p = prepare(st.cfg, true);
    if (p.doms.source.dim() != st.data_dim)
        throw ShapeError("dataset does not match the checkpointed model shape");

    const std::size_t before = st.pool.size();
    auto report = maximization_phase(st, p.x_src, p.doms.source.labels);
    std::filesystem::create_directories(out_dir);

    std::string rows = "# config: " + st.cfg.to_json() + "\n";
    const std::size_t d = st.pool.dim;
    for (std::size_t i = before; i < st.pool.size(); ++i) {
        for (std::size_t k = 0; k < d; ++k) rows += fmt_num(st.pool.xs[i * d + k]) + "\t";
        rows += std::to_string(st.pool.labels[i]) + "\t" + std::to_string(st.pool.rounds[i]) + "\n";
    }
    write_text(std::filesystem::path(out_dir) / "perturbed.tsv", rows);

    std::string traces = "# config: " + st.cfg.to_json() + "\n";
    for (std::size_t g = 0; g < report.traces.size(); ++g)
        for (std::size_t s = 0; s < report.traces[g].size(); ++s)
            traces += std::to_string(g) + "\t" + std::to_string(s) + "\t" + fmt_num(report.traces[g][s]) + "\n";
    write_text(std::filesystem::path(out_dir) / "traces.tsv", traces);

    std::printf("synthesized %zu hard samples (%zu discarded)\n", report.added, report.discarded);
    return 0;
}

// ---------------------------------------------------------------------------
// grid
// ---------------------------------------------------------------------------

struct GridAxis {
    std::string key;
    std::vector<std::string> values;
};

GridAxis parse_axis(const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos || eq + 1 >= spec.size())
        throw ConfigError("bad grid axis '" + spec + "' (expected key=v1,v2,...)");
    GridAxis axis;
    axis.key = spec.substr(0, eq);
    std::string rest = spec.substr(eq + 1);
    std::size_t at = 0;
    while (at <= rest.size()) {
        const auto comma = rest.find(',', at);
        const std::string v = rest.substr(at, comma == std::string::npos ? std::string::npos : comma - at);
        if (v.empty()) throw ConfigError("bad grid axis '" + spec + "' (empty value)");
        axis.values.push_back(v);
        if (comma == std::string::npos) break;
        at = comma + 1;
    }
    return axis;
}

int cmd_grid(const FlagBag& bag, const std::vector<std::string>& axis_specs) {
    const RunConfig base = build_config(bag);
    std::vector<GridAxis> axes;
    for (const auto& spec : axis_specs) axes.push_back(parse_axis(spec));
    if (axes.empty()) throw ConfigError("grid needs at least one --grid axis");

    std::size_t cells = 1;
    for (const auto& a : axes) cells *= a.values.size();

    std::string header = "# config: " + base.to_json() + "\n";
    for (const auto& a : axes) header += a.key + "\t";
    header += "acc_src\tacc_unseen\tstatus\n";
    std::string table;
    bool any_failed = false;

    for (std::size_t cell = 0; cell < cells; ++cell) {
        // mixed-radix unrolling of the cross product, first axis slowest
        std::vector<std::string> chosen(axes.size());
        std::size_t rem = cell;
        for (std::size_t a = axes.size(); a-- > 0;) {
            chosen[a] = axes[a].values[rem % axes[a].values.size()];
            rem /= axes[a].values.size();
        }
        std::string row;
        for (const auto& v : chosen) row += v + "\t";
        try {
            RunConfig cfg = base;
            for (std::size_t a = 0; a < axes.size(); ++a) cfg.apply_kv(axes[a].key, chosen[a]);
            cfg.validate();
            auto outcome = run_training(cfg, nullptr, nullptr);
            const auto& last = outcome.rows.back();
            row += fmt_num(last.acc_src) + "\t" + (last.acc_unseen ? fmt_num(*last.acc_unseen) : "-") + "\tok";
        } catch (const std::exception& e) {
            any_failed = true;
            row += "-\t-\tfailed: " + std::string(e.what());
        }
        table += row + "\n";
        std::fputs((row + "\n").c_str(), stdout);
        std::fflush(stdout);
    }

    const std::filesystem::path out_dir = base.out_dir;
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "grid.tsv", header + table);
    return any_failed ? 1 : 0;
}

// ---------------------------------------------------------------------------
// make-corpus
// ---------------------------------------------------------------------------

int cmd_make_corpus(const std::string& out_path, int n_per_class, std::uint64_t seed) {
    if (n_per_class < 1) throw ConfigError("make-corpus: n-per-class must be positive");
    auto corpus = make_glyph_corpus(static_cast<std::size_t>(n_per_class), seed);
    const auto parent = std::filesystem::path(out_path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    save_dataset(corpus, out_path);
    std::printf("wrote %zu glyph digits to %s\n", corpus.count(), out_path.c_str());
    return 0;
}

int run_guarded(const std::function<int()>& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"UNVP/E-UNVP domain generalization trainer"};
    app.require_subcommand(1);

    FlagBag train_bag;
    auto* train_cmd = app.add_subcommand("train", "train a model and write metrics, summary and checkpoint");
    add_config_flags(train_cmd, train_bag);

    FlagBag eval_bag;
    std::string eval_ckpt, eval_out = "out";
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint: per-domain accuracy and confusion counts");
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--out-dir", eval_out, "directory for eval.json");
    add_config_flags(eval_cmd, eval_bag);

    FlagBag latent_bag;
    std::string latent_ckpt, latent_out = "out";
    auto* latent_cmd = app.add_subcommand("export-latents", "write 2-d latent scatter data for a checkpoint");
    latent_cmd->add_option("--checkpoint", latent_ckpt, "checkpoint file")->required();
    latent_cmd->add_option("--out-dir", latent_out, "directory for latents.tsv");
    add_config_flags(latent_cmd, latent_bag);

    FlagBag perturb_bag;
    std::string perturb_ckpt, perturb_out = "out";
    auto* perturb_cmd = app.add_subcommand("perturb", "run one hard-sample synthesis round from a checkpoint");
    perturb_cmd->add_option("--checkpoint", perturb_ckpt, "checkpoint file")->required();
    perturb_cmd->add_option("--out-dir", perturb_out, "directory for perturbed.tsv and traces.tsv");
    add_config_flags(perturb_cmd, perturb_bag);

    FlagBag grid_bag;
    std::vector<std::string> grid_axes;
    auto* grid_cmd = app.add_subcommand("grid", "train once per cell of a parameter grid");
    grid_cmd->add_option("--grid", grid_axes, "axis as key=v1,v2,... (repeatable; cells are the cross product)")
        ->required();
    add_config_flags(grid_cmd, grid_bag);

    std::string corpus_out = "digits.unvpd";
    int corpus_n = 600;
    std::uint64_t corpus_seed = 1;
    auto* corpus_cmd = app.add_subcommand("make-corpus", "render the glyph-digit corpus container");
    corpus_cmd->add_option("--out", corpus_out, "output container path");
    corpus_cmd->add_option("--n-per-class", corpus_n, "images per digit");
    corpus_cmd->add_option("--seed", corpus_seed, "render seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    if (*train_cmd) return run_guarded([&] { return cmd_train(train_bag); });
    if (*eval_cmd) return run_guarded([&] { return cmd_eval(eval_ckpt, eval_bag, eval_out); });
    if (*latent_cmd) return run_guarded([&] { return cmd_export_latents(latent_ckpt, latent_bag, latent_out); });
    if (*perturb_cmd) return run_guarded([&] { return cmd_perturb(perturb_ckpt, perturb_bag, perturb_out); });
    if (*grid_cmd) return run_guarded([&] { return cmd_grid(grid_bag, grid_axes); });
    if (*corpus_cmd) return run_guarded([&] { return cmd_make_corpus(corpus_out, corpus_n, corpus_seed); });
    return 2;
}
