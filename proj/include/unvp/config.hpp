#pragma once

// Run configuration shared by the CLI, the training loop, and checkpoints.
// One flat struct, serializable two ways: key=value text (parsed back when a
// checkpoint is reloaded) and a single-line JSON echo embedded in artifacts.

#include <charconv>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>

#include "unvp/error.hpp"
#include "unvp/optimizer.hpp"

namespace unvp {

enum class RunMode { pure, unvp, eunvp };

inline const char* to_string(RunMode m) {
    switch (m) {
        case RunMode::pure: return "pure";
        case RunMode::unvp: return "unvp";
        default: return "eunvp";
    }
}

inline RunMode run_mode_from(const std::string& s) {
    if (s == "pure") return RunMode::pure;
    if (s == "unvp") return RunMode::unvp;
    if (s == "eunvp") return RunMode::eunvp;
    throw ConfigError("unknown mode '" + s + "' (expected pure, unvp or eunvp)");
}

// Shortest decimal form that round-trips the exact double.
inline std::string fmt_num(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            default: out += c;
        }
    }
    return out;
}

struct RunConfig {
    std::string mode_name = "eunvp";
    std::string dataset = "blobs"; // blobs | digits | file:PATH
    std::string corpus = "data/digits.unvpd";
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    double lr = 1e-4;
    int batch = 128;
    int epochs = 10;     // minimization epochs per segment
    int pre_epochs = 10; // flow pre-training epochs
    double alpha = 0.1;
    double beta = 0.2;
    int k_rounds = 2;
    double gamma = 1.0;
    double lambda = 0.1;
    int t_max = 15;
    double eta_adv = 0.1;
    double feature_reg_weight = 1.0;
    int flow_steps = 8;
    int flow_hidden = 64;
    int train_n = 600;   // source training samples (blobs: split across classes)
    int unseen_n = 600;  // unseen-domain samples
    std::string optimizer_name = "adam";

    RunMode mode() const { return run_mode_from(mode_name); }
    OptKind opt_kind() const { return opt_kind_from(optimizer_name); }

    void validate() const {
        run_mode_from(mode_name);
        opt_kind_from(optimizer_name);
        if (dataset != "blobs" && dataset != "digits" && dataset.rfind("file:", 0) != 0)
            throw ConfigError("unknown dataset '" + dataset + "' (expected blobs, digits or file:PATH)");
        if (!(lr > 0.0)) throw ConfigError("lr must be positive");
        if (batch < 1) throw ConfigError("batch must be at least 1");
        if (epochs < 1) throw ConfigError("epochs must be at least 1");
        if (pre_epochs < 0) throw ConfigError("pre-epochs must be non-negative");
        if (alpha < 0.0) throw ConfigError("alpha must be non-negative");
        if (beta < 0.0 || beta > 1.0) throw ConfigError("beta must lie in [0, 1]");
        if (k_rounds < 0) throw ConfigError("K must be non-negative");
        if (gamma < 0.0) throw ConfigError("gamma must be non-negative");
        if (lambda < 0.0) throw ConfigError("lambda must be non-negative");
        if (t_max < 0) throw ConfigError("t-max must be non-negative");
        if (eta_adv < 0.0) throw ConfigError("eta-adv must be non-negative");
        if (feature_reg_weight < 0.0) throw ConfigError("feature-reg-weight must be non-negative");
        if (flow_steps < 1) throw ConfigError("flow-steps must be at least 1");
        if (flow_hidden < 1) throw ConfigError("flow-hidden must be at least 1");
        if (train_n < 1) throw ConfigError("train-n must be at least 1");
        if (unseen_n < 0) throw ConfigError("unseen-n must be non-negative");
    }

    // key=value lines, sorted keys; the same keys the config file accepts
    std::string to_kv() const {
        std::map<std::string, std::string> kv = {
            {"mode", mode_name},
            {"dataset", dataset},
            {"corpus", corpus},
            {"out", out_dir},
            {"seed", std::to_string(seed)},
            {"lr", fmt_num(lr)},
            {"batch", std::to_string(batch)},
            {"epochs", std::to_string(epochs)},
            {"pre-epochs", std::to_string(pre_epochs)},
            {"alpha", fmt_num(alpha)},
            {"beta", fmt_num(beta)},
            {"K", std::to_string(k_rounds)},
            {"gamma", fmt_num(gamma)},
            {"lambda", fmt_num(lambda)},
            {"t-max", std::to_string(t_max)},
            {"eta-adv", fmt_num(eta_adv)},
            {"feature-reg-weight", fmt_num(feature_reg_weight)},
            {"flow-steps", std::to_string(flow_steps)},
            {"flow-hidden", std::to_string(flow_hidden)},
            {"train-n", std::to_string(train_n)},
            {"unseen-n", std::to_string(unseen_n)},
            {"optimizer", optimizer_name},
        };
        std::string out;
        for (const auto& [k, v] : kv) {
            out += k;
            out += '=';
            out += v;
            out += '\n';
        }
        return out;
    }

    void apply_kv(const std::string& key, const std::string& value) {
        auto as_double = [&] {
            try {
                return std::stod(value);
            } catch (const std::exception&) {
                throw ConfigError("bad numeric value '" + value + "' for key '" + key + "'");
            }
        };
        auto as_int = [&] {
            try {
                return std::stoi(value);
            } catch (const std::exception&) {
                throw ConfigError("bad integer value '" + value + "' for key '" + key + "'");
            }
        };
        if (key == "mode") mode_name = value;
        else if (key == "dataset") dataset = value;
        else if (key == "corpus") corpus = value;
        else if (key == "out") out_dir = value;
        else if (key == "seed") {
            try {
                seed = std::stoull(value);
            } catch (const std::exception&) {
                throw ConfigError("bad seed value '" + value + "'");
            }
        } else if (key == "lr") lr = as_double();
        else if (key == "batch") batch = as_int();
        else if (key == "epochs") epochs = as_int();
        else if (key == "pre-epochs") pre_epochs = as_int();
        else if (key == "alpha") alpha = as_double();
        else if (key == "beta") beta = as_double();
        else if (key == "K") k_rounds = as_int();
        else if (key == "gamma") gamma = as_double();
        else if (key == "lambda") lambda = as_double();
        else if (key == "t-max") t_max = as_int();
        else if (key == "eta-adv") eta_adv = as_double();
        else if (key == "feature-reg-weight") feature_reg_weight = as_double();
        else if (key == "flow-steps") flow_steps = as_int();
        else if (key == "flow-hidden") flow_hidden = as_int();
        else if (key == "train-n") train_n = as_int();
        else if (key == "unseen-n") unseen_n = as_int();
        else if (key == "optimizer") optimizer_name = value;
        else throw ConfigError("unknown config key '" + key + "'");
    }

    // Applies key=value lines on top of the current values. Blank lines and
    // '#' comments are skipped.
    void apply_kv_lines(const std::string& text) {
        std::istringstream in(text);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError("bad config line '" + line + "'");
            apply_kv(line.substr(0, eq), line.substr(eq + 1));
        }
    }

    static RunConfig from_kv(const std::string& text) {
        RunConfig cfg;
        cfg.apply_kv_lines(text);
        return cfg;
    }

    // single-line JSON object with a fixed key order, embedded in artifacts
    std::string to_json() const {
        std::string s = "{";
        s += "\"mode\":\"" + json_escape(mode_name) + "\"";
        s += ",\"dataset\":\"" + json_escape(dataset) + "\"";
        s += ",\"corpus\":\"" + json_escape(corpus) + "\"";
        s += ",\"out\":\"" + json_escape(out_dir) + "\"";
        s += ",\"seed\":" + std::to_string(seed);
        s += ",\"lr\":" + fmt_num(lr);
        s += ",\"batch\":" + std::to_string(batch);
        s += ",\"epochs\":" + std::to_string(epochs);
        s += ",\"pre_epochs\":" + std::to_string(pre_epochs);
        s += ",\"alpha\":" + fmt_num(alpha);
        s += ",\"beta\":" + fmt_num(beta);
        s += ",\"K\":" + std::to_string(k_rounds);
        s += ",\"gamma\":" + fmt_num(gamma);
        s += ",\"lambda\":" + fmt_num(lambda);
        s += ",\"t_max\":" + std::to_string(t_max);
        s += ",\"eta_adv\":" + fmt_num(eta_adv);
        s += ",\"feature_reg_weight\":" + fmt_num(feature_reg_weight);
        s += ",\"flow_steps\":" + std::to_string(flow_steps);
        s += ",\"flow_hidden\":" + std::to_string(flow_hidden);
        s += ",\"train_n\":" + std::to_string(train_n);
        s += ",\"unseen_n\":" + std::to_string(unseen_n);
        s += ",\"optimizer\":\"" + json_escape(optimizer_name) + "\"";
        s += "}";
        return s;
    }
};

} // namespace unvp
