#pragma once

// Versioned training checkpoints. A checkpoint is self-describing: it embeds
// the run configuration, model dimensions, every parameter array, optimizer
// moments, schedule counters, the hard-sample pool, and the exact training
// RNG state, so a resumed run continues bit-for-bit where it left off.

#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "unvp/data.hpp"
#include "unvp/error.hpp"
#include "unvp/generalizer.hpp"

namespace unvp {

namespace detail {

constexpr char kCheckpointMagic[8] = {'U', 'N', 'V', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void put_string(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    put_bytes(out, s.data(), s.size());
}

inline void put_f64_vec(std::string& out, const std::vector<double>& v) {
    put_u64(out, v.size());
    put_bytes(out, v.data(), v.size() * sizeof(double));
}

inline std::vector<double> get_f64_vec(ByteReader& r) {
    std::vector<double> v(r.get_u64());
    r.get_bytes(v.data(), v.size() * sizeof(double));
    return v;
}

} // namespace detail

// Layout (all integers little-endian):
//   bytes 0..7   magic "UNVPCKPT"
//   u32          version (currently 1)
//   string       config echo, key=value lines      (strings are u32 length + bytes)
//   u64 u32 u64 u64 f64   data_dim, num_classes, img_h, img_w, preprocessing log-det
//   i32 i32 i32 u8        pre/min epochs done, rounds done, flow-initialized flag
//   string       training RNG state (mt19937_64 text form)
//   u32          parameter count, then per parameter a u64-length f64 vector
//   u64          optimizer step count, then first and second moments
//                (u32 count + f64 vectors each, matching the parameters)
//   u64 u64      pool dim and size, then pool inputs (f64), labels (i32), rounds (i32)
//   u32          crc32 of everything above

inline void save_checkpoint(const TrainState& st, const std::string& path) {
    std::string out;
    detail::put_bytes(out, detail::kCheckpointMagic, 8);
    detail::put_u32(out, detail::kCheckpointVersion);
    detail::put_string(out, st.cfg.to_kv());
    detail::put_u64(out, st.data_dim);
    detail::put_u32(out, static_cast<std::uint32_t>(st.num_classes));
    detail::put_u64(out, st.img_h);
    detail::put_u64(out, st.img_w);
    detail::put_f64(out, st.uses_flow() ? st.flow.preproc_logdet : 0.0);
    detail::put_i32(out, st.pre_epochs_done);
    detail::put_i32(out, st.min_epochs_done);
    detail::put_i32(out, st.rounds_done);
    out.push_back(st.flow_initialized ? '\1' : '\0');
    std::ostringstream rng_text;
    rng_text << st.rng;
    detail::put_string(out, rng_text.str());
    detail::put_u32(out, static_cast<std::uint32_t>(st.params.size()));
    for (const auto& p : st.params) detail::put_f64_vec(out, p->data);
    detail::put_u64(out, st.opt.step_count);
    const auto& m1 = st.opt.moments1();
    const auto& m2 = st.opt.moments2();
    detail::put_u32(out, static_cast<std::uint32_t>(m1.size()));
    for (const auto& m : m1) detail::put_f64_vec(out, m);
    detail::put_u32(out, static_cast<std::uint32_t>(m2.size()));
    for (const auto& m : m2) detail::put_f64_vec(out, m);
    detail::put_u64(out, st.pool.dim);
    detail::put_u64(out, st.pool.size());
    detail::put_bytes(out, st.pool.xs.data(), st.pool.xs.size() * sizeof(double));
    for (int v : st.pool.labels) detail::put_i32(out, v);
    for (int v : st.pool.rounds) detail::put_i32(out, v);
    detail::put_u32(out, detail::crc_of(out));
    detail::write_file_atomic(path, out);
}

inline TrainState load_checkpoint(const std::string& path) {
    const std::string payload = detail::checked_payload(detail::read_file(path), "checkpoint");
    detail::ByteReader r{payload};
    char magic[8];
    r.get_bytes(magic, 8);
    if (std::memcmp(magic, detail::kCheckpointMagic, 8) != 0) throw IoError("not a checkpoint file: " + path);
    const std::uint32_t version = r.get_u32();
    if (version != detail::kCheckpointVersion)
        throw IoError("checkpoint version " + std::to_string(version) + " but this build reads version " +
                      std::to_string(detail::kCheckpointVersion));

    const RunConfig cfg = RunConfig::from_kv(r.get_string(r.get_u32()));
    const std::size_t data_dim = r.get_u64();
    const std::size_t num_classes = r.get_u32();
    const std::size_t img_h = r.get_u64();
    const std::size_t img_w = r.get_u64();
    const double logdet = r.get_f64();
    const int pre_done = r.get_i32();
    const int min_done = r.get_i32();
    const int rounds_done = r.get_i32();
    char flow_init;
    r.get_bytes(&flow_init, 1);

    TrainState st = make_train_state(cfg, data_dim, num_classes, img_h, img_w, logdet);
    st.pre_epochs_done = pre_done;
    st.min_epochs_done = min_done;
    st.rounds_done = rounds_done;
    st.flow_initialized = flow_init != '\0';
    // data-dependent actnorm init happened before the save; restore the
    // initialized flags first, then overwrite every parameter below
    if (st.flow_initialized && st.uses_flow()) st.flow.init_identity();

    std::istringstream rng_text(r.get_string(r.get_u32()));
    rng_text >> st.rng;
    if (!rng_text) throw IoError("checkpoint holds an unreadable RNG state");

    const std::uint32_t n_params = r.get_u32();
    if (n_params != st.params.size()) throw IoError("checkpoint parameters do not match the configured model");
    for (auto& p : st.params) {
        auto v = detail::get_f64_vec(r);
        if (v.size() != p->data.size()) throw IoError("checkpoint parameters do not match the configured model");
        p->data = std::move(v);
    }

    const std::uint64_t steps = r.get_u64();
    std::vector<std::vector<double>> m1(r.get_u32());
    for (auto& m : m1) m = detail::get_f64_vec(r);
    std::vector<std::vector<double>> m2(r.get_u32());
    for (auto& m : m2) m = detail::get_f64_vec(r);
    if (m1.size() != st.params.size() || m2.size() != st.params.size())
        throw IoError("checkpoint optimizer state does not match the configured model");
    st.opt.restore(steps, std::move(m1), std::move(m2));

    st.pool.dim = r.get_u64();
    const std::uint64_t pool_n = r.get_u64();
    st.pool.xs.resize(pool_n * st.pool.dim);
    r.get_bytes(st.pool.xs.data(), st.pool.xs.size() * sizeof(double));
    st.pool.labels.resize(pool_n);
    for (auto& v : st.pool.labels) v = r.get_i32();
    st.pool.rounds.resize(pool_n);
    for (auto& v : st.pool.rounds) v = r.get_i32();
    if (r.pos != payload.size()) throw IoError("checkpoint has trailing bytes");
    return st;
}

} // namespace unvp
