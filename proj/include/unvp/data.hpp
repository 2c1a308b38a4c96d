#pragma once

// Dataset generation and persistence: synthetic blob and glyph-digit domain
// pairs, the dequantize-and-rescale preprocessing map, and a small versioned
// binary container for datasets. All generators are deterministic functions
// of (parameters, seed) on the data stream.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <zlib.h>

#include "unvp/array.hpp"
#include "unvp/error.hpp"
#include "unvp/rng.hpp"

namespace unvp {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

// Declared input range and quantization step. qstep == 0 marks continuous
// data; qstep > 0 means raw values sit on the grid lo, lo+qstep, ..., hi.
struct DataMeta {
    double lo = 0.0;
    double hi = 1.0;
    double qstep = 0.0;
};

struct Dataset {
    std::vector<std::size_t> sample_shape; // {d} for vectors, {h, w} for images
    std::vector<double> xs;                // row-major, count * dim values
    std::vector<int> labels;
    int num_classes = 0;
    std::string domain_tag;
    DataMeta meta;

    std::size_t dim() const {
        std::size_t d = 1;
        for (std::size_t s : sample_shape) d *= s;
        return sample_shape.empty() ? 0 : d;
    }
    std::size_t count() const { return labels.size(); }
    std::size_t img_h() const { return sample_shape.size() == 2 ? sample_shape[0] : 0; }
    std::size_t img_w() const { return sample_shape.size() == 2 ? sample_shape[1] : 0; }
};

struct DomainPair {
    Dataset source;
    Dataset unseen;
};

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

// The preprocessing map is x' = (x - lo + u*qstep) / (hi - lo + qstep) - 0.5
// with u ~ U[0, 1) per coordinate (u = 0.5 when no rng is given, and the
// whole dequantization term absent for continuous data). Its log-Jacobian is
// constant and additive to the flow's.
inline double preproc_logdet(const DataMeta& meta, std::size_t dim) {
    return -static_cast<double>(dim) * std::log(meta.hi - meta.lo + meta.qstep);
}

// Dequantize and rescale a whole dataset into [-0.5, 0.5). Training passes an
// rng (one uniform per coordinate, row-major order); evaluation passes
// nullptr to place each value at its quantization cell's midpoint.
inline ArrayPtr preprocess(const Dataset& ds, Rng* rng) {
    const double width = ds.meta.hi - ds.meta.lo + ds.meta.qstep;
    auto out = make_array({ds.count(), ds.dim()});
    for (std::size_t k = 0; k < ds.xs.size(); ++k) {
        const double raw = ds.xs[k];
        if (raw < ds.meta.lo || raw > ds.meta.hi)
            throw ShapeError("preprocess: input outside the declared range");
        double v = raw - ds.meta.lo;
        if (ds.meta.qstep > 0.0) v += (rng ? uniform01(*rng) : 0.5) * ds.meta.qstep;
        out->data[k] = v / width - 0.5;
    }
    return out;
}

// Inverse of the affine part of preprocess. The dequantization draw is not
// recoverable, so the roundtrip lands within one quantization step of the
// original raw value.
inline std::vector<double> preprocess_invert(const std::vector<double>& x, const DataMeta& meta) {
    const double width = meta.hi - meta.lo + meta.qstep;
    std::vector<double> raw(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) raw[k] = (x[k] + 0.5) * width + meta.lo;
    return raw;
}

// ---------------------------------------------------------------------------
// Blob domains
// ---------------------------------------------------------------------------

// Affine shift applied to the unseen domain: rotate about the origin, scale,
// then translate.
struct ShiftSpec {
    double rotation = 0.0; // radians
    double scale = 1.0;
    double tx = 0.0;
    double ty = 0.0;
};

namespace detail {

// The class centres sit on a small circle around a constellation centre that
// is displaced from the origin. Shifts rotate and scale about the origin, so
// with this layout they move the whole constellation coherently instead of
// mapping a symmetric arrangement back onto itself, which keeps rotation
// shifts from degenerating into label permutations.
constexpr double kBlobLocalRadius = 1.0;
constexpr double kBlobOffsetY = 3.0;
constexpr double kBlobStddev = 0.35;
constexpr double kBlobRange = 6.0; // declared range is [-kBlobRange, kBlobRange]

inline void blob_center(int c, int num_classes, double& cx, double& cy) {
    const double angle = 2.0 * 3.14159265358979323846 * c / num_classes + 1.5707963267948966;
    cx = kBlobLocalRadius * std::cos(angle);
    cy = kBlobOffsetY + kBlobLocalRadius * std::sin(angle);
}

} // namespace detail

// C Gaussian blobs on a small circle around an off-origin constellation
// centre; the unseen domain is a fresh draw from the same blobs pushed
// through the shift. Rows interleave classes (row i has label i % C) and both
// domains are exactly balanced.
inline DomainPair make_blob_domains(int num_classes, std::size_t n_per_class, const ShiftSpec& shift,
                                    std::uint64_t seed) {
    if (num_classes < 2) throw ConfigError("make_blob_domains: need at least 2 classes");
    if (n_per_class == 0) throw ConfigError("make_blob_domains: need at least 1 sample per class");
    if (shift.scale == 0.0) throw ConfigError("make_blob_domains: zero scale collapses the unseen domain");

    auto rng = make_rng(seed, kStreamData);
    const std::size_t n = n_per_class * static_cast<std::size_t>(num_classes);
    const double r = detail::kBlobRange;

    auto draw = [&](Dataset& ds, bool shifted) {
        ds.sample_shape = {2};
        ds.num_classes = num_classes;
        ds.meta = {-r, r, 0.0};
        ds.xs.resize(n * 2);
        ds.labels.resize(n);
        const double ct = std::cos(shift.rotation), st = std::sin(shift.rotation);
        for (std::size_t i = 0; i < n; ++i) {
            const int c = static_cast<int>(i % static_cast<std::size_t>(num_classes));
            double cx, cy;
            detail::blob_center(c, num_classes, cx, cy);
            double x = normal(rng, cx, detail::kBlobStddev);
            double y = normal(rng, cy, detail::kBlobStddev);
            if (shifted) {
                const double xr = shift.scale * (ct * x - st * y) + shift.tx;
                const double yr = shift.scale * (st * x + ct * y) + shift.ty;
                x = xr;
                y = yr;
            }
            ds.xs[i * 2] = std::clamp(x, -r, r);
            ds.xs[i * 2 + 1] = std::clamp(y, -r, r);
            ds.labels[i] = c;
        }
    };

    DomainPair out;
    draw(out.source, false);
    out.source.domain_tag = "blobs-source";
    draw(out.unseen, true);
    out.unseen.domain_tag = "blobs-unseen";
    return out;
}

// ---------------------------------------------------------------------------
// Glyph-digit corpus and domains
// ---------------------------------------------------------------------------

namespace detail {

// 5x7 bitmap glyphs for the ten digits.
inline const char* const kGlyphs[10][7] = {
    {"01110", "10001", "10011", "10101", "11001", "10001", "01110"},
    {"00100", "01100", "00100", "00100", "00100", "00100", "01110"},
    {"01110", "10001", "00001", "00010", "00100", "01000", "11111"},
    {"11111", "00010", "00100", "00010", "00001", "10001", "01110"},
    {"00010", "00110", "01010", "10010", "11111", "00010", "00010"},
    {"11111", "10000", "11110", "00001", "00001", "10001", "01110"},
    {"00110", "01000", "10000", "11110", "10001", "10001", "01110"},
    {"11111", "00001", "00010", "00100", "01000", "01000", "01000"},
    {"01110", "10001", "10001", "01110", "10001", "10001", "01110"},
    {"01110", "10001", "10001", "01111", "00001", "00010", "01100"},
};

constexpr std::size_t kGlyphCanvas = 28;

// Bilinear sample with zero padding outside the canvas.
inline double sample_bilinear(const std::array<double, kGlyphCanvas * kGlyphCanvas>& img, double row, double col) {
    const int r0 = static_cast<int>(std::floor(row)), c0 = static_cast<int>(std::floor(col));
    const double fr = row - r0, fc = col - c0;
    auto at = [&](int r, int c) -> double {
        if (r < 0 || c < 0 || r >= static_cast<int>(kGlyphCanvas) || c >= static_cast<int>(kGlyphCanvas)) return 0.0;
        return img[static_cast<std::size_t>(r) * kGlyphCanvas + static_cast<std::size_t>(c)];
    };
    return (1 - fr) * ((1 - fc) * at(r0, c0) + fc * at(r0, c0 + 1)) +
           fr * ((1 - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1));
}

} // namespace detail

// One 28x28 glyph image: the 5x7 bitmap is blown up to fill the canvas, then
// warped by a small affine jitter (rotation, per-axis scale, translation),
// blurred with a 3x3 binomial kernel, intensity-scaled, and quantized to
// 8-bit levels. Six uniforms are consumed per image in a fixed order.
inline void render_glyph(int digit, Rng& rng, double* out) {
    using detail::kGlyphCanvas;
    const double theta = uniform(rng, -0.26, 0.26);
    const double sx = uniform(rng, 0.9, 1.1);
    const double sy = uniform(rng, 0.9, 1.1);
    const double dx = uniform(rng, -2.0, 2.0);
    const double dy = uniform(rng, -2.0, 2.0);
    const double gain = uniform(rng, 0.75, 1.0);

    // base image: each glyph cell becomes a 4x4 block, centered horizontally
    std::array<double, kGlyphCanvas * kGlyphCanvas> base{};
    for (int gr = 0; gr < 7; ++gr)
        for (int gc = 0; gc < 5; ++gc) {
            if (detail::kGlyphs[digit][gr][gc] != '1') continue;
            for (int r = gr * 4; r < gr * 4 + 4; ++r)
                for (int c = 4 + gc * 4; c < 8 + gc * 4; ++c) base[r * kGlyphCanvas + c] = 1.0;
        }

    // inverse-map each output pixel through the jitter and sample the base
    std::array<double, kGlyphCanvas * kGlyphCanvas> warped{};
    const double mid = (kGlyphCanvas - 1) / 2.0;
    const double ct = std::cos(theta), st = std::sin(theta);
    for (std::size_t r = 0; r < kGlyphCanvas; ++r)
        for (std::size_t c = 0; c < kGlyphCanvas; ++c) {
            const double u = (c - mid - dx) / sx;
            const double v = (r - mid - dy) / sy;
            const double us = ct * u + st * v;
            const double vs = -st * u + ct * v;
            warped[r * kGlyphCanvas + c] = detail::sample_bilinear(base, vs + mid, us + mid);
        }

    // separable [1 2 1]/4 blur, zero padding, then gain and quantization
    std::array<double, kGlyphCanvas * kGlyphCanvas> blurred{};
    auto wat = [&](int r, int c) -> double {
        if (r < 0 || c < 0 || r >= static_cast<int>(kGlyphCanvas) || c >= static_cast<int>(kGlyphCanvas)) return 0.0;
        return warped[static_cast<std::size_t>(r) * kGlyphCanvas + static_cast<std::size_t>(c)];
    };
    for (int r = 0; r < static_cast<int>(kGlyphCanvas); ++r)
        for (int c = 0; c < static_cast<int>(kGlyphCanvas); ++c) {
            double acc = 0.0;
            static const double k[3] = {0.25, 0.5, 0.25};
            for (int i = -1; i <= 1; ++i)
                for (int j = -1; j <= 1; ++j) acc += k[i + 1] * k[j + 1] * wat(r + i, c + j);
            blurred[static_cast<std::size_t>(r) * kGlyphCanvas + static_cast<std::size_t>(c)] = acc;
        }
    for (std::size_t k = 0; k < kGlyphCanvas * kGlyphCanvas; ++k) {
        const double v = std::clamp(gain * blurred[k], 0.0, 1.0);
        out[k] = std::round(v * 255.0) / 255.0;
    }
}

// A corpus of jittered glyph digits: n_per_class images per digit, rows
// interleaving classes (row i is digit i % 10), 8-bit quantized in [0, 1].
inline Dataset make_glyph_corpus(std::size_t n_per_class, std::uint64_t seed) {
    if (n_per_class == 0) throw ConfigError("make_glyph_corpus: need at least 1 image per class");
    auto rng = make_rng(seed, kStreamData);
    Dataset ds;
    ds.sample_shape = {detail::kGlyphCanvas, detail::kGlyphCanvas};
    ds.num_classes = 10;
    ds.domain_tag = "glyphs";
    ds.meta = {0.0, 1.0, 1.0 / 255.0};
    const std::size_t n = n_per_class * 10;
    ds.xs.resize(n * ds.dim());
    ds.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int digit = static_cast<int>(i % 10);
        render_glyph(digit, rng, ds.xs.data() + i * ds.dim());
        ds.labels[i] = digit;
    }
    return ds;
}

// Intensity inversion about mid-gray with contrast gain g, clipped to [0, 1].
// g = 1 is a pure inversion and therefore its own inverse.
inline double invert_intensity(double x, double g) {
    return std::clamp(0.5 + g * (0.5 - x), 0.0, 1.0);
}

// Forward declaration; the container reader lives below.
inline Dataset load_dataset(const std::string& path);

// Source and unseen digit domains from a glyph corpus on disk. Source images
// are 2x2-mean downsampled to 14x14 (quantization step 1/1020); unseen images
// are disjoint corpus rows given the same downsampling and then an
// intensity inversion with per-image contrast gain g ~ U[0.7, 1.3]. Rows of
// both domains cycle through the classes and stay balanced within one sample.
inline DomainPair make_digit_domains(const std::string& corpus_path, std::size_t n_source, std::size_t n_unseen,
                                     std::uint64_t seed) {
    if (n_source == 0 || n_unseen == 0) throw ConfigError("make_digit_domains: need nonempty source and unseen sizes");
    Dataset corpus = load_dataset(corpus_path);
    if (corpus.sample_shape.size() != 2 || corpus.img_h() % 2 != 0 || corpus.img_w() % 2 != 0)
        throw IoError("make_digit_domains: corpus must hold images with even dimensions");
    const int C = corpus.num_classes;

    // per-class row lists in corpus order; source takes the head of each
    // list, unseen the next chunk, so the two domains never share an image
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(C));
    for (std::size_t i = 0; i < corpus.count(); ++i) by_class[static_cast<std::size_t>(corpus.labels[i])].push_back(i);

    auto share = [&](std::size_t total, int c) { // total split over classes, remainder to the low ones
        return total / static_cast<std::size_t>(C) + (static_cast<std::size_t>(c) < total % static_cast<std::size_t>(C) ? 1 : 0);
    };
    for (int c = 0; c < C; ++c)
        if (by_class[static_cast<std::size_t>(c)].size() < share(n_source, c) + share(n_unseen, c))
            throw ConfigError("make_digit_domains: corpus too small for the requested split");

    const std::size_t oh = corpus.img_h() / 2, ow = corpus.img_w() / 2;
    const std::size_t odim = oh * ow;
    auto downsample = [&](std::size_t row, double* out) {
        const double* src = corpus.xs.data() + row * corpus.dim();
        for (std::size_t r = 0; r < oh; ++r)
            for (std::size_t c = 0; c < ow; ++c) {
                const std::size_t r2 = 2 * r, c2 = 2 * c;
                out[r * ow + c] = 0.25 * (src[r2 * corpus.img_w() + c2] + src[r2 * corpus.img_w() + c2 + 1] +
                                          src[(r2 + 1) * corpus.img_w() + c2] + src[(r2 + 1) * corpus.img_w() + c2 + 1]);
            }
    };

    // emit rows round-robin over classes until every class share is used up
    auto emit = [&](Dataset& ds, std::size_t total, std::size_t offset_weight) {
        ds.sample_shape = {oh, ow};
        ds.num_classes = C;
        ds.xs.resize(total * odim);
        ds.labels.resize(total);
        std::vector<std::size_t> taken(static_cast<std::size_t>(C), 0);
        std::size_t row = 0;
        for (int c = 0; row < total; c = (c + 1) % C) {
            const std::size_t offset = offset_weight ? share(offset_weight, c) : 0;
            if (taken[static_cast<std::size_t>(c)] >= share(total, c)) continue;
            const std::size_t pick = by_class[static_cast<std::size_t>(c)][offset + taken[static_cast<std::size_t>(c)]];
            downsample(pick, ds.xs.data() + row * odim);
            ds.labels[row] = c;
            ++taken[static_cast<std::size_t>(c)];
            ++row;
        }
    };

    DomainPair out;
    emit(out.source, n_source, 0);
    out.source.domain_tag = "digits-source";
    out.source.meta = {0.0, 1.0, 1.0 / 1020.0}; // 8-bit levels averaged over 2x2 blocks
    emit(out.unseen, n_unseen, n_source);
    out.unseen.domain_tag = "digits-unseen";
    out.unseen.meta = {0.0, 1.0, 0.0}; // contrast gain moves values off any fixed grid
    auto rng = make_rng(seed, kStreamData);
    for (std::size_t i = 0; i < out.unseen.count(); ++i) {
        const double g = uniform(rng, 0.7, 1.3);
        double* px = out.unseen.xs.data() + i * odim;
        for (std::size_t k = 0; k < odim; ++k) px[k] = invert_intensity(px[k], g);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset container
// ---------------------------------------------------------------------------
//
// Layout (all integers little-endian):
//   bytes 0..7   magic "UNVPDATA"
//   u32          version (currently 1)
//   u64          count
//   u32          ndim, then ndim u64 sample dimensions
//   u32          label width in bytes (4)
//   u32          num_classes
//   u32          tag length, then that many tag bytes
//   f64 x3       meta lo, hi, qstep
//   f64 x count*dim   row-major inputs
//   i32 x count  labels
//   u32          crc32 of everything above

namespace detail {

constexpr char kDatasetMagic[8] = {'U', 'N', 'V', 'P', 'D', 'A', 'T', 'A'};
constexpr std::uint32_t kDatasetVersion = 1;

inline void put_bytes(std::string& out, const void* p, std::size_t n) {
    out.append(static_cast<const char*>(p), n);
}
inline void put_u32(std::string& out, std::uint32_t v) { put_bytes(out, &v, 4); }
inline void put_u64(std::string& out, std::uint64_t v) { put_bytes(out, &v, 8); }
inline void put_i32(std::string& out, std::int32_t v) { put_bytes(out, &v, 4); }
inline void put_f64(std::string& out, double v) { put_bytes(out, &v, 8); }

// Cursor over a loaded file that refuses to read past the end.
struct ByteReader {
    const std::string& buf;
    std::size_t pos = 0;

    void get_bytes(void* p, std::size_t n) {
        if (pos + n > buf.size()) throw IoError("container ended mid-field");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    std::uint32_t get_u32() { std::uint32_t v; get_bytes(&v, 4); return v; }
    std::uint64_t get_u64() { std::uint64_t v; get_bytes(&v, 8); return v; }
    std::int32_t get_i32() { std::int32_t v; get_bytes(&v, 4); return v; }
    double get_f64() { double v; get_bytes(&v, 8); return v; }
    std::string get_string(std::size_t n) {
        if (pos + n > buf.size()) throw IoError("container ended mid-field");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline std::uint32_t crc_of(const std::string& payload) {
    return static_cast<std::uint32_t>(
        ::crc32(0, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
}

// Write-temp-then-rename so readers never observe a half-written file.
inline void write_file_atomic(const std::string& path, const std::string& payload) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for writing: " + tmp);
        f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
        if (!f) throw IoError("write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("rename failed: " + path + ": " + ec.message());
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("file not found: " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return buf;
}

// Strip and verify the trailing crc32; returns the payload bytes.
inline std::string checked_payload(const std::string& raw, const char* what) {
    if (raw.size() < 4) throw IoError(std::string(what) + ": file too short to carry a checksum");
    const std::string payload = raw.substr(0, raw.size() - 4);
    std::uint32_t stored;
    std::memcpy(&stored, raw.data() + raw.size() - 4, 4);
    if (stored != crc_of(payload)) throw IoError(std::string(what) + ": checksum mismatch, file truncated or corrupt");
    return payload;
}

} // namespace detail

inline void save_dataset(const Dataset& ds, const std::string& path) {
    if (ds.count() * ds.dim() != ds.xs.size()) throw ShapeError("save_dataset: inputs and labels disagree on count");
    std::string out;
    detail::put_bytes(out, detail::kDatasetMagic, 8);
    detail::put_u32(out, detail::kDatasetVersion);
    detail::put_u64(out, ds.count());
    detail::put_u32(out, static_cast<std::uint32_t>(ds.sample_shape.size()));
    for (std::size_t s : ds.sample_shape) detail::put_u64(out, s);
    detail::put_u32(out, 4); // label width
    detail::put_u32(out, static_cast<std::uint32_t>(ds.num_classes));
    detail::put_u32(out, static_cast<std::uint32_t>(ds.domain_tag.size()));
    detail::put_bytes(out, ds.domain_tag.data(), ds.domain_tag.size());
    detail::put_f64(out, ds.meta.lo);
    detail::put_f64(out, ds.meta.hi);
    detail::put_f64(out, ds.meta.qstep);
    detail::put_bytes(out, ds.xs.data(), ds.xs.size() * sizeof(double));
    for (int label : ds.labels) detail::put_i32(out, label);
    detail::put_u32(out, detail::crc_of(out));
    detail::write_file_atomic(path, out);
}

inline Dataset load_dataset(const std::string& path) {
    const std::string payload = detail::checked_payload(detail::read_file(path), "dataset container");
    detail::ByteReader r{payload};
    char magic[8];
    r.get_bytes(magic, 8);
    if (std::memcmp(magic, detail::kDatasetMagic, 8) != 0) throw IoError("not a dataset container: " + path);
    const std::uint32_t version = r.get_u32();
    if (version != detail::kDatasetVersion)
        throw IoError("dataset container version " + std::to_string(version) + " but this build reads version " +
                      std::to_string(detail::kDatasetVersion));
    Dataset ds;
    const std::uint64_t count = r.get_u64();
    const std::uint32_t ndim = r.get_u32();
    for (std::uint32_t i = 0; i < ndim; ++i) ds.sample_shape.push_back(r.get_u64());
    const std::uint32_t label_width = r.get_u32();
    if (label_width != 4) throw IoError("unsupported label width " + std::to_string(label_width));
    ds.num_classes = static_cast<int>(r.get_u32());
    const std::uint32_t tag_len = r.get_u32();
    ds.domain_tag = r.get_string(tag_len);
    ds.meta.lo = r.get_f64();
    ds.meta.hi = r.get_f64();
    ds.meta.qstep = r.get_f64();
    ds.xs.resize(count * ds.dim());
    r.get_bytes(ds.xs.data(), ds.xs.size() * sizeof(double));
    ds.labels.resize(count);
    for (auto& label : ds.labels) {
        label = r.get_i32();
        if (label < 0 || label >= ds.num_classes) throw IoError("dataset container holds an out-of-range label");
    }
    if (r.pos != payload.size()) throw IoError("dataset container has trailing bytes");
    return ds;
}

} // namespace unvp
