#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <span>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "errors.hpp"
#include "format.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace advlab {

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

/// Inputs [N, d] in [0,1] with integer labels in [0, classes).
struct Dataset {
    Tensor inputs;
    std::vector<int> labels;
    std::size_t classes = 0;
    std::string name;
    Split split = Split::train;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return inputs.rank() == 2 ? inputs.dim(1) : 0; }

    /// Throws if inputs leave [0,1], labels leave range, or counts disagree.
    void validate() const {
        if (inputs.rank() != 2 || inputs.dim(0) != labels.size())
            throw InputError("dataset '" + name + "': inputs " + shape_str(inputs.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
        for (double v : inputs.data())
            if (!(v >= 0.0 && v <= 1.0)) throw InputError("dataset '" + name + "': input value outside [0,1]");
        for (int y : labels)
            if (y < 0 || static_cast<std::size_t>(y) >= classes)
                throw InputError("dataset '" + name + "': label " + std::to_string(y) + " outside [0," +
                                 std::to_string(classes) + ")");
    }
};

inline Dataset select(const Dataset& ds, const std::vector<std::size_t>& idx) {
    const std::size_t d = ds.dim();
    Dataset out;
    out.inputs = Tensor({idx.size(), d});
    out.labels.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(ds.inputs.row(idx[r]).begin(), d, out.inputs.row(r).begin());
        out.labels.push_back(ds.labels[idx[r]]);
    }
    out.classes = ds.classes;
    out.name = ds.name;
    out.split = ds.split;
    return out;
}

/// First n samples (all of them when n >= size).
inline Dataset head(const Dataset& ds, std::size_t n) {
    n = std::min(n, ds.size());
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return select(ds, idx);
}

// ---- IDX -------------------------------------------------------------------------------------

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

namespace detail {

inline std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IdxError(IdxErrorKind::unreadable, "cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
           std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<unsigned char>& b, std::uint32_t v) {
    b.push_back(static_cast<unsigned char>(v >> 24));
    b.push_back(static_cast<unsigned char>(v >> 16));
    b.push_back(static_cast<unsigned char>(v >> 8));
    b.push_back(static_cast<unsigned char>(v));
}

}  // namespace detail

struct IdxImages {
    std::uint32_t count = 0, rows = 0, cols = 0;
    std::vector<unsigned char> pixels;
};

inline IdxImages parse_idx_images(const std::vector<unsigned char>& bytes, const std::string& origin) {
    if (bytes.size() < 4) throw IdxError(IdxErrorKind::truncated, origin + ": truncated IDX header");
    const auto magic = detail::be32(bytes, 0);
    if (magic != kIdxImagesMagic)
        throw IdxError(IdxErrorKind::bad_magic, origin + ": bad IDX image magic 0x" + [&] {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%08x", magic);
            return std::string(buf);
        }());
    if (bytes.size() < 16) throw IdxError(IdxErrorKind::truncated, origin + ": truncated IDX header");
    IdxImages img{detail::be32(bytes, 4), detail::be32(bytes, 8), detail::be32(bytes, 12), {}};
    const std::uint64_t payload = std::uint64_t{img.count} * img.rows * img.cols;
    if (bytes.size() - 16 < payload)
        throw IdxError(IdxErrorKind::truncated, origin + ": truncated IDX image payload (expected " +
                                                    std::to_string(payload) + " bytes, found " +
                                                    std::to_string(bytes.size() - 16) + ")");
    img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
    return img;
}

inline std::vector<unsigned char> parse_idx_labels(const std::vector<unsigned char>& bytes, const std::string& origin) {
    if (bytes.size() < 4) throw IdxError(IdxErrorKind::truncated, origin + ": truncated IDX header");
    const auto magic = detail::be32(bytes, 0);
    if (magic != kIdxLabelsMagic) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%08x", magic);
        throw IdxError(IdxErrorKind::bad_magic, origin + ": bad IDX label magic 0x" + std::string(buf));
    }
    if (bytes.size() < 8) throw IdxError(IdxErrorKind::truncated, origin + ": truncated IDX header");
    const std::uint32_t n = detail::be32(bytes, 4);
    if (bytes.size() - 8 < n)
        throw IdxError(IdxErrorKind::truncated, origin + ": truncated IDX label payload (expected " +
                                                    std::to_string(n) + " bytes, found " +
                                                    std::to_string(bytes.size() - 8) + ")");
    return {bytes.begin() + 8, bytes.begin() + 8 + n};
}

/// Loads an IDX image/label file pair; pixels are scaled by 1/255. Class count is max label + 1
/// unless `classes` is given.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, std::size_t classes = 0) {
    const auto img = parse_idx_images(detail::read_file(images_path), images_path);
    const auto lab = parse_idx_labels(detail::read_file(labels_path), labels_path);
    if (lab.size() != img.count)
        throw IdxError(IdxErrorKind::count_mismatch, "IDX count mismatch: " + std::to_string(img.count) +
                                                         " images in '" + images_path + "' vs " +
                                                         std::to_string(lab.size()) + " labels in '" + labels_path +
                                                         "'");
    const std::size_t d = std::size_t{img.rows} * img.cols;
    Dataset ds;
    ds.inputs = Tensor({img.count, d});
    for (std::size_t i = 0; i < img.pixels.size(); ++i) ds.inputs[i] = img.pixels[i] / 255.0;
    int max_label = -1;
    for (unsigned char y : lab) {
        ds.labels.push_back(y);
        max_label = std::max(max_label, int{y});
    }
    ds.classes = classes ? classes : static_cast<std::size_t>(max_label + 1);
    ds.name = std::filesystem::path(images_path).filename().string();
    ds.validate();
    return ds;
}

/// Serializes a dataset back to IDX bytes (pixels rounded to the nearest 1/255 step).
inline std::pair<std::vector<unsigned char>, std::vector<unsigned char>> to_idx_bytes(const Dataset& ds,
                                                                                       std::uint32_t rows,
                                                                                       std::uint32_t cols) {
    if (std::size_t{rows} * cols != ds.dim()) throw ShapeError("to_idx_bytes: rows*cols does not match input width");
    std::vector<unsigned char> img, lab;
    detail::put_be32(img, kIdxImagesMagic);
    detail::put_be32(img, static_cast<std::uint32_t>(ds.size()));
    detail::put_be32(img, rows);
    detail::put_be32(img, cols);
    for (double v : ds.inputs.data()) img.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
    detail::put_be32(lab, kIdxLabelsMagic);
    detail::put_be32(lab, static_cast<std::uint32_t>(ds.size()));
    for (int y : ds.labels) lab.push_back(static_cast<unsigned char>(y));
    return {std::move(img), std::move(lab)};
}

// ---- synthetic -------------------------------------------------------------------------------

/// Class-conditional Gaussians. Class c has mean 0.5 + (c - (C-1)/2) * separation * u with
/// u = (1,...,1)/sqrt(d), so neighbouring class means are `separation` apart; samples use
/// isotropic noise of standard deviation `spread` and are clipped to [0,1]. Label of sample i
/// is i mod C.
inline Dataset synth_gaussians(std::size_t d, std::size_t classes, std::size_t n, double separation,
                               std::uint64_t seed, double spread = 0.1) {
    if (d < 1) throw InvalidArgument("synth_gaussians: dimension must be >= 1");
    if (classes < 2) throw InvalidArgument("synth_gaussians: need at least 2 classes");
    Rng rng(derive_seed(seed, {0x5EED}));
    const double unit = 1.0 / std::sqrt(static_cast<double>(d));
    Dataset ds;
    ds.inputs = Tensor({n, d});
    ds.labels.resize(n);
    ds.classes = classes;
    ds.name = "gaussians-d" + std::to_string(d) + "-c" + std::to_string(classes);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t c = i % classes;
        ds.labels[i] = static_cast<int>(c);
        const double offset = (static_cast<double>(c) - 0.5 * static_cast<double>(classes - 1)) * separation * unit;
        for (std::size_t j = 0; j < d; ++j)
            ds.inputs.at(i, j) = std::clamp(0.5 + offset + spread * rng.normal(), 0.0, 1.0);
    }
    return ds;
}

/// CSV with header x0..x{d-1},label; numbers in shortest round-trip form.
inline std::string to_csv(const Dataset& ds) {
    CsvTable t;
    for (std::size_t j = 0; j < ds.dim(); ++j) t.header.push_back("x" + std::to_string(j));
    t.header.push_back("label");
    for (std::size_t i = 0; i < ds.size(); ++i) {
        std::vector<std::string> r;
        for (double v : ds.inputs.row(i)) r.push_back(format_double(v));
        r.push_back(std::to_string(ds.labels[i]));
        t.rows.push_back(std::move(r));
    }
    return to_csv_string(t);
}

// ---- batching --------------------------------------------------------------------------------

struct Batch {
    Tensor x;
    std::vector<int> y;
    std::vector<std::size_t> indices;
};

inline Batch make_batch(const Dataset& ds, std::span<const std::size_t> idx) {
    const std::size_t d = ds.dim();
    Batch b{Tensor({idx.size(), d}), {}, {idx.begin(), idx.end()}};
    b.y.reserve(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(ds.inputs.row(idx[r]).begin(), d, b.x.row(r).begin());
        b.y.push_back(ds.labels[idx[r]]);
    }
    return b;
}

/// Mini-batches over a permutation fixed by (shuffle_seed, epoch); the last batch may be short.
inline std::vector<Batch> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t shuffle_seed,
                                  std::uint64_t epoch) {
    if (batch_size == 0 || batch_size > ds.size())
        throw InvalidArgument("batches: batch size must be in [1, N]");
    const auto order = permutation(ds.size(), derive_seed(shuffle_seed, {epoch}));
    std::vector<Batch> out;
    for (std::size_t s = 0; s < order.size(); s += batch_size)
        out.push_back(make_batch(ds, std::span(order).subspan(s, std::min(batch_size, order.size() - s))));
    return out;
}

/// Batches in storage order.
inline std::vector<Batch> sequential_batches(const Dataset& ds, std::size_t batch_size) {
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<Batch> out;
    for (std::size_t s = 0; s < order.size(); s += batch_size)
        out.push_back(make_batch(ds, std::span(order).subspan(s, std::min(batch_size, order.size() - s))));
    return out;
}

/// The first k samples of a fixed seed-determined order: the metric subset.
inline Dataset metric_subset(const Dataset& ds, std::size_t k, std::uint64_t seed) {
    auto order = permutation(ds.size(), derive_seed(seed, {0xA3}));
    order.resize(std::min(k, order.size()));
    return select(ds, order);
}

}  // namespace advlab
