#pragma once

// Dataset container plus the two on-disk formats the toolkit reads and
// writes:
//
//   * IDX (big-endian, the MNIST family layout) for ingesting existing
//     image corpora. Pixels are scaled to [0,1] by dividing by 255.
//   * A flat little-endian binary layout for generated shards:
//         magic "HFLD", u32 version (=1), u64 m, u32 d, u32 C,
//         then m rows of (d float64 features, i32 label).
//
// Writes go through a temp file renamed into place, so readers never see a
// half-written dataset.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hfl/errors.hpp"

namespace hfl {

// Labelled sample shard. Features are row-major, m rows by feature_dim
// columns; labels[i] in [0, num_classes).
struct Dataset {
    std::size_t feature_dim = 0;
    std::size_t num_classes = 0;
    std::vector<double> features; // size() == m * feature_dim
    std::vector<int> labels;      // size() == m

    std::size_t size() const { return labels.size(); }

    const double* row(std::size_t i) const { return features.data() + i * feature_dim; }

    void push_row(const std::vector<double>& x, int y) {
        features.insert(features.end(), x.begin(), x.end());
        labels.push_back(y);
    }

    void validate(const char* where) const {
        if (num_classes < 2) throw DataError(std::string(where) + ": need at least 2 classes");
        if (labels.empty()) throw DataError(std::string(where) + ": empty dataset");
        if (features.size() != labels.size() * feature_dim) {
            throw DataError(std::string(where) + ": feature/label row count mismatch");
        }
        for (int y : labels) {
            if (y < 0 || static_cast<std::size_t>(y) >= num_classes) {
                throw DataError(std::string(where) + ": label out of range");
            }
        }
    }
};

// ---------------------------------------------------------------------------
// FNV-1a streaming hash, used for partition/content checksums in summaries.

struct Fnv1a {
    std::uint64_t state = 14695981039346656037ULL;

    void add_byte(std::uint8_t b) {
        state ^= b;
        state *= 1099511628211ULL;
    }
    void add_bytes(const void* p, std::size_t n) {
        const auto* q = static_cast<const std::uint8_t*>(p);
        for (std::size_t i = 0; i < n; ++i) add_byte(q[i]);
    }
    void add_u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) add_byte(static_cast<std::uint8_t>(v >> (8 * i)));
    }
};

// ---------------------------------------------------------------------------
// IDX ingestion (big-endian magic 0x00000803 for images, 0x00000801 for
// labels).

namespace detail {

inline std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw DataError(path + ": truncated IDX header");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

} // namespace detail

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw DataError(images_path + ": cannot open");
    std::ifstream lab(labels_path, std::ios::binary);
    if (!lab) throw DataError(labels_path + ": cannot open");

    std::uint32_t img_magic = detail::read_u32_be(img, images_path);
    if (img_magic != 0x00000803u) {
        throw DataError(images_path + ": bad IDX image magic (expected 0x00000803)");
    }
    std::uint32_t lab_magic = detail::read_u32_be(lab, labels_path);
    if (lab_magic != 0x00000801u) {
        throw DataError(labels_path + ": bad IDX label magic (expected 0x00000801)");
    }

    std::uint32_t m_img = detail::read_u32_be(img, images_path);
    std::uint32_t rows = detail::read_u32_be(img, images_path);
    std::uint32_t cols = detail::read_u32_be(img, images_path);
    std::uint32_t m_lab = detail::read_u32_be(lab, labels_path);
    if (m_img != m_lab) {
        throw DataError(images_path + ": image count " + std::to_string(m_img) +
                        " does not match label count " + std::to_string(m_lab));
    }

    std::size_t d = std::size_t(rows) * cols;
    std::vector<unsigned char> pixels(std::size_t(m_img) * d);
    img.read(reinterpret_cast<char*>(pixels.data()), std::streamsize(pixels.size()));
    if (std::size_t(img.gcount()) != pixels.size()) {
        throw DataError(images_path + ": truncated image payload");
    }
    std::vector<unsigned char> raw_labels(m_lab);
    lab.read(reinterpret_cast<char*>(raw_labels.data()), std::streamsize(raw_labels.size()));
    if (std::size_t(lab.gcount()) != raw_labels.size()) {
        throw DataError(labels_path + ": truncated label payload");
    }

    Dataset out;
    out.feature_dim = d;
    out.features.resize(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) out.features[i] = pixels[i] / 255.0;
    out.labels.resize(m_lab);
    int max_label = 0;
    for (std::size_t i = 0; i < raw_labels.size(); ++i) {
        out.labels[i] = raw_labels[i];
        max_label = std::max(max_label, out.labels[i]);
    }
    out.num_classes = std::size_t(std::max(max_label + 1, 2));
    out.validate("load_idx");
    return out;
}

// ---------------------------------------------------------------------------
// Flat binary dataset format ("HFLD" v1, little-endian).

namespace detail {

inline void put_u32_le(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) b[i] = char((v >> (8 * i)) & 0xff);
    out.write(b, 4);
}
inline void put_u64_le(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = char((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}
inline void put_f64_le(std::ostream& out, double x) {
    std::uint64_t v;
    std::memcpy(&v, &x, 8);
    put_u64_le(out, v);
}
inline std::uint32_t get_u32_le(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw DataError(path + ": truncated dataset file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(b[i]) << (8 * i);
    return v;
}
inline std::uint64_t get_u64_le(std::istream& in, const std::string& path) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw DataError(path + ": truncated dataset file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}
inline double get_f64_le(std::istream& in, const std::string& path) {
    std::uint64_t v = get_u64_le(in, path);
    double x;
    std::memcpy(&x, &v, 8);
    return x;
}

} // namespace detail

inline void save_dataset(const Dataset& data, const std::string& path) {
    data.validate("save_dataset");
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError(tmp + ": cannot open for write");
        out.write("HFLD", 4);
        detail::put_u32_le(out, 1u);
        detail::put_u64_le(out, data.size());
        detail::put_u32_le(out, std::uint32_t(data.feature_dim));
        detail::put_u32_le(out, std::uint32_t(data.num_classes));
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double* x = data.row(i);
            for (std::size_t j = 0; j < data.feature_dim; ++j) detail::put_f64_le(out, x[j]);
            detail::put_u32_le(out, std::uint32_t(data.labels[i]));
        }
        if (!out) throw DataError(tmp + ": write failed");
    }
    std::filesystem::rename(tmp, path);
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(path + ": cannot open");
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "HFLD", 4) != 0) {
        throw DataError(path + ": bad dataset magic (expected HFLD)");
    }
    std::uint32_t version = detail::get_u32_le(in, path);
    if (version != 1u) {
        throw DataError(path + ": unsupported dataset version " + std::to_string(version));
    }
    std::uint64_t m = detail::get_u64_le(in, path);
    std::uint32_t d = detail::get_u32_le(in, path);
    std::uint32_t c = detail::get_u32_le(in, path);
    Dataset out;
    out.feature_dim = d;
    out.num_classes = c;
    out.features.reserve(std::size_t(m) * d);
    out.labels.reserve(std::size_t(m));
    for (std::uint64_t i = 0; i < m; ++i) {
        for (std::uint32_t j = 0; j < d; ++j) out.features.push_back(detail::get_f64_le(in, path));
        out.labels.push_back(int(detail::get_u32_le(in, path)));
    }
    out.validate("load_dataset");
    return out;
}

} // namespace hfl
