#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "jatp/models.hpp"
#include "jatp/rng.hpp"

namespace jatp {

enum class DataSource { synthetic, packed_binary, image_directory };

struct AugmentSpec {
    bool enabled = false;
    int pad = 4;
    int crop = 32;
    bool horizontal_flip = true;
};

struct DatasetSpec {
    DataSource source = DataSource::synthetic;
    int num_classes = 10;
    int channels = 3, height = 32, width = 32;
    int train_per_class = 100;
    int test_per_class = 100;
    double noise_sigma = 0.10;   // synthetic only
    std::string path;            // packed_binary / image_directory root
    AugmentSpec augment;         // training split only

    void validate() const {
        if (num_classes < 2)
            throw ConfigError("dataset.k: K >= 2 required, got " +
                              std::to_string(num_classes));
        if (channels < 1 || height < 1 || width < 1)
            throw ConfigError("dataset: image dims must be positive");
        if (train_per_class < 1 || test_per_class < 1)
            throw ConfigError("dataset: split sizes must be positive");
    }
};

struct Dataset {
    Tensor<float> images;  // (N, C, H, W), values in [0,1]
    std::vector<int> labels;
    int num_classes = 0;

    int size() const { return images.rank() > 0 ? images.dim(0) : 0; }

    std::uint64_t digest() const {
        std::uint64_t h = tensor_digest(images);
        h = fnv1a64(std::string_view(
                        reinterpret_cast<const char*>(labels.data()),
                        labels.size() * sizeof(int)),
                    h);
        return h;
    }

    ImageBatch select(const std::vector<int>& idx) const {
        const int c = images.dim(1), hh = images.dim(2), ww = images.dim(3);
        const std::size_t per = std::size_t(c) * hh * ww;
        ImageBatch b;
        b.pixels = Tensor<float>(Shape{int(idx.size()), c, hh, ww});
        b.labels.resize(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) {
            std::copy_n(images.data() + std::size_t(idx[i]) * per, per,
                        b.pixels.data() + i * per);
            b.labels[i] = labels[std::size_t(idx[i])];
        }
        return b;
    }

    ImageBatch head(int n) const {
        std::vector<int> idx(std::size_t(std::min(n, size())));
        std::iota(idx.begin(), idx.end(), 0);
        return select(idx);
    }
};

namespace detail {

// bilinear upsample of a coarse grid to (h, w)
inline void upsample_bilinear(const std::vector<float>& coarse, int ch, int cw,
                              float* out, int h, int w) {
    for (int y = 0; y < h; ++y) {
        const float fy = float(y) * float(ch - 1) / float(h - 1);
        const int y0 = int(fy), y1 = std::min(y0 + 1, ch - 1);
        const float ty = fy - float(y0);
        for (int x = 0; x < w; ++x) {
            const float fx = float(x) * float(cw - 1) / float(w - 1);
            const int x0 = int(fx), x1 = std::min(x0 + 1, cw - 1);
            const float tx = fx - float(x0);
            const float a = coarse[std::size_t(y0) * cw + x0] * (1 - tx) +
                            coarse[std::size_t(y0) * cw + x1] * tx;
            const float b = coarse[std::size_t(y1) * cw + x0] * (1 - tx) +
                            coarse[std::size_t(y1) * cw + x1] * tx;
            out[std::size_t(y) * w + x] = a * (1 - ty) + b * ty;
        }
    }
}

}  // namespace detail

// Procedurally generated class-distinguishable images: one smooth random
// template per (class, channel), plus per-example Gaussian pixel noise.
// Deterministic in (spec, seed, split name); class-balanced by construction.
inline Dataset synthetic_dataset(const DatasetSpec& spec, int per_class,
                                 std::uint64_t seed, const std::string& split) {
    spec.validate();
    const int k = spec.num_classes, c = spec.channels;
    const int h = spec.height, w = spec.width;
    const int n = k * per_class;
    Dataset ds;
    ds.num_classes = k;
    ds.images = Tensor<float>(Shape{n, c, h, w});
    ds.labels.resize(std::size_t(n));

    // class templates, shared across splits
    const int ch = 8, cw = 8;
    std::vector<std::vector<float>> templates(std::size_t(k) * c);
    for (int y = 0; y < k; ++y) {
        Rng trng(derive_seed(seed, "synthetic-template", std::uint64_t(y)));
        for (int ci = 0; ci < c; ++ci) {
            auto& t = templates[std::size_t(y) * c + ci];
            t.resize(std::size_t(ch) * cw);
            for (auto& v : t) v = 0.25f + 0.5f * float(trng.uniform());
        }
    }

    const std::size_t per = std::size_t(c) * h * w;
    std::vector<float> plane(std::size_t(h) * w);
    int row = 0;
    for (int y = 0; y < k; ++y) {
        for (int e = 0; e < per_class; ++e, ++row) {
            Rng nrng(derive_seed(seed, "synthetic-noise-" + split,
                                 std::uint64_t(y) * 1000003ull + e));
            float* img = ds.images.data() + std::size_t(row) * per;
            for (int ci = 0; ci < c; ++ci) {
                detail::upsample_bilinear(templates[std::size_t(y) * c + ci],
                                          ch, cw, plane.data(), h, w);
                float* dst = img + std::size_t(ci) * h * w;
                for (std::size_t p = 0; p < plane.size(); ++p) {
                    float v = plane[p] +
                              float(spec.noise_sigma) * float(nrng.normal());
                    dst[p] = std::min(1.0f, std::max(0.0f, v));
                }
            }
            ds.labels[std::size_t(row)] = y;
        }
    }
    return ds;
}

// Packed binary records: 1 label byte followed by channel-major pixel bytes
// (the layout of the common 32x32 benchmark .bin files).
inline Dataset load_packed_binary(const DatasetSpec& spec,
                                  const std::string& path, int max_records) {
    spec.validate();
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IngestionError("cannot open dataset file '" + path + "'");
    std::string bytes((std::istreambuf_iterator<char>(f)),
                      std::istreambuf_iterator<char>());
    const std::size_t rec =
        1 + std::size_t(spec.channels) * spec.height * spec.width;
    if (bytes.empty() || bytes.size() % rec != 0)
        throw IngestionError("dataset file '" + path + "': size " +
                             std::to_string(bytes.size()) +
                             " is not a multiple of record size " +
                             std::to_string(rec));
    int n = int(bytes.size() / rec);
    if (max_records > 0) n = std::min(n, max_records);
    Dataset ds;
    ds.num_classes = spec.num_classes;
    ds.images = Tensor<float>(
        Shape{n, spec.channels, spec.height, spec.width});
    ds.labels.resize(std::size_t(n));
    const std::size_t per = rec - 1;
    for (int i = 0; i < n; ++i) {
        const std::size_t off = std::size_t(i) * rec;
        const int label = int(static_cast<unsigned char>(bytes[off]));
        if (label >= spec.num_classes)
            throw IngestionError("dataset file '" + path +
                                 "': label out of range at offset " +
                                 std::to_string(off));
        ds.labels[std::size_t(i)] = label;
        float* dst = ds.images.data() + std::size_t(i) * per;
        for (std::size_t p = 0; p < per; ++p)
            dst[p] = float(static_cast<unsigned char>(bytes[off + 1 + p])) /
                     255.0f;
    }
    return ds;
}

struct DataSplits {
    Dataset train;
    Dataset test;
};

inline DataSplits load_dataset(const DatasetSpec& spec, std::uint64_t seed) {
    spec.validate();
    DataSplits s;
    switch (spec.source) {
        case DataSource::synthetic:
            s.train = synthetic_dataset(spec, spec.train_per_class, seed, "train");
            s.test = synthetic_dataset(spec, spec.test_per_class, seed, "test");
            break;
        case DataSource::packed_binary: {
            namespace fs = std::filesystem;
            s.train = load_packed_binary(
                spec, (fs::path(spec.path) / "train.bin").string(),
                spec.train_per_class * spec.num_classes);
            s.test = load_packed_binary(
                spec, (fs::path(spec.path) / "test.bin").string(),
                spec.test_per_class * spec.num_classes);
            break;
        }
        case DataSource::image_directory:
            throw ConfigError("dataset.source: image_directory is not wired up");
    }
    return s;
}

// ---------------------------------------------------------------------------
// augmentation (training split only)

inline void flip_horizontal(float* img, int c, int h, int w) {
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y) {
            float* row = img + (std::size_t(ci) * h + y) * w;
            std::reverse(row, row + w);
        }
}

// zero-pad by `pad` then crop `crop`x`crop` at offset (oy, ox)
inline void pad_crop(const float* src, int c, int h, int w, int pad, int crop,
                     int oy, int ox, float* dst) {
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < crop; ++y)
            for (int x = 0; x < crop; ++x) {
                const int sy = y + oy - pad, sx = x + ox - pad;
                dst[(std::size_t(ci) * crop + y) * crop + x] =
                    (sy >= 0 && sy < h && sx >= 0 && sx < w)
                        ? src[(std::size_t(ci) * h + sy) * w + sx]
                        : 0.0f;
            }
}

inline void augment_batch(ImageBatch& batch, const AugmentSpec& aug, Rng& rng) {
    if (!aug.enabled) return;
    const int n = batch.pixels.dim(0), c = batch.pixels.dim(1);
    const int h = batch.pixels.dim(2), w = batch.pixels.dim(3);
    std::vector<float> tmp(std::size_t(c) * aug.crop * aug.crop);
    for (int i = 0; i < n; ++i) {
        float* img = batch.pixels.data() + std::size_t(i) * c * h * w;
        const int oy = int(rng.below(std::uint64_t(2 * aug.pad + 1)));
        const int ox = int(rng.below(std::uint64_t(2 * aug.pad + 1)));
        pad_crop(img, c, h, w, aug.pad, aug.crop, oy, ox, tmp.data());
        std::copy(tmp.begin(), tmp.end(), img);
        if (aug.horizontal_flip && rng.uniform() < 0.5)
            flip_horizontal(img, c, aug.crop, aug.crop);
    }
}

// shuffled batch index lists for one epoch
inline std::vector<std::vector<int>> epoch_batches(int n, int batch_size,
                                                   Rng& rng) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    for (int i = n - 1; i > 0; --i)
        std::swap(order[std::size_t(i)],
                  order[rng.below(std::uint64_t(i) + 1)]);
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < n; start += batch_size) {
        const int end = std::min(n, start + batch_size);
        batches.emplace_back(order.begin() + start, order.begin() + end);
    }
    return batches;
}

// seeded fixed subsample of an evaluation split
inline std::vector<int> subsample_indices(int n, int count, std::uint64_t seed) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, "eval-subsample"));
    for (int i = n - 1; i > 0; --i)
        std::swap(order[std::size_t(i)],
                  order[rng.below(std::uint64_t(i) + 1)]);
    order.resize(std::size_t(std::min(n, count)));
    std::sort(order.begin(), order.end());
    return order;
}

}  // namespace jatp
