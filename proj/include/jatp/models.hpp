#pragma once

#include <algorithm>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "jatp/nn.hpp"

namespace jatp {

// A batch of [0,1] images plus integer class labels.
struct ImageBatch {
    Tensor<float> pixels;     // (N, C, H, W)
    std::vector<int> labels;  // (N), values in {0..K-1}

    int batch_size() const { return pixels.rank() > 0 ? pixels.dim(0) : 0; }

    void validate(int num_classes) const {
        if (pixels.rank() != 4)
            throw ArgumentError("ImageBatch pixels must be rank-4, got " +
                                shape_str(pixels.shape()));
        if (pixels.dim(0) != int(labels.size()))
            throw ArgumentError("ImageBatch: batch dim " +
                                std::to_string(pixels.dim(0)) + " vs " +
                                std::to_string(labels.size()) + " labels");
        if (num_classes < 2)
            throw ArgumentError("ImageBatch requires K >= 2 classes");
        for (float v : pixels.vec())
            if (!(v >= 0.0f && v <= 1.0f))
                throw ArgumentError("ImageBatch pixel out of [0,1]: " +
                                    std::to_string(v));
        for (int y : labels)
            if (y < 0 || y >= num_classes)
                throw ArgumentError("ImageBatch label out of range: " +
                                    std::to_string(y));
    }
};

struct FeatureTap {
    enum class Host { target, full };
    Host host = Host::target;
    std::string layer = "stage3";
};

struct CheckpointMeta {
    std::uint64_t seed = 0;
    int epoch = 0;
    std::string config_digest;
    double clean_accuracy = -1.0;  // percent; negative = not recorded
    double robust_accuracy = -1.0;
};

namespace detail {
inline int parse_tagged_int(const std::string& s, const std::string& tag) {
    auto pos = s.find(tag);
    if (pos == std::string::npos)
        throw ConfigError("architecture id '" + s + "' missing '" + tag + "'");
    return std::stoi(s.substr(pos + tag.size()));
}

inline int parse_tagged_int_or(const std::string& s, const std::string& tag,
                               int fallback) {
    return s.find(tag) == std::string::npos ? fallback
                                            : parse_tagged_int(s, tag);
}

// channel count is only spelled out when it differs from the default
inline std::string channel_suffix(int channels) {
    return channels == 3 ? "" : "-c" + std::to_string(channels);
}
}  // namespace detail

// Classifier t(x, theta). When frozen, theta never receives updates and its
// digest is stable across any number of training steps.
class TargetModel {
public:
    TargetModel(int base_width, int num_classes, std::uint64_t init_seed,
                int in_channels = 3)
        : net_(base_width, num_classes, init_seed, in_channels),
          channels_(in_channels),
          arch_id_("mini-resnet-w" + std::to_string(base_width) + "-k" +
                   std::to_string(num_classes) +
                   detail::channel_suffix(in_channels)) {}

    static TargetModel from_arch_id(const std::string& arch_id,
                                    std::uint64_t init_seed) {
        return TargetModel(detail::parse_tagged_int(arch_id, "-w"),
                           detail::parse_tagged_int(arch_id, "-k"), init_seed,
                           detail::parse_tagged_int_or(arch_id, "-c", 3));
    }

    const std::string& arch_id() const { return arch_id_; }
    int num_classes() const { return net_.num_classes(); }
    bool frozen() const { return frozen_; }
    void set_frozen(bool f) {
        frozen_ = f;
        net_.params().set_requires_grad(!f);
    }

    bool has_tap(const std::string& layer) const {
        auto names = net_.tap_names();
        return std::find(names.begin(), names.end(), layer) != names.end();
    }
    std::vector<std::string> tap_names() const { return net_.tap_names(); }

    ag::Var<float> logits_graph(const ag::Var<float>& x,
                                nn::TapMap<float>* taps = nullptr) const {
        return net_.forward(x, taps);
    }

    Tensor<float> logits(const ImageBatch& batch) const {
        auto x = ag::leaf(batch.pixels, false);
        return net_.forward(x)->value;
    }

    nn::ParamStore<float>& params() { return net_.params(); }
    const nn::ParamStore<float>& params() const { return net_.params(); }
    std::uint64_t param_digest() const { return net_.params().digest(); }

    int channels() const { return channels_; }

    // Fresh model with its own parameter storage (plain copy would alias the
    // shared parameter nodes).
    TargetModel deep_copy() const {
        TargetModel out = from_arch_id(arch_id_, 0);
        out.net_.params().copy_values_from(net_.params());
        out.meta = meta;
        return out;
    }

    CheckpointMeta meta;

private:
    nn::MiniResNet<float> net_;
    int channels_ = 3;
    std::string arch_id_;
    bool frozen_ = false;
};

// Image-to-image map p(x, phi); residual with clamped output.
class Preprocessor {
public:
    Preprocessor(int width, int num_blocks, std::uint64_t init_seed,
                 int channels = 3)
        : net_(width, num_blocks, init_seed, channels),
          channels_(channels),
          arch_id_("res-denoiser-w" + std::to_string(width) + "-b" +
                   std::to_string(num_blocks) +
                   detail::channel_suffix(channels)) {}

    static Preprocessor from_arch_id(const std::string& arch_id,
                                     std::uint64_t init_seed) {
        return Preprocessor(detail::parse_tagged_int(arch_id, "-w"),
                            detail::parse_tagged_int(arch_id, "-b"), init_seed,
                            detail::parse_tagged_int_or(arch_id, "-c", 3));
    }

    // Fresh model with its own parameter storage (plain copy would alias the
    // shared parameter nodes).
    Preprocessor deep_copy() const {
        Preprocessor out = from_arch_id(arch_id_, 0);
        out.net_.params().copy_values_from(net_.params());
        out.meta = meta;
        return out;
    }

    // Exact identity map (zeroed correction head).
    static Preprocessor identity(int width = 4, int num_blocks = 1) {
        Preprocessor p(width, num_blocks, 0);
        p.net_.zero_correction();
        return p;
    }

    const std::string& arch_id() const { return arch_id_; }

    ag::Var<float> apply_graph(const ag::Var<float>& x,
                               nn::TapMap<float>* taps = nullptr) const {
        return net_.forward(x, taps);
    }

    Tensor<float> apply(const Tensor<float>& pixels) const {
        auto x = ag::leaf(pixels, false);
        return net_.forward(x)->value;
    }

    bool has_tap(const std::string& layer) const {
        auto names = net_.tap_names();
        return std::find(names.begin(), names.end(), layer) != names.end();
    }

    nn::ParamStore<float>& params() { return net_.params(); }
    const nn::ParamStore<float>& params() const { return net_.params(); }
    std::uint64_t param_digest() const { return net_.params().digest(); }

    int channels() const { return channels_; }

    CheckpointMeta meta;

private:
    nn::ResidualDenoiser<float> net_;
    int channels_ = 3;
    std::string arch_id_;
};

// F = T(P(x)). Holds references; parameters are never copied, so the frozen
// state of the target is preserved by construction.
class FullModel {
public:
    FullModel(Preprocessor& pre, TargetModel& tgt) : pre_(&pre), tgt_(&tgt) {}

    Preprocessor& preprocessor() { return *pre_; }
    const Preprocessor& preprocessor() const { return *pre_; }
    TargetModel& target() { return *tgt_; }
    const TargetModel& target() const { return *tgt_; }
    int num_classes() const { return tgt_->num_classes(); }

    // Taps from the target part are recorded into `taps` when given; the tap
    // registry of the full model is the target's registry.
    ag::Var<float> logits_graph(const ag::Var<float>& x,
                                nn::TapMap<float>* taps = nullptr) const {
        return tgt_->logits_graph(pre_->apply_graph(x), taps);
    }

    Tensor<float> logits(const ImageBatch& batch) const {
        auto x = ag::leaf(batch.pixels, false);
        return logits_graph(x)->value;
    }

    bool has_tap(const std::string& layer) const { return tgt_->has_tap(layer); }

private:
    Preprocessor* pre_;
    TargetModel* tgt_;
};

inline FullModel compose(Preprocessor& pre, TargetModel& tgt) {
    if (pre.channels() != tgt.channels())
        throw ConfigError("compose: preprocessor emits " +
                          std::to_string(pre.channels()) +
                          " channels, target expects " +
                          std::to_string(tgt.channels()));
    return FullModel(pre, tgt);
}

// argmax with lowest-index tie break.
inline std::vector<int> classify_logits(const Tensor<float>& logits) {
    const int n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const float* z = logits.data() + std::size_t(i) * k;
        int best = 0;
        for (int j = 1; j < k; ++j)
            if (z[j] > z[best]) best = j;
        out[std::size_t(i)] = best;
    }
    return out;
}

template <class Model>
std::vector<int> classify(const Model& model, const ImageBatch& batch) {
    return classify_logits(model.logits(batch));
}

inline Tensor<float> softmax_rows(const Tensor<float>& logits) {
    auto v = ag::leaf(logits, false);
    return ag::softmax(v)->value;
}

// Activations at a named tap for an evaluation-mode forward pass.
template <class Model>
Tensor<float> feature_map(const Model& model, const ImageBatch& batch,
                          const FeatureTap& tap) {
    if (!model.has_tap(tap.layer))
        throw ConfigError("unknown feature tap '" + tap.layer + "'");
    nn::TapMap<float> taps;
    auto x = ag::leaf(batch.pixels, false);
    model.logits_graph(x, &taps);
    return taps.at(tap.layer)->value;
}

template <class Model>
double accuracy_percent(const Model& model, const ImageBatch& batch) {
    auto pred = classify(model, batch);
    int correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == batch.labels[i]) ++correct;
    return batch.labels.empty() ? 0.0
                                : 100.0 * double(correct) / double(pred.size());
}

}  // namespace jatp
