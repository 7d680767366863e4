#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "jatp/autograd.hpp"
#include "jatp/rng.hpp"
#include "jatp/tensor.hpp"

namespace jatp::nn {

using jatp::ag::Var;

// Named parameter leaves, kept alive across forward passes so the optimizer
// can read gradients accumulated by backward().
template <class T>
class ParamStore {
public:
    Var<T> add(const std::string& name, Tensor<T> init) {
        auto v = ag::leaf<T>(std::move(init), /*requires_grad=*/true);
        names_.push_back(name);
        params_.push_back(v);
        return v;
    }

    std::size_t count() const { return params_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    Var<T>& param(std::size_t i) { return params_[i]; }
    const Var<T>& param(std::size_t i) const { return params_[i]; }

    Var<T> find(const std::string& name) const {
        for (std::size_t i = 0; i < names_.size(); ++i)
            if (names_[i] == name) return params_[i];
        return nullptr;
    }

    std::size_t numel() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p->value.size();
        return n;
    }

    void set_requires_grad(bool rg) {
        for (auto& p : params_) {
            p->requires_grad = rg;
            if (rg) p->ensure_grad();
        }
    }

    void zero_grads() {
        for (auto& p : params_)
            if (p->requires_grad) { p->ensure_grad(); p->zero_grad(); }
    }

    std::uint64_t digest() const {
        std::uint64_t h = 14695981039346656037ull;
        for (std::size_t i = 0; i < params_.size(); ++i) {
            h = fnv1a64(names_[i], h);
            h = tensor_digest(params_[i]->value, h);
        }
        return h;
    }

    // Copies values (not gradients) from another store with identical layout.
    void copy_values_from(const ParamStore& o) {
        for (std::size_t i = 0; i < params_.size(); ++i)
            params_[i]->value = o.params_[i]->value;
    }

private:
    std::vector<std::string> names_;
    std::vector<Var<T>> params_;
};

template <class T>
Tensor<T> he_init(Shape shape, std::size_t fan_in, Rng& rng) {
    const T stddev = T(std::sqrt(2.0 / double(fan_in)));
    return Tensor<T>::randn(std::move(shape), rng, stddev);
}

template <class T>
struct Conv {
    Var<T> w, b;
    int stride = 1, pad = 1;

    static Conv create(ParamStore<T>& ps, const std::string& name, int cin,
                       int cout, int k, int stride, int pad, Rng& rng) {
        Conv c;
        c.w = ps.add(name + ".w",
                     he_init<T>(Shape{cout, cin, k, k}, std::size_t(cin) * k * k, rng));
        c.b = ps.add(name + ".b", Tensor<T>(Shape{cout}));
        c.stride = stride;
        c.pad = pad;
        return c;
    }

    Var<T> operator()(const Var<T>& x) const {
        return ag::conv2d(x, w, b, stride, pad);
    }
};

template <class T>
struct Dense {
    Var<T> w, b;

    static Dense create(ParamStore<T>& ps, const std::string& name, int din,
                        int dout, Rng& rng) {
        Dense d;
        d.w = ps.add(name + ".w", he_init<T>(Shape{dout, din}, std::size_t(din), rng));
        d.b = ps.add(name + ".b", Tensor<T>(Shape{dout}));
        return d;
    }

    Var<T> operator()(const Var<T>& x) const { return ag::linear(x, w, b); }
};

// Activations captured at named taps during a forward pass.
template <class T>
using TapMap = std::map<std::string, Var<T>>;

// Residual basic block: conv-relu-conv plus (optionally projected) skip.
template <class T>
struct BasicBlock {
    Conv<T> conv1, conv2;
    Conv<T> proj;  // 1x1, only when shape changes
    bool has_proj = false;

    static BasicBlock create(ParamStore<T>& ps, const std::string& name,
                             int cin, int cout, int stride, Rng& rng) {
        BasicBlock blk;
        blk.conv1 = Conv<T>::create(ps, name + ".conv1", cin, cout, 3, stride, 1, rng);
        blk.conv2 = Conv<T>::create(ps, name + ".conv2", cout, cout, 3, 1, 1, rng);
        blk.has_proj = (cin != cout || stride != 1);
        if (blk.has_proj)
            blk.proj = Conv<T>::create(ps, name + ".proj", cin, cout, 1, stride, 0, rng);
        return blk;
    }

    Var<T> operator()(const Var<T>& x) const {
        auto h = ag::relu(conv1(x));
        h = conv2(h);
        auto skip = has_proj ? proj(x) : x;
        return ag::relu(ag::add(h, skip));
    }
};

// Four-stage residual classifier for 32x32 inputs ("mini-resnet").
// Stage outputs are exposed as taps "stage1".."stage4".
template <class T>
class MiniResNet {
public:
    MiniResNet() = default;
    MiniResNet(int base_width, int num_classes, std::uint64_t init_seed,
               int in_channels = 3)
        : base_width_(base_width), num_classes_(num_classes) {
        Rng rng(init_seed);
        stem_ = Conv<T>::create(params_, "stem", in_channels, base_width, 3, 1, 1, rng);
        int cin = base_width;
        for (int s = 0; s < 4; ++s) {
            const int cout = base_width << s;
            const int stride = s == 0 ? 1 : 2;
            blocks_.push_back(BasicBlock<T>::create(
                params_, "stage" + std::to_string(s + 1), cin, cout, stride, rng));
            cin = cout;
        }
        head_ = Dense<T>::create(params_, "head", cin, num_classes, rng);
    }

    Var<T> forward(const Var<T>& x, TapMap<T>* taps = nullptr) const {
        auto h = ag::relu(stem_(x));
        for (std::size_t s = 0; s < blocks_.size(); ++s) {
            h = blocks_[s](h);
            if (taps) (*taps)["stage" + std::to_string(s + 1)] = h;
        }
        return head_(ag::global_avg_pool(h));
    }

    std::vector<std::string> tap_names() const {
        return {"stage1", "stage2", "stage3", "stage4"};
    }

    int base_width() const { return base_width_; }
    int num_classes() const { return num_classes_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

private:
    int base_width_ = 0, num_classes_ = 0;
    ParamStore<T> params_;
    Conv<T> stem_;
    std::vector<BasicBlock<T>> blocks_;
    Dense<T> head_;
};

// Full-resolution residual denoiser: stem, `blocks` residual blocks, and a
// projection back to image channels. Output = clamp01(input + correction),
// so the identity map is reachable with a zero final conv.
// Taps "block1".."blockB" expose intermediate activations.
template <class T>
class ResidualDenoiser {
public:
    ResidualDenoiser() = default;
    ResidualDenoiser(int width, int num_blocks, std::uint64_t init_seed,
                     int channels = 3)
        : width_(width), num_blocks_(num_blocks) {
        Rng rng(init_seed);
        stem_ = Conv<T>::create(params_, "stem", channels, width, 3, 1, 1, rng);
        for (int i = 0; i < num_blocks; ++i)
            blocks_.push_back(BasicBlock<T>::create(
                params_, "block" + std::to_string(i + 1), width, width, 1, rng));
        final_ = Conv<T>::create(params_, "final", width, channels, 3, 1, 1, rng);
        // start close to the identity: small correction at init
        for (auto& v : final_.w->value.vec()) v *= T(0.1);
    }

    Var<T> forward(const Var<T>& x, TapMap<T>* taps = nullptr) const {
        auto h = ag::relu(stem_(x));
        for (std::size_t i = 0; i < blocks_.size(); ++i) {
            h = blocks_[i](h);
            if (taps) (*taps)["block" + std::to_string(i + 1)] = h;
        }
        return ag::clamp01(ag::add(x, final_(h)));
    }

    std::vector<std::string> tap_names() const {
        std::vector<std::string> names;
        for (int i = 0; i < num_blocks_; ++i)
            names.push_back("block" + std::to_string(i + 1));
        return names;
    }

    void zero_correction() {
        final_.w->value.fill(T(0));
        final_.b->value.fill(T(0));
    }

    int width() const { return width_; }
    int num_blocks() const { return num_blocks_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }

private:
    int width_ = 0, num_blocks_ = 0;
    ParamStore<T> params_;
    Conv<T> stem_;
    std::vector<BasicBlock<T>> blocks_;
    Conv<T> final_;
};

}  // namespace jatp::nn
