#pragma once

#include <cstddef>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "jatp/errors.hpp"
#include "jatp/rng.hpp"

namespace jatp {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= std::size_t(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Dense row-major tensor. Scalar type is a template parameter: float for
// training and evaluation, double inside gradient-check tests.
template <class T>
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
    Tensor(Shape shape, std::vector<T> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw ArgumentError("tensor data size does not match shape " +
                                shape_str(shape_));
    }

    const Shape& shape() const { return shape_; }
    int dim(int i) const { return shape_[std::size_t(i)]; }
    int rank() const { return int(shape_.size()); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    T operator[](std::size_t i) const { return data_[i]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != size())
            throw ArgumentError("reshape " + shape_str(shape_) + " -> " +
                                shape_str(s) + " changes element count");
        Tensor out;
        out.shape_ = std::move(s);
        out.data_ = data_;
        return out;
    }

    template <class U>
    Tensor<U> cast() const {
        Tensor<U> out(shape_);
        for (std::size_t i = 0; i < size(); ++i) out[i] = U(data_[i]);
        return out;
    }

    static Tensor zeros_like(const Tensor& o) { return Tensor(o.shape_); }

    static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
        Tensor out(std::move(shape));
        for (auto& v : out.data_) v = T(rng.normal()) * stddev;
        return out;
    }

    static Tensor uniform(Shape shape, Rng& rng, T lo, T hi) {
        Tensor out(std::move(shape));
        for (auto& v : out.data_) v = T(rng.uniform(double(lo), double(hi)));
        return out;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

template <class T>
std::uint64_t tensor_digest(const Tensor<T>& t, std::uint64_t h = 14695981039346656037ull) {
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(t.data()),
                                    t.size() * sizeof(T)),
                   h);
}

}  // namespace jatp
