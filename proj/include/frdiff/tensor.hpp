#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace frdiff {

/// Dense channels x height x width array, row-major within each channel.
template <typename T>
class Tensor3 {
public:
    using value_type = T;

    Tensor3() = default;
    Tensor3(int channels, int height, int width, T fill = T(0))
        : channels_(channels), height_(height), width_(width) {
        if (channels < 0 || height < 0 || width < 0)
            throw ShapeError(concat("negative tensor dims ", channels, "x", height, "x", width));
        data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
    }

    int channels() const noexcept { return channels_; }
    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(height_) * width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    T& operator()(int c, int y, int x) noexcept { return data_[(c * plane()) + y * width_ + x]; }
    const T& operator()(int c, int y, int x) const noexcept {
        return data_[(c * plane()) + y * width_ + x];
    }
    T& operator[](std::size_t i) noexcept { return data_[i]; }
    const T& operator[](std::size_t i) const noexcept { return data_[i]; }

    T* channel(int c) noexcept { return data_.data() + c * plane(); }
    const T* channel(int c) const noexcept { return data_.data() + c * plane(); }

    std::span<T> values() noexcept { return data_; }
    std::span<const T> values() const noexcept { return data_; }
    std::vector<T>& storage() noexcept { return data_; }
    const std::vector<T>& storage() const noexcept { return data_; }

    bool same_shape(const Tensor3& o) const noexcept {
        return channels_ == o.channels_ && height_ == o.height_ && width_ == o.width_;
    }
    std::string shape_str() const { return concat(channels_, "x", height_, "x", width_); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    Tensor3& operator+=(const Tensor3& o) {
        require_same(o, "+=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
        return *this;
    }
    Tensor3& operator-=(const Tensor3& o) {
        require_same(o, "-=");
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
        return *this;
    }
    Tensor3& operator*=(T s) {
        for (auto& v : data_) v *= s;
        return *this;
    }
    friend Tensor3 operator+(Tensor3 a, const Tensor3& b) { return a += b; }
    friend Tensor3 operator-(Tensor3 a, const Tensor3& b) { return a -= b; }
    friend Tensor3 operator*(Tensor3 a, T s) { return a *= s; }
    friend Tensor3 operator*(T s, Tensor3 a) { return a *= s; }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    template <typename U>
    Tensor3<U> cast() const {
        Tensor3<U> out(channels_, height_, width_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    void require_same(const Tensor3& o, const char* what) const {
        if (!same_shape(o))
            throw ShapeError(concat(what, ": shape mismatch ", shape_str(), " vs ", o.shape_str()));
    }

private:
    int channels_ = 0;
    int height_ = 0;
    int width_ = 0;
    std::vector<T> data_;
};

template <typename T>
T sum(const Tensor3<T>& t) {
    double s = 0.0;
    for (T v : t.values()) s += v;
    return static_cast<T>(s);
}

template <typename T>
T mean(const Tensor3<T>& t) {
    return t.empty() ? T(0) : static_cast<T>(static_cast<double>(sum(t)) / t.size());
}

template <typename T>
T max_abs_diff(const Tensor3<T>& a, const Tensor3<T>& b) {
    a.require_same(b, "max_abs_diff");
    T m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// Concatenate along the channel axis.
template <typename T>
Tensor3<T> concat_channels(const Tensor3<T>& a, const Tensor3<T>& b) {
    if (a.height() != b.height() || a.width() != b.width())
        throw ShapeError(concat("concat_channels: ", a.shape_str(), " vs ", b.shape_str()));
    Tensor3<T> out(a.channels() + b.channels(), a.height(), a.width());
    std::copy(a.values().begin(), a.values().end(), out.values().begin());
    std::copy(b.values().begin(), b.values().end(), out.values().begin() + a.size());
    return out;
}

template <typename T>
std::pair<Tensor3<T>, Tensor3<T>> split_channels(const Tensor3<T>& t, int first) {
    Tensor3<T> a(first, t.height(), t.width());
    Tensor3<T> b(t.channels() - first, t.height(), t.width());
    std::copy(t.values().begin(), t.values().begin() + a.size(), a.values().begin());
    std::copy(t.values().begin() + a.size(), t.values().end(), b.values().begin());
    return {std::move(a), std::move(b)};
}

/// Learnable parameter with its gradient accumulator.
template <typename T>
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;

    Param() = default;
    Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
        std::size_t count = 1;
        for (int d : shape) count *= static_cast<std::size_t>(d);
        value.assign(count, T(0));
        grad.assign(count, T(0));
    }

    std::size_t size() const noexcept { return value.size(); }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

/// Non-owning list of a model's parameters, in a fixed registration order.
template <typename T>
using ParamList = std::vector<Param<T>*>;

template <typename T>
void zero_grads(const ParamList<T>& params) {
    for (auto* p : params) p->zero_grad();
}

/// Copies values between two parameter lists of identical layout (e.g. float <-> double).
template <typename Dst, typename Src>
void copy_values(const ParamList<Dst>& dst, const ParamList<Src>& src) {
    if (dst.size() != src.size()) throw ShapeError("copy_values: parameter count mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i]->shape != src[i]->shape || dst[i]->name != src[i]->name)
            throw ShapeError(concat("copy_values: layout mismatch at ", dst[i]->name));
        for (std::size_t k = 0; k < src[i]->size(); ++k)
            dst[i]->value[k] = static_cast<Dst>(src[i]->value[k]);
    }
}

/// Seeded engine shared by every stochastic component; callers own and advance it.
using Rng = std::mt19937_64;

template <typename T>
void fill_normal(Tensor3<T>& t, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

template <typename T>
Tensor3<T> normal_like(const Tensor3<T>& shape, Rng& rng) {
    Tensor3<T> t(shape.channels(), shape.height(), shape.width());
    fill_normal(t, rng);
    return t;
}

template <typename T>
void fill_uniform(Tensor3<T>& t, Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (auto& v : t.values()) v = static_cast<T>(dist(rng));
}

} // namespace frdiff
