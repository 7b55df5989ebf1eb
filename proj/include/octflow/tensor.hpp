#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "octflow/errors.hpp"
#include "octflow/rng.hpp"

namespace octflow {

struct Shape4 {
    int n = 0; // batch
    int c = 0; // channels
    int h = 0; // rows
    int w = 0; // columns

    bool operator==(const Shape4&) const = default;

    std::size_t count() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

// Rank-4 array, row-major by (n, c, h, w). T is float in the production path;
// tests instantiate double for finite-difference work.
template <typename T>
class Tensor4 {
public:
    Tensor4() = default;

    Tensor4(int n, int c, int h, int w) : shape_{n, c, h, w} {
        if (n <= 0 || c <= 0 || h <= 0 || w <= 0) {
            throw ShapeError("Tensor4: non-positive dim " + shape_.str());
        }
        data_.assign(shape_.count(), T{0});
    }

    explicit Tensor4(const Shape4& s) : Tensor4(s.n, s.c, s.h, s.w) {}

    const Shape4& shape() const { return shape_; }
    int n() const { return shape_.n; }
    int c() const { return shape_.c; }
    int h() const { return shape_.h; }
    int w() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& at(int in, int ic, int iy, int ix) {
        return data_[index(in, ic, iy, ix)];
    }
    T at(int in, int ic, int iy, int ix) const {
        return data_[index(in, ic, iy, ix)];
    }

    std::size_t index(int in, int ic, int iy, int ix) const {
        return ((static_cast<std::size_t>(in) * shape_.c + ic) * shape_.h + iy) * shape_.w + ix;
    }

    // pointer to the start of row iy of channel ic in sample in
    T* row(int in, int ic, int iy) { return data_.data() + index(in, ic, iy, 0); }
    const T* row(int in, int ic, int iy) const { return data_.data() + index(in, ic, iy, 0); }

    void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

    bool all_finite() const {
        for (T v : data_) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    template <typename U>
    Tensor4<U> cast() const {
        Tensor4<U> out(shape_.n, shape_.c, shape_.h, shape_.w);
        for (std::size_t i = 0; i < data_.size(); ++i) {
            out.vec()[i] = static_cast<U>(data_[i]);
        }
        return out;
    }

private:
    Shape4 shape_{};
    std::vector<T> data_;
};

template <typename T>
void require_same_shape(const Tensor4<T>& a, const Tensor4<T>& b, const char* op) {
    if (!(a.shape() == b.shape())) {
        throw ShapeError(std::string(op) + ": shape mismatch " + a.shape().str() +
                         " vs " + b.shape().str());
    }
}

template <typename T>
Tensor4<T> random_uniform(const Shape4& s, Rng& rng, double lo, double hi) {
    Tensor4<T> out(s);
    for (auto& v : out.vec()) v = static_cast<T>(rng.uniform(lo, hi));
    return out;
}

} // namespace octflow
