#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "errors.hpp"

namespace patchedit {

// Dense row-major float tensor. Latents and feature maps are rank 3 [C,H,W];
// the file format accepts any rank, so dims stay dynamic.
//
// Storage is f32. Stepwise diffusion math loads elements into double, evaluates
// the whole per-element expression there and rounds once on store; reductions
// accumulate in double. Keeping that discipline is what makes the tight
// round-trip tolerances in the test suite achievable.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> dims)
        : dims_(std::move(dims)), data_(checked_numel(dims_), 0.0f) {}

    static Tensor zeros(std::vector<std::size_t> dims) { return Tensor(std::move(dims)); }

    static Tensor full(std::vector<std::size_t> dims, float value) {
        Tensor t(std::move(dims));
        for (float& v : t.data_) v = value;
        return t;
    }

    static Tensor zeros_like(const Tensor& other) { return Tensor(other.dims_); }

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t rank() const { return dims_.size(); }
    std::size_t numel() const { return data_.size(); }

    std::size_t dim(std::size_t i) const { return dims_.at(i); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    // Rank-3 accessors; the hot loops index flat instead.
    float& at3(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * dims_[1] + y) * dims_[2] + x];
    }
    float at3(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * dims_[1] + y) * dims_[2] + x];
    }

    bool same_shape(const Tensor& other) const { return dims_ == other.dims_; }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

private:
    static std::size_t checked_numel(const std::vector<std::size_t>& dims) {
        if (dims.empty()) throw dimension_error("tensor rank must be >= 1");
        std::size_t n = 1;
        for (std::size_t d : dims) {
            if (d == 0) throw dimension_error("tensor dims must be positive");
            n *= d;
        }
        return n;
    }

    std::vector<std::size_t> dims_;
    std::vector<float> data_;
};

inline std::string shape_string(const Tensor& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.rank(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.dim(i));
    }
    return s + "]";
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b))
        throw dimension_error(std::string(what) + ": shape mismatch " + shape_string(a) +
                              " vs " + shape_string(b));
}

inline void require_rank3(const Tensor& t, const char* what) {
    if (t.rank() != 3)
        throw dimension_error(std::string(what) + ": expected rank-3 [C,H,W], got " +
                              shape_string(t));
}

// Root-mean-square of elementwise difference, double accumulation.
inline double rms_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "rms_diff");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(a.numel()));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        const double d = std::fabs(static_cast<double>(a[i]) - static_cast<double>(b[i]));
        if (d > m) m = d;
    }
    return m;
}

// Value identity (float ==). Signed zeros compare equal; that is the intended
// notion of "unchanged" for the zero-injection contracts.
inline bool identical(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

} // namespace patchedit
