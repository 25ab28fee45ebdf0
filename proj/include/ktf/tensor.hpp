#pragma once

#include <cstdint>
#include <new>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ktf/errors.hpp"

namespace ktf {

// 64-byte-aligned storage so Eigen's vectorized kernels always see the same
// alignment — keeps results bit-identical regardless of allocation history
template <typename T>
struct AlignedAlloc {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAlloc() = default;
    template <typename U>
    AlignedAlloc(const AlignedAlloc<U>&) {}

    T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, size_t) noexcept { ::operator delete(p, kAlign); }

    template <typename U>
    bool operator==(const AlignedAlloc<U>&) const {
        return true;
    }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAlloc<T>>;

inline std::string format_shape(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// Dense row-major tensor. Rank is dynamic; most ops view it as 2-D
// [rows, last-dim].
template <typename T>
struct Tensor {
    std::vector<int64_t> shape;
    AlignedVec<T> v;

    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> s) {
        Tensor t;
        t.shape = std::move(s);
        t.v.assign(static_cast<size_t>(t.count(t.shape)), T{});
        return t;
    }

    static Tensor full(std::vector<int64_t> s, T value) {
        Tensor t = zeros(std::move(s));
        std::fill(t.v.begin(), t.v.end(), value);
        return t;
    }

    static Tensor from(std::vector<int64_t> s, const std::vector<T>& values) {
        if (count(s) != static_cast<int64_t>(values.size()))
            throw ShapeError("tensor init: " + format_shape(s) + " does not hold " +
                             std::to_string(values.size()) + " values");
        Tensor t;
        t.shape = std::move(s);
        t.v.assign(values.begin(), values.end());
        return t;
    }

    static int64_t count(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    int64_t size() const { return static_cast<int64_t>(v.size()); }
    bool empty() const { return v.empty(); }

    int64_t dim(size_t i) const { return shape.at(i); }
    size_t rank() const { return shape.size(); }

    // 2-D view: all leading dims collapsed, last dim kept.
    int64_t cols() const { return shape.empty() ? 0 : shape.back(); }
    int64_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

    void fill(T value) { std::fill(v.begin(), v.end(), value); }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(what) + ": shapes " + format_shape(a.shape) + " vs " +
                         format_shape(b.shape));
}

// Trainable tensor with an accumulated gradient of identical shape.
template <typename S>
struct Parameter {
    std::string name;
    Tensor<S> value;
    Tensor<S> grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor<S> val) : name(std::move(n)), value(std::move(val)) {
        grad = Tensor<S>::zeros(value.shape);
    }

    void zero_grad() { grad.fill(S{0}); }
    int64_t size() const { return value.size(); }
};

}  // namespace ktf
