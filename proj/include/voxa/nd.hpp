#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxa {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// Dense n-dimensional array, C order. The plain value carrier under every
// differentiable tensor.
template <class T>
struct NdArray {
    std::vector<int> shape;
    std::vector<T> v;

    NdArray() = default;
    explicit NdArray(std::vector<int> s, T fill = T(0))
        : shape(std::move(s)), v(std::size_t(numel_of(shape)), fill) {
        for (int d : shape)
            if (d <= 0) throw ShapeError("non-positive dimension in " + shape_str(shape));
    }
    static NdArray from(std::vector<int> s, std::vector<T> data) {
        NdArray a;
        a.shape = std::move(s);
        a.v = std::move(data);
        if (std::int64_t(a.v.size()) != numel_of(a.shape))
            throw ShapeError("data size does not match shape " + shape_str(a.shape));
        return a;
    }
    static NdArray scalar(T x) {
        NdArray a(std::vector<int>{1});
        a.v[0] = x;
        return a;
    }

    std::int64_t numel() const { return std::int64_t(v.size()); }
    int ndim() const { return int(shape.size()); }
    int dim(int i) const { return shape[std::size_t(i)]; }

    std::vector<std::int64_t> strides() const {
        std::vector<std::int64_t> st(shape.size(), 1);
        for (int i = int(shape.size()) - 2; i >= 0; --i)
            st[std::size_t(i)] = st[std::size_t(i) + 1] * shape[std::size_t(i) + 1];
        return st;
    }

    template <class U>
    NdArray<U> cast() const {
        NdArray<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = U(v[i]);
        return out;
    }
};

template <class T>
void check_same_shape(const NdArray<T>& a, const NdArray<T>& b, const char* what) {
    if (a.shape != b.shape)
        throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
}

}  // namespace voxa
