#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "geofuse/errors.hpp"

namespace geofuse {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

// Dense row-major n-d value buffer. Storage is fp32 in the real path and
// fp64 in the gradient-check path (see TapeT).
template <typename T>
struct TensorT {
    Shape shape;
    std::vector<T> v;

    TensorT() = default;
    explicit TensorT(Shape s, T fill = T(0)) : shape(std::move(s)), v(::geofuse::numel(shape), fill) {}
    TensorT(Shape s, std::vector<T> values) : shape(std::move(s)), v(std::move(values)) {
        require(static_cast<int64_t>(v.size()) == ::geofuse::numel(shape),
                "tensor value count ", v.size(), " does not match shape ", shape_str(shape));
    }

    int64_t numel() const { return static_cast<int64_t>(v.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& at(int64_t i) { return v[static_cast<size_t>(i)]; }
    T at(int64_t i) const { return v[static_cast<size_t>(i)]; }

    // flat index for a 4-d tensor
    int64_t idx4(int b, int c, int h, int w) const {
        return ((static_cast<int64_t>(b) * shape[1] + c) * shape[2] + h) * shape[3] + w;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(shape);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Named learnable parameter with its gradient accumulator.
template <typename T>
struct ParamT {
    std::string name;
    TensorT<T> value;
    TensorT<T> grad;

    ParamT() = default;
    ParamT(std::string n, TensorT<T> val)
        : name(std::move(n)), value(std::move(val)), grad(value.shape) {}

    void zero_grad() { std::fill(grad.v.begin(), grad.v.end(), T(0)); }
};

using Param = ParamT<float>;

}  // namespace geofuse
