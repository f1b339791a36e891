#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "longct/common.hpp"

namespace longct {

/// Dense NCHW tensor.
template <typename T>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {}

    int64_t numel() const { return static_cast<int64_t>(n) * c * h * w; }
    int64_t plane() const { return static_cast<int64_t>(h) * w; }

    T* sample(int in) { return v.data() + static_cast<size_t>(in) * c * plane(); }
    const T* sample(int in) const {
        return v.data() + static_cast<size_t>(in) * c * plane();
    }
    T* channel(int in, int ic) {
        return v.data() + (static_cast<size_t>(in) * c + ic) * plane();
    }
    const T* channel(int in, int ic) const {
        return v.data() + (static_cast<size_t>(in) * c + ic) * plane();
    }

    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    void fill(T value) { std::fill(v.begin(), v.end(), value); }

    std::string shape_str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

namespace nn_detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using MapC = Eigen::Map<const MatRM<T>>;

/// C = A(M,K) * B(K,N); row-major contiguous. accumulate adds into C.
template <typename T>
void gemm_nn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    MapC<T> A(a, m, k);
    MapC<T> B(b, k, n);
    MapM<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

/// C = A^T(K,M) * B(K,N).
template <typename T>
void gemm_tn(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    MapC<T> A(a, k, m);
    MapC<T> B(b, k, n);
    MapM<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

/// C = A(M,K) * B^T(N,K).
template <typename T>
void gemm_nt(int m, int n, int k, const T* a, const T* b, T* c, bool accumulate) {
    MapC<T> A(a, m, k);
    MapC<T> B(b, n, k);
    MapM<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

}  // namespace nn_detail

}  // namespace longct
