#pragma once

#include "numkit/tensor.hpp"

namespace numkit {

// Elementwise; shapes must match.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

// c = a[m x k] * b[k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// c = a[m x k] * b[n x k]^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// out[i] = table[ids[i]], row gather; backward scatter-adds.
Tensor gather_rows(const Tensor& table, const std::vector<int>& ids);

Tensor slice_cols(const Tensor& x, int c0, int c1);
Tensor slice_rows(const Tensor& x, int r0, int r1);
Tensor concat_cols(const std::vector<Tensor>& parts);

// Same elements, new shape.
Tensor reshape(const Tensor& x, const Shape& shape);

// Row-wise softmax over the last dimension, max-subtracted.
Tensor softmax(const Tensor& x);
Tensor log_softmax(const Tensor& x);
// softmax over j <= i for square score matrices; entries above the
// diagonal are exactly zero.
Tensor causal_masked_softmax(const Tensor& scores);

Tensor gelu(const Tensor& x);  // tanh approximation

// y = gain * (x - mean) / sqrt(var + eps) + bias, per row.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Mean over rows of -log softmax(logits)[row, target[row]].
Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets);

namespace detail {
// Raw row-major kernels; acc selects accumulate-into vs overwrite.
void mm(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
void mm_tn(const double* a, const double* b, double* c, int m, int k, int n, bool acc);
}  // namespace detail

}  // namespace numkit
