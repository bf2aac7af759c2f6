#pragma once

#include <cstdint>
#include <vector>

#include "ad/tensor.hpp"
#include "common/rng.hpp"

namespace lld::ad {

// Arithmetic with numpy-style broadcasting over size-1 rows/columns.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor sum(const Tensor& a);            // 1x1
Tensor mean(const Tensor& a);           // 1x1
Tensor sum_rows(const Tensor& a);       // 1 x cols (sum over rows)
Tensor square(const Tensor& a);

Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh approximation
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);

Tensor slice_rows(const Tensor& a, Eigen::Index start, Eigen::Index n);
Tensor slice_cols(const Tensor& a, Eigen::Index start, Eigen::Index n);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor concat_rows(const std::vector<Tensor>& parts);
// out.row(i) = a.row(idx[i]); covers embedding lookup, tiling and reordering.
Tensor gather_rows(const Tensor& a, const std::vector<int>& idx);
// Row-major reinterpretation to rows x cols.
Tensor reshape(const Tensor& a, Eigen::Index rows, Eigen::Index cols);

// a is (G*n) x c in group-major rows; returns G x c of weighted means per group.
// Rows with weight 0 are ignored; a group with zero total weight yields zeros.
Tensor group_mean(const Tensor& a, Eigen::Index n, const std::vector<double>& weights = {});

// Row-wise layer normalization with affine (1 x c) gamma / beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Grouped multi-head scaled dot-product attention.
// q: (G*nq) x d, k: (G*nk) x d, v: (G*nk) x dv, rows group-major.
// key_mask (optional, length G*nk): false keys receive -inf logits.
// A query whose keys are all masked returns a zero row.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, Eigen::Index groups, int heads,
                 const std::vector<bool>& key_mask = {});

// Stacks [x_{t-1}, x_t, x_{t+1}] per row with zero padding at the ends of
// each length-T group: (G*T) x c -> (G*T) x 3c. A following affine map gives
// a kernel-3, stride-1, length-preserving convolution over time.
Tensor shift_stack3(const Tensor& x, Eigen::Index T);

// Damped sinusoid basis: rho, omega are 1 x K; returns h x 2K with
// cosine columns first. Differentiable in rho and omega.
Tensor damped_basis(const Tensor& rho, const Tensor& omega, const std::vector<double>& times);

Tensor dropout(const Tensor& x, double p, Rng& rng);

// sum(mask * (pred - target)^2) / sum(mask); mask is a constant matrix.
Tensor masked_mse(const Tensor& pred, const Mat& target, const Mat& mask);

}  // namespace lld::ad
