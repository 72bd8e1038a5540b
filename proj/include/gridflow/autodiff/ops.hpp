#pragma once

#include <span>
#include <vector>

#include "gridflow/autodiff/tensor.hpp"

// Differentiable operators. Every op validates shapes and throws
// std::invalid_argument naming both offending shapes. Index arguments are
// copied into the recorded backward rule; -1 in a gather index stands for a
// zero row.
namespace gridflow::ad {

template <typename Real> using T = Tensor<Real>;
using Index = std::span<const int>;

// Dense algebra.
template <typename Real> T<Real> matmul(const T<Real>& a, const T<Real>& b);
template <typename Real> T<Real> matmul_nt(const T<Real>& a, const T<Real>& b);  // a * b^T
template <typename Real> T<Real> transpose(const T<Real>& a);

// Elementwise; `add` also accepts a scalar right operand.
template <typename Real> T<Real> add(const T<Real>& a, const T<Real>& b);
template <typename Real> T<Real> sub(const T<Real>& a, const T<Real>& b);
template <typename Real> T<Real> mul(const T<Real>& a, const T<Real>& b);
/// Adds a length-c vector to every row of an r x c matrix.
template <typename Real> T<Real> add_row(const T<Real>& a, const T<Real>& row);
/// Scales row i of `a` by s[i]; `s` has one entry per row.
template <typename Real> T<Real> mul_col(const T<Real>& a, const T<Real>& s);
/// Multiplies every entry of `a` by the rank-0 tensor `s`.
template <typename Real> T<Real> broadcast_scalar_mul(const T<Real>& a, const T<Real>& s);
template <typename Real> T<Real> scale(const T<Real>& a, Real c);

template <typename Real> T<Real> tanh(const T<Real>& a);
template <typename Real> T<Real> sigmoid(const T<Real>& a);
template <typename Real> T<Real> leaky_relu(const T<Real>& a, Real slope);
template <typename Real> T<Real> exp(const T<Real>& a);
/// log(max(a, floor)); entries below the floor receive zero gradient.
template <typename Real> T<Real> log(const T<Real>& a, Real floor = Real(1e-12));

// Shape manipulation.
template <typename Real> T<Real> concat_cols(const std::vector<T<Real>>& parts);
template <typename Real> T<Real> concat_rows(const std::vector<T<Real>>& parts);
template <typename Real> T<Real> slice_cols(const T<Real>& a, Eigen::Index begin, Eigen::Index width);
template <typename Real> T<Real> reshape(const T<Real>& a, Eigen::Index rows, Eigen::Index cols, int rank = 2);

// Reductions and products.
template <typename Real> T<Real> sum(const T<Real>& a);
template <typename Real> T<Real> mean(const T<Real>& a);
template <typename Real> T<Real> inner_product(const T<Real>& a, const T<Real>& b);
/// Per-row dot product of two equally shaped matrices; result has one entry per row.
template <typename Real> T<Real> row_dot(const T<Real>& a, const T<Real>& b);
template <typename Real> T<Real> outer_product(const T<Real>& u, const T<Real>& v);

// Normalizations (max-shifted).
template <typename Real> T<Real> softmax(const T<Real>& v);
template <typename Real> T<Real> softmax_rows(const T<Real>& a);
/// Softmax over the rows sharing a segment id, independently per column.
template <typename Real> T<Real> segment_softmax(const T<Real>& a, Index segment, Eigen::Index num_segments);

// Sparse graph plumbing. Rows with segment -1 are dropped by segment_sum.
template <typename Real> T<Real> segment_sum(const T<Real>& a, Index segment, Eigen::Index num_segments);
template <typename Real> T<Real> gather_rows(const T<Real>& a, Index rows);
/// Vector of a(rows[k], cols[k]); a row index of -1 yields 0.
template <typename Real> T<Real> pick(const T<Real>& a, Index rows, Index cols);

/// Typed edge features: out[k] = sum_i inputs[i](rows[i][k], offset[k] : offset[k] + width)
/// plus bias(bias_row[k], :) when a bias table is given.
template <typename Real>
T<Real> edge_linear(const std::vector<T<Real>>& inputs, const std::vector<std::vector<int>>& rows,
                    Index offset, Eigen::Index width, const T<Real>* bias, Index bias_row);

/// out[k] = <a(ra[k], offset[k] : offset[k] + d), b(rb[k], :)> with d = b.cols().
template <typename Real> T<Real> edge_bilinear(const T<Real>& a, const T<Real>& b, Index ra, Index rb, Index offset);

/// Typed edge messages summed per receiver in one pass:
///   out[receiver[k]] += act(s_k * (g(rows[k], offset[k] : offset[k] + w) + bias(bias_row[k], :)) + post)
/// with w = bias.cols(), s_k = scale[scale_index[k]] (0 for index -1, 1 without a
/// scale tensor), post = post_bias or 0, and act = tanh or identity.
template <typename Real>
T<Real> edge_message(const T<Real>& g, Index rows, Index offset, const T<Real>& bias, Index bias_row,
                     const T<Real>* scale, Index scale_index, const T<Real>* post_bias, bool tanh_act,
                     Index receiver, Eigen::Index num_receivers);

/// Transition logits of typed edges in one pass:
///   out[k] = <g(ra[k], offset[k] : offset[k] + d), h(rb[k], :)> + g(ra[k], col_a[k]) + g(rb[k], col_b[k])
///            + bias[bias_row[k]]
/// with d = h.cols() and bias a vector.
template <typename Real>
T<Real> edge_score(const T<Real>& g, const T<Real>& h, Index ra, Index rb, Index offset, Index col_a, Index col_b,
                   const T<Real>& bias, Index bias_row);

/// Per-head dot products: z is E x (K*w), heads is K x w, out is E x K.
template <typename Real> T<Real> head_dot(const T<Real>& z, const T<Real>& heads);
/// Scales each head block of z (E x K*w) by alpha (E x K).
template <typename Real> T<Real> head_scale(const T<Real>& z, const T<Real>& alpha);

/// Fused GRU update. `pre_x` (R x 3d) holds the input projections plus biases
/// in [reset : update : candidate] order; h is R x d; wh_rz is d x 2d and
/// wh_h is d x d (right-multiplied).
template <typename Real>
T<Real> gru_cell(const T<Real>& pre_x, const T<Real>& h, const T<Real>& wh_rz, const T<Real>& wh_h);

}  // namespace gridflow::ad
