#pragma once

#include <cstdint>
#include <vector>

#include "amplify/tensor.hpp"

namespace amplify {

enum class EwiseOp { Add, Sub, Mul };

/// Batched matrix product. Both operands must have >= 2 dims; trailing two
/// dims are the matrices, leading dims are batch dims broadcast against each
/// other (missing or size-1 dims expand).
Tensor matmul(const Tensor& a, const Tensor& b);

/// Pointwise op on equal shapes. No implicit broadcasting.
Tensor elementwise(const Tensor& a, const Tensor& b, EwiseOp op);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

/// c * a for a scalar constant.
Tensor scale(const Tensor& a, Real c);

/// Softmax along `axis`, stabilized by max subtraction.
Tensor softmax(const Tensor& a, int axis);

/// Layer normalization over the last axis (population variance), then
/// elementwise affine with gain and bias of that axis length.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  Real eps = Real(1e-5));

/// Mean over rows of -log softmax(logits)[target]. logits is [l x N],
/// targets holds l class indices in [0, N).
Tensor cross_entropy_logits(const Tensor& logits,
                            const std::vector<int32_t>& targets);

/// Mean over rows of -sum_c y[c] * log softmax(logits)[c] for dense target
/// rows y. Rows are taken as given; normalization checks live with callers.
Tensor cross_entropy_soft(const Tensor& logits, const Tensor& y);

/// Sum of all elements, as a scalar.
Tensor sum(const Tensor& a);

Tensor reshape(const Tensor& a, Shape new_shape);

/// Permute axes: out index (i_perm[0], ..) reads a at (i_0, ..).
Tensor transpose(const Tensor& a, const std::vector<size_t>& perm);

/// Gather along the leading axis: row i of the result is row index[i] of a.
Tensor reorder_rows(const Tensor& a, const std::vector<size_t>& index);

/// x[:, pos, :] for a rank-3 input; drops the middle axis.
Tensor select_axis1(const Tensor& x, size_t pos);

/// x + bias where bias has the length of x's last axis.
Tensor add_rowwise(const Tensor& x, const Tensor& bias);

/// x[b] + rows for every leading index b; rows matches x's trailing dims.
Tensor add_broadcast_rows(const Tensor& x, const Tensor& rows);

/// Contiguous row slice [start, start+count) of a rank-2 tensor.
Tensor slice_rows(const Tensor& a, size_t start, size_t count);

/// Gather table rows by id: table is [V x D], ids is rows*cols indices,
/// result is [rows x cols x D]. Out-of-range ids raise std::out_of_range.
Tensor embedding_lookup(const Tensor& table, const std::vector<int32_t>& ids,
                        size_t rows, size_t cols);

/// Adds mask[b, k] to scores[b, h, q, k]. The mask is plain data (no
/// gradient); used for additive pre-softmax key masking.
Tensor add_key_mask(const Tensor& scores, const Tensor& mask);

/// Exact GELU, x * Phi(x).
Tensor gelu(const Tensor& x);

/// Inverted dropout. Identity when disabled or p == 0; otherwise each
/// element is zeroed with probability p and survivors are scaled by 1/(1-p).
Tensor dropout(const Tensor& x, double p, Rng& rng, bool enabled);

}  // namespace amplify
