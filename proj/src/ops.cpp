#include "amplify/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace amplify {

namespace {

using detail::Node;

constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kInvSqrt2Pi = 0.3989422804014327;

// C += A * B with A [m x k], B [k x n], C [m x n], all row-major.
void gemm_acc(const Real* a, const Real* b, Real* c, size_t m, size_t k,
              size_t n) {
  for (size_t i = 0; i < m; ++i) {
    const Real* a_row = a + i * k;
    Real* c_row = c + i * n;
    for (size_t p = 0; p < k; ++p) {
      const Real av = a_row[p];
      const Real* b_row = b + p * n;
      for (size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
  }
}

std::vector<Real> transposed(const Real* a, size_t r, size_t c) {
  std::vector<Real> t(r * c);
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) t[j * r + i] = a[i * c + j];
  return t;
}

// Broadcast batch shapes (all dims but the trailing two of a matmul).
struct BatchMap {
  Shape out;                    // broadcast batch shape
  std::vector<size_t> strides;  // odometer strides into a flat batch index
};

Shape broadcast_batch(const Shape& a, const Shape& b, const char* what) {
  Shape out(std::max(a.size(), b.size()), 1);
  for (size_t i = 0; i < out.size(); ++i) {
    size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1)
      throw DimensionError(std::string(what) + ": batch dims not broadcastable (" +
                           shape_str(a) + " vs " + shape_str(b) + ")");
    out[out.size() - 1 - i] = std::max(da, db);
  }
  return out;
}

// Strides that map a coordinate in `out` to a flat index into a tensor of
// batch shape `own` (0 stride where `own` is broadcast).
std::vector<size_t> batch_strides(const Shape& out, const Shape& own) {
  std::vector<size_t> strides(out.size(), 0);
  size_t stride = 1;
  for (size_t i = 0; i < out.size(); ++i) {
    size_t d = out.size() - 1 - i;
    size_t own_dim = i < own.size() ? own[own.size() - 1 - i] : 1;
    if (own_dim != 1) {
      strides[d] = stride;
      stride *= own_dim;
    }
  }
  return strides;
}

size_t map_batch(size_t flat, const Shape& out, const std::vector<size_t>& strides) {
  size_t idx = 0;
  for (size_t i = out.size(); i-- > 0;) {
    size_t coord = flat % out[i];
    flat /= out[i];
    idx += coord * strides[i];
  }
  return idx;
}

bool needs_grad(const Tensor& a) { return a.requires_grad(); }
bool needs_grad(const Tensor& a, const Tensor& b) {
  return a.requires_grad() || b.requires_grad();
}

void attach(Tensor& out, std::vector<std::shared_ptr<Node>> parents,
            std::function<void()> backward_fn) {
  auto node = out.node();
  node->requires_grad = true;
  node->parents = std::move(parents);
  node->backward_fn = std::move(backward_fn);
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() < 2 || b.ndim() < 2)
    throw DimensionError("matmul: operands must have >= 2 dims, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const size_t m = a.shape()[a.ndim() - 2];
  const size_t k = a.shape()[a.ndim() - 1];
  const size_t kb = b.shape()[b.ndim() - 2];
  const size_t n = b.shape()[b.ndim() - 1];
  if (k != kb)
    throw DimensionError("matmul: inner dims disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));

  Shape a_batch(a.shape().begin(), a.shape().end() - 2);
  Shape b_batch(b.shape().begin(), b.shape().end() - 2);
  Shape batch = broadcast_batch(a_batch, b_batch, "matmul");
  auto a_strides = batch_strides(batch, a_batch);
  auto b_strides = batch_strides(batch, b_batch);
  const size_t n_batch = shape_numel(batch);

  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  std::vector<Real> out_data(n_batch * m * n, Real(0));
  const Real* a_data = a.data().data();
  const Real* b_data = b.data().data();
  for (size_t ib = 0; ib < n_batch; ++ib) {
    const size_t ia = map_batch(ib, batch, a_strides);
    const size_t jb = map_batch(ib, batch, b_strides);
    gemm_acc(a_data + ia * m * k, b_data + jb * k * n, out_data.data() + ib * m * n,
             m, k, n);
  }

  Tensor out = make_tensor(std::move(out_shape), std::move(out_data));
  if (needs_grad(a, b)) {
    auto an = a.node();
    auto bn = b.node();
    Node* self = out.node().get();
    attach(out, {an, bn},
           [an, bn, self, m, k, n, batch, a_strides, b_strides, n_batch]() {
             const Real* g = self->grad.data();
             if (an->requires_grad) {
               Real* da = an->grad_data();
               for (size_t ib = 0; ib < n_batch; ++ib) {
                 const size_t ia = map_batch(ib, batch, a_strides);
                 const size_t jb = map_batch(ib, batch, b_strides);
                 auto bt = transposed(bn->data.data() + jb * k * n, k, n);
                 gemm_acc(g + ib * m * n, bt.data(), da + ia * m * k, m, n, k);
               }
             }
             if (bn->requires_grad) {
               Real* db = bn->grad_data();
               for (size_t ib = 0; ib < n_batch; ++ib) {
                 const size_t ia = map_batch(ib, batch, a_strides);
                 const size_t jb = map_batch(ib, batch, b_strides);
                 auto at = transposed(an->data.data() + ia * m * k, m, k);
                 gemm_acc(at.data(), g + ib * m * n, db + jb * k * n, k, m, n);
               }
             }
           });
  }
  return out;
}

Tensor elementwise(const Tensor& a, const Tensor& b, EwiseOp op) {
  if (a.shape() != b.shape())
    throw DimensionError("elementwise: shape mismatch, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  const size_t n = a.size();
  std::vector<Real> out_data(n);
  const Real* pa = a.data().data();
  const Real* pb = b.data().data();
  switch (op) {
    case EwiseOp::Add:
      for (size_t i = 0; i < n; ++i) out_data[i] = pa[i] + pb[i];
      break;
    case EwiseOp::Sub:
      for (size_t i = 0; i < n; ++i) out_data[i] = pa[i] - pb[i];
      break;
    case EwiseOp::Mul:
      for (size_t i = 0; i < n; ++i) out_data[i] = pa[i] * pb[i];
      break;
  }
  Tensor out = make_tensor(a.shape(), std::move(out_data));
  if (needs_grad(a, b)) {
    auto an = a.node();
    auto bn = b.node();
    Node* self = out.node().get();
    attach(out, {an, bn}, [an, bn, self, op, n]() {
      const Real* g = self->grad.data();
      if (an->requires_grad) {
        Real* da = an->grad_data();
        if (op == EwiseOp::Mul) {
          const Real* pb = bn->data.data();
          for (size_t i = 0; i < n; ++i) da[i] += g[i] * pb[i];
        } else {
          for (size_t i = 0; i < n; ++i) da[i] += g[i];
        }
      }
      if (bn->requires_grad) {
        Real* db = bn->grad_data();
        switch (op) {
          case EwiseOp::Add:
            for (size_t i = 0; i < n; ++i) db[i] += g[i];
            break;
          case EwiseOp::Sub:
            for (size_t i = 0; i < n; ++i) db[i] -= g[i];
            break;
          case EwiseOp::Mul: {
            const Real* pa = an->data.data();
            for (size_t i = 0; i < n; ++i) db[i] += g[i] * pa[i];
            break;
          }
        }
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwiseOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwiseOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(a, b, EwiseOp::Mul); }

Tensor scale(const Tensor& a, Real c) {
  const size_t n = a.size();
  std::vector<Real> out_data(n);
  const Real* pa = a.data().data();
  for (size_t i = 0; i < n; ++i) out_data[i] = c * pa[i];
  Tensor out = make_tensor(a.shape(), std::move(out_data));
  if (needs_grad(a)) {
    auto an = a.node();
    Node* self = out.node().get();
    attach(out, {an}, [an, self, c, n]() {
      Real* da = an->grad_data();
      const Real* g = self->grad.data();
      for (size_t i = 0; i < n; ++i) da[i] += c * g[i];
    });
  }
  return out;
}

Tensor softmax(const Tensor& a, int axis) {
  const int nd = static_cast<int>(a.ndim());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd)
    throw std::out_of_range("softmax: axis " + std::to_string(axis) +
                            " out of range for shape " + shape_str(a.shape()));
  size_t outer = 1, inner = 1;
  const size_t len = a.shape()[axis];
  for (int d = 0; d < axis; ++d) outer *= a.shape()[d];
  for (int d = axis + 1; d < nd; ++d) inner *= a.shape()[d];

  std::vector<Real> out_data(a.size());
  const Real* pa = a.data().data();
  for (size_t o = 0; o < outer; ++o) {
    for (size_t in = 0; in < inner; ++in) {
      const size_t base = o * len * inner + in;
      Real max = pa[base];
      for (size_t j = 1; j < len; ++j)
        max = std::max(max, pa[base + j * inner]);
      Real total = Real(0);
      for (size_t j = 0; j < len; ++j) {
        Real e = std::exp(pa[base + j * inner] - max);
        out_data[base + j * inner] = e;
        total += e;
      }
      for (size_t j = 0; j < len; ++j) out_data[base + j * inner] /= total;
    }
  }

  Tensor out = make_tensor(a.shape(), std::move(out_data));
  if (needs_grad(a)) {
    auto an = a.node();
    Node* self = out.node().get();
    attach(out, {an}, [an, self, outer, len, inner]() {
      Real* da = an->grad_data();
      const Real* g = self->grad.data();
      const Real* s = self->data.data();
      for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
          const size_t base = o * len * inner + in;
          Real dot = Real(0);
          for (size_t j = 0; j < len; ++j)
            dot += g[base + j * inner] * s[base + j * inner];
          for (size_t j = 0; j < len; ++j) {
            const size_t idx = base + j * inner;
            da[idx] += s[idx] * (g[idx] - dot);
          }
        }
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  if (x.ndim() < 1)
    throw DimensionError("layer_norm: input must have >= 1 dim");
  const size_t d = x.shape().back();
  if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
    throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) +
                         "], got " + shape_str(gain.shape()) + " and " +
                         shape_str(bias.shape()));
  if (eps <= Real(0)) throw std::invalid_argument("layer_norm: eps must be > 0");

  const size_t rows = x.size() / d;
  std::vector<Real> out_data(x.size());
  std::vector<Real> inv_std(rows), mean(rows);
  const Real* px = x.data().data();
  const Real* pg = gain.data().data();
  const Real* pb = bias.data().data();
  for (size_t r = 0; r < rows; ++r) {
    const Real* row = px + r * d;
    Real mu = Real(0);
    for (size_t i = 0; i < d; ++i) mu += row[i];
    mu /= Real(d);
    Real var = Real(0);
    for (size_t i = 0; i < d; ++i) {
      Real c = row[i] - mu;
      var += c * c;
    }
    var /= Real(d);
    const Real inv = Real(1) / std::sqrt(var + eps);
    mean[r] = mu;
    inv_std[r] = inv;
    Real* orow = out_data.data() + r * d;
    for (size_t i = 0; i < d; ++i) orow[i] = pg[i] * (row[i] - mu) * inv + pb[i];
  }

  Tensor out = make_tensor(x.shape(), std::move(out_data));
  if (needs_grad(x) || gain.requires_grad() || bias.requires_grad()) {
    auto xn = x.node();
    auto gn = gain.node();
    auto bn = bias.node();
    Node* self = out.node().get();
    attach(out, {xn, gn, bn},
           [xn, gn, bn, self, rows, d, mean = std::move(mean),
            inv_std = std::move(inv_std)]() {
             const Real* g = self->grad.data();
             const Real* px = xn->data.data();
             const Real* pg = gn->data.data();
             Real* dx = xn->requires_grad ? xn->grad_data() : nullptr;
             Real* dgain = gn->requires_grad ? gn->grad_data() : nullptr;
             Real* dbias = bn->requires_grad ? bn->grad_data() : nullptr;
             std::vector<Real> xhat(d), dxhat(d);
             for (size_t r = 0; r < rows; ++r) {
               const Real* row = px + r * d;
               const Real* grow = g + r * d;
               const Real inv = inv_std[r];
               const Real mu = mean[r];
               for (size_t i = 0; i < d; ++i) xhat[i] = (row[i] - mu) * inv;
               if (dgain)
                 for (size_t i = 0; i < d; ++i) dgain[i] += grow[i] * xhat[i];
               if (dbias)
                 for (size_t i = 0; i < d; ++i) dbias[i] += grow[i];
               if (dx) {
                 Real sum_dxhat = Real(0), sum_dxhat_xhat = Real(0);
                 for (size_t i = 0; i < d; ++i) {
                   dxhat[i] = grow[i] * pg[i];
                   sum_dxhat += dxhat[i];
                   sum_dxhat_xhat += dxhat[i] * xhat[i];
                 }
                 const Real inv_d = Real(1) / Real(d);
                 Real* drow = dx + r * d;
                 for (size_t i = 0; i < d; ++i)
                   drow[i] += inv * (dxhat[i] - sum_dxhat * inv_d -
                                     xhat[i] * sum_dxhat_xhat * inv_d);
               }
             }
           });
  }
  return out;
}

namespace {

// Row softmax probabilities plus per-row log-sum-exp, stabilized.
void row_softmax(const Real* z, size_t rows, size_t cols, std::vector<Real>& probs,
                 std::vector<Real>& lse) {
  probs.resize(rows * cols);
  lse.resize(rows);
  for (size_t r = 0; r < rows; ++r) {
    const Real* row = z + r * cols;
    Real max = row[0];
    for (size_t c = 1; c < cols; ++c) max = std::max(max, row[c]);
    Real total = Real(0);
    for (size_t c = 0; c < cols; ++c) {
      Real e = std::exp(row[c] - max);
      probs[r * cols + c] = e;
      total += e;
    }
    for (size_t c = 0; c < cols; ++c) probs[r * cols + c] /= total;
    lse[r] = max + std::log(total);
  }
}

}  // namespace

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int32_t>& targets) {
  if (logits.ndim() != 2)
    throw DimensionError("cross_entropy_logits: logits must be rank 2, got " +
                         shape_str(logits.shape()));
  const size_t rows = logits.shape()[0];
  const size_t cols = logits.shape()[1];
  if (targets.size() != rows)
    throw DimensionError("cross_entropy_logits: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(rows) + " rows");
  for (size_t r = 0; r < rows; ++r)
    if (targets[r] < 0 || static_cast<size_t>(targets[r]) >= cols)
      throw std::out_of_range("cross_entropy_logits: target " +
                              std::to_string(targets[r]) + " at row " +
                              std::to_string(r) + " outside [0, " +
                              std::to_string(cols) + ")");

  std::vector<Real> probs, lse;
  row_softmax(logits.data().data(), rows, cols, probs, lse);
  Real loss = Real(0);
  const Real* z = logits.data().data();
  for (size_t r = 0; r < rows; ++r)
    loss += lse[r] - z[r * cols + targets[r]];
  loss /= Real(rows);

  Tensor out = Tensor::scalar(loss);
  if (needs_grad(logits)) {
    auto zn = logits.node();
    Node* self = out.node().get();
    attach(out, {zn}, [zn, self, rows, cols, targets, probs = std::move(probs)]() {
      const Real g = self->grad[0];
      Real* dz = zn->grad_data();
      const Real inv_rows = Real(1) / Real(rows);
      for (size_t r = 0; r < rows; ++r) {
        for (size_t c = 0; c < cols; ++c) {
          Real p = probs[r * cols + c];
          Real onehot = (static_cast<size_t>(targets[r]) == c) ? Real(1) : Real(0);
          dz[r * cols + c] += g * (p - onehot) * inv_rows;
        }
      }
    });
  }
  return out;
}

Tensor cross_entropy_soft(const Tensor& logits, const Tensor& y) {
  if (logits.ndim() != 2 || y.shape() != logits.shape())
    throw DimensionError("cross_entropy_soft: logits " + shape_str(logits.shape()) +
                         " and targets " + shape_str(y.shape()) + " must match rank-2");
  const size_t rows = logits.shape()[0];
  const size_t cols = logits.shape()[1];

  std::vector<Real> probs, lse;
  row_softmax(logits.data().data(), rows, cols, probs, lse);
  const Real* z = logits.data().data();
  const Real* py = y.data().data();
  Real loss = Real(0);
  std::vector<Real> ysum(rows, Real(0));
  for (size_t r = 0; r < rows; ++r) {
    for (size_t c = 0; c < cols; ++c) {
      const Real yv = py[r * cols + c];
      ysum[r] += yv;
      loss -= yv * (z[r * cols + c] - lse[r]);
    }
  }
  loss /= Real(rows);

  Tensor out = Tensor::scalar(loss);
  if (needs_grad(logits) || y.requires_grad()) {
    auto zn = logits.node();
    auto yn = y.node();
    Node* self = out.node().get();
    attach(out, {zn, yn},
           [zn, yn, self, rows, cols, probs = std::move(probs),
            lse = std::move(lse), ysum = std::move(ysum)]() {
             const Real g = self->grad[0];
             const Real inv_rows = Real(1) / Real(rows);
             if (zn->requires_grad) {
               Real* dz = zn->grad_data();
               const Real* py = yn->data.data();
               for (size_t r = 0; r < rows; ++r)
                 for (size_t c = 0; c < cols; ++c)
                   dz[r * cols + c] += g * inv_rows *
                                       (probs[r * cols + c] * ysum[r] -
                                        py[r * cols + c]);
             }
             if (yn->requires_grad) {
               Real* dy = yn->grad_data();
               const Real* z = zn->data.data();
               for (size_t r = 0; r < rows; ++r)
                 for (size_t c = 0; c < cols; ++c)
                   dy[r * cols + c] -= g * inv_rows * (z[r * cols + c] - lse[r]);
             }
           });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Real total = Real(0);
  for (Real v : a.data()) total += v;
  Tensor out = Tensor::scalar(total);
  if (needs_grad(a)) {
    auto an = a.node();
    Node* self = out.node().get();
    attach(out, {an}, [an, self]() {
      const Real g = self->grad[0];
      Real* da = an->grad_data();
      for (size_t i = 0; i < an->data.size(); ++i) da[i] += g;
    });
  }
  return out;
}

Tensor reshape(const Tensor& a, Shape new_shape) {
  if (shape_numel(new_shape) != a.size())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(new_shape));
  Tensor out = make_tensor(std::move(new_shape),
                           std::vector<Real>(a.data().begin(), a.data().end()));
  if (needs_grad(a)) {
    auto an = a.node();
    Node* self = out.node().get();
    attach(out, {an}, [an, self]() {
      Real* da = an->grad_data();
      const Real* g = self->grad.data();
      for (size_t i = 0; i < an->data.size(); ++i) da[i] += g[i];
    });
  }
  return out;
}

namespace {

std::vector<size_t> contiguous_strides(const Shape& shape) {
  std::vector<size_t> strides(shape.size(), 1);
  for (size_t i = shape.size(); i-- > 1;)
    strides[i - 1] = strides[i] * shape[i];
  return strides;
}

}  // namespace

Tensor transpose(const Tensor& a, const std::vector<size_t>& perm) {
  const size_t nd = a.ndim();
  if (perm.size() != nd)
    throw DimensionError("transpose: perm length " + std::to_string(perm.size()) +
                         " vs rank " + std::to_string(nd));
  std::vector<bool> seen(nd, false);
  for (size_t p : perm) {
    if (p >= nd || seen[p])
      throw std::invalid_argument("transpose: perm is not a permutation of axes");
    seen[p] = true;
  }

  Shape out_shape(nd);
  for (size_t i = 0; i < nd; ++i) out_shape[i] = a.shape()[perm[i]];
  auto in_strides = contiguous_strides(a.shape());
  // stride in the input for a unit step of output axis i
  std::vector<size_t> step(nd);
  for (size_t i = 0; i < nd; ++i) step[i] = in_strides[perm[i]];

  const size_t n = a.size();
  std::vector<Real> out_data(n);
  std::vector<size_t> coord(nd, 0);
  const Real* pa = a.data().data();
  size_t src = 0;
  for (size_t flat = 0; flat < n; ++flat) {
    out_data[flat] = pa[src];
    for (size_t i = nd; i-- > 0;) {
      if (++coord[i] < out_shape[i]) {
        src += step[i];
        break;
      }
      src -= step[i] * (out_shape[i] - 1);
      coord[i] = 0;
    }
  }

  Tensor out = make_tensor(std::move(out_shape), std::move(out_data));
  if (needs_grad(a)) {
    auto an = a.node();
    Node* self = out.node().get();
    Shape oshape = out.shape();
    attach(out, {an}, [an, self, oshape, step, nd, n]() {
      Real* da = an->grad_data();
      const Real* g = self->grad.data();
      std::vector<size_t> coord(nd, 0);
      size_t src = 0;
      for (size_t flat = 0; flat < n; ++flat) {
        da[src] += g[flat];
        for (size_t i = nd; i-- > 0;) {
          if (++coord[i] < oshape[i]) {
            src += step[i];
            break;
          }
          src -= step[i] * (oshape[i] - 1);
          coord[i] = 0;
        }
      }
    });
  }
  return out;
}

Tensor reorder_rows(const Tensor& a, const std::vector<size_t>& index) {
  if (a.ndim() < 1)
    throw DimensionError("reorder_rows: input must have >= 1 dim");
  const size_t rows = a.shape()[0];
  if (index.size() != rows)
    throw DimensionError("reorder_rows: index length " + std::to_string(index.size()) +
                         " vs leading dim " + std::to_string(rows));
  const size_t row_len = rows == 0 ? 0 : a.size() / rows;
  for (size_t i : index)
    if (i >= rows)
      throw std::out_of_range("reorder_rows: index " + std::to_string(i) +
                              " outside [0, " + std::to_string(rows) + ")");

  std::vector<Real> out_data(a.size());
  const Real* pa = a.data().data();
  for (size_t r = 0; r < rows; ++r)
    std::memcpy(out_data.data() + r * row_len, pa + index[r] * row_len,
                row_len * sizeof(Real));

  Tensor out = make_tensor(a.shape(), std::move(out_data));
  if (needs_grad(a)) {
    auto an = a.node();
    Node* self = out.node().get();
    attach(out, {an}, [an, self, index, rows, row_len]() {
      Real* da = an->grad_data();
      const Real* g = self->grad.data();
      for (size_t r = 0; r < rows; ++r) {
        Real* dst = da + index[r] * row_len;
        const Real* src = g + r * row_len;
        for (size_t i = 0; i < row_len; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor select_axis1(const Tensor& x, size_t pos) {
  if (x.ndim() != 3)
    throw DimensionError("select_axis1: expected rank-3 input, got " +
                         shape_str(x.shape()));
  const size_t b = x.shape()[0], l = x.shape()[1], d = x.shape()[2];
  if (pos >= l)
    throw std::out_of_range("select_axis1: position " + std::to_string(pos) +
                            " outside [0, " + std::to_string(l) + ")");
  std::vector<Real> out_data(b * d);
  const Real* px = x.data().data();
  for (size_t i = 0; i < b; ++i)
    std::memcpy(out_data.data() + i * d, px + (i * l + pos) * d, d * sizeof(Real));

  Tensor out = make_tensor({b, d}, std::move(out_data));
  if (needs_grad(x)) {
    auto xn = x.node();
    Node* self = out.node().get();
    attach(out, {xn}, [xn, self, b, l, d, pos]() {
      Real* dx = xn->grad_data();
      const Real* g = self->grad.data();
      for (size_t i = 0; i < b; ++i) {
        Real* dst = dx + (i * l + pos) * d;
        for (size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
      }
    });
  }
  return out;
}

Tensor add_rowwise(const Tensor& x, const Tensor& bias) {
  if (x.ndim() < 1 || bias.ndim() != 1 || bias.shape()[0] != x.shape().back())
    throw DimensionError("add_rowwise: bias " + shape_str(bias.shape()) +
                         " does not match last axis of " + shape_str(x.shape()));
  const size_t d = bias.shape()[0];
  const size_t rows = x.size() / d;
  std::vector<Real> out_data(x.size());
  const Real* px = x.data().data();
  const Real* pb = bias.data().data();
  for (size_t r = 0; r < rows; ++r)
    for (size_t i = 0; i < d; ++i)
      out_data[r * d + i] = px[r * d + i] + pb[i];

  Tensor out = make_tensor(x.shape(), std::move(out_data));
  if (needs_grad(x, bias)) {
    auto xn = x.node();
    auto bn = bias.node();
    Node* self = out.node().get();
    attach(out, {xn, bn}, [xn, bn, self, rows, d]() {
      const Real* g = self->grad.data();
      if (xn->requires_grad) {
        Real* dx = xn->grad_data();
        for (size_t i = 0; i < rows * d; ++i) dx[i] += g[i];
      }
      if (bn->requires_grad) {
        Real* db = bn->grad_data();
        for (size_t r = 0; r < rows; ++r)
          for (size_t i = 0; i < d; ++i) db[i] += g[r * d + i];
      }
    });
  }
  return out;
}

Tensor add_broadcast_rows(const Tensor& x, const Tensor& rows) {
  if (x.ndim() < 2)
    throw DimensionError("add_broadcast_rows: input must have >= 2 dims");
  Shape tail(x.shape().begin() + 1, x.shape().end());
  if (rows.shape() != tail)
    throw DimensionError("add_broadcast_rows: rows " + shape_str(rows.shape()) +
                         " does not match trailing dims of " + shape_str(x.shape()));
  const size_t b = x.shape()[0];
  const size_t rest = rows.size();
  std::vector<Real> out_data(x.size());
  const Real* px = x.data().data();
  const Real* pr = rows.data().data();
  for (size_t i = 0; i < b; ++i)
    for (size_t j = 0; j < rest; ++j)
      out_data[i * rest + j] = px[i * rest + j] + pr[j];

  Tensor out = make_tensor(x.shape(), std::move(out_data));
  if (needs_grad(x, rows)) {
    auto xn = x.node();
    auto rn = rows.node();
    Node* self = out.node().get();
    attach(out, {xn, rn}, [xn, rn, self, b, rest]() {
      const Real* g = self->grad.data();
      if (xn->requires_grad) {
        Real* dx = xn->grad_data();
        for (size_t i = 0; i < b * rest; ++i) dx[i] += g[i];
      }
      if (rn->requires_grad) {
        Real* dr = rn->grad_data();
        for (size_t i = 0; i < b; ++i)
          for (size_t j = 0; j < rest; ++j) dr[j] += g[i * rest + j];
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, size_t start, size_t count) {
  if (a.ndim() != 2)
    throw DimensionError("slice_rows: expected rank-2 input, got " +
                         shape_str(a.shape()));
  const size_t r = a.shape()[0], d = a.shape()[1];
  if (start + count > r)
    throw std::out_of_range("slice_rows: [" + std::to_string(start) + ", " +
                            std::to_string(start + count) + ") outside " +
                            std::to_string(r) + " rows");
  std::vector<Real> out_data(a.data().begin() + start * d,
                             a.data().begin() + (start + count) * d);
  Tensor out = make_tensor({count, d}, std::move(out_data));
  if (needs_grad(a)) {
    auto an = a.node();
    Node* self = out.node().get();
    attach(out, {an}, [an, self, start, count, d]() {
      Real* da = an->grad_data();
      const Real* g = self->grad.data();
      for (size_t i = 0; i < count * d; ++i) da[start * d + i] += g[i];
    });
  }
  return out;
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int32_t>& ids,
                        size_t rows, size_t cols) {
  if (table.ndim() != 2)
    throw DimensionError("embedding_lookup: table must be rank 2, got " +
                         shape_str(table.shape()));
  if (ids.size() != rows * cols)
    throw DimensionError("embedding_lookup: " + std::to_string(ids.size()) +
                         " ids for " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " layout");
  const size_t vocab = table.shape()[0], d = table.shape()[1];
  for (int32_t id : ids)
    if (id < 0 || static_cast<size_t>(id) >= vocab)
      throw std::out_of_range("embedding_lookup: id " + std::to_string(id) +
                              " outside vocabulary of " + std::to_string(vocab));

  std::vector<Real> out_data(rows * cols * d);
  const Real* pt = table.data().data();
  for (size_t i = 0; i < rows * cols; ++i)
    std::memcpy(out_data.data() + i * d, pt + static_cast<size_t>(ids[i]) * d,
                d * sizeof(Real));

  Tensor out = make_tensor({rows, cols, d}, std::move(out_data));
  if (needs_grad(table)) {
    auto tn = table.node();
    Node* self = out.node().get();
    attach(out, {tn}, [tn, self, ids, d]() {
      Real* dt = tn->grad_data();
      const Real* g = self->grad.data();
      for (size_t i = 0; i < ids.size(); ++i) {
        Real* dst = dt + static_cast<size_t>(ids[i]) * d;
        for (size_t j = 0; j < d; ++j) dst[j] += g[i * d + j];
      }
    });
  }
  return out;
}

Tensor add_key_mask(const Tensor& scores, const Tensor& mask) {
  if (scores.ndim() != 4)
    throw DimensionError("add_key_mask: scores must be rank 4, got " +
                         shape_str(scores.shape()));
  const size_t b = scores.shape()[0], h = scores.shape()[1];
  const size_t q = scores.shape()[2], k = scores.shape()[3];
  if (mask.shape() != Shape{b, k})
    throw DimensionError("add_key_mask: mask " + shape_str(mask.shape()) +
                         " does not match scores " + shape_str(scores.shape()));

  std::vector<Real> out_data(scores.size());
  const Real* ps = scores.data().data();
  const Real* pm = mask.data().data();
  size_t idx = 0;
  for (size_t ib = 0; ib < b; ++ib) {
    const Real* mrow = pm + ib * k;
    for (size_t ih = 0; ih < h; ++ih)
      for (size_t iq = 0; iq < q; ++iq)
        for (size_t ik = 0; ik < k; ++ik, ++idx)
          out_data[idx] = ps[idx] + mrow[ik];
  }

  Tensor out = make_tensor(scores.shape(), std::move(out_data));
  if (needs_grad(scores)) {
    auto sn = scores.node();
    Node* self = out.node().get();
    attach(out, {sn}, [sn, self]() {
      Real* ds = sn->grad_data();
      const Real* g = self->grad.data();
      for (size_t i = 0; i < sn->data.size(); ++i) ds[i] += g[i];
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  const size_t n = x.size();
  std::vector<Real> out_data(n);
  const Real* px = x.data().data();
  for (size_t i = 0; i < n; ++i) {
    const Real v = px[i];
    out_data[i] = Real(0.5) * v * (Real(1) + std::erf(v / Real(kSqrt2)));
  }
  Tensor out = make_tensor(x.shape(), std::move(out_data));
  if (needs_grad(x)) {
    auto xn = x.node();
    Node* self = out.node().get();
    attach(out, {xn}, [xn, self, n]() {
      Real* dx = xn->grad_data();
      const Real* g = self->grad.data();
      const Real* px = xn->data.data();
      for (size_t i = 0; i < n; ++i) {
        const Real v = px[i];
        const Real cdf = Real(0.5) * (Real(1) + std::erf(v / Real(kSqrt2)));
        const Real pdf = Real(kInvSqrt2Pi) * std::exp(Real(-0.5) * v * v);
        dx[i] += g[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool enabled) {
  if (p < 0.0 || p >= 1.0)
    throw std::invalid_argument("dropout: p must be in [0, 1), got " +
                                std::to_string(p));
  if (!enabled || p == 0.0) return x;

  const size_t n = x.size();
  const Real keep_scale = Real(1.0 / (1.0 - p));
  std::vector<Real> mask(n);
  for (size_t i = 0; i < n; ++i)
    mask[i] = rng.uniform() < p ? Real(0) : keep_scale;

  std::vector<Real> out_data(n);
  const Real* px = x.data().data();
  for (size_t i = 0; i < n; ++i) out_data[i] = px[i] * mask[i];

  Tensor out = make_tensor(x.shape(), std::move(out_data));
  if (needs_grad(x)) {
    auto xn = x.node();
    Node* self = out.node().get();
    attach(out, {xn}, [xn, self, mask = std::move(mask), n]() {
      Real* dx = xn->grad_data();
      const Real* g = self->grad.data();
      for (size_t i = 0; i < n; ++i) dx[i] += g[i] * mask[i];
    });
  }
  return out;
}

}  // namespace amplify
