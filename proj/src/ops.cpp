#include "mvt/ops.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace mvt {

namespace {

template <typename Scalar>
using BackwardFn = typename Tape<Scalar>::BackwardFn;

template <typename Scalar>
Var<Scalar> make_result(std::span<const Var<Scalar>> inputs, Tensor<Scalar> value, BackwardFn<Scalar> backward) {
  Tape<Scalar>* tape = nullptr;
  bool requires_grad = false;
  for (const auto& v : inputs) {
    if (!v.valid()) throw ContractError("operation received an empty Var");
    if (v.tape()) {
      if (tape && tape != v.tape()) throw ContractError("operands are recorded on different tapes");
      tape = v.tape();
    }
    requires_grad = requires_grad || v.requires_grad();
  }
  if (!tape) return Var<Scalar>::constant(std::move(value));
  return tape->record(std::move(value), requires_grad, requires_grad ? std::move(backward) : BackwardFn<Scalar>{});
}

template <typename Scalar>
Var<Scalar> make_result(std::initializer_list<Var<Scalar>> inputs, Tensor<Scalar> value,
                        BackwardFn<Scalar> backward) {
  return make_result<Scalar>(std::span<const Var<Scalar>>(inputs.begin(), inputs.size()), std::move(value),
                             std::move(backward));
}

template <typename Scalar>
void require_matrix(const Var<Scalar>& a, const char* op) {
  if (a.value().rank() > 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " + shape_string(a.shape()));
  }
}

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner extents differ, " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Tensor<Scalar> out(Shape{a.rows(), b.cols()});
  out.matrix().noalias() = a.value().matrix() * b.value().matrix();
  return make_result<Scalar>({a, b}, std::move(out), [a, b](const Node<Scalar>& y) {
    const auto g = y.grad.matrix();
    if (a.requires_grad()) a.node().accumulate(g * b.value().matrix().transpose());
    if (b.requires_grad()) b.node().accumulate(a.value().matrix().transpose() * g);
  });
}

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a, b, "add");
  Tensor<Scalar> out(a.shape(), a.value().data() + b.value().data());
  return make_result<Scalar>({a, b}, std::move(out), [a, b](const Node<Scalar>& y) {
    a.node().accumulate(y.grad.matrix());
    b.node().accumulate(y.grad.matrix());
  });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a, b, "sub");
  Tensor<Scalar> out(a.shape(), a.value().data() - b.value().data());
  return make_result<Scalar>({a, b}, std::move(out), [a, b](const Node<Scalar>& y) {
    a.node().accumulate(y.grad.matrix());
    b.node().accumulate(-y.grad.matrix());
  });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
  require_same_shape(a, b, "mul");
  Tensor<Scalar> out(a.shape(), a.value().data().cwiseProduct(b.value().data()));
  return make_result<Scalar>({a, b}, std::move(out), [a, b](const Node<Scalar>& y) {
    a.node().accumulate(y.grad.matrix().cwiseProduct(b.value().matrix()));
    b.node().accumulate(y.grad.matrix().cwiseProduct(a.value().matrix()));
  });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
  Tensor<Scalar> out(a.shape(), a.value().data() * factor);
  return make_result<Scalar>({a}, std::move(out),
                             [a, factor](const Node<Scalar>& y) { a.node().accumulate(y.grad.matrix() * factor); });
}

template <typename Scalar>
Var<Scalar> add_bias(const Var<Scalar>& x, const Var<Scalar>& bias) {
  require_matrix(x, "add_bias");
  if (bias.rows() != 1 || bias.cols() != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match rows of " +
                         shape_string(x.shape()));
  }
  Tensor<Scalar> out(Shape{x.rows(), x.cols()});
  out.matrix() = x.value().matrix().rowwise() + bias.value().matrix().row(0);
  return make_result<Scalar>({x, bias}, std::move(out), [x, bias](const Node<Scalar>& y) {
    x.node().accumulate(y.grad.matrix());
    if (bias.requires_grad()) bias.node().accumulate(y.grad.matrix().colwise().sum());
  });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
  require_matrix(a, "transpose");
  Tensor<Scalar> out(Shape{a.cols(), a.rows()});
  out.matrix() = a.value().matrix().transpose();
  return make_result<Scalar>({a}, std::move(out),
                             [a](const Node<Scalar>& y) { a.node().accumulate(y.grad.matrix().transpose()); });
}

template <typename Scalar>
Var<Scalar> concat(std::span<const Var<Scalar>> parts, int axis) {
  if (parts.empty()) throw ContractError("concat of zero tensors");
  if (axis != 0 && axis != 1) throw ContractError("concat axis must be 0 or 1");
  Index rows = 0, cols = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat");
    const bool ok = axis == 0 ? p.cols() == parts[0].cols() : p.rows() == parts[0].rows();
    if (!ok) {
      throw DimensionError("concat: shape " + shape_string(p.shape()) + " incompatible with " +
                           shape_string(parts[0].shape()) + " along axis " + std::to_string(axis));
    }
    if (axis == 0) rows += p.rows();
    else cols += p.cols();
  }
  if (axis == 0) cols = parts[0].cols();
  else rows = parts[0].rows();

  Tensor<Scalar> out(Shape{rows, cols});
  Index offset = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      out.matrix().middleRows(offset, p.rows()) = p.value().matrix();
      offset += p.rows();
    } else {
      out.matrix().middleCols(offset, p.cols()) = p.value().matrix();
      offset += p.cols();
    }
  }
  std::vector<Var<Scalar>> inputs(parts.begin(), parts.end());
  return make_result<Scalar>(parts, std::move(out), [inputs, axis](const Node<Scalar>& y) {
    Index off = 0;
    for (const auto& p : inputs) {
      if (axis == 0) {
        p.node().accumulate(y.grad.matrix().middleRows(off, p.rows()));
        off += p.rows();
      } else {
        p.node().accumulate(y.grad.matrix().middleCols(off, p.cols()));
        off += p.cols();
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> slice(const Var<Scalar>& a, int axis, Index start, Index length) {
  require_matrix(a, "slice");
  if (axis != 0 && axis != 1) throw ContractError("slice axis must be 0 or 1");
  const Index extent = axis == 0 ? a.rows() : a.cols();
  if (start < 0 || length < 1 || start + length > extent) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for " + shape_string(a.shape()) + " along axis " + std::to_string(axis));
  }
  Tensor<Scalar> out(axis == 0 ? Shape{length, a.cols()} : Shape{a.rows(), length});
  if (axis == 0) out.matrix() = a.value().matrix().middleRows(start, length);
  else out.matrix() = a.value().matrix().middleCols(start, length);
  return make_result<Scalar>({a}, std::move(out), [a, axis, start, length](const Node<Scalar>& y) {
    auto g = a.node().grad_buffer().matrix();
    if (axis == 0) g.middleRows(start, length) += y.grad.matrix();
    else g.middleCols(start, length) += y.grad.matrix();
  });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
  Tensor<Scalar> out = a.value().reshaped(std::move(shape));
  return make_result<Scalar>({a}, std::move(out),
                             [a](const Node<Scalar>& y) { a.node().grad_buffer().data() += y.grad.data(); });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a, int axis) {
  require_matrix(a, "mean");
  if (axis != 0 && axis != 1) throw ContractError("mean axis must be 0 or 1");
  const auto m = a.value().matrix();
  Tensor<Scalar> out(Shape{axis == 0 ? a.cols() : a.rows()});
  if (axis == 0) out.matrix().row(0) = m.colwise().mean();
  else out.matrix().row(0) = m.rowwise().mean().transpose();
  return make_result<Scalar>({a}, std::move(out), [a, axis](const Node<Scalar>& y) {
    auto g = a.node().grad_buffer().matrix();
    const auto gy = y.grad.matrix().row(0);
    if (axis == 0) g.rowwise() += gy / static_cast<Scalar>(g.rows());
    else g.colwise() += gy.transpose() / static_cast<Scalar>(g.cols());
  });
}

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(a.value().data().sum());
  return make_result<Scalar>({a}, std::move(out),
                             [a](const Node<Scalar>& y) { a.node().grad_buffer().data().array() += y.grad[0]; });
}

template <typename Scalar>
Var<Scalar> softmax_rows(const Var<Scalar>& a) {
  require_matrix(a, "softmax_rows");
  if (a.value().data().hasNaN()) throw NumericError("softmax_rows: NaN input");
  const auto x = a.value().matrix();
  Tensor<Scalar> out(Shape{a.rows(), a.cols()});
  auto y = out.matrix();
  for (Index r = 0; r < x.rows(); ++r) {
    y.row(r) = (x.row(r).array() - x.row(r).maxCoeff()).exp();
    y.row(r) /= y.row(r).sum();
  }
  return make_result<Scalar>({a}, std::move(out), [a](const Node<Scalar>& node) {
    const auto p = node.value.matrix();
    const auto g = node.grad.matrix();
    const Vector<Scalar> dot = g.cwiseProduct(p).rowwise().sum();
    a.node().accumulate(p.cwiseProduct(g.colwise() - dot));
  });
}

template <typename Scalar>
Var<Scalar> gelu(const Var<Scalar>& a) {
  const auto& x = a.value().data();
  const Scalar inv_sqrt2 = static_cast<Scalar>(1.0 / std::numbers::sqrt2);
  Tensor<Scalar> out(a.shape());
  for (Index i = 0; i < x.size(); ++i) out[i] = Scalar(0.5) * x[i] * (Scalar(1) + std::erf(x[i] * inv_sqrt2));
  return make_result<Scalar>({a}, std::move(out), [a, inv_sqrt2](const Node<Scalar>& y) {
    const auto& xs = a.value().data();
    const Scalar inv_sqrt2pi = static_cast<Scalar>(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    auto& g = a.node().grad_buffer().data();
    for (Index i = 0; i < xs.size(); ++i) {
      const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(xs[i] * inv_sqrt2));
      const Scalar pdf = inv_sqrt2pi * std::exp(Scalar(-0.5) * xs[i] * xs[i]);
      g[i] += y.grad[i] * (cdf + xs[i] * pdf);
    }
  });
}

template <typename Scalar>
Var<Scalar> layer_norm(const Var<Scalar>& x, const Var<Scalar>& gamma, const Var<Scalar>& beta, Scalar eps) {
  require_matrix(x, "layer_norm");
  const Index n = x.rows(), d = x.cols();
  if (gamma.value().size() != d || beta.value().size() != d) {
    throw DimensionError("layer_norm: gamma/beta " + shape_string(gamma.shape()) + "/" + shape_string(beta.shape()) +
                         " do not match width of " + shape_string(x.shape()));
  }
  if (!(eps > 0)) throw ContractError("layer_norm: eps must be positive");
  const auto xm = x.value().matrix();
  const auto gm = gamma.value().matrix().row(0);
  const auto bm = beta.value().matrix().row(0);

  auto xhat = std::make_shared<RowMatrix<Scalar>>(n, d);
  auto inv_std = std::make_shared<Vector<Scalar>>(n);
  Tensor<Scalar> out(Shape{n, d});
  for (Index r = 0; r < n; ++r) {
    const Scalar mu = xm.row(r).mean();
    const auto centered = (xm.row(r).array() - mu).matrix();
    const Scalar var = centered.squaredNorm() / static_cast<Scalar>(d);
    const Scalar is = Scalar(1) / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    xhat->row(r) = centered * is;
    out.matrix().row(r) = xhat->row(r).cwiseProduct(gm) + bm;
  }
  return make_result<Scalar>({x, gamma, beta}, std::move(out), [x, gamma, beta, xhat, inv_std](const Node<Scalar>& y) {
    const auto g = y.grad.matrix();
    if (gamma.requires_grad()) gamma.node().accumulate(g.cwiseProduct(*xhat).colwise().sum());
    if (beta.requires_grad()) beta.node().accumulate(g.colwise().sum());
    if (!x.requires_grad()) return;
    const auto gm = gamma.value().matrix().row(0);
    const Scalar inv_d = Scalar(1) / static_cast<Scalar>(g.cols());
    auto gx = x.node().grad_buffer().matrix();
    for (Index r = 0; r < g.rows(); ++r) {
      const auto dxhat = g.row(r).cwiseProduct(gm);
      const Scalar mean_d = dxhat.sum() * inv_d;
      const Scalar mean_dx = dxhat.dot(xhat->row(r)) * inv_d;
      gx.row(r) += (*inv_std)[r] * ((dxhat.array() - mean_d).matrix() - mean_dx * xhat->row(r));
    }
  });
}

template <typename Scalar>
Var<Scalar> tile_rows(const Var<Scalar>& a, Index times) {
  require_matrix(a, "tile_rows");
  if (times < 1) throw ContractError("tile_rows: times must be >= 1");
  const Index r = a.rows();
  Tensor<Scalar> out(Shape{r * times, a.cols()});
  for (Index t = 0; t < times; ++t) out.matrix().middleRows(t * r, r) = a.value().matrix();
  return make_result<Scalar>({a}, std::move(out), [a, times, r](const Node<Scalar>& y) {
    auto g = a.node().grad_buffer().matrix();
    for (Index t = 0; t < times; ++t) g += y.grad.matrix().middleRows(t * r, r);
  });
}

template <typename Scalar>
Var<Scalar> interleave_rows(const Var<Scalar>& a, Index a_rows, const Var<Scalar>& b, Index b_rows) {
  require_matrix(a, "interleave_rows");
  require_matrix(b, "interleave_rows");
  if (a_rows < 1 || b_rows < 1 || a.rows() % a_rows != 0 || b.rows() % b_rows != 0 ||
      a.rows() / a_rows != b.rows() / b_rows || a.cols() != b.cols()) {
    throw DimensionError("interleave_rows: cannot alternate groups of " + std::to_string(a_rows) + " rows of " +
                         shape_string(a.shape()) + " with " + std::to_string(b_rows) + " rows of " +
                         shape_string(b.shape()));
  }
  const Index groups = a.rows() / a_rows, stride = a_rows + b_rows;
  Tensor<Scalar> out(Shape{groups * stride, a.cols()});
  for (Index g = 0; g < groups; ++g) {
    out.matrix().middleRows(g * stride, a_rows) = a.value().matrix().middleRows(g * a_rows, a_rows);
    out.matrix().middleRows(g * stride + a_rows, b_rows) = b.value().matrix().middleRows(g * b_rows, b_rows);
  }
  return make_result<Scalar>({a, b}, std::move(out), [a, b, a_rows, b_rows, groups, stride](const Node<Scalar>& y) {
    const auto gy = y.grad.matrix();
    for (Index g = 0; g < groups; ++g) {
      if (a.requires_grad())
        a.node().grad_buffer().matrix().middleRows(g * a_rows, a_rows) += gy.middleRows(g * stride, a_rows);
      if (b.requires_grad())
        b.node().grad_buffer().matrix().middleRows(g * b_rows, b_rows) += gy.middleRows(g * stride + a_rows, b_rows);
    }
  });
}

template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& a, std::span<const Index> rows) {
  require_matrix(a, "gather_rows");
  if (rows.empty()) throw ContractError("gather_rows: empty index list");
  Tensor<Scalar> out(Shape{static_cast<Index>(rows.size()), a.cols()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " +
                           shape_string(a.shape()));
    }
    out.matrix().row(static_cast<Index>(i)) = a.value().matrix().row(rows[i]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return make_result<Scalar>({a}, std::move(out), [a, idx](const Node<Scalar>& y) {
    auto g = a.node().grad_buffer().matrix();
    for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += y.grad.matrix().row(static_cast<Index>(i));
  });
}

template <typename Scalar>
Var<Scalar> segment_mean(const Var<Scalar>& a, Index segment) {
  require_matrix(a, "segment_mean");
  if (segment < 1 || a.rows() % segment != 0) {
    throw DimensionError("segment_mean: " + std::to_string(a.rows()) + " rows not divisible into segments of " +
                         std::to_string(segment));
  }
  const Index groups = a.rows() / segment;
  const Scalar denom = static_cast<Scalar>(segment);
  Tensor<Scalar> out(Shape{groups, a.cols()});
  for (Index g = 0; g < groups; ++g) {
    out.matrix().row(g) = a.value().matrix().middleRows(g * segment, segment).colwise().sum() / denom;
  }
  return make_result<Scalar>({a}, std::move(out), [a, segment, groups, denom](const Node<Scalar>& y) {
    auto g = a.node().grad_buffer().matrix();
    for (Index k = 0; k < groups; ++k) g.middleRows(k * segment, segment).rowwise() += y.grad.matrix().row(k) / denom;
  });
}

template <typename Scalar>
Var<Scalar> cross_entropy(const Var<Scalar>& logits, std::span<const int> labels) {
  require_matrix(logits, "cross_entropy");
  const Index batch = logits.rows(), classes = logits.cols();
  if (static_cast<Index>(labels.size()) != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_string(logits.shape()));
  }
  for (int label : labels) {
    if (label < 0 || label >= classes) {
      throw ContractError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                          std::to_string(classes) + ")");
    }
  }
  const auto z = logits.value().matrix();
  auto probs = std::make_shared<RowMatrix<Scalar>>(batch, classes);
  Scalar total = 0;
  for (Index r = 0; r < batch; ++r) {
    const Scalar m = z.row(r).maxCoeff();
    probs->row(r) = (z.row(r).array() - m).exp();
    const Scalar s = probs->row(r).sum();
    probs->row(r) /= s;
    total += m + std::log(s) - z(r, labels[static_cast<std::size_t>(r)]);
  }
  if (!std::isfinite(total)) throw NumericError("cross_entropy: non-finite loss");
  std::vector<int> lab(labels.begin(), labels.end());
  return make_result<Scalar>({logits}, Tensor<Scalar>::scalar(total / static_cast<Scalar>(batch)),
                             [logits, probs, lab, batch](const Node<Scalar>& y) {
                               RowMatrix<Scalar> g = *probs;
                               for (Index r = 0; r < batch; ++r) g(r, lab[static_cast<std::size_t>(r)]) -= Scalar(1);
                               logits.node().accumulate(g * (y.grad[0] / static_cast<Scalar>(batch)));
                             });
}

template <typename Scalar>
Var<Scalar> attention(const Var<Scalar>& q, const Var<Scalar>& k, const Var<Scalar>& v, Index heads, Index segment,
                      const Mask* mask, Scalar score_scale) {
  require_same_shape(q, k, "attention");
  require_same_shape(q, v, "attention");
  require_matrix(q, "attention");
  const Index n = q.rows(), width = q.cols();
  if (heads < 1 || width % heads != 0) {
    throw DimensionError("attention: width " + std::to_string(width) + " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  if (segment < 1 || n % segment != 0) {
    throw DimensionError("attention: " + std::to_string(n) + " tokens not divisible into segments of " +
                         std::to_string(segment));
  }
  RowMatrix<Scalar> bias;
  if (mask) {
    if (mask->rows() != segment || mask->cols() != segment) {
      throw DimensionError("attention: mask is " + std::to_string(mask->rows()) + "x" + std::to_string(mask->cols()) +
                           " but segments hold " + std::to_string(segment) + " tokens");
    }
    for (Index r = 0; r < segment; ++r) {
      if (!mask->row(r).any()) throw ContractError("attention: mask row " + std::to_string(r) + " allows no key");
    }
    bias = mask->unaryExpr([](bool allowed) { return allowed ? Scalar(0) : Scalar(-1e30); });
  }

  const Index d = width / heads, segments = n / segment;
  // Attention probabilities per (segment, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<RowMatrix<Scalar>>>(static_cast<std::size_t>(segments * heads));
  const auto qm = q.value().matrix(), km = k.value().matrix(), vm = v.value().matrix();
  Tensor<Scalar> out(Shape{n, width});
  auto om = out.matrix();
  for (Index s = 0; s < segments; ++s) {
    for (Index h = 0; h < heads; ++h) {
      RowMatrix<Scalar>& p = (*probs)[static_cast<std::size_t>(s * heads + h)];
      const auto qs = qm.block(s * segment, h * d, segment, d);
      const auto ks = km.block(s * segment, h * d, segment, d);
      const auto vs = vm.block(s * segment, h * d, segment, d);
      p.noalias() = score_scale * (qs * ks.transpose());
      if (mask) p += bias;
      for (Index r = 0; r < segment; ++r) {
        p.row(r) = (p.row(r).array() - p.row(r).maxCoeff()).exp();
        p.row(r) /= p.row(r).sum();
      }
      om.block(s * segment, h * d, segment, d).noalias() = p * vs;
    }
  }
  return make_result<Scalar>(
      {q, k, v}, std::move(out), [q, k, v, probs, heads, segment, segments, d, score_scale](const Node<Scalar>& y) {
        const auto gy = y.grad.matrix();
        const auto qm = q.value().matrix(), km = k.value().matrix(), vm = v.value().matrix();
        RowMatrix<Scalar> dp, ds;
        for (Index s = 0; s < segments; ++s) {
          for (Index h = 0; h < heads; ++h) {
            const RowMatrix<Scalar>& p = (*probs)[static_cast<std::size_t>(s * heads + h)];
            const auto g = gy.block(s * segment, h * d, segment, d);
            if (v.requires_grad())
              v.node().grad_buffer().matrix().block(s * segment, h * d, segment, d).noalias() += p.transpose() * g;
            if (!q.requires_grad() && !k.requires_grad()) continue;
            dp.noalias() = g * vm.block(s * segment, h * d, segment, d).transpose();
            const Vector<Scalar> dot = dp.cwiseProduct(p).rowwise().sum();
            ds = p.cwiseProduct(dp.colwise() - dot) * score_scale;
            if (q.requires_grad())
              q.node().grad_buffer().matrix().block(s * segment, h * d, segment, d).noalias() +=
                  ds * km.block(s * segment, h * d, segment, d);
            if (k.requires_grad())
              k.node().grad_buffer().matrix().block(s * segment, h * d, segment, d).noalias() +=
                  ds.transpose() * qm.block(s * segment, h * d, segment, d);
          }
        }
      });
}

#define MVT_INSTANTIATE_OPS(S)                                                                            \
  template Var<S> matmul(const Var<S>&, const Var<S>&);                                                    \
  template Var<S> add(const Var<S>&, const Var<S>&);                                                       \
  template Var<S> sub(const Var<S>&, const Var<S>&);                                                       \
  template Var<S> mul(const Var<S>&, const Var<S>&);                                                       \
  template Var<S> scale(const Var<S>&, S);                                                                 \
  template Var<S> add_bias(const Var<S>&, const Var<S>&);                                                  \
  template Var<S> transpose(const Var<S>&);                                                                \
  template Var<S> concat(std::span<const Var<S>>, int);                                                    \
  template Var<S> slice(const Var<S>&, int, Index, Index);                                                 \
  template Var<S> reshape(const Var<S>&, Shape);                                                           \
  template Var<S> mean(const Var<S>&, int);                                                                \
  template Var<S> sum(const Var<S>&);                                                                      \
  template Var<S> softmax_rows(const Var<S>&);                                                             \
  template Var<S> gelu(const Var<S>&);                                                                     \
  template Var<S> layer_norm(const Var<S>&, const Var<S>&, const Var<S>&, S);                              \
  template Var<S> tile_rows(const Var<S>&, Index);                                                         \
  template Var<S> interleave_rows(const Var<S>&, Index, const Var<S>&, Index);                             \
  template Var<S> gather_rows(const Var<S>&, std::span<const Index>);                                      \
  template Var<S> segment_mean(const Var<S>&, Index);                                                      \
  template Var<S> cross_entropy(const Var<S>&, std::span<const int>);                                      \
  template Var<S> attention(const Var<S>&, const Var<S>&, const Var<S>&, Index, Index, const Mask*, S);

MVT_INSTANTIATE_OPS(float)
MVT_INSTANTIATE_OPS(double)

}  // namespace mvt
