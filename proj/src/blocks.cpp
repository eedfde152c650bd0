#include "mvt/blocks.hpp"

#include <cmath>

namespace mvt {

template <typename Scalar>
Tensor<Scalar> truncated_normal(Shape shape, double std, std::mt19937_64& rng) {
  Tensor<Scalar> t(std::move(shape));
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Index i = 0; i < t.size(); ++i) {
    double z;
    do {
      z = normal(rng);
    } while (std::abs(z) > 2.0);
    t[i] = static_cast<Scalar>(z * std);
  }
  return t;
}

Index block_param_count(const BlockShape& s) {
  const Index d = s.width, h = s.mlp_ratio * s.width;
  return 2 * (2 * d)         // two layer norms
         + 4 * (d * d + d)   // q, k, v, output projections
         + (d * h + h)       // mlp expand
         + (h * d + d);      // mlp contract
}

template <typename Scalar>
void init_block_params(ParamStore<Scalar>& store, const std::string& prefix, const BlockShape& s,
                       std::mt19937_64& rng) {
  if (s.width < 1 || s.heads < 1 || s.width % s.heads != 0) {
    throw ConfigError("block width " + std::to_string(s.width) + " is not divisible by " + std::to_string(s.heads) +
                      " heads");
  }
  if (s.mlp_ratio < 2) throw ConfigError("mlp expansion ratio must exceed 1");
  const Index d = s.width, h = s.mlp_ratio * s.width;
  auto put = [&](const std::string& name, Tensor<Scalar> t) { store.insert_or_assign(prefix + "." + name, std::move(t)); };
  for (const char* ln : {"ln1", "ln2"}) {
    put(std::string(ln) + ".gamma", Tensor<Scalar>::full(Shape{d}, Scalar(1)));
    put(std::string(ln) + ".beta", Tensor<Scalar>(Shape{d}));
  }
  for (const char* p : {"q", "k", "v", "o"}) {
    put(std::string("msa.w") + p, truncated_normal<Scalar>(Shape{d, d}, 0.02, rng));
    put(std::string("msa.b") + p, Tensor<Scalar>(Shape{d}));
  }
  put("mlp.w1", truncated_normal<Scalar>(Shape{d, h}, 0.02, rng));
  put("mlp.b1", Tensor<Scalar>(Shape{h}));
  put("mlp.w2", truncated_normal<Scalar>(Shape{h, d}, 0.02, rng));
  put("mlp.b2", Tensor<Scalar>(Shape{d}));
}

template <typename Scalar>
BlockWeights<Scalar> bind_block(const VarStore<Scalar>& vars, const std::string& prefix, Index heads, Scalar ln_eps,
                                ScoreScale score_scale) {
  auto get = [&](const std::string& name) -> const Var<Scalar>& {
    auto it = vars.find(prefix + "." + name);
    if (it == vars.end()) throw ConfigError("missing parameter " + prefix + "." + name);
    return it->second;
  };
  BlockWeights<Scalar> w;
  w.ln1 = {get("ln1.gamma"), get("ln1.beta"), ln_eps};
  w.ln2 = {get("ln2.gamma"), get("ln2.beta"), ln_eps};
  w.msa = {get("msa.wq"), get("msa.bq"), get("msa.wk"), get("msa.bk"),
           get("msa.wv"), get("msa.bv"), get("msa.wo"), get("msa.bo"), heads, score_scale};
  w.mlp = {get("mlp.w1"), get("mlp.b1"), get("mlp.w2"), get("mlp.b2")};

  const Index d = w.msa.wq.rows();
  const Index h = w.mlp.w1.cols();
  auto expect = [&](const Var<Scalar>& v, Shape shape, const char* name) {
    if (v.shape() != shape) {
      throw DimensionError(prefix + "." + name + " has shape " + shape_string(v.shape()) + ", expected " +
                           shape_string(shape));
    }
  };
  for (const auto* v : {&w.msa.wq, &w.msa.wk, &w.msa.wv, &w.msa.wo}) expect(*v, {d, d}, "msa weight");
  for (const auto* v : {&w.msa.bq, &w.msa.bk, &w.msa.bv, &w.msa.bo, &w.mlp.b2, &w.ln1.gamma, &w.ln1.beta,
                        &w.ln2.gamma, &w.ln2.beta})
    expect(*v, {d}, "width-D vector");
  expect(w.mlp.w1, {d, h}, "mlp.w1");
  expect(w.mlp.b1, {h}, "mlp.b1");
  expect(w.mlp.w2, {h, d}, "mlp.w2");
  if (h <= d) throw ConfigError(prefix + ": mlp hidden width must exceed block width");
  if (heads < 1 || d % heads != 0) {
    throw ConfigError(prefix + ": width " + std::to_string(d) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  return w;
}

template <typename Scalar>
Var<Scalar> ln_forward(const Var<Scalar>& x, const LNParams<Scalar>& p) {
  return layer_norm(x, p.gamma, p.beta, p.eps);
}

template <typename Scalar>
Var<Scalar> msa_forward(const Var<Scalar>& x, const MSAWeights<Scalar>& w, const Mask* mask, Index segment) {
  const Index width = x.cols();
  if (w.heads < 1 || width % w.heads != 0) {
    throw ContractError("msa: width " + std::to_string(width) + " not divisible by " + std::to_string(w.heads) +
                        " heads");
  }
  const Index head_width = w.score_scale == ScoreScale::PerHead ? width / w.heads : width;
  const Scalar score_scale = Scalar(1) / std::sqrt(static_cast<Scalar>(head_width));
  const Var<Scalar> q = add_bias(matmul(x, w.wq), w.bq);
  const Var<Scalar> k = add_bias(matmul(x, w.wk), w.bk);
  const Var<Scalar> v = add_bias(matmul(x, w.wv), w.bv);
  const Var<Scalar> y = attention(q, k, v, w.heads, segment == 0 ? x.rows() : segment, mask, score_scale);
  return add_bias(matmul(y, w.wo), w.bo);
}

template <typename Scalar>
Var<Scalar> mlp_forward(const Var<Scalar>& x, const MLPWeights<Scalar>& w) {
  return add_bias(matmul(gelu(add_bias(matmul(x, w.w1), w.b1)), w.w2), w.b2);
}

template <typename Scalar>
Var<Scalar> block_forward(const Var<Scalar>& x, const BlockWeights<Scalar>& w, const Mask* mask, Index segment) {
  const Var<Scalar> h = add(x, msa_forward(ln_forward(x, w.ln1), w.msa, mask, segment));
  return add(h, mlp_forward(ln_forward(h, w.ln2), w.mlp));
}

Mask block_diagonal_mask(Index groups, Index size) {
  Mask m = Mask::Constant(groups * size, groups * size, false);
  for (Index g = 0; g < groups; ++g) m.block(g * size, g * size, size, size).setConstant(true);
  return m;
}

#define MVT_INSTANTIATE_BLOCKS(S)                                                                      \
  template Tensor<S> truncated_normal<S>(Shape, double, std::mt19937_64&);                              \
  template void init_block_params(ParamStore<S>&, const std::string&, const BlockShape&, std::mt19937_64&); \
  template BlockWeights<S> bind_block(const VarStore<S>&, const std::string&, Index, S, ScoreScale);      \
  template Var<S> ln_forward(const Var<S>&, const LNParams<S>&);                                        \
  template Var<S> msa_forward(const Var<S>&, const MSAWeights<S>&, const Mask*, Index);                 \
  template Var<S> mlp_forward(const Var<S>&, const MLPWeights<S>&);                                     \
  template Var<S> block_forward(const Var<S>&, const BlockWeights<S>&, const Mask*, Index);

MVT_INSTANTIATE_BLOCKS(float)
MVT_INSTANTIATE_BLOCKS(double)

}  // namespace mvt
