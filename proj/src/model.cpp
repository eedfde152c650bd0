#include "mvt/model.hpp"

#include <random>

namespace mvt {

namespace {

std::map<std::string, Shape> param_shapes(const MVTConfig& c) {
  const Index d = c.hidden, h = c.mlp_ratio * c.hidden;
  std::map<std::string, Shape> shapes;
  shapes["embed.w0"] = {d, c.patch_dim()};
  shapes["embed.pos"] = {c.tokens_per_view(), d};
  shapes["embed.cls"] = c.shared_class_token ? Shape{d} : Shape{c.views, d};
  auto block = [&](const std::string& prefix) {
    for (const char* ln : {".ln1", ".ln2"}) {
      shapes[prefix + ln + ".gamma"] = {d};
      shapes[prefix + ln + ".beta"] = {d};
    }
    for (const char* p : {"q", "k", "v", "o"}) {
      shapes[prefix + ".msa.w" + p] = {d, d};
      shapes[prefix + ".msa.b" + p] = {d};
    }
    shapes[prefix + ".mlp.w1"] = {d, h};
    shapes[prefix + ".mlp.b1"] = {h};
    shapes[prefix + ".mlp.w2"] = {h, d};
    shapes[prefix + ".mlp.b2"] = {d};
  };
  for (Index s = 0; s < c.local_blocks; ++s) block("local." + std::to_string(s));
  for (Index t = 0; t < c.global_blocks; ++t) block("global." + std::to_string(t));
  if (c.mlp_head) {
    shapes["head.w1"] = {d, d};
    shapes["head.b1"] = {d};
  }
  shapes["head.w"] = {c.classes, d};
  shapes["head.b"] = {c.classes};
  return shapes;
}

std::string leaf_name(const std::string& path) { return path.substr(path.rfind('.') + 1); }

}  // namespace

template <typename Scalar>
ParamStore<Scalar> init_params(const MVTConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  ParamStore<Scalar> store;
  for (const auto& [name, shape] : param_shapes(config)) {
    const std::string leaf = leaf_name(name);
    if (leaf == "gamma") store.emplace(name, Tensor<Scalar>::full(shape, Scalar(1)));
    else if (leaf.front() == 'b') store.emplace(name, Tensor<Scalar>(shape));
    else store.emplace(name, truncated_normal<Scalar>(shape, 0.02, rng));
  }
  return store;
}

template <typename Scalar>
MVTModel<Scalar>::MVTModel(MVTConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(init_params<Scalar>(config_, seed)) {}

template <typename Scalar>
MVTModel<Scalar>::MVTModel(MVTConfig config, ParamStore<Scalar> params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const auto shapes = param_shapes(config_);
  if (shapes.size() != params_.size()) {
    throw ConfigError("parameter store holds " + std::to_string(params_.size()) + " tensors, configuration expects " +
                      std::to_string(shapes.size()));
  }
  for (const auto& [name, shape] : shapes) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("missing parameter " + name);
    if (it->second.shape() != shape) {
      throw ConfigError("parameter " + name + " has shape " + shape_string(it->second.shape()) + ", expected " +
                        shape_string(shape));
    }
  }
}

template <typename Scalar>
ModelWeights<Scalar> bind_model(const VarStore<Scalar>& vars, const MVTConfig& config) {
  auto get = [&](const std::string& name) -> const Var<Scalar>& {
    auto it = vars.find(name);
    if (it == vars.end()) throw ConfigError("missing parameter " + name);
    return it->second;
  };
  const Scalar eps = static_cast<Scalar>(config.effective_ln_eps());
  ModelWeights<Scalar> w;
  w.embed = {get("embed.w0"), get("embed.pos"), get("embed.cls")};
  for (Index s = 0; s < config.local_blocks; ++s)
    w.local.push_back(bind_block(vars, "local." + std::to_string(s), config.heads, eps, config.score_scale));
  for (Index t = 0; t < config.global_blocks; ++t)
    w.global.push_back(bind_block(vars, "global." + std::to_string(t), config.heads, eps, config.score_scale));
  if (config.mlp_head) {
    w.head_hidden_w = get("head.w1");
    w.head_hidden_b = get("head.b1");
  }
  w.head_w = get("head.w");
  w.head_b = get("head.b");
  return w;
}

template <typename Scalar>
Tensor<Scalar> patchify(const Tensor<Scalar>& view, Index patch) {
  if (view.rank() != 3) throw DimensionError("patchify expects rows x cols x channels, got " + shape_string(view.shape()));
  const Index rows = view.dim(0), cols = view.dim(1), ch = view.dim(2);
  if (patch < 1 || rows % patch != 0 || cols % patch != 0) {
    throw ConfigError("view " + shape_string(view.shape()) + " is not divisible into " + std::to_string(patch) + "x" +
                      std::to_string(patch) + " patches");
  }
  const Index grid_r = rows / patch, grid_c = cols / patch;
  Tensor<Scalar> out(Shape{grid_r * grid_c, ch * patch * patch});
  for (Index pr = 0; pr < grid_r; ++pr) {
    for (Index pc = 0; pc < grid_c; ++pc) {
      const Index row = pr * grid_c + pc;
      Index k = 0;
      for (Index r = 0; r < patch; ++r) {
        for (Index c = 0; c < patch; ++c) {
          const Index base = ((pr * patch + r) * cols + (pc * patch + c)) * ch;
          for (Index z = 0; z < ch; ++z) out.at(row, k++) = view[base + z];
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> stack_patches(std::span<const Tensor<Scalar>> views, Index patch) {
  if (views.empty()) throw ContractError("stack_patches: no views");
  const Tensor<Scalar> first = patchify(views[0], patch);
  const Index per = first.rows();
  Tensor<Scalar> out(Shape{per * static_cast<Index>(views.size()), first.cols()});
  out.matrix().topRows(per) = first.matrix();
  for (std::size_t v = 1; v < views.size(); ++v) {
    if (views[v].shape() != views[0].shape()) {
      throw DimensionError("stack_patches: view " + shape_string(views[v].shape()) + " differs from " +
                           shape_string(views[0].shape()));
    }
    out.matrix().middleRows(static_cast<Index>(v) * per, per) = patchify(views[v], patch).matrix();
  }
  return out;
}

template <typename Scalar>
Var<Scalar> embed_patches(const Tensor<Scalar>& patches, Index views, const EmbedWeights<Scalar>& w,
                          const MVTConfig& config) {
  const Index wh = config.patches_per_view(), d = config.hidden;
  if (patches.rows() != views * wh || patches.cols() != config.patch_dim()) {
    throw DimensionError("embed: patches " + shape_string(patches.shape()) + " do not hold " + std::to_string(views) +
                         " views of " + std::to_string(wh) + " patches of width " +
                         std::to_string(config.patch_dim()));
  }
  const Var<Scalar> pixels = Var<Scalar>::constant(patches);
  const Var<Scalar> pos0 = slice(w.pos, 0, 0, 1);
  const Var<Scalar> pos_patches = slice(w.pos, 0, 1, wh);

  Var<Scalar> cls_rows;
  if (w.cls.value().rank() == 1) {
    cls_rows = tile_rows(reshape(w.cls, Shape{1, d}), views);
  } else if (views % w.cls.rows() == 0) {
    cls_rows = tile_rows(w.cls, views / w.cls.rows());
  } else if (views == 1) {
    cls_rows = slice(w.cls, 0, 0, 1);
  } else {
    throw ConfigError("per-view class tokens need a multiple of " + std::to_string(w.cls.rows()) + " views");
  }
  cls_rows = add_bias(cls_rows, pos0);

  const Var<Scalar> x = matmul(pixels, transpose(w.w0));
  const Var<Scalar> z = add(x, tile_rows(pos_patches, views));
  return interleave_rows(cls_rows, 1, z, wh);
}

template <typename Scalar>
Var<Scalar> embed_view(const Tensor<Scalar>& view, const EmbedWeights<Scalar>& w, const MVTConfig& config) {
  return embed_patches(patchify(view, config.patch), 1, w, config);
}

template <typename Scalar>
Var<Scalar> local_encode_stacked(const Var<Scalar>& stacked, std::span<const BlockWeights<Scalar>> blocks,
                                 Index tokens_per_view) {
  Var<Scalar> z = stacked;
  for (const auto& block : blocks) z = block_forward(z, block, nullptr, tokens_per_view);
  return z;
}

template <typename Scalar>
std::vector<Var<Scalar>> local_encode(std::span<const Var<Scalar>> views,
                                      std::span<const BlockWeights<Scalar>> blocks) {
  if (views.empty()) throw ContractError("local_encode: no views");
  if (blocks.empty()) return {views.begin(), views.end()};
  const Var<Scalar> stacked = concat_views(views);
  return split_views(local_encode_stacked(stacked, blocks, views[0].rows()), static_cast<Index>(views.size()));
}

template <typename Scalar>
Var<Scalar> concat_views(std::span<const Var<Scalar>> views) {
  if (views.empty()) throw ContractError("concat_views: no views");
  for (const auto& v : views) {
    if (v.shape() != views[0].shape()) {
      throw DimensionError("concat_views: view shape " + shape_string(v.shape()) + " differs from " +
                           shape_string(views[0].shape()));
    }
  }
  if (views.size() == 1) return views[0];
  return concat(views, 0);
}

template <typename Scalar>
std::vector<Var<Scalar>> split_views(const Var<Scalar>& stacked, Index views) {
  if (views < 1 || stacked.rows() % views != 0) {
    throw DimensionError("split_views: " + std::to_string(stacked.rows()) + " rows do not split into " +
                         std::to_string(views) + " views");
  }
  if (views == 1) return {stacked};
  const Index n = stacked.rows() / views;
  std::vector<Var<Scalar>> out;
  out.reserve(static_cast<std::size_t>(views));
  for (Index v = 0; v < views; ++v) out.push_back(slice(stacked, 0, v * n, n));
  return out;
}

template <typename Scalar>
Var<Scalar> global_encode(const Var<Scalar>& tokens, std::span<const BlockWeights<Scalar>> blocks, const Mask* mask,
                          Index segment) {
  Var<Scalar> m = tokens;
  for (const auto& block : blocks) m = block_forward(m, block, mask, segment);
  return m;
}

template <typename Scalar>
Var<Scalar> pool_and_classify(const Var<Scalar>& tokens, const ModelWeights<Scalar>& w, const MVTConfig& config) {
  const Index n = config.tokens_per_view(), views = config.views;
  if (tokens.rows() % (views * n) != 0 || tokens.cols() != config.hidden) {
    throw DimensionError("pool: tokens " + shape_string(tokens.shape()) + " are not whole objects of " +
                         std::to_string(views) + "x" + std::to_string(n) + " tokens");
  }
  const Index view_count = tokens.rows() / n;
  std::vector<Index> rows;
  Var<Scalar> pooled;
  if (config.pooling == Pooling::ClassToken) {
    rows.reserve(static_cast<std::size_t>(view_count));
    for (Index v = 0; v < view_count; ++v) rows.push_back(v * n);
    pooled = segment_mean(gather_rows(tokens, std::span<const Index>(rows)), views);
  } else {
    rows.reserve(static_cast<std::size_t>(view_count * (n - 1)));
    for (Index v = 0; v < view_count; ++v)
      for (Index i = 1; i < n; ++i) rows.push_back(v * n + i);
    pooled = segment_mean(gather_rows(tokens, std::span<const Index>(rows)), views * (n - 1));
  }
  if (config.mlp_head) pooled = gelu(add_bias(matmul(pooled, w.head_hidden_w), w.head_hidden_b));
  return add_bias(matmul(pooled, transpose(w.head_w)), w.head_b);
}

template <typename Scalar>
Var<Scalar> forward_patches(const ModelWeights<Scalar>& w, const MVTConfig& config, const Tensor<Scalar>& patches,
                            Index batch) {
  const Index views = batch * config.views, n = config.tokens_per_view();
  const Var<Scalar> z = embed_patches(patches, views, w.embed, config);
  const Var<Scalar> local = local_encode_stacked(z, std::span<const BlockWeights<Scalar>>(w.local), n);
  const Var<Scalar> global =
      global_encode(local, std::span<const BlockWeights<Scalar>>(w.global), nullptr, config.views * n);
  return pool_and_classify(global, w, config);
}

template <typename Scalar>
Var<Scalar> forward(const ModelWeights<Scalar>& w, const MVTConfig& config, std::span<const Tensor<Scalar>> views) {
  if (static_cast<Index>(views.size()) != config.views) {
    throw ConfigError("forward: got " + std::to_string(views.size()) + " views, model expects " +
                      std::to_string(config.views));
  }
  for (const auto& v : views) {
    if (v.shape() != Shape{config.height, config.width, config.channels}) {
      throw ConfigError("forward: view " + shape_string(v.shape()) + " does not match " + geometry_string(config));
    }
  }
  return forward_patches(w, config, stack_patches(views, config.patch), 1);
}

template <typename Scalar>
Vector<Scalar> predict(const MVTModel<Scalar>& model, std::span<const Tensor<Scalar>> views) {
  Tape<Scalar> tape;
  const auto vars = bind_params(tape, model.params(), false);
  const auto logits = forward(bind_model(vars, model.config()), model.config(), views);
  return logits.value().data();
}

#define MVT_INSTANTIATE_MODEL(S)                                                                                   \
  template class MVTModel<S>;                                                                                      \
  template ParamStore<S> init_params<S>(const MVTConfig&, std::uint64_t);                                          \
  template ModelWeights<S> bind_model(const VarStore<S>&, const MVTConfig&);                                       \
  template Tensor<S> patchify(const Tensor<S>&, Index);                                                            \
  template Tensor<S> stack_patches(std::span<const Tensor<S>>, Index);                                             \
  template Var<S> embed_patches(const Tensor<S>&, Index, const EmbedWeights<S>&, const MVTConfig&);                \
  template Var<S> embed_view(const Tensor<S>&, const EmbedWeights<S>&, const MVTConfig&);                          \
  template Var<S> local_encode_stacked(const Var<S>&, std::span<const BlockWeights<S>>, Index);                    \
  template std::vector<Var<S>> local_encode(std::span<const Var<S>>, std::span<const BlockWeights<S>>);            \
  template Var<S> concat_views(std::span<const Var<S>>);                                                           \
  template std::vector<Var<S>> split_views(const Var<S>&, Index);                                                  \
  template Var<S> global_encode(const Var<S>&, std::span<const BlockWeights<S>>, const Mask*, Index);              \
  template Var<S> pool_and_classify(const Var<S>&, const ModelWeights<S>&, const MVTConfig&);                      \
  template Var<S> forward_patches(const ModelWeights<S>&, const MVTConfig&, const Tensor<S>&, Index);              \
  template Var<S> forward(const ModelWeights<S>&, const MVTConfig&, std::span<const Tensor<S>>);                   \
  template Vector<S> predict(const MVTModel<S>&, std::span<const Tensor<S>>);

MVT_INSTANTIATE_MODEL(float)
MVT_INSTANTIATE_MODEL(double)

}  // namespace mvt
