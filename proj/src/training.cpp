#include "mvt/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "mvt/binary_io.hpp"
#include "mvt/checkpoint.hpp"
#include "mvt/flops.hpp"

namespace mvt {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("lr must be finite and >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  if (!(weight_decay >= 0.0) || lr * weight_decay >= 1.0) throw ConfigError("weight_decay must be >= 0 with lr*wd < 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (target_val_acc < 0.0 || target_val_acc > 1.0) throw ConfigError("target_val_acc must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr", c.lr},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"weight_decay", c.weight_decay},
                     {"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"eval_every", c.eval_every},
                     {"target_val_acc", c.target_val_acc},
                     {"record_time", c.record_time}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  TrainConfig d;
  c.lr = j.value("lr", d.lr);
  c.beta1 = j.value("beta1", d.beta1);
  c.beta2 = j.value("beta2", d.beta2);
  c.eps = j.value("eps", d.eps);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.epochs = j.value("epochs", d.epochs);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.seed = j.value("seed", d.seed);
  c.eval_every = j.value("eval_every", d.eval_every);
  c.target_val_acc = j.value("target_val_acc", d.target_val_acc);
  c.record_time = j.value("record_time", d.record_time);
}

bool decays(const std::string& name) {
  if (name == "embed.cls" || name == "embed.pos") return false;
  const auto dot = name.rfind('.');
  const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
  return !(leaf == "gamma" || leaf == "beta" || leaf.starts_with('b'));
}

template <typename Scalar>
void adamw_step(ParamStore<Scalar>& params, const ParamStore<Scalar>& grads, AdamWState<Scalar>& state,
                const TrainConfig& config) {
  for (const auto& [name, p] : params) {
    const auto g = grads.find(name);
    if (g == grads.end()) throw ContractError("adamw_step: no gradient for " + name);
    if (g->second.shape() != p.shape()) throw DimensionError("adamw_step: gradient shape differs for " + name);
    if (!g->second.all_finite()) throw NumericError("adamw_step: non-finite gradient for " + name);
  }
  ++state.step;
  const Scalar lr = static_cast<Scalar>(config.lr);
  const Scalar b1 = static_cast<Scalar>(config.beta1), b2 = static_cast<Scalar>(config.beta2);
  const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(config.beta1, static_cast<double>(state.step)));
  const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(config.beta2, static_cast<double>(state.step)));
  const Scalar eps = static_cast<Scalar>(config.eps);
  const Scalar keep = static_cast<Scalar>(1.0 - config.lr * config.weight_decay);
  for (auto& [name, p] : params) {
    const auto& g = grads.at(name).data().array();
    auto& m = state.m.try_emplace(name, p.shape()).first->second.data();
    auto& v = state.v.try_emplace(name, p.shape()).first->second.data();
    m.array() = b1 * m.array() + (1 - b1) * g;
    v.array() = b2 * v.array() + (1 - b2) * g.square();
    auto theta = p.data().array();
    if (decays(name)) theta *= keep;
    theta -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

std::string metrics_row(const EpochMetrics& m) {
  char val[32] = "";
  if (m.val_acc >= 0.0) std::snprintf(val, sizeof(val), "%.6f", m.val_acc);
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%.8f,%.6f,%s,%.3f,%lld", static_cast<long long>(m.epoch), m.train_loss,
                m.train_acc, val, m.seconds, static_cast<long long>(m.flops_fwd));
  return buf;
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& m : history) out += metrics_row(m) + "\n";
  return out;
}

Index argmax(const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
  Index best = 0;
  for (Index k = 1; k < logits.size(); ++k)
    if (logits[k] > logits[best]) best = k;
  return best;
}

template <typename Scalar>
PreparedSplit<Scalar> prepare_split(const std::vector<ViewSet>& samples, const MVTConfig& config) {
  PreparedSplit<Scalar> out;
  const Shape view_shape{config.height, config.width, config.channels};
  for (const auto& s : samples) {
    if (static_cast<Index>(s.views.size()) != config.views) {
      throw ConfigError("sample " + std::to_string(s.id) + " has " + std::to_string(s.views.size()) +
                        " views, model geometry is " + geometry_string(config));
    }
    if (s.label < 0 || s.label >= config.classes) {
      throw ConfigError("sample " + std::to_string(s.id) + " label " + std::to_string(s.label) +
                        " outside the model's " + std::to_string(config.classes) + " classes");
    }
    std::vector<Tensor<Scalar>> views;
    for (const auto& v : s.views) {
      if (v.shape() != view_shape) {
        throw ConfigError("sample view " + shape_string(v.shape()) + " does not match model geometry " +
                          geometry_string(config));
      }
      views.push_back(v.template cast<Scalar>());
    }
    out.patches.push_back(stack_patches(std::span<const Tensor<Scalar>>(views), config.patch));
    out.labels.push_back(s.label);
  }
  return out;
}

namespace {

template <typename Scalar>
Tensor<Scalar> gather_patches(const PreparedSplit<Scalar>& split, std::span<const Index> indices) {
  const auto& first = split.patches.at(static_cast<std::size_t>(indices.front()));
  const Index rows = first.rows();
  Tensor<Scalar> out(Shape{rows * static_cast<Index>(indices.size()), first.cols()});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    out.matrix().middleRows(static_cast<Index>(b) * rows, rows) =
        split.patches.at(static_cast<std::size_t>(indices[b])).matrix();
  }
  return out;
}

double elapsed(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

template <typename Scalar>
RowMatrix<Scalar> batch_logits(const MVTModel<Scalar>& model, const PreparedSplit<Scalar>& split,
                               std::span<const Index> indices) {
  Tape<Scalar> tape;
  const auto vars = bind_params(tape, model.params(), false);
  const auto logits = forward_patches(bind_model(vars, model.config()), model.config(),
                                      gather_patches(split, indices), static_cast<Index>(indices.size()));
  return logits.value().matrix();
}

EvalResult score_logits(const Eigen::MatrixXd& logits, std::span<const int> labels, Index classes) {
  if (logits.rows() != static_cast<Index>(labels.size()) || logits.cols() != classes) {
    throw DimensionError("score_logits: logits do not match labels and classes");
  }
  EvalResult r;
  r.confusion = Eigen::MatrixXi::Zero(classes, classes);
  if (labels.empty()) return r;
  Index correct = 0;
  double loss = 0.0;
  for (Index b = 0; b < logits.rows(); ++b) {
    const int label = labels[static_cast<std::size_t>(b)];
    if (label < 0 || label >= classes) throw ContractError("score_logits: label out of range");
    const Index pred = argmax(logits.row(b));
    ++r.confusion(label, pred);
    correct += pred == label;
    const double top = logits.row(b).maxCoeff();
    loss += top + std::log((logits.row(b).array() - top).exp().sum()) - logits(b, label);
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(labels.size());
  r.loss = loss / static_cast<double>(labels.size());
  return r;
}

template <typename Scalar>
EvalResult evaluate(const MVTModel<Scalar>& model, const PreparedSplit<Scalar>& split, Index batch_size) {
  const Index n = static_cast<Index>(split.labels.size());
  Eigen::MatrixXd logits(n, model.config().classes);
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  for (Index start = 0; start < n; start += batch_size) {
    const Index count = std::min(batch_size, n - start);
    const std::span<const Index> idx(order.data() + start, static_cast<std::size_t>(count));
    logits.middleRows(start, count) = batch_logits(model, split, idx).template cast<double>();
  }
  return score_logits(logits, split.labels, model.config().classes);
}

template <typename Scalar>
EvalResult evaluate(const MVTModel<Scalar>& model, const std::vector<ViewSet>& samples, Index batch_size) {
  return evaluate(model, prepare_split<Scalar>(samples, model.config()), batch_size);
}

template <typename Scalar>
TrainResult<Scalar> train(MVTModel<Scalar>& model, const std::vector<ViewSet>& train_set,
                          const std::vector<ViewSet>& val_set, const TrainConfig& config,
                          const TrainOptions& options) {
  config.validate();
  model.config().validate();
  if (train_set.empty()) throw ConfigError("training split is empty");
  const auto train_data = prepare_split<Scalar>(train_set, model.config());
  const auto val_data = prepare_split<Scalar>(val_set, model.config());
  const std::int64_t flops = attention_flops(model.config()).total;
  const bool write = !options.out_dir.empty();
  if (write) {
    std::error_code ec;
    std::filesystem::create_directories(options.out_dir, ec);
    if (ec) throw IoError(options.out_dir.string() + ": cannot create directory: " + ec.message());
  }

  TrainResult<Scalar> result{{}, model, -1.0, 0};
  AdamWState<Scalar> state;
  const Index n = static_cast<Index>(train_data.labels.size());
  std::vector<Index> order(static_cast<std::size_t>(n));

  for (Index epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), Index{0});
    std::mt19937_64 shuffle_rng(splitmix64(config.seed) ^ static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    EpochMetrics m;
    m.epoch = epoch;
    m.flops_fwd = flops;
    double loss_sum = 0.0;
    Index correct = 0;
    for (Index b0 = 0; b0 < n; b0 += config.batch_size) {
      const Index count = std::min(config.batch_size, n - b0);
      const std::span<const Index> idx(order.data() + b0, static_cast<std::size_t>(count));
      std::vector<int> labels;
      for (Index i : idx) labels.push_back(train_data.labels[static_cast<std::size_t>(i)]);

      Tape<Scalar> tape;
      const auto vars = bind_params(tape, model.params(), true);
      const auto logits = forward_patches(bind_model(vars, model.config()), model.config(),
                                          gather_patches(train_data, idx), count);
      const auto loss = cross_entropy(logits, std::span<const int>(labels));
      tape.backward(loss);
      m.peak_bytes = std::max(m.peak_bytes, tape.live_bytes());
      const Eigen::MatrixXd l = logits.value().matrix().template cast<double>();
      for (Index b = 0; b < count; ++b) correct += argmax(l.row(b)) == labels[static_cast<std::size_t>(b)];
      loss_sum += static_cast<double>(loss.value()[0]) * static_cast<double>(count);
      adamw_step(model.params(), collect_grads(vars), state, config);
    }
    m.train_loss = loss_sum / static_cast<double>(n);
    m.train_acc = static_cast<double>(correct) / static_cast<double>(n);

    const bool last = epoch == config.epochs;
    if (!val_data.labels.empty() && (epoch % config.eval_every == 0 || last)) {
      m.val_acc = evaluate(model, val_data).accuracy;
      if (m.val_acc > result.best_val_acc) {
        result.best_val_acc = m.val_acc;
        result.best_epoch = epoch;
        result.best = model;
        if (write) save_checkpoint(options.out_dir / "best.mvtc", model);
      }
    }
    m.seconds = config.record_time ? elapsed(start) : 0.0;
    result.history.push_back(m);
    if (write) io::write_file(options.out_dir / "metrics.csv", metrics_csv(result.history));
    if (options.on_epoch) options.on_epoch(m);
    if (config.target_val_acc > 0.0 && m.val_acc >= config.target_val_acc) break;
  }
  if (write) save_checkpoint(options.out_dir / "final.mvtc", model);
  return result;
}

#define MVT_INSTANTIATE_TRAINING(S)                                                                          \
  template void adamw_step(ParamStore<S>&, const ParamStore<S>&, AdamWState<S>&, const TrainConfig&);      \
  template PreparedSplit<S> prepare_split<S>(const std::vector<ViewSet>&, const MVTConfig&);               \
  template RowMatrix<S> batch_logits(const MVTModel<S>&, const PreparedSplit<S>&, std::span<const Index>); \
  template EvalResult evaluate(const MVTModel<S>&, const PreparedSplit<S>&, Index);                        \
  template EvalResult evaluate(const MVTModel<S>&, const std::vector<ViewSet>&, Index);                    \
  template TrainResult<S> train(MVTModel<S>&, const std::vector<ViewSet>&, const std::vector<ViewSet>&,    \
                                const TrainConfig&, const TrainOptions&);

MVT_INSTANTIATE_TRAINING(float)
MVT_INSTANTIATE_TRAINING(double)

}  // namespace mvt
