#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "mvt/model.hpp"
#include "mvt/viewgen.hpp"

namespace mvt {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.05;
  Index epochs = 60;
  Index batch_size = 8;
  std::uint64_t seed = 0;
  Index eval_every = 1;         // validate every k epochs (and always after the last)
  double target_val_acc = 0.0;  // > 0: stop after the first validation reaching it
  bool record_time = true;      // false writes 0 to the seconds column, for byte-stable CSVs

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Weight decay skips LN parameters, biases, class tokens and position embeddings.
bool decays(const std::string& param_name);

template <typename Scalar>
struct AdamWState {
  ParamStore<Scalar> m, v;
  std::int64_t step = 0;
};

/// One AdamW update with bias-corrected moments. Decay is decoupled and applied
/// first: θ ← θ·(1 − lr·λ), then θ ← θ − lr·m̂/(√v̂ + ε). Any non-finite gradient
/// raises NumericError before anything is modified.
template <typename Scalar>
void adamw_step(ParamStore<Scalar>& params, const ParamStore<Scalar>& grads, AdamWState<Scalar>& state,
                const TrainConfig& config);

struct EpochMetrics {
  Index epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = -1.0;  // -1 when the epoch was not validated
  double seconds = 0.0;
  std::int64_t flops_fwd = 0;  // forward FLOPs per object
  std::size_t peak_bytes = 0;  // largest live tape footprint of any step
};

inline constexpr const char* kMetricsHeader = "epoch,train_loss,train_acc,val_acc,seconds,flops_fwd";
std::string metrics_row(const EpochMetrics& m);
std::string metrics_csv(const std::vector<EpochMetrics>& history);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
  Eigen::MatrixXi confusion;  // rows: true class, columns: predicted class
};

/// Argmax classification; ties go to the lowest class index.
Index argmax(const Eigen::Ref<const Eigen::RowVectorXd>& logits);

/// Accuracy, mean cross-entropy and confusion matrix of a block of B × K logits.
EvalResult score_logits(const Eigen::MatrixXd& logits, std::span<const int> labels, Index classes);

/// Samples converted to stacked patch rows, ready for batching.
template <typename Scalar>
struct PreparedSplit {
  std::vector<Tensor<Scalar>> patches;  // per sample: (L·wh) × Cp²
  std::vector<int> labels;
};

template <typename Scalar>
PreparedSplit<Scalar> prepare_split(const std::vector<ViewSet>& samples, const MVTConfig& config);

/// Logits (B × K) for samples `indices` of a prepared split, without recording gradients.
template <typename Scalar>
RowMatrix<Scalar> batch_logits(const MVTModel<Scalar>& model, const PreparedSplit<Scalar>& split,
                               std::span<const Index> indices);

template <typename Scalar>
EvalResult evaluate(const MVTModel<Scalar>& model, const PreparedSplit<Scalar>& split, Index batch_size = 32);

template <typename Scalar>
EvalResult evaluate(const MVTModel<Scalar>& model, const std::vector<ViewSet>& samples, Index batch_size = 32);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: keep everything in memory
  std::function<void(const EpochMetrics&)> on_epoch;
};

template <typename Scalar>
struct TrainResult {
  std::vector<EpochMetrics> history;
  MVTModel<Scalar> best;
  double best_val_acc = -1.0;
  Index best_epoch = 0;
};

/// Trains `model` in place. With an output directory, rewrites metrics.csv after
/// every epoch and saves best.mvtc (best validation accuracy, earliest epoch on
/// ties) and final.mvtc. Deterministic given the model, data and config.
template <typename Scalar>
TrainResult<Scalar> train(MVTModel<Scalar>& model, const std::vector<ViewSet>& train_set,
                          const std::vector<ViewSet>& val_set, const TrainConfig& config,
                          const TrainOptions& options = {});

}  // namespace mvt
