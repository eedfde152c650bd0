#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mvt/flops.hpp"
#include "mvt/training.hpp"

namespace mvt {

enum class SweepAxis { BlockSplit, ViewCount, Pooling };

std::string to_string(SweepAxis a);
SweepAxis parse_axis(const std::string& s);

struct SweepSpec {
  SweepAxis axis = SweepAxis::BlockSplit;
  MVTConfig base;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  /// Block split: S + T is held at `total` unless `fixed_local` >= 0, in which
  /// case S is held and `grid` lists T. View count: `grid` lists L'.
  Index total = 6;
  Index fixed_local = -1;
  std::vector<Index> grid;  // empty: the default grid of the axis
  std::filesystem::path out_dir;  // empty: nothing persisted, no resume
  bool resume = false;
  int workers = 1;

  void validate() const;
};

/// One configuration of a sweep.
struct SweepCell {
  std::string id;
  MVTConfig config;
};

/// Cells in CSV order: block split by ascending T, view count by ascending L', pooling class token first.
std::vector<SweepCell> sweep_cells(const SweepSpec& spec);

/// Default grids: T ∈ {0, 1, 2, 3, 4, 6} capped at `total` (plus `total` itself), L' ∈ {1, 3, 6}.
std::vector<Index> default_grid(SweepAxis axis, Index total);

/// One (cell, seed) training run.
struct SweepRun {
  std::string cell_id;
  std::uint64_t seed = 0;
  Index S = 0, T = 0, L = 0;
  std::string pooling;
  double val_acc = 0.0;  // final-epoch validation accuracy of the stored checkpoint
  double train_seconds = 0.0;
  Index epochs = 0;
  std::int64_t flops_fwd = 0;
  Index params = 0;
};

void to_json(nlohmann::json& j, const SweepRun& r);
void from_json(const nlohmann::json& j, SweepRun& r);

/// A cell aggregated over its seeds.
struct SweepResult {
  std::string cell_id;
  Index S = 0, T = 0, L = 0;
  std::string pooling;
  std::vector<std::uint64_t> seeds;
  double mean_acc = 0.0, min_acc = 0.0, max_acc = 0.0;
  double train_seconds = 0.0;    // summed over seeds
  double seconds_per_epoch = 0.0;
  std::int64_t flops_fwd = 0;
  Index params = 0;
};

struct SweepTable {
  SweepAxis axis = SweepAxis::BlockSplit;
  std::vector<SweepResult> cells;
  std::vector<SweepRun> runs;
  Index best = -1;  // index of the highest mean accuracy, earliest on ties
};

inline constexpr const char* kSweepHeader = "axis,cell_id,seed,S,T,L,pooling,val_acc,train_seconds,flops_fwd,params";

/// One row per cell; `seed` lists the seeds joined by ';' and `val_acc` is their mean.
std::string sweep_csv(const SweepTable& table);
/// One row per (cell, seed) with the same columns.
std::string runs_csv(const SweepTable& table);

SweepTable aggregate(SweepAxis axis, const std::vector<SweepCell>& cells, const std::vector<SweepRun>& runs);

/// Trains every (cell, seed) from scratch on `data`, whose samples may carry more
/// views than a cell needs (view-count cells subsample them). With an output
/// directory each run lives in cells/<cell_id>/seed_<seed>/ with result.json,
/// metrics.csv and final.mvtc; sweep.csv, runs.csv and summary.json are rewritten
/// as runs finish. With `resume`, runs whose result.json exists are not retrained.
SweepTable run_sweep(const SweepSpec& spec, const Dataset& data);

/// Re-evaluates a stored run checkpoint on the cell's validation data.
double reevaluate_run(const std::filesystem::path& run_dir, const Dataset& data);

struct BenchReport {
  MVTConfig config;
  FlopReport flops;
  Index params = 0;
  Index batch = 0;
  Index steps = 0;
  double seconds_per_step = 0.0;    // forward + backward + AdamW on one batch
  double seconds_per_object = 0.0;
  std::size_t peak_bytes = 0;       // live tape footprint of one step
};

/// Analytic FLOPs and parameter count plus a timed run of `steps` training steps on random views.
BenchReport bench(const MVTConfig& config, Index batch, Index steps, std::uint64_t seed);

void to_json(nlohmann::json& j, const BenchReport& r);

}  // namespace mvt
