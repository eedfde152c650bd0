#include "mvt/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <mutex>
#include <optional>
#include <numeric>
#include <set>

#include "mvt/binary_io.hpp"
#include "mvt/checkpoint.hpp"
#include "mvt/parallel.hpp"

namespace mvt {

namespace fs = std::filesystem;

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::BlockSplit: return "block-split";
    case SweepAxis::ViewCount: return "view-count";
    case SweepAxis::Pooling: return "pooling";
  }
  return "?";
}

SweepAxis parse_axis(const std::string& s) {
  if (s == "block-split") return SweepAxis::BlockSplit;
  if (s == "view-count" || s == "views") return SweepAxis::ViewCount;
  if (s == "pooling" || s == "pooling-mode") return SweepAxis::Pooling;
  throw ConfigError("unknown sweep axis '" + s + "' (expected block-split, view-count or pooling)");
}

std::vector<Index> default_grid(SweepAxis axis, Index total) {
  switch (axis) {
    case SweepAxis::BlockSplit: {
      std::set<Index> t;
      for (Index v : {Index{0}, Index{1}, Index{2}, Index{3}, Index{4}, total})
        if (v <= total) t.insert(v);
      return {t.begin(), t.end()};
    }
    case SweepAxis::ViewCount: return {1, 3, 6};
    case SweepAxis::Pooling: return {};
  }
  return {};
}

void SweepSpec::validate() const {
  base.validate();
  train.validate();
  if (seeds.empty()) throw ConfigError("a sweep needs at least one seed");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("sweep seeds must be distinct");
  }
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (resume && out_dir.empty()) throw ConfigError("resume needs an output directory");
  const auto g = grid.empty() ? default_grid(axis, total) : grid;
  if (std::set<Index>(g.begin(), g.end()).size() != g.size()) throw ConfigError("sweep grid has duplicate values");
  if (axis == SweepAxis::BlockSplit) {
    if (fixed_local < 0 && total < 1) throw ConfigError("block-split total must be >= 1");
    for (Index t : g) {
      if (t < 0) throw ConfigError("block-split grid values must be >= 0");
      if (fixed_local < 0 && t > total) {
        throw ConfigError("block-split grid value T=" + std::to_string(t) + " exceeds total " + std::to_string(total));
      }
      if (fixed_local >= 0 && fixed_local + t < 1) throw ConfigError("a cell needs at least one block");
    }
  }
  if (axis == SweepAxis::ViewCount) {
    for (Index l : g)
      if (l < 1) throw ConfigError("view counts must be >= 1");
  }
}

std::vector<SweepCell> sweep_cells(const SweepSpec& spec) {
  spec.validate();
  std::vector<SweepCell> cells;
  auto g = spec.grid.empty() ? default_grid(spec.axis, spec.total) : spec.grid;
  std::sort(g.begin(), g.end());
  switch (spec.axis) {
    case SweepAxis::BlockSplit:
      for (Index t : g) {
        MVTConfig c = spec.base;
        c.global_blocks = t;
        c.local_blocks = spec.fixed_local >= 0 ? spec.fixed_local : spec.total - t;
        cells.push_back({"S" + std::to_string(c.local_blocks) + "T" + std::to_string(t), c});
      }
      break;
    case SweepAxis::ViewCount:
      for (Index l : g) {
        MVTConfig c = spec.base;
        c.views = l;
        cells.push_back({"L" + std::to_string(l), c});
      }
      break;
    case SweepAxis::Pooling:
      for (Pooling p : {Pooling::ClassToken, Pooling::AveragePatch}) {
        MVTConfig c = spec.base;
        c.pooling = p;
        cells.push_back({to_string(p), c});
      }
      break;
  }
  for (const auto& cell : cells) cell.config.validate();
  return cells;
}

void to_json(nlohmann::json& j, const SweepRun& r) {
  j = nlohmann::json{{"cell_id", r.cell_id}, {"seed", r.seed},   {"S", r.S},
                     {"T", r.T},             {"L", r.L},         {"pooling", r.pooling},
                     {"val_acc", r.val_acc}, {"train_seconds", r.train_seconds},
                     {"epochs", r.epochs},   {"flops_fwd", r.flops_fwd}, {"params", r.params}};
}

void from_json(const nlohmann::json& j, SweepRun& r) {
  j.at("cell_id").get_to(r.cell_id);
  j.at("seed").get_to(r.seed);
  j.at("S").get_to(r.S);
  j.at("T").get_to(r.T);
  j.at("L").get_to(r.L);
  j.at("pooling").get_to(r.pooling);
  j.at("val_acc").get_to(r.val_acc);
  j.at("train_seconds").get_to(r.train_seconds);
  j.at("epochs").get_to(r.epochs);
  j.at("flops_fwd").get_to(r.flops_fwd);
  j.at("params").get_to(r.params);
}

namespace {

std::string csv_row(const std::string& axis, const std::string& cell, const std::string& seeds, Index s, Index t,
                    Index l, const std::string& pooling, double acc, double seconds, std::int64_t flops,
                    Index params) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), "%s,%s,%s,%lld,%lld,%lld,%s,%.6f,%.3f,%lld,%lld", axis.c_str(), cell.c_str(),
                seeds.c_str(), static_cast<long long>(s), static_cast<long long>(t), static_cast<long long>(l),
                pooling.c_str(), acc, seconds, static_cast<long long>(flops), static_cast<long long>(params));
  return buf;
}

SweepRun describe(const SweepCell& cell, std::uint64_t seed) {
  SweepRun r;
  r.cell_id = cell.id;
  r.seed = seed;
  r.S = cell.config.local_blocks;
  r.T = cell.config.global_blocks;
  r.L = cell.config.views;
  r.pooling = to_string(cell.config.pooling);
  r.flops_fwd = attention_flops(cell.config).total;
  r.params = mvt_param_count(cell.config);
  return r;
}

std::vector<ViewSet> fit_views(const std::vector<ViewSet>& samples, Index views) {
  std::vector<ViewSet> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(subsample_views(s, views));
  return out;
}

template <typename Scalar>
SweepRun train_run(const SweepCell& cell, std::uint64_t seed, const Dataset& data, const TrainConfig& base,
                   const fs::path& dir) {
  SweepRun r = describe(cell, seed);
  TrainConfig tc = base;
  tc.seed = seed;
  TrainOptions opts;
  opts.out_dir = dir;
  MVTModel<Scalar> model(cell.config, seed);
  const auto start = std::chrono::steady_clock::now();
  const auto result = train(model, fit_views(data.train, cell.config.views), fit_views(data.val, cell.config.views),
                            tc, opts);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.train_seconds = tc.record_time ? seconds : 0.0;
  r.epochs = static_cast<Index>(result.history.size());
  r.val_acc = result.history.back().val_acc;
  return r;
}

void write_outputs(const fs::path& dir, const SweepTable& table) {
  io::write_file(dir / "sweep.csv", sweep_csv(table));
  io::write_file(dir / "runs.csv", runs_csv(table));
  nlohmann::json summary{{"axis", to_string(table.axis)}, {"cells", nlohmann::json::array()}};
  for (const auto& c : table.cells) {
    summary["cells"].push_back({{"cell_id", c.cell_id},
                                {"S", c.S},
                                {"T", c.T},
                                {"L", c.L},
                                {"pooling", c.pooling},
                                {"seeds", c.seeds},
                                {"mean_acc", c.mean_acc},
                                {"min_acc", c.min_acc},
                                {"max_acc", c.max_acc},
                                {"seconds_per_epoch", c.seconds_per_epoch},
                                {"flops_fwd", c.flops_fwd},
                                {"params", c.params}});
  }
  summary["best_cell"] = table.best >= 0 ? nlohmann::json(table.cells[static_cast<std::size_t>(table.best)].cell_id)
                                         : nlohmann::json(nullptr);
  io::write_file(dir / "summary.json", summary.dump(2) + "\n");
}

}  // namespace

std::string sweep_csv(const SweepTable& table) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (const auto& c : table.cells) {
    std::string seeds;
    for (std::size_t i = 0; i < c.seeds.size(); ++i) seeds += (i ? ";" : "") + std::to_string(c.seeds[i]);
    out += csv_row(to_string(table.axis), c.cell_id, seeds, c.S, c.T, c.L, c.pooling, c.mean_acc, c.train_seconds,
                   c.flops_fwd, c.params) +
           "\n";
  }
  return out;
}

std::string runs_csv(const SweepTable& table) {
  std::string out = std::string(kSweepHeader) + "\n";
  for (const auto& r : table.runs) {
    out += csv_row(to_string(table.axis), r.cell_id, std::to_string(r.seed), r.S, r.T, r.L, r.pooling, r.val_acc,
                   r.train_seconds, r.flops_fwd, r.params) +
           "\n";
  }
  return out;
}

SweepTable aggregate(SweepAxis axis, const std::vector<SweepCell>& cells, const std::vector<SweepRun>& runs) {
  SweepTable table;
  table.axis = axis;
  table.runs = runs;
  for (const auto& cell : cells) {
    SweepResult c;
    c.cell_id = cell.id;
    Index epochs = 0;
    double sum = 0.0;
    for (const auto& r : runs) {
      if (r.cell_id != cell.id) continue;
      if (c.seeds.empty()) {
        c.S = r.S, c.T = r.T, c.L = r.L, c.pooling = r.pooling, c.flops_fwd = r.flops_fwd, c.params = r.params;
        c.min_acc = c.max_acc = r.val_acc;
      }
      c.seeds.push_back(r.seed);
      sum += r.val_acc;
      c.min_acc = std::min(c.min_acc, r.val_acc);
      c.max_acc = std::max(c.max_acc, r.val_acc);
      c.train_seconds += r.train_seconds;
      epochs += r.epochs;
    }
    if (c.seeds.empty()) continue;
    c.mean_acc = sum / static_cast<double>(c.seeds.size());
    c.seconds_per_epoch = epochs > 0 ? c.train_seconds / static_cast<double>(epochs) : 0.0;
    table.cells.push_back(std::move(c));
  }
  for (std::size_t i = 0; i < table.cells.size(); ++i) {
    if (table.best < 0 || table.cells[i].mean_acc > table.cells[static_cast<std::size_t>(table.best)].mean_acc) {
      table.best = static_cast<Index>(i);
    }
  }
  return table;
}

SweepTable run_sweep(const SweepSpec& spec, const Dataset& data) {
  const auto cells = sweep_cells(spec);
  for (const auto& cell : cells) check_compatible(data.manifest, cell.config);

  struct Job {
    std::size_t cell;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < cells.size(); ++c)
    for (auto seed : spec.seeds) jobs.push_back({c, seed});

  const bool persist = !spec.out_dir.empty();
  if (persist) {
    std::error_code ec;
    fs::create_directories(spec.out_dir, ec);
    if (ec) throw IoError(spec.out_dir.string() + ": cannot create directory: " + ec.message());
  }
  std::vector<std::optional<SweepRun>> done(jobs.size());
  std::mutex mutex;
  auto snapshot = [&] {
    std::vector<SweepRun> finished;
    for (const auto& r : done)
      if (r) finished.push_back(*r);
    return aggregate(spec.axis, cells, finished);
  };

  parallel_for(
      static_cast<Index>(jobs.size()),
      [&](Index j) {
        const auto& job = jobs[static_cast<std::size_t>(j)];
        const auto& cell = cells[job.cell];
        const fs::path dir = persist ? spec.out_dir / "cells" / cell.id / ("seed_" + std::to_string(job.seed)) : fs::path();
        SweepRun run;
        if (persist && spec.resume && fs::exists(dir / "result.json") && fs::exists(dir / "final.mvtc")) {
          try {
            run = nlohmann::json::parse(io::read_file(dir / "result.json")).get<SweepRun>();
          } catch (const nlohmann::json::exception& e) {
            throw FormatError((dir / "result.json").string() + ": " + e.what());
          }
          const SweepRun expected = describe(cell, job.seed);
          if (run.S != expected.S || run.T != expected.T || run.L != expected.L || run.pooling != expected.pooling ||
              run.params != expected.params || peek_checkpoint_config(dir / "final.mvtc") != cell.config) {
            throw ConfigError(dir.string() + ": stored run does not match this sweep; use a fresh output directory");
          }
        } else {
          run = cell.config.dtype == DType::F64 ? train_run<double>(cell, job.seed, data, spec.train, dir)
                                                : train_run<float>(cell, job.seed, data, spec.train, dir);
          if (persist) io::write_file(dir / "result.json", nlohmann::json(run).dump(2) + "\n");
        }
        std::lock_guard lock(mutex);
        done[static_cast<std::size_t>(j)] = run;
        if (persist) write_outputs(spec.out_dir, snapshot());
      },
      spec.workers);

  auto table = snapshot();
  if (persist) write_outputs(spec.out_dir, table);
  return table;
}

double reevaluate_run(const fs::path& run_dir, const Dataset& data) {
  const MVTConfig config = peek_checkpoint_config(run_dir / "final.mvtc");
  const auto val = fit_views(data.val, config.views);
  if (config.dtype == DType::F64) return evaluate(load_checkpoint<double>(run_dir / "final.mvtc"), val).accuracy;
  return evaluate(load_checkpoint<float>(run_dir / "final.mvtc"), val).accuracy;
}

namespace {

template <typename Scalar>
BenchReport bench_impl(const MVTConfig& config, Index batch, Index steps, std::uint64_t seed) {
  BenchReport r;
  r.config = config;
  r.flops = attention_flops(config);
  r.params = mvt_param_count(config);
  r.batch = batch;
  r.steps = steps;
  MVTModel<Scalar> model(config, seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<Scalar> patches(Shape{batch * config.views * config.patches_per_view(), config.patch_dim()});
  for (Index i = 0; i < patches.size(); ++i) patches[i] = static_cast<Scalar>(u(rng));
  std::vector<int> labels;
  for (Index b = 0; b < batch; ++b) labels.push_back(static_cast<int>(b % config.classes));
  AdamWState<Scalar> state;
  const TrainConfig tc;
  const auto start = std::chrono::steady_clock::now();
  for (Index s = 0; s < steps; ++s) {
    Tape<Scalar> tape;
    const auto vars = bind_params(tape, model.params(), true);
    const auto logits = forward_patches(bind_model(vars, config), config, patches, batch);
    tape.backward(cross_entropy(logits, std::span<const int>(labels)));
    r.peak_bytes = std::max(r.peak_bytes, tape.live_bytes());
    adamw_step(model.params(), collect_grads(vars), state, tc);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  r.seconds_per_step = seconds / static_cast<double>(steps);
  r.seconds_per_object = r.seconds_per_step / static_cast<double>(batch);
  return r;
}

}  // namespace

BenchReport bench(const MVTConfig& config, Index batch, Index steps, std::uint64_t seed) {
  config.validate();
  if (batch < 1 || steps < 1) throw ConfigError("bench needs batch >= 1 and steps >= 1");
  return config.dtype == DType::F64 ? bench_impl<double>(config, batch, steps, seed)
                                    : bench_impl<float>(config, batch, steps, seed);
}

void to_json(nlohmann::json& j, const BenchReport& r) {
  const auto block = [](const BlockFlops& b) {
    return nlohmann::json{{"qkv", b.qkv},       {"scores", b.scores}, {"values", b.values},
                          {"out_proj", b.out_proj}, {"mlp", b.mlp},   {"total", b.total()}};
  };
  j = nlohmann::json{{"config", r.config},
                     {"params", r.params},
                     {"flops",
                      {{"local_block", block(r.flops.local_block)},
                       {"global_block", block(r.flops.global_block)},
                       {"embed", r.flops.embed},
                       {"head", r.flops.head},
                       {"local_total", r.flops.local_total},
                       {"global_total", r.flops.global_total},
                       {"total", r.flops.total}}},
                     {"batch", r.batch},
                     {"steps", r.steps},
                     {"seconds_per_step", r.seconds_per_step},
                     {"seconds_per_object", r.seconds_per_object},
                     {"peak_bytes", r.peak_bytes}};
}

}  // namespace mvt
