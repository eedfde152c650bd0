#include <algorithm>
#include <cstdio>
#include <deque>
#include <functional>
#include <iostream>

#include "CLI11.hpp"
#include "mvt/binary_io.hpp"
#include "mvt/checkpoint.hpp"
#include "mvt/errors.hpp"
#include "mvt/harness.hpp"
#include "mvt/parallel.hpp"
#include "run_config.hpp"

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace mvt;

void log(const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::cerr << cli::kv_line(pairs) << '\n';
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// One subcommand: its flags map onto keys of the config document.
struct Command {
  struct Flag {
    CLI::Option* option = nullptr;
    std::string section, key;
    std::string text;
    bool on = false;
    bool is_switch = false;
    std::function<json(const std::string&)> convert;
  };

  CLI::App* app = nullptr;
  std::string config_path;
  std::deque<Flag> flags;

  CLI::Option* add(const std::string& name, const std::string& section, const std::string& key,
                   const std::string& help, const std::string& type = "INT") {
    auto& f = flags.emplace_back();
    f.section = section;
    f.key = key;
    f.convert = [](const std::string& s) { return cli::parse_scalar(s); };
    f.option = app->add_option(name, f.text, help)->type_name(type);
    return f.option;
  }

  CLI::Option* add_switch(const std::string& name, const std::string& section, const std::string& key,
                          const std::string& help, const std::string& type = "INT") {
    auto& f = flags.emplace_back();
    f.section = section;
    f.key = key;
    f.is_switch = true;
    f.option = app->add_flag(name, f.on, help);
    return f.option;
  }

  /// Only the flags given on the command line.
  json overrides() const {
    auto doc = json::object();
    for (const auto& f : flags) {
      if (f.option->count() == 0) continue;
      const json value = f.is_switch ? json(f.on) : f.convert(f.text);
      if (f.section.empty())
        doc[f.key] = value;
      else
        doc[f.section][f.key] = value;
    }
    return doc;
  }
};

// Options bind to members, so a command is set up in place and never moved.
void init_command(Command& c, CLI::App& app, const std::string& name, const std::string& description) {
  c.app = app.add_subcommand(name, description);
  c.app->add_option("--config", c.config_path, "Config file: key=value lines with [sections], or JSON")
      ->type_name("FILE");
}

void add_model_flags(Command& c) {
  c.add("--preset", "model", "preset", "Model preset: tiny, small, micro or desk", "NAME");
  c.add("--views", "model", "views", "Views per object (L)");
  c.add("--height", "model", "height", "View height in pixels");
  c.add("--width", "model", "width", "View width in pixels");
  c.add("--patch", "model", "patch", "Patch size (p)");
  c.add("--hidden", "model", "hidden", "Hidden width (D)");
  c.add("--heads", "model", "heads", "Attention heads (M)");
  c.add("--local-blocks", "model", "local_blocks", "Local blocks (S)");
  c.add("--global-blocks", "model", "global_blocks", "Global blocks (T)");
  c.add("--classes", "model", "classes", "Number of classes (K)");
  c.add("--mlp-ratio", "model", "mlp_ratio", "MLP expansion ratio");
  c.add("--dtype", "model", "dtype", "Scalar type: f32 or f64", "NAME");
  c.add("--pooling", "model", "pooling", "Pooling: class_token or avg_pool", "NAME");
}

void add_train_flags(Command& c, bool with_seed) {
  c.add("--lr", "train", "lr", "Learning rate", "REAL");
  c.add("--beta1", "train", "beta1", "AdamW first-moment decay", "REAL");
  c.add("--beta2", "train", "beta2", "AdamW second-moment decay", "REAL");
  c.add("--eps", "train", "eps", "AdamW epsilon", "REAL");
  c.add("--weight-decay", "train", "weight_decay", "Decoupled weight decay", "REAL");
  c.add("--epochs", "train", "epochs", "Training epochs");
  c.add("--batch-size", "train", "batch_size", "Minibatch size");
  if (with_seed) c.add("--seed", "train", "seed", "Seed for initialization and shuffling");
  c.add("--eval-every", "train", "eval_every", "Validate every k epochs (always after the last)");
  c.add("--target-acc", "train", "target_val_acc", "Stop once validation accuracy reaches this (0: never)", "REAL");
  auto& timing = c.flags.emplace_back();
  timing.section = "train";
  timing.key = "record_time";
  timing.convert = [](const std::string& s) { return json(s == "on"); };
  timing.option = c.app->add_option("--timing", timing.text, "Record wall time in metrics.csv: on or off")
                      ->check(CLI::IsMember({"on", "off"}));
}

json dataset_defaults() {
  const DatasetSpec d;
  return {{"seed", d.seed},
          {"classes", d.classes},
          {"train", d.train},
          {"val", d.val},
          {"test", d.test},
          {"views", d.geometry.views},
          {"height", d.geometry.height},
          {"width", d.geometry.width},
          {"elevation_deg", d.geometry.elevation_deg},
          {"workers", 0}};
}

json sweep_defaults() {
  const SweepSpec s;
  return {{"axis", to_string(s.axis)}, {"seeds", s.seeds},   {"total", s.total},   {"fixed_local", s.fixed_local},
          {"grid", json::array()},     {"resume", s.resume}, {"workers", s.workers}};
}

/// Defaults, then the config file, then flags. The model section starts from its preset.
json resolve(const Command& cmd, json defaults) {
  const json file = cmd.config_path.empty() ? json::object() : cli::load_config_file(cmd.config_path);
  const json flags = cmd.overrides();
  if (defaults.contains("model")) {
    std::string preset = "desk";
    for (const auto* src : {&file, &flags})
      if (src->contains("model") && (*src)["model"].is_object() && (*src)["model"].contains("preset"))
        preset = (*src)["model"]["preset"].get<std::string>();
    defaults["model"] = MVTConfig::preset(preset);
    defaults["model"]["preset"] = preset;
  }
  json doc = defaults;
  cli::overlay(doc, file, defaults);
  cli::overlay(doc, flags, defaults);

  if (doc.contains("model")) {
    const auto preset = doc["model"]["preset"];
    const auto config = doc["model"].get<MVTConfig>();
    config.validate();
    doc["model"] = config;
    doc["model"]["preset"] = preset;
  }
  if (doc.contains("train")) {
    const auto config = doc["train"].get<TrainConfig>();
    config.validate();
    doc["train"] = config;
  }
  return doc;
}

std::string require(const json& doc, const std::string& key, const std::string& flag) {
  const auto value = doc.at(key).get<std::string>();
  if (value.empty()) throw ConfigError(flag + " is required");
  return value;
}

/// Creates the output directory and echoes the resolved config into it.
fs::path prepare_out(const json& doc, bool required) {
  const auto out = doc.at("out").get<std::string>();
  if (out.empty()) {
    if (required) throw ConfigError("--out is required");
    return {};
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError(out + ": cannot create directory: " + ec.message());
  io::write_file(fs::path(out) / "config.resolved", cli::format_config(doc));
  log({{"event", "config"}, {"path", (fs::path(out) / "config.resolved").string()}});
  return out;
}

std::vector<std::uint64_t> as_list(const json& v) {
  return v.is_array() ? v.get<std::vector<std::uint64_t>>() : std::vector<std::uint64_t>{v.get<std::uint64_t>()};
}

std::vector<ViewSet> with_views(const std::vector<ViewSet>& samples, Index views) {
  std::vector<ViewSet> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(subsample_views(s, views));
  return out;
}

int cmd_gen_data(const Command& cmd) {
  const json doc = resolve(cmd, {{"out", ""}, {"dataset", dataset_defaults()}});
  const auto& d = doc["dataset"];
  DatasetSpec spec;
  spec.seed = d["seed"].get<std::uint64_t>();
  spec.classes = d["classes"].get<Index>();
  spec.train = d["train"].get<Index>();
  spec.val = d["val"].get<Index>();
  spec.test = d["test"].get<Index>();
  spec.geometry.views = d["views"].get<Index>();
  spec.geometry.height = d["height"].get<Index>();
  spec.geometry.width = d["width"].get<Index>();
  spec.geometry.elevation_deg = d["elevation_deg"].get<double>();
  spec.validate();
  const int requested = d["workers"].get<int>();
  const int workers = requested > 0 ? std::min(requested, worker_limit()) : worker_limit();
  const auto out = prepare_out(doc, true);
  log({{"event", "gen-data"}, {"seed", std::to_string(spec.seed)}, {"workers", std::to_string(workers)}});
  const auto data = make_dataset(out, spec, workers);
  std::cout << json(data.manifest).dump(2) << '\n';
  log({{"event", "done"}, {"train", std::to_string(data.train.size())}, {"val", std::to_string(data.val.size())},
       {"test", std::to_string(data.test.size())}});
  return 0;
}

template <typename Scalar>
json train_run(const MVTConfig& config, const TrainConfig& tc, const Dataset& data, const fs::path& out) {
  const auto train_set = with_views(data.train, config.views);
  const auto val_set = with_views(data.val, config.views);
  MVTModel<Scalar> model(config, tc.seed);
  const auto initial = evaluate(model, val_set);
  log({{"event", "start"}, {"params", std::to_string(model.parameter_count())},
       {"initial_val_acc", num(initial.accuracy)}});
  TrainOptions options;
  options.out_dir = out;
  options.on_epoch = [](const EpochMetrics& m) {
    log({{"event", "epoch"}, {"epoch", std::to_string(m.epoch)}, {"train_loss", num(m.train_loss)},
         {"train_acc", num(m.train_acc)}, {"val_acc", m.val_acc < 0 ? "" : num(m.val_acc)},
         {"seconds", num(m.seconds)}});
  };
  const auto result = train(model, train_set, val_set, tc, options);
  const double final_acc = result.history.back().val_acc;

  const auto reloaded = load_checkpoint<Scalar>(out / "final.mvtc");
  const double check = evaluate(reloaded, val_set).accuracy;
  if (check != final_acc)
    throw NumericError("reloaded checkpoint scores " + num(check) + " but training reported " + num(final_acc));

  json summary{{"params", model.parameter_count()},
               {"flops_fwd", attention_flops(config).total},
               {"epochs_run", result.history.size()},
               {"initial_val_acc", initial.accuracy},
               {"final_val_acc", final_acc},
               {"best_val_acc", result.best_val_acc},
               {"best_epoch", result.best_epoch},
               {"checkpoint_verified", true}};
  io::write_file(out / "train.json", summary.dump(2) + "\n");
  return summary;
}

json model_defaults() { return {{"out", ""}, {"data", ""}, {"model", json::object()}, {"train", TrainConfig{}}}; }

int cmd_train(const Command& cmd) {
  const json doc = resolve(cmd, model_defaults());
  const auto config = doc["model"].get<MVTConfig>();
  const auto tc = doc["train"].get<TrainConfig>();
  const auto data_dir = require(doc, "data", "--data");
  const auto out = prepare_out(doc, true);
  const auto data = load_dataset(data_dir);
  check_compatible(data.manifest, config);
  const json summary = config.dtype == DType::F64 ? train_run<double>(config, tc, data, out)
                                                  : train_run<float>(config, tc, data, out);
  std::cout << summary.dump(2) << '\n';
  log({{"event", "done"}, {"final_val_acc", num(summary["final_val_acc"].get<double>())}});
  return 0;
}

int cmd_eval(const Command& cmd) {
  const json doc = resolve(cmd, {{"out", ""}, {"data", ""}, {"ckpt", ""}, {"split", "val"}, {"batch", 32}});
  const auto ckpt = require(doc, "ckpt", "--ckpt");
  const auto data_dir = require(doc, "data", "--data");
  const auto split = doc["split"].get<std::string>();
  if (split != "train" && split != "val" && split != "test")
    throw ConfigError("--split must be train, val or test, got '" + split + "'");
  const auto batch = doc["batch"].get<Index>();
  if (batch < 1) throw ConfigError("--batch must be >= 1");
  const auto out = prepare_out(doc, false);

  const auto config = peek_checkpoint_config(ckpt);
  const auto data = load_dataset(data_dir);
  check_compatible(data.manifest, config);
  const auto& all = split == "train" ? data.train : split == "val" ? data.val : data.test;
  if (all.empty()) throw ConfigError("split '" + split + "' is empty");
  const auto samples = with_views(all, config.views);
  const auto r = config.dtype == DType::F64 ? evaluate(load_checkpoint<double>(ckpt), samples, batch)
                                            : evaluate(load_checkpoint<float>(ckpt), samples, batch);
  json confusion = json::array();
  for (Index i = 0; i < r.confusion.rows(); ++i) {
    std::vector<int> row;
    for (Index k = 0; k < r.confusion.cols(); ++k) row.push_back(r.confusion(i, k));
    confusion.push_back(row);
  }
  const json report{{"split", split},
                    {"samples", samples.size()},
                    {"accuracy", r.accuracy},
                    {"loss", r.loss},
                    {"confusion", confusion}};
  if (!out.empty()) io::write_file(out / "eval.json", report.dump(2) + "\n");
  std::cout << report.dump(2) << '\n';
  log({{"event", "done"}, {"accuracy", num(r.accuracy)}, {"loss", num(r.loss)}});
  return 0;
}

int cmd_sweep(const Command& cmd) {
  auto defaults = model_defaults();
  defaults["sweep"] = sweep_defaults();
  const json doc = resolve(cmd, defaults);
  const auto& s = doc["sweep"];
  SweepSpec spec;
  spec.axis = parse_axis(s["axis"].get<std::string>());
  spec.base = doc["model"].get<MVTConfig>();
  spec.train = doc["train"].get<TrainConfig>();
  spec.seeds = as_list(s["seeds"]);
  spec.total = s["total"].get<Index>();
  spec.fixed_local = s["fixed_local"].get<Index>();
  for (const auto v : as_list(s["grid"])) spec.grid.push_back(static_cast<Index>(v));
  spec.resume = s["resume"].get<bool>();
  spec.workers = std::clamp(s["workers"].get<int>(), 1, worker_limit());
  const auto data_dir = require(doc, "data", "--data");
  spec.out_dir = prepare_out(doc, true);
  spec.validate();
  const auto data = load_dataset(data_dir);
  log({{"event", "sweep"}, {"axis", to_string(spec.axis)}, {"cells", std::to_string(sweep_cells(spec).size())},
       {"seeds", std::to_string(spec.seeds.size())}, {"workers", std::to_string(spec.workers)}});
  const auto table = run_sweep(spec, data);
  std::cout << sweep_csv(table);
  const auto& best = table.cells[static_cast<std::size_t>(table.best)];
  log({{"event", "done"}, {"best_cell", best.cell_id}, {"mean_acc", num(best.mean_acc)}});
  return 0;
}

int cmd_bench(const Command& cmd) {
  const json doc = resolve(cmd, {{"out", ""}, {"model", json::object()}, {"bench", {{"batch", 8}, {"steps", 3}, {"seed", 0}}}});
  const auto config = doc["model"].get<MVTConfig>();
  const auto& b = doc["bench"];
  const auto out = prepare_out(doc, false);
  const auto report = bench(config, b["batch"].get<Index>(), b["steps"].get<Index>(), b["seed"].get<std::uint64_t>());
  const json j = report;
  if (!out.empty()) io::write_file(out / "bench.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  log({{"event", "done"}, {"flops_fwd", std::to_string(report.flops.total)}, {"params", std::to_string(report.params)},
       {"seconds_per_step", num(report.seconds_per_step)}});
  return 0;
}

int fail(const char* kind, const std::exception& e, int code) {
  log({{"event", "error"}, {"kind", kind}, {"exit", std::to_string(code)}, {"message", e.what()}});
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view transformer: dataset generation, training, evaluation, sweeps and benchmarks.\n"
               "Exit codes: 0 success, 2 config or usage error, 3 I/O error, 4 numeric failure.\n"
               "MVT_THREADS caps worker threads."};
  app.require_subcommand(1);

  Command gen;
  init_command(gen, app, "gen-data", "Render a procedural multi-view dataset");
  gen.add("--out", "", "out", "Output dataset directory", "DIR");
  gen.add("--seed", "dataset", "seed", "Dataset seed");
  gen.add("--classes", "dataset", "classes", "Number of solid categories (1-6)");
  gen.add("--train", "dataset", "train", "Training samples");
  gen.add("--val", "dataset", "val", "Validation samples");
  gen.add("--test", "dataset", "test", "Test samples");
  gen.add("--views", "dataset", "views", "Views per object");
  gen.add("--height", "dataset", "height", "View height in pixels");
  gen.add("--width", "dataset", "width", "View width in pixels");
  gen.add("--elevation", "dataset", "elevation_deg", "Camera elevation in degrees", "REAL");
  gen.add("--workers", "dataset", "workers", "Render threads (0: all allowed by MVT_THREADS)");

  Command tr;
  init_command(tr, app, "train", "Train a model from scratch");
  tr.add("--data", "", "data", "Dataset directory", "DIR");
  tr.add("--out", "", "out", "Output directory for metrics.csv, best.mvtc and final.mvtc", "DIR");
  add_model_flags(tr);
  add_train_flags(tr, true);

  Command ev;
  init_command(ev, app, "eval", "Evaluate a checkpoint on a dataset split");
  ev.add("--ckpt", "", "ckpt", "Checkpoint file", "FILE");
  ev.add("--data", "", "data", "Dataset directory", "DIR");
  ev.add("--split", "", "split", "Split: train, val or test", "NAME");
  ev.add("--batch", "", "batch", "Evaluation batch size");
  ev.add("--out", "", "out", "Optional directory for eval.json", "DIR");

  Command sw;
  init_command(sw, app, "sweep", "Run an ablation sweep");
  sw.add("--data", "", "data", "Dataset directory", "DIR");
  sw.add("--out", "", "out", "Sweep output directory", "DIR");
  sw.add("--axis", "sweep", "axis", "Axis: block-split, view-count or pooling", "NAME");
  sw.add("--seeds", "sweep", "seeds", "Comma-separated seeds, one run per seed and cell", "LIST");
  sw.add("--total", "sweep", "total", "Block split: S+T held at this total");
  sw.add("--fixed-local", "sweep", "fixed_local", "Block split: hold S fixed and sweep T over the grid");
  sw.add("--grid", "sweep", "grid", "Comma-separated T or L values (default: the axis grid)", "LIST");
  sw.add_switch("--resume", "sweep", "resume", "Skip runs whose results already exist");
  sw.add("--workers", "sweep", "workers", "Parallel runs (capped by MVT_THREADS)");
  add_model_flags(sw);
  add_train_flags(sw, false);

  Command be;
  init_command(be, app, "bench", "Report FLOPs, parameters and measured step time");
  be.add("--out", "", "out", "Optional directory for bench.json", "DIR");
  be.add("--batch", "bench", "batch", "Objects per timed step");
  be.add("--steps", "bench", "steps", "Timed training steps");
  be.add("--seed", "bench", "seed", "Seed for weights and random views");
  add_model_flags(be);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    log({{"event", "start"}, {"command", app.get_subcommands().front()->get_name()},
         {"threads", std::to_string(worker_limit())}});
    if (gen.app->parsed()) return cmd_gen_data(gen);
    if (tr.app->parsed()) return cmd_train(tr);
    if (ev.app->parsed()) return cmd_eval(ev);
    if (sw.app->parsed()) return cmd_sweep(sw);
    return cmd_bench(be);
  } catch (const ConfigError& e) {
    return fail("config", e, 2);
  } catch (const DimensionError& e) {
    return fail("config", e, 2);
  } catch (const ContractError& e) {
    return fail("config", e, 2);
  } catch (const nlohmann::json::exception& e) {
    return fail("config", e, 2);
  } catch (const IoError& e) {
    return fail("io", e, 3);
  } catch (const FormatError& e) {
    return fail("io", e, 3);
  } catch (const NumericError& e) {
    return fail("numeric", e, 4);
  } catch (const DegenerateShapeError& e) {
    return fail("numeric", e, 4);
  } catch (const std::exception& e) {
    return fail("internal", e, 1);
  }
}
