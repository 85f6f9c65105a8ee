// metafun command-line entry point: train, eval, fgd, export-curves, gen-features.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "metafun/config.hpp"
#include "metafun/errors.hpp"
#include "metafun/fgd.hpp"
#include "metafun/tasks.hpp"
#include "metafun/training.hpp"

namespace fs = std::filesystem;
using namespace metafun;

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

KeyValues load_pairs(const std::string& config_path, const std::vector<std::string>& sets) {
  KeyValues pairs = config_path.empty() ? KeyValues{} : read_config_file(config_path);
  for (const std::string& s : sets) pairs.push_back(parse_assignment(s));
  return pairs;
}

fs::path make_run_dir(const std::string& out, std::uint64_t hash) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  const std::string base = std::string(stamp) + "-" + hex64(hash);
  fs::create_directories(out);
  fs::path dir = fs::path(out) / base;
  for (int i = 1; fs::exists(dir); ++i) dir = fs::path(out) / (base + "-" + std::to_string(i));
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(6) << v;
  return os.str();
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool quiet = false;
};

int cmd_train(const TrainArgs& a) {
  KeyValues pairs = load_pairs(a.config, a.sets);
  if (a.seed) pairs.emplace_back("seed", std::to_string(*a.seed));
  if (a.out) pairs.emplace_back("out", *a.out);
  const RunConfig cfg = resolve_config(pairs);
  const std::uint64_t hash = config_hash(cfg);
  const auto sampler = make_sampler(cfg.task);
  Model model = build_model(cfg, *sampler);
  const fs::path dir = make_run_dir(cfg.out, hash);
  write_text(dir / "config.txt", canonical_config(cfg));
  if (!a.quiet) {
    std::cerr << "run directory " << dir.string() << "\n"
              << "task " << sampler->name() << ", " << model.store.scalar_count() << " parameters\n";
  }

  const auto t0 = std::chrono::steady_clock::now();
  TrainResult result = meta_train(std::move(model), *sampler, [&](const MetricRecord& r) {
    if (!a.quiet) std::cerr << "step " << r.step << " " << r.split << " " << r.metric << " " << fmt(r.value) << "\n";
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  write_metrics_jsonl((dir / "metrics.jsonl").string(), result.log);
  save_checkpoint((dir / "checkpoint.bin").string(), result.model.store, hash);
  nlohmann::ordered_json summary;
  summary["config_hash"] = hex64(hash);
  summary["steps_run"] = result.steps_run;
  summary["best_step"] = result.best_step;
  summary["selection_metric"] = selection_metric(result.model);
  summary["best_value"] = result.best_value;
  summary["early_stopped"] = result.early_stopped;
  summary["wall_seconds"] = seconds;
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << dir.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------- eval

// Keys that only change which episodes are drawn, not the model.
const std::vector<std::string> kEvalKeys = {"context-min", "context-max", "num-targets", "targets-per-class"};

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::vector<std::string> sets;
  std::size_t episodes = 500;
  std::uint64_t seed = 0;
  std::string split = "test";
  std::string out;
};

Model load_model(const RunConfig& cfg, const EpisodeSampler& sampler, const std::string& checkpoint) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  const std::uint64_t hash = config_hash(cfg);
  if (ck.config_hash != hash) {
    throw ConfigError("checkpoint " + checkpoint + " was written for config hash " + hex64(ck.config_hash) +
                      ", the given config hashes to " + hex64(hash));
  }
  Model model = build_model(cfg, sampler);
  model.store.assign(ck.values);
  return model;
}

int cmd_eval(const EvalArgs& a) {
  KeyValues pairs = read_config_file(a.config);
  RunConfig cfg = resolve_config(pairs);
  const auto base_sampler = make_sampler(cfg.task);
  const Model model = load_model(cfg, *base_sampler, a.checkpoint);

  for (const std::string& s : a.sets) {
    const auto kv = parse_assignment(s);
    if (std::find(kEvalKeys.begin(), kEvalKeys.end(), kv.first) == kEvalKeys.end()) {
      throw ConfigError("config key '" + kv.first + "' cannot be overridden at evaluation (it changes the model)");
    }
    pairs.push_back(kv);
  }
  cfg = resolve_config(pairs);
  const auto sampler = make_sampler(cfg.task);
  Split split = Split::test;
  if (a.split == "val") split = Split::val;
  else if (a.split == "train") split = Split::train;
  else if (a.split != "test") throw ConfigError("--split must be train, val or test");

  const Evaluation ev = evaluate(model, *sampler, a.episodes, a.seed, split);
  std::vector<MetricRecord> records;
  for (const MetricSummary& m : ev.metrics) {
    std::cout << m.metric << " " << fmt(m.mean) << " +- " << fmt(m.stddev) << "\n";
    records.push_back({0, split_name(split), m.metric, m.mean});
    records.push_back({0, split_name(split), m.metric + "_std", m.stddev});
  }
  const std::string out =
      a.out.empty() ? (fs::path(a.checkpoint).parent_path() / ("eval-" + std::to_string(a.seed) + ".jsonl")).string()
                    : a.out;
  write_metrics_jsonl(out, records);
  return 0;
}

// -------------------------------------------------------------------- fgd

struct FgdArgs {
  std::string task = "sinusoid";
  double alpha = 0.1;
  std::size_t iters = 5;
  double lengthscale = 1.0;
  std::size_t episodes = 100;
  std::uint64_t seed = 0;
  bool as_metafun = false;
  double tolerance = 1e-9;
};

int cmd_fgd(const FgdArgs& a) {
  TaskSpec spec;
  spec.name = a.task;
  if (a.task == "gp") {
    RunConfig c = resolve_config({{"task", "gp"}});
    spec = c.task;
  } else if (a.task != "sinusoid" && a.task != "clusters") {
    throw ConfigError("fgd: --task must be sinusoid, gp or clusters");
  }
  const auto sampler = make_sampler(spec);
  fgd::Config cfg;
  cfg.alpha = a.alpha;
  cfg.steps = a.iters;
  cfg.lengthscale = a.lengthscale;
  const bool classify = sampler->kind() == TaskKind::classification;
  cfg.loss = classify ? fgd::Loss::cross_entropy : fgd::Loss::squared;

  std::vector<double> metric, deviation;
  for (std::size_t i = 0; i < a.episodes; ++i) {
    Rng rng(derive_seed(a.seed, i));
    const Episode ep = sampler->sample(rng, Split::test);
    const fgd::Run run = fgd::run(cfg, ep.context_x, ep.context_y, ep.target_x);
    const Tensor& f = run.tracked;
    if (classify) {
      std::size_t correct = 0;
      for (std::size_t r = 0; r < f.rows(); ++r) {
        std::size_t best = 0, label = 0;
        for (std::size_t k = 1; k < f.cols(); ++k) {
          if (f(r, k) > f(r, best)) best = k;
          if (ep.target_y(r, k) > ep.target_y(r, label)) label = k;
        }
        correct += best == label;
      }
      metric.push_back(static_cast<double>(correct) / static_cast<double>(f.rows()));
    } else {
      double s = 0.0;
      for (std::size_t k = 0; k < f.size(); ++k) s += (f[k] - ep.target_y[k]) * (f[k] - ep.target_y[k]);
      metric.push_back(s / static_cast<double>(f.rows()));
    }
    if (a.as_metafun) {
      const auto traj = fgd::encoder_trajectory(cfg, ep.context_x, ep.context_y, ep.target_x, classify);
      double dev = 0.0;
      for (std::size_t t = 0; t < traj.size(); ++t) dev = std::max(dev, max_abs_diff(traj[t], run.trajectory[t]));
      deviation.push_back(dev);
    }
  }
  double mean = 0.0, var = 0.0;
  for (double v : metric) mean += v;
  mean /= static_cast<double>(metric.size());
  for (double v : metric) var += (v - mean) * (v - mean);
  var /= static_cast<double>(metric.size());
  std::cout << (classify ? "accuracy " : "mse ") << fmt(mean) << " +- " << fmt(std::sqrt(var)) << "\n";
  if (a.as_metafun) {
    const double worst = *std::max_element(deviation.begin(), deviation.end());
    const bool ok = worst <= a.tolerance;
    std::cout << "as-metafun max deviation " << std::scientific << std::setprecision(3) << worst
              << (ok ? " (agree)" : " (DISAGREE)") << "\n";
    if (!ok) {
      std::cerr << "error: encoder and functional gradient descent disagree by " << worst << "\n";
      return 1;
    }
  }
  return 0;
}

// ---------------------------------------------------------- export-curves

struct ExportArgs {
  std::string metrics;
  std::string what = "curves";
  std::string config;
  std::string checkpoint;
  std::uint64_t seed = 0;
  std::size_t grid = 100;
  std::size_t context = 0;
};

int export_curves(std::istream& in) {
  std::cout << "step,series,value\n";
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      std::cout << j.at("step").get<std::size_t>() << "," << j.at("split").get<std::string>() << "/"
                << j.at("metric").get<std::string>() << "," << std::setprecision(17) << j.at("value").get<double>()
                << "\n";
    } catch (const std::exception& e) {
      throw DataError("metrics line " + std::to_string(lineno) + ": malformed record (" + e.what() + ")");
    }
  }
  return 0;
}

int export_predictive(const ExportArgs& a) {
  if (a.config.empty() || a.checkpoint.empty()) throw UsageError("predictive export needs --config and --checkpoint");
  RunConfig cfg = resolve_config(read_config_file(a.config));
  if (cfg.task.name != "sinusoid" && cfg.task.name != "gp") throw ConfigError("predictive export needs a 1-D regression task");
  const auto sampler = make_sampler(cfg.task);
  const Model model = load_model(cfg, *sampler, a.checkpoint);

  Rng rng(a.seed);
  RegressionTask task;
  const std::size_t nc = a.context ? a.context : cfg.task.context_max;
  double lo = -5.0, hi = 5.0;
  GpConfig gp;
  if (cfg.task.name == "gp") {
    task = sample_gp_task(rng, nc, 0, gp);
    lo = gp.x_min;
    hi = gp.x_max;
  } else {
    task = sample_sinusoid_task(rng, nc, 0);
  }
  Tensor grid = Tensor::matrix(a.grid, 1);
  for (std::size_t i = 0; i < a.grid; ++i)
    grid[i] = a.grid == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(a.grid - 1);
  const Prediction at_grid = predict_regression(model, task.context_x, task.context_y, grid);
  const Prediction at_context = predict_regression(model, task.context_x, task.context_y, task.context_x);

  std::cout << "x,series,value\n" << std::setprecision(17);
  for (std::size_t i = 0; i < task.context_x.rows(); ++i) {
    std::cout << task.context_x[i] << ",context_y," << task.context_y[i] << "\n";
    std::cout << task.context_x[i] << ",context_mean," << at_context.mean[i] << "\n";
  }
  std::optional<GpPosterior> oracle;
  if (cfg.task.name == "gp") oracle = gp_oracle_predict(task.context_x, task.context_y, grid, gp);
  for (std::size_t i = 0; i < a.grid; ++i) {
    std::cout << grid[i] << ",mean," << at_grid.mean[i] << "\n";
    if (at_grid.stddev) std::cout << grid[i] << ",std," << (*at_grid.stddev)[i] << "\n";
    if (oracle) {
      std::cout << grid[i] << ",oracle_mean," << oracle->mean[i] << "\n";
      std::cout << grid[i] << ",oracle_std," << oracle->stddev[i] << "\n";
    } else {
      std::cout << grid[i] << ",truth," << sinusoid(task.amplitude, task.phase, grid[i]) << "\n";
    }
  }
  return 0;
}

int cmd_export(const ExportArgs& a) {
  if (a.what == "predictive") return export_predictive(a);
  if (a.what != "curves") throw UsageError("--what must be curves or predictive");
  if (a.metrics.empty() || a.metrics == "-") return export_curves(std::cin);
  std::ifstream in(a.metrics);
  if (!in) throw DataError("cannot read metrics file " + a.metrics);
  return export_curves(in);
}

// ----------------------------------------------------------- gen-features

struct GenArgs {
  std::string out;
  std::size_t classes = 20;
  std::size_t dim = 16;
  std::size_t per_class = 50;
  double margin = 5.0;
  std::uint64_t seed = 0;
};

int cmd_gen_features(const GenArgs& a) {
  Rng rng(a.seed);
  const FeatureDataset ds = generate_cluster_features(rng, a.classes, a.dim, a.per_class, a.margin);
  save_feature_dataset(a.out, ds);
  std::cout << "wrote " << a.classes << " classes x " << a.per_class << " examples, dim " << a.dim << " to " << a.out
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MetaFun meta-learning engine"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* t = app.add_subcommand("train", "meta-train a model from a config file");
  t->add_option("--config", train.config, "key = value config file")->required();
  t->add_option("--set", train.sets, "override key=value (repeatable, last wins)");
  t->add_option("--seed", train.seed, "random seed (overrides the config)");
  t->add_option("--out", train.out, "parent directory for the run directory");
  t->add_flag("--quiet", train.quiet, "no progress output");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--config", eval.config, "config the checkpoint was trained with")->required();
  e->add_option("--checkpoint", eval.checkpoint, "checkpoint.bin")->required();
  e->add_option("--set", eval.sets, "episode overrides: context-min, context-max, num-targets, targets-per-class");
  e->add_option("--episodes", eval.episodes, "number of episodes")->check(CLI::PositiveNumber);
  e->add_option("--seed", eval.seed, "evaluation seed");
  e->add_option("--split", eval.split, "train, val or test");
  e->add_option("--out", eval.out, "metrics JSONL path (default next to the checkpoint)");

  FgdArgs fg;
  auto* f = app.add_subcommand("fgd", "functional gradient descent baseline");
  f->add_option("--task", fg.task, "sinusoid, gp or clusters");
  f->add_option("--alpha", fg.alpha, "step size");
  f->add_option("--iters", fg.iters, "number of steps");
  f->add_option("--lengthscale", fg.lengthscale, "RBF lengthscale");
  f->add_option("--episodes", fg.episodes, "number of episodes")->check(CLI::PositiveNumber);
  f->add_option("--seed", fg.seed, "episode seed");
  f->add_flag("--as-metafun", fg.as_metafun, "also run the encoder and require agreement");
  f->add_option("--tolerance", fg.tolerance, "agreement tolerance for --as-metafun");

  ExportArgs ex;
  auto* x = app.add_subcommand("export-curves", "metrics JSONL or predictive dump to CSV on stdout");
  x->add_option("metrics", ex.metrics, "metrics JSONL (default stdin)");
  x->add_option("--what", ex.what, "curves or predictive");
  x->add_option("--config", ex.config, "config (predictive)");
  x->add_option("--checkpoint", ex.checkpoint, "checkpoint (predictive)");
  x->add_option("--seed", ex.seed, "task seed (predictive)");
  x->add_option("--grid", ex.grid, "grid points (predictive)")->check(CLI::PositiveNumber);
  x->add_option("--context", ex.context, "context points (predictive, default context-max)");

  GenArgs gen;
  auto* gf = app.add_subcommand("gen-features", "write a synthetic cluster feature file");
  gf->add_option("--out", gen.out, "output path")->required();
  gf->add_option("--classes", gen.classes, "number of classes");
  gf->add_option("--dim", gen.dim, "feature dimension");
  gf->add_option("--per-class", gen.per_class, "examples per class");
  gf->add_option("--margin", gen.margin, "centre separation in cluster standard deviations");
  gf->add_option("--seed", gen.seed, "random seed");

  CLI11_PARSE(app, argc, argv);
  try {
    if (t->parsed()) return cmd_train(train);
    if (e->parsed()) return cmd_eval(eval);
    if (f->parsed()) return cmd_fgd(fg);
    if (x->parsed()) return cmd_export(ex);
    if (gf->parsed()) return cmd_gen_features(gen);
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  }
  return 1;
}
