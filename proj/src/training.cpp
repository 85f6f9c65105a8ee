#include "metafun/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <exception>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "metafun/adam.hpp"
#include "metafun/errors.hpp"

namespace metafun {

namespace {

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

}  // namespace

void TrainConfig::validate() const {
  require(num_iters <= 1000, "num-iters", "must be at most 1000");
  require(nn_layers >= 1, "nn-layers", "must be at least 1");
  require(nn_sizes >= 1, "nn-sizes", "must be at least 1");
  require(embedding_identity || embedding_layers >= 1, "embedding-layers", "must be at least 1");
  require(outer_lr >= 0.0 && std::isfinite(outer_lr), "outer-lr", "must be finite and non-negative");
  require(initial_inner_lr > 0.0 && std::isfinite(initial_inner_lr), "initial-inner-lr", "must be positive");
  require(dropout_rate >= 0.0 && dropout_rate < 1.0, "dropout-rate", "must lie in [0, 1)");
  require(l2_weight >= 0.0, "l2-weight", "must be non-negative");
  require(orthogonality_penalty_weight == 0.0, "orthogonality-penalty-weight",
          "reserved; only 0 is supported");
  require(label_smoothing >= 0.0 && label_smoothing < 1.0, "label-smoothing", "must lie in [0, 1)");
  require(meta_batch_size >= 1, "meta-batch-size", "must be at least 1");
  require(eval_every >= 1, "eval-every", "must be at least 1");
  require(eval_episodes >= 1, "eval-episodes", "must be at least 1");
  require(lengthscale > 0.0, "lengthscale", "must be positive");
  for (std::size_t w : predictive_sizes) require(w >= 1, "predictive-sizes", "widths must be positive");
  if (updater == UpdaterMode::gradient) {
    require(decoder == DecoderChoice::automatic || decoder == DecoderChoice::identity, "decoder",
            "the gradient updater is decoder-less (use identity or auto)");
    require(!gaussian_head, "gaussian-head", "not available with the gradient updater");
  }
  if (gaussian_head) {
    require(decoder != DecoderChoice::identity && decoder != DecoderChoice::leo, "gaussian-head",
            "needs the hypernet or concat decoder");
  }
}

// ------------------------------------------------------------------- model

Model build_model(const TrainConfig& config, TaskKind kind, std::size_t x_dim, std::size_t y_dim) {
  config.validate();
  if (x_dim == 0 || y_dim == 0) throw ConfigError("model: input and output widths must be positive");
  if (kind == TaskKind::classification && y_dim < 2) throw ConfigError("model: need at least 2 classes");

  Model m;
  m.config = config;
  m.kind = kind;
  m.x_dim = x_dim;
  m.y_dim = y_dim;
  Rng rng(derive_seed(config.seed, 0));

  const bool gradient = config.updater == UpdaterMode::gradient;
  const bool classify = kind == TaskKind::classification;
  std::size_t class_dim = 0;
  std::size_t repr_dim = 0;
  if (classify) {
    class_dim = gradient ? 1 : config.repr_width();
    repr_dim = y_dim * class_dim;
  } else {
    repr_dim = gradient ? y_dim : config.repr_width();
  }

  EncoderParams& enc = m.encoder;
  enc.iterations = config.num_iters;
  enc.repr_dim = repr_dim;
  enc.init_mode = config.init_mode;

  if (gradient) {
    enc.updater = GradientUpdater{classify ? GradientLoss::cross_entropy : GradientLoss::squared,
                                  classify ? y_dim : 0};
  } else if (classify) {
    enc.updater = make_classification_updater(m.store, "updater", y_dim, class_dim, config.nn_sizes,
                                              config.nn_layers, rng);
  } else {
    enc.updater = make_regression_updater(m.store, "updater", x_dim, y_dim, repr_dim, config.nn_sizes,
                                          config.nn_layers, rng);
  }

  PoolingConfig pc;
  pc.mode = config.pooling;
  pc.embedding_identity = config.embedding_identity;
  pc.embed_widths.assign(config.embedding_layers, config.nn_sizes);
  pc.lengthscale = config.lengthscale;
  pc.train_lengthscale = config.train_lengthscale;
  enc.pooling = Pooling::create(m.store, "pooling", pc, x_dim, rng);
  enc.log_alpha = m.store.add("log_alpha", Tensor::scalar(std::log(config.initial_inner_lr)));

  switch (config.init_mode) {
    case InitMode::zero:
      break;
    case InitMode::constant:
      enc.init_constant = m.store.add("init.constant", Tensor::matrix(1, repr_dim));
      break;
    case InitMode::parametric:
      enc.init_net = Mlp::create(m.store, "init",
                                 mlp_widths(x_dim, config.nn_sizes, config.nn_layers - 1, repr_dim), rng);
      break;
  }

  if (classify) {
    ClassificationDecoderConfig dc;
    dc.mode = gradient || config.decoder == DecoderChoice::identity ? ClassificationDecoderMode::identity
                                                                     : ClassificationDecoderMode::leo;
    if (!gradient && config.decoder != DecoderChoice::automatic && config.decoder != DecoderChoice::leo &&
        config.decoder != DecoderChoice::identity) {
      throw ConfigError("decoder: classification supports leo or identity");
    }
    dc.hidden_layers = config.classifier_hidden_layers;
    dc.width = config.nn_sizes;
    m.classification = make_classification_decoder(m.store, "decoder", dc, y_dim, class_dim, x_dim, rng);
  } else {
    RegressionDecoderConfig dc;
    switch (config.decoder) {
      case DecoderChoice::automatic:
        dc.mode = gradient ? RegressionDecoderMode::identity : RegressionDecoderMode::hypernet;
        break;
      case DecoderChoice::hypernet:
        dc.mode = RegressionDecoderMode::hypernet;
        break;
      case DecoderChoice::concat:
        dc.mode = RegressionDecoderMode::concat;
        break;
      case DecoderChoice::identity:
        dc.mode = RegressionDecoderMode::identity;
        break;
      case DecoderChoice::leo:
        throw ConfigError("decoder: leo is a classification decoder");
    }
    dc.gaussian = config.gaussian_head;
    dc.width = config.nn_sizes;
    dc.layers = config.nn_layers;
    dc.predictive_hidden = config.predictive_sizes.empty()
                               ? std::vector<std::size_t>(config.nn_layers - 1, config.nn_sizes)
                               : config.predictive_sizes;
    m.regression = make_regression_decoder(m.store, "decoder", dc, repr_dim, x_dim, y_dim, rng);
  }
  return m;
}

// ---------------------------------------------------------------- episodes

Tensor input_dropout(const Tensor& x, double rate, Rng& rng, Phase phase) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("input_dropout: rate must lie in [0, 1)");
  if (phase == Phase::eval || rate == 0.0) return x;
  Tensor out = x;
  const double keep = 1.0 / (1.0 - rate);
  for (double& v : out.elems()) v = rng.bernoulli(rate) ? 0.0 : v * keep;
  return out;
}

Tensor smooth_labels(const Tensor& y, double smoothing) {
  if (!(smoothing >= 0.0 && smoothing < 1.0)) throw ConfigError("label smoothing must lie in [0, 1)");
  if (smoothing == 0.0) return y;
  Tensor out = y;
  const double floor = smoothing / static_cast<double>(y.cols());
  for (double& v : out.elems()) v = (1.0 - smoothing) * v + floor;
  return out;
}

namespace {

struct Decoded {
  Var prediction;
  std::optional<Var> stddev;
  std::optional<Var> logits;
};

Decoded decode_targets(Graph& g, const Model& model, const EpisodeInputs& inputs, Phase phase, Rng& rng) {
  Encoder enc(g, model.encoder, inputs);
  const Repr r = enc.encode();
  Var rt = enc.target_rows(r);
  Var xt = enc.target_x();
  if (model.kind == TaskKind::classification) {
    const SampleMode mode = phase == Phase::train ? SampleMode::reparameterized : SampleMode::mean;
    Var logits = decode_classification_logits(g, *model.classification, rt, xt, mode, &rng);
    return {softmax_rows(logits), std::nullopt, logits};
  }
  if (model.regression->gaussian) {
    const GaussianPrediction p = decode_regression_gaussian(g, *model.regression, rt, xt);
    return {p.mean, p.stddev, std::nullopt};
  }
  return {decode_regression(g, *model.regression, rt, xt), std::nullopt, std::nullopt};
}

}  // namespace

EpisodeOutput episode_forward(Graph& g, const Model& model, const Episode& episode, Phase phase, Rng& rng) {
  if (episode.kind != model.kind) throw ConfigError("episode kind does not match the model");
  if (episode.target_x.rows() == 0) throw DataError("episode has no target points");
  if (episode.target_y.cols() != model.y_dim) throw DimensionError("episode label width does not match the model");
  const double rate = model.config.dropout_rate;
  EpisodeInputs inputs{input_dropout(episode.context_x, rate, rng, phase), episode.context_y,
                       input_dropout(episode.target_x, rate, rng, phase)};
  const Decoded d = decode_targets(g, model, inputs, phase, rng);
  EpisodeOutput out;
  out.prediction = d.prediction;
  out.stddev = d.stddev;
  if (d.logits) {
    out.loss = mean_softmax_cross_entropy(*d.logits, smooth_labels(episode.target_y, model.config.label_smoothing));
  } else if (d.stddev) {
    out.loss = mean_gaussian_nll(d.prediction, *d.stddev, episode.target_y);
  } else {
    out.loss = mean_squared_error(d.prediction, episode.target_y);
  }
  return out;
}

EpisodeMetrics episode_metrics(const Model& model, const Episode& episode, const EpisodeOutput& out) {
  EpisodeMetrics m;
  m.loss = out.loss.value().item();
  const Tensor& pred = out.prediction.value();
  const Tensor& y = episode.target_y;
  if (model.kind == TaskKind::classification) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.rows(); ++i) {
      std::size_t best = 0, label = 0;
      for (std::size_t k = 1; k < pred.cols(); ++k) {
        if (pred(i, k) > pred(i, best)) best = k;
        if (y(i, k) > y(i, label)) label = k;
      }
      correct += best == label;
    }
    m.accuracy = static_cast<double>(correct) / static_cast<double>(pred.rows());
  } else {
    double total = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) total += (pred[i] - y[i]) * (pred[i] - y[i]);
    m.mse = total / static_cast<double>(pred.rows());
    if (out.stddev) m.nll = m.loss;
  }
  return m;
}

// ---------------------------------------------------------------- gradients

namespace {

struct EpisodeGradient {
  double loss = 0.0;
  std::map<ParamId, Tensor> grads;  // parameters the loss reached
};

EpisodeGradient episode_gradient(const Model& model, const Episode& episode, std::uint64_t seed) {
  Graph g(&model.store);
  Rng rng(seed);
  const EpisodeOutput out = episode_forward(g, model, episode, Phase::train, rng);
  EpisodeGradient eg;
  eg.loss = out.loss.value().item();
  if (!std::isfinite(eg.loss)) return eg;
  g.backward(out.loss);
  eg.grads = g.take_param_grads();
  return eg;
}

BatchGradient reduce(const Model& model, std::vector<EpisodeGradient>& parts) {
  BatchGradient out;
  out.grads.reserve(model.store.size());
  for (ParamId i = 0; i < model.store.size(); ++i) out.grads.emplace_back(model.store.value(i).shape(), 0.0);
  const double inv = 1.0 / static_cast<double>(parts.size());
  for (const EpisodeGradient& p : parts) {
    out.loss += p.loss;
    out.episode_losses.push_back(p.loss);
    for (const auto& [id, grad] : p.grads) {
      double* dst = out.grads[id].data();
      const double* src = grad.data();
      for (std::size_t k = 0; k < grad.size(); ++k) dst[k] += src[k];
    }
  }
  out.loss *= inv;
  for (Tensor& t : out.grads)
    for (double& v : t.elems()) v *= inv;
  return out;
}

void check_batch(const std::vector<Episode>& episodes, const std::vector<std::uint64_t>& seeds) {
  if (episodes.empty()) throw UsageError("meta_batch_gradient: empty batch");
  if (episodes.size() != seeds.size()) throw UsageError("meta_batch_gradient: one seed per episode required");
}

}  // namespace

BatchGradient meta_batch_gradient(const Model& model, const std::vector<Episode>& episodes,
                                  const std::vector<std::uint64_t>& seeds) {
  check_batch(episodes, seeds);
  std::vector<EpisodeGradient> parts(episodes.size());
  std::vector<std::exception_ptr> errors(episodes.size());
  const auto n = static_cast<long>(episodes.size());
#pragma omp parallel for schedule(dynamic, 1)
  for (long b = 0; b < n; ++b) {
    const auto i = static_cast<std::size_t>(b);
    try {
      parts[i] = episode_gradient(model, episodes[i], seeds[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return reduce(model, parts);
}

BatchGradient meta_batch_gradient_serial(const Model& model, const std::vector<Episode>& episodes,
                                         const std::vector<std::uint64_t>& seeds) {
  check_batch(episodes, seeds);
  std::vector<EpisodeGradient> parts;
  parts.reserve(episodes.size());
  for (std::size_t i = 0; i < episodes.size(); ++i) parts.push_back(episode_gradient(model, episodes[i], seeds[i]));
  return reduce(model, parts);
}

double l2_norm_squared(const ParamStore& store) {
  double s = 0.0;
  for (ParamId i = 0; i < store.size(); ++i)
    for (double v : store.value(i).elems()) s += v * v;
  return s;
}

// --------------------------------------------------------------- evaluation

const MetricSummary* Evaluation::find(const std::string& name) const {
  for (const MetricSummary& m : metrics)
    if (m.metric == name) return &m;
  return nullptr;
}

const MetricSummary& Evaluation::get(const std::string& name) const {
  if (const MetricSummary* m = find(name)) return *m;
  throw UsageError("evaluation has no metric '" + name + "'");
}

Evaluation evaluate(const Model& model, const EpisodeSampler& sampler, std::size_t n_episodes, std::uint64_t seed,
                    Split split) {
  if (n_episodes == 0) throw UsageError("evaluate: need at least one episode");
  std::vector<EpisodeMetrics> per(n_episodes);
  std::vector<std::exception_ptr> errors(n_episodes);
  const auto n = static_cast<long>(n_episodes);
#pragma omp parallel for schedule(dynamic, 4)
  for (long b = 0; b < n; ++b) {
    const auto i = static_cast<std::size_t>(b);
    try {
      Rng rng(derive_seed(seed, i));
      const Episode ep = sampler.sample(rng, split);
      Graph g(&model.store);
      const EpisodeOutput out = episode_forward(g, model, ep, Phase::eval, rng);
      per[i] = episode_metrics(model, ep, out);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  Evaluation ev;
  ev.episodes = n_episodes;
  auto summarise = [&](const std::string& name, auto get) {
    if (!get(per.front())) return;
    double mean = 0.0;
    for (const EpisodeMetrics& m : per) mean += *get(m);
    mean /= static_cast<double>(per.size());
    double var = 0.0;
    for (const EpisodeMetrics& m : per) var += (*get(m) - mean) * (*get(m) - mean);
    var /= static_cast<double>(per.size());
    ev.metrics.push_back({name, mean, std::sqrt(var)});
  };
  summarise("loss", [](const EpisodeMetrics& m) { return std::optional<double>(m.loss); });
  summarise("mse", [](const EpisodeMetrics& m) { return m.mse; });
  summarise("nll", [](const EpisodeMetrics& m) { return m.nll; });
  summarise("accuracy", [](const EpisodeMetrics& m) { return m.accuracy; });
  return ev;
}

std::string selection_metric(const Model& model) {
  if (model.kind == TaskKind::classification) return "accuracy";
  return model.regression->gaussian ? "nll" : "mse";
}

bool higher_is_better(const std::string& metric) { return metric == "accuracy"; }

// ----------------------------------------------------------------- training

TrainResult meta_train(Model model, const EpisodeSampler& sampler, const ProgressFn& progress) {
  const TrainConfig& cfg = model.config;
  cfg.validate();
  if (sampler.kind() != model.kind || sampler.x_dim() != model.x_dim || sampler.y_dim() != model.y_dim) {
    throw ConfigError("task sampler does not match the model's input/output shape");
  }
  const std::uint64_t train_stream = derive_seed(cfg.seed, 1);
  const std::uint64_t val_stream = derive_seed(cfg.seed, 2);
  const std::string select = selection_metric(model);
  const bool higher = higher_is_better(select);

  TrainResult result;
  auto log = [&](std::size_t step, const char* split, const std::string& metric, double value) {
    result.log.push_back({step, split, metric, value});
    if (progress) progress(result.log.back());
  };
  auto validate = [&](std::size_t step) {
    const Evaluation ev = evaluate(model, sampler, cfg.eval_episodes, val_stream, Split::val);
    for (const MetricSummary& m : ev.metrics) log(step, "val", m.metric, m.mean);
    return ev.get(select).mean;
  };

  AdamState adam(model.store, AdamConfig{cfg.outer_lr});
  ParamStore best = model.store;
  result.best_value = validate(0);
  std::size_t stale = 0;
  double loss_sum = 0.0;
  std::size_t loss_count = 0;

  std::vector<Episode> episodes(cfg.meta_batch_size);
  std::vector<std::uint64_t> seeds(cfg.meta_batch_size);
  for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
    for (std::size_t b = 0; b < cfg.meta_batch_size; ++b) {
      const std::uint64_t s = derive_seed(train_stream, (step - 1) * cfg.meta_batch_size + b);
      Rng rng(s);
      episodes[b] = sampler.sample(rng, Split::train);
      seeds[b] = derive_seed(s, 1);
    }
    BatchGradient bg = meta_batch_gradient(model, episodes, seeds);
    double loss = bg.loss;
    if (cfg.l2_weight > 0.0) {
      loss += cfg.l2_weight * l2_norm_squared(model.store);
      for (ParamId i = 0; i < model.store.size(); ++i) {
        const Tensor& p = model.store.value(i);
        for (std::size_t k = 0; k < p.size(); ++k) bg.grads[i][k] += 2.0 * cfg.l2_weight * p[k];
      }
    }
    if (!std::isfinite(loss)) {
      std::size_t bad = 0;
      while (bad + 1 < bg.episode_losses.size() && std::isfinite(bg.episode_losses[bad])) ++bad;
      std::ostringstream msg;
      msg << "non-finite training loss at step " << step << " (episode " << bad << ", episode seed "
          << derive_seed(train_stream, (step - 1) * cfg.meta_batch_size + bad) << ")";
      throw NumericError(msg.str());
    }
    adam_step(adam, model.store, bg.grads);
    result.steps_run = step;
    loss_sum += loss;
    ++loss_count;

    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      log(step, "train", "loss", loss_sum / static_cast<double>(loss_count));
      loss_sum = 0.0;
      loss_count = 0;
      const double value = validate(step);
      const bool improved = higher ? value > result.best_value : value < result.best_value;
      if (improved) {
        result.best_value = value;
        result.best_step = step;
        best = model.store;
        stale = 0;
      } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
        result.early_stopped = true;
        break;
      }
    }
  }
  model.store = std::move(best);
  result.model = std::move(model);
  return result;
}

Prediction predict_regression(const Model& model, const Tensor& context_x, const Tensor& context_y,
                              const Tensor& query_x) {
  if (model.kind != TaskKind::regression) throw UsageError("predict_regression: model is a classifier");
  Graph g(&model.store);
  Rng rng(0);
  const EpisodeInputs inputs{context_x, context_y, query_x};
  const Decoded d = decode_targets(g, model, inputs, Phase::eval, rng);
  Prediction p{d.prediction.value(), std::nullopt};
  if (d.stddev) p.stddev = d.stddev->value();
  return p;
}

// ---------------------------------------------------------------------- I/O

std::string metric_record_json(const MetricRecord& record) {
  nlohmann::ordered_json j;
  j["step"] = record.step;
  j["split"] = record.split;
  j["metric"] = record.metric;
  j["value"] = record.value;
  return j.dump();
}

void write_metrics_jsonl(const std::string& path, const std::vector<MetricRecord>& records) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path + " for writing");
  for (const MetricRecord& r : records) os << metric_record_json(r) << '\n';
  if (!os) throw DataError("write failed: " + path);
}

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");
constexpr char kCheckpointMagic[8] = {'M', 'F', 'U', 'N', 'C', 'K', 'P', '1'};

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store, std::uint64_t config_hash) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path + " for writing");
  const std::vector<double> flat = store.flatten();
  const std::uint64_t count = flat.size();
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  os.write(reinterpret_cast<const char*>(&config_hash), sizeof config_hash);
  os.write(reinterpret_cast<const char*>(&count), sizeof count);
  os.write(reinterpret_cast<const char*>(flat.data()), static_cast<std::streamsize>(flat.size() * sizeof(double)));
  if (!os) throw DataError("write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path);
  char magic[sizeof kCheckpointMagic];
  Checkpoint ck;
  std::uint64_t count = 0;
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw DataError("checkpoint " + path + ": bad magic");
  }
  if (!is.read(reinterpret_cast<char*>(&ck.config_hash), sizeof ck.config_hash) ||
      !is.read(reinterpret_cast<char*>(&count), sizeof count)) {
    throw DataError("checkpoint " + path + ": truncated header");
  }
  if (count > (std::uint64_t{1} << 34)) throw DataError("checkpoint " + path + ": implausible size");
  ck.values.resize(count);
  if (!is.read(reinterpret_cast<char*>(ck.values.data()), static_cast<std::streamsize>(count * sizeof(double)))) {
    throw DataError("checkpoint " + path + ": truncated values");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint " + path + ": trailing bytes");
  return ck;
}

}  // namespace metafun
