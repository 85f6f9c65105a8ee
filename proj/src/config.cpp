#include "metafun/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "metafun/errors.hpp"

namespace metafun {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("config key '" + key + "': invalid value '" + value + "' (expected " + expected + ")");
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(out)) bad_value(key, v, "a finite number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "true or false");
}

std::vector<std::string> split(const std::string& v, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(v);
  while (std::getline(is, cur, sep)) out.push_back(trim(cur));
  return out;
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty() || v == "default") return out;
  for (const std::string& part : split(v, ',')) out.push_back(to_size(key, part));
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out.empty() ? "default" : out;
}

template <class E>
struct EnumName {
  E value;
  const char* name;
};

template <class E, std::size_t N>
E to_enum(const std::string& key, const std::string& v, const EnumName<E> (&names)[N]) {
  std::string expected;
  for (const auto& n : names) {
    if (v == n.name) return n.value;
    expected += (expected.empty() ? "" : ", ") + std::string(n.name);
  }
  bad_value(key, v, "one of " + expected);
}

template <class E, std::size_t N>
std::string from_enum(E v, const EnumName<E> (&names)[N]) {
  for (const auto& n : names)
    if (n.value == v) return n.name;
  return "?";
}

constexpr EnumName<InitMode> kInitModes[] = {
    {InitMode::zero, "zero"}, {InitMode::constant, "constant"}, {InitMode::parametric, "parametric"}};
constexpr EnumName<PoolingMode> kPoolings[] = {{PoolingMode::attention, "dfp"}, {PoolingMode::kernel, "kfp"}};
constexpr EnumName<UpdaterMode> kUpdaters[] = {{UpdaterMode::nn, "nn"}, {UpdaterMode::gradient, "gradient"}};
constexpr EnumName<DecoderChoice> kDecoders[] = {{DecoderChoice::automatic, "auto"},
                                                 {DecoderChoice::hypernet, "hypernet"},
                                                 {DecoderChoice::concat, "concat"},
                                                 {DecoderChoice::identity, "identity"},
                                                 {DecoderChoice::leo, "leo"}};

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_KEY(NAME, FIELD)                                                                                \
  Key {                                                                                                      \
    NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_size(k, v); },        \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                                           \
  }
#define DOUBLE_KEY(NAME, FIELD)                                                                              \
  Key {                                                                                                      \
    NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_double(k, v); },      \
        [](const RunConfig& c) { return fmt_double(c.FIELD); }                                               \
  }
#define BOOL_KEY(NAME, FIELD)                                                                                \
  Key {                                                                                                      \
    NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_bool(k, v); },        \
        [](const RunConfig& c) { return fmt_bool(c.FIELD); }                                                 \
  }
#define ENUM_KEY(NAME, FIELD, TABLE)                                                                         \
  Key {                                                                                                      \
    NAME, [](RunConfig& c, const std::string& k, const std::string& v) { c.FIELD = to_enum(k, v, TABLE); }, \
        [](const RunConfig& c) { return from_enum(c.FIELD, TABLE); }                                         \
  }

std::string task_string(const TaskSpec& t) {
  if (t.name != "features") return t.name;
  std::string out = "features:";
  for (std::size_t i = 0; i < t.feature_paths.size(); ++i) out += (i ? "," : "") + t.feature_paths[i];
  return out;
}

void set_task(TaskSpec& t, const std::string& key, const std::string& v) {
  if (v == "sinusoid" || v == "gp" || v == "clusters") {
    t.name = v;
    t.feature_paths.clear();
    return;
  }
  if (v.rfind("features:", 0) == 0) {
    t.name = "features";
    t.feature_paths = split(v.substr(9), ',');
    if (t.feature_paths.empty() || t.feature_paths.size() > 3 || t.feature_paths.front().empty()) {
      bad_value(key, v, "features:<train>[,<val>[,<test>]]");
    }
    return;
  }
  bad_value(key, v, "sinusoid, gp, clusters or features:<path>");
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      Key{"task", [](RunConfig& c, const std::string& k, const std::string& v) { set_task(c.task, k, v); },
          [](const RunConfig& c) { return task_string(c.task); }},
      SIZE_KEY("num-iters", train.num_iters),
      SIZE_KEY("nn-layers", train.nn_layers),
      SIZE_KEY("nn-sizes", train.nn_sizes),
      SIZE_KEY("embedding-layers", train.embedding_layers),
      Key{"dim-reprs",
          [](RunConfig& c, const std::string& k, const std::string& v) {
            c.train.dim_reprs = v == "nn-sizes" ? 0 : to_size(k, v);
          },
          [](const RunConfig& c) { return std::to_string(c.train.repr_width()); }},
      ENUM_KEY("init-mode", train.init_mode, kInitModes),
      DOUBLE_KEY("outer-lr", train.outer_lr),
      DOUBLE_KEY("initial-inner-lr", train.initial_inner_lr),
      DOUBLE_KEY("dropout-rate", train.dropout_rate),
      DOUBLE_KEY("l2-weight", train.l2_weight),
      DOUBLE_KEY("orthogonality-penalty-weight", train.orthogonality_penalty_weight),
      DOUBLE_KEY("label-smoothing", train.label_smoothing),
      SIZE_KEY("meta-batch-size", train.meta_batch_size),
      SIZE_KEY("max-steps", train.max_steps),
      SIZE_KEY("eval-every", train.eval_every),
      SIZE_KEY("eval-episodes", train.eval_episodes),
      SIZE_KEY("patience", train.patience),
      Key{"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.train.seed = to_u64(k, v); },
          [](const RunConfig& c) { return std::to_string(c.train.seed); }},
      ENUM_KEY("pooling", train.pooling, kPoolings),
      BOOL_KEY("embedding-identity", train.embedding_identity),
      DOUBLE_KEY("lengthscale", train.lengthscale),
      BOOL_KEY("train-lengthscale", train.train_lengthscale),
      ENUM_KEY("updater", train.updater, kUpdaters),
      ENUM_KEY("decoder", train.decoder, kDecoders),
      BOOL_KEY("gaussian-head", train.gaussian_head),
      Key{"predictive-sizes",
          [](RunConfig& c, const std::string& k, const std::string& v) { c.train.predictive_sizes = to_sizes(k, v); },
          [](const RunConfig& c) { return join(c.train.predictive_sizes); }},
      SIZE_KEY("classifier-hidden-layers", train.classifier_hidden_layers),
      SIZE_KEY("context-min", task.context_min),
      SIZE_KEY("context-max", task.context_max),
      SIZE_KEY("num-targets", task.num_targets),
      SIZE_KEY("ways", task.ways),
      SIZE_KEY("shots", task.shots),
      SIZE_KEY("targets-per-class", task.targets_per_class),
      SIZE_KEY("feature-dim", task.dim),
      DOUBLE_KEY("margin", task.margin),
  };
  return table;
}

#undef SIZE_KEY
#undef DOUBLE_KEY
#undef BOOL_KEY
#undef ENUM_KEY

const Key* find_key(const std::string& name) {
  for (const Key& k : keys())
    if (name == k.name) return &k;
  return nullptr;
}

void apply_task_defaults(RunConfig& c) {
  TaskSpec& t = c.task;
  if (t.name == "sinusoid") {
    t.context_min = t.context_max = 5;
    t.num_targets = 10;
  } else if (t.name == "gp") {
    t.context_min = 1;
    t.context_max = 20;
    t.num_targets = 20;
    c.train.gaussian_head = true;
  }
}

void validate_task(const TaskSpec& t) {
  if (t.context_min < 1) throw ConfigError("config key 'context-min': must be at least 1");
  if (t.context_max < t.context_min) throw ConfigError("config key 'context-max': must be >= context-min");
  if (t.num_targets < 1) throw ConfigError("config key 'num-targets': must be at least 1");
  if (t.ways < 2) throw ConfigError("config key 'ways': must be at least 2");
  if (t.shots < 1) throw ConfigError("config key 'shots': must be at least 1");
  if (t.targets_per_class < 1) throw ConfigError("config key 'targets-per-class': must be at least 1");
  if (t.dim < 1) throw ConfigError("config key 'feature-dim': must be at least 1");
  if (!(t.margin > 0.0)) throw ConfigError("config key 'margin': must be positive");
}

}  // namespace

std::string normalise_key(const std::string& key) {
  std::string out = trim(key);
  for (char& ch : out) ch = ch == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return out;
}

std::pair<std::string, std::string> parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + text + "'");
  std::string key = normalise_key(text.substr(0, eq));
  if (key.empty()) throw ConfigError("empty key in '" + text + "'");
  return {key, trim(text.substr(eq + 1))};
}

KeyValues parse_config_text(const std::string& text, const std::string& origin) {
  KeyValues out;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.find('=') == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    out.push_back(parse_assignment(line));
  }
  return out;
}

KeyValues read_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str(), path);
}

RunConfig resolve_config(const KeyValues& pairs) {
  RunConfig c;
  for (const auto& [k, v] : pairs) {
    if (normalise_key(k) == "task") set_task(c.task, "task", v);
  }
  apply_task_defaults(c);
  for (const auto& [raw, v] : pairs) {
    const std::string k = normalise_key(raw);
    if (k == "out") {
      c.out = v;
      continue;
    }
    const Key* key = find_key(k);
    if (!key) throw ConfigError("unknown config key '" + raw + "'");
    key->set(c, k, v);
  }
  validate_task(c.task);
  c.train.validate();
  return c;
}

std::string canonical_config(const RunConfig& config) {
  std::string out;
  for (const Key& k : keys()) out += std::string(k.name) + " = " + k.get(config) + "\n";
  return out;
}

std::uint64_t config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical_config(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.emplace_back(k.name);
  return out;
}

std::unique_ptr<EpisodeSampler> make_sampler(const TaskSpec& task) {
  validate_task(task);
  if (task.name == "sinusoid") {
    SinusoidSamplerConfig c;
    c.context_min = task.context_min;
    c.context_max = task.context_max;
    c.n_target = task.num_targets;
    return make_sinusoid_sampler(c);
  }
  if (task.name == "gp") {
    GpSamplerConfig c;
    c.context_min = task.context_min;
    c.context_max = task.context_max;
    c.n_target = task.num_targets;
    return make_gp_sampler(c);
  }
  if (task.name == "clusters") {
    return make_cluster_sampler({task.ways, task.shots, task.targets_per_class, task.dim, task.margin});
  }
  if (task.name == "features") {
    const auto& p = task.feature_paths;
    FeatureDataset train = load_feature_dataset(p.at(0), Split::train);
    FeatureDataset val = p.size() > 1 ? load_feature_dataset(p[1], Split::val) : FeatureDataset{};
    FeatureDataset test = p.size() > 2 ? load_feature_dataset(p[2], Split::test) : FeatureDataset{};
    return make_feature_sampler(std::move(train), std::move(val), std::move(test), task.ways, task.shots,
                                task.targets_per_class);
  }
  throw ConfigError("unknown task '" + task.name + "'");
}

Model build_model(const RunConfig& config, const EpisodeSampler& sampler) {
  return build_model(config.train, sampler.kind(), sampler.x_dim(), sampler.y_dim());
}

}  // namespace metafun
