#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "metafun/tasks.hpp"
#include "metafun/training.hpp"

namespace metafun {

struct TaskSpec {
  std::string name = "sinusoid";  // sinusoid | gp | clusters | features
  std::vector<std::string> feature_paths;  // train[,val[,test]] for `features`
  std::size_t context_min = 5, context_max = 5;
  std::size_t num_targets = 10;
  std::size_t ways = 5, shots = 5, targets_per_class = 15;
  std::size_t dim = 16;
  double margin = 5.0;
};

struct RunConfig {
  TrainConfig train;
  TaskSpec task;
  std::string out = "runs";
};

using KeyValues = std::vector<std::pair<std::string, std::string>>;

/// Flat `key = value` lines; `#` starts a comment. Keys are normalised so
/// `nn_sizes` and `nn-sizes` are the same key.
KeyValues parse_config_text(const std::string& text, const std::string& origin = "<config>");
KeyValues read_config_file(const std::string& path);
/// One `key=value` override as given to --set.
std::pair<std::string, std::string> parse_assignment(const std::string& text);
std::string normalise_key(const std::string& key);

/// Applies task defaults for the selected `task`, then every pair in order
/// (last wins). Unknown keys and bad values raise ConfigError naming the key.
RunConfig resolve_config(const KeyValues& pairs);

/// Every key with its resolved value in a fixed order (output dir excluded).
std::string canonical_config(const RunConfig& config);
/// FNV-1a over canonical_config.
std::uint64_t config_hash(const RunConfig& config);
std::vector<std::string> config_keys();

std::unique_ptr<EpisodeSampler> make_sampler(const TaskSpec& task);
/// Model shaped for the task's sampler.
Model build_model(const RunConfig& config, const EpisodeSampler& sampler);

}  // namespace metafun
