#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>

#include "seqlevel/example_loss.hpp"
#include "seqlevel/generate.hpp"

namespace seqlevel {

using ConfigMap = std::map<std::string, std::string>;

// "key = value" lines; blank lines and lines starting with '#' are ignored.
ConfigMap parse_key_values(std::istream& in);
ConfigMap read_key_values(const std::filesystem::path& path);
std::string format_key_values(const ConfigMap& values);

struct TrainConfig {
  // optimizer and schedule
  double lr = 0.25;
  double momentum = 0.99;
  double max_grad_norm = 0.1;
  double anneal_factor = 10.0;
  double min_lr = 1e-4;
  std::size_t max_tokens = 4000;
  std::size_t token_epochs = 20;  // before annealing
  std::size_t seq_epochs = 10;    // before annealing
  bool anneal_sequence = true;

  // model and data
  std::size_t dim = 64;
  double dropout = 0.0;
  std::uint64_t seed = 1;
  double valid_fraction = 0.1;

  // objectives: token phase uses objective.token_objective alone
  ObjectiveSpec objective{Objective::kTokLs, Objective::kRisk, Combine::kWeighted, LossConfig{}};

  // candidates and evaluation
  GenerationConfig generation;
  std::size_t eval_k = 16;
  bool eval_normalize = true;
  std::size_t eval_max_len = kMaxGenerationLength;
  std::size_t eval_every = 1;  // epochs between validation decodes; 0 = phase end only

  // Unnormalized k=5 beam and per-set cost rescaling for the comparison setup.
  bool bso_compat = false;

  // Returns a copy with bso_compat expanded into the fields it controls.
  TrainConfig effective() const;
  void validate() const;

  ConfigMap to_map() const;
  // Unknown keys are an error. Missing keys keep their defaults.
  static TrainConfig from_map(const ConfigMap& values);
  std::string to_string() const { return format_key_values(to_map()); }
};

}  // namespace seqlevel
