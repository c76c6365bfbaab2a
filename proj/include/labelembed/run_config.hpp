#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "labelembed/datagen.hpp"
#include "labelembed/dataset.hpp"
#include "labelembed/eval.hpp"
#include "labelembed/gradcheck.hpp"
#include "labelembed/net.hpp"
#include "labelembed/trainer.hpp"

namespace labelembed {

/// Where a run's dataset comes from: a manifest directory or a generator.
struct DataSpec {
  enum class Source { hierarchy, attributes, path };
  Source source = Source::hierarchy;
  std::filesystem::path path;
  HierGenConfig hierarchy;
  AttrGenConfig attributes;
};

/// Network widths; input_dim and num_classes come from the dataset.
struct NetSpec {
  std::vector<int> hidden_dims{64};
  int embed_dim = 16;
};

struct TrainSpec {
  TrainConfig config;
  /// Explicit m_1 > ... > m_x; when absent the linear schedule over the
  /// dataset's levels is used.
  std::optional<std::vector<double>> margins;
  double base_margin = 0.2;
};

struct EvalSpec {
  /// Empty means: fine, every proper hierarchy level, and shares_attribute
  /// when the dataset has attributes.
  std::vector<std::string> predicates;
  int k_max = 100;  // clipped to the gallery size
  Split gallery = Split::test;
  /// Defaults to <output_dir>/checkpoint.txt.
  std::optional<std::filesystem::path> checkpoint;
};

struct PcaSpec {
  int out_dim = 2;
  Split split = Split::test;
};

/// One JSON document describing a run. Every object rejects unknown keys.
struct RunConfig {
  std::uint64_t seed = 1;  // training and gradcheck seed
  std::filesystem::path output_dir = "run";
  DataSpec data;
  NetSpec net;
  TrainSpec train;
  EvalSpec eval;
  PcaSpec pca;
  GradcheckConfig gradcheck;

  nlohmann::ordered_json to_json() const;
};

/// Throws ValidationError; syntax errors carry "line L, column C".
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& file);

Dataset load_dataset(const DataSpec& spec);
NetConfig resolve_net(const RunConfig& run, const Dataset& dataset);
/// TrainConfig with the schedule and seed filled in for this dataset.
TrainConfig resolve_train(const RunConfig& run, const Dataset& dataset);
std::vector<RelevancePredicate> resolve_predicates(const RunConfig& run, const Dataset& dataset);

}  // namespace labelembed
