#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "labelembed/dataset.hpp"
#include "labelembed/labelspace.hpp"
#include "labelembed/net.hpp"
#include "labelembed/sampling.hpp"

namespace labelembed {

struct TrainConfig {
  double lambda_s = 0.8;
  double learning_rate = 0.05;
  double momentum = 0.9;
  int epochs = 200;
  int batch_size = 32;
  MarginSchedule schedule = MarginSchedule::linear(2, 0.2);
  SamplerConfig sampler;
  std::uint64_t seed = 1;
  /// Apply the softmax loss to every tuplet member instead of the reference only.
  bool softmax_all_branches = false;
  /// Data-parallel workers per step. Results are deterministic for a fixed count.
  int workers = 1;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0;          // lambda_s * E_s + (1 - lambda_s) * E_t
  double softmax_loss = 0;  // E_s
  double triplet_loss = 0;  // E_t
  double train_accuracy = 0;
  double seconds = 0;
};

struct StepLosses {
  double softmax_loss = 0;
  double triplet_loss = 0;
  double loss = 0;
  int references = 0;
  int correct = 0;  // references whose argmax logit matched, before the update
};

/// Velocity buffer of SGD with momentum.
struct OptimizerState {
  Parameters<double> velocity;

  static OptimizerState for_params(const Parameters<double>& p) {
    return {Parameters<double>::zeros(p.config)};
  }
};

/// Gradient of lambda_s * E_s + (1 - lambda_s) * E_t over one batch,
/// accumulated into `grads`, where
///   E_s = (1/B) sum softmax_nll(reference logits)
///   E_t = (1/2B) sum hinge chains of each tuplet.
/// A tuplet with no companions contributes only its softmax term.
StepLosses batch_gradient(const Parameters<double>& params, std::span<const TupletIndices> batch,
                          const Dataset& dataset, const TrainConfig& config,
                          GradientBuffer<double>& grads);

/// One SGD-with-momentum step: v <- mu v - eta g, W <- W + v.
/// Throws TrainingDiverged if a loss, gradient, or parameter is non-finite, or
/// an embedding degenerates.
StepLosses train_step(Parameters<double>& params, std::span<const TupletIndices> batch,
                      const Dataset& dataset, const TrainConfig& config, OptimizerState& state);

struct TrainResult {
  Parameters<double> params;
  std::vector<EpochLog> logs;
  std::uint64_t skipped_references = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Full training run. Every random draw derives from `config.seed`.
/// `on_epoch` sees each log as soon as its epoch finishes.
TrainResult train(const Dataset& dataset, const NetConfig& net, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

/// Serializes an epoch log as one JSON line. Wall-clock time is excluded so
/// the line is reproducible.
std::string to_json_line(const EpochLog& log);

}  // namespace labelembed
