#include "labelembed/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <numeric>
#include <thread>

#include "json.hpp"
#include "labelembed/errors.hpp"
#include "labelembed/losses.hpp"

namespace labelembed {

namespace {

using MatrixXd = Matrix<double>;

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string batch_payload(std::span<const TupletIndices> batch, const StepLosses& losses) {
  nlohmann::ordered_json j;
  j["softmax_loss"] = format_real(losses.softmax_loss);
  j["triplet_loss"] = format_real(losses.triplet_loss);
  auto& arr = j["batch"] = nlohmann::ordered_json::array();
  for (const auto& t : batch) {
    arr.push_back({{"reference", t.reference},
                   {"companions", t.companions},
                   {"margins", t.margins},
                   {"bands", t.bands}});
  }
  return j.dump();
}

int argmax_first(const Eigen::Ref<const Eigen::VectorXd>& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

// Columns of one forward pass: a tuplet's reference followed by its companions.
struct Layout {
  std::vector<int> ids;
  std::vector<int> first;  // column of each tuplet's reference
};

Layout layout_for(std::span<const TupletIndices> batch, bool references_only) {
  Layout l;
  for (const auto& t : batch) {
    l.first.push_back(static_cast<int>(l.ids.size()));
    l.ids.push_back(t.reference);
    if (!references_only) l.ids.insert(l.ids.end(), t.companions.begin(), t.companions.end());
  }
  return l;
}

// Gradient contribution of a contiguous chunk of the batch. `total` is the
// batch size B; `softmax_count` is the number of softmax terms in the batch.
StepLosses chunk_gradient(const Parameters<double>& params, std::span<const TupletIndices> chunk,
                          int total, double softmax_count, const Dataset& dataset,
                          const TrainConfig& config, GradientBuffer<double>& grads) {
  const double lambda = config.lambda_s;
  const bool use_softmax = lambda != 0.0;
  const bool use_triplet = lambda != 1.0;
  const bool softmax_all = config.softmax_all_branches;

  // With lambda_s = 1 and reference-only softmax, only references reach the
  // gradient, so only they are forwarded for it.
  const Layout grad_layout = layout_for(chunk, !use_triplet && !softmax_all);
  const MatrixXd inputs = dataset.features(grad_layout.ids);
  const ForwardTrace<double> trace = forward(params, inputs);
  const Eigen::Index cols = trace.batch_size();

  StepLosses out;
  out.references = static_cast<int>(chunk.size());

  MatrixXd d_logits;
  std::vector<char> is_reference(static_cast<std::size_t>(cols), 0);
  for (int f : grad_layout.first) is_reference[f] = 1;
  const double softmax_scale = lambda / softmax_count;
  if (use_softmax) d_logits = MatrixXd::Zero(params.config.num_classes, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    if (!softmax_all && !is_reference[c]) continue;
    const int label = dataset.samples[grad_layout.ids[c]].fine;
    const auto nll = softmax_nll(trace.logits.col(c), label);
    out.softmax_loss += nll.value;
    if (is_reference[c]) out.correct += argmax_first(trace.logits.col(c)) == label;
    if (use_softmax) d_logits.col(c) = softmax_scale * nll.grads[0];
  }
  out.softmax_loss /= softmax_count;

  // Triplet terms. Under lambda_s = 1 they are only reported, from a
  // separate forward pass over every member.
  ForwardTrace<double> report_trace;
  const ForwardTrace<double>* tuplet_trace = &trace;
  Layout full_layout = grad_layout;
  if (!use_triplet && !softmax_all) {
    full_layout = layout_for(chunk, false);
    report_trace = forward(params, dataset.features(full_layout.ids));
    tuplet_trace = &report_trace;
  }

  MatrixXd d_embedding;
  const double triplet_scale = (1.0 - lambda) / (2.0 * total);
  if (use_triplet) d_embedding = MatrixXd::Zero(params.config.embed_dim, cols);
  for (std::size_t i = 0; i < chunk.size(); ++i) {
    const auto& t = chunk[i];
    if (t.companions.empty()) continue;
    const int r = full_layout.first[i];
    const int k = static_cast<int>(t.companions.size());
    const auto& y = tuplet_trace->embedding;
    const auto loss = embedding_hinge_chain<double>(y.col(r), y.middleCols(r + 1, k), t.margins);
    out.triplet_loss += loss.value;
    if (!use_triplet) continue;
    for (int m = 0; m <= k; ++m) d_embedding.col(r + m) += triplet_scale * loss.grads[m];
  }
  out.triplet_loss /= 2.0 * total;

  backward(params, trace, d_logits, d_embedding, grads);
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lambda_s >= 0.0 && lambda_s <= 1.0)) throw ValidationError("lambda_s must lie in [0, 1]");
  if (!(learning_rate >= 0.0)) throw ValidationError("learning_rate must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValidationError("momentum must lie in [0, 1)");
  if (epochs < 0) throw ValidationError("epochs must be non-negative");
  if (batch_size < 1) throw ValidationError("batch_size must be positive");
  if (workers < 1) throw ValidationError("workers must be positive");
  sampler.validate();
}

StepLosses batch_gradient(const Parameters<double>& params, std::span<const TupletIndices> batch,
                          const Dataset& dataset, const TrainConfig& config,
                          GradientBuffer<double>& grads) {
  if (batch.empty()) throw InputError("empty batch");
  for (const auto& t : batch) {
    auto check = [&](int id) {
      if (id < 0 || id >= static_cast<int>(dataset.samples.size())) {
        throw InputError("sample id " + std::to_string(id) + " out of range");
      }
    };
    check(t.reference);
    for (int c : t.companions) check(c);
    if (!t.companions.empty() && t.margins.size() + 1 != t.companions.size()) {
      throw InputError("tuplet needs one margin per adjacent companion pair");
    }
  }

  const int total = static_cast<int>(batch.size());
  double softmax_count = total;
  if (config.softmax_all_branches) {
    for (const auto& t : batch) softmax_count += static_cast<double>(t.companions.size());
  }
  const int workers = std::min(config.workers, total);
  StepLosses out;
  if (workers == 1) {
    out = chunk_gradient(params, batch, total, softmax_count, dataset, config, grads);
  } else {
    std::vector<GradientBuffer<double>> partial(workers, Parameters<double>::zeros(params.config));
    std::vector<StepLosses> losses(workers);
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (int w = 0; w < workers; ++w) {
        const std::size_t lo = static_cast<std::size_t>(total) * w / workers;
        const std::size_t hi = static_cast<std::size_t>(total) * (w + 1) / workers;
        pool.emplace_back([&, w, lo, hi] {
          try {
            losses[w] = chunk_gradient(params, batch.subspan(lo, hi - lo), total, softmax_count,
                                       dataset, config, partial[w]);
          } catch (...) {
            errors[w] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
    // Fixed merge order keeps the result independent of scheduling.
    for (int w = 0; w < workers; ++w) {
      zip_tensors(grads, partial[w], [](auto& g, auto& p) { g += p; });
      out.softmax_loss += losses[w].softmax_loss;
      out.triplet_loss += losses[w].triplet_loss;
      out.references += losses[w].references;
      out.correct += losses[w].correct;
    }
  }
  out.loss = config.lambda_s * out.softmax_loss + (1.0 - config.lambda_s) * out.triplet_loss;
  return out;
}

StepLosses train_step(Parameters<double>& params, std::span<const TupletIndices> batch,
                      const Dataset& dataset, const TrainConfig& config, OptimizerState& state) {
  GradientBuffer<double> grads = Parameters<double>::zeros(params.config);
  StepLosses losses;
  try {
    losses = batch_gradient(params, batch, dataset, config, grads);
  } catch (const DegenerateEmbedding& e) {
    throw TrainingDiverged(e.what(), batch_payload(batch, losses));
  }
  if (!std::isfinite(losses.loss) || !grads.all_finite()) {
    throw TrainingDiverged("non-finite loss or gradient", batch_payload(batch, losses));
  }
  const double mu = config.momentum;
  const double eta = config.learning_rate;
  zip_tensors(state.velocity, grads, [&](auto& v, auto& g) { v = mu * v - eta * g; });
  zip_tensors(params, state.velocity, [](auto& w, auto& v) { w += v; });
  if (!params.all_finite()) {
    throw TrainingDiverged("parameters became non-finite", batch_payload(batch, losses));
  }
  return losses;
}

TrainResult train(const Dataset& dataset, const NetConfig& net, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  dataset.validate();
  if (net.input_dim != dataset.input_dim || net.num_classes != dataset.num_classes) {
    throw ValidationError("network dimensions do not match the dataset");
  }
  const std::vector<int> train_ids = dataset.ids(Split::train);
  if (train_ids.empty()) throw InputError("dataset has no training samples");

  std::mt19937_64 master(config.seed);
  const std::uint64_t init_seed = master();
  SamplerConfig sampler_config = config.sampler;
  sampler_config.seed = master();

  TrainResult result;
  result.params = Parameters<double>::glorot(net, init_seed);
  OptimizerState state = OptimizerState::for_params(result.params);
  TupletSampler sampler(dataset, config.schedule, sampler_config);
  const bool mining = sampler_config.mode == MiningMode::semi_hard;

  std::vector<int> all_ids(dataset.samples.size());
  std::iota(all_ids.begin(), all_ids.end(), 0);

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const std::vector<int> plan = sampler.next_epoch();

    // Embeddings for mining are refreshed once per epoch.
    MatrixXd embeddings;
    if (mining) embeddings = forward(result.params, dataset.features(all_ids)).embedding;

    EpochLog log;
    log.epoch = epoch;
    int seen = 0;
    int correct = 0;
    std::vector<TupletIndices> batch;
    for (std::size_t lo = 0; lo < plan.size(); lo += config.batch_size) {
      const std::size_t hi = std::min(plan.size(), lo + config.batch_size);
      batch.clear();
      for (std::size_t i = lo; i < hi; ++i) {
        auto t = sampler.sample(plan[i], mining ? &embeddings : nullptr);
        if (t) {
          batch.push_back(std::move(*t));
        } else {
          TupletIndices solo;
          solo.reference = plan[i];
          batch.push_back(std::move(solo));
        }
      }
      const StepLosses s = train_step(result.params, batch, dataset, config, state);
      const double b = static_cast<double>(s.references);
      log.softmax_loss += s.softmax_loss * b;
      log.triplet_loss += s.triplet_loss * b;
      log.loss += s.loss * b;
      seen += s.references;
      correct += s.correct;
    }
    log.softmax_loss /= seen;
    log.triplet_loss /= seen;
    log.loss /= seen;
    log.train_accuracy = static_cast<double>(correct) / seen;
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.logs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  result.skipped_references = sampler.skipped_references();
  return result;
}

std::string to_json_line(const EpochLog& log) {
  return "{\"epoch\":" + std::to_string(log.epoch) + ",\"loss\":" + format_real(log.loss) +
         ",\"softmax_loss\":" + format_real(log.softmax_loss) +
         ",\"triplet_loss\":" + format_real(log.triplet_loss) +
         ",\"train_accuracy\":" + format_real(log.train_accuracy) + "}";
}

}  // namespace labelembed
