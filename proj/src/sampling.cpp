#include "labelembed/sampling.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "labelembed/errors.hpp"

namespace labelembed {

const char* to_string(MiningMode m) { return m == MiningMode::uniform ? "uniform" : "semi_hard"; }

const char* to_string(Structure s) {
  switch (s) {
    case Structure::flat:
      return "flat";
    case Structure::hierarchy:
      return "hierarchy";
    case Structure::attributes:
      return "attributes";
  }
  return "?";
}

MiningMode parse_mining_mode(const std::string& s) {
  if (s == "uniform") return MiningMode::uniform;
  if (s == "semi_hard" || s == "semi-hard") return MiningMode::semi_hard;
  throw ValidationError("unknown sampler mode '" + s + "'");
}

Structure parse_structure(const std::string& s) {
  if (s == "flat") return Structure::flat;
  if (s == "hierarchy") return Structure::hierarchy;
  if (s == "attributes") return Structure::attributes;
  throw ValidationError("unknown structure '" + s + "'");
}

void SamplerConfig::validate() const {
  if (candidate_pool < 1) throw ValidationError("candidate_pool must be at least 1");
}

std::vector<int> epoch_plan(std::span<const int> ids, std::uint64_t seed) {
  std::vector<int> order(ids.begin(), ids.end());
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

int mine_negative(const Eigen::MatrixXd& embeddings, int reference, std::span<const int> band,
                  double positive_distance, const SamplerConfig& config, std::mt19937_64& rng) {
  if (band.empty()) throw InputError("cannot mine a negative from an empty band");
  if (config.mode == MiningMode::uniform) {
    std::uniform_int_distribution<std::size_t> pick(0, band.size() - 1);
    return band[pick(rng)];
  }

  // Partial Fisher-Yates: the first K entries are a uniform K-subset.
  std::vector<int> pool(band.begin(), band.end());
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(config.candidate_pool), pool.size());
  for (std::size_t i = 0; i < k && k < pool.size(); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }

  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  int fallback = -1;
  double fallback_d = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    const int cand = pool[i];
    const double d = (embeddings.col(reference) - embeddings.col(cand)).squaredNorm();
    if (d > positive_distance) {
      if (d < best_d || (d == best_d && cand < best)) {
        best = cand;
        best_d = d;
      }
    } else if (d > fallback_d || (d == fallback_d && cand < fallback)) {
      fallback = cand;
      fallback_d = d;
    }
  }
  return best >= 0 ? best : fallback;
}

TupletSampler::TupletSampler(const Dataset& dataset, const MarginSchedule& schedule,
                             SamplerConfig config)
    : dataset_(&dataset), base_margin_(schedule.base_margin()), config_(config), rng_(config.seed) {
  config_.validate();
  switch (config_.structure) {
    case Structure::hierarchy:
      levels_ = dataset.hierarchy;
      if (schedule.num_levels() != levels_.num_levels()) {
        throw ValidationError("margin schedule has " + std::to_string(schedule.num_levels()) +
                              " levels, hierarchy has " + std::to_string(levels_.num_levels()));
      }
      triplet_margins_ = triplet_margins(schedule);
      break;
    case Structure::flat:
      levels_ = Hierarchy::flat(dataset.num_classes);
      triplet_margins_ = {schedule.margins().front()};
      break;
    case Structure::attributes:
      if (!dataset.attributes) throw ValidationError("attribute structure needs an attribute table");
      levels_ = Hierarchy::flat(dataset.num_classes);
      triplet_margins_ = {base_margin_};
      break;
  }

  train_ids_ = dataset.ids(Split::train);
  const int x = levels_.num_levels();
  const int classes = dataset.num_classes;
  bands_.assign(classes, std::vector<std::vector<int>>(x + 1));
  for (int id : train_ids_) {
    const ClassId cls = dataset.samples[id].fine;
    for (ClassId c = 0; c < classes; ++c) {
      bands_[c][x - shared_depth(levels_, c, cls)].push_back(id);
    }
  }
}

std::span<const int> TupletSampler::band_members(ClassId c, int band) const {
  return bands_.at(c).at(band);
}

int TupletSampler::pick(std::span<const int> v) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng_)];
}

std::vector<int> TupletSampler::next_epoch() { return epoch_plan(train_ids_, rng_()); }

std::optional<TupletIndices> TupletSampler::sample(int reference, const Eigen::MatrixXd* embeddings) {
  const Sample& ref = dataset_->samples.at(reference);
  const ClassId cls = ref.fine;
  const int x = levels_.num_levels();
  const bool mining = config_.mode == MiningMode::semi_hard;
  if (mining && embeddings == nullptr) throw InputError("semi-hard mining needs embeddings");

  // Same-class partner, never the reference itself.
  const auto& own = bands_[cls][0];
  if (own.size() < 2) {
    ++skipped_references_;
    return std::nullopt;
  }
  int positive = reference;
  while (positive == reference) positive = pick(own);

  TupletIndices t;
  t.reference = reference;
  t.companions.push_back(positive);
  t.bands.push_back(0);

  double pending = 0.0;
  for (int j = 1; j <= x; ++j) {
    pending += triplet_margins_[j - 1];
    const auto& band = bands_[cls][j];
    if (band.empty()) {
      ++merged_bands_;
      continue;
    }
    int chosen;
    if (mining) {
      const double d_prev =
          (embeddings->col(reference) - embeddings->col(t.companions.back())).squaredNorm();
      chosen = mine_negative(*embeddings, reference, band, d_prev, config_, rng_);
    } else {
      chosen = pick(band);
    }
    t.companions.push_back(chosen);
    t.bands.push_back(j);
    t.margins.push_back(pending);
    pending = 0.0;
  }

  if (t.margins.empty()) {
    ++skipped_references_;
    return std::nullopt;
  }
  if (config_.structure == Structure::attributes) {
    t.class_p = cls;
    t.class_n = dataset_->samples[t.companions.back()].fine;
    t.margins.back() = jaccard_margin(*dataset_->attributes, t.class_p, t.class_n, base_margin_);
  }
  return t;
}

}  // namespace labelembed
