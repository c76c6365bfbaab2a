#include "labelembed/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "labelembed/errors.hpp"

namespace labelembed {

namespace {

Eigen::VectorXd gaussian(std::mt19937_64& rng, int dim, double radius) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double sd = radius / std::sqrt(static_cast<double>(dim));
  Eigen::VectorXd v(dim);
  for (int k = 0; k < dim; ++k) v(k) = sd * normal(rng);
  return v;
}

void check_split(double test_fraction) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw ValidationError("test_fraction must lie in [0, 1)");
  }
}

int train_count(int samples_per_class, double test_fraction) {
  return static_cast<int>(std::lround(samples_per_class * (1.0 - test_fraction)));
}

// Appends samples of every class, train split first, then test.
void emit_samples(Dataset& d, std::mt19937_64& rng, const Eigen::MatrixXd& means,
                  int samples_per_class, double noise_sigma, double test_fraction,
                  const std::vector<std::vector<int>>& paths,
                  const std::vector<std::vector<int>>& attrs) {
  const int n_train = train_count(samples_per_class, test_fraction);
  const int classes = static_cast<int>(means.cols());
  std::vector<Sample> train, test;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < samples_per_class; ++i) {
      Sample s;
      s.split = i < n_train ? Split::train : Split::test;
      s.x = means.col(c) + gaussian(rng, d.input_dim, noise_sigma);
      s.fine = c;
      s.path = paths[c];
      s.attrs = attrs[c];
      (s.split == Split::train ? train : test).push_back(std::move(s));
    }
  }
  for (auto* part : {&train, &test}) {
    for (auto& s : *part) {
      s.id = static_cast<int>(d.samples.size());
      d.samples.push_back(std::move(s));
    }
  }
}

}  // namespace

void HierGenConfig::validate() const {
  if (branching.empty()) throw ValidationError("branching must name at least one level");
  for (int b : branching)
    if (b < 1) throw ValidationError("branching factors must be positive");
  if (level_scales.size() != branching.size()) {
    throw ValidationError("level_scales needs one entry per level");
  }
  for (double s : level_scales)
    if (!(s > 0.0)) throw ValidationError("level scales must be positive");
  if (samples_per_class < 1) throw ValidationError("samples_per_class must be positive");
  if (input_dim < 1) throw ValidationError("input_dim must be positive");
  if (!(noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be non-negative");
  check_split(test_fraction);
}

std::vector<std::string> HierGenConfig::warnings() const {
  std::vector<std::string> out;
  for (std::size_t l = 1; l < level_scales.size(); ++l) {
    if (level_scales[l] > level_scales[l - 1]) {
      out.push_back("level_scales[" + std::to_string(l) + "] exceeds the scale of its parent level");
    }
  }
  return out;
}

GeneratedHierarchy generate_hierarchy(const HierGenConfig& config) {
  config.validate();
  const int levels = static_cast<int>(config.branching.size());
  std::mt19937_64 rng(config.seed);

  GeneratedHierarchy out;
  int nodes = 1;
  for (int l = 0; l < levels; ++l) {
    nodes *= config.branching[l];
    Eigen::MatrixXd level(config.input_dim, nodes);
    for (int v = 0; v < nodes; ++v) {
      const Eigen::VectorXd offset = gaussian(rng, config.input_dim, config.level_scales[l]);
      if (l == 0) {
        level.col(v) = offset;
      } else {
        level.col(v) = out.centers[l - 1].col(v / config.branching[l]) + offset;
      }
    }
    out.centers.push_back(std::move(level));
  }

  const int classes = nodes;
  std::vector<std::vector<int>> paths(classes, std::vector<int>(levels));
  for (int c = 0; c < classes; ++c) {
    int below = 1;
    for (int l = levels - 1; l >= 0; --l) {
      paths[c][l] = c / below;
      below *= config.branching[l];
    }
  }

  Dataset& d = out.dataset;
  d.input_dim = config.input_dim;
  d.num_classes = classes;
  d.hierarchy = Hierarchy(paths);
  emit_samples(d, rng, out.centers.back(), config.samples_per_class, config.noise_sigma,
               config.test_fraction, paths, std::vector<std::vector<int>>(classes));
  d.validate();
  return out;
}

void AttrGenConfig::validate() const {
  if (num_classes < 1) throw ValidationError("num_classes must be positive");
  if (num_attributes < 1) throw ValidationError("num_attributes must be positive");
  if (attrs_per_class < 1 || attrs_per_class > num_attributes) {
    throw ValidationError("attrs_per_class must lie in 1..num_attributes");
  }
  if (samples_per_class < 1) throw ValidationError("samples_per_class must be positive");
  if (input_dim < 1) throw ValidationError("input_dim must be positive");
  if (!(prototype_scale > 0.0)) throw ValidationError("prototype_scale must be positive");
  if (!(noise_sigma >= 0.0)) throw ValidationError("noise_sigma must be non-negative");
  check_split(test_fraction);
}

GeneratedAttributes generate_attributes(const AttrGenConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);

  GeneratedAttributes out;
  out.prototypes.resize(config.input_dim, config.num_attributes);
  for (int a = 0; a < config.num_attributes; ++a) {
    out.prototypes.col(a) = gaussian(rng, config.input_dim, config.prototype_scale);
  }

  // Distinct classes get distinct attribute sets whenever enough
  // combinations exist.
  double combos = 1.0;
  for (int i = 0; i < config.attrs_per_class; ++i) {
    combos = combos * (config.num_attributes - i) / (i + 1);
  }
  const bool distinct = combos >= config.num_classes;

  std::vector<int> pool(config.num_attributes);
  std::set<std::vector<int>> seen;
  std::vector<std::vector<int>> sets(config.num_classes);
  for (int c = 0; c < config.num_classes; ++c) {
    std::vector<int> chosen;
    do {
      std::iota(pool.begin(), pool.end(), 0);
      for (int i = 0; i < config.attrs_per_class; ++i) {
        std::uniform_int_distribution<int> pick(i, config.num_attributes - 1);
        std::swap(pool[i], pool[pick(rng)]);
      }
      chosen.assign(pool.begin(), pool.begin() + config.attrs_per_class);
      std::sort(chosen.begin(), chosen.end());
    } while (distinct && seen.count(chosen));
    seen.insert(chosen);
    sets[c] = chosen;
  }

  out.class_means = Eigen::MatrixXd::Zero(config.input_dim, config.num_classes);
  for (int c = 0; c < config.num_classes; ++c) {
    for (int a : sets[c]) out.class_means.col(c) += out.prototypes.col(a);
    out.class_means.col(c) /= static_cast<double>(sets[c].size());
  }

  Dataset& d = out.dataset;
  d.input_dim = config.input_dim;
  d.num_classes = config.num_classes;
  d.hierarchy = Hierarchy::flat(config.num_classes);
  d.attributes = AttributeTable(config.num_attributes, sets);
  std::vector<std::vector<int>> paths(config.num_classes);
  for (int c = 0; c < config.num_classes; ++c) paths[c] = {c};
  emit_samples(d, rng, out.class_means, config.samples_per_class, config.noise_sigma,
               config.test_fraction, paths, sets);
  d.validate();
  return out;
}

}  // namespace labelembed
