#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "labelembed/dataset.hpp"

namespace labelembed {

/// Hierarchical Gaussian mixture. Scales are radii: an offset at scale s has
/// per-coordinate standard deviation s / sqrt(F), so its expected squared
/// norm is s^2.
struct HierGenConfig {
  std::vector<int> branching{6, 5};
  int samples_per_class = 40;
  int input_dim = 32;
  std::vector<double> level_scales{1.0, 1.0};
  double noise_sigma = 1.6;
  std::uint64_t seed = 1;
  double test_fraction = 0.5;

  void validate() const;
  /// Soft problems that do not block generation (e.g. scales that grow with depth).
  std::vector<std::string> warnings() const;
};

struct GeneratedHierarchy {
  Dataset dataset;
  /// centers[l] holds one column per level-(l+1) node.
  std::vector<Eigen::MatrixXd> centers;
};

/// Samples of a class are split per class: the first
/// round(samples_per_class * (1 - test_fraction)) go to train.
GeneratedHierarchy generate_hierarchy(const HierGenConfig& config);

/// Classes whose means average a few shared attribute prototypes.
struct AttrGenConfig {
  int num_classes = 30;
  int num_attributes = 20;
  int attrs_per_class = 2;
  int samples_per_class = 40;
  int input_dim = 32;
  double prototype_scale = 2.0;
  double noise_sigma = 1.4;
  std::uint64_t seed = 1;
  double test_fraction = 0.5;

  void validate() const;
};

struct GeneratedAttributes {
  Dataset dataset;
  Eigen::MatrixXd prototypes;   // one column per attribute
  Eigen::MatrixXd class_means;  // one column per class
};

GeneratedAttributes generate_attributes(const AttrGenConfig& config);

}  // namespace labelembed
