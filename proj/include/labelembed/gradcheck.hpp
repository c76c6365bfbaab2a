#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "labelembed/net.hpp"

namespace labelembed {

/// Central finite-difference check of every loss, composed with the network,
/// against the analytic parameter gradient.
struct GradcheckConfig {
  NetConfig net{10, {16, 16}, 8, 5};
  int cases = 10;  // random draws per component
  std::uint64_t seed = 1;
  double step = 1e-5;
  double tolerance = 1e-5;
  // Rectifier pre-activations and hinge activations closer than this to 0
  // are kinks; such draws are resampled.
  double kink_guard = 1e-3;
  double lambda_s = 0.8;  // weight used by the "combined" component

  void validate() const;
};

struct ComponentResult {
  std::string component;
  double max_relative_error = 0;
  std::string worst_tensor;
  int cases = 0;
  int resamples = 0;
  bool passed = false;
};

struct GradcheckReport {
  std::vector<ComponentResult> components;

  bool passed() const;
  /// First failing component, or nullptr.
  const ComponentResult* first_failure() const;
};

/// softmax, triplet, quadruplet, tuplet3, adaptive, combined, network.
const std::vector<std::string>& gradcheck_components();

GradcheckReport run_gradcheck(const GradcheckConfig& config);

/// ||a - b|| / max(||a||, ||b||); 0 when both are zero.
double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

namespace testing {
/// Flips the sign of one component's analytic gradient until cleared, so
/// tests can confirm the checker catches a wrong gradient.
void corrupt_component(const std::string& component);
void clear_corruption();
}  // namespace testing

}  // namespace labelembed
