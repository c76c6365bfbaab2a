#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "labelembed/dataset.hpp"
#include "labelembed/labelspace.hpp"
#include "labelembed/net.hpp"

namespace labelembed {

/// When two samples count as relevant to each other.
struct RelevancePredicate {
  enum class Kind { fine, hierarchy_level, shares_attribute };
  Kind kind = Kind::fine;
  int level = 0;  // 1..x, hierarchy_level only

  static RelevancePredicate fine() { return {Kind::fine, 0}; }
  static RelevancePredicate at_level(int level) { return {Kind::hierarchy_level, level}; }
  static RelevancePredicate shares_attribute() { return {Kind::shares_attribute, 0}; }

  /// "fine", "level<l>", or "shares_attribute".
  std::string name() const;
  static RelevancePredicate parse(const std::string& name);
};

/// Class-level label structure the predicates are evaluated against.
struct LabelContext {
  const Hierarchy* hierarchy = nullptr;
  const AttributeTable* attributes = nullptr;

  static LabelContext of(const Dataset& d) {
    return {&d.hierarchy, d.attributes ? &*d.attributes : nullptr};
  }
};

bool relevant(const RelevancePredicate& p, const LabelContext& ctx, ClassId a, ClassId b);

/// Embeddings of the listed samples, one unit-norm row per sample.
Eigen::MatrixXd extract_embeddings(const Parameters<double>& params, const Dataset& dataset,
                                   std::span<const int> ids);

/// Mean over queries of precision@k for k = 1..k_max. Each query ranks every
/// other row by ascending squared distance, ties broken by ascending row index.
Eigen::VectorXd precision_at_k(const Eigen::MatrixXd& embeddings, std::span<const ClassId> labels,
                               const LabelContext& ctx, const RelevancePredicate& predicate,
                               int k_max);

/// Same, with separate query and gallery sets; no row is excluded.
Eigen::VectorXd precision_at_k(const Eigen::MatrixXd& queries, std::span<const ClassId> query_labels,
                               const Eigen::MatrixXd& gallery,
                               std::span<const ClassId> gallery_labels, const LabelContext& ctx,
                               const RelevancePredicate& predicate, int k_max);

/// Fraction of samples whose arg-max logit is their fine label; ties go to
/// the smallest class index.
double classification_accuracy(const Parameters<double>& params, const Dataset& dataset,
                               std::span<const int> ids);

/// Index of the largest entry, first one on ties.
int argmax(const Eigen::Ref<const Eigen::VectorXd>& v);

/// Projection of the centered rows onto the top principal axes. Each axis is
/// signed so that its largest-magnitude coordinate is positive.
struct PcaResult {
  Eigen::MatrixXd projection;  // n x out_dim
  Eigen::MatrixXd axes;        // D x out_dim
  Eigen::RowVectorXd mean;
  Eigen::VectorXd explained_variance;
  double total_variance = 0;
};

PcaResult pca_export(const Eigen::MatrixXd& embeddings, int out_dim = 2);

/// Softmax regression on frozen features, trained by full-batch gradient
/// descent with momentum.
struct LinearProbeConfig {
  int epochs = 300;
  double learning_rate = 0.5;
  double momentum = 0.9;
};

struct LinearProbe {
  Eigen::MatrixXd weight;  // C x D
  Eigen::VectorXd bias;

  int predict(const Eigen::Ref<const Eigen::VectorXd>& feature) const;
  /// Rows of `features` are samples.
  double accuracy(const Eigen::MatrixXd& features, std::span<const ClassId> labels) const;
};

LinearProbe fit_linear_probe(const Eigen::MatrixXd& features, std::span<const ClassId> labels,
                             int num_classes, const LinearProbeConfig& config = {});

struct RetrievalCurve {
  RelevancePredicate predicate;
  Eigen::VectorXd precision;  // entry k-1 holds precision@k
};

struct RetrievalReport {
  std::vector<RetrievalCurve> curves;
  double classification_accuracy = 0;
  int k_max = 0;
  int num_queries = 0;
};

/// Writes `report.json` and `precision.csv` (columns: k, one per predicate).
void write_report(const RetrievalReport& report, const std::filesystem::path& dir);

}  // namespace labelembed
