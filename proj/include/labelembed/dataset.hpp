#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "labelembed/labelspace.hpp"

namespace labelembed {

enum class Split { train, test };

const char* to_string(Split s);
Split parse_split(const std::string& s);

struct Sample {
  int id = 0;
  Split split = Split::train;
  Eigen::VectorXd x;
  ClassId fine = 0;
  std::vector<int> path;
  std::vector<int> attrs;
};

/// Labeled feature vectors plus the label structure their classes live in.
/// Sample ids equal their index in `samples`.
struct Dataset {
  int input_dim = 0;
  int num_classes = 0;
  Hierarchy hierarchy;
  std::optional<AttributeTable> attributes;
  std::vector<Sample> samples;

  int num_levels() const { return hierarchy.num_levels(); }
  int num_attributes() const { return attributes ? attributes->num_attributes() : 0; }

  /// Ids of the samples in one split, ascending.
  std::vector<int> ids(Split s) const;
  /// Feature matrix with one column per listed sample.
  Eigen::MatrixXd features(std::span<const int> ids) const;
  std::vector<ClassId> labels(std::span<const int> ids) const;

  /// Checks ids, dimensions, and that per-sample labels agree with the
  /// hierarchy and attribute table.
  void validate() const;
};

/// Writes `<dir>/meta.json` and `<dir>/samples.jsonl`. Output bytes depend
/// only on the dataset contents.
void write_manifest(const Dataset& d, const std::filesystem::path& dir);
Dataset read_manifest(const std::filesystem::path& dir);

}  // namespace labelembed
