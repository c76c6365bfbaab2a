#pragma once

#include <span>
#include <vector>

namespace labelembed {

using ClassId = int;

/// Number of leading entries on which two label paths agree.
int shared_prefix_depth(std::span<const int> a, std::span<const int> b);

/// A tree of labels stored as one root-to-leaf path per fine class.
///
/// Path entries are node ids, ordered coarsest (level 1) to finest (level x).
/// Node ids are global within a level, so the level-x entry identifies the
/// fine class and equal entries at level l imply equal entries above l.
class Hierarchy {
 public:
  Hierarchy() = default;

  /// Validates path lengths, leaf uniqueness, and the tree property.
  explicit Hierarchy(std::vector<std::vector<int>> paths);

  /// One-level hierarchy in which class c has the path [c].
  static Hierarchy flat(int num_classes);

  int num_levels() const noexcept { return num_levels_; }
  int num_classes() const noexcept { return static_cast<int>(paths_.size()); }
  std::span<const int> path(ClassId c) const;
  const std::vector<std::vector<int>>& paths() const noexcept { return paths_; }

 private:
  int num_levels_ = 0;
  std::vector<std::vector<int>> paths_;
};

/// Depth of the deepest shared ancestor of two classes, in 0..x.
int shared_depth(const Hierarchy& h, ClassId a, ClassId b);

/// Per-class attribute sets. Each set is stored sorted and deduplicated.
class AttributeTable {
 public:
  AttributeTable() = default;
  AttributeTable(int num_attributes, std::vector<std::vector<int>> sets);

  int num_attributes() const noexcept { return num_attributes_; }
  int num_classes() const noexcept { return static_cast<int>(sets_.size()); }
  std::span<const int> attributes(ClassId c) const;
  const std::vector<std::vector<int>>& sets() const noexcept { return sets_; }

 private:
  int num_attributes_ = 0;
  std::vector<std::vector<int>> sets_;
};

/// |A_a ∩ A_b| / |A_a ∪ A_b|.
double jaccard_similarity(const AttributeTable& t, ClassId a, ClassId b);

/// Attribute-adaptive margin m_b * (1 - J(A_p, A_n)). Lies in [0, m_b].
double jaccard_margin(const AttributeTable& t, ClassId class_p, ClassId class_n,
                      double base_margin);

bool shares_attribute(const AttributeTable& t, ClassId a, ClassId b);

/// Nested distance margins m_1 > m_2 > ... > m_x > 0, one per hierarchy level,
/// plus the base margin used by attribute-adaptive triplets.
class MarginSchedule {
 public:
  MarginSchedule() = default;
  explicit MarginSchedule(std::vector<double> margins, double base_margin = 0.2);

  /// m_l = m_b * (x - l + 1) / x.
  static MarginSchedule linear(int num_levels, double base_margin = 0.2);

  int num_levels() const noexcept { return static_cast<int>(margins_.size()); }
  const std::vector<double>& margins() const noexcept { return margins_; }
  double base_margin() const noexcept { return base_margin_; }

 private:
  std::vector<double> margins_;
  double base_margin_ = 0.2;
};

/// Margins of the generalized triplets a tuplet decomposes into:
/// (m_1 - m_2, ..., m_{x-1} - m_x, m_x). They telescope to m_1.
std::vector<double> triplet_margins(const MarginSchedule& s);

}  // namespace labelembed
