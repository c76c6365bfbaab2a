#include "labelembed/labelspace.hpp"

#include <algorithm>
#include <map>
#include <string>

#include "labelembed/errors.hpp"

namespace labelembed {

int shared_prefix_depth(std::span<const int> a, std::span<const int> b) {
  const auto n = std::min(a.size(), b.size());
  std::size_t depth = 0;
  while (depth < n && a[depth] == b[depth]) ++depth;
  return static_cast<int>(depth);
}

Hierarchy::Hierarchy(std::vector<std::vector<int>> paths) : paths_(std::move(paths)) {
  if (paths_.empty()) throw ValidationError("hierarchy has no classes");
  num_levels_ = static_cast<int>(paths_.front().size());
  if (num_levels_ < 1) throw ValidationError("hierarchy needs at least one level");

  for (std::size_t c = 0; c < paths_.size(); ++c) {
    if (static_cast<int>(paths_[c].size()) != num_levels_) {
      throw ValidationError("class " + std::to_string(c) + " has a path of length " +
                            std::to_string(paths_[c].size()) + ", expected " +
                            std::to_string(num_levels_));
    }
    for (int v : paths_[c]) {
      if (v < 0) throw ValidationError("negative node id in path of class " + std::to_string(c));
    }
  }

  // Every node at level l must have exactly one parent chain.
  for (int level = 0; level < num_levels_; ++level) {
    std::map<int, std::size_t> owner;
    for (std::size_t c = 0; c < paths_.size(); ++c) {
      const int node = paths_[c][level];
      auto [it, inserted] = owner.emplace(node, c);
      if (inserted) continue;
      if (level == num_levels_ - 1) {
        throw ValidationError("classes " + std::to_string(it->second) + " and " +
                              std::to_string(c) + " share the leaf id " + std::to_string(node));
      }
      const auto& other = paths_[it->second];
      if (!std::equal(other.begin(), other.begin() + level, paths_[c].begin())) {
        throw ValidationError("node " + std::to_string(node) + " at level " +
                              std::to_string(level + 1) + " has two different parents");
      }
    }
  }
}

Hierarchy Hierarchy::flat(int num_classes) {
  if (num_classes < 1) throw ValidationError("flat hierarchy needs at least one class");
  std::vector<std::vector<int>> paths(num_classes);
  for (int c = 0; c < num_classes; ++c) paths[c] = {c};
  return Hierarchy(std::move(paths));
}

std::span<const int> Hierarchy::path(ClassId c) const {
  if (c < 0 || c >= num_classes()) throw InputError("unknown class id " + std::to_string(c));
  return paths_[c];
}

int shared_depth(const Hierarchy& h, ClassId a, ClassId b) {
  return shared_prefix_depth(h.path(a), h.path(b));
}

AttributeTable::AttributeTable(int num_attributes, std::vector<std::vector<int>> sets)
    : num_attributes_(num_attributes), sets_(std::move(sets)) {
  if (num_attributes_ < 1) throw ValidationError("attribute table needs at least one attribute");
  for (std::size_t c = 0; c < sets_.size(); ++c) {
    auto& s = sets_[c];
    if (s.empty()) throw ValidationError("class " + std::to_string(c) + " has no attributes");
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
    if (s.front() < 0 || s.back() >= num_attributes_) {
      throw ValidationError("attribute id out of range for class " + std::to_string(c));
    }
  }
}

std::span<const int> AttributeTable::attributes(ClassId c) const {
  if (c < 0 || c >= num_classes()) throw InputError("unknown class id " + std::to_string(c));
  return sets_[c];
}

namespace {

std::size_t intersection_size(std::span<const int> a, std::span<const int> b) {
  std::size_t n = 0;
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i < *j) {
      ++i;
    } else if (*j < *i) {
      ++j;
    } else {
      ++n;
      ++i;
      ++j;
    }
  }
  return n;
}

}  // namespace

double jaccard_similarity(const AttributeTable& t, ClassId a, ClassId b) {
  const auto sa = t.attributes(a);
  const auto sb = t.attributes(b);
  const auto inter = intersection_size(sa, sb);
  const auto uni = sa.size() + sb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double jaccard_margin(const AttributeTable& t, ClassId class_p, ClassId class_n,
                      double base_margin) {
  if (!(base_margin > 0.0)) throw ValidationError("base margin must be positive");
  return base_margin * (1.0 - jaccard_similarity(t, class_p, class_n));
}

bool shares_attribute(const AttributeTable& t, ClassId a, ClassId b) {
  return intersection_size(t.attributes(a), t.attributes(b)) > 0;
}

MarginSchedule::MarginSchedule(std::vector<double> margins, double base_margin)
    : margins_(std::move(margins)), base_margin_(base_margin) {
  if (margins_.empty()) throw ValidationError("margin schedule is empty");
  if (!(base_margin_ > 0.0)) throw ValidationError("base margin must be positive");
  if (!(margins_.back() > 0.0)) throw ValidationError("finest margin must be positive");
  for (std::size_t l = 1; l < margins_.size(); ++l) {
    if (!(margins_[l - 1] > margins_[l])) {
      throw ValidationError("margin schedule must be strictly decreasing");
    }
  }
}

MarginSchedule MarginSchedule::linear(int num_levels, double base_margin) {
  if (num_levels < 1) throw ValidationError("margin schedule needs at least one level");
  std::vector<double> m(num_levels);
  for (int l = 1; l <= num_levels; ++l) {
    m[l - 1] = base_margin * static_cast<double>(num_levels - l + 1) / num_levels;
  }
  return MarginSchedule(std::move(m), base_margin);
}

std::vector<double> triplet_margins(const MarginSchedule& s) {
  const auto& m = s.margins();
  if (m.empty()) throw ValidationError("margin schedule is empty");
  std::vector<double> out(m.size());
  for (std::size_t l = 0; l + 1 < m.size(); ++l) {
    out[l] = m[l] - m[l + 1];
    if (!(out[l] > 0.0)) throw ValidationError("margin schedule must be strictly decreasing");
  }
  out.back() = m.back();
  return out;
}

}  // namespace labelembed
