#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "labelembed/datagen.hpp"
#include "labelembed/errors.hpp"
#include "support.hpp"

using namespace labelembed;
using Eigen::MatrixXd;
using Eigen::VectorXd;

TEST_CASE("zero noise makes every sample of a class identical") {
  HierGenConfig h;
  h.noise_sigma = 0;
  const Dataset d = generate_hierarchy(h).dataset;
  std::map<int, VectorXd> first;
  for (const auto& s : d.samples) {
    auto [it, fresh] = first.emplace(s.fine, s.x);
    if (!fresh) CHECK(s.x == it->second);
  }
  AttrGenConfig a;
  a.noise_sigma = 0;
  const auto g = generate_attributes(a);
  for (const auto& s : g.dataset.samples) CHECK(s.x == g.class_means.col(s.fine));
}

TEST_CASE("branching (2,2) with 3 samples per class") {
  HierGenConfig h;
  h.branching = {2, 2};
  h.samples_per_class = 3;
  const auto g = generate_hierarchy(h);
  const Dataset& d = g.dataset;
  CHECK(d.num_classes == 4);
  CHECK(d.samples.size() == 12);
  CHECK(d.num_levels() == 2);
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const auto& s = d.samples[i];
    CHECK(s.id == static_cast<int>(i));
    CHECK(s.path.size() == 2);
    const auto path = d.hierarchy.path(s.fine);
    CHECK(std::equal(s.path.begin(), s.path.end(), path.begin(), path.end()));
    CHECK(s.x.size() == h.input_dim);
  }
  // Prefix consistency: fine classes under one parent share the level-1 node.
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b) CHECK((d.hierarchy.path(a)[0] == d.hierarchy.path(b)[0]) == (a / 2 == b / 2));
  CHECK(g.centers.size() == 2);
  CHECK(g.centers[0].cols() == 2);
  CHECK(g.centers[1].cols() == 4);
}

TEST_CASE("default hierarchy carries a nearest-centroid signal") {
  const Dataset d = generate_hierarchy(HierGenConfig{}).dataset;
  MatrixXd centroid = MatrixXd::Zero(d.input_dim, d.num_classes);
  VectorXd count = VectorXd::Zero(d.num_classes);
  for (const auto& s : d.samples) {
    if (s.split != Split::train) continue;
    centroid.col(s.fine) += s.x;
    count(s.fine) += 1;
  }
  for (int c = 0; c < d.num_classes; ++c) centroid.col(c) /= count(c);
  int correct = 0, total = 0;
  for (const auto& s : d.samples) {
    if (s.split != Split::test) continue;
    Eigen::Index best = 0;
    (centroid.colwise() - s.x).colwise().squaredNorm().minCoeff(&best);
    correct += best == s.fine;
    ++total;
  }
  const double acc = static_cast<double>(correct) / total;
  CHECK(acc > 10.0 / d.num_classes);
}

TEST_CASE("hierarchy config validation and warnings") {
  HierGenConfig h;
  h.branching = {3, 0};
  CHECK_THROWS_AS(generate_hierarchy(h), ValidationError);
  h = HierGenConfig{};
  h.level_scales = {1.0};
  CHECK_THROWS_AS(generate_hierarchy(h), ValidationError);
  h = HierGenConfig{};
  h.branching.clear();
  CHECK_THROWS_AS(h.validate(), ValidationError);
  h = HierGenConfig{};
  h.test_fraction = 1.0;
  CHECK_THROWS_AS(h.validate(), ValidationError);
  h = HierGenConfig{};
  CHECK(h.warnings().empty());
  h.level_scales = {0.5, 1.0};
  CHECK(h.warnings().size() == 1);
  CHECK_NOTHROW(generate_hierarchy(h));
}

TEST_CASE("attrs_per_class = num_attributes makes every class mean identical") {
  AttrGenConfig a;
  a.num_classes = 5;
  a.num_attributes = 4;
  a.attrs_per_class = 4;
  const auto g = generate_attributes(a);
  for (int c = 1; c < 5; ++c) CHECK((g.class_means.col(c) - g.class_means.col(0)).norm() < 1e-12);
}

TEST_CASE("disjoint single attributes make class means the prototypes") {
  AttrGenConfig a;
  a.num_classes = 6;
  a.num_attributes = 6;
  a.attrs_per_class = 1;
  const auto g = generate_attributes(a);
  std::set<int> used;
  for (int c = 0; c < 6; ++c) {
    const auto attrs = g.dataset.attributes->attributes(c);
    REQUIRE(attrs.size() == 1);
    used.insert(attrs[0]);
    CHECK(g.class_means.col(c) == g.prototypes.col(attrs[0]));
  }
  CHECK(used.size() == 6);
}

TEST_CASE("classes sharing an attribute are closer in raw features") {
  const auto g = generate_attributes(AttrGenConfig{});
  const Dataset& d = g.dataset;
  MatrixXd mean = MatrixXd::Zero(d.input_dim, d.num_classes);
  VectorXd count = VectorXd::Zero(d.num_classes);
  for (const auto& s : d.samples) mean.col(s.fine) += s.x, count(s.fine) += 1;
  for (int c = 0; c < d.num_classes; ++c) mean.col(c) /= count(c);
  double shared = 0, disjoint = 0;
  int ns = 0, nd = 0;
  for (int a = 0; a < d.num_classes; ++a) {
    for (int b = a + 1; b < d.num_classes; ++b) {
      const double dist = (mean.col(a) - mean.col(b)).norm();
      if (shares_attribute(*d.attributes, a, b)) shared += dist, ++ns;
      else disjoint += dist, ++nd;
    }
  }
  REQUIRE(ns > 0);
  REQUIRE(nd > 0);
  CHECK(shared / ns < disjoint / nd);
}

TEST_CASE("attribute sets are drawn without replacement and are distinct") {
  const auto g = generate_attributes(AttrGenConfig{});
  std::set<std::vector<int>> sets;
  for (int c = 0; c < g.dataset.num_classes; ++c) {
    const auto a = g.dataset.attributes->attributes(c);
    CHECK(a.size() == 2);
    CHECK(std::set<int>(a.begin(), a.end()).size() == a.size());
    for (int x : a) CHECK((x >= 0 && x < 20));
    sets.emplace(a.begin(), a.end());
  }
  CHECK(sets.size() == 30);
  AttrGenConfig bad;
  bad.attrs_per_class = 21;
  CHECK_THROWS_AS(generate_attributes(bad), ValidationError);
}

TEST_CASE("splits are disjoint and stratified per class") {
  const Dataset d = generate_hierarchy(HierGenConfig{}).dataset;
  std::map<int, std::pair<int, int>> per_class;
  for (const auto& s : d.samples) (s.split == Split::train ? per_class[s.fine].first : per_class[s.fine].second)++;
  for (const auto& [c, counts] : per_class) {
    CHECK(counts.first == 20);
    CHECK(counts.second == 20);
  }
  const auto train = d.ids(Split::train), test = d.ids(Split::test);
  std::set<int> both(train.begin(), train.end());
  for (int id : test) CHECK(both.insert(id).second);
  CHECK(both.size() == d.samples.size());
}

TEST_CASE("generation is deterministic per seed") {
  HierGenConfig h;
  const Dataset a = generate_hierarchy(h).dataset;
  const Dataset b = generate_hierarchy(h).dataset;
  h.seed = 2;
  const Dataset c = generate_hierarchy(h).dataset;
  CHECK(a.samples[17].x == b.samples[17].x);
  CHECK(a.samples[17].x != c.samples[17].x);
}

TEST_CASE("manifests are byte-identical and round-trip") {
  testsupport::TempDir dir("manifest");
  for (bool attributes : {false, true}) {
    const Dataset d = attributes ? generate_attributes(AttrGenConfig{}).dataset : generate_hierarchy(HierGenConfig{}).dataset;
    write_manifest(d, dir / "a");
    write_manifest(attributes ? generate_attributes(AttrGenConfig{}).dataset : generate_hierarchy(HierGenConfig{}).dataset,
                   dir / "b");
    CHECK(testsupport::slurp(dir / "a/samples.jsonl") == testsupport::slurp(dir / "b/samples.jsonl"));
    CHECK(testsupport::slurp(dir / "a/meta.json") == testsupport::slurp(dir / "b/meta.json"));

    const Dataset back = read_manifest(dir / "a");
    REQUIRE(back.samples.size() == d.samples.size());
    CHECK(back.input_dim == d.input_dim);
    CHECK(back.num_classes == d.num_classes);
    CHECK(back.num_levels() == d.num_levels());
    CHECK(back.attributes.has_value() == attributes);
    for (std::size_t i = 0; i < d.samples.size(); ++i) {
      CHECK(back.samples[i].x == d.samples[i].x);
      CHECK(back.samples[i].split == d.samples[i].split);
      CHECK(back.samples[i].path == d.samples[i].path);
      CHECK(back.samples[i].attrs == d.samples[i].attrs);
    }
    // Rewriting what was read gives the same bytes.
    write_manifest(back, dir / "c");
    CHECK(testsupport::slurp(dir / "c/samples.jsonl") == testsupport::slurp(dir / "a/samples.jsonl"));
  }
}

TEST_CASE("manifest reader errors") {
  testsupport::TempDir dir("bad_manifest");
  CHECK_THROWS_AS(read_manifest(dir.path()), InputError);
  HierGenConfig h;
  h.branching = {2, 2};
  h.samples_per_class = 2;
  write_manifest(generate_hierarchy(h).dataset, dir.path());
  const std::string text = testsupport::slurp(dir / "samples.jsonl");
  auto rewrite = [&](const std::string& body) {
    std::ofstream out(dir / "samples.jsonl", std::ios::binary);
    out << body;
  };
  // Cut mid-record.
  rewrite(text.substr(0, text.size() / 2) + "\n");
  CHECK_THROWS_AS(read_manifest(dir.path()), ValidationError);
  // Drop the last whole record.
  rewrite(text.substr(0, text.rfind('\n', text.size() - 2) + 1));
  CHECK_THROWS_AS(read_manifest(dir.path()), ValidationError);
  rewrite(text);
  CHECK_NOTHROW(read_manifest(dir.path()));
}
