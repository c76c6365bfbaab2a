#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "labelembed/errors.hpp"
#include "labelembed/sampling.hpp"
#include "support.hpp"

using namespace labelembed;

namespace {

// Two coarse classes with two fine classes each.
Dataset two_level(int per_class = 4) {
  return testsupport::toy_dataset({{0, 0}, {0, 1}, {1, 2}, {1, 3}}, std::vector<int>(4, per_class), 3);
}

SamplerConfig config(Structure s, std::uint64_t seed = 1) {
  SamplerConfig c;
  c.structure = s;
  c.seed = seed;
  return c;
}

bool same(const TupletIndices& a, const TupletIndices& b) {
  return a.reference == b.reference && a.companions == b.companions && a.margins == b.margins &&
         a.bands == b.bands && a.class_p == b.class_p && a.class_n == b.class_n;
}

}  // namespace

TEST_CASE("epoch_plan is a seeded permutation") {
  const std::vector<int> five{0, 1, 2, 3, 4};
  auto p = epoch_plan(five, 7);
  std::sort(p.begin(), p.end());
  CHECK(p == five);

  std::vector<int> hundred(100);
  std::iota(hundred.begin(), hundred.end(), 0);
  CHECK(epoch_plan(hundred, 1) == epoch_plan(hundred, 1));
  CHECK(epoch_plan(hundred, 1) != epoch_plan(hundred, 2));
  CHECK(epoch_plan(std::vector<int>{}, 3).empty());
}

TEST_CASE("flat structure with forced companions") {
  // c0 = {a, b}, c1 = {c}
  const Dataset d = testsupport::toy_dataset({{0}, {1}}, {2, 1}, 2);
  TupletSampler s(d, MarginSchedule({0.3}), config(Structure::flat));
  for (int i = 0; i < 10; ++i) {
    const auto t = s.sample(0);
    REQUIRE(t);
    CHECK(t->companions == std::vector<int>{1, 2});
    CHECK(t->margins == std::vector<double>{0.3});
  }
}

TEST_CASE("singleton fine class is skipped") {
  const Dataset d = testsupport::toy_dataset({{0}, {1}}, {2, 1}, 2);
  TupletSampler s(d, MarginSchedule({0.3}), config(Structure::flat));
  // Enumerate: the only sample of class 1 is id 2, and no other id shares its class.
  int partners = 0;
  for (const auto& smp : d.samples) partners += smp.fine == 1 && smp.id != 2;
  CHECK(partners == 0);
  CHECK_FALSE(s.sample(2).has_value());
  CHECK(s.skipped_references() == 1);
}

TEST_CASE("hierarchy tuplets respect the band invariants") {
  const Dataset d = two_level();
  const MarginSchedule schedule({0.2, 0.1});
  TupletSampler s(d, schedule, config(Structure::hierarchy, 5));
  const auto margins = triplet_margins(schedule);
  for (int round = 0; round < 20; ++round) {
    for (int ref : s.next_epoch()) {
      const auto t = s.sample(ref);
      REQUIRE(t);
      REQUIRE(t->companions.size() == 3);
      CHECK(t->margins == margins);
      const ClassId rc = d.samples[ref].fine;
      CHECK(t->companions[0] != ref);
      CHECK(d.samples[t->companions[0]].fine == rc);
      for (int j = 1; j <= 2; ++j) CHECK(shared_depth(d.hierarchy, rc, d.samples[t->companions[j]].fine) == 2 - j);
      for (double m : t->margins) CHECK(m > 0);
    }
  }
  CHECK(s.merged_bands() == 0);
}

TEST_CASE("empty bands are merged into the next outer margin") {
  // Coarse class 0 holds one fine class, so band 1 is empty for class 0.
  const Dataset d = testsupport::toy_dataset({{0, 0}, {1, 1}, {1, 2}}, {3, 3, 3}, 3);
  const MarginSchedule schedule({0.3, 0.1});
  TupletSampler s(d, schedule, config(Structure::hierarchy));
  const auto t = s.sample(0);
  REQUIRE(t);
  CHECK(t->companions.size() == 2);
  CHECK(t->bands == std::vector<int>{0, 2});
  CHECK(t->margins.size() == 1);
  CHECK(t->margins[0] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(s.merged_bands() == 1);
  CHECK(shared_depth(d.hierarchy, 0, d.samples[t->companions[1]].fine) == 0);

  // Class 1 has all bands.
  const auto u = s.sample(3);
  REQUIRE(u);
  CHECK(u->companions.size() == 3);
}

TEST_CASE("reference with no outer band at all is skipped") {
  const Dataset d = testsupport::toy_dataset({{0}}, {3}, 2);
  TupletSampler s(d, MarginSchedule({0.2}), config(Structure::flat));
  CHECK_FALSE(s.sample(0).has_value());
  CHECK(s.skipped_references() == 1);
}

TEST_CASE("sampler streams are deterministic") {
  const Dataset d = two_level(6);
  TupletSampler a(d, MarginSchedule({0.2, 0.1}), config(Structure::hierarchy, 11));
  TupletSampler b(d, MarginSchedule({0.2, 0.1}), config(Structure::hierarchy, 11));
  TupletSampler c(d, MarginSchedule({0.2, 0.1}), config(Structure::hierarchy, 12));
  bool differs = false;
  for (int e = 0; e < 3; ++e) {
    const auto pa = a.next_epoch(), pb = b.next_epoch(), pc = c.next_epoch();
    CHECK(pa == pb);
    differs |= pa != pc;
    for (int ref : pa) {
      const auto ta = a.sample(ref), tb = b.sample(ref);
      CHECK(same(*ta, *tb));
    }
  }
  CHECK(differs);
}

TEST_CASE("each epoch covers the training split exactly once") {
  Dataset d = two_level(5);
  for (int i = 0; i < static_cast<int>(d.samples.size()); i += 3) d.samples[i].split = Split::test;
  TupletSampler s(d, MarginSchedule({0.2, 0.1}), config(Structure::hierarchy));
  for (int e = 0; e < 3; ++e) {
    auto plan = s.next_epoch();
    std::sort(plan.begin(), plan.end());
    CHECK(plan == d.ids(Split::train));
  }
  // Companions come from the training split only.
  for (int ref : d.ids(Split::train)) {
    if (auto t = s.sample(ref)) {
      for (int c : t->companions) CHECK(d.samples[c].split == Split::train);
    }
  }
}

TEST_CASE("attribute structure records the jaccard margin") {
  Dataset d = testsupport::toy_dataset({{0}, {1}, {2}, {3}}, {3, 3, 3, 3}, 3);
  d.attributes = AttributeTable(5, {{0, 1}, {1, 2}, {3, 4}, {0, 1, 2}});
  TupletSampler s(d, MarginSchedule({0.2}, 0.5), config(Structure::attributes));
  std::set<ClassId> seen;
  for (int round = 0; round < 30; ++round) {
    for (int ref : s.next_epoch()) {
      const auto t = s.sample(ref);
      REQUIRE(t);
      REQUIRE(t->companions.size() == 2);
      CHECK(t->class_p == d.samples[ref].fine);
      CHECK(t->class_n == d.samples[t->companions[1]].fine);
      CHECK(t->class_n != t->class_p);
      CHECK(t->margins[0] == jaccard_margin(*d.attributes, t->class_p, t->class_n, 0.5));
      seen.insert(t->class_n);
    }
  }
  CHECK(seen.size() == 4);
  CHECK_THROWS_AS(TupletSampler(two_level(), MarginSchedule({0.2}), config(Structure::attributes)), ValidationError);
}

TEST_CASE("schedule depth must match the hierarchy") {
  CHECK_THROWS_AS(TupletSampler(two_level(), MarginSchedule({0.2}), config(Structure::hierarchy)), ValidationError);
  SamplerConfig bad = config(Structure::flat);
  bad.candidate_pool = 0;
  CHECK_THROWS_AS(TupletSampler(two_level(), MarginSchedule({0.2}), bad), ValidationError);
}

TEST_CASE("semi-hard mode needs embeddings") {
  const Dataset d = two_level();
  SamplerConfig c = config(Structure::hierarchy);
  c.mode = MiningMode::semi_hard;
  TupletSampler s(d, MarginSchedule({0.2, 0.1}), c);
  CHECK_THROWS_AS(s.sample(0), InputError);
  Eigen::MatrixXd emb(2, static_cast<Eigen::Index>(d.samples.size()));
  std::mt19937_64 rng(1);
  for (Eigen::Index j = 0; j < emb.cols(); ++j) emb.col(j) = testsupport::random_unit(rng, 2);
  CHECK(s.sample(0, &emb).has_value());
}

TEST_CASE("mine_negative forced and uniform cases") {
  std::mt19937_64 rng(1);
  const Eigen::MatrixXd emb = testsupport::random_matrix(rng, 3, 10);
  SamplerConfig c;
  std::mt19937_64 r1(5), r2(5);
  const std::vector<int> one{7};
  CHECK(mine_negative(emb, 0, one, 0.1, c, r1) == 7);
  c.mode = MiningMode::semi_hard;
  CHECK(mine_negative(emb, 0, one, 0.1, c, r1) == 7);

  c.mode = MiningMode::uniform;
  const std::vector<int> band{2, 3, 4, 5, 6, 8, 9};
  std::vector<int> first, second;
  r1.seed(9);
  r2.seed(9);
  for (int i = 0; i < 20; ++i) {
    first.push_back(mine_negative(emb, 0, band, 0.1, c, r1));
    second.push_back(mine_negative(emb, 0, band, 0.1, c, r2));
  }
  CHECK(first == second);
  CHECK_THROWS_AS(mine_negative(emb, 0, std::vector<int>{}, 0.1, c, r1), InputError);
}

TEST_CASE("semi-hard choice matches exhaustive search when K covers the band") {
  std::mt19937_64 rng(13);
  SamplerConfig c;
  c.mode = MiningMode::semi_hard;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 9;
    Eigen::MatrixXd emb(3, n + 1);
    for (int j = 0; j <= n; ++j) emb.col(j) = testsupport::random_unit(rng, 3);
    std::vector<int> band(n);
    std::iota(band.begin(), band.end(), 1);
    c.candidate_pool = n;
    const double dp = std::uniform_real_distribution<double>(0.0, 4.0)(rng);

    int expected = -1;
    double best = 1e9;
    for (int id : band) {
      const double d = (emb.col(0) - emb.col(id)).squaredNorm();
      if (d > dp && d < best) best = d, expected = id;
    }
    if (expected < 0) {
      double worst = -1;
      for (int id : band) {
        const double d = (emb.col(0) - emb.col(id)).squaredNorm();
        if (d > worst) worst = d, expected = id;
      }
    }
    CHECK(mine_negative(emb, 0, band, dp, c, rng) == expected);
  }
}

TEST_CASE("mode and structure names round-trip") {
  for (auto m : {MiningMode::uniform, MiningMode::semi_hard}) CHECK(parse_mining_mode(to_string(m)) == m);
  for (auto s : {Structure::flat, Structure::hierarchy, Structure::attributes}) CHECK(parse_structure(to_string(s)) == s);
  CHECK(parse_mining_mode("semi-hard") == MiningMode::semi_hard);
  CHECK_THROWS_AS(parse_mining_mode("hard"), ValidationError);
  CHECK_THROWS_AS(parse_structure("tree"), ValidationError);
}
