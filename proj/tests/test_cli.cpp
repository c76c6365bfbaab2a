#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "labelembed/checkpoint.hpp"
#include "labelembed/cli.hpp"
#include "labelembed/dataset.hpp"
#include "labelembed/eval.hpp"
#include "labelembed/gradcheck.hpp"
#include "support.hpp"

using namespace labelembed;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "labelembed");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  f << text;
}

std::string small_config(const std::string& extra_train = "", int epochs = 3) {
  return R"({
  "seed": 4,
  "data": { "hierarchy": { "branching": [2, 2], "samples_per_class": 10, "input_dim": 8, "seed": 3 } },
  "net": { "hidden_dims": [8], "embed_dim": 4 },
  "train": { "epochs": )" + std::to_string(epochs) + R"(, "batch_size": 8)" + extra_train + R"( },
  "eval": { "k_max": 100 }
})";
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("generate writes a manifest whose counts match the branching") {
  testsupport::TempDir dir("cli_gen");
  write(dir / "c.json", small_config());
  const auto r = cli({"generate", "--config", (dir / "c.json").string(), "--out", (dir / "a").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("generated 40 samples") != std::string::npos);
  const auto meta = nlohmann::json::parse(testsupport::slurp(dir / "a/meta.json"));
  CHECK(meta["C"] == 4);
  CHECK(meta["counts"]["total"] == 40);
  CHECK(fs::exists(dir / "a/samples.jsonl"));
  CHECK(fs::exists(dir / "a/generate.config.json"));

  REQUIRE(cli({"generate", "--config", (dir / "c.json").string(), "--out", (dir / "b").string(), "--quiet"}).code == 0);
  for (const char* f : {"meta.json", "samples.jsonl"}) CHECK(testsupport::slurp(dir / "a" / f) == testsupport::slurp(dir / "b" / f));
  // The recorded config differs only in the output directory.
  auto ca = nlohmann::json::parse(testsupport::slurp(dir / "a/generate.config.json"));
  auto cb = nlohmann::json::parse(testsupport::slurp(dir / "b/generate.config.json"));
  ca.erase("output_dir");
  cb.erase("output_dir");
  CHECK(ca == cb);

  REQUIRE(cli({"generate", "--config", (dir / "c.json").string(), "--out", (dir / "s").string(), "--seed", "9"}).code == 0);
  CHECK(testsupport::slurp(dir / "a/samples.jsonl") != testsupport::slurp(dir / "s/samples.jsonl"));
}

TEST_CASE("generate warns on growing level scales") {
  testsupport::TempDir dir("cli_warn");
  write(dir / "c.json", R"({"data": {"hierarchy": {"branching": [2, 2], "samples_per_class": 2, "level_scales": [0.5, 1.0]}}})");
  const auto r = cli({"generate", "--config", (dir / "c.json").string(), "--out", (dir / "o").string()});
  CHECK(r.code == 0);
  CHECK(r.err.find("warning:") != std::string::npos);
}

TEST_CASE("malformed JSON reports line and column with exit 2") {
  testsupport::TempDir dir("cli_json");
  write(dir / "bad.json", "{\n  \"seed\": 1,\n  \"data\": { \"hierarchy\": { \"branching\": [2, 2] }\n");
  const auto r = cli({"generate", "--config", (dir / "bad.json").string(), "--out", (dir / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("line 4") != std::string::npos);
  CHECK(r.err.find("column") != std::string::npos);

  write(dir / "bad2.json", "{\n  \"seed\": 1,,\n}\n");
  const auto r2 = cli({"generate", "--config", (dir / "bad2.json").string()});
  CHECK(r2.code == 2);
  CHECK(r2.err.find("line 2, column 13") != std::string::npos);
}

TEST_CASE("schema errors exit 2") {
  testsupport::TempDir dir("cli_schema");
  write(dir / "unknown.json", R"({"data": {"hierarchy": {"branchin": [2, 2]}}})");
  auto r = cli({"generate", "--config", (dir / "unknown.json").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("data.hierarchy.branchin") != std::string::npos);

  write(dir / "type.json", R"({"seed": "one", "data": {"hierarchy": {}}})");
  CHECK(cli({"generate", "--config", (dir / "type.json").string()}).code == 2);

  write(dir / "two.json", R"({"data": {"hierarchy": {}, "attributes": {}}})");
  CHECK(cli({"generate", "--config", (dir / "two.json").string()}).code == 2);

  write(dir / "lambda.json", R"({"data": {"hierarchy": {}}, "train": {"lambda_s": 2}})");
  CHECK(cli({"train", "--config", (dir / "lambda.json").string(), "--out", (dir / "o").string()}).code == 2);

  CHECK(cli({"generate", "--config", (dir / "missing.json").string()}).code == 2);
  CHECK(cli({"generate"}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("train with zero epochs writes an empty log and the initial checkpoint") {
  testsupport::TempDir dir("cli_train0");
  write(dir / "c.json", small_config("", 0));
  const auto r = cli({"train", "--config", (dir / "c.json").string(), "--out", dir.path().string(), "--quiet"});
  REQUIRE(r.code == 0);
  CHECK(testsupport::slurp(dir / "epochs.jsonl").empty());
  const auto p = load_checkpoint(dir / "checkpoint.txt");
  CHECK(p.config == NetConfig{8, {8}, 4, 4});
  CHECK(p.all_finite());
  CHECK(fs::exists(dir / "train.config.json"));
}

TEST_CASE("train is reproducible and eval consumes its checkpoint") {
  testsupport::TempDir dir("cli_train");
  write(dir / "c.json", small_config());
  const auto a = cli({"train", "--config", (dir / "c.json").string(), "--out", (dir / "a").string()});
  REQUIRE(a.code == 0);
  CHECK(a.out.find("trained 3 epochs, seed 4") != std::string::npos);
  REQUIRE(cli({"train", "--config", (dir / "c.json").string(), "--out", (dir / "b").string(), "--quiet"}).code == 0);
  CHECK(lines(testsupport::slurp(dir / "a/epochs.jsonl")).size() == 3);
  CHECK(lines(testsupport::slurp(dir / "a/timing.jsonl")).size() == 3);
  CHECK(testsupport::slurp(dir / "a/epochs.jsonl") == testsupport::slurp(dir / "b/epochs.jsonl"));
  CHECK(testsupport::slurp(dir / "a/checkpoint.txt") == testsupport::slurp(dir / "b/checkpoint.txt"));

  REQUIRE(cli({"train", "--config", (dir / "c.json").string(), "--out", (dir / "s").string(), "--seed", "5", "--quiet"}).code == 0);
  CHECK(testsupport::slurp(dir / "a/checkpoint.txt") != testsupport::slurp(dir / "s/checkpoint.txt"));

  const auto e1 = cli({"eval", "--config", (dir / "c.json").string(), "--out", (dir / "a").string()});
  REQUIRE(e1.code == 0);
  const std::string report = testsupport::slurp(dir / "a/report.json");
  const std::string csv = testsupport::slurp(dir / "a/precision.csv");
  REQUIRE(cli({"eval", "--config", (dir / "c.json").string(), "--out", (dir / "a").string(), "--quiet"}).code == 0);
  CHECK(testsupport::slurp(dir / "a/report.json") == report);
  CHECK(testsupport::slurp(dir / "a/precision.csv") == csv);
  const auto j = nlohmann::json::parse(report);
  CHECK(j["k_max"] == 19);  // clipped to the 20 test samples minus the query
  CHECK(j["precision"].contains("fine"));
  CHECK(j["precision"].contains("level1"));
  CHECK(lines(csv).front() == "k,fine,level1");

  REQUIRE(cli({"export-pca", "--config", (dir / "c.json").string(), "--out", (dir / "a").string(), "--quiet"}).code == 0);
  const auto pca = lines(testsupport::slurp(dir / "a/pca.csv"));
  CHECK(pca.front() == "id,fine,pc1,pc2");
  CHECK(pca.size() == 21);
  CHECK(nlohmann::json::parse(testsupport::slurp(dir / "a/pca.json"))["out_dim"] == 2);
}

TEST_CASE("eval rejects a checkpoint with the wrong dimensions") {
  testsupport::TempDir dir("cli_dims");
  write(dir / "c.json", small_config());
  save_checkpoint(dir / "checkpoint.txt", Parameters<double>::glorot(NetConfig{7, {8}, 4, 4}, 1));
  const auto r = cli({"eval", "--config", (dir / "c.json").string(), "--out", dir.path().string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("error:") != std::string::npos);
  CHECK(cli({"eval", "--config", (dir / "c.json").string(), "--out", (dir / "none").string()}).code == 2);
}

namespace {

// Manifest on disk plus a checkpoint whose embedding is the normalized input.
void identity_fixture(const fs::path& dir, const std::vector<std::array<double, 2>>& points,
                      const std::vector<std::vector<int>>& paths, const std::vector<ClassId>& fine) {
  Dataset d;
  d.input_dim = 2;
  d.num_classes = static_cast<int>(paths.size());
  d.hierarchy = Hierarchy(paths);
  for (std::size_t i = 0; i < points.size(); ++i) {
    Sample s;
    s.id = static_cast<int>(i);
    s.split = Split::test;
    s.x = Eigen::Vector2d(points[i][0], points[i][1]);
    s.fine = fine[i];
    s.path = paths[fine[i]];
    d.samples.push_back(s);
  }
  write_manifest(d, dir / "data");
  auto p = Parameters<double>::zeros(NetConfig{2, {}, 2, d.num_classes});
  p.embedding.weight.setIdentity();
  save_checkpoint(dir / "checkpoint.txt", p);
  write(dir / "c.json", R"({"data": {"path": ")" + (dir / "data").generic_string() +
                            R"("}, "net": {"hidden_dims": [], "embed_dim": 2}, "eval": {"predicates": ["fine", "level1"]}})");
}

}  // namespace

TEST_CASE("eval on a single-class dataset gives an all-ones fine curve") {
  testsupport::TempDir dir("cli_single");
  identity_fixture(dir.path(), {{1, 0}, {0, 1}, {-1, 0.5}, {0.3, -1}}, {{0, 0}}, {0, 0, 0, 0});
  REQUIRE(cli({"eval", "--config", (dir / "c.json").string(), "--out", dir.path().string(), "--quiet"}).code == 0);
  const auto j = nlohmann::json::parse(testsupport::slurp(dir / "report.json"));
  CHECK(j["precision"]["fine"] == std::vector<double>{1.0, 1.0, 1.0});
}

TEST_CASE("eval on a six-point fixture matches enumeration") {
  testsupport::TempDir dir("cli_six");
  const std::vector<std::array<double, 2>> pts{{1, 0}, {0.8, 0.6}, {0, 1}, {-0.6, 0.8}, {-1, 0}, {0.6, -0.8}};
  const std::vector<ClassId> fine{0, 1, 0, 2, 3, 1};
  const std::vector<std::vector<int>> paths{{0, 0}, {0, 1}, {1, 2}, {1, 3}};
  identity_fixture(dir.path(), pts, paths, fine);
  REQUIRE(cli({"eval", "--config", (dir / "c.json").string(), "--out", dir.path().string(), "--quiet"}).code == 0);
  const auto j = nlohmann::json::parse(testsupport::slurp(dir / "report.json"));

  // Enumerate every ordering of the other five points and keep the one sorted by (distance, id).
  const Hierarchy h(paths);
  for (int level : {2, 1}) {
    std::vector<double> expected(5, 0.0);
    for (int q = 0; q < 6; ++q) {
      std::vector<int> others;
      for (int i = 0; i < 6; ++i)
        if (i != q) others.push_back(i);
      Eigen::Vector2d yq = Eigen::Vector2d(pts[q][0], pts[q][1]).normalized();
      auto dist = [&](int i) { return (Eigen::Vector2d(pts[i][0], pts[i][1]).normalized() - yq).squaredNorm(); };
      std::vector<int> best;
      do {
        bool sorted = true;
        for (int k = 1; k < 5; ++k) {
          const int a = others[k - 1], b = others[k];
          sorted = sorted && (dist(a) < dist(b) || (dist(a) == dist(b) && a < b));
        }
        if (sorted) best = others;
      } while (std::next_permutation(others.begin(), others.end()));
      int hits = 0;
      for (int k = 0; k < 5; ++k) {
        hits += shared_depth(h, fine[q], fine[best[k]]) >= level;
        expected[k] += static_cast<double>(hits) / (k + 1);
      }
    }
    const std::string key = level == 2 ? "fine" : "level1";
    for (int k = 0; k < 5; ++k) CHECK(j["precision"][key][k].get<double>() == doctest::Approx(expected[k] / 6).epsilon(1e-12));
  }
}

TEST_CASE("gradcheck exit codes") {
  testsupport::TempDir dir("cli_grad");
  write(dir / "g.json", R"({"gradcheck": {"cases": 2}})");
  const auto ok = cli({"gradcheck", "--config", (dir / "g.json").string()});
  CHECK(ok.code == 0);
  for (const auto& name : gradcheck_components()) CHECK(ok.out.find(name) != std::string::npos);

  for (double lambda : {0.0, 1.0}) {
    write(dir / "l.json", R"({"gradcheck": {"cases": 2, "lambda_s": )" + std::to_string(lambda) + "}}");
    CHECK(cli({"gradcheck", "--config", (dir / "l.json").string(), "--quiet"}).code == 0);
  }

  testing::corrupt_component("quadruplet");
  const auto bad = cli({"gradcheck", "--config", (dir / "g.json").string()});
  testing::clear_corruption();
  CHECK(bad.code == 4);
  CHECK(bad.err.find("quadruplet") != std::string::npos);
}

TEST_CASE("divergence exits 3 and serializes the batch") {
  testsupport::TempDir dir("cli_div");
  write(dir / "c.json", small_config(R"(, "learning_rate": 1e200)"));
  const auto r = cli({"train", "--config", (dir / "c.json").string(), "--out", dir.path().string(), "--quiet"});
  CHECK(r.code == 3);
  REQUIRE(fs::exists(dir / "diverged_batch.json"));
  const auto j = nlohmann::json::parse(testsupport::slurp(dir / "diverged_batch.json"));
  CHECK(j["seed"] == 4);
  CHECK(j["epoch"] == 1);
  CHECK_FALSE(fs::exists(dir / "checkpoint.txt"));
}
