#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>
#include <string>
#include <vector>

#include "labelembed/dataset.hpp"
#include "labelembed/net.hpp"

namespace testsupport {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("labelembed_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Eigen::VectorXd random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = n(rng);
  return v.normalized();
}

inline Eigen::MatrixXd random_matrix(std::mt19937_64& rng, int rows, int cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

// Dataset over explicit paths: `per_class[c]` train samples of class c,
// features drawn at random. Every class path comes from `paths`.
inline labelembed::Dataset toy_dataset(const std::vector<std::vector<int>>& paths,
                                       const std::vector<int>& per_class, int input_dim,
                                       std::uint64_t seed = 1) {
  labelembed::Dataset d;
  d.input_dim = input_dim;
  d.num_classes = static_cast<int>(paths.size());
  d.hierarchy = labelembed::Hierarchy(paths);
  std::mt19937_64 rng(seed);
  for (int c = 0; c < d.num_classes; ++c) {
    for (int i = 0; i < per_class[c]; ++i) {
      labelembed::Sample s;
      s.id = static_cast<int>(d.samples.size());
      s.x = random_matrix(rng, input_dim, 1).col(0);
      s.fine = c;
      s.path = paths[c];
      d.samples.push_back(s);
    }
  }
  return d;
}

}  // namespace testsupport
