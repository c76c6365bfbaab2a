#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "labelembed/errors.hpp"

namespace labelembed {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Shape of a shared-trunk MLP: input -> [hidden (ReLU)]* -> {logits, embedding}.
struct NetConfig {
  int input_dim = 0;
  std::vector<int> hidden_dims;
  int embed_dim = 0;
  int num_classes = 0;

  /// Width of the trunk output that both heads read.
  int trunk_dim() const { return hidden_dims.empty() ? input_dim : hidden_dims.back(); }
  void validate() const;
  bool operator==(const NetConfig&) const = default;
};

inline void NetConfig::validate() const {
  if (input_dim < 1 || embed_dim < 1 || num_classes < 1) {
    throw ValidationError("network dimensions must be positive");
  }
  for (int h : hidden_dims) {
    if (h < 1) throw ValidationError("hidden layer widths must be positive");
  }
}

template <typename Scalar>
struct Layer {
  Matrix<Scalar> weight;  // out x in
  Vector<Scalar> bias;    // out
};

/// One parameter set shared by every branch evaluation.
template <typename Scalar>
struct Parameters {
  NetConfig config;
  std::vector<Layer<Scalar>> trunk;
  Layer<Scalar> logits;
  Layer<Scalar> embedding;

  static Parameters zeros(const NetConfig& config);
  /// Glorot-uniform weights, zero biases.
  static Parameters glorot(const NetConfig& config, std::uint64_t seed);

  void set_zero();
  Eigen::Index size() const;
  bool all_finite() const;
};

/// Same shapes as Parameters; accumulates d(loss)/d(parameter).
template <typename Scalar>
using GradientBuffer = Parameters<Scalar>;

/// Calls fn(tensor_a, tensor_b) for every weight and bias, in checkpoint order:
/// trunk layers, then the logits head, then the embedding head.
template <typename Scalar, typename OtherScalar, typename Fn>
void zip_tensors(Parameters<Scalar>& a, Parameters<OtherScalar>& b, Fn&& fn) {
  for (std::size_t i = 0; i < a.trunk.size(); ++i) {
    fn(a.trunk[i].weight, b.trunk[i].weight);
    fn(a.trunk[i].bias, b.trunk[i].bias);
  }
  fn(a.logits.weight, b.logits.weight);
  fn(a.logits.bias, b.logits.bias);
  fn(a.embedding.weight, b.embedding.weight);
  fn(a.embedding.bias, b.embedding.bias);
}

/// Names of the tensors visited by zip_tensors, in the same order.
inline std::vector<std::string> tensor_names(const NetConfig& c) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < c.hidden_dims.size(); ++i) {
    names.push_back("trunk." + std::to_string(i) + ".weight");
    names.push_back("trunk." + std::to_string(i) + ".bias");
  }
  for (const char* head : {"logits", "embedding"}) {
    names.push_back(std::string(head) + ".weight");
    names.push_back(std::string(head) + ".bias");
  }
  return names;
}

template <typename Scalar, typename Fn>
void for_each_tensor(Parameters<Scalar>& p, Fn&& fn) {
  zip_tensors(p, p, [&](auto& t, auto&) { fn(t); });
}

template <typename Scalar, typename Fn>
void for_each_tensor(const Parameters<Scalar>& p, Fn&& fn) {
  auto& mutable_p = const_cast<Parameters<Scalar>&>(p);
  zip_tensors(mutable_p, mutable_p, [&](const auto& t, const auto&) { fn(t); });
}

template <typename Scalar>
Parameters<Scalar> Parameters<Scalar>::zeros(const NetConfig& config) {
  config.validate();
  Parameters p;
  p.config = config;
  int in = config.input_dim;
  for (int h : config.hidden_dims) {
    p.trunk.push_back({Matrix<Scalar>::Zero(h, in), Vector<Scalar>::Zero(h)});
    in = h;
  }
  p.logits = {Matrix<Scalar>::Zero(config.num_classes, in), Vector<Scalar>::Zero(config.num_classes)};
  p.embedding = {Matrix<Scalar>::Zero(config.embed_dim, in), Vector<Scalar>::Zero(config.embed_dim)};
  return p;
}

template <typename Scalar>
Parameters<Scalar> Parameters<Scalar>::glorot(const NetConfig& config, std::uint64_t seed) {
  Parameters p = zeros(config);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  auto fill = [&](Matrix<Scalar>& w) {
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = static_cast<Scalar>(limit * unit(rng));
  };
  for (auto& layer : p.trunk) fill(layer.weight);
  fill(p.logits.weight);
  fill(p.embedding.weight);
  return p;
}

template <typename Scalar>
void Parameters<Scalar>::set_zero() {
  for_each_tensor(*this, [](auto& t) { t.setZero(); });
}

template <typename Scalar>
Eigen::Index Parameters<Scalar>::size() const {
  Eigen::Index n = 0;
  for_each_tensor(*this, [&](const auto& t) { n += t.size(); });
  return n;
}

template <typename Scalar>
bool Parameters<Scalar>::all_finite() const {
  bool ok = true;
  for_each_tensor(*this, [&](const auto& t) { ok = ok && t.allFinite(); });
  return ok;
}

/// Cached intermediate values of a batched forward pass. Column j of every
/// matrix belongs to input column j.
template <typename Scalar>
struct ForwardTrace {
  Matrix<Scalar> input;
  std::vector<Matrix<Scalar>> pre;         // trunk pre-activations
  std::vector<Matrix<Scalar>> activation;  // trunk ReLU outputs
  Matrix<Scalar> z;                        // embedding before normalization
  Vector<Scalar> z_norm;                   // ||z|| per column
  Matrix<Scalar> embedding;                // z / ||z||
  Matrix<Scalar> logits;

  const Matrix<Scalar>& trunk_output() const {
    return activation.empty() ? input : activation.back();
  }
  Eigen::Index batch_size() const { return input.cols(); }
};

/// Runs every column of `inputs` through the network.
template <typename Scalar, typename Derived>
ForwardTrace<Scalar> forward(const Parameters<Scalar>& params,
                             const Eigen::MatrixBase<Derived>& inputs) {
  if (inputs.rows() != params.config.input_dim) {
    throw InputError("input has " + std::to_string(inputs.rows()) + " features, network expects " +
                     std::to_string(params.config.input_dim));
  }
  ForwardTrace<Scalar> tr;
  tr.input = inputs.template cast<Scalar>();
  if (!tr.input.allFinite()) throw InputError("input contains non-finite values");

  const Matrix<Scalar>* h = &tr.input;
  for (const auto& layer : params.trunk) {
    tr.pre.push_back((layer.weight * *h).colwise() + layer.bias);
    tr.activation.push_back(tr.pre.back().cwiseMax(Scalar(0)));
    h = &tr.activation.back();
  }
  tr.logits = (params.logits.weight * *h).colwise() + params.logits.bias;
  tr.z = (params.embedding.weight * *h).colwise() + params.embedding.bias;
  tr.z_norm = tr.z.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < tr.z_norm.size(); ++j) {
    if (!(tr.z_norm(j) > Scalar(0))) {
      throw DegenerateEmbedding("pre-normalization embedding is zero for input column " +
                                std::to_string(j));
    }
  }
  tr.embedding = tr.z.array().rowwise() / tr.z_norm.transpose().array();
  return tr;
}

/// Accumulates into `grads` the parameter gradient of
///   sum_j d_logits(:,j)' * logits(:,j) + d_embedding(:,j)' * embedding(:,j).
/// An empty (0x0) upstream matrix means "no gradient from that head".
template <typename Scalar>
void backward(const Parameters<Scalar>& params, const ForwardTrace<Scalar>& trace,
              const Matrix<Scalar>& d_logits, const Matrix<Scalar>& d_embedding,
              GradientBuffer<Scalar>& grads) {
  const Eigen::Index batch = trace.batch_size();
  const bool has_logits = d_logits.size() != 0;
  const bool has_embedding = d_embedding.size() != 0;
  if (has_logits && (d_logits.rows() != params.config.num_classes || d_logits.cols() != batch)) {
    throw InputError("d_logits shape does not match the forward trace");
  }
  if (has_embedding &&
      (d_embedding.rows() != params.config.embed_dim || d_embedding.cols() != batch)) {
    throw InputError("d_embedding shape does not match the forward trace");
  }
  if (grads.config != params.config) throw InputError("gradient buffer shape mismatch");
  if (!has_logits && !has_embedding) return;

  const Matrix<Scalar>& h = trace.trunk_output();
  Matrix<Scalar> d_h = Matrix<Scalar>::Zero(h.rows(), batch);

  if (has_logits) {
    grads.logits.weight.noalias() += d_logits * h.transpose();
    grads.logits.bias += d_logits.rowwise().sum();
    d_h.noalias() += params.logits.weight.transpose() * d_logits;
  }
  if (has_embedding) {
    // d_z = (I - y y') d_y / ||z||
    const auto& y = trace.embedding;
    const Eigen::Matrix<Scalar, 1, Eigen::Dynamic> radial = (y.array() * d_embedding.array()).colwise().sum();
    Matrix<Scalar> d_z = d_embedding - y * radial.asDiagonal();
    d_z = d_z.array().rowwise() / trace.z_norm.transpose().array();
    grads.embedding.weight.noalias() += d_z * h.transpose();
    grads.embedding.bias += d_z.rowwise().sum();
    d_h.noalias() += params.embedding.weight.transpose() * d_z;
  }

  for (std::size_t k = params.trunk.size(); k-- > 0;) {
    // ReLU subgradient at 0 is 0.
    Matrix<Scalar> d_pre = (trace.pre[k].array() > Scalar(0)).select(d_h, Scalar(0));
    const Matrix<Scalar>& below = k == 0 ? trace.input : trace.activation[k - 1];
    grads.trunk[k].weight.noalias() += d_pre * below.transpose();
    grads.trunk[k].bias += d_pre.rowwise().sum();
    if (k > 0) d_h.noalias() = params.trunk[k].weight.transpose() * d_pre;
  }
}

/// ||a - b||^2 between two unit vectors.
template <typename DerivedA, typename DerivedB>
typename DerivedA::Scalar squared_distance(const Eigen::MatrixBase<DerivedA>& a,
                                           const Eigen::MatrixBase<DerivedB>& b) {
  using Scalar = typename DerivedA::Scalar;
  if (a.size() != b.size()) throw InputError("squared_distance: dimension mismatch");
  constexpr double tol = 1e-6;
  if (std::abs(static_cast<double>(a.norm()) - 1.0) > tol ||
      std::abs(static_cast<double>(b.norm()) - 1.0) > tol) {
    throw ValidationError("squared_distance expects unit-norm inputs");
  }
  return static_cast<Scalar>((a - b).squaredNorm());
}

}  // namespace labelembed
