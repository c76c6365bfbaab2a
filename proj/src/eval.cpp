#include "labelembed/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "labelembed/errors.hpp"
#include "labelembed/losses.hpp"

namespace labelembed {

std::string RelevancePredicate::name() const {
  switch (kind) {
    case Kind::fine:
      return "fine";
    case Kind::hierarchy_level:
      return "level" + std::to_string(level);
    case Kind::shares_attribute:
      return "shares_attribute";
  }
  return "?";
}

RelevancePredicate RelevancePredicate::parse(const std::string& name) {
  if (name == "fine") return fine();
  if (name == "shares_attribute") return shares_attribute();
  if (name.rfind("level", 0) == 0 && name.size() > 5) {
    const std::string digits = name.substr(5);
    if (std::all_of(digits.begin(), digits.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      return at_level(std::stoi(digits));
    }
  }
  throw ValidationError("unknown relevance predicate '" + name + "'");
}

bool relevant(const RelevancePredicate& p, const LabelContext& ctx, ClassId a, ClassId b) {
  switch (p.kind) {
    case RelevancePredicate::Kind::fine:
      return a == b;
    case RelevancePredicate::Kind::hierarchy_level:
      if (ctx.hierarchy == nullptr) throw InputError("level predicate needs a hierarchy");
      if (p.level < 1 || p.level > ctx.hierarchy->num_levels()) {
        throw InputError("level " + std::to_string(p.level) + " outside 1.." +
                         std::to_string(ctx.hierarchy->num_levels()));
      }
      return shared_depth(*ctx.hierarchy, a, b) >= p.level;
    case RelevancePredicate::Kind::shares_attribute:
      if (ctx.attributes == nullptr) throw InputError("attribute predicate needs an attribute table");
      return labelembed::shares_attribute(*ctx.attributes, a, b);
  }
  return false;
}

Eigen::MatrixXd extract_embeddings(const Parameters<double>& params, const Dataset& dataset,
                                   std::span<const int> ids) {
  if (ids.empty()) throw InputError("cannot embed an empty split");
  return forward(params, dataset.features(ids)).embedding.transpose();
}

namespace {

void check_predicate(const RelevancePredicate& p, const LabelContext& ctx) {
  // Validates level ranges and required tables up front.
  if (p.kind != RelevancePredicate::Kind::fine) {
    const ClassId any = 0;
    (void)relevant(p, ctx, any, any);
  }
}

Eigen::VectorXd ranked_precision(const Eigen::MatrixXd& queries, std::span<const ClassId> qlabels,
                                 const Eigen::MatrixXd& gallery, std::span<const ClassId> glabels,
                                 bool exclude_self, const LabelContext& ctx,
                                 const RelevancePredicate& predicate, int k_max) {
  const Eigen::Index nq = queries.rows();
  const Eigen::Index ng = gallery.rows();
  if (static_cast<std::size_t>(nq) != qlabels.size() || static_cast<std::size_t>(ng) != glabels.size()) {
    throw InputError("label count does not match embedding rows");
  }
  if (queries.cols() != gallery.cols()) throw InputError("query and gallery dimensions differ");
  const Eigen::Index available = exclude_self ? ng - 1 : ng;
  if (nq < 1 || k_max < 1 || k_max > available) {
    throw InputError("k_max must lie in 1.." + std::to_string(available));
  }
  check_predicate(predicate, ctx);

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(k_max);
  std::vector<int> order(static_cast<std::size_t>(ng));
  Eigen::VectorXd dist(ng);
  for (Eigen::Index q = 0; q < nq; ++q) {
    dist = (gallery.rowwise() - queries.row(q)).rowwise().squaredNorm();
    order.resize(static_cast<std::size_t>(ng));
    std::iota(order.begin(), order.end(), 0);
    if (exclude_self) order.erase(order.begin() + q);
    std::partial_sort(order.begin(), order.begin() + k_max, order.end(), [&](int a, int b) {
      return dist(a) < dist(b) || (dist(a) == dist(b) && a < b);
    });
    int hits = 0;
    for (int k = 0; k < k_max; ++k) {
      hits += relevant(predicate, ctx, qlabels[q], glabels[order[k]]);
      sum(k) += static_cast<double>(hits) / (k + 1);
    }
  }
  return sum / static_cast<double>(nq);
}

}  // namespace

Eigen::VectorXd precision_at_k(const Eigen::MatrixXd& embeddings, std::span<const ClassId> labels,
                               const LabelContext& ctx, const RelevancePredicate& predicate,
                               int k_max) {
  if (embeddings.rows() < 2) throw InputError("precision@k needs at least two samples");
  return ranked_precision(embeddings, labels, embeddings, labels, true, ctx, predicate, k_max);
}

Eigen::VectorXd precision_at_k(const Eigen::MatrixXd& queries, std::span<const ClassId> query_labels,
                               const Eigen::MatrixXd& gallery,
                               std::span<const ClassId> gallery_labels, const LabelContext& ctx,
                               const RelevancePredicate& predicate, int k_max) {
  return ranked_precision(queries, query_labels, gallery, gallery_labels, false, ctx, predicate,
                          k_max);
}

int argmax(const Eigen::Ref<const Eigen::VectorXd>& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = static_cast<int>(i);
  return best;
}

double classification_accuracy(const Parameters<double>& params, const Dataset& dataset,
                               std::span<const int> ids) {
  if (ids.empty()) return 0.0;
  const auto trace = forward(params, dataset.features(ids));
  int correct = 0;
  for (std::size_t j = 0; j < ids.size(); ++j) {
    correct += argmax(trace.logits.col(j)) == dataset.samples[ids[j]].fine;
  }
  return static_cast<double>(correct) / static_cast<double>(ids.size());
}

PcaResult pca_export(const Eigen::MatrixXd& embeddings, int out_dim) {
  const Eigen::Index n = embeddings.rows();
  const Eigen::Index d = embeddings.cols();
  if (n < 2) throw InputError("PCA needs at least two rows");
  if (out_dim < 1 || out_dim > d) throw InputError("PCA output dimension out of range");

  PcaResult r;
  r.mean = embeddings.colwise().mean();
  const Eigen::MatrixXd centered = embeddings.rowwise() - r.mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // Eigenvalues come back ascending.
  r.axes.resize(d, out_dim);
  r.explained_variance.resize(out_dim);
  for (int k = 0; k < out_dim; ++k) {
    Eigen::VectorXd axis = eig.eigenvectors().col(d - 1 - k);
    Eigen::Index big = 0;
    axis.cwiseAbs().maxCoeff(&big);
    if (axis(big) < 0) axis = -axis;
    r.axes.col(k) = axis;
    r.explained_variance(k) = eig.eigenvalues()(d - 1 - k);
  }
  r.total_variance = cov.trace();
  r.projection = centered * r.axes;
  return r;
}

int LinearProbe::predict(const Eigen::Ref<const Eigen::VectorXd>& feature) const {
  const Eigen::VectorXd logits = weight * feature + bias;
  return argmax(logits);
}

double LinearProbe::accuracy(const Eigen::MatrixXd& features, std::span<const ClassId> labels) const {
  if (labels.empty()) return 0.0;
  int correct = 0;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    correct += predict(features.row(i).transpose()) == labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(labels.size());
}

LinearProbe fit_linear_probe(const Eigen::MatrixXd& features, std::span<const ClassId> labels,
                             int num_classes, const LinearProbeConfig& config) {
  const Eigen::Index n = features.rows();
  if (n == 0 || static_cast<std::size_t>(n) != labels.size()) {
    throw InputError("probe needs one label per feature row");
  }
  LinearProbe probe;
  probe.weight = Eigen::MatrixXd::Zero(num_classes, features.cols());
  probe.bias = Eigen::VectorXd::Zero(num_classes);
  Eigen::MatrixXd vw = probe.weight;
  Eigen::VectorXd vb = probe.bias;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const Eigen::MatrixXd logits = (features * probe.weight.transpose()).rowwise() +
                                   probe.bias.transpose();
    Eigen::MatrixXd d_logits(n, num_classes);
    for (Eigen::Index i = 0; i < n; ++i) {
      d_logits.row(i) = softmax_nll(logits.row(i).transpose(), labels[i]).grads[0].transpose();
    }
    d_logits /= static_cast<double>(n);
    const Eigen::MatrixXd gw = d_logits.transpose() * features;
    const Eigen::VectorXd gb = d_logits.colwise().sum().transpose();
    vw = config.momentum * vw - config.learning_rate * gw;
    vb = config.momentum * vb - config.learning_rate * gb;
    probe.weight += vw;
    probe.bias += vb;
  }
  return probe;
}

void write_report(const RetrievalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json j;
  j["k_max"] = report.k_max;
  j["num_queries"] = report.num_queries;
  j["classification_accuracy"] = report.classification_accuracy;
  auto& curves = j["precision"] = nlohmann::ordered_json::object();
  for (const auto& c : report.curves) {
    curves[c.predicate.name()] = std::vector<double>(c.precision.data(),
                                                     c.precision.data() + c.precision.size());
  }
  std::ofstream json_out(dir / "report.json", std::ios::binary);
  json_out << j.dump(2) << '\n';

  std::ofstream csv(dir / "precision.csv", std::ios::binary);
  csv << 'k';
  for (const auto& c : report.curves) csv << ',' << c.predicate.name();
  csv << '\n';
  char buf[32];
  for (int k = 0; k < report.k_max; ++k) {
    csv << k + 1;
    for (const auto& c : report.curves) {
      std::snprintf(buf, sizeof buf, "%.17g", c.precision(k));
      csv << ',' << buf;
    }
    csv << '\n';
  }
  if (!json_out || !csv) throw std::runtime_error("cannot write report to " + dir.string());
}

}  // namespace labelembed
