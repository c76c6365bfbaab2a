#include "labelembed/gradcheck.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <optional>
#include <random>

#include "labelembed/dataset.hpp"
#include "labelembed/errors.hpp"
#include "labelembed/losses.hpp"
#include "labelembed/trainer.hpp"

namespace labelembed {

namespace {

using MatrixXd = Matrix<double>;
using Params = Parameters<double>;

std::optional<std::string>& corrupted() {
  static std::optional<std::string> name;
  return name;
}

// A scalar function of the parameters together with its analytic gradient.
struct Problem {
  std::function<double(const Params&)> value;
  std::function<void(const Params&, GradientBuffer<double>&)> gradient;
};

MatrixXd gaussian_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> normal(0.0, 1.0);
  MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

bool clear_of_relu_kinks(const ForwardTrace<double>& t, double guard) {
  for (const auto& p : t.pre)
    if ((p.array().abs() < guard).any()) return false;
  return true;
}

// Squared distances from column 0 to every other column.
std::vector<double> reference_distances(const MatrixXd& y) {
  std::vector<double> d;
  for (Eigen::Index j = 1; j < y.cols(); ++j) d.push_back(squared_distance(y.col(0), y.col(j)));
  return d;
}

// Reorders columns 1.. of `inputs` so that distances to column 0 ascend.
void sort_companions(MatrixXd& inputs, const MatrixXd& y) {
  const std::vector<double> d = reference_distances(y);
  std::vector<int> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) { return d[a] < d[b]; });
  const MatrixXd old = inputs;
  for (std::size_t k = 0; k < order.size(); ++k) inputs.col(k + 1) = old.col(order[k] + 1);
}

// Positive hinge margins for ascending distances. Each hinge is active with
// probability 0.7; every activation stays at least `guard` away from 0.
std::vector<double> design_margins(std::span<const double> d, double guard, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> margins;
  for (std::size_t j = 1; j < d.size(); ++j) {
    const double gap = d[j] - d[j - 1];
    const double u = 0.2 + 0.6 * unit(rng);
    if (unit(rng) >= 0.7 && u * gap >= guard && (1 - u) * gap >= guard) {
      margins.push_back((1 - u) * gap);  // activation -u * gap
    } else {
      margins.push_back(gap + 0.01 + 0.29 * unit(rng));
    }
  }
  return margins;
}

// Embedding-space gradient of a loss of D(y_0, y_j), given dL/dD(y_0, y_j).
MatrixXd distance_to_embedding(const MatrixXd& y, const Vector<double>& dl_dd) {
  MatrixXd g = MatrixXd::Zero(y.rows(), y.cols());
  for (Eigen::Index j = 1; j < y.cols(); ++j) {
    const Vector<double> diff = 2.0 * (y.col(0) - y.col(j));
    g.col(0) += dl_dd(j - 1) * diff;
    g.col(j) -= dl_dd(j - 1) * diff;
  }
  return g;
}

using DistanceLoss = std::function<LossValue<double>(std::span<const double>)>;

Problem distance_problem(MatrixXd inputs, DistanceLoss loss) {
  Problem p;
  p.value = [=](const Params& params) {
    return loss(reference_distances(forward(params, inputs).embedding)).value;
  };
  p.gradient = [=](const Params& params, GradientBuffer<double>& g) {
    const auto trace = forward(params, inputs);
    const auto l = loss(reference_distances(trace.embedding));
    backward(params, trace, MatrixXd(), distance_to_embedding(trace.embedding, l.grads[0]), g);
  };
  return p;
}

struct Builder {
  const GradcheckConfig& config;
  std::mt19937_64& rng;

  // Draws inputs with `cols` samples; nullopt when a rectifier sits on a kink.
  std::optional<MatrixXd> inputs(const Params& params, Eigen::Index cols, bool sorted) {
    MatrixXd x = gaussian_matrix(rng, config.net.input_dim, cols);
    if (sorted) sort_companions(x, forward(params, x).embedding);
    if (!clear_of_relu_kinks(forward(params, x), config.kink_guard)) return std::nullopt;
    return x;
  }

  std::optional<Problem> softmax(const Params& params) {
    auto x = inputs(params, 1, false);
    if (!x) return std::nullopt;
    const int label = std::uniform_int_distribution<int>(0, config.net.num_classes - 1)(rng);
    Problem p;
    p.value = [=](const Params& w) { return softmax_nll(forward(w, *x).logits.col(0), label).value; };
    p.gradient = [=](const Params& w, GradientBuffer<double>& g) {
      const auto trace = forward(w, *x);
      const MatrixXd d_logits = softmax_nll(trace.logits.col(0), label).grads[0];
      backward(w, trace, d_logits, MatrixXd(), g);
    };
    return p;
  }

  // Shared by the hinge components: sorted inputs plus designed margins.
  std::optional<std::pair<MatrixXd, std::vector<double>>> hinge_setup(const Params& params,
                                                                      int companions) {
    auto x = inputs(params, companions + 1, true);
    if (!x) return std::nullopt;
    const auto d = reference_distances(forward(params, *x).embedding);
    auto margins = design_margins(d, config.kink_guard, rng);
    return std::make_pair(std::move(*x), std::move(margins));
  }

  std::optional<Problem> triplet(const Params& params) {
    auto s = hinge_setup(params, 2);
    if (!s) return std::nullopt;
    const double m = s->second[0];
    return distance_problem(s->first, [=](std::span<const double> d) {
      return triplet_hinge(d[0], d[1], m);
    });
  }

  std::optional<Problem> quadruplet(const Params& params) {
    auto s = hinge_setup(params, 3);
    if (!s) return std::nullopt;
    const double m2 = s->second[1];
    const double m1 = s->second[0] + m2;
    return distance_problem(s->first, [=](std::span<const double> d) {
      return quadruplet_loss(d[0], d[1], d[2], m1, m2);
    });
  }

  std::optional<Problem> tuplet3(const Params& params) {
    auto s = hinge_setup(params, 4);
    if (!s) return std::nullopt;
    const auto& t = s->second;
    const MarginSchedule schedule({t[0] + t[1] + t[2], t[1] + t[2], t[2]});
    return distance_problem(s->first, [=](std::span<const double> d) {
      return tuplet_loss(d, schedule);
    });
  }

  std::optional<Problem> adaptive(const Params& params) {
    auto s = hinge_setup(params, 2);
    if (!s) return std::nullopt;
    // Two classes with overlapping but different attribute sets.
    const int na = 6;
    std::vector<int> all(na);
    std::iota(all.begin(), all.end(), 0);
    std::shuffle(all.begin(), all.end(), rng);
    const AttributeTable table(na, {{all[0], all[1], all[2]}, {all[0], all[3]}});
    const double dissimilarity = 1.0 - jaccard_similarity(table, 0, 1);
    const double base = s->second[0] / dissimilarity;
    return distance_problem(s->first, [=](std::span<const double> d) {
      return adaptive_triplet(d[0], d[1], table, 0, 1, base);
    });
  }

  std::optional<Problem> combined(const Params& params) {
    // Batch: a triplet, a quadruplet, and a reference with no companions.
    auto trip = hinge_setup(params, 2);
    auto quad = hinge_setup(params, 3);
    auto solo = inputs(params, 1, false);
    if (!trip || !quad || !solo) return std::nullopt;

    auto dataset = std::make_shared<Dataset>();
    dataset->input_dim = config.net.input_dim;
    dataset->num_classes = config.net.num_classes;
    std::uniform_int_distribution<int> label(0, config.net.num_classes - 1);
    auto add = [&](const MatrixXd& cols) {
      std::vector<int> ids;
      for (Eigen::Index j = 0; j < cols.cols(); ++j) {
        Sample s;
        s.id = static_cast<int>(dataset->samples.size());
        s.x = cols.col(j);
        s.fine = label(rng);
        dataset->samples.push_back(s);
        ids.push_back(s.id);
      }
      return ids;
    };
    auto tuplet = [](std::vector<int> ids, std::vector<double> margins) {
      TupletIndices t;
      t.reference = ids[0];
      t.companions.assign(ids.begin() + 1, ids.end());
      t.margins = std::move(margins);
      return t;
    };
    std::vector<TupletIndices> batch{tuplet(add(trip->first), trip->second),
                                     tuplet(add(quad->first), quad->second),
                                     tuplet(add(*solo), {})};
    TrainConfig tc;
    tc.lambda_s = config.lambda_s;
    Problem p;
    p.value = [=](const Params& w) {
      GradientBuffer<double> scratch = Params::zeros(w.config);
      return batch_gradient(w, batch, *dataset, tc, scratch).loss;
    };
    p.gradient = [=](const Params& w, GradientBuffer<double>& g) {
      batch_gradient(w, batch, *dataset, tc, g);
    };
    return p;
  }

  std::optional<Problem> network(const Params& params) {
    auto x = inputs(params, 3, false);
    if (!x) return std::nullopt;
    const MatrixXd a = gaussian_matrix(rng, config.net.num_classes, 3);
    const MatrixXd b = gaussian_matrix(rng, config.net.embed_dim, 3);
    Problem p;
    p.value = [=](const Params& w) {
      const auto t = forward(w, *x);
      return (a.array() * t.logits.array()).sum() + (b.array() * t.embedding.array()).sum();
    };
    p.gradient = [=](const Params& w, GradientBuffer<double>& g) { backward(w, forward(w, *x), a, b, g); };
    return p;
  }

  std::optional<Problem> build(const std::string& component, const Params& params) {
    if (component == "softmax") return softmax(params);
    if (component == "triplet") return triplet(params);
    if (component == "quadruplet") return quadruplet(params);
    if (component == "tuplet3") return tuplet3(params);
    if (component == "adaptive") return adaptive(params);
    if (component == "combined") return combined(params);
    if (component == "network") return network(params);
    throw InputError("unknown gradcheck component '" + component + "'");
  }
};

GradientBuffer<double> finite_difference(const Problem& problem, Params params, double h) {
  GradientBuffer<double> fd = Params::zeros(params.config);
  zip_tensors(params, fd, [&](auto& t, auto& out) {
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      const double old = t.data()[i];
      t.data()[i] = old + h;
      const double plus = problem.value(params);
      t.data()[i] = old - h;
      const double minus = problem.value(params);
      t.data()[i] = old;
      out.data()[i] = (plus - minus) / (2.0 * h);
    }
  });
  return fd;
}

}  // namespace

void GradcheckConfig::validate() const {
  net.validate();
  if (cases < 1) throw ValidationError("gradcheck cases must be positive");
  if (!(step > 0.0)) throw ValidationError("finite-difference step must be positive");
  if (!(tolerance > 0.0)) throw ValidationError("gradcheck tolerance must be positive");
  if (!(kink_guard > 0.0)) throw ValidationError("kink_guard must be positive");
  if (!(lambda_s >= 0.0 && lambda_s <= 1.0)) throw ValidationError("lambda_s must lie in [0, 1]");
}

bool GradcheckReport::passed() const { return first_failure() == nullptr; }

const ComponentResult* GradcheckReport::first_failure() const {
  for (const auto& c : components)
    if (!c.passed) return &c;
  return nullptr;
}

const std::vector<std::string>& gradcheck_components() {
  static const std::vector<std::string> names{"softmax",  "triplet",  "quadruplet", "tuplet3",
                                              "adaptive", "combined", "network"};
  return names;
}

double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(a.norm(), b.norm());
  return scale == 0.0 ? 0.0 : (a - b).norm() / scale;
}

GradcheckReport run_gradcheck(const GradcheckConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  Builder builder{config, rng};
  const auto names = tensor_names(config.net);
  constexpr int kMaxAttempts = 1000;

  GradcheckReport report;
  for (const auto& component : gradcheck_components()) {
    ComponentResult result;
    result.component = component;
    for (int c = 0; c < config.cases; ++c) {
      std::optional<Problem> problem;
      Params params;
      for (int attempt = 0; !problem; ++attempt) {
        if (attempt == kMaxAttempts) {
          throw std::runtime_error("gradcheck could not draw a kink-free case for " + component);
        }
        if (attempt > 0) ++result.resamples;
        params = Params::glorot(config.net, rng());
        problem = builder.build(component, params);
      }

      GradientBuffer<double> analytic = Params::zeros(config.net);
      problem->gradient(params, analytic);
      if (corrupted() == component) for_each_tensor(analytic, [](auto& t) { t = -t; });
      GradientBuffer<double> fd = finite_difference(*problem, params, config.step);

      std::size_t index = 0;
      zip_tensors(analytic, fd, [&](const auto& a, const auto& f) {
        const double err = relative_error(a, f);
        if (result.worst_tensor.empty() || err > result.max_relative_error) {
          result.max_relative_error = err;
          result.worst_tensor = names[index];
        }
        ++index;
      });
      ++result.cases;
    }
    result.passed = result.max_relative_error <= config.tolerance;
    report.components.push_back(std::move(result));
  }
  return report;
}

namespace testing {
void corrupt_component(const std::string& component) { corrupted() = component; }
void clear_corruption() { corrupted().reset(); }
}  // namespace testing

}  // namespace labelembed
