#include "labelembed/cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>

#include "CLI11.hpp"
#include "json.hpp"
#include "labelembed/checkpoint.hpp"
#include "labelembed/errors.hpp"
#include "labelembed/eval.hpp"
#include "labelembed/gradcheck.hpp"
#include "labelembed/run_config.hpp"

namespace labelembed {

namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

struct Context {
  Options opt;
  std::ostream& out;
  std::ostream& err;
};

std::string real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

RunConfig load(const Context& ctx, bool required = true) {
  RunConfig run;
  if (!ctx.opt.config.empty()) {
    run = load_run_config(ctx.opt.config);
  } else if (required) {
    throw ValidationError("--config is required");
  }
  if (!ctx.opt.out.empty()) run.output_dir = ctx.opt.out;
  return run;
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream f(file, std::ios::binary);
  f << text;
  if (!f) throw std::runtime_error("cannot write " + file.string());
}

void write_resolved(const RunConfig& run, const std::string& command) {
  fs::create_directories(run.output_dir);
  write_text(run.output_dir / (command + ".config.json"), run.to_json().dump(2) + "\n");
}

int cmd_generate(const Context& ctx) {
  RunConfig run = load(ctx);
  DataSpec& data = run.data;
  if (data.source == DataSpec::Source::path) {
    throw ValidationError("generate needs 'data.hierarchy' or 'data.attributes'");
  }
  if (ctx.opt.seed) {
    data.hierarchy.seed = *ctx.opt.seed;
    data.attributes.seed = *ctx.opt.seed;
  }
  if (data.source == DataSpec::Source::hierarchy) {
    for (const auto& w : data.hierarchy.warnings()) ctx.err << "warning: " << w << '\n';
  }
  const Dataset d = load_dataset(data);
  write_manifest(d, run.output_dir);
  write_resolved(run, "generate");
  if (!ctx.opt.quiet) {
    ctx.out << "generated " << d.samples.size() << " samples (" << d.ids(Split::train).size()
            << " train, " << d.ids(Split::test).size() << " test), " << d.num_classes
            << " classes, " << d.num_levels() << " levels, " << d.num_attributes()
            << " attributes -> " << run.output_dir.string() << '\n';
  }
  return kExitOk;
}

int cmd_train(const Context& ctx) {
  RunConfig run = load(ctx);
  if (ctx.opt.seed) run.seed = *ctx.opt.seed;
  const Dataset d = load_dataset(run.data);
  const NetConfig net = resolve_net(run, d);
  const TrainConfig config = resolve_train(run, d);

  fs::create_directories(run.output_dir);
  // Outputs of an earlier run in the same directory must not survive this one.
  fs::remove(run.output_dir / "checkpoint.txt");
  fs::remove(run.output_dir / "diverged_batch.json");
  write_resolved(run, "train");
  std::ofstream epochs(run.output_dir / "epochs.jsonl", std::ios::binary);
  std::ofstream timing(run.output_dir / "timing.jsonl", std::ios::binary);
  if (!epochs || !timing) throw std::runtime_error("cannot write logs to " + run.output_dir.string());

  int last_epoch = 0;
  const int report_every = std::max(1, config.epochs / 10);
  auto on_epoch = [&](const EpochLog& log) {
    last_epoch = log.epoch;
    epochs << to_json_line(log) << '\n';
    timing << "{\"epoch\":" << log.epoch << ",\"seconds\":" << real(log.seconds) << "}\n";
    epochs.flush();
    if (!ctx.opt.quiet && (log.epoch % report_every == 0 || log.epoch == config.epochs)) {
      ctx.out << "epoch " << log.epoch << " loss " << fixed(log.loss) << " softmax "
              << fixed(log.softmax_loss) << " triplet " << fixed(log.triplet_loss)
              << " train_acc " << fixed(log.train_accuracy) << '\n';
    }
  };

  TrainResult result;
  try {
    result = train(d, net, config, on_epoch);
  } catch (const TrainingDiverged& e) {
    nlohmann::ordered_json j;
    j["epoch"] = last_epoch + 1;
    j["seed"] = run.seed;
    j["error"] = e.what();
    j["detail"] = nlohmann::ordered_json::parse(e.payload());
    write_text(run.output_dir / "diverged_batch.json", j.dump(2) + "\n");
    ctx.err << "training diverged in epoch " << last_epoch + 1 << ": " << e.what()
            << " (batch written to diverged_batch.json)\n";
    return kExitDiverged;
  }
  save_checkpoint(run.output_dir / "checkpoint.txt", result.params);

  const auto test_ids = d.ids(Split::test);
  const double test_acc = test_ids.empty() ? 0.0 : classification_accuracy(result.params, d, test_ids);
  ctx.out << "trained " << result.logs.size() << " epochs, seed " << run.seed;
  if (!result.logs.empty()) {
    ctx.out << ", loss " << fixed(result.logs.front().loss) << " -> " << fixed(result.logs.back().loss);
  }
  ctx.out << ", test accuracy " << fixed(test_acc) << ", skipped references "
          << result.skipped_references << '\n';
  return kExitOk;
}

Parameters<double> load_params(const RunConfig& run, const Dataset& d) {
  const fs::path file = run.eval.checkpoint.value_or(run.output_dir / "checkpoint.txt");
  Parameters<double> params = load_checkpoint(file);
  if (params.config.input_dim != d.input_dim || params.config.num_classes != d.num_classes) {
    throw ValidationError("checkpoint expects " + std::to_string(params.config.input_dim) +
                          " features and " + std::to_string(params.config.num_classes) +
                          " classes, dataset has " + std::to_string(d.input_dim) + " and " +
                          std::to_string(d.num_classes));
  }
  return params;
}

int cmd_eval(const Context& ctx) {
  const RunConfig run = load(ctx);
  const Dataset d = load_dataset(run.data);
  const Parameters<double> params = load_params(run, d);
  const auto predicates = resolve_predicates(run, d);
  const auto ctx_labels = LabelContext::of(d);

  const auto query_ids = d.ids(Split::test);
  if (query_ids.empty()) throw ValidationError("dataset has no test samples to query");
  const bool test_as_both = run.eval.gallery == Split::test;
  const auto gallery_ids = test_as_both ? query_ids : d.ids(run.eval.gallery);
  const int available = static_cast<int>(gallery_ids.size()) - (test_as_both ? 1 : 0);
  if (available < 1) throw ValidationError("gallery is too small for retrieval");

  RetrievalReport report;
  report.k_max = std::min(run.eval.k_max, available);
  report.num_queries = static_cast<int>(query_ids.size());
  report.classification_accuracy = classification_accuracy(params, d, query_ids);
  const Eigen::MatrixXd queries = extract_embeddings(params, d, query_ids);
  const auto query_labels = d.labels(query_ids);
  Eigen::MatrixXd gallery;
  std::vector<ClassId> gallery_labels;
  if (!test_as_both) {
    gallery = extract_embeddings(params, d, gallery_ids);
    gallery_labels = d.labels(gallery_ids);
  }
  for (const auto& p : predicates) {
    RetrievalCurve curve{p, {}};
    curve.precision = test_as_both
                          ? precision_at_k(queries, query_labels, ctx_labels, p, report.k_max)
                          : precision_at_k(queries, query_labels, gallery, gallery_labels,
                                           ctx_labels, p, report.k_max);
    report.curves.push_back(std::move(curve));
  }
  write_report(report, run.output_dir);
  if (!ctx.opt.quiet) {
    ctx.out << "test accuracy " << fixed(report.classification_accuracy);
    for (const auto& c : report.curves) {
      ctx.out << ", " << c.predicate.name() << "@" << report.k_max << " "
              << fixed(c.precision(report.k_max - 1));
    }
    ctx.out << '\n';
  }
  return kExitOk;
}

int cmd_export_pca(const Context& ctx) {
  const RunConfig run = load(ctx);
  const Dataset d = load_dataset(run.data);
  const Parameters<double> params = load_params(run, d);
  const auto ids = d.ids(run.pca.split);
  const PcaResult pca = pca_export(extract_embeddings(params, d, ids), run.pca.out_dim);

  fs::create_directories(run.output_dir);
  std::ofstream csv(run.output_dir / "pca.csv", std::ios::binary);
  csv << "id,fine";
  for (int k = 1; k <= run.pca.out_dim; ++k) csv << ",pc" << k;
  csv << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    csv << ids[i] << ',' << d.samples[ids[i]].fine;
    for (int k = 0; k < run.pca.out_dim; ++k) csv << ',' << real(pca.projection(i, k));
    csv << '\n';
  }
  if (!csv) throw std::runtime_error("cannot write pca.csv");

  nlohmann::ordered_json j;
  j["split"] = to_string(run.pca.split);
  j["out_dim"] = run.pca.out_dim;
  j["total_variance"] = pca.total_variance;
  j["explained_variance"] = std::vector<double>(pca.explained_variance.data(),
                                                pca.explained_variance.data() + pca.explained_variance.size());
  write_text(run.output_dir / "pca.json", j.dump(2) + "\n");
  if (!ctx.opt.quiet) {
    ctx.out << "projected " << ids.size() << " embeddings onto " << run.pca.out_dim
            << " axes, captured variance " << fixed(pca.explained_variance.sum() / pca.total_variance)
            << '\n';
  }
  return kExitOk;
}

int cmd_gradcheck(const Context& ctx) {
  const RunConfig run = load(ctx, false);
  GradcheckConfig config = run.gradcheck;
  config.seed = ctx.opt.seed.value_or(run.seed);
  const GradcheckReport report = run_gradcheck(config);
  for (const auto& c : report.components) {
    char line[160];
    std::snprintf(line, sizeof line, "%-10s max_rel_error %.3e  cases %d  %s", c.component.c_str(),
                  c.max_relative_error, c.cases, c.passed ? "ok" : "FAIL");
    ctx.out << line << '\n';
  }
  if (const ComponentResult* bad = report.first_failure()) {
    ctx.err << "gradcheck failed: component " << bad->component << " (max relative error "
            << bad->max_relative_error << " in " << bad->worst_tensor << ", tolerance "
            << config.tolerance << ")\n";
    return kExitGradcheck;
  }
  return kExitOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Structured metric learning: generate data, train, evaluate, check gradients."};
  app.require_subcommand(1);
  Options opt;
  using Handler = int (*)(const Context&);
  Handler handler = nullptr;

  auto add = [&](const char* name, const char* help, Handler h) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "run configuration (JSON)");
    sub->add_option("--out", opt.out, "output directory (overrides output_dir)");
    sub->add_option("--seed", opt.seed, "seed override");
    sub->add_flag("--quiet", opt.quiet, "suppress progress output");
    sub->callback([&handler, h] { handler = h; });
  };
  add("generate", "write a synthetic dataset manifest", cmd_generate);
  add("train", "train a network and write checkpoint and logs", cmd_train);
  add("eval", "write retrieval precision curves and accuracy", cmd_eval);
  add("gradcheck", "compare analytic gradients with finite differences", cmd_gradcheck);
  add("export-pca", "project embeddings onto their principal axes", cmd_export_pca);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitValidation;
  }

  const Context ctx{opt, out, err};
  try {
    return handler(ctx);
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

}  // namespace labelembed
