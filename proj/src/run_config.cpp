#include "labelembed/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "labelembed/errors.hpp"

namespace labelembed {

namespace {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

// Reads the members of one JSON object, remembering which keys were used so
// that leftovers can be reported.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j.is_object()) throw ValidationError(label() + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json* child(const char* key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

  std::string path(const char* key) const { return where_.empty() ? key : where_ + "." + key; }

  template <typename T>
  void get(const char* key, T& out) {
    if (const json* v = child(key)) out = convert<T>(*v, path(key));
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    if (const json* v = child(key)) out = convert<T>(*v, path(key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ValidationError("unknown key '" + path(key.c_str()) + "'");
    }
  }

 private:
  std::string label() const { return where_.empty() ? "configuration" : "'" + where_ + "'"; }

  template <typename T>
  static T convert(const json& v, const std::string& where) {
    auto bad = [&](const char* what) { return ValidationError("'" + where + "' must be " + what); };
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw bad("a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw bad("a non-negative integer");
      return v.get<std::uint64_t>();
    } else if constexpr (std::is_same_v<T, int>) {
      if (!v.is_number_integer()) throw bad("an integer");
      const auto n = v.get<std::int64_t>();
      if (n < INT32_MIN || n > INT32_MAX) throw bad("a 32-bit integer");
      return static_cast<int>(n);
    } else if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw bad("a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw bad("a string");
      return v.get<std::string>();
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      if (!v.is_string()) throw bad("a path string");
      return std::filesystem::path(v.get<std::string>());
    } else {
      if (!v.is_array()) throw bad("an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], where + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

Split split_value(Fields& f, const char* key, Split fallback) {
  std::string s = to_string(fallback);
  f.get(key, s);
  try {
    return parse_split(s);
  } catch (const std::exception&) {
    throw ValidationError("'" + f.path(key) + "' must be \"train\" or \"test\"");
  }
}

void read_hierarchy(const json& j, const std::string& where, HierGenConfig& c) {
  Fields f(j, where);
  f.get("branching", c.branching);
  f.get("samples_per_class", c.samples_per_class);
  f.get("input_dim", c.input_dim);
  f.get("level_scales", c.level_scales);
  f.get("noise_sigma", c.noise_sigma);
  f.get("seed", c.seed);
  f.get("test_fraction", c.test_fraction);
  f.finish();
  c.validate();
}

void read_attributes(const json& j, const std::string& where, AttrGenConfig& c) {
  Fields f(j, where);
  f.get("num_classes", c.num_classes);
  f.get("num_attributes", c.num_attributes);
  f.get("attrs_per_class", c.attrs_per_class);
  f.get("samples_per_class", c.samples_per_class);
  f.get("input_dim", c.input_dim);
  f.get("prototype_scale", c.prototype_scale);
  f.get("noise_sigma", c.noise_sigma);
  f.get("seed", c.seed);
  f.get("test_fraction", c.test_fraction);
  f.finish();
  c.validate();
}

void read_data(const json& j, DataSpec& d) {
  Fields f(j, "data");
  const int sources = f.has("path") + f.has("hierarchy") + f.has("attributes");
  if (sources != 1) {
    throw ValidationError("'data' needs exactly one of 'path', 'hierarchy', 'attributes'");
  }
  if (const json* v = f.child("hierarchy")) {
    d.source = DataSpec::Source::hierarchy;
    read_hierarchy(*v, "data.hierarchy", d.hierarchy);
  }
  if (const json* v = f.child("attributes")) {
    d.source = DataSpec::Source::attributes;
    read_attributes(*v, "data.attributes", d.attributes);
  }
  if (f.has("path")) {
    d.source = DataSpec::Source::path;
    f.get("path", d.path);
  }
  f.finish();
}

void read_net(const json& j, NetSpec& n) {
  Fields f(j, "net");
  f.get("hidden_dims", n.hidden_dims);
  f.get("embed_dim", n.embed_dim);
  f.finish();
  for (int h : n.hidden_dims)
    if (h < 1) throw ValidationError("'net.hidden_dims' entries must be positive");
  if (n.embed_dim < 1) throw ValidationError("'net.embed_dim' must be positive");
}

void read_sampler(const json& j, SamplerConfig& s) {
  Fields f(j, "train.sampler");
  std::string mode = to_string(s.mode);
  std::string structure = to_string(s.structure);
  f.get("mode", mode);
  f.get("candidate_pool", s.candidate_pool);
  f.get("structure", structure);
  f.finish();
  s.mode = parse_mining_mode(mode);
  s.structure = parse_structure(structure);
  s.validate();
}

void read_train(const json& j, TrainSpec& t) {
  Fields f(j, "train");
  TrainConfig& c = t.config;
  f.get("lambda_s", c.lambda_s);
  f.get("learning_rate", c.learning_rate);
  f.get("momentum", c.momentum);
  f.get("epochs", c.epochs);
  f.get("batch_size", c.batch_size);
  f.get("softmax_all_branches", c.softmax_all_branches);
  f.get("workers", c.workers);
  f.get("margins", t.margins);
  f.get("base_margin", t.base_margin);
  if (const json* v = f.child("sampler")) read_sampler(*v, c.sampler);
  f.finish();
  if (!(t.base_margin > 0.0)) throw ValidationError("'train.base_margin' must be positive");
  if (t.margins) MarginSchedule(*t.margins, t.base_margin);  // validates ordering
  c.validate();
}

void read_eval(const json& j, EvalSpec& e) {
  Fields f(j, "eval");
  f.get("predicates", e.predicates);
  f.get("k_max", e.k_max);
  e.gallery = split_value(f, "gallery", e.gallery);
  f.get("checkpoint", e.checkpoint);
  f.finish();
  for (const auto& p : e.predicates) RelevancePredicate::parse(p);
  if (e.k_max < 1) throw ValidationError("'eval.k_max' must be positive");
}

void read_pca(const json& j, PcaSpec& p) {
  Fields f(j, "pca");
  f.get("out_dim", p.out_dim);
  p.split = split_value(f, "split", p.split);
  f.finish();
  if (p.out_dim < 1) throw ValidationError("'pca.out_dim' must be positive");
}

void read_gradcheck(const json& j, GradcheckConfig& g) {
  Fields f(j, "gradcheck");
  if (const json* v = f.child("net")) {
    Fields n(*v, "gradcheck.net");
    n.get("input_dim", g.net.input_dim);
    n.get("hidden_dims", g.net.hidden_dims);
    n.get("embed_dim", g.net.embed_dim);
    n.get("num_classes", g.net.num_classes);
    n.finish();
  }
  f.get("cases", g.cases);
  f.get("step", g.step);
  f.get("tolerance", g.tolerance);
  f.get("kink_guard", g.kink_guard);
  f.get("lambda_s", g.lambda_s);
  f.finish();
  g.validate();
}

std::pair<int, int> line_column(const std::string& text, std::size_t byte) {
  int line = 1, column = 1;
  for (std::size_t i = 0; i < text.size() && i + 1 < byte; ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, column] = line_column(text, e.byte);
    std::string what = e.what();
    // Drop nlohmann's "[json.exception.parse_error.101] parse error at line.., column..: " prefix.
    if (auto colon = what.find(": "); colon != std::string::npos) what = what.substr(colon + 2);
    throw ValidationError("malformed JSON at line " + std::to_string(line) + ", column " +
                          std::to_string(column) + ": " + what);
  }

  RunConfig run;
  Fields f(j, "");
  f.get("seed", run.seed);
  f.get("output_dir", run.output_dir);
  if (const json* v = f.child("data")) read_data(*v, run.data);
  if (const json* v = f.child("net")) read_net(*v, run.net);
  if (const json* v = f.child("train")) read_train(*v, run.train);
  if (const json* v = f.child("eval")) read_eval(*v, run.eval);
  if (const json* v = f.child("pca")) read_pca(*v, run.pca);
  if (const json* v = f.child("gradcheck")) read_gradcheck(*v, run.gradcheck);
  f.finish();
  return run;
}

RunConfig load_run_config(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ValidationError("cannot open config " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str());
  } catch (const ValidationError& e) {
    throw ValidationError(file.string() + ": " + e.what());
  }
}

ojson RunConfig::to_json() const {
  ojson j;
  j["seed"] = seed;
  j["output_dir"] = output_dir.string();
  ojson& d = j["data"];
  switch (data.source) {
    case DataSpec::Source::path:
      d["path"] = data.path.string();
      break;
    case DataSpec::Source::hierarchy: {
      const auto& h = data.hierarchy;
      d["hierarchy"] = {{"branching", h.branching},
                        {"samples_per_class", h.samples_per_class},
                        {"input_dim", h.input_dim},
                        {"level_scales", h.level_scales},
                        {"noise_sigma", h.noise_sigma},
                        {"seed", h.seed},
                        {"test_fraction", h.test_fraction}};
      break;
    }
    case DataSpec::Source::attributes: {
      const auto& a = data.attributes;
      d["attributes"] = {{"num_classes", a.num_classes},
                         {"num_attributes", a.num_attributes},
                         {"attrs_per_class", a.attrs_per_class},
                         {"samples_per_class", a.samples_per_class},
                         {"input_dim", a.input_dim},
                         {"prototype_scale", a.prototype_scale},
                         {"noise_sigma", a.noise_sigma},
                         {"seed", a.seed},
                         {"test_fraction", a.test_fraction}};
      break;
    }
  }
  j["net"] = {{"hidden_dims", net.hidden_dims}, {"embed_dim", net.embed_dim}};
  const TrainConfig& t = train.config;
  ojson& tj = j["train"];
  tj = {{"lambda_s", t.lambda_s},
        {"learning_rate", t.learning_rate},
        {"momentum", t.momentum},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"softmax_all_branches", t.softmax_all_branches},
        {"workers", t.workers}};
  if (train.margins) tj["margins"] = *train.margins;
  tj["base_margin"] = train.base_margin;
  tj["sampler"] = {{"mode", to_string(t.sampler.mode)},
                   {"candidate_pool", t.sampler.candidate_pool},
                   {"structure", to_string(t.sampler.structure)}};
  ojson& e = j["eval"];
  e["predicates"] = eval.predicates;
  e["k_max"] = eval.k_max;
  e["gallery"] = to_string(eval.gallery);
  if (eval.checkpoint) e["checkpoint"] = eval.checkpoint->string();
  j["pca"] = {{"out_dim", pca.out_dim}, {"split", to_string(pca.split)}};
  const auto& g = gradcheck;
  j["gradcheck"] = {{"net",
                     {{"input_dim", g.net.input_dim},
                      {"hidden_dims", g.net.hidden_dims},
                      {"embed_dim", g.net.embed_dim},
                      {"num_classes", g.net.num_classes}}},
                    {"cases", g.cases},
                    {"step", g.step},
                    {"tolerance", g.tolerance},
                    {"kink_guard", g.kink_guard},
                    {"lambda_s", g.lambda_s}};
  return j;
}

Dataset load_dataset(const DataSpec& spec) {
  switch (spec.source) {
    case DataSpec::Source::hierarchy:
      return generate_hierarchy(spec.hierarchy).dataset;
    case DataSpec::Source::attributes:
      return generate_attributes(spec.attributes).dataset;
    case DataSpec::Source::path:
      return read_manifest(spec.path);
  }
  throw ValidationError("unknown data source");
}

NetConfig resolve_net(const RunConfig& run, const Dataset& dataset) {
  NetConfig n;
  n.input_dim = dataset.input_dim;
  n.hidden_dims = run.net.hidden_dims;
  n.embed_dim = run.net.embed_dim;
  n.num_classes = dataset.num_classes;
  n.validate();
  return n;
}

TrainConfig resolve_train(const RunConfig& run, const Dataset& dataset) {
  TrainConfig c = run.train.config;
  c.seed = run.seed;
  c.schedule = run.train.margins ? MarginSchedule(*run.train.margins, run.train.base_margin)
                                 : MarginSchedule::linear(dataset.num_levels(), run.train.base_margin);
  c.validate();
  return c;
}

std::vector<RelevancePredicate> resolve_predicates(const RunConfig& run, const Dataset& dataset) {
  std::vector<RelevancePredicate> out;
  if (!run.eval.predicates.empty()) {
    for (const auto& p : run.eval.predicates) out.push_back(RelevancePredicate::parse(p));
    return out;
  }
  out.push_back(RelevancePredicate::fine());
  for (int l = dataset.num_levels() - 1; l >= 1; --l) out.push_back(RelevancePredicate::at_level(l));
  if (dataset.attributes) out.push_back(RelevancePredicate::shares_attribute());
  return out;
}

}  // namespace labelembed
