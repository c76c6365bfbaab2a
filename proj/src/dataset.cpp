#include "labelembed/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "labelembed/errors.hpp"

namespace labelembed {

namespace {

constexpr int kManifestVersion = 1;

std::string format_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void append_ints(std::string& out, const std::vector<int>& v) {
  out += '[';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  out += ']';
}

}  // namespace

const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + s + "'");
}

std::vector<int> Dataset::ids(Split s) const {
  std::vector<int> out;
  for (const auto& smp : samples)
    if (smp.split == s) out.push_back(smp.id);
  return out;
}

Eigen::MatrixXd Dataset::features(std::span<const int> ids) const {
  Eigen::MatrixXd m(input_dim, static_cast<Eigen::Index>(ids.size()));
  for (std::size_t j = 0; j < ids.size(); ++j) m.col(j) = samples.at(ids[j]).x;
  return m;
}

std::vector<ClassId> Dataset::labels(std::span<const int> ids) const {
  std::vector<ClassId> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(samples.at(id).fine);
  return out;
}

void Dataset::validate() const {
  if (input_dim < 1) throw ValidationError("dataset input dimension must be positive");
  if (hierarchy.num_classes() != num_classes) {
    throw ValidationError("hierarchy covers " + std::to_string(hierarchy.num_classes()) +
                          " classes, dataset declares " + std::to_string(num_classes));
  }
  if (attributes && attributes->num_classes() != num_classes) {
    throw ValidationError("attribute table does not cover every class");
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const std::string where = "sample " + std::to_string(i);
    if (s.id != static_cast<int>(i)) throw ValidationError(where + " has id " + std::to_string(s.id));
    if (s.x.size() != input_dim) throw ValidationError(where + " has the wrong feature count");
    if (!s.x.allFinite()) throw ValidationError(where + " has non-finite features");
    if (s.fine < 0 || s.fine >= num_classes) throw ValidationError(where + " has an unknown class");
    const auto p = hierarchy.path(s.fine);
    if (!std::equal(p.begin(), p.end(), s.path.begin(), s.path.end())) {
      throw ValidationError(where + " path disagrees with its class");
    }
    if (attributes) {
      const auto a = attributes->attributes(s.fine);
      if (!std::equal(a.begin(), a.end(), s.attrs.begin(), s.attrs.end())) {
        throw ValidationError(where + " attributes disagree with its class");
      }
    }
  }
}

void write_manifest(const Dataset& d, const std::filesystem::path& dir) {
  d.validate();
  std::filesystem::create_directories(dir);

  std::size_t n_train = 0;
  for (const auto& s : d.samples) n_train += s.split == Split::train;

  nlohmann::ordered_json meta;
  meta["format_version"] = kManifestVersion;
  meta["F"] = d.input_dim;
  meta["C"] = d.num_classes;
  meta["x"] = d.num_levels();
  meta["num_attributes"] = d.num_attributes();
  meta["counts"] = {{"train", n_train}, {"test", d.samples.size() - n_train},
                    {"total", d.samples.size()}};
  {
    std::ofstream out(dir / "meta.json", std::ios::binary);
    out << meta.dump(2) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (dir / "meta.json").string());
  }

  std::ofstream out(dir / "samples.jsonl", std::ios::binary);
  std::string line;
  for (const auto& s : d.samples) {
    line.clear();
    line += "{\"id\":" + std::to_string(s.id);
    line += ",\"split\":\"";
    line += to_string(s.split);
    line += "\",\"x\":[";
    for (Eigen::Index k = 0; k < s.x.size(); ++k) {
      if (k) line += ',';
      line += format_real(s.x(k));
    }
    line += "],\"fine\":" + std::to_string(s.fine) + ",\"path\":";
    append_ints(line, s.path);
    line += ",\"attrs\":";
    append_ints(line, s.attrs);
    line += "}\n";
    out << line;
  }
  if (!out) throw std::runtime_error("cannot write " + (dir / "samples.jsonl").string());
}

Dataset read_manifest(const std::filesystem::path& dir) {
  std::ifstream meta_in(dir / "meta.json");
  if (!meta_in) throw InputError("cannot open " + (dir / "meta.json").string());
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("meta.json: " + std::string(e.what()));
  }
  if (meta.value("format_version", -1) != kManifestVersion) {
    throw ValidationError("unsupported manifest format_version");
  }

  Dataset d;
  d.input_dim = meta.at("F").get<int>();
  d.num_classes = meta.at("C").get<int>();
  const int levels = meta.at("x").get<int>();
  const int num_attributes = meta.at("num_attributes").get<int>();

  std::ifstream in(dir / "samples.jsonl");
  if (!in) throw InputError("cannot open " + (dir / "samples.jsonl").string());
  std::map<int, std::vector<int>> paths;
  std::map<int, std::vector<int>> attrs;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      Sample s;
      s.id = rec.at("id").get<int>();
      s.split = parse_split(rec.at("split").get<std::string>());
      const auto xs = rec.at("x").get<std::vector<double>>();
      s.x = Eigen::Map<const Eigen::VectorXd>(xs.data(), static_cast<Eigen::Index>(xs.size()));
      s.fine = rec.at("fine").get<int>();
      s.path = rec.at("path").get<std::vector<int>>();
      s.attrs = rec.at("attrs").get<std::vector<int>>();
      if (static_cast<int>(s.path.size()) != levels) {
        throw ValidationError("path length differs from x");
      }
      auto [pit, pnew] = paths.emplace(s.fine, s.path);
      if (!pnew && pit->second != s.path) throw ValidationError("class path is inconsistent");
      auto [ait, anew] = attrs.emplace(s.fine, s.attrs);
      if (!anew && ait->second != s.attrs) throw ValidationError("class attributes are inconsistent");
      d.samples.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("samples.jsonl line " + std::to_string(line_no) + ": " + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError("samples.jsonl line " + std::to_string(line_no) + ": " + e.what());
    }
  }

  if (static_cast<int>(paths.size()) != d.num_classes) {
    throw ValidationError("manifest declares " + std::to_string(d.num_classes) +
                          " classes but samples cover " + std::to_string(paths.size()));
  }
  std::vector<std::vector<int>> class_paths;
  std::vector<std::vector<int>> class_attrs;
  for (int c = 0; c < d.num_classes; ++c) {
    auto it = paths.find(c);
    if (it == paths.end()) throw ValidationError("class " + std::to_string(c) + " has no samples");
    class_paths.push_back(it->second);
    class_attrs.push_back(attrs.at(c));
  }
  d.hierarchy = Hierarchy(std::move(class_paths));
  if (num_attributes > 0) d.attributes = AttributeTable(num_attributes, std::move(class_attrs));
  d.validate();

  if (meta.contains("counts")) {
    const auto declared = meta["counts"].value("total", std::size_t{0});
    if (declared != d.samples.size()) {
      throw ValidationError("meta.json declares " + std::to_string(declared) + " samples, samples.jsonl has " +
                            std::to_string(d.samples.size()));
    }
  }
  return d;
}

}  // namespace labelembed
