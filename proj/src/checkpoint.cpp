#include "labelembed/checkpoint.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "labelembed/errors.hpp"

namespace labelembed {

namespace {

constexpr const char* kMagic = "labelembed-checkpoint";

// Line-oriented reader that reports the line number on failure.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  std::vector<std::string> fields() {
    std::string line;
    if (!std::getline(in_, line)) fail("unexpected end of file");
    ++line_no_;
    std::istringstream ss(line);
    std::vector<std::string> out;
    for (std::string f; ss >> f;) out.push_back(f);
    return out;
  }

  int line() const { return line_no_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw ValidationError("checkpoint line " + std::to_string(line_no_) + ": " + what);
  }

  long long integer(const std::string& s) const {
    long long v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size()) fail("expected an integer, got '" + s + "'");
    return v;
  }

  double real(const std::string& s) const {
    double v = 0;
    auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size() || !std::isfinite(v)) {
      fail("expected a finite real, got '" + s + "'");
    }
    return v;
  }

  // Reads "key v1 v2 ..." and returns the values.
  std::vector<std::string> keyed(const std::string& key) {
    auto f = fields();
    if (f.empty() || f[0] != key) fail("expected '" + key + "'");
    f.erase(f.begin());
    return f;
  }

  int positive(const std::string& s) const {
    const long long v = integer(s);
    if (v < 1 || v > std::numeric_limits<int>::max()) fail("dimension " + s + " is not a positive int");
    return static_cast<int>(v);
  }

  int single_dim(const std::string& key) {
    const auto v = keyed(key);
    if (v.size() != 1) fail("'" + key + "' takes one value");
    return positive(v[0]);
  }

  // True if only blank lines remain.
  bool at_end() {
    for (std::string line; std::getline(in_, line);) {
      ++line_no_;
      if (line.find_first_not_of(" \t\r") != std::string::npos) return false;
    }
    return true;
  }

 private:
  std::istream& in_;
  int line_no_ = 0;
};

}  // namespace

void write_checkpoint(std::ostream& out, const Parameters<double>& params) {
  const NetConfig& c = params.config;
  out << kMagic << ' ' << kCheckpointVersion << '\n';
  out << "input_dim " << c.input_dim << '\n';
  out << "hidden_dims " << c.hidden_dims.size();
  for (int h : c.hidden_dims) out << ' ' << h;
  out << '\n';
  out << "embed_dim " << c.embed_dim << '\n';
  out << "num_classes " << c.num_classes << '\n';

  const auto names = tensor_names(c);
  std::size_t index = 0;
  char buf[32];
  for_each_tensor(params, [&](const auto& t) {
    out << "tensor " << names[index++] << ' ' << t.rows() << ' ' << t.cols() << '\n';
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      for (Eigen::Index j = 0; j < t.cols(); ++j) {
        std::snprintf(buf, sizeof buf, "%.17g", static_cast<double>(t(i, j)));
        if (j) out << ' ';
        out << buf;
      }
      out << '\n';
    }
  });
  out << "end\n";
}

void save_checkpoint(const std::filesystem::path& file, const Parameters<double>& params) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + file.string() + " for writing");
  write_checkpoint(out, params);
  if (!out) throw std::runtime_error("failed writing " + file.string());
}

Parameters<double> read_checkpoint(std::istream& in) {
  Reader r(in);
  const auto head = r.fields();
  if (head.size() != 2 || head[0] != kMagic) r.fail("not a labelembed checkpoint");
  if (r.integer(head[1]) != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + head[1]);
  }

  NetConfig c;
  c.input_dim = r.single_dim("input_dim");
  const auto hidden = r.keyed("hidden_dims");
  if (hidden.empty() || r.integer(hidden[0]) != static_cast<long long>(hidden.size()) - 1) {
    r.fail("hidden_dims count does not match the listed widths");
  }
  for (std::size_t i = 1; i < hidden.size(); ++i) c.hidden_dims.push_back(r.positive(hidden[i]));
  c.embed_dim = r.single_dim("embed_dim");
  c.num_classes = r.single_dim("num_classes");
  try {
    c.validate();
  } catch (const ValidationError& e) {
    r.fail(e.what());
  }

  Parameters<double> params = Parameters<double>::zeros(c);
  const auto names = tensor_names(c);
  std::size_t index = 0;
  for_each_tensor(params, [&](auto& t) {
    const auto f = r.keyed("tensor");
    if (f.size() != 3 || f[0] != names[index]) r.fail("expected tensor " + names[index]);
    if (r.integer(f[1]) != t.rows() || r.integer(f[2]) != t.cols()) {
      r.fail("tensor " + names[index] + " has the wrong shape");
    }
    for (Eigen::Index i = 0; i < t.rows(); ++i) {
      const auto row = r.fields();
      if (static_cast<Eigen::Index>(row.size()) != t.cols()) r.fail("row has the wrong length");
      for (Eigen::Index j = 0; j < t.cols(); ++j) t(i, j) = r.real(row[j]);
    }
    ++index;
  });
  const auto tail = r.fields();
  if (tail.size() != 1 || tail[0] != "end") r.fail("expected 'end'");
  if (!r.at_end()) r.fail("unexpected content after 'end'");
  return params;
}

Parameters<double> load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InputError("cannot open checkpoint " + file.string());
  return read_checkpoint(in);
}

}  // namespace labelembed
