#include "cdgpa/datagen.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "cdgpa/errors.hpp"
#include "cdgpa/random.hpp"

namespace cdgpa {

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ParameterError("synthetic data needs at least 2 classes");
  if (input_dim < 2) throw ParameterError("synthetic data needs input_dim >= 2");
  if (n_source < num_classes || n_target < num_classes) throw ParameterError("each domain needs n >= K samples");
  if (!(noise > 0.0)) throw ParameterError("noise sigma must be positive");
  if (!(separation > 0.0)) throw ParameterError("class separation must be positive");
  if (!translation.empty() && translation.size() != input_dim) {
    throw ParameterError("translation has " + std::to_string(translation.size()) + " entries, input_dim is " +
                         std::to_string(input_dim));
  }
}

namespace {

using Point = std::vector<double>;

struct Layout {
  // Draws one clean source point of class k.
  virtual Point draw(std::size_t k, Rng& rng) const = 0;
  // Pivot of the rotation and scaling.
  virtual Point pivot() const = 0;
  virtual ~Layout() = default;
};

struct GaussianLayout final : Layout {
  const SyntheticSpec& spec;
  explicit GaussianLayout(const SyntheticSpec& s) : spec(s) {}
  Point draw(std::size_t k, Rng& rng) const override {
    Point p(spec.input_dim, 0.0);
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.num_classes);
    p[0] = spec.separation * std::cos(angle);
    p[1] = spec.separation * std::sin(angle);
    std::normal_distribution<double> z(0.0, spec.noise);
    for (double& v : p) v += z(rng);
    return p;
  }
  Point pivot() const override { return Point(spec.input_dim, 0.0); }
};

struct MoonsLayout final : Layout {
  const SyntheticSpec& spec;
  explicit MoonsLayout(const SyntheticSpec& s) : spec(s) {}
  Point draw(std::size_t k, Rng& rng) const override {
    std::uniform_real_distribution<double> angle(0.0, std::numbers::pi);
    const double t = angle(rng);
    Point p(spec.input_dim, 0.0);
    if (k == 0) {
      p[0] = std::cos(t);
      p[1] = std::sin(t);
    } else {
      p[0] = 1.0 - std::cos(t);
      p[1] = 0.5 - std::sin(t);
    }
    p[0] *= spec.separation;
    p[1] *= spec.separation;
    std::normal_distribution<double> z(0.0, spec.noise);
    for (double& v : p) v += z(rng);
    return p;
  }
  Point pivot() const override {
    Point c(spec.input_dim, 0.0);
    c[0] = 0.5 * spec.separation;
    c[1] = 0.25 * spec.separation;
    return c;
  }
};

Point marginal_transform(const SyntheticSpec& spec, const Point& pivot, Point p) {
  const double c = std::cos(spec.rotation), s = std::sin(spec.rotation);
  for (std::size_t j = 0; j < p.size(); ++j) p[j] -= pivot[j];
  const double x = p[0], y = p[1];
  p[0] = c * x - s * y;
  p[1] = s * x + c * y;
  for (std::size_t j = 0; j < p.size(); ++j) {
    p[j] = spec.scale * p[j] + pivot[j];
    if (!spec.translation.empty()) p[j] += spec.translation[j];
  }
  return p;
}

SyntheticDomains generate(const SyntheticSpec& spec, const Layout& layout) {
  spec.validate();
  const Tensor offsets = conditional_offsets(spec);
  const Point pivot = layout.pivot();
  const std::size_t d = spec.input_dim, K = spec.num_classes;

  SyntheticDomains out;
  {
    Rng rng(derive_seed(spec.seed, "source-domain"));
    std::vector<double> x;
    std::vector<std::size_t> y;
    x.reserve(spec.n_source * d);
    for (std::size_t i = 0; i < spec.n_source; ++i) {
      const std::size_t k = i % K;
      const Point p = layout.draw(k, rng);
      x.insert(x.end(), p.begin(), p.end());
      y.push_back(k);
    }
    out.source = {Tensor(spec.n_source, d, std::move(x)), std::move(y), Domain::kSource};
  }
  {
    Rng rng(derive_seed(spec.seed, "target-domain"));
    std::vector<double> x;
    x.reserve(spec.n_target * d);
    for (std::size_t i = 0; i < spec.n_target; ++i) {
      const std::size_t k = i % K;
      Point p = marginal_transform(spec, pivot, layout.draw(k, rng));
      for (std::size_t j = 0; j < d; ++j) p[j] += offsets(k, j);
      x.insert(x.end(), p.begin(), p.end());
      out.hidden_target_labels.labels.push_back(k);
    }
    out.target = {Tensor(spec.n_target, d, std::move(x)), std::nullopt, Domain::kTarget};
  }
  return out;
}

}  // namespace

Tensor conditional_offsets(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, "conditional-shift"));
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  const double phi = phase(rng);
  std::vector<double> v(spec.num_classes * spec.input_dim, 0.0);
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const double a = phi + 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(spec.num_classes);
    v[k * spec.input_dim] = spec.conditional_shift * std::cos(a);
    v[k * spec.input_dim + 1] = spec.conditional_shift * std::sin(a);
  }
  return Tensor(spec.num_classes, spec.input_dim, std::move(v));
}

SyntheticDomains gen_gaussian_domains(const SyntheticSpec& spec) { return generate(spec, GaussianLayout(spec)); }

SyntheticDomains gen_two_moons_shift(const SyntheticSpec& spec) {
  if (spec.num_classes != 2) throw ParameterError("two-moons data has exactly 2 classes");
  return generate(spec, MoonsLayout(spec));
}

DomainBatch labeled_target(const DomainBatch& target, const TargetLabels& labels) {
  if (labels.labels.size() != target.size()) throw DimensionError("hidden label count does not match target batch");
  return {target.x, labels.labels, Domain::kTarget};
}

// ---------------------------------------------------------------- CSV

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw NumericError("cannot format value");
  return std::string(buf, end);
}

std::string format_feature_csv(const DomainBatch& batch) {
  std::string out = "dim=" + std::to_string(batch.dim()) +
                    ",domain=" + (batch.domain == Domain::kSource ? "s" : "t") +
                    ",labeled=" + (batch.labeled() ? "1" : "0") + "\n";
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t j = 0; j < batch.dim(); ++j) {
      if (j) out += ',';
      out += format_double(batch.x(i, j));
    }
    if (batch.labeled()) out += "," + std::to_string((*batch.labels)[i]);
    out += '\n';
  }
  return out;
}

namespace {

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(sep, start);
    parts.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && first != last;
}

}  // namespace

DomainBatch parse_feature_csv(const std::string& text, std::optional<std::size_t> num_classes) {
  std::vector<std::string_view> lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ParseError(1, "missing header");

  std::size_t dim = 0;
  bool have_dim = false, have_domain = false, have_labeled = false, labeled = false;
  Domain domain = Domain::kSource;
  for (std::string_view field : split(lines[0], ',')) {
    const std::size_t eq = field.find('=');
    if (eq == std::string_view::npos) throw ParseError(1, "header field without '=': " + std::string(field));
    const std::string_view key = field.substr(0, eq), value = field.substr(eq + 1);
    if (key == "dim") {
      if (!parse_number(value, dim) || dim == 0) throw ParseError(1, "bad dim value: " + std::string(value));
      have_dim = true;
    } else if (key == "domain") {
      if (value != "s" && value != "t") throw ParseError(1, "domain must be s or t");
      domain = value == "s" ? Domain::kSource : Domain::kTarget;
      have_domain = true;
    } else if (key == "labeled") {
      if (value != "0" && value != "1") throw ParseError(1, "labeled must be 0 or 1");
      labeled = value == "1";
      have_labeled = true;
    } else {
      throw ParseError(1, "unknown header field: " + std::string(key));
    }
  }
  if (!have_dim || !have_domain || !have_labeled) throw ParseError(1, "header needs dim, domain and labeled");
  if (lines.size() == 1) throw FormatError("feature file has a header but no rows (empty batch)");

  const std::size_t width = dim + (labeled ? 1 : 0);
  std::vector<double> x;
  std::vector<std::size_t> labels;
  x.reserve((lines.size() - 1) * dim);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::size_t line_no = li + 1;
    std::string_view line = lines[li];
    if (!line.empty() && line.back() == '\r') throw ParseError(line_no, "CR line ending; files must use LF");
    const auto cells = split(line, ',');
    if (cells.size() != width) {
      throw FormatError("line " + std::to_string(line_no) + ": expected " + std::to_string(width) + " fields, found " +
                        std::to_string(cells.size()));
    }
    for (std::size_t j = 0; j < dim; ++j) {
      double v = 0.0;
      if (!parse_number(cells[j], v) || !std::isfinite(v)) {
        throw ParseError(line_no, "malformed value '" + std::string(cells[j]) + "'");
      }
      x.push_back(v);
    }
    if (labeled) {
      std::size_t y = 0;
      if (!parse_number(cells[dim], y)) throw ParseError(line_no, "malformed label '" + std::string(cells[dim]) + "'");
      if (num_classes && y >= *num_classes) {
        throw IndexError("line " + std::to_string(line_no) + ": label " + std::to_string(y) + " outside [0, " +
                         std::to_string(*num_classes) + ")");
      }
      labels.push_back(y);
    }
  }
  DomainBatch batch{Tensor(lines.size() - 1, dim, std::move(x)), std::nullopt, domain};
  if (labeled) batch.labels = std::move(labels);
  return batch;
}

void save_feature_file(const std::filesystem::path& path, const DomainBatch& batch) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_feature_csv(batch);
}

DomainBatch load_feature_file(const std::filesystem::path& path, std::optional<std::size_t> num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_feature_csv(ss.str(), num_classes);
}

}  // namespace cdgpa
