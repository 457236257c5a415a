#include "pcd/measures.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "pcd/format.hpp"

namespace pcd {

bool EmpiricalDistribution::uniform() const {
  const double w = 1.0 / static_cast<double>(size());
  for (double v : weights_) {
    if (v != w) return false;
  }
  return true;
}

EmpiricalDistribution make_empirical(Matrix points, std::optional<Vector> weights) {
  if (points.rows == 0) throw Error("make_empirical: empty point set");
  if (points.cols == 0) throw Error("make_empirical: points must have dimension >= 1");
  const std::size_t n = points.rows;
  Vector w;
  if (!weights) {
    w.assign(n, 1.0 / static_cast<double>(n));
  } else {
    if (weights->size() != n) throw Error("make_empirical: weight count differs from point count");
    double total = 0.0;
    for (double v : *weights) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw Error("make_empirical: negative or non-finite weight");
      total += v;
    }
    if (total <= 0.0) throw Error("make_empirical: all weights are zero");
    w = std::move(*weights);
    for (double& v : w) v /= total;
  }
  EmpiricalDistribution d;
  d.points_ = std::move(points);
  d.weights_ = std::move(w);
  return d;
}

EmpiricalDistribution make_empirical(const std::vector<Vector>& points, std::optional<Vector> weights) {
  if (points.empty()) throw Error("make_empirical: empty point set");
  for (const auto& p : points) {
    if (p.size() != points.front().size()) throw Error("make_empirical: mixed point dimensions");
  }
  return make_empirical(Matrix::from_rows(points), std::move(weights));
}

EmpiricalDistribution dirac(std::span<const double> x) {
  Matrix m(1, x.size());
  std::copy(x.begin(), x.end(), m.data.begin());
  return make_empirical(std::move(m));
}

double p_centrality(const EmpiricalDistribution& dist, std::span<const double> x, double p) {
  if (x.size() != dist.dim()) throw Error("p_centrality: base point dimension mismatch");
  if (!(p >= 1.0)) throw Error("p_centrality: p must be >= 1");
  double acc = 0.0;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    acc += dist.weight(i) * std::pow(distance(x, dist.point(i)), p);
  }
  return std::pow(acc, 1.0 / p);
}

EmpiricalDistribution pushforward(const EmpiricalDistribution& dist, const PointMap& f) {
  std::vector<Vector> images;
  images.reserve(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) {
    images.push_back(f(dist.point(i)));
    if (images.back().size() != images.front().size()) {
      throw Error("pushforward: map output dimension varies across points");
    }
  }
  return make_empirical(images, dist.weights());
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_cell(const std::string& raw, std::size_t line_no) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  const auto res = std::from_chars(first, last, v);
  if (s.empty() || res.ec != std::errc() || res.ptr != last) {
    throw Error("samples csv: non-numeric cell '" + s + "' on line " + std::to_string(line_no));
  }
  return v;
}

}  // namespace

EmpiricalDistribution parse_samples_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t m = 0;
  bool weighted = false;
  bool have_header = false;
  std::vector<Vector> rows;
  Vector weights;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (!have_header) {
      have_header = true;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        const std::string name = trim(cells[i]);
        if (i + 1 == cells.size() && name == "weight" && i > 0) {
          weighted = true;
        } else if (name != "x" + std::to_string(i + 1)) {
          throw Error("samples csv: bad header cell '" + name + "'");
        }
      }
      m = weighted ? cells.size() - 1 : cells.size();
      continue;
    }
    if (cells.size() != m + (weighted ? 1 : 0)) {
      throw Error("samples csv: wrong column count on line " + std::to_string(line_no));
    }
    Vector row(m);
    for (std::size_t i = 0; i < m; ++i) row[i] = parse_cell(cells[i], line_no);
    rows.push_back(std::move(row));
    if (weighted) weights.push_back(parse_cell(cells[m], line_no));
  }
  if (!have_header) throw Error("samples csv: missing header");
  if (rows.empty()) throw Error("samples csv: no samples");
  return weighted ? make_empirical(rows, weights) : make_empirical(rows);
}

EmpiricalDistribution read_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_samples_csv(buf.str());
}

void write_samples_csv(const std::string& path, const EmpiricalDistribution& dist, bool with_weights) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (std::size_t j = 0; j < dist.dim(); ++j) out << (j ? "," : "") << "x" << j + 1;
  if (with_weights) out << ",weight";
  out << '\n';
  for (std::size_t i = 0; i < dist.size(); ++i) {
    for (std::size_t j = 0; j < dist.dim(); ++j) out << (j ? "," : "") << format_exact(dist.point(i)[j]);
    if (with_weights) out << ',' << format_exact(dist.weight(i));
    out << '\n';
  }
}

}  // namespace pcd
