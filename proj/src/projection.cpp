// SPDX-License-Identifier: Apache-2.0

#include "hiertag/projection.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include "hiertag/random.hpp"

namespace hiertag {

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix to_matrix(std::span<const LabeledPoint> points) {
  const std::size_t d = points.empty() ? 0 : points[0].coords.size();
  Matrix m(points.size(), d);
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (std::size_t k = 0; k < d; ++k) m(i, k) = points[i].coords[k];
  }
  return m;
}

LabeledPoints from_matrix(std::span<const LabeledPoint> like, const Matrix& m) {
  LabeledPoints out(like.size());
  for (std::size_t i = 0; i < like.size(); ++i) {
    out[i].label = like[i].label;
    out[i].coords.assign(m.row(i).data(), m.row(i).data() + m.cols());
  }
  return out;
}

Matrix squared_distances(const Matrix& x) {
  const Eigen::VectorXd norms = x.rowwise().squaredNorm();
  Matrix d = (-2.0 * x * x.transpose()).colwise() + norms;
  d.rowwise() += norms.transpose();
  d = d.cwiseMax(0.0);
  d.diagonal().setZero();
  return d;
}

// Student-t kernel with zero diagonal.
Matrix student_kernel(const Matrix& y) {
  Matrix num = (1.0 + squared_distances(y).array()).inverse().matrix();
  num.diagonal().setZero();
  return num;
}

double kl_divergence(const Matrix& p, const Matrix& num) {
  const double z = num.sum();
  double kl = 0.0;
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      if (i == j) continue;
      const double q = std::max(num(i, j) / z, 1e-12);
      kl += p(i, j) * std::log(p(i, j) / q);
    }
  }
  return kl;
}

std::string quote_csv(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        fields.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        fields.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.emplace_back();
    } else {
      fields.back() += c;
    }
  }
  return fields;
}

bool has_prefix(const std::string& label, char kind) {
  return label.size() >= 2 && std::toupper(static_cast<unsigned char>(label[0])) == kind &&
         label[1] == '-';
}

}  // namespace

LabeledPoints points_from_table(const LabelSet& labels, const Tensor& table) {
  if (table.rank() != 2 || table.rows() != labels.size()) {
    throw DimensionError("label table " + shape_str(table.shape()) + " does not match " +
                         std::to_string(labels.size()) + " labels");
  }
  LabeledPoints out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i].label = labels.label(i);
    out[i].coords.assign(table.data() + i * table.cols(), table.data() + (i + 1) * table.cols());
  }
  return out;
}

void validate_points(std::span<const LabeledPoint> points) {
  std::set<std::string> seen;
  for (const LabeledPoint& p : points) {
    if (!seen.insert(p.label).second) throw ContractError("duplicate label '" + p.label + "'");
    if (p.coords.size() != points[0].coords.size()) {
      throw ContractError("label '" + p.label + "' has " + std::to_string(p.coords.size()) +
                          " coordinates, expected " + std::to_string(points[0].coords.size()));
    }
    for (double v : p.coords) {
      if (!std::isfinite(v)) throw ContractError("label '" + p.label + "' is not finite");
    }
  }
}

PcaResult pca(std::span<const LabeledPoint> points) {
  if (points.size() < 2) throw ContractError("pca needs at least 2 points");
  validate_points(points);
  const std::size_t d = points[0].coords.size();
  if (d < 2) throw ContractError("pca needs dimension >= 2");
  Matrix x = to_matrix(points);
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov =
      (x.transpose() * x) / static_cast<double>(points.size() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw ContractError("pca: eigensolver failed");
  // Eigen returns ascending eigenvalues.
  PcaResult r;
  for (Eigen::Index k = static_cast<Eigen::Index>(d) - 1; k >= 0; --k) {
    r.eigenvalues.push_back(std::max(solver.eigenvalues()(k), 0.0));
  }
  Matrix basis(d, 2);
  for (int c = 0; c < 2; ++c) {
    Eigen::VectorXd v = solver.eigenvectors().col(static_cast<Eigen::Index>(d) - 1 - c);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(c) = v;
    r.components.emplace_back(v.data(), v.data() + v.size());
  }
  r.points = from_matrix(points, x * basis);
  return r;
}

LabeledPoints pca_2d(std::span<const LabeledPoint> points) { return pca(points).points; }

double max_perplexity(std::size_t n) {
  return n == 0 ? 0.0 : static_cast<double>(n - 1) / 3.0;
}

std::vector<double> conditional_row(std::span<const double> sq_dist, std::size_t self,
                                    double perplexity, double tolerance, double& achieved) {
  const std::size_t n = sq_dist.size();
  std::vector<double> p(n, 0.0);
  double d_min = INFINITY;
  for (std::size_t j = 0; j < n; ++j) {
    if (j != self) d_min = std::min(d_min, sq_dist[j]);
  }
  // Perplexity decreases monotonically in beta; bisect on log(beta).
  auto evaluate = [&](double beta) {
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      p[j] = j == self ? 0.0 : std::exp(-beta * (sq_dist[j] - d_min));
      z += p[j];
    }
    double h = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      p[j] /= z;
      if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
    }
    return std::exp(h);
  };
  double lo = -50.0, hi = 50.0;  // log(beta) bracket in units of the distance scale
  double scale = 0.0;
  std::size_t others = 0;
  for (std::size_t j = 0; j < n; ++j) {
    if (j != self) {
      scale += sq_dist[j] - d_min;
      ++others;
    }
  }
  scale = others && scale > 0 ? scale / static_cast<double>(others) : 1.0;
  double log_beta = -std::log(scale);
  lo += log_beta;
  hi += log_beta;
  achieved = evaluate(std::exp(log_beta));
  for (int it = 0; it < 200 && std::abs(achieved - perplexity) > tolerance; ++it) {
    if (achieved > perplexity) {
      lo = log_beta;
    } else {
      hi = log_beta;
    }
    log_beta = 0.5 * (lo + hi);
    achieved = evaluate(std::exp(log_beta));
  }
  return p;
}

TsneResult tsne(std::span<const LabeledPoint> points, const TsneOptions& o) {
  const std::size_t n = points.size();
  if (n < 5) throw ContractError("t-SNE needs at least 5 points, got " + std::to_string(n));
  validate_points(points);
  const double bound = max_perplexity(n);
  if (!(o.perplexity >= 1.0 && o.perplexity < bound)) {
    throw ContractError("perplexity " + std::to_string(o.perplexity) + " is infeasible for " +
                        std::to_string(n) + " points; it must lie in [1, (n - 1) / 3 = " +
                        std::to_string(bound) + ")");
  }
  const Matrix x = to_matrix(points);
  const Matrix d = squared_distances(x);

  TsneResult r;
  r.conditional = Tensor({n, n});
  r.row_perplexity.resize(n);
  Matrix p(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = conditional_row(std::span(d.row(i).data(), n), i, o.perplexity,
                                     o.perplexity_tolerance, r.row_perplexity[i]);
    for (std::size_t j = 0; j < n; ++j) {
      p(i, j) = row[j];
      r.conditional.at(i, j) = row[j];
    }
  }
  // eval() breaks the aliasing between p and its transpose.
  p = ((p + p.transpose()) / (2.0 * static_cast<double>(n))).eval();
  p = p.cwiseMax(1e-12);
  p.diagonal().setZero();
  r.joint = Tensor({n, n});
  std::copy(p.data(), p.data() + p.size(), r.joint.data());

  Rng rng(o.seed);
  Matrix y(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 2; ++k) y(i, k) = 1e-4 * standard_normal(rng);
  }
  Matrix update = Matrix::Zero(n, 2);
  Matrix gains = Matrix::Ones(n, 2);
  r.kl.reserve(o.iterations);
  for (std::size_t it = 0; it < o.iterations; ++it) {
    const double exag = it < o.exaggeration_iterations ? o.exaggeration : 1.0;
    const double momentum = it < o.momentum_switch ? o.initial_momentum : o.final_momentum;
    const Matrix num = student_kernel(y);
    const double z = num.sum();
    // dC/dy_i = 4 sum_j (p_ij - q_ij) num_ij (y_i - y_j)
    const Matrix w = ((exag * p).array() - (num / z).array().cwiseMax(1e-12)).matrix()
                         .cwiseProduct(num);
    Matrix grad = 4.0 * (w.rowwise().sum().asDiagonal() * y - w * y);
    for (Eigen::Index i = 0; i < grad.rows(); ++i) {
      for (Eigen::Index k = 0; k < 2; ++k) {
        const bool same = (grad(i, k) > 0) == (update(i, k) > 0);
        gains(i, k) = std::max(same ? gains(i, k) * 0.8 : gains(i, k) + 0.2, 0.01);
      }
    }
    update = momentum * update - o.learning_rate * gains.cwiseProduct(grad);
    y += update;
    y.rowwise() -= y.colwise().mean();
    r.kl.push_back(kl_divergence(p, student_kernel(y)));
  }
  r.points = from_matrix(points, y);
  return r;
}

LabeledPoints tsne_2d(std::span<const LabeledPoint> points, double perplexity,
                      std::size_t iterations, std::uint64_t seed) {
  TsneOptions o;
  o.perplexity = perplexity;
  o.iterations = iterations;
  o.seed = seed;
  return tsne(points, o).points;
}

std::optional<double> begin_inside_separation(std::span<const LabeledPoint> points) {
  std::vector<const LabeledPoint*> groups[2];
  for (const LabeledPoint& p : points) {
    if (has_prefix(p.label, 'B')) groups[0].push_back(&p);
    if (has_prefix(p.label, 'I')) groups[1].push_back(&p);
  }
  if (groups[0].size() < 2 || groups[1].size() < 2) return std::nullopt;
  auto dist = [](const LabeledPoint& a, const LabeledPoint& b) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.coords.size(); ++k) {
      s += (a.coords[k] - b.coords[k]) * (a.coords[k] - b.coords[k]);
    }
    return std::sqrt(s);
  };
  double total = 0.0;
  std::size_t count = 0;
  for (int g = 0; g < 2; ++g) {
    for (const LabeledPoint* p : groups[g]) {
      double own = 0.0, other = 0.0;
      for (const LabeledPoint* q : groups[g]) own += p == q ? 0.0 : dist(*p, *q);
      for (const LabeledPoint* q : groups[1 - g]) other += dist(*p, *q);
      own /= static_cast<double>(groups[g].size() - 1);
      other /= static_cast<double>(groups[1 - g].size());
      const double denom = std::max(own, other);
      total += denom > 0 ? (other - own) / denom : 0.0;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

void export_projection(std::ostream& out, std::span<const LabeledPoint> points) {
  out << "label,x,y\n";
  char buf[64];
  for (const LabeledPoint& p : points) {
    if (p.coords.size() != 2) {
      throw ContractError("export_projection: '" + p.label + "' is not a 2D point");
    }
    out << quote_csv(p.label);
    for (double v : p.coords) {
      std::snprintf(buf, sizeof(buf), ",%.17g", v);
      out << buf;
    }
    out << '\n';
  }
}

void export_projection(const std::filesystem::path& path, std::span<const LabeledPoint> points) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write projection to " + path.string());
  export_projection(out, points);
  out.flush();
  if (!out) throw std::runtime_error("failed writing projection to " + path.string());
}

LabeledPoints read_projection(std::istream& in) {
  LabeledPoints out;
  std::string line;
  if (!std::getline(in, line) || line != "label,x,y") {
    throw ParseError(1, "projection header must be 'label,x,y'");
  }
  std::size_t no = 1;
  while (std::getline(in, line)) {
    ++no;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 3) throw ParseError(no, "expected 3 fields, got " + std::to_string(f.size()));
    try {
      out.push_back({f[0], {std::stod(f[1]), std::stod(f[2])}});
    } catch (const std::exception&) {
      throw ParseError(no, "bad coordinate");
    }
  }
  return out;
}

}  // namespace hiertag
