#include "cascade_xfer/cascade_mdp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cxfer {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

void check_rows(std::span<const double> table, std::size_t width, const std::string& name) {
  require(width > 0 && table.size() % width == 0, name + ": size is not a multiple of row width");
  for (std::size_t r = 0; r < table.size() / width; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < width; ++c) {
      const double p = table[r * width + c];
      require(std::isfinite(p) && p >= 0.0, name + ": negative or non-finite entry in row " +
                                                std::to_string(r));
      sum += p;
    }
    require(std::abs(sum - 1.0) <= kRowSumTol,
            name + ": row " + std::to_string(r) + " sums to " + std::to_string(sum));
  }
}

}  // namespace

void TabularCascadeMdp::validate() const {
  require(s_count > 0 && x_count > 0 && a_count > 0 && u_count > 0,
          "mdp: all cardinalities must be positive");
  require(kernel_s.size() == s_count * a_count * x_count * s_count, "mdp: kernel_s has wrong size");
  require(kernel_x.size() == x_count * u_count * x_count, "mdp: kernel_x has wrong size");
  require(reward.size() == s_count * a_count * x_count, "mdp: reward has wrong size");
  require(x_values.size() == x_count, "mdp: x_values must have x_count entries");
  require(mu0.size() == s_count && mu0_x.size() == x_count, "mdp: initial distributions have wrong size");
  const auto dim = inner_dim();
  require(dim > 0, "mdp: inner embeddings must be non-empty");
  for (const auto& v : x_values) {
    require(static_cast<std::size_t>(v.size()) == dim, "mdp: inconsistent embedding dimension");
    require(v.allFinite(), "mdp: non-finite embedding");
  }
  require(gamma > 0.0 && gamma < 1.0, "mdp: gamma must lie in (0, 1)");
  require(reward_bound > 0.0, "mdp: reward bound must be positive");
  for (double r : reward) {
    require(std::isfinite(r) && std::abs(r) <= reward_bound, "mdp: reward exceeds declared bound");
  }
  check_rows(kernel_s, s_count, "kernel_s");
  check_rows(kernel_x, x_count, "kernel_x");
  check_rows(mu0, s_count, "mu0");
  check_rows(mu0_x, x_count, "mu0_x");
}

double Spectrum::rho() const { return std::sqrt(lambda_max / lambda_min); }

Spectrum spd_spectrum(const Eigen::MatrixXd& p) {
  require(p.rows() == p.cols() && p.rows() > 0, "P must be square and non-empty");
  require((p - p.transpose()).cwiseAbs().maxCoeff() <= kSymmetryTol, "P must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(p, Eigen::EigenvaluesOnly);
  const auto& ev = eig.eigenvalues();
  require(ev.minCoeff() > 0.0, "P must be positive definite");
  return {ev.minCoeff(), ev.maxCoeff()};
}

double p_norm(const Eigen::MatrixXd& p, const Eigen::VectorXd& v) {
  return std::sqrt(std::max(0.0, v.dot(p * v)));
}

void TrackingController::validate() const {
  require(x_count > 0 && u_count > 0, "controller: cardinalities must be positive");
  require(table.size() == x_count * x_count * u_count, "controller: table has wrong size");
  check_rows(table, u_count, "controller");
  const Spectrum spec = spd_spectrum(p_matrix);
  require(std::abs(rho - spec.rho()) <= kSymmetryTol, "controller: rho != sqrt(lambda_max/lambda_min)");
  require(alpha > 0.0 && alpha < 1.0, "controller: alpha must lie in (0, 1)");
  require(beta >= 0.0, "controller: beta must be nonnegative");
}

std::vector<double> ClosedLoopMdp::inner_step(std::size_t x, std::size_t x_star) const {
  std::vector<double> next(base.x_count, 0.0);
  const auto k = controller.row(x_star, x);
  for (std::size_t u = 0; u < base.u_count; ++u) {
    if (k[u] == 0.0) continue;
    const auto row = base.inner_row(x, u);
    for (std::size_t xn = 0; xn < base.x_count; ++xn) next[xn] += k[u] * row[xn];
  }
  return next;
}

ClosedLoopMdp build_closed_loop(const TabularCascadeMdp& mdp, const TrackingController& k) {
  mdp.validate();
  require(k.x_count == mdp.x_count && k.u_count == mdp.u_count,
          "build_closed_loop: controller dimensions do not match the mdp");
  require(k.table.size() == k.x_count * k.x_count * k.u_count,
          "build_closed_loop: controller table has wrong size");
  check_rows(k.table, k.u_count, "controller");

  ClosedLoopMdp cl{mdp, k, {}};
  const std::size_t S = mdp.s_count, A = mdp.a_count, X = mdp.x_count;
  cl.kernel_k.assign(S * A * X * X * S * X, 0.0);
  for (std::size_t x = 0; x < X; ++x) {
    for (std::size_t xs = 0; xs < X; ++xs) {
      const auto inner = cl.inner_step(x, xs);
      for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t a = 0; a < A; ++a) {
          const auto outer = mdp.outer_row(s, a, x);
          double* out = cl.kernel_k.data() + (((s * A + a) * X + x) * X + xs) * S * X;
          for (std::size_t sn = 0; sn < S; ++sn) {
            for (std::size_t xn = 0; xn < X; ++xn) out[sn * X + xn] = outer[sn] * inner[xn];
          }
        }
      }
    }
  }
  return cl;
}

FullOrderKernel compose_full_kernel(const TabularCascadeMdp& mdp) {
  FullOrderKernel f{mdp.s_count, mdp.x_count, mdp.a_count, mdp.u_count, {}, {}};
  const std::size_t slots = f.s_count * f.a_count * f.x_count * f.u_count;
  f.next_s.resize(slots * f.s_count);
  f.next_x.resize(slots * f.x_count);
  for (std::size_t s = 0; s < f.s_count; ++s)
    for (std::size_t a = 0; a < f.a_count; ++a)
      for (std::size_t x = 0; x < f.x_count; ++x)
        for (std::size_t u = 0; u < f.u_count; ++u) {
          const std::size_t i = f.slot(s, a, x, u);
          std::ranges::copy(mdp.outer_row(s, a, x), f.next_s.begin() + i * f.s_count);
          std::ranges::copy(mdp.inner_row(x, u), f.next_x.begin() + i * f.x_count);
        }
  return f;
}

ValidationReport validate_assumption2(const FullOrderKernel& full, double tol) {
  ValidationReport report;
  const std::size_t X = full.x_count;
  for (std::size_t x = 0; x < X; ++x) {
    for (std::size_t u = 0; u < full.u_count; ++u) {
      const double* ref = full.next_x.data() + full.slot(0, 0, x, u) * X;
      for (std::size_t s = 0; s < full.s_count; ++s) {
        for (std::size_t a = 0; a < full.a_count; ++a) {
          const double* row = full.next_x.data() + full.slot(s, a, x, u) * X;
          double dev = 0.0;
          for (std::size_t xn = 0; xn < X; ++xn) dev = std::max(dev, std::abs(row[xn] - ref[xn]));
          report.max_deviation = std::max(report.max_deviation, dev);
          if (dev > tol) report.violations.push_back({s, a, x, u});
        }
      }
    }
  }
  report.pass = report.violations.empty();
  return report;
}

ValidationReport validate_assumption3(const FullOrderKernel& full, const TabularCascadeMdp& reduced,
                                      double tol) {
  require(full.s_count == reduced.s_count && full.a_count == reduced.a_count &&
              full.x_count == reduced.x_count,
          "validate_assumption3: dimension mismatch");
  ValidationReport report;
  const std::size_t S = full.s_count;
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < full.a_count; ++a)
      for (std::size_t x = 0; x < full.x_count; ++x) {
        const auto ref = reduced.outer_row(s, a, x);
        for (std::size_t u = 0; u < full.u_count; ++u) {
          const double* row = full.next_s.data() + full.slot(s, a, x, u) * S;
          double dev = 0.0;
          for (std::size_t sn = 0; sn < S; ++sn) dev = std::max(dev, std::abs(row[sn] - ref[sn]));
          report.max_deviation = std::max(report.max_deviation, dev);
          if (dev > tol) report.violations.push_back({s, a, x, u});
        }
      }
  report.pass = report.violations.empty();
  return report;
}

double tv_distance(std::span<const double> p, std::span<const double> q) {
  double sum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) sum += std::abs(p[i] - q[i]);
  return 0.5 * sum;
}

double estimate_lipschitz(const TabularCascadeMdp& mdp) {
  require(mdp.x_count >= 2, "estimate_lipschitz: needs at least two inner states");
  double best = 0.0;
  for (std::size_t x = 0; x < mdp.x_count; ++x) {
    for (std::size_t xp = x + 1; xp < mdp.x_count; ++xp) {
      const double dist = (mdp.x_values[x] - mdp.x_values[xp]).norm();
      for (std::size_t s = 0; s < mdp.s_count; ++s) {
        for (std::size_t a = 0; a < mdp.a_count; ++a) {
          const double l1 = 2.0 * tv_distance(mdp.outer_row(s, a, x), mdp.outer_row(s, a, xp));
          if (l1 == 0.0) continue;
          if (dist == 0.0) return std::numeric_limits<double>::infinity();
          best = std::max(best, l1 / dist);
        }
      }
    }
  }
  return best;
}

double contraction_ratio(const TabularCascadeMdp& mdp, const TrackingController& k,
                         std::span<const std::size_t> commands) {
  std::vector<std::size_t> all;
  if (commands.empty()) {
    all.resize(mdp.x_count);
    std::iota(all.begin(), all.end(), 0);
    commands = all;
  }
  const ClosedLoopMdp probe{mdp, k, {}};
  double ratio = 0.0;
  for (std::size_t xs : commands) {
    for (std::size_t x = 0; x < mdp.x_count; ++x) {
      const double before = p_norm(k.p_matrix, mdp.x_values[x] - mdp.x_values[xs]);
      const auto next = probe.inner_step(x, xs);
      double after = 0.0;
      for (std::size_t xn = 0; xn < mdp.x_count; ++xn) {
        if (next[xn] > 0.0) after += next[xn] * p_norm(k.p_matrix, mdp.x_values[xn] - mdp.x_values[xs]);
      }
      if (before == 0.0) {
        if (after > 0.0) return std::numeric_limits<double>::infinity();
        continue;
      }
      ratio = std::max(ratio, after / before);
    }
  }
  return ratio;
}

std::vector<double> normalized(std::vector<double> w) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  require(total > 0.0, "normalized: weights must have positive mass");
  for (double& v : w) v /= total;
  return w;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

std::vector<double> doubles(const nlohmann::json& j, const char* key) {
  return j.at(key).get<std::vector<double>>();
}

}  // namespace

nlohmann::json to_json(const TabularCascadeMdp& mdp) {
  nlohmann::json xv = nlohmann::json::array();
  for (const auto& v : mdp.x_values) xv.push_back(std::vector<double>(v.data(), v.data() + v.size()));
  return {{"schema", "cascade-mdp-v1"},
          {"s_count", mdp.s_count},
          {"x_count", mdp.x_count},
          {"a_count", mdp.a_count},
          {"u_count", mdp.u_count},
          {"gamma", mdp.gamma},
          {"B", mdp.reward_bound},
          {"x_values", xv},
          {"kernel_s", mdp.kernel_s},
          {"kernel_x", mdp.kernel_x},
          {"reward", mdp.reward},
          {"mu0", mdp.mu0},
          {"mu0_x", mdp.mu0_x}};
}

TabularCascadeMdp mdp_from_json(const nlohmann::json& j) {
  require(j.value("schema", "") == "cascade-mdp-v1", "mdp json: expected schema cascade-mdp-v1");
  TabularCascadeMdp mdp;
  mdp.s_count = j.at("s_count").get<std::size_t>();
  mdp.x_count = j.at("x_count").get<std::size_t>();
  mdp.a_count = j.at("a_count").get<std::size_t>();
  mdp.u_count = j.at("u_count").get<std::size_t>();
  mdp.gamma = j.at("gamma").get<double>();
  mdp.reward_bound = j.at("B").get<double>();
  for (const auto& v : j.at("x_values")) {
    const auto vals = v.get<std::vector<double>>();
    mdp.x_values.emplace_back(Eigen::Map<const Eigen::VectorXd>(vals.data(), vals.size()));
  }
  mdp.kernel_s = doubles(j, "kernel_s");
  mdp.kernel_x = doubles(j, "kernel_x");
  mdp.reward = doubles(j, "reward");
  mdp.mu0 = doubles(j, "mu0");
  mdp.mu0_x = doubles(j, "mu0_x");
  mdp.validate();
  return mdp;
}

nlohmann::json to_json(const TrackingController& k) {
  nlohmann::json p = nlohmann::json::array();
  for (Eigen::Index r = 0; r < k.p_matrix.rows(); ++r) {
    std::vector<double> row(k.p_matrix.cols());
    for (Eigen::Index c = 0; c < k.p_matrix.cols(); ++c) row[c] = k.p_matrix(r, c);
    p.push_back(row);
  }
  return {{"x_count", k.x_count}, {"u_count", k.u_count}, {"table", k.table},
          {"P", p},               {"alpha", k.alpha},     {"beta", k.beta},
          {"rho", k.rho}};
}

TrackingController controller_from_json(const nlohmann::json& j) {
  TrackingController k;
  k.x_count = j.at("x_count").get<std::size_t>();
  k.u_count = j.at("u_count").get<std::size_t>();
  k.table = doubles(j, "table");
  const auto rows = j.at("P").get<std::vector<std::vector<double>>>();
  k.p_matrix.resize(rows.size(), rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r].size() == rows.size(), "controller json: P must be square");
    for (std::size_t c = 0; c < rows.size(); ++c) k.p_matrix(r, c) = rows[r][c];
  }
  k.alpha = j.at("alpha").get<double>();
  k.beta = j.at("beta").get<double>();
  k.rho = j.at("rho").get<double>();
  k.validate();
  return k;
}

// ---------------------------------------------------------------------------
// Random instances

RandomInstance generate_instance(const GeneratorParams& params, Rng& rng) {
  TabularCascadeMdp m;
  m.s_count = 2 + rng.index(params.max_s - 1);
  m.x_count = 2 + rng.index(params.max_x - 1);
  m.a_count = 1 + rng.index(params.max_a);
  m.u_count = m.x_count;
  m.gamma = rng.uniform(params.gamma_lo, params.gamma_hi);
  m.reward_bound = params.reward_bound;

  // Distinct points on a uniform grid in [0, 1]^d.
  const std::size_t dim = 1 + rng.index(params.max_dim);
  const std::size_t side = dim == 1 ? m.x_count : 3;
  std::vector<Eigen::VectorXd> grid;
  if (dim == 1) {
    for (std::size_t i = 0; i < side; ++i) {
      Eigen::VectorXd v(1);
      v << static_cast<double>(i) / static_cast<double>(side - 1);
      grid.push_back(v);
    }
  } else {
    for (std::size_t i = 0; i < side; ++i)
      for (std::size_t j = 0; j < side; ++j) {
        Eigen::VectorXd v(2);
        v << 0.5 * static_cast<double>(i), 0.5 * static_cast<double>(j);
        grid.push_back(v);
      }
  }
  for (std::size_t i = grid.size(); i > 1; --i) std::swap(grid[i - 1], grid[rng.index(i)]);
  m.x_values.assign(grid.begin(), grid.begin() + static_cast<std::ptrdiff_t>(m.x_count));

  // SPD weight matrix scaled so lambda_max = 1.
  Eigen::MatrixXd g(dim, dim);
  for (Eigen::Index r = 0; r < g.rows(); ++r)
    for (Eigen::Index c = 0; c < g.cols(); ++c) g(r, c) = rng.uniform(-1.0, 1.0);
  Eigen::MatrixXd p = g * g.transpose() + 0.2 * Eigen::MatrixXd::Identity(dim, dim);
  p = 0.5 * (p + p.transpose());
  p /= spd_spectrum(p).lambda_max;
  p = 0.5 * (p + p.transpose());

  auto random_row = [&](std::size_t n) {
    std::vector<double> w(n);
    for (double& v : w) v = rng.uniform(0.05, 1.0);
    return normalized(std::move(w));
  };

  // Outer kernel: a base row per (s, a) perturbed by an x-dependent row.
  m.kernel_s.resize(m.s_count * m.a_count * m.x_count * m.s_count);
  for (std::size_t s = 0; s < m.s_count; ++s)
    for (std::size_t a = 0; a < m.a_count; ++a) {
      const auto base = random_row(m.s_count);
      const double mix = rng.uniform(0.0, 1.0);
      for (std::size_t x = 0; x < m.x_count; ++x) {
        const auto alt = random_row(m.s_count);
        double* out = m.kernel_s.data() + ((s * m.a_count + a) * m.x_count + x) * m.s_count;
        for (std::size_t sn = 0; sn < m.s_count; ++sn) out[sn] = (1.0 - mix) * base[sn] + mix * alt[sn];
      }
    }

  // Inner kernel: u = x holds; otherwise land on x or strictly P-closer to u.
  m.kernel_x.assign(m.x_count * m.u_count * m.x_count, 0.0);
  for (std::size_t x = 0; x < m.x_count; ++x)
    for (std::size_t u = 0; u < m.u_count; ++u) {
      double* out = m.kernel_x.data() + (x * m.u_count + u) * m.x_count;
      if (u == x) {
        out[x] = 1.0;
        continue;
      }
      const double gap = p_norm(p, m.x_values[x] - m.x_values[u]);
      std::vector<double> w(m.x_count, 0.0);
      for (std::size_t y = 0; y < m.x_count; ++y) {
        if (y != x && p_norm(p, m.x_values[y] - m.x_values[u]) < gap) w[y] = rng.uniform(0.05, 1.0);
      }
      w = normalized(std::move(w));
      const double stay = rng.uniform(0.0, 0.6);
      for (std::size_t y = 0; y < m.x_count; ++y) out[y] = (1.0 - stay) * w[y];
      out[x] += stay;
    }

  m.reward.resize(m.s_count * m.a_count * m.x_count);
  for (std::size_t s = 0; s < m.s_count; ++s)
    for (std::size_t a = 0; a < m.a_count; ++a) {
      const double r_sa = rng.uniform(-params.reward_bound, params.reward_bound);
      for (std::size_t x = 0; x < m.x_count; ++x) {
        m.reward[(s * m.a_count + a) * m.x_count + x] =
            params.reward_ignores_x ? r_sa : rng.uniform(-params.reward_bound, params.reward_bound);
      }
    }
  m.mu0 = random_row(m.s_count);
  m.mu0_x = random_row(m.x_count);

  TrackingController k;
  k.x_count = m.x_count;
  k.u_count = m.u_count;
  k.table.assign(m.x_count * m.x_count * m.u_count, 0.0);
  for (std::size_t xs = 0; xs < m.x_count; ++xs)
    for (std::size_t x = 0; x < m.x_count; ++x) {
      double* out = k.table.data() + (xs * m.x_count + x) * m.u_count;
      const double hold = x == xs ? 0.0 : rng.uniform(0.0, 0.5);
      out[xs] += 1.0 - hold;
      out[x] += hold;
    }
  k.p_matrix = p;
  const Spectrum spec = spd_spectrum(p);
  k.rho = spec.rho();
  k.beta = 1.0;
  k.alpha = std::max(contraction_ratio(m, k), 1e-6);
  return {std::move(m), std::move(k)};
}

}  // namespace cxfer
