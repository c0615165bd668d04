#include "duet/gw.hpp"

#include <cmath>
#include <sstream>

#include "duet/errors.hpp"

namespace duet::ot {
namespace {

std::string fmt(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

void require_finite(const Matrix& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string(what) + " contains NaN or infinity");
}

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

double log_sum_exp(const Eigen::Ref<const Vector>& v) {
  const double hi = v.maxCoeff();
  if (!std::isfinite(hi)) return hi;
  return hi + std::log((v.array() - hi).exp().sum());
}

// Chains dV/dC into the rows of z for C_ik = ||z_i - z_k||_1.
Matrix chain_l1(const Matrix& z, const Matrix& g) {
  const Eigen::Index m = z.rows();
  Matrix out = Matrix::Zero(m, z.cols());
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index k = 0; k < m; ++k) {
      const double w = g(i, k) + g(k, i);
      if (w == 0.0) continue;
      for (Eigen::Index c = 0; c < z.cols(); ++c) out(i, c) += w * sign(z(i, c) - z(k, c));
    }
  }
  return out;
}

}  // namespace

void GWConfig::validate() const {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("gw epsilon must be positive, got " + fmt(epsilon));
  if (sinkhorn_iters < 1) throw ConfigError("gw sinkhorn_iters must be at least 1");
  if (projection_iters < 1) throw ConfigError("gw projection_iters must be at least 1");
  if (!(init_tilt >= 0.0 && init_tilt < 1.0)) throw ConfigError("gw init_tilt must lie in [0, 1)");
}

double TransportPlan::marginal_residual() const {
  const double target = 1.0 / double(mass.rows());
  return std::max((row_sums().array() - target).abs().maxCoeff(), (col_sums().array() - target).abs().maxCoeff());
}

Matrix pairwise_l1(const Matrix& embeddings) { return cross_l1(embeddings, embeddings); }

Matrix cross_l1(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("cross_l1: embedding widths differ (" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.cols()) + ")");
  }
  require_finite(a, "cross_l1 input");
  require_finite(b, "cross_l1 input");
  Matrix out(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      double sum = 0.0;
      for (Eigen::Index c = 0; c < a.cols(); ++c) sum += std::fabs(a(i, c) - b(j, c));
      out(i, j) = sum;
    }
  }
  return out;
}

TransportPlan sinkhorn(const Matrix& kernel, int iterations, double epsilon) {
  if (kernel.rows() != kernel.cols() || kernel.rows() == 0) throw ShapeError("sinkhorn: kernel must be square");
  if (iterations < 1) throw ConfigError("sinkhorn: iterations must be at least 1");
  require_finite(kernel, "sinkhorn kernel");
  if ((kernel.array() < 0.0).any()) throw NumericError("sinkhorn kernel has negative entries");
  const auto too_small = [&](const char* what, Eigen::Index i) {
    return NumericError("sinkhorn: kernel " + std::string(what) + " " + std::to_string(i) +
                        " underflowed to zero; entropic regularization epsilon=" + fmt(epsilon) + " is too small");
  };
  for (Eigen::Index i = 0; i < kernel.rows(); ++i) {
    if (kernel.row(i).maxCoeff() == 0.0) throw too_small("row", i);
    if (kernel.col(i).maxCoeff() == 0.0) throw too_small("column", i);
  }
  const Matrix k = kernel.cwiseMax(kKernelFloor);
  const Eigen::Index m = k.rows();
  Vector a(m), b = Vector::Ones(m);
  for (int it = 0; it < iterations; ++it) {
    a = (k * b).cwiseInverse();
    b = (k.transpose() * a).cwiseInverse();
  }
  TransportPlan plan{a.asDiagonal() * k * b.asDiagonal()};
  plan.mass /= double(m);
  if (!plan.mass.allFinite()) {
    throw NumericError("sinkhorn: scalings overflowed; entropic regularization epsilon=" + fmt(epsilon) +
                       " is too small for the plain-domain iteration");
  }
  return plan;
}

TransportPlan sinkhorn_log(const Matrix& log_kernel, int iterations) {
  if (log_kernel.rows() != log_kernel.cols() || log_kernel.rows() == 0) {
    throw ShapeError("sinkhorn_log: kernel must be square");
  }
  if (iterations < 1) throw ConfigError("sinkhorn_log: iterations must be at least 1");
  if ((log_kernel.array().isNaN()).any() || (log_kernel.array() == INFINITY).any()) {
    throw NumericError("sinkhorn_log: log kernel contains NaN or +infinity");
  }
  const Eigen::Index m = log_kernel.rows();
  Vector log_a(m), log_b = Vector::Zero(m);
  for (int it = 0; it < iterations; ++it) {
    for (Eigen::Index i = 0; i < m; ++i) log_a(i) = -log_sum_exp(log_kernel.row(i).transpose() + log_b);
    for (Eigen::Index j = 0; j < m; ++j) log_b(j) = -log_sum_exp(log_kernel.col(j) + log_a);
  }
  Matrix mass(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) mass(i, j) = std::exp(log_a(i) + log_kernel(i, j) + log_b(j)) / double(m);
  }
  if (!mass.allFinite()) throw NumericError("sinkhorn_log: plan is not finite (a row of the kernel is -infinity)");
  return {mass};
}

TransportPlan sinkhorn_symmetric(const Matrix& log_kernel, int iterations, bool log_domain) {
  if (log_kernel.rows() != log_kernel.cols() || log_kernel.rows() == 0) {
    throw ShapeError("sinkhorn_symmetric: kernel must be square");
  }
  if (iterations < 1) throw ConfigError("sinkhorn_symmetric: iterations must be at least 1");
  const Eigen::Index m = log_kernel.rows();
  Matrix mass(m, m);
  if (log_domain) {
    const Matrix log_kt = log_kernel.transpose();
    auto row_step = [&](const Vector& g) {
      Vector f(m);
      for (Eigen::Index i = 0; i < m; ++i) f(i) = -log_sum_exp(log_kt.col(i) + g);
      return f;
    };
    auto col_step = [&](const Vector& f) {
      Vector g(m);
      for (Eigen::Index j = 0; j < m; ++j) g(j) = -log_sum_exp(log_kernel.col(j) + f);
      return g;
    };
    Vector f_row, g_row = Vector::Zero(m), f_col = Vector::Zero(m), g_col;
    for (int it = 0; it < iterations; ++it) {
      f_row = row_step(g_row);
      g_row = col_step(f_row);
      g_col = col_step(f_col);
      f_col = row_step(g_col);
    }
    const Matrix from_rows = ((log_kernel.colwise() + f_row).rowwise() + g_row.transpose()).array().exp().matrix();
    const Matrix from_cols = ((log_kernel.colwise() + f_col).rowwise() + g_col.transpose()).array().exp().matrix();
    mass = 0.5 * (from_rows + from_cols);
  } else {
    const Matrix k = log_kernel.array().exp().matrix().cwiseMax(kKernelFloor);
    const Matrix kt = k.transpose();
    Vector a_row, b_row = Vector::Ones(m), a_col = Vector::Ones(m), b_col;
    for (int it = 0; it < iterations; ++it) {
      a_row = (k * b_row).cwiseInverse();
      b_row = (kt * a_row).cwiseInverse();
      b_col = (kt * a_col).cwiseInverse();
      a_col = (k * b_col).cwiseInverse();
    }
    mass = 0.5 * (a_row.asDiagonal() * k * b_row.asDiagonal() + a_col.asDiagonal() * k * b_col.asDiagonal());
  }
  if (!mass.allFinite()) throw NumericError("sinkhorn_symmetric: plan is not finite");
  mass /= double(m);
  return {mass};
}

double gw_objective(const Matrix& c, const Matrix& d, const Matrix& plan) {
  const Vector r = plan.rowwise().sum();
  const Vector q = plan.colwise().sum().transpose();
  const double own = r.dot(c.cwiseAbs2() * r) + q.dot(d.cwiseAbs2() * q);
  const double cross = plan.cwiseProduct(c * plan * d.transpose()).sum();
  return own - 2.0 * cross;
}

double entropy(const Matrix& plan) {
  double h = 0.0;
  for (Eigen::Index i = 0; i < plan.size(); ++i) {
    const double p = plan.data()[i];
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

double gw_objective_loop(const Matrix& c, const Matrix& d, const Matrix& plan) {
  const Eigen::Index m = plan.rows(), n = plan.cols();
  double total = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      for (Eigen::Index k = 0; k < m; ++k)
        for (Eigen::Index l = 0; l < n; ++l) {
          const double diff = c(i, k) - d(j, l);
          total += diff * diff * plan(i, j) * plan(k, l);
        }
  return total;
}

GWResult entropic_gw_costs(const Matrix& c, const Matrix& d, const GWConfig& cfg) {
  cfg.validate();
  if (c.rows() != c.cols() || d.rows() != d.cols()) throw ShapeError("entropic_gw: cost matrices must be square");
  if (c.rows() != d.rows()) {
    throw ShapeError("entropic_gw: batch sizes differ (" + std::to_string(c.rows()) + " vs " +
                     std::to_string(d.rows()) + ")");
  }
  if (c.rows() == 0) throw ShapeError("entropic_gw: empty batch");
  require_finite(c, "entropic_gw cost matrix C");
  require_finite(d, "entropic_gw cost matrix D");

  const Eigen::Index m = c.rows();
  const double inv_m = 1.0 / double(m);
  GWResult result;
  if (m == 1) {
    result.plan.mass = Matrix::Ones(1, 1);
    result.value = 0.0;
    result.history.assign(std::size_t(cfg.projection_iters), 0.0);
    result.energy_history = result.history;
    return result;
  }

  const Matrix ct = c.transpose();
  const Matrix dt = d.transpose();
  const Vector c2_rows = c.cwiseAbs2().rowwise().sum() * inv_m;
  const Vector d2_cols = d.cwiseAbs2().colwise().sum().transpose() * inv_m;
  // Coupling with unit row sums, tilted slightly toward the identity.
  Matrix p = Matrix::Constant(m, m, (1.0 - cfg.init_tilt) * inv_m);
  p.diagonal().array() += cfg.init_tilt;

  const double log_floor = std::log(kKernelFloor);
  for (int outer = 0; outer < cfg.projection_iters; ++outer) {
    Matrix e = -(c * p * dt + ct * p * d);
    e.colwise() += c2_rows;
    e.rowwise() += d2_cols.transpose();
    Matrix s = -e / cfg.epsilon;
    // A global shift is absorbed by the scalings and leaves the largest
    // kernel entry at exactly 1.
    s.array() -= s.maxCoeff();
    const bool log_domain = cfg.epsilon < cfg.log_domain_below || s.minCoeff() < log_floor;
    result.log_domain = result.log_domain || log_domain;
    const TransportPlan plan = sinkhorn_symmetric(s, cfg.sinkhorn_iters, log_domain);
    p = plan.mass * double(m);
    result.history.push_back(gw_objective(c, d, plan.mass));
    result.energy_history.push_back(result.history.back() - 2.0 * cfg.epsilon * inv_m * entropy(plan.mass));
  }
  result.plan.mass = p * inv_m;
  result.value = result.history.back();
  return result;
}

GWResult entropic_gw(const Matrix& zx, const Matrix& zy, const GWConfig& cfg) {
  if (zx.rows() != zy.rows()) {
    throw ShapeError("entropic_gw: batch sizes differ (" + std::to_string(zx.rows()) + " vs " +
                     std::to_string(zy.rows()) + ")");
  }
  return entropic_gw_costs(pairwise_l1(zx), pairwise_l1(zy), cfg);
}

GWResult entropic_gw_four(const Matrix& zx, const Matrix& zx_prime, const Matrix& zy, const Matrix& zy_prime,
                          const GWConfig& cfg) {
  if (zx.rows() != zx_prime.rows() || zy.rows() != zy_prime.rows() || zx.rows() != zy.rows()) {
    throw ShapeError("entropic_gw_four: all four batches must have the same size");
  }
  return entropic_gw_costs(cross_l1(zx, zx_prime), cross_l1(zy, zy_prime), cfg);
}

Matrix cost_gradient(const Matrix& c, const Matrix& d, const Matrix& plan) {
  const Vector r = plan.rowwise().sum();
  return 2.0 * (c.cwiseProduct(r * r.transpose()) - plan * d * plan.transpose());
}

GWGradient gw_gradient(const Matrix& zx, const Matrix& zy, const TransportPlan& plan, bool both) {
  if (zx.rows() != zy.rows() || plan.mass.rows() != zx.rows() || plan.mass.cols() != zy.rows()) {
    throw ShapeError("gw_gradient: plan must be m x m for batches of size m");
  }
  const Matrix c = pairwise_l1(zx);
  const Matrix d = pairwise_l1(zy);
  GWGradient out;
  out.zx = chain_l1(zx, cost_gradient(c, d, plan.mass));
  if (both) {
    const Matrix pt = plan.mass.transpose();
    out.zy = chain_l1(zy, cost_gradient(d, c, pt));
  }
  return out;
}

}  // namespace duet::ot
