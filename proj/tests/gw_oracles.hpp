#pragma once

// Independent reference computations for the GW solver tests.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "duet/gw.hpp"
#include "duet/rng.hpp"

namespace duet::testing {

inline ot::Matrix random_embeddings(Rng& rng, Eigen::Index m, Eigen::Index d, double sd) {
  ot::Matrix z(m, d);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index c = 0; c < d; ++c) z(i, c) = sd * rng.normal();
  return z;
}

inline ot::Matrix l1_loop(const ot::Matrix& z) {
  const Eigen::Index m = z.rows();
  ot::Matrix out(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < z.cols(); ++c) s += std::fabs(z(i, c) - z(j, c));
      out(i, j) = s;
    }
  return out;
}

/// Minimum of the GW objective over the m! permutation couplings (mass 1/m each).
inline double brute_force_gw(const ot::Matrix& c, const ot::Matrix& d) {
  const auto m = static_cast<int>(c.rows());
  std::vector<int> perm(static_cast<std::size_t>(m));
  std::iota(perm.begin(), perm.end(), 0);
  double best = INFINITY;
  do {
    double total = 0.0;
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < m; ++k) {
        const double diff = c(i, k) - d(perm[std::size_t(i)], perm[std::size_t(k)]);
        total += diff * diff;
      }
    best = std::min(best, total / double(m * m));
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// Row-first Sinkhorn in long double, for many iterations.
inline ot::Matrix sinkhorn_reference(const ot::Matrix& k, int iterations) {
  const Eigen::Index m = k.rows();
  std::vector<long double> a(std::size_t(m), 1.0L), b(std::size_t(m), 1.0L);
  for (int it = 0; it < iterations; ++it) {
    for (Eigen::Index i = 0; i < m; ++i) {
      long double s = 0;
      for (Eigen::Index j = 0; j < m; ++j) s += (long double)k(i, j) * b[std::size_t(j)];
      a[std::size_t(i)] = 1.0L / s;
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      long double s = 0;
      for (Eigen::Index i = 0; i < m; ++i) s += (long double)k(i, j) * a[std::size_t(i)];
      b[std::size_t(j)] = 1.0L / s;
    }
  }
  ot::Matrix out(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      out(i, j) = double(a[std::size_t(i)] * k(i, j) * b[std::size_t(j)] / (long double)m);
  return out;
}

/// Fixed-plan objective as a function of the embeddings.
inline double fixed_plan_objective(const ot::Matrix& zx, const ot::Matrix& zy, const ot::Matrix& plan) {
  return ot::gw_objective_loop(l1_loop(zx), l1_loop(zy), plan);
}

/// Smallest |z_i[c] - z_k[c]| over k != i: distance of coordinate (i, c) from an L1 kink.
inline double kink_distance(const ot::Matrix& z, Eigen::Index i, Eigen::Index c) {
  double best = INFINITY;
  for (Eigen::Index k = 0; k < z.rows(); ++k)
    if (k != i) best = std::min(best, std::fabs(z(i, c) - z(k, c)));
  return best;
}

}  // namespace duet::testing
