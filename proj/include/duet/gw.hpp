#pragma once

#include <Eigen/Core>
#include <vector>

namespace duet::ot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct GWConfig {
  double epsilon = 0.2;
  int sinkhorn_iters = 30;    // L
  int projection_iters = 20;  // M
  /// Below this epsilon Sinkhorn runs in the log domain.
  double log_domain_below = 0.05;
  /// Weight of the identity coupling mixed into the uniform initial plan.
  /// The uniform plan is a stationary point whenever every row of C (or D)
  /// has the same sum, so a tiny tilt is needed to leave it.
  double init_tilt = 1e-6;

  void validate() const;
};

/// Coupling with uniform marginals 1/m. Rows index the first batch, columns
/// the second.
struct TransportPlan {
  Matrix mass;

  [[nodiscard]] Vector row_sums() const { return mass.rowwise().sum(); }
  [[nodiscard]] Vector col_sums() const { return mass.colwise().sum().transpose(); }
  /// max over rows and columns of |sum - 1/m|.
  [[nodiscard]] double marginal_residual() const;
};

/// C_ij = sum_c |z_i[c] - z_j[c]| over the rows of an m x d batch.
Matrix pairwise_l1(const Matrix& embeddings);
/// C_ij = sum_c |a_i[c] - b_j[c]|.
Matrix cross_l1(const Matrix& a, const Matrix& b);

/// Entries of K below this are raised to it in the plain-domain iteration.
inline constexpr double kKernelFloor = 1e-300;

/// L alternating scalings a = 1 / (K b), b = 1 / (K^T a) starting from b = 1;
/// returns (1/m) diag(a) K diag(b). `epsilon` only labels the error raised
/// when a row or column of K is entirely zero.
TransportPlan sinkhorn(const Matrix& kernel, int iterations, double epsilon = 0.0);
/// Same iteration on log K, for kernels whose entries would underflow.
TransportPlan sinkhorn_log(const Matrix& log_kernel, int iterations);

/// Order-free variant used inside the GW projection: the mean of the plans
/// from the row-first chain above and its column-first mirror, L steps each.
/// Transposing the kernel transposes the result.
TransportPlan sinkhorn_symmetric(const Matrix& log_kernel, int iterations, bool log_domain);

struct GWResult {
  double value = 0.0;
  TransportPlan plan;
  /// Objective after each projection iteration.
  std::vector<double> history;
  /// value - (2 epsilon / m) * entropy(plan) after each projection iteration:
  /// the energy each exact projection step cannot increase.
  std::vector<double> energy_history;
  bool log_domain = false;
};

/// sum_{ijkl} (C_ik - D_jl)^2 pi_ij pi_kl.
double gw_objective(const Matrix& c, const Matrix& d, const Matrix& plan);
/// -sum pi log pi, with 0 log 0 = 0.
double entropy(const Matrix& plan);
/// Naive four-fold loop of the same sum.
double gw_objective_loop(const Matrix& c, const Matrix& d, const Matrix& plan);

/// Entropic GW between metric spaces given by cost matrices C (first batch)
/// and D (second batch). Each projection step builds
///   E = (1/m) C^2 1 1^T + (1/m) 1 1^T D^2 - (C P D^T + C^T P D)
/// from the current coupling P with unit row sums (total mass m), and runs L
/// steps of sinkhorn_symmetric on K = exp(-E / epsilon). The returned plan
/// is P / m.
GWResult entropic_gw_costs(const Matrix& c, const Matrix& d, const GWConfig& cfg = {});

/// GW between two embedding batches under the L1 metric.
GWResult entropic_gw(const Matrix& zx, const Matrix& zy, const GWConfig& cfg = {});

/// Experimental: C from (Zx, Z'x) cross pairs, D from (Zy, Z'y).
GWResult entropic_gw_four(const Matrix& zx, const Matrix& zx_prime, const Matrix& zy, const Matrix& zy_prime,
                          const GWConfig& cfg = {});

/// dV/dC for V = gw_objective with the plan fixed: 2 (C o r r^T - P D P^T),
/// r the plan's row sums.
Matrix cost_gradient(const Matrix& c, const Matrix& d, const Matrix& plan);

struct GWGradient {
  Matrix zx;
  Matrix zy;  // zero-sized unless requested
};

/// Gradient of the fixed-plan objective with respect to the embeddings,
/// chained through the L1 costs with sign(0) = 0.
GWGradient gw_gradient(const Matrix& zx, const Matrix& zy, const TransportPlan& plan, bool both = false);

}  // namespace duet::ot
