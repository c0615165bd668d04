#include <chrono>
#include <cmath>

#include "doctest.h"
#include "duet/errors.hpp"
#include "duet/gw.hpp"
#include "gw_oracles.hpp"

using namespace duet;
using namespace duet::ot;
using duet::testing::random_embeddings;

namespace {

Matrix swap2() {
  Matrix c(2, 2);
  c << 0, 1, 1, 0;
  return c;
}

Matrix permute_rows(const Matrix& z, const std::vector<int>& perm) {
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) out.row(i) = z.row(perm[std::size_t(i)]);
  return out;
}

double max_increase(const std::vector<double>& h) {
  double worst = -INFINITY;
  for (std::size_t k = 1; k < h.size(); ++k) worst = std::max(worst, h[k] - h[k - 1]);
  return worst;
}

}  // namespace

TEST_CASE("pairwise L1 costs") {
  Matrix one(1, 3);
  one << 4, 5, 6;
  CHECK(pairwise_l1(one) == Matrix::Zero(1, 1));

  Matrix two(2, 2);
  two << 0, 0, 1, 2;
  const Matrix c = pairwise_l1(two);
  CHECK(c(0, 1) == 3.0);
  CHECK(c(1, 0) == 3.0);
  CHECK(c(0, 0) == 0.0);

  Rng rng(1);
  const Matrix z = random_embeddings(rng, 9, 5, 2.0);
  const Matrix cz = pairwise_l1(z);
  CHECK(cz == testing::l1_loop(z));
  CHECK(cz == cz.transpose());
  CHECK(cz.diagonal().isZero(0.0));
  CHECK((cz.array() >= 0).all());

  Matrix bad = z;
  bad(2, 1) = NAN;
  CHECK_THROWS_AS(pairwise_l1(bad), NumericError);
}

TEST_CASE("sinkhorn fixed points and convergence") {
  const TransportPlan flat = sinkhorn(Matrix::Ones(2, 2), 30);
  CHECK((flat.mass.array() - 0.25).abs().maxCoeff() < 1e-15);
  CHECK((flat.row_sums().array() - 0.5).abs().maxCoeff() < 1e-15);

  Matrix dominant = Matrix::Ones(2, 2);
  dominant.diagonal().setConstant(1e6);
  const TransportPlan peaked = sinkhorn(dominant, 30);
  const Matrix oracle = testing::sinkhorn_reference(dominant, 1000);
  CHECK(oracle(0, 0) > 0.49);
  CHECK(oracle(1, 1) > 0.49);
  CHECK(peaked.mass(0, 0) > 0.49);
  CHECK(peaked.mass(1, 1) > 0.49);
  CHECK((peaked.mass - oracle).cwiseAbs().maxCoeff() < 1e-12);

  Rng rng(2);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix k(4, 4);
    for (Eigen::Index i = 0; i < k.size(); ++i) k.data()[i] = rng.uniform(0.1, 1.0);
    const TransportPlan plan = sinkhorn(k, 30);
    CHECK(plan.marginal_residual() < 1e-6);
    CHECK((plan.mass - testing::sinkhorn_reference(k, 1000)).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("sinkhorn reports an underflowed kernel with the regularization") {
  Matrix k = Matrix::Ones(3, 3);
  k.row(1).setZero();
  try {
    (void)sinkhorn(k, 30, 0.001);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 1") != std::string::npos);
    CHECK(msg.find("epsilon=0.001") != std::string::npos);
  }
  Matrix cols = Matrix::Ones(3, 3);
  cols.col(2).setZero();
  CHECK_THROWS_AS(sinkhorn(cols, 30, 0.01), NumericError);
  CHECK_THROWS_AS(sinkhorn(-Matrix::Ones(2, 2), 30), NumericError);
  CHECK_THROWS_AS(sinkhorn(Matrix::Ones(2, 3), 30), ShapeError);
}

TEST_CASE("log-domain sinkhorn agrees with the plain iteration and survives underflow") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix log_k(5, 5);
    for (Eigen::Index i = 0; i < log_k.size(); ++i) log_k.data()[i] = rng.uniform(-3.0, 0.0);
    const Matrix plain = sinkhorn(log_k.array().exp().matrix(), 30).mass;
    const Matrix logd = sinkhorn_log(log_k, 30).mass;
    CHECK((plain - logd).cwiseAbs().maxCoeff() < 1e-14);
  }
  Matrix extreme(3, 3);
  extreme << 0, -2000, -4000, -2000, 0, -2000, -4000, -2000, 0;
  const TransportPlan plan = sinkhorn_log(extreme, 30);
  CHECK(plan.mass.allFinite());
  CHECK(plan.marginal_residual() < 1e-12);
  CHECK(plan.mass.diagonal().minCoeff() > 0.3333);
}

TEST_CASE("symmetric sinkhorn is transpose-equivariant and matches the fixed point") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix log_k(4, 4);
    for (Eigen::Index i = 0; i < log_k.size(); ++i) log_k.data()[i] = rng.uniform(-2.0, 0.0);
    for (bool log_domain : {false, true}) {
      const Matrix p = sinkhorn_symmetric(log_k, 30, log_domain).mass;
      const Matrix pt = sinkhorn_symmetric(log_k.transpose(), 30, log_domain).mass;
      CHECK((p - pt.transpose()).cwiseAbs().maxCoeff() < 1e-15);
      CHECK((p - testing::sinkhorn_reference(log_k.array().exp().matrix(), 1000)).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("GW objective matches the four-fold loop") {
  Rng rng(5);
  const Matrix zx = random_embeddings(rng, 5, 3, 1.0);
  const Matrix zy = random_embeddings(rng, 5, 4, 1.0);
  Matrix plan(5, 5);
  for (Eigen::Index i = 0; i < plan.size(); ++i) plan.data()[i] = rng.uniform();
  plan /= plan.sum();
  const Matrix c = pairwise_l1(zx), d = pairwise_l1(zy);
  CHECK(gw_objective(c, d, plan) == doctest::Approx(gw_objective_loop(c, d, plan)).epsilon(1e-12));
}

TEST_CASE("isometric and single-point spaces") {
  const GWResult iso = entropic_gw_costs(swap2(), swap2());
  CHECK(iso.value >= 0.0);
  CHECK(iso.value < 1e-3);
  CHECK(iso.plan.marginal_residual() < 1e-12);

  Rng rng(6);
  const GWResult single = entropic_gw(random_embeddings(rng, 1, 3, 5.0), random_embeddings(rng, 1, 7, 5.0));
  CHECK(single.value == 0.0);
  CHECK(single.plan.mass(0, 0) == 1.0);
}

TEST_CASE("entropic GW tracks the permutation brute force on small instances") {
  // Embedding entries N(0, 0.5^2) in 8 dimensions.
  Rng rng(7);
  const auto start = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix zx = random_embeddings(rng, 3, 8, 0.5);
    const Matrix zy = random_embeddings(rng, 3, 8, 0.5);
    const double best = testing::brute_force_gw(testing::l1_loop(zx), testing::l1_loop(zy));
    const double value = entropic_gw(zx, zy).value;
    CHECK_MESSAGE(std::fabs(value - best) <= std::max(0.1 * best, 1e-3), "trial " << trial << ": " << value
                                                                                  << " vs " << best);
    CHECK(std::fabs(value - entropic_gw(zy, zx).value) < 1e-8);
  }
  CHECK(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() < 10.0);
}

TEST_CASE("GW value is invariant to joint relabelling and to L1 isometries") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix zx = random_embeddings(rng, 6, 4, 0.5);
    const Matrix zy = random_embeddings(rng, 6, 5, 0.5);
    const double base = entropic_gw(zx, zy).value;

    std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    CHECK(entropic_gw(permute_rows(zx, perm), permute_rows(zy, perm)).value == doctest::Approx(base).epsilon(1e-10));

    Matrix flipped = zx;
    flipped.col(1) *= -1.0;
    flipped.col(3) *= -1.0;
    Matrix swapped(zy.rows(), zy.cols());
    for (Eigen::Index c = 0; c < zy.cols(); ++c) swapped.col(c) = zy.col((c + 2) % zy.cols());
    CHECK(entropic_gw(flipped, swapped).value == doctest::Approx(base).epsilon(1e-9));

    CHECK(entropic_gw(zy, zx).value == doctest::Approx(base).epsilon(1e-8));
  }
}

TEST_CASE("well-conditioned problems: exact marginals and a monotone outer loop") {
  // Embedding entries N(0, 0.02^2) in 8 dimensions: every projection converges
  // within 30 Sinkhorn steps at epsilon = 0.2.
  Rng rng(9);
  for (Eigen::Index m : {4, 8, 16}) {
    for (int trial = 0; trial < 30; ++trial) {
      const GWResult r = entropic_gw(random_embeddings(rng, m, 8, 0.02), random_embeddings(rng, m, 8, 0.02));
      CHECK(r.plan.marginal_residual() < 1e-6);
      CHECK(r.history.size() == 20);
      CHECK(max_increase(r.history) <= 1e-9);
      CHECK(max_increase(r.energy_history) <= 1e-9);
      CHECK((r.plan.mass.array() >= 0).all());
    }
  }
}

TEST_CASE("small epsilon switches to the log domain") {
  Rng rng(10);
  const Matrix zx = random_embeddings(rng, 5, 3, 1.0);
  const Matrix zy = random_embeddings(rng, 5, 3, 1.0);
  GWConfig cfg;
  cfg.epsilon = 0.01;
  const GWResult r = entropic_gw(zx, zy, cfg);
  CHECK(r.log_domain);
  CHECK(std::isfinite(r.value));
  CHECK(r.plan.mass.allFinite());

  // Large costs underflow the plain kernel even at the default epsilon.
  const GWResult big = entropic_gw(100.0 * zx, 100.0 * zy);
  CHECK(big.log_domain);
  CHECK(std::isfinite(big.value));
}

TEST_CASE("solver preconditions") {
  Rng rng(11);
  CHECK_THROWS_AS(entropic_gw(random_embeddings(rng, 3, 2, 1), random_embeddings(rng, 4, 2, 1)), ShapeError);
  Matrix bad = random_embeddings(rng, 3, 2, 1);
  bad(0, 0) = INFINITY;
  CHECK_THROWS_AS(entropic_gw(bad, random_embeddings(rng, 3, 2, 1)), NumericError);
  GWConfig cfg;
  cfg.epsilon = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.sinkhorn_iters = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("four-batch entry reduces to the two-batch solver on repeated batches") {
  Rng rng(12);
  const Matrix zx = random_embeddings(rng, 4, 3, 0.5);
  const Matrix zy = random_embeddings(rng, 4, 3, 0.5);
  CHECK(entropic_gw_four(zx, zx, zy, zy).value == entropic_gw(zx, zy).value);
  const GWResult cross = entropic_gw_four(zx, random_embeddings(rng, 4, 3, 0.5), zy, random_embeddings(rng, 4, 3, 0.5));
  CHECK(std::isfinite(cross.value));
  CHECK_THROWS_AS(entropic_gw_four(zx, zx, zy, random_embeddings(rng, 3, 3, 0.5)), ShapeError);
}

TEST_CASE("envelope gradient vanishes at an exact isometric coupling") {
  Matrix zx(2, 1), zy(2, 3);
  zx << 0.0, 1.0;
  zy << 0.2, 0.0, 0.0, 0.7, 0.0, 0.5;  // also L1 distance 1
  TransportPlan identity{Matrix::Identity(2, 2) * 0.5};
  const GWGradient g = gw_gradient(zx, zy, identity, true);
  CHECK(g.zx.norm() < 1e-8);
  CHECK(g.zy.norm() < 1e-8);
}

TEST_CASE("envelope gradient matches finite differences of the fixed-plan objective") {
  Rng rng(13);
  constexpr double h = 1e-6;
  std::size_t compared = 0;
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix zx = random_embeddings(rng, 5, 4, 1.0);
    const Matrix zy = random_embeddings(rng, 5, 3, 1.0);
    const GWResult r = entropic_gw(zx, zy);
    const GWGradient g = gw_gradient(zx, zy, r.plan, true);
    for (int side = 0; side < 2; ++side) {
      const Matrix& z = side == 0 ? zx : zy;
      const Matrix& grad = side == 0 ? g.zx : g.zy;
      for (Eigen::Index i = 0; i < z.rows(); ++i) {
        for (Eigen::Index c = 0; c < z.cols(); ++c) {
          if (testing::kink_distance(z, i, c) <= 1e-3) continue;
          Matrix plus = z, minus = z;
          plus(i, c) += h;
          minus(i, c) -= h;
          const double fp = side == 0 ? testing::fixed_plan_objective(plus, zy, r.plan.mass)
                                      : testing::fixed_plan_objective(zx, plus, r.plan.mass);
          const double fm = side == 0 ? testing::fixed_plan_objective(minus, zy, r.plan.mass)
                                      : testing::fixed_plan_objective(zx, minus, r.plan.mass);
          const double fd = (fp - fm) / (2 * h);
          const double rel = std::fabs(fd - grad(i, c)) / std::max({std::fabs(fd), std::fabs(grad(i, c)), 1e-3});
          CHECK_MESSAGE(rel < 1e-4, "side " << side << " (" << i << "," << c << "): " << grad(i, c) << " vs " << fd);
          ++compared;
        }
      }
    }
  }
  CHECK(compared > 300);
}

TEST_CASE("envelope gradient ignores a common translation and defaults to the first batch") {
  Rng rng(14);
  const Matrix zx = random_embeddings(rng, 6, 4, 1.0);
  const Matrix zy = random_embeddings(rng, 6, 4, 1.0);
  const TransportPlan plan = entropic_gw(zx, zy).plan;
  const GWGradient g = gw_gradient(zx, zy, plan);
  CHECK(g.zy.size() == 0);
  Matrix shifted = zx;
  shifted.rowwise() += Eigen::RowVectorXd::LinSpaced(4, -3.0, 2.0);
  CHECK((gw_gradient(shifted, zy, plan).zx - g.zx).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(gw_gradient(zx, zy.topRows(5), plan), ShapeError);
}
