#include "oracles.hpp"
#include "prunelab/decomp.hpp"
#include "prunelab/trainer.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace prunelab;

namespace {

struct HandProblem {
  Dataset data;
  MaskedNet net;
};

// K=2, m=2, d=6, n=2 with every number written out.
HandProblem hand_problem() {
  RowMatrix noise(2, 6);
  noise << 0, 0, 1.0, -0.5, 0.25, 0.0,
           0, 0, 0.3, 0.8, 0.0, 0.6;
  auto data = oracle::make_dataset(2, 6, 1.0, 1.0, {0, 1}, {Patch::first, Patch::second}, noise);
  std::vector<std::uint8_t> bits = {1, 0, 1, 1, 0, 1,
                                    0, 1, 1, 0, 1, 1,
                                    1, 1, 0, 1, 1, 0,
                                    0, 1, 1, 1, 1, 1};
  Mask mask(2, 2, 6, 0.5, 0, bits);
  RowMatrix W(4, 6);
  W << 0.4, 0.9, 0.5, -0.2, 0.7, 0.3,
       0.2, 0.15, 0.6, 0.4, 0.3, -0.5,
       -0.3, 0.5, 0.2, 0.9, 0.1, 0.8,
       0.6, 0.35, -0.4, 0.5, 0.2, 0.7;
  return {std::move(data), MaskedNet(mask, W, Activation::poly(3), 0.0)};
}

void step_tracked(MaskedNet& net, const Dataset& data, DecompState& st, double eta) {
  auto lg = loss_and_grad(net, data);
  update_coefficients(st, lg.record, net, eta);
  net.apply_step(lg.grad, eta);
}

}  // namespace

TEST(Decomp, InitIsZeroWithCachedNorms) {
  auto t = oracle::tiny_problem(3, 4, 20, 10, 1.0, Activation::poly(3), 0.1, 1.0, 1);
  auto st = init_decomp(t.net, t.data);
  EXPECT_EQ(st.gamma.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(st.zeta.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(st.omega.cwiseAbs().maxCoeff(), 0.0);
  for (Eigen::Index row = 0; row < st.xi_tilde_sq_norms.rows(); ++row)
    for (std::size_t i = 0; i < 10; ++i)
      EXPECT_DOUBLE_EQ(st.xi_tilde_sq_norms(row, i), t.data.noise().row(i).squaredNorm());
}

TEST(Decomp, CachedNormsConcentrate) {
  auto t = oracle::tiny_problem(2, 20, 400, 30, 0.5, Activation::poly(3), 0.1, 0.5, 2);
  auto st = init_decomp(t.net, t.data);
  const double scale = 0.25 * 0.5 * 400;
  EXPECT_GE(st.xi_tilde_sq_norms.minCoeff(), 0.5 * scale);
  EXPECT_LE(st.xi_tilde_sq_norms.maxCoeff(), 1.5 * scale);
}

TEST(Decomp, HandDerivedStep) {
  auto hp = hand_problem();
  auto st = init_decomp(hp.net, hp.data);
  auto rec = forward(hp.net, hp.data);
  update_coefficients(st, rec, hp.net, 0.5);
  const double gamma[4][2] = {{0.042863749539914703, 0},
                              {0, -0.0049619522042798191},
                              {0, 0.055132802269775766},
                              {0, 0.027015073112190122}};
  const double zeta[4][2] = {{0.12055429558101008, 0},
                             {0.12969005079300849, 0},
                             {0, 0.07316696242342853},
                             {0, 0.11778571876914894}};
  const double omega[4][2] = {{0, -0.0069469536172008239}, {0, 0}, {0, 0}, {0, 0}};
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 2; ++b) {
      EXPECT_NEAR(st.gamma(a, b), gamma[a][b], 1e-12) << a << "," << b;
      EXPECT_NEAR(st.zeta(a, b), zeta[a][b], 1e-12) << a << "," << b;
      EXPECT_NEAR(st.omega(a, b), omega[a][b], 1e-12) << a << "," << b;
    }
  EXPECT_EQ(st.iteration, 1u);
}

TEST(Decomp, ZeroLprimeLeavesStateUnchanged) {
  auto hp = hand_problem();
  auto st = init_decomp(hp.net, hp.data);
  auto rec = forward(hp.net, hp.data);
  rec.lprime.setZero();
  update_coefficients(st, rec, hp.net, 0.5);
  EXPECT_EQ(st.gamma.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(st.zeta.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(st.omega.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Decomp, ZeroInitPolyStepIsZero) {
  auto t = oracle::tiny_problem(2, 2, 6, 2, 1.0, Activation::poly(3), 0.0, 1.0, 3);
  auto st = init_decomp(t.net, t.data);
  step_tracked(t.net, t.data, st, 1.0);
  EXPECT_EQ(st.gamma.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(st.zeta.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(t.net.weights().cwiseAbs().maxCoeff(), 0.0);
}

TEST(Decomp, IterationMismatchIsRejected) {
  auto hp = hand_problem();
  auto st = init_decomp(hp.net, hp.data);
  auto rec = forward(hp.net, hp.data);
  st.iteration = 4;
  EXPECT_THROW(update_coefficients(st, rec, hp.net, 0.5), ContractError);
}

TEST(Decomp, ReconstructionAtInitIsExact) {
  auto t = oracle::tiny_problem(2, 5, 30, 8, 0.6, Activation::poly(3), 0.1, 1.0, 4);
  auto st = init_decomp(t.net, t.data);
  auto rec = reconstruct(st, t.data, t.net);
  EXPECT_EQ(rec.weights, t.net.weights());
  EXPECT_EQ(rec.report.max_abs_residual, 0.0);
}

TEST(Decomp, ReconstructionAfter50StepsAtFig3Scale) {
  auto t = oracle::tiny_problem(2, 150, 400, 100, 0.7, Activation::poly(3), 0.1, 0.5, 5);
  auto st = init_decomp(t.net, t.data);
  for (int s = 0; s < 50; ++s) step_tracked(t.net, t.data, st, 0.05);
  auto rec = reconstruct(st, t.data, t.net);
  EXPECT_LE(rec.report.max_rel_residual, 1e-8);
  EXPECT_GT((t.net.weights() - st.w0).norm(), 0.0);
}

TEST(Decomp, SignsMonotonicityAndGatingAlongRun) {
  auto t = oracle::tiny_problem(3, 8, 60, 20, 0.5, Activation::poly(3), 0.2, 0.6, 6);
  auto st = init_decomp(t.net, t.data);
  for (int s = 0; s < 40; ++s) {
    DecompState before = st;
    step_tracked(t.net, t.data, st, 0.5);
    EXPECT_TRUE(monotonicity_violations(before, st).empty());
    EXPECT_TRUE(invariant_violations(st, t.net.mask()).empty());
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t r = 0; r < 8; ++r) {
        for (std::size_t i = 0; i < 20; ++i) {
          if (t.data.label(i) == j) EXPECT_EQ(st.omega_at(j, r, i), 0.0);
          else EXPECT_EQ(st.zeta_at(j, r, i), 0.0);
        }
        for (std::size_t k = 0; k < 3; ++k)
          if (!t.net.mask().bit(j, r, k)) EXPECT_EQ(st.gamma_at(j, r, k), 0.0);
      }
  }
  EXPECT_GT(summarize(st).max_zeta, 0.0);
}

TEST(Decomp, ViolationsAreDetected) {
  auto t = oracle::tiny_problem(2, 3, 10, 4, 1.0, Activation::poly(3), 0.2, 1.0, 7);
  auto st = init_decomp(t.net, t.data);
  auto bad = st;
  bad.zeta(0, 0) = -1.0;
  EXPECT_FALSE(monotonicity_violations(st, bad).empty());
  auto gated = st;
  std::size_t i = 0;
  while (t.data.label(i) == 0) ++i;
  gated.zeta(0, i) = 0.5;  // class 0 neuron, sample of another class
  EXPECT_FALSE(invariant_violations(gated, t.net.mask()).empty());
}

TEST(Decomp, SummaryPerClass) {
  auto t = oracle::tiny_problem(2, 3, 10, 4, 1.0, Activation::poly(3), 0.2, 1.0, 8);
  auto st = init_decomp(t.net, t.data);
  st.gamma(1, 0) = 0.3;   // (j=0, r=1, k=0)
  st.gamma(4, 1) = 0.7;   // (j=1, r=1, k=1)
  st.gamma(2, 1) = -0.2;  // off-diagonal
  auto s = summarize(st);
  EXPECT_EQ(s.max_gamma_diag, 0.7);
  EXPECT_EQ(s.class_signal[0], 0.3);
  EXPECT_EQ(s.class_signal[1], 0.7);
  EXPECT_EQ(s.max_abs_gamma_offdiag, 0.2);
  EXPECT_EQ(s.min_gamma_offdiag, -0.2);
}

TEST(Decomp, OracleAtInitRecoversZero) {
  auto t = oracle::tiny_problem(2, 5, 60, 10, 0.8, Activation::poly(3), 0.1, 1.0, 9);
  auto st = init_decomp(t.net, t.data);
  auto rep = projection_oracle(t.net, st, t.data, {{0, 0}, {1, 4}});
  EXPECT_FALSE(rep.non_unique);
  for (auto& nr : rep.neurons) {
    for (double g : nr.recovered_gamma) EXPECT_EQ(g, 0.0);
    for (double c : nr.recovered_noise) EXPECT_EQ(c, 0.0);
  }
  EXPECT_EQ(rep.agreement_rate(), 1.0);
}

TEST(Decomp, OracleMatchesTrackedAfter100Steps) {
  auto t = oracle::tiny_problem(3, 10, 200, 20, 0.6, Activation::poly(3), 0.1, 0.3, 10);
  auto st = init_decomp(t.net, t.data);
  for (int s = 0; s < 100; ++s) step_tracked(t.net, t.data, st, 0.5);
  auto rng = make_stream(10, Stream::monte_carlo);
  auto rep = projection_oracle(t.net, st, t.data, sample_neurons(3, 10, 12, rng));
  EXPECT_FALSE(rep.non_unique);
  EXPECT_GT(rep.comparisons, 0u);
  EXPECT_EQ(rep.agreements, rep.comparisons);
  EXPECT_LE(rep.max_abs_diff, 1e-6);
}

TEST(Decomp, OracleFlagsNonUniqueness) {
  // p d = 0.5 * 20 = 10 <= n + K = 22.
  auto t = oracle::tiny_problem(2, 3, 20, 20, 0.5, Activation::poly(3), 0.1, 1.0, 11);
  auto st = init_decomp(t.net, t.data);
  auto rep = projection_oracle(t.net, st, t.data, {{0, 0}});
  EXPECT_TRUE(rep.non_unique);
}

TEST(Decomp, SampleNeuronsDistinct) {
  auto rng = make_stream(1, Stream::monte_carlo);
  auto picks = sample_neurons(4, 64, 50, rng);
  ASSERT_EQ(picks.size(), 50u);
  std::sort(picks.begin(), picks.end());
  EXPECT_EQ(std::unique(picks.begin(), picks.end()), picks.end());
  for (auto [j, r] : picks) {
    EXPECT_LT(j, 4u);
    EXPECT_LT(r, 64u);
  }
}

TEST(Decomp, BoundsTrivialAtZeroState) {
  auto t = oracle::tiny_problem(2, 3, 100, 4, 0.5, Activation::poly(3), 0.1, 1.0, 12);
  auto st = init_decomp(t.net, t.data);
  BoundsConfig bc;
  bc.p = 0.5;
  bc.sigma_n = 1.0;
  auto rep = coefficient_bounds_check(st, t.data, bc);
  EXPECT_TRUE(rep.upper_ok);
  EXPECT_TRUE(rep.omega_ok);
  EXPECT_TRUE(rep.gamma_offdiag_ok);
  EXPECT_NEAR(rep.alpha, 2.0 * std::pow(std::log(1000.0), 1.0 / 3.0), 1e-12);
}

TEST(Decomp, CoefficientCsvRowsAreUngated) {
  auto hp = hand_problem();
  auto st = init_decomp(hp.net, hp.data);
  update_coefficients(st, forward(hp.net, hp.data), hp.net, 0.5);
  std::ostringstream out;
  write_coefficients_csv(out, st, true);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t,j,r,k_or_i,kind,value");
  std::size_t rows = 0, zeta = 0;
  while (std::getline(in, line)) {
    ++rows;
    zeta += line.find(",zeta,") != std::string::npos;
  }
  // zeta: one (r, i) pair per sample of the neuron's class -> m * n entries overall.
  EXPECT_EQ(zeta, 2u * 2);
  EXPECT_GT(rows, zeta);
}
