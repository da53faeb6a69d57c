#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "pdmorder/order_select.hpp"

using namespace pdmorder;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = g(rng);
  return m;
}

TruncatedPdm random_model(std::mt19937_64& rng, Eigen::Index n, Eigen::Index t) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(rng, n, t));
  std::uniform_real_distribution<double> u(0.05, 2.0);
  Vector lam(t);
  for (auto& v : lam) v = u(rng);
  std::sort(lam.begin(), lam.end(), std::greater<>());
  TruncatedPdm pdm;
  pdm.mean = Vector::Zero(n);
  pdm.basis = qr.householderQ() * Matrix::Identity(n, t);
  pdm.lambdas = lam;
  pdm.order = static_cast<std::size_t>(t);
  pdm.mean_variance = lam.sum() / static_cast<double>(n);
  return pdm;
}

// Columns with zero x- and y-sums, so any combination keeps the centroid at 0.
Matrix centroid_free_basis(std::mt19937_64& rng, Eigen::Index n, Eigen::Index t) {
  Matrix a = random_matrix(rng, n, t);
  for (Eigen::Index k = 0; k < t; ++k) {
    double sx = 0, sy = 0;
    for (Eigen::Index i = 0; i < n / 2; ++i) {
      sx += a(2 * i, k);
      sy += a(2 * i + 1, k);
    }
    for (Eigen::Index i = 0; i < n / 2; ++i) {
      a(2 * i, k) -= sx / static_cast<double>(n / 2);
      a(2 * i + 1, k) -= sy / static_cast<double>(n / 2);
    }
  }
  Eigen::HouseholderQR<Matrix> qr(a);
  return qr.householderQ() * Matrix::Identity(n, t);
}

// Aligned set: centered mean + rank-t signal + optional white noise.
ShapeSet low_rank_set(std::mt19937_64& rng, Eigen::Index n, std::size_t m, const Vector& sd, double noise) {
  const Eigen::Index t = sd.size();
  const Matrix p = centroid_free_basis(rng, n, t + 1);
  const Vector mean = p.col(t) * 3.0;
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix x(n, static_cast<Eigen::Index>(m));
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    Vector b(t);
    for (Eigen::Index k = 0; k < t; ++k) b(k) = sd(k) * g(rng);
    x.col(j) = mean + p.leftCols(t) * b;
    for (Eigen::Index i = 0; i < n; ++i) x(i, j) += noise * g(rng);
  }
  // Noise moves the centroid; re-center every column.
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double sx = 0, sy = 0;
    for (Eigen::Index i = 0; i < n / 2; ++i) {
      sx += x(2 * i, j);
      sy += x(2 * i + 1, j);
    }
    for (Eigen::Index i = 0; i < n / 2; ++i) {
      x(2 * i, j) -= sx / static_cast<double>(n / 2);
      x(2 * i + 1, j) -= sy / static_cast<double>(n / 2);
    }
  }
  return ShapeSet::from_matrix(x, true);
}

// Plain loops over the criterion, independent of aic_score.
double brute_force_score(const RegressionFit& fit, std::size_t t) {
  const auto n = fit.residuals.rows();
  const auto m2 = fit.residuals.cols();
  double logs = 0.0, ratio = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    logs += std::log(fit.sigma_diag(i));
    for (Eigen::Index m = 0; m < m2; ++m) ratio += fit.residuals(i, m) * fit.residuals(i, m) / fit.sigma_diag(i);
  }
  return static_cast<double>(m2) * (logs + 2.0 * static_cast<double>(t)) + ratio;
}

PdmModel spectrum_model(std::initializer_list<double> eig) {
  PdmModel m;
  m.eigvals = Eigen::Map<const Vector>(eig.begin(), static_cast<Eigen::Index>(eig.size()));
  m.mean = Vector::Zero(m.eigvals.size());
  m.eigvecs = Matrix::Identity(m.eigvals.size(), m.eigvals.size());
  return m;
}

}  // namespace

TEST(SplitData, SizesAndDeterminism) {
  std::mt19937_64 rng(1);
  const Vector sd = (Vector(2) << 1.0, 0.5).finished();
  const ShapeSet ten = low_rank_set(rng, 8, 10, sd, 0.01);
  const SplitData s10 = split_data(ten);
  EXPECT_EQ(s10.x1.size(), 5u);
  EXPECT_EQ(s10.x2.size(), 5u);
  const ShapeSet eleven = low_rank_set(rng, 8, 11, sd, 0.01);
  const SplitData s11 = split_data(eleven);
  EXPECT_EQ(s11.x1.size(), 6u);
  EXPECT_EQ(s11.x2.size(), 5u);
  EXPECT_EQ(s11.Y.cols(), 5);
  EXPECT_LT((s11.Y.col(0) - (eleven[6].coords() - s11.x1.mean_coords())).norm(), 1e-15);

  const ShapeSet hundred = low_rank_set(rng, 8, 100, sd, 0.01);
  const SplitPolicy shuffled{SplitKind::shuffled, 7};
  const SplitData a = split_data(hundred, shuffled);
  const SplitData b = split_data(hundred, shuffled);
  EXPECT_EQ(a.Y, b.Y);
  EXPECT_NE(a.Y, split_data(hundred).Y);
}

TEST(SplitData, TooFewSamples) {
  std::mt19937_64 rng(2);
  const ShapeSet three = low_rank_set(rng, 8, 3, Vector::Ones(1), 0.01);
  try {
    split_data(three);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::too_few_samples);
  }
}

TEST(AicScore, HandArithmetic) {
  RegressionFit fit;
  fit.sigma_diag = (Vector(4) << 1, 1, 2, 4).finished();
  fit.residuals = Matrix::Zero(4, 3);
  fit.residuals(0, 0) = 1;                       // row sum 1
  fit.residuals(1, 0) = 1, fit.residuals(1, 1) = 1;  // 2
  fit.residuals(2, 0) = 1, fit.residuals(2, 2) = 1;  // 2
  fit.residuals(3, 0) = 2, fit.residuals(3, 1) = 2;  // 8
  const double expected = 3.0 * (3.0 * std::log(2.0) + 4.0) + 6.0;
  EXPECT_NEAR(aic_score(fit, 2, 3, 4), expected, 1e-12);
}

TEST(AicScore, ZeroAndPenaltySlope) {
  RegressionFit fit;
  fit.sigma_diag = Vector::Ones(5);
  fit.residuals = Matrix::Zero(5, 7);
  EXPECT_EQ(aic_score(fit, 0, 7, 5), 0.0);
  EXPECT_NEAR(aic_score(fit, 4, 7, 5) - aic_score(fit, 2, 7, 5), 2.0 * 2.0 * 7.0, 1e-12);
}

TEST(VarianceRule, Examples) {
  EXPECT_EQ(select_order_variance(spectrum_model({9, 1}), 0.95), 2u);
  EXPECT_EQ(select_order_variance(spectrum_model({19, 1}), 0.95), 1u);
  EXPECT_EQ(select_order_variance(spectrum_model({5, 3, 1, 1}), 0.8), 2u);
  try {
    select_order_variance(spectrum_model({0, 0}), 0.95);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::zero_variance);
  }
}

TEST(AlternatingMl, NoiselessFitConvergesImmediately) {
  std::mt19937_64 rng(3);
  const TruncatedPdm pdm = random_model(rng, 10, 3);
  Matrix B = random_matrix(rng, 3, 20, 0.2);
  for (Eigen::Index m = 0; m < B.cols(); ++m) B.col(m) = clamp_to_box(B.col(m), pdm.lambdas);
  const RegressionFit fit = alternating_ml(pdm.basis * B, pdm);
  EXPECT_TRUE(fit.converged);
  EXPECT_LE(fit.iterations, 2u);
  EXPECT_LT(fit.residuals.cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_TRUE((fit.sigma_diag.array() == noise_floor(pdm)).all());
}

TEST(AlternatingMl, PureNoiseVarianceEstimate) {
  std::mt19937_64 rng(4);
  // One spread-out mode with a large box: the fit may use it freely, yet it
  // can only explain a 1/N share of each row's variance.
  const Eigen::Index n = 40;
  TruncatedPdm pdm;
  pdm.mean = Vector::Zero(n);
  pdm.basis = Matrix::Constant(n, 1, 1.0 / std::sqrt(static_cast<double>(n)));
  for (Eigen::Index i = 1; i < n; i += 2) pdm.basis(i, 0) *= -1.0;
  pdm.lambdas = Vector::Constant(1, 100.0);
  pdm.order = 1;
  pdm.mean_variance = 100.0 / static_cast<double>(n);
  Matrix Y = random_matrix(rng, n, 80);
  for (Eigen::Index i = 0; i < n; ++i) Y.row(i) *= 0.5 + 0.05 * static_cast<double>(i);
  const RegressionFit fit = alternating_ml(Y, pdm);
  EXPECT_LT(std::sqrt(fit.B.squaredNorm() / 80.0), 0.25 * std::sqrt(pdm.lambdas(0)));
  for (Eigen::Index i = 0; i < n; ++i) {
    const double row_var = Y.row(i).squaredNorm() / 80.0;
    EXPECT_NEAR(fit.sigma_diag(i), row_var, 0.2 * row_var);
  }
}

// Oracle: alternate a 1e-3 grid search over the column scaling s (inside the
// box) with exact diagonal variance updates.
TEST(AlternatingMl, NoWorseThanScalingGridOracle) {
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    TruncatedPdm pdm = random_model(rng, 6, 2);
    pdm.lambdas *= 0.3;
    Matrix Y = pdm.basis * random_matrix(rng, 2, 8) + random_matrix(rng, 6, 8, 0.3);
    for (Eigen::Index i = 0; i < 6; ++i) Y.row(i) *= 0.5 + 0.3 * static_cast<double>(i);

    Vector sigma = Vector::Ones(6);
    Matrix B(2, 8);
    double f = 0.0;
    for (int it = 0; it < 200; ++it) {
      const Vector w = sigma.cwiseInverse();
      const Matrix gls = (pdm.basis.transpose() * w.asDiagonal() * pdm.basis)
                             .ldlt()
                             .solve(pdm.basis.transpose() * w.asDiagonal() * Y);
      for (Eigen::Index m = 0; m < 8; ++m) {
        double best = 1e300;
        for (int k = 0; k <= 1000; ++k) {
          const Vector cand = (k * 1e-3) * gls.col(m);
          if (!((cand.array().abs() <= pdm.lambdas.array().sqrt()).all())) break;
          const double v = (Y.col(m) - pdm.basis * cand).cwiseAbs2().dot(w);
          if (v < best) {
            best = v;
            B.col(m) = cand;
          }
        }
      }
      const Matrix E = Y - pdm.basis * B;
      sigma = (E.rowwise().squaredNorm() / 8.0).cwiseMax(noise_floor(pdm));
      const double next = diagonal_objective(E, sigma);
      if (it > 0 && std::abs(next - f) < 1e-12 * std::abs(f)) break;
      f = next;
    }
    // The oracle walks the scaling path, which is what uniform clamping follows.
    AlternatingOptions opts;
    opts.clamp = ClampMode::uniform_scale;
    opts.tol = 1e-12;
    opts.max_iter = 500;
    const RegressionFit fit = alternating_ml(Y, pdm, opts);
    EXPECT_LE(fit.objective_trace.back(), f + 1e-3 * std::abs(f) + 1e-3) << "rep " << rep;
  }
}

TEST(AlternatingMl, ObjectiveNeverIncreases) {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> nd(2, 20), td(1, 8), md(2, 60);
  int checked = 0;
  for (int rep = 0; rep < 150; ++rep) {
    const Eigen::Index n = 2 * nd(rng);
    const Eigen::Index t = std::min<Eigen::Index>(td(rng), n);
    const Eigen::Index m2 = md(rng);
    TruncatedPdm pdm = random_model(rng, n, t);
    pdm.lambdas *= 0.2;
    Matrix Y = pdm.basis * random_matrix(rng, t, m2) + random_matrix(rng, n, m2, 0.2);
    for (Eigen::Index i = 0; i < n; ++i) Y.row(i) *= 0.3 + static_cast<double>(i % 5);
    const ClampMode mode = rep % 2 ? ClampMode::per_coordinate : ClampMode::uniform_scale;
    RegressionFit fit;
    try {
      fit = alternating_ml(Y, pdm, {1e-10, 200, mode});
    } catch (const Error& e) {
      ASSERT_TRUE(e.is_numerical()) << e.what();
      continue;
    }
    ++checked;
    for (std::size_t k = 1; k < fit.objective_trace.size(); ++k) {
      const double prev = fit.objective_trace[k - 1];
      EXPECT_LE(fit.objective_trace[k], prev + 1e-9 * std::max(1.0, std::abs(prev))) << "instance " << rep;
    }
  }
  EXPECT_GE(checked, 100);
}

TEST(SelectOrderProposed, ScoresMatchBruteForce) {
  std::mt19937_64 rng(7);
  const ShapeSet set = low_rank_set(rng, 12, 40, (Vector(3) << 1.0, 0.6, 0.4).finished(), 0.02);
  SelectOptions opts;
  opts.keep_fits = true;
  const auto result = select_order_proposed(set, opts);
  ASSERT_TRUE(result.per_order_fits);
  std::size_t best_t = 0;
  double best = 1e300;
  for (const auto& [t, fit] : *result.per_order_fits) {
    const double s = brute_force_score(fit, t);
    EXPECT_NEAR(result.scores.at(t), s, 1e-9 * std::abs(s));
    if (s < best) best = s, best_t = t;
  }
  EXPECT_EQ(result.t_star, best_t);
  EXPECT_EQ(result.t_star, 3u);
}

TEST(SelectOrderProposed, NoiselessRankThree) {
  std::mt19937_64 rng(8);
  const ShapeSet set = low_rank_set(rng, 16, 40, (Vector(3) << 1.0, 0.7, 0.5).finished(), 0.0);
  SelectOptions opts;
  opts.t_max = 6;
  const auto result = select_order_proposed(set, opts);
  EXPECT_EQ(result.t_star, 3u);
  for (const auto& [t, score] : result.scores) {
    if (t != 3) {
      EXPECT_GT(score, result.scores.at(3));
    }
  }
}

TEST(SelectOrderProposed, ScaleEquivariant) {
  std::mt19937_64 rng(9);
  const ShapeSet set = low_rank_set(rng, 12, 30, (Vector(4) << 1.0, 0.6, 0.4, 0.3).finished(), 0.05);
  const double c = 37.0;
  const ShapeSet scaled = ShapeSet::from_matrix(set.as_matrix() * c, true);
  const auto a = select_order_proposed(set);
  const auto b = select_order_proposed(scaled);
  EXPECT_EQ(a.t_star, b.t_star);
  const auto m2 = static_cast<double>(set.size() / 2);
  const double shift = m2 * 12.0 * 2.0 * std::log(c);
  for (const auto& [t, score] : a.scores) EXPECT_NEAR(b.scores.at(t) - score, shift, 1e-6 * std::abs(shift)) << t;
}

TEST(SelectOrderProposed, ThreadCountDoesNotChangeScores) {
  std::mt19937_64 rng(10);
  const ShapeSet set = low_rank_set(rng, 14, 40, (Vector(3) << 1.0, 0.6, 0.4).finished(), 0.05);
  SelectOptions one, four;
  four.threads = 4;
  const auto a = select_order_proposed(set, one);
  const auto b = select_order_proposed(set, four);
  EXPECT_EQ(a.scores, b.scores);
  EXPECT_EQ(a.t_star, b.t_star);
}

TEST(SelectOrderProposed, UnalignedInputRejected) {
  std::vector<Shape> shapes;
  for (int m = 0; m < 6; ++m) shapes.emplace_back(Vector::LinSpaced(6, m, m + 5.0));
  try {
    select_order_proposed(ShapeSet(shapes));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::not_aligned);
  }
}

TEST(ArgminOrder, TiesGoToSmallestOrder) {
  EXPECT_EQ(argmin_order({{1, 5.0}, {2, 3.0}, {3, 3.0}}), 2u);
}
