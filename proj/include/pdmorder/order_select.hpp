#pragma once

// Model-order selection for point distribution models under diagonal
// (colored) noise.
//
// The training set is split in two. The model (mean, modes, eigenvalues) is
// fitted on the first half; the second half, with the mean removed, is
// regressed onto the first t modes with box-constrained coefficients and a
// per-coordinate noise variance, estimated by alternating maximization. The
// order minimizing the AIC-penalized negative log-likelihood wins.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pdmorder/error.hpp"
#include "pdmorder/parallel.hpp"
#include "pdmorder/pdm.hpp"
#include "pdmorder/shapes.hpp"

namespace pdmorder {

enum class SplitKind { first_half, shuffled };

struct SplitPolicy {
  SplitKind kind = SplitKind::first_half;
  std::uint64_t seed = 0;
};

/// Which half's sample mean is removed from the regression targets.
enum class MeanSource { x1, x2 };

struct SplitData {
  ShapeSet x1;
  ShapeSet x2;
  Matrix Y;  // N x M2
};

/// Deterministic permutation of 0..n-1. Fisher-Yates over mt19937_64 with a
/// plain modulo draw keeps the sequence identical across standard libraries.
inline std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng() % i);
    std::swap(idx[i - 1], idx[j]);
  }
  return idx;
}

/// Splits into M1 = ceil(M/2) and M2 = floor(M/2) samples.
inline SplitData split_data(const ShapeSet& set, SplitPolicy policy = {}, MeanSource mean_source = MeanSource::x1) {
  if (!set.aligned()) throw Error(ErrorKind::not_aligned, "split_data requires an aligned shape set");
  const auto m = set.size();
  if (m < 4) throw Error(ErrorKind::too_few_samples, "order selection needs at least 4 samples, got " + std::to_string(m));
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (policy.kind == SplitKind::shuffled) order = seeded_permutation(m, policy.seed);
  const auto m1 = (m + 1) / 2;
  std::vector<std::size_t> first(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m1));
  std::vector<std::size_t> second(order.begin() + static_cast<std::ptrdiff_t>(m1), order.end());
  SplitData out{set.subset(first), set.subset(second), Matrix()};
  const Vector mu = mean_source == MeanSource::x1 ? out.x1.mean_coords() : out.x2.mean_coords();
  out.Y = out.x2.as_matrix().colwise() - mu;
  return out;
}

struct AlternatingOptions {
  double tol = 1e-8;
  std::size_t max_iter = 100;
  ClampMode clamp = ClampMode::per_coordinate;
};

struct RegressionFit {
  Matrix B;             // t x M2, columns inside the box
  Vector sigma_diag;    // length N, >= noise floor
  Matrix residuals;     // Y - P_t B
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<double> objective_trace;
};

/// M2 * sum_i log s_i + sum_{i,m} e_{im}^2 / s_i: twice the negative
/// log-likelihood under diagonal Gaussian noise, constants dropped.
inline double diagonal_objective(const Matrix& residuals, const Vector& sigma_diag) {
  const auto m2 = static_cast<double>(residuals.cols());
  const Vector row_ss = residuals.rowwise().squaredNorm();
  return m2 * sigma_diag.array().log().sum() + (row_ss.array() / sigma_diag.array()).sum();
}

/// Alternating ML estimation of box-constrained coefficients and diagonal
/// noise variances, starting from unit variances.
///
/// The coefficient step takes the scaled GLS solution per column but keeps
/// the previous column when that one has the smaller weighted residual, so
/// the objective never increases.
inline RegressionFit alternating_ml(const Matrix& Y, const TruncatedPdm& pdm, const AlternatingOptions& opts = {}) {
  if (Y.rows() != pdm.dim()) throw Error(ErrorKind::dimension_mismatch, "alternating_ml: Y rows differ from model dimension");
  if (Y.cols() < 2) throw Error(ErrorKind::too_few_samples, "alternating_ml needs M2 >= 2");
  const double floor = noise_floor(pdm);
  const auto m2 = static_cast<double>(Y.cols());

  RegressionFit fit;
  fit.sigma_diag = Vector::Ones(Y.rows());
  double previous = 0.0;
  for (std::size_t iter = 1; iter <= opts.max_iter; ++iter) {
    Matrix B = project_constrained(pdm, Y, fit.sigma_diag, opts.clamp);
    Matrix E = Y - pdm.basis * B;
    if (iter > 1) {
      const Vector w = fit.sigma_diag.cwiseInverse();
      for (Eigen::Index m = 0; m < B.cols(); ++m) {
        const double cand = E.col(m).cwiseAbs2().dot(w);
        const double prev = fit.residuals.col(m).cwiseAbs2().dot(w);
        if (prev < cand) {
          B.col(m) = fit.B.col(m);
          E.col(m) = fit.residuals.col(m);
        }
      }
    }
    fit.B = std::move(B);
    fit.residuals = std::move(E);
    fit.sigma_diag = (fit.residuals.rowwise().squaredNorm() / m2).cwiseMax(floor);
    const double objective = diagonal_objective(fit.residuals, fit.sigma_diag);
    fit.objective_trace.push_back(objective);
    fit.iterations = iter;
    if (iter > 1 && std::abs(previous - objective) <= opts.tol * std::abs(previous)) {
      fit.converged = true;
      break;
    }
    previous = objective;
  }
  return fit;
}

/// AIC criterion M2 * (sum_i log s_i + 2t) + sum_{i,m} e_{im}^2 / s_i. The
/// order-independent constant N of the penalty is omitted, so values are
/// comparable only within one configuration.
inline double aic_score(const RegressionFit& fit, std::size_t t, std::size_t m2, Eigen::Index n) {
  if (fit.sigma_diag.size() != n || fit.residuals.rows() != n ||
      fit.residuals.cols() != static_cast<Eigen::Index>(m2)) {
    throw Error(ErrorKind::dimension_mismatch, "aic_score: fit dimensions disagree with N, M2");
  }
  const double md = static_cast<double>(m2);
  return md * (fit.sigma_diag.array().log().sum() + 2.0 * static_cast<double>(t)) +
         (fit.residuals.rowwise().squaredNorm().array() / fit.sigma_diag.array()).sum();
}

enum class SelectionMethod { proposed_aic, variance_threshold };

struct OrderDiagnostics {
  std::size_t iterations = 0;
  bool converged = false;
  bool underdetermined = false;  // M2 <= t
};

struct OrderSelectionResult {
  SelectionMethod method = SelectionMethod::proposed_aic;
  std::size_t t_star = 0;
  std::map<std::size_t, double> scores;
  std::map<std::size_t, OrderDiagnostics> diagnostics;
  std::map<std::size_t, std::string> failed_orders;
  std::optional<std::map<std::size_t, RegressionFit>> per_order_fits;
};

/// Smallest order attaining the minimum score.
inline std::size_t argmin_order(const std::map<std::size_t, double>& scores) {
  if (scores.empty()) throw Error(ErrorKind::order_out_of_range, "no order could be scored");
  auto best = scores.begin();
  for (auto it = scores.begin(); it != scores.end(); ++it) {
    if (it->second < best->second) best = it;
  }
  return best->first;
}

struct SelectOptions {
  std::optional<std::size_t> t_max;  // automatic when empty
  SplitPolicy split;
  MeanSource mean_source = MeanSource::x1;
  AlternatingOptions fit;
  bool keep_fits = false;
  std::size_t threads = 1;
};

/// Largest order searched when the caller gives none.
inline std::size_t auto_t_max(const PdmModel& model) {
  const auto m1 = model.n_train;
  return std::min({model.positive_rank(), m1 - 1, static_cast<std::size_t>(model.dim())});
}

inline OrderSelectionResult select_order_proposed(const ShapeSet& set, const SelectOptions& opts = {}) {
  const SplitData split = split_data(set, opts.split, opts.mean_source);
  const PdmModel model = fit_pdm(split.x1);
  const auto rank = model.positive_rank();
  std::size_t t_max = opts.t_max.value_or(auto_t_max(model));
  t_max = std::min(t_max, rank);
  if (t_max < 1) throw Error(ErrorKind::zero_variance, "training half has no positive-variance modes");

  const auto m2 = static_cast<std::size_t>(split.Y.cols());
  struct Slot {
    std::optional<RegressionFit> fit;
    double score = 0.0;
    std::string error;
  };
  std::vector<Slot> slots(t_max);
  parallel_for(t_max, resolve_threads(opts.threads), [&](std::size_t k) {
    const std::size_t t = k + 1;
    try {
      RegressionFit fit = alternating_ml(split.Y, truncate(model, t), opts.fit);
      slots[k].score = aic_score(fit, t, m2, split.Y.rows());
      slots[k].fit = std::move(fit);
    } catch (const Error& e) {
      slots[k].error = e.what();
    }
  });

  OrderSelectionResult result;
  result.method = SelectionMethod::proposed_aic;
  if (opts.keep_fits) result.per_order_fits.emplace();
  for (std::size_t k = 0; k < t_max; ++k) {
    const std::size_t t = k + 1;
    if (!slots[k].fit) {
      result.failed_orders[t] = slots[k].error;
      continue;
    }
    result.scores[t] = slots[k].score;
    result.diagnostics[t] = {slots[k].fit->iterations, slots[k].fit->converged, m2 <= t};
    if (opts.keep_fits) result.per_order_fits->emplace(t, std::move(*slots[k].fit));
  }
  result.t_star = argmin_order(result.scores);
  return result;
}

/// Smallest t whose leading eigenvalues explain at least `fraction` of the
/// total variance. A 1e-12 slack absorbs rounding in the cumulative sum.
inline std::size_t select_order_variance(const PdmModel& model, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw Error(ErrorKind::invalid_argument, "fraction must lie in (0, 1)");
  const double total = model.eigvals.sum();
  if (!(total > 0.0)) throw Error(ErrorKind::zero_variance, "all eigenvalues are zero");
  double cumulative = 0.0;
  for (Eigen::Index i = 0; i < model.eigvals.size(); ++i) {
    cumulative += model.eigvals(i);
    if (cumulative / total >= fraction - 1e-12) return static_cast<std::size_t>(i + 1);
  }
  return static_cast<std::size_t>(model.eigvals.size());
}

}  // namespace pdmorder
