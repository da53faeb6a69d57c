#pragma once

// Experiment harnesses: Monte Carlo order recovery on synthetic data,
// order-vs-sample-count sweeps on ingested data, and the leave-one-out LMMSE
// landmark-occlusion error as a function of model order.

#include <Eigen/Dense>

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pdmorder/error.hpp"
#include "pdmorder/numfmt.hpp"
#include "pdmorder/order_select.hpp"
#include "pdmorder/parallel.hpp"
#include "pdmorder/pdm.hpp"
#include "pdmorder/shapes.hpp"
#include "pdmorder/simgen.hpp"

namespace pdmorder {

struct SelectorSpec {
  SelectionMethod method = SelectionMethod::proposed_aic;
  double fraction = 0.95;  // variance threshold only
  SelectOptions options;   // proposed only

  std::string name() const { return method == SelectionMethod::proposed_aic ? "proposed" : "variance"; }
};

/// Runs one selector on an aligned set.
inline std::size_t run_selector(const ShapeSet& set, const SelectorSpec& spec) {
  if (spec.method == SelectionMethod::proposed_aic) return select_order_proposed(set, spec.options).t_star;
  return select_order_variance(fit_pdm(set), spec.fraction);
}

inline std::vector<SelectorSpec> default_selectors() {
  return {SelectorSpec{SelectionMethod::proposed_aic, 0.95, {}}, SelectorSpec{SelectionMethod::variance_threshold, 0.95, {}}};
}

/// splitmix64 finalizer; derives independent seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a, std::uint64_t b) {
  return mix_seed(mix_seed(mix_seed(master) ^ a) ^ b);
}

struct CellSummary {
  std::string method;
  std::size_t samples = 0;  // M
  double mean_t = 0.0;
  double var_t = 0.0;  // population variance over successful trials
  std::map<std::size_t, std::size_t> hist;
  std::size_t trials = 0;
  std::size_t failures = 0;
  std::vector<std::string> failure_messages;
};

struct TrialSummary {
  std::vector<CellSummary> cells;  // ordered by (M, method)

  const CellSummary& cell(const std::string& method, std::size_t samples) const {
    for (const auto& c : cells) {
      if (c.method == method && c.samples == samples) return c;
    }
    throw Error(ErrorKind::invalid_argument, "no cell for method " + method + ", M=" + std::to_string(samples));
  }

  std::size_t total_failures() const {
    std::size_t n = 0;
    for (const auto& c : cells) n += c.failures;
    return n;
  }
};

namespace detail {

/// Tabulates selected orders (0 marks a failed trial).
inline CellSummary summarize(std::string method, std::size_t samples, const std::vector<std::size_t>& picks,
                             std::vector<std::string> errors) {
  CellSummary cell;
  cell.method = std::move(method);
  cell.samples = samples;
  cell.trials = picks.size();
  double sum = 0.0;
  std::size_t ok = 0;
  for (auto t : picks) {
    if (t == 0) {
      ++cell.failures;
      continue;
    }
    ++cell.hist[t];
    sum += static_cast<double>(t);
    ++ok;
  }
  if (ok > 0) {
    cell.mean_t = sum / static_cast<double>(ok);
    double ss = 0.0;
    for (const auto& [t, count] : cell.hist) {
      const double d = static_cast<double>(t) - cell.mean_t;
      ss += static_cast<double>(count) * d * d;
    }
    cell.var_t = ss / static_cast<double>(ok);
  }
  for (auto& e : errors) {
    if (!e.empty()) cell.failure_messages.push_back(std::move(e));
  }
  return cell;
}

}  // namespace detail

struct McConfig {
  SeedPdm seed_pdm;
  std::size_t true_t = 10;
  double beta_db = 20.0;
  std::vector<std::size_t> sample_counts;
  std::size_t trials = 100;
  std::uint64_t rng_seed = 1;
  std::vector<SelectorSpec> methods = default_selectors();
  SimConfig sim;  // transforms, realignment, b distribution; samples/beta/seed are overridden
  std::size_t threads = 0;
};

/// Every selector sees the same simulated data within a (M, trial) cell.
inline TrialSummary monte_carlo_order(const McConfig& cfg) {
  if (cfg.trials < 1) throw Error(ErrorKind::invalid_argument, "trials must be >= 1");
  if (cfg.seed_pdm.underlying.order != cfg.true_t) {
    throw Error(ErrorKind::invalid_argument, "seed model order differs from true_t");
  }
  for (auto m : cfg.sample_counts) {
    if (m < 4) throw Error(ErrorKind::too_few_samples, "sample counts must be >= 4");
  }
  const auto n_methods = cfg.methods.size();
  const auto threads = resolve_threads(cfg.threads);

  TrialSummary summary;
  for (auto m_count : cfg.sample_counts) {
    std::vector<std::vector<std::size_t>> picks(n_methods, std::vector<std::size_t>(cfg.trials, 0));
    std::vector<std::vector<std::string>> errors(n_methods, std::vector<std::string>(cfg.trials));
    parallel_for(cfg.trials, threads, [&](std::size_t trial) {
      SimConfig sim = cfg.sim;
      sim.samples = m_count;
      sim.beta_db = cfg.beta_db;
      sim.rng_seed = derive_seed(cfg.rng_seed, m_count, trial);
      std::optional<ShapeSet> data;
      try {
        data = sample_shapes(cfg.seed_pdm, sim);
      } catch (const Error& e) {
        for (std::size_t k = 0; k < n_methods; ++k) errors[k][trial] = "trial " + std::to_string(trial) + ": " + e.what();
        return;
      }
      for (std::size_t k = 0; k < n_methods; ++k) {
        try {
          picks[k][trial] = run_selector(*data, cfg.methods[k]);
        } catch (const Error& e) {
          errors[k][trial] = "trial " + std::to_string(trial) + ": " + e.what();
        }
      }
    });
    for (std::size_t k = 0; k < n_methods; ++k) {
      summary.cells.push_back(detail::summarize(cfg.methods[k].name(), m_count, picks[k], std::move(errors[k])));
    }
  }
  return summary;
}

enum class SubsetMode { random, prefix };

/// Sample indices used by order_sweep for one (M, trial); ascending order.
inline std::vector<std::size_t> sweep_subset(std::size_t set_size, std::size_t m_count, std::size_t trial,
                                             std::uint64_t rng_seed, SubsetMode mode) {
  std::vector<std::size_t> idx;
  if (mode == SubsetMode::prefix || m_count == set_size) {
    idx.resize(m_count);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
  }
  idx = seeded_permutation(set_size, derive_seed(rng_seed, m_count, trial));
  idx.resize(m_count);
  std::sort(idx.begin(), idx.end());
  return idx;
}

struct SweepOptions {
  SubsetMode mode = SubsetMode::random;
  std::vector<SelectorSpec> methods = default_selectors();
  std::size_t threads = 0;
};

/// Order selection on subsets of an aligned set, `trials` subsets per size.
inline TrialSummary order_sweep(const ShapeSet& set, const std::vector<std::size_t>& sample_counts, std::size_t trials,
                                std::uint64_t rng_seed, const SweepOptions& opts = {}) {
  if (!set.aligned()) throw Error(ErrorKind::not_aligned, "order_sweep requires an aligned shape set");
  if (trials < 1) throw Error(ErrorKind::invalid_argument, "trials must be >= 1");
  for (auto m : sample_counts) {
    if (m > set.size()) {
      throw Error(ErrorKind::too_few_samples, "sample count " + std::to_string(m) + " exceeds the " +
                                                  std::to_string(set.size()) + " available shapes");
    }
    if (m < 4) throw Error(ErrorKind::too_few_samples, "sample counts must be >= 4");
  }
  const auto n_methods = opts.methods.size();
  TrialSummary summary;
  for (auto m_count : sample_counts) {
    std::vector<std::vector<std::size_t>> picks(n_methods, std::vector<std::size_t>(trials, 0));
    std::vector<std::vector<std::string>> errors(n_methods, std::vector<std::string>(trials));
    parallel_for(trials, resolve_threads(opts.threads), [&](std::size_t trial) {
      const ShapeSet subset = set.subset(sweep_subset(set.size(), m_count, trial, rng_seed, opts.mode));
      for (std::size_t k = 0; k < n_methods; ++k) {
        try {
          picks[k][trial] = run_selector(subset, opts.methods[k]);
        } catch (const Error& e) {
          errors[k][trial] = "trial " + std::to_string(trial) + ": " + e.what();
        }
      }
    });
    for (std::size_t k = 0; k < n_methods; ++k) {
      summary.cells.push_back(detail::summarize(opts.methods[k].name(), m_count, picks[k], std::move(errors[k])));
    }
  }
  return summary;
}

/// method,M,mean_t,var_t
inline void write_summary_csv(std::ostream& os, const TrialSummary& summary) {
  os << "method,M,mean_t,var_t\n";
  for (const auto& c : summary.cells) {
    os << c.method << ',' << c.samples << ',' << format_double(c.mean_t) << ',' << format_double(c.var_t) << '\n';
  }
}

/// method,M,t,count
inline void write_histogram_csv(std::ostream& os, const TrialSummary& summary) {
  os << "method,M,t,count\n";
  for (const auto& c : summary.cells) {
    for (const auto& [t, count] : c.hist) os << c.method << ',' << c.samples << ',' << t << ',' << count << '\n';
  }
}

// ---------------------------------------------------------------------------
// LMMSE landmark occlusion

enum class LmmseSolver { ridge, pseudo_inverse };

/// Relative ridge added to the available-landmark covariance.
inline constexpr double kLmmseRidge = 1e-10;

namespace detail {

/// Rows of the missing landmark and of the remaining coordinates.
inline std::vector<Eigen::Index> available_rows(Eigen::Index n, Eigen::Index missing) {
  std::vector<Eigen::Index> rows;
  rows.reserve(static_cast<std::size_t>(n - 2));
  for (Eigen::Index r = 0; r < n; ++r) {
    if (r / 2 != missing) rows.push_back(r);
  }
  return rows;
}

/// LMMSE prediction from a covariance factor R = P diag(lambdas) P'.
/// The ridge path works in the t-dimensional mode space:
///   R_ia (R_aa + rho I)^{-1} y_a = P_i L (L P_a' P_a L + rho I)^{-1} L P_a' y_a
/// with L = diag(sqrt(lambdas)).
inline Eigen::Vector2d lmmse_predict(const Matrix& basis, const Vector& lambdas, const Vector& y_available,
                                     Eigen::Index missing, LmmseSolver solver) {
  const auto n = basis.rows();
  const auto rows = available_rows(n, missing);
  Matrix pa(static_cast<Eigen::Index>(rows.size()), basis.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) pa.row(static_cast<Eigen::Index>(r)) = basis.row(rows[r]);
  const Matrix pi = basis.middleRows(2 * missing, 2);

  if (solver == LmmseSolver::pseudo_inverse) {
    const Matrix raa = pa * lambdas.asDiagonal() * pa.transpose();
    const Matrix ria = pi * lambdas.asDiagonal() * pa.transpose();
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(raa);
    return ria * cod.solve(y_available);
  }

  const Vector l = lambdas.cwiseSqrt();
  const Matrix a = pa * l.asDiagonal();  // (N-2) x t, R_aa = a a'
  const double trace_aa = a.squaredNorm();
  if (!(trace_aa > 0.0)) return Eigen::Vector2d::Zero();
  const double rho = kLmmseRidge * trace_aa / static_cast<double>(n - 2);
  if (a.cols() > a.rows()) {
    // More modes than available coordinates: a'a is singular, solve directly.
    Matrix raa = a * a.transpose();
    raa.diagonal().array() += rho;
    return pi * (l.asDiagonal() * (a.transpose() * raa.llt().solve(y_available)));
  }
  Matrix gram = a.transpose() * a;
  gram.diagonal().array() += rho;
  const Vector coef = gram.llt().solve(a.transpose() * y_available);
  return pi * (l.asDiagonal() * coef);
}

}  // namespace detail

/// Estimates the (x, y) of landmark `missing` from the other landmarks of a
/// mean-removed shape. `y_available` holds the N-2 remaining coordinates in
/// their original order.
inline Eigen::Vector2d lmmse_estimate_landmark(const TruncatedPdm& pdm, const Vector& y_available, Eigen::Index missing,
                                               LmmseSolver solver = LmmseSolver::ridge) {
  const auto n = pdm.dim();
  if (missing < 0 || missing >= n / 2) throw Error(ErrorKind::invalid_argument, "missing landmark index out of range");
  if (y_available.size() != n - 2) throw Error(ErrorKind::dimension_mismatch, "y_available must have N-2 entries");
  return detail::lmmse_predict(pdm.basis, pdm.lambdas, y_available, missing, solver);
}

struct LmmseResult {
  std::map<std::size_t, double> errors;  // t -> e_LMMSE(t)
  std::size_t argmin_t = 0;
  std::map<std::string, std::size_t> selected_orders;
};

struct LmmseOptions {
  LmmseSolver solver = LmmseSolver::ridge;
  std::vector<SelectorSpec> selectors = default_selectors();
  GpaOptions gpa;  // used only when the input is unaligned
  std::size_t threads = 0;
};

/// Leave-one-out occlusion error: for every held-out shape and landmark,
/// predict the landmark from the others with a model of order t fitted on the
/// remaining M-1 shapes; average the squared error over shapes and landmarks.
inline LmmseResult lmmse_curve(const ShapeSet& input, const LmmseOptions& opts = {}) {
  if (input.size() < 3) throw Error(ErrorKind::too_few_samples, "lmmse_curve needs at least 3 shapes");
  const ShapeSet set = input.aligned() ? input : generalized_procrustes(input, opts.gpa);
  const Matrix x = set.as_matrix();
  const auto n = x.rows();
  const auto m_count = static_cast<std::size_t>(x.cols());
  const auto n_landmarks = n / 2;

  std::vector<PdmModel> folds(m_count);
  parallel_for(m_count, resolve_threads(opts.threads), [&](std::size_t m) {
    Matrix rest(n, x.cols() - 1);
    for (Eigen::Index c = 0, k = 0; c < x.cols(); ++c) {
      if (c != static_cast<Eigen::Index>(m)) rest.col(k++) = x.col(c);
    }
    folds[m] = fit_pdm(rest);
  });

  // At t equal to the full rank of the aligned data the model spans the whole
  // constrained shape subspace; the centering constraint then reconstructs the
  // missing landmark exactly, so the top order is left out.
  std::size_t t_max = std::min<std::size_t>(static_cast<std::size_t>(n), m_count - 2);
  std::size_t min_rank = t_max + 1;
  for (const auto& f : folds) min_rank = std::min(min_rank, f.positive_rank());
  if (min_rank >= 2) t_max = std::min(t_max, min_rank - 1);
  if (t_max < 1) throw Error(ErrorKind::too_few_samples, "no model order available");
  const auto tm = static_cast<Eigen::Index>(t_max);

  // err[m][t-1] accumulated per fold, summed in index order afterwards.
  std::vector<std::vector<double>> err(m_count, std::vector<double>(t_max, 0.0));
  parallel_for(m_count, resolve_threads(opts.threads), [&](std::size_t m) {
    const auto& model = folds[m];
    const Vector y = x.col(static_cast<Eigen::Index>(m)) - model.mean;
    const Matrix p = model.eigvecs.leftCols(tm);
    const Vector lambdas = model.eigvals.head(tm);
    const Vector l = lambdas.cwiseSqrt();
    const Vector proj = p.transpose() * y;
    for (Eigen::Index i = 0; i < n_landmarks; ++i) {
      const Eigen::Vector2d truth = y.segment(2 * i, 2);
      const Matrix pi = p.middleRows(2 * i, 2);
      if (opts.solver == LmmseSolver::pseudo_inverse) {
        const auto rows = detail::available_rows(n, i);
        Vector ya(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t r = 0; r < rows.size(); ++r) ya(static_cast<Eigen::Index>(r)) = y(rows[r]);
        for (Eigen::Index t = 1; t <= tm; ++t) {
          const Eigen::Vector2d pred = detail::lmmse_predict(p.leftCols(t), lambdas.head(t), ya, i, opts.solver);
          err[m][static_cast<std::size_t>(t - 1)] += (pred - truth).squaredNorm();
        }
        continue;
      }
      // Mode-space quantities for A = P_a L, using P_a' P_a = I - P_i' P_i:
      //   A'A = L (I - P_i' P_i) L,  A' y_a = L (P' y - P_i' y_i).
      const Matrix li = pi * l.asDiagonal();
      Matrix gram = -(li.transpose() * li);
      gram.diagonal() += lambdas;
      const Vector rhs = l.cwiseProduct(proj - pi.transpose() * truth);
      for (Eigen::Index t = 1; t <= tm; ++t) {
        const double trace_aa = gram.diagonal().head(t).sum();
        Eigen::Vector2d pred = Eigen::Vector2d::Zero();
        if (t > n - 2) {
          const auto rows = detail::available_rows(n, i);
          Vector ya(static_cast<Eigen::Index>(rows.size()));
          for (std::size_t r = 0; r < rows.size(); ++r) ya(static_cast<Eigen::Index>(r)) = y(rows[r]);
          pred = detail::lmmse_predict(p.leftCols(t), lambdas.head(t), ya, i, LmmseSolver::ridge);
        } else if (trace_aa > 0.0) {
          Matrix g = gram.topLeftCorner(t, t);
          g.diagonal().array() += kLmmseRidge * trace_aa / static_cast<double>(n - 2);
          const Vector coef = g.llt().solve(rhs.head(t));
          pred = li.leftCols(t) * coef;
        }
        err[m][static_cast<std::size_t>(t - 1)] += (pred - truth).squaredNorm();
      }
    }
  });

  LmmseResult result;
  const double denom = static_cast<double>(m_count) * static_cast<double>(n_landmarks);
  for (std::size_t t = 1; t <= t_max; ++t) {
    double sum = 0.0;
    for (std::size_t m = 0; m < m_count; ++m) sum += err[m][t - 1];
    result.errors[t] = sum / denom;
  }
  result.argmin_t = argmin_order(result.errors);
  for (const auto& spec : opts.selectors) {
    try {
      result.selected_orders[spec.name()] = run_selector(set, spec);
    } catch (const Error&) {
      // A selector that cannot run on this set is left out of the map.
    }
  }
  return result;
}

inline void write_lmmse_csv(std::ostream& os, const LmmseResult& result) {
  os << "t,e_lmmse\n";
  for (const auto& [t, e] : result.errors) os << t << ',' << format_double(e) << '\n';
}

}  // namespace pdmorder
