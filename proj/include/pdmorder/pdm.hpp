#pragma once

// Point distribution model: sample covariance eigendecomposition, order
// truncation, the coefficient box |b_i| <= sqrt(lambda_i) and the
// box-constrained weighted least-squares projection onto the model basis.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "pdmorder/error.hpp"
#include "pdmorder/numfmt.hpp"
#include "pdmorder/shapes.hpp"

namespace pdmorder {

/// Eigenvalues below this fraction of the largest count as zero modes.
inline constexpr double kRankTolerance = 1e-12;
/// Per-coordinate noise variances are floored at this fraction of the mean
/// covariance diagonal.
inline constexpr double kNoiseFloorFraction = 1e-12;

struct PdmModel {
  Vector mean;      // length N
  Matrix eigvecs;   // N x N, columns are modes
  Vector eigvals;   // length N, descending, >= 0
  std::size_t n_train = 0;

  Eigen::Index dim() const noexcept { return mean.size(); }

  /// Number of modes with eigenvalue above kRankTolerance * largest.
  std::size_t positive_rank() const {
    if (eigvals.size() == 0 || !(eigvals(0) > 0.0)) return 0;
    const double cut = kRankTolerance * eigvals(0);
    std::size_t r = 0;
    while (r < static_cast<std::size_t>(eigvals.size()) && eigvals(static_cast<Eigen::Index>(r)) > cut) ++r;
    return r;
  }

  /// Mean of the covariance diagonal (trace / N).
  double mean_variance() const { return eigvals.sum() / static_cast<double>(dim()); }

  Matrix covariance() const { return eigvecs * eigvals.asDiagonal() * eigvecs.transpose(); }
};

struct TruncatedPdm {
  Vector mean;     // length N
  Matrix basis;    // N x t, orthonormal columns
  Vector lambdas;  // length t, descending, > 0
  std::size_t order = 0;
  double mean_variance = 0.0;  // trace(R) / N of the full model

  Eigen::Index dim() const noexcept { return mean.size(); }
};

/// Noise-variance floor for fits against this model.
inline double noise_floor(const TruncatedPdm& pdm) {
  return std::max(kNoiseFloorFraction * pdm.mean_variance, 1e-300);
}

/// Fits the model to the columns of `samples` (N x M1). Exposed separately so
/// that dimension-agnostic callers need not build Shapes.
inline PdmModel fit_pdm(const Matrix& samples) {
  const auto m1 = samples.cols();
  if (m1 < 2) throw Error(ErrorKind::too_few_samples, "fit_pdm needs at least 2 samples");
  PdmModel model;
  model.n_train = static_cast<std::size_t>(m1);
  model.mean = samples.rowwise().mean();
  const Matrix centered = samples.colwise() - model.mean;
  const Matrix cov = (centered * centered.transpose()) / static_cast<double>(m1);

  Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
  if (eig.info() != Eigen::Success) throw Error(ErrorKind::singular_system, "eigendecomposition failed");

  const auto n = cov.rows();
  // Eigen returns ascending order; flip to descending.
  model.eigvals = eig.eigenvalues().reverse();
  model.eigvecs = eig.eigenvectors().rowwise().reverse();
  for (Eigen::Index i = 0; i < n; ++i) {
    if (model.eigvals(i) < 0.0) model.eigvals(i) = 0.0;
    Eigen::Index k = 0;
    model.eigvecs.col(i).cwiseAbs().maxCoeff(&k);
    if (model.eigvecs(k, i) < 0.0) model.eigvecs.col(i) *= -1.0;
  }
  return model;
}

inline PdmModel fit_pdm(const ShapeSet& set) {
  if (!set.aligned()) throw Error(ErrorKind::not_aligned, "fit_pdm requires a Procrustes-aligned shape set");
  return fit_pdm(set.as_matrix());
}

inline TruncatedPdm truncate(const PdmModel& model, std::size_t t) {
  const auto rank = model.positive_rank();
  if (t < 1 || t > rank) {
    throw Error(ErrorKind::order_out_of_range,
                "order " + std::to_string(t) + " outside 1.." + std::to_string(rank) + " (positive modes)");
  }
  const auto te = static_cast<Eigen::Index>(t);
  return TruncatedPdm{model.mean, model.eigvecs.leftCols(te), model.eigvals.head(te), t, model.mean_variance()};
}

enum class ClampMode {
  uniform_scale,   // shrink the whole vector toward 0 until it fits
  per_coordinate,  // clip each coefficient independently
};

/// Maps b into the box |b_i| <= sqrt(lambda_i).
inline Vector clamp_to_box(const Vector& b, const Vector& lambdas, ClampMode mode = ClampMode::uniform_scale) {
  if (b.size() != lambdas.size()) throw Error(ErrorKind::dimension_mismatch, "clamp_to_box: b and lambdas differ in length");
  if (mode == ClampMode::per_coordinate) {
    Vector out = b;
    for (Eigen::Index i = 0; i < b.size(); ++i) {
      const double lim = std::sqrt(lambdas(i));
      out(i) = std::clamp(b(i), -lim, lim);
    }
    return out;
  }
  double s = 1.0;
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    if (b(i) != 0.0) s = std::min(s, std::sqrt(lambdas(i)) / std::abs(b(i)));
  }
  if (s >= 1.0) return b;
  Vector out = s * b;
  // Rounding in s * b can overshoot the bound by an ulp.
  for (Eigen::Index i = 0; i < b.size(); ++i) {
    const double lim = std::sqrt(lambdas(i));
    out(i) = std::clamp(out(i), -lim, lim);
  }
  return out;
}

/// Unconstrained weighted least-squares coefficients
/// (P' W P)^{-1} P' W Y with W = diag(1 / sigma_diag).
inline Matrix weighted_ls_coefficients(const Matrix& basis, const Matrix& Y, const Vector& sigma_diag) {
  if (Y.rows() != basis.rows() || sigma_diag.size() != basis.rows()) {
    throw Error(ErrorKind::dimension_mismatch, "weighted least squares: row counts disagree");
  }
  if (!(sigma_diag.minCoeff() > 0.0)) throw Error(ErrorKind::invalid_argument, "noise variances must be positive");
  const Vector w = sigma_diag.cwiseInverse();
  const Matrix pw = basis.transpose() * w.asDiagonal();
  const Matrix gram = pw * basis;
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
    throw Error(ErrorKind::singular_system, "P' W P is numerically singular (noise variance collapse)");
  }
  return llt.solve(pw * Y);
}

/// Box-constrained GLS fit of every column of Y onto the model basis.
inline Matrix project_constrained(const TruncatedPdm& pdm, const Matrix& Y, const Vector& sigma_diag,
                                  ClampMode mode = ClampMode::uniform_scale) {
  Matrix B = weighted_ls_coefficients(pdm.basis, Y, sigma_diag);
  for (Eigen::Index m = 0; m < B.cols(); ++m) B.col(m) = clamp_to_box(B.col(m), pdm.lambdas, mode);
  return B;
}

/// Noiseless part P_t B (the mean is not added).
inline Matrix reconstruct(const TruncatedPdm& pdm, const Matrix& B) {
  if (B.rows() != pdm.basis.cols()) {
    throw Error(ErrorKind::dimension_mismatch, "reconstruct: B has " + std::to_string(B.rows()) + " rows, model order is " +
                                                   std::to_string(pdm.basis.cols()));
  }
  return pdm.basis * B;
}

// ---------------------------------------------------------------------------
// Text container:
//   pdm,N,t,M1
//   mean row (N values)
//   eigenvalue row (t values)
//   t eigenvector rows (N values each, one per mode)

namespace detail {

inline void write_row(std::ostream& os, const Eigen::Ref<const Vector>& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) os << (i ? "," : "") << format_double(v(i));
  os << '\n';
}

}  // namespace detail

inline void write_pdm(std::ostream& os, const PdmModel& model) {
  os << "pdm," << model.dim() << ',' << model.eigvals.size() << ',' << model.n_train << '\n';
  detail::write_row(os, model.mean);
  detail::write_row(os, model.eigvals);
  for (Eigen::Index i = 0; i < model.eigvecs.cols(); ++i) detail::write_row(os, model.eigvecs.col(i));
}

/// Reads a container; when t < N the eigenvector matrix has t columns.
inline PdmModel read_pdm(std::istream& is) {
  std::string line;
  std::size_t line_no = 0;
  auto next_row = [&](const std::string& what) {
    while (std::getline(is, line)) {
      ++line_no;
      if (!detail::skip_line(line)) return;
    }
    throw Error(ErrorKind::parse_error, "pdm file truncated before " + what);
  };
  next_row("header");
  auto header = trim(line);
  if (header.substr(0, 4) != "pdm,") throw Error(ErrorKind::parse_error, "pdm file: missing 'pdm,N,t,M1' header");
  auto dims = detail::parse_row(header.substr(4), "pdm header");
  if (dims.size() != 3) throw Error(ErrorKind::parse_error, "pdm header needs N,t,M1");
  const auto n = static_cast<Eigen::Index>(dims[0]);
  const auto t = static_cast<Eigen::Index>(dims[1]);
  PdmModel model;
  model.n_train = static_cast<std::size_t>(dims[2]);
  auto read_vec = [&](Eigen::Index len, const std::string& what) {
    next_row(what);
    auto vals = detail::parse_row(line, "pdm line " + std::to_string(line_no));
    if (static_cast<Eigen::Index>(vals.size()) != len) {
      throw Error(ErrorKind::inconsistent_dimension, "pdm " + what + ": expected " + std::to_string(len) + " values");
    }
    return Vector(Eigen::Map<Vector>(vals.data(), len));
  };
  model.mean = read_vec(n, "mean");
  model.eigvals = read_vec(t, "eigenvalues");
  model.eigvecs.resize(n, t);
  for (Eigen::Index i = 0; i < t; ++i) model.eigvecs.col(i) = read_vec(n, "eigenvector " + std::to_string(i + 1));
  return model;
}

}  // namespace pdmorder
