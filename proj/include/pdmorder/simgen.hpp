#pragma once

// Synthetic landmark data with a known model order: shapes are drawn from a
// seed model, corrupted by white Gaussian noise at a given SNR, randomly
// moved by similarity transforms and re-aligned by Procrustes analysis.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "pdmorder/error.hpp"
#include "pdmorder/pdm.hpp"
#include "pdmorder/shapes.hpp"

namespace pdmorder {

struct SeedPdm {
  TruncatedPdm underlying;
  std::string source;  // "procedural:<profile>" or "data:<path>"
};

struct GeometricSpectrum {
  double ratio = 0.7;
  double leading = 1e-2;  // lambda_1, in units of the unit-size mean shape
};

struct ListSpectrum {
  std::vector<double> values;
};

using Spectrum = std::variant<GeometricSpectrum, ListSpectrum>;

inline Vector spectrum_values(const Spectrum& spectrum, std::size_t t) {
  Vector out(static_cast<Eigen::Index>(t));
  if (const auto* g = std::get_if<GeometricSpectrum>(&spectrum)) {
    if (!(g->ratio > 0.0 && g->ratio <= 1.0) || !(g->leading > 0.0)) {
      throw Error(ErrorKind::invalid_argument, "geometric spectrum needs 0 < ratio <= 1 and leading > 0");
    }
    for (std::size_t i = 0; i < t; ++i) out(static_cast<Eigen::Index>(i)) = g->leading * std::pow(g->ratio, static_cast<double>(i));
    return out;
  }
  const auto& list = std::get<ListSpectrum>(spectrum).values;
  if (list.size() != t) {
    throw Error(ErrorKind::dimension_mismatch,
                "spectrum lists " + std::to_string(list.size()) + " values for order " + std::to_string(t));
  }
  for (std::size_t i = 0; i < t; ++i) {
    if (!(list[i] > 0.0) || (i > 0 && list[i] > list[i - 1])) {
      throw Error(ErrorKind::invalid_argument, "spectrum must be positive and non-increasing");
    }
    out(static_cast<Eigen::Index>(i)) = list[i];
  }
  return out;
}

namespace detail {

/// Gram-Schmidt of `v` against the columns of `q` (twice, for stability).
inline Vector orthogonalize(Vector v, const std::vector<Vector>& q) {
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& u : q) v -= u.dot(v) * u;
  }
  return v;
}

/// Orthonormal basis of the similarity-transform tangent space at `mean`
/// (two translations, scale, rotation).
inline std::vector<Vector> similarity_tangent(const Vector& mean) {
  const auto n = mean.size() / 2;
  Vector tx = Vector::Zero(mean.size()), ty = Vector::Zero(mean.size()), rot(mean.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    tx(2 * i) = 1.0;
    ty(2 * i + 1) = 1.0;
    rot(2 * i) = -mean(2 * i + 1);
    rot(2 * i + 1) = mean(2 * i);
  }
  std::vector<Vector> q;
  for (Vector v : {tx, ty, Vector(mean), rot}) {
    v = orthogonalize(std::move(v), q);
    q.push_back(v / v.norm());
  }
  return q;
}

}  // namespace detail

/// Seed model with a smooth closed contour as mean and low-spatial-frequency
/// deformation fields as modes. The modes are orthogonal to the similarity
/// tangent space of the mean, so they survive re-alignment; this caps the
/// order at 2n - 4.
inline SeedPdm make_seed_pdm_procedural(std::size_t n_landmarks, std::size_t t, const Spectrum& spectrum,
                                        std::uint64_t rng_seed) {
  if (n_landmarks < 3) throw Error(ErrorKind::invalid_argument, "need at least 3 landmarks");
  const auto n_dim = static_cast<Eigen::Index>(2 * n_landmarks);
  if (t < 1 || t > 2 * n_landmarks - 4) {
    throw Error(ErrorKind::order_out_of_range,
                "order " + std::to_string(t) + " outside 1.." + std::to_string(2 * n_landmarks - 4));
  }
  const Vector lambdas = spectrum_values(spectrum, t);

  std::mt19937_64 rng(rng_seed);
  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> amp_dist(0.02, 0.06);

  // Ellipse with a low-frequency radial perturbation.
  const double a2 = amp_dist(rng), a3 = amp_dist(rng);
  const double p2 = phase_dist(rng), p3 = phase_dist(rng);
  Vector mean(n_dim);
  for (std::size_t j = 0; j < n_landmarks; ++j) {
    const double th = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n_landmarks);
    const double r = 1.0 + a2 * std::cos(2.0 * th + p2) + a3 * std::cos(3.0 * th + p3);
    mean(static_cast<Eigen::Index>(2 * j)) = r * std::cos(th);
    mean(static_cast<Eigen::Index>(2 * j + 1)) = 0.6 * r * std::sin(th);
  }
  mean = detail::centered(mean);
  mean /= mean.norm();

  std::vector<Vector> accepted = detail::similarity_tangent(mean);
  Matrix basis(n_dim, static_cast<Eigen::Index>(t));
  std::size_t found = 0;
  for (std::size_t k = 1; found < t && k <= n_landmarks; ++k) {
    const double phase = phase_dist(rng);
    for (int pattern = 0; pattern < 4 && found < t; ++pattern) {
      Vector v(n_dim);
      for (std::size_t j = 0; j < n_landmarks; ++j) {
        const double th = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(n_landmarks);
        const double arg = static_cast<double>(k) * th + phase;
        const double wave = (pattern % 2 == 0) ? std::cos(arg) : std::sin(arg);
        const bool along_x = pattern < 2;
        v(static_cast<Eigen::Index>(2 * j)) = along_x ? wave : 0.0;
        v(static_cast<Eigen::Index>(2 * j + 1)) = along_x ? 0.0 : wave;
      }
      const double before = v.norm();
      v = detail::orthogonalize(std::move(v), accepted);
      if (v.norm() < 1e-6 * before) continue;
      v /= v.norm();
      Eigen::Index k_max = 0;
      v.cwiseAbs().maxCoeff(&k_max);
      if (v(k_max) < 0.0) v = -v;
      accepted.push_back(v);
      basis.col(static_cast<Eigen::Index>(found++)) = v;
    }
  }
  if (found < t) throw Error(ErrorKind::order_out_of_range, "could not build enough independent modes");

  TruncatedPdm pdm{mean, basis, lambdas, t, lambdas.sum() / static_cast<double>(n_dim)};
  return SeedPdm{std::move(pdm), "procedural:contour"};
}

/// Seed model taken from an aligned data set (first t modes).
inline SeedPdm seed_pdm_from_data(const ShapeSet& aligned, std::size_t t, const std::string& label = "data") {
  return SeedPdm{truncate(fit_pdm(aligned), t), "data:" + label};
}

enum class CoefficientDistribution {
  uniform_box,         // b_i ~ U(-sqrt(lambda_i), sqrt(lambda_i))
  gaussian_truncated,  // b_i ~ N(0, lambda_i) rejected outside the box
};

struct TransformRanges {
  double rotation = std::numbers::pi;  // +- radians
  double log_scale = 0.2;              // +- natural-log scale
  double translation = 0.5;            // +- per unit centroid size
};

struct SimConfig {
  std::size_t samples = 100;
  double beta_db = 20.0;  // +inf means noiseless
  TransformRanges transforms;
  std::uint64_t rng_seed = 1;
  bool realign = true;
  CoefficientDistribution b_dist = CoefficientDistribution::uniform_box;
  GpaOptions gpa;
};

/// Variance of one coefficient drawn with bound sqrt(lambda): lambda / 3
/// for the uniform box, lambda * (1 - 2 phi(1) / (2 Phi(1) - 1)) for the
/// Gaussian truncated at one standard deviation.
inline double coefficient_variance(double lambda, CoefficientDistribution dist) {
  if (dist == CoefficientDistribution::uniform_box) return lambda / 3.0;
  const double phi1 = std::exp(-0.5) / std::sqrt(2.0 * std::numbers::pi);
  const double mass = std::erf(1.0 / std::numbers::sqrt2);
  return lambda * (1.0 - 2.0 * phi1 / mass);
}

/// Noise variance for SNR beta (dB): the smallest signal eigenvalue, i.e. the
/// variance of the last coefficient, divided by 10^(beta/10).
inline double noise_variance(const SeedPdm& seed, double beta_db,
                             CoefficientDistribution dist = CoefficientDistribution::uniform_box) {
  if (std::isinf(beta_db) && beta_db > 0) return 0.0;
  const auto& lambdas = seed.underlying.lambdas;
  return coefficient_variance(lambdas(lambdas.size() - 1), dist) / std::pow(10.0, beta_db / 10.0);
}

/// Independent per-sample stream keyed by (seed, index).
inline std::mt19937_64 sample_stream(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), 0x5eedu};
  return std::mt19937_64(seq);
}

/// One synthetic shape in the model frame (before any transform).
inline Vector sample_model_frame(const SeedPdm& seed, double sigma2, CoefficientDistribution dist, std::mt19937_64& rng) {
  const auto& pdm = seed.underlying;
  const auto t = pdm.lambdas.size();
  Vector b(t);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < t; ++i) {
    const double lim = std::sqrt(pdm.lambdas(i));
    if (dist == CoefficientDistribution::uniform_box) {
      b(i) = std::uniform_real_distribution<double>(-lim, lim)(rng);
    } else {
      double v = 0.0;
      do {
        v = std_normal(rng) * lim;
      } while (std::abs(v) > lim);
      b(i) = v;
    }
  }
  Vector x = pdm.mean + pdm.basis * b;
  if (sigma2 > 0.0) {
    const double sd = std::sqrt(sigma2);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) += sd * std_normal(rng);
  }
  return x;
}

inline Vector random_similarity(const Vector& x, const TransformRanges& ranges, std::mt19937_64& rng) {
  auto symmetric = [&](double half) { return half > 0.0 ? std::uniform_real_distribution<double>(-half, half)(rng) : 0.0; };
  const double angle = symmetric(ranges.rotation);
  const double scale = std::exp(symmetric(ranges.log_scale));
  const double tx = symmetric(ranges.translation), ty = symmetric(ranges.translation);
  const double size = detail::centroid_size(x);
  const double c = scale * std::cos(angle), s = scale * std::sin(angle);
  Vector out(x.size());
  for (Eigen::Index i = 0; i < x.size() / 2; ++i) {
    const double px = x(2 * i), py = x(2 * i + 1);
    out(2 * i) = c * px - s * py + tx * size;
    out(2 * i + 1) = s * px + c * py + ty * size;
  }
  return out;
}

/// Draws cfg.samples shapes; the result is aligned iff cfg.realign.
inline ShapeSet sample_shapes(const SeedPdm& seed, const SimConfig& cfg) {
  if (cfg.samples < 4) throw Error(ErrorKind::too_few_samples, "simulation needs at least 4 samples");
  if (std::isnan(cfg.beta_db) || (std::isinf(cfg.beta_db) && cfg.beta_db < 0)) {
    throw Error(ErrorKind::invalid_argument, "beta must be finite or +inf");
  }
  const double sigma2 = noise_variance(seed, cfg.beta_db, cfg.b_dist);
  std::vector<Shape> shapes;
  shapes.reserve(cfg.samples);
  for (std::size_t m = 0; m < cfg.samples; ++m) {
    auto rng = sample_stream(cfg.rng_seed, m);
    Vector x = sample_model_frame(seed, sigma2, cfg.b_dist, rng);
    shapes.emplace_back(random_similarity(x, cfg.transforms, rng));
  }
  ShapeSet raw(std::move(shapes));
  return cfg.realign ? generalized_procrustes(raw, cfg.gpa) : raw;
}

}  // namespace pdmorder
