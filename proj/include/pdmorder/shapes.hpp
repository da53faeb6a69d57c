#pragma once

// 2D landmark shapes, CSV ingestion and generalized Procrustes alignment.
//
// A shape with n landmarks is stored as a vector of length N = 2n in
// interleaved order x1, y1, x2, y2, ...

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pdmorder/error.hpp"
#include "pdmorder/numfmt.hpp"

namespace pdmorder {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

class Shape {
 public:
  explicit Shape(Vector coords) : coords_(std::move(coords)) {
    const auto n = coords_.size();
    if (n < 4 || n % 2 != 0) {
      throw Error(ErrorKind::inconsistent_dimension,
                  "shape needs an even number (>= 4) of coordinates, got " + std::to_string(n));
    }
    if (!coords_.allFinite()) throw Error(ErrorKind::invalid_argument, "shape has non-finite coordinates");
  }

  const Vector& coords() const noexcept { return coords_; }
  Eigen::Index dim() const noexcept { return coords_.size(); }
  Eigen::Index landmarks() const noexcept { return coords_.size() / 2; }
  double x(Eigen::Index i) const { return coords_(2 * i); }
  double y(Eigen::Index i) const { return coords_(2 * i + 1); }

  friend bool operator==(const Shape& a, const Shape& b) { return a.coords_ == b.coords_; }

 private:
  Vector coords_;
};

struct AlignmentReport {
  std::size_t iterations = 0;
  double final_change = 0.0;
};

inline void write_alignment_report(std::ostream& os, const AlignmentReport& report) {
  os << "iterations=" << report.iterations << '\n' << "final_change=" << format_double(report.final_change) << '\n';
}

namespace detail {

inline Eigen::Vector2d centroid(const Vector& c) {
  const auto n = c.size() / 2;
  Eigen::Vector2d sum = Eigen::Vector2d::Zero();
  for (Eigen::Index i = 0; i < n; ++i) sum += Eigen::Vector2d(c(2 * i), c(2 * i + 1));
  return sum / static_cast<double>(n);
}

inline Vector translated(const Vector& c, const Eigen::Vector2d& offset) {
  Vector out = c;
  for (Eigen::Index i = 0; i < c.size() / 2; ++i) {
    out(2 * i) += offset.x();
    out(2 * i + 1) += offset.y();
  }
  return out;
}

inline Vector centered(const Vector& c) { return translated(c, -centroid(c)); }

/// Square root of the summed squared landmark distances to the centroid.
inline double centroid_size(const Vector& c) { return centered(c).norm(); }

}  // namespace detail

class ShapeSet {
 public:
  /// Unaligned set; validates M >= 2 and a common dimension.
  explicit ShapeSet(std::vector<Shape> shapes) : shapes_(std::move(shapes)) { validate(); }

  /// Declares a set aligned. The mean's centroid must be at the origin within 1e-9.
  static ShapeSet mark_aligned(std::vector<Shape> shapes, AlignmentReport report = {}) {
    ShapeSet set(std::move(shapes));
    const Eigen::Vector2d c = detail::centroid(set.mean_coords());
    if (c.cwiseAbs().maxCoeff() > 1e-9) {
      throw Error(ErrorKind::not_aligned, "mean shape centroid is not at the origin");
    }
    set.report_ = report;
    return set;
  }

  static ShapeSet from_matrix(const Matrix& columns, bool aligned = false) {
    std::vector<Shape> shapes;
    shapes.reserve(static_cast<std::size_t>(columns.cols()));
    for (Eigen::Index m = 0; m < columns.cols(); ++m) shapes.emplace_back(Vector(columns.col(m)));
    return aligned ? mark_aligned(std::move(shapes)) : ShapeSet(std::move(shapes));
  }

  std::size_t size() const noexcept { return shapes_.size(); }
  Eigen::Index dim() const noexcept { return shapes_.front().dim(); }
  const Shape& operator[](std::size_t i) const { return shapes_[i]; }
  const std::vector<Shape>& shapes() const noexcept { return shapes_; }
  auto begin() const noexcept { return shapes_.begin(); }
  auto end() const noexcept { return shapes_.end(); }

  bool aligned() const noexcept { return report_.has_value(); }
  const std::optional<AlignmentReport>& alignment_report() const noexcept { return report_; }

  /// N x M matrix with one shape per column.
  Matrix as_matrix() const {
    Matrix out(dim(), static_cast<Eigen::Index>(size()));
    for (std::size_t m = 0; m < size(); ++m) out.col(static_cast<Eigen::Index>(m)) = shapes_[m].coords();
    return out;
  }

  /// Members at `indices`, in that order. Aligned shapes are individually
  /// centered, so the subset keeps the aligned flag.
  ShapeSet subset(const std::vector<std::size_t>& indices) const {
    std::vector<Shape> picked;
    picked.reserve(indices.size());
    for (auto i : indices) picked.push_back(shapes_.at(i));
    ShapeSet out(std::move(picked));
    out.report_ = report_;
    return out;
  }

  Vector mean_coords() const {
    Vector sum = Vector::Zero(dim());
    for (const auto& s : shapes_) sum += s.coords();
    return sum / static_cast<double>(size());
  }

 private:
  void validate() const {
    if (shapes_.size() < 2) {
      throw Error(ErrorKind::too_few_samples, "a shape set needs at least 2 shapes, got " + std::to_string(shapes_.size()));
    }
    const auto n = shapes_.front().dim();
    for (std::size_t m = 1; m < shapes_.size(); ++m) {
      if (shapes_[m].dim() != n) {
        throw Error(ErrorKind::inconsistent_dimension, "shape " + std::to_string(m) + " has " +
                                                           std::to_string(shapes_[m].dim()) + " coordinates, expected " +
                                                           std::to_string(n));
      }
    }
  }

  std::vector<Shape> shapes_;
  std::optional<AlignmentReport> report_;
};

/// Coordinate-wise arithmetic mean.
inline Shape mean_shape(const ShapeSet& set) { return Shape(set.mean_coords()); }

// ---------------------------------------------------------------------------
// File formats

enum class ShapeFileFormat { csv_rows, directory_of_files };

namespace detail {

/// Parses one comma-separated row; `where` labels errors.
inline std::vector<double> parse_row(std::string_view line, const std::string& where) {
  std::vector<double> values;
  std::size_t start = 0;
  std::size_t field = 0;
  while (true) {
    auto comma = line.find(',', start);
    auto token = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    auto v = parse_double(token);
    if (!v) {
      throw Error(ErrorKind::parse_error, where + ", field " + std::to_string(field + 1) + ": malformed number '" +
                                              std::string(trim(token)) + "'");
    }
    values.push_back(*v);
    ++field;
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return values;
}

inline bool skip_line(std::string_view line) {
  auto t = trim(line);
  return t.empty() || t.front() == '#';
}

}  // namespace detail

/// One shape per row, interleaved x,y, comma-separated; '#' lines are comments.
inline ShapeSet read_shape_csv(std::istream& in, const std::string& label = "input") {
  std::vector<Shape> shapes;
  std::string line;
  std::size_t line_no = 0;
  std::size_t row = 0;
  Eigen::Index expected = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::skip_line(line)) continue;
    ++row;
    auto values = detail::parse_row(line, label + " row " + std::to_string(row) + " (line " + std::to_string(line_no) + ")");
    const auto n = static_cast<Eigen::Index>(values.size());
    if (expected >= 0 && n != expected) {
      throw Error(ErrorKind::inconsistent_dimension, label + " row " + std::to_string(row) + " has " + std::to_string(n) +
                                                         " values, expected " + std::to_string(expected));
    }
    expected = n;
    shapes.emplace_back(Eigen::Map<Vector>(values.data(), n));
  }
  return ShapeSet(std::move(shapes));
}

namespace detail {

/// A per-shape file: all non-comment rows concatenated (one row of 2n values
/// or n rows of "x,y").
inline Shape read_single_shape_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::parse_error, "cannot open " + path.string());
  std::vector<double> values;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (skip_line(line)) continue;
    auto row = parse_row(line, path.string() + " line " + std::to_string(line_no));
    values.insert(values.end(), row.begin(), row.end());
  }
  return Shape(Eigen::Map<Vector>(values.data(), static_cast<Eigen::Index>(values.size())));
}

}  // namespace detail

inline ShapeSet load_shape_set(const std::filesystem::path& path, ShapeFileFormat format) {
  if (format == ShapeFileFormat::csv_rows) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::parse_error, "cannot open " + path.string());
    return read_shape_csv(in, path.string());
  }
  if (!std::filesystem::is_directory(path)) throw Error(ErrorKind::parse_error, path.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(path)) {
    if (entry.is_regular_file()) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Shape> shapes;
  Eigen::Index expected = -1;
  for (std::size_t i = 0; i < files.size(); ++i) {
    shapes.push_back(detail::read_single_shape_file(files[i]));
    if (expected >= 0 && shapes.back().dim() != expected) {
      throw Error(ErrorKind::inconsistent_dimension, files[i].string() + " has " + std::to_string(shapes.back().dim()) +
                                                         " values, expected " + std::to_string(expected));
    }
    expected = shapes.back().dim();
  }
  return ShapeSet(std::move(shapes));
}

inline void write_shape_csv(std::ostream& os, const ShapeSet& set) {
  for (const auto& s : set) {
    for (Eigen::Index i = 0; i < s.dim(); ++i) os << (i ? "," : "") << format_double(s.coords()(i));
    os << '\n';
  }
}

// ---------------------------------------------------------------------------
// Procrustes alignment

enum class AlignMode { similarity, rigid };

/// Least-squares fit of `shape` onto `reference` over rotations, translations
/// and (in similarity mode) isotropic scale. Reflections are never used.
inline Shape align_pair(const Shape& shape, const Shape& reference, AlignMode mode = AlignMode::similarity) {
  if (shape.dim() != reference.dim()) {
    throw Error(ErrorKind::dimension_mismatch, "align_pair: shape and reference differ in landmark count");
  }
  const Vector a = detail::centered(shape.coords());
  const Eigen::Vector2d ref_centroid = detail::centroid(reference.coords());
  const Vector b = detail::translated(reference.coords(), -ref_centroid);
  const double a_norm2 = a.squaredNorm();
  if (!(a_norm2 > 0.0)) throw Error(ErrorKind::degenerate_shape, "all landmarks coincide (zero centroid size)");

  // Planar orthogonal Procrustes as complex regression: z_b ~ c * z_a.
  std::complex<double> cross{0.0, 0.0};
  for (Eigen::Index i = 0; i < a.size() / 2; ++i) {
    const std::complex<double> za(a(2 * i), a(2 * i + 1));
    const std::complex<double> zb(b(2 * i), b(2 * i + 1));
    cross += std::conj(za) * zb;
  }
  double scale = std::abs(cross) / a_norm2;
  double angle = std::arg(cross);
  if (mode == AlignMode::rigid) scale = 1.0;
  if (std::abs(cross) == 0.0) angle = 0.0;
  const std::complex<double> c = std::polar(scale, angle);

  Vector out(a.size());
  for (Eigen::Index i = 0; i < a.size() / 2; ++i) {
    const std::complex<double> z = c * std::complex<double>(a(2 * i), a(2 * i + 1));
    out(2 * i) = z.real() + ref_centroid.x();
    out(2 * i + 1) = z.imag() + ref_centroid.y();
  }
  return Shape(std::move(out));
}

/// Root mean squared landmark distance between two shapes.
inline double rmsd(const Shape& a, const Shape& b) {
  return (a.coords() - b.coords()).norm() / std::sqrt(static_cast<double>(a.landmarks()));
}

struct GpaOptions {
  double tol = 1e-9;
  std::size_t max_iter = 200;
  AlignMode mode = AlignMode::similarity;
};

/// Generalized Procrustes analysis: repeatedly align every shape to the
/// current mean, recompute the mean and (in similarity mode) renormalize it
/// to unit centroid size. Stops when the RMS change of the mean drops below
/// `tol` or after `max_iter` iterations.
inline ShapeSet generalized_procrustes(const ShapeSet& set, const GpaOptions& opts = {}) {
  if (!(opts.tol > 0.0)) throw Error(ErrorKind::invalid_argument, "generalized_procrustes: tol must be positive");
  const auto m_count = set.size();

  std::vector<Vector> current;
  current.reserve(m_count);
  double mean_size = 0.0;
  for (std::size_t m = 0; m < m_count; ++m) {
    current.push_back(detail::centered(set[m].coords()));
    const double sz = current.back().norm();
    if (!(sz > 0.0)) {
      throw Error(ErrorKind::degenerate_shape, "shape " + std::to_string(m) + ": all landmarks coincide");
    }
    mean_size += sz / static_cast<double>(m_count);
  }

  auto normalize = [&](Vector v) {
    if (opts.mode == AlignMode::similarity) v /= v.norm();
    return v;
  };

  // Start from the mean of the centered inputs so that an already aligned set
  // is a fixed point; fall back to the first shape when rotations cancel.
  Vector mean = Vector::Zero(set.dim());
  for (const auto& c : current) mean += c;
  mean /= static_cast<double>(m_count);
  if (mean.norm() < 1e-3 * mean_size) mean = current.front();
  mean = normalize(mean);

  AlignmentReport report;
  std::vector<Shape> aligned;
  aligned.reserve(m_count);
  for (std::size_t iter = 1; iter <= opts.max_iter; ++iter) {
    const Shape reference(mean);
    aligned.clear();
    Vector next = Vector::Zero(mean.size());
    for (const auto& c : current) {
      aligned.push_back(align_pair(Shape(c), reference, opts.mode));
      next += aligned.back().coords();
    }
    next = normalize(detail::centered(next / static_cast<double>(m_count)));
    report.iterations = iter;
    report.final_change = (next - mean).norm() / std::sqrt(static_cast<double>(mean.size() / 2));
    mean = std::move(next);
    if (report.final_change < opts.tol) break;
  }

  // Final pass against the converged mean; shapes come out centered.
  const Shape reference(mean);
  std::vector<Shape> out;
  out.reserve(m_count);
  for (const auto& c : current) out.push_back(Shape(detail::centered(align_pair(Shape(c), reference, opts.mode).coords())));
  return ShapeSet::mark_aligned(std::move(out), report);
}

}  // namespace pdmorder
