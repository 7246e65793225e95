#pragma once

// Cross-view quadratic discriminant analysis: learn a projection W and a
// metric M from intra-person and extra-person difference covariances.

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "xqreid/datamodel.hpp"
#include "xqreid/detail/binary_io.hpp"
#include "xqreid/error.hpp"

namespace xqreid {

/// Collects every same-label cross-view difference (a_i - b_j) into xs and
/// samples `negatives_per_positive * n_s` distinct different-label pairs into
/// xd, uniformly without replacement. When fewer different-label pairs exist,
/// all of them are used. Columns are ordered by (i, j).
inline DifferenceSets build_difference_sets(const FeatureSet& view_a, const FeatureSet& view_b,
                                            std::size_t negatives_per_positive, std::uint64_t seed) {
  require(view_a.dim() == view_b.dim(), ErrorCode::DimMismatch,
          "views have dims " + std::to_string(view_a.dim()) + " and " + std::to_string(view_b.dim()));
  require(negatives_per_positive >= 1, ErrorCode::BadParams, "negatives_per_positive must be >= 1");
  require(view_a.distinct_labels().size() >= 2 && view_b.distinct_labels().size() >= 2,
          ErrorCode::SingleIdentity, "each view needs at least two distinct identities");

  const auto& la = view_a.labels();
  const auto& lb = view_b.labels();
  const auto na = view_a.size();
  const auto nb = view_b.size();

  std::vector<std::size_t> negatives_in_row(na, 0);
  std::vector<std::pair<std::size_t, std::size_t>> positives;
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      if (la[i] == lb[j])
        positives.emplace_back(i, j);
      else
        ++negatives_in_row[i];
    }
  }
  require(!positives.empty(), ErrorCode::NoSharedIdentities,
          "views '" + view_a.view_id() + "' and '" + view_b.view_id() + "' share no labels");

  const auto dim = static_cast<Eigen::Index>(view_a.dim());
  Matrix xs(dim, static_cast<Eigen::Index>(positives.size()));
  for (std::size_t k = 0; k < positives.size(); ++k)
    xs.col(static_cast<Eigen::Index>(k)) = view_a.column(positives[k].first) - view_b.column(positives[k].second);

  const std::uint64_t total_negatives =
      std::accumulate(negatives_in_row.begin(), negatives_in_row.end(), std::uint64_t{0});
  const std::uint64_t wanted =
      std::min<std::uint64_t>(total_negatives, std::uint64_t{negatives_per_positive} * positives.size());

  // Floyd's algorithm: `wanted` distinct indices from [0, total_negatives).
  std::vector<std::uint64_t> picked;
  if (wanted == total_negatives) {
    picked.resize(total_negatives);
    std::iota(picked.begin(), picked.end(), std::uint64_t{0});
  } else {
    std::mt19937_64 rng(seed);
    std::unordered_set<std::uint64_t> chosen;
    chosen.reserve(wanted * 2);
    for (std::uint64_t j = total_negatives - wanted; j < total_negatives; ++j) {
      std::uniform_int_distribution<std::uint64_t> pick(0, j);
      const auto t = pick(rng);
      if (!chosen.insert(t).second) chosen.insert(j);
    }
    picked.assign(chosen.begin(), chosen.end());
    std::sort(picked.begin(), picked.end());
  }

  Matrix xd(dim, static_cast<Eigen::Index>(picked.size()));
  std::size_t row = 0;
  std::uint64_t row_start = 0;
  std::vector<std::size_t> row_negatives;
  std::size_t cached_row = na;
  for (std::size_t k = 0; k < picked.size(); ++k) {
    while (picked[k] >= row_start + negatives_in_row[row]) row_start += negatives_in_row[row++];
    if (cached_row != row) {
      row_negatives.clear();
      for (std::size_t j = 0; j < nb; ++j)
        if (lb[j] != la[row]) row_negatives.push_back(j);
      cached_row = row;
    }
    const auto j = row_negatives[static_cast<std::size_t>(picked[k] - row_start)];
    xd.col(static_cast<Eigen::Index>(k)) = view_a.column(row) - view_b.column(j);
  }
  return DifferenceSets(std::move(xs), std::move(xd), seed);
}

/// (1/n) X X^T, symmetrized.
inline Matrix covariance(const Matrix& x) {
  require(x.cols() >= 1, ErrorCode::EmptyInput, "covariance of zero columns");
  Matrix c = (x * x.transpose()) / static_cast<double>(x.cols());
  return (c + c.transpose()) * 0.5;
}

/// 1e-3 times the mean diagonal of the two covariances.
inline double default_ridge(const Matrix& sigma_s, const Matrix& sigma_d) {
  const auto d = static_cast<double>(sigma_s.rows());
  return 1e-3 * (sigma_s.trace() + sigma_d.trace()) / (2.0 * d);
}

struct XqdaOptions {
  /// Unset means default_ridge().
  std::optional<double> ridge;
  RankPolicy policy = EigenvalueThreshold{1.0};
  /// false: largest eigenvalues of sigma_d^-1 sigma_s (numerator sigma_s).
  /// true:  largest eigenvalues of sigma_s^-1 sigma_d.
  bool invert_quotient = false;
};

namespace detail {

inline Eigen::Index largest_magnitude_index(const Eigen::Ref<const Vector>& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i)
    if (std::abs(v[i]) > std::abs(v[best])) best = i;
  return best;
}

inline Matrix symmetrized(const Matrix& m) { return (m + m.transpose()) * 0.5; }

inline Matrix spd_inverse(const Matrix& m, const char* which) {
  Eigen::LLT<Matrix> llt(m);
  require(llt.info() == Eigen::Success, ErrorCode::NotPositiveDefinite, which);
  return symmetrized(llt.solve(Matrix::Identity(m.rows(), m.cols())));
}

}  // namespace detail

/// Trains the projection and metric.
///
/// Solves numerator * w = lambda * denominator * w by factoring the
/// denominator as L L^T and diagonalizing L^-1 numerator L^-T. Retained
/// eigenvectors are scaled to unit norm with their largest-magnitude entry
/// positive, ordered by eigenvalue descending and then by that entry's index.
inline XqdaModel solve_xqda(const DifferenceSets& diffs, const XqdaOptions& options = {}) {
  Matrix sigma_s = covariance(diffs.xs());
  Matrix sigma_d = covariance(diffs.xd());
  const double ridge = options.ridge.value_or(default_ridge(sigma_s, sigma_d));
  require(std::isfinite(ridge) && ridge >= 0.0, ErrorCode::BadParams, "ridge must be a finite value >= 0");
  sigma_s.diagonal().array() += ridge;
  sigma_d.diagonal().array() += ridge;

  const Matrix& numerator = options.invert_quotient ? sigma_d : sigma_s;
  const Matrix& denominator = options.invert_quotient ? sigma_s : sigma_d;

  Eigen::LLT<Matrix> llt(denominator);
  require(llt.info() == Eigen::Success, ErrorCode::NotPositiveDefinite,
          options.invert_quotient ? "sigma_s" : "sigma_d");
  const auto lower = llt.matrixL();
  const Matrix half = lower.solve(numerator);
  const Matrix reduced = detail::symmetrized(lower.solve(half.transpose()));

  Eigen::SelfAdjointEigenSolver<Matrix> eig(reduced);
  require(eig.info() == Eigen::Success, ErrorCode::EigenFailure, "symmetric eigensolver did not converge");
  Matrix vectors = llt.matrixU().solve(eig.eigenvectors());
  const Vector& values = eig.eigenvalues();

  const auto d = vectors.cols();
  std::vector<Eigen::Index> pivot(static_cast<std::size_t>(d));
  for (Eigen::Index k = 0; k < d; ++k) {
    auto v = vectors.col(k);
    v /= v.norm();
    const auto p = detail::largest_magnitude_index(v);
    if (v[p] < 0.0) v = -v;
    pivot[static_cast<std::size_t>(k)] = p;
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(d));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return pivot[static_cast<std::size_t>(a)] < pivot[static_cast<std::size_t>(b)];
  });

  Eigen::Index r = 0;
  if (const auto* fixed = std::get_if<FixedRank>(&options.policy)) {
    require(fixed->r >= 1 && fixed->r <= static_cast<std::size_t>(d), ErrorCode::BadParams,
            "fixed rank " + std::to_string(fixed->r) + " outside [1, " + std::to_string(d) + "]");
    r = static_cast<Eigen::Index>(fixed->r);
  } else {
    const double tau = std::get<EigenvalueThreshold>(options.policy).tau;
    for (auto k : order)
      if (values[k] > tau) ++r;
    r = std::max<Eigen::Index>(r, 1);
  }

  Matrix w(vectors.rows(), r);
  Vector lambdas(r);
  for (Eigen::Index k = 0; k < r; ++k) {
    const auto src = order[static_cast<std::size_t>(k)];
    w.col(k) = vectors.col(src);
    lambdas[k] = values[src];
    require(lambdas[k] > 0.0, ErrorCode::EigenFailure, "non-positive retained eigenvalue");
  }

  const Matrix projected_s = detail::symmetrized(w.transpose() * sigma_s * w);
  const Matrix projected_d = detail::symmetrized(w.transpose() * sigma_d * w);
  Matrix metric = detail::spd_inverse(projected_s, "projected sigma_s") -
                  detail::spd_inverse(projected_d, "projected sigma_d");
  metric = detail::symmetrized(metric);

  return XqdaModel(std::move(w), std::move(lambdas), std::move(metric), ridge,
                   CovariancePair(std::move(sigma_s), std::move(sigma_d), ridge),
                   RankSelection{options.policy, options.invert_quotient});
}

/// Columns W^T x with labels preserved.
inline FeatureSet project(const XqdaModel& model, const FeatureSet& fs) {
  require(fs.dim() == model.input_dim(), ErrorCode::DimMismatch,
          "feature dim " + std::to_string(fs.dim()) + ", model expects " + std::to_string(model.input_dim()));
  return FeatureSet(fs.view_id(), model.w().transpose() * fs.vectors(), fs.labels());
}

// Model file, little-endian:
//   "XMDL" | u32 version=1 | u32 d | u32 r | f64 ridge |
//   W (d*r f64, column by column) | eigenvalues (r f64) | M (r*r f64, column by column)

inline constexpr char kModelMagic[5] = "XMDL";
inline constexpr std::uint32_t kModelVersion = 1;

inline void save_model(const XqdaModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
  out.write(kModelMagic, 4);
  detail::write_le<std::uint32_t>(out, kModelVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.input_dim()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(model.r()));
  detail::write_le<double>(out, model.ridge());
  for (Eigen::Index k = 0; k < model.w().size(); ++k) detail::write_le<double>(out, model.w().data()[k]);
  for (Eigen::Index k = 0; k < model.eigenvalues().size(); ++k) detail::write_le<double>(out, model.eigenvalues()[k]);
  for (Eigen::Index k = 0; k < model.metric().size(); ++k) detail::write_le<double>(out, model.metric().data()[k]);
  out.flush();
  require(static_cast<bool>(out), ErrorCode::IoError, "write failed: " + path.string());
}

/// The loaded model has no covariances and records its rank as FixedRank{r}.
inline XqdaModel load_model(const std::filesystem::path& path) {
  require(std::filesystem::is_regular_file(path), ErrorCode::FileMissing, path.string());
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + path.string());
  detail::LeReader reader(in, path.string());
  reader.expect_magic(kModelMagic);
  const auto version = reader.read<std::uint32_t>();
  require(version == kModelVersion, ErrorCode::FormatError,
          path.string() + ": unsupported model version " + std::to_string(version));
  const auto d = static_cast<Eigen::Index>(reader.read<std::uint32_t>());
  const auto r = static_cast<Eigen::Index>(reader.read<std::uint32_t>());
  require(r >= 1 && r <= d, ErrorCode::FormatError, path.string() + ": invalid d/r header");
  const double ridge = reader.read<double>();
  Matrix w(d, r);
  for (Eigen::Index k = 0; k < w.size(); ++k) w.data()[k] = reader.read<double>();
  Vector lambdas(r);
  for (Eigen::Index k = 0; k < r; ++k) lambdas[k] = reader.read<double>();
  Matrix metric(r, r);
  for (Eigen::Index k = 0; k < metric.size(); ++k) metric.data()[k] = reader.read<double>();
  reader.expect_end();
  return XqdaModel(std::move(w), std::move(lambdas), std::move(metric), ridge, std::nullopt,
                   RankSelection{FixedRank{static_cast<std::size_t>(r)}, false});
}

}  // namespace xqreid
