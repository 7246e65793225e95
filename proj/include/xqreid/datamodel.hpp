#pragma once

// Core value types shared by the whole pipeline. Every type validates its
// invariants on construction and is immutable afterwards.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "xqreid/error.hpp"

namespace xqreid {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Label = std::string;
using Labels = std::vector<Label>;

namespace detail {

inline void check(bool ok, const std::string& invariant) {
  require(ok, ErrorCode::Validation, invariant);
}

// |a_ij - a_ji| <= tol * max|a|, with the scale floored at 1 for tiny matrices.
inline bool is_symmetric(const Matrix& m, double rel_tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  if (m.size() == 0) return true;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

inline bool is_positive_definite(const Matrix& m) {
  if (m.rows() == 0) return false;
  Eigen::LLT<Matrix> llt(m);
  return llt.info() == Eigen::Success;
}

}  // namespace detail

/// Labeled feature vectors from one camera view. Samples are columns.
class FeatureSet {
 public:
  FeatureSet(std::string view_id, Matrix vectors, Labels labels)
      : view_id_(std::move(view_id)), vectors_(std::move(vectors)), labels_(std::move(labels)) {
    detail::check(vectors_.rows() >= 1, "FeatureSet: dim >= 1");
    detail::check(static_cast<std::size_t>(vectors_.cols()) == labels_.size(),
                  "FeatureSet: column count equals label count");
    detail::check(vectors_.allFinite(), "FeatureSet: all values finite");
    detail::check(std::none_of(labels_.begin(), labels_.end(),
                               [](const Label& l) { return l.empty(); }),
                  "FeatureSet: every label nonempty");
  }

  const std::string& view_id() const noexcept { return view_id_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(vectors_.rows()); }
  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  const Matrix& vectors() const noexcept { return vectors_; }
  const Labels& labels() const noexcept { return labels_; }
  auto column(std::size_t i) const { return vectors_.col(static_cast<Eigen::Index>(i)); }

  /// Distinct labels in first-appearance order.
  Labels distinct_labels() const {
    Labels out;
    for (const auto& l : labels_)
      if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
    return out;
  }

 private:
  std::string view_id_;
  Matrix vectors_;
  Labels labels_;
};

/// Intra-person (xs) and extra-person (xd) cross-view difference columns.
class DifferenceSets {
 public:
  DifferenceSets(Matrix xs, Matrix xd, std::uint64_t sampling_seed)
      : xs_(std::move(xs)), xd_(std::move(xd)), seed_(sampling_seed) {
    detail::check(xs_.cols() >= 1, "DifferenceSets: n_s >= 1");
    detail::check(xd_.cols() >= 1, "DifferenceSets: n_d >= 1");
    detail::check(xs_.rows() >= 1 && xs_.rows() == xd_.rows(),
                  "DifferenceSets: xs and xd share dimension");
    detail::check(xs_.allFinite() && xd_.allFinite(), "DifferenceSets: all values finite");
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(xs_.rows()); }
  std::size_t n_s() const noexcept { return static_cast<std::size_t>(xs_.cols()); }
  std::size_t n_d() const noexcept { return static_cast<std::size_t>(xd_.cols()); }
  const Matrix& xs() const noexcept { return xs_; }
  const Matrix& xd() const noexcept { return xd_; }
  std::uint64_t sampling_seed() const noexcept { return seed_; }

 private:
  Matrix xs_;
  Matrix xd_;
  std::uint64_t seed_;
};

/// Ridge-augmented intra/extra covariances. `ridge` has already been added
/// to both diagonals.
class CovariancePair {
 public:
  CovariancePair(Matrix sigma_s, Matrix sigma_d, double ridge)
      : sigma_s_(std::move(sigma_s)), sigma_d_(std::move(sigma_d)), ridge_(ridge) {
    detail::check(std::isfinite(ridge_) && ridge_ >= 0.0, "CovariancePair: ridge >= 0");
    detail::check(sigma_s_.rows() == sigma_d_.rows(), "CovariancePair: matching dimensions");
    detail::check(detail::is_symmetric(sigma_s_), "CovariancePair: sigma_s symmetric");
    detail::check(detail::is_symmetric(sigma_d_), "CovariancePair: sigma_d symmetric");
    require(detail::is_positive_definite(sigma_s_), ErrorCode::NotPositiveDefinite, "sigma_s");
    require(detail::is_positive_definite(sigma_d_), ErrorCode::NotPositiveDefinite, "sigma_d");
  }

  const Matrix& sigma_s() const noexcept { return sigma_s_; }
  const Matrix& sigma_d() const noexcept { return sigma_d_; }
  double ridge() const noexcept { return ridge_; }

 private:
  Matrix sigma_s_;
  Matrix sigma_d_;
  double ridge_;
};

/// Keep exactly `r` leading eigenvectors.
struct FixedRank {
  std::size_t r = 1;
  friend bool operator==(const FixedRank&, const FixedRank&) = default;
};

/// Keep every eigenvector with eigenvalue > tau (at least one).
struct EigenvalueThreshold {
  double tau = 1.0;
  friend bool operator==(const EigenvalueThreshold&, const EigenvalueThreshold&) = default;
};

using RankPolicy = std::variant<FixedRank, EigenvalueThreshold>;

/// How the subspace of a model was chosen.
struct RankSelection {
  RankPolicy policy = EigenvalueThreshold{};
  bool invert_quotient = false;
  friend bool operator==(const RankSelection&, const RankSelection&) = default;
};

/// Learned projection W (d x r), eigenvalues, and metric M (r x r).
///
/// `covariances` is present for freshly trained models and absent for models
/// read back from disk, since the model file stores only W, the eigenvalues,
/// M and the ridge.
class XqdaModel {
 public:
  XqdaModel(Matrix w, Vector eigenvalues, Matrix metric, double ridge,
            std::optional<CovariancePair> covariances, RankSelection selection)
      : w_(std::move(w)),
        eigenvalues_(std::move(eigenvalues)),
        metric_(std::move(metric)),
        ridge_(ridge),
        covariances_(std::move(covariances)),
        selection_(std::move(selection)) {
    const auto r = w_.cols();
    detail::check(r >= 1 && r <= w_.rows(), "XqdaModel: 1 <= r <= d");
    detail::check(eigenvalues_.size() == r, "XqdaModel: one eigenvalue per column of W");
    detail::check(metric_.rows() == r && metric_.cols() == r, "XqdaModel: metric is r x r");
    detail::check(w_.allFinite() && eigenvalues_.allFinite() && metric_.allFinite(),
                  "XqdaModel: all values finite");
    for (Eigen::Index i = 1; i < r; ++i)
      detail::check(eigenvalues_[i - 1] >= eigenvalues_[i], "XqdaModel: eigenvalues descending");
    detail::check(detail::is_symmetric(metric_), "XqdaModel: metric symmetric");
    detail::check(std::isfinite(ridge_) && ridge_ >= 0.0, "XqdaModel: ridge >= 0");
    if (covariances_) {
      detail::check(covariances_->sigma_s().rows() == w_.rows(),
                    "XqdaModel: covariances match input dimension");
    }
  }

  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(w_.rows()); }
  std::size_t r() const noexcept { return static_cast<std::size_t>(w_.cols()); }
  const Matrix& w() const noexcept { return w_; }
  const Vector& eigenvalues() const noexcept { return eigenvalues_; }
  const Matrix& metric() const noexcept { return metric_; }
  double ridge() const noexcept { return ridge_; }
  const std::optional<CovariancePair>& covariances() const noexcept { return covariances_; }
  const RankSelection& selection() const noexcept { return selection_; }

 private:
  Matrix w_;
  Vector eigenvalues_;
  Matrix metric_;
  double ridge_;
  std::optional<CovariancePair> covariances_;
  RankSelection selection_;
};

enum class Polarity : std::uint8_t { SmallerIsBetter = 0, LargerIsBetter = 1 };

enum class Normalization : std::uint8_t {
  None = 0,
  PerProbeRow = 1,
  PerGalleryColumn = 2,
  TwoSided = 3,
};

constexpr std::string_view to_string(Normalization n) noexcept {
  switch (n) {
    case Normalization::None: return "none";
    case Normalization::PerProbeRow: return "per_probe_row";
    case Normalization::PerGalleryColumn: return "per_gallery_column";
    case Normalization::TwoSided: return "two_sided";
  }
  return "none";
}

inline std::optional<Normalization> parse_normalization(std::string_view s) {
  for (auto n : {Normalization::None, Normalization::PerProbeRow, Normalization::PerGalleryColumn,
                 Normalization::TwoSided})
    if (s == to_string(n)) return n;
  return std::nullopt;
}

/// Probe x gallery score values plus how they were produced.
class ScoreMatrix {
 public:
  ScoreMatrix(Matrix values, Labels probe_labels, Labels gallery_labels, Polarity polarity,
              Normalization normalization = Normalization::None)
      : values_(std::move(values)),
        probe_labels_(std::move(probe_labels)),
        gallery_labels_(std::move(gallery_labels)),
        polarity_(polarity),
        normalization_(normalization) {
    detail::check(static_cast<std::size_t>(values_.rows()) == probe_labels_.size(),
                  "ScoreMatrix: one row per probe label");
    detail::check(static_cast<std::size_t>(values_.cols()) == gallery_labels_.size(),
                  "ScoreMatrix: one column per gallery label");
    detail::check(values_.allFinite(), "ScoreMatrix: all values finite");
  }

  std::size_t probes() const noexcept { return probe_labels_.size(); }
  std::size_t gallery() const noexcept { return gallery_labels_.size(); }
  const Matrix& values() const noexcept { return values_; }
  double operator()(std::size_t i, std::size_t j) const {
    return values_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  const Labels& probe_labels() const noexcept { return probe_labels_; }
  const Labels& gallery_labels() const noexcept { return gallery_labels_; }
  Polarity polarity() const noexcept { return polarity_; }
  Normalization normalization() const noexcept { return normalization_; }

 private:
  Matrix values_;
  Labels probe_labels_;
  Labels gallery_labels_;
  Polarity polarity_;
  Normalization normalization_;
};

/// Matching rates at ranks 1..R. `ranks` holds the mean over folds; a single
/// evaluation is stored as one fold with zero spread.
class CmcResult {
 public:
  explicit CmcResult(std::vector<std::vector<double>> folds) : folds_(std::move(folds)) {
    detail::check(!folds_.empty(), "CmcResult: at least one fold");
    const auto max_rank = folds_.front().size();
    detail::check(max_rank >= 1, "CmcResult: at least one rank");
    for (const auto& f : folds_) {
      detail::check(f.size() == max_rank, "CmcResult: folds share max rank");
      for (std::size_t r = 0; r < f.size(); ++r) {
        detail::check(f[r] >= 0.0 && f[r] <= 1.0, "CmcResult: rates in [0, 1]");
        if (r > 0) detail::check(f[r - 1] <= f[r], "CmcResult: monotone nondecreasing");
      }
    }
    const auto n = static_cast<double>(folds_.size());
    mean_.assign(max_rank, 0.0);
    stddev_.assign(max_rank, 0.0);
    for (std::size_t r = 0; r < max_rank; ++r) {
      double sum = 0.0;
      for (const auto& f : folds_) sum += f[r];
      mean_[r] = sum / n;
      if (folds_.size() > 1) {
        double ss = 0.0;
        for (const auto& f : folds_) ss += (f[r] - mean_[r]) * (f[r] - mean_[r]);
        stddev_[r] = std::sqrt(ss / (n - 1.0));
      }
    }
  }

  std::size_t max_rank() const noexcept { return mean_.size(); }
  const std::vector<double>& ranks() const noexcept { return mean_; }
  /// 1-based rank lookup.
  double at_rank(std::size_t r) const { return mean_.at(r - 1); }
  const std::vector<std::vector<double>>& folds() const noexcept { return folds_; }
  const std::vector<double>& stddev() const noexcept { return stddev_; }

 private:
  std::vector<std::vector<double>> folds_;
  std::vector<double> mean_;
  std::vector<double> stddev_;
};

}  // namespace xqreid
