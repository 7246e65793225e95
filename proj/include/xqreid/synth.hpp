#pragma once

// Synthetic cross-view data with known ground truth, and brute-force oracles
// used to check the production matcher and solver. The oracles are plain
// loops and deliberately share no code with matcher.hpp or xqda.hpp.

#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "xqreid/datamodel.hpp"
#include "xqreid/error.hpp"
#include "xqreid/ingest.hpp"

namespace xqreid::synth {

struct CrossViewParams {
  std::size_t n_ids = 100;
  std::size_t dim = 32;
  std::size_t images_per_view = 1;
  double view_noise = 0.0;
  double identity_spread = 1.0;
  /// Magnitude of the per-gallery-sample score offset returned in
  /// SyntheticViews::gallery_bias. Features themselves are never biased.
  double column_bias = 0.0;
  /// The view transform is the orthogonal factor of I + view_shift * G with G
  /// standard normal; large values approach a uniformly random rotation.
  double view_shift = 0.2;
  std::uint64_t seed = 0;
};

struct SyntheticViews {
  FeatureSet view_a;
  FeatureSet view_b;
  Matrix view_transform;
  /// One additive score offset per view_b sample, in [0, column_bias).
  std::vector<double> gallery_bias;
};

inline std::string identity_label(std::size_t k) {
  std::string digits = std::to_string(k);
  if (digits.size() < 5) digits.insert(0, 5 - digits.size(), '0');
  return "id" + digits;
}

/// Stateless 64-bit mixer for deriving independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// `n` offsets drawn uniformly from [0, magnitude).
inline std::vector<double> draw_column_bias(std::size_t n, double magnitude, std::uint64_t seed) {
  require(std::isfinite(magnitude) && magnitude >= 0.0, ErrorCode::BadParams, "column_bias must be >= 0");
  std::vector<double> bias(n, 0.0);
  if (magnitude == 0.0) return bias;
  std::mt19937_64 rng(mix_seed(seed, 0xB1A5));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& b : bias) b = magnitude * unit(rng);
  return bias;
}

/// Adds bias[j] to every score in gallery column j.
inline ScoreMatrix inject_column_bias(const ScoreMatrix& scores, const std::vector<double>& bias) {
  require(bias.size() == scores.gallery(), ErrorCode::DimMismatch, "one bias value per gallery column");
  Matrix values = scores.values();
  for (Eigen::Index j = 0; j < values.cols(); ++j) values.col(j).array() += bias[static_cast<std::size_t>(j)];
  return ScoreMatrix(std::move(values), scores.probe_labels(), scores.gallery_labels(), scores.polarity(),
                     scores.normalization());
}

/// Orthogonal factor of (I + shift * G), columns signed so R's diagonal is
/// positive.
inline Matrix random_view_transform(std::size_t dim, double shift, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(dim);
  Matrix a = Matrix::Identity(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i) a(i, j) += shift * normal(rng);
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  const Matrix r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < d; ++j)
    if (r(j, j) < 0.0) q.col(j) = -q.col(j);
  return q;
}

/// Each identity gets a latent center with spread `identity_spread`;
/// view_a samples are center + noise, view_b samples are R * center + noise.
inline SyntheticViews gen_cross_view(const CrossViewParams& p) {
  require(p.n_ids >= 2, ErrorCode::BadParams, "n_ids must be >= 2");
  require(p.dim >= 2, ErrorCode::BadParams, "dim must be >= 2");
  require(p.images_per_view >= 1, ErrorCode::BadParams, "images_per_view must be >= 1");
  require(p.view_noise >= 0.0 && p.identity_spread >= 0.0 && p.column_bias >= 0.0 && p.view_shift >= 0.0,
          ErrorCode::BadParams, "noise, spread, bias and shift must be >= 0");

  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Matrix transform = random_view_transform(p.dim, p.view_shift, rng);
  const auto d = static_cast<Eigen::Index>(p.dim);
  const auto m = static_cast<Eigen::Index>(p.n_ids * p.images_per_view);

  Matrix a(d, m), b(d, m);
  Labels labels;
  labels.reserve(static_cast<std::size_t>(m));
  Vector center(d), noise(d);
  Eigen::Index col = 0;
  for (std::size_t id = 0; id < p.n_ids; ++id) {
    for (Eigen::Index k = 0; k < d; ++k) center[k] = p.identity_spread * normal(rng);
    const Vector shifted = transform * center;
    for (std::size_t img = 0; img < p.images_per_view; ++img, ++col) {
      for (Eigen::Index k = 0; k < d; ++k) noise[k] = p.view_noise * normal(rng);
      a.col(col) = center + noise;
      for (Eigen::Index k = 0; k < d; ++k) noise[k] = p.view_noise * normal(rng);
      b.col(col) = shifted + noise;
      labels.push_back(identity_label(id));
    }
  }
  auto bias = draw_column_bias(static_cast<std::size_t>(m), p.column_bias, p.seed);
  return SyntheticViews{FeatureSet("a", std::move(a), labels), FeatureSet("b", std::move(b), labels), transform,
                        std::move(bias)};
}

/// Gallery-only vectors from fresh identities seen through view b.
inline FeatureSet gen_distractors(const CrossViewParams& p, std::size_t count) {
  require(count >= 1, ErrorCode::BadParams, "distractor count must be >= 1");
  std::mt19937_64 transform_rng(p.seed);
  const Matrix transform = random_view_transform(p.dim, p.view_shift, transform_rng);
  std::mt19937_64 rng(mix_seed(p.seed, 0xD157));
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = static_cast<Eigen::Index>(p.dim);
  Matrix out(d, static_cast<Eigen::Index>(count));
  Vector center(d);
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    for (Eigen::Index k = 0; k < d; ++k) center[k] = p.identity_spread * normal(rng);
    out.col(j) = transform * center;
    for (Eigen::Index k = 0; k < d; ++k) out(k, j) += p.view_noise * normal(rng);
  }
  return mark_distractors(FeatureSet("distractors", std::move(out), Labels(count, "distractor")));
}

/// Random difference sets with anisotropic per-axis scales, for solver tests.
inline DifferenceSets gen_difference_sets(std::size_t dim, std::size_t n_s, std::size_t n_d, std::uint64_t seed) {
  require(dim >= 1 && n_s >= 1 && n_d >= 1, ErrorCode::BadParams, "dim, n_s, n_d must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> scale(0.2, 3.0);
  const auto d = static_cast<Eigen::Index>(dim);
  Vector s_scale(d), d_scale(d);
  for (Eigen::Index k = 0; k < d; ++k) {
    s_scale[k] = scale(rng);
    d_scale[k] = scale(rng);
  }
  Matrix mixing(d, d);
  for (Eigen::Index j = 0; j < d; ++j)
    for (Eigen::Index i = 0; i < d; ++i) mixing(i, j) = normal(rng);
  Matrix xs(d, static_cast<Eigen::Index>(n_s)), xd(d, static_cast<Eigen::Index>(n_d));
  for (Eigen::Index j = 0; j < xs.cols(); ++j)
    for (Eigen::Index i = 0; i < d; ++i) xs(i, j) = s_scale[i] * normal(rng);
  for (Eigen::Index j = 0; j < xd.cols(); ++j)
    for (Eigen::Index i = 0; i < d; ++i) xd(i, j) = d_scale[i] * normal(rng);
  xs = mixing * xs;
  xd = mixing * xd;
  return DifferenceSets(std::move(xs), std::move(xd), seed);
}

/// Reference pairwise scores: (p - g)^T M (p - g) by nested loops, no
/// blocking, no threads. Inputs must already be in the metric's space.
inline ScoreMatrix oracle_pairwise_scores(const Matrix& m, const FeatureSet& probes, const FeatureSet& gallery) {
  const auto r = static_cast<std::size_t>(m.rows());
  require(m.rows() == m.cols() && probes.dim() == r && gallery.dim() == r, ErrorCode::DimMismatch,
          "oracle: metric/probe/gallery dimensions disagree");
  Matrix out(static_cast<Eigen::Index>(probes.size()), static_cast<Eigen::Index>(gallery.size()));
  std::vector<double> delta(r);
  for (std::size_t i = 0; i < probes.size(); ++i) {
    for (std::size_t j = 0; j < gallery.size(); ++j) {
      for (std::size_t a = 0; a < r; ++a)
        delta[a] = probes.vectors()(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(i)) -
                   gallery.vectors()(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(j));
      double total = 0.0;
      for (std::size_t a = 0; a < r; ++a) {
        double row = 0.0;
        for (std::size_t b = 0; b < r; ++b) row += m(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) * delta[b];
        total += delta[a] * row;
      }
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = total;
    }
  }
  return ScoreMatrix(std::move(out), probes.labels(), gallery.labels(), Polarity::SmallerIsBetter);
}

namespace detail {

inline std::vector<double> naive_matvec(const Matrix& a, const Eigen::Ref<const Vector>& x) {
  std::vector<double> y(static_cast<std::size_t>(a.rows()), 0.0);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index k = 0; k < a.cols(); ++k) y[static_cast<std::size_t>(i)] += a(i, k) * x[k];
  return y;
}

}  // namespace detail

/// max_i |A w_i - lambda_i B w_i| / |A w_i| over retained columns, where
/// (A, B) = (sigma_s, sigma_d), swapped when the model inverted the quotient.
inline double oracle_eigen_residual(const XqdaModel& model) {
  require(model.covariances().has_value(), ErrorCode::Validation,
          "oracle_eigen_residual needs a model with covariances");
  const bool inverted = model.selection().invert_quotient;
  const Matrix& a = inverted ? model.covariances()->sigma_d() : model.covariances()->sigma_s();
  const Matrix& b = inverted ? model.covariances()->sigma_s() : model.covariances()->sigma_d();
  double worst = 0.0;
  for (Eigen::Index i = 0; i < model.w().cols(); ++i) {
    const Vector w = model.w().col(i);
    const auto aw = detail::naive_matvec(a, w);
    const auto bw = detail::naive_matvec(b, w);
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < aw.size(); ++k) {
      const double diff = aw[k] - model.eigenvalues()[i] * bw[k];
      num += diff * diff;
      den += aw[k] * aw[k];
    }
    const double rel = den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
    worst = std::max(worst, rel);
  }
  return worst;
}

struct DatasetFiles {
  std::filesystem::path manifest;
  std::filesystem::path view_a;
  std::filesystem::path view_b;
  std::optional<std::filesystem::path> distractors;
};

/// Writes view_a/view_b (and optional distractors) plus a manifest naming
/// them with paths relative to `dir`.
inline DatasetFiles write_dataset(const std::filesystem::path& dir, const std::string& name,
                                  const SyntheticViews& views, const std::optional<FeatureSet>& distractors,
                                  FeatureFormat format) {
  std::filesystem::create_directories(dir);
  const std::string ext = format == FeatureFormat::Binary ? ".bin" : ".csv";
  DatasetFiles files{dir / "manifest.txt", dir / ("view_a" + ext), dir / ("view_b" + ext), std::nullopt};
  save_feature_set(views.view_a, files.view_a, format);
  save_feature_set(views.view_b, files.view_b, format);
  if (distractors) {
    files.distractors = dir / ("distractors" + ext);
    save_feature_set(*distractors, *files.distractors, format);
  }
  std::ofstream out(files.manifest, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + files.manifest.string());
  out << "# synthetic cross-view dataset\n"
      << "name=" << name << '\n'
      << "expected_dim=" << views.view_a.dim() << '\n'
      << "view.a=" << files.view_a.filename().string() << '\n'
      << "view.b=" << files.view_b.filename().string() << '\n';
  if (files.distractors) out << "distractor=" << files.distractors->filename().string() << '\n';
  return files;
}

}  // namespace xqreid::synth
