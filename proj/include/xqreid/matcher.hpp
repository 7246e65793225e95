#pragma once

// Probe-vs-gallery scoring under a learned metric:
//   d(u, v) = (u - v)^T M (u - v)
// M = inv(Sigma_s') - inv(Sigma_d') is indefinite, so scores may be negative.
// Raw values are used for ranking.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

#include "xqreid/datamodel.hpp"
#include "xqreid/detail/binary_io.hpp"
#include "xqreid/detail/text.hpp"
#include "xqreid/error.hpp"
#include "xqreid/xqda.hpp"

namespace xqreid {

inline double mahalanobis_distance(const Matrix& m, const Eigen::Ref<const Vector>& u,
                                   const Eigen::Ref<const Vector>& v) {
  require(m.rows() == m.cols() && m.rows() == u.size() && u.size() == v.size(), ErrorCode::DimMismatch,
          "metric is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ", vectors have " +
              std::to_string(u.size()) + " and " + std::to_string(v.size()) + " entries");
  const Vector delta = u - v;
  return delta.dot(m * delta);
}

struct ScoringOptions {
  /// 0 selects std::thread::hardware_concurrency().
  unsigned threads = 1;
  /// Upper bound on the bytes of one materialized row block.
  std::size_t memory_budget_bytes = std::size_t{1} << 30;
};

namespace detail {

inline unsigned resolve_threads(unsigned requested) {
  if (requested != 0) return requested;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs body(i) for i in [begin, end) on up to `threads` workers. Each index
// is handled by exactly one worker, so results do not depend on the count.
inline void parallel_rows(std::size_t begin, std::size_t end, unsigned threads,
                          const std::function<void(std::size_t)>& body) {
  const std::size_t n = end - begin;
  const std::size_t workers = std::min<std::size_t>(threads, n);
  if (workers <= 1) {
    for (std::size_t i = begin; i < end; ++i) body(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = begin + w * chunk;
    const std::size_t hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body] {
      for (std::size_t i = lo; i < hi; ++i) body(i);
    });
  }
}

}  // namespace detail

/// Streams the score matrix of already-projected sets in row blocks no larger
/// than the memory budget. `sink(first_row, block)` receives each block.
inline void for_each_score_block(const Matrix& metric, const FeatureSet& probes, const FeatureSet& gallery,
                                 const ScoringOptions& options,
                                 const std::function<void(std::size_t, const Matrix&)>& sink) {
  const auto r = static_cast<std::size_t>(metric.rows());
  require(metric.rows() == metric.cols(), ErrorCode::DimMismatch, "metric must be square");
  require(probes.dim() == r && gallery.dim() == r, ErrorCode::DimMismatch,
          "probe dim " + std::to_string(probes.dim()) + ", gallery dim " + std::to_string(gallery.dim()) +
              ", metric dim " + std::to_string(r));

  const Matrix& p = probes.vectors();
  const Matrix& g = gallery.vectors();
  const Matrix mp = metric * p;
  const Matrix mg = metric * g;
  const std::size_t n_gallery = gallery.size();
  const std::size_t row_bytes = std::max<std::size_t>(1, n_gallery * sizeof(double));
  const std::size_t block_rows = std::max<std::size_t>(1, options.memory_budget_bytes / row_bytes);
  const unsigned threads = detail::resolve_threads(options.threads);
  const auto dim = static_cast<Eigen::Index>(r);

  for (std::size_t first = 0; first < probes.size(); first += block_rows) {
    const std::size_t last = std::min(probes.size(), first + block_rows);
    Matrix block(static_cast<Eigen::Index>(last - first), static_cast<Eigen::Index>(n_gallery));
    detail::parallel_rows(first, last, threads, [&](std::size_t i) {
      const auto pi = static_cast<Eigen::Index>(i);
      for (std::size_t j = 0; j < n_gallery; ++j) {
        const auto gj = static_cast<Eigen::Index>(j);
        // (p - g)^T (M p - M g): zero exactly when p == g.
        double acc = 0.0;
        for (Eigen::Index k = 0; k < dim; ++k) acc += (p(k, pi) - g(k, gj)) * (mp(k, pi) - mg(k, gj));
        block(static_cast<Eigen::Index>(i - first), gj) = acc;
      }
    });
    sink(first, block);
  }
}

/// Scores sets that already live in the metric's space.
inline ScoreMatrix score_with_metric(const Matrix& metric, const FeatureSet& probes, const FeatureSet& gallery,
                                     const ScoringOptions& options = {}) {
  Matrix values(static_cast<Eigen::Index>(probes.size()), static_cast<Eigen::Index>(gallery.size()));
  for_each_score_block(metric, probes, gallery, options, [&](std::size_t first, const Matrix& block) {
    values.middleRows(static_cast<Eigen::Index>(first), block.rows()) = block;
  });
  return ScoreMatrix(std::move(values), probes.labels(), gallery.labels(), Polarity::SmallerIsBetter);
}

/// Projects both sets through W, then scores every probe/gallery pair.
inline ScoreMatrix score_matrix(const XqdaModel& model, const FeatureSet& probes, const FeatureSet& gallery,
                                const ScoringOptions& options = {}) {
  require(probes.dim() == model.input_dim() && gallery.dim() == model.input_dim(), ErrorCode::DimMismatch,
          "probe dim " + std::to_string(probes.dim()) + ", gallery dim " + std::to_string(gallery.dim()) +
              ", model expects " + std::to_string(model.input_dim()));
  return score_with_metric(model.metric(), project(model, probes), project(model, gallery), options);
}

/// Gallery indices of one probe row, best first; ties go to the lower index.
inline std::vector<std::size_t> ranked_gallery(const ScoreMatrix& scores, std::size_t probe, std::size_t k) {
  require(probe < scores.probes(), ErrorCode::RankOutOfRange, "probe index out of range");
  std::vector<std::size_t> idx(scores.gallery());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const bool ascending = scores.polarity() == Polarity::SmallerIsBetter;
  const auto better = [&](std::size_t a, std::size_t b) {
    const double va = scores(probe, a);
    const double vb = scores(probe, b);
    if (va != vb) return ascending ? va < vb : va > vb;
    return a < b;
  };
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  idx.resize(k);
  return idx;
}

// Score exports. CSV has a `probe_label,gallery_label,value` header and one
// row per pair in row-major order. Binary, little-endian:
//   "XSCM" | u32 version=1 | u32 probes | u32 gallery | u8 polarity |
//   u8 normalization | probes x (u16 len, label) | gallery x (u16 len, label) |
//   probes*gallery f64, row-major

inline constexpr char kScoreMagic[5] = "XSCM";
inline constexpr std::uint32_t kScoreVersion = 1;

inline void save_scores_csv(const ScoreMatrix& scores, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
  out << "probe_label,gallery_label,value\n";
  for (std::size_t i = 0; i < scores.probes(); ++i)
    for (std::size_t j = 0; j < scores.gallery(); ++j)
      out << scores.probe_labels()[i] << ',' << scores.gallery_labels()[j] << ','
          << detail::format_double(scores(i, j)) << '\n';
  out.flush();
  require(static_cast<bool>(out), ErrorCode::IoError, "write failed: " + path.string());
}

inline void save_scores_binary(const ScoreMatrix& scores, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
  out.write(kScoreMagic, 4);
  detail::write_le<std::uint32_t>(out, kScoreVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(scores.probes()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(scores.gallery()));
  detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(scores.polarity()));
  detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(scores.normalization()));
  for (const auto& l : scores.probe_labels()) detail::write_label(out, l);
  for (const auto& l : scores.gallery_labels()) detail::write_label(out, l);
  for (std::size_t i = 0; i < scores.probes(); ++i)
    for (std::size_t j = 0; j < scores.gallery(); ++j) detail::write_le<double>(out, scores(i, j));
  out.flush();
  require(static_cast<bool>(out), ErrorCode::IoError, "write failed: " + path.string());
}

inline ScoreMatrix load_scores_binary(const std::filesystem::path& path) {
  require(std::filesystem::is_regular_file(path), ErrorCode::FileMissing, path.string());
  std::ifstream in(path, std::ios::binary);
  detail::LeReader reader(in, path.string());
  reader.expect_magic(kScoreMagic);
  const auto version = reader.read<std::uint32_t>();
  require(version == kScoreVersion, ErrorCode::FormatError, path.string() + ": unsupported version");
  const auto p = reader.read<std::uint32_t>();
  const auto g = reader.read<std::uint32_t>();
  const auto polarity = reader.read<std::uint8_t>();
  const auto normalization = reader.read<std::uint8_t>();
  require(polarity <= 1 && normalization <= 3, ErrorCode::FormatError, path.string() + ": bad flags");
  Labels probe_labels(p), gallery_labels(g);
  for (auto& l : probe_labels) l = detail::read_label(reader);
  for (auto& l : gallery_labels) l = detail::read_label(reader);
  Matrix values(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(g));
  for (Eigen::Index i = 0; i < values.rows(); ++i)
    for (Eigen::Index j = 0; j < values.cols(); ++j) values(i, j) = reader.read<double>();
  reader.expect_end();
  return ScoreMatrix(std::move(values), std::move(probe_labels), std::move(gallery_labels),
                     static_cast<Polarity>(polarity), static_cast<Normalization>(normalization));
}

}  // namespace xqreid
