#pragma once

// Min-max score normalization N = (x - min) / (max - min) along one axis.
//
// Per-row normalization is a strictly increasing affine map on every
// non-constant row, so it never changes a row's ordering and therefore never
// changes a CMC curve. Per-column normalization rescales each gallery item
// across all probes and can reorder rows; it is the default axis.

#include "xqreid/datamodel.hpp"
#include "xqreid/error.hpp"

namespace xqreid {

enum class NormalizationAxis { PerProbeRow, PerGalleryColumn, TwoSided };

inline constexpr NormalizationAxis kDefaultNormalizationAxis = NormalizationAxis::PerGalleryColumn;

constexpr Normalization to_normalization(NormalizationAxis axis) noexcept {
  switch (axis) {
    case NormalizationAxis::PerProbeRow: return Normalization::PerProbeRow;
    case NormalizationAxis::PerGalleryColumn: return Normalization::PerGalleryColumn;
    case NormalizationAxis::TwoSided: return Normalization::TwoSided;
  }
  return Normalization::None;
}

inline std::optional<NormalizationAxis> parse_axis(std::string_view s) {
  if (s == "per_probe_row") return NormalizationAxis::PerProbeRow;
  if (s == "per_gallery_column") return NormalizationAxis::PerGalleryColumn;
  if (s == "two_sided") return NormalizationAxis::TwoSided;
  return std::nullopt;
}

constexpr std::string_view to_string(NormalizationAxis axis) noexcept {
  return to_string(to_normalization(axis));
}

namespace detail {

// Constant slices map to 0.5.
template <typename Slice>
void minmax_in_place(Slice&& slice) {
  const double lo = slice.minCoeff();
  const double hi = slice.maxCoeff();
  if (hi == lo) {
    slice.setConstant(0.5);
    return;
  }
  const double span = hi - lo;
  for (Eigen::Index k = 0; k < slice.size(); ++k) slice(k) = (slice(k) - lo) / span;
}

}  // namespace detail

inline ScoreMatrix minmax_normalize(const ScoreMatrix& scores,
                                    NormalizationAxis axis = kDefaultNormalizationAxis) {
  require(scores.normalization() == Normalization::None, ErrorCode::AlreadyNormalized,
          "scores already normalized (" + std::string(to_string(scores.normalization())) + ")");
  Matrix values = scores.values();
  if (values.size() > 0) {
    if (axis == NormalizationAxis::PerGalleryColumn || axis == NormalizationAxis::TwoSided)
      for (Eigen::Index j = 0; j < values.cols(); ++j) detail::minmax_in_place(values.col(j));
    if (axis == NormalizationAxis::PerProbeRow || axis == NormalizationAxis::TwoSided)
      for (Eigen::Index i = 0; i < values.rows(); ++i) detail::minmax_in_place(values.row(i));
  }
  return ScoreMatrix(std::move(values), scores.probe_labels(), scores.gallery_labels(), scores.polarity(),
                     to_normalization(axis));
}

}  // namespace xqreid
