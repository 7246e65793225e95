#pragma once

// Feature files and dataset manifests.
//
// Two feature formats are supported, detected by the first four bytes:
//
//   CSV     first line `dim=<d>,count=<m>`, then one `label,v1,...,vd` row
//           per sample, values written with 17 significant digits.
//   binary  little-endian: "XRID" | u32 version=1 | u32 dim | u32 count |
//           count x (u16 label length, label bytes, dim x f64)
//
// Manifests are flat key=value files:
//
//   name=viper
//   expected_dim=4096
//   view.a=cam_a.bin
//   view.b=cam_b.bin
//   distractor=extra.bin     # optional, gallery-only padding
//   notes=free text
//
// Relative paths are resolved against the manifest's directory.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "xqreid/datamodel.hpp"
#include "xqreid/detail/binary_io.hpp"
#include "xqreid/detail/text.hpp"
#include "xqreid/error.hpp"

namespace xqreid {

enum class FeatureFormat { Csv, Binary };

inline constexpr char kFeatureMagic[5] = "XRID";
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::string_view kDistractorPrefix = "__distractor_";

/// Header fields of a feature file, read without loading the vectors.
struct FeatureFileInfo {
  FeatureFormat format = FeatureFormat::Binary;
  std::size_t dim = 0;
  std::size_t count = 0;
};

namespace detail {

inline bool has_binary_magic(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  char magic[4] = {};
  in.read(magic, 4);
  return in.gcount() == 4 && std::string_view(magic, 4) == std::string_view(kFeatureMagic, 4);
}

inline std::pair<std::size_t, std::size_t> parse_csv_header(std::string_view line,
                                                            const std::string& source) {
  const auto parts = split(trim(line), ',');
  auto field = [&](std::string_view part, std::string_view key) -> std::size_t {
    part = trim(part);
    if (part.substr(0, key.size()) != key)
      fail(ErrorCode::FormatError, source + ":1: expected header `dim=<d>,count=<m>`");
    const auto v = parse_integer<std::size_t>(part.substr(key.size()));
    if (!v) fail(ErrorCode::FormatError, source + ":1: bad header value in `" + std::string(part) + "`");
    return *v;
  };
  if (parts.size() != 2) fail(ErrorCode::FormatError, source + ":1: expected header `dim=<d>,count=<m>`");
  return {field(parts[0], "dim="), field(parts[1], "count=")};
}

inline void check_dim(std::size_t found, std::size_t expected, const std::string& source) {
  require(found == expected, ErrorCode::DimMismatch,
          source + ": found " + std::to_string(found) + ", expected " + std::to_string(expected));
}

inline FeatureSet load_csv(const std::filesystem::path& path, std::optional<std::size_t> expected_dim,
                           std::string view_id) {
  const auto source = path.string();
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + source);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::FormatError, source + ": empty file");
  const auto [dim, count] = parse_csv_header(line, source);
  require(dim >= 1, ErrorCode::FormatError, source + ":1: dim must be >= 1");
  require(count >= 1, ErrorCode::FormatError, source + ":1: empty feature set");
  if (expected_dim) check_dim(dim, *expected_dim, source);

  Matrix vectors(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(count));
  Labels labels;
  labels.reserve(count);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty()) continue;
    const auto where = source + ":" + std::to_string(line_no);
    require(labels.size() < count, ErrorCode::FormatError,
            where + ": more rows than declared count " + std::to_string(count));
    const auto fields = split(text, ',');
    require(fields.size() == dim + 1, ErrorCode::FormatError,
            where + ": expected " + std::to_string(dim + 1) + " fields, found " +
                std::to_string(fields.size()));
    const auto col = static_cast<Eigen::Index>(labels.size());
    for (std::size_t k = 0; k < dim; ++k) {
      const auto v = parse_double(fields[k + 1]);
      require(v.has_value(), ErrorCode::FormatError, where + ": bad number in field " + std::to_string(k + 2));
      require(std::isfinite(*v), ErrorCode::NonFiniteValue,
              "row " + std::to_string(col) + ", col " + std::to_string(k) + " (" + where + ")");
      vectors(static_cast<Eigen::Index>(k), col) = *v;
    }
    const auto label = trim(fields[0]);
    require(!label.empty(), ErrorCode::FormatError, where + ": empty label");
    labels.emplace_back(label);
  }
  require(labels.size() == count, ErrorCode::FormatError,
          source + ": declared count " + std::to_string(count) + " but found " +
              std::to_string(labels.size()) + " rows");
  return FeatureSet(std::move(view_id), std::move(vectors), std::move(labels));
}

inline FeatureSet load_binary(const std::filesystem::path& path, std::optional<std::size_t> expected_dim,
                              std::string view_id) {
  const auto source = path.string();
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::IoError, "cannot open " + source);
  LeReader reader(in, source);
  reader.expect_magic(kFeatureMagic);
  const auto version = reader.read<std::uint32_t>();
  require(version == kFeatureVersion, ErrorCode::FormatError,
          source + ": unsupported version " + std::to_string(version));
  const auto dim = reader.read<std::uint32_t>();
  const auto count = reader.read<std::uint32_t>();
  require(dim >= 1, ErrorCode::FormatError, source + ": dim must be >= 1 (offset 8)");
  require(count >= 1, ErrorCode::FormatError, source + ": empty feature set (offset 12)");
  if (expected_dim) check_dim(dim, *expected_dim, source);

  Matrix vectors(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(count));
  Labels labels;
  labels.reserve(count);
  for (std::uint32_t j = 0; j < count; ++j) {
    const auto label_offset = reader.offset();
    auto label = read_label(reader);
    require(!label.empty(), ErrorCode::FormatError,
            source + ": empty label at offset " + std::to_string(label_offset));
    labels.push_back(std::move(label));
    for (std::uint32_t k = 0; k < dim; ++k) {
      const double v = reader.read<double>();
      require(std::isfinite(v), ErrorCode::NonFiniteValue,
              "row " + std::to_string(j) + ", col " + std::to_string(k) + " (" + source + ")");
      vectors(k, j) = v;
    }
  }
  reader.expect_end();
  return FeatureSet(std::move(view_id), std::move(vectors), std::move(labels));
}

}  // namespace detail

/// Reads only the header of a feature file.
inline FeatureFileInfo read_feature_info(const std::filesystem::path& path) {
  require(std::filesystem::is_regular_file(path), ErrorCode::FileMissing, path.string());
  if (detail::has_binary_magic(path)) {
    std::ifstream in(path, std::ios::binary);
    detail::LeReader reader(in, path.string());
    reader.expect_magic(kFeatureMagic);
    const auto version = reader.read<std::uint32_t>();
    require(version == kFeatureVersion, ErrorCode::FormatError,
            path.string() + ": unsupported version " + std::to_string(version));
    const auto dim = reader.read<std::uint32_t>();
    const auto count = reader.read<std::uint32_t>();
    return {FeatureFormat::Binary, dim, count};
  }
  std::ifstream in(path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::FormatError, path.string() + ": empty file");
  const auto [dim, count] = detail::parse_csv_header(line, path.string());
  return {FeatureFormat::Csv, dim, count};
}

/// Loads a CSV or binary feature file; the format is detected from the magic.
/// The view id defaults to the file stem.
inline FeatureSet load_feature_set(const std::filesystem::path& path,
                                   std::optional<std::size_t> expected_dim = std::nullopt,
                                   std::optional<std::string> view_id = std::nullopt) {
  require(std::filesystem::is_regular_file(path), ErrorCode::FileMissing, path.string());
  auto id = view_id.value_or(path.stem().string());
  if (detail::has_binary_magic(path)) return detail::load_binary(path, expected_dim, std::move(id));
  return detail::load_csv(path, expected_dim, std::move(id));
}

inline void save_feature_set(const FeatureSet& fs, const std::filesystem::path& path, FeatureFormat format) {
  require(!fs.empty(), ErrorCode::FormatError, "refusing to save an empty feature set");
  require(fs.dim() <= 0xFFFFFFFFu && fs.size() <= 0xFFFFFFFFu, ErrorCode::FormatError,
          "feature set too large for u32 header");
  std::ofstream out(path, format == FeatureFormat::Binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + path.string());
  const auto& v = fs.vectors();
  if (format == FeatureFormat::Binary) {
    out.write(kFeatureMagic, 4);
    detail::write_le<std::uint32_t>(out, kFeatureVersion);
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(fs.dim()));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(fs.size()));
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      detail::write_label(out, fs.labels()[static_cast<std::size_t>(j)]);
      for (Eigen::Index k = 0; k < v.rows(); ++k) detail::write_le<double>(out, v(k, j));
    }
  } else {
    out << "dim=" << fs.dim() << ",count=" << fs.size() << '\n';
    for (Eigen::Index j = 0; j < v.cols(); ++j) {
      const auto& label = fs.labels()[static_cast<std::size_t>(j)];
      require(label.find_first_of(",\n\r") == std::string::npos, ErrorCode::FormatError,
              "label not representable in CSV: " + label);
      out << label;
      for (Eigen::Index k = 0; k < v.rows(); ++k) out << ',' << detail::format_double(v(k, j));
      out << '\n';
    }
  }
  out.flush();
  require(static_cast<bool>(out), ErrorCode::IoError, "write failed: " + path.string());
}

struct ViewEntry {
  std::string view_id;
  std::filesystem::path path;
};

struct DatasetManifest {
  std::string name;
  std::vector<ViewEntry> views;
  std::size_t expected_dim = 0;
  std::optional<std::filesystem::path> distractor_file;
  std::string notes;

  const ViewEntry* find_view(std::string_view id) const {
    for (const auto& v : views)
      if (v.view_id == id) return &v;
    return nullptr;
  }
};

/// Parses a manifest and checks every referenced file's header against
/// expected_dim.
inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  const auto entries = detail::read_key_values(path);
  const auto base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  DatasetManifest m;
  bool have_dim = false;
  for (const auto& e : entries) {
    const auto where = path.string() + ":" + std::to_string(e.line);
    if (e.key == "name") {
      m.name = e.value;
    } else if (e.key == "expected_dim") {
      const auto d = detail::parse_integer<std::size_t>(e.value);
      require(d.has_value() && *d >= 1, ErrorCode::SchemaError, where + ": expected_dim must be a positive integer");
      m.expected_dim = *d;
      have_dim = true;
    } else if (e.key == "distractor") {
      m.distractor_file = resolve(e.value);
    } else if (e.key == "notes") {
      m.notes = e.value;
    } else if (e.key.starts_with("view.")) {
      auto id = e.key.substr(5);
      require(!id.empty(), ErrorCode::SchemaError, where + ": empty view id");
      require(m.find_view(id) == nullptr, ErrorCode::SchemaError, where + ": duplicate view " + id);
      m.views.push_back({std::move(id), resolve(e.value)});
    } else {
      fail(ErrorCode::SchemaError, where + ": unknown key " + e.key);
    }
  }
  require(!m.name.empty(), ErrorCode::SchemaError, path.string() + ": missing name");
  require(have_dim, ErrorCode::SchemaError, path.string() + ": missing expected_dim");
  require(m.views.size() >= 2, ErrorCode::SchemaError, path.string() + ": at least two views required");

  auto check_file = [&](const std::filesystem::path& file) {
    const auto info = read_feature_info(file);
    require(info.dim == m.expected_dim, ErrorCode::CrossFileDimMismatch,
            file.string() + " has dim " + std::to_string(info.dim) + ", manifest expects " +
                std::to_string(m.expected_dim));
  };
  for (const auto& v : m.views) check_file(v.path);
  if (m.distractor_file) check_file(*m.distractor_file);
  return m;
}

inline bool is_distractor_label(std::string_view label) { return label.starts_with(kDistractorPrefix); }

/// Relabels gallery-only padding into the reserved `__distractor_<k>`
/// namespace so it can never match a probe.
inline FeatureSet mark_distractors(const FeatureSet& fs) {
  Labels labels;
  labels.reserve(fs.size());
  for (std::size_t k = 0; k < fs.size(); ++k) labels.push_back(std::string(kDistractorPrefix) + std::to_string(k));
  return FeatureSet(fs.view_id(), fs.vectors(), std::move(labels));
}

}  // namespace xqreid
