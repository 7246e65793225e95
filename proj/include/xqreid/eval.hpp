#pragma once

// CMC evaluation, identity splits and the repeated-trial experiment harness.
//
// Protocol: for each of k trials the shared identities are shuffled and split
// in half. XQDA is trained on the training half; test probes from one view
// are ranked against the test gallery of the other view (plus distractors),
// and CMC is computed with and without min-max normalization.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "xqreid/datamodel.hpp"
#include "xqreid/detail/text.hpp"
#include "xqreid/error.hpp"
#include "xqreid/ingest.hpp"
#include "xqreid/matcher.hpp"
#include "xqreid/normalize.hpp"
#include "xqreid/synth.hpp"
#include "xqreid/xqda.hpp"

namespace xqreid {

struct Fold {
  Labels train;
  Labels test;
};

struct SplitPlan {
  std::vector<Fold> folds;
  std::uint64_t seed = 0;
  std::size_t k = 0;
};

/// k independent half/half identity splits. Labels are deduplicated and
/// sorted first, so the plan depends only on the label set, k and seed. With
/// an odd count the test half gets the extra identity.
inline SplitPlan make_splits(const Labels& labels, std::size_t k, std::uint64_t seed) {
  std::vector<Label> ids(labels.begin(), labels.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  require(k >= 2, ErrorCode::TooFewIdentities, "k must be >= 2");
  require(ids.size() >= k && ids.size() >= 2, ErrorCode::TooFewIdentities,
          std::to_string(ids.size()) + " identities for " + std::to_string(k) + " folds");

  SplitPlan plan{{}, seed, k};
  std::mt19937_64 rng(seed);
  const auto n_train = ids.size() / 2;
  for (std::size_t f = 0; f < k; ++f) {
    auto shuffled = ids;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    Fold fold;
    fold.train.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(n_train));
    fold.test.assign(shuffled.begin() + static_cast<std::ptrdiff_t>(n_train), shuffled.end());
    std::sort(fold.train.begin(), fold.train.end());
    std::sort(fold.test.begin(), fold.test.end());
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

/// Per-rank matching rates for one score matrix. A probe's rank is the
/// 1-based position of its best same-label gallery item when the row is
/// sorted best-first with ties broken by gallery index.
inline std::vector<double> cmc_rates(const ScoreMatrix& scores, std::size_t max_rank) {
  require(max_rank >= 1 && max_rank <= scores.gallery(), ErrorCode::RankOutOfRange,
          "max_rank " + std::to_string(max_rank) + " outside [1, " + std::to_string(scores.gallery()) + "]");
  require(scores.probes() >= 1, ErrorCode::EmptyInput, "no probes");
  const bool ascending = scores.polarity() == Polarity::SmallerIsBetter;
  const auto& gl = scores.gallery_labels();
  std::vector<std::size_t> hits(max_rank, 0);

  for (std::size_t i = 0; i < scores.probes(); ++i) {
    const auto& label = scores.probe_labels()[i];
    const auto precedes = [&](std::size_t a, std::size_t b) {
      const double va = scores(i, a), vb = scores(i, b);
      if (va != vb) return ascending ? va < vb : va > vb;
      return a < b;
    };
    std::size_t best = scores.gallery();
    for (std::size_t j = 0; j < scores.gallery(); ++j)
      if (gl[j] == label && (best == scores.gallery() || precedes(j, best))) best = j;
    require(best != scores.gallery(), ErrorCode::ProbeLabelAbsent, label);

    std::size_t ahead = 0;
    for (std::size_t j = 0; j < scores.gallery(); ++j)
      if (j != best && precedes(j, best)) ++ahead;
    if (ahead < max_rank) ++hits[ahead];
  }

  std::vector<double> rates(max_rank);
  std::size_t cumulative = 0;
  const auto n = static_cast<double>(scores.probes());
  for (std::size_t r = 0; r < max_rank; ++r) {
    cumulative += hits[r];
    rates[r] = static_cast<double>(cumulative) / n;
  }
  return rates;
}

inline CmcResult cmc(const ScoreMatrix& scores, std::size_t max_rank) {
  return CmcResult({cmc_rates(scores, max_rank)});
}

struct ExperimentConfig {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::optional<double> ridge;
  RankPolicy r_policy = EigenvalueThreshold{1.0};
  std::size_t negatives_per_positive = 1;
  NormalizationAxis normalization_axis = kDefaultNormalizationAxis;
  bool invert_quotient = false;
  std::string probe_view;
  std::string gallery_view;
  std::size_t max_rank = 20;
  /// Magnitude of a synthetic additive per-gallery-column score offset.
  double column_bias = 0.0;
  bool single_gallery_shot = false;
  unsigned threads = 1;
};

inline std::string format_rank_policy(const RankPolicy& policy) {
  if (const auto* f = std::get_if<FixedRank>(&policy)) return "fixed:" + std::to_string(f->r);
  return "threshold:" + detail::format_double(std::get<EigenvalueThreshold>(policy).tau);
}

/// Accepts `fixed:<r>`, `threshold:<tau>` or bare `threshold` (tau = 1).
inline RankPolicy parse_rank_policy(std::string_view text) {
  text = detail::trim(text);
  if (text == "threshold") return EigenvalueThreshold{1.0};
  if (text.starts_with("threshold:")) {
    const auto tau = detail::parse_double(text.substr(10));
    require(tau.has_value(), ErrorCode::SchemaError, "bad threshold in r_policy: " + std::string(text));
    return EigenvalueThreshold{*tau};
  }
  if (text.starts_with("fixed:")) {
    const auto r = detail::parse_integer<std::size_t>(text.substr(6));
    require(r.has_value() && *r >= 1, ErrorCode::SchemaError, "bad rank in r_policy: " + std::string(text));
    return FixedRank{*r};
  }
  fail(ErrorCode::SchemaError, "r_policy must be fixed:<r> or threshold:<tau>, got " + std::string(text));
}

/// Applies one `key=value` setting; returns false for an unknown key.
inline bool apply_config_value(ExperimentConfig& c, const std::string& key, const std::string& value) {
  auto bad = [&](const char* what) { fail(ErrorCode::SchemaError, key + ": " + what + ", got '" + value + "'"); };
  auto to_size = [&] {
    const auto v = detail::parse_integer<std::size_t>(value);
    if (!v) bad("expected a nonnegative integer");
    return *v;
  };
  auto to_double = [&] {
    const auto v = detail::parse_double(value);
    if (!v) bad("expected a number");
    return *v;
  };
  auto to_bool = [&] {
    const auto v = detail::parse_bool(value);
    if (!v) bad("expected true/false");
    return *v;
  };
  if (key == "k") c.k = to_size();
  else if (key == "seed") {
    const auto v = detail::parse_integer<std::uint64_t>(value);
    if (!v) bad("expected a nonnegative integer");
    c.seed = *v;
  } else if (key == "ridge") {
    if (value == "auto") c.ridge.reset();
    else c.ridge = to_double();
  } else if (key == "r_policy") c.r_policy = parse_rank_policy(value);
  else if (key == "negatives_per_positive") c.negatives_per_positive = to_size();
  else if (key == "normalization_axis") {
    const auto axis = parse_axis(value);
    if (!axis) bad("expected per_probe_row, per_gallery_column or two_sided");
    c.normalization_axis = *axis;
  } else if (key == "invert_quotient") c.invert_quotient = to_bool();
  else if (key == "probe_view") c.probe_view = value;
  else if (key == "gallery_view") c.gallery_view = value;
  else if (key == "max_rank") c.max_rank = to_size();
  else if (key == "column_bias") c.column_bias = to_double();
  else if (key == "single_gallery_shot") c.single_gallery_shot = to_bool();
  else if (key == "threads") c.threads = static_cast<unsigned>(to_size());
  else return false;
  return true;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path, ExperimentConfig base = {}) {
  for (const auto& e : detail::read_key_values(path))
    require(apply_config_value(base, e.key, e.value), ErrorCode::SchemaError,
            path.string() + ":" + std::to_string(e.line) + ": unknown key " + e.key);
  return base;
}

inline std::string format_experiment_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "k=" << c.k << '\n'
      << "seed=" << c.seed << '\n'
      << "ridge=" << (c.ridge ? detail::format_double(*c.ridge) : std::string("auto")) << '\n'
      << "r_policy=" << format_rank_policy(c.r_policy) << '\n'
      << "negatives_per_positive=" << c.negatives_per_positive << '\n'
      << "normalization_axis=" << to_string(c.normalization_axis) << '\n'
      << "invert_quotient=" << (c.invert_quotient ? "true" : "false") << '\n'
      << "probe_view=" << c.probe_view << '\n'
      << "gallery_view=" << c.gallery_view << '\n'
      << "max_rank=" << c.max_rank << '\n'
      << "column_bias=" << detail::format_double(c.column_bias) << '\n'
      << "single_gallery_shot=" << (c.single_gallery_shot ? "true" : "false") << '\n';
  return out.str();
}

inline XqdaOptions xqda_options(const ExperimentConfig& c) {
  return XqdaOptions{c.ridge, c.r_policy, c.invert_quotient};
}

/// In-memory inputs of an experiment.
struct ExperimentData {
  std::string name;
  FeatureSet probe_view;
  FeatureSet gallery_view;
  std::optional<FeatureSet> distractors;
};

struct FoldRecord {
  std::size_t r = 0;
  double ridge = 0.0;
  std::size_t probes = 0;
  std::size_t gallery = 0;
  std::vector<double> without;
  std::vector<double> with;
};

struct ExperimentReport {
  std::string dataset;
  ExperimentConfig config;
  CmcResult without_normalization;
  CmcResult with_normalization;
  std::vector<FoldRecord> folds;

  /// The table columns: ranks 1, 5, 10, 15, 20 that fit under max_rank.
  std::vector<std::size_t> table_ranks() const {
    std::vector<std::size_t> out;
    for (std::size_t r : {1, 5, 10, 15, 20})
      if (r <= without_normalization.max_rank()) out.push_back(r);
    return out;
  }
};

namespace detail {

inline FeatureSet select_labels(const FeatureSet& fs, const std::unordered_set<Label>& keep, bool first_only) {
  std::vector<Eigen::Index> cols;
  std::unordered_set<Label> seen;
  for (std::size_t j = 0; j < fs.size(); ++j) {
    const auto& l = fs.labels()[j];
    if (!keep.contains(l)) continue;
    if (first_only && !seen.insert(l).second) continue;
    cols.push_back(static_cast<Eigen::Index>(j));
  }
  Matrix v(fs.vectors().rows(), static_cast<Eigen::Index>(cols.size()));
  Labels labels;
  labels.reserve(cols.size());
  for (std::size_t k = 0; k < cols.size(); ++k) {
    v.col(static_cast<Eigen::Index>(k)) = fs.vectors().col(cols[k]);
    labels.push_back(fs.labels()[static_cast<std::size_t>(cols[k])]);
  }
  return FeatureSet(fs.view_id(), std::move(v), std::move(labels));
}

inline FeatureSet concat(const FeatureSet& a, const FeatureSet& b) {
  require(a.dim() == b.dim(), ErrorCode::DimMismatch, "cannot append sets of different dims");
  Matrix v(a.vectors().rows(), a.vectors().cols() + b.vectors().cols());
  v << a.vectors(), b.vectors();
  Labels labels = a.labels();
  labels.insert(labels.end(), b.labels().begin(), b.labels().end());
  return FeatureSet(a.view_id(), std::move(v), std::move(labels));
}

inline std::unordered_set<Label> to_set(const Labels& labels) { return {labels.begin(), labels.end()}; }

}  // namespace detail

/// Identities present in both views, sorted.
inline Labels shared_identities(const FeatureSet& a, const FeatureSet& b) {
  const auto in_b = detail::to_set(b.labels());
  std::set<Label> shared;
  for (const auto& l : a.labels())
    if (in_b.contains(l)) shared.insert(l);
  return {shared.begin(), shared.end()};
}

inline ExperimentReport run_experiment(const ExperimentData& data, const ExperimentConfig& config) {
  require(data.probe_view.dim() == data.gallery_view.dim(), ErrorCode::DimMismatch, "probe and gallery dims differ");
  for (const auto* view : {&data.probe_view, &data.gallery_view})
    for (const auto& l : view->labels())
      require(!is_distractor_label(l), ErrorCode::SchemaError, "reserved distractor label in view: " + l);
  require(config.max_rank >= 1, ErrorCode::RankOutOfRange, "max_rank must be >= 1");

  const auto plan = make_splits(shared_identities(data.probe_view, data.gallery_view), config.k, config.seed);
  std::vector<FoldRecord> records;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const auto& fold = plan.folds[f];
    const auto fold_seed = synth::mix_seed(config.seed, f);
    const auto train = detail::to_set(fold.train);
    const auto test = detail::to_set(fold.test);

    const auto diffs = build_difference_sets(detail::select_labels(data.probe_view, train, false),
                                             detail::select_labels(data.gallery_view, train, false),
                                             config.negatives_per_positive, fold_seed);
    const auto model = solve_xqda(diffs, xqda_options(config));

    const auto probes = detail::select_labels(data.probe_view, test, false);
    auto gallery = detail::select_labels(data.gallery_view, test, config.single_gallery_shot);
    if (data.distractors) gallery = detail::concat(gallery, *data.distractors);

    auto scores = score_matrix(model, probes, gallery, ScoringOptions{config.threads});
    if (config.column_bias > 0.0)
      scores = synth::inject_column_bias(scores, synth::draw_column_bias(gallery.size(), config.column_bias, fold_seed));

    FoldRecord rec;
    rec.r = model.r();
    rec.ridge = model.ridge();
    rec.probes = probes.size();
    rec.gallery = gallery.size();
    rec.without = cmc_rates(scores, config.max_rank);
    rec.with = cmc_rates(minmax_normalize(scores, config.normalization_axis), config.max_rank);
    records.push_back(std::move(rec));
  }

  std::vector<std::vector<double>> without, with;
  for (const auto& r : records) {
    without.push_back(r.without);
    with.push_back(r.with);
  }
  return ExperimentReport{data.name, config, CmcResult(std::move(without)), CmcResult(std::move(with)),
                          std::move(records)};
}

/// Loads the configured views (and distractors) named by a manifest. Empty
/// probe/gallery view names default to the manifest's first and second view.
inline ExperimentData load_experiment_data(const DatasetManifest& manifest, ExperimentConfig& config) {
  if (config.probe_view.empty()) config.probe_view = manifest.views.at(0).view_id;
  if (config.gallery_view.empty()) config.gallery_view = manifest.views.at(1).view_id;
  const auto* probe = manifest.find_view(config.probe_view);
  const auto* gallery = manifest.find_view(config.gallery_view);
  require(probe != nullptr, ErrorCode::SchemaError, "manifest has no view " + config.probe_view);
  require(gallery != nullptr, ErrorCode::SchemaError, "manifest has no view " + config.gallery_view);
  require(probe != gallery, ErrorCode::SchemaError, "probe and gallery view must differ");
  std::optional<FeatureSet> distractors;
  if (manifest.distractor_file)
    distractors = mark_distractors(load_feature_set(*manifest.distractor_file, manifest.expected_dim, "distractors"));
  return ExperimentData{manifest.name, load_feature_set(probe->path, manifest.expected_dim, probe->view_id),
                        load_feature_set(gallery->path, manifest.expected_dim, gallery->view_id),
                        std::move(distractors)};
}

inline ExperimentReport run_experiment(const DatasetManifest& manifest, ExperimentConfig config) {
  const auto data = load_experiment_data(manifest, config);
  return run_experiment(data, config);
}

// Report rendering. Tables print percentages with two decimals; CSV files
// carry 17 significant digits.

inline std::string format_percent(double rate) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(2) << rate * 100.0 << '%';
  return out.str();
}

inline std::string format_report_text(const ExperimentReport& report) {
  const auto ranks = report.table_ranks();
  const auto& c = report.config;
  std::ostringstream out;
  out << "Dataset: " << report.dataset << '\n'
      << "Protocol: " << c.k << " trials of half/half identity splits, seed " << c.seed << '\n'
      << "Views: probe=" << c.probe_view << " gallery=" << c.gallery_view << '\n'
      << "Normalization axis: " << to_string(c.normalization_axis) << '\n'
      << "Metric: r_policy=" << format_rank_policy(c.r_policy)
      << " invert_quotient=" << (c.invert_quotient ? "true" : "false")
      << " negatives_per_positive=" << c.negatives_per_positive << '\n';
  if (!report.folds.empty())
    out << "Fold 1: " << report.folds.front().probes << " probes x " << report.folds.front().gallery
        << " gallery, r=" << report.folds.front().r << '\n';
  out << '\n';

  auto row = [&](const std::string& head, const std::vector<std::string>& cells) {
    out << std::left << std::setw(16) << head;
    for (const auto& cell : cells) out << std::right << std::setw(10) << cell;
    out << '\n';
  };
  std::vector<std::string> header;
  for (auto r : ranks) header.push_back("Rank-" + std::to_string(r));
  row("Without/with", header);
  out << "Normalization\n";
  auto arm = [&](const std::string& name, const CmcResult& result) {
    std::vector<std::string> mean, spread;
    for (auto r : ranks) {
      mean.push_back(format_percent(result.at_rank(r)));
      std::ostringstream s;
      s << std::fixed << std::setprecision(2) << result.stddev()[r - 1] * 100.0;
      spread.push_back(s.str());
    }
    row(name, mean);
    row("  (std, pts)", spread);
  };
  arm("Without", report.without_normalization);
  arm("With", report.with_normalization);
  return out.str();
}

inline std::string format_report_csv(const ExperimentReport& report) {
  const auto ranks = report.table_ranks();
  std::ostringstream out;
  out << "normalization,statistic";
  for (auto r : ranks) out << ",Rank-" << r;
  out << '\n';
  auto arm = [&](const char* name, const CmcResult& result) {
    out << name << ",mean";
    for (auto r : ranks) out << ',' << detail::format_double(result.at_rank(r) * 100.0);
    out << '\n' << name << ",std";
    for (auto r : ranks) out << ',' << detail::format_double(result.stddev()[r - 1] * 100.0);
    out << '\n';
  };
  arm("without", report.without_normalization);
  arm("with", report.with_normalization);
  return out.str();
}

inline std::string format_cmc_curve_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << "arm,rank,rate\n";
  auto arm = [&](const char* name, const CmcResult& result) {
    for (std::size_t r = 1; r <= result.max_rank(); ++r)
      out << name << ',' << r << ',' << detail::format_double(result.at_rank(r)) << '\n';
  };
  arm("without", report.without_normalization);
  arm("with", report.with_normalization);
  return out.str();
}

inline std::string format_folds_csv(const ExperimentReport& report) {
  const auto ranks = report.table_ranks();
  std::ostringstream out;
  out << "fold,arm,r,ridge,probes,gallery";
  for (auto r : ranks) out << ",Rank-" << r;
  out << '\n';
  for (std::size_t f = 0; f < report.folds.size(); ++f) {
    const auto& rec = report.folds[f];
    auto arm = [&](const char* name, const std::vector<double>& rates) {
      out << f << ',' << name << ',' << rec.r << ',' << detail::format_double(rec.ridge) << ',' << rec.probes << ','
          << rec.gallery;
      for (auto r : ranks) out << ',' << detail::format_double(rates[r - 1] * 100.0);
      out << '\n';
    };
    arm("without", rec.without);
    arm("with", rec.with);
  }
  return out.str();
}

/// Writes report.txt, report.csv, cmc_curve.csv and folds.csv into `dir`.
inline void write_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const char* name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::trunc);
    require(static_cast<bool>(out), ErrorCode::IoError, "cannot write " + (dir / name).string());
    out << text;
  };
  write("report.txt", format_report_text(report));
  write("report.csv", format_report_csv(report));
  write("cmc_curve.csv", format_cmc_curve_csv(report));
  write("folds.csv", format_folds_csv(report));
}

}  // namespace xqreid
