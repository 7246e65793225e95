#pragma once

// Command-line front end: synth, train, match, eval, inspect.
// Exit codes: 0 success, 1 domain error, 2 usage error.
// Settings resolve as CLI flag > config file > built-in default.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xqreid/xqreid.hpp"

namespace xqreid::cli {

namespace fs = std::filesystem;

/// Flags that override ExperimentConfig keys, kept as raw strings so they go
/// through the same parser as the config file.
struct ConfigOverrides {
  std::map<std::string, std::string> values;

  void attach(CLI::App& cmd, const std::string& key, const std::string& flag, const std::string& help) {
    cmd.add_option_function<std::string>(flag, [this, key](const std::string& v) { values[key] = v; }, help);
  }

  ExperimentConfig resolve(const std::optional<fs::path>& config_file) const {
    ExperimentConfig config = config_file ? load_experiment_config(*config_file) : ExperimentConfig{};
    for (const auto& [key, value] : values)
      require(apply_config_value(config, key, value), ErrorCode::SchemaError, "unknown setting " + key);
    return config;
  }
};

inline void attach_experiment_flags(CLI::App& cmd, ConfigOverrides& o) {
  o.attach(cmd, "seed", "--seed", "Random seed (default 0)");
  o.attach(cmd, "ridge", "--ridge", "Ridge added to both covariances, or 'auto'");
  o.attach(cmd, "r_policy", "--r-policy", "fixed:<r> or threshold:<tau>");
  o.attach(cmd, "negatives_per_positive", "--negatives-per-positive", "Dissimilar pairs per similar pair");
  o.attach(cmd, "invert_quotient", "--invert-quotient", "true: keep largest eigenvalues of inv(Sigma_s) Sigma_d");
  o.attach(cmd, "probe_view", "--probe-view", "Manifest view used as probes");
  o.attach(cmd, "gallery_view", "--gallery-view", "Manifest view used as gallery");
}

inline std::string eigen_summary(const XqdaModel& model, std::size_t count) {
  std::string out;
  for (Eigen::Index i = 0; i < std::min<Eigen::Index>(static_cast<Eigen::Index>(count), model.eigenvalues().size()); ++i) {
    if (i) out += ' ';
    out += detail::format_double(model.eigenvalues()[i]);
  }
  return out;
}

inline int cmd_synth(const fs::path& out_dir, const synth::CrossViewParams& params, std::size_t distractors,
                     FeatureFormat format, std::ostream& out) {
  const auto views = synth::gen_cross_view(params);
  std::optional<FeatureSet> extra;
  if (distractors > 0) extra = synth::gen_distractors(params, distractors);
  const auto files = synth::write_dataset(out_dir, "synthetic", views, extra, format);

  ExperimentConfig config;
  config.seed = params.seed;
  config.column_bias = params.column_bias;
  std::ofstream cfg(out_dir / "experiment.cfg", std::ios::trunc);
  require(static_cast<bool>(cfg), ErrorCode::IoError, "cannot write experiment.cfg");
  cfg << "# experiment settings for the synthetic dataset\n" << format_experiment_config(config);

  out << "manifest: " << files.manifest.string() << '\n'
      << "ids=" << params.n_ids << " dim=" << params.dim << " images_per_view=" << params.images_per_view
      << " distractors=" << distractors << '\n';
  return 0;
}

inline int cmd_train(const fs::path& manifest_path, const std::optional<fs::path>& config_path,
                     const ConfigOverrides& overrides, const fs::path& model_out, std::ostream& out) {
  const auto manifest = load_manifest(manifest_path);
  auto config = overrides.resolve(config_path);
  const auto data = load_experiment_data(manifest, config);
  const auto diffs = build_difference_sets(data.probe_view, data.gallery_view, config.negatives_per_positive,
                                           config.seed);
  const auto model = solve_xqda(diffs, xqda_options(config));
  save_model(model, model_out);
  out << "d=" << model.input_dim() << '\n'
      << "r=" << model.r() << '\n'
      << "ridge=" << detail::format_double(model.ridge()) << '\n'
      << "top eigenvalues: " << eigen_summary(model, 5) << '\n'
      << "model: " << model_out.string() << '\n';
  return 0;
}

inline int cmd_match(const fs::path& model_path, const fs::path& probe_file, const fs::path& gallery_file,
                     const std::string& axis_name, const fs::path& out_dir, std::size_t top_k,
                     const ScoringOptions& scoring, std::ostream& out) {
  const auto model = load_model(model_path);
  const auto probes = load_feature_set(probe_file, model.input_dim());
  const auto gallery = load_feature_set(gallery_file, model.input_dim());
  auto scores = score_matrix(model, probes, gallery, scoring);
  if (axis_name != "none") {
    const auto axis = parse_axis(axis_name);
    require(axis.has_value(), ErrorCode::BadParams, "unknown normalization axis " + axis_name);
    scores = minmax_normalize(scores, *axis);
  }

  fs::create_directories(out_dir);
  std::ofstream ranked(out_dir / "ranked.csv", std::ios::trunc);
  require(static_cast<bool>(ranked), ErrorCode::IoError, "cannot write ranked.csv");
  ranked << "probe_index,probe_label,rank,gallery_index,gallery_label,value\n";
  for (std::size_t i = 0; i < scores.probes(); ++i) {
    const auto order = ranked_gallery(scores, i, top_k);
    for (std::size_t k = 0; k < order.size(); ++k)
      ranked << i << ',' << scores.probe_labels()[i] << ',' << k + 1 << ',' << order[k] << ','
             << scores.gallery_labels()[order[k]] << ',' << detail::format_double(scores(i, order[k])) << '\n';
  }
  save_scores_csv(scores, out_dir / "scores.csv");
  save_scores_binary(scores, out_dir / "scores.bin");

  out << "probes=" << scores.probes() << " gallery=" << scores.gallery() << " r=" << model.r()
      << " normalization=" << to_string(scores.normalization()) << '\n';
  const auto in_gallery = detail::to_set(gallery.labels());
  const bool all_present = std::all_of(probes.labels().begin(), probes.labels().end(),
                                       [&](const Label& l) { return in_gallery.contains(l); });
  if (all_present) out << "rank-1: " << format_percent(cmc_rates(scores, 1)[0]) << '\n';
  out << "results: " << out_dir.string() << '\n';
  return 0;
}

inline int cmd_eval(const fs::path& manifest_path, const std::optional<fs::path>& config_path,
                    const ConfigOverrides& overrides, const fs::path& out_dir, std::ostream& out) {
  const auto manifest = load_manifest(manifest_path);
  const auto config = overrides.resolve(config_path);
  const auto report = run_experiment(manifest, config);
  write_report(report, out_dir);
  out << format_report_text(report);
  return 0;
}

inline int cmd_inspect(const fs::path& path, std::ostream& out) {
  require(fs::is_regular_file(path), ErrorCode::FileMissing, path.string());
  char magic[4] = {};
  {
    std::ifstream in(path, std::ios::binary);
    in.read(magic, 4);
  }
  const std::string_view tag(magic, 4);
  if (tag == std::string_view(kModelMagic, 4)) {
    const auto model = load_model(path);
    out << "kind=model\nd=" << model.input_dim() << "\nr=" << model.r()
        << "\nridge=" << detail::format_double(model.ridge()) << "\neigenvalues: " << eigen_summary(model, 5) << '\n';
  } else if (tag == std::string_view(kScoreMagic, 4)) {
    const auto scores = load_scores_binary(path);
    out << "kind=scores\nprobes=" << scores.probes() << "\ngallery=" << scores.gallery() << "\npolarity="
        << (scores.polarity() == Polarity::SmallerIsBetter ? "smaller_is_better" : "larger_is_better")
        << "\nnormalization=" << to_string(scores.normalization()) << '\n';
  } else {
    const auto info = read_feature_info(path);
    out << "kind=features\nformat=" << (info.format == FeatureFormat::Binary ? "binary" : "csv")
        << "\ndim=" << info.dim << "\ncount=" << info.count << '\n';
  }
  return 0;
}

/// Parses argv and dispatches. Never throws.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Cross-view metric learning and re-identification evaluation"};
  app.require_subcommand(1);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic cross-view dataset and manifest");
  fs::path synth_dir;
  synth::CrossViewParams params;
  std::size_t distractors = 0;
  std::string format_name = "binary";
  synth_cmd->add_option("--out-dir", synth_dir, "Output directory")->required();
  synth_cmd->add_option("--ids", params.n_ids, "Number of identities");
  synth_cmd->add_option("--dim", params.dim, "Feature dimension");
  synth_cmd->add_option("--images-per-view", params.images_per_view, "Images per identity per view");
  synth_cmd->add_option("--view-noise", params.view_noise, "Per-sample noise scale");
  synth_cmd->add_option("--identity-spread", params.identity_spread, "Spread of identity centers");
  synth_cmd->add_option("--view-shift", params.view_shift, "Strength of the cross-view transform");
  synth_cmd->add_option("--column-bias", params.column_bias, "Per-gallery score offset written to experiment.cfg");
  synth_cmd->add_option("--distractors", distractors, "Gallery-only distractor vectors");
  synth_cmd->add_option("--seed", params.seed, "Random seed");
  synth_cmd->add_option("--format", format_name, "binary or csv")->check(CLI::IsMember({"binary", "csv"}));

  // train
  auto* train_cmd = app.add_subcommand("train", "Learn W and M from a manifest");
  fs::path train_manifest, model_out;
  std::optional<fs::path> train_config;
  ConfigOverrides train_overrides;
  train_cmd->add_option("--manifest", train_manifest, "Dataset manifest")->required();
  train_cmd->add_option("--config", train_config, "Experiment config file");
  train_cmd->add_option("--model-out", model_out, "Model output path")->required();
  attach_experiment_flags(*train_cmd, train_overrides);

  // match
  auto* match_cmd = app.add_subcommand("match", "Score probes against a gallery");
  fs::path match_model, probe_file, gallery_file, match_out;
  std::string axis_name = "none";
  std::size_t top_k = 10;
  unsigned threads = 1;
  std::size_t budget_mb = 1024;
  match_cmd->add_option("--model", match_model, "Model file")->required();
  match_cmd->add_option("--probes", probe_file, "Probe feature file")->required();
  match_cmd->add_option("--gallery", gallery_file, "Gallery feature file")->required();
  match_cmd->add_option("--axis", axis_name, "none, per_probe_row, per_gallery_column or two_sided")
      ->check(CLI::IsMember({"none", "per_probe_row", "per_gallery_column", "two_sided"}));
  match_cmd->add_option("--out", match_out, "Output directory")->required();
  match_cmd->add_option("--top-k", top_k, "Ranked gallery items written per probe");
  match_cmd->add_option("--threads", threads, "Worker threads (0 = auto)");
  match_cmd->add_option("--memory-budget-mb", budget_mb, "Score block memory budget");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Run the repeated-split experiment and write reports");
  fs::path eval_manifest, eval_out;
  std::optional<fs::path> eval_config;
  ConfigOverrides eval_overrides;
  eval_cmd->add_option("--manifest", eval_manifest, "Dataset manifest")->required();
  eval_cmd->add_option("--config", eval_config, "Experiment config file");
  eval_cmd->add_option("--out-dir", eval_out, "Report directory")->required();
  attach_experiment_flags(*eval_cmd, eval_overrides);
  eval_overrides.attach(*eval_cmd, "k", "--k", "Number of trials");
  eval_overrides.attach(*eval_cmd, "normalization_axis", "--axis", "Normalization axis");
  eval_overrides.attach(*eval_cmd, "max_rank", "--max-rank", "Highest CMC rank");
  eval_overrides.attach(*eval_cmd, "column_bias", "--column-bias", "Synthetic per-gallery score offset");
  eval_overrides.attach(*eval_cmd, "single_gallery_shot", "--single-gallery-shot", "Keep one gallery image per id");
  eval_overrides.attach(*eval_cmd, "threads", "--threads", "Scoring threads (0 = auto)");

  // inspect
  auto* inspect_cmd = app.add_subcommand("inspect", "Print the header of a feature, model or score file");
  fs::path inspect_file;
  inspect_cmd->add_option("file", inspect_file, "File to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth_cmd)
      return cmd_synth(synth_dir, params, distractors,
                       format_name == "csv" ? FeatureFormat::Csv : FeatureFormat::Binary, out);
    if (*train_cmd) return cmd_train(train_manifest, train_config, train_overrides, model_out, out);
    if (*match_cmd)
      return cmd_match(match_model, probe_file, gallery_file, axis_name, match_out, top_k,
                       ScoringOptions{threads, budget_mb * (std::size_t{1} << 20)}, out);
    if (*eval_cmd) return cmd_eval(eval_manifest, eval_config, eval_overrides, eval_out, out);
    if (*inspect_cmd) return cmd_inspect(inspect_file, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace xqreid::cli
