#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "test_support.hpp"
#include "xqreid/eval.hpp"

using namespace xqreid;
using xqreid::fixtures::TempDir;

namespace {

Labels numbered(std::size_t n) {
  Labels out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(synth::identity_label(k));
  return out;
}

// Full sort of each row, then the first position holding the probe's label.
std::vector<double> brute_force_cmc(const ScoreMatrix& s, std::size_t max_rank) {
  std::vector<double> rates(max_rank, 0.0);
  for (std::size_t i = 0; i < s.probes(); ++i) {
    std::vector<std::size_t> idx(s.gallery());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) {
      return s.polarity() == Polarity::SmallerIsBetter ? s(i, a) < s(i, b) : s(i, a) > s(i, b);
    });
    std::size_t pos = 0;
    while (s.gallery_labels()[idx[pos]] != s.probe_labels()[i]) ++pos;
    for (std::size_t r = pos; r < max_rank; ++r) rates[r] += 1.0;
  }
  for (auto& r : rates) r /= static_cast<double>(s.probes());
  return rates;
}

ExperimentConfig synthetic_config() {
  ExperimentConfig c;
  c.k = 3;
  c.invert_quotient = true;
  c.negatives_per_positive = 5;
  return c;
}

ExperimentData synthetic_data(double noise, std::uint64_t seed, std::size_t ids = 60) {
  synth::CrossViewParams p;
  p.n_ids = ids;
  p.dim = 12;
  p.images_per_view = 2;
  p.view_noise = noise;
  p.seed = seed;
  auto views = synth::gen_cross_view(p);
  return ExperimentData{"synthetic", views.view_a, views.view_b, std::nullopt};
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Validation;
}

}  // namespace

TEST(MakeSplits, FourLabelsTwoFolds) {
  const auto plan = make_splits({"d", "a", "c", "b"}, 2, 0);
  ASSERT_EQ(plan.folds.size(), 2u);
  for (const auto& f : plan.folds) {
    EXPECT_EQ(f.train.size(), 2u);
    EXPECT_EQ(f.test.size(), 2u);
    std::set<Label> all(f.train.begin(), f.train.end());
    for (const auto& l : f.test) EXPECT_TRUE(all.insert(l).second);
    EXPECT_EQ(all, (std::set<Label>{"a", "b", "c", "d"}));
  }
}

TEST(MakeSplits, ViperSizedHalves) {
  const auto plan = make_splits(numbered(632), 10, 0);
  ASSERT_EQ(plan.folds.size(), 10u);
  for (const auto& f : plan.folds) {
    EXPECT_EQ(f.train.size(), 316u);
    EXPECT_EQ(f.test.size(), 316u);
  }
  EXPECT_NE(plan.folds[0].test, plan.folds[1].test);
}

TEST(MakeSplits, DeterministicAndOrderIndependent) {
  auto labels = numbered(31);
  const auto a = make_splits(labels, 4, 9);
  std::reverse(labels.begin(), labels.end());
  const auto b = make_splits(labels, 4, 9);
  for (std::size_t f = 0; f < 4; ++f) {
    EXPECT_EQ(a.folds[f].train, b.folds[f].train);
    EXPECT_EQ(a.folds[f].test, b.folds[f].test);
    EXPECT_EQ(a.folds[f].train.size(), 15u);
    EXPECT_EQ(a.folds[f].test.size(), 16u);
  }
}

TEST(MakeSplits, TooFewIdentities) {
  EXPECT_EQ(code_of([] { make_splits({"a", "b"}, 3, 0); }), ErrorCode::TooFewIdentities);
  EXPECT_EQ(code_of([] { make_splits({"a", "b"}, 1, 0); }), ErrorCode::TooFewIdentities);
  EXPECT_EQ(code_of([] { make_splits({"a", "a", "a"}, 2, 0); }), ErrorCode::TooFewIdentities);
}

TEST(Cmc, HandCases) {
  Matrix one(1, 2);
  one << 0.1, 0.9;
  EXPECT_EQ(cmc(ScoreMatrix(one, {"x"}, {"x", "y"}, Polarity::SmallerIsBetter), 2).ranks(),
            (std::vector<double>{1.0, 1.0}));

  Matrix two(2, 2);
  two << 0.1, 0.9, 0.2, 0.8;
  const auto r = cmc(ScoreMatrix(two, {"x", "x"}, {"x", "y"}, Polarity::SmallerIsBetter), 2);
  EXPECT_EQ(r.ranks(), (std::vector<double>{1.0, 1.0}));
  const auto swapped = cmc(ScoreMatrix(two, {"x", "y"}, {"x", "y"}, Polarity::SmallerIsBetter), 2);
  EXPECT_EQ(swapped.ranks(), (std::vector<double>{0.5, 1.0}));
}

TEST(Cmc, TiesGoToLowerGalleryIndex) {
  Matrix v(1, 3);
  v << 0.5, 0.5, 0.5;
  EXPECT_EQ(cmc_rates(ScoreMatrix(v, {"c"}, {"a", "b", "c"}, Polarity::SmallerIsBetter), 3),
            (std::vector<double>{0.0, 0.0, 1.0}));
  EXPECT_EQ(cmc_rates(ScoreMatrix(v, {"a"}, {"a", "b", "c"}, Polarity::SmallerIsBetter), 1), (std::vector<double>{1.0}));
}

TEST(Cmc, MultiShotUsesBestMatchingImage) {
  Matrix v(1, 4);
  v << 0.4, 0.9, 0.5, 0.1;
  // Best "x" image is at index 2 (0.5): behind 0.1 and 0.4.
  EXPECT_EQ(cmc_rates(ScoreMatrix(v, {"x"}, {"y", "x", "x", "z"}, Polarity::SmallerIsBetter), 4),
            (std::vector<double>{0.0, 0.0, 1.0, 1.0}));
}

TEST(Cmc, LargerIsBetterSortsDescending) {
  Matrix v(1, 3);
  v << 0.2, 0.9, 0.5;
  EXPECT_EQ(cmc_rates(ScoreMatrix(v, {"c"}, {"a", "b", "c"}, Polarity::LargerIsBetter), 3),
            (std::vector<double>{0.0, 1.0, 1.0}));
}

TEST(Cmc, ErrorPaths) {
  Matrix v(1, 2);
  v << 0.2, 0.3;
  EXPECT_EQ(code_of([&] { cmc(ScoreMatrix(v, {"q"}, {"a", "b"}, Polarity::SmallerIsBetter), 1); }),
            ErrorCode::ProbeLabelAbsent);
  EXPECT_EQ(code_of([&] { cmc(ScoreMatrix(v, {"a"}, {"a", "b"}, Polarity::SmallerIsBetter), 3); }),
            ErrorCode::RankOutOfRange);
  EXPECT_EQ(code_of([&] { cmc(ScoreMatrix(v, {"a"}, {"a", "b"}, Polarity::SmallerIsBetter), 0); }),
            ErrorCode::RankOutOfRange);
}

TEST(Cmc, MatchesBruteForceOnRandomSingleMatchMatrices) {
  std::mt19937_64 rng(50);
  std::uniform_int_distribution<int> coarse(0, 9);
  for (int t = 0; t < 20; ++t) {
    Labels gallery = numbered(50);
    Labels probes = gallery;
    std::shuffle(probes.begin(), probes.end(), rng);
    Matrix v(50, 50);
    // Coarse values make ties common, exercising the index tie-break.
    for (Eigen::Index i = 0; i < 50; ++i)
      for (Eigen::Index j = 0; j < 50; ++j) v(i, j) = t % 2 ? coarse(rng) : fixtures::random_matrix(1, 1, rng)(0, 0);
    const ScoreMatrix s(v, probes, gallery, t % 3 ? Polarity::SmallerIsBetter : Polarity::LargerIsBetter);
    const auto result = cmc(s, 50);
    EXPECT_EQ(result.ranks(), brute_force_cmc(s, 50));
    EXPECT_EQ(result.ranks().back(), 1.0);
    EXPECT_TRUE(std::is_sorted(result.ranks().begin(), result.ranks().end()));
  }
}

TEST(Cmc, DistractorsNeverRaiseAnyRate) {
  std::mt19937_64 rng(60);
  for (int t = 0; t < 10; ++t) {
    const Matrix base = fixtures::random_matrix(20, 20, rng);
    const Matrix extra = fixtures::random_matrix(20, 30, rng);
    Matrix padded(20, 50);
    padded << base, extra;
    Labels gallery = numbered(20);
    Labels padded_labels = gallery;
    for (int k = 0; k < 30; ++k) padded_labels.push_back("__distractor_" + std::to_string(k));
    const auto plain = cmc_rates(ScoreMatrix(base, numbered(20), gallery, Polarity::SmallerIsBetter), 20);
    const auto more = cmc_rates(ScoreMatrix(padded, numbered(20), padded_labels, Polarity::SmallerIsBetter), 20);
    for (std::size_t r = 0; r < 20; ++r) EXPECT_LE(more[r], plain[r]);
  }
}

TEST(ExperimentConfig, ParsesFileAndRejectsUnknownKeys) {
  TempDir dir("config");
  std::ofstream(dir / "c.cfg") << "# test\nk=4\nseed=7\nridge=0.5\nr_policy=fixed:3\nnegatives_per_positive=2\n"
                                  "normalization_axis=two_sided\ninvert_quotient=true\nprobe_view=b\ngallery_view=a\n"
                                  "max_rank=10\ncolumn_bias=0.25\nsingle_gallery_shot=yes\nthreads=2\n";
  const auto c = load_experiment_config(dir / "c.cfg");
  EXPECT_EQ(c.k, 4u);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.ridge, 0.5);
  EXPECT_EQ(c.r_policy, RankPolicy{FixedRank{3}});
  EXPECT_EQ(c.negatives_per_positive, 2u);
  EXPECT_EQ(c.normalization_axis, NormalizationAxis::TwoSided);
  EXPECT_TRUE(c.invert_quotient);
  EXPECT_EQ(c.probe_view, "b");
  EXPECT_EQ(c.max_rank, 10u);
  EXPECT_EQ(c.column_bias, 0.25);
  EXPECT_TRUE(c.single_gallery_shot);
  EXPECT_EQ(c.threads, 2u);

  const auto again = load_experiment_config(dir / "c.cfg");
  std::ofstream(dir / "round.cfg") << format_experiment_config(c);
  EXPECT_EQ(format_experiment_config(load_experiment_config(dir / "round.cfg")), format_experiment_config(again));

  std::ofstream(dir / "bad.cfg") << "k=4\nflavour=mint\n";
  EXPECT_EQ(code_of([&] { load_experiment_config(dir / "bad.cfg"); }), ErrorCode::SchemaError);
  std::ofstream(dir / "badval.cfg") << "r_policy=sometimes\n";
  EXPECT_EQ(code_of([&] { load_experiment_config(dir / "badval.cfg"); }), ErrorCode::SchemaError);
  EXPECT_EQ(parse_rank_policy("threshold"), RankPolicy{EigenvalueThreshold{1.0}});
  EXPECT_EQ(parse_rank_policy("threshold:0.5"), RankPolicy{EigenvalueThreshold{0.5}});
}

TEST(RunExperiment, RowNormalizationLeavesCmcBitIdentical) {
  auto config = synthetic_config();
  config.normalization_axis = NormalizationAxis::PerProbeRow;
  const auto report = run_experiment(synthetic_data(0.3, 1), config);
  EXPECT_EQ(report.without_normalization.ranks(), report.with_normalization.ranks());
  for (const auto& f : report.folds) EXPECT_EQ(f.without, f.with);
}

TEST(RunExperiment, DeterministicReports) {
  const auto data = synthetic_data(0.3, 2);
  const auto a = run_experiment(data, synthetic_config());
  const auto b = run_experiment(data, synthetic_config());
  EXPECT_EQ(format_report_csv(a), format_report_csv(b));
  EXPECT_EQ(format_folds_csv(a), format_folds_csv(b));
}

TEST(RunExperiment, ColumnNormalizationUndoesInjectedColumnBias) {
  const auto data = synthetic_data(0.2, 3);
  auto config = synthetic_config();
  const auto clean = run_experiment(data, config);
  config.column_bias = 200.0;
  const auto biased = run_experiment(data, config);
  EXPECT_LT(biased.without_normalization.at_rank(1), clean.without_normalization.at_rank(1));
  EXPECT_GT(biased.with_normalization.at_rank(1), biased.without_normalization.at_rank(1));
}

TEST(RunExperiment, ZeroNoiseIsPerfect) {
  const auto report = run_experiment(synthetic_data(0.0, 4), synthetic_config());
  EXPECT_EQ(report.without_normalization.at_rank(1), 1.0);
}

TEST(RunExperiment, DistractorsPadEveryGallery) {
  auto data = synthetic_data(0.3, 5);
  synth::CrossViewParams p;
  p.dim = 12;
  p.seed = 5;
  data.distractors = synth::gen_distractors(p, 40);
  const auto report = run_experiment(data, synthetic_config());
  for (const auto& f : report.folds) EXPECT_EQ(f.gallery, 30u * 2u + 40u);
}

TEST(RunExperiment, SingleGalleryShotKeepsOneImagePerIdentity) {
  auto config = synthetic_config();
  config.single_gallery_shot = true;
  const auto report = run_experiment(synthetic_data(0.3, 6), config);
  for (const auto& f : report.folds) {
    EXPECT_EQ(f.gallery, 30u);
    EXPECT_EQ(f.probes, 60u);
  }
}

TEST(RunExperiment, RejectsReservedLabelsAndSmallGalleries) {
  auto data = synthetic_data(0.3, 7, 10);
  auto config = synthetic_config();
  config.max_rank = 20;  // test gallery holds only 5 ids x 2 images
  EXPECT_EQ(code_of([&] { run_experiment(data, config); }), ErrorCode::RankOutOfRange);
  const FeatureSet reserved("a", Matrix::Zero(12, 1), {"__distractor_0"});
  EXPECT_EQ(code_of([&] { run_experiment(ExperimentData{"x", reserved, data.gallery_view, std::nullopt}, config); }),
            ErrorCode::SchemaError);
}

TEST(Report, TableLayoutAndFiles) {
  TempDir dir("report");
  const auto report = run_experiment(synthetic_data(0.3, 8), synthetic_config());
  const auto text = format_report_text(report);
  EXPECT_NE(text.find("Rank-1    Rank-5   Rank-10   Rank-15   Rank-20"), std::string::npos);
  EXPECT_NE(text.find("Without"), std::string::npos);
  EXPECT_NE(text.find("With "), std::string::npos);
  const auto csv = format_report_csv(report);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "normalization,statistic,Rank-1,Rank-5,Rank-10,Rank-15,Rank-20");
  write_report(report, dir.path());
  for (const char* name : {"report.txt", "report.csv", "cmc_curve.csv", "folds.csv"})
    EXPECT_TRUE(std::filesystem::exists(dir / name)) << name;
  EXPECT_EQ(format_percent(0.4216), "42.16%");
  EXPECT_EQ(format_percent(1.0), "100.00%");
}
