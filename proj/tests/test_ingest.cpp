#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <functional>

#include "test_support.hpp"
#include "xqreid/ingest.hpp"

using namespace xqreid;
using xqreid::fixtures::TempDir;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Validation;  // sentinel: tests never expect Validation here
}

}  // namespace

TEST(LoadFeatureSet, MinimalCsv) {
  TempDir dir("ingest");
  write_text(dir / "a.csv", "dim=3,count=2\nid1,1.0,0.0,0.0\nid2,0.0,1.0,0.0\n");
  const auto fs = load_feature_set(dir / "a.csv", 3);
  EXPECT_EQ(fs.dim(), 3u);
  EXPECT_EQ(fs.size(), 2u);
  EXPECT_EQ(fs.labels(), (Labels{"id1", "id2"}));
  EXPECT_EQ(fs.view_id(), "a");
  EXPECT_DOUBLE_EQ(fs.vectors()(1, 1), 1.0);
}

TEST(LoadFeatureSet, DimMismatchReportsFoundAndExpected) {
  TempDir dir("ingest");
  write_text(dir / "a.csv", "dim=3,count=2\nid1,1.0,0.0,0.0\nid2,0.0,1.0,0.0\n");
  try {
    load_feature_set(dir / "a.csv", 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DimMismatch);
    EXPECT_NE(e.detail().find("found 3, expected 4"), std::string::npos);
  }
}

TEST(LoadFeatureSet, ErrorPaths) {
  TempDir dir("ingest");
  EXPECT_EQ(code_of([&] { load_feature_set(dir / "missing.csv"); }), ErrorCode::FileMissing);

  write_text(dir / "short.csv", "dim=2,count=3\na,1,2\nb,3,4\n");
  EXPECT_EQ(code_of([&] { load_feature_set(dir / "short.csv"); }), ErrorCode::FormatError);

  write_text(dir / "long.csv", "dim=2,count=1\na,1,2\nb,3,4\n");
  EXPECT_EQ(code_of([&] { load_feature_set(dir / "long.csv"); }), ErrorCode::FormatError);

  write_text(dir / "fields.csv", "dim=2,count=1\na,1,2,3\n");
  EXPECT_EQ(code_of([&] { load_feature_set(dir / "fields.csv"); }), ErrorCode::FormatError);

  write_text(dir / "header.csv", "dimension=2\na,1,2\n");
  EXPECT_EQ(code_of([&] { load_feature_set(dir / "header.csv"); }), ErrorCode::FormatError);

  write_text(dir / "empty.csv", "dim=2,count=0\n");
  EXPECT_EQ(code_of([&] { load_feature_set(dir / "empty.csv"); }), ErrorCode::FormatError);

  write_text(dir / "nan.csv", "dim=2,count=2\na,1,2\nb,3,nan\n");
  try {
    load_feature_set(dir / "nan.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NonFiniteValue);
    EXPECT_NE(e.detail().find("row 1, col 1"), std::string::npos);
  }
}

TEST(LoadFeatureSet, TruncatedBinaryReportsOffset) {
  TempDir dir("ingest");
  std::mt19937_64 rng(3);
  save_feature_set(fixtures::random_feature_set(4, 3, rng), dir / "f.bin", FeatureFormat::Binary);
  const auto full = std::filesystem::file_size(dir / "f.bin");
  std::filesystem::resize_file(dir / "f.bin", full - 5);
  try {
    load_feature_set(dir / "f.bin");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FormatError);
    EXPECT_NE(e.detail().find("truncated at offset"), std::string::npos);
  }
  // Trailing garbage is a count mismatch, never silently ignored.
  save_feature_set(fixtures::random_feature_set(4, 3, rng), dir / "g.bin", FeatureFormat::Binary);
  std::ofstream(dir / "g.bin", std::ios::app | std::ios::binary) << "xx";
  EXPECT_EQ(code_of([&] { load_feature_set(dir / "g.bin"); }), ErrorCode::FormatError);
}

TEST(SaveFeatureSet, RefusesEmptySet) {
  TempDir dir("ingest");
  const FeatureSet empty("v", Matrix(3, 0), {});
  EXPECT_EQ(code_of([&] { save_feature_set(empty, dir / "e.bin", FeatureFormat::Binary); }), ErrorCode::FormatError);
  EXPECT_EQ(code_of([&] { save_feature_set(empty, dir / "e.csv", FeatureFormat::Csv); }), ErrorCode::FormatError);
}

TEST(SaveFeatureSet, CsvHasOneRowPerSample) {
  TempDir dir("ingest");
  Matrix v(3, 2);
  v << 1, 4, 2, 5, 3, 6;
  save_feature_set(FeatureSet("v", v, {"a", "b"}), dir / "s.csv", FeatureFormat::Csv);
  std::ifstream in(dir / "s.csv");
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "dim=3,count=2");
  EXPECT_EQ(lines[1], "a,1,2,3");
  EXPECT_EQ(lines[2], "b,4,5,6");
}

TEST(SaveFeatureSet, BinarySizeFollowsLayout) {
  TempDir dir("ingest");
  std::mt19937_64 rng(11);
  // 100 labels "id0".."id99": 10 of length 3, 90 of length 4.
  const auto fs = fixtures::random_feature_set(4096, 100, rng, "id");
  save_feature_set(fs, dir / "big.bin", FeatureFormat::Binary);
  const std::uintmax_t header = 16;
  const std::uintmax_t labels = 100 * 2 + 10 * 3 + 90 * 4;
  EXPECT_EQ(std::filesystem::file_size(dir / "big.bin"), header + labels + 4096u * 100u * 8u);
}

TEST(SaveFeatureSet, BinaryRoundTripIsBitIdentical) {
  TempDir dir("ingest");
  std::mt19937_64 rng(5);
  const auto fs = fixtures::random_feature_set(4096, 10, rng);
  save_feature_set(fs, dir / "r.bin", FeatureFormat::Binary);
  const auto back = load_feature_set(dir / "r.bin", 4096);
  EXPECT_EQ(back.labels(), fs.labels());
  ASSERT_EQ(back.vectors().size(), fs.vectors().size());
  EXPECT_EQ(std::memcmp(back.vectors().data(), fs.vectors().data(), sizeof(double) * fs.vectors().size()), 0);
}

TEST(SaveFeatureSet, CsvRoundTripWithinRelativeTolerance) {
  TempDir dir("ingest");
  std::mt19937_64 rng(6);
  const auto fs = fixtures::random_feature_set(7, 9, rng);
  save_feature_set(fs, dir / "r.csv", FeatureFormat::Csv);
  const auto back = load_feature_set(dir / "r.csv", 7);
  EXPECT_EQ(back.labels(), fs.labels());
  for (Eigen::Index k = 0; k < fs.vectors().size(); ++k)
    EXPECT_NEAR(back.vectors().data()[k], fs.vectors().data()[k], 1e-12 * std::abs(fs.vectors().data()[k]));
}

// Property: for random sets, binary save/load is the identity.
TEST(SaveFeatureSet, BinaryRoundTripProperty) {
  TempDir dir("ingest");
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dims(1, 64), counts(1, 30);
  for (int trial = 0; trial < 25; ++trial) {
    auto fs = fixtures::random_feature_set(static_cast<std::size_t>(dims(rng)), static_cast<std::size_t>(counts(rng)),
                                          rng, "lbl_" + std::to_string(trial) + "_");
    save_feature_set(fs, dir / "p.bin", FeatureFormat::Binary);
    const auto back = load_feature_set(dir / "p.bin");
    ASSERT_EQ(back.labels(), fs.labels());
    ASSERT_TRUE((back.vectors().array() == fs.vectors().array()).all());
  }
}

class ManifestTest : public ::testing::Test {
 protected:
  TempDir dir{"manifest"};
  std::mt19937_64 rng{9};

  void write_features(const std::string& name, std::size_t dim, std::size_t count) {
    save_feature_set(fixtures::random_feature_set(dim, count, rng), dir / name, FeatureFormat::Binary);
  }
};

TEST_F(ManifestTest, TwoViewsAccepted) {
  write_features("a.bin", 4096, 2);
  write_features("b.bin", 4096, 2);
  write_text(dir / "m.txt", "# two cameras\nname=viper\nexpected_dim=4096\nview.a=a.bin\nview.b=b.bin\nnotes=hello\n");
  const auto m = load_manifest(dir / "m.txt");
  EXPECT_EQ(m.name, "viper");
  ASSERT_EQ(m.views.size(), 2u);
  EXPECT_EQ(m.views[0].view_id, "a");
  EXPECT_EQ(m.views[1].path, dir / "b.bin");
  EXPECT_EQ(m.notes, "hello");
  EXPECT_FALSE(m.distractor_file.has_value());
}

TEST_F(ManifestTest, DistractorWithWrongDimRejected) {
  write_features("a.bin", 16, 2);
  write_features("b.bin", 16, 2);
  write_features("d.bin", 15, 3);
  write_text(dir / "m.txt", "name=x\nexpected_dim=16\nview.a=a.bin\nview.b=b.bin\ndistractor=d.bin\n");
  EXPECT_EQ(code_of([&] { load_manifest(dir / "m.txt"); }), ErrorCode::CrossFileDimMismatch);
}

TEST_F(ManifestTest, GridStyleDistractorsAreMarked) {
  write_features("a.bin", 8, 4);
  write_features("b.bin", 8, 4);
  write_features("d.bin", 8, 775);
  write_text(dir / "m.txt", "name=grid\nexpected_dim=8\nview.a=a.bin\nview.b=b.bin\ndistractor=d.bin\n");
  const auto m = load_manifest(dir / "m.txt");
  ASSERT_TRUE(m.distractor_file.has_value());
  const auto padding = mark_distractors(load_feature_set(*m.distractor_file, 8));
  EXPECT_EQ(padding.size(), 775u);
  EXPECT_EQ(padding.labels().front(), "__distractor_0");
  EXPECT_EQ(padding.labels().back(), "__distractor_774");
  EXPECT_TRUE(std::all_of(padding.labels().begin(), padding.labels().end(),
                          [](const Label& l) { return is_distractor_label(l); }));
}

TEST_F(ManifestTest, SchemaErrors) {
  write_features("a.bin", 4, 2);
  write_text(dir / "one.txt", "name=x\nexpected_dim=4\nview.a=a.bin\n");
  EXPECT_EQ(code_of([&] { load_manifest(dir / "one.txt"); }), ErrorCode::SchemaError);
  write_text(dir / "unknown.txt", "name=x\nexpected_dim=4\nview.a=a.bin\nview.b=a.bin\ncolour=red\n");
  EXPECT_EQ(code_of([&] { load_manifest(dir / "unknown.txt"); }), ErrorCode::SchemaError);
  write_text(dir / "nodim.txt", "name=x\nview.a=a.bin\nview.b=a.bin\n");
  EXPECT_EQ(code_of([&] { load_manifest(dir / "nodim.txt"); }), ErrorCode::SchemaError);
  write_text(dir / "gone.txt", "name=x\nexpected_dim=4\nview.a=a.bin\nview.b=nope.bin\n");
  EXPECT_EQ(code_of([&] { load_manifest(dir / "gone.txt"); }), ErrorCode::FileMissing);
  EXPECT_EQ(code_of([&] { load_manifest(dir / "absent.txt"); }), ErrorCode::FileMissing);
}
