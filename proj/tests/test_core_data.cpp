#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mrmm/core_data.hpp"
#include "mrmm/errors.hpp"

using namespace mrmm;

namespace {

const char* kHeader = "mouse_id,genotype,context,prev_syllable,syllable,isi\n";

// One row per listed transition; broken chains simply start new sequences.
std::string rows_from_counts(const std::string& mouse, const std::string& geno, const std::string& ctx,
                             const std::array<std::array<int, 4>, 4>& n) {
  const char* lab = "dmsu";
  std::ostringstream os;
  for (int a = 0; a < 4; ++a)
    for (int b = 0; b < 4; ++b)
      for (int c = 0; c < n[a][b]; ++c)
        os << mouse << ',' << geno << ',' << ctx << ',' << lab[a] << ',' << lab[b] << ",0.05\n";
  return os.str();
}

}  // namespace

TEST(CoreData, SyllableCodesAreABijection) {
  for (int c = 0; c < 4; ++c) {
    auto back = parse_syllable(std::string(1, syllable_label(static_cast<SyllableCode>(c))));
    ASSERT_TRUE(back.has_value());
    EXPECT_EQ(*back, c);
  }
  EXPECT_EQ(syllable_label(0), 'd');
  EXPECT_EQ(syllable_label(3), 'u');
  EXPECT_FALSE(parse_syllable("S").has_value());
  EXPECT_FALSE(parse_syllable("x").has_value());
}

TEST(CoreData, ParsesTableOneRow) {
  auto ds = parse_csv(std::string(kHeader) + "1,F,A,s,s,0.017\n");
  ASSERT_EQ(ds.sequences.size(), 1u);
  const auto& s = ds.sequences[0];
  EXPECT_EQ(s.mouse, 0);
  EXPECT_EQ(ds.mouse_labels[0], "1");
  EXPECT_EQ(s.covariates[0], ds.schema.covariates[0].code_of("F"));
  EXPECT_EQ(s.covariates[1], ds.schema.covariates[1].code_of("A"));
  ASSERT_EQ(s.syllables.size(), 2u);
  EXPECT_EQ(s.syllables[0], 2);
  EXPECT_EQ(s.syllables[1], 2);
  EXPECT_DOUBLE_EQ(s.isis[0], 0.017);
}

TEST(CoreData, RejectsBadRows) {
  EXPECT_THROW(parse_csv(std::string(kHeader) + "1,F,A,s,s,0.0\n"), NonPositiveIsi);
  EXPECT_THROW(parse_csv(std::string(kHeader) + "1,F,A,s,s,-1\n"), NonPositiveIsi);
  EXPECT_THROW(parse_csv(std::string(kHeader) + "1,f,A,s,s,0.1\n"), InvalidLevel);
  EXPECT_THROW(parse_csv(std::string(kHeader) + "1,F,A,s,q,0.1\n"), InvalidLevel);
  EXPECT_THROW(parse_csv(std::string(kHeader) + "1,F,A,s,s\n"), SchemaMismatch);
  EXPECT_THROW(parse_csv(std::string(kHeader) + "1,F,A,s,s,abc\n"), SchemaMismatch);
  EXPECT_THROW(parse_csv("mouse,genotype,context,prev_syllable,syllable,isi\n1,F,A,s,s,0.1\n"), SchemaMismatch);
  EXPECT_THROW(load_csv("/nonexistent/file.csv"), MissingFile);
}

TEST(CoreData, SchemaMismatchNamesColumnAndRow) {
  try {
    parse_csv(std::string(kHeader) + "1,F,A,s,s,0.1\n1,F,A,s,s,zz\n");
    FAIL();
  } catch (const SchemaMismatch& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("isi"), std::string::npos);
    EXPECT_NE(msg.find("row 2"), std::string::npos);
  }
}

TEST(CoreData, SequenceBoundaries) {
  std::string text = std::string(kHeader) +
                     "1,F,A,s,s,0.1\n"
                     "1,F,A,s,d,0.2\n"  // continues
                     "1,F,L,d,s,0.3\n"  // context changes
                     "1,F,L,m,s,0.4\n"  // chain break
                     "2,F,L,s,u,0.5\n";  // mouse changes
  auto ds = parse_csv(text);
  ASSERT_EQ(ds.sequences.size(), 4u);
  EXPECT_EQ(ds.sequences[0].syllables.size(), 3u);
  EXPECT_EQ(ds.n_mice(), 2);
  EXPECT_EQ(ds.n_transitions(), 5u);
}

TEST(CoreData, SequenceIdColumnOverridesHeuristic) {
  std::string text =
      "mouse_id,genotype,context,prev_syllable,syllable,isi,sequence_id\n"
      "1,F,A,s,s,0.1,a\n"
      "1,F,A,s,d,0.2,b\n"
      "1,F,A,d,d,0.2,b\n";
  auto ds = parse_csv(text);
  ASSERT_EQ(ds.sequences.size(), 2u);
  EXPECT_EQ(ds.sequences[1].syllables.size(), 3u);
  // A broken chain inside one id is an error.
  EXPECT_THROW(parse_csv("mouse_id,genotype,context,prev_syllable,syllable,isi,sequence_id\n"
                         "1,F,A,s,s,0.1,a\n1,F,A,d,d,0.2,a\n"),
               SchemaMismatch);
}

TEST(CoreData, FlattenCountsAndTransform) {
  SequenceDataset ds;
  ds.mouse_labels = {"m"};
  Sequence s;
  s.syllables = {0, 1, 2, 3, 2};
  s.isis = {0.082, 258.8, 0.5, 0.01};
  ds.sequences.push_back(s);
  auto recs = flatten(ds);
  ASSERT_EQ(recs.size(), 4u);
  EXPECT_NEAR(recs[0].log_isi, 0.07881118042428978, 1e-15);
  EXPECT_NEAR(recs[1].log_isi, 5.560, 5e-4);
  EXPECT_NEAR(recs[1].log_isi, 5.559912104236499, 1e-13);
  EXPECT_EQ(recs[1].prev, 1);
  EXPECT_EQ(recs[1].cur, 2);
  for (const auto& r : recs) EXPECT_GT(r.log_isi, 0.0);
}

TEST(CoreData, TableOneCountsAndRowTotals) {
  std::array<std::array<int, 4>, 4> n{};
  n[2] = {44, 29, 588, 27};
  n[0] = {27, 17, 42, 5};
  auto ds = parse_csv(std::string(kHeader) + rows_from_counts("1", "F", "A", n) +
                      rows_from_counts("2", "W", "L", {{{1, 0, 0, 0}}}));
  auto t = transition_counts(ds, {Factor::Mouse, Factor::Context});
  std::size_t g = t.shape.flat({0, ds.schema.covariates[1].code_of("A")});
  EXPECT_EQ(t.at(g, 0, 0), 27);
  EXPECT_EQ(t.at(g, 2, 2), 588);
  EXPECT_EQ(t.row_total(g, 2), 688);
  EXPECT_EQ(t.row_total(g, 0), 91);
  EXPECT_EQ(t.total(), 688 + 91 + 1);
}

TEST(CoreData, EmptyDatasetCountsAreZero) {
  SequenceDataset ds;
  auto t = transition_counts(ds, {Factor::Genotype});
  EXPECT_EQ(t.total(), 0);
  EXPECT_EQ(t.counts.size(), 2u * 16u);
}

TEST(CoreData, MarginalizedCountsEqualUngrouped) {
  std::mt19937_64 gen(3);
  std::ostringstream os;
  os << kHeader;
  const char* lab = "dmsu";
  const char* geno[] = {"F", "W"};
  const char* ctx[] = {"U", "L", "A"};
  for (int seq = 0; seq < 40; ++seq) {
    int prev = gen() % 4;
    int len = 2 + gen() % 10;
    for (int t = 0; t < len; ++t) {
      int cur = gen() % 4;
      os << (seq % 5) << ',' << geno[seq % 2] << ',' << ctx[seq % 3] << ',' << lab[prev] << ',' << lab[cur] << ','
         << 0.01 + (gen() % 1000) / 997.0 << '\n';
      prev = cur;
    }
  }
  auto ds = parse_csv(os.str());
  auto all = transition_counts(ds, {});
  auto grouped = transition_counts(ds, {Factor::Mouse, Factor::Genotype, Factor::Context});
  EXPECT_EQ(all.total(), static_cast<std::int64_t>(flatten(ds).size()));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      std::int64_t sum = 0;
      for (std::size_t g = 0; g < grouped.shape.size(); ++g) sum += grouped.at(g, i, j);
      EXPECT_EQ(sum, all.at(0, i, j));
    }
}

TEST(CoreData, IsiMeansPerGroup) {
  std::string text = std::string(kHeader) +
                     "1,W,U,d,s,0.2\n"
                     "1,W,U,s,d,0.5\n"
                     "1,W,U,d,s,0.366\n"
                     "2,F,L,d,d,0.433\n"
                     "2,F,L,d,m,0.433\n";
  auto ds = parse_csv(text);
  auto m = isi_means(ds, {Factor::Genotype, Factor::PrevSyllable});
  int w = ds.schema.covariates[0].code_of("W");
  int f = ds.schema.covariates[0].code_of("F");
  EXPECT_NEAR(m.mean(m.shape.flat({w, 0})), 0.283, 1e-12);
  EXPECT_NEAR(m.mean(m.shape.flat({f, 0})), 0.433, 1e-12);
  EXPECT_DOUBLE_EQ(m.mean(m.shape.flat({w, 2})), 0.5);  // single record group
  EXPECT_TRUE(std::isnan(m.mean(m.shape.flat({f, 3}))));
}

TEST(CoreData, RoundTripIsBitExact) {
  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> u(1e-4, 300.0);
  SequenceDataset ds;
  ds.mouse_labels = {"a", "b", "c"};
  for (int s = 0; s < 30; ++s) {
    Sequence seq;
    seq.mouse = s % 3;
    seq.covariates = {s % 2, s % 3};
    int len = 2 + s % 7;
    for (int t = 0; t < len; ++t) seq.syllables.push_back(static_cast<SyllableCode>(gen() % 4));
    for (int t = 0; t + 1 < len; ++t) seq.isis.push_back(u(gen));
    ds.sequences.push_back(seq);
  }
  auto path = std::filesystem::temp_directory_path() / "mrmm_roundtrip.csv";
  write_csv(ds, path.string());
  auto back = load_csv(path.string());
  EXPECT_TRUE(back == ds);
  std::filesystem::remove(path);
}

TEST(CoreData, FullScaleFileParses) {
  std::ostringstream os;
  os << kHeader;
  const char* lab = "dmsu";
  std::mt19937_64 gen(5);
  int prev = 2;
  for (int r = 0; r < 70818; ++r) {
    int cur = gen() % 4;
    os << (r / 4000) << ",F,A," << lab[prev] << ',' << lab[cur] << ",0.0" << (1 + gen() % 9) << '\n';
    prev = cur;
  }
  auto ds = parse_csv(os.str());
  EXPECT_EQ(flatten(ds).size(), 70818u);
}
