#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mrmm {

inline constexpr int kNumSyllables = 4;
inline constexpr int kNumExogenous = 2;

using SyllableCode = std::uint8_t;

// d, m, s, u <-> 0, 1, 2, 3
char syllable_label(SyllableCode code);
std::optional<SyllableCode> parse_syllable(std::string_view label);

struct CovariateSpec {
  std::string name;
  std::vector<std::string> levels;

  int d() const { return static_cast<int>(levels.size()); }
  // -1 when the label is not a level. Matching is exact and case-sensitive.
  int code_of(std::string_view label) const;
};

// The two exogenous covariates, genotype then context.
struct DataSchema {
  std::array<CovariateSpec, kNumExogenous> covariates;

  static DataSchema standard();  // genotype {F,W}, context {U,L,A}
  void validate() const;
};

struct Sequence {
  int mouse = 0;
  std::array<int, kNumExogenous> covariates{};
  std::vector<SyllableCode> syllables;
  std::vector<double> isis;  // seconds, isis[t] sits between syllables[t] and syllables[t+1]
};

struct SequenceDataset {
  DataSchema schema = DataSchema::standard();
  std::vector<std::string> mouse_labels;  // index = dense mouse id
  std::vector<Sequence> sequences;

  int n_mice() const { return static_cast<int>(mouse_labels.size()); }
  std::size_t n_transitions() const;
  // Throws on any broken invariant.
  void validate() const;
};

bool operator==(const Sequence& a, const Sequence& b);
bool operator==(const SequenceDataset& a, const SequenceDataset& b);

struct FlatRecord {
  int mouse = 0;
  std::array<int, kNumExogenous> covariates{};
  SyllableCode prev = 0;
  SyllableCode cur = 0;
  double isi = 0.0;        // tau, seconds
  double log_isi = 0.0;    // tau tilde = log(1 + tau)
};

SequenceDataset load_csv(const std::string& path, const DataSchema& schema = DataSchema::standard());
SequenceDataset parse_csv(std::string_view text, const DataSchema& schema = DataSchema::standard());

// One row per transition, with a sequence_id column so reloading is exact.
void write_csv(const SequenceDataset& ds, const std::string& path);
std::string to_csv(const SequenceDataset& ds);

std::vector<FlatRecord> flatten(const SequenceDataset& ds);

// Grouping factors for the summary tables.
enum class Factor { Mouse, Genotype, Context, PrevSyllable };

// Dense row-major tensor indexed by the group_by factors in order.
struct GroupShape {
  std::vector<Factor> factors;
  std::vector<int> dims;

  std::size_t size() const;
  std::size_t flat(const std::vector<int>& idx) const;
  std::vector<int> unflat(std::size_t flat) const;
};

struct TransitionCounts {
  GroupShape shape;  // PrevSyllable is not allowed as a factor here
  std::vector<std::int64_t> counts;  // [group][from][to]

  std::int64_t at(std::size_t group, int from, int to) const {
    return counts[(group * kNumSyllables + from) * kNumSyllables + to];
  }
  std::int64_t row_total(std::size_t group, int from) const;
  std::int64_t total() const;
};

struct IsiMeans {
  GroupShape shape;
  std::vector<double> sums;
  std::vector<std::int64_t> counts;

  // NaN for empty groups.
  double mean(std::size_t group) const;
};

TransitionCounts transition_counts(const SequenceDataset& ds, const std::vector<Factor>& group_by);
IsiMeans isi_means(const SequenceDataset& ds, const std::vector<Factor>& group_by);

// Long-format CSV tables with the original labels.
std::string transition_counts_csv(const SequenceDataset& ds, const TransitionCounts& t);
std::string isi_means_csv(const SequenceDataset& ds, const IsiMeans& m);

// Shortest decimal text that parses back to exactly x.
std::string format_double(double x);

}  // namespace mrmm
