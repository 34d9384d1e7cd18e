#include "mrmm/core_data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "mrmm/errors.hpp"

namespace mrmm {

namespace {

constexpr const char* kLabels = "dmsu";
const std::array<const char*, 6> kColumns = {"mouse_id", "genotype", "context", "prev_syllable", "syllable", "isi"};

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

int factor_dim(const SequenceDataset& ds, Factor f) {
  switch (f) {
    case Factor::Mouse: return ds.n_mice();
    case Factor::Genotype: return ds.schema.covariates[0].d();
    case Factor::Context: return ds.schema.covariates[1].d();
    case Factor::PrevSyllable: return kNumSyllables;
  }
  return 0;
}

GroupShape make_shape(const SequenceDataset& ds, const std::vector<Factor>& group_by) {
  GroupShape s;
  s.factors = group_by;
  for (auto f : group_by) s.dims.push_back(factor_dim(ds, f));
  return s;
}

std::size_t group_of(const GroupShape& shape, const Sequence& seq, int prev) {
  std::size_t g = 0;
  for (std::size_t i = 0; i < shape.factors.size(); ++i) {
    int v = 0;
    switch (shape.factors[i]) {
      case Factor::Mouse: v = seq.mouse; break;
      case Factor::Genotype: v = seq.covariates[0]; break;
      case Factor::Context: v = seq.covariates[1]; break;
      case Factor::PrevSyllable: v = prev; break;
    }
    g = g * static_cast<std::size_t>(shape.dims[i]) + static_cast<std::size_t>(v);
  }
  return g;
}

const char* factor_name(Factor f) {
  switch (f) {
    case Factor::Mouse: return "mouse_id";
    case Factor::Genotype: return "genotype";
    case Factor::Context: return "context";
    case Factor::PrevSyllable: return "prev_syllable";
  }
  return "";
}

std::string factor_label(const SequenceDataset& ds, Factor f, int code) {
  switch (f) {
    case Factor::Mouse: return ds.mouse_labels[code];
    case Factor::Genotype: return ds.schema.covariates[0].levels[code];
    case Factor::Context: return ds.schema.covariates[1].levels[code];
    case Factor::PrevSyllable: return std::string(1, kLabels[code]);
  }
  return {};
}

std::string group_label_prefix(const SequenceDataset& ds, const GroupShape& shape, std::size_t g) {
  std::string out;
  auto idx = shape.unflat(g);
  for (std::size_t i = 0; i < idx.size(); ++i) out += factor_label(ds, shape.factors[i], idx[i]) + ",";
  return out;
}

std::string group_header_prefix(const GroupShape& shape) {
  std::string out;
  for (auto f : shape.factors) out += std::string(factor_name(f)) + ",";
  return out;
}

}  // namespace

char syllable_label(SyllableCode code) {
  if (code >= kNumSyllables) throw DomainError("syllable code out of range");
  return kLabels[code];
}

std::optional<SyllableCode> parse_syllable(std::string_view label) {
  if (label.size() != 1) return std::nullopt;
  for (int c = 0; c < kNumSyllables; ++c)
    if (label[0] == kLabels[c]) return static_cast<SyllableCode>(c);
  return std::nullopt;
}

int CovariateSpec::code_of(std::string_view label) const {
  for (std::size_t i = 0; i < levels.size(); ++i)
    if (levels[i] == label) return static_cast<int>(i);
  return -1;
}

DataSchema DataSchema::standard() {
  DataSchema s;
  s.covariates[0] = {"genotype", {"F", "W"}};
  s.covariates[1] = {"context", {"U", "L", "A"}};
  return s;
}

void DataSchema::validate() const {
  for (const auto& c : covariates) {
    if (c.levels.empty()) throw InvalidSpec("covariate '" + c.name + "' has no levels");
    for (std::size_t i = 0; i < c.levels.size(); ++i)
      for (std::size_t j = i + 1; j < c.levels.size(); ++j)
        if (c.levels[i] == c.levels[j]) throw InvalidSpec("duplicate level '" + c.levels[i] + "' in " + c.name);
  }
}

std::size_t SequenceDataset::n_transitions() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.syllables.size() - 1;
  return n;
}

void SequenceDataset::validate() const {
  schema.validate();
  for (std::size_t k = 0; k < sequences.size(); ++k) {
    const auto& s = sequences[k];
    std::string where = "sequence " + std::to_string(k);
    if (s.syllables.size() < 2) throw InvalidSpec(where + " has fewer than 2 syllables");
    if (s.isis.size() + 1 != s.syllables.size()) throw InvalidSpec(where + " has mismatched isi count");
    if (s.mouse < 0 || s.mouse >= n_mice()) throw InvalidSpec(where + " has an invalid mouse id");
    for (int j = 0; j < kNumExogenous; ++j)
      if (s.covariates[j] < 0 || s.covariates[j] >= schema.covariates[j].d())
        throw InvalidSpec(where + " has an invalid " + schema.covariates[j].name + " code");
    for (auto y : s.syllables)
      if (y >= kNumSyllables) throw InvalidSpec(where + " has an invalid syllable code");
    for (double t : s.isis)
      if (!(t > 0.0) || !std::isfinite(t)) throw NonPositiveIsi(where + " has a non-positive isi");
  }
}

bool operator==(const Sequence& a, const Sequence& b) {
  return a.mouse == b.mouse && a.covariates == b.covariates && a.syllables == b.syllables && a.isis == b.isis;
}

bool operator==(const SequenceDataset& a, const SequenceDataset& b) {
  for (int j = 0; j < kNumExogenous; ++j)
    if (a.schema.covariates[j].levels != b.schema.covariates[j].levels) return false;
  return a.mouse_labels == b.mouse_labels && a.sequences == b.sequences;
}

SequenceDataset parse_csv(std::string_view text, const DataSchema& schema) {
  schema.validate();
  SequenceDataset ds;
  ds.schema = schema;

  std::size_t pos = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    line = trim_cr(text.substr(pos, end - pos));
    pos = end + 1;
    return true;
  };

  std::string_view line;
  if (!next_line(line)) throw schema_mismatch("header", 0, "empty file");
  auto header = split_fields(line);
  bool has_seq_id = header.size() == 7;
  if (header.size() != 6 && !has_seq_id) throw schema_mismatch("header", 0, "expected 6 or 7 columns");
  for (std::size_t c = 0; c < kColumns.size(); ++c)
    if (header[c] != kColumns[c]) throw schema_mismatch(kColumns[c], 0, "unexpected header '" + std::string(header[c]) + "'");
  if (has_seq_id && header[6] != "sequence_id") throw schema_mismatch("sequence_id", 0, "unexpected header");

  std::unordered_map<std::string, int> mouse_index;
  std::string last_key;
  std::string last_seq_id;
  std::size_t row = 0;
  while (next_line(line)) {
    ++row;
    if (line.empty()) continue;
    auto f = split_fields(line);
    if (f.size() != header.size())
      throw schema_mismatch(f.size() < header.size() ? kColumns[std::min<std::size_t>(f.size(), 5)] : "row", row,
                            "expected " + std::to_string(header.size()) + " fields");
    if (f[0].empty()) throw schema_mismatch("mouse_id", row, "empty mouse id");

    std::array<int, kNumExogenous> cov{};
    for (int j = 0; j < kNumExogenous; ++j) {
      cov[j] = schema.covariates[j].code_of(f[1 + j]);
      if (cov[j] < 0) throw invalid_level(std::string(f[1 + j]), row);
    }
    auto prev = parse_syllable(f[3]);
    if (!prev) throw invalid_level(std::string(f[3]), row);
    auto cur = parse_syllable(f[4]);
    if (!cur) throw invalid_level(std::string(f[4]), row);

    double isi = 0.0;
    auto isi_text = f[5];
    if (!isi_text.empty() && isi_text.front() == '+') isi_text.remove_prefix(1);
    auto [ptr, ec] = std::from_chars(isi_text.data(), isi_text.data() + isi_text.size(), isi);
    if (ec != std::errc() || ptr != isi_text.data() + isi_text.size() || isi_text.empty())
      throw schema_mismatch("isi", row, "not a number");
    if (std::isnan(isi) || std::isinf(isi)) throw schema_mismatch("isi", row, "not finite");
    if (!(isi > 0.0)) throw non_positive_isi(row);

    std::string mouse(f[0]);
    auto [it, inserted] = mouse_index.try_emplace(mouse, static_cast<int>(ds.mouse_labels.size()));
    if (inserted) ds.mouse_labels.push_back(mouse);

    std::string key = mouse + '\x1f' + std::to_string(cov[0]) + '\x1f' + std::to_string(cov[1]);
    bool new_sequence = ds.sequences.empty();
    if (!new_sequence) {
      const auto& back = ds.sequences.back();
      bool chained = back.syllables.back() == *prev;
      if (has_seq_id) {
        if (f[6] != last_seq_id) {
          new_sequence = true;
        } else if (key != last_key || !chained) {
          throw schema_mismatch(key != last_key ? "mouse_id" : "prev_syllable", row,
                                "row does not continue sequence '" + last_seq_id + "'");
        }
      } else {
        new_sequence = key != last_key || !chained;
      }
    }
    if (new_sequence) {
      Sequence s;
      s.mouse = it->second;
      s.covariates = cov;
      s.syllables.push_back(*prev);
      ds.sequences.push_back(std::move(s));
    }
    auto& s = ds.sequences.back();
    s.syllables.push_back(*cur);
    s.isis.push_back(isi);
    last_key = std::move(key);
    if (has_seq_id) last_seq_id = std::string(f[6]);
  }
  return ds;
}

SequenceDataset load_csv(const std::string& path, const DataSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFile("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_csv(buf.str(), schema);
}

std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  if (ec != std::errc()) throw DomainError("cannot format number");
  return std::string(buf, ptr);
}

std::string to_csv(const SequenceDataset& ds) {
  std::string out = "mouse_id,genotype,context,prev_syllable,syllable,isi,sequence_id\n";
  for (std::size_t k = 0; k < ds.sequences.size(); ++k) {
    const auto& s = ds.sequences[k];
    const std::string prefix = ds.mouse_labels[s.mouse] + ',' + ds.schema.covariates[0].levels[s.covariates[0]] + ',' +
                               ds.schema.covariates[1].levels[s.covariates[1]] + ',';
    const std::string id = std::to_string(k);
    for (std::size_t t = 0; t + 1 < s.syllables.size(); ++t) {
      out += prefix;
      out += kLabels[s.syllables[t]];
      out += ',';
      out += kLabels[s.syllables[t + 1]];
      out += ',';
      out += format_double(s.isis[t]);
      out += ',';
      out += id;
      out += '\n';
    }
  }
  return out;
}

void write_csv(const SequenceDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << to_csv(ds);
  if (!out) throw IoError("write failed for '" + path + "'");
}

std::vector<FlatRecord> flatten(const SequenceDataset& ds) {
  std::vector<FlatRecord> out;
  out.reserve(ds.n_transitions());
  for (const auto& s : ds.sequences) {
    for (std::size_t t = 0; t + 1 < s.syllables.size(); ++t) {
      FlatRecord r;
      r.mouse = s.mouse;
      r.covariates = s.covariates;
      r.prev = s.syllables[t];
      r.cur = s.syllables[t + 1];
      r.isi = s.isis[t];
      r.log_isi = std::log1p(s.isis[t]);
      out.push_back(r);
    }
  }
  return out;
}

std::size_t GroupShape::size() const {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

std::size_t GroupShape::flat(const std::vector<int>& idx) const {
  std::size_t g = 0;
  for (std::size_t i = 0; i < dims.size(); ++i) g = g * static_cast<std::size_t>(dims[i]) + static_cast<std::size_t>(idx[i]);
  return g;
}

std::vector<int> GroupShape::unflat(std::size_t g) const {
  std::vector<int> idx(dims.size());
  for (std::size_t i = dims.size(); i-- > 0;) {
    idx[i] = static_cast<int>(g % static_cast<std::size_t>(dims[i]));
    g /= static_cast<std::size_t>(dims[i]);
  }
  return idx;
}

std::int64_t TransitionCounts::row_total(std::size_t group, int from) const {
  std::int64_t s = 0;
  for (int to = 0; to < kNumSyllables; ++to) s += at(group, from, to);
  return s;
}

std::int64_t TransitionCounts::total() const {
  std::int64_t s = 0;
  for (auto c : counts) s += c;
  return s;
}

double IsiMeans::mean(std::size_t group) const {
  if (counts[group] == 0) return std::numeric_limits<double>::quiet_NaN();
  return sums[group] / static_cast<double>(counts[group]);
}

TransitionCounts transition_counts(const SequenceDataset& ds, const std::vector<Factor>& group_by) {
  for (auto f : group_by)
    if (f == Factor::PrevSyllable) throw DomainError("prev_syllable is the row index of a transition table");
  TransitionCounts t;
  t.shape = make_shape(ds, group_by);
  t.counts.assign(t.shape.size() * kNumSyllables * kNumSyllables, 0);
  for (const auto& s : ds.sequences) {
    std::size_t g = group_of(t.shape, s, 0);
    for (std::size_t i = 0; i + 1 < s.syllables.size(); ++i)
      ++t.counts[(g * kNumSyllables + s.syllables[i]) * kNumSyllables + s.syllables[i + 1]];
  }
  return t;
}

IsiMeans isi_means(const SequenceDataset& ds, const std::vector<Factor>& group_by) {
  IsiMeans m;
  m.shape = make_shape(ds, group_by);
  m.sums.assign(m.shape.size(), 0.0);
  m.counts.assign(m.shape.size(), 0);
  for (const auto& s : ds.sequences) {
    for (std::size_t i = 0; i + 1 < s.syllables.size(); ++i) {
      std::size_t g = group_of(m.shape, s, s.syllables[i]);
      m.sums[g] += s.isis[i];
      ++m.counts[g];
    }
  }
  return m;
}

std::string transition_counts_csv(const SequenceDataset& ds, const TransitionCounts& t) {
  std::string out = group_header_prefix(t.shape) + "from,to,count\n";
  for (std::size_t g = 0; g < t.shape.size(); ++g) {
    std::string prefix = group_label_prefix(ds, t.shape, g);
    for (int a = 0; a < kNumSyllables; ++a)
      for (int b = 0; b < kNumSyllables; ++b)
        out += prefix + kLabels[a] + ',' + kLabels[b] + ',' + std::to_string(t.at(g, a, b)) + '\n';
  }
  return out;
}

std::string isi_means_csv(const SequenceDataset& ds, const IsiMeans& m) {
  std::string out = group_header_prefix(m.shape) + "mean_isi,count\n";
  for (std::size_t g = 0; g < m.shape.size(); ++g) {
    double v = m.mean(g);
    out += group_label_prefix(ds, m.shape, g) + (std::isnan(v) ? std::string("NA") : format_double(v)) + ',' +
           std::to_string(m.counts[g]) + '\n';
  }
  return out;
}

}  // namespace mrmm
