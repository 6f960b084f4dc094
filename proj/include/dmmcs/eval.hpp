#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmmcs/corpus.hpp"
#include "dmmcs/decoding.hpp"
#include "dmmcs/error.hpp"
#include "dmmcs/tag_stats.hpp"

namespace dmmcs {

// ---------------------------------------------------------------------------
// BLEU

struct BleuStats {
  std::vector<double> matches;  // clipped n-gram matches, index n-1
  std::vector<double> totals;   // hypothesis n-grams
  double hyp_len = 0.0;
  double ref_len = 0.0;
};

inline BleuStats bleu_stats(const std::vector<TokenSeq>& references, const std::vector<TokenSeq>& hypotheses,
                            std::size_t max_n = 4) {
  if (references.size() != hypotheses.size()) throw Error("bleu: reference and hypothesis counts differ");
  if (max_n < 1) throw Error("bleu: max_n must be >= 1");
  BleuStats st;
  st.matches.assign(max_n, 0.0);
  st.totals.assign(max_n, 0.0);
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto& hyp = hypotheses[s];
    const auto& ref = references[s];
    st.hyp_len += static_cast<double>(hyp.size());
    st.ref_len += static_cast<double>(ref.size());
    for (std::size_t n = 1; n <= max_n; ++n) {
      std::map<std::vector<std::string>, int> ref_counts, hyp_counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i) ++ref_counts[{ref.begin() + i, ref.begin() + i + n}];
      for (std::size_t i = 0; i + n <= hyp.size(); ++i) ++hyp_counts[{hyp.begin() + i, hyp.begin() + i + n}];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) st.matches[n - 1] += std::min(c, it->second);
        st.totals[n - 1] += c;
      }
    }
  }
  return st;
}

/// Corpus BLEU in [0, 100] with brevity penalty. Orders n >= 2 without a
/// single match use add-one precision (m + 1) / (t + 1).
inline double bleu_from_stats(const BleuStats& st) {
  if (st.hyp_len == 0.0 || st.matches.empty() || st.matches[0] == 0.0) return 0.0;
  const std::size_t max_n = st.matches.size();
  double log_sum = 0.0;
  for (std::size_t k = 0; k < max_n; ++k) {
    double p;
    if (k > 0 && st.matches[k] == 0.0) p = (st.matches[k] + 1.0) / (st.totals[k] + 1.0);
    else p = st.matches[k] / st.totals[k];
    log_sum += std::log(p);
  }
  const double bp = st.hyp_len > st.ref_len ? 1.0 : std::exp(1.0 - st.ref_len / st.hyp_len);
  return 100.0 * bp * std::exp(log_sum / static_cast<double>(max_n));
}

inline double bleu(const std::vector<TokenSeq>& references, const std::vector<TokenSeq>& hypotheses,
                   std::size_t max_n = 4) {
  return bleu_from_stats(bleu_stats(references, hypotheses, max_n));
}

inline double sentence_bleu(const TokenSeq& reference, const TokenSeq& hypothesis, std::size_t max_n = 4) {
  return bleu({reference}, {hypothesis}, max_n);
}

// ---------------------------------------------------------------------------
// Clinical accuracy

/// Binary label matrix: rows are captions, columns are classes, 1 = present.
class LabelMatrix {
 public:
  LabelMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0) {}

  static LabelMatrix from_rows(const std::vector<std::vector<std::uint8_t>>& rows) {
    const std::size_t cols = rows.empty() ? 0 : rows.front().size();
    LabelMatrix m(rows.size(), cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != cols) throw Error("label rows have different lengths");
      for (std::size_t c = 0; c < cols; ++c) m.set(r, c, rows[r][c] != 0);
    }
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool present) { data_[r * cols_ + c] = present ? 1 : 0; }

 private:
  std::size_t rows_, cols_;
  std::vector<std::uint8_t> data_;
};

/// Per-caption agreement fraction over classes.
inline std::vector<double> row_agreement(const LabelMatrix& ref, const LabelMatrix& pred) {
  if (ref.rows() != pred.rows() || ref.cols() != pred.cols()) throw Error("clinical accuracy: matrix shapes differ");
  if (ref.cols() == 0) throw Error("clinical accuracy: no classes");
  std::vector<double> out(ref.rows());
  for (std::size_t j = 0; j < ref.rows(); ++j) {
    std::size_t agree = 0;
    for (std::size_t i = 0; i < ref.cols(); ++i) agree += ref.at(j, i) == pred.at(j, i);
    out[j] = static_cast<double>(agree) / static_cast<double>(ref.cols());
  }
  return out;
}

/// Mean over caption pairs of the mean per-class agreement.
inline double clinical_accuracy(const LabelMatrix& ref, const LabelMatrix& pred) {
  const auto rows = row_agreement(ref, pred);
  if (rows.empty()) throw Error("clinical accuracy: no caption pairs");
  double sum = 0.0;
  for (double r : rows) sum += r;
  return sum / static_cast<double>(rows.size());
}

struct LabelRule {
  std::string cls;
  std::vector<TokenSeq> positive_keywords;
  std::vector<TokenSeq> negation_cues;
  std::vector<TokenSeq> unsure_keywords;
};

enum class Mention { present, negative, unsure, blank };

inline std::vector<LabelRule> rules_from_json(const nlohmann::json& j) {
  auto phrases = [](const nlohmann::json& arr) {
    std::vector<TokenSeq> out;
    for (const auto& p : arr) {
      auto toks = tokenize(p.get<std::string>());
      if (!toks.empty()) out.push_back(std::move(toks));
    }
    return out;
  };
  std::vector<LabelRule> rules;
  try {
    for (const auto& r : j) {
      LabelRule rule;
      rule.cls = r.at("class").get<std::string>();
      rule.positive_keywords = phrases(r.at("positive_keywords"));
      rule.negation_cues = phrases(r.value("negation_cues", nlohmann::json::array()));
      rule.unsure_keywords = phrases(r.value("unsure_keywords", nlohmann::json::array()));
      rules.push_back(std::move(rule));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed rule file: ") + e.what());
  }
  return rules;
}

inline std::vector<LabelRule> load_rules(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open rule file '" + path + "'");
  try {
    return rules_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(path + ": invalid JSON: " + e.what());
  }
}

/// Fourteen thoracic findings with keyword lists sized for synthetic corpora.
inline std::vector<LabelRule> demo_rules() {
  static const char* const kJson = R"([
    {"class": "No Finding", "positive_keywords": ["no acute", "normal study", "unremarkable"]},
    {"class": "Enlarged Cardiomediastinum", "positive_keywords": ["widened mediastinum", "enlarged cardiomediastinum"]},
    {"class": "Cardiomegaly", "positive_keywords": ["cardiomegaly", "enlarged heart"]},
    {"class": "Lung Opacity", "positive_keywords": ["opacity", "opacities"]},
    {"class": "Lung Lesion", "positive_keywords": ["lesion", "nodule", "mass"]},
    {"class": "Edema", "positive_keywords": ["edema"]},
    {"class": "Consolidation", "positive_keywords": ["consolidation"]},
    {"class": "Pneumonia", "positive_keywords": ["pneumonia"]},
    {"class": "Atelectasis", "positive_keywords": ["atelectasis"]},
    {"class": "Pneumothorax", "positive_keywords": ["pneumothorax"]},
    {"class": "Pleural Effusion", "positive_keywords": ["effusion", "effusions"]},
    {"class": "Pleural Other", "positive_keywords": ["pleural thickening", "fibrothorax"]},
    {"class": "Fracture", "positive_keywords": ["fracture"]},
    {"class": "Support Devices", "positive_keywords": ["tube", "catheter", "pacemaker", "stent"]}
  ])";
  auto rules = rules_from_json(nlohmann::json::parse(kJson));
  std::vector<TokenSeq> negations, unsure;
  for (const char* p : {"no", "without", "free of", "negative for", "no evidence of"}) negations.push_back(tokenize(p));
  for (const char* p : {"possible", "may", "cannot exclude", "suspected", "likely"}) unsure.push_back(tokenize(p));
  for (auto& r : rules) {
    if (r.cls == "No Finding") continue;
    r.negation_cues = negations;
    r.unsure_keywords = unsure;
  }
  return rules;
}

namespace detail {

inline std::vector<std::size_t> phrase_starts(const TokenSeq& tokens, const TokenSeq& phrase) {
  std::vector<std::size_t> out;
  if (phrase.empty() || phrase.size() > tokens.size()) return out;
  for (std::size_t i = 0; i + phrase.size() <= tokens.size(); ++i) {
    if (std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) out.push_back(i);
  }
  return out;
}

/// True when some cue ends inside the `window` tokens before `pos`.
inline bool cue_before(const TokenSeq& tokens, const std::vector<TokenSeq>& cues, std::size_t pos,
                       std::size_t window) {
  for (const auto& cue : cues) {
    for (std::size_t start : phrase_starts(tokens, cue)) {
      const std::size_t end = start + cue.size();
      if (end <= pos && pos - end < window) return true;
    }
  }
  return false;
}

}  // namespace detail

/// Mention status of one class: any unqualified keyword -> present; else any
/// keyword preceded by an uncertainty cue -> unsure; else any negated keyword
/// -> negative; no keyword -> blank. Cues count within 5 tokens before the
/// keyword.
inline Mention classify(const TokenSeq& caption, const LabelRule& rule) {
  constexpr std::size_t window = 5;
  bool any_unsure = false, any_negative = false;
  for (const auto& kw : rule.positive_keywords) {
    for (std::size_t pos : detail::phrase_starts(caption, kw)) {
      if (detail::cue_before(caption, rule.negation_cues, pos, window)) any_negative = true;
      else if (detail::cue_before(caption, rule.unsure_keywords, pos, window)) any_unsure = true;
      else return Mention::present;
    }
  }
  if (any_unsure) return Mention::unsure;
  if (any_negative) return Mention::negative;
  return Mention::blank;
}

/// Binary label row: blank counts as negative; unsure becomes present or
/// negative with probability 1/2 each from a generator seeded with `seed`.
inline std::vector<std::uint8_t> labelize(const TokenSeq& caption, const std::vector<LabelRule>& rules,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> row(rules.size(), 0);
  for (std::size_t c = 0; c < rules.size(); ++c) {
    switch (classify(caption, rules[c])) {
      case Mention::present: row[c] = 1; break;
      case Mention::negative:
      case Mention::blank: row[c] = 0; break;
      case Mention::unsure: row[c] = static_cast<std::uint8_t>(rng() >> 63); break;
    }
  }
  return row;
}

// ---------------------------------------------------------------------------
// Sentence-order analysis

/// Splits on '.', '!' and '?'; empty sentences are dropped.
inline std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!tokenize(cur).empty()) out.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    if (ch == '.' || ch == '!' || ch == '?') flush();
    else cur += ch;
  }
  flush();
  return out;
}

using PairMetric = std::function<double(const TokenSeq& reference, const TokenSeq& hypothesis)>;

/// Scores aligned sentence pairs position by position. nullopt when the two
/// texts have different sentence counts.
inline std::optional<std::vector<double>> sentence_order_analysis(std::string_view gold, std::string_view generated,
                                                                  const PairMetric& metric = {}) {
  const auto g = split_sentences(gold);
  const auto h = split_sentences(generated);
  if (g.size() != h.size() || g.empty()) return std::nullopt;
  std::vector<double> out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto rt = tokenize(g[i]), ht = tokenize(h[i]);
    out.push_back(metric ? metric(rt, ht) : sentence_bleu(rt, ht));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t count = 0;
};

inline Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  a.count = values.size();
  if (values.empty()) return a;
  double sum = 0.0;
  for (double v : values) sum += v;
  a.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(sq / static_cast<double>(values.size()));
  return a;
}

struct ExampleScores {
  std::string id;
  std::optional<std::string> group;
  std::map<std::string, double> metrics;
};

struct EvalReport {
  std::map<std::string, std::map<std::string, double>> per_example;
  std::map<std::string, Aggregate> aggregate;
  std::map<std::string, std::map<std::string, Aggregate>> groups;
};

inline EvalReport make_report(const std::vector<ExampleScores>& rows) {
  EvalReport r;
  std::map<std::string, std::vector<double>> by_metric;
  for (const auto& row : rows) {
    r.per_example[row.id] = row.metrics;
    for (const auto& [m, v] : row.metrics) by_metric[m].push_back(v);
  }
  for (const auto& [m, vs] : by_metric) r.aggregate[m] = aggregate(vs);
  return r;
}

inline constexpr std::string_view kUngrouped = "ungrouped";

/// Per-group reports; rows without a group land in "ungrouped".
inline std::map<std::string, EvalReport> group_eval(const std::vector<ExampleScores>& rows) {
  std::map<std::string, std::vector<ExampleScores>> parts;
  for (const auto& row : rows) parts[row.group.value_or(std::string(kUngrouped))].push_back(row);
  std::map<std::string, EvalReport> out;
  for (const auto& [g, part] : parts) out[g] = make_report(part);
  return out;
}

inline nlohmann::json to_json(const Aggregate& a) {
  return {{"mean", a.mean}, {"std", a.std}, {"count", a.count}};
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["per_example"] = nlohmann::json::object();
  for (const auto& [id, ms] : r.per_example) j["per_example"][id] = ms;
  j["aggregate"] = nlohmann::json::object();
  for (const auto& [m, a] : r.aggregate) j["aggregate"][m] = to_json(a);
  if (!r.groups.empty()) {
    j["groups"] = nlohmann::json::object();
    for (const auto& [g, ms] : r.groups) {
      for (const auto& [m, a] : ms) j["groups"][g][m] = to_json(a);
    }
  }
  return j;
}

/// Seeded partition of `n` items into `k` disjoint subsets of near-equal size.
inline std::vector<std::vector<std::size_t>> random_subsets(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k == 0 || k > n) throw Error("subset count must be in [1, n]");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
  std::vector<std::vector<std::size_t>> out(k);
  for (std::size_t i = 0; i < n; ++i) out[i % k].push_back(order[i]);
  for (auto& s : out) std::sort(s.begin(), s.end());
  return out;
}

// ---------------------------------------------------------------------------
// Alpha tuning

/// 0.05, 0.10, ..., 0.95.
inline std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 19; ++i) g.push_back(static_cast<double>(i) * 5.0 / 100.0);
  return g;
}

struct TuneResult {
  double best_alpha = 0.0;
  double best_value = 0.0;
  std::vector<std::pair<double, double>> curve;  // (alpha, metric) in grid order
};

/// Evaluates `evaluate(alpha)` for every grid value and keeps the best one;
/// ties go to the smaller alpha. With higher_is_better = false the metric is
/// minimized instead.
inline TuneResult tune_alpha(const std::vector<double>& grid, const std::function<double(double)>& evaluate,
                             bool higher_is_better = true) {
  if (grid.empty()) throw Error("tune_alpha: empty grid");
  TuneResult r;
  bool have = false;
  for (double a : grid) {
    const double v = evaluate(a);
    r.curve.emplace_back(a, v);
    const bool better = !have || (higher_is_better ? v > r.best_value : v < r.best_value) ||
                        (v == r.best_value && a < r.best_alpha);
    if (better) {
      r.best_alpha = a;
      r.best_value = v;
      have = true;
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Tag-expression gap

struct CaptionWithTags {
  TokenSeq caption;
  std::vector<std::string> tags;
};

/// Penalty of each finished caption against its tags' target strengths.
inline std::vector<double> tag_expression_gaps(const std::vector<CaptionWithTags>& items, const StatsStore& store,
                                               const EmbeddingTable& table,
                                               FallbackPolicy policy = FallbackPolicy::median_of_medians) {
  std::vector<double> out;
  out.reserve(items.size());
  for (const auto& it : items) {
    PenaltyContext ctx(it.tags, store, table, policy);
    out.push_back(dmmcs_penalty(ctx, ctx.state_of(it.caption)));
  }
  return out;
}

inline double tag_expression_gap(const std::vector<CaptionWithTags>& items, const StatsStore& store,
                                 const EmbeddingTable& table,
                                 FallbackPolicy policy = FallbackPolicy::median_of_medians) {
  if (items.empty()) throw Error("tag_expression_gap: no captions");
  return aggregate(tag_expression_gaps(items, store, table, policy)).mean;
}

}  // namespace dmmcs
