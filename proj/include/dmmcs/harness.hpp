#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmmcs/corpus.hpp"
#include "dmmcs/eval.hpp"
#include "dmmcs/lm.hpp"
#include "dmmcs/requests.hpp"
#include "dmmcs/tag_stats.hpp"

namespace dmmcs {

enum class Metric { bleu, ca, gap, perplexity };

inline std::optional<Metric> parse_metric(std::string_view s) {
  if (s == "bleu") return Metric::bleu;
  if (s == "ca") return Metric::ca;
  if (s == "gap") return Metric::gap;
  if (s == "perplexity") return Metric::perplexity;
  return std::nullopt;
}

inline std::string_view to_string(Metric m) {
  switch (m) {
    case Metric::bleu: return "bleu";
    case Metric::ca: return "ca";
    case Metric::gap: return "gap";
    case Metric::perplexity: return "perplexity";
  }
  return "bleu";
}

inline bool higher_is_better(Metric m) { return m == Metric::bleu || m == Metric::ca; }

struct EvalOptions {
  std::set<Metric> metrics{Metric::bleu};
  bool groups = false;
  std::size_t subsets = 0;  // 0 = no subset aggregation
  std::uint64_t seed = 0;
  std::vector<LabelRule> rules = demo_rules();
  const StatsStore* store = nullptr;        // gap
  const EmbeddingTable* table = nullptr;    // gap
  const SequenceModel* model = nullptr;     // perplexity
  FallbackPolicy fallback = FallbackPolicy::median_of_medians;
  bool sentence_order = false;
};

namespace detail {

struct Aligned {
  std::vector<const Example*> gold;
  std::vector<const DecodeOutput*> hyp;
};

inline Aligned align(const Corpus& gold, const std::vector<DecodeOutput>& hyps) {
  Aligned a;
  std::map<std::string, const Example*> by_id;
  for (const auto& ex : gold.examples()) by_id[ex.id] = &ex;
  for (const auto& h : hyps) {
    auto it = by_id.find(h.id);
    if (it == by_id.end()) throw Error("no gold example for decoded id '" + h.id + "'");
    a.gold.push_back(it->second);
    a.hyp.push_back(&h);
  }
  return a;
}

/// Corpus-level value of one metric over a subset of aligned pairs.
inline double corpus_value(Metric m, const Aligned& a, const std::vector<std::size_t>& idx, const EvalOptions& opt,
                           const std::vector<double>& per_example) {
  if (m == Metric::bleu) {
    std::vector<TokenSeq> refs, hyps;
    for (auto i : idx) {
      refs.push_back(tokenize(a.gold[i]->caption));
      hyps.push_back(a.hyp[i]->tokens);
    }
    return bleu(refs, hyps);
  }
  if (m == Metric::perplexity) {
    std::vector<std::vector<TokenId>> seqs;
    for (auto i : idx) seqs.push_back(encode(opt.model->vocab(), a.hyp[i]->tokens));
    return perplexity(*opt.model, seqs);
  }
  double sum = 0.0;
  for (auto i : idx) sum += per_example[i];
  return sum / static_cast<double>(idx.size());
}

}  // namespace detail

/// Per-example values of `m`. BLEU is sentence-level here; CA is the
/// per-caption class agreement.
inline std::vector<double> per_example_values(Metric m, const detail::Aligned& a, const EvalOptions& opt) {
  std::vector<double> out;
  const std::size_t n = a.hyp.size();
  switch (m) {
    case Metric::bleu:
      for (std::size_t i = 0; i < n; ++i) out.push_back(sentence_bleu(tokenize(a.gold[i]->caption), a.hyp[i]->tokens));
      break;
    case Metric::ca: {
      std::vector<std::vector<std::uint8_t>> ref_rows, hyp_rows;
      for (std::size_t i = 0; i < n; ++i) {
        ref_rows.push_back(labelize(tokenize(a.gold[i]->caption), opt.rules, opt.seed + 2 * i));
        hyp_rows.push_back(labelize(a.hyp[i]->tokens, opt.rules, opt.seed + 2 * i + 1));
      }
      out = row_agreement(LabelMatrix::from_rows(ref_rows), LabelMatrix::from_rows(hyp_rows));
      break;
    }
    case Metric::gap: {
      if (!opt.store || !opt.table) throw Error("gap metric needs statistics and embeddings");
      std::vector<CaptionWithTags> items;
      for (std::size_t i = 0; i < n; ++i) items.push_back({a.hyp[i]->tokens, a.gold[i]->tags});
      out = tag_expression_gaps(items, *opt.store, *opt.table, opt.fallback);
      break;
    }
    case Metric::perplexity:
      if (!opt.model) throw Error("perplexity metric needs a model");
      for (std::size_t i = 0; i < n; ++i) out.push_back(perplexity(*opt.model, {encode(opt.model->vocab(), a.hyp[i]->tokens)}));
      break;
  }
  return out;
}

/// Corpus-level value used for tuning: corpus BLEU, mean CA, mean gap, or
/// pooled perplexity.
inline double corpus_metric(Metric m, const Corpus& gold, const std::vector<DecodeOutput>& hyps, const EvalOptions& opt) {
  const auto a = detail::align(gold, hyps);
  if (a.hyp.empty()) throw Error("nothing to evaluate");
  std::vector<std::size_t> all(a.hyp.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const auto per = (m == Metric::bleu || m == Metric::perplexity) ? std::vector<double>{} : per_example_values(m, a, opt);
  return detail::corpus_value(m, a, all, opt, per);
}

/// Full evaluation report as JSON: per-example values, aggregates, corpus
/// values, optional per-group aggregates, subset mean/std and sentence-order
/// positional scores.
inline nlohmann::json evaluate_outputs(const Corpus& gold, const std::vector<DecodeOutput>& hyps, const EvalOptions& opt) {
  const auto a = detail::align(gold, hyps);
  if (a.hyp.empty()) throw Error("nothing to evaluate");
  const std::size_t n = a.hyp.size();
  std::vector<ExampleScores> rows(n);
  for (std::size_t i = 0; i < n; ++i) {
    rows[i].id = a.hyp[i]->id;
    rows[i].group = a.gold[i]->group;
  }
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;

  nlohmann::json corpus_values = nlohmann::json::object();
  std::map<Metric, std::vector<double>> per_metric;
  for (Metric m : opt.metrics) {
    auto values = per_example_values(m, a, opt);
    for (std::size_t i = 0; i < n; ++i) rows[i].metrics[std::string(to_string(m))] = values[i];
    corpus_values[std::string(to_string(m))] = detail::corpus_value(m, a, all, opt, values);
    per_metric[m] = std::move(values);
  }

  EvalReport report = make_report(rows);
  if (opt.groups) {
    for (const auto& [g, r] : group_eval(rows)) report.groups[g] = r.aggregate;
  }
  auto j = to_json(report);
  j["corpus"] = corpus_values;

  if (opt.subsets > 0) {
    const auto parts = random_subsets(n, opt.subsets, opt.seed);
    for (Metric m : opt.metrics) {
      std::vector<double> vals;
      for (const auto& part : parts) vals.push_back(detail::corpus_value(m, a, part, opt, per_metric[m]));
      j["subsets"][std::string(to_string(m))] = to_json(aggregate(vals));
      j["subsets"][std::string(to_string(m))]["values"] = vals;
    }
  }

  if (opt.sentence_order) {
    std::vector<std::vector<double>> by_position;
    std::size_t used = 0, skipped = 0;
    for (std::size_t i = 0; i < n; ++i) {
      auto scores = sentence_order_analysis(a.gold[i]->caption, join(a.hyp[i]->tokens));
      if (!scores) {
        ++skipped;
        continue;
      }
      ++used;
      if (by_position.size() < scores->size()) by_position.resize(scores->size());
      for (std::size_t p = 0; p < scores->size(); ++p) by_position[p].push_back((*scores)[p]);
    }
    nlohmann::json positions = nlohmann::json::array();
    for (const auto& v : by_position) positions.push_back(to_json(aggregate(v)));
    j["sentence_order"] = {{"pairs_used", used}, {"pairs_skipped", skipped}, {"positions", positions}};
  }
  return j;
}

}  // namespace dmmcs
