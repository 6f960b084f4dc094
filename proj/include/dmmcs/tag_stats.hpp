#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmmcs/corpus.hpp"
#include "dmmcs/embeddings.hpp"
#include "dmmcs/error.hpp"
#include "dmmcs/log.hpp"

namespace dmmcs {

/// Maximum concept similarity between a tag and a caption: the largest
/// cosine between the tag centroid and any in-vocabulary caption token.
/// nullopt when no caption token has a vector.
inline std::optional<double> mcs(const TagEmbedding& tag, const TokenSeq& caption,
                                 const EmbeddingTable& table) {
  std::optional<double> best;
  for (const auto& tok : caption) {
    auto v = table.find(tok);
    if (!v) continue;
    double s = cosine(tag.vector, *v);
    if (!best || s > *best) best = s;
  }
  return best;
}

/// Median of an ascending range; even counts average the two middle values.
inline double median_sorted(std::span<const double> sorted) {
  if (sorted.empty()) throw Error("median of an empty sample");
  const auto n = sorted.size();
  if (n % 2 == 1) return sorted[n / 2];
  return (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
}

inline double median(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  return median_sorted(values);
}

/// Linear-interpolated quantile of an ascending sample, q in [0, 1].
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw Error("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + (sorted[hi] - sorted[lo]) * frac;
}

/// Fraction of samples <= x.
inline double ecdf_eval(std::span<const double> sorted, double x) {
  if (sorted.empty()) return 0.0;
  auto it = std::upper_bound(sorted.begin(), sorted.end(), x);
  return static_cast<double>(it - sorted.begin()) / static_cast<double>(sorted.size());
}

/// Two-sample Kolmogorov-Smirnov statistic: the largest |F_a(x) - F_b(x)|
/// over all sample points. Both inputs must be sorted ascending.
inline double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error("ks_statistic: empty sample");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  // Once one side is exhausted its ECDF is 1 and the gap can only shrink.
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

struct TagStats {
  std::string tag;
  double mmcs = 0.0;
  std::vector<double> samples;  // ascending
  std::size_t support = 0;

  bool operator==(const TagStats&) const = default;
};

/// Per-tag MCS distributions learned from training captions.
class StatsStore {
 public:
  StatsStore() = default;
  explicit StatsStore(std::size_t embedding_dim) : embedding_dim_(embedding_dim) {}

  std::size_t embedding_dim() const { return embedding_dim_; }
  const std::map<std::string, TagStats>& per_tag() const { return per_tag_; }
  double default_mmcs() const { return default_mmcs_; }
  bool empty() const { return per_tag_.empty(); }

  void insert(TagStats stats) {
    std::string key = stats.tag;
    per_tag_.insert_or_assign(std::move(key), std::move(stats));
    refresh_default();
  }

  const TagStats* find(const std::string& tag) const {
    auto it = per_tag_.find(tag);
    return it == per_tag_.end() ? nullptr : &it->second;
  }

  bool operator==(const StatsStore&) const = default;

 private:
  void refresh_default() {
    std::vector<double> medians;
    medians.reserve(per_tag_.size());
    for (const auto& [_, s] : per_tag_) medians.push_back(s.mmcs);
    default_mmcs_ = medians.empty() ? 0.0 : median(std::move(medians));
  }

  std::size_t embedding_dim_ = 0;
  std::map<std::string, TagStats> per_tag_;
  double default_mmcs_ = 0.0;
};

/// Builds a TagStats from an unsorted sample.
inline TagStats make_tag_stats(std::string tag, std::vector<double> samples) {
  std::sort(samples.begin(), samples.end());
  TagStats s;
  s.tag = std::move(tag);
  s.mmcs = median_sorted(samples);
  s.support = samples.size();
  s.samples = std::move(samples);
  return s;
}

/// Known tag -> its median; unknown tag -> median of all medians.
inline double lookup_mmcs(const StatsStore& store, const std::string& tag) {
  if (const auto* s = store.find(tag)) return s->mmcs;
  if (store.empty()) throw Error("no statistics available for tag '" + tag + "'");
  return store.default_mmcs();
}

struct BuildStatsSummary {
  std::size_t train_examples = 0;
  std::size_t skipped_captions = 0;       // no in-vocabulary token
  std::vector<std::string> uncoverable_tags;
  std::size_t tags_kept = 0;
};

/// Phase-1 statistics over the train split: for every gold tag, the MCS of
/// each associated caption, sorted, plus its median.
inline StatsStore build_stats(const Corpus& corpus, const EmbeddingTable& table,
                              BuildStatsSummary* summary = nullptr) {
  const auto train = corpus.split(Split::train);
  if (train.empty()) throw Error("build_stats: train split is empty");

  BuildStatsSummary sum;
  sum.train_examples = train.size();
  std::map<std::string, std::optional<TagEmbedding>> embedded;
  std::map<std::string, std::vector<double>> samples;

  for (const Example* ex : train) {
    const TokenSeq caption = tokenize(ex->caption);
    bool counted_skip = false;
    for (const auto& tag : ex->tags) {
      auto [it, fresh] = embedded.try_emplace(tag);
      if (fresh) {
        try {
          it->second = embed_tag(tag, table);
        } catch (const UncoverableTagError&) {
          sum.uncoverable_tags.push_back(tag);
          log::warn("tag '{}' has no in-vocabulary token; excluded", tag);
        }
      }
      if (!it->second) continue;
      auto score = mcs(*it->second, caption, table);
      if (!score) {
        if (!counted_skip) ++sum.skipped_captions;
        counted_skip = true;
        continue;
      }
      samples[tag].push_back(*score);
    }
  }

  StatsStore store(table.dim());
  for (auto& [tag, values] : samples) store.insert(make_tag_stats(tag, std::move(values)));
  for (const auto& [tag, emb] : embedded) {
    if (emb && !samples.contains(tag)) log::warn("tag '{}' has no usable training caption; omitted", tag);
  }
  sum.tags_kept = store.per_tag().size();
  if (sum.skipped_captions > 0) {
    log::warn("{} training captions have no in-vocabulary token and were skipped", sum.skipped_captions);
  }
  if (summary) *summary = std::move(sum);
  return store;
}

inline nlohmann::json to_json(const StatsStore& store) {
  nlohmann::json tags = nlohmann::json::array();
  for (const auto& [_, s] : store.per_tag()) {
    tags.push_back({{"tag", s.tag}, {"mmcs", s.mmcs}, {"support", s.support}, {"samples", s.samples}});
  }
  return {{"embedding_dim", store.embedding_dim()}, {"default_mmcs", store.default_mmcs()}, {"tags", tags}};
}

/// Re-sorts samples and rejects files whose stored median disagrees with
/// the samples.
inline StatsStore stats_from_json(const nlohmann::json& j, const std::string& source = "<json>") {
  try {
    StatsStore store(j.at("embedding_dim").get<std::size_t>());
    for (const auto& t : j.at("tags")) {
      const auto tag = t.at("tag").get<std::string>();
      auto samples = t.at("samples").get<std::vector<double>>();
      if (samples.empty()) throw Error(source + ": tag '" + tag + "' has no samples");
      TagStats s = make_tag_stats(tag, std::move(samples));
      const double stored = t.at("mmcs").get<double>();
      if (std::abs(stored - s.mmcs) > 1e-12) {
        throw Error(fmt::format("{}: tag '{}' mmcs {} is not the median of its samples ({})", source, tag,
                                stored, s.mmcs));
      }
      if (t.contains("support") && t.at("support").get<std::size_t>() != s.support) {
        throw Error(source + ": tag '" + tag + "' support does not match its sample count");
      }
      s.mmcs = stored;
      store.insert(std::move(s));
    }
    return store;
  } catch (const nlohmann::json::exception& e) {
    throw Error(source + ": malformed stats file: " + e.what());
  }
}

inline void save_stats(const std::string& path, const StatsStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write stats '" + path + "'");
  out << to_json(store).dump(1) << '\n';
}

inline StatsStore load_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open stats '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(path + ": invalid JSON: " + e.what());
  }
  return stats_from_json(j, path);
}

}  // namespace dmmcs
