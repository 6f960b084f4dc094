#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dmmcs/corpus.hpp"
#include "dmmcs/embeddings.hpp"
#include "dmmcs/error.hpp"
#include "dmmcs/lm.hpp"
#include "dmmcs/log.hpp"
#include "dmmcs/tag_stats.hpp"

namespace dmmcs {

enum class Method { standard, dmmcs, dmmcs_hd, constrained_all, constrained_any };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::standard: return "standard";
    case Method::dmmcs: return "dmmcs";
    case Method::dmmcs_hd: return "dmmcs-hd";
    case Method::constrained_all: return "constrained-all";
    case Method::constrained_any: return "constrained-any";
  }
  return "standard";
}

/// Accepts both dash and underscore spellings.
inline std::optional<Method> parse_method(std::string_view s) {
  std::string k(s);
  std::replace(k.begin(), k.end(), '_', '-');
  for (Method m : {Method::standard, Method::dmmcs, Method::dmmcs_hd, Method::constrained_all, Method::constrained_any}) {
    if (k == to_string(m)) return m;
  }
  return std::nullopt;
}

inline bool uses_penalty(Method m) { return m == Method::dmmcs || m == Method::dmmcs_hd; }
inline bool is_constrained(Method m) { return m == Method::constrained_all || m == Method::constrained_any; }

/// What to do with a tag that has no training statistics.
enum class FallbackPolicy { median_of_medians, skip_tag };

struct DecodingConfig {
  static constexpr std::size_t unbounded_beam = std::numeric_limits<std::size_t>::max();

  Method method = Method::standard;
  std::size_t beam_width = 4;  // unbounded_beam disables pruning
  std::size_t max_len = 20;    // counts the EOS token
  double alpha = 0.0;          // dmmcs methods only
  FallbackPolicy fallback = FallbackPolicy::median_of_medians;

  void validate() const {
    if (beam_width < 1) throw Error("beam width must be >= 1");
    if (max_len < 1) throw Error("max length must be >= 1");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("alpha must lie in [0, 1]");
  }
};

struct Hypothesis {
  std::vector<TokenId> tokens;
  double raw_nll = 0.0;
  bool finished = false;
  double combined_score = 0.0;  // lower is better
  double penalty = 0.0;
  // Per usable tag: max similarity over covered tokens so far, -inf before
  // the first covered token.
  std::vector<double> running_mcs;
  std::vector<char> satisfied;  // per lexical constraint
};

struct BeamState {
  std::size_t step = 0;
  std::vector<Hypothesis> pool;  // scored candidates before pruning
  std::optional<double> hd;
};

/// Running MCS as used by the penalty: an uncovered prefix counts as 0.
inline double expressed(double running) { return std::isfinite(running) ? running : 0.0; }

/// The input's usable tags together with their target strengths.
class PenaltyContext {
 public:
  PenaltyContext() = default;

  /// Tags without a covered token are dropped with a warning. Tags missing
  /// from `store` take the median of medians or are dropped, per `policy`.
  PenaltyContext(const std::vector<std::string>& tags, const StatsStore& store, const EmbeddingTable& table,
                 FallbackPolicy policy)
      : table_(&table) {
    for (const auto& tag : dedup_tags(tags)) {
      std::optional<TagEmbedding> emb;
      try {
        emb = embed_tag(tag, table);
      } catch (const UncoverableTagError&) {
        log::warn("tag '{}' has no in-vocabulary token; excluded from the penalty", tag);
        excluded_.push_back(tag);
        continue;
      }
      const TagStats* stats = store.find(tag);
      double target = 0.0;
      if (stats) {
        target = stats->mmcs;
      } else if (policy == FallbackPolicy::skip_tag || store.empty()) {
        log::warn("tag '{}' has no training statistics; skipped", tag);
        excluded_.push_back(tag);
        continue;
      } else {
        target = store.default_mmcs();
      }
      embeddings_.push_back(std::move(*emb));
      targets_.push_back(target);
      training_.push_back(stats);
    }
  }

  std::size_t size() const { return embeddings_.size(); }
  const std::vector<TagEmbedding>& tag_embeddings() const { return embeddings_; }
  const std::vector<double>& targets() const { return targets_; }
  /// Training-side statistics per tag; null for a tag using the fallback target.
  const std::vector<const TagStats*>& training() const { return training_; }
  const std::vector<std::string>& excluded() const { return excluded_; }

  std::vector<double> initial_state() const {
    return std::vector<double>(size(), -std::numeric_limits<double>::infinity());
  }

  /// Cosine of `token` against every tag, or nullopt for an OOV token.
  std::optional<std::vector<double>> similarities(std::string_view token) const {
    auto v = table_ ? table_->find(token) : std::nullopt;
    if (!v) return std::nullopt;
    std::vector<double> out(size());
    for (std::size_t t = 0; t < size(); ++t) out[t] = cosine(embeddings_[t].vector, *v);
    return out;
  }

  static void advance(std::vector<double>& state, std::span<const double> sims) {
    for (std::size_t t = 0; t < state.size(); ++t) state[t] = std::max(state[t], sims[t]);
  }

  /// Running state of a whole caption, computed from scratch.
  std::vector<double> state_of(const TokenSeq& caption) const {
    auto state = initial_state();
    for (const auto& tok : caption) {
      if (auto s = similarities(tok)) advance(state, *s);
    }
    return state;
  }

 private:
  const EmbeddingTable* table_ = nullptr;
  std::vector<TagEmbedding> embeddings_;
  std::vector<double> targets_;
  std::vector<const TagStats*> training_;
  std::vector<std::string> excluded_;
};

/// Mean squared gap between each tag's expressed strength and its target.
/// Zero when there are no usable tags.
inline double dmmcs_penalty(const PenaltyContext& ctx, std::span<const double> running_mcs) {
  if (ctx.size() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t t = 0; t < ctx.size(); ++t) {
    const double gap = expressed(running_mcs[t]) - ctx.targets()[t];
    sum += gap * gap;
  }
  return sum / static_cast<double>(ctx.size());
}

inline double dmmcs_penalty(const PenaltyContext& ctx, const Hypothesis& hyp) {
  return dmmcs_penalty(ctx, hyp.running_mcs);
}

/// Min-max goodness over a candidate pool: the lowest NLL maps to 1 and the
/// highest to 0; a degenerate pool maps to all ones.
inline std::vector<double> normalize_pool(std::span<const double> raw_nlls) {
  std::vector<double> out(raw_nlls.size(), 1.0);
  if (raw_nlls.empty()) return out;
  const auto [lo, hi] = std::minmax_element(raw_nlls.begin(), raw_nlls.end());
  const double min = *lo, max = *hi;
  if (max == min) return out;
  for (std::size_t i = 0; i < raw_nlls.size(); ++i) out[i] = (max - raw_nlls[i]) / (max - min);
  return out;
}

inline double combine_scores(double alpha, double penalty, double norm_goodness) {
  return alpha * penalty + (1.0 - alpha) * (1.0 - norm_goodness);
}

inline double combine_scores_hd(double alpha, double hd, double penalty, double norm_goodness) {
  return alpha * (1.0 - hd) * penalty + (1.0 - alpha) * hd * (1.0 - norm_goodness);
}

/// Mean over tags of the KS statistic between the tag's training MCS sample
/// and its MCS values across `pool`. Tags without training samples are left
/// out; if none remain the result is 1.
inline double histogram_divergence(const PenaltyContext& ctx, std::span<const Hypothesis> pool) {
  if (pool.empty()) throw Error("histogram_divergence: empty pool");
  double sum = 0.0;
  std::size_t used = 0;
  std::vector<double> generated(pool.size());
  for (std::size_t t = 0; t < ctx.size(); ++t) {
    const TagStats* train = ctx.training()[t];
    if (!train || train->samples.empty()) continue;
    for (std::size_t i = 0; i < pool.size(); ++i) generated[i] = expressed(pool[i].running_mcs[t]);
    std::sort(generated.begin(), generated.end());
    sum += ks_statistic(train->samples, generated);
    ++used;
  }
  return used == 0 ? 1.0 : sum / static_cast<double>(used);
}

struct DecodeResult {
  Hypothesis best;
  bool constraints_satisfied = true;
  std::vector<std::string> warnings;
};

using DecodeObserver = std::function<void(const BeamState&)>;

namespace detail {

struct Constraint {
  std::vector<TokenId> ids;
  bool feasible = true;  // every phrase token exists in the model vocabulary
};

inline std::vector<Constraint> make_constraints(const std::vector<std::string>& tags, const Vocab& vocab) {
  std::vector<Constraint> out;
  for (const auto& tag : dedup_tags(tags)) {
    Constraint c;
    for (const auto& tok : tokenize(tag)) {
      auto id = vocab.id(tok);
      if (!id) c.feasible = false;
      else c.ids.push_back(*id);
    }
    if (c.ids.empty() && c.feasible) continue;  // tag tokenizes to nothing
    out.push_back(std::move(c));
  }
  return out;
}

inline bool ends_with(const std::vector<TokenId>& seq, const std::vector<TokenId>& phrase) {
  if (phrase.size() > seq.size()) return false;
  return std::equal(phrase.rbegin(), phrase.rend(), seq.rbegin());
}

inline std::size_t count_satisfied(const Hypothesis& h) {
  return static_cast<std::size_t>(std::count(h.satisfied.begin(), h.satisfied.end(), char{1}));
}

inline bool lex_less(const Hypothesis& a, const Hypothesis& b) {
  return std::lexicographical_compare(a.tokens.begin(), a.tokens.end(), b.tokens.begin(), b.tokens.end());
}

/// Order by combined score, then raw NLL, then token ids.
inline bool ranks_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.combined_score != b.combined_score) return a.combined_score < b.combined_score;
  if (a.raw_nll != b.raw_nll) return a.raw_nll < b.raw_nll;
  return lex_less(a, b);
}

inline bool nll_before(const Hypothesis& a, const Hypothesis& b) {
  if (a.raw_nll != b.raw_nll) return a.raw_nll < b.raw_nll;
  return lex_less(a, b);
}

}  // namespace detail

/// Beam search over `model` with the scoring rule selected by cfg.method.
///
/// Each step expands every unfinished hypothesis over the whole vocabulary;
/// finished hypotheses are carried into the candidate pool unchanged. The
/// pool is scored as a whole (min-max goodness and HD are pool-level), then
/// pruned to beam_width. Decoding stops once every kept hypothesis is
/// finished. `store` and `table` are required for the dmmcs methods only.
inline DecodeResult decode(const SequenceModel& model, const DecodingConfig& cfg, const std::vector<std::string>& tags,
                           const StatsStore* store = nullptr, const EmbeddingTable* table = nullptr,
                           const DecodeObserver& observer = {}) {
  cfg.validate();
  const Vocab& vocab = model.vocab();
  if (vocab.outcome_count() == 0) throw Error("decode: model vocabulary is empty");
  DecodeResult result;
  const bool penalized = uses_penalty(cfg.method);
  const bool constrained = is_constrained(cfg.method);

  PenaltyContext ctx;
  std::vector<std::optional<std::vector<double>>> token_sims;
  if (penalized) {
    if (!store || !table) throw Error("decode: dmmcs methods need statistics and embeddings");
    ctx = PenaltyContext(tags, *store, *table, cfg.fallback);
    if (ctx.size() == 0) {
      result.warnings.push_back("no usable tag; ranking by decoder score only");
      log::warn("no usable tag for dmmcs; ranking by decoder score only");
    }
    token_sims.resize(vocab.size());
    for (std::size_t id = 2; id < vocab.size(); ++id) token_sims[id] = ctx.similarities(vocab.token(static_cast<TokenId>(id)));
  }

  std::vector<detail::Constraint> constraints;
  if (constrained) constraints = detail::make_constraints(tags, vocab);
  // Infeasible phrases can never occur; EOS is gated on the feasible ones
  // only and the result is flagged afterwards.
  const auto feasible = static_cast<std::size_t>(
      std::count_if(constraints.begin(), constraints.end(), [](const detail::Constraint& c) { return c.feasible; }));
  const bool all_feasible = feasible == constraints.size();
  const std::size_t needed = cfg.method == Method::constrained_all ? feasible : std::min<std::size_t>(feasible, 1);
  auto progress = [&](const Hypothesis& h) { return std::min(detail::count_satisfied(h), needed); };
  auto may_finish = [&](const Hypothesis& h) { return progress(h) >= needed; };

  Hypothesis root;
  root.running_mcs = ctx.initial_state();
  root.satisfied.assign(constraints.size(), 0);
  std::vector<Hypothesis> beam{root};
  const std::size_t outcome_ids = vocab.size();

  for (std::size_t step = 1; step <= cfg.max_len; ++step) {
    if (std::all_of(beam.begin(), beam.end(), [](const Hypothesis& h) { return h.finished; })) break;

    std::vector<std::span<const TokenId>> prefixes;
    for (const auto& h : beam) {
      if (!h.finished) prefixes.emplace_back(h.tokens);
    }
    const auto dists = model.next_logprobs_batch(prefixes);

    std::vector<Hypothesis> pool, blocked;
    std::size_t next_dist = 0;
    for (const auto& h : beam) {
      if (h.finished) {
        pool.push_back(h);
        continue;
      }
      const auto& lp = dists[next_dist++];
      if (lp.size() != outcome_ids) throw ContractViolation("decode: distribution size does not match vocabulary");
      for (std::size_t id = 1; id < outcome_ids; ++id) {
        if (lp[id] == -std::numeric_limits<double>::infinity()) continue;
        Hypothesis c;
        c.tokens.reserve(h.tokens.size() + 1);
        c.tokens = h.tokens;
        c.tokens.push_back(static_cast<TokenId>(id));
        c.raw_nll = h.raw_nll - lp[id];
        c.running_mcs = h.running_mcs;
        c.satisfied = h.satisfied;
        if (id == static_cast<std::size_t>(Vocab::eos)) {
          c.finished = true;
          if (constrained && !may_finish(h)) {
            blocked.push_back(std::move(c));
            continue;
          }
        } else {
          if (penalized && token_sims[id]) PenaltyContext::advance(c.running_mcs, *token_sims[id]);
          for (std::size_t k = 0; k < constraints.size(); ++k) {
            if (!c.satisfied[k] && constraints[k].feasible && detail::ends_with(c.tokens, constraints[k].ids)) {
              c.satisfied[k] = 1;
            }
          }
          c.finished = c.tokens.size() >= cfg.max_len;
        }
        pool.push_back(std::move(c));
      }
    }
    if (pool.empty()) pool = std::move(blocked);
    if (pool.empty()) throw ContractViolation("decode: model assigns zero probability to every continuation");

    BeamState state{step, {}, std::nullopt};
    if (penalized) {
      std::vector<double> nlls(pool.size());
      for (std::size_t i = 0; i < pool.size(); ++i) nlls[i] = pool[i].raw_nll;
      const auto goodness = normalize_pool(nlls);
      if (cfg.method == Method::dmmcs_hd) state.hd = histogram_divergence(ctx, pool);
      for (std::size_t i = 0; i < pool.size(); ++i) {
        auto& c = pool[i];
        c.penalty = dmmcs_penalty(ctx, c);
        c.combined_score = state.hd ? combine_scores_hd(cfg.alpha, *state.hd, c.penalty, goodness[i])
                                    : combine_scores(cfg.alpha, c.penalty, goodness[i]);
      }
    } else {
      for (auto& c : pool) c.combined_score = c.raw_nll;
    }

    if (observer) {
      state.pool = pool;
      observer(state);
    }

    if (!constrained) {
      const std::size_t keep = std::min(cfg.beam_width, pool.size());
      std::partial_sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(keep), pool.end(),
                        detail::ranks_before);
      pool.resize(keep);
      beam = std::move(pool);
      continue;
    }

    // Grouped beam: one bank per constraint-progress level, filled round-robin
    // from the most advanced bank down so every populated bank gets a slot.
    std::vector<std::vector<Hypothesis>> banks(needed + 1);
    for (auto& c : pool) banks[progress(c)].push_back(std::move(c));
    for (auto& b : banks) std::sort(b.begin(), b.end(), detail::nll_before);
    std::vector<Hypothesis> next;
    std::vector<std::size_t> taken(banks.size(), 0);
    bool added = true;
    while (next.size() < cfg.beam_width && added) {
      added = false;
      for (std::size_t b = banks.size(); b-- > 0 && next.size() < cfg.beam_width;) {
        if (taken[b] < banks[b].size()) {
          next.push_back(std::move(banks[b][taken[b]++]));
          added = true;
        }
      }
    }
    beam = std::move(next);
  }

  if (!constrained) {
    result.best = *std::min_element(beam.begin(), beam.end(), detail::ranks_before);
    return result;
  }

  std::vector<const Hypothesis*> ok;
  for (const auto& h : beam) {
    if (h.finished && may_finish(h)) ok.push_back(&h);
  }
  if (!ok.empty()) {
    result.best = **std::min_element(ok.begin(), ok.end(),
                                     [](const Hypothesis* a, const Hypothesis* b) { return detail::nll_before(*a, *b); });
    result.constraints_satisfied =
        cfg.method == Method::constrained_all ? all_feasible : (feasible > 0 || constraints.empty());
    if (!result.constraints_satisfied) result.warnings.push_back("some constraint phrases are not in the vocabulary");
  } else {
    result.best = *std::min_element(beam.begin(), beam.end(), [&](const Hypothesis& a, const Hypothesis& b) {
      const auto pa = progress(a), pb = progress(b);
      if (pa != pb) return pa > pb;
      return detail::nll_before(a, b);
    });
    result.constraints_satisfied = false;
    result.warnings.push_back("lexical constraints not satisfiable within max length");
  }
  return result;
}

/// Generated tokens as strings, EOS dropped.
inline TokenSeq detokenize(const Vocab& vocab, std::span<const TokenId> ids) {
  TokenSeq out;
  for (TokenId id : ids) {
    if (id == Vocab::eos || id == Vocab::bos) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

}  // namespace dmmcs
