#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmmcs/corpus.hpp"
#include "dmmcs/error.hpp"

namespace dmmcs {

using TokenId = std::int32_t;

/// Dense token ids. Id 0 is BOS and id 1 is EOS; corpus tokens follow.
class Vocab {
 public:
  static constexpr TokenId bos = 0;
  static constexpr TokenId eos = 1;
  static constexpr const char* bos_token = "<s>";
  static constexpr const char* eos_token = "</s>";

  Vocab() : Vocab(std::vector<std::string>{}) {}

  explicit Vocab(std::vector<std::string> tokens) {
    names_ = {bos_token, eos_token};
    for (auto& t : tokens) {
      if (t == bos_token || t == eos_token) throw Error("token '" + t + "' collides with a reserved marker");
      if (t.empty()) throw Error("empty token in vocabulary");
      if (!index_.emplace(t, static_cast<TokenId>(names_.size())).second) {
        throw Error("duplicate vocabulary token '" + t + "'");
      }
      names_.push_back(std::move(t));
    }
  }

  /// Size including BOS and EOS.
  std::size_t size() const { return names_.size(); }
  /// Number of ids a model may emit (everything but BOS).
  std::size_t outcome_count() const { return names_.size() - 1; }

  const std::string& token(TokenId id) const { return names_.at(static_cast<std::size_t>(id)); }

  std::optional<TokenId> id(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  /// Corpus tokens in id order, reserved markers excluded.
  std::vector<std::string> tokens() const { return {names_.begin() + 2, names_.end()}; }

  bool operator==(const Vocab& o) const { return names_ == o.names_; }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Next-token distribution source. One instance stands for one conditioning
/// input; the prefix holds generated ids only (no BOS).
class SequenceModel {
 public:
  virtual ~SequenceModel() = default;

  virtual const Vocab& vocab() const = 0;

  /// Natural-log probabilities over the whole vocabulary. BOS must be -inf.
  virtual std::vector<double> next_logprobs(std::span<const TokenId> prefix) const = 0;

  /// One call per decoding step; models behind a process boundary override
  /// this to batch the crossing.
  virtual std::vector<std::vector<double>> next_logprobs_batch(
      const std::vector<std::span<const TokenId>>& prefixes) const {
    std::vector<std::vector<double>> out;
    out.reserve(prefixes.size());
    for (auto p : prefixes) out.push_back(next_logprobs(p));
    return out;
  }
};

/// Throws ContractViolation unless `logprobs` is a distribution over `vocab`.
inline void validate_logprobs(std::span<const double> logprobs, const Vocab& vocab, double tol = 1e-9) {
  if (logprobs.size() != vocab.size()) {
    throw ContractViolation(fmt::format("distribution has {} entries, vocabulary has {}", logprobs.size(),
                                        vocab.size()));
  }
  double total = 0.0;
  for (double lp : logprobs) {
    if (std::isnan(lp) || lp > 0.0) throw ContractViolation("log-probability is NaN or positive");
    total += std::exp(lp);
  }
  if (std::exp(logprobs[Vocab::bos]) != 0.0) throw ContractViolation("BOS must have zero probability");
  if (std::abs(total - 1.0) > tol) {
    throw ContractViolation(fmt::format("probabilities sum to {:.12f}, expected 1", total));
  }
}

/// Maps tokens to ids; out-of-vocabulary tokens are dropped and counted.
inline std::vector<TokenId> encode(const Vocab& vocab, const TokenSeq& tokens, std::size_t* oov = nullptr) {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (auto id = vocab.id(t)) {
      ids.push_back(*id);
    } else if (oov) {
      ++*oov;
    }
  }
  return ids;
}

/// Add-k smoothed n-gram model over BOS-padded, EOS-terminated captions.
class NGramModel final : public SequenceModel {
 public:
  using Context = std::vector<TokenId>;

  struct ContextCounts {
    std::uint64_t total = 0;
    std::map<TokenId, std::uint64_t> next;
  };

  NGramModel(Vocab vocab, std::size_t order, double k) : vocab_(std::move(vocab)), order_(order), k_(k) {
    if (order_ < 1) throw Error("n-gram order must be >= 1");
    if (!(k_ > 0.0) || !std::isfinite(k_)) throw Error("smoothing constant must be > 0");
  }

  const Vocab& vocab() const override { return vocab_; }
  std::size_t order() const { return order_; }
  double smoothing() const { return k_; }
  const std::map<Context, ContextCounts>& counts() const { return counts_; }

  void add_count(const Context& ctx, TokenId next, std::uint64_t c = 1) {
    auto& cc = counts_[ctx];
    cc.total += c;
    cc.next[next] += c;
  }

  /// Context for the next token: the last order-1 ids of the BOS-padded prefix.
  Context context_of(std::span<const TokenId> prefix) const {
    const std::size_t width = order_ - 1;
    Context ctx(width, Vocab::bos);
    const std::size_t take = std::min(width, prefix.size());
    std::copy(prefix.end() - static_cast<std::ptrdiff_t>(take), prefix.end(),
              ctx.end() - static_cast<std::ptrdiff_t>(take));
    return ctx;
  }

  std::vector<double> next_logprobs(std::span<const TokenId> prefix) const override {
    const double outcomes = static_cast<double>(vocab_.outcome_count());
    std::vector<double> lp(vocab_.size());
    auto it = counts_.find(context_of(prefix));
    const double total = it == counts_.end() ? 0.0 : static_cast<double>(it->second.total);
    const double denom = total + k_ * outcomes;
    const double base = std::log(k_ / denom);
    std::fill(lp.begin(), lp.end(), base);
    lp[Vocab::bos] = -std::numeric_limits<double>::infinity();
    if (it != counts_.end()) {
      for (const auto& [id, c] : it->second.next) lp[static_cast<std::size_t>(id)] = std::log((static_cast<double>(c) + k_) / denom);
    }
    return lp;
  }

  bool operator==(const NGramModel& o) const {
    if (!(vocab_ == o.vocab_) || order_ != o.order_ || k_ != o.k_ || counts_.size() != o.counts_.size()) return false;
    auto a = counts_.begin();
    for (auto b = o.counts_.begin(); b != o.counts_.end(); ++a, ++b) {
      if (a->first != b->first || a->second.total != b->second.total || a->second.next != b->second.next) return false;
    }
    return true;
  }

 private:
  Vocab vocab_;
  std::size_t order_;
  double k_;
  std::map<Context, ContextCounts> counts_;
};

/// Trains on the train split. The vocabulary is the sorted set of training
/// caption tokens.
inline NGramModel train_ngram(const Corpus& corpus, std::size_t n = 3, double k = 1.0) {
  const auto train = corpus.split(Split::train);
  if (train.empty()) throw Error("train_ngram: train split is empty");
  if (n < 1) throw Error("n-gram order must be >= 1");
  std::vector<TokenSeq> captions;
  std::set<std::string> words;
  for (const Example* ex : train) {
    captions.push_back(tokenize(ex->caption));
    words.insert(captions.back().begin(), captions.back().end());
  }
  NGramModel model(Vocab({words.begin(), words.end()}), n, k);
  for (const auto& cap : captions) {
    std::vector<TokenId> seq(n - 1, Vocab::bos);
    for (const auto& t : cap) seq.push_back(*model.vocab().id(t));
    seq.push_back(Vocab::eos);
    for (std::size_t i = n - 1; i < seq.size(); ++i) {
      NGramModel::Context ctx(seq.begin() + static_cast<std::ptrdiff_t>(i - (n - 1)),
                              seq.begin() + static_cast<std::ptrdiff_t>(i));
      model.add_count(ctx, seq[i]);
    }
  }
  return model;
}

/// Decoder score: negative sum of per-step log-probabilities, EOS included
/// when present.
inline double d_score(const SequenceModel& model, std::span<const TokenId> seq) {
  double nll = 0.0;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto lp = model.next_logprobs(seq.first(t));
    nll -= lp[static_cast<std::size_t>(seq[t])];
  }
  return nll;
}

/// exp(total NLL / total scored tokens); every sequence is scored with its
/// EOS step.
inline double perplexity(const SequenceModel& model, const std::vector<std::vector<TokenId>>& sequences) {
  double nll = 0.0;
  std::size_t count = 0;
  for (const auto& s : sequences) {
    std::vector<TokenId> seq = s;
    seq.push_back(Vocab::eos);
    nll += d_score(model, seq);
    count += seq.size();
  }
  if (count == 0) throw Error("perplexity: nothing to score");
  return std::exp(nll / static_cast<double>(count));
}

/// Perplexity of the captions of one split; OOV tokens are dropped.
inline double perplexity(const SequenceModel& model, const Corpus& corpus, Split split,
                         std::size_t* oov = nullptr) {
  std::vector<std::vector<TokenId>> seqs;
  for (const Example* ex : corpus.split(split)) seqs.push_back(encode(model.vocab(), tokenize(ex->caption), oov));
  return perplexity(model, seqs);
}

inline nlohmann::json to_json(const NGramModel& m) {
  nlohmann::json contexts = nlohmann::json::array();
  for (const auto& [ctx, cc] : m.counts()) {
    nlohmann::json next = nlohmann::json::array();
    for (const auto& [id, c] : cc.next) next.push_back({id, c});
    contexts.push_back({{"context", ctx}, {"total", cc.total}, {"counts", next}});
  }
  return {{"type", "ngram"},
          {"order", m.order()},
          {"smoothing", m.smoothing()},
          {"vocab", m.vocab().tokens()},
          {"contexts", contexts}};
}

inline NGramModel ngram_from_json(const nlohmann::json& j, const std::string& source = "<json>") {
  try {
    NGramModel m(Vocab(j.at("vocab").get<std::vector<std::string>>()), j.at("order").get<std::size_t>(),
                 j.at("smoothing").get<double>());
    const auto limit = static_cast<TokenId>(m.vocab().size());
    for (const auto& c : j.at("contexts")) {
      auto ctx = c.at("context").get<NGramModel::Context>();
      if (ctx.size() != m.order() - 1) throw Error(source + ": context width does not match order");
      std::uint64_t sum = 0;
      for (const auto& pair : c.at("counts")) {
        const auto id = pair.at(0).get<TokenId>();
        const auto cnt = pair.at(1).get<std::uint64_t>();
        if (id <= Vocab::bos || id >= limit) throw Error(source + ": token id out of range");
        m.add_count(ctx, id, cnt);
        sum += cnt;
      }
      if (c.contains("total") && c.at("total").get<std::uint64_t>() != sum) {
        throw Error(source + ": context total does not match its counts");
      }
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(source + ": malformed n-gram model: " + e.what());
  }
}

inline void save_ngram(const std::string& path, const NGramModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write model '" + path + "'");
  out << to_json(m).dump() << '\n';
}

inline NGramModel load_ngram(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open model '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(path + ": invalid JSON: " + e.what());
  }
  return ngram_from_json(j, path);
}

}  // namespace dmmcs
