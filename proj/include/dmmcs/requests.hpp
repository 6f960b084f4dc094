#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <fstream>
#include <istream>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmmcs/corpus.hpp"
#include "dmmcs/decoding.hpp"
#include "dmmcs/error.hpp"

namespace dmmcs {

struct DecodeRequest {
  std::string id;
  std::vector<std::string> tags;
  std::optional<std::string> gold_caption;
};

struct DecodeOutput {
  std::string id;
  TokenSeq tokens;  // EOS dropped
  double raw_nll = 0.0;
  double combined_score = 0.0;
  Method method = Method::standard;
  double alpha = 0.0;
  bool constraints_satisfied = true;
};

inline std::vector<DecodeRequest> read_requests(std::istream& in, const std::string& source = "<stream>") {
  std::vector<DecodeRequest> out;
  std::unordered_set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(text);
      DecodeRequest r;
      r.id = j.at("id").get<std::string>();
      r.tags = dedup_tags(j.at("tags").get<std::vector<std::string>>());
      if (j.contains("gold_caption") && !j["gold_caption"].is_null()) r.gold_caption = j["gold_caption"].get<std::string>();
      if (!ids.insert(r.id).second) throw ParseError(source, line, "duplicate id '" + r.id + "'");
      out.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(source, line, e.what());
    }
  }
  return out;
}

inline std::vector<DecodeRequest> load_requests(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open requests '" + path + "'");
  return read_requests(in, path);
}

inline nlohmann::json to_json(const DecodeRequest& r) {
  nlohmann::json j{{"id", r.id}, {"tags", r.tags}};
  if (r.gold_caption) j["gold_caption"] = *r.gold_caption;
  return j;
}

inline nlohmann::json to_json(const DecodeOutput& o) {
  return {{"id", o.id},
          {"tokens", o.tokens},
          {"text", join(o.tokens)},
          {"raw_nll", o.raw_nll},
          {"combined_score", o.combined_score},
          {"method", std::string(to_string(o.method))},
          {"alpha", o.alpha},
          {"constraints_satisfied", o.constraints_satisfied}};
}

inline DecodeOutput output_from_json(const nlohmann::json& j) {
  DecodeOutput o;
  o.id = j.at("id").get<std::string>();
  o.tokens = j.at("tokens").get<TokenSeq>();
  o.raw_nll = j.at("raw_nll").get<double>();
  o.combined_score = j.at("combined_score").get<double>();
  auto m = parse_method(j.at("method").get<std::string>());
  if (!m) throw Error("unknown method in decode output");
  o.method = *m;
  o.alpha = j.at("alpha").get<double>();
  o.constraints_satisfied = j.at("constraints_satisfied").get<bool>();
  return o;
}

inline std::vector<DecodeOutput> load_outputs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open decode output '" + path + "'");
  std::vector<DecodeOutput> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(output_from_json(nlohmann::json::parse(text)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path, line, e.what());
    }
  }
  return out;
}

inline void write_outputs(std::ostream& out, const std::vector<DecodeOutput>& outputs) {
  for (const auto& o : outputs) out << to_json(o).dump() << '\n';
}

/// Requests built from one split of a corpus, gold tags and captions attached.
inline std::vector<DecodeRequest> requests_from_corpus(const Corpus& corpus, Split split) {
  std::vector<DecodeRequest> out;
  for (const Example* ex : corpus.split(split)) out.push_back({ex->id, ex->tags, ex->caption});
  return out;
}

/// Decodes every request; output order follows the requests regardless of
/// `threads`.
inline std::vector<DecodeOutput> decode_batch(const SequenceModel& model, const DecodingConfig& cfg,
                                              const std::vector<DecodeRequest>& requests, const StatsStore* store,
                                              const EmbeddingTable* table, std::size_t threads = 1) {
  cfg.validate();
  std::vector<DecodeOutput> out(requests.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto work = [&] {
    for (std::size_t i = next++; i < requests.size(); i = next++) {
      try {
        const auto res = decode(model, cfg, requests[i].tags, store, table);
        auto& o = out[i];
        o.id = requests[i].id;
        o.tokens = detokenize(model.vocab(), res.best.tokens);
        o.raw_nll = res.best.raw_nll;
        o.combined_score = res.best.combined_score;
        o.method = cfg.method;
        o.alpha = cfg.alpha;
        o.constraints_satisfied = res.constraints_satisfied;
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, requests.size()));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace dmmcs
