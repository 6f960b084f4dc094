#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "dmmcs/error.hpp"

namespace dmmcs {

using TokenSeq = std::vector<std::string>;

enum class Split { train, val, test };

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

inline std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  return std::nullopt;
}

/// One tagged caption. Tags are kept verbatim (after de-duplication); any
/// case folding happens at embedding lookup through tokenize().
struct Example {
  std::string id;
  std::vector<std::string> tags;
  std::string caption;
  std::optional<std::string> group;
  Split split = Split::train;

  bool operator==(const Example&) const = default;
};

namespace detail {

inline bool is_edge_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

}  // namespace detail

/// Lowercase, split on whitespace, strip leading and trailing ASCII
/// punctuation from each token and drop tokens that end up empty. Internal
/// punctuation ("x-ray") survives. Bytes outside ASCII pass through.
inline TokenSeq tokenize(std::string_view text) {
  TokenSeq out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::size_t b = i, e = j;
    while (b < e && detail::is_edge_punct(static_cast<unsigned char>(text[b]))) ++b;
    while (e > b && detail::is_edge_punct(static_cast<unsigned char>(text[e - 1]))) --e;
    if (b < e) {
      std::string tok(text.substr(b, e - b));
      for (char& c : tok) {
        auto u = static_cast<unsigned char>(c);
        if (u < 0x80) c = static_cast<char>(std::tolower(u));
      }
      out.push_back(std::move(tok));
    }
    i = j;
  }
  return out;
}

inline std::string join(const TokenSeq& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

/// Immutable collection of examples with split views.
class Corpus {
 public:
  Corpus() = default;

  /// Throws Error on a duplicate id.
  explicit Corpus(std::vector<Example> examples) : examples_(std::move(examples)) {
    std::unordered_set<std::string> seen;
    for (const auto& ex : examples_) {
      if (!seen.insert(ex.id).second) throw Error("duplicate example id '" + ex.id + "'");
    }
  }

  const std::vector<Example>& examples() const { return examples_; }
  std::size_t size() const { return examples_.size(); }
  bool empty() const { return examples_.empty(); }

  std::vector<const Example*> split(Split s) const {
    std::vector<const Example*> out;
    for (const auto& ex : examples_) {
      if (ex.split == s) out.push_back(&ex);
    }
    return out;
  }

  const Example* find(std::string_view id) const {
    for (const auto& ex : examples_) {
      if (ex.id == id) return &ex;
    }
    return nullptr;
  }

  bool operator==(const Corpus&) const = default;

 private:
  std::vector<Example> examples_;
};

inline std::vector<std::string> dedup_tags(const std::vector<std::string>& tags) {
  std::vector<std::string> out;
  for (const auto& t : tags) {
    if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
  }
  return out;
}

inline nlohmann::json to_json(const Example& ex) {
  nlohmann::json j;
  j["id"] = ex.id;
  j["tags"] = ex.tags;
  j["caption"] = ex.caption;
  if (ex.group) j["group"] = *ex.group;
  j["split"] = std::string(to_string(ex.split));
  return j;
}

/// Parses one JSON-lines record; `source` and `line` only decorate errors.
inline Example parse_example(const std::string& text, const std::string& source, std::size_t line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source, line, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ParseError(source, line, "record is not an object");
  auto require_string = [&](const char* key) -> std::string {
    auto it = j.find(key);
    if (it == j.end()) throw ParseError(source, line, fmt::format("missing '{}'", key));
    if (!it->is_string()) throw ParseError(source, line, fmt::format("'{}' must be a string", key));
    return it->get<std::string>();
  };
  Example ex;
  ex.id = require_string("id");
  ex.caption = require_string("caption");
  auto tags = j.find("tags");
  if (tags == j.end()) throw ParseError(source, line, "missing 'tags'");
  if (!tags->is_array()) throw ParseError(source, line, "'tags' must be an array");
  for (const auto& t : *tags) {
    if (!t.is_string()) throw ParseError(source, line, "'tags' entries must be strings");
    ex.tags.push_back(t.get<std::string>());
  }
  ex.tags = dedup_tags(ex.tags);
  if (auto g = j.find("group"); g != j.end() && !g->is_null()) {
    if (!g->is_string()) throw ParseError(source, line, "'group' must be a string");
    ex.group = g->get<std::string>();
  }
  if (auto s = j.find("split"); s != j.end() && !s->is_null()) {
    if (!s->is_string()) throw ParseError(source, line, "'split' must be a string");
    auto parsed = parse_split(s->get<std::string>());
    if (!parsed) throw ParseError(source, line, "unknown split '" + s->get<std::string>() + "'");
    ex.split = *parsed;
  }
  return ex;
}

inline Corpus read_corpus(std::istream& in, const std::string& source = "<stream>") {
  std::vector<Example> examples;
  std::unordered_set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    Example ex = parse_example(text, source, line);
    if (!ids.insert(ex.id).second) throw ParseError(source, line, "duplicate id '" + ex.id + "'");
    examples.push_back(std::move(ex));
  }
  return Corpus(std::move(examples));
}

inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open corpus '" + path + "'");
  return read_corpus(in, path);
}

inline void write_corpus(std::ostream& out, const Corpus& corpus) {
  for (const auto& ex : corpus.examples()) out << to_json(ex).dump() << '\n';
}

inline void save_corpus(const std::string& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write corpus '" + path + "'");
  write_corpus(out, corpus);
}

/// Seeded random 75/10/15 train/val/test assignment. Counts are floor(0.75 n)
/// and floor(0.10 n); the remainder goes to test.
inline Corpus random_split(const Corpus& corpus, std::uint64_t seed, double train_frac = 0.75,
                           double val_frac = 0.10) {
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  // Fisher-Yates with raw engine output; std::shuffle is not portable across
  // standard libraries.
  for (std::size_t i = order.size(); i > 1; --i) {
    std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  const auto n = corpus.size();
  const auto n_train = static_cast<std::size_t>(static_cast<double>(n) * train_frac + 1e-9);
  const auto n_val = static_cast<std::size_t>(static_cast<double>(n) * val_frac + 1e-9);
  std::vector<Example> out = corpus.examples();
  for (std::size_t rank = 0; rank < n; ++rank) {
    auto& ex = out[order[rank]];
    ex.split = rank < n_train ? Split::train : rank < n_train + n_val ? Split::val : Split::test;
  }
  return Corpus(std::move(out));
}

}  // namespace dmmcs
