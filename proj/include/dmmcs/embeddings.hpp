#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dmmcs/corpus.hpp"
#include "dmmcs/error.hpp"

namespace dmmcs {

/// Token -> dense vector map. Vectors live in one contiguous buffer, row i
/// at [i * dim, (i + 1) * dim).
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(std::size_t dim) : dim_(dim) {
    if (dim == 0) throw Error("embedding dimension must be positive");
  }

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return words_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  /// Adds `word` unless it is already present. Returns false for a duplicate.
  bool add(std::string word, std::span<const double> vec) {
    if (vec.size() != dim_) {
      throw Error(fmt::format("vector for '{}' has {} components, expected {}", word, vec.size(), dim_));
    }
    for (double v : vec) {
      if (!std::isfinite(v)) throw Error("non-finite component in vector for '" + word + "'");
    }
    if (index_.contains(word)) return false;
    index_.emplace(word, words_.size());
    words_.push_back(std::move(word));
    data_.insert(data_.end(), vec.begin(), vec.end());
    return true;
  }

  std::optional<std::span<const double>> find(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return row(it->second);
  }

  bool contains(std::string_view word) const { return index_.contains(std::string(word)); }

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data_).subspan(i * dim_, dim_);
  }

 private:
  std::size_t dim_ = 0;
  std::vector<std::string> words_;
  std::vector<double> data_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Cosine similarity clamped to [-1, 1]. A zero-norm argument yields 0.
inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error("cosine: vector lengths differ");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

/// A tag represented by the centroid of its in-vocabulary token vectors.
struct TagEmbedding {
  std::string tag;
  std::vector<double> vector;
  std::size_t covered_tokens = 0;
};

/// Throws UncoverableTagError when no token of the tag has a vector.
inline TagEmbedding embed_tag(const std::string& tag, const EmbeddingTable& table) {
  TagEmbedding out{tag, std::vector<double>(table.dim(), 0.0), 0};
  for (const auto& tok : tokenize(tag)) {
    auto v = table.find(tok);
    if (!v) continue;
    for (std::size_t i = 0; i < v->size(); ++i) out.vector[i] += (*v)[i];
    ++out.covered_tokens;
  }
  if (out.covered_tokens == 0) throw UncoverableTagError(tag);
  for (double& x : out.vector) x /= static_cast<double>(out.covered_tokens);
  return out;
}

inline EmbeddingTable read_embeddings(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError(source, 1, "missing '<count> <dim>' header");
  std::size_t count = 0, dim = 0;
  {
    std::istringstream hs(line);
    if (!(hs >> count >> dim) || dim == 0) throw ParseError(source, 1, "malformed header, expected '<count> <dim>'");
    std::string extra;
    if (hs >> extra) throw ParseError(source, 1, "malformed header, expected '<count> <dim>'");
  }
  EmbeddingTable table(dim);
  std::vector<double> vec(dim);
  std::size_t entries = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::string_view rest(line);
    auto sp = rest.find(' ');
    if (sp == std::string_view::npos || sp == 0) throw ParseError(source, lineno, "expected '<word> <f1> ... <fdim>'");
    std::string word(rest.substr(0, sp));
    rest.remove_prefix(sp);
    std::size_t k = 0;
    while (true) {
      while (!rest.empty() && rest.front() == ' ') rest.remove_prefix(1);
      if (rest.empty()) break;
      if (k == dim) throw ParseError(source, lineno, fmt::format("more than {} components", dim));
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), v);
      if (ec != std::errc() || (ptr != rest.data() + rest.size() && *ptr != ' ')) {
        throw ParseError(source, lineno, "malformed number");
      }
      if (!std::isfinite(v)) throw ParseError(source, lineno, "non-finite component");
      vec[k++] = v;
      rest.remove_prefix(static_cast<std::size_t>(ptr - rest.data()));
    }
    if (k != dim) throw ParseError(source, lineno, fmt::format("expected {} components, found {}", dim, k));
    table.add(std::move(word), vec);
    ++entries;
  }
  if (entries != count) {
    throw ParseError(source, lineno, fmt::format("header declares {} vectors, file has {}", count, entries));
  }
  return table;
}

inline EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open embeddings '" + path + "'");
  return read_embeddings(in, path);
}

/// Shortest round-trip decimal form, so a written table reloads bit-exactly.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline void write_embeddings(std::ostream& out, const EmbeddingTable& table) {
  out << table.size() << ' ' << table.dim() << '\n';
  for (std::size_t i = 0; i < table.size(); ++i) {
    out << table.words()[i];
    for (double v : table.row(i)) out << ' ' << format_double(v);
    out << '\n';
  }
}

inline void save_embeddings(const std::string& path, const EmbeddingTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write embeddings '" + path + "'");
  write_embeddings(out, table);
}

}  // namespace dmmcs
