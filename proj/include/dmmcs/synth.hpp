#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "dmmcs/corpus.hpp"
#include "dmmcs/embeddings.hpp"
#include "dmmcs/error.hpp"

namespace dmmcs {

/// How a synthetic tag shows up in its captions.
enum class Explicitness { verbatim, paraphrase, never };

struct SynthConfig {
  std::size_t tags = 8;
  std::size_t train = 500;
  std::size_t val = 50;
  std::size_t test = 100;
  std::size_t dim = 48;
  std::uint64_t seed = 1;
  double noise_drop = 0.2;  // per gold tag
  double noise_add = 0.2;   // chance of one spurious tag per example
};

struct SynthTag {
  std::string name;
  Explicitness kind = Explicitness::paraphrase;
  double level = 0.0;  // planted cosine of the typical expression
};

struct SynthData {
  Corpus corpus;
  EmbeddingTable table;
  std::vector<SynthTag> tags;
  std::map<std::string, std::vector<std::string>> predicted_tags;  // id -> noisy tags
};

namespace detail {

/// Portable draws from mt19937_64 (std distributions differ between
/// standard libraries).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(eng_() % n); }
  bool chance(double p) { return uniform() < p; }
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

 private:
  std::mt19937_64 eng_;
};

inline void normalize(std::vector<double>& v) {
  double n = 0.0;
  for (double x : v) n += x * x;
  n = std::sqrt(n);
  for (double& x : v) x /= n;
}

/// Random unit vector orthogonal to every vector in `basis` (orthonormal).
inline std::vector<double> orthogonal_unit(Rng& rng, const std::vector<std::vector<double>>& basis, std::size_t dim) {
  std::vector<double> v(dim);
  for (double& x : v) x = rng.gaussian();
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& b : basis) {
      double d = 0.0;
      for (std::size_t i = 0; i < dim; ++i) d += v[i] * b[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= d * b[i];
    }
  }
  normalize(v);
  return v;
}

inline const std::vector<std::string>& synth_tag_names() {
  static const std::vector<std::string> names = {"effusion", "pancreas", "tumour",   "angiogram", "fracture", "nodule",
                                                 "stent",    "edema",    "aneurysm", "cyst",      "hernia",   "abscess",
                                                 "stenosis", "embolism", "calculus", "lymphoma"};
  return names;
}

}  // namespace detail

/// Planted explicitness: every fourth tag (from index 0) is written verbatim,
/// every fourth from index 3 is never written, the rest are paraphrased with
/// levels spread evenly over [0.3, 0.9].
inline std::vector<SynthTag> plan_synth_tags(std::size_t n) {
  std::vector<SynthTag> tags(n);
  std::vector<std::size_t> para;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& names = detail::synth_tag_names();
    tags[i].name = i < names.size() ? names[i] : fmt::format("concept{}", i);
    if (i % 4 == 0) {
      tags[i].kind = Explicitness::verbatim;
      tags[i].level = 1.0;
    } else if (i % 4 == 3) {
      tags[i].kind = Explicitness::never;
      tags[i].level = 0.0;
    } else {
      para.push_back(i);
    }
  }
  for (std::size_t k = 0; k < para.size(); ++k) {
    const double t = para.size() == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(para.size() - 1);
    tags[para[k]].kind = Explicitness::paraphrase;
    tags[para[k]].level = 0.3 + 0.6 * t;
  }
  return tags;
}

/// Gold tags with each tag dropped with probability `drop` and, with
/// probability `add`, one random tag the example does not carry appended.
inline std::vector<std::string> corrupt_tags(const std::vector<std::string>& gold, const std::vector<std::string>& universe,
                                             double drop, double add, detail::Rng& rng) {
  std::vector<std::string> out;
  for (const auto& t : gold) {
    if (!rng.chance(drop)) out.push_back(t);
  }
  if (rng.chance(add)) {
    std::vector<std::string> pool;
    for (const auto& t : universe) {
      if (std::find(gold.begin(), gold.end(), t) == gold.end()) pool.push_back(t);
    }
    if (!pool.empty()) out.push_back(pool[rng.below(pool.size())]);
  }
  return out;
}

/// Tagged caption corpus plus a matching embedding table in which each tag's
/// expressions sit at planted cosines from the tag vector and every other
/// word is orthogonal to all tag vectors.
inline SynthData generate_synthetic(const SynthConfig& cfg) {
  if (cfg.tags < 1) throw Error("synthetic corpus needs at least one tag");
  if (cfg.train < 1) throw Error("synthetic corpus needs training examples");
  const std::size_t dim = std::max(cfg.dim, cfg.tags + 8);
  detail::Rng rng(cfg.seed);
  SynthData data;
  data.tags = plan_synth_tags(cfg.tags);
  data.table = EmbeddingTable(dim);

  std::vector<std::vector<double>> tag_vecs;
  for (std::size_t i = 0; i < cfg.tags; ++i) tag_vecs.push_back(detail::orthogonal_unit(rng, tag_vecs, dim));

  // Expression words per tag with their planted level.
  std::vector<std::vector<std::pair<std::string, double>>> forms(cfg.tags);
  for (std::size_t i = 0; i < cfg.tags; ++i) {
    const auto& tag = data.tags[i];
    data.table.add(tag.name, tag_vecs[i]);
    std::vector<double> levels;
    if (tag.kind == Explicitness::verbatim) levels = {0.85};
    else if (tag.kind == Explicitness::paraphrase) levels = {tag.level - 0.05, tag.level, std::min(tag.level + 0.05, 0.99)};
    for (std::size_t k = 0; k < levels.size(); ++k) {
      const auto w = detail::orthogonal_unit(rng, tag_vecs, dim);
      std::vector<double> v(dim);
      const double c = levels[k], s = std::sqrt(1.0 - c * c);
      for (std::size_t d = 0; d < dim; ++d) v[d] = c * tag_vecs[i][d] + s * w[d];
      const std::string word = fmt::format("{}-{}", tag.name, static_cast<char>('a' + k));
      data.table.add(word, v);
      forms[i].emplace_back(word, levels[k]);
    }
  }
  static const std::vector<std::string> fillers = {"is", "seen", "there", "findings", "suggest", "noted",
                                                   "no", "acute", "the", "image", "shows", "of"};
  for (const auto& f : fillers) data.table.add(f, detail::orthogonal_unit(rng, tag_vecs, dim));

  static const std::vector<std::string> templates = {"{} is seen", "there is {}", "findings suggest {}",
                                                     "{} noted", "the image shows {}"};
  static const std::vector<std::string> groups = {"ct", "mri", "x-ray", "ultrasound"};
  std::vector<std::string> names;
  for (const auto& t : data.tags) names.push_back(t.name);

  std::vector<Example> examples;
  const std::size_t total = cfg.train + cfg.val + cfg.test;
  for (std::size_t e = 0; e < total; ++e) {
    Example ex;
    ex.id = fmt::format("synth-{:05d}", e);
    ex.split = e < cfg.train ? Split::train : e < cfg.train + cfg.val ? Split::val : Split::test;
    ex.group = groups[rng.below(groups.size())];
    const std::size_t k = std::min<std::size_t>(1 + rng.below(3), cfg.tags);
    std::vector<std::size_t> picked;
    while (picked.size() < k) {
      const std::size_t t = rng.below(cfg.tags);
      if (std::find(picked.begin(), picked.end(), t) == picked.end()) picked.push_back(t);
    }
    std::vector<std::string> sentences;
    for (std::size_t t : picked) {
      ex.tags.push_back(data.tags[t].name);
      std::string word;
      switch (data.tags[t].kind) {
        case Explicitness::never: continue;
        case Explicitness::verbatim: word = rng.chance(0.8) ? data.tags[t].name : forms[t][0].first; break;
        case Explicitness::paraphrase: word = forms[t][rng.below(forms[t].size())].first; break;
      }
      sentences.push_back(fmt::format(fmt::runtime(templates[rng.below(templates.size())]), word));
    }
    if (sentences.empty()) sentences.push_back("no acute findings");
    for (std::size_t s = 0; s < sentences.size(); ++s) {
      if (s) ex.caption += ' ';
      ex.caption += sentences[s] + '.';
    }
    data.predicted_tags[ex.id] = corrupt_tags(ex.tags, names, cfg.noise_drop, cfg.noise_add, rng);
    examples.push_back(std::move(ex));
  }
  data.corpus = Corpus(std::move(examples));
  return data;
}

}  // namespace dmmcs
