// dmmcs: command-line front end for statistics building, guided decoding,
// alpha tuning, evaluation and corpus utilities.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "dmmcs.hpp"

namespace {

using namespace dmmcs;

std::unique_ptr<SequenceModel> open_model(const std::string& spec, RunManifest& manifest) {
  if (spec.rfind("pipe:", 0) == 0) return std::make_unique<PipeModel>(spec.substr(5));
  manifest.add_input(spec);
  return std::make_unique<NGramModel>(load_ngram(spec));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
  if (!out.flush()) throw Error("failed writing '" + path + "'");
}

std::vector<double> parse_grid(const std::string& text) {
  if (text.empty()) return default_alpha_grid();
  std::vector<double> grid;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size() || v < 0.0 || v > 1.0) throw Error("bad alpha grid value '" + item + "'");
    grid.push_back(v);
  }
  if (grid.empty()) throw Error("empty alpha grid");
  return grid;
}

struct DecodeFlags {
  std::string model, stats, embeddings, method = "standard", fallback = "median_of_medians";
  double alpha = 0.0;
  std::size_t beam = 4, max_len = 20, threads = 1;

  DecodingConfig config() const {
    DecodingConfig cfg;
    auto m = parse_method(method);
    if (!m) throw Error("unknown method '" + method + "'");
    cfg.method = *m;
    cfg.alpha = alpha;
    cfg.beam_width = beam;
    cfg.max_len = max_len;
    if (fallback == "median_of_medians") cfg.fallback = FallbackPolicy::median_of_medians;
    else if (fallback == "skip_tag") cfg.fallback = FallbackPolicy::skip_tag;
    else throw Error("unknown fallback policy '" + fallback + "'");
    cfg.validate();
    return cfg;
  }

  nlohmann::json to_json() const {
    return {{"model", model}, {"stats", stats}, {"embeddings", embeddings}, {"method", method}, {"alpha", alpha},
            {"beam", beam}, {"max_len", max_len}, {"fallback", fallback}};
  }
};

void add_decode_flags(CLI::App* cmd, DecodeFlags& f) {
  cmd->add_option("--model", f.model, "n-gram model JSON, or pipe:<command>")->required();
  cmd->add_option("--stats", f.stats, "tag statistics JSON (dmmcs methods)");
  cmd->add_option("--embeddings", f.embeddings, "word-vector text file (dmmcs methods)");
  cmd->add_option("--method", f.method, "standard|dmmcs|dmmcs-hd|constrained-all|constrained-any")
      ->check(CLI::IsMember({"standard", "dmmcs", "dmmcs-hd", "constrained-all", "constrained-any"}));
  cmd->add_option("--alpha", f.alpha, "penalty weight in [0,1]")->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--beam", f.beam, "beam width")->check(CLI::PositiveNumber);
  cmd->add_option("--max-len", f.max_len, "maximum tokens including EOS")->check(CLI::PositiveNumber);
  cmd->add_option("--fallback", f.fallback, "median_of_medians|skip_tag");
  cmd->add_option("--threads", f.threads, "worker threads over requests")->check(CLI::PositiveNumber);
}

struct LoadedResources {
  std::unique_ptr<SequenceModel> model;
  std::optional<StatsStore> store;
  std::optional<EmbeddingTable> table;
};

LoadedResources load_decode_resources(const DecodeFlags& f, const DecodingConfig& cfg, RunManifest& manifest) {
  LoadedResources r;
  r.model = open_model(f.model, manifest);
  if (uses_penalty(cfg.method)) {
    if (f.stats.empty()) throw Error(fmt::format("--method {} requires --stats", f.method));
    if (f.embeddings.empty()) throw Error(fmt::format("--method {} requires --embeddings", f.method));
  }
  if (!f.stats.empty()) {
    manifest.add_input(f.stats);
    r.store = load_stats(f.stats);
  }
  if (!f.embeddings.empty()) {
    manifest.add_input(f.embeddings);
    r.table = load_embeddings(f.embeddings);
  }
  if (r.store && r.table && r.store->embedding_dim() != r.table->dim()) {
    throw Error("statistics were built with a different embedding dimension");
  }
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tag-guided beam-search decoding with median maximum concept similarity"};
  app.require_subcommand(1);
  bool timing = false;
  std::uint64_t seed = 0;
  std::string out;

  // build-stats
  auto* bs = app.add_subcommand("build-stats", "learn per-tag MCS statistics from the train split");
  std::string bs_corpus, bs_emb;
  bs->add_option("--corpus", bs_corpus)->required();
  bs->add_option("--embeddings", bs_emb)->required();
  bs->add_option("--out", out)->required();
  bs->add_flag("--timing", timing);

  // stats-report
  auto* sr = app.add_subcommand("stats-report", "per-tag quartiles of the learned MCS samples");
  std::string sr_stats;
  sr->add_option("--stats", sr_stats)->required();
  sr->add_option("--out", out)->required();

  // decode
  auto* dc = app.add_subcommand("decode", "decode a batch of tagged requests");
  DecodeFlags dflags;
  std::string dc_requests, dc_corpus, dc_split = "test";
  add_decode_flags(dc, dflags);
  dc->add_option("--requests", dc_requests, "JSON-lines {id, tags[, gold_caption]}");
  dc->add_option("--corpus", dc_corpus, "decode one split of a corpus instead of --requests");
  dc->add_option("--split", dc_split)->check(CLI::IsMember({"train", "val", "test"}));
  dc->add_option("--out", out)->required();
  dc->add_flag("--timing", timing);

  // tune-alpha
  auto* ta = app.add_subcommand("tune-alpha", "grid-search alpha on the validation split");
  DecodeFlags tflags;
  tflags.method = "dmmcs";
  std::string ta_corpus, ta_metric = "bleu", ta_grid;
  add_decode_flags(ta, tflags);
  ta->add_option("--corpus", ta_corpus)->required();
  ta->add_option("--metric", ta_metric)->check(CLI::IsMember({"bleu", "ca", "gap", "perplexity"}));
  ta->add_option("--grid", ta_grid, "comma-separated alphas (default 0.05..0.95 step 0.05)");
  ta->add_option("--seed", seed);
  ta->add_option("--out", out)->required();
  ta->add_flag("--timing", timing);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "score decoded captions against gold captions");
  std::string ev_corpus, ev_hyps, ev_rules, ev_stats, ev_emb, ev_model, ev_fallback = "median_of_medians";
  std::vector<std::string> ev_metrics;
  bool ev_groups = false, ev_order = false;
  std::size_t ev_subsets = 0;
  ev->add_option("--corpus", ev_corpus, "gold corpus (captions, tags, groups)")->required();
  ev->add_option("--hyps", ev_hyps, "decode output JSON-lines")->required();
  ev->add_option("--metric", ev_metrics)->check(CLI::IsMember({"bleu", "ca", "gap", "perplexity"}));
  ev->add_flag("--groups", ev_groups, "add per-group aggregates");
  ev->add_option("--subsets", ev_subsets, "random disjoint subsets for mean/std");
  ev->add_option("--rules", ev_rules, "clinical label rule file (default: built-in demo rules)");
  ev->add_option("--stats", ev_stats);
  ev->add_option("--embeddings", ev_emb);
  ev->add_option("--model", ev_model);
  ev->add_option("--fallback", ev_fallback);
  ev->add_flag("--sentence-order", ev_order);
  ev->add_option("--seed", seed);
  ev->add_option("--out", out)->required();
  ev->add_flag("--timing", timing);

  // split
  auto* sp = app.add_subcommand("split", "seeded 75/10/15 train/val/test split");
  std::string sp_corpus;
  sp->add_option("--corpus", sp_corpus)->required();
  sp->add_option("--seed", seed);
  sp->add_option("--out", out)->required();

  // train-lm
  auto* tl = app.add_subcommand("train-lm", "train the add-k n-gram model");
  std::string tl_corpus;
  std::size_t tl_order = 3;
  double tl_k = 1.0;
  tl->add_option("--corpus", tl_corpus)->required();
  tl->add_option("--order", tl_order)->check(CLI::PositiveNumber);
  tl->add_option("--k", tl_k)->check(CLI::PositiveNumber);
  tl->add_option("--out", out)->required();

  // gen-synth
  auto* gs = app.add_subcommand("gen-synth", "generate a synthetic tagged corpus and matching embeddings");
  SynthConfig scfg;
  std::string gs_emb, gs_requests, gs_predicted;
  gs->add_option("--tags", scfg.tags)->check(CLI::PositiveNumber);
  gs->add_option("--examples", scfg.train, "training examples")->check(CLI::PositiveNumber);
  gs->add_option("--val", scfg.val);
  gs->add_option("--test", scfg.test);
  gs->add_option("--dim", scfg.dim)->check(CLI::PositiveNumber);
  gs->add_option("--noise-drop", scfg.noise_drop)->check(CLI::Range(0.0, 1.0));
  gs->add_option("--noise-add", scfg.noise_add)->check(CLI::Range(0.0, 1.0));
  gs->add_option("--seed", seed);
  gs->add_option("--out", out, "corpus JSON-lines")->required();
  gs->add_option("--embeddings", gs_emb, "word-vector output")->required();
  gs->add_option("--requests", gs_requests, "gold-tag requests for the test split");
  gs->add_option("--predicted", gs_predicted, "noisy-tag requests for the test split");

  CLI11_PARSE(app, argc, argv);

  RunManifest manifest;
  manifest.seed = seed;
  Stopwatch total;
  try {
    if (bs->parsed()) {
      manifest.command = "build-stats";
      manifest.config = {{"corpus", bs_corpus}, {"embeddings", bs_emb}, {"out", out}};
      manifest.add_input(bs_corpus);
      manifest.add_input(bs_emb);
      Stopwatch load;
      const Corpus corpus = load_corpus(bs_corpus);
      const EmbeddingTable table = load_embeddings(bs_emb);
      manifest.timings_ms["load"] = load.elapsed_ms();
      Stopwatch build;
      BuildStatsSummary summary;
      const StatsStore store = build_stats(corpus, table, &summary);
      manifest.timings_ms["build"] = build.elapsed_ms();
      save_stats(out, store);
      load_stats(out);
      std::cout << fmt::format("train examples: {}\ntags kept: {}\ntags uncoverable: {}\ncaptions skipped: {}\n",
                               summary.train_examples, summary.tags_kept, summary.uncoverable_tags.size(),
                               summary.skipped_captions);
    } else if (sr->parsed()) {
      manifest.command = "stats-report";
      manifest.config = {{"stats", sr_stats}, {"out", out}};
      manifest.add_input(sr_stats);
      const StatsStore store = load_stats(sr_stats);
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& [tag, s] : store.per_tag()) {
        rows.push_back({{"tag", tag}, {"q1", quantile_sorted(s.samples, 0.25)}, {"median", s.mmcs},
                        {"q3", quantile_sorted(s.samples, 0.75)}, {"support", s.support}});
      }
      write_text(out, nlohmann::json{{"default_mmcs", store.default_mmcs()}, {"tags", rows}}.dump(1) + "\n");
    } else if (dc->parsed()) {
      manifest.command = "decode";
      const auto cfg = dflags.config();
      manifest.config = dflags.to_json();
      manifest.config["out"] = out;
      if (dc_requests.empty() == dc_corpus.empty()) throw Error("give exactly one of --requests or --corpus");
      Stopwatch load;
      auto res = load_decode_resources(dflags, cfg, manifest);
      std::vector<DecodeRequest> requests;
      if (!dc_requests.empty()) {
        manifest.add_input(dc_requests);
        manifest.config["requests"] = dc_requests;
        requests = load_requests(dc_requests);
      } else {
        manifest.add_input(dc_corpus);
        manifest.config["corpus"] = dc_corpus;
        manifest.config["split"] = dc_split;
        requests = requests_from_corpus(load_corpus(dc_corpus), *parse_split(dc_split));
      }
      manifest.timings_ms["load"] = load.elapsed_ms();
      Stopwatch run;
      const auto outputs = decode_batch(*res.model, cfg, requests, res.store ? &*res.store : nullptr,
                                        res.table ? &*res.table : nullptr, dflags.threads);
      manifest.timings_ms["decode"] = run.elapsed_ms();
      std::ostringstream os;
      write_outputs(os, outputs);
      write_text(out, os.str());
      if (load_outputs(out).size() != requests.size()) throw Error("decode output failed validation");
      std::size_t unsatisfied = 0;
      for (const auto& o : outputs) unsatisfied += !o.constraints_satisfied;
      std::cout << fmt::format("decoded {} requests ({} with unsatisfied constraints)\n", outputs.size(), unsatisfied);
    } else if (ta->parsed()) {
      manifest.command = "tune-alpha";
      auto cfg = tflags.config();
      if (!uses_penalty(cfg.method)) throw Error("tune-alpha needs --method dmmcs or dmmcs-hd");
      const auto metric = *parse_metric(ta_metric);
      const auto grid = parse_grid(ta_grid);
      manifest.config = tflags.to_json();
      manifest.config.erase("alpha");
      manifest.config["corpus"] = ta_corpus;
      manifest.config["metric"] = ta_metric;
      manifest.config["grid"] = grid;
      manifest.add_input(ta_corpus);
      auto res = load_decode_resources(tflags, cfg, manifest);
      const Corpus corpus = load_corpus(ta_corpus);
      const auto requests = requests_from_corpus(corpus, Split::val);
      if (requests.empty()) throw Error("validation split is empty");
      EvalOptions eopt;
      eopt.seed = seed;
      eopt.store = res.store ? &*res.store : nullptr;
      eopt.table = res.table ? &*res.table : nullptr;
      eopt.model = res.model.get();
      eopt.fallback = cfg.fallback;
      Stopwatch run;
      const auto tuned = tune_alpha(
          grid,
          [&](double alpha) {
            cfg.alpha = alpha;
            const auto outputs = decode_batch(*res.model, cfg, requests, eopt.store, eopt.table, tflags.threads);
            return corpus_metric(metric, corpus, outputs, eopt);
          },
          higher_is_better(metric));
      manifest.timings_ms["tune"] = run.elapsed_ms();
      nlohmann::json curve = nlohmann::json::array();
      for (const auto& [a, v] : tuned.curve) curve.push_back({{"alpha", a}, {"value", v}});
      write_text(out, nlohmann::json{{"metric", ta_metric}, {"best_alpha", tuned.best_alpha},
                                     {"best_value", tuned.best_value}, {"curve", curve}}
                              .dump(1) + "\n");
      std::cout << fmt::format("best alpha {} ({} = {})\n", tuned.best_alpha, ta_metric, tuned.best_value);
    } else if (ev->parsed()) {
      manifest.command = "evaluate";
      if (ev_metrics.empty()) ev_metrics = {"bleu"};
      EvalOptions eopt;
      eopt.metrics.clear();
      for (const auto& m : ev_metrics) eopt.metrics.insert(*parse_metric(m));
      eopt.groups = ev_groups;
      eopt.subsets = ev_subsets;
      eopt.seed = seed;
      eopt.sentence_order = ev_order;
      if (ev_fallback == "skip_tag") eopt.fallback = FallbackPolicy::skip_tag;
      else if (ev_fallback != "median_of_medians") throw Error("unknown fallback policy '" + ev_fallback + "'");
      manifest.config = {{"corpus", ev_corpus}, {"hyps", ev_hyps}, {"metrics", ev_metrics}, {"groups", ev_groups},
                         {"subsets", ev_subsets}, {"sentence_order", ev_order}, {"out", out}};
      manifest.add_input(ev_corpus);
      manifest.add_input(ev_hyps);
      std::optional<StatsStore> store;
      std::optional<EmbeddingTable> table;
      std::unique_ptr<SequenceModel> model;
      if (!ev_rules.empty()) {
        manifest.add_input(ev_rules);
        manifest.config["rules"] = ev_rules;
        eopt.rules = load_rules(ev_rules);
      }
      if (eopt.metrics.contains(Metric::gap)) {
        if (ev_stats.empty() || ev_emb.empty()) throw Error("--metric gap requires --stats and --embeddings");
        manifest.add_input(ev_stats);
        manifest.add_input(ev_emb);
        store = load_stats(ev_stats);
        table = load_embeddings(ev_emb);
        eopt.store = &*store;
        eopt.table = &*table;
      }
      if (eopt.metrics.contains(Metric::perplexity)) {
        if (ev_model.empty()) throw Error("--metric perplexity requires --model");
        model = open_model(ev_model, manifest);
        eopt.model = model.get();
      }
      Stopwatch run;
      const auto report = evaluate_outputs(load_corpus(ev_corpus), load_outputs(ev_hyps), eopt);
      manifest.timings_ms["evaluate"] = run.elapsed_ms();
      write_text(out, report.dump(1) + "\n");
      for (const auto& [m, v] : report["corpus"].items()) std::cout << fmt::format("{}: {}\n", m, v.get<double>());
    } else if (sp->parsed()) {
      manifest.command = "split";
      manifest.config = {{"corpus", sp_corpus}, {"out", out}};
      manifest.add_input(sp_corpus);
      const Corpus split = random_split(load_corpus(sp_corpus), seed);
      std::ostringstream os;
      write_corpus(os, split);
      write_text(out, os.str());
      std::cout << fmt::format("train {} / val {} / test {}\n", split.split(Split::train).size(),
                               split.split(Split::val).size(), split.split(Split::test).size());
    } else if (tl->parsed()) {
      manifest.command = "train-lm";
      manifest.config = {{"corpus", tl_corpus}, {"order", tl_order}, {"k", tl_k}, {"out", out}};
      manifest.add_input(tl_corpus);
      const NGramModel model = train_ngram(load_corpus(tl_corpus), tl_order, tl_k);
      save_ngram(out, model);
      load_ngram(out);
      std::cout << fmt::format("vocabulary: {} tokens\n", model.vocab().tokens().size());
    } else if (gs->parsed()) {
      manifest.command = "gen-synth";
      scfg.seed = seed;
      manifest.config = {{"tags", scfg.tags}, {"examples", scfg.train}, {"val", scfg.val}, {"test", scfg.test},
                         {"dim", scfg.dim}, {"noise_drop", scfg.noise_drop}, {"noise_add", scfg.noise_add},
                         {"out", out}, {"embeddings", gs_emb}};
      const SynthData data = generate_synthetic(scfg);
      std::ostringstream cs, es;
      write_corpus(cs, data.corpus);
      write_embeddings(es, data.table);
      write_text(out, cs.str());
      write_text(gs_emb, es.str());
      load_corpus(out);
      load_embeddings(gs_emb);
      auto write_reqs = [&](const std::string& path, bool noisy) {
        std::ostringstream rs;
        for (const Example* ex : data.corpus.split(Split::test)) {
          DecodeRequest r{ex->id, noisy ? data.predicted_tags.at(ex->id) : ex->tags, ex->caption};
          rs << to_json(r).dump() << '\n';
        }
        write_text(path, rs.str());
        manifest.add_output(path);
      };
      if (!gs_requests.empty()) write_reqs(gs_requests, false);
      if (!gs_predicted.empty()) write_reqs(gs_predicted, true);
      manifest.add_output(gs_emb);
      nlohmann::json planted = nlohmann::json::array();
      for (const auto& t : data.tags) {
        const char* kind = t.kind == Explicitness::verbatim ? "verbatim" : t.kind == Explicitness::never ? "never" : "paraphrase";
        planted.push_back({{"tag", t.name}, {"kind", kind}, {"level", t.level}});
      }
      manifest.config["planted"] = planted;
      std::cout << fmt::format("{} examples, {} embedding rows\n", data.corpus.size(), data.table.size());
    }
    manifest.add_output(out);
    if (timing) manifest.timings_ms["total"] = total.elapsed_ms();
    else manifest.timings_ms.clear();
    manifest.save(out + ".manifest.json");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
