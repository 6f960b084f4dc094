#pragma once

#include <csignal>
#include <limits>
#include <cstdio>
#include <mutex>
#include <string>
#include <vector>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "dmmcs/error.hpp"
#include "dmmcs/lm.hpp"

namespace dmmcs {

/// SequenceModel served by a child process over a line-delimited JSON pipe.
///
/// Protocol (one JSON object per line, engine writes to the child's stdin and
/// reads its stdout):
///   -> {"op":"vocab"}                       <- {"tokens":["a","b",...]}
///   -> {"op":"next","prefixes":[[2,3],[]]}  <- {"logprobs":[[...],[...]]}
/// Token ids follow Vocab: 0 = BOS, 1 = EOS, the listed tokens from 2 on.
/// Every returned vector is validated against the model contract.
class PipeModel final : public SequenceModel {
 public:
  explicit PipeModel(const std::string& command, double tolerance = 1e-6) : tolerance_(tolerance) {
    int to_child[2], from_child[2];
    if (pipe(to_child) != 0 || pipe(from_child) != 0) throw Error("pipe model: pipe() failed");
    pid_ = fork();
    if (pid_ < 0) throw Error("pipe model: fork() failed");
    if (pid_ == 0) {
      dup2(to_child[0], STDIN_FILENO);
      dup2(from_child[1], STDOUT_FILENO);
      close(to_child[0]);
      close(to_child[1]);
      close(from_child[0]);
      close(from_child[1]);
      execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
      _exit(127);
    }
    close(to_child[0]);
    close(from_child[1]);
    out_ = fdopen(to_child[1], "w");
    in_ = fdopen(from_child[0], "r");
    if (!out_ || !in_) throw Error("pipe model: fdopen() failed");
    std::signal(SIGPIPE, SIG_IGN);

    try {
      auto reply = round_trip({{"op", "vocab"}});
      vocab_ = Vocab(reply.at("tokens").get<std::vector<std::string>>());
    } catch (const nlohmann::json::exception& e) {
      shutdown();
      throw ContractViolation(std::string("pipe model: bad vocab reply: ") + e.what());
    } catch (...) {
      shutdown();
      throw;
    }
  }

  PipeModel(const PipeModel&) = delete;
  PipeModel& operator=(const PipeModel&) = delete;

  ~PipeModel() override { shutdown(); }

  const Vocab& vocab() const override { return vocab_; }

  std::vector<double> next_logprobs(std::span<const TokenId> prefix) const override {
    return next_logprobs_batch({prefix}).front();
  }

  std::vector<std::vector<double>> next_logprobs_batch(
      const std::vector<std::span<const TokenId>>& prefixes) const override {
    nlohmann::json req{{"op", "next"}, {"prefixes", nlohmann::json::array()}};
    for (auto p : prefixes) req["prefixes"].push_back(std::vector<TokenId>(p.begin(), p.end()));
    std::vector<std::vector<double>> out;
    {
      std::lock_guard lock(mu_);
      auto reply = round_trip(req);
      try {
        for (const auto& row : reply.at("logprobs")) {
          std::vector<double> lp;
          for (const auto& v : row) {
            // JSON has no infinity; null stands for log(0).
            lp.push_back(v.is_null() ? -std::numeric_limits<double>::infinity() : v.get<double>());
          }
          out.push_back(std::move(lp));
        }
      } catch (const nlohmann::json::exception& e) {
        throw ContractViolation(std::string("pipe model: bad logprobs reply: ") + e.what());
      }
    }
    if (out.size() != prefixes.size()) throw ContractViolation("pipe model: reply count does not match request");
    for (const auto& lp : out) validate_logprobs(lp, vocab_, tolerance_);
    return out;
  }

 private:
  void shutdown() {
    if (out_) std::fclose(out_);
    if (in_) std::fclose(in_);
    out_ = in_ = nullptr;
    if (pid_ > 0) {
      int status = 0;
      waitpid(pid_, &status, 0);
      pid_ = -1;
    }
  }

  nlohmann::json round_trip(const nlohmann::json& req) const {
    const std::string line = req.dump() + "\n";
    if (std::fputs(line.c_str(), out_) < 0 || std::fflush(out_) != 0) throw Error("pipe model: write failed");
    std::string reply;
    char buf[4096];
    while (std::fgets(buf, sizeof buf, in_)) {
      reply += buf;
      if (!reply.empty() && reply.back() == '\n') break;
    }
    if (reply.empty()) throw Error("pipe model: process closed its output");
    try {
      return nlohmann::json::parse(reply);
    } catch (const nlohmann::json::parse_error& e) {
      throw ContractViolation(std::string("pipe model: reply is not JSON: ") + e.what());
    }
  }

  double tolerance_;
  pid_t pid_ = -1;
  FILE* out_ = nullptr;
  FILE* in_ = nullptr;
  Vocab vocab_;
  mutable std::mutex mu_;
};

}  // namespace dmmcs
