#pragma once

#include <atomic>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>

#include "qforge/dataset.hpp"
#include "qforge/gateway.hpp"
#include "qforge/rng.hpp"

namespace qforge {

// The scripted mock drives the whole pipeline offline. Mock corpora embed
// ground truth in the question text with "[[ans=<answer>;p=<solve prob>]]"
// markers (and "[[theta=<x>]]" for difficulty judging), so a single backend
// instance can serve every role deterministically: completions are a pure
// function of (script, seed, call key, call index).
namespace mock_marker {

inline std::optional<std::string> field(std::string_view text,
                                        std::string_view key) {
  std::size_t open = text.rfind("[[");
  if (open == std::string_view::npos) return std::nullopt;
  std::size_t close = text.find("]]", open);
  if (close == std::string_view::npos) return std::nullopt;
  std::string_view body = text.substr(open + 2, close - open - 2);
  std::size_t pos = 0;
  while (pos < body.size()) {
    std::size_t end = body.find(';', pos);
    if (end == std::string_view::npos) end = body.size();
    std::string_view kv = body.substr(pos, end - pos);
    std::size_t eq = kv.find('=');
    if (eq != std::string_view::npos && kv.substr(0, eq) == key)
      return std::string(kv.substr(eq + 1));
    pos = end + 1;
  }
  return std::nullopt;
}

inline std::optional<double> numeric_field(std::string_view text,
                                           std::string_view key) {
  auto raw = field(text, key);
  if (!raw) return std::nullopt;
  try {
    return std::stod(*raw);
  } catch (...) {
    return std::nullopt;
  }
}

inline std::string strip(std::string text) {
  for (;;) {
    std::size_t open = text.find("[[");
    if (open == std::string::npos) break;
    std::size_t close = text.find("]]", open);
    if (close == std::string::npos) break;
    std::size_t begin = open;
    while (begin > 0 && text[begin - 1] == ' ') --begin;
    text.erase(begin, close + 2 - begin);
  }
  return text;
}

inline std::string make(std::string_view answer, double p_solve) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), ";p=%.6g]]", p_solve);
  return "[[ans=" + std::string(answer) + buf;
}

}  // namespace mock_marker

struct MockScript {
  // When set, every call returns exactly this text.
  std::optional<std::string> fixed_text;

  // Solve behavior (reasoning template) when the question has no p marker.
  double default_p_solve = 1.0;

  // Synthesizer behavior: candidate questions keep the answer marker and get
  // this solve probability. A non-empty schedule overrides per attempt
  // (attempt i uses entry i-1, last entry repeats).
  double synth_p_target = 0.4;
  std::vector<double> synth_p_schedule;
  bool synth_omit_marker = false;  // emit no "New Question:" line at all

  // Quality judge reply: "SCORE: <quality_score>", or a raw override.
  double quality_score = 0.9;
  std::optional<std::string> quality_reply_override;

  // Difficulty judge: latent difficulty comes from [[theta=..]] markers, or
  // -logit(p) when only a p marker is present (lower solve rate = harder).
  double tie_prob = 0.0;
  std::optional<std::string> judge_reply_override;
};

class ScriptedMockBackend : public Backend {
 public:
  ScriptedMockBackend(std::string backend_id, std::uint64_t seed,
                      MockScript script = {},
                      std::set<Role> roles = {Role::target, Role::verifier,
                                              Role::synthesizer, Role::judge})
      : id_(std::move(backend_id)),
        seed_(seed),
        script_(std::move(script)),
        roles_(std::move(roles)) {}

  const std::string& id() const override { return id_; }
  bool supports(Role role) const override { return roles_.count(role) > 0; }
  std::uint64_t seed() const { return seed_; }
  const MockScript& script() const { return script_; }

  std::uint64_t calls() const { return calls_.load(); }
  std::uint64_t calls_for(const std::string& template_id) const {
    std::lock_guard lk(mu_);
    auto it = calls_by_template_.find(template_id);
    return it == calls_by_template_.end() ? 0 : it->second;
  }

  Completion generate(const Prompt& prompt) override {
    calls_.fetch_add(1);
    {
      std::lock_guard lk(mu_);
      ++calls_by_template_[prompt.template_id];
    }
    if (script_.fixed_text) return finish(*script_.fixed_text, prompt);

    Rng rng = rng_for(prompt);
    if (prompt.template_id == "reasoning") return solve(prompt, rng);
    if (prompt.template_id == "synthesizer") return synthesize(prompt, rng);
    if (prompt.template_id == "quality_judge") return quality(prompt);
    if (prompt.template_id == "difficulty_judge") return difficulty(prompt, rng);
    return finish("OK", prompt);
  }

 private:
  Rng rng_for(const Prompt& prompt) {
    // temperature 0 pins the stream to a single point, so repeated calls
    // are identical regardless of call index.
    std::uint64_t counter =
        prompt.decode.temperature == 0.0 ? 0 : prompt.call_index;
    if (!prompt.call_key.empty())
      return keyed_rng(seed_, prompt.call_key, counter);
    std::uint64_t anon = prompt.decode.temperature == 0.0
                             ? 0
                             : anon_counter_.fetch_add(1);
    return keyed_rng(seed_, "anon/" + prompt.template_id + "/" + user_text(prompt),
                     anon);
  }

  static std::string user_text(const Prompt& prompt) {
    for (auto it = prompt.messages.rbegin(); it != prompt.messages.rend(); ++it)
      if (it->role == "user") return it->text;
    return {};
  }

  Completion solve(const Prompt& prompt, Rng& rng) {
    const std::string text = user_text(prompt);
    auto answer = mock_marker::field(text, "ans");
    double p = mock_marker::numeric_field(text, "p")
                   .value_or(script_.default_p_solve);
    bool solved = answer && rng.next_unit() < p;
    int steps = 1 + static_cast<int>(rng.below(6));
    std::string body = "<think>";
    for (int s = 1; s <= steps; ++s) {
      if (s > 1) body += '\n';
      body += "Step " + std::to_string(s) + " of the reasoning.";
    }
    body += "</think>\nThe final answer is \\boxed{";
    if (solved)
      body += *answer;
    else
      body += "WRONG_" + answer.value_or("unknown");
    body += "}";
    return finish(body, prompt);
  }

  Completion synthesize(const Prompt& prompt, Rng& rng) {
    (void)rng;
    if (script_.synth_omit_marker)
      return finish("I could not produce a harder variant.", prompt);
    const std::string original = user_text(prompt);
    auto binding = prompt.bindings.find("question");
    std::string question =
        binding != prompt.bindings.end() ? binding->second : original;
    std::uint64_t attempt = 1;
    std::size_t slash = prompt.call_key.rfind('/');
    if (slash != std::string::npos) {
      try {
        attempt = std::stoull(prompt.call_key.substr(slash + 1));
      } catch (...) {
      }
    }
    double p = script_.synth_p_target;
    if (!script_.synth_p_schedule.empty()) {
      std::size_t idx = std::min(static_cast<std::size_t>(attempt > 0 ? attempt - 1 : 0),
                                 script_.synth_p_schedule.size() - 1);
      p = script_.synth_p_schedule[idx];
    }
    std::string answer = mock_marker::field(question, "ans").value_or("unknown");
    std::string stripped = mock_marker::strip(question);
    std::string candidate = "Harder variant " + std::to_string(attempt) +
                            " of: " + stripped + " " +
                            mock_marker::make(answer, p);
    return finish("New Question: " + candidate, prompt);
  }

  Completion quality(const Prompt& prompt) {
    if (script_.quality_reply_override)
      return finish(*script_.quality_reply_override, prompt);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", script_.quality_score);
    return finish(
        "The candidate stays faithful to the image and is harder.\nSCORE: " +
            std::string(buf),
        prompt);
  }

  Completion difficulty(const Prompt& prompt, Rng& rng) {
    if (script_.judge_reply_override)
      return finish(*script_.judge_reply_override, prompt);
    auto theta_of = [&](const char* binding) {
      auto it = prompt.bindings.find(binding);
      if (it == prompt.bindings.end()) return 0.0;
      if (auto theta = mock_marker::numeric_field(it->second, "theta"))
        return *theta;
      if (auto p = mock_marker::numeric_field(it->second, "p")) {
        double clamped = std::min(std::max(*p, 1e-6), 1.0 - 1e-6);
        return -std::log(clamped / (1.0 - clamped));
      }
      return 0.0;
    };
    double t1 = theta_of("problem_1");
    double t2 = theta_of("problem_2");
    std::string verdict;
    if (rng.next_unit() < script_.tie_prob) {
      verdict = "TIE";
    } else {
      double p_first = 1.0 / (1.0 + std::exp(t2 - t1));
      verdict = rng.next_unit() < p_first ? "FIRST" : "SECOND";
    }
    return finish("The harder problem needs more derivation steps.\nWINNER: " +
                      verdict,
                  prompt);
  }

  Completion finish(std::string text, const Prompt& prompt) const {
    Completion c;
    c.text = std::move(text);
    c.finish_reason = FinishReason::stop;
    int prompt_chars = 0;
    for (const auto& m : prompt.messages)
      prompt_chars += static_cast<int>(m.text.size());
    c.usage.prompt_tokens = prompt_chars / 4;
    c.usage.completion_tokens = static_cast<int>(c.text.size()) / 4;
    c.latency_ms = 0;
    return c;
  }

  std::string id_;
  std::uint64_t seed_;
  MockScript script_;
  std::set<Role> roles_;
  std::atomic<std::uint64_t> calls_{0};
  std::atomic<std::uint64_t> anon_counter_{0};
  mutable std::mutex mu_;
  std::map<std::string, std::uint64_t> calls_by_template_;
};

// Deterministic solve completion for (sample, p_solve, seed, call index).
// The draw is keyed, not stateful, so rollout j always sees the same stream
// no matter how calls interleave across threads.
inline Completion mock_solve(const Sample& sample, double p_solve,
                             std::uint64_t rng_seed,
                             std::uint64_t call_index = 0) {
  if (p_solve < 0.0 || p_solve > 1.0)
    throw ValidationError("mock_solve: p_solve must be in [0, 1]");
  Rng rng = keyed_rng(rng_seed, "solve/" + sample.id, call_index);
  bool solved = rng.next_unit() < p_solve;
  int steps = 1 + static_cast<int>(rng.below(6));
  std::string body = "<think>";
  for (int s = 1; s <= steps; ++s) {
    if (s > 1) body += '\n';
    body += "Step " + std::to_string(s) + " of the reasoning.";
  }
  body += "</think>\nThe final answer is \\boxed{";
  body += solved ? sample.answer : "WRONG_" + sample.answer;
  body += "}";
  Completion c;
  c.text = std::move(body);
  c.finish_reason = FinishReason::stop;
  c.usage.completion_tokens = static_cast<int>(c.text.size()) / 4;
  return c;
}

}  // namespace qforge
