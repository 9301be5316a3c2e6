#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <map>
#include <mutex>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "qforge/error.hpp"

namespace qforge {

enum class Role { target, verifier, synthesizer, judge };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::target: return "target";
    case Role::verifier: return "verifier";
    case Role::synthesizer: return "synthesizer";
    case Role::judge: return "judge";
  }
  return "target";
}

inline Role role_from_string(std::string_view s) {
  if (s == "target") return Role::target;
  if (s == "verifier") return Role::verifier;
  if (s == "synthesizer") return Role::synthesizer;
  if (s == "judge") return Role::judge;
  throw ConfigError("unknown role '" + std::string(s) + "'");
}

struct DecodeParams {
  double temperature = 1.0;
  double top_p = 1.0;
  int max_tokens = 2048;
};

struct Message {
  std::string role;  // "system" | "user"
  std::string text;
  std::vector<std::string> image_refs;
};

// A rendered request. `bindings` keeps the raw substitutions for audit;
// `messages` is the byte-exact rendered form sent to the backend.
// `call_key`/`call_index` identify the call for deterministic replay on
// scripted mocks; remote transports ignore them.
struct Prompt {
  std::string template_id;
  std::map<std::string, std::string> bindings;
  std::vector<std::string> image_refs;
  DecodeParams decode;
  std::vector<Message> messages;
  std::string call_key;
  std::uint64_t call_index = 0;
};

enum class FinishReason { stop, length, error };

inline std::string_view to_string(FinishReason r) {
  switch (r) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::error: return "error";
  }
  return "stop";
}

inline FinishReason finish_reason_from_string(std::string_view s) {
  if (s == "stop") return FinishReason::stop;
  if (s == "length") return FinishReason::length;
  if (s == "error") return FinishReason::error;
  throw TransportError("unknown finish_reason '" + std::string(s) + "'");
}

struct Usage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct Completion {
  std::string text;
  FinishReason finish_reason = FinishReason::stop;
  Usage usage;
  int latency_ms = 0;
};

// Uniform interface over the remote HTTP transport and the scripted mock.
// generate() is safe for concurrent invocation.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual const std::string& id() const = 0;
  virtual bool supports(Role role) const = 0;
  virtual Completion generate(const Prompt& prompt) = 0;
};

struct PromptTemplate {
  std::vector<Message> messages;
  std::vector<std::string> placeholders;
  DecodeParams decode;
};

// Built-in templates. The synthesizer template takes only {question} by
// design: the ground-truth answer placeholder does not exist, so it can
// never be leaked into a synthesis request.
inline const std::map<std::string, PromptTemplate>& prompt_templates() {
  static const std::map<std::string, PromptTemplate> templates = {
      {"reasoning",
       {{{"system", "You are a helpful assistant.", {}},
         {"user",
          "You FIRST think about the reasoning process as an internal "
          "monologue and then provide the final answer.The reasoning process "
          "MUST BE enclosed within <think> </think> tags. The final answer "
          "MUST BE put in \\boxed{}. {question}",
          {}}},
        {"question"},
        {1.0, 1.0, 2048}}},
      {"synthesizer",
       {{{"user",
          "Given an image and the following question, transform it into a "
          "significantly more challenging version that requires deeper "
          "reasoning but maintains the same answer.\n\nOriginal "
          "Question:\n\n{question}\n\nYour Response Format:\n\nNew Question: "
          "{Your transformed question}",
          {}}},
        {"question"},
        {1.0, 1.0, 2048}}},
      {"quality_judge",
       {{{"user",
          "You are reviewing a rewritten math question. Using the original "
          "question, the image, and the ground-truth answer as reference, "
          "judge whether the candidate question is well-posed, "
          "self-contained, and still answerable with that answer.\n\n"
          "Original Question:\n{question}\n\nCandidate "
          "Question:\n{candidate}\n\nGround-Truth Answer:\n{answer}\n\nGive "
          "a brief assessment, then end with exactly one line of the "
          "form:\nSCORE: <a value between 0 and 1>",
          {}}},
        {"question", "candidate", "answer"},
        {0.6, 1.0, 1024}}},
      {"difficulty_judge",
       {{{"user",
          "Compare math problems based on their difficulty. Consider "
          "reasoning steps, domain knowledge needed, and computational "
          "complexity in your assessment.\n\n<Image 1>\n\nFIRST "
          "PROBLEM:\n{problem_1}\n\n<Image 2>\n\nSECOND "
          "PROBLEM:\n{problem_2}\n\nWhich of these two math problems is more "
          "difficult?\n\nProvide a brief explanation comparing their "
          "difficulty levels, then end with exactly one of:\n\"WINNER: "
          "FIRST\", \"WINNER: SECOND\", or \"WINNER: TIE\"",
          {}}},
        {"problem_1", "problem_2"},
        {0.6, 1.0, 1024}}},
  };
  return templates;
}

inline const PromptTemplate& find_template(const std::string& template_id) {
  const auto& all = prompt_templates();
  auto it = all.find(template_id);
  if (it == all.end())
    throw ValidationError("unknown prompt template '" + template_id + "'");
  return it->second;
}

// Byte-exact substitution of {name} for each declared placeholder. Bindings
// must cover the declared placeholders exactly; literal braces elsewhere in
// the template are left untouched.
inline Prompt render_prompt(const std::string& template_id,
                            const std::map<std::string, std::string>& bindings,
                            std::vector<std::string> image_refs = {},
                            std::optional<DecodeParams> decode = {}) {
  const PromptTemplate& tpl = find_template(template_id);
  for (const auto& name : tpl.placeholders)
    if (!bindings.count(name))
      throw ValidationError("template '" + template_id +
                            "': missing binding '" + name + "'");
  for (const auto& [name, value] : bindings) {
    (void)value;
    if (std::find(tpl.placeholders.begin(), tpl.placeholders.end(), name) ==
        tpl.placeholders.end())
      throw ValidationError("template '" + template_id +
                            "': unexpected binding '" + name + "'");
  }

  Prompt p;
  p.template_id = template_id;
  p.bindings = bindings;
  p.image_refs = image_refs;
  p.decode = decode.value_or(tpl.decode);
  p.messages = tpl.messages;
  for (auto& msg : p.messages) {
    for (const auto& name : tpl.placeholders) {
      const std::string token = "{" + name + "}";
      const std::string& value = bindings.at(name);
      std::size_t pos = 0;
      while ((pos = msg.text.find(token, pos)) != std::string::npos) {
        msg.text.replace(pos, token.size(), value);
        pos += value.size();
      }
    }
  }
  if (!p.messages.empty()) p.messages.back().image_refs = std::move(image_refs);
  return p;
}

// Token bucket: capacity `burst`, refilled at `rate_per_sec`. acquire()
// blocks until a token is available, so in any wall-clock window of length w
// at most ceil(rate*w) + burst requests pass.
class TokenBucket {
 public:
  TokenBucket(double rate_per_sec, int burst)
      : rate_(rate_per_sec),
        capacity_(static_cast<double>(burst)),
        tokens_(static_cast<double>(burst)),
        last_(Clock::now()) {
    if (rate_per_sec <= 0 || burst < 1)
      throw ConfigError("token bucket requires rate > 0 and burst >= 1");
  }

  void acquire() {
    std::unique_lock lk(mu_);
    for (;;) {
      refill();
      if (tokens_ >= 1.0) {
        tokens_ -= 1.0;
        return;
      }
      auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
      cv_.wait_for(lk, wait);
    }
  }

 private:
  using Clock = std::chrono::steady_clock;

  void refill() {
    auto now = Clock::now();
    double elapsed = std::chrono::duration<double>(now - last_).count();
    last_ = now;
    tokens_ = std::min(capacity_, tokens_ + elapsed * rate_);
  }

  std::mutex mu_;
  std::condition_variable cv_;
  double rate_;
  double capacity_;
  double tokens_;
  Clock::time_point last_;
};

}  // namespace qforge
