#pragma once

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>

#include "qforge/dataset.hpp"
#include "qforge/gateway.hpp"

namespace qforge {

// Answer-matching rules for the binary verifiable reward. Matching is local
// and deterministic (no judge model) so rollout verification stays cheap and
// offline-testable; a judge-backed matcher can be plugged in behind the same
// Backend interface if ever needed.
struct MatchPolicy {
  bool normalize_whitespace = true;
  bool case_insensitive = true;
  double numeric_tolerance = 1e-9;  // 0 means exact numeric comparison
  bool strip_latex_wrappers = true;
};

// Content of the last \boxed{...} span, with balanced-brace matching
// (backslash-escaped braces do not count). Returns nullopt when no box is
// present or the final box is unbalanced; callers treat both as a non-match.
inline std::optional<std::string> extract_answer(std::string_view text) {
  static constexpr std::string_view kBox = "\\boxed{";
  std::size_t pos = text.rfind(kBox);
  if (pos == std::string_view::npos) return std::nullopt;
  std::size_t i = pos + kBox.size();
  int depth = 1;
  std::string content;
  while (i < text.size()) {
    char c = text[i];
    if (c == '\\' && i + 1 < text.size()) {
      content.push_back(c);
      content.push_back(text[i + 1]);
      i += 2;
      continue;
    }
    if (c == '{') ++depth;
    if (c == '}') {
      --depth;
      if (depth == 0) return content;
    }
    content.push_back(c);
    ++i;
  }
  return std::nullopt;  // ran out of text with the box still open
}

namespace detail {

inline void erase_all(std::string& s, std::string_view token) {
  std::size_t pos = 0;
  while ((pos = s.find(token, pos)) != std::string::npos)
    s.erase(pos, token.size());
}

// \text{inner} -> inner (balanced scan).
inline void unwrap_text_macro(std::string& s) {
  static constexpr std::string_view kText = "\\text{";
  std::size_t pos;
  while ((pos = s.find(kText)) != std::string::npos) {
    std::size_t i = pos + kText.size();
    int depth = 1;
    while (i < s.size() && depth > 0) {
      if (s[i] == '{') ++depth;
      if (s[i] == '}') --depth;
      ++i;
    }
    if (depth != 0) return;  // unbalanced; leave as-is
    s.erase(i - 1, 1);
    s.erase(pos, kText.size());
  }
}

inline std::string strip_latex(std::string s) {
  erase_all(s, "$");
  erase_all(s, "\\left");
  erase_all(s, "\\right");
  erase_all(s, "\\,");
  erase_all(s, "\\;");
  erase_all(s, "\\!");
  erase_all(s, "\\(");
  erase_all(s, "\\)");
  erase_all(s, "\\[");
  erase_all(s, "\\]");
  unwrap_text_macro(s);
  return s;
}

inline std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool in_ws = true;  // leading whitespace dropped
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_ws = true;
      continue;
    }
    if (in_ws && !out.empty()) out.push_back(' ');
    in_ws = false;
    out.push_back(c);
  }
  return out;
}

inline std::string ascii_lower(std::string s) {
  for (char& c : s)
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline std::optional<double> parse_plain_number(std::string_view s) {
  // Strip thousands separators between digits before handing to strtod.
  std::string buf;
  buf.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == ',' && i > 0 && i + 1 < s.size() &&
        std::isdigit(static_cast<unsigned char>(s[i - 1])) &&
        std::isdigit(static_cast<unsigned char>(s[i + 1])))
      continue;
    buf.push_back(s[i]);
  }
  std::size_t b = 0, e = buf.size();
  while (b < e && std::isspace(static_cast<unsigned char>(buf[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(buf[e - 1]))) --e;
  if (b == e) return std::nullopt;
  std::string t = buf.substr(b, e - b);
  char* end = nullptr;
  double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size()) return std::nullopt;
  return v;
}

inline std::optional<double> parse_numeric_impl(std::string_view s);

// \frac{a}{b}, \dfrac, \tfrac.
inline std::optional<double> parse_frac(std::string_view s) {
  for (std::string_view head : {"\\frac", "\\dfrac", "\\tfrac"}) {
    if (s.substr(0, head.size()) != head) continue;
    std::size_t i = head.size();
    auto read_group = [&](std::optional<double>& out) {
      while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i])))
        ++i;
      if (i >= s.size() || s[i] != '{') return false;
      int depth = 1;
      std::size_t start = ++i;
      while (i < s.size() && depth > 0) {
        if (s[i] == '{') ++depth;
        if (s[i] == '}') --depth;
        ++i;
      }
      if (depth != 0) return false;
      out = parse_numeric_impl(s.substr(start, i - 1 - start));
      return out.has_value();
    };
    std::optional<double> num, den;
    if (read_group(num) && read_group(den) && i == s.size() && *den != 0.0)
      return *num / *den;
    return std::nullopt;
  }
  return std::nullopt;
}

inline std::optional<double> parse_numeric_impl(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front())))
    s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back())))
    s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '\\') return parse_frac(s);
  std::size_t slash = s.find('/');
  if (slash != std::string_view::npos &&
      s.find('/', slash + 1) == std::string_view::npos) {
    auto num = parse_plain_number(s.substr(0, slash));
    auto den = parse_plain_number(s.substr(slash + 1));
    if (num && den && *den != 0.0) return *num / *den;
    return std::nullopt;
  }
  return parse_plain_number(s);
}

}  // namespace detail

// Numeric value of an answer string: plain/scientific decimals, a/b
// fractions, and \frac{a}{b}. Anything else is nullopt.
inline std::optional<double> parse_numeric(std::string_view s) {
  return detail::parse_numeric_impl(s);
}

// True iff the normalized forms are byte-equal, or both sides parse as
// numbers within numeric_tolerance. Unparseable numbers fall back to the
// string comparison.
inline bool match_answer(std::string_view pred, std::string_view gold,
                         const MatchPolicy& policy = {}) {
  auto canon = [&](std::string_view s) {
    std::string t(s);
    if (policy.strip_latex_wrappers) t = detail::strip_latex(std::move(t));
    if (policy.normalize_whitespace) t = detail::collapse_whitespace(t);
    if (policy.case_insensitive) t = detail::ascii_lower(std::move(t));
    return t;
  };
  std::string p = canon(pred), g = canon(gold);
  if (p == g) return true;
  auto pn = parse_numeric(p), gn = parse_numeric(g);
  if (pn && gn) {
    if (policy.numeric_tolerance == 0.0) return *pn == *gn;
    return std::fabs(*pn - *gn) <= policy.numeric_tolerance;
  }
  return false;
}

struct RolloutRecord {
  std::string raw_text;
  std::optional<std::string> extracted_answer;
  bool matched = false;
};

// Pass count c out of N for one (sample, backend) run, with the per-rollout
// evidence that produced it.
struct RolloutResult {
  std::string sample_id;
  std::string backend_id;
  int n_rollouts = 0;
  int pass_count = 0;
  std::uint64_t rng_seed = 0;
  std::vector<RolloutRecord> per_rollout;
};

inline void validate_rollout_result(const RolloutResult& r) {
  if (r.pass_count < 0 || r.pass_count > r.n_rollouts)
    throw ValidationError("rollout result for '" + r.sample_id +
                          "': pass_count out of range");
  if (static_cast<int>(r.per_rollout.size()) != r.n_rollouts)
    throw ValidationError("rollout result for '" + r.sample_id +
                          "': per_rollout size != n_rollouts");
  int matched = 0;
  for (const auto& rec : r.per_rollout) matched += rec.matched ? 1 : 0;
  if (matched != r.pass_count)
    throw ValidationError("rollout result for '" + r.sample_id +
                          "': pass_count does not equal matched rollouts");
}

inline json to_json(const RolloutResult& r) {
  json rollouts = json::array();
  for (const auto& rec : r.per_rollout) {
    json j{{"raw_text", rec.raw_text}, {"matched", rec.matched}};
    if (rec.extracted_answer) j["extracted_answer"] = *rec.extracted_answer;
    rollouts.push_back(std::move(j));
  }
  return json{{"sample_id", r.sample_id},   {"backend_id", r.backend_id},
              {"n_rollouts", r.n_rollouts}, {"pass_count", r.pass_count},
              {"rng_seed", r.rng_seed},     {"per_rollout", std::move(rollouts)}};
}

inline RolloutResult rollout_result_from_json(const json& j,
                                              std::size_t line = 0) {
  RolloutResult r;
  r.sample_id = require_field(j, "sample_id", line).get<std::string>();
  r.backend_id = require_field(j, "backend_id", line).get<std::string>();
  r.n_rollouts = require_field(j, "n_rollouts", line).get<int>();
  r.pass_count = require_field(j, "pass_count", line).get<int>();
  r.rng_seed = j.value("rng_seed", std::uint64_t{0});
  for (const auto& rec : require_field(j, "per_rollout", line)) {
    RolloutRecord out;
    out.raw_text = rec.value("raw_text", std::string());
    if (rec.contains("extracted_answer"))
      out.extracted_answer = rec["extracted_answer"].get<std::string>();
    out.matched = rec.value("matched", false);
    r.per_rollout.push_back(std::move(out));
  }
  validate_rollout_result(r);
  return r;
}

// Transport failure mid-rollout; carries whatever completed so callers can
// preserve partial work.
class PassCountError : public TransportError {
 public:
  PassCountError(const std::string& what, RolloutResult partial_result)
      : TransportError(what), partial(std::move(partial_result)) {}
  RolloutResult partial;
};

inline std::string rollout_call_key(std::uint64_t seed,
                                    std::string_view sample_id) {
  return "solve/s" + std::to_string(seed) + "/" + std::string(sample_id);
}

// Monte Carlo rollout pass count: n generations under the reasoning
// template, each scored by extract + match against the gold answer. Failed
// extraction counts as a non-match, never an error, mirroring the binary
// verifiable reward. Deterministic for scripted mocks given (backend seed,
// seed) because rollout j is keyed by index, not by issue order.
inline RolloutResult pass_count(const Sample& sample, Backend& backend, int n,
                                std::uint64_t seed,
                                const MatchPolicy& policy = {}) {
  if (n < 1) throw ConfigError("pass_count: n must be >= 1");
  RolloutResult result;
  result.sample_id = sample.id;
  result.backend_id = backend.id();
  result.n_rollouts = n;
  result.rng_seed = seed;
  result.per_rollout.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    std::vector<std::string> refs;
    if (!sample.image_ref.empty()) refs.push_back(sample.image_ref);
    Prompt prompt =
        render_prompt("reasoning", {{"question", sample.question}}, refs);
    prompt.call_key = rollout_call_key(seed, sample.id);
    prompt.call_index = static_cast<std::uint64_t>(j);
    Completion completion;
    try {
      completion = backend.generate(prompt);
    } catch (const TransportError& e) {
      result.n_rollouts = static_cast<int>(result.per_rollout.size());
      throw PassCountError("sample '" + sample.id + "' rollout " +
                               std::to_string(j) + ": " + e.what(),
                           std::move(result));
    }
    RolloutRecord rec;
    rec.raw_text = completion.text;
    rec.extracted_answer = extract_answer(completion.text);
    rec.matched = rec.extracted_answer &&
                  match_answer(*rec.extracted_answer, sample.answer, policy);
    if (rec.matched) ++result.pass_count;
    result.per_rollout.push_back(std::move(rec));
  }
  return result;
}

// File-backed rollout store keyed by (sample_id, backend_id, n, seed);
// reruns with the same key are free. Appends go through one writer at a
// time (the ordered emitter), keeping the file byte-stable across reruns.
class RolloutCache {
 public:
  static std::string key(std::string_view sample_id,
                         std::string_view backend_id, int n,
                         std::uint64_t seed) {
    return std::string(sample_id) + "\x1f" + std::string(backend_id) + "\x1f" +
           std::to_string(n) + "\x1f" + std::to_string(seed);
  }

  explicit RolloutCache(std::filesystem::path path) : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) {
      for_each_jsonl(path_, [&](std::size_t line, const json& j) {
        RolloutResult r = rollout_result_from_json(j, line);
        std::string k = key(r.sample_id, r.backend_id, r.n_rollouts, r.rng_seed);
        entries_.insert_or_assign(std::move(k), std::move(r));
      });
    }
  }

  const std::filesystem::path& path() const { return path_; }
  std::size_t size() const { return entries_.size(); }

  const RolloutResult* find(std::string_view sample_id,
                            std::string_view backend_id, int n,
                            std::uint64_t seed) const {
    auto it = entries_.find(key(sample_id, backend_id, n, seed));
    return it == entries_.end() ? nullptr : &it->second;
  }

  void put(const RolloutResult& r) {
    std::lock_guard lk(mu_);
    std::string k = key(r.sample_id, r.backend_id, r.n_rollouts, r.rng_seed);
    if (entries_.count(k)) return;
    if (!writer_) writer_ = std::make_unique<JsonlWriter>(path_, true);
    writer_->write(to_json(r));
    writer_->flush();
    entries_.emplace(std::move(k), r);
  }

 private:
  std::filesystem::path path_;
  std::map<std::string, RolloutResult> entries_;
  std::unique_ptr<JsonlWriter> writer_;
  std::mutex mu_;
};

}  // namespace qforge
