#pragma once

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "qforge/jsonl.hpp"

namespace qforge {

enum class Origin { seed, synthesized };

inline std::string_view to_string(Origin o) {
  return o == Origin::seed ? "seed" : "synthesized";
}

inline Origin origin_from_string(std::string_view s, std::size_t line = 0) {
  if (s == "seed") return Origin::seed;
  if (s == "synthesized") return Origin::synthesized;
  throw ParseError("line " + std::to_string(line) + ": unknown origin '" +
                       std::string(s) + "'",
                   line);
}

// One image-question-answer triplet with provenance. Synthesized samples
// carry a parent_id pointing back at their seed; seeds never do.
struct Sample {
  std::string id;
  std::string image_ref;
  std::string question;
  std::string answer;
  Origin origin = Origin::seed;
  std::optional<std::string> parent_id;
  json meta = json::object();

  bool operator==(const Sample&) const = default;
};

inline void validate_sample(const Sample& s) {
  if (s.id.empty()) throw ValidationError("sample with empty id");
  if (s.question.empty())
    throw ValidationError("sample '" + s.id + "' has empty question");
  if (s.answer.empty())
    throw ValidationError("sample '" + s.id + "' has empty answer");
  if (s.origin == Origin::synthesized && !s.parent_id)
    throw ValidationError("synthesized sample '" + s.id +
                          "' is missing parent_id");
  if (s.origin == Origin::seed && s.parent_id)
    throw ValidationError("seed sample '" + s.id + "' must not set parent_id");
}

inline json to_json(const Sample& s) {
  json j{{"id", s.id},
         {"image_ref", s.image_ref},
         {"question", s.question},
         {"answer", s.answer},
         {"origin", std::string(to_string(s.origin))}};
  if (s.parent_id) j["parent_id"] = *s.parent_id;
  if (!s.meta.empty()) j["meta"] = s.meta;
  return j;
}

inline Sample sample_from_json(const json& j, std::size_t line = 0) {
  Sample s;
  s.id = require_field(j, "id", line).get<std::string>();
  s.image_ref = j.value("image_ref", std::string());
  s.question = require_field(j, "question", line).get<std::string>();
  s.answer = require_field(j, "answer", line).get<std::string>();
  s.origin =
      origin_from_string(j.value("origin", std::string("seed")), line);
  if (j.contains("parent_id")) s.parent_id = j["parent_id"].get<std::string>();
  if (j.contains("meta")) s.meta = j["meta"];
  validate_sample(s);
  return s;
}

struct Dataset {
  std::string name;
  int schema_version = 1;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
};

inline void validate_dataset(const Dataset& d) {
  std::set<std::string_view> seen;
  for (const auto& s : d.samples) {
    validate_sample(s);
    if (!seen.insert(s.id).second)
      throw ValidationError("duplicate sample id '" + s.id + "' in dataset '" +
                            d.name + "'");
  }
}

// Line-delimited records, one sample per line, input order preserved.
inline Dataset load_dataset(const std::filesystem::path& path) {
  Dataset d;
  d.name = path.stem().string();
  for_each_jsonl(path, [&](std::size_t line, const json& j) {
    d.samples.push_back(sample_from_json(j, line));
  });
  validate_dataset(d);
  return d;
}

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
  JsonlWriter out(path);
  for (const auto& s : d.samples) out.write(to_json(s));
  out.flush();
}

// Lowercases and trims whitespace plus leading/trailing punctuation; used to
// decide whether an answer is a bare Yes/No.
inline std::string normalize_answer_token(std::string_view s) {
  auto is_trimmed = [](unsigned char c) {
    return std::isspace(c) || c == '.' || c == ',' || c == '!' || c == '?' ||
           c == ';' || c == ':' || c == '"' || c == '\'' || c == '(' ||
           c == ')';
  };
  std::size_t b = 0, e = s.size();
  while (b < e && is_trimmed(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && is_trimmed(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out;
  out.reserve(e - b);
  for (std::size_t i = b; i < e; ++i)
    out.push_back(static_cast<char>(
        std::tolower(static_cast<unsigned char>(s[i]))));
  return out;
}

struct PreprocessRules {
  bool mcq_to_freeform = true;
  bool drop_yes_no = true;
};

struct PreprocessResult {
  Dataset dataset;
  std::size_t dropped_yes_no = 0;
  std::size_t converted_mcq = 0;
};

namespace detail {

// An option line is "<key><sep> ..." or "(<key>) ...", key compared
// case-insensitively against the sample's option map.
inline bool is_option_line(std::string_view line, const json& options) {
  std::size_t b = 0;
  while (b < line.size() &&
         std::isspace(static_cast<unsigned char>(line[b])))
    ++b;
  bool parenthesized = b < line.size() && line[b] == '(';
  if (parenthesized) ++b;
  for (const auto& [key, value] : options.items()) {
    (void)value;
    if (line.size() - b < key.size()) continue;
    bool match = true;
    for (std::size_t i = 0; i < key.size(); ++i) {
      if (std::tolower(static_cast<unsigned char>(line[b + i])) !=
          std::tolower(static_cast<unsigned char>(key[i]))) {
        match = false;
        break;
      }
    }
    if (!match) continue;
    std::size_t after = b + key.size();
    if (after >= line.size()) continue;
    char c = line[after];
    if (parenthesized ? c == ')' : (c == '.' || c == ')' || c == ':'))
      return true;
  }
  return false;
}

inline std::string strip_option_lines(const std::string& question,
                                      const json& options) {
  std::string out;
  std::size_t pos = 0;
  while (pos <= question.size()) {
    std::size_t nl = question.find('\n', pos);
    std::string_view line(question.data() + pos,
                          (nl == std::string::npos ? question.size() : nl) -
                              pos);
    if (!is_option_line(line, options)) {
      if (!out.empty()) out.push_back('\n');
      out.append(line);
    }
    if (nl == std::string::npos) break;
    pos = nl + 1;
  }
  while (!out.empty() &&
         std::isspace(static_cast<unsigned char>(out.back())))
    out.pop_back();
  return out;
}

}  // namespace detail

// Multiple-choice samples declare their options in meta["options"]; the
// answer letter is resolved against that map, the resolved content becomes
// the answer, and option lines embedded in the question are removed. The
// transform is idempotent: converted samples lose meta["options"].
inline PreprocessResult preprocess(const Dataset& d,
                                   const PreprocessRules& rules) {
  PreprocessResult result;
  result.dataset.name = d.name;
  result.dataset.schema_version = d.schema_version;
  for (const Sample& in : d.samples) {
    Sample s = in;
    if (rules.mcq_to_freeform && s.meta.is_object() &&
        s.meta.contains("options") && s.meta["options"].is_object()) {
      const json& options = s.meta["options"];
      const json* picked = nullptr;
      for (const auto& [key, value] : options.items()) {
        if (key.size() == s.answer.size() &&
            std::equal(key.begin(), key.end(), s.answer.begin(),
                       [](char a, char b) {
                         return std::tolower(static_cast<unsigned char>(a)) ==
                                std::tolower(static_cast<unsigned char>(b));
                       })) {
          picked = &value;
          break;
        }
      }
      if (!picked)
        throw ValidationError("sample '" + s.id + "': answer letter '" +
                              s.answer + "' has no matching option");
      s.question = detail::strip_option_lines(s.question, options);
      s.answer = picked->is_string() ? picked->get<std::string>()
                                     : picked->dump();
      s.meta.erase("options");
      ++result.converted_mcq;
    }
    if (rules.drop_yes_no) {
      std::string token = normalize_answer_token(s.answer);
      if (token == "yes" || token == "no") {
        ++result.dropped_yes_no;
        continue;
      }
    }
    result.dataset.samples.push_back(std::move(s));
  }
  validate_dataset(result.dataset);
  return result;
}

namespace detail {

inline void check_parent_links(const Dataset& seed, const Dataset& synth) {
  std::set<std::string_view> seed_ids;
  for (const auto& s : seed.samples) seed_ids.insert(s.id);
  for (const auto& s : synth.samples) {
    if (!s.parent_id)
      throw ValidationError("synthesized sample '" + s.id +
                            "' has no parent_id");
    if (!seed_ids.count(*s.parent_id))
      throw ValidationError("synthesized sample '" + s.id +
                            "' has dangling parent_id '" + *s.parent_id + "'");
  }
}

}  // namespace detail

// All seed samples followed by all synthesized samples: |out| = |seed| + |synth|.
inline Dataset combine_augment(const Dataset& seed, const Dataset& synth) {
  detail::check_parent_links(seed, synth);
  Dataset out;
  out.name = seed.name + "-augmented";
  out.schema_version = seed.schema_version;
  out.samples.reserve(seed.size() + synth.size());
  out.samples.insert(out.samples.end(), seed.samples.begin(),
                     seed.samples.end());
  out.samples.insert(out.samples.end(), synth.samples.begin(),
                     synth.samples.end());
  validate_dataset(out);
  return out;
}

// Each seed sample with a synthesized child is replaced in place by that
// child: |out| = |seed|. Two children for one parent is an error rather than
// a silent pick, so outputs stay deterministic.
inline Dataset combine_replace(const Dataset& seed, const Dataset& synth) {
  detail::check_parent_links(seed, synth);
  std::map<std::string_view, const Sample*> child_of;
  for (const auto& s : synth.samples) {
    auto [it, inserted] = child_of.emplace(*s.parent_id, &s);
    (void)it;
    if (!inserted)
      throw ValidationError("two synthesized samples share parent '" +
                            *s.parent_id + "'");
  }
  Dataset out;
  out.name = seed.name + "-replaced";
  out.schema_version = seed.schema_version;
  out.samples.reserve(seed.size());
  for (const auto& s : seed.samples) {
    auto it = child_of.find(s.id);
    out.samples.push_back(it == child_of.end() ? s : *it->second);
  }
  validate_dataset(out);
  return out;
}

}  // namespace qforge
