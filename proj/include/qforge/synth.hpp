#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qforge/mock.hpp"
#include "qforge/pool.hpp"
#include "qforge/rollout.hpp"
#include "qforge/select.hpp"

namespace qforge {

// Acceptance gate for one candidate: answerable (c_cand >= t_min) and
// measurably harder (c_cand <= c_ori - delta_hard). Candidate rollouts reuse
// the same N and match policy as the originals so the two counts compare.
struct PipelineConfig {
  int t_min = 4;
  int delta_hard = 2;
  double t_quality = 0.5;  // 0 disables the quality gate entirely
  int n_attempts = 3;
  int n_rollouts = 16;
  SelectionConfig select;
  MatchPolicy match;
};

inline void validate_pipeline_config(const PipelineConfig& cfg) {
  if (cfg.t_min < 1) throw ConfigError("pipeline: t_min must be >= 1");
  if (cfg.delta_hard < 1) throw ConfigError("pipeline: delta_hard must be >= 1");
  if (cfg.n_attempts < 1) throw ConfigError("pipeline: n_attempts must be >= 1");
  if (cfg.n_rollouts < 1) throw ConfigError("pipeline: n_rollouts must be >= 1");
  if (cfg.t_quality < 0.0 || cfg.t_quality > 1.0)
    throw ConfigError("pipeline: t_quality must be in [0, 1]");
  if (cfg.t_min + cfg.delta_hard > cfg.n_rollouts)
    throw ConfigError(
        "pipeline: t_min + delta_hard exceeds n_rollouts; no candidate could "
        "ever be accepted from a maximal-pass seed");
  if (cfg.select.n_rollouts != cfg.n_rollouts)
    throw ConfigError("pipeline: select.n_rollouts must equal n_rollouts");
  validate_selection_config(cfg.select);
}

enum class Verdict {
  accepted,
  rejected_quality,
  rejected_correctness,
  rejected_difficulty,
  parse_error,
  exhausted_attempts,  // per-sample outcome only; never on attempt records
};

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::accepted: return "accepted";
    case Verdict::rejected_quality: return "rejected_quality";
    case Verdict::rejected_correctness: return "rejected_correctness";
    case Verdict::rejected_difficulty: return "rejected_difficulty";
    case Verdict::parse_error: return "parse_error";
    case Verdict::exhausted_attempts: return "exhausted_attempts";
  }
  return "parse_error";
}

inline Verdict verdict_from_string(std::string_view s, std::size_t line = 0) {
  if (s == "accepted") return Verdict::accepted;
  if (s == "rejected_quality") return Verdict::rejected_quality;
  if (s == "rejected_correctness") return Verdict::rejected_correctness;
  if (s == "rejected_difficulty") return Verdict::rejected_difficulty;
  if (s == "parse_error") return Verdict::parse_error;
  if (s == "exhausted_attempts") return Verdict::exhausted_attempts;
  throw ParseError("line " + std::to_string(line) + ": unknown verdict '" +
                       std::string(s) + "'",
                   line);
}

// One synthesis attempt and its fate, the unit of the audit log.
struct CandidateRecord {
  std::string parent_id;
  std::string candidate_question;
  std::optional<double> quality_score;
  int c_ori = 0;
  std::optional<int> c_cand;
  Verdict verdict = Verdict::parse_error;
  int attempt_index = 1;
  std::string raw_synth_output;
};

inline json to_json(const CandidateRecord& r) {
  json j{{"parent_id", r.parent_id},
         {"candidate_question", r.candidate_question},
         {"c_ori", r.c_ori},
         {"verdict", std::string(to_string(r.verdict))},
         {"attempt_index", r.attempt_index},
         {"raw_synth_output", r.raw_synth_output}};
  if (r.quality_score) j["quality_score"] = *r.quality_score;
  if (r.c_cand) j["c_cand"] = *r.c_cand;
  return j;
}

inline CandidateRecord candidate_record_from_json(const json& j,
                                                  std::size_t line = 0) {
  CandidateRecord r;
  r.parent_id = require_field(j, "parent_id", line).get<std::string>();
  r.candidate_question = j.value("candidate_question", std::string());
  if (j.contains("quality_score"))
    r.quality_score = j["quality_score"].get<double>();
  r.c_ori = require_field(j, "c_ori", line).get<int>();
  if (j.contains("c_cand")) r.c_cand = j["c_cand"].get<int>();
  r.verdict =
      verdict_from_string(require_field(j, "verdict", line).get<std::string>(),
                          line);
  r.attempt_index = require_field(j, "attempt_index", line).get<int>();
  r.raw_synth_output = j.value("raw_synth_output", std::string());
  return r;
}

inline std::vector<CandidateRecord> load_audit_log(
    const std::filesystem::path& path) {
  std::vector<CandidateRecord> records;
  for_each_jsonl(path, [&](std::size_t line, const json& j) {
    records.push_back(candidate_record_from_json(j, line));
  });
  return records;
}

// Backends by role; verifier defaults to the target model because candidate
// difficulty must be calibrated against the model that will be trained.
struct RoleMap {
  Backend* target = nullptr;
  Backend* verifier = nullptr;
  Backend* synthesizer = nullptr;
  Backend* judge = nullptr;

  Backend& target_backend() const {
    if (!target) throw ConfigError("no backend configured for role 'target'");
    return *target;
  }
  Backend& verifier_backend() const {
    if (verifier) return *verifier;
    return target_backend();
  }
  Backend& synthesizer_backend() const {
    if (!synthesizer)
      throw ConfigError("no backend configured for role 'synthesizer'");
    return *synthesizer;
  }
  Backend& judge_backend() const {
    if (!judge) throw ConfigError("no backend configured for role 'judge'");
    return *judge;
  }
};

struct SynthesizedText {
  std::optional<std::string> question;  // nullopt: marker missing/empty
  std::string raw;
};

// Asks the synthesizer for a harder variant. The prompt carries only the
// image and the original question; the answer is withheld so the model must
// work from the semantics, not paraphrase around a known answer. The reply
// is everything after the last "New Question:" marker, trimmed.
inline SynthesizedText synthesize_candidate(Backend& synthesizer,
                                            const Sample& sample,
                                            std::string call_key = {}) {
  if (!synthesizer.supports(Role::synthesizer))
    throw ConfigError("backend '" + synthesizer.id() +
                      "' does not serve the synthesizer role");
  std::vector<std::string> refs;
  if (!sample.image_ref.empty()) refs.push_back(sample.image_ref);
  Prompt prompt =
      render_prompt("synthesizer", {{"question", sample.question}}, refs);
  prompt.call_key = std::move(call_key);
  Completion completion = synthesizer.generate(prompt);

  SynthesizedText out;
  out.raw = completion.text;
  static constexpr std::string_view kMarker = "New Question:";
  std::size_t pos = out.raw.rfind(kMarker);
  if (pos == std::string::npos) return out;
  std::string_view body(out.raw);
  body.remove_prefix(pos + kMarker.size());
  while (!body.empty() && std::isspace(static_cast<unsigned char>(body.front())))
    body.remove_prefix(1);
  while (!body.empty() && std::isspace(static_cast<unsigned char>(body.back())))
    body.remove_suffix(1);
  if (body.empty()) return out;
  out.question = std::string(body);
  return out;
}

class QualityParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Judge score for a candidate, parsed from a trailing "SCORE: x" line.
// Out-of-range scores are errors, not clamped, so judge drift surfaces
// instead of silently passing the gate.
inline double assess_quality(Backend& judge, const Sample& sample,
                             const std::string& candidate,
                             std::string call_key = {}) {
  if (!judge.supports(Role::judge))
    throw ConfigError("backend '" + judge.id() +
                      "' does not serve the judge role");
  std::vector<std::string> refs;
  if (!sample.image_ref.empty()) refs.push_back(sample.image_ref);
  Prompt prompt = render_prompt("quality_judge",
                                {{"question", sample.question},
                                 {"candidate", candidate},
                                 {"answer", sample.answer}},
                                refs);
  prompt.call_key = std::move(call_key);
  Completion completion = judge.generate(prompt);

  static constexpr std::string_view kMarker = "SCORE:";
  std::size_t pos = completion.text.rfind(kMarker);
  if (pos == std::string::npos)
    throw QualityParseError("quality judge reply has no SCORE line");
  const char* begin = completion.text.c_str() + pos + kMarker.size();
  char* end = nullptr;
  double score = std::strtod(begin, &end);
  if (end == begin)
    throw QualityParseError("quality judge reply has unparseable score");
  if (score < 0.0 || score > 1.0)
    throw QualityParseError("quality judge score " + std::to_string(score) +
                            " outside [0, 1]");
  return score;
}

// The two-criterion conjunction. When both fail, the correctness failure is
// reported (an unanswerable candidate tells us nothing about difficulty).
inline Verdict verify_candidate(int c_ori, int c_cand,
                                const PipelineConfig& cfg) {
  if (c_cand < 0 || c_cand > cfg.n_rollouts || c_ori < 0 ||
      c_ori > cfg.n_rollouts)
    throw ValidationError("verify_candidate: counts must be in [0, N]");
  if (c_cand < cfg.t_min) return Verdict::rejected_correctness;
  if (c_cand > c_ori - cfg.delta_hard) return Verdict::rejected_difficulty;
  return Verdict::accepted;
}

inline Sample make_synthesized_sample(const Sample& parent,
                                      std::string question) {
  Sample s;
  s.id = parent.id + "-synth";
  s.image_ref = parent.image_ref;
  s.question = std::move(question);
  s.answer = parent.answer;  // never rewritten, byte-for-byte
  s.origin = Origin::synthesized;
  s.parent_id = parent.id;
  return s;
}

struct SynthesisOutcome {
  std::optional<Sample> sample;
  std::vector<CandidateRecord> attempts;
  Verdict outcome = Verdict::exhausted_attempts;  // accepted when sample set
  bool resumed = false;
};

// Attempt loop for one selected seed: synthesize, quality-gate, rollout the
// candidate under the verifier, verify; the first accepted candidate wins.
// Attempts are strictly sequential (attempt i+1 exists only because i
// failed) and keyed by (seed, sample, attempt), so a resumed run replays
// identically from first_attempt onward.
inline SynthesisOutcome synthesize_verified(const Sample& sample, int c_ori,
                                            const PipelineConfig& cfg,
                                            const RoleMap& roles,
                                            std::uint64_t seed,
                                            int first_attempt = 1) {
  validate_pipeline_config(cfg);
  SynthesisOutcome outcome;
  const std::string seed_tag = "s" + std::to_string(seed) + "/" + sample.id;
  for (int attempt = first_attempt; attempt <= cfg.n_attempts; ++attempt) {
    CandidateRecord rec;
    rec.parent_id = sample.id;
    rec.c_ori = c_ori;
    rec.attempt_index = attempt;

    SynthesizedText synth = synthesize_candidate(
        roles.synthesizer_backend(), sample,
        "synth/" + seed_tag + "/" + std::to_string(attempt));
    rec.raw_synth_output = synth.raw;
    if (!synth.question) {
      rec.verdict = Verdict::parse_error;
      outcome.attempts.push_back(std::move(rec));
      continue;
    }
    rec.candidate_question = *synth.question;

    if (cfg.t_quality > 0.0) {
      double score = 0.0;
      bool scored = true;
      try {
        score = assess_quality(roles.judge_backend(), sample,
                               rec.candidate_question,
                               "quality/" + seed_tag + "/" +
                                   std::to_string(attempt));
      } catch (const QualityParseError&) {
        scored = false;
      }
      if (scored) rec.quality_score = score;
      if (!scored || score < cfg.t_quality) {
        rec.verdict = Verdict::rejected_quality;  // rollouts skipped
        outcome.attempts.push_back(std::move(rec));
        continue;
      }
    }

    Sample candidate = make_synthesized_sample(sample, rec.candidate_question);
    std::uint64_t cand_seed =
        mix64(seed ^ fnv1a(sample.id) ^
              static_cast<std::uint64_t>(attempt) * 0x9e3779b97f4a7c15ull);
    RolloutResult rr = pass_count(candidate, roles.verifier_backend(),
                                  cfg.n_rollouts, cand_seed, cfg.match);
    rec.c_cand = rr.pass_count;
    rec.verdict = verify_candidate(c_ori, rr.pass_count, cfg);
    bool accepted = rec.verdict == Verdict::accepted;
    outcome.attempts.push_back(std::move(rec));
    if (accepted) {
      outcome.sample = std::move(candidate);
      outcome.outcome = Verdict::accepted;
      return outcome;
    }
  }
  return outcome;
}

struct PipelineTallies {
  std::size_t selected = 0;
  std::size_t attempts = 0;
  std::size_t accepted = 0;
  std::size_t rejected_quality = 0;
  std::size_t rejected_correctness = 0;
  std::size_t rejected_difficulty = 0;
  std::size_t parse_error = 0;
  std::size_t exhausted_samples = 0;
  std::size_t resumed_samples = 0;
};

struct PipelineRunResult {
  Dataset synthesized;
  std::vector<CandidateRecord> audit;
  std::map<std::string, RolloutResult> rollouts;  // c_ori per sample id
  std::vector<std::string> selected;
  PipelineTallies tallies;
};

// Full pass over a preprocessed seed set: c_ori for every sample (cache
// aware), difficulty-based selection, then synthesize-verify per selected
// sample. Distinct samples run concurrently; results are assembled in
// dataset order so outputs are byte-stable. `prior_audit` resumes an
// interrupted run: samples with an accepted record or a full set of failed
// attempts are settled, others continue from their next attempt index.
inline PipelineRunResult run_pipeline(
    const Dataset& seed_data, const PipelineConfig& cfg, const RoleMap& roles,
    std::uint64_t seed, RolloutCache* cache = nullptr, int jobs = 1,
    const std::vector<CandidateRecord>* prior_audit = nullptr) {
  validate_pipeline_config(cfg);
  validate_dataset(seed_data);

  PipelineRunResult result;
  result.synthesized.name = seed_data.name + "-synth";
  if (seed_data.empty()) return result;

  Backend& target = roles.target_backend();
  std::vector<RolloutResult> originals(seed_data.size());
  parallel_for_ordered<RolloutResult>(
      seed_data.size(), jobs,
      [&](std::size_t i) {
        const Sample& s = seed_data.samples[i];
        if (cache)
          if (const RolloutResult* hit =
                  cache->find(s.id, target.id(), cfg.n_rollouts, seed))
            return *hit;
        return pass_count(s, target, cfg.n_rollouts, seed, cfg.match);
      },
      [&](std::size_t i, RolloutResult&& r) {
        if (cache) cache->put(r);
        originals[i] = std::move(r);
      });
  for (const auto& r : originals) result.rollouts.emplace(r.sample_id, r);

  result.selected = select_seeds(originals, cfg.select);
  result.tallies.selected = result.selected.size();

  std::map<std::string, std::vector<CandidateRecord>> prior;
  if (prior_audit)
    for (const auto& rec : *prior_audit) prior[rec.parent_id].push_back(rec);

  std::map<std::string, std::size_t> index_of;
  for (std::size_t i = 0; i < seed_data.size(); ++i)
    index_of.emplace(seed_data.samples[i].id, i);

  parallel_for_ordered<SynthesisOutcome>(
      result.selected.size(), jobs,
      [&](std::size_t i) {
        const Sample& sample =
            seed_data.samples[index_of.at(result.selected[i])];
        int c_ori = result.rollouts.at(sample.id).pass_count;

        SynthesisOutcome outcome;
        int first_attempt = 1;
        auto it = prior.find(sample.id);
        if (it != prior.end() && !it->second.empty()) {
          outcome.resumed = true;
          outcome.attempts = it->second;
          for (const auto& rec : outcome.attempts) {
            if (rec.verdict == Verdict::accepted) {
              outcome.sample =
                  make_synthesized_sample(sample, rec.candidate_question);
              outcome.outcome = Verdict::accepted;
              return outcome;
            }
          }
          first_attempt =
              static_cast<int>(outcome.attempts.size()) + 1;
          if (first_attempt > cfg.n_attempts) return outcome;
        }
        SynthesisOutcome fresh = synthesize_verified(sample, c_ori, cfg, roles,
                                                     seed, first_attempt);
        bool resumed = outcome.resumed;
        outcome.attempts.insert(outcome.attempts.end(),
                                fresh.attempts.begin(), fresh.attempts.end());
        outcome.sample = std::move(fresh.sample);
        outcome.outcome = fresh.outcome;
        outcome.resumed = resumed;
        return outcome;
      },
      [&](std::size_t i, SynthesisOutcome&& outcome) {
        (void)i;
        if (outcome.resumed) ++result.tallies.resumed_samples;
        for (const auto& rec : outcome.attempts) {
          ++result.tallies.attempts;
          switch (rec.verdict) {
            case Verdict::accepted: ++result.tallies.accepted; break;
            case Verdict::rejected_quality:
              ++result.tallies.rejected_quality;
              break;
            case Verdict::rejected_correctness:
              ++result.tallies.rejected_correctness;
              break;
            case Verdict::rejected_difficulty:
              ++result.tallies.rejected_difficulty;
              break;
            default: ++result.tallies.parse_error; break;
          }
          result.audit.push_back(rec);
        }
        if (outcome.sample)
          result.synthesized.samples.push_back(std::move(*outcome.sample));
        else
          ++result.tallies.exhausted_samples;
      });

  validate_dataset(result.synthesized);
  return result;
}

}  // namespace qforge
