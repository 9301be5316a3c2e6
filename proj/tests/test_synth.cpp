#include <catch2/catch_amalgamated.hpp>

#include "qforge/synth.hpp"
#include "support.hpp"

using namespace qforge;

namespace {

struct MockRig {
  std::unique_ptr<ScriptedMockBackend> backend;
  RoleMap roles;

  explicit MockRig(std::uint64_t seed, MockScript script = {}) {
    backend = std::make_unique<ScriptedMockBackend>("mock", seed, script);
    roles.target = backend.get();
    roles.synthesizer = backend.get();
    roles.judge = backend.get();
  }
};

}  // namespace

TEST_CASE("synthesize_candidate parses the marker") {
  MockScript script;
  script.fixed_text = "New Question: What is the area of the region?";
  ScriptedMockBackend mock("mock", 1, script);
  Sample s = testsupport::make_mock_sample(0, 0.9);
  auto out = synthesize_candidate(mock, s);
  REQUIRE(out.question == "What is the area of the region?");

  script.fixed_text = "no marker in this reply";
  ScriptedMockBackend no_marker("mock", 1, script);
  REQUIRE_FALSE(synthesize_candidate(no_marker, s).question.has_value());

  script.fixed_text = "New Question:  Q2 ";
  ScriptedMockBackend padded("mock", 1, script);
  REQUIRE(synthesize_candidate(padded, s).question == "Q2");

  script.fixed_text = "New Question:   ";
  ScriptedMockBackend empty("mock", 1, script);
  REQUIRE_FALSE(synthesize_candidate(empty, s).question.has_value());
}

TEST_CASE("assess_quality parses and range-checks the score") {
  Sample s = testsupport::make_mock_sample(0, 0.9);

  MockScript script;
  script.quality_reply_override = "Reasonable rewrite.\nSCORE: 0.9";
  ScriptedMockBackend mock("mock", 1, script);
  REQUIRE(assess_quality(mock, s, "candidate") == 0.9);

  script.quality_reply_override = "SCORE: 1.2";
  ScriptedMockBackend out_of_range("mock", 1, script);
  REQUIRE_THROWS_AS(assess_quality(out_of_range, s, "candidate"),
                    QualityParseError);

  script.quality_reply_override = "I refuse to answer.";
  ScriptedMockBackend no_score("mock", 1, script);
  REQUIRE_THROWS_AS(assess_quality(no_score, s, "candidate"),
                    QualityParseError);
}

TEST_CASE("verify_candidate applies the two criteria with precedence") {
  PipelineConfig cfg;
  REQUIRE(verify_candidate(15, 6, cfg) == Verdict::accepted);
  REQUIRE(verify_candidate(15, 3, cfg) == Verdict::rejected_correctness);
  REQUIRE(verify_candidate(15, 14, cfg) == Verdict::rejected_difficulty);
  // both criteria fail: correctness wins
  REQUIRE(verify_candidate(2, 1, cfg) == Verdict::rejected_correctness);
  REQUIRE_THROWS_AS(verify_candidate(15, 17, cfg), ValidationError);
}

TEST_CASE("verifier truth table over the full grid") {
  PipelineConfig cfg;  // T_min = 4, delta_hard = 2, N = 16
  for (int c_ori = 0; c_ori <= 16; ++c_ori) {
    for (int c_cand = 0; c_cand <= 16; ++c_cand) {
      bool expected = c_cand >= 4 && c_cand <= c_ori - 2;
      REQUIRE((verify_candidate(c_ori, c_cand, cfg) == Verdict::accepted) ==
              expected);
    }
  }
}

TEST_CASE("pipeline config invariants are enforced") {
  PipelineConfig cfg;
  cfg.n_attempts = 0;
  REQUIRE_THROWS_AS(validate_pipeline_config(cfg), ConfigError);
  cfg = PipelineConfig{};
  cfg.t_min = 10;
  cfg.delta_hard = 8;  // 10 + 8 > 16
  REQUIRE_THROWS_AS(validate_pipeline_config(cfg), ConfigError);
  cfg = PipelineConfig{};
  cfg.select.n_rollouts = 8;
  REQUIRE_THROWS_AS(validate_pipeline_config(cfg), ConfigError);
  REQUIRE_NOTHROW(validate_pipeline_config(PipelineConfig{}));
}

TEST_CASE("synthesize_verified accepts a p-dropping candidate and keeps the invariant") {
  PipelineConfig cfg;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    MockScript script;
    script.synth_p_target = 0.4;
    MockRig rig(seed, script);
    Sample parent = testsupport::make_mock_sample(0, 0.95);
    int c_ori =
        pass_count(parent, *rig.backend, cfg.n_rollouts, seed).pass_count;
    if (c_ori < cfg.select.min_pass_for_selection) continue;

    auto outcome = synthesize_verified(parent, c_ori, cfg, rig.roles, seed);
    for (const auto& rec : outcome.attempts) {
      REQUIRE(rec.parent_id == parent.id);
      if (rec.verdict == Verdict::accepted) {
        REQUIRE(rec.c_cand.has_value());
        REQUIRE(*rec.c_cand >= cfg.t_min);
        REQUIRE(*rec.c_cand <= rec.c_ori - cfg.delta_hard);
      }
      if (rec.verdict == Verdict::rejected_quality)
        REQUIRE_FALSE(rec.c_cand.has_value());
    }
    if (outcome.sample) {
      REQUIRE(outcome.sample->answer == parent.answer);
      REQUIRE(outcome.sample->origin == Origin::synthesized);
      REQUIRE(outcome.sample->parent_id == parent.id);
      REQUIRE(outcome.attempts.back().verdict == Verdict::accepted);
    }
  }
}

TEST_CASE("unanswerable candidates are rejected for correctness every time") {
  MockScript script;
  script.synth_p_target = 0.0;
  MockRig rig(7, script);
  PipelineConfig cfg;
  Sample parent = testsupport::make_mock_sample(0, 1.0);
  auto outcome = synthesize_verified(parent, 16, cfg, rig.roles, 7);
  REQUIRE_FALSE(outcome.sample.has_value());
  REQUIRE(outcome.outcome == Verdict::exhausted_attempts);
  REQUIRE(outcome.attempts.size() == static_cast<std::size_t>(cfg.n_attempts));
  for (const auto& rec : outcome.attempts)
    REQUIRE(rec.verdict == Verdict::rejected_correctness);
}

TEST_CASE("a too-easy first attempt is retried and accepted on the second") {
  MockScript script;
  script.synth_p_schedule = {1.0, 0.4};  // attempt 1 cannot drop difficulty
  MockRig rig(11, script);
  PipelineConfig cfg;
  Sample parent = testsupport::make_mock_sample(0, 0.95);
  int c_ori = pass_count(parent, *rig.backend, cfg.n_rollouts, 11).pass_count;
  REQUIRE(c_ori >= 12);

  auto outcome = synthesize_verified(parent, c_ori, cfg, rig.roles, 11);
  REQUIRE(outcome.attempts.size() >= 2);
  REQUIRE(outcome.attempts[0].verdict == Verdict::rejected_difficulty);
  REQUIRE(outcome.sample.has_value());
  REQUIRE(outcome.attempts.back().attempt_index == 2);
}

TEST_CASE("marker-less synthesizer output consumes attempts as parse errors") {
  MockScript script;
  script.synth_omit_marker = true;
  MockRig rig(3, script);
  PipelineConfig cfg;
  Sample parent = testsupport::make_mock_sample(0, 1.0);
  auto outcome = synthesize_verified(parent, 16, cfg, rig.roles, 3);
  REQUIRE_FALSE(outcome.sample.has_value());
  REQUIRE(outcome.attempts.size() == static_cast<std::size_t>(cfg.n_attempts));
  for (const auto& rec : outcome.attempts)
    REQUIRE(rec.verdict == Verdict::parse_error);
}

TEST_CASE("low judge scores reject before any rollout is spent") {
  MockScript script;
  script.quality_score = 0.1;
  MockRig rig(5, script);
  PipelineConfig cfg;  // t_quality = 0.5
  Sample parent = testsupport::make_mock_sample(0, 1.0);
  auto outcome = synthesize_verified(parent, 16, cfg, rig.roles, 5);
  REQUIRE_FALSE(outcome.sample.has_value());
  for (const auto& rec : outcome.attempts) {
    REQUIRE(rec.verdict == Verdict::rejected_quality);
    REQUIRE(rec.quality_score == 0.1);
    REQUIRE_FALSE(rec.c_cand.has_value());
  }
}

TEST_CASE("malformed judge replies count as quality rejections") {
  MockScript script;
  script.quality_reply_override = "SCORE: 1.2";
  MockRig rig(5, script);
  PipelineConfig cfg;
  Sample parent = testsupport::make_mock_sample(0, 1.0);
  auto outcome = synthesize_verified(parent, 16, cfg, rig.roles, 5);
  REQUIRE_FALSE(outcome.sample.has_value());
  for (const auto& rec : outcome.attempts) {
    REQUIRE(rec.verdict == Verdict::rejected_quality);
    REQUIRE_FALSE(rec.quality_score.has_value());
  }
}

TEST_CASE("t_quality = 0 disables the judge entirely") {
  MockRig rig(13);
  PipelineConfig cfg;
  cfg.t_quality = 0.0;
  Sample parent = testsupport::make_mock_sample(0, 0.95);
  int c_ori = pass_count(parent, *rig.backend, cfg.n_rollouts, 13).pass_count;
  synthesize_verified(parent, c_ori, cfg, rig.roles, 13);
  REQUIRE(rig.backend->calls_for("quality_judge") == 0);
}

TEST_CASE("run_pipeline on an empty dataset is empty") {
  MockRig rig(1);
  Dataset empty;
  empty.name = "none";
  auto result = run_pipeline(empty, PipelineConfig{}, rig.roles, 1);
  REQUIRE(result.synthesized.empty());
  REQUIRE(result.audit.empty());
  REQUIRE(result.selected.empty());
}

TEST_CASE("run_pipeline keeps the audit ledger consistent") {
  MockRig rig(17);
  PipelineConfig cfg;
  Dataset corpus = testsupport::make_uniform_p_corpus(60, 31);
  auto result = run_pipeline(corpus, cfg, rig.roles, 17, nullptr, 2);

  REQUIRE(result.synthesized.size() <= result.selected.size());
  REQUIRE(result.tallies.attempts == result.audit.size());
  REQUIRE(result.tallies.accepted +
              result.tallies.rejected_quality +
              result.tallies.rejected_correctness +
              result.tallies.rejected_difficulty +
              result.tallies.parse_error ==
          result.tallies.attempts);

  std::map<std::string, int> per_parent;
  std::map<std::string, int> accepted_per_parent;
  for (const auto& rec : result.audit) {
    ++per_parent[rec.parent_id];
    if (rec.verdict == Verdict::accepted) ++accepted_per_parent[rec.parent_id];
    REQUIRE(rec.verdict != Verdict::exhausted_attempts);
  }
  for (const auto& [parent, count] : per_parent)
    REQUIRE(count <= cfg.n_attempts);
  REQUIRE(accepted_per_parent.size() == result.synthesized.size());
  for (const auto& s : result.synthesized.samples) {
    REQUIRE(accepted_per_parent.at(*s.parent_id) == 1);
  }

  // every emitted sample satisfies the guarantee, checked from the audit log
  std::map<std::string, const CandidateRecord*> accepted_rec;
  for (const auto& rec : result.audit)
    if (rec.verdict == Verdict::accepted) accepted_rec[rec.parent_id] = &rec;
  for (const auto& s : result.synthesized.samples) {
    const CandidateRecord* rec = accepted_rec.at(*s.parent_id);
    REQUIRE(*rec->c_cand >= cfg.t_min);
    REQUIRE(*rec->c_cand <= rec->c_ori - cfg.delta_hard);
    REQUIRE(s.question == rec->candidate_question);
  }
}

TEST_CASE("accepted candidates shift difficulty down on the hardening corpus") {
  PipelineConfig cfg;
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    MockScript script;
    script.synth_p_target = 0.4;
    MockRig rig(seed, script);
    Dataset corpus = testsupport::make_fixed_p_corpus(40, 0.95);
    auto result = run_pipeline(corpus, cfg, rig.roles, seed, nullptr, 2);
    REQUIRE_FALSE(result.synthesized.empty());

    std::map<std::string, const CandidateRecord*> accepted;
    for (const auto& rec : result.audit)
      if (rec.verdict == Verdict::accepted) accepted[rec.parent_id] = &rec;
    double parent_mean = 0, cand_mean = 0;
    for (const auto& [parent, rec] : accepted) {
      parent_mean += rec->c_ori;
      cand_mean += *rec->c_cand;
    }
    parent_mean /= static_cast<double>(accepted.size());
    cand_mean /= static_cast<double>(accepted.size());
    REQUIRE(cand_mean < parent_mean);
  }
}

TEST_CASE("run_pipeline resumes from a prior audit without changing outputs") {
  PipelineConfig cfg;
  MockScript script;
  script.synth_p_target = 0.4;

  MockRig full_rig(23, script);
  Dataset corpus = testsupport::make_fixed_p_corpus(30, 0.95);
  auto full = run_pipeline(corpus, cfg, full_rig.roles, 23, nullptr, 2);
  REQUIRE_FALSE(full.audit.empty());

  // Simulate an interrupted run: keep only the records of the first half of
  // the selected samples.
  std::set<std::string> first_half(full.selected.begin(),
                                   full.selected.begin() +
                                       static_cast<long>(full.selected.size() / 2));
  std::vector<CandidateRecord> partial;
  for (const auto& rec : full.audit)
    if (first_half.count(rec.parent_id)) partial.push_back(rec);

  MockRig resume_rig(23, script);
  auto resumed = run_pipeline(corpus, cfg, resume_rig.roles, 23, nullptr, 2,
                              &partial);
  REQUIRE(resumed.tallies.resumed_samples == first_half.size());

  REQUIRE(resumed.audit.size() == full.audit.size());
  for (std::size_t i = 0; i < full.audit.size(); ++i) {
    REQUIRE(resumed.audit[i].parent_id == full.audit[i].parent_id);
    REQUIRE(resumed.audit[i].attempt_index == full.audit[i].attempt_index);
    REQUIRE(resumed.audit[i].verdict == full.audit[i].verdict);
    REQUIRE(resumed.audit[i].candidate_question ==
            full.audit[i].candidate_question);
  }
  REQUIRE(resumed.synthesized.samples == full.synthesized.samples);
}

TEST_CASE("candidate records round-trip through the audit format") {
  CandidateRecord rec;
  rec.parent_id = "p1";
  rec.candidate_question = "harder?";
  rec.quality_score = 0.75;
  rec.c_ori = 15;
  rec.c_cand = 6;
  rec.verdict = Verdict::accepted;
  rec.attempt_index = 2;
  rec.raw_synth_output = "New Question: harder?";
  CandidateRecord back = candidate_record_from_json(to_json(rec));
  REQUIRE(back.parent_id == rec.parent_id);
  REQUIRE(back.quality_score == rec.quality_score);
  REQUIRE(back.c_cand == rec.c_cand);
  REQUIRE(back.verdict == rec.verdict);
  REQUIRE(back.attempt_index == rec.attempt_index);

  CandidateRecord no_counts;
  no_counts.parent_id = "p2";
  no_counts.c_ori = 14;
  no_counts.verdict = Verdict::parse_error;
  no_counts.raw_synth_output = "garbled";
  CandidateRecord back2 = candidate_record_from_json(to_json(no_counts));
  REQUIRE_FALSE(back2.c_cand.has_value());
  REQUIRE_FALSE(back2.quality_score.has_value());
}
