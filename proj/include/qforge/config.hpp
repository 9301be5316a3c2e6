#pragma once

#include <chrono>
#include <ctime>
#include <map>
#include <memory>
#include <string>

#include "qforge/http_backend.hpp"
#include "qforge/mock.hpp"
#include "qforge/rating.hpp"
#include "qforge/synth.hpp"

namespace qforge {

enum class Transport { remote_http, scripted_mock };

struct BackendProfile {
  std::string name;
  Transport transport = Transport::scripted_mock;
  std::set<Role> roles = {Role::target, Role::verifier, Role::synthesizer,
                          Role::judge};
  // remote_http
  HttpBackendConfig http;
  // scripted_mock
  std::uint64_t seed = 0;
  MockScript script;
};

struct AppConfig {
  std::uint64_t seed = 42;
  int jobs = 2;
  PipelineConfig pipeline;
  RatingConfig rating;
  std::map<std::string, BackendProfile> backends;
  std::map<std::string, std::string> role_map;  // role name -> profile name
};

namespace detail {

inline MatchPolicy match_policy_from_json(const json& j) {
  MatchPolicy p;
  p.normalize_whitespace = j.value("normalize_whitespace", p.normalize_whitespace);
  p.case_insensitive = j.value("case_insensitive", p.case_insensitive);
  p.numeric_tolerance = j.value("numeric_tolerance", p.numeric_tolerance);
  p.strip_latex_wrappers = j.value("strip_latex_wrappers", p.strip_latex_wrappers);
  return p;
}

inline json to_json(const MatchPolicy& p) {
  return json{{"normalize_whitespace", p.normalize_whitespace},
              {"case_insensitive", p.case_insensitive},
              {"numeric_tolerance", p.numeric_tolerance},
              {"strip_latex_wrappers", p.strip_latex_wrappers}};
}

inline SelectionConfig selection_from_json(const json& j) {
  SelectionConfig c;
  c.min_pass_for_selection =
      j.value("min_pass_for_selection", c.min_pass_for_selection);
  c.n_rollouts = j.value("n_rollouts", c.n_rollouts);
  return c;
}

inline json to_json(const SelectionConfig& c) {
  return json{{"min_pass_for_selection", c.min_pass_for_selection},
              {"n_rollouts", c.n_rollouts}};
}

inline PipelineConfig pipeline_from_json(const json& j) {
  PipelineConfig c;
  c.t_min = j.value("t_min", c.t_min);
  c.delta_hard = j.value("delta_hard", c.delta_hard);
  c.t_quality = j.value("t_quality", c.t_quality);
  c.n_attempts = j.value("n_attempts", c.n_attempts);
  c.n_rollouts = j.value("n_rollouts", c.n_rollouts);
  if (j.contains("select")) c.select = selection_from_json(j["select"]);
  else c.select.n_rollouts = c.n_rollouts;
  if (j.contains("match")) c.match = match_policy_from_json(j["match"]);
  return c;
}

inline json to_json(const PipelineConfig& c) {
  return json{{"t_min", c.t_min},
              {"delta_hard", c.delta_hard},
              {"t_quality", c.t_quality},
              {"n_attempts", c.n_attempts},
              {"n_rollouts", c.n_rollouts},
              {"select", to_json(c.select)},
              {"match", to_json(c.match)}};
}

inline RatingConfig rating_from_json(const json& j) {
  RatingConfig c;
  c.k_opponents = j.value("k_opponents", c.k_opponents);
  c.elo_scale = j.value("elo_scale", c.elo_scale);
  c.elo_base = j.value("elo_base", c.elo_base);
  c.elo_anchor = j.value("elo_anchor", c.elo_anchor);
  c.l2_lambda = j.value("l2_lambda", c.l2_lambda);
  c.bootstrap_rounds = j.value("bootstrap_rounds", c.bootstrap_rounds);
  c.tier_hard_min = j.value("tier_hard_min", c.tier_hard_min);
  c.tier_easy_max = j.value("tier_easy_max", c.tier_easy_max);
  return c;
}

inline json to_json(const RatingConfig& c) {
  return json{{"k_opponents", c.k_opponents},
              {"elo_scale", c.elo_scale},
              {"elo_base", c.elo_base},
              {"elo_anchor", c.elo_anchor},
              {"l2_lambda", c.l2_lambda},
              {"bootstrap_rounds", c.bootstrap_rounds},
              {"tier_hard_min", c.tier_hard_min},
              {"tier_easy_max", c.tier_easy_max}};
}

inline MockScript mock_script_from_json(const json& j) {
  MockScript s;
  if (j.contains("fixed_text")) s.fixed_text = j["fixed_text"].get<std::string>();
  s.default_p_solve = j.value("default_p_solve", s.default_p_solve);
  s.synth_p_target = j.value("synth_p_target", s.synth_p_target);
  if (j.contains("synth_p_schedule"))
    s.synth_p_schedule = j["synth_p_schedule"].get<std::vector<double>>();
  s.synth_omit_marker = j.value("synth_omit_marker", s.synth_omit_marker);
  s.quality_score = j.value("quality_score", s.quality_score);
  if (j.contains("quality_reply_override"))
    s.quality_reply_override = j["quality_reply_override"].get<std::string>();
  s.tie_prob = j.value("tie_prob", s.tie_prob);
  if (j.contains("judge_reply_override"))
    s.judge_reply_override = j["judge_reply_override"].get<std::string>();
  return s;
}

inline BackendProfile backend_profile_from_json(const std::string& name,
                                                const json& j) {
  BackendProfile p;
  p.name = name;
  std::string transport = j.value("transport", std::string("scripted_mock"));
  if (transport == "remote_http") p.transport = Transport::remote_http;
  else if (transport == "scripted_mock") p.transport = Transport::scripted_mock;
  else throw ConfigError("backend '" + name + "': unknown transport '" +
                         transport + "'");
  if (j.contains("roles")) {
    p.roles.clear();
    for (const auto& r : j["roles"])
      p.roles.insert(role_from_string(r.get<std::string>()));
  }
  p.http.backend_id = name;
  p.http.base_url = j.value("base_url", std::string());
  p.http.path = j.value("path", p.http.path);
  p.http.model = j.value("model", std::string());
  p.http.api_key_env = j.value("api_key_env", std::string());
  p.http.rate_per_sec = j.value("rate_per_sec", p.http.rate_per_sec);
  p.http.burst = j.value("burst", p.http.burst);
  p.http.max_retries = j.value("max_retries", p.http.max_retries);
  p.http.initial_backoff_ms =
      j.value("initial_backoff_ms", p.http.initial_backoff_ms);
  p.http.max_backoff_ms = j.value("max_backoff_ms", p.http.max_backoff_ms);
  p.http.max_in_flight = j.value("max_in_flight", p.http.max_in_flight);
  p.http.timeout_sec = j.value("timeout_sec", p.http.timeout_sec);
  p.seed = j.value("seed", p.seed);
  if (j.contains("mock")) p.script = mock_script_from_json(j["mock"]);
  return p;
}

}  // namespace detail

// Default configuration: a single all-role scripted mock.
inline AppConfig default_config() {
  AppConfig cfg;
  BackendProfile mock;
  mock.name = "mock";
  cfg.backends.emplace("mock", mock);
  for (const char* role : {"target", "verifier", "synthesizer", "judge"})
    cfg.role_map.emplace(role, "mock");
  return cfg;
}

inline AppConfig app_config_from_json(const json& j) {
  AppConfig cfg = default_config();
  cfg.seed = j.value("seed", cfg.seed);
  cfg.jobs = j.value("jobs", cfg.jobs);
  if (j.contains("pipeline"))
    cfg.pipeline = detail::pipeline_from_json(j["pipeline"]);
  if (j.contains("rating")) cfg.rating = detail::rating_from_json(j["rating"]);
  if (j.contains("backends")) {
    cfg.backends.clear();
    for (const auto& [name, profile] : j["backends"].items())
      cfg.backends.emplace(name,
                           detail::backend_profile_from_json(name, profile));
  }
  if (j.contains("roles")) {
    cfg.role_map.clear();
    for (const auto& [role, profile] : j["roles"].items()) {
      role_from_string(role);
      cfg.role_map.emplace(role, profile.get<std::string>());
    }
  }
  return cfg;
}

inline AppConfig load_app_config(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path), nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw ConfigError("config file " + path.string() + " is not a JSON object");
  try {
    return app_config_from_json(j);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + ": " + e.what());
  }
}

// Effective-config snapshot recorded into every run manifest.
inline json config_snapshot(const AppConfig& cfg) {
  json backends = json::object();
  for (const auto& [name, p] : cfg.backends) {
    json roles = json::array();
    for (Role r : p.roles) roles.push_back(std::string(to_string(r)));
    json b{{"transport", p.transport == Transport::remote_http
                             ? "remote_http"
                             : "scripted_mock"},
           {"roles", std::move(roles)}};
    if (p.transport == Transport::remote_http) {
      b["base_url"] = p.http.base_url;
      b["model"] = p.http.model;
      b["rate_per_sec"] = p.http.rate_per_sec;
      b["burst"] = p.http.burst;
      b["max_retries"] = p.http.max_retries;
      b["max_in_flight"] = p.http.max_in_flight;
      if (!p.http.api_key_env.empty()) b["api_key_env"] = p.http.api_key_env;
    } else {
      b["seed"] = p.seed;
    }
    backends[name] = std::move(b);
  }
  return json{{"seed", cfg.seed},
              {"jobs", cfg.jobs},
              {"pipeline", detail::to_json(cfg.pipeline)},
              {"rating", detail::to_json(cfg.rating)},
              {"backends", std::move(backends)},
              {"roles", cfg.role_map}};
}

inline std::unique_ptr<Backend> make_backend(const BackendProfile& profile) {
  if (profile.transport == Transport::remote_http) {
    if (profile.http.base_url.empty())
      throw ConfigError("backend '" + profile.name + "': base_url required");
    return std::make_unique<HttpBackend>(profile.http, profile.roles);
  }
  return std::make_unique<ScriptedMockBackend>(profile.name, profile.seed,
                                               profile.script, profile.roles);
}

inline std::string utc_timestamp() {
  std::time_t now = std::chrono::system_clock::to_time_t(
      std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// Everything needed to rerun a command: effective config, seeds, backends,
// paths, and per-stage outcome counts. With mock backends a rerun from the
// same manifest reproduces outputs byte-for-byte.
struct RunManifest {
  std::string command;
  std::string started_utc;
  std::string finished_utc;
  json config;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> backend_ids;  // role -> backend id
  json inputs = json::object();
  json outputs = json::object();
  json outcome = json::object();

  json to_json() const {
    return json{{"command", command},
                {"started_utc", started_utc},
                {"finished_utc", finished_utc},
                {"config", config},
                {"seed", seed},
                {"backends", backend_ids},
                {"inputs", inputs},
                {"outputs", outputs},
                {"outcome", outcome}};
  }

  void write(const std::filesystem::path& path) const {
    write_text_file(path, to_json().dump(2) + "\n");
  }
};

}  // namespace qforge
