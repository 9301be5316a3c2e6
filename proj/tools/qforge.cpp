// qforge: scale a verifiable-reward training set by hardening its easy
// questions. Subcommands cover the full pipeline: preprocess the corpus,
// measure rollout pass counts, select easy seeds, synthesize and verify
// harder variants, rate item difficulty by pairwise battles, combine
// datasets, and report distribution statistics.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "qforge/config.hpp"
#include "qforge/stats.hpp"
#include "qforge/svg.hpp"

namespace fs = std::filesystem;
using namespace qforge;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string backend_profile;
  std::string out_dir = ".";
  bool resume = false;
};

AppConfig effective_config(const GlobalOptions& g) {
  AppConfig cfg = g.config_path.empty() ? default_config()
                                        : load_app_config(g.config_path);
  if (g.seed) cfg.seed = *g.seed;
  if (g.jobs) cfg.jobs = *g.jobs;
  if (!g.backend_profile.empty()) {
    if (!cfg.backends.count(g.backend_profile))
      throw ConfigError("unknown backend profile '" + g.backend_profile + "'");
    for (auto& [role, profile] : cfg.role_map) profile = g.backend_profile;
  }
  return cfg;
}

struct BackendSet {
  std::map<std::string, std::unique_ptr<Backend>> by_profile;
  RoleMap roles;
  std::map<std::string, std::string> role_ids;
};

BackendSet make_backends(const AppConfig& cfg) {
  BackendSet set;
  for (const auto& [role_name, profile_name] : cfg.role_map) {
    auto profile = cfg.backends.find(profile_name);
    if (profile == cfg.backends.end())
      throw ConfigError("role '" + role_name +
                        "' references unknown backend profile '" +
                        profile_name + "'");
    auto& slot = set.by_profile[profile_name];
    if (!slot) slot = make_backend(profile->second);
    Role role = role_from_string(role_name);
    if (!slot->supports(role))
      throw ConfigError("backend profile '" + profile_name +
                        "' does not serve role '" + role_name + "'");
    switch (role) {
      case Role::target: set.roles.target = slot.get(); break;
      case Role::verifier: set.roles.verifier = slot.get(); break;
      case Role::synthesizer: set.roles.synthesizer = slot.get(); break;
      case Role::judge: set.roles.judge = slot.get(); break;
    }
    set.role_ids[role_name] = slot->id();
  }
  return set;
}

RunManifest start_manifest(const std::string& command, const AppConfig& cfg,
                           const BackendSet& backends) {
  RunManifest m;
  m.command = command;
  m.started_utc = utc_timestamp();
  m.config = config_snapshot(cfg);
  m.seed = cfg.seed;
  m.backend_ids = backends.role_ids;
  return m;
}

void finish_manifest(RunManifest& m, const GlobalOptions& g) {
  m.finished_utc = utc_timestamp();
  fs::create_directories(g.out_dir);
  m.write(fs::path(g.out_dir) / "manifest.json");
}

// Rollouts for every sample, cache-aware, emitted to the cache in dataset
// order so the file is byte-stable and a transport failure preserves the
// completed prefix.
struct RolloutSweep {
  std::size_t cached = 0;
  std::size_t fresh = 0;
  std::vector<RolloutResult> results;
};

RolloutSweep sweep_rollouts(const Dataset& d, Backend& backend, int n,
                            std::uint64_t seed, const MatchPolicy& policy,
                            RolloutCache& cache, int jobs) {
  RolloutSweep sweep;
  sweep.results.resize(d.size());
  parallel_for_ordered<std::pair<RolloutResult, bool>>(
      d.size(), jobs,
      [&](std::size_t i) {
        const Sample& s = d.samples[i];
        if (const RolloutResult* hit = cache.find(s.id, backend.id(), n, seed))
          return std::make_pair(*hit, true);
        return std::make_pair(pass_count(s, backend, n, seed, policy), false);
      },
      [&](std::size_t i, std::pair<RolloutResult, bool>&& r) {
        if (r.second) {
          ++sweep.cached;
        } else {
          ++sweep.fresh;
          cache.put(r.first);
        }
        sweep.results[i] = std::move(r.first);
      });
  return sweep;
}

std::map<std::string, RolloutResult> rollouts_for(const Dataset& d,
                                                  const RolloutCache& cache,
                                                  const std::string& backend_id,
                                                  int n, std::uint64_t seed) {
  std::map<std::string, RolloutResult> out;
  std::vector<std::string> missing;
  for (const auto& s : d.samples) {
    const RolloutResult* hit = cache.find(s.id, backend_id, n, seed);
    if (!hit) {
      missing.push_back(s.id);
      continue;
    }
    out.emplace(s.id, *hit);
  }
  if (!missing.empty()) {
    std::string ids;
    for (const auto& id : missing) {
      if (!ids.empty()) ids += ", ";
      ids += id;
    }
    throw ValidationError("rollout cache has no entry for: " + ids);
  }
  return out;
}

int run_preprocess(const GlobalOptions& g, const std::string& in,
                   const std::string& out, bool keep_yes_no, bool keep_mcq) {
  AppConfig cfg = effective_config(g);
  BackendSet backends;  // none needed
  RunManifest manifest = start_manifest("preprocess", cfg, backends);
  manifest.inputs["dataset"] = in;
  manifest.outputs["dataset"] = out;

  Dataset d = load_dataset(in);
  PreprocessRules rules;
  rules.drop_yes_no = !keep_yes_no;
  rules.mcq_to_freeform = !keep_mcq;
  PreprocessResult result = preprocess(d, rules);
  save_dataset(result.dataset, out);

  std::printf("preprocess: %zu -> %zu samples (%zu yes/no removed, %zu MCQ converted)\n",
              d.size(), result.dataset.size(), result.dropped_yes_no,
              result.converted_mcq);
  manifest.outcome = {{"input_samples", d.size()},
                      {"output_samples", result.dataset.size()},
                      {"dropped_yes_no", result.dropped_yes_no},
                      {"converted_mcq", result.converted_mcq}};
  finish_manifest(manifest, g);
  return 0;
}

int run_rollout(const GlobalOptions& g, const std::string& dataset_path,
                const std::string& cache_path, std::optional<int> n_override) {
  AppConfig cfg = effective_config(g);
  BackendSet backends = make_backends(cfg);
  RunManifest manifest = start_manifest("rollout", cfg, backends);
  manifest.inputs["dataset"] = dataset_path;
  manifest.outputs["cache"] = cache_path;

  Dataset d = load_dataset(dataset_path);
  int n = n_override.value_or(cfg.pipeline.n_rollouts);
  RolloutCache cache(cache_path);
  RolloutSweep sweep;
  try {
    sweep = sweep_rollouts(d, backends.roles.target_backend(), n, cfg.seed,
                           cfg.pipeline.match, cache, cfg.jobs);
  } catch (const TransportError&) {
    manifest.outcome = {{"status", "transport_error"},
                        {"cached_results", cache.size()}};
    finish_manifest(manifest, g);
    throw;
  }

  std::printf("rollout: %zu samples, n=%d (%zu cached, %zu fresh)\n", d.size(),
              n, sweep.cached, sweep.fresh);
  manifest.outcome = {{"status", "ok"},
                      {"samples", d.size()},
                      {"n_rollouts", n},
                      {"cached", sweep.cached},
                      {"fresh", sweep.fresh}};
  finish_manifest(manifest, g);
  return 0;
}

int run_select(const GlobalOptions& g, const std::string& dataset_path,
               const std::string& cache_path, const std::string& out) {
  AppConfig cfg = effective_config(g);
  BackendSet backends = make_backends(cfg);
  RunManifest manifest = start_manifest("select", cfg, backends);
  manifest.inputs = {{"dataset", dataset_path}, {"cache", cache_path}};
  manifest.outputs["selection"] = out;

  Dataset d = load_dataset(dataset_path);
  RolloutCache cache(cache_path);
  auto rollouts = rollouts_for(d, cache, backends.roles.target_backend().id(),
                               cfg.pipeline.n_rollouts, cfg.seed);
  std::vector<RolloutResult> ordered;
  ordered.reserve(d.size());
  for (const auto& s : d.samples) ordered.push_back(rollouts.at(s.id));
  auto selected = select_seeds(ordered, cfg.pipeline.select);
  write_selection_manifest(out, cfg.pipeline.select, selected);

  std::printf("select: %zu of %zu samples at threshold %d\n", selected.size(),
              d.size(), cfg.pipeline.select.min_pass_for_selection);
  manifest.outcome = {{"selected", selected.size()}, {"total", d.size()}};
  finish_manifest(manifest, g);
  return 0;
}

int run_synth(const GlobalOptions& g, const std::string& dataset_path,
              const std::string& cache_path, const std::string& out,
              const std::string& audit_path) {
  AppConfig cfg = effective_config(g);
  BackendSet backends = make_backends(cfg);
  RunManifest manifest = start_manifest("synth", cfg, backends);
  manifest.inputs = {{"dataset", dataset_path}, {"cache", cache_path}};
  manifest.outputs = {{"dataset", out}, {"audit", audit_path}};

  Dataset d = load_dataset(dataset_path);
  RolloutCache cache(cache_path);
  std::vector<CandidateRecord> prior;
  if (g.resume && fs::exists(audit_path)) prior = load_audit_log(audit_path);

  PipelineRunResult result =
      run_pipeline(d, cfg.pipeline, backends.roles, cfg.seed, &cache, cfg.jobs,
                   prior.empty() ? nullptr : &prior);
  save_dataset(result.synthesized, out);
  {
    JsonlWriter audit(audit_path);
    for (const auto& rec : result.audit) audit.write(to_json(rec));
  }

  const PipelineTallies& t = result.tallies;
  std::printf("synth: %zu selected of %zu; %zu attempts -> %zu accepted, "
              "%zu rejected_quality, %zu rejected_correctness, "
              "%zu rejected_difficulty, %zu parse_error; %zu exhausted\n",
              t.selected, d.size(), t.attempts, t.accepted, t.rejected_quality,
              t.rejected_correctness, t.rejected_difficulty, t.parse_error,
              t.exhausted_samples);
  if (t.resumed_samples)
    std::printf("synth: resumed %zu samples from existing audit log\n",
                t.resumed_samples);
  manifest.outcome = {{"selected", t.selected},
                      {"attempts", t.attempts},
                      {"accepted", t.accepted},
                      {"rejected_quality", t.rejected_quality},
                      {"rejected_correctness", t.rejected_correctness},
                      {"rejected_difficulty", t.rejected_difficulty},
                      {"parse_error", t.parse_error},
                      {"exhausted", t.exhausted_samples},
                      {"resumed", t.resumed_samples},
                      {"synthesized", result.synthesized.size()}};
  finish_manifest(manifest, g);
  return 0;
}

int run_combine(const GlobalOptions& g, const std::string& seed_path,
                const std::string& synth_path, const std::string& strategy,
                const std::string& out) {
  AppConfig cfg = effective_config(g);
  BackendSet backends;
  RunManifest manifest = start_manifest("combine", cfg, backends);
  manifest.inputs = {{"seed", seed_path}, {"synth", synth_path}};
  manifest.outputs["dataset"] = out;

  Dataset seed_data = load_dataset(seed_path);
  Dataset synth_data = load_dataset(synth_path);
  Dataset combined;
  if (strategy == "augment")
    combined = combine_augment(seed_data, synth_data);
  else if (strategy == "replace")
    combined = combine_replace(seed_data, synth_data);
  else
    throw ConfigError("unknown strategy '" + strategy +
                      "' (expected augment|replace)");
  save_dataset(combined, out);

  std::printf("combine(%s): %zu seed + %zu synth -> %zu samples\n",
              strategy.c_str(), seed_data.size(), synth_data.size(),
              combined.size());
  manifest.outcome = {{"strategy", strategy},
                      {"seed_samples", seed_data.size()},
                      {"synth_samples", synth_data.size()},
                      {"combined_samples", combined.size()}};
  finish_manifest(manifest, g);
  return 0;
}

int run_rate(const GlobalOptions& g, const std::string& items_path,
             const std::string& battles_path, const std::string& ratings_path,
             std::optional<int> k_override) {
  AppConfig cfg = effective_config(g);
  if (k_override) cfg.rating.k_opponents = *k_override;
  validate_rating_config(cfg.rating);
  BackendSet backends = make_backends(cfg);
  RunManifest manifest = start_manifest("rate", cfg, backends);
  manifest.inputs["items"] = items_path;
  manifest.outputs = {{"battles", battles_path}, {"ratings", ratings_path}};

  auto items = load_rating_items(items_path);
  auto reps = group_representatives(items);
  std::vector<std::string> rep_ids;
  rep_ids.reserve(reps.size());
  std::map<std::string, RatingItem> content;
  for (const auto& item : reps) {
    rep_ids.push_back(item.id);
    content.emplace(item.id, item);
  }

  auto schedule = schedule_battles(rep_ids, cfg.rating.k_opponents, cfg.seed);
  Backend& judge = backends.roles.judge_backend();
  std::vector<BattleRecord> battles;
  std::size_t dropped = 0;
  {
    JsonlWriter log(battles_path);
    parallel_for_ordered<std::optional<BattleRecord>>(
        schedule.size(), cfg.jobs,
        [&](std::size_t i) {
          return judge_battle(judge, schedule[i], content, cfg.seed);
        },
        [&](std::size_t i, std::optional<BattleRecord>&& record) {
          (void)i;
          if (!record) {
            ++dropped;
            return;
          }
          log.write(to_json(*record));
          battles.push_back(std::move(*record));
        });
  }

  auto rep_ratings =
      bootstrap_ratings(battles, rep_ids, cfg.rating, cfg.seed, cfg.jobs);
  auto ratings = expand_group_ratings(rep_ratings, items);
  std::vector<std::string> order;
  order.reserve(items.size());
  for (const auto& item : items) order.push_back(item.id);
  write_ratings_csv(ratings, order, ratings_path);

  std::map<Tier, std::size_t> tiers;
  for (const auto& id : order) ++tiers[ratings.at(id).tier];
  std::printf("rate: %zu items (%zu rated directly), %zu battles judged, "
              "%zu dropped; tiers: easy=%zu medium=%zu hard=%zu\n",
              items.size(), rep_ids.size(), battles.size(), dropped,
              tiers[Tier::easy], tiers[Tier::medium], tiers[Tier::hard]);
  manifest.outcome = {{"items", items.size()},
                      {"representatives", rep_ids.size()},
                      {"battles", battles.size()},
                      {"dropped", dropped},
                      {"easy", tiers[Tier::easy]},
                      {"medium", tiers[Tier::medium]},
                      {"hard", tiers[Tier::hard]}};
  finish_manifest(manifest, g);
  return 0;
}

int run_stats(const GlobalOptions& g, const std::string& dataset_path,
              const std::string& cache_path, const std::string& dataset2_path,
              const std::string& cache2_path) {
  AppConfig cfg = effective_config(g);
  BackendSet backends = make_backends(cfg);
  RunManifest manifest = start_manifest("stats", cfg, backends);
  manifest.inputs = {{"dataset", dataset_path}, {"cache", cache_path}};

  const std::string backend_id = backends.roles.target_backend().id();
  auto report_for = [&](const std::string& ds_path,
                        const std::string& ca_path) {
    Dataset d = load_dataset(ds_path);
    RolloutCache cache(ca_path);
    auto rollouts =
        rollouts_for(d, cache, backend_id, cfg.pipeline.n_rollouts, cfg.seed);
    StatsReport report = compute_stats(d, rollouts);
    return std::make_pair(std::move(d), std::move(report));
  };

  fs::create_directories(g.out_dir);
  auto [d1, r1] = report_for(dataset_path, cache_path);
  fs::path csv1 = fs::path(g.out_dir) / ("stats_" + d1.name + ".csv");
  write_stats_csv(r1, csv1);
  std::printf("stats[%s]: mean_pass=%.4f mean_reasoning_steps=%.4f over %zu samples\n",
              d1.name.c_str(), r1.mean_pass, r1.mean_reasoning_steps,
              r1.sample_count);
  manifest.outputs["csv"] = csv1.string();
  manifest.outcome = {{"mean_pass", r1.mean_pass},
                      {"mean_reasoning_steps", r1.mean_reasoning_steps},
                      {"samples", r1.sample_count}};

  std::vector<HistogramSeries> series{{d1.name, "#4878d0", r1.histogram}};
  if (!dataset2_path.empty()) {
    if (cache2_path.empty())
      throw ConfigError("--cache2 is required with --dataset2");
    auto [d2, r2] = report_for(dataset2_path, cache2_path);
    fs::path csv2 = fs::path(g.out_dir) / ("stats_" + d2.name + ".csv");
    write_stats_csv(r2, csv2);
    std::printf("stats[%s]: mean_pass=%.4f mean_reasoning_steps=%.4f over %zu samples\n",
                d2.name.c_str(), r2.mean_pass, r2.mean_reasoning_steps,
                r2.sample_count);
    series.push_back({d2.name, "#ee854a", r2.histogram});
    manifest.inputs["dataset2"] = dataset2_path;
    manifest.inputs["cache2"] = cache2_path;
    manifest.outputs["csv2"] = csv2.string();
    manifest.outcome["mean_pass_2"] = r2.mean_pass;
  }
  fs::path svg = fs::path(g.out_dir) / "pass_histogram.svg";
  write_histogram_svg(series, svg, "Pass count distribution");
  manifest.outputs["svg"] = svg.string();
  finish_manifest(manifest, g);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Verifiable-reward dataset hardening and difficulty rating"};
  app.require_subcommand(1);
  app.fallthrough(true);

  GlobalOptions g;
  std::uint64_t seed_value = 0;
  int jobs_value = 0;
  app.add_option("--config", g.config_path, "Config file (JSON)");
  auto* seed_opt =
      app.add_option("--seed", seed_value, "Override the config RNG seed");
  auto* jobs_opt =
      app.add_option("--jobs", jobs_value, "Worker threads for rollouts");
  app.add_option("--backend-profile", g.backend_profile,
                 "Backend profile to use for every role");
  app.add_option("--out-dir", g.out_dir, "Directory for manifest and reports");
  app.add_flag("--resume", g.resume, "Resume from existing outputs");

  std::string in_path, out_path, cache_path, audit_path, dataset2, cache2;
  std::string seed_data, synth_data, strategy, items_path, battles_path;
  bool keep_yes_no = false, keep_mcq = false;
  std::optional<int> n_override, k_override;
  int n_value = 0, k_value = 0;

  auto* cmd_preprocess = app.add_subcommand(
      "preprocess", "Convert MCQ to free-form and drop Yes/No answers");
  cmd_preprocess->add_option("--in", in_path, "Input dataset")->required();
  cmd_preprocess->add_option("--out", out_path, "Output dataset")->required();
  cmd_preprocess->add_flag("--keep-yes-no", keep_yes_no,
                           "Keep Yes/No answer samples");
  cmd_preprocess->add_flag("--keep-mcq", keep_mcq,
                           "Keep multiple-choice samples as-is");

  auto* cmd_rollout = app.add_subcommand(
      "rollout", "Measure Monte Carlo pass counts into a cache");
  cmd_rollout->add_option("--dataset", in_path, "Dataset to roll out")
      ->required();
  cmd_rollout->add_option("--cache", cache_path, "Rollout cache file")
      ->required();
  auto* n_opt = cmd_rollout->add_option("--n", n_value, "Rollouts per sample");

  auto* cmd_select = app.add_subcommand(
      "select", "Select easy seeds from cached pass counts");
  cmd_select->add_option("--dataset", in_path, "Dataset")->required();
  cmd_select->add_option("--cache", cache_path, "Rollout cache")->required();
  cmd_select->add_option("--out", out_path, "Selection manifest")->required();

  auto* cmd_synth = app.add_subcommand(
      "synth", "Synthesize and verify harder variants of selected seeds");
  cmd_synth->add_option("--dataset", in_path, "Seed dataset")->required();
  cmd_synth->add_option("--cache", cache_path, "Rollout cache")->required();
  cmd_synth->add_option("--out", out_path, "Synthesized dataset")->required();
  cmd_synth->add_option("--audit", audit_path, "Audit log")->required();

  auto* cmd_combine =
      app.add_subcommand("combine", "Combine seed and synthesized datasets");
  cmd_combine->add_option("--seed-data", seed_data, "Seed dataset")->required();
  cmd_combine->add_option("--synth-data", synth_data, "Synthesized dataset")
      ->required();
  cmd_combine->add_option("--strategy", strategy, "augment | replace")
      ->required();
  cmd_combine->add_option("--out", out_path, "Combined dataset")->required();

  auto* cmd_rate = app.add_subcommand(
      "rate", "Rate item difficulty via pairwise battles and a rating fit");
  cmd_rate->add_option("--items", items_path, "Items file (JSONL)")->required();
  cmd_rate->add_option("--battles", battles_path, "Battle log output")
      ->required();
  cmd_rate->add_option("--out", out_path, "Ratings CSV output")->required();
  auto* k_opt = cmd_rate->add_option("--k", k_value, "Opponents per item");

  auto* cmd_stats =
      app.add_subcommand("stats", "Pass-count statistics and histogram plot");
  cmd_stats->add_option("--dataset", in_path, "Dataset")->required();
  cmd_stats->add_option("--cache", cache_path, "Rollout cache")->required();
  cmd_stats->add_option("--dataset2", dataset2, "Second dataset to compare");
  cmd_stats->add_option("--cache2", cache2, "Second rollout cache");

  CLI11_PARSE(app, argc, argv);

  if (seed_opt->count()) g.seed = seed_value;
  if (jobs_opt->count()) g.jobs = jobs_value;
  if (n_opt->count()) n_override = n_value;
  if (k_opt->count()) k_override = k_value;

  try {
    if (cmd_preprocess->parsed())
      return run_preprocess(g, in_path, out_path, keep_yes_no, keep_mcq);
    if (cmd_rollout->parsed()) return run_rollout(g, in_path, cache_path, n_override);
    if (cmd_select->parsed()) return run_select(g, in_path, cache_path, out_path);
    if (cmd_synth->parsed())
      return run_synth(g, in_path, cache_path, out_path, audit_path);
    if (cmd_combine->parsed())
      return run_combine(g, seed_data, synth_data, strategy, out_path);
    if (cmd_rate->parsed())
      return run_rate(g, items_path, battles_path, out_path, k_override);
    if (cmd_stats->parsed())
      return run_stats(g, in_path, cache_path, dataset2, cache2);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const TransportError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
