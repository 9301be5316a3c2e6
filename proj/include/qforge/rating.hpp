#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "qforge/gateway.hpp"
#include "qforge/jsonl.hpp"
#include "qforge/pool.hpp"
#include "qforge/rng.hpp"

namespace qforge {

enum class BattleOutcome { a_wins, b_wins, tie };
enum class Presented { a, b };
enum class Tier { easy, medium, hard };

inline std::string_view to_string(BattleOutcome o) {
  switch (o) {
    case BattleOutcome::a_wins: return "a_wins";
    case BattleOutcome::b_wins: return "b_wins";
    case BattleOutcome::tie: return "tie";
  }
  return "tie";
}

inline BattleOutcome battle_outcome_from_string(std::string_view s,
                                                std::size_t line = 0) {
  if (s == "a_wins") return BattleOutcome::a_wins;
  if (s == "b_wins") return BattleOutcome::b_wins;
  if (s == "tie") return BattleOutcome::tie;
  throw ParseError("line " + std::to_string(line) + ": unknown outcome '" +
                       std::string(s) + "'",
                   line);
}

inline std::string_view to_string(Tier t) {
  switch (t) {
    case Tier::easy: return "easy";
    case Tier::medium: return "medium";
    case Tier::hard: return "hard";
  }
  return "medium";
}

// One pairwise difficulty judgment. The judge sees the two problems in
// randomized order; `presented_first` records which item was shown first so
// a "WINNER: FIRST" verdict can be decoded back to item ids.
struct BattleRecord {
  std::string item_a;
  std::string item_b;
  BattleOutcome outcome = BattleOutcome::tie;
  Presented presented_first = Presented::a;
  std::string judge_raw;
};

inline json to_json(const BattleRecord& b) {
  return json{{"item_a", b.item_a},
              {"item_b", b.item_b},
              {"outcome", std::string(to_string(b.outcome))},
              {"presented_first", b.presented_first == Presented::a ? "a" : "b"},
              {"judge_raw", b.judge_raw}};
}

inline BattleRecord battle_record_from_json(const json& j,
                                            std::size_t line = 0) {
  BattleRecord b;
  b.item_a = require_field(j, "item_a", line).get<std::string>();
  b.item_b = require_field(j, "item_b", line).get<std::string>();
  b.outcome = battle_outcome_from_string(
      require_field(j, "outcome", line).get<std::string>(), line);
  std::string first = j.value("presented_first", std::string("a"));
  b.presented_first = first == "b" ? Presented::b : Presented::a;
  b.judge_raw = j.value("judge_raw", std::string());
  if (b.item_a == b.item_b)
    throw ValidationError("battle pairs item '" + b.item_a + "' with itself");
  return b;
}

struct RatingConfig {
  int k_opponents = 128;
  double elo_scale = 400.0;   // S
  double elo_base = 10.0;     // B; 400-point gap = 10:1 odds
  double elo_anchor = 1000.0; // R0
  double l2_lambda = 1e-4;
  int bootstrap_rounds = 100;
  double tier_hard_min = 1050.0;
  double tier_easy_max = 950.0;
};

inline void validate_rating_config(const RatingConfig& cfg) {
  if (cfg.k_opponents < 1) throw ConfigError("rating: k_opponents must be >= 1");
  if (cfg.elo_scale <= 0.0) throw ConfigError("rating: elo_scale must be > 0");
  if (cfg.elo_base <= 1.0) throw ConfigError("rating: elo_base must be > 1");
  if (cfg.l2_lambda <= 0.0) throw ConfigError("rating: l2_lambda must be > 0");
  if (cfg.bootstrap_rounds < 1)
    throw ConfigError("rating: bootstrap_rounds must be >= 1");
  if (cfg.tier_easy_max >= cfg.tier_hard_min)
    throw ConfigError("rating: tier_easy_max must be below tier_hard_min");
}

struct RatingResult {
  std::string item_id;
  double theta = 0.0;
  double elo_median = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  Tier tier = Tier::medium;
};

// Content shown to the judge; rating_group lets structurally related items
// (restatements/variants of one problem) share a single rated representative.
struct RatingItem {
  std::string id;
  std::string question;
  std::string image_ref;
  std::optional<std::string> rating_group;
};

struct ScheduledBattle {
  std::string item_a;
  std::string item_b;
  Presented presented_first = Presented::a;
};

// Each item anchors exactly k battles against distinct opponents drawn
// without replacement; presentation order is uniform per battle. Fully
// deterministic in (items order, seed).
inline std::vector<ScheduledBattle> schedule_battles(
    const std::vector<std::string>& items, int k, std::uint64_t seed) {
  const std::size_t n = items.size();
  if (k < 1 || static_cast<std::size_t>(k) + 1 > n)
    throw ConfigError("schedule_battles: k=" + std::to_string(k) +
                      " needs at least k+1 items, got " + std::to_string(n));
  std::vector<ScheduledBattle> battles;
  battles.reserve(n * static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = keyed_rng(seed, "schedule/" + items[i]);
    std::vector<std::uint32_t> pool;
    pool.reserve(n - 1);
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) pool.push_back(static_cast<std::uint32_t>(j));
    for (int t = 0; t < k; ++t) {
      std::size_t pick =
          static_cast<std::size_t>(t) +
          static_cast<std::size_t>(rng.below(pool.size() - t));
      std::swap(pool[static_cast<std::size_t>(t)], pool[pick]);
      ScheduledBattle b;
      b.item_a = items[i];
      b.item_b = items[pool[static_cast<std::size_t>(t)]];
      b.presented_first = rng.next_unit() < 0.5 ? Presented::a : Presented::b;
      battles.push_back(std::move(b));
    }
  }
  return battles;
}

namespace detail {

// Trailing winner token: text after the last "WINNER:" marker.
inline std::optional<BattleOutcome> parse_winner(std::string_view reply,
                                                 Presented presented_first) {
  static constexpr std::string_view kMarker = "WINNER:";
  std::size_t pos = reply.rfind(kMarker);
  if (pos == std::string_view::npos) return std::nullopt;
  std::string_view rest = reply.substr(pos + kMarker.size());
  std::size_t b = 0;
  while (b < rest.size() &&
         (std::isspace(static_cast<unsigned char>(rest[b])) || rest[b] == '"' ||
          rest[b] == '\''))
    ++b;
  std::size_t e = b;
  while (e < rest.size() && rest[e] >= 'A' && rest[e] <= 'Z') ++e;
  std::string_view token = rest.substr(b, e - b);
  if (token == "TIE") return BattleOutcome::tie;
  if (token == "FIRST")
    return presented_first == Presented::a ? BattleOutcome::a_wins
                                           : BattleOutcome::b_wins;
  if (token == "SECOND")
    return presented_first == Presented::a ? BattleOutcome::b_wins
                                           : BattleOutcome::a_wins;
  return std::nullopt;
}

}  // namespace detail

// Runs one scheduled battle through the judge. Replies with no parseable
// winner token are regenerated up to parse_retries times, then the battle is
// dropped (nullopt): a parse failure carries no difficulty signal, so it is
// excluded from the fit rather than counted as a tie.
inline std::optional<BattleRecord> judge_battle(
    Backend& judge, const ScheduledBattle& battle,
    const std::map<std::string, RatingItem>& content, std::uint64_t seed,
    int parse_retries = 3) {
  if (!judge.supports(Role::judge))
    throw ConfigError("backend '" + judge.id() +
                      "' does not serve the judge role");
  auto find_item = [&](const std::string& id) -> const RatingItem& {
    auto it = content.find(id);
    if (it == content.end())
      throw ValidationError("battle references unknown item '" + id + "'");
    return it->second;
  };
  const RatingItem& first = find_item(
      battle.presented_first == Presented::a ? battle.item_a : battle.item_b);
  const RatingItem& second = find_item(
      battle.presented_first == Presented::a ? battle.item_b : battle.item_a);

  std::vector<std::string> refs;
  if (!first.image_ref.empty()) refs.push_back(first.image_ref);
  if (!second.image_ref.empty()) refs.push_back(second.image_ref);

  for (int retry = 0; retry < parse_retries; ++retry) {
    Prompt prompt = render_prompt(
        "difficulty_judge",
        {{"problem_1", first.question}, {"problem_2", second.question}}, refs);
    prompt.call_key = "battle/s" + std::to_string(seed) + "/" + battle.item_a +
                      "/" + battle.item_b + "/" + std::to_string(retry);
    Completion completion = judge.generate(prompt);
    if (auto outcome =
            detail::parse_winner(completion.text, battle.presented_first)) {
      BattleRecord rec;
      rec.item_a = battle.item_a;
      rec.item_b = battle.item_b;
      rec.outcome = *outcome;
      rec.presented_first = battle.presented_first;
      rec.judge_raw = completion.text;
      return rec;
    }
  }
  return std::nullopt;
}

// P(i beats j) = sigma(theta_i - theta_j). The branch keeps the exp argument
// non-positive (stable out to |diff| ~ 700) and makes
// bt_win_prob(x,y) + bt_win_prob(y,x) == 1 hold exactly in floating point.
inline double bt_win_prob(double theta_i, double theta_j) {
  if (theta_i < theta_j) return 1.0 - bt_win_prob(theta_j, theta_i);
  return 1.0 / (1.0 + std::exp(theta_j - theta_i));
}

inline double theta_to_elo(double theta, const RatingConfig& cfg) {
  return cfg.elo_scale / std::log(cfg.elo_base) * theta + cfg.elo_anchor;
}

inline Tier categorize(double elo, const RatingConfig& cfg) {
  if (elo >= cfg.tier_hard_min) return Tier::hard;
  if (elo <= cfg.tier_easy_max) return Tier::easy;
  return Tier::medium;
}

namespace detail {

inline double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

struct WeightedWin {
  int winner = 0;
  int loser = 0;
  double weight = 1.0;
};

// Ties contribute half a win to each side.
inline std::vector<WeightedWin> weighted_wins(
    const std::vector<BattleRecord>& battles,
    const std::map<std::string, int>& index) {
  std::vector<WeightedWin> wins;
  wins.reserve(battles.size() * 2);
  for (const auto& b : battles) {
    auto ia = index.find(b.item_a);
    auto ib = index.find(b.item_b);
    if (ia == index.end() || ib == index.end())
      throw ValidationError("battle references item outside the rating set ('" +
                            b.item_a + "' vs '" + b.item_b + "')");
    switch (b.outcome) {
      case BattleOutcome::a_wins:
        wins.push_back({ia->second, ib->second, 1.0});
        break;
      case BattleOutcome::b_wins:
        wins.push_back({ib->second, ia->second, 1.0});
        break;
      case BattleOutcome::tie:
        wins.push_back({ia->second, ib->second, 0.5});
        wins.push_back({ib->second, ia->second, 0.5});
        break;
    }
  }
  return wins;
}

inline double penalized_log_likelihood(const std::vector<WeightedWin>& wins,
                                       const Eigen::VectorXd& theta,
                                       double lambda) {
  double ll = 0.0;
  for (const auto& w : wins)
    ll += w.weight * log_sigmoid(theta[w.winner] - theta[w.loser]);
  return ll - lambda * theta.squaredNorm();
}

// Damped Newton ascent on the L2-penalized log-likelihood. Strictly concave
// for lambda > 0, so the maximizer is unique even on disconnected graphs;
// the public fit still checks connectivity because an unpenalized-identified
// rating is what callers are promised. Returns nullopt when the gradient
// max-norm fails to reach 1e-8 within 200 iterations.
inline std::optional<Eigen::VectorXd> fit_bt_core(
    const std::vector<WeightedWin>& wins, int n_items, double lambda) {
  constexpr int kMaxIterations = 200;
  constexpr double kGradTolerance = 1e-8;

  Eigen::VectorXd theta = Eigen::VectorXd::Zero(n_items);
  double objective = penalized_log_likelihood(wins, theta, lambda);
  for (int iter = 0; iter < kMaxIterations; ++iter) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_items);
    Eigen::MatrixXd hess =
        Eigen::MatrixXd::Identity(n_items, n_items) * (2.0 * lambda);
    for (const auto& w : wins) {
      double p = bt_win_prob(theta[w.winner], theta[w.loser]);
      double g = w.weight * (1.0 - p);
      grad[w.winner] += g;
      grad[w.loser] -= g;
      double h = w.weight * p * (1.0 - p);
      hess(w.winner, w.winner) += h;
      hess(w.loser, w.loser) += h;
      hess(w.winner, w.loser) -= h;
      hess(w.loser, w.winner) -= h;
    }
    grad -= 2.0 * lambda * theta;
    if (grad.lpNorm<Eigen::Infinity>() < kGradTolerance) return theta;

    Eigen::VectorXd direction = hess.ldlt().solve(grad);
    double step = 1.0;
    for (int halving = 0; halving < 40; ++halving) {
      Eigen::VectorXd trial = theta + step * direction;
      double trial_objective = penalized_log_likelihood(wins, trial, lambda);
      if (trial_objective > objective ||
          (halving == 39 && trial_objective == objective)) {
        theta = std::move(trial);
        objective = trial_objective;
        break;
      }
      step *= 0.5;
    }
  }
  // Accept a solution that stalled at numerical precision.
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_items);
  for (const auto& w : wins) {
    double p = bt_win_prob(theta[w.winner], theta[w.loser]);
    double g = w.weight * (1.0 - p);
    grad[w.winner] += g;
    grad[w.loser] -= g;
  }
  grad -= 2.0 * lambda * theta;
  if (grad.lpNorm<Eigen::Infinity>() < 1e-6) return theta;
  return std::nullopt;
}

// Connected components of the undirected comparison graph.
inline std::vector<std::vector<std::string>> comparison_components(
    const std::vector<BattleRecord>& battles,
    const std::vector<std::string>& items,
    const std::map<std::string, int>& index) {
  std::vector<int> parent(items.size());
  for (std::size_t i = 0; i < items.size(); ++i)
    parent[i] = static_cast<int>(i);
  std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& b : battles) {
    int ra = find(index.at(b.item_a));
    int rb = find(index.at(b.item_b));
    if (ra != rb) parent[ra] = rb;
  }
  std::map<int, std::vector<std::string>> groups;
  for (std::size_t i = 0; i < items.size(); ++i)
    groups[find(static_cast<int>(i))].push_back(items[i]);
  std::vector<std::vector<std::string>> components;
  for (auto& [root, members] : groups) components.push_back(std::move(members));
  return components;
}

}  // namespace detail

// Maximum of the L2-penalized Bradley-Terry log-likelihood
//   sum log sigma(+/-(theta_a - theta_b)) - lambda * ||theta||^2.
// The unpenalized likelihood is translation invariant; the penalty pins the
// zero-centered representative. Requires a connected comparison graph.
inline std::map<std::string, double> fit_bt(
    const std::vector<BattleRecord>& battles,
    const std::vector<std::string>& items, double lambda) {
  if (lambda <= 0.0) throw ConfigError("fit_bt: lambda must be > 0");
  if (items.empty()) throw ValidationError("fit_bt: no items");
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!index.emplace(items[i], static_cast<int>(i)).second)
      throw ValidationError("fit_bt: duplicate item '" + items[i] + "'");
  }
  auto components = detail::comparison_components(battles, items, index);
  if (components.size() > 1) {
    std::string msg = "fit_bt: comparison graph is disconnected: ";
    for (std::size_t c = 0; c < components.size(); ++c) {
      if (c > 0) msg += " | ";
      msg += "{";
      for (std::size_t i = 0; i < components[c].size(); ++i) {
        if (i > 0) msg += ", ";
        msg += components[c][i];
      }
      msg += "}";
    }
    throw ValidationError(msg);
  }

  auto wins = detail::weighted_wins(battles, index);
  auto theta = detail::fit_bt_core(wins, static_cast<int>(items.size()), lambda);
  if (!theta) throw NumericError("fit_bt: Newton iteration did not converge");
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    out.emplace(items[i], (*theta)[static_cast<Eigen::Index>(i)]);
  return out;
}

namespace detail {

// Interpolated percentile over a sorted vector, q in [0, 100].
inline double percentile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) return 0.0;
  if (sorted.size() == 1) return sorted.front();
  double rank = q / 100.0 * static_cast<double>(sorted.size() - 1);
  std::size_t lo = static_cast<std::size_t>(rank);
  if (lo + 1 >= sorted.size()) return sorted.back();
  double frac = rank - static_cast<double>(lo);
  return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

}  // namespace detail

// Bootstrap over battle records: each round resamples |battles| records with
// replacement, refits, and converts to Elo. An item absent from a round's
// resample (or a round whose fit fails) contributes no value and is imputed
// with the minimum rating observed anywhere before quantiles are taken. The
// per-round refit keeps the L2 penalty, so resampled graphs need not stay
// connected. Rounds run in parallel with seeds derived from (seed, round).
inline std::map<std::string, RatingResult> bootstrap_ratings(
    const std::vector<BattleRecord>& battles,
    const std::vector<std::string>& items, const RatingConfig& cfg,
    std::uint64_t seed, int jobs = 1) {
  validate_rating_config(cfg);
  std::map<std::string, double> full_fit = fit_bt(battles, items, cfg.l2_lambda);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  const std::size_t rounds = static_cast<std::size_t>(cfg.bootstrap_rounds);
  std::vector<std::vector<double>> elo_by_round(
      rounds, std::vector<double>(items.size(), nan));

  std::map<std::string, int> index;
  for (std::size_t i = 0; i < items.size(); ++i)
    index.emplace(items[i], static_cast<int>(i));

  parallel_for_ordered<std::vector<double>>(
      rounds, jobs,
      [&](std::size_t round) {
        Rng rng = keyed_rng(seed, "bootstrap", round);
        std::vector<BattleRecord> resampled;
        resampled.reserve(battles.size());
        for (std::size_t i = 0; i < battles.size(); ++i)
          resampled.push_back(battles[rng.below(battles.size())]);

        // Items present in this round's resample, in global order.
        std::set<int> present_set;
        for (const auto& b : resampled) {
          present_set.insert(index.at(b.item_a));
          present_set.insert(index.at(b.item_b));
        }
        std::vector<double> elo(items.size(), nan);
        if (present_set.empty()) return elo;
        std::map<std::string, int> local;
        std::vector<int> present(present_set.begin(), present_set.end());
        for (std::size_t i = 0; i < present.size(); ++i)
          local.emplace(items[static_cast<std::size_t>(present[i])],
                        static_cast<int>(i));
        auto wins = detail::weighted_wins(resampled, local);
        auto theta = detail::fit_bt_core(wins, static_cast<int>(present.size()),
                                         cfg.l2_lambda);
        if (!theta) return elo;  // failed round: no values
        for (std::size_t i = 0; i < present.size(); ++i)
          elo[static_cast<std::size_t>(present[i])] =
              theta_to_elo((*theta)[static_cast<Eigen::Index>(i)], cfg);
        return elo;
      },
      [&](std::size_t round, std::vector<double>&& elo) {
        elo_by_round[round] = std::move(elo);
      });

  double min_observed = std::numeric_limits<double>::infinity();
  bool any_observed = false;
  for (const auto& round : elo_by_round)
    for (double v : round)
      if (!std::isnan(v)) {
        min_observed = std::min(min_observed, v);
        any_observed = true;
      }
  if (!any_observed)
    throw NumericError("bootstrap_ratings: every bootstrap round failed");

  std::map<std::string, RatingResult> results;
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::vector<double> values;
    values.reserve(rounds);
    for (const auto& round : elo_by_round) {
      double v = round[i];
      values.push_back(std::isnan(v) ? min_observed : v);
    }
    std::sort(values.begin(), values.end());
    RatingResult r;
    r.item_id = items[i];
    r.theta = full_fit.at(items[i]);
    r.elo_median = detail::percentile_sorted(values, 50.0);
    r.ci_low = detail::percentile_sorted(values, 2.5);
    r.ci_high = detail::percentile_sorted(values, 97.5);
    r.tier = categorize(r.elo_median, cfg);
    results.emplace(r.item_id, std::move(r));
  }
  return results;
}

// First item of each rating group (in input order) stands for the group;
// ungrouped items represent themselves.
inline std::vector<RatingItem> group_representatives(
    const std::vector<RatingItem>& items) {
  std::vector<RatingItem> reps;
  std::set<std::string> seen_groups;
  for (const auto& item : items) {
    if (!item.rating_group) {
      reps.push_back(item);
      continue;
    }
    if (seen_groups.insert(*item.rating_group).second) reps.push_back(item);
  }
  return reps;
}

// Copies each representative's rating onto its group members.
inline std::map<std::string, RatingResult> expand_group_ratings(
    const std::map<std::string, RatingResult>& rep_ratings,
    const std::vector<RatingItem>& items) {
  std::map<std::string, std::string> rep_of_group;
  for (const auto& item : items) {
    if (item.rating_group && !rep_of_group.count(*item.rating_group) &&
        rep_ratings.count(item.id))
      rep_of_group.emplace(*item.rating_group, item.id);
  }
  std::map<std::string, RatingResult> out;
  for (const auto& item : items) {
    const RatingResult* source = nullptr;
    if (auto it = rep_ratings.find(item.id); it != rep_ratings.end()) {
      source = &it->second;
    } else if (item.rating_group) {
      auto rep = rep_of_group.find(*item.rating_group);
      if (rep != rep_of_group.end()) source = &rep_ratings.at(rep->second);
    }
    if (!source)
      throw ValidationError("no rating available for item '" + item.id + "'");
    RatingResult r = *source;
    r.item_id = item.id;
    out.emplace(item.id, std::move(r));
  }
  return out;
}

// Items to rate: JSONL with {id, question, image_ref?, rating_group?}.
// Dataset files work as-is (extra fields are ignored).
inline std::vector<RatingItem> load_rating_items(
    const std::filesystem::path& path) {
  std::vector<RatingItem> items;
  std::set<std::string> seen;
  for_each_jsonl(path, [&](std::size_t line, const json& j) {
    RatingItem item;
    item.id = require_field(j, "id", line).get<std::string>();
    item.question = require_field(j, "question", line).get<std::string>();
    item.image_ref = j.value("image_ref", std::string());
    if (j.contains("rating_group"))
      item.rating_group = j["rating_group"].get<std::string>();
    if (!seen.insert(item.id).second)
      throw ValidationError("duplicate item id '" + item.id + "' in " +
                            path.string());
    items.push_back(std::move(item));
  });
  return items;
}

inline std::vector<BattleRecord> load_battle_log(
    const std::filesystem::path& path) {
  std::vector<BattleRecord> battles;
  for_each_jsonl(path, [&](std::size_t line, const json& j) {
    battles.push_back(battle_record_from_json(j, line));
  });
  return battles;
}

inline void write_ratings_csv(const std::map<std::string, RatingResult>& ratings,
                              const std::vector<std::string>& order,
                              const std::filesystem::path& path) {
  std::string csv = "item_id,theta,elo_median,ci_low,ci_high,tier\n";
  char buf[256];
  for (const auto& id : order) {
    const RatingResult& r = ratings.at(id);
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f,%.6f,%s\n",
                  r.item_id.c_str(), r.theta, r.elo_median, r.ci_low, r.ci_high,
                  std::string(to_string(r.tier)).c_str());
    csv += buf;
  }
  write_text_file(path, csv);
}

}  // namespace qforge
