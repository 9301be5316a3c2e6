#include <catch2/catch_amalgamated.hpp>

#include "qforge/mock.hpp"
#include "qforge/rating.hpp"
#include "support.hpp"

using namespace qforge;

namespace {

// Battles sampled from the true model: item a beats b with probability
// sigma(theta_a - theta_b).
std::vector<BattleRecord> simulate_battles(
    const std::vector<std::string>& ids,
    const std::map<std::string, double>& theta, int k, std::uint64_t seed) {
  auto schedule = schedule_battles(ids, k, seed);
  std::vector<BattleRecord> out;
  out.reserve(schedule.size());
  std::size_t index = 0;
  for (const auto& b : schedule) {
    Rng rng = keyed_rng(seed, "sim-battle", index++);
    BattleRecord rec;
    rec.item_a = b.item_a;
    rec.item_b = b.item_b;
    rec.presented_first = b.presented_first;
    double p = bt_win_prob(theta.at(b.item_a), theta.at(b.item_b));
    rec.outcome =
        rng.next_unit() < p ? BattleOutcome::a_wins : BattleOutcome::b_wins;
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<std::string> ladder_ids(int n) {
  std::vector<std::string> ids;
  for (int i = 0; i < n; ++i) ids.push_back("item" + std::to_string(i));
  return ids;
}

std::map<std::string, double> ladder_theta(const std::vector<std::string>& ids,
                                           double gap) {
  std::map<std::string, double> theta;
  for (std::size_t i = 0; i < ids.size(); ++i)
    theta[ids[i]] = gap * static_cast<double>(i);
  return theta;
}

}  // namespace

TEST_CASE("schedule_battles anchors each item exactly k times") {
  auto battles = schedule_battles({"a", "b", "c"}, 2, 5);
  REQUIRE(battles.size() == 6);
  std::map<std::string, std::set<std::string>> opponents;
  for (const auto& b : battles) {
    REQUIRE(b.item_a != b.item_b);
    REQUIRE(opponents[b.item_a].insert(b.item_b).second);  // distinct
  }
  for (const auto& [anchor, opps] : opponents) REQUIRE(opps.size() == 2);
}

TEST_CASE("schedule_battles rejects k larger than the opponent pool") {
  REQUIRE_THROWS_AS(schedule_battles({"a", "b"}, 2, 5), ConfigError);
  REQUIRE_NOTHROW(schedule_battles({"a", "b"}, 1, 5));
}

TEST_CASE("schedules are deterministic in the seed") {
  std::vector<std::string> ids = ladder_ids(50);
  auto one = schedule_battles(ids, 10, 99);
  auto two = schedule_battles(ids, 10, 99);
  REQUIRE(one.size() == two.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    REQUIRE(one[i].item_a == two[i].item_a);
    REQUIRE(one[i].item_b == two[i].item_b);
    REQUIRE(one[i].presented_first == two[i].presented_first);
  }
  auto other = schedule_battles(ids, 10, 100);
  bool differs = false;
  for (std::size_t i = 0; i < one.size(); ++i)
    differs |= one[i].item_b != other[i].item_b ||
               one[i].presented_first != other[i].presented_first;
  REQUIRE(differs);
}

TEST_CASE("judge_battle decodes the winner through presentation order") {
  std::map<std::string, RatingItem> content;
  content["x"] = {"x", "problem x", "", std::nullopt};
  content["y"] = {"y", "problem y", "", std::nullopt};

  MockScript script;
  script.fixed_text = "The first one needs more steps.\nWINNER: FIRST";
  ScriptedMockBackend judge("judge", 1, script);

  ScheduledBattle first_is_a{"x", "y", Presented::a};
  auto rec = judge_battle(judge, first_is_a, content, 3);
  REQUIRE(rec.has_value());
  REQUIRE(rec->outcome == BattleOutcome::a_wins);
  REQUIRE(rec->judge_raw == *script.fixed_text);

  ScheduledBattle first_is_b{"x", "y", Presented::b};
  rec = judge_battle(judge, first_is_b, content, 3);
  REQUIRE(rec->outcome == BattleOutcome::b_wins);

  script.fixed_text = "Equally hard.\nWINNER: TIE";
  ScriptedMockBackend tie_judge("judge", 1, script);
  rec = judge_battle(tie_judge, first_is_a, content, 3);
  REQUIRE(rec->outcome == BattleOutcome::tie);
}

TEST_CASE("unparseable judge replies drop the battle") {
  std::map<std::string, RatingItem> content;
  content["x"] = {"x", "problem x", "", std::nullopt};
  content["y"] = {"y", "problem y", "", std::nullopt};
  MockScript script;
  script.judge_reply_override = "I cannot decide.";
  ScriptedMockBackend judge("judge", 1, script);
  ScheduledBattle battle{"x", "y", Presented::a};
  REQUIRE_FALSE(judge_battle(judge, battle, content, 3).has_value());
}

TEST_CASE("planted difficulty markers drive the mock judge through decode") {
  // theta gap 10: the harder item should win essentially every battle, no
  // matter which side it is presented on.
  std::map<std::string, RatingItem> content;
  content["hard"] = {"hard", "hard problem [[theta=10]]", "", std::nullopt};
  content["easy"] = {"easy", "easy problem [[theta=0]]", "", std::nullopt};
  ScriptedMockBackend judge("judge", 17);
  int hard_wins = 0;
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    ScheduledBattle battle{"hard", "easy",
                           seed % 2 ? Presented::a : Presented::b};
    auto rec = judge_battle(judge, battle, content, seed);
    REQUIRE(rec.has_value());
    if (rec->outcome == BattleOutcome::a_wins) ++hard_wins;
  }
  REQUIRE(hard_wins >= 49);
}

TEST_CASE("bt_win_prob analytic values") {
  REQUIRE(bt_win_prob(1.7, 1.7) == 0.5);
  REQUIRE(std::fabs(bt_win_prob(std::log(10.0), 0.0) - 10.0 / 11.0) <= 1e-12);
  REQUIRE(std::fabs(bt_win_prob(std::log(3.0), 0.0) - 0.75) <= 1e-12);
}

TEST_CASE("bt_win_prob antisymmetry is exact and stable at huge gaps") {
  Rng rng(8);
  for (int i = 0; i < 2000; ++i) {
    double x = (rng.next_unit() - 0.5) * 1400.0;
    double y = (rng.next_unit() - 0.5) * 1400.0;
    double pxy = bt_win_prob(x, y);
    double pyx = bt_win_prob(y, x);
    REQUIRE(pxy + pyx == 1.0);
    REQUIRE(std::isfinite(pxy));
    REQUIRE(pxy >= 0.0);
    REQUIRE(pxy <= 1.0);
  }
  REQUIRE(bt_win_prob(700.0, 0.0) > 0.999999);
  REQUIRE(bt_win_prob(0.0, 700.0) < 1e-6);
}

TEST_CASE("theta_to_elo affine map") {
  RatingConfig cfg;
  REQUIRE(theta_to_elo(0.0, cfg) == 1000.0);
  REQUIRE(std::fabs(theta_to_elo(std::log(10.0), cfg) - 1400.0) <= 1e-9);
  REQUIRE(std::fabs(theta_to_elo(-std::log(10.0), cfg) - 600.0) <= 1e-9);
}

TEST_CASE("categorize applies the verbatim tier boundaries") {
  RatingConfig cfg;
  REQUIRE(categorize(1050.0, cfg) == Tier::hard);
  REQUIRE(categorize(950.0, cfg) == Tier::easy);
  REQUIRE(categorize(1000.0, cfg) == Tier::medium);
  REQUIRE(categorize(1049.999, cfg) == Tier::medium);
  REQUIRE(categorize(950.001, cfg) == Tier::medium);
}

TEST_CASE("fit_bt: symmetric wins center both items at zero") {
  std::vector<BattleRecord> battles;
  for (int i = 0; i < 3; ++i) {
    battles.push_back({"A", "B", BattleOutcome::a_wins, Presented::a, ""});
    battles.push_back({"A", "B", BattleOutcome::b_wins, Presented::a, ""});
  }
  auto theta = fit_bt(battles, {"A", "B"}, 1e-4);
  REQUIRE(std::fabs(theta["A"]) <= 1e-6);
  REQUIRE(std::fabs(theta["B"]) <= 1e-6);
}

TEST_CASE("fit_bt: a shutout orders the items") {
  std::vector<BattleRecord> battles;
  for (int i = 0; i < 8; ++i)
    battles.push_back({"A", "B", BattleOutcome::a_wins, Presented::a, ""});
  auto theta = fit_bt(battles, {"A", "B"}, 1e-4);
  REQUIRE(theta["A"] > theta["B"]);
}

TEST_CASE("fit_bt matches the reduced grid-search oracle on the 3-item case") {
  // A beats B 3 of 4, B beats C 3 of 4, A beats C 2 of 4.
  std::vector<BattleRecord> battles;
  auto add = [&](const char* w, const char* l, int times) {
    for (int i = 0; i < times; ++i)
      battles.push_back({w, l, BattleOutcome::a_wins, Presented::a, ""});
  };
  add("A", "B", 3);
  add("B", "A", 1);
  add("B", "C", 3);
  add("C", "B", 1);
  add("A", "C", 2);
  add("C", "A", 2);

  auto theta = fit_bt(battles, {"A", "B", "C"}, 1e-4);

  double wins[3][3] = {};
  wins[0][1] = 3;
  wins[1][0] = 1;
  wins[1][2] = 3;
  wins[2][1] = 1;
  wins[0][2] = 2;
  wins[2][0] = 2;
  auto oracle = testsupport::grid_search_bt3(wins, 1e-4, 5.0);

  REQUIRE(std::fabs(theta["A"] - oracle.theta[0]) <= 0.01);
  REQUIRE(std::fabs(theta["B"] - oracle.theta[1]) <= 0.01);
  REQUIRE(std::fabs(theta["C"] - oracle.theta[2]) <= 0.01);

  const char* names[3] = {"A", "B", "C"};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      if (i == j) continue;
      double fit_p = bt_win_prob(theta[names[i]], theta[names[j]]);
      double oracle_p = bt_win_prob(oracle.theta[i], oracle.theta[j]);
      REQUIRE(std::fabs(fit_p - oracle_p) <= 1e-3);
    }
}

TEST_CASE("fit_bt rejects a disconnected comparison graph naming components") {
  std::vector<BattleRecord> battles = {
      {"A", "B", BattleOutcome::a_wins, Presented::a, ""},
      {"C", "D", BattleOutcome::a_wins, Presented::a, ""}};
  try {
    fit_bt(battles, {"A", "B", "C", "D"}, 1e-4);
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("disconnected") != std::string::npos);
    REQUIRE(msg.find("A") != std::string::npos);
    REQUIRE(msg.find("C") != std::string::npos);
  }
}

TEST_CASE("fitted ratings are zero-mean (penalty picks the centered optimum)") {
  for (std::uint64_t seed : {4u, 5u, 6u}) {
    auto ids = ladder_ids(8);
    auto theta_star = ladder_theta(ids, 0.4);
    auto battles = simulate_battles(ids, theta_star, 5, seed);
    auto theta = fit_bt(battles, ids, 1e-4);
    double mean = 0;
    for (const auto& [id, t] : theta) mean += t;
    mean /= static_cast<double>(theta.size());
    REQUIRE(std::fabs(mean) <= 1e-3);
  }
}

TEST_CASE("a strictly dominating win record never ranks lower") {
  Rng rng(77);
  for (int round = 0; round < 10; ++round) {
    std::vector<BattleRecord> battles;
    // A and B battle the same four opponents; A wins at least as often.
    for (int o = 0; o < 4; ++o) {
      std::string opp = "O" + std::to_string(o);
      int b_wins = static_cast<int>(rng.below(4));       // 0..3 of 4
      int a_wins = b_wins + 1 + static_cast<int>(rng.below(
                                    static_cast<std::uint64_t>(4 - b_wins)));
      for (int i = 0; i < 4; ++i) {
        battles.push_back({"A", opp,
                           i < a_wins ? BattleOutcome::a_wins
                                      : BattleOutcome::b_wins,
                           Presented::a, ""});
        battles.push_back({"B", opp,
                           i < b_wins ? BattleOutcome::a_wins
                                      : BattleOutcome::b_wins,
                           Presented::a, ""});
      }
    }
    auto theta = fit_bt(battles, {"A", "B", "O0", "O1", "O2", "O3"}, 1e-4);
    REQUIRE(theta["A"] >= theta["B"]);
  }
}

TEST_CASE("bootstrap on a deterministic pair keeps the winner above") {
  std::vector<BattleRecord> battles = {
      {"win", "lose", BattleOutcome::a_wins, Presented::a, ""}};
  RatingConfig cfg;
  auto ratings = bootstrap_ratings(battles, {"win", "lose"}, cfg, 21);
  const auto& winner = ratings.at("win");
  const auto& loser = ratings.at("lose");
  REQUIRE(winner.elo_median > loser.elo_median);
  REQUIRE(winner.ci_low > loser.ci_high);  // holds in every round
  for (const auto& [id, r] : ratings) {
    REQUIRE(r.ci_low <= r.elo_median);
    REQUIRE(r.elo_median <= r.ci_high);
  }
}

TEST_CASE("bootstrap is deterministic in the seed") {
  auto ids = ladder_ids(10);
  auto theta_star = ladder_theta(ids, 0.5);
  auto battles = simulate_battles(ids, theta_star, 6, 3);
  RatingConfig cfg;
  cfg.bootstrap_rounds = 40;
  auto one = bootstrap_ratings(battles, ids, cfg, 17, 2);
  auto two = bootstrap_ratings(battles, ids, cfg, 17, 2);
  for (const auto& [id, r] : one) {
    REQUIRE(r.elo_median == two.at(id).elo_median);
    REQUIRE(r.ci_low == two.at(id).ci_low);
    REQUIRE(r.ci_high == two.at(id).ci_high);
  }
}

TEST_CASE("bootstrap recovers a planted difficulty ladder") {
  auto ids = ladder_ids(20);
  auto theta_star = ladder_theta(ids, 0.5);
  RatingConfig cfg;  // 100 rounds
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto battles = simulate_battles(ids, theta_star, 12, seed);
    auto ratings = bootstrap_ratings(battles, ids, cfg, seed, 2);
    std::vector<double> planted, recovered;
    for (const auto& id : ids) {
      planted.push_back(theta_star.at(id));
      recovered.push_back(ratings.at(id).elo_median);
      REQUIRE(ratings.at(id).ci_low <= ratings.at(id).elo_median);
      REQUIRE(ratings.at(id).elo_median <= ratings.at(id).ci_high);
    }
    REQUIRE(testsupport::spearman(planted, recovered) >= 0.9);
  }
}

TEST_CASE("more battles per item do not widen the intervals") {
  auto ids = ladder_ids(12);
  auto theta_star = ladder_theta(ids, 0.5);
  RatingConfig cfg;
  cfg.bootstrap_rounds = 60;
  double width_small = 0, width_large = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (int k : {4, 10}) {
      auto battles = simulate_battles(ids, theta_star, k, seed);
      auto ratings = bootstrap_ratings(battles, ids, cfg, seed, 2);
      double width = 0;
      for (const auto& [id, r] : ratings) width += r.ci_high - r.ci_low;
      width /= static_cast<double>(ids.size());
      (k == 4 ? width_small : width_large) += width;
    }
  }
  REQUIRE(width_large <= width_small);
}

TEST_CASE("rating groups rate one representative and copy to members") {
  std::vector<RatingItem> items = {
      {"v1", "q1 [[theta=1]]", "", std::string("g1")},
      {"v2", "q2", "", std::string("g1")},
      {"v3", "q3", "", std::string("g1")},
      {"solo", "q4", "", std::nullopt},
  };
  auto reps = group_representatives(items);
  REQUIRE(reps.size() == 2);
  REQUIRE(reps[0].id == "v1");
  REQUIRE(reps[1].id == "solo");

  std::map<std::string, RatingResult> rep_ratings;
  rep_ratings["v1"] = {"v1", 0.5, 1080, 1050, 1110, Tier::hard};
  rep_ratings["solo"] = {"solo", -0.5, 920, 900, 940, Tier::easy};
  auto all = expand_group_ratings(rep_ratings, items);
  REQUIRE(all.size() == 4);
  REQUIRE(all.at("v2").elo_median == 1080);
  REQUIRE(all.at("v2").item_id == "v2");
  REQUIRE(all.at("v3").tier == Tier::hard);
  REQUIRE(all.at("solo").elo_median == 920);
}

TEST_CASE("battle records round-trip through the log format") {
  BattleRecord rec{"x", "y", BattleOutcome::b_wins, Presented::b, "raw text"};
  BattleRecord back = battle_record_from_json(to_json(rec));
  REQUIRE(back.item_a == "x");
  REQUIRE(back.outcome == BattleOutcome::b_wins);
  REQUIRE(back.presented_first == Presented::b);
  REQUIRE(back.judge_raw == "raw text");
  REQUIRE_THROWS_AS(
      battle_record_from_json(json{{"item_a", "x"},
                                   {"item_b", "x"},
                                   {"outcome", "tie"}}),
      ValidationError);
}
