#pragma once

// Shared fixtures and independent oracles for the test suites. The oracles
// here intentionally re-derive results through a separate code path (direct
// enumeration, closed forms, reduced-dimension grid search) rather than
// calling back into the implementation they check.

#include <unistd.h>

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "qforge/dataset.hpp"
#include "qforge/mock.hpp"
#include "qforge/rng.hpp"

namespace testsupport {

// ---------------------------------------------------------------------------
// Scratch directories

struct TempDir {
  std::filesystem::path path;

  TempDir() {
    static std::atomic<std::uint64_t> counter{0};
    path = std::filesystem::temp_directory_path() /
           ("qforge-test-" + std::to_string(::getpid()) + "-" +
            std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path file(const std::string& name) const {
    return path / name;
  }
};

// ---------------------------------------------------------------------------
// Mock corpora: every question carries its own answer and solve probability
// through the scripted-mock marker convention.

inline qforge::Sample make_mock_sample(std::size_t index, double p_solve) {
  qforge::Sample s;
  s.id = "q" + std::to_string(1000 + index);
  s.image_ref = "images/" + s.id + ".png";
  s.answer = std::to_string(100 + index);
  s.question = "Compute the value shown in figure " + std::to_string(index) +
               ". " + qforge::mock_marker::make(s.answer, p_solve);
  return s;
}

inline qforge::Dataset make_mock_corpus(
    std::size_t n, std::uint64_t seed,
    const std::function<double(std::size_t, qforge::Rng&)>& p_of) {
  qforge::Dataset d;
  d.name = "mock-corpus";
  qforge::Rng rng(seed);
  d.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    d.samples.push_back(make_mock_sample(i, p_of(i, rng)));
  return d;
}

inline qforge::Dataset make_uniform_p_corpus(std::size_t n,
                                             std::uint64_t seed) {
  return make_mock_corpus(
      n, seed, [](std::size_t, qforge::Rng& rng) { return rng.next_unit(); });
}

inline qforge::Dataset make_fixed_p_corpus(std::size_t n, double p) {
  return make_mock_corpus(n, 0,
                          [p](std::size_t, qforge::Rng&) { return p; });
}

inline double marker_p_of(const qforge::Sample& s) {
  return qforge::mock_marker::numeric_field(s.question, "p").value_or(-1.0);
}

// ---------------------------------------------------------------------------
// Binomial enumeration oracle

inline double binom_pmf(int n, int k, double p) {
  if (k < 0 || k > n) return 0.0;
  if (p <= 0.0) return k == 0 ? 1.0 : 0.0;
  if (p >= 1.0) return k == n ? 1.0 : 0.0;
  double log_choose = std::lgamma(n + 1.0) - std::lgamma(k + 1.0) -
                      std::lgamma(n - k + 1.0);
  return std::exp(log_choose + k * std::log(p) + (n - k) * std::log1p(-p));
}

inline double binom_tail_ge(int n, int k, double p) {
  double total = 0.0;
  for (int i = k; i <= n; ++i) total += binom_pmf(n, i, p);
  return total;
}

// ---------------------------------------------------------------------------
// Spearman rank correlation (average ranks on ties)

inline std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size(), 0.0);
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(const std::vector<double>& a,
                       const std::vector<double>& b) {
  auto ra = average_ranks(a), rb = average_ranks(b);
  double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

// ---------------------------------------------------------------------------
// Independent re-implementation of the keyed draw behind mock_solve. Kept
// textually separate from qforge/rng.hpp on purpose: if the production
// derivation ever drifts, these constants stop agreeing and the oracle test
// fails.

inline std::uint64_t oracle_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t oracle_fnv(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline bool oracle_mock_solved(const std::string& sample_id, double p_solve,
                               std::uint64_t seed, std::uint64_t call_index) {
  std::uint64_t s = oracle_mix(seed ^ 0x6a09e667f3bcc908ull);
  s = oracle_mix(s ^ oracle_fnv("solve/" + sample_id));
  s = oracle_mix(s ^ call_index * 0x9e3779b97f4a7c15ull);
  s += 0x9e3779b97f4a7c15ull;  // first stream step
  double u = static_cast<double>(oracle_mix(s) >> 11) * 0x1.0p-53;
  return u < p_solve;
}

// ---------------------------------------------------------------------------
// Penalized Bradley-Terry grid-search oracle for 3 items.
//
// The likelihood depends only on the pairwise differences d1 = t0 - t1 and
// d2 = t0 - t2; for fixed differences the L2 penalty is minimized in closed
// form at mean(theta) = 0, i.e. t0 = (d1 + d2) / 3. That reduces the search
// to an exhaustive 2-D grid over (d1, d2), refined level by level (the
// objective is smooth and strictly concave, so each refinement brackets the
// global maximizer). wins[i][j] counts how often item i beat item j, with
// ties contributing 0.5 to each direction.

struct Bt3Oracle {
  double theta[3];
};

inline double bt3_objective(const double wins[3][3], double d1, double d2,
                            double lambda) {
  auto lsig = [](double x) {
    return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  };
  double ll = 0.0;
  ll += wins[0][1] * lsig(d1) + wins[1][0] * lsig(-d1);
  ll += wins[0][2] * lsig(d2) + wins[2][0] * lsig(-d2);
  ll += wins[1][2] * lsig(d2 - d1) + wins[2][1] * lsig(d1 - d2);
  // ||theta||^2 at the optimal shift: (2/3) (d1^2 + d2^2 - d1 d2)
  double penalty = (2.0 / 3.0) * (d1 * d1 + d2 * d2 - d1 * d2);
  return ll - lambda * penalty;
}

inline Bt3Oracle grid_search_bt3(const double wins[3][3], double lambda,
                                 double span = 10.0) {
  double lo1 = -span, hi1 = span, lo2 = -span, hi2 = span;
  double step = span / 20.0;
  double best1 = 0.0, best2 = 0.0;
  for (int level = 0; level < 6; ++level) {
    double best = -std::numeric_limits<double>::infinity();
    for (double d1 = lo1; d1 <= hi1 + step * 0.5; d1 += step) {
      for (double d2 = lo2; d2 <= hi2 + step * 0.5; d2 += step) {
        double v = bt3_objective(wins, d1, d2, lambda);
        if (v > best) {
          best = v;
          best1 = d1;
          best2 = d2;
        }
      }
    }
    double window = 2.0 * step;
    lo1 = best1 - window;
    hi1 = best1 + window;
    lo2 = best2 - window;
    hi2 = best2 + window;
    step /= 5.0;
  }
  double shift = (best1 + best2) / 3.0;
  return Bt3Oracle{{shift, shift - best1, shift - best2}};
}

}  // namespace testsupport
