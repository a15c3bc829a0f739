#pragma once

// Independent reference implementations shared by unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

namespace oracle {

// O(n^2) pair count: concordant pairs score 1, tied pairs 1/2.
inline double brute_auc(const std::vector<double>& s, const std::vector<int>& y) {
  long long twice = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j]) twice += 2;
      else if (s[i] == s[j]) twice += 1;
    }
  }
  return static_cast<double>(twice) / (2.0 * static_cast<double>(pairs));
}

// Every observed score as a threshold (predict positive when s >= t).
inline double brute_ks(const std::vector<double>& s, const std::vector<int>& y) {
  std::size_t p = 0, n = 0;
  for (int v : y) (v == 1 ? p : n)++;
  double best = 0.0;
  for (double t : s) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) (y[i] == 1 ? tp : fp)++;
    }
    const double gap = std::abs(static_cast<double>(tp) / static_cast<double>(p) -
                                static_cast<double>(fp) / static_cast<double>(n));
    best = std::max(best, gap);
  }
  return best;
}

// Random scored instance with both classes present, n in [2, 200]. Heavy-tie
// instances draw scores from a handful of levels.
inline std::pair<std::vector<double>, std::vector<int>> random_instance(std::mt19937_64& rng,
                                                                        bool heavy_ties) {
  std::uniform_int_distribution<int> n_dist(2, 200);
  const int n = n_dist(rng);
  std::uniform_int_distribution<int> levels(1, 6);
  const int k = levels(rng);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) {
    s[i] = heavy_ties ? std::floor(u(rng) * k) / k : u(rng);
    y[i] = u(rng) < 0.3 ? 1 : 0;
  }
  y[0] = 1;
  y[1] = 0;
  std::shuffle(y.begin(), y.end(), rng);
  return {s, y};
}

}  // namespace oracle
