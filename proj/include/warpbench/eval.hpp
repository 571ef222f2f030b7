#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "warpbench/dataset.hpp"
#include "warpbench/models.hpp"

namespace warpbench {

// Per-user relevant item sets. Default judgment: every test interaction is
// relevant; an optional rating threshold narrows that.
struct RelevanceJudgments {
  std::vector<std::vector<ItemIndex>> relevant;  // indexed by user, sorted

  static RelevanceJudgments from_test(const Dataset& test);
  static RelevanceJudgments from_test(const Dataset& test, double min_rating);
};

struct MetricColumn {
  std::string name;
  std::size_t cutoff = 0;
  std::vector<double> per_user;  // aligned to MetricReport::evaluated_users
  double aggregate = 0.0;        // arithmetic mean of per_user
};

struct MetricReport {
  std::vector<UserIndex> evaluated_users;  // nonempty relevance only
  std::size_t skipped_users = 0;           // empty relevance, excluded
  std::vector<MetricColumn> accuracy;
  // system-level metrics (no per-user decomposition)
  std::vector<std::pair<std::string, double>> system;
};

// Precision, Recall, HitRate, MRR, MAP and nDCG at each cutoff. Users with
// empty relevance are excluded from the averages and counted.
MetricReport compute_accuracy(const RecommendationList& recs,
                              const RelevanceJudgments& judg,
                              const std::vector<std::size_t>& cutoffs);

// ItemCoverage, Gini, ShannonEntropy, EPC, ARP, APLT over the emitted
// lists, with popularity taken from the training matrix. head_fraction
// sets the short-head boundary for APLT.
std::vector<std::pair<std::string, double>> compute_exposure(
    const RecommendationList& recs, const Dataset& train,
    double head_fraction = 0.8);

struct TestResult {
  std::string name;
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;         // effective sample size
  std::string method;        // "exact" | "normal-approximation" | ...
  bool degenerate = false;
};

// Two-sided paired Student t. Zero-variance differences degenerate to
// p=1 (zero mean) or p=0 (nonzero mean) with the flag set.
TestResult paired_t_test(const std::vector<double>& a,
                         const std::vector<double>& b);

// Two-sided Wilcoxon signed-rank: zero differences dropped, average ranks
// on ties, W = min(W+, W-); exact distribution up to n=25, then normal
// approximation with tie and continuity corrections.
TestResult wilcoxon_signed_rank(const std::vector<double>& a,
                                const std::vector<double>& b);

// Two-sided Mann-Whitney U for independent groups: exact enumeration while
// n_a+n_b <= 20, then corrected normal approximation.
TestResult mann_whitney_u(const std::vector<double>& a,
                          const std::vector<double>& b);

std::vector<double> adjust_bonferroni(const std::vector<double>& p);
std::vector<double> adjust_bh(const std::vector<double>& p);

}  // namespace warpbench
