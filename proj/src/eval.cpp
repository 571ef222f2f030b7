#include "warpbench/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace warpbench {

RelevanceJudgments RelevanceJudgments::from_test(const Dataset& test) {
  return from_test(test, -std::numeric_limits<double>::infinity());
}

RelevanceJudgments RelevanceJudgments::from_test(const Dataset& test,
                                                 double min_rating) {
  const Csr& m = test.matrix;
  RelevanceJudgments j;
  j.relevant.resize(m.n_rows);
  for (std::size_t u = 0; u < m.n_rows; ++u) {
    auto cols = m.row_indices(u);
    auto vals = m.row_values(u);
    for (std::size_t p = 0; p < cols.size(); ++p) {
      if (vals[p] >= min_rating) j.relevant[u].push_back(cols[p]);
    }
  }
  return j;
}

namespace {

double log2_discount(std::size_t rank) {  // rank is 1-based
  return std::log2(static_cast<double>(rank) + 1.0);
}

struct UserAccuracy {
  double precision, recall, hit_rate, mrr, map, ndcg;
};

UserAccuracy score_user_list(const std::vector<std::pair<ItemIndex, double>>& list,
                             const std::vector<ItemIndex>& relevant,
                             std::size_t k) {
  std::size_t depth = std::min(k, list.size());
  std::size_t hits = 0;
  std::size_t first_hit = 0;  // 1-based, 0 = none
  double dcg = 0.0;
  double ap_sum = 0.0;
  for (std::size_t r = 0; r < depth; ++r) {
    bool rel = std::binary_search(relevant.begin(), relevant.end(),
                                  list[r].first);
    if (!rel) continue;
    ++hits;
    if (first_hit == 0) first_hit = r + 1;
    dcg += 1.0 / log2_discount(r + 1);
    ap_sum += static_cast<double>(hits) / static_cast<double>(r + 1);
  }

  std::size_t ideal = std::min(k, relevant.size());
  double idcg = 0.0;
  for (std::size_t r = 1; r <= ideal; ++r) idcg += 1.0 / log2_discount(r);

  UserAccuracy a{};
  a.precision = static_cast<double>(hits) / static_cast<double>(k);
  a.recall = static_cast<double>(hits) / static_cast<double>(relevant.size());
  a.hit_rate = hits > 0 ? 1.0 : 0.0;
  a.mrr = first_hit > 0 ? 1.0 / static_cast<double>(first_hit) : 0.0;
  a.map = ap_sum / static_cast<double>(ideal);
  a.ndcg = idcg > 0.0 ? dcg / idcg : 0.0;
  return a;
}

}  // namespace

MetricReport compute_accuracy(const RecommendationList& recs,
                              const RelevanceJudgments& judg,
                              const std::vector<std::size_t>& cutoffs) {
  for (std::size_t k : cutoffs) {
    if (k < 1) throw DataError("compute_accuracy: cutoffs must be >= 1");
  }
  if (cutoffs.empty()) throw DataError("compute_accuracy: no cutoffs given");

  MetricReport report;
  std::vector<std::size_t> eval_positions;
  for (std::size_t idx = 0; idx < recs.users.size(); ++idx) {
    UserIndex u = recs.users[idx];
    bool has_relevance =
        u < judg.relevant.size() && !judg.relevant[u].empty();
    if (has_relevance) {
      report.evaluated_users.push_back(u);
      eval_positions.push_back(idx);
    } else {
      report.skipped_users++;
    }
  }
  if (report.evaluated_users.empty()) {
    throw DataError("compute_accuracy: no user has relevance judgments");
  }

  const char* names[] = {"Precision", "Recall", "HitRate",
                         "MRR",       "MAP",    "nDCG"};
  for (std::size_t k : cutoffs) {
    std::vector<std::vector<double>> cols(6);
    for (auto& c : cols) c.reserve(eval_positions.size());
    for (std::size_t idx : eval_positions) {
      UserIndex u = recs.users[idx];
      UserAccuracy a = score_user_list(recs.items[idx], judg.relevant[u], k);
      cols[0].push_back(a.precision);
      cols[1].push_back(a.recall);
      cols[2].push_back(a.hit_rate);
      cols[3].push_back(a.mrr);
      cols[4].push_back(a.map);
      cols[5].push_back(a.ndcg);
    }
    for (std::size_t m = 0; m < 6; ++m) {
      MetricColumn col;
      col.name = names[m];
      col.cutoff = k;
      col.per_user = std::move(cols[m]);
      double sum = 0.0;
      for (double v : col.per_user) sum += v;
      col.aggregate = sum / static_cast<double>(col.per_user.size());
      report.accuracy.push_back(std::move(col));
    }
  }
  return report;
}

std::vector<std::pair<std::string, double>> compute_exposure(
    const RecommendationList& recs, const Dataset& train,
    double head_fraction) {
  const std::size_t n_items = train.n_items();
  std::vector<double> counts(n_items, 0.0);
  std::size_t slots = 0;
  for (const auto& list : recs.items) {
    for (const auto& [item, score] : list) {
      counts[item] += 1.0;
      ++slots;
    }
  }
  if (slots == 0) throw DataError("compute_exposure: empty recommendations");

  std::vector<std::size_t> degrees = item_degrees(train.matrix);

  double coverage = 0.0;
  for (double c : counts) coverage += c > 0.0 ? 1.0 : 0.0;
  coverage /= static_cast<double>(n_items);

  // Gini over the full catalog, zero-count items included
  std::vector<double> sorted_counts = counts;
  std::sort(sorted_counts.begin(), sorted_counts.end());
  double gini_num = 0.0;
  double total = static_cast<double>(slots);
  for (std::size_t i = 0; i < n_items; ++i) {
    gini_num += (2.0 * static_cast<double>(i + 1) -
                 static_cast<double>(n_items) - 1.0) *
                sorted_counts[i];
  }
  double gini = gini_num / (static_cast<double>(n_items) * total);

  double entropy = 0.0;
  for (double c : counts) {
    if (c <= 0.0) continue;
    double p = c / total;
    entropy -= p * std::log2(p);
  }

  std::size_t max_degree = 0;
  for (std::size_t d : degrees) max_degree = std::max(max_degree, d);

  // short head: smallest popularity-sorted prefix covering head_fraction
  // of training interactions
  std::vector<ItemIndex> by_pop(n_items);
  for (std::size_t i = 0; i < n_items; ++i) by_pop[i] = static_cast<ItemIndex>(i);
  std::sort(by_pop.begin(), by_pop.end(), [&](ItemIndex a, ItemIndex b) {
    if (degrees[a] != degrees[b]) return degrees[a] > degrees[b];
    return a < b;
  });
  double train_total = 0.0;
  for (std::size_t d : degrees) train_total += static_cast<double>(d);
  std::vector<char> short_head(n_items, 0);
  double covered = 0.0;
  for (ItemIndex i : by_pop) {
    if (covered >= head_fraction * train_total) break;
    short_head[i] = 1;
    covered += static_cast<double>(degrees[i]);
  }

  double epc = 0.0, arp = 0.0, long_tail = 0.0;
  for (std::size_t i = 0; i < n_items; ++i) {
    if (counts[i] == 0.0) continue;
    double pop = max_degree > 0 ? static_cast<double>(degrees[i]) /
                                      static_cast<double>(max_degree)
                                : 0.0;
    epc += counts[i] * (1.0 - pop);
    arp += counts[i] * static_cast<double>(degrees[i]);
    if (!short_head[i]) long_tail += counts[i];
  }
  epc /= total;
  arp /= total;
  long_tail /= total;

  return {{"ItemCoverage", coverage}, {"Gini", gini},
          {"ShannonEntropy", entropy}, {"EPC", epc},
          {"ARP", arp},                {"APLT", long_tail}};
}

}  // namespace warpbench
