#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ecpr/model.hpp"
#include "ecpr/sim.hpp"

namespace ecpr {

// Probability that a random positive outranks a random negative, ties at 1/2,
// computed by rank sum. Empty when either class is missing.
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);

// Impression-weighted mean of per-user AUC; users with a degenerate label set
// are skipped. Empty when no user remains.
std::optional<double> gauc(std::span<const double> scores, std::span<const int> labels,
                           std::span<const int32_t> user_ids);

// |top-K of ranking ∩ targets| / min(K, |targets|); empty for empty targets.
// ranked_items must already be in rank order.
std::optional<double> recall_at_k(std::span<const int32_t> ranked_items,
                                  std::span<const int32_t> target_items, int k);

// Top-K set overlap between two orders over the same candidates; K is
// truncated to the candidate count.
double rcs_at_k(std::span<const int32_t> ranking, std::span<const int32_t> oracle_ranking, int k);

struct MetricsReport {
  std::string model;
  std::string head;
  std::optional<double> auc;
  std::optional<double> gauc;
  std::map<int, std::optional<double>> recall_exposure;  // by K
  std::map<int, std::optional<double>> recall_click;
  std::map<int, std::optional<double>> rcs;
  std::optional<double> bias_gap;
  int64_t n_records = 0;
  int64_t n_exposure = 0;
  int64_t n_clicks = 0;
  int64_t n_requests = 0;
  int64_t n_users = 0;
};

// Full evaluation protocol over a matching-domain split: AUC/GAUC on the
// exposure subset with click labels, Recall/RCS over the full candidate sets,
// and the |observed - entire-chain| click-head loss gap.
MetricsReport evaluate_model(const Model& model, const Dataset& eval,
                             const std::vector<double>* oracle_scores, Head head,
                             const std::vector<int>& ks);

// "<path>.tsv" one row per (model, head, metric, K); "<path>.json" mirrors the
// reports for machine use.
void write_reports(const std::string& path_base, const std::vector<MetricsReport>& reports);
std::string render_reports_tsv(const std::vector<MetricsReport>& reports);
std::vector<MetricsReport> read_reports_json(const std::string& path);

}  // namespace ecpr
