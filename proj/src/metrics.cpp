#include "ecpr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "ecpr/nn.hpp"
#include "json.hpp"

namespace ecpr {

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auc: scores and labels differ in length");
  const size_t n = scores.size();
  int64_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("auc: labels must be 0/1");
    n_pos += y;
  }
  const int64_t n_neg = static_cast<int64_t>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Average ranks within tie groups keep the rank sum exact in halves.
  double pos_rank_sum = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
    for (size_t k = i; k <= j; ++k)
      if (labels[order[k]]) pos_rank_sum += avg_rank;
    i = j + 1;
  }
  const double expected_min = static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
  return (pos_rank_sum - expected_min) /
         (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::optional<double> gauc(std::span<const double> scores, std::span<const int> labels,
                           std::span<const int32_t> user_ids) {
  if (scores.size() != labels.size() || scores.size() != user_ids.size())
    throw std::invalid_argument("gauc: input lengths differ");
  std::map<int32_t, std::vector<size_t>> by_user;
  for (size_t i = 0; i < user_ids.size(); ++i) by_user[user_ids[i]].push_back(i);

  double weighted = 0.0;
  double weight_total = 0.0;
  for (const auto& [user, idx] : by_user) {
    std::vector<double> s(idx.size());
    std::vector<int> y(idx.size());
    for (size_t k = 0; k < idx.size(); ++k) {
      s[k] = scores[idx[k]];
      y[k] = labels[idx[k]];
    }
    const std::optional<double> a = auc(s, y);
    if (!a) continue;  // degenerate user
    weighted += static_cast<double>(idx.size()) * *a;
    weight_total += static_cast<double>(idx.size());
  }
  if (weight_total == 0.0) return std::nullopt;
  return weighted / weight_total;
}

std::optional<double> recall_at_k(std::span<const int32_t> ranked_items,
                                  std::span<const int32_t> target_items, int k) {
  if (target_items.empty()) return std::nullopt;
  if (k < 1) throw std::invalid_argument("recall_at_k: K must be >= 1");
  std::unordered_set<int32_t> targets(target_items.begin(), target_items.end());
  const size_t top = std::min<size_t>(static_cast<size_t>(k), ranked_items.size());
  int64_t hit = 0;
  for (size_t i = 0; i < top; ++i)
    if (targets.count(ranked_items[i])) ++hit;
  const int64_t denom = std::min<int64_t>(k, static_cast<int64_t>(targets.size()));
  return static_cast<double>(hit) / static_cast<double>(denom);
}

double rcs_at_k(std::span<const int32_t> ranking, std::span<const int32_t> oracle_ranking,
                int k) {
  if (ranking.size() != oracle_ranking.size())
    throw std::invalid_argument("rcs_at_k: orders cover different candidate counts");
  if (ranking.empty()) throw std::invalid_argument("rcs_at_k: empty candidate set");
  if (k < 1) throw std::invalid_argument("rcs_at_k: K must be >= 1");
  const size_t kk = std::min<size_t>(static_cast<size_t>(k), ranking.size());
  std::unordered_set<int32_t> top(oracle_ranking.begin(), oracle_ranking.begin() + kk);
  int64_t hit = 0;
  for (size_t i = 0; i < kk; ++i)
    if (top.count(ranking[i])) ++hit;
  return static_cast<double>(hit) / static_cast<double>(kk);
}

namespace {

// Record indices in (request_id, item_id) order, so every aggregate below
// reduces in one canonical order no matter how the file was laid out.
std::vector<size_t> canonical_order(const Dataset& data) {
  std::vector<size_t> order(data.samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    const CascadeSample& sa = data.samples[a];
    const CascadeSample& sb = data.samples[b];
    if (sa.request_id != sb.request_id) return sa.request_id < sb.request_id;
    return sa.item_id < sb.item_id;
  });
  return order;
}

struct RequestSlice {
  size_t begin = 0;  // positions into the canonical order
  size_t end = 0;
};

std::vector<RequestSlice> request_slices(const Dataset& data, const std::vector<size_t>& order) {
  std::vector<RequestSlice> slices;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i + 1;
    while (j < order.size() &&
           data.samples[order[j]].request_id == data.samples[order[i]].request_id)
      ++j;
    slices.push_back({i, j});
    i = j;
  }
  return slices;
}

// Rank candidates by descending score, ties by ascending item id.
std::vector<int32_t> ranked_items_for(const Dataset& data, const std::vector<size_t>& rows,
                                      const std::vector<double>& scores) {
  std::vector<size_t> order = rows;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return data.samples[a].item_id < data.samples[b].item_id;
  });
  std::vector<int32_t> items(order.size());
  for (size_t i = 0; i < order.size(); ++i) items[i] = data.samples[order[i]].item_id;
  return items;
}

std::optional<double> mean_of(const std::vector<double>& values) {
  if (values.empty()) return std::nullopt;
  double total = 0.0;
  for (double v : values) total += v;
  return total / static_cast<double>(values.size());
}

}  // namespace

MetricsReport evaluate_model(const Model& model, const Dataset& eval,
                             const std::vector<double>* oracle_scores, Head head,
                             const std::vector<int>& ks) {
  if (eval.samples.empty()) throw std::invalid_argument("evaluate_model: empty split");
  if (oracle_scores && oracle_scores->size() != eval.samples.size())
    throw std::invalid_argument("evaluate_model: oracle scores misaligned");

  MetricsReport report;
  report.model = to_string(model.spec().kind);
  switch (head) {
    case Head::kT1: report.head = "t1"; break;
    case Head::kT2: report.head = "t2"; break;
    case Head::kPEtr: report.head = "petr"; break;
  }

  const size_t n = eval.samples.size();
  std::vector<double> head_scores(n);
  std::vector<double> click_head(n);
  constexpr size_t kChunk = 8192;
  for (size_t start = 0; start < n; start += kChunk) {
    const size_t stop = std::min(n, start + kChunk);
    std::vector<int64_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), static_cast<int64_t>(start));
    const std::vector<HeadsRow> rows = model.forward(eval, idx, nullptr);
    for (size_t k = 0; k < rows.size(); ++k) {
      head_scores[start + k] = rows[k].select(head);
      click_head[start + k] = rows[k].petctr;
    }
  }

  const std::vector<size_t> order = canonical_order(eval);

  // AUC / GAUC on the exposure subset with click labels.
  std::vector<double> expo_scores;
  std::vector<int> expo_labels;
  std::vector<int32_t> expo_users;
  std::unordered_set<int32_t> users;
  for (size_t i : order) {
    const CascadeSample& s = eval.samples[i];
    users.insert(s.user_id);
    report.n_exposure += s.y5;
    report.n_clicks += s.y6;
    if (s.y5 == 1) {
      expo_scores.push_back(head_scores[i]);
      expo_labels.push_back(s.y6);
      expo_users.push_back(s.user_id);
    }
  }
  report.n_records = static_cast<int64_t>(n);
  report.n_users = static_cast<int64_t>(users.size());
  report.auc = auc(expo_scores, expo_labels);
  report.gauc = gauc(expo_scores, expo_labels, expo_users);

  // Recall and ranking consistency over the full matching candidates.
  const std::vector<RequestSlice> slices = request_slices(eval, order);
  report.n_requests = static_cast<int64_t>(slices.size());
  std::map<int, std::vector<double>> recall_expo, recall_click, rcs_vals;
  for (const RequestSlice& slice : slices) {
    const std::vector<size_t> rows(order.begin() + slice.begin, order.begin() + slice.end);
    const std::vector<int32_t> ranked = ranked_items_for(eval, rows, head_scores);
    std::vector<int32_t> exposed, clicked;
    for (size_t i : rows) {
      if (eval.samples[i].y5) exposed.push_back(eval.samples[i].item_id);
      if (eval.samples[i].y6) clicked.push_back(eval.samples[i].item_id);
    }
    for (int k : ks) {
      if (const auto r = recall_at_k(ranked, exposed, k)) recall_expo[k].push_back(*r);
      if (const auto r = recall_at_k(ranked, clicked, k)) recall_click[k].push_back(*r);
    }
    if (oracle_scores) {
      const std::vector<int32_t> oracle_ranked = ranked_items_for(eval, rows, *oracle_scores);
      for (int k : ks) rcs_vals[k].push_back(rcs_at_k(ranked, oracle_ranked, k));
    }
  }
  for (int k : ks) {
    report.recall_exposure[k] = mean_of(recall_expo[k]);
    report.recall_click[k] = mean_of(recall_click[k]);
    if (oracle_scores) report.rcs[k] = mean_of(rcs_vals[k]);
  }

  // Click-head loss over the observed (exposure) split vs the entire chain.
  double loss_obs = 0.0, loss_all = 0.0;
  int64_t cnt_obs = 0;
  for (size_t i : order) {
    const CascadeSample& s = eval.samples[i];
    const double l = bce_loss(s.y6, click_head[i]);
    loss_all += l;
    if (s.y5 == 1) {
      loss_obs += l;
      ++cnt_obs;
    }
  }
  if (cnt_obs > 0)
    report.bias_gap = std::abs(loss_obs / static_cast<double>(cnt_obs) -
                               loss_all / static_cast<double>(n));
  return report;
}

namespace {

std::string fmt6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string opt_str(const std::optional<double>& v) { return v ? fmt6(*v) : "NA"; }

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> opt_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::string render_reports_tsv(const std::vector<MetricsReport>& reports) {
  std::string out = "model\thead\tmetric\tk\tvalue\n";
  for (const MetricsReport& r : reports) {
    auto row = [&](const std::string& metric, const std::string& k,
                   const std::string& value) {
      out += r.model + '\t' + r.head + '\t' + metric + '\t' + k + '\t' + value + '\n';
    };
    row("auc", "-", opt_str(r.auc));
    row("gauc", "-", opt_str(r.gauc));
    for (const auto& [k, v] : r.recall_exposure) row("recall_exposure", std::to_string(k), opt_str(v));
    for (const auto& [k, v] : r.recall_click) row("recall_click", std::to_string(k), opt_str(v));
    for (const auto& [k, v] : r.rcs) row("rcs", std::to_string(k), opt_str(v));
    row("bias_gap", "-", opt_str(r.bias_gap));
    row("n_records", "-", std::to_string(r.n_records));
    row("n_exposure", "-", std::to_string(r.n_exposure));
    row("n_clicks", "-", std::to_string(r.n_clicks));
    row("n_requests", "-", std::to_string(r.n_requests));
    row("n_users", "-", std::to_string(r.n_users));
  }
  return out;
}

void write_reports(const std::string& path_base, const std::vector<MetricsReport>& reports) {
  {
    std::ofstream tsv(path_base + ".tsv", std::ios::binary);
    if (!tsv) throw std::runtime_error("write_reports: cannot open " + path_base + ".tsv");
    tsv << render_reports_tsv(reports);
  }
  nlohmann::json doc = nlohmann::json::array();
  for (const MetricsReport& r : reports) {
    nlohmann::json j;
    j["model"] = r.model;
    j["head"] = r.head;
    j["auc"] = opt_json(r.auc);
    j["gauc"] = opt_json(r.gauc);
    nlohmann::json re, rc, rcs;
    for (const auto& [k, v] : r.recall_exposure) re[std::to_string(k)] = opt_json(v);
    for (const auto& [k, v] : r.recall_click) rc[std::to_string(k)] = opt_json(v);
    for (const auto& [k, v] : r.rcs) rcs[std::to_string(k)] = opt_json(v);
    j["recall_exposure"] = re;
    j["recall_click"] = rc;
    j["rcs"] = rcs;
    j["bias_gap"] = opt_json(r.bias_gap);
    j["n_records"] = r.n_records;
    j["n_exposure"] = r.n_exposure;
    j["n_clicks"] = r.n_clicks;
    j["n_requests"] = r.n_requests;
    j["n_users"] = r.n_users;
    doc.push_back(j);
  }
  std::ofstream json_out(path_base + ".json", std::ios::binary);
  if (!json_out) throw std::runtime_error("write_reports: cannot open " + path_base + ".json");
  json_out << doc.dump(2) << "\n";
}

std::vector<MetricsReport> read_reports_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_reports_json: cannot open " + path);
  nlohmann::json doc;
  in >> doc;
  std::vector<MetricsReport> reports;
  for (const nlohmann::json& j : doc) {
    MetricsReport r;
    r.model = j.at("model").get<std::string>();
    r.head = j.at("head").get<std::string>();
    r.auc = opt_from_json(j.at("auc"));
    r.gauc = opt_from_json(j.at("gauc"));
    for (const auto& [k, v] : j.at("recall_exposure").items())
      r.recall_exposure[std::stoi(k)] = opt_from_json(v);
    for (const auto& [k, v] : j.at("recall_click").items())
      r.recall_click[std::stoi(k)] = opt_from_json(v);
    for (const auto& [k, v] : j.at("rcs").items()) r.rcs[std::stoi(k)] = opt_from_json(v);
    r.bias_gap = opt_from_json(j.at("bias_gap"));
    r.n_records = j.at("n_records").get<int64_t>();
    r.n_exposure = j.at("n_exposure").get<int64_t>();
    r.n_clicks = j.at("n_clicks").get<int64_t>();
    r.n_requests = j.at("n_requests").get<int64_t>();
    r.n_users = j.at("n_users").get<int64_t>();
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace ecpr
