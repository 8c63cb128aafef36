#include "ecpr/reproduce.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <optional>
#include <ostream>
#include <sstream>

#include "ecpr/checkpoint.hpp"
#include "ecpr/metrics.hpp"
#include "ecpr/train.hpp"

namespace ecpr {

namespace {

namespace fs = std::filesystem;

struct CellPlan {
  std::string name;
  std::string model;
  std::string training_domain = "entire_chain";
  std::string feature_subset = "all";
  double lambda_l0 = 1e-5;
  int towers = 3;
};

struct CellOutcome {
  std::string name;
  uint64_t seed = 0;
  MetricsReport metrics;
  double active_gates = 0.0;
  TrainResult train;
  std::string log_text;
};

std::string fmt4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", v);
  return buf;
}

CellOutcome run_cell(const CellPlan& plan, const ExperimentConfig& base, uint64_t seed,
                     const SimOutput& sim, int64_t step_budget, const std::string& ckpt_path) {
  ExperimentConfig cfg = base;
  cfg.seed = seed;
  cfg.model = plan.model;
  cfg.training_domain = plan.training_domain;
  cfg.feature_subset = plan.feature_subset;
  cfg.lambda_l0 = plan.lambda_l0;
  cfg.towers = plan.towers;
  cfg.max_steps = step_budget;

  CellOutcome out;
  out.name = plan.name;
  out.seed = seed;
  std::ostringstream log;

  const Dataset train = filter_training_domain(sim.train, cfg.training_domain);
  const ModelSpec spec = build_model_spec(cfg, train);
  std::unique_ptr<Model> model = make_model(spec, cfg.seed);
  log << "[" << plan.name << " seed " << seed << "] training on " << train.samples.size()
      << " records, " << step_budget << " steps\n";
  out.train = train_loop(*model, train, cfg, &log);
  if (out.train.aborted) throw std::runtime_error("reproduce: training aborted for " + plan.name);
  for (size_t e = 0; e < out.train.epoch_seconds.size(); ++e)
    log << "[" << plan.name << " seed " << seed << "] epoch " << e << " wall-clock "
        << fmt4(out.train.epoch_seconds[e]) << "s\n";
  save_checkpoint(ckpt_path, *model, cfg);

  out.metrics = evaluate_model(*model, sim.eval, &sim.eval_oracle, Head::kT1, cfg.eval_ks);
  out.metrics.model = plan.name;
  out.active_gates = model->expected_active_gates();
  out.log_text = log.str();
  return out;
}

double mean_over_seeds(const std::vector<CellOutcome>& cells, const std::string& name,
                       const std::function<double(const CellOutcome&)>& get) {
  double total = 0.0;
  int count = 0;
  for (const CellOutcome& c : cells)
    if (c.name == name) {
      total += get(c);
      ++count;
    }
  if (count == 0) throw std::runtime_error("reproduce: no cell named " + name);
  return total / count;
}

double metric_or_throw(const std::optional<double>& v, const std::string& what) {
  if (!v) throw std::runtime_error("reproduce: metric undefined: " + what);
  return *v;
}

MetricsReport mean_report(const std::vector<CellOutcome>& cells, const std::string& name) {
  std::vector<const MetricsReport*> rs;
  for (const CellOutcome& c : cells)
    if (c.name == name) rs.push_back(&c.metrics);
  MetricsReport mean = *rs.front();
  mean.model = name + "@mean";
  auto avg = [&](const std::function<std::optional<double>(const MetricsReport&)>& get)
      -> std::optional<double> {
    double total = 0.0;
    for (const MetricsReport* r : rs) {
      const std::optional<double> v = get(*r);
      if (!v) return std::nullopt;
      total += *v;
    }
    return total / static_cast<double>(rs.size());
  };
  mean.auc = avg([](const MetricsReport& r) { return r.auc; });
  mean.gauc = avg([](const MetricsReport& r) { return r.gauc; });
  mean.bias_gap = avg([](const MetricsReport& r) { return r.bias_gap; });
  for (auto& [k, v] : mean.recall_exposure) {
    const int kk = k;
    v = avg([kk](const MetricsReport& r) { return r.recall_exposure.at(kk); });
  }
  for (auto& [k, v] : mean.recall_click) {
    const int kk = k;
    v = avg([kk](const MetricsReport& r) { return r.recall_click.at(kk); });
  }
  for (auto& [k, v] : mean.rcs) {
    const int kk = k;
    v = avg([kk](const MetricsReport& r) { return r.rcs.at(kk); });
  }
  mean.n_records = mean.n_exposure = mean.n_clicks = mean.n_requests = mean.n_users = 0;
  for (const MetricsReport* r : rs) {
    mean.n_records += r->n_records;
    mean.n_exposure += r->n_exposure;
    mean.n_clicks += r->n_clicks;
    mean.n_requests += r->n_requests;
    mean.n_users += r->n_users;
  }
  return mean;
}

void check(ReproduceResult& result, bool ok, const std::string& text) {
  result.assertion_lines.push_back(std::string(ok ? "PASS " : "FAIL ") + text);
  if (!ok) result.pass = false;
}

}  // namespace

ReproduceResult reproduce_claim(const std::string& claim, const ExperimentConfig& base,
                                const std::string& out_dir, std::ostream& log) {
  std::vector<CellPlan> plans;
  if (claim == "ssb") {
    plans = {
        {"deep_baseline@exposure_only", "deep_baseline", "exposure_only"},
        {"deep_baseline@entire_chain", "deep_baseline", "entire_chain"},
        {"ecm", "ecm"},
        {"ecmm", "ecmm"},
    };
  } else if (claim == "rcs") {
    plans = {
        {"deep_baseline@exposure_only", "deep_baseline", "exposure_only"},
        {"deep_baseline@entire_chain", "deep_baseline", "entire_chain"},
        {"deep_baseline_softmax", "deep_baseline_softmax"},
        {"ecm", "ecm"},
        {"ecmm", "ecmm"},
    };
  } else if (claim == "ablation") {
    plans = {
        {"ecm", "ecm"},
        {"ecm@half_features", "ecm", "entire_chain", "half"},
        {"ecmm", "ecmm"},
        {"ecmm@half_features", "ecmm", "entire_chain", "half"},
        {"ecmm@wo_l0", "ecmm", "entire_chain", "all", 0.0},
        {"ecmm@t4", "ecmm", "entire_chain", "all", 1e-5, 4},
    };
  } else {
    throw ConfigError("reproduce: unknown claim '" + claim + "' (expected ssb, rcs or ablation)");
  }

  ExperimentConfig cfg = base;
  if (std::find(cfg.eval_ks.begin(), cfg.eval_ks.end(), 10) == cfg.eval_ks.end())
    cfg.eval_ks.push_back(10);

  fs::create_directories(out_dir);
  constexpr int kSeedReplicates = 3;
  std::vector<CellOutcome> cells;
  for (int rep = 0; rep < kSeedReplicates; ++rep) {
    const uint64_t seed = cfg.seed + static_cast<uint64_t>(rep);
    const fs::path seed_dir = fs::path(out_dir) / ("seed" + std::to_string(seed));
    fs::create_directories(seed_dir);

    log << "== seed " << seed << ": simulating " << cfg.sim.train_requests << "+"
        << cfg.sim.eval_requests << " requests\n";
    const SimOutput sim = simulate_dataset(seed, cfg.sim);
    write_dataset((seed_dir / "train.tsv").string(), sim.train);
    write_dataset((seed_dir / "eval.tsv").string(), sim.eval);
    write_oracle((seed_dir / "eval_oracle.tsv").string(), sim.eval, sim.eval_oracle);

    // Same gradient-step budget for every cell, sized by the entire-chain
    // split, so training-domain comparisons see equal optimization work.
    const int64_t steps =
        budget_steps(static_cast<int64_t>(sim.train.samples.size()), cfg.batch_size, cfg.epochs);

    std::vector<std::future<CellOutcome>> futures;
    for (const CellPlan& plan : plans) {
      const std::string ckpt = (seed_dir / (plan.name + ".ckpt")).string();
      futures.push_back(std::async(std::launch::async, [&, ckpt]() {
        return run_cell(plan, cfg, seed, sim, steps, ckpt);
      }));
    }
    for (auto& f : futures) {
      CellOutcome outcome = f.get();
      log << outcome.log_text;
      cells.push_back(std::move(outcome));
    }
  }

  std::vector<MetricsReport> reports;
  for (const CellOutcome& c : cells) {
    MetricsReport r = c.metrics;
    r.model = c.name + "@seed" + std::to_string(c.seed);
    reports.push_back(std::move(r));
  }
  for (const CellPlan& plan : plans) reports.push_back(mean_report(cells, plan.name));
  write_reports((fs::path(out_dir) / "report").string(), reports);

  if (claim == "ablation") {
    std::string gates_tsv = "cell\tseed\tgauc\texpected_active_gates\n";
    for (const CellOutcome& c : cells) {
      gates_tsv += c.name + '\t' + std::to_string(c.seed) + '\t' +
                   (c.metrics.gauc ? fmt4(*c.metrics.gauc) : "NA") + '\t' +
                   fmt4(c.active_gates) + '\n';
    }
    std::ofstream gf(fs::path(out_dir) / "gates.tsv", std::ios::binary);
    gf << gates_tsv;
  }

  ReproduceResult result;
  auto recall10 = [](const CellOutcome& c) {
    return metric_or_throw(c.metrics.recall_click.at(10), "recall_click@10");
  };
  auto rcs10 = [](const CellOutcome& c) {
    return metric_or_throw(c.metrics.rcs.at(10), "rcs@10");
  };
  auto gauc_of = [](const CellOutcome& c) { return metric_or_throw(c.metrics.gauc, "gauc"); };
  auto gap_of = [](const CellOutcome& c) {
    return metric_or_throw(c.metrics.bias_gap, "bias_gap");
  };

  if (claim == "ssb") {
    const double ec_recall = mean_over_seeds(cells, "ecm", recall10);
    const double expo_recall = mean_over_seeds(cells, "deep_baseline@exposure_only", recall10);
    check(result, ec_recall - expo_recall >= 0.05,
          "recall_click@10 mean: ecm " + fmt4(ec_recall) + " vs deep_baseline@exposure_only " +
              fmt4(expo_recall) + " (need >= +0.05)");
    const double ec_rcs = mean_over_seeds(cells, "deep_baseline@entire_chain", rcs10);
    const double expo_rcs = mean_over_seeds(cells, "deep_baseline@exposure_only", rcs10);
    check(result, ec_rcs > expo_rcs,
          "rcs@10 mean: deep_baseline@entire_chain " + fmt4(ec_rcs) +
              " vs deep_baseline@exposure_only " + fmt4(expo_rcs) + " (need >)");
    const double expo_gap = mean_over_seeds(cells, "deep_baseline@exposure_only", gap_of);
    const double ecm_gap = mean_over_seeds(cells, "ecm", gap_of);
    check(result, expo_gap > ecm_gap,
          "bias_gap mean: deep_baseline@exposure_only " + fmt4(expo_gap) + " vs ecm " +
              fmt4(ecm_gap) + " (need >)");
    const double ecmm_gauc = mean_over_seeds(cells, "ecmm", gauc_of);
    const double ecm_gauc = mean_over_seeds(cells, "ecm", gauc_of);
    check(result, ecmm_gauc >= ecm_gauc,
          "gauc mean: ecmm " + fmt4(ecmm_gauc) + " vs ecm " + fmt4(ecm_gauc) + " (need >=)");
  } else if (claim == "rcs") {
    const double ec_rcs = mean_over_seeds(cells, "deep_baseline@entire_chain", rcs10);
    const double expo_rcs = mean_over_seeds(cells, "deep_baseline@exposure_only", rcs10);
    check(result, ec_rcs > expo_rcs,
          "rcs@10 mean: deep_baseline@entire_chain " + fmt4(ec_rcs) +
              " vs deep_baseline@exposure_only " + fmt4(expo_rcs) + " (need >)");
    for (const std::string& name :
         {std::string("deep_baseline_softmax"), std::string("ecm"), std::string("ecmm")})
      log << "rcs@10 mean " << name << ": " << fmt4(mean_over_seeds(cells, name, rcs10)) << "\n";
  } else {  // ablation
    const double with_l0 = mean_over_seeds(
        cells, "ecmm", [](const CellOutcome& c) { return c.active_gates; });
    const double without_l0 = mean_over_seeds(
        cells, "ecmm@wo_l0", [](const CellOutcome& c) { return c.active_gates; });
    check(result, with_l0 < without_l0,
          "expected active gates mean: lambda=1e-5 " + fmt4(with_l0) + " vs lambda=0 " +
              fmt4(without_l0) + " (need <)");
    log << "gauc mean ecm@all " << fmt4(mean_over_seeds(cells, "ecm", gauc_of))
        << ", ecm@half " << fmt4(mean_over_seeds(cells, "ecm@half_features", gauc_of))
        << ", ecmm@all " << fmt4(mean_over_seeds(cells, "ecmm", gauc_of)) << ", ecmm@half "
        << fmt4(mean_over_seeds(cells, "ecmm@half_features", gauc_of)) << ", ecmm@t4 "
        << fmt4(mean_over_seeds(cells, "ecmm@t4", gauc_of)) << "\n";
  }

  std::ofstream af(fs::path(out_dir) / "assertions.txt", std::ios::binary);
  for (const std::string& line : result.assertion_lines) {
    af << line << "\n";
    log << line << "\n";
  }
  return result;
}

}  // namespace ecpr
