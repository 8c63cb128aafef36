#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "ecpr/checkpoint.hpp"
#include "ecpr/config.hpp"
#include "ecpr/gradcheck.hpp"
#include "ecpr/metrics.hpp"
#include "ecpr/reproduce.hpp"
#include "ecpr/sim.hpp"
#include "ecpr/train.hpp"

namespace fs = std::filesystem;
using namespace ecpr;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitCheckFailed = 3;

ExperimentConfig config_from(const std::string& config_path) {
  if (config_path.empty()) {
    ExperimentConfig cfg;
    cfg.validate();
    return cfg;
  }
  return load_config_file(config_path);
}

int cmd_simulate(const std::string& config_path, const std::string& out_dir, int64_t seed) {
  ExperimentConfig cfg = config_from(config_path);
  if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
  fs::create_directories(out_dir);
  const SimOutput sim = simulate_dataset(cfg.seed, cfg.sim);
  write_dataset((fs::path(out_dir) / "train.tsv").string(), sim.train);
  write_dataset((fs::path(out_dir) / "eval.tsv").string(), sim.eval);
  write_oracle((fs::path(out_dir) / "eval_oracle.tsv").string(), sim.eval, sim.eval_oracle);

  const RateCheck rc = empirical_rate_check(sim.eval.samples);
  std::cout << "train records: " << sim.train.samples.size()
            << "\neval records: " << sim.eval.samples.size() << "\neval counts S2/S5/S6: "
            << rc.matching << "/" << rc.exposure << "/" << rc.click << "\neval ETR "
            << (rc.etr_defined ? std::to_string(rc.etr) : "undefined") << ", CTR "
            << (rc.ctr_defined ? std::to_string(rc.ctr) : "undefined") << ", ETCTR "
            << (rc.etr_defined ? std::to_string(rc.etctr) : "undefined")
            << "\ncount identity exact: " << (rc.identity_exact ? "yes" : "no") << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_path, const std::string& model_override,
              const std::string& domain_override, int64_t seed) {
  ExperimentConfig cfg = config_from(config_path);
  if (!model_override.empty()) cfg.model = model_override;
  if (!domain_override.empty()) cfg.training_domain = domain_override;
  if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
  cfg.validate();

  const Dataset data = read_dataset(data_path);
  const Dataset train = filter_training_domain(data, cfg.training_domain);
  if (train.samples.empty()) throw ConfigError("train: no records left after domain filtering");
  const ModelSpec spec = build_model_spec(cfg, data);
  std::unique_ptr<Model> model = make_model(spec, cfg.seed);
  std::cout << "training " << cfg.model << " on " << train.samples.size() << " records ("
            << cfg.training_domain << ")\n";
  const TrainResult result = train_loop(*model, train, cfg, &std::cout);
  save_checkpoint(out_path, *model, cfg);
  if (result.aborted) {
    std::cerr << "train: aborted on non-finite loss; wrote last-good checkpoint\n";
    return 1;
  }
  std::cout << "wrote " << out_path << " after " << result.steps << " steps\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path,
             const std::string& oracle_path, const std::string& head_name,
             const std::string& ks_csv, const std::string& report_base) {
  ExperimentConfig cfg;
  std::unique_ptr<Model> model = model_from_checkpoint(ckpt_path, &cfg);
  const Dataset eval = read_dataset(data_path);

  std::vector<int> ks = cfg.eval_ks;
  if (!ks_csv.empty()) {
    ks.clear();
    std::stringstream ss(ks_csv);
    std::string item;
    while (std::getline(ss, item, ',')) ks.push_back(std::stoi(item));
    if (ks.empty()) throw ConfigError("eval: empty --k list");
  }

  std::vector<double> oracle;
  const std::vector<double>* oracle_ptr = nullptr;
  if (!oracle_path.empty()) {
    oracle = read_oracle(oracle_path, eval);
    oracle_ptr = &oracle;
  }

  const MetricsReport report =
      evaluate_model(*model, eval, oracle_ptr, head_from_string(head_name), ks);
  write_reports(report_base, {report});
  std::cout << render_reports_tsv({report});
  std::cout << "wrote " << report_base << ".tsv and " << report_base << ".json\n";
  return kExitOk;
}

int cmd_gradcheck(const std::string& model_name, int64_t seed) {
  const uint64_t s = seed >= 0 ? static_cast<uint64_t>(seed) : 7;
  std::vector<NamedGradCheck> checks;
  if (model_name == "all") {
    checks = gradcheck_all(s);
  } else {
    checks.push_back({model_name, gradcheck_model(model_kind_from_string(model_name), s)});
  }
  bool ok = true;
  for (const NamedGradCheck& c : checks) {
    std::printf("%-22s max relative error %.3e over %zu coordinates (worst %s[%d])\n",
                c.model.c_str(), c.result.max_rel_error, c.result.checked,
                c.result.worst_param.c_str(), c.result.worst_index);
    ok = ok && c.result.max_rel_error < 1e-4;
  }
  std::printf("gradcheck %s\n", ok ? "OK (threshold 1e-4)" : "FAILED (threshold 1e-4)");
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_report(const std::string& in_path) {
  std::cout << render_reports_tsv(read_reports_json(in_path));
  return kExitOk;
}

int cmd_reproduce(const std::string& claim, const std::string& config_path,
                  const std::string& out_dir, int64_t seed) {
  ExperimentConfig cfg = config_from(config_path);
  if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
  const std::string dir = out_dir.empty() ? "reproduce_" + claim : out_dir;
  const ReproduceResult result = reproduce_claim(claim, cfg, dir, std::cout);
  if (!result.pass) {
    std::cerr << "reproduce " << claim << ": directional check failed\n";
    for (const std::string& line : result.assertion_lines)
      if (line.rfind("FAIL", 0) == 0) std::cerr << "  " << line << "\n";
    return kExitCheckFailed;
  }
  std::cout << "reproduce " << claim << ": all directional checks passed\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ecpr: entire-chain pre-ranking workbench"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_path, ckpt_path, oracle_path, report_base;
  std::string model_name = "all", domain, head_name = "t1", ks_csv, claim, in_path;
  int64_t seed = -1;

  CLI::App* sim = app.add_subcommand("simulate", "generate cascade datasets");
  sim->add_option("--config", config_path, "config file");
  sim->add_option("--out", out_path, "output directory")->required();
  sim->add_option("--seed", seed, "seed override");

  CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
  train->add_option("--config", config_path, "config file");
  train->add_option("--data", data_path, "training dataset (train.tsv)")->required();
  train->add_option("--out", out_path, "checkpoint output path")->required();
  train->add_option("--model", model_name, "model kind override");
  train->add_option("--domain", domain, "entire_chain or exposure_only");
  train->add_option("--seed", seed, "seed override");

  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
  ev->add_option("--data", data_path, "evaluation dataset (eval.tsv)")->required();
  ev->add_option("--oracle", oracle_path, "oracle score sidecar (enables RCS)");
  ev->add_option("--head", head_name, "scoring head: t1, t2 or petr");
  ev->add_option("--k", ks_csv, "comma-separated recall cutoffs");
  ev->add_option("--report", report_base, "report path base (.tsv/.json appended)")->required();

  CLI::App* gc = app.add_subcommand("gradcheck", "finite-difference check of model gradients");
  gc->add_option("--model", model_name, "model kind or 'all'");
  gc->add_option("--seed", seed, "seed");

  CLI::App* rep = app.add_subcommand("report", "render a JSON report as TSV");
  rep->add_option("--in", in_path, "report JSON path")->required();

  CLI::App* rp = app.add_subcommand("reproduce", "run a canned desk-scale experiment");
  rp->add_option("--claim", claim, "ssb, rcs or ablation")->required();
  rp->add_option("--config", config_path, "config file");
  rp->add_option("--out", out_path, "output directory");
  rp->add_option("--seed", seed, "base seed override");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kExitConfig;
  }

  try {
    if (sim->parsed()) return cmd_simulate(config_path, out_path, seed);
    if (train->parsed())
      return cmd_train(config_path, data_path, out_path,
                       model_name == "all" ? "" : model_name, domain, seed);
    if (ev->parsed())
      return cmd_eval(ckpt_path, data_path, oracle_path, head_name, ks_csv, report_base);
    if (gc->parsed()) return cmd_gradcheck(model_name, seed);
    if (rep->parsed()) return cmd_report(in_path);
    if (rp->parsed()) return cmd_reproduce(claim, config_path, out_path, seed);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitConfig;
}
