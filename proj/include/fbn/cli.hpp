#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "fbn/analysis.hpp"
#include "fbn/config.hpp"
#include "fbn/dataset.hpp"
#include "fbn/harness.hpp"
#include "fbn/selftest.hpp"

#include "CLI11.hpp"
#include "json.hpp"

namespace fbn::cli {

namespace fs = std::filesystem;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int jobs = 1;
};

inline FullConfig resolve_config(const CommonArgs& args) {
  FullConfig cfg = load_config(args.config_path, args.overrides);
  if (args.seed_set) cfg.set_seed(args.seed);
  return cfg;
}

// Every run writes its merged config before any computation starts.
inline void write_config_echo(const fs::path& out_dir, const FullConfig& cfg,
                              const nlohmann::json& invocation) {
  ensure_dir(out_dir);
  nlohmann::json echo = cfg.to_json();
  echo["invocation"] = invocation;
  write_file(out_dir / "config.json", echo.dump(2) + "\n");
}

inline int cmd_gen_data(const CommonArgs& args, const std::string& out_dir) {
  FullConfig cfg = resolve_config(args);
  write_config_echo(out_dir, cfg, {{"subcommand", "gen-data"}, {"out", out_dir}});
  const Cohort cohort = generate_synthetic(cfg.data);
  save_cohort(cohort, out_dir);
  log_info("gen-data: wrote " + std::to_string(cohort.n()) + " samples (v=" +
           std::to_string(cohort.v()) + ", t=" + std::to_string(cohort.t()) + ") to " + out_dir);
  return 0;
}

inline int cmd_train(const CommonArgs& args, const std::string& data_dir,
                     const std::string& out_dir) {
  FullConfig cfg = resolve_config(args);
  write_config_echo(out_dir, cfg,
                    {{"subcommand", "train"}, {"data_dir", data_dir}, {"out", out_dir}});
  const Cohort cohort = load_cohort(data_dir);
  RunRecord record = cross_validate(cohort, cfg.run, args.jobs, /*with_final_graphs=*/true);
  write_run_record(out_dir, record);
  std::printf("train: %s/%s mean AUROC %.4f (std %.4f) over %zu fold-runs\n",
              cfg.run.graph_source.c_str(), cfg.run.loss_variant.c_str(), record.mean_auroc,
              record.std_auroc, record.folds.size());
  return 0;
}

inline int cmd_ablate(const CommonArgs& args, const std::string& data_dir,
                      const std::string& out_dir) {
  FullConfig cfg = resolve_config(args);
  write_config_echo(out_dir, cfg,
                    {{"subcommand", "ablate"}, {"data_dir", data_dir}, {"out", out_dir}});
  const Cohort cohort = load_cohort(data_dir);
  const auto records = run_ablation(cohort, cfg.run, args.jobs);
  nlohmann::json table = nlohmann::json::object();
  std::printf("%-8s %-10s %-10s\n", "variant", "mean", "std");
  for (const auto& [variant, record] : records) {
    write_run_record(fs::path(out_dir) / variant, record);
    table[variant] = summary_json(record);
    std::printf("%-8s %-10.4f %-10.4f\n", variant.c_str(), record.mean_auroc, record.std_auroc);
  }
  write_file(fs::path(out_dir) / "summary.json", table.dump(2) + "\n");
  return 0;
}

inline int cmd_compare_graphs(const CommonArgs& args, const std::string& data_dir,
                              const std::string& out_dir) {
  FullConfig cfg = resolve_config(args);
  write_config_echo(out_dir, cfg,
                    {{"subcommand", "compare-graphs"}, {"data_dir", data_dir}, {"out", out_dir}});
  const Cohort cohort = load_cohort(data_dir);
  const auto records = run_graph_comparison(cohort, cfg.run, args.jobs);
  nlohmann::json table = nlohmann::json::object();
  std::printf("%-10s %-10s %-10s\n", "graph", "mean", "std");
  for (const auto& [source, record] : records) {
    write_run_record(fs::path(out_dir) / source, record);
    table[source] = summary_json(record);
    std::printf("%-10s %-10.4f %-10.4f\n", source.c_str(), record.mean_auroc, record.std_auroc);
  }
  write_file(fs::path(out_dir) / "summary.json", table.dump(2) + "\n");
  return 0;
}

inline int cmd_analyze(const CommonArgs& args, const std::string& run_dir, std::string data_dir,
                       std::string out_dir, bool bonferroni_flag) {
  FullConfig cfg = resolve_config(args);
  if (bonferroni_flag) cfg.analyze_bonferroni = true;

  const fs::path run_path(run_dir);
  if (data_dir.empty()) {
    const fs::path config_path = run_path / "config.json";
    if (!fs::exists(config_path))
      throw data_error("no --data given and " + config_path.string() + " is missing");
    nlohmann::json echo = nlohmann::json::parse(read_file(config_path), nullptr, false);
    if (echo.is_discarded() || !echo.contains("invocation") ||
        !echo["invocation"].contains("data_dir"))
      throw data_error("run config " + config_path.string() + " does not record a data_dir");
    data_dir = echo["invocation"]["data_dir"].get<std::string>();
  }
  if (out_dir.empty()) out_dir = (run_path / "analysis").string();

  const Cohort cohort = load_cohort(data_dir);
  const fs::path graphs_dir = run_path / "graphs";
  if (!fs::exists(graphs_dir))
    throw data_error("run directory has no graphs/ subdirectory: " + graphs_dir.string());
  std::vector<Tensor> graphs;
  for (std::size_t i = 0; i < cohort.n(); ++i) {
    const fs::path p = graphs_dir / ("sample_" + std::to_string(i) + ".csv");
    if (!fs::exists(p)) throw data_error("missing graph file " + p.string());
    Tensor g = read_matrix_csv(p);
    if (g.rows() != cohort.v() || g.cols() != cohort.v())
      throw data_error("graph size disagrees with cohort in " + p.string());
    graphs.push_back(std::move(g));
  }

  write_analysis(out_dir, graphs, cohort.labels(), cohort, cfg.analyze_alpha,
                 cfg.analyze_bonferroni);
  log_info("analyze: wrote heatmaps, edge tests and module scores to " + out_dir);
  return 0;
}

inline int cmd_selftest() {
  bool all_pass = true;
  auto report = [&](const CheckResult& r) {
    std::printf("[%s] %-28s %.3e (threshold %.0e)\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                r.value, r.threshold);
    all_pass = all_pass && r.pass;
  };
  for (const CheckResult& r : gradient_check_suite()) report(r);
  report(end_to_end_gradient_check(EncoderVariant::kCnn));
  report(end_to_end_gradient_check(EncoderVariant::kGru));
  for (const CheckResult& r : loss_identity_suite()) report(r);
  std::printf("selftest: %s\n", all_pass ? "all checks passed" : "FAILURES detected");
  return all_pass ? 0 : 4;
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"fbn: learnable functional connectivity graphs with a GCN classifier"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string data_dir, out_dir, run_dir;
  bool bonferroni = false;

  auto add_common = [&](CLI::App* cmd, bool with_jobs) {
    cmd->add_option("--config", args.config_path, "flat-key JSON config file");
    cmd->add_option("--override", args.overrides, "config override key=value (repeatable)");
    cmd->add_option("--seed", args.seed, "master seed")->each([&](const std::string&) {
      args.seed_set = true;
    });
    if (with_jobs) cmd->add_option("--jobs", args.jobs, "parallel fold-runs (default 1)");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic cohort");
  gen->add_option("--out", out_dir, "output cohort directory")->required();
  add_common(gen, false);

  CLI::App* train = app.add_subcommand("train", "cross-validated training run");
  train->add_option("--data", data_dir, "cohort directory")->required();
  train->add_option("--out", out_dir, "run output directory")->required();
  add_common(train, true);

  CLI::App* ablate = app.add_subcommand("ablate", "loss-component ablation (ce, ce+gl, ce+sl, full)");
  ablate->add_option("--data", data_dir, "cohort directory")->required();
  ablate->add_option("--out", out_dir, "output directory")->required();
  add_common(ablate, true);

  CLI::App* compare = app.add_subcommand("compare-graphs",
                                         "learnable vs pearson vs uniform graph sources");
  compare->add_option("--data", data_dir, "cohort directory")->required();
  compare->add_option("--out", out_dir, "output directory")->required();
  add_common(compare, true);

  CLI::App* analyze = app.add_subcommand("analyze", "interpretability outputs for a finished run");
  analyze->add_option("--run", run_dir, "run directory (graphs/ + config.json)")->required();
  analyze->add_option("--data", data_dir, "cohort directory (default: from run config)");
  analyze->add_option("--out", out_dir, "analysis output directory (default: <run>/analysis)");
  analyze->add_flag("--bonferroni", bonferroni, "apply Bonferroni correction to edge tests");
  add_common(analyze, false);

  app.add_subcommand("selftest", "gradient checks and loss-identity oracles");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::fprintf(stderr, "%s\n", app.help().c_str());
    return 2;
  }

  try {
    if (app.got_subcommand("gen-data")) return cmd_gen_data(args, out_dir);
    if (app.got_subcommand("train")) return cmd_train(args, data_dir, out_dir);
    if (app.got_subcommand("ablate")) return cmd_ablate(args, data_dir, out_dir);
    if (app.got_subcommand("compare-graphs")) return cmd_compare_graphs(args, data_dir, out_dir);
    if (app.got_subcommand("analyze"))
      return cmd_analyze(args, run_dir, data_dir, out_dir, bonferroni);
    if (app.got_subcommand("selftest")) return cmd_selftest();
    std::fprintf(stderr, "error: no subcommand\n%s\n", app.help().c_str());
    return 2;
  } catch (const usage_error& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const numeric_error& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 4;
  } catch (const data_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}

}  // namespace fbn::cli
