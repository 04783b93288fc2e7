#include <string>

#include <CLI11.hpp>

#include "mlss/cli.hpp"

namespace {

void add_common(CLI::App* cmd, mlss::RunConfig& cfg, std::string& weighting, std::string& mode, std::string& format) {
  cmd->add_option("--data", cfg.data, "CSV with columns y, d_*, x_*, w_*")->required()->check(CLI::ExistingFile);
  cmd->add_option("--folds", cfg.k, "number of cross-fitting folds")->capture_default_str();
  cmd->add_option("--learner", cfg.learner_arg, "learner kind, inline JSON, or @file.json")->capture_default_str();
  cmd->add_option("--variance-learner", cfg.variance_learner_arg,
                  "learner for the efficient-weighting variance regressions (default: --learner)");
  cmd->add_option("--weighting", weighting, "identity or efficient")->capture_default_str();
  cmd->add_option("--covariate-mode", mode, "partial_linear or conditional_mean_only")->capture_default_str();
  cmd->add_option("--alpha", cfg.alpha, "test level")->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "master seed")->capture_default_str();
  cmd->add_option("--out", cfg.out, "report path (default: standard output)");
  cmd->add_option("--format", format, "json or csv")->capture_default_str();
  cmd->add_flag("--hc1", cfg.hc1, "small-sample HC1 rescaling of the sandwich");
  cmd->add_flag("!--lenient", cfg.strict, "ignore unrecognized CSV columns instead of failing");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Split-sample machine-learning instrumental variables"};
  app.require_subcommand(1);
  mlss::RunConfig cfg;
  std::string weighting = "identity";
  std::string mode = "partial_linear";
  std::string format = "json";
  std::string tau_grid;

  auto* estimate = app.add_subcommand("estimate", "pooled estimate with Wald intervals");
  add_common(estimate, cfg, weighting, mode, format);
  auto* ar = app.add_subcommand("ar", "Anderson-Rubin confidence sets");
  add_common(ar, cfg, weighting, mode, format);
  ar->add_option("--tau-grid", tau_grid, "lo:hi:step grid of tau values");
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo experiment");
  simulate->add_option("--config", cfg.config, "experiment config JSON")->required();
  simulate->add_option("--out-dir", cfg.out_dir, "directory for report.json and replications.csv")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : mlss::kExitInput;
  }

  try {
    cfg.command = app.get_subcommands().front()->get_name();
    cfg.weighting = mlss::weighting_from_string(weighting);
    cfg.covariate_mode = mlss::covariate_mode_from_string(mode);
    if (format == "csv") {
      cfg.format = mlss::OutputFormat::csv;
    } else if (format != "json") {
      throw mlss::InputError("--format must be json or csv");
    }
    if (!tau_grid.empty()) cfg.tau_grid = mlss::parse_tau_grid(tau_grid);
  } catch (const mlss::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return mlss::kExitInput;
  }
  return mlss::run_command(cfg);
}
