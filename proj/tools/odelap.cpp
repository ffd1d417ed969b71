// Command-line front end: simulate | fit | laplace | mcmc | compare |
// band | ingest.  Exit codes: 0 ok, 2 input error, 3 numerical-validity
// failure, 4 convergence/mixing failure.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "odelap/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Laplace covariance correction for ODE state-space models"};
  app.require_subcommand(1);

  std::string config_path, dataset_path, mode_path, report_path, out_path;
  std::string variant = "relaxed", reduce = "schur", schema = "generic";
  std::string proposal_path, out_csv, out_json;
  bool repair = false;
  std::vector<std::string> report_paths;

  auto add_config = [&](CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path,
                    "config JSON path or preset name "
                    "(fn-s3.1 | lorenz96-s3.2 | sir-s4-synthetic)")
        ->required();
  };

  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  add_config(sim);
  sim->add_option("-o,--out", out_path, "output dataset CSV")->required();

  auto* fit = app.add_subcommand("fit", "MAP fit of the relaxed posterior");
  add_config(fit);
  fit->add_option("-d,--dataset", dataset_path, "dataset CSV")->required();
  fit->add_option("-o,--out", out_path, "output mode JSON")->required();

  auto* lap = app.add_subcommand("laplace", "Laplace covariance at the mode");
  add_config(lap);
  lap->add_option("-d,--dataset", dataset_path, "dataset CSV")->required();
  lap->add_option("--mode", mode_path, "mode JSON")->required();
  lap->add_option("--variant", variant, "relaxed | original")
      ->check(CLI::IsMember({"relaxed", "original"}));
  lap->add_option("--reduce", reduce, "schur | full")
      ->check(CLI::IsMember({"schur", "full"}));
  lap->add_flag("--repair,!--no-repair", repair,
                "repair a non-PD Hessian by eigenvalue clipping");
  lap->add_option("-o,--out", out_path, "output report JSON")->required();

  auto* mcmc = app.add_subcommand("mcmc", "DRAM oracle chains at the mode");
  add_config(mcmc);
  mcmc->add_option("-d,--dataset", dataset_path, "dataset CSV")->required();
  mcmc->add_option("--mode", mode_path, "mode JSON")->required();
  mcmc->add_option("--proposal-report", proposal_path,
                   "report JSON used to seed the proposal covariance");
  mcmc->add_option("--out-chain", out_csv, "output chain CSV")->required();
  mcmc->add_option("--out-report", out_path, "output report JSON")->required();

  int repeat = 0;
  auto* cmp = app.add_subcommand("compare", "compare covariance reports");
  cmp->add_option("-r,--report", report_paths, "report JSON paths (>= 2)");
  cmp->add_option("--repeat", repeat,
                  "repeat-experiment mode: run N seeded datasets end to end");
  cmp->add_option("-c,--config", config_path,
                  "config for repeat mode (path or preset)");
  cmp->add_option("--out-json", out_json, "comparison JSON");
  cmp->add_option("--out-csv", out_csv, "output table CSV")->required();

  auto* band = app.add_subcommand("band", "95% pointwise credible band");
  add_config(band);
  band->add_option("--mode", mode_path, "mode JSON")->required();
  band->add_option("--report", report_path, "covariance report JSON")
      ->required();
  band->add_option("-o,--out", out_path, "band CSV")->required();

  auto* ing = app.add_subcommand("ingest", "validate and normalize a CSV");
  ing->add_option("-i,--input", dataset_path, "input CSV")->required();
  ing->add_option("--schema", schema, "sir | generic")
      ->check(CLI::IsMember({"sir", "generic"}));
  ing->add_option("-o,--out", out_path, "normalized dataset CSV")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed())
      return odelap::cmd_simulate(odelap::load_config(config_path), out_path);
    if (fit->parsed())
      return odelap::cmd_fit(odelap::load_config(config_path), dataset_path,
                             out_path);
    if (lap->parsed())
      return odelap::cmd_laplace(odelap::load_config(config_path),
                                 dataset_path, mode_path, variant, reduce,
                                 repair, out_path);
    if (mcmc->parsed())
      return odelap::cmd_mcmc(odelap::load_config(config_path), dataset_path,
                              mode_path, out_csv, out_path, proposal_path);
    if (cmp->parsed()) {
      if (repeat > 0) {
        if (config_path.empty()) {
          std::cerr << "compare --repeat needs --config\n";
          return odelap::kExitInput;
        }
        odelap::run_repeat_experiment(odelap::load_config(config_path), repeat,
                                      out_csv);
        return odelap::kExitOk;
      }
      if (out_json.empty() || report_paths.size() < 2) {
        std::cerr << "compare needs --out-json and at least two --report\n";
        return odelap::kExitInput;
      }
      return odelap::cmd_compare(report_paths, out_json, out_csv);
    }
    if (band->parsed())
      return odelap::cmd_band(odelap::load_config(config_path), mode_path,
                              report_path, out_path);
    if (ing->parsed())
      return odelap::cmd_ingest(dataset_path, schema, out_path);
  } catch (const odelap::StalledOptimizationError& e) {
    std::cerr << e.what() << "\n";
    return odelap::kExitConvergence;
  } catch (const odelap::MixingError& e) {
    std::cerr << e.what() << "\n";
    return odelap::kExitConvergence;
  } catch (const odelap::NotPdError& e) {
    std::cerr << e.what() << "\n";
    return odelap::kExitNumerical;
  } catch (const odelap::IntegrationError& e) {
    std::cerr << e.what() << "\n";
    return odelap::kExitNumerical;
  } catch (const odelap::InputError& e) {
    std::cerr << e.what() << "\n";
    return odelap::kExitInput;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return odelap::kExitInput;
  }
  return odelap::kExitInput;
}
