#include "metagrad/cli.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "metagrad/harness.hpp"
#include "metagrad/validation.hpp"

namespace metagrad {

namespace {

// Flat configuration file: one `key = value` per line, `#` starts a comment,
// keys are the long option names without leading dashes. Values are appended
// to the argument list as `--key=value` unless the option already appears on
// the command line, so explicit flags always win.
std::vector<std::string> expand_config_file(std::vector<std::string> args) {
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      path = args[i].substr(9);
  }
  if (path.empty()) return args;

  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file: " + path);
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument(path + ":" + std::to_string(line_no) +
                                  ": expected `key = value`");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": empty key");
    const std::string flag = "--" + key;
    bool supplied = false;
    for (const auto& arg : args)
      if (arg == flag || arg.rfind(flag + "=", 0) == 0) supplied = true;
    if (!supplied) args.push_back(flag + "=" + value);
  }
  return args;
}

void add_common_options(CLI::App& cmd, ExperimentConfig& cfg, std::string& config_path) {
  cmd.footer(
      "Aggregate CSV columns: iteration,statistic,value (compare prepends an optimizer\n"
      "column). Statistics appear per iteration in fixed order: for each series\n"
      "param_err, loss, prop, diff, grad_est, est_var, alpha (meta only), delta,\n"
      "true_grad, step_sq_norm the stats mean, var, median, q25, q75; then\n"
      "active_replicates. Vector series report the --coord coordinate.");
  cmd.add_option("--config", config_path,
                 "flat `key = value` file; command-line flags override its values");

  cmd.add_option("--problem", cfg.problem, "exp-rate | mult-noise | mini-render")
      ->capture_default_str();
  cmd.add_option("--optimizer", cfg.optimizer, "meta | adam")->capture_default_str();
  cmd.add_option("--iterations", cfg.iterations, "optimisation iterations per replicate")
      ->capture_default_str();
  cmd.add_option("--replicates", cfg.replicates, "independent seeded replicates")
      ->capture_default_str();
  cmd.add_option("--seed", cfg.seed, "base seed; replicate r uses stream (seed, r)")
      ->capture_default_str();

  cmd.add_option("--lr", cfg.lr, "learning rate")->capture_default_str();
  cmd.add_option("--beta-f", cfg.beta_f, "proportional-variance EMA decay")
      ->capture_default_str();
  cmd.add_option("--beta-delta", cfg.beta_delta, "decoupled diff-variance EMA decay")
      ->capture_default_str();
  cmd.add_option("--beta1", cfg.beta1, "Adam first-moment decay")->capture_default_str();
  cmd.add_option("--beta2", cfg.beta2, "Adam second-moment decay")->capture_default_str();
  cmd.add_option("--eps-step", cfg.eps_step, "meta step denominator guard")
      ->capture_default_str();
  cmd.add_option("--eps-alpha", cfg.eps_alpha, "alpha denominator guard")->capture_default_str();
  cmd.add_option("--adam-eps", cfg.adam_eps, "Adam step denominator guard")
      ->capture_default_str();

  cmd.add_option("--dim", cfg.dim, "mult-noise parameter count")->capture_default_str();
  cmd.add_option("--sigma", cfg.sigma, "mult-noise amplitude")->capture_default_str();
  cmd.add_option("--samples-per-iter", cfg.samples_per_iter,
                 "draws per iteration (exp-rate, mult-noise)")
      ->capture_default_str();
  cmd.add_option("--target-mean", cfg.target_mean, "exp-rate target")->capture_default_str();
  cmd.add_option("--rate-init", cfg.rate_init, "exp-rate initial rate")->capture_default_str();
  cmd.add_option("--pixel-count", cfg.pixel_count, "mini-render pixels")->capture_default_str();
  cmd.add_option("--spp", cfg.spp, "mini-render samples per pixel per iteration (>= 2)")
      ->capture_default_str();
  cmd.add_option("--problem-seed", cfg.problem_seed, "mini-render procedural generation seed")
      ->capture_default_str();
  cmd.add_option("--albedo-init", cfg.albedo_init, "mini-render initial albedo")
      ->capture_default_str();
  cmd.add_option("--exponent-max", cfg.exponent_max, "mini-render max shape exponent")
      ->capture_default_str();

  cmd.add_option("--trajectory", cfg.trajectory, "optimise | scripted-linear | scripted-exp")
      ->capture_default_str();
  cmd.add_option("--traj-rate", cfg.traj_rate, "scripted-exp decay rate")->capture_default_str();

  cmd.add_flag("--no-alpha-clip", cfg.no_alpha_clip, "disable alpha clipping (ablation)");
  cmd.add_flag("--independent-variance-samples", cfg.independent_variance_samples,
               "feed the variance EMAs from a second, independent sample pair (ablation)");
  cmd.add_flag("--non-zero-centred", cfg.non_zero_centred, "reserved ablation (rejected)");
  cmd.add_option("--diff-norm", cfg.diff_norm,
                 "step norm used to decouple the diff variance: global | per-param")
      ->capture_default_str();

  cmd.add_option("--coord", cfg.coord, "coordinate tracked in the scalar series")
      ->capture_default_str();
  cmd.add_option("--converge-threshold", cfg.converge_threshold,
                 "parameter-error threshold for the convergence iteration (< 0 disables)")
      ->capture_default_str();
  cmd.add_option("--threads", cfg.threads, "replicate worker threads (0 = hardware)")
      ->capture_default_str();
  cmd.add_option("--out", cfg.out_csv, "aggregate CSV path (compare/ablate: prefix)");
  cmd.add_option("--summary", cfg.out_json, "JSON summary path");
}

double final_median(const AggregateReport& report, const std::string& series) {
  const auto it = report.stats.find(series);
  if (it == report.stats.end()) return std::numeric_limits<double>::quiet_NaN();
  return it->second.median.back();
}

void print_brief(const AggregateReport& report) {
  const auto& cfg = report.config;
  std::cout << cfg.problem << " / " << cfg.optimizer << ": " << cfg.replicates << " replicates x "
            << cfg.iterations << " iterations";
  if (report.diverged_count > 0) std::cout << ", " << report.diverged_count << " diverged";
  const double err = final_median(report, "param_err");
  if (!std::isnan(err)) std::cout << ", final median param err " << format_double(err);
  std::cout << ", final median loss " << format_double(final_median(report, "loss")) << "\n";
}

int exit_code_for(const AggregateReport& report) {
  return report.diverged_count == report.config.replicates ? 2 : 0;
}

int run_command(ExperimentConfig cfg, int dump_replicate, const std::string& dump_out) {
  AggregateReport report = run_experiment(cfg);
  if (!cfg.out_csv.empty()) write_aggregate_csv(report, cfg.out_csv);
  if (!cfg.out_json.empty()) {
    std::ofstream os(cfg.out_json, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open output file: " + cfg.out_json);
    os << summary_json(report);
  }
  if (dump_replicate >= 0) {
    if (dump_replicate >= cfg.replicates)
      throw std::invalid_argument("--dump-replicate exceeds replicate count");
    std::ofstream os(dump_out, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open output file: " + dump_out);
    write_replicate_csv(report.records[static_cast<std::size_t>(dump_replicate)], os);
  }
  print_brief(report);
  return exit_code_for(report);
}

// Grid sweep helper: returns the run with the lowest final median parameter
// error (falling back to loss when the problem has no known truth).
AggregateReport best_over_lrs(ExperimentConfig cfg, const std::vector<double>& lrs) {
  AggregateReport best;
  double best_score = std::numeric_limits<double>::infinity();
  for (double lr : lrs) {
    cfg.lr = lr;
    AggregateReport report = run_experiment(cfg);
    double score = final_median(report, "param_err");
    if (std::isnan(score)) score = final_median(report, "loss");
    if (std::isnan(score)) score = std::numeric_limits<double>::infinity();
    if (score < best_score) {
      best_score = score;
      best = std::move(report);
    }
  }
  return best;
}

int compare_command(ExperimentConfig cfg, int budget_samples, const std::string& budget_model,
                    std::vector<double> sweep_lrs) {
  if (budget_model != "draws" && budget_model != "evals")
    throw std::invalid_argument("unknown budget model '" + budget_model +
                                "' (valid: draws, evals)");
  if (sweep_lrs.empty()) sweep_lrs = {cfg.lr};

  ExperimentConfig meta_cfg = cfg;
  meta_cfg.optimizer = "meta";
  ExperimentConfig adam_cfg = cfg;
  adam_cfg.optimizer = "adam";

  if (budget_samples > 0) {
    // `draws` gives both optimisers the same per-iteration draw count; the
    // finite-difference estimator reuses those draws at the previous
    // parameters. `evals` charges that second evaluation by halving the
    // meta batch.
    const int meta_budget =
        budget_model == "evals" ? std::max(2, budget_samples / 2) : budget_samples;
    auto apply = [](ExperimentConfig& c, int batch) {
      c.samples_per_iter = batch;
      c.spp = batch;
    };
    apply(meta_cfg, meta_budget);
    apply(adam_cfg, budget_samples);
  }

  AggregateReport meta_report = best_over_lrs(meta_cfg, sweep_lrs);
  AggregateReport adam_report = best_over_lrs(adam_cfg, sweep_lrs);

  if (!cfg.out_csv.empty()) {
    std::ofstream os(cfg.out_csv, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open output file: " + cfg.out_csv);
    write_aggregate_csv(meta_report, os, "meta", true);
    write_aggregate_csv(adam_report, os, "adam", false);
  }
  if (!cfg.out_json.empty()) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["problem"] = cfg.problem;
    j["budget_model"] = budget_model;
    j["meta"] = nlohmann::ordered_json::parse(summary_json(meta_report));
    j["adam"] = nlohmann::ordered_json::parse(summary_json(adam_report));
    std::ofstream os(cfg.out_json, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open output file: " + cfg.out_json);
    os << j.dump(2) << "\n";
  }
  print_brief(meta_report);
  print_brief(adam_report);
  return std::max(exit_code_for(meta_report), exit_code_for(adam_report));
}

std::string variant_path(const std::string& base, const std::string& variant) {
  const std::string suffix = ".csv";
  if (base.size() > suffix.size() &&
      base.compare(base.size() - suffix.size(), suffix.size(), suffix) == 0)
    return base.substr(0, base.size() - suffix.size()) + "-" + variant + suffix;
  return base + "-" + variant + suffix;
}

int ablate_command(ExperimentConfig cfg) {
  struct Variant {
    std::string name;
    void (*apply)(ExperimentConfig&);
  };
  const Variant variants[] = {
      {"baseline", [](ExperimentConfig&) {}},
      {"no-alpha-clip", [](ExperimentConfig& c) { c.no_alpha_clip = true; }},
      {"independent-variance",
       [](ExperimentConfig& c) { c.independent_variance_samples = true; }},
  };

  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["problem"] = cfg.problem;
  int worst = 0;
  for (const auto& variant : variants) {
    ExperimentConfig vcfg = cfg;
    variant.apply(vcfg);
    AggregateReport report = run_experiment(vcfg);
    if (!cfg.out_csv.empty())
      write_aggregate_csv(report, variant_path(cfg.out_csv, variant.name));
    nlohmann::ordered_json v;
    v["final_param_err_median"] = final_median(report, "param_err");
    v["final_loss_median"] = final_median(report, "loss");
    v["diverged_replicates"] = report.diverged_count;
    j["variants"][variant.name] = v;
    std::cout << variant.name << ": ";
    print_brief(report);
    worst = std::max(worst, exit_code_for(report));
  }
  if (!cfg.out_json.empty()) {
    std::ofstream os(cfg.out_json, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open output file: " + cfg.out_json);
    os << j.dump(2) << "\n";
  }
  return worst;
}

int validate_command(std::uint64_t seed) {
  const auto results = run_validation_suite(seed);
  bool all_pass = true;
  for (const auto& result : results) {
    std::cout << (result.pass ? "[PASS] " : "[FAIL] ") << result.name << ": " << result.detail
              << "\n";
    if (!result.pass) all_pass = false;
  }
  std::cout << (all_pass ? "all properties hold\n" : "some properties failed\n");
  return all_pass ? 0 : 1;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Gradient meta-estimation experiments: recurrent combination of Monte Carlo "
               "gradient samples with finite-difference updates, against an Adam baseline."};
  app.require_subcommand(1);

  ExperimentConfig run_cfg, compare_cfg, ablate_cfg;
  std::string config_path;
  int dump_replicate = -1;
  std::string dump_out = "replicate.csv";
  int budget_samples = 0;
  std::string budget_model = "draws";
  std::vector<double> sweep_lrs;
  std::uint64_t validate_seed = 20240801;

  CLI::App* run = app.add_subcommand("run", "run one experiment and write its time series");
  add_common_options(*run, run_cfg, config_path);
  run->add_option("--dump-replicate", dump_replicate,
                  "also write one replicate's full per-iteration table");
  run->add_option("--dump-out", dump_out, "path for --dump-replicate")->capture_default_str();

  CLI::App* compare =
      app.add_subcommand("compare", "meta vs Adam on the same problem and sample budget");
  add_common_options(*compare, compare_cfg, config_path);
  compare->add_option("--budget-samples", budget_samples,
                      "per-iteration draw budget applied to both optimisers");
  compare->add_option("--budget-model", budget_model,
                      "draws: equal draw counts; evals: charge the finite-difference "
                      "re-evaluation by halving the meta batch")
      ->capture_default_str();
  compare->add_option("--sweep-lr", sweep_lrs,
                      "comma-separated learning-rate grid; each optimiser keeps its best run")
      ->delimiter(',');

  CLI::App* ablate =
      app.add_subcommand("ablate", "run the ablation switches next to the baseline");
  add_common_options(*ablate, ablate_cfg, config_path);

  CLI::App* validate = app.add_subcommand("validate", "run the statistical invariant suite");
  validate->add_option("--seed", validate_seed, "suite seed")->capture_default_str();

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = expand_config_file(std::move(args));
    std::vector<const char*> expanded;
    expanded.reserve(args.size() + 1);
    expanded.push_back(argc > 0 ? argv[0] : "metagrad");
    for (const auto& arg : args) expanded.push_back(arg.c_str());
    app.parse(static_cast<int>(expanded.size()), expanded.data());
    if (*run) return run_command(run_cfg, dump_replicate, dump_out);
    if (*compare) return compare_command(compare_cfg, budget_samples, budget_model, sweep_lrs);
    if (*ablate) return ablate_command(ablate_cfg);
    if (*validate) return validate_command(validate_seed);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace metagrad
