#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "metagrad/problems.hpp"
#include "metagrad/vec.hpp"

namespace metagrad {

// Declarative experiment description. Field defaults are the documented
// defaults of the CLI; validate() rejects inconsistent combinations with a
// message listing the valid choices.
struct ExperimentConfig {
  std::string problem = "exp-rate";  // exp-rate | mult-noise | mini-render
  std::string optimizer = "meta";    // meta | adam
  int iterations = 100;
  int replicates = 1;
  std::uint64_t seed = 0;

  // optimiser hyperparameters
  double lr = 0.01;
  double beta_f = 0.9;      // proportional-variance EMA decay
  double beta_delta = 0.5;  // decoupled diff-variance EMA decay
  double beta1 = 0.9;       // Adam first moment
  double beta2 = 0.999;     // Adam second moment
  double eps_step = 1e-8;
  double eps_alpha = 1e-30;
  double adam_eps = 1e-8;

  // problem knobs
  int dim = 4;                // mult-noise
  double sigma = 1.0;         // mult-noise noise amplitude
  int samples_per_iter = 32;  // exp-rate / mult-noise draws per iteration
  double target_mean = 2.0;   // exp-rate
  double rate_init = 2.0;     // exp-rate
  int pixel_count = 8;        // mini-render
  int spp = 4;                // mini-render
  std::uint64_t problem_seed = 1234;
  double albedo_init = 0.1;
  double exponent_max = 4.0;

  // trajectory mode: optimise | scripted-linear | scripted-exp
  std::string trajectory = "optimise";
  double traj_rate = 0.05;

  // ablations
  bool no_alpha_clip = false;
  bool independent_variance_samples = false;
  bool non_zero_centred = false;  // reserved; rejected when set

  // finite-difference decoupling norm: global | per-param
  std::string diff_norm = "global";

  // outputs / execution
  int coord = 0;                     // coordinate tracked in scalar series
  double converge_threshold = -1.0;  // parameter-error threshold; <0 disables
  int threads = 0;                   // replicate parallelism; 0 = hardware
  std::string out_csv;
  std::string out_json;

  void validate() const;
};

std::unique_ptr<Problem> make_problem(const ExperimentConfig& cfg);

// Per-iteration time series of one replicate. Diverged runs truncate; the
// series lengths equal iterations_run.
struct RunRecord {
  enum class Status { completed, converged, diverged };
  Status status = Status::completed;
  int iterations_run = 0;
  std::int64_t draws_used = 0;
  std::int64_t evals_used = 0;

  std::vector<Vec> params;
  std::vector<double> loss;
  std::vector<Vec> prop;
  std::vector<Vec> diff;
  std::vector<double> step_sq_norm;
  std::vector<Vec> mean_est;  // meta mean, or Adam bias-corrected first moment
  std::vector<Vec> var_est;   // meta variance, or Adam bias-corrected second moment
  std::vector<Vec> alpha;     // meta only
  std::vector<Vec> delta;
  std::vector<Vec> true_grad;
};

const char* to_string(RunRecord::Status status);

RunRecord run_single(const ExperimentConfig& cfg, int replicate_index);

// Across-replicate reductions of one scalar series, indexed by iteration.
struct SeriesStats {
  std::vector<double> mean, variance, median, q25, q75;
};

struct AggregateReport {
  ExperimentConfig config;
  std::vector<std::string> series_names;  // emission order
  std::map<std::string, SeriesStats> stats;
  std::vector<int> active_replicates;  // replicates still running at each iteration
  int diverged_count = 0;
  std::vector<RunRecord> records;  // ordered by replicate index
};

// Runs all replicates (in parallel when configured) and reduces them in
// replicate order, so the report does not depend on the thread count.
AggregateReport run_experiment(const ExperimentConfig& cfg);

// Aggregate table: one row per iteration per statistic. A non-empty tag
// prepends an optimizer column, so several blocks can share one file.
void write_aggregate_csv(const AggregateReport& report, std::ostream& os,
                         const std::string& tag = "", bool with_header = true);
void write_aggregate_csv(const AggregateReport& report, const std::string& path,
                         const std::string& tag = "");

// Wide per-iteration table of a single replicate.
void write_replicate_csv(const RunRecord& record, std::ostream& os);

// Machine-readable summary (schema_version, config echo, final statistics,
// convergence iteration, divergence counts).
std::string summary_json(const AggregateReport& report);

// Shortest round-trip decimal formatting used by every writer.
std::string format_double(double value);

}  // namespace metagrad
