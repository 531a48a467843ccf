#include "metagrad/harness.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "metagrad/adam.hpp"
#include "metagrad/meta.hpp"
#include "metagrad/moment2.hpp"
#include "metagrad/stats.hpp"

namespace metagrad {

namespace {

constexpr double kTinyCoordStep = 1e-150;  // per-param decoupling guard

bool is_scripted(const ExperimentConfig& cfg) { return cfg.trajectory != "optimise"; }

TrajectorySchedule make_schedule(const ExperimentConfig& cfg, const Problem& problem) {
  const auto truth = problem.truth_params();
  if (!truth)
    throw std::invalid_argument("scripted trajectory requires a problem with known truth");
  TrajectorySchedule sched;
  sched.kind = cfg.trajectory == "scripted-exp" ? TrajectorySchedule::Kind::exp_decay
                                                : TrajectorySchedule::Kind::linear;
  sched.from = problem.initial_params();
  sched.to = *truth;
  sched.rate = cfg.traj_rate;
  sched.horizon = cfg.iterations;
  return sched;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (problem != "exp-rate" && problem != "mult-noise" && problem != "mini-render")
    throw std::invalid_argument("unknown problem '" + problem +
                                "' (valid: exp-rate, mult-noise, mini-render)");
  if (optimizer != "meta" && optimizer != "adam")
    throw std::invalid_argument("unknown optimizer '" + optimizer + "' (valid: meta, adam)");
  if (trajectory != "optimise" && trajectory != "scripted-linear" && trajectory != "scripted-exp")
    throw std::invalid_argument("unknown trajectory '" + trajectory +
                                "' (valid: optimise, scripted-linear, scripted-exp)");
  if (diff_norm != "global" && diff_norm != "per-param")
    throw std::invalid_argument("unknown diff-norm '" + diff_norm +
                                "' (valid: global, per-param)");
  if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
  if (replicates < 1) throw std::invalid_argument("replicates must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(beta_f >= 0.0 && beta_f < 1.0)) throw std::invalid_argument("beta-f must lie in [0, 1)");
  if (!(beta_delta >= 0.0 && beta_delta < 1.0))
    throw std::invalid_argument("beta-delta must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("beta2 must lie in [0, 1)");
  if (coord < 0) throw std::invalid_argument("coord must be >= 0");
  if (non_zero_centred)
    throw std::invalid_argument(
        "non-zero-centred variance approximation is a reserved ablation and is not implemented");
}

std::unique_ptr<Problem> make_problem(const ExperimentConfig& cfg) {
  if (cfg.problem == "exp-rate")
    return std::make_unique<ExpRateProblem>(cfg.target_mean, cfg.samples_per_iter, cfg.rate_init);
  if (cfg.problem == "mult-noise")
    return std::make_unique<MultNoiseQuadratic>(Vec::Zero(cfg.dim), cfg.sigma,
                                                cfg.samples_per_iter);
  if (cfg.problem == "mini-render")
    return std::make_unique<MiniRenderProblem>(cfg.pixel_count, cfg.spp, cfg.problem_seed,
                                               cfg.albedo_init, cfg.exponent_max);
  throw std::invalid_argument("unknown problem '" + cfg.problem +
                              "' (valid: exp-rate, mult-noise, mini-render)");
}

const char* to_string(RunRecord::Status status) {
  switch (status) {
    case RunRecord::Status::completed: return "completed";
    case RunRecord::Status::converged: return "converged";
    case RunRecord::Status::diverged: return "diverged";
  }
  return "unknown";
}

RunRecord run_single(const ExperimentConfig& cfg, int replicate_index) {
  cfg.validate();
  const auto problem = make_problem(cfg);
  const Eigen::Index dim = problem->dim();
  if (cfg.coord >= dim) throw std::invalid_argument("coord exceeds problem dimension");

  Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(replicate_index));
  const bool scripted = is_scripted(cfg);
  TrajectorySchedule sched;
  if (scripted) sched = make_schedule(cfg, *problem);

  Vec params = scripted ? sched.at(0) : problem->initial_params();
  Vec prev = params;

  const bool use_meta = cfg.optimizer == "meta";
  MetaEstimator meta(cfg.lr, cfg.eps_step, cfg.eps_alpha);
  meta.clip_enabled = !cfg.no_alpha_clip;
  Adam adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
  Moment2 moment_prop(cfg.beta_f);
  Moment2 moment_diff(cfg.beta_delta);

  RunRecord rec;
  rec.params.reserve(cfg.iterations);
  rec.loss.reserve(cfg.iterations);

  for (int i = 0; i < cfg.iterations; ++i) {
    if (!all_finite(params)) {
      rec.status = RunRecord::Status::diverged;
      break;
    }

    GradientSamplePair pair;
    try {
      pair = use_meta ? problem->sample_pair(params, prev, rng)
                      : problem->sample_pair(params, params, rng);
    } catch (const std::domain_error&) {
      rec.status = RunRecord::Status::diverged;
      break;
    }
    const bool two_point = use_meta && !(params == prev).all();
    rec.draws_used += problem->draws_per_sample();
    rec.evals_used += problem->draws_per_sample() * (two_point ? 2 : 1);

    Vec delta, mean_est, var_est;
    if (use_meta) {
      const GradientSamplePair* var_src = &pair;
      GradientSamplePair indep_pair;
      if (cfg.independent_variance_samples) {
        indep_pair = problem->sample_pair(params, prev, rng);
        rec.draws_used += problem->draws_per_sample();
        rec.evals_used += problem->draws_per_sample() * (two_point ? 2 : 1);
        var_src = &indep_pair;
      }

      moment_prop.step(var_src->prop);
      Vec var_diff;
      if (cfg.diff_norm == "per-param") {
        const Vec coord_step = (params - prev).abs();
        if (var_src->step_sq_norm > 0.0)
          moment_diff.step(var_src->diff / coord_step.max(kTinyCoordStep));
        var_diff = moment_diff.count() > 0 ? Vec(moment_diff.m2() * coord_step.square())
                                           : Vec(Vec::Zero(dim));
      } else {
        if (var_src->step_sq_norm > 0.0)
          moment_diff.step(var_src->diff / std::sqrt(var_src->step_sq_norm));
        var_diff = moment_diff.count() > 0
                       ? rescale_diff_variance(moment_diff.m2(), pair.step_sq_norm)
                       : Vec(Vec::Zero(dim));
      }

      delta = meta.step(pair, moment_prop.m2(), var_diff);
      mean_est = meta.mean;
      var_est = meta.var;
      rec.alpha.push_back(meta.alpha_prev);
    } else {
      delta = adam.step(pair.prop);
      mean_est = adam.m_hat();
      var_est = adam.v_hat();
    }

    rec.params.push_back(params);
    rec.loss.push_back(problem->loss(params));
    rec.prop.push_back(pair.prop);
    rec.diff.push_back(pair.diff);
    rec.step_sq_norm.push_back(pair.step_sq_norm);
    rec.mean_est.push_back(std::move(mean_est));
    rec.var_est.push_back(std::move(var_est));
    rec.delta.push_back(delta);
    const auto grad = problem->true_gradient(params);
    rec.true_grad.push_back(grad ? *grad : Vec(Vec::Constant(dim, std::nan(""))));
    rec.iterations_run = i + 1;

    prev = params;
    if (scripted) {
      params = sched.at(i + 1);
    } else {
      params += delta;
      problem->project(params);
    }
  }

  if (rec.status != RunRecord::Status::diverged && cfg.converge_threshold > 0.0 &&
      rec.iterations_run > 0) {
    const auto truth = problem->truth_params();
    if (truth) {
      const double err = (rec.params.back() - *truth).matrix().norm();
      if (err < cfg.converge_threshold) rec.status = RunRecord::Status::converged;
    }
  }
  return rec;
}

namespace {

using Extractor = std::function<double(const RunRecord&, int)>;

std::vector<std::pair<std::string, Extractor>> make_extractors(const ExperimentConfig& cfg,
                                                               const Problem& problem) {
  const int c = cfg.coord;
  std::vector<std::pair<std::string, Extractor>> out;
  const auto truth = problem.truth_params();
  if (truth) {
    const Vec t = *truth;
    out.emplace_back("param_err", [t](const RunRecord& r, int i) {
      return (r.params[static_cast<std::size_t>(i)] - t).matrix().norm();
    });
  }
  out.emplace_back("loss",
                   [](const RunRecord& r, int i) { return r.loss[static_cast<std::size_t>(i)]; });
  out.emplace_back("prop", [c](const RunRecord& r, int i) {
    return r.prop[static_cast<std::size_t>(i)][c];
  });
  out.emplace_back("diff", [c](const RunRecord& r, int i) {
    return r.diff[static_cast<std::size_t>(i)][c];
  });
  out.emplace_back("grad_est", [c](const RunRecord& r, int i) {
    return r.mean_est[static_cast<std::size_t>(i)][c];
  });
  out.emplace_back("est_var", [c](const RunRecord& r, int i) {
    return r.var_est[static_cast<std::size_t>(i)][c];
  });
  if (cfg.optimizer == "meta")
    out.emplace_back("alpha", [c](const RunRecord& r, int i) {
      return r.alpha[static_cast<std::size_t>(i)][c];
    });
  out.emplace_back("delta", [c](const RunRecord& r, int i) {
    return r.delta[static_cast<std::size_t>(i)][c];
  });
  out.emplace_back("true_grad", [c](const RunRecord& r, int i) {
    return r.true_grad[static_cast<std::size_t>(i)][c];
  });
  out.emplace_back("step_sq_norm", [](const RunRecord& r, int i) {
    return r.step_sq_norm[static_cast<std::size_t>(i)];
  });
  return out;
}

}  // namespace

AggregateReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  AggregateReport report;
  report.config = cfg;
  report.records.resize(static_cast<std::size_t>(cfg.replicates));

  unsigned thread_count = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads)
                                          : std::thread::hardware_concurrency();
  thread_count = std::max(1u, std::min(thread_count, static_cast<unsigned>(cfg.replicates)));

  if (thread_count == 1) {
    for (int r = 0; r < cfg.replicates; ++r)
      report.records[static_cast<std::size_t>(r)] = run_single(cfg, r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> workers;
    workers.reserve(thread_count);
    for (unsigned w = 0; w < thread_count; ++w)
      workers.emplace_back([&] {
        for (int r = next.fetch_add(1); r < cfg.replicates; r = next.fetch_add(1))
          report.records[static_cast<std::size_t>(r)] = run_single(cfg, r);
      });
    for (auto& worker : workers) worker.join();
  }

  const auto problem = make_problem(cfg);
  const auto extractors = make_extractors(cfg, *problem);

  report.active_replicates.assign(static_cast<std::size_t>(cfg.iterations), 0);
  for (int i = 0; i < cfg.iterations; ++i)
    for (const auto& rec : report.records)
      if (rec.iterations_run > i) ++report.active_replicates[static_cast<std::size_t>(i)];

  for (const auto& [name, extract] : extractors) {
    SeriesStats stats;
    stats.mean.reserve(cfg.iterations);
    for (int i = 0; i < cfg.iterations; ++i) {
      std::vector<double> values;
      values.reserve(report.records.size());
      for (const auto& rec : report.records)
        if (rec.iterations_run > i) values.push_back(extract(rec, i));
      stats.mean.push_back(mean_of(values));
      stats.variance.push_back(variance_of(values));
      stats.median.push_back(quantile(values, 0.5));
      stats.q25.push_back(quantile(values, 0.25));
      stats.q75.push_back(quantile(values, 0.75));
    }
    report.series_names.push_back(name);
    report.stats.emplace(name, std::move(stats));
  }

  for (const auto& rec : report.records)
    if (rec.status == RunRecord::Status::diverged) ++report.diverged_count;
  return report;
}

std::string format_double(double value) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void write_aggregate_csv(const AggregateReport& report, std::ostream& os, const std::string& tag,
                         bool with_header) {
  if (with_header) {
    if (tag.empty())
      os << "iteration,statistic,value\n";
    else
      os << "optimizer,iteration,statistic,value\n";
  }
  const std::string prefix = tag.empty() ? "" : tag + ",";
  const std::pair<const char*, const std::vector<double> SeriesStats::*> stat_fields[] = {
      {"mean", &SeriesStats::mean},     {"var", &SeriesStats::variance},
      {"median", &SeriesStats::median}, {"q25", &SeriesStats::q25},
      {"q75", &SeriesStats::q75}};
  for (int i = 0; i < report.config.iterations; ++i) {
    for (const auto& name : report.series_names) {
      const auto& stats = report.stats.at(name);
      for (const auto& [suffix, field] : stat_fields)
        os << prefix << i << ',' << name << '_' << suffix << ','
           << format_double((stats.*field)[static_cast<std::size_t>(i)]) << '\n';
    }
    os << prefix << i << ",active_replicates,"
       << report.active_replicates[static_cast<std::size_t>(i)] << '\n';
  }
}

void write_aggregate_csv(const AggregateReport& report, const std::string& path,
                         const std::string& tag) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open output file: " + path);
  write_aggregate_csv(report, os, tag);
  if (!os.good()) throw std::runtime_error("write failed: " + path);
}

void write_replicate_csv(const RunRecord& record, std::ostream& os) {
  const Eigen::Index dim = record.params.empty() ? 0 : record.params.front().size();
  os << "iteration,loss,step_sq_norm";
  const bool has_alpha = !record.alpha.empty();
  const auto emit_header = [&](const char* base) {
    for (Eigen::Index j = 0; j < dim; ++j) os << ',' << base << '_' << j;
  };
  emit_header("param");
  emit_header("prop");
  emit_header("diff");
  emit_header("mean_est");
  emit_header("var_est");
  if (has_alpha) emit_header("alpha");
  emit_header("delta");
  emit_header("true_grad");
  os << '\n';
  const auto emit_vec = [&](const Vec& v) {
    for (Eigen::Index j = 0; j < v.size(); ++j) os << ',' << format_double(v[j]);
  };
  for (int i = 0; i < record.iterations_run; ++i) {
    const auto k = static_cast<std::size_t>(i);
    os << i << ',' << format_double(record.loss[k]) << ','
       << format_double(record.step_sq_norm[k]);
    emit_vec(record.params[k]);
    emit_vec(record.prop[k]);
    emit_vec(record.diff[k]);
    emit_vec(record.mean_est[k]);
    emit_vec(record.var_est[k]);
    if (has_alpha) emit_vec(record.alpha[k]);
    emit_vec(record.delta[k]);
    emit_vec(record.true_grad[k]);
    os << '\n';
  }
}

std::string summary_json(const AggregateReport& report) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  const auto& cfg = report.config;
  j["problem"] = cfg.problem;
  j["optimizer"] = cfg.optimizer;
  j["iterations"] = cfg.iterations;
  j["replicates"] = cfg.replicates;
  j["seed"] = cfg.seed;
  j["lr"] = cfg.lr;
  j["beta_f"] = cfg.beta_f;
  j["beta_delta"] = cfg.beta_delta;
  j["trajectory"] = cfg.trajectory;
  j["diverged_replicates"] = report.diverged_count;

  nlohmann::ordered_json finals;
  const int last = cfg.iterations - 1;
  for (const auto& name : report.series_names) {
    const auto& stats = report.stats.at(name);
    nlohmann::ordered_json s;
    s["mean"] = stats.mean[static_cast<std::size_t>(last)];
    s["median"] = stats.median[static_cast<std::size_t>(last)];
    s["q25"] = stats.q25[static_cast<std::size_t>(last)];
    s["q75"] = stats.q75[static_cast<std::size_t>(last)];
    finals[name] = s;
  }
  j["final"] = finals;

  int convergence_iteration = -1;
  if (cfg.converge_threshold > 0.0 && report.stats.count("param_err")) {
    const auto& median = report.stats.at("param_err").median;
    for (int i = 0; i < cfg.iterations; ++i)
      if (median[static_cast<std::size_t>(i)] < cfg.converge_threshold) {
        convergence_iteration = i;
        break;
      }
  }
  j["convergence_iteration"] = convergence_iteration;
  j["converge_threshold"] = cfg.converge_threshold;

  if (!report.records.empty()) {
    const auto& first = report.records.front();
    j["draws_per_iteration"] =
        first.iterations_run > 0 ? first.draws_used / first.iterations_run : 0;
    j["evals_per_iteration"] =
        first.iterations_run > 0 ? first.evals_used / first.iterations_run : 0;
  }
  return j.dump(2) + "\n";
}

}  // namespace metagrad
