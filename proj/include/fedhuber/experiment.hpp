#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedhuber/federated.hpp"
#include "fedhuber/simgen.hpp"
#include "fedhuber/tuning.hpp"

namespace fedhuber {

// Invalid experiment specification or command line; maps to exit code 2.
class SpecError : public Error {
 public:
  using Error::Error;
};

enum class Method { iht_local, iht_gp, iht_l2, iht_ml, oracle };

std::string to_string(Method m);
Method parse_method(const std::string& s);

enum class InitMode { zero, l1 };

struct ExperimentSpec {
  ScenarioConfig scenario;
  // When non-empty the tasks are read from these files instead of simulated.
  std::vector<std::filesystem::path> csv_paths;
  std::vector<Method> methods{Method::iht_local, Method::iht_gp, Method::oracle};
  std::size_t replications = 20;
  FederationConfig fed = default_federation();
  // Tune (K, s, q, lambda) per replication when set.
  std::optional<TuningGrid> grid;
  std::filesystem::path output_dir = "results";
  double test_fraction = 0.0;
  std::size_t workers = 1;
  // Fill the wall_ms column; off by default so rows.csv is reproducible.
  bool timing = false;
  InitMode init = InitMode::zero;
  double l1_penalty = 0.1;
  std::size_t l1_iters = 3000;

  static FederationConfig default_federation();
  void validate() const;
};

/// Parses the flat `key = value` format; `#` starts a comment.
ExperimentSpec parse_spec(const std::string& text);
ExperimentSpec load_spec(const std::filesystem::path& path);
/// Applies one `key=value` assignment on top of a parsed spec.
void apply_setting(ExperimentSpec& spec, const std::string& key, const std::string& value);
/// Honors FEDHUBER_SEED when set.
void apply_env_overrides(ExperimentSpec& spec);
/// Every recognized key with a one-line description.
std::vector<std::pair<std::string, std::string>> spec_keys();

struct ResultRow {
  std::string method;
  std::size_t replication = 0;
  // NaN marks either a failed fit or a metric that does not apply.
  double mse = 0.0;
  double fp = 0.0;
  double fn = 0.0;
  double rand_index = 0.0;
  double pe = 0.0;
  double wall_ms = 0.0;
  bool failed = false;
  std::string error;
};

struct MetricSummary {
  double mean = 0.0;
  double se = 0.0;
};

struct SummaryRow {
  std::string method;
  std::size_t count = 0;
  MetricSummary mse, fp, fn, rand_index, pe;
};

struct ExperimentResult {
  std::vector<ResultRow> rows;
  std::vector<SummaryRow> summary;
  bool any_failure = false;
  std::filesystem::path rows_csv;
  std::filesystem::path summary_csv;
};

/// Runs every replication (seed = base seed + r) and method; rows are
/// ordered by (replication, method) regardless of worker scheduling.
std::vector<ResultRow> run_replications(const ExperimentSpec& spec);

/// Per-method mean and standard error; inapplicable (NaN, not failed)
/// entries are skipped, failed rows propagate NaN.
std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows,
                                  const std::vector<Method>& methods);

/// run_replications plus rows.csv and summary.csv in the output directory.
ExperimentResult run_experiment(const ExperimentSpec& spec);

enum class SweepParam { h, delta };
SweepParam parse_sweep_param(const std::string& s);

struct SweepPoint {
  double value = 0.0;
  std::vector<SummaryRow> summary;
  bool any_failure = false;
};

struct SweepResult {
  SweepParam param = SweepParam::h;
  std::vector<SweepPoint> points;
  bool any_failure = false;
  std::filesystem::path csv;
};

/// One summary row per value and method, written to sweep.csv. The h sweep
/// requires setting S3 and the delta sweep setting S4.
SweepResult run_sweep(const ExperimentSpec& spec, SweepParam param,
                      const std::vector<double>& values);

struct TuneReport {
  ModelSelection selection;
  double eta = 0.0;
  std::filesystem::path csv;
};

/// Model selection on the first replication's data, written to tuning.csv.
TuneReport run_tune(const ExperimentSpec& spec);

std::string format_rows_csv(const std::vector<ResultRow>& rows, bool timing);
std::string format_summary_csv(const std::vector<SummaryRow>& summary);

}  // namespace fedhuber
