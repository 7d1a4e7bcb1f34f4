#include "fedhuber/experiment.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <thread>

#include "fedhuber/metrics.hpp"
#include "fedhuber/random.hpp"

namespace fedhuber {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::uint64_t kSplitStream = 0x73706C6974ULL;

std::string trim(std::string_view s) {
  const auto issp = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && issp(s.front())) s.remove_prefix(1);
  while (!s.empty() && issp(s.back())) s.remove_suffix(1);
  return std::string(s);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw SpecError("invalid value '" + value + "' for '" + key + "': expected " + expected);
}

double to_double(const std::string& key, const std::string& value) {
  double v = 0.0;
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (value.empty() || ec != std::errc() || ptr != end || !std::isfinite(v)) {
    bad_value(key, value, "a finite number");
  }
  return v;
}

std::size_t to_size(const std::string& key, const std::string& value) {
  std::size_t v = 0;
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, v);
  if (value.empty() || ec != std::errc() || ptr != end) {
    bad_value(key, value, "a non-negative integer");
  }
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "true or false");
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& key, const std::string& value, F convert) {
  std::vector<T> out;
  for (const auto& item : split_list(value)) out.push_back(convert(key, item));
  return out;
}

TuningGrid& grid_of(ExperimentSpec& spec) {
  if (!spec.grid) spec.grid.emplace();
  return *spec.grid;
}

struct KeyInfo {
  const char* name;
  const char* help;
  void (*apply)(ExperimentSpec&, const std::string&, const std::string&);
};

// clang-format off
const std::array kKeys{
  KeyInfo{"setting", "simulation setting S1..S4",
    [](ExperimentSpec& s, const std::string&, const std::string& v) {
      try { s.scenario.setting = parse_setting(v); } catch (const ParameterError& e) { throw SpecError(e.what()); }
    }},
  KeyInfo{"n", "samples per task",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.scenario.n = to_size(k, v); }},
  KeyInfo{"p", "number of covariates",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.scenario.p = to_size(k, v); }},
  KeyInfo{"m", "number of tasks",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.scenario.m = to_size(k, v); }},
  KeyInfo{"noise", "noise law: normal, t2 or cauchy",
    [](ExperimentSpec& s, const std::string&, const std::string& v) {
      try { s.scenario.noise = parse_noise(v); } catch (const ParameterError& e) { throw SpecError(e.what()); }
    }},
  KeyInfo{"h", "within-group heterogeneity radius (S3)",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.scenario.h_scale = to_double(k, v); }},
  KeyInfo{"delta", "center scale (S4)",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.scenario.delta_scale = to_double(k, v); }},
  KeyInfo{"seed", "base seed; replication r uses seed + r",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.scenario.seed = to_size(k, v); }},
  KeyInfo{"csv", "comma-separated task files (response first) instead of simulation",
    [](ExperimentSpec& s, const std::string&, const std::string& v) {
      s.csv_paths.clear();
      for (const auto& item : split_list(v)) s.csv_paths.emplace_back(item);
    }},
  KeyInfo{"methods", "comma list of iht-local, iht-gp, iht-l2, iht-ml, oracle",
    [](ExperimentSpec& s, const std::string&, const std::string& v) {
      s.methods.clear();
      for (const auto& item : split_list(v)) s.methods.push_back(parse_method(item));
    }},
  KeyInfo{"replications", "number of replications",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.replications = to_size(k, v); }},
  KeyInfo{"output_dir", "directory for rows.csv and summary.csv",
    [](ExperimentSpec& s, const std::string&, const std::string& v) { s.output_dir = v; }},
  KeyInfo{"test_fraction", "held-out fraction per task for prediction error, in [0,1)",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.test_fraction = to_double(k, v); }},
  KeyInfo{"workers", "replication worker threads",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.workers = to_size(k, v); }},
  KeyInfo{"timing", "fill the wall_ms column",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.timing = to_bool(k, v); }},
  KeyInfo{"init", "local initializer: zero or l1",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) {
      if (v == "zero") s.init = InitMode::zero;
      else if (v == "l1") s.init = InitMode::l1;
      else bad_value(k, v, "zero or l1");
    }},
  KeyInfo{"l1_penalty", "penalty of the l1-Huber initializer",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.l1_penalty = to_double(k, v); }},
  KeyInfo{"l1_iters", "iterations of the l1-Huber initializer",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.l1_iters = to_size(k, v); }},
  KeyInfo{"rounds", "federation rounds",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.rounds = to_size(k, v); }},
  KeyInfo{"round_tol", "stop when no estimate moves more than this (0 runs all rounds)",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.tol = to_double(k, v); }},
  KeyInfo{"eta", "gradient step size",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.local.eta = to_double(k, v); }},
  KeyInfo{"sigma", "Huber robustification parameter",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.local.sigma = to_double(k, v); }},
  KeyInfo{"t_max", "local IHT iteration cap",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.local.t_max = to_size(k, v); }},
  KeyInfo{"local_tol", "local IHT early-stop distance",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.local.tol = to_double(k, v); }},
  KeyInfo{"s", "per-task sparsity",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) {
      const bool tied = s.fed.budget.q == s.fed.budget.s;
      s.fed.budget.s = to_size(k, v);
      if (tied) s.fed.budget.q = s.fed.budget.s;
    }},
  KeyInfo{"q", "group sparsity (defaults to s)",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.budget.q = to_size(k, v); }},
  KeyInfo{"k", "number of groups",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.central.k = to_size(k, v); }},
  KeyInfo{"lambda", "fusion penalty",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.central.lambda = to_double(k, v); }},
  KeyInfo{"eta1", "proximal step of the offset update",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.central.eta1 = to_double(k, v); }},
  KeyInfo{"inner_iters", "alternating passes per central solve",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.central.inner_iters = to_size(k, v); }},
  KeyInfo{"central_tol", "central objective change tolerance",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.central.tol = to_double(k, v); }},
  KeyInfo{"kmeans_restarts", "k-means restarts for the initial assignment",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.central.kmeans_restarts = to_size(k, v); }},
  KeyInfo{"central_seed", "k-means seed",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.central.seed = to_size(k, v); }},
  KeyInfo{"warm_start", "reuse the previous round's groups instead of reinitializing",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.central.warm_start = to_bool(k, v); }},
  KeyInfo{"reset_offsets", "restart offsets at zero on warm rounds",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.central.reset_offsets = to_bool(k, v); }},
  KeyInfo{"select_by_client_loss", "pick the k-means restart by total client loss",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { s.fed.central.select_by_client_loss = to_bool(k, v); }},
  KeyInfo{"grid_k", "tuning grid for K",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { grid_of(s).k_values = to_list<std::size_t>(k, v, to_size); }},
  KeyInfo{"grid_s", "tuning grid for s",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { grid_of(s).s_values = to_list<std::size_t>(k, v, to_size); }},
  KeyInfo{"grid_q", "tuning grid for q (empty means q = s)",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { grid_of(s).q_values = to_list<std::size_t>(k, v, to_size); }},
  KeyInfo{"grid_lambda", "tuning grid for lambda",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { grid_of(s).lambda_values = to_list<double>(k, v, to_double); }},
  KeyInfo{"grid_eta", "step-size grid",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { grid_of(s).eta_values = to_list<double>(k, v, to_double); }},
  KeyInfo{"c1", "criterion weight on s",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { grid_of(s).c1 = to_double(k, v); }},
  KeyInfo{"c2", "criterion weight on K",
    [](ExperimentSpec& s, const std::string& k, const std::string& v) { grid_of(s).c2 = to_double(k, v); }},
};
// clang-format on

// --- numeric formatting -----------------------------------------------------

void append_number(std::string& out, double v) {
  if (std::isnan(v)) {
    out += "nan";
    return;
  }
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  out.append(buf.data(), ptr);
}

void append_cell(std::string& out, double v, bool failed) {
  out += ',';
  if (failed || !std::isnan(v)) append_number(out, failed ? kNaN : v);
}

// --- data preparation -------------------------------------------------------

struct Split {
  std::vector<TaskDataset> train;
  std::vector<TaskDataset> test;
};

TaskDataset take_rows(const TaskDataset& d, const std::vector<Eigen::Index>& rows) {
  TaskDataset out;
  out.task_id = d.task_id;
  out.x.resize(static_cast<Eigen::Index>(rows.size()), d.p());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    out.x.row(r) = d.x.row(rows[i]);
    out.y[r] = d.y[rows[i]];
  }
  return out;
}

Split split_tasks(const std::vector<TaskDataset>& tasks, double fraction,
                  std::uint64_t seed) {
  Split out;
  if (fraction <= 0.0) {
    out.train = tasks;
    return out;
  }
  for (const auto& d : tasks) {
    const auto n = static_cast<std::size_t>(d.n());
    auto n_test = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n)));
    n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
    std::vector<Eigen::Index> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<Eigen::Index>(i);
    Rng rng = substream(seed, {kSplitStream, d.task_id});
    for (std::size_t i = n; i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
      if (j >= i) j = i - 1;
      std::swap(order[i - 1], order[j]);
    }
    std::vector<Eigen::Index> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
    std::vector<Eigen::Index> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    out.train.push_back(take_rows(d, train));
    out.test.push_back(take_rows(d, test));
  }
  return out;
}

double lower_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

std::vector<Vector> initial_fits(const std::vector<TaskDataset>& tasks,
                                 const ExperimentSpec& spec,
                                 const FederationConfig& fed) {
  LocalFitConfig local = fed.local;
  local.s = fed.budget.s;
  local.loss = Loss::huber;
  std::vector<Vector> out;
  out.reserve(tasks.size());
  for (const auto& d : tasks) {
    std::optional<Vector> start;
    if (spec.init == InitMode::l1) {
      start = hard_threshold(
          l1_huber_init(d, local.sigma, spec.l1_penalty, spec.l1_iters, local.eta),
          local.s);
    }
    out.push_back(local_iht_fit(d, local, start));
  }
  return out;
}

double choose_eta(const std::vector<TaskDataset>& tasks, const std::vector<double>& etas,
                  const LocalFitConfig& local) {
  std::vector<double> picks;
  picks.reserve(tasks.size());
  for (const auto& d : tasks) picks.push_back(select_eta(d, etas, local));
  return lower_median(std::move(picks));
}

struct Replicate {
  std::vector<TaskDataset> tasks;
  std::optional<GroundTruth> truth;
};

Replicate make_replicate(const ExperimentSpec& spec,
                         const std::vector<TaskDataset>& loaded, std::size_t r) {
  Replicate rep;
  if (!spec.csv_paths.empty()) {
    rep.tasks = loaded;
    return rep;
  }
  ScenarioConfig sc = spec.scenario;
  sc.seed = spec.scenario.seed + r;
  Scenario scen = gen_setting(sc);
  rep.tasks = std::move(scen.datasets);
  rep.truth = std::move(scen.truth);
  return rep;
}

std::vector<Method> unique_methods(const std::vector<Method>& methods) {
  std::vector<Method> out;
  for (const Method m : methods) {
    if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
  }
  return out;
}

ResultRow failed_row(Method method, std::size_t r, const std::string& why) {
  ResultRow row;
  row.method = to_string(method);
  row.replication = r;
  row.mse = row.fp = row.fn = row.rand_index = row.pe = row.wall_ms = kNaN;
  row.failed = true;
  row.error = why;
  return row;
}

ResultRow score(Method method, std::size_t r, const std::vector<Vector>& estimates,
                const Labels* labels, const Replicate& rep,
                const std::vector<TaskDataset>& test, double sigma) {
  ResultRow row;
  row.method = to_string(method);
  row.replication = r;
  row.mse = row.fp = row.fn = row.rand_index = row.pe = row.wall_ms = kNaN;
  if (rep.truth) {
    row.mse = mse(estimates, rep.truth->betas_true);
    const SupportErrors e = fp_fn(estimates, rep.truth->betas_true);
    row.fp = e.fp;
    row.fn = e.fn;
    if (labels && labels->size() >= 2) row.rand_index = rand_index(*labels, rep.truth->labels_true);
  }
  if (!test.empty()) row.pe = training_huber_loss(test, estimates, sigma);
  for (const double v : {row.mse, row.fp, row.fn, row.rand_index, row.pe}) {
    if (std::isinf(v)) throw DomainError("non-finite metric");
  }
  return row;
}

std::vector<ResultRow> run_one(const ExperimentSpec& spec,
                               const std::vector<TaskDataset>& loaded,
                               const std::vector<Method>& methods, std::size_t r) {
  const double sigma = spec.fed.local.sigma;
  Replicate rep;
  Split split;
  FederationConfig fed = spec.fed;
  std::vector<Vector> init;
  std::string setup_error;
  try {
    rep = make_replicate(spec, loaded, r);
    split = split_tasks(rep.tasks, spec.test_fraction, spec.scenario.seed + r);
    if (spec.grid) {
      if (!spec.grid->eta_values.empty()) {
        fed.local.eta = choose_eta(split.train, spec.grid->eta_values, fed.local);
      }
      fed = select_model(split.train, *spec.grid, fed).best;
    }
    init = initial_fits(split.train, spec, fed);
  } catch (const std::exception& e) {
    setup_error = e.what();
  }

  std::vector<ResultRow> rows;
  for (const Method method : methods) {
    if (!setup_error.empty()) {
      rows.push_back(failed_row(method, r, setup_error));
      continue;
    }
    const auto start = std::chrono::steady_clock::now();
    try {
      ResultRow row;
      if (method == Method::iht_local) {
        row = score(method, r, init, nullptr, rep, split.test, sigma);
      } else {
        FederationConfig cfg = fed;
        if (method == Method::iht_l2) cfg.loss = Loss::squared;
        if (method == Method::iht_ml) cfg.mode = FitMode::pooled_ml;
        if (method == Method::oracle) {
          cfg.mode = FitMode::oracle_labels;
          cfg.oracle_groups = rep.truth->labels_true;
        }
        const FitResult fit = federated_fit(split.train, cfg, init);
        row = score(method, r, fit.estimates, &fit.labels, rep, split.test, sigma);
      }
      if (spec.timing) {
        row.wall_ms = std::chrono::duration<double, std::milli>(
                          std::chrono::steady_clock::now() - start)
                          .count();
      }
      rows.push_back(std::move(row));
    } catch (const std::exception& e) {
      rows.push_back(failed_row(method, r, e.what()));
    }
  }
  return rows;
}

MetricSummary summarize_metric(const std::vector<const ResultRow*>& rows,
                               double ResultRow::*field) {
  std::vector<double> values;
  for (const ResultRow* row : rows) {
    if (row->failed) return {kNaN, kNaN};
    const double v = row->*field;
    if (!std::isnan(v)) values.push_back(v);
  }
  if (values.empty()) return {kNaN, kNaN};
  double sum = 0.0;
  for (const double v : values) sum += v;
  const double k = static_cast<double>(values.size());
  const double mean = sum / k;
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / (k - 1.0) / k)};
}

void append_summary_fields(std::string& out, const SummaryRow& row) {
  out += row.method;
  out += ',';
  out += std::to_string(row.count);
  for (const MetricSummary* m : {&row.mse, &row.fp, &row.fn, &row.rand_index, &row.pe}) {
    for (const double v : {m->mean, m->se}) {
      out += ',';
      if (!std::isnan(v)) append_number(out, v);
    }
  }
  out += '\n';
}

constexpr const char* kSummaryColumns =
    "count,mse_mean,mse_se,fp_mean,fp_se,fn_mean,fn_se,rand_index_mean,"
    "rand_index_se,pe_mean,pe_se";

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw SpecError("cannot write " + path.string());
  out << text;
  if (!out) throw SpecError("failed writing " + path.string());
}

void prepare_output(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw SpecError("cannot create output directory " + dir.string() + ": " + ec.message());
}

}  // namespace

// --- methods ----------------------------------------------------------------

std::string to_string(Method m) {
  switch (m) {
    case Method::iht_local: return "iht-local";
    case Method::iht_gp: return "iht-gp";
    case Method::iht_l2: return "iht-l2";
    case Method::iht_ml: return "iht-ml";
    case Method::oracle: return "oracle";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (const Method m : {Method::iht_local, Method::iht_gp, Method::iht_l2,
                         Method::iht_ml, Method::oracle}) {
    if (s == to_string(m)) return m;
  }
  throw SpecError("unknown method '" + s +
                  "' (expected iht-local, iht-gp, iht-l2, iht-ml or oracle)");
}

// --- spec -------------------------------------------------------------------

FederationConfig ExperimentSpec::default_federation() {
  FederationConfig fed;
  fed.rounds = 300;
  fed.tol = 1e-7;
  fed.local.eta = 0.5;
  fed.local.sigma = 3.0;
  fed.local.t_max = 2000;
  fed.budget = {3, 3};
  fed.central.k = 2;
  fed.central.lambda = 0.05;
  fed.central.warm_start = false;
  return fed;
}

void ExperimentSpec::validate() const {
  if (methods.empty()) throw SpecError("spec: at least one method is required");
  if (replications < 1) throw SpecError("spec: replications must be >= 1");
  if (workers < 1) throw SpecError("spec: workers must be >= 1");
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
    throw SpecError("spec: test_fraction must lie in [0, 1)");
  }
  if (!(l1_penalty >= 0.0) || l1_iters < 1) {
    throw SpecError("spec: l1 initializer needs penalty >= 0 and iters >= 1");
  }
  if (csv_paths.empty()) {
    try {
      scenario.validate();
    } catch (const ParameterError& e) {
      throw SpecError(e.what());
    }
  } else if (std::find(methods.begin(), methods.end(), Method::oracle) != methods.end()) {
    throw SpecError("spec: the oracle method needs simulated data with known groups");
  }
  if (grid) {
    if (grid->k_values.empty() || grid->s_values.empty() || grid->lambda_values.empty()) {
      throw SpecError("spec: grid_k, grid_s and grid_lambda must all be given");
    }
  }
  // With files, p is known only after loading; the fit validates then.
  if (csv_paths.empty() && !grid) {
    try {
      fed.validate(scenario.m, scenario.p);
    } catch (const ParameterError& e) {
      throw SpecError(e.what());
    }
  }
}

void apply_setting(ExperimentSpec& spec, const std::string& key, const std::string& value) {
  const std::string k = trim(key);
  const std::string v = trim(value);
  for (const auto& info : kKeys) {
    if (k == info.name) {
      info.apply(spec, k, v);
      return;
    }
  }
  throw SpecError("unknown key '" + k + "'");
}

ExperimentSpec parse_spec(const std::string& text) {
  ExperimentSpec spec;
  bool noise_given = false;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw SpecError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(std::string_view(line).substr(0, eq));
    try {
      apply_setting(spec, key, line.substr(eq + 1));
    } catch (const SpecError& e) {
      throw SpecError("line " + std::to_string(line_no) + ": " + e.what());
    }
    if (key == "noise") noise_given = true;
  }
  if (!noise_given) spec.scenario.noise = default_noise(spec.scenario.setting);
  return spec;
}

ExperimentSpec load_spec(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SpecError("cannot open spec file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  try {
    return parse_spec(text.str());
  } catch (const SpecError& e) {
    throw SpecError(path.string() + ": " + e.what());
  }
}

void apply_env_overrides(ExperimentSpec& spec) {
  if (const char* seed = std::getenv("FEDHUBER_SEED")) {
    spec.scenario.seed = to_size("FEDHUBER_SEED", trim(seed));
  }
}

std::vector<std::pair<std::string, std::string>> spec_keys() {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& info : kKeys) out.emplace_back(info.name, info.help);
  return out;
}

// --- running ----------------------------------------------------------------

std::vector<ResultRow> run_replications(const ExperimentSpec& spec) {
  spec.validate();
  const auto methods = unique_methods(spec.methods);
  std::vector<TaskDataset> loaded;
  if (!spec.csv_paths.empty()) loaded = load_csv_tasks(spec.csv_paths);

  std::vector<std::vector<ResultRow>> per_rep(spec.replications);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t r = next++; r < spec.replications; r = next++) {
      per_rep[r] = run_one(spec, loaded, methods, r);
    }
  };
  const std::size_t n_threads = std::min(spec.workers, spec.replications);
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  std::vector<ResultRow> rows;
  for (auto& block : per_rep) {
    for (auto& row : block) rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SummaryRow> summarize(const std::vector<ResultRow>& rows,
                                  const std::vector<Method>& methods) {
  std::vector<SummaryRow> out;
  for (const Method method : unique_methods(methods)) {
    const std::string name = to_string(method);
    std::vector<const ResultRow*> mine;
    for (const auto& row : rows) {
      if (row.method == name) mine.push_back(&row);
    }
    SummaryRow s;
    s.method = name;
    s.count = mine.size();
    s.mse = summarize_metric(mine, &ResultRow::mse);
    s.fp = summarize_metric(mine, &ResultRow::fp);
    s.fn = summarize_metric(mine, &ResultRow::fn);
    s.rand_index = summarize_metric(mine, &ResultRow::rand_index);
    s.pe = summarize_metric(mine, &ResultRow::pe);
    out.push_back(s);
  }
  return out;
}

std::string format_rows_csv(const std::vector<ResultRow>& rows, bool timing) {
  std::string out = "method,replication,mse,fp,fn,rand_index,pe,wall_ms\n";
  for (const auto& row : rows) {
    out += row.method;
    out += ',';
    out += std::to_string(row.replication);
    for (const double v : {row.mse, row.fp, row.fn, row.rand_index, row.pe}) {
      append_cell(out, v, row.failed);
    }
    out += ',';
    if (timing && !std::isnan(row.wall_ms)) append_number(out, row.wall_ms);
    out += '\n';
  }
  return out;
}

std::string format_summary_csv(const std::vector<SummaryRow>& summary) {
  std::string out = std::string("method,") + kSummaryColumns + "\n";
  for (const auto& row : summary) append_summary_fields(out, row);
  return out;
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.validate();
  prepare_output(spec.output_dir);
  ExperimentResult result;
  result.rows = run_replications(spec);
  result.summary = summarize(result.rows, spec.methods);
  for (const auto& row : result.rows) result.any_failure = result.any_failure || row.failed;
  result.rows_csv = spec.output_dir / "rows.csv";
  result.summary_csv = spec.output_dir / "summary.csv";
  write_file(result.rows_csv, format_rows_csv(result.rows, spec.timing));
  write_file(result.summary_csv, format_summary_csv(result.summary));
  return result;
}

SweepParam parse_sweep_param(const std::string& s) {
  if (s == "h") return SweepParam::h;
  if (s == "delta") return SweepParam::delta;
  throw SpecError("unknown sweep parameter '" + s + "' (expected h or delta)");
}

SweepResult run_sweep(const ExperimentSpec& spec, SweepParam param,
                      const std::vector<double>& values) {
  if (values.empty()) throw SpecError("sweep: empty value list");
  if (!spec.csv_paths.empty()) throw SpecError("sweep: needs simulated data");
  const Setting needed = param == SweepParam::h ? Setting::s3 : Setting::s4;
  if (spec.scenario.setting != needed) {
    throw SpecError(std::string("sweep: parameter ") +
                    (param == SweepParam::h ? "h requires setting S3" : "delta requires setting S4"));
  }
  for (const double v : values) {
    if (!std::isfinite(v) || (param == SweepParam::h && v < 0.0)) {
      throw SpecError("sweep: invalid value");
    }
  }
  spec.validate();
  prepare_output(spec.output_dir);

  SweepResult result;
  result.param = param;
  const char* name = param == SweepParam::h ? "h" : "delta";
  std::string text = std::string("param,value,method,") + kSummaryColumns + "\n";
  for (const double v : values) {
    ExperimentSpec point = spec;
    if (param == SweepParam::h) point.scenario.h_scale = v;
    else point.scenario.delta_scale = v;
    const auto rows = run_replications(point);
    SweepPoint sp;
    sp.value = v;
    sp.summary = summarize(rows, spec.methods);
    for (const auto& row : rows) sp.any_failure = sp.any_failure || row.failed;
    result.any_failure = result.any_failure || sp.any_failure;
    for (const auto& row : sp.summary) {
      text += name;
      text += ',';
      append_number(text, v);
      text += ',';
      append_summary_fields(text, row);
    }
    result.points.push_back(std::move(sp));
  }
  result.csv = spec.output_dir / "sweep.csv";
  write_file(result.csv, text);
  return result;
}

TuneReport run_tune(const ExperimentSpec& spec) {
  if (!spec.grid) throw SpecError("tune: the spec defines no grid (grid_k, grid_s, grid_lambda)");
  spec.validate();
  prepare_output(spec.output_dir);
  std::vector<TaskDataset> loaded;
  if (!spec.csv_paths.empty()) loaded = load_csv_tasks(spec.csv_paths);
  const Replicate rep = make_replicate(spec, loaded, 0);
  const Split split = split_tasks(rep.tasks, spec.test_fraction, spec.scenario.seed);

  TuneReport report;
  FederationConfig fed = spec.fed;
  if (!spec.grid->eta_values.empty()) {
    fed.local.eta = choose_eta(split.train, spec.grid->eta_values, fed.local);
  }
  report.eta = fed.local.eta;
  report.selection = select_model(split.train, *spec.grid, fed);

  std::string text = "k,s,q,lambda,loss,criterion\n";
  for (const auto& row : report.selection.table) {
    text += std::to_string(row.point.k) + ',' + std::to_string(row.point.s) + ',' +
            std::to_string(row.point.q) + ',';
    append_number(text, row.point.lambda);
    text += ',';
    append_number(text, row.loss_term);
    text += ',';
    append_number(text, row.criterion);
    text += '\n';
  }
  report.csv = spec.output_dir / "tuning.csv";
  write_file(report.csv, text);
  return report;
}

}  // namespace fedhuber
