// Command-line experiment runner.
//
//   fedhuber run <spec> [--set key=value ...]
//   fedhuber sweep <spec> --param h --values 0,0.5,1 [--set key=value ...]
//   fedhuber tune <spec> [--set key=value ...]
//   fedhuber keys
//
// Exit codes: 0 success, 1 at least one fit failed, 2 usage error.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fedhuber/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFitFailure = 1;
constexpr int kUsage = 2;

fedhuber::ExperimentSpec build_spec(const std::string& path,
                                    const std::vector<std::string>& sets) {
  fedhuber::ExperimentSpec spec = fedhuber::load_spec(path);
  for (const auto& assignment : sets) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) {
      throw fedhuber::SpecError("--set expects key=value, got '" + assignment + "'");
    }
    fedhuber::apply_setting(spec, assignment.substr(0, eq), assignment.substr(eq + 1));
  }
  fedhuber::apply_env_overrides(spec);
  return spec;
}

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size() || !std::isfinite(v)) {
        throw fedhuber::SpecError("--values: '" + item + "' is not a number");
      }
      out.push_back(v);
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

std::string cell(double v) {
  if (std::isnan(v)) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void print_summary(const std::vector<fedhuber::SummaryRow>& summary) {
  std::printf("%-10s %6s %10s %10s %8s %8s %8s %10s\n", "method", "count", "mse",
              "mse_se", "fp", "fn", "ri", "pe");
  for (const auto& row : summary) {
    std::printf("%-10s %6zu %10s %10s %8s %8s %8s %10s\n", row.method.c_str(),
                row.count, cell(row.mse.mean).c_str(), cell(row.mse.se).c_str(),
                cell(row.fp.mean).c_str(), cell(row.fn.mean).c_str(),
                cell(row.rand_index.mean).c_str(), cell(row.pe.mean).c_str());
  }
}

void report_failures(const std::vector<fedhuber::ResultRow>& rows) {
  for (const auto& row : rows) {
    if (row.failed) {
      std::cerr << "fit failed: " << row.method << " replication " << row.replication
                << ": " << row.error << "\n";
    }
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust clustered federated sparse regression experiments"};
  app.require_subcommand(1);

  std::string spec_path;
  std::vector<std::string> sets;
  std::string param;
  std::string values;

  auto* run = app.add_subcommand("run", "Run every replication and method in a spec");
  run->add_option("spec", spec_path, "Spec file")->required();
  run->add_option("--set", sets, "Override a spec key (key=value)");

  auto* sweep = app.add_subcommand("sweep", "Sweep h (S3) or delta (S4)");
  sweep->add_option("spec", spec_path, "Spec file")->required();
  sweep->add_option("--param", param, "h or delta")->required();
  sweep->add_option("--values", values, "Comma-separated values")->required();
  sweep->add_option("--set", sets, "Override a spec key (key=value)");

  auto* tune = app.add_subcommand("tune", "Select (K, s, q, lambda) on the first replication");
  tune->add_option("spec", spec_path, "Spec file")->required();
  tune->add_option("--set", sets, "Override a spec key (key=value)");

  auto* keys = app.add_subcommand("keys", "List spec keys");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (keys->parsed()) {
      for (const auto& [key, help] : fedhuber::spec_keys()) {
        std::printf("%-22s %s\n", key.c_str(), help.c_str());
      }
      return kOk;
    }
    const fedhuber::ExperimentSpec spec = build_spec(spec_path, sets);

    if (run->parsed()) {
      const auto result = fedhuber::run_experiment(spec);
      print_summary(result.summary);
      std::printf("rows: %s\nsummary: %s\n", result.rows_csv.string().c_str(),
                  result.summary_csv.string().c_str());
      report_failures(result.rows);
      return result.any_failure ? kFitFailure : kOk;
    }
    if (sweep->parsed()) {
      const auto parsed = parse_values(values);
      const auto result =
          fedhuber::run_sweep(spec, fedhuber::parse_sweep_param(param), parsed);
      for (const auto& point : result.points) {
        std::printf("%s = %g\n", param.c_str(), point.value);
        print_summary(point.summary);
      }
      std::printf("sweep: %s\n", result.csv.string().c_str());
      return result.any_failure ? kFitFailure : kOk;
    }
    if (tune->parsed()) {
      const auto report = fedhuber::run_tune(spec);
      const auto& best = report.selection.best_point;
      std::printf("best K=%zu s=%zu q=%zu lambda=%g eta=%g criterion=%.6f\n", best.k,
                  best.s, best.q, best.lambda, report.eta,
                  report.selection.best_criterion);
      std::printf("table: %s\n", report.csv.string().c_str());
      return kOk;
    }
  } catch (const fedhuber::SpecError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const fedhuber::IngestionError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kUsage;
  } catch (const fedhuber::ParameterError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFitFailure;
  }
  return kUsage;
}
