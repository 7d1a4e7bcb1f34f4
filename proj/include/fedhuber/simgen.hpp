#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedhuber/common.hpp"
#include "fedhuber/huber.hpp"
#include "fedhuber/random.hpp"

namespace fedhuber {

enum class Setting { s1, s2, s3, s4 };
enum class Noise { normal, student_t2, cauchy };

struct GroundTruth {
  std::vector<Vector> betas_true;
  Labels labels_true;
  std::vector<Vector> centers_true;
  std::size_t s0 = 0;
  std::size_t q0 = 0;
  // Realized max_m ||beta*_m - theta*_{z_m}|| and min pairwise center gap.
  double h = 0.0;
  double delta = 0.0;
};

struct ScenarioConfig {
  Setting setting = Setting::s1;
  std::size_t n = 100;
  std::size_t p = 100;
  std::size_t m = 10;
  Noise noise = Noise::student_t2;
  // Within-group radius for S3 and center scale for S4.
  double h_scale = 0.0;
  double delta_scale = 1.0;
  std::uint64_t seed = 1;

  void validate() const;
};

// Setting 2 defaults to Gaussian noise, the others to t(2).
Noise default_noise(Setting setting);

/// n x p design with unit variances and all pairwise correlations 0.3.
DesignMatrix gen_design(std::size_t n, std::size_t p, std::uint64_t seed);

struct Scenario {
  std::vector<TaskDataset> datasets;
  GroundTruth truth;
};

Scenario gen_setting(const ScenarioConfig& cfg);

// One error draw from the configured law.
double draw_noise(Noise noise, Rng& rng);

/// Reads one task per file: header row, response in the first column,
/// covariates in the rest. Task ids follow the path order.
std::vector<TaskDataset> load_csv_tasks(const std::vector<std::filesystem::path>& paths);

/// Writes a task in the format read by load_csv_tasks, with round-trip
/// precision.
void write_csv_task(const TaskDataset& d, const std::filesystem::path& path);

std::string to_string(Setting s);
std::string to_string(Noise n);
Setting parse_setting(const std::string& s);
Noise parse_noise(const std::string& s);

}  // namespace fedhuber
