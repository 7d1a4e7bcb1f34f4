#include "fedhuber/simgen.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace fedhuber {

namespace {

// Substream tags.
constexpr std::uint64_t kDesignStream = 1;
constexpr std::uint64_t kPerturbStream = 2;
constexpr std::uint64_t kNoiseStream = 3;

constexpr double kCorrelation = 0.3;
constexpr double kCauchyScale = 1.5;

DesignMatrix design_from(std::size_t n, std::size_t p, Rng& rng) {
  std::normal_distribution<double> z;
  const double common = std::sqrt(kCorrelation);
  const double own = std::sqrt(1.0 - kCorrelation);
  DesignMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double shared = z(rng);
    for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = common * shared + own * z(rng);
  }
  return x;
}

Vector perturbation(std::size_t p, double sd, Rng& rng) {
  std::normal_distribution<double> z;
  Vector h = Vector::Zero(static_cast<Eigen::Index>(p));
  for (Eigen::Index j = 0; j < 3; ++j) h[j] = sd * z(rng);
  return h;
}

std::array<Vector, 2> base_centers(std::size_t p) {
  Vector a = Vector::Zero(static_cast<Eigen::Index>(p));
  Vector b = Vector::Zero(static_cast<Eigen::Index>(p));
  a.head<3>() << 2.0, 3.0, 4.0;
  b.head<3>() << -1.0, 2.0, 3.0;
  return {a, b};
}

}  // namespace

void ScenarioConfig::validate() const {
  if (n < 1 || p < 1 || m < 1) throw ParameterError("scenario: n, p, M must be >= 1");
  if (p < 3) throw ParameterError("scenario: the synthetic settings need p >= 3");
  if (!(h_scale >= 0.0) || !std::isfinite(h_scale)) {
    throw ParameterError("scenario: h must be finite and >= 0");
  }
  if (!std::isfinite(delta_scale)) throw ParameterError("scenario: delta must be finite");
}

Noise default_noise(Setting setting) {
  return setting == Setting::s2 ? Noise::normal : Noise::student_t2;
}

DesignMatrix gen_design(std::size_t n, std::size_t p, std::uint64_t seed) {
  Rng rng = substream(seed, {kDesignStream});
  return design_from(n, p, rng);
}

double draw_noise(Noise noise, Rng& rng) {
  switch (noise) {
    case Noise::normal:
      return std::normal_distribution<double>{}(rng);
    case Noise::student_t2:
      return std::student_t_distribution<double>{2.0}(rng);
    case Noise::cauchy:
      return std::cauchy_distribution<double>{0.0, kCauchyScale}(rng);
  }
  return 0.0;
}

Scenario gen_setting(const ScenarioConfig& cfg) {
  cfg.validate();
  const auto base = base_centers(cfg.p);
  const double center_scale = cfg.setting == Setting::s4 ? cfg.delta_scale : 1.0;
  const double sd = cfg.setting == Setting::s2 ? 0.1 : 0.3;

  Scenario out;
  GroundTruth& truth = out.truth;
  truth.centers_true = {center_scale * base[0], center_scale * base[1]};
  const auto first_group = static_cast<std::size_t>(std::llround(0.6 * static_cast<double>(cfg.m)));
  truth.labels_true.assign(cfg.m, 1);
  std::fill_n(truth.labels_true.begin(), std::min(first_group, cfg.m), 0);

  for (std::size_t m = 0; m < cfg.m; ++m) {
    const Vector& center = truth.centers_true[static_cast<std::size_t>(truth.labels_true[m])];
    Rng perturb = substream(cfg.seed, {kPerturbStream, m});
    Vector beta;
    if (cfg.setting == Setting::s3) {
      Vector h = perturbation(cfg.p, sd, perturb);
      while (h.norm() == 0.0) h = perturbation(cfg.p, sd, perturb);
      beta = center + cfg.h_scale * (h / h.norm());
    } else {
      beta = center + perturbation(cfg.p, sd, perturb);
    }

    Rng design = substream(cfg.seed, {kDesignStream, m});
    TaskDataset d;
    d.task_id = m;
    d.x = design_from(cfg.n, cfg.p, design);
    Rng noise = substream(cfg.seed, {kNoiseStream, m});
    d.y = d.x * beta;
    for (Eigen::Index i = 0; i < d.y.size(); ++i) d.y[i] += draw_noise(cfg.noise, noise);

    truth.h = std::max(truth.h, (beta - center).norm());
    truth.s0 = std::max(truth.s0, count_nonzeros(beta));
    truth.betas_true.push_back(std::move(beta));
    out.datasets.push_back(std::move(d));
  }

  for (std::size_t g = 0; g < truth.centers_true.size(); ++g) {
    std::vector<bool> support(cfg.p, false);
    for (std::size_t m = 0; m < cfg.m; ++m) {
      if (static_cast<std::size_t>(truth.labels_true[m]) != g) continue;
      for (std::size_t j = 0; j < cfg.p; ++j) {
        if (truth.betas_true[m][static_cast<Eigen::Index>(j)] != 0.0) support[j] = true;
      }
    }
    truth.q0 = std::max(truth.q0, static_cast<std::size_t>(std::count(support.begin(), support.end(), true)));
  }
  truth.delta = (truth.centers_true[0] - truth.centers_true[1]).norm();
  return out;
}

// --- CSV -------------------------------------------------------------------

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    std::string_view f = line.substr(start, comma == std::string_view::npos
                                                ? std::string_view::npos
                                                : comma - start);
    if (f.size() >= 2 && f.front() == '"' && f.back() == '"') f = f.substr(1, f.size() - 2);
    fields.push_back(f);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

[[noreturn]] void ingest_error(const std::filesystem::path& path, std::size_t line,
                               const std::string& what) {
  throw IngestionError(path.string() + ":" + std::to_string(line) + ": " + what);
}

double parse_cell(std::string_view cell, const std::filesystem::path& path,
                  std::size_t line, std::size_t column) {
  while (!cell.empty() && cell.front() == ' ') cell.remove_prefix(1);
  while (!cell.empty() && cell.back() == ' ') cell.remove_suffix(1);
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size() ||
      !std::isfinite(v)) {
    ingest_error(path, line, "non-numeric value '" + std::string(cell) +
                                 "' in column " + std::to_string(column));
  }
  return v;
}

}  // namespace

std::vector<TaskDataset> load_csv_tasks(const std::vector<std::filesystem::path>& paths) {
  std::vector<TaskDataset> out;
  Eigen::Index p = -1;
  for (std::size_t t = 0; t < paths.size(); ++t) {
    const auto& path = paths[t];
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestionError(path.string() + ": cannot open file");
    std::string line;
    std::size_t line_no = 0;
    std::size_t columns = 0;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line_no == 1) {
        columns = split_fields(line).size();
        if (line.empty() || columns < 2) {
          ingest_error(path, line_no, "header needs a response and at least one covariate");
        }
        continue;
      }
      if (line.empty()) continue;
      const auto fields = split_fields(line);
      if (fields.size() != columns) {
        ingest_error(path, line_no, "expected " + std::to_string(columns) +
                                        " fields, found " + std::to_string(fields.size()));
      }
      std::vector<double> row(columns);
      for (std::size_t c = 0; c < columns; ++c) row[c] = parse_cell(fields[c], path, line_no, c + 1);
      rows.push_back(std::move(row));
    }
    if (line_no == 0) ingest_error(path, 1, "missing header");
    if (rows.empty()) ingest_error(path, line_no, "no data rows");
    const auto cols = static_cast<Eigen::Index>(columns - 1);
    if (p >= 0 && cols != p) {
      throw IngestionError(path.string() + ": has " + std::to_string(cols) +
                           " covariates, earlier files have " + std::to_string(p));
    }
    p = cols;

    TaskDataset d;
    d.task_id = t;
    d.x.resize(static_cast<Eigen::Index>(rows.size()), cols);
    d.y.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      d.y[r] = rows[i][0];
      for (Eigen::Index j = 0; j < cols; ++j) d.x(r, j) = rows[i][static_cast<std::size_t>(j) + 1];
    }
    out.push_back(std::move(d));
  }
  return out;
}

namespace {

void append_double(std::string& out, double v) {
  std::array<char, 32> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  out.append(buf.data(), ptr);
}

}  // namespace

void write_csv_task(const TaskDataset& d, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError(path.string() + ": cannot open for writing");
  std::string text = "y";
  for (Eigen::Index j = 0; j < d.p(); ++j) text += ",x" + std::to_string(j + 1);
  text += '\n';
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    append_double(text, d.y[i]);
    for (Eigen::Index j = 0; j < d.p(); ++j) {
      text += ',';
      append_double(text, d.x(i, j));
    }
    text += '\n';
  }
  out << text;
}

std::string to_string(Setting s) {
  switch (s) {
    case Setting::s1: return "S1";
    case Setting::s2: return "S2";
    case Setting::s3: return "S3";
    case Setting::s4: return "S4";
  }
  return "?";
}

std::string to_string(Noise n) {
  switch (n) {
    case Noise::normal: return "normal";
    case Noise::student_t2: return "t2";
    case Noise::cauchy: return "cauchy";
  }
  return "?";
}

Setting parse_setting(const std::string& s) {
  if (s == "S1" || s == "s1" || s == "1") return Setting::s1;
  if (s == "S2" || s == "s2" || s == "2") return Setting::s2;
  if (s == "S3" || s == "s3" || s == "3") return Setting::s3;
  if (s == "S4" || s == "s4" || s == "4") return Setting::s4;
  throw ParameterError("unknown setting '" + s + "'");
}

Noise parse_noise(const std::string& s) {
  if (s == "normal" || s == "gaussian") return Noise::normal;
  if (s == "t2" || s == "t" || s == "student_t") return Noise::student_t2;
  if (s == "cauchy") return Noise::cauchy;
  throw ParameterError("unknown noise law '" + s + "'");
}

}  // namespace fedhuber
