#include "fedhuber/federated.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <string>

namespace fedhuber {

namespace {

static_assert(std::endian::native == std::endian::little ||
                  std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  std::uint64_t bits = 0;
  std::memcpy(&bits, &v, sizeof bits);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += 8;
    double v = 0.0;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  void finish() const {
    if (pos_ != bytes_.size()) throw ProtocolError("message: trailing bytes");
  }

 private:
  void need(std::size_t count) const {
    if (pos_ + count > bytes_.size()) throw ProtocolError("message: truncated");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> encode_payload(std::uint32_t task_id,
                                         std::uint32_t round,
                                         const Vector& payload) {
  std::vector<std::uint8_t> out;
  out.reserve(12 + 8 * static_cast<std::size_t>(payload.size()));
  put_u32(out, task_id);
  put_u32(out, round);
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  for (Eigen::Index j = 0; j < payload.size(); ++j) put_f64(out, payload[j]);
  return out;
}

void decode_payload(std::span<const std::uint8_t> bytes, std::uint32_t& task_id,
                    std::uint32_t& round, Vector& payload) {
  Reader in(bytes);
  task_id = in.u32();
  round = in.u32();
  const std::uint32_t len = in.u32();
  if (std::size_t{len} * 8 != in.remaining()) {
    throw ProtocolError("message: payload length " + std::to_string(len) +
                        " does not match " + std::to_string(in.remaining()) + " bytes");
  }
  payload.resize(len);
  for (std::uint32_t j = 0; j < len; ++j) payload[j] = in.f64();
  in.finish();
}

[[noreturn]] void diverged(double eta, std::size_t round) {
  std::ostringstream msg;
  msg << "federation diverged in round " << round << " with step size eta="
      << eta;
  throw DivergenceError(msg.str());
}

double mean_squared_error(const std::vector<Vector>& est,
                          const std::vector<Vector>* reference) {
  if (reference == nullptr) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (std::size_t m = 0; m < est.size(); ++m) {
    total += (est[m] - (*reference)[m]).squaredNorm();
  }
  return total / static_cast<double>(est.size());
}

void check_datasets(const std::vector<TaskDataset>& datasets) {
  if (datasets.empty()) throw ParameterError("federation: no tasks");
  const Eigen::Index p = datasets.front().p();
  for (const auto& d : datasets) {
    d.validate();
    if (d.p() != p) throw ShapeError("federation: tasks disagree on p");
  }
}

std::vector<Vector> default_init(const std::vector<TaskDataset>& datasets,
                                 const FederationConfig& cfg,
                                 std::vector<Vector> init_betas) {
  if (!init_betas.empty()) {
    if (init_betas.size() != datasets.size()) {
      throw ShapeError("federation: one initial estimate per task required");
    }
    return init_betas;
  }
  LocalFitConfig local = cfg.local;
  local.s = cfg.budget.s;
  return local_fits(datasets, local);
}

}  // namespace

std::vector<std::uint8_t> encode(const GradientMessage& msg) {
  return encode_payload(msg.task_id, msg.round, msg.gradient);
}

std::vector<std::uint8_t> encode(const ModelMessage& msg) {
  return encode_payload(msg.task_id, msg.round, msg.beta_hat);
}

GradientMessage decode_gradient(std::span<const std::uint8_t> bytes) {
  GradientMessage msg;
  decode_payload(bytes, msg.task_id, msg.round, msg.gradient);
  return msg;
}

ModelMessage decode_model(std::span<const std::uint8_t> bytes) {
  ModelMessage msg;
  decode_payload(bytes, msg.task_id, msg.round, msg.beta_hat);
  return msg;
}

// --- Mailbox ---------------------------------------------------------------

void Mailbox::post(GradientMessage msg) {
  ++counts_.gradients_up;
  gradients_.push_back(std::move(msg));
}

void Mailbox::post(LabelMessage msg) {
  ++counts_.labels_up;
  labels_.push_back(std::move(msg));
}

void Mailbox::broadcast(ModelMessage msg) {
  ++counts_.models_down;
  models_.push_back(std::move(msg));
}

void Mailbox::broadcast(CenterMessage msg) {
  for (const auto& set : msg.sets) counts_.center_vectors_down += set.size();
  centers_ = std::move(msg);
}

namespace {

template <typename Msg>
std::vector<Msg> drain(std::deque<Msg>& queue, std::uint32_t round,
                       std::size_t num_tasks, const char* what) {
  std::vector<std::optional<Msg>> slots(num_tasks);
  std::deque<Msg> keep;
  for (auto& msg : queue) {
    if (msg.round != round) {
      keep.push_back(std::move(msg));
      continue;
    }
    if (msg.task_id >= num_tasks) {
      throw ProtocolError(std::string(what) + " from unknown task " +
                          std::to_string(msg.task_id));
    }
    if (slots[msg.task_id]) {
      throw ProtocolError(std::string("duplicate ") + what + " from task " +
                          std::to_string(msg.task_id) + " in round " +
                          std::to_string(round));
    }
    slots[msg.task_id] = std::move(msg);
  }
  queue = std::move(keep);
  std::vector<Msg> out;
  out.reserve(num_tasks);
  for (std::size_t m = 0; m < num_tasks; ++m) {
    if (!slots[m]) {
      throw ProtocolError(std::string("missing ") + what + " from task " +
                          std::to_string(m) + " in round " +
                          std::to_string(round));
    }
    out.push_back(std::move(*slots[m]));
  }
  return out;
}

}  // namespace

std::vector<GradientMessage> Mailbox::collect_gradients(std::uint32_t round,
                                                        std::size_t num_tasks) {
  return drain(gradients_, round, num_tasks, "gradient");
}

std::vector<LabelMessage> Mailbox::collect_labels(std::uint32_t round,
                                                  std::size_t num_tasks) {
  return drain(labels_, round, num_tasks, "label");
}

std::optional<ModelMessage> Mailbox::fetch_model(std::uint32_t task_id) {
  const auto it = std::find_if(models_.begin(), models_.end(),
                               [&](const ModelMessage& m) { return m.task_id == task_id; });
  if (it == models_.end()) return std::nullopt;
  ModelMessage msg = std::move(*it);
  models_.erase(it);
  return msg;
}

const CenterMessage& Mailbox::centers() const {
  if (!centers_) throw ProtocolError("no center broadcast available");
  return *centers_;
}

// --- Configuration ---------------------------------------------------------

void FederationConfig::validate(std::size_t num_tasks, std::size_t p) const {
  if (rounds < 1) throw ParameterError("federation: rounds must be >= 1");
  LocalFitConfig l = local;
  l.s = budget.s;
  l.loss = loss;
  l.validate();
  budget.validate(p);
  if (mode == FitMode::oracle_labels) {
    const std::size_t k = validate_partition(oracle_groups, num_tasks);
    CentralConfig c = central;
    c.k = k;
    c.validate(num_tasks);
  } else {
    central.validate(num_tasks);
  }
  if (!(tol >= 0.0)) throw ParameterError("federation: tol must be >= 0");
}

// --- Client ----------------------------------------------------------------

Client::Client(TaskDataset data, Loss loss, double sigma)
    : data_(std::move(data)), loss_(loss), sigma_(sigma),
      model_(Vector::Zero(data_.p())) {
  data_.validate();
}

std::uint32_t Client::task_id() const {
  return static_cast<std::uint32_t>(data_.task_id);
}

void Client::set_model(Vector beta) {
  if (beta.size() != data_.p()) throw ShapeError("client: model has wrong length");
  model_ = std::move(beta);
}

GradientMessage Client::local_update(std::uint32_t round) const {
  return {task_id(), round, loss_gradient(data_, model_, loss_, sigma_)};
}

LabelMessage Client::choose_group(const CenterMessage& msg) const {
  LabelMessage out{task_id(), msg.round, {}, {}};
  for (const auto& set : msg.sets) {
    const Labels pick = init_assignment(
        set, 1, [this](std::size_t, const Vector& theta) { return objective(theta); });
    const auto label = static_cast<std::size_t>(pick.front());
    out.labels.push_back(static_cast<std::uint32_t>(label));
    out.losses.push_back(objective(set[label]));
  }
  return out;
}

void Client::receive(const ModelMessage& msg) {
  if (msg.task_id != task_id()) {
    throw ProtocolError("client " + std::to_string(task_id()) +
                        " received model for task " + std::to_string(msg.task_id));
  }
  set_model(msg.beta_hat);
}

double Client::objective(const Vector& beta) const {
  return loss_objective(data_, beta, loss_, sigma_);
}

// --- Server ----------------------------------------------------------------

Server::Server(const FederationConfig& cfg, std::vector<Vector> init_betas)
    : cfg_(cfg), estimates_(std::move(init_betas)) {
  if (estimates_.empty()) throw ParameterError("server: no initial estimates");
  const auto p = static_cast<std::size_t>(estimates_.front().size());
  cfg_.validate(estimates_.size(), p);
  for (const auto& b : estimates_) {
    if (static_cast<std::size_t>(b.size()) != p) {
      throw ShapeError("server: initial estimates disagree on p");
    }
    if (count_nonzeros(b) > cfg_.budget.s) {
      throw ParameterError("server: initial estimate has more than s nonzeros");
    }
  }
}

void Server::begin_initialization() {
  inputs_ = estimates_;
  round_ = 0;
  open_ = true;
  assigned_.reset();
}

void Server::begin_round(std::uint32_t round,
                         const std::vector<GradientMessage>& grads) {
  if (!state_) throw ProtocolError("server: round started before initialization");
  const std::size_t m_count = estimates_.size();
  if (grads.size() != m_count) {
    throw ProtocolError("server: expected " + std::to_string(m_count) +
                        " gradients, got " + std::to_string(grads.size()));
  }
  const Labels& groups = state_->labels;
  const std::size_t k = state_->centers.size();
  inputs_.assign(m_count, Vector());
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t m = 0; m < m_count; ++m) {
    members[static_cast<std::size_t>(groups[m])].push_back(m);
  }
  for (const auto& group : members) {
    if (group.empty()) continue;
    std::vector<Vector> alphas;
    alphas.reserve(group.size());
    for (const auto m : group) {
      const GradientMessage& g = grads[m];
      if (g.task_id != m || g.round != round) {
        throw ProtocolError("server: gradient out of order");
      }
      if (g.gradient.size() != estimates_[m].size()) {
        throw ProtocolError("server: gradient has wrong length");
      }
      Vector step = estimates_[m] - cfg_.local.eta * g.gradient;
      if (!step.allFinite()) diverged(cfg_.local.eta, round);
      alphas.push_back(std::move(step));
    }
    auto projected = group_project(alphas, cfg_.budget.q);
    for (std::size_t i = 0; i < group.size(); ++i) {
      inputs_[group[i]] = std::move(projected[i]);
    }
  }
  round_ = round;
  open_ = true;
  assigned_.reset();
}

bool Server::needs_group_assignment() const {
  if (!open_ || cfg_.mode == FitMode::oracle_labels || assigned_) return false;
  return !state_ || !cfg_.central.warm_start;
}

CenterMessage Server::propose_centers(std::uint32_t round) const {
  if (!open_) throw ProtocolError("server: no open round");
  return {round, candidate_center_sets(inputs_, cfg_.central)};
}

void Server::assign_groups(const std::vector<LabelMessage>& labels,
                           const CenterMessage& proposal) {
  const std::size_t m_count = estimates_.size();
  if (labels.size() != m_count) throw ProtocolError("server: missing labels");
  const std::size_t n_sets = proposal.sets.size();
  if (n_sets == 0) throw ProtocolError("server: empty center proposal");
  std::vector<double> totals(n_sets, 0.0);
  for (std::size_t m = 0; m < m_count; ++m) {
    if (labels[m].labels.size() != n_sets || labels[m].losses.size() != n_sets) {
      throw ProtocolError("server: label reply from task " + std::to_string(m) +
                          " does not cover every candidate set");
    }
    for (std::size_t i = 0; i < n_sets; ++i) {
      if (labels[m].labels[i] >= proposal.sets[i].size()) {
        throw ProtocolError("server: label out of range from task " +
                            std::to_string(m));
      }
      totals[i] += labels[m].losses[i];
    }
  }
  std::size_t chosen = 0;
  for (std::size_t i = 1; i < n_sets; ++i) {
    if (totals[i] < totals[chosen]) chosen = i;
  }
  FederationState warm;
  warm.labels.resize(m_count);
  for (std::size_t m = 0; m < m_count; ++m) {
    warm.labels[m] = static_cast<int>(labels[m].labels[chosen]);
  }
  warm.centers = proposal.sets[chosen];
  warm.deltas.assign(m_count, Vector::Zero(inputs_.front().size()));
  assigned_ = std::move(warm);
}

std::vector<ModelMessage> Server::finish_round() {
  if (!open_) throw ProtocolError("server: no open round");
  if (needs_group_assignment()) {
    throw ProtocolError("server: group assignment pending");
  }
  const Labels previous = state_ ? state_->labels : Labels{};
  FederationState next;
  if (cfg_.mode == FitMode::oracle_labels) {
    next = solve_central_oracle(inputs_, cfg_.oracle_groups, cfg_.central);
  } else if (assigned_) {
    next = solve_central(inputs_, cfg_.central, assigned_);
  } else {
    next = solve_central(inputs_, cfg_.central, state_);
  }
  state_ = std::move(next);
  labels_changed_ = state_->labels != previous;
  open_ = false;
  assigned_.reset();

  std::vector<ModelMessage> out;
  if (round_ == 0) return out;
  last_change_ = 0.0;
  out.reserve(estimates_.size());
  for (std::size_t m = 0; m < estimates_.size(); ++m) {
    Vector beta_hat = hard_threshold(state_->beta_tilde[m], cfg_.budget.s);
    last_change_ = std::max(last_change_, (beta_hat - estimates_[m]).norm());
    estimates_[m] = beta_hat;
    out.push_back({static_cast<std::uint32_t>(m), round_, std::move(beta_hat)});
  }
  return out;
}

// --- Drivers ---------------------------------------------------------------

std::vector<Vector> local_fits(const std::vector<TaskDataset>& datasets,
                               const LocalFitConfig& cfg) {
  std::vector<Vector> out;
  out.reserve(datasets.size());
  for (const auto& d : datasets) out.push_back(local_iht_fit(d, cfg));
  return out;
}

FitResult federated_fit(const std::vector<TaskDataset>& datasets,
                        const FederationConfig& cfg,
                        std::vector<Vector> init_betas,
                        const std::vector<Vector>* reference) {
  check_datasets(datasets);
  const std::size_t m_count = datasets.size();
  for (std::size_t m = 0; m < m_count; ++m) {
    if (datasets[m].task_id != m) {
      throw ParameterError("federation: task ids must equal list positions");
    }
  }
  if (cfg.mode == FitMode::pooled_ml) {
    return pooled_ml_fit(datasets, cfg, std::move(init_betas), reference);
  }
  std::vector<Vector> init = default_init(datasets, cfg, std::move(init_betas));

  std::vector<Client> clients;
  clients.reserve(m_count);
  for (std::size_t m = 0; m < m_count; ++m) {
    clients.emplace_back(datasets[m], cfg.loss, cfg.local.sigma);
    clients.back().set_model(init[m]);
  }
  Server server(cfg, std::move(init));
  Mailbox mailbox;

  const auto assign_if_needed = [&](std::uint32_t round) {
    if (!server.needs_group_assignment()) return;
    mailbox.broadcast(server.propose_centers(round));
    for (const auto& c : clients) mailbox.post(c.choose_group(mailbox.centers()));
    server.assign_groups(mailbox.collect_labels(round, m_count), mailbox.centers());
  };

  server.begin_initialization();
  assign_if_needed(0);
  server.finish_round();

  FitResult result;
  for (std::uint32_t round = 1; round <= cfg.rounds; ++round) {
    for (const auto& c : clients) mailbox.post(c.local_update(round));
    server.begin_round(round, mailbox.collect_gradients(round, m_count));
    assign_if_needed(round);
    for (auto& msg : server.finish_round()) mailbox.broadcast(std::move(msg));

    RoundTrace tr;
    tr.round = round;
    for (auto& c : clients) {
      auto msg = mailbox.fetch_model(c.task_id());
      if (!msg) {
        throw ProtocolError("missing model for task " + std::to_string(c.task_id()));
      }
      c.receive(*msg);
      tr.mean_loss += c.training_loss();
    }
    tr.mean_loss /= static_cast<double>(m_count);
    if (!std::isfinite(tr.mean_loss) || tr.mean_loss > kDivergenceLimit) {
      diverged(cfg.local.eta, round);
    }
    tr.central_objective = server.state().objective;
    tr.max_change = server.last_change();
    tr.mse = mean_squared_error(server.estimates(), reference);
    result.trace.push_back(tr);
    if (cfg.tol > 0.0 && tr.max_change < cfg.tol && !server.labels_changed()) {
      break;
    }
  }
  result.estimates = server.estimates();
  result.labels = server.labels();
  result.centers = server.state().centers;
  result.messages = mailbox.counts();
  return result;
}

FitResult pooled_ml_fit(const std::vector<TaskDataset>& datasets,
                        const FederationConfig& cfg,
                        std::vector<Vector> init_betas,
                        const std::vector<Vector>* reference) {
  check_datasets(datasets);
  const std::size_t m_count = datasets.size();
  cfg.validate(m_count, static_cast<std::size_t>(datasets.front().p()));
  std::vector<Vector> betas = default_init(datasets, cfg, std::move(init_betas));
  const double eta = cfg.local.eta;
  const double sigma = cfg.local.sigma;

  const ClientObjective objective = [&](std::size_t m, const Vector& theta) {
    return loss_objective(datasets[m], theta, cfg.loss, sigma);
  };
  FederationState state = solve_central(betas, cfg.central, std::nullopt, objective);

  FitResult result;
  for (std::size_t round = 1; round <= cfg.rounds; ++round) {
    std::vector<Vector> steps(m_count);
    for (std::size_t m = 0; m < m_count; ++m) {
      Vector step = betas[m] - eta * loss_gradient(datasets[m], betas[m], cfg.loss, sigma);
      if (!step.allFinite()) diverged(eta, round);
      steps[m] = hard_threshold(step, cfg.budget.s);
    }
    const Labels previous = state.labels;
    state = solve_central(steps, cfg.central, state);
    for (auto& theta : state.centers) theta = hard_threshold(theta, cfg.budget.q);

    RoundTrace tr;
    tr.round = round;
    for (std::size_t m = 0; m < m_count; ++m) {
      const Vector r = steps[m] - state.centers[static_cast<std::size_t>(state.labels[m])];
      state.deltas[m] = prox_l2(r, cfg.central.lambda);
      Vector next = hard_threshold(steps[m] - (r - state.deltas[m]), cfg.budget.s);
      tr.max_change = std::max(tr.max_change, (next - betas[m]).norm());
      betas[m] = std::move(next);
      tr.mean_loss += loss_objective(datasets[m], betas[m], cfg.loss, sigma);
    }
    tr.mean_loss /= static_cast<double>(m_count);
    if (!std::isfinite(tr.mean_loss) || tr.mean_loss > kDivergenceLimit) {
      diverged(eta, round);
    }
    tr.central_objective = central_objective(steps, state, cfg.central.lambda);
    tr.mse = mean_squared_error(betas, reference);
    result.trace.push_back(tr);
    if (cfg.tol > 0.0 && tr.max_change < cfg.tol && state.labels == previous) break;
  }
  result.estimates = std::move(betas);
  result.labels = state.labels;
  result.centers = state.centers;
  return result;
}

}  // namespace fedhuber
