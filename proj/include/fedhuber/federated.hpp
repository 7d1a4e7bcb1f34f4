#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "fedhuber/central_solver.hpp"
#include "fedhuber/common.hpp"
#include "fedhuber/huber.hpp"
#include "fedhuber/local_iht.hpp"
#include "fedhuber/projection.hpp"

namespace fedhuber {

// ---------------------------------------------------------------------------
// Wire messages
//
// Serialized layout (little-endian, fields in declared order):
//   u32 task_id | u32 round | u32 length | length x f64 payload
// ---------------------------------------------------------------------------

struct GradientMessage {
  std::uint32_t task_id = 0;
  std::uint32_t round = 0;
  Vector gradient;
};

struct ModelMessage {
  std::uint32_t task_id = 0;
  std::uint32_t round = 0;
  Vector beta_hat;
};

// Candidate center sets (K centers each) broadcast for the initial group
// assignment.
struct CenterMessage {
  std::uint32_t round = 0;
  std::vector<std::vector<Vector>> sets;
};

// Per candidate set: the preferred center and the local loss there.
struct LabelMessage {
  std::uint32_t task_id = 0;
  std::uint32_t round = 0;
  std::vector<std::uint32_t> labels;
  std::vector<double> losses;
};

std::vector<std::uint8_t> encode(const GradientMessage& msg);
std::vector<std::uint8_t> encode(const ModelMessage& msg);
GradientMessage decode_gradient(std::span<const std::uint8_t> bytes);
ModelMessage decode_model(std::span<const std::uint8_t> bytes);

struct MessageCounts {
  std::size_t gradients_up = 0;
  std::size_t models_down = 0;
  std::size_t center_vectors_down = 0;
  std::size_t labels_up = 0;
};

// In-process transport with one queue per direction. The server drains the
// uplink at the round barrier and expects exactly one message per task.
class Mailbox {
 public:
  void post(GradientMessage msg);
  void post(LabelMessage msg);
  void broadcast(ModelMessage msg);
  void broadcast(CenterMessage msg);

  std::vector<GradientMessage> collect_gradients(std::uint32_t round,
                                                 std::size_t num_tasks);
  std::vector<LabelMessage> collect_labels(std::uint32_t round,
                                           std::size_t num_tasks);
  std::optional<ModelMessage> fetch_model(std::uint32_t task_id);
  const CenterMessage& centers() const;

  const MessageCounts& counts() const { return counts_; }

 private:
  std::deque<GradientMessage> gradients_;
  std::deque<LabelMessage> labels_;
  std::deque<ModelMessage> models_;
  std::optional<CenterMessage> centers_;
  MessageCounts counts_;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class FitMode { adaptive, oracle_labels, pooled_ml };

struct FederationConfig {
  std::size_t rounds = 100;
  // Step size, sigma and the initial local fit. The sparsity level used in
  // federation rounds is budget.s; loss overrides local.loss.
  LocalFitConfig local;
  CentralConfig central;
  SparsityBudget budget;
  Loss loss = Loss::huber;
  FitMode mode = FitMode::adaptive;
  // Known partition, required for FitMode::oracle_labels.
  Labels oracle_groups;
  // Stop early once no estimate moves by more than tol between rounds and
  // the labels are unchanged; 0 runs all rounds.
  double tol = 0.0;

  void validate(std::size_t num_tasks, std::size_t p) const;
};

// ---------------------------------------------------------------------------
// Participants
// ---------------------------------------------------------------------------

// Holds one task's raw data. Only gradients, objective values and label
// choices leave a client.
class Client {
 public:
  Client(TaskDataset data, Loss loss, double sigma);

  std::uint32_t task_id() const;
  Eigen::Index dimension() const { return data_.p(); }

  void set_model(Vector beta);
  const Vector& model() const { return model_; }

  GradientMessage local_update(std::uint32_t round) const;
  LabelMessage choose_group(const CenterMessage& msg) const;
  void receive(const ModelMessage& msg);

  double objective(const Vector& beta) const;
  double training_loss() const { return objective(model_); }

 private:
  TaskDataset data_;
  Loss loss_;
  double sigma_;
  Vector model_;
};

// Server side of the protocol. It sees gradients and label choices only.
//
// A round is begin_round -> [propose_centers -> assign_groups] ->
// finish_round; the bracketed client reassignment happens whenever
// needs_group_assignment() is true (always for the initial round, and every
// round when warm starting is disabled).
class Server {
 public:
  Server(const FederationConfig& cfg, std::vector<Vector> init_betas);

  // Round 0: fuse the initial estimates to obtain the starting labels.
  void begin_initialization();
  // Round t >= 1: group projection of beta_hat - eta * gradient.
  void begin_round(std::uint32_t round, const std::vector<GradientMessage>& grads);

  bool needs_group_assignment() const;
  CenterMessage propose_centers(std::uint32_t round) const;
  void assign_groups(const std::vector<LabelMessage>& labels,
                     const CenterMessage& proposal);

  // Fusion solve and sparse projection. Returns the broadcast models, which
  // are empty for the initialization round.
  std::vector<ModelMessage> finish_round();

  const std::vector<Vector>& estimates() const { return estimates_; }
  const FederationState& state() const { return *state_; }
  const Labels& labels() const { return state_->labels; }
  double last_change() const { return last_change_; }
  bool labels_changed() const { return labels_changed_; }

 private:
  FederationConfig cfg_;
  std::vector<Vector> estimates_;
  std::vector<Vector> inputs_;
  std::optional<FederationState> state_;
  std::optional<FederationState> assigned_;
  std::uint32_t round_ = 0;
  bool open_ = false;
  double last_change_ = 0.0;
  bool labels_changed_ = true;
};

// ---------------------------------------------------------------------------
// Drivers
// ---------------------------------------------------------------------------

struct RoundTrace {
  std::size_t round = 0;
  // Mean local training loss at the broadcast estimates.
  double mean_loss = 0.0;
  double central_objective = 0.0;
  double max_change = 0.0;
  // Mean squared error against a supplied reference, NaN otherwise.
  double mse = 0.0;
};

struct FitResult {
  std::vector<Vector> estimates;
  Labels labels;
  std::vector<Vector> centers;
  std::vector<RoundTrace> trace;
  MessageCounts messages;
};

/// Federated IHT with group projection over simulated clients. When
/// `init_betas` is empty each client starts from its own local IHT fit.
/// `reference`, when given, is used only to log per-round error.
FitResult federated_fit(const std::vector<TaskDataset>& datasets,
                        const FederationConfig& cfg,
                        std::vector<Vector> init_betas = {},
                        const std::vector<Vector>* reference = nullptr);

/// Multitask baseline with full data access: one IHT step per task, then a
/// fusion solve with s-sparse estimates and q-sparse centers.
FitResult pooled_ml_fit(const std::vector<TaskDataset>& datasets,
                        const FederationConfig& cfg,
                        std::vector<Vector> init_betas = {},
                        const std::vector<Vector>* reference = nullptr);

// Local IHT fit of every task from zero, used as the default initializer.
std::vector<Vector> local_fits(const std::vector<TaskDataset>& datasets,
                               const LocalFitConfig& cfg);

}  // namespace fedhuber
