#include <doctest.h>

#include <cmath>

#include "fedhuber/federated.hpp"
#include "fedhuber/metrics.hpp"
#include "fedhuber/simgen.hpp"
#include "../support.hpp"

using namespace fedhuber;
using namespace fedhuber::test;

namespace {

FederationConfig small_config() {
  FederationConfig cfg;
  cfg.rounds = 30;
  cfg.local.eta = 0.5;
  cfg.local.sigma = 3.0;
  cfg.local.t_max = 500;
  cfg.budget = {3, 3};
  cfg.central.k = 2;
  cfg.central.lambda = 0.05;
  return cfg;
}

Scenario small_scenario(std::uint64_t seed, std::size_t m = 10) {
  ScenarioConfig sc;
  sc.n = 100;
  sc.p = 30;
  sc.m = m;
  sc.seed = seed;
  return gen_setting(sc);
}

}  // namespace

TEST_SUITE("federated") {

TEST_CASE("wire format") {
  GradientMessage g{7, 3, Vector::LinSpaced(3, -1.0, 1.0)};
  const auto bytes = encode(g);
  REQUIRE(bytes.size() == 12 + 24);
  CHECK(bytes[0] == 7);
  CHECK(bytes[4] == 3);
  CHECK(bytes[8] == 3);
  // 1.0 is 0x3FF0000000000000; little-endian puts 0xF0, 0x3F last.
  CHECK(bytes[34] == 0xF0);
  CHECK(bytes[35] == 0x3F);
  const auto back = decode_gradient(bytes);
  CHECK(back.task_id == 7);
  CHECK(back.round == 3);
  CHECK(back.gradient == g.gradient);

  ModelMessage mm{2, 9, Vector::Zero(4)};
  mm.beta_hat[1] = -0.125;
  const auto decoded = decode_model(encode(mm));
  CHECK(decoded.beta_hat == mm.beta_hat);
  CHECK(decoded.round == 9);
}

TEST_CASE("malformed wire messages") {
  auto bytes = encode(GradientMessage{1, 1, Vector::Ones(2)});
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_gradient(truncated), ProtocolError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_gradient(trailing), ProtocolError);
  auto huge = bytes;
  huge[11] = 0xFF;
  CHECK_THROWS_AS(decode_model(huge), ProtocolError);
  CHECK_THROWS_AS(decode_model(std::vector<std::uint8_t>(5, 0)), ProtocolError);
}

TEST_CASE("mailbox enforces one message per task") {
  Mailbox box;
  box.post(GradientMessage{0, 1, Vector::Zero(2)});
  CHECK_THROWS_AS(box.collect_gradients(1, 2), ProtocolError);

  Mailbox dup;
  dup.post(GradientMessage{0, 1, Vector::Zero(2)});
  dup.post(GradientMessage{0, 1, Vector::Zero(2)});
  CHECK_THROWS_AS(dup.collect_gradients(1, 1), ProtocolError);

  Mailbox stranger;
  stranger.post(GradientMessage{5, 1, Vector::Zero(2)});
  CHECK_THROWS_AS(stranger.collect_gradients(1, 2), ProtocolError);

  Mailbox ok;
  ok.post(GradientMessage{1, 1, Vector::Zero(2)});
  ok.post(GradientMessage{0, 1, Vector::Zero(2)});
  ok.post(GradientMessage{0, 2, Vector::Zero(2)});
  const auto got = ok.collect_gradients(1, 2);
  CHECK(got[0].task_id == 0);
  CHECK(got[1].task_id == 1);
  CHECK(ok.collect_gradients(2, 1).size() == 1);
  CHECK_THROWS_AS(ok.centers(), ProtocolError);
}

TEST_CASE("server rejects malformed label replies") {
  const Scenario s = small_scenario(3, 4);
  FederationConfig cfg = small_config();
  LocalFitConfig local = cfg.local;
  local.s = 3;
  Server server(cfg, local_fits(s.datasets, local));
  server.begin_initialization();
  REQUIRE(server.needs_group_assignment());
  CHECK_THROWS_AS(server.finish_round(), ProtocolError);
  const CenterMessage proposal = server.propose_centers(0);
  std::vector<LabelMessage> replies;
  for (std::uint32_t m = 0; m < 4; ++m) {
    Client c(s.datasets[m], Loss::huber, 3.0);
    replies.push_back(c.choose_group(proposal));
  }
  auto bad = replies;
  bad[2].labels[0] = 9;
  CHECK_THROWS_AS(server.assign_groups(bad, proposal), ProtocolError);
  bad = replies;
  bad[1].losses.pop_back();
  CHECK_THROWS_AS(server.assign_groups(bad, proposal), ProtocolError);
  bad = replies;
  bad.pop_back();
  CHECK_THROWS_AS(server.assign_groups(bad, proposal), ProtocolError);
  server.assign_groups(replies, proposal);
  CHECK(server.finish_round().empty());
}

TEST_CASE("a single task reduces to local IHT") {
  const Scenario s = small_scenario(4, 1);
  FederationConfig cfg = small_config();
  cfg.central.k = 1;
  cfg.central.lambda = 0.0;
  cfg.rounds = 25;
  const auto fed = federated_fit(s.datasets, cfg, {Vector::Zero(30)});
  LocalFitConfig local = cfg.local;
  local.s = 3;
  local.t_max = 25;
  local.tol = 0.0;
  REQUIRE(fed.trace.size() == 25);
  CHECK(fed.estimates[0] == local_iht_fit(s.datasets[0], local));
}

TEST_CASE("identical tasks stay identical") {
  const Scenario s = small_scenario(5, 1);
  std::vector<TaskDataset> copies(4, s.datasets[0]);
  for (std::size_t m = 0; m < 4; ++m) copies[m].task_id = m;
  const auto fit = federated_fit(copies, small_config());
  for (std::size_t m = 1; m < 4; ++m)
    CHECK((fit.estimates[m] - fit.estimates[0]).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("message counts with a one-time initialization") {
  const Scenario s = small_scenario(6);
  FederationConfig cfg = small_config();
  cfg.rounds = 12;
  cfg.central.warm_start = true;
  cfg.central.select_by_client_loss = false;
  const auto fit = federated_fit(s.datasets, cfg);
  REQUIRE(fit.trace.size() == 12);
  CHECK(fit.messages.gradients_up == 10 * 12);
  CHECK(fit.messages.models_down == 10 * 12);
  CHECK(fit.messages.center_vectors_down == 2);
  CHECK(fit.messages.labels_up == 10);

  cfg.central.select_by_client_loss = true;
  cfg.central.kmeans_restarts = 4;
  CHECK(federated_fit(s.datasets, cfg).messages.center_vectors_down == 2 * 4);

  cfg.central.warm_start = false;
  const auto every = federated_fit(s.datasets, cfg);
  CHECK(every.messages.labels_up == 10 * (1 + every.trace.size()));
}

TEST_CASE("estimates respect the sparsity budget and the trace is sane") {
  const Scenario s = small_scenario(7);
  FederationConfig cfg = small_config();
  cfg.rounds = 40;
  const auto init = local_fits(s.datasets, [&] {
    LocalFitConfig l = cfg.local;
    l.s = 3;
    return l;
  }());
  double initial = 0.0;
  for (std::size_t m = 0; m < 10; ++m) initial += huber_objective(s.datasets[m], init[m], 3.0);
  initial /= 10.0;
  const auto fit = federated_fit(s.datasets, cfg, init, &s.truth.betas_true);
  for (const auto& b : fit.estimates) CHECK(count_nonzeros(b) <= 3);
  for (const auto& tr : fit.trace) {
    CHECK(std::isfinite(tr.mean_loss));
    CHECK(std::isfinite(tr.mse));
  }
  CHECK(fit.trace.back().mean_loss <= initial);
  CHECK(fit.trace.back().mse == doctest::Approx(mse(fit.estimates, s.truth.betas_true)));
}

TEST_CASE("huber with a huge threshold equals the squared loss run") {
  const Scenario s = small_scenario(8);
  FederationConfig huber = small_config();
  huber.local.sigma = 1e9;
  huber.tol = 0.0;
  huber.rounds = 15;
  FederationConfig squared = huber;
  squared.loss = Loss::squared;
  LocalFitConfig l = huber.local;
  l.s = 3;
  l.loss = Loss::squared;
  const auto init = local_fits(s.datasets, l);
  const auto a = federated_fit(s.datasets, huber, init);
  const auto b = federated_fit(s.datasets, squared, init);
  CHECK(a.labels == b.labels);
  for (std::size_t m = 0; m < 10; ++m)
    CHECK((a.estimates[m] - b.estimates[m]).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("oracle labels are kept") {
  const Scenario s = small_scenario(9);
  FederationConfig cfg = small_config();
  cfg.mode = FitMode::oracle_labels;
  cfg.oracle_groups = s.truth.labels_true;
  const auto fit = federated_fit(s.datasets, cfg);
  CHECK(fit.labels == s.truth.labels_true);
  CHECK(fit.messages.labels_up == 0);
  cfg.oracle_groups = {0, 1};
  CHECK_THROWS_AS(federated_fit(s.datasets, cfg), ParameterError);
}

TEST_CASE("setting 1 labels are recovered") {
  ScenarioConfig sc;
  sc.seed = 10;
  const Scenario s = gen_setting(sc);
  FederationConfig cfg = small_config();
  cfg.rounds = 100;
  cfg.tol = 1e-7;
  cfg.central.warm_start = false;
  const auto fit = federated_fit(s.datasets, cfg);
  CHECK(rand_index(fit.labels, s.truth.labels_true) == 1.0);
}

TEST_CASE("pooled multitask fit") {
  const Scenario s = small_scenario(11, 4);
  FederationConfig cfg = small_config();
  cfg.central.lambda = 0.0;
  cfg.rounds = 20;
  cfg.mode = FitMode::pooled_ml;
  std::vector<Vector> zeros(4, Vector::Zero(30));
  const auto fit = pooled_ml_fit(s.datasets, cfg, zeros);
  LocalFitConfig local = cfg.local;
  local.s = 3;
  local.t_max = 20;
  local.tol = 0.0;
  for (std::size_t m = 0; m < 4; ++m)
    CHECK((fit.estimates[m] - local_iht_fit(s.datasets[m], local)).cwiseAbs().maxCoeff() < 1e-12);

  std::vector<TaskDataset> copies(3, s.datasets[0]);
  for (std::size_t m = 0; m < 3; ++m) copies[m].task_id = m;
  FederationConfig fused = cfg;
  fused.central.k = 1;
  fused.central.lambda = 1e6;
  const auto same = pooled_ml_fit(copies, fused);
  for (std::size_t m = 1; m < 3; ++m)
    CHECK((same.estimates[m] - same.estimates[0]).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("task ids must match positions") {
  Scenario s = small_scenario(12, 3);
  std::swap(s.datasets[0], s.datasets[1]);
  CHECK_THROWS_AS(federated_fit(s.datasets, small_config()), ParameterError);
}

}
