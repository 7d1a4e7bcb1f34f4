#include <doctest.h>

#include <cmath>
#include <limits>

#include "fedhuber/huber.hpp"
#include "../support.hpp"

using namespace fedhuber;
using namespace fedhuber::test;

TEST_SUITE("huber_core") {

TEST_CASE("loss branches") {
  CHECK(huber_loss(0.0, 3.0) == 0.0);
  CHECK(huber_loss(2.0, 3.0) == doctest::Approx(2.0));
  CHECK(huber_loss(4.0, 3.0) == doctest::Approx(7.5));
  CHECK(huber_loss(3.0, 3.0) == doctest::Approx(4.5));
}

TEST_CASE("loss rejects bad input") {
  CHECK_THROWS_AS(huber_loss(std::numeric_limits<double>::infinity(), 3.0), DomainError);
  CHECK_THROWS_AS(huber_loss(std::nan(""), 3.0), DomainError);
  CHECK_THROWS_AS(huber_loss(1.0, 0.0), DomainError);
  CHECK_THROWS_AS(huber_loss(1.0, -1.0), DomainError);
  CHECK_THROWS_AS(HuberParams(0.0), DomainError);
  CHECK(HuberParams(3.0).sigma() == 3.0);
}

TEST_CASE("loss symmetry and quadratic bound") {
  auto rng = rng_for(1);
  for (int i = 0; i < 500; ++i) {
    const double r = 10.0 * normal(rng);
    const double sigma = uniform(rng, 0.1, 5.0);
    CHECK(huber_loss(r, sigma) == huber_loss(-r, sigma));
    if (std::abs(r) <= sigma) {
      CHECK(huber_loss(r, sigma) == 0.5 * r * r);
    } else {
      CHECK(huber_loss(r, sigma) < 0.5 * r * r);
    }
  }
}

TEST_CASE("loss is continuous with continuous slope at the knot") {
  const double sigma = 3.0, e = 1e-7;
  CHECK(huber_loss(sigma + e, sigma) - huber_loss(sigma - e, sigma) ==
        doctest::Approx(2 * e * sigma).epsilon(1e-5));
  CHECK(huber_psi(sigma, sigma) == sigma);
  CHECK(huber_psi(-10.0, sigma) == -sigma);
}

TEST_CASE("objective examples") {
  TaskDataset d;
  d.x.resize(1, 2);
  d.x << 1.0, 0.0;
  d.y.resize(1);
  d.y << 2.0;
  CHECK(huber_objective(d, Vector::Zero(2), 3.0) == doctest::Approx(2.0));

  auto rng = rng_for(2);
  const Vector beta = random_vector(rng, 3);
  const TaskDataset exact = random_task(rng, 6, 3, beta, 0.0);
  CHECK(huber_objective(exact, beta, 0.5) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("objective matches per-sample summation") {
  auto rng = rng_for(3);
  for (int trial = 0; trial < 20; ++trial) {
    const TaskDataset d = random_task(rng, 5, 3, random_vector(rng, 3), 4.0);
    const Vector beta = random_vector(rng, 3);
    CHECK(huber_objective(d, beta, 1.0) ==
          doctest::Approx(reference_huber(d, beta, 1.0)).epsilon(1e-13));
  }
}

TEST_CASE("shape errors") {
  auto rng = rng_for(4);
  const TaskDataset d = random_task(rng, 5, 3, Vector::Zero(3), 1.0);
  CHECK_THROWS_AS(huber_objective(d, Vector::Zero(2), 3.0), ShapeError);
  CHECK_THROWS_AS(huber_gradient(d, Vector::Zero(4), 3.0), ShapeError);
  CHECK_THROWS_AS(l2_gradient(d, Vector::Zero(4)), ShapeError);
  TaskDataset bad = d;
  bad.y.resize(4);
  CHECK_THROWS_AS(bad.validate(), ShapeError);
  bad = d;
  bad.x(0, 0) = std::nan("");
  CHECK_THROWS_AS(bad.validate(), DomainError);
}

TEST_CASE("gradient against finite differences") {
  auto rng = rng_for(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<Eigen::Index>(pick(rng, 5, 50));
    const auto p = static_cast<Eigen::Index>(pick(rng, 1, 20));
    const TaskDataset d = random_task(rng, n, p, random_vector(rng, p), 3.0);
    const Vector beta = random_vector(rng, p);
    const double sigma = uniform(rng, 0.5, 4.0);
    const Vector g = huber_gradient(d, beta, sigma);
    const Vector fd = central_difference(
        [&](const Vector& b) { return huber_objective(d, b, sigma); }, beta, 1e-6);
    for (Eigen::Index j = 0; j < p; ++j) {
      CHECK(std::abs(g[j] - fd[j]) <= 1e-5 * std::max(std::abs(g[j]), 1e-3));
    }
  }
}

TEST_CASE("gradient vanishes at a minimizer") {
  // Least squares solution keeps every residual small, so it also minimizes
  // the Huber objective when sigma exceeds them all.
  auto rng = rng_for(6);
  const TaskDataset d = random_task(rng, 30, 4, random_vector(rng, 4), 0.5);
  const Vector ols = d.x.colPivHouseholderQr().solve(d.y);
  const double sigma = 1.0 + (d.y - d.x * ols).cwiseAbs().maxCoeff();
  CHECK(huber_gradient(d, ols, sigma).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("quadratic regime equals least squares") {
  auto rng = rng_for(7);
  const TaskDataset d = random_task(rng, 20, 5, random_vector(rng, 5), 1.0);
  const Vector beta = random_vector(rng, 5, 0.1);
  const double sigma = 1.0 + (d.y - d.x * beta).cwiseAbs().maxCoeff();
  const Vector ls = -(d.x.transpose() * (d.y - d.x * beta)) / 20.0;
  CHECK((huber_gradient(d, beta, sigma) - ls).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((l2_gradient(d, beta) - ls).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(loss_objective(d, beta, Loss::squared, 0.1) ==
        doctest::Approx(l2_objective(d, beta)));
}

TEST_CASE("l2 gradient") {
  TaskDataset d;
  d.x = DesignMatrix::Ones(1, 1);
  d.y = Vector::Ones(1);
  CHECK(l2_gradient(d, Vector::Zero(1))[0] == doctest::Approx(-1.0));

  auto rng = rng_for(8);
  const TaskDataset r = random_task(rng, 15, 6, random_vector(rng, 6), 2.0);
  const Vector beta = random_vector(rng, 6);
  const Vector fd = central_difference(
      [&](const Vector& b) { return l2_objective(r, b); }, beta, 1e-5);
  const Vector g = l2_gradient(r, beta);
  for (Eigen::Index j = 0; j < 6; ++j) {
    CHECK(std::abs(g[j] - fd[j]) <= 1e-6 * std::max(std::abs(g[j]), 1e-2));
  }
}

TEST_CASE("objective is convex along segments") {
  auto rng = rng_for(9);
  const TaskDataset d = random_task(rng, 25, 4, random_vector(rng, 4), 5.0);
  for (int i = 0; i < 200; ++i) {
    const Vector a = random_vector(rng, 4, 3.0), b = random_vector(rng, 4, 3.0);
    const double t = uniform01(rng);
    const double mid = huber_objective(d, t * a + (1 - t) * b, 1.5);
    CHECK(mid <= t * huber_objective(d, a, 1.5) + (1 - t) * huber_objective(d, b, 1.5) + 1e-12);
  }
}

}
