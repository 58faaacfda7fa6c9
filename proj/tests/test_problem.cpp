#include <catch2/catch_amalgamated.hpp>

#include "qsgd/problem.hpp"

#include <cmath>

using namespace qsgd;
using Catch::Approx;

TEST_CASE("power-law spectrum values", "[problem]") {
  PowerLawSpectrum s = make_spectrum(3, 2.0);
  REQUIRE(s.eigenvalues[0] == 1.0);
  REQUIRE(s.eigenvalues[1] == 0.25);
  REQUIRE(s.eigenvalues[2] == Approx(1.0 / 9.0).epsilon(1e-15));

  REQUIRE(make_spectrum(1, 1.5).eigenvalues[0] == 1.0);
  REQUIRE(make_spectrum(1000, 2.0).eigenvalues[999] == Approx(1e-6).epsilon(1e-15));

  for (int i = 1; i < 3; ++i) {
    REQUIRE(s.eigenvalues[i] < s.eigenvalues[i - 1]);
    REQUIRE(s.eigenvalues[i] > 0.0);
  }
}

TEST_CASE("spectrum rejects bad parameters", "[problem]") {
  REQUIRE_THROWS_AS(make_spectrum(0, 2.0), std::invalid_argument);
  REQUIRE_THROWS_AS(make_spectrum(10, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(make_spectrum(10, 0.5), std::invalid_argument);
}

TEST_CASE("target sampling is deterministic and standard normal", "[problem]") {
  PowerLawSpectrum s = make_spectrum(100, 2.0);
  TargetModel t1 = sample_target(s, 1.0, 777);
  TargetModel t2 = sample_target(s, 1.0, 777);
  REQUIRE(t1.weights == t2.weights);

  TargetModel t0 = sample_target(s, 0.0, 3);
  REQUIRE(t0.noise_sigma == 0.0);

  // E[<w,w>/p] = 1 for standard normal weights; chi-square mean over seeds.
  double acc = 0.0;
  for (int seed = 0; seed < 1000; ++seed)
    acc += sample_target(s, 1.0, seed).weights.squaredNorm() / 100.0;
  REQUIRE(acc / 1000.0 == Approx(1.0).margin(0.05));
}

TEST_CASE("sketch sampling matches N(0, 1/M)", "[problem]") {
  PowerLawSpectrum s = make_spectrum(500, 2.0);
  SketchMatrix sk = sample_sketch(100, s, 11);
  REQUIRE(sk.rows == 100);
  REQUIRE(sk.cols == 500);

  SketchMatrix sk2 = sample_sketch(100, s, 11);
  REQUIRE(sk.entries == sk2.entries);

  const double var = sk.entries.array().square().mean();
  REQUIRE(var == Approx(0.01).epsilon(0.10));

  // average squared row norm = p/M
  const double row_norm = sk.entries.rowwise().squaredNorm().mean();
  REQUIRE(row_norm == Approx(5.0).epsilon(0.10));

  REQUIRE_THROWS_AS(sample_sketch(501, s, 0), std::invalid_argument);
  REQUIRE_THROWS_AS(sample_sketch(0, s, 0), std::invalid_argument);
}

TEST_CASE("sample_example marginals", "[problem]") {
  SECTION("noiseless unit target reproduces the first coordinate") {
    PowerLawSpectrum s = make_spectrum(8, 2.0);
    TargetModel target;
    target.weights = Eigen::VectorXd::Zero(8);
    target.weights[0] = 1.0;
    target.noise_sigma = 0.0;
    ProblemInstance inst(s, target, sample_sketch(4, s, 5));
    Rng rng(1);
    for (int i = 0; i < 100; ++i) {
      auto [x, y] = sample_example(inst, rng);
      REQUIRE(y == x[0]);
    }
  }

  SECTION("first-coordinate variance and noise variance") {
    ProblemInstance inst = make_instance(32, 2.0, 1.0, 8, 21);
    Rng rng(2);
    const int n = 10000;
    double sx = 0, sxx = 0, se = 0, see = 0;
    Eigen::VectorXd x;
    double y;
    for (int i = 0; i < n; ++i) {
      sample_example_into(inst, rng, x, y);
      sx += x[0];
      sxx += x[0] * x[0];
      const double noise = y - x.dot(inst.target.weights);
      se += noise;
      see += noise * noise;
    }
    REQUIRE(sxx / n - (sx / n) * (sx / n) == Approx(1.0).epsilon(0.05));
    REQUIRE(see / n - (se / n) * (se / n) == Approx(1.0).epsilon(0.05));
  }
}

TEST_CASE("sketched data covariance matches S diag(lambda) S^T", "[problem]") {
  ProblemInstance inst = make_instance(64, 2.0, 1.0, 16, 31);
  Rng rng(9);
  const int n = 10000;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(16, 16);
  Eigen::VectorXd x;
  double y;
  for (int i = 0; i < n; ++i) {
    sample_example_into(inst, rng, x, y);
    Eigen::VectorXd z = inst.sketch.entries * x;
    cov.noalias() += z * z.transpose();
  }
  cov /= n;
  Eigen::MatrixXd expected = inst.sketch.entries *
                             inst.spectrum.eigenvalues.asDiagonal() *
                             inst.sketch.entries.transpose();
  REQUIRE((cov - expected).norm() / expected.norm() < 0.05);
}

TEST_CASE("second moment of y", "[problem]") {
  ProblemInstance inst = make_instance(64, 2.0, 0.5, 16, 13);
  const double expected =
      (inst.spectrum.eigenvalues.array() * inst.target.weights.array().square()).sum() +
      0.25;
  Rng rng(4);
  const int n = 20000;
  double acc = 0;
  Eigen::VectorXd x;
  double y;
  for (int i = 0; i < n; ++i) {
    sample_example_into(inst, rng, x, y);
    acc += y * y;
  }
  REQUIRE(acc / n == Approx(expected).epsilon(0.1));
}

TEST_CASE("instance validates dimensions", "[problem]") {
  PowerLawSpectrum s = make_spectrum(16, 2.0);
  TargetModel t = sample_target(s, 1.0, 1);
  SketchMatrix sk = sample_sketch(4, make_spectrum(8, 2.0), 1);
  REQUIRE_THROWS_AS(ProblemInstance(s, t, sk), std::invalid_argument);
}
