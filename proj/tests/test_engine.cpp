#include <catch2/catch_amalgamated.hpp>

#include "qsgd/engine.hpp"

#include <cmath>

using namespace qsgd;
using Catch::Approx;

TEST_CASE("zero target, zero noise is a fixed point", "[engine]") {
  PowerLawSpectrum s = make_spectrum(16, 2.0);
  TargetModel t;
  t.weights = Eigen::VectorXd::Zero(16);
  t.noise_sigma = 0.0;
  ProblemInstance inst(s, t, sample_sketch(4, s, 71));

  SGDConfig cfg;
  cfg.steps = 100;
  cfg.seed = 1;
  TrajectoryResult r = run_sgd(inst, QuantConfig::identity(), cfg);
  REQUIRE(r.final_iterate.norm() == 0.0);
  REQUIRE(r.averaged_iterate.norm() == 0.0);
  REQUIRE_FALSE(r.diverged);
}

TEST_CASE("single identity step unrolls by hand", "[engine]") {
  ProblemInstance inst = make_instance(32, 2.0, 1.0, 8, 72);
  SGDConfig cfg;
  cfg.steps = 1;
  cfg.step_size = 0.1;
  cfg.seed = 73;
  TrajectoryResult r = run_sgd(inst, QuantConfig::identity(), cfg);

  // replay the engine's data stream
  Rng data(derive_seed(cfg.seed, seed_tag::kDataStream));
  Eigen::VectorXd x;
  double y;
  sample_example_into(inst, data, x, y);
  Eigen::VectorXd expected = 0.1 * y * (inst.sketch.entries * x);

  REQUIRE((r.final_iterate - expected).norm() == 0.0);
  REQUIRE(r.averaged_iterate.norm() == 0.0);  // average covers v_0 only
}

TEST_CASE("identity engine matches a minimal SGD reimplementation", "[engine]") {
  for (std::uint64_t seed : {101ULL, 202ULL, 303ULL}) {
    ProblemInstance inst = make_instance(24, 1.8, 0.5, 6, seed);
    SGDConfig cfg;
    cfg.steps = 200;
    cfg.step_size = 0.05;
    cfg.seed = seed + 7;
    TrajectoryResult r = run_sgd(inst, QuantConfig::identity(), cfg);

    // independent minimal implementation fed the same sample stream
    Rng data(derive_seed(cfg.seed, seed_tag::kDataStream));
    Eigen::VectorXd v = Eigen::VectorXd::Zero(6);
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(6);
    Eigen::VectorXd x;
    double y;
    for (long t = 0; t < cfg.steps; ++t) {
      sample_example_into(inst, data, x, y);
      Eigen::VectorXd z = inst.sketch.entries * x;
      acc += v;
      v += cfg.step_size * (y - z.dot(v)) * z;
    }
    REQUIRE((r.final_iterate - v).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((r.averaged_iterate - acc / cfg.steps).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("training reduces excess risk", "[engine]") {
  ProblemInstance inst = make_instance(32, 2.0, 1.0, 8, 75);
  SGDConfig cfg;
  cfg.steps = 5000;
  cfg.step_size = 0.1;
  cfg.seed = 76;
  TrajectoryResult r = run_sgd(inst, QuantConfig::identity(), cfg);
  REQUIRE_FALSE(r.diverged);
  const double risk_avg = population_risk(inst, r.averaged_iterate);
  const double risk_zero = population_risk(inst, Eigen::VectorXd::Zero(8));
  REQUIRE(risk_avg < risk_zero);
}

TEST_CASE("trajectories are bit-deterministic in the seed", "[engine]") {
  ProblemInstance inst = make_instance(32, 2.0, 1.0, 8, 77);
  QuantConfig q = QuantConfig::uniform(QuantScheme::exact_multiplicative(1e-3));
  SGDConfig cfg;
  cfg.steps = 500;
  cfg.seed = 78;
  TrajectoryResult a = run_sgd(inst, q, cfg);
  TrajectoryResult b = run_sgd(inst, q, cfg);
  REQUIRE(a.final_iterate == b.final_iterate);
  REQUIRE(a.averaged_iterate == b.averaged_iterate);

  cfg.seed = 79;
  TrajectoryResult c = run_sgd(inst, q, cfg);
  REQUIRE(a.final_iterate != c.final_iterate);
}

TEST_CASE("oversized steps trip the divergence guard", "[engine]") {
  ProblemInstance inst = make_instance(32, 2.0, 1.0, 8, 80);
  SGDConfig cfg;
  cfg.steps = 20000;
  cfg.step_size = 50.0;
  cfg.seed = 81;
  TrajectoryResult r = run_sgd(inst, QuantConfig::identity(), cfg);
  REQUIRE(r.diverged);
  REQUIRE(r.steps_completed < cfg.steps);
}

TEST_CASE("additive sketch fast path has the exact error law", "[engine]") {
  // Q_s(S) u = S u + sqrt(eps) ||u|| g must match the materialized
  // (S + sqrt(eps) G) u in mean and covariance.
  ProblemInstance inst = make_instance(24, 2.0, 1.0, 6, 82);
  const double eps = 1e-2;
  QuantConfig q;
  q.at(Site::Sketch) = QuantScheme::exact_additive(eps);

  Eigen::VectorXd x(24);
  Rng fill(83);
  for (int i = 0; i < 24; ++i) x[i] = fill.normal();
  Eigen::VectorXd base = inst.sketch.entries * x;

  const int reps = 20000;
  Eigen::MatrixXd cov_fast = Eigen::MatrixXd::Zero(6, 6);
  Eigen::VectorXd mean_fast = Eigen::VectorXd::Zero(6);
  {
    FeatureSampler sampler(inst, q);
    Rng rng(84);
    Eigen::VectorXd f(6);
    for (int r = 0; r < reps; ++r) {
      sampler.compute(x, rng, f);
      Eigen::VectorXd e = f - base;
      mean_fast += e;
      cov_fast.noalias() += e * e.transpose();
    }
  }
  Eigen::MatrixXd cov_full = Eigen::MatrixXd::Zero(6, 6);
  {
    Rng rng(85);
    for (int r = 0; r < reps; ++r) {
      Eigen::MatrixXd sq =
          quantize_matrix(inst.sketch.entries, QuantScheme::exact_additive(eps), rng);
      Eigen::VectorXd e = sq * x - base;
      cov_full.noalias() += e * e.transpose();
    }
  }
  cov_fast /= reps;
  cov_full /= reps;
  mean_fast /= reps;

  Eigen::MatrixXd target = eps * x.squaredNorm() * Eigen::MatrixXd::Identity(6, 6);
  REQUIRE((cov_fast - target).norm() / target.norm() < 0.05);
  REQUIRE((cov_full - target).norm() / target.norm() < 0.05);
  REQUIRE(mean_fast.norm() < 4 * std::sqrt(eps * x.squaredNorm() / reps) * 6);
}

TEST_CASE("frozen sketch quantization reuses one draw", "[engine]") {
  ProblemInstance inst = make_instance(24, 2.0, 1.0, 6, 86);
  QuantConfig q;
  q.at(Site::Sketch) = QuantScheme::exact_additive(1e-2);

  SGDConfig cfg;
  cfg.steps = 50;
  cfg.seed = 87;
  cfg.freeze_sketch_quantization = true;
  TrajectoryResult frozen = run_sgd(inst, q, cfg);
  cfg.freeze_sketch_quantization = false;
  TrajectoryResult fresh = run_sgd(inst, q, cfg);
  REQUIRE_FALSE(frozen.diverged);
  REQUIRE_FALSE(fresh.diverged);
  REQUIRE(frozen.final_iterate != fresh.final_iterate);

  // determinism holds in both modes
  cfg.freeze_sketch_quantization = true;
  REQUIRE(run_sgd(inst, q, cfg).final_iterate == frozen.final_iterate);
}

TEST_CASE("step records are captured on request", "[engine]") {
  ProblemInstance inst = make_instance(16, 2.0, 1.0, 4, 88);
  SGDConfig cfg;
  cfg.steps = 10;
  cfg.seed = 89;
  cfg.record_every = 5;
  cfg.record_iterates = true;
  TrajectoryResult r = run_sgd(inst, QuantConfig::identity(), cfg);
  REQUIRE(r.records.size() == 2);
  REQUIRE(r.records[0].step == 5);
  REQUIRE(r.records[1].step == 10);
  REQUIRE(r.records[1].iterate == r.final_iterate);
  REQUIRE(r.records[0].feature.size() == 4);
}

TEST_CASE("mean dynamics oracle", "[engine]") {
  SECTION("t = 0 is exact") {
    ProblemInstance inst = make_instance(32, 2.0, 1.0, 8, 90);
    QuantConfig q = QuantConfig::uniform(QuantScheme::exact_multiplicative(1e-2));
    MeanDynamicsReport rep = mean_dynamics_oracle(inst, q, 0.1, 0, 100, 91);
    REQUIRE(rep.max_dev_stderr_units == 0.0);
    REQUIRE((rep.empirical_mean - rep.predicted_mean).norm() == 0.0);
  }

  SECTION("identity one-step prediction matches the hand formula") {
    ProblemInstance inst = make_instance(8, 2.0, 1.0, 4, 92);
    MeanDynamicsReport rep =
        mean_dynamics_oracle(inst, QuantConfig::identity(), 0.1, 1, 2000, 93);
    Eigen::VectorXd by_hand =
        0.1 * sketched_cross_moment(inst) - optimal_sketched(inst);
    REQUIRE((rep.predicted_mean - by_hand).norm() < 1e-10 * (1 + by_hand.norm()));
    REQUIRE(rep.max_dev_stderr_units <= 4.0);
  }

  SECTION("multiplicative config stays within 4 stderr at t = 50") {
    ProblemInstance inst = make_instance(32, 2.0, 1.0, 8, 94);
    QuantConfig q = QuantConfig::uniform(QuantScheme::exact_multiplicative(1e-2));
    MeanDynamicsReport rep = mean_dynamics_oracle(inst, q, 0.1, 50, 2000, 95);
    REQUIRE(rep.max_dev_stderr_units <= 4.0);
  }
}

TEST_CASE("engine rejects bad configs", "[engine]") {
  ProblemInstance inst = make_instance(16, 2.0, 1.0, 4, 96);
  SGDConfig cfg;
  cfg.steps = 0;
  REQUIRE_THROWS_AS(run_sgd(inst, QuantConfig::identity(), cfg), std::invalid_argument);
  cfg.steps = 10;
  cfg.step_size = 0.0;
  REQUIRE_THROWS_AS(run_sgd(inst, QuantConfig::identity(), cfg), std::invalid_argument);
}
