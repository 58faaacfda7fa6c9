#include <catch2/catch_amalgamated.hpp>

#include "qsgd/risk.hpp"

#include <cmath>

using namespace qsgd;
using Catch::Approx;

namespace {

// Identity sketch (M = p) for the degenerate-case checks.
ProblemInstance identity_sketch_instance(int p, double a, double sigma, std::uint64_t seed) {
  PowerLawSpectrum s = make_spectrum(p, a);
  TargetModel t = sample_target(s, sigma, seed);
  SketchMatrix sk;
  sk.rows = p;
  sk.cols = p;
  sk.seed = 0;
  sk.entries = Eigen::MatrixXd::Identity(p, p);
  return ProblemInstance(s, t, sk);
}

QuantFeatureCovariance covariance_from_eigenvalues(const Eigen::VectorXd& eigs) {
  QuantFeatureCovariance cov;
  cov.matrix = eigs.asDiagonal();
  cov.eigenvalues = eigs;
  return cov;
}

}  // namespace

TEST_CASE("population risk closed form", "[risk]") {
  ProblemInstance inst = make_instance(32, 2.0, 1.0, 8, 51);

  const double at_zero = population_risk(inst, Eigen::VectorXd::Zero(8));
  const double expected =
      0.5 * ((inst.spectrum.eigenvalues.array() * inst.target.weights.array().square())
                 .sum() +
             1.0);
  REQUIRE(at_zero == Approx(expected).epsilon(1e-14));

  SECTION("sigma=1, w*=0 gives 1/2") {
    ProblemInstance zero = inst;
    zero.target.weights.setZero();
    REQUIRE(population_risk(zero, Eigen::VectorXd::Zero(8)) == 0.5);
  }

  SECTION("matches Monte Carlo") {
    Rng rng(52);
    Eigen::VectorXd v(8);
    for (int i = 0; i < 8; ++i) v[i] = rng.normal();
    const double closed = population_risk(inst, v);
    const int n = 100000;
    double acc = 0, acc2 = 0;
    Eigen::VectorXd x;
    double y;
    for (int i = 0; i < n; ++i) {
      sample_example_into(inst, rng, x, y);
      const double loss = 0.5 * std::pow((inst.sketch.entries * x).dot(v) - y, 2);
      acc += loss;
      acc2 += loss * loss;
    }
    const double mc = acc / n;
    const double stderr_mc = std::sqrt((acc2 / n - mc * mc) / n);
    REQUIRE(std::fabs(closed - mc) <= 3 * stderr_mc);
  }
}

TEST_CASE("optimal sketched predictor", "[risk]") {
  SECTION("identity sketch recovers w*") {
    ProblemInstance inst = identity_sketch_instance(12, 2.0, 1.0, 3);
    Eigen::VectorXd v_star = optimal_sketched(inst);
    REQUIRE((v_star - inst.target.weights).norm() < 1e-10);
  }

  SECTION("local optimality under random perturbations") {
    ProblemInstance inst = make_instance(32, 2.0, 1.0, 8, 53);
    Eigen::VectorXd v_star = optimal_sketched(inst);
    const double base = population_risk(inst, v_star);
    Rng rng(54);
    for (int trial = 0; trial < 100; ++trial) {
      Eigen::VectorXd delta(8);
      for (int i = 0; i < 8; ++i) delta[i] = 0.1 * rng.normal();
      REQUIRE(population_risk(inst, v_star + delta) >= base - 1e-12);
    }
  }

  SECTION("approximation term is nonnegative") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      ProblemInstance inst = make_instance(48, 1.5, 0.5, 12, seed);
      Eigen::VectorXd v_star = optimal_sketched(inst);
      const double approx = population_risk(inst, v_star) - 0.125;
      REQUIRE(approx >= -1e-12);
    }
  }
}

TEST_CASE("quantized feature covariance closed forms", "[risk]") {
  ProblemInstance inst = make_instance(32, 2.0, 1.0, 8, 55);
  Eigen::MatrixXd shs = sketched_covariance(inst);

  SECTION("identity config gives S H S^T exactly") {
    QuantFeatureCovariance cov =
        quant_feature_covariance(inst, QuantConfig::identity(), CovarianceMode::ClosedForm);
    REQUIRE((cov.matrix - shs).norm() == 0.0);
  }

  SECTION("multiplicative at d,s,f scales S H S^T") {
    QuantConfig q;
    for (Site s : {Site::Data, Site::Sketch, Site::Feature})
      q.at(s) = QuantScheme::exact_multiplicative(0.1);
    QuantFeatureCovariance cov =
        quant_feature_covariance(inst, q, CovarianceMode::ClosedForm);
    REQUIRE((cov.matrix - std::pow(1.1, 3) * shs).norm() / shs.norm() < 1e-14);

    QuantFeatureCovariance mc =
        quant_feature_covariance(inst, q, CovarianceMode::MonteCarlo, 50000, 56);
    REQUIRE((mc.matrix - cov.matrix).norm() / cov.matrix.norm() < 0.05);
  }

  SECTION("additive at d,s,f adds S S^T and identity terms") {
    QuantConfig q;
    for (Site s : {Site::Data, Site::Sketch, Site::Feature})
      q.at(s) = QuantScheme::exact_additive(1e-3);
    QuantFeatureCovariance cov =
        quant_feature_covariance(inst, q, CovarianceMode::ClosedForm);
    Eigen::MatrixXd sst = inst.sketch.entries * inst.sketch.entries.transpose();
    Eigen::MatrixXd expected =
        shs + 1e-3 * sst +
        (1e-3 * (inst.spectrum.trace() + 1e-3 * 32) + 1e-3) *
            Eigen::MatrixXd::Identity(8, 8);
    REQUIRE((cov.matrix - expected).norm() / expected.norm() < 1e-13);

    QuantFeatureCovariance mc =
        quant_feature_covariance(inst, q, CovarianceMode::MonteCarlo, 50000, 57);
    REQUIRE((mc.matrix - cov.matrix).norm() / cov.matrix.norm() < 0.05);
  }

  SECTION("mixed exact families compose") {
    QuantConfig q;
    q.at(Site::Data) = QuantScheme::exact_multiplicative(0.05);
    q.at(Site::Sketch) = QuantScheme::exact_additive(2e-3);
    q.at(Site::Feature) = QuantScheme::exact_multiplicative(0.02);
    QuantFeatureCovariance cov =
        quant_feature_covariance(inst, q, CovarianceMode::ClosedForm);
    Eigen::MatrixXd expected =
        1.02 * (1.05 * shs +
                2e-3 * 1.05 * inst.spectrum.trace() * Eigen::MatrixXd::Identity(8, 8));
    REQUIRE((cov.matrix - expected).norm() / expected.norm() < 1e-13);

    QuantFeatureCovariance mc =
        quant_feature_covariance(inst, q, CovarianceMode::MonteCarlo, 50000, 58);
    REQUIRE((mc.matrix - cov.matrix).norm() / cov.matrix.norm() < 0.05);
  }

  SECTION("rounding requires Monte Carlo") {
    QuantConfig q;
    q.at(Site::Data) = QuantScheme::rounding_fixed(8);
    REQUIRE_THROWS_AS(quant_feature_covariance(inst, q, CovarianceMode::ClosedForm),
                      std::invalid_argument);
    QuantFeatureCovariance mc =
        quant_feature_covariance(inst, q, CovarianceMode::MonteCarlo, 2000, 59);
    REQUIRE(mc.mc_samples == 2000);
    REQUIRE_FALSE(mc.closed_form);
  }

  SECTION("additive MC covariance dominates S H S^T up to noise") {
    QuantConfig q;
    for (Site s : {Site::Data, Site::Sketch, Site::Feature})
      q.at(s) = QuantScheme::exact_additive(1e-3);
    QuantFeatureCovariance mc =
        quant_feature_covariance(inst, q, CovarianceMode::MonteCarlo, 50000, 60);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mc.matrix - shs);
    REQUIRE(es.eigenvalues().minCoeff() >= -0.02 * shs.operatorNorm());
  }
}

TEST_CASE("optimal quantized predictor", "[risk]") {
  ProblemInstance inst = make_instance(32, 2.0, 1.0, 8, 61);
  Eigen::VectorXd v_star = optimal_sketched(inst);

  SECTION("identity config equals the sketched optimum") {
    QuantFeatureCovariance cov =
        quant_feature_covariance(inst, QuantConfig::identity(), CovarianceMode::ClosedForm);
    Eigen::VectorXd vq = optimal_quantized(inst, cov);
    REQUIRE((vq - v_star).norm() < 1e-10 * v_star.norm());
  }

  SECTION("uniform multiplicative shrinks by (1+eps)^3") {
    QuantConfig q = QuantConfig::uniform(QuantScheme::exact_multiplicative(0.2));
    QuantFeatureCovariance cov =
        quant_feature_covariance(inst, q, CovarianceMode::ClosedForm);
    Eigen::VectorXd vq = optimal_quantized(inst, cov);
    REQUIRE((vq - v_star / std::pow(1.2, 3)).norm() < 1e-10 * v_star.norm());

    // the gap between the sketched and quantized optima costs risk
    Eigen::MatrixXd shs = sketched_covariance(inst);
    Eigen::VectorXd gap = vq - v_star;
    REQUIRE(0.5 * gap.dot(shs * gap) >= 0.0);
  }
}

TEST_CASE("risk decomposition", "[risk]") {
  ProblemInstance inst = make_instance(32, 2.0, 1.0, 8, 62);
  Eigen::MatrixXd shs = sketched_covariance(inst);
  Eigen::VectorXd v_star = optimal_sketched(inst, shs);

  SECTION("at the optimum, excess vanishes") {
    RiskBreakdown b = decompose_risk(inst, v_star, shs, v_star);
    REQUIRE(b.excess == 0.0);
    REQUIRE(b.irreducible == 0.5);
    REQUIRE(b.total == Approx(b.irreducible + b.approximation).epsilon(1e-14));
  }

  SECTION("at zero, excess is the quadratic at the origin") {
    RiskBreakdown b = decompose_risk(inst, Eigen::VectorXd::Zero(8), shs, v_star);
    REQUIRE(b.excess == Approx(0.5 * v_star.dot(shs * v_star)).epsilon(1e-8));
  }

  SECTION("identity holds for random v") {
    Rng rng(63);
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::VectorXd v(8);
      for (int i = 0; i < 8; ++i) v[i] = 2.0 * rng.normal();
      RiskBreakdown b = decompose_risk(inst, v, shs, v_star);
      REQUIRE(b.total ==
              Approx(b.irreducible + b.approximation + b.excess).epsilon(1e-10));
      REQUIRE(b.approximation >= 0.0);
      REQUIRE(b.excess >= 0.0);
    }
  }
}

TEST_CASE("effective dimension", "[risk]") {
  SECTION("all eigenvalues above threshold") {
    Eigen::VectorXd eigs(3);
    eigs << 1.0, 0.5, 0.3;
    // threshold 1/(N gamma) = 0.2
    EffectiveDimension d = compute_deff(covariance_from_eigenvalues(eigs), 10, 0.5);
    REQUIRE(d.k_star == 3);
    REQUIRE(d.d_eff == 3.0);
  }
  SECTION("all eigenvalues below threshold") {
    Eigen::VectorXd eigs(3);
    eigs << 0.1, 0.05, 0.01;
    EffectiveDimension d = compute_deff(covariance_from_eigenvalues(eigs), 10, 0.5);
    REQUIRE(d.k_star == 0);
    REQUIRE(d.d_eff == Approx(25.0 * eigs.array().square().sum()).epsilon(1e-14));
  }
  SECTION("hand-evaluated mixed case") {
    Eigen::VectorXd eigs(3);
    eigs << 1.0, 0.25, 1.0 / 9.0;
    // N gamma = 5 -> threshold 0.2 -> k* = 2, d_eff = 2 + 25/81
    EffectiveDimension d = compute_deff(covariance_from_eigenvalues(eigs), 50, 0.1);
    REQUIRE(d.k_star == 2);
    REQUIRE(d.d_eff == Approx(2.0 + 25.0 / 81.0).epsilon(1e-14));
  }
  SECTION("rejects bad arguments") {
    Eigen::VectorXd eigs(1);
    eigs << 1.0;
    REQUIRE_THROWS_AS(compute_deff(covariance_from_eigenvalues(eigs), 0, 0.1),
                      std::invalid_argument);
  }
}
