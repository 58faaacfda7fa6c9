#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "qsgd/engine.hpp"
#include "qsgd/problem.hpp"
#include "qsgd/quantize.hpp"
#include "qsgd/risk.hpp"
#include "qsgd/theory.hpp"

namespace qsgd {

struct CheckLine {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyReport {
  std::string suite;
  bool passed = true;
  std::vector<CheckLine> checks;

  void add(const std::string& name, bool ok, const std::string& detail) {
    checks.push_back({name, ok, detail});
    passed = passed && ok;
  }

  nlohmann::json to_json() const {
    nlohmann::json arr = nlohmann::json::array();
    for (const CheckLine& c : checks)
      arr.push_back({{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}});
    return {{"suite", suite}, {"passed", passed}, {"checks", arr}};
  }
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream out;
  out.precision(6);
  out << v;
  return out.str();
}

}  // namespace detail

// Quantizer conformance at pinned scale: unbiasedness (4 stderr at R = 1e5,
// 20 random probes, all five scheme kinds), exact-scheme covariance identities
// (5% Frobenius at R = 5e4), the rounding variance formula (3 stderr) and the
// fourth-moment bound s^4/8 at midpoints.
inline VerifyReport verify_moments_suite(std::uint64_t seed = 0x4D4F4DULL) {
  VerifyReport rep;
  rep.suite = "moments";
  Rng rng(derive_seed(seed, seed_tag::kProbe));

  const std::vector<QuantScheme> schemes = {
      QuantScheme::identity(), QuantScheme::exact_multiplicative(1e-2),
      QuantScheme::exact_additive(1e-4), QuantScheme::rounding_float(8),
      QuantScheme::rounding_fixed(6)};

  bool unbiased_ok = true;
  std::string unbiased_detail;
  for (const QuantScheme& scheme : schemes) {
    for (int probe_i = 0; probe_i < 20; ++probe_i) {
      Eigen::VectorXd probe(6);
      for (int i = 0; i < probe.size(); ++i) probe[i] = 4.0 * rng.normal();
      Rng mc(derive_seed(seed, seed_tag::kReplication,
                         static_cast<std::uint64_t>(probe_i),
                         static_cast<std::uint64_t>(scheme.kind)));
      MomentReport m = verify_moments(scheme, probe, 100000, mc);
      if (m.bias_flag) {
        unbiased_ok = false;
        unbiased_detail = scheme_to_string(scheme) + " probe " + std::to_string(probe_i);
      }
    }
  }
  rep.add("unbiasedness_4stderr_R1e5_20probes", unbiased_ok,
          unbiased_ok ? "all scheme kinds unbiased" : ("flagged: " + unbiased_detail));

  {
    Eigen::VectorXd probe(8);
    Rng prng(derive_seed(seed, seed_tag::kProbe, 1));
    for (int i = 0; i < probe.size(); ++i) probe[i] = 1.0 + prng.uniform01();
    for (const QuantScheme& scheme :
         {QuantScheme::exact_multiplicative(1e-2), QuantScheme::exact_additive(1e-4)}) {
      Rng mc(derive_seed(seed, seed_tag::kReplication, 99,
                         static_cast<std::uint64_t>(scheme.kind)));
      MomentReport m = verify_moments(scheme, probe, 50000, mc);
      const double rel = (m.empirical_covariance - m.reference).norm() / m.reference.norm();
      rep.add("covariance_identity_" + scheme_to_string(scheme), rel <= 0.05,
              "relative Frobenius error " + detail::fmt(rel));
    }
  }

  {
    const QuantScheme scheme = QuantScheme::rounding_fixed(3);
    bool ok = true;
    std::string worst;
    for (int probe_i = 0; probe_i < 20; ++probe_i) {
      Eigen::VectorXd probe(4);
      for (int i = 0; i < probe.size(); ++i) probe[i] = 2.0 * rng.normal();
      Rng mc(derive_seed(seed, seed_tag::kReplication, 200 + probe_i));
      MomentReport m = verify_moments(scheme, probe, 100000, mc);
      for (int i = 0; i < probe.size(); ++i) {
        const double gap = std::fabs(m.coordinate_variance[i] -
                                     m.coordinate_variance_formula[i]);
        const double tol = 3.0 * m.coordinate_variance_stderr[i] + 1e-12;
        if (gap > tol) {
          ok = false;
          worst = "probe " + std::to_string(probe_i) + " coord " + std::to_string(i) +
                  " gap " + detail::fmt(gap);
        }
      }
    }
    rep.add("rounding_variance_formula_3stderr", ok, ok ? "matches bin formula" : worst);
  }

  {
    // Fourth moment at bin midpoints: E[(Q(x)-x)^4 | x] <= s^4 / 8.
    const QuantScheme scheme = QuantScheme::rounding_fixed(2);
    const double s = rounding_bin_width(0.0, scheme);
    Eigen::VectorXd probe(3);
    probe << 0.5 * s, 1.5 * s, -2.5 * s;
    Rng mc(derive_seed(seed, seed_tag::kReplication, 300));
    MomentReport m = verify_moments(scheme, probe, 100000, mc);
    bool ok = true;
    for (int i = 0; i < probe.size(); ++i)
      ok = ok && m.coordinate_fourth_moment[i] <= std::pow(s, 4) / 8.0 + 1e-12;
    rep.add("fourth_moment_midpoint_bound", ok,
            "max fourth moment " + detail::fmt(m.coordinate_fourth_moment.maxCoeff()) +
                " vs bound " + detail::fmt(std::pow(s, 4) / 8.0));
  }

  return rep;
}

// Mean-dynamics identity at pinned scale: M = 8, p = 32, exact multiplicative
// eps = 1e-2 at all sites, gamma = 0.1, t in {1, 10, 50}, 2000 replications;
// the empirical mean of eta_t must stay within 4 stderr of (I - gamma H)^t eta_0.
inline VerifyReport verify_dynamics_suite(std::uint64_t seed = 0x44594EULL) {
  VerifyReport rep;
  rep.suite = "dynamics";

  ProblemInstance inst = make_instance(32, 2.0, 1.0, 8, derive_seed(seed, 1));
  QuantConfig qcfg = QuantConfig::uniform(QuantScheme::exact_multiplicative(1e-2));

  {
    MeanDynamicsReport r0 = mean_dynamics_oracle(inst, qcfg, 0.1, 0, 100, seed);
    const double gap = (r0.empirical_mean - r0.predicted_mean).norm();
    rep.add("t0_equals_minus_vq_star", gap == 0.0, "gap " + detail::fmt(gap));
  }

  for (long t : {1L, 10L, 50L}) {
    MeanDynamicsReport r = mean_dynamics_oracle(inst, qcfg, 0.1, t, 2000,
                                                derive_seed(seed, 2, t));
    rep.add("mean_dynamics_t" + std::to_string(t), r.max_dev_stderr_units <= 4.0,
            "max deviation " + detail::fmt(r.max_dev_stderr_units) + " stderr units");
  }

  {
    // All-identity one-step check against the hand-computed expectation
    // E[v_1] = gamma S H w*, i.e. eta_1 = gamma S H w* - v*.
    ProblemInstance small = make_instance(8, 2.0, 1.0, 4, derive_seed(seed, 3));
    MeanDynamicsReport r =
        mean_dynamics_oracle(small, QuantConfig::identity(), 0.1, 1, 2000,
                             derive_seed(seed, 4));
    Eigen::VectorXd by_hand =
        0.1 * sketched_cross_moment(small) - optimal_sketched(small);
    const double formula_gap = (r.predicted_mean - by_hand).norm();
    rep.add("identity_one_step_prediction", formula_gap <= 1e-10 * (1.0 + by_hand.norm()),
            "prediction vs hand formula gap " + detail::fmt(formula_gap));
    rep.add("identity_one_step_mc", r.max_dev_stderr_units <= 4.0,
            "max deviation " + detail::fmt(r.max_dev_stderr_units) + " stderr units");
  }

  return rep;
}

// Risk decomposition identities on 50 random instances.
inline VerifyReport verify_decomposition_suite(std::uint64_t seed = 0x444543ULL) {
  VerifyReport rep;
  rep.suite = "decomposition";
  Rng rng(derive_seed(seed, seed_tag::kProbe));

  double worst_sum = 0.0, worst_quad = 0.0;
  bool sum_ok = true, quad_ok = true, nonneg_ok = true;
  for (int trial = 0; trial < 50; ++trial) {
    const int p = 16 + static_cast<int>(rng.uniform01() * 48);
    const int m = 2 + static_cast<int>(rng.uniform01() * (p / 2 - 2));
    const double a = 1.2 + 1.8 * rng.uniform01();
    const double sigma = 2.0 * rng.uniform01();
    ProblemInstance inst = make_instance(p, a, sigma, m, derive_seed(seed, 10, trial));

    Eigen::MatrixXd shs = sketched_covariance(inst);
    Eigen::VectorXd v_star = optimal_sketched(inst, shs);
    Eigen::VectorXd v(m);
    for (int i = 0; i < m; ++i) v[i] = rng.normal();

    RiskBreakdown b = decompose_risk(inst, v, shs, v_star);
    const double sum_gap =
        std::fabs(b.total - (b.irreducible + b.approximation + b.excess));
    worst_sum = std::max(worst_sum, sum_gap / std::max(1.0, std::fabs(b.total)));
    if (sum_gap > 1e-10 * std::max(1.0, std::fabs(b.total))) sum_ok = false;

    Eigen::VectorXd delta = v - v_star;
    const double quad = 0.5 * delta.dot(shs * delta);
    const double quad_gap = std::fabs(b.excess - quad);
    const double scale = std::max({std::fabs(b.excess), std::fabs(quad), 1.0});
    worst_quad = std::max(worst_quad, quad_gap / scale);
    if (quad_gap > 1e-8 * scale) quad_ok = false;

    if (b.approximation < 0.0 || b.excess < -1e-12 * std::max(1.0, b.total))
      nonneg_ok = false;
  }
  rep.add("total_equals_sum_1e-10", sum_ok, "worst relative gap " + detail::fmt(worst_sum));
  rep.add("excess_quadratic_identity_1e-8", quad_ok,
          "worst relative gap " + detail::fmt(worst_quad));
  rep.add("approx_and_excess_nonnegative", nonneg_ok, "");
  return rep;
}

// Pinned spectral calibration at (a = 2, M = 100, p = 1000), 20 sketch seeds.
// The constants below were measured once with the calibration seed 0xCA11B and
// frozen; fresh seed sets must land within a factor 1.5 of the band.
inline constexpr double kPinnedSpectralC1 = 0.48788639362093955;
inline constexpr double kPinnedSpectralC2 = 1.2638842153833383;
// Empirical floor constant for the additive-quantization spectral lift
// lambda_M(Hfq) >= mu_M(SHS^T) + c * eps_d * p / M (measured c ~ 0.49).
inline constexpr double kPinnedAdditiveFloorC = 0.4;

inline VerifyReport verify_spectra_suite(std::uint64_t seed = 0xACCE97ULL) {
  VerifyReport rep;
  rep.suite = "spectra";
  const int m = 100, p = 1000;
  const double a = 2.0;
  ProblemInstance proto = make_instance(p, a, 1.0, m, derive_seed(seed, 1));

  {
    SpectralLemmaReport r =
        check_spectral_lemmas(proto, QuantConfig::identity(), 20, derive_seed(seed, 2));
    const bool band_ok = r.c1_hat >= kPinnedSpectralC1 / 1.5 &&
                         r.c2_hat <= kPinnedSpectralC2 * 1.5;
    rep.add("power_law_band_vs_pinned", band_ok,
            "c1 " + detail::fmt(r.c1_hat) + " c2 " + detail::fmt(r.c2_hat) +
                " (pinned " + detail::fmt(kPinnedSpectralC1) + ", " +
                detail::fmt(kPinnedSpectralC2) + ")");
    rep.add("half_spectrum_ratio_finite", r.half_ratio_max > 1.0 && r.half_ratio_max < 1e4,
            "max mu_{M/2}/mu_M " + detail::fmt(r.half_ratio_max));
  }

  {
    QuantConfig qcfg;
    for (Site s : {Site::Data, Site::Sketch, Site::Feature})
      qcfg.at(s) = QuantScheme::exact_multiplicative(1e-3);
    SpectralLemmaReport r = check_spectral_lemmas(proto, qcfg, 20, derive_seed(seed, 3));
    rep.add("multiplicative_ratio_exact", r.mult_ratio_dev <= 1e-10,
            "max |ratio - " + detail::fmt(r.mult_ratio_expected) + "| = " +
                detail::fmt(r.mult_ratio_dev));
  }

  {
    QuantConfig qcfg;
    qcfg.at(Site::Data) = QuantScheme::exact_additive(1e-3);
    SpectralLemmaReport r = check_spectral_lemmas(proto, qcfg, 20, derive_seed(seed, 4));
    rep.add("additive_spectrum_dominates", r.additive_min_gap >= -1e-12,
            "min eigenvalue gap " + detail::fmt(r.additive_min_gap));
    const double floor = kPinnedAdditiveFloorC * 1e-3 * static_cast<double>(p) / m;
    rep.add("additive_floor_lift", r.additive_floor_gap >= floor,
            "tail lift " + detail::fmt(r.additive_floor_gap) + " vs " + detail::fmt(floor));
  }

  return rep;
}

}  // namespace qsgd
