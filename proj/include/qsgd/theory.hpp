#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include "qsgd/quantize.hpp"
#include "qsgd/risk.hpp"

namespace qsgd {

enum class Family { Multiplicative, Additive };
enum class BoundSide { Upper, Lower };

inline const char* family_name(Family f) {
  return f == Family::Multiplicative ? "multiplicative" : "additive";
}
inline const char* side_name(BoundSide s) { return s == BoundSide::Upper ? "upper" : "lower"; }

// Signals that an effective-size formula is evaluated outside the regime
// where its defining bound holds.
struct OutOfRegimeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using SiteEps = std::array<double, kNumSites>;  // indexed by Site

inline double site_eps(const SiteEps& e, Site s) { return e[static_cast<int>(s)]; }

// Compound quantization coefficients. eps3 captures spectral distortion and
// the quantized-feature-space gap (data/sketch/feature sites); eps2 captures
// noise amplification (parameter/activation/output-gradient sites). The label
// site enters neither. Upper coefficients use the per-site upper errors; the
// lower counterparts mix both sides as defined for the lower bounds.
struct CompoundCoefficients {
  Family family = Family::Multiplicative;
  double eps2_upper = 0.0;
  double eps3_upper = 0.0;
  double eps2_lower = 0.0;
  double eps3_lower = 0.0;
  SiteEps site_upper{};
  SiteEps site_lower{};
  int p = 0;
  int m = 0;
  double a = 0.0;
};

inline CompoundCoefficients compound_coefficients(Family family, const SiteEps& upper,
                                                  const SiteEps& lower, int p, int m,
                                                  double a) {
  for (double e : upper)
    if (e < 0.0 || !std::isfinite(e))
      throw std::invalid_argument("compound_coefficients: negative upper eps");
  for (double e : lower)
    if (e < 0.0 || !std::isfinite(e))
      throw std::invalid_argument("compound_coefficients: negative lower eps");
  if (family == Family::Additive && (m < 1 || p < m || a <= 1.0))
    throw std::invalid_argument("compound_coefficients: additive family needs p >= M >= 1, a > 1");

  CompoundCoefficients c;
  c.family = family;
  c.site_upper = upper;
  c.site_lower = lower;
  c.p = p;
  c.m = m;
  c.a = a;

  const double ud = site_eps(upper, Site::Data), us = site_eps(upper, Site::Sketch),
               uf = site_eps(upper, Site::Feature), up = site_eps(upper, Site::Parameter),
               ua = site_eps(upper, Site::Activation),
               uo = site_eps(upper, Site::OutputGradient);
  const double ld = site_eps(lower, Site::Data), ls = site_eps(lower, Site::Sketch),
               lf = site_eps(lower, Site::Feature), lp = site_eps(lower, Site::Parameter),
               la = site_eps(lower, Site::Activation),
               lo = site_eps(lower, Site::OutputGradient);

  if (family == Family::Multiplicative) {
    c.eps2_upper = (1.0 + uo) * (1.0 + up + (1.0 + up) * ua) - 1.0;
    c.eps3_upper = 1.0 - 1.0 / ((1.0 + ud) * (1.0 + uf) * (1.0 + us));
    c.eps2_lower =
        (1.0 + lo) * (1.0 + (lp + (1.0 + lp) * la) / ((1.0 + ud) * (1.0 + uf) * (1.0 + us))) -
        1.0;
    c.eps3_lower = 1.0 - 1.0 / ((1.0 + ld) * (1.0 + lf) * (1.0 + ls));
  } else {
    const double pd = static_cast<double>(p);
    const double md = static_cast<double>(m);
    c.eps2_upper = ua + uo + up * (1.0 + pd * ud + md * (uf + us + us * ud * pd));
    const double gap_upper = uf + us * (1.0 + ud * pd) + ud * pd / md;
    c.eps3_upper = gap_upper == 0.0 ? 0.0 : gap_upper / (std::pow(md, -a) + gap_upper);
    c.eps2_lower = la + lo + lp * (1.0 + pd * ld + md * (lf + ls * ld * pd + ls));
    const double gap_lower = lf + (1.0 + ld * pd) * ls + ld * pd / md;
    c.eps3_lower = gap_lower / (1.0 + gap_lower);
  }
  return c;
}

// Convenience for exact schemes where the per-site error is sharp
// (upper == lower == eps).
inline CompoundCoefficients compound_coefficients_sharp(Family family, const SiteEps& eps,
                                                        int p, int m, double a) {
  return compound_coefficients(family, eps, eps, p, m, a);
}

// Reads the sharp per-site eps vector off a QuantConfig of exact schemes and
// infers the family. Mixed or rounding configs are rejected.
inline std::pair<Family, SiteEps> site_eps_from_config(const QuantConfig& qcfg) {
  bool any_mult = false, any_add = false;
  SiteEps eps{};
  for (int i = 0; i < kNumSites; ++i) {
    const QuantScheme& s = qcfg.sites[i];
    eps[i] = s.eps;
    if (s.is_rounding())
      throw std::invalid_argument(
          "site_eps_from_config: rounding schemes have no sharp eps; configure the family "
          "explicitly");
    if (s.kind == QuantKind::ExactMultiplicative && s.eps > 0.0) any_mult = true;
    if (s.kind == QuantKind::ExactAdditive && s.eps > 0.0) any_add = true;
  }
  if (any_mult && any_add)
    throw std::invalid_argument("site_eps_from_config: mixed exact families");
  return {any_add ? Family::Additive : Family::Multiplicative, eps};
}

struct EffectiveSizes {
  double m_eff = 0.0;
  double n_eff = 0.0;
  Family family = Family::Multiplicative;
  BoundSide side = BoundSide::Upper;
};

// Effective model/data sizes. Upper-side formulas:
//   multiplicative: M_eff = M,
//     N_eff = N [ (1+eps2) / (1-eps3)^(1/a) ]^(-a/(a-1));
//   additive: same N_eff with the additive coefficients and
//     M_eff = M [ 1 + (1+eps2) eps3^2 / (1-eps3) ]^(-1/(a-1)).
// Lower-side formulas use the mixed coefficients; the additive lower N_eff
// is only defined while N gamma (1/(1-eps3_lower) - 1) < 1.
inline EffectiveSizes effective_sizes(const CompoundCoefficients& c, int m, long n,
                                      double a, BoundSide side, double gamma = 0.0) {
  if (a <= 1.0) throw std::invalid_argument("effective_sizes: a must be > 1");
  EffectiveSizes out;
  out.family = c.family;
  out.side = side;
  const double nd = static_cast<double>(n);
  const double md = static_cast<double>(m);
  const double exponent = -a / (a - 1.0);

  if (side == BoundSide::Upper) {
    const double factor =
        (1.0 + c.eps2_upper) / std::pow(1.0 - c.eps3_upper, 1.0 / a);
    out.n_eff = nd * std::pow(factor, exponent);
    if (c.family == Family::Multiplicative) {
      out.m_eff = md;
    } else {
      const double bracket = 1.0 + (1.0 + c.eps2_upper) * c.eps3_upper * c.eps3_upper /
                                       (1.0 - c.eps3_upper);
      out.m_eff = md * std::pow(bracket, -1.0 / (a - 1.0));
    }
    return out;
  }

  out.m_eff = md;  // both lower bounds keep M_eff = M
  if (c.family == Family::Multiplicative) {
    const double factor = (1.0 - c.eps3_upper) * (1.0 + c.eps2_lower) /
                          std::pow(1.0 - c.eps3_lower, 1.0 / a);
    out.n_eff = nd * std::pow(factor, exponent);
  } else {
    if (gamma <= 0.0)
      throw std::invalid_argument("effective_sizes: additive lower side needs gamma > 0");
    const double drift = nd * gamma * (1.0 / (1.0 - c.eps3_lower) - 1.0);
    if (drift >= 1.0)
      throw OutOfRegimeError(
          "effective_sizes: additive lower bound needs N gamma (1/(1-eps3)-1) < 1");
    const double factor = (1.0 - c.eps3_upper) * (1.0 + c.eps2_lower) /
                          std::pow(1.0 - drift, 1.0 / a);
    out.n_eff = nd * std::pow(factor, exponent);
  }
  return out;
}

// Envelope terms of the unified risk bound. Absolute constants are not
// specified by the bounds, so these are shape overlays for log-log slope
// comparison, never absolute risk predictions.
struct BoundEnvelope {
  double m_term = 0.0;          // M_eff^(1-a)
  double n_term = 0.0;          // N_eff^(-(a-1)/a)
  double additive_error = 0.0;  // eps3 (upper) or eps3^2 + eps3 (1-eps3_upper)/N (lower)
  double irreducible = 0.0;     // sigma^2
  Family family = Family::Multiplicative;
  BoundSide side = BoundSide::Upper;
};

inline BoundEnvelope bound_envelope(const EffectiveSizes& sizes,
                                    const CompoundCoefficients& c, double sigma, double a,
                                    long n) {
  if (sizes.family != c.family)
    throw std::invalid_argument("bound_envelope: family mismatch");
  BoundEnvelope env;
  env.family = sizes.family;
  env.side = sizes.side;
  env.m_term = std::pow(sizes.m_eff, 1.0 - a);
  env.n_term = std::pow(sizes.n_eff, -(a - 1.0) / a);
  env.irreducible = sigma * sigma;
  if (sizes.side == BoundSide::Upper) {
    env.additive_error = c.eps3_upper;
  } else {
    env.additive_error = c.eps3_lower * c.eps3_lower +
                         c.eps3_lower * (1.0 - c.eps3_upper) / static_cast<double>(n);
  }
  return env;
}

namespace detail {

inline double n_eff_factor_linear(const CompoundCoefficients& c, double a, BoundSide side) {
  const double exponent = a / (a - 1.0);
  if (side == BoundSide::Upper)
    return std::pow((1.0 + c.eps2_upper) / std::pow(1.0 - c.eps3_upper, 1.0 / a), exponent);
  // multiplicative lower (the additive lower is not linear in N)
  return std::pow((1.0 - c.eps3_upper) * (1.0 + c.eps2_lower) /
                      std::pow(1.0 - c.eps3_lower, 1.0 / a),
                  exponent);
}

}  // namespace detail

// Smallest integer N whose N_eff reaches the target. The upper formulas and
// the multiplicative lower formula are linear in N; the additive lower
// relation is implicit and solved by bisection on its increasing branch.
inline long invert_n_eff(double target, const CompoundCoefficients& c, double a,
                         BoundSide side, double gamma = 0.0) {
  if (target <= 0.0) throw std::invalid_argument("invert_n_eff: target must be > 0");
  if (a <= 1.0) throw std::invalid_argument("invert_n_eff: a must be > 1");

  const bool implicit = (side == BoundSide::Lower && c.family == Family::Additive);
  if (!implicit) {
    const double factor = detail::n_eff_factor_linear(c, a, side);
    long n = static_cast<long>(std::ceil(target * factor));
    n = std::max<long>(n, 1);
    // float rounding in the factor can land one off either way
    while (effective_sizes(c, c.m, n, a, side, gamma).n_eff < target) ++n;
    while (n > 1 && effective_sizes(c, c.m, n - 1, a, side, gamma).n_eff >= target) --n;
    return n;
  }

  if (gamma <= 0.0) throw std::invalid_argument("invert_n_eff: implicit side needs gamma > 0");
  const double rate = 1.0 / (1.0 - c.eps3_lower) - 1.0;
  if (rate == 0.0) {  // degenerates to the linear relation
    long n = static_cast<long>(std::ceil(
        target * std::pow((1.0 - c.eps3_upper) * (1.0 + c.eps2_lower), a / (a - 1.0))));
    n = std::max<long>(n, 1);
    while (effective_sizes(c, c.m, n, a, side, gamma).n_eff < target) ++n;
    return n;
  }

  // N_eff(N) = const * N (1 - N gamma rate)^(1/(a-1)): increasing up to
  // N_peak = (a-1)/(a gamma rate), then decreasing to zero at the regime edge.
  const double n_peak = (a - 1.0) / (a * gamma * rate);
  long hi = std::max<long>(1, static_cast<long>(std::floor(n_peak)));
  const double best = effective_sizes(c, c.m, hi, a, side, gamma).n_eff;
  if (best < target)
    throw OutOfRegimeError("invert_n_eff: target N_eff unreachable within the regime");
  long lo = 1;
  while (lo < hi) {
    const long mid = lo + (hi - lo) / 2;
    if (effective_sizes(c, c.m, mid, a, side, gamma).n_eff >= target)
      hi = mid;
    else
      lo = mid + 1;
  }
  return lo;
}

// Membership in the asymptotic regime where the lower-bound scaling laws
// take their clean form.
inline bool in_lower_bound_regime(const CompoundCoefficients& c, int m, long n, double a,
                                  double gamma) {
  const double nd = static_cast<double>(n);
  const double md = static_cast<double>(m);
  if (c.family == Family::Multiplicative) {
    const double ceiling =
        std::pow(nd * gamma, 1.0 / a) *
        std::pow((1.0 - c.eps3_upper) * (1.0 + c.eps2_lower) *
                     std::pow(1.0 - c.eps3_lower, -1.0 / a),
                 1.0 / (1.0 - a));
    const double floor_m = std::pow(nd * gamma / (1.0 - c.eps3_lower), 1.0 / a);
    return md <= ceiling || md >= floor_m;
  }
  const double rate = 1.0 / (1.0 - c.eps3_lower) - 1.0;
  const double slack = 1.0 / (nd * gamma) - rate;
  if (slack < 0.0) return false;
  if (slack >= std::pow(md, -a)) return true;
  const double rhs = (1.0 - c.eps3_upper) * (1.0 + c.eps2_lower) *
                     std::pow(slack, -1.0 / a) / (nd * gamma);
  return std::pow(md, 1.0 - a) >= rhs;
}

// --- spectral diagnostics -------------------------------------------------

// Empirical spectral constants over fresh sketch draws: the band of
// mu_j(S H S^T) j^a, the quantized-versus-sketched eigenvalue structure, and
// the M/2-to-M eigenvalue ratio.
struct SpectralLemmaReport {
  double c1_hat = 0.0;  // min over seeds and j of mu_j j^a
  double c2_hat = 0.0;  // max over seeds and j
  double half_ratio_max = 0.0;  // max over seeds of mu_{M/2} / mu_M
  // multiplicative exact configs: max |lambda_j(Hfq)/mu_j(SHS) - prod(1+eps)|
  double mult_ratio_dev = 0.0;
  double mult_ratio_expected = 0.0;
  // additive exact configs: min over seeds/j of lambda_j(Hfq) - mu_j(SHS)
  double additive_min_gap = 0.0;
  // min over seeds of lambda_M(Hfq) - mu_M(SHS), for floor calibration
  double additive_floor_gap = 0.0;
  int repetitions = 0;
};

inline SpectralLemmaReport check_spectral_lemmas(const ProblemInstance& proto,
                                                 const QuantConfig& qcfg, int repetitions,
                                                 std::uint64_t seed) {
  if (repetitions < 10)
    throw std::invalid_argument("check_spectral_lemmas: need repetitions >= 10");
  const int m = proto.model_dim();
  const double a = proto.spectrum.exponent;

  bool exact_dsf = true;
  for (Site s : {Site::Data, Site::Sketch, Site::Feature})
    if (qcfg.at(s).is_rounding()) exact_dsf = false;
  bool any_mult = false, any_add = false;
  for (Site s : {Site::Data, Site::Sketch, Site::Feature}) {
    if (qcfg.at(s).kind == QuantKind::ExactMultiplicative && qcfg.at(s).eps > 0.0)
      any_mult = true;
    if (qcfg.at(s).kind == QuantKind::ExactAdditive && qcfg.at(s).eps > 0.0) any_add = true;
  }

  SpectralLemmaReport rep;
  rep.repetitions = repetitions;
  rep.c1_hat = std::numeric_limits<double>::infinity();
  rep.additive_min_gap = std::numeric_limits<double>::infinity();
  rep.additive_floor_gap = std::numeric_limits<double>::infinity();
  if (any_mult && exact_dsf) {
    rep.mult_ratio_expected = (1.0 + qcfg.at(Site::Data).eps) *
                              (1.0 + qcfg.at(Site::Sketch).eps) *
                              (1.0 + qcfg.at(Site::Feature).eps);
  }

  for (int r = 0; r < repetitions; ++r) {
    SketchMatrix sk = sample_sketch(m, proto.spectrum,
                                    derive_seed(seed, seed_tag::kSketch, r));
    ProblemInstance inst(proto.spectrum, proto.target, std::move(sk));
    Eigen::MatrixXd shs = sketched_covariance(inst);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(shs);
    Eigen::VectorXd mu = es.eigenvalues().reverse();

    for (int j = 0; j < m; ++j) {
      const double scaled = mu[j] * std::pow(static_cast<double>(j + 1), a);
      rep.c1_hat = std::min(rep.c1_hat, scaled);
      rep.c2_hat = std::max(rep.c2_hat, scaled);
    }
    rep.half_ratio_max = std::max(rep.half_ratio_max, mu[m / 2 - 1] / mu[m - 1]);

    if (!exact_dsf) continue;
    QuantFeatureCovariance hfq =
        quant_feature_covariance(inst, qcfg, CovarianceMode::ClosedForm);
    if (any_mult && !any_add) {
      for (int j = 0; j < m; ++j)
        rep.mult_ratio_dev = std::max(
            rep.mult_ratio_dev,
            std::fabs(hfq.eigenvalues[j] / mu[j] - rep.mult_ratio_expected));
    }
    if (any_add) {
      for (int j = 0; j < m; ++j)
        rep.additive_min_gap = std::min(rep.additive_min_gap, hfq.eigenvalues[j] - mu[j]);
      rep.additive_floor_gap =
          std::min(rep.additive_floor_gap, hfq.eigenvalues[m - 1] - mu[m - 1]);
    }
  }
  return rep;
}

}  // namespace qsgd
