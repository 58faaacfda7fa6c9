#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

#include "qsgd/rng.hpp"

namespace qsgd {

// Unbiased stochastic quantizer families.
//
// Exact schemes realize the error-covariance targets with equality:
//   ExactMultiplicative: Q(x) = x * (1 + sqrt(eps) * g), one scalar g per call,
//     so E[(Q(x)-x)(Q(x)-x)^T | x] = eps * x x^T.
//   ExactAdditive: Q(x) = x + sqrt(eps) * g with i.i.d. standard normal g,
//     so the error covariance is eps * I.
// Rounding schemes do element-wise stochastic rounding to a grid of width s:
//   RoundingFloat: s = 2^(floor(log2|x|) - m), value-aware like FP formats.
//   RoundingFixed: s = 2^(-b), constant like INT formats.
enum class QuantKind { Identity, ExactMultiplicative, ExactAdditive, RoundingFloat, RoundingFixed };

struct QuantScheme {
  QuantKind kind = QuantKind::Identity;
  double eps = 0.0;  // exact schemes
  int bits = 0;      // mantissa bits m / fractional bits b for rounding schemes

  static QuantScheme identity() { return {}; }
  static QuantScheme exact_multiplicative(double eps) {
    if (eps < 0.0) throw std::invalid_argument("quantizer eps must be >= 0");
    return {QuantKind::ExactMultiplicative, eps, 0};
  }
  static QuantScheme exact_additive(double eps) {
    if (eps < 0.0) throw std::invalid_argument("quantizer eps must be >= 0");
    return {QuantKind::ExactAdditive, eps, 0};
  }
  static QuantScheme rounding_float(int mantissa_bits) {
    if (mantissa_bits < 1) throw std::invalid_argument("mantissa bits must be >= 1");
    return {QuantKind::RoundingFloat, 0.0, mantissa_bits};
  }
  static QuantScheme rounding_fixed(int frac_bits) {
    if (frac_bits < 1) throw std::invalid_argument("fractional bits must be >= 1");
    return {QuantKind::RoundingFixed, 0.0, frac_bits};
  }

  // True when the scheme is the identity map (Identity, or an exact scheme
  // with eps == 0). Such schemes consume no randomness.
  bool is_noop() const {
    switch (kind) {
      case QuantKind::Identity: return true;
      case QuantKind::ExactMultiplicative:
      case QuantKind::ExactAdditive: return eps == 0.0;
      default: return false;
    }
  }
  bool is_rounding() const {
    return kind == QuantKind::RoundingFloat || kind == QuantKind::RoundingFixed;
  }
  bool is_exact() const {
    return kind == QuantKind::ExactMultiplicative || kind == QuantKind::ExactAdditive;
  }
};

// Scheme spec strings: "identity", "mult:<eps>", "add:<eps>",
// "floatround:<m>", "fixedround:<b>".
inline QuantScheme parse_scheme(const std::string& text) {
  if (text == "identity") return QuantScheme::identity();
  const auto colon = text.find(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("bad quantizer spec '" + text + "'");
  const std::string head = text.substr(0, colon);
  const std::string arg = text.substr(colon + 1);
  try {
    if (head == "mult") return QuantScheme::exact_multiplicative(std::stod(arg));
    if (head == "add") return QuantScheme::exact_additive(std::stod(arg));
    if (head == "floatround") return QuantScheme::rounding_float(std::stoi(arg));
    if (head == "fixedround") return QuantScheme::rounding_fixed(std::stoi(arg));
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("bad quantizer argument in '" + text + "'");
  }
  throw std::invalid_argument("unknown quantizer kind '" + head + "'");
}

inline std::string scheme_to_string(const QuantScheme& s) {
  std::ostringstream out;
  switch (s.kind) {
    case QuantKind::Identity: return "identity";
    case QuantKind::ExactMultiplicative: out << "mult:" << s.eps; break;
    case QuantKind::ExactAdditive: out << "add:" << s.eps; break;
    case QuantKind::RoundingFloat: out << "floatround:" << s.bits; break;
    case QuantKind::RoundingFixed: out << "fixedround:" << s.bits; break;
  }
  return out.str();
}

// The seven quantization sites of the SGD step, in wire order.
enum class Site : int {
  Data = 0,
  Sketch = 1,
  Feature = 2,
  Label = 3,
  Parameter = 4,
  Activation = 5,
  OutputGradient = 6,
};

inline constexpr int kNumSites = 7;

inline const char* site_name(Site s) {
  switch (s) {
    case Site::Data: return "data";
    case Site::Sketch: return "sketch";
    case Site::Feature: return "feature";
    case Site::Label: return "label";
    case Site::Parameter: return "parameter";
    case Site::Activation: return "activation";
    case Site::OutputGradient: return "output_gradient";
  }
  return "?";
}

// One scheme per site; sites are configured independently.
struct QuantConfig {
  std::array<QuantScheme, kNumSites> sites{};

  const QuantScheme& at(Site s) const { return sites[static_cast<int>(s)]; }
  QuantScheme& at(Site s) { return sites[static_cast<int>(s)]; }

  static QuantConfig identity() { return {}; }
  static QuantConfig uniform(const QuantScheme& s) {
    QuantConfig c;
    c.sites.fill(s);
    return c;
  }

  bool all_noop() const {
    for (const auto& s : sites)
      if (!s.is_noop()) return false;
    return true;
  }
};

// --- rounding grid helpers (Example-style bin width) ---

// Bin width at a value. RoundingFloat uses |x|; 0 has no bin (returns 0) and
// quantizes to itself since zero is representable in every format.
inline double rounding_bin_width(double x, const QuantScheme& s) {
  switch (s.kind) {
    case QuantKind::RoundingFixed:
      return std::ldexp(1.0, -s.bits);
    case QuantKind::RoundingFloat: {
      if (x == 0.0) return 0.0;
      const int e = std::ilogb(std::fabs(x));
      return std::ldexp(1.0, e - s.bits);
    }
    default:
      throw std::invalid_argument("rounding_bin_width: not a rounding scheme");
  }
}

// Closed-form per-element error variance s^2 (ceil(r)-r)(r-floor(r)), r = x/s.
inline double rounding_error_variance(double x, const QuantScheme& s) {
  const double bin = rounding_bin_width(x, s);
  if (bin == 0.0) return 0.0;
  const double r = std::fabs(x) / bin;
  const double frac = r - std::floor(r);
  return bin * bin * frac * (1.0 - frac);
}

// Rounds to the grid of width s: down with probability ceil(r)-r, up with
// probability r-floor(r). Grid points are fixed points and draw no randomness.
inline double stochastic_round(double x, double s, Rng& rng) {
  const double r = x / s;
  const double lo = std::floor(r);
  const double frac = r - lo;
  if (frac == 0.0) return x;
  return (rng.uniform01() < frac) ? s * (lo + 1.0) : s * lo;
}

inline double quantize_scalar(double v, const QuantScheme& s, Rng& rng) {
  switch (s.kind) {
    case QuantKind::Identity:
      return v;
    case QuantKind::ExactMultiplicative:
      if (s.eps == 0.0) return v;
      return v * (1.0 + std::sqrt(s.eps) * rng.normal());
    case QuantKind::ExactAdditive:
      if (s.eps == 0.0) return v;
      return v + std::sqrt(s.eps) * rng.normal();
    case QuantKind::RoundingFixed:
      return stochastic_round(v, rounding_bin_width(v, s), rng);
    case QuantKind::RoundingFloat: {
      if (v == 0.0) return 0.0;
      const double mag = std::fabs(v);
      const double bin = rounding_bin_width(mag, s);
      if (bin == 0.0) return v;  // subnormal underflow of the bin width
      const double q = stochastic_round(mag, bin, rng);
      return v < 0.0 ? -q : q;  // sign symmetry: Q(x) = -Q(-x)
    }
  }
  return v;
}

template <typename Derived>
inline void quantize_inplace(Eigen::MatrixBase<Derived>& x, const QuantScheme& s,
                             Rng& rng) {
  switch (s.kind) {
    case QuantKind::Identity:
      return;
    case QuantKind::ExactMultiplicative: {
      if (s.eps == 0.0) return;
      // One scalar factor for the whole vector/matrix, so the matrix-level
      // error-covariance identity holds exactly.
      x *= 1.0 + std::sqrt(s.eps) * rng.normal();
      return;
    }
    case QuantKind::ExactAdditive: {
      if (s.eps == 0.0) return;
      const double root = std::sqrt(s.eps);
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) += root * rng.normal();
      return;
    }
    case QuantKind::RoundingFixed:
    case QuantKind::RoundingFloat: {
      for (Eigen::Index j = 0; j < x.cols(); ++j)
        for (Eigen::Index i = 0; i < x.rows(); ++i)
          x(i, j) = quantize_scalar(x(i, j), s, rng);
      return;
    }
  }
}

inline Eigen::VectorXd quantize_vector(const Eigen::VectorXd& x, const QuantScheme& s,
                                       Rng& rng) {
  Eigen::VectorXd out = x;
  quantize_inplace(out, s, rng);
  return out;
}

inline Eigen::MatrixXd quantize_matrix(const Eigen::MatrixXd& x, const QuantScheme& s,
                                       Rng& rng) {
  Eigen::MatrixXd out = x;
  quantize_inplace(out, s, rng);
  return out;
}

// Monte-Carlo moment verification against the scheme's second-moment target.
struct MomentReport {
  std::string site_label;
  Eigen::MatrixXd empirical_covariance;  // (1/R) sum of e e^T, e = Q(x) - x
  Eigen::MatrixXd reference;             // exact target, or PSD bound for rounding
  double max_excess_eigenvalue = 0.0;    // max eig(empirical - reference)
  long samples = 0;
  Eigen::VectorXd mean_error;
  Eigen::VectorXd mean_stderr;
  Eigen::VectorXd coordinate_variance;          // diag of empirical_covariance
  Eigen::VectorXd coordinate_variance_formula;  // closed-form per-coordinate variance
  Eigen::VectorXd coordinate_variance_stderr;
  Eigen::VectorXd coordinate_fourth_moment;
  bool bias_flag = false;  // set when |mean error| > 4 stderr in any coordinate
};

// Per-coordinate error variance target: exact schemes have eps-scaled targets;
// rounding schemes follow the closed-form bin variance.
inline Eigen::MatrixXd moment_reference(const Eigen::VectorXd& x, const QuantScheme& s) {
  const auto d = x.size();
  switch (s.kind) {
    case QuantKind::Identity:
      return Eigen::MatrixXd::Zero(d, d);
    case QuantKind::ExactMultiplicative:
      return s.eps * (x * x.transpose());
    case QuantKind::ExactAdditive:
      return s.eps * Eigen::MatrixXd::Identity(d, d);
    case QuantKind::RoundingFloat: {
      // Element-wise variance bound x_i^2 * 2^(-2m).
      const double cap = std::ldexp(1.0, -2 * s.bits);
      return (cap * x.array().square()).matrix().asDiagonal();
    }
    case QuantKind::RoundingFixed: {
      const double cap = std::ldexp(1.0, -2 * s.bits) / 4.0;
      return cap * Eigen::MatrixXd::Identity(d, d);
    }
  }
  return Eigen::MatrixXd::Zero(d, d);
}

inline MomentReport verify_moments(const QuantScheme& scheme, const Eigen::VectorXd& probe,
                                   long samples, Rng& rng) {
  if (samples < 1000) throw std::invalid_argument("verify_moments: need samples >= 1000");
  const auto d = probe.size();
  MomentReport rep;
  rep.samples = samples;
  rep.reference = moment_reference(probe, scheme);

  Eigen::VectorXd err_sum = Eigen::VectorXd::Zero(d);
  Eigen::MatrixXd outer_sum = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd e2_sum = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd e4_sum = Eigen::VectorXd::Zero(d);

  Eigen::VectorXd q(d), e(d);
  for (long r = 0; r < samples; ++r) {
    q = probe;
    quantize_inplace(q, scheme, rng);
    e = q - probe;
    err_sum += e;
    outer_sum.noalias() += e * e.transpose();
    const auto e2 = e.array().square();
    e2_sum += e2.matrix();
    e4_sum += e2.square().matrix();
  }

  const double inv = 1.0 / static_cast<double>(samples);
  rep.mean_error = err_sum * inv;
  rep.empirical_covariance = outer_sum * inv;
  rep.coordinate_variance = e2_sum * inv;
  rep.coordinate_fourth_moment = e4_sum * inv;

  rep.mean_stderr.resize(d);
  rep.coordinate_variance_stderr.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const double second = rep.coordinate_variance[i];
    rep.mean_stderr[i] = std::sqrt(std::max(0.0, second) * inv);
    const double var_of_e2 =
        std::max(0.0, e4_sum[i] * inv - second * second);
    rep.coordinate_variance_stderr[i] = std::sqrt(var_of_e2 * inv);
  }
  rep.coordinate_variance_formula.resize(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    switch (scheme.kind) {
      case QuantKind::Identity:
        rep.coordinate_variance_formula[i] = 0.0;
        break;
      case QuantKind::ExactMultiplicative:
        rep.coordinate_variance_formula[i] = scheme.eps * probe[i] * probe[i];
        break;
      case QuantKind::ExactAdditive:
        rep.coordinate_variance_formula[i] = scheme.eps;
        break;
      default:
        rep.coordinate_variance_formula[i] = rounding_error_variance(probe[i], scheme);
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(rep.empirical_covariance -
                                                    rep.reference);
  rep.max_excess_eigenvalue = es.eigenvalues().maxCoeff();

  for (Eigen::Index i = 0; i < d; ++i) {
    if (std::fabs(rep.mean_error[i]) > 4.0 * rep.mean_stderr[i] &&
        rep.mean_stderr[i] > 0.0) {
      rep.bias_flag = true;  // flagged, not fatal
      break;
    }
  }
  return rep;
}

}  // namespace qsgd
