#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "qsgd/feature.hpp"
#include "qsgd/problem.hpp"
#include "qsgd/quantize.hpp"

namespace qsgd {

// Closed-form population risk and its decomposition. All risks here are exact
// Gaussian expectations evaluated from (S, H, w*, sigma); no test-set Monte
// Carlo, so exponent fits carry no evaluation variance.

// S H S^T with H diagonal; returned exactly symmetric.
inline Eigen::MatrixXd sketched_covariance(const ProblemInstance& inst) {
  const Eigen::MatrixXd& s = inst.sketch.entries;
  Eigen::MatrixXd sl = s * inst.spectrum.eigenvalues.asDiagonal();
  Eigen::MatrixXd out = sl * s.transpose();
  out = 0.5 * (out + out.transpose()).eval();
  return out;
}

// S H w*.
inline Eigen::VectorXd sketched_cross_moment(const ProblemInstance& inst) {
  return inst.sketch.entries *
         inst.spectrum.eigenvalues.cwiseProduct(inst.target.weights);
}

// R_M(v) = 1/2 [ (S^T v - w*)^T H (S^T v - w*) + sigma^2 ].
inline double population_risk(const ProblemInstance& inst, const Eigen::VectorXd& v) {
  if (v.size() != inst.model_dim())
    throw std::invalid_argument("population_risk: v has wrong dimension");
  Eigen::VectorXd residual = inst.sketch.entries.transpose() * v - inst.target.weights;
  const double quad =
      (residual.array().square() * inst.spectrum.eigenvalues.array()).sum();
  const double sigma = inst.target.noise_sigma;
  return 0.5 * (quad + sigma * sigma);
}

namespace detail {

// PD solve with one step of iterative refinement; enforces the relative
// residual contract and reports the condition number on failure.
inline Eigen::VectorXd solve_pd(const Eigen::MatrixXd& mat, const Eigen::VectorXd& rhs,
                                double rel_tol, const char* what) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(mat);
  if (ldlt.info() != Eigen::Success)
    throw std::runtime_error(std::string(what) + ": factorization failed");
  Eigen::VectorXd x = ldlt.solve(rhs);
  x += ldlt.solve(rhs - mat * x);
  const double residual = (mat * x - rhs).norm();
  if (residual > rel_tol * rhs.norm()) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(mat);
    const double cond =
        es.eigenvalues().maxCoeff() / std::max(es.eigenvalues().minCoeff(), 1e-300);
    throw std::runtime_error(std::string(what) + ": solve residual " +
                             std::to_string(residual) + " exceeds tolerance; cond=" +
                             std::to_string(cond));
  }
  return x;
}

}  // namespace detail

// v* = (S H S^T)^{-1} S H w*, the risk minimizer over the sketched space.
inline Eigen::VectorXd optimal_sketched(const ProblemInstance& inst,
                                        const Eigen::MatrixXd& shs) {
  return detail::solve_pd(shs, sketched_cross_moment(inst), 1e-8, "optimal_sketched");
}

inline Eigen::VectorXd optimal_sketched(const ProblemInstance& inst) {
  return optimal_sketched(inst, sketched_covariance(inst));
}

enum class CovarianceMode { ClosedForm, MonteCarlo };

// Covariance of the quantized feature f = Q_f(Q_s(S) Q_d(x)). Only the data,
// sketch and feature sites enter; label and downstream sites do not.
struct QuantFeatureCovariance {
  Eigen::MatrixXd matrix;
  Eigen::VectorXd eigenvalues;  // sorted descending, tiny negatives clamped
  bool closed_form = true;
  long mc_samples = 0;
  int clamped_eigenvalues = 0;
};

namespace detail {

inline void finalize_covariance(QuantFeatureCovariance& cov) {
  cov.matrix = (0.5 * (cov.matrix + cov.matrix.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov.matrix);
  cov.eigenvalues = es.eigenvalues().reverse();
  const double top = std::max(cov.eigenvalues[0], 0.0);
  for (Eigen::Index i = 0; i < cov.eigenvalues.size(); ++i) {
    if (cov.eigenvalues[i] < 0.0 && cov.eigenvalues[i] >= -1e-10 * top) {
      cov.eigenvalues[i] = 0.0;
      ++cov.clamped_eigenvalues;
    }
  }
}

}  // namespace detail

// Closed form composes the per-site second moments:
//   after Q_d the data second moment stays diagonal: c = (1+eps_d) lambda or
//   lambda + eps_d;
//   after Q_s: multiplicative scales S diag(c) S^T, additive adds
//   eps_s tr(c) I;
//   after Q_f: multiplicative scales, additive adds eps_f I.
// All multiplicative at (d,s,f) gives (1+eps_f)(1+eps_s)(1+eps_d) S H S^T;
// all additive gives S H S^T + eps_d S S^T + [eps_s (tr H + eps_d p) + eps_f] I.
inline QuantFeatureCovariance quant_feature_covariance(
    const ProblemInstance& inst, const QuantConfig& qcfg, CovarianceMode mode,
    long mc_samples = 0, std::uint64_t seed = 0) {
  QuantFeatureCovariance cov;
  const int m = inst.model_dim();

  if (mode == CovarianceMode::ClosedForm) {
    for (Site site : {Site::Data, Site::Sketch, Site::Feature}) {
      if (qcfg.at(site).is_rounding())
        throw std::invalid_argument(
            "quant_feature_covariance: no closed form for rounding schemes; use MonteCarlo");
    }
    Eigen::VectorXd c = inst.spectrum.eigenvalues;
    const QuantScheme& qd = qcfg.at(Site::Data);
    if (qd.kind == QuantKind::ExactMultiplicative)
      c *= 1.0 + qd.eps;
    else if (qd.kind == QuantKind::ExactAdditive)
      c.array() += qd.eps;

    double scale = 1.0;
    double shift = 0.0;
    const QuantScheme& qs = qcfg.at(Site::Sketch);
    if (qs.kind == QuantKind::ExactMultiplicative)
      scale *= 1.0 + qs.eps;
    else if (qs.kind == QuantKind::ExactAdditive)
      shift += qs.eps * c.sum();

    const QuantScheme& qf = qcfg.at(Site::Feature);
    if (qf.kind == QuantKind::ExactMultiplicative) {
      scale *= 1.0 + qf.eps;
      shift *= 1.0 + qf.eps;
    } else if (qf.kind == QuantKind::ExactAdditive) {
      shift += qf.eps;
    }

    const Eigen::MatrixXd& s = inst.sketch.entries;
    Eigen::MatrixXd core = (s * c.asDiagonal()) * s.transpose();
    cov.matrix = scale * core + shift * Eigen::MatrixXd::Identity(m, m);
    cov.closed_form = true;
  } else {
    if (mc_samples < 1)
      throw std::invalid_argument("quant_feature_covariance: MonteCarlo needs samples >= 1");
    Rng data_rng(derive_seed(seed, seed_tag::kDataStream));
    Rng quant_rng(derive_seed(seed, seed_tag::kQuantStream));
    FeatureSampler sampler(inst, qcfg);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd x(inst.data_dim()), f(m);
    double y = 0.0;
    for (long r = 0; r < mc_samples; ++r) {
      sample_example_into(inst, data_rng, x, y);
      sampler.compute(x, quant_rng, f);
      acc.noalias() += f * f.transpose();
    }
    cov.matrix = acc / static_cast<double>(mc_samples);
    cov.closed_form = false;
    cov.mc_samples = mc_samples;
  }

  detail::finalize_covariance(cov);
  return cov;
}

// v^(q)* = (H_f^(q))^{-1} S H w*, the optimum over the quantized feature space.
inline Eigen::VectorXd optimal_quantized(const ProblemInstance& inst,
                                         const QuantFeatureCovariance& hfq) {
  if (hfq.eigenvalues[hfq.eigenvalues.size() - 1] <= 0.0)
    throw std::invalid_argument("optimal_quantized: covariance is not positive definite");
  return detail::solve_pd(hfq.matrix, sketched_cross_moment(inst), 1e-8,
                          "optimal_quantized");
}

// total = irreducible + approximation + excess, with
//   irreducible = sigma^2 / 2, approximation = R_M(v*) - sigma^2/2,
//   excess = R_M(v) - R_M(v*).
struct RiskBreakdown {
  double total = 0.0;
  double irreducible = 0.0;
  double approximation = 0.0;
  double excess = 0.0;
};

inline RiskBreakdown decompose_risk(const ProblemInstance& inst, const Eigen::VectorXd& v,
                                    const Eigen::MatrixXd& shs,
                                    const Eigen::VectorXd& v_star) {
  RiskBreakdown out;
  const double sigma = inst.target.noise_sigma;
  out.total = population_risk(inst, v);
  const double at_star = population_risk(inst, v_star);
  out.irreducible = 0.5 * sigma * sigma;
  out.approximation = at_star - out.irreducible;
  out.excess = out.total - at_star;

  // Cross-check against the quadratic form 1/2 (v - v*)^T S H S^T (v - v*).
  Eigen::VectorXd delta = v - v_star;
  const double quad = 0.5 * delta.dot(shs * delta);
  const double scale = std::max({std::fabs(out.excess), std::fabs(quad),
                                 1e-12 * std::max(1.0, out.total)});
  if (std::fabs(out.excess - quad) > 1e-8 * scale)
    throw std::runtime_error("decompose_risk: excess-quadratic identity violated");
  return out;
}

inline RiskBreakdown decompose_risk(const ProblemInstance& inst,
                                    const Eigen::VectorXd& v) {
  Eigen::MatrixXd shs = sketched_covariance(inst);
  return decompose_risk(inst, v, shs, optimal_sketched(inst, shs));
}

// Effective spectral cutoff and dimension of the variance term:
//   k* = max{ i : lambda_i >= 1/(N gamma) },
//   d_eff = k* + gamma^2 N^2 sum_{i>k*} lambda_i^2.
struct EffectiveDimension {
  int k_star = 0;
  double d_eff = 0.0;
};

inline EffectiveDimension compute_deff(const QuantFeatureCovariance& hfq, long steps,
                                       double gamma) {
  if (steps < 1 || gamma <= 0.0)
    throw std::invalid_argument("compute_deff: need N >= 1 and gamma > 0");
  const double threshold = 1.0 / (static_cast<double>(steps) * gamma);
  EffectiveDimension out;
  double tail = 0.0;
  for (Eigen::Index i = 0; i < hfq.eigenvalues.size(); ++i) {
    if (hfq.eigenvalues[i] >= threshold)
      out.k_star = static_cast<int>(i) + 1;
    else
      tail += hfq.eigenvalues[i] * hfq.eigenvalues[i];
  }
  const double ng = gamma * static_cast<double>(steps);
  out.d_eff = out.k_star + ng * ng * tail;
  return out;
}

}  // namespace qsgd
