#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "qsgd/problem.hpp"
#include "qsgd/quantize.hpp"

namespace qsgd {

// Draws quantized features f = Q_f(Q_s(S) Q_d(x)). Shared between the SGD
// engine and the Monte-Carlo feature-covariance estimator so both see the
// same sampling law.
//
// Per-step cost stays O(M*p): sketch quantization never materializes a fresh
// M*p matrix for the exact schemes. Multiplicative sketch noise commutes with
// the matrix-vector product, and additive sketch noise uses the identity
//   (S + sqrt(eps) G) u  =d=  S u + sqrt(eps) ||u|| g,   g ~ N(0, I_M),
// which is exact in distribution because the rows of G u are i.i.d.
// N(0, ||u||^2). Rounding schemes quantize S element-wise into a scratch
// buffer (already O(M*p), same order as the product itself).
class FeatureSampler {
 public:
  // When freeze_sketch is set, the sketch quantization is sampled once here
  // (consuming freeze_rng) and reused for every feature; otherwise fresh
  // sketch randomness is drawn per call, matching the update equation where
  // Q_s sits inside the per-step feature map.
  FeatureSampler(const ProblemInstance& inst, const QuantConfig& qcfg,
                 bool freeze_sketch = false, Rng* freeze_rng = nullptr)
      : inst_(&inst), qcfg_(qcfg) {
    const QuantScheme& sk = qcfg_.at(Site::Sketch);
    if (freeze_sketch && !sk.is_noop()) {
      if (freeze_rng == nullptr)
        throw std::invalid_argument("FeatureSampler: frozen sketch needs an rng");
      frozen_ = true;
      frozen_sketch_ = quantize_matrix(inst.sketch.entries, sk, *freeze_rng);
    }
    xq_.resize(inst.data_dim());
  }

  const QuantConfig& config() const { return qcfg_; }

  // f = Q_f(Q_s(S) Q_d(x)); out is resized to M.
  void compute(const Eigen::VectorXd& x, Rng& rng, Eigen::VectorXd& out) {
    xq_ = x;
    quantize_inplace(xq_, qcfg_.at(Site::Data), rng);

    const QuantScheme& sk = qcfg_.at(Site::Sketch);
    if (frozen_) {
      out.noalias() = frozen_sketch_ * xq_;
    } else {
      switch (sk.kind) {
        case QuantKind::Identity:
          out.noalias() = inst_->sketch.entries * xq_;
          break;
        case QuantKind::ExactMultiplicative:
          out.noalias() = inst_->sketch.entries * xq_;
          if (sk.eps != 0.0) out *= 1.0 + std::sqrt(sk.eps) * rng.normal();
          break;
        case QuantKind::ExactAdditive: {
          out.noalias() = inst_->sketch.entries * xq_;
          if (sk.eps != 0.0) {
            const double scale = std::sqrt(sk.eps) * xq_.norm();
            for (Eigen::Index i = 0; i < out.size(); ++i)
              out[i] += scale * rng.normal();
          }
          break;
        }
        case QuantKind::RoundingFloat:
        case QuantKind::RoundingFixed:
          scratch_sketch_ = inst_->sketch.entries;
          quantize_inplace(scratch_sketch_, sk, rng);
          out.noalias() = scratch_sketch_ * xq_;
          break;
      }
    }

    quantize_inplace(out, qcfg_.at(Site::Feature), rng);
  }

 private:
  const ProblemInstance* inst_;
  QuantConfig qcfg_;
  bool frozen_ = false;
  Eigen::MatrixXd frozen_sketch_;
  Eigen::MatrixXd scratch_sketch_;
  Eigen::VectorXd xq_;
};

}  // namespace qsgd
