#pragma once

#include <Eigen/Dense>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "qsgd/feature.hpp"
#include "qsgd/problem.hpp"
#include "qsgd/quantize.hpp"
#include "qsgd/risk.hpp"

namespace qsgd {

struct SGDConfig {
  double step_size = 0.1;
  long steps = 1;
  std::uint64_t seed = 0;
  long record_every = 0;     // 0 disables step records
  bool record_iterates = false;
  double divergence_factor = 1e12;  // guard: ||v|| <= factor * max(1, ||w*||)
  bool freeze_sketch_quantization = false;
};

struct StepRecord {
  long step = 0;
  Eigen::VectorXd feature;      // f^(q)
  double activation = 0.0;      // a_t
  double output_gradient = 0.0; // g^(q)
  Eigen::VectorXd iterate;      // optional v_t snapshot
};

struct TrajectoryResult {
  Eigen::VectorXd averaged_iterate;  // (1/N) sum_{t=0}^{N-1} v_t, includes v_0 = 0
  Eigen::VectorXd final_iterate;
  SGDConfig config;
  double elapsed_seconds = 0.0;
  bool diverged = false;
  long steps_completed = 0;
  std::vector<StepRecord> records;
};

// One-pass quantized SGD with iterate averaging:
//   f^(q) = Q_f(Q_s(S) Q_d(x_t))
//   a_t   = (f^(q))^T Q_p(v_{t-1})
//   g^(q) = Q_o(Q_l(y_t) - Q_a(a_t))
//   v_t   = v_{t-1} + gamma g^(q) f^(q)
// Fresh quantization randomness at every site each step (unless the sketch
// quantization is explicitly frozen). Data draws and quantizer noise use
// separate streams derived from the run seed, so the (x, y) sequence is
// identical across quantization configurations with the same seed.
inline TrajectoryResult run_sgd(const ProblemInstance& inst, const QuantConfig& qcfg,
                                const SGDConfig& cfg) {
  if (cfg.step_size <= 0.0) throw std::invalid_argument("run_sgd: step_size must be > 0");
  if (cfg.steps < 1) throw std::invalid_argument("run_sgd: steps must be >= 1");

  const auto start = std::chrono::steady_clock::now();
  const int m = inst.model_dim();

  Rng data_rng(derive_seed(cfg.seed, seed_tag::kDataStream));
  Rng quant_rng(derive_seed(cfg.seed, seed_tag::kQuantStream));
  FeatureSampler sampler(inst, qcfg, cfg.freeze_sketch_quantization, &quant_rng);

  const QuantScheme& q_label = qcfg.at(Site::Label);
  const QuantScheme& q_param = qcfg.at(Site::Parameter);
  const QuantScheme& q_act = qcfg.at(Site::Activation);
  const QuantScheme& q_out = qcfg.at(Site::OutputGradient);

  const double guard = cfg.divergence_factor * std::max(1.0, inst.target.weights.norm());
  const double guard_sq = guard * guard;

  Eigen::VectorXd v = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd v_sum = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd x(inst.data_dim()), f(m), vq(m);
  double y = 0.0;

  TrajectoryResult result;
  result.config = cfg;

  long t = 0;
  for (t = 1; t <= cfg.steps; ++t) {
    sample_example_into(inst, data_rng, x, y);
    sampler.compute(x, quant_rng, f);

    double activation;
    if (q_param.is_noop()) {
      activation = f.dot(v);
    } else {
      vq = v;
      quantize_inplace(vq, q_param, quant_rng);
      activation = f.dot(vq);
    }
    const double label = quantize_scalar(y, q_label, quant_rng);
    const double act_q = quantize_scalar(activation, q_act, quant_rng);
    const double grad = quantize_scalar(label - act_q, q_out, quant_rng);

    v_sum += v;  // v_{t-1} enters the average before the update
    v += cfg.step_size * grad * f;

    if (cfg.record_every > 0 && (t % cfg.record_every == 0 || t == cfg.steps)) {
      StepRecord rec;
      rec.step = t;
      rec.feature = f;
      rec.activation = activation;
      rec.output_gradient = grad;
      if (cfg.record_iterates) rec.iterate = v;
      result.records.push_back(std::move(rec));
    }

    if (v.squaredNorm() > guard_sq) {
      result.diverged = true;
      break;
    }
  }

  result.steps_completed = std::min(t, cfg.steps);
  result.averaged_iterate = v_sum / static_cast<double>(result.steps_completed);
  result.final_iterate = v;
  result.elapsed_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

// Monte-Carlo check of the first-moment recursion E[eta_t] = (I - gamma H)^t eta_0
// with eta_t = v_t - v^(q)* and eta_0 = -v^(q)*. H is the closed-form quantized
// feature covariance, so this requires exact schemes at the d/s/f sites.
struct MeanDynamicsReport {
  Eigen::VectorXd empirical_mean;   // mean of eta_t over replications
  Eigen::VectorXd predicted_mean;   // (I - gamma H)^t eta_0
  Eigen::VectorXd stderr_per_coord;
  double max_dev_stderr_units = 0.0;
  long replications = 0;
  long step = 0;
};

inline MeanDynamicsReport mean_dynamics_oracle(const ProblemInstance& inst,
                                               const QuantConfig& qcfg, double gamma,
                                               long t, long replications,
                                               std::uint64_t seed) {
  if (replications < 100)
    throw std::invalid_argument("mean_dynamics_oracle: need replications >= 100");
  if (t < 0) throw std::invalid_argument("mean_dynamics_oracle: t must be >= 0");

  const int m = inst.model_dim();
  QuantFeatureCovariance hfq =
      quant_feature_covariance(inst, qcfg, CovarianceMode::ClosedForm);
  Eigen::VectorXd vq_star = optimal_quantized(inst, hfq);

  MeanDynamicsReport rep;
  rep.replications = replications;
  rep.step = t;

  Eigen::VectorXd predicted = -vq_star;
  for (long k = 0; k < t; ++k) predicted -= gamma * (hfq.matrix * predicted).eval();
  rep.predicted_mean = predicted;

  if (t == 0) {
    rep.empirical_mean = -vq_star;
    rep.stderr_per_coord = Eigen::VectorXd::Zero(m);
    rep.max_dev_stderr_units = 0.0;
    return rep;
  }

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd m2 = Eigen::VectorXd::Zero(m);
  for (long r = 0; r < replications; ++r) {
    SGDConfig cfg;
    cfg.step_size = gamma;
    cfg.steps = t;
    cfg.seed = derive_seed(seed, seed_tag::kReplication, static_cast<std::uint64_t>(r));
    TrajectoryResult traj = run_sgd(inst, qcfg, cfg);
    if (traj.diverged) throw std::runtime_error("mean_dynamics_oracle: trajectory diverged");
    // Welford update per coordinate.
    Eigen::VectorXd delta = traj.final_iterate - mean;
    mean += delta / static_cast<double>(r + 1);
    m2.array() += delta.array() * (traj.final_iterate - mean).array();
  }

  rep.empirical_mean = mean - vq_star;
  rep.stderr_per_coord =
      (m2 / static_cast<double>(replications - 1) / static_cast<double>(replications))
          .cwiseSqrt();
  double max_dev = 0.0;
  for (int i = 0; i < m; ++i) {
    const double gap = std::fabs(rep.empirical_mean[i] - rep.predicted_mean[i]);
    if (rep.stderr_per_coord[i] > 0.0)
      max_dev = std::max(max_dev, gap / rep.stderr_per_coord[i]);
    else if (gap > 0.0)
      max_dev = std::numeric_limits<double>::infinity();
  }
  rep.max_dev_stderr_units = max_dev;
  return rep;
}

}  // namespace qsgd
