#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "bihand/hand_autoencoder.hpp"
#include "bihand/memory_bank.hpp"
#include "bihand/motion_data.hpp"
#include "bihand/nn.hpp"

namespace bihand {

// Learnable part S_alpha of the perturbation prior energy
// M(w) = S_alpha(w) + |w|^2 / (2 sigma_w^2). Rows of `w` are independent
// perturbations.
class SamplingHeader {
 public:
  SamplingHeader() = default;
  SamplingHeader(nn::ParameterStore& store, const std::string& prefix, int dim, int hidden,
                 double sigma_w, Rng& rng);

  ad::Var score(const ad::Var& w) const;   // N x 1, S_alpha per row
  ad::Var energy(const ad::Var& w) const;  // 1 x 1, sum of M over rows
  double energy(const RowVector& w) const;

  int dim() const { return net_.in_width(); }
  double sigma_w() const { return sigma_w_; }
  void set_sigma_w(double s);
  const std::string& prefix() const { return net_.prefix(); }
  std::vector<ad::Var> parameters() const { return net_.parameters(); }

 private:
  nn::Mlp net_;
  double sigma_w_ = 1.0;
};

// R_theta: per-frame hands (90) + retrieved prototype (C) + perturbation
// (d_w) -> hands (90), as hands plus a learned MLP offset.
class GenerationModel {
 public:
  GenerationModel() = default;
  GenerationModel(nn::ParameterStore& store, const std::string& prefix, int proto_width, int dim,
                  int hidden, Rng& rng);

  ad::Var forward(const ad::Var& hands, const ad::Var& proto, const ad::Var& w) const;
  const std::string& prefix() const { return net_.prefix(); }
  int proto_width() const { return proto_width_; }
  int dim() const { return dim_; }

 private:
  nn::Mlp net_;
  int proto_width_ = 0;
  int dim_ = 0;
};

struct LangevinConfig {
  int steps = 6;
  double delta_prior = 0.4;
  double delta_posterior = 0.1;
  double sigma_eps = 1.0;
  bool inject_noise = true;

  void validate() const;
};

// Thrown when a chain's energy gradient stops being finite.
class NonFiniteGradient : public std::runtime_error {
 public:
  NonFiniteGradient(const std::string& chain, int step);
  int step() const { return step_; }

 private:
  int step_;
};

// d/dw of the summed prior energy, per row.
Matrix energy_gradient(const SamplingHeader& header, const Matrix& w);

// Short-run prior chain: w <- w - delta grad M(w) + sqrt(2 delta) e, with
// w_0 ~ N(0, sigma_w^2 I) unless `init` is given. The iteration runs in
// sigma_w-scaled coordinates (w = sigma_w z), which for sigma_w = 1 is the
// plain update and otherwise a preconditioned one with the same target.
Matrix langevin_prior(const SamplingHeader& header, const LangevinConfig& cfg,
                      Eigen::Index chains, std::uint64_t seed, const Matrix* init = nullptr,
                      int steps_override = -1, double delta_override = -1.0);

// Observation model for the posterior chain: rows of `predict(w)` must
// align with rows of `observed`. Parameters in `frozen` are excluded from
// gradient tracking while the chain runs.
struct PosteriorModel {
  std::function<ad::Var(const ad::Var&)> predict;
  Matrix observed;
  std::vector<ad::Var> frozen;
};

// Posterior chain: adds the likelihood term |observed - predict(w)|^2 /
// (2 sigma_eps^2) to the prior energy.
Matrix langevin_posterior(const SamplingHeader& header, const PosteriorModel& model,
                          const LangevinConfig& cfg, std::uint64_t seed,
                          const Matrix* init = nullptr, int steps_override = -1,
                          double delta_override = -1.0);

// One frame per row: encode, read the prototype bank, regenerate.
HandPoseSequence generate_diverse(const GenerationModel& generator,
                                  const HandPoseSequence& initial, const MemoryBank& prototypes,
                                  const HandAutoencoder& encoder, const Matrix& w);

// Per-frame prototype features: soft read of the bank by encoded hands.
Matrix retrieve_prototypes(const MemoryBank& prototypes, const HandAutoencoder& encoder,
                           const Matrix& hands);

struct StageTwoBatch {
  Matrix hands;   // conditioning h, N x 90
  Matrix target;  // observed h~, N x 90
  Matrix proto;   // N x C
};

struct StageTwoStep {
  double loss = 0.0;  // L1 between target and R(h, w+)
};

// Accumulates descent gradients into the generator (residual-weighted
// likelihood gradient at w+) and into the header (posterior minus prior
// score gradients). Callers zero gradients before and step optimizers after.
StageTwoStep stage_two_grad_step(const GenerationModel& generator, const SamplingHeader& header,
                                 const StageTwoBatch& batch, const Matrix& w_minus,
                                 const Matrix& w_plus, double sigma_eps);

// Centered moving average per channel with reflected boundaries.
HandPoseSequence temporal_smooth(const HandPoseSequence& hands, int window);

// Sum of squared second differences, square-rooted (all channels).
double second_difference_norm(const Matrix& frames);

}  // namespace bihand
