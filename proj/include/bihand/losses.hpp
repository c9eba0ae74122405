#pragma once

#include "bihand/autodiff.hpp"
#include "bihand/hand_autoencoder.hpp"

namespace bihand {

struct LossReport {
  double rec = 0.0;
  double perc = 0.0;
  double adv_g = 0.0;
  double adv_d = 0.0;
  double dis = 0.0;
  double total = 0.0;
};

// Stage-one objective weights.
inline constexpr double kDisentangleWeight = 0.5;

// Mean absolute element difference.
ad::Var loss_rec(const ad::Var& target, const ad::Var& predicted);

// Mean absolute difference of frozen extractor features.
ad::Var loss_perc(const ad::Var& target, const ad::Var& predicted, const HandAutoencoder& phi);

// E[log D(real)] + E[log(1 - D(fake))], the quantity the discriminator
// maximizes.
ad::Var loss_adv_discriminator(const ad::Var& d_real, const ad::Var& d_fake);
// Non-saturating generator term -E[log D(fake)], minimized by the generator.
ad::Var loss_adv_generator(const ad::Var& d_fake);

struct StageOneLossParts {
  ad::Var rec;
  ad::Var adv;
  ad::Var perc;
  ad::Var dis;
};
// rec + adv + perc + 0.5 * dis
ad::Var loss_total_stage1(const StageOneLossParts& parts);
double loss_total_stage1(double rec, double adv, double perc, double dis);

// ||h - R(h, w+)||_1 as a mean over elements.
ad::Var loss_stage2(const ad::Var& observed, const ad::Var& regenerated);

}  // namespace bihand
