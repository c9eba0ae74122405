#include "bihand/diversify.hpp"

#include <cmath>
#include <random>

namespace bihand {

SamplingHeader::SamplingHeader(nn::ParameterStore& store, const std::string& prefix, int dim,
                               int hidden, double sigma_w, Rng& rng)
    : net_(store, prefix, nn::MlpSpec{{dim, hidden, 1}}, rng) {
  set_sigma_w(sigma_w);
}

void SamplingHeader::set_sigma_w(double s) {
  if (!(s > 0.0)) throw ConfigError("sampling header: sigma_w must be positive");
  sigma_w_ = s;
}

ad::Var SamplingHeader::score(const ad::Var& w) const { return net_.forward(w); }

ad::Var SamplingHeader::energy(const ad::Var& w) const {
  return ad::add(ad::sum(score(w)), ad::scale(ad::sum_squares(w), 0.5 / (sigma_w_ * sigma_w_)));
}

double SamplingHeader::energy(const RowVector& w) const {
  if (!w.allFinite()) throw ValidationError("sampling_energy: non-finite perturbation");
  return energy(ad::constant(Matrix(w))).scalar();
}

GenerationModel::GenerationModel(nn::ParameterStore& store, const std::string& prefix,
                                 int proto_width, int dim, int hidden, Rng& rng)
    : net_(store, prefix, nn::MlpSpec{{kHandDims + proto_width + dim, hidden, hidden, kHandDims}},
           rng),
      proto_width_(proto_width),
      dim_(dim) {}

ad::Var GenerationModel::forward(const ad::Var& hands, const ad::Var& proto,
                                 const ad::Var& w) const {
  if (hands.cols() != kHandDims || proto.cols() != proto_width_ || w.cols() != dim_) {
    throw ValidationError("generator: input widths must be 90, " + std::to_string(proto_width_) +
                          ", " + std::to_string(dim_));
  }
  const ad::Var parts[] = {hands, proto, w};
  return ad::add(hands, net_.forward(ad::concat_cols(std::span<const ad::Var>(parts))));
}

void LangevinConfig::validate() const {
  if (steps < 1) throw ConfigError("langevin: steps must be >= 1");
  if (!(delta_prior > 0.0) || !(delta_posterior > 0.0)) {
    throw ConfigError("langevin: step sizes must be positive");
  }
  if (!(sigma_eps > 0.0)) throw ConfigError("langevin: sigma_eps must be positive");
}

NonFiniteGradient::NonFiniteGradient(const std::string& chain, int step)
    : std::runtime_error(chain + " Langevin chain: non-finite energy gradient at step " +
                         std::to_string(step)),
      step_(step) {}

namespace {

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

// Runs the chain in z = w / sigma_w coordinates. `energy` maps the w leaf
// expression to a 1x1 energy.
Matrix run_chain(const char* name, const std::function<ad::Var(const ad::Var&)>& energy,
                 double sigma_w, Eigen::Index chains, int dim, int steps, double delta,
                 bool noise, std::uint64_t seed, const Matrix* init) {
  Rng rng(seed);
  Matrix z;
  if (init) {
    if (init->rows() != chains || init->cols() != dim) {
      throw ValidationError(std::string(name) + " Langevin chain: init has wrong shape");
    }
    z = *init / sigma_w;
  } else {
    z = standard_normal(chains, dim, rng);
  }
  const double noise_scale = std::sqrt(2.0 * delta);
  for (int step = 0; step < steps; ++step) {
    const ad::Var zl = ad::leaf(z);
    const ad::Var e = energy(ad::scale(zl, sigma_w));
    ad::backward(e);
    const Matrix g = zl.grad_or_zero();
    if (!g.allFinite()) throw NonFiniteGradient(name, step);
    z -= delta * g;
    if (noise) z += noise_scale * standard_normal(chains, dim, rng);
  }
  return z * sigma_w;
}

}  // namespace

Matrix energy_gradient(const SamplingHeader& header, const Matrix& w) {
  if (w.cols() != header.dim()) throw ValidationError("energy_gradient: width mismatch");
  const ad::Var wl = ad::leaf(w);
  ad::backward(header.energy(wl));
  return wl.grad_or_zero();
}

Matrix langevin_prior(const SamplingHeader& header, const LangevinConfig& cfg,
                      Eigen::Index chains, std::uint64_t seed, const Matrix* init,
                      int steps_override, double delta_override) {
  cfg.validate();
  if (chains < 1) throw ValidationError("langevin_prior: need at least one chain");
  const int steps = steps_override > 0 ? steps_override : cfg.steps;
  const double delta = delta_override > 0.0 ? delta_override : cfg.delta_prior;
  nn::NoGradScope frozen(header.parameters());
  return run_chain(
      "prior", [&header](const ad::Var& w) { return header.energy(w); }, header.sigma_w(), chains,
      header.dim(), steps, delta, cfg.inject_noise, seed, init);
}

Matrix langevin_posterior(const SamplingHeader& header, const PosteriorModel& model,
                          const LangevinConfig& cfg, std::uint64_t seed, const Matrix* init,
                          int steps_override, double delta_override) {
  cfg.validate();
  if (!model.predict) throw ValidationError("langevin_posterior: no observation model");
  const Eigen::Index chains = model.observed.rows();
  if (chains < 1) throw ValidationError("langevin_posterior: no observations");
  const int steps = steps_override > 0 ? steps_override : cfg.steps;
  const double delta = delta_override > 0.0 ? delta_override : cfg.delta_posterior;
  const double inv_two_var = 0.5 / (cfg.sigma_eps * cfg.sigma_eps);

  std::vector<ad::Var> frozen = header.parameters();
  frozen.insert(frozen.end(), model.frozen.begin(), model.frozen.end());
  nn::NoGradScope guard(std::move(frozen));
  const ad::Var observed = ad::constant(model.observed);
  auto energy = [&](const ad::Var& w) {
    const ad::Var predicted = model.predict(w);
    const ad::Var likelihood = ad::scale(ad::sum_squares(ad::sub(observed, predicted)), inv_two_var);
    return ad::add(header.energy(w), likelihood);
  };
  return run_chain("posterior", energy, header.sigma_w(), chains, header.dim(), steps, delta,
                   cfg.inject_noise, seed, init);
}

Matrix retrieve_prototypes(const MemoryBank& prototypes, const HandAutoencoder& encoder,
                           const Matrix& hands) {
  if (prototypes.size() < 1) throw ValidationError("prototype memory is empty");
  const Matrix query = encoder.encode(hands);
  return prototypes.read_soft(ad::constant(query)).aggregate.value();
}

HandPoseSequence generate_diverse(const GenerationModel& generator,
                                  const HandPoseSequence& initial, const MemoryBank& prototypes,
                                  const HandAutoencoder& encoder, const Matrix& w) {
  initial.validate();
  if (w.rows() != initial.length() || w.cols() != generator.dim()) {
    throw ValidationError("generate_diverse: perturbation must be " +
                          std::to_string(initial.length()) + " x " +
                          std::to_string(generator.dim()));
  }
  const Matrix proto = retrieve_prototypes(prototypes, encoder, initial.frames);
  const ad::Var out =
      generator.forward(ad::constant(initial.frames), ad::constant(proto), ad::constant(w));
  return HandPoseSequence{canonicalize_joints(out.value()), initial.fps};
}

StageTwoStep stage_two_grad_step(const GenerationModel& generator, const SamplingHeader& header,
                                 const StageTwoBatch& batch, const Matrix& w_minus,
                                 const Matrix& w_plus, double sigma_eps) {
  const Eigen::Index n = batch.hands.rows();
  if (n == 0 || w_plus.rows() != n) {
    throw ValidationError("stage_two_grad_step: posterior chains missing or misaligned");
  }
  if (w_minus.rows() == 0) throw ValidationError("stage_two_grad_step: prior chains missing");
  if (w_minus.cols() != header.dim() || w_plus.cols() != header.dim()) {
    throw ValidationError("stage_two_grad_step: perturbation width mismatch");
  }
  if (batch.target.rows() != n || batch.proto.rows() != n) {
    throw ValidationError("stage_two_grad_step: batch fields misaligned");
  }

  // Generator: (1/n) sum_i sigma^-2 (h~_i - R(h_i, w+_i)) grad R, applied as
  // a descent direction through a surrogate whose gradient is its negative.
  const ad::Var regenerated = generator.forward(ad::constant(batch.hands),
                                                ad::constant(batch.proto), ad::constant(w_plus));
  const Matrix residual = (batch.target - regenerated.value()) / (sigma_eps * sigma_eps);
  const ad::Var theta_surrogate =
      ad::scale(ad::sum(ad::mul(regenerated, ad::constant(residual))), -1.0 / static_cast<double>(n));
  ad::backward(theta_surrogate);

  // Header: ascent direction is mean grad S(w-) - mean grad S(w+).
  const ad::Var post = ad::scale(ad::sum(header.score(ad::constant(w_plus))), 1.0 / static_cast<double>(n));
  const ad::Var prior = ad::scale(ad::sum(header.score(ad::constant(w_minus))),
                                  1.0 / static_cast<double>(w_minus.rows()));
  ad::backward(ad::sub(post, prior));

  StageTwoStep out;
  out.loss = (batch.target - regenerated.value()).cwiseAbs().mean();
  return out;
}

HandPoseSequence temporal_smooth(const HandPoseSequence& hands, int window) {
  if (window < 1 || window % 2 == 0) {
    throw ValidationError("temporal_smooth: window must be odd and >= 1");
  }
  const Eigen::Index t = hands.frames.rows();
  if (window == 1 || t == 1) return hands;
  const Eigen::Index half = window / 2;
  const Eigen::Index period = 2 * (t - 1);
  auto reflect = [t, period](Eigen::Index i) {
    i %= period;
    if (i < 0) i += period;
    return i < t ? i : period - i;
  };
  HandPoseSequence out{Matrix::Zero(t, hands.frames.cols()), hands.fps};
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index k = -half; k <= half; ++k) out.frames.row(i) += hands.frames.row(reflect(i + k));
    out.frames.row(i) /= static_cast<double>(window);
  }
  return out;
}

double second_difference_norm(const Matrix& frames) {
  if (frames.rows() < 3) return 0.0;
  const Eigen::Index t = frames.rows();
  const Matrix d2 = frames.topRows(t - 2) - 2.0 * frames.middleRows(1, t - 2) + frames.bottomRows(t - 2);
  return d2.norm();
}

}  // namespace bihand
