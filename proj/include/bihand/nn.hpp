#pragma once

#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "bihand/autodiff.hpp"

namespace bihand {

using Rng = std::mt19937_64;

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace nn {

struct NamedParam {
  std::string name;
  ad::Var var;
};

// Owns every learnable tensor of a model, keyed by dotted name. Iteration
// order is lexicographic so that checkpoints and optimizer state are
// reproducible.
class ParameterStore {
 public:
  ad::Var add(const std::string& name, Matrix init);
  ad::Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  const std::map<std::string, ad::Var>& all() const { return params_; }
  std::vector<NamedParam> with_prefix(const std::string& prefix) const;

  void zero_grad(const std::string& prefix = "");
  void set_trainable(const std::string& prefix, bool on);
  // Rounds every value to the nearest float so that checkpoints, which
  // store float32, round-trip exactly.
  void round_to_float(const std::string& prefix = "");
  bool all_finite() const;
  std::size_t parameter_count() const;

 private:
  std::map<std::string, ad::Var> params_;
};

// Disables gradient tracking for a prefix for the guard's lifetime.
class FreezeGuard {
 public:
  FreezeGuard(ParameterStore& store, std::string prefix);
  ~FreezeGuard();
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParameterStore& store_;
  std::string prefix_;
  std::map<std::string, bool> previous_;
};

// Turns off gradient tracking for a fixed set of tensors while alive.
class NoGradScope {
 public:
  explicit NoGradScope(std::vector<ad::Var> vars);
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  std::vector<ad::Var> vars_;
  std::vector<bool> previous_;
};

double grad_norm(const std::vector<NamedParam>& params);
// Scales gradients so that their global L2 norm is at most `max_norm`.
// Returns the norm before clipping.
double clip_grad_norm(const std::vector<NamedParam>& params, double max_norm);

struct AdamConfig {
  double lr = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<NamedParam> params, AdamConfig cfg);
  void step();
  long steps_taken() const { return t_; }

 private:
  std::vector<NamedParam> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  AdamConfig cfg_;
  long t_ = 0;
};

// U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Matrix fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng);

struct MlpSpec {
  std::vector<int> widths;      // input, hidden..., output
  double leaky_slope = 0.2;     // between layers; the output layer is linear
};

class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore& store, std::string prefix, MlpSpec spec, Rng& rng);

  ad::Var forward(const ad::Var& x) const;
  const MlpSpec& spec() const { return spec_; }
  int in_width() const { return spec_.widths.front(); }
  int out_width() const { return spec_.widths.back(); }
  const std::string& prefix() const { return prefix_; }
  std::vector<ad::Var> parameters() const;

 private:
  std::string prefix_;
  MlpSpec spec_;
  std::vector<ad::Var> weights_;
  std::vector<ad::Var> biases_;
};

// softmax(Q_h K_h^T / sqrt(d)) V_h per head, heads concatenated, then a
// learned output projection.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore& store, const std::string& prefix, int channels, int heads,
                     Rng& rng);

  // query: (B*tq) x C, context: (B*tk) x C.
  ad::Var forward(const ad::Var& query, const ad::Var& context, Eigen::Index tq, Eigen::Index tk,
                  std::vector<Matrix>* weights = nullptr) const;
  int heads() const { return heads_; }

 private:
  int channels_ = 0;
  int heads_ = 1;
  ad::Var wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
};

// Post-norm transformer block: x <- LN(x + MHA(x, ctx)); x <- LN(x + FFN(x)).
// Passing the input itself as context gives self-attention.
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(ParameterStore& store, const std::string& prefix, int channels, int heads,
                 int ffn_width, Rng& rng);

  ad::Var forward(const ad::Var& x, const ad::Var& context, Eigen::Index tq, Eigen::Index tk,
                  std::vector<Matrix>* weights = nullptr) const;

 private:
  MultiHeadAttention attn_;
  Mlp ffn_;
  ad::Var ln1_gain_, ln1_bias_, ln2_gain_, ln2_bias_;
};

// Standard sinusoidal table, frames x channels.
Matrix sinusoidal_encoding(Eigen::Index frames, Eigen::Index channels);

struct FiniteDiffReport {
  double max_rel_error = 0.0;
  std::size_t coordinates_checked = 0;
  std::string worst_param;
};

// Compares reverse-mode gradients with central differences on up to
// `samples_per_param` randomly chosen coordinates of each parameter.
// Relative error is |a - n| / max(|a|, |n|, abs_floor).
FiniteDiffReport finite_diff_check(const std::function<ad::Var()>& loss_fn,
                                   const std::vector<NamedParam>& params, double eps,
                                   int samples_per_param = 8, std::uint64_t seed = 0,
                                   double abs_floor = 1e-6);

}  // namespace nn
}  // namespace bihand
