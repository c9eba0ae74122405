#include "bihand/nn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bihand::nn {

ad::Var ParameterStore::add(const std::string& name, Matrix init) {
  if (params_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  ad::Var v = ad::leaf(std::move(init));
  params_.emplace(name, v);
  return v;
}

ad::Var ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<NamedParam> ParameterStore::with_prefix(const std::string& prefix) const {
  std::vector<NamedParam> out;
  for (const auto& [name, var] : params_) {
    if (name.starts_with(prefix)) out.push_back({name, var});
  }
  return out;
}

void ParameterStore::zero_grad(const std::string& prefix) {
  for (auto& [name, var] : params_) {
    if (name.starts_with(prefix)) var.zero_grad();
  }
}

void ParameterStore::set_trainable(const std::string& prefix, bool on) {
  for (auto& [name, var] : params_) {
    if (name.starts_with(prefix)) var.set_requires_grad(on);
  }
}

void ParameterStore::round_to_float(const std::string& prefix) {
  for (auto& [name, var] : params_) {
    if (!name.starts_with(prefix)) continue;
    Matrix& m = var.mutable_value();
    m = m.cast<float>().cast<double>();
  }
}

bool ParameterStore::all_finite() const {
  return std::all_of(params_.begin(), params_.end(),
                     [](const auto& kv) { return kv.second.value().allFinite(); });
}

std::size_t ParameterStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, var] : params_) n += static_cast<std::size_t>(var.value().size());
  return n;
}

FreezeGuard::FreezeGuard(ParameterStore& store, std::string prefix)
    : store_(store), prefix_(std::move(prefix)) {
  for (const auto& p : store_.with_prefix(prefix_)) previous_[p.name] = p.var.requires_grad();
  store_.set_trainable(prefix_, false);
}

FreezeGuard::~FreezeGuard() {
  for (auto& p : store_.with_prefix(prefix_)) {
    auto it = previous_.find(p.name);
    if (it != previous_.end()) p.var.set_requires_grad(it->second);
  }
}

NoGradScope::NoGradScope(std::vector<ad::Var> vars) : vars_(std::move(vars)) {
  for (auto& v : vars_) {
    previous_.push_back(v.requires_grad());
    v.set_requires_grad(false);
  }
}

NoGradScope::~NoGradScope() {
  for (std::size_t i = 0; i < vars_.size(); ++i) vars_[i].set_requires_grad(previous_[i]);
}

double grad_norm(const std::vector<NamedParam>& params) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p.var.grad().size() != 0) sq += p.var.grad().squaredNorm();
  }
  return std::sqrt(sq);
}

double clip_grad_norm(const std::vector<NamedParam>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / (norm + 1e-12);
    for (const auto& p : params) {
      if (p.var.grad().size() != 0) p.var.node()->grad *= s;
    }
  }
  return norm;
}

Adam::Adam(std::vector<NamedParam> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
  if (cfg_.lr <= 0.0) throw ConfigError("adam: learning rate must be positive");
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
    v_.push_back(Matrix::Zero(p.var.rows(), p.var.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& var = params_[i].var;
    if (var.grad().size() == 0) continue;
    const Matrix& g = var.grad();
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseAbs2();
    var.mutable_value().array() -=
        cfg_.lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + cfg_.eps);
  }
}

Matrix fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Mlp::Mlp(ParameterStore& store, std::string prefix, MlpSpec spec, Rng& rng)
    : prefix_(std::move(prefix)), spec_(std::move(spec)) {
  if (spec_.widths.size() < 2) throw ConfigError(prefix_ + ": MLP needs at least 2 widths");
  for (int w : spec_.widths) {
    if (w <= 0) throw ConfigError(prefix_ + ": MLP widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < spec_.widths.size(); ++l) {
    const int in = spec_.widths[l];
    const int out = spec_.widths[l + 1];
    const std::string base = prefix_ + ".l" + std::to_string(l);
    weights_.push_back(store.add(base + ".weight", fan_in_uniform(in, out, in, rng)));
    biases_.push_back(store.add(base + ".bias", fan_in_uniform(1, out, in, rng)));
  }
}

std::vector<ad::Var> Mlp::parameters() const {
  std::vector<ad::Var> out = weights_;
  out.insert(out.end(), biases_.begin(), biases_.end());
  return out;
}

ad::Var Mlp::forward(const ad::Var& x) const {
  if (x.cols() != in_width()) {
    throw ConfigError(prefix_ + ": input width " + std::to_string(x.cols()) + ", expected " +
                      std::to_string(in_width()));
  }
  ad::Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    h = ad::add_rowvec(ad::matmul(h, weights_[l]), biases_[l]);
    if (l + 1 < weights_.size()) h = ad::leaky_relu(h, spec_.leaky_slope);
  }
  return h;
}

MultiHeadAttention::MultiHeadAttention(ParameterStore& store, const std::string& prefix,
                                       int channels, int heads, Rng& rng)
    : channels_(channels), heads_(heads) {
  if (heads <= 0 || channels % heads != 0) {
    throw ConfigError(prefix + ": channels " + std::to_string(channels) +
                      " not divisible by heads " + std::to_string(heads));
  }
  auto w = [&](const char* name) {
    return store.add(prefix + "." + name, fan_in_uniform(channels, channels, channels, rng));
  };
  auto b = [&](const char* name) {
    return store.add(prefix + "." + name, Matrix::Zero(1, channels));
  };
  wq_ = w("wq");
  bq_ = b("bq");
  wk_ = w("wk");
  bk_ = b("bk");
  wv_ = w("wv");
  bv_ = b("bv");
  wo_ = w("wo");
  bo_ = b("bo");
}

ad::Var MultiHeadAttention::forward(const ad::Var& query, const ad::Var& context, Eigen::Index tq,
                                    Eigen::Index tk, std::vector<Matrix>* weights) const {
  const ad::Var q = ad::add_rowvec(ad::matmul(query, wq_), bq_);
  const ad::Var k = ad::add_rowvec(ad::matmul(context, wk_), bk_);
  const ad::Var v = ad::add_rowvec(ad::matmul(context, wv_), bv_);
  const ad::Var mixed = ad::attention_core(q, k, v, tq, tk, heads_, weights);
  return ad::add_rowvec(ad::matmul(mixed, wo_), bo_);
}

AttentionBlock::AttentionBlock(ParameterStore& store, const std::string& prefix, int channels,
                               int heads, int ffn_width, Rng& rng)
    : attn_(store, prefix + ".attn", channels, heads, rng),
      ffn_(store, prefix + ".ffn", MlpSpec{{channels, ffn_width, channels}}, rng) {
  ln1_gain_ = store.add(prefix + ".ln1.gain", Matrix::Ones(1, channels));
  ln1_bias_ = store.add(prefix + ".ln1.bias", Matrix::Zero(1, channels));
  ln2_gain_ = store.add(prefix + ".ln2.gain", Matrix::Ones(1, channels));
  ln2_bias_ = store.add(prefix + ".ln2.bias", Matrix::Zero(1, channels));
}

ad::Var AttentionBlock::forward(const ad::Var& x, const ad::Var& context, Eigen::Index tq,
                                Eigen::Index tk, std::vector<Matrix>* weights) const {
  auto norm = [](const ad::Var& h, const ad::Var& gain, const ad::Var& bias) {
    return ad::add_rowvec(ad::mul_rowvec(ad::layer_norm_rows(h), gain), bias);
  };
  const ad::Var y = norm(ad::add(x, attn_.forward(x, context, tq, tk, weights)), ln1_gain_, ln1_bias_);
  return norm(ad::add(y, ffn_.forward(y)), ln2_gain_, ln2_bias_);
}

Matrix sinusoidal_encoding(Eigen::Index frames, Eigen::Index channels) {
  Matrix pe(frames, channels);
  for (Eigen::Index t = 0; t < frames; ++t) {
    for (Eigen::Index c = 0; c < channels; ++c) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (c / 2)) /
                                                static_cast<double>(channels));
      pe(t, c) = (c % 2 == 0) ? std::sin(static_cast<double>(t) * rate)
                              : std::cos(static_cast<double>(t) * rate);
    }
  }
  return pe;
}

FiniteDiffReport finite_diff_check(const std::function<ad::Var()>& loss_fn,
                                   const std::vector<NamedParam>& params, double eps,
                                   int samples_per_param, std::uint64_t seed, double abs_floor) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_check: eps must be positive");
  for (const auto& p : params) p.var.node()->grad.resize(0, 0);

  const ad::Var loss = loss_fn();
  const double base = loss.scalar();
  if (loss_fn().scalar() != base) {
    throw std::runtime_error("finite_diff_check: loss function is not deterministic");
  }
  ad::backward(loss);

  Rng rng(seed);
  FiniteDiffReport report;
  for (const auto& p : params) {
    const Matrix analytic = p.var.grad_or_zero();
    Matrix& value = p.var.node()->value;
    const Eigen::Index n = value.size();
    std::vector<Eigen::Index> coords;
    if (samples_per_param <= 0 || n <= samples_per_param) {
      for (Eigen::Index i = 0; i < n; ++i) coords.push_back(i);
    } else {
      std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
      for (int s = 0; s < samples_per_param; ++s) coords.push_back(pick(rng));
    }
    for (Eigen::Index i : coords) {
      const double orig = value.data()[i];
      value.data()[i] = orig + eps;
      const double up = loss_fn().scalar();
      value.data()[i] = orig - eps;
      const double down = loss_fn().scalar();
      value.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic.data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), abs_floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.coordinates_checked;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
      }
    }
  }
  for (const auto& p : params) p.var.node()->grad.resize(0, 0);
  return report;
}

}  // namespace bihand::nn
