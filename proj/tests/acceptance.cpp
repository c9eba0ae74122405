// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>

#include "bihand/diversify.hpp"
#include "bihand/losses.hpp"
#include "bihand/memory_bank.hpp"
#include "bihand/metrics.hpp"
#include "bihand/training.hpp"
#include "test_util.hpp"

using namespace bihand;
using testutil::max_abs_diff;
using testutil::random_matrix;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Collects failed checks with a short reason each.
struct Outcome {
  std::ostringstream detail;
  bool ok = true;

  void check(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << " [failed: " << what << "]";
    }
  }
  template <typename T>
  void note(const std::string& key, const T& value) {
    detail << " " << key << "=" << value;
  }
};

bool run(int id, const std::string& title, double budget_s, const std::function<void(Outcome&)>& body) {
  Outcome out;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(out);
  } catch (const std::exception& e) {
    out.ok = false;
    out.detail << " [exception: " << e.what() << "]";
  }
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  out.note("time_s", elapsed);
  if (budget_s > 0.0) out.check(elapsed < budget_s, "runtime budget " + std::to_string(budget_s) + " s");
  std::cout << (out.ok ? "PASS" : "FAIL") << " criterion " << id << ": " << title << " |"
            << out.detail.str() << std::endl;
  return out.ok;
}

std::vector<json> read_log(const fs::path& p) {
  std::vector<json> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) out.push_back(json::parse(line));
  return out;
}

// First epoch entry whose `key` drops below `threshold`, or null.
json first_below(const std::vector<json>& log, const std::string& key, double threshold) {
  for (const auto& l : log) {
    if (l.value("event", "") == "epoch" && l[key].get<double>() < threshold) return l;
  }
  return nullptr;
}

double fd_error(const std::function<ad::Var()>& loss, const std::vector<nn::NamedParam>& params,
                int samples = 0) {
  return nn::finite_diff_check(loss, params, 1e-6, samples).max_rel_error;
}

// Cosine + softmax / argmax reads computed slot by slot.
void memory_oracles(Outcome& out) {
  double worst = 0.0;
  int hard_mismatch = 0;
  for (int i = 0; i < 100; ++i) {
    nn::ParameterStore store;
    const Eigen::Index slots_n = 1 + (i * 7) % 20;
    const Matrix slots = random_matrix(slots_n, 16, 1000 + static_cast<std::uint64_t>(i));
    const RowVector q = random_matrix(1, 16, 2000 + static_cast<std::uint64_t>(i)).row(0);
    MemoryBank bank(store, "m", slots, 0.8);

    RowVector score(slots_n);
    for (Eigen::Index s = 0; s < slots_n; ++s) score(s) = slots.row(s).dot(q) / (slots.row(s).norm() * q.norm());
    RowVector a = (score.array() - score.maxCoeff()).exp();
    a /= a.sum();
    Eigen::Index best = 0;
    for (Eigen::Index s = 1; s < slots_n; ++s) {
      if (score(s) > score(best)) best = s;
    }
    const auto r = bank.read_soft(ad::constant(Matrix(q)));
    worst = std::max({worst, max_abs_diff(r.affinity.value(), a), max_abs_diff(r.aggregate.value(), a * slots)});
    hard_mismatch += bank.read_hard(q).index != best;
  }
  out.note("max_soft_err", worst);
  out.note("hard_mismatches", hard_mismatch);
  out.check(worst < 1e-6, "soft read within 1e-6");
  out.check(hard_mismatch == 0, "hard read index");

  bool exact = true;
  for (int i = 0; i < 20; ++i) {
    nn::ParameterStore store;
    const Matrix slots = random_matrix(5, 8, 3000 + static_cast<std::uint64_t>(i));
    const RowVector q = random_matrix(1, 8, 4000 + static_cast<std::uint64_t>(i)).row(0);
    MemoryBank bank(store, "m", slots, 0.8);
    const Eigen::Index idx = bank.read_hard(q).index;
    const Eigen::Index written = bank.update_slot_ema(q);
    Matrix expected = slots;
    expected.row(idx) = 0.8 * slots.row(idx) + (1.0 - 0.8) * q;
    exact = exact && written == idx && bank.slots().value() == expected;
  }
  out.check(exact, "EMA write is exact");
}

void gradient_checks(Outcome& out) {
  Rng rng(11);
  nn::ParameterStore store;

  SamplingHeader header(store, "hdr", 4, 8, 1.0, rng);
  const Matrix w0 = random_matrix(6, 4, 1);
  const double e_alpha = fd_error([&] { return header.energy(ad::constant(w0)); }, store.with_prefix("hdr."));
  nn::ParameterStore ws;
  const ad::Var w = ws.add("w", w0);
  const double e_w = fd_error([&] { return header.energy(w); }, ws.with_prefix("w"));

  HandAutoencoder phi(store, "phi", 90, 16, rng);
  phi.set_trained(true);
  nn::ParameterStore ls;
  const ad::Var pred = ls.add("pred", random_matrix(4, 90, 2));
  const ad::Var prob = ls.add("prob", (random_matrix(4, 1, 3).array().abs() * 0.8 + 0.1).matrix());
  const ad::Var target = ad::constant(random_matrix(4, 90, 4));
  const auto p = ls.with_prefix("pred");
  const auto d = ls.with_prefix("prob");
  const double e_losses = std::max(
      {fd_error([&] { return loss_rec(target, pred); }, p), fd_error([&] { return loss_perc(target, pred, phi); }, p),
       fd_error([&] { return loss_stage2(target, pred); }, p),
       fd_error([&] { return loss_adv_generator(prob); }, d),
       fd_error([&] { return loss_adv_discriminator(prob, ad::scale(prob, 0.5)); }, d),
       fd_error([&] { return disentangle_loss(ad::slice_cols(pred, 0, 16), ad::constant(random_matrix(4, 16, 5)), phi); },
                p)});

  nn::Mlp mlp(store, "mlp", nn::MlpSpec{{6, 12, 5}}, rng);
  nn::MultiHeadAttention mha(store, "mha", 8, 2, rng);
  const Matrix probe_mlp = random_matrix(7, 5, 6);
  const Matrix probe_mha = random_matrix(2 * 3, 8, 7);
  const Matrix x_mlp = random_matrix(7, 6, 8);
  const Matrix q_mha = random_matrix(2 * 3, 8, 9);
  const Matrix c_mha = random_matrix(2 * 4, 8, 10);
  const double e_mlp = fd_error(
      [&] { return ad::sum(ad::mul(mlp.forward(ad::constant(x_mlp)), ad::constant(probe_mlp))); },
      store.with_prefix("mlp."));
  const double e_mha = fd_error(
      [&] {
        return ad::sum(ad::mul(mha.forward(ad::constant(q_mha), ad::constant(c_mha), 3, 4), ad::constant(probe_mha)));
      },
      store.with_prefix("mha."));

  ModelConfig model;
  model.channels = 16;
  model.heads = 4;
  model.ffn_width = 32;
  model.frames = 8;
  model.disc_width = 16;
  MemoryConfig memory;
  memory.slots = 8;
  nn::ParameterStore s1;
  Rng rng1(2);
  StageOneModel net(s1, model, memory, rng1);
  net.set_training(false);
  const ad::Var body = ad::constant(random_matrix(2 * 8, 24, 12, 0.5));
  const Matrix probe = random_matrix(16, 90, 13);
  std::vector<nn::NamedParam> params;
  for (const auto& param : s1.with_prefix("")) {
    if (param.name.rfind("stage1.disc.", 0) != 0) params.push_back(param);
  }
  const auto e2e = nn::finite_diff_check(
      [&] { return ad::sum(ad::mul(net.forward(body, 8).hands, ad::constant(probe))); }, params, 1e-6, 2, 3, 1e-4);
  const double e_disc = fd_error(
      [&] { return ad::sum(ad::log(net.discriminator().forward(ad::constant(random_matrix(16, 90, 14)), 8))); },
      s1.with_prefix("stage1.disc."), 4);

  out.note("energy_alpha", e_alpha);
  out.note("energy_w", e_w);
  out.note("losses", e_losses);
  out.note("mlp", e_mlp);
  out.note("mha", e_mha);
  out.note("disc", e_disc);
  out.note("end_to_end", e2e.max_rel_error);
  out.check(std::max({e_alpha, e_w, e_losses, e_mlp, e_mha, e_disc}) < 1e-3, "component rel. err < 1e-3");
  out.check(e2e.max_rel_error < 1e-2, "end-to-end rel. err < 1e-2");
}

void langevin_stationarity(Outcome& out) {
  nn::ParameterStore store;
  Rng rng(1);
  SamplingHeader header(store, "hdr", 1, 4, 1.0, rng);
  testutil::zero_parameters(store, "hdr.");
  const LangevinConfig cfg;
  const Matrix w = langevin_prior(header, cfg, 10000, 21, nullptr, 50000, 0.01);
  const double mean = w.mean();
  const double var = (w.array() - mean).square().sum() / static_cast<double>(w.size() - 1);
  out.note("mean", mean);
  out.note("variance", var);
  out.check(std::abs(mean) < 0.05, "|mean| < 0.05");
  out.check(var >= 0.95 && var <= 1.05, "variance in [0.95, 1.05]");

  // Prior N(0, 1), observation y = a w + N(0, 1): posterior mean a y / (a^2 + 1).
  const double a = 2.0, y = 1.5;
  PosteriorModel model;
  model.observed = Matrix::Constant(10000, 1, y);
  model.predict = [a](const ad::Var& v) { return ad::scale(v, a); };
  const Matrix post = langevin_posterior(header, model, cfg, 22, nullptr, 2000, 0.01);
  const double expected = a * y / (a * a + 1.0);
  out.note("posterior_mean", post.mean());
  out.note("analytic", expected);
  out.check(std::abs(post.mean() - expected) < 0.05 * expected, "posterior mean within 5%");
}

// Closed-form 2-D Frechet distance: tr sqrt(M) = sqrt(tr M + 2 sqrt(det M)) for M = cov_a cov_b.
double frechet_2d(const Matrix& a, const Matrix& b) {
  auto cov = [](const Matrix& x) {
    const Matrix c = x.rowwise() - x.colwise().mean();
    return Matrix(c.transpose() * c / static_cast<double>(x.rows() - 1));
  };
  const Matrix ca = cov(a), cb = cov(b);
  const Matrix m = ca * cb;
  const double root_trace = std::sqrt(m.trace() + 2.0 * std::sqrt(m.determinant()));
  return (a.colwise().mean() - b.colwise().mean()).squaredNorm() + ca.trace() + cb.trace() - 2.0 * root_trace;
}

void metric_oracles(Outcome& out) {
  Rng rng(16);
  std::normal_distribution<double> n01(0.0, 1.0);
  Matrix fa(50000, 2), fb(50000, 2);
  for (Eigen::Index i = 0; i < fa.rows(); ++i) {
    fa(i, 0) = n01(rng);
    fa(i, 1) = n01(rng);
    fb(i, 0) = 1.0 + n01(rng);
    fb(i, 1) = n01(rng);
  }
  const double fhd = frechet_distance(fa, fb);
  out.note("fhd", fhd);
  out.check(std::abs(fhd - 1.0) < 0.02, "FHD within 2% of 1.0");
  const double fhd_err = std::abs(fhd - frechet_2d(fa, fb));
  out.note("fhd_closed_form_err", fhd_err);
  out.check(fhd_err < 1e-9, "FHD matches the closed form on the same draw");

  const Matrix h = random_matrix(12, 90, 32);
  const Matrix g = random_matrix(12, 90, 33);
  double l2 = 0.0, mpjre = 0.0;
  for (Eigen::Index t = 0; t < h.rows(); ++t) {
    l2 += (h.row(t) - g.row(t)).norm();
    for (Eigen::Index c = 0; c < h.cols(); ++c) mpjre += std::abs(h(t, c) - g(t, c));
  }
  l2 /= static_cast<double>(h.rows());
  mpjre *= 180.0 / std::numbers::pi / static_cast<double>(h.size());
  out.note("l2_err", std::abs(metric_l2(h, g) - l2));
  out.note("mpjre_err", std::abs(metric_mpjre(h, g) - mpjre));
  out.check(std::abs(metric_l2(h, g) - l2) < 1e-9, "L2 brute force");
  out.check(std::abs(metric_mpjre(h, g) - mpjre) < 1e-9, "MPJRE brute force");

  const Matrix f = random_matrix(6, 9, 34);
  double div = 0.0;
  int pairs = 0;
  for (int i = 0; i < 6; ++i) {
    for (int j = i + 1; j < 6; ++j) {
      div += (f.row(i) - f.row(j)).norm();
      ++pairs;
    }
  }
  DiversityOptions all;
  all.exhaustive = true;
  const double div_err = std::abs(metric_diversity(f, all).mean - div / pairs);
  out.note("diversity_err", div_err);
  out.check(div_err < 1e-9, "Diversity brute force");

  std::vector<HandPoseSequence> seqs;
  for (int i = 0; i < 6; ++i) seqs.push_back({random_matrix(8, 90, 40 + static_cast<std::uint64_t>(i)), 30});
  std::vector<const HandPoseSequence*> set;
  for (const auto& s : seqs) set.push_back(&s);
  auto mean_feature = [](const HandPoseSequence& s) -> RowVector { return s.frames.colwise().mean(); };
  const double self_fhd = metric_fhd(set, set, mean_feature);
  Matrix same(4, 9);
  same.rowwise() = f.row(0);
  out.note("self_fhd", self_fhd);
  out.check(metric_l2(h, h) == 0.0 && metric_mpjre(h, h) == 0.0, "L2 and MPJRE zero on identical inputs");
  out.check(self_fhd < 1e-6 && frechet_distance(fa, fa) < 1e-6, "FHD zero on identical inputs");
  out.check(metric_diversity(same, DiversityOptions{500, 1}).mean == 0.0, "Diversity zero on identical samples");
}

// Stage one and stage two on 8 synthetic sequences at C=32.
struct OverfitRun {
  fs::path root = testutil::temp_dir("acceptance_overfit");
  DatasetManifest data = split_dataset(generate_synthetic(3, 8, 64), SplitRatios{}, 3);
  TrainConfig cfg;

  OverfitRun() {
    cfg.seed = 1;
    cfg.batch_size = 8;
    cfg.model.channels = 32;
    cfg.model.heads = 4;
    cfg.model.ffn_width = 64;
    cfg.model.frames = 64;
    cfg.model.disc_width = 8;
    cfg.memory.slots = 16;
    cfg.memory.proto_slots = 8;
    cfg.pretrain.steps = 300;
    cfg.data.train_split = "all";
  }
};

void overfit(Outcome& out, OverfitRun& run) {
  TrainConfig s1 = run.cfg;
  s1.epochs = 600;  // one step per epoch
  train_stage_one(s1, run.data, run.root / "s1");
  const auto log1 = read_log(run.root / "s1" / "log.jsonl");
  const json hit1 = first_below(log1, "rec", 0.05);
  out.note("stage1_final_rec", log1.back()["rec"].get<double>());
  if (!hit1.is_null()) out.note("stage1_rec<0.05_at_step", hit1["step"].get<long>());
  out.check(!hit1.is_null() && hit1["step"].get<long>() <= 2000, "stage-one L_rec < 0.05 within 2000 steps");

  TrainConfig s2 = run.cfg;
  s2.epochs = 300;
  train_stage_two(s2, run.data, run.root / "s1", run.root / "s2");
  const auto log2 = read_log(run.root / "s2" / "log.jsonl");
  const json hit2 = first_below(log2, "loss", 0.1);
  out.note("stage2_final_loss", log2.back()["loss"].get<double>());
  if (!hit2.is_null()) out.note("stage2_loss<0.1_at_step", hit2["step"].get<long>());
  out.check(!hit2.is_null() && hit2["step"].get<long>() <= 2000, "stage-two loss < 0.1 within 2000 steps");

  bool finite = true;
  for (const char* dir : {"s1", "s2"}) {
    for (const auto& [name, m] : load_checkpoint(run.root / dir).tensors) finite = finite && m.allFinite();
  }
  out.check(finite, "all parameters finite");
}

void diversity_behavior(Outcome& out, const OverfitRun& run) {
  const auto s1 = load_stage_one(run.root / "s1");
  const auto s2 = load_stage_two(run.root / "s2");
  const HandPoseSequence initial = s1->model->predict(run.data.records[0].body);
  const auto features = extractor_features(s1->phi);
  auto diversity_at = [&](double sigma_w) {
    s2->header.set_sigma_w(sigma_w);
    const auto samples = diverse_samples(*s2, s1->phi, initial, 10, 77);
    std::vector<const HandPoseSequence*> ptrs;
    for (const auto& s : samples) ptrs.push_back(&s);
    return metric_diversity(ptrs, features, DiversityOptions{500, 78}).mean;
  };
  const double base = diversity_at(run.cfg.mcmc.sigma_w);
  out.note("diversity_k10", base);
  out.check(base > 0.0, "Diversity > 0");
  double previous = 0.0;
  bool monotone = true;
  for (double s : {1.0, 0.1, 0.01}) {
    const double d = diversity_at(s);
    out.note("sigma_w=" + std::to_string(s).substr(0, 4), d);
    if (s != 1.0) monotone = monotone && d <= previous + 1e-3;
    previous = d;
  }
  out.check(monotone, "Diversity non-increasing as sigma_w shrinks");
}

void gradient_consistency(Outcome& out) {
  nn::ParameterStore store;
  Rng rng(51);
  SamplingHeader header(store, "hdr", 4, 8, 1.0, rng);
  GenerationModel generator(store, "gen", 6, 4, 16, rng);
  const StageTwoBatch batch{random_matrix(10, 90, 52, 0.3), random_matrix(10, 90, 53, 0.3), random_matrix(10, 6, 54)};
  const Matrix w_minus = random_matrix(10, 4, 55);
  const Matrix w_plus = random_matrix(10, 4, 56);
  const double sigma = 0.7;
  const auto gen = store.with_prefix("gen.");

  store.zero_grad();
  stage_two_grad_step(generator, header, batch, w_minus, w_plus, sigma);
  std::vector<Matrix> hand_coded;
  for (const auto& g : gen) hand_coded.push_back(g.var.grad_or_zero());
  store.zero_grad();
  const ad::Var r = generator.forward(ad::constant(batch.hands), ad::constant(batch.proto), ad::constant(w_plus));
  ad::backward(ad::scale(ad::sum_squares(ad::sub(ad::constant(batch.target), r)), 0.5 / (10 * sigma * sigma)));
  double worst = 0.0;
  for (std::size_t i = 0; i < gen.size(); ++i) worst = std::max(worst, max_abs_diff(hand_coded[i], gen[i].var.grad_or_zero()));
  out.note("theta_grad_err", worst);
  out.check(worst < 1e-6, "theta gradient matches autodiff within 1e-6");

  store.zero_grad();
  stage_two_grad_step(generator, header, batch, w_plus, w_plus, sigma);
  bool zero = true;
  for (const auto& h : store.with_prefix("hdr.")) zero = zero && h.var.grad_or_zero().isZero(0.0);
  out.check(zero, "alpha gradient exactly zero for identical chains");
}

// Two identical tiny pipelines compared byte for byte.
void determinism(Outcome& out) {
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 9;
  cfg.model.channels = 16;
  cfg.model.heads = 2;
  cfg.model.ffn_width = 32;
  cfg.model.frames = 16;
  cfg.model.disc_width = 8;
  cfg.memory.slots = 4;
  cfg.memory.proto_slots = 3;
  cfg.pretrain.steps = 30;
  cfg.stage2.diversity_samples = 3;
  cfg.data.train_split = "all";
  const DatasetManifest data = split_dataset(generate_synthetic(4, 8, 16), SplitRatios{}, 4);
  const fs::path root = testutil::temp_dir("acceptance_determinism");
  save_sequence(data.records[0], root / "body.json");
  std::string reports[2];
  for (int i = 0; i < 2; ++i) {
    const fs::path dir = root / ("run" + std::to_string(i));
    train_stage_one(cfg, data, dir / "s1");
    train_stage_two(cfg, data, dir / "s1", dir / "s2");
    reports[i] = to_json(evaluate(dir / "s1", dir / "s2", data, "all")).dump();
    sample_diverse(dir / "s1", dir / "s2", root / "body.json", 3, 5, dir / "samples", false);
  }
  for (const char* sub : {"s1", "s2"}) {
    out.check(testutil::same_directory_bytes(root / "run0" / sub, root / "run1" / sub, "log.jsonl"),
              std::string("checkpoint ") + sub + " bit-identical");
  }
  out.check(reports[0] == reports[1], "metric reports identical");
  out.check(testutil::same_directory_bytes(root / "run0" / "samples", root / "run1" / "samples"),
            "sample files identical");
}

void smoothing(Outcome& out) {
  const HandPoseSequence constant{Matrix::Constant(30, 90, -0.42), 30};
  out.check(max_abs_diff(temporal_smooth(constant, 5).frames, constant.frames) < 1e-15, "constants unchanged");
  const HandPoseSequence noise{random_matrix(30, 90, 61), 30};
  out.check(temporal_smooth(noise, 1).frames == noise.frames, "identity at window 1");
  Matrix spike = Matrix::Zero(31, 90);
  spike.row(15).setOnes();
  const double before = second_difference_norm(spike);
  const double after = second_difference_norm(temporal_smooth(HandPoseSequence{spike, 30}, 5).frames);
  out.note("impulse_ratio", after / before);
  out.check(after < 0.5 * before, "impulse second difference reduced > 50%");
}

}  // namespace

int main() {
  bool ok = true;
  ok &= run(1, "memory oracle equivalence", 10.0, memory_oracles);
  ok &= run(2, "gradient checks", 120.0, gradient_checks);
  ok &= run(3, "Langevin stationarity and conjugate posterior", 300.0, langevin_stationarity);
  ok &= run(4, "metric oracles", 60.0, metric_oracles);
  OverfitRun overfit_run;
  ok &= run(5, "overfit sanity", 900.0, [&](Outcome& o) { overfit(o, overfit_run); });
  ok &= run(6, "diversity behavior", 120.0, [&](Outcome& o) {
    const bool trained = fs::exists(overfit_run.root / "s2" / "manifest.json");
    o.check(trained, "needs the overfit model");
    if (trained) diversity_behavior(o, overfit_run);
  });
  ok &= run(7, "theta / alpha gradient consistency", 10.0, gradient_consistency);
  ok &= run(8, "determinism", 0.0, determinism);
  ok &= run(9, "smoothing contract", 1.0, smoothing);
  std::cout << (ok ? "ALL PASS" : "SOME CRITERIA FAILED") << std::endl;
  return ok ? 0 : 1;
}
