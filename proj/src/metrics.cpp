#include "bihand/metrics.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace bihand {

namespace {

constexpr double kEigenFloor = 1e-10;

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ValidationError(std::string(what) + ": shape mismatch");
  }
}

void require_paired(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ValidationError(std::string(what) + ": sets differ in size");
  if (a == 0) throw ValidationError(std::string(what) + ": empty set");
}

Matrix symmetric_sqrt(const Matrix& m) {
  const Matrix sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(sym);
  const Vector vals = solver.eigenvalues().cwiseMax(kEigenFloor).cwiseSqrt();
  return solver.eigenvectors() * vals.asDiagonal() * solver.eigenvectors().transpose();
}

Matrix covariance(const Matrix& x, const RowVector& mu) {
  const Matrix centered = x.rowwise() - mu;
  const double denom = std::max<double>(1.0, static_cast<double>(x.rows() - 1));
  return centered.transpose() * centered / denom;
}

}  // namespace

SequenceFeatureFn extractor_features(const HandAutoencoder& phi) {
  return [&phi](const HandPoseSequence& h) -> RowVector {
    return perceptual_features(phi, h).colwise().mean();
  };
}

double metric_l2(const Matrix& target, const Matrix& predicted) {
  require_same_shape(target, predicted, "metric_l2");
  return (target - predicted).rowwise().norm().mean();
}

double metric_l2(const std::vector<const HandPoseSequence*>& target,
                 const std::vector<const HandPoseSequence*>& predicted) {
  require_paired(target.size(), predicted.size(), "metric_l2");
  double total = 0.0;
  Eigen::Index frames = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    require_same_shape(target[i]->frames, predicted[i]->frames, "metric_l2");
    total += (target[i]->frames - predicted[i]->frames).rowwise().norm().sum();
    frames += target[i]->frames.rows();
  }
  return total / static_cast<double>(frames);
}

double metric_mpjre(const Matrix& target, const Matrix& predicted) {
  require_same_shape(target, predicted, "metric_mpjre");
  return (target - predicted).cwiseAbs().mean() * 180.0 / std::numbers::pi;
}

double metric_mpjre(const std::vector<const HandPoseSequence*>& target,
                    const std::vector<const HandPoseSequence*>& predicted) {
  require_paired(target.size(), predicted.size(), "metric_mpjre");
  double total = 0.0;
  double count = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    require_same_shape(target[i]->frames, predicted[i]->frames, "metric_mpjre");
    total += (target[i]->frames - predicted[i]->frames).cwiseAbs().sum();
    count += static_cast<double>(target[i]->frames.size());
  }
  return total / count * 180.0 / std::numbers::pi;
}

double frechet_distance(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ValidationError("frechet_distance: feature width mismatch");
  if (a.rows() < 2 || b.rows() < 2) {
    throw ValidationError("frechet_distance: need at least 2 samples per set");
  }
  const RowVector mu_a = a.colwise().mean();
  const RowVector mu_b = b.colwise().mean();
  const Matrix cov_a = covariance(a, mu_a);
  const Matrix cov_b = covariance(b, mu_b);
  const Matrix root_a = symmetric_sqrt(cov_a);
  const Matrix cross = symmetric_sqrt(root_a * cov_b * root_a);
  const double value = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
  return std::max(0.0, value);
}

namespace {
Matrix feature_rows(const std::vector<const HandPoseSequence*>& seqs, const SequenceFeatureFn& fn) {
  Matrix out;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const RowVector f = fn(*seqs[i]);
    if (i == 0) out.resize(static_cast<Eigen::Index>(seqs.size()), f.size());
    out.row(static_cast<Eigen::Index>(i)) = f;
  }
  return out;
}
}  // namespace

double metric_fhd(const std::vector<const HandPoseSequence*>& real,
                  const std::vector<const HandPoseSequence*>& generated,
                  const SequenceFeatureFn& features) {
  if (real.size() < 2 || generated.size() < 2) {
    throw ValidationError("metric_fhd: need at least 2 sequences per set");
  }
  return frechet_distance(feature_rows(real, features), feature_rows(generated, features));
}

DiversityResult metric_diversity(const Matrix& features, const DiversityOptions& opts) {
  const Eigen::Index k = features.rows();
  if (k < 2) throw ValidationError("metric_diversity: need at least 2 samples");
  std::vector<double> distances;
  if (opts.exhaustive) {
    for (Eigen::Index i = 0; i < k; ++i) {
      for (Eigen::Index j = i + 1; j < k; ++j) {
        distances.push_back((features.row(i) - features.row(j)).norm());
      }
    }
  } else {
    if (opts.pairs < 1) throw ValidationError("metric_diversity: pairs must be >= 1");
    Rng rng(opts.seed);
    std::uniform_int_distribution<Eigen::Index> first(0, k - 1);
    std::uniform_int_distribution<Eigen::Index> second(0, k - 2);
    for (int p = 0; p < opts.pairs; ++p) {
      const Eigen::Index i = first(rng);
      Eigen::Index j = second(rng);
      if (j >= i) ++j;
      distances.push_back((features.row(i) - features.row(j)).norm());
    }
  }
  const double n = static_cast<double>(distances.size());
  double mean = 0.0;
  for (double d : distances) mean += d;
  mean /= n;
  double var = 0.0;
  for (double d : distances) var += (d - mean) * (d - mean);
  var = distances.size() > 1 ? var / (n - 1.0) : 0.0;
  return DiversityResult{mean, 1.96 * std::sqrt(var / n)};
}

DiversityResult metric_diversity(const std::vector<const HandPoseSequence*>& samples,
                                 const SequenceFeatureFn& features, const DiversityOptions& opts) {
  if (samples.size() < 2) throw ValidationError("metric_diversity: need at least 2 samples");
  return metric_diversity(feature_rows(samples, features), opts);
}

nlohmann::json to_json(const MetricReport& report) {
  nlohmann::json doc;
  doc["l2"] = report.l2;
  doc["fhd"] = report.fhd;
  doc["mpjre_deg"] = report.mpjre_deg;
  if (report.diversity) {
    doc["diversity"] = {{"mean", report.diversity->mean}, {"ci95", report.diversity->ci95}};
  } else {
    doc["diversity"] = nullptr;
  }
  return doc;
}

}  // namespace bihand
