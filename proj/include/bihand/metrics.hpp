#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <json.hpp>

#include "bihand/hand_autoencoder.hpp"
#include "bihand/motion_data.hpp"

namespace bihand {

// Maps a hand sequence to a single feature vector (e.g. the frame mean of
// extractor features).
using SequenceFeatureFn = std::function<RowVector(const HandPoseSequence&)>;

// Frame mean of the frozen two-hand extractor's per-frame features.
SequenceFeatureFn extractor_features(const HandAutoencoder& phi);

// Mean over frames of the Euclidean norm of the per-frame difference.
double metric_l2(const Matrix& target, const Matrix& predicted);
double metric_l2(const std::vector<const HandPoseSequence*>& target,
                 const std::vector<const HandPoseSequence*>& predicted);

// Mean absolute axis-angle component error, in degrees.
double metric_mpjre(const Matrix& target, const Matrix& predicted);
double metric_mpjre(const std::vector<const HandPoseSequence*>& target,
                    const std::vector<const HandPoseSequence*>& predicted);

// Frechet distance between Gaussians fitted to the rows of `a` and `b`:
// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}). Eigenvalues of the
// symmetric square roots are floored at 1e-10.
double frechet_distance(const Matrix& a, const Matrix& b);
double metric_fhd(const std::vector<const HandPoseSequence*>& real,
                  const std::vector<const HandPoseSequence*>& generated,
                  const SequenceFeatureFn& features);

struct DiversityOptions {
  int pairs = 500;
  std::uint64_t seed = 0;
  bool exhaustive = false;  // every unordered pair once instead of sampling
};

struct DiversityResult {
  double mean = 0.0;
  double ci95 = 0.0;  // half-width, normal approximation
};

// Mean L2 distance between feature rows over random distinct-index pairs.
DiversityResult metric_diversity(const Matrix& features, const DiversityOptions& opts);
DiversityResult metric_diversity(const std::vector<const HandPoseSequence*>& samples,
                                 const SequenceFeatureFn& features, const DiversityOptions& opts);

struct MetricReport {
  double l2 = 0.0;
  double fhd = 0.0;
  double mpjre_deg = 0.0;
  std::optional<DiversityResult> diversity;
};

nlohmann::json to_json(const MetricReport& report);

}  // namespace bihand
