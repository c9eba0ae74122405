#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "bihand/autodiff.hpp"

namespace bihand {

inline constexpr int kBodyJoints = 8;
inline constexpr int kHandJoints = 30;
inline constexpr int kSingleHandJoints = 15;
inline constexpr int kBodyDims = kBodyJoints * 3;              // 24
inline constexpr int kHandDims = kHandJoints * 3;              // 90
inline constexpr int kSingleHandDims = kSingleHandJoints * 3;  // 45

// Raised for malformed input data.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class HandSide { kLeft, kRight };

const char* to_string(HandSide side);

// Canonical axis-angle: same rotation, angle in [0, pi].
Eigen::Vector3d wrap_axis_angle(const Eigen::Vector3d& v);
// Applies wrap_axis_angle to every consecutive 3-column joint of each row.
Matrix canonicalize_joints(const Matrix& frames);

// T x 24 frames of upper-body axis-angle joints, 4 per side from collar to wrist.
struct BodyPoseSequence {
  Matrix frames;
  int fps = 30;

  Eigen::Index length() const { return frames.rows(); }
  void validate() const;
};

// T x 90 frames; columns [0, 45) are the left hand, [45, 90) the right.
struct HandPoseSequence {
  Matrix frames;
  int fps = 30;

  Eigen::Index length() const { return frames.rows(); }
  void validate() const;
};

struct SingleHandPoseSequence {
  Matrix frames;  // T x 45
  int fps = 30;
  HandSide side = HandSide::kLeft;

  Eigen::Index length() const { return frames.rows(); }
  void validate() const;
};

struct SequenceRecord {
  std::string id;
  std::string speaker_id;
  BodyPoseSequence body;
  HandPoseSequence hands;

  void validate() const;
};

enum class Split { kTrain, kVal, kTest };

const char* to_string(Split split);
Split split_from_string(const std::string& name);

struct DatasetManifest {
  std::vector<SequenceRecord> records;
  std::vector<std::string> paths;  // relative file names, parallel to records
  std::vector<Split> splits;       // parallel to records

  std::size_t size() const { return records.size(); }
  // Records with the given label; "all" is accepted by the harness, not here.
  std::vector<const SequenceRecord*> select(Split split) const;
};

std::pair<SingleHandPoseSequence, SingleHandPoseSequence> split_hands(const HandPoseSequence& h);
HandPoseSequence merge_hands(const SingleHandPoseSequence& left,
                             const SingleHandPoseSequence& right);

// Reflects single-hand joints through the sagittal plane: (x, y, z) -> (x, -y, -z).
// Used to express right hands in the left-hand frame and back (it is an involution).
Matrix mirror_single_hand(const Matrix& frames);

DatasetManifest generate_synthetic(std::uint64_t seed, int count, int frames);

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

DatasetManifest split_dataset(const DatasetManifest& manifest, SplitRatios ratios,
                              std::uint64_t seed);

SequenceRecord load_sequence(const std::filesystem::path& path);
void save_sequence(const SequenceRecord& record, const std::filesystem::path& path);
// Like load_sequence, but a missing `hands` field yields all-zero hands.
SequenceRecord load_body_sequence(const std::filesystem::path& path);

// Manifest file plus sequence files alongside it in `dir`.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);
// Accepts either the manifest.json path or its directory.
DatasetManifest load_manifest(const std::filesystem::path& path);

// Stable 64-bit digest of the split assignment, hex encoded.
std::string split_hash(const DatasetManifest& manifest);

}  // namespace bihand
