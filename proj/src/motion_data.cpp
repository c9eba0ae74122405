#include "bihand/motion_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include <json.hpp>

namespace bihand {

using nlohmann::json;
namespace fs = std::filesystem;

const char* to_string(HandSide side) { return side == HandSide::kLeft ? "left" : "right"; }

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ValidationError("unknown split label '" + name + "'");
}

Eigen::Vector3d wrap_axis_angle(const Eigen::Vector3d& v) {
  if (!v.allFinite()) throw ValidationError("wrap_axis_angle: non-finite axis-angle");
  constexpr double kPi = std::numbers::pi;
  const double angle = v.norm();
  if (angle <= kPi) return v;
  const Eigen::Vector3d axis = v / angle;
  double wrapped = std::fmod(angle, 2.0 * kPi);
  if (wrapped > kPi) return -axis * (2.0 * kPi - wrapped);
  return axis * wrapped;
}

Matrix canonicalize_joints(const Matrix& frames) {
  if (frames.cols() % 3 != 0) throw ValidationError("canonicalize: width not a multiple of 3");
  Matrix out(frames.rows(), frames.cols());
  for (Eigen::Index r = 0; r < frames.rows(); ++r) {
    for (Eigen::Index j = 0; j < frames.cols(); j += 3) {
      const Eigen::Vector3d v = frames.block(r, j, 1, 3).transpose();
      out.block(r, j, 1, 3) = wrap_axis_angle(v).transpose();
    }
  }
  return out;
}

namespace {

void check_frames(const Matrix& frames, Eigen::Index width, const std::string& field) {
  if (frames.rows() < 1) throw ValidationError(field + ": sequence has no frames");
  if (frames.cols() != width) {
    throw ValidationError(field + ": expected " + std::to_string(width) + " values per frame, got " +
                          std::to_string(frames.cols()));
  }
  if (!frames.allFinite()) throw ValidationError(field + ": non-finite value");
}

void check_fps(int fps, const std::string& field) {
  if (fps <= 0) throw ValidationError(field + ": fps must be positive");
}

}  // namespace

void BodyPoseSequence::validate() const {
  check_frames(frames, kBodyDims, "body");
  check_fps(fps, "body");
}

void HandPoseSequence::validate() const {
  check_frames(frames, kHandDims, "hands");
  check_fps(fps, "hands");
}

void SingleHandPoseSequence::validate() const {
  check_frames(frames, kSingleHandDims, std::string(to_string(side)) + " hand");
  check_fps(fps, "hand");
}

void SequenceRecord::validate() const {
  body.validate();
  hands.validate();
  if (hands.length() != body.length()) {
    throw ValidationError("hands: expected " + std::to_string(body.length()) +
                          " frames to match body, got " + std::to_string(hands.length()));
  }
  if (hands.fps != body.fps) throw ValidationError("hands: fps differs from body fps");
}

std::vector<const SequenceRecord*> DatasetManifest::select(Split split) const {
  std::vector<const SequenceRecord*> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (splits[i] == split) out.push_back(&records[i]);
  }
  return out;
}

std::pair<SingleHandPoseSequence, SingleHandPoseSequence> split_hands(const HandPoseSequence& h) {
  h.validate();
  SingleHandPoseSequence left{h.frames.leftCols(kSingleHandDims), h.fps, HandSide::kLeft};
  SingleHandPoseSequence right{h.frames.rightCols(kSingleHandDims), h.fps, HandSide::kRight};
  return {std::move(left), std::move(right)};
}

HandPoseSequence merge_hands(const SingleHandPoseSequence& left,
                             const SingleHandPoseSequence& right) {
  left.validate();
  right.validate();
  if (left.side != HandSide::kLeft || right.side != HandSide::kRight) {
    throw ValidationError("merge_hands: arguments must be (left, right)");
  }
  if (left.length() != right.length()) {
    throw ValidationError("merge_hands: frame count mismatch " + std::to_string(left.length()) +
                          " vs " + std::to_string(right.length()));
  }
  if (left.fps != right.fps) throw ValidationError("merge_hands: fps mismatch");
  HandPoseSequence out;
  out.fps = left.fps;
  out.frames.resize(left.length(), kHandDims);
  out.frames.leftCols(kSingleHandDims) = left.frames;
  out.frames.rightCols(kSingleHandDims) = right.frames;
  return out;
}

Matrix mirror_single_hand(const Matrix& frames) {
  Matrix out = frames;
  for (Eigen::Index j = 0; j < out.cols(); j += 3) {
    out.col(j + 1) *= -1.0;
    out.col(j + 2) *= -1.0;
  }
  return out;
}

namespace {

// Hand channels are a fixed function of body channels; these mixing
// weights never depend on the dataset seed.
struct HandMixing {
  Matrix primary;    // 90 x 24
  Matrix secondary;  // 90 x 24
};

const HandMixing& hand_mixing() {
  static const HandMixing mixing = [] {
    std::mt19937_64 rng(0x9e3779b97f4a7c15ULL);
    std::normal_distribution<double> normal(0.0, 1.0);
    HandMixing m;
    m.primary.resize(kHandDims, kBodyDims);
    m.secondary.resize(kHandDims, kBodyDims);
    const double s = 1.0 / std::sqrt(static_cast<double>(kBodyDims));
    for (Eigen::Index i = 0; i < m.primary.size(); ++i) m.primary.data()[i] = 2.0 * s * normal(rng);
    for (Eigen::Index i = 0; i < m.secondary.size(); ++i) m.secondary.data()[i] = 3.0 * s * normal(rng);
    return m;
  }();
  return mixing;
}

}  // namespace

DatasetManifest generate_synthetic(std::uint64_t seed, int count, int frames) {
  if (count < 1) throw ValidationError("generate_synthetic: count must be >= 1");
  if (frames < 2) throw ValidationError("generate_synthetic: frames must be >= 2");
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  constexpr int kFps = 30;
  constexpr int kComponents = 3;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amplitude(0.05, 0.25);
  std::uniform_real_distribution<double> frequency(0.2, 1.5);
  std::uniform_real_distribution<double> phase(0.0, kTwoPi);
  const HandMixing& mixing = hand_mixing();

  DatasetManifest manifest;
  manifest.records.reserve(static_cast<std::size_t>(count));
  for (int n = 0; n < count; ++n) {
    SequenceRecord rec;
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%05d", n);
    rec.id = name;
    rec.speaker_id = "speaker_" + std::to_string(n % 4);

    Matrix body = Matrix::Zero(frames, kBodyDims);
    for (int c = 0; c < kBodyDims; ++c) {
      for (int k = 0; k < kComponents; ++k) {
        const double a = amplitude(rng);
        const double f = frequency(rng);
        const double p = phase(rng);
        for (int t = 0; t < frames; ++t) {
          body(t, c) += a * std::sin(kTwoPi * f * t / kFps + p);
        }
      }
    }
    const double record_phase = phase(rng);

    Matrix hands(frames, kHandDims);
    for (int t = 0; t < frames; ++t) {
      const Vector b = body.row(t).transpose();
      const Vector main = (mixing.primary * b).array().tanh() * 0.5;
      const Vector warp = ((mixing.secondary * b).array() + record_phase).sin() * 0.1;
      hands.row(t) = (main + warp).transpose();
    }

    rec.body = BodyPoseSequence{canonicalize_joints(body), kFps};
    rec.hands = HandPoseSequence{canonicalize_joints(hands), kFps};
    manifest.paths.push_back(rec.id + ".json");
    manifest.splits.push_back(Split::kTrain);
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

DatasetManifest split_dataset(const DatasetManifest& manifest, SplitRatios ratios,
                              std::uint64_t seed) {
  if (ratios.train <= 0.0 || ratios.val <= 0.0 || ratios.test <= 0.0) {
    throw ValidationError("split_dataset: ratios must be positive");
  }
  if (std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw ValidationError("split_dataset: ratios must sum to 1");
  }
  const auto n = static_cast<long>(manifest.size());
  const long n_val = std::lround(ratios.val * static_cast<double>(n));
  const long n_test = std::lround(ratios.test * static_cast<double>(n));
  if (n_val + n_test > n) throw ValidationError("split_dataset: too few records for ratios");

  std::vector<std::size_t> order(manifest.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetManifest out = manifest;
  for (long i = 0; i < n; ++i) {
    Split label = Split::kTrain;
    if (i < n_val) {
      label = Split::kVal;
    } else if (i < n_val + n_test) {
      label = Split::kTest;
    }
    out.splits[order[static_cast<std::size_t>(i)]] = label;
  }
  return out;
}

namespace {

json frames_to_json(const Matrix& frames) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < frames.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < frames.cols(); ++c) row.push_back(frames(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix frames_from_json(const json& doc, const std::string& field, Eigen::Index width) {
  if (!doc.contains(field)) throw ValidationError(field + ": missing field");
  const json& rows = doc.at(field);
  if (!rows.is_array() || rows.empty()) throw ValidationError(field + ": expected non-empty array");
  Matrix out(static_cast<Eigen::Index>(rows.size()), width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const json& row = rows[r];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != width) {
      throw ValidationError(field + ": frame " + std::to_string(r) + " must have " +
                            std::to_string(width) + " values");
    }
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (!row[c].is_number()) {
        throw ValidationError(field + ": non-numeric value at frame " + std::to_string(r));
      }
      const double v = row[c].get<double>();
      if (!std::isfinite(v)) {
        throw ValidationError(field + ": non-finite value at frame " + std::to_string(r));
      }
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    }
  }
  return out;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

}  // namespace

namespace {

SequenceRecord parse_record(const json& doc, bool require_hands) {
  for (const char* key : {"id", "speaker_id", "fps"}) {
    if (!doc.contains(key)) throw ValidationError(std::string(key) + ": missing field");
  }
  if (!doc.at("id").is_string()) throw ValidationError("id: expected string");
  if (!doc.at("speaker_id").is_string()) throw ValidationError("speaker_id: expected string");
  if (!doc.at("fps").is_number_integer()) throw ValidationError("fps: expected integer");

  SequenceRecord rec;
  rec.id = doc.at("id").get<std::string>();
  rec.speaker_id = doc.at("speaker_id").get<std::string>();
  const int fps = doc.at("fps").get<int>();
  rec.body = BodyPoseSequence{frames_from_json(doc, "body", kBodyDims), fps};
  if (require_hands || doc.contains("hands")) {
    rec.hands = HandPoseSequence{frames_from_json(doc, "hands", kHandDims), fps};
  } else {
    rec.hands = HandPoseSequence{Matrix::Zero(rec.body.length(), kHandDims), fps};
  }
  rec.validate();
  return rec;
}

}  // namespace

SequenceRecord load_sequence(const fs::path& path) { return parse_record(read_json(path), true); }

SequenceRecord load_body_sequence(const fs::path& path) {
  return parse_record(read_json(path), false);
}

void save_sequence(const SequenceRecord& record, const fs::path& path) {
  record.validate();
  json doc;
  doc["id"] = record.id;
  doc["speaker_id"] = record.speaker_id;
  doc["fps"] = record.body.fps;
  doc["body"] = frames_to_json(record.body.frames);
  doc["hands"] = frames_to_json(record.hands.frames);
  write_text(path, doc.dump());
}

void save_manifest(const DatasetManifest& manifest, const fs::path& dir) {
  fs::create_directories(dir);
  json doc;
  doc["records"] = json::array();
  doc["splits"] = json::object();
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    save_sequence(manifest.records[i], dir / manifest.paths[i]);
    doc["records"].push_back(manifest.paths[i]);
    doc["splits"][manifest.paths[i]] = to_string(manifest.splits[i]);
  }
  write_text(dir / "manifest.json", doc.dump(2));
}

DatasetManifest load_manifest(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "manifest.json" : path;
  const fs::path dir = file.parent_path();
  const json doc = read_json(file);
  if (!doc.contains("records") || !doc.at("records").is_array()) {
    throw ValidationError("records: missing field");
  }
  if (!doc.contains("splits") || !doc.at("splits").is_object()) {
    throw ValidationError("splits: missing field");
  }
  DatasetManifest manifest;
  for (const auto& entry : doc.at("records")) {
    const auto rel = entry.get<std::string>();
    if (!doc.at("splits").contains(rel)) throw ValidationError("splits: no label for " + rel);
    manifest.records.push_back(load_sequence(dir / rel));
    manifest.paths.push_back(rel);
    manifest.splits.push_back(split_from_string(doc.at("splits").at(rel).get<std::string>()));
  }
  return manifest;
}

std::string split_hash(const DatasetManifest& manifest) {
  // FNV-1a over "path=label;" entries.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const std::string& s) {
    for (unsigned char ch : s) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  };
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    feed(manifest.paths[i]);
    feed("=");
    feed(to_string(manifest.splits[i]));
    feed(";");
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace bihand
