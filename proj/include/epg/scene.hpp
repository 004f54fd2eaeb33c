#pragma once

// Trajectory ingestion, windowing into samples, ego-centric normalization and
// the canonical line-delimited sample format.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace epg {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

enum class Category : std::uint8_t { Vehicle = 0, Pedestrian = 1, Bicyclist = 2, Others = 3 };
inline constexpr std::size_t kCategoryCount = 4;

std::string_view category_name(Category c);
/// Accepts the names produced by category_name().
Category parse_category(std::string_view name);
/// ApolloScape type codes: 1 small vehicle, 2 big vehicle, 3 pedestrian,
/// 4 motorcyclist/bicyclist, 5 others.
std::optional<Category> category_from_apollo_code(int code);

struct TrackState {
  std::int64_t frame = 0;
  Vec2 position;
  int lane = -1;  // highway tables only
};

struct AgentTrack {
  std::int64_t agent_id = 0;
  Category category = Category::Vehicle;
  std::vector<TrackState> states;  // strictly increasing frames

  const TrackState* at_frame(std::int64_t frame) const;
};

enum class TableFormat { ApolloLike, NgsimLike };

/// One source file. `frame_step` is the spacing of retained frame ids (2 for
/// downsampled highway tables), `frame_rate` the rate after downsampling.
struct Recording {
  std::string name;
  double frame_rate = 2.0;
  std::int64_t frame_step = 1;
  std::vector<AgentTrack> tracks;  // sorted by agent id
};

inline constexpr double kFeetToMeters = 0.3048;

/// Parses a whitespace- or comma-separated table. Apollo-like rows are
/// (frame_id, agent_id, type_code, x, y, ...); ngsim-like rows are
/// (vehicle_id, frame_id, local_x, local_y, lane_id, ...) in feet at 10 Hz and
/// are converted to meters and downsampled to 5 Hz (even frame ids kept).
/// Blank lines and lines starting with '#' are skipped.
Recording load_trajectory_table(const std::filesystem::path& path, TableFormat format);
Recording parse_trajectory_table(std::istream& in, TableFormat format, std::string name);

enum class Neighborhood { Radius, HighwayBand };

struct DatasetConfig {
  std::size_t obs_points = 6;   // T_obs + 1 observed positions
  std::size_t pred_frames = 6;  // T_pred
  double distance_threshold = 10.0;  // d_D, meters
  double beta_degrees = 20.0;
  Neighborhood neighborhood = Neighborhood::Radius;
  double scope_radius = 30.0;                         // radius rule node scope, meters
  double band_longitudinal = 90.0 * kFeetToMeters;    // highway band, meters
  int band_lanes = 1;
  std::size_t window_stride = 0;  // in retained frames; 0 means obs_points + pred_frames

  static DatasetConfig apollo();
  static DatasetConfig ngsim();
  std::size_t stride() const { return window_stride ? window_stride : obs_points + pred_frames; }
  void validate() const;
};

enum class EgoSelection { GivenId, EveryCompleteAgent };

/// One training/evaluation unit. Agent 0 is the ego; neighbors follow in
/// ascending agent id. Missing frames are zero with a cleared mask bit.
struct Sample {
  std::string recording;
  std::int64_t window_start = 0;
  double frame_rate = 2.0;
  std::size_t obs_points = 0;
  std::size_t pred_frames = 0;
  std::vector<std::int64_t> agent_ids;
  std::vector<Category> categories;
  std::vector<Vec2> observed;  // [N][obs_points]
  std::vector<Vec2> future;    // [N][pred_frames]
  std::vector<Vec2> plan;      // [pred_frames]
  std::vector<std::uint8_t> obs_mask;  // [N][obs_points]
  std::vector<std::uint8_t> fut_mask;  // [N][pred_frames]
  Vec2 origin;  // offset removed by ego_center

  std::size_t agent_count() const { return categories.size(); }
  std::size_t last_obs() const { return obs_points - 1; }

  Vec2& obs(std::size_t i, std::size_t t) { return observed[i * obs_points + t]; }
  Vec2 obs(std::size_t i, std::size_t t) const { return observed[i * obs_points + t]; }
  Vec2& fut(std::size_t i, std::size_t t) { return future[i * pred_frames + t]; }
  Vec2 fut(std::size_t i, std::size_t t) const { return future[i * pred_frames + t]; }
  bool obs_present(std::size_t i, std::size_t t) const { return obs_mask[i * obs_points + t] != 0; }
  bool fut_present(std::size_t i, std::size_t t) const {
    return fut_mask[i * pred_frames + t] != 0;
  }
  bool fully_observed_future(std::size_t i) const;

  /// Non-ego, predictable category, present at the last observed frame and
  /// with a complete future.
  bool is_supervised(std::size_t i) const;

  friend bool operator==(const Sample&, const Sample&) = default;
};

/// Throws DataError describing the first violated invariant.
void validate_sample(const Sample& s);

/// Windows one recording into samples ordered by (window start, ego id).
std::vector<Sample> window_samples(const Recording& rec, const DatasetConfig& config,
                                   EgoSelection selection,
                                   std::optional<std::int64_t> ego_id = std::nullopt);

/// Neighborhood rule evaluated at the last observed frame.
bool admits_neighbor(const DatasetConfig& config, const TrackState& ego, const TrackState& other);

/// Shifts every unmasked coordinate (and the plan) so the ego's last observed
/// position is the origin. Accumulates the shift into `origin`.
Sample ego_center(const Sample& s);
/// Inverse of ego_center.
Sample ego_uncenter(const Sample& s);

inline constexpr std::string_view kCanonicalVersion = "epg-samples/1";

/// One JSON object per line; coordinates written with 17 significant digits.
void write_canonical(const std::vector<Sample>& samples, std::ostream& out);
std::vector<Sample> read_canonical(std::istream& in);
void write_canonical(const std::vector<Sample>& samples, const std::filesystem::path& path);
std::vector<Sample> read_canonical(const std::filesystem::path& path);

struct SyntheticOptions {
  std::uint64_t seed = 7;
  std::size_t scenes = 8;
  std::size_t obs_points = 6;
  std::size_t pred_frames = 6;
  double frame_rate = 2.0;
};

/// Scripted-kinematics scenes, one per recording: an ego vehicle plus a
/// vehicle, a pedestrian, a bicyclist and an "others" context agent moving on
/// constant-curvature paths. Each recording spans exactly one window and its
/// ego has agent id 0.
std::vector<Recording> synthetic_recordings(const SyntheticOptions& opts);

/// synthetic_recordings() windowed around agent 0 and ego-centered.
std::vector<Sample> synthetic_samples(const SyntheticOptions& opts);

/// Writes a recording as an apollo-like table (frame, id, type, x, y).
void write_apollo_table(const Recording& rec, std::ostream& out);

}  // namespace epg
