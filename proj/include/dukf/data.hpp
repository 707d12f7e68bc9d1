#pragma once

// Log ingestion, 100 Hz synchronization, Savitzky-Golay ground truth and a
// synthetic single-track simulator producing labelled datasets.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dukf/ukf.hpp"
#include "dukf/vehicle.hpp"

namespace dukf {

struct Channel {
  std::vector<double> t;
  std::vector<double> v;
};

// Per-channel timestamped series. Multi-rate logs leave cells empty where a
// channel has no sample.
struct RawLog {
  std::map<std::string, Channel> channels;
  std::map<std::string, std::vector<std::pair<double, std::string>>> labels;

  const Channel& at(const std::string& name) const;
  bool has(const std::string& name) const { return channels.count(name) > 0; }
};

// Channels every log must carry.
inline const std::vector<std::string> kLogColumns{"ax", "ay", "gyro_z",
                                                  "omega_s", "delta", "iq"};
inline const std::vector<std::string> kPoseColumns{"px", "py", "yaw"};
inline const std::vector<std::string> kTruthColumns{"gt_vx", "gt_vy", "gt_r",
                                                    "gt_omega_s"};

RawLog load_log(const std::string& path);

using StateRow = std::array<double, kStateDim>;

struct Pose {
  double x = 0.0, y = 0.0, yaw = 0.0;
};

struct SyncedDataset {
  double rate_hz = 100.0;
  std::vector<double> t;
  std::vector<Measurement> y;
  std::vector<ControlInput> u;
  std::vector<StateRow> truth;      // empty when unknown
  std::vector<std::string> labels;  // empty when unknown
  std::vector<Pose> pose;           // empty when unknown

  std::size_t size() const { return t.size(); }
  bool has_truth() const { return !truth.empty(); }
  void validate() const;
  SyncedDataset slice(std::size_t begin, std::size_t length) const;
};

// Linear interpolation of every channel onto a uniform grid spanning the
// intersection of the channel time ranges.
SyncedDataset resample_sync(const RawLog& log, double rate_hz = 100.0);

struct BodyVelocity {
  std::vector<double> vx, vy, r;
};

// Local polynomial least-squares derivative (centred window, edges fitted on
// the nearest full window).
std::vector<double> savgol_derivative(const std::vector<double>& x, double dt,
                                      std::size_t window,
                                      std::size_t poly_order = 2);

// Body-frame velocities and yaw rate from world-frame pose samples.
BodyVelocity savgol_velocity(const std::vector<Pose>& pose, double dt,
                             std::size_t window, std::size_t poly_order = 2);

// Fills truth from the pose channels; omega_s truth is the measured wheel
// speed.
void attach_pose_ground_truth(SyncedDataset& ds, std::size_t window,
                              std::size_t poly_order = 2);

// Friction coefficient for a tire label: numeric labels are read directly,
// letters A-D map to the measured tire sets.
double friction_for_label(const std::string& label);

// ---- simulation ------------------------------------------------------------------

enum class Maneuver { idle, sine_steer, launch, brake_turn, drift_arc };

std::string to_string(Maneuver m);
Maneuver parse_maneuver(const std::string& name);

struct SensorNoise {
  double accel = 0.3;
  double gyro = 0.02;
  double wheel = 0.05;
};

struct FrictionKnot {
  double t = 0.0;
  double mu = 0.65;
};

struct SimConfig {
  double duration = 60.0;
  double record_hz = 100.0;
  double integration_hz = 1000.0;
  double initial_speed = 2.0;
  double segment_s = 8.0;
  double max_speed = 20.0;
  double steer_rate = 8.0;  // servo slew limit, rad/s
  VehicleParams vehicle;
  PacejkaParams pacejka;
  // Piecewise-constant friction; the first knot must start at t = 0.
  std::vector<FrictionKnot> friction{{0.0, 0.65}};
  SensorNoise noise;
  std::vector<Maneuver> maneuvers{Maneuver::sine_steer, Maneuver::drift_arc,
                                  Maneuver::launch, Maneuver::brake_turn};
  std::uint64_t seed = 1;

  void validate() const;
};

struct SlipSummary {
  double max_rear_slip_deg = 0.0;
  double frac_rear_slip_over_20 = 0.0;
  double frac_rear_slip_over_40 = 0.0;
};

SyncedDataset simulate_dataset(const SimConfig& cfg,
                               SlipSummary* summary = nullptr);

// Rows of a synced dataset reinterpreted as a single-rate raw log.
RawLog to_raw_log(const SyncedDataset& ds);

struct DatasetSplit {
  SyncedDataset train, val, test;
};

// Contiguous blocks in order train, val, test.
DatasetSplit split_dataset(const SyncedDataset& ds,
                           std::array<double, 3> fractions = {0.7, 0.2, 0.1},
                           std::size_t min_rows = 2);

// Non-overlapping windows of `length` rows starting at row 0.
std::vector<SyncedDataset> fixed_sequences(const SyncedDataset& ds,
                                           std::size_t length);

// Start rows of non-overlapping windows of `length` rows after a random
// offset in [0, length).
std::vector<std::size_t> random_slice_starts(std::size_t rows,
                                             std::size_t length,
                                             std::mt19937_64& rng);

inline constexpr std::size_t kEvalSequenceRows = 1000;

void write_dataset_csv(const SyncedDataset& ds, const std::string& path);
SyncedDataset read_dataset_csv(const std::string& path);

}  // namespace dukf
