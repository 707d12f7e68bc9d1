#include "dukf/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "dukf/text.hpp"

namespace dukf {

namespace {

constexpr const char* kLabelColumn = "tire_label";

double parse_cell(const std::string& cell, std::size_t line,
                  const std::string& column) {
  try {
    return parse_double(cell);
  } catch (const std::exception&) {
    throw DataError("line " + std::to_string(line) + ", column '" + column +
                    "': not a number: '" + cell + "'");
  }
}

double interp(const Channel& c, double t, std::size_t& cursor) {
  while (cursor + 1 < c.t.size() && c.t[cursor + 1] <= t) ++cursor;
  if (cursor + 1 >= c.t.size()) return c.v.back();
  const double t0 = c.t[cursor], t1 = c.t[cursor + 1];
  if (t <= t0) return c.v[cursor];
  const double w = (t - t0) / (t1 - t0);
  return c.v[cursor] + w * (c.v[cursor + 1] - c.v[cursor]);
}

std::vector<double> unwrap(const std::vector<double>& a) {
  std::vector<double> out(a.size());
  double offset = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i > 0) {
      const double d = a[i] - a[i - 1];
      if (d > std::numbers::pi) offset -= 2 * std::numbers::pi;
      if (d < -std::numbers::pi) offset += 2 * std::numbers::pi;
    }
    out[i] = a[i] + offset;
  }
  return out;
}

}  // namespace

const Channel& RawLog::at(const std::string& name) const {
  auto it = channels.find(name);
  if (it == channels.end()) throw DataError("log has no channel '" + name + "'");
  return it->second;
}

RawLog load_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open log '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("'" + path + "': no data rows");
  const std::vector<std::string> header = split_csv_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i].empty()) throw DataError("empty column name in header");
    if (!col.emplace(header[i], i).second)
      throw DataError("duplicate column '" + header[i] + "'");
  }
  if (!col.count("t")) throw DataError("missing required column 't'");
  for (const auto& name : kLogColumns)
    if (!col.count(name))
      throw DataError("missing required column '" + name + "'");

  RawLog log;
  std::size_t line_no = 1;
  std::size_t rows = 0;
  double last_t = -std::numeric_limits<double>::infinity();
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " +
                      std::to_string(cells.size()));
    const double t = parse_cell(cells[col["t"]], line_no, "t");
    if (!(t > last_t))
      throw DataError("line " + std::to_string(line_no) +
                      ": timestamp not strictly increasing");
    last_t = t;
    for (const auto& [name, idx] : col) {
      if (name == "t" || cells[idx].empty()) continue;
      if (name == kLabelColumn) {
        log.labels[name].push_back({t, cells[idx]});
        continue;
      }
      const double v = parse_cell(cells[idx], line_no, name);
      if (!std::isfinite(v))
        throw DataError("line " + std::to_string(line_no) + ", column '" +
                        name + "': non-finite value");
      Channel& c = log.channels[name];
      c.t.push_back(t);
      c.v.push_back(v);
    }
    ++rows;
  }
  if (rows == 0) throw DataError("'" + path + "': no data rows");
  for (const auto& name : kLogColumns)
    if (!log.has(name))
      throw DataError("channel '" + name + "' has no samples");
  return log;
}

void SyncedDataset::validate() const {
  const std::size_t n = t.size();
  if (y.size() != n || u.size() != n)
    throw DataError("dataset streams differ in length");
  if (!truth.empty() && truth.size() != n)
    throw DataError("ground truth length differs from measurements");
  if (!labels.empty() && labels.size() != n)
    throw DataError("labels do not cover every row");
  if (!pose.empty() && pose.size() != n)
    throw DataError("pose length differs from measurements");
  if (!(rate_hz > 0.0)) throw DataError("dataset rate must be positive");
  auto finite = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (!finite(y[i]) || !std::isfinite(u[i].delta) || !std::isfinite(u[i].iq) ||
        (!truth.empty() && !finite(truth[i])))
      throw DataError("non-finite value at row " + std::to_string(i));
  }
}

SyncedDataset SyncedDataset::slice(std::size_t begin, std::size_t length) const {
  if (begin + length > size())
    throw DataError("slice [" + std::to_string(begin) + ", " +
                    std::to_string(begin + length) + ") exceeds " +
                    std::to_string(size()) + " rows");
  auto cut = [&](const auto& v) {
    using V = std::decay_t<decltype(v)>;
    if (v.empty()) return V{};
    return V(v.begin() + begin, v.begin() + begin + length);
  };
  SyncedDataset out;
  out.rate_hz = rate_hz;
  out.t = cut(t);
  out.y = cut(y);
  out.u = cut(u);
  out.truth = cut(truth);
  out.labels = cut(labels);
  out.pose = cut(pose);
  return out;
}

SyncedDataset resample_sync(const RawLog& log, double rate_hz) {
  if (!(rate_hz > 0.0)) throw DataError("resample rate must be positive");
  std::vector<std::string> names = kLogColumns;
  const bool has_pose = std::all_of(kPoseColumns.begin(), kPoseColumns.end(),
                                    [&](const auto& c) { return log.has(c); });
  const bool has_truth = std::all_of(kTruthColumns.begin(), kTruthColumns.end(),
                                     [&](const auto& c) { return log.has(c); });
  if (has_pose) names.insert(names.end(), kPoseColumns.begin(), kPoseColumns.end());
  if (has_truth)
    names.insert(names.end(), kTruthColumns.begin(), kTruthColumns.end());

  double start = -std::numeric_limits<double>::infinity();
  double end = std::numeric_limits<double>::infinity();
  for (const auto& n : names) {
    const Channel& c = log.at(n);
    start = std::max(start, c.t.front());
    end = std::min(end, c.t.back());
  }
  if (!(end >= start))
    throw DataError("channels have no common time window");
  const auto count = static_cast<std::size_t>(
      std::floor((end - start) * rate_hz + 1e-9)) + 1;

  std::map<std::string, std::vector<double>> out;
  for (const auto& n : names) {
    const Channel& c = log.at(n);
    std::size_t cursor = 0;
    std::vector<double>& v = out[n];
    v.resize(count);
    for (std::size_t k = 0; k < count; ++k)
      v[k] = interp(c, start + static_cast<double>(k) / rate_hz, cursor);
  }

  SyncedDataset ds;
  ds.rate_hz = rate_hz;
  ds.t.resize(count);
  ds.y.resize(count);
  ds.u.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    ds.t[k] = start + static_cast<double>(k) / rate_hz;
    ds.y[k] = {out["ax"][k], out["ay"][k], out["gyro_z"][k], out["omega_s"][k]};
    ds.u[k] = {out["delta"][k], out["iq"][k]};
  }
  if (has_pose) {
    ds.pose.resize(count);
    for (std::size_t k = 0; k < count; ++k)
      ds.pose[k] = {out["px"][k], out["py"][k], out["yaw"][k]};
  }
  if (has_truth) {
    ds.truth.resize(count);
    for (std::size_t k = 0; k < count; ++k)
      ds.truth[k] = {out["gt_vx"][k], out["gt_vy"][k], out["gt_r"][k],
                     out["gt_omega_s"][k]};
  }
  auto lab = log.labels.find(kLabelColumn);
  if (lab != log.labels.end() && !lab->second.empty()) {
    const auto& series = lab->second;
    ds.labels.resize(count);
    std::size_t cursor = 0;
    for (std::size_t k = 0; k < count; ++k) {
      while (cursor + 1 < series.size() && series[cursor + 1].first <= ds.t[k] + 1e-12)
        ++cursor;
      ds.labels[k] = series[cursor].second;
    }
  }
  return ds;
}

std::vector<double> savgol_derivative(const std::vector<double>& x, double dt,
                                      std::size_t window,
                                      std::size_t poly_order) {
  if (window % 2 == 0 || window < poly_order + 2)
    throw DataError("Savitzky-Golay window must be odd and at least order + 2");
  if (poly_order < 1) throw DataError("Savitzky-Golay order must be at least 1");
  if (x.size() < window)
    throw DataError("series of " + std::to_string(x.size()) +
                    " samples is shorter than the window " +
                    std::to_string(window));
  if (!(dt > 0.0)) throw DataError("sample interval must be positive");

  // coeffs[p] gives the derivative at position p of a window.
  const auto w = static_cast<Eigen::Index>(window);
  const auto m = static_cast<Eigen::Index>(poly_order + 1);
  std::vector<Eigen::RowVectorXd> coeffs(window);
  for (Eigen::Index p = 0; p < w; ++p) {
    Eigen::MatrixXd v(w, m);
    for (Eigen::Index j = 0; j < w; ++j) {
      const double s = static_cast<double>(j - p);
      double power = 1.0;
      for (Eigen::Index k = 0; k < m; ++k) {
        v(j, k) = power;
        power *= s;
      }
    }
    const Eigen::MatrixXd pinv =
        (v.transpose() * v).ldlt().solve(v.transpose());
    coeffs[p] = pinv.row(1) / dt;
  }

  const std::size_t half = window / 2;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    std::size_t start = i < half ? 0 : i - half;
    start = std::min(start, x.size() - window);
    const std::size_t p = i - start;
    double acc = 0.0;
    for (std::size_t j = 0; j < window; ++j) acc += coeffs[p](j) * x[start + j];
    out[i] = acc;
  }
  return out;
}

BodyVelocity savgol_velocity(const std::vector<Pose>& pose, double dt,
                             std::size_t window, std::size_t poly_order) {
  std::vector<double> px(pose.size()), py(pose.size()), yaw(pose.size());
  for (std::size_t i = 0; i < pose.size(); ++i) {
    px[i] = pose[i].x;
    py[i] = pose[i].y;
    yaw[i] = pose[i].yaw;
  }
  const auto dx = savgol_derivative(px, dt, window, poly_order);
  const auto dy = savgol_derivative(py, dt, window, poly_order);
  BodyVelocity out;
  out.r = savgol_derivative(unwrap(yaw), dt, window, poly_order);
  out.vx.resize(pose.size());
  out.vy.resize(pose.size());
  for (std::size_t i = 0; i < pose.size(); ++i) {
    const double c = std::cos(yaw[i]), s = std::sin(yaw[i]);
    out.vx[i] = c * dx[i] + s * dy[i];
    out.vy[i] = -s * dx[i] + c * dy[i];
  }
  return out;
}

void attach_pose_ground_truth(SyncedDataset& ds, std::size_t window,
                              std::size_t poly_order) {
  if (ds.pose.empty()) throw DataError("dataset has no pose channels");
  const BodyVelocity v =
      savgol_velocity(ds.pose, 1.0 / ds.rate_hz, window, poly_order);
  ds.truth.resize(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    ds.truth[i] = {v.vx[i], v.vy[i], v.r[i], ds.y[i][3]};
}

double friction_for_label(const std::string& label) {
  const std::string s = trim(label);
  if (s.empty()) throw DataError("empty tire label");
  if (std::isdigit(static_cast<unsigned char>(s[0])) || s[0] == '.') {
    const double mu = parse_cell(s, 0, "tire_label");
    if (!(mu > 0.0)) throw DataError("tire label friction must be positive");
    return mu;
  }
  static const std::map<std::string, double> table{
      {"A", 0.65}, {"B", 0.58}, {"C", 0.43}, {"D", 0.45}};
  auto it = table.find(s);
  if (it == table.end()) throw DataError("unknown tire label '" + s + "'");
  return it->second;
}

// ---- simulation ------------------------------------------------------------------

std::string to_string(Maneuver m) {
  switch (m) {
    case Maneuver::idle: return "idle";
    case Maneuver::sine_steer: return "sine_steer";
    case Maneuver::launch: return "launch";
    case Maneuver::brake_turn: return "brake_turn";
    case Maneuver::drift_arc: return "drift_arc";
  }
  return "?";
}

Maneuver parse_maneuver(const std::string& name) {
  for (Maneuver m : {Maneuver::idle, Maneuver::sine_steer, Maneuver::launch,
                     Maneuver::brake_turn, Maneuver::drift_arc})
    if (to_string(m) == name) return m;
  throw ConfigError("sim.maneuvers", "unknown maneuver '" + name + "'");
}

void SimConfig::validate() const {
  if (!(duration > 0.0)) throw ConfigError("sim.duration", "must be positive");
  if (!(record_hz > 0.0)) throw ConfigError("sim.record_hz", "must be positive");
  const double ratio = integration_hz / record_hz;
  if (!(ratio >= 1.0) || std::fabs(ratio - std::round(ratio)) > 1e-9)
    throw ConfigError("sim.integration_hz",
                      "must be an integer multiple of the record rate");
  if (!(initial_speed >= 0.0))
    throw ConfigError("sim.initial_speed", "must be non-negative");
  if (!(segment_s > 0.0)) throw ConfigError("sim.segment_s", "must be positive");
  if (!(steer_rate > 0.0)) throw ConfigError("sim.steer_rate", "must be positive");
  if (noise.accel < 0.0 || noise.gyro < 0.0 || noise.wheel < 0.0)
    throw ConfigError("sim.noise", "standard deviations must be non-negative");
  if (friction.empty() || friction.front().t != 0.0)
    throw ConfigError("sim.friction", "schedule must start at t = 0");
  for (std::size_t i = 0; i < friction.size(); ++i) {
    if (!(friction[i].mu > 0.0))
      throw ConfigError("sim.friction", "friction values must be positive");
    if (i > 0 && !(friction[i].t > friction[i - 1].t))
      throw ConfigError("sim.friction", "knot times must increase");
  }
  if (maneuvers.empty())
    throw ConfigError("sim.maneuvers", "at least one maneuver is required");
  vehicle.validate();
  pacejka.validate();
}

namespace {

std::string friction_label(double mu) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", mu);
  return buf;
}

struct SegmentPlan {
  Maneuver kind = Maneuver::idle;
  double speed = 2.5;
  double amp = 0.2;
  double freq = 0.5;
  double side = 1.0;
};

// Scripted driver: a wheel-speed tracking throttle plus per-maneuver
// steering and throttle overrides.
class Driver {
 public:
  Driver(const SimConfig& cfg, std::mt19937_64& rng) : cfg_(cfg), rng_(rng) {}

  ControlInput command(double t, const StateT<double>& x) {
    const auto seg = static_cast<std::size_t>(std::floor(t / cfg_.segment_s));
    if (seg != segment_) start_segment(seg);
    const double tau = t - static_cast<double>(seg) * cfg_.segment_s;
    const SegmentPlan& p = plan_;
    double delta = 0.0;
    double target = p.speed;
    std::optional<double> iq;

    switch (p.kind) {
      case Maneuver::idle:
        return {0.0, 0.0};
      case Maneuver::sine_steer:
        delta = p.amp * std::sin(2 * std::numbers::pi * p.freq * tau);
        break;
      case Maneuver::launch:
        delta = 0.05 * std::sin(2 * std::numbers::pi * 0.4 * tau);
        if (tau < 1.5) {
          target = 1.2;
        } else if (tau < 3.5) {
          iq = 30.0;
        } else if (tau < 5.0) {
          iq = x.omega_s > 1.5 ? -25.0 : 0.0;
          target = 1.5;
        } else {
          target = 2.0;
        }
        break;
      case Maneuver::brake_turn:
        if (tau < 2.5) {
          target = p.speed;
        } else if (tau < 4.5) {
          delta = p.side * p.amp;
          iq = x.omega_s > 1.2 ? -18.0 : 0.0;
        } else {
          target = 2.0;
          delta = p.side * 0.1;
        }
        break;
      case Maneuver::drift_arc: {
        const double beta = std::atan2(x.vy, std::max(x.vx, 0.3));
        if (tau < 2.0) {
          target = p.speed;
        } else if (tau < 2.3) {
          delta = p.side * 0.3;
          target = 1.5 * p.speed;
        } else if (tau < 5.0) {
          // Hold the slide with sideslip and yaw-rate feedback while the
          // spinning wheel keeps the rear axle saturated.
          delta = 0.8 * (beta + p.side * p.amp) - 0.1 * (x.r - p.side * 2.0);
          target = 1.5 * p.speed;
        } else {
          target = 2.0;
        }
        break;
      }
    }
    if (!iq) {
      const VehicleParams& v = cfg_.vehicle;
      const double ff = (v.k_tc + v.k_tv * target +
                         v.wheel_radius * v.c_drag * target * target) /
                        v.k_phi;
      iq = ff + 10.0 * (target - x.omega_s);
    }
    return {std::clamp(delta, -cfg_.vehicle.delta_max, cfg_.vehicle.delta_max),
            std::clamp(*iq, -30.0, 30.0)};
  }

 private:
  void start_segment(std::size_t seg) {
    segment_ = seg;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    plan_.kind = cfg_.maneuvers[seg % cfg_.maneuvers.size()];
    plan_.side = u(rng_) < 0.5 ? -1.0 : 1.0;
    switch (plan_.kind) {
      case Maneuver::sine_steer:
        plan_.speed = 2.0 + 2.0 * u(rng_);
        plan_.amp = 0.1 + 0.25 * u(rng_);
        plan_.freq = 0.3 + 0.9 * u(rng_);
        break;
      case Maneuver::brake_turn:
        plan_.speed = 3.5 + 1.5 * u(rng_);
        plan_.amp = 0.25 + 0.15 * u(rng_);
        break;
      case Maneuver::drift_arc:
        plan_.speed = 3.5 + 1.0 * u(rng_);
        plan_.amp = 0.5 + 0.3 * u(rng_);
        break;
      default:
        plan_.speed = 2.0;
        break;
    }
  }

  const SimConfig& cfg_;
  std::mt19937_64& rng_;
  std::size_t segment_ = static_cast<std::size_t>(-1);
  SegmentPlan plan_;
};

double friction_at(const SimConfig& cfg, double t) {
  double mu = cfg.friction.front().mu;
  for (const auto& k : cfg.friction)
    if (k.t <= t + 1e-12) mu = k.mu;
  return mu;
}

}  // namespace

SyncedDataset simulate_dataset(const SimConfig& cfg, SlipSummary* summary) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::mt19937_64 sensor_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Driver driver(cfg, rng);

  const auto rows = static_cast<std::size_t>(std::floor(cfg.duration * cfg.record_hz + 1e-9));
  const auto substeps =
      static_cast<int>(std::lround(cfg.integration_hz / cfg.record_hz));
  const double h = 1.0 / cfg.integration_hz;

  // [vx, vy, r, omega_s, px, py, yaw]
  std::vector<double> s{cfg.initial_speed, 0.0, 0.0, cfg.initial_speed, 0.0, 0.0, 0.0};
  SyncedDataset ds;
  ds.rate_hz = cfg.record_hz;
  ds.t.reserve(rows);
  std::size_t over20 = 0, over40 = 0;
  double max_slip = 0.0;
  double last_delta = 0.0;

  for (std::size_t k = 0; k < rows; ++k) {
    const double t = static_cast<double>(k) / cfg.record_hz;
    PacejkaParams pp = cfg.pacejka;
    pp.mu = friction_at(cfg, t);
    const StateT<double> x{s[0], s[1], s[2], s[3]};
    ControlInput u = driver.command(t, x);
    const double max_step = cfg.steer_rate / cfg.record_hz;
    u.delta = std::clamp(u.delta, last_delta - max_step, last_delta + max_step);
    last_delta = u.delta;

    const VehicleState vs{s[0], s[1], s[2], s[3], std::nullopt};
    const auto d = pacejka_derivative(vs, u, cfg.vehicle, pp);
    const auto y = measurement_model(std::span(s).first(4), d);
    ds.t.push_back(t);
    ds.u.push_back(u);
    ds.truth.push_back({s[0], s[1], s[2], s[3]});
    ds.pose.push_back({s[4], s[5], s[6]});
    ds.labels.push_back(friction_label(pp.mu));
    ds.y.push_back({y[0] + cfg.noise.accel * gauss(sensor_rng),
                    y[1] + cfg.noise.accel * gauss(sensor_rng),
                    y[2] + cfg.noise.gyro * gauss(sensor_rng),
                    y[3] + cfg.noise.wheel * gauss(sensor_rng)});

    const double slip_deg =
        std::fabs(compute_slip(vs, u, cfg.vehicle).alpha_r) * 180.0 / std::numbers::pi;
    max_slip = std::max(max_slip, slip_deg);
    over20 += slip_deg > 20.0;
    over40 += slip_deg > 40.0;

    const DerivativeFn f = [&](std::span<const double> z) {
      const VehicleState zs{z[0], z[1], z[2], z[3], std::nullopt};
      const auto dz = pacejka_derivative(zs, u, cfg.vehicle, pp);
      const double c = std::cos(z[6]), sn = std::sin(z[6]);
      return std::vector<double>{dz[0], dz[1], dz[2], dz[3],
                                 z[0] * c - z[1] * sn, z[0] * sn + z[1] * c, z[2]};
    };
    for (int i = 0; i < substeps; ++i) s = rk4_step(f, s, h);
    if (!(std::fabs(s[0]) <= cfg.max_speed) || !std::isfinite(s[1]) ||
        !std::isfinite(s[2]) || !std::isfinite(s[3]))
      throw DataError("simulated state blew up at t = " +
                      std::to_string(t + 1.0 / cfg.record_hz) + " s (row " +
                      std::to_string(k + 1) + ")");
  }
  if (summary) {
    summary->max_rear_slip_deg = max_slip;
    summary->frac_rear_slip_over_20 = rows ? double(over20) / double(rows) : 0.0;
    summary->frac_rear_slip_over_40 = rows ? double(over40) / double(rows) : 0.0;
  }
  return ds;
}

RawLog to_raw_log(const SyncedDataset& ds) {
  ds.validate();
  RawLog log;
  auto put = [&](const std::string& name, auto get) {
    Channel& c = log.channels[name];
    c.t = ds.t;
    c.v.resize(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) c.v[i] = get(i);
  };
  put("ax", [&](std::size_t i) { return ds.y[i][0]; });
  put("ay", [&](std::size_t i) { return ds.y[i][1]; });
  put("gyro_z", [&](std::size_t i) { return ds.y[i][2]; });
  put("omega_s", [&](std::size_t i) { return ds.y[i][3]; });
  put("delta", [&](std::size_t i) { return ds.u[i].delta; });
  put("iq", [&](std::size_t i) { return ds.u[i].iq; });
  if (!ds.pose.empty()) {
    put("px", [&](std::size_t i) { return ds.pose[i].x; });
    put("py", [&](std::size_t i) { return ds.pose[i].y; });
    put("yaw", [&](std::size_t i) { return ds.pose[i].yaw; });
  }
  if (!ds.labels.empty())
    for (std::size_t i = 0; i < ds.size(); ++i)
      log.labels[kLabelColumn].push_back({ds.t[i], ds.labels[i]});
  return log;
}

DatasetSplit split_dataset(const SyncedDataset& ds,
                           std::array<double, 3> fractions,
                           std::size_t min_rows) {
  double total = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw DataError("split fractions must be non-negative");
    total += f;
  }
  if (std::fabs(total - 1.0) > 1e-9)
    throw DataError("split fractions must sum to 1");
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::llround(fractions[0] * n));
  const auto n_val = static_cast<std::size_t>(std::llround(fractions[1] * n));
  if (n_train + n_val > n) throw DataError("split fractions exceed the dataset");
  const std::size_t n_test = n - n_train - n_val;
  for (std::size_t c : {n_train, n_val, n_test})
    if (c < min_rows)
      throw DataError("dataset of " + std::to_string(n) +
                      " rows too short: a split would have " +
                      std::to_string(c) + " rows, need " +
                      std::to_string(min_rows));
  return {ds.slice(0, n_train), ds.slice(n_train, n_val),
          ds.slice(n_train + n_val, n_test)};
}

std::vector<SyncedDataset> fixed_sequences(const SyncedDataset& ds,
                                           std::size_t length) {
  if (length == 0) throw DataError("sequence length must be positive");
  std::vector<SyncedDataset> out;
  for (std::size_t b = 0; b + length <= ds.size(); b += length)
    out.push_back(ds.slice(b, length));
  return out;
}

std::vector<std::size_t> random_slice_starts(std::size_t rows,
                                             std::size_t length,
                                             std::mt19937_64& rng) {
  if (length == 0) throw DataError("sequence length must be positive");
  if (rows < length) return {};
  std::uniform_int_distribution<std::size_t> pick(
      0, std::min(length, rows - length + 1) - 1);
  std::vector<std::size_t> starts;
  for (std::size_t b = pick(rng); b + length <= rows; b += length)
    starts.push_back(b);
  return starts;
}

void write_dataset_csv(const SyncedDataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "t,ax,ay,gyro_z,omega_s,delta,iq";
  if (!ds.pose.empty()) out << ",px,py,yaw";
  if (ds.has_truth()) out << ",gt_vx,gt_vy,gt_r,gt_omega_s";
  if (!ds.labels.empty()) out << "," << kLabelColumn;
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << format_double(ds.t[i]);
    for (double v : ds.y[i]) out << ',' << format_double(v);
    out << ',' << format_double(ds.u[i].delta) << ',' << format_double(ds.u[i].iq);
    if (!ds.pose.empty())
      out << ',' << format_double(ds.pose[i].x) << ','
          << format_double(ds.pose[i].y) << ',' << format_double(ds.pose[i].yaw);
    if (ds.has_truth())
      for (double v : ds.truth[i]) out << ',' << format_double(v);
    if (!ds.labels.empty()) out << ',' << ds.labels[i];
    out << '\n';
  }
  if (!out) throw DataError("failed writing '" + path + "'");
}

SyncedDataset read_dataset_csv(const std::string& path) {
  const RawLog log = load_log(path);
  // Rows of a synced file share one grid, so take it from the first channel.
  const Channel& ref = log.at("ax");
  for (const auto& [name, c] : log.channels)
    if (c.t.size() != ref.t.size())
      throw DataError("channel '" + name + "' has missing cells; '" + path +
                      "' is not a synchronized dataset");
  SyncedDataset ds;
  ds.rate_hz = ref.t.size() > 1
                   ? 1.0 / ((ref.t.back() - ref.t.front()) /
                            static_cast<double>(ref.t.size() - 1))
                   : 100.0;
  ds.rate_hz = std::round(ds.rate_hz * 1e6) / 1e6;
  const std::size_t n = ref.t.size();
  ds.t = ref.t;
  ds.y.resize(n);
  ds.u.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ds.y[i] = {log.at("ax").v[i], log.at("ay").v[i], log.at("gyro_z").v[i],
               log.at("omega_s").v[i]};
    ds.u[i] = {log.at("delta").v[i], log.at("iq").v[i]};
  }
  if (std::all_of(kPoseColumns.begin(), kPoseColumns.end(),
                  [&](const auto& c) { return log.has(c); })) {
    ds.pose.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      ds.pose[i] = {log.at("px").v[i], log.at("py").v[i], log.at("yaw").v[i]};
  }
  if (std::all_of(kTruthColumns.begin(), kTruthColumns.end(),
                  [&](const auto& c) { return log.has(c); })) {
    ds.truth.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      ds.truth[i] = {log.at("gt_vx").v[i], log.at("gt_vy").v[i],
                     log.at("gt_r").v[i], log.at("gt_omega_s").v[i]};
  }
  auto lab = log.labels.find(kLabelColumn);
  if (lab != log.labels.end()) {
    if (lab->second.size() != n)
      throw DataError("tire_label column has missing cells");
    for (const auto& [t, l] : lab->second) ds.labels.push_back(l);
  }
  ds.validate();
  return ds;
}

}  // namespace dukf
