#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "gaitspeed/error.hpp"

namespace gaitspeed {

/// One timestamped 6-channel reading: acceleration in g, angular velocity
/// in deg/s.
struct ImuSample {
  double t = 0;
  double ax = 0, ay = 0, az = 0;
  double gx = 0, gy = 0, gz = 0;
};

/// A fixed-speed treadmill recording.
struct Session {
  std::string participant_id;
  double speed_mph = 0;
  double sample_rate_hz = 0;
  std::vector<ImuSample> samples;

  double duration_s() const {
    return sample_rate_hz > 0 ? static_cast<double>(samples.size()) / sample_rate_hz : 0.0;
  }
};

/// Per-sensor affine calibration c = M * (r - b). Identity by default.
struct CalibrationParams {
  struct Sensor {
    std::array<double, 3> offset{0.0, 0.0, 0.0};
    std::array<std::array<double, 3>, 3> scale{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  };
  Sensor accel;
  Sensor gyro;

  static CalibrationParams identity() { return CalibrationParams{}; }
};

inline constexpr std::string_view kSessionCsvHeader = "t,ax,ay,az,gx,gy,gz";
inline constexpr double kAccelRangeG = 2.0;
inline constexpr double kGyroRangeDps = 1000.0;

namespace detail {

/// Shortest decimal string that round-trips the double exactly.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
  // Trim spaces and a trailing \r from Windows line endings.
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc{} && res.ptr == s.data() + s.size() && std::isfinite(out);
}

inline double det3(const std::array<std::array<double, 3>, 3>& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

inline std::array<double, 3> affine3(const CalibrationParams::Sensor& s,
                                     const std::array<double, 3>& r) {
  const std::array<double, 3> d{r[0] - s.offset[0], r[1] - s.offset[1], r[2] - s.offset[2]};
  std::array<double, 3> c{};
  for (int i = 0; i < 3; ++i)
    c[i] = s.scale[i][0] * d[0] + s.scale[i][1] * d[1] + s.scale[i][2] * d[2];
  return c;
}

}  // namespace detail

/// Parses a session CSV (header `t,ax,ay,az,gx,gy,gz`). Sample rate is
/// inferred from the timestamps and snapped to 1e-6 Hz.
inline Session parse_session(const std::filesystem::path& path, std::string participant_id,
                             double speed_mph) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_failure, "cannot open session file: " + path.string());
  if (speed_mph <= 0) fail(Errc::out_of_range, "speed_mph must be positive");

  Session s;
  s.participant_id = std::move(participant_id);
  s.speed_mph = speed_mph;

  std::string line;
  if (!std::getline(in, line)) fail(Errc::empty_file, "empty session file: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kSessionCsvHeader)
    fail(Errc::malformed_row, path.string() + ":1: bad header, expected '" +
                                  std::string(kSessionCsvHeader) + "'");

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::array<double, 7> f{};
    std::size_t field = 0, pos = 0;
    std::string_view sv(line);
    while (field < 7) {
      const std::size_t comma = sv.find(',', pos);
      const std::string_view cell =
          sv.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
      if (!detail::parse_double(cell, f[field]))
        fail(Errc::malformed_row,
             path.string() + ":" + std::to_string(line_no) + ": non-numeric field");
      ++field;
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (field != 7)
      fail(Errc::malformed_row, path.string() + ":" + std::to_string(line_no) + ": expected 7 fields");
    if (!s.samples.empty() && f[0] <= s.samples.back().t)
      fail(Errc::non_monotonic_time,
           path.string() + ":" + std::to_string(line_no) + ": timestamps not strictly increasing");
    s.samples.push_back(ImuSample{f[0], f[1], f[2], f[3], f[4], f[5], f[6]});
  }

  if (s.samples.empty()) fail(Errc::empty_file, "no samples in session file: " + path.string());
  if (s.samples.size() < 2)
    fail(Errc::too_short, "session needs at least 2 samples to infer sample rate: " + path.string());

  const double span = s.samples.back().t - s.samples.front().t;
  const double rate = static_cast<double>(s.samples.size() - 1) / span;
  s.sample_rate_hz = std::round(rate * 1e6) / 1e6;
  return s;
}

inline void write_session(const Session& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);  // binary: no \n translation
  if (!out) fail(Errc::io_failure, "cannot write session file: " + path.string());
  out << kSessionCsvHeader << '\n';
  for (const ImuSample& m : s.samples) {
    out << detail::format_double(m.t) << ',' << detail::format_double(m.ax) << ','
        << detail::format_double(m.ay) << ',' << detail::format_double(m.az) << ','
        << detail::format_double(m.gx) << ',' << detail::format_double(m.gy) << ','
        << detail::format_double(m.gz) << '\n';
  }
  if (!out) fail(Errc::io_failure, "write failed: " + path.string());
}

/// Applies the per-sensor affine calibration to every sample. Timestamps are
/// untouched.
inline Session apply_calibration(const Session& in, const CalibrationParams& calib) {
  if (std::abs(detail::det3(calib.accel.scale)) < 1e-12 ||
      std::abs(detail::det3(calib.gyro.scale)) < 1e-12)
    fail(Errc::singular_matrix, "calibration matrix is singular");

  Session out = in;
  for (ImuSample& m : out.samples) {
    const auto a = detail::affine3(calib.accel, {m.ax, m.ay, m.az});
    const auto g = detail::affine3(calib.gyro, {m.gx, m.gy, m.gz});
    m.ax = a[0];
    m.ay = a[1];
    m.az = a[2];
    m.gx = g[0];
    m.gy = g[1];
    m.gz = g[2];
  }
  return out;
}

/// Drops floor(trim_seconds * rate) samples from each end, then clips the
/// tail so the result holds exactly floor((duration - 2*trim) * rate)
/// samples. A 45 s recording at 51 Hz becomes exactly 2040 samples.
/// Timestamps are regenerated as index / rate (downstream use is index
/// based); trim_seconds == 0 returns the session unchanged.
inline Session trim_session(const Session& in, double trim_seconds = 2.5) {
  if (trim_seconds < 0) fail(Errc::out_of_range, "trim_seconds must be nonnegative");
  const std::size_t n = in.samples.size();
  const double rate = in.sample_rate_hz;
  if (rate <= 0) fail(Errc::out_of_range, "session sample rate must be positive");
  if (in.duration_s() <= 2.0 * trim_seconds)
    fail(Errc::too_short, "session too short to trim " + detail::format_double(trim_seconds) +
                              " s from each end");

  const auto per_side = static_cast<std::size_t>(std::floor(trim_seconds * rate + 1e-9));
  const auto target = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) - 2.0 * trim_seconds * rate + 1e-9));
  if (per_side == 0 && target >= n) return in;

  Session out;
  out.participant_id = in.participant_id;
  out.speed_mph = in.speed_mph;
  out.sample_rate_hz = rate;
  const std::size_t count = std::min(n - 2 * per_side, target);
  out.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    ImuSample m = in.samples[per_side + i];
    m.t = static_cast<double>(i) / rate;
    out.samples.push_back(m);
  }
  return out;
}

/// Checks every Session/ImuSample invariant: finiteness, sensor ranges,
/// strictly increasing time, count consistent with duration, positive label.
inline void validate_session(const Session& s) {
  if (s.speed_mph <= 0) fail(Errc::out_of_range, "speed_mph must be positive");
  if (s.sample_rate_hz <= 0) fail(Errc::out_of_range, "sample_rate_hz must be positive");
  if (s.samples.empty()) fail(Errc::empty_dataset, "session has no samples");
  double prev_t = -std::numeric_limits<double>::infinity();
  for (const ImuSample& m : s.samples) {
    const double vals[7] = {m.t, m.ax, m.ay, m.az, m.gx, m.gy, m.gz};
    for (double v : vals)
      if (!std::isfinite(v)) fail(Errc::out_of_range, "non-finite sample value");
    const double eps = 1e-9;
    if (std::abs(m.ax) > kAccelRangeG + eps || std::abs(m.ay) > kAccelRangeG + eps ||
        std::abs(m.az) > kAccelRangeG + eps)
      fail(Errc::out_of_range, "acceleration outside +/-2 g range");
    if (std::abs(m.gx) > kGyroRangeDps + eps || std::abs(m.gy) > kGyroRangeDps + eps ||
        std::abs(m.gz) > kGyroRangeDps + eps)
      fail(Errc::out_of_range, "angular velocity outside +/-1000 dps range");
    if (m.t <= prev_t) fail(Errc::non_monotonic_time, "timestamps not strictly increasing");
    prev_t = m.t;
  }
  if (s.samples.size() >= 2) {
    const double span = s.samples.back().t - s.samples.front().t;
    const double expect = span * s.sample_rate_hz;  // == count - 1 for regular sampling
    if (std::abs(static_cast<double>(s.samples.size() - 1) - expect) > 1.0 + 1e-6)
      fail(Errc::out_of_range, "sample count inconsistent with duration and sample rate");
  }
}

// ---------------------------------------------------------------------------
// Dataset manifest: one `path,speed_mph,participant_id` line per session.
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string path;  // relative to the manifest file's directory
  double speed_mph = 0;
  std::string participant_id;
};

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::io_failure, "cannot open manifest: " + path.string());
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const std::size_t c1 = line.find(',');
    const std::size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
    if (c2 == std::string::npos)
      fail(Errc::malformed_row,
           path.string() + ":" + std::to_string(line_no) + ": expected path,speed,participant");
    ManifestEntry e;
    e.path = line.substr(0, c1);
    if (!detail::parse_double(std::string_view(line).substr(c1 + 1, c2 - c1 - 1), e.speed_mph))
      fail(Errc::malformed_row, path.string() + ":" + std::to_string(line_no) + ": bad speed");
    e.participant_id = line.substr(c2 + 1);
    entries.push_back(std::move(e));
  }
  if (entries.empty()) fail(Errc::empty_file, "manifest lists no sessions: " + path.string());
  return entries;
}

inline void save_manifest(const std::vector<ManifestEntry>& entries,
                          const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io_failure, "cannot write manifest: " + path.string());
  for (const ManifestEntry& e : entries)
    out << e.path << ',' << detail::format_double(e.speed_mph) << ',' << e.participant_id << '\n';
}

/// Loads every session listed in a manifest; paths resolve relative to the
/// manifest's directory.
inline std::vector<Session> load_sessions(const std::filesystem::path& manifest_path) {
  const auto entries = load_manifest(manifest_path);
  const auto base = manifest_path.parent_path();
  std::vector<Session> sessions;
  sessions.reserve(entries.size());
  for (const ManifestEntry& e : entries) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = base / p;
    sessions.push_back(parse_session(p, e.participant_id, e.speed_mph));
  }
  return sessions;
}

}  // namespace gaitspeed
