#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "gaitspeed/error.hpp"
#include "gaitspeed/imu_data.hpp"
#include "gaitspeed/tensor.hpp"

namespace gaitspeed {

inline constexpr std::size_t kFrameSize = 153;   // 3 s at 51 Hz
inline constexpr double kFrameOverlap = 0.5;
inline constexpr std::size_t kImuChannels = 6;

/// Segmented tensor [n, F, C] with per-window labels and provenance.
struct WindowedDataset {
  std::size_t frame_size = kFrameSize;
  double overlap = kFrameOverlap;
  std::size_t channels = kImuChannels;
  std::vector<double> data;    // row-major [n, F, C]
  std::vector<double> labels;  // speed in mph, one per window

  struct Origin {
    std::uint32_t participant = 0;  // index into `participants`
    std::uint32_t session = 0;
  };
  std::vector<std::string> participants;
  std::vector<Origin> origin;

  std::size_t size() const { return labels.size(); }
  std::size_t window_values() const { return frame_size * channels; }

  std::span<const double> window(std::size_t i) const {
    return {data.data() + i * window_values(), window_values()};
  }
  std::span<double> window(std::size_t i) {
    return {data.data() + i * window_values(), window_values()};
  }
};

/// Start rows of the sliding windows over a stream of length `rows`:
/// start_i = floor(i * F * (1 - overlap)), emitted while the frame still
/// fits. An integer stride of round(F/2) would give the wrong count for
/// odd F, so the fractional stride is kept and floored per window.
inline std::vector<std::size_t> window_starts(std::size_t rows, std::size_t frame_size,
                                              double overlap) {
  if (frame_size == 0) fail(Errc::out_of_range, "frame_size must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0)) fail(Errc::out_of_range, "overlap must be in [0, 1)");
  if (rows < frame_size) fail(Errc::too_short, "stream shorter than one frame");

  const double stride = static_cast<double>(frame_size) * (1.0 - overlap);
  std::vector<std::size_t> starts;
  for (std::size_t i = 0;; ++i) {
    const auto start = static_cast<std::size_t>(std::floor(static_cast<double>(i) * stride));
    if (start + frame_size > rows) break;
    starts.push_back(start);
  }
  return starts;
}

/// Slices a [rows, channels] stream into a [n, F, channels] tensor.
inline Tensor segment_stream(std::span<const double> stream, std::size_t rows,
                             std::size_t channels, std::size_t frame_size = kFrameSize,
                             double overlap = kFrameOverlap) {
  if (stream.size() != rows * channels) fail(Errc::shape_mismatch, "stream size != rows*channels");
  const auto starts = window_starts(rows, frame_size, overlap);
  Tensor out = Tensor::zeros({starts.size(), frame_size, channels});
  const std::size_t wv = frame_size * channels;
  for (std::size_t i = 0; i < starts.size(); ++i)
    std::memcpy(out.data() + i * wv, stream.data() + starts[i] * channels, wv * sizeof(double));
  return out;
}

/// Flattens a session to a [n, 6] row-major stream (ax ay az gx gy gz).
inline std::vector<double> session_channels(const Session& s) {
  std::vector<double> rows;
  rows.reserve(s.samples.size() * kImuChannels);
  for (const ImuSample& m : s.samples) {
    rows.push_back(m.ax);
    rows.push_back(m.ay);
    rows.push_back(m.az);
    rows.push_back(m.gx);
    rows.push_back(m.gy);
    rows.push_back(m.gz);
  }
  return rows;
}

enum class SegmentMode {
  per_session,   // windows never straddle a session boundary (default)
  concatenated,  // one stream over all sessions; a window is labeled by the
                 // session containing its start row
};

namespace detail {

inline std::uint32_t participant_index(WindowedDataset& ds, const std::string& id) {
  for (std::size_t i = 0; i < ds.participants.size(); ++i)
    if (ds.participants[i] == id) return static_cast<std::uint32_t>(i);
  ds.participants.push_back(id);
  return static_cast<std::uint32_t>(ds.participants.size() - 1);
}

}  // namespace detail

inline WindowedDataset segment_dataset(std::span<const Session> sessions,
                                       std::size_t frame_size = kFrameSize,
                                       double overlap = kFrameOverlap,
                                       SegmentMode mode = SegmentMode::per_session) {
  if (sessions.empty()) fail(Errc::empty_dataset, "no sessions to segment");
  const double rate = sessions.front().sample_rate_hz;
  for (const Session& s : sessions)
    if (std::abs(s.sample_rate_hz - rate) > 1e-6)
      fail(Errc::mixed_sample_rates, "sessions have mixed sample rates");

  WindowedDataset ds;
  ds.frame_size = frame_size;
  ds.overlap = overlap;
  ds.channels = kImuChannels;

  if (mode == SegmentMode::per_session) {
    for (std::size_t si = 0; si < sessions.size(); ++si) {
      const Session& s = sessions[si];
      const auto rows = session_channels(s);
      const Tensor t = segment_stream(rows, s.samples.size(), kImuChannels, frame_size, overlap);
      const std::uint32_t pi = detail::participant_index(ds, s.participant_id);
      const std::size_t n = t.shape[0];
      ds.data.insert(ds.data.end(), t.v.begin(), t.v.end());
      for (std::size_t i = 0; i < n; ++i) {
        ds.labels.push_back(s.speed_mph);
        ds.origin.push_back({pi, static_cast<std::uint32_t>(si)});
      }
    }
    return ds;
  }

  // Concatenated: the paper-figure accounting over the stacked stream.
  std::vector<double> stream;
  std::vector<std::size_t> session_end_row;  // exclusive prefix ends
  std::size_t total_rows = 0;
  for (const Session& s : sessions) {
    const auto rows = session_channels(s);
    stream.insert(stream.end(), rows.begin(), rows.end());
    total_rows += s.samples.size();
    session_end_row.push_back(total_rows);
  }
  const auto starts = window_starts(total_rows, frame_size, overlap);
  ds.data.reserve(starts.size() * frame_size * kImuChannels);
  std::size_t si = 0;
  for (const std::size_t start : starts) {
    while (start >= session_end_row[si]) ++si;
    const Session& s = sessions[si];
    ds.data.insert(ds.data.end(), stream.begin() + start * kImuChannels,
                   stream.begin() + (start + frame_size) * kImuChannels);
    ds.labels.push_back(s.speed_mph);
    ds.origin.push_back({detail::participant_index(ds, s.participant_id),
                         static_cast<std::uint32_t>(si)});
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Binary tensor file: magic GSW1, u32 n, u32 F, u32 channels, f32 data
// (row-major), f32 labels, then the provenance table (participant string
// table + per-window indices). Little-endian throughout.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

inline void put_f32(std::ostream& out, float v) {
  out.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t get_u32(std::istream& in, const char* what) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4))
    fail(Errc::bad_model_file, std::string("truncated file reading ") + what);
  return v;
}

inline float get_f32(std::istream& in, const char* what) {
  float v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4))
    fail(Errc::bad_model_file, std::string("truncated file reading ") + what);
  return v;
}

}  // namespace detail

inline void write_windowed(const WindowedDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(Errc::io_failure, "cannot write dataset file: " + path.string());
  out.write("GSW1", 4);
  detail::put_u32(out, static_cast<std::uint32_t>(ds.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.frame_size));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.channels));
  for (double v : ds.data) detail::put_f32(out, static_cast<float>(v));
  for (double v : ds.labels) detail::put_f32(out, static_cast<float>(v));
  detail::put_u32(out, static_cast<std::uint32_t>(ds.participants.size()));
  for (const std::string& p : ds.participants) {
    detail::put_u32(out, static_cast<std::uint32_t>(p.size()));
    out.write(p.data(), static_cast<std::streamsize>(p.size()));
  }
  for (const auto& o : ds.origin) {
    detail::put_u32(out, o.participant);
    detail::put_u32(out, o.session);
  }
  if (!out) fail(Errc::io_failure, "write failed: " + path.string());
}

inline WindowedDataset read_windowed(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_failure, "cannot open dataset file: " + path.string());
  char magic[4] = {};
  if (!in.read(magic, 4) || std::memcmp(magic, "GSW1", 4) != 0)
    fail(Errc::bad_model_file, "bad magic, not a GSW1 file: " + path.string());
  WindowedDataset ds;
  const std::uint32_t n = detail::get_u32(in, "window count");
  ds.frame_size = detail::get_u32(in, "frame size");
  ds.channels = detail::get_u32(in, "channel count");
  ds.overlap = 0.0;  // not recorded in the format
  ds.data.resize(static_cast<std::size_t>(n) * ds.frame_size * ds.channels);
  for (double& v : ds.data) v = detail::get_f32(in, "window data");
  ds.labels.resize(n);
  for (double& v : ds.labels) v = detail::get_f32(in, "labels");
  const std::uint32_t np = detail::get_u32(in, "participant count");
  ds.participants.resize(np);
  for (std::string& p : ds.participants) {
    const std::uint32_t len = detail::get_u32(in, "participant id length");
    p.resize(len);
    if (!in.read(p.data(), len)) fail(Errc::bad_model_file, "truncated participant table");
  }
  ds.origin.resize(n);
  for (auto& o : ds.origin) {
    o.participant = detail::get_u32(in, "provenance");
    o.session = detail::get_u32(in, "provenance");
    if (o.participant >= np) fail(Errc::bad_model_file, "provenance index out of range");
  }
  char extra;
  if (in.read(&extra, 1)) fail(Errc::bad_model_file, "trailing bytes after dataset");
  return ds;
}

}  // namespace gaitspeed
