#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gaitspeed/error.hpp"
#include "gaitspeed/imu_data.hpp"
#include "gaitspeed/rng.hpp"

namespace gaitspeed {

/// Per-participant signature: how one person's wrist moves differently from
/// another's at the same treadmill speed.
struct ParticipantProfile {
  std::string id;
  double cadence_offset_hz = 0;   // shifts both plateaus
  double amplitude_gain = 1.0;    // scales the swing amplitude
  std::array<double, 6> phase{};  // per-axis arm-swing phase
  double posture_noise_scale = 1.0;  // noise growth with speed
  std::uint64_t seed = 0;
};

/// Signal-model constants. None of these carry physical provenance; they are
/// tuned so that cadence is flat within an activity, jumps at the walk-run
/// transition, and amplitude carries the speed information within an
/// activity.
struct GaitModelParams {
  double walk_swing_hz = 0.9;    // arm swing, i.e. half the step frequency
  double run_swing_hz = 1.35;
  double transition_mph = 4.5;   // walk below, run at or above

  double amp_base_g = 0.06;      // swing amplitude = gain * (base + per_mph * speed)
  double amp_per_mph_g = 0.05;
  double harmonic2 = 0.35;       // relative to the fundamental
  double harmonic3 = 0.15;

  std::array<double, 3> accel_axis_weight{1.0, 0.65, 0.45};
  std::array<double, 3> gyro_axis_weight{0.8, 1.0, 0.5};
  double gyro_dps_per_g = 150.0;

  double gravity_g = 1.0;
  double wobble_hz = 0.08;       // slow orientation drift of the gravity axis
  double wobble_rad = 0.12;

  double noise_floor_g = 0.02;
  double noise_floor_dps = 2.0;
  double posture_noise_per_mph = 0.12;  // applied above 3 mph, scaled per profile

  double speed_min_mph = 3.0;
  double speed_max_mph = 7.0;
};

/// Samples a participant signature from the generator stream.
inline ParticipantProfile make_profile(std::string id, Rng& rng) {
  ParticipantProfile p;
  p.id = std::move(id);
  p.cadence_offset_hz = rng.uniform(-0.04, 0.04);
  p.amplitude_gain = rng.uniform(0.92, 1.08);
  for (double& ph : p.phase) ph = rng.uniform(0.0, 6.283185307179586);
  p.posture_noise_scale = rng.uniform(0.5, 1.5);
  p.seed = rng.next_u64();
  return p;
}

/// One fixed-speed treadmill session: arm-swing fundamental plus two
/// harmonics per axis, gravity on a slowly wobbling orientation, Gaussian
/// noise, all clipped at the sensor ranges. Deterministic in
/// (profile, params, speed).
inline Session generate_session(const ParticipantProfile& profile, const GaitModelParams& params,
                                double speed_mph, double duration_s = 45.0,
                                double rate_hz = 51.0) {
  if (speed_mph < params.speed_min_mph || speed_mph > params.speed_max_mph)
    fail(Errc::out_of_range, "speed outside the generator's supported range");
  if (duration_s < 10.0) fail(Errc::out_of_range, "session duration must be at least 10 s");
  if (rate_hz <= 0) fail(Errc::out_of_range, "sample rate must be positive");

  const bool running = speed_mph >= params.transition_mph;
  const double swing_hz =
      (running ? params.run_swing_hz : params.walk_swing_hz) + profile.cadence_offset_hz;
  const double amp =
      profile.amplitude_gain * (params.amp_base_g + params.amp_per_mph_g * speed_mph);
  const double sigma_a =
      params.noise_floor_g *
      (1.0 + profile.posture_noise_scale * params.posture_noise_per_mph *
                 std::max(0.0, speed_mph - params.speed_min_mph));
  const double sigma_g =
      params.noise_floor_dps *
      (1.0 + profile.posture_noise_scale * params.posture_noise_per_mph *
                 std::max(0.0, speed_mph - params.speed_min_mph));

  Rng rng(Rng::mix(profile.seed, static_cast<std::uint64_t>(std::llround(speed_mph * 1000.0))));
  const double wobble_phase = rng.uniform(0.0, 6.283185307179586);

  Session s;
  s.participant_id = profile.id;
  s.speed_mph = speed_mph;
  s.sample_rate_hz = rate_hz;
  const auto n = static_cast<std::size_t>(std::llround(duration_s * rate_hz));
  s.samples.reserve(n);

  const double two_pi = 6.283185307179586;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / rate_hz;
    const double theta =
        params.wobble_rad * std::sin(two_pi * params.wobble_hz * t + wobble_phase);
    const std::array<double, 3> gravity{params.gravity_g * 0.8 * std::sin(theta),
                                        params.gravity_g * 0.6 * std::sin(theta),
                                        params.gravity_g * std::cos(theta)};
    ImuSample m;
    m.t = t;
    double* accel[3] = {&m.ax, &m.ay, &m.az};
    double* gyro[3] = {&m.gx, &m.gy, &m.gz};
    for (int ax = 0; ax < 3; ++ax) {
      const double pa = profile.phase[ax];
      const double swing = std::sin(two_pi * swing_hz * t + pa) +
                           params.harmonic2 * std::sin(2.0 * two_pi * swing_hz * t + 2.0 * pa + 0.7) +
                           params.harmonic3 * std::sin(3.0 * two_pi * swing_hz * t + 3.0 * pa + 1.3);
      double a = params.accel_axis_weight[static_cast<std::size_t>(ax)] * amp * swing +
                 gravity[static_cast<std::size_t>(ax)] + sigma_a * rng.gaussian();
      *accel[ax] = std::clamp(a, -kAccelRangeG, kAccelRangeG);

      const double pg = profile.phase[ax + 3];
      const double rot = std::cos(two_pi * swing_hz * t + pg) +
                         params.harmonic2 * std::cos(2.0 * two_pi * swing_hz * t + 2.0 * pg + 0.4);
      double g = params.gyro_axis_weight[static_cast<std::size_t>(ax)] * amp *
                     params.gyro_dps_per_g * rot +
                 sigma_g * rng.gaussian();
      *gyro[ax] = std::clamp(g, -kGyroRangeDps, kGyroRangeDps);
    }
    s.samples.push_back(m);
  }
  return s;
}

/// Writes one CSV per (participant, speed) plus `manifest.csv` into out_dir.
/// Byte-identical output for the same master seed.
inline std::vector<ManifestEntry> generate_dataset(const std::filesystem::path& out_dir,
                                                   int n_participants,
                                                   std::span<const double> speeds_mph,
                                                   std::uint64_t master_seed,
                                                   const GaitModelParams& params = GaitModelParams{},
                                                   double duration_s = 45.0,
                                                   double rate_hz = 51.0) {
  if (n_participants < 1) fail(Errc::out_of_range, "need at least one participant");
  if (speeds_mph.empty()) fail(Errc::empty_dataset, "no speeds given");
  std::filesystem::create_directories(out_dir);

  Rng rng(master_seed);
  std::vector<ManifestEntry> entries;
  for (int pi = 0; pi < n_participants; ++pi) {
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "P%02d", pi + 1);
    ParticipantProfile profile = make_profile(idbuf, rng);
    for (double speed : speeds_mph) {
      const Session session = generate_session(profile, params, speed, duration_s, rate_hz);
      char namebuf[64];
      std::snprintf(namebuf, sizeof(namebuf), "%s_%.1fmph.csv", idbuf, speed);
      write_session(session, out_dir / namebuf);
      entries.push_back({namebuf, speed, idbuf});
    }
  }
  save_manifest(entries, out_dir / "manifest.csv");
  return entries;
}

/// 3.0, 3.5, ..., 7.0 by default; `lo:hi:step` in CLI terms.
inline std::vector<double> speed_ladder(double lo = 3.0, double hi = 7.0, double step = 0.5) {
  if (step <= 0 || hi < lo) fail(Errc::out_of_range, "bad speed range");
  std::vector<double> speeds;
  for (double s = lo; s <= hi + 1e-9; s += step) speeds.push_back(std::round(s * 1e6) / 1e6);
  return speeds;
}

}  // namespace gaitspeed
