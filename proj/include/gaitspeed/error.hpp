#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace gaitspeed {

enum class Errc {
  empty_file,
  malformed_row,
  non_monotonic_time,
  too_short,
  singular_matrix,
  mixed_sample_rates,
  empty_dataset,
  no_dominant_peak,
  shape_mismatch,
  out_of_range,
  bad_model_file,
  io_failure,
  non_finite_loss,
};

/// All library failures throw this; code() lets callers branch without
/// string matching.
class Error : public std::runtime_error {
public:
  Error(Errc code, std::string msg) : std::runtime_error(std::move(msg)), code_(code) {}
  Errc code() const noexcept { return code_; }

private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

}  // namespace gaitspeed
