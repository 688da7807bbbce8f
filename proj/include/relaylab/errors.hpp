#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace relaylab {

/// Time step exceeds the advective stability bound.
class CflError : public std::runtime_error {
 public:
  CflError(double max_velocity, double dt, double admissible_dt)
      : std::runtime_error("CFL violation: max|u|=" + std::to_string(max_velocity) +
                           ", dt=" + std::to_string(dt) +
                           ", admissible dt<=" + std::to_string(admissible_dt)),
        max_velocity(max_velocity),
        dt(dt),
        admissible_dt(admissible_dt) {}

  double max_velocity;
  double dt;
  double admissible_dt;
};

/// Solver state became non-finite.
class BlowupError : public std::runtime_error {
 public:
  explicit BlowupError(std::uint64_t step)
      : std::runtime_error("non-finite vorticity at step " + std::to_string(step)), step(step) {}

  std::uint64_t step;
};

/// Binary file did not satisfy its format contract.
class FormatError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, truncated, dimension_mismatch, duplicate_key, invalid_header };

  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind(kind) {}

  Kind kind;
};

/// (trajectory_id, frame_id) not present in a latent table.
class MissingKeyError : public std::out_of_range {
 public:
  MissingKeyError(std::uint32_t trajectory_id, std::uint32_t frame_id)
      : std::out_of_range("no latent for (trajectory " + std::to_string(trajectory_id) +
                          ", frame " + std::to_string(frame_id) + ")"),
        trajectory_id(trajectory_id),
        frame_id(frame_id) {}

  std::uint32_t trajectory_id;
  std::uint32_t frame_id;
};

class DimensionError : public std::invalid_argument {
 public:
  DimensionError(const std::string& what, std::size_t expected, std::size_t actual)
      : std::invalid_argument(what + ": expected dimension " + std::to_string(expected) +
                              ", got " + std::to_string(actual)),
        expected(expected),
        actual(actual) {}

  std::size_t expected;
  std::size_t actual;
};

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace relaylab
