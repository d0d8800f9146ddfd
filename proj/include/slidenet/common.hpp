#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace slidenet {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

// Error categories map onto CLI exit codes (1 usage, 2 data, 3 numeric).
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const { return 2; }
};

class UsageError : public Error {
public:
  using Error::Error;
  int exit_code() const override { return 1; }
};

class DataError : public Error {
public:
  using Error::Error;
  int exit_code() const override { return 2; }
};

class NumericError : public Error {
public:
  using Error::Error;
  int exit_code() const override { return 3; }
};

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kRadToDeg = 180.0 / kPi;
inline constexpr double kDegToRad = kPi / 180.0;

// splitmix64 finalizer; used to derive per-record seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
  return mix_seed(mix_seed(master) ^ (index * 0xd1b54a32d192ed03ULL + 1));
}

} // namespace slidenet
