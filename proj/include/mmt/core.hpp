#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace mmt {

using Vec3 = Eigen::Vector3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat3 = Eigen::Matrix3d;

/// Number of DMP dimensions per end-effector trajectory (x, y, z, roll, pitch, yaw).
inline constexpr int kPoseDims = 6;

/// A value violated an invariant of the named domain type.
class InvariantError : public std::invalid_argument {
 public:
  InvariantError(std::string type_name, const std::string& what)
      : std::invalid_argument(type_name + ": " + what), type_name_(std::move(type_name)) {}

  const std::string& type_name() const noexcept { return type_name_; }

 private:
  std::string type_name_;
};

inline Vec6 make_vec6(double a, double b, double c, double d, double e, double f) {
  Vec6 v;
  v << a, b, c, d, e, f;
  return v;
}

/// SplitMix64 finalizer; used to derive independent sub-seeds.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return mix_seed(mix_seed(mix_seed(base) ^ a) ^ (b * 0xD1B54A32D192ED03ULL));
}

}  // namespace mmt
