#include "mrri/rng.hpp"

#include <cmath>

namespace mrri {

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;

inline std::uint32_t mul_hi(std::uint32_t a, std::uint32_t b) {
  return static_cast<std::uint32_t>(
      (static_cast<std::uint64_t>(a) * static_cast<std::uint64_t>(b)) >> 32);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                        std::array<std::uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    const std::uint32_t hi0 = mul_hi(kPhiloxM0, ctr[0]);
    const std::uint32_t lo0 = kPhiloxM0 * ctr[0];
    const std::uint32_t hi1 = mul_hi(kPhiloxM1, ctr[2]);
    const std::uint32_t lo1 = kPhiloxM1 * ctr[2];
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

std::array<std::uint32_t, 4> CounterRng::block(std::uint32_t stream,
                                               std::uint64_t index) const {
  const std::array<std::uint32_t, 4> counter = {
      static_cast<std::uint32_t>(index),
      static_cast<std::uint32_t>(index >> 32),
      stream,
      // Mix the replicate into the remaining counter word and the key so the
      // full (seed, replicate) pair selects a distinct stream.
      static_cast<std::uint32_t>(replicate_),
  };
  const std::array<std::uint32_t, 2> key = {
      static_cast<std::uint32_t>(seed_) ^
          static_cast<std::uint32_t>(replicate_ >> 32),
      static_cast<std::uint32_t>(seed_ >> 32),
  };
  return philox4x32(counter, key);
}

double CounterRng::uniform(std::uint32_t stream, std::uint64_t index) const {
  const auto words = block(stream, index);
  const std::uint64_t bits =
      (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

double CounterRng::normal(std::uint32_t stream, std::uint64_t index) const {
  const auto words = block(stream, index);
  const std::uint64_t bits0 =
      (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  const std::uint64_t bits1 =
      (static_cast<std::uint64_t>(words[2]) << 32) | words[3];
  const double u1 = (static_cast<double>(bits0 >> 11) + 0.5) * 0x1.0p-53;
  const double u2 = (static_cast<double>(bits1 >> 11) + 0.5) * 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * 3.14159265358979323846 * u2);
}

}  // namespace mrri
