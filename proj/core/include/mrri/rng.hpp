#pragma once

#include <array>
#include <cstdint>

namespace mrri {

// Philox4x32-10 counter-based generator (Salmon et al., "Parallel random
// numbers: as easy as 1, 2, 3"). Output is a pure function of (key, counter),
// so streams are splittable by construction and reproduce identically for any
// worker count or evaluation order. The raw 32-bit stream is bit-portable;
// the uniform/normal transforms below use libm and are reproducible per
// platform.
std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> counter,
                                        std::array<std::uint32_t, 2> key);

// A named draw stream: values are indexed, never sequential, so any subset of
// replicates or observations reproduces independently.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t replicate)
      : seed_(seed), replicate_(replicate) {}

  // Uniform on (0,1), exclusive of both endpoints (53-bit mantissa).
  double uniform(std::uint32_t stream, std::uint64_t index) const;
  // Standard normal via Box-Muller on two independent uniforms.
  double normal(std::uint32_t stream, std::uint64_t index) const;

 private:
  std::array<std::uint32_t, 4> block(std::uint32_t stream,
                                     std::uint64_t index) const;
  std::uint64_t seed_;
  std::uint64_t replicate_;
};

}  // namespace mrri
