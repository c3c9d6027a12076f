#pragma once

#include "mrri/simulator.hpp"

namespace mrri::bench {

inline Dataset stationary_dataset(int side, int n) {
  SimConfig config = preset("sim1-desk");
  config.domain = DomainConfig{{{{1.0, 1.0}, {side, side}, std::nullopt}}};
  config.n_obs = n;
  config.seed = 1234;
  return simulate_dataset(config, 0);
}

}  // namespace mrri::bench
