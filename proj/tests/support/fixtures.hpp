#pragma once

// Small shared worlds for the unit tests.

#include "vipguard/world.hpp"

namespace fixture {

inline vipguard::world::WorldConfig tiny_world_config() {
  vipguard::world::WorldConfig c;
  c.seed = 17;
  c.identities = 5;
  c.vip_identities = 1;
  c.reals_per_identity = 8;
  c.vip_test_reals = 3;
  c.general_forgeries_per_identity = 6;
  c.vip_train_forgeries_per_real = 5;
  c.vip_test_synthesis_per_real = 2;
  c.image_size = 32;
  return c;
}

/// Generated once per test binary.
inline const vipguard::world::World& tiny_world() {
  static const vipguard::world::World w = vipguard::world::generate_world(tiny_world_config());
  return w;
}

}  // namespace fixture
