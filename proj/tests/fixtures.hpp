// Copyright 2026 The safepilco Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <random>

#include "safepilco/environments.hpp"
#include "safepilco/gp.hpp"

namespace safepilco::testing {

/// Transitions from random-torque pendulum episodes.
inline TransitionDataset random_pendulum_data(int episodes, int horizon, std::uint64_t seed) {
  PendulumEnv env(PendulumParams{}, InitialStateSpec{}, seed);
  std::mt19937_64 rng(seed + 1);
  std::uniform_real_distribution<double> torque(-2.0, 2.0);
  TransitionDataset data(kPendulumObsDim, kPendulumActionDim);
  for (int e = 0; e < episodes; ++e) {
    VectorXd obs = env.reset();
    for (int t = 0; t < horizon; ++t) {
      const double u = torque(rng);
      const VectorXd next = env.step(u);
      data.add(obs, VectorXd::Constant(1, u), next);
      obs = next;
    }
  }
  return data;
}

}  // namespace safepilco::testing
