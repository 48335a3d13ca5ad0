#pragma once

#include <cstdint>
#include <vector>

#include "sim/training.hpp"
#include "sim/types.hpp"

namespace sim {

struct SynthConfig {
  Dims dims{5, 5};
  int persons_min = 4;
  int persons_max = 8;
  double distractor_rate = 0.3;
  // Dirichlet concentration added to the true class; infinity gives one-hot unaries.
  double unary_noise = 4.0;
  double correlation = 0.9;
  std::uint64_t seed = 1;
  int count = 100;

  void validate() const;
};

struct SynthInstance {
  FrameInstance frame;
  std::vector<bool> relevant;  // person participates in the group activity
  int latent_activity = 0;     // activity drawn before persons act
};

/// Label of the activity most persons in `actions` perform, restricted to
/// persons with `mask[i]` set. Actions >= scenes never count. Ties go to the
/// lowest index; returns -1 when nobody counts.
int majority_activity(const std::vector<int>& actions, const std::vector<bool>& mask, int scenes);

/// The labeling rule: majority among relevant persons, falling back to all persons.
int scene_label_for(const std::vector<int>& actions, const std::vector<bool>& relevant, int scenes);

std::vector<SynthInstance> generate(const SynthConfig& config);

/// With probability flip_rate per person, moves the unary's peak onto a
/// uniformly drawn wrong action by swapping two entries. Labels are kept.
std::vector<SynthInstance> corrupt(const std::vector<SynthInstance>& instances, double flip_rate,
                                   std::uint64_t seed);

Dataset frames_of(const std::vector<SynthInstance>& instances);

/// Seed for instance `index` derived from a base seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index);

}  // namespace sim
