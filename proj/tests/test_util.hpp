#pragma once

#include <random>

#include "sim/types.hpp"

namespace sim::testing {

/// Random labeled frame with strictly positive unaries.
inline FrameInstance random_instance(const Dims& dims, int persons, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  auto draw = [&](int n) {
    Eigen::VectorXd v(n);
    for (int k = 0; k < n; ++k) v[k] = u(rng);
    return Eigen::VectorXd(v / v.sum());
  };
  FrameInstance inst;
  inst.scene_unary = draw(dims.scenes);
  std::vector<int> labels;
  for (int i = 0; i < persons; ++i) {
    inst.person_unaries.push_back(draw(dims.actions));
    labels.push_back(std::uniform_int_distribution<int>(0, dims.actions - 1)(rng));
  }
  inst.scene_label = std::uniform_int_distribution<int>(0, dims.scenes - 1)(rng);
  inst.action_labels = labels;
  return inst;
}

/// Parameters with every entry (biases included) drawn from [-scale, scale].
inline ModelParams random_params(const Dims& dims, int steps, WeightSharing sharing, bool gated,
                                 std::uint64_t seed, double scale = 1.0) {
  ModelParams p = init_params(dims, steps, sharing, gated, seed);
  std::mt19937_64 rng(seed ^ 0xA5A5A5A5ULL);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& b : p.blocks) {
    b.for_each([&](const ParamInfo&, Eigen::Map<Eigen::MatrixXd> v) {
      for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] = u(rng);
    });
  }
  return p;
}

inline ModelParams zero_params(const Dims& dims, int steps, WeightSharing sharing, bool gated) {
  ModelParams p{dims, sharing, gated, {}};
  p.blocks.assign(sharing == WeightSharing::tied ? 1u : static_cast<std::size_t>(steps), BlockSet::zeros(dims));
  return p;
}

}  // namespace sim::testing
