#include "sim/synth.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "sim/math.hpp"

namespace sim {

namespace {

/// Dirichlet with concentration 1 on every class plus `sharpness` on `peak`.
Eigen::VectorXd peaked_distribution(int classes, int peak, double sharpness, std::mt19937_64& rng) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(classes);
  if (std::isinf(sharpness)) {
    out[peak] = 1.0;
    return out;
  }
  double sum = 0.0;
  for (int k = 0; k < classes; ++k) {
    std::gamma_distribution<double> gamma(k == peak ? 1.0 + sharpness : 1.0, 1.0);
    out[k] = gamma(rng);
    sum += out[k];
  }
  if (sum <= 0.0) {
    out.setZero();
    out[peak] = 1.0;
    return out;
  }
  return out / sum;
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Uniform action in [0, actions) other than `avoid`.
int uniform_other(std::mt19937_64& rng, int actions, int avoid) {
  const int k = uniform_int(rng, 0, actions - 2);
  return k >= avoid ? k + 1 : k;
}

}  // namespace

void SynthConfig::validate() const {
  dims.validate();
  if (dims.scenes > dims.actions) {
    throw std::invalid_argument("synthetic data maps actions onto activities and needs S <= A");
  }
  if (persons_min < 1) throw std::invalid_argument("persons-min must be >= 1");
  if (persons_min > persons_max) throw std::invalid_argument("persons-min must not exceed persons-max");
  if (!(distractor_rate >= 0.0 && distractor_rate <= 1.0)) {
    throw std::invalid_argument("distractor rate must be in [0,1]");
  }
  if (!(correlation >= 0.0 && correlation <= 1.0)) throw std::invalid_argument("correlation must be in [0,1]");
  if (!(unary_noise >= 0.0)) throw std::invalid_argument("unary noise concentration must be >= 0");
  if (count < 0) throw std::invalid_argument("count must be >= 0");
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

int majority_activity(const std::vector<int>& actions, const std::vector<bool>& mask, int scenes) {
  std::vector<int> votes(static_cast<std::size_t>(scenes), 0);
  bool any = false;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (!mask[i] || actions[i] < 0 || actions[i] >= scenes) continue;
    ++votes[static_cast<std::size_t>(actions[i])];
    any = true;
  }
  if (!any) return -1;
  int best = 0;
  for (int k = 1; k < scenes; ++k) {
    if (votes[static_cast<std::size_t>(k)] > votes[static_cast<std::size_t>(best)]) best = k;
  }
  return best;
}

int scene_label_for(const std::vector<int>& actions, const std::vector<bool>& relevant, int scenes) {
  const int label = majority_activity(actions, relevant, scenes);
  if (label >= 0) return label;
  return majority_activity(actions, std::vector<bool>(actions.size(), true), scenes);
}

std::vector<SynthInstance> generate(const SynthConfig& config) {
  config.validate();
  const int a = config.dims.actions;
  const int s = config.dims.scenes;
  std::vector<SynthInstance> out;
  out.reserve(static_cast<std::size_t>(config.count));
  for (int n = 0; n < config.count; ++n) {
    std::mt19937_64 rng(derive_seed(config.seed, static_cast<std::uint64_t>(n)));
    std::bernoulli_distribution distractor(config.distractor_rate);
    std::bernoulli_distribution follows(config.correlation);

    SynthInstance inst;
    const int m = uniform_int(rng, config.persons_min, config.persons_max);
    inst.latent_activity = uniform_int(rng, 0, s - 1);
    std::vector<int> actions(static_cast<std::size_t>(m));
    inst.relevant.assign(static_cast<std::size_t>(m), true);
    for (int i = 0; i < m; ++i) {
      const auto si = static_cast<std::size_t>(i);
      inst.relevant[si] = !distractor(rng);
      if (inst.relevant[si]) {
        actions[si] = follows(rng) ? inst.latent_activity : uniform_other(rng, a, inst.latent_activity);
      } else {
        actions[si] = uniform_int(rng, 0, a - 1);
      }
    }
    int label = scene_label_for(actions, inst.relevant, s);
    if (label < 0) label = inst.latent_activity;  // every action was outside the activity range

    inst.frame.scene_label = label;
    inst.frame.action_labels = actions;
    for (int i = 0; i < m; ++i) {
      inst.frame.person_unaries.push_back(
          peaked_distribution(a, actions[static_cast<std::size_t>(i)], config.unary_noise, rng));
    }
    inst.frame.scene_unary = peaked_distribution(s, label, config.unary_noise, rng);
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<SynthInstance> corrupt(const std::vector<SynthInstance>& instances, double flip_rate,
                                   std::uint64_t seed) {
  if (!(flip_rate >= 0.0 && flip_rate <= 1.0)) throw std::invalid_argument("flip rate must be in [0,1]");
  std::vector<SynthInstance> out = instances;
  for (std::size_t n = 0; n < out.size(); ++n) {
    std::mt19937_64 rng(derive_seed(seed, n));
    std::bernoulli_distribution flip(flip_rate);
    auto& frame = out[n].frame;
    for (int i = 0; i < frame.persons(); ++i) {
      const auto si = static_cast<std::size_t>(i);
      if (!flip(rng)) continue;
      auto& unary = frame.person_unaries[si];
      const int actions = static_cast<int>(unary.size());
      const int peak = argmax(unary);
      const int truth = frame.action_labels ? (*frame.action_labels)[si] : peak;
      const int target = uniform_other(rng, actions, truth);
      std::swap(unary[peak], unary[target]);
    }
  }
  return out;
}

Dataset frames_of(const std::vector<SynthInstance>& instances) {
  Dataset out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(inst.frame);
  return out;
}

}  // namespace sim
