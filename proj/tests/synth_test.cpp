#include <gtest/gtest.h>

#include <limits>

#include "sim/synth.hpp"

namespace sim {
namespace {

TEST(Synth, NoiselessLimit) {
  SynthConfig cfg;
  cfg.distractor_rate = 0.0;
  cfg.correlation = 1.0;
  cfg.unary_noise = std::numeric_limits<double>::infinity();
  cfg.count = 50;
  for (const auto& inst : generate(cfg)) {
    const int y = *inst.frame.scene_label;
    EXPECT_EQ(y, inst.latent_activity);
    for (const auto& u : inst.frame.person_unaries) {
      EXPECT_EQ(u, Eigen::VectorXd::Unit(cfg.dims.actions, y));
    }
    EXPECT_EQ(inst.frame.scene_unary, Eigen::VectorXd::Unit(cfg.dims.scenes, y));
  }
}

TEST(Synth, AllDistractorsFallBackToEveryPerson) {
  SynthConfig cfg;
  cfg.distractor_rate = 1.0;
  cfg.count = 200;
  for (const auto& inst : generate(cfg)) {
    for (bool r : inst.relevant) EXPECT_FALSE(r);
    const auto& actions = *inst.frame.action_labels;
    EXPECT_EQ(*inst.frame.scene_label,
              majority_activity(actions, std::vector<bool>(actions.size(), true), cfg.dims.scenes));
  }
}

TEST(Synth, MajorityTieGoesToLowestIndex) {
  EXPECT_EQ(majority_activity({2, 1, 2, 1}, {true, true, true, true}, 3), 1);
  EXPECT_EQ(majority_activity({2, 1, 2, 1}, {true, false, true, true}, 3), 2);
  EXPECT_EQ(majority_activity({0, 1}, {false, false}, 3), -1);
  // actions without a matching activity never vote
  EXPECT_EQ(majority_activity({4, 4, 1}, {true, true, true}, 3), 1);
  EXPECT_EQ(scene_label_for({0, 2, 2}, {true, false, false}, 3), 0);
  EXPECT_EQ(scene_label_for({0, 2, 2}, {false, false, false}, 3), 2);
}

TEST(Synth, SeedDeterministic) {
  SynthConfig cfg;
  cfg.count = 30;
  const auto a = generate(cfg);
  const auto b = generate(cfg);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t n = 0; n < a.size(); ++n) {
    EXPECT_EQ(a[n].frame.scene_unary, b[n].frame.scene_unary);
    EXPECT_EQ(a[n].frame.person_unaries, b[n].frame.person_unaries);
    EXPECT_EQ(a[n].relevant, b[n].relevant);
  }
  cfg.seed = 2;
  EXPECT_NE(generate(cfg)[0].frame.scene_unary, a[0].frame.scene_unary);
}

TEST(Synth, PrefixStableAcrossCounts) {
  SynthConfig cfg;
  cfg.count = 10;
  const auto small = generate(cfg);
  cfg.count = 20;
  const auto large = generate(cfg);
  for (std::size_t n = 0; n < small.size(); ++n) {
    EXPECT_EQ(small[n].frame.person_unaries, large[n].frame.person_unaries);
  }
}

TEST(Synth, StoredLabelFollowsMajorityRule) {
  SynthConfig cfg;
  cfg.count = 1000;
  cfg.dims = Dims{6, 4};
  cfg.seed = 13;
  for (const auto& inst : generate(cfg)) {
    EXPECT_EQ(*inst.frame.scene_label, scene_label_for(*inst.frame.action_labels, inst.relevant, cfg.dims.scenes));
    const int m = inst.frame.persons();
    EXPECT_GE(m, cfg.persons_min);
    EXPECT_LE(m, cfg.persons_max);
  }
}

TEST(Synth, CorrelationFrequency) {
  SynthConfig cfg;
  cfg.distractor_rate = 0.0;
  cfg.correlation = 0.9;
  cfg.persons_min = cfg.persons_max = 10;
  cfg.count = 1000;
  cfg.seed = 5;
  int follow = 0, total = 0;
  for (const auto& inst : generate(cfg)) {
    for (int a : *inst.frame.action_labels) {
      follow += a == inst.latent_activity;
      ++total;
    }
  }
  ASSERT_EQ(total, 10000);
  EXPECT_NEAR(static_cast<double>(follow) / total, 0.9, 0.05);
}

TEST(Synth, DistractorFrequency) {
  SynthConfig cfg;
  cfg.persons_min = cfg.persons_max = 10;
  cfg.count = 1000;
  int distractors = 0;
  for (const auto& inst : generate(cfg)) {
    for (bool r : inst.relevant) distractors += !r;
  }
  EXPECT_NEAR(distractors / 10000.0, 0.3, 0.03);
}

TEST(Synth, UnariesArePeakedAtTheAction) {
  SynthConfig cfg;
  cfg.unary_noise = 50.0;
  cfg.count = 100;
  for (const auto& inst : generate(cfg)) {
    for (int i = 0; i < inst.frame.persons(); ++i) {
      const auto& u = inst.frame.person_unaries[static_cast<std::size_t>(i)];
      EXPECT_NEAR(u.sum(), 1.0, 1e-12);
      EXPECT_EQ(argmax(u), (*inst.frame.action_labels)[static_cast<std::size_t>(i)]);
    }
  }
}

TEST(Synth, RejectsBadConfigs) {
  SynthConfig cfg;
  cfg.distractor_rate = 1.5;
  EXPECT_THROW(generate(cfg), std::invalid_argument);
  cfg = SynthConfig{};
  cfg.persons_min = 5;
  cfg.persons_max = 4;
  EXPECT_THROW(generate(cfg), std::invalid_argument);
  cfg = SynthConfig{};
  cfg.persons_min = 0;
  EXPECT_THROW(generate(cfg), std::invalid_argument);
  cfg = SynthConfig{};
  cfg.dims = Dims{3, 5};
  EXPECT_THROW(generate(cfg), std::invalid_argument);
}

constexpr int kPinnedFlips = 309;  // counted once under seed 3

std::vector<SynthInstance> thousand_persons() {
  SynthConfig cfg;
  cfg.persons_min = cfg.persons_max = 10;
  cfg.count = 100;
  cfg.seed = 1;
  return generate(cfg);
}

int flipped(const std::vector<SynthInstance>& before, const std::vector<SynthInstance>& after) {
  int n = 0;
  for (std::size_t k = 0; k < before.size(); ++k) {
    const auto& labels = *after[k].frame.action_labels;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const auto& u = after[k].frame.person_unaries[i];
      if (u != before[k].frame.person_unaries[i]) {
        ++n;
        EXPECT_NE(argmax(u), labels[i]);
        EXPECT_NEAR(u.sum(), 1.0, 1e-12);
      }
    }
    EXPECT_EQ(after[k].frame.scene_label, before[k].frame.scene_label);
    EXPECT_EQ(after[k].frame.scene_unary, before[k].frame.scene_unary);
  }
  return n;
}

TEST(Corrupt, ZeroRateIsIdentity) {
  const auto data = thousand_persons();
  EXPECT_EQ(flipped(data, corrupt(data, 0.0, 3)), 0);
}

TEST(Corrupt, FullRateMovesEveryPeak) {
  const auto data = thousand_persons();
  const auto out = corrupt(data, 1.0, 3);
  flipped(data, out);
  int wrong = 0;
  for (const auto& inst : out) {
    for (int i = 0; i < inst.frame.persons(); ++i) {
      const auto si = static_cast<std::size_t>(i);
      wrong += argmax(inst.frame.person_unaries[si]) != (*inst.frame.action_labels)[si];
    }
  }
  EXPECT_EQ(wrong, 1000);
}

TEST(Corrupt, ReferenceSeedCount) {
  const auto data = thousand_persons();
  const int n = flipped(data, corrupt(data, 0.3, 3));
  EXPECT_GE(n, 250);
  EXPECT_LE(n, 350);
  EXPECT_EQ(n, kPinnedFlips);
}

TEST(Corrupt, RejectsBadRate) {
  EXPECT_THROW(corrupt(thousand_persons(), -0.1, 1), std::invalid_argument);
}

TEST(DeriveSeed, DistinctPerIndex) {
  EXPECT_NE(derive_seed(1, 0), derive_seed(1, 1));
  EXPECT_NE(derive_seed(1, 0), derive_seed(2, 0));
  EXPECT_EQ(derive_seed(9, 4), derive_seed(9, 4));
}

}  // namespace
}  // namespace sim
