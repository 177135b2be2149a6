#include <gtest/gtest.h>

#include <fstream>

#include "casnet/config.hpp"
#include "casnet/errors.hpp"
#include "test_util.hpp"

using namespace casnet;
using casnet::testing::TempDir;

TEST(Config, DeskPresetValues) {
  const auto c = ExperimentConfig::from_preset("desk");
  EXPECT_EQ(c.image_size, 64);
  EXPECT_EQ(c.x_train_per_class, 500);
  EXPECT_EQ(c.casnet.train.steps, 500);
  EXPECT_EQ(c.classifier.train.steps, 60);
  EXPECT_EQ(c.classifier.net.input_size, 0);
  EXPECT_EQ(c.y_unlabeled_per_class * 2, 200);
  EXPECT_EQ(c.y_eval_per_class * 2, 200);
}

TEST(Config, PaperPresetKeepsPublishedHyperparameters) {
  const auto c = ExperimentConfig::from_preset("paper");
  EXPECT_EQ(c.casnet.train.steps, 2000);
  EXPECT_EQ(c.casnet.train.lr, 1e-3);
  EXPECT_EQ(c.casnet.train.batch_size, 2);
  EXPECT_EQ(c.casnet.train.optimizer, OptimizerKind::Adam);
  EXPECT_EQ(c.cyclegan.train.steps, 200);
  EXPECT_EQ(c.cyclegan.train.lr, 1e-3);
  EXPECT_EQ(c.cyclegan.train.batch_size, 32);
  EXPECT_EQ(c.cyclegan.train.gen_updates_per_step, 2);
  EXPECT_EQ(c.cyclegan.residual_blocks, 9);
  EXPECT_EQ(c.classifier.train.steps, 15);
  EXPECT_EQ(c.classifier.train.lr, 0.005);
  EXPECT_EQ(c.classifier.train.batch_size, 32);
  EXPECT_EQ(c.classifier.train.optimizer, OptimizerKind::Sgd);
  EXPECT_TRUE(c.classifier.freeze_backbone);
  EXPECT_EQ(c.classifier.net.input_size, 224);
  EXPECT_EQ(c.x_train_per_class * 2, 6000);
}

TEST(Config, LossWeightDefaults) {
  const auto c = ExperimentConfig::from_preset("paper");
  EXPECT_EQ(c.casnet.weights.adversarial, 1.0);
  EXPECT_EQ(c.casnet.weights.reconstruction, 10.0);
  EXPECT_EQ(c.casnet.weights.consistency, 1.0);
  EXPECT_EQ(c.casnet.weights.content, 1.0);
  EXPECT_EQ(c.casnet.weights.style, 1e3);
}

TEST(Config, UnknownPresetRejected) { EXPECT_THROW(ExperimentConfig::from_preset("huge"), ConfigError); }

TEST(Config, SetGetRoundTripForEveryKey) {
  auto c = ExperimentConfig::from_preset("desk");
  for (const auto& k : ExperimentConfig::keys()) {
    const auto v = c.get(k);
    c.set(k, v);
    EXPECT_EQ(c.get(k), v) << k;
  }
}

TEST(Config, OverridesApplyInOrder) {
  auto c = ExperimentConfig::from_preset("desk");
  apply_overrides(c, {"casnet.steps=7", "casnet.lr=0.01", "casnet.steps=9", "casnet.cadt=false"});
  EXPECT_EQ(c.casnet.train.steps, 9);
  EXPECT_EQ(c.casnet.train.lr, 0.01);
  EXPECT_FALSE(c.casnet.cadt);
}

TEST(Config, UnknownOverrideKeysAllListed) {
  auto c = ExperimentConfig::from_preset("desk");
  try {
    apply_overrides(c, {"casnet.stepz=1", "general.seed=3", "nope.key=2"});
    FAIL();
  } catch (const ConfigError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("casnet.stepz"), std::string::npos);
    EXPECT_NE(m.find("nope.key"), std::string::npos);
  }
}

TEST(Config, MalformedValuesRejected) {
  auto c = ExperimentConfig::from_preset("desk");
  EXPECT_THROW(c.set("casnet.steps", "ten"), ConfigError);
  EXPECT_THROW(c.set("casnet.cadt", "maybe"), ConfigError);
  EXPECT_THROW(apply_overrides(c, {"casnet.steps"}), ConfigError);
}

TEST(Config, IniFileWithSectionsAndRootKeys) {
  TempDir dir("cfg");
  std::ofstream(dir / "a.ini") << "seed=17\n"
                                  "[casnet]\nsteps=12\nw_style=5\n"
                                  "[classifier]\nepochs=3\n";
  const auto c = load_config(dir / "a.ini");
  EXPECT_EQ(c.seed, 17u);
  EXPECT_EQ(c.casnet.train.steps, 12);
  EXPECT_EQ(c.casnet.weights.style, 5.0);
  EXPECT_EQ(c.classifier.train.steps, 3);
  EXPECT_EQ(c.image_size, 64);
}

TEST(Config, IniUnknownKeysReportedTogether) {
  TempDir dir("cfg");
  std::ofstream(dir / "b.ini") << "[casnet]\nsteps=1\nbogus=2\n[mystery]\nx=1\n";
  try {
    load_config(dir / "b.ini");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string m = e.what();
    EXPECT_NE(m.find("casnet.bogus"), std::string::npos);
    EXPECT_NE(m.find("mystery.x"), std::string::npos);
  }
  EXPECT_THROW(load_config(dir / "missing.ini"), Error);
}

TEST(Config, HashTracksContent) {
  auto a = ExperimentConfig::from_preset("desk");
  auto b = ExperimentConfig::from_preset("desk");
  EXPECT_EQ(a.hash(), b.hash());
  b.set("casnet.steps", "501");
  EXPECT_NE(a.hash(), b.hash());
  EXPECT_EQ(a.hash_of({"data."}), b.hash_of({"data."}));
  EXPECT_NE(a.hash_of({"casnet."}), b.hash_of({"casnet."}));
  EXPECT_EQ(a.hash().size(), 16u);
}

TEST(Config, PropagateDerivesDistinctTrainerSeeds) {
  auto c = ExperimentConfig::from_preset("desk");
  c.set("general.seed", "5");
  c.propagate();
  EXPECT_NE(c.casnet.train.seed, c.classifier.train.seed);
  EXPECT_NE(c.casnet.train.seed, c.cyclegan.train.seed);
  EXPECT_EQ(c.casnet.train.image_size, 64);
}

TEST(TrainConfigValidate, Invariants) {
  TrainConfig t;
  EXPECT_NO_THROW(t.validate());
  auto bad = t;
  bad.lr = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad = t;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad = t;
  bad.steps = 0;
  EXPECT_THROW(bad.validate(), Error);
}
