#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "support.hpp"

using namespace whispr;

TEST(Config, DefaultsProduceValidModuleConfigs) {
  const ExperimentConfig c;
  const auto f = feature_config(c);
  EXPECT_EQ(f.n_mels, 80);
  EXPECT_EQ(f.n_fft, 512);
  EXPECT_FALSE(mask_policy(c).has_value());
  const auto e = encoder_config(c, 6, 1);
  EXPECT_EQ(e.in_channels, 2u);
  EXPECT_EQ(e.n_layers, 4u);
  EXPECT_EQ(optimizer_config(c, "ft", 1).kind, OptimizerKind::sgd);
  EXPECT_EQ(optimizer_config(c, "opt", 1).kind, OptimizerKind::adam);
  EXPECT_EQ(transfer_plan(c).finetune_bottom_k, 3u);
  EXPECT_EQ(vc_config(c, 1).context_frames, 4u);
  EXPECT_EQ(probe_config(c, 1).n_steps, 200u);
}

TEST(Config, UnknownKeyRejected) {
  ExperimentConfig c;
  EXPECT_THROW(c.set("feat.n_mel", "40"), ConfigError);
  EXPECT_THROW(c.set_assignment("no_equals_sign"), ConfigError);
  EXPECT_THROW((void)c.str("nope"), ConfigError);
}

TEST(Config, FileThenOverridesFlagsWin) {
  wt::ScratchDir dir("config");
  const auto path = dir.path() / "exp.cfg";
  std::ofstream(path) << "# toy run\nfeat.n_mels = 40\n\nenc.extractor=freq_divided  # trailing comment\nopt.lr = 0.5\n";
  ExperimentConfig c;
  c.load_file(path);
  c.set_assignment("opt.lr=0.25");
  EXPECT_EQ(c.integer("feat.n_mels"), 40);
  EXPECT_EQ(c.str("enc.extractor"), "freq_divided");
  EXPECT_DOUBLE_EQ(c.real("opt.lr"), 0.25);
}

TEST(Config, FileErrorsCarryLineNumbers) {
  wt::ScratchDir dir("config_bad");
  const auto path = dir.path() / "bad.cfg";
  std::ofstream(path) << "feat.n_mels = 40\nbogus.key = 1\n";
  ExperimentConfig c;
  try {
    c.load_file(path);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
  EXPECT_THROW(c.load_file(dir.path() / "missing.cfg"), ConfigError);
}

TEST(Config, TypedAccessorsValidate) {
  ExperimentConfig c;
  c.set("feat.n_mels", "eighty");
  EXPECT_THROW(feature_config(c), ConfigError);
  c.set("feat.n_mels", "80");
  c.set("opt.steps", "-3");
  EXPECT_THROW(optimizer_config(c, "opt", 1), ConfigError);
  c.set("opt.steps", "10");
  c.set("feat.add_delta", "maybe");
  EXPECT_THROW((void)c.flag("feat.add_delta"), ConfigError);
  c.set("feat.add_delta", "no");
  EXPECT_FALSE(c.flag("feat.add_delta"));
  c.set("enc.channels", "64");
  EXPECT_THROW((void)c.pair("enc.channels"), ConfigError);
  c.set("opt.lr", "0.1x");
  EXPECT_THROW((void)c.real("opt.lr"), ConfigError);
}

TEST(Config, ModuleValidationPropagates) {
  ExperimentConfig c;
  c.set("aug.enabled", "true");
  c.set("aug.F2", "90");
  EXPECT_THROW(mask_policy(c), ConfigError);
  c.set("aug.F2", "27");
  EXPECT_TRUE(mask_policy(c).has_value());
  c.set("probe.r", "0");
  EXPECT_THROW(probe_config(c, 1), ConfigError);
  c.set("enc.extractor", "freq_divided");
  c.set("enc.low_channels", "16,16");
  c.set("enc.high_channels", "16,16");
  EXPECT_THROW(encoder_config(c, 6, 1), ConfigError);
}

TEST(Config, ResolvedDumpRoundTrips) {
  wt::ScratchDir dir("config_dump");
  ExperimentConfig a;
  a.set("enc.units", "32");
  a.set("decode.lm_weight", "0.5");
  {
    std::ofstream out(dir.path() / "resolved.cfg");
    a.write(out);
  }
  ExperimentConfig b;
  b.load_file(dir.path() / "resolved.cfg");
  for (const auto& [k, e] : a.entries()) EXPECT_EQ(b.str(k), e.value) << k;
  std::ostringstream help;
  a.write_help(help);
  EXPECT_NE(help.str().find("enc.units (default 512)"), std::string::npos);
}
