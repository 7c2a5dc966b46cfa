#include <gtest/gtest.h>
#include <sys/wait.h>

#include <fstream>
#include <sstream>

#include "support.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Run whispr_cli(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string(WHISPR_CLI_PATH) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

// Small model and corpus settings shared by the end-to-end tests.
const char* kTiny =
    " --set feat.n_mels=16 --set enc.channels=4,8 --set enc.layers=2 --set enc.units=6"
    " --set opt.steps=3 --set opt.batch=2 --set ft.steps=3 --set ft.batch=2 --set train.log_every=1";

class CliCorpus : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new wt::ScratchDir("cli_corpus");
    const auto d = dir_->path().string();
    auto r = whispr_cli("synth-data --seed 3 --set synth.sentences=4 --out " + d + "/raw", dir_->path());
    ASSERT_EQ(r.code, 0) << r.err;
    r = whispr_cli("featurize --set feat.n_mels=16 --manifest " + d + "/raw/manifest.jsonl --out " + d + "/feat",
                   dir_->path());
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }
  static std::string path(const std::string& rel) { return (dir_->path() / rel).string(); }
  static wt::ScratchDir* dir_;
};

wt::ScratchDir* CliCorpus::dir_ = nullptr;

}  // namespace

TEST(Cli, ScoreIdenticalFilesIsZero) {
  wt::ScratchDir dir("cli_score");
  std::ofstream(dir.path() / "r.txt") << "u1\ta e i\nu2\to u\n";
  std::ofstream(dir.path() / "h.txt") << "u1\ta e i\nu2\to u\n";
  const auto r = whispr_cli("score --ref " + (dir.path() / "r.txt").string() + " --hyp " +
                                (dir.path() / "h.txt").string() + " --csv " + (dir.path() / "s.csv").string(),
                            dir.path());
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("0.00% CER"), std::string::npos) << r.out;
  EXPECT_EQ(slurp(dir.path() / "s.csv"), "id,ref_len,sub,ins,del,err\nu1,3,0,0,0,0\nu2,2,0,0,0,0\nTOTAL,5,0,0,0,0\n");
}

TEST(Cli, ScoreCountsErrors) {
  wt::ScratchDir dir("cli_score2");
  std::ofstream(dir.path() / "r.txt") << "u1\taei\n";
  std::ofstream(dir.path() / "h.txt") << "u1\tai\n";
  const auto r = whispr_cli("score --tokenizer char --ref " + (dir.path() / "r.txt").string() + " --hyp " +
                                (dir.path() / "h.txt").string(),
                            dir.path());
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("33.33% CER [ 1 / 3, 0 ins, 1 del, 0 sub ]"), std::string::npos) << r.out;
}

TEST(Cli, UsageErrorsExitTwo) {
  wt::ScratchDir dir("cli_usage");
  EXPECT_EQ(whispr_cli("", dir.path()).code, 2);
  EXPECT_EQ(whispr_cli("no-such-command", dir.path()).code, 2);
  EXPECT_EQ(whispr_cli("synth-data --out " + dir.path().string(), dir.path()).code, 2);  // --seed missing
  EXPECT_EQ(whispr_cli("synth-data --seed 1 --set bogus=1 --out " + dir.path().string(), dir.path()).code, 2);
  EXPECT_EQ(whispr_cli("synth-data --seed 1 --config " + (dir.path() / "none.cfg").string() + " --out " +
                           dir.path().string(),
                       dir.path())
                .code,
            2);
  const auto r = whispr_cli("synth-data --seed 1 --set feat.n_mels=x --out " + dir.path().string(), dir.path());
  EXPECT_EQ(r.code, 0) << "synth-data does not read feat.n_mels";
}

TEST(Cli, RuntimeErrorsExitOne) {
  wt::ScratchDir dir("cli_runtime");
  const auto r = whispr_cli("score --ref " + (dir.path() / "missing.txt").string() + " --hyp " +
                                (dir.path() / "missing.txt").string(),
                            dir.path());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
}

TEST(Cli, HelpListsFlagsWithDefaults) {
  wt::ScratchDir dir("cli_help");
  for (const char* sub : {"synth-data", "featurize", "partition", "augment-stats", "train", "finetune", "probe",
                          "vc-train", "vc-apply", "gen-pseudo", "lm-train", "decode"}) {
    const auto r = whispr_cli(std::string(sub) + " --help", dir.path());
    EXPECT_EQ(r.code, 0) << sub;
    EXPECT_NE(r.out.find("--threads"), std::string::npos) << sub;
    EXPECT_NE(r.out.find("--out"), std::string::npos) << sub;
    EXPECT_NE(r.out.find("--set"), std::string::npos) << sub;
  }
  const auto score = whispr_cli("score --help", dir.path());
  EXPECT_EQ(score.code, 0);
  EXPECT_NE(score.out.find("--tokenizer TEXT [space]"), std::string::npos) << score.out;
  const auto top = whispr_cli("--help", dir.path());
  EXPECT_NE(top.out.find("enc.units (default 512)"), std::string::npos);
}

TEST_F(CliCorpus, TrainIsDeterministicAndFinetuneZeroIsNoOp) {
  const std::string common = std::string(kTiny) + " --vocab " + path("raw/vocab.txt");
  const std::string train = "train --seed 5" + common + " --train " + path("feat/manifest.jsonl");
  auto r = whispr_cli(train + " --out " + path("m1"), dir_->path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("artifact: "), std::string::npos);
  r = whispr_cli(train + " --threads 2 --out " + path("m2"), dir_->path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(path("m1/model.wck")), slurp(path("m2/model.wck")));
  EXPECT_EQ(slurp(path("m1/resolved.cfg")), slurp(path("m2/resolved.cfg")));
  EXPECT_EQ(slurp(path("m1/train_log.csv")).substr(0, 31), "step,mean_loss,dev_cer,wall_ms\n");

  r = whispr_cli("finetune --seed 6 --bottom-k 0" + common + " --init " + path("m1/model.wck") + " --train " +
                     path("feat/manifest.jsonl") + " --out " + path("ft0"),
                 dir_->path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("no-op"), std::string::npos);
  EXPECT_EQ(slurp(path("ft0/model.wck")), slurp(path("m1/model.wck")));

  r = whispr_cli("finetune --seed 6 --bottom-k 2" + common + " --init " + path("m1/model.wck") + " --train " +
                     path("feat/manifest.jsonl") + " --style whisper --out " + path("ft2"),
                 dir_->path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(slurp(path("ft2/model.wck")), slurp(path("m1/model.wck")));

  r = whispr_cli("decode --set decode.lm_mode=none" + common + " --model " + path("ft2/model.wck") + " --manifest " +
                     path("feat/manifest.jsonl") + " --out " + path("dec"),
                 dir_->path());
  ASSERT_EQ(r.code, 0) << r.err;
  r = whispr_cli("score --ref " + path("dec/ref.txt") + " --hyp " + path("dec/hyp.txt"), dir_->path());
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("% CER"), std::string::npos);
}

TEST_F(CliCorpus, PartitionAndPseudoGeneration) {
  auto r = whispr_cli("partition --seed 2 --set split.train=2 --set split.dev=1 --set split.test=1 --manifest " +
                          path("feat/manifest.jsonl") + " --out " + path("split"),
                      dir_->path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto train = whispr::load_manifest(path("split/train.jsonl"));
  EXPECT_EQ(train.size(), 4u);  // two sentences, each normal + whisper

  r = whispr_cli("vc-train --seed 4 --set feat.n_mels=16 --set vc.hidden_units=8 --set vc.steps=5 --manifest " +
                     path("feat/manifest.jsonl") + " --out " + path("vc"),
                 dir_->path());
  ASSERT_EQ(r.code, 0) << r.err;
  r = whispr_cli("gen-pseudo --set feat.n_mels=16 --model " + path("vc/vc.wck") + " --manifest " +
                     path("feat/manifest.jsonl") + " --out " + path("pw"),
                 dir_->path());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto pw = whispr::load_manifest(path("pw/manifest.jsonl"));
  EXPECT_EQ(pw.size(), 4u);
  for (const auto& rec : pw.records) {
    EXPECT_EQ(rec.style, whispr::Style::pseudo_whisper);
    EXPECT_TRUE(rec.id.ends_with("-pw"));
  }
}
