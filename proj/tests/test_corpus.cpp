#include <gtest/gtest.h>

#include <map>
#include <set>

#include "support.hpp"

using namespace whispr;

namespace {

UtteranceRecord rec(const std::string& id, const std::string& sid, Style style, const std::string& spk = "s0") {
  UtteranceRecord r;
  r.id = id;
  r.source = "/data/" + id + ".wav";
  r.transcript = {"a", "b"};
  r.speaker = spk;
  r.style = style;
  r.sentence_id = sid;
  return r;
}

Manifest sentences(std::size_t n, std::size_t renditions) {
  Manifest m;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t k = 0; k < renditions; ++k) {
      m.records.push_back(rec("u" + std::to_string(s) + "_" + std::to_string(k), "s" + std::to_string(s),
                              k % 2 ? Style::whisper : Style::normal, "spk" + std::to_string(k)));
    }
  }
  return m;
}

std::set<std::string> sentence_set(const Manifest& m) {
  std::set<std::string> s;
  for (const auto& r : m.records) s.insert(r.sentence_id);
  return s;
}

// Peak of the normalized autocorrelation in a +/-20% band around `lag`.
double harmonicity(const std::vector<double>& x, std::size_t lag) {
  auto ac = [&](std::size_t L) {
    double s = 0.0;
    for (std::size_t n = L; n < x.size(); ++n) s += x[n] * x[n - L];
    return s;
  };
  const double r0 = ac(0);
  double best = -1.0;
  for (std::size_t L = lag * 8 / 10; L <= lag * 12 / 10; ++L) best = std::max(best, ac(L) / r0);
  return best;
}

}  // namespace

TEST(Partition, FourHundredFiftySentences) {
  const Manifest m = sentences(450, 2);
  const auto p = partition_by_sentence(m, SplitSpec{400, 25, 25, 3});
  const auto a = sentence_set(p.train), b = sentence_set(p.dev), c = sentence_set(p.test);
  EXPECT_EQ(a.size(), 400u);
  EXPECT_EQ(b.size(), 25u);
  EXPECT_EQ(c.size(), 25u);
  for (const auto& s : b) EXPECT_FALSE(a.count(s) || c.count(s));
  for (const auto& s : c) EXPECT_FALSE(a.count(s));
}

TEST(Partition, DeterministicPerSeed) {
  const Manifest m = sentences(30, 1);
  const auto p1 = partition_by_sentence(m, SplitSpec{20, 5, 5, 9});
  const auto p2 = partition_by_sentence(m, SplitSpec{20, 5, 5, 9});
  EXPECT_EQ(p1.dev.records, p2.dev.records);
  EXPECT_EQ(p1.test.records, p2.test.records);
  const auto p3 = partition_by_sentence(m, SplitSpec{20, 5, 5, 10});
  EXPECT_NE(sentence_set(p1.dev), sentence_set(p3.dev));
}

TEST(Partition, KeepsAllRenditionsTogether) {
  const Manifest m = sentences(10, 3);
  const auto p = partition_by_sentence(m, SplitSpec{8, 1, 1, 1});
  EXPECT_EQ(p.train.size() + p.dev.size() + p.test.size(), 30u);
  EXPECT_EQ(p.train.size(), 24u);
  EXPECT_EQ(p.dev.size(), 3u);
  EXPECT_EQ(p.test.size(), 3u);
}

TEST(Partition, CountMismatchIsConfigError) {
  EXPECT_THROW(partition_by_sentence(sentences(10, 1), SplitSpec{8, 1, 2, 0}), ConfigError);
}

TEST(Mix, OversampleWhisperBalances) {
  Manifest normal, whisper;
  for (int i = 0; i < 100; ++i) normal.records.push_back(rec("n" + std::to_string(i), "s" + std::to_string(i), Style::normal));
  for (int i = 0; i < 5; ++i) whisper.records.push_back(rec("w" + std::to_string(i), "s" + std::to_string(i), Style::whisper));
  const auto res = build_training_mix(MixStrategy::oversample_whisper, {normal, whisper}, 4);
  std::size_t n = 0, w = 0;
  for (const auto& r : res.manifest.records) (r.style == Style::whisper ? w : n)++;
  EXPECT_EQ(n, 100u);
  EXPECT_GE(w, 100u);
  EXPECT_NO_THROW(res.manifest.validate());
}

TEST(Mix, WhisperOnlyOnNormalDataWarns) {
  const auto res = build_training_mix(MixStrategy::whisper_only, {sentences(5, 1)}, 0);
  EXPECT_TRUE(res.manifest.empty());
  ASSERT_EQ(res.warnings.size(), 1u);
}

TEST(Mix, RandomIsPermutation) {
  const Manifest m = sentences(20, 2);
  const auto res = build_training_mix(MixStrategy::mix_random, {m}, 5);
  std::multiset<std::string> a, b;
  for (const auto& r : m.records) a.insert(r.id);
  for (const auto& r : res.manifest.records) b.insert(r.id);
  EXPECT_EQ(a, b);
  EXPECT_NE(res.manifest.records, m.records);
}

TEST(Mix, UnknownNamesRejected) {
  EXPECT_THROW(parse_mix_strategy("balanced"), ConfigError);
  EXPECT_THROW(parse_style("shout"), ConfigError);
}

TEST(Manifest, RoundTripStoresRelativeSources) {
  wt::ScratchDir dir("manifest");
  Manifest m;
  auto r = rec("x1", "s1", Style::pseudo_whisper);
  r.source = (dir.path() / "feats" / "x1.wfe").string();
  m.records.push_back(r);
  save_manifest(dir.path() / "m.jsonl", m);
  std::ifstream in(dir.path() / "m.jsonl");
  std::string line;
  std::getline(in, line);
  EXPECT_NE(line.find("\"source\":\"feats/x1.wfe\""), std::string::npos) << line;
  const auto back = load_manifest(dir.path() / "m.jsonl");
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back.records[0], m.records[0]);
}

TEST(Manifest, DuplicateIdsRejected) {
  Manifest m;
  m.records.push_back(rec("a", "s", Style::normal));
  m.records.push_back(rec("a", "t", Style::normal));
  EXPECT_THROW(m.validate(), RuntimeError);
}

TEST(Manifest, MalformedLineReportsLineNumber) {
  wt::ScratchDir dir("badmanifest");
  {
    std::ofstream out(dir.path() / "m.jsonl");
    out << "{\"id\":\"a\",\"source\":\"a.wav\",\"transcript\":[\"a\"],\"style\":\"normal\",\"sentence_id\":\"s\"}\n";
    out << "{not json\n";
  }
  try {
    load_manifest(dir.path() / "m.jsonl");
    FAIL();
  } catch (const RuntimeError& e) {
    EXPECT_NE(std::string(e.what()).find(":2:"), std::string::npos) << e.what();
  }
}

TEST(ToyCorpus, CountsAndBalance) {
  const auto vocab = default_toy_vocab();
  ASSERT_EQ(vocab.size(), 5u);
  const auto c = synth_toy_corpus(10, vocab, 1, "/tmp/toy");
  EXPECT_EQ(c.manifest.size(), 20u);
  EXPECT_EQ(c.clips.size(), 20u);
  EXPECT_EQ(sentence_set(c.manifest).size(), 10u);
  std::map<Style, int> styles;
  for (const auto& r : c.manifest.records) styles[r.style]++;
  EXPECT_EQ(styles[Style::normal], 10);
  EXPECT_EQ(styles[Style::whisper], 10);
}

TEST(ToyCorpus, SeedDeterminesAudio) {
  const auto vocab = default_toy_vocab();
  const auto a = synth_toy_corpus(3, vocab, 42, "/tmp/toy"), b = synth_toy_corpus(3, vocab, 42, "/tmp/toy");
  for (std::size_t i = 0; i < a.clips.size(); ++i) EXPECT_EQ(a.clips[i].samples, b.clips[i].samples);
  const auto c = synth_toy_corpus(3, vocab, 43, "/tmp/toy");
  EXPECT_NE(a.clips[1].samples, c.clips[1].samples);
}

TEST(ToyCorpus, NormalIsVoicedWhisperIsNot) {
  const auto vocab = default_toy_vocab();
  const auto c = synth_toy_corpus(8, vocab, 7, "/tmp/toy");
  std::map<std::string, double> pitch;
  for (const auto& s : toy_speakers()) pitch[s.name] = s.pitch_hz;
  for (std::size_t i = 0; i < c.clips.size(); ++i) {
    const auto& r = c.manifest.records[i];
    const auto lag = static_cast<std::size_t>(std::lround(16000.0 / pitch.at(r.speaker)));
    const double h = harmonicity(c.clips[i].samples, lag);
    if (r.style == Style::normal) {
      EXPECT_GT(h, 0.5) << r.id;
    } else {
      EXPECT_LT(h, 0.2) << r.id;
    }
  }
}

TEST(ToyCorpus, WrittenFilesLoadBack) {
  wt::ScratchDir dir("toywrite");
  const auto vocab = default_toy_vocab();
  const auto c = synth_toy_corpus(2, vocab, 3, dir.path());
  write_toy_corpus(c, vocab, dir.path());
  const auto m = load_manifest(dir.path() / "manifest.jsonl");
  EXPECT_EQ(m.records, c.manifest.records);
  const auto v = Vocabulary::load(dir.path() / "vocab.txt");
  EXPECT_EQ(v.size(), 6u);
  const auto fm = load_record_features(m.records[0], FeatureConfig{});
  EXPECT_EQ(fm.dims(), 160u);
}
