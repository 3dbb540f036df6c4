#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mtd/config.hpp"
#include "support.hpp"

using namespace mtd;

namespace {

const char* kRunningExample =
    R"j({"id": "r1", "token": ["The", "implant", "is", "placed", "into", "the", "jaw", "bone"], )j"
    R"j("subj_start": 1, "subj_end": 1, "obj_start": 6, "obj_end": 7, "relation": "Entity-Destination(e1,e2)"})j";

LabelSet semeval_like() { return LabelSet({"Entity-Destination(e1,e2)", "Other"}, "Other"); }

// A labeled pool with `per_class[c]` instances of class c, ids in order.
std::vector<Instance> pool_of(const std::vector<std::size_t>& per_class) {
  std::vector<Instance> out;
  std::size_t id = 0;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    for (std::size_t k = 0; k < per_class[c]; ++k) {
      out.push_back({"i" + std::to_string(id++), {"a", "b"}, {0, 1}, {1, 2}, c});
    }
  }
  return out;
}

std::map<std::size_t, std::size_t> class_counts(const std::vector<Instance>& v, const OracleLabels* oracle = nullptr) {
  std::map<std::size_t, std::size_t> m;
  for (const auto& i : v) ++m[i.relation ? *i.relation : *oracle->oracle(i.id)];
  return m;
}

double full_supervision_f1(double noise, std::uint64_t seed) {
  SyntheticParams p;
  p.num_classes = 6;
  p.instances_per_class = 150;
  p.vocab_size = 200;
  p.noise_rate = noise;
  p.seed = seed;
  const auto corpus = generate_synthetic(p);
  const auto parts = partition_corpus(corpus.instances, corpus.labels.size(), 0.0, 0.3, seed);
  const std::size_t dim = 1 << 16;
  std::vector<TrainSample> train_set;
  for (const auto& i : parts.train) train_set.push_back({featurize(i, dim), *i.relation, {}});
  ModelConfig mc;
  mc.dim = dim;
  const Model m = train_supervised(train_set, corpus.labels.size(), mc, seed);
  EvalSet test;
  for (const auto& i : parts.test) {
    test.ids.push_back(i.id);
    test.features.push_back(featurize(i, dim));
    test.gold.push_back(*i.relation);
  }
  return evaluate(m, test, corpus.labels).f1;
}

}  // namespace

TEST(LoadJsonl, RunningExample) {
  std::istringstream in(std::string(kRunningExample) + "\n");
  const auto data = read_jsonl(in, semeval_like());
  ASSERT_EQ(data.size(), 1u);
  EXPECT_EQ(data[0].id, "r1");
  EXPECT_EQ(data[0].subj.start, 1u);
  EXPECT_EQ(data[0].subj.end, 2u);
  EXPECT_EQ(data[0].obj.start, 6u);
  EXPECT_EQ(data[0].obj.end, 8u);
  EXPECT_EQ(data[0].relation, 0u);
}

TEST(LoadJsonl, EmptyInput) {
  std::istringstream in("");
  EXPECT_TRUE(read_jsonl(in, semeval_like()).empty());
  const auto path = std::filesystem::temp_directory_path() / "mtd_empty.jsonl";
  std::ofstream(path).close();
  EXPECT_TRUE(load_jsonl(path, semeval_like()).empty());
  std::filesystem::remove(path);
}

TEST(LoadJsonl, UnknownLabelNamesTheString) {
  std::string line = kRunningExample;
  line.replace(line.find("Entity-Destination(e1,e2)"), 25, "not-a-label");
  std::istringstream in(line);
  try {
    read_jsonl(in, semeval_like());
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_NE(std::string(e.what()).find("not-a-label"), std::string::npos);
  }
}

TEST(LoadJsonl, MalformedLineReportsLineNumber) {
  std::istringstream in(std::string(kRunningExample) + "\n\n{\"id\": 3, \"token\": [\n");
  try {
    read_jsonl(in, semeval_like());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  std::istringstream missing(R"({"id": "x", "token": ["a"]})");
  EXPECT_THROW(read_jsonl(missing, semeval_like()), ParseError);
  std::istringstream overlap(
      R"({"id": "x", "token": ["a","b"], "subj_start": 0, "subj_end": 1, "obj_start": 1, "obj_end": 1})");
  EXPECT_THROW(read_jsonl(overlap, semeval_like()), ParseError);
}

TEST(LoadJsonl, ReserializeRoundTrip) {
  SyntheticParams p;
  p.num_classes = 4;
  p.instances_per_class = 20;
  p.vocab_size = 80;
  p.no_relation_share = 0.3;
  const auto corpus = generate_synthetic(p);
  std::stringstream buf;
  write_jsonl(buf, corpus.instances, corpus.labels);
  const auto back = read_jsonl(buf, corpus.labels);
  ASSERT_EQ(back.size(), corpus.instances.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].id, corpus.instances[i].id);
    EXPECT_EQ(back[i].tokens, corpus.instances[i].tokens);
    EXPECT_EQ(back[i].subj, corpus.instances[i].subj);
    EXPECT_EQ(back[i].obj, corpus.instances[i].obj);
    EXPECT_EQ(back[i].relation, corpus.instances[i].relation);
  }
}

TEST(LabelSetTest, Validation) {
  EXPECT_THROW(LabelSet({"a"}), InvalidArgument);
  EXPECT_THROW(LabelSet({"a", "a"}), InvalidArgument);
  EXPECT_THROW(LabelSet({"a", "b"}, "c"), InvalidArgument);
  const LabelSet l({"a", "b"}, "b");
  EXPECT_EQ(l.no_relation_index(), 1u);
  const LabelSet back = LabelSet::from_json(l.to_json());
  EXPECT_EQ(back.names(), l.names());
  EXPECT_EQ(back.no_relation_index(), 1u);
}

TEST(MakeSplit, FullFractionTakesEverything) {
  const auto pool = pool_of({7, 3, 11});
  const auto s = make_split(pool, {}, {}, 3, 1.0, 0.0, 5);
  EXPECT_EQ(s.labeled.size(), pool.size());
  EXPECT_TRUE(s.unlabeled.empty());
}

TEST(MakeSplit, Deterministic) {
  const auto pool = pool_of({40, 25, 13, 9});
  const auto a = make_split(pool, {}, {}, 4, 0.2, 0.5, 9);
  const auto b = make_split(pool, {}, {}, 4, 0.2, 0.5, 9);
  const auto c = make_split(pool, {}, {}, 4, 0.2, 0.5, 10);
  auto ids = [](const std::vector<Instance>& v) {
    std::vector<std::string> out;
    for (const auto& i : v) out.push_back(i.id);
    return out;
  };
  EXPECT_EQ(ids(a.labeled), ids(b.labeled));
  EXPECT_EQ(ids(a.unlabeled), ids(b.unlabeled));
  EXPECT_NE(ids(a.labeled), ids(c.labeled));
}

TEST(MakeSplit, SemEvalSizedCounts) {
  // 7199 training instances over 19 classes, unevenly sized.
  std::vector<std::size_t> sizes;
  std::size_t total = 0;
  for (std::size_t c = 0; c < 18; ++c) {
    sizes.push_back(200 + 20 * c);
    total += sizes.back();
  }
  sizes.push_back(7199 - total);
  const auto pool = pool_of(sizes);
  ASSERT_EQ(pool.size(), 7199u);
  const auto s = make_split(pool, {}, {}, 19, 0.10, 0.50, 1);
  EXPECT_EQ(s.labeled.size(), 720u);
  EXPECT_TRUE(s.unlabeled.size() == 3599u || s.unlabeled.size() == 3600u) << s.unlabeled.size();
}

TEST(MakeSplitProperty, StratifiedDisjointHidden) {
  Rng rng(31);
  for (int c = 0; c < 40; ++c) {
    const std::size_t R = 2 + rng.below(20);
    std::vector<std::size_t> sizes(R);
    for (auto& s : sizes) s = rng.below(80);
    sizes[0] += 1;
    const auto pool = pool_of(sizes);
    const double lf = rng.uniform(0.01, 0.4);
    const double uf = rng.uniform(0.0, 1.0 - lf);
    std::vector<Instance> dev{{"dev0", {"a", "b"}, {0, 1}, {1, 2}, 0}};
    const auto s = make_split(pool, dev, {}, R, lf, uf, rng.next());
    EXPECT_EQ(s.labeled.size(), round_count(lf, pool.size()));

    const auto lab = class_counts(s.labeled);
    const auto unl = class_counts(s.unlabeled, &s.oracle_labels);
    for (std::size_t k = 0; k < R; ++k) {
      const double share = lf * static_cast<double>(sizes[k]);
      const double got = lab.count(k) ? static_cast<double>(lab.at(k)) : 0.0;
      ASSERT_LE(std::abs(got - share), 1.0 + 1e-9) << "class " << k;
      const double ushare = uf * static_cast<double>(sizes[k]);
      const double ugot = unl.count(k) ? static_cast<double>(unl.at(k)) : 0.0;
      ASSERT_LE(std::abs(ugot - ushare), 1.0 + 1e-9) << "class " << k;
    }
    std::set<std::string> ids;
    for (const auto* part : {&s.labeled, &s.unlabeled, &s.dev, &s.test}) {
      for (const auto& i : *part) ASSERT_TRUE(ids.insert(i.id).second);
    }
    for (const auto& i : s.unlabeled) {
      ASSERT_FALSE(i.relation.has_value());
      ASSERT_TRUE(s.oracle_labels.oracle(i.id).has_value());
    }
    for (const auto& i : s.labeled) ASSERT_TRUE(i.relation.has_value());
  }
}

TEST(MakeSplit, RejectsBadFractions) {
  const auto pool = pool_of({5, 5});
  EXPECT_THROW(make_split(pool, {}, {}, 2, 0.0, 0.5, 1), InvalidArgument);
  EXPECT_THROW(make_split(pool, {}, {}, 2, 0.6, 0.5, 1), InvalidArgument);
}

TEST(MakeSplit, RareClassWarnsInsteadOfFailing) {
  const auto pool = pool_of({100, 1});
  const auto s = make_split(pool, {}, {}, 2, 0.05, 0.5, 1);
  EXPECT_FALSE(s.warnings.empty());
}

TEST(ValidateStats, ProfileComparison) {
  std::vector<std::size_t> sizes(19, 0);
  sizes[18] = 1267;  // 17.6% of 7199
  std::size_t rest = 7199 - 1267;
  for (std::size_t c = 0; c < 18; ++c) sizes[c] = rest / 18 + (c < rest % 18 ? 1 : 0);
  const auto train = pool_of(sizes);
  std::vector<std::string> names;
  for (int c = 0; c < 18; ++c) names.push_back("r" + std::to_string(c));
  names.push_back("Other");
  const LabelSet labels(names, "Other");
  const auto dev = pool_of({800});
  const auto test = pool_of({2715});
  const auto ok = validate_stats(train, dev, test, labels, kSemEvalProfile);
  EXPECT_TRUE(ok.all_ok());
  EXPECT_NEAR(ok.no_relation_percent, 17.6, 0.1);

  const auto bad = validate_stats(train, dev, test, labels, kTacredProfile);
  EXPECT_FALSE(bad.all_ok());
  const auto plain = validate_stats(train, dev, test, labels);
  EXPECT_TRUE(plain.checks.empty());
}

TEST(Synthetic, ReportMatchesGeneratorParameters) {
  SyntheticParams p;
  p.num_classes = 5;
  p.instances_per_class = 40;
  p.vocab_size = 100;
  p.no_relation_share = 0.2;
  const auto corpus = generate_synthetic(p);
  const auto r = validate_stats(corpus.instances, {}, {}, corpus.labels);
  EXPECT_EQ(r.relations, 5u);
  EXPECT_EQ(r.train, 4 * 40 + 40u);  // 160 positives, share 0.2 -> 40 negatives
  EXPECT_NEAR(r.no_relation_percent, 20.0, 1e-9);
}

TEST(Synthetic, DeterministicAndSeeded) {
  SyntheticParams p;
  p.num_classes = 4;
  p.instances_per_class = 30;
  p.vocab_size = 80;
  p.seed = 3;
  std::stringstream a, b, c;
  auto x = generate_synthetic(p);
  write_jsonl(a, x.instances, x.labels);
  auto y = generate_synthetic(p);
  write_jsonl(b, y.instances, y.labels);
  EXPECT_EQ(a.str(), b.str());
  p.seed = 4;
  auto z = generate_synthetic(p);
  write_jsonl(c, z.instances, z.labels);
  EXPECT_NE(a.str(), c.str());
}

TEST(Synthetic, InvalidParameters) {
  SyntheticParams p;
  p.vocab_size = 20;
  try {
    generate_synthetic(p);
    FAIL();
  } catch (const InvalidArgument& e) {
    EXPECT_NE(std::string(e.what()).find("too small"), std::string::npos);
  }
  p = SyntheticParams{};
  p.noise_rate = 0.5;
  EXPECT_THROW(generate_synthetic(p), InvalidArgument);
  p = SyntheticParams{};
  p.num_classes = 1;
  EXPECT_THROW(generate_synthetic(p), InvalidArgument);
}

TEST(Synthetic, EveryInstanceCarriesTwoOwnTriggers) {
  SyntheticParams p;
  p.num_classes = 5;
  p.instances_per_class = 50;
  p.vocab_size = 100;
  p.noise_rate = 0.3;
  p.no_relation_share = 0.3;
  const auto corpus = generate_synthetic(p);
  for (const auto& inst : corpus.instances) {
    std::size_t own = 0;
    for (const auto& t : inst.tokens) {
      const std::size_t v = std::stoul(t.substr(1));
      if (v < p.num_classes * p.triggers_per_class && v / p.triggers_per_class == *inst.relation) ++own;
    }
    ASSERT_GE(own, 2u) << inst.id;
  }
}

TEST(Synthetic, NoiseFreeCorpusIsLearnable) {
  EXPECT_GE(full_supervision_f1(0.0, 1), 0.99);
}

TEST(Synthetic, NoiseLowersFullSupervisionF1) {
  for (std::uint64_t seed : {1, 2, 3}) {
    EXPECT_LT(full_supervision_f1(0.4, seed), full_supervision_f1(0.0, seed)) << "seed " << seed;
  }
}

TEST(PartitionCorpus, CoversInputOnce) {
  SyntheticParams p;
  p.num_classes = 4;
  p.instances_per_class = 50;
  p.vocab_size = 80;
  const auto corpus = generate_synthetic(p);
  const auto parts = partition_corpus(corpus.instances, 4, 0.1, 0.2, 3);
  EXPECT_EQ(parts.train.size() + parts.dev.size() + parts.test.size(), corpus.instances.size());
  EXPECT_EQ(parts.test.size(), 40u);
  EXPECT_EQ(parts.dev.size(), 20u);
  std::set<std::string> ids;
  for (const auto* part : {&parts.train, &parts.dev, &parts.test}) {
    for (const auto& i : *part) {
      ASSERT_TRUE(ids.insert(i.id).second);
      ASSERT_TRUE(i.relation.has_value());
    }
  }
}
