#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "speedyfeed/errors.hpp"
#include "speedyfeed/pipeline.hpp"
#include "test_fixtures.hpp"

namespace speedyfeed::pipeline {
namespace {

using ad::Tensor;
using testing::RandomInstance;
using testing::RandomStore;
using testing::TinyModel;

TEST(LookupRate, Schedule) {
  EXPECT_EQ(LookupRate(0, 2e-3), 0.0);
  EXPECT_NEAR(LookupRate(1000, 2e-3), 0.8646647167633873, 1e-15);
  double prev = 0.0;
  for (std::uint64_t t = 0; t < 20000; t += 97) {
    const double p = LookupRate(t, 2e-3);
    EXPECT_GE(p, prev);
    EXPECT_LE(p, 1.0);
    prev = p;
  }
  EXPECT_GT(LookupRate(20000, 2e-3), 1.0 - 1e-15);
}

TEST(GatherMerge, SharedNewsCountedOnce) {
  const std::vector<std::vector<std::string>> slots = {{"a", "shared"}, {"shared", "b"}};
  const MergedSet m = GatherMerge(slots);
  EXPECT_EQ(m.ids, (std::vector<std::string>{"a", "shared", "b"}));
  EXPECT_EQ(m.refs[1].size(), 2u);
  EXPECT_EQ(m.num_slots, 4u);
}

TEST(GatherMerge, PaddingOnly) {
  const std::vector<std::vector<std::string>> slots = {{"PAD", "PAD"}, {"PAD"}};
  const MergedSet m = GatherMerge(slots);
  EXPECT_TRUE(m.ids.empty());
  EXPECT_EQ(m.num_slots, 0u);
}

TEST(GatherMerge, RandomBatchMatchesSetUnion) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<std::string>> slots(rng.UniformInt(1, 6));
    std::set<std::string> expected;
    std::size_t valid = 0;
    for (auto& s : slots) {
      const auto n = rng.UniformInt(0, 10);
      for (std::int64_t i = 0; i < n; ++i) {
        std::string id = rng.Bernoulli(0.2) ? "PAD" : "n" + std::to_string(rng.UniformInt(15));
        if (id != "PAD") {
          expected.insert(id);
          ++valid;
        }
        s.push_back(id);
      }
    }
    const MergedSet m = GatherMerge(slots);
    EXPECT_EQ(std::set<std::string>(m.ids.begin(), m.ids.end()), expected);
    EXPECT_EQ(m.ids.size(), expected.size());
    std::size_t covered = 0;
    for (std::size_t k = 0; k < m.ids.size(); ++k) {
      for (const auto& ref : m.refs[k]) {
        EXPECT_EQ(slots[ref.instance][ref.slot], m.ids[k]);
        ++covered;
      }
    }
    EXPECT_EQ(covered, valid);
  }
}

MergedSet OneIdSet(const std::string& id) {
  const std::vector<std::vector<std::string>> slots = {{id}};
  return GatherMerge(slots);
}

TEST(PartitionByCache, DisabledAndColdStart) {
  EmbeddingCache cache;
  const std::vector<double> v = {1.0, 2.0};
  cache.Write("x", v, 5);
  Rng rng(1);
  CacheConfig off;
  off.gamma = 0;
  const auto a = PartitionByCache(OneIdSet("x"), cache, 5, off, rng);
  EXPECT_TRUE(a.hits.empty());
  EXPECT_FALSE(a.lookup_attempted);
  CacheConfig on;
  cache.Write("x", v, 0);
  const auto b = PartitionByCache(OneIdSet("x"), cache, 0, on, rng);
  EXPECT_TRUE(b.hits.empty());
  EXPECT_FALSE(b.lookup_attempted);
}

TEST(PartitionByCache, ExpirationBoundary) {
  CacheConfig cfg;
  cfg.beta = 100.0;  // p_t == 1 for t >= 1.
  cfg.gamma = 20;
  Rng rng(2);
  EmbeddingCache cache;
  const std::vector<double> v = {0.5};
  cache.Write("old", v, 100 - 21);
  cache.Write("edge", v, 100 - 20);
  const std::vector<std::vector<std::string>> slots = {{"old", "edge", "new"}};
  const auto part = PartitionByCache(GatherMerge(slots), cache, 100, cfg, rng);
  EXPECT_TRUE(part.lookup_attempted);
  EXPECT_EQ(part.hits, std::vector<std::size_t>{1});
  EXPECT_EQ(part.misses, (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(part.hit_vectors[0], v);
}

TEST(EmbeddingCache, RefreshAndSweep) {
  EmbeddingCache cache;
  cache.Write("a", std::vector<double>{1.0}, 3);
  cache.Write("a", std::vector<double>{2.0}, 7);
  cache.Write("b", std::vector<double>{3.0}, 7);
  EXPECT_EQ(cache.size(), 2u);
  const auto hit = cache.LookupFresh("a", 7, 20);
  ASSERT_TRUE(hit.has_value());
  EXPECT_EQ(hit->step, 7u);
  EXPECT_EQ(hit->vector, std::vector<double>{2.0});
  EXPECT_FALSE(cache.LookupFresh("a", 28, 20).has_value());
  EXPECT_EQ(cache.Sweep(28, 20), 2u);
  EXPECT_EQ(cache.size(), 0u);
}

TEST(PartitionByCache, ScheduleConformance) {
  CacheConfig cfg;
  Rng rng(99);
  EmbeddingCache cache;
  const MergedSet m = OneIdSet("x");
  const std::uint64_t window = 500;
  for (std::uint64_t start = 0; start < 10000; start += window) {
    std::size_t attempts = 0;
    double expected = 0.0, variance = 0.0;
    for (std::uint64_t t = start; t < start + window; ++t) {
      attempts += PartitionByCache(m, cache, t, cfg, rng).lookup_attempted ? 1 : 0;
      const double p = LookupRate(t, cfg.beta);
      expected += p;
      variance += p * (1.0 - p);
    }
    EXPECT_LE(std::abs(attempts - expected), 3.0 * std::sqrt(variance) + 1e-9)
        << "window starting at " << start;
  }
}

double SteadyHitRate(std::uint64_t gamma, std::uint64_t seed) {
  CacheConfig cfg;
  cfg.gamma = gamma;
  cfg.seed = seed;
  Rng stream(seed + 1000), rng(cfg.seed);
  std::vector<double> weights(2000);
  for (std::size_t r = 0; r < weights.size(); ++r) weights[r] = std::pow(r + 1.0, -1.1);
  const DiscreteSampler sampler(weights);
  EmbeddingCache cache;
  std::size_t hits = 0, merged_total = 0;
  const std::vector<double> v = {0.0};
  for (std::uint64_t t = 0; t < 4000; ++t) {
    std::vector<std::vector<std::string>> slots(1);
    for (int i = 0; i < 50; ++i) slots[0].push_back(std::to_string(sampler.Sample(stream)));
    const MergedSet m = GatherMerge(slots);
    const auto part = PartitionByCache(m, cache, t, cfg, rng);
    for (std::size_t k : part.misses) cache.Write(m.ids[k], v, t);
    if (t >= 3000) {
      hits += part.hits.size();
      merged_total += m.ids.size();
    }
  }
  return static_cast<double>(hits) / merged_total;
}

TEST(PartitionByCache, LongerExpirationHitsMore) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const double h20 = SteadyHitRate(20, seed), h5 = SteadyHitRate(5, seed);
    EXPECT_GT(h20, h5);
    EXPECT_GT(h5, 0.0);
  }
}

TEST(Dispatch, DuplicatesShareAndPaddingIsZero) {
  const std::vector<std::vector<std::string>> slots = {{"a", "PAD", "b"}, {"b", "a"}};
  const MergedSet m = GatherMerge(slots);
  const Tensor table = Tensor::FromData({2, 2}, {1.0, 2.0, 3.0, 4.0});
  const std::vector<int> rows = {0, 1};
  const std::vector<std::size_t> counts = {3, 2};
  const auto blocks = Dispatch(m, table, rows, counts);
  EXPECT_EQ(blocks[0].at(0, 1), 2.0);
  EXPECT_EQ(blocks[0].at(1, 0), 0.0);
  EXPECT_EQ(blocks[0].at(1, 1), 0.0);
  EXPECT_EQ(blocks[0].at(2, 0), blocks[1].at(0, 0));
  EXPECT_EQ(blocks[1].at(1, 1), 2.0);
  const std::vector<int> missing = {0, -1};
  EXPECT_THROW(Dispatch(m, table, missing, counts), InternalError);
}

TEST(Dispatch, MatchesPerPositionEncodingBitExactly) {
  Rng rng(4);
  TinyModel tm(5);
  const NewsStore store = RandomStore(20, rng);
  MiniBatch batch;
  for (int u = 0; u < 4; ++u) batch.instances.push_back(RandomInstance("u" + std::to_string(u), store, 6, 1, rng));
  const MergedSet m = GatherMerge(batch);
  std::vector<const text::RefinedNews*> news;
  std::vector<int> rows;
  for (std::size_t k = 0; k < m.ids.size(); ++k) {
    news.push_back(&store.Get(m.ids[k]));
    rows.push_back(static_cast<int>(k));
  }
  const Tensor table = tm.encoder->EncodeBatch(news);
  std::vector<std::size_t> counts;
  for (const auto& inst : batch.instances) counts.push_back(InstanceSlots(inst).size());
  const auto blocks = Dispatch(m, table, rows, counts);
  for (std::size_t i = 0; i < batch.instances.size(); ++i) {
    const auto slots = InstanceSlots(batch.instances[i]);
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const text::RefinedNews* one[] = {&store.Get(slots[s])};
      const Tensor e = tm.encoder->EncodeBatch(one);
      for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(blocks[i].at(s, c), e[c]);
    }
  }
}

std::vector<std::vector<double>> Grads(const ad::ParameterSet& params) {
  std::vector<std::vector<double>> g;
  for (const auto& p : params.entries()) g.push_back(p.tensor.grad());
  return g;
}

TEST(Pipeline, DisabledCacheEqualsCacheFreeLoss) {
  Rng rng(6);
  TinyModel tm(7);
  const NewsStore store = RandomStore(25, rng);
  MiniBatch batch;
  for (int u = 0; u < 5; ++u) batch.instances.push_back(RandomInstance("u" + std::to_string(u), store, 7, 1, rng));
  PipelineConfig cfg;
  cfg.cache.gamma = 0;
  Pipeline p(*tm.encoder, *tm.user, store, cfg);
  for (std::uint64_t step = 0; step < 3; ++step) {
    const StepStats s = p.TrainingStep(batch, step);
    EXPECT_EQ(s.loss, p.EvaluateLoss(batch));
    EXPECT_EQ(s.hits, 0u);
    EXPECT_EQ(s.invocations, s.merged);
  }
  EXPECT_EQ(p.cache().size(), 0u);
}

TEST(Pipeline, ZeroInvocationsWhenEverythingCached) {
  Rng rng(8);
  TinyModel tm(9);
  const NewsStore store = RandomStore(25, rng);
  MiniBatch batch;
  for (int u = 0; u < 3; ++u) batch.instances.push_back(RandomInstance("u" + std::to_string(u), store, 5, 1, rng));
  PipelineConfig cfg;
  cfg.cache.beta = 100.0;
  Pipeline p(*tm.encoder, *tm.user, store, cfg);
  const StepStats first = p.TrainingStep(batch, 1);
  EXPECT_EQ(first.hits, 0u);
  tm.params.ZeroGrad();
  const StepStats second = p.TrainingStep(batch, 2);
  EXPECT_TRUE(second.lookup_attempted);
  EXPECT_EQ(second.invocations, 0u);
  EXPECT_EQ(second.hits, second.merged);
  EXPECT_EQ(second.hits + second.invocations, second.merged);
  // Same parameters, so the cached embeddings reproduce the loss.
  EXPECT_NEAR(second.loss, first.loss, 1e-12);
  // No encoder parameter receives gradient from cached embeddings.
  for (const auto& e : tm.params.entries()) {
    if (e.group != "encoder") continue;
    for (double g : e.tensor.grad()) EXPECT_EQ(g, 0.0);
  }
}

TEST(Pipeline, MatchesNaivePerClickTraining) {
  Rng rng(10);
  TinyModel tm(11);
  const NewsStore store = RandomStore(30, rng);
  MiniBatch batch;
  for (int u = 0; u < 3; ++u) batch.instances.push_back(RandomInstance("u" + std::to_string(u), store, 6, 1, rng));
  PipelineConfig cfg;
  cfg.cache.gamma = 0;
  Pipeline p(*tm.encoder, *tm.user, store, cfg);
  tm.params.ZeroGrad();
  const double joint = p.TrainingStep(batch, 0).loss;
  const auto g_joint = Grads(tm.params);

  tm.params.ZeroGrad();
  double naive = 0.0;
  std::size_t invocations = 0;
  for (const auto& inst : batch.instances) {
    for (std::size_t t = 1; t < inst.history.size(); ++t) {
      const NaiveResult r = NaiveTrainingStep(inst, t, *tm.encoder, *tm.user, store);
      EXPECT_EQ(r.invocations, t + 2);
      naive += r.loss;
      invocations += r.invocations;
    }
  }
  EXPECT_NEAR(joint, naive, 1e-10);
  EXPECT_EQ(invocations, 3 * NaiveInvocations(6, 1));
  const auto g_naive = Grads(tm.params);
  for (std::size_t i = 0; i < g_joint.size(); ++i)
    for (std::size_t k = 0; k < g_joint[i].size(); ++k)
      EXPECT_NEAR(g_joint[i][k], g_naive[i][k], 1e-8) << tm.params.entries()[i].name;
}

TEST(Invocations, ClosedForms) {
  EXPECT_EQ(NaiveInvocations(35, 1), 34u * 39u / 2u);
  EXPECT_EQ(PipelineInvocationBound(35, 1), 69u);
  EXPECT_EQ(NaiveInvocations(2, 1), 3u);
}

TEST(StepStatsJson, Fields) {
  StepStats s;
  s.step = 4;
  s.merged = 10;
  s.hits = 3;
  s.invocations = 7;
  s.loss = 1.5;
  const std::string j = StepStatsJson(s);
  EXPECT_NE(j.find("\"step\":4"), std::string::npos);
  EXPECT_NE(j.find("\"invocations\":7"), std::string::npos);
  EXPECT_NE(j.find("\"loss\":1.5"), std::string::npos);
}

}  // namespace
}  // namespace speedyfeed::pipeline
