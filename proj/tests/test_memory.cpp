#include <gtest/gtest.h>

#include <algorithm>

#include "samdwich/memory.hpp"
#include "support/oracles.hpp"

namespace samdwich {
namespace {

MemoryEntry entry(FrameIndex f, std::size_t cells = 1, std::size_t dim = 1) {
  return {f, Tensor::filled({cells, dim}, static_cast<double>(f)), true};
}

struct VideoFixture {
  ModelConfig cfg = oracle::tiny_model();
  FrozenContext frozen = make_frozen_context(cfg);
  FeaturePyramid pyr;
  TextLayers text;
  ModelParams params;

  VideoFixture(Rng& rng, int frames) {
    pyr = encode_video(oracle::random_frames(rng, frames, 16, 16, 4), cfg.encoder, 7);
    text = encode_text({1, 4, 6, 9, 11}, cfg.encoder, 7);
    params = oracle::random_params(cfg, rng);
  }
  VideoFeatures features() const { return {&pyr, &text, {4, 5}}; }
  StepContext context() const { return {&params, &frozen, cfg.memory_neighbors, 16, 16}; }
};

TEST(MemoryBank, InsertKeepsOrderAndDeduplicates) {
  MemoryBank bank(8);
  for (FrameIndex f : {5, 2, 7, 2}) bank.insert(entry(f), f);
  EXPECT_EQ(bank.frames(), (std::vector<FrameIndex>{2, 5, 7}));
}

TEST(MemoryBank, EvictsFarthestWithTiesToEarlier) {
  MemoryBank bank(3);
  for (FrameIndex f : {1, 3, 5}) bank.insert(entry(f), f);
  bank.insert(entry(4), 4);  // 1 is farthest from 4
  EXPECT_EQ(bank.frames(), (std::vector<FrameIndex>{3, 4, 5}));
  bank.insert(entry(9), 4);  // 3 and 5 tie at distance 1, the earlier goes
  EXPECT_EQ(bank.frames(), (std::vector<FrameIndex>{4, 5, 9}));
  EXPECT_LE(bank.size(), 3u);
}

TEST(MemoryBank, RejectsIrrelevantEntries) {
  MemoryBank bank;
  MemoryEntry e = entry(3);
  e.is_relevant = false;
  EXPECT_THROW(bank.insert(e, 3), PropagationError);
  EXPECT_TRUE(bank.empty());
  EXPECT_THROW(MemoryBank(0), std::invalid_argument);
}

TEST(MemoryBank, NearestSixOfEightAroundFive) {
  MemoryBank bank(8);
  for (FrameIndex f : {1, 2, 3, 4, 6, 7, 8, 9}) bank.insert(entry(f), f);
  // Distances from 5: 4,6 ->1; 3,7 ->2; 2,8 ->3; 1,9 ->4.
  EXPECT_EQ(bank.nearest(5, 6), (std::vector<FrameIndex>{2, 3, 4, 6, 7, 8}));
  MemoryBank odd(8);
  for (FrameIndex f : {1, 2, 3, 7, 8, 9, 10, 11}) odd.insert(entry(f), f);
  EXPECT_EQ(odd.nearest(5, 6), (std::vector<FrameIndex>{1, 2, 3, 7, 8, 9}));
}

TEST(MemoryBank, NearestMatchesBruteForce) {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    MemoryBank bank(8);
    std::vector<FrameIndex> stored;
    for (FrameIndex f = 1; f <= 20; ++f)
      if (rng.bernoulli(0.4) && stored.size() < 8) {
        stored.push_back(f);
        bank.insert(entry(f), f);
      }
    const FrameIndex t = rng.range(1, 20);
    EXPECT_EQ(bank.nearest(t, 6), oracle::nearest_frames(stored, t, 6));
  }
}

TEST(MemoryEncode, ZeroMaskGivesFeatureProjection) {
  Rng rng(2);
  const ModelConfig cfg = oracle::tiny_model();
  const FrozenContext frozen = make_frozen_context(cfg);
  ModelParams p = oracle::random_params(cfg, rng);
  p.memory.fuse_b = Tensor::zeros(p.memory.fuse_b.shape);
  const Tensor f = oracle::random_tensor(rng, {16, 6});
  Tape tape;
  const Tensor fused = memory_encode(tape, f, Tensor::zeros({16, 16}), p.memory, frozen);
  Tensor w = Tensor::zeros({6, 5});
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 5; ++j) w.at(i, j) = p.memory.fuse_w.at(i, j);
  EXPECT_LT(oracle::max_abs_diff(fused, oracle::mm(oracle::rows_of(f), oracle::rows_of(w))), 1e-12);
  EXPECT_TRUE(fused.same_values(memory_encode(tape, f, Tensor::zeros({16, 16}), p.memory, frozen)));
}

TEST(MemoryEncode, MatchesLoopOracle) {
  Rng rng(3);
  const ModelConfig cfg = oracle::tiny_model();
  const FrozenContext frozen = make_frozen_context(cfg);
  for (int trial = 0; trial < 20; ++trial) {
    const ModelParams p = oracle::random_params(cfg, rng);
    const Tensor f = oracle::random_tensor(rng, {16, 6});
    const Tensor logits = oracle::random_tensor(rng, {16, 16}, -4, 4);
    Tape tape;
    const Tensor fused = memory_encode(tape, f, logits, p.memory, frozen);
    oracle::Matrix ref(16, std::vector<double>(5));
    for (int cell = 0; cell < 16; ++cell) {
      const int gy = cell / 4, gx = cell % 4;
      double pooled = 0;
      for (int y = gy * 4; y < gy * 4 + 4; ++y)
        for (int x = gx * 4; x < gx * 4 + 4; ++x)
          pooled += (2.0 / (1.0 + std::exp(-logits.at(y, x))) - 1.0) / 16.0;
      for (std::size_t j = 0; j < 5; ++j) {
        double s = p.memory.fuse_b.data[j] + pooled * p.memory.fuse_w.at(6, j);
        for (std::size_t c = 0; c < 6; ++c) s += f.at(cell, c) * p.memory.fuse_w.at(c, j);
        ref[cell][j] = s;
      }
    }
    EXPECT_LT(oracle::max_abs_diff(fused, ref), 1e-12);
  }
}

TEST(MemoryEncode, ResolutionMismatchRejected) {
  const ModelConfig cfg = oracle::tiny_model();
  const FrozenContext frozen = make_frozen_context(cfg);
  const ModelParams p = init_params(cfg, 1);
  Tape tape;
  EXPECT_THROW(memory_encode(tape, Tensor::zeros({15, 6}), Tensor::zeros({16, 16}), p.memory, frozen), ShapeError);
  EXPECT_THROW(memory_encode(tape, Tensor::zeros({16, 6}), Tensor::zeros({8, 8}), p.memory, frozen), ShapeError);
}

TEST(MemoryAttend, EmptyBankPassesThrough) {
  Rng rng(4);
  const ModelConfig cfg = oracle::tiny_model();
  const FrozenContext frozen = make_frozen_context(cfg);
  const Tensor q = oracle::random_tensor(rng, {16, 6});
  Tape tape;
  const auto r = memory_attend(tape, q, MemoryBank(8), 3, 6, init_params(cfg, 1).memory, frozen);
  EXPECT_TRUE(r.features.same_values(q));
  EXPECT_TRUE(r.attended.empty());
}

TEST(MemoryAttend, MatchesBruteForceSelectionAndLoopOracle) {
  Rng rng(5);
  const ModelConfig cfg = oracle::tiny_model();
  const FrozenContext frozen = make_frozen_context(cfg);
  for (int trial = 0; trial < 100; ++trial) {
    const ModelParams p = oracle::random_params(cfg, rng);
    MemoryBank bank(8);
    std::vector<FrameIndex> stored;
    for (FrameIndex f = 1; f <= 12; ++f)
      if (rng.bernoulli(0.6) && stored.size() < 8) {
        stored.push_back(f);
        bank.insert({f, oracle::random_tensor(rng, {16, 5}), true}, f);
      }
    const FrameIndex t = rng.range(1, 12);
    const Tensor q = oracle::random_tensor(rng, {16, 6});
    Tape tape;
    const auto r = memory_attend(tape, q, bank, t, 6, p.memory, frozen);
    const auto expect_frames = oracle::nearest_frames(stored, t, 6);
    EXPECT_EQ(r.attended, expect_frames);
    std::vector<const Tensor*> entries;
    for (FrameIndex f : expect_frames) entries.push_back(&bank.at(f).fused);
    EXPECT_LT(oracle::max_abs_diff(r.features, oracle::memory_attend(q, entries, p.memory, 4, cfg.locality_sigma)),
              1e-12);
  }
}

TEST(MemoryAttend, IdenticalCellsAttendToThemselves) {
  ModelConfig cfg = oracle::tiny_model();
  cfg.memory_dim = 6;
  const FrozenContext frozen = make_frozen_context(cfg);
  Rng rng(6);
  ModelParams p = oracle::random_params(cfg, rng);
  p.memory.value = Tensor::identity(6);
  const Tensor row = oracle::random_tensor(rng, {1, 6});
  Tensor cells = Tensor::zeros({16, 6});
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 6; ++j) cells.at(i, j) = row.data[j];
  MemoryBank bank(8);
  bank.insert({2, cells, true}, 2);
  Tape tape;
  const auto r = memory_attend(tape, cells, bank, 3, 6, p.memory, frozen);
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(r.features.at(i, j) - cells.at(i, j), row.data[j], 1e-12);
}

TEST(Decoder, ZeroEverythingGivesZeroLogits) {
  const ModelConfig cfg = oracle::tiny_model();
  const FrozenContext frozen = make_frozen_context(cfg);
  ModelParams p = init_params(cfg, 1);
  p.visit([](const std::string&, Tensor& t) { t = Tensor::zeros(t.shape); });
  Tape tape;
  const Tensor logits = decode_mask(tape, Tensor::zeros({16, 6}), nullptr, p.decoder, frozen, 16, 16);
  EXPECT_EQ(logits.shape, (Shape{16, 16}));
  for (double v : logits.data) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(binarize(logits).empty());
}

TEST(Decoder, PromptChangesOutput) {
  Rng rng(7);
  const ModelConfig cfg = oracle::tiny_model();
  const FrozenContext frozen = make_frozen_context(cfg);
  const ModelParams p = oracle::random_params(cfg, rng);
  const Tensor f = oracle::random_tensor(rng, {16, 6});
  const Tensor prompt = oracle::random_tensor(rng, {1, 5});
  Tape tape;
  const Tensor with = decode_mask(tape, f, &prompt, p.decoder, frozen, 16, 16);
  const Tensor without = decode_mask(tape, f, nullptr, p.decoder, frozen, 16, 16);
  EXPECT_EQ(with.shape, (Shape{16, 16}));
  EXPECT_FALSE(with.same_values(without));
  const Tensor bad = Tensor::zeros({1, 4});
  EXPECT_THROW(decode_mask(tape, f, &bad, p.decoder, frozen, 16, 16), ShapeError);
}

TEST(Binarize, StrictThreshold) {
  EXPECT_EQ(binarize(Tensor({1, 2}, {-1, 2})).bits, (std::vector<std::uint8_t>{0, 1}));
  EXPECT_TRUE(binarize(Tensor::zeros({3, 3})).empty());
  Rng rng(8);
  const Tensor p = oracle::random_tensor(rng, {7, 9});
  const BinaryMask m = binarize(p);
  for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_EQ(m.bits[i], p.data[i] > 0 ? 1 : 0);
}

TEST(MdpStep, IrrelevantFrameOnEmptyBank) {
  Rng rng(9);
  VideoFixture fx(rng, 2);
  PropagationState state(8);
  std::vector<StepTrace> trace;
  state.trace = &trace;
  Tape tape;
  FrameInputs in;
  in.raw = &fx.pyr.finest(0);
  const Tensor logits = mdp_step(tape, 1, Membership::kIrrelevant, in, state, fx.context());
  const Tensor expected = decode_mask(tape, fx.pyr.finest(0), nullptr, fx.params.decoder, fx.frozen, 16, 16);
  EXPECT_TRUE(logits.same_values(expected));
  EXPECT_TRUE(state.bank.empty());
  ASSERT_EQ(trace.size(), 1u);
  EXPECT_FALSE(trace[0].used_prompt);
}

TEST(MdpStep, RelevantFrameGrowsBankByOne) {
  Rng rng(10);
  VideoFixture fx(rng, 3);
  PropagationState state(8);
  Tape tape;
  for (FrameIndex t : {1, 2}) {
    const AdaptedFrame a = adapt_frame(tape, fx.features(), static_cast<std::size_t>(t - 1), fx.params, fx.frozen);
    FrameInputs in{&a.features, &a.prompt, nullptr};
    mdp_step(tape, t, Membership::kRelevant, in, state, fx.context());
    EXPECT_EQ(state.bank.size(), static_cast<std::size_t>(t));
  }
}

TEST(MdpStep, MissingFeaturesRejected) {
  Rng rng(11);
  VideoFixture fx(rng, 1);
  PropagationState state(8);
  Tape tape;
  FrameInputs raw_only;
  raw_only.raw = &fx.pyr.finest(0);
  EXPECT_THROW(mdp_step(tape, 1, Membership::kRelevant, raw_only, state, fx.context()), PropagationError);
  const AdaptedFrame a = adapt_frame(tape, fx.features(), 0, fx.params, fx.frozen);
  FrameInputs adapted_only{&a.features, &a.prompt, nullptr};
  EXPECT_THROW(mdp_step(tape, 1, Membership::kIrrelevant, adapted_only, state, fx.context()), PropagationError);
  FrameInputs no_prompt{&a.features, nullptr, nullptr};
  EXPECT_THROW(mdp_step(tape, 1, Membership::kRelevant, no_prompt, state, fx.context()), PropagationError);
}

TEST(Order, PassTwoForSingleRelevantFrame) {
  EXPECT_EQ(irrelevant_order(MomentSet({3}, 5)), (std::vector<FrameIndex>{2, 4, 1, 5}));
  EXPECT_TRUE(irrelevant_order(MomentSet::full(4)).empty());
}

TEST(Order, PassTwoMatchesBruteForceSort) {
  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const int tv = rng.range(1, 15);
    std::vector<FrameIndex> idx;
    for (int i = 1; i <= tv; ++i)
      if (rng.bernoulli(0.3)) idx.push_back(i);
    if (idx.empty()) idx.push_back(rng.range(1, tv));
    const MomentSet mplus(idx, tv);
    // Key = distance * (tv + 1) + frame, so sorting keys sorts by distance then frame.
    std::vector<std::pair<int, FrameIndex>> keyed;
    for (FrameIndex f = 1; f <= tv; ++f) {
      if (mplus.contains(f)) continue;
      int d = 1 << 20;
      for (FrameIndex m : idx) d = std::min(d, std::abs(f - m));
      keyed.push_back({d * (tv + 1) + f, f});
    }
    std::sort(keyed.begin(), keyed.end());
    std::vector<FrameIndex> expect;
    for (const auto& [k, f] : keyed) expect.push_back(f);
    EXPECT_EQ(irrelevant_order(mplus), expect);
  }
}

TEST(Order, ValidationErrors) {
  const MomentSet mplus({1, 2, 3, 5}, 5);
  EXPECT_NO_THROW(validate_order({3, 1, 2, 5, 4}, mplus));
  EXPECT_THROW(validate_order({1, 2, 3, 4, 5}, mplus), PropagationError);
  EXPECT_THROW(validate_order({1, 2, 3, 5}, mplus), PropagationError);
  EXPECT_THROW(validate_order({1, 2, 3, 5, 5}, mplus), PropagationError);
  EXPECT_THROW(validate_order({1, 2, 3, 5, 6}, mplus), PropagationError);
}

TEST(Propagation, WorkedExampleInTemporalOrderKeepsBankPure) {
  Rng rng(13);
  VideoFixture fx(rng, 5);
  const MomentSet mplus({1, 2, 3, 5}, 5);
  std::vector<StepTrace> trace;
  Tape tape;
  propagate(tape, fx.features(), {1, 2, 3, 4, 5}, [&](FrameIndex f) { return mplus.contains(f); }, fx.params,
            fx.cfg, fx.frozen, &trace);
  ASSERT_EQ(trace.size(), 5u);
  for (const auto& st : trace)
    for (FrameIndex f : st.bank_after) EXPECT_TRUE(mplus.contains(f));
  EXPECT_FALSE(trace[3].used_prompt);
}

TEST(Propagation, WorkedExampleInference) {
  Rng rng(14);
  VideoFixture fx(rng, 5);
  const MomentSet mplus({1, 2, 3, 5}, 5);
  std::vector<StepTrace> trace;
  std::vector<Tensor> logits;
  const auto masks = run_inference(fx.features(), mplus, {1, 2, 3, 5, 4}, fx.params, fx.cfg, fx.frozen, &logits,
                                   &trace);
  ASSERT_EQ(masks.size(), 5u);
  ASSERT_EQ(trace.size(), 5u);
  EXPECT_EQ(trace.back().frame, 4);
  EXPECT_FALSE(trace.back().used_prompt);
  EXPECT_EQ(trace.back().attended, (std::vector<FrameIndex>{1, 2, 3, 5}));
  for (const auto& st : trace)
    EXPECT_EQ(std::count(st.bank_after.begin(), st.bank_after.end(), 4), 0);
  EXPECT_EQ(trace.back().query_digest, tensor_digest(fx.pyr.finest(3)));
}

TEST(Propagation, AllRelevantSkipsPassTwo) {
  Rng rng(15);
  VideoFixture fx(rng, 3);
  std::vector<StepTrace> trace;
  run_inference(fx.features(), MomentSet::full(3), {2, 1, 3}, fx.params, fx.cfg, fx.frozen, nullptr, &trace);
  ASSERT_EQ(trace.size(), 3u);
  EXPECT_EQ(trace[0].frame, 2);
  for (const auto& st : trace) EXPECT_TRUE(st.used_prompt);
}

TEST(Propagation, InferenceIsDeterministicAndTemporal) {
  Rng rng(16);
  VideoFixture fx(rng, 6);
  const MomentSet mplus({2, 5}, 6);
  std::vector<Tensor> a, b;
  const auto ma = run_inference(fx.features(), mplus, {5, 2, 1, 3, 4, 6}, fx.params, fx.cfg, fx.frozen, &a);
  const auto mb = run_inference(fx.features(), mplus, {5, 2, 1, 3, 4, 6}, fx.params, fx.cfg, fx.frozen, &b);
  EXPECT_EQ(ma, mb);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(a[i].same_values(b[i]));
  EXPECT_THROW(run_inference(fx.features(), MomentSet({2}, 5), {2, 1, 3, 4, 5}, fx.params, fx.cfg, fx.frozen),
               PropagationError);
}

TEST(Propagation, QueriesRouteByMembership) {
  Rng rng(17);
  VideoFixture fx(rng, 6);
  const MomentSet mplus({1, 4, 5}, 6);
  std::vector<StepTrace> trace;
  run_inference(fx.features(), mplus, {4, 1, 5, 2, 3, 6}, fx.params, fx.cfg, fx.frozen, nullptr, &trace);
  for (const auto& st : trace) {
    const std::size_t idx = static_cast<std::size_t>(st.frame - 1);
    Tape tape;
    const AdaptedFrame a = adapt_frame(tape, fx.features(), idx, fx.params, fx.frozen);
    const std::uint64_t expected = mplus.contains(st.frame) ? tensor_digest(a.features) : tensor_digest(fx.pyr.finest(idx));
    EXPECT_EQ(st.query_digest, expected) << "frame " << st.frame;
    EXPECT_EQ(st.used_prompt, mplus.contains(st.frame));
  }
}

}  // namespace
}  // namespace samdwich
