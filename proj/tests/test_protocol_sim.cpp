#include "maskedkrum/protocol_sim.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "maskedkrum/audit.hpp"
#include "maskedkrum/error.hpp"
#include "support/oracles.hpp"

namespace maskedkrum {
namespace {

ProtocolOptions options_for(std::size_t n, std::size_t f, std::size_t dim, double c = 4.0) {
  ProtocolOptions o;
  o.config = SystemConfig{n, f, 0, dim, c, 0, std::nullopt};
  return o;
}

GradientSource constant_source(std::vector<double> g) {
  return [g](ClientId id, std::size_t) { return GradientVector{id, g}; };
}

// Honest clients draw around a shared center; clients 1..f send -scale * own.
GradientSource attacked_source(std::size_t dim, std::size_t f, double scale,
                               std::uint64_t seed) {
  return [=](ClientId id, std::size_t round) {
    std::mt19937_64 rng(seed * 1000003 + round * 131 + id);
    std::vector<double> v(dim);
    std::normal_distribution<double> g(1.0, 0.3);
    for (double& x : v) x = g(rng);
    if (id <= f) {
      for (double& x : v) x *= -scale;
    }
    return GradientVector{id, v};
  };
}

std::vector<GradientVector> materialize(const GradientSource& src,
                                        const std::vector<ClientId>& ids, std::size_t round) {
  std::vector<GradientVector> out;
  for (ClientId id : ids) out.push_back(src(id, round));
  return out;
}

TEST(RunRound, SymmetricInputSelectsLowestIds) {
  ProtocolSimulator sim(options_for(5, 1, 8), 1);
  const std::vector<double> g{1, -2, 3, 0.5, 0, 0, 7, 1};
  const auto out = sim.run_round(constant_source(g));
  ASSERT_EQ(out.status, RoundStatus::kOk) << out.message;
  const auto& scores = out.selection->scores.entries;
  for (const auto& e : scores) EXPECT_NEAR(e.score, scores.front().score, 1e-9);
  EXPECT_EQ(out.selection->selected_ids, (std::vector<ClientId>{1, 2}));
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(out.aggregate->values[k], g[k], 1e-15);
  for (ClientId id = 1; id <= 5; ++id) {
    ASSERT_TRUE(sim.client(id).last_aggregate().has_value());
    EXPECT_EQ(sim.client(id).last_aggregate()->values, out.aggregate->values);
  }
  ASSERT_TRUE(out.leakage.has_value());
  EXPECT_EQ(out.leakage->per_client_bound, 0.0);
}

TEST(RunRound, SignFlipAttackersExcludedAndMatchesPlaintext) {
  const std::size_t n = 9, f = 3, dim = 24;
  ProtocolSimulator sim(options_for(n, f, dim, 10.0), 2);
  const auto src = attacked_source(dim, f, 100.0, 5);
  const auto out = sim.run_round(src);
  ASSERT_EQ(out.status, RoundStatus::kOk);
  for (ClientId id : out.selection->selected_ids) EXPECT_GT(id, f);

  const auto plain = oracle::plaintext_multikrum(
      materialize(src, {1, 2, 3, 4, 5, 6, 7, 8, 9}, 0), f, n - f - 2);
  EXPECT_EQ(std::set<ClientId>(out.selection->selected_ids.begin(),
                               out.selection->selected_ids.end()),
            plain.selected);
  for (std::size_t k = 0; k < dim; ++k) {
    EXPECT_NEAR(out.aggregate->values[k], plain.aggregate[k], 1e-9);
  }
}

TEST(RunRound, DropBelowThresholdFailsPrecondition) {
  ProtocolSimulator sim(options_for(9, 3, 16), 3);
  const std::vector<DropoutEvent> drops{{0, 6, DropPhase::kBeforeUpload}};
  const auto out = sim.run_round(constant_source(std::vector<double>(16, 1.0)), drops);
  EXPECT_EQ(out.status, RoundStatus::kFailedPrecondition);
  EXPECT_FALSE(out.aggregate.has_value());
  EXPECT_EQ(out.participating_ids.size(), 8u);
  EXPECT_NE(out.message.find("N >= 2f+3"), std::string::npos);
  // The next round has everyone back.
  EXPECT_EQ(sim.run_round(constant_source(std::vector<double>(16, 1.0))).status,
            RoundStatus::kOk);
}

TEST(RunRound, DropoutUsesCodebookSubset) {
  ProtocolSimulator sim(options_for(10, 3, 20), 4);
  const auto cb = build_codebook(10, 20, 4.0, 99);
  const std::vector<DropoutEvent> drops{{0, 4, DropPhase::kBeforeUpload}};
  const auto out = sim.run_round(constant_source(std::vector<double>(20, 0.5)), cb, drops);
  ASSERT_EQ(out.status, RoundStatus::kOk);
  EXPECT_EQ(out.participating_ids, (std::vector<ClientId>{1, 2, 3, 5, 6, 7, 8, 9, 10}));
  // Equal gradients: every decoded entry is 2C, so the subset kept the
  // constant noise distance.
  for (const auto& e : out.selection->scores.entries) {
    EXPECT_NEAR(e.score, (9 - 3 - 2) * 2 * 4.0, 1e-8 * 4.0 * 8);
  }
  EXPECT_EQ(out.codebook_seed, 99u);
}

TEST(RunRound, LateDropIsDeferredToNextRound) {
  ProtocolSimulator sim(options_for(10, 3, 20), 5);
  const std::vector<DropoutEvent> drops{{0, 2, DropPhase::kAfterShares}};
  const auto src = constant_source(std::vector<double>(20, 1.0));
  const auto first = sim.run_round(src, drops);
  ASSERT_EQ(first.status, RoundStatus::kOk);
  EXPECT_EQ(first.participating_ids.size(), 10u);
  EXPECT_EQ(first.deferred_drops, (std::vector<ClientId>{2}));
  const auto second = sim.run_round(src, drops);
  ASSERT_EQ(second.status, RoundStatus::kOk);
  EXPECT_EQ(second.participating_ids.size(), 9u);
  EXPECT_EQ(std::count(second.participating_ids.begin(), second.participating_ids.end(), 2u), 0);
}

TEST(RunRound, JoinRebuildsReusedCodebook) {
  auto opts = options_for(9, 3, 16);
  opts.reuse_codebook = true;
  ProtocolSimulator sim(opts, 6);
  const auto src = constant_source(std::vector<double>(16, 1.0));
  const auto r0 = sim.run_round(src);
  const auto r1 = sim.run_round(src);
  EXPECT_EQ(r0.codebook_seed, r1.codebook_seed);
  EXPECT_EQ(r1.codebook_rows, 9u);
  sim.join_client(10);
  const auto r2 = sim.run_round(src);
  ASSERT_EQ(r2.status, RoundStatus::kOk);
  EXPECT_EQ(r2.codebook_rows, 10u);
  EXPECT_NE(r2.codebook_seed, r1.codebook_seed);
  EXPECT_EQ(r2.participating_ids.size(), 10u);
  EXPECT_TRUE(sim.session().has_link(RoleId::client(10), RoleId::enclave()));
}

TEST(RunRound, FreshCodebookEachRoundByDefault) {
  ProtocolSimulator sim(options_for(5, 1, 8), 7);
  const auto src = constant_source(std::vector<double>(8, 1.0));
  EXPECT_NE(sim.run_round(src).codebook_seed, sim.run_round(src).codebook_seed);
}

TEST(Handshake, UnresponsiveClientNeverParticipates) {
  ProtocolSimulator sim(options_for(6, 1, 8), 8,
                        [](RoleId r) { return r != RoleId::client(3); });
  EXPECT_EQ(sim.session().keys.size(), 7u);
  const auto out = sim.run_round(constant_source(std::vector<double>(8, 1.0)));
  ASSERT_EQ(out.status, RoundStatus::kOk);
  EXPECT_EQ(out.participating_ids, (std::vector<ClientId>{1, 2, 4, 5, 6}));
}

TEST(Transcript, EveryPayloadSealedForItsReceiverOnly) {
  const std::size_t n = 7, f = 2;
  ProtocolSimulator sim(options_for(n, f, 12), 9);
  sim.run_round(attacked_source(12, f, 10.0, 1));
  sim.run_round(attacked_source(12, f, 10.0, 2));
  const auto transcript = sim.network().transcript();
  // 7 uploads + 2 share sets + 2 partials + 7 broadcasts per round.
  ASSERT_EQ(transcript.size(), 2u * (n + 2 + 2 + n));
  std::size_t attempts = 0;
  for (const auto& msg : transcript) {
    const Link intended = make_link(msg.sender, msg.receiver);
    ASSERT_TRUE(sim.session().keys.contains(intended));
    for (const auto& [link, key] : sim.session().keys) {
      if (link == intended) continue;
      ++attempts;
      EXPECT_THROW(open_with_key(key, msg), Error);
    }
  }
  EXPECT_EQ(attempts, transcript.size() * (sim.session().keys.size() - 1));
}

TEST(WorkerIsolation, OnlyShareSetsReachWorkers) {
  for (RoleKind kind : {RoleKind::kClient, RoleKind::kEnclave, RoleKind::kWorker}) {
    for (MessageKind mk : {MessageKind::kGradientUpload, MessageKind::kShareSet,
                           MessageKind::kPartialDistances, MessageKind::kAggregate}) {
      const auto kinds = deliverable_kinds(kind);
      const bool allowed = std::find(kinds.begin(), kinds.end(), mk) != kinds.end();
      if (kind == RoleKind::kWorker) EXPECT_EQ(allowed, mk == MessageKind::kShareSet);
    }
  }
  ProtocolSimulator sim(options_for(5, 1, 8), 10);
  SealedMessage forged{RoleId::client(1), RoleId::worker(1), MessageKind::kGradientUpload, {}, {}};
  EXPECT_THROW(sim.network().deliver(forged), Error);

  // Worker 1 sees share_plus values only: the transcript's share set for
  // worker 1 is sealed under the enclave/worker-1 key and nothing else.
  sim.run_round(constant_source(std::vector<double>(8, 2.0)));
  const auto w1_key = sim.session().keys.at(make_link(RoleId::enclave(), RoleId::worker(1)));
  std::size_t opened = 0;
  for (const auto& msg : sim.network().transcript()) {
    try {
      open_with_key(w1_key, msg);
      ++opened;
      EXPECT_TRUE(msg.receiver == RoleId::worker(1) || msg.sender == RoleId::worker(1));
    } catch (const Error&) {
    }
  }
  EXPECT_EQ(opened, 2u);
}

TEST(RunRound, TamperedUploadAbortsWithCulprit) {
  ProtocolSimulator sim(options_for(5, 1, 8), 11);
  sim.network().set_tamper([](SealedMessage& m) {
    if (m.sender == RoleId::client(4)) m.ciphertext[0] ^= 0xFF;
  });
  const auto src = constant_source(std::vector<double>(8, 1.0));
  const auto out = sim.run_round(src);
  EXPECT_EQ(out.status, RoundStatus::kAborted);
  ASSERT_TRUE(out.culprit.has_value());
  EXPECT_EQ(*out.culprit, RoleId::client(4));
  EXPECT_FALSE(out.aggregate.has_value());
  sim.network().set_tamper({});
  EXPECT_EQ(sim.run_round(src).status, RoundStatus::kOk);
}

TEST(RunRound, TamperedShareSetAbortsAndRecovers) {
  ProtocolSimulator sim(options_for(5, 1, 8), 12);
  sim.network().set_tamper([](SealedMessage& m) {
    if (m.receiver == RoleId::worker(2)) m.ciphertext[3] ^= 0x10;
  });
  const auto src = constant_source(std::vector<double>(8, 1.0));
  const auto out = sim.run_round(src);
  EXPECT_EQ(out.status, RoundStatus::kAborted);
  EXPECT_EQ(*out.culprit, RoleId::enclave());
  sim.network().set_tamper({});
  for (int r = 0; r < 3; ++r) EXPECT_EQ(sim.run_round(src).status, RoundStatus::kOk);
}

TEST(RunRound, DeterministicAcrossRuns) {
  auto run = [] {
    auto opts = options_for(9, 2, 16);
    opts.config.clip_norm = 5.0;
    ProtocolSimulator sim(opts, 13);
    std::string log;
    for (int r = 0; r < 3; ++r) log += to_json(sim.run_round(attacked_source(16, 2, 5.0, 3))).dump();
    return log;
  };
  EXPECT_EQ(run(), run());
}

TEST(RunRound, ClipsBeforeEncoding) {
  auto opts = options_for(5, 1, 5);
  opts.config.clip_norm = 1.0;
  ProtocolSimulator sim(opts, 14);
  const auto out = sim.run_round(constant_source({3, 4, 0, 0, 0}));
  ASSERT_EQ(out.status, RoundStatus::kOk);
  EXPECT_NEAR(out.aggregate->values[0], 0.6, 1e-12);
  EXPECT_NEAR(out.aggregate->values[1], 0.8, 1e-12);
}

TEST(RunRound, PlainMeanSelectsEveryone) {
  auto opts = options_for(5, 1, 5);
  opts.aggregator = Aggregator::kPlainMean;
  ProtocolSimulator sim(opts, 15);
  const auto out = sim.run_round([](ClientId id, std::size_t) {
    return GradientVector{id, std::vector<double>(5, static_cast<double>(id))};
  });
  EXPECT_EQ(out.selection->selected_ids.size(), 5u);
  EXPECT_DOUBLE_EQ(out.aggregate->values[0], 3.0);
}

TEST(HandleDropout, PhaseRules) {
  RoundState state{0, 1, RoundPhase::kCollecting, {1, 2, 3, 4, 5, 6}, {}};
  const std::vector<ClientId> one{3};
  EXPECT_EQ(handle_dropout(state, one), (std::vector<ClientId>{1, 2, 4, 5, 6}));
  EXPECT_THROW(handle_dropout(state, std::vector<ClientId>{1}), Error);

  RoundState late{0, 1, RoundPhase::kSharesSent, {1, 2, 3, 4, 5}, {}};
  EXPECT_EQ(handle_dropout(late, std::vector<ClientId>{2}).size(), 5u);
  EXPECT_EQ(late.deferred_drops, (std::vector<ClientId>{2}));
}

TEST(RunRound, NonFiniteUploadAbortsRound) {
  ProtocolSimulator sim(options_for(5, 1, 5), 16);
  const auto out = sim.run_round([](ClientId id, std::size_t) {
    return GradientVector{id, {id == 2 ? INFINITY : 1.0, 0.0, 0.0, 0.0, 0.0}};
  });
  EXPECT_EQ(out.status, RoundStatus::kAborted);
  EXPECT_EQ(*out.culprit, RoleId::client(2));
}

}  // namespace
}  // namespace maskedkrum
