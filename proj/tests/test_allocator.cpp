#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "rdkv/allocator.hpp"
#include "rdkv/evaluator.hpp"

namespace {

using rdkv::AllocationProblem;
using rdkv::DistortionModel;

const DistortionModel kKiviKey{17.87, 5.09, 0.997, {}};
const DistortionModel kKiviValue{4.65, 4.55, 0.994, {}};
const DistortionModel kTurboKey{1.51, 3.57, 0.998, {}};
const DistortionModel kTurboValue{1.50, 3.58, 0.998, {}};

AllocationProblem shared(std::vector<double> w, DistortionModel m, double avg, int b_min = 1, int b_max = 8) {
  return rdkv::make_problem(w, m, avg, b_min, b_max);
}

TEST(RoundHalfEven, Ties) {
  EXPECT_EQ(rdkv::round_half_even(2.5), 2);
  EXPECT_EQ(rdkv::round_half_even(3.5), 4);
  EXPECT_EQ(rdkv::round_half_even(3.49), 3);
  EXPECT_EQ(rdkv::round_half_even(3.51), 4);
  EXPECT_EQ(rdkv::round_half_even(1440.0), 1440);
}

TEST(ProblemValidation, Infeasible) {
  auto p = shared({1, 1, 1}, {1, 2, 1, {}}, 3.0);
  p.budget = 2;
  EXPECT_THROW(rdkv::greedy_allocate(p), rdkv::InfeasibleError);
  EXPECT_THROW(rdkv::continuous_allocate(p), rdkv::InfeasibleError);
  p.budget = 25;
  try {
    rdkv::greedy_allocate(p);
    FAIL();
  } catch (const rdkv::InfeasibleError& e) {
    EXPECT_NE(std::string(e.what()).find("b_max"), std::string::npos);
  }
  p.budget = 6;
  p.b_min = 3;
  p.b_max = 2;
  EXPECT_THROW(rdkv::greedy_allocate(p), rdkv::InfeasibleError);
  p = shared({1, 1}, {1, 2, 1, {}}, 3.0, 1, 9);
  EXPECT_THROW(rdkv::continuous_allocate(p), rdkv::InfeasibleError);
  p = shared({1, 1}, {1, 1.0, 1, {}}, 3.0);
  EXPECT_THROW(rdkv::continuous_allocate(p), rdkv::InputError);
}

TEST(Continuous, EqualWeightsAreUniform) {
  const auto a = rdkv::continuous_allocate(shared(std::vector<double>(10, 2.0), {1.4, 3.5, 1, {}}, 4.0));
  for (double b : a.bits) EXPECT_NEAR(b, 4.0, 1e-12);
}

TEST(Continuous, TwoComponentClosedForm) {
  const double e = std::numbers::e;
  const auto a = rdkv::continuous_allocate(shared({e, 1 / e}, {1.0, e, 1, {}}, 3.0));
  EXPECT_NEAR(a.bits[0], 4.0, 1e-12);
  EXPECT_NEAR(a.bits[1], 2.0, 1e-12);
}

TEST(Continuous, OneLogUnitIsPointEightBits) {
  // ln w = (+1, 0, -1): the first head sits one log unit above the log-mean.
  const double e = std::numbers::e;
  const auto a = rdkv::continuous_allocate(shared({e, 1.0, 1 / e}, {1.36, 3.48, 1, {}}, 4.0));
  EXPECT_NEAR(a.bits[0] - 4.0, 1.0 / std::log(3.48), 1e-12);
  EXPECT_NEAR(a.bits[0] - 4.0, 0.80, 0.005);
}

TEST(Continuous, KiviTwoClassSplit) {
  const double oracle_k = rdkv::oracle::two_class_split(17.87, 5.09, 4.65, 4.55, 2.5);
  EXPECT_NEAR(oracle_k, 2.86, 0.005);
  const auto kv = rdkv::allocate_kv_separate(rdkv::uniform_sensitivity(4, 8), kKiviKey, kKiviValue, 2.5, 1, 8,
                                             rdkv::AllocationMode::continuous);
  EXPECT_NEAR(kv.mean_bits_k, oracle_k, 1e-9);
  EXPECT_NEAR(kv.mean_bits_v, 5.0 - oracle_k, 1e-9);
  EXPECT_NEAR(kv.mean_bits_k, 2.85, 0.05);
}

TEST(Continuous, ForcedBoundsPinAndBalance) {
  // One huge weight wants far more than b_max.
  auto p = shared({1e6, 1, 1, 1}, {1.0, 2.0, 1, {}}, 3.0, 1, 5);
  const auto a = rdkv::continuous_allocate(p);
  EXPECT_DOUBLE_EQ(a.bits[0], 5.0);
  for (int i = 1; i < 4; ++i) EXPECT_NEAR(a.bits[i], 7.0 / 3.0, 1e-9);
  const auto kkt = rdkv::oracle::check_kkt(p, a.bits);
  EXPECT_TRUE(kkt.slackness_ok);
  EXPECT_LT(kkt.max_free_deviation, 1e-7);
}

TEST(ContinuousProperty, KktOnRandomInstances) {
  rdkv::oracle::InstanceGen gen(77);
  for (int trial = 0; trial < 1500; ++trial) {
    const auto p = gen.problem(12, 7, trial % 3 == 0);
    const auto a = rdkv::continuous_allocate(p);
    const auto kkt = rdkv::oracle::check_kkt(p, a.bits);
    ASSERT_TRUE(kkt.slackness_ok) << "trial " << trial;
    ASSERT_LT(kkt.max_free_deviation, 1e-7) << "trial " << trial;
    ASSERT_LT(kkt.budget_error, 1e-9 * static_cast<double>(p.size())) << "trial " << trial;
  }
}

TEST(ContinuousProperty, SharedUnboundedMatchesClosedForm) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> lw(-1.0, 1.0), beta(2.0, 6.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> w(1 + rng() % 40);
    for (double& x : w) x = std::exp(lw(rng));
    const double b = beta(rng);
    const auto a = rdkv::continuous_allocate(shared(w, {2.0, b, 1, {}}, 4.0, 1, 8));
    const auto expected = rdkv::oracle::closed_form_allocation(w, b, 4.0);
    for (std::size_t i = 0; i < w.size(); ++i) ASSERT_NEAR(a.bits[i], expected[i], 1e-9);
  }
}

TEST(Greedy, SingleComponentTakesBudget) {
  const auto a = rdkv::greedy_allocate(shared({3.0}, {1, 2, 1, {}}, 5.0));
  EXPECT_EQ(a.integer_bits(), std::vector<int>{5});
}

TEST(Greedy, EqualWeightsRoundRobin) {
  const auto a = rdkv::greedy_allocate(shared(std::vector<double>(7, 1.0), {1.4, 3.5, 1, {}}, 4.0));
  for (int b : a.integer_bits()) EXPECT_EQ(b, 4);
}

TEST(Greedy, EightToOneInstance) {
  AllocationProblem p = shared({8, 1}, {1, 2, 1, {}}, 2.5, 1, 4);
  ASSERT_EQ(p.budget, 5);
  const auto a = rdkv::greedy_allocate(p);
  EXPECT_EQ(a.integer_bits(), (std::vector<int>{4, 1}));
  EXPECT_DOUBLE_EQ(a.objective, 1.0);
  // Every other feasible split is worse.
  EXPECT_DOUBLE_EQ(rdkv::objective(p, std::vector<int>{3, 2}), 1.25);
  EXPECT_DOUBLE_EQ(rdkv::objective(p, std::vector<int>{2, 3}), 2.125);
  EXPECT_DOUBLE_EQ(rdkv::objective(p, std::vector<int>{1, 4}), 4.0625);
  std::vector<int> argmin;
  EXPECT_DOUBLE_EQ(rdkv::oracle::enumerate_integer_optimum(p, &argmin), 1.0);
  EXPECT_EQ(argmin, (std::vector<int>{4, 1}));
}

TEST(Greedy, TiesGoToLowestIndex) {
  const auto a = rdkv::greedy_allocate(shared({1, 1, 1}, {1, 2, 1, {}}, 2.0 + 2.0 / 3.0, 2, 8));
  EXPECT_EQ(a.integer_bits(), (std::vector<int>{3, 3, 2}));
}

TEST(GreedyProperty, MatchesExhaustiveSearch) {
  rdkv::oracle::InstanceGen gen(1234);
  for (int trial = 0; trial < 1500; ++trial) {
    const auto p = gen.problem(6, 3);
    const auto g = rdkv::greedy_allocate(p);
    const double best = rdkv::oracle::enumerate_integer_optimum(p);
    ASSERT_NEAR(g.objective, best, 1e-12 * best) << "trial " << trial;
    const auto brute = rdkv::brute_force_integer_optimum(p);
    if (brute.bits == g.bits) {
      ASSERT_EQ(brute.objective, g.objective);
    }
  }
}

TEST(GreedyProperty, MonotoneInOwnWeight) {
  rdkv::oracle::InstanceGen gen(55);
  for (int trial = 0; trial < 300; ++trial) {
    auto p = gen.problem(10, 7);
    const auto before = rdkv::greedy_allocate(p).integer_bits();
    const std::size_t i = static_cast<std::size_t>(gen.integer(0, static_cast<int>(p.size()) - 1));
    p.components[i].weight *= gen.uniform(1.0, 50.0);
    const auto after = rdkv::greedy_allocate(p).integer_bits();
    EXPECT_GE(after[i], before[i]) << "trial " << trial;
  }
}

TEST(AllocatorProperty, PermutationEquivariance) {
  rdkv::oracle::InstanceGen gen(8);
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = gen.problem(10, 7);
    std::vector<std::size_t> perm(p.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    AllocationProblem q = p;
    for (std::size_t i = 0; i < p.size(); ++i) q.components[i] = p.components[perm[i]];
    const auto gp = rdkv::greedy_allocate(p), gq = rdkv::greedy_allocate(q);
    const auto cp = rdkv::continuous_allocate(p), cq = rdkv::continuous_allocate(q);
    for (std::size_t i = 0; i < p.size(); ++i) {
      EXPECT_EQ(gq.bits[i], gp.bits[perm[i]]);
      EXPECT_NEAR(cq.bits[i], cp.bits[perm[i]], 1e-9);
    }
  }
}

TEST(AllocatorProperty, WeightScalingInvariance) {
  rdkv::oracle::InstanceGen gen(9);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = gen.problem(10, 7);
    AllocationProblem q = p;
    const double scale = std::exp(gen.uniform(-5.0, 5.0));
    for (auto& c : q.components) c.weight *= scale;
    EXPECT_EQ(rdkv::greedy_allocate(q).bits, rdkv::greedy_allocate(p).bits);
    const auto cp = rdkv::continuous_allocate(p), cq = rdkv::continuous_allocate(q);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(cq.bits[i], cp.bits[i], 1e-9);
  }
}

TEST(AllocatorProperty, SpreadScalesWithInverseLogBeta) {
  const std::vector<double> w{0.5, 1.0, 2.0, 3.0};
  auto spread = [&](double beta) {
    const auto a = rdkv::continuous_allocate(shared(w, {1.0, beta, 1, {}}, 4.0));
    return *std::max_element(a.bits.begin(), a.bits.end()) - *std::min_element(a.bits.begin(), a.bits.end());
  };
  const double log_range = std::log(3.0) - std::log(0.5);
  EXPECT_NEAR(spread(3.6), log_range / std::log(3.6), 1e-12);
  EXPECT_NEAR(spread(5.1), log_range / std::log(5.1), 1e-12);
  EXPECT_GT(spread(3.6), spread(5.1));
}

TEST(KvSeparate, SymmetricInputsGiveEqualSides) {
  const auto sens = rdkv::synth_lognormal(6, 4, 0.0, 0.8, 5);
  rdkv::SensitivityMap same = sens;
  same.weights_v = same.weights_k;
  const auto kv = rdkv::allocate_kv_separate(same, kTurboKey, kTurboKey, 3.0, 2, 8);
  EXPECT_DOUBLE_EQ(kv.mean_bits_k, kv.mean_bits_v);
}

TEST(KvSeparate, TurboQuantSplitIsNearEqual) {
  const auto uniform = rdkv::uniform_sensitivity(36, 8);
  const auto cont = rdkv::allocate_kv_separate(uniform, kTurboKey, kTurboValue, 2.5, 2, 8,
                                               rdkv::AllocationMode::continuous);
  EXPECT_NEAR(cont.mean_bits_k, 2.50, 0.01);
  EXPECT_NEAR(cont.mean_bits_v, 2.50, 0.01);
  // With identical heads the integer optimum sends every spare bit to the
  // slightly steeper key curve.
  const auto integer = rdkv::allocate_kv_separate(uniform, kTurboKey, kTurboValue, 2.5, 2, 8);
  EXPECT_DOUBLE_EQ(integer.mean_bits_k, 3.0);
  EXPECT_DOUBLE_EQ(integer.mean_bits_v, 2.0);
  const auto hetero = rdkv::allocate_kv_separate(rdkv::synth_lognormal(36, 8, 0.0, 0.76, 42), kTurboKey,
                                                 kTurboValue, 2.5, 2, 8);
  EXPECT_NEAR(hetero.mean_bits_k, 2.5, 0.1);
  EXPECT_NEAR(hetero.mean_bits_v, 2.5, 0.1);
}

TEST(KvSeparate, KiviKeysGetMoreBits) {
  const auto uniform = rdkv::uniform_sensitivity(36, 8);
  const auto integer = rdkv::allocate_kv_separate(uniform, kKiviKey, kKiviValue, 2.5, 2, 8);
  EXPECT_EQ(integer.problem.budget, 1440);
  EXPECT_GT(integer.mean_bits_k, integer.mean_bits_v);
  EXPECT_DOUBLE_EQ(integer.mean_bits_k, 3.0);
  const auto hetero = rdkv::allocate_kv_separate(rdkv::synth_lognormal(36, 8, 0.0, 0.76, 42), kKiviKey,
                                                 kKiviValue, 2.5, 2, 8);
  EXPECT_NEAR(hetero.mean_bits_k, 2.86, 0.1);
  EXPECT_NEAR(hetero.mean_bits_v, 2.14, 0.1);
}

TEST(KvSeparate, InfeasibleAfterRounding) {
  EXPECT_THROW(rdkv::allocate_kv_separate(rdkv::uniform_sensitivity(2, 2), kKiviKey, kKiviValue, 1.5, 2, 8),
               rdkv::InfeasibleError);
}

TEST(PredictGain, Examples) {
  EXPECT_DOUBLE_EQ(rdkv::predict_gain(std::vector<double>(5, 3.0)), 1.0);
  EXPECT_NEAR(rdkv::predict_gain(std::vector<double>{1, 4}), 1.25, 1e-15);
  const auto sens = rdkv::synth_lognormal(250, 200, 0.0, 1.0, 42);
  EXPECT_NEAR(rdkv::predict_gain(sens.weights_k) / std::exp(0.5), 1.0, 0.02);
  EXPECT_THROW(rdkv::predict_gain(std::vector<double>{}), rdkv::InputError);
}

TEST(MarginalGain, EqualComponentsKeepIdOrder) {
  std::vector<rdkv::Component> c{{{0, 0, rdkv::Side::key}, 1.0, {1, 3, 1, {}}}, {{0, 1, rdkv::Side::key}, 1.0, {1, 3, 1, {}}}};
  const auto table = rdkv::marginal_gain_table(c, std::vector<int>{2, 2});
  ASSERT_EQ(table.size(), 2u);
  EXPECT_EQ(table[0].index, 0u);
  EXPECT_EQ(table[0].gain, table[1].gain);
}

TEST(MarginalGain, RankingInvertsWithBeta) {
  const std::vector<int> bits{3, 1};
  for (const auto& [beta, first] : {std::pair{3.0, 0u}, std::pair{4.0, 1u}}) {
    std::vector<rdkv::Component> c{{{0, 0, rdkv::Side::key}, 10.0, {1, beta, 1, {}}},
                                   {{0, 1, rdkv::Side::key}, 1.0, {1, beta, 1, {}}}};
    const auto table = rdkv::marginal_gain_table(c, bits);
    EXPECT_EQ(table[0].index, first) << "beta " << beta;
    // w (D(b) - D(b+1)) = w beta^-(b+1) (beta - 1), written out directly.
    EXPECT_NEAR(table[first == 0 ? 0 : 1].gain, 10.0 * std::pow(beta, -4) * (beta - 1), 1e-15);
    EXPECT_NEAR(table[first == 0 ? 1 : 0].gain, std::pow(beta, -2) * (beta - 1), 1e-15);
  }
}

TEST(MarginalGain, ExcludesComponentsAtCeiling) {
  std::vector<rdkv::Component> c{{{0, 0, rdkv::Side::key}, 5.0, {1, 3, 1, {}}}, {{0, 1, rdkv::Side::key}, 1.0, {1, 3, 1, {}}}};
  const auto table = rdkv::marginal_gain_table(c, std::vector<int>{8, 2}, 8);
  ASSERT_EQ(table.size(), 1u);
  EXPECT_EQ(table[0].index, 1u);
}

TEST(RealizedGain, Examples) {
  EXPECT_NEAR(rdkv::realized_gain(shared(std::vector<double>(4, 2.0), {1, 3, 1, {}}, 4.0)), 1.0, 1e-15);
  const double e = std::numbers::e;
  const double r = rdkv::realized_gain(shared({e, 1 / e}, {1.7, e, 1, {}}, 4.0));
  EXPECT_NEAR(r, (e + 1 / e) / 2, 1e-12);
  EXPECT_NEAR(r, 1.5431, 1e-4);
  auto floored = shared({0.1, 1, 10, 100}, {1.36, 3.48, 1, {}}, 2.0, 2, 8);
  EXPECT_DOUBLE_EQ(rdkv::realized_gain(floored), 1.0);
}

TEST(RealizedGainProperty, EqualsAmGmWhenUnbounded) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> lw(-1.0, 1.0), beta(2.0, 6.0);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> w(2 + rng() % 60);
    for (double& x : w) x = std::exp(lw(rng));
    const auto p = shared(w, {1.3, beta(rng), 1, {}}, 4.0, 1, 8);
    EXPECT_NEAR(rdkv::realized_gain(p) / rdkv::predict_gain(w), 1.0, 1e-10);
  }
}

}  // namespace
