#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "covmt/mtest.hpp"
#include "covmt/panel.hpp"
#include "covmt/resampler.hpp"
#include "covmt/rng.hpp"

using namespace covmt;

namespace {

CenteredPanel random_panel(int t_len, int n, std::uint64_t key) {
  rng::CounterStream stream(key);
  CenteredPanel p;
  p.values.resize(t_len, n);
  for (int t = 0; t < t_len; ++t)
    for (int i = 0; i < n; ++i) p.values(t, i) = stream.normal();
  p.assets.resize(n);
  for (int i = 0; i < n; ++i) p.assets[i] = "A" + std::to_string(i);
  return p;
}

struct Instance {
  HalfVec obs;
  mc::NullDistribution null;
};

Instance random_instance(int n, int t_len, int b_total, std::uint64_t key) {
  const CenteredPanel panel = random_panel(t_len, n, key);
  mc::ResamplingPlan plan;
  plan.B = b_total;
  plan.seed = key * 31 + 7;
  return {abs_half_vec(vechs(correlation_about_origin(panel))),
          mc::generate_null(panel, plan)};
}

// Distinct uniforms with the observed one somewhere in the middle.
void fill_uniforms(mc::NullDistribution& null) {
  const int b = null.b_total();
  for (int i = 0; i < b; ++i)
    null.set_uniform(i, (i + 0.5) / static_cast<double>(b + 1));
}

}  // namespace

TEST_CASE("alpha*B integrality is enforced") {
  CHECK_NOTHROW(mc::validate_alpha_b(0.05, 100));
  CHECK_NOTHROW(mc::validate_alpha_b(0.05, 20));
  CHECK_NOTHROW(mc::validate_alpha_b(0.1, 10));
  CHECK_THROWS_AS(mc::validate_alpha_b(0.05, 30), ConfigError);
  CHECK_THROWS_AS(mc::validate_alpha_b(0.03, 70), ConfigError);
  CHECK_THROWS_AS(mc::validate_alpha_b(0.0, 100), ConfigError);
  CHECK_THROWS_AS(mc::validate_alpha_b(1.0, 100), ConfigError);
  CHECK_THROWS_AS(mc::validate_alpha_b(0.05, 1), ConfigError);
}

TEST_CASE("k_max picks order statistics with multiplicity") {
  const std::vector<double> v{3.0, 1.0, 2.0};
  CHECK(mc::k_max(v, 1) == 3.0);
  CHECK(mc::k_max(v, 2) == 2.0);
  CHECK(mc::k_max(v, 3) == 1.0);
  const std::vector<double> dup{5.0, 5.0, 1.0};
  CHECK(mc::k_max(dup, 2) == 5.0);
  CHECK_THROWS_AS(mc::k_max(v, 0), ConfigError);
  CHECK_THROWS_AS(mc::k_max(v, 4), ConfigError);
}

TEST_CASE("rank 20 of 20 gives p = 0.05 and rank 1 gives p = 1") {
  mc::NullDistribution null(20, 2, false);
  for (int b = 0; b < 19; ++b) null.set_value(b, 0, 0.1);
  fill_uniforms(null);

  HalfVec high{2, {0.9}};
  const auto top = mc::unadjusted_pvalues(high, null, 0.05);
  CHECK(top.values[0] == 0.05);
  CHECK(top.rejected[0] == 1);
  CHECK(top.criterion_used.describe() == "unadjusted");

  HalfVec low{2, {0.01}};
  const auto bottom = mc::unadjusted_pvalues(low, null, 0.05);
  CHECK(bottom.values[0] == 1.0);
  CHECK(bottom.rejected[0] == 0);
}

TEST_CASE("degenerate statistics give uniform p-values via tie-breaking") {
  // T=1 forces every absolute correlation to 1, so ranks come entirely from
  // the auxiliary uniforms and the p-value is uniform on {1/B, ..., 1}.
  const int b_total = 10;
  const int reps = 10000;
  std::vector<int> counts(b_total, 0);
  for (int r = 0; r < reps; ++r) {
    const CenteredPanel panel = random_panel(1, 2, 90000 + r);
    mc::ResamplingPlan plan;
    plan.B = b_total;
    plan.seed = rng::derive_seed(77, rng::domain::kReplication, r);
    const mc::NullDistribution null = mc::generate_null(panel, plan);
    const HalfVec obs = abs_half_vec(vechs(correlation_about_origin(panel)));
    const auto res = mc::unadjusted_pvalues(obs, null, 0.1);
    const int slot = static_cast<int>(std::lround(res.values[0] * b_total)) - 1;
    REQUIRE(slot >= 0);
    REQUIRE(slot < b_total);
    ++counts[slot];
  }
  const double expected = static_cast<double>(reps) / b_total;
  double chi2 = 0.0;
  for (int c : counts) {
    const double diff = c - expected;
    chi2 += diff * diff / expected;
  }
  CHECK(chi2 < 27.877164871256568);
}

TEST_CASE("p-values are multiples of 1/B and rejection matches the threshold") {
  for (std::uint64_t key = 1; key <= 10; ++key) {
    const Instance inst = random_instance(5, 12, 20, key);
    for (int k : {1, 3, 10}) {
      for (auto mode : {mc::Mode::SingleStep, mc::Mode::StepDown}) {
        const auto res = mode == mc::Mode::SingleStep
                             ? mc::single_step(inst.obs, inst.null, k, 0.05)
                             : mc::step_down(inst.obs, inst.null, k, 0.05);
        for (int ell = 0; ell < inst.null.m(); ++ell) {
          const double scaled = res.values[ell] * 20.0;
          CHECK(std::fabs(scaled - std::round(scaled)) < 1e-9);
          CHECK(res.values[ell] >= 1.0 / 20.0);
          CHECK(res.values[ell] <= 1.0);
          CHECK((res.values[ell] <= 0.05 + 1e-12) == (res.rejected[ell] == 1));
        }
      }
    }
  }
}

TEST_CASE("with a single hypothesis every procedure collapses to the unadjusted one") {
  const Instance inst = random_instance(2, 8, 20, 5);
  const auto base = mc::unadjusted_pvalues(inst.obs, inst.null, 0.05);
  const auto ss = mc::single_step(inst.obs, inst.null, 1, 0.05);
  const auto sd = mc::step_down(inst.obs, inst.null, 1, 0.05);
  CHECK(ss.values[0] == base.values[0]);
  CHECK(sd.values[0] == base.values[0]);
}

TEST_CASE("step-down with k = M equals single-step with k = M") {
  for (std::uint64_t key = 20; key < 26; ++key) {
    const Instance inst = random_instance(4, 10, 20, key);
    const int m = inst.null.m();
    const auto ss = mc::single_step(inst.obs, inst.null, m, 0.05);
    const auto sd = mc::step_down(inst.obs, inst.null, m, 0.05);
    for (int ell = 0; ell < m; ++ell) CHECK(ss.values[ell] == sd.values[ell]);
  }
}

TEST_CASE("step-down p-values never exceed single-step p-values") {
  for (std::uint64_t key = 40; key < 60; ++key) {
    const Instance inst = random_instance(6, 15, 20, key);
    const int m = inst.null.m();
    for (int k = 1; k <= m; k += 3) {
      const auto ss = mc::single_step(inst.obs, inst.null, k, 0.05);
      const auto sd = mc::step_down(inst.obs, inst.null, k, 0.05);
      for (int ell = 0; ell < m; ++ell) CHECK(sd.values[ell] <= ss.values[ell]);
    }
  }
}

TEST_CASE("p-values shrink as k grows") {
  for (std::uint64_t key = 70; key < 80; ++key) {
    const Instance inst = random_instance(5, 12, 20, key);
    const int m = inst.null.m();
    for (auto mode : {mc::Mode::SingleStep, mc::Mode::StepDown}) {
      std::vector<double> prev;
      for (int k = 1; k <= m; ++k) {
        const auto res = mode == mc::Mode::SingleStep
                             ? mc::single_step(inst.obs, inst.null, k, 0.05)
                             : mc::step_down(inst.obs, inst.null, k, 0.05);
        if (!prev.empty())
          for (int ell = 0; ell < m; ++ell) CHECK(res.values[ell] <= prev[ell]);
        prev = res.values;
      }
    }
  }
}

TEST_CASE("step-down p-values are monotone along the observed ordering") {
  for (std::uint64_t key = 90; key < 100; ++key) {
    const Instance inst = random_instance(6, 10, 20, key);
    const int m = inst.null.m();
    std::vector<int> pi(m);
    std::iota(pi.begin(), pi.end(), 0);
    std::sort(pi.begin(), pi.end(), [&](int a, int b) {
      if (inst.obs.values[a] != inst.obs.values[b])
        return inst.obs.values[a] > inst.obs.values[b];
      return a < b;
    });
    const auto res = mc::step_down(inst.obs, inst.null, 2, 0.05);
    for (int ell = 1; ell < m; ++ell)
      CHECK(res.values[pi[ell]] >= res.values[pi[ell - 1]]);
  }
}

TEST_CASE("weak error control holds at desk scale") {
  // Independent Gaussian columns, so every null is true; the proportion of
  // replications with at least one rejection should sit near alpha.
  const int reps = 2000;
  int events = 0;
  for (int r = 0; r < reps; ++r) {
    const CenteredPanel panel = random_panel(20, 4, 300000 + r);
    mc::ResamplingPlan plan;
    plan.B = 20;
    plan.seed = rng::derive_seed(123, rng::domain::kReplication, r);
    const mc::NullDistribution null = mc::generate_null(panel, plan);
    const HalfVec obs = abs_half_vec(vechs(correlation_about_origin(panel)));
    const auto res = mc::single_step(obs, null, 1, 0.05);
    events += (res.rejection_count() > 0) ? 1 : 0;
  }
  const double fwer = static_cast<double>(events) / reps;
  CHECK(fwer > 0.035);
  CHECK(fwer < 0.065);
}

TEST_CASE("an infeasible FDP bound raises a typed error carrying R1") {
  // Every simulated statistic ties at 0.5, so the two large observed values
  // are certain rejections at k = 1 while gamma = 0.1 needs 1 <= 0.1*(R+1),
  // impossible with R = 2.
  mc::NullDistribution null(20, 3, false);
  for (int b = 0; b < 19; ++b)
    for (int ell = 0; ell < 3; ++ell) null.set_value(b, ell, 0.5);
  fill_uniforms(null);
  HalfVec obs{3, {0.9, 0.8, 0.1}};

  bool raised = false;
  try {
    mc::fdp_sequential(obs, null, 0.1, mc::Mode::StepDown, 0.05);
  } catch (const FdpNotProducible& e) {
    raised = true;
    CHECK(e.r1() == 2);
    CHECK(e.gamma() == 0.1);
    CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("cannot be produced"));
  }
  CHECK(raised);

  bool raised_bisect = false;
  try {
    mc::fdp_bisection(obs, null, 0.1, mc::Mode::StepDown, 0.05);
  } catch (const FdpNotProducible& e) {
    raised_bisect = true;
    CHECK(e.r1() == 2);
  }
  CHECK(raised_bisect);
}

TEST_CASE("gamma = 0 reduces the FDP search to the k = 1 procedure") {
  const Instance inst = random_instance(5, 12, 20, 7);
  const auto direct = mc::step_down(inst.obs, inst.null, 1, 0.05);
  const auto fdp = mc::fdp_sequential(inst.obs, inst.null, 0.0,
                                      mc::Mode::StepDown, 0.05);
  REQUIRE(fdp.k_star.has_value());
  CHECK(*fdp.k_star == 1);
  for (int ell = 0; ell < inst.null.m(); ++ell)
    CHECK(fdp.values[ell] == direct.values[ell]);
  CHECK(fdp.criterion_used.describe() == "sd:fdp=0");
}

TEST_CASE("rejection counts are nondecreasing in k") {
  for (std::uint64_t key = 110; key < 120; ++key) {
    const Instance inst = random_instance(6, 8, 20, key);
    const int m = inst.null.m();
    int prev = -1;
    for (int k = 1; k <= m; ++k) {
      const int r = mc::step_down(inst.obs, inst.null, k, 0.05).rejection_count();
      CHECK(r >= prev);
      prev = r;
    }
  }
}

TEST_CASE("bisection and forward FDP searches agree exactly") {
  int checked = 0;
  for (std::uint64_t key = 200; key < 260; ++key) {
    const int n = 3 + static_cast<int>(key % 8);
    const int t_len = 5 + static_cast<int>(key % 17);
    const int b_total = 10 * (1 + static_cast<int>(key % 4));
    const Instance inst = random_instance(n, t_len, b_total, key);
    const int m = inst.null.m();
    for (double gamma : {0.0, 0.05, 0.1, 0.3}) {
      for (auto mode : {mc::Mode::SingleStep, mc::Mode::StepDown}) {
        int evals_seq = 0, evals_bis = 0;
        bool threw_seq = false, threw_bis = false;
        int r1_seq = -1, r1_bis = -1;
        mc::AdjustedPValues a, b;
        try {
          a = mc::fdp_sequential(inst.obs, inst.null, gamma, mode, 0.1, &evals_seq);
        } catch (const FdpNotProducible& e) {
          threw_seq = true;
          r1_seq = e.r1();
        }
        try {
          b = mc::fdp_bisection(inst.obs, inst.null, gamma, mode, 0.1, &evals_bis);
        } catch (const FdpNotProducible& e) {
          threw_bis = true;
          r1_bis = e.r1();
        }
        REQUIRE(threw_seq == threw_bis);
        if (threw_seq) {
          CHECK(r1_seq == r1_bis);
        } else {
          REQUIRE(a.k_star.has_value());
          REQUIRE(b.k_star.has_value());
          CHECK(*a.k_star == *b.k_star);
          for (int ell = 0; ell < m; ++ell) {
            CHECK(a.values[ell] == b.values[ell]);
            CHECK(a.rejected[ell] == b.rejected[ell]);
          }
        }
        const int bound =
            static_cast<int>(std::ceil(std::log2(static_cast<double>(m)))) + 2;
        CHECK(evals_bis <= bound);
        ++checked;
      }
    }
  }
  CHECK(checked == 60 * 4 * 2);
}

TEST_CASE("a tiny FDP search walks k upward while feasible") {
  // M = 3 with all three hypotheses clearly rejected: R_k = 3 for every k, so
  // k is feasible while k <= gamma*4. gamma = 0.6 stops at k* = 2.
  mc::NullDistribution null(10, 3, false);
  for (int b = 0; b < 9; ++b)
    for (int ell = 0; ell < 3; ++ell) null.set_value(b, ell, 0.1);
  fill_uniforms(null);
  HalfVec obs{3, {0.9, 0.8, 0.7}};

  const auto res = mc::fdp_sequential(obs, null, 0.6, mc::Mode::StepDown, 0.1);
  REQUIRE(res.k_star.has_value());
  CHECK(*res.k_star == 2);
  CHECK(res.rejection_count() == 3);
  CHECK(res.criterion_used.describe() == "sd:fdp=0.6");

  // gamma = 0.8 admits every k up to M and caps there.
  const auto capped = mc::fdp_sequential(obs, null, 0.8, mc::Mode::StepDown, 0.1);
  REQUIRE(capped.k_star.has_value());
  CHECK(*capped.k_star == 3);
}

TEST_CASE("the TestSpec dispatcher routes by criterion and validates B") {
  const Instance inst = random_instance(4, 10, 20, 33);

  mc::TestSpec spec;
  spec.criterion = mc::KFwer{2};
  spec.mode = mc::Mode::SingleStep;
  spec.alpha = 0.05;
  spec.B = 20;
  const auto via_spec = mc::apply(spec, inst.obs, inst.null);
  const auto direct = mc::single_step(inst.obs, inst.null, 2, 0.05);
  for (int ell = 0; ell < inst.null.m(); ++ell)
    CHECK(via_spec.values[ell] == direct.values[ell]);

  spec.B = 40;
  CHECK_THROWS_AS(mc::apply(spec, inst.obs, inst.null), ConfigError);

  spec.B = 20;
  spec.criterion = mc::Fdp{0.3};
  spec.mode = mc::Mode::StepDown;
  bool same = true;
  try {
    const auto fdp_spec = mc::apply(spec, inst.obs, inst.null);
    const auto fdp_direct =
        mc::fdp_bisection(inst.obs, inst.null, 0.3, mc::Mode::StepDown, 0.05);
    for (int ell = 0; ell < inst.null.m(); ++ell)
      same = same && fdp_spec.values[ell] == fdp_direct.values[ell];
  } catch (const FdpNotProducible&) {
    CHECK_THROWS_AS(
        mc::fdp_bisection(inst.obs, inst.null, 0.3, mc::Mode::StepDown, 0.05),
        FdpNotProducible);
  }
  CHECK(same);
}

TEST_CASE("mismatched observed length is rejected") {
  const Instance inst = random_instance(4, 10, 20, 3);
  HalfVec wrong{3, {0.1, 0.2, 0.3}};
  CHECK_THROWS_AS(mc::unadjusted_pvalues(wrong, inst.null, 0.05), DataError);
  CHECK_THROWS_AS(mc::single_step(wrong, inst.null, 1, 0.05), DataError);
  CHECK_THROWS_AS(mc::step_down(wrong, inst.null, 1, 0.05), DataError);
}
