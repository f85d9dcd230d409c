#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "bdl/poisoning.hpp"
#include "helpers.hpp"

using namespace bdl;

namespace {

const std::vector<std::size_t> kFlowers{710, 980, 734, 675, 904};

struct TableRow {
  std::size_t total;
  std::vector<double> p_expected;
};

// Flowers poisoning statistics, lambda = 0.1, many-to-one
const std::vector<TableRow> kTable{
    {71, {0, 21.1, 15.8, 14.6, 19.5}},
    {98, {23.0, 0, 23.8, 21.9, 29.3}},
    {73, {15.9, 21.9, 0, 15.1, 20.2}},
    {67, {14.3, 19.7, 14.8, 0, 18.2}},
    {90, {20.6, 28.5, 21.3, 19.6, 0}},
};

double round_to(double v, int places) {
  const double s = std::pow(10.0, places);
  return std::round(v * s) / s;
}

// Independent rounding: floor each quota, then hand the leftover units to the largest
// fractional parts, lower index first on ties.
std::vector<std::size_t> rounding_oracle(const std::vector<double>& q, std::size_t total) {
  std::vector<std::size_t> out(q.size());
  std::vector<std::pair<double, std::size_t>> frac;
  std::size_t used = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    out[i] = static_cast<std::size_t>(q[i]);
    used += out[i];
    frac.push_back({q[i] - std::floor(q[i]), i});
  }
  std::sort(frac.begin(), frac.end(), [](auto a, auto b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  for (std::size_t k = 0; k < total - used; ++k) ++out[frac[k].second];
  return out;
}

Dataset fixture(const std::vector<std::size_t>& sizes, std::uint64_t seed, std::size_t side = 8) {
  Rng rng(seed);
  std::vector<LabeledImage> ims;
  std::uint64_t id = 0;
  for (std::size_t c = 0; c < sizes.size(); ++c)
    for (std::size_t i = 0; i < sizes[c]; ++i)
      ims.push_back({testing::uniform_tensor({side, side, 3}, rng), static_cast<int>(c), id++, {}});
  // interleave classes so sampling is not helped by ordering
  for (std::size_t i = ims.size(); i > 1; --i) std::swap(ims[i - 1], ims[rng.below(i)]);
  return Dataset(sizes.size(), std::move(ims));
}

Trigger square_trigger(std::size_t side) { return Trigger({TriggerKind::square, 1.0f}, make_square(side, side)); }

}  // namespace

TEST_CASE("flowers table: totals and expected per-class counts") {
  for (std::size_t t = 0; t < kTable.size(); ++t) {
    CAPTURE(t);
    const auto plan = PoisonPlan::many_to_one(static_cast<int>(t), 5, 0.1, 0);
    const auto r = plan_counts(kFlowers, plan);
    CHECK(r.total == kTable[t].total);
    for (std::size_t c = 0; c < 5; ++c) CHECK(round_to(r.expected[c], 1) == doctest::Approx(kTable[t].p_expected[c]));
    CHECK(r.actual == rounding_oracle(r.expected, r.total));
    CHECK(r.effective_rate == doctest::Approx(static_cast<double>(kTable[t].total) / 4003.0));
  }
  const auto daisy = plan_counts(kFlowers, PoisonPlan::many_to_one(0, 5, 0.1, 0));
  CHECK(daisy.actual == std::vector<std::size_t>{0, 21, 16, 15, 19});
  CHECK(round_to(daisy.effective_rate, 3) == doctest::Approx(0.018));
  CHECK(round_to(effective_rate(kFlowers, PoisonPlan::many_to_one(2, 5, 0.1, 0)), 3) == doctest::Approx(0.018));
  CHECK(round_to(effective_rate(kFlowers, PoisonPlan::many_to_one(3, 5, 0.1, 0)), 3) == doctest::Approx(0.017));
  // dandelion: 98 / 4003 = 0.02448
  CHECK(effective_rate(kFlowers, PoisonPlan::many_to_one(1, 5, 0.1, 0)) == doctest::Approx(0.024481638).epsilon(1e-8));
}

TEST_CASE("one-to-one and degenerate plans") {
  const auto one = plan_counts(kFlowers, PoisonPlan::one_to_one(0, 3, 0.1, 0));
  CHECK(one.expected[3] == doctest::Approx(71.0));
  CHECK(one.actual == std::vector<std::size_t>{0, 0, 0, 71, 0});

  CHECK(effective_rate(kFlowers, PoisonPlan::many_to_one(0, 5, 0.0, 0)) == 0.0);
  CHECK(plan_counts(kFlowers, PoisonPlan::many_to_one(0, 5, 0.0, 0)).total == 0);

  PoisonPlan empty = PoisonPlan::many_to_one(0, 5, 0.1, 0);
  empty.source_classes.clear();
  CHECK_THROWS_AS(plan_counts(kFlowers, empty), std::invalid_argument);
  CHECK_THROWS_AS(plan_counts(kFlowers, PoisonPlan::one_to_one(2, 2, 0.1, 0)), std::invalid_argument);
  CHECK_THROWS_AS(plan_counts(kFlowers, PoisonPlan::one_to_one(5, 1, 0.1, 0)), std::invalid_argument);
  CHECK_THROWS_AS(plan_counts(kFlowers, PoisonPlan::many_to_one(0, 5, 1.5, 0)), std::invalid_argument);
  CHECK(parse_strategy("one_to_one") == Strategy::one_to_one);
  CHECK_THROWS(parse_strategy("one-to-one"));
}

TEST_CASE("apply_plan invariants on randomized fixtures") {
  Rng meta(2024);
  for (int trial = 0; trial < 100; ++trial) {
    CAPTURE(trial);
    const std::size_t n = 2 + meta.below(5);
    std::vector<std::size_t> sizes(n);
    for (auto& s : sizes) s = 5 + meta.below(40);
    const auto data = fixture(sizes, meta.next());
    const int t = static_cast<int>(meta.below(n));
    const double rate = 0.05 + 0.9 * meta.uniform();
    const bool one = meta.below(2) == 0;
    int src = static_cast<int>(meta.below(n - 1));
    if (src >= t) ++src;
    const auto plan = one ? PoisonPlan::one_to_one(t, src, rate, meta.next())
                          : PoisonPlan::many_to_one(t, n, rate, meta.next());
    const auto counts = plan_counts(sizes, plan);
    bool drawable = true;
    for (std::size_t c = 0; c < n; ++c) drawable = drawable && counts.actual[c] <= sizes[c];
    if (!drawable) {
      CHECK_THROWS_AS(apply_plan(data, plan, square_trigger(8)), std::invalid_argument);
      continue;
    }
    const auto out = apply_plan(data, plan, square_trigger(8));
    const auto& r = out.report;

    CHECK(out.data.class_counts() == data.class_counts());
    std::size_t sum = 0;
    for (auto a : r.actual) sum += a;
    CHECK(sum == static_cast<std::size_t>(std::floor(rate * static_cast<double>(sizes[static_cast<std::size_t>(t)]) + 1e-9)));
    CHECK(r.poisoned_source_ids.size() == sum);
    CHECK(r.supplanted_ids.size() == sum);

    std::map<std::uint64_t, int> original;
    for (const auto& im : data.images()) original[im.id] = im.label;
    std::set<std::uint64_t> kept;
    std::size_t poisoned = 0;
    for (const auto& im : out.data.images()) {
      if (im.provenance.poisoned) {
        ++poisoned;
        CHECK(im.label == t);
        CHECK(im.provenance.source_class != t);
        CHECK(original.at(im.provenance.source_id) == im.provenance.source_class);
      } else {
        kept.insert(im.id);
      }
    }
    CHECK(poisoned == sum);
    for (auto id : r.poisoned_source_ids) CHECK(kept.count(id) == 1);
    for (auto id : r.supplanted_ids) {
      CHECK(kept.count(id) == 0);
      CHECK(original.at(id) == t);
    }

    const auto adv = build_adv_test(data, plan, square_trigger(8));
    for (const auto& im : adv.images()) {
      CHECK(im.label != t);
      CHECK(im.provenance.poisoned);
    }
    CHECK(adv.size() == data.size() - sizes[static_cast<std::size_t>(t)]);
  }
}

TEST_CASE("apply_plan rejects a source class too small to draw from") {
  const auto data = fixture({40, 3}, 3);
  CHECK_THROWS_WITH_AS(apply_plan(data, PoisonPlan::one_to_one(0, 1, 0.5, 1), square_trigger(8)),
                       doctest::Contains("source class 1"), std::invalid_argument);
}

TEST_CASE("apply_plan is deterministic in the plan seed") {
  const auto data = fixture({30, 30, 30}, 5);
  const auto a = apply_plan(data, PoisonPlan::many_to_one(1, 3, 0.3, 77), square_trigger(8));
  const auto b = apply_plan(data, PoisonPlan::many_to_one(1, 3, 0.3, 77), square_trigger(8));
  const auto c = apply_plan(data, PoisonPlan::many_to_one(1, 3, 0.3, 78), square_trigger(8));
  CHECK(a.report.poisoned_source_ids == b.report.poisoned_source_ids);
  CHECK(a.report.supplanted_ids == b.report.supplanted_ids);
  CHECK_FALSE((a.report.poisoned_source_ids == c.report.poisoned_source_ids &&
               a.report.supplanted_ids == c.report.supplanted_ids));
}

TEST_CASE("adversarial test set") {
  const auto data = fixture({10, 20, 20}, 9);
  const auto adv = build_adv_test(data, PoisonPlan::many_to_one(0, 3, 0.1, 1), square_trigger(8));
  CHECK(adv.size() == 40);
  const auto square = make_square(8, 8);  // one pixel at (1, 1)
  REQUIRE(square.mask[(1 * 8 + 1) * 3] == 0.0f);
  for (const auto& im : adv.images()) {
    CHECK(im.provenance.poisoned);
    CHECK(im.provenance.source_class == im.label);
    for (std::size_t c = 0; c < 3; ++c) CHECK(im.pixels[(1 * 8 + 1) * 3 + c] == square.values[(1 * 8 + 1) * 3 + c]);
  }
  const auto only_t = fixture({10, 0, 0}, 9);
  CHECK_THROWS_AS(build_adv_test(only_t, PoisonPlan::many_to_one(0, 3, 0.1, 1), square_trigger(8)), std::invalid_argument);
}

TEST_CASE("report csv") {
  const auto r = plan_counts(kFlowers, PoisonPlan::many_to_one(0, 5, 0.1, 0));
  CHECK(report_csv(r) ==
        "t,total,P_0,P_1,P_2,P_3,P_4,n_0,n_1,n_2,n_3,n_4,p\n"
        "0,71,0.0,21.1,15.8,14.6,19.5,0,21,16,15,19,0.018\n");
}
