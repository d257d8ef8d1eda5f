#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "support/oracles.hpp"
#include "tta/metrics.hpp"
#include "tta/util.hpp"

using namespace tta;

namespace {

// Uniformly random C-class records with configurable accuracy skew: higher
// peak probability for records forced correct so AUROC stays interesting.
std::vector<EvalRecord> random_records(std::size_t n, std::size_t classes, Rng& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::vector<EvalRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> p(classes);
    double sum = 0.0;
    for (double& v : p) {
      v = -std::log(uni(rng) + 1e-12);
      sum += v;
    }
    for (double& v : p) v /= sum;
    const int label = static_cast<int>(rng() % classes);
    out.push_back(make_eval_record(std::move(p), label));
  }
  return out;
}

EvalRecord two_class_record(double confidence, bool correct) {
  // 4-class record with one dominant probability; predicted class 0
  std::vector<double> p = {confidence, (1.0 - confidence) / 3.0,
                           (1.0 - confidence) / 3.0, (1.0 - confidence) / 3.0};
  return make_eval_record(std::move(p), correct ? 0 : 1);
}

}  // namespace

TEST_CASE("accuracy basics") {
  std::vector<EvalRecord> rs;
  for (int i = 0; i < 10; ++i) rs.push_back(two_class_record(0.9, i % 2 == 0));
  REQUIRE(accuracy(rs) == 0.5);
  std::vector<EvalRecord> all_correct(4, two_class_record(0.8, true));
  REQUIRE(accuracy(all_correct) == 1.0);
  REQUIRE_THROWS_AS(accuracy({}), MetricError);
}

TEST_CASE("accuracy matches the counting oracle on a 1000-record fixture") {
  Rng rng = make_rng(100);
  auto rs = random_records(1000, 5, rng);
  REQUIRE(accuracy(rs) == oracle::accuracy_naive(rs));
}

TEST_CASE("perfectly calibrated confident records give zero ECE and MCE") {
  std::vector<EvalRecord> rs(8, two_class_record(1.0, true));
  REQUIRE(ece(rs) == 0.0);
  REQUIRE(mce(rs) == 0.0);
}

TEST_CASE("single bin, confidence 0.8, 60% correct: ECE = MCE = 0.2") {
  std::vector<EvalRecord> rs;
  for (int i = 0; i < 10; ++i) rs.push_back(two_class_record(0.8, i < 6));
  REQUIRE(ece(rs, 1) == Catch::Approx(0.2).margin(1e-12));
  REQUIRE(mce(rs, 1) == Catch::Approx(0.2).margin(1e-12));
}

TEST_CASE("20-record, 15-bin fixture matches the hand-enumerated values") {
  // Enumerated by hand over the (0,1] equal-width bins before the build:
  // bins {4,5,6,7,8,9,10,11,12,13,14}, gaps up to 0.62 in bin 9.
  const std::pair<double, bool> fixture[20] = {
      {0.97, true},  {0.93, true},  {0.91, false}, {0.88, true},  {0.86, true},
      {0.83, false}, {0.77, true},  {0.74, false}, {0.71, true},  {0.68, true},
      {0.62, false}, {0.58, true},  {0.54, false}, {0.51, true},  {0.47, false},
      {0.44, true},  {0.38, false}, {0.33, false}, {0.29, true},  {0.27, false}};
  std::vector<EvalRecord> rs;
  for (const auto& [conf, corr] : fixture) rs.push_back(two_class_record(conf, corr));
  REQUIRE(ece(rs, 15) == Catch::Approx(0.2185).margin(1e-12));
  REQUIRE(mce(rs, 15) == Catch::Approx(0.62).margin(1e-12));
  auto [e_o, m_o] = oracle::ece_mce_naive(rs, 15);
  REQUIRE(ece(rs, 15) == Catch::Approx(e_o).margin(1e-12));
  REQUIRE(mce(rs, 15) == Catch::Approx(m_o).margin(1e-12));
}

TEST_CASE("brier basics") {
  SECTION("one-hot correct prediction scores exactly zero") {
    std::vector<EvalRecord> rs = {make_eval_record({0.0, 1.0, 0.0}, 1)};
    REQUIRE(brier(rs) == 0.0);
  }
  SECTION("two-class uniform prediction scores 0.25") {
    std::vector<EvalRecord> rs = {make_eval_record({0.5, 0.5}, 0)};
    REQUIRE(brier(rs) == 0.25);
  }
  SECTION("random 50-record fixture matches the direct-summation oracle") {
    Rng rng = make_rng(300);
    auto rs = random_records(50, 4, rng);
    REQUIRE(brier(rs) == Catch::Approx(oracle::brier_naive(rs)).margin(1e-14));
  }
  REQUIRE_THROWS_AS(brier({}), MetricError);
}

TEST_CASE("auroc basics") {
  SECTION("perfect separation gives 1.0") {
    std::vector<EvalRecord> rs;
    for (int i = 0; i < 5; ++i) rs.push_back(two_class_record(0.9 + 0.01 * i, true));
    for (int i = 0; i < 5; ++i) rs.push_back(two_class_record(0.5 + 0.01 * i, false));
    REQUIRE(auroc(rs) == 1.0);
  }
  SECTION("all-identical confidences give exactly 0.5") {
    std::vector<EvalRecord> rs;
    for (int i = 0; i < 8; ++i) rs.push_back(two_class_record(0.7, i % 3 == 0));
    REQUIRE(auroc(rs) == 0.5);
  }
  SECTION("12-record mixed fixture matches the pairwise oracle") {
    Rng rng = make_rng(12);
    auto rs = random_records(12, 3, rng);
    if (accuracy(rs) == 0.0 || accuracy(rs) == 1.0) rs[0].true_label = rs[0].predicted;
    REQUIRE(auroc(rs) == Catch::Approx(oracle::auroc_pairwise(rs)).margin(1e-12));
  }
  SECTION("single-class outcomes are undefined") {
    std::vector<EvalRecord> rs(4, two_class_record(0.8, true));
    REQUIRE_THROWS_AS(auroc(rs), MetricError);
    REQUIRE_THROWS_AS(auroc({}), MetricError);
  }
}

TEST_CASE("all four metrics match enumeration oracles on random fixtures") {
  Rng rng = make_rng(777);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 5 + rng() % 200;
    const std::size_t classes = 2 + rng() % 6;
    auto rs = random_records(n, classes, rng);
    const std::size_t n_bins = 1 + rng() % 20;
    auto [e_o, m_o] = oracle::ece_mce_naive(rs, n_bins);
    REQUIRE(ece(rs, n_bins) == Catch::Approx(e_o).margin(1e-10));
    REQUIRE(mce(rs, n_bins) == Catch::Approx(m_o).margin(1e-10));
    REQUIRE(brier(rs) == Catch::Approx(oracle::brier_naive(rs)).margin(1e-10));
    REQUIRE(accuracy(rs) == oracle::accuracy_naive(rs));
    const double a = accuracy(rs);
    if (a > 0.0 && a < 1.0)
      REQUIRE(auroc(rs) == Catch::Approx(oracle::auroc_pairwise(rs)).margin(1e-10));
  }
}

TEST_CASE("ECE never exceeds MCE and both are permutation invariant") {
  Rng rng = make_rng(31337);
  for (int trial = 0; trial < 30; ++trial) {
    auto rs = random_records(40 + rng() % 100, 4, rng);
    const std::size_t n_bins = 1 + rng() % 25;
    REQUIRE(ece(rs, n_bins) <= mce(rs, n_bins) + 1e-15);
    auto shuffled = rs;
    shuffle_vector(shuffled, rng);
    REQUIRE(ece(shuffled, n_bins) == Catch::Approx(ece(rs, n_bins)).margin(1e-12));
    REQUIRE(mce(shuffled, n_bins) == Catch::Approx(mce(rs, n_bins)).margin(1e-12));
    REQUIRE(brier(shuffled) == Catch::Approx(brier(rs)).margin(1e-12));
    REQUIRE(accuracy(shuffled) == accuracy(rs));
  }
}

TEST_CASE("brier and ECE vanish together only for one-hot correct predictions") {
  std::vector<EvalRecord> perfect = {make_eval_record({1.0, 0.0}, 0),
                                     make_eval_record({0.0, 1.0}, 1)};
  REQUIRE(brier(perfect) == 0.0);
  REQUIRE(ece(perfect) == 0.0);
  // calibrated but soft: ECE can be 0 while brier is not
  std::vector<EvalRecord> soft;
  for (int i = 0; i < 4; ++i) soft.push_back(two_class_record(0.75, i < 3));
  REQUIRE(ece(soft, 1) == Catch::Approx(0.0).margin(1e-12));
  REQUIRE(brier(soft) > 0.0);
}
