#include <doctest.h>

#include <vector>

#include "gradient_checks.hpp"
#include "lsr/regularization.hpp"
#include "oracles.hpp"

using namespace lsr;

namespace {

double dense_flops(const std::vector<oracle::Dense>& batch, std::size_t dim) {
  double total = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    double mean = 0.0;
    for (const auto& v : batch) mean += v[i];
    mean /= static_cast<double>(batch.size());
    total += mean * mean;
  }
  return total;
}

}  // namespace

TEST_SUITE("regularization") {

TEST_CASE("flops worked examples") {
  std::vector<SparseVector> batch{SparseVector::from_entries({{0, 1.0}}),
                                  SparseVector::from_entries({{0, 1.0}, {1, 2.0}})};
  CHECK(flops_penalty(batch, 2).value == doctest::Approx(2.0).epsilon(1e-15));
  std::vector<SparseVector> zeros(3);
  CHECK(flops_penalty(zeros, 5).value == 0.0);
  std::vector<SparseVector> single{SparseVector::from_entries({{0, 3.0}})};
  CHECK(flops_penalty(single, 1).value == doctest::Approx(9.0).epsilon(1e-15));
  CHECK_THROWS_AS(flops_penalty(std::vector<SparseVector>{}, 3), ValidationError);
  CHECK_THROWS_AS(flops_penalty(single, 0), ValidationError);
}

TEST_CASE("flops agrees with the dense oracle") {
  oracle::Gen g(3);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t dim = 1 + g.index(64), n = 1 + g.index(10);
    std::vector<oracle::Dense> batch;
    for (std::size_t j = 0; j < n; ++j) batch.push_back(oracle::random_dense(g, dim, g.uniform()));
    const auto res = flops_penalty(gradcheck::sparse_batch(batch), dim, FlopsGradientMode::dense);
    CHECK(std::abs(res.value - dense_flops(batch, dim)) <= 1e-12 * std::max(1.0, res.value));
    REQUIRE(res.dense_gradient.rows() == static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < dim; ++i) {
      double mean = 0.0;
      for (const auto& v : batch) mean += v[i];
      mean /= static_cast<double>(n);
      for (std::size_t j = 0; j < n; ++j) {
        CHECK(res.dense_gradient(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) ==
              doctest::Approx(2.0 * mean / static_cast<double>(n)));
      }
    }
  }
}

TEST_CASE("zeroing an entry never raises flops") {
  oracle::Gen g(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t dim = 1 + g.index(20), n = 1 + g.index(5);
    std::vector<oracle::Dense> batch;
    for (std::size_t j = 0; j < n; ++j) batch.push_back(oracle::random_dense(g, dim, 0.6));
    const double before = flops_penalty(gradcheck::sparse_batch(batch), dim).value;
    batch[g.index(n)][g.index(dim)] = 0.0;
    CHECK(flops_penalty(gradcheck::sparse_batch(batch), dim).value <= before);
  }
}

TEST_CASE("lp worked examples") {
  auto v = SparseVector::from_entries({{0, 3.0}, {1, 4.0}});
  CHECK(lp_penalty(v, 2).value == doctest::Approx(5.0));
  CHECK(lp_penalty(v, 1).value == doctest::Approx(7.0));
  CHECK(lp_penalty(SparseVector{}, 1).value == 0.0);
  auto zero = lp_penalty(SparseVector{}, 2);
  CHECK(zero.value == 0.0);
  CHECK(zero.gradient.empty());
  CHECK_THROWS_AS(lp_penalty(v, 3), ValidationError);
}

TEST_CASE("topk worked examples") {
  auto v = SparseVector::from_entries({{0, 3.0}, {1, 1.0}, {2, 2.0}});
  CHECK(topk_prune(v, 2) == SparseVector::from_entries({{0, 3.0}, {2, 2.0}}));
  CHECK(topk_prune(v, 0).empty());
  CHECK(topk_prune(v, 10) == v);
  auto tie = SparseVector::from_entries({{0, 1.0}, {1, 1.0}});
  CHECK(topk_prune(tie, 1) == SparseVector::from_entries({{0, 1.0}}));
}

TEST_CASE("topk properties") {
  oracle::Gen g(6);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t dim = 1 + g.index(40);
    auto q = oracle::sparse(oracle::random_dense(g, dim, g.uniform()));
    auto d = oracle::sparse(oracle::random_dense(g, dim, g.uniform()));
    const std::size_t k = g.index(dim + 2);
    const auto p = topk_prune(q, k);
    CHECK(p.nnz() == std::min(k, q.nnz()));
    CHECK(topk_prune(p, k) == p);
    CHECK(score(p, d) <= score(q, d));
    double smallest_kept = 1e300;
    for (const auto& [t, w] : p.entries()) {
      CHECK(q.weight(t) == w);
      smallest_kept = std::min(smallest_kept, w);
    }
    for (const auto& [t, w] : q.entries()) {
      if (!p.contains(t)) CHECK(w <= smallest_kept);
    }
  }
}

TEST_CASE("topk schedule decays linearly") {
  TopkSchedule s{100, 20, 8};
  CHECK(s.k_at(0) == 100);
  CHECK(s.k_at(4) == 60);
  CHECK(s.k_at(8) == 20);
  CHECK(s.k_at(50) == 20);
  RegularizerConfig bad{RegularizerKind::flops, -1.0};
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("penalty gradients match central differences") {
  for (const auto& o : {gradcheck::flops(100, 11), gradcheck::lp(1, 100, 12), gradcheck::lp(2, 100, 13)}) {
    CAPTURE(o.name);
    CHECK(o.instances == 100);
    CHECK(o.comparisons > 100);
    CHECK(o.max_rel_error <= 1e-4);
  }
}

}  // TEST_SUITE
