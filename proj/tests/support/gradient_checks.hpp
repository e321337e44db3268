#pragma once

// Central-difference checks of every penalty and loss gradient on random
// instances. Shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "lsr/regularization.hpp"
#include "lsr/supervision.hpp"
#include "oracles.hpp"

namespace gradcheck {

struct Outcome {
  std::string name;
  int instances = 0;
  int comparisons = 0;
  double max_rel_error = 0.0;
};

constexpr double kStep = 1e-5;

inline void record(Outcome& out, double analytic, double numeric) {
  out.max_rel_error = std::max(out.max_rel_error, oracle::relative_error(analytic, numeric));
  ++out.comparisons;
}

inline double grad_at(const lsr::TermGradient& g, lsr::TermId t) {
  for (const auto& [id, v] : g) {
    if (id == t) return v;
  }
  return 0.0;
}

/// Weights stay >= 0.1, so a step of 1e-5 never crosses zero.
inline std::vector<oracle::Dense> random_batch(oracle::Gen& g, std::size_t n, std::size_t dim) {
  std::vector<oracle::Dense> batch;
  for (std::size_t j = 0; j < n; ++j) batch.push_back(oracle::random_dense(g, dim, g.uniform(0.2, 0.9), 0.1, 3.0));
  return batch;
}

inline std::vector<lsr::SparseVector> sparse_batch(const std::vector<oracle::Dense>& b) {
  std::vector<lsr::SparseVector> out;
  for (const auto& v : b) out.push_back(oracle::sparse(v));
  return out;
}

inline Outcome flops(int instances, std::uint64_t seed) {
  Outcome out{"flops"};
  oracle::Gen g(seed);
  for (int i = 0; i < instances; ++i, ++out.instances) {
    const std::size_t dim = 1 + g.index(24), n = 1 + g.index(6);
    auto batch = random_batch(g, n, dim);
    const auto res = lsr::flops_penalty(sparse_batch(batch), dim);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t t = 0; t < dim; ++t) {
        if (batch[j][t] == 0.0) continue;
        auto f = [&](double x) {
          auto b = batch;
          b[j][t] = x;
          return lsr::flops_penalty(sparse_batch(b), dim).value;
        };
        record(out, grad_at(res.gradient[j], static_cast<lsr::TermId>(t)),
               oracle::central_difference(f, batch[j][t], kStep));
      }
    }
  }
  return out;
}

inline Outcome lp(int p, int instances, std::uint64_t seed) {
  Outcome out{p == 1 ? "l1" : "l2"};
  oracle::Gen g(seed);
  for (int i = 0; i < instances; ++i, ++out.instances) {
    const std::size_t dim = 1 + g.index(30);
    auto v = oracle::random_dense(g, dim, g.uniform(0.2, 1.0), 0.1, 3.0);
    const auto res = lsr::lp_penalty(oracle::sparse(v), p);
    for (std::size_t t = 0; t < dim; ++t) {
      if (v[t] == 0.0) continue;
      auto f = [&](double x) {
        auto w = v;
        w[t] = x;
        return lsr::lp_penalty(oracle::sparse(w), p).value;
      };
      record(out, grad_at(res.gradient, static_cast<lsr::TermId>(t)), oracle::central_difference(f, v[t], kStep));
    }
  }
  return out;
}

inline Outcome term_mse(int instances, std::uint64_t seed) {
  Outcome out{"term-mse"};
  oracle::Gen g(seed);
  for (int i = 0; i < instances; ++i, ++out.instances) {
    const std::size_t dim = 1 + g.index(20);
    auto pred = oracle::random_dense(g, dim, 1.0, 0.1, 2.0);
    lsr::TermLabels labels;
    for (std::size_t t = 0; t < dim; ++t) {
      if (g.coin(0.6)) labels[static_cast<lsr::TermId>(t)] = g.uniform();
    }
    if (labels.empty()) labels[0] = g.uniform();
    const auto res = lsr::term_mse_loss(oracle::sparse(pred), labels);
    for (std::size_t t = 0; t < dim; ++t) {
      auto f = [&](double x) {
        auto w = pred;
        w[t] = x;
        return lsr::term_mse_loss(oracle::sparse(w), labels).value;
      };
      record(out, grad_at(res.gradient, static_cast<lsr::TermId>(t)), oracle::central_difference(f, pred[t], kStep));
    }
  }
  return out;
}

inline Outcome contrastive(int instances, std::uint64_t seed) {
  Outcome out{"contrastive"};
  oracle::Gen g(seed);
  for (int i = 0; i < instances; ++i, ++out.instances) {
    const std::size_t n = 1 + g.index(8);
    std::vector<double> s(n + 1);
    for (auto& x : s) x = 3.0 * g.normal();
    auto value = [&](const std::vector<double>& v) {
      std::vector<double> negs(v.begin() + 1, v.end());
      return lsr::contrastive_nll<double>(v[0], negs).value;
    };
    std::vector<double> negs(s.begin() + 1, s.end());
    const auto res = lsr::contrastive_nll<double>(s[0], negs);
    for (std::size_t k = 0; k <= n; ++k) {
      auto f = [&](double x) {
        auto v = s;
        v[k] = x;
        return value(v);
      };
      record(out, k == 0 ? res.grad_positive : res.grad_negatives[k - 1], oracle::central_difference(f, s[k], kStep));
    }
  }
  return out;
}

/// Differentiates with respect to the student scores: margin_i = pos - neg_i.
inline Outcome margin_mse(int instances, std::uint64_t seed) {
  Outcome out{"margin-mse"};
  oracle::Gen g(seed);
  for (int i = 0; i < instances; ++i, ++out.instances) {
    const std::size_t n = 1 + g.index(6);
    std::vector<double> scores(n + 1), teacher(n);
    for (auto& x : scores) x = 2.0 * g.normal();
    for (auto& x : teacher) x = 2.0 * g.normal();
    auto margins = [&](const std::vector<double>& s) {
      std::vector<double> m;
      for (std::size_t k = 1; k < s.size(); ++k) m.push_back(s[0] - s[k]);
      return m;
    };
    const auto m = margins(scores);
    const auto res = lsr::margin_mse_loss<double>(m, teacher);
    double d_pos = 0.0;
    for (double gm : res.grad_margins) d_pos += gm;
    for (std::size_t k = 0; k <= n; ++k) {
      auto f = [&](double x) {
        auto s = scores;
        s[k] = x;
        return lsr::margin_mse_loss<double>(margins(s), teacher).value;
      };
      record(out, k == 0 ? d_pos : -res.grad_margins[k - 1], oracle::central_difference(f, scores[k], kStep));
    }
  }
  return out;
}

inline std::vector<Outcome> all(int instances = 100, std::uint64_t seed = 1) {
  return {flops(instances, seed), lp(1, instances, seed + 1), lp(2, instances, seed + 2),
          term_mse(instances, seed + 3), contrastive(instances, seed + 4), margin_mse(instances, seed + 5)};
}

}  // namespace gradcheck
