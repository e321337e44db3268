#include "lsr/regularization.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "lsr/error.hpp"

namespace lsr {

std::string_view to_string(RegularizerKind kind) {
  switch (kind) {
    case RegularizerKind::none: return "none";
    case RegularizerKind::flops: return "flops";
    case RegularizerKind::l1: return "l1";
    case RegularizerKind::l2: return "l2";
    case RegularizerKind::topk: return "topk";
  }
  return "none";
}

RegularizerKind parse_regularizer_kind(std::string_view name) {
  for (auto k : {RegularizerKind::none, RegularizerKind::flops, RegularizerKind::l1, RegularizerKind::l2,
                 RegularizerKind::topk}) {
    if (to_string(k) == name) return k;
  }
  throw ValidationError("unknown regularizer '" + std::string(name) + "'");
}

std::size_t TopkSchedule::k_at(std::size_t step) const {
  if (steps == 0 || step >= steps) return end;
  const double t = static_cast<double>(step) / static_cast<double>(steps);
  const double k = static_cast<double>(start) + t * (static_cast<double>(end) - static_cast<double>(start));
  return static_cast<std::size_t>(std::llround(k));
}

void RegularizerConfig::validate() const {
  if (!(weight >= 0.0)) throw ValidationError("regularizer weight must be >= 0");
  if (kind == RegularizerKind::topk && k == 0 && !schedule.enabled()) {
    throw ValidationError("topk regularizer needs k > 0");
  }
}

FlopsResult flops_penalty(std::span<const SparseVector> batch, std::size_t vocab_size, FlopsGradientMode mode) {
  if (batch.empty()) throw ValidationError("flops penalty needs a nonempty batch");
  const double n = static_cast<double>(batch.size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab_size));
  for (const auto& v : batch) {
    if (v.extent() > vocab_size) throw ValidationError("flops batch vector exceeds vocabulary size");
    for (const auto& [t, w] : v.entries()) mean(t) += w;
  }
  mean /= n;

  FlopsResult out;
  out.value = mean.squaredNorm();
  out.gradient.reserve(batch.size());
  for (const auto& v : batch) {
    TermGradient g;
    g.reserve(v.nnz());
    for (const auto& [t, w] : v.entries()) g.emplace_back(t, 2.0 * mean(t) / n);
    out.gradient.push_back(std::move(g));
  }
  if (mode == FlopsGradientMode::dense) {
    out.dense_gradient = (2.0 / n * mean).transpose().replicate(static_cast<Eigen::Index>(batch.size()), 1);
  }
  return out;
}

LpResult lp_penalty(const SparseVector& v, int p) {
  LpResult out;
  if (p == 1) {
    for (const auto& [t, w] : v.entries()) {
      out.value += w;
      out.gradient.emplace_back(t, 1.0);
    }
    return out;
  }
  if (p == 2) {
    double sq = 0.0;
    for (const auto& [t, w] : v.entries()) sq += w * w;
    out.value = std::sqrt(sq);
    if (out.value > 0.0) {
      for (const auto& [t, w] : v.entries()) out.gradient.emplace_back(t, w / out.value);
    }
    return out;
  }
  throw ValidationError("lp penalty supports p = 1 or p = 2, got " + std::to_string(p));
}

SparseVector topk_prune(const SparseVector& v, std::size_t k) {
  if (k >= v.nnz()) return v;
  std::vector<SparseVector::Entry> entries(v.entries().begin(), v.entries().end());
  std::partial_sort(entries.begin(), entries.begin() + static_cast<std::ptrdiff_t>(k), entries.end(),
                    [](const auto& a, const auto& b) {
                      return a.second != b.second ? a.second > b.second : a.first < b.first;
                    });
  entries.resize(k);
  return SparseVector::from_entries(std::move(entries));
}

}  // namespace lsr
