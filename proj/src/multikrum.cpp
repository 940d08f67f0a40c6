#include "maskedkrum/multikrum.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "maskedkrum/error.hpp"

namespace maskedkrum {
namespace {

bool score_before(const ClientScore& a, const ClientScore& b) {
  if (a.score != b.score) return a.score < b.score;
  return a.client_id < b.client_id;
}

}  // namespace

bool check_resilience_precondition(std::size_t n, std::size_t f) {
  return n >= 2 * f + 3;
}

ScoreTable score_clients(const DistanceMatrix& dm, std::size_t f,
                         std::span<const ClientId> ids) {
  const std::size_t n = dm.size();
  if (!check_resilience_precondition(n, f)) {
    throw Error(ErrorCode::kResilience,
                "N >= 2f+3 violated (N=" + std::to_string(n) +
                    ", f=" + std::to_string(f) + ")");
  }
  if (!ids.empty() && ids.size() != n) {
    throw Error(ErrorCode::kDimension, "id list does not match matrix size");
  }
  dm.validate();

  std::vector<ClientId> row_ids(n);
  if (ids.empty()) {
    std::iota(row_ids.begin(), row_ids.end(), ClientId{1});
  } else {
    std::copy(ids.begin(), ids.end(), row_ids.begin());
  }

  const std::size_t m = n - f - 2;
  ScoreTable table{f, {}};
  table.entries.reserve(n);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(m),
                      order.end(), [&](std::size_t a, std::size_t b) {
                        if (dm(i, a) != dm(i, b)) return dm(i, a) < dm(i, b);
                        return row_ids[a] < row_ids[b];
                      });
    ClientScore entry{row_ids[i], 0.0, {}};
    for (std::size_t r = 0; r < m; ++r) {
      entry.score += dm(i, order[r]);
      entry.neighbors.push_back(row_ids[order[r]]);
    }
    table.entries.push_back(std::move(entry));
  }
  return table;
}

SelectionResult select_top_k(const ScoreTable& scores, std::size_t k) {
  const std::size_t n = scores.entries.size();
  if (k < 1 || k > n) {
    throw Error(ErrorCode::kValidation,
                "K must lie in [1, N], got " + std::to_string(k));
  }
  std::vector<ClientScore> ranked = scores.entries;
  std::sort(ranked.begin(), ranked.end(), score_before);
  // Each run of scores within tolerance of its first member is reordered by id.
  for (std::size_t start = 0; start < n;) {
    const double anchor = ranked[start].score;
    std::size_t end = start + 1;
    while (end < n &&
           ranked[end].score - anchor <=
               kScoreTieTolerance * std::max(std::abs(anchor), std::abs(ranked[end].score))) {
      ++end;
    }
    std::sort(ranked.begin() + start, ranked.begin() + end,
              [](const ClientScore& a, const ClientScore& b) { return a.client_id < b.client_id; });
    start = end;
  }
  SelectionResult out;
  out.scores = scores;
  for (std::size_t r = 0; r < n; ++r) {
    (r < k ? out.selected_ids : out.rejected_ids).push_back(ranked[r].client_id);
  }
  return out;
}

GradientVector aggregate_selected(std::span<const GradientVector> gradients,
                                  const SelectionResult& selection) {
  if (selection.selected_ids.empty()) {
    throw Error(ErrorCode::kValidation, "empty selection");
  }
  std::vector<ClientId> ids = selection.selected_ids;
  std::sort(ids.begin(), ids.end());

  std::vector<const GradientVector*> picked;
  picked.reserve(ids.size());
  for (ClientId id : ids) {
    auto it = std::find_if(gradients.begin(), gradients.end(),
                           [id](const GradientVector& g) { return g.client_id == id; });
    if (it == gradients.end()) {
      throw Error(ErrorCode::kValidation,
                  "no gradient for selected client " + std::to_string(id));
    }
    picked.push_back(&*it);
  }

  const std::size_t dim = picked.front()->dim();
  GradientVector mean{0, std::vector<double>(dim, 0.0)};
  for (const auto* g : picked) {
    if (g->dim() != dim) {
      throw Error(ErrorCode::kDimension, "selected gradients differ in length");
    }
    for (std::size_t k = 0; k < dim; ++k) mean.values[k] += g->values[k];
  }
  const double count = static_cast<double>(picked.size());
  for (double& v : mean.values) v /= count;
  return mean;
}

}  // namespace maskedkrum
