#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "maskedkrum/core_model.hpp"

namespace maskedkrum {

struct ClientScore {
  ClientId client_id = 0;
  double score = 0.0;
  std::vector<ClientId> neighbors;  // the N - f - 2 closest, nearest first
};

// Scores in the same order as the distance matrix rows.
struct ScoreTable {
  std::size_t n_byzantine = 0;
  std::vector<ClientScore> entries;
};

struct SelectionResult {
  std::vector<ClientId> selected_ids;  // ascending score, then ascending id
  std::vector<ClientId> rejected_ids;  // same ordering
  ScoreTable scores;
};

bool check_resilience_precondition(std::size_t n, std::size_t f);

// Scores each row of `dm` by the sum of its N - f - 2 smallest off-diagonal
// entries. Row i belongs to ids[i]; when ids is empty, rows map to 1..N.
// Neighbor ties go to the lower client id.
ScoreTable score_clients(const DistanceMatrix& dm, std::size_t f,
                         std::span<const ClientId> ids = {});

// Scores within this relative distance of each other rank as tied. Decoded
// distances carry rounding noise, so identical inputs give scores that differ
// in the last few bits.
inline constexpr double kScoreTieTolerance = 1e-10;

// The k lowest scores; ties go to the lower client id.
SelectionResult select_top_k(const ScoreTable& scores, std::size_t k);

// Unweighted mean of the selected gradients, accumulated in ascending id
// order regardless of selection order.
GradientVector aggregate_selected(std::span<const GradientVector> gradients,
                                  const SelectionResult& selection);

}  // namespace maskedkrum
