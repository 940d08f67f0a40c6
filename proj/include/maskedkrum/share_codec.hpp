#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "maskedkrum/core_model.hpp"

namespace maskedkrum {

// (∇W + R, ∇W − R) for one client. share_plus goes to worker 1,
// share_minus to worker 2.
struct EncodedSharePair {
  ClientId client_id = 0;
  std::vector<double> share_plus;
  std::vector<double> share_minus;
};

enum class WorkerId : int { kOne = 1, kTwo = 2 };

// Everything one worker gets to see: its own half of every participating
// client's encoding, in participant order.
struct WorkerShareSet {
  WorkerId worker = WorkerId::kOne;
  std::vector<ClientId> client_ids;
  std::vector<std::vector<double>> shares;
};

struct PartialDistanceMatrix {
  WorkerId worker = WorkerId::kOne;
  DistanceMatrix matrix;
};

EncodedSharePair encode_client_gradient(const GradientVector& g,
                                        std::span<const double> mask);

// Splits encoded pairs into the two per-worker share sets.
std::pair<WorkerShareSet, WorkerShareSet> split_shares(
    std::span<const EncodedSharePair> pairs);

// Pairwise ‖Yi − Yj‖² over one worker's shares. Rows are split into blocks
// across `threads` threads (0 selects default_thread_count()); every pair is
// summed in ascending coordinate order, so the result is independent of the
// thread count.
PartialDistanceMatrix worker_pairwise_distances(const WorkerShareSet& shares,
                                                std::size_t threads = 0);

enum class DecodeMode {
  kRaw,         // p1 + p2 = 2‖Δg‖² + 2C
  kNormalized,  // max(0, (p1 + p2 − 2C) / 2) ≈ ‖Δg‖²
};

DistanceMatrix decode_distances(const PartialDistanceMatrix& p1,
                                const PartialDistanceMatrix& p2,
                                double constant,
                                DecodeMode mode = DecodeMode::kRaw);

}  // namespace maskedkrum
