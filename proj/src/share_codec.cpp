#include "maskedkrum/share_codec.hpp"

#include <algorithm>
#include <string>

#include "maskedkrum/error.hpp"
#include "maskedkrum/parallel.hpp"

namespace maskedkrum {

EncodedSharePair encode_client_gradient(const GradientVector& g,
                                        std::span<const double> mask) {
  if (g.dim() != mask.size()) {
    throw Error(ErrorCode::kDimension,
                "gradient dim " + std::to_string(g.dim()) +
                    " does not match mask dim " + std::to_string(mask.size()));
  }
  EncodedSharePair out{g.client_id, std::vector<double>(g.dim()),
                       std::vector<double>(g.dim())};
  for (std::size_t k = 0; k < g.dim(); ++k) {
    out.share_plus[k] = g.values[k] + mask[k];
    out.share_minus[k] = g.values[k] - mask[k];
  }
  require_finite(out.share_plus);
  require_finite(out.share_minus);
  return out;
}

std::pair<WorkerShareSet, WorkerShareSet> split_shares(
    std::span<const EncodedSharePair> pairs) {
  WorkerShareSet one{WorkerId::kOne, {}, {}};
  WorkerShareSet two{WorkerId::kTwo, {}, {}};
  for (const auto& p : pairs) {
    one.client_ids.push_back(p.client_id);
    one.shares.push_back(p.share_plus);
    two.client_ids.push_back(p.client_id);
    two.shares.push_back(p.share_minus);
  }
  return {std::move(one), std::move(two)};
}

PartialDistanceMatrix worker_pairwise_distances(const WorkerShareSet& shares,
                                                std::size_t threads) {
  const std::size_t n = shares.shares.size();
  if (n < 2) {
    throw Error(ErrorCode::kValidation, "need at least two shares");
  }
  const std::size_t dim = shares.shares.front().size();
  for (const auto& s : shares.shares) {
    if (s.size() != dim) {
      throw Error(ErrorCode::kDimension, "share dimensions differ");
    }
  }
  if (threads == 0) threads = default_thread_count();

  PartialDistanceMatrix out{shares.worker, DistanceMatrix(n)};
  // Each block owns rows [begin, end) and writes only the upper-triangle
  // entries (i, j > i) of those rows; the mirror is filled afterwards.
  parallel_blocks(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        out.matrix(i, j) = l2_dist_sq(shares.shares[i], shares.shares[j]);
      }
    }
  });
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) out.matrix(j, i) = out.matrix(i, j);
  }
  return out;
}

DistanceMatrix decode_distances(const PartialDistanceMatrix& p1,
                                const PartialDistanceMatrix& p2,
                                double constant, DecodeMode mode) {
  if (p1.worker != WorkerId::kOne || p2.worker != WorkerId::kTwo) {
    throw Error(ErrorCode::kWorkerMismatch,
                "decode expects worker 1 then worker 2 partial matrices");
  }
  const std::size_t n = p1.matrix.size();
  if (p2.matrix.size() != n) {
    throw Error(ErrorCode::kDimension, "partial matrices differ in size");
  }
  DistanceMatrix out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double v = p1.matrix(i, j) + p2.matrix(i, j);
      if (mode == DecodeMode::kNormalized) {
        v = std::max(0.0, (v - 2.0 * constant) / 2.0);
      }
      out.set_pair(i, j, v);
    }
  }
  return out;
}

}  // namespace maskedkrum
