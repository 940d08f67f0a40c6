#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "maskedkrum/core_model.hpp"
#include "maskedkrum/protocol_sim.hpp"

namespace maskedkrum {

// Linear least squares split across clients. Client i owns (X_i, y_i) with
// y_i = X_i w* + noise.
struct ToyTask {
  std::size_t dim = 0;
  std::vector<double> w_star;
  struct ClientData {
    std::size_t samples = 0;
    std::vector<double> x;  // samples x dim, row-major
    std::vector<double> y;
  };
  std::vector<ClientData> clients;  // index = client id - 1
};

struct ToyTaskSpec {
  std::size_t n_clients = 15;
  std::size_t dim = 128;
  std::size_t samples_per_client = 256;
  double label_noise = 0.1;
  std::uint64_t seed = 0;
};

ToyTask make_toy_task(const ToyTaskSpec& spec);

// (2 / m) X^T (X w - y) for one client.
GradientVector honest_gradient(const ToyTask& task, ClientId id,
                               std::span<const double> w);

// Mean squared residual (1 / m) ‖X w − y‖² for one client.
double client_loss(const ToyTask& task, ClientId id, std::span<const double> w);

// Average client_loss over the given clients.
double global_loss(const ToyTask& task, std::span<const ClientId> ids,
                   std::span<const double> w);

enum class AttackKind { kNone, kSignFlip, kGaussian, kConstant, kScaled };

std::string_view to_string(AttackKind kind);
AttackKind parse_attack_kind(std::string_view name);

struct AttackModel {
  AttackKind kind = AttackKind::kNone;
  double scale = 1.0;  // λ for sign_flip / scaled, s for gaussian, v for constant
  double mean = 0.0;   // μ for gaussian

  void validate() const;
};

GradientVector apply_attack(const GradientVector& g, const AttackModel& attack,
                            std::mt19937_64& rng);

struct ExperimentConfig {
  SystemConfig system;
  std::size_t rounds = 200;
  double learning_rate = 0.05;
  std::vector<DropoutEvent> dropouts;
  std::vector<std::pair<std::size_t, ClientId>> joins;  // (round, client)
  bool reuse_codebook = false;
  bool keep_outcomes = false;  // retain every RoundOutcome in the result
};

struct RoundRecord {
  std::size_t round = 0;
  double loss = 0.0;
  std::size_t byz_selected_count = 0;
  RoundStatus status = RoundStatus::kOk;
};

struct ExperimentResult {
  Aggregator aggregator = Aggregator::kMultiKrum;
  double initial_loss = 0.0;
  std::vector<RoundRecord> curve;
  std::vector<RoundOutcome> outcomes;  // only with keep_outcomes
  std::vector<double> final_weights;

  double final_loss() const { return curve.empty() ? initial_loss : curve.back().loss; }
  std::size_t rounds_with_byzantine_selected() const;
};

// Gradient source for the protocol: honest least-squares gradients at the
// current weights, with the attack applied to clients 1..f. Attack noise is
// seeded per (seed, round, client).
GradientSource make_gradient_source(const ToyTask& task, const AttackModel& attack,
                                    std::size_t n_byzantine, std::uint64_t seed,
                                    const std::vector<double>& weights);

// Runs `rounds` protocol rounds from w = 0, stepping w -= lr * aggregate
// after each successful round. Loss is the average over honest clients.
ExperimentResult run_experiment(const ToyTask& task, const ExperimentConfig& config,
                                const AttackModel& attack, Aggregator aggregator,
                                std::uint64_t seed);

}  // namespace maskedkrum
