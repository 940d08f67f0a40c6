#include "maskedkrum/fed_trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "maskedkrum/error.hpp"

namespace maskedkrum {
namespace {

const ToyTask::ClientData& data_for(const ToyTask& task, ClientId id) {
  if (id == 0 || id > task.clients.size()) {
    throw Error(ErrorCode::kValidation, "no dataset for client " + std::to_string(id));
  }
  const auto& data = task.clients[id - 1];
  if (data.samples == 0) {
    throw Error(ErrorCode::kValidation, "empty dataset for client " + std::to_string(id));
  }
  return data;
}

std::vector<double> residuals(const ToyTask::ClientData& data, std::size_t dim,
                              std::span<const double> w) {
  std::vector<double> r(data.samples);
  for (std::size_t s = 0; s < data.samples; ++s) {
    double pred = 0.0;
    const double* row = data.x.data() + s * dim;
    for (std::size_t k = 0; k < dim; ++k) pred += row[k] * w[k];
    r[s] = pred - data.y[s];
  }
  return r;
}

}  // namespace

ToyTask make_toy_task(const ToyTaskSpec& spec) {
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ToyTask task;
  task.dim = spec.dim;
  task.w_star.resize(spec.dim);
  for (double& v : task.w_star) v = gauss(rng);
  task.clients.resize(spec.n_clients);
  for (auto& c : task.clients) {
    c.samples = spec.samples_per_client;
    c.x.resize(c.samples * spec.dim);
    c.y.resize(c.samples);
    for (double& v : c.x) v = gauss(rng);
    for (std::size_t s = 0; s < c.samples; ++s) {
      double y = 0.0;
      for (std::size_t k = 0; k < spec.dim; ++k) y += c.x[s * spec.dim + k] * task.w_star[k];
      c.y[s] = y + spec.label_noise * gauss(rng);
    }
  }
  return task;
}

GradientVector honest_gradient(const ToyTask& task, ClientId id,
                               std::span<const double> w) {
  const auto& data = data_for(task, id);
  if (w.size() != task.dim) throw Error(ErrorCode::kDimension, "weight dimension");
  const auto r = residuals(data, task.dim, w);
  GradientVector g{id, std::vector<double>(task.dim, 0.0)};
  for (std::size_t s = 0; s < data.samples; ++s) {
    const double* row = data.x.data() + s * task.dim;
    for (std::size_t k = 0; k < task.dim; ++k) g.values[k] += row[k] * r[s];
  }
  const double scale = 2.0 / static_cast<double>(data.samples);
  for (double& v : g.values) v *= scale;
  return g;
}

double client_loss(const ToyTask& task, ClientId id, std::span<const double> w) {
  const auto& data = data_for(task, id);
  if (w.size() != task.dim) throw Error(ErrorCode::kDimension, "weight dimension");
  double sum = 0.0;
  for (double r : residuals(data, task.dim, w)) sum += r * r;
  return sum / static_cast<double>(data.samples);
}

double global_loss(const ToyTask& task, std::span<const ClientId> ids,
                   std::span<const double> w) {
  if (ids.empty()) throw Error(ErrorCode::kValidation, "no clients for loss");
  double sum = 0.0;
  for (ClientId id : ids) sum += client_loss(task, id, w);
  return sum / static_cast<double>(ids.size());
}

std::string_view to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kNone: return "none";
    case AttackKind::kSignFlip: return "sign_flip";
    case AttackKind::kGaussian: return "gaussian";
    case AttackKind::kConstant: return "constant";
    case AttackKind::kScaled: return "scaled";
  }
  return "unknown";
}

AttackKind parse_attack_kind(std::string_view name) {
  for (auto k : {AttackKind::kNone, AttackKind::kSignFlip, AttackKind::kGaussian,
                 AttackKind::kConstant, AttackKind::kScaled}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::kValidation, "unknown attack kind '" + std::string(name) + "'");
}

void AttackModel::validate() const {
  if (!std::isfinite(scale) || !std::isfinite(mean)) {
    throw Error(ErrorCode::kValidation, "attack parameters must be finite");
  }
  if (kind == AttackKind::kGaussian && scale < 0.0) {
    throw Error(ErrorCode::kValidation, "gaussian attack needs a nonnegative stddev");
  }
}

GradientVector apply_attack(const GradientVector& g, const AttackModel& attack,
                            std::mt19937_64& rng) {
  attack.validate();
  GradientVector out{g.client_id, g.values};
  switch (attack.kind) {
    case AttackKind::kNone:
      break;
    case AttackKind::kSignFlip:
      for (double& v : out.values) v = -attack.scale * v;
      break;
    case AttackKind::kScaled:
      for (double& v : out.values) v = attack.scale * v;
      break;
    case AttackKind::kConstant:
      std::fill(out.values.begin(), out.values.end(), attack.scale);
      break;
    case AttackKind::kGaussian: {
      std::normal_distribution<double> gauss(attack.mean, attack.scale);
      for (double& v : out.values) v = gauss(rng);
      break;
    }
  }
  require_finite(out.values);
  return out;
}

std::size_t ExperimentResult::rounds_with_byzantine_selected() const {
  return static_cast<std::size_t>(std::count_if(
      curve.begin(), curve.end(), [](const auto& r) { return r.byz_selected_count > 0; }));
}

GradientSource make_gradient_source(const ToyTask& task, const AttackModel& attack,
                                    std::size_t n_byzantine, std::uint64_t seed,
                                    const std::vector<double>& weights) {
  return [&task, attack, n_byzantine, seed, &weights](ClientId id, std::size_t round) {
    GradientVector g = honest_gradient(task, id, weights);
    if (id <= n_byzantine) {
      std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ULL * (round + 1)) ^
                          (0xc2b2ae3d27d4eb4fULL * id));
      g = apply_attack(g, attack, rng);
    }
    return g;
  };
}

ExperimentResult run_experiment(const ToyTask& task, const ExperimentConfig& config,
                                const AttackModel& attack, Aggregator aggregator,
                                std::uint64_t seed) {
  const SystemConfig& sys = config.system;
  sys.validate();
  attack.validate();
  if (task.dim != sys.dim || task.clients.size() < sys.n_clients) {
    throw Error(ErrorCode::kDimension, "task does not match the system config");
  }

  ProtocolOptions options;
  options.config = sys;
  options.aggregator = aggregator;
  options.reuse_codebook = config.reuse_codebook;
  ProtocolSimulator sim(options, seed);

  std::vector<ClientId> honest;
  for (std::size_t i = sys.n_byzantine + 1; i <= sys.n_clients; ++i) {
    honest.push_back(static_cast<ClientId>(i));
  }

  ExperimentResult result;
  result.aggregator = aggregator;
  std::vector<double> w(sys.dim, 0.0);
  result.initial_loss = global_loss(task, honest, w);
  const GradientSource source =
      make_gradient_source(task, attack, sys.n_byzantine, seed, w);

  for (const auto& [round, id] : config.joins) {
    if (id == 0 || id > task.clients.size()) {
      throw Error(ErrorCode::kValidation,
                  "joining client " + std::to_string(id) + " has no dataset");
    }
    (void)round;
  }
  for (std::size_t r = 0; r < config.rounds; ++r) {
    for (const auto& [round, id] : config.joins) {
      if (round == r) sim.join_client(id);
    }
    RoundOutcome outcome = sim.run_round(source, config.dropouts);
    RoundRecord rec{r, 0.0, 0, outcome.status};
    if (outcome.status == RoundStatus::kOk) {
      for (std::size_t k = 0; k < w.size(); ++k) {
        w[k] -= config.learning_rate * outcome.aggregate->values[k];
      }
      for (ClientId id : outcome.selection->selected_ids) {
        if (id <= sys.n_byzantine) ++rec.byz_selected_count;
      }
    }
    rec.loss = global_loss(task, honest, w);
    result.curve.push_back(rec);
    if (config.keep_outcomes) result.outcomes.push_back(std::move(outcome));
  }
  result.final_weights = w;
  return result;
}

}  // namespace maskedkrum
