#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "maskedkrum/fed_trainer.hpp"
#include "maskedkrum/leakage_analyzer.hpp"
#include "maskedkrum/multikrum.hpp"
#include "maskedkrum/noise_codebook.hpp"
#include "maskedkrum/protocol_sim.hpp"

namespace maskedkrum {

nlohmann::json to_json(const SelectionResult& sel);
nlohmann::json to_json(const LeakageReport& report);
nlohmann::json to_json(const CodebookReport& report);
// Timings are left out so records from identical runs compare equal.
nlohmann::json to_json(const RoundOutcome& outcome);

// CSV rows "round,phase,microseconds" for one outcome.
void write_timings_csv(std::ostream& out, const RoundOutcome& outcome);

struct ClientJoin {
  std::size_t round = 0;
  ClientId client = 0;
};

// Scenario file:
//   {n_clients, n_byzantine, select_k, dim, codebook_constant, seed,
//    attack: {kind, scale, mean?}, rounds, dropouts: [{round, client, phase?}],
//    joins?: [{round, client}], learning_rate?, reuse_codebook?, clip_norm?,
//    aggregator?: "multikrum" | "plain_mean", samples_per_client?, label_noise?}
struct Scenario {
  SystemConfig system;
  AttackModel attack;
  std::size_t rounds = 1;
  std::vector<DropoutEvent> dropouts;
  std::vector<ClientJoin> joins;
  double learning_rate = 0.05;
  bool reuse_codebook = false;
  Aggregator aggregator = Aggregator::kMultiKrum;
  std::size_t samples_per_client = 256;
  double label_noise = 0.1;
};

// Throws kValidation on unknown keys or wrong types and kResilience when
// N >= 2f+3 does not hold.
Scenario parse_scenario(const nlohmann::json& j);
Scenario load_scenario(const std::filesystem::path& path);

std::string_view to_string(Aggregator aggregator);
Aggregator parse_aggregator(std::string_view name);

}  // namespace maskedkrum
