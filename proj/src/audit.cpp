#include "maskedkrum/audit.hpp"

#include <fstream>
#include <set>

#include "maskedkrum/error.hpp"

namespace maskedkrum {

using nlohmann::json;

json to_json(const SelectionResult& sel) {
  json scores = json::array();
  for (const auto& e : sel.scores.entries) {
    scores.push_back({{"client_id", e.client_id},
                      {"score", e.score},
                      {"neighbors", e.neighbors}});
  }
  return {{"selected_ids", sel.selected_ids},
          {"rejected_ids", sel.rejected_ids},
          {"n_byzantine", sel.scores.n_byzantine},
          {"scores", scores}};
}

json to_json(const LeakageReport& report) {
  return {{"per_client_bound_nats", report.per_client_bound},
          {"per_client_bound_bits", report.bound_bits()},
          {"sigma", report.sigma},
          {"variance_source",
           report.variance_source == VarianceSource::kDeclared ? "declared" : "estimated"},
          {"caveat", report.caveat},
          {"per_coordinate_terms", report.per_coordinate_terms}};
}

json to_json(const CodebookReport& report) {
  return {{"pass", report.pass},
          {"pairs_checked", report.pairs_checked},
          {"max_pair_deviation", report.max_pair_deviation},
          {"max_norm_deviation", report.max_norm_deviation},
          {"max_abs_dot", report.max_abs_dot},
          {"tolerance", report.tolerance}};
}

json to_json(const RoundOutcome& outcome) {
  json j{{"round", outcome.round_index},
         {"status", to_string(outcome.status)},
         {"participating_ids", outcome.participating_ids},
         {"deferred_drops", outcome.deferred_drops},
         {"codebook_seed", outcome.codebook_seed},
         {"codebook_rows", outcome.codebook_rows}};
  if (!outcome.message.empty()) j["message"] = outcome.message;
  if (outcome.culprit) j["culprit"] = to_string(*outcome.culprit);
  if (outcome.selection) j["selection"] = to_json(*outcome.selection);
  if (outcome.aggregate) j["aggregate"] = outcome.aggregate->values;
  if (outcome.leakage) {
    json leak = to_json(*outcome.leakage);
    leak.erase("per_coordinate_terms");
    j["leakage"] = leak;
  }
  return j;
}

void write_timings_csv(std::ostream& out, const RoundOutcome& outcome) {
  for (const auto& t : outcome.timings) {
    out << outcome.round_index << ',' << t.phase << ',' << t.microseconds << '\n';
  }
}

std::string_view to_string(Aggregator aggregator) {
  return aggregator == Aggregator::kMultiKrum ? "multikrum" : "plain_mean";
}

Aggregator parse_aggregator(std::string_view name) {
  if (name == "multikrum") return Aggregator::kMultiKrum;
  if (name == "plain_mean") return Aggregator::kPlainMean;
  throw Error(ErrorCode::kValidation, "unknown aggregator '" + std::string(name) + "'");
}

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::kValidation, where + " must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.contains(key)) {
      throw Error(ErrorCode::kValidation, "unknown key '" + key + "' in " + where);
    }
  }
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kValidation, std::string("bad value for '") + key + "': " + e.what());
  }
}

template <typename T>
T require(const json& j, const char* key) {
  if (!j.contains(key)) {
    throw Error(ErrorCode::kValidation, std::string("missing key '") + key + "'");
  }
  return get_or<T>(j, key, T{});
}

}  // namespace

Scenario parse_scenario(const json& j) {
  reject_unknown(j,
                 {"n_clients", "n_byzantine", "select_k", "dim", "codebook_constant",
                  "seed", "attack", "rounds", "dropouts", "joins", "learning_rate",
                  "reuse_codebook", "clip_norm", "aggregator", "samples_per_client",
                  "label_noise"},
                 "scenario");
  Scenario s;
  s.system.n_clients = require<std::size_t>(j, "n_clients");
  s.system.n_byzantine = require<std::size_t>(j, "n_byzantine");
  s.system.select_k = get_or<std::size_t>(j, "select_k", 0);
  s.system.dim = require<std::size_t>(j, "dim");
  s.system.codebook_constant = require<double>(j, "codebook_constant");
  s.system.seed = require<std::uint64_t>(j, "seed");
  if (j.contains("clip_norm")) s.system.clip_norm = get_or<double>(j, "clip_norm", 0.0);
  s.rounds = get_or<std::size_t>(j, "rounds", 1);
  s.learning_rate = get_or<double>(j, "learning_rate", 0.05);
  s.reuse_codebook = get_or<bool>(j, "reuse_codebook", false);
  s.aggregator = parse_aggregator(get_or<std::string>(j, "aggregator", "multikrum"));
  s.samples_per_client = get_or<std::size_t>(j, "samples_per_client", 256);
  s.label_noise = get_or<double>(j, "label_noise", 0.1);

  if (j.contains("attack")) {
    const json& a = j.at("attack");
    reject_unknown(a, {"kind", "scale", "mean"}, "attack");
    s.attack.kind = parse_attack_kind(get_or<std::string>(a, "kind", "none"));
    s.attack.scale = get_or<double>(a, "scale", 1.0);
    s.attack.mean = get_or<double>(a, "mean", 0.0);
    s.attack.validate();
  }
  for (const json& d : get_or<json>(j, "dropouts", json::array())) {
    reject_unknown(d, {"round", "client", "phase"}, "dropout");
    DropoutEvent ev{require<std::size_t>(d, "round"), require<ClientId>(d, "client"),
                    DropPhase::kBeforeUpload};
    const auto phase = get_or<std::string>(d, "phase", "before_upload");
    if (phase == "after_shares") {
      ev.phase = DropPhase::kAfterShares;
    } else if (phase != "before_upload") {
      throw Error(ErrorCode::kValidation, "unknown dropout phase '" + phase + "'");
    }
    s.dropouts.push_back(ev);
  }
  for (const json& d : get_or<json>(j, "joins", json::array())) {
    reject_unknown(d, {"round", "client"}, "join");
    s.joins.push_back({require<std::size_t>(d, "round"), require<ClientId>(d, "client")});
  }
  if (s.rounds == 0) throw Error(ErrorCode::kValidation, "rounds must be >= 1");
  s.system.validate();
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kValidation, std::string("invalid scenario JSON: ") + e.what());
  }
  return parse_scenario(j);
}

}  // namespace maskedkrum
