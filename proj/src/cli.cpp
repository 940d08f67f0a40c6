#include "maskedkrum/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "maskedkrum/audit.hpp"
#include "maskedkrum/error.hpp"
#include "maskedkrum/fed_trainer.hpp"
#include "maskedkrum/gradient_csv.hpp"
#include "maskedkrum/leakage_analyzer.hpp"
#include "maskedkrum/multikrum.hpp"
#include "maskedkrum/noise_codebook.hpp"
#include "maskedkrum/share_codec.hpp"

namespace maskedkrum::cli {
namespace {

using nlohmann::json;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<double> parse_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kValidation, "not a number in list: '" + item + "'");
    }
  }
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(ErrorCode::kIo, "cannot write " + path);
  return f;
}

ToyTask task_for(const Scenario& s) {
  std::size_t clients = s.system.n_clients;
  for (const auto& j : s.joins) clients = std::max<std::size_t>(clients, j.client);
  return make_toy_task({clients, s.system.dim, s.samples_per_client, s.label_noise,
                        s.system.seed});
}

ExperimentConfig experiment_for(const Scenario& s) {
  ExperimentConfig cfg;
  cfg.system = s.system;
  cfg.rounds = s.rounds;
  cfg.learning_rate = s.learning_rate;
  cfg.dropouts = s.dropouts;
  cfg.reuse_codebook = s.reuse_codebook;
  for (const auto& j : s.joins) cfg.joins.emplace_back(j.round, j.client);
  return cfg;
}

struct GenArgs {
  std::size_t n = 0;
  std::size_t dim = 0;
  double constant = 0.0;
  std::uint64_t seed = 0;
  std::string out;
};

int gen_codebook(const GenArgs& a, std::ostream& out) {
  const NoiseCodebook cb = build_codebook(a.n, a.dim, a.constant, a.seed);
  write_codebook(cb, a.out);
  out << json{{"path", a.out}, {"n", cb.n}, {"dim", cb.dim}, {"constant", cb.constant},
              {"seed", cb.seed}}.dump()
      << '\n';
  return 0;
}

int verify(const std::string& path, std::ostream& out) {
  const CodebookReport report = verify_codebook(read_codebook(path));
  out << to_json(report).dump(2) << '\n';
  return report.pass ? 0 : 1;
}

struct LeakageArgs {
  std::string variances;
  std::string grads;
  std::optional<double> sigma;
  std::string codebook;
  std::optional<double> budget;
};

int leakage(const LeakageArgs& a, std::ostream& out) {
  std::vector<double> variances;
  VarianceSource source = VarianceSource::kDeclared;
  if (!a.variances.empty()) {
    variances = parse_list(a.variances);
  } else {
    variances = estimate_variances(read_gradient_csv(a.grads));
    source = VarianceSource::kEstimated;
  }
  double sigma = 0.0;
  if (a.sigma) {
    sigma = *a.sigma;
  } else if (!a.codebook.empty()) {
    sigma = equivalent_sigma(read_codebook(a.codebook));
  }
  json result;
  if (sigma > 0.0 || a.sigma) result = to_json(mi_bound(variances, sigma, source));
  if (a.budget) {
    const SigmaCalibration cal = calibrate_sigma(variances, *a.budget);
    result["calibration"] = {{"budget_nats", *a.budget},
                             {"sigma", cal.sigma},
                             {"unconstrained", cal.unconstrained},
                             {"report", to_json(mi_bound(variances, cal.sigma, source))}};
  }
  if (result.is_null()) {
    throw Error(ErrorCode::kValidation, "leakage needs --sigma, --codebook or --budget");
  }
  out << result.dump(2) << '\n';
  return 0;
}

struct AggregateArgs {
  std::string grads;
  std::size_t f = 0;
  std::size_t k = 0;
  std::string codebook;
};

int aggregate(const AggregateArgs& a, std::ostream& out) {
  const auto gradients = read_gradient_csv(a.grads);
  if (gradients.empty()) throw Error(ErrorCode::kValidation, "no gradients in CSV");
  const std::size_t n = gradients.size();
  if (!check_resilience_precondition(n, a.f)) {
    throw Error(ErrorCode::kResilience, "N >= 2f+3 violated (N=" + std::to_string(n) +
                                            ", f=" + std::to_string(a.f) + ")");
  }
  const NoiseCodebook cb = read_codebook(a.codebook);
  if (cb.n < n || cb.dim != gradients.front().dim()) {
    throw Error(ErrorCode::kDimension, "codebook shape does not fit the gradients");
  }
  // Row i of the codebook masks the i-th CSV row.
  std::vector<EncodedSharePair> pairs;
  std::vector<ClientId> ids;
  for (std::size_t i = 0; i < n; ++i) {
    pairs.push_back(encode_client_gradient(gradients[i], cb.row(i)));
    ids.push_back(gradients[i].client_id);
  }
  const auto [set1, set2] = split_shares(pairs);
  const DistanceMatrix decoded = decode_distances(
      worker_pairwise_distances(set1), worker_pairwise_distances(set2), cb.constant);
  const std::size_t k = a.k == 0 ? n - a.f - 2 : a.k;
  const SelectionResult sel = select_top_k(score_clients(decoded, a.f, ids), k);
  json result = to_json(sel);
  result["aggregate"] = aggregate_selected(gradients, sel).values;
  out << result.dump(2) << '\n';
  return 0;
}

struct ScenarioArgs {
  std::string config;
  std::string audit = "audit.jsonl";
  std::string timings = "timings.csv";
  std::string loss = "loss.csv";
};

int simulate(const ScenarioArgs& a, std::ostream& out) {
  const Scenario s = load_scenario(a.config);
  const ToyTask task = task_for(s);
  ExperimentConfig cfg = experiment_for(s);
  cfg.keep_outcomes = true;
  const ExperimentResult result =
      run_experiment(task, cfg, s.attack, s.aggregator, s.system.seed);

  auto audit = open_out(a.audit);
  auto timings = open_out(a.timings);
  timings << "round,phase,microseconds\n";
  std::size_t failed = 0;
  for (const auto& o : result.outcomes) {
    audit << to_json(o).dump() << '\n';
    write_timings_csv(timings, o);
    if (o.status != RoundStatus::kOk) ++failed;
  }
  out << json{{"rounds", result.outcomes.size()},
              {"failed_rounds", failed},
              {"final_loss", result.final_loss()},
              {"rounds_with_byzantine_selected", result.rounds_with_byzantine_selected()},
              {"audit", a.audit},
              {"timings", a.timings}}.dump(2)
      << '\n';
  return failed == 0 ? 0 : 1;
}

int train(const ScenarioArgs& a, std::ostream& out) {
  const Scenario s = load_scenario(a.config);
  const ToyTask task = task_for(s);
  const ExperimentConfig cfg = experiment_for(s);

  auto csv = open_out(a.loss);
  csv << "round,aggregator,loss,byz_selected_count\n";
  json summary = json::object();
  for (Aggregator agg : {Aggregator::kMultiKrum, Aggregator::kPlainMean}) {
    const ExperimentResult r = run_experiment(task, cfg, s.attack, agg, s.system.seed);
    for (const auto& rec : r.curve) {
      csv << rec.round << ',' << to_string(agg) << ',' << format_double(rec.loss) << ','
          << rec.byz_selected_count << '\n';
    }
    summary[std::string(to_string(agg))] = {
        {"initial_loss", r.initial_loss},
        {"final_loss", r.final_loss()},
        {"rounds_with_byzantine_selected", r.rounds_with_byzantine_selected()}};
  }
  summary["loss_csv"] = a.loss;
  out << summary.dump(2) << '\n';
  return 0;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Masked Multi-Krum: encoded-distance Byzantine-robust aggregation"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-codebook", "Build a constant-distance noise codebook");
  gen_cmd->add_option("--n", gen.n, "Number of vectors")->required()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--dim", gen.dim, "Vector dimension")->required()->check(CLI::PositiveNumber);
  gen_cmd->add_option("--c", gen.constant, "Pairwise squared distance")->required();
  gen_cmd->add_option("--seed", gen.seed, "RNG seed")->required();
  gen_cmd->add_option("--out", gen.out, "Output NCBK file")->required();

  std::string verify_path;
  auto* verify_cmd = app.add_subcommand("verify-codebook", "Check every codebook invariant");
  verify_cmd->add_option("codebook", verify_path, "NCBK file")->required();

  LeakageArgs leak;
  auto* leak_cmd = app.add_subcommand("leakage", "Mutual-information leakage bound");
  auto* var_opt = leak_cmd->add_option("--variances", leak.variances,
                                       "Comma-separated per-coordinate variances");
  auto* grads_opt = leak_cmd->add_option("--grads", leak.grads,
                                         "Gradient CSV to estimate variances from");
  var_opt->excludes(grads_opt);
  leak_cmd->add_option("--sigma", leak.sigma, "Noise standard deviation");
  leak_cmd->add_option("--codebook", leak.codebook, "Use the codebook's equivalent sigma")
      ->excludes("--sigma");
  leak_cmd->add_option("--budget", leak.budget, "Calibrate sigma for this budget (nats)");

  AggregateArgs agg;
  auto* agg_cmd = app.add_subcommand("aggregate", "Encode, score and select one batch");
  agg_cmd->add_option("--grads", agg.grads, "Gradient CSV")->required();
  agg_cmd->add_option("--f", agg.f, "Byzantine clients tolerated")->required();
  agg_cmd->add_option("--k", agg.k, "Clients to select (default N-f-2)");
  agg_cmd->add_option("--codebook", agg.codebook, "NCBK codebook")->required();

  ScenarioArgs sim;
  auto* sim_cmd = app.add_subcommand("simulate", "Run protocol rounds from a scenario");
  sim_cmd->add_option("--config", sim.config, "Scenario JSON")->required();
  sim_cmd->add_option("--audit", sim.audit, "JSON-lines audit log");
  sim_cmd->add_option("--timings", sim.timings, "Per-phase timing CSV");

  ScenarioArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Compare Multi-Krum with plain averaging");
  train_cmd->add_option("--config", tr.config, "Scenario JSON")->required();
  train_cmd->add_option("--out", tr.loss, "Loss-curve CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (leak_cmd->parsed() && leak.variances.empty() && leak.grads.empty()) {
      err << "leakage: one of --variances or --grads is required\n";
      return 2;
    }
    if (gen_cmd->parsed()) return gen_codebook(gen, out);
    if (verify_cmd->parsed()) return verify(verify_path, out);
    if (leak_cmd->parsed()) return leakage(leak, out);
    if (agg_cmd->parsed()) return aggregate(agg, out);
    if (sim_cmd->parsed()) return simulate(sim, out);
    if (train_cmd->parsed()) return train(tr, out);
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace maskedkrum::cli
