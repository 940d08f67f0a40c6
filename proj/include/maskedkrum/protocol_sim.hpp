#pragma once

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "maskedkrum/core_model.hpp"
#include "maskedkrum/leakage_analyzer.hpp"
#include "maskedkrum/mailbox.hpp"
#include "maskedkrum/multikrum.hpp"
#include "maskedkrum/noise_codebook.hpp"
#include "maskedkrum/sealing.hpp"
#include "maskedkrum/share_codec.hpp"

namespace maskedkrum {

enum class Aggregator { kMultiKrum, kPlainMean };

enum class RoundPhase {
  kCollecting,   // gradients not yet uploaded
  kEncoding,     // gradients opened inside the enclave, shares not yet out
  kSharesSent,   // worker shares dispatched
  kDecided,
};

enum class DropPhase { kBeforeUpload, kAfterShares };

struct DropoutEvent {
  std::size_t round = 0;
  ClientId client = 0;
  DropPhase phase = DropPhase::kBeforeUpload;
};

struct RoundState {
  std::size_t round_index = 0;
  std::size_t n_byzantine = 0;
  RoundPhase phase = RoundPhase::kCollecting;
  std::vector<ClientId> participants;    // ascending
  std::vector<ClientId> deferred_drops;  // take effect next round
};

// Removes `dropped` from the participant set while the round has not passed
// encoding; later drops are deferred to the next round. Throws kResilience if
// fewer than 2f+3 participants remain.
std::vector<ClientId> handle_dropout(RoundState& state,
                                     std::span<const ClientId> dropped);

enum class RoundStatus { kOk, kFailedPrecondition, kAborted };

std::string_view to_string(RoundStatus status);

struct PhaseTiming {
  std::string phase;
  std::int64_t microseconds = 0;
};

struct RoundOutcome {
  std::size_t round_index = 0;
  RoundStatus status = RoundStatus::kOk;
  std::string message;
  std::vector<ClientId> participating_ids;
  std::vector<ClientId> deferred_drops;
  std::optional<SelectionResult> selection;
  std::optional<GradientVector> aggregate;
  std::optional<LeakageReport> leakage;
  std::optional<RoleId> culprit;
  std::uint64_t codebook_seed = 0;
  std::size_t codebook_rows = 0;
  std::vector<PhaseTiming> timings;
};

// Gradient client `id` submits in round `round`.
using GradientSource = std::function<GradientVector(ClientId id, std::size_t round)>;

struct ProtocolOptions {
  SystemConfig config;
  Aggregator aggregator = Aggregator::kMultiKrum;
  bool reuse_codebook = false;
  std::size_t batch_rows = kDefaultBatchRows;
  std::size_t worker_threads = 0;  // 0: default_thread_count()
  // When set, every installed codebook is also written here, sealed.
  std::optional<std::filesystem::path> sealed_codebook_path;
};

// Everything that crosses a role boundary, plus out-of-band fault reports
// standing in for a network timeout.
struct RoleFault {
  RoleId reporter;
  RoleId culprit;
  std::string what;
};
using Delivery = std::variant<SealedMessage, RoleFault>;

// Routes sealed messages to role mailboxes, refusing kinds the receiver may
// not get, and records every message that goes over the wire.
class Network {
 public:
  void attach(RoleId role, Mailbox<Delivery>* inbox);
  void detach(RoleId role);
  void deliver(SealedMessage msg);
  void report(RoleId to, RoleFault fault);

  std::vector<SealedMessage> transcript() const;
  void clear_transcript();

  // Applied to each message before it is recorded and delivered.
  void set_tamper(std::function<void(SealedMessage&)> tamper);

 private:
  mutable std::mutex mu_;
  std::map<RoleId, Mailbox<Delivery>*> inboxes_;
  std::vector<SealedMessage> transcript_;
  std::function<void(SealedMessage&)> tamper_;
};

class ClientRole {
 public:
  ClientRole(ClientId id, SecureChannel to_enclave);

  ClientId id() const { return id_; }
  SealedMessage upload(const GradientVector& g, std::size_t round);
  // Opens the enclave's aggregate broadcast.
  void receive(const SealedMessage& msg);
  const std::optional<GradientVector>& last_aggregate() const { return last_aggregate_; }

 private:
  ClientId id_;
  SecureChannel channel_;
  std::optional<GradientVector> last_aggregate_;
};

// A worker owns exactly one channel (to the enclave) and only ever sees its
// own share set, which arrives as a kShareSet message on that channel.
class WorkerRole {
 public:
  WorkerRole(WorkerId id, SecureChannel to_enclave, Network& net,
             std::size_t threads);
  ~WorkerRole();
  WorkerRole(const WorkerRole&) = delete;
  WorkerRole& operator=(const WorkerRole&) = delete;

  RoleId role() const;
  std::size_t rounds_served() const;

 private:
  void serve(const SealedMessage& msg);

  WorkerId id_;
  SecureChannel channel_;
  Network& net_;
  std::size_t threads_;
  Mailbox<Delivery> inbox_;
  std::atomic<std::size_t> served_{0};
  std::jthread thread_;
};

class ProtocolSimulator {
 public:
  // Establishes the session for clients 1..N, the enclave and both workers.
  // Roles for which `responds` is false are dropped during the handshake.
  ProtocolSimulator(ProtocolOptions options, std::uint64_t master_seed,
                    std::function<bool(RoleId)> responds = {});
  ~ProtocolSimulator();

  // Runs one round using the managed codebook (fresh per round unless
  // reuse_codebook, rebuilt when more rows are needed).
  RoundOutcome run_round(const GradientSource& source,
                         std::span<const DropoutEvent> drops = {});
  // Runs one round with a caller-supplied codebook.
  RoundOutcome run_round(const GradientSource& source, const NoiseCodebook& cb,
                         std::span<const DropoutEvent> drops = {});

  // Adds a client at the next round boundary.
  void join_client(ClientId id);

  const KeyTable& session() const { return session_; }
  const std::set<ClientId>& active_clients() const { return active_; }
  Network& network() { return net_; }
  const ClientRole& client(ClientId id) const;
  const ProtocolOptions& options() const { return options_; }
  std::size_t next_round() const { return round_; }
  const NoiseCodebook* current_codebook() const;

 private:
  RoundOutcome execute(const GradientSource& source,
                       std::span<const DropoutEvent> drops,
                       const NoiseCodebook* supplied);
  void add_client_role(ClientId id);
  const NoiseCodebook& managed_codebook(std::size_t rows_needed);

  ProtocolOptions options_;
  std::uint64_t master_seed_;
  KeyTable session_;
  Network net_;
  std::set<ClientId> active_;
  std::vector<ClientId> pending_drops_;
  std::map<ClientId, ClientRole> clients_;
  std::map<ClientId, SecureChannel> enclave_to_client_;
  std::unique_ptr<SecureChannel> enclave_to_worker1_;
  std::unique_ptr<SecureChannel> enclave_to_worker2_;
  Mailbox<Delivery> enclave_inbox_;
  Mailbox<Delivery> client_inbox_;
  std::unique_ptr<WorkerRole> worker1_;
  std::unique_ptr<WorkerRole> worker2_;
  SessionKey storage_key_{};
  std::optional<NoiseCodebook> codebook_;
  std::size_t round_ = 0;
  std::size_t outstanding_worker_replies_ = 0;
};

// Seed for the codebook built for `round` under `master_seed`.
std::uint64_t round_codebook_seed(std::uint64_t master_seed, std::size_t round);

}  // namespace maskedkrum
