#include "maskedkrum/protocol_sim.hpp"

#include <algorithm>
#include <string>

#include "maskedkrum/byte_io.hpp"
#include "maskedkrum/error.hpp"

namespace maskedkrum {
namespace {

using Clock = std::chrono::steady_clock;

std::int64_t micros_since(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - start)
      .count();
}

// Wire payloads. Every payload carries the round index so a message sealed
// for one round cannot be replayed into another.

std::vector<std::uint8_t> encode_upload(const GradientVector& g, std::size_t round) {
  byte_io::Writer w;
  w.u32(g.client_id);
  w.u32(static_cast<std::uint32_t>(round));
  w.u32(static_cast<std::uint32_t>(g.dim()));
  w.f64s(g.values);
  return w.take();
}

GradientVector decode_upload(std::span<const std::uint8_t> bytes,
                             std::size_t round) {
  byte_io::Reader r(bytes);
  GradientVector g;
  g.client_id = r.u32();
  if (r.u32() != round) throw Error(ErrorCode::kFormat, "upload for another round");
  g.values = r.f64s(r.u32());
  if (r.remaining() != 0) throw Error(ErrorCode::kFormat, "trailing upload bytes");
  return g;
}

std::vector<std::uint8_t> encode_share_set(const WorkerShareSet& s,
                                           std::size_t round) {
  byte_io::Writer w;
  w.u8(static_cast<std::uint8_t>(s.worker));
  w.u32(static_cast<std::uint32_t>(round));
  w.u32(static_cast<std::uint32_t>(s.shares.size()));
  w.u32(static_cast<std::uint32_t>(s.shares.empty() ? 0 : s.shares.front().size()));
  for (ClientId id : s.client_ids) w.u32(id);
  for (const auto& share : s.shares) w.f64s(share);
  return w.take();
}

WorkerShareSet decode_share_set(std::span<const std::uint8_t> bytes,
                                std::size_t& round) {
  byte_io::Reader r(bytes);
  WorkerShareSet s;
  s.worker = static_cast<WorkerId>(r.u8());
  round = r.u32();
  const std::size_t n = r.u32();
  const std::size_t dim = r.u32();
  for (std::size_t i = 0; i < n; ++i) s.client_ids.push_back(r.u32());
  for (std::size_t i = 0; i < n; ++i) s.shares.push_back(r.f64s(dim));
  if (r.remaining() != 0) throw Error(ErrorCode::kFormat, "trailing share bytes");
  return s;
}

std::vector<std::uint8_t> encode_partial(const PartialDistanceMatrix& p,
                                         std::size_t round) {
  byte_io::Writer w;
  w.u8(static_cast<std::uint8_t>(p.worker));
  w.u32(static_cast<std::uint32_t>(round));
  w.u32(static_cast<std::uint32_t>(p.matrix.size()));
  w.f64s(p.matrix.entries());
  return w.take();
}

PartialDistanceMatrix decode_partial(std::span<const std::uint8_t> bytes,
                                     std::size_t round) {
  byte_io::Reader r(bytes);
  PartialDistanceMatrix p;
  p.worker = static_cast<WorkerId>(r.u8());
  if (r.u32() != round) throw Error(ErrorCode::kFormat, "distances for another round");
  const std::size_t n = r.u32();
  p.matrix = DistanceMatrix(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) p.matrix(i, j) = r.f64();
  }
  if (r.remaining() != 0) throw Error(ErrorCode::kFormat, "trailing distance bytes");
  return p;
}

std::vector<std::uint8_t> encode_aggregate(const GradientVector& g,
                                           std::size_t round) {
  byte_io::Writer w;
  w.u32(static_cast<std::uint32_t>(round));
  w.u32(static_cast<std::uint32_t>(g.dim()));
  w.f64s(g.values);
  return w.take();
}

GradientVector decode_aggregate(std::span<const std::uint8_t> bytes) {
  byte_io::Reader r(bytes);
  r.u32();
  GradientVector g;
  g.values = r.f64s(r.u32());
  return g;
}

// Round aborted because a sealed message failed to open or parse.
struct RoundAbort {
  RoleId culprit;
  std::string what;
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t round_codebook_seed(std::uint64_t master_seed, std::size_t round) {
  return splitmix64(master_seed ^ splitmix64(round + 1));
}

std::vector<ClientId> handle_dropout(RoundState& state,
                                     std::span<const ClientId> dropped) {
  if (state.phase == RoundPhase::kCollecting) {
    std::erase_if(state.participants, [&](ClientId id) {
      return std::find(dropped.begin(), dropped.end(), id) != dropped.end();
    });
  } else {
    for (ClientId id : dropped) {
      if (std::find(state.deferred_drops.begin(), state.deferred_drops.end(), id) ==
          state.deferred_drops.end()) {
        state.deferred_drops.push_back(id);
      }
    }
  }
  if (!check_resilience_precondition(state.participants.size(), state.n_byzantine)) {
    throw Error(ErrorCode::kResilience,
                "N >= 2f+3 violated: " + std::to_string(state.participants.size()) +
                    " participants, f=" + std::to_string(state.n_byzantine));
  }
  return state.participants;
}

std::string_view to_string(RoundStatus status) {
  switch (status) {
    case RoundStatus::kOk: return "ok";
    case RoundStatus::kFailedPrecondition: return "failed-precondition";
    case RoundStatus::kAborted: return "aborted";
  }
  return "unknown";
}

void Network::attach(RoleId role, Mailbox<Delivery>* inbox) {
  std::lock_guard lock(mu_);
  inboxes_[role] = inbox;
}

void Network::detach(RoleId role) {
  std::lock_guard lock(mu_);
  inboxes_.erase(role);
}

void Network::deliver(SealedMessage msg) {
  Mailbox<Delivery>* inbox = nullptr;
  {
    std::lock_guard lock(mu_);
    const auto kinds = deliverable_kinds(msg.receiver.kind);
    if (std::find(kinds.begin(), kinds.end(), msg.kind) == kinds.end()) {
      throw Error(ErrorCode::kValidation,
                  std::string(to_string(msg.kind)) + " is not deliverable to " +
                      to_string(msg.receiver));
    }
    auto it = inboxes_.find(msg.receiver);
    if (it == inboxes_.end()) {
      throw Error(ErrorCode::kValidation, "no route to " + to_string(msg.receiver));
    }
    inbox = it->second;
    if (tamper_) tamper_(msg);
    transcript_.push_back(msg);
  }
  inbox->push(std::move(msg));
}

void Network::report(RoleId to, RoleFault fault) {
  Mailbox<Delivery>* inbox = nullptr;
  {
    std::lock_guard lock(mu_);
    auto it = inboxes_.find(to);
    if (it == inboxes_.end()) return;
    inbox = it->second;
  }
  inbox->push(std::move(fault));
}

std::vector<SealedMessage> Network::transcript() const {
  std::lock_guard lock(mu_);
  return transcript_;
}

void Network::clear_transcript() {
  std::lock_guard lock(mu_);
  transcript_.clear();
}

void Network::set_tamper(std::function<void(SealedMessage&)> tamper) {
  std::lock_guard lock(mu_);
  tamper_ = std::move(tamper);
}

ClientRole::ClientRole(ClientId id, SecureChannel to_enclave)
    : id_(id), channel_(std::move(to_enclave)) {}

SealedMessage ClientRole::upload(const GradientVector& g, std::size_t round) {
  GradientVector own{id_, g.values};
  return channel_.seal(MessageKind::kGradientUpload, encode_upload(own, round));
}

void ClientRole::receive(const SealedMessage& msg) {
  last_aggregate_ = decode_aggregate(channel_.open(msg));
}

WorkerRole::WorkerRole(WorkerId id, SecureChannel to_enclave, Network& net,
                       std::size_t threads)
    : id_(id), channel_(std::move(to_enclave)), net_(net), threads_(threads) {
  net_.attach(role(), &inbox_);
  thread_ = std::jthread([this](std::stop_token stop) {
    while (auto item = inbox_.pop(stop)) {
      if (const auto* msg = std::get_if<SealedMessage>(&*item)) serve(*msg);
    }
  });
}

WorkerRole::~WorkerRole() {
  thread_.request_stop();
  if (thread_.joinable()) thread_.join();
  net_.detach(role());
}

RoleId WorkerRole::role() const {
  return RoleId::worker(static_cast<std::uint32_t>(id_));
}

std::size_t WorkerRole::rounds_served() const { return served_.load(); }

void WorkerRole::serve(const SealedMessage& msg) {
  try {
    std::size_t round = 0;
    const WorkerShareSet shares = decode_share_set(channel_.open(msg), round);
    if (shares.worker != id_) {
      throw Error(ErrorCode::kWorkerMismatch, "share set addressed to the other worker");
    }
    const PartialDistanceMatrix partial = worker_pairwise_distances(shares, threads_);
    net_.deliver(channel_.seal(MessageKind::kPartialDistances,
                               encode_partial(partial, round)));
    ++served_;
  } catch (const std::exception& e) {
    net_.report(RoleId::enclave(), RoleFault{role(), msg.sender, e.what()});
  }
}

ProtocolSimulator::ProtocolSimulator(ProtocolOptions options,
                                     std::uint64_t master_seed,
                                     std::function<bool(RoleId)> responds)
    : options_(std::move(options)), master_seed_(master_seed) {
  options_.config.validate();
  std::vector<RoleId> roles{RoleId::enclave(), RoleId::worker(1), RoleId::worker(2)};
  for (std::size_t i = 1; i <= options_.config.n_clients; ++i) {
    roles.push_back(RoleId::client(static_cast<std::uint32_t>(i)));
  }
  session_ = establish_session(roles, master_seed_, responds);
  if (session_.dropped.contains(RoleId::enclave()) ||
      session_.dropped.contains(RoleId::worker(1)) ||
      session_.dropped.contains(RoleId::worker(2))) {
    throw Error(ErrorCode::kValidation, "enclave and both workers must complete the handshake");
  }
  storage_key_ = derive_storage_key(master_seed_);

  net_.attach(RoleId::enclave(), &enclave_inbox_);
  for (auto& ch : session_.channels_for(RoleId::enclave())) {
    const RoleId peer = ch.peer();
    if (peer.kind == RoleKind::kClient) {
      enclave_to_client_.emplace(peer.index, std::move(ch));
    } else if (peer == RoleId::worker(1)) {
      enclave_to_worker1_ = std::make_unique<SecureChannel>(std::move(ch));
    } else if (peer == RoleId::worker(2)) {
      enclave_to_worker2_ = std::make_unique<SecureChannel>(std::move(ch));
    }
  }
  const std::size_t threads = options_.worker_threads;
  worker1_ = std::make_unique<WorkerRole>(
      WorkerId::kOne, session_.channels_for(RoleId::worker(1)).front(), net_, threads);
  worker2_ = std::make_unique<WorkerRole>(
      WorkerId::kTwo, session_.channels_for(RoleId::worker(2)).front(), net_, threads);

  for (std::size_t i = 1; i <= options_.config.n_clients; ++i) {
    const auto id = static_cast<ClientId>(i);
    if (session_.dropped.contains(RoleId::client(id))) continue;
    add_client_role(id);
  }
}

ProtocolSimulator::~ProtocolSimulator() {
  worker1_.reset();
  worker2_.reset();
}

void ProtocolSimulator::add_client_role(ClientId id) {
  auto channels = session_.channels_for(RoleId::client(id));
  clients_.emplace(id, ClientRole(id, std::move(channels.front())));
  net_.attach(RoleId::client(id), &client_inbox_);
  active_.insert(id);
}

void ProtocolSimulator::join_client(ClientId id) {
  if (clients_.contains(id)) {
    active_.insert(id);
    return;
  }
  const std::array<RoleId, 2> pair{RoleId::enclave(), RoleId::client(id)};
  const KeyTable joined = establish_session(pair, master_seed_);
  for (const auto& [link, key] : joined.keys) session_.keys.insert_or_assign(link, key);
  session_.dropped.erase(RoleId::client(id));
  enclave_to_client_.insert_or_assign(
      id, SecureChannel(RoleId::enclave(), RoleId::client(id),
                        session_.keys.at(make_link(RoleId::enclave(), RoleId::client(id)))));
  add_client_role(id);
}

const ClientRole& ProtocolSimulator::client(ClientId id) const {
  auto it = clients_.find(id);
  if (it == clients_.end()) {
    throw Error(ErrorCode::kValidation, "unknown client " + std::to_string(id));
  }
  return it->second;
}

const NoiseCodebook* ProtocolSimulator::current_codebook() const {
  return codebook_ ? &*codebook_ : nullptr;
}

const NoiseCodebook& ProtocolSimulator::managed_codebook(std::size_t rows_needed) {
  const bool usable = codebook_ && codebook_->n >= rows_needed &&
                      codebook_->dim == options_.config.dim;
  if (!(options_.reuse_codebook && usable)) {
    codebook_ = build_codebook(rows_needed, options_.config.dim,
                               options_.config.codebook_constant,
                               round_codebook_seed(master_seed_, round_));
  }
  return *codebook_;
}

RoundOutcome ProtocolSimulator::run_round(const GradientSource& source,
                                          std::span<const DropoutEvent> drops) {
  return execute(source, drops, nullptr);
}

RoundOutcome ProtocolSimulator::run_round(const GradientSource& source,
                                          const NoiseCodebook& cb,
                                          std::span<const DropoutEvent> drops) {
  return execute(source, drops, &cb);
}

RoundOutcome ProtocolSimulator::execute(const GradientSource& source,
                                        std::span<const DropoutEvent> drops,
                                        const NoiseCodebook* supplied) {
  const SystemConfig& cfg = options_.config;
  // Replies to an aborted round may still be in flight.
  for (std::stop_source never; outstanding_worker_replies_ > 0;
       --outstanding_worker_replies_) {
    enclave_inbox_.pop(never.get_token());
  }
  const std::size_t round = round_++;
  RoundOutcome out;
  out.round_index = round;

  RoundState state;
  state.round_index = round;
  state.n_byzantine = cfg.n_byzantine;
  state.participants.assign(active_.begin(), active_.end());

  std::vector<ClientId> early;
  std::vector<ClientId> late;
  for (const auto& d : drops) {
    if (d.round != round) continue;
    (d.phase == DropPhase::kBeforeUpload ? early : late).push_back(d.client);
  }
  // Drops deferred from the previous round apply now.
  early.insert(early.end(), pending_drops_.begin(), pending_drops_.end());
  pending_drops_.clear();

  auto fail_precondition = [&](const std::string& why) {
    out.status = RoundStatus::kFailedPrecondition;
    out.message = why;
    out.participating_ids = state.participants;
    return out;
  };

  try {
    handle_dropout(state, early);
  } catch (const Error& e) {
    return fail_precondition(e.what());
  }
  out.participating_ids = state.participants;
  const std::size_t n = state.participants.size();

  try {
    // Upload: each participant seals its gradient to the enclave.
    auto t0 = Clock::now();
    for (ClientId id : state.participants) {
      GradientVector g = source(id, round);
      g.client_id = id;
      net_.deliver(clients_.at(id).upload(g, round));
    }
    std::vector<GradientVector> gradients;
    gradients.reserve(n);
    for (std::size_t received = 0; received < n; ++received) {
      auto item = enclave_inbox_.try_pop();
      if (!item) throw Error(ErrorCode::kValidation, "missing client upload");
      const auto& msg = std::get<SealedMessage>(*item);
      try {
        if (msg.kind != MessageKind::kGradientUpload ||
            msg.sender.kind != RoleKind::kClient) {
          throw Error(ErrorCode::kAuthentication, "unexpected message during upload");
        }
        auto& ch = enclave_to_client_.at(msg.sender.index);
        GradientVector g = decode_upload(ch.open(msg), round);
        if (g.client_id != msg.sender.index) {
          throw Error(ErrorCode::kAuthentication, "upload claims another client id");
        }
        require_finite(g, cfg.dim);
        gradients.push_back(std::move(g));
      } catch (const Error& e) {
        throw RoundAbort{msg.sender, e.what()};
      }
    }
    std::sort(gradients.begin(), gradients.end(),
              [](const auto& a, const auto& b) { return a.client_id < b.client_id; });
    out.timings.push_back({"upload", micros_since(t0)});
    state.phase = RoundPhase::kEncoding;

    // Encode inside the enclave with rows fetched from sealed storage.
    t0 = Clock::now();
    if (cfg.clip_norm) {
      for (auto& g : gradients) g = clip_to_norm(g, *cfg.clip_norm);
    }
    const std::size_t rows_needed = std::max<std::size_t>(
        cfg.n_clients, *std::max_element(state.participants.begin(),
                                         state.participants.end()));
    const NoiseCodebook& cb = supplied ? *supplied : managed_codebook(rows_needed);
    if (cb.dim != cfg.dim || cb.n < rows_needed) {
      throw Error(ErrorCode::kValidation, "codebook too small for the participant set");
    }
    std::array<std::uint8_t, 16> salt{};
    for (int b = 0; b < 8; ++b) salt[b] = static_cast<std::uint8_t>(cb.seed >> (8 * b));
    for (int b = 0; b < 8; ++b) salt[8 + b] = static_cast<std::uint8_t>(round >> (8 * b));
    auto blob = seal_codebook(cb, storage_key_, salt, options_.batch_rows);
    if (options_.sealed_codebook_path) {
      byte_io::write_file(*options_.sealed_codebook_path, blob);
    }
    SealedCodebookReader rows(std::move(blob), storage_key_);
    out.codebook_seed = cb.seed;
    out.codebook_rows = cb.n;

    std::vector<EncodedSharePair> pairs;
    pairs.reserve(n);
    for (const auto& g : gradients) {
      pairs.push_back(encode_client_gradient(g, rows.row(g.client_id - 1)));
    }
    auto [set1, set2] = split_shares(pairs);
    pairs.clear();
    out.timings.push_back({"encode", micros_since(t0)});

    t0 = Clock::now();
    net_.deliver(enclave_to_worker1_->seal(MessageKind::kShareSet,
                                           encode_share_set(set1, round)));
    net_.deliver(enclave_to_worker2_->seal(MessageKind::kShareSet,
                                           encode_share_set(set2, round)));
    outstanding_worker_replies_ = 2;
    state.phase = RoundPhase::kSharesSent;
    if (!late.empty()) handle_dropout(state, late);

    // Collect both partial matrices, then process them in worker order.
    std::vector<SealedMessage> replies;
    std::stop_source never;
    while (replies.size() < 2) {
      auto item = enclave_inbox_.pop(never.get_token());
      --outstanding_worker_replies_;
      if (const auto* fault = std::get_if<RoleFault>(&*item)) {
        throw RoundAbort{fault->culprit, to_string(fault->reporter) + ": " + fault->what};
      }
      replies.push_back(std::get<SealedMessage>(std::move(*item)));
    }
    std::sort(replies.begin(), replies.end(),
              [](const auto& a, const auto& b) { return a.sender < b.sender; });
    std::vector<PartialDistanceMatrix> partials;
    for (const auto& msg : replies) {
      try {
        SecureChannel* ch = msg.sender == RoleId::worker(1)   ? enclave_to_worker1_.get()
                            : msg.sender == RoleId::worker(2) ? enclave_to_worker2_.get()
                                                              : nullptr;
        if (!ch || msg.kind != MessageKind::kPartialDistances) {
          throw Error(ErrorCode::kAuthentication, "unexpected reply");
        }
        auto p = decode_partial(ch->open(msg), round);
        if (p.matrix.size() != n) throw Error(ErrorCode::kFormat, "partial matrix size");
        partials.push_back(std::move(p));
      } catch (const Error& e) {
        throw RoundAbort{msg.sender, e.what()};
      }
    }
    out.timings.push_back({"distances", micros_since(t0)});

    t0 = Clock::now();
    const DistanceMatrix decoded =
        decode_distances(partials[0], partials[1], cb.constant);
    std::vector<ClientId> ids;
    for (const auto& g : gradients) ids.push_back(g.client_id);
    const ScoreTable scores = score_clients(decoded, cfg.n_byzantine, ids);
    std::size_t k = n;
    if (options_.aggregator == Aggregator::kMultiKrum) {
      k = cfg.select_k == 0 ? n - cfg.n_byzantine - 2
                            : std::min(cfg.select_k, n - cfg.n_byzantine);
    }
    out.selection = select_top_k(scores, k);
    out.timings.push_back({"select", micros_since(t0)});

    t0 = Clock::now();
    out.aggregate = aggregate_selected(gradients, *out.selection);
    out.leakage = mi_bound(estimate_variances(gradients), equivalent_sigma(cb),
                           VarianceSource::kEstimated);
    out.timings.push_back({"aggregate", micros_since(t0)});

    t0 = Clock::now();
    for (ClientId id : state.participants) {
      net_.deliver(enclave_to_client_.at(id).seal(MessageKind::kAggregate,
                                                  encode_aggregate(*out.aggregate, round)));
    }
    while (auto item = client_inbox_.try_pop()) {
      const auto& msg = std::get<SealedMessage>(*item);
      clients_.at(msg.receiver.index).receive(msg);
    }
    out.timings.push_back({"broadcast", micros_since(t0)});
    state.phase = RoundPhase::kDecided;
  } catch (const RoundAbort& abort) {
    out.status = RoundStatus::kAborted;
    out.message = abort.what;
    out.culprit = abort.culprit;
    out.selection.reset();
    out.aggregate.reset();
    out.leakage.reset();
    // Uploads are delivered synchronously, so anything left besides worker
    // replies can be dropped now.
    if (outstanding_worker_replies_ == 0) {
      while (enclave_inbox_.try_pop()) {
      }
    }
    while (client_inbox_.try_pop()) {
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kResilience) return fail_precondition(e.what());
    throw;
  }
  out.deferred_drops = state.deferred_drops;
  pending_drops_ = state.deferred_drops;
  return out;
}

}  // namespace maskedkrum
