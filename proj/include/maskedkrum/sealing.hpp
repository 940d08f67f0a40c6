#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "maskedkrum/noise_codebook.hpp"

namespace maskedkrum {

enum class RoleKind : std::uint8_t { kClient = 1, kEnclave = 2, kWorker = 3 };

struct RoleId {
  RoleKind kind = RoleKind::kEnclave;
  std::uint32_t index = 0;  // client id, worker 1/2, 0 for the enclave

  static RoleId client(std::uint32_t id) { return {RoleKind::kClient, id}; }
  static RoleId enclave() { return {RoleKind::kEnclave, 0}; }
  static RoleId worker(std::uint32_t j);  // throws unless j is 1 or 2

  friend auto operator<=>(const RoleId&, const RoleId&) = default;
};

std::string to_string(const RoleId& role);

enum class MessageKind : std::uint8_t {
  kGradientUpload = 1,   // client -> enclave
  kShareSet = 2,         // enclave -> worker
  kPartialDistances = 3, // worker -> enclave
  kAggregate = 4,        // enclave -> client
};

std::string_view to_string(MessageKind kind);

// Message kinds a role may receive. The router refuses everything else.
std::span<const MessageKind> deliverable_kinds(RoleKind receiver);

inline constexpr std::size_t kKeyBytes = 32;
inline constexpr std::size_t kNonceBytes = 12;
inline constexpr std::size_t kTagBytes = 16;

using SessionKey = std::array<std::uint8_t, kKeyBytes>;
using Nonce = std::array<std::uint8_t, kNonceBytes>;

struct SealedMessage {
  RoleId sender;
  RoleId receiver;
  MessageKind kind = MessageKind::kGradientUpload;
  Nonce nonce{};
  std::vector<std::uint8_t> ciphertext;  // payload followed by the 16-byte tag
};

// Bytes bound into the tag: sender, receiver and kind.
std::vector<std::uint8_t> associated_data(const SealedMessage& msg);

// Authenticated encryption under `key`. Throws kAuthentication when the tag
// does not verify.
std::vector<std::uint8_t> open_with_key(const SessionKey& key,
                                        const SealedMessage& msg);
std::vector<std::uint8_t> seal_with_key(const SessionKey& key,
                                        SealedMessage& msg,
                                        std::span<const std::uint8_t> payload);

// One endpoint's view of a pairwise link. Outgoing nonces are
// (direction byte, 3 zero bytes, 64-bit counter), so the two directions of a
// link never share a nonce; incoming counters must strictly increase.
class SecureChannel {
 public:
  SecureChannel(RoleId self, RoleId peer, const SessionKey& key);

  SealedMessage seal(MessageKind kind, std::span<const std::uint8_t> payload);
  std::vector<std::uint8_t> open(const SealedMessage& msg);

  RoleId self() const { return self_; }
  RoleId peer() const { return peer_; }

 private:
  RoleId self_;
  RoleId peer_;
  SessionKey key_;
  std::uint64_t send_counter_ = 0;
  std::optional<std::uint64_t> last_received_;
};

using Link = std::pair<RoleId, RoleId>;  // ordered, first < second

Link make_link(RoleId a, RoleId b);

struct KeyTable {
  std::map<Link, SessionKey> keys;
  std::set<RoleId> dropped;

  // All links this role is an endpoint of.
  std::vector<SecureChannel> channels_for(RoleId role) const;
  bool has_link(RoleId a, RoleId b) const;
};

// Each role derives an X25519 key pair from (master_seed, role), publishes
// the public half, and every permitted pair (client i, enclave) and
// (enclave, worker j) hashes the shared secret with both public values into a
// session key. Roles for which `responds` returns false time out and are
// listed in `dropped`; workers never get a link to each other or to clients.
KeyTable establish_session(std::span<const RoleId> roles,
                           std::uint64_t master_seed,
                           const std::function<bool(RoleId)>& responds = {});

// Sealed codebook storage: the NCBK bytes split into a header chunk and
// row batches, each sealed under a per-file key derived from the enclave's
// storage key and `file_salt`.
//
//   "NCBS" | version u16 | reserved u16 | batch_rows u32 | chunk_count u32 |
//   salt[16] | chunk_count x (length u32 | nonce[12] | ciphertext)
inline constexpr std::size_t kDefaultBatchRows = 64;

std::vector<std::uint8_t> seal_codebook(const NoiseCodebook& cb,
                                        const SessionKey& storage_key,
                                        std::span<const std::uint8_t, 16> salt,
                                        std::size_t batch_rows = kDefaultBatchRows);

// Opens the header eagerly and row batches on demand.
class SealedCodebookReader {
 public:
  SealedCodebookReader(std::vector<std::uint8_t> blob,
                       const SessionKey& storage_key);

  std::size_t n() const { return header_.n; }
  std::size_t dim() const { return header_.dim; }
  double constant() const { return header_.constant; }
  std::uint64_t seed() const { return header_.seed; }
  std::size_t batch_rows() const { return batch_rows_; }
  std::size_t batches_opened() const { return batches_opened_; }

  // Row i, decrypting its batch if it is not the one currently cached.
  std::span<const double> row(std::size_t i);

  NoiseCodebook load_all();

 private:
  std::vector<std::uint8_t> open_chunk(std::size_t index) const;

  std::vector<std::uint8_t> blob_;
  SessionKey file_key_{};
  std::size_t batch_rows_ = 0;
  std::vector<std::pair<std::size_t, std::size_t>> chunks_;  // offset, length
  NoiseCodebook header_;  // vectors left empty
  std::optional<std::size_t> cached_batch_;
  std::vector<double> cached_rows_;
  std::size_t batches_opened_ = 0;
};

void write_sealed_codebook(const NoiseCodebook& cb,
                           const std::filesystem::path& path,
                           const SessionKey& storage_key,
                           std::span<const std::uint8_t, 16> salt,
                           std::size_t batch_rows = kDefaultBatchRows);

}  // namespace maskedkrum

namespace maskedkrum {

// Enclave-private key for data at rest, derived from the master seed.
SessionKey derive_storage_key(std::uint64_t master_seed);

// Throws if libsodium cannot be initialized.
void ensure_crypto_initialized();

}  // namespace maskedkrum
