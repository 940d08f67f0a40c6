#include "maskedkrum/sealing.hpp"

#include <sodium.h>

#include <algorithm>
#include <cstring>
#include <string>

#include "maskedkrum/byte_io.hpp"
#include "maskedkrum/error.hpp"

namespace maskedkrum {
namespace {

constexpr std::array<MessageKind, 1> kClientKinds{MessageKind::kAggregate};
constexpr std::array<MessageKind, 2> kEnclaveKinds{
    MessageKind::kGradientUpload, MessageKind::kPartialDistances};
constexpr std::array<MessageKind, 1> kWorkerKinds{MessageKind::kShareSet};

constexpr std::array<char, 4> kSealedMagic{'N', 'C', 'B', 'S'};
constexpr std::uint16_t kSealedVersion = 1;

void put_role(std::vector<std::uint8_t>& out, const RoleId& r) {
  out.push_back(static_cast<std::uint8_t>(r.kind));
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(r.index >> (8 * b)));
}

// Keyed hash over a domain tag and arbitrary parts.
SessionKey derive(std::string_view tag,
                  std::initializer_list<std::span<const std::uint8_t>> parts) {
  crypto_generichash_state state;
  crypto_generichash_init(&state, nullptr, 0, kKeyBytes);
  crypto_generichash_update(&state,
                            reinterpret_cast<const unsigned char*>(tag.data()),
                            tag.size());
  for (auto p : parts) crypto_generichash_update(&state, p.data(), p.size());
  SessionKey out{};
  crypto_generichash_final(&state, out.data(), out.size());
  return out;
}

std::array<std::uint8_t, 8> seed_bytes(std::uint64_t seed) {
  std::array<std::uint8_t, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(seed >> (8 * i));
  return b;
}

struct KeyPair {
  std::array<std::uint8_t, crypto_scalarmult_BYTES> pk{};
  std::array<std::uint8_t, crypto_scalarmult_SCALARBYTES> sk{};
};

KeyPair role_keypair(std::uint64_t master_seed, const RoleId& role) {
  std::vector<std::uint8_t> role_bytes;
  put_role(role_bytes, role);
  const auto seed = seed_bytes(master_seed);
  const SessionKey secret = derive("maskedkrum/role-secret", {seed, role_bytes});
  KeyPair kp;
  std::copy(secret.begin(), secret.end(), kp.sk.begin());
  crypto_scalarmult_base(kp.pk.data(), kp.sk.data());
  return kp;
}

bool link_permitted(const RoleId& a, const RoleId& b) {
  const bool a_enclave = a.kind == RoleKind::kEnclave;
  const bool b_enclave = b.kind == RoleKind::kEnclave;
  return a_enclave != b_enclave;
}

Nonce chunk_nonce(std::uint32_t index) {
  Nonce n{};
  for (int b = 0; b < 4; ++b) n[b] = static_cast<std::uint8_t>(index >> (8 * b));
  return n;
}

std::vector<std::uint8_t> chunk_ad(std::uint32_t index) {
  std::vector<std::uint8_t> ad(kSealedMagic.begin(), kSealedMagic.end());
  for (int b = 0; b < 4; ++b) ad.push_back(static_cast<std::uint8_t>(index >> (8 * b)));
  return ad;
}

std::vector<std::uint8_t> aead_seal(const SessionKey& key, const Nonce& nonce,
                                    std::span<const std::uint8_t> ad,
                                    std::span<const std::uint8_t> payload) {
  std::vector<std::uint8_t> out(payload.size() + kTagBytes);
  unsigned long long len = 0;
  crypto_aead_chacha20poly1305_ietf_encrypt(
      out.data(), &len, payload.data(), payload.size(), ad.data(), ad.size(),
      nullptr, nonce.data(), key.data());
  out.resize(len);
  return out;
}

std::vector<std::uint8_t> aead_open(const SessionKey& key, const Nonce& nonce,
                                    std::span<const std::uint8_t> ad,
                                    std::span<const std::uint8_t> ciphertext) {
  if (ciphertext.size() < kTagBytes) {
    throw Error(ErrorCode::kAuthentication, "ciphertext shorter than tag");
  }
  std::vector<std::uint8_t> out(ciphertext.size() - kTagBytes);
  unsigned long long len = 0;
  if (crypto_aead_chacha20poly1305_ietf_decrypt(
          out.data(), &len, nullptr, ciphertext.data(), ciphertext.size(),
          ad.data(), ad.size(), nonce.data(), key.data()) != 0) {
    throw Error(ErrorCode::kAuthentication, "message authentication failed");
  }
  out.resize(len);
  return out;
}

}  // namespace

void ensure_crypto_initialized() {
  if (sodium_init() < 0) {
    throw Error(ErrorCode::kAuthentication, "libsodium initialization failed");
  }
}

RoleId RoleId::worker(std::uint32_t j) {
  if (j != 1 && j != 2) {
    throw Error(ErrorCode::kValidation, "worker id must be 1 or 2");
  }
  return {RoleKind::kWorker, j};
}

std::string to_string(const RoleId& role) {
  switch (role.kind) {
    case RoleKind::kClient: return "client-" + std::to_string(role.index);
    case RoleKind::kEnclave: return "enclave";
    case RoleKind::kWorker: return "worker-" + std::to_string(role.index);
  }
  return "unknown";
}

std::string_view to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::kGradientUpload: return "gradient-upload";
    case MessageKind::kShareSet: return "share-set";
    case MessageKind::kPartialDistances: return "partial-distances";
    case MessageKind::kAggregate: return "aggregate";
  }
  return "unknown";
}

std::span<const MessageKind> deliverable_kinds(RoleKind receiver) {
  switch (receiver) {
    case RoleKind::kClient: return kClientKinds;
    case RoleKind::kEnclave: return kEnclaveKinds;
    case RoleKind::kWorker: return kWorkerKinds;
  }
  return {};
}

std::vector<std::uint8_t> associated_data(const SealedMessage& msg) {
  std::vector<std::uint8_t> ad;
  put_role(ad, msg.sender);
  put_role(ad, msg.receiver);
  ad.push_back(static_cast<std::uint8_t>(msg.kind));
  return ad;
}

std::vector<std::uint8_t> open_with_key(const SessionKey& key,
                                        const SealedMessage& msg) {
  return aead_open(key, msg.nonce, associated_data(msg), msg.ciphertext);
}

std::vector<std::uint8_t> seal_with_key(const SessionKey& key,
                                        SealedMessage& msg,
                                        std::span<const std::uint8_t> payload) {
  msg.ciphertext = aead_seal(key, msg.nonce, associated_data(msg), payload);
  return msg.ciphertext;
}

SecureChannel::SecureChannel(RoleId self, RoleId peer, const SessionKey& key)
    : self_(self), peer_(peer), key_(key) {}

SealedMessage SecureChannel::seal(MessageKind kind,
                                  std::span<const std::uint8_t> payload) {
  SealedMessage msg{self_, peer_, kind, {}, {}};
  msg.nonce[0] = self_ < peer_ ? 0x01 : 0x02;
  const std::uint64_t counter = send_counter_++;
  for (int b = 0; b < 8; ++b) {
    msg.nonce[4 + b] = static_cast<std::uint8_t>(counter >> (8 * b));
  }
  seal_with_key(key_, msg, payload);
  return msg;
}

std::vector<std::uint8_t> SecureChannel::open(const SealedMessage& msg) {
  if (msg.receiver != self_ || msg.sender != peer_) {
    throw Error(ErrorCode::kAuthentication,
                "message for " + to_string(msg.receiver) + " from " +
                    to_string(msg.sender) + " arrived on the " +
                    to_string(self_) + "/" + to_string(peer_) + " channel");
  }
  const std::uint8_t expected_dir = peer_ < self_ ? 0x01 : 0x02;
  if (msg.nonce[0] != expected_dir) {
    throw Error(ErrorCode::kAuthentication, "nonce direction mismatch");
  }
  std::uint64_t counter = 0;
  for (int b = 0; b < 8; ++b) counter |= std::uint64_t{msg.nonce[4 + b]} << (8 * b);
  if (last_received_ && counter <= *last_received_) {
    throw Error(ErrorCode::kAuthentication, "replayed or reordered nonce");
  }
  auto plain = open_with_key(key_, msg);
  last_received_ = counter;
  return plain;
}

Link make_link(RoleId a, RoleId b) {
  return a < b ? Link{a, b} : Link{b, a};
}

std::vector<SecureChannel> KeyTable::channels_for(RoleId role) const {
  std::vector<SecureChannel> out;
  for (const auto& [link, key] : keys) {
    if (link.first == role) out.emplace_back(role, link.second, key);
    if (link.second == role) out.emplace_back(role, link.first, key);
  }
  return out;
}

bool KeyTable::has_link(RoleId a, RoleId b) const {
  return keys.contains(make_link(a, b));
}

KeyTable establish_session(std::span<const RoleId> roles,
                           std::uint64_t master_seed,
                           const std::function<bool(RoleId)>& responds) {
  ensure_crypto_initialized();
  KeyTable table;
  std::map<RoleId, KeyPair> published;
  for (const auto& role : roles) {
    if (responds && !responds(role)) {
      table.dropped.insert(role);
      continue;
    }
    published.emplace(role, role_keypair(master_seed, role));
  }
  for (auto a = published.begin(); a != published.end(); ++a) {
    for (auto b = std::next(a); b != published.end(); ++b) {
      if (!link_permitted(a->first, b->first)) continue;
      std::array<std::uint8_t, crypto_scalarmult_BYTES> shared{};
      if (crypto_scalarmult(shared.data(), a->second.sk.data(),
                            b->second.pk.data()) != 0) {
        throw Error(ErrorCode::kAuthentication, "degenerate key exchange");
      }
      // a < b in map order, so both sides hash the public values identically.
      table.keys.emplace(make_link(a->first, b->first),
                         derive("maskedkrum/session",
                                {shared, a->second.pk, b->second.pk}));
      sodium_memzero(shared.data(), shared.size());
    }
  }
  return table;
}

SessionKey derive_storage_key(std::uint64_t master_seed) {
  ensure_crypto_initialized();
  const auto seed = seed_bytes(master_seed);
  return derive("maskedkrum/enclave-storage", {seed});
}

std::vector<std::uint8_t> seal_codebook(const NoiseCodebook& cb,
                                        const SessionKey& storage_key,
                                        std::span<const std::uint8_t, 16> salt,
                                        std::size_t batch_rows) {
  ensure_crypto_initialized();
  if (batch_rows == 0) {
    throw Error(ErrorCode::kValidation, "batch_rows must be positive");
  }
  const SessionKey file_key = derive("maskedkrum/codebook-file", {storage_key, salt});
  const auto plain = encode_codebook(cb);
  const std::size_t row_bytes = cb.dim * 8;
  const std::size_t n_batches = (cb.n + batch_rows - 1) / batch_rows;

  byte_io::Writer w;
  for (char c : kSealedMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kSealedVersion);
  w.u16(0);
  w.u32(static_cast<std::uint32_t>(batch_rows));
  w.u32(static_cast<std::uint32_t>(1 + n_batches));
  w.bytes(salt);

  auto emit = [&](std::uint32_t index, std::span<const std::uint8_t> chunk) {
    const Nonce nonce = chunk_nonce(index);
    const auto sealed = aead_seal(file_key, nonce, chunk_ad(index), chunk);
    w.u32(static_cast<std::uint32_t>(sealed.size()));
    w.bytes(nonce);
    w.bytes(sealed);
  };
  const std::span<const std::uint8_t> all(plain);
  emit(0, all.first(kCodebookHeaderSize));
  for (std::size_t b = 0; b < n_batches; ++b) {
    const std::size_t first = b * batch_rows;
    const std::size_t rows = std::min(batch_rows, cb.n - first);
    emit(static_cast<std::uint32_t>(b + 1),
         all.subspan(kCodebookHeaderSize + first * row_bytes, rows * row_bytes));
  }
  return w.take();
}

SealedCodebookReader::SealedCodebookReader(std::vector<std::uint8_t> blob,
                                           const SessionKey& storage_key)
    : blob_(std::move(blob)) {
  ensure_crypto_initialized();
  byte_io::Reader r(blob_);
  for (char c : kSealedMagic) {
    if (r.u8() != static_cast<std::uint8_t>(c)) {
      throw Error(ErrorCode::kFormat, "bad sealed codebook magic");
    }
  }
  if (r.u16() != kSealedVersion) {
    throw Error(ErrorCode::kFormat, "unsupported sealed codebook version");
  }
  r.u16();
  batch_rows_ = r.u32();
  const std::size_t count = r.u32();
  const auto salt = r.bytes(16);
  file_key_ = derive("maskedkrum/codebook-file", {storage_key, salt});
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t len = r.u32();
    const std::size_t offset = blob_.size() - r.remaining();
    r.bytes(kNonceBytes + len);
    chunks_.emplace_back(offset, len);
  }
  if (r.remaining() != 0 || chunks_.empty() || batch_rows_ == 0) {
    throw Error(ErrorCode::kFormat, "malformed sealed codebook");
  }

  auto header_bytes = open_chunk(0);
  header_ = decode_codebook_header(header_bytes);
  const std::size_t expected = (header_.n + batch_rows_ - 1) / batch_rows_;
  if (chunks_.size() != expected + 1) {
    throw Error(ErrorCode::kFormat, "sealed codebook chunk count mismatch");
  }
}

std::vector<std::uint8_t> SealedCodebookReader::open_chunk(
    std::size_t index) const {
  const auto [offset, len] = chunks_.at(index);
  Nonce nonce{};
  std::memcpy(nonce.data(), blob_.data() + offset, kNonceBytes);
  if (nonce != chunk_nonce(static_cast<std::uint32_t>(index))) {
    throw Error(ErrorCode::kAuthentication, "sealed chunk out of place");
  }
  const std::span<const std::uint8_t> ct(blob_.data() + offset + kNonceBytes, len);
  return aead_open(file_key_, nonce, chunk_ad(static_cast<std::uint32_t>(index)), ct);
}

std::span<const double> SealedCodebookReader::row(std::size_t i) {
  if (i >= header_.n) {
    throw Error(ErrorCode::kValidation,
                "codebook row " + std::to_string(i) + " out of range");
  }
  const std::size_t batch = i / batch_rows_;
  if (cached_batch_ != batch) {
    const auto bytes = open_chunk(batch + 1);
    byte_io::Reader r(bytes);
    cached_rows_ = r.f64s(bytes.size() / 8);
    cached_batch_ = batch;
    ++batches_opened_;
  }
  const std::size_t local = i - batch * batch_rows_;
  return {cached_rows_.data() + local * header_.dim, header_.dim};
}

NoiseCodebook SealedCodebookReader::load_all() {
  NoiseCodebook cb = header_;
  cb.vectors.clear();
  cb.vectors.reserve(cb.n * cb.dim);
  for (std::size_t i = 0; i < cb.n; ++i) {
    const auto r = row(i);
    cb.vectors.insert(cb.vectors.end(), r.begin(), r.end());
  }
  return cb;
}

void write_sealed_codebook(const NoiseCodebook& cb,
                           const std::filesystem::path& path,
                           const SessionKey& storage_key,
                           std::span<const std::uint8_t, 16> salt,
                           std::size_t batch_rows) {
  byte_io::write_file(path, seal_codebook(cb, storage_key, salt, batch_rows));
}

}  // namespace maskedkrum
