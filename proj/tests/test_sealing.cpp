#include "maskedkrum/sealing.hpp"

#include <gtest/gtest.h>

#include <filesystem>

#include "maskedkrum/byte_io.hpp"
#include "maskedkrum/error.hpp"

namespace maskedkrum {
namespace {

std::vector<RoleId> standard_roles(std::uint32_t clients) {
  std::vector<RoleId> roles{RoleId::enclave(), RoleId::worker(1), RoleId::worker(2)};
  for (std::uint32_t i = 1; i <= clients; ++i) roles.push_back(RoleId::client(i));
  return roles;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::kIo;
}

TEST(Session, KeyCountAndTopology) {
  const auto roles = standard_roles(5);
  const auto table = establish_session(roles, 1);
  EXPECT_EQ(table.keys.size(), 7u);
  EXPECT_TRUE(table.dropped.empty());
  EXPECT_TRUE(table.has_link(RoleId::client(3), RoleId::enclave()));
  EXPECT_TRUE(table.has_link(RoleId::enclave(), RoleId::worker(2)));
  EXPECT_FALSE(table.has_link(RoleId::worker(1), RoleId::worker(2)));
  EXPECT_FALSE(table.has_link(RoleId::worker(1), RoleId::client(1)));
  EXPECT_FALSE(table.has_link(RoleId::client(1), RoleId::client(2)));
  EXPECT_EQ(table.channels_for(RoleId::worker(1)).size(), 1u);
  EXPECT_EQ(table.channels_for(RoleId::enclave()).size(), 7u);
}

TEST(Session, UnresponsiveClientIsDropped) {
  const auto roles = standard_roles(5);
  const auto table = establish_session(
      roles, 1, [](RoleId r) { return r != RoleId::client(3); });
  EXPECT_EQ(table.keys.size(), 6u);
  EXPECT_EQ(table.dropped, (std::set<RoleId>{RoleId::client(3)}));
}

TEST(Session, DeterministicAndDistinctKeys) {
  const auto roles = standard_roles(3);
  const auto a = establish_session(roles, 42), b = establish_session(roles, 42);
  EXPECT_EQ(a.keys, b.keys);
  std::set<SessionKey> distinct;
  for (const auto& [_, k] : a.keys) distinct.insert(k);
  EXPECT_EQ(distinct.size(), a.keys.size());
  EXPECT_NE(establish_session(roles, 43).keys, a.keys);
}

TEST(SecureChannel, RoundTripAndNonceUniqueness) {
  const auto table = establish_session(standard_roles(1), 7);
  auto client = table.channels_for(RoleId::client(1)).front();
  SecureChannel enclave(RoleId::enclave(), RoleId::client(1),
                        table.keys.at(make_link(RoleId::enclave(), RoleId::client(1))));
  const std::vector<std::uint8_t> payload{1, 2, 3, 4};
  std::set<Nonce> nonces;
  for (int i = 0; i < 5; ++i) {
    const auto up = client.seal(MessageKind::kGradientUpload, payload);
    EXPECT_EQ(enclave.open(up), payload);
    const auto down = enclave.seal(MessageKind::kAggregate, payload);
    EXPECT_EQ(client.open(down), payload);
    EXPECT_TRUE(nonces.insert(up.nonce).second);
    EXPECT_TRUE(nonces.insert(down.nonce).second);
  }
}

TEST(SecureChannel, TamperingFailsAuthentication) {
  const auto table = establish_session(standard_roles(1), 7);
  auto client = table.channels_for(RoleId::client(1)).front();
  const auto key = table.keys.at(make_link(RoleId::enclave(), RoleId::client(1)));
  const std::vector<std::uint8_t> payload(40, 0xAB);
  const auto msg = client.seal(MessageKind::kGradientUpload, payload);
  for (std::size_t byte = 0; byte < msg.ciphertext.size(); ++byte) {
    auto flipped = msg;
    flipped.ciphertext[byte] ^= 0x01;
    EXPECT_EQ(code_of([&] { open_with_key(key, flipped); }), ErrorCode::kAuthentication);
  }
  auto wrong_kind = msg;
  wrong_kind.kind = MessageKind::kAggregate;
  EXPECT_EQ(code_of([&] { open_with_key(key, wrong_kind); }), ErrorCode::kAuthentication);
}

TEST(SecureChannel, WorkerCannotOpenClientUpload) {
  const auto table = establish_session(standard_roles(2), 5);
  auto client = table.channels_for(RoleId::client(1)).front();
  const auto msg = client.seal(MessageKind::kGradientUpload, std::vector<std::uint8_t>{9, 9});
  const auto worker_key = table.keys.at(make_link(RoleId::enclave(), RoleId::worker(1)));
  EXPECT_EQ(code_of([&] { open_with_key(worker_key, msg); }), ErrorCode::kAuthentication);
  auto worker = table.channels_for(RoleId::worker(1)).front();
  EXPECT_EQ(code_of([&] { worker.open(msg); }), ErrorCode::kAuthentication);
}

TEST(SecureChannel, ReplayRejected) {
  const auto table = establish_session(standard_roles(1), 7);
  auto client = table.channels_for(RoleId::client(1)).front();
  SecureChannel enclave(RoleId::enclave(), RoleId::client(1),
                        table.keys.at(make_link(RoleId::enclave(), RoleId::client(1))));
  const auto msg = client.seal(MessageKind::kGradientUpload, std::vector<std::uint8_t>{1});
  enclave.open(msg);
  EXPECT_EQ(code_of([&] { enclave.open(msg); }), ErrorCode::kAuthentication);
}

TEST(Roles, DeliverableKinds) {
  const auto worker = deliverable_kinds(RoleKind::kWorker);
  EXPECT_EQ(std::vector<MessageKind>(worker.begin(), worker.end()),
            (std::vector<MessageKind>{MessageKind::kShareSet}));
  const auto client = deliverable_kinds(RoleKind::kClient);
  EXPECT_EQ(std::vector<MessageKind>(client.begin(), client.end()),
            (std::vector<MessageKind>{MessageKind::kAggregate}));
  EXPECT_THROW(RoleId::worker(3), Error);
}

TEST(SealedCodebook, RowBatchesMatchPlainCodebook) {
  const auto cb = build_codebook(150, 160, 9.0, 4);
  const auto key = derive_storage_key(1);
  std::array<std::uint8_t, 16> salt{};
  salt[0] = 5;
  SealedCodebookReader reader(seal_codebook(cb, key, salt, 64), key);
  EXPECT_EQ(reader.n(), 150u);
  EXPECT_EQ(reader.dim(), 160u);
  EXPECT_EQ(reader.constant(), 9.0);
  EXPECT_EQ(reader.batches_opened(), 0u);
  const auto r70 = reader.row(70);
  EXPECT_TRUE(std::equal(r70.begin(), r70.end(), cb.row(70).begin()));
  reader.row(100);
  EXPECT_EQ(reader.batches_opened(), 1u);
  EXPECT_EQ(reader.load_all(), cb);
  EXPECT_EQ(reader.batches_opened(), 4u);
}

TEST(SealedCodebook, WrongKeyOrTamperFails) {
  const auto cb = build_codebook(3, 4, 1.0, 0);
  std::array<std::uint8_t, 16> salt{};
  auto blob = seal_codebook(cb, derive_storage_key(1), salt);
  EXPECT_EQ(code_of([&] { SealedCodebookReader(blob, derive_storage_key(2)); }),
            ErrorCode::kAuthentication);
  blob.back() ^= 0x80;
  SealedCodebookReader reader(blob, derive_storage_key(1));
  EXPECT_EQ(code_of([&] { reader.row(0); }), ErrorCode::kAuthentication);
}

TEST(SealedCodebook, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "mk_sealed.ncbs";
  const auto cb = build_codebook(5, 8, 2.0, 6);
  const auto key = derive_storage_key(3);
  std::array<std::uint8_t, 16> salt{1, 2, 3};
  write_sealed_codebook(cb, path, key, salt, 2);
  SealedCodebookReader reader(byte_io::read_file(path), key);
  EXPECT_EQ(reader.batch_rows(), 2u);
  EXPECT_EQ(reader.load_all(), cb);
  std::filesystem::remove(path);
}

}  // namespace
}  // namespace maskedkrum
