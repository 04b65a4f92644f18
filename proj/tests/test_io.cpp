#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <random>

#include "vmloc/io.hpp"
#include "vmloc/world.hpp"

using namespace vmloc;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("vmloc_test_" + name)).string();
}

std::vector<SampleRecord> random_records(std::size_t n, std::size_t f1, std::size_t f2, std::mt19937_64& rng) {
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> pres(0, 2);
  std::vector<SampleRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    SampleRecord r;
    const int p = pres(rng);
    if (p != 2) {
      r.x1 = Features(f1);
      for (auto& v : *r.x1) v = nd(rng) * 1e3;
    }
    if (p != 1) {
      r.x2 = Features(f2);
      for (auto& v : *r.x2) v = nd(rng) * 1e-7;
    }
    r.pose = Pose::normalized({nd(rng), nd(rng), nd(rng)}, {nd(rng), nd(rng), nd(rng), nd(rng)});
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace

TEST(DatasetIoTest, RoundTripIsLossless) {
  std::mt19937_64 rng(1);
  const auto recs = random_records(1000, 7, 3, rng);
  const std::string path = temp_path("roundtrip.vmld");
  write_dataset(path, recs, 7, 3);
  const auto back = read_dataset(path);
  EXPECT_EQ(back.f1, 7u);
  EXPECT_EQ(back.f2, 3u);
  ASSERT_EQ(back.records.size(), recs.size());
  EXPECT_TRUE(back.records == recs);
  std::filesystem::remove(path);
}

TEST(DatasetIoTest, ByteLayout) {
  const SampleRecord r{Features{1.0}, std::nullopt, Pose({0.5, 0, 0}, {1, 0, 0, 0})};
  const auto bytes = encode_dataset(std::span<const SampleRecord>(&r, 1), 1, 2);
  ASSERT_EQ(bytes.size(), 5u + 12u + (1 + 8) + (1 + 16) + 56u);
  EXPECT_EQ(std::string(bytes.data(), 5), "VMLD1");
  EXPECT_EQ(bytes[5], 1);  // n, little-endian
  EXPECT_EQ(bytes[6], 0);
  EXPECT_EQ(bytes[9], 1);   // F1
  EXPECT_EQ(bytes[13], 2);  // F2
  EXPECT_EQ(bytes[17], 1);  // x1 present
  // 1.0 = 0x3FF0000000000000, LE: last byte 0x3F
  EXPECT_EQ(static_cast<unsigned char>(bytes[25]), 0x3F);
  EXPECT_EQ(bytes[26], 0);  // x2 absent
  for (int i = 27; i < 43; ++i) EXPECT_EQ(bytes[i], 0);
  // px = 0.5 = 0x3FE0000000000000 at bytes 43..50
  EXPECT_EQ(static_cast<unsigned char>(bytes[49]), 0xE0);
  EXPECT_EQ(static_cast<unsigned char>(bytes[50]), 0x3F);
}

TEST(DatasetIoTest, RejectsBadInput) {
  std::mt19937_64 rng(2);
  const auto recs = random_records(3, 2, 2, rng);
  auto bytes = encode_dataset(recs, 2, 2);
  auto bad = bytes;
  bad[4] = '2';
  EXPECT_THROW(decode_dataset(bad), DataError);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(decode_dataset(truncated), DataError);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_dataset(trailing), DataError);
  auto presence = bytes;
  presence[17] = 7;
  EXPECT_THROW(decode_dataset(presence), DataError);
  EXPECT_THROW(encode_dataset(recs, 3, 2), DataError);
  EXPECT_THROW(read_dataset("/nonexistent/file.vmld"), DataError);
}

TEST(CheckpointTest, SaveLoadReproducesPredictionsBitwise) {
  WorldSpec spec;
  spec.n_train = 20;
  spec.n_test = 30;
  const auto d = generate(spec);
  for (Variant v : {Variant::full, Variant::attention_concat}) {
    TrainConfig c;
    c.variant = v;
    c.latent_dim = 16;
    c.attention.positions = 4;
    VmlocModel m(c.model_config(spec.m1.dim(), spec.m2.dim()));
    std::mt19937_64 rng(3);
    for (auto* p : m.parameters())
      for (auto& x : p->value.data()) x += std::normal_distribution<double>(0, 0.1)(rng);
    const std::string path = temp_path("model.ckpt");
    save_checkpoint(path, m);
    VmlocModel back = load_checkpoint(path);
    EXPECT_TRUE(m.predict(d.test) == back.predict(d.test));
    EXPECT_EQ(encode_checkpoint(m), encode_checkpoint(back));
    std::filesystem::remove(path);
  }
}

TEST(CheckpointTest, RejectsCorruptFiles) {
  TrainConfig c;
  c.latent_dim = 8;
  c.attention.positions = 2;
  VmlocModel m(c.model_config(3, 4));
  const auto bytes = encode_checkpoint(m);
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), DataError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(decode_checkpoint(version), DataError);
  auto truncated = bytes;
  truncated.resize(bytes.size() / 2);
  EXPECT_THROW(decode_checkpoint(truncated), DataError);
}
