#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "himem/dataset_io.hpp"
#include "himem/synthetic.hpp"

namespace {

namespace fs = std::filesystem;
using himem::Episode;
using himem::Scenario;
using himem::ScenarioSpec;

class DatasetIo : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("himem_io_" +
            std::string(::testing::UnitTest::GetInstance()
                            ->current_test_info()
                            ->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const {
    return (dir_ / name).string();
  }

  fs::path dir_;
};

ScenarioSpec sample_spec() {
  ScenarioSpec spec;
  spec.scenario = Scenario::kTwoByOne;
  spec.action_classes = 10;
  spec.dim = 32;
  spec.noise = 0.1;
  spec.coupling = 0.6;
  spec.mean_duration = 5.0;
  spec.frames = 100;
  spec.seed = 1234;
  return spec;
}

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(file),
          std::istreambuf_iterator<char>()};
}

void dump(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  file.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
}

TEST_F(DatasetIo, RoundTripIsBitwise) {
  Episode ep = himem::generate_episode(sample_spec());
  himem::write_episode(ep, path("ep.hme1"));
  Episode back = himem::read_episode(path("ep.hme1"));

  EXPECT_EQ(back.scenario, ep.scenario);
  EXPECT_EQ(back.seed, ep.seed);
  EXPECT_EQ(back.action_classes, ep.action_classes);
  EXPECT_EQ(back.labels, ep.labels);
  ASSERT_EQ(back.agents(), ep.agents());
  EXPECT_EQ(0, std::memcmp(back.context_features.data().data(),
                           ep.context_features.data().data(),
                           ep.context_features.numel() * sizeof(double)));
  for (std::size_t a = 0; a < ep.agents(); ++a) {
    EXPECT_EQ(0, std::memcmp(back.agent_features[a].data().data(),
                             ep.agent_features[a].data().data(),
                             ep.agent_features[a].numel() * sizeof(double)));
  }
}

TEST_F(DatasetIo, FileSizeFollowsLayoutFormula) {
  Episode ep = himem::generate_episode(sample_spec());
  himem::write_episode(ep, path("ep.hme1"));
  // 40-byte header + T*(4D context + A*(4D + 2)) + 4-byte checksum.
  const std::size_t expected = 40 + 100 * (128 + 2 * (128 + 2)) + 4;
  EXPECT_EQ(himem::episode_file_size(2, 100, 32), expected);
  EXPECT_EQ(fs::file_size(path("ep.hme1")), expected);
}

TEST_F(DatasetIo, RejectsBadMagic) {
  Episode ep = himem::generate_episode(sample_spec());
  himem::write_episode(ep, path("ep.hme1"));
  auto bytes = slurp(path("ep.hme1"));
  bytes[0] = 'X';
  dump(path("bad.hme1"), bytes);
  try {
    himem::read_episode(path("bad.hme1"));
    FAIL() << "expected FormatError";
  } catch (const himem::FormatError& e) {
    EXPECT_EQ(e.byte_offset(), 0u);
  }
}

TEST_F(DatasetIo, RejectsBadVersion) {
  Episode ep = himem::generate_episode(sample_spec());
  himem::write_episode(ep, path("ep.hme1"));
  auto bytes = slurp(path("ep.hme1"));
  bytes[4] = 9;
  dump(path("bad.hme1"), bytes);
  try {
    himem::read_episode(path("bad.hme1"));
    FAIL() << "expected FormatError";
  } catch (const himem::FormatError& e) {
    EXPECT_EQ(e.byte_offset(), 4u);
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
}

TEST_F(DatasetIo, RejectsTruncation) {
  Episode ep = himem::generate_episode(sample_spec());
  himem::write_episode(ep, path("ep.hme1"));
  auto bytes = slurp(path("ep.hme1"));
  bytes.resize(bytes.size() - 10);
  dump(path("bad.hme1"), bytes);
  try {
    himem::read_episode(path("bad.hme1"));
    FAIL() << "expected FormatError";
  } catch (const himem::FormatError& e) {
    EXPECT_EQ(e.byte_offset(), bytes.size());
    EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos);
  }
}

TEST_F(DatasetIo, RejectsChecksumMismatch) {
  Episode ep = himem::generate_episode(sample_spec());
  himem::write_episode(ep, path("ep.hme1"));
  auto bytes = slurp(path("ep.hme1"));
  bytes[100] ^= 0xFF;
  dump(path("bad.hme1"), bytes);
  try {
    himem::read_episode(path("bad.hme1"));
    FAIL() << "expected FormatError";
  } catch (const himem::FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("checksum"), std::string::npos);
    EXPECT_EQ(e.byte_offset(), bytes.size() - 4);
  }
}

TEST_F(DatasetIo, RejectsOutOfRangeLabelWithItsOffset) {
  Episode ep = himem::generate_episode(sample_spec());
  himem::write_episode(ep, path("ep.hme1"));
  auto bytes = slurp(path("ep.hme1"));

  // First label of agent 0 sits after the frame-0 context block and agent-0
  // feature block.
  const std::size_t label_at = 40 + 4 * 32 + 4 * 32;
  bytes[label_at] = 0xFF;
  bytes[label_at + 1] = 0xFF;
  const std::uint32_t crc = himem::crc32_ieee(
      bytes.data() + 40, bytes.size() - 44);
  for (int i = 0; i < 4; ++i) {
    bytes[bytes.size() - 4 + i] = static_cast<std::uint8_t>(crc >> (8 * i));
  }
  dump(path("bad.hme1"), bytes);
  try {
    himem::read_episode(path("bad.hme1"));
    FAIL() << "expected FormatError";
  } catch (const himem::FormatError& e) {
    EXPECT_EQ(e.byte_offset(), label_at);
    EXPECT_NE(std::string(e.what()).find("label"), std::string::npos);
  }
}

TEST_F(DatasetIo, RejectsScenarioAgentContradiction) {
  Episode ep = himem::generate_episode(sample_spec());
  himem::write_episode(ep, path("ep.hme1"));
  auto bytes = slurp(path("ep.hme1"));
  bytes[28] = 11;  // claims 1x1 while carrying two agent tracks
  dump(path("bad.hme1"), bytes);
  try {
    himem::read_episode(path("bad.hme1"));
    FAIL() << "expected FormatError";
  } catch (const himem::FormatError& e) {
    EXPECT_EQ(e.byte_offset(), 8u);
  }
}

TEST_F(DatasetIo, WriteValidatesEpisode) {
  Episode ep = himem::generate_episode(sample_spec());
  ep.labels[1].pop_back();
  EXPECT_THROW(himem::write_episode(ep, path("ep.hme1")),
               himem::ValidationError);

  ep = himem::generate_episode(sample_spec());
  ep.labels[0][3] = static_cast<int>(ep.action_classes) + 1;
  EXPECT_THROW(himem::write_episode(ep, path("ep.hme1")),
               himem::ValidationError);

  ep = himem::generate_episode(sample_spec());
  ep.agent_features.pop_back();
  EXPECT_THROW(himem::write_episode(ep, path("ep.hme1")),
               himem::ValidationError);
}

TEST_F(DatasetIo, DatasetDirectoryRoundTrip) {
  std::vector<Episode> episodes;
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    ScenarioSpec spec = sample_spec();
    spec.seed = seed;
    spec.frames = 40;
    episodes.push_back(himem::generate_episode(spec));
  }
  const std::string ds = path("ds");
  himem::write_dataset(episodes, ds);

  EXPECT_TRUE(fs::exists(fs::path(ds) / "episode_00000.hme1"));
  EXPECT_TRUE(fs::exists(fs::path(ds) / "episode_00002.hme1"));

  std::vector<Episode> back = himem::read_dataset(ds);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].seed, episodes[i].seed);
    EXPECT_EQ(back[i].labels, episodes[i].labels);
  }
}

TEST_F(DatasetIo, MissingInputsFailCleanly) {
  EXPECT_THROW(himem::read_episode(path("absent.hme1")), himem::StreamError);
  EXPECT_THROW(himem::read_dataset(path("absent_dir")), himem::StreamError);
  fs::create_directories(path("empty"));
  EXPECT_THROW(himem::read_dataset(path("empty")), himem::ValidationError);
  EXPECT_THROW(himem::write_dataset({}, path("out")),
               himem::ValidationError);
}

}  // namespace
