#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "himem/errors.hpp"
#include "himem/synthetic.hpp"

namespace himem {

// Episode container format, one episode per file, little-endian throughout:
//   header  (40 bytes): "HME1", u32 version=1, u32 agents, u64 frames,
//                       u32 dim, u32 action classes, u32 scenario code,
//                       u64 seed
//   payload (per frame): context feature dim x f32, then per agent:
//                       feature dim x f32 + label u16
//   trailer (4 bytes):  CRC32 of the payload
inline constexpr std::uint32_t kEpisodeVersion = 1;
inline constexpr std::size_t kEpisodeHeaderSize = 40;

inline std::uint32_t crc32_ieee(const std::uint8_t* data, std::size_t len) {
  static const std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) {
        c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      }
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xFFFFFFFFu;
  for (std::size_t i = 0; i < len; ++i) {
    crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
  }
  return crc ^ 0xFFFFFFFFu;
}

inline std::size_t episode_file_size(std::size_t agents, std::size_t frames,
                                     std::size_t dim) {
  return kEpisodeHeaderSize + frames * (4 * dim + agents * (4 * dim + 2)) + 4;
}

namespace io_detail {

inline void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
}

inline void put_f32(std::vector<std::uint8_t>& out, double v) {
  const float f = static_cast<float>(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

// Cursor over a loaded file; every failure names the offset it happened at.
class ByteReader {
 public:
  explicit ByteReader(const std::vector<std::uint8_t>& buf) : buf_(buf) {}

  std::size_t pos() const { return pos_; }

  std::uint8_t u8() { return static_cast<std::uint8_t>(le(1)); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  double f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return static_cast<double>(f);
  }

  void expect_magic(const char* magic) {
    need(4);
    if (std::memcmp(buf_.data() + pos_, magic, 4) != 0) {
      throw FormatError("bad magic, expected '" + std::string(magic) + "'",
                        pos_);
    }
    pos_ += 4;
  }

  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) {
      throw FormatError("file truncated, need " + std::to_string(n) +
                            " bytes but only " +
                            std::to_string(buf_.size() - pos_) + " remain",
                        pos_);
    }
  }

 private:
  std::uint64_t le(std::size_t n) {
    need(n);
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    }
    pos_ += n;
    return v;
  }

  const std::vector<std::uint8_t>& buf_;
  std::size_t pos_ = 0;
};

}  // namespace io_detail

inline void validate_episode(const Episode& ep) {
  if (ep.agents() == 0) throw ValidationError("episode has no agent tracks");
  if (!ep.context_features.defined() || ep.context_features.rank() != 2) {
    throw ValidationError("context features must be [frames, dim]");
  }
  const std::size_t frames = ep.frames();
  const std::size_t dim = ep.dim();
  if (frames == 0 || dim == 0) {
    throw ValidationError("episode needs frames and feature dims");
  }
  if (ep.agents() != scenario_agents(ep.scenario)) {
    throw ValidationError("agent tracks do not match the scenario shape");
  }
  if (ep.labels.size() != ep.agents()) {
    throw ValidationError("label tracks do not match the agent count");
  }
  for (std::size_t a = 0; a < ep.agents(); ++a) {
    const Tensor& f = ep.agent_features[a];
    if (f.rank() != 2 || f.dim(0) != frames || f.dim(1) != dim) {
      throw ValidationError("agent " + std::to_string(a) +
                            " features misshaped");
    }
    if (ep.labels[a].size() != frames) {
      throw ValidationError("agent " + std::to_string(a) +
                            " labels misaligned");
    }
    for (int label : ep.labels[a]) {
      if (label < 0 ||
          static_cast<std::size_t>(label) > ep.action_classes ||
          label > 0xFFFF) {
        throw ValidationError("label " + std::to_string(label) +
                              " outside [0, " +
                              std::to_string(ep.action_classes) + "]");
      }
    }
  }
}

inline void write_episode(const Episode& ep, const std::string& path) {
  validate_episode(ep);
  const std::size_t frames = ep.frames();
  const std::size_t dim = ep.dim();

  std::vector<std::uint8_t> out;
  out.reserve(episode_file_size(ep.agents(), frames, dim));
  out.insert(out.end(), {'H', 'M', 'E', '1'});
  io_detail::put_u32(out, kEpisodeVersion);
  io_detail::put_u32(out, static_cast<std::uint32_t>(ep.agents()));
  io_detail::put_u64(out, frames);
  io_detail::put_u32(out, static_cast<std::uint32_t>(dim));
  io_detail::put_u32(out, static_cast<std::uint32_t>(ep.action_classes));
  io_detail::put_u32(out, scenario_code(ep.scenario));
  io_detail::put_u64(out, ep.seed);

  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t d = 0; d < dim; ++d) {
      io_detail::put_f32(out, ep.context_features.data()[t * dim + d]);
    }
    for (std::size_t a = 0; a < ep.agents(); ++a) {
      for (std::size_t d = 0; d < dim; ++d) {
        io_detail::put_f32(out, ep.agent_features[a].data()[t * dim + d]);
      }
      io_detail::put_u16(out,
                         static_cast<std::uint16_t>(ep.labels[a][t]));
    }
  }
  io_detail::put_u32(out, crc32_ieee(out.data() + kEpisodeHeaderSize,
                                     out.size() - kEpisodeHeaderSize));

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw StreamError("cannot open '" + path + "' for writing");
  file.write(reinterpret_cast<const char*>(out.data()),
             static_cast<std::streamsize>(out.size()));
  if (!file.good()) throw StreamError("short write to '" + path + "'");
}

inline Episode read_episode(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw StreamError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> buf(
      (std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

  io_detail::ByteReader in(buf);
  in.expect_magic("HME1");
  const std::size_t version_at = in.pos();
  const std::uint32_t version = in.u32();
  if (version != kEpisodeVersion) {
    throw FormatError("unsupported version " + std::to_string(version),
                      version_at);
  }
  const std::size_t agents_at = in.pos();
  const std::uint32_t agents = in.u32();
  const std::uint64_t frames = in.u64();
  const std::size_t dim_at = in.pos();
  const std::uint32_t dim = in.u32();
  const std::uint32_t classes = in.u32();
  const std::size_t scenario_at = in.pos();
  const std::uint32_t code = in.u32();
  const std::uint64_t seed = in.u64();

  Scenario scenario;
  try {
    scenario = scenario_from_code(code);
  } catch (const ValidationError&) {
    throw FormatError("unknown scenario code " + std::to_string(code),
                      scenario_at);
  }
  if (agents != scenario_agents(scenario)) {
    throw FormatError("agent count " + std::to_string(agents) +
                          " contradicts scenario " +
                          format_scenario(scenario),
                      agents_at);
  }
  if (frames == 0 || dim == 0 || classes < 1) {
    throw FormatError("empty geometry in header", dim_at);
  }
  if (frames > (1ull << 32) || dim > (1u << 20)) {
    throw FormatError("implausible geometry in header", dim_at);
  }

  const std::size_t expected = episode_file_size(agents, frames, dim);
  if (buf.size() != expected) {
    throw FormatError("file is " + std::to_string(buf.size()) +
                          " bytes, layout requires " +
                          std::to_string(expected),
                      buf.size() < expected ? buf.size() : expected);
  }

  Episode ep;
  ep.scenario = scenario;
  ep.seed = seed;
  ep.action_classes = classes;
  ep.context_features = Tensor::zeros({frames, dim});
  for (std::uint32_t a = 0; a < agents; ++a) {
    ep.agent_features.push_back(Tensor::zeros({frames, dim}));
    ep.labels.emplace_back(frames, 0);
  }

  for (std::uint64_t t = 0; t < frames; ++t) {
    for (std::uint32_t d = 0; d < dim; ++d) {
      ep.context_features.data()[t * dim + d] = in.f32();
    }
    for (std::uint32_t a = 0; a < agents; ++a) {
      for (std::uint32_t d = 0; d < dim; ++d) {
        ep.agent_features[a].data()[t * dim + d] = in.f32();
      }
      const std::size_t label_at = in.pos();
      const std::uint16_t label = in.u16();
      if (label > classes) {
        throw FormatError("label " + std::to_string(label) +
                              " exceeds class count " +
                              std::to_string(classes),
                          label_at);
      }
      ep.labels[a][t] = label;
    }
  }

  const std::size_t crc_at = in.pos();
  const std::uint32_t stored = in.u32();
  const std::uint32_t actual = crc32_ieee(buf.data() + kEpisodeHeaderSize,
                                          crc_at - kEpisodeHeaderSize);
  if (stored != actual) {
    throw FormatError("payload checksum mismatch", crc_at);
  }
  return ep;
}

inline std::string episode_filename(std::size_t index) {
  std::ostringstream name;
  name << "episode_" << std::setw(5) << std::setfill('0') << index
       << ".hme1";
  return name.str();
}

inline void write_dataset(const std::vector<Episode>& episodes,
                          const std::string& dir) {
  if (episodes.empty()) throw ValidationError("no episodes to write");
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    write_episode(episodes[i],
                  (std::filesystem::path(dir) / episode_filename(i)).string());
  }
}

inline std::vector<Episode> read_dataset(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw StreamError("'" + dir + "' is not a directory");
  }
  std::vector<std::string> paths;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".hme1") {
      paths.push_back(entry.path().string());
    }
  }
  if (paths.empty()) {
    throw ValidationError("no .hme1 episodes under '" + dir + "'");
  }
  std::sort(paths.begin(), paths.end());
  std::vector<Episode> episodes;
  episodes.reserve(paths.size());
  for (const auto& path : paths) episodes.push_back(read_episode(path));
  return episodes;
}

}  // namespace himem
