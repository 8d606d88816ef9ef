#pragma once

#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "himem/config.hpp"
#include "himem/dataset_io.hpp"
#include "himem/errors.hpp"
#include "himem/model.hpp"
#include "himem/optim.hpp"
#include "himem/rng.hpp"
#include "himem/tensor.hpp"

namespace himem {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Checkpoint layout "HMF1", little-endian throughout:
//   magic "HMF1" | u32 version
//   u64 config byte length | UTF-8 key=value config text
//   u32 param count
//   per param: u16 name length | name | u8 rank | u64 per dim | f32 per value
//   u32 CRC32 of everything after magic+version
struct Checkpoint {
  ExperimentConfig config;
  NamedParams params;
};

inline void save_checkpoint(const std::string& path,
                            const ExperimentConfig& config,
                            const NamedParams& params) {
  if (params.empty()) throw ValidationError("checkpoint needs parameters");
  std::vector<std::uint8_t> out;
  out.insert(out.end(), {'H', 'M', 'F', '1'});
  io_detail::put_u32(out, kCheckpointVersion);
  const std::size_t payload_start = out.size();

  const std::string cfg_text = serialize_config(config);
  io_detail::put_u64(out, cfg_text.size());
  out.insert(out.end(), cfg_text.begin(), cfg_text.end());

  io_detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, tensor] : params) {
    if (name.empty() || name.size() > 0xFFFF) {
      throw ValidationError("parameter name length out of range: '" + name +
                            "'");
    }
    const auto& shape = tensor.shape();
    if (shape.size() > 0xFF) {
      throw ValidationError("parameter '" + name + "' rank too large");
    }
    io_detail::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(static_cast<std::uint8_t>(shape.size()));
    for (auto d : shape) io_detail::put_u64(out, d);
    for (double v : tensor.data()) io_detail::put_f32(out, v);
  }
  io_detail::put_u32(out, crc32_ieee(out.data() + payload_start,
                                     out.size() - payload_start));

  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw StreamError("cannot open '" + path + "' for writing");
  file.write(reinterpret_cast<const char*>(out.data()),
             static_cast<std::streamsize>(out.size()));
  if (!file.good()) throw StreamError("short write to '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw StreamError("cannot open '" + path + "' for reading");
  std::vector<std::uint8_t> buf(
      (std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

  io_detail::ByteReader in(buf);
  in.expect_magic("HMF1");
  const std::size_t version_at = in.pos();
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported version " + std::to_string(version),
                      version_at);
  }

  const std::size_t payload_start = in.pos();
  if (buf.size() < payload_start + 4) {
    throw FormatError("file truncated before checksum", buf.size());
  }
  const std::size_t crc_at = buf.size() - 4;
  const std::uint32_t want =
      crc32_ieee(buf.data() + payload_start, crc_at - payload_start);
  std::uint32_t got = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    got |= static_cast<std::uint32_t>(buf[crc_at + i]) << (8 * i);
  }
  if (want != got) throw FormatError("checksum mismatch", crc_at);

  Checkpoint ck;
  const std::uint64_t cfg_len = in.u64();
  ck.config = parse_config(in.bytes(cfg_len));

  const std::uint32_t count = in.u32();
  ck.params.reserve(count);
  for (std::uint32_t p = 0; p < count; ++p) {
    const std::string name = in.bytes(in.u16());
    const std::uint8_t rank = in.u8();
    Shape shape(rank);
    std::size_t numel = 1;
    for (auto& d : shape) {
      const std::size_t dims_at = in.pos();
      d = static_cast<std::size_t>(in.u64());
      numel *= d;
      if (d == 0 || numel > (1u << 28)) {
        throw FormatError("implausible shape for parameter '" + name + "'",
                          dims_at);
      }
    }
    std::vector<double> values(numel);
    for (auto& v : values) v = in.f32();
    ck.params.emplace_back(name, Tensor::from_data(shape, values, true));
  }
  if (in.pos() != crc_at) {
    throw FormatError("trailing bytes after last parameter", in.pos());
  }
  return ck;
}

// Strict one-to-one restore: the checkpoint must list exactly the live
// parameter set, same order, names, and shapes.
inline void restore_params(const Checkpoint& ck, NamedParams& into) {
  if (ck.params.size() != into.size()) {
    throw ValidationError("checkpoint holds " +
                          std::to_string(ck.params.size()) +
                          " parameters, model has " +
                          std::to_string(into.size()));
  }
  for (std::size_t i = 0; i < into.size(); ++i) {
    const auto& [saved_name, saved] = ck.params[i];
    auto& [live_name, live] = into[i];
    if (saved_name != live_name) {
      throw ValidationError("parameter " + std::to_string(i) + " is '" +
                            saved_name + "' in the checkpoint but '" +
                            live_name + "' in the model");
    }
    if (saved.shape() != live.shape()) {
      throw ShapeError("parameter '" + live_name + "' shape mismatch");
    }
    live.data() = saved.data();
  }
}

inline HiMemFormer model_from_checkpoint(const Checkpoint& ck) {
  Rng rng(ck.config.seed);
  HiMemFormer model(ck.config.to_model_config(), rng);
  auto live = collect_params(model.params());
  restore_params(ck, live);
  return model;
}

}  // namespace himem
