#pragma once

// Checkpoint container, all integers little-endian:
//
//   bytes 0..3   magic "SVCK"
//   uint32       format version (1)
//   uint64       header length H
//   H bytes      UTF-8 JSON header
//   float32[]    parameter values in header "tensors" order
//   float32[]    Adam first moments, same order   (if "has_optimizer")
//   float32[]    Adam second moments, same order  (if "has_optimizer")
//
// The header holds "config" (network), "iteration", "adam_step",
// "has_optimizer", "tensors" [{name, shape}] and a free-form "meta" object.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "synthvol/error.hpp"
#include "synthvol/net/unet.hpp"
#include "synthvol/nifti.hpp"

namespace synthvol::net {

inline constexpr char kCheckpointMagic[4] = {'S', 'V', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  UNet<float> net;
  AdamState<float> adam;
  std::uint64_t iteration = 0;
  nlohmann::json meta = nlohmann::json::object();
};

namespace ckpt_detail {

template <class U>
void put(std::vector<std::uint8_t>& out, U v) {
  if constexpr (std::endian::native == std::endian::big) v = nifti_detail::byteswap_value(v);
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

template <class U>
U get(const std::vector<std::uint8_t>& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) fail(Errc::format, "checkpoint", "file is truncated");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  if constexpr (std::endian::native == std::endian::big) v = nifti_detail::byteswap_value(v);
  return v;
}

inline void put_floats(std::vector<std::uint8_t>& out, const std::vector<float>& v) {
  for (float f : v) put(out, std::bit_cast<std::uint32_t>(f));
}

inline void get_floats(const std::vector<std::uint8_t>& in, std::size_t& pos, std::vector<float>& v) {
  for (auto& f : v) f = std::bit_cast<float>(get<std::uint32_t>(in, pos));
}

}  // namespace ckpt_detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  using namespace ckpt_detail;
  const auto& params = ck.net.params();
  const bool has_opt = ck.adam.m.size() == params.size() && !params.empty();
  nlohmann::json h;
  h["config"] = ck.net.config();
  h["iteration"] = ck.iteration;
  h["adam_step"] = ck.adam.step;
  h["has_optimizer"] = has_opt;
  h["meta"] = ck.meta;
  h["tensors"] = nlohmann::json::array();
  for (const auto& p : params) h["tensors"].push_back({{"name", p.name}, {"shape", p.shape}});
  const std::string header = h.dump();

  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint64_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  for (const auto& p : params) put_floats(out, p.value);
  if (has_opt) {
    for (const auto& m : ck.adam.m) put_floats(out, m);
    for (const auto& v : ck.adam.v) put_floats(out, v);
  }
  return out;
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& in) {
  using namespace ckpt_detail;
  if (in.size() < 16 || std::memcmp(in.data(), kCheckpointMagic, 4) != 0) {
    fail(Errc::format, "checkpoint", "not a checkpoint file (bad magic)");
  }
  std::size_t pos = 4;
  const auto version = get<std::uint32_t>(in, pos);
  if (version != kCheckpointVersion) {
    fail(Errc::unsupported, "checkpoint", "unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = get<std::uint64_t>(in, pos);
  if (pos + len > in.size()) fail(Errc::format, "checkpoint", "file is truncated");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(in.begin() + static_cast<std::ptrdiff_t>(pos),
                              in.begin() + static_cast<std::ptrdiff_t>(pos + len));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::format, "checkpoint", std::string("bad header: ") + e.what());
  }
  pos += len;

  Checkpoint ck{UNet<float>(h.at("config").get<UNetConfig>()), {}, h.value("iteration", std::uint64_t{0}),
                h.value("meta", nlohmann::json::object())};
  auto& params = ck.net.params();
  const auto& tensors = h.at("tensors");
  require(tensors.size() == params.size(), "checkpoint", "tensor list does not match the network config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(tensors[i].at("name").get<std::string>() == params[i].name &&
                tensors[i].at("shape").get<std::vector<int>>() == params[i].shape,
            "checkpoint", "tensor " + params[i].name + " does not match the network config");
    get_floats(in, pos, params[i].value);
  }
  if (h.value("has_optimizer", false)) {
    ck.adam.resize_for(params);
    ck.adam.step = h.value("adam_step", std::uint64_t{0});
    for (auto& m : ck.adam.m) get_floats(in, pos, m);
    for (auto& v : ck.adam.v) get_floats(in, pos, v);
  }
  require(pos == in.size(), "checkpoint", "trailing bytes after payload");
  return ck;
}

inline void write_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(ck));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace synthvol::net
