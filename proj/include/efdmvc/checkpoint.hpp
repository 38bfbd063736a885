/*
 * Copyright 2026 The EFDMVC Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// Model checkpoints, little-endian:
//   "MVCK" u32 version=1
//   architecture block: u32 V, V x u32 D_v, u32 d, u32 h, u32 K,
//                       u32 encoder_hidden, u32 feature_hidden, u8 activation
//   u64 round, u64 parameter count, then that many f64 in canonical order

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>

#include "efdmvc/dataset.hpp"
#include "efdmvc/error.hpp"
#include "efdmvc/model.hpp"

namespace efdmvc {

inline constexpr char kCheckpointMagic[4] = {'M', 'V', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams params;
  std::size_t round = 0;
};

inline void write_checkpoint(std::ostream& os, const ModelParams& params, std::size_t round) {
  const Architecture& a = params.arch;
  os.write(kCheckpointMagic, 4);
  io::put<std::uint32_t>(os, kCheckpointVersion);
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.view_dims.size()));
  for (std::size_t d : a.view_dims) io::put<std::uint32_t>(os, static_cast<std::uint32_t>(d));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.latent_dim));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.high_dim));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.clusters));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.encoder_hidden));
  io::put<std::uint32_t>(os, static_cast<std::uint32_t>(a.feature_hidden));
  io::put<std::uint8_t>(os, a.activation == Activation::relu ? 0 : 1);
  io::put<std::uint64_t>(os, round);
  const auto flat = params.flatten();
  io::put<std::uint64_t>(os, flat.size());
  for (double v : flat) io::put<double>(os, v);
}

// When `expected` is given, the stored architecture must equal it.
inline Checkpoint read_checkpoint(std::istream& is, const std::optional<Architecture>& expected = std::nullopt) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw FormatError("bad magic: not an MVCK checkpoint");
  }
  const auto version = io::take<std::uint32_t>(is, "version");
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Architecture a;
  const auto v_count = io::take<std::uint32_t>(is, "view count");
  for (std::uint32_t v = 0; v < v_count; ++v) a.view_dims.push_back(io::take<std::uint32_t>(is, "view dims"));
  a.latent_dim = io::take<std::uint32_t>(is, "latent_dim");
  a.high_dim = io::take<std::uint32_t>(is, "high_dim");
  a.clusters = io::take<std::uint32_t>(is, "clusters");
  a.encoder_hidden = io::take<std::uint32_t>(is, "encoder_hidden");
  a.feature_hidden = io::take<std::uint32_t>(is, "feature_hidden");
  a.activation = io::take<std::uint8_t>(is, "activation") == 0 ? Activation::relu : Activation::identity;
  if (expected && !(*expected == a)) throw FormatError("checkpoint architecture differs from the expected one");
  try {
    a.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint architecture invalid: ") + e.what());
  }

  Checkpoint ck;
  ck.round = io::take<std::uint64_t>(is, "round");
  const auto count = io::take<std::uint64_t>(is, "parameter count");
  ck.params = init_params(a, 0);
  if (count != ck.params.parameter_count()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " parameters, architecture needs " +
                      std::to_string(ck.params.parameter_count()));
  }
  std::vector<double> flat(count);
  for (double& v : flat) v = io::take<double>(is, "parameters");
  ck.params.unflatten(flat);
  return ck;
}

inline void save_checkpoint(const ModelParams& params, std::size_t round, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_checkpoint(os, params, round);
  if (!os) throw FormatError("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path, const std::optional<Architecture>& expected = std::nullopt) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("checkpoint path does not exist or is unreadable: " + path);
  return read_checkpoint(is, expected);
}

}  // namespace efdmvc
