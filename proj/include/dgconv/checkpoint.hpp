// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgconv/compile.hpp"
#include "dgconv/model.hpp"

// All multi-byte file content is little-endian (the single convention for
// every on-disk format here).

namespace dgconv {

namespace ckpt_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  out.append(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u64(std::string& out, std::uint64_t v) {
  out.append(reinterpret_cast<const char*>(&v), 8);
}
inline void put_str(std::string& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.append(s);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  std::string path;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw ParseError(path + ": truncated", pos);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v;
    std::memcpy(&v, buf.data() + pos, 8);
    pos += 8;
    return v;
  }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf.data() + pos, n);
    pos += n;
  }
};

inline void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw ParseError("cannot write " + tmp, 0);
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path, 0);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace ckpt_detail

inline std::string serialize_model_config(const ModelConfig& c) {
  auto join = [](const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i)
      s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  std::string s;
  s += "widths=" + join(c.widths) + "\n";
  s += "blocks=" + join(c.blocks) + "\n";
  s += "expansion=" + std::to_string(c.expansion) + "\n";
  s += "stem=" + std::to_string(c.stem_channels) + "\n";
  s += "in_channels=" + std::to_string(c.in_channels) + "\n";
  s += "image_size=" + std::to_string(c.image_size) + "\n";
  s += "classes=" + std::to_string(c.classes) + "\n";
  s += std::string("mode=") + to_string(c.mode) + "\n";
  s += "fixed_groups=" + std::to_string(c.fixed_groups) + "\n";
  return s;
}

inline ModelConfig parse_model_config(const std::string& text) {
  ModelConfig c;
  std::istringstream ss(text);
  std::string line;
  auto ints = [](const std::string& s) {
    std::vector<int> v;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) v.push_back(std::stoi(tok));
    return v;
  };
  while (std::getline(ss, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "widths")
      c.widths = ints(val);
    else if (key == "blocks")
      c.blocks = ints(val);
    else if (key == "expansion")
      c.expansion = std::stoi(val);
    else if (key == "stem")
      c.stem_channels = std::stoi(val);
    else if (key == "in_channels")
      c.in_channels = std::stoi(val);
    else if (key == "image_size")
      c.image_size = std::stoi(val);
    else if (key == "classes")
      c.classes = std::stoi(val);
    else if (key == "fixed_groups")
      c.fixed_groups = std::stoi(val);
    else if (key == "mode")
      c.mode = val == "dense"        ? ConvMode::Dense
               : val == "fixed-group" ? ConvMode::FixedGroup
                                      : ConvMode::DGConv;
    else
      throw ParseError("model config echo: unknown key '" + key + "'", 0);
  }
  return c;
}

constexpr char kCheckpointMagic[] = "DGCV1";
constexpr char kExportMagic[] = "DGCX1";

/// Checkpoint layout: magic, u32 version, config echo, u64 step,
/// tensor table (f32 weights and buffers, f64 continuous gates). Binary gates
/// are never stored; they are derived on load.
inline void save_checkpoint(GroupableNet<float>& net, std::uint64_t step,
                            const std::string& path) {
  using namespace ckpt_detail;
  std::string out(kCheckpointMagic, 5);
  put_u32(out, 1);
  put_str(out, serialize_model_config(net.config));
  put_u64(out, step);

  std::vector<std::pair<std::string, std::pair<int, std::string>>> tensors;  // name -> (dtype, payload)
  net.visit_params([&](const std::string& name, std::vector<float>& v, std::vector<float>&,
                       bool) {
    std::string payload(reinterpret_cast<const char*>(v.data()), v.size() * 4);
    tensors.push_back({name, {0, std::move(payload)}});
  });
  net.visit_buffers([&](const std::string& name, std::vector<float>& v) {
    std::string payload(reinterpret_cast<const char*>(v.data()), v.size() * 4);
    tensors.push_back({name, {0, std::move(payload)}});
  });
  {
    auto dgs = net.dg_layers();
    for (std::size_t i = 0; i < dgs.size(); ++i) {
      std::string payload(reinterpret_cast<const char*>(dgs[i]->gates.data()),
                          dgs[i]->gates.size() * 8);
      tensors.push_back({"dg" + std::to_string(i) + ".gates", {1, std::move(payload)}});
    }
  }
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (auto& [name, tp] : tensors) {
    put_str(out, name);
    put_u32(out, static_cast<std::uint32_t>(tp.first));
    put_str(out, tp.second);
  }
  atomic_write(path, out);
}

struct LoadedCheckpoint {
  std::unique_ptr<GroupableNet<float>> net;
  std::uint64_t step = 0;
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  using namespace ckpt_detail;
  const std::string buf = read_file(path);
  Reader r{buf, 0, path};
  char magic[5];
  r.raw(magic, 5);
  if (std::memcmp(magic, kCheckpointMagic, 5) != 0)
    throw ParseError(path + ": not a DGCV1 checkpoint", 0);
  const std::uint32_t version = r.u32();
  if (version != 1) throw ParseError(path + ": unsupported version", r.pos - 4);
  LoadedCheckpoint lc;
  const ModelConfig cfg = parse_model_config(r.str());
  lc.net = std::make_unique<GroupableNet<float>>(cfg);
  lc.step = r.u64();

  std::map<std::string, std::vector<float>*> f32_slots;
  lc.net->visit_params([&](const std::string& name, std::vector<float>& v,
                           std::vector<float>&, bool) { f32_slots[name] = &v; });
  lc.net->visit_buffers(
      [&](const std::string& name, std::vector<float>& v) { f32_slots[name] = &v; });
  auto dgs = lc.net->dg_layers();

  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const std::uint32_t dtype = r.u32();
    const std::string payload = r.str();
    if (dtype == 0) {
      auto it = f32_slots.find(name);
      if (it == f32_slots.end()) throw ParseError(path + ": unknown tensor '" + name + "'", r.pos);
      if (payload.size() != it->second->size() * 4)
        throw ParseError(path + ": tensor '" + name + "' has wrong size", r.pos);
      std::memcpy(it->second->data(), payload.data(), payload.size());
    } else if (dtype == 1 && name.starts_with("dg") && name.ends_with(".gates")) {
      const int idx = std::stoi(name.substr(2, name.size() - 8));
      if (idx < 0 || idx >= static_cast<int>(dgs.size()))
        throw ParseError(path + ": gate tensor index out of range", r.pos);
      if (payload.size() != dgs[idx]->gates.size() * 8)
        throw ParseError(path + ": gate tensor '" + name + "' has wrong size", r.pos);
      std::memcpy(dgs[idx]->gates.data(), payload.data(), payload.size());
    } else {
      throw ParseError(path + ": unknown tensor '" + name + "'", r.pos);
    }
  }
  return lc;
}

/// Export container: config echo, dense weights/buffers, and every DGConv
/// layer lowered to permutation + compact per-group kernels, plus the savings
/// report as a JSON string.
inline void export_compiled(GroupableNet<float>& net, const std::string& path,
                            int baseline_groups = 8) {
  using namespace ckpt_detail;
  std::string out(kExportMagic, 5);
  put_u32(out, 1);
  put_str(out, serialize_model_config(net.config));

  std::vector<std::pair<std::string, std::string>> tensors;
  net.visit_params([&](const std::string& name, std::vector<float>& v, std::vector<float>&,
                       bool) {
    if (name.find(".conv2.kernel") != std::string::npos && net.config.mode == ConvMode::DGConv)
      return;  // replaced by the compiled form
    tensors.push_back({name, std::string(reinterpret_cast<const char*>(v.data()),
                                         v.size() * 4)});
  });
  net.visit_buffers([&](const std::string& name, std::vector<float>& v) {
    tensors.push_back({name, std::string(reinterpret_cast<const char*>(v.data()),
                                         v.size() * 4)});
  });
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (auto& [name, payload] : tensors) {
    put_str(out, name);
    put_str(out, payload);
  }

  auto dgs = net.dg_layers();
  put_u32(out, static_cast<std::uint32_t>(dgs.size()));
  for (auto* l : dgs) {
    CompiledLayer<float> c = compile(*l);
    put_u32(out, static_cast<std::uint32_t>(c.channels()));
    put_u32(out, static_cast<std::uint32_t>(c.group_count));
    put_u32(out, static_cast<std::uint32_t>(c.stride));
    put_u32(out, static_cast<std::uint32_t>(c.padding));
    put_u32(out, static_cast<std::uint32_t>(c.kernels[0].n));
    put_u64(out, c.connections);
    for (int ch : c.perm) put_u32(out, static_cast<std::uint32_t>(ch));
    for (const auto& kg : c.kernels)
      out.append(reinterpret_cast<const char*>(kg.data()), kg.size() * 4);
  }

  SavingsReport rep = savings_report(net, baseline_groups);
  nlohmann::json j;
  j["total_connections"] = rep.total_connections;
  j["total_dense"] = rep.total_dense;
  j["ratio_vs_dense"] = rep.ratio_vs_dense();
  j["baseline_groups"] = rep.baseline_groups;
  j["ratio_vs_uniform"] = rep.ratio_vs_uniform();
  j["layers"] = nlohmann::json::array();
  for (const auto& s : rep.layers)
    j["layers"].push_back({{"channels", s.channels},
                           {"groups", s.group_count},
                           {"connections", s.connections},
                           {"dense_connections", s.dense_connections}});
  put_str(out, j.dump());
  atomic_write(path, out);
}

struct LoadedExport {
  std::unique_ptr<GroupableNet<float>> net;  // forward-only: compiled middles
  std::vector<CompiledLayer<float>> compiled;
  std::string savings_json;
};

inline LoadedExport load_exported(const std::string& path) {
  using namespace ckpt_detail;
  const std::string buf = read_file(path);
  Reader r{buf, 0, path};
  char magic[5];
  r.raw(magic, 5);
  if (std::memcmp(magic, kExportMagic, 5) != 0)
    throw ParseError(path + ": not a DGCX1 export", 0);
  if (r.u32() != 1) throw ParseError(path + ": unsupported version", r.pos - 4);
  LoadedExport le;
  const ModelConfig cfg = parse_model_config(r.str());
  le.net = std::make_unique<GroupableNet<float>>(cfg);

  std::map<std::string, std::vector<float>*> slots;
  le.net->visit_params([&](const std::string& name, std::vector<float>& v,
                           std::vector<float>&, bool) { slots[name] = &v; });
  le.net->visit_buffers(
      [&](const std::string& name, std::vector<float>& v) { slots[name] = &v; });
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const std::string payload = r.str();
    auto it = slots.find(name);
    if (it == slots.end()) throw ParseError(path + ": unknown tensor '" + name + "'", r.pos);
    if (payload.size() != it->second->size() * 4)
      throw ParseError(path + ": tensor '" + name + "' has wrong size", r.pos);
    std::memcpy(it->second->data(), payload.data(), payload.size());
  }

  const std::uint32_t num_dg = r.u32();
  auto dgs = le.net->dg_layers();
  if (num_dg != dgs.size())
    throw ParseError(path + ": compiled layer count mismatch", r.pos);
  le.compiled.resize(num_dg);
  for (std::uint32_t i = 0; i < num_dg; ++i) {
    CompiledLayer<float>& c = le.compiled[i];
    const int C = static_cast<int>(r.u32());
    c.group_count = static_cast<int>(r.u32());
    c.stride = static_cast<int>(r.u32());
    c.padding = static_cast<int>(r.u32());
    const int k = static_cast<int>(r.u32());
    c.connections = r.u64();
    c.perm.resize(C);
    for (int& ch : c.perm) ch = static_cast<int>(r.u32());
    const int per = C / c.group_count;
    for (int grp = 0; grp < c.group_count; ++grp) {
      Tensor4<float> kg(k, k, per, per);
      r.raw(kg.data(), kg.size() * 4);
      c.kernels.push_back(std::move(kg));
    }
  }
  le.savings_json = r.str();

  // attach compiled forwards
  std::size_t idx = 0;
  for (auto& stage : le.net->stages)
    for (auto& block : stage)
      if (block.conv2_dg) {
        const CompiledLayer<float>* c = &le.compiled[idx++];
        block.conv2_compiled = [c](const Tensor4<float>& x) { return c->forward(x); };
      }
  return le;
}

}  // namespace dgconv
