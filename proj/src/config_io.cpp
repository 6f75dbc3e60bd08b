// Copyright 2026 The RPU Lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "rpu/config_io.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "rpu/common.hpp"

#ifndef RPU_CONFIG_DIR
#define RPU_CONFIG_DIR "configs"
#endif

namespace rpu::config {

namespace {

constexpr const char* kModule = "config";

[[noreturn]] void fail(const std::string& what) { throw Error(kModule, what); }

YAML::Node parse(const std::string& text, const std::string& origin) {
  try {
    return YAML::Load(text);
  } catch (const YAML::Exception& e) {
    fail(origin + ": " + e.what());
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("cannot open '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string emit(const YAML::Node& n) {
  YAML::Emitter e;
  e.SetIndent(2);
  e << n;
  return e.c_str();
}

/// Copies `src` into `dst`, refusing keys that `dst` lacks.
void merge(YAML::Node dst, const YAML::Node& src, const std::string& path) {
  if (!src.IsMap()) fail(path.empty() ? "document must be a mapping" : "'" + path + "' must be a mapping");
  for (const auto& kv : src) {
    const std::string key = kv.first.as<std::string>();
    const std::string full = path.empty() ? key : path + "." + key;
    YAML::Node cur = dst[key];
    if (!cur.IsDefined() || cur.IsNull()) fail("unknown key '" + full + "'");
    if (cur.IsMap() && kv.second.IsMap()) {
      merge(cur, kv.second, full);
    } else {
      dst[key] = YAML::Clone(kv.second);
    }
  }
}

void apply_overrides(YAML::Node root, const Overrides& ov) {
  for (const auto& [key, value] : ov) {
    std::vector<std::string> parts;
    std::stringstream ss(key);
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    if (parts.empty()) fail("empty override key");
    YAML::Node cur = root;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      YAML::Node next = cur[parts[i]];
      if (!next.IsDefined() || !next.IsMap()) fail("unknown override key '" + key + "'");
      cur.reset(next);
    }
    YAML::Node leaf = cur[parts.back()];
    if (!leaf.IsDefined() || leaf.IsNull()) fail("unknown override key '" + key + "'");
    if (leaf.IsMap()) {
      YAML::Node v = parse(value, "override '" + key + "'");
      if (v.IsScalar()) {
        cur[parts.back()] = v;
      } else {
        merge(leaf, v, key);
      }
    } else {
      cur[parts.back()] = parse(value, "override '" + key + "'");
    }
  }
}

template <typename T>
T get(const YAML::Node& n, const char* key, const std::string& path) {
  try {
    return n[key].as<T>();
  } catch (const YAML::Exception&) {
    fail("bad value for '" + (path.empty() ? std::string(key) : path + "." + key) + "'");
  }
}

// --- geometry ---------------------------------------------------------------

YAML::Node geometry_node(const mem::StackGeometry& g) {
  YAML::Node n;
  n["ranks"] = g.ranks;
  n["layers_per_rank"] = g.layers_per_rank;
  n["channels_per_layer"] = g.channels_per_layer;
  n["pchs_per_channel"] = g.pchs_per_channel;
  n["bank_groups_per_pch"] = g.bank_groups_per_pch;
  n["banks_per_bank_group"] = g.banks_per_bank_group;
  n["subarrays_per_bank"] = g.subarrays_per_bank;
  n["subarray_capacity_bits"] = g.subarray_capacity_bits;
  n["pch_io_width_bits"] = g.pch_io_width_bits;
  n["pch_data_rate_gt_s"] = g.pch_data_rate / kGB;
  return n;
}

mem::StackGeometry named_geometry(const std::string& name) {
  if (name == "hbm3e") return mem::hbm3e_reference();
  if (name == "candidate") return mem::candidate_device();
  fail("unknown memory geometry '" + name + "' (expected hbm3e, candidate or a mapping)");
}

mem::StackGeometry geometry_from_node(const YAML::Node& src, const std::string& path) {
  if (src.IsScalar()) return named_geometry(src.as<std::string>());
  YAML::Node n = geometry_node(mem::candidate_device());
  merge(n, src, path);
  mem::StackGeometry g;
  g.ranks = get<uint32_t>(n, "ranks", path);
  g.layers_per_rank = get<uint32_t>(n, "layers_per_rank", path);
  g.channels_per_layer = get<uint32_t>(n, "channels_per_layer", path);
  g.pchs_per_channel = get<uint32_t>(n, "pchs_per_channel", path);
  g.bank_groups_per_pch = get<uint32_t>(n, "bank_groups_per_pch", path);
  g.banks_per_bank_group = get<uint32_t>(n, "banks_per_bank_group", path);
  g.subarrays_per_bank = get<uint32_t>(n, "subarrays_per_bank", path);
  g.subarray_capacity_bits = get<uint64_t>(n, "subarray_capacity_bits", path);
  g.pch_io_width_bits = get<uint32_t>(n, "pch_io_width_bits", path);
  g.pch_data_rate = get<double>(n, "pch_data_rate_gt_s", path) * kGB;
  if (auto why = mem::check_geometry(g)) fail(path + ": " + *why);
  return g;
}

// --- model ------------------------------------------------------------------

YAML::Node model_node(const compiler::ModelSpec& m) {
  YAML::Node n;
  n["name"] = m.name.empty() ? std::string("unnamed") : m.name;
  n["layers"] = m.layers;
  n["hidden"] = m.hidden;
  n["heads"] = m.heads;
  n["kv_heads"] = m.kv_heads;
  n["head_dim"] = m.head_dim;
  n["ffn"] = m.ffn;
  n["vocab"] = m.vocab;
  n["tie_embeddings"] = m.tie_embeddings;
  YAML::Node moe;
  moe["experts"] = m.experts;
  moe["top_k"] = m.top_k;
  moe["expert_ffn"] = m.expert_ffn;
  moe["shared_experts"] = m.shared_experts;
  moe["interleave"] = m.moe_interleave;
  n["moe"] = moe;
  YAML::Node w;
  w["bits"] = m.weight_bits;
  w["block"] = m.weight_block;
  w["exponent_bits"] = m.exponent_bits;
  n["weights"] = w;
  n["activation_bits"] = m.act_bits;
  n["kv_bits"] = m.kv_bits;
  return n;
}

compiler::ModelSpec model_from_node(const YAML::Node& n) {
  compiler::ModelSpec m;
  m.name = get<std::string>(n, "name", "");
  m.layers = get<uint32_t>(n, "layers", "");
  m.hidden = get<uint32_t>(n, "hidden", "");
  m.heads = get<uint32_t>(n, "heads", "");
  m.kv_heads = get<uint32_t>(n, "kv_heads", "");
  m.head_dim = get<uint32_t>(n, "head_dim", "");
  m.ffn = get<uint32_t>(n, "ffn", "");
  m.vocab = get<uint32_t>(n, "vocab", "");
  m.tie_embeddings = get<bool>(n, "tie_embeddings", "");
  const auto moe = n["moe"];
  m.experts = get<uint32_t>(moe, "experts", "moe");
  m.top_k = get<uint32_t>(moe, "top_k", "moe");
  m.expert_ffn = get<uint32_t>(moe, "expert_ffn", "moe");
  m.shared_experts = get<uint32_t>(moe, "shared_experts", "moe");
  m.moe_interleave = get<uint32_t>(moe, "interleave", "moe");
  const auto w = n["weights"];
  m.weight_bits = get<double>(w, "bits", "weights");
  m.weight_block = get<uint32_t>(w, "block", "weights");
  m.exponent_bits = get<double>(w, "exponent_bits", "weights");
  m.act_bits = get<double>(n, "activation_bits", "");
  m.kv_bits = get<double>(n, "kv_bits", "");
  compiler::check_model(m);
  return m;
}

// --- system -----------------------------------------------------------------

YAML::Node link_node(const arch::LinkParams& l) {
  YAML::Node n;
  n["bandwidth_gib_s"] = l.bandwidth / kGB;
  n["latency_ns"] = l.latency / kNano;
  n["pj_per_bit"] = l.energy_pj_per_bit;
  return n;
}

arch::LinkParams link_from_node(const YAML::Node& n, const std::string& path) {
  arch::LinkParams l;
  l.bandwidth = get<double>(n, "bandwidth_gib_s", path) * kGB;
  l.latency = get<double>(n, "latency_ns", path) * kNano;
  l.energy_pj_per_bit = get<double>(n, "pj_per_bit", path);
  return l;
}

YAML::Node system_node(const arch::SystemConfig& s) {
  YAML::Node n;
  n["num_cus"] = s.num_cus;
  n["cus_per_package"] = s.cus_per_package;
  YAML::Node core;
  core["tmacs"] = s.core.tmacs_per_core;
  core["macs_per_tmac"] = s.core.macs_per_tmac;
  core["clock_hz"] = s.core.clock;
  core["pch_bandwidth_gib_s"] = s.core.pch_bandwidth / kGB;
  core["mem_buffer_kib"] = s.core.mem_buffer / 1024;
  core["net_buffer_kib"] = s.core.net_buffer / 1024;
  core["decoder_weights_per_cycle"] = s.core.decoder_weights_per_cycle;
  core["hpvop_lanes"] = s.core.hpvop_lanes;
  core["accum_regfile"] = s.core.accum_regfile;
  core["tree_drain_cycles"] = s.core.tree_drain_cycles;
  core["stripe_reload_cycles"] = s.core.stripe_reload_cycles;
  n["core"] = core;
  YAML::Node cu;
  cu["cores"] = s.cu.cores;
  cu["shorelines"] = s.cu.shorelines;
  cu["shoreline_bandwidth_gib_s"] = s.cu.shoreline_bandwidth / kGB;
  cu["devices"] = s.cu.devices;
  cu["memory"] = geometry_node(s.cu.mem_geometry);
  n["cu"] = cu;
  YAML::Node links;
  links["intra_package"] = link_node(s.intra_package_link);
  links["inter_package"] = link_node(s.inter_package_link);
  links["intra_cu_latency_ns"] = s.intra_cu_latency / kNano;
  links["intra_cu_bandwidth_gib_s"] = s.intra_cu_bandwidth / kGB;
  n["links"] = links;
  YAML::Node p;
  p["memory_pj_per_bit"] = s.power.memory_pj_per_bit;
  p["datapath_pj_per_bit"] = s.power.datapath_pj_per_bit;
  p["compute_pj_per_op"] = s.power.compute_pj_per_op;
  p["vop_pj_per_op"] = s.power.vop_pj_per_op;
  p["idle_w_per_cu"] = s.power.idle_w_per_cu;
  p["tdp_budget_w"] = s.tdp_budget;
  n["power"] = p;
  YAML::Node prov;
  prov["target_ops_per_byte"] = s.target_ops_per_byte;
  prov["weight_bits"] = s.weight_bits_for_provisioning;
  n["provisioning"] = prov;
  YAML::Node order(YAML::NodeType::Sequence);
  for (auto v : s.ring_order) order.push_back(v);
  n["ring_order"] = order;
  return n;
}

arch::SystemConfig system_from_node(const YAML::Node& n) {
  arch::SystemConfig s;
  s.num_cus = get<uint32_t>(n, "num_cus", "");
  s.cus_per_package = get<uint32_t>(n, "cus_per_package", "");
  const auto core = n["core"];
  s.core.tmacs_per_core = get<uint32_t>(core, "tmacs", "core");
  s.core.macs_per_tmac = get<uint32_t>(core, "macs_per_tmac", "core");
  s.core.clock = get<double>(core, "clock_hz", "core");
  s.core.pch_bandwidth = get<double>(core, "pch_bandwidth_gib_s", "core") * kGB;
  s.core.mem_buffer = get<uint64_t>(core, "mem_buffer_kib", "core") * 1024;
  s.core.net_buffer = get<uint64_t>(core, "net_buffer_kib", "core") * 1024;
  s.core.decoder_weights_per_cycle = get<double>(core, "decoder_weights_per_cycle", "core");
  s.core.hpvop_lanes = get<double>(core, "hpvop_lanes", "core");
  s.core.accum_regfile = get<uint32_t>(core, "accum_regfile", "core");
  s.core.tree_drain_cycles = get<uint32_t>(core, "tree_drain_cycles", "core");
  s.core.stripe_reload_cycles = get<uint32_t>(core, "stripe_reload_cycles", "core");
  const auto cu = n["cu"];
  s.cu.cores = get<uint32_t>(cu, "cores", "cu");
  s.cu.shorelines = get<uint32_t>(cu, "shorelines", "cu");
  s.cu.shoreline_bandwidth = get<double>(cu, "shoreline_bandwidth_gib_s", "cu") * kGB;
  s.cu.devices = get<uint32_t>(cu, "devices", "cu");
  s.cu.mem_geometry = geometry_from_node(cu["memory"], "cu.memory");
  const auto links = n["links"];
  s.intra_package_link = link_from_node(links["intra_package"], "links.intra_package");
  s.inter_package_link = link_from_node(links["inter_package"], "links.inter_package");
  s.intra_cu_latency = get<double>(links, "intra_cu_latency_ns", "links") * kNano;
  s.intra_cu_bandwidth = get<double>(links, "intra_cu_bandwidth_gib_s", "links") * kGB;
  const auto p = n["power"];
  s.power.memory_pj_per_bit = get<double>(p, "memory_pj_per_bit", "power");
  s.power.datapath_pj_per_bit = get<double>(p, "datapath_pj_per_bit", "power");
  s.power.compute_pj_per_op = get<double>(p, "compute_pj_per_op", "power");
  s.power.vop_pj_per_op = get<double>(p, "vop_pj_per_op", "power");
  s.power.idle_w_per_cu = get<double>(p, "idle_w_per_cu", "power");
  s.tdp_budget = get<double>(p, "tdp_budget_w", "power");
  const auto prov = n["provisioning"];
  s.target_ops_per_byte = get<double>(prov, "target_ops_per_byte", "provisioning");
  s.weight_bits_for_provisioning = get<double>(prov, "weight_bits", "provisioning");
  if (n["ring_order"] && !n["ring_order"].IsNull()) s.ring_order = get<std::vector<uint32_t>>(n, "ring_order", "");
  return s;
}

// The memory entry may be a name or a mapping, and ring_order starts empty,
// so both are merged by replacement rather than key-by-key.
YAML::Node merge_system(const YAML::Node& file) {
  YAML::Node n = system_node(arch::default_system());
  if (!file || file.IsNull()) return n;
  if (!file.IsMap()) fail("system document must be a mapping");
  YAML::Node rest = YAML::Clone(file);
  YAML::Node memory, order;
  if (rest["cu"] && rest["cu"].IsMap() && rest["cu"]["memory"]) {
    memory = YAML::Clone(rest["cu"]["memory"]);
    rest["cu"].remove("memory");
  }
  if (rest["ring_order"]) {
    order = YAML::Clone(rest["ring_order"]);
    rest.remove("ring_order");
  }
  merge(n, rest, "");
  if (memory) n["cu"]["memory"] = memory;
  if (order) n["ring_order"] = order;
  return n;
}

void apply_system(YAML::Node n, const Overrides& ov) {
  Overrides rest;
  for (const auto& kv : ov) {
    if (kv.first == "cu.memory" || kv.first == "ring_order") {
      if (kv.first == "ring_order") {
        n["ring_order"] = parse(kv.second, "override 'ring_order'");
      } else {
        n["cu"]["memory"] = parse(kv.second, "override 'cu.memory'");
      }
    } else if (kv.first.rfind("cu.memory.", 0) == 0 && n["cu"]["memory"].IsScalar()) {
      n["cu"]["memory"] = geometry_node(named_geometry(n["cu"]["memory"].as<std::string>()));
      rest.push_back(kv);
    } else {
      rest.push_back(kv);
    }
  }
  apply_overrides(n, rest);
}

}  // namespace

std::pair<std::string, std::string> parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) fail("override '" + text + "' must look like key=value");
  return {text.substr(0, eq), text.substr(eq + 1)};
}

std::string config_dir() {
  if (const char* env = std::getenv("RPU_CONFIG_DIR"); env && *env) return env;
  return RPU_CONFIG_DIR;
}

std::string resolve(const std::string& kind, const std::string& name_or_path) {
  namespace fs = std::filesystem;
  if (fs::is_regular_file(name_or_path)) return name_or_path;
  const fs::path p = fs::path(config_dir()) / kind / (name_or_path + ".yaml");
  if (fs::is_regular_file(p)) return p.string();
  fail("no " + kind + " config named '" + name_or_path + "'");
}

compiler::ModelSpec model_from_yaml_text(const std::string& yaml, const Overrides& ov) {
  YAML::Node n = model_node(compiler::ModelSpec{});
  n["name"] = "unnamed";
  merge(n, parse(yaml, "model"), "");
  apply_overrides(n, ov);
  return model_from_node(n);
}

compiler::ModelSpec load_model(const std::string& name_or_path, const Overrides& ov) {
  return model_from_yaml_text(read_file(resolve("models", name_or_path)), ov);
}

std::string model_to_yaml(const compiler::ModelSpec& m) { return emit(model_node(m)); }

arch::SystemConfig system_from_yaml_text(const std::string& yaml, const Overrides& ov) {
  YAML::Node n = merge_system(parse(yaml, "system"));
  apply_system(n, ov);
  return system_from_node(n);
}

arch::SystemConfig load_system(const std::string& name_or_path, const Overrides& ov) {
  return system_from_yaml_text(read_file(resolve("systems", name_or_path)), ov);
}

std::string system_to_yaml(const arch::SystemConfig& s) { return emit(system_node(s)); }

mem::StackGeometry geometry_from_yaml_text(const std::string& yaml) {
  return geometry_from_node(parse(yaml, "geometry"), "geometry");
}

namespace {

YAML::Node grid_node(const mem::DesignGrid& g) {
  YAML::Node n;
  n["base"] = geometry_node(g.base);
  n["ranks"] = g.ranks;
  n["banks_per_bank_group"] = g.banks_per_bank_group;
  n["subarray_divisors"] = g.subarray_divisors;
  n["channels_per_layer"] = g.channels_per_layer;
  return n;
}

}  // namespace

mem::DesignGrid load_grid(const std::string& name_or_path) {
  const YAML::Node file = parse(read_file(resolve("grids", name_or_path)), "grid");
  YAML::Node n = grid_node(mem::DesignGrid{});
  YAML::Node rest = YAML::Clone(file);
  YAML::Node base;
  if (rest.IsMap() && rest["base"]) {
    base = YAML::Clone(rest["base"]);
    rest.remove("base");
  }
  merge(n, rest, "");
  mem::DesignGrid g;
  if (base) g.base = geometry_from_node(base, "base");
  g.ranks = get<std::vector<uint32_t>>(n, "ranks", "");
  g.banks_per_bank_group = get<std::vector<uint32_t>>(n, "banks_per_bank_group", "");
  g.subarray_divisors = get<std::vector<uint32_t>>(n, "subarray_divisors", "");
  g.channels_per_layer = get<std::vector<uint32_t>>(n, "channels_per_layer", "");
  for (const auto* v : {&g.ranks, &g.banks_per_bank_group, &g.subarray_divisors, &g.channels_per_layer})
    if (v->empty()) fail("grid axes must be non-empty");
  return g;
}

std::string grid_to_yaml(const mem::DesignGrid& g) { return emit(grid_node(g)); }

const BaselineEntry& BaselineConstants::at(const std::string& key) const {
  for (const auto& e : entries)
    if (e.key == key) return e;
  fail("baseline '" + name + "' has no entry for '" + key + "'");
}

std::string baseline_key(const std::string& model, uint32_t batch, uint32_t seq) {
  return model + "/bs" + std::to_string(batch) + "/seq" + std::to_string(seq);
}

BaselineConstants load_baselines(const std::string& name_or_path) {
  const YAML::Node n = parse(read_file(resolve("baselines", name_or_path)), "baselines");
  BaselineConstants b;
  b.name = get<std::string>(n, "name", "");
  for (const auto& kv : n)
    if (kv.first.as<std::string>() != "name" && kv.first.as<std::string>() != "entries")
      fail("unknown key '" + kv.first.as<std::string>() + "' in baselines");
  if (!n["entries"] || !n["entries"].IsSequence()) fail("baselines need an 'entries' list");
  for (const auto& e : n["entries"]) {
    BaselineEntry x;
    for (const auto& kv : e) {
      const auto k = kv.first.as<std::string>();
      if (k != "model" && k != "batch" && k != "seq" && k != "system" && k != "tdp_w" && k != "latency_ms" &&
          k != "energy_j" && k != "note")
        fail("unknown key '" + k + "' in baseline entry");
    }
    x.key = baseline_key(get<std::string>(e, "model", "entries"), get<uint32_t>(e, "batch", "entries"),
                         get<uint32_t>(e, "seq", "entries"));
    x.system = get<std::string>(e, "system", "entries");
    x.tdp_w = get<double>(e, "tdp_w", "entries");
    x.latency_s = get<double>(e, "latency_ms", "entries") * 1e-3;
    x.energy_j = e["energy_j"] ? get<double>(e, "energy_j", "entries") : 0.0;
    if (e["note"]) x.note = get<std::string>(e, "note", "entries");
    if (x.tdp_w <= 0 || x.latency_s <= 0 || x.energy_j < 0) fail("baseline '" + x.key + "' must be positive");
    b.entries.push_back(std::move(x));
  }
  return b;
}

std::string Manifest::get(const std::string& key, const std::string& fallback) const {
  auto it = params.find(key);
  return it == params.end() ? fallback : it->second;
}

std::vector<std::string> Manifest::list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<uint32_t> Manifest::uints(const std::string& key) const {
  std::vector<uint32_t> out;
  for (const auto& s : list(key)) {
    try {
      out.push_back(static_cast<uint32_t>(std::stoul(s)));
    } catch (const std::exception&) {
      fail("manifest key '" + key + "' must hold integers");
    }
  }
  return out;
}

uint32_t Manifest::uint(const std::string& key, uint32_t fallback) const {
  auto v = uints(key);
  return v.empty() ? fallback : v.front();
}

double Manifest::number(const std::string& key, double fallback) const {
  const auto s = get(key);
  if (s.empty()) return fallback;
  try {
    return std::stod(s);
  } catch (const std::exception&) {
    fail("manifest key '" + key + "' must be a number");
  }
}

Manifest load_manifest(const std::string& path, const Overrides& ov) {
  const YAML::Node n = parse(read_file(resolve("manifests", path)), "manifest");
  if (!n.IsMap()) fail("manifest must be a mapping");
  Manifest m;
  for (const auto& kv : n) {
    const auto key = kv.first.as<std::string>();
    if (key == "experiment") {
      m.experiment = kv.second.as<std::string>();
      continue;
    }
    if (kv.second.IsSequence()) {
      std::string joined;
      for (const auto& item : kv.second) joined += (joined.empty() ? "" : ",") + item.as<std::string>();
      m.params[key] = joined;
    } else if (kv.second.IsScalar()) {
      m.params[key] = kv.second.as<std::string>();
    } else {
      fail("manifest key '" + key + "' must be a scalar or a list");
    }
  }
  if (m.experiment.empty()) fail("manifest needs an 'experiment'");
  for (const auto& [k, v] : ov) {
    if (!m.params.count(k)) fail("unknown override key '" + k + "'");
    m.params[k] = v;
  }
  std::ostringstream os;
  os << "experiment=" << m.experiment << "\n";
  for (const auto& [k, v] : m.params) os << k << "=" << v << "\n";
  m.source = os.str();
  return m;
}

std::string config_hash(const std::string& canonical) {
  return hex64(fnv1a(canonical.data(), canonical.size()));
}

}  // namespace rpu::config
