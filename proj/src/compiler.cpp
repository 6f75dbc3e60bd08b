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

#include "rpu/compiler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "rpu/common.hpp"
#include "rpu/ring.hpp"

namespace rpu::compiler {

namespace {
constexpr const char* kModule = "compiler";

[[noreturn]] void fail(const std::string& what) { throw Error(kModule, what); }
}  // namespace

bool ModelSpec::is_moe_layer(uint32_t layer) const {
  if (!is_moe()) return false;
  const uint32_t k = std::max<uint32_t>(1, moe_interleave);
  return layer % k == k - 1;
}

double ModelSpec::bits_per_weight() const {
  return weight_bits + (weight_block > 1 ? exponent_bits / weight_block : 0.0);
}

double ModelSpec::layer_params(uint32_t layer) const {
  const double h = hidden;
  double p = h * (heads + 2.0 * kv_heads) * head_dim + double(heads) * head_dim * h + 2 * h;
  if (is_moe_layer(layer)) {
    p += h * experts + (double(experts) + shared_experts) * 3.0 * h * expert_ffn;
  } else {
    p += 3.0 * h * ffn;
  }
  return p;
}

double ModelSpec::total_params() const {
  double p = 0;
  for (uint32_t l = 0; l < layers; ++l) p += layer_params(l);
  return p + double(vocab) * hidden * (tie_embeddings ? 1 : 2) + hidden;
}

double ModelSpec::active_params() const {
  double p = 0;
  const double h = hidden;
  for (uint32_t l = 0; l < layers; ++l) {
    p += h * (heads + 2.0 * kv_heads) * head_dim + double(heads) * head_dim * h + 2 * h;
    if (is_moe_layer(l))
      p += h * experts + (double(top_k) + shared_experts) * 3.0 * h * expert_ffn;
    else
      p += 3.0 * h * ffn;
  }
  return p + double(vocab) * hidden * (tie_embeddings ? 1 : 2) + hidden;
}

void check_model(const ModelSpec& m) {
  if (m.layers == 0 || m.hidden == 0 || m.heads == 0 || m.kv_heads == 0 || m.head_dim == 0 || m.vocab == 0)
    fail("model '" + m.name + "': dimensions must be positive");
  if (m.heads % m.kv_heads != 0) fail("model '" + m.name + "': heads must be a multiple of kv_heads");
  if (m.heads * m.head_dim != m.hidden) fail("model '" + m.name + "': hidden != heads x head_dim");
  if (m.is_moe()) {
    if (m.expert_ffn == 0) fail("model '" + m.name + "': expert_ffn must be positive");
    if (m.top_k == 0 || m.top_k > m.experts) fail("model '" + m.name + "': top_k outside [1, experts]");
    if (m.moe_interleave > 1 && m.ffn == 0) fail("model '" + m.name + "': interleaved MoE needs a dense ffn");
  } else if (m.ffn == 0) {
    fail("model '" + m.name + "': ffn must be positive");
  }
  if (m.weight_bits < 1 || m.weight_bits > 16) fail("model '" + m.name + "': weight_bits outside [1, 16]");
}

double dequant_overhead(const ModelSpec& m) {
  if (m.weight_block <= 1) return 0;
  return m.exponent_bits / m.weight_block / m.weight_bits;
}

Footprint footprint(const ModelSpec& m, uint32_t batch, uint32_t seq) {
  Footprint f;
  f.weights = m.total_params() * m.bits_per_weight() / 8.0;
  f.kv = 2.0 * m.layers * m.kv_heads * m.head_dim * double(seq) * batch * m.kv_bits / 8.0;
  return f;
}

// ---------------------------------------------------------------------------
// Sharding

uint64_t LinearPlan::total_cols() const {
  uint64_t n = 0;
  for (const auto& s : shards)
    if (s.row_group_index == 0) n += s.cols;
  return n;
}

uint16_t row_groups_for(uint64_t N, uint32_t cores, uint32_t cores_per_cu) {
  uint32_t g = 1;
  while (g < cores_per_cu && g < cores && N * g < 8ULL * cores && cores % (2 * g) == 0) g *= 2;
  return static_cast<uint16_t>(g);
}

LinearPlan shard_linear(const std::string& name, uint64_t K, uint64_t N, uint32_t first_core, uint32_t cores,
                        uint32_t cores_per_cu) {
  if (cores == 0) fail("linear '" + name + "' mapped onto zero cores");
  LinearPlan p;
  p.name = name;
  p.K = K;
  p.N = N;
  p.first_core = first_core;
  const uint16_t G = row_groups_for(N, cores, cores_per_cu);
  const uint32_t groups = cores / G;
  p.shards.resize(cores);
  uint32_t col = 0;
  for (uint32_t grp = 0; grp < groups; ++grp) {
    const uint32_t cols = static_cast<uint32_t>(N / groups + (grp < N % groups ? 1 : 0));
    for (uint16_t g = 0; g < G; ++g) {
      auto& s = p.shards[grp * G + g];
      s.col_begin = col;
      s.cols = cols;
      s.rows = static_cast<uint32_t>(K / G + (g < K % G ? 1 : 0));
      s.row_groups = G;
      s.row_group_index = g;
    }
    col += cols;
  }
  return p;
}

ShardPlan plan_sharding(const ModelSpec& m, const arch::SystemConfig& sys, const Workload& w) {
  check_model(m);
  auto report = arch::validate(sys);
  if (!report.ok()) fail("invalid system configuration:\n" + report.to_string());
  const uint32_t P = sys.num_cus, cpc = sys.cu.cores, C = sys.total_cores();

  const Footprint fp = footprint(m, w.batch, w.seq);
  const double cap = arch::total_capacity(sys);
  if (fp.total() > cap) {
    std::ostringstream os;
    os.precision(4);
    os << "capacity: '" << m.name << "' needs " << fp.total() / kGB << " GB (weights " << fp.weights / kGB
       << ", kv " << fp.kv / kGB << ") but " << P << " CUs provide " << cap / kGB << " GB, deficit "
       << (fp.total() - cap) / kGB << " GB";
    fail(os.str());
  }

  ShardPlan p;
  p.num_cus = P;
  p.cores_per_cu = cpc;
  p.capacity_per_core = arch::cu_capacity(sys) / cpc;

  if (P >= m.kv_heads) {
    for (uint32_t j = 0; j < m.kv_heads; ++j) {
      uint32_t a = static_cast<uint32_t>(uint64_t(j) * P / m.kv_heads);
      uint32_t b = static_cast<uint32_t>(uint64_t(j + 1) * P / m.kv_heads);
      p.groups.push_back({a, b - a, j, j + 1});
    }
  } else {
    for (uint32_t c = 0; c < P; ++c) {
      uint32_t h0 = static_cast<uint32_t>(ceil_div(uint64_t(c) * m.kv_heads, P));
      uint32_t h1 = static_cast<uint32_t>(ceil_div(uint64_t(c + 1) * m.kv_heads, P));
      p.groups.push_back({c, 1, h0, h1});
    }
  }
  const uint64_t qkv_per_head = uint64_t(m.qvecs() + 2) * m.head_dim;
  for (std::size_t j = 0; j < p.groups.size(); ++j) {
    const auto& g = p.groups[j];
    p.wqkv.push_back(shard_linear("wqkv.g" + std::to_string(j), m.hidden, qkv_per_head * g.kv_heads(),
                                  g.first_cu * cpc, g.num_cus * cpc, cpc));
  }
  p.wo = shard_linear("wo", uint64_t(m.heads) * m.head_dim, m.hidden, 0, C, cpc);
  if (m.ffn > 0) {
    p.gate_up = shard_linear("gate_up", m.hidden, m.ffn, 0, C, cpc);
    p.down = shard_linear("down", m.ffn, m.hidden, 0, C, cpc);
  }
  p.lm_head = shard_linear("lm_head", m.hidden, m.vocab, 0, C, cpc);
  if (m.is_moe()) {
    p.router = shard_linear("router", m.hidden, m.experts, 0, C, cpc);
    p.expert_gate_up = shard_linear("expert_gate_up", m.hidden, m.expert_ffn, 0, C, cpc);
    p.expert_down = shard_linear("expert_down", m.expert_ffn, m.hidden, 0, C, cpc);
    if (m.shared_experts > 0) {
      p.shared_gate_up = shard_linear("shared_gate_up", m.hidden, uint64_t(m.expert_ffn) * m.shared_experts, 0, C, cpc);
      p.shared_down = shard_linear("shared_down", uint64_t(m.expert_ffn) * m.shared_experts, m.hidden, 0, C, cpc);
    }
  }

  // Per-core weight bytes across all layers.
  const double bpw = m.bits_per_weight() / 8.0;
  std::vector<double> bytes(C, 0.0);
  auto add = [&](const LinearPlan& lp, double times, double pair = 1.0) {
    for (std::size_t i = 0; i < lp.shards.size(); ++i)
      bytes[lp.first_core + i] += times * pair * lp.shards[i].rows * double(lp.shards[i].cols) * bpw;
  };
  uint32_t moe_layers = 0;
  for (uint32_t l = 0; l < m.layers; ++l) moe_layers += m.is_moe_layer(l) ? 1 : 0;
  const double dense_layers = m.layers - moe_layers;
  for (const auto& q : p.wqkv) add(q, m.layers);
  add(p.wo, m.layers);
  if (dense_layers > 0) {
    add(p.gate_up, dense_layers, 2.0);
    add(p.down, dense_layers);
  }
  add(p.lm_head, m.tie_embeddings ? 1 : 2);
  if (moe_layers > 0) {
    add(p.router, moe_layers);
    add(p.expert_gate_up, double(moe_layers) * m.experts, 2.0);
    add(p.expert_down, double(moe_layers) * m.experts);
    if (m.shared_experts > 0) {
      add(p.shared_gate_up, moe_layers, 2.0);
      add(p.shared_down, moe_layers);
    }
  }
  // KV shards follow the group placement.
  for (const auto& g : p.groups) {
    const uint32_t n = g.num_cus * cpc;
    const double kv = 2.0 * m.layers * g.kv_heads() * m.head_dim * double(w.seq + 1) * w.batch * m.kv_bits / 8.0;
    for (uint32_t i = 0; i < n; ++i) bytes[g.first_cu * cpc + i] += kv / n;
  }
  p.weight_bytes_per_core = *std::max_element(bytes.begin(), bytes.end());
  if (p.weight_bytes_per_core > p.capacity_per_core) {
    std::ostringstream os;
    os.precision(4);
    os << "capacity: largest core shard of '" << m.name << "' needs " << p.weight_bytes_per_core / kMB
       << " MB but a core channel holds " << p.capacity_per_core / kMB << " MB";
    fail(os.str());
  }
  return p;
}

void write_shard_csv(std::ostream& os, const ShardPlan& p) {
  os << "kernel,core,cu,col_begin,cols,rows,row_groups,row_group_index\n";
  auto dump = [&](const LinearPlan& lp) {
    for (std::size_t i = 0; i < lp.shards.size(); ++i) {
      const auto& s = lp.shards[i];
      const uint32_t core = lp.first_core + static_cast<uint32_t>(i);
      os << lp.name << ',' << core << ',' << core / p.cores_per_cu << ',' << s.col_begin << ',' << s.cols << ','
         << s.rows << ',' << s.row_groups << ',' << s.row_group_index << '\n';
    }
  };
  for (const auto& q : p.wqkv) dump(q);
  for (const auto* lp : {&p.wo, &p.gate_up, &p.down, &p.router, &p.expert_gate_up, &p.expert_down,
                         &p.shared_gate_up, &p.shared_down, &p.lm_head})
    if (!lp->shards.empty()) dump(*lp);
}

std::vector<std::vector<uint32_t>> route_tokens(const ModelSpec& m, uint32_t layer, const Workload& w) {
  std::vector<std::vector<uint32_t>> routes(w.batch);
  if (!m.is_moe()) return routes;
  std::mt19937_64 rng(w.seed * 0x9e3779b97f4a7c15ULL + layer);
  for (auto& r : routes) {
    std::vector<uint32_t> ids(m.experts);
    for (uint32_t e = 0; e < m.experts; ++e) ids[e] = e;
    for (uint32_t k = 0; k < m.top_k; ++k) {
      std::uniform_int_distribution<uint32_t> d(k, m.experts - 1);
      std::swap(ids[k], ids[d(rng)]);
      r.push_back(ids[k]);
    }
    std::sort(r.begin(), r.end());
  }
  return routes;
}

// ---------------------------------------------------------------------------
// Lowering

namespace {

using isa::Instruction;
using isa::Opcode;
using isa::Region;
using isa::Space;
using isa::ValidCount;
constexpr uint32_t kEB = isa::kEntryBytes;

struct RingAlloc {
  Space space = Space::MemBuffer;
  uint32_t entries = 0;
  uint64_t cursor = 0;

  Region take(uint64_t bytes) {
    if (bytes == 0) return {space, 0, 0};
    Region r{space, (cursor % entries) * kEB, bytes};
    cursor += ceil_div(bytes, kEB);
    return r;
  }
};

struct PendingSend {
  uint32_t coll;
  Region src;
  uint64_t bytes;
  uint16_t kernel;
  uint16_t layer;
};

struct CoreCtx {
  RingAlloc mbuf, nbuf, scr;
  uint64_t chan = 0;
  uint32_t next_id = 0;
  std::vector<uint32_t> colls;
  std::vector<std::pair<uint32_t, Region>> recv;  // (collective, window), arm order
  std::vector<PendingSend> sends;
  std::vector<Instruction> memory, compute;

  const Region& window(uint32_t coll) const {
    for (auto it = recv.rbegin(); it != recv.rend(); ++it)
      if (it->first == coll) return it->second;
    throw Error(kModule, "core has no receive window for collective " + std::to_string(coll));
  }
};

class Lowerer {
 public:
  Lowerer(const ModelSpec& m, const ShardPlan& plan, const arch::SystemConfig& sys, const LowerOptions& opt)
      : m_(m), plan_(plan), sys_(sys), opt_(opt) {
    P_ = plan.num_cus;
    cpc_ = plan.cores_per_cu;
    C_ = P_ * cpc_;
    if (P_ != sys.num_cus || cpc_ != sys.cu.cores) fail("shard plan does not match the system");
    B_ = opt.workload.batch;
    if (B_ == 0) fail("batch must be positive");
    rb_ = static_cast<uint64_t>(B_ * m.act_bits / 8.0);
    bpw_ = m.bits_per_weight() / 8.0;
    ctx_.resize(C_);
    for (auto& c : ctx_) {
      c.mbuf = {Space::MemBuffer, static_cast<uint32_t>(sys.core.mem_buffer / kEB)};
      c.nbuf = {Space::NetBuffer, static_cast<uint32_t>(sys.core.net_buffer / kEB)};
      c.scr = {Space::Scratch, static_cast<uint32_t>(opt.scratch_bytes / kEB)};
    }
  }

  isa::Program run() {
    const uint32_t period = m_.is_moe() ? std::max<uint32_t>(1, m_.moe_interleave) : 1;
    uint32_t S = opt_.sim_layers ? opt_.sim_layers : 3 * period;
    S = std::min(S, m_.layers);
    prog_.num_cus = P_;
    prog_.cores_per_cu = cpc_;
    prog_.model_layers = m_.layers;
    prog_.simulated_layers = S;
    prog_.layer_period = period;
    auto& b = prog_.buffers;
    b.mem_entries = ctx_[0].mbuf.entries;
    b.net_entries = ctx_[0].nbuf.entries;
    b.scratch_entries = ctx_[0].scr.entries;
    b.channel_bytes = static_cast<uint64_t>(plan_.capacity_per_core);
    b.regions = {{"weight_stream", {Space::MemBuffer, 0, sys_.core.mem_buffer}, true},
                 {"receive_windows", {Space::NetBuffer, 0, sys_.core.net_buffer}, true},
                 {"scratch", {Space::Scratch, 0, opt_.scratch_bytes}, true}};

    uint32_t x = residual_collective(true, 0);
    for (uint32_t l = 0; l < S; ++l) x = layer(l, x);
    head(S, x);
    finish();
    return std::move(prog_);
  }

 private:
  // --- bookkeeping --------------------------------------------------------

  uint16_t kernel(const std::string& name, arch::KernelKind kind, uint32_t layer) {
    if (auto it = kernel_ids_.find(name); it != kernel_ids_.end()) return it->second;
    isa::KernelInfo k;
    k.name = name;
    k.kind = static_cast<uint8_t>(kind);
    k.layer = static_cast<uint16_t>(layer);
    prog_.kernels.push_back(k);
    if (prog_.kernels.size() > 0xffff) fail("too many kernels in one program");
    const auto id = static_cast<uint16_t>(prog_.kernels.size() - 1);
    kernel_ids_.emplace(name, id);
    return id;
  }

  void check_fit(const Region& r, const RingAlloc& a, const std::string& name, uint32_t share = 1) {
    if (ceil_div(r.length, kEB) * share > a.entries) {
      std::ostringstream os;
      os << "buffer map overflow: region '" << name << "' needs " << ceil_div(r.length, kEB) << " entries of "
         << to_string(a.space) << " (capacity " << a.entries << ")";
      fail(os.str());
    }
  }

  Region scratch(CoreCtx& c, uint64_t bytes, const std::string& name) {
    Region r = c.scr.take(bytes);
    check_fit(r, c.scr, name, 4);
    return r;
  }

  /// Creates a collective over CUs [first, first+count); `blocks` is the
  /// contribution of each member CU. `whole` windows must fit the buffer.
  uint32_t collective(isa::CollectiveKind kind, uint32_t first, uint32_t count, std::vector<uint64_t> blocks,
                      bool whole, const std::string& name, bool preloaded = false, bool scatter = false) {
    isa::CollectiveDesc d;
    d.id = static_cast<uint32_t>(prog_.collectives.size());
    d.kind = kind;
    d.first = first;
    d.count = count;
    d.preloaded = preloaded;
    d.scatter = scatter;
    d.block_bytes = std::move(blocks);
    for (uint32_t cu = first; cu < first + count; ++cu) {
      const uint64_t total = d.window_bytes(cu - first);
      for (uint32_t k = 0; k < cpc_; ++k) {
        auto& c = ctx_[cu * cpc_ + k];
        Region r = c.nbuf.take(total);
        if (whole) check_fit(r, c.nbuf, name);
        c.colls.push_back(d.id);
        c.recv.emplace_back(d.id, r);
      }
    }
    prog_.collectives.push_back(std::move(d));
    return prog_.collectives.back().id;
  }

  Instruction base(CoreCtx& c, Opcode op, uint16_t k, uint32_t layer) {
    Instruction in;
    in.op = op;
    in.id = c.next_id++;
    in.kernel = k;
    in.layer = static_cast<uint16_t>(layer);
    in.flags.check_valid = true;
    return in;
  }

  Region dma(uint32_t core, uint16_t k, uint32_t layer, uint64_t bytes) {
    auto& c = ctx_[core];
    Instruction in = base(c, Opcode::MemDMA, k, layer);
    in.src = {Space::Memory, c.chan, bytes};
    c.chan += bytes;
    in.dst = c.mbuf.take(bytes);
    in.bytes = bytes;
    in.flags.valid_count = ValidCount(bytes ? 1 : 0);
    in.dtype = {4, static_cast<uint8_t>(m_.weight_bits), static_cast<uint16_t>(m_.weight_block)};
    prog_.kernels[k].bytes_from_memory += double(bytes);
    if (bytes) c.memory.push_back(in);
    return in.dst;
  }

  struct VmmArgs {
    isa::VmmMode mode = isa::VmmMode::Linear;
    Region weights;
    Region act;
    uint32_t act_coll = 0;
    bool dec_act = true;
    isa::TensorDims dims;
    uint16_t G = 1, g = 0, qvecs = 1;
    uint64_t out_bytes = 0;
  };

  Region vmm(uint32_t core, uint16_t k, uint32_t layer, const VmmArgs& a, const std::string& name) {
    auto& c = ctx_[core];
    Instruction in = base(c, Opcode::ComputeVMM, k, layer);
    in.sub_kind = static_cast<uint8_t>(a.mode);
    in.src = a.weights;
    in.aux = a.act;
    in.collective = a.act_coll;
    in.dst = scratch(c, a.out_bytes, name);
    in.bytes = a.weights.length;
    in.dims = a.dims;
    in.row_groups = a.G;
    in.row_group_index = a.g;
    in.qvecs = a.qvecs;
    in.flags.valid_count = ValidCount(a.out_bytes ? 1 : 0);
    in.flags.decrement_on_read = true;
    in.flags.decrement_aux = a.dec_act;
    in.dtype = a.mode == isa::VmmMode::Linear
                   ? isa::Dtype{4, static_cast<uint8_t>(m_.weight_bits), static_cast<uint16_t>(m_.weight_block)}
                   : isa::Dtype{0, static_cast<uint8_t>(m_.kv_bits), 1};
    prog_.kernels[k].ops += 2.0 * a.dims.rows * double(a.dims.cols) * a.dims.batch * a.qvecs;
    c.compute.push_back(in);
    return in.dst;
  }

  Region vop(uint32_t core, uint16_t k, uint32_t layer, isa::VopKind kind, Region src, bool dec_src, Region aux,
             bool dec_aux, uint64_t elements, uint16_t ops, uint64_t out_bytes, const std::string& name) {
    auto& c = ctx_[core];
    Instruction in = base(c, Opcode::ComputeVOP, k, layer);
    in.sub_kind = static_cast<uint8_t>(kind);
    in.src = src;
    in.aux = aux;
    in.dst = scratch(c, out_bytes, name);
    in.dims = {static_cast<uint32_t>(elements), 1, 1};
    in.ops_per_element = ops;
    in.flags.valid_count = ValidCount(out_bytes ? 1 : 0);
    in.flags.decrement_on_read = dec_src && src.length > 0;
    in.flags.decrement_aux = dec_aux && aux.length > 0;
    in.dtype = {1, 32, 1};
    prog_.kernels[k].ops += double(elements) * ops;
    c.compute.push_back(in);
    return in.dst;
  }

  void send(uint32_t core, uint32_t coll, Region src, uint64_t bytes, uint16_t k, uint32_t layer) {
    ctx_[core].sends.push_back({coll, src, bytes, k, static_cast<uint16_t>(layer)});
    prog_.kernels[k].bytes_on_network += double(bytes);
  }

  std::vector<uint64_t> cu_blocks(const LinearPlan& lp, uint64_t bytes_per_col, uint32_t first_cu, uint32_t count) {
    std::vector<uint64_t> b(count, 0);
    for (std::size_t i = 0; i < lp.shards.size(); ++i) {
      const auto& s = lp.shards[i];
      if (s.row_group_index != 0) continue;
      const uint32_t cu = (lp.first_core + static_cast<uint32_t>(i)) / cpc_;
      b.at(cu - first_cu) += s.cols * bytes_per_col;
    }
    return b;
  }

  const LinearPlan& residual_plan() const { return m_.ffn > 0 ? plan_.down : plan_.expert_down; }

  uint32_t residual_collective(bool preloaded, uint32_t layer) {
    return collective(isa::CollectiveKind::Broadcast, 0, P_, cu_blocks(residual_plan(), rb_, 0, P_), false,
                      "L" + std::to_string(layer) + ".x", preloaded);
  }

  /// Column-sharded linear over the plan's cores reading `act_coll`.
  /// Returns output fragments per core (indexed relative to plan.first_core).
  std::vector<Region> linear(const LinearPlan& lp, uint16_t k, uint32_t layer, uint32_t act_coll, bool dec_act,
                             uint32_t batch, double pair, arch::KernelKind kind) {
    std::vector<Region> out(lp.shards.size());
    for (std::size_t i = 0; i < lp.shards.size(); ++i) {
      const uint32_t core = lp.first_core + static_cast<uint32_t>(i);
      const auto& s = lp.shards[i];
      const uint64_t cols = static_cast<uint64_t>(s.cols * pair);
      const uint64_t wbytes =
          batch ? static_cast<uint64_t>(std::ceil(double(s.rows) * cols * bpw_)) : 0;
      VmmArgs a;
      a.weights = dma(core, k, layer, wbytes);
      a.act = ctx_[core].window(act_coll);
      a.act_coll = act_coll;
      a.dec_act = dec_act;
      a.dims = {wbytes ? s.rows : 0, static_cast<uint32_t>(cols), batch};
      a.G = s.row_groups;
      a.g = s.row_group_index;
      a.out_bytes = wbytes ? cols * batch * static_cast<uint64_t>(m_.act_bits / 8) : 0;
      out[i] = vmm(core, k, layer, a, prog_.kernels[k].name);
      if (wbytes && counted_.insert(uint64_t(k) << 32 | core).second) prog_.kernels[k].cores += 1;
    }
    (void)kind;
    return out;
  }

  // --- layers -------------------------------------------------------------

  uint32_t layer(uint32_t l, uint32_t x_coll) {
    const std::string L = "L" + std::to_string(l) + ".";
    const uint16_t k_qkv = kernel(L + "wqkv", arch::KernelKind::Linear, l);
    const uint16_t k_qk = kernel(L + "qk", arch::KernelKind::SDPA, l);
    const uint16_t k_max = kernel(L + "softmax_max", arch::KernelKind::VOP, l);
    const uint16_t k_exp = kernel(L + "softmax_exp", arch::KernelKind::VOP, l);
    const uint16_t k_sum = kernel(L + "softmax_sum", arch::KernelKind::VOP, l);
    const uint16_t k_av = kernel(L + "av", arch::KernelKind::SDPA, l);
    const uint16_t k_comb = kernel(L + "attn_combine", arch::KernelKind::VOP, l);
    const uint16_t k_wo = kernel(L + "wo", arch::KernelKind::Linear, l);

    const uint32_t hd = m_.head_dim, q = m_.qvecs();
    const uint64_t seq = opt_.workload.seq;
    std::vector<uint64_t> attn_rows_blocks(P_, 0);
    // Attention runs in batch slices small enough that every softmax and
    // value window of a slice fits a quarter of the receive buffer.
    uint32_t max_members = 1, max_kvh = 1;
    for (const auto& grp : plan_.groups) {
      max_members = std::max(max_members, grp.num_cus);
      max_kvh = std::max(max_kvh, grp.kv_heads());
    }
    const uint32_t act_bytes = static_cast<uint32_t>(m_.act_bits / 8);
    uint64_t qkv_per_batch = 1;
    for (std::size_t j = 0; j < plan_.groups.size(); ++j) {
      const auto b = cu_blocks(plan_.wqkv[j], act_bytes, plan_.groups[j].first_cu, plan_.groups[j].num_cus);
      qkv_per_batch = std::max<uint64_t>(qkv_per_batch, std::accumulate(b.begin(), b.end(), uint64_t(0)));
    }
    const uint64_t av_per_batch = std::max<uint64_t>(1, uint64_t(q) * hd * max_kvh * 4);
    const uint64_t slice_budget = sys_.core.net_buffer / 4;
    const uint32_t bs = static_cast<uint32_t>(
        std::clamp<uint64_t>(slice_budget / std::max(av_per_batch, qkv_per_batch), 1, B_));
    std::vector<uint32_t> slices;
    for (uint32_t b = 0; b < B_; b += bs) slices.push_back(std::min(bs, B_ - b));
    const bool split_qkv = slices.size() > 1;
    const uint16_t k_split = split_qkv ? kernel(L + "qkv.split", arch::KernelKind::VOP, l) : 0;

    // q/k/v projection. The group gather runs per batch slice.
    std::vector<std::vector<Region>> qkv_rest(plan_.groups.size());
    for (std::size_t j = 0; j < plan_.groups.size(); ++j)
      qkv_rest[j] = linear(plan_.wqkv[j], k_qkv, l, x_coll, true, B_, 1.0, arch::KernelKind::Linear);
    auto gather_qkv = [&](std::size_t j, uint32_t done, uint32_t n) {
      const auto& grp = plan_.groups[j];
      const auto& lp = plan_.wqkv[j];
      const uint32_t left = B_ - done - n;
      const uint32_t c = collective(isa::CollectiveKind::Broadcast, grp.first_cu, grp.num_cus,
                                    cu_blocks(lp, uint64_t(n) * act_bytes, grp.first_cu, grp.num_cus), true,
                                    L + "qkv");
      for (std::size_t i = 0; i < lp.shards.size(); ++i) {
        const uint32_t core = lp.first_core + uint32_t(i);
        const uint64_t cols = lp.shards[i].cols;
        Region& rest = qkv_rest[j][i];
        Region src = rest;
        if (split_qkv && rest.length) {
          src = vop(core, k_split, l, isa::VopKind::Residual, rest, left == 0, {}, false, cols * n, 1,
                    cols * n * act_bytes, L + "qkv.split");
          if (left)
            rest = vop(core, k_split, l, isa::VopKind::Residual, rest, true, {}, false, cols * left, 1,
                       cols * left * act_bytes, L + "qkv.rest");
        }
        send(core, c, src, lp.shards[i].row_group_index == 0 ? src.length : 0, split_qkv ? k_split : k_qkv, l);
      }
      return c;
    };

    // Head outputs: every group core contributes a slice of rows to wo's input.
    std::vector<uint64_t> slice_rows(C_, 0);
    for (const auto& grp : plan_.groups) {
      const uint32_t n = grp.num_cus * cpc_;
      const uint64_t rows = uint64_t(grp.kv_heads()) * q * hd;
      for (uint32_t i = 0; i < n; ++i) {
        const uint32_t core = grp.first_cu * cpc_ + i;
        slice_rows[core] = rows / n + (i < rows % n ? 1 : 0);
        attn_rows_blocks[core / cpc_] += slice_rows[core] * rb_;
      }
    }

    // Attention: KV sharded by sequence over the group's cores.
    std::vector<Region> attn(C_);
    for (std::size_t j = 0; j < plan_.groups.size(); ++j) {
      const auto& grp = plan_.groups[j];
      const uint32_t n = grp.num_cus * cpc_;
      auto member_blocks = [&](uint64_t per_cu) { return std::vector<uint64_t>(grp.num_cus, per_cu); };
      uint32_t done = 0;
      for (std::size_t s = 0; s < slices.size(); ++s) {
        const uint32_t units = grp.kv_heads() * slices[s];
        const uint64_t partial = uint64_t(q) * units * 4;
        const uint64_t av_partial = uint64_t(q) * hd * units * 4;
        std::vector<Region> scores(n), probs(n);
        const uint32_t c_qkv = gather_qkv(j, done, slices[s]);

        const uint32_t c_max = collective(isa::CollectiveKind::Max, grp.first_cu, grp.num_cus,
                                          member_blocks(partial), true, L + "max");
        for (uint32_t i = 0; i < n; ++i) {
          const uint32_t core = grp.first_cu * cpc_ + i;
          const uint64_t pos = seq / n + (i < seq % n ? 1 : 0);
          const uint64_t kbytes = static_cast<uint64_t>(pos * hd * units * m_.kv_bits / 8);
          VmmArgs a;
          a.mode = isa::VmmMode::AttnScore;
          a.weights = dma(core, k_qk, l, kbytes);
          a.act = ctx_[core].window(c_qkv);
          a.act_coll = c_qkv;
          a.dims = {hd, static_cast<uint32_t>(pos), units};
          a.qvecs = static_cast<uint16_t>(q);
          a.out_bytes = pos * q * units * 2;
          scores[i] = vmm(core, k_qk, l, a, L + "qk.scores");
          if (s == 0) prog_.kernels[k_qk].cores += 1;
          Region pmax = vop(core, k_max, l, isa::VopKind::Max, scores[i], false, {}, false, pos * q * units, 1,
                            partial, L + "max.partial");
          send(core, c_max, pmax, i % cpc_ == 0 ? partial : 0, k_max, l);
        }
        const uint32_t c_sum = collective(isa::CollectiveKind::ExpSum, grp.first_cu, grp.num_cus,
                                          member_blocks(partial), true, L + "expsum");
        for (uint32_t i = 0; i < n; ++i) {
          const uint32_t core = grp.first_cu * cpc_ + i;
          const uint64_t pos = seq / n + (i < seq % n ? 1 : 0);
          probs[i] = vop(core, k_exp, l, isa::VopKind::Exp, scores[i], true, ctx_[core].window(c_max), true,
                         pos * q * units, 4, pos * q * units * 2, L + "exp.probs");
          Region psum = vop(core, k_sum, l, isa::VopKind::Exp, probs[i], false, {}, false, pos * q * units, 1,
                            partial, L + "expsum.partial");
          send(core, c_sum, psum, i % cpc_ == 0 ? partial : 0, k_sum, l);
        }
        const uint32_t c_av = collective(isa::CollectiveKind::Reduce, grp.first_cu, grp.num_cus,
                                         member_blocks(av_partial), true, L + "av", false, true);
        for (uint32_t i = 0; i < n; ++i) {
          const uint32_t core = grp.first_cu * cpc_ + i;
          const uint64_t pos = seq / n + (i < seq % n ? 1 : 0);
          const uint64_t vbytes = static_cast<uint64_t>(pos * hd * units * m_.kv_bits / 8);
          VmmArgs a;
          a.mode = isa::VmmMode::AttnValue;
          a.weights = dma(core, k_av, l, vbytes);
          a.act = probs[i];
          a.act_coll = c_sum;
          a.dims = {static_cast<uint32_t>(pos), hd, units};
          a.qvecs = static_cast<uint16_t>(q);
          a.out_bytes = av_partial;
          Region pav = vmm(core, k_av, l, a, L + "av.partial");
          if (s == 0) prog_.kernels[k_av].cores += 1;
          send(core, c_av, pav, i % cpc_ == 0 ? av_partial : 0, k_av, l);
        }
        done += slices[s];
        for (uint32_t i = 0; i < n; ++i) {
          const uint32_t core = grp.first_cu * cpc_ + i;
          Region out = vop(core, k_comb, l, isa::VopKind::Combine, ctx_[core].window(c_av), true,
                           ctx_[core].window(c_sum), true, ctx_[core].window(c_av).length / 4, 2,
                           slice_rows[core] * slices[s] * act_bytes, L + "attn.slice");
          if (s == 0) {
            attn[core] = out;
          } else {
            attn[core] = vop(core, k_comb, l, isa::VopKind::Residual, attn[core], true, out, true,
                             slice_rows[core] * done, 1, slice_rows[core] * done * act_bytes, L + "attn.slice");
          }
        }
      }
    }
    const uint32_t c_attn =
        collective(isa::CollectiveKind::Broadcast, 0, P_, attn_rows_blocks, false, L + "attn_out");
    for (uint32_t core = 0; core < C_; ++core)
      send(core, c_attn, attn[core], attn[core].length, k_comb, l);

    // Output projection and its all-gather.
    auto wo = linear(plan_.wo, k_wo, l, c_attn, true, B_, 1.0, arch::KernelKind::Linear);
    if (m_.is_moe_layer(l)) return moe_ffn(l, wo, k_wo);
    const uint32_t c_h =
        collective(isa::CollectiveKind::Broadcast, 0, P_, cu_blocks(plan_.wo, rb_, 0, P_), false, L + "h");
    for (uint32_t c = 0; c < C_; ++c)
      send(c, c_h, wo[c], plan_.wo.shards[c].row_group_index == 0 ? wo[c].length : 0, k_wo, l);
    return dense_ffn(l, c_h);
  }

  uint32_t ffn_block(const std::string& L, uint32_t l, const LinearPlan& gu, const LinearPlan& dn, uint32_t c_h,
                     bool dec_h, uint32_t batch, arch::KernelKind kind, std::vector<Region>& out,
                     const std::string& tag) {
    const uint16_t k_gu = kernel(L + tag + "gate_up", kind, l);
    const uint16_t k_act = kernel(L + tag + "silu", arch::KernelKind::VOP, l);
    const uint16_t k_dn = kernel(L + tag + "down", kind, l);
    auto gu_out = linear(gu, k_gu, l, c_h, dec_h, batch, 2.0, kind);
    const uint64_t rbb = static_cast<uint64_t>(batch * m_.act_bits / 8.0);
    const uint32_t c_ff =
        collective(isa::CollectiveKind::Broadcast, 0, P_, cu_blocks(gu, rbb, 0, P_), false, L + tag + "ff");
    for (uint32_t c = 0; c < C_; ++c) {
      const auto& s = gu.shards[c];
      const uint64_t bytes = gu_out[c].length ? uint64_t(s.cols) * rbb : 0;
      Region a = vop(c, k_act, l, isa::VopKind::Silu, gu_out[c], true, {}, false, uint64_t(s.cols) * batch, 4,
                     bytes, L + tag + "silu");
      send(c, c_ff, a, s.row_group_index == 0 ? a.length : 0, k_act, l);
    }
    out = linear(dn, k_dn, l, c_ff, true, batch, 1.0, kind);
    return k_dn;
  }

  uint32_t dense_ffn(uint32_t l, uint32_t c_h) {
    const std::string L = "L" + std::to_string(l) + ".";
    std::vector<Region> dn;
    const uint16_t k_dn = static_cast<uint16_t>(
        ffn_block(L, l, plan_.gate_up, plan_.down, c_h, true, B_, arch::KernelKind::Linear, dn, ""));
    const uint32_t x = residual_collective(false, l + 1);
    for (uint32_t c = 0; c < C_; ++c)
      send(c, x, dn[c], plan_.down.shards[c].row_group_index == 0 ? dn[c].length : 0, k_dn, l);
    return x;
  }

  /// Every branch re-reads the layer input, so it must sit whole in the
  /// receive buffer. Large batches run as token slices that fit half of it.
  uint32_t moe_ffn(uint32_t l, const std::vector<Region>& wo, uint16_t k_wo) {
    const std::string L = "L" + std::to_string(l) + ".";
    const auto routes = route_tokens(m_, l, opt_.workload);
    const uint64_t act_bytes = std::max<uint64_t>(1, static_cast<uint64_t>(m_.act_bits / 8));
    const uint64_t per_token = uint64_t(m_.hidden) * act_bytes;
    const uint32_t bs = static_cast<uint32_t>(
        std::clamp<uint64_t>(sys_.core.net_buffer / 2 / std::max<uint64_t>(1, per_token), 1, B_));
    const uint16_t k_split = bs < B_ ? kernel(L + "moe.split", arch::KernelKind::VOP, l) : 0;

    // Each slice copies its tokens out of the remaining input and keeps the
    // rest, so no scratch region outlives one slice.
    std::vector<Region> rest = wo, acc(C_);
    uint16_t k_out = 0;
    for (uint32_t b0 = 0; b0 < B_; b0 += bs) {
      const uint32_t n = std::min(bs, B_ - b0);
      const uint32_t left = B_ - b0 - n;
      const uint64_t rbs = uint64_t(n) * act_bytes;
      const uint32_t c_h = collective(isa::CollectiveKind::Broadcast, 0, P_, cu_blocks(plan_.wo, rbs, 0, P_), true,
                                      L + "h");
      for (uint32_t c = 0; c < C_; ++c) {
        const auto& s = plan_.wo.shards[c];
        Region src = rest[c];
        if (bs < B_ && rest[c].length) {
          src = vop(c, k_split, l, isa::VopKind::Residual, rest[c], left == 0, {}, false, uint64_t(s.cols) * n, 1,
                    uint64_t(s.cols) * rbs, L + "moe.split");
          if (left)
            rest[c] = vop(c, k_split, l, isa::VopKind::Residual, rest[c], true, {}, false, uint64_t(s.cols) * left,
                          1, uint64_t(s.cols) * left * act_bytes, L + "moe.rest");
        }
        send(c, c_h, src, s.row_group_index == 0 ? src.length : 0, bs < B_ ? k_split : k_wo, l);
      }
      std::vector<std::vector<uint32_t>> sr(routes.begin() + b0, routes.begin() + b0 + n);
      acc = moe_slice(L, l, c_h, sr, n, b0, acc, k_out);
    }
    const uint32_t x = residual_collective(false, l + 1);
    for (uint32_t c = 0; c < C_; ++c)
      send(c, x, acc[c], residual_plan().shards[c].row_group_index == 0 ? acc[c].length : 0, k_out, l);
    return x;
  }

  /// MoE over `batch` tokens starting at `done`. The result carries every
  /// token so far: `prev` is folded into the first combine.
  std::vector<Region> moe_slice(const std::string& L, uint32_t l, uint32_t c_h,
                                const std::vector<std::vector<uint32_t>>& routes, uint32_t batch, uint32_t done,
                                std::vector<Region> prev, uint16_t& k_last) {
    std::vector<uint32_t> per_expert(m_.experts, 0);
    for (const auto& r : routes)
      for (uint32_t e : r) ++per_expert[e];
    const uint64_t rbb = static_cast<uint64_t>(batch * m_.act_bits / 8.0);

    const uint16_t k_router = kernel(L + "router", arch::KernelKind::Linear, l);
    auto rt = linear(plan_.router, k_router, l, c_h, false, batch, 1.0, arch::KernelKind::Linear);
    const uint32_t c_rt =
        collective(isa::CollectiveKind::Max, 0, P_, cu_blocks(plan_.router, rbb, 0, P_), true, L + "router");
    for (uint32_t c = 0; c < C_; ++c)
      send(c, c_rt, rt[c], plan_.router.shards[c].row_group_index == 0 ? rt[c].length : 0, k_router, l);
    const uint16_t k_topk = kernel(L + "topk", arch::KernelKind::VOP, l);
    for (uint32_t c = 0; c < C_; ++c)
      vop(c, k_topk, l, isa::VopKind::TopK, ctx_[c].window(c_rt), true, {}, false, uint64_t(m_.experts) * batch, 2,
          0, L + "topk");

    struct Branch {
      const LinearPlan* gu;
      const LinearPlan* dn;
      uint32_t batch;
      std::string tag;
    };
    std::vector<Branch> branches;
    if (m_.shared_experts > 0) branches.push_back({&plan_.shared_gate_up, &plan_.shared_down, batch, "shared."});
    for (uint32_t e = 0; e < m_.experts; ++e)
      if (per_expert[e] > 0)
        branches.push_back({&plan_.expert_gate_up, &plan_.expert_down, per_expert[e], "e" + std::to_string(e) + "."});

    const uint64_t rbt = static_cast<uint64_t>((done + batch) * m_.act_bits / 8.0);
    std::vector<Region> acc = std::move(prev);
    for (std::size_t b = 0; b < branches.size(); ++b) {
      const auto& br = branches[b];
      std::vector<Region> dn;
      const bool last = b + 1 == branches.size();
      const uint16_t k_dn = static_cast<uint16_t>(
          ffn_block(L, l, *br.gu, *br.dn, c_h, last, br.batch, arch::KernelKind::MoE, dn, br.tag));
      if (b == 0 && done == 0) {
        acc = dn;
        k_last = k_dn;
        continue;
      }
      const uint16_t k_mix = kernel(L + br.tag + "combine", arch::KernelKind::VOP, l);
      for (uint32_t c = 0; c < C_; ++c) {
        const uint64_t cols = plan_.expert_down.shards[c].cols;
        const uint64_t out = std::max({acc[c].length, cols * rbb, cols * rbt});
        acc[c] = vop(c, k_mix, l, isa::VopKind::Residual, dn[c], true, acc[c], true, cols * batch, 2,
                     (acc[c].length || dn[c].length) ? out : 0, L + "moe.acc");
      }
      k_last = k_mix;
    }
    return acc;
  }

  void head(uint32_t S, uint32_t x_coll) {
    const uint16_t k_lm = kernel("head.lm", arch::KernelKind::Linear, S);
    const uint16_t k_arg = kernel("head.argmax", arch::KernelKind::VOP, S);
    auto logits = linear(plan_.lm_head, k_lm, S, x_coll, true, B_, 1.0, arch::KernelKind::Linear);
    const uint64_t partial = uint64_t(B_) * 8;
    const uint32_t c_arg = collective(isa::CollectiveKind::Max, 0, P_, std::vector<uint64_t>(P_, partial), true,
                                      "head.argmax");
    for (uint32_t c = 0; c < C_; ++c) {
      const auto& s = plan_.lm_head.shards[c];
      Region best = vop(c, k_arg, S, isa::VopKind::Argmax, logits[c], true, {}, false, uint64_t(s.cols) * B_, 1,
                        partial, "head.partial");
      send(c, c_arg, best, c % cpc_ == 0 ? partial : 0, k_arg, S);
    }
    for (uint32_t c = 0; c < C_; ++c) {
      vop(c, k_arg, S, isa::VopKind::Argmax, ctx_[c].window(c_arg), true, {}, false, uint64_t(P_) * B_, 1, 0,
          "head.final");
      Instruction irq = base(ctx_[c], Opcode::Interrupt, k_arg, S);
      irq.flags.check_valid = false;
      irq.token = 0;
      ctx_[c].compute.push_back(irq);
    }
  }

  // Network stream: receive windows are armed `arm_lookahead` collectives
  // ahead of this core's own contributions.
  void finish() {
    prog_.cores.resize(C_);
    for (uint32_t core = 0; core < C_; ++core) {
      auto& c = ctx_[core];
      auto& out = prog_.cores[core];
      out.core_id = core;
      out.cu_id = core / cpc_;
      out.memory = std::move(c.memory);
      out.compute = std::move(c.compute);
      std::size_t armed = 0;
      auto arm_until = [&](std::size_t upto) {
        while (armed < c.recv.size() && armed < upto) {
          const auto& [id, window] = c.recv[armed];
          const auto& d = prog_.collectives[id];
          auto seg = ring::make_segment(d.first, d.count, P_);
          const uint32_t mi = out.cu_id - d.first;
          const bool forwards = seg.wrap ? d.count > 2 : (mi > 0 && mi + 1 < d.count);
          Instruction in = base(c, Opcode::NetForward, 0, 0);
          in.collective = id;
          in.dst = window;
          in.bytes = window.length;
          in.flags.valid_count = ValidCount(window.length ? 1 + (forwards ? 1 : 0) : 0);
          in.flags.decrement_on_read = forwards && window.length;
          out.network.push_back(in);
          ++armed;
        }
      };
      auto index_of = [&](uint32_t coll) {
        for (std::size_t i = 0; i < c.recv.size(); ++i)
          if (c.recv[i].first == coll) return i;
        return c.recv.size();
      };
      for (const auto& s : c.sends) {
        const std::size_t i = index_of(s.coll);
        arm_until(i + 1 + opt_.arm_lookahead);
        Instruction in = base(c, Opcode::NetSend, s.kernel, s.layer);
        in.collective = s.coll;
        in.src = s.src;
        in.bytes = s.bytes;
        in.flags.decrement_on_read = s.src.length > 0;
        out.network.push_back(in);
      }
      arm_until(c.recv.size());
    }
    for (auto& k : prog_.kernels)
      if (k.cores == 0) k.cores = C_;
  }

  const ModelSpec& m_;
  const ShardPlan& plan_;
  const arch::SystemConfig& sys_;
  LowerOptions opt_;
  isa::Program prog_;
  std::vector<CoreCtx> ctx_;
  uint32_t P_ = 0, cpc_ = 0, C_ = 0, B_ = 1;
  uint64_t rb_ = 2;
  std::unordered_map<std::string, uint16_t> kernel_ids_;
  std::unordered_set<uint64_t> counted_;
  double bpw_ = 0.53125;
};

}  // namespace

isa::Program lower(const ModelSpec& m, const ShardPlan& plan, const arch::SystemConfig& sys,
                   const LowerOptions& opt) {
  check_model(m);
  return Lowerer(m, plan, sys, opt).run();
}

}  // namespace rpu::compiler
