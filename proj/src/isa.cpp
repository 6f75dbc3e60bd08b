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

#include "rpu/isa.hpp"

#include <cstring>
#include <map>
#include <set>
#include <sstream>

#include "rpu/common.hpp"

namespace rpu::isa {

const char* to_string(Opcode op) {
  switch (op) {
    case Opcode::MemDMA: return "MemDMA";
    case Opcode::ComputeVMM: return "ComputeVMM";
    case Opcode::ComputeVOP: return "ComputeVOP";
    case Opcode::NetSend: return "NetSend";
    case Opcode::NetForward: return "NetForward";
    case Opcode::Interrupt: return "Interrupt";
  }
  return "?";
}

const char* to_string(Space s) {
  switch (s) {
    case Space::Memory: return "mem";
    case Space::MemBuffer: return "mbuf";
    case Space::NetBuffer: return "nbuf";
    case Space::Scratch: return "scr";
  }
  return "?";
}

const char* to_string(CollectiveKind k) {
  switch (k) {
    case CollectiveKind::Broadcast: return "broadcast";
    case CollectiveKind::Reduce: return "reduce";
    case CollectiveKind::Max: return "max";
    case CollectiveKind::ExpSum: return "expsum";
  }
  return "?";
}

const char* to_string(StreamKind s) {
  switch (s) {
    case StreamKind::Memory: return "memory";
    case StreamKind::Compute: return "compute";
    case StreamKind::Network: return "network";
  }
  return "?";
}

ValidCount::ValidCount(int v) {
  if (v < 0 || v > 3) throw Error("isa", "valid_count " + std::to_string(v) + " does not fit in 2 bits");
  v_ = static_cast<uint8_t>(v);
}

double Dtype::bits_per_element() const {
  if (block <= 1) return bits;
  return bits + 8.0 / block;
}

const std::vector<Instruction>& CoreProgram::stream(StreamKind k) const {
  switch (k) {
    case StreamKind::Memory: return memory;
    case StreamKind::Compute: return compute;
    default: return network;
  }
}

std::vector<Instruction>& CoreProgram::stream(StreamKind k) {
  switch (k) {
    case StreamKind::Memory: return memory;
    case StreamKind::Compute: return compute;
    default: return network;
  }
}

uint32_t BufferMap::entries(Space s) const {
  switch (s) {
    case Space::MemBuffer: return mem_entries;
    case Space::NetBuffer: return net_entries;
    case Space::Scratch: return scratch_entries;
    default: return 0;
  }
}

uint64_t CollectiveDesc::piece(uint32_t src, uint32_t dst) const {
  const uint64_t b = block_bytes.at(src);
  if (!scatter) return b;
  return b * (dst + 1) / count - b * dst / count;
}

uint64_t CollectiveDesc::window_bytes(uint32_t m) const {
  uint64_t total = 0;
  for (uint32_t s = 0; s < block_bytes.size(); ++s) total += piece(s, m);
  return total;
}

std::size_t Program::instruction_count() const {
  std::size_t n = 0;
  for (const auto& c : cores) n += c.memory.size() + c.compute.size() + c.network.size();
  return n;
}

// ---------------------------------------------------------------------------
// Binary container

namespace {

class Writer {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) { le(v, 2); }
  void u32(uint32_t v) { le(v, 4); }
  void u64(uint64_t v) { le(v, 8); }
  void f64(double v) {
    uint64_t b;
    std::memcpy(&b, &v, 8);
    u64(b);
  }
  void str(const std::string& s) {
    if (s.size() > 0xffff) throw Error("isa", "string too long to encode");
    u16(static_cast<uint16_t>(s.size()));
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  std::vector<uint8_t> take() { return std::move(buf_); }

 private:
  void le(uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  std::vector<uint8_t> buf_;
};

class Reader {
 public:
  explicit Reader(std::span<const uint8_t> b) : b_(b) {}
  uint8_t u8() { return static_cast<uint8_t>(le(1)); }
  uint16_t u16() { return static_cast<uint16_t>(le(2)); }
  uint32_t u32() { return static_cast<uint32_t>(le(4)); }
  uint64_t u64() { return le(8); }
  double f64() {
    uint64_t b = u64();
    double v;
    std::memcpy(&v, &b, 8);
    return v;
  }
  std::string str() {
    std::size_t n = u16();
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }
  [[noreturn]] void fail(const std::string& what, std::size_t at) const {
    throw Error("isa", "decode error at offset " + std::to_string(at) + ": " + what);
  }
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) fail("truncated input", pos_);
  }

 private:
  uint64_t le(int n) {
    need(n);
    uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  std::span<const uint8_t> b_;
  std::size_t pos_ = 0;
};

void put_region(Writer& w, const Region& r) {
  w.u8(static_cast<uint8_t>(r.space));
  w.u64(r.offset);
  w.u64(r.length);
}

Region get_region(Reader& r) {
  Region g;
  std::size_t at = r.pos();
  uint8_t s = r.u8();
  if (s >= kSpaceCount) r.fail("unknown address space " + std::to_string(s), at);
  g.space = static_cast<Space>(s);
  g.offset = r.u64();
  g.length = r.u64();
  return g;
}

void put_instruction(Writer& w, const Instruction& in) {
  w.u8(static_cast<uint8_t>(in.op));
  w.u8(in.sub_kind);
  uint8_t flags = (in.flags.check_valid ? 1 : 0) | (in.flags.decrement_on_read ? 2 : 0) |
                  (in.flags.decrement_aux ? 4 : 0) |
                  static_cast<uint8_t>(in.flags.valid_count.value() << 3);
  w.u8(flags);
  w.u32(in.id);
  w.u16(in.layer);
  w.u16(in.kernel);
  put_region(w, in.src);
  put_region(w, in.aux);
  put_region(w, in.dst);
  w.u64(in.bytes);
  w.u32(in.dims.rows);
  w.u32(in.dims.cols);
  w.u32(in.dims.batch);
  w.u8(in.dtype.format);
  w.u8(in.dtype.bits);
  w.u16(in.dtype.block);
  w.u32(in.loops);
  w.u32(in.collective);
  w.u16(in.row_groups);
  w.u16(in.row_group_index);
  w.u16(in.qvecs);
  w.u16(in.ops_per_element);
  w.u32(in.token);
}

Instruction get_instruction(Reader& r) {
  Instruction in;
  std::size_t at = r.pos();
  uint8_t op = r.u8();
  if (op >= kOpcodeCount) r.fail("unknown opcode " + std::to_string(op), at);
  in.op = static_cast<Opcode>(op);
  in.sub_kind = r.u8();
  std::size_t fat = r.pos();
  uint8_t flags = r.u8();
  if (flags & 0xe0) r.fail("reserved flag bits set", fat);
  in.flags.check_valid = flags & 1;
  in.flags.decrement_on_read = flags & 2;
  in.flags.decrement_aux = flags & 4;
  in.flags.valid_count = ValidCount((flags >> 3) & 3);
  in.id = r.u32();
  in.layer = r.u16();
  in.kernel = r.u16();
  in.src = get_region(r);
  in.aux = get_region(r);
  in.dst = get_region(r);
  in.bytes = r.u64();
  in.dims.rows = r.u32();
  in.dims.cols = r.u32();
  in.dims.batch = r.u32();
  in.dtype.format = r.u8();
  in.dtype.bits = r.u8();
  in.dtype.block = r.u16();
  in.loops = r.u32();
  in.collective = r.u32();
  in.row_groups = r.u16();
  in.row_group_index = r.u16();
  in.qvecs = r.u16();
  in.ops_per_element = r.u16();
  in.token = r.u32();
  return in;
}

}  // namespace

std::vector<uint8_t> encode(const Program& p) {
  Writer w;
  for (char c : kMagic) w.u8(static_cast<uint8_t>(c));
  w.u16(kFormatVersion);
  w.u32(static_cast<uint32_t>(p.cores.size()));
  w.u32(p.num_cus);
  w.u32(p.cores_per_cu);
  w.u32(p.model_layers);
  w.u32(p.simulated_layers);
  w.u32(p.layer_period);

  const BufferMap& b = p.buffers;
  w.u32(b.entry_bytes);
  w.u32(b.mem_entries);
  w.u32(b.net_entries);
  w.u32(b.scratch_entries);
  w.u64(b.channel_bytes);
  w.u32(static_cast<uint32_t>(b.regions.size()));
  for (const auto& nr : b.regions) {
    w.str(nr.name);
    put_region(w, nr.region);
    w.u8(nr.aliased ? 1 : 0);
  }

  w.u32(static_cast<uint32_t>(p.kernels.size()));
  for (const auto& k : p.kernels) {
    w.str(k.name);
    w.u8(k.kind);
    w.u16(k.layer);
    w.f64(k.ops);
    w.f64(k.bytes_from_memory);
    w.f64(k.bytes_on_network);
    w.u32(k.cores);
  }

  w.u32(static_cast<uint32_t>(p.collectives.size()));
  for (const auto& c : p.collectives) {
    w.u32(c.id);
    w.u8(static_cast<uint8_t>(c.kind));
    w.u32(c.first);
    w.u32(c.count);
    w.u8(static_cast<uint8_t>((c.preloaded ? 1 : 0) | (c.scatter ? 2 : 0)));
    w.u32(static_cast<uint32_t>(c.block_bytes.size()));
    for (uint64_t v : c.block_bytes) w.u64(v);
  }

  for (const auto& c : p.cores) {
    w.u32(c.core_id);
    w.u32(c.cu_id);
    for (const auto* s : {&c.memory, &c.compute, &c.network}) {
      w.u32(static_cast<uint32_t>(s->size()));
      for (const auto& in : *s) put_instruction(w, in);
    }
  }
  return w.take();
}

Program decode(std::span<const uint8_t> bytes) {
  Reader r(bytes);
  Program p;
  r.need(4);
  for (int i = 0; i < 4; ++i) {
    if (r.u8() != static_cast<uint8_t>(kMagic[i])) r.fail("bad magic", 0);
  }
  std::size_t vat = r.pos();
  uint16_t version = r.u16();
  if (version != kFormatVersion) r.fail("unsupported version " + std::to_string(version), vat);
  uint32_t ncores = r.u32();
  p.num_cus = r.u32();
  p.cores_per_cu = r.u32();
  p.model_layers = r.u32();
  p.simulated_layers = r.u32();
  p.layer_period = r.u32();

  p.buffers.entry_bytes = r.u32();
  p.buffers.mem_entries = r.u32();
  p.buffers.net_entries = r.u32();
  p.buffers.scratch_entries = r.u32();
  p.buffers.channel_bytes = r.u64();
  uint32_t nreg = r.u32();
  for (uint32_t i = 0; i < nreg; ++i) {
    NamedRegion nr;
    nr.name = r.str();
    nr.region = get_region(r);
    nr.aliased = r.u8() != 0;
    p.buffers.regions.push_back(std::move(nr));
  }

  uint32_t nk = r.u32();
  for (uint32_t i = 0; i < nk; ++i) {
    KernelInfo k;
    k.name = r.str();
    k.kind = r.u8();
    k.layer = r.u16();
    k.ops = r.f64();
    k.bytes_from_memory = r.f64();
    k.bytes_on_network = r.f64();
    k.cores = r.u32();
    p.kernels.push_back(std::move(k));
  }

  uint32_t nc = r.u32();
  for (uint32_t i = 0; i < nc; ++i) {
    CollectiveDesc c;
    c.id = r.u32();
    std::size_t kat = r.pos();
    uint8_t kind = r.u8();
    if (kind > static_cast<uint8_t>(CollectiveKind::ExpSum)) r.fail("unknown collective kind", kat);
    c.kind = static_cast<CollectiveKind>(kind);
    c.first = r.u32();
    c.count = r.u32();
    std::size_t fat = r.pos();
    const uint8_t cflags = r.u8();
    if (cflags & ~3u) r.fail("reserved collective flag bits set", fat);
    c.preloaded = cflags & 1;
    c.scatter = cflags & 2;
    std::size_t bat = r.pos();
    uint32_t nb = r.u32();
    if (nb != c.count) r.fail("collective block table does not match member count", bat);
    for (uint32_t j = 0; j < nb; ++j) c.block_bytes.push_back(r.u64());
    p.collectives.push_back(std::move(c));
  }

  p.cores.reserve(ncores);
  for (uint32_t i = 0; i < ncores; ++i) {
    CoreProgram c;
    c.core_id = r.u32();
    c.cu_id = r.u32();
    for (auto* s : {&c.memory, &c.compute, &c.network}) {
      std::size_t cat = r.pos();
      uint32_t n = r.u32();
      if (static_cast<uint64_t>(n) * 90 > bytes.size()) r.fail("instruction count exceeds input size", cat);
      s->reserve(n);
      for (uint32_t j = 0; j < n; ++j) s->push_back(get_instruction(r));
    }
    p.cores.push_back(std::move(c));
  }
  if (!r.done()) r.fail("trailing bytes after last core", r.pos());
  return p;
}

uint64_t stream_hash(const Program& p) {
  auto bytes = encode(p);
  return fnv1a(bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------
// Disassembly

namespace {

std::string region_str(const Region& r) {
  std::ostringstream os;
  os << to_string(r.space) << "[0x" << std::hex << r.offset << std::dec << "+" << r.length << "]";
  return os.str();
}

}  // namespace

std::string disassemble(const Instruction& in) {
  std::ostringstream os;
  os << "#" << in.id << " " << to_string(in.op) << " k" << in.kernel << " L" << in.layer;
  switch (in.op) {
    case Opcode::MemDMA:
      os << " " << region_str(in.src) << " -> " << region_str(in.dst);
      break;
    case Opcode::ComputeVMM:
      os << " mode=" << int(in.sub_kind) << " w=" << region_str(in.src) << " x=" << region_str(in.aux)
         << " y=" << region_str(in.dst) << " " << in.dims.rows << "x" << in.dims.cols << "xB"
         << in.dims.batch;
      if (in.row_groups > 1) os << " rg=" << in.row_group_index << "/" << in.row_groups;
      if (in.qvecs > 1) os << " q=" << in.qvecs;
      break;
    case Opcode::ComputeVOP:
      os << " kind=" << int(in.sub_kind) << " " << region_str(in.src) << " -> " << region_str(in.dst)
         << " elems=" << uint64_t(in.dims.rows) * in.dims.cols * in.dims.batch;
      break;
    case Opcode::NetSend:
      os << " c" << in.collective << " " << region_str(in.src);
      break;
    case Opcode::NetForward:
      os << " c" << in.collective << " -> " << region_str(in.dst);
      break;
    case Opcode::Interrupt:
      os << " token=" << in.token;
      break;
  }
  os << " bytes=" << in.bytes << " vc=" << int(in.flags.valid_count.value());
  if (in.flags.check_valid) os << " chk";
  if (in.flags.decrement_on_read) os << " dec";
  if (in.flags.decrement_aux) os << " decx";
  if (in.loops != 1) os << " loops=" << in.loops;
  return os.str();
}

std::string disassemble(const Program& p, std::size_t max_cores) {
  std::ostringstream os;
  os << "; program cus=" << p.num_cus << " cores/cu=" << p.cores_per_cu << " layers=" << p.simulated_layers
     << "/" << p.model_layers << " kernels=" << p.kernels.size() << " collectives=" << p.collectives.size()
     << "\n";
  for (std::size_t i = 0; i < p.cores.size() && i < max_cores; ++i) {
    const auto& c = p.cores[i];
    os << "core " << c.core_id << " (cu " << c.cu_id << ")\n";
    for (auto k : {StreamKind::Memory, StreamKind::Compute, StreamKind::Network}) {
      os << "  ." << to_string(k) << "\n";
      for (const auto& in : c.stream(k)) os << "    " << disassemble(in) << "\n";
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Static validation

namespace {

struct EntryBook {
  std::vector<int64_t> produced;
  std::vector<int64_t> consumed;
  std::vector<std::string> first_reader;
};

class Validator {
 public:
  Validator(const Program& p, const BufferMap& b) : p_(p), b_(b) {}

  ProgramReport run() {
    check_header();
    std::map<uint32_t, const CollectiveDesc*> colls;
    for (const auto& c : p_.collectives) {
      if (!colls.emplace(c.id, &c).second) issue("collective", "duplicate collective id " + std::to_string(c.id));
      if (c.count == 0 || c.first + c.count > p_.num_cus)
        issue("collective", "collective " + std::to_string(c.id) + " segment exceeds ring");
    }
    // per collective: CUs that send / arm
    std::map<uint32_t, std::map<uint32_t, int>> sends, arms;
    for (const auto& core : p_.cores) {
      books_.clear();
      for (Space s : {Space::MemBuffer, Space::NetBuffer, Space::Scratch}) {
        auto& bk = books_[static_cast<int>(s)];
        bk.produced.assign(b_.entries(s), 0);
        bk.consumed.assign(b_.entries(s), 0);
        bk.first_reader.assign(b_.entries(s), {});
      }
      std::set<uint32_t> ids;
      std::map<uint16_t, std::set<uint32_t>> loops;
      for (auto k : {StreamKind::Memory, StreamKind::Compute, StreamKind::Network}) {
        for (const auto& in : core.stream(k)) {
          ++report_.checked_instructions;
          std::string where = "core " + std::to_string(core.core_id) + " " + to_string(k) + " #" +
                              std::to_string(in.id) + " " + to_string(in.op);
          if (!ids.insert(in.id).second) issue("ids", where + ": duplicate instruction id");
          if (!stream_accepts(k, in.op)) issue("stream", where + ": opcode not allowed in " + to_string(k) + " stream");
          if (in.loops == 0) issue("loops", where + ": zero loop count");
          if (in.op == Opcode::MemDMA || in.op == Opcode::ComputeVMM) loops[in.kernel].insert(in.loops);
          account(in, where);
          if (in.op == Opcode::NetSend || in.op == Opcode::NetForward) {
            auto it = colls.find(in.collective);
            if (it == colls.end()) {
              issue("collective", where + ": unknown collective " + std::to_string(in.collective));
              continue;
            }
            const auto* c = it->second;
            if (core.cu_id < c->first || core.cu_id >= c->first + c->count)
              issue("collective", where + ": cu " + std::to_string(core.cu_id) + " is not a member of collective " +
                                      std::to_string(c->id));
            if (in.op == Opcode::NetSend) ++sends[c->id][core.cu_id];
            if (in.op == Opcode::NetForward) {
              ++arms[c->id][core.cu_id];
              const uint64_t total = core.cu_id >= c->first && core.cu_id < c->first + c->count
                                         ? c->window_bytes(core.cu_id - c->first)
                                         : 0;
              if (in.dst.length != total)
                issue("collective", where + ": receive window " + std::to_string(in.dst.length) +
                                        " bytes does not match collective total " + std::to_string(total));
            }
          }
        }
      }
      for (const auto& [kernel, set] : loops)
        if (set.size() > 1)
          issue("loops", "core " + std::to_string(core.core_id) + " kernel " + std::to_string(kernel) +
                             ": memory and compute loop counts disagree");
      settle(core);
    }
    for (const auto& c : p_.collectives) {
      for (uint32_t cu = c.first; cu < c.first + c.count && cu < p_.num_cus; ++cu) {
        if (arms[c.id][cu] != static_cast<int>(p_.cores_per_cu))
          issue("collective", "collective " + std::to_string(c.id) + ": cu " + std::to_string(cu) + " armed by " +
                                  std::to_string(arms[c.id][cu]) + " of " + std::to_string(p_.cores_per_cu) +
                                  " cores");
        if (!c.preloaded && sends[c.id][cu] == 0)
          issue("collective", "collective " + std::to_string(c.id) + ": cu " + std::to_string(cu) +
                                  " never contributes its block");
      }
    }
    return std::move(report_);
  }

 private:
  void issue(const std::string& check, const std::string& detail) {
    if (report_.issues.size() < 200) report_.issues.push_back({check, detail});
  }

  void check_header() {
    if (p_.cores.size() != static_cast<std::size_t>(p_.num_cus) * p_.cores_per_cu)
      issue("header", "core count " + std::to_string(p_.cores.size()) + " != cus x cores_per_cu");
    if (b_.entry_bytes != kEntryBytes) issue("header", "entry granularity must be " + std::to_string(kEntryBytes));
    for (std::size_t i = 0; i < p_.cores.size(); ++i)
      if (p_.cores[i].core_id != i || p_.cores[i].cu_id != i / std::max<uint32_t>(1, p_.cores_per_cu))
        issue("header", "core " + std::to_string(i) + " has inconsistent ids");
  }

  static bool stream_accepts(StreamKind k, Opcode op) {
    switch (k) {
      case StreamKind::Memory: return op == Opcode::MemDMA;
      case StreamKind::Compute:
        return op == Opcode::ComputeVMM || op == Opcode::ComputeVOP || op == Opcode::Interrupt;
      case StreamKind::Network: return op == Opcode::NetSend || op == Opcode::NetForward;
    }
    return false;
  }

  bool bounds(const Region& r, const std::string& where, const char* role) {
    if (r.length == 0) return false;
    if (r.space == Space::Memory) {
      if (r.offset + r.length > b_.channel_bytes) {
        issue("bounds", where + ": " + role + " exceeds memory channel capacity");
        return false;
      }
      return false;
    }
    uint64_t size = static_cast<uint64_t>(b_.entries(r.space)) * b_.entry_bytes;
    if (size == 0 || r.offset >= size) {
      issue("bounds", where + ": " + role + " offset outside " + to_string(r.space));
      return false;
    }
    if (r.offset % b_.entry_bytes != 0) {
      issue("bounds", where + ": " + role + " is not entry aligned");
      return false;
    }
    return true;
  }

  template <typename F>
  void for_entries(const Region& r, uint64_t times, F&& f) {
    uint32_t n = b_.entries(r.space);
    uint64_t first = r.offset / b_.entry_bytes;
    uint64_t count = ceil_div(r.length, b_.entry_bytes);
    auto& bk = books_[static_cast<int>(r.space)];
    for (uint64_t i = 0; i < count; ++i) f(bk, static_cast<uint32_t>((first + i) % n), times);
  }

  void produce(const Region& r, int vc, uint64_t times) {
    for_entries(r, times, [&](EntryBook& bk, uint32_t e, uint64_t t) { bk.produced[e] += vc * int64_t(t); });
  }

  void consume(const Region& r, uint64_t times, const std::string& where) {
    for_entries(r, times, [&](EntryBook& bk, uint32_t e, uint64_t t) {
      bk.consumed[e] += int64_t(t);
      if (bk.first_reader[e].empty()) bk.first_reader[e] = where;
    });
  }

  void account(const Instruction& in, const std::string& where) {
    const uint64_t t = in.loops;
    const int vc = in.flags.valid_count.value();
    switch (in.op) {
      case Opcode::MemDMA:
        if (in.src.space != Space::Memory) issue("bounds", where + ": DMA source must be a memory channel");
        if (in.dst.space != Space::MemBuffer) issue("bounds", where + ": DMA target must be the memory buffer");
        bounds(in.src, where, "source");
        if (bounds(in.dst, where, "target")) produce(in.dst, vc, t);
        break;
      case Opcode::ComputeVMM:
      case Opcode::ComputeVOP:
        if (bounds(in.src, where, "input") && in.flags.decrement_on_read) consume(in.src, t, where);
        if (bounds(in.aux, where, "aux") && in.flags.decrement_aux) consume(in.aux, t, where);
        if (bounds(in.dst, where, "output")) produce(in.dst, vc, t);
        break;
      case Opcode::NetSend:
        if (bounds(in.src, where, "fragment") && in.flags.decrement_on_read) consume(in.src, t, where);
        break;
      case Opcode::NetForward:
        if (in.dst.space != Space::NetBuffer) issue("bounds", where + ": receive window must be the network buffer");
        if (bounds(in.dst, where, "receive window")) {
          produce(in.dst, vc, t);
          if (in.flags.decrement_on_read) consume(in.dst, t, where);
        }
        break;
      case Opcode::Interrupt:
        break;
    }
  }

  void settle(const CoreProgram& core) {
    for (Space s : {Space::MemBuffer, Space::NetBuffer, Space::Scratch}) {
      auto& bk = books_[static_cast<int>(s)];
      for (std::size_t e = 0; e < bk.produced.size(); ++e) {
        if (bk.consumed[e] > 0 && bk.produced[e] == 0) {
          issue("unproduced", bk.first_reader[e] + ": reads " + to_string(s) + " entry " + std::to_string(e) +
                                  " that no instruction produces");
        } else if (bk.produced[e] != bk.consumed[e]) {
          issue("balance", "core " + std::to_string(core.core_id) + " " + to_string(s) + " entry " +
                               std::to_string(e) + ": produced " + std::to_string(bk.produced[e]) +
                               " valid counts but consumed " + std::to_string(bk.consumed[e]));
        }
      }
    }
  }

  const Program& p_;
  const BufferMap& b_;
  ProgramReport report_;
  std::map<int, EntryBook> books_;
};

}  // namespace

std::string ProgramReport::to_string() const {
  std::ostringstream os;
  os << (ok() ? "OK" : "INVALID") << " (" << checked_instructions << " instructions, " << issues.size()
     << " issues)\n";
  for (const auto& i : issues) os << "  [" << i.check << "] " << i.detail << "\n";
  return os.str();
}

ProgramReport validate_program(const Program& p, const BufferMap& buffers) {
  return Validator(p, buffers).run();
}

}  // namespace rpu::isa
