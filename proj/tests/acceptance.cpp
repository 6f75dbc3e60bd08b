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

// Acceptance driver: one PASS/FAIL line per criterion. The process succeeds
// when the failing set equals --known-red, so a criterion that starts
// passing (or a new regression) both fail the run.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fixtures.hpp"
#include "golden.hpp"
#include "rpu/analysis.hpp"
#include "rpu/common.hpp"
#include "rpu/compiler.hpp"
#include "rpu/config_io.hpp"
#include "rpu/isa.hpp"
#include "rpu/memmodel.hpp"
#include "rpu/simcore.hpp"

using namespace rpu;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back((ok ? "" : "!") + what);
  }
  void within(const std::string& what, double got, double target, double rel) {
    check(std::abs(got - target) <= rel * target, what + " " + num(got) + " vs " + num(target) + "±" + num(rel * 100) + "%");
  }
  void range(const std::string& what, double got, double lo, double hi) {
    check(got >= lo && got <= hi, what + " " + num(got) + " in [" + num(lo) + "," + num(hi) + "]");
  }
  static std::string num(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.4g", v);
    return b;
  }
};

unsigned g_jobs = 4;

arch::SystemConfig base_system(uint32_t cus) {
  auto sys = config::load_system("default");
  sys.num_cus = cus;
  return sys;
}

double step_latency(const compiler::ModelSpec& m, const arch::SystemConfig& sys, uint32_t batch, uint32_t seq,
                    bool decoupled = true) {
  sim::SimConfig cfg;
  cfg.decoupled = decoupled;
  const auto r = analysis::simulate_step(m, sys, {batch, seq, 1}, cfg);
  if (!r.stats.ok()) throw Error("acceptance", m.name + " did not finish: " + r.stats.stalled->to_string());
  return r.token.latency;
}

Outcome c1() {
  Outcome o;
  const auto e = mem::energy_per_bit(mem::hbm3e_reference(), mem::default_energy_params());
  o.within("hbm3e pJ/bit", e.total(), 3.44, 0.02);
  return o;
}

Outcome c2() {
  Outcome o;
  const auto g = mem::candidate_device();
  const auto m = mem::evaluate(g, mem::default_energy_params(), mem::default_cost_params());
  o.check(m.capacity == 768 * kMB && m.bandwidth == 256 * kGB, "geometry 768 MiB / 256 GiB/s");
  o.check(std::floor(m.bw_per_cap) == 341, "BW/Cap " + Outcome::num(m.bw_per_cap));
  o.within("pJ/bit", m.pj_per_bit, 1.45, 0.10);
  const double lat = mem::ideal_token_latency(m.bw_per_cap) * 1e3;
  o.check(std::abs(lat - 2.9) <= 0.1, "latency " + Outcome::num(lat) + " ms vs 2.9±0.1");
  o.within("cost/GB", m.cost_per_gb, 1.81, 0.10);
  o.within("module cost", m.cost_module, 1.0 / 35, 0.15);
  return o;
}

Outcome c3() {
  Outcome o;
  std::mt19937_64 rng(7);
  std::size_t kernels = 0, below = 0;
  int programs = 0;
  while (kernels < 150) {
    const auto m = testing::random_model(rng, programs % 4 == 3);
    const auto sys = arch::default_system(1 + rng() % 4);
    compiler::LowerOptions lo;
    lo.workload = {uint32_t(1 + rng() % 16), uint32_t(64 + rng() % 8192), rng()};
    const auto p = compiler::compile(m, sys, lo);
    const auto st = sim::simulate(p, sys);
    if (!st.ok()) throw Error("acceptance", "random program stalled");
    ++programs;
    for (const auto& k : st.kernels) {
      if (k.end <= k.start) continue;
      below += k.duration() < k.roofline * (1 - 1e-9);
      ++kernels;
    }
  }
  o.check(kernels >= 100 && below == 0,
          std::to_string(kernels) + " kernels, " + std::to_string(below) + " below roofline");

  // Steady-state oracle: weight and KV bytes of one 8B layer over the pCH bandwidth.
  const auto m = testing::llama3_8b();
  const auto sys = arch::default_system(64);
  const double h = m.hidden, kvd = double(m.kv_heads) * m.head_dim;
  const double params = h * (h + 2 * kvd) + h * h + 3 * h * m.ffn;
  const uint32_t seq = 16384;
  const double bytes = params * (4 + 8.0 / 32) / 8 + 2 * kvd * seq * 2;
  const double bound = bytes / (64.0 * 16 * 32 * kGB);
  compiler::LowerOptions lo;
  lo.workload = {1, seq, 1};
  const auto p = compiler::compile(m, sys, lo);
  const auto tok = sim::extrapolate(sim::simulate(p, sys), p, sys);
  o.range("BS1 layer / bound", tok.steady_layer / bound, 1.0, 1.10);
  return o;
}

Outcome c4() {
  Outcome o;
  const auto m = config::load_model("llama3-8b");
  const auto sys = base_system(64);
  const double big = step_latency(m, sys, 32, 8192), small = step_latency(m, sys, 1, 16384);
  o.within("BS32/8k over BS1/16k", big / small, 13.0, 0.20);
  return o;
}

Outcome c5() {
  Outcome o;
  const auto m = config::load_model("llama3-8b");
  const auto sys = base_system(64);
  o.range("BS32 coupled/decoupled", step_latency(m, sys, 32, 8192, false) / step_latency(m, sys, 32, 8192), 1.3, 1.8);
  const std::vector<uint32_t> scales = {32, 64, 128};
  std::vector<double> pen(scales.size());
  analysis::parallel_for(scales.size(), g_jobs, [&](std::size_t i) {
    const auto s = base_system(scales[i]);
    pen[i] = step_latency(m, s, 1, 8192, false) / step_latency(m, s, 1, 8192);
  });
  const auto it = std::max_element(pen.begin(), pen.end());
  o.range("BS1 coupled penalty (max at " + std::to_string(scales[it - pen.begin()]) + " CUs)", *it, 1.5, 2.2);
  return o;
}

Outcome c6() {
  Outcome o;
  const auto fr = analysis::default_frontier();
  const std::vector<std::tuple<std::string, uint32_t, double>> cases = {
      {"llama3-70b", 204, 0.4}, {"llama3-405b", 428, 1.0}, {"llama4-maverick", 128, 0.2}};
  std::vector<analysis::ScalePoint> pts(cases.size());
  analysis::parallel_for(cases.size(), g_jobs, [&](std::size_t i) {
    const auto& [name, cus, ms] = cases[i];
    pts[i] = analysis::strong_scaling(config::load_model(name), base_system(cus), {cus}, {1, 8192, 1}, fr, 1).at(0);
  });
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& [name, cus, ms] = cases[i];
    const std::string what = name + "@" + std::to_string(cus) + " ms";
    if (!pts[i].fits) {
      o.check(false, what + " does not fit");
      continue;
    }
    o.within(what, pts[i].latency * 1e3, ms, 0.25);
  }
  return o;
}

Outcome c7() {
  Outcome o;
  const auto m = config::load_model("llama3-405b");
  const auto fr = analysis::default_frontier();
  auto s64 = base_system(64);
  const auto sku = analysis::select_sku(m, s64, 1, 8192, fr);
  const double per_core = arch::total_capacity(analysis::with_device(s64, sku.point.geometry)) / s64.total_cores() / kMB;
  o.check(std::abs(per_core - 192) < 0.5, "405B@64 per-core SKU " + Outcome::num(per_core) + " MiB vs 192");

  const std::vector<uint32_t> scales = {64, 128, 268, 308, 428};
  std::vector<double> improvement(scales.size());
  analysis::parallel_for(scales.size(), g_jobs, [&](std::size_t i) {
    auto sys = base_system(scales[i]);
    sys = analysis::with_device(sys, analysis::select_sku(m, sys, 1, 8192, fr).point.geometry);
    const auto e = analysis::energy_per_inference(m, sys, 1, 8192, 2048, 1024);
    const auto h = analysis::rescale_memory(e, arch::memory_pj_per_bit(sys), mem::kHbm3eReportedPjPerBit);
    improvement[i] = h.total() / e.total();
  });
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (scales[i] == 64) o.within("energy gain@64", improvement[i], 1.7, 0.20);
    if (scales[i] >= 268) o.within("energy gain@" + std::to_string(scales[i]), improvement[i], 2.2, 0.20);
  }

  const auto hbm = mem::evaluate(mem::hbm3e_reference(), mem::default_energy_params(), mem::default_cost_params());
  double best = 0;
  for (uint32_t c : {64u, 96u, 128u, 192u, 268u, 308u, 428u}) {
    const auto sys = base_system(c);
    const auto pick = analysis::select_sku(m, sys, 1, 8192, fr);
    best = std::max(best, analysis::cost_breakdown(sys, hbm).total() /
                              analysis::cost_breakdown(sys, pick.point.metrics).total());
  }
  o.within("max cost reduction", best, 12.4, 0.25);
  return o;
}

Outcome c8() {
  Outcome o;
  analysis::SpecDecodeModel sd;
  sd.draft = config::load_model("llama3-8b");
  sd.target = config::load_model("llama3-70b");
  sd.lookahead = 8;
  sd.accepted = 4.6;
  o.within("speedup", analysis::spec_decode_eval(sd, base_system(64), 8192).speedup, 1.8, 0.10);
  return o;
}

Outcome c9() {
  Outcome o;
  // Counters, validation and determinism over compiled programs.
  uint32_t max_count = 0;
  uint64_t violations = 0, invalid = 0, nondeterministic = 0, unfinished = 0;
  for (uint32_t cus : {1u, 2u, 4u}) {
    const auto sys = arch::default_system(cus);
    for (const auto& m : {testing::tiny_dense(), testing::tiny_moe()}) {
      for (uint32_t batch : {1u, 4u}) {
        compiler::LowerOptions lo;
        lo.workload = {batch, 1024, 3};
        const auto p = compiler::compile(m, sys, lo);
        invalid += !isa::validate_program(p).ok();
        for (bool dec : {true, false}) {
          sim::SimConfig cfg;
          cfg.decoupled = dec;
          const auto a = sim::simulate(p, sys, cfg), b = sim::simulate(p, sys, cfg);
          unfinished += !a.ok();
          violations += a.counter_violations;
          max_count = std::max(max_count, a.max_valid_count);
          nondeterministic += a.trace_hash != b.trace_hash || a.time != b.time;
        }
      }
    }
  }
  o.check(violations == 0 && max_count <= 3 && unfinished == 0, "max valid count " + std::to_string(max_count));
  o.check(invalid == 0, std::to_string(invalid) + " invalid programs");
  o.check(nondeterministic == 0, std::to_string(nondeterministic) + " nondeterministic runs");

  // Golden schedule, hand-computed in picoseconds.
  sim::SimConfig cfg;
  cfg.keep_trace = true;
  const auto st = sim::simulate(testing::golden_program(), testing::golden_system(), cfg);
  std::map<std::tuple<int32_t, sim::EventKind, uint32_t>, std::pair<uint64_t, uint64_t>> ev;
  std::map<std::pair<int32_t, sim::EventKind>, uint32_t> seen;
  for (const auto& r : st.trace) ev[{r.core, r.event, seen[{r.core, r.event}]++}] = {r.start_ps, r.time_ps};
  using sim::EventKind;
  using P = std::pair<uint64_t, uint64_t>;
  bool golden = st.ok();
  for (int32_t core : {0, 1}) {
    golden = golden && ev[{core, EventKind::Dma, 0}] == P{0, 1'000'000} &&
             ev[{core, EventKind::Dma, 1}] == P{1'000'000, 2'000'000} &&
             ev[{core, EventKind::VmmChunk, 0}] == P{1'000'000, 1'016'000} &&
             ev[{core, EventKind::VmmChunk, 1}] == P{2'000'000, 2'016'000} &&
             ev[{core, EventKind::Send, 0}] == P{2'016'000, 2'016'125} &&
             ev[{core, EventKind::Vop, 0}] == P{2'018'125, 2'022'125};
  }
  golden = golden && ev[{-1, EventKind::Inject, 0}].second == 0 && ev[{-1, EventKind::Inject, 1}].second == 2'018'125;
  o.check(golden, "golden schedule");

  // Dropped producers and over-counted entries must stall.
  const auto m = testing::tiny_dense();
  const auto sys = arch::default_system(2);
  const auto base = compiler::compile(m, sys);
  std::mt19937_64 rng(42);
  int trials = 0, silent = 0;
  while (trials < 40) {
    auto p = base;
    auto& core = p.cores[rng() % p.cores.size()];
    const int kind = int(rng() % 3);
    auto& s = kind == 0 ? core.memory : (kind == 1 ? core.network : core.compute);
    if (s.empty()) continue;
    const std::size_t at = rng() % s.size();
    auto& in = s[at];
    using isa::Opcode;
    if (in.op != Opcode::MemDMA && in.op != Opcode::NetSend && in.op != Opcode::ComputeVMM &&
        in.op != Opcode::ComputeVOP)
      continue;
    ++trials;
    if (rng() % 2 == 0) {
      s.erase(s.begin() + at);
    } else {
      in.flags.valid_count = isa::ValidCount(3);
      if (in.op == Opcode::NetSend) in.flags.decrement_on_read = false;
    }
    silent += !sim::simulate(p, sys).stalled.has_value();
  }
  o.check(silent == 0, std::to_string(trials) + " defects, " + std::to_string(silent) + " silent");
  return o;
}

Outcome c10() {
  Outcome o;
  const auto m = config::load_model("llama3-405b");
  auto sys = base_system(64);
  sys.num_cus = arch::iso_tdp_cus(2800, sys);
  sys = analysis::with_device(sys, analysis::select_sku(m, sys, 1, 8192, analysis::default_frontier()).point.geometry);
  const auto r = analysis::simulate_step(m, sys, {1, 8192, 1});
  const analysis::RpuResult res{"llama3-405b", 1, 8192, sys.num_cus, r.token.latency, r.token.total_energy()};
  const auto c = analysis::compare_baseline(res, config::load_baselines("h100"));
  o.notes.push_back(std::to_string(sys.num_cus) + " CUs");
  o.within("speedup", c.speedup, 45.3, 0.25);
  o.within("EDP", c.edp_ratio, 412, 0.25);
  return o;
}

std::set<int> parse_list(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.insert(std::stoi(item));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string known, only;
  app.add_option("--known-red", known, "comma-separated criteria expected to fail");
  app.add_option("--only", only, "comma-separated criteria to run");
  app.add_option("-j,--jobs", g_jobs, "parallel simulations");
  CLI11_PARSE(app, argc, argv);
  const auto red = parse_list(known), pick = parse_list(only);

  const std::vector<std::function<Outcome()>> criteria = {c1, c2, c3, c4, c5, c6, c7, c8, c9, c10};
  std::set<int> failed;
  for (int i = 1; i <= int(criteria.size()); ++i) {
    if (!pick.empty() && !pick.count(i)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i - 1]();
    } catch (const std::exception& e) {
      o.check(false, std::string("error: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string detail;
    for (const auto& n : o.notes) detail += (detail.empty() ? "" : "; ") + n;
    std::printf("criterion %d: %s %s (%.1f s)%s\n", i, o.pass ? "PASS" : "FAIL", detail.c_str(), secs,
                !o.pass && red.count(i) ? " [known red]" : "");
    std::fflush(stdout);
    if (!o.pass) failed.insert(i);
  }
  std::set<int> expected;
  for (int i : red)
    if (pick.empty() || pick.count(i)) expected.insert(i);
  if (failed != expected) {
    std::printf("failing set differs from --known-red\n");
    return 1;
  }
  return 0;
}
