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

#include "rpu/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include "rpu/common.hpp"

namespace rpu::analysis {

namespace {

constexpr const char* kModule = "analysis";

[[noreturn]] void fail(const std::string& what) { throw Error(kModule, what); }

// Activation broadcasts per decoder layer: attention input, attention output,
// FFN input and FFN output.
constexpr double kBroadcastsPerLayer = 4;

}  // namespace

std::vector<mem::DesignPoint> frontier(const mem::DesignGrid& grid, double device_bandwidth) {
  const auto ds = mem::enumerate_design_space(grid, mem::default_energy_params(), mem::default_cost_params());
  auto f = mem::pareto_frontier(mem::at_bandwidth(ds.points, device_bandwidth));
  if (f.empty()) fail("no design point at the requested device bandwidth");
  return f;
}

std::vector<mem::DesignPoint> default_frontier() {
  return frontier(mem::DesignGrid{}, mem::bandwidth(mem::candidate_device()));
}

arch::SystemConfig with_device(arch::SystemConfig sys, const mem::StackGeometry& g) {
  sys.cu.mem_geometry = g;
  sys.power.memory_pj_per_bit = 0;
  return sys;
}

bool fits(const compiler::ModelSpec& m, const arch::SystemConfig& sys, uint32_t batch, uint32_t seq) {
  try {
    compiler::plan_sharding(m, sys, {batch, seq, 1});
    return true;
  } catch (const Error&) {
    return false;
  }
}

SkuChoice select_sku(const compiler::ModelSpec& m, const arch::SystemConfig& sys, uint32_t batch, uint32_t seq,
                     const std::vector<mem::DesignPoint>& frontier) {
  if (frontier.empty()) fail("empty memory frontier");
  auto sorted = frontier;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.metrics.capacity < b.metrics.capacity; });
  SkuChoice c;
  c.required = compiler::footprint(m, batch, seq).total();
  for (const auto& p : sorted) {
    const auto s = with_device(sys, p.geometry);
    if (!fits(m, s, batch, seq)) continue;
    c.point = p;
    c.capacity = arch::total_capacity(s);
    c.utilization = c.required / c.capacity;
    return c;
  }
  const auto largest = with_device(sys, sorted.back().geometry);
  std::ostringstream os;
  os.precision(4);
  os << "capacity: '" << m.name << "' needs " << c.required / kGB << " GB but the largest device gives "
     << arch::total_capacity(largest) / kGB << " GB on " << sys.num_cus << " CUs";
  fail(os.str());
}

StepResult simulate_step(const compiler::ModelSpec& m, const arch::SystemConfig& sys, const compiler::Workload& w,
                         const sim::SimConfig& cfg) {
  compiler::LowerOptions opt;
  opt.workload = w;
  const auto prog = compiler::compile(m, sys, opt);
  StepResult r;
  r.instructions = static_cast<uint32_t>(prog.instruction_count());
  r.stats = sim::simulate(prog, sys, cfg);
  if (r.stats.stalled) fail("simulation stalled: " + r.stats.stalled->to_string());
  r.token = sim::extrapolate(r.stats, prog, sys);
  r.memory_bytes = r.token.energy.memory / (arch::memory_pj_per_bit(sys) * 8 * kPico);
  r.sustained_bw = r.token.latency > 0 ? r.memory_bytes / r.token.latency : 0;
  return r;
}

std::vector<ScalePoint> strong_scaling(const compiler::ModelSpec& m, const arch::SystemConfig& base,
                                       const std::vector<uint32_t>& cus, const compiler::Workload& w,
                                       const std::vector<mem::DesignPoint>& frontier, unsigned jobs) {
  std::vector<ScalePoint> out(cus.size());
  parallel_for(cus.size(), jobs, [&](std::size_t i) {
    ScalePoint& pt = out[i];
    pt.cus = cus[i];
    auto sys = base;
    sys.num_cus = cus[i];
    sys.ring_order.clear();
    try {
      pt.sku = select_sku(m, sys, w.batch, w.seq, frontier);
    } catch (const Error& e) {
      pt.note = e.what();
      return;
    }
    pt.fits = true;
    sys = with_device(sys, pt.sku.point.geometry);
    const auto r = simulate_step(m, sys, w);
    pt.latency = r.token.latency;
    pt.sustained_bw = r.sustained_bw;
    const double block = double(m.hidden) * w.batch * m.act_bits / 8 / sys.num_cus;
    const double bcast = kBroadcastsPerLayer * sim::collective_time(sys.num_cus, block, true, sys);
    pt.broadcast_share = r.token.steady_layer > 0 ? std::min(1.0, bcast / r.token.steady_layer) : 0;
    pt.plateau = pt.broadcast_share >= 0.5;
  });
  std::vector<std::size_t> order(out.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return out[a].cus < out[b].cus; });
  const ScalePoint* ref = nullptr;
  for (auto i : order)
    if (out[i].fits && !ref) ref = &out[i];
  for (auto& pt : out)
    if (pt.fits && ref) pt.speedup = ref->latency / pt.latency;
  return out;
}

double EnergyResult::memory_share() const {
  const double t = total();
  return t > 0 ? dynamic.memory / t : 0;
}

EnergyResult energy_per_inference(const compiler::ModelSpec& m, const arch::SystemConfig& sys, uint32_t batch,
                                  uint32_t seq, uint32_t decode_tokens, uint32_t stride) {
  if (stride == 0) fail("energy sampling stride must be positive");
  EnergyResult e;
  e.tokens = decode_tokens;
  for (uint32_t done = 0; done < decode_tokens; done += stride) {
    const uint32_t n = std::min(stride, decode_tokens - done);
    const auto r = simulate_step(m, sys, {batch, seq + done, 1});
    e.dynamic.memory += n * r.token.energy.memory;
    e.dynamic.datapath += n * r.token.energy.datapath;
    e.dynamic.compute += n * r.token.energy.compute;
    e.dynamic.network += n * r.token.energy.network;
    e.idle += n * r.token.idle_energy;
    e.latency += n * r.token.latency;
    ++e.samples;
  }
  return e;
}

EnergyResult rescale_memory(EnergyResult e, double from_pj_per_bit, double to_pj_per_bit) {
  if (!(from_pj_per_bit > 0) || !(to_pj_per_bit > 0)) fail("energy per bit must be positive");
  e.dynamic.memory *= to_pj_per_bit / from_pj_per_bit;
  return e;
}

CostBreakdown CostBreakdown::normalized(double reference_total) const {
  if (!(reference_total > 0)) fail("cost normalization needs a positive reference");
  CostBreakdown c = *this;
  c.silicon /= reference_total;
  c.memory /= reference_total;
  c.substrate /= reference_total;
  c.pcb /= reference_total;
  return c;
}

CostBreakdown cost_breakdown(const arch::SystemConfig& sys, const mem::DeviceMetrics& device,
                             const SystemCostParams& p) {
  CostBreakdown c;
  c.cus = sys.num_cus;
  c.silicon = p.silicon_per_cu * sys.num_cus;
  c.memory = device.cost_module * sys.cu.devices * sys.num_cus;
  c.substrate = p.substrate_per_package * sys.packages();
  c.pcb = p.pcb_per_cu * sys.num_cus;
  return c;
}

std::vector<BatchPoint> batch_scaling(const compiler::ModelSpec& m, const arch::SystemConfig& sys, uint32_t seq,
                                      const std::vector<uint32_t>& batches, unsigned jobs) {
  std::vector<BatchPoint> out(batches.size());
  parallel_for(batches.size(), jobs, [&](std::size_t i) {
    const auto r = simulate_step(m, sys, {batches[i], seq, 1});
    BatchPoint& b = out[i];
    b.batch = batches[i];
    b.latency = r.token.latency;
    b.tokens_per_s_per_query = 1.0 / r.token.latency;
    b.tokens_per_s = b.batch * b.tokens_per_s_per_query;
    b.memory_util = r.stats.util_memory;
    b.compute_util = r.stats.util_compute;
    b.compute_bound = b.compute_util > b.memory_util;
  });
  return out;
}

std::vector<MapCell> batch_seq_map(const compiler::ModelSpec& m, const arch::SystemConfig& sys,
                                   const std::vector<uint32_t>& batches, const std::vector<uint32_t>& seqs,
                                   const std::vector<mem::DesignPoint>& frontier) {
  std::vector<MapCell> out;
  for (auto b : batches) {
    for (auto s : seqs) {
      MapCell c;
      c.batch = b;
      c.seq = s;
      try {
        c.sku = select_sku(m, sys, b, s, frontier);
        c.fits = true;
      } catch (const Error&) {
        c.sku.required = compiler::footprint(m, b, s).total();
      }
      out.push_back(c);
    }
  }
  return out;
}

SpecDecodeResult spec_decode_eval(const SpecDecodeModel& sd, const arch::SystemConfig& sys, uint32_t seq) {
  if (sd.lookahead == 0) fail("lookahead must be positive");
  if (!(sd.accepted > 0) || sd.accepted > sd.lookahead)
    fail("accepted tokens must lie in (0, lookahead]");
  const double need = compiler::footprint(sd.draft, 1, seq + sd.lookahead).total() +
                      compiler::footprint(sd.target, sd.lookahead, seq + sd.lookahead).total();
  const double have = arch::total_capacity(sys);
  const auto dplan = compiler::plan_sharding(sd.draft, sys, {1, seq + sd.lookahead, 1});
  const auto tplan = compiler::plan_sharding(sd.target, sys, {sd.lookahead, seq + sd.lookahead, 1});
  if (need > have || dplan.weight_bytes_per_core + tplan.weight_bytes_per_core > tplan.capacity_per_core) {
    std::ostringstream os;
    os.precision(4);
    os << "capacity: draft '" << sd.draft.name << "' and target '" << sd.target.name << "' need " << need / kGB
       << " GB together but " << sys.num_cus << " CUs provide " << have / kGB << " GB";
    fail(os.str());
  }
  SpecDecodeResult r;
  r.draft_step = simulate_step(sd.draft, sys, {1, seq, 1}).token.latency;
  r.verify_step = simulate_step(sd.target, sys, {sd.lookahead, seq, 1}).token.latency;
  r.target_step = simulate_step(sd.target, sys, {1, seq, 1}).token.latency;
  r.window = sd.lookahead * r.draft_step + r.verify_step;
  r.tokens_per_s = sd.accepted / r.window;
  r.baseline_tokens_per_s = 1.0 / r.target_step;
  r.speedup = r.tokens_per_s / r.baseline_tokens_per_s;
  return r;
}

Comparison compare_baseline(const RpuResult& r, const config::BaselineConstants& b) {
  Comparison c;
  c.key = config::baseline_key(r.model, r.batch, r.seq);
  const auto& e = b.at(c.key);
  if (!(r.latency > 0)) fail("RPU latency must be positive");
  c.speedup = e.latency_s / r.latency;
  if (e.energy_j > 0 && r.energy > 0) {
    c.energy_ratio = e.energy_j / r.energy;
    c.edp_ratio = c.speedup * c.energy_ratio;
  }
  return c;
}

void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed = n;
  std::exception_ptr error;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < jobs; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (i < failed) {
            failed = i;
            error = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace rpu::analysis
