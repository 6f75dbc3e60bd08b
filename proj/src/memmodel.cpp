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

#include "rpu/memmodel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "rpu/common.hpp"

namespace rpu::mem {

namespace {

constexpr const char* kModule = "memmodel";

// Product of all capacity-driving counts, in bits; nullopt on overflow.
std::optional<unsigned __int128> capacity_bits(const StackGeometry& g) {
  const uint64_t factors[] = {g.ranks,
                              g.layers_per_rank,
                              g.channels_per_layer,
                              g.pchs_per_channel,
                              g.bank_groups_per_pch,
                              g.banks_per_bank_group,
                              g.subarrays_per_bank,
                              g.subarray_capacity_bits};
  unsigned __int128 acc = 1;
  const unsigned __int128 limit = std::numeric_limits<uint64_t>::max();
  for (uint64_t f : factors) {
    acc *= f;
    if (acc > limit) return std::nullopt;
  }
  return acc;
}

}  // namespace

std::optional<std::string> check_geometry(const StackGeometry& g) {
  if (g.ranks < 1) return "ranks must be >= 1";
  if (g.layers_per_rank < 1) return "layers_per_rank must be >= 1";
  if (g.channels_per_layer < 1) return "channels_per_layer must be >= 1";
  if (g.pchs_per_channel < 1) return "pchs_per_channel must be >= 1";
  if (g.subarrays_per_bank < 1) return "subarrays_per_bank must be >= 1";
  if (g.subarray_capacity_bits < 1) return "subarray_capacity must be >= 1 bit";
  if (g.pch_io_width_bits < 1) return "pch_io_width must be >= 1 bit";
  if (!(g.pch_data_rate > 0)) return "pch_data_rate must be > 0";
  if (g.bank_groups_per_pch < kMinBankGroupsForStreaming)
    return "bank_groups_per_pch below streaming minimum of 4";
  if (g.banks_per_bank_group < kMinBanksPerGroupForStreaming)
    return "banks_per_bank_group below streaming minimum of 1";
  auto bits = capacity_bits(g);
  if (!bits) return "capacity overflows 64 bits";
  if (*bits % 8 != 0) return "capacity is not a whole number of bytes";
  return std::nullopt;
}

StackGeometry hbm3e_reference() {
  StackGeometry g;
  g.ranks = 4;
  g.layers_per_rank = 4;
  g.channels_per_layer = 4;
  g.pchs_per_channel = 2;
  g.bank_groups_per_pch = 4;
  g.banks_per_bank_group = 4;
  g.subarrays_per_bank = 192;
  g.subarray_capacity_bits = 1ULL << 20;
  g.pch_io_width_bits = 32;
  g.pch_data_rate = 10.0 * (1ULL << 30);
  return g;
}

StackGeometry candidate_device() {
  StackGeometry g = hbm3e_reference();
  g.ranks = 1;
  g.channels_per_layer = 1;
  g.banks_per_bank_group = 1;
  g.pch_data_rate = 8.0 * (1ULL << 30);
  return g;
}

uint64_t capacity(const StackGeometry& g) {
  if (auto reason = check_geometry(g)) throw Error(kModule, "invalid geometry: " + *reason);
  return static_cast<uint64_t>(*capacity_bits(g) / 8);
}

double bandwidth(const StackGeometry& g) {
  if (auto reason = check_geometry(g)) throw Error(kModule, "invalid geometry: " + *reason);
  return static_cast<double>(g.layers_per_rank) * g.channels_per_layer * g.pchs_per_channel *
         g.pch_io_width_bits * g.pch_data_rate / 8.0;
}

double per_layer_capacity(const StackGeometry& g) {
  return static_cast<double>(capacity(g)) / (static_cast<double>(g.ranks) * g.layers_per_rank);
}

// Array area is linear in per-layer capacity; the average on-die path grows
// with the square root of that area.
double internal_wire_length(const StackGeometry& g, const EnergyParams& p) {
  return p.wire_calibration * std::sqrt(per_layer_capacity(g));
}

// Uniform access over the layers of a rank, plus one hop into the base die.
double mean_tsv_traversals(const StackGeometry& g) {
  return (static_cast<double>(g.layers_per_rank) + 1.0) / 2.0;
}

EnergyBreakdown energy_per_bit(const StackGeometry& g, const EnergyParams& p) {
  EnergyBreakdown e;
  e.act = p.e_act;
  e.move = p.e_move * internal_wire_length(g, p);
  e.tsv = p.e_tsv * mean_tsv_traversals(g);
  e.io = p.e_io;
  return e;
}

EnergyParams calibrate_wire(const StackGeometry& reference, EnergyParams p,
                            double target_pj_per_bit) {
  const double fixed = p.e_act + p.e_tsv * mean_tsv_traversals(reference) + p.e_io;
  const double move = target_pj_per_bit - fixed;
  if (move <= 0 || p.e_move <= 0)
    throw Error(kModule, "target energy leaves no budget for data movement");
  const double length_mm = move / p.e_move;
  p.wire_calibration = length_mm / std::sqrt(per_layer_capacity(reference));
  return p;
}

EnergyParams default_energy_params() {
  static const EnergyParams p =
      calibrate_wire(hbm3e_reference(), EnergyParams{}, kHbm3eReportedPjPerBit);
  return p;
}

double fit_fixed_cost_fraction(double cost_per_gb_ratio, double capacity_ratio) {
  if (capacity_ratio <= 1) throw Error(kModule, "capacity ratio must exceed 1");
  return (cost_per_gb_ratio - 1.0) / (capacity_ratio - 1.0);
}

CostParams default_cost_params() {
  CostParams c;
  const double ratio = static_cast<double>(capacity(c.baseline)) /
                       static_cast<double>(capacity(candidate_device()));
  c.fixed_cost_fraction = fit_fixed_cost_fraction(1.81, ratio);
  return c;
}

CostResult cost_module(const StackGeometry& g, const CostParams& c) {
  if (!(c.fixed_cost_fraction > 0 && c.fixed_cost_fraction < 1))
    throw Error(kModule, "fixed_cost_fraction must lie in (0, 1)");
  const double cap_ratio =
      static_cast<double>(capacity(g)) / static_cast<double>(capacity(c.baseline));
  const double bw_ratio = bandwidth(g) / bandwidth(c.baseline);
  CostResult r;
  r.cost_module = c.fixed_cost_fraction + (1.0 - c.fixed_cost_fraction) * cap_ratio;
  r.cost_per_gb = r.cost_module / cap_ratio;
  r.bw_per_dollar = bw_ratio / r.cost_module;
  return r;
}

DeviceMetrics evaluate(const StackGeometry& g, const EnergyParams& e, const CostParams& c) {
  DeviceMetrics m;
  m.capacity = static_cast<double>(capacity(g));
  m.bandwidth = bandwidth(g);
  m.bw_per_cap = m.bandwidth / m.capacity;
  m.energy = energy_per_bit(g, e);
  m.pj_per_bit = m.energy.total();
  auto cost = cost_module(g, c);
  m.cost_module = cost.cost_module;
  m.cost_per_gb = cost.cost_per_gb;
  m.bw_per_dollar = cost.bw_per_dollar;
  return m;
}

double bw_per_cap(const DeviceMetrics& m) {
  if (!(m.capacity > 0)) throw Error(kModule, "zero capacity");
  return m.bandwidth / m.capacity;
}

double ideal_token_latency(double bwcap) {
  if (!(bwcap > 0)) throw Error(kModule, "BW/Cap must be positive");
  return 1.0 / bwcap;
}

double capacity_utilization(double required_bwcap, double available_bwcap) {
  if (!(required_bwcap > 0)) throw Error(kModule, "required BW/Cap must be positive");
  return std::min(1.0, available_bwcap / required_bwcap);
}

DesignSpace enumerate_design_space(const DesignGrid& grid, const EnergyParams& e,
                                   const CostParams& c) {
  DesignSpace out;
  for (uint32_t ch : grid.channels_per_layer) {
    for (uint32_t r : grid.ranks) {
      for (uint32_t b : grid.banks_per_bank_group) {
        for (uint32_t d : grid.subarray_divisors) {
          StackGeometry g = grid.base;
          g.channels_per_layer = ch;
          g.ranks = r;
          g.banks_per_bank_group = b;
          if (d == 0 || grid.base.subarrays_per_bank % d != 0) {
            out.skipped.push_back({g, "subarray divisor " + std::to_string(d) +
                                          " does not divide subarrays_per_bank"});
            continue;
          }
          g.subarrays_per_bank = grid.base.subarrays_per_bank / d;
          if (auto reason = check_geometry(g)) {
            out.skipped.push_back({g, *reason});
            continue;
          }
          out.points.push_back({g, evaluate(g, e, c), false});
        }
      }
    }
  }
  mark_pareto(out.points);
  return out;
}

std::vector<DesignPoint> pareto_frontier(const std::vector<DesignPoint>& points) {
  if (points.empty()) throw Error(kModule, "pareto_frontier needs at least one point");
  const double bw = points.front().metrics.bandwidth;
  for (const auto& p : points)
    if (p.metrics.bandwidth != bw)
      throw Error(kModule, "pareto_frontier requires points of equal bandwidth");

  auto dominates = [](const DeviceMetrics& a, const DeviceMetrics& b) {
    return a.pj_per_bit <= b.pj_per_bit && a.capacity >= b.capacity &&
           (a.pj_per_bit < b.pj_per_bit || a.capacity > b.capacity);
  };
  std::vector<DesignPoint> front;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < points.size() && !dominated; ++j)
      dominated = j != i && dominates(points[j].metrics, points[i].metrics);
    if (dominated) continue;
    // Equal (capacity, energy) duplicates: keep the first in input order.
    bool duplicate = std::any_of(front.begin(), front.end(), [&](const DesignPoint& f) {
      return f.metrics.capacity == points[i].metrics.capacity &&
             f.metrics.pj_per_bit == points[i].metrics.pj_per_bit;
    });
    if (!duplicate) front.push_back(points[i]);
  }
  std::stable_sort(front.begin(), front.end(), [](const DesignPoint& a, const DesignPoint& b) {
    return a.metrics.capacity < b.metrics.capacity;
  });
  for (auto& p : front) p.pareto = true;
  return front;
}

std::vector<DesignPoint> at_bandwidth(const std::vector<DesignPoint>& points, double bw) {
  std::vector<DesignPoint> out;
  for (const auto& p : points)
    if (p.metrics.bandwidth == bw) out.push_back(p);
  return out;
}

void mark_pareto(std::vector<DesignPoint>& points) {
  std::map<double, std::vector<std::size_t>> by_bw;
  for (std::size_t i = 0; i < points.size(); ++i) {
    points[i].pareto = false;
    by_bw[points[i].metrics.bandwidth].push_back(i);
  }
  for (auto& [bw, idx] : by_bw) {
    std::vector<DesignPoint> cls;
    for (auto i : idx) cls.push_back(points[i]);
    auto front = pareto_frontier(cls);
    for (auto i : idx)
      for (const auto& f : front)
        if (f.geometry == points[i].geometry) points[i].pareto = true;
  }
}

void write_dse_csv(std::ostream& os, const std::vector<DesignPoint>& points) {
  os << "ranks,layers_per_rank,channels_per_layer,pchs_per_channel,bank_groups_per_pch,"
        "banks_per_bank_group,subarrays_per_bank,subarray_capacity_bits,pch_io_width_bits,"
        "pch_data_rate,capacity_bytes,bandwidth_Bps,bwcap,pj_per_bit,e_act,e_move,e_tsv,e_io,"
        "cost_module,cost_per_gb,bw_per_dollar,pareto_flag\n";
  auto old = os.precision(10);
  for (const auto& p : points) {
    const auto& g = p.geometry;
    const auto& m = p.metrics;
    os << g.ranks << ',' << g.layers_per_rank << ',' << g.channels_per_layer << ','
       << g.pchs_per_channel << ',' << g.bank_groups_per_pch << ',' << g.banks_per_bank_group
       << ',' << g.subarrays_per_bank << ',' << g.subarray_capacity_bits << ','
       << g.pch_io_width_bits << ',' << g.pch_data_rate << ','
       << static_cast<uint64_t>(m.capacity) << ',' << m.bandwidth << ','
       << m.bw_per_cap << ',' << m.pj_per_bit << ',' << m.energy.act << ',' << m.energy.move
       << ',' << m.energy.tsv << ',' << m.energy.io << ',' << m.cost_module << ','
       << m.cost_per_gb << ',' << m.bw_per_dollar << ',' << (p.pareto ? 1 : 0) << '\n';
  }
  os.precision(old);
}

}  // namespace rpu::mem
