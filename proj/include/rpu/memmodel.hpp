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

#pragma once

// Analytical model of capacity-optimized HBM stacks: capacity, bandwidth,
// energy per bit and normalized cost derived from the stack geometry, plus
// design-space enumeration and Pareto extraction.

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace rpu::mem {

struct StackGeometry {
  uint32_t ranks = 1;
  uint32_t layers_per_rank = 4;
  uint32_t channels_per_layer = 1;
  uint32_t pchs_per_channel = 2;
  uint32_t bank_groups_per_pch = 4;
  uint32_t banks_per_bank_group = 1;
  uint32_t subarrays_per_bank = 192;
  uint64_t subarray_capacity_bits = 1ULL << 20;
  uint32_t pch_io_width_bits = 32;
  double pch_data_rate = 8.0 * (1ULL << 30);  // transfers/s

  bool operator==(const StackGeometry&) const = default;
};

/// Minimum bank organization that sustains pipelined streaming per pCH.
inline constexpr uint32_t kMinBankGroupsForStreaming = 4;
inline constexpr uint32_t kMinBanksPerGroupForStreaming = 1;

/// Returns the reason a geometry is rejected, or nullopt when it is valid.
std::optional<std::string> check_geometry(const StackGeometry& g);

/// HBM3e reference stack: 48 GB, 1280 GB/s.
StackGeometry hbm3e_reference();
/// The 768 MB / 256 GB/s capacity-optimized device.
StackGeometry candidate_device();

struct EnergyParams {
  double e_act = 0.18;     // pJ/bit
  double e_move = 0.2;     // pJ/bit/mm
  double e_tsv = 0.148;    // pJ/bit/layer
  double e_io = 0.25;      // pJ/bit
  double wire_calibration = 0.0;  // mm per sqrt(byte of per-layer capacity)
};

inline constexpr double kHbm3eReportedPjPerBit = 3.44;

/// Solves wire_calibration so that `reference` evaluates to `target_pj_per_bit`.
EnergyParams calibrate_wire(const StackGeometry& reference, EnergyParams p,
                            double target_pj_per_bit);
/// Default constants with the wire length calibrated against HBM3e.
EnergyParams default_energy_params();

struct EnergyBreakdown {
  double act = 0, move = 0, tsv = 0, io = 0;
  double total() const { return act + move + tsv + io; }
};

struct CostParams {
  StackGeometry baseline = hbm3e_reference();
  double fixed_cost_fraction = 0.0;
};

/// Fixed share f such that a device with 1/capacity_ratio of the baseline
/// capacity costs `cost_per_gb_ratio` times more per GB: 1 + (r-1) f = ratio.
double fit_fixed_cost_fraction(double cost_per_gb_ratio, double capacity_ratio);
CostParams default_cost_params();

struct DeviceMetrics {
  double capacity = 0;      // bytes
  double bandwidth = 0;     // bytes/s
  double bw_per_cap = 0;    // 1/s
  EnergyBreakdown energy;   // pJ/bit
  double pj_per_bit = 0;
  double cost_module = 0;   // baseline stack = 1.0
  double cost_per_gb = 0;   // baseline = 1.0
  double bw_per_dollar = 0; // baseline = 1.0
};

uint64_t capacity(const StackGeometry& g);
double bandwidth(const StackGeometry& g);
double per_layer_capacity(const StackGeometry& g);
double internal_wire_length(const StackGeometry& g, const EnergyParams& p);
double mean_tsv_traversals(const StackGeometry& g);
EnergyBreakdown energy_per_bit(const StackGeometry& g, const EnergyParams& p);

struct CostResult {
  double cost_module = 0;
  double cost_per_gb = 0;
  double bw_per_dollar = 0;
};
CostResult cost_module(const StackGeometry& g, const CostParams& c);

DeviceMetrics evaluate(const StackGeometry& g, const EnergyParams& e, const CostParams& c);

double bw_per_cap(const DeviceMetrics& m);
double ideal_token_latency(double bwcap);
/// Fraction of capacity usable when the workload needs `required` BW/Cap.
double capacity_utilization(double required_bwcap, double available_bwcap);

struct DesignGrid {
  StackGeometry base = [] {
    auto g = hbm3e_reference();
    g.pch_data_rate = 8.0 * (1ULL << 30);
    return g;
  }();
  std::vector<uint32_t> ranks{1, 2, 4};
  std::vector<uint32_t> banks_per_bank_group{1, 2, 4};
  std::vector<uint32_t> subarray_divisors{1, 2, 4, 8, 16};
  std::vector<uint32_t> channels_per_layer{1, 2, 4};
  std::size_t size() const {
    return ranks.size() * banks_per_bank_group.size() * subarray_divisors.size() *
           channels_per_layer.size();
  }
};

struct DesignPoint {
  StackGeometry geometry;
  DeviceMetrics metrics;
  bool pareto = false;
};

struct SkippedPoint {
  StackGeometry geometry;
  std::string reason;
};

struct DesignSpace {
  std::vector<DesignPoint> points;
  std::vector<SkippedPoint> skipped;
};

DesignSpace enumerate_design_space(const DesignGrid& grid, const EnergyParams& e,
                                   const CostParams& c);

/// Non-dominated subset (min energy/bit, max capacity) ordered by capacity.
/// All points must share one bandwidth.
std::vector<DesignPoint> pareto_frontier(const std::vector<DesignPoint>& points);

/// Points of `points` at the given bandwidth.
std::vector<DesignPoint> at_bandwidth(const std::vector<DesignPoint>& points, double bw);

/// Marks pareto flags per bandwidth class in place.
void mark_pareto(std::vector<DesignPoint>& points);

void write_dse_csv(std::ostream& os, const std::vector<DesignPoint>& points);

}  // namespace rpu::mem
