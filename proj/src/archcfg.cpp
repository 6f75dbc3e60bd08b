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

#include "rpu/archcfg.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "rpu/common.hpp"

namespace rpu::arch {

namespace {
constexpr const char* kModule = "archcfg";
}

const LinkParams& SystemConfig::link_after(uint32_t ring_pos) const {
  const uint32_t a = cu_at(ring_pos);
  const uint32_t b = cu_at((ring_pos + 1) % num_cus);
  return (a / cus_per_package == b / cus_per_package) ? intra_package_link
                                                      : inter_package_link;
}

uint32_t SystemConfig::cu_at(uint32_t ring_pos) const {
  return ring_order.empty() ? ring_pos : ring_order.at(ring_pos);
}

SystemConfig default_system(uint32_t num_cus) {
  SystemConfig s;
  s.num_cus = num_cus;
  return s;
}

double memory_pj_per_bit(const SystemConfig& sys) {
  if (sys.power.memory_pj_per_bit > 0) return sys.power.memory_pj_per_bit;
  return mem::energy_per_bit(sys.cu.mem_geometry, mem::default_energy_params()).total();
}

double cu_bandwidth(const SystemConfig& sys) { return sys.cu.cores * sys.core.pch_bandwidth; }
double total_bandwidth(const SystemConfig& sys) { return sys.num_cus * cu_bandwidth(sys); }
double cu_ops_per_second(const SystemConfig& sys) {
  return sys.cu.cores * sys.core.ops_per_second();
}
double total_ops_per_second(const SystemConfig& sys) {
  return sys.num_cus * cu_ops_per_second(sys);
}
double cu_capacity(const SystemConfig& sys) {
  return sys.cu.devices * static_cast<double>(mem::capacity(sys.cu.mem_geometry));
}
double total_capacity(const SystemConfig& sys) { return sys.num_cus * cu_capacity(sys); }
double ops_per_byte(const SystemConfig& sys) {
  return sys.core.ops_per_second() / sys.core.pch_bandwidth;
}

bool ValidationReport::ok() const {
  return std::all_of(checks.begin(), checks.end(), [](const Check& c) { return c.pass; });
}

std::string ValidationReport::to_string() const {
  std::ostringstream os;
  for (const auto& c : checks)
    os << (c.pass ? "PASS " : "FAIL ") << c.name << ": " << c.detail << '\n';
  return os.str();
}

ValidationReport validate(const SystemConfig& sys) {
  ValidationReport r;
  auto add = [&](std::string name, bool pass, std::string detail) {
    r.checks.push_back({std::move(name), pass, std::move(detail)});
  };
  std::ostringstream d;

  add("num_cus", sys.num_cus >= 1, "num_cus=" + std::to_string(sys.num_cus));

  const double opb = ops_per_byte(sys);
  d << "ops/byte=" << opb << " target=" << sys.target_ops_per_byte;
  add("ops_per_byte", std::abs(opb - sys.target_ops_per_byte) <= 1e-9 * sys.target_ops_per_byte,
      d.str());

  d.str("");
  const double core_side = sys.cu.cores * sys.core.pch_bandwidth;
  const double shore_side = sys.cu.shorelines * sys.cu.shoreline_bandwidth;
  d << "cores*pch=" << core_side / kGB << " GB/s, shorelines*bw=" << shore_side / kGB << " GB/s";
  add("bandwidth_closure", std::abs(core_side - shore_side) <= 1e-9 * shore_side, d.str());

  d.str("");
  if (auto reason = mem::check_geometry(sys.cu.mem_geometry)) {
    add("capacity_closure", false, "memory geometry invalid: " + *reason);
  } else {
    const double dev_bw = mem::bandwidth(sys.cu.mem_geometry);
    const bool devices_match = sys.cu.devices == sys.cu.shorelines;
    const bool bw_match = std::abs(dev_bw - sys.cu.shoreline_bandwidth) <= 1e-9 * dev_bw;
    const uint32_t pch_per_device =
        sys.cu.mem_geometry.layers_per_rank * sys.cu.mem_geometry.channels_per_layer *
        sys.cu.mem_geometry.pchs_per_channel;
    const bool pch_match = pch_per_device * sys.cu.devices == sys.cu.cores;
    d << "device bw=" << dev_bw / kGB << " GB/s, pCH/device=" << pch_per_device
      << ", devices=" << sys.cu.devices << ", capacity/core="
      << cu_capacity(sys) / sys.cu.cores / kMB << " MB";
    add("capacity_closure", devices_match && bw_match && pch_match, d.str());
  }

  bool perm_ok = true;
  if (!sys.ring_order.empty()) {
    std::vector<uint32_t> sorted = sys.ring_order;
    std::sort(sorted.begin(), sorted.end());
    perm_ok = sorted.size() == sys.num_cus;
    for (uint32_t i = 0; perm_ok && i < sorted.size(); ++i) perm_ok = sorted[i] == i;
  }
  add("ring_permutation", perm_ok,
      sys.ring_order.empty() ? "identity" : std::to_string(sys.ring_order.size()) + " entries");
  return r;
}

const char* to_string(KernelKind k) {
  switch (k) {
    case KernelKind::Linear: return "Linear";
    case KernelKind::SDPA: return "SDPA";
    case KernelKind::MoE: return "MoE";
    case KernelKind::VOP: return "VOP";
  }
  return "?";
}

double roofline_time_on_cores(const KernelShape& k, const SystemConfig& sys, uint32_t cores) {
  const double bw = cores * sys.core.pch_bandwidth;
  const double ops = cores * sys.core.ops_per_second();
  if (!(bw > 0) || !(ops > 0)) throw Error(kModule, "roofline needs nonzero bandwidth and compute");
  return std::max(k.bytes_from_memory / bw, k.ops / ops);
}

double roofline_time(const KernelShape& k, const SystemConfig& sys) {
  return roofline_time_on_cores(k, sys, sys.total_cores());
}

ProvisionedPower provision_power(const SystemConfig& sys, const Utilization& u) {
  auto in01 = [](double x) { return x >= 0 && x <= 1; };
  if (!in01(u.memory) || !in01(u.compute) || !in01(u.network))
    throw Error(kModule, "utilization fractions must lie in [0, 1]");
  ProvisionedPower p;
  const double bits = cu_bandwidth(sys) * 8.0 * u.memory;
  p.per_cu.memory = bits * memory_pj_per_bit(sys) * kPico;
  p.per_cu.datapath = bits * sys.power.datapath_pj_per_bit * kPico;
  p.per_cu.compute = cu_ops_per_second(sys) * u.compute * sys.power.compute_pj_per_op * kPico;
  p.per_cu.network = sys.intra_package_link.bandwidth * 8.0 * u.network *
                     sys.intra_package_link.energy_pj_per_bit * kPico;
  p.per_cu.idle = sys.power.idle_w_per_cu;
  const double n = sys.num_cus;
  p.system = {p.per_cu.memory * n, p.per_cu.datapath * n, p.per_cu.compute * n,
              p.per_cu.network * n, p.per_cu.idle * n};
  return p;
}

Utilization peak_streaming_utilization(const SystemConfig& sys) {
  Utilization u;
  u.memory = 1.0;
  const double weights_per_s = cu_bandwidth(sys) * 8.0 / sys.weight_bits_for_provisioning;
  u.compute = std::min(1.0, 2.0 * weights_per_s / cu_ops_per_second(sys));
  return u;
}

double peak_streaming_power_per_cu(const SystemConfig& sys) {
  return provision_power(sys, peak_streaming_utilization(sys)).per_cu.total();
}

uint32_t iso_tdp_cus(double tdp, const SystemConfig& sys) {
  if (!(tdp > 0)) throw Error(kModule, "tdp must be positive");
  const double per_cu = peak_streaming_power_per_cu(sys);
  if (tdp < per_cu)
    throw Error(kModule, "tdp below the peak power of a single CU");
  // Tolerate rounding when tdp is an exact multiple of the per-CU power.
  return static_cast<uint32_t>(std::floor(tdp / per_cu * (1 + 1e-12)));
}

}  // namespace rpu::arch
