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

#include <cmath>
#include <sstream>

#include "doctest.h"
#include "rpu/common.hpp"
#include "rpu/memmodel.hpp"

using namespace rpu;
using namespace rpu::mem;

TEST_CASE("hbm3e reference capacity and bandwidth") {
  auto g = hbm3e_reference();
  // 4 ranks x 4 layers x 4 ch x 2 pCH x 4 BG x 4 banks x 192 subarrays x 1 Mib
  double bits = 4.0 * 4 * 4 * 2 * 4 * 4 * 192 * 1048576.0;
  CHECK(capacity(g) == static_cast<uint64_t>(bits / 8));
  CHECK(capacity(g) / kGB == doctest::Approx(48.0));
  // 32 pCH x 32 bit x 10 GT/s / 8
  CHECK(bandwidth(g) / kGB == doctest::Approx(32.0 * 32 * 10 / 8));
}

TEST_CASE("candidate device metrics") {
  auto g = candidate_device();
  auto m = evaluate(g, default_energy_params(), default_cost_params());
  CHECK(m.capacity / kMB == doctest::Approx(768.0));
  CHECK(m.bandwidth / kGB == doctest::Approx(256.0));
  CHECK(m.bw_per_cap == doctest::Approx(256.0 * 1024 / 768));
  CHECK(ideal_token_latency(m.bw_per_cap) * 1e3 == doctest::Approx(2.93).epsilon(0.002));
  CHECK(m.pj_per_bit == doctest::Approx(1.46).epsilon(0.01));
}

TEST_CASE("wire calibration reproduces reference energy") {
  auto e = default_energy_params();
  auto ref = hbm3e_reference();
  CHECK(energy_per_bit(ref, e).total() == doctest::Approx(kHbm3eReportedPjPerBit));
  // per-layer capacity 48 GiB / 16 layers = 3 GiB; L = k sqrt(p)
  CHECK(per_layer_capacity(ref) == doctest::Approx(3 * kGB));
  CHECK(internal_wire_length(ref, e) == doctest::Approx(e.wire_calibration * std::sqrt(3 * kGB)));
  // manual solve: 3.44 = 0.18 + 0.2 L + 0.148 * 2.5 + 0.25
  double L = (3.44 - 0.18 - 0.148 * 2.5 - 0.25) / 0.2;
  CHECK(internal_wire_length(ref, e) == doctest::Approx(L));
  // wire scales with sqrt of per-layer capacity: candidate layer is 1/16 the size
  CHECK(internal_wire_length(candidate_device(), e) == doctest::Approx(L / 4));
}

TEST_CASE("energy decomposition sums and tsv traversal") {
  auto e = default_energy_params();
  auto g = candidate_device();
  auto b = energy_per_bit(g, e);
  CHECK(b.total() == doctest::Approx(b.act + b.move + b.tsv + b.io));
  CHECK(b.act == doctest::Approx(0.18));
  CHECK(b.io == doctest::Approx(0.25));
  CHECK(mean_tsv_traversals(g) == doctest::Approx(2.5));
  CHECK(b.tsv == doctest::Approx(0.148 * 2.5));
}

TEST_CASE("energy is monotone non-decreasing in per-layer capacity") {
  auto e = default_energy_params();
  auto g = candidate_device();
  double prev = 0;
  for (uint32_t sa : {12u, 24u, 48u, 96u, 192u, 384u}) {
    g.subarrays_per_bank = sa;
    double v = energy_per_bit(g, e).total();
    CHECK(v >= prev);
    prev = v;
  }
}

TEST_CASE("cost model calibration") {
  double f = fit_fixed_cost_fraction(1.81, 64);
  CHECK(f == doctest::Approx(0.81 / 63));
  auto c = default_cost_params();
  auto cand = cost_module(candidate_device(), c);
  // device has 1/64 of the reference capacity
  CHECK(cand.cost_per_gb == doctest::Approx(1.81).epsilon(1e-6));
  auto ref = cost_module(hbm3e_reference(), c);
  CHECK(ref.cost_module == doctest::Approx(1.0));
  CHECK(ref.cost_per_gb == doctest::Approx(1.0));
}

TEST_CASE("invalid geometries are rejected") {
  auto g = candidate_device();
  g.ranks = 0;
  CHECK(check_geometry(g).has_value());
  CHECK_THROWS_AS(capacity(g), Error);
  g = candidate_device();
  g.bank_groups_per_pch = 2;
  CHECK(check_geometry(g).has_value());
  g = candidate_device();
  g.pch_data_rate = -1;
  CHECK(check_geometry(g).has_value());
  CHECK(!check_geometry(candidate_device()).has_value());
}

TEST_CASE("bw per capacity and capacity utilization") {
  CHECK(capacity_utilization(341.0, 26.7) == doctest::Approx(26.7 / 341.0));
  CHECK(capacity_utilization(10.0, 26.7) == doctest::Approx(1.0));
}

TEST_CASE("design space enumeration and pareto frontier") {
  DesignGrid grid;
  auto ds = enumerate_design_space(grid, default_energy_params(), default_cost_params());
  CHECK(ds.points.size() + ds.skipped.size() == grid.size());
  CHECK(ds.points.size() == 135);
  auto pts = at_bandwidth(ds.points, 256 * kGB);
  REQUIRE(!pts.empty());
  auto front = pareto_frontier(pts);
  REQUIRE(!front.empty());
  // frontier: no member dominated by any point at the same bandwidth
  for (const auto& f : front) {
    for (const auto& p : pts) {
      bool dom = p.metrics.pj_per_bit <= f.metrics.pj_per_bit && p.metrics.capacity >= f.metrics.capacity &&
                 (p.metrics.pj_per_bit < f.metrics.pj_per_bit || p.metrics.capacity > f.metrics.capacity);
      CHECK_FALSE(dom);
    }
  }
  // sorted by capacity and energy rises with capacity along the frontier
  for (std::size_t i = 1; i < front.size(); ++i) {
    CHECK(front[i].metrics.capacity > front[i - 1].metrics.capacity);
    CHECK(front[i].metrics.pj_per_bit >= front[i - 1].metrics.pj_per_bit);
  }
  bool has_768 = false;
  for (const auto& f : front)
    if (std::abs(f.metrics.capacity - 768 * kMB) < 1 && std::abs(f.metrics.bw_per_cap - 341.333) < 0.01) has_768 = true;
  CHECK(has_768);
  CHECK_THROWS_AS(pareto_frontier({}), Error);
}

TEST_CASE("dse csv has one row per point") {
  DesignGrid grid;
  auto ds = enumerate_design_space(grid, default_energy_params(), default_cost_params());
  std::ostringstream os;
  write_dse_csv(os, ds.points);
  std::string s = os.str();
  CHECK(static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')) == ds.points.size() + 1);
}
