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

#include "doctest.h"
#include "rpu/archcfg.hpp"
#include "rpu/common.hpp"

using namespace rpu;
using namespace rpu::arch;

TEST_CASE("default system closes bandwidth, capacity and ops/byte") {
  auto sys = default_system(64);
  auto r = validate(sys);
  INFO(r.to_string());
  CHECK(r.ok());
  CHECK(cu_bandwidth(sys) / kGB == doctest::Approx(512.0));
  CHECK(cu_capacity(sys) / kMB == doctest::Approx(1536.0));
  CHECK(cu_capacity(sys) / sys.cu.cores / kMB == doctest::Approx(96.0));
  CHECK(ops_per_byte(sys) == doctest::Approx(32.0));
  CHECK(total_capacity(sys) / kGB == doctest::Approx(96.0));
}

TEST_CASE("validation reports each broken invariant") {
  auto sys = default_system(8);
  sys.core.pch_bandwidth *= 2;
  auto r = validate(sys);
  CHECK_FALSE(r.ok());
  int fails = 0;
  for (const auto& c : r.checks) fails += !c.pass;
  CHECK(fails == 2);  // ops/byte and bandwidth closure
  sys = default_system(8);
  sys.ring_order = {0, 1, 2, 3, 4, 5, 6, 6};
  CHECK_FALSE(validate(sys).ok());
}

TEST_CASE("package links") {
  auto sys = default_system(8);
  CHECK(sys.link_after(0).energy_pj_per_bit == doctest::Approx(0.5));
  CHECK(sys.link_after(3).energy_pj_per_bit == doctest::Approx(1.0));
  CHECK(sys.link_after(7).energy_pj_per_bit == doctest::Approx(1.0));
  CHECK(sys.packages() == 2);
}

TEST_CASE("roofline bound") {
  auto sys = default_system(4);
  KernelShape k;
  k.bytes_from_memory = 2048.0 * 1024 * 1024;  // 2 GiB over 2 TiB/s
  k.ops = 1;
  CHECK(roofline_time(k, sys) == doctest::Approx(2.0 / 2048));
  k.ops = total_ops_per_second(sys);  // one second of compute
  CHECK(roofline_time(k, sys) == doctest::Approx(1.0));
  sys.core.pch_bandwidth = 0;
  CHECK_THROWS_AS(roofline_time(k, sys), Error);
}

TEST_CASE("provisioned power per CU") {
  auto sys = default_system(1);
  auto full = provision_power(sys, {1.0, 0.0, 0.0});
  double bits = 512.0 * kGB * 8;
  CHECK(full.per_cu.memory == doctest::Approx(bits * memory_pj_per_bit(sys) * 1e-12));
  CHECK(full.per_cu.memory == doctest::Approx(6.42).epsilon(0.01));
  auto compute = provision_power(sys, {0.0, 1.0, 0.0});
  CHECK(compute.per_cu.total() == doctest::Approx(5.0).epsilon(0.06));
  CHECK_THROWS_AS(provision_power(sys, {1.2, 0, 0}), Error);
  CHECK_THROWS_AS(provision_power(sys, {0, -0.1, 0}), Error);
}

TEST_CASE("memory dominates peak streaming power") {
  auto sys = default_system(1);
  auto p = provision_power(sys, peak_streaming_utilization(sys));
  CHECK(p.memory_share() > 0.5);
  CHECK(p.per_cu.total() == doctest::Approx(9.0909).epsilon(0.002));
}

TEST_CASE("iso tdp cu counts") {
  auto sys = default_system(1);
  CHECK(iso_tdp_cus(2800, sys) == 308);
  CHECK(iso_tdp_cus(1400, sys) == 154);
  CHECK(iso_tdp_cus(peak_streaming_power_per_cu(sys) * 10, sys) == 10);
  CHECK_THROWS_AS(iso_tdp_cus(1.0, sys), Error);
}
