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

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "doctest.h"
#include "fixtures.hpp"
#include "rpu/analysis.hpp"
#include "rpu/common.hpp"
#include "rpu/config_io.hpp"

using namespace rpu;
using namespace rpu::analysis;

namespace {

arch::SystemConfig small_system(uint32_t cus) {
  auto sys = arch::default_system(cus);
  return sys;
}

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("frontier devices share one bandwidth and rise in capacity and energy") {
  const auto f = default_frontier();
  REQUIRE(f.size() >= 2);
  for (std::size_t i = 0; i < f.size(); ++i) {
    CHECK(f[i].metrics.bandwidth == doctest::Approx(f.front().metrics.bandwidth));
    if (i) CHECK(f[i].metrics.capacity > f[i - 1].metrics.capacity);
  }
  const auto sys = with_device(arch::default_system(4), f.back().geometry);
  CHECK(sys.cu.mem_geometry == f.back().geometry);
  CHECK(sys.power.memory_pj_per_bit == 0);
}

TEST_CASE("selected SKU is the smallest frontier device the plan accepts") {
  const auto f = default_frontier();
  struct Case {
    compiler::ModelSpec m;
    uint32_t cus, batch, seq;
  };
  const Case cases[] = {
      {testing::llama3_8b(), 4, 1, 8192},   {testing::llama3_8b(), 16, 1, 8192},
      {testing::llama3_8b(), 8, 16, 32768}, {config::load_model("llama3-70b"), 64, 1, 8192},
      {config::load_model("llama3-405b"), 64, 1, 8192},
  };
  for (const auto& c : cases) {
    CAPTURE(c.m.name);
    CAPTURE(c.cus);
    const auto sys = small_system(c.cus);
    // Brute force over every frontier device in capacity order.
    auto sorted = f;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.metrics.capacity < b.metrics.capacity; });
    std::optional<std::size_t> first;
    for (std::size_t i = 0; i < sorted.size() && !first; ++i) {
      try {
        compiler::plan_sharding(c.m, with_device(sys, sorted[i].geometry), {c.batch, c.seq, 1});
        first = i;
      } catch (const Error&) {
      }
    }
    if (!first) {
      CHECK(error_of([&] { select_sku(c.m, sys, c.batch, c.seq, f); }).rfind("analysis: capacity:", 0) == 0);
      continue;
    }
    const auto s = select_sku(c.m, sys, c.batch, c.seq, f);
    CHECK(s.point.geometry == sorted[*first].geometry);
    const double cap = double(mem::capacity(s.point.geometry)) * sys.cu.devices * c.cus;
    CHECK(s.capacity == doctest::Approx(cap));
    CHECK(s.required == doctest::Approx(compiler::footprint(c.m, c.batch, c.seq).total()));
    CHECK(s.utilization == doctest::Approx(s.required / cap));
    CHECK(s.utilization <= 1.0);
  }
}

TEST_CASE("a tiny model takes the smallest device and a giant one is refused") {
  const auto f = default_frontier();
  const auto s = select_sku(testing::tiny_dense(), small_system(1), 1, 256, f);
  CHECK(s.point.metrics.capacity == doctest::Approx(f.front().metrics.capacity));
  CHECK(s.utilization < 1.0);
  CHECK(fits(testing::tiny_dense(), small_system(1), 1, 256));
  const auto e = error_of([&] { select_sku(config::load_model("llama3-405b"), small_system(4), 1, 8192, f); });
  CHECK(e.rfind("analysis: capacity:", 0) == 0);
  CHECK(e.find("llama3-405b") != std::string::npos);
  CHECK(error_of([] { select_sku(testing::tiny_dense(), small_system(1), 1, 1, {}); }).size() > 0);
}

TEST_CASE("SKU map never shrinks the device as the workload grows") {
  const auto m = config::load_model("llama4-maverick");
  const std::vector<uint32_t> batches{1, 4, 16, 64}, seqs{2048, 8192, 32768};
  const auto cells = batch_seq_map(m, small_system(64), batches, seqs, default_frontier());
  REQUIRE(cells.size() == batches.size() * seqs.size());
  auto at = [&](std::size_t b, std::size_t s) -> const MapCell& { return cells[b * seqs.size() + s]; };
  CHECK(at(0, 0).fits);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    for (std::size_t s = 0; s < seqs.size(); ++s) {
      const auto& c = at(b, s);
      CHECK(c.batch == batches[b]);
      CHECK(c.seq == seqs[s]);
      CHECK(c.sku.required == doctest::Approx(compiler::footprint(m, c.batch, c.seq).total()));
      if (!c.fits) continue;
      if (b + 1 < batches.size() && at(b + 1, s).fits)
        CHECK(at(b + 1, s).sku.point.metrics.capacity >= c.sku.point.metrics.capacity);
      if (s + 1 < seqs.size() && at(b, s + 1).fits)
        CHECK(at(b, s + 1).sku.point.metrics.capacity >= c.sku.point.metrics.capacity);
      CHECK(c.sku.point.metrics.bw_per_cap <= at(0, 0).sku.point.metrics.bw_per_cap);
    }
  }
}

TEST_CASE("step results are consistent with the simulator") {
  const auto sys = small_system(2);
  const auto r = simulate_step(testing::tiny_dense(), sys, {1, 512, 1});
  CHECK(r.stats.ok());
  CHECK(r.instructions > 0);
  CHECK(r.token.latency >= r.stats.time);
  CHECK(r.sustained_bw == doctest::Approx(r.memory_bytes / r.token.latency));
  // Memory energy is bytes times energy per bit.
  double bytes = 0;
  for (const auto& k : r.stats.kernels) bytes += k.bytes_from_memory;
  CHECK(r.stats.energy.memory == doctest::Approx(bytes * 8 * arch::memory_pj_per_bit(sys) * kPico));
  CHECK(r.sustained_bw <= arch::total_bandwidth(sys) * 1.0001);
}

TEST_CASE("energy per inference") {
  const auto m = testing::tiny_dense();
  const auto sys = small_system(2);
  const auto zero = energy_per_inference(m, sys, 1, 512, 0);
  CHECK(zero.total() == 0);
  CHECK(zero.samples == 0);
  CHECK(zero.memory_share() == 0);

  const auto e = energy_per_inference(m, sys, 1, 512, 96, 32);
  CHECK(e.tokens == 96);
  CHECK(e.samples == 3);
  const double parts = e.dynamic.memory + e.dynamic.datapath + e.dynamic.compute + e.dynamic.network + e.idle;
  CHECK(e.total() == doctest::Approx(parts));
  CHECK(e.idle == doctest::Approx(sys.power.idle_w_per_cu * sys.num_cus * e.latency));
  // A single sample standing for every step.
  const auto one = simulate_step(m, sys, {1, 512, 1});
  const auto flat = energy_per_inference(m, sys, 1, 512, 96, 96);
  CHECK(flat.dynamic.memory == doctest::Approx(96 * one.token.energy.memory));
  CHECK(flat.latency == doctest::Approx(96 * one.token.latency));
  // Longer contexts cost more.
  CHECK(e.total() >= flat.total() * 0.999);
  CHECK(error_of([&] { energy_per_inference(m, sys, 1, 512, 8, 0); }).size() > 0);

  const auto same = rescale_memory(e, 2.0, 2.0);
  CHECK(same.total() == doctest::Approx(e.total()));
  const auto r = rescale_memory(e, 1.0, 3.0);
  CHECK(r.dynamic.memory == doctest::Approx(3 * e.dynamic.memory));
  CHECK(r.dynamic.compute == e.dynamic.compute);
  CHECK(r.idle == e.idle);
  CHECK(error_of([&] { rescale_memory(e, 0.0, 1.0); }).size() > 0);
}

TEST_CASE("memory dominates energy on a weight-streaming model") {
  const auto e = energy_per_inference(testing::llama3_8b(), small_system(8), 1, 8192, 64, 64);
  CHECK(e.memory_share() > 0.5);
}

TEST_CASE("system cost") {
  const auto sys = small_system(12);
  const auto d = mem::evaluate(mem::hbm3e_reference(), mem::default_energy_params(), mem::default_cost_params());
  const SystemCostParams p;
  const auto c = cost_breakdown(sys, d, p);
  CHECK(c.cus == 12);
  CHECK(c.silicon == doctest::Approx(0.08 * 12));
  CHECK(c.memory == doctest::Approx(d.cost_module * 2 * 12));
  CHECK(c.substrate == doctest::Approx(0.1 * sys.packages()));
  CHECK(c.pcb == doctest::Approx(0.01 * 12));
  const auto n = c.normalized(c.total());
  CHECK(n.total() == doctest::Approx(1.0));
  CHECK(n.memory / n.silicon == doctest::Approx(c.memory / c.silicon));
  CHECK(error_of([&] { c.normalized(0); }).size() > 0);
}

TEST_CASE("speculative decoding arithmetic") {
  SpecDecodeModel sd;
  sd.draft = testing::tiny_dense();
  sd.target = testing::tiny_moe();
  const auto sys = small_system(2);
  const auto r = spec_decode_eval(sd, sys, 512);
  CHECK(r.window == doctest::Approx(sd.lookahead * r.draft_step + r.verify_step));
  CHECK(r.tokens_per_s == doctest::Approx(sd.accepted / r.window));
  CHECK(r.baseline_tokens_per_s == doctest::Approx(1.0 / r.target_step));
  CHECK(r.speedup == doctest::Approx(r.tokens_per_s / r.baseline_tokens_per_s));
  CHECK(r.verify_step >= r.target_step * 0.999);

  SpecDecodeModel bad = sd;
  bad.lookahead = 0;
  CHECK(error_of([&] { spec_decode_eval(bad, sys, 512); }).size() > 0);
  bad = sd;
  bad.accepted = 9;
  CHECK(error_of([&] { spec_decode_eval(bad, sys, 512); }).size() > 0);
  bad = sd;
  bad.target = config::load_model("llama3-405b");
  CHECK(error_of([&] { spec_decode_eval(bad, sys, 512); }).find("capacity:") != std::string::npos);
}

TEST_CASE("baseline comparison") {
  const auto b = config::load_baselines("h100");
  const auto& e = b.at("llama3-405b/bs1/seq8192");
  RpuResult r{"llama3-405b", 1, 8192, 428, e.latency_s, e.energy_j};
  auto c = compare_baseline(r, b);
  CHECK(c.key == e.key);
  CHECK(c.speedup == doctest::Approx(1));
  CHECK(c.energy_ratio == doctest::Approx(1));
  CHECK(c.edp_ratio == doctest::Approx(1));
  r.latency /= 4;
  r.energy /= 2;
  c = compare_baseline(r, b);
  CHECK(c.speedup == doctest::Approx(4));
  CHECK(c.energy_ratio == doctest::Approx(2));
  CHECK(c.edp_ratio == doctest::Approx(8));
  r.seq = 123;
  CHECK(error_of([&] { compare_baseline(r, b); }).find("llama3-405b/bs1/seq123") != std::string::npos);
}

TEST_CASE("strong scaling of a small model") {
  const auto m = testing::tiny_dense();
  const std::vector<uint32_t> cus{4, 1, 2};
  const auto pts = strong_scaling(m, small_system(1), cus, {1, 512, 1}, default_frontier(), 2);
  REQUIRE(pts.size() == 3);
  CHECK(pts[0].cus == 4);
  for (const auto& p : pts) {
    CHECK(p.fits);
    CHECK(p.latency > 0);
    CHECK(p.broadcast_share >= 0);
    CHECK(p.broadcast_share <= 1);
    CHECK(p.plateau == (p.broadcast_share >= 0.5));
  }
  CHECK(pts[1].speedup == doctest::Approx(1));
  CHECK(pts[2].speedup == doctest::Approx(pts[1].latency / pts[2].latency));

  const auto big = strong_scaling(config::load_model("llama3-70b"), small_system(1), {1}, {1, 8192, 1},
                                  default_frontier());
  CHECK_FALSE(big[0].fits);
  CHECK(big[0].note.find("capacity:") != std::string::npos);
  CHECK(big[0].speedup == 0);
}

TEST_CASE("parallel_for covers every index and reports the lowest failure") {
  for (unsigned jobs : {0u, 1u, 3u, 16u}) {
    std::vector<std::atomic<int>> hits(50);
    parallel_for(hits.size(), jobs, [&](std::size_t i) { hits[i]++; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](const auto& h) { return h.load() == 1; }));
    try {
      parallel_for(40, jobs, [](std::size_t i) {
        if (i == 7 || i == 31) throw std::runtime_error("fail " + std::to_string(i));
      });
      FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()) == "fail 7");
    }
  }
  parallel_for(0, 4, [](std::size_t) { FAIL("no work expected"); });
}

TEST_CASE("batch sweep bookkeeping") {
  const auto pts = batch_scaling(testing::tiny_dense(), small_system(2), 512, {1, 4}, 2);
  REQUIRE(pts.size() == 2);
  for (const auto& p : pts) {
    CHECK(p.tokens_per_s_per_query == doctest::Approx(1.0 / p.latency));
    CHECK(p.tokens_per_s == doctest::Approx(p.batch * p.tokens_per_s_per_query));
    CHECK(p.compute_bound == (p.compute_util > p.memory_util));
  }
  CHECK(pts[1].tokens_per_s > pts[0].tokens_per_s);
}

TEST_SUITE("slow") {
  TEST_CASE("Llama4 stays memory-bound up to batch 128 at defaults") {
    const auto sys0 = config::load_system("default");
    for (const char* name : {"llama4-scout", "llama4-maverick"}) {
      CAPTURE(name);
      const auto m = config::load_model(name);
      const auto sku = select_sku(m, sys0, 128, 8192, default_frontier());
      const auto pts = batch_scaling(m, with_device(sys0, sku.point.geometry), 8192, {1, 8, 32, 128}, 4);
      for (const auto& p : pts) {
        CAPTURE(p.batch);
        CAPTURE(p.memory_util);
        CHECK_FALSE(p.compute_bound);
        if (p.batch <= 32 || std::string(name) == "llama4-scout") CHECK(p.memory_util >= 0.80);
        CHECK(p.memory_util >= 0.75);
      }
      CHECK(pts.back().tokens_per_s > pts.front().tokens_per_s);
    }
  }

  TEST_CASE("Llama3-405B turns compute-bound past batch 8") {
    const auto sys0 = config::load_system("default");
    const auto m = config::load_model("llama3-405b");
    const auto sku = select_sku(m, sys0, 16, 8192, default_frontier());
    const auto pts = batch_scaling(m, with_device(sys0, sku.point.geometry), 8192, {1, 16}, 2);
    CHECK_FALSE(pts[0].compute_bound);
    CHECK(pts[1].compute_bound);
  }
}
