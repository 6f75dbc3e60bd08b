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
#include <random>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "rpu/common.hpp"
#include "rpu/compiler.hpp"
#include "rpu/simcore.hpp"

using namespace rpu;
using compiler::ModelSpec;
using testing::random_model;

TEST_CASE("published parameter counts") {
  // Independent totals for the Llama 3.1 family (untied embeddings).
  CHECK(testing::llama3_8b().total_params() == doctest::Approx(8.03e9).epsilon(0.01));
  ModelSpec m70 = testing::llama3_8b();
  m70.layers = 80;
  m70.hidden = 8192;
  m70.heads = 64;
  m70.ffn = 28672;
  CHECK(m70.total_params() == doctest::Approx(70.55e9).epsilon(0.01));
  ModelSpec m405 = m70;
  m405.layers = 126;
  m405.hidden = 16384;
  m405.heads = 128;
  m405.ffn = 53248;
  CHECK(m405.total_params() == doctest::Approx(405.85e9).epsilon(0.01));
}

TEST_CASE("kv cache footprint") {
  const auto m = testing::llama3_8b();
  // 2 (K,V) x 32 layers x 8 heads x 128 dims x 2 bytes = 128 KiB per token.
  CHECK(compiler::footprint(m, 1, 1).kv == 131072.0);
  CHECK(compiler::footprint(m, 4, 8192).kv == 4.0 * 8192 * 131072.0);
  CHECK(compiler::footprint(m, 1, 0).kv == 0);
}

TEST_CASE("model checks name the broken invariant") {
  auto m = testing::tiny_dense();
  m.heads = 7;
  CHECK_THROWS_WITH_AS(compiler::check_model(m), doctest::Contains("kv_heads"), Error);
  m = testing::tiny_dense();
  m.hidden = 100;
  CHECK_THROWS_WITH_AS(compiler::check_model(m), doctest::Contains("hidden"), Error);
  m = testing::tiny_moe();
  m.top_k = 9;
  CHECK_THROWS_WITH_AS(compiler::check_model(m), doctest::Contains("top_k"), Error);
}

TEST_CASE("column shards cover every column exactly once") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const uint64_t K = 64 * (1 + rng() % 64), N = 1 + rng() % 20000;
    const uint32_t cpc = 16, cores = cpc * (1 + rng() % 8);
    const auto lp = compiler::shard_linear("w", K, N, 0, cores, cpc);
    CAPTURE(N);
    CAPTURE(cores);
    CHECK(lp.total_cols() == N);
    std::vector<uint32_t> cover(N, 0);
    for (const auto& s : lp.shards)
      if (s.row_group_index == 0)
        for (uint32_t c = s.col_begin; c < s.col_begin + s.cols; ++c) cover[c]++;
    CHECK(std::all_of(cover.begin(), cover.end(), [](uint32_t c) { return c == 1; }));
  }
}

TEST_CASE("capacity errors report the deficit") {
  auto sys = arch::default_system(1);
  CHECK_THROWS_WITH_AS(compiler::plan_sharding(testing::llama3_8b(), sys), doctest::Contains("deficit"), Error);
}

TEST_CASE("every compiled program validates") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 12; ++i) {
    const auto m = random_model(rng, i % 3 == 2);
    const auto sys = arch::default_system(1 + rng() % 4);
    compiler::LowerOptions o;
    o.workload = {uint32_t(1 + rng() % 8), uint32_t(128 + rng() % 4096), rng()};
    const auto p = compiler::compile(m, sys, o);
    const auto rep = isa::validate_program(p);
    CAPTURE(rep.to_string());
    CHECK(rep.ok());
    CHECK(isa::decode(isa::encode(p)) == p);
  }
}

TEST_CASE("randomized kernels never beat their roofline") {
  std::mt19937_64 rng(7);
  std::size_t kernels = 0;
  int programs = 0;
  while (kernels < 150) {
    const auto m = random_model(rng, programs % 4 == 3);
    const auto sys = arch::default_system(1 + rng() % 4);
    compiler::LowerOptions o;
    o.workload = {uint32_t(1 + rng() % 16), uint32_t(64 + rng() % 8192), rng()};
    const auto p = compiler::compile(m, sys, o);
    const auto st = sim::simulate(p, sys);
    REQUIRE(st.ok());
    ++programs;
    for (const auto& k : st.kernels) {
      if (k.end <= k.start) continue;
      CAPTURE(k.name);
      CHECK(k.duration() >= k.roofline * (1 - 1e-9));
      ++kernels;
    }
  }
  CHECK(kernels >= 100);
}

TEST_CASE("batch-1 dense layers stream at the bandwidth bound") {
  // Oracle: weight and KV bytes of one layer over the aggregate pCH bandwidth.
  const auto m = testing::llama3_8b();
  const auto sys = arch::default_system(64);
  const double h = m.hidden, kvd = double(m.kv_heads) * m.head_dim;
  const double params = h * (h + 2 * kvd) + h * h + 3 * h * m.ffn;
  const double bits = 4 + 8.0 / 32;  // 4-bit elements plus an 8-bit exponent per 32
  const uint32_t seq = 16384;
  const double bytes = params * bits / 8 + 2 * kvd * seq * 2;
  const double bw = 64.0 * 16 * 32 * kGB;
  compiler::LowerOptions o;
  o.workload = {1, seq, 1};
  const auto p = compiler::compile(m, sys, o);
  const auto st = sim::simulate(p, sys);
  REQUIRE(st.ok());
  const auto tok = sim::extrapolate(st, p, sys);
  CHECK(tok.steady_layer >= bytes / bw);
  CHECK(tok.steady_layer <= 1.10 * bytes / bw);
  CHECK(st.util_memory > 0.9);
}

TEST_CASE("large batches run in slices that fit the receive buffer") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 6; ++i) {
    auto m = i % 2 ? testing::tiny_moe() : random_model(rng, true);
    const auto sys = arch::default_system(1 + rng() % 4);
    const uint32_t batch = 64u << (rng() % 3);
    CAPTURE(m.hidden);
    CAPTURE(batch);
    compiler::LowerOptions o;
    o.workload = {batch, uint32_t(256 + rng() % 1024), rng()};
    const auto p = compiler::compile(m, sys, o);
    CHECK(isa::validate_program(p).ok());
    const bool moe_sliced = uint64_t(m.hidden) * 2 * batch > sys.core.net_buffer / 2;
    bool split = false;
    std::set<std::string> names;
    for (const auto& k : p.kernels) {
      split |= k.name.find("moe.split") != std::string::npos;
      CHECK(names.insert(k.name).second);
    }
    CHECK(split == moe_sliced);
    const auto st = sim::simulate(p, sys);
    CAPTURE(st.stalled ? st.stalled->to_string().substr(0, 400) : "");
    CHECK(st.ok());
    CHECK(st.max_valid_count <= 3);
  }
}
