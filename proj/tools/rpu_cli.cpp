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

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <array>
#include <functional>
#include <map>
#include <sstream>

#include "rpu/analysis.hpp"
#include "rpu/archcfg.hpp"
#include "rpu/common.hpp"
#include "rpu/compiler.hpp"
#include "rpu/config_io.hpp"
#include "rpu/isa.hpp"
#include "rpu/memmodel.hpp"
#include "rpu/plot.hpp"
#include "rpu/simcore.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace rpu;

namespace {

struct Options {
  std::string out_dir;
  unsigned jobs = 1;
  uint64_t seed = 1;
  std::string model;
  std::string system = "default";
  uint32_t cus = 0;
  std::string sku = "config";
  uint32_t batch = 1;
  uint32_t seq = 8192;
  uint32_t layers = 0;
  std::vector<std::string> sets, model_sets;
  std::string program, grid = "default", manifest, trace, baselines;
  bool coupled = false, keep_trace = false, disasm = false;
  double window_ns = 1000;
};

std::string fmt(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

config::Overrides overrides(const std::vector<std::string>& sets) {
  config::Overrides ov;
  for (const auto& s : sets) ov.push_back(config::parse_override(s));
  return ov;
}

fs::path out_file(const Options& o, const std::string& name) {
  fs::path dir = o.out_dir;
  fs::create_directories(dir);
  return dir / name;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cli", "cannot write '" + p.string() + "'");
  f << text;
}

std::string stamp(const std::string& hash) {
  return std::string("rpu ") + kToolVersion + " config " + hash;
}

struct Setup {
  compiler::ModelSpec model;
  arch::SystemConfig sys;
  compiler::Workload work;
  std::string hash;
};

arch::SystemConfig load_system(const Options& o) {
  auto sys = config::load_system(o.system, overrides(o.sets));
  if (o.cus) sys.num_cus = o.cus;
  return sys;
}

void choose_sku(const Options& o, const compiler::ModelSpec& m, arch::SystemConfig& sys,
                const compiler::Workload& w) {
  if (o.sku == "config") return;
  if (o.sku == "auto") {
    const auto c = analysis::select_sku(m, sys, w.batch, w.seq, analysis::default_frontier());
    sys = analysis::with_device(sys, c.point.geometry);
    return;
  }
  sys = analysis::with_device(sys, config::geometry_from_yaml_text(o.sku));
}

Setup setup(const Options& o) {
  if (o.model.empty()) throw Error("cli", "--model is required");
  Setup s;
  s.model = config::load_model(o.model, overrides(o.model_sets));
  s.sys = load_system(o);
  s.work = {o.batch, o.seq, o.seed};
  choose_sku(o, s.model, s.sys, s.work);
  s.hash = config::config_hash(config::model_to_yaml(s.model) + config::system_to_yaml(s.sys) + "batch=" +
                               std::to_string(o.batch) + "\nseq=" + std::to_string(o.seq) + "\nseed=" +
                               std::to_string(o.seed) + "\nlayers=" + std::to_string(o.layers) + "\n");
  return s;
}

compiler::LowerOptions lower_options(const Options& o, const Setup& s) {
  compiler::LowerOptions l;
  l.workload = s.work;
  l.sim_layers = o.layers;
  return l;
}

// ---------------------------------------------------------------------------

int cmd_mem_dse(const Options& o) {
  const auto grid = config::load_grid(o.grid);
  const std::string hash = config::config_hash(config::grid_to_yaml(grid));
  auto ds = mem::enumerate_design_space(grid, mem::default_energy_params(), mem::default_cost_params());
  mem::mark_pareto(ds.points);
  std::ostringstream csv;
  csv << "# " << stamp(hash) << "\n";
  mem::write_dse_csv(csv, ds.points);
  write_text(out_file(o, "dse.csv"), csv.str());

  std::map<double, plot::Series> by_bw;
  for (const auto& p : ds.points) {
    if (!p.pareto) continue;
    auto& s = by_bw[p.metrics.bandwidth];
    s.name = fmt(p.metrics.bandwidth / kGB, 4) + " GB/s";
    s.x.push_back(p.metrics.capacity / kGB);
    s.y.push_back(p.metrics.pj_per_bit);
  }
  std::vector<plot::Series> series;
  for (auto& [bw, s] : by_bw) series.push_back(s);
  plot::ChartOptions opt;
  opt.title = "Pareto frontier per device bandwidth";
  opt.x_label = "capacity (GB)";
  opt.y_label = "energy (pJ/bit)";
  opt.log_x = true;
  opt.meta = stamp(hash);
  write_text(out_file(o, "pareto.svg"), plot::line_chart(series, opt));

  std::size_t pareto = 0;
  for (const auto& p : ds.points) pareto += p.pareto;
  std::cout << "points " << ds.points.size() << " skipped " << ds.skipped.size() << " pareto " << pareto
            << " config " << hash << "\n";
  for (const auto& sk : ds.skipped) std::cout << "skipped: " << sk.reason << "\n";
  return 0;
}

int cmd_compile(const Options& o) {
  const auto s = setup(o);
  const auto plan = compiler::plan_sharding(s.model, s.sys, s.work);
  const auto prog = compiler::lower(s.model, plan, s.sys, lower_options(o, s));
  const auto rep = isa::validate_program(prog);
  const auto bytes = isa::encode(prog);
  {
    std::ofstream f(out_file(o, "program.rpup"), std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  std::ostringstream csv;
  csv << "# " << stamp(s.hash) << "\n";
  compiler::write_shard_csv(csv, plan);
  write_text(out_file(o, "shards.csv"), csv.str());
  if (o.disasm) write_text(out_file(o, "program.txt"), "; " + stamp(s.hash) + "\n" + isa::disassemble(prog));
  std::cout << "program " << prog.instruction_count() << " instructions on " << prog.cores.size()
            << " cores, layers " << prog.simulated_layers << "/" << prog.model_layers << ", stream "
            << hex64(isa::stream_hash(prog)) << ", config " << s.hash << "\n";
  if (!rep.ok()) throw Error("cli", "compiled program failed validation: " + rep.to_string());
  return 0;
}

json energy_json(const sim::EnergyStats& e) {
  return {{"memory_j", e.memory}, {"datapath_j", e.datapath}, {"compute_j", e.compute}, {"network_j", e.network}};
}

int cmd_simulate(const Options& o) {
  Setup s;
  isa::Program prog;
  if (!o.program.empty()) {
    std::ifstream f(o.program, std::ios::binary);
    if (!f) throw Error("cli", "cannot open '" + o.program + "'");
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    prog = isa::decode(bytes);
    s.sys = load_system(o);
    if (!o.cus) s.sys.num_cus = prog.num_cus;
    if (s.sys.num_cus != prog.num_cus)
      throw Error("cli", "program targets " + std::to_string(prog.num_cus) + " CUs but the system has " +
                             std::to_string(s.sys.num_cus));
    if (o.sku != "config" && o.sku != "auto") s.sys = analysis::with_device(s.sys, config::geometry_from_yaml_text(o.sku));
    s.hash = config::config_hash(config::system_to_yaml(s.sys) + hex64(isa::stream_hash(prog)));
  } else {
    s = setup(o);
    prog = compiler::compile(s.model, s.sys, lower_options(o, s));
  }
  sim::SimConfig cfg;
  cfg.decoupled = !o.coupled;
  std::ofstream trace;
  if (o.keep_trace) {
    trace.open(out_file(o, "trace.jsonl"));
    cfg.trace_out = &trace;
  }
  const auto st = sim::simulate(prog, s.sys, cfg);
  json j;
  j["tool_version"] = kToolVersion;
  j["config_hash"] = s.hash;
  j["num_cus"] = s.sys.num_cus;
  j["decoupled"] = cfg.decoupled;
  j["simulated_layers"] = prog.simulated_layers;
  j["model_layers"] = prog.model_layers;
  j["sim_time_s"] = st.time;
  j["events"] = st.events;
  j["trace_hash"] = hex64(st.trace_hash);
  j["utilization"] = {{"memory", st.util_memory}, {"compute", st.util_compute}, {"network", st.util_network}};
  j["buffer_bytes"] = {{"peak", st.buffer_peak}, {"mean", st.buffer_mean}};
  j["energy"] = energy_json(st.energy);
  json stalls;
  for (int i = 0; i < sim::kStallKinds; ++i) stalls[sim::to_string(static_cast<sim::Stall>(i))] = st.stall[i];
  j["stall_core_s"] = stalls;
  j["max_valid_count"] = st.max_valid_count;
  j["counter_violations"] = st.counter_violations;
  if (!st.stalled) {
    const auto tok = sim::extrapolate(st, prog, s.sys);
    j["token"] = {{"latency_s", tok.latency},
                  {"steady_layer_s", tok.steady_layer},
                  {"energy", energy_json(tok.energy)},
                  {"idle_j", tok.idle_energy},
                  {"total_j", tok.total_energy()}};
  } else {
    j["stall_report"] = st.stalled->to_string();
  }
  write_text(out_file(o, "stats.json"), j.dump(2) + "\n");

  std::ostringstream csv;
  csv << "# " << stamp(s.hash) << "\n";
  csv << "layer,kernel,kind,start_s,end_s,duration_s,roofline_s,ops,bytes_from_memory,cores\n";
  csv.precision(9);
  for (const auto& k : st.kernels)
    csv << k.layer << "," << k.name << "," << arch::to_string(static_cast<arch::KernelKind>(k.kind)) << ","
        << k.start << "," << k.end << "," << k.duration() << "," << k.roofline << "," << k.ops << ","
        << k.bytes_from_memory << "," << k.cores << "\n";
  write_text(out_file(o, "kernels.csv"), csv.str());
  plot::ChartOptions opt;
  opt.title = "Kernel timeline";
  opt.meta = stamp(s.hash);
  write_text(out_file(o, "timeline.svg"), plot::timeline(st.kernels, opt));

  if (st.stalled) throw Error("simcore", "simulation stalled; see stats.json");
  std::cout << "latency " << fmt(j["token"]["latency_s"].get<double>() * 1e3) << " ms/token, memory util "
            << fmt(st.util_memory, 4) << ", events " << st.events << ", trace " << hex64(st.trace_hash)
            << ", config " << s.hash << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

bool cell_less(const std::string& a, const std::string& b) {
  char* ea = nullptr;
  char* eb = nullptr;
  const double x = std::strtod(a.c_str(), &ea), y = std::strtod(b.c_str(), &eb);
  if (!a.empty() && !b.empty() && *ea == 0 && *eb == 0) return x < y;
  return a < b;
}

bool row_less(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    if (cell_less(a[i], b[i])) return true;
    if (cell_less(b[i], a[i])) return false;
  }
  return a.size() < b.size();
}

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::string csv(const std::string& stamp_line) const {
    std::ostringstream os;
    os << "# " << stamp_line << "\n";
    for (std::size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
    os << "\n";
    auto sorted = rows;
    std::stable_sort(sorted.begin(), sorted.end(), row_less);
    for (const auto& r : sorted) {
      for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
      os << "\n";
    }
    return os.str();
  }
};

arch::SystemConfig manifest_system(const config::Manifest& m, const Options& o) {
  auto sys = config::load_system(m.get("system", "default"), overrides(o.sets));
  if (const auto c = m.uint("cus", 0); c && m.uints("cus").size() == 1) sys.num_cus = c;
  return sys;
}

void sweep_strong_scaling(const config::Manifest& mf, const Options& o, Table& t, std::vector<plot::Series>& plot) {
  t.header = {"model", "cus", "fits", "sku_mib", "latency_ms", "speedup", "sustained_tib_s", "broadcast_share",
              "plateau", "note"};
  const auto base = manifest_system(mf, o);
  const auto fr = analysis::default_frontier();
  const compiler::Workload w{mf.uint("batch", 1), mf.uint("seq", 8192), o.seed};
  auto models = mf.list("models");
  if (models.empty()) models = mf.list("model");
  for (const auto& name : models) {
    const auto m = config::load_model(name);
    const auto pts = analysis::strong_scaling(m, base, mf.uints("cus"), w, fr, o.jobs);
    plot::Series s{name, {}, {}};
    for (const auto& p : pts) {
      t.rows.push_back({name, std::to_string(p.cus), p.fits ? "1" : "0", fmt(p.sku.point.metrics.capacity / (1 << 20)),
                        fmt(p.latency * 1e3), fmt(p.speedup), fmt(p.sustained_bw / kTB), fmt(p.broadcast_share, 3),
                        p.plateau ? "1" : "0", "\"" + p.note + "\""});
      if (p.fits) s.x.push_back(p.cus), s.y.push_back(p.latency * 1e3);
    }
    plot.push_back(s);
  }
}

void sweep_energy(const config::Manifest& mf, const Options& o, Table& t, std::vector<plot::Series>& plot) {
  t.header = {"cus", "sku_mib", "pj_per_bit", "energy_j", "memory_j", "datapath_j", "compute_j", "network_j",
              "idle_j", "memory_share", "reference_energy_j", "improvement"};
  const auto m = config::load_model(mf.get("model"));
  const auto base = config::load_system(mf.get("system", "default"), overrides(o.sets));
  const auto fr = analysis::default_frontier();
  const uint32_t batch = mf.uint("batch", 1), seq = mf.uint("seq", 8192);
  const uint32_t tokens = mf.uint("decode_tokens", 2048), stride = mf.uint("stride", 64);
  const double ref = mf.number("reference_pj_per_bit", mem::kHbm3eReportedPjPerBit);
  const auto cus = mf.uints("cus");
  std::vector<std::vector<std::string>> rows(cus.size());
  plot::Series rpu{"capacity-optimized", {}, {}}, hbm{"HBM3e energy/bit", {}, {}};
  std::vector<std::array<double, 3>> pts(cus.size());
  analysis::parallel_for(cus.size(), o.jobs, [&](std::size_t i) {
    auto sys = base;
    sys.num_cus = cus[i];
    const auto sku = analysis::select_sku(m, sys, batch, seq, fr);
    sys = analysis::with_device(sys, sku.point.geometry);
    const auto e = analysis::energy_per_inference(m, sys, batch, seq, tokens, stride);
    const double pj = arch::memory_pj_per_bit(sys);
    const auto h = analysis::rescale_memory(e, pj, ref);
    rows[i] = {std::to_string(cus[i]), fmt(sku.point.metrics.capacity / (1 << 20)), fmt(pj, 4), fmt(e.total()),
               fmt(e.dynamic.memory), fmt(e.dynamic.datapath), fmt(e.dynamic.compute), fmt(e.dynamic.network),
               fmt(e.idle), fmt(e.memory_share(), 4), fmt(h.total()), fmt(h.total() / e.total(), 4)};
    pts[i] = {double(cus[i]), e.total(), h.total()};
  });
  for (std::size_t i = 0; i < cus.size(); ++i) {
    t.rows.push_back(rows[i]);
    rpu.x.push_back(pts[i][0]), rpu.y.push_back(pts[i][1]);
    hbm.x.push_back(pts[i][0]), hbm.y.push_back(pts[i][2]);
  }
  plot = {rpu, hbm};
}

void sweep_cost(const config::Manifest& mf, const Options& o, Table& t, std::vector<plot::Series>& plot) {
  t.header = {"cus", "sku_mib", "silicon", "memory", "substrate", "pcb", "total", "hbm3e_total", "reduction"};
  const auto m = config::load_model(mf.get("model"));
  const auto base = config::load_system(mf.get("system", "default"), overrides(o.sets));
  const auto fr = analysis::default_frontier();
  const uint32_t batch = mf.uint("batch", 1), seq = mf.uint("seq", 8192);
  const auto hbm = mem::evaluate(mem::hbm3e_reference(), mem::default_energy_params(), mem::default_cost_params());
  std::vector<analysis::CostBreakdown> costs, fixed;
  std::vector<double> sku_mib;
  for (auto c : mf.uints("cus")) {
    auto sys = base;
    sys.num_cus = c;
    analysis::SkuChoice sku;
    try {
      sku = analysis::select_sku(m, sys, batch, seq, fr);
    } catch (const Error&) {
      continue;
    }
    costs.push_back(analysis::cost_breakdown(sys, sku.point.metrics));
    fixed.push_back(analysis::cost_breakdown(sys, hbm));
    sku_mib.push_back(sku.point.metrics.capacity / (1 << 20));
  }
  if (costs.empty()) throw Error("analysis", "no scale in the manifest holds the model");
  const double ref = costs.front().total();
  plot::Series a{"capacity-optimized", {}, {}}, b{"fixed HBM3e", {}, {}};
  for (std::size_t i = 0; i < costs.size(); ++i) {
    const auto n = costs[i].normalized(ref), f = fixed[i].normalized(ref);
    t.rows.push_back({std::to_string(n.cus), fmt(sku_mib[i]), fmt(n.silicon), fmt(n.memory), fmt(n.substrate), fmt(n.pcb),
                      fmt(n.total()), fmt(f.total()), fmt(f.total() / n.total(), 4)});
    a.x.push_back(n.cus), a.y.push_back(n.total());
    b.x.push_back(n.cus), b.y.push_back(f.total());
  }
  plot = {a, b};
}

void sweep_spec_decode(const config::Manifest& mf, const Options& o, Table& t) {
  t.header = {"draft", "target", "cus", "lookahead", "accepted", "draft_ms", "verify_ms", "target_ms", "window_ms",
              "tokens_per_s", "speedup"};
  analysis::SpecDecodeModel sd;
  sd.draft = config::load_model(mf.get("draft"));
  sd.target = config::load_model(mf.get("target"));
  sd.lookahead = mf.uint("lookahead", 8);
  sd.accepted = mf.number("accepted", 4.6);
  const auto sys = manifest_system(mf, o);
  const auto r = analysis::spec_decode_eval(sd, sys, mf.uint("seq", 8192));
  t.rows.push_back({sd.draft.name, sd.target.name, std::to_string(sys.num_cus), std::to_string(sd.lookahead),
                    fmt(sd.accepted), fmt(r.draft_step * 1e3), fmt(r.verify_step * 1e3), fmt(r.target_step * 1e3),
                    fmt(r.window * 1e3), fmt(r.tokens_per_s), fmt(r.speedup, 4)});
}

void sweep_map(const config::Manifest& mf, const Options& o, Table& t, const std::string& hash) {
  t.header = {"batch", "seq", "fits", "required_gb", "sku_mib", "bw_per_cap", "utilization"};
  const auto m = config::load_model(mf.get("model"));
  const auto sys = manifest_system(mf, o);
  const auto batches = mf.uints("batches"), seqs = mf.uints("seqs");
  const auto cells = analysis::batch_seq_map(m, sys, batches, seqs, analysis::default_frontier());
  std::vector<std::string> rows, cols;
  std::vector<std::vector<double>> v(batches.size(), std::vector<double>(seqs.size(), std::nan("")));
  for (auto b : batches) rows.push_back("BS" + std::to_string(b));
  for (auto s : seqs) cols.push_back(std::to_string(s));
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& c = cells[i];
    t.rows.push_back({std::to_string(c.batch), std::to_string(c.seq), c.fits ? "1" : "0", fmt(c.sku.required / kGB),
                      c.fits ? fmt(c.sku.point.metrics.capacity / (1 << 20)) : "", c.fits ? fmt(c.sku.point.metrics.bw_per_cap) : "",
                      c.fits ? fmt(c.sku.utilization, 4) : ""});
    if (c.fits) v[i / seqs.size()][i % seqs.size()] = c.sku.point.metrics.bw_per_cap;
  }
  plot::ChartOptions opt;
  opt.title = "Selected device BW/Cap for " + m.name + " on " + std::to_string(sys.num_cus) + " CUs";
  opt.x_label = "sequence length";
  opt.y_label = "batch";
  opt.meta = stamp(hash);
  write_text(out_file(o, "map.svg"), plot::heatmap(rows, cols, v, opt));
}

void sweep_batch(const config::Manifest& mf, const Options& o, Table& t, std::vector<plot::Series>& plot) {
  t.header = {"batch", "latency_ms", "tokens_per_s", "tokens_per_s_per_query", "memory_util", "compute_util",
              "compute_bound"};
  const auto m = config::load_model(mf.get("model"));
  const auto sys = manifest_system(mf, o);
  const auto pts = analysis::batch_scaling(m, sys, mf.uint("seq", 8192), mf.uints("batches"), o.jobs);
  plot::Series s{m.name, {}, {}};
  for (const auto& p : pts) {
    t.rows.push_back({std::to_string(p.batch), fmt(p.latency * 1e3), fmt(p.tokens_per_s), fmt(p.tokens_per_s_per_query),
                      fmt(p.memory_util, 4), fmt(p.compute_util, 4), p.compute_bound ? "1" : "0"});
    s.x.push_back(p.batch), s.y.push_back(p.tokens_per_s);
  }
  plot = {s};
}

void sweep_baseline(const config::Manifest& mf, const Options& o, Table& t) {
  t.header = {"model", "tdp_w", "cus", "sku_mib", "latency_ms", "energy_j", "speedup", "energy_ratio", "edp_ratio"};
  const auto b = config::load_baselines(mf.get("baselines", "h100"));
  const auto base = config::load_system(mf.get("system", "default"), overrides(o.sets));
  const auto models = mf.list("models");
  const auto tdps = mf.list("tdp_w");
  if (models.size() != tdps.size()) throw Error("analysis", "baseline manifest needs one tdp_w per model");
  const uint32_t batch = mf.uint("batch", 1), seq = mf.uint("seq", 8192);
  const auto fr = analysis::default_frontier();
  for (std::size_t i = 0; i < models.size(); ++i) {
    const auto m = config::load_model(models[i]);
    const double tdp = std::stod(tdps[i]);
    auto sys = base;
    sys.num_cus = arch::iso_tdp_cus(tdp, base);
    const auto sku = analysis::select_sku(m, sys, batch, seq, fr);
    sys = analysis::with_device(sys, sku.point.geometry);
    const auto r = analysis::simulate_step(m, sys, {batch, seq, o.seed});
    analysis::RpuResult res{models[i], batch, seq, sys.num_cus, r.token.latency, r.token.total_energy()};
    const auto c = analysis::compare_baseline(res, b);
    t.rows.push_back({models[i], fmt(tdp), std::to_string(sys.num_cus), fmt(sku.point.metrics.capacity / (1 << 20)),
                      fmt(res.latency * 1e3), fmt(res.energy), fmt(c.speedup, 4), fmt(c.energy_ratio, 4),
                      fmt(c.edp_ratio, 4)});
  }
}

int cmd_sweep(const Options& o) {
  if (o.manifest.empty()) throw Error("cli", "--manifest is required");
  const auto mf = config::load_manifest(o.manifest);
  const std::string hash = config::config_hash(mf.source + "seed=" + std::to_string(o.seed) + "\n" +
                                               (o.sets.empty() ? "" : "sets=" + std::to_string(o.sets.size())));
  Table t;
  std::vector<plot::Series> series;
  plot::ChartOptions opt;
  opt.meta = stamp(hash);
  const auto& e = mf.experiment;
  if (e == "strong_scaling") {
    sweep_strong_scaling(mf, o, t, series);
    opt = {"Strong scaling", "CUs", "ms/token", true, true, true, stamp(hash)};
  } else if (e == "energy") {
    sweep_energy(mf, o, t, series);
    opt = {"Energy per inference", "CUs", "J", false, false, true, stamp(hash)};
  } else if (e == "cost") {
    sweep_cost(mf, o, t, series);
    opt = {"Normalized system cost", "CUs", "cost", false, true, true, stamp(hash)};
  } else if (e == "spec_decode") {
    sweep_spec_decode(mf, o, t);
  } else if (e == "batch_seq_map") {
    sweep_map(mf, o, t, hash);
  } else if (e == "batch_scaling") {
    sweep_batch(mf, o, t, series);
    opt = {"Batch scaling", "batch", "tokens/s", true, true, true, stamp(hash)};
  } else if (e == "baseline") {
    sweep_baseline(mf, o, t);
  } else {
    throw Error("cli", "unknown experiment '" + e + "'");
  }
  write_text(out_file(o, "results.csv"), t.csv(stamp(hash)));
  if (!series.empty()) write_text(out_file(o, "results.svg"), plot::line_chart(series, opt));
  std::cout << e << ": " << t.rows.size() << " rows, config " << hash << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_report(const Options& o) {
  if (o.trace.empty()) throw Error("cli", "--trace is required");
  std::ifstream in(o.trace);
  if (!in) throw Error("cli", "cannot open '" + o.trace + "'");
  if (!(o.window_ns > 0)) throw Error("cli", "--window-ns must be positive");
  struct Acc {
    double busy_ns = 0, bytes = 0, energy_pj = 0;
    uint64_t events = 0;
  };
  std::map<std::string, Acc> pipes;
  std::map<std::pair<int, int>, sim::KernelStats> kernels;
  std::vector<double> power;
  std::string line;
  std::string text;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    text += line;
    text += '\n';
    json r;
    try {
      r = json::parse(line);
    } catch (const json::exception&) {
      throw Error("cli", "trace line " + std::to_string(n + 1) + " is not JSON");
    }
    ++n;
    const double a = r.at("start_ns").get<double>(), b = r.at("time_ns").get<double>();
    auto& p = pipes[r.at("pipeline").get<std::string>()];
    p.busy_ns += b - a;
    p.bytes += r.at("bytes").get<double>();
    p.energy_pj += r.at("energy_pj").get<double>();
    ++p.events;
    const int layer = r.at("layer").get<int>(), kernel = r.at("kernel").get<int>();
    auto& k = kernels[{layer, kernel}];
    if (k.name.empty()) {
      k.name = "L" + std::to_string(layer) + ".k" + std::to_string(kernel);
      k.layer = static_cast<uint16_t>(layer);
      k.kind = static_cast<uint8_t>(kernel % 4);
      k.start = a * 1e-9;
    }
    k.start = std::min(k.start, a * 1e-9);
    k.end = std::max(k.end, b * 1e-9);
    const auto w = static_cast<std::size_t>(b / o.window_ns);
    if (power.size() <= w) power.resize(w + 1, 0.0);
    power[w] += r.at("energy_pj").get<double>() * 1e-12;
  }
  const std::string hash = config::config_hash(text);
  std::ostringstream csv;
  csv << "# " << stamp(hash) << "\npipeline,events,busy_ns,bytes,energy_pj\n";
  for (const auto& [name, a] : pipes)
    csv << name << "," << a.events << "," << fmt(a.busy_ns, 10) << "," << fmt(a.bytes, 12) << ","
        << fmt(a.energy_pj, 10) << "\n";
  write_text(out_file(o, "report.csv"), csv.str());
  std::ostringstream pw;
  pw << "# " << stamp(hash) << "\nwindow_start_ns,dynamic_power_w\n";
  for (std::size_t i = 0; i < power.size(); ++i)
    pw << fmt(i * o.window_ns, 10) << "," << fmt(power[i] / (o.window_ns * 1e-9)) << "\n";
  write_text(out_file(o, "power.csv"), pw.str());
  std::vector<sim::KernelStats> ks;
  for (auto& [key, k] : kernels) ks.push_back(k);
  plot::ChartOptions opt;
  opt.title = "Trace timeline";
  opt.meta = stamp(hash);
  write_text(out_file(o, "timeline.svg"), plot::timeline(ks, opt));
  std::cout << "records " << n << ", kernels " << ks.size() << ", config " << hash << "\n";
  return 0;
}

int cmd_validate(const Options& o) {
  std::vector<std::pair<std::string, std::string>> failures;
  std::size_t checks = 0;
  auto check = [&](const std::string& what, const std::function<void()>& fn) {
    ++checks;
    try {
      fn();
      std::cout << "ok   " << what << "\n";
    } catch (const std::exception& e) {
      std::cout << "FAIL " << what << ": " << e.what() << "\n";
      failures.emplace_back(what, e.what());
    }
  };
  arch::SystemConfig sys;
  check("system " + o.system, [&] {
    sys = load_system(o);
    const auto rep = arch::validate(sys);
    if (!rep.ok()) throw Error("archcfg", rep.to_string());
  });
  if (!o.model.empty()) {
    check("model " + o.model, [&] {
      const auto s = setup(o);
      compiler::plan_sharding(s.model, s.sys, s.work);
    });
  }
  if (!o.program.empty()) {
    check("program " + o.program, [&] {
      std::ifstream f(o.program, std::ios::binary);
      if (!f) throw Error("cli", "cannot open '" + o.program + "'");
      std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
      const auto rep = isa::validate_program(isa::decode(bytes));
      if (!rep.ok()) throw Error("isa", rep.to_string());
    });
  }
  if (!o.manifest.empty()) check("manifest " + o.manifest, [&] { config::load_manifest(o.manifest); });
  if (!o.baselines.empty()) check("baselines " + o.baselines, [&] { config::load_baselines(o.baselines); });
  check("grid " + o.grid, [&] { config::load_grid(o.grid); });
  if (!failures.empty())
    throw Error("cli", std::to_string(failures.size()) + " of " + std::to_string(checks) + " checks failed");
  return 0;
}

std::string single_line(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == ' ')) s.pop_back();
  for (auto& c : s)
    if (c == '\n') c = ';';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RPU memory, compiler and simulator toolkit"};
  app.set_version_flag("--version", std::string("rpu ") + kToolVersion);
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  const char* env_out = std::getenv("RPU_OUT_DIR");
  o.out_dir = env_out && *env_out ? env_out : "rpu-out";
  app.add_option("-o,--out", o.out_dir, "output directory (default $RPU_OUT_DIR or ./rpu-out)");
  app.add_option("--seed", o.seed, "MoE routing seed");
  app.add_option("-j,--jobs", o.jobs, "parallel simulations in sweeps")->check(CLI::PositiveNumber);

  auto add_system = [&](CLI::App* c) {
    c->add_option("--system", o.system, "system config name or path");
    c->add_option("--cus", o.cus, "number of compute units");
    c->add_option("--set", o.sets, "system override key=value");
  };
  auto add_model = [&](CLI::App* c) {
    c->add_option("--model", o.model, "model config name or path");
    c->add_option("--model-set", o.model_sets, "model override key=value");
    c->add_option("--batch", o.batch, "batch size")->check(CLI::PositiveNumber);
    c->add_option("--seq", o.seq, "tokens in the KV cache");
    c->add_option("--layers", o.layers, "layers to simulate (0 = three layer periods)");
    c->add_option("--sku", o.sku, "memory device: config, auto, hbm3e, candidate");
  };

  auto* dse = app.add_subcommand("mem-dse", "enumerate memory designs and their Pareto frontier");
  dse->add_option("--grid", o.grid, "grid config name or path");
  auto* comp = app.add_subcommand("compile", "compile a model into a program container");
  add_system(comp);
  add_model(comp);
  comp->add_flag("--disasm", o.disasm, "also write a disassembly");
  auto* simc = app.add_subcommand("simulate", "simulate one decode step");
  add_system(simc);
  add_model(simc);
  simc->add_option("--program", o.program, "program container from compile");
  simc->add_flag("--coupled", o.coupled, "disable pipeline decoupling");
  simc->add_flag("--trace", o.keep_trace, "write trace.jsonl");
  auto* sweep = app.add_subcommand("sweep", "run an experiment manifest");
  sweep->add_option("--manifest", o.manifest, "manifest name or path")->required();
  sweep->add_option("--set", o.sets, "system override key=value");
  auto* rep = app.add_subcommand("report", "summarize a trace");
  rep->add_option("--trace", o.trace, "trace.jsonl from simulate")->required();
  rep->add_option("--window-ns", o.window_ns, "power window");
  auto* val = app.add_subcommand("validate", "check configs and programs");
  add_system(val);
  add_model(val);
  val->add_option("--program", o.program, "program container");
  val->add_option("--manifest", o.manifest, "manifest name or path");
  val->add_option("--baselines", o.baselines, "baseline constants name or path");
  val->add_option("--grid", o.grid, "grid config name or path");

  if (argc <= 1) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << single_line(e.what()) << "\n" << app.help();
    return 2;
  }
  try {
    if (dse->parsed()) return cmd_mem_dse(o);
    if (comp->parsed()) return cmd_compile(o);
    if (simc->parsed()) return cmd_simulate(o);
    if (sweep->parsed()) return cmd_sweep(o);
    if (rep->parsed()) return cmd_report(o);
    if (val->parsed()) return cmd_validate(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << single_line(e.what()) << "\n";
    return 1;
  }
  return 2;
}
