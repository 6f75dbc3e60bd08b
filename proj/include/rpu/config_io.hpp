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

// YAML ingestion for models, systems, DSE grids, baselines and sweep
// manifests. Every loader starts from the built-in defaults, merges the file
// on top and rejects keys the defaults do not have.

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rpu/archcfg.hpp"
#include "rpu/compiler.hpp"
#include "rpu/memmodel.hpp"

namespace rpu::config {

using Overrides = std::vector<std::pair<std::string, std::string>>;

/// Parses "a.b.c=value" into a key/value pair.
std::pair<std::string, std::string> parse_override(const std::string& text);

/// Root of the shipped configs directory (RPU_CONFIG_DIR env or build default).
std::string config_dir();
/// `name_or_path` if it names an existing file, else <config_dir>/<kind>/<name>.yaml.
std::string resolve(const std::string& kind, const std::string& name_or_path);

compiler::ModelSpec load_model(const std::string& name_or_path, const Overrides& ov = {});
compiler::ModelSpec model_from_yaml_text(const std::string& yaml, const Overrides& ov = {});
std::string model_to_yaml(const compiler::ModelSpec& m);

arch::SystemConfig load_system(const std::string& name_or_path, const Overrides& ov = {});
arch::SystemConfig system_from_yaml_text(const std::string& yaml, const Overrides& ov = {});
std::string system_to_yaml(const arch::SystemConfig& s);

/// Named geometries ("hbm3e", "candidate") or a geometry map.
mem::StackGeometry geometry_from_yaml_text(const std::string& yaml);

mem::DesignGrid load_grid(const std::string& name_or_path);
std::string grid_to_yaml(const mem::DesignGrid& g);

struct BaselineEntry {
  std::string key;  // model/bsN/seqN
  std::string system;
  double tdp_w = 0;
  double latency_s = 0;
  double energy_j = 0;  // per output token
  std::string note;
};

struct BaselineConstants {
  std::string name;
  std::vector<BaselineEntry> entries;
  const BaselineEntry& at(const std::string& key) const;
};

BaselineConstants load_baselines(const std::string& name_or_path);
std::string baseline_key(const std::string& model, uint32_t batch, uint32_t seq);

/// A sweep description: an experiment name plus flat parameters. List values
/// are kept as comma-joined strings.
struct Manifest {
  std::string experiment;
  std::map<std::string, std::string> params;
  std::string source;  // canonical text used for the config hash

  std::string get(const std::string& key, const std::string& fallback = "") const;
  std::vector<std::string> list(const std::string& key) const;
  std::vector<uint32_t> uints(const std::string& key) const;
  uint32_t uint(const std::string& key, uint32_t fallback) const;
  double number(const std::string& key, double fallback) const;
};

Manifest load_manifest(const std::string& path, const Overrides& ov = {});

/// 16-hex-digit FNV-1a hash of canonical configuration text.
std::string config_hash(const std::string& canonical);

}  // namespace rpu::config
