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

// Static SVG charts: line/scatter plots, heat maps and kernel timelines.

#include <string>
#include <vector>

#include "rpu/simcore.hpp"

namespace rpu::plot {

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct ChartOptions {
  std::string title;
  std::string x_label, y_label;
  bool log_x = false, log_y = false;
  bool lines = true;
  std::string meta;  // emitted as an XML comment
};

std::string line_chart(const std::vector<Series>& series, const ChartOptions& opt);

/// values[r][c]; cells that are NaN are drawn empty.
std::string heatmap(const std::vector<std::string>& rows, const std::vector<std::string>& cols,
                    const std::vector<std::vector<double>>& values, const ChartOptions& opt);

/// One bar per kernel, one lane per layer.
std::string timeline(const std::vector<sim::KernelStats>& kernels, const ChartOptions& opt);

}  // namespace rpu::plot
