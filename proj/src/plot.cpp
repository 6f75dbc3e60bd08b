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

#include "rpu/plot.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "rpu/common.hpp"

namespace rpu::plot {

namespace {

constexpr double kW = 720, kH = 440, kL = 70, kR = 160, kT = 40, kB = 50;
const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"};

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

std::string num(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

void open(std::ostringstream& os, const ChartOptions& opt, double w = kW, double h = kH) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  if (!opt.meta.empty()) {
    std::string m = opt.meta;
    for (std::size_t p; (p = m.find("--")) != std::string::npos;) m.replace(p, 2, "- ");
    os << "<!-- " << m << " -->\n";
  }
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << w / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << esc(opt.title)
     << "</text>\n";
}

struct Axis {
  double lo = 0, hi = 1;
  bool log = false;
  double map(double v, double a, double b) const {
    const double t = log ? (std::log10(v) - std::log10(lo)) / (std::log10(hi) - std::log10(lo)) : (v - lo) / (hi - lo);
    return a + t * (b - a);
  }
};

Axis make_axis(std::vector<double> v, bool log) {
  Axis a;
  a.log = log;
  if (log) v.erase(std::remove_if(v.begin(), v.end(), [](double x) { return !(x > 0); }), v.end());
  if (v.empty()) return a;
  a.lo = *std::min_element(v.begin(), v.end());
  a.hi = *std::max_element(v.begin(), v.end());
  if (!log && a.lo > 0) a.lo = 0;
  if (a.hi <= a.lo) a.hi = a.lo + (log ? a.lo : 1.0);
  return a;
}

}  // namespace

std::string line_chart(const std::vector<Series>& series, const ChartOptions& opt) {
  std::vector<double> xs, ys;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw Error("plot", "series '" + s.name + "' has mismatched lengths");
    xs.insert(xs.end(), s.x.begin(), s.x.end());
    ys.insert(ys.end(), s.y.begin(), s.y.end());
  }
  const Axis ax = make_axis(xs, opt.log_x), ay = make_axis(ys, opt.log_y);
  std::ostringstream os;
  open(os, opt);
  const double x0 = kL, x1 = kW - kR, y0 = kH - kB, y1 = kT;
  os << "<rect x=\"" << x0 << "\" y=\"" << y1 << "\" width=\"" << x1 - x0 << "\" height=\"" << y0 - y1
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = ax.log ? ax.lo * std::pow(ax.hi / ax.lo, i / 4.0) : ax.lo + (ax.hi - ax.lo) * i / 4.0;
    const double fy = ay.log ? ay.lo * std::pow(ay.hi / ay.lo, i / 4.0) : ay.lo + (ay.hi - ay.lo) * i / 4.0;
    os << "<text x=\"" << ax.map(fx, x0, x1) << "\" y=\"" << y0 + 15 << "\" text-anchor=\"middle\">" << num(fx)
       << "</text>\n";
    os << "<text x=\"" << x0 - 5 << "\" y=\"" << ay.map(fy, y0, y1) + 4 << "\" text-anchor=\"end\">" << num(fy)
       << "</text>\n";
  }
  os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << esc(opt.x_label)
     << "</text>\n";
  os << "<text transform=\"translate(16," << (y0 + y1) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << esc(opt.y_label) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = kPalette[i % std::size(kPalette)];
    std::ostringstream pts;
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if ((opt.log_x && !(s.x[k] > 0)) || (opt.log_y && !(s.y[k] > 0))) continue;
      const double px = ax.map(s.x[k], x0, x1), py = ay.map(s.y[k], y0, y1);
      pts << px << "," << py << " ";
      os << "<circle cx=\"" << px << "\" cy=\"" << py << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    if (opt.lines && s.x.size() > 1)
      os << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << color << "\"/>\n";
    os << "<text x=\"" << x1 + 10 << "\" y=\"" << y1 + 14 * (i + 1) << "\" fill=\"" << color << "\">"
       << esc(s.name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string heatmap(const std::vector<std::string>& rows, const std::vector<std::string>& cols,
                    const std::vector<std::vector<double>>& values, const ChartOptions& opt) {
  if (values.size() != rows.size()) throw Error("plot", "heat map row count mismatch");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& r : values) {
    if (r.size() != cols.size()) throw Error("plot", "heat map column count mismatch");
    for (double v : r)
      if (!std::isnan(v)) lo = std::min(lo, v), hi = std::max(hi, v);
  }
  std::ostringstream os;
  open(os, opt);
  const double x0 = kL + 20, x1 = kW - kR, y0 = kT + 10, y1 = kH - kB;
  const double cw = cols.empty() ? 0 : (x1 - x0) / cols.size(), ch = rows.empty() ? 0 : (y1 - y0) / rows.size();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    os << "<text x=\"" << x0 - 5 << "\" y=\"" << y0 + ch * (r + 0.5) + 4 << "\" text-anchor=\"end\">"
       << esc(rows[r]) << "</text>\n";
    for (std::size_t c = 0; c < cols.size(); ++c) {
      const double v = values[r][c];
      std::string fill = "#eeeeee";
      if (!std::isnan(v)) {
        const double t = hi > lo ? (v - lo) / (hi - lo) : 0.5;
        std::ostringstream f;
        f << "rgb(" << int(255 * t) << "," << int(80 + 100 * (1 - t)) << "," << int(255 * (1 - t)) << ")";
        fill = f.str();
      }
      os << "<rect x=\"" << x0 + cw * c << "\" y=\"" << y0 + ch * r << "\" width=\"" << cw << "\" height=\"" << ch
         << "\" fill=\"" << fill << "\" stroke=\"white\"/>\n";
      if (!std::isnan(v))
        os << "<text x=\"" << x0 + cw * (c + 0.5) << "\" y=\"" << y0 + ch * (r + 0.5) + 4
           << "\" text-anchor=\"middle\" font-size=\"9\">" << num(v) << "</text>\n";
    }
  }
  for (std::size_t c = 0; c < cols.size(); ++c)
    os << "<text x=\"" << x0 + cw * (c + 0.5) << "\" y=\"" << y1 + 15 << "\" text-anchor=\"middle\">"
       << esc(cols[c]) << "</text>\n";
  os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << esc(opt.x_label)
     << "</text>\n";
  os << "<text transform=\"translate(16," << (y0 + y1) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
     << esc(opt.y_label) << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

std::string timeline(const std::vector<sim::KernelStats>& kernels, const ChartOptions& opt) {
  double end = 0;
  uint16_t layers = 0;
  for (const auto& k : kernels) {
    end = std::max(end, k.end);
    layers = std::max<uint16_t>(layers, k.layer + 1);
  }
  const double lane = 28;
  const double h = kT + kB + lane * std::max<uint16_t>(1, layers);
  std::ostringstream os;
  open(os, opt, kW, h);
  const double x0 = kL, x1 = kW - 20;
  for (uint16_t l = 0; l < layers; ++l)
    os << "<text x=\"" << x0 - 5 << "\" y=\"" << kT + lane * (l + 0.5) + 4 << "\" text-anchor=\"end\">L" << l
       << "</text>\n";
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    const auto& k = kernels[i];
    const double a = end > 0 ? x0 + (x1 - x0) * k.start / end : x0;
    const double b = end > 0 ? x0 + (x1 - x0) * k.end / end : x0;
    os << "<rect x=\"" << a << "\" y=\"" << kT + lane * k.layer + 4 << "\" width=\"" << std::max(0.5, b - a)
       << "\" height=\"" << lane - 8 << "\" fill=\"" << kPalette[k.kind % std::size(kPalette)]
       << "\" fill-opacity=\"0.7\"><title>" << esc(k.name) << " " << num(k.duration() * 1e6)
       << " us</title></rect>\n";
  }
  os << "<text x=\"" << (x0 + x1) / 2 << "\" y=\"" << h - 12 << "\" text-anchor=\"middle\">time (0 to "
     << num(end * 1e6) << " us)</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace rpu::plot
