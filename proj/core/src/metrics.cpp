// Copyright 2026 The R3 Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "r3/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include "r3/checkpoint.hpp"

namespace r3::io {
namespace {

double column_value(const train::MetricsRow& r, const std::string& column) {
  if (column == "mean_reward") return r.mean_reward;
  if (column == "mean_V") return r.mean_v;
  if (column == "clip_frac") return r.clip_frac;
  if (column == "kl_text") return r.kl_text;
  if (column == "kl_flow") return r.kl_flow;
  if (column == "buffer_size") return static_cast<double>(r.buffer_size);
  if (column == "perfect_frac") return r.perfect_frac;
  throw std::invalid_argument("unknown metrics column '" + column + "'");
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::string format_metrics(const std::vector<train::MetricsRow>& history) {
  std::ostringstream os;
  os << std::setprecision(9);
  os << kMetricsHeader << '\n';
  for (const auto& r : history) {
    os << r.step << ',' << r.stage << ',' << r.mean_reward << ',' << r.mean_v << ',' << r.clip_frac << ','
       << r.kl_text << ',' << r.kl_flow << ',' << r.buffer_size << ',' << r.perfect_frac << '\n';
  }
  return os.str();
}

std::vector<train::MetricsRow> parse_metrics(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line) || line != kMetricsHeader) throw std::invalid_argument("metrics CSV header mismatch");
  std::vector<train::MetricsRow> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 9) throw std::invalid_argument("metrics CSV row has " + std::to_string(f.size()) + " fields");
    train::MetricsRow r;
    r.step = std::stoi(f[0]);
    r.stage = f[1];
    r.mean_reward = std::stod(f[2]);
    r.mean_v = std::stod(f[3]);
    r.clip_frac = std::stod(f[4]);
    r.kl_text = std::stod(f[5]);
    r.kl_flow = std::stod(f[6]);
    r.buffer_size = static_cast<std::size_t>(std::stoull(f[7]));
    r.perfect_frac = std::stod(f[8]);
    out.push_back(std::move(r));
  }
  return out;
}

void write_metrics(const std::vector<train::MetricsRow>& history, const std::filesystem::path& path) {
  atomic_write(path, format_metrics(history));
}

std::vector<train::MetricsRow> read_metrics(const std::filesystem::path& path) { return parse_metrics(read_file(path)); }

std::string render_svg(const std::vector<train::MetricsRow>& history, const std::vector<std::string>& columns,
                       const std::string& title) {
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};
  constexpr double W = 640, H = 400, L = 60, R = 20, T = 40, B = 50;

  std::vector<std::map<int, std::pair<double, int>>> series(columns.size());
  for (std::size_t c = 0; c < columns.size(); ++c) {
    for (const auto& r : history) {
      auto& acc = series[c][r.step];
      acc.first += column_value(r, columns[c]);
      acc.second += 1;
    }
  }
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series) {
    for (const auto& [step, acc] : s) {
      const double y = acc.first / acc.second;
      if (first) {
        xmin = xmax = step;
        ymin = ymax = y;
        first = false;
      }
      xmin = std::min<double>(xmin, step);
      xmax = std::max<double>(xmax, step);
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  }
  if (xmax == xmin) xmax = xmin + 1;
  if (ymax == ymin) ymax = ymin + 1;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };

  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << title << "</text>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">step</text>\n";
  os << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
     << (T + H - B) / 2 << ")\">value</text>\n";
  os << "<text x=\"" << L << "\" y=\"" << H - B + 16 << "\" font-size=\"10\">" << xmin << "</text>\n";
  os << "<text x=\"" << W - R << "\" y=\"" << H - B + 16 << "\" text-anchor=\"end\" font-size=\"10\">" << xmax
     << "</text>\n";
  os << "<text x=\"" << L - 4 << "\" y=\"" << H - B << "\" text-anchor=\"end\" font-size=\"10\">" << ymin << "</text>\n";
  os << "<text x=\"" << L - 4 << "\" y=\"" << T + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << ymax << "</text>\n";
  for (std::size_t c = 0; c < columns.size(); ++c) {
    const char* color = kColors[c % std::size(kColors)];
    os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
    bool sep = false;
    for (const auto& [step, acc] : series[c]) {
      os << (sep ? " " : "") << px(step) << ',' << py(acc.first / acc.second);
      sep = true;
    }
    os << "\"/>\n";
    os << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 14 * (c + 1) << "\" text-anchor=\"end\" font-size=\"11\" fill=\""
       << color << "\">" << columns[c] << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void emit_plot(const std::filesystem::path& csv_path, const std::filesystem::path& svg_path,
               const std::vector<std::string>& columns) {
  atomic_write(svg_path, render_svg(read_metrics(csv_path), columns, csv_path.filename().string()));
}

}  // namespace r3::io
