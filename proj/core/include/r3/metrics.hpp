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

#pragma once

// Metrics CSV and SVG line charts.

#include <filesystem>
#include <string>
#include <vector>

#include "r3/treerl.hpp"

namespace r3::io {

inline constexpr const char* kMetricsHeader =
    "step,stage,mean_reward,mean_V,clip_frac,kl_text,kl_flow,buffer_size,perfect_frac";

/// Values use 9 significant digits.
std::string format_metrics(const std::vector<train::MetricsRow>& history);
std::vector<train::MetricsRow> parse_metrics(const std::string& csv);

void write_metrics(const std::vector<train::MetricsRow>& history, const std::filesystem::path& path);
std::vector<train::MetricsRow> read_metrics(const std::filesystem::path& path);

/// One polyline per column, x = step (rows sharing a step are averaged).
/// Throws std::invalid_argument for an unknown column.
std::string render_svg(const std::vector<train::MetricsRow>& history, const std::vector<std::string>& columns,
                       const std::string& title = "metrics");
void emit_plot(const std::filesystem::path& csv_path, const std::filesystem::path& svg_path,
               const std::vector<std::string>& columns = {"mean_reward", "mean_V"});

}  // namespace r3::io
