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

#include <iosfwd>
#include <string>
#include <vector>

namespace r3::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 1;
inline constexpr int kExitRuntime = 2;

/// args excludes the program name:
///   pretrain | train | eval | infer | probe | scale | plot
/// with --config PATH, --seed N, --out DIR, --checkpoint PATH on every
/// command; infer adds --prompt SPEC --max-turns N; train adds --mode tree|full.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace r3::cli
