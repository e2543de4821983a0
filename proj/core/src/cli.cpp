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

#include "r3/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "r3/checkpoint.hpp"
#include "r3/config.hpp"
#include "r3/metrics.hpp"
#include "r3/pipeline.hpp"
#include "r3/treerl.hpp"

namespace r3::cli {
namespace {

namespace fs = std::filesystem;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string checkpoint;
  std::string prompt;
  int max_turns = -1;
  std::string mode;
  std::string csv;
  std::string svg;
  std::vector<std::string> columns;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

io::RunConfig resolve_config(const Options& o) {
  io::RunConfig c = o.config_path.empty() ? io::RunConfig{} : io::load_config(o.config_path);
  if (const char* env = std::getenv("R3_SEED"); env && *env) {
    try {
      c.seed = std::stoull(env);
    } catch (const std::exception&) {
      throw ValidationError(std::string("R3_SEED is not an unsigned integer: '") + env + "'");
    }
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.out_dir.empty()) c.out_dir = o.out_dir;
  c.train.seed = c.seed;
  c.validate();
  return c;
}

train::R3Models obtain_models(const io::RunConfig& c, const Options& o, std::ostream& err) {
  if (!o.checkpoint.empty()) return io::load_models(o.checkpoint);
  err << "warning: no --checkpoint given; using freshly initialised models (seed " << c.seed << ")\n";
  return train::make_models(c.model, c.seed);
}

fs::path prepare_out(const io::RunConfig& c) {
  fs::path dir(c.out_dir);
  fs::create_directories(dir);
  return dir;
}

std::string pretrain_csv(const train::PretrainCurves& curves) {
  const std::size_t n = std::max({curves.generator.size(), curves.editor.size(), curves.planner.size(),
                                  curves.reflector.size()});
  std::ostringstream os;
  os << std::setprecision(9) << "step,generator,editor,planner,reflector\n";
  auto cell = [&os](const std::vector<double>& v, std::size_t i) {
    if (i < v.size()) os << v[i];
  };
  for (std::size_t i = 0; i < n; ++i) {
    os << i << ',';
    cell(curves.generator, i);
    os << ',';
    cell(curves.editor, i);
    os << ',';
    cell(curves.planner, i);
    os << ',';
    cell(curves.reflector, i);
    os << '\n';
  }
  return os.str();
}

int cmd_pretrain(const Options& o, std::ostream& out, std::ostream&) {
  const auto c = resolve_config(o);
  const auto dir = prepare_out(c);
  auto models = train::make_models(c.model, c.seed);
  nn::Rng rng(train::derive_seed(c.seed, 0x9e7));
  const auto curves = train::pretrain(models, c.pretrain, rng);
  io::save_models(models, c.model, dir / "pretrain.r3ck", {{"stage", "pretrain"}, {"seed", c.seed}});
  io::atomic_write(dir / "pretrain_loss.csv", pretrain_csv(curves));
  out << "wrote " << (dir / "pretrain.r3ck").string() << '\n';
  return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
  auto c = resolve_config(o);
  if (!o.mode.empty()) c.train.mode = train::parse_mode(o.mode);
  c.validate();
  const auto dir = prepare_out(c);
  const auto warm = obtain_models(c, o, err);
  std::vector<train::MetricsRow> history;
  auto hook = [&](const train::TrainState& state, const std::vector<train::MetricsRow>& rows) {
    history.insert(history.end(), rows.begin(), rows.end());
    if (c.checkpoint_interval > 0 && state.iteration % c.checkpoint_interval == 0) {
      io::save_models(state.models, c.model, dir / "checkpoint.r3ck", {{"iteration", state.iteration}});
      io::write_metrics(history, dir / "metrics.csv");
    }
  };
  try {
    const auto result = train::train(warm, c.train, hook);
    io::save_models(result.models, c.model, dir / "final.r3ck", {{"iteration", c.train.steps}});
  } catch (const std::domain_error&) {
    io::write_metrics(history, dir / "metrics.csv");
    throw;
  }
  io::write_metrics(history, dir / "metrics.csv");
  out << "wrote " << (dir / "metrics.csv").string() << " (" << history.size() << " rows)\n";
  return kExitOk;
}

int cmd_eval(const Options& o, std::ostream& out, std::ostream& err) {
  const auto c = resolve_config(o);
  const auto dir = prepare_out(c);
  const auto models = obtain_models(c, o, err);
  const pipeline::ModelAgent agent(models, c.inference);
  const auto prompts = pipeline::held_out_prompts(c.eval.prompts, c.seed);
  const int turns = o.max_turns >= 0 ? o.max_turns : c.eval.max_turns;
  auto report = pipeline::evaluate_generation(agent, prompts, turns, c.seed);
  report.budgets = c.eval.budgets;
  report.budget_scores = pipeline::scaling_curve(agent, prompts, c.eval.budgets, c.seed);
  std::ostringstream os;
  pipeline::write_report_csv(os, report);
  io::atomic_write(dir / "eval.csv", os.str());
  out << os.str();
  return kExitOk;
}

int cmd_infer(const Options& o, std::ostream& out, std::ostream& err) {
  const auto c = resolve_config(o);
  if (o.prompt.empty()) throw ValidationError("infer requires --prompt");
  scenes::PromptSpec prompt;
  try {
    prompt = scenes::parse_prompt_line(o.prompt);
  } catch (const std::invalid_argument& e) {
    throw ValidationError(std::string("invalid --prompt: ") + e.what());
  }
  const int turns = o.max_turns >= 0 ? o.max_turns : c.eval.max_turns;
  const auto dir = prepare_out(c);
  const auto models = obtain_models(c, o, err);
  const pipeline::ModelAgent agent(models, c.inference);
  nn::Rng rng(train::derive_seed(c.seed, 0x1f3));
  const auto trace = pipeline::infer_r3(agent, prompt, turns, rng);
  const auto text = pipeline::format_trace(trace);
  io::atomic_write(dir / "trace.txt", text);
  out << text;
  return kExitOk;
}

int cmd_probe(const Options& o, std::ostream& out, std::ostream& err) {
  const auto c = resolve_config(o);
  std::vector<pipeline::ProbeMode> modes;
  if (o.mode.empty() || o.mode == "both") {
    modes = {pipeline::ProbeMode::kIta, pipeline::ProbeMode::kVqa};
  } else {
    modes = {pipeline::parse_probe_mode(o.mode)};
  }
  const auto dir = prepare_out(c);
  const auto models = obtain_models(c, o, err);
  const pipeline::ModelAgent agent(models, c.inference);
  std::ostringstream os;
  os << std::setprecision(9) << "mode,accuracy,n,positive_recall,negative_recall\n";
  for (auto m : modes) {
    const auto r = pipeline::understanding_probe(agent, c.eval.probe_pairs, m, c.seed);
    os << pipeline::name_of(m) << ',' << r.accuracy << ',' << r.n << ',' << r.positive_recall << ','
       << r.negative_recall << '\n';
  }
  io::atomic_write(dir / "probe.csv", os.str());
  out << os.str();
  return kExitOk;
}

int cmd_scale(const Options& o, std::ostream& out, std::ostream& err) {
  const auto c = resolve_config(o);
  const auto dir = prepare_out(c);
  const auto models = obtain_models(c, o, err);
  const pipeline::ModelAgent agent(models, c.inference);
  const auto prompts = pipeline::held_out_prompts(c.eval.prompts, c.seed);
  const auto scores = pipeline::scaling_curve(agent, prompts, c.eval.budgets, c.seed);
  std::ostringstream os;
  os << std::setprecision(9) << "budget,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) os << c.eval.budgets[i] << ',' << scores[i] << '\n';
  io::atomic_write(dir / "scaling.csv", os.str());
  out << os.str();
  return kExitOk;
}

int cmd_plot(const Options& o, std::ostream& out, std::ostream&) {
  const auto c = resolve_config(o);
  const fs::path csv = o.csv.empty() ? fs::path(c.out_dir) / "metrics.csv" : fs::path(o.csv);
  const fs::path svg = o.svg.empty() ? fs::path(csv).replace_extension(".svg") : fs::path(o.svg);
  if (!fs::exists(csv)) throw ValidationError("metrics file '" + csv.string() + "' does not exist");
  const auto columns = o.columns.empty() ? std::vector<std::string>{"mean_reward", "mean_V"} : o.columns;
  io::emit_plot(csv, svg, columns);
  out << "wrote " << svg.string() << '\n';
  return kExitOk;
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"R3 desk-scale trainer and simulator", "r3"};
  app.require_subcommand(1, 1);
  Options o;
  auto common = [&o](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON run configuration");
    sub->add_option("--seed", o.seed, "run seed (overrides config and R3_SEED)");
    sub->add_option("--out", o.out_dir, "output directory");
    sub->add_option("--checkpoint", o.checkpoint, "model checkpoint to load");
  };
  auto* pretrain = app.add_subcommand("pretrain", "supervised warm-start");
  auto* trn = app.add_subcommand("train", "stage-wise RL from a warm start");
  auto* eval = app.add_subcommand("eval", "category-wise generation evaluation");
  auto* infer = app.add_subcommand("infer", "run the reflect/refine loop on one prompt");
  auto* probe = app.add_subcommand("probe", "ITA / VQA understanding probes");
  auto* scale = app.add_subcommand("scale", "score versus reflection-turn budget");
  auto* plot = app.add_subcommand("plot", "render a metrics CSV as SVG");
  for (auto* s : {pretrain, trn, eval, infer, probe, scale, plot}) common(s);
  trn->add_option("--mode", o.mode, "tree or full")->check(CLI::IsMember({"tree", "full"}));
  infer->add_option("--prompt", o.prompt, "prompt line, e.g. count:3,color:red,shape:circle")->required();
  infer->add_option("--max-turns", o.max_turns, "reflection turn budget")->check(CLI::NonNegativeNumber);
  eval->add_option("--max-turns", o.max_turns, "reflection turn budget")->check(CLI::NonNegativeNumber);
  probe->add_option("--mode", o.mode, "ita, vqa or both")->check(CLI::IsMember({"ita", "vqa", "both"}));
  plot->add_option("--csv", o.csv, "metrics CSV (default <out>/metrics.csv)");
  plot->add_option("--svg", o.svg, "output SVG (default next to the CSV)");
  plot->add_option("--columns", o.columns, "columns to plot");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitValidation;
  }

  try {
    if (pretrain->parsed()) return cmd_pretrain(o, out, err);
    if (trn->parsed()) return cmd_train(o, out, err);
    if (eval->parsed()) return cmd_eval(o, out, err);
    if (infer->parsed()) return cmd_infer(o, out, err);
    if (probe->parsed()) return cmd_probe(o, out, err);
    if (scale->parsed()) return cmd_scale(o, out, err);
    if (plot->parsed()) return cmd_plot(o, out, err);
  } catch (const io::ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  err << app.help();
  return kExitValidation;
}

}  // namespace r3::cli
