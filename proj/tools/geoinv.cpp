#include <iostream>
#include <thread>

#include "CLI11.hpp"
#include "geoinv/config.hpp"

using namespace geoinv;
namespace fs = std::filesystem;

namespace {

ScalingOptions parse_scaling(const Json& doc) {
  detail::ConfigObject o(doc, "");
  ScalingOptions s;
  s.workers = o.get<std::vector<int>>("workers", s.workers);
  s.trials = o.get<int>("trials", s.trials);
  s.batches_per_worker = o.get<int>("batches_per_worker", s.batches_per_worker);
  s.cells_per_axis = o.get<Index>("cells_per_axis", s.cells_per_axis);
  s.repeats = o.get<Index>("repeats", s.repeats);
  const auto mode = o.get<std::string>("mode", "static");
  try {
    s.mode = schedule_mode_from_string(mode);
  } catch (const Error&) {
    detail::config_error("mode", "must be 'dynamic' or 'static'");
  }
  o.get<std::string>("out", "");
  o.finish();
  detail::config_check(!s.workers.empty(), "workers", "must not be empty");
  for (int w : s.workers) detail::config_check(w >= 1, "workers", "worker counts must be positive");
  detail::config_check(s.trials >= 1, "trials", "must be at least 1");
  detail::config_check(s.batches_per_worker >= 1, "batches_per_worker", "must be at least 1");
  detail::config_check(s.cells_per_axis >= 2, "cells_per_axis", "must be at least 2");
  detail::config_check(s.repeats >= 1, "repeats", "must be at least 1");
  return s;
}

int cmd_invert(const std::string& path, const std::vector<std::string>& sets, bool quiet) {
  const auto cfg = load_config(path, sets);
  const auto r = run_inversion(cfg, quiet ? nullptr : &std::cerr);
  for (const auto& s : r.stages)
    std::cout << "cycle " << s.cycle << " stage " << s.stage << ": objective " << format_double(s.initial_objective)
              << " -> " << format_double(s.final_objective) << " (" << s.records.size() << " iterations, "
              << to_string(s.status) << ")\n";
  std::cout << "relative model error " << format_double(r.relative_error) << "\n";
  std::cout << "outputs in " << cfg.output.dir << "\n";
  return 0;
}

int cmd_forward(const std::string& path, const std::vector<std::string>& sets, const std::string& model,
                const std::string& out) {
  const auto cfg = load_config(path, sets);
  const auto survey = build_survey(cfg);
  Vector m = survey.truth;
  if (!model.empty()) {
    ModelSource src{ModelSource::Kind::file, {}, 0.0, model};
    m = realize_model(src, survey.mesh);
  }
  write_forward_csv(out, survey, m);
  std::cout << survey.terms.size() << " survey terms written to " << out << "\n";
  return 0;
}

int cmd_scaling(const std::vector<std::string>& sets, const std::string& out) {
  Json doc = Json::object();
  for (const auto& s : sets) apply_override(doc, s);
  const auto opts = parse_scaling(doc);
  const auto rows = run_scaling_test(opts);
  write_scaling_csv(out, rows);
  const auto med = median_timings(rows);
  const auto eff = weak_scaling_efficiency(med);
  const unsigned cores = std::thread::hardware_concurrency();
  for (const auto& [n, t] : med)
    std::cout << "n_workers " << n << ": median " << format_double(t) << " s, efficiency " << eff.at(n) << "%"
              << (static_cast<unsigned>(n) > cores ? " (oversubscribed)" : "") << "\n";
  std::cout << "timings written to " << out << "\n";
  return 0;
}

int cmd_export(const std::string& model, int axis, Index index, const std::string& csv, const std::string& bin) {
  const auto f = read_model_file(model);
  std::vector<Index> n(f.n.begin(), f.n.begin() + f.dim);
  const auto mesh = TensorMesh::uniform(n, std::vector<double>(n.size(), 1.0));
  const auto s = model_slice(mesh, f.values, axis, index);
  if (!csv.empty()) write_slice_csv(csv, s);
  if (!bin.empty()) write_model_file(bin, s);
  std::cout << "slice axis " << axis << " index " << index << ": " << s.n[0] << " x " << s.n[1] << " values\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"geoinv: PDE-constrained geophysical inversion"};
  app.require_subcommand(1);

  std::string config, model, out, csv, bin;
  std::vector<std::string> sets;
  bool quiet = false;
  int axis = 0;
  Index index = 0;

  auto* invert = app.add_subcommand("invert", "run an inversion described by a JSON config");
  invert->add_option("config", config, "config file")->required()->check(CLI::ExistingFile);
  invert->add_option("--set", sets, "override a config key, e.g. optimizer.max_gn=5");
  invert->add_flag("-q,--quiet", quiet, "suppress per-iteration progress");

  auto* forward = app.add_subcommand("forward", "simulate the survey of a config and write predicted data");
  forward->add_option("config", config, "config file")->required()->check(CLI::ExistingFile);
  forward->add_option("--set", sets, "override a config key");
  forward->add_option("--model", model, "model file (default: the config's true model)")->check(CLI::ExistingFile);
  forward->add_option("-o,--out", out, "output CSV")->default_val("data.csv");

  auto* scaling = app.add_subcommand("scaling-test", "weak-scaling timings with synthetic equal-cost batches");
  scaling->add_option("--set", sets, "override an option, e.g. workers=[1,2,4] or trials=5");
  scaling->add_option("-o,--out", out, "timings CSV")->default_val("scaling.csv");

  auto* exp = app.add_subcommand("export", "write an orthogonal slice of a model file");
  exp->add_option("model", model, "model file")->required()->check(CLI::ExistingFile);
  exp->add_option("--axis", axis, "slice normal axis")->default_val(0);
  exp->add_option("--index", index, "cell index along the axis")->default_val(0);
  exp->add_option("--csv", csv, "slice as i,j,value CSV");
  exp->add_option("--bin", bin, "slice as a binary model file");

  CLI11_PARSE(app, argc, argv);
  try {
    if (invert->parsed()) return cmd_invert(config, sets, quiet);
    if (forward->parsed()) return cmd_forward(config, sets, model, out);
    if (scaling->parsed()) return cmd_scaling(sets, out);
    if (exp->parsed()) {
      if (csv.empty() && bin.empty()) csv = "slice.csv";
      return cmd_export(model, axis, index, csv, bin);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == Errc::config ? 2 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
