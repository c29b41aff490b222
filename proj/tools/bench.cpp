#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "bgnn/bench.hpp"
#include "bgnn/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kConfigFailure = 2;
constexpr int kRunFailure = 3;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw bgnn::LoadError("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw bgnn::ConfigError(path.string() + ": " + e.what());
  }
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw bgnn::LoadError("cannot write " + path.string());
}

bgnn::Grid singleton(const json& v) {
  bgnn::Grid a = bgnn::Grid::array();
  a.push_back(bgnn::Grid(v));
  return a;
}

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

int cmd_run(const fs::path& config_path, std::optional<std::size_t> workers, std::optional<fs::path> out_dir) {
  bgnn::ExperimentConfig config = bgnn::ExperimentConfig::from_json(read_json(config_path), config_path.parent_path());
  if (workers) config.workers = *workers;
  if (out_dir) config.output_dir = *out_dir;
  config.validate();
  const bgnn::Dataset ds = bgnn::load_dataset(config.dataset);
  const bgnn::RunReport report = bgnn::run_grid(config, ds, &std::cerr);
  write_file(config.output_dir / "report.jsonl", report.to_jsonl());
  write_file(config.output_dir / "timing.jsonl", report.timing_jsonl());
  bgnn::export_curves(report, config.output_dir / "curves.csv");
  if (!report.selected) {
    std::cerr << "error: every grid point failed\n";
    return kRunFailure;
  }
  std::cout << report.model << " on " << report.dataset << ": point " << *report.selected << ' '
            << report.points[*report.selected].dump() << " test " << fixed(report.test_mean(), 4) << " +- "
            << fixed(report.test_std(), 4) << '\n';
  return 0;
}

int cmd_gap(const fs::path& a, const fs::path& b) {
  const auto ra = bgnn::RunReport::from_jsonl(read_file(a));
  const auto rb = bgnn::RunReport::from_jsonl(read_file(b));
  std::cout << fixed(bgnn::compute_gap(ra, rb), 2) << "%\n";
  return 0;
}

int cmd_synth(const fs::path& spec_path, const fs::path& out) {
  const auto spec = bgnn::SyntheticSpec::from_json(read_json(spec_path));
  bgnn::save_dataset(bgnn::generate_synthetic(spec), out);
  std::cout << "wrote " << (out / "manifest.json").string() << '\n';
  return 0;
}

int cmd_train(const fs::path& dataset, const std::string& model, const std::optional<fs::path>& params_path,
              const std::vector<std::string>& sets, std::uint64_t seed, std::size_t rep, const fs::path& out) {
  const bgnn::ModelKind kind = bgnn::parse_model_kind(model);
  bgnn::Grid grid = bgnn::default_grid(kind);
  if (params_path) {
    const json p = read_json(*params_path);
    if (!p.is_object()) throw bgnn::ConfigError("params file must hold an object");
    for (const auto& [k, v] : p.items()) grid[k] = singleton(v);
  }
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw bgnn::ConfigError("--set expects key=value, got '" + s + "'");
    json v;
    try {
      v = json::parse(s.substr(eq + 1));
    } catch (const json::parse_error&) {
      v = s.substr(eq + 1);
    }
    grid[s.substr(0, eq)] = singleton(v);
  }
  bgnn::validate_grid(kind, grid);
  bgnn::GridPoint point = bgnn::GridPoint::object();
  for (const auto& [k, v] : grid.items()) point[k] = v.front();
  const bgnn::Dataset ds = bgnn::load_dataset(dataset);
  const auto fit = bgnn::fit_model(kind, point, ds, bgnn::split_for_seed(ds, seed), bgnn::model_seed(seed, rep));
  write_file(out, fit.model.to_json().dump() + '\n');
  std::cout << model << ' ' << point.dump() << " val " << fixed(fit.outcome.val_metric, 4) << " test "
            << fixed(fit.outcome.test_metric, 4) << " epochs " << fit.outcome.curve.size() << '\n';
  return 0;
}

int cmd_export(const fs::path& model_path, const fs::path& dataset, const fs::path& out) {
  const auto model = bgnn::TrainedModel::from_json(read_json(model_path));
  if (!model.predictor) throw bgnn::ConfigError("model '" + std::string(bgnn::to_string(model.kind)) +
                                                "' has no hidden layer to export");
  const bgnn::Dataset ds = bgnn::load_dataset(dataset);
  bgnn::export_representations(*model.predictor, ds.graph, ds.features, ds.targets, out);
  return 0;
}

int cmd_house(const fs::path& raw, const fs::path& out, bool classification, std::size_t k) {
  bgnn::HouseOptions opt;
  opt.classification = classification;
  opt.k = k;
  bgnn::save_dataset(bgnn::prepare_house(raw, opt), out);
  std::cout << "wrote " << (out / "manifest.json").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BGNN experiment runner"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a hyperparameter grid");
  fs::path config;
  std::optional<std::size_t> workers;
  std::optional<fs::path> out_dir;
  run->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--workers", workers, "Worker threads");
  run->add_option("--out", out_dir, "Output directory (overrides the config)");

  auto* gap = app.add_subcommand("gap", "Relative gap between two reports' winners");
  fs::path report, ref;
  gap->add_option("--report", report)->required()->check(CLI::ExistingFile);
  gap->add_option("--ref", ref)->required()->check(CLI::ExistingFile);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  fs::path spec, synth_out;
  synth->add_option("--spec", spec, "Generator spec (JSON)")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", synth_out, "Dataset directory")->required();

  auto* train = app.add_subcommand("train", "Train one model and save it");
  fs::path train_ds, train_out;
  std::string model;
  std::optional<fs::path> params;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::size_t rep = 0;
  train->add_option("--dataset", train_ds, "Dataset manifest")->required()->check(CLI::ExistingFile);
  train->add_option("--model", model)->required();
  train->add_option("--params", params, "JSON object of hyperparameters")->check(CLI::ExistingFile);
  train->add_option("--set", sets, "key=value hyperparameter");
  train->add_option("--seed", seed, "Split seed");
  train->add_option("--rep", rep, "Repetition index");
  train->add_option("--out", train_out, "Model file")->required();

  auto* reprs = app.add_subcommand("export-reprs", "Export first hidden layer representations");
  fs::path ckpt, reprs_ds, reprs_out;
  reprs->add_option("--model", ckpt)->required()->check(CLI::ExistingFile);
  reprs->add_option("--dataset", reprs_ds)->required()->check(CLI::ExistingFile);
  reprs->add_option("--out", reprs_out)->required();

  auto* house = app.add_subcommand("prepare-house", "Build the House dataset from the raw California housing file");
  fs::path raw, house_out;
  bool classification = false;
  std::size_t k = 5;
  house->add_option("--raw", raw)->required()->check(CLI::ExistingFile);
  house->add_option("--out", house_out)->required();
  house->add_flag("--classification", classification);
  house->add_option("--k", k, "Neighbours per node");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigFailure;
  }

  try {
    if (*run) return cmd_run(config, workers, out_dir);
    if (*gap) return cmd_gap(report, ref);
    if (*synth) return cmd_synth(spec, synth_out);
    if (*train) return cmd_train(train_ds, model, params, sets, seed, rep, train_out);
    if (*reprs) return cmd_export(ckpt, reprs_ds, reprs_out);
    if (*house) return cmd_house(raw, house_out, classification, k);
  } catch (const bgnn::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const bgnn::LoadError& e) {
    std::cerr << "load error: " << e.what() << '\n';
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "run failed: " << e.what() << '\n';
    return kRunFailure;
  }
  return 0;
}
