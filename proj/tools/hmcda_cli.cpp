// hmcda: twin-experiment driver.
//
//   hmcda run <config> [--seed N] [--instances N] [--workers N] [--out path]
//   hmcda stats <records> [--window a:b]
//   hmcda export <records> --format csv|json [--out path]
//
// Exit codes: 0 ok, 2 config error, 3 I/O error, 1 anything else.

#include "hmcda/hmcda.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

hmcda::RecordFormat format_for(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? hmcda::RecordFormat::csv : hmcda::RecordFormat::json;
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            std::optional<hmcda::Index> instances, std::optional<int> workers,
            const std::string& out_path, const std::string& window_text, bool quiet) {
  auto cfg = hmcda::load_experiment_config(config_path);
  if (seed) cfg.seed = *seed;
  if (instances) cfg.instances = *instances;
  if (workers) cfg.workers = *workers;
  if (!out_path.empty()) cfg.output = out_path;
  cfg.validate();
  const auto window = hmcda::parse_window(window_text);

  std::cerr << "config " << cfg.fingerprint() << ": filter=" << hmcda::to_string(cfg.filter)
            << " operator=" << hmcda::to_string(cfg.obs_kind) << " instances=" << cfg.instances
            << " workers=" << cfg.workers << '\n';
  const auto t0 = std::chrono::steady_clock::now();
  const auto records = hmcda::run_experiment(cfg, [&](const hmcda::ResultRecord& r) {
    if (quiet) return;
    std::cerr << "instance " << r.instance << (r.diverged ? " diverged: " + r.divergence_message : " done")
              << '\n';
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cerr << "elapsed " << secs << " s\n";

  const std::filesystem::path out(cfg.output);
  hmcda::export_records(records, format_for(out), out);
  std::cout << "records written to " << out.string() << '\n';
  try {
    std::cout << hmcda::format_table(hmcda::tabulate(records, window));
  } catch (const hmcda::EmptyInputError& e) {
    std::cout << "no statistics: " << e.what() << '\n';
  }
  return kExitOk;
}

int cmd_stats(const std::string& records_path, const std::string& window_text) {
  const auto window = hmcda::parse_window(window_text);
  const auto records = hmcda::import_records(records_path);
  std::cout << "config " << records.config_fingerprint << '\n';
  std::cout << hmcda::format_table(hmcda::tabulate(records, window));
  return kExitOk;
}

int cmd_export(const std::string& records_path, const std::string& format_text,
               const std::string& out_path) {
  const auto format = hmcda::parse_record_format(format_text);
  if (!format) throw hmcda::ConfigError("--format must be csv or json");
  const auto records = hmcda::import_records(records_path);
  std::filesystem::path out = out_path;
  if (out.empty()) {
    out = records_path;
    out.replace_extension(*format == hmcda::RecordFormat::csv ? ".csv" : ".json");
    if (out == std::filesystem::path(records_path)) out.replace_extension(".export" + out.extension().string());
  }
  hmcda::export_records(records, *format, out);
  std::cout << "exported " << records.instances.size() << " instances to " << out.string() << '\n';
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HMC sampling filter twin experiments on Lorenz-96"};
  app.require_subcommand(1);

  std::string config_path, records_path, out_path, window_text = "8:10", format_text;
  std::optional<std::uint64_t> seed;
  std::optional<hmcda::Index> instances;
  std::optional<int> workers;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run a twin experiment from a config file");
  run->add_option("config", config_path, "Config file")->required();
  run->add_option("--seed", seed, "Override experiment.seed");
  run->add_option("--instances", instances, "Override experiment.instances");
  run->add_option("--workers", workers, "Override experiment.workers");
  run->add_option("--out", out_path, "Records path (.json or .csv)");
  run->add_option("--window", window_text, "Statistics window start:end");
  run->add_flag("--quiet", quiet, "No per-instance progress");

  auto* stats = app.add_subcommand("stats", "RMSE statistics of a records file");
  stats->add_option("records", records_path, "Records file")->required();
  stats->add_option("--window", window_text, "Window start:end");

  auto* exp = app.add_subcommand("export", "Convert a records file");
  exp->add_option("records", records_path, "Records file")->required();
  exp->add_option("--format", format_text, "csv or json")->required();
  exp->add_option("--out", out_path, "Output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, seed, instances, workers, out_path, window_text, quiet);
    if (stats->parsed()) return cmd_stats(records_path, window_text);
    if (exp->parsed()) return cmd_export(records_path, format_text, out_path);
  } catch (const hmcda::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const hmcda::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const hmcda::EmptyInputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
