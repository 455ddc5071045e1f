#include "rfr/rfr.h"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

struct CommonFlags {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> lambda;
  std::optional<std::string> rho;
  std::optional<std::string> p_norm;
  std::vector<std::string> set;
};

// Status of a failed call turned into the process exit code, message on stderr.
int report_failure(rfr_status status, const std::string& context) {
  std::cerr << "error (" << rfr_status_name(status) << "): " << context
            << (context.empty() ? "" : ": ") << rfr_last_error() << '\n';
  return rfr_exit_code(status);
}

int usage_error(const std::string& message) {
  std::cerr << "usage error: " << message << '\n';
  return 1;
}

std::string take(char* text) {
  std::string s = text ? text : "";
  rfr_string_free(text);
  return s;
}

std::vector<std::string> overrides_of(const CommonFlags& f) {
  std::vector<std::string> o = f.set;
  if (f.seed) o.push_back("seeds=" + std::to_string(*f.seed));
  if (f.out) o.push_back("output=" + *f.out);
  if (f.lambda) o.push_back("lambda=" + *f.lambda);
  if (f.rho) o.push_back("rho=" + *f.rho);
  if (f.p_norm) o.push_back("p_norm=" + *f.p_norm);
  return o;
}

rfr_status load(const std::string& path, const CommonFlags& f, rfr_config** cfg) {
  const auto o = overrides_of(f);
  std::vector<const char*> ptrs;
  for (const auto& s : o) ptrs.push_back(s.c_str());
  return rfr_config_load(path.c_str(), ptrs.data(), ptrs.size(), cfg);
}

int cmd_run(const std::string& config_path, const CommonFlags& f) {
  rfr_config* cfg = nullptr;
  rfr_status st = load(config_path, f, &cfg);
  if (st != RFR_OK) return report_failure(st, config_path);
  char* dir = nullptr;
  rfr_config_output_dir(cfg, &dir);
  const std::string out_dir = take(dir);
  char* summary = nullptr;
  st = rfr_run_experiment(cfg, &summary);
  rfr_config_free(cfg);
  if (st != RFR_OK) return report_failure(st, "run");
  std::cout << take(summary) << "records written to " << out_dir << '\n';
  return 0;
}

int cmd_verify(const CommonFlags& f) {
  if (f.lambda || f.rho || f.p_norm || !f.set.empty()) {
    return usage_error("verify-theory accepts only --seed and --out");
  }
  int all = 0;
  char* report = nullptr;
  const rfr_status st = rfr_verify_theory(f.seed.value_or(20240601), &all, &report);
  if (st != RFR_OK) return report_failure(st, "verify-theory");
  const std::string text = take(report);
  for (const auto& check : nlohmann::json::parse(text)) {
    std::cout << (check.at("passed").get<bool>() ? "PASS " : "FAIL ")
              << check.at("name").get<std::string>() << '\n';
  }
  if (f.out) {
    std::ofstream out(*f.out, std::ios::binary);
    if (!out) return usage_error("cannot write " + *f.out);
    out << text << '\n';
  }
  std::cout << (all ? "all theory checks passed" : "some theory checks failed") << '\n';
  return all ? 0 : 3;
}

int cmd_gen_shift(const std::string& config_path, const CommonFlags& f) {
  rfr_config* cfg = nullptr;
  CommonFlags g = f;
  g.seed.reset();
  rfr_status st = load(config_path, g, &cfg);
  if (st != RFR_OK) return report_failure(st, config_path);
  char* dir = nullptr;
  rfr_config_output_dir(cfg, &dir);
  const std::filesystem::path out_dir = take(dir);
  rfr_dataset* source = nullptr;
  rfr_dataset* target = nullptr;
  st = rfr_prepare_data(cfg, f.seed.value_or(0), &source, &target);
  rfr_config_free(cfg);
  if (st != RFR_OK) return report_failure(st, "gen-shift");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  const std::string src_path = (out_dir / "source.csv").string();
  const std::string tgt_path = (out_dir / "target.csv").string();
  st = rfr_dataset_save(source, src_path.c_str());
  if (st == RFR_OK) st = rfr_dataset_save(target, tgt_path.c_str());
  std::size_t ns = 0, nt = 0, cols = 0;
  rfr_dataset_shape(source, &ns, &cols);
  rfr_dataset_shape(target, &nt, nullptr);
  rfr_dataset_free(source);
  rfr_dataset_free(target);
  if (st != RFR_OK) return report_failure(st, "gen-shift");
  std::cout << "source: " << ns << " rows -> " << src_path << '\n'
            << "target: " << nt << " rows -> " << tgt_path << '\n'
            << "features: " << cols << '\n';
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const CommonFlags& f) {
  if (f.seed || f.lambda || f.rho || f.p_norm || !f.set.empty()) {
    return usage_error("report accepts only --out");
  }
  std::vector<std::string> paths;
  for (const auto& in : inputs) {
    paths.push_back(std::filesystem::is_directory(in)
                        ? (std::filesystem::path(in) / "records.jsonl").string()
                        : in);
  }
  std::vector<const char*> ptrs;
  for (const auto& p : paths) ptrs.push_back(p.c_str());
  char* table = nullptr;
  const rfr_status st = rfr_report(ptrs.data(), ptrs.size(), &table);
  if (st != RFR_OK) return report_failure(st, "report");
  const std::string text = take(table);
  std::cout << text;
  if (f.out) {
    std::ofstream out(*f.out, std::ios::binary);
    if (!out) return usage_error("cannot write " + *f.out);
    out << text;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust fairness regularization experiments"};
  app.require_subcommand(1);
  CommonFlags flags;
  app.add_option("--seed", flags.seed, "Single seed (run), suite seed (verify-theory)");
  app.add_option("--out", flags.out, "Output directory or file");
  app.add_option("--lambda", flags.lambda, "Lambda grid, comma separated");
  app.add_option("--rho", flags.rho, "Perturbation radius");
  app.add_option("--p-norm", flags.p_norm, "Perturbation norm exponent (number or inf)");
  app.add_option("--set", flags.set, "Config override key=value (repeatable)");

  std::string config_path;
  auto* run = app.add_subcommand("run", "Train and evaluate every configured cell");
  run->add_option("config", config_path, "Experiment config file")->required();
  run->fallthrough();

  auto* verify = app.add_subcommand("verify-theory", "Run the transport and first-order checks");
  verify->fallthrough();

  std::string shift_config;
  auto* gen = app.add_subcommand("gen-shift", "Write the source and target split of one seed");
  gen->add_option("config", shift_config, "Experiment config file")->required();
  gen->fallthrough();

  std::vector<std::string> inputs;
  auto* report = app.add_subcommand("report", "Aggregate records into a mean and std table");
  report->add_option("records", inputs, "records.jsonl files or output directories")->required();
  report->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  if (*run) return cmd_run(config_path, flags);
  if (*verify) return cmd_verify(flags);
  if (*gen) return cmd_gen_shift(shift_config, flags);
  return cmd_report(inputs, flags);
}
