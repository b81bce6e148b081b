// adtlab: experiment runner over the C API.
#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "adt/adt.h"

namespace {

int exit_for(adt_status s) { return s == ADT_ERR_ARGUMENT ? 2 : static_cast<int>(s); }

int report_error(adt_status s) {
  std::cerr << "adtlab: " << adt_last_error() << "\n";
  return exit_for(s);
}

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  uint64_t seed = 0;
  bool seed_set = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "JSON experiment config")->required()->check(CLI::ExistingFile);
  sub->add_option("--override", c.overrides, "dotted.key=value applied after loading (repeatable)");
  sub->add_option("--out", c.out, "output directory (overrides output_dir)");
  sub->add_option_function<uint64_t>("--seed", [&c](const uint64_t& s) {
    c.seed = s;
    c.seed_set = true;
  }, "global seed (overrides seed)");
}

using ConfigPtr = std::unique_ptr<adt_config, decltype(&adt_config_free)>;

int with_config(const Common& c, const std::function<int(adt_config*)>& body) {
  adt_config* raw = nullptr;
  if (auto s = adt_config_load(c.config.c_str(), &raw); s != ADT_OK) return report_error(s);
  ConfigPtr cfg(raw, adt_config_free);
  for (const auto& o : c.overrides)
    if (auto s = adt_config_override(cfg.get(), o.c_str()); s != ADT_OK) return report_error(s);
  if (c.seed_set)
    if (auto s = adt_config_set_seed(cfg.get(), c.seed); s != ADT_OK) return report_error(s);
  if (!c.out.empty())
    if (auto s = adt_config_set_output_dir(cfg.get(), c.out.c_str()); s != ADT_OK) return report_error(s);
  return body(cfg.get());
}

int stage(const Common& c, const std::string& name) {
  return with_config(c, [&](adt_config* cfg) {
    char* dir = nullptr;
    adt_config_output_dir(cfg, &dir);
    std::string out = dir ? dir : "";
    adt_string_free(dir);
    const auto s = adt_run_stage(cfg, name.c_str());
    if (s != ADT_OK) {
      std::cerr << "adtlab " << name << ": " << adt_last_error() << " (manifest in " << out << ")\n";
      return exit_for(s);
    }
    std::cout << name << ": ok -> " << out << "\n";
    if (name == "eval" || name == "run") {
      std::ifstream in(out + "/summary.txt");
      std::cout << in.rdbuf();
    }
    return 0;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial distributional training experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(adt_version()));

  Common common;
  const char* stages[][2] = {{"train", "train a classifier"},
                             {"attack", "run the configured attacks against a trained model"},
                             {"eval", "robust accuracy over the attack suite, plus optional probes"},
                             {"landscape", "loss surface grids around test inputs"},
                             {"run", "train, attack and eval in sequence"}};
  std::vector<CLI::App*> stage_cmds;
  for (auto& s : stages) {
    auto* sub = app.add_subcommand(s[0], s[1]);
    add_common(sub, common);
    stage_cmds.push_back(sub);
  }

  auto* cfg_cmd = app.add_subcommand("config", "print the resolved config");
  add_common(cfg_cmd, common);

  std::vector<std::string> run_dirs;
  std::string report_out;
  auto* rep = app.add_subcommand("report", "side-by-side model x attack table from run dirs");
  rep->add_option("runs", run_dirs, "run directories holding report.csv")->required();
  rep->add_option("--out", report_out, "directory to write report.csv into");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  for (auto* sub : stage_cmds)
    if (sub->parsed()) return stage(common, sub->get_name());

  if (cfg_cmd->parsed()) {
    return with_config(common, [](adt_config* cfg) {
      char* text = nullptr;
      if (auto s = adt_config_to_json(cfg, &text); s != ADT_OK) return report_error(s);
      std::cout << text;
      adt_string_free(text);
      return 0;
    });
  }

  if (rep->parsed()) {
    std::vector<const char*> dirs;
    for (const auto& d : run_dirs) dirs.push_back(d.c_str());
    char *csv = nullptr, *table = nullptr;
    if (auto s = adt_report(dirs.data(), dirs.size(), &csv, &table); s != ADT_OK) return report_error(s);
    std::cout << table;
    int rc = 0;
    if (!report_out.empty()) {
      std::error_code ec;
      std::filesystem::create_directories(report_out, ec);
      std::ofstream f(report_out + "/report.csv");
      if (!f) {
        std::cerr << "adtlab: cannot write " << report_out << "/report.csv\n";
        rc = 4;
      } else {
        f << csv;
      }
    }
    adt_string_free(csv);
    adt_string_free(table);
    return rc;
  }
  return 2;
}
