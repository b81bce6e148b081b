#include "adt/adt.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include <json.hpp>

#include "adt/config.hpp"
#include "adt/error.hpp"
#include "adt/runner.hpp"
#include "adt/trainers.hpp"

struct adt_config {
  std::string text;  // JSON source, overrides applied
  adt::ExperimentConfig cfg;
};

struct adt_model {
  adt::Network net;
};

namespace {

thread_local std::string g_error;

adt_status fail(adt_status s, const std::string& msg) {
  g_error = msg;
  return s;
}

adt_status status_for(const std::exception& e) {
  switch (adt::exit_code_for(e)) {
    case adt::kExitConfig: return dynamic_cast<const adt::InvalidArgument*>(&e) ? ADT_ERR_ARGUMENT : ADT_ERR_CONFIG;
    case adt::kExitNumeric: return ADT_ERR_NUMERIC;
    case adt::kExitIo: return ADT_ERR_IO;
    default: return ADT_ERR_FAILURE;
  }
}

template <class F>
adt_status guarded(F&& f) {
  try {
    f();
    return ADT_OK;
  } catch (const std::exception& e) {
    return fail(status_for(e), e.what());
  } catch (...) {
    return fail(ADT_ERR_FAILURE, "unknown error");
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p) std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

}  // namespace

extern "C" {

const char* adt_version(void) { return "0.1.0"; }
const char* adt_last_error(void) { return g_error.c_str(); }
void adt_string_free(char* s) { std::free(s); }

adt_status adt_config_load(const char* path, adt_config** out) {
  if (!path || !out) return fail(ADT_ERR_ARGUMENT, "adt_config_load: null argument");
  return guarded([&] {
    auto cfg = adt::load_config(path);
    // Keep the resolved form so overrides see absolute data paths.
    *out = new adt_config{adt::serialize_config(cfg), cfg};
  });
}

adt_status adt_config_parse(const char* json_text, adt_config** out) {
  if (!json_text || !out) return fail(ADT_ERR_ARGUMENT, "adt_config_parse: null argument");
  return guarded([&] {
    auto cfg = adt::parse_config(json_text);
    *out = new adt_config{json_text, cfg};
  });
}

adt_status adt_config_override(adt_config* c, const char* assignment) {
  if (!c || !assignment) return fail(ADT_ERR_ARGUMENT, "adt_config_override: null argument");
  return guarded([&] {
    auto text = adt::apply_override(c->text, assignment);
    auto cfg = adt::parse_config(text);
    c->text = std::move(text);
    c->cfg = std::move(cfg);
  });
}

adt_status adt_config_set_seed(adt_config* c, uint64_t seed) {
  if (!c) return fail(ADT_ERR_ARGUMENT, "adt_config_set_seed: null config");
  return adt_config_override(c, ("seed=" + std::to_string(seed)).c_str());
}

adt_status adt_config_set_output_dir(adt_config* c, const char* dir) {
  if (!c || !dir) return fail(ADT_ERR_ARGUMENT, "adt_config_set_output_dir: null argument");
  return guarded([&] {
    auto text = adt::apply_override(c->text, std::string("output_dir=") + nlohmann::json(dir).dump());
    auto cfg = adt::parse_config(text);
    c->text = std::move(text);
    c->cfg = std::move(cfg);
  });
}

adt_status adt_config_to_json(const adt_config* c, char** out) {
  if (!c || !out) return fail(ADT_ERR_ARGUMENT, "adt_config_to_json: null argument");
  return guarded([&] { *out = dup(adt::serialize_config(c->cfg)); });
}

adt_status adt_config_output_dir(const adt_config* c, char** out) {
  if (!c || !out) return fail(ADT_ERR_ARGUMENT, "adt_config_output_dir: null argument");
  *out = dup(c->cfg.output_dir);
  return ADT_OK;
}

void adt_config_free(adt_config* c) { delete c; }

adt_status adt_run_stage(const adt_config* c, const char* stage) {
  if (!c || !stage) return fail(ADT_ERR_ARGUMENT, "adt_run_stage: null argument");
  const auto o = adt::run_stage(c->cfg, stage);
  if (o.exit_code == adt::kExitOk) return ADT_OK;
  return fail(static_cast<adt_status>(o.exit_code), o.error);
}

adt_status adt_report(const char* const* run_dirs, size_t count, char** csv, char** table) {
  if (!run_dirs || !csv) return fail(ADT_ERR_ARGUMENT, "adt_report: null argument");
  return guarded([&] {
    std::vector<std::filesystem::path> dirs;
    for (size_t i = 0; i < count; ++i) dirs.emplace_back(run_dirs[i]);
    const auto joined = adt::join_reports(dirs);
    *csv = dup(joined);
    if (table) *table = dup(adt::format_table(joined));
  });
}

adt_status adt_model_load(const char* path, adt_model** out) {
  if (!path || !out) return fail(ADT_ERR_ARGUMENT, "adt_model_load: null argument");
  return guarded([&] { *out = new adt_model{adt::load_snapshot(path)}; });
}

size_t adt_model_input_dim(const adt_model* m) { return m ? m->net.input_dim() : 0; }
size_t adt_model_num_classes(const adt_model* m) { return m ? m->net.output_dim() : 0; }

adt_status adt_model_predict(const adt_model* m, const double* x, size_t rows, int* labels) {
  if (!m || !x || !labels) return fail(ADT_ERR_ARGUMENT, "adt_model_predict: null argument");
  if (rows == 0) return fail(ADT_ERR_ARGUMENT, "adt_model_predict: no rows");
  return guarded([&] {
    const auto d = m->net.input_dim();
    adt::Tensor t({rows, d}, std::vector<double>(x, x + rows * d));
    const auto p = adt::predict(m->net, t);
    std::copy(p.begin(), p.end(), labels);
  });
}

void adt_model_free(adt_model* m) { delete m; }

}  // extern "C"
