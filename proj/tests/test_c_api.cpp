#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "adt/adt.h"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("adt_capi_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string take(char* s) {
  std::string out = s ? s : "";
  adt_string_free(s);
  return out;
}

const char* kSmall = R"({
  "seed": 3,
  "dataset": {"source": "synthetic", "kind": "two_moons", "n": 200, "noise": 0.1},
  "threat_model": {"epsilon": 0.1},
  "train": {"method": "at_pgd", "epochs": 3, "batch_size": 32},
  "attacks": ["fgsm", "pgd-10"],
  "eval": {"hessian": true, "hessian_points": 3, "landscape": true, "resolution": 5}
})";

adt_config* small_config(const fs::path& out, const char* text = kSmall) {
  adt_config* c = nullptr;
  REQUIRE(adt_config_parse(text, &c) == ADT_OK);
  REQUIRE(adt_config_set_output_dir(c, out.c_str()) == ADT_OK);
  return c;
}

void be32(std::vector<unsigned char>& b, uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<unsigned char>(v >> s));
}

}  // namespace

TEST_CASE("status codes and error messages") {
  CHECK(std::string(adt_version()).size() > 0);
  adt_config* c = nullptr;
  CHECK(adt_config_parse("{ not json", &c) == ADT_ERR_CONFIG);
  CHECK(std::string(adt_last_error()).find("line 1") != std::string::npos);
  CHECK(c == nullptr);
  CHECK(adt_config_parse(nullptr, &c) == ADT_ERR_ARGUMENT);
  CHECK(adt_config_load("/nonexistent/x.json", &c) == ADT_ERR_IO);
  REQUIRE(adt_config_parse(R"({"dataset": {}})", &c) == ADT_OK);
  CHECK(adt_config_override(c, "threat_model.epsilon=-1") == ADT_ERR_CONFIG);
  CHECK(std::string(adt_last_error()).find("threat_model.epsilon") != std::string::npos);
  // A failed override leaves the config as it was.
  char* text = nullptr;
  REQUIRE(adt_config_to_json(c, &text) == ADT_OK);
  CHECK(take(text).find("\"epsilon\": 0.03137254901960784") != std::string::npos);
  CHECK(adt_run_stage(c, "fly") == ADT_ERR_CONFIG);
  adt_config_free(c);
  adt_model* m = nullptr;
  CHECK(adt_model_load("/nonexistent/model.snap", &m) == ADT_ERR_IO);
}

TEST_CASE("stages write under the output dir and reruns are byte identical") {
  const auto a = scratch("run_a"), b = scratch("run_b");
  auto* ca = small_config(a / "out");
  auto* cb = small_config(b / "out");
  REQUIRE(adt_run_stage(ca, "run") == ADT_OK);
  REQUIRE(adt_run_stage(cb, "run") == ADT_OK);
  CHECK(slurp(a / "out/report.csv") == slurp(b / "out/report.csv"));
  CHECK(slurp(a / "out/attacks.csv") == slurp(b / "out/attacks.csv"));
  CHECK(slurp(a / "out/model.snap") == slurp(b / "out/model.snap"));
  CHECK(slurp(a / "out/hessian.csv") == slurp(b / "out/hessian.csv"));
  CHECK(slurp(a / "out/report.csv").rfind("model,attack,n,accuracy,natural_accuracy,robust_accuracy\n", 0) == 0);

  // Everything produced is listed in the manifest and nothing lands outside.
  std::set<std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(a)) files.insert(fs::relative(e.path(), a).string());
  const auto manifest = slurp(a / "out/manifest.json");
  CHECK(manifest.find("\"status\": \"ok\"") != std::string::npos);
  for (const auto& f : files) {
    if (f == "out" || f == "out/manifest.json") continue;
    CHECK_MESSAGE(manifest.find("\"" + f.substr(4) + "\"") != std::string::npos, f);
  }

  // Stages can be rerun separately from saved artifacts.
  const auto before = slurp(a / "out/report.csv");
  REQUIRE(adt_run_stage(ca, "eval") == ADT_OK);
  CHECK(slurp(a / "out/report.csv") == before);
  REQUIRE(adt_run_stage(ca, "landscape") == ADT_OK);

  adt_model* m = nullptr;
  REQUIRE(adt_model_load((a / "out/model.snap").c_str(), &m) == ADT_OK);
  CHECK(adt_model_input_dim(m) == 2);
  CHECK(adt_model_num_classes(m) == 2);
  const double x[] = {0.1, 0.9, 0.9, 0.1, 0.5, 0.5};
  int labels[3] = {-1, -1, -1};
  REQUIRE(adt_model_predict(m, x, 3, labels) == ADT_OK);
  for (int l : labels) CHECK((l == 0 || l == 1));
  CHECK(adt_model_predict(m, x, 0, labels) == ADT_ERR_ARGUMENT);
  adt_model_free(m);
  adt_config_free(ca);
  adt_config_free(cb);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("report joins per-run csv files") {
  const auto d = scratch("report");
  auto* c1 = small_config(d / "r1");
  REQUIRE(adt_config_override(c1, "model_name=robust") == ADT_OK);
  auto* c2 = small_config(d / "r2");
  REQUIRE(adt_config_override(c2, "train.method=standard") == ADT_OK);
  REQUIRE(adt_config_override(c2, "attacks=[\"fgsm\",\"mim-5\"]") == ADT_OK);
  REQUIRE(adt_config_override(c2, "eval.hessian=false") == ADT_OK);
  REQUIRE(adt_run_stage(c1, "run") == ADT_OK);
  REQUIRE(adt_run_stage(c2, "run") == ADT_OK);
  const std::string r1 = (d / "r1").string(), r2 = (d / "r2").string();
  const char* dirs[] = {r1.c_str(), r2.c_str()};
  char *csv = nullptr, *table = nullptr;
  REQUIRE(adt_report(dirs, 2, &csv, &table) == ADT_OK);
  const auto joined = take(csv);
  CHECK(take(table).find("robust") != std::string::npos);

  std::istringstream js(joined);
  std::string header;
  std::getline(js, header);
  CHECK(header == "model,natural,fgsm,pgd-10,mim-5,robust_accuracy");
  // Every per-run row reappears in its column.
  for (const auto& dir : {d / "r1", d / "r2"}) {
    std::istringstream in(slurp(dir / "report.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::vector<std::string> cells;
      std::stringstream ss(line);
      for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
      std::istringstream jr(joined);
      std::string row, hdr;
      std::getline(jr, hdr);
      std::vector<std::string> cols;
      std::stringstream hs(hdr);
      for (std::string c; std::getline(hs, c, ',');) cols.push_back(c);
      bool found = false;
      while (std::getline(jr, row)) {
        std::vector<std::string> rc;
        std::stringstream rs(row);
        for (std::string c; std::getline(rs, c, ',');) rc.push_back(c);
        if (rc.empty() || rc[0] != cells[0]) continue;
        for (std::size_t k = 0; k < cols.size(); ++k)
          if (cols[k] == cells[1]) found = k < rc.size() && rc[k] == cells[3];
        CHECK(rc.back() == cells[5]);
      }
      CHECK_MESSAGE(found, line);
    }
  }
  const char* missing[] = {"/nonexistent/run"};
  CHECK(adt_report(missing, 1, &csv, nullptr) == ADT_ERR_IO);
  adt_config_free(c1);
  adt_config_free(c2);
  fs::remove_all(d);
}

TEST_CASE("idx fixture drives a full run") {
  const auto d = scratch("idx");
  std::vector<unsigned char> img, lab;
  be32(img, 0x803);
  be32(img, 40);
  be32(img, 2);
  be32(img, 2);
  be32(lab, 0x801);
  be32(lab, 40);
  for (int i = 0; i < 40; ++i) {
    const unsigned char v = i % 2 ? 220 : 30;
    for (int k = 0; k < 4; ++k) img.push_back(static_cast<unsigned char>(v + k));
    lab.push_back(static_cast<unsigned char>(i % 2));
  }
  std::ofstream(d / "img.idx", std::ios::binary).write(reinterpret_cast<const char*>(img.data()), img.size());
  std::ofstream(d / "lab.idx", std::ios::binary).write(reinterpret_cast<const char*>(lab.data()), lab.size());
  std::ofstream(d / "cfg.json") << R"({"dataset": {"source": "idx", "images": "img.idx", "labels": "lab.idx"},
    "train": {"epochs": 20, "batch_size": 8}, "attacks": ["fgsm"], "output_dir": "out"})";
  adt_config* c = nullptr;
  REQUIRE(adt_config_load((d / "cfg.json").c_str(), &c) == ADT_OK);
  REQUIRE(adt_config_set_output_dir(c, (d / "out").c_str()) == ADT_OK);
  REQUIRE(adt_run_stage(c, "run") == ADT_OK);
  const auto rep = slurp(d / "out/report.csv");
  CHECK(rep.find("standard,natural,8,1.000000") != std::string::npos);
  adt_config_free(c);

  // Corrupt magic fails with the I/O code and a failed manifest.
  img[3] = 0x02;
  std::ofstream(d / "img.idx", std::ios::binary).write(reinterpret_cast<const char*>(img.data()), img.size());
  REQUIRE(adt_config_load((d / "cfg.json").c_str(), &c) == ADT_OK);
  REQUIRE(adt_config_set_output_dir(c, (d / "bad").c_str()) == ADT_OK);
  CHECK(adt_run_stage(c, "train") == ADT_ERR_IO);
  CHECK(std::string(adt_last_error()).find("bad magic") != std::string::npos);
  CHECK(slurp(d / "bad/manifest.json").find("\"status\": \"failed\"") != std::string::npos);
  adt_config_free(c);
  fs::remove_all(d);
}
