#include "adt/runner.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <json.hpp>

#include "adt/error.hpp"
#include "adt/eval.hpp"

namespace adt {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const InvalidArgument*>(&e)) return kExitConfig;
  if (dynamic_cast<const NumericError*>(&e)) return kExitNumeric;
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kExitIo;
  return kExitFailure;
}

Dataset load_dataset(const DatasetConfig& cfg) {
  Dataset d;
  if (cfg.source == "synthetic") {
    d = make_synthetic(cfg.kind, cfg.n, cfg.noise, cfg.split_seed);
  } else if (cfg.source == "csv") {
    d = load_csv(cfg.csv, cfg.normalize);
  } else if (cfg.source == "idx") {
    d = load_idx(cfg.images, cfg.labels);
  } else {
    throw ConfigError("dataset.source must be synthetic, csv or idx");
  }
  d.validate();
  return d;
}

std::pair<Dataset, Dataset> load_splits(const DatasetConfig& cfg) {
  return split(load_dataset(cfg), cfg.train_fraction, cfg.split_seed);
}

namespace {

std::string fmt(Real v, const char* f = "%.6f") {
  char buf[48];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Stage context: owns the output dir and the artifact list.
class Run {
 public:
  explicit Run(const ExperimentConfig& cfg) : cfg_(cfg), out_(cfg.output_dir) {}

  std::vector<std::string> artifacts;

  void prepare() {
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw IoError("cannot create output dir " + out_.string() + ": " + ec.message());
  }

  std::ofstream open(const std::string& name, bool binary = false) {
    std::ofstream f(out_ / name, binary ? std::ios::binary : std::ios::out);
    if (!f) throw IoError("cannot write " + (out_ / name).string());
    if (std::find(artifacts.begin(), artifacts.end(), name) == artifacts.end()) artifacts.push_back(name);
    return f;
  }

  void note(const std::string& name) {
    if (std::find(artifacts.begin(), artifacts.end(), name) == artifacts.end()) artifacts.push_back(name);
  }

  const Dataset& train_set() { return splits().first; }
  const Dataset& test_set() {
    if (!test_) {
      test_ = splits().second;
      if (cfg_.eval.max_examples && cfg_.eval.max_examples < test_->size()) test_ = test_->head(cfg_.eval.max_examples);
    }
    return *test_;
  }

  void train() {
    auto res = adt::train(cfg_.train, train_set());
    {
      auto f = open("run_log.jsonl");
      res.log.write_jsonl(f);
    }
    write_net("model.snap", res.net);
    if (res.explicit_gen) write_net("generator.snap", res.explicit_gen->net);
    if (res.implicit_gen) write_net("implicit_generator.snap", res.implicit_gen->generator);
    if (res.posterior) write_net("posterior.snap", res.posterior->q_net);
    auto f = open("config.json");
    f << serialize_config(cfg_);
    net_ = std::move(res.net);
    if (res.explicit_gen) explicit_ = std::move(res.explicit_gen);
    if (res.implicit_gen) implicit_ = std::move(res.implicit_gen);
  }

  void attack() {
    load_models();
    const auto& te = test_set();
    auto f = open("attacks.csv");
    f << "attack,n,success_rate,mean_linf,max_linf\n";
    for (std::size_t i = 0; i < cfg_.attacks.size(); ++i) {
      const auto& spec = cfg_.attacks[i];
      Rng rng = make_rng(cfg_.seed, 100 + i);
      const auto ctx = context();
      auto adv = run_attack(*net_, te.features, te.labels, cfg_.train.threat, spec, rng, ctx);
      Real mean_linf = 0, max_linf = 0;
      for (std::size_t r = 0; r < adv.delta.rows(); ++r) {
        Real m = 0;
        for (Real v : adv.delta.row(r)) m = std::max(m, std::abs(v));
        mean_linf += m / static_cast<Real>(adv.delta.rows());
        max_linf = std::max(max_linf, m);
      }
      f << spec.name << ',' << te.size() << ','
        << fmt(static_cast<Real>(adv.successes()) / static_cast<Real>(te.size())) << ',' << fmt(mean_linf, "%.9f")
        << ',' << fmt(max_linf, "%.9f") << '\n';
    }
  }

  void eval() {
    load_models();
    const auto& te = test_set();
    std::vector<SuiteAttack> suite;
    if (cfg_.eval.natural) suite.push_back(identity_attack());
    const auto ctx = context();
    for (std::size_t i = 0; i < cfg_.attacks.size(); ++i)
      suite.push_back(make_suite_attack(*net_, cfg_.attacks[i], cfg_.train.threat, derive_seed(cfg_.seed, 100 + i), ctx));
    std::vector<EvalReport> reps{robust_accuracy(*net_, te, suite, cfg_.display_name())};
    {
      auto f = open("report.csv");
      write_csv(f, reps);
    }
    {
      auto f = open("report.json");
      write_json(f, reps);
    }
    {
      std::ostringstream csv;
      write_csv(csv, reps);
      auto f = open("summary.txt");
      f << format_table(joined_from(csv.str()));
    }
    if (cfg_.eval.hessian) hessian();
    if (cfg_.eval.landscape) landscape();
    if (cfg_.eval.pca) pca();
  }

  void hessian() {
    load_models();
    const auto& te = test_set();
    auto f = open("hessian.csv");
    f << "index,eigenvalue,converged,iterations\n";
    const auto n = std::min(cfg_.eval.hessian_points, te.size());
    for (std::size_t i = 0; i < n; ++i) {
      const Tensor x = row(te, i);
      auto e = dominant_hessian_eigenvalue(*net_, x, te.labels[i], cfg_.eval.hessian_iters, cfg_.eval.hessian_tol,
                                           derive_seed(cfg_.seed, 300 + i));
      f << i << ',' << fmt(e.value, "%.10g") << ',' << (e.converged ? 1 : 0) << ',' << e.iterations << '\n';
    }
  }

  void landscape() {
    load_models();
    const auto& te = test_set();
    auto f = open("landscape.csv");
    f << "index,a,b,loss,fallback\n";
    const auto n = std::min(cfg_.eval.landscape_points, te.size());
    for (std::size_t i = 0; i < n; ++i) {
      auto s = loss_surface_grid(*net_, row(te, i), te.labels[i], cfg_.train.threat, cfg_.eval.resolution,
                                 derive_seed(cfg_.seed, 400 + i));
      for (std::size_t a = 0; a < s.offsets.size(); ++a)
        for (std::size_t b = 0; b < s.offsets.size(); ++b)
          f << i << ',' << fmt(s.offsets[a], "%.9g") << ',' << fmt(s.offsets[b], "%.9g") << ','
            << fmt(s.loss.at(a, b), "%.10g") << ',' << (s.gradient_fallback ? 1 : 0) << '\n';
    }
  }

  void pca() {
    load_models();
    const auto& te = test_set();
    const Tensor x = row(te, 0).reshaped({1, te.dim()});
    const int y[] = {te.labels[0]};
    AttackSpec spec = AttackSpec::dist_exp_default();
    Rng rng = make_rng(cfg_.seed, 500);
    auto dist = dist_attack_exp(*net_, x, y, cfg_.train.threat, spec, rng);
    std::vector<Tensor> samples;
    for (std::size_t s = 0; s < cfg_.eval.pca_samples; ++s) {
      const Tensor d = sample_explicit(dist.params, cfg_.train.threat, rng).delta;
      samples.push_back(d.reshaped({d.size()}));
    }
    auto f = open("pca.csv");
    write_pca_csv(f, pca_project(samples));
  }

 private:
  const std::pair<Dataset, Dataset>& splits() {
    if (!splits_) splits_ = load_splits(cfg_.dataset);
    return *splits_;
  }

  static Tensor row(const Dataset& d, std::size_t i) {
    auto r = d.features.row(i);
    return Tensor({d.dim()}, std::vector<Real>(r.begin(), r.end()));
  }

  void write_net(const std::string& name, const Network& net) {
    note(name);
    save_snapshot(net, out_ / name);
  }

  void load_models() {
    if (net_) return;
    const auto p = out_ / "model.snap";
    if (!fs::exists(p)) throw IoError("no trained model at " + p.string() + " (run the train stage first)");
    net_ = load_snapshot(p);
    if (fs::exists(out_ / "generator.snap")) explicit_ = ExplicitGenerator{load_snapshot(out_ / "generator.snap"), {}, true};
    if (fs::exists(out_ / "implicit_generator.snap"))
      implicit_ = ImplicitSampler{load_snapshot(out_ / "implicit_generator.snap"), cfg_.train.z_dim, true};
  }

  AttackContext context() {
    AttackContext ctx;
    ctx.pool_x = &train_set().features;
    ctx.pool_y = train_set().labels;
    ctx.explicit_gen = explicit_ ? &*explicit_ : nullptr;
    ctx.implicit_gen = implicit_ ? &*implicit_ : nullptr;
    return ctx;
  }

  static std::string joined_from(const std::string& csv) {
    std::istringstream is(csv);
    auto rows = read_csv_report(is);
    std::vector<std::string> attacks;
    for (const auto& r : rows)
      if (std::find(attacks.begin(), attacks.end(), r.attack) == attacks.end()) attacks.push_back(r.attack);
    std::ostringstream os;
    os << "model";
    for (const auto& a : attacks) os << ',' << a;
    os << ",robust_accuracy\n";
    if (!rows.empty()) {
      os << rows[0].model;
      for (const auto& a : attacks)
        for (const auto& r : rows)
          if (r.attack == a) os << ',' << fmt(r.accuracy);
      os << ',' << fmt(rows[0].robust_accuracy) << '\n';
    }
    return os.str();
  }

  const ExperimentConfig& cfg_;
  fs::path out_;
  std::optional<std::pair<Dataset, Dataset>> splits_;
  std::optional<Dataset> test_;
  std::optional<Network> net_;
  std::optional<ExplicitGenerator> explicit_;
  std::optional<ImplicitSampler> implicit_;
};

void write_manifest(const fs::path& dir, const std::string& stage, const StageOutcome& o) {
  nlohmann::ordered_json j;
  j["stage"] = stage;
  j["status"] = o.exit_code == kExitOk ? "ok" : "failed";
  j["exit_code"] = o.exit_code;
  if (!o.error.empty()) j["error"] = o.error;
  j["artifacts"] = o.artifacts;
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::ofstream f(dir / "manifest.json");
  if (f) f << j.dump(2) << '\n';
}

}  // namespace

StageOutcome run_stage(const ExperimentConfig& cfg, const std::string& stage) {
  StageOutcome o;
  Run run(cfg);
  try {
    if (stage != "train" && stage != "attack" && stage != "eval" && stage != "landscape" && stage != "run")
      throw ConfigError("unknown stage '" + stage + "' (train, attack, eval, landscape, run)");
    run.prepare();
    if (stage == "train" || stage == "run") run.train();
    if (stage == "attack" || stage == "run") run.attack();
    if (stage == "eval" || stage == "run") run.eval();
    if (stage == "landscape") run.landscape();
  } catch (const std::exception& e) {
    o.exit_code = exit_code_for(e);
    o.error = e.what();
  }
  o.artifacts = run.artifacts;
  if (o.exit_code == kExitOk || fs::exists(cfg.output_dir)) write_manifest(cfg.output_dir, stage, o);
  return o;
}

std::string join_reports(const std::vector<fs::path>& run_dirs) {
  if (run_dirs.empty()) throw InvalidArgument("report needs at least one run dir");
  std::vector<std::string> attacks, models;
  std::map<std::pair<std::string, std::string>, Real> cell;
  std::map<std::string, Real> robust;
  for (const auto& dir : run_dirs) {
    std::ifstream in(dir / "report.csv");
    if (!in) throw IoError("no report.csv in " + dir.string());
    for (const auto& r : read_csv_report(in)) {
      if (std::find(attacks.begin(), attacks.end(), r.attack) == attacks.end()) attacks.push_back(r.attack);
      if (std::find(models.begin(), models.end(), r.model) == models.end()) models.push_back(r.model);
      if (cell.count({r.model, r.attack})) throw InvalidArgument("model '" + r.model + "' appears in two run dirs");
      cell[{r.model, r.attack}] = r.accuracy;
      robust[r.model] = r.robust_accuracy;
    }
  }
  std::ostringstream os;
  os << "model";
  for (const auto& a : attacks) os << ',' << a;
  os << ",robust_accuracy\n";
  for (const auto& m : models) {
    os << m;
    for (const auto& a : attacks) {
      os << ',';
      if (auto it = cell.find({m, a}); it != cell.end()) os << fmt(it->second);
    }
    os << ',' << fmt(robust[m]) << '\n';
  }
  return os.str();
}

std::string format_table(const std::string& joined_csv) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream is(joined_csv);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::string c;
    std::stringstream ss(line);
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (width.size() <= i) width.push_back(0);
      width[i] = std::max(width[i], r[i].size());
    }
  std::ostringstream os;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t i = 0; i < rows[k].size(); ++i) {
      if (i) os << "  ";
      const auto pad = width[i] - rows[k][i].size();
      if (i == 0)
        os << rows[k][i] << std::string(pad, ' ');
      else
        os << std::string(pad, ' ') << rows[k][i];
    }
    os << '\n';
    if (k == 0) {
      std::size_t total = 0;
      for (auto w : width) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return os.str();
}

}  // namespace adt
