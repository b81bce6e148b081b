#include "adt/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include <json.hpp>

#include "adt/error.hpp"

namespace adt {

namespace {

using json = nlohmann::ordered_json;

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Object reader that records which keys it knows about, so leftovers can be
// reported as unknown with the nearest known spelling.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    known_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void real(const std::string& key, Real& out) {
    if (auto v = find(key)) {
      if (!v->is_number()) throw ConfigError(field(key) + " must be a number");
      out = v->get<Real>();
      if (!std::isfinite(out)) throw ConfigError(field(key) + " must be finite");
    }
  }
  void size(const std::string& key, std::size_t& out) {
    if (auto v = find(key)) {
      if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0))
        throw ConfigError(field(key) + " must be a nonnegative integer");
      out = v->get<std::size_t>();
    }
  }
  void u64(const std::string& key, std::uint64_t& out) {
    std::size_t v = out;
    size(key, v);
    out = v;
  }
  void boolean(const std::string& key, bool& out) {
    if (auto v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key) + " must be true or false");
      out = v->get<bool>();
    }
  }
  void string(const std::string& key, std::string& out) {
    if (auto v = find(key)) {
      if (!v->is_string()) throw ConfigError(field(key) + " must be a string");
      out = v->get<std::string>();
    }
  }
  void sizes(const std::string& key, std::vector<std::size_t>& out) {
    if (auto v = find(key)) {
      if (!v->is_array()) throw ConfigError(field(key) + " must be an array of integers");
      out.clear();
      for (const auto& e : *v) {
        if (!e.is_number_unsigned() && !(e.is_number_integer() && e.get<std::int64_t>() >= 0))
          throw ConfigError(field(key) + " must be an array of nonnegative integers");
        out.push_back(e.get<std::size_t>());
      }
    }
  }
  std::optional<Node> child(const std::string& key) {
    if (auto v = find(key)) return Node(*v, field(key));
    return std::nullopt;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (known_.count(it.key())) continue;
      std::string msg = "unknown key '" + field(it.key()) + "'";
      std::string best;
      std::size_t bd = 3;
      for (const auto& k : known_) {
        const auto d = edit_distance(it.key(), k);
        if (d < bd) {
          bd = d;
          best = k;
        }
      }
      if (!best.empty()) msg += "; did you mean '" + field(best) + "'?";
      throw ConfigError(msg);
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

template <class F>
auto as_config_error(const std::string& field, F&& f) {
  try {
    return f();
  } catch (const InvalidArgument& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

void read_threat(Node& n, ThreatModel& tm) {
  n.real("epsilon", tm.epsilon);
  if (!(tm.epsilon > 0)) throw ConfigError(n.field("epsilon") + " must be positive");
  if (auto v = n.find("box")) {
    if (v->is_null()) {
      tm.pixel_box.reset();
    } else {
      if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number())
        throw ConfigError(n.field("box") + " must be null or [lo, hi]");
      tm.pixel_box = std::pair<Real, Real>{(*v)[0].get<Real>(), (*v)[1].get<Real>()};
      if (!(tm.pixel_box->first < tm.pixel_box->second)) throw ConfigError(n.field("box") + " needs lo < hi");
    }
  }
  n.finish();
}

void read_dataset(Node& n, DatasetConfig& d) {
  n.string("source", d.source);
  std::string kind = to_string(d.kind);
  n.string("kind", kind);
  d.kind = as_config_error(n.field("kind"), [&] { return synthetic_kind_from_string(kind); });
  n.size("n", d.n);
  n.real("noise", d.noise);
  n.string("csv", d.csv);
  n.string("images", d.images);
  n.string("labels", d.labels);
  n.boolean("normalize", d.normalize);
  n.real("train_fraction", d.train_fraction);
  n.u64("split_seed", d.split_seed);
  n.finish();
  if (d.source == "synthetic") {
    if (d.n < 2) throw ConfigError(n.field("n") + " must be at least 2");
    if (d.noise < 0) throw ConfigError(n.field("noise") + " must be nonnegative");
  } else if (d.source == "csv") {
    if (d.csv.empty()) throw ConfigError(n.field("csv") + " is required for a csv source");
  } else if (d.source == "idx") {
    if (d.images.empty() || d.labels.empty())
      throw ConfigError(n.field("images") + " and " + n.field("labels") + " are required for an idx source");
  } else {
    throw ConfigError(n.field("source") + " must be synthetic, csv or idx (got '" + d.source + "')");
  }
  if (!(d.train_fraction > 0 && d.train_fraction < 1)) throw ConfigError(n.field("train_fraction") + " must be in (0, 1)");
}

void read_train(Node& n, TrainSpec& s) {
  std::string method = to_string(s.method);
  n.string("method", method);
  s.method = as_config_error(n.field("method"), [&] { return train_method_from_string(method); });
  std::string loss = to_string(s.loss.kind);
  n.string("loss", loss);
  s.loss.kind = as_config_error(n.field("loss"), [&] { return loss_kind_from_string(loss); });
  if (s.loss.kind != LossKind::cross_entropy && s.loss.kind != LossKind::trades)
    throw ConfigError(n.field("loss") + " must be cross_entropy or trades");
  n.real("beta", s.loss.beta);
  n.size("epochs", s.epochs);
  n.size("batch_size", s.batch_size);
  n.sizes("hidden", s.hidden);
  n.real("lr", s.classifier.lr);
  n.real("momentum", s.classifier.momentum);
  n.real("weight_decay", s.classifier.weight_decay);
  n.sizes("lr_milestones", s.lr_milestones);
  n.real("lr_decay", s.lr_decay);
  n.real("lambda", s.inner.lambda);
  n.size("inner_steps", s.inner.steps);
  n.size("samples", s.inner.samples);
  n.real("inner_lr", s.inner.lr);
  n.boolean("antithetic", s.inner.antithetic);
  n.size("pgd_steps", s.pgd_steps);
  n.real("pgd_step_size", s.pgd_step_size);
  n.sizes("generator_hidden", s.generator_hidden);
  n.size("z_dim", s.z_dim);
  n.real("generator_lr", s.generator.lr);
  n.real("generator_beta1", s.generator.beta1);
  n.real("generator_beta2", s.generator.beta2);
  n.real("posterior_lr", s.posterior.lr);
  n.finish();
  for (auto h : s.hidden)
    if (h == 0) throw ConfigError(n.field("hidden") + " entries must be positive");
  for (auto h : s.generator_hidden)
    if (h == 0) throw ConfigError(n.field("generator_hidden") + " entries must be positive");
  s.posterior.beta1 = s.generator.beta1;
  s.posterior.beta2 = s.generator.beta2;
}

AttackSpec base_for_kind(AttackKind k) {
  switch (k) {
    case AttackKind::fgsm: return AttackSpec::fgsm();
    case AttackKind::iterative: return AttackSpec::pgd(20);
    case AttackKind::spsa: return AttackSpec::spsa_default();
    case AttackKind::feature: return AttackSpec::feature_default();
    case AttackKind::dist_exp: return AttackSpec::dist_exp_default();
    case AttackKind::dist_amortized: return AttackSpec::dist_amortized_default();
  }
  return {};
}

AttackSpec read_attack(const json& j, const std::string& path) {
  if (j.is_string()) {
    return as_config_error(path, [&] { return attack_from_name(j.get<std::string>()); });
  }
  Node n(j, path);
  std::string name, kind;
  n.string("name", name);
  n.string("kind", kind);
  AttackSpec s;
  if (!kind.empty()) {
    s = base_for_kind(as_config_error(n.field("kind"), [&] { return attack_kind_from_string(kind); }));
    if (!name.empty()) s.name = name;
  } else if (!name.empty()) {
    s = as_config_error(n.field("name"), [&] { return attack_from_name(name); });
  } else {
    throw ConfigError(path + " needs a name or a kind");
  }
  if (auto v = n.find("epsilon")) {
    if (v->is_null()) {
      s.epsilon.reset();
    } else {
      if (!v->is_number()) throw ConfigError(n.field("epsilon") + " must be a number or null");
      s.epsilon = v->get<Real>();
      if (!(*s.epsilon > 0)) throw ConfigError(n.field("epsilon") + " must be positive");
    }
  }
  n.real("step_size", s.step_size);
  n.size("steps", s.steps);
  n.real("momentum_decay", s.momentum_decay);
  std::string loss = to_string(s.loss.kind);
  n.string("loss", loss);
  s.loss.kind = as_config_error(n.field("loss"), [&] { return loss_kind_from_string(loss); });
  n.real("beta", s.loss.beta);
  n.boolean("random_start", s.random_start);
  n.size("restarts", s.restarts);
  if (auto c = n.child("spsa")) {
    c->size("batch", s.spsa.batch);
    c->real("perturb_size", s.spsa.perturb_size);
    c->real("lr", s.spsa.lr);
    c->size("iters", s.spsa.iters);
    c->finish();
  }
  if (auto c = n.child("feature")) {
    c->size("num_targets", s.feature.num_targets);
    c->size("steps", s.feature.steps);
    c->real("step_size", s.feature.step_size);
    c->finish();
  }
  if (auto c = n.child("dist")) {
    c->real("lambda", s.dist.lambda);
    c->size("steps", s.dist.steps);
    c->size("samples", s.dist.samples);
    c->real("lr", s.dist.lr);
    c->boolean("antithetic", s.dist.antithetic);
    c->finish();
  }
  n.finish();
  as_config_error(path, [&] {
    s.validate();
    return 0;
  });
  return s;
}

void read_eval(Node& n, EvalConfig& e) {
  n.boolean("natural", e.natural);
  n.size("max_examples", e.max_examples);
  n.boolean("hessian", e.hessian);
  n.size("hessian_points", e.hessian_points);
  n.size("hessian_iters", e.hessian_iters);
  n.real("hessian_tol", e.hessian_tol);
  n.boolean("landscape", e.landscape);
  n.size("landscape_points", e.landscape_points);
  n.size("resolution", e.resolution);
  n.boolean("pca", e.pca);
  n.size("pca_samples", e.pca_samples);
  n.finish();
  if (e.resolution < 3) throw ConfigError(n.field("resolution") + " must be at least 3");
  if (e.hessian_iters < 1) throw ConfigError(n.field("hessian_iters") + " must be at least 1");
  if (!(e.hessian_tol > 0)) throw ConfigError(n.field("hessian_tol") + " must be positive");
  if (e.pca_samples < 3) throw ConfigError(n.field("pca_samples") + " must be at least 3");
}

json threat_json(const ThreatModel& tm) {
  json j;
  j["epsilon"] = tm.epsilon;
  if (tm.pixel_box)
    j["box"] = {tm.pixel_box->first, tm.pixel_box->second};
  else
    j["box"] = nullptr;
  return j;
}

json attack_json(const AttackSpec& s) {
  json j;
  j["name"] = s.name;
  j["kind"] = to_string(s.kind);
  j["epsilon"] = s.epsilon ? json(*s.epsilon) : json(nullptr);
  j["step_size"] = s.step_size;
  j["steps"] = s.steps;
  j["momentum_decay"] = s.momentum_decay;
  j["loss"] = to_string(s.loss.kind);
  j["beta"] = s.loss.beta;
  j["random_start"] = s.random_start;
  j["restarts"] = s.restarts;
  j["spsa"] = {{"batch", s.spsa.batch}, {"perturb_size", s.spsa.perturb_size}, {"lr", s.spsa.lr}, {"iters", s.spsa.iters}};
  j["feature"] = {{"num_targets", s.feature.num_targets}, {"steps", s.feature.steps}, {"step_size", s.feature.step_size}};
  j["dist"] = {{"lambda", s.dist.lambda},
               {"steps", s.dist.steps},
               {"samples", s.dist.samples},
               {"lr", s.dist.lr},
               {"antithetic", s.dist.antithetic}};
  return j;
}

std::string line_col(const std::string& text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return "line " + std::to_string(line) + ", column " + std::to_string(col);
}

}  // namespace

AttackSpec attack_from_name(const std::string& name) {
  auto steps_of = [&](std::size_t prefix) {
    const auto rest = name.substr(prefix);
    if (rest.empty() || rest.find_first_not_of("0123456789") != std::string::npos || rest.size() > 6)
      throw InvalidArgument("bad step count in attack name '" + name + "'");
    const auto n = std::stoul(rest);
    if (n == 0) throw InvalidArgument("attack '" + name + "' needs at least one step");
    return n;
  };
  if (name == "fgsm") return AttackSpec::fgsm();
  if (name.rfind("pgd-", 0) == 0) return AttackSpec::pgd(steps_of(4));
  if (name.rfind("mim-", 0) == 0) return AttackSpec::mim(steps_of(4));
  if (name.rfind("cw-", 0) == 0) return AttackSpec::cw(steps_of(3));
  if (name == "spsa") return AttackSpec::spsa_default();
  if (name == "feature") return AttackSpec::feature_default();
  if (name == "dist_exp") return AttackSpec::dist_exp_default();
  if (name == "dist_amortized") return AttackSpec::dist_amortized_default();
  throw InvalidArgument("unknown attack '" + name +
                        "' (fgsm, pgd-N, mim-N, cw-N, spsa, feature, dist_exp, dist_amortized)");
}

ExperimentConfig parse_config(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    std::string what = e.what();
    // Drop the library prefix up to the last ": ", keep the description.
    const auto p = what.rfind(": ");
    throw ConfigError("config parse error at " + line_col(text, e.byte) + ": " +
                      (p == std::string::npos ? what : what.substr(p + 2)));
  }
  ExperimentConfig cfg;
  Node top(root, "");
  top.u64("seed", cfg.seed);
  top.string("output_dir", cfg.output_dir);
  top.string("model_name", cfg.model_name);
  if (cfg.output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (cfg.model_name.find_first_of(",\n\"") != std::string::npos)
    throw ConfigError("model_name must not contain commas, quotes or newlines");
  if (auto d = top.child("dataset"))
    read_dataset(*d, cfg.dataset);
  else
    throw ConfigError("missing section 'dataset'");
  if (auto t = top.child("threat_model")) read_threat(*t, cfg.train.threat);
  if (auto t = top.child("train")) read_train(*t, cfg.train);
  cfg.train.seed = cfg.seed;
  if (auto a = top.find("attacks")) {
    if (!a->is_array()) throw ConfigError("attacks must be an array");
    cfg.attacks.clear();
    for (std::size_t i = 0; i < a->size(); ++i) cfg.attacks.push_back(read_attack((*a)[i], "attacks." + std::to_string(i)));
    std::set<std::string> names;
    for (const auto& s : cfg.attacks) {
      if (s.name.find_first_of(",\n\"") != std::string::npos)
        throw ConfigError("attack name '" + s.name + "' must not contain commas, quotes or newlines");
      if (!names.insert(s.name).second) throw ConfigError("attacks: duplicate attack name '" + s.name + "'");
    }
  }
  if (auto e = top.child("eval")) read_eval(*e, cfg.eval);
  top.finish();
  if (cfg.attacks.empty() && !cfg.eval.natural) throw ConfigError("attacks: the evaluation suite is empty");
  try {
    cfg.train.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  auto cfg = parse_config(ss.str());
  // Data paths are relative to the config file and must exist.
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p, const std::string& field) {
    if (p.empty()) return;
    std::filesystem::path q(p);
    if (q.is_relative()) q = base / q;
    if (!std::filesystem::exists(q)) throw ConfigError(field + ": file not found: " + q.string());
    p = q.lexically_normal().string();
  };
  if (cfg.dataset.source == "csv") resolve(cfg.dataset.csv, "dataset.csv");
  if (cfg.dataset.source == "idx") {
    resolve(cfg.dataset.images, "dataset.images");
    resolve(cfg.dataset.labels, "dataset.labels");
  }
  return cfg;
}

std::string serialize_config(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["model_name"] = cfg.model_name;
  const auto& d = cfg.dataset;
  j["dataset"] = {{"source", d.source},   {"kind", to_string(d.kind)},
                  {"n", d.n},             {"noise", d.noise},
                  {"csv", d.csv},         {"images", d.images},
                  {"labels", d.labels},   {"normalize", d.normalize},
                  {"train_fraction", d.train_fraction}, {"split_seed", d.split_seed}};
  j["threat_model"] = threat_json(cfg.train.threat);
  const auto& t = cfg.train;
  json tr;
  tr["method"] = to_string(t.method);
  tr["loss"] = to_string(t.loss.kind);
  tr["beta"] = t.loss.beta;
  tr["epochs"] = t.epochs;
  tr["batch_size"] = t.batch_size;
  tr["hidden"] = t.hidden;
  tr["lr"] = t.classifier.lr;
  tr["momentum"] = t.classifier.momentum;
  tr["weight_decay"] = t.classifier.weight_decay;
  tr["lr_milestones"] = t.lr_milestones;
  tr["lr_decay"] = t.lr_decay;
  tr["lambda"] = t.inner.lambda;
  tr["inner_steps"] = t.inner.steps;
  tr["samples"] = t.inner.samples;
  tr["inner_lr"] = t.inner.lr;
  tr["antithetic"] = t.inner.antithetic;
  tr["pgd_steps"] = t.pgd_steps;
  tr["pgd_step_size"] = t.pgd_step_size;
  tr["generator_hidden"] = t.generator_hidden;
  tr["z_dim"] = t.z_dim;
  tr["generator_lr"] = t.generator.lr;
  tr["generator_beta1"] = t.generator.beta1;
  tr["generator_beta2"] = t.generator.beta2;
  tr["posterior_lr"] = t.posterior.lr;
  j["train"] = tr;
  auto atk = json::array();
  for (const auto& a : cfg.attacks) atk.push_back(attack_json(a));
  j["attacks"] = atk;
  const auto& e = cfg.eval;
  j["eval"] = {{"natural", e.natural},
               {"max_examples", e.max_examples},
               {"hessian", e.hessian},
               {"hessian_points", e.hessian_points},
               {"hessian_iters", e.hessian_iters},
               {"hessian_tol", e.hessian_tol},
               {"landscape", e.landscape},
               {"landscape_points", e.landscape_points},
               {"resolution", e.resolution},
               {"pca", e.pca},
               {"pca_samples", e.pca_samples}};
  return j.dump(2) + "\n";
}

std::string apply_override(const std::string& text, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const auto key = assignment.substr(0, eq);
  const auto raw = assignment.substr(eq + 1);
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config parse error at " + line_col(text, e.byte));
  }
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  json* node = &root;
  std::stringstream ss(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const auto& p = parts[i];
    if (p.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    const bool last = i + 1 == parts.size();
    if (node->is_array()) {
      if (p.find_first_not_of("0123456789") != std::string::npos)
        throw ConfigError("override key '" + key + "': '" + p + "' is not an array index");
      const auto idx = std::stoul(p);
      if (idx >= node->size()) throw ConfigError("override key '" + key + "': index " + p + " out of range");
      // String shorthand attacks become objects so fields can be set.
      if (!last && (*node)[idx].is_string()) (*node)[idx] = json{{"name", (*node)[idx].get<std::string>()}};
      node = &(*node)[idx];
    } else {
      if (node->is_null()) *node = json::object();
      if (!node->is_object()) throw ConfigError("override key '" + key + "': '" + p + "' is not a section");
      node = &(*node)[p];
    }
    if (last) *node = value;
  }
  return root.dump(2);
}

}  // namespace adt
