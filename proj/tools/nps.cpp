// nps: fit, inspect, and export neural parametric surfaces.
//
// Exit codes: 0 success, 1 validation failure, 2 I/O or configuration error,
// 3 numerical failure (NaN abort; the last good checkpoint is still written).

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nps/checkpoint.hpp"
#include "nps/fit.hpp"
#include "nps/mesher.hpp"
#include "nps/metrics.hpp"

namespace {

using nps::Checkpoint;
using nps::FitConfig;
using nps::SpaceConfig;

struct CliError : std::runtime_error {
  int code;
  CliError(int code_, const std::string& what) : std::runtime_error(what), code(code_) {}
};

// Flat `key = value` config lines plus `--key value` overrides; every key must
// be consumed by the subcommand or the whole invocation is rejected.
class Options {
 public:
  void load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw CliError(2, "cannot read config file " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      if (eq == std::string::npos)
        throw CliError(2, path + ":" + std::to_string(lineno) + ": expected key = value");
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::optional<std::string> take(const std::string& key) {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    std::string v = it->second;
    values_.erase(it);
    return v;
  }
  std::string take_required(const std::string& key) {
    auto v = take(key);
    if (!v) throw CliError(2, "missing required option --" + key);
    return *v;
  }
  std::string take_or(const std::string& key, const std::string& fallback) {
    auto v = take(key);
    return v ? *v : fallback;
  }
  double take_double(const std::string& key, double fallback) {
    auto v = take(key);
    if (!v) return fallback;
    try {
      std::size_t pos = 0;
      const double d = std::stod(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument(*v);
      return d;
    } catch (const std::exception&) {
      throw CliError(2, "option " + key + ": expected a number, got '" + *v + "'");
    }
  }
  long take_int(const std::string& key, long fallback) {
    auto v = take(key);
    if (!v) return fallback;
    try {
      std::size_t pos = 0;
      const long n = std::stol(*v, &pos);
      if (pos != v->size()) throw std::invalid_argument(*v);
      return n;
    } catch (const std::exception&) {
      throw CliError(2, "option " + key + ": expected an integer, got '" + *v + "'");
    }
  }
  bool take_bool(const std::string& key, bool fallback) {
    auto v = take(key);
    if (!v) return fallback;
    if (*v == "1" || *v == "true" || *v == "on" || *v == "") return true;
    if (*v == "0" || *v == "false" || *v == "off") return false;
    throw CliError(2, "option " + key + ": expected a boolean, got '" + *v + "'");
  }
  std::vector<std::string> take_list(const std::string& key) {
    std::vector<std::string> out;
    auto it = lists_.find(key);
    if (it != lists_.end()) {
      out = it->second;
      lists_.erase(it);
    }
    if (auto v = take(key)) out.push_back(*v);
    return out;
  }
  void append(const std::string& key, const std::string& value) {
    lists_[key].push_back(value);
  }

  void finish() const {
    if (!values_.empty())
      throw CliError(2, "unknown option: " + values_.begin()->first);
    if (!lists_.empty())
      throw CliError(2, "unknown option: " + lists_.begin()->first);
  }

 private:
  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  }
  std::map<std::string, std::string> values_;
  std::map<std::string, std::vector<std::string>> lists_;
};

std::uint64_t seed_fallback() {
  if (const char* env = std::getenv("NPS_SEED")) return std::strtoull(env, nullptr, 10);
  return 0;
}

FitConfig parse_fit_config(Options& opt) {
  FitConfig c;
  c.iterations = static_cast<int>(opt.take_int("iterations", c.iterations));
  c.batch_points = static_cast<int>(opt.take_int("batch_points", c.batch_points));
  c.warmup_iters = static_cast<int>(opt.take_int("warmup_iters", c.warmup_iters));
  c.fair_decay_start = static_cast<int>(opt.take_int("fair_decay_start", c.fair_decay_start));
  c.fair_decay_iters = static_cast<int>(opt.take_int("fair_decay_iters", c.fair_decay_iters));
  c.fair_decay_floor = opt.take_double("fair_decay_floor", c.fair_decay_floor);
  c.lr_init = opt.take_double("lr_init", c.lr_init);
  c.lr_final = opt.take_double("lr_final", c.lr_final);
  c.seed = static_cast<std::uint64_t>(opt.take_int("seed", static_cast<long>(seed_fallback())));
  c.feature_dim = static_cast<int>(opt.take_int("feature_dim", c.feature_dim));
  c.layers = static_cast<int>(opt.take_int("layers", c.layers));
  c.hidden = static_cast<int>(opt.take_int("hidden", c.hidden));
  c.m_per_edge = static_cast<int>(opt.take_int("m_per_edge", c.m_per_edge));
  c.fair_samples_per_arc =
      static_cast<int>(opt.take_int("fair_samples_per_arc", c.fair_samples_per_arc));
  c.boundary_eps = opt.take_double("boundary_eps", c.boundary_eps);
  c.determinism = opt.take_bool("determinism", c.determinism);
  c.threads = static_cast<int>(opt.take_int("threads", c.threads));
  c.weights.surface = opt.take_double("lambda_surface", c.weights.surface);
  c.weights.normal = opt.take_double("lambda_normal", c.weights.normal);
  c.weights.smooth = opt.take_double("lambda_smooth", c.weights.smooth);
  c.weights.fair = opt.take_double("lambda_fair", c.weights.fair);
  c.weights.uniform = opt.take_double("lambda_uniform", c.weights.uniform);
  c.weights.aspect = opt.take_double("lambda_aspect", c.weights.aspect);
  c.weights.reg = opt.take_double("lambda_reg", c.weights.reg);
  c.weights.beta_point_to_plane =
      opt.take_double("beta_point_to_plane", c.weights.beta_point_to_plane);
  return c;
}

SpaceConfig parse_space_config(Options& opt) {
  SpaceConfig c;
  c.epochs = static_cast<int>(opt.take_int("epochs", c.epochs));
  c.batch_shapes = static_cast<int>(opt.take_int("batch_shapes", c.batch_shapes));
  c.points_per_shape = static_cast<int>(opt.take_int("points_per_shape", c.points_per_shape));
  c.lr = opt.take_double("lr", c.lr);
  c.lr_late = opt.take_double("lr_late", c.lr_late);
  c.late_epochs = static_cast<int>(opt.take_int("late_epochs", c.late_epochs));
  c.latent_dim = static_cast<int>(opt.take_int("latent_dim", c.latent_dim));
  c.decoder_hidden = static_cast<int>(opt.take_int("decoder_hidden", c.decoder_hidden));
  c.code_lr_mult = opt.take_double("code_lr_mult", c.code_lr_mult);
  c.base = parse_fit_config(opt);
  return c;
}

std::vector<nps::CloudPoint> load_cloud(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw CliError(2, "cannot read cloud file " + path);
  std::vector<nps::CloudPoint> cloud;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    nps::CloudPoint p;
    if (!(ls >> p.position.x() >> p.position.y() >> p.position.z() >> p.normal.x() >>
          p.normal.y() >> p.normal.z())) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      throw CliError(2, path + ":" + std::to_string(lineno) + ": expected x y z nx ny nz");
    }
    cloud.push_back(p);
  }
  return cloud;
}

void write_code(const nps::RowVec& code, const std::string& path) {
  nlohmann::json j;
  j["code"] = std::vector<double>(code.data(), code.data() + code.size());
  std::ofstream os(path);
  if (!os) throw CliError(2, "cannot write " + path);
  os << j.dump(2) << "\n";
}

std::ofstream open_log(const std::string& path) {
  std::ofstream log(path);
  if (!log) throw CliError(2, "cannot write log file " + path);
  return log;
}

int cmd_validate(Options& opt) {
  const std::string path = opt.take_required("layout");
  opt.finish();
  const nps::PatchLayout layout = nps::load_layout(path);
  const nps::ValidationReport report = nps::validate_layout(layout);
  for (const auto& v : report.violations) std::cout << "violation: " << v << "\n";
  if (report.ok()) std::cout << "layout ok\n";
  return report.ok() ? 0 : 1;
}

int cmd_fit(Options& opt) {
  const std::string layout_path = opt.take_required("layout");
  const std::string samples_path = opt.take_required("samples");
  const std::string out_path = opt.take_required("out");
  const std::string log_path = opt.take_or("log", out_path + ".log");
  const FitConfig config = parse_fit_config(opt);
  opt.finish();

  nps::PatchLayout layout = nps::load_layout(layout_path);
  const nps::ValidationReport report = nps::validate_layout(layout);
  if (!report.ok()) {
    for (const auto& v : report.violations) std::cerr << "violation: " << v << "\n";
    return 1;
  }
  const nps::LabeledSamples samples = nps::load_samples(samples_path, layout);
  std::ofstream log = open_log(log_path);
  try {
    const Checkpoint c = nps::fit_shape(config, layout, samples, &log);
    nps::save_checkpoint(c, out_path);
  } catch (const nps::NanAbortError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    nps::save_checkpoint(e.last_good, out_path);
    return 3;
  }
  return 0;
}

int cmd_train_space(Options& opt) {
  const std::string layout_path = opt.take_required("layout");
  const std::vector<std::string> sample_paths = opt.take_list("samples");
  const std::string out_path = opt.take_required("out");
  const std::string log_path = opt.take_or("log", out_path + ".log");
  const SpaceConfig config = parse_space_config(opt);
  opt.finish();
  if (sample_paths.empty()) throw CliError(2, "train-space needs at least one --samples file");

  const nps::PatchLayout base_layout = nps::load_layout(layout_path);
  const nps::ValidationReport report = nps::validate_layout(base_layout);
  if (!report.ok()) {
    for (const auto& v : report.violations) std::cerr << "violation: " << v << "\n";
    return 1;
  }
  std::vector<nps::LabeledSamples> shapes;
  std::optional<nps::PatchLayout> reference;
  for (const auto& path : sample_paths) {
    nps::PatchLayout copy = base_layout;  // per-shape normalization must not leak
    shapes.push_back(nps::load_samples(path, copy));
    if (!reference) reference = copy;
  }
  std::ofstream log = open_log(log_path);
  try {
    const Checkpoint c = nps::train_space(config, *reference, shapes, &log);
    nps::save_checkpoint(c, out_path);
  } catch (const nps::NanAbortError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    nps::save_checkpoint(e.last_good, out_path);
    return 3;
  }
  return 0;
}

int cmd_mesh(Options& opt) {
  const std::string ckpt_path = opt.take_required("checkpoint");
  const std::string out_path = opt.take_required("out");
  const int density = static_cast<int>(opt.take_int("density", 16));
  const int interior = static_cast<int>(opt.take_int("interior", -1));
  const bool groups = opt.take_bool("groups", false);
  const bool edge_flip = opt.take_bool("edge-flip", false);
  const int code_id = static_cast<int>(opt.take_int("code-id", 0));
  opt.finish();

  const Checkpoint c = nps::load_checkpoint(ckpt_path);
  nps::SurfaceMesh mesh;
  if (c.mode == "space") {
    if (!c.codebook || code_id < 0 || code_id >= static_cast<int>(c.codebook->codes.size()))
      throw CliError(2, "code-id out of range for this checkpoint");
    mesh = nps::mesh_surface(c, nps::complex_from(c, c.codebook->codes[code_id]), density,
                             interior, edge_flip);
  } else {
    mesh = nps::mesh_surface(c, density, interior, edge_flip);
  }
  nps::export_obj(mesh, out_path, groups);
  if (mesh.degenerate_triangles > 0)
    std::cerr << "warning: " << mesh.degenerate_triangles << " degenerate triangles\n";
  return 0;
}

int cmd_eval(Options& opt) {
  const std::string ckpt_path = opt.take_required("checkpoint");
  const std::string target_path = opt.take_required("target");
  const std::string out_path = opt.take_or("out", "");
  const int n_samples = static_cast<int>(opt.take_int("n-samples", 30000));
  const std::uint64_t seed =
      static_cast<std::uint64_t>(opt.take_int("seed", static_cast<long>(seed_fallback())));
  const int arc_samples = static_cast<int>(opt.take_int("arc-samples", 64));
  opt.finish();

  Checkpoint c = nps::load_checkpoint(ckpt_path);
  nps::PatchLayout layout = c.layout;
  const nps::LabeledSamples target = nps::load_samples(target_path, layout);
  nps::MetricsReport r = nps::evaluate(c, target, n_samples, seed);
  if (c.mode == "single") {
    const nps::MetricsReport cont = nps::continuity_report(c, arc_samples);
    r.max_positional_gap = cont.max_positional_gap;
    r.mean_smooth_normal_dev_degrees = cont.mean_smooth_normal_dev_degrees;
    r.max_smooth_normal_dev_degrees = cont.max_smooth_normal_dev_degrees;
    r.mean_sharp_normal_dev_degrees = cont.mean_sharp_normal_dev_degrees;
  }
  const std::string json = nps::metrics_json(r);
  if (out_path.empty()) {
    std::cout << json << "\n";
  } else {
    std::ofstream os(out_path);
    if (!os) throw CliError(2, "cannot write " + out_path);
    os << json << "\n";
  }
  return 0;
}

int cmd_interp(Options& opt) {
  const std::string ckpt_path = opt.take_required("checkpoint");
  const int a = static_cast<int>(opt.take_int("a", 0));
  const int b = static_cast<int>(opt.take_int("b", 1));
  const int steps = static_cast<int>(opt.take_int("steps", 5));
  const std::string out_dir = opt.take_required("out-dir");
  const int density = static_cast<int>(opt.take_int("density", 16));
  opt.finish();

  const Checkpoint c = nps::load_checkpoint(ckpt_path);
  const std::vector<nps::FeatureComplex> complexes = nps::interpolate_codes(c, a, b, steps);
  for (std::size_t k = 0; k < complexes.size(); ++k) {
    const nps::SurfaceMesh mesh = nps::mesh_surface(c, complexes[k], density);
    nps::export_obj(mesh, out_dir + "/step_" + std::to_string(k) + ".obj");
  }
  return 0;
}

int cmd_fit_cloud(Options& opt) {
  const std::string ckpt_path = opt.take_required("checkpoint");
  const std::string cloud_path = opt.take_required("cloud");
  const std::string out_path = opt.take_required("out");
  const int iterations = static_cast<int>(opt.take_int("iterations", 300));
  const std::string mesh_out = opt.take_or("mesh-out", "");
  const int density = static_cast<int>(opt.take_int("density", 16));
  const std::string log_path = opt.take_or("log", "");
  opt.finish();

  const Checkpoint c = nps::load_checkpoint(ckpt_path);
  const std::vector<nps::CloudPoint> cloud = load_cloud(cloud_path);
  std::ofstream log;
  if (!log_path.empty()) log = open_log(log_path);
  nps::RowVec code;
  try {
    code = nps::fit_cloud(c, cloud, iterations, log_path.empty() ? nullptr : &log);
  } catch (const std::runtime_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  write_code(code, out_path);
  if (!mesh_out.empty())
    nps::export_obj(nps::mesh_surface(c, nps::complex_from(c, code), density), mesh_out);
  return 0;
}

int cmd_edit(Options& opt) {
  const std::string ckpt_path = opt.take_required("checkpoint");
  const std::string constraints_path = opt.take_required("constraints");
  const std::string out_path = opt.take_required("out");
  const int iterations = static_cast<int>(opt.take_int("iterations", 200));
  const int init_id = static_cast<int>(opt.take_int("init-id", 0));
  const std::string mesh_out = opt.take_or("mesh-out", "");
  const int density = static_cast<int>(opt.take_int("density", 16));
  const std::string log_path = opt.take_or("log", "");
  opt.finish();

  const Checkpoint c = nps::load_checkpoint(ckpt_path);
  if (!c.codebook || init_id < 0 || init_id >= static_cast<int>(c.codebook->codes.size()))
    throw CliError(2, "init-id out of range for this checkpoint");

  std::ifstream is(constraints_path);
  if (!is) throw CliError(2, "cannot read constraints file " + constraints_path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw CliError(2, std::string("constraints parse error: ") + e.what());
  }
  std::vector<nps::HandleConstraint> constraints;
  for (const auto& entry : j) {
    nps::HandleConstraint h;
    for (const auto& f : entry.at("face_ids")) h.face_ids.push_back(f.get<int>());
    const auto& t = entry.at("target");
    h.target = nps::Vec3(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
    constraints.push_back(std::move(h));
  }

  std::ofstream log;
  if (!log_path.empty()) log = open_log(log_path);
  nps::RowVec code;
  try {
    code = nps::optimize_code_handles(c, constraints, c.codebook->codes[init_id], iterations,
                                      log_path.empty() ? nullptr : &log);
  } catch (const std::runtime_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  }
  write_code(code, out_path);
  if (!mesh_out.empty())
    nps::export_obj(nps::mesh_surface(c, nps::complex_from(c, code), density), mesh_out);
  return 0;
}

const char kUsage[] = R"(usage: nps <subcommand> [options]

Subcommands:
  validate     --layout FILE
  fit          --layout FILE --samples FILE --out CKPT [--log FILE] [--config FILE]
  train-space  --layout FILE --samples FILE... --out CKPT [--log FILE] [--config FILE]
  mesh         --checkpoint CKPT --out OBJ [--density N] [--interior N]
               [--groups BOOL] [--edge-flip BOOL] [--code-id K]
  eval         --checkpoint CKPT --target FILE [--out FILE] [--n-samples N]
               [--seed N] [--arc-samples N]
  interp       --checkpoint CKPT --a ID --b ID --steps N --out-dir DIR [--density N]
  fit-cloud    --checkpoint CKPT --cloud FILE --out FILE [--iterations N]
               [--mesh-out OBJ] [--density N] [--log FILE]
  edit         --checkpoint CKPT --constraints FILE --out FILE [--iterations N]
               [--init-id K] [--mesh-out OBJ] [--density N] [--log FILE]

Fit options (config file `key = value` lines, `#` comments; flags override):
  iterations batch_points warmup_iters fair_decay_start fair_decay_iters
  fair_decay_floor lr_init lr_final seed feature_dim layers hidden m_per_edge
  fair_samples_per_arc boundary_eps determinism threads
  lambda_surface lambda_normal lambda_smooth lambda_fair lambda_uniform
  lambda_aspect lambda_reg beta_point_to_plane

Shape-space options (train-space only):
  epochs batch_shapes points_per_shape lr lr_late late_epochs latent_dim
  decoder_hidden code_lr_mult

The environment variable NPS_SEED supplies the seed when no --seed or config
seed is given. Exit codes: 0 ok, 1 validation failure, 2 I/O or config error,
3 numerical failure.
)";

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty() || args[0] == "--help" || args[0] == "-h" || args[0] == "help") {
    std::cout << kUsage;
    return 0;
  }
  const std::string cmd = args[0];

  Options opt;
  std::string config_path;
  std::vector<std::pair<std::string, std::string>> flags;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--help" || args[i] == "-h") {
      std::cout << kUsage;
      return 0;
    }
    if (args[i].rfind("--", 0) != 0)
      throw CliError(2, "unexpected argument: " + args[i]);
    const std::string key = args[i].substr(2);
    if (i + 1 >= args.size()) throw CliError(2, "option --" + key + " needs a value");
    flags.emplace_back(key, args[++i]);
  }
  // File values first so flags override them.
  for (const auto& [key, value] : flags)
    if (key == "config") opt.load_file(value);
  for (const auto& [key, value] : flags) {
    if (key == "config") continue;
    if (key == "samples" && cmd == "train-space")
      opt.append(key, value);
    else
      opt.set(key, value);
  }

  if (cmd == "validate") return cmd_validate(opt);
  if (cmd == "fit") return cmd_fit(opt);
  if (cmd == "train-space") return cmd_train_space(opt);
  if (cmd == "mesh") return cmd_mesh(opt);
  if (cmd == "eval") return cmd_eval(opt);
  if (cmd == "interp") return cmd_interp(opt);
  if (cmd == "fit-cloud") return cmd_fit_cloud(opt);
  if (cmd == "edit") return cmd_edit(opt);
  throw CliError(2, "unknown subcommand: " + cmd);
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
