#include "nps/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace nps {

namespace {

using json = nlohmann::json;
using RowMajorMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

json weights_json(const LossWeights& w) {
  return {{"surface", w.surface}, {"normal", w.normal},   {"smooth", w.smooth},
          {"fair", w.fair},       {"uniform", w.uniform}, {"aspect", w.aspect},
          {"reg", w.reg},         {"beta_point_to_plane", w.beta_point_to_plane}};
}

LossWeights weights_from_json(const json& j) {
  LossWeights w;
  w.surface = j.at("surface");
  w.normal = j.at("normal");
  w.smooth = j.at("smooth");
  w.fair = j.at("fair");
  w.uniform = j.at("uniform");
  w.aspect = j.at("aspect");
  w.reg = j.at("reg");
  w.beta_point_to_plane = j.at("beta_point_to_plane");
  return w;
}

json fit_config_json(const FitConfig& c) {
  return {{"iterations", c.iterations},
          {"batch_points", c.batch_points},
          {"warmup_iters", c.warmup_iters},
          {"fair_decay_start", c.fair_decay_start},
          {"fair_decay_iters", c.fair_decay_iters},
          {"fair_decay_floor", c.fair_decay_floor},
          {"lr_init", c.lr_init},
          {"lr_final", c.lr_final},
          {"seed", c.seed},
          {"weights", weights_json(c.weights)},
          {"feature_dim", c.feature_dim},
          {"layers", c.layers},
          {"hidden", c.hidden},
          {"m_per_edge", c.m_per_edge},
          {"fair_samples_per_arc", c.fair_samples_per_arc},
          {"boundary_eps", c.boundary_eps},
          {"determinism", c.determinism},
          {"threads", c.threads}};
}

FitConfig fit_config_from_json(const json& j) {
  FitConfig c;
  c.iterations = j.at("iterations");
  c.batch_points = j.at("batch_points");
  c.warmup_iters = j.at("warmup_iters");
  c.fair_decay_start = j.at("fair_decay_start");
  c.fair_decay_iters = j.at("fair_decay_iters");
  c.fair_decay_floor = j.at("fair_decay_floor");
  c.lr_init = j.at("lr_init");
  c.lr_final = j.at("lr_final");
  c.seed = j.at("seed");
  c.weights = weights_from_json(j.at("weights"));
  c.feature_dim = j.at("feature_dim");
  c.layers = j.at("layers");
  c.hidden = j.at("hidden");
  c.m_per_edge = j.at("m_per_edge");
  c.fair_samples_per_arc = j.at("fair_samples_per_arc");
  c.boundary_eps = j.at("boundary_eps");
  c.determinism = j.at("determinism");
  c.threads = j.at("threads");
  return c;
}

json layout_json(const PatchLayout& layout) {
  json j;
  j["corners"] = json::array();
  for (const auto& c : layout.corners)
    j["corners"].push_back(
        {{"id", c.id}, {"position", {c.position.x(), c.position.y(), c.position.z()}}});
  j["faces"] = json::array();
  for (const auto& f : layout.faces) j["faces"].push_back({{"id", f.id}, {"corners", f.corners}});
  j["arcs"] = json::array();
  for (const auto& a : layout.arcs) {
    json arc = {{"from", a.a}, {"to", a.b}};
    if (!a.polyline.empty()) {
      json pl = json::array();
      for (const auto& p : a.polyline) pl.push_back({p.x(), p.y(), p.z()});
      arc["polyline"] = pl;
    }
    if (a.smooth_override) arc["smooth"] = *a.smooth_override;
    j["arcs"].push_back(arc);
  }
  return j;
}

PatchLayout layout_from_json(const json& j) {
  PatchLayout layout;
  for (const auto& c : j.at("corners")) {
    Corner corner;
    corner.id = c.at("id");
    corner.position = Vec3(c.at("position").at(0), c.at("position").at(1), c.at("position").at(2));
    layout.corners.push_back(corner);
  }
  for (const auto& f : j.at("faces")) {
    Face face;
    face.id = f.at("id");
    for (const auto& c : f.at("corners")) face.corners.push_back(c.get<int>());
    layout.faces.push_back(face);
  }
  if (j.contains("arcs")) {
    for (const auto& a : j.at("arcs")) {
      Arc arc;
      arc.a = a.at("from");
      arc.b = a.at("to");
      if (a.contains("polyline"))
        for (const auto& p : a.at("polyline"))
          arc.polyline.emplace_back(p.at(0), p.at(1), p.at(2));
      if (a.contains("smooth")) arc.smooth_override = a.at("smooth").get<bool>();
      layout.arcs.push_back(std::move(arc));
    }
  }
  layout.rebuild_derived();
  return layout;
}

json report_json(const LossReport& r) {
  return {{"iteration", r.iteration}, {"anchor", r.anchor}, {"surface", r.surface},
          {"normal", r.normal},       {"smooth", r.smooth}, {"fair", r.fair},
          {"uniform", r.uniform},     {"aspect", r.aspect}, {"reg", r.reg},
          {"total", r.total}};
}

LossReport report_from_json(const json& j) {
  LossReport r;
  r.iteration = j.at("iteration");
  r.anchor = j.at("anchor");
  r.surface = j.at("surface");
  r.normal = j.at("normal");
  r.smooth = j.at("smooth");
  r.fair = j.at("fair");
  r.uniform = j.at("uniform");
  r.aspect = j.at("aspect");
  r.reg = j.at("reg");
  r.total = j.at("total");
  return r;
}

struct ArrayRef {
  std::string name;
  const Mat* mat = nullptr;
  Mat owned;
};

}  // namespace

void FitConfig::validate() const {
  if (!(warmup_iters < fair_decay_start && fair_decay_start < iterations) && iterations > 0)
    throw std::runtime_error("config requires warmup_iters < fair_decay_start < iterations");
  if (lr_final > lr_init) throw std::runtime_error("config requires lr_final <= lr_init");
}

double Checkpoint::sign_for_face(int face_id) const {
  return face_sign[layout.face_index.at(face_id)];
}

void save_checkpoint(const Checkpoint& c, const std::string& path) {
  json header;
  header["format"] = "nps-checkpoint";
  header["version"] = c.version;
  header["mode"] = c.mode;
  header["config"] = fit_config_json(c.config);
  if (c.space_config) {
    const auto& s = *c.space_config;
    header["space_config"] = {{"epochs", s.epochs},
                              {"batch_shapes", s.batch_shapes},
                              {"points_per_shape", s.points_per_shape},
                              {"lr", s.lr},
                              {"lr_late", s.lr_late},
                              {"late_epochs", s.late_epochs},
                              {"latent_dim", s.latent_dim},
                              {"decoder_hidden", s.decoder_hidden},
                              {"code_lr_mult", s.code_lr_mult}};
  }
  header["layout"] = layout_json(c.layout);
  header["arc_smooth"] = c.arc_smooth;
  header["face_sign"] = c.face_sign;
  header["seed"] = c.seed;
  header["final_loss"] = report_json(c.final_loss);

  // Self-describing array manifest, declaration order = binary order.
  std::vector<std::pair<std::string, const Mat*>> arrays;
  std::vector<Mat> bias_mats;
  auto add_mlp = [&](const std::string& prefix, const MlpParams& p) {
    for (std::size_t l = 0; l < p.W.size(); ++l)
      arrays.emplace_back(prefix + ".W" + std::to_string(l), &p.W[l]);
    for (std::size_t l = 0; l < p.b.size(); ++l) {
      bias_mats.emplace_back(p.b[l]);
      arrays.emplace_back(prefix + ".b" + std::to_string(l), nullptr);
    }
  };
  add_mlp("mlp", c.mlp);
  if (c.decoder) add_mlp("decoder", *c.decoder);
  Mat codes_mat;
  if (c.codebook) {
    codes_mat.resize(static_cast<int>(c.codebook->codes.size()), c.codebook->dim());
    for (std::size_t m = 0; m < c.codebook->codes.size(); ++m)
      codes_mat.row(static_cast<int>(m)) = c.codebook->codes[m];
  }
  if (c.Z) arrays.emplace_back("Z", &*c.Z);
  if (c.codebook) arrays.emplace_back("codes", &codes_mat);

  // Bias rows were deferred (they live in a different container); resolve now.
  std::size_t bias_i = 0;
  for (auto& [name, mat] : arrays)
    if (mat == nullptr) mat = &bias_mats[bias_i++];

  header["arrays"] = json::array();
  for (const auto& [name, mat] : arrays)
    header["arrays"].push_back({{"name", name}, {"rows", mat->rows()}, {"cols", mat->cols()}});

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << header.dump() << "\n#BIN";
  for (const auto& [name, mat] : arrays) {
    RowMajorMat rm = *mat;
    out.write(reinterpret_cast<const char*>(rm.data()),
              static_cast<std::streamsize>(sizeof(double) * rm.size()));
  }
  if (!out) throw std::runtime_error("checkpoint write failure: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string header_text;
  if (!std::getline(in, header_text)) throw std::runtime_error("truncated checkpoint header");
  char sentinel[4];
  in.read(sentinel, 4);
  if (in.gcount() != 4 || std::string(sentinel, 4) != "#BIN")
    throw std::runtime_error("missing #BIN sentinel in checkpoint");

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint header parse failure: " + std::string(e.what()));
  }

  Checkpoint c;
  c.version = header.at("version");
  c.mode = header.at("mode");
  c.config = fit_config_from_json(header.at("config"));
  if (header.contains("space_config")) {
    SpaceConfig s;
    const auto& js = header.at("space_config");
    s.epochs = js.at("epochs");
    s.batch_shapes = js.at("batch_shapes");
    s.points_per_shape = js.at("points_per_shape");
    s.lr = js.at("lr");
    s.lr_late = js.at("lr_late");
    s.late_epochs = js.at("late_epochs");
    s.latent_dim = js.at("latent_dim");
    s.decoder_hidden = js.at("decoder_hidden");
    s.code_lr_mult = js.value("code_lr_mult", 1.0);
    s.base = c.config;
    c.space_config = s;
  }
  c.layout = layout_from_json(header.at("layout"));
  c.arc_smooth = header.at("arc_smooth").get<std::vector<bool>>();
  c.face_sign = header.at("face_sign").get<std::vector<double>>();
  c.seed = header.at("seed");
  c.final_loss = report_from_json(header.at("final_loss"));

  std::vector<std::tuple<std::string, int, int>> manifest;
  for (const auto& a : header.at("arrays"))
    manifest.emplace_back(a.at("name").get<std::string>(), a.at("rows").get<int>(),
                          a.at("cols").get<int>());

  std::vector<Mat> data;
  for (const auto& [name, rows, cols] : manifest) {
    RowMajorMat rm(rows, cols);
    in.read(reinterpret_cast<char*>(rm.data()),
            static_cast<std::streamsize>(sizeof(double) * rows * cols));
    if (in.gcount() != static_cast<std::streamsize>(sizeof(double) * rows * cols))
      throw std::runtime_error("truncated checkpoint array " + name);
    data.emplace_back(rm);
  }

  std::size_t i = 0;
  auto take_mlp = [&](const std::string& prefix) {
    MlpParams p;
    while (i < manifest.size() && std::get<0>(manifest[i]).rfind(prefix + ".W", 0) == 0)
      p.W.push_back(data[i++]);
    while (i < manifest.size() && std::get<0>(manifest[i]).rfind(prefix + ".b", 0) == 0)
      p.b.emplace_back(data[i++].row(0));
    return p;
  };
  c.mlp = take_mlp("mlp");
  if (i < manifest.size() && std::get<0>(manifest[i]).rfind("decoder.", 0) == 0)
    c.decoder = take_mlp("decoder");
  if (i < manifest.size() && std::get<0>(manifest[i]) == "Z") c.Z = data[i++];
  if (i < manifest.size() && std::get<0>(manifest[i]) == "codes") {
    LatentCodebook cb;
    const Mat& codes = data[i++];
    for (int m = 0; m < codes.rows(); ++m) cb.codes.emplace_back(codes.row(m));
    c.codebook = cb;
  }
  return c;
}

FeatureComplex complex_from(const Checkpoint& c) {
  if (!c.Z) throw std::runtime_error("checkpoint has no feature matrix (space mode?)");
  Rng dummy(0);
  FeatureComplex fc = make_complex(c.layout, static_cast<int>(c.Z->cols()), dummy);
  fc.Z = *c.Z;
  return fc;
}

FeatureComplex complex_from(const Checkpoint& c, const RowVec& code) {
  if (!c.decoder) throw std::runtime_error("checkpoint has no decoder (single-shape mode?)");
  Rng dummy(0);
  FeatureComplex fc = make_complex(c.layout, c.config.feature_dim, dummy);
  fc.Z = broadcast_decode(*c.decoder, code, static_cast<int>(c.layout.corners.size()));
  if (c.Z) fc.Z += *c.Z;  // decoder output is a residual on the shared base
  return fc;
}

}  // namespace nps
