#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"
#include "nps/checkpoint.hpp"
#include "nps/fit.hpp"
#include "testutil.hpp"

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/nps_test_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

nps::Checkpoint tiny_checkpoint() {
  nps::PatchLayout layout;
  nps::LabeledSamples samples = fixtures::sphere_fixture(layout, 300, 21);
  nps::FitConfig cfg;
  cfg.iterations = 0;
  cfg.feature_dim = 4;
  cfg.layers = 2;
  cfg.hidden = 8;
  cfg.m_per_edge = 4;
  cfg.fair_samples_per_arc = 4;
  cfg.batch_points = 120;
  cfg.seed = 3;
  return nps::fit_shape(cfg, layout, samples, nullptr);
}

}  // namespace

TEST_CASE("config validation") {
  nps::FitConfig c;
  CHECK_NOTHROW(c.validate());
  c.iterations = 0;
  CHECK_NOTHROW(c.validate());  // zero iterations skips the schedule check
  c.iterations = 200;           // below fair_decay_start = 300
  CHECK_THROWS(c.validate());
  c = nps::FitConfig{};
  c.warmup_iters = 400;
  CHECK_THROWS(c.validate());
  c = nps::FitConfig{};
  c.lr_final = 1.0;
  CHECK_THROWS(c.validate());
}

TEST_CASE("single-shape checkpoint round trip is byte exact") {
  const nps::Checkpoint c = tiny_checkpoint();
  TempFile a("ckpt_a.bin"), b("ckpt_b.bin");
  nps::save_checkpoint(c, a.path);
  const nps::Checkpoint back = nps::load_checkpoint(a.path);
  nps::save_checkpoint(back, b.path);
  const std::string bytes_a = slurp(a.path), bytes_b = slurp(b.path);
  CHECK(bytes_a.size() > 0);
  CHECK(bytes_a == bytes_b);

  CHECK(back.mode == "single");
  CHECK(back.config.feature_dim == 4);
  CHECK(back.layout.faces.size() == 6);
  CHECK(back.arc_smooth.size() == 12);
  CHECK(back.face_sign.size() == 6);
  REQUIRE(back.Z.has_value());
  CHECK((*back.Z - *c.Z).cwiseAbs().maxCoeff() == 0.0);
  REQUIRE(back.mlp.W.size() == c.mlp.W.size());
  for (std::size_t l = 0; l < c.mlp.W.size(); ++l) {
    CHECK((back.mlp.W[l] - c.mlp.W[l]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.mlp.b[l] - c.mlp.b[l]).cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(back.final_loss.total == c.final_loss.total);
}

TEST_CASE("space checkpoint keeps decoder and codebook") {
  nps::Checkpoint c = tiny_checkpoint();
  c.mode = "space";
  c.Z.reset();
  nps::SpaceConfig sc;
  sc.latent_dim = 3;
  sc.decoder_hidden = 8;
  sc.base = c.config;
  c.space_config = sc;
  nps::Rng rng(4);
  c.decoder = nps::MlpParams::create({4, 8, 8, c.config.feature_dim}, rng);
  nps::LatentCodebook cb;
  for (int m = 0; m < 5; ++m) {
    nps::RowVec code(3);
    code << rng.normal(), rng.normal(), rng.normal();
    cb.codes.push_back(code);
  }
  c.codebook = cb;

  TempFile f("ckpt_space.bin");
  nps::save_checkpoint(c, f.path);
  const nps::Checkpoint back = nps::load_checkpoint(f.path);
  CHECK(back.mode == "space");
  REQUIRE(back.space_config.has_value());
  CHECK(back.space_config->latent_dim == 3);
  REQUIRE(back.decoder.has_value());
  REQUIRE(back.codebook.has_value());
  CHECK(back.codebook->codes.size() == 5);
  for (int m = 0; m < 5; ++m)
    CHECK((back.codebook->codes[m] - cb.codes[m]).cwiseAbs().maxCoeff() == 0.0);
  for (std::size_t l = 0; l < c.decoder->W.size(); ++l)
    CHECK((back.decoder->W[l] - c.decoder->W[l]).cwiseAbs().maxCoeff() == 0.0);
  CHECK_FALSE(back.Z.has_value());

  // Decoded complexes match between original and reloaded checkpoints.
  const nps::FeatureComplex fa = nps::complex_from(c, cb.codes[2]);
  const nps::FeatureComplex fb = nps::complex_from(back, cb.codes[2]);
  CHECK((fa.Z - fb.Z).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("complex_from rejects the wrong mode") {
  const nps::Checkpoint c = tiny_checkpoint();
  CHECK_NOTHROW(nps::complex_from(c));
  nps::RowVec code(3);
  code.setZero();
  CHECK_THROWS(nps::complex_from(c, code));

  nps::Checkpoint space = c;
  space.Z.reset();
  CHECK_THROWS(nps::complex_from(space));
}

TEST_CASE("corrupt checkpoint files are rejected") {
  TempFile f("ckpt_corrupt.bin");
  {
    std::ofstream out(f.path, std::ios::binary);
    out << "{\"not\": \"a checkpoint\"}\nXXXX";
  }
  CHECK_THROWS(nps::load_checkpoint(f.path));
  CHECK_THROWS(nps::load_checkpoint("/tmp/nps_test_absent.bin"));

  // Truncated binary payload.
  const nps::Checkpoint c = tiny_checkpoint();
  TempFile full("ckpt_full.bin"), cut("ckpt_cut.bin");
  nps::save_checkpoint(c, full.path);
  const std::string bytes = slurp(full.path);
  {
    std::ofstream out(cut.path, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 64));
  }
  CHECK_THROWS(nps::load_checkpoint(cut.path));
}
