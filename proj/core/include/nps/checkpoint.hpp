#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nps/complex.hpp"
#include "nps/layout.hpp"
#include "nps/losses.hpp"
#include "nps/network.hpp"

namespace nps {

struct FitConfig {
  int iterations = 2000;
  int batch_points = 10000;
  int warmup_iters = 100;
  int fair_decay_start = 300;
  int fair_decay_iters = 300;
  double fair_decay_floor = 0.01;
  double lr_init = 1e-3;
  double lr_final = 1e-5;
  std::uint64_t seed = 0;
  LossWeights weights;
  int feature_dim = 128;   // D
  int layers = 12;         // L
  int hidden = 256;        // N
  int m_per_edge = 32;
  int fair_samples_per_arc = 16;
  double boundary_eps = 1e-4;
  bool determinism = true;
  int threads = 1;

  void validate() const;
};

struct SpaceConfig {
  int epochs = 100;
  int batch_shapes = 24;
  int points_per_shape = 5000;
  double lr = 1e-3;
  double lr_late = 5e-4;
  // The learning rate follows a cosine decay from lr to lr_late over the
  // first epochs - late_epochs epochs and holds lr_late afterwards.
  int late_epochs = 20;
  int latent_dim = 64;   // C
  int decoder_hidden = 128;
  // Each code receives exactly one Adam update per epoch (its shape is drawn
  // once), far fewer than the networks get; codes therefore step with
  // code_lr_mult times the network learning rate.
  double code_lr_mult = 5.0;
  FitConfig base;        // shared net sizes, weights, seed, etc.
};

struct Checkpoint {
  int version = 1;
  std::string mode;  // "single" or "space"
  FitConfig config;
  std::optional<SpaceConfig> space_config;
  PatchLayout layout;          // normalized frame
  std::vector<bool> arc_smooth;
  std::vector<double> face_sign;  // per layout face, +-1 normal orientation
  MlpParams mlp;
  std::optional<Mat> Z;                    // single-shape mode
  std::optional<DecoderParams> decoder;    // space mode
  std::optional<LatentCodebook> codebook;  // space mode
  std::uint64_t seed = 0;
  LossReport final_loss;

  double sign_for_face(int face_id) const;
};

void save_checkpoint(const Checkpoint& c, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Feature complex of a single-shape checkpoint (Z) or of a decoded code.
FeatureComplex complex_from(const Checkpoint& c);
FeatureComplex complex_from(const Checkpoint& c, const RowVec& code);

}  // namespace nps
