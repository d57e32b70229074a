#pragma once

#include <iosfwd>
#include <vector>

#include "nps/checkpoint.hpp"
#include "nps/losses.hpp"
#include "nps/sampling.hpp"

namespace nps {

// Raised when an optimization step produces a NaN; carries the parameters
// from the last finite iteration so the driver can still write a checkpoint.
struct NanAbortError : std::runtime_error {
  NanAbortError(const std::string& what, Checkpoint last)
      : std::runtime_error(what), last_good(std::move(last)) {}
  Checkpoint last_good;
};

// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
class Adam {
 public:
  void init(const std::vector<const Mat*>& params);
  void step(const std::vector<Mat*>& params, const std::vector<Mat>& grads, double lr);

 private:
  std::vector<Mat> m_, v_;
  int t_ = 0;
};

// Cosine annealing from lr_init at i = 0 to lr_final at i = total.
double cosine_lr(double lr_init, double lr_final, int i, int total);

// Single-shape fitting: Adam jointly over (Z, theta). Warm-up iterations
// minimize anchor + uniform only; afterwards the full objective with the
// fairness weight decaying log-linearly from fair_decay_start.
Checkpoint fit_shape(const FitConfig& config, const PatchLayout& layout,
                     const LabeledSamples& samples, std::ostream* log = nullptr);

// Auto-decoding shape-space training over a collection sharing one layout
// topology. Per-shape corner anchors are taken as the labeled sample nearest
// to each reference corner among the corner's adjacent faces.
Checkpoint train_space(const SpaceConfig& config, const PatchLayout& layout,
                       const std::vector<LabeledSamples>& shapes, std::ostream* log = nullptr);

// Linear code interpolation decoded into feature complexes; steps >= 2
// includes both endpoints.
std::vector<FeatureComplex> interpolate_codes(const Checkpoint& c, int id_a, int id_b,
                                              int steps);

struct HandleConstraint {
  std::vector<int> face_ids;
  Vec3 target;
};

// Test-time optimization of the latent code only (networks frozen), Adam at
// a constant learning rate of 0.005.
RowVec optimize_code_handles(const Checkpoint& c,
                             const std::vector<HandleConstraint>& constraints, RowVec init,
                             int iterations = 200, std::ostream* log = nullptr);

struct CloudPoint {
  Vec3 position;
  Vec3 normal;
};

// Label-free point-cloud fitting: nearest-codebook initialization, then code
// optimization with global two-sided pairing filtered by normal cosine > 0.7.
RowVec fit_cloud(const Checkpoint& c, const std::vector<CloudPoint>& cloud,
                 int iterations = 300, std::ostream* log = nullptr);

}  // namespace nps
