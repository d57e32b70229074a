#pragma once

#include <vector>

#include "nps/complex.hpp"
#include "nps/geom.hpp"
#include "nps/rng.hpp"
#include "nps/tape.hpp"

namespace nps {

// Fully connected MLP with softplus (beta = 100) between layers and a linear
// output. Weights are stored input-major (in x out) so batched evaluation is
// row-batch GEMM.
struct MlpParams {
  std::vector<Mat> W;
  std::vector<RowVec> b;
  double beta = 100.0;

  int layer_count() const { return static_cast<int>(W.size()); }
  int input_dim() const { return static_cast<int>(W.front().rows()); }
  int output_dim() const { return static_cast<int>(W.back().cols()); }

  // widths = {in, hidden..., out}; uniform fan-in init.
  static MlpParams create(const std::vector<int>& widths, Rng& rng);
  bool finite() const;
};

// The broadcast decoder h_phi is a 3-layer MlpParams mapping (C+1) -> D.
using DecoderParams = MlpParams;

struct LatentCodebook {
  std::vector<RowVec> codes;  // one per training shape, each 1 x C
  int dim() const { return codes.empty() ? 0 : static_cast<int>(codes.front().cols()); }
};

double softplus(double x, double beta);

// Plain (untaped) evaluation.
Mat mlp_forward(const MlpParams& p, const Mat& input);  // n x in -> n x out
Vec3 mlp_forward_point(const MlpParams& p, const Vec& z);

// Positional tokens P_k = k/K for k = 1..K (the decoder cannot tell vertices
// apart with a constant token).
Mat positional_tokens(int k_count);
Mat broadcast_decode(const DecoderParams& d, const RowVec& code, int k_count);

// --- taped evaluation ---

struct MlpVars {
  std::vector<ad::Var> W, b;
};

MlpVars register_mlp(ad::Tape& tape, const MlpParams& p, bool trainable = true);
void read_mlp_grads(const ad::Tape& tape, const MlpVars& vars, std::vector<Mat>& gw,
                    std::vector<Mat>& gb);

// Forward pass keeping pre-activations so tangent passes can reuse them.
struct MlpTrace {
  ad::Var out;
  std::vector<ad::Var> preacts;  // one per hidden layer
  std::vector<ad::Var> hidden;   // post-activation, same count
};

MlpTrace mlp_forward(ad::Tape& tape, const MlpVars& vars, ad::Var input, double beta);

// Forward-mode directional derivative through the same layers, recorded on
// the tape (so it stays differentiable w.r.t. the parameters).
ad::Var mlp_tangent(ad::Tape& tape, const MlpVars& vars, const MlpTrace& trace,
                    ad::Var input_tangent, double beta);

ad::Var broadcast_decode(ad::Tape& tape, const MlpVars& decoder, ad::Var code, int k_count,
                         double beta);

// --- Jacobians and normals (plain evaluation, used by mesher/metrics) ---

// Columns d(x)/du and d(x)/dv of f_theta o g at an interior parameter.
Eigen::Matrix<double, 3, 2> surface_jacobian(const FeatureComplex& complex, const MlpParams& p,
                                             int face_id, const Vec2& u);
// Unit normal Ju x Jv / |Ju x Jv|; throws when the cross product degenerates.
Vec3 surface_normal(const FeatureComplex& complex, const MlpParams& p, int face_id,
                    const Vec2& u);

// Batched positions + Jacobian columns for many parameters of one face.
void surface_batch(const FeatureComplex& complex, const MlpParams& p, int face_id,
                   const std::vector<Vec2>& us, Mat& positions, Mat& ju, Mat& jv);

}  // namespace nps
