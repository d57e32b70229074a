#pragma once

#include <string>
#include <vector>

#include "nps/geom.hpp"
#include "nps/tape.hpp"

namespace nps {

struct LossWeights {
  double surface = 1.0;
  double normal = 0.1;
  double smooth = 0.5;
  double fair = 0.1;
  double uniform = 0.05;
  double aspect = 0.01;
  double reg = 1e-4;
  double beta_point_to_plane = 0.1;
};

struct LossReport {
  double anchor = 0.0, surface = 0.0, normal = 0.0, smooth = 0.0, fair = 0.0, uniform = 0.0,
         aspect = 0.0, reg = 0.0;
  double total = 0.0;
  int iteration = 0;
};

// All terms are recorded on the tape and return scalar vars.

// sum_k ||x_k - p_k|| (unsquared).
ad::Var anchor_loss(ad::Tape& tape, ad::Var corner_positions, const Mat& targets);

// sum ||x - p|| + beta |n^T (x - p)| over paired rows.
ad::Var surface_loss(ad::Tape& tape, ad::Var surface_positions, const Mat& paired_targets,
                     const Mat& paired_normals, double beta);

// sum (1 - n_target . n_surface); normals must be unit rows.
ad::Var normal_loss(ad::Tape& tape, ad::Var surface_normals, const Mat& target_normals);

// sum ||n_i - n_j|| over collocated smooth boundary samples.
ad::Var smooth_loss(ad::Tape& tape, ad::Var normals_a, ad::Var normals_b);

// Curve Laplacian of an open polyline (rows ordered along the curve).
ad::Var fair_loss(ad::Tape& tape, ad::Var polyline_positions);

// First-fundamental-form spread: sum |E - mean E| + |G - mean G| per face.
ad::Var uniform_loss(ad::Tape& tape, ad::Var ju, ad::Var jv);

// sqrt(1 - cos) between L2-normalized feature-edge-length and target
// boundary-length vectors of one face. `edge_from`/`edge_to` index rows of
// the feature matrix var.
ad::Var aspect_loss(ad::Tape& tape, ad::Var features, const std::vector<int>& edge_from,
                    const std::vector<int>& edge_to, const std::vector<double>& target_lengths);

// sum ||c_m||_2 over the batch codes.
ad::Var code_regularizer(ad::Tape& tape, const std::vector<ad::Var>& codes);

// Weighted total per the reconstruction objective (anchor unweighted).
// Throws on NaN naming the offending term.
ad::Var total_loss(ad::Tape& tape, const LossWeights& w, ad::Var anchor, ad::Var surface,
                   ad::Var normal, ad::Var smooth, ad::Var fair, ad::Var uniform,
                   ad::Var aspect, LossReport* report);

std::string loss_report_json(const LossReport& r, double lr);

}  // namespace nps
