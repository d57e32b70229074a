#include "nps/losses.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace nps {

ad::Var anchor_loss(ad::Tape& tape, ad::Var corner_positions, const Mat& targets) {
  return tape.sum_row_norms(tape.add_const(corner_positions, -targets));
}

ad::Var surface_loss(ad::Tape& tape, ad::Var surface_positions, const Mat& paired_targets,
                     const Mat& paired_normals, double beta) {
  ad::Var diff = tape.add_const(surface_positions, -paired_targets);
  ad::Var point = tape.sum_row_norms(diff);
  ad::Var plane = tape.sum_abs_rowdot(diff, paired_normals);
  return tape.sum_scalars({{1.0, point}, {beta, plane}});
}

ad::Var normal_loss(ad::Tape& tape, ad::Var surface_normals, const Mat& target_normals) {
  return tape.sum_one_minus_rowdot(surface_normals, target_normals);
}

ad::Var smooth_loss(ad::Tape& tape, ad::Var normals_a, ad::Var normals_b) {
  return tape.sum_row_norms(tape.sub(normals_a, normals_b));
}

ad::Var fair_loss(ad::Tape& tape, ad::Var polyline_positions) {
  const int n = static_cast<int>(tape.value(polyline_positions).rows());
  if (n < 3) throw std::runtime_error("fair_loss needs >= 3 ordered samples");
  // Laplacian rows x_j - (x_{j-1} + x_{j+1})/2 for interior j, as a constant
  // banded matrix applied to the polyline.
  Mat lap = Mat::Zero(n - 2, n);
  for (int j = 0; j < n - 2; ++j) {
    lap(j, j) = -0.5;
    lap(j, j + 1) = 1.0;
    lap(j, j + 2) = -0.5;
  }
  return tape.sum_row_norms(tape.matmul_const_left(lap, polyline_positions));
}

ad::Var uniform_loss(ad::Tape& tape, ad::Var ju, ad::Var jv) {
  ad::Var e = tape.row_sq_norms(ju);
  ad::Var g = tape.row_sq_norms(jv);
  return tape.sum_scalars(
      {{1.0, tape.mean_center_abs_sum(e)}, {1.0, tape.mean_center_abs_sum(g)}});
}

ad::Var aspect_loss(ad::Tape& tape, ad::Var features, const std::vector<int>& edge_from,
                    const std::vector<int>& edge_to, const std::vector<double>& target_lengths) {
  // L2-normalizing both length vectors makes the per-sum fraction
  // normalization cancel, so raw lengths go straight into normalize_frob.
  ad::Var za = tape.gather_rows(features, edge_from);
  ad::Var zb = tape.gather_rows(features, edge_to);
  ad::Var lengths = tape.row_norms(tape.sub(za, zb));
  ad::Var unit = tape.normalize_frob(lengths);
  Mat target(target_lengths.size(), 1);
  for (std::size_t j = 0; j < target_lengths.size(); ++j) target(j, 0) = target_lengths[j];
  const double tn = target.norm();
  if (tn < 1e-12) throw std::runtime_error("aspect_loss: zero target lengths");
  return tape.sqrt_one_minus(tape.dot_const(unit, target / tn));
}

ad::Var code_regularizer(ad::Tape& tape, const std::vector<ad::Var>& codes) {
  std::vector<std::pair<double, ad::Var>> terms;
  terms.reserve(codes.size());
  for (auto c : codes) terms.emplace_back(1.0, tape.frob_norm(c));
  if (terms.empty()) return tape.constant(Mat::Zero(1, 1));
  return tape.sum_scalars(terms);
}

ad::Var total_loss(ad::Tape& tape, const LossWeights& w, ad::Var anchor, ad::Var surface,
                   ad::Var normal, ad::Var smooth, ad::Var fair, ad::Var uniform,
                   ad::Var aspect, LossReport* report) {
  struct Term {
    const char* name;
    double weight;
    ad::Var var;
    double* slot;
  };
  LossReport local;
  Term terms[] = {
      {"anchor", 1.0, anchor, &local.anchor},
      {"surface", w.surface, surface, &local.surface},
      {"normal", w.normal, normal, &local.normal},
      {"smooth", w.smooth, smooth, &local.smooth},
      {"fair", w.fair, fair, &local.fair},
      {"uniform", w.uniform, uniform, &local.uniform},
      {"aspect", w.aspect, aspect, &local.aspect},
  };
  std::vector<std::pair<double, ad::Var>> weighted;
  for (const auto& t : terms) {
    if (!t.var.valid()) continue;
    const double v = tape.scalar(t.var);
    if (std::isnan(v)) throw std::runtime_error(std::string("NaN in loss term ") + t.name);
    *t.slot = v;
    weighted.emplace_back(t.weight, t.var);
  }
  ad::Var total = tape.sum_scalars(weighted);
  local.total = tape.scalar(total);
  if (report) {
    local.iteration = report->iteration;
    local.reg = report->reg;
    *report = local;
  }
  return total;
}

std::string loss_report_json(const LossReport& r, double lr) {
  std::ostringstream os;
  os.precision(12);
  os << "{\"iteration\":" << r.iteration << ",\"lr\":" << lr << ",\"anchor\":" << r.anchor
     << ",\"surface\":" << r.surface << ",\"normal\":" << r.normal << ",\"smooth\":" << r.smooth
     << ",\"fair\":" << r.fair << ",\"uniform\":" << r.uniform << ",\"aspect\":" << r.aspect
     << ",\"reg\":" << r.reg << ",\"total\":" << r.total << "}";
  return os.str();
}

}  // namespace nps
