#include "nps/fit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "nps/kdtree.hpp"

namespace nps {

void Adam::init(const std::vector<const Mat*>& params) {
  m_.clear();
  v_.clear();
  for (const Mat* p : params) {
    m_.push_back(Mat::Zero(p->rows(), p->cols()));
    v_.push_back(Mat::Zero(p->rows(), p->cols()));
  }
  t_ = 0;
}

void Adam::step(const std::vector<Mat*>& params, const std::vector<Mat>& grads, double lr) {
  if (m_.empty()) {
    std::vector<const Mat*> view(params.begin(), params.end());
    init(view);
  }
  ++t_;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double c1 = 1.0 - std::pow(b1, t_);
  const double c2 = 1.0 - std::pow(b2, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
    v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i].cwiseProduct(grads[i]);
    params[i]->array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
  }
}

double cosine_lr(double lr_init, double lr_final, int i, int total) {
  if (total <= 0) return lr_init;
  const double t = static_cast<double>(i) / total;
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(M_PI * t));
}

namespace {

// Per-shape targets for one reconstruction objective.
struct ShapeBatch {
  const LabeledSamples* samples = nullptr;
  Mat anchors;  // K x 3, rows in layout corner order
  std::vector<double> areas;
  std::vector<Vec3> tgt_pts, tgt_nrm;
  std::vector<int> tgt_face;
};

ShapeBatch make_shape_batch(const PatchLayout& layout, const LabeledSamples& samples,
                            Mat anchors) {
  ShapeBatch b;
  b.samples = &samples;
  b.anchors = std::move(anchors);
  b.areas = samples.face_areas(layout);
  b.tgt_pts.reserve(samples.points.size());
  for (const Sample& s : samples.points) {
    b.tgt_pts.push_back(s.position);
    b.tgt_nrm.push_back(s.normal);
    b.tgt_face.push_back(s.patch_id);
  }
  return b;
}

Mat corner_anchors(const PatchLayout& layout) {
  Mat a(layout.corners.size(), 3);
  for (std::size_t i = 0; i < layout.corners.size(); ++i)
    a.row(static_cast<int>(i)) = layout.corners[i].position.transpose();
  return a;
}

// Shape space has one shared reference layout but per-shape geometry, so the
// corner anchor of each shape is its labeled sample nearest to the reference
// corner among the corner's adjacent faces.
Mat sample_anchors(const PatchLayout& layout, const LabeledSamples& samples) {
  Mat a(layout.corners.size(), 3);
  for (std::size_t k = 0; k < layout.corners.size(); ++k) {
    const Corner& c = layout.corners[k];
    double best = std::numeric_limits<double>::max();
    const Sample* pick = nullptr;
    for (const Face& f : layout.faces) {
      if (std::find(f.corners.begin(), f.corners.end(), c.id) == f.corners.end()) continue;
      const auto it = samples.buckets.find(f.id);
      if (it == samples.buckets.end()) continue;
      for (int idx : it->second) {
        const double d = (samples.points[idx].position - c.position).squaredNorm();
        if (d < best) {
          best = d;
          pick = &samples.points[idx];
        }
      }
    }
    if (!pick) throw std::runtime_error("no samples adjacent to corner " + std::to_string(c.id));
    a.row(static_cast<int>(k)) = pick->position.transpose();
  }
  return a;
}

void mvc_matrices(const PolygonDomain& d, const std::vector<Vec2>& us, Mat& lam, Mat& dlu,
                  Mat& dlv) {
  const int n = static_cast<int>(us.size());
  lam.resize(n, d.size());
  dlu.resize(n, d.size());
  dlv.resize(n, d.size());
  for (int i = 0; i < n; ++i) {
    Vec l;
    Mat dl;
    mvc_weights_and_grad(d, us[i], l, dl);
    lam.row(i) = l.transpose();
    dlu.row(i) = dl.col(0).transpose();
    dlv.row(i) = dl.col(1).transpose();
  }
}

// Constants shared by every iteration of a fit: face vertex rows, aspect
// targets, boundary collocation weights, fairness polyline combinations, and
// the per-face normal orientation chosen once the surface is anchored.
struct FitContext {
  const PatchLayout* layout = nullptr;
  const FeatureComplex* fc = nullptr;
  std::vector<bool> smooth;
  std::vector<double> face_sign;
  bool sign_locked = false;

  struct FaceConst {
    int face_id;
    std::vector<int> rows;  // global Z rows of the face corners
    std::vector<int> efrom, eto;
    std::vector<double> tlen;
  };
  std::vector<FaceConst> faces;

  struct Colloc {
    int fa_idx, fb_idx;  // indices into `faces`
    Mat lam_a, dlu_a, dlv_a;
    Mat lam_b, dlu_b, dlv_b;
  };
  std::vector<Colloc> collocs;  // smooth interior arcs only

  struct FairArc {
    Mat comb;               // (S+2) x 2 over {z_a, z_b}
    std::vector<int> rows;  // {row of a, row of b}
  };
  std::vector<FairArc> fairs;
};

FitContext make_context(const PatchLayout& layout, const FeatureComplex& fc,
                        std::vector<bool> smooth, const FitConfig& config) {
  FitContext ctx;
  ctx.layout = &layout;
  ctx.fc = &fc;
  ctx.smooth = std::move(smooth);
  ctx.face_sign.assign(layout.faces.size(), 1.0);

  for (const Face& f : layout.faces) {
    FitContext::FaceConst fcst;
    fcst.face_id = f.id;
    fcst.rows = fc.face_rows(f.id);
    const int n = static_cast<int>(fcst.rows.size());
    for (int j = 0; j < n; ++j) {
      fcst.efrom.push_back(fcst.rows[j]);
      fcst.eto.push_back(fcst.rows[(j + 1) % n]);
    }
    fcst.tlen = layout.face_boundary_lengths(f);
    ctx.faces.push_back(std::move(fcst));
  }

  const BoundaryPairs bp =
      boundary_pairs(layout, fc, ctx.smooth, config.m_per_edge, config.boundary_eps);
  for (const auto& arc : bp.arcs) {
    if (!arc.smooth) continue;
    FitContext::Colloc cl;
    cl.fa_idx = layout.face_index.at(arc.face_a);
    cl.fb_idx = layout.face_index.at(arc.face_b);
    mvc_matrices(fc.domain(arc.face_a), arc.inset_a, cl.lam_a, cl.dlu_a, cl.dlv_a);
    mvc_matrices(fc.domain(arc.face_b), arc.inset_b, cl.lam_b, cl.dlu_b, cl.dlv_b);
    ctx.collocs.push_back(std::move(cl));
  }

  const int s = std::max(1, config.fair_samples_per_arc);
  for (const Arc& arc : layout.arcs) {
    if (arc.faces.empty()) continue;
    FitContext::FairArc fa;
    fa.comb.resize(s + 2, 2);
    for (int i = 0; i < s + 2; ++i) {
      const double t = static_cast<double>(i) / (s + 1);
      fa.comb(i, 0) = 1.0 - t;
      fa.comb(i, 1) = t;
    }
    fa.rows = {fc.vertex_row.at(arc.a), fc.vertex_row.at(arc.b)};
    ctx.fairs.push_back(std::move(fa));
  }
  return ctx;
}

struct FaceEval {
  ad::Var pos, ju, jv, normals;  // normals valid outside warm-up only
  Mat pos_value, normal_value;
  int offset = 0;  // row offset in the concatenated surface set
};

// Records the reconstruction objective of one shape on the tape and returns
// the (unregularized) total. `Zvar` is either a parameter leaf (single shape)
// or a decoded feature matrix (shape space).
ad::Var build_shape_loss(ad::Tape& tape, FitContext& ctx, ad::Var Zvar, const MlpVars& mlp,
                         double beta, const ShapeBatch& shape, const LossWeights& weights,
                         bool warmup, int batch_points, Rng& rng, LossReport* report) {
  const auto& fc = *ctx.fc;
  const std::vector<int> counts = allocate_per_face(shape.areas, batch_points);

  MlpTrace anchor_trace = mlp_forward(tape, mlp, Zvar, beta);
  ad::Var anchor = anchor_loss(tape, anchor_trace.out, shape.anchors);

  std::vector<FaceEval> evals(ctx.faces.size());
  std::vector<std::pair<double, ad::Var>> uniform_terms;
  std::vector<Vec3> surface_pts;
  std::vector<int> surface_face;
  for (std::size_t fi = 0; fi < ctx.faces.size(); ++fi) {
    const auto& fcst = ctx.faces[fi];
    const auto& dom = fc.domain(fcst.face_id);
    const std::vector<Vec2> us = sample_domain(dom, counts[fi], rng);
    Mat lam, dlu, dlv;
    mvc_matrices(dom, us, lam, dlu, dlv);

    ad::Var gathered = tape.gather_rows(Zvar, fcst.rows);
    MlpTrace trace = mlp_forward(tape, mlp, tape.matmul_const_left(lam, gathered), beta);
    ad::Var ju = mlp_tangent(tape, mlp, trace, tape.matmul_const_left(dlu, gathered), beta);
    ad::Var jv = mlp_tangent(tape, mlp, trace, tape.matmul_const_left(dlv, gathered), beta);

    FaceEval& ev = evals[fi];
    ev.pos = trace.out;
    ev.ju = ju;
    ev.jv = jv;
    ev.pos_value = tape.value(trace.out);
    ev.offset = static_cast<int>(surface_pts.size());
    for (int i = 0; i < ev.pos_value.rows(); ++i) {
      surface_pts.emplace_back(ev.pos_value.row(i).transpose());
      surface_face.push_back(fcst.face_id);
    }
    uniform_terms.emplace_back(1.0, uniform_loss(tape, ju, jv));
  }
  ad::Var uniform = tape.sum_scalars(uniform_terms);

  if (warmup) {
    return total_loss(tape, weights, anchor, {}, {}, {}, {}, uniform, {}, report);
  }

  for (std::size_t fi = 0; fi < ctx.faces.size(); ++fi) {
    FaceEval& ev = evals[fi];
    ad::Var raw = tape.normalize_rows(tape.cross_rows(ev.ju, ev.jv));
    if (!ctx.sign_locked) {
      // First full-objective iteration: the anchored surface decides whether
      // the parameterization normal points with or against the data normals.
      const Mat nv = tape.value(raw);
      Vec3 mean_pred = nv.colwise().mean().transpose();
      Vec3 mean_tgt = Vec3::Zero();
      const auto it = shape.samples->buckets.find(ctx.faces[fi].face_id);
      if (it != shape.samples->buckets.end())
        for (int idx : it->second) mean_tgt += shape.samples->points[idx].normal;
      ctx.face_sign[fi] = mean_pred.dot(mean_tgt) >= 0.0 ? 1.0 : -1.0;
    }
    ev.normals = tape.scale(raw, ctx.face_sign[fi]);
    ev.normal_value = tape.value(ev.normals);
  }
  ctx.sign_locked = true;

  const PairedSamples paired =
      pair_closest(surface_pts, surface_face, shape.tgt_pts, shape.tgt_face);
  std::vector<std::vector<int>> local_idx(ctx.faces.size());
  std::vector<std::vector<int>> tgt_idx(ctx.faces.size());
  for (const auto& p : paired.pairs) {
    const int fi = ctx.layout->face_index.at(p.face_id);
    local_idx[fi].push_back(p.surface_index - evals[fi].offset);
    tgt_idx[fi].push_back(p.target_index);
  }
  std::vector<std::pair<double, ad::Var>> surface_terms, normal_terms;
  for (std::size_t fi = 0; fi < ctx.faces.size(); ++fi) {
    if (local_idx[fi].empty()) continue;
    const int np = static_cast<int>(local_idx[fi].size());
    Mat targets(np, 3), normals(np, 3);
    for (int i = 0; i < np; ++i) {
      targets.row(i) = shape.tgt_pts[tgt_idx[fi][i]].transpose();
      normals.row(i) = shape.tgt_nrm[tgt_idx[fi][i]].transpose();
    }
    ad::Var px = tape.gather_rows(evals[fi].pos, local_idx[fi]);
    surface_terms.emplace_back(
        1.0, surface_loss(tape, px, targets, normals, weights.beta_point_to_plane));
    ad::Var nx = tape.gather_rows(evals[fi].normals, local_idx[fi]);
    normal_terms.emplace_back(1.0, normal_loss(tape, nx, normals));
  }
  ad::Var surface = tape.sum_scalars(surface_terms);
  ad::Var normal = tape.sum_scalars(normal_terms);

  std::vector<std::pair<double, ad::Var>> smooth_terms;
  for (const auto& cl : ctx.collocs) {
    ad::Var side[2];
    for (int s = 0; s < 2; ++s) {
      const int fi = s == 0 ? cl.fa_idx : cl.fb_idx;
      const Mat& lam = s == 0 ? cl.lam_a : cl.lam_b;
      const Mat& dlu = s == 0 ? cl.dlu_a : cl.dlu_b;
      const Mat& dlv = s == 0 ? cl.dlv_a : cl.dlv_b;
      ad::Var gathered = tape.gather_rows(Zvar, ctx.faces[fi].rows);
      MlpTrace trace = mlp_forward(tape, mlp, tape.matmul_const_left(lam, gathered), beta);
      ad::Var ju = mlp_tangent(tape, mlp, trace, tape.matmul_const_left(dlu, gathered), beta);
      ad::Var jv = mlp_tangent(tape, mlp, trace, tape.matmul_const_left(dlv, gathered), beta);
      side[s] = tape.scale(tape.normalize_rows(tape.cross_rows(ju, jv)), ctx.face_sign[fi]);
    }
    smooth_terms.emplace_back(1.0, smooth_loss(tape, side[0], side[1]));
  }
  ad::Var smooth = tape.sum_scalars(smooth_terms);

  std::vector<std::pair<double, ad::Var>> fair_terms;
  for (const auto& fa : ctx.fairs) {
    ad::Var ends = tape.gather_rows(Zvar, fa.rows);
    MlpTrace trace = mlp_forward(tape, mlp, tape.matmul_const_left(fa.comb, ends), beta);
    fair_terms.emplace_back(1.0, fair_loss(tape, trace.out));
  }
  ad::Var fair = tape.sum_scalars(fair_terms);

  std::vector<std::pair<double, ad::Var>> aspect_terms;
  for (const auto& fcst : ctx.faces)
    aspect_terms.emplace_back(1.0, aspect_loss(tape, Zvar, fcst.efrom, fcst.eto, fcst.tlen));
  ad::Var aspect = tape.sum_scalars(aspect_terms);

  return total_loss(tape, weights, anchor, surface, normal, smooth, fair, uniform, aspect,
                    report);
}

LossWeights effective_weights(const FitConfig& c, int iteration) {
  LossWeights w = c.weights;
  if (iteration >= c.fair_decay_start && c.fair_decay_iters > 0) {
    const double progress =
        std::min(1.0, static_cast<double>(iteration - c.fair_decay_start) / c.fair_decay_iters);
    w.fair *= std::pow(c.fair_decay_floor, progress);
  }
  return w;
}

}  // namespace

Checkpoint fit_shape(const FitConfig& config, const PatchLayout& layout,
                     const LabeledSamples& samples, std::ostream* log) {
  config.validate();
  const ValidationReport vr = validate_layout(layout);
  if (!vr.ok()) throw std::runtime_error("invalid layout: " + vr.violations.front());
  if (samples.points.empty()) throw std::runtime_error("fit_shape: no samples");

  Rng rng(config.seed);
  FeatureComplex fc = make_complex(layout, config.feature_dim, rng);
  std::vector<int> widths{config.feature_dim};
  for (int l = 0; l + 1 < config.layers; ++l) widths.push_back(config.hidden);
  widths.push_back(3);
  MlpParams mlp = MlpParams::create(widths, rng);

  FitContext ctx = make_context(layout, fc, classify_arcs(layout, samples), config);
  const ShapeBatch shape = make_shape_batch(layout, samples, corner_anchors(layout));

  auto assemble = [&](const LossReport& report) {
    Checkpoint c;
    c.mode = "single";
    c.config = config;
    c.layout = layout;
    c.arc_smooth = ctx.smooth;
    c.face_sign = ctx.face_sign;
    c.mlp = mlp;
    c.Z = fc.Z;
    c.seed = config.seed;
    c.final_loss = report;
    return c;
  };

  Adam adam;
  LossReport report;
  Checkpoint last_good = assemble(report);
  for (int i = 0; i < config.iterations; ++i) {
    const double lr = cosine_lr(config.lr_init, config.lr_final, i, config.iterations);
    const bool warmup = i < config.warmup_iters;
    const LossWeights weights = effective_weights(config, i);

    ad::Tape tape;
    ad::Var zv = tape.param(fc.Z);
    MlpVars mv = register_mlp(tape, mlp);
    report = LossReport{};
    report.iteration = i;
    ad::Var total;
    try {
      total = build_shape_loss(tape, ctx, zv, mv, mlp.beta, shape, weights, warmup,
                               config.batch_points, rng, &report);
    } catch (const std::runtime_error& e) {
      throw NanAbortError(e.what(), last_good);
    }
    last_good = assemble(report);
    tape.backward(total);

    std::vector<Mat*> params{&fc.Z};
    std::vector<Mat> grads{tape.grad(zv)};
    std::vector<Mat> bias(mlp.b.size());
    for (std::size_t l = 0; l < mlp.W.size(); ++l) {
      params.push_back(&mlp.W[l]);
      grads.push_back(tape.grad(mv.W[l]));
    }
    for (std::size_t l = 0; l < mlp.b.size(); ++l) {
      bias[l] = mlp.b[l];
      params.push_back(&bias[l]);
      grads.push_back(tape.grad(mv.b[l]));
    }
    adam.step(params, grads, lr);
    for (std::size_t l = 0; l < mlp.b.size(); ++l) mlp.b[l] = bias[l];
    if (!mlp.finite() || !fc.Z.allFinite())
      throw NanAbortError("non-finite parameters after step " + std::to_string(i), last_good);
    if (log) *log << loss_report_json(report, lr) << "\n";
  }

  if (config.iterations == 0) {
    // Evaluate the objective once so the checkpoint still reports its losses.
    ad::Tape tape;
    ad::Var zv = tape.param(fc.Z);
    MlpVars mv = register_mlp(tape, mlp);
    report = LossReport{};
    build_shape_loss(tape, ctx, zv, mv, mlp.beta, shape, config.weights, false,
                     config.batch_points, rng, &report);
  }
  return assemble(report);
}

Checkpoint train_space(const SpaceConfig& config, const PatchLayout& layout,
                       const std::vector<LabeledSamples>& shapes, std::ostream* log) {
  if (shapes.empty()) throw std::runtime_error("train_space: empty dataset");
  if (config.batch_shapes > static_cast<int>(shapes.size()))
    throw std::runtime_error("train_space: batch_shapes exceeds dataset size");
  const ValidationReport vr = validate_layout(layout);
  if (!vr.ok()) throw std::runtime_error("invalid layout: " + vr.violations.front());
  const FitConfig& base = config.base;

  Rng rng(base.seed);
  FeatureComplex fc = make_complex(layout, base.feature_dim, rng);
  std::vector<int> widths{base.feature_dim};
  for (int l = 0; l + 1 < base.layers; ++l) widths.push_back(base.hidden);
  widths.push_back(3);
  MlpParams mlp = MlpParams::create(widths, rng);
  DecoderParams decoder = MlpParams::create(
      {config.latent_dim + 1, config.decoder_hidden, config.decoder_hidden, base.feature_dim},
      rng);
  LatentCodebook codebook;
  for (std::size_t m = 0; m < shapes.size(); ++m) {
    RowVec c(config.latent_dim);
    for (int j = 0; j < config.latent_dim; ++j) c(j) = 0.01 * rng.normal();
    codebook.codes.push_back(std::move(c));
  }

  // Shared base features: the decoder emits per-shape residuals on top of a
  // directly trained K x D matrix, so the common geometry converges at the
  // same rate as a single-shape fit instead of through the decoder stack.
  Mat base_features = fc.Z;

  FitContext ctx = make_context(layout, fc, classify_arcs(layout, shapes.front()), base);
  std::vector<ShapeBatch> batches;
  for (const auto& s : shapes) {
    if (s.points.empty()) throw std::runtime_error("train_space: shape without samples");
    batches.push_back(make_shape_batch(layout, s, sample_anchors(layout, s)));
  }

  auto assemble = [&](const LossReport& report) {
    Checkpoint c;
    c.mode = "space";
    c.config = base;
    c.space_config = config;
    c.layout = layout;
    c.arc_smooth = ctx.smooth;
    c.face_sign = ctx.face_sign;
    c.mlp = mlp;
    c.Z = base_features;
    c.decoder = decoder;
    c.codebook = codebook;
    c.seed = base.seed;
    c.final_loss = report;
    return c;
  };

  Adam net_adam;
  std::vector<Adam> code_adam(shapes.size());
  const int k_count = static_cast<int>(layout.corners.size());
  LossReport report;
  Checkpoint last_good = assemble(report);

  std::vector<int> order(shapes.size());
  std::iota(order.begin(), order.end(), 0);
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Cosine decay reaches lr_late at the start of the late phase and holds it.
    const int decay_span = std::max(1, config.epochs - config.late_epochs);
    const double lr = epoch >= decay_span ? config.lr_late
                                          : cosine_lr(config.lr, config.lr_late, epoch, decay_span);
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_int(i + 1)]);

    for (std::size_t start = 0; start < order.size(); start += config.batch_shapes, ++step) {
      const std::size_t stop = std::min(order.size(), start + config.batch_shapes);
      const int bsz = static_cast<int>(stop - start);
      const bool warmup = step < base.warmup_iters;
      const LossWeights weights = effective_weights(base, step);

      ad::Tape tape;
      MlpVars mv = register_mlp(tape, mlp);
      MlpVars dv = register_mlp(tape, decoder);
      ad::Var bv = tape.param(base_features);
      std::vector<ad::Var> code_vars;
      std::vector<std::pair<double, ad::Var>> terms;
      report = LossReport{};
      report.iteration = step;
      try {
        for (std::size_t bi = start; bi < stop; ++bi) {
          const int m = order[bi];
          ad::Var cv = tape.param(codebook.codes[m]);
          code_vars.push_back(cv);
          ad::Var zv = tape.add(bv, broadcast_decode(tape, dv, cv, k_count, decoder.beta));
          LossReport shape_report;
          shape_report.iteration = step;
          ad::Var recon = build_shape_loss(tape, ctx, zv, mv, mlp.beta, batches[m], weights,
                                           warmup, config.points_per_shape, rng, &shape_report);
          terms.emplace_back(1.0 / bsz, recon);
          report.anchor += shape_report.anchor / bsz;
          report.surface += shape_report.surface / bsz;
          report.normal += shape_report.normal / bsz;
          report.smooth += shape_report.smooth / bsz;
          report.fair += shape_report.fair / bsz;
          report.uniform += shape_report.uniform / bsz;
          report.aspect += shape_report.aspect / bsz;
        }
        ad::Var reg = code_regularizer(tape, code_vars);
        report.reg = tape.scalar(reg);
        if (std::isnan(report.reg)) throw std::runtime_error("NaN in loss term reg");
        terms.emplace_back(weights.reg, reg);
      } catch (const std::runtime_error& e) {
        throw NanAbortError(e.what(), last_good);
      }
      ad::Var total = tape.sum_scalars(terms);
      report.total = tape.scalar(total);
      last_good = assemble(report);
      tape.backward(total);

      std::vector<Mat*> params;
      std::vector<Mat> grads;
      std::vector<Mat> bias(mlp.b.size() + decoder.b.size());
      for (std::size_t l = 0; l < mlp.W.size(); ++l) {
        params.push_back(&mlp.W[l]);
        grads.push_back(tape.grad(mv.W[l]));
      }
      for (std::size_t l = 0; l < mlp.b.size(); ++l) {
        bias[l] = mlp.b[l];
        params.push_back(&bias[l]);
        grads.push_back(tape.grad(mv.b[l]));
      }
      for (std::size_t l = 0; l < decoder.W.size(); ++l) {
        params.push_back(&decoder.W[l]);
        grads.push_back(tape.grad(dv.W[l]));
      }
      for (std::size_t l = 0; l < decoder.b.size(); ++l) {
        bias[mlp.b.size() + l] = decoder.b[l];
        params.push_back(&bias[mlp.b.size() + l]);
        grads.push_back(tape.grad(dv.b[l]));
      }
      params.push_back(&base_features);
      grads.push_back(tape.grad(bv));
      net_adam.step(params, grads, lr);
      for (std::size_t l = 0; l < mlp.b.size(); ++l) mlp.b[l] = bias[l];
      for (std::size_t l = 0; l < decoder.b.size(); ++l) decoder.b[l] = bias[mlp.b.size() + l];
      for (std::size_t bi = start; bi < stop; ++bi) {
        const int m = order[bi];
        Mat code = codebook.codes[m];
        code_adam[m].step({&code}, {tape.grad(code_vars[bi - start])},
                          lr * config.code_lr_mult);
        codebook.codes[m] = code;
      }
      if (!mlp.finite() || !decoder.finite() || !base_features.allFinite())
        throw NanAbortError("non-finite parameters after step " + std::to_string(step),
                            last_good);
      if (log) *log << loss_report_json(report, lr) << "\n";
    }
  }
  return assemble(report);
}

std::vector<FeatureComplex> interpolate_codes(const Checkpoint& c, int id_a, int id_b,
                                              int steps) {
  if (!c.codebook) throw std::runtime_error("interpolate_codes requires a shape-space checkpoint");
  const int m = static_cast<int>(c.codebook->codes.size());
  if (id_a < 0 || id_a >= m || id_b < 0 || id_b >= m)
    throw std::runtime_error("interpolate_codes: unknown code id");
  if (steps < 2) throw std::runtime_error("interpolate_codes: steps must be >= 2");
  const RowVec& ca = c.codebook->codes[id_a];
  const RowVec& cb = c.codebook->codes[id_b];
  std::vector<FeatureComplex> out;
  for (int s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) / (steps - 1);
    out.push_back(complex_from(c, (1.0 - t) * ca + t * cb));
  }
  return out;
}

namespace {

void write_step_log(std::ostream* log, int i, double lr, double objective) {
  if (!log) return;
  std::ostringstream os;
  os.precision(12);
  os << "{\"iteration\":" << i << ",\"lr\":" << lr << ",\"total\":" << objective << "}";
  *log << os.str() << "\n";
}

}  // namespace

RowVec optimize_code_handles(const Checkpoint& c,
                             const std::vector<HandleConstraint>& constraints, RowVec init,
                             int iterations, std::ostream* log) {
  if (!c.decoder) throw std::runtime_error("handle editing requires a shape-space checkpoint");
  Rng rng(c.seed + 1);
  FeatureComplex fc = make_complex(c.layout, c.config.feature_dim, rng);
  const int k_count = static_cast<int>(c.layout.corners.size());
  const double lr = 0.005;

  // Fixed parameter samples per constrained face so the center of gravity is
  // a deterministic function of the code.
  struct FaceSet {
    std::vector<int> rows;
    Mat lam;
  };
  std::vector<std::vector<FaceSet>> sets(constraints.size());
  constexpr int kCogSamples = 256;
  for (std::size_t ci = 0; ci < constraints.size(); ++ci) {
    if (constraints[ci].face_ids.empty())
      throw std::runtime_error("handle constraint without faces");
    for (int face_id : constraints[ci].face_ids) {
      if (!fc.domain_index.count(face_id))
        throw std::runtime_error("handle constraint names unknown face " +
                                 std::to_string(face_id));
      FaceSet fs;
      fs.rows = fc.face_rows(face_id);
      const auto& dom = fc.domain(face_id);
      const std::vector<Vec2> us = sample_domain(dom, kCogSamples, rng);
      Mat dlu, dlv;
      mvc_matrices(dom, us, fs.lam, dlu, dlv);
      sets[ci].push_back(std::move(fs));
    }
  }

  Mat code = init;
  Adam adam;
  for (int i = 0; i < iterations; ++i) {
    ad::Tape tape;
    ad::Var cv = tape.param(code);
    MlpVars mv = register_mlp(tape, c.mlp, false);
    MlpVars dv = register_mlp(tape, *c.decoder, false);
    ad::Var zv = broadcast_decode(tape, dv, cv, k_count, c.decoder->beta);
    if (c.Z) zv = tape.add_const(zv, *c.Z);

    std::vector<std::pair<double, ad::Var>> terms;
    for (std::size_t ci = 0; ci < constraints.size(); ++ci) {
      ad::Var cog;
      for (const FaceSet& fs : sets[ci]) {
        ad::Var gathered = tape.gather_rows(zv, fs.rows);
        MlpTrace trace =
            mlp_forward(tape, mv, tape.matmul_const_left(fs.lam, gathered), c.mlp.beta);
        ad::Var mean = tape.mean_rows(trace.out);
        cog = cog.valid() ? tape.add(cog, mean) : mean;
      }
      cog = tape.scale(cog, 1.0 / sets[ci].size());
      ad::Var diff = tape.add_const(cog, -constraints[ci].target.transpose());
      terms.emplace_back(1.0, tape.frob_norm(diff));
    }
    terms.emplace_back(1e-3, tape.frob_norm(cv));
    ad::Var total = tape.sum_scalars(terms);
    const double value = tape.scalar(total);
    if (std::isnan(value))
      throw std::runtime_error("NaN objective in handle optimization at step " +
                               std::to_string(i));
    tape.backward(total);
    adam.step({&code}, {tape.grad(cv)}, lr);
    write_step_log(log, i, lr, value);
  }
  return code.row(0);
}

RowVec fit_cloud(const Checkpoint& c, const std::vector<CloudPoint>& cloud, int iterations,
                 std::ostream* log) {
  if (!c.decoder || !c.codebook)
    throw std::runtime_error("fit_cloud requires a shape-space checkpoint");
  if (cloud.empty()) throw std::runtime_error("fit_cloud: empty cloud");
  Rng rng(c.seed + 2);
  FeatureComplex fc = make_complex(c.layout, c.config.feature_dim, rng);
  const int k_count = static_cast<int>(c.layout.corners.size());
  const int faces = static_cast<int>(c.layout.faces.size());
  const int per_face = std::max(1, 2048 / faces);
  const double lr = 0.005;

  std::vector<Vec3> cloud_pts;
  Mat cloud_nrm(cloud.size(), 3);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    cloud_pts.push_back(cloud[i].position);
    const double n = cloud[i].normal.norm();
    cloud_nrm.row(static_cast<int>(i)) =
        (n > 1e-12 ? cloud[i].normal / n : cloud[i].normal).transpose();
  }

  // Nearest-codebook initialization: one-sided chamfer from a 2048-point
  // cloud subsample to each decoded shape, shared surface parameters.
  std::vector<std::vector<int>> init_rows(faces);
  std::vector<Mat> init_lam(faces);
  for (int fi = 0; fi < faces; ++fi) {
    const int face_id = c.layout.faces[fi].id;
    init_rows[fi] = fc.face_rows(face_id);
    const auto& dom = fc.domain(face_id);
    Mat dlu, dlv;
    mvc_matrices(dom, sample_domain(dom, per_face, rng), init_lam[fi], dlu, dlv);
  }
  std::vector<int> sub;
  const int want = std::min<int>(2048, static_cast<int>(cloud_pts.size()));
  for (int j = 0; j < want; ++j)
    sub.push_back(static_cast<int>(j * cloud_pts.size() / want));
  int best_code = 0;
  double best_chamfer = std::numeric_limits<double>::max();
  for (std::size_t m = 0; m < c.codebook->codes.size(); ++m) {
    Mat z = broadcast_decode(*c.decoder, c.codebook->codes[m], k_count);
    if (c.Z) z += *c.Z;
    std::vector<Vec3> surf;
    for (int fi = 0; fi < faces; ++fi) {
      Mat zf(init_rows[fi].size(), z.cols());
      for (std::size_t j = 0; j < init_rows[fi].size(); ++j) zf.row(j) = z.row(init_rows[fi][j]);
      const Mat pos = mlp_forward(c.mlp, init_lam[fi] * zf);
      for (int i = 0; i < pos.rows(); ++i) surf.emplace_back(pos.row(i).transpose());
    }
    KdTree3 tree(surf);
    double chamfer = 0.0;
    for (int idx : sub) chamfer += (cloud_pts[idx] - surf[tree.nearest(cloud_pts[idx])]).norm();
    chamfer /= sub.size();
    if (chamfer < best_chamfer) {
      best_chamfer = chamfer;
      best_code = static_cast<int>(m);
    }
  }

  Mat code = c.codebook->codes[best_code];
  Adam adam;
  for (int i = 0; i < iterations; ++i) {
    ad::Tape tape;
    ad::Var cv = tape.param(code);
    MlpVars mv = register_mlp(tape, c.mlp, false);
    MlpVars dv = register_mlp(tape, *c.decoder, false);
    ad::Var zv = broadcast_decode(tape, dv, cv, k_count, c.decoder->beta);
    if (c.Z) zv = tape.add_const(zv, *c.Z);

    std::vector<ad::Var> pos_vars(faces), nrm_vars(faces);
    std::vector<Mat> nrm_values(faces);
    std::vector<int> offsets(faces);
    std::vector<Vec3> surf;
    for (int fi = 0; fi < faces; ++fi) {
      const int face_id = c.layout.faces[fi].id;
      const auto& dom = fc.domain(face_id);
      Mat lam, dlu, dlv;
      mvc_matrices(dom, sample_domain(dom, per_face, rng), lam, dlu, dlv);
      ad::Var gathered = tape.gather_rows(zv, init_rows[fi]);
      MlpTrace trace = mlp_forward(tape, mv, tape.matmul_const_left(lam, gathered), c.mlp.beta);
      ad::Var ju = mlp_tangent(tape, mv, trace, tape.matmul_const_left(dlu, gathered), c.mlp.beta);
      ad::Var jv = mlp_tangent(tape, mv, trace, tape.matmul_const_left(dlv, gathered), c.mlp.beta);
      pos_vars[fi] = trace.out;
      nrm_vars[fi] = tape.scale(tape.normalize_rows(tape.cross_rows(ju, jv)),
                                c.face_sign.empty() ? 1.0 : c.face_sign[fi]);
      nrm_values[fi] = tape.value(nrm_vars[fi]);
      offsets[fi] = static_cast<int>(surf.size());
      const Mat& pv = tape.value(trace.out);
      for (int r = 0; r < pv.rows(); ++r) surf.emplace_back(pv.row(r).transpose());
    }

    // Global pairing (no patch labels) with normal filtering: keep a pair
    // only when the paired normals agree with cosine > 0.7.
    const PairedSamples paired = pair_closest_global(surf, cloud_pts);
    std::vector<std::vector<int>> local_idx(faces), tgt_idx(faces);
    for (const auto& p : paired.pairs) {
      const int fi = p.surface_index / per_face;
      const int local = p.surface_index - offsets[fi];
      const double cosine = nrm_values[fi].row(local).dot(cloud_nrm.row(p.target_index));
      if (cosine <= 0.7) continue;
      local_idx[fi].push_back(local);
      tgt_idx[fi].push_back(p.target_index);
    }
    std::vector<std::pair<double, ad::Var>> terms;
    for (int fi = 0; fi < faces; ++fi) {
      if (local_idx[fi].empty()) continue;
      const int np = static_cast<int>(local_idx[fi].size());
      Mat targets(np, 3), normals(np, 3);
      for (int j = 0; j < np; ++j) {
        targets.row(j) = cloud_pts[tgt_idx[fi][j]].transpose();
        normals.row(j) = cloud_nrm.row(tgt_idx[fi][j]);
      }
      ad::Var px = tape.gather_rows(pos_vars[fi], local_idx[fi]);
      terms.emplace_back(1.0, surface_loss(tape, px, targets, normals,
                                           c.config.weights.beta_point_to_plane));
      ad::Var nx = tape.gather_rows(nrm_vars[fi], local_idx[fi]);
      terms.emplace_back(1.0, normal_loss(tape, nx, normals));
    }
    terms.emplace_back(1e-3, tape.frob_norm(cv));
    ad::Var total = tape.sum_scalars(terms);
    const double value = tape.scalar(total);
    if (std::isnan(value))
      throw std::runtime_error("NaN objective in cloud fitting at step " + std::to_string(i));
    tape.backward(total);
    adam.step({&code}, {tape.grad(cv)}, lr);
    write_step_log(log, i, lr, value);
  }
  return code.row(0);
}

}  // namespace nps
