#include "nps/network.hpp"

#include <cmath>
#include <stdexcept>

namespace nps {

namespace {

double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

}  // namespace

double softplus(double x, double beta) {
  const double t = beta * x;
  if (t > 30.0) return x + std::log1p(std::exp(-t)) / beta;
  return std::log1p(std::exp(t)) / beta;
}

MlpParams MlpParams::create(const std::vector<int>& widths, Rng& rng) {
  if (widths.size() < 2) throw std::runtime_error("MLP needs at least one layer");
  MlpParams p;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const int fan_in = widths[l];
    const double bound = std::sqrt(6.0 / fan_in);
    Mat w(widths[l], widths[l + 1]);
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-bound, bound);
    p.W.push_back(std::move(w));
    p.b.push_back(RowVec::Zero(widths[l + 1]));
  }
  return p;
}

bool MlpParams::finite() const {
  for (const auto& w : W)
    if (!w.allFinite()) return false;
  for (const auto& bias : b)
    if (!bias.allFinite()) return false;
  return true;
}

Mat mlp_forward(const MlpParams& p, const Mat& input) {
  if (!input.allFinite()) throw std::runtime_error("non-finite MLP input");
  Mat h = input;
  const int last = p.layer_count() - 1;
  for (int l = 0; l <= last; ++l) {
    Mat a = (h * p.W[l]).rowwise() + p.b[l];
    if (l == last) return a;
    h = a.unaryExpr([&p](double v) { return softplus(v, p.beta); });
  }
  return h;
}

Vec3 mlp_forward_point(const MlpParams& p, const Vec& z) {
  Mat out = mlp_forward(p, z.transpose());
  return Vec3(out(0, 0), out(0, 1), out(0, 2));
}

Mat positional_tokens(int k_count) {
  Mat t(k_count, 1);
  for (int k = 0; k < k_count; ++k) t(k, 0) = static_cast<double>(k + 1) / k_count;
  return t;
}

Mat broadcast_decode(const DecoderParams& d, const RowVec& code, int k_count) {
  const int c = static_cast<int>(code.cols());
  Mat input(k_count, c + 1);
  input.leftCols(c) = code.replicate(k_count, 1);
  input.col(c) = positional_tokens(k_count);
  return mlp_forward(d, input);
}

MlpVars register_mlp(ad::Tape& tape, const MlpParams& p, bool trainable) {
  MlpVars vars;
  for (const auto& w : p.W)
    vars.W.push_back(trainable ? tape.param(w) : tape.constant(w));
  for (const auto& bias : p.b)
    vars.b.push_back(trainable ? tape.param(bias) : tape.constant(bias));
  return vars;
}

void read_mlp_grads(const ad::Tape& tape, const MlpVars& vars, std::vector<Mat>& gw,
                    std::vector<Mat>& gb) {
  gw.clear();
  gb.clear();
  for (auto v : vars.W) gw.push_back(tape.grad(v));
  for (auto v : vars.b) gb.push_back(tape.grad(v));
}

MlpTrace mlp_forward(ad::Tape& tape, const MlpVars& vars, ad::Var input, double beta) {
  MlpTrace trace;
  ad::Var h = input;
  const int last = static_cast<int>(vars.W.size()) - 1;
  for (int l = 0; l <= last; ++l) {
    ad::Var a = tape.add_row_broadcast(tape.matmul(h, vars.W[l]), vars.b[l]);
    if (l == last) {
      trace.out = a;
      break;
    }
    trace.preacts.push_back(a);
    h = tape.softplus(a, beta);
    trace.hidden.push_back(h);
  }
  return trace;
}

ad::Var mlp_tangent(ad::Tape& tape, const MlpVars& vars, const MlpTrace& trace,
                    ad::Var input_tangent, double beta) {
  ad::Var dh = input_tangent;
  const int last = static_cast<int>(vars.W.size()) - 1;
  for (int l = 0; l <= last; ++l) {
    ad::Var da = tape.matmul(dh, vars.W[l]);
    if (l == last) return da;
    dh = tape.hadamard(tape.softplus_prime(trace.preacts[l], beta), da);
  }
  return dh;
}

ad::Var broadcast_decode(ad::Tape& tape, const MlpVars& decoder, ad::Var code, int k_count,
                         double beta) {
  ad::Var input = tape.broadcast_concat(code, positional_tokens(k_count));
  return mlp_forward(tape, decoder, input, beta).out;
}

void surface_batch(const FeatureComplex& complex, const MlpParams& p, int face_id,
                   const std::vector<Vec2>& us, Mat& positions, Mat& ju, Mat& jv) {
  const auto& d = complex.domain(face_id);
  const int n = static_cast<int>(us.size());
  const int nv = d.size();
  Mat zf(nv, complex.D);
  for (int j = 0; j < nv; ++j) zf.row(j) = complex.Z.row(complex.vertex_row.at(d.corner_ids[j]));

  Mat lam(n, nv), dlu(n, nv), dlv(n, nv);
  for (int i = 0; i < n; ++i) {
    Vec l;
    Mat dl;
    mvc_weights_and_grad(d, us[i], l, dl);
    lam.row(i) = l.transpose();
    dlu.row(i) = dl.col(0).transpose();
    dlv.row(i) = dl.col(1).transpose();
  }
  Mat h = lam * zf, du = dlu * zf, dv = dlv * zf;
  const int last = p.layer_count() - 1;
  for (int l = 0; l <= last; ++l) {
    Mat a = (h * p.W[l]).rowwise() + p.b[l];
    Mat dau = du * p.W[l];
    Mat dav = dv * p.W[l];
    if (l == last) {
      positions = std::move(a);
      ju = std::move(dau);
      jv = std::move(dav);
      return;
    }
    const Mat s = a.unaryExpr([&p](double v) { return sigmoid(p.beta * v); });
    h = a.unaryExpr([&p](double v) { return softplus(v, p.beta); });
    du = dau.cwiseProduct(s);
    dv = dav.cwiseProduct(s);
  }
}

Eigen::Matrix<double, 3, 2> surface_jacobian(const FeatureComplex& complex, const MlpParams& p,
                                             int face_id, const Vec2& u) {
  Mat pos, ju, jv;
  surface_batch(complex, p, face_id, {u}, pos, ju, jv);
  Eigen::Matrix<double, 3, 2> jac;
  jac.col(0) = ju.row(0).transpose();
  jac.col(1) = jv.row(0).transpose();
  return jac;
}

Vec3 surface_normal(const FeatureComplex& complex, const MlpParams& p, int face_id,
                    const Vec2& u) {
  const auto jac = surface_jacobian(complex, p, face_id, u);
  const Vec3 c = Vec3(jac.col(0)).cross(Vec3(jac.col(1)));
  const double n = c.norm();
  if (n < 1e-12) throw std::runtime_error("degenerate parameterization: |Ju x Jv| < 1e-12");
  return c / n;
}

}  // namespace nps
