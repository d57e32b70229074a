#include "nps/tape.hpp"

#include <cmath>

namespace nps::ad {

namespace {

double sigmoid(double t) {
  return t >= 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
}

// softplus_beta(x) = log(1 + exp(beta*x)) / beta, via the log1p branch that
// never overflows (beta*x > 30 switches to the asymptote).
double softplus_stable(double x, double beta) {
  const double t = beta * x;
  if (t > 30.0) return x + std::log1p(std::exp(-t)) / beta;
  return std::log1p(std::exp(t)) / beta;
}

constexpr double kNormEps = 1e-12;

}  // namespace

template <class T, class... Args>
Var Tape::push(Args&&... args) {
  nodes_.push_back(std::make_unique<T>(std::forward<Args>(args)...));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

static void accum(Tape& tape, int idx, const Mat& g) {
  Node& n = tape.node(idx);
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
  n.grad += g;
}

Mat Tape::grad(Var v) const {
  const Node& n = *nodes_[v.idx];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

// ---------------------------------------------------------------- leaves

struct LeafNode : Node {};

Var Tape::param(const Mat& v) {
  Var r = push<LeafNode>();
  nodes_[r.idx]->value = v;
  nodes_[r.idx]->needs_grad = true;
  return r;
}

Var Tape::constant(const Mat& v) {
  Var r = push<LeafNode>();
  nodes_[r.idx]->value = v;
  return r;
}

// ---------------------------------------------------------------- helpers

#define NPS_NODE_COMMON(tape, result, ...)                  \
  do {                                                      \
    for (int p : {__VA_ARGS__})                             \
      if (p >= 0 && (tape).node(p).needs_grad) (result)->needs_grad = true; \
  } while (0)

// ---------------------------------------------------------------- add/sub

struct AddNode : Node {
  int a, b;
  AddNode(int a_, int b_) : a(a_), b(b_) {}
  void backward(Tape& t) override {
    accum(t, a, grad);
    accum(t, b, grad);
  }
};

Var Tape::add(Var a, Var b) {
  Var r = push<AddNode>(a.idx, b.idx);
  auto* n = nodes_[r.idx].get();
  n->value = value(a) + value(b);
  NPS_NODE_COMMON(*this, n, a.idx, b.idx);
  return r;
}

struct SubNode : Node {
  int a, b;
  SubNode(int a_, int b_) : a(a_), b(b_) {}
  void backward(Tape& t) override {
    accum(t, a, grad);
    accum(t, b, -grad);
  }
};

Var Tape::sub(Var a, Var b) {
  Var r = push<SubNode>(a.idx, b.idx);
  auto* n = nodes_[r.idx].get();
  n->value = value(a) - value(b);
  NPS_NODE_COMMON(*this, n, a.idx, b.idx);
  return r;
}

struct AddConstNode : Node {
  int a;
  explicit AddConstNode(int a_) : a(a_) {}
  void backward(Tape& t) override { accum(t, a, grad); }
};

Var Tape::add_const(Var a, const Mat& c) {
  Var r = push<AddConstNode>(a.idx);
  auto* n = nodes_[r.idx].get();
  n->value = value(a) + c;
  NPS_NODE_COMMON(*this, n, a.idx);
  return r;
}

struct ScaleNode : Node {
  int a;
  double s;
  ScaleNode(int a_, double s_) : a(a_), s(s_) {}
  void backward(Tape& t) override { accum(t, a, s * grad); }
};

Var Tape::scale(Var a, double s) {
  Var r = push<ScaleNode>(a.idx, s);
  auto* n = nodes_[r.idx].get();
  n->value = s * value(a);
  NPS_NODE_COMMON(*this, n, a.idx);
  return r;
}

struct HadamardNode : Node {
  int a, b;
  HadamardNode(int a_, int b_) : a(a_), b(b_) {}
  void backward(Tape& t) override {
    accum(t, a, grad.cwiseProduct(t.node(b).value));
    accum(t, b, grad.cwiseProduct(t.node(a).value));
  }
};

Var Tape::hadamard(Var a, Var b) {
  Var r = push<HadamardNode>(a.idx, b.idx);
  auto* n = nodes_[r.idx].get();
  n->value = value(a).cwiseProduct(value(b));
  NPS_NODE_COMMON(*this, n, a.idx, b.idx);
  return r;
}

struct GatherRowsNode : Node {
  int a;
  std::vector<int> rows;
  GatherRowsNode(int a_, std::vector<int> r) : a(a_), rows(std::move(r)) {}
  void backward(Tape& t) override {
    Node& src = t.node(a);
    if (!src.needs_grad) return;
    if (src.grad.size() == 0) src.grad = Mat::Zero(src.value.rows(), src.value.cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      src.grad.row(rows[i]) += grad.row(static_cast<int>(i));
  }
};

Var Tape::gather_rows(Var a, std::vector<int> rows) {
  Var r = push<GatherRowsNode>(a.idx, std::move(rows));
  auto* n = static_cast<GatherRowsNode*>(nodes_[r.idx].get());
  const Mat& src = value(a);
  n->value.resize(static_cast<int>(n->rows.size()), src.cols());
  for (std::size_t i = 0; i < n->rows.size(); ++i)
    n->value.row(static_cast<int>(i)) = src.row(n->rows[i]);
  NPS_NODE_COMMON(*this, n, a.idx);
  return r;
}

struct MeanRowsNode : Node {
  int a;
  explicit MeanRowsNode(int a_) : a(a_) {}
  void backward(Tape& t) override {
    const double inv = 1.0 / static_cast<double>(t.node(a).value.rows());
    accum(t, a, (inv * grad).replicate(t.node(a).value.rows(), 1));
  }
};

Var Tape::mean_rows(Var a) {
  Var r = push<MeanRowsNode>(a.idx);
  auto* n = nodes_[r.idx].get();
  n->value = value(a).colwise().mean();
  NPS_NODE_COMMON(*this, n, a.idx);
  return r;
}

// ---------------------------------------------------------------- matmul

struct MatMulNode : Node {
  int a, b;
  MatMulNode(int a_, int b_) : a(a_), b(b_) {}
  void backward(Tape& t) override {
    if (t.node(a).needs_grad) accum(t, a, grad * t.node(b).value.transpose());
    if (t.node(b).needs_grad) accum(t, b, t.node(a).value.transpose() * grad);
  }
};

Var Tape::matmul(Var a, Var b) {
  Var r = push<MatMulNode>(a.idx, b.idx);
  auto* n = nodes_[r.idx].get();
  n->value.noalias() = value(a) * value(b);
  NPS_NODE_COMMON(*this, n, a.idx, b.idx);
  return r;
}

struct MatMulConstLeftNode : Node {
  int b;
  Mat a;
  MatMulConstLeftNode(Mat a_, int b_) : b(b_), a(std::move(a_)) {}
  void backward(Tape& t) override { accum(t, b, a.transpose() * grad); }
};

Var Tape::matmul_const_left(const Mat& a, Var b) {
  Var r = push<MatMulConstLeftNode>(a, b.idx);
  auto* n = nodes_[r.idx].get();
  n->value.noalias() = a * value(b);
  NPS_NODE_COMMON(*this, n, b.idx);
  return r;
}

struct AddRowBroadcastNode : Node {
  int a, row;
  AddRowBroadcastNode(int a_, int row_) : a(a_), row(row_) {}
  void backward(Tape& t) override {
    accum(t, a, grad);
    if (t.node(row).needs_grad) accum(t, row, grad.colwise().sum());
  }
};

Var Tape::add_row_broadcast(Var a, Var row) {
  Var r = push<AddRowBroadcastNode>(a.idx, row.idx);
  auto* n = nodes_[r.idx].get();
  n->value = value(a).rowwise() + value(row).row(0);
  NPS_NODE_COMMON(*this, n, a.idx, row.idx);
  return r;
}

// ---------------------------------------------------------------- softplus

struct SoftplusNode : Node {
  int a;
  double beta;
  SoftplusNode(int a_, double b_) : a(a_), beta(b_) {}
  void backward(Tape& t) override {
    const Mat& x = t.node(a).value;
    accum(t, a, grad.cwiseProduct(x.unaryExpr([this](double v) { return sigmoid(beta * v); })));
  }
};

Var Tape::softplus(Var a, double beta) {
  Var r = push<SoftplusNode>(a.idx, beta);
  auto* n = nodes_[r.idx].get();
  n->value = value(a).unaryExpr([beta](double v) { return softplus_stable(v, beta); });
  NPS_NODE_COMMON(*this, n, a.idx);
  return r;
}

struct SoftplusPrimeNode : Node {
  int a;
  double beta;
  SoftplusPrimeNode(int a_, double b_) : a(a_), beta(b_) {}
  void backward(Tape& t) override {
    // d sigmoid(beta x)/dx = beta * s * (1 - s), s already in value
    accum(t, a, grad.cwiseProduct(
                    (beta * value.array() * (1.0 - value.array())).matrix()));
  }
};

Var Tape::softplus_prime(Var a, double beta) {
  Var r = push<SoftplusPrimeNode>(a.idx, beta);
  auto* n = nodes_[r.idx].get();
  n->value = value(a).unaryExpr([beta](double v) { return sigmoid(beta * v); });
  NPS_NODE_COMMON(*this, n, a.idx);
  return r;
}

// ---------------------------------------------------------------- rowwise

struct CrossRowsNode : Node {
  int a, b;
  CrossRowsNode(int a_, int b_) : a(a_), b(b_) {}
  void backward(Tape& t) override {
    const Mat& av = t.node(a).value;
    const Mat& bv = t.node(b).value;
    const bool ga = t.node(a).needs_grad, gb = t.node(b).needs_grad;
    Mat da, db;
    if (ga) da.setZero(av.rows(), 3);
    if (gb) db.setZero(av.rows(), 3);
    for (int i = 0; i < av.rows(); ++i) {
      const Vec3 g = grad.row(i), x = av.row(i), y = bv.row(i);
      if (ga) da.row(i) = y.cross(g);
      if (gb) db.row(i) = g.cross(x);
    }
    if (ga) accum(t, a, da);
    if (gb) accum(t, b, db);
  }
};

Var Tape::cross_rows(Var a, Var b) {
  Var r = push<CrossRowsNode>(a.idx, b.idx);
  auto* n = nodes_[r.idx].get();
  const Mat& av = value(a);
  const Mat& bv = value(b);
  n->value.resize(av.rows(), 3);
  for (int i = 0; i < av.rows(); ++i) {
    const Vec3 x = av.row(i), y = bv.row(i);
    n->value.row(i) = x.cross(y);
  }
  NPS_NODE_COMMON(*this, n, a.idx, b.idx);
  return r;
}

struct NormalizeRowsNode : Node {
  int a;
  Vec norms;
  explicit NormalizeRowsNode(int a_) : a(a_) {}
  void backward(Tape& t) override {
    Mat g = grad;
    for (int i = 0; i < g.rows(); ++i) {
      const RowVec y = value.row(i);
      const RowVec gi = grad.row(i);
      g.row(i) = (gi - gi.dot(y) * y) / norms(i);
    }
    accum(t, a, g);
  }
};

Var Tape::normalize_rows(Var a) {
  Var r = push<NormalizeRowsNode>(a.idx);
  auto* n = static_cast<NormalizeRowsNode*>(nodes_[r.idx].get());
  const Mat& av = value(a);
  n->value.resizeLike(av);
  n->norms.resize(av.rows());
  for (int i = 0; i < av.rows(); ++i) {
    const double nm = std::max(av.row(i).norm(), kNormEps);
    n->norms(i) = nm;
    n->value.row(i) = av.row(i) / nm;
  }
  NPS_NODE_COMMON(*this, n, a.idx);
  return r;
}

struct RowSqNormsNode : Node {
  int a;
  explicit RowSqNormsNode(int a_) : a(a_) {}
  void backward(Tape& t) override {
    const Mat& av = t.node(a).value;
    accum(t, a, (2.0 * (av.array().colwise() * grad.col(0).array())).matrix());
  }
};

Var Tape::row_sq_norms(Var a) {
  Var r = push<RowSqNormsNode>(a.idx);
  auto* n = nodes_[r.idx].get();
  n->value = value(a).rowwise().squaredNorm();
  NPS_NODE_COMMON(*this, n, a.idx);
  return r;
}

struct RowNormsNode : Node {
  int a;
  explicit RowNormsNode(int a_) : a(a_) {}
  void backward(Tape& t) override {
    const Mat& av = t.node(a).value;
    Mat g(av.rows(), av.cols());
    for (int i = 0; i < av.rows(); ++i)
      g.row(i) = grad(i, 0) * av.row(i) / std::max(value(i, 0), kNormEps);
    accum(t, a, g);
  }
};

Var Tape::row_norms(Var a) {
  Var r = push<RowNormsNode>(a.idx);
  auto* n = nodes_[r.idx].get();
  n->value = value(a).rowwise().norm();
  NPS_NODE_COMMON(*this, n, a.idx);
  return r;
}

struct NormalizeFrobNode : Node {
  int a;
  double norm = 0.0;
  explicit NormalizeFrobNode(int a_) : a(a_) {}
  void backward(Tape& t) override {
    const double gy = (grad.array() * value.array()).sum();
    accum(t, a, (grad - gy * value) / norm);
  }
};

Var Tape::normalize_frob(Var a) {
  Var r = push<NormalizeFrobNode>(a.idx);
  auto* n = static_cast<NormalizeFrobNode*>(nodes_[r.idx].get());
  n->norm = std::max(value(a).norm(), kNormEps);
  n->value = value(a) / n->norm;
  NPS_NODE_COMMON(*this, n, a.idx);
  return r;
}

// ---------------------------------------------------------------- scalars

struct SumRowNormsNode : Node {
  int a;
  explicit SumRowNormsNode(int a_) : a(a_) {}
  void backward(Tape& t) override {
    const Mat& av = t.node(a).value;
    Mat g(av.rows(), av.cols());
    for (int i = 0; i < av.rows(); ++i)
      g.row(i) = grad(0, 0) * av.row(i) / std::max(av.row(i).norm(), kNormEps);
    accum(t, a, g);
  }
};

Var Tape::sum_row_norms(Var a) {
  Var r = push<SumRowNormsNode>(a.idx);
  auto* n = nodes_[r.idx].get();
  n->value = Mat::Constant(1, 1, value(a).rowwise().norm().sum());
  NPS_NODE_COMMON(*this, n, a.idx);
  return r;
}

struct SumAbsRowDotNode : Node {
  int a;
  Mat n;
  SumAbsRowDotNode(int a_, Mat n_) : a(a_), n(std::move(n_)) {}
  void backward(Tape& t) override {
    const Mat& av = t.node(a).value;
    Mat g(av.rows(), av.cols());
    for (int i = 0; i < av.rows(); ++i) {
      const double d = av.row(i).dot(n.row(i));
      const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      g.row(i) = grad(0, 0) * s * n.row(i);
    }
    accum(t, a, g);
  }
};

Var Tape::sum_abs_rowdot(Var a, const Mat& w) {
  Var r = push<SumAbsRowDotNode>(a.idx, w);
  auto* nd = nodes_[r.idx].get();
  nd->value = Mat::Constant(1, 1, (value(a).array() * w.array()).rowwise().sum().abs().sum());
  NPS_NODE_COMMON(*this, nd, a.idx);
  return r;
}

struct SumOneMinusRowDotNode : Node {
  int a;
  Mat n;
  SumOneMinusRowDotNode(int a_, Mat n_) : a(a_), n(std::move(n_)) {}
  void backward(Tape& t) override { accum(t, a, -grad(0, 0) * n); }
};

Var Tape::sum_one_minus_rowdot(Var a, const Mat& w) {
  Var r = push<SumOneMinusRowDotNode>(a.idx, w);
  auto* nd = nodes_[r.idx].get();
  const double dots = (value(a).array() * w.array()).sum();
  nd->value = Mat::Constant(1, 1, static_cast<double>(w.rows()) - dots);
  NPS_NODE_COMMON(*this, nd, a.idx);
  return r;
}

struct MeanCenterAbsSumNode : Node {
  int a;
  explicit MeanCenterAbsSumNode(int a_) : a(a_) {}
  void backward(Tape& t) override {
    const Mat& av = t.node(a).value;
    const int n = static_cast<int>(av.rows());
    const double mean = av.col(0).mean();
    Mat signs(n, 1);
    double sum_signs = 0.0;
    for (int i = 0; i < n; ++i) {
      const double d = av(i, 0) - mean;
      signs(i, 0) = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
      sum_signs += signs(i, 0);
    }
    accum(t, a, grad(0, 0) * (signs.array() - sum_signs / n).matrix());
  }
};

Var Tape::mean_center_abs_sum(Var a) {
  Var r = push<MeanCenterAbsSumNode>(a.idx);
  auto* nd = nodes_[r.idx].get();
  const double mean = value(a).col(0).mean();
  nd->value = Mat::Constant(1, 1, (value(a).col(0).array() - mean).abs().sum());
  NPS_NODE_COMMON(*this, nd, a.idx);
  return r;
}

struct DotConstNode : Node {
  int a;
  Mat w;
  DotConstNode(int a_, Mat w_) : a(a_), w(std::move(w_)) {}
  void backward(Tape& t) override { accum(t, a, grad(0, 0) * w); }
};

Var Tape::dot_const(Var a, const Mat& w) {
  Var r = push<DotConstNode>(a.idx, w);
  auto* nd = nodes_[r.idx].get();
  nd->value = Mat::Constant(1, 1, (value(a).array() * w.array()).sum());
  NPS_NODE_COMMON(*this, nd, a.idx);
  return r;
}

struct SqrtOneMinusNode : Node {
  int a;
  explicit SqrtOneMinusNode(int a_) : a(a_) {}
  void backward(Tape& t) override {
    const double y = value(0, 0);
    if (y > 1e-9) accum(t, a, Mat::Constant(1, 1, -0.5 / y * grad(0, 0)));
  }
};

Var Tape::sqrt_one_minus(Var x) {
  Var r = push<SqrtOneMinusNode>(x.idx);
  auto* nd = nodes_[r.idx].get();
  nd->value = Mat::Constant(1, 1, std::sqrt(std::max(0.0, 1.0 - scalar(x))));
  NPS_NODE_COMMON(*this, nd, x.idx);
  return r;
}

struct FrobNormNode : Node {
  int a;
  explicit FrobNormNode(int a_) : a(a_) {}
  void backward(Tape& t) override {
    const Mat& av = t.node(a).value;
    accum(t, a, grad(0, 0) / std::max(value(0, 0), kNormEps) * av);
  }
};

Var Tape::frob_norm(Var a) {
  Var r = push<FrobNormNode>(a.idx);
  auto* nd = nodes_[r.idx].get();
  nd->value = Mat::Constant(1, 1, value(a).norm());
  NPS_NODE_COMMON(*this, nd, a.idx);
  return r;
}

struct SumScalarsNode : Node {
  std::vector<std::pair<double, int>> terms;
  explicit SumScalarsNode(std::vector<std::pair<double, int>> t) : terms(std::move(t)) {}
  void backward(Tape& t) override {
    for (auto& [w, idx] : terms)
      accum(t, idx, Mat::Constant(1, 1, w * grad(0, 0)));
  }
};

Var Tape::sum_scalars(const std::vector<std::pair<double, Var>>& terms) {
  std::vector<std::pair<double, int>> idx;
  idx.reserve(terms.size());
  double total = 0.0;
  bool needs = false;
  for (auto& [w, v] : terms) {
    idx.emplace_back(w, v.idx);
    total += w * scalar(v);
    needs = needs || nodes_[v.idx]->needs_grad;
  }
  Var r = push<SumScalarsNode>(std::move(idx));
  nodes_[r.idx]->value = Mat::Constant(1, 1, total);
  nodes_[r.idx]->needs_grad = needs;
  return r;
}

// ---------------------------------------------------------------- decoder

struct BroadcastConcatNode : Node {
  int code;
  explicit BroadcastConcatNode(int c) : code(c) {}
  void backward(Tape& t) override {
    const int c = static_cast<int>(t.node(code).value.cols());
    accum(t, code, grad.leftCols(c).colwise().sum());
  }
};

Var Tape::broadcast_concat(Var code, const Mat& tokens) {
  Var r = push<BroadcastConcatNode>(code.idx);
  auto* nd = nodes_[r.idx].get();
  const int k = static_cast<int>(tokens.rows());
  const int c = static_cast<int>(value(code).cols());
  nd->value.resize(k, c + 1);
  nd->value.leftCols(c) = value(code).replicate(k, 1);
  nd->value.col(c) = tokens.col(0);
  NPS_NODE_COMMON(*this, nd, code.idx);
  return r;
}

// ---------------------------------------------------------------- sweep

void Tape::backward(Var loss) {
  if (nodes_[loss.idx]->value.size() != 1)
    throw std::logic_error("backward() requires a scalar node");
  nodes_[loss.idx]->grad = Mat::Constant(1, 1, 1.0);
  for (int i = loss.idx; i >= 0; --i) {
    Node& n = *nodes_[i];
    if (n.needs_grad && n.grad.size() != 0) n.backward(*this);
    // Intermediates are dead once their backward ran; releasing them keeps
    // the peak footprint at roughly one forward pass. Leaves keep their
    // value and gradient for the caller.
    if (!dynamic_cast<LeafNode*>(&n)) {
      n.value.resize(0, 0);
      n.grad.resize(0, 0);
    }
  }
}

}  // namespace nps::ad
