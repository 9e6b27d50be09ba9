#include "syp/autodiff.hpp"

#include <cmath>

#include "syp/kernels.hpp"
#include "syp/util.hpp"

namespace syp {

namespace {
const Tensor kEmpty;
}

const Tensor& DiffValue::value() const {
  if (!valid()) throw ContractError("DiffValue: empty handle");
  return tape->value(id);
}

const Tensor& DiffValue::grad() const {
  if (!valid()) throw ContractError("DiffValue: empty handle");
  return tape->grad(id);
}

const Tensor& Tape::value(int id) const { return val_of(nodes_.at(id)); }

const Tensor& Tape::grad(int id) const {
  const Node& n = nodes_.at(id);
  return n.needs_grad ? n.grad : kEmpty;
}

int Tape::push(Node n) {
  if (n.needs_grad && n.grad.empty()) {
    const Tensor& v = val_of(n);
    n.grad = Tensor::zeros(v.rows(), v.cols());
  }
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

DiffValue Tape::check_binary(DiffValue a, DiffValue b, const char* what) {
  if (a.tape != this || b.tape != this)
    throw ContractError(str(what, ": operands recorded on a different tape"));
  return a;
}

DiffValue Tape::constant(Tensor v) {
  Node n;
  n.op = Op::Constant;
  n.val = std::move(v);
  return {this, push(std::move(n))};
}

DiffValue Tape::constant_ref(const Tensor* v) {
  Node n;
  n.op = Op::Constant;
  n.ext = v;
  return {this, push(std::move(n))};
}

DiffValue Tape::param(const Tensor* v) {
  Node n;
  n.op = Op::Param;
  n.ext = v;
  n.needs_grad = true;
  return {this, push(std::move(n))};
}

DiffValue Tape::leaf(Tensor v) {
  Node n;
  n.op = Op::Param;
  n.val = std::move(v);
  n.needs_grad = true;
  return {this, push(std::move(n))};
}

DiffValue Tape::matmul(DiffValue a, DiffValue b) {
  check_binary(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.rows())
    throw ContractError(str("matmul: inner extents differ, ", av.shape_str(), " * ", bv.shape_str()));
  Node n;
  n.op = Op::MatMul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = tracked(a.id) || tracked(b.id);
  n.val = Tensor(av.rows(), bv.cols());
  kernels::matmul(av.data(), bv.data(), n.val.data(), av.rows(), av.cols(), bv.cols());
  return {this, push(std::move(n))};
}

DiffValue Tape::add(DiffValue a, DiffValue b) {
  check_binary(a, b, "add");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv))
    throw ContractError(str("add: shape mismatch ", av.shape_str(), " vs ", bv.shape_str()));
  Node n;
  n.op = Op::Add;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = tracked(a.id) || tracked(b.id);
  n.val = av;
  for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] += bv[i];
  return {this, push(std::move(n))};
}

DiffValue Tape::add_row(DiffValue a, DiffValue row) {
  check_binary(a, row, "add_row");
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols())
    throw ContractError(str("add_row: row ", rv.shape_str(), " does not broadcast over ", av.shape_str()));
  Node n;
  n.op = Op::AddRow;
  n.a = a.id;
  n.b = row.id;
  n.needs_grad = tracked(a.id) || tracked(row.id);
  n.val = av;
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) n.val.at(i, j) += rv[j];
  return {this, push(std::move(n))};
}

DiffValue Tape::mul(DiffValue a, DiffValue b) {
  check_binary(a, b, "mul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv))
    throw ContractError(str("mul: shape mismatch ", av.shape_str(), " vs ", bv.shape_str()));
  Node n;
  n.op = Op::Mul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = tracked(a.id) || tracked(b.id);
  n.val = av;
  for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] *= bv[i];
  return {this, push(std::move(n))};
}

DiffValue Tape::mul_row(DiffValue a, DiffValue row) {
  check_binary(a, row, "mul_row");
  const Tensor& av = a.value();
  const Tensor& rv = row.value();
  if (rv.rows() != 1 || rv.cols() != av.cols())
    throw ContractError(str("mul_row: row ", rv.shape_str(), " does not broadcast over ", av.shape_str()));
  Node n;
  n.op = Op::MulRow;
  n.a = a.id;
  n.b = row.id;
  n.needs_grad = tracked(a.id) || tracked(row.id);
  n.val = av;
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) n.val.at(i, j) *= rv[j];
  return {this, push(std::move(n))};
}

DiffValue Tape::scale(DiffValue a, double s) {
  const Tensor& av = a.value();
  Node n;
  n.op = Op::Scale;
  n.a = a.id;
  n.scalar = s;
  n.needs_grad = tracked(a.id);
  n.val = av;
  for (size_t i = 0; i < n.val.numel(); ++i) n.val[i] *= s;
  return {this, push(std::move(n))};
}

DiffValue Tape::gelu(DiffValue a) {
  const Tensor& av = a.value();
  Node n;
  n.op = Op::Gelu;
  n.a = a.id;
  n.needs_grad = tracked(a.id);
  n.val = Tensor(av.rows(), av.cols());
  kernels::gelu(av.data(), n.val.data(), av.numel());
  return {this, push(std::move(n))};
}

DiffValue Tape::sigmoid(DiffValue a) {
  const Tensor& av = a.value();
  Node n;
  n.op = Op::Sigmoid;
  n.a = a.id;
  n.needs_grad = tracked(a.id);
  n.val = Tensor(av.rows(), av.cols());
  kernels::sigmoid(av.data(), n.val.data(), av.numel());
  return {this, push(std::move(n))};
}

DiffValue Tape::relu(DiffValue a) {
  const Tensor& av = a.value();
  Node n;
  n.op = Op::Relu;
  n.a = a.id;
  n.needs_grad = tracked(a.id);
  n.val = av;
  for (size_t i = 0; i < n.val.numel(); ++i)
    if (n.val[i] < 0.0) n.val[i] = 0.0;
  return {this, push(std::move(n))};
}

DiffValue Tape::layer_norm(DiffValue x, DiffValue gamma, DiffValue beta, double eps) {
  check_binary(x, gamma, "layer_norm");
  check_binary(x, beta, "layer_norm");
  const Tensor& xv = x.value();
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();
  if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
  if (xv.cols() < 1) throw ContractError("layer_norm: empty rows");
  if (gv.rows() != 1 || gv.cols() != xv.cols() || bv.rows() != 1 || bv.cols() != xv.cols())
    throw ContractError(str("layer_norm: gamma/beta ", gv.shape_str(), "/", bv.shape_str(),
                            " do not match ", xv.shape_str()));
  Node n;
  n.op = Op::LayerNorm;
  n.a = x.id;
  n.b = gamma.id;
  n.c = beta.id;
  n.scalar = eps;
  n.needs_grad = tracked(x.id) || tracked(gamma.id) || tracked(beta.id);
  n.val = Tensor(xv.rows(), xv.cols());
  n.aux = Tensor(2, xv.rows());  // row 0: mean, row 1: 1/sqrt(var + eps)
  int d = xv.cols();
  for (int i = 0; i < xv.rows(); ++i) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xv.at(i, j);
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double e = xv.at(i, j) - mean;
      var += e * e;
    }
    var /= d;  // population variance
    double inv = 1.0 / std::sqrt(var + eps);
    n.aux.at(0, i) = mean;
    n.aux.at(1, i) = inv;
    for (int j = 0; j < d; ++j) n.val.at(i, j) = (xv.at(i, j) - mean) * inv * gv[j] + bv[j];
  }
  return {this, push(std::move(n))};
}

DiffValue Tape::softmax_rows(DiffValue a) {
  const Tensor& av = a.value();
  Node n;
  n.op = Op::SoftmaxRows;
  n.a = a.id;
  n.needs_grad = tracked(a.id);
  n.val = Tensor(av.rows(), av.cols());
  for (int i = 0; i < av.rows(); ++i) {
    double mx = av.at(i, 0);
    for (int j = 1; j < av.cols(); ++j) mx = std::max(mx, av.at(i, j));
    double z = 0.0;
    for (int j = 0; j < av.cols(); ++j) {
      double e = std::exp(av.at(i, j) - mx);
      n.val.at(i, j) = e;
      z += e;
    }
    double invz = 1.0 / z;
    for (int j = 0; j < av.cols(); ++j) n.val.at(i, j) *= invz;
  }
  return {this, push(std::move(n))};
}

DiffValue Tape::transpose(DiffValue a) {
  const Tensor& av = a.value();
  Node n;
  n.op = Op::Transpose;
  n.a = a.id;
  n.needs_grad = tracked(a.id);
  n.val = Tensor(av.cols(), av.rows());
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) n.val.at(j, i) = av.at(i, j);
  return {this, push(std::move(n))};
}

DiffValue Tape::slice_rows(DiffValue a, int r0, int r1) {
  const Tensor& av = a.value();
  if (r0 < 0 || r1 > av.rows() || r0 >= r1)
    throw ContractError(str("slice_rows: [", r0, ",", r1, ") out of ", av.shape_str()));
  Node n;
  n.op = Op::SliceRows;
  n.a = a.id;
  n.i0 = r0;
  n.i1 = r1;
  n.needs_grad = tracked(a.id);
  n.val = Tensor(r1 - r0, av.cols());
  for (int i = r0; i < r1; ++i)
    for (int j = 0; j < av.cols(); ++j) n.val.at(i - r0, j) = av.at(i, j);
  return {this, push(std::move(n))};
}

DiffValue Tape::slice_cols(DiffValue a, int c0, int c1) {
  const Tensor& av = a.value();
  if (c0 < 0 || c1 > av.cols() || c0 >= c1)
    throw ContractError(str("slice_cols: [", c0, ",", c1, ") out of ", av.shape_str()));
  Node n;
  n.op = Op::SliceCols;
  n.a = a.id;
  n.i0 = c0;
  n.i1 = c1;
  n.needs_grad = tracked(a.id);
  n.val = Tensor(av.rows(), c1 - c0);
  for (int i = 0; i < av.rows(); ++i)
    for (int j = c0; j < c1; ++j) n.val.at(i, j - c0) = av.at(i, j);
  return {this, push(std::move(n))};
}

DiffValue Tape::concat_rows(DiffValue a, DiffValue b) {
  check_binary(a, b, "concat_rows");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.cols() != bv.cols())
    throw ContractError(str("concat_rows: widths differ, ", av.shape_str(), " vs ", bv.shape_str()));
  Node n;
  n.op = Op::ConcatRows;
  n.a = a.id;
  n.b = b.id;
  n.i0 = av.rows();
  n.needs_grad = tracked(a.id) || tracked(b.id);
  n.val = Tensor(av.rows() + bv.rows(), av.cols());
  for (int i = 0; i < av.rows(); ++i)
    for (int j = 0; j < av.cols(); ++j) n.val.at(i, j) = av.at(i, j);
  for (int i = 0; i < bv.rows(); ++i)
    for (int j = 0; j < bv.cols(); ++j) n.val.at(av.rows() + i, j) = bv.at(i, j);
  return {this, push(std::move(n))};
}

DiffValue Tape::concat_cols(DiffValue a, DiffValue b) {
  check_binary(a, b, "concat_cols");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rows() != bv.rows())
    throw ContractError(str("concat_cols: heights differ, ", av.shape_str(), " vs ", bv.shape_str()));
  Node n;
  n.op = Op::ConcatCols;
  n.a = a.id;
  n.b = b.id;
  n.i0 = av.cols();
  n.needs_grad = tracked(a.id) || tracked(b.id);
  n.val = Tensor(av.rows(), av.cols() + bv.cols());
  for (int i = 0; i < av.rows(); ++i) {
    for (int j = 0; j < av.cols(); ++j) n.val.at(i, j) = av.at(i, j);
    for (int j = 0; j < bv.cols(); ++j) n.val.at(i, av.cols() + j) = bv.at(i, j);
  }
  return {this, push(std::move(n))};
}

DiffValue Tape::gather_rows(DiffValue table, std::vector<int> idx) {
  const Tensor& tv = table.value();
  for (size_t i = 0; i < idx.size(); ++i)
    if (idx[i] < 0 || idx[i] >= tv.rows())
      throw InputError(str("gather_rows: index ", idx[i], " at position ", i,
                           " outside table ", tv.shape_str()));
  Node n;
  n.op = Op::GatherRows;
  n.a = table.id;
  n.needs_grad = tracked(table.id);
  n.val = Tensor(static_cast<int>(idx.size()), tv.cols());
  for (size_t i = 0; i < idx.size(); ++i)
    for (int j = 0; j < tv.cols(); ++j) n.val.at(static_cast<int>(i), j) = tv.at(idx[i], j);
  n.idx = std::move(idx);
  return {this, push(std::move(n))};
}

DiffValue Tape::sum(DiffValue a) {
  const Tensor& av = a.value();
  Node n;
  n.op = Op::Sum;
  n.a = a.id;
  n.needs_grad = tracked(a.id);
  n.val = Tensor(1, 1);
  double acc = 0.0;
  for (size_t i = 0; i < av.numel(); ++i) acc += av[i];
  n.val[0] = acc;
  return {this, push(std::move(n))};
}

DiffValue Tape::softmax_xent(DiffValue logits, int label) {
  const Tensor& lv = logits.value();
  if (lv.rows() != 1) throw ContractError(str("softmax_xent: logits must be [1 x C], got ", lv.shape_str()));
  if (label < 0 || label >= lv.cols())
    throw InputError(str("softmax_xent: label ", label, " outside [0,", lv.cols(), ")"));
  Node n;
  n.op = Op::SoftmaxXent;
  n.a = logits.id;
  n.i0 = label;
  n.needs_grad = tracked(logits.id);
  double mx = lv[0];
  for (int j = 1; j < lv.cols(); ++j) mx = std::max(mx, lv[static_cast<size_t>(j)]);
  double z = 0.0;
  n.aux = Tensor(1, lv.cols());
  for (int j = 0; j < lv.cols(); ++j) {
    double e = std::exp(lv[static_cast<size_t>(j)] - mx);
    n.aux[static_cast<size_t>(j)] = e;
    z += e;
  }
  for (int j = 0; j < lv.cols(); ++j) n.aux[static_cast<size_t>(j)] /= z;
  n.val = Tensor(1, 1);
  n.val[0] = std::log(z) + mx - lv[static_cast<size_t>(label)];
  return {this, push(std::move(n))};
}

DiffValue Tape::bce_logits(DiffValue logits, const Tensor& targets) {
  const Tensor& lv = logits.value();
  if (lv.rows() != 1) throw ContractError(str("bce_logits: logits must be [1 x C], got ", lv.shape_str()));
  if (!lv.same_shape(targets))
    throw ContractError(str("bce_logits: targets ", targets.shape_str(), " vs logits ", lv.shape_str()));
  for (size_t i = 0; i < targets.numel(); ++i)
    if (targets[i] < 0.0 || targets[i] > 1.0)
      throw InputError(str("bce_logits: target ", targets[i], " at class ", i, " outside [0,1]"));
  Node n;
  n.op = Op::BceLogits;
  n.a = logits.id;
  n.aux = targets;
  n.needs_grad = tracked(logits.id);
  // mean over classes of: max(x,0) - x*t + log(1 + exp(-|x|))
  double acc = 0.0;
  for (size_t i = 0; i < lv.numel(); ++i) {
    double x = lv[i];
    acc += std::max(x, 0.0) - x * targets[i] + std::log1p(std::exp(-std::abs(x)));
  }
  n.val = Tensor(1, 1);
  n.val[0] = acc / static_cast<double>(lv.numel());
  return {this, push(std::move(n))};
}

void Tape::zero_grads() {
  for (Node& n : nodes_)
    if (n.needs_grad) n.grad.fill(0.0);
}

void Tape::backward(DiffValue loss) {
  if (loss.tape != this) throw ContractError("backward: loss recorded on a different tape");
  const Tensor& lv = value(loss.id);
  if (lv.rows() != 1 || lv.cols() != 1)
    throw ContractError(str("backward: loss must be scalar, got ", lv.shape_str()));
  if (!tracked(loss.id)) return;  // constant loss: nothing depends on any tracked value

  // Propagation runs in a scratch buffer, which is then added into the
  // persistent grads; repeating backward therefore doubles them exactly.
  std::vector<Tensor> d(nodes_.size());
  auto ensure = [&](int id) -> Tensor& {
    if (d[id].empty()) {
      const Tensor& v = val_of(nodes_[id]);
      d[id] = Tensor::zeros(v.rows(), v.cols());
    }
    return d[id];
  };
  ensure(loss.id)[0] = 1.0;

  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || d[id].empty()) continue;
    const Tensor& g = d[id];
    switch (n.op) {
      case Op::Constant:
      case Op::Param:
        break;
      case Op::MatMul: {
        const Tensor& av = val_of(nodes_[n.a]);
        const Tensor& bv = val_of(nodes_[n.b]);
        if (tracked(n.a)) {
          Tensor da(av.rows(), av.cols());
          kernels::matmul_nt(g.data(), bv.data(), da.data(), g.rows(), g.cols(), bv.rows());
          Tensor& acc = ensure(n.a);
          for (size_t i = 0; i < acc.numel(); ++i) acc[i] += da[i];
        }
        if (tracked(n.b)) {
          Tensor db(bv.rows(), bv.cols());
          kernels::matmul_tn(av.data(), g.data(), db.data(), av.cols(), av.rows(), g.cols());
          Tensor& acc = ensure(n.b);
          for (size_t i = 0; i < acc.numel(); ++i) acc[i] += db[i];
        }
        break;
      }
      case Op::Add: {
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          for (size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
        }
        if (tracked(n.b)) {
          Tensor& acc = ensure(n.b);
          for (size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
        }
        break;
      }
      case Op::AddRow: {
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          for (size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
        }
        if (tracked(n.b)) {
          Tensor& acc = ensure(n.b);
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) acc[static_cast<size_t>(j)] += g.at(i, j);
        }
        break;
      }
      case Op::Mul: {
        const Tensor& av = val_of(nodes_[n.a]);
        const Tensor& bv = val_of(nodes_[n.b]);
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          for (size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i] * bv[i];
        }
        if (tracked(n.b)) {
          Tensor& acc = ensure(n.b);
          for (size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i] * av[i];
        }
        break;
      }
      case Op::MulRow: {
        const Tensor& av = val_of(nodes_[n.a]);
        const Tensor& rv = val_of(nodes_[n.b]);
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) acc.at(i, j) += g.at(i, j) * rv[static_cast<size_t>(j)];
        }
        if (tracked(n.b)) {
          Tensor& acc = ensure(n.b);
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) acc[static_cast<size_t>(j)] += g.at(i, j) * av.at(i, j);
        }
        break;
      }
      case Op::Scale: {
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          for (size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i] * n.scalar;
        }
        break;
      }
      case Op::Gelu: {
        if (tracked(n.a)) {
          const Tensor& av = val_of(nodes_[n.a]);
          Tensor dx(av.rows(), av.cols());
          kernels::gelu_grad(av.data(), g.data(), dx.data(), av.numel());
          Tensor& acc = ensure(n.a);
          for (size_t i = 0; i < acc.numel(); ++i) acc[i] += dx[i];
        }
        break;
      }
      case Op::Sigmoid: {
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          for (size_t i = 0; i < acc.numel(); ++i) acc[i] += g[i] * n.val[i] * (1.0 - n.val[i]);
        }
        break;
      }
      case Op::Relu: {
        if (tracked(n.a)) {
          const Tensor& av = val_of(nodes_[n.a]);
          Tensor& acc = ensure(n.a);
          for (size_t i = 0; i < acc.numel(); ++i) acc[i] += av[i] > 0.0 ? g[i] : 0.0;
        }
        break;
      }
      case Op::LayerNorm: {
        const Tensor& xv = val_of(nodes_[n.a]);
        const Tensor& gv = val_of(nodes_[n.b]);
        int d_ = xv.cols();
        for (int i = 0; i < xv.rows(); ++i) {
          double mean = n.aux.at(0, i);
          double inv = n.aux.at(1, i);
          if (tracked(n.a)) {
            // dx = (gh - mean(gh) - xhat * mean(gh*xhat)) * inv, gh = g*gamma
            double m1 = 0.0, m2 = 0.0;
            for (int j = 0; j < d_; ++j) {
              double xh = (xv.at(i, j) - mean) * inv;
              double gh = g.at(i, j) * gv[static_cast<size_t>(j)];
              m1 += gh;
              m2 += gh * xh;
            }
            m1 /= d_;
            m2 /= d_;
            Tensor& acc = ensure(n.a);
            for (int j = 0; j < d_; ++j) {
              double xh = (xv.at(i, j) - mean) * inv;
              double gh = g.at(i, j) * gv[static_cast<size_t>(j)];
              acc.at(i, j) += (gh - m1 - xh * m2) * inv;
            }
          }
          if (tracked(n.b)) {
            Tensor& acc = ensure(n.b);
            for (int j = 0; j < d_; ++j) {
              double xh = (xv.at(i, j) - mean) * inv;
              acc[static_cast<size_t>(j)] += g.at(i, j) * xh;
            }
          }
          if (tracked(n.c)) {
            Tensor& acc = ensure(n.c);
            for (int j = 0; j < d_; ++j) acc[static_cast<size_t>(j)] += g.at(i, j);
          }
        }
        break;
      }
      case Op::SoftmaxRows: {
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          for (int i = 0; i < n.val.rows(); ++i) {
            double dot = 0.0;
            for (int j = 0; j < n.val.cols(); ++j) dot += g.at(i, j) * n.val.at(i, j);
            for (int j = 0; j < n.val.cols(); ++j)
              acc.at(i, j) += (g.at(i, j) - dot) * n.val.at(i, j);
          }
        }
        break;
      }
      case Op::Transpose: {
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) acc.at(j, i) += g.at(i, j);
        }
        break;
      }
      case Op::SliceRows: {
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) acc.at(n.i0 + i, j) += g.at(i, j);
        }
        break;
      }
      case Op::SliceCols: {
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) acc.at(i, n.i0 + j) += g.at(i, j);
        }
        break;
      }
      case Op::ConcatRows: {
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          for (int i = 0; i < n.i0; ++i)
            for (int j = 0; j < g.cols(); ++j) acc.at(i, j) += g.at(i, j);
        }
        if (tracked(n.b)) {
          Tensor& acc = ensure(n.b);
          for (int i = 0; i < acc.rows(); ++i)
            for (int j = 0; j < g.cols(); ++j) acc.at(i, j) += g.at(n.i0 + i, j);
        }
        break;
      }
      case Op::ConcatCols: {
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < n.i0; ++j) acc.at(i, j) += g.at(i, j);
        }
        if (tracked(n.b)) {
          Tensor& acc = ensure(n.b);
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < acc.cols(); ++j) acc.at(i, j) += g.at(i, n.i0 + j);
        }
        break;
      }
      case Op::GatherRows: {
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          for (size_t i = 0; i < n.idx.size(); ++i)
            for (int j = 0; j < g.cols(); ++j) acc.at(n.idx[i], j) += g.at(static_cast<int>(i), j);
        }
        break;
      }
      case Op::Sum: {
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          double s = g[0];
          for (size_t i = 0; i < acc.numel(); ++i) acc[i] += s;
        }
        break;
      }
      case Op::SoftmaxXent: {
        if (tracked(n.a)) {
          Tensor& acc = ensure(n.a);
          double s = g[0];
          for (int j = 0; j < acc.cols(); ++j) {
            double p = n.aux[static_cast<size_t>(j)];
            acc[static_cast<size_t>(j)] += s * (p - (j == n.i0 ? 1.0 : 0.0));
          }
        }
        break;
      }
      case Op::BceLogits: {
        if (tracked(n.a)) {
          const Tensor& lv = val_of(nodes_[n.a]);
          Tensor& acc = ensure(n.a);
          double s = g[0] / static_cast<double>(lv.numel());
          for (size_t j = 0; j < lv.numel(); ++j) {
            double x = lv[j];
            double sig = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
            acc[j] += s * (sig - n.aux[j]);
          }
        }
        break;
      }
    }
  }

  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (!nodes_[i].needs_grad || d[i].empty()) continue;
    Tensor& acc = nodes_[i].grad;
    const Tensor& di = d[i];
    for (size_t j = 0; j < acc.numel(); ++j) acc[j] += di[j];
  }
}

}  // namespace syp
