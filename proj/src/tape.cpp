#include "flowlab/tape.hpp"

#include <cmath>
#include <string>

#include "flowlab/errors.hpp"

namespace flowlab {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2*pi)

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Value Tape::push(Node node) {
  assert_finite(node.value, "tape op");
  nodes_.push_back(std::move(node));
  return Value{static_cast<int>(nodes_.size()) - 1};
}

const Tape::Node& Tape::node(Value v) const {
  require(v.valid() && v.id < static_cast<int>(nodes_.size()), "E_STATE", "invalid tape handle");
  return nodes_[static_cast<std::size_t>(v.id)];
}

Tape::Node& Tape::mutable_node(Value v) {
  return const_cast<Node&>(node(v));
}

const Tensor& Tape::value(Value v) const { return node(v).value; }

Value Tape::leaf(const Tensor& value, Tensor* grad_sink) {
  if (grad_sink != nullptr)
    require(grad_sink->same_shape(value), "E_SHAPE", "leaf gradient slot shape mismatch");
  Node n;
  n.op = Op::kLeaf;
  n.value = value;
  n.sink = grad_sink;
  return push(std::move(n));
}

Value Tape::constant(Tensor value) {
  Node n;
  n.op = Op::kConst;
  n.value = std::move(value);
  return push(std::move(n));
}

Value Tape::constant_scalar(double v) { return constant(Tensor::scalar(v)); }

Value Tape::add(Value a, Value b) { return axpy(1.0, a, 1.0, b); }
Value Tape::sub(Value a, Value b) { return axpy(1.0, a, -1.0, b); }

Value Tape::mul(Value a, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.same_shape(tb), "E_SHAPE", "mul shape mismatch");
  Node n;
  n.op = Op::kMul;
  n.a = a.id;
  n.b = b.id;
  n.value = Tensor(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i) n.value.data[i] = ta.data[i] * tb.data[i];
  return push(std::move(n));
}

Value Tape::axpy(double alpha, Value a, double beta, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.same_shape(tb), "E_SHAPE", "axpy shape mismatch");
  Node n;
  n.op = Op::kAxpy;
  n.a = a.id;
  n.b = b.id;
  n.alpha = alpha;
  n.beta = beta;
  n.value = Tensor(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i)
    n.value.data[i] = alpha * ta.data[i] + beta * tb.data[i];
  return push(std::move(n));
}

Value Tape::scale(Value a, double alpha) {
  const Tensor& ta = value(a);
  Node n;
  n.op = Op::kScale;
  n.a = a.id;
  n.alpha = alpha;
  n.value = Tensor(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i) n.value.data[i] = alpha * ta.data[i];
  return push(std::move(n));
}

Value Tape::affine(Value x, Value w, Value b) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const Tensor& tb = value(b);
  require(tw.rank() == 2, "E_SHAPE", "affine weight must be a matrix");
  const std::size_t k = tw.rows();
  const std::size_t nout = tw.cols();
  require(tb.rank() == 1 && tb.shape[0] == nout, "E_SHAPE", "affine bias shape mismatch");

  Node n;
  n.op = Op::kAffine;
  n.a = x.id;
  n.b = w.id;
  n.c = b.id;
  if (tx.rank() == 1) {
    require(tx.shape[0] == k, "E_SHAPE", "affine inner dimension mismatch");
    n.value = Tensor({nout});
    for (std::size_t j = 0; j < nout; ++j) {
      double acc = tb.data[j];
      for (std::size_t i = 0; i < k; ++i) acc += tx.data[i] * tw.at2(i, j);
      n.value.data[j] = acc;
    }
  } else {
    require(tx.rank() == 2 && tx.cols() == k, "E_SHAPE", "affine inner dimension mismatch");
    const std::size_t m = tx.rows();
    n.value = Tensor({m, nout});
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t j = 0; j < nout; ++j) {
        double acc = tb.data[j];
        for (std::size_t i = 0; i < k; ++i) acc += tx.at2(r, i) * tw.at2(i, j);
        n.value.at2(r, j) = acc;
      }
    }
  }
  return push(std::move(n));
}

Value Tape::tanh(Value a) {
  const Tensor& ta = value(a);
  Node n;
  n.op = Op::kTanh;
  n.a = a.id;
  n.value = Tensor(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i) n.value.data[i] = std::tanh(ta.data[i]);
  return push(std::move(n));
}

Value Tape::silu(Value a) {
  const Tensor& ta = value(a);
  Node n;
  n.op = Op::kSilu;
  n.a = a.id;
  n.value = Tensor(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i) n.value.data[i] = ta.data[i] * sigmoid(ta.data[i]);
  return push(std::move(n));
}

Value Tape::square(Value a) {
  const Tensor& ta = value(a);
  Node n;
  n.op = Op::kSquare;
  n.a = a.id;
  n.value = Tensor(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i) n.value.data[i] = ta.data[i] * ta.data[i];
  return push(std::move(n));
}

Value Tape::exp(Value a) {
  const Tensor& ta = value(a);
  Node n;
  n.op = Op::kExp;
  n.a = a.id;
  n.value = Tensor(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i) n.value.data[i] = std::exp(ta.data[i]);
  return push(std::move(n));
}

Value Tape::log(Value a) {
  const Tensor& ta = value(a);
  Node n;
  n.op = Op::kLog;
  n.a = a.id;
  n.value = Tensor(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i) n.value.data[i] = std::log(ta.data[i]);
  return push(std::move(n));
}

Value Tape::sum(Value a) {
  const Tensor& ta = value(a);
  double acc = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) acc += ta.data[i];
  Node n;
  n.op = Op::kSum;
  n.a = a.id;
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

Value Tape::row_sum(Value a) {
  const Tensor& ta = value(a);
  require(ta.rank() == 2, "E_SHAPE", "row_sum expects a matrix");
  const std::size_t m = ta.rows();
  const std::size_t c = ta.cols();
  Node n;
  n.op = Op::kRowSum;
  n.a = a.id;
  n.value = Tensor({m});
  for (std::size_t r = 0; r < m; ++r) {
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += ta.at2(r, j);
    n.value.data[r] = acc;
  }
  return push(std::move(n));
}

Value Tape::concat(Value a, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  Node n;
  n.op = Op::kConcat;
  n.a = a.id;
  n.b = b.id;
  if (ta.rank() == 1 && tb.rank() == 1) {
    n.value = Tensor({ta.size() + tb.size()});
    for (std::size_t i = 0; i < ta.size(); ++i) n.value.data[i] = ta.data[i];
    for (std::size_t i = 0; i < tb.size(); ++i) n.value.data[ta.size() + i] = tb.data[i];
  } else {
    require(ta.rank() == 2 && tb.rank() == 2 && ta.rows() == tb.rows(), "E_SHAPE",
            "concat expects two vectors or two matrices with equal rows");
    const std::size_t m = ta.rows();
    const std::size_t ca = ta.cols();
    const std::size_t cb = tb.cols();
    n.value = Tensor({m, ca + cb});
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t j = 0; j < ca; ++j) n.value.at2(r, j) = ta.at2(r, j);
      for (std::size_t j = 0; j < cb; ++j) n.value.at2(r, ca + j) = tb.at2(r, j);
    }
  }
  return push(std::move(n));
}

Value Tape::min2(Value a, Value b) {
  const Tensor& ta = value(a);
  const Tensor& tb = value(b);
  require(ta.same_shape(tb), "E_SHAPE", "min2 shape mismatch");
  Node n;
  n.op = Op::kMin2;
  n.a = a.id;
  n.b = b.id;
  n.value = Tensor(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i)
    n.value.data[i] = ta.data[i] <= tb.data[i] ? ta.data[i] : tb.data[i];
  return push(std::move(n));
}

Value Tape::clip(Value a, double lo, double hi) {
  require(lo <= hi, "E_ARG", "clip bounds out of order");
  const Tensor& ta = value(a);
  Node n;
  n.op = Op::kClip;
  n.a = a.id;
  n.alpha = lo;
  n.beta = hi;
  n.value = Tensor(ta.shape);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    double v = ta.data[i];
    n.value.data[i] = v < lo ? lo : (v > hi ? hi : v);
  }
  return push(std::move(n));
}

void Tape::backward(Value root) {
  Node& r = mutable_node(root);
  require(r.value.size() == 1, "E_SHAPE", "backward root must be scalar");

  for (Node& n : nodes_) n.grad = Tensor();
  r.grad = Tensor(r.value.shape);
  r.grad.data[0] = 1.0;

  auto grad_of = [&](int id) -> Tensor& {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0 && n.value.size() != 0) n.grad = Tensor(n.value.shape);
    return n.grad;
  };

  for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) continue;  // unreached by the root
    const Tensor& g = n.grad;
    switch (n.op) {
      case Op::kLeaf:
        if (n.sink != nullptr)
          for (std::size_t i = 0; i < g.size(); ++i) n.sink->data[i] += g.data[i];
        break;
      case Op::kConst:
        break;
      case Op::kMul: {
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        const Tensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
        const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga.data[i] += g.data[i] * vb.data[i];
          gb.data[i] += g.data[i] * va.data[i];
        }
        break;
      }
      case Op::kAxpy: {
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga.data[i] += n.alpha * g.data[i];
          gb.data[i] += n.beta * g.data[i];
        }
        break;
      }
      case Op::kScale: {
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += n.alpha * g.data[i];
        break;
      }
      case Op::kAffine: {
        const Tensor& vx = nodes_[static_cast<std::size_t>(n.a)].value;
        const Tensor& vw = nodes_[static_cast<std::size_t>(n.b)].value;
        Tensor& gx = grad_of(n.a);
        Tensor& gw = grad_of(n.b);
        Tensor& gb = grad_of(n.c);
        const std::size_t k = vw.rows();
        const std::size_t nout = vw.cols();
        if (vx.rank() == 1) {
          for (std::size_t j = 0; j < nout; ++j) {
            const double gj = g.data[j];
            gb.data[j] += gj;
            for (std::size_t i = 0; i < k; ++i) {
              gx.data[i] += gj * vw.at2(i, j);
              gw.at2(i, j) += vx.data[i] * gj;
            }
          }
        } else {
          const std::size_t m = vx.rows();
          for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t j = 0; j < nout; ++j) {
              const double gj = g.at2(r, j);
              gb.data[j] += gj;
              for (std::size_t i = 0; i < k; ++i) {
                gx.at2(r, i) += gj * vw.at2(i, j);
                gw.at2(i, j) += vx.at2(r, i) * gj;
              }
            }
          }
        }
        break;
      }
      case Op::kTanh: {
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i)
          ga.data[i] += g.data[i] * (1.0 - n.value.data[i] * n.value.data[i]);
        break;
      }
      case Op::kSilu: {
        const Tensor& vx = nodes_[static_cast<std::size_t>(n.a)].value;
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double s = sigmoid(vx.data[i]);
          ga.data[i] += g.data[i] * (s + vx.data[i] * s * (1.0 - s));
        }
        break;
      }
      case Op::kSquare: {
        const Tensor& vx = nodes_[static_cast<std::size_t>(n.a)].value;
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += 2.0 * vx.data[i] * g.data[i];
        break;
      }
      case Op::kExp: {
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += n.value.data[i] * g.data[i];
        break;
      }
      case Op::kLog: {
        const Tensor& vx = nodes_[static_cast<std::size_t>(n.a)].value;
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] / vx.data[i];
        break;
      }
      case Op::kSum: {
        Tensor& ga = grad_of(n.a);
        const double g0 = g.data[0];
        for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += g0;
        break;
      }
      case Op::kRowSum: {
        Tensor& ga = grad_of(n.a);
        const std::size_t c = ga.cols();
        for (std::size_t row = 0; row < ga.rows(); ++row)
          for (std::size_t j = 0; j < c; ++j) ga.at2(row, j) += g.data[row];
        break;
      }
      case Op::kConcat: {
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        if (ga.rank() == 1) {
          for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] += g.data[i];
          for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] += g.data[ga.size() + i];
        } else {
          const std::size_t ca = ga.cols();
          const std::size_t cb = gb.cols();
          for (std::size_t r = 0; r < ga.rows(); ++r) {
            for (std::size_t j = 0; j < ca; ++j) ga.at2(r, j) += g.at((r) * (ca + cb) + j);
            for (std::size_t j = 0; j < cb; ++j) gb.at2(r, j) += g.at((r) * (ca + cb) + ca + j);
          }
        }
        break;
      }
      case Op::kMin2: {
        const Tensor& va = nodes_[static_cast<std::size_t>(n.a)].value;
        const Tensor& vb = nodes_[static_cast<std::size_t>(n.b)].value;
        Tensor& ga = grad_of(n.a);
        Tensor& gb = grad_of(n.b);
        for (std::size_t i = 0; i < g.size(); ++i) {
          if (va.data[i] <= vb.data[i])
            ga.data[i] += g.data[i];
          else
            gb.data[i] += g.data[i];
        }
        break;
      }
      case Op::kClip: {
        const Tensor& vx = nodes_[static_cast<std::size_t>(n.a)].value;
        Tensor& ga = grad_of(n.a);
        for (std::size_t i = 0; i < g.size(); ++i)
          if (vx.data[i] >= n.alpha && vx.data[i] <= n.beta) ga.data[i] += g.data[i];
        break;
      }
    }
  }
}

Value gaussian_log_density(Tape& t, Value x, Value mean, double std) {
  require(std > 0.0, "E_ARG", "gaussian_log_density: std must be positive");
  require(t.value(x).same_shape(t.value(mean)), "E_SHAPE", "gaussian_log_density shape mismatch");
  const double n = static_cast<double>(t.value(x).size());
  Value q = t.sum(t.square(t.sub(x, mean)));
  Value base = t.constant_scalar(-0.5 * n * (kLogTwoPi + 2.0 * std::log(std)));
  return t.axpy(-0.5 / (std * std), q, 1.0, base);
}

Value gaussian_log_density_rows(Tape& t, Value x, Value mean, double std) {
  require(std > 0.0, "E_ARG", "gaussian_log_density_rows: std must be positive");
  const Tensor& tx = t.value(x);
  require(tx.rank() == 2 && tx.same_shape(t.value(mean)), "E_SHAPE",
          "gaussian_log_density_rows expects matching matrices");
  const double n = static_cast<double>(tx.cols());
  Value q = t.row_sum(t.square(t.sub(x, mean)));
  Value base = t.constant(Tensor({tx.rows()}, -0.5 * n * (kLogTwoPi + 2.0 * std::log(std))));
  return t.axpy(-0.5 / (std * std), q, 1.0, base);
}

}  // namespace flowlab
