#include "pcae/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace pcae::ad {

const Matrix& Var::value() const { return graph->value(*this); }

Var Graph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::parameter(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var{this, it->second};
  Node n;
  n.param_value = &p.value;
  if (!p.frozen) {
    n.param = &p;
    n.requires_grad = true;
  }
  nodes_.push_back(std::move(n));
  int id = static_cast<int>(nodes_.size()) - 1;
  bound_.emplace(&p, id);
  return Var{this, id};
}

Var Graph::record(Matrix value, const std::vector<Var>& inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (const Var& v : inputs) {
    if (v.graph != this) throw std::logic_error("autodiff: mixing graphs");
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Graph::backward(Var loss) {
  if (value(loss).size() != 1) throw std::logic_error("autodiff: backward needs a scalar");
  if (!nodes_[loss.id].requires_grad) return;
  nodes_[loss.id].grad = Matrix::Ones(1, 1);
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) {
      Parameter& p = *n.param;
      if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) {
        p.grad = Matrix::Zero(p.value.rows(), p.value.cols());
      }
      p.grad += n.grad;
    }
  }
}

namespace {

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("autodiff: shape mismatch in ") + op);
  }
}

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var add(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "add");
  return a.graph->record(a.value() + b.value(), {a, b}, [a, b](Graph& g, const Matrix& up) {
    g.accumulate(a, up);
    g.accumulate(b, up);
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "sub");
  return a.graph->record(a.value() - b.value(), {a, b}, [a, b](Graph& g, const Matrix& up) {
    g.accumulate(a, up);
    g.accumulate(b, -up);
  });
}

Var mul(Var a, Var b) {
  check_same_shape(a.value(), b.value(), "mul");
  return a.graph->record(a.value().cwiseProduct(b.value()), {a, b},
                         [a, b](Graph& g, const Matrix& up) {
                           if (g.requires_grad(a)) g.accumulate(a, up.cwiseProduct(g.value(b)));
                           if (g.requires_grad(b)) g.accumulate(b, up.cwiseProduct(g.value(a)));
                         });
}

Var scale(Var a, double s) {
  return a.graph->record(a.value() * s, {a},
                         [a, s](Graph& g, const Matrix& up) { g.accumulate(a, up * s); });
}

Var add_scalar(Var a, double s) {
  return a.graph->record(a.value().array() + s, {a},
                         [a](Graph& g, const Matrix& up) { g.accumulate(a, up); });
}

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("autodiff: shape mismatch in matmul");
  Matrix out = a.value() * b.value();
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& up) {
    if (g.requires_grad(a)) g.accumulate(a, up * g.value(b).transpose());
    if (g.requires_grad(b)) g.accumulate(b, g.value(a).transpose() * up);
  });
}

Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw std::invalid_argument("autodiff: shape mismatch in add_row");
  }
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.graph->record(std::move(out), {a, row}, [a, row](Graph& g, const Matrix& up) {
    g.accumulate(a, up);
    if (g.requires_grad(row)) g.accumulate(row, up.colwise().sum());
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("autodiff: concat of nothing");
  Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("autodiff: shape mismatch in concat_cols");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().graph->record(std::move(out), parts, [parts](Graph& g, const Matrix& up) {
    Eigen::Index offset = 0;
    for (const Var& p : parts) {
      Eigen::Index c = g.value(p).cols();
      if (g.requires_grad(p)) g.accumulate(p, up.middleCols(offset, c));
      offset += c;
    }
  });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("autodiff: concat of nothing");
  Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("autodiff: shape mismatch in concat_rows");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Eigen::Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return parts.front().graph->record(std::move(out), parts, [parts](Graph& g, const Matrix& up) {
    Eigen::Index offset = 0;
    for (const Var& p : parts) {
      Eigen::Index r = g.value(p).rows();
      if (g.requires_grad(p)) g.accumulate(p, up.middleRows(offset, r));
      offset += r;
    }
  });
}

Var slice_cols(Var a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    throw std::invalid_argument("autodiff: slice out of range");
  }
  Matrix out = a.value().middleCols(start, count);
  return a.graph->record(std::move(out), {a}, [a, start, count](Graph& g, const Matrix& up) {
    Matrix full = Matrix::Zero(up.rows(), g.value(a).cols());
    full.middleCols(start, count) = up;
    g.accumulate(a, full);
  });
}

Var gather_rows(Var table, const std::vector<int>& ids) {
  const Matrix& t = table.value();
  Matrix out(static_cast<Eigen::Index>(ids.size()), t.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= t.rows()) throw std::out_of_range("autodiff: gather index");
    out.row(static_cast<Eigen::Index>(r)) = t.row(ids[r]);
  }
  return table.graph->record(std::move(out), {table}, [table, ids](Graph& g, const Matrix& up) {
    Matrix full = Matrix::Zero(g.value(table).rows(), g.value(table).cols());
    for (std::size_t r = 0; r < ids.size(); ++r) full.row(ids[r]) += up.row(static_cast<Eigen::Index>(r));
    g.accumulate(table, full);
  });
}

Var select_rows(Var a, Var b, const std::vector<bool>& take_a) {
  check_same_shape(a.value(), b.value(), "select_rows");
  if (static_cast<Eigen::Index>(take_a.size()) != a.rows()) {
    throw std::invalid_argument("autodiff: select_rows mask size");
  }
  Matrix out = b.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    if (take_a[r]) out.row(r) = a.value().row(r);
  }
  return a.graph->record(std::move(out), {a, b}, [a, b, take_a](Graph& g, const Matrix& up) {
    Matrix ga = Matrix::Zero(up.rows(), up.cols());
    Matrix gb = up;
    for (Eigen::Index r = 0; r < up.rows(); ++r) {
      if (take_a[r]) {
        ga.row(r) = up.row(r);
        gb.row(r).setZero();
      }
    }
    g.accumulate(a, ga);
    g.accumulate(b, gb);
  });
}

Var tanh(Var a) {
  Matrix out = a.value().array().tanh();
  return a.graph->record(out, {a}, [a, out](Graph& g, const Matrix& up) {
    g.accumulate(a, (up.array() * (1.0 - out.array().square())).matrix());
  });
}

Var sigmoid(Var a) {
  Matrix out = a.value().unaryExpr(&logistic);
  return a.graph->record(out, {a}, [a, out](Graph& g, const Matrix& up) {
    g.accumulate(a, (up.array() * out.array() * (1.0 - out.array())).matrix());
  });
}

Var exp(Var a) {
  Matrix out = a.value().array().exp();
  return a.graph->record(out, {a}, [a, out](Graph& g, const Matrix& up) {
    g.accumulate(a, up.cwiseProduct(out));
  });
}

Var softplus(Var a) {
  Matrix out = a.value().unaryExpr(&stable_softplus);
  return a.graph->record(std::move(out), {a}, [a](Graph& g, const Matrix& up) {
    g.accumulate(a, up.cwiseProduct(g.value(a).unaryExpr(&logistic)));
  });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.graph->record(std::move(out), {a}, [a](Graph& g, const Matrix& up) {
    g.accumulate(a, Matrix::Constant(g.value(a).rows(), g.value(a).cols(), up(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("autodiff: mean of empty matrix");
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return a.graph->record(std::move(out), {a}, [a, n](Graph& g, const Matrix& up) {
    g.accumulate(a, Matrix::Constant(g.value(a).rows(), g.value(a).cols(), up(0, 0) / n));
  });
}

Var lstm_cell(Var gates, Var c_prev) {
  const Eigen::Index h = c_prev.cols();
  if (gates.cols() != 4 * h || gates.rows() != c_prev.rows()) {
    throw std::invalid_argument("autodiff: shape mismatch in lstm_cell");
  }
  const Matrix& z = gates.value();
  Matrix i = z.middleCols(0, h).unaryExpr(&logistic);
  Matrix f = z.middleCols(h, h).unaryExpr(&logistic);
  Matrix gg = z.middleCols(2 * h, h).array().tanh();
  Matrix o = z.middleCols(3 * h, h).unaryExpr(&logistic);
  Matrix c = f.cwiseProduct(c_prev.value()) + i.cwiseProduct(gg);
  Matrix tc = c.array().tanh();
  Matrix out(z.rows(), 2 * h);
  out.leftCols(h) = o.cwiseProduct(tc);
  out.rightCols(h) = c;
  return gates.graph->record(
      std::move(out), {gates, c_prev},
      [gates, c_prev, h, i = std::move(i), f = std::move(f), gg = std::move(gg), o = std::move(o),
       tc = std::move(tc)](Graph& g, const Matrix& up) {
        auto dh = up.leftCols(h).array();
        Eigen::ArrayXXd dc = up.rightCols(h).array() + dh * o.array() * (1.0 - tc.array().square());
        Matrix dz(up.rows(), 4 * h);
        dz.middleCols(0, h) = (dc * gg.array() * i.array() * (1.0 - i.array())).matrix();
        dz.middleCols(h, h) =
            (dc * g.value(c_prev).array() * f.array() * (1.0 - f.array())).matrix();
        dz.middleCols(2 * h, h) = (dc * i.array() * (1.0 - gg.array().square())).matrix();
        dz.middleCols(3 * h, h) = (dh * tc.array() * o.array() * (1.0 - o.array())).matrix();
        g.accumulate(gates, dz);
        if (g.requires_grad(c_prev)) g.accumulate(c_prev, (dc * f.array()).matrix());
      });
}

Var softmax_cross_entropy(Var logits, const std::vector<int>& targets, int ignore) {
  const Matrix& x = logits.value();
  if (static_cast<Eigen::Index>(targets.size()) != x.rows()) {
    throw std::invalid_argument("autodiff: cross entropy target count");
  }
  Matrix probs(x.rows(), x.cols());
  double total = 0.0;
  int counted = 0;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    if (targets[r] == ignore) continue;
    if (targets[r] < 0 || targets[r] >= x.cols()) throw std::out_of_range("autodiff: target id");
    double m = x.row(r).maxCoeff();
    Eigen::RowVectorXd e = (x.row(r).array() - m).exp();
    double z = e.sum();
    probs.row(r) = e / z;
    total += m + std::log(z) - x(r, targets[r]);
    ++counted;
  }
  Matrix out(1, 1);
  out(0, 0) = counted > 0 ? total / counted : 0.0;
  return logits.graph->record(
      std::move(out), {logits},
      [logits, targets, ignore, counted, probs = std::move(probs)](Graph& g, const Matrix& up) {
        if (counted == 0) return;
        Matrix d = Matrix::Zero(probs.rows(), probs.cols());
        const double s = up(0, 0) / counted;
        for (Eigen::Index r = 0; r < probs.rows(); ++r) {
          if (targets[r] == ignore) continue;
          d.row(r) = probs.row(r) * s;
          d(r, targets[r]) -= s;
        }
        g.accumulate(logits, d);
      });
}

Var pairwise_sqdist(Var a, Var b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("autodiff: shape mismatch in pairwise_sqdist");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix out(av.rows(), bv.rows());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    for (Eigen::Index j = 0; j < bv.rows(); ++j) out(i, j) = (av.row(i) - bv.row(j)).squaredNorm();
  }
  return a.graph->record(std::move(out), {a, b}, [a, b](Graph& g, const Matrix& up) {
    const Matrix& av = g.value(a);
    const Matrix& bv = g.value(b);
    if (g.requires_grad(a)) {
      Vector rs = up.rowwise().sum();
      g.accumulate(a, 2.0 * (rs.asDiagonal() * av - up * bv));
    }
    if (g.requires_grad(b)) {
      Vector cs = up.colwise().sum().transpose();
      g.accumulate(b, 2.0 * (cs.asDiagonal() * bv - up.transpose() * av));
    }
  });
}

}  // namespace pcae::ad
