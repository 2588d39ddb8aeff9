#pragma once

// Basic layers with explicit forward/backward passes. Each forward fills a
// small cache struct owned by the caller; backward consumes it and
// accumulates parameter gradients in place.

#include "ladx/nn/param.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace ladx::nn {

template <typename S>
struct Linear {
  Param<S> w;  // in x out
  Param<S> b;  // 1 x out

  void init(int in, int out, Rng& rng, double std_dev = 0.02, bool zero_weights = false) {
    if (zero_weights)
      w.init_constant(in, out, S(0));
    else
      w.init_gaussian(in, out, rng, std_dev);
    b.init_constant(1, out, S(0));
  }

  MatT<S> forward(const MatT<S>& x) const {
    MatT<S> y = x * w.w;
    y.rowwise() += b.w.row(0);
    return y;
  }

  // x must be the tensor passed to forward.
  MatT<S> backward(const MatT<S>& x, const MatT<S>& dy) {
    if (w.trainable) w.g.noalias() += x.transpose() * dy;
    if (b.trainable) b.g.row(0) += dy.colwise().sum();
    return dy * w.w.transpose();
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + ".w", w);
    fn(prefix + ".b", b);
  }
};

template <typename S>
struct LayerNorm {
  Param<S> gamma;  // 1 x d
  Param<S> beta;   // 1 x d
  double eps = 1e-5;

  struct Cache {
    MatT<S> xhat;
    VecT<S> inv_std;
  };

  void init(int d) {
    gamma.init_constant(1, d, S(1));
    beta.init_constant(1, d, S(0));
  }

  MatT<S> forward(const MatT<S>& x, Cache* cache) const {
    VecT<S> mean = x.rowwise().mean();
    MatT<S> centered = x;
    centered.colwise() -= mean;
    VecT<S> var = centered.array().square().rowwise().mean();
    VecT<S> inv_std = (var.array() + S(eps)).rsqrt();
    MatT<S> xhat = centered.array().colwise() * inv_std.array();
    MatT<S> y = (xhat.array().rowwise() * gamma.w.row(0).array()).rowwise() +
                beta.w.row(0).array();
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  MatT<S> backward(const Cache& c, const MatT<S>& dy) {
    if (gamma.trainable)
      gamma.g.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    if (beta.trainable) beta.g.row(0) += dy.colwise().sum();
    MatT<S> dxhat = dy.array().rowwise() * gamma.w.row(0).array();
    VecT<S> m1 = dxhat.rowwise().mean();
    VecT<S> m2 = (dxhat.array() * c.xhat.array()).rowwise().mean();
    MatT<S> dx = (dxhat.array().colwise() - m1.array()) -
                 (c.xhat.array().colwise() * m2.array());
    dx = dx.array().colwise() * c.inv_std.array();
    return dx;
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
  }
};

// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
template <typename S>
MatT<S> gelu(const MatT<S>& x) {
  return x.unaryExpr([](S v) {
    return S(0.5) * v * (S(1) + S(std::erf(double(v) * M_SQRT1_2)));
  });
}

template <typename S>
MatT<S> gelu_backward(const MatT<S>& x, const MatT<S>& dy) {
  MatT<S> dx = x.unaryExpr([](S v) {
    const double xd = double(v);
    const double cdf = 0.5 * (1.0 + std::erf(xd * M_SQRT1_2));
    const double pdf = std::exp(-0.5 * xd * xd) / std::sqrt(2.0 * M_PI);
    return S(cdf + xd * pdf);
  });
  return dx.array() * dy.array();
}

template <typename S>
struct Ffn {
  Linear<S> fc1, fc2;

  struct Cache {
    MatT<S> x, pre, act;
  };

  void init(int dim, int hidden, Rng& rng, double std_dev = 0.02) {
    fc1.init(dim, hidden, rng, std_dev);
    fc2.init(hidden, dim, rng, std_dev);
  }

  MatT<S> forward(const MatT<S>& x, Cache* cache) const {
    MatT<S> pre = fc1.forward(x);
    MatT<S> act = gelu(pre);
    MatT<S> y = fc2.forward(act);
    if (cache) {
      cache->x = x;
      cache->pre = std::move(pre);
      cache->act = std::move(act);
    }
    return y;
  }

  MatT<S> backward(Cache& c, const MatT<S>& dy) {
    MatT<S> dact = fc2.backward(c.act, dy);
    MatT<S> dpre = gelu_backward(c.pre, dact);
    return fc1.backward(c.x, dpre);
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    fc1.visit(prefix + ".fc1", fn);
    fc2.visit(prefix + ".fc2", fn);
  }
};

template <typename S>
struct Embedding {
  Param<S> table;  // V x d

  void init(int vocab, int dim, Rng& rng, double std_dev = 0.02) {
    table.init_gaussian(vocab, dim, rng, std_dev);
  }

  MatT<S> forward(const std::vector<int>& ids) const {
    MatT<S> out(Eigen::Index(ids.size()), table.w.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) out.row(Eigen::Index(i)) = table.w.row(ids[i]);
    return out;
  }

  void backward(const std::vector<int>& ids, const MatT<S>& dy) {
    if (!table.trainable) return;
    for (std::size_t i = 0; i < ids.size(); ++i)
      table.g.row(ids[i]) += dy.row(Eigen::Index(i));
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& fn) {
    fn(prefix + ".table", table);
  }
};

template <typename S>
MatT<S> softmax_rows(MatT<S> x) {
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const S m = x.row(i).maxCoeff();
    x.row(i) = (x.row(i).array() - m).exp();
    x.row(i) /= x.row(i).sum();
  }
  return x;
}

// Mean NLL over all rows. Log-sum-exp runs in double regardless of S.
// When dlogits is non-null it receives (softmax - onehot) / rows.
template <typename S>
double softmax_xent(const MatT<S>& logits, const std::vector<int>& targets,
                    MatT<S>* dlogits) {
  const Eigen::Index rows = logits.rows();
  if (Eigen::Index(targets.size()) != rows)
    throw std::invalid_argument("softmax_xent: target count mismatch");
  if (dlogits) dlogits->resize(rows, logits.cols());
  double total = 0.0;
  const double inv_rows = 1.0 / double(rows);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Eigen::VectorXd row = logits.row(i).transpose().template cast<double>();
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row(targets[std::size_t(i)]);
    if (dlogits) {
      Eigen::VectorXd p = (row.array() - lse).exp();
      p(targets[std::size_t(i)]) -= 1.0;
      dlogits->row(i) = (p * inv_rows).transpose().template cast<S>();
    }
  }
  return total * inv_rows;
}

}  // namespace ladx::nn
