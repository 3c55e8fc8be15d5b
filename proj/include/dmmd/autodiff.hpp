#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dmmd/tensor.hpp"

namespace dmmd {

// Handle into a Tape. Cheap to copy; only meaningful together with the tape
// that produced it.
struct Value {
  std::size_t index = static_cast<std::size_t>(-1);
};

namespace detail {
// Squared-distance floor used when dividing by a pairwise distance in the
// backward pass; at exactly coincident points the subgradient is the zero
// vector.
inline constexpr double kDistanceEps = 1e-16;
}  // namespace detail

// Reverse-mode tape. Nodes are stored in creation order, which is a valid
// topological order, so backward() is a single reverse sweep. One tape per
// graph; construction and backward are single-threaded.
class Tape {
  enum class Op {
    leaf,
    add,
    add_row_vector,
    subtract,
    scale,
    shift,
    matmul,
    relu,
    exp_op,
    log_op,
    sqrt_op,
    square,
    sum,
    mean,
    log_softmax,
    gather,
    row_l2_norm,
    pairwise_distances,
    gaussian_mmd,
  };

  struct Node {
    Op op;
    Tensor value;
    Tensor grad;
    std::size_t a = npos;
    std::size_t b = npos;
    double scalar = 0.0;
    bool swapped = false;                // gaussian_mmd canonical argument order
    std::vector<std::size_t> indices;    // gather targets
    std::vector<double> bandwidths;      // gaussian_mmd
  };

 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  Value leaf(Tensor t) {
    detail::check(t.all_finite(), "leaf tensor contains non-finite values");
    return push(Op::leaf, std::move(t), npos, npos);
  }

  Value constant(double v) { return leaf(Tensor::scalar(v)); }

  Value add(Value x, Value y) {
    const Tensor& xv = value(x);
    const Tensor& yv = value(y);
    detail::require(xv.same_shape(yv), "add: shape mismatch " +
                                           xv.shape_string() + " vs " +
                                           yv.shape_string());
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += yv[i];
    return push(Op::add, std::move(out), x.index, y.index);
  }

  // matrix + row vector, broadcast across rows (bias addition)
  Value add_row_vector(Value m, Value v) {
    const Tensor& mv = value(m);
    const Tensor& vv = value(v);
    detail::require(mv.rank() == 2 && vv.rank() == 1 && vv.size() == mv.cols(),
                    "add_row_vector: need KxN matrix and length-N vector");
    Tensor out = mv;
    for (std::size_t r = 0; r < mv.rows(); ++r)
      for (std::size_t c = 0; c < mv.cols(); ++c) out(r, c) += vv[c];
    return push(Op::add_row_vector, std::move(out), m.index, v.index);
  }

  Value subtract(Value x, Value y) {
    const Tensor& xv = value(x);
    const Tensor& yv = value(y);
    detail::require(xv.same_shape(yv), "subtract: shape mismatch " +
                                           xv.shape_string() + " vs " +
                                           yv.shape_string());
    Tensor out = xv;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= yv[i];
    return push(Op::subtract, std::move(out), x.index, y.index);
  }

  Value scale(Value x, double c) {
    Tensor out = value(x);
    for (double& v : out.data()) v *= c;
    Value r = push(Op::scale, std::move(out), x.index, npos);
    nodes_[r.index].scalar = c;
    return r;
  }

  Value shift(Value x, double c) {
    Tensor out = value(x);
    for (double& v : out.data()) v += c;
    Value r = push(Op::shift, std::move(out), x.index, npos);
    nodes_[r.index].scalar = c;
    return r;
  }

  Value matmul(Value x, Value y) {
    const Tensor& a = value(x);
    const Tensor& b = value(y);
    detail::require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(),
                    "matmul: incompatible shapes " + a.shape_string() + " * " +
                        b.shape_string());
    Tensor out({a.rows(), b.cols()});
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t k = 0; k < a.cols(); ++k) {
        double aik = a(i, k);
        if (aik == 0.0) continue;
        for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
      }
    return push(Op::matmul, std::move(out), x.index, y.index);
  }

  Value relu(Value x) {
    Tensor out = value(x);
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    return push(Op::relu, std::move(out), x.index, npos);
  }

  Value exp(Value x) {
    Tensor out = value(x);
    for (double& v : out.data()) v = std::exp(v);
    return push(Op::exp_op, std::move(out), x.index, npos);
  }

  Value log(Value x) {
    Tensor out = value(x);
    for (double& v : out.data()) v = std::log(v);
    return push(Op::log_op, std::move(out), x.index, npos);
  }

  Value sqrt(Value x) {
    Tensor out = value(x);
    for (double& v : out.data()) v = std::sqrt(v);
    return push(Op::sqrt_op, std::move(out), x.index, npos);
  }

  Value square(Value x) {
    Tensor out = value(x);
    for (double& v : out.data()) v = v * v;
    return push(Op::square, std::move(out), x.index, npos);
  }

  Value sum(Value x) {
    double s = 0.0;
    for (double v : value(x).data()) s += v;
    return push(Op::sum, Tensor::scalar(s), x.index, npos);
  }

  Value mean(Value x) {
    detail::require(value(x).size() > 0, "mean of empty tensor");
    double s = 0.0;
    for (double v : value(x).data()) s += v;
    return push(Op::mean, Tensor::scalar(s / static_cast<double>(value(x).size())),
                x.index, npos);
  }

  // Row-wise log(softmax) computed through the shifted log-sum-exp, so large
  // logits cannot overflow.
  Value log_softmax(Value x) {
    const Tensor& in = value(x);
    detail::require(in.rank() == 2, "log_softmax: rank-2 input required");
    Tensor out = in;
    for (std::size_t r = 0; r < in.rows(); ++r) {
      double hi = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < in.cols(); ++c) hi = std::max(hi, in(r, c));
      double lse = 0.0;
      for (std::size_t c = 0; c < in.cols(); ++c) lse += std::exp(in(r, c) - hi);
      lse = hi + std::log(lse);
      for (std::size_t c = 0; c < in.cols(); ++c) out(r, c) = in(r, c) - lse;
    }
    return push(Op::log_softmax, std::move(out), x.index, npos);
  }

  // Select flat indices into a 1-D result; backward scatter-adds.
  Value gather(Value x, std::vector<std::size_t> indices) {
    const Tensor& in = value(x);
    Tensor out({indices.size()});
    for (std::size_t i = 0; i < indices.size(); ++i) {
      detail::require(indices[i] < in.size(), "gather: index out of range");
      out[i] = in[indices[i]];
    }
    Value r = push(Op::gather, std::move(out), x.index, npos);
    nodes_[r.index].indices = std::move(indices);
    return r;
  }

  Value row_l2_norm(Value x) {
    const Tensor& in = value(x);
    detail::require(in.rank() == 2, "row_l2_norm: rank-2 input required");
    Tensor out({in.rows()});
    for (std::size_t r = 0; r < in.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < in.cols(); ++c) s += in(r, c) * in(r, c);
      out[r] = s > 0.0 ? std::sqrt(s) : 0.0;
    }
    return push(Op::row_l2_norm, std::move(out), x.index, npos);
  }

  // All-pairs Euclidean distances between rows: KxF -> KxK with zero
  // diagonal. Exactly coincident rows give distance 0 and zero gradient.
  Value pairwise_distances(Value x) {
    const Tensor& in = value(x);
    detail::require(in.rank() == 2 && in.rows() >= 1,
                    "pairwise_distances: nonempty rank-2 input required");
    std::size_t k = in.rows(), f = in.cols();
    Tensor out({k, k});
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i + 1; j < k; ++j) {
        double s = 0.0;
        for (std::size_t c = 0; c < f; ++c) {
          double d = in(i, c) - in(j, c);
          s += d * d;
        }
        double dist = s > 0.0 ? std::sqrt(s) : 0.0;
        out(i, j) = dist;
        out(j, i) = dist;
      }
    return push(Op::pairwise_distances, std::move(out), x.index, npos);
  }

  // Biased V-statistic MMD with a sum of Gaussian kernels
  //   (1/n^2) sum k(a_i,a_j) + (1/m^2) sum k(b_i,b_j) - (2/nm) sum k(a_i,b_j)
  // with diagonal terms included. Samples are rows (rank-2) or scalars
  // (rank-1). Arguments are canonically ordered internally so that
  // mmd(a, b) == mmd(b, a) bit-exactly.
  Value gaussian_mmd(Value a, Value b, std::vector<double> bandwidths) {
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    detail::require(!bandwidths.empty(), "gaussian_mmd: at least one bandwidth");
    for (double s : bandwidths)
      detail::require(s > 0.0, "gaussian_mmd: bandwidths must be positive");
    detail::require(av.size() > 0 && bv.size() > 0, "gaussian_mmd: empty input");
    detail::require(sample_dim(av) == sample_dim(bv),
                    "gaussian_mmd: sample dimensions differ");

    bool swapped = mmd_should_swap(av, bv);
    const Tensor& first = swapped ? bv : av;
    const Tensor& second = swapped ? av : bv;
    double v = mmd_forward(first, second, bandwidths);

    Value r = push(Op::gaussian_mmd, Tensor::scalar(v), a.index, b.index);
    nodes_[r.index].bandwidths = std::move(bandwidths);
    nodes_[r.index].swapped = swapped;
    return r;
  }

  const Tensor& value(Value v) const { return nodes_[v.index].value; }

  const Tensor& grad(Value v) const { return nodes_[v.index].grad; }

  double scalar_value(Value v) const {
    detail::require(value(v).size() == 1, "scalar_value: tensor is not scalar");
    return value(v)[0];
  }

  std::size_t node_count() const { return nodes_.size(); }

  // Populates the gradient of every node with d(root)/d(node). Gradients are
  // re-zeroed first, so repeated calls are idempotent.
  void backward(Value root) {
    detail::require(value(root).size() == 1,
                    "backward: root must be scalar, got shape " +
                        value(root).shape_string());
    for (Node& n : nodes_) {
      n.grad = Tensor(n.value.shape());
    }
    nodes_[root.index].grad[0] = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      propagate(nodes_[i]);
    }
  }

 private:
  static std::size_t sample_dim(const Tensor& t) {
    return t.rank() == 2 ? t.cols() : 1;
  }
  static std::size_t sample_count(const Tensor& t) {
    return t.rank() == 2 ? t.rows() : t.size();
  }

  static bool mmd_should_swap(const Tensor& a, const Tensor& b) {
    if (sample_count(a) != sample_count(b))
      return sample_count(b) < sample_count(a);
    return b.data() < a.data();
  }

  static double mmd_kernel_sum(const double* x, const double* y, std::size_t d,
                               const std::vector<double>& sigmas) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      double diff = x[c] - y[c];
      s += diff * diff;
    }
    double k = 0.0;
    for (double sigma : sigmas) k += std::exp(-s / (2.0 * sigma * sigma));
    return k;
  }

  // Weight for the gradient: sum_sigma k_sigma / sigma^2.
  static double mmd_kernel_weight(const double* x, const double* y,
                                  std::size_t d,
                                  const std::vector<double>& sigmas) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      double diff = x[c] - y[c];
      s += diff * diff;
    }
    double w = 0.0;
    for (double sigma : sigmas) {
      double s2 = sigma * sigma;
      w += std::exp(-s / (2.0 * s2)) / s2;
    }
    return w;
  }

  static double mmd_forward(const Tensor& a, const Tensor& b,
                            const std::vector<double>& sigmas) {
    std::size_t n = sample_count(a), m = sample_count(b), d = sample_dim(a);
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    double taa = 0.0, tbb = 0.0, tab = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        taa += mmd_kernel_sum(ap + i * d, ap + j * d, d, sigmas);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j)
        tbb += mmd_kernel_sum(bp + i * d, bp + j * d, d, sigmas);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        tab += mmd_kernel_sum(ap + i * d, bp + j * d, d, sigmas);
    double nn = static_cast<double>(n), mm = static_cast<double>(m);
    // Grouped so that identical inputs cancel to exactly zero.
    return taa / (nn * nn) + tbb / (mm * mm) - 2.0 * (tab / (nn * mm));
  }

  static void mmd_backward(const Tensor& a, const Tensor& b,
                           const std::vector<double>& sigmas, double g,
                           Tensor& ga, Tensor& gb) {
    std::size_t n = sample_count(a), m = sample_count(b), d = sample_dim(a);
    const double* ap = a.data().data();
    const double* bp = b.data().data();
    double* gap = ga.data().data();
    double* gbp = gb.data().data();
    double nn = static_cast<double>(n), mm = static_cast<double>(m);
    double ca = 2.0 * g / (nn * nn);
    double cb = 2.0 * g / (mm * mm);
    double cx = 2.0 * g / (nn * mm);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        double w = mmd_kernel_weight(ap + i * d, ap + j * d, d, sigmas);
        for (std::size_t c = 0; c < d; ++c)
          gap[i * d + c] -= ca * w * (ap[i * d + c] - ap[j * d + c]);
      }
      for (std::size_t j = 0; j < m; ++j) {
        double w = mmd_kernel_weight(ap + i * d, bp + j * d, d, sigmas);
        for (std::size_t c = 0; c < d; ++c)
          gap[i * d + c] += cx * w * (ap[i * d + c] - bp[j * d + c]);
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        if (i == j) continue;
        double w = mmd_kernel_weight(bp + i * d, bp + j * d, d, sigmas);
        for (std::size_t c = 0; c < d; ++c)
          gbp[i * d + c] -= cb * w * (bp[i * d + c] - bp[j * d + c]);
      }
      for (std::size_t j = 0; j < n; ++j) {
        double w = mmd_kernel_weight(bp + i * d, ap + j * d, d, sigmas);
        for (std::size_t c = 0; c < d; ++c)
          gbp[i * d + c] += cx * w * (bp[i * d + c] - ap[j * d + c]);
      }
    }
  }

  Value push(Op op, Tensor value, std::size_t a, std::size_t b) {
    detail::check(value.all_finite(), "non-finite value produced by forward op");
    Node n;
    n.op = op;
    n.value = std::move(value);
    n.a = a;
    n.b = b;
    nodes_.push_back(std::move(n));
    return Value{nodes_.size() - 1};
  }

  void propagate(Node& n) {
    switch (n.op) {
      case Op::leaf:
        return;
      case Op::add: {
        Tensor& ga = nodes_[n.a].grad;
        Tensor& gb = nodes_[n.b].grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          ga[i] += n.grad[i];
          gb[i] += n.grad[i];
        }
        return;
      }
      case Op::add_row_vector: {
        Tensor& gm = nodes_[n.a].grad;
        Tensor& gv = nodes_[n.b].grad;
        std::size_t rows = n.value.rows(), cols = n.value.cols();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            gm(r, c) += n.grad(r, c);
            gv[c] += n.grad(r, c);
          }
        return;
      }
      case Op::subtract: {
        Tensor& ga = nodes_[n.a].grad;
        Tensor& gb = nodes_[n.b].grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
          ga[i] += n.grad[i];
          gb[i] -= n.grad[i];
        }
        return;
      }
      case Op::scale: {
        Tensor& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          ga[i] += n.scalar * n.grad[i];
        return;
      }
      case Op::shift: {
        Tensor& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i) ga[i] += n.grad[i];
        return;
      }
      case Op::matmul: {
        const Tensor& a = nodes_[n.a].value;
        const Tensor& b = nodes_[n.b].value;
        Tensor& ga = nodes_[n.a].grad;
        Tensor& gb = nodes_[n.b].grad;
        // dA += G * B^T ; dB += A^T * G
        for (std::size_t i = 0; i < a.rows(); ++i)
          for (std::size_t j = 0; j < b.cols(); ++j) {
            double g = n.grad(i, j);
            if (g == 0.0) continue;
            for (std::size_t k = 0; k < a.cols(); ++k) {
              ga(i, k) += g * b(k, j);
              gb(k, j) += a(i, k) * g;
            }
          }
        return;
      }
      case Op::relu: {
        const Tensor& x = nodes_[n.a].value;
        Tensor& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          if (x[i] > 0.0) ga[i] += n.grad[i];
        return;
      }
      case Op::exp_op: {
        Tensor& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          ga[i] += n.grad[i] * n.value[i];
        return;
      }
      case Op::log_op: {
        const Tensor& x = nodes_[n.a].value;
        Tensor& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          ga[i] += n.grad[i] / x[i];
        return;
      }
      case Op::sqrt_op: {
        Tensor& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          ga[i] += n.grad[i] * 0.5 / n.value[i];
        return;
      }
      case Op::square: {
        const Tensor& x = nodes_[n.a].value;
        Tensor& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < n.grad.size(); ++i)
          ga[i] += 2.0 * x[i] * n.grad[i];
        return;
      }
      case Op::sum: {
        Tensor& ga = nodes_[n.a].grad;
        double g = n.grad[0];
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        return;
      }
      case Op::mean: {
        Tensor& ga = nodes_[n.a].grad;
        double g = n.grad[0] / static_cast<double>(ga.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
        return;
      }
      case Op::log_softmax: {
        Tensor& ga = nodes_[n.a].grad;
        std::size_t rows = n.value.rows(), cols = n.value.cols();
        for (std::size_t r = 0; r < rows; ++r) {
          double rowsum = 0.0;
          for (std::size_t c = 0; c < cols; ++c) rowsum += n.grad(r, c);
          for (std::size_t c = 0; c < cols; ++c)
            ga(r, c) += n.grad(r, c) - std::exp(n.value(r, c)) * rowsum;
        }
        return;
      }
      case Op::gather: {
        Tensor& ga = nodes_[n.a].grad;
        for (std::size_t i = 0; i < n.indices.size(); ++i)
          ga[n.indices[i]] += n.grad[i];
        return;
      }
      case Op::row_l2_norm: {
        const Tensor& x = nodes_[n.a].value;
        Tensor& ga = nodes_[n.a].grad;
        for (std::size_t r = 0; r < x.rows(); ++r) {
          double norm = n.value[r];
          if (norm * norm < detail::kDistanceEps) continue;
          double g = n.grad[r] / norm;
          for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) += g * x(r, c);
        }
        return;
      }
      case Op::pairwise_distances: {
        const Tensor& x = nodes_[n.a].value;
        Tensor& ga = nodes_[n.a].grad;
        std::size_t k = x.rows(), f = x.cols();
        for (std::size_t i = 0; i < k; ++i)
          for (std::size_t j = i + 1; j < k; ++j) {
            double dist = n.value(i, j);
            if (dist * dist < detail::kDistanceEps) continue;
            double g = (n.grad(i, j) + n.grad(j, i)) / dist;
            if (g == 0.0) continue;
            for (std::size_t c = 0; c < f; ++c) {
              double diff = x(i, c) - x(j, c);
              ga(i, c) += g * diff;
              ga(j, c) -= g * diff;
            }
          }
        return;
      }
      case Op::gaussian_mmd: {
        const Tensor& av = nodes_[n.a].value;
        const Tensor& bv = nodes_[n.b].value;
        Tensor& ga = nodes_[n.a].grad;
        Tensor& gb = nodes_[n.b].grad;
        double g = n.grad[0];
        if (g == 0.0) return;
        if (n.swapped)
          mmd_backward(bv, av, n.bandwidths, g, gb, ga);
        else
          mmd_backward(av, bv, n.bandwidths, g, ga, gb);
        return;
      }
    }
  }

  // deque keeps node references stable while the graph grows, so callers may
  // hold value(v) references across op creation
  std::deque<Node> nodes_;
};

// Max relative gradient error of a scalar-valued graph builder against
// central finite differences: max_i |analytic_i - numeric_i| /
// max(1, |analytic_i|).
template <typename BuildFn>
double gradient_check(BuildFn&& build, const Tensor& point, double step) {
  detail::require(step > 0.0, "gradient_check: step must be positive");
  Tape tape;
  Value x = tape.leaf(point);
  Value root = build(tape, x);
  tape.backward(root);
  Tensor analytic = tape.grad(x);

  double worst = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) {
    Tensor hi = point, lo = point;
    hi[i] += step;
    lo[i] -= step;
    Tape th, tl;
    double fh = th.scalar_value(build(th, th.leaf(hi)));
    double fl = tl.scalar_value(build(tl, tl.leaf(lo)));
    double numeric = (fh - fl) / (2.0 * step);
    double err = std::abs(analytic[i] - numeric) /
                 std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace dmmd
