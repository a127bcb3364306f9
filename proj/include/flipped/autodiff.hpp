#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace flipped {

using Mat = Eigen::MatrixXd;
using RowArr = Eigen::Array<double, 1, Eigen::Dynamic>;

/// Reverse-mode autodiff tape over dense double matrices.
///
/// Ops append nodes; backward() runs the recorded closures in reverse
/// creation order, which is a valid topological order because ops can only
/// reference earlier nodes. One tape per forward pass; tapes are cheap and
/// not reused.
class Tape {
 public:
  using Ref = int;

  Ref leaf(Mat v) { return push(std::move(v), nullptr); }
  Ref constant(Mat v) { return push(std::move(v), nullptr); }

  const Mat& value(Ref i) const { return nodes_[i].val; }
  const Mat& grad(Ref i) const { return nodes_[i].grad; }
  double scalar(Ref i) const { return nodes_[i].val(0, 0); }

  Ref add(Ref a, Ref b) {
    Mat y = nodes_[a].val + nodes_[b].val;
    return push(std::move(y), [a, b](Tape& t, const Mat& g) {
      t.nodes_[a].grad += g;
      t.nodes_[b].grad += g;
    });
  }

  /// Sums an arbitrary list of same-shape nodes.
  Ref add_n(std::vector<Ref> parts) {
    if (parts.empty()) throw std::runtime_error("add_n: empty list");
    Mat y = nodes_[parts[0]].val;
    for (std::size_t i = 1; i < parts.size(); ++i) y += nodes_[parts[i]].val;
    return push(std::move(y), [parts](Tape& t, const Mat& g) {
      for (Ref p : parts) t.nodes_[p].grad += g;
    });
  }

  /// Broadcasts a 1 x d row vector over the rows of a.
  Ref add_rowvec(Ref a, Ref row) {
    Mat y = nodes_[a].val.rowwise() + nodes_[row].val.row(0);
    return push(std::move(y), [a, row](Tape& t, const Mat& g) {
      t.nodes_[a].grad += g;
      t.nodes_[row].grad += g.colwise().sum();
    });
  }

  Ref add_const(Ref a, const Mat& c) {
    Mat y = nodes_[a].val + c;
    return push(std::move(y),
                [a](Tape& t, const Mat& g) { t.nodes_[a].grad += g; });
  }

  Ref scale(Ref a, double c) {
    Mat y = c * nodes_[a].val;
    return push(std::move(y),
                [a, c](Tape& t, const Mat& g) { t.nodes_[a].grad += c * g; });
  }

  Ref matmul(Ref a, Ref b) {
    Mat y = nodes_[a].val * nodes_[b].val;
    return push(std::move(y), [a, b](Tape& t, const Mat& g) {
      t.nodes_[a].grad.noalias() += g * t.nodes_[b].val.transpose();
      t.nodes_[b].grad.noalias() += t.nodes_[a].val.transpose() * g;
    });
  }

  /// y = a * b^T
  Ref matmul_nt(Ref a, Ref b) {
    Mat y = nodes_[a].val * nodes_[b].val.transpose();
    return push(std::move(y), [a, b](Tape& t, const Mat& g) {
      t.nodes_[a].grad.noalias() += g * t.nodes_[b].val;
      t.nodes_[b].grad.noalias() += g.transpose() * t.nodes_[a].val;
    });
  }

  Ref slice_cols(Ref a, int j0, int n) {
    Mat y = nodes_[a].val.middleCols(j0, n);
    return push(std::move(y), [a, j0, n](Tape& t, const Mat& g) {
      t.nodes_[a].grad.middleCols(j0, n) += g;
    });
  }

  Ref hconcat(const std::vector<Ref>& parts) {
    Eigen::Index rows = nodes_[parts[0]].val.rows(), cols = 0;
    for (Ref p : parts) cols += nodes_[p].val.cols();
    Mat y(rows, cols);
    Eigen::Index at = 0;
    for (Ref p : parts) {
      y.middleCols(at, nodes_[p].val.cols()) = nodes_[p].val;
      at += nodes_[p].val.cols();
    }
    return push(std::move(y), [parts](Tape& t, const Mat& g) {
      Eigen::Index at = 0;
      for (Ref p : parts) {
        const Eigen::Index n = t.nodes_[p].val.cols();
        t.nodes_[p].grad += g.middleCols(at, n);
        at += n;
      }
    });
  }

  /// Gathers rows of an embedding table: y.row(t) = table.row(ids[t]).
  Ref gather_rows(Ref table, std::vector<int> ids) {
    const Mat& tab = nodes_[table].val;
    Mat y(static_cast<Eigen::Index>(ids.size()), tab.cols());
    for (std::size_t t = 0; t < ids.size(); ++t) y.row(t) = tab.row(ids[t]);
    return push(std::move(y), [table, ids](Tape& t, const Mat& g) {
      for (std::size_t r = 0; r < ids.size(); ++r)
        t.nodes_[table].grad.row(ids[r]) += g.row(r);
    });
  }

  Ref gelu(Ref a) {
    static constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    static constexpr double kA = 0.044715;
    const Mat& x = nodes_[a].val;
    Mat th = (kC * (x.array() + kA * x.array().cube())).tanh().matrix();
    Mat y = (0.5 * x.array() * (1.0 + th.array())).matrix();
    return push(std::move(y), [a, th = std::move(th)](Tape& t, const Mat& g) {
      const Mat& x = t.nodes_[a].val;
      Eigen::ArrayXXd dinner = kC * (1.0 + 3.0 * kA * x.array().square());
      Eigen::ArrayXXd dy =
          0.5 * (1.0 + th.array()) +
          0.5 * x.array() * (1.0 - th.array().square()) * dinner;
      t.nodes_[a].grad.array() += g.array() * dy;
    });
  }

  Ref softmax_rows(Ref a) {
    const Mat& x = nodes_[a].val;
    Mat p(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double m = x.row(r).maxCoeff();
      RowArr e = (x.row(r).array() - m).exp();
      p.row(r) = (e / e.sum()).matrix();
    }
    Ref out = push(std::move(p), nullptr);
    nodes_[out].back = [a, out](Tape& t, const Mat& g) {
      const Mat& p = t.nodes_[out].val;
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double dot = g.row(r).dot(p.row(r));
        t.nodes_[a].grad.row(r).array() +=
            p.row(r).array() * (g.row(r).array() - dot);
      }
    };
    return out;
  }

  /// Per-row layer norm with learned gain/bias (both 1 x d).
  Ref layer_norm_rows(Ref a, Ref gain, Ref bias, double eps = 1e-6) {
    const Mat& x = nodes_[a].val;
    const double n = static_cast<double>(x.cols());
    Mat xhat(x.rows(), x.cols());
    Eigen::ArrayXd inv_std(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double mu = x.row(r).mean();
      const double var = (x.row(r).array() - mu).square().sum() / n;
      inv_std(r) = 1.0 / std::sqrt(var + eps);
      xhat.row(r) = ((x.row(r).array() - mu) * inv_std(r)).matrix();
    }
    Mat y = ((xhat.array().rowwise() * nodes_[gain].val.row(0).array())
                 .rowwise() +
             nodes_[bias].val.row(0).array())
                .matrix();
    return push(std::move(y),
                [a, gain, bias, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](Tape& t, const Mat& g) {
                  const RowArr gr = t.nodes_[gain].val.row(0).array();
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    RowArr gy = g.row(r).array() * gr;  // dL/dxhat
                    const double mean_gy = gy.mean();
                    const double mean_gy_xhat =
                        (gy * xhat.row(r).array()).mean();
                    t.nodes_[a].grad.row(r).array() +=
                        (gy - mean_gy - xhat.row(r).array() * mean_gy_xhat) *
                        inv_std(r);
                  }
                  t.nodes_[gain].grad.row(0).array() +=
                      (g.array() * xhat.array()).colwise().sum();
                  t.nodes_[bias].grad.row(0) += g.colwise().sum();
                });
  }

  /// Per-row log softmax evaluated at the realized target id:
  /// y(t,0) = logits(t, ids[t]) - logsumexp(logits.row(t)).
  Ref log_softmax_pick(Ref logits, std::vector<int> ids) {
    const Mat& x = nodes_[logits].val;
    if (static_cast<Eigen::Index>(ids.size()) != x.rows())
      throw std::runtime_error("log_softmax_pick: id/row count mismatch");
    Mat p(x.rows(), x.cols());
    Mat y(x.rows(), 1);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double m = x.row(r).maxCoeff();
      RowArr e = (x.row(r).array() - m).exp();
      const double z = e.sum();
      p.row(r) = (e / z).matrix();
      y(r, 0) = x(r, ids[r]) - (m + std::log(z));
    }
    return push(std::move(y), [logits, ids = std::move(ids),
                               p = std::move(p)](Tape& t, const Mat& g) {
      Mat& dx = t.nodes_[logits].grad;
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        dx.row(r) -= g(r, 0) * p.row(r);
        dx(r, ids[r]) += g(r, 0);
      }
    });
  }

  /// y = -sum(entries), as 1x1.
  Ref neg_sum(Ref a) {
    Mat y(1, 1);
    y(0, 0) = -nodes_[a].val.sum();
    return push(std::move(y), [a](Tape& t, const Mat& g) {
      t.nodes_[a].grad.array() -= g(0, 0);
    });
  }

  /// Unlikelihood reduction over a column of token log-probs:
  /// y = sum_t -log(1 - p_t) with p_t = exp(lp_t) clamped to <= 1 - eps.
  /// Gradient is zero where the clamp is active.
  Ref unlikelihood_sum(Ref logprobs, double eps) {
    const Mat& lp = nodes_[logprobs].val;
    Mat y(1, 1);
    double acc = 0.0;
    for (Eigen::Index r = 0; r < lp.rows(); ++r) {
      const double p = std::min(std::exp(lp(r, 0)), 1.0 - eps);
      acc += -std::log1p(-p);
    }
    y(0, 0) = acc;
    return push(std::move(y), [logprobs, eps](Tape& t, const Mat& g) {
      const Mat& lp = t.nodes_[logprobs].val;
      Mat& dlp = t.nodes_[logprobs].grad;
      for (Eigen::Index r = 0; r < lp.rows(); ++r) {
        const double p = std::exp(lp(r, 0));
        if (p < 1.0 - eps) dlp(r, 0) += g(0, 0) * p / (1.0 - p);
      }
    });
  }

  /// Seeds d(loss)/d(loss)=1 at a 1x1 node and accumulates gradients into
  /// every node created at or before it.
  void backward(Ref target) {
    if (nodes_[target].val.size() != 1)
      throw std::runtime_error("backward: target must be scalar");
    for (Ref i = 0; i <= target; ++i)
      nodes_[i].grad = Mat::Zero(nodes_[i].val.rows(), nodes_[i].val.cols());
    nodes_[target].grad(0, 0) = 1.0;
    for (Ref i = target; i >= 0; --i) {
      if (nodes_[i].back) nodes_[i].back(*this, nodes_[i].grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void(Tape&, const Mat&)> back;
  };

  Ref push(Mat v, std::function<void(Tape&, const Mat&)> back) {
    nodes_.push_back(Node{std::move(v), Mat(), std::move(back)});
    return static_cast<Ref>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

}  // namespace flipped
