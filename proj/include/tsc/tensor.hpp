#pragma once

// Minimal tape-based reverse-mode autodiff over Eigen matrices.
//
// A Graph is built once per loss evaluation: leaves are constants or bound
// parameters, interior nodes carry values plus backward closures that pull
// the node's gradient into its inputs. backward() seeds a scalar root and
// sweeps the tape in reverse; gradients of bound parameters are accumulated
// into their ParamTensor::grad.
//
// Column convention: feature vectors are columns; a batch of per-agent
// observations is a [features x agents*batch] matrix.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tsc::nn {

using Mat = Eigen::MatrixXd;

struct ParamTensor {
  std::string name;
  Mat value;
  Mat grad;  // same shape as value, accumulated by Graph::backward

  ParamTensor() = default;
  ParamTensor(std::string n, Mat v)
      : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}
};

class Graph {
 public:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    ParamTensor* param = nullptr;
    std::function<void(Graph&, int)> backward;
  };

  int add_const(Mat v) {
    Node n;
    n.value = std::move(v);
    return push(std::move(n));
  }

  int add_param(ParamTensor& p) {
    Node n;
    n.value = p.value;
    n.requires_grad = true;
    n.param = &p;
    return push(std::move(n));
  }

  const Mat& value(int i) const { return nodes_.at(static_cast<size_t>(i)).value; }
  const Mat& grad(int i) const { return nodes_.at(static_cast<size_t>(i)).grad; }

  int add(int a, int b) {
    check_same_shape(a, b, "add");
    Node n;
    n.value = nodes_[a].value + nodes_[b].value;
    attach(n, a, b, [a, b](Graph& g, int s) {
      const Mat& G = g.nodes_[s].grad;
      if (g.nodes_[a].requires_grad) g.nodes_[a].grad += G;
      if (g.nodes_[b].requires_grad) g.nodes_[b].grad += G;
    });
    return push(std::move(n));
  }

  int sub(int a, int b) {
    check_same_shape(a, b, "sub");
    Node n;
    n.value = nodes_[a].value - nodes_[b].value;
    attach(n, a, b, [a, b](Graph& g, int s) {
      const Mat& G = g.nodes_[s].grad;
      if (g.nodes_[a].requires_grad) g.nodes_[a].grad += G;
      if (g.nodes_[b].requires_grad) g.nodes_[b].grad -= G;
    });
    return push(std::move(n));
  }

  int mul(int a, int b) {  // elementwise
    check_same_shape(a, b, "mul");
    Node n;
    n.value = nodes_[a].value.cwiseProduct(nodes_[b].value);
    attach(n, a, b, [a, b](Graph& g, int s) {
      const Mat& G = g.nodes_[s].grad;
      if (g.nodes_[a].requires_grad) g.nodes_[a].grad += G.cwiseProduct(g.nodes_[b].value);
      if (g.nodes_[b].requires_grad) g.nodes_[b].grad += G.cwiseProduct(g.nodes_[a].value);
    });
    return push(std::move(n));
  }

  int matmul(int a, int b) {
    if (nodes_[a].value.cols() != nodes_[b].value.rows()) {
      throw std::invalid_argument("matmul: inner dimensions disagree");
    }
    Node n;
    n.value.noalias() = nodes_[a].value * nodes_[b].value;
    attach(n, a, b, [a, b](Graph& g, int s) {
      const Mat& G = g.nodes_[s].grad;
      if (g.nodes_[a].requires_grad) {
        g.nodes_[a].grad.noalias() += G * g.nodes_[b].value.transpose();
      }
      if (g.nodes_[b].requires_grad) {
        g.nodes_[b].grad.noalias() += g.nodes_[a].value.transpose() * G;
      }
    });
    return push(std::move(n));
  }

  // W*x with a per-column bias: the 1x1-convolution building block.
  int affine(int w, int b, int x) {
    if (nodes_[b].value.cols() != 1 || nodes_[b].value.rows() != nodes_[w].value.rows()) {
      throw std::invalid_argument("affine: bias must be [rows(W) x 1]");
    }
    if (nodes_[w].value.cols() != nodes_[x].value.rows()) {
      throw std::invalid_argument("affine: inner dimensions disagree");
    }
    Node n;
    n.value.noalias() = nodes_[w].value * nodes_[x].value;
    n.value.colwise() += nodes_[b].value.col(0);
    n.requires_grad =
        nodes_[w].requires_grad || nodes_[b].requires_grad || nodes_[x].requires_grad;
    if (n.requires_grad) {
      n.backward = [w, b, x](Graph& g, int s) {
        const Mat& G = g.nodes_[s].grad;
        if (g.nodes_[w].requires_grad) {
          g.nodes_[w].grad.noalias() += G * g.nodes_[x].value.transpose();
        }
        if (g.nodes_[b].requires_grad) g.nodes_[b].grad += G.rowwise().sum();
        if (g.nodes_[x].requires_grad) {
          g.nodes_[x].grad.noalias() += g.nodes_[w].value.transpose() * G;
        }
      };
    }
    return push(std::move(n));
  }

  int relu(int a) {
    Node n;
    n.value = nodes_[a].value.cwiseMax(0.0);
    attach(n, a, [a](Graph& g, int s) {
      g.nodes_[a].grad.array() +=
          g.nodes_[s].grad.array() * (g.nodes_[a].value.array() > 0.0).cast<double>();
    });
    return push(std::move(n));
  }

  int exp_(int a) {
    Node n;
    n.value = nodes_[a].value.array().exp();
    attach(n, a, [a](Graph& g, int s) {
      g.nodes_[a].grad.array() += g.nodes_[s].grad.array() * g.nodes_[s].value.array();
    });
    return push(std::move(n));
  }

  int square(int a) {
    Node n;
    n.value = nodes_[a].value.array().square();
    attach(n, a, [a](Graph& g, int s) {
      g.nodes_[a].grad.array() += 2.0 * g.nodes_[s].grad.array() * g.nodes_[a].value.array();
    });
    return push(std::move(n));
  }

  int scale(int a, double k) {
    Node n;
    n.value = nodes_[a].value * k;
    attach(n, a, [a, k](Graph& g, int s) { g.nodes_[a].grad += g.nodes_[s].grad * k; });
    return push(std::move(n));
  }

  int add_const(int a, const Mat& c) {
    check_shape(a, c, "add_const");
    Node n;
    n.value = nodes_[a].value + c;
    attach(n, a, [a](Graph& g, int s) { g.nodes_[a].grad += g.nodes_[s].grad; });
    return push(std::move(n));
  }

  int mul_const(int a, Mat c) {
    check_shape(a, c, "mul_const");
    Node n;
    n.value = nodes_[a].value.cwiseProduct(c);
    attach(n, a, [a, c = std::move(c)](Graph& g, int s) {
      g.nodes_[a].grad += g.nodes_[s].grad.cwiseProduct(c);
    });
    return push(std::move(n));
  }

  // Elementwise min against a constant bound. On ties the gradient flows to
  // the variable branch.
  int min_with(int a, Mat bound) {
    check_shape(a, bound, "min_with");
    Node n;
    n.value = nodes_[a].value.cwiseMin(bound);
    attach(n, a, [a, bound = std::move(bound)](Graph& g, int s) {
      g.nodes_[a].grad.array() +=
          g.nodes_[s].grad.array() *
          (g.nodes_[a].value.array() <= bound.array()).cast<double>();
    });
    return push(std::move(n));
  }

  int vconcat(int a, int b) {
    if (nodes_[a].value.cols() != nodes_[b].value.cols()) {
      throw std::invalid_argument("vconcat: column counts disagree");
    }
    Node n;
    n.value.resize(nodes_[a].value.rows() + nodes_[b].value.rows(), nodes_[a].value.cols());
    n.value.topRows(nodes_[a].value.rows()) = nodes_[a].value;
    n.value.bottomRows(nodes_[b].value.rows()) = nodes_[b].value;
    const auto ra = nodes_[a].value.rows();
    attach(n, a, b, [a, b, ra](Graph& g, int s) {
      const Mat& G = g.nodes_[s].grad;
      if (g.nodes_[a].requires_grad) g.nodes_[a].grad += G.topRows(ra);
      if (g.nodes_[b].requires_grad) g.nodes_[b].grad += G.bottomRows(G.rows() - ra);
    });
    return push(std::move(n));
  }

  // Per-block agent mixing: the batch is [H x n*batch]; within each block of
  // n consecutive columns, output column i = sum_j W(i,j) * input column j,
  // i.e. block <- block * W^T. `w` is an [n x n] node.
  int block_mix(int h, int w, int n_agents) {
    const int nb = static_cast<int>(nodes_[h].value.cols());
    check_blocks(h, w, n_agents);
    Node n;
    n.value.resize(nodes_[h].value.rows(), nb);
    const Mat& wt = nodes_[w].value;
    for (int k = 0; k < nb; k += n_agents) {
      n.value.middleCols(k, n_agents).noalias() =
          nodes_[h].value.middleCols(k, n_agents) * wt.transpose();
    }
    attach(n, h, w, [h, w, n_agents](Graph& g, int s) {
      const Mat& G = g.nodes_[s].grad;
      const int nb = static_cast<int>(G.cols());
      for (int k = 0; k < nb; k += n_agents) {
        if (g.nodes_[h].requires_grad) {
          g.nodes_[h].grad.middleCols(k, n_agents).noalias() +=
              G.middleCols(k, n_agents) * g.nodes_[w].value;
        }
        if (g.nodes_[w].requires_grad) {
          g.nodes_[w].grad.noalias() += G.middleCols(k, n_agents).transpose() *
                                        g.nodes_[h].value.middleCols(k, n_agents);
        }
      }
    });
    return push(std::move(n));
  }

  int block_mix_fixed(int h, const Mat& w, int n_agents) {
    const int nb = static_cast<int>(nodes_[h].value.cols());
    if (w.rows() != n_agents || w.cols() != n_agents || nb % n_agents != 0) {
      throw std::invalid_argument("block_mix_fixed: shape mismatch");
    }
    Node n;
    n.value.resize(nodes_[h].value.rows(), nb);
    for (int k = 0; k < nb; k += n_agents) {
      n.value.middleCols(k, n_agents).noalias() =
          nodes_[h].value.middleCols(k, n_agents) * w.transpose();
    }
    attach(n, h, [h, w, n_agents](Graph& g, int s) {
      const Mat& G = g.nodes_[s].grad;
      for (int k = 0; k < static_cast<int>(G.cols()); k += n_agents) {
        g.nodes_[h].grad.middleCols(k, n_agents).noalias() += G.middleCols(k, n_agents) * w;
      }
    });
    return push(std::move(n));
  }

  // Softmax over each row (used to normalize mixing weights).
  int row_softmax(int a) {
    Node n;
    n.value = nodes_[a].value;
    for (int r = 0; r < n.value.rows(); ++r) {
      double mx = n.value.row(r).maxCoeff();
      n.value.row(r) = (n.value.row(r).array() - mx).exp();
      n.value.row(r) /= n.value.row(r).sum();
    }
    attach(n, a, [a](Graph& g, int s) {
      const Mat& S = g.nodes_[s].value;
      const Mat& G = g.nodes_[s].grad;
      for (int r = 0; r < S.rows(); ++r) {
        double dot = G.row(r).dot(S.row(r));
        g.nodes_[a].grad.row(r).array() += (G.row(r).array() - dot) * S.row(r).array();
      }
    });
    return push(std::move(n));
  }

  // Log-softmax over each column (per-agent action distribution).
  int log_softmax_cols(int a) {
    Node n;
    n.value = nodes_[a].value;
    for (int c = 0; c < n.value.cols(); ++c) {
      double mx = n.value.col(c).maxCoeff();
      double lse = mx + std::log((n.value.col(c).array() - mx).exp().sum());
      n.value.col(c).array() -= lse;
    }
    attach(n, a, [a](Graph& g, int s) {
      const Mat soft = g.nodes_[s].value.array().exp();
      const Mat& G = g.nodes_[s].grad;
      Eigen::RowVectorXd colsum = G.colwise().sum();
      g.nodes_[a].grad += G - (soft.array().rowwise() * colsum.array()).matrix();
    });
    return push(std::move(n));
  }

  // Picks row rows[c] from column c: [R x C] -> [1 x C].
  int gather_rows(int a, std::vector<int> rows) {
    const Mat& v = nodes_[a].value;
    if (static_cast<int>(rows.size()) != v.cols()) {
      throw std::invalid_argument("gather_rows: one row index per column required");
    }
    Node n;
    n.value.resize(1, v.cols());
    for (int c = 0; c < v.cols(); ++c) {
      int r = rows[static_cast<size_t>(c)];
      if (r < 0 || r >= v.rows()) throw std::out_of_range("gather_rows: row index");
      n.value(0, c) = v(r, c);
    }
    attach(n, a, [a, rows = std::move(rows)](Graph& g, int s) {
      const Mat& G = g.nodes_[s].grad;
      for (int c = 0; c < G.cols(); ++c) {
        g.nodes_[a].grad(rows[static_cast<size_t>(c)], c) += G(0, c);
      }
    });
    return push(std::move(n));
  }

  int sum_all(int a) {
    Node n;
    n.value = Mat::Constant(1, 1, nodes_[a].value.sum());
    attach(n, a, [a](Graph& g, int s) {
      g.nodes_[a].grad.array() += g.nodes_[s].grad(0, 0);
    });
    return push(std::move(n));
  }

  int mean_all(int a) {
    const double inv = 1.0 / static_cast<double>(nodes_[a].value.size());
    Node n;
    n.value = Mat::Constant(1, 1, nodes_[a].value.sum() * inv);
    attach(n, a, [a, inv](Graph& g, int s) {
      g.nodes_[a].grad.array() += g.nodes_[s].grad(0, 0) * inv;
    });
    return push(std::move(n));
  }

  // Seeds the scalar root and sweeps the tape in reverse; parameter
  // gradients accumulate into their bound ParamTensor::grad.
  void backward(int root) {
    if (nodes_.at(static_cast<size_t>(root)).value.size() != 1) {
      throw std::logic_error("backward: root must be a scalar");
    }
    for (Node& n : nodes_) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    nodes_[static_cast<size_t>(root)].grad(0, 0) = 1.0;
    for (int i = root; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.requires_grad && n.backward) n.backward(*this, i);
    }
    for (Node& n : nodes_) {
      if (n.param) n.param->grad += n.grad;
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  int push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  template <typename F>
  void attach(Node& n, int a, F&& f) {
    n.requires_grad = nodes_[static_cast<size_t>(a)].requires_grad;
    if (n.requires_grad) n.backward = std::forward<F>(f);
  }

  template <typename F>
  void attach(Node& n, int a, int b, F&& f) {
    n.requires_grad = nodes_[static_cast<size_t>(a)].requires_grad ||
                      nodes_[static_cast<size_t>(b)].requires_grad;
    if (n.requires_grad) n.backward = std::forward<F>(f);
  }

  void check_same_shape(int a, int b, const char* op) const {
    if (nodes_[static_cast<size_t>(a)].value.rows() != nodes_[static_cast<size_t>(b)].value.rows() ||
        nodes_[static_cast<size_t>(a)].value.cols() != nodes_[static_cast<size_t>(b)].value.cols()) {
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
  }

  void check_shape(int a, const Mat& c, const char* op) const {
    if (nodes_[static_cast<size_t>(a)].value.rows() != c.rows() ||
        nodes_[static_cast<size_t>(a)].value.cols() != c.cols()) {
      throw std::invalid_argument(std::string(op) + ": shape mismatch");
    }
  }

  void check_blocks(int h, int w, int n_agents) const {
    if (nodes_[static_cast<size_t>(w)].value.rows() != n_agents ||
        nodes_[static_cast<size_t>(w)].value.cols() != n_agents ||
        nodes_[static_cast<size_t>(h)].value.cols() % n_agents != 0) {
      throw std::invalid_argument("block_mix: shape mismatch");
    }
  }

  std::vector<Node> nodes_;
};

}  // namespace tsc::nn
