#pragma once

// The non-local signal-control network and its optimizer.
//
// Forward pass over a joint observation X [in_dim x n] (or a batch laid out
// as [in_dim x n*batch], n consecutive columns per sample):
//
//   h   = Embed(X)                       single 1x1 conv layer (affine)
//   repeat `rounds` times:
//     h' = h + h mixed across agents by W   (non-local step; W is n x n)
//     h  = h' + Process(h')              2-layer 1x1 conv with ReLU between
//   l   = Local(X)                       2-layer 1x1 conv with ReLU between
//   out = Head([h ; l])                  single 1x1 conv layer
//
// The mixing matrix is factorized W = Wa * Wb with Wa [n x M], Wb [M x n].
// Modes: Learned uses W directly; Softmax row-normalizes W; Fixed uses a
// caller-provided constant matrix (e.g. k-hop neighborhood averaging or
// zero for a purely local network).

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsc/network.hpp"
#include "tsc/tensor.hpp"

namespace tsc::nn {

enum class WeightMode { Learned, Softmax, Fixed };

inline std::string weight_mode_name(WeightMode m) {
  switch (m) {
    case WeightMode::Learned: return "learned";
    case WeightMode::Softmax: return "softmax";
    case WeightMode::Fixed: return "fixed";
  }
  throw std::logic_error("bad weight mode");
}

struct NltscSpec {
  int n = 0;        // agents (intersections)
  int in_dim = 72;  // augmented observation size
  int hidden = 64;
  int out_dim = 4;  // 4 logits for the policy head, 1 for the value head
  int rounds = 2;
  int m_rank = 0;   // factorization rank M; 0 means M = n
  double head_gain = 0.01;  // orthogonal gain of the output layer
  WeightMode mode = WeightMode::Learned;
  Mat fixed_w;      // used when mode == Fixed

  int rank() const { return m_rank > 0 ? m_rank : n; }

  void validate() const {
    if (n <= 0 || in_dim <= 0 || hidden <= 0 || out_dim <= 0 || rounds < 0) {
      throw std::invalid_argument("bad network spec");
    }
    if (mode == WeightMode::Fixed && (fixed_w.rows() != n || fixed_w.cols() != n)) {
      throw std::invalid_argument("fixed weight matrix must be n x n");
    }
  }
};

// Orthogonal init (QR of a Gaussian draw, sign-fixed), the usual choice for
// small policy networks.
inline Mat orthogonal_init(int rows, int cols, double gain, std::mt19937_64& rng) {
  const bool flip = rows < cols;
  const int r = flip ? cols : rows;
  const int c = flip ? rows : cols;
  std::normal_distribution<double> normal(0.0, 1.0);
  Mat g(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) g(i, j) = normal(rng);
  }
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(r, c);
  Mat rm = qr.matrixQR().topRows(c).triangularView<Eigen::Upper>();
  for (int j = 0; j < c; ++j) {
    if (rm(j, j) < 0) q.col(j) *= -1.0;
  }
  q *= gain;
  return flip ? Mat(q.transpose()) : q;
}

struct NltscParams {
  NltscSpec spec;
  std::vector<ParamTensor> tensors;
  // Indices into `tensors`.
  int embed_w = -1, embed_b = -1;
  int local_w1 = -1, local_b1 = -1, local_w2 = -1, local_b2 = -1;
  std::vector<int> wa, wb;  // one pair per round (Learned/Softmax modes)
  std::vector<int> proc_w1, proc_b1, proc_w2, proc_b2;
  int head_w = -1, head_b = -1;

  ParamTensor& t(int i) { return tensors.at(static_cast<size_t>(i)); }
  const ParamTensor& t(int i) const { return tensors.at(static_cast<size_t>(i)); }

  void zero_grad() {
    for (ParamTensor& p : tensors) p.grad.setZero();
  }

  size_t scalar_count() const {
    size_t n = 0;
    for (const ParamTensor& p : tensors) n += static_cast<size_t>(p.value.size());
    return n;
  }

  // The effective mixing matrix of one round, as used by the forward pass.
  Mat effective_w(int round) const {
    if (spec.mode == WeightMode::Fixed) return spec.fixed_w;
    Mat w = t(wa.at(static_cast<size_t>(round))).value * t(wb.at(static_cast<size_t>(round))).value;
    if (spec.mode == WeightMode::Softmax) {
      for (int r = 0; r < w.rows(); ++r) {
        double mx = w.row(r).maxCoeff();
        w.row(r) = (w.row(r).array() - mx).exp();
        w.row(r) /= w.row(r).sum();
      }
    }
    return w;
  }
};

// Fresh parameters. Hidden layers use orthogonal(sqrt(2)); the head uses
// spec.head_gain; biases start at zero. The factor Wa starts at zero so the
// network is purely local until the optimizer grows the mixing weights.
inline NltscParams make_nltsc(const NltscSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  NltscParams p;
  p.spec = spec;
  const double g = std::sqrt(2.0);
  auto add = [&](const std::string& name, Mat v) {
    p.tensors.emplace_back(name, std::move(v));
    return static_cast<int>(p.tensors.size()) - 1;
  };
  p.embed_w = add("embed_w", orthogonal_init(spec.hidden, spec.in_dim, g, rng));
  p.embed_b = add("embed_b", Mat::Zero(spec.hidden, 1));
  for (int r = 0; r < spec.rounds; ++r) {
    const std::string tag = std::to_string(r);
    if (spec.mode != WeightMode::Fixed) {
      p.wa.push_back(add("mix" + tag + "_wa", Mat::Zero(spec.n, spec.rank())));
      p.wb.push_back(add("mix" + tag + "_wb",
                         orthogonal_init(spec.rank(), spec.n, 1.0, rng)));
    }
    p.proc_w1.push_back(add("proc" + tag + "_w1",
                            orthogonal_init(spec.hidden, spec.hidden, g, rng)));
    p.proc_b1.push_back(add("proc" + tag + "_b1", Mat::Zero(spec.hidden, 1)));
    p.proc_w2.push_back(add("proc" + tag + "_w2",
                            orthogonal_init(spec.hidden, spec.hidden, g, rng)));
    p.proc_b2.push_back(add("proc" + tag + "_b2", Mat::Zero(spec.hidden, 1)));
  }
  p.local_w1 = add("local_w1", orthogonal_init(spec.hidden, spec.in_dim, g, rng));
  p.local_b1 = add("local_b1", Mat::Zero(spec.hidden, 1));
  p.local_w2 = add("local_w2", orthogonal_init(spec.hidden, spec.hidden, g, rng));
  p.local_b2 = add("local_b2", Mat::Zero(spec.hidden, 1));
  p.head_w = add("head_w",
                 orthogonal_init(spec.out_dim, 2 * spec.hidden, spec.head_gain, rng));
  p.head_b = add("head_b", Mat::Zero(spec.out_dim, 1));
  return p;
}

// Graph forward: obs is [in_dim x n*batch]. Returns the output node id
// ([out_dim x n*batch]).
inline int nltsc_forward(Graph& g, NltscParams& p, const Mat& obs) {
  const NltscSpec& spec = p.spec;
  if (obs.rows() != spec.in_dim || obs.cols() % spec.n != 0) {
    throw std::invalid_argument("nltsc_forward: bad observation shape");
  }
  int x = g.add_const(obs);
  auto P = [&](int idx) { return g.add_param(p.t(idx)); };
  int h = g.affine(P(p.embed_w), P(p.embed_b), x);
  for (int r = 0; r < spec.rounds; ++r) {
    int mixed;
    if (spec.mode == WeightMode::Fixed) {
      mixed = g.block_mix_fixed(h, spec.fixed_w, spec.n);
    } else {
      int w = g.matmul(P(p.wa[static_cast<size_t>(r)]), P(p.wb[static_cast<size_t>(r)]));
      if (spec.mode == WeightMode::Softmax) w = g.row_softmax(w);
      mixed = g.block_mix(h, w, spec.n);
    }
    int hp = g.add(h, mixed);
    int z = g.relu(g.affine(P(p.proc_w1[static_cast<size_t>(r)]),
                            P(p.proc_b1[static_cast<size_t>(r)]), hp));
    int proc = g.affine(P(p.proc_w2[static_cast<size_t>(r)]),
                        P(p.proc_b2[static_cast<size_t>(r)]), z);
    h = g.add(hp, proc);
  }
  int lz = g.relu(g.affine(P(p.local_w1), P(p.local_b1), x));
  int local = g.affine(P(p.local_w2), P(p.local_b2), lz);
  int fused = g.vconcat(h, local);
  return g.affine(P(p.head_w), P(p.head_b), fused);
}

// Tape-free forward for rollouts and evaluation (same arithmetic).
inline Mat nltsc_eval(const NltscParams& p, const Mat& obs) {
  const NltscSpec& spec = p.spec;
  if (obs.rows() != spec.in_dim || obs.cols() % spec.n != 0) {
    throw std::invalid_argument("nltsc_eval: bad observation shape");
  }
  auto affine = [](const Mat& w, const Mat& b, const Mat& x) {
    Mat y = w * x;
    y.colwise() += b.col(0);
    return y;
  };
  Mat h = affine(p.t(p.embed_w).value, p.t(p.embed_b).value, obs);
  for (int r = 0; r < spec.rounds; ++r) {
    Mat w = p.effective_w(r);
    Mat hp = h;
    for (int k = 0; k < h.cols(); k += spec.n) {
      hp.middleCols(k, spec.n).noalias() += h.middleCols(k, spec.n) * w.transpose();
    }
    Mat z = affine(p.t(p.proc_w1[static_cast<size_t>(r)]).value,
                   p.t(p.proc_b1[static_cast<size_t>(r)]).value, hp)
                .cwiseMax(0.0);
    h = hp + affine(p.t(p.proc_w2[static_cast<size_t>(r)]).value,
                    p.t(p.proc_b2[static_cast<size_t>(r)]).value, z);
  }
  Mat lz = affine(p.t(p.local_w1).value, p.t(p.local_b1).value, obs).cwiseMax(0.0);
  Mat local = affine(p.t(p.local_w2).value, p.t(p.local_b2).value, lz);
  Mat fused(h.rows() + local.rows(), h.cols());
  fused.topRows(h.rows()) = h;
  fused.bottomRows(local.rows()) = local;
  return affine(p.t(p.head_w).value, p.t(p.head_b).value, fused);
}

// Row-normalized k-hop neighborhood averaging over the grid (self included);
// hop distance is the Manhattan distance between intersections.
inline Mat fixed_hop_weights(const RoadNetwork& net, int hops) {
  const int n = net.num_intersections();
  Mat w = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const Intersection& a = net.intersections[static_cast<size_t>(i)];
    int count = 0;
    for (int j = 0; j < n; ++j) {
      const Intersection& b = net.intersections[static_cast<size_t>(j)];
      if (std::abs(a.row - b.row) + std::abs(a.col - b.col) <= hops) ++count;
    }
    for (int j = 0; j < n; ++j) {
      const Intersection& b = net.intersections[static_cast<size_t>(j)];
      if (std::abs(a.row - b.row) + std::abs(a.col - b.col) <= hops) {
        w(i, j) = 1.0 / count;
      }
    }
  }
  return w;
}

// --- Adam --------------------------------------------------------------------

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(std::vector<ParamTensor>& tensors, double lr) {
    if (slots_.empty()) {
      slots_.resize(tensors.size());
      for (size_t i = 0; i < tensors.size(); ++i) {
        slots_[i].m = Mat::Zero(tensors[i].value.rows(), tensors[i].value.cols());
        slots_[i].v = Mat::Zero(tensors[i].value.rows(), tensors[i].value.cols());
      }
    }
    if (slots_.size() != tensors.size()) {
      throw std::invalid_argument("Adam: tensor count changed");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < tensors.size(); ++i) {
      ParamTensor& p = tensors[i];
      if (!p.grad.allFinite()) {
        throw std::runtime_error("non-finite gradient in parameter '" + p.name + "'");
      }
      Slot& s = slots_[i];
      s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * p.grad;
      s.v = cfg_.beta2 * s.v + (1.0 - cfg_.beta2) * p.grad.cwiseProduct(p.grad);
      Mat mhat = s.m / bc1;
      Mat vhat = s.v / bc2;
      p.value.array() -= lr * mhat.array() / (vhat.array().sqrt() + cfg_.eps);
    }
  }

  long long steps() const { return t_; }

  struct Slot {
    Mat m, v;
  };
  // Serialization access (checkpoints).
  std::vector<Slot>& slots() { return slots_; }
  const std::vector<Slot>& slots() const { return slots_; }
  void restore_step_count(long long t) { t_ = t; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  long long t_ = 0;
  std::vector<Slot> slots_;
};

}  // namespace tsc::nn
