#pragma once

// PPO-Clip trainer for the signal-control policy.
//
// One iteration: collect `episodes_per_iter` rollouts with the stochastic
// policy (fresh simulator per episode), compute GAE advantages per
// (episode, intersection) stream, normalize advantages once over the whole
// buffer, then run `epochs` passes of minibatch clipped-surrogate updates on
// the policy net and mean-squared-error regression on the value net. After
// each iteration the greedy policy is evaluated on one full episode, which
// also yields the value-prediction-error curve.
//
// Determinism: a single mt19937_64 drives action sampling and minibatch
// shuffling; its state is serialized in checkpoints, so training resumed
// from a checkpoint continues bit-identically.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsc/controllers.hpp"
#include "tsc/features.hpp"
#include "tsc/nltsc.hpp"
#include "tsc/rand.hpp"
#include "tsc/rewards.hpp"
#include "tsc/simulator.hpp"

namespace tsc::rl {

using nn::Mat;
using nn::NltscSpec;

// ---------------------------------------------------------------------------
// Configuration

enum class RewardKind { Ifdg, Stt, Queue, Pressure, Timeloss };

inline std::string reward_kind_name(RewardKind k) {
  switch (k) {
    case RewardKind::Ifdg: return "ifdg";
    case RewardKind::Stt: return "stt";
    case RewardKind::Queue: return "queue";
    case RewardKind::Pressure: return "pressure";
    case RewardKind::Timeloss: return "timeloss";
  }
  throw std::logic_error("bad reward kind");
}

inline RewardKind reward_kind_from_name(const std::string& s) {
  if (s == "ifdg") return RewardKind::Ifdg;
  if (s == "stt") return RewardKind::Stt;
  if (s == "queue") return RewardKind::Queue;
  if (s == "pressure") return RewardKind::Pressure;
  if (s == "timeloss") return RewardKind::Timeloss;
  throw std::invalid_argument("unknown reward kind '" + s + "'");
}

struct PPOConfig {
  int iterations = 200;       // K
  int episodes_per_iter = 2;  // episodes collected per iteration
  int epochs = 10;            // update passes over the buffer per iteration
  int minibatch_steps = 64;   // (episode, d) samples per minibatch
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_eps = 0.2;
  double lr = 3e-4;
  bool lr_decay_linear = true;  // linear decay toward 0 over `iterations`
  double value_coef = 1.0;
  double entropy_coef = 0.0;
  double reward_scale = 0.01;  // scales the per-step reward fed to the learner
  RewardKind reward = RewardKind::Ifdg;
  bool eval_sampled = false;  // greedy evaluation by default
  std::uint64_t seed = 1;

  void validate() const {
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw std::invalid_argument("clip_eps must be in (0, 1)");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must be in [0, 1)");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
      throw std::invalid_argument("gae_lambda must be in [0, 1]");
    }
    if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
    if (episodes_per_iter < 1) throw std::invalid_argument("episodes_per_iter must be >= 1");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (minibatch_steps < 1) throw std::invalid_argument("minibatch_steps must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
    if (!(reward_scale > 0.0)) throw std::invalid_argument("reward_scale must be positive");
    if (value_coef < 0.0 || entropy_coef < 0.0) {
      throw std::invalid_argument("loss coefficients must be non-negative");
    }
  }
};

// ---------------------------------------------------------------------------
// In-place column-wise log-softmax (max-shifted).
inline void log_softmax_columns(Mat& logits) {
  for (int c = 0; c < logits.cols(); ++c) {
    double mx = logits.col(c).maxCoeff();
    double lse = mx + std::log((logits.col(c).array() - mx).exp().sum());
    logits.col(c).array() -= lse;
  }
}

inline int argmax_column(const Mat& m, int c) {
  int best = 0;
  for (int r = 1; r < m.rows(); ++r) {
    if (m(r, c) > m(best, c)) best = r;  // ties keep the lowest index
  }
  return best;
}

// ---------------------------------------------------------------------------
// Clip target and GAE

// B_eps(A): the clipped surrogate's constant branch.
inline double clip_bound(double adv, double eps) {
  return adv >= 0.0 ? (1.0 + eps) * adv : (1.0 - eps) * adv;
}

// GAE over one (episode, intersection) stream with terminal bootstrap 0:
// delta_d = r_d + gamma*V_{d+1} - V_d; A_d = delta_d + gamma*lambda*A_{d+1};
// eta_d = A_d + V_d.
inline void gae_stream(const std::vector<double>& rewards, const std::vector<double>& values,
                       double gamma, double lambda, std::vector<double>& adv,
                       std::vector<double>& ret) {
  const size_t d_count = rewards.size();
  if (values.size() != d_count) throw std::invalid_argument("gae_stream: size mismatch");
  adv.assign(d_count, 0.0);
  ret.assign(d_count, 0.0);
  double running = 0.0;
  for (size_t d = d_count; d-- > 0;) {
    const double v_next = (d + 1 < d_count) ? values[d + 1] : 0.0;
    const double delta = rewards[d] + gamma * v_next - values[d];
    running = delta + gamma * lambda * running;
    adv[d] = running;
    ret[d] = running + values[d];
  }
}

// ---------------------------------------------------------------------------
// Rollout buffer

struct RolloutStep {
  Mat obs;                     // [in_dim x n] augmented observations
  std::vector<int> action;     // per intersection
  std::vector<double> logp;    // log pi_{theta_k}(a | obs) at collection time
  std::vector<double> reward;  // scaled per-intersection reward
  std::vector<double> value;   // V_{phi_k}(obs) at collection time
  std::vector<double> advantage;
  std::vector<double> ret;     // eta: regression target for the value net
};

struct RolloutBuffer {
  int n = 0;                   // intersections
  int steps_per_episode = 0;   // D
  std::vector<std::vector<RolloutStep>> episodes;

  size_t sample_count() const {
    return episodes.size() * static_cast<size_t>(steps_per_episode) * static_cast<size_t>(n);
  }
};

inline void compute_gae(RolloutBuffer& buf, double gamma, double lambda) {
  std::vector<double> r(static_cast<size_t>(buf.steps_per_episode));
  std::vector<double> v(static_cast<size_t>(buf.steps_per_episode));
  std::vector<double> a, g;
  for (auto& episode : buf.episodes) {
    if (static_cast<int>(episode.size()) != buf.steps_per_episode) {
      throw std::logic_error("rollout episode length mismatch");
    }
    for (int i = 0; i < buf.n; ++i) {
      for (int d = 0; d < buf.steps_per_episode; ++d) {
        r[static_cast<size_t>(d)] = episode[static_cast<size_t>(d)].reward[static_cast<size_t>(i)];
        v[static_cast<size_t>(d)] = episode[static_cast<size_t>(d)].value[static_cast<size_t>(i)];
      }
      gae_stream(r, v, gamma, lambda, a, g);
      for (int d = 0; d < buf.steps_per_episode; ++d) {
        auto& step = episode[static_cast<size_t>(d)];
        step.advantage.resize(static_cast<size_t>(buf.n));
        step.ret.resize(static_cast<size_t>(buf.n));
        step.advantage[static_cast<size_t>(i)] = a[static_cast<size_t>(d)];
        step.ret[static_cast<size_t>(i)] = g[static_cast<size_t>(d)];
      }
    }
  }
}

// Normalizes advantages to mean 0 / std 1 over the whole buffer (one pass per
// update, as the update batch is the buffer). Degenerate buffers with ~zero
// variance are centered only. Returns {mean, std} before normalization.
inline std::pair<double, double> normalize_advantages(RolloutBuffer& buf) {
  double sum = 0.0, sq = 0.0;
  size_t count = 0;
  for (auto& episode : buf.episodes) {
    for (auto& step : episode) {
      for (double a : step.advantage) {
        if (!std::isfinite(a)) throw std::runtime_error("non-finite advantage in rollout buffer");
        sum += a;
        sq += a * a;
        ++count;
      }
    }
  }
  if (count == 0) throw std::logic_error("normalize_advantages: empty buffer");
  const double mean = sum / static_cast<double>(count);
  const double var = std::max(0.0, sq / static_cast<double>(count) - mean * mean);
  const double sd = std::sqrt(var);
  for (auto& episode : buf.episodes) {
    for (auto& step : episode) {
      for (double& a : step.advantage) a = (a - mean) / (sd + 1e-8);
    }
  }
  return {mean, sd};
}

// ---------------------------------------------------------------------------
// PPO update

struct UpdateStats {
  double policy_loss = 0.0;  // mean over samples of -min(ratio*A, B_eps(A))
  double value_loss = 0.0;   // mean (V - eta)^2, before value_coef
  double clip_frac = 0.0;    // fraction of samples with |ratio - 1| > eps
  double entropy = 0.0;      // mean per-intersection policy entropy
};

// One full update phase (cfg.epochs passes of shuffled minibatches). Policy
// loss: -mean over (d, i) of min(ratio*A, B_eps(A)); value loss:
// value_coef * mean (V - eta)^2. Both nets take one Adam step per minibatch.
inline UpdateStats ppo_update(const RolloutBuffer& buf, nn::NltscParams& policy,
                              nn::NltscParams& value, nn::Adam& opt_policy, nn::Adam& opt_value,
                              const PPOConfig& cfg, double lr, std::mt19937_64& rng) {
  const int n = buf.n;
  const int in_dim = policy.spec.in_dim;
  const int out_dim = policy.spec.out_dim;
  const int total_steps = static_cast<int>(buf.episodes.size()) * buf.steps_per_episode;
  std::vector<int> order(static_cast<size_t>(total_steps));
  for (int s = 0; s < total_steps; ++s) order[static_cast<size_t>(s)] = s;

  UpdateStats acc;
  double weight = 0.0;  // samples processed (columns), for weighted averages

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_ints(order, rng);
    for (int start = 0; start < total_steps; start += cfg.minibatch_steps) {
      const int b = std::min(cfg.minibatch_steps, total_steps - start);
      const int cols = b * n;
      Mat obs(in_dim, cols);
      std::vector<int> actions(static_cast<size_t>(cols));
      Mat old_logp_neg(1, cols);
      Mat adv(1, cols);
      Mat bound(1, cols);
      Mat returns_neg(1, cols);
      for (int k = 0; k < b; ++k) {
        const int s = order[static_cast<size_t>(start + k)];
        const auto& step = buf.episodes[static_cast<size_t>(s / buf.steps_per_episode)]
                                       [static_cast<size_t>(s % buf.steps_per_episode)];
        obs.middleCols(k * n, n) = step.obs;
        for (int i = 0; i < n; ++i) {
          const int c = k * n + i;
          actions[static_cast<size_t>(c)] = step.action[static_cast<size_t>(i)];
          old_logp_neg(0, c) = -step.logp[static_cast<size_t>(i)];
          adv(0, c) = step.advantage[static_cast<size_t>(i)];
          bound(0, c) = clip_bound(adv(0, c), cfg.clip_eps);
          returns_neg(0, c) = -step.ret[static_cast<size_t>(i)];
        }
      }

      // Policy step.
      policy.zero_grad();
      nn::Graph gp;
      int logits = nltsc_forward(gp, policy, obs);
      int ls = gp.log_softmax_cols(logits);
      int lp = gp.gather_rows(ls, actions);
      int ratio = gp.exp_(gp.add_const(lp, old_logp_neg));
      int surrogate = gp.min_with(gp.mul_const(ratio, adv), bound);
      int policy_loss = gp.scale(gp.mean_all(surrogate), -1.0);
      int root = policy_loss;
      if (cfg.entropy_coef > 0.0) {
        // Mean entropy = -out_dim * mean(p .* log p); maximizing it subtracts
        // from the loss.
        int ent = gp.scale(gp.mean_all(gp.mul(gp.exp_(ls), ls)), -static_cast<double>(out_dim));
        root = gp.add(policy_loss, gp.scale(ent, -cfg.entropy_coef));
      }

      const double pl = gp.value(policy_loss)(0, 0);
      const Mat& ratio_v = gp.value(ratio);
      const Mat& ls_v = gp.value(ls);
      double clipped = 0.0;
      for (int c = 0; c < cols; ++c) {
        if (std::abs(ratio_v(0, c) - 1.0) > cfg.clip_eps) clipped += 1.0;
      }
      double ent_sum = 0.0;
      for (int c = 0; c < cols; ++c) {
        for (int r = 0; r < out_dim; ++r) ent_sum -= std::exp(ls_v(r, c)) * ls_v(r, c);
      }

      // Value step.
      value.zero_grad();
      nn::Graph gv;
      int v = nltsc_forward(gv, value, obs);
      int verr = gv.add_const(v, returns_neg);
      int mse = gv.mean_all(gv.square(verr));
      int value_loss = gv.scale(mse, cfg.value_coef);
      const double vl = gv.value(mse)(0, 0);

      if (!std::isfinite(pl) || !std::isfinite(vl)) {
        std::ostringstream oss;
        oss << "ppo_update: non-finite loss (policy " << pl << ", value " << vl << ") at epoch "
            << epoch << ", minibatch offset " << start << ", lr " << lr << ", samples " << cols;
        throw std::runtime_error(oss.str());
      }

      gp.backward(root);
      opt_policy.step(policy.tensors, lr);
      gv.backward(value_loss);
      opt_value.step(value.tensors, lr);

      const double w = static_cast<double>(cols);
      acc.policy_loss += pl * w;
      acc.value_loss += vl * w;
      acc.clip_frac += clipped;
      acc.entropy += ent_sum;
      weight += w;
    }
  }
  acc.policy_loss /= weight;
  acc.value_loss /= weight;
  acc.clip_frac /= weight;
  acc.entropy /= weight;
  return acc;
}

// ---------------------------------------------------------------------------
// Iteration statistics and curve files

struct IterationStats {
  int iteration = 0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double clip_frac = 0.0;
  double entropy = 0.0;
  double eval_travel_time = std::numeric_limits<double>::quiet_NaN();
  double value_error = std::numeric_limits<double>::quiet_NaN();  // on the eval rollout
};

inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void save_training_curves(const std::string& path, const std::vector<IterationStats>& h) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write training curves to '" + path + "'");
  out << "iteration,policy_loss,value_loss,clip_frac,entropy,eval_travel_time\n";
  for (const IterationStats& s : h) {
    out << s.iteration << ',' << fmt_g17(s.policy_loss) << ',' << fmt_g17(s.value_loss) << ','
        << fmt_g17(s.clip_frac) << ',' << fmt_g17(s.entropy) << ','
        << fmt_g17(s.eval_travel_time) << '\n';
  }
  if (!out.good()) throw std::runtime_error("write failure on '" + path + "'");
}

inline void save_value_error_curve(const std::string& path, const std::vector<IterationStats>& h) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write value-error curve to '" + path + "'");
  out << "iteration,value_error\n";
  for (const IterationStats& s : h) {
    out << s.iteration << ',' << fmt_g17(s.value_error) << '\n';
  }
  if (!out.good()) throw std::runtime_error("write failure on '" + path + "'");
}

// ---------------------------------------------------------------------------
// Trainer

struct EvalResult {
  EpisodeMetrics metrics;
  double travel_time = std::numeric_limits<double>::quiet_NaN();
  double value_error = std::numeric_limits<double>::quiet_NaN();
};

class Trainer {
 public:
  Trainer(RoadNetwork net, SimConfig sim_cfg, FlowSchedule flow, NltscSpec policy_spec,
          PPOConfig cfg)
      : net_(std::move(net)), sim_cfg_(sim_cfg), flow_(std::move(flow)), cfg_(cfg) {
    cfg_.validate();
    sim_cfg_.validate();
    if (policy_spec.n != net_.num_intersections()) {
      throw std::invalid_argument("policy spec agent count must match the network");
    }
    if (policy_spec.in_dim != kAugObsDim) {
      throw std::invalid_argument("policy spec input size must match the observation size");
    }
    if (policy_spec.out_dim != kNumPhases) {
      throw std::invalid_argument("policy head must emit one logit per phase");
    }
    policy_spec_ = policy_spec;
    value_spec_ = policy_spec;
    value_spec_.out_dim = 1;
    value_spec_.head_gain = 1.0;
    rng_.seed(cfg_.seed);
    policy_ = nn::make_nltsc(policy_spec_, rng_);
    value_ = nn::make_nltsc(value_spec_, rng_);
    encodings_ = grid_position_encodings(net_);
    range_m_ = sim_cfg_.effective_range_m();
  }

  const PPOConfig& config() const { return cfg_; }
  const nn::NltscParams& policy() const { return policy_; }
  const nn::NltscParams& value() const { return value_; }
  nn::NltscParams& mutable_policy() { return policy_; }
  int iteration() const { return iteration_; }
  const std::vector<IterationStats>& history() const { return history_; }

  double current_lr() const {
    if (!cfg_.lr_decay_linear || cfg_.iterations <= 0) return cfg_.lr;
    return cfg_.lr * (1.0 - static_cast<double>(iteration_) / static_cast<double>(cfg_.iterations));
  }

  RolloutBuffer collect_rollout(int episodes) {
    RolloutBuffer buf;
    buf.n = net_.num_intersections();
    buf.steps_per_episode = sim_cfg_.decision_steps();
    buf.episodes.resize(static_cast<size_t>(episodes));
    for (int e = 0; e < episodes; ++e) {
      try {
        collect_episode(buf.episodes[static_cast<size_t>(e)]);
      } catch (const std::exception& ex) {
        throw std::runtime_error("rollout episode " + std::to_string(e) + " failed: " + ex.what());
      }
    }
    return buf;
  }

  IterationStats iterate() {
    const double lr = current_lr();
    RolloutBuffer buf = collect_rollout(cfg_.episodes_per_iter);
    compute_gae(buf, cfg_.gamma, cfg_.gae_lambda);
    normalize_advantages(buf);
    UpdateStats up = ppo_update(buf, policy_, value_, opt_policy_, opt_value_, cfg_, lr, rng_);
    EvalResult ev = evaluate();
    IterationStats s;
    s.iteration = iteration_;
    s.policy_loss = up.policy_loss;
    s.value_loss = up.value_loss;
    s.clip_frac = up.clip_frac;
    s.entropy = up.entropy;
    s.eval_travel_time = ev.travel_time;
    s.value_error = ev.value_error;
    history_.push_back(s);
    ++iteration_;
    return s;
  }

  // Runs the remaining iterations of cfg.iterations.
  const std::vector<IterationStats>& run() {
    while (iteration_ < cfg_.iterations) iterate();
    return history_;
  }

  // Mean eval travel time over the final (up to) 10 iterations.
  double final_metric() const {
    if (history_.empty()) return std::numeric_limits<double>::quiet_NaN();
    const size_t take = std::min<size_t>(10, history_.size());
    double sum = 0.0;
    for (size_t i = history_.size() - take; i < history_.size(); ++i) {
      sum += history_[i].eval_travel_time;
    }
    return sum / static_cast<double>(take);
  }

  // One evaluation episode (greedy unless cfg.eval_sampled); reports the
  // travel-time metric and the value-prediction error mean((V - eta)^2) on
  // the evaluation rollout.
  EvalResult evaluate() {
    const int n = net_.num_intersections();
    const int steps = sim_cfg_.decision_steps();
    SimState st(net_, sim_cfg_, flow_);
    std::vector<RawObservation> prev;
    std::vector<std::vector<double>> rewards(static_cast<size_t>(n)),
        values(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      rewards[static_cast<size_t>(i)].reserve(static_cast<size_t>(steps));
      values[static_cast<size_t>(i)].reserve(static_cast<size_t>(steps));
    }
    for (int d = 0; d < steps; ++d) {
      std::vector<RawObservation> cur = observe_all(st, range_m_);
      Mat obs = obs_matrix(cur, d == 0 ? nullptr : &prev);
      Mat logits = nltsc_eval(policy_, obs);
      std::vector<int> joint(static_cast<size_t>(n));
      if (cfg_.eval_sampled) {
        log_softmax_columns(logits);
        for (int i = 0; i < n; ++i) {
          Eigen::VectorXd p = logits.col(i).array().exp();
          joint[static_cast<size_t>(i)] =
              sample_categorical(p.data(), static_cast<int>(p.size()), canonical_double(rng_));
        }
      } else {
        for (int i = 0; i < n; ++i) joint[static_cast<size_t>(i)] = argmax_column(logits, i);
      }
      Mat v = nltsc_eval(value_, obs);
      StepRecord rec = st.run_decision_step(joint);
      for (int i = 0; i < n; ++i) {
        rewards[static_cast<size_t>(i)].push_back(step_reward(rec, st, i));
        values[static_cast<size_t>(i)].push_back(v(0, i));
      }
      prev = std::move(cur);
    }
    EvalResult res;
    res.metrics = st.metrics();
    res.travel_time = res.metrics.avg_travel_time_s.value_or(
        std::numeric_limits<double>::quiet_NaN());
    std::vector<double> a, g;
    double err = 0.0;
    for (int i = 0; i < n; ++i) {
      gae_stream(rewards[static_cast<size_t>(i)], values[static_cast<size_t>(i)], cfg_.gamma,
                 cfg_.gae_lambda, a, g);
      for (int d = 0; d < steps; ++d) {
        const double diff = values[static_cast<size_t>(i)][static_cast<size_t>(d)] -
                            g[static_cast<size_t>(d)];
        err += diff * diff;
      }
    }
    res.value_error = err / static_cast<double>(n * steps);
    return res;
  }

  // A stateful greedy controller over the current policy, usable with
  // run_episode; it tracks the previous observation between calls and resets
  // when d returns to 0.
  DecideFn greedy_controller() const {
    auto prev = std::make_shared<std::vector<RawObservation>>();
    const nn::NltscParams* pol = &policy_;
    auto enc = encodings_;
    double range = range_m_;
    return [prev, pol, enc, range](const SimState& st, int d) {
      std::vector<RawObservation> cur = observe_all(st, range);
      std::vector<AugmentedObservation> aug =
          augment_observations(cur, (d == 0 || prev->empty()) ? nullptr : prev.get(), enc);
      Mat obs(kAugObsDim, static_cast<int>(aug.size()));
      for (size_t i = 0; i < aug.size(); ++i) {
        for (int k = 0; k < kAugObsDim; ++k) obs(k, static_cast<int>(i)) = aug[i].values[static_cast<size_t>(k)];
      }
      Mat logits = nltsc_eval(*pol, obs);
      std::vector<int> joint(aug.size());
      for (size_t i = 0; i < aug.size(); ++i) {
        joint[i] = argmax_column(logits, static_cast<int>(i));
      }
      *prev = std::move(cur);
      return joint;
    };
  }

  // ---- Checkpointing ------------------------------------------------------

  void save_checkpoint(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write checkpoint to '" + path + "'");
    out << "tscckpt 1\n";
    out << "iteration " << iteration_ << '\n';
    out << "config " << fmt_g17(cfg_.gamma) << ' ' << fmt_g17(cfg_.gae_lambda) << ' '
        << fmt_g17(cfg_.clip_eps) << ' ' << cfg_.epochs << ' ' << cfg_.minibatch_steps << ' '
        << cfg_.episodes_per_iter << ' ' << cfg_.iterations << ' ' << fmt_g17(cfg_.lr) << ' '
        << (cfg_.lr_decay_linear ? 1 : 0) << ' ' << fmt_g17(cfg_.value_coef) << ' '
        << fmt_g17(cfg_.entropy_coef) << ' ' << fmt_g17(cfg_.reward_scale) << ' '
        << reward_kind_name(cfg_.reward) << ' ' << (cfg_.eval_sampled ? 1 : 0) << ' '
        << cfg_.seed << '\n';
    write_spec(out, "policy", policy_spec_);
    write_spec(out, "value", value_spec_);
    write_tensors(out, "policy", policy_);
    write_tensors(out, "value", value_);
    write_adam(out, "policy", opt_policy_, policy_);
    write_adam(out, "value", opt_value_, value_);
    std::ostringstream rs;
    rs << rng_;
    out << "rng " << rs.str() << '\n';
    out << "history " << history_.size() << '\n';
    for (const IterationStats& s : history_) {
      out << s.iteration << ' ' << fmt_g17(s.policy_loss) << ' ' << fmt_g17(s.value_loss) << ' '
          << fmt_g17(s.clip_frac) << ' ' << fmt_g17(s.entropy) << ' '
          << fmt_g17(s.eval_travel_time) << ' ' << fmt_g17(s.value_error) << '\n';
    }
    out << "end\n";
    if (!out.good()) throw std::runtime_error("write failure on checkpoint '" + path + "'");
  }

  void load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
    expect_token(in, "tscckpt", path);
    int version = read_int(in, path);
    if (version != 1) {
      throw std::runtime_error("checkpoint '" + path + "': unsupported version " +
                               std::to_string(version));
    }
    expect_token(in, "iteration", path);
    int iter = read_int(in, path);

    expect_token(in, "config", path);
    PPOConfig c;
    std::string reward_name;
    int decay = 0, sampled = 0;
    in >> c.gamma >> c.gae_lambda >> c.clip_eps >> c.epochs >> c.minibatch_steps >>
        c.episodes_per_iter >> c.iterations >> c.lr >> decay >> c.value_coef >> c.entropy_coef >>
        c.reward_scale >> reward_name >> sampled >> c.seed;
    if (!in) throw std::runtime_error("checkpoint '" + path + "': malformed config line");
    c.lr_decay_linear = decay != 0;
    c.eval_sampled = sampled != 0;
    c.reward = reward_kind_from_name(reward_name);
    c.validate();

    NltscSpec ps = read_spec(in, "policy", path);
    NltscSpec vs = read_spec(in, "value", path);
    if (ps.n != net_.num_intersections()) {
      throw std::runtime_error("checkpoint '" + path + "' manifest mismatch: trained for " +
                               std::to_string(ps.n) + " intersections, network has " +
                               std::to_string(net_.num_intersections()));
    }
    if (ps.in_dim != kAugObsDim || ps.out_dim != kNumPhases) {
      throw std::runtime_error("checkpoint '" + path +
                               "' manifest mismatch: observation/phase dimensions disagree");
    }

    // Rebuild parameter skeletons with the checkpoint's specs, then fill.
    std::mt19937_64 scratch(0);
    nn::NltscParams pol = nn::make_nltsc(ps, scratch);
    nn::NltscParams val = nn::make_nltsc(vs, scratch);
    read_tensors(in, "policy", pol, path);
    read_tensors(in, "value", val, path);
    nn::Adam opt_p, opt_v;
    read_adam(in, "policy", opt_p, pol, path);
    read_adam(in, "value", opt_v, val, path);
    expect_token(in, "rng", path);
    std::mt19937_64 rng;
    in >> rng;
    if (!in) throw std::runtime_error("checkpoint '" + path + "': malformed rng state");
    expect_token(in, "history", path);
    int hist_count = read_int(in, path);
    std::vector<IterationStats> hist(static_cast<size_t>(hist_count));
    for (IterationStats& s : hist) {
      in >> s.iteration >> s.policy_loss >> s.value_loss >> s.clip_frac >> s.entropy >>
          s.eval_travel_time >> s.value_error;
    }
    if (!in) throw std::runtime_error("checkpoint '" + path + "': malformed history");
    expect_token(in, "end", path);

    cfg_ = c;
    policy_spec_ = ps;
    value_spec_ = vs;
    policy_ = std::move(pol);
    value_ = std::move(val);
    opt_policy_ = std::move(opt_p);
    opt_value_ = std::move(opt_v);
    rng_ = rng;
    iteration_ = iter;
    history_ = std::move(hist);
  }

 private:
  double step_reward(const StepRecord& rec, const SimState& post, int i) const {
    double r = 0.0;
    switch (cfg_.reward) {
      case RewardKind::Ifdg: r = ifdg_reward(rec, i, sim_cfg_.v_max_mps); break;
      case RewardKind::Stt: r = stt_reward(rec, i); break;
      case RewardKind::Queue: r = queue_reward(post, i); break;
      case RewardKind::Pressure: r = pressure_reward(post, i); break;
      case RewardKind::Timeloss: r = timeloss_reward(post, i); break;
    }
    return r * cfg_.reward_scale;
  }

  Mat obs_matrix(const std::vector<RawObservation>& cur,
                 const std::vector<RawObservation>* prev) const {
    std::vector<AugmentedObservation> aug = augment_observations(cur, prev, encodings_);
    Mat m(kAugObsDim, static_cast<int>(aug.size()));
    for (size_t i = 0; i < aug.size(); ++i) {
      for (int k = 0; k < kAugObsDim; ++k) {
        m(k, static_cast<int>(i)) = aug[i].values[static_cast<size_t>(k)];
      }
    }
    return m;
  }

  void collect_episode(std::vector<RolloutStep>& out) {
    const int n = net_.num_intersections();
    const int steps = sim_cfg_.decision_steps();
    out.clear();
    out.reserve(static_cast<size_t>(steps));
    SimState st(net_, sim_cfg_, flow_);
    std::vector<RawObservation> prev;
    for (int d = 0; d < steps; ++d) {
      std::vector<RawObservation> cur = observe_all(st, range_m_);
      RolloutStep step;
      step.obs = obs_matrix(cur, d == 0 ? nullptr : &prev);
      Mat logits = nltsc_eval(policy_, step.obs);
      log_softmax_columns(logits);
      step.action.resize(static_cast<size_t>(n));
      step.logp.resize(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        Eigen::VectorXd p = logits.col(i).array().exp();
        const int a =
            sample_categorical(p.data(), static_cast<int>(p.size()), canonical_double(rng_));
        step.action[static_cast<size_t>(i)] = a;
        step.logp[static_cast<size_t>(i)] = logits(a, i);
      }
      Mat v = nltsc_eval(value_, step.obs);
      step.value.resize(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) step.value[static_cast<size_t>(i)] = v(0, i);
      StepRecord rec = st.run_decision_step(step.action);
      step.reward.resize(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        step.reward[static_cast<size_t>(i)] = step_reward(rec, st, i);
      }
      out.push_back(std::move(step));
      prev = std::move(cur);
    }
  }

  // ---- checkpoint helpers ----

  static void write_mat(std::ofstream& out, const Mat& m) {
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < m.cols(); ++c) {
        out << (r + c == 0 ? "" : " ") << fmt_g17(m(r, c));
      }
    }
    out << '\n';
  }

  static void read_mat(std::ifstream& in, Mat& m, const std::string& path) {
    for (int r = 0; r < m.rows(); ++r) {
      for (int c = 0; c < m.cols(); ++c) {
        if (!(in >> m(r, c))) {
          throw std::runtime_error("checkpoint '" + path + "': truncated matrix data");
        }
      }
    }
  }

  static void write_spec(std::ofstream& out, const char* tag, const NltscSpec& s) {
    out << "spec " << tag << ' ' << s.n << ' ' << s.in_dim << ' ' << s.hidden << ' ' << s.out_dim
        << ' ' << s.rounds << ' ' << s.m_rank << ' ' << fmt_g17(s.head_gain) << ' '
        << nn::weight_mode_name(s.mode) << '\n';
    if (s.mode == nn::WeightMode::Fixed) {
      out << "fixed_w " << s.fixed_w.rows() << ' ' << s.fixed_w.cols() << '\n';
      for (int r = 0; r < s.fixed_w.rows(); ++r) {
        for (int c = 0; c < s.fixed_w.cols(); ++c) {
          out << (r + c == 0 ? "" : " ") << fmt_g17(s.fixed_w(r, c));
        }
      }
      out << '\n';
    }
  }

  NltscSpec read_spec(std::ifstream& in, const char* tag, const std::string& path) {
    expect_token(in, "spec", path);
    expect_token(in, tag, path);
    NltscSpec s;
    std::string mode;
    in >> s.n >> s.in_dim >> s.hidden >> s.out_dim >> s.rounds >> s.m_rank >> s.head_gain >> mode;
    if (!in) throw std::runtime_error("checkpoint '" + path + "': malformed spec line");
    if (mode == "learned") {
      s.mode = nn::WeightMode::Learned;
    } else if (mode == "softmax") {
      s.mode = nn::WeightMode::Softmax;
    } else if (mode == "fixed") {
      s.mode = nn::WeightMode::Fixed;
    } else {
      throw std::runtime_error("checkpoint '" + path + "': unknown weight mode '" + mode + "'");
    }
    if (s.mode == nn::WeightMode::Fixed) {
      expect_token(in, "fixed_w", path);
      int rows = read_int(in, path), cols = read_int(in, path);
      s.fixed_w.resize(rows, cols);
      std::ifstream& ref = in;
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          if (!(ref >> s.fixed_w(r, c))) {
            throw std::runtime_error("checkpoint '" + path + "': truncated fixed_w");
          }
        }
      }
    }
    s.validate();
    return s;
  }

  static void write_tensors(std::ofstream& out, const char* tag, const nn::NltscParams& p) {
    out << "tensors " << tag << ' ' << p.tensors.size() << '\n';
    for (const nn::ParamTensor& t : p.tensors) {
      out << t.name << ' ' << t.value.rows() << ' ' << t.value.cols() << '\n';
      write_mat(out, t.value);
    }
  }

  static void read_tensors(std::ifstream& in, const char* tag, nn::NltscParams& p,
                           const std::string& path) {
    expect_token(in, "tensors", path);
    expect_token(in, tag, path);
    size_t count = 0;
    in >> count;
    if (!in || count != p.tensors.size()) {
      throw std::runtime_error("checkpoint '" + path + "' manifest mismatch: expected " +
                               std::to_string(p.tensors.size()) + " " + tag +
                               " tensors, found " + std::to_string(count));
    }
    for (nn::ParamTensor& t : p.tensors) {
      std::string name;
      int rows = 0, cols = 0;
      in >> name >> rows >> cols;
      if (!in || name != t.name || rows != t.value.rows() || cols != t.value.cols()) {
        std::ostringstream oss;
        oss << "checkpoint '" << path << "' manifest mismatch: expected tensor '" << t.name
            << "' [" << t.value.rows() << 'x' << t.value.cols() << "], found '" << name << "' ["
            << rows << 'x' << cols << ']';
        throw std::runtime_error(oss.str());
      }
      read_mat(in, t.value, path);
    }
  }

  static void write_adam(std::ofstream& out, const char* tag, const nn::Adam& opt,
                         const nn::NltscParams& p) {
    out << "adam " << tag << ' ' << opt.steps() << ' ' << opt.slots().size() << '\n';
    for (size_t i = 0; i < opt.slots().size(); ++i) {
      write_mat(out, opt.slots()[i].m);
      write_mat(out, opt.slots()[i].v);
    }
    (void)p;
  }

  static void read_adam(std::ifstream& in, const char* tag, nn::Adam& opt,
                        const nn::NltscParams& p, const std::string& path) {
    expect_token(in, "adam", path);
    expect_token(in, tag, path);
    long long steps = 0;
    size_t slot_count = 0;
    in >> steps >> slot_count;
    if (!in || (slot_count != 0 && slot_count != p.tensors.size())) {
      throw std::runtime_error("checkpoint '" + path + "' manifest mismatch: " + tag +
                               " optimizer slot count " + std::to_string(slot_count));
    }
    opt.restore_step_count(steps);
    opt.slots().clear();
    opt.slots().resize(slot_count);
    for (size_t i = 0; i < slot_count; ++i) {
      const auto& shape = p.tensors[i].value;
      opt.slots()[i].m = Mat::Zero(shape.rows(), shape.cols());
      opt.slots()[i].v = Mat::Zero(shape.rows(), shape.cols());
      read_mat(in, opt.slots()[i].m, path);
      read_mat(in, opt.slots()[i].v, path);
    }
  }

  static void expect_token(std::ifstream& in, const std::string& want, const std::string& path) {
    std::string got;
    if (!(in >> got) || got != want) {
      throw std::runtime_error("checkpoint '" + path + "': expected '" + want + "', found '" +
                               got + "'");
    }
  }

  static int read_int(std::ifstream& in, const std::string& path) {
    int v = 0;
    if (!(in >> v)) throw std::runtime_error("checkpoint '" + path + "': expected an integer");
    return v;
  }

  RoadNetwork net_;
  SimConfig sim_cfg_;
  FlowSchedule flow_;
  PPOConfig cfg_;
  NltscSpec policy_spec_, value_spec_;
  nn::NltscParams policy_, value_;
  nn::Adam opt_policy_, opt_value_;
  std::mt19937_64 rng_;
  std::vector<std::vector<double>> encodings_;
  double range_m_ = 0.0;
  int iteration_ = 0;
  std::vector<IterationStats> history_;
};

}  // namespace tsc::rl
