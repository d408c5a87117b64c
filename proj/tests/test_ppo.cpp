#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "tsc/flowgen.hpp"
#include "tsc/ppo.hpp"

using namespace tsc;
using namespace tsc::rl;
using Catch::Approx;
using nn::Mat;

namespace {

bool same_bits(double a, double b) {
  std::uint64_t x, y;
  std::memcpy(&x, &a, 8);
  std::memcpy(&y, &b, 8);
  return x == y;
}

// Shared small training setup: one intersection, 120 s horizon (8 decisions),
// a 25-vehicle synthesized flow, and a narrow network so tests stay fast.
struct TinySetup {
  RoadNetwork net = build_grid_network(1, 1, 300.0);
  SimConfig sim;
  FlowSchedule flow;
  nn::NltscSpec spec;
  PPOConfig cfg;

  TinySetup() {
    sim.t_tsc_s = 120;
    sim.seed = 0;
    FlowSynthesisSpec fs;
    fs.pattern = FlowPattern::Uniform;
    fs.total_vehicles = 25;
    fs.duration_s = 120;
    fs.seed = 2;
    flow = synthesize_flow(net, fs).flow;
    spec.n = 1;
    spec.in_dim = kAugObsDim;
    spec.hidden = 16;
    spec.out_dim = kNumPhases;
    spec.rounds = 1;
    cfg.iterations = 4;
    cfg.episodes_per_iter = 2;
    cfg.epochs = 2;
    cfg.minibatch_steps = 8;
    cfg.seed = 42;
  }

  Trainer trainer() const { return Trainer(net, sim, flow, spec, cfg); }
};

}  // namespace

// ---------------------------------------------------------------------------
// Sampling helpers

TEST_CASE("engine outputs are pinned by the standard") {
  std::mt19937_64 r;  // default seed 5489
  for (int i = 0; i < 9999; ++i) r();
  REQUIRE(r() == 9981545732273789042ULL);
}

TEST_CASE("canonical doubles stay in the half-open unit interval") {
  std::mt19937_64 rng(123);
  for (int i = 0; i < 10000; ++i) {
    double u = canonical_double(rng);
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("bounded draws cover exactly the requested range") {
  std::mt19937_64 rng(7);
  std::set<std::uint64_t> seen;
  for (int i = 0; i < 2000; ++i) seen.insert(bounded_u64(rng, 10));
  REQUIRE(seen.size() == 10);
  REQUIRE(*seen.begin() == 0);
  REQUIRE(*seen.rbegin() == 9);
  REQUIRE_THROWS_AS(bounded_u64(rng, 0), std::invalid_argument);
}

TEST_CASE("inverse-CDF categorical sampling hits the right cells") {
  const double p[3] = {0.25, 0.25, 0.5};
  REQUIRE(sample_categorical(p, 3, 0.0) == 0);
  REQUIRE(sample_categorical(p, 3, 0.2499) == 0);
  REQUIRE(sample_categorical(p, 3, 0.25) == 1);
  REQUIRE(sample_categorical(p, 3, 0.499) == 1);
  REQUIRE(sample_categorical(p, 3, 0.5) == 2);
  REQUIRE(sample_categorical(p, 3, 0.9999999) == 2);
  // Numeric slack: if the probabilities sum a hair short, the draw lands on
  // the final cell rather than out of range.
  const double q[2] = {0.3, 0.3};
  REQUIRE(sample_categorical(q, 2, 0.99) == 1);
}

TEST_CASE("weighted picks follow normalized weights and reject zero mass") {
  std::vector<double> w{1.0, 3.0};
  REQUIRE(sample_weighted(w, 0.1) == 0);
  REQUIRE(sample_weighted(w, 0.26) == 1);
  REQUIRE(sample_weighted(w, 0.99) == 1);
  std::vector<double> z{0.0, 0.0};
  REQUIRE_THROWS_AS(sample_weighted(z, 0.5), std::invalid_argument);
}

TEST_CASE("in-place shuffles are permutations and seed-deterministic") {
  std::vector<int> v(50);
  for (int i = 0; i < 50; ++i) v[static_cast<size_t>(i)] = i;
  std::mt19937_64 a(9), b(9), c(10);
  std::vector<int> va = v, vb = v, vc = v;
  shuffle_ints(va, a);
  shuffle_ints(vb, b);
  shuffle_ints(vc, c);
  REQUIRE(va == vb);
  REQUIRE(va != vc);
  std::vector<int> sorted = va;
  std::sort(sorted.begin(), sorted.end());
  REQUIRE(sorted == v);
}

// ---------------------------------------------------------------------------
// Clip bound and GAE

TEST_CASE("clip bound spot values at epsilon 0.2") {
  REQUIRE(clip_bound(1.0, 0.2) == Approx(1.2).margin(1e-15));
  REQUIRE(clip_bound(-1.0, 0.2) == Approx(-0.8).margin(1e-15));
  REQUIRE(clip_bound(0.0, 0.2) == 0.0);
  REQUIRE(clip_bound(2.5, 0.1) == Approx(2.75).margin(1e-15));
  REQUIRE(clip_bound(-2.0, 0.3) == Approx(-1.4).margin(1e-15));
}

TEST_CASE("advantage estimation reduces to one-step errors at lambda zero") {
  std::vector<double> r{1.0, -0.5, 2.0, 0.25};
  std::vector<double> v{0.3, 0.7, -0.2, 0.5};
  std::vector<double> adv, ret;
  const double gamma = 0.9;
  gae_stream(r, v, gamma, 0.0, adv, ret);
  for (size_t d = 0; d < r.size(); ++d) {
    const double v_next = d + 1 < v.size() ? v[d + 1] : 0.0;
    const double delta = r[d] + gamma * v_next - v[d];
    REQUIRE(adv[d] == Approx(delta).margin(1e-15));
    REQUIRE(ret[d] == Approx(adv[d] + v[d]).margin(1e-15));
  }
}

TEST_CASE("advantage estimation reduces to reward suffix sums in the Monte Carlo limit") {
  std::vector<double> r{1.0, 2.0, 3.0, 4.0};
  std::vector<double> v(4, 0.0);
  std::vector<double> adv, ret;
  gae_stream(r, v, 1.0, 1.0, adv, ret);
  REQUIRE(adv[3] == Approx(4.0));
  REQUIRE(adv[2] == Approx(7.0));
  REQUIRE(adv[1] == Approx(9.0));
  REQUIRE(adv[0] == Approx(10.0));
}

TEST_CASE("advantage recursion matches the quadratic-time definition") {
  std::mt19937_64 rng(31);
  const double gamma = 0.99, lambda = 0.95;
  std::vector<double> r(5), v(5);
  for (int t = 0; t < 5; ++t) {
    r[static_cast<size_t>(t)] = canonical_double(rng) * 4.0 - 2.0;
    v[static_cast<size_t>(t)] = canonical_double(rng) * 2.0 - 1.0;
  }
  std::vector<double> adv, ret;
  gae_stream(r, v, gamma, lambda, adv, ret);
  for (size_t d = 0; d < 5; ++d) {
    double expect = 0.0;
    for (size_t j = d; j < 5; ++j) {
      const double v_next = j + 1 < 5 ? v[j + 1] : 0.0;  // terminal bootstrap 0
      const double delta = r[j] + gamma * v_next - v[j];
      expect += std::pow(gamma * lambda, static_cast<double>(j - d)) * delta;
    }
    REQUIRE(adv[d] == Approx(expect).margin(1e-12));
    REQUIRE(ret[d] == Approx(adv[d] + v[d]).margin(1e-15));
  }
  std::vector<double> bad(4, 0.0);
  REQUIRE_THROWS_AS(gae_stream(r, bad, gamma, lambda, adv, ret), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Advantage normalization

namespace {

RolloutBuffer tiny_buffer(int episodes, int steps, int n, std::uint64_t seed) {
  RolloutBuffer buf;
  buf.n = n;
  buf.steps_per_episode = steps;
  buf.episodes.resize(static_cast<size_t>(episodes));
  std::mt19937_64 rng(seed);
  for (auto& ep : buf.episodes) {
    ep.resize(static_cast<size_t>(steps));
    for (auto& st : ep) {
      st.advantage.resize(static_cast<size_t>(n));
      for (double& a : st.advantage) a = canonical_double(rng) * 10.0 - 5.0;
    }
  }
  return buf;
}

}  // namespace

TEST_CASE("advantage normalization yields zero mean and unit spread") {
  RolloutBuffer buf = tiny_buffer(3, 7, 4, 17);
  auto [pre_mean, pre_sd] = normalize_advantages(buf);
  REQUIRE(pre_sd > 0.0);
  double sum = 0.0, sq = 0.0;
  size_t count = 0;
  for (auto& ep : buf.episodes) {
    for (auto& st : ep) {
      for (double a : st.advantage) {
        sum += a;
        sq += a * a;
        ++count;
      }
    }
  }
  const double mean = sum / static_cast<double>(count);
  const double sd = std::sqrt(sq / static_cast<double>(count) - mean * mean);
  REQUIRE(std::abs(mean) <= 1e-10);
  REQUIRE(std::abs(sd - 1.0) <= 1e-6);
}

TEST_CASE("degenerate advantage buffers are centered without blowing up") {
  RolloutBuffer buf = tiny_buffer(1, 4, 2, 3);
  for (auto& ep : buf.episodes) {
    for (auto& st : ep) {
      for (double& a : st.advantage) a = 2.5;
    }
  }
  auto [mean, sd] = normalize_advantages(buf);
  REQUIRE(mean == Approx(2.5));
  REQUIRE(sd == Approx(0.0).margin(1e-12));
  for (auto& ep : buf.episodes) {
    for (auto& st : ep) {
      for (double a : st.advantage) {
        REQUIRE(std::isfinite(a));
        REQUIRE(std::abs(a) < 1e-3);  // centered to ~0, divided by the floor
      }
    }
  }
}

TEST_CASE("non-finite advantages abort normalization") {
  RolloutBuffer buf = tiny_buffer(1, 3, 2, 5);
  buf.episodes[0][1].advantage[0] = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(normalize_advantages(buf), std::runtime_error);
  RolloutBuffer empty;
  REQUIRE_THROWS_AS(normalize_advantages(empty), std::logic_error);
}

// ---------------------------------------------------------------------------
// Surrogate objective

TEST_CASE("surrogate gradient equals the plain policy gradient at ratio one") {
  // With stored log-probs taken from the identical computation, the
  // probability ratio is exactly 1 and the clipped surrogate must reproduce
  // the vanilla policy-gradient loss -mean(logp * A), gradient and all.
  std::mt19937_64 rng(77);
  nn::NltscSpec spec;
  spec.n = 3;
  spec.in_dim = 10;
  spec.hidden = 8;
  spec.out_dim = 4;
  spec.rounds = 1;
  nn::NltscParams pol = nn::make_nltsc(spec, rng);
  // Give the mixing factor nonzero values so its gradient participates.
  pol.t(pol.wa[0]).value = nn::orthogonal_init(spec.n, spec.n, 0.5, rng);

  Mat obs(spec.in_dim, spec.n);
  for (int r = 0; r < obs.rows(); ++r) {
    for (int c = 0; c < obs.cols(); ++c) obs(r, c) = canonical_double(rng) * 2.0 - 1.0;
  }
  std::vector<int> actions{2, 0, 3};
  Mat adv(1, spec.n);
  adv << 1.75, -0.6, 0.3;
  Mat bound(1, spec.n);
  for (int c = 0; c < spec.n; ++c) bound(0, c) = clip_bound(adv(0, c), 0.2);

  // Stored log-probs: the exact values the surrogate's own graph computes.
  Mat old_logp_neg(1, spec.n);
  {
    nn::Graph g;
    int ls = g.log_softmax_cols(nltsc_forward(g, pol, obs));
    int lp = g.gather_rows(ls, actions);
    for (int c = 0; c < spec.n; ++c) old_logp_neg(0, c) = -g.value(lp)(0, c);
  }

  // Clipped surrogate loss.
  pol.zero_grad();
  {
    nn::Graph g;
    int ls = g.log_softmax_cols(nltsc_forward(g, pol, obs));
    int lp = g.gather_rows(ls, actions);
    int ratio = g.exp_(g.add_const(lp, old_logp_neg));
    REQUIRE(g.value(ratio).maxCoeff() == 1.0);
    REQUIRE(g.value(ratio).minCoeff() == 1.0);
    int loss = g.scale(g.mean_all(g.min_with(g.mul_const(ratio, adv), bound)), -1.0);
    g.backward(loss);
  }
  std::vector<Mat> ppo_grads;
  for (const nn::ParamTensor& t : pol.tensors) ppo_grads.push_back(t.grad);

  // Vanilla policy-gradient loss on the same data.
  pol.zero_grad();
  {
    nn::Graph g;
    int ls = g.log_softmax_cols(nltsc_forward(g, pol, obs));
    int lp = g.gather_rows(ls, actions);
    int loss = g.scale(g.mean_all(g.mul_const(lp, adv)), -1.0);
    g.backward(loss);
  }

  double max_diff = 0.0, grad_mass = 0.0;
  for (size_t i = 0; i < pol.tensors.size(); ++i) {
    max_diff = std::max(max_diff, (pol.tensors[i].grad - ppo_grads[i]).cwiseAbs().maxCoeff());
    grad_mass += pol.tensors[i].grad.cwiseAbs().sum();
  }
  REQUIRE(grad_mass > 0.0);  // the comparison is not vacuous
  REQUIRE(max_diff == 0.0);
}

namespace {

// Single-intersection two-armed bandit: constant observation, arm 0 carries
// positive advantage, arm 1 negative. Repeated update phases against frozen
// stored log-probs must push pi(arm 0) up until the ratio clips.
struct BanditRig {
  nn::NltscSpec spec;
  nn::NltscParams policy;
  nn::NltscParams value;
  Mat obs;
  RolloutBuffer buf;

  explicit BanditRig(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    spec.n = 1;
    spec.in_dim = 4;
    spec.hidden = 8;
    spec.out_dim = 2;
    spec.rounds = 0;
    policy = nn::make_nltsc(spec, rng);
    nn::NltscSpec vs = spec;
    vs.out_dim = 1;
    vs.head_gain = 1.0;
    value = nn::make_nltsc(vs, rng);
    obs = Mat(4, 1);
    obs << 0.5, -0.25, 1.0, 0.125;

    buf.n = 1;
    buf.steps_per_episode = 8;
    buf.episodes.resize(1);
    auto& ep = buf.episodes[0];
    ep.resize(8);
    Mat logits = nltsc_eval(policy, obs);
    log_softmax_columns(logits);
    for (int d = 0; d < 8; ++d) {
      RolloutStep& st = ep[static_cast<size_t>(d)];
      st.obs = obs;
      const int a = d % 2;
      st.action = {a};
      st.logp = {logits(a, 0)};
      st.advantage = {a == 0 ? 1.0 : -1.0};
      st.ret = {0.0};
      st.reward = {0.0};
      st.value = {0.0};
    }
  }

  double prob_arm0() const {
    Mat logits = nltsc_eval(policy, obs);
    const double m = std::max(logits(0, 0), logits(1, 0));
    const double e0 = std::exp(logits(0, 0) - m), e1 = std::exp(logits(1, 0) - m);
    return e0 / (e0 + e1);
  }
};

}  // namespace

TEST_CASE("repeated clipped updates grow the better arm until the ratio clips") {
  BanditRig rig(5);
  PPOConfig cfg;
  cfg.epochs = 1;
  cfg.minibatch_steps = 8;  // one full-batch step per call
  cfg.clip_eps = 0.2;
  nn::Adam opt_p, opt_v;
  std::mt19937_64 rng(99);

  const double p_init = rig.prob_arm0();
  REQUIRE(p_init == Approx(0.5).margin(0.05));  // near-uniform fresh head

  double prev = p_init;
  bool saw_full_clip = false;
  double ratio_at_clip = 0.0;
  for (int k = 0; k < 1000; ++k) {
    UpdateStats st = ppo_update(rig.buf, rig.policy, rig.value, opt_p, opt_v, cfg, 0.002, rng);
    const double p = rig.prob_arm0();
    REQUIRE(p >= prev - 1e-9);  // monotone toward the positive-advantage arm
    if (!saw_full_clip && st.clip_frac == 1.0) {
      saw_full_clip = true;
      ratio_at_clip = p / p_init;
      REQUIRE(k > 0);  // the very first update starts at ratio exactly 1
    }
    prev = p;
  }
  REQUIRE(saw_full_clip);

  // Full clipping happens just as the ratio crosses the 1.2 cap.
  REQUIRE(ratio_at_clip >= 1.15);
  REQUIRE(ratio_at_clip <= 1.5);

  // Once every sample is clipped the surrogate gradient vanishes; the ratio
  // may coast a little further on optimizer momentum but must settle near
  // the cap instead of racing toward the greedy arm.
  const double ratio_final = rig.prob_arm0() / p_init;
  REQUIRE(ratio_final >= ratio_at_clip - 1e-9);
  REQUIRE(ratio_final <= ratio_at_clip + 0.3);
}

// ---------------------------------------------------------------------------
// Trainer: rollouts

TEST_CASE("rollout buffers have the declared shape and finite contents") {
  TinySetup ts;
  Trainer tr = ts.trainer();
  RolloutBuffer buf = tr.collect_rollout(2);
  REQUIRE(buf.n == 1);
  REQUIRE(buf.steps_per_episode == ts.sim.decision_steps());
  REQUIRE(buf.episodes.size() == 2);
  REQUIRE(buf.sample_count() == 2u * 8u);
  for (auto& ep : buf.episodes) {
    REQUIRE(static_cast<int>(ep.size()) == buf.steps_per_episode);
    for (auto& st : ep) {
      REQUIRE(st.obs.rows() == kAugObsDim);
      REQUIRE(st.obs.cols() == 1);
      REQUIRE(st.action.size() == 1);
      REQUIRE(st.action[0] >= 0);
      REQUIRE(st.action[0] < kNumPhases);
      REQUIRE(std::isfinite(st.logp[0]));
      REQUIRE(st.logp[0] <= 0.0);
      REQUIRE(std::isfinite(st.reward[0]));
      REQUIRE(std::isfinite(st.value[0]));
    }
  }
  compute_gae(buf, 0.99, 0.95);
  for (auto& ep : buf.episodes) {
    for (auto& st : ep) {
      REQUIRE(std::isfinite(st.advantage[0]));
      REQUIRE(st.ret[0] == Approx(st.advantage[0] + st.value[0]).margin(1e-12));
    }
  }
}

TEST_CASE("stored action log-probabilities recompute exactly from the policy") {
  TinySetup ts;
  Trainer tr = ts.trainer();
  RolloutBuffer buf = tr.collect_rollout(2);
  for (auto& ep : buf.episodes) {
    for (auto& st : ep) {
      Mat logits = nltsc_eval(tr.policy(), st.obs);
      log_softmax_columns(logits);
      REQUIRE(same_bits(st.logp[0], logits(st.action[0], 0)));
    }
  }
}

TEST_CASE("identical seeds collect identical rollouts") {
  TinySetup ts;
  Trainer a = ts.trainer();
  Trainer b = ts.trainer();
  RolloutBuffer ba = a.collect_rollout(2);
  RolloutBuffer bb = b.collect_rollout(2);
  for (size_t e = 0; e < 2; ++e) {
    for (size_t d = 0; d < ba.episodes[e].size(); ++d) {
      const RolloutStep& x = ba.episodes[e][d];
      const RolloutStep& y = bb.episodes[e][d];
      REQUIRE(x.action == y.action);
      REQUIRE(same_bits(x.logp[0], y.logp[0]));
      REQUIRE(same_bits(x.reward[0], y.reward[0]));
      REQUIRE(same_bits(x.value[0], y.value[0]));
      REQUIRE((x.obs - y.obs).cwiseAbs().maxCoeff() == 0.0);
    }
  }

  TinySetup ts2;
  ts2.cfg.seed = 43;
  Trainer c = ts2.trainer();
  RolloutBuffer bc = c.collect_rollout(2);
  bool differs = false;
  for (size_t d = 0; d < ba.episodes[0].size() && !differs; ++d) {
    differs = ba.episodes[0][d].action != bc.episodes[0][d].action;
  }
  REQUIRE(differs);
}

// ---------------------------------------------------------------------------
// Trainer: iteration behaviour

TEST_CASE("zero training iterations leave the parameters untouched") {
  TinySetup ts;
  ts.cfg.iterations = 0;
  Trainer a = ts.trainer();
  Trainer b = ts.trainer();
  a.run();
  REQUIRE(a.iteration() == 0);
  REQUIRE(a.history().empty());
  for (size_t i = 0; i < a.policy().tensors.size(); ++i) {
    REQUIRE((a.policy().tensors[i].value - b.policy().tensors[i].value).cwiseAbs().maxCoeff() ==
            0.0);
  }
  EvalResult ev = a.evaluate();
  REQUIRE(std::isfinite(ev.value_error));
  REQUIRE(ev.value_error >= 0.0);
  REQUIRE(ev.metrics.inserted > 0);
}

TEST_CASE("learning rate decays linearly across iterations") {
  TinySetup ts;
  Trainer tr = ts.trainer();
  REQUIRE(tr.current_lr() == Approx(ts.cfg.lr));
  tr.iterate();
  REQUIRE(tr.current_lr() == Approx(ts.cfg.lr * (1.0 - 1.0 / 4.0)));
  tr.iterate();
  REQUIRE(tr.current_lr() == Approx(ts.cfg.lr * 0.5));

  TinySetup flat;
  flat.cfg.lr_decay_linear = false;
  Trainer tf = flat.trainer();
  tf.iterate();
  REQUIRE(tf.current_lr() == Approx(flat.cfg.lr));
}

TEST_CASE("one iteration updates parameters and records statistics") {
  TinySetup ts;
  Trainer a = ts.trainer();
  Trainer frozen = ts.trainer();
  IterationStats st = a.iterate();
  REQUIRE(st.iteration == 0);
  REQUIRE(std::isfinite(st.policy_loss));
  REQUIRE(std::isfinite(st.value_loss));
  REQUIRE(st.value_loss >= 0.0);
  REQUIRE(st.clip_frac >= 0.0);
  REQUIRE(st.clip_frac <= 1.0);
  REQUIRE(st.entropy >= 0.0);
  REQUIRE(st.entropy <= std::log(4.0) + 1e-9);
  REQUIRE(std::isfinite(st.value_error));
  bool moved = false;
  for (size_t i = 0; i < a.policy().tensors.size() && !moved; ++i) {
    moved = (a.policy().tensors[i].value - frozen.policy().tensors[i].value)
                .cwiseAbs()
                .maxCoeff() > 0.0;
  }
  REQUIRE(moved);
  REQUIRE(a.history().size() == 1);
}

TEST_CASE("training runs are seed-reproducible end to end") {
  TinySetup ts;
  ts.cfg.iterations = 3;
  Trainer a = ts.trainer();
  Trainer b = ts.trainer();
  a.run();
  b.run();
  REQUIRE(a.history().size() == 3);
  REQUIRE(b.history().size() == 3);
  for (size_t k = 0; k < 3; ++k) {
    REQUIRE(same_bits(a.history()[k].policy_loss, b.history()[k].policy_loss));
    REQUIRE(same_bits(a.history()[k].value_loss, b.history()[k].value_loss));
    REQUIRE(same_bits(a.history()[k].clip_frac, b.history()[k].clip_frac));
    REQUIRE(same_bits(a.history()[k].entropy, b.history()[k].entropy));
    REQUIRE(same_bits(a.history()[k].eval_travel_time, b.history()[k].eval_travel_time));
    REQUIRE(same_bits(a.history()[k].value_error, b.history()[k].value_error));
  }
  for (size_t i = 0; i < a.policy().tensors.size(); ++i) {
    REQUIRE((a.policy().tensors[i].value - b.policy().tensors[i].value).cwiseAbs().maxCoeff() ==
            0.0);
  }
  REQUIRE(std::isfinite(a.final_metric()));
}

// ---------------------------------------------------------------------------
// Checkpointing

TEST_CASE("interrupted training resumes bit-identically from a checkpoint") {
  TinySetup ts;
  const std::string path = "ppo_resume_test.ckpt";

  Trainer full = ts.trainer();
  full.run();  // 4 iterations straight through

  Trainer half = ts.trainer();
  half.iterate();
  half.iterate();
  half.save_checkpoint(path);

  Trainer resumed = ts.trainer();
  resumed.load_checkpoint(path);
  REQUIRE(resumed.iteration() == 2);
  REQUIRE(resumed.history().size() == 2);
  resumed.run();  // iterations 2 and 3
  std::remove(path.c_str());

  REQUIRE(resumed.iteration() == 4);
  REQUIRE(resumed.history().size() == 4);
  for (size_t k = 0; k < 4; ++k) {
    REQUIRE(same_bits(full.history()[k].policy_loss, resumed.history()[k].policy_loss));
    REQUIRE(same_bits(full.history()[k].value_loss, resumed.history()[k].value_loss));
    REQUIRE(same_bits(full.history()[k].clip_frac, resumed.history()[k].clip_frac));
    REQUIRE(same_bits(full.history()[k].entropy, resumed.history()[k].entropy));
    REQUIRE(same_bits(full.history()[k].eval_travel_time, resumed.history()[k].eval_travel_time));
    REQUIRE(same_bits(full.history()[k].value_error, resumed.history()[k].value_error));
  }
  for (size_t i = 0; i < full.policy().tensors.size(); ++i) {
    REQUIRE((full.policy().tensors[i].value - resumed.policy().tensors[i].value)
                .cwiseAbs()
                .maxCoeff() == 0.0);
  }
  for (size_t i = 0; i < full.value().tensors.size(); ++i) {
    REQUIRE((full.value().tensors[i].value - resumed.value().tensors[i].value)
                .cwiseAbs()
                .maxCoeff() == 0.0);
  }
}

TEST_CASE("checkpoint loading rejects damaged or mismatched files") {
  TinySetup ts;
  const std::string path = "ppo_ckpt_damage_test.ckpt";
  Trainer tr = ts.trainer();
  tr.iterate();
  tr.save_checkpoint(path);

  SECTION("missing file") {
    Trainer fresh = ts.trainer();
    REQUIRE_THROWS_WITH(fresh.load_checkpoint("no_such_file.ckpt"),
                        Catch::Matchers::ContainsSubstring("cannot open"));
  }

  SECTION("truncated file") {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string body = ss.str();
    std::ofstream out(path);
    out << body.substr(0, body.size() / 2);
    out.close();
    Trainer fresh = ts.trainer();
    REQUIRE_THROWS(fresh.load_checkpoint(path));
  }

  SECTION("tampered tensor name") {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string body = ss.str();
    const size_t at = body.find("\nembed_w ");
    REQUIRE(at != std::string::npos);
    body.replace(at, 9, "\nembed_x ");
    std::ofstream out(path);
    out << body;
    out.close();
    Trainer fresh = ts.trainer();
    REQUIRE_THROWS_WITH(fresh.load_checkpoint(path),
                        Catch::Matchers::ContainsSubstring("manifest mismatch") &&
                            Catch::Matchers::ContainsSubstring("embed_w"));
  }

  SECTION("network of a different size") {
    RoadNetwork big = build_grid_network(2, 2, 300.0);
    FlowSynthesisSpec fs;
    fs.total_vehicles = 10;
    fs.duration_s = 120;
    fs.seed = 1;
    nn::NltscSpec spec = ts.spec;
    spec.n = 4;
    Trainer other(big, ts.sim, synthesize_flow(big, fs).flow, spec, ts.cfg);
    REQUIRE_THROWS_WITH(other.load_checkpoint(path),
                        Catch::Matchers::ContainsSubstring("manifest mismatch"));
  }

  std::remove(path.c_str());
}

// ---------------------------------------------------------------------------
// Curve files

TEST_CASE("training curves round-trip through the CSV schema") {
  std::vector<IterationStats> hist(3);
  std::mt19937_64 rng(55);
  for (int k = 0; k < 3; ++k) {
    IterationStats& s = hist[static_cast<size_t>(k)];
    s.iteration = k;
    s.policy_loss = canonical_double(rng) - 0.5;
    s.value_loss = canonical_double(rng);
    s.clip_frac = canonical_double(rng);
    s.entropy = canonical_double(rng);
    s.eval_travel_time = 100.0 + canonical_double(rng) * 50.0;
    s.value_error = canonical_double(rng) * 3.0;
  }
  const std::string path = "ppo_curves_test.csv";
  save_training_curves(path, hist);
  std::ifstream in(path);
  std::string header;
  REQUIRE(std::getline(in, header));
  REQUIRE(header == "iteration,policy_loss,value_loss,clip_frac,entropy,eval_travel_time");
  for (int k = 0; k < 3; ++k) {
    std::string line;
    REQUIRE(std::getline(in, line));
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    int it = -1;
    double pl, vl, cf, en, tt;
    row >> it >> pl >> vl >> cf >> en >> tt;
    REQUIRE(it == k);
    const IterationStats& s = hist[static_cast<size_t>(k)];
    REQUIRE(same_bits(pl, s.policy_loss));
    REQUIRE(same_bits(vl, s.value_loss));
    REQUIRE(same_bits(cf, s.clip_frac));
    REQUIRE(same_bits(en, s.entropy));
    REQUIRE(same_bits(tt, s.eval_travel_time));
  }
  std::string extra;
  REQUIRE_FALSE(std::getline(in, extra));
  in.close();
  std::remove(path.c_str());

  const std::string vpath = "ppo_value_error_test.csv";
  save_value_error_curve(vpath, hist);
  std::ifstream vin(vpath);
  REQUIRE(std::getline(vin, header));
  REQUIRE(header == "iteration,value_error");
  for (int k = 0; k < 3; ++k) {
    std::string line;
    REQUIRE(std::getline(vin, line));
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    int it = -1;
    double ve;
    row >> it >> ve;
    REQUIRE(it == k);
    REQUIRE(same_bits(ve, hist[static_cast<size_t>(k)].value_error));
  }
  vin.close();
  std::remove(vpath.c_str());
}

TEST_CASE("training configuration validation rejects bad hyperparameters") {
  PPOConfig c;
  REQUIRE_NOTHROW(c.validate());
  c.clip_eps = 0.0;
  REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
  c.clip_eps = 0.2;
  c.gamma = 1.0;
  REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
  c.gamma = 0.99;
  c.gae_lambda = 1.5;
  REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
  c.gae_lambda = 0.95;
  c.lr = 0.0;
  REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
  c.lr = 3e-4;
  c.minibatch_steps = 0;
  REQUIRE_THROWS_AS(c.validate(), std::invalid_argument);
  c.minibatch_steps = 64;
  REQUIRE(reward_kind_from_name("stt") == RewardKind::Stt);
  REQUIRE(reward_kind_name(RewardKind::Timeloss) == "timeloss");
  REQUIRE_THROWS_AS(reward_kind_from_name("bogus"), std::invalid_argument);
}
