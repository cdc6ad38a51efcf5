#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fhsync/nn.hpp"
#include "fhsync/rl_env.hpp"

namespace fhsync {

struct PpoHyper {
  double gamma = 0.99;
  int update_interval = 128;
  double actor_lr = 0.0005;
  double critic_lr = 0.001;
  double clip_ratio = 0.1;
  double gae_lambda = 0.95;
  int epochs = 3;
  double explore_eps = 0.1;
  double explore_decay = 0.995;
  double explore_min = 0.01;
  int minibatch = 32;
  bool normalize_advantages = true;

  void validate() const {
    if (!(gamma >= 0 && gamma < 1)) throw ConfigError("gamma must lie in [0,1)");
    if (!(gae_lambda >= 0 && gae_lambda <= 1)) throw ConfigError("gae_lambda must lie in [0,1]");
    if (!(clip_ratio > 0)) throw ConfigError("clip_ratio must be positive");
    if (update_interval < 1 || epochs < 1 || minibatch < 1) throw ConfigError("batch sizes must be positive");
    if (!(actor_lr > 0 && critic_lr > 0)) throw ConfigError("learning rates must be positive");
    if (!(explore_eps >= 0 && explore_eps <= 1 && explore_min >= 0 && explore_decay > 0 && explore_decay <= 1))
      throw ConfigError("exploration schedule out of range");
  }
};

inline std::vector<double> softmax(const double* logits, int n) {
  const double mx = *std::max_element(logits, logits + n);
  std::vector<double> p(static_cast<std::size_t>(n));
  double z = 0;
  for (int i = 0; i < n; ++i) z += (p[static_cast<std::size_t>(i)] = std::exp(logits[i] - mx));
  for (auto& v : p) v /= z;
  return p;
}

inline double log_softmax_at(const double* logits, int n, int k) {
  const double mx = *std::max_element(logits, logits + n);
  double z = 0;
  for (int i = 0; i < n; ++i) z += std::exp(logits[i] - mx);
  return logits[k] - mx - std::log(z);
}

struct ActionChoice {
  SyncAction action = SyncAction::Hold;
  double log_prob = 0.0;
};

inline void require_finite_logits(const Mat& logits) {
  if (!logits.allFinite()) {
    std::ostringstream os;
    os << "non-finite policy logits:";
    for (Eigen::Index i = 0; i < logits.size(); ++i) os << ' ' << logits.data()[i];
    throw DivergenceError(os.str());
  }
}

// Epsilon-greedy over the softmax policy. The stored log-probability is the
// policy's, not the mixture's.
inline ActionChoice select_action_from_logits(const Mat& logits, double explore_eps, Rng& rng) {
  require_finite_logits(logits);
  const int n = static_cast<int>(logits.cols());
  int a;
  if (rng.uniform() < explore_eps) {
    a = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
  } else {
    const auto p = softmax(logits.data(), n);
    const double u = rng.uniform();
    double acc = 0;
    a = n - 1;
    for (int i = 0; i < n; ++i) {
      acc += p[static_cast<std::size_t>(i)];
      if (u < acc) {
        a = i;
        break;
      }
    }
  }
  return {static_cast<SyncAction>(a), log_softmax_at(logits.data(), n, a)};
}

inline ActionChoice select_action(Network& actor, const EnvState& s, double explore_eps, Rng& rng) {
  return select_action_from_logits(actor.forward_states({&s.samples_sq}), explore_eps, rng);
}

inline SyncAction greedy_action(Network& actor, const EnvState& s) {
  const Mat l = actor.forward_states({&s.samples_sq});
  require_finite_logits(l);
  Eigen::Index k;
  l.row(0).maxCoeff(&k);
  return static_cast<SyncAction>(k);
}

struct TrajStep {
  EnvState state;
  SyncAction action = SyncAction::Hold;
  double reward = 0.0;
  double value = 0.0;
  double log_prob = 0.0;
  bool terminated = false;  // absorbing: no bootstrap
  bool truncated = false;   // episode ends here but bootstraps from next_value
  double next_value = 0.0;
};
using Trajectory = std::vector<TrajStep>;

struct AdvantageEstimate {
  std::vector<double> advantages;
  std::vector<double> returns;
  std::vector<double> normalized;
};

// delta_t = R_t + gamma V(s_{t+1}) (1 - terminated_t) - V(s_t), summed with
// weight (gamma lambda)^k up to the next episode boundary. V(s_{t+1}) is the
// next step's value inside an episode, next_value at a truncation, and
// bootstrap_value after the last step.
inline AdvantageEstimate compute_gae(const Trajectory& traj, double gamma, double lambda, double bootstrap_value) {
  const std::size_t n = traj.size();
  AdvantageEstimate out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const auto& s = traj[i];
    const bool boundary = s.terminated || s.truncated;
    double v_next;
    if (s.terminated)
      v_next = 0.0;
    else if (s.truncated)
      v_next = s.next_value;
    else
      v_next = i + 1 < n ? traj[i + 1].value : bootstrap_value;
    const double delta = s.reward + gamma * v_next - s.value;
    running = delta + (boundary ? 0.0 : gamma * lambda * running);
    out.advantages[i] = running;
    out.returns[i] = running + s.value;
  }
  out.normalized = out.advantages;
  if (n > 0) {
    const double mean = std::accumulate(out.advantages.begin(), out.advantages.end(), 0.0) / static_cast<double>(n);
    double var = 0;
    for (double a : out.advantages) var += (a - mean) * (a - mean);
    const double sd = std::max(std::sqrt(var / static_cast<double>(n)), 1e-8);
    for (auto& a : out.normalized) a = (a - mean) / sd;
  }
  return out;
}

inline double clipped_surrogate(double log_prob_new, double log_prob_old, double advantage, double clip_ratio) {
  const double r = std::exp(log_prob_new - log_prob_old);
  return std::min(r * advantage, std::clamp(r, 1.0 - clip_ratio, 1.0 + clip_ratio) * advantage);
}

struct UpdateStats {
  double actor_loss = 0.0;  // negated mean surrogate, last epoch
  double critic_loss = 0.0;
  double first_epoch_surrogate = 0.0;
  double max_initial_ratio_error = 0.0;
  double clip_fraction = 0.0;
  int minibatches = 0;
};

struct PpoLearner {
  Network actor;
  Network critic;
  AdamState actor_opt;
  AdamState critic_opt;
  double explore_eps = 0.1;

  PpoLearner() = default;
  PpoLearner(const NetworkConfig& base, const PpoHyper& h, std::uint64_t seed) {
    NetworkConfig a = base, c = base;
    a.outputs = kNumActions;
    c.outputs = 1;
    actor = Network(a, hash_values(seed, 0xac7ULL));
    critic = Network(c, hash_values(seed, 0xc217ULL));
    reset_optimizers(h);
  }
  void reset_optimizers(const PpoHyper& h) {
    actor_opt = make_adam(actor, h.actor_lr);
    critic_opt = make_adam(critic, h.critic_lr);
    explore_eps = h.explore_eps;
  }
  double value(const EnvState& s) { return critic.forward_states({&s.samples_sq})(0, 0); }
};

// Per-sample log-probabilities of the taken actions under the current actor.
inline std::vector<double> policy_log_probs(Network& actor, const Trajectory& traj, const std::vector<std::size_t>& idx) {
  std::vector<const std::vector<double>*> xs;
  for (auto i : idx) xs.push_back(&traj[i].state.samples_sq);
  const Mat l = actor.forward_states(xs);
  require_finite_logits(l);
  std::vector<double> out;
  for (std::size_t r = 0; r < idx.size(); ++r)
    out.push_back(log_softmax_at(l.row(static_cast<Eigen::Index>(r)).data(), kNumActions,
                                 static_cast<int>(traj[idx[r]].action)));
  return out;
}

// Clipped-surrogate actor step and value regression over `epochs` shuffled
// passes; decays the exploration rate once.
inline UpdateStats ppo_update(PpoLearner& L, const Trajectory& traj, const AdvantageEstimate& adv, const PpoHyper& h,
                              Rng& rng) {
  h.validate();
  UpdateStats st;
  const std::size_t n = traj.size();
  if (n == 0) return st;
  const auto& A = h.normalize_advantages ? adv.normalized : adv.advantages;
  const Network actor_backup = L.actor, critic_backup = L.critic;
  const AdamState aopt = L.actor_opt, copt = L.critic_opt;
  auto abort = [&](const std::string& why) {
    L.actor = actor_backup;
    L.critic = critic_backup;
    L.actor_opt = aopt;
    L.critic_opt = copt;
    throw DivergenceError(why);
  };
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t mb = static_cast<std::size_t>(h.minibatch);
  int clipped = 0, counted = 0;
  for (int ep = 0; ep < h.epochs; ++ep) {
    // Fisher-Yates with our own generator so the order is reproducible
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double aloss = 0, closs = 0;
    for (std::size_t s0 = 0; s0 < n; s0 += mb) {
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(s0),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(n, s0 + mb)));
      const int B = static_cast<int>(idx.size());
      std::vector<const std::vector<double>*> xs;
      for (auto i : idx) xs.push_back(&traj[i].state.samples_sq);

      L.actor.zero_grad();
      const Mat logits = L.actor.forward_states(xs);
      if (!logits.allFinite()) abort("non-finite policy logits during update");
      Mat dlogits = Mat::Zero(B, kNumActions);
      for (int r = 0; r < B; ++r) {
        const auto& s = traj[idx[static_cast<std::size_t>(r)]];
        const double a_hat = A[idx[static_cast<std::size_t>(r)]];
        const double lp = log_softmax_at(logits.row(r).data(), kNumActions, static_cast<int>(s.action));
        const double ratio = std::exp(lp - s.log_prob);
        if (ep == 0 && s0 == 0) st.max_initial_ratio_error = std::max(st.max_initial_ratio_error, std::abs(ratio - 1.0));
        if (ep == 0) st.first_epoch_surrogate += clipped_surrogate(lp, s.log_prob, a_hat, h.clip_ratio) / static_cast<double>(n);
        const double obj = clipped_surrogate(lp, s.log_prob, a_hat, h.clip_ratio);
        aloss -= obj / static_cast<double>(n);
        ++counted;
        // gradient flows only through the unclipped branch
        const bool active = ratio * a_hat <= std::clamp(ratio, 1.0 - h.clip_ratio, 1.0 + h.clip_ratio) * a_hat;
        if (!active) {
          ++clipped;
          continue;
        }
        const auto p = softmax(logits.row(r).data(), kNumActions);
        const double g = -ratio * a_hat / static_cast<double>(B);
        for (int k = 0; k < kNumActions; ++k)
          dlogits(r, k) = g * ((k == static_cast<int>(s.action) ? 1.0 : 0.0) - p[static_cast<std::size_t>(k)]);
      }
      L.actor.backward(dlogits);
      adam_update(L.actor_opt, L.actor);

      L.critic.zero_grad();
      const Mat v = L.critic.forward_states(xs);
      Mat dv(B, 1);
      for (int r = 0; r < B; ++r) {
        const double e = v(r, 0) - adv.returns[idx[static_cast<std::size_t>(r)]];
        closs += e * e / static_cast<double>(n);
        dv(r, 0) = 2.0 * e / static_cast<double>(B);
      }
      L.critic.backward(dv);
      adam_update(L.critic_opt, L.critic);
      ++st.minibatches;
    }
    if (!std::isfinite(aloss) || !std::isfinite(closs)) abort("non-finite PPO loss");
    st.actor_loss = aloss;
    st.critic_loss = closs;
  }
  if (!L.actor.all_finite() || !L.critic.all_finite()) abort("non-finite parameters after update");
  st.clip_fraction = counted ? static_cast<double>(clipped) / counted : 0.0;
  L.explore_eps = std::max(h.explore_min, L.explore_eps * h.explore_decay);
  return st;
}

// ---- training loop ------------------------------------------------------

struct TrainCurveEntry {
  int episode = 0;
  std::int64_t steps = 0;  // env steps so far, including this episode
  double mean_reward = 0.0;
  double final_reward = 0.0;
  double explore_eps = 0.0;
  bool synchronized = false;
};

struct TrainOptions {
  double snr_min_db = 0.0;
  double snr_max_db = 20.0;
  bool noisy = true;
  int max_steps = 200;
  double shift_interval_s = 20e-6;
  NetworkConfig network{};
  // overrides the episode draw (tests inject residuals here)
  std::function<EpisodeConfig(std::uint64_t episode_seed, Rng& rng)> episode_sampler{};
  std::function<void(const TrainCurveEntry&)> on_episode{};
};

struct TrainResult {
  PpoLearner learner;
  std::vector<TrainCurveEntry> curve;
  std::int64_t steps = 0;
  int setup_failures = 0;
  int updates = 0;
};

inline EpisodeConfig default_episode(const TrainOptions& o, std::uint64_t seed, Rng& rng) {
  EpisodeConfig c;
  c.seed = seed;
  c.snr_db = rng.uniform(o.snr_min_db, o.snr_max_db);
  c.noisy = o.noisy;
  c.max_steps = o.max_steps;
  c.shift_interval_s = o.shift_interval_s;
  return c;
}

inline TrainResult train(const LinkConfig& link, const PpoHyper& h, std::int64_t total_steps, std::uint64_t seed,
                         const TrainOptions& opt = {}) {
  h.validate();
  if (total_steps < 0) throw ConfigError("total steps must be >= 0");
  if (opt.snr_max_db < opt.snr_min_db) throw ConfigError("snr range is reversed");
  TrainResult res;
  res.learner = PpoLearner(opt.network, h, seed);
  if (total_steps == 0) return res;
  auto& L = res.learner;
  SyncEnvironment env(link);
  Rng rng(hash_values(seed, 0x7a11ULL));
  Rng upd_rng(hash_values(seed, 0x0bd7ULL));
  std::uint64_t episode_counter = 0;

  auto start_episode = [&]() -> EnvState {
    for (;;) {
      const std::uint64_t es = hash_values(seed, 0xe915ULL, episode_counter++);
      const auto cfg = opt.episode_sampler ? opt.episode_sampler(es, rng) : default_episode(opt, es, rng);
      try {
        return env.reset(cfg);
      } catch (const EpisodeSetupError&) {
        ++res.setup_failures;
      }
    }
  };

  EnvState s = start_episode();
  double ep_reward = 0.0;
  int ep_len = 0;
  Trajectory traj;
  traj.reserve(static_cast<std::size_t>(h.update_interval));
  while (res.steps < total_steps) {
    const auto choice = select_action(L.actor, s, L.explore_eps, rng);
    TrajStep t;
    t.state = s;
    t.action = choice.action;
    t.log_prob = choice.log_prob;
    t.value = L.value(s);
    const auto o = env.step(choice.action);
    ++res.steps;
    t.reward = o.reward;
    ep_reward += o.reward;
    ++ep_len;
    if (o.terminated) {
      // the link keeps tracking after sync and the cap is arbitrary: both
      // end the episode without making it absorbing
      t.truncated = true;
      t.next_value = L.value(o.next_state);
      TrainCurveEntry e;
      e.episode = static_cast<int>(res.curve.size());
      e.steps = res.steps;
      e.mean_reward = ep_reward / ep_len;
      e.final_reward = o.reward;
      e.explore_eps = L.explore_eps;
      e.synchronized = o.synchronized;
      res.curve.push_back(e);
      if (opt.on_episode) opt.on_episode(e);
      ep_reward = 0.0;
      ep_len = 0;
      s = start_episode();
    } else {
      s = o.next_state;
    }
    traj.push_back(std::move(t));
    if (static_cast<int>(traj.size()) == h.update_interval || res.steps == total_steps) {
      const double boot = traj.back().truncated ? 0.0 : L.value(s);
      const auto adv = compute_gae(traj, h.gamma, h.gae_lambda, boot);
      ppo_update(L, traj, adv, h, upd_rng);
      ++res.updates;
      traj.clear();
    }
  }
  return res;
}

inline void save_checkpoint(const std::string& path, PpoLearner& L) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write checkpoint " + path);
  write_network(f, L.actor);
  write_network(f, L.critic);
  if (!f) throw ConfigError("failed writing checkpoint " + path);
}

inline PpoLearner load_checkpoint(const std::string& path, const PpoHyper& h = {}) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("checkpoint not found: " + path);
  PpoLearner L;
  try {
    L.actor = read_network(f);
    L.critic = read_network(f);
  } catch (const DomainError& e) {
    throw ConfigError(std::string("bad checkpoint ") + path + ": " + e.what());
  }
  L.reset_optimizers(h);
  return L;
}

inline void write_curve_csv(std::ostream& os, const std::vector<TrainCurveEntry>& curve) {
  os << "episode,steps,mean_reward,explore_eps\n";
  char buf[128];
  for (const auto& e : curve) {
    std::snprintf(buf, sizeof buf, "%d,%lld,%.10g,%.10g\n", e.episode, static_cast<long long>(e.steps), e.mean_reward,
                  e.explore_eps);
    os << buf;
  }
}

}  // namespace fhsync
