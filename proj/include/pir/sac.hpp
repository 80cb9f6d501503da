#pragma once

// Soft actor-critic over the scalar heading. The agent state is the frozen
// encoder's latent followed by the scaled target-relative position; with no
// encoder the same code is the naive baseline that sees (dx, dy) only.

#include "pir/checkpoint.hpp"
#include "pir/envsim.hpp"
#include "pir/pir.hpp"
#include "pir/tensorcore.hpp"

#include <functional>
#include <vector>

namespace pir {

struct SacConfig {
  std::vector<int> hidden = {64, 64};
  double lr_actor = 3e-4;
  double lr_critic = 3e-4;
  double lr_alpha = 3e-4;
  double gamma = 0.99;
  double tau = 0.005;
  double alpha = 0.2;
  bool auto_alpha = false;
  double target_entropy = -1.0;
  int batch_size = 256;
  int warmup = 1000;
  std::size_t capacity = 100000;
  double delta_scale = 0.25;  // applied to (dx, dy) before they enter the state

  void validate() const;
};

Json sac_config_to_json(const SacConfig& c);
SacConfig sac_config_from_json(const Json& doc, SacConfig base = {});

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

struct SacAgent {
  int state_dim = 0;
  SacConfig config;
  Mlp<double> policy;  // state -> (mean, log-std) before the tanh squash
  Mlp<double> q1, q2;  // (state, heading / pi) -> Q
  Mlp<double> q1_target, q2_target;
  double log_alpha = 0;
  AdamState<double> opt_policy, opt_q1, opt_q2;
  // Scalar Adam moments for log_alpha.
  double alpha_m = 0, alpha_v = 0;
  std::int64_t alpha_steps = 0;

  static SacAgent create(int state_dim, const SacConfig& cfg, std::uint64_t seed);
  double alpha() const { return std::exp(log_alpha); }
};

/// Heading in [-pi, pi]: pi * tanh(mean) when deterministic, else a
/// reparameterized sample.
double select_action(const SacAgent& agent, const VectorXd& state, bool deterministic, Rng& rng);
/// Same rule applied to a bare policy network.
double policy_action(const Mlp<double>& policy, const VectorXd& state);

struct Transition {
  VectorXd state;
  double action = 0;
  double reward = 0;
  VectorXd next_state;
  bool done = false;  // success or out of bounds; timeouts stay bootstrapped
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return data_.at(i); }
  /// Uniform indices with replacement; requires size() >= n.
  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> data_;
};

struct SacBatch {
  MatrixXd state, next_state;  // state_dim x B
  VectorXd action, reward, done;

  static SacBatch gather(const ReplayBuffer& buf, const std::vector<std::size_t>& idx);
  int size() const { return static_cast<int>(action.size()); }
};

struct SacLosses {
  double critic = 0;  // mean over both critics
  double actor = 0;
  double alpha = 0;
  double entropy = 0;  // -mean log pi of the fresh policy samples
  VectorXd targets;
};

/// Mean of alpha * log pi(a|s) - min(Q1, Q2)(s, a) over fresh reparameterized
/// samples; optionally its policy gradient and the sample log-densities.
double actor_objective(const SacAgent& agent, const MatrixXd& states, Rng& rng, ParamSet<double>* grad = nullptr,
                       Eigen::ArrayXd* logp = nullptr);

/// One critic, actor, temperature and target step.
SacLosses sac_update(SacAgent& agent, const SacBatch& batch, Rng& rng);

/// target <- tau * online + (1 - tau) * target, element by element.
void soft_update(Mlp<double>& target, const Mlp<double>& online, double tau);

/// z (if an encoder is given) followed by delta * scale.
VectorXd make_state(const PirModel* encoder, const Observation& obs, const std::array<double, 2>& delta,
                    double delta_scale);
int state_dim_for(const PirModel* encoder);

struct RlTrainConfig {
  int episodes = 1000;
  int checkpoints = 100;
  std::uint64_t seed = 0;
};

struct RlHistoryRow {
  int episode = 0;
  double ret = 0;
  bool success = false;
  int steps = 0;
};

struct PolicyCheckpoint {
  int episode = 0;  // saved after this episode
  Mlp<double> policy;
  double delta_scale = 0.25;
};

struct RlTrainResult {
  SacAgent agent;
  std::vector<RlHistoryRow> history;
  std::vector<PolicyCheckpoint> checkpoints;
};

/// Episode indices (0-based) after which checkpoints are taken: floor((k+1) M / K) - 1.
std::vector<int> checkpoint_episodes(int episodes, int count);

RlTrainResult train_rl(const EnvConfig& env_cfg, const PirModel* encoder, SacAgent agent, const RlTrainConfig& cfg);

/// Heading from the agent state and the raw target-relative position.
using Policy = std::function<double(const VectorXd& state, const std::array<double, 2>& delta)>;

struct EvalReport {
  double mean_return = 0;
  double success_rate = 0;
  int n_episodes = 0;
  std::uint64_t seed = 0;
};

Json eval_report_to_json(const EvalReport& r);

EvalReport evaluate_policy(const EnvConfig& env_cfg, const PirModel* encoder, const Policy& policy, int n_episodes,
                           std::uint64_t seed, double delta_scale);
Policy deterministic_policy(const Mlp<double>& policy);
/// Always heads straight for the target.
Policy aim_at_target_policy();

Json sac_agent_to_json(const SacAgent& agent);
SacAgent sac_agent_from_json(const Json& doc);
Json policy_checkpoint_to_json(const PolicyCheckpoint& ck);
PolicyCheckpoint policy_checkpoint_from_json(const Json& doc);

}  // namespace pir
