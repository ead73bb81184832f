#pragma once

#include "mberil/common.hpp"
#include "mberil/rng.hpp"

#include <deque>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace mberil {

/// Finite MDP with a state-only reward. Transition rows are stored as a
/// (n_states*n_actions) x n_states matrix indexed by sa_index(x, u).
struct TabularMdp {
    int n_states = 0;
    int n_actions = 0;
    Mat transition;    // (S*A) x S, each row a distribution over next states
    Vec reward;        // S
    double discount = 0.9;
    Vec initial_dist;  // S

    int sa(int x, int u) const { return sa_index(x, u, n_actions); }

    void validate() const;

    static TabularMdp load(const std::string& path);
    void save(const std::string& path) const;

    /// Random dense MDP with rows drawn from a symmetric Dirichlet.
    static TabularMdp random(int n_states, int n_actions, double gamma, Rng& rng);

    /// width x height gridworld, 4 actions (up/down/left/right), absorbing
    /// goal at the last cell with reward 1, start at cell 0. Any remaining
    /// probability mass slips to the cell opposite the intended move.
    static TabularMdp gridworld(int width, int height, double p_intended = 0.90,
                                double p_stay = 0.10, double gamma = 0.9);

    /// Two-state chain used by the analytic sampler and solver checks.
    static TabularMdp chain2(double p_advance, double gamma = 0.9);
};

/// Desk-scale continuous environment: function-valued dynamics plus
/// componentwise action clamping applied before every step.
struct ContinuousEnv {
    int state_dim = 0;
    int action_dim = 0;
    Vec action_low;   // per-dimension bounds
    Vec action_high;
    std::function<Vec(const Vec& x, const Vec& u, Rng&)> dynamics;
    std::function<double(const Vec& x)> reward;
    std::function<Vec(Rng&)> initial_sampler;

    Vec clamp_action(const Vec& u) const;
    void validate() const;
};

/// 2-D point mass: x' = x + 0.1*u + noise, goal-distance reward.
ContinuousEnv make_point_mass(Vec goal = Vec::Zero(2), double noise_std = 0.05);

using Env = std::variant<TabularMdp, ContinuousEnv>;

int env_state_dim(const Env& env);
int env_action_dim(const Env& env);
double env_reward(const Env& env, const Vec& x);
Vec env_initial(const Env& env, Rng& rng);

struct Transition {
    Vec x;
    Vec u;
    Vec x_next;

    static Transition tabular(int x, int u, int x_next);

    // Integer views for tabular data.
    int xi() const { return static_cast<int>(x[0]); }
    int ui() const { return static_cast<int>(u[0]); }
    int xni() const { return static_cast<int>(x_next[0]); }

    bool finite() const;
};

struct Trajectory {
    std::vector<Transition> transitions;

    int horizon() const { return static_cast<int>(transitions.size()); }
    /// Consecutive transitions chain: x_next of step t equals x of step t+1.
    bool chained() const;
};

enum class BufferRole { Expert, RealLearner, Simulated };

std::string to_string(BufferRole role);
BufferRole buffer_role_from_string(const std::string& s);

/// Replay buffer of (x, u, x') triples. Uniform sampling with replacement;
/// FIFO eviction when a capacity is set.
class TransitionBuffer {
public:
    explicit TransitionBuffer(BufferRole role = BufferRole::Expert,
                              std::optional<std::size_t> capacity = std::nullopt)
        : role_(role), capacity_(capacity) {}

    BufferRole role() const { return role_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const Transition& at(std::size_t i) const { return entries_[i]; }

    void push(Transition t);
    const Transition& sample_one(Rng& rng) const;
    std::vector<Transition> sample(std::size_t n, Rng& rng) const;

    void save_csv(const std::string& path) const;
    static TransitionBuffer load_csv(const std::string& path);

private:
    BufferRole role_;
    std::optional<std::size_t> capacity_;
    std::deque<Transition> entries_;
};

/// Samples one transition pooled uniformly over the union of two buffers
/// (per-entry uniform, so larger buffers carry proportionally more weight).
const Transition& sample_union(const TransitionBuffer& a, const TransitionBuffer& b, Rng& rng);
std::vector<Transition> sample_union(const TransitionBuffer& a, const TransitionBuffer& b,
                                     std::size_t n, Rng& rng);

// StochasticMap is defined in approx.hpp; forward declared here so the
// environment operations can take policies without a header cycle.
class StochasticMap;

Vec step(const TabularMdp& env, const Vec& x, const Vec& u, Rng& rng);
Vec step(const ContinuousEnv& env, const Vec& x, const Vec& u, Rng& rng);
Vec step(const Env& env, const Vec& x, const Vec& u, Rng& rng);

Trajectory rollout(const Env& env, const StochasticMap& policy, int horizon, Rng& rng);

/// State drawn from the discounted visitation distribution of (policy, env),
/// realized by restarting from the initial distribution with probability
/// 1 - gamma before each step.
Vec sample_discounted_state(const Env& env, const StochasticMap& policy, double gamma, Rng& rng);

}  // namespace mberil
