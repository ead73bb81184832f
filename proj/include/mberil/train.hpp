#pragma once

#include "mberil/approx.hpp"
#include "mberil/config.hpp"
#include "mberil/losses.hpp"
#include "mberil/mdp.hpp"
#include "mberil/oracle.hpp"

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mberil {

enum class Variant { MbEril, Ermbc, MbErilNoPe, DynaMfEril, MfEril, Bc };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
const std::vector<Variant>& all_variants();

/// True when the variant maintains a learned model q.
bool variant_has_model(Variant v);

struct Schedule {
    int iterations = 50;
    int n_real = 100;       // transitions collected in the real environment per iteration
    int n_sim = 10000;      // transitions collected in the learned model per call
    int disc_steps = 50;    // discriminator (or its ERMBC / BC replacement) gradient steps
    int pe_steps = 100;     // policy-evaluation gradient steps
    int improve_steps = 50; // model/policy improvement gradient steps
    int model_ml_steps = 50;  // maximum-likelihood model steps (Dyna variant)
    int batch = 128;
    int k_model = 10;   // Monte-Carlo samples inside the Q-target log; 0 = exact (tabular)
    int k_policy = 10;  // same for the V target
    int k_improve = 10; // reparameterized draws inside the KL improvement losses (Gaussian)
    double lr = 3e-4;
    int horizon = 50;
    int eval_episodes = 20;
    std::optional<std::size_t> real_capacity;
    std::optional<std::size_t> sim_capacity;

    void validate() const;
};

/// Adaptive-moment accumulators for one parameter set.
struct Adam {
    Vec m, v;
    long t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void init(int n) {
        m = Vec::Zero(n);
        v = Vec::Zero(n);
        t = 0;
    }
};

/// In-place bias-corrected adaptive-moment update. Throws on non-finite
/// gradients.
void optimizer_step(Vec& params, const Vec& grad, Adam& moments, double lr);

struct PhaseCounts {
    long real_collections = 0;
    long sim_collections = 0;
    long disc_steps = 0;
    long pe_steps = 0;
    long improve_steps = 0;
    long ml_steps = 0;
    long bc_steps = 0;
    long ermbc_steps = 0;
};

struct IterationReport {
    int iteration = 0;
    long real_interactions = 0;
    LossBreakdown losses;
    double eval_return = std::numeric_limits<double>::quiet_NaN();
    double normalized_return = std::numeric_limits<double>::quiet_NaN();
    double nll_policy = std::numeric_limits<double>::quiet_NaN();
    double nll_model = std::numeric_limits<double>::quiet_NaN();

    std::string csv_row() const;
};

/// One seeded training run of a single variant. Phases are public so tests
/// can drive and audit them; run() executes the variant's full schedule.
class Trainer {
public:
    Trainer(Variant variant, Env env, TransitionBuffer expert, const RegularizationConfig& cfg,
            const Schedule& schedule, std::uint64_t seed);

    // Optional initialization overrides; apply before any phase runs.
    void init_value_fn(const ValueFn& vf);
    void init_model(const StochasticMap& q);
    void init_policy(const StochasticMap& b);

    /// Held-out expert data used for the per-iteration NLL metrics.
    void set_expert_test(TransitionBuffer test);
    /// Reference returns for the normalized_return column.
    void set_reference_return(double r_max, double r_min = 0.0);

    IterationReport run_iteration();
    std::vector<IterationReport> run(std::ostream* metrics_csv = nullptr);

    // Phases.
    void collect_real(int n);
    void collect_sim(int n);
    LossBreakdown phase_disc();
    PolicyEvalLoss phase_pe();
    void phase_improve(LossBreakdown& breakdown);
    void phase_model_ml();
    double phase_bc();
    double evaluate();

    Variant variant() const { return variant_; }
    const Env& env() const { return env_; }
    const ValueFn& value_fn() const { return *vf_; }
    ValueFn& value_fn() { return *vf_; }
    const StochasticMap* model() const { return q_.get(); }
    StochasticMap* model() { return q_.get(); }
    const StochasticMap& policy() const { return *b_; }
    StochasticMap& policy() { return *b_; }
    const TransitionBuffer& expert_buffer() const { return expert_; }
    const TransitionBuffer& real_buffer() const { return d_real_; }
    const TransitionBuffer& sim_buffer() const { return d_sim_; }
    long real_interactions() const { return real_interactions_; }
    long eval_interactions() const { return eval_interactions_; }
    long iteration() const { return iteration_; }
    const PhaseCounts& phase_counts() const { return counts_; }
    const std::vector<std::string>& phase_trace() const { return phase_trace_; }
    bool diverged() const { return diverged_; }
    const std::string& divergence_note() const { return divergence_note_; }

    void save_checkpoint(const std::string& path) const;
    void load_checkpoint(const std::string& path);

private:
    Variant variant_;
    Env env_;
    TransitionBuffer expert_;
    std::optional<TransitionBuffer> expert_test_;
    RegularizationConfig cfg_;
    Schedule schedule_;

    std::unique_ptr<ValueFn> vf_;
    std::unique_ptr<StochasticMap> q_;  // null for model-free variants
    std::unique_ptr<StochasticMap> b_;
    Adam opt_vf_, opt_q_, opt_b_;

    TransitionBuffer d_real_;
    TransitionBuffer d_sim_;
    Rng rng_;
    Rng eval_rng_;
    long iteration_ = 0;
    long real_interactions_ = 0;
    long eval_interactions_ = 0;
    double r_max_ = std::numeric_limits<double>::quiet_NaN();
    double r_min_ = 0.0;
    PhaseCounts counts_;
    std::vector<std::string> phase_trace_;
    bool diverged_ = false;
    std::string divergence_note_;

    // Rollout position for real-environment collection; episodes are chunked
    // to the schedule horizon.
    Vec collect_state_;
    int collect_steps_left_ = 0;

    bool tabular() const { return std::holds_alternative<TabularMdp>(env_); }
    const TabularMdp& mdp() const { return std::get<TabularMdp>(env_); }
    void build_learners(std::uint64_t seed);
    void guard_finite(double value, const std::string& where);
    std::vector<Transition> sample_real_union(std::size_t n);     // expert + real
    std::vector<Transition> sample_learner_union(std::size_t n);  // real + sim
    Vec model_step(const Vec& x, const Vec& u, Rng& rng) const;
};

/// Runs the variant's full schedule and returns the reports; thin wrapper
/// over Trainer for one-shot use.
std::vector<IterationReport> train(Variant variant, const Env& env,
                                   const TransitionBuffer& expert,
                                   const RegularizationConfig& cfg, const Schedule& schedule,
                                   std::uint64_t seed, std::ostream* metrics_csv = nullptr);

/// Self-consistent expert world derived from a base MDP. Starting from the
/// base dynamics (model baseline) and a uniform policy baseline, the solve's
/// induced model and policy are fed back as baselines until they reproduce
/// themselves. At the fixed point the environment dynamics, the expert
/// policy, and the value tables jointly solve the regularized Bellman
/// equation, so the closed-form discriminator identities hold exactly in
/// this world.
struct ExpertWorld {
    TabularMdp env;    // base MDP with its transition replaced by the fixed-point model
    Mat policy;        // S x A fixed-point expert policy
    ValueTable values;
    int outer_iterations = 0;
    double outer_residual = 0.0;
};

ExpertWorld make_expert_world(const TabularMdp& base, const RegularizationConfig& cfg,
                              double tol = 1e-10, int max_iter = 100000,
                              int outer_max_iter = 500, double outer_tol = 1e-12);

/// n_trajectories x horizon transitions from rolling the expert policy in the
/// expert world. With discounted_starts, each trajectory start is drawn from
/// the discounted visitation distribution instead of initial_dist.
TransitionBuffer sample_expert(const ExpertWorld& world, int n_trajectories, int horizon,
                               Rng& rng, bool discounted_starts = false);

/// Expert dataset of n_trajectories x horizon transitions sampled from the
/// oracle (pi, p) of make_expert_world.
TransitionBuffer make_expert(const TabularMdp& env, const RegularizationConfig& cfg,
                             int n_trajectories, int horizon, Rng& rng,
                             bool discounted_starts = false);

/// Scripted proportional-controller expert for the point-mass environment;
/// desk-scale stand-in where no oracle exists.
TransitionBuffer make_point_mass_expert(const ContinuousEnv& env, int n_transitions, int horizon,
                                        Rng& rng);

}  // namespace mberil
