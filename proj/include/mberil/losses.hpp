#pragma once

#include "mberil/approx.hpp"
#include "mberil/config.hpp"
#include "mberil/mdp.hpp"

#include <span>

namespace mberil {

struct LossBreakdown {
    double model_disc = 0.0;
    double policy_disc = 0.0;
    double total_disc = 0.0;
    double pe_qv = 0.0;
    double pe_vq = 0.0;
    double improve_model = 0.0;
    double improve_policy = 0.0;

    double pe_total(const RegularizationConfig& cfg) const {
        return cfg.lambda_qv * pe_qv + cfg.lambda_vq * pe_vq;
    }
};

struct LossValue {
    double value = 0.0;
    Vec grad;  // with respect to the trained parameter set
};

/// f(x,u,x') = r(x) + gamma V(x') - Q(x,u).
double f_advantage(const ValueFn& vf, const Transition& t, double gamma);

/// Model discriminator, sigmoid of beta (f - kappa^-1 ln q(x'|x,u)).
double d_model(const ValueFn& vf, const StochasticMap& q, const Transition& t,
               const RegularizationConfig& cfg);

/// Policy discriminator, sigmoid of beta (Q(x,u) - V(x) - kappa^-1 ln b(u|x)).
double d_policy(const ValueFn& vf, const StochasticMap& b, const Vec& x, const Vec& u,
                const RegularizationConfig& cfg);

/// Model-free variant: Q replaced by r(x) + gamma V(x'), evaluated on triples.
double d_policy_mf(const ValueFn& vf, const StochasticMap& b, const Transition& t,
                   const RegularizationConfig& cfg);

/// -mean ln D_model over the real batch - mean ln(1-D_model) over the
/// simulated batch. Gradient with respect to vf only (q frozen).
LossValue loss_model_disc(const ValueFn& vf, const StochasticMap& q,
                          std::span<const Transition> batch_real,
                          std::span<const Transition> batch_sim,
                          const RegularizationConfig& cfg);

LossValue loss_policy_disc(const ValueFn& vf, const StochasticMap& b,
                           std::span<const Transition> batch_expert,
                           std::span<const Transition> batch_learner,
                           const RegularizationConfig& cfg);

/// Same loss with the model-free discriminator; gradients reach r and V.
LossValue loss_policy_disc_mf(const ValueFn& vf, const StochasticMap& b,
                              std::span<const Transition> batch_expert,
                              std::span<const Transition> batch_learner,
                              const RegularizationConfig& cfg);

struct DiscTotal {
    LossBreakdown breakdown;
    Vec grad;
};

/// lambda_model * L_model + lambda_policy * L_policy with the combined
/// gradient with respect to vf.
DiscTotal loss_disc_total(const ValueFn& vf, const StochasticMap& q, const StochasticMap& b,
                          std::span<const Transition> batch_real,
                          std::span<const Transition> batch_sim,
                          std::span<const Transition> batch_expert,
                          std::span<const Transition> batch_learner,
                          const RegularizationConfig& cfg);

struct PolicyEvalLoss {
    double value = 0.0;
    double qv = 0.0;  // unweighted mean squared Q residual
    double vq = 0.0;  // unweighted mean squared V residual
    Vec grad;
};

/// Squared soft-Bellman residuals with log-expected-exp targets:
///   lambda_QV mean[(Q - beta^-1 ln E_q[exp beta (r + gamma V' - kappa^-1 ln q)])^2]
/// + lambda_VQ mean[(V - beta^-1 ln E_b[exp beta (Q - kappa^-1 ln b)])^2].
/// The inner expectations are k-sample Monte-Carlo means inside the log
/// (biased); k_model or k_policy = 0 selects the exact full-support sum,
/// available for tabular maps only. Targets are treated as constants, so
/// gradients flow to V and Q only; target_vf (default: vf itself) names the
/// snapshot the blocked targets are computed from.
PolicyEvalLoss loss_policy_eval(const ValueFn& vf, const StochasticMap& q, const StochasticMap& b,
                                std::span<const Transition> batch, const RegularizationConfig& cfg,
                                int k_model, int k_policy, Rng& rng,
                                const ValueFn* target_vf = nullptr);

/// Expected KL of the candidate model q_new from the target
/// exp[beta (r + gamma V' + eta^-1 ln q_frozen)] / exp[beta Q], written as
///   E_{x,u} E_{x'~q_new}[ln q_new - beta (r + gamma V' + eta^-1 ln q_frozen) + beta Q].
/// Tabular candidates are integrated exactly; Gaussian candidates use k
/// reparameterized draws with pathwise gradients. Gradient w.r.t. q_new.
LossValue loss_improve_model(const StochasticMap& q_new, const ValueFn& vf,
                             const StochasticMap& q_frozen, std::span<const Transition> batch,
                             const RegularizationConfig& cfg, int k, Rng& rng);

/// Analogous policy objective with target exp[beta (Q + eta^-1 ln b_frozen)] / exp[beta V].
LossValue loss_improve_policy(const StochasticMap& b_new, const ValueFn& vf,
                              const StochasticMap& b_frozen, std::span<const Transition> batch,
                              const RegularizationConfig& cfg, int k, Rng& rng);

struct ErmbcLoss {
    double value = 0.0;
    double cloning_model = 0.0;   // -mean ln q(x'|x,u)
    double cloning_policy = 0.0;  // -mean ln b(u|x)
    PolicyEvalLoss pe;
    Vec grad_vf;
    Vec grad_q;
    Vec grad_b;
};

/// Maximum-likelihood replacement of discriminator training: model and
/// behavior cloning terms over the expert batch plus the policy-evaluation
/// regularizer.
ErmbcLoss loss_ermbc(const ValueFn& vf, const StochasticMap& q, const StochasticMap& b,
                     std::span<const Transition> batch_expert, const RegularizationConfig& cfg,
                     int k_model, int k_policy, Rng& rng, const ValueFn* target_vf = nullptr);

/// -mean ln b(u|x). Gradient w.r.t. b.
LossValue loss_bc(const StochasticMap& b, std::span<const Transition> batch_expert);

/// Mean squared error of Q against the blocked target r(x) + gamma V(x');
/// the model-free policy-evaluation stand-in. Gradient reaches Q only.
LossValue loss_q_fit(const ValueFn& vf, std::span<const Transition> batch,
                     const RegularizationConfig& cfg);

// ----------------------------------------------------------------------------
// Exact-tabular discriminator losses: expectations computed in closed form
// under explicit weights over (x,u) (resp. x), with the real side given by a
// conditional probability table. Used by the ratio-recovery tests and the
// self-check suites.

/// sa_weights: (S*A) vector summing to 1; p_real: (S*A) x S conditional table.
LossValue loss_model_disc_exact(const ValueFn& vf, const TabularSoftmaxMap& q,
                                const Vec& sa_weights, const Mat& p_real,
                                const RegularizationConfig& cfg);

/// x_weights: S vector summing to 1; pi_expert: S x A conditional table.
LossValue loss_policy_disc_exact(const ValueFn& vf, const TabularSoftmaxMap& b,
                                 const Vec& x_weights, const Mat& pi_expert,
                                 const RegularizationConfig& cfg);

/// Exact counterparts of the sampled KL improvement objectives, weighted over
/// rows. Gradients w.r.t. the candidate map.
LossValue loss_improve_model_exact(const TabularSoftmaxMap& q_new, const ValueFn& vf,
                                   const TabularSoftmaxMap& q_frozen, const Vec& sa_weights,
                                   const RegularizationConfig& cfg);
LossValue loss_improve_policy_exact(const TabularSoftmaxMap& b_new, const ValueFn& vf,
                                    const TabularSoftmaxMap& b_frozen, const Vec& x_weights,
                                    const RegularizationConfig& cfg);

}  // namespace mberil
