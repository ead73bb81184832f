#pragma once

#include "mberil/approx.hpp"
#include "mberil/mdp.hpp"

#include <string>
#include <vector>

namespace mberil {

/// Mean of (R_i - r_min) / (r_max - r_min).
double normalized_return(const std::vector<double>& returns, double r_max, double r_min);

/// -(1/N) sum ln map(. | .) over the test triples. Whether the map is scored
/// as a model (x' given x,u) or a policy (u given x) is inferred from its
/// conditioning dimension. Log-densities are clamped at the -30 floor.
double nll(const StochasticMap& map, const TransitionBuffer& test);

/// Mean undiscounted return of `episodes` held-out episodes under the
/// environment's true reward.
double evaluate_policy(const Env& env, const StochasticMap& b, int episodes, int horizon,
                       Rng& rng);

inline constexpr const char* kMetricsHeader =
    "iteration,real_interactions,loss_model_disc,loss_policy_disc,loss_pe,"
    "loss_improve_model,loss_improve_policy,eval_return,normalized_return,"
    "nll_policy,nll_model";

/// One CSV cell: %.17g for finite values, empty for NaN (absent).
std::string metrics_cell(double v);

}  // namespace mberil
