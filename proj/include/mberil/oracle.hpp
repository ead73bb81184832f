#pragma once

#include "mberil/config.hpp"
#include "mberil/mdp.hpp"

#include <string>
#include <vector>

namespace mberil {

struct ValueTable {
    Vec v;  // S
    Mat q;  // S x A
};

struct SolveResult {
    ValueTable values;
    Mat expert_policy;  // S x A, rows sum to 1
    Mat expert_model;   // (S*A) x S, rows sum to 1
    int iterations = 0;
    double residual = 0.0;
    std::vector<double> residual_trace;  // sup-norm V residual per iteration
};

struct ConvergenceError : std::runtime_error {
    double residual;
    ConvergenceError(const std::string& what, double res)
        : std::runtime_error(what), residual(res) {}
};

/// One application of the kappa/eta-regularized backup:
///   Q(x,u) = beta^-1 ln sum_x' exp[beta (r(x) + gamma V(x') + eta^-1 ln q(x'|x,u))]
///   V(x)   = beta^-1 ln sum_u  exp[beta (Q(x,u) + eta^-1 ln b(u|x))]
/// Sums run over the support of q (resp. b); all log-sum-exps are max-shifted.
/// Throws std::domain_error when q or b is zero where the MDP has mass.
ValueTable soft_backup(const ValueTable& values, const TabularMdp& mdp, const Mat& q_map,
                       const Mat& b_map, const RegularizationConfig& cfg);

/// Iterates soft_backup to a sup-norm residual on V below tol, then
/// materializes the induced policy and model.
SolveResult solve(const TabularMdp& mdp, const Mat& q_map, const Mat& b_map,
                  const RegularizationConfig& cfg, double tol = 1e-10, int max_iter = 100000);

/// p(x'|x,u) = exp[beta (r(x) + gamma V(x') + eta^-1 ln q)] / exp[beta Q(x,u)].
Mat induced_model(const ValueTable& values, const Vec& reward, const Mat& q_map,
                  const RegularizationConfig& cfg);

/// pi(u|x) = exp[beta (Q(x,u) + eta^-1 ln b)] / exp[beta V(x)].
Mat induced_policy(const ValueTable& values, const Mat& b_map, const RegularizationConfig& cfg);

/// Regularized inner objective of the model optimization at (x,u):
///   sum_x' p~(x') [r(x) + gamma V(x') - kappa^-1 ln p~(x') - eta^-1 ln(p~(x')/q(x'|x,u))].
/// p~ must be a distribution, strictly positive exactly where q has support.
double inner_objective(const Vec& p_tilde, int x, int u, const ValueTable& values,
                       const TabularMdp& mdp, const Mat& q_map, const RegularizationConfig& cfg);

struct RatioTables {
    Mat model;   // (S*A) x S: beta^-1 ln(p/q) = r + gamma V' - Q - kappa^-1 ln q
    Mat policy;  // S x A:     beta^-1 ln(pi/b) = Q - V - kappa^-1 ln b
};

/// Entries where q (resp. b) has no support are NaN.
RatioTables log_density_ratios(const ValueTable& values, const Vec& reward, const Mat& q_map,
                               const Mat& b_map, const RegularizationConfig& cfg);

/// One row per (x, u, x') with p, q, V, Q and both log-ratios.
void dump_solve_csv(const std::string& path, const TabularMdp& mdp, const Mat& q_map,
                    const Mat& b_map, const SolveResult& result, const RegularizationConfig& cfg);

}  // namespace mberil
