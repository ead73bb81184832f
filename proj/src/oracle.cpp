#include "mberil/oracle.hpp"

#include <fstream>

namespace mberil {

namespace {

void check_shapes(const TabularMdp& mdp, const Mat& q_map, const Mat& b_map) {
    if (q_map.rows() != mdp.transition.rows() || q_map.cols() != mdp.n_states)
        throw std::invalid_argument("baseline model q has wrong shape");
    if (b_map.rows() != mdp.n_states || b_map.cols() != mdp.n_actions)
        throw std::invalid_argument("baseline policy b has wrong shape");
}

/// The logs in the backup require q > 0 wherever the MDP has mass and b > 0
/// everywhere (all actions are admissible in a tabular MDP).
void check_support(const TabularMdp& mdp, const Mat& q_map, const Mat& b_map) {
    for (int x = 0; x < mdp.n_states; ++x) {
        for (int u = 0; u < mdp.n_actions; ++u) {
            if (!(b_map(x, u) > 0.0))
                throw std::domain_error("baseline policy has zero probability at (x=" +
                                        std::to_string(x) + ", u=" + std::to_string(u) + ")");
            const int row = mdp.sa(x, u);
            for (int j = 0; j < mdp.n_states; ++j)
                if (mdp.transition(row, j) > 0.0 && !(q_map(row, j) > 0.0))
                    throw std::domain_error(
                        "baseline model has zero probability on a reachable transition (x=" +
                        std::to_string(x) + ", u=" + std::to_string(u) +
                        ", x'=" + std::to_string(j) + ")");
        }
    }
}

}  // namespace

namespace {

/// Q half-step: Q(x,u) = beta^-1 ln sum_x' exp[beta (r + gamma V' + eta^-1 ln q)].
Mat q_half_backup(const Vec& v, const TabularMdp& mdp, const Mat& q_map,
                  const RegularizationConfig& cfg) {
    const double beta = cfg.beta();
    const int S = mdp.n_states, A = mdp.n_actions;
    Mat q_out(S, A);
    Vec terms(S);
    for (int x = 0; x < S; ++x) {
        for (int u = 0; u < A; ++u) {
            const int row = mdp.sa(x, u);
            int n = 0;
            for (int j = 0; j < S; ++j) {
                const double qj = q_map(row, j);
                if (qj > 0.0)
                    terms[n++] =
                        beta * (mdp.reward[x] + mdp.discount * v[j] + std::log(qj) / cfg.eta);
            }
            if (n == 0) throw std::domain_error("baseline model row has empty support");
            q_out(x, u) = logsumexp(terms.head(n)) / beta;
        }
    }
    return q_out;
}

/// V half-step: V(x) = beta^-1 ln sum_u exp[beta (Q(x,u) + eta^-1 ln b)].
Vec v_half_backup(const Mat& q, const Mat& b_map, const RegularizationConfig& cfg) {
    const double beta = cfg.beta();
    const int S = static_cast<int>(q.rows()), A = static_cast<int>(q.cols());
    Vec v_out(S);
    Vec uterms(A);
    for (int x = 0; x < S; ++x) {
        for (int u = 0; u < A; ++u)
            uterms[u] = beta * (q(x, u) + std::log(b_map(x, u)) / cfg.eta);
        v_out[x] = logsumexp(uterms) / beta;
    }
    return v_out;
}

}  // namespace

ValueTable soft_backup(const ValueTable& values, const TabularMdp& mdp, const Mat& q_map,
                       const Mat& b_map, const RegularizationConfig& cfg) {
    cfg.validate();
    check_shapes(mdp, q_map, b_map);
    check_support(mdp, q_map, b_map);
    ValueTable out;
    out.q = q_half_backup(values.v, mdp, q_map, cfg);
    out.v = v_half_backup(out.q, b_map, cfg);
    return out;
}

SolveResult solve(const TabularMdp& mdp, const Mat& q_map, const Mat& b_map,
                  const RegularizationConfig& cfg, double tol, int max_iter) {
    if (!(tol > 0.0)) throw std::invalid_argument("solve: tol must be positive");
    mdp.validate();
    SolveResult res;
    res.values.v = Vec::Zero(mdp.n_states);
    res.values.q = Mat::Zero(mdp.n_states, mdp.n_actions);
    double residual = std::numeric_limits<double>::infinity();
    int iter = 0;
    while (iter < max_iter) {
        ValueTable next = soft_backup(res.values, mdp, q_map, b_map, cfg);
        residual = (next.v - res.values.v).cwiseAbs().maxCoeff();
        res.values = std::move(next);
        res.residual_trace.push_back(residual);
        ++iter;
        if (residual < tol) break;
    }
    res.iterations = iter;
    res.residual = residual;
    if (residual >= tol)
        throw ConvergenceError("soft value iteration did not reach tolerance " + fmt_g17(tol) +
                                   " in " + std::to_string(max_iter) +
                                   " iterations (residual " + fmt_g17(residual) + ")",
                               residual);
    // Refresh Q from the converged V so Q is exactly the partition function of
    // the induced model; induced rows then normalize to machine precision.
    res.values.q = q_half_backup(res.values.v, mdp, q_map, cfg);
    res.expert_model = induced_model(res.values, mdp.reward, q_map, cfg);
    res.expert_policy = induced_policy(res.values, b_map, cfg);
    return res;
}

Mat induced_model(const ValueTable& values, const Vec& reward, const Mat& q_map,
                  const RegularizationConfig& cfg) {
    const double beta = cfg.beta();
    const int S = static_cast<int>(reward.size());
    const int A = static_cast<int>(values.q.cols());
    Mat p = Mat::Zero(q_map.rows(), q_map.cols());
    for (int x = 0; x < S; ++x) {
        for (int u = 0; u < A; ++u) {
            const int row = sa_index(x, u, A);
            for (int j = 0; j < S; ++j) {
                const double qj = q_map(row, j);
                if (qj <= 0.0) continue;
                p(row, j) = std::exp(beta * (reward[x] + cfg.gamma * values.v[j] +
                                             std::log(qj) / cfg.eta - values.q(x, u)));
            }
        }
    }
    return p;
}

Mat induced_policy(const ValueTable& values, const Mat& b_map, const RegularizationConfig& cfg) {
    const double beta = cfg.beta();
    const int S = static_cast<int>(b_map.rows());
    const int A = static_cast<int>(b_map.cols());
    Mat pi = Mat::Zero(S, A);
    for (int x = 0; x < S; ++x)
        for (int u = 0; u < A; ++u) {
            const double bu = b_map(x, u);
            if (bu <= 0.0) continue;
            pi(x, u) =
                std::exp(beta * (values.q(x, u) + std::log(bu) / cfg.eta - values.v[x]));
        }
    return pi;
}

double inner_objective(const Vec& p_tilde, int x, int u, const ValueTable& values,
                       const TabularMdp& mdp, const Mat& q_map, const RegularizationConfig& cfg) {
    if (p_tilde.size() != mdp.n_states)
        throw std::invalid_argument("inner_objective: distribution has wrong length");
    if ((p_tilde.array() < 0.0).any() || std::abs(p_tilde.sum() - 1.0) > 1e-9)
        throw std::invalid_argument("inner_objective: p~ is not a distribution");
    const int row = mdp.sa(x, u);
    double total = 0.0;
    for (int j = 0; j < mdp.n_states; ++j) {
        const double pj = p_tilde[j];
        if (pj == 0.0) continue;
        const double qj = q_map(row, j);
        if (!(qj > 0.0))
            throw std::invalid_argument("inner_objective: p~ has mass outside q's support");
        const double lpj = std::log(pj);
        total += pj * (mdp.reward[x] + cfg.gamma * values.v[j] - lpj / cfg.kappa -
                       (lpj - std::log(qj)) / cfg.eta);
    }
    return total;
}

RatioTables log_density_ratios(const ValueTable& values, const Vec& reward, const Mat& q_map,
                               const Mat& b_map, const RegularizationConfig& cfg) {
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const int S = static_cast<int>(reward.size());
    const int A = static_cast<int>(values.q.cols());
    RatioTables out;
    out.model = Mat::Constant(q_map.rows(), q_map.cols(), nan);
    out.policy = Mat::Constant(S, A, nan);
    for (int x = 0; x < S; ++x)
        for (int u = 0; u < A; ++u) {
            const int row = sa_index(x, u, A);
            for (int j = 0; j < S; ++j) {
                const double qj = q_map(row, j);
                if (qj <= 0.0) continue;
                out.model(row, j) = reward[x] + cfg.gamma * values.v[j] - values.q(x, u) -
                                    std::log(qj) / cfg.kappa;
            }
            const double bu = b_map(x, u);
            if (bu > 0.0)
                out.policy(x, u) = values.q(x, u) - values.v[x] - std::log(bu) / cfg.kappa;
        }
    return out;
}

void dump_solve_csv(const std::string& path, const TabularMdp& mdp, const Mat& q_map,
                    const Mat& b_map, const SolveResult& result, const RegularizationConfig& cfg) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    const RatioTables ratios =
        log_density_ratios(result.values, mdp.reward, q_map, b_map, cfg);
    os << "x,u,x_next,p,q,V_x,Q_xu,log_ratio_model,log_ratio_policy\n";
    for (int x = 0; x < mdp.n_states; ++x)
        for (int u = 0; u < mdp.n_actions; ++u) {
            const int row = mdp.sa(x, u);
            for (int j = 0; j < mdp.n_states; ++j) {
                os << x << ',' << u << ',' << j << ',' << fmt_g17(result.expert_model(row, j))
                   << ',' << fmt_g17(q_map(row, j)) << ',' << fmt_g17(result.values.v[x]) << ','
                   << fmt_g17(result.values.q(x, u)) << ',' << fmt_g17(ratios.model(row, j)) << ','
                   << fmt_g17(ratios.policy(x, u)) << "\n";
            }
        }
}

}  // namespace mberil
