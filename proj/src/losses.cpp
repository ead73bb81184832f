#include "mberil/losses.hpp"

namespace mberil {

namespace {

Vec join_cond(const Vec& x, const Vec& u) {
    Vec c(x.size() + u.size());
    c.head(x.size()) = x;
    c.tail(u.size()) = u;
    return c;
}

double checked_log_prob(const StochasticMap& map, const Vec& cond, const Vec& out,
                        const char* what) {
    const double lp = map.log_prob(cond, out);
    if (lp == -std::numeric_limits<double>::infinity())
        throw std::domain_error(std::string(what) + " has zero probability at the queried point");
    return std::max(lp, kLogFloor);
}

void require_nonempty(std::span<const Transition> batch, const char* what) {
    if (batch.empty()) throw std::invalid_argument(std::string(what) + ": empty batch");
}

const TabularSoftmaxMap& as_tabular(const StochasticMap& map, const char* what) {
    const auto* t = dynamic_cast<const TabularSoftmaxMap*>(&map);
    if (!t) throw std::invalid_argument(std::string(what) + ": tabular backend required");
    return *t;
}

Vec state_vec(int x) { return Vec::Constant(1, static_cast<double>(x)); }

}  // namespace

double f_advantage(const ValueFn& vf, const Transition& t, double gamma) {
    return vf.r(t.x) + gamma * vf.v(t.x_next) - vf.q(t.x, t.u);
}

double d_model(const ValueFn& vf, const StochasticMap& q, const Transition& t,
               const RegularizationConfig& cfg) {
    const double lq = checked_log_prob(q, join_cond(t.x, t.u), t.x_next, "model q");
    return sigmoid(cfg.beta() * (f_advantage(vf, t, cfg.gamma) - lq / cfg.kappa));
}

double d_policy(const ValueFn& vf, const StochasticMap& b, const Vec& x, const Vec& u,
                const RegularizationConfig& cfg) {
    const double lb = checked_log_prob(b, x, u, "baseline policy b");
    return sigmoid(cfg.beta() * (vf.q(x, u) - vf.v(x) - lb / cfg.kappa));
}

double d_policy_mf(const ValueFn& vf, const StochasticMap& b, const Transition& t,
                   const RegularizationConfig& cfg) {
    const double lb = checked_log_prob(b, t.x, t.u, "baseline policy b");
    return sigmoid(cfg.beta() *
                   (vf.r(t.x) + cfg.gamma * vf.v(t.x_next) - vf.v(t.x) - lb / cfg.kappa));
}

LossValue loss_model_disc(const ValueFn& vf, const StochasticMap& q,
                          std::span<const Transition> batch_real,
                          std::span<const Transition> batch_sim,
                          const RegularizationConfig& cfg) {
    require_nonempty(batch_real, "loss_model_disc(real)");
    require_nonempty(batch_sim, "loss_model_disc(sim)");
    const double beta = cfg.beta();
    LossValue out;
    out.grad = Vec::Zero(vf.param_count());
    auto accumulate = [&](const Transition& t, bool real, double inv_n) {
        const double lq = checked_log_prob(q, join_cond(t.x, t.u), t.x_next, "model q");
        const double z = beta * (f_advantage(vf, t, cfg.gamma) - lq / cfg.kappa);
        out.value += inv_n * (real ? softplus(-z) : softplus(z));
        const double dl_dz = inv_n * (real ? sigmoid(z) - 1.0 : sigmoid(z));
        vf.add_r_grad(t.x, beta * dl_dz, out.grad);
        vf.add_v_grad(t.x_next, beta * cfg.gamma * dl_dz, out.grad);
        vf.add_q_grad(t.x, t.u, -beta * dl_dz, out.grad);
    };
    const double inv_real = 1.0 / static_cast<double>(batch_real.size());
    const double inv_sim = 1.0 / static_cast<double>(batch_sim.size());
    for (const auto& t : batch_real) accumulate(t, true, inv_real);
    for (const auto& t : batch_sim) accumulate(t, false, inv_sim);
    return out;
}

LossValue loss_policy_disc(const ValueFn& vf, const StochasticMap& b,
                           std::span<const Transition> batch_expert,
                           std::span<const Transition> batch_learner,
                           const RegularizationConfig& cfg) {
    require_nonempty(batch_expert, "loss_policy_disc(expert)");
    require_nonempty(batch_learner, "loss_policy_disc(learner)");
    const double beta = cfg.beta();
    LossValue out;
    out.grad = Vec::Zero(vf.param_count());
    auto accumulate = [&](const Transition& t, bool expert, double inv_n) {
        const double lb = checked_log_prob(b, t.x, t.u, "baseline policy b");
        const double z = beta * (vf.q(t.x, t.u) - vf.v(t.x) - lb / cfg.kappa);
        out.value += inv_n * (expert ? softplus(-z) : softplus(z));
        const double dl_dz = inv_n * (expert ? sigmoid(z) - 1.0 : sigmoid(z));
        vf.add_q_grad(t.x, t.u, beta * dl_dz, out.grad);
        vf.add_v_grad(t.x, -beta * dl_dz, out.grad);
    };
    const double inv_e = 1.0 / static_cast<double>(batch_expert.size());
    const double inv_l = 1.0 / static_cast<double>(batch_learner.size());
    for (const auto& t : batch_expert) accumulate(t, true, inv_e);
    for (const auto& t : batch_learner) accumulate(t, false, inv_l);
    return out;
}

LossValue loss_policy_disc_mf(const ValueFn& vf, const StochasticMap& b,
                              std::span<const Transition> batch_expert,
                              std::span<const Transition> batch_learner,
                              const RegularizationConfig& cfg) {
    require_nonempty(batch_expert, "loss_policy_disc_mf(expert)");
    require_nonempty(batch_learner, "loss_policy_disc_mf(learner)");
    const double beta = cfg.beta();
    LossValue out;
    out.grad = Vec::Zero(vf.param_count());
    auto accumulate = [&](const Transition& t, bool expert, double inv_n) {
        const double lb = checked_log_prob(b, t.x, t.u, "baseline policy b");
        const double z = beta * (vf.r(t.x) + cfg.gamma * vf.v(t.x_next) - vf.v(t.x) -
                                 lb / cfg.kappa);
        out.value += inv_n * (expert ? softplus(-z) : softplus(z));
        const double dl_dz = inv_n * (expert ? sigmoid(z) - 1.0 : sigmoid(z));
        vf.add_r_grad(t.x, beta * dl_dz, out.grad);
        vf.add_v_grad(t.x_next, beta * cfg.gamma * dl_dz, out.grad);
        vf.add_v_grad(t.x, -beta * dl_dz, out.grad);
    };
    const double inv_e = 1.0 / static_cast<double>(batch_expert.size());
    const double inv_l = 1.0 / static_cast<double>(batch_learner.size());
    for (const auto& t : batch_expert) accumulate(t, true, inv_e);
    for (const auto& t : batch_learner) accumulate(t, false, inv_l);
    return out;
}

DiscTotal loss_disc_total(const ValueFn& vf, const StochasticMap& q, const StochasticMap& b,
                          std::span<const Transition> batch_real,
                          std::span<const Transition> batch_sim,
                          std::span<const Transition> batch_expert,
                          std::span<const Transition> batch_learner,
                          const RegularizationConfig& cfg) {
    const LossValue lm = loss_model_disc(vf, q, batch_real, batch_sim, cfg);
    const LossValue lp = loss_policy_disc(vf, b, batch_expert, batch_learner, cfg);
    DiscTotal out;
    out.breakdown.model_disc = lm.value;
    out.breakdown.policy_disc = lp.value;
    out.breakdown.total_disc = cfg.lambda_model * lm.value + cfg.lambda_policy * lp.value;
    out.grad = cfg.lambda_model * lm.grad + cfg.lambda_policy * lp.grad;
    return out;
}

namespace {

/// beta^-1 ln E_q[exp beta (r + gamma V' - kappa^-1 ln q)] at (x, u).
double q_target(const ValueFn& vf, const StochasticMap& q, const Vec& x, const Vec& u,
                const RegularizationConfig& cfg, int k, Rng& rng) {
    const double beta = cfg.beta();
    const double rx = vf.r(x);
    if (k == 0) {
        const auto& qt = as_tabular(q, "loss_policy_eval: exact Q target");
        const int row = qt.row_of(join_cond(x, u));
        const Vec logp = qt.row_log_probs(row);
        Vec terms(qt.n_out());
        for (int j = 0; j < qt.n_out(); ++j)
            terms[j] = logp[j] + beta * (rx + cfg.gamma * vf.v(state_vec(j)) -
                                         logp[j] / cfg.kappa);
        return logsumexp(terms) / beta;
    }
    const Vec cond = join_cond(x, u);
    Vec terms(k);
    for (int s = 0; s < k; ++s) {
        const Vec xn = q.sample(cond, rng);
        const double lq = std::max(q.log_prob(cond, xn), kLogFloor);
        terms[s] = beta * (rx + cfg.gamma * vf.v(xn) - lq / cfg.kappa);
    }
    return (logsumexp(terms) - std::log(static_cast<double>(k))) / beta;
}

/// beta^-1 ln E_b[exp beta (Q - kappa^-1 ln b)] at x.
double v_target(const ValueFn& vf, const StochasticMap& b, const Vec& x,
                const RegularizationConfig& cfg, int k, Rng& rng) {
    const double beta = cfg.beta();
    if (k == 0) {
        const auto& bt = as_tabular(b, "loss_policy_eval: exact V target");
        const int row = bt.row_of(x);
        const Vec logp = bt.row_log_probs(row);
        Vec terms(bt.n_out());
        for (int u = 0; u < bt.n_out(); ++u)
            terms[u] = logp[u] + beta * (vf.q(x, Vec::Constant(1, u)) - logp[u] / cfg.kappa);
        return logsumexp(terms) / beta;
    }
    Vec terms(k);
    for (int s = 0; s < k; ++s) {
        const Vec u = b.sample(x, rng);
        const double lb = std::max(b.log_prob(x, u), kLogFloor);
        terms[s] = beta * (vf.q(x, u) - lb / cfg.kappa);
    }
    return (logsumexp(terms) - std::log(static_cast<double>(k))) / beta;
}

}  // namespace

PolicyEvalLoss loss_policy_eval(const ValueFn& vf, const StochasticMap& q, const StochasticMap& b,
                                std::span<const Transition> batch, const RegularizationConfig& cfg,
                                int k_model, int k_policy, Rng& rng, const ValueFn* target_vf) {
    require_nonempty(batch, "loss_policy_eval");
    if (k_model < 0 || k_policy < 0)
        throw std::invalid_argument("loss_policy_eval: sample counts must be nonnegative");
    const ValueFn& tvf = target_vf ? *target_vf : vf;
    PolicyEvalLoss out;
    out.grad = Vec::Zero(vf.param_count());
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const auto& t : batch) {
        if (cfg.lambda_qv > 0.0) {
            const double target = q_target(tvf, q, t.x, t.u, cfg, k_model, rng);
            const double e = vf.q(t.x, t.u) - target;
            out.qv += inv_n * e * e;
            // Targets are blocked: only the leading Q carries gradient.
            vf.add_q_grad(t.x, t.u, cfg.lambda_qv * 2.0 * e * inv_n, out.grad);
        }
        if (cfg.lambda_vq > 0.0) {
            const double target = v_target(tvf, b, t.x, cfg, k_policy, rng);
            const double e = vf.v(t.x) - target;
            out.vq += inv_n * e * e;
            vf.add_v_grad(t.x, cfg.lambda_vq * 2.0 * e * inv_n, out.grad);
        }
    }
    out.value = cfg.lambda_qv * out.qv + cfg.lambda_vq * out.vq;
    return out;
}

namespace {

/// Exact per-row KL term for a tabular candidate: sum_j p'_j (ln p'_j - c_j)
/// with its gradient with respect to the candidate's logits.
double tabular_kl_row(const TabularSoftmaxMap& cand, int row, const Vec& c, double weight,
                      Vec& grad) {
    const Vec logp = cand.row_log_probs(row);
    const Vec p = logp.array().exp();
    double point = 0.0;
    for (int j = 0; j < cand.n_out(); ++j) point += p[j] * (logp[j] - c[j]);
    const int base = row * cand.n_out();
    for (int j = 0; j < cand.n_out(); ++j)
        grad[base + j] += weight * p[j] * ((logp[j] - c[j]) - point);
    return point;
}

}  // namespace

LossValue loss_improve_model(const StochasticMap& q_new, const ValueFn& vf,
                             const StochasticMap& q_frozen, std::span<const Transition> batch,
                             const RegularizationConfig& cfg, int k, Rng& rng) {
    require_nonempty(batch, "loss_improve_model");
    const double beta = cfg.beta();
    LossValue out;
    out.grad = Vec::Zero(q_new.param_count());
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    if (q_new.kind() == StochasticMap::Kind::TabularSoftmax) {
        const auto& cand = as_tabular(q_new, "loss_improve_model");
        const auto& frozen = as_tabular(q_frozen, "loss_improve_model(frozen)");
        for (const auto& t : batch) {
            const Vec cond = join_cond(t.x, t.u);
            const int row = cand.row_of(cond);
            const double rx = vf.r(t.x);
            const double qxu = vf.q(t.x, t.u);
            const Vec frozen_logp = frozen.row_log_probs(frozen.row_of(cond));
            Vec c(cand.n_out());
            for (int j = 0; j < cand.n_out(); ++j)
                c[j] = beta * (rx + cfg.gamma * vf.v(state_vec(j)) +
                               std::max(frozen_logp[j], kLogFloor) / cfg.eta) -
                       beta * qxu;
            out.value += inv_n * tabular_kl_row(cand, row, c, inv_n, out.grad);
        }
        return out;
    }

    if (k < 1) throw std::invalid_argument("loss_improve_model: k must be >= 1 for Gaussian maps");
    const auto& cand = dynamic_cast<const GaussianMlpMap&>(q_new);
    const double inv_nk = inv_n / static_cast<double>(k);
    for (const auto& t : batch) {
        const Vec cond = join_cond(t.x, t.u);
        const double rx = vf.r(t.x);
        const double qxu = vf.q(t.x, t.u);
        for (int s = 0; s < k; ++s) {
            const auto rec = cand.rsample(cond, rng);
            const GaussianHead h = GaussianHead::from_raw(rec.raw);
            const double lp_new = h.log_prob(rec.out);
            const double lp_frozen = std::max(q_frozen.log_prob(cond, rec.out), kLogFloor);
            out.value += inv_nk * (lp_new - beta * (rx + cfg.gamma * vf.v(rec.out) +
                                                    lp_frozen / cfg.eta) +
                                   beta * qxu);
            Vec dmean(cand.out_dim()), dlogstd(cand.out_dim());
            Vec dlogp_dx(cand.out_dim());
            for (int i = 0; i < cand.out_dim(); ++i) {
                const double sigma = std::exp(h.log_std[i]);
                dmean[i] = rec.eps[i] / sigma;
                dlogstd[i] = rec.eps[i] * rec.eps[i] - 1.0;
                dlogp_dx[i] = -rec.eps[i] / sigma;
            }
            const Vec dl_dout = dlogp_dx - beta * (cfg.gamma * vf.dv_dx(rec.out) +
                                                   dynamic_cast<const GaussianMlpMap&>(q_frozen)
                                                           .dlogp_dout(cond, rec.out) /
                                                       cfg.eta);
            cand.backward_sample(rec, dl_dout, dmean, dlogstd, inv_nk, out.grad);
        }
    }
    return out;
}

LossValue loss_improve_policy(const StochasticMap& b_new, const ValueFn& vf,
                              const StochasticMap& b_frozen, std::span<const Transition> batch,
                              const RegularizationConfig& cfg, int k, Rng& rng) {
    require_nonempty(batch, "loss_improve_policy");
    const double beta = cfg.beta();
    LossValue out;
    out.grad = Vec::Zero(b_new.param_count());
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    if (b_new.kind() == StochasticMap::Kind::TabularSoftmax) {
        const auto& cand = as_tabular(b_new, "loss_improve_policy");
        const auto& frozen = as_tabular(b_frozen, "loss_improve_policy(frozen)");
        for (const auto& t : batch) {
            const int row = cand.row_of(t.x);
            const double vx = vf.v(t.x);
            const Vec frozen_logp = frozen.row_log_probs(frozen.row_of(t.x));
            Vec c(cand.n_out());
            for (int u = 0; u < cand.n_out(); ++u)
                c[u] = beta * (vf.q(t.x, Vec::Constant(1, u)) +
                               std::max(frozen_logp[u], kLogFloor) / cfg.eta) -
                       beta * vx;
            out.value += inv_n * tabular_kl_row(cand, row, c, inv_n, out.grad);
        }
        return out;
    }

    if (k < 1) throw std::invalid_argument("loss_improve_policy: k must be >= 1 for Gaussian maps");
    const auto& cand = dynamic_cast<const GaussianMlpMap&>(b_new);
    const double inv_nk = inv_n / static_cast<double>(k);
    for (const auto& t : batch) {
        const double vx = vf.v(t.x);
        for (int s = 0; s < k; ++s) {
            const auto rec = cand.rsample(t.x, rng);
            const GaussianHead h = GaussianHead::from_raw(rec.raw);
            const double lp_new = h.log_prob(rec.out);
            const double lp_frozen = std::max(b_frozen.log_prob(t.x, rec.out), kLogFloor);
            out.value += inv_nk * (lp_new - beta * (vf.q(t.x, rec.out) + lp_frozen / cfg.eta) +
                                   beta * vx);
            Vec dmean(cand.out_dim()), dlogstd(cand.out_dim());
            Vec dlogp_du(cand.out_dim());
            for (int i = 0; i < cand.out_dim(); ++i) {
                const double sigma = std::exp(h.log_std[i]);
                dmean[i] = rec.eps[i] / sigma;
                dlogstd[i] = rec.eps[i] * rec.eps[i] - 1.0;
                dlogp_du[i] = -rec.eps[i] / sigma;
            }
            const Vec dl_dout =
                dlogp_du - beta * (vf.dq_du(t.x, rec.out) +
                                   dynamic_cast<const GaussianMlpMap&>(b_frozen)
                                           .dlogp_dout(t.x, rec.out) /
                                       cfg.eta);
            cand.backward_sample(rec, dl_dout, dmean, dlogstd, inv_nk, out.grad);
        }
    }
    return out;
}

ErmbcLoss loss_ermbc(const ValueFn& vf, const StochasticMap& q, const StochasticMap& b,
                     std::span<const Transition> batch_expert, const RegularizationConfig& cfg,
                     int k_model, int k_policy, Rng& rng, const ValueFn* target_vf) {
    require_nonempty(batch_expert, "loss_ermbc");
    ErmbcLoss out;
    out.grad_q = Vec::Zero(q.param_count());
    out.grad_b = Vec::Zero(b.param_count());
    const double inv_n = 1.0 / static_cast<double>(batch_expert.size());
    for (const auto& t : batch_expert) {
        out.cloning_model -= inv_n * q.log_prob(join_cond(t.x, t.u), t.x_next);
        out.cloning_policy -= inv_n * b.log_prob(t.x, t.u);
        q.add_log_prob_grad(join_cond(t.x, t.u), t.x_next, -inv_n, out.grad_q);
        b.add_log_prob_grad(t.x, t.u, -inv_n, out.grad_b);
    }
    out.pe = loss_policy_eval(vf, q, b, batch_expert, cfg, k_model, k_policy, rng, target_vf);
    out.grad_vf = out.pe.grad;
    out.value = out.cloning_model + out.cloning_policy + out.pe.value;
    return out;
}

LossValue loss_bc(const StochasticMap& b, std::span<const Transition> batch_expert) {
    require_nonempty(batch_expert, "loss_bc");
    LossValue out;
    out.grad = Vec::Zero(b.param_count());
    const double inv_n = 1.0 / static_cast<double>(batch_expert.size());
    for (const auto& t : batch_expert) {
        out.value -= inv_n * b.log_prob(t.x, t.u);
        b.add_log_prob_grad(t.x, t.u, -inv_n, out.grad);
    }
    return out;
}

LossValue loss_q_fit(const ValueFn& vf, std::span<const Transition> batch,
                     const RegularizationConfig& cfg) {
    require_nonempty(batch, "loss_q_fit");
    LossValue out;
    out.grad = Vec::Zero(vf.param_count());
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const auto& t : batch) {
        const double target = vf.r(t.x) + cfg.gamma * vf.v(t.x_next);  // blocked
        const double e = vf.q(t.x, t.u) - target;
        out.value += inv_n * e * e;
        vf.add_q_grad(t.x, t.u, 2.0 * e * inv_n, out.grad);
    }
    return out;
}

LossValue loss_model_disc_exact(const ValueFn& vf, const TabularSoftmaxMap& q,
                                const Vec& sa_weights, const Mat& p_real,
                                const RegularizationConfig& cfg) {
    if (sa_weights.size() != q.n_rows() || p_real.rows() != q.n_rows() ||
        p_real.cols() != q.n_out())
        throw std::invalid_argument("loss_model_disc_exact: shape mismatch");
    const int S = q.n_out();
    const int A = q.n_rows() / S;
    const double beta = cfg.beta();
    LossValue out;
    out.grad = Vec::Zero(vf.param_count());
    for (int x = 0; x < S; ++x) {
        for (int u = 0; u < A; ++u) {
            const int row = sa_index(x, u, A);
            const double w = sa_weights[row];
            if (w == 0.0) continue;
            const Vec xq = state_vec(x);
            const Vec uu = Vec::Constant(1, u);
            const double rx = vf.r(xq);
            const double qxu = vf.q(xq, uu);
            const Vec qlogp = q.row_log_probs(row);
            const Vec qp = qlogp.array().exp();
            for (int j = 0; j < S; ++j) {
                const double z =
                    beta * (rx + cfg.gamma * vf.v(state_vec(j)) - qxu -
                            std::max(qlogp[j], kLogFloor) / cfg.kappa);
                const double mass_real = p_real(row, j);
                const double mass_sim = qp[j];
                out.value += w * (mass_real * softplus(-z) + mass_sim * softplus(z));
                const double dl_dz =
                    w * (mass_real * (sigmoid(z) - 1.0) + mass_sim * sigmoid(z));
                vf.add_r_grad(xq, beta * dl_dz, out.grad);
                vf.add_v_grad(state_vec(j), beta * cfg.gamma * dl_dz, out.grad);
                vf.add_q_grad(xq, uu, -beta * dl_dz, out.grad);
            }
        }
    }
    return out;
}

LossValue loss_policy_disc_exact(const ValueFn& vf, const TabularSoftmaxMap& b,
                                 const Vec& x_weights, const Mat& pi_expert,
                                 const RegularizationConfig& cfg) {
    if (x_weights.size() != b.n_rows() || pi_expert.rows() != b.n_rows() ||
        pi_expert.cols() != b.n_out())
        throw std::invalid_argument("loss_policy_disc_exact: shape mismatch");
    const double beta = cfg.beta();
    LossValue out;
    out.grad = Vec::Zero(vf.param_count());
    for (int x = 0; x < b.n_rows(); ++x) {
        const double w = x_weights[x];
        if (w == 0.0) continue;
        const Vec xq = state_vec(x);
        const double vx = vf.v(xq);
        const Vec blogp = b.row_log_probs(x);
        const Vec bp = blogp.array().exp();
        for (int u = 0; u < b.n_out(); ++u) {
            const Vec uu = Vec::Constant(1, u);
            const double z = beta * (vf.q(xq, uu) - vx -
                                     std::max(blogp[u], kLogFloor) / cfg.kappa);
            out.value += w * (pi_expert(x, u) * softplus(-z) + bp[u] * softplus(z));
            const double dl_dz =
                w * (pi_expert(x, u) * (sigmoid(z) - 1.0) + bp[u] * sigmoid(z));
            vf.add_q_grad(xq, uu, beta * dl_dz, out.grad);
            vf.add_v_grad(xq, -beta * dl_dz, out.grad);
        }
    }
    return out;
}

LossValue loss_improve_model_exact(const TabularSoftmaxMap& q_new, const ValueFn& vf,
                                   const TabularSoftmaxMap& q_frozen, const Vec& sa_weights,
                                   const RegularizationConfig& cfg) {
    if (sa_weights.size() != q_new.n_rows())
        throw std::invalid_argument("loss_improve_model_exact: weight vector mismatch");
    const int S = q_new.n_out();
    const int A = q_new.n_rows() / S;
    const double beta = cfg.beta();
    LossValue out;
    out.grad = Vec::Zero(q_new.param_count());
    for (int x = 0; x < S; ++x)
        for (int u = 0; u < A; ++u) {
            const int row = sa_index(x, u, A);
            const double w = sa_weights[row];
            if (w == 0.0) continue;
            const Vec xq = state_vec(x);
            const double rx = vf.r(xq);
            const double qxu = vf.q(xq, Vec::Constant(1, u));
            const Vec frozen_logp = q_frozen.row_log_probs(row);
            Vec c(S);
            for (int j = 0; j < S; ++j)
                c[j] = beta * (rx + cfg.gamma * vf.v(state_vec(j)) +
                               std::max(frozen_logp[j], kLogFloor) / cfg.eta - qxu);
            out.value += w * tabular_kl_row(q_new, row, c, w, out.grad);
        }
    return out;
}

LossValue loss_improve_policy_exact(const TabularSoftmaxMap& b_new, const ValueFn& vf,
                                    const TabularSoftmaxMap& b_frozen, const Vec& x_weights,
                                    const RegularizationConfig& cfg) {
    if (x_weights.size() != b_new.n_rows())
        throw std::invalid_argument("loss_improve_policy_exact: weight vector mismatch");
    const double beta = cfg.beta();
    LossValue out;
    out.grad = Vec::Zero(b_new.param_count());
    for (int x = 0; x < b_new.n_rows(); ++x) {
        const double w = x_weights[x];
        if (w == 0.0) continue;
        const Vec xq = state_vec(x);
        const double vx = vf.v(xq);
        const Vec frozen_logp = b_frozen.row_log_probs(x);
        Vec c(b_new.n_out());
        for (int u = 0; u < b_new.n_out(); ++u)
            c[u] = beta * (vf.q(xq, Vec::Constant(1, u)) +
                           std::max(frozen_logp[u], kLogFloor) / cfg.eta - vx);
        out.value += w * tabular_kl_row(b_new, x, c, w, out.grad);
    }
    return out;
}

}  // namespace mberil
