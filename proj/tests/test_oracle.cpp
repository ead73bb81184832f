#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mberil/oracle.hpp"

#include <cmath>

using namespace mberil;

namespace {

/// Independent literal evaluation of the backup by plain summation in long
/// double; no max shift, no shared code with the implementation under test.
ValueTable literal_backup(const ValueTable& in, const TabularMdp& mdp, const Mat& q_map,
                          const Mat& b_map, const RegularizationConfig& cfg) {
    const long double beta = cfg.beta();
    ValueTable out;
    out.q = Mat(mdp.n_states, mdp.n_actions);
    out.v = Vec(mdp.n_states);
    for (int x = 0; x < mdp.n_states; ++x)
        for (int u = 0; u < mdp.n_actions; ++u) {
            long double s = 0.0L;
            for (int j = 0; j < mdp.n_states; ++j) {
                const double qj = q_map(mdp.sa(x, u), j);
                if (qj <= 0.0) continue;
                s += expl(beta *
                          (mdp.reward[x] + mdp.discount * in.v[j] + logl(qj) / cfg.eta));
            }
            out.q(x, u) = static_cast<double>(logl(s) / beta);
        }
    for (int x = 0; x < mdp.n_states; ++x) {
        long double s = 0.0L;
        for (int u = 0; u < mdp.n_actions; ++u)
            s += expl(beta *
                      (out.q(x, u) + logl(static_cast<long double>(b_map(x, u))) / cfg.eta));
        out.v[x] = static_cast<double>(logl(s) / beta);
    }
    return out;
}

Mat uniform_policy(int S, int A) { return Mat::Constant(S, A, 1.0 / A); }

}  // namespace

TEST_CASE("backup matches the literal evaluation to 1e-12") {
    Rng rng(101);
    const TabularMdp mdp = TabularMdp::random(5, 3, 0.9, rng);
    RegularizationConfig cfg;  // kappa = eta = 2
    const Mat q = mdp.transition;
    const Mat b = uniform_policy(5, 3);
    ValueTable vt;
    vt.v = Vec::Zero(5);
    vt.q = Mat::Zero(5, 3);
    for (int warm = 0; warm < 30; ++warm) vt = soft_backup(vt, mdp, q, b, cfg);
    const ValueTable ours = soft_backup(vt, mdp, q, b, cfg);
    const ValueTable ref = literal_backup(vt, mdp, q, b, cfg);
    CHECK((ours.v - ref.v).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((ours.q - ref.q).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("gamma=0 with a uniform model gives Q = r + ln(n)/kappa") {
    // With n equally likely next states the entropy and KL terms collapse to
    // a single kappa^-1 ln n bonus.
    const int n = 4;
    TabularMdp mdp;
    mdp.n_states = n;
    mdp.n_actions = 1;
    mdp.discount = 1e-12;  // gamma = 0 limit
    mdp.transition = Mat::Constant(n, n, 1.0 / n);
    mdp.reward = Vec::LinSpaced(n, -1.0, 2.0);
    mdp.initial_dist = Vec::Constant(n, 1.0 / n);
    RegularizationConfig cfg;
    cfg.gamma = mdp.discount;
    ValueTable vt;
    vt.v = Vec::Zero(n);
    vt.q = Mat::Zero(n, 1);
    const ValueTable out = soft_backup(vt, mdp, mdp.transition, uniform_policy(n, 1), cfg);
    for (int x = 0; x < n; ++x)
        CHECK(out.q(x, 0) ==
              doctest::Approx(mdp.reward[x] + std::log(n) / cfg.kappa).epsilon(1e-10));
}

TEST_CASE("single state self-loop fixed point is r/(1-gamma)") {
    TabularMdp mdp;
    mdp.n_states = 1;
    mdp.n_actions = 1;
    mdp.discount = 0.9;
    mdp.transition = Mat::Constant(1, 1, 1.0);
    mdp.reward = Vec::Constant(1, 0.7);
    mdp.initial_dist = Vec::Constant(1, 1.0);
    RegularizationConfig cfg;
    const SolveResult res = solve(mdp, mdp.transition, Mat::Constant(1, 1, 1.0), cfg);
    CHECK(res.values.v[0] == doctest::Approx(0.7 / 0.1).epsilon(1e-9));
}

TEST_CASE("solve converges quickly on random MDPs") {
    Rng rng(103);
    for (int trial = 0; trial < 20; ++trial) {
        const TabularMdp mdp = TabularMdp::random(10, 3, 0.9, rng);
        RegularizationConfig cfg;
        const SolveResult res = solve(mdp, mdp.transition, uniform_policy(10, 3), cfg, 1e-10);
        CHECK(res.residual < 1e-10);
        CHECK(res.iterations < 1000);
        for (Eigen::Index r = 0; r < res.expert_policy.rows(); ++r)
            CHECK(std::abs(res.expert_policy.row(r).sum() - 1.0) < 1e-9);
        for (Eigen::Index r = 0; r < res.expert_model.rows(); ++r)
            CHECK(std::abs(res.expert_model.row(r).sum() - 1.0) < 1e-9);
        // Sup-norm residual is non-increasing after the first iteration.
        for (std::size_t i = 1; i < res.residual_trace.size(); ++i)
            CHECK(res.residual_trace[i] <= res.residual_trace[i - 1] * (1.0 + 1e-12));
    }
}

TEST_CASE("zero reward with symmetric actions keeps the policy uniform") {
    Rng rng(107);
    TabularMdp mdp = TabularMdp::random(6, 3, 0.9, rng);
    mdp.reward.setZero();
    // Make every action identical so the problem is symmetric in u.
    for (int x = 0; x < 6; ++x)
        for (int u = 1; u < 3; ++u) mdp.transition.row(mdp.sa(x, u)) = mdp.transition.row(mdp.sa(x, 0));
    RegularizationConfig cfg;
    const SolveResult res = solve(mdp, mdp.transition, uniform_policy(6, 3), cfg);
    for (int x = 0; x < 6; ++x)
        for (int u = 0; u < 3; ++u)
            CHECK(res.expert_policy(x, u) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("constant reward shift moves V by c/(1-gamma) and fixes pi and p") {
    Rng rng(109);
    const TabularMdp mdp = TabularMdp::random(7, 2, 0.9, rng);
    RegularizationConfig cfg;
    const Mat b = uniform_policy(7, 2);
    const SolveResult base = solve(mdp, mdp.transition, b, cfg);
    TabularMdp shifted = mdp;
    const double c = 2.5;
    shifted.reward.array() += c;
    const SolveResult moved = solve(shifted, shifted.transition, b, cfg);
    CHECK((moved.values.v - base.values.v).cwiseAbs().maxCoeff() ==
          doctest::Approx(c / (1.0 - 0.9)).epsilon(1e-7));
    CHECK((moved.values.v - base.values.v).minCoeff() ==
          doctest::Approx(c / (1.0 - 0.9)).epsilon(1e-7));
    CHECK((moved.expert_policy - base.expert_policy).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((moved.expert_model - base.expert_model).cwiseAbs().maxCoeff() < 1e-9);
    const RatioTables rb = log_density_ratios(base.values, mdp.reward, mdp.transition, b, cfg);
    const RatioTables rm =
        log_density_ratios(moved.values, shifted.reward, shifted.transition, b, cfg);
    for (Eigen::Index i = 0; i < rb.model.rows(); ++i)
        for (Eigen::Index j = 0; j < rb.model.cols(); ++j)
            if (std::isfinite(rb.model(i, j)))
                CHECK(rb.model(i, j) == doctest::Approx(rm.model(i, j)).epsilon(1e-9));
    CHECK((rb.policy - rm.policy).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("induced model equals the baseline when it is deterministic") {
    TabularMdp mdp = TabularMdp::chain2(1.0);
    RegularizationConfig cfg;
    const SolveResult res = solve(mdp, mdp.transition, uniform_policy(2, 1), cfg);
    // One support point per row: the normalizer forces p = q exactly.
    CHECK(res.expert_model(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.expert_model(1, 1) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("large eta removes the anchor to q") {
    Rng rng(113);
    const TabularMdp mdp = TabularMdp::random(5, 2, 0.9, rng);
    RegularizationConfig cfg;
    cfg.eta = 1e6;
    const Mat b = uniform_policy(5, 2);
    const SolveResult res = solve(mdp, mdp.transition, b, cfg);
    // p should be proportional to exp[beta (r + gamma V')] regardless of q.
    const double beta = cfg.beta();
    for (int x = 0; x < 5; ++x)
        for (int u = 0; u < 2; ++u) {
            Vec expect(5);
            for (int j = 0; j < 5; ++j)
                expect[j] = std::exp(beta * (mdp.reward[x] + 0.9 * res.values.v[j]));
            expect /= expect.sum();
            for (int j = 0; j < 5; ++j)
                CHECK(res.expert_model(mdp.sa(x, u), j) ==
                      doctest::Approx(expect[j]).epsilon(1e-4));
        }
}

TEST_CASE("large kappa concentrates the policy on the best action") {
    // kappa -> infinity drops the entropy bonus, leaving a softmax at inverse
    // temperature beta -> eta over Q + eta^-1 ln b; with decisive Q gaps the
    // induced policy piles onto the argmax.
    RegularizationConfig cfg;
    cfg.kappa = 1e6;
    const double beta = cfg.beta();
    const int S = 4, A = 3;
    Rng rng(127);
    ValueTable vt;
    vt.q = Mat(S, A);
    for (int x = 0; x < S; ++x) {
        vt.q(x, 0) = 5.0 + rng.uniform();
        vt.q(x, 1) = rng.uniform();
        vt.q(x, 2) = -1.0 + rng.uniform();
    }
    const Mat b = uniform_policy(S, A);
    vt.v = Vec(S);
    for (int x = 0; x < S; ++x) {
        Vec terms(A);
        for (int u = 0; u < A; ++u) terms[u] = beta * (vt.q(x, u) + std::log(b(x, u)) / cfg.eta);
        vt.v[x] = logsumexp(terms) / beta;
    }
    const Mat pi = induced_policy(vt, b, cfg);
    for (int x = 0; x < S; ++x) {
        CHECK(std::abs(pi.row(x).sum() - 1.0) < 1e-9);
        CHECK(pi(x, 0) > 0.99);
    }
}

TEST_CASE("inner objective is maximized by the induced model and equals Q") {
    Rng rng(131);
    const TabularMdp mdp = TabularMdp::random(5, 3, 0.9, rng);
    RegularizationConfig cfg;
    const Mat q = mdp.transition;
    const SolveResult res = solve(mdp, q, uniform_policy(5, 3), cfg);
    for (int x = 0; x < 5; ++x)
        for (int u = 0; u < 3; ++u) {
            Vec opt = res.expert_model.row(mdp.sa(x, u)).transpose();
            opt /= opt.sum();
            const double at_opt = inner_objective(opt, x, u, res.values, mdp, q, cfg);
            CHECK(at_opt == doctest::Approx(res.values.q(x, u)).epsilon(1e-8));
            for (int k = 0; k < 100; ++k) {
                Vec perturbed = opt;
                for (int j = 0; j < 5; ++j) perturbed[j] *= std::exp(0.4 * rng.normal());
                perturbed /= perturbed.sum();
                CHECK(inner_objective(perturbed, x, u, res.values, mdp, q, cfg) < at_opt);
            }
        }
}

TEST_CASE("inner objective with kappa = eta at q recovers the entropy") {
    Rng rng(137);
    TabularMdp mdp = TabularMdp::random(4, 1, 0.9, rng);
    mdp.reward.setZero();
    RegularizationConfig cfg;  // kappa = eta = 2
    ValueTable vt;
    vt.v = Vec::Zero(4);
    vt.q = Mat::Zero(4, 1);
    const Vec row = mdp.transition.row(0).transpose();
    double entropy = 0.0;
    for (int j = 0; j < 4; ++j) entropy -= row[j] * std::log(row[j]);
    CHECK(inner_objective(row, 0, 0, vt, mdp, mdp.transition, cfg) ==
          doctest::Approx(entropy / cfg.kappa).epsilon(1e-12));
}

TEST_CASE("inner objective rejects invalid distributions") {
    Rng rng(139);
    const TabularMdp mdp = TabularMdp::random(3, 1, 0.9, rng);
    RegularizationConfig cfg;
    ValueTable vt;
    vt.v = Vec::Zero(3);
    vt.q = Mat::Zero(3, 1);
    Vec bad = Vec::Constant(3, 0.5);
    CHECK_THROWS_AS(inner_objective(bad, 0, 0, vt, mdp, mdp.transition, cfg),
                    std::invalid_argument);
}

TEST_CASE("ratio tables agree with the direct log of induced over baseline") {
    Rng rng(149);
    const TabularMdp mdp = TabularMdp::random(6, 2, 0.9, rng);
    RegularizationConfig cfg;
    cfg.kappa = 3.0;
    cfg.eta = 1.5;
    const Mat q = mdp.transition;
    const Mat b = uniform_policy(6, 2);
    const SolveResult res = solve(mdp, q, b, cfg);
    const RatioTables ratios = log_density_ratios(res.values, mdp.reward, q, b, cfg);
    const double beta = cfg.beta();
    for (int x = 0; x < 6; ++x)
        for (int u = 0; u < 2; ++u) {
            for (int j = 0; j < 6; ++j)
                CHECK(ratios.model(mdp.sa(x, u), j) ==
                      doctest::Approx(std::log(res.expert_model(mdp.sa(x, u), j) / q(mdp.sa(x, u), j)) /
                                      beta)
                          .epsilon(1e-9));
            CHECK(ratios.policy(x, u) ==
                  doctest::Approx(std::log(res.expert_policy(x, u) / b(x, u)) / beta)
                      .epsilon(1e-9));
        }
}

TEST_CASE("model ratio table vanishes when f equals kappa^-1 ln q") {
    // Next-state-only model: ln q(x'|x,u) = ln g(x'), so r = 0, Q = 0 and
    // V = ln g / (gamma kappa) make f - kappa^-1 ln q vanish identically.
    const int S = 3;
    RegularizationConfig cfg;
    Vec g(S);
    g << 0.2, 0.3, 0.5;
    Mat q(S, S);  // one action
    for (int r = 0; r < S; ++r) q.row(r) = g.transpose();
    ValueTable vt;
    vt.v = g.array().log() / (cfg.gamma * cfg.kappa);
    vt.q = Mat::Zero(S, 1);
    const Vec reward = Vec::Zero(S);
    const Mat b = Mat::Constant(S, 1, 1.0);
    const RatioTables tables = log_density_ratios(vt, reward, q, b, cfg);
    CHECK(tables.model.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("policy ratio table vanishes when b matches the induced policy") {
    const int S = 3, A = 3;
    RegularizationConfig cfg;
    Vec g(A);
    g << 0.2, 0.3, 0.5;
    Mat b(S, A);
    for (int r = 0; r < S; ++r) b.row(r) = g.transpose();
    ValueTable vt;
    vt.v = Vec::Zero(S);
    vt.q = (b.array().log() / cfg.kappa).matrix();  // Q - V = kappa^-1 ln b
    const Vec reward = Vec::Zero(S);
    const Mat q = Mat::Constant(S * A, S, 1.0 / S);
    const RatioTables tables = log_density_ratios(vt, reward, q, b, cfg);
    CHECK(tables.policy.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("support violations raise domain errors") {
    TabularMdp mdp = TabularMdp::chain2(0.7);
    RegularizationConfig cfg;
    Mat q = mdp.transition;
    q(0, 1) = 0.0;  // remove mass where the MDP can actually go
    q(0, 0) = 1.0;
    CHECK_THROWS_AS(solve(mdp, q, Mat::Constant(2, 1, 1.0), cfg), std::domain_error);
    Mat b = Mat::Constant(2, 1, 1.0);
    b(0, 0) = 0.0;
    CHECK_THROWS_AS(solve(mdp, mdp.transition, b, cfg), std::domain_error);
}

TEST_CASE("non-convergence carries the final residual") {
    Rng rng(151);
    const TabularMdp mdp = TabularMdp::random(6, 2, 0.9, rng);
    RegularizationConfig cfg;
    try {
        solve(mdp, mdp.transition, uniform_policy(6, 2), cfg, 1e-10, 3);
        FAIL("expected ConvergenceError");
    } catch (const ConvergenceError& e) {
        CHECK(e.residual > 0.0);
    }
}
