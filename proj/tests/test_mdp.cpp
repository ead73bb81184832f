#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mberil/approx.hpp"
#include "mberil/mdp.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace mberil;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("tabular mdp validation") {
    Rng rng(1);
    TabularMdp mdp = TabularMdp::random(4, 2, 0.9, rng);
    CHECK_NOTHROW(mdp.validate());

    SUBCASE("non-stochastic row rejected") {
        mdp.transition(0, 0) += 0.1;
        CHECK_THROWS_AS(mdp.validate(), std::invalid_argument);
    }
    SUBCASE("negative probability rejected") {
        mdp.transition(0, 0) = -0.1;
        mdp.transition(0, 1) += 0.1;
        CHECK_THROWS_AS(mdp.validate(), std::invalid_argument);
    }
    SUBCASE("discount outside (0,1) rejected") {
        mdp.discount = 1.0;
        CHECK_THROWS_AS(mdp.validate(), std::invalid_argument);
    }
    SUBCASE("initial distribution must normalize") {
        mdp.initial_dist[0] += 0.5;
        CHECK_THROWS_AS(mdp.validate(), std::invalid_argument);
    }
}

TEST_CASE("step on a deterministic chain") {
    TabularMdp mdp = TabularMdp::chain2(1.0);
    Rng rng(7);
    const Vec next = step(mdp, Vec::Constant(1, 0.0), Vec::Constant(1, 0.0), rng);
    CHECK(next[0] == 1.0);
    CHECK_THROWS_AS(step(mdp, Vec::Constant(1, 5.0), Vec::Constant(1, 0.0), rng),
                    std::invalid_argument);
}

TEST_CASE("step matches the stored row empirically") {
    TabularMdp mdp = TabularMdp::chain2(0.7);
    Rng rng(11);
    const int draws = 100000;
    int advanced = 0;
    for (int i = 0; i < draws; ++i) {
        const Vec next = step(mdp, Vec::Constant(1, 0.0), Vec::Constant(1, 0.0), rng);
        if (next[0] == 1.0) ++advanced;
    }
    const double freq = static_cast<double>(advanced) / draws;
    CHECK(freq == doctest::Approx(0.7).epsilon(0.015));
}

TEST_CASE("continuous actions are clamped before stepping") {
    ContinuousEnv env = make_point_mass();
    // Noise-free dynamics so the clamping equivalence is exact.
    env.dynamics = [](const Vec& x, const Vec& u, Rng&) { return Vec(x + 0.1 * u); };
    Rng rng(3);
    const Vec x = Vec::Zero(2);
    Vec u_big(2), u_edge(2);
    u_big << 2.0, -3.5;
    u_edge << 1.0, -1.0;
    const Vec a = step(env, x, u_big, rng);
    const Vec b = step(env, x, u_edge, rng);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("rollout produces chained trajectories of the requested horizon") {
    const TabularMdp mdp = TabularMdp::gridworld(4, 4);
    const Env env = mdp;
    const TabularSoftmaxMap policy = TabularSoftmaxMap::policy(mdp.n_states, mdp.n_actions);
    Rng rng(5);
    const Trajectory traj = rollout(env, policy, 50, rng);
    CHECK(traj.horizon() == 50);
    CHECK(traj.chained());

    Rng r1(99), r2(99);
    const Trajectory a = rollout(env, policy, 17, r1);
    const Trajectory b = rollout(env, policy, 17, r2);
    for (int i = 0; i < 17; ++i) {
        CHECK(a.transitions[i].xi() == b.transitions[i].xi());
        CHECK(a.transitions[i].ui() == b.transitions[i].ui());
        CHECK(a.transitions[i].xni() == b.transitions[i].xni());
    }

    Rng r3(4);
    const Trajectory single = rollout(env, policy, 1, r3);
    CHECK(single.horizon() == 1);
    CHECK(single.transitions[0].xi() == 0);  // gridworld starts at cell 0
    CHECK_THROWS_AS(rollout(env, policy, 0, r3), std::invalid_argument);
}

TEST_CASE("discounted state sampler") {
    const TabularSoftmaxMap policy = TabularSoftmaxMap::policy(2, 1);
    SUBCASE("gamma to zero returns the initial state") {
        const TabularMdp chain = TabularMdp::chain2(1.0);
        Rng rng(13);
        for (int i = 0; i < 200; ++i)
            CHECK(sample_discounted_state(chain, policy, 1e-9, rng)[0] == 0.0);
    }
    SUBCASE("matches the analytic visitation on the absorbing chain") {
        const TabularMdp chain = TabularMdp::chain2(1.0);
        Rng rng(17);
        const int draws = 100000;
        int zeros = 0;
        for (int i = 0; i < draws; ++i)
            if (sample_discounted_state(chain, policy, 0.5, rng)[0] == 0.0) ++zeros;
        // Visitation of state 0 is (1 - gamma) sum gamma^t P(x_t = 0) = 0.5.
        const double freq = static_cast<double>(zeros) / draws;
        const double sd = std::sqrt(0.25 / draws);
        CHECK(std::abs(freq - 0.5) < 3.0 * sd);
    }
    SUBCASE("self-loop env always returns the start state") {
        TabularMdp loop = TabularMdp::chain2(0.0);
        Rng rng(19);
        for (int i = 0; i < 100; ++i)
            CHECK(sample_discounted_state(loop, policy, 0.9, rng)[0] == 0.0);
    }
}

TEST_CASE("transition buffer push and sample") {
    Rng rng(23);
    TransitionBuffer buf(BufferRole::Expert);
    CHECK_THROWS_AS(buf.sample_one(rng), std::logic_error);
    buf.push(Transition::tabular(3, 1, 4));
    const Transition& t = buf.sample_one(rng);
    CHECK(t.xi() == 3);
    CHECK(t.ui() == 1);
    CHECK(t.xni() == 4);

    Transition bad = Transition::tabular(0, 0, 0);
    bad.x[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(buf.push(bad), std::invalid_argument);
}

TEST_CASE("capacity evicts oldest entries first") {
    TransitionBuffer buf(BufferRole::Simulated, 2);
    buf.push(Transition::tabular(0, 0, 0));
    buf.push(Transition::tabular(1, 0, 0));
    buf.push(Transition::tabular(2, 0, 0));
    REQUIRE(buf.size() == 2);
    CHECK(buf.at(0).xi() == 1);
    CHECK(buf.at(1).xi() == 2);
}

TEST_CASE("buffer sampling is uniform") {
    TransitionBuffer buf(BufferRole::RealLearner);
    for (int i = 0; i < 100; ++i) buf.push(Transition::tabular(i, 0, 0));
    Rng rng(29);
    std::vector<int> counts(100, 0);
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) counts[buf.sample_one(rng).xi()] += 1;

    SUBCASE("per-entry frequency within the binomial bound") {
        for (int c : counts) CHECK(std::abs(c - 1000) <= 120);
    }
    SUBCASE("chi-square uniformity at p > 0.01") {
        double chi2 = 0.0;
        for (int c : counts) chi2 += (c - 1000.0) * (c - 1000.0) / 1000.0;
        CHECK(chi2 < 134.64);  // 0.99 quantile, 99 degrees of freedom
    }
}

TEST_CASE("buffer csv round trip is exact") {
    Rng rng(31);
    TransitionBuffer buf(BufferRole::Expert, 500);
    for (int i = 0; i < 20; ++i) {
        Transition t;
        t.x = rng.normal_vec(2) * 1e3;
        t.u = rng.normal_vec(1);
        t.x_next = rng.normal_vec(2) * 1e-7;
        buf.push(std::move(t));
    }
    const std::string path = temp_path("mberil_buf_test.csv");
    buf.save_csv(path);
    const TransitionBuffer loaded = TransitionBuffer::load_csv(path);
    REQUIRE(loaded.size() == buf.size());
    CHECK(loaded.role() == BufferRole::Expert);
    for (std::size_t i = 0; i < buf.size(); ++i) {
        CHECK((loaded.at(i).x.array() == buf.at(i).x.array()).all());
        CHECK((loaded.at(i).u.array() == buf.at(i).u.array()).all());
        CHECK((loaded.at(i).x_next.array() == buf.at(i).x_next.array()).all());
    }
    std::remove(path.c_str());
}

TEST_CASE("mdp file round trip") {
    Rng rng(37);
    const TabularMdp mdp = TabularMdp::random(5, 3, 0.85, rng);
    const std::string path = temp_path("mberil_mdp_test.mdp");
    mdp.save(path);
    const TabularMdp loaded = TabularMdp::load(path);
    CHECK(loaded.n_states == 5);
    CHECK(loaded.n_actions == 3);
    CHECK(loaded.discount == mdp.discount);
    CHECK((loaded.transition - mdp.transition).cwiseAbs().maxCoeff() == 0.0);
    CHECK((loaded.reward - mdp.reward).cwiseAbs().maxCoeff() == 0.0);
    std::remove(path.c_str());
}

TEST_CASE("mdp file with unknown key is rejected") {
    const std::string path = temp_path("mberil_bad_test.mdp");
    {
        std::ofstream os(path);
        os << "states 2\nactions 1\nbogus 3\n";
    }
    CHECK_THROWS_AS(TabularMdp::load(path), std::runtime_error);
    std::remove(path.c_str());
}

TEST_CASE("union sampling pools entries proportionally") {
    TransitionBuffer a(BufferRole::Expert), b(BufferRole::RealLearner);
    for (int i = 0; i < 30; ++i) a.push(Transition::tabular(0, 0, 0));
    for (int i = 0; i < 70; ++i) b.push(Transition::tabular(1, 0, 0));
    Rng rng(41);
    int from_b = 0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i)
        if (sample_union(a, b, rng).xi() == 1) ++from_b;
    const double freq = static_cast<double>(from_b) / draws;
    CHECK(freq == doctest::Approx(0.7).epsilon(0.02));
}
