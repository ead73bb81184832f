#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mberil/losses.hpp"
#include "mberil/train.hpp"

#include <cstdio>
#include <filesystem>
#include <sstream>

using namespace mberil;

namespace {

Schedule tiny_schedule() {
    Schedule s;
    s.iterations = 2;
    s.n_real = 40;
    s.n_sim = 120;
    s.disc_steps = 5;
    s.pe_steps = 5;
    s.improve_steps = 5;
    s.model_ml_steps = 5;
    s.batch = 16;
    s.k_model = 0;
    s.k_policy = 0;
    s.lr = 0.05;
    s.horizon = 20;
    s.eval_episodes = 3;
    return s;
}

TransitionBuffer deterministic_expert(const TabularMdp& mdp, int per_state) {
    // One fixed action per state; next states sampled from the dynamics.
    TransitionBuffer buf(BufferRole::Expert);
    Rng rng(900);
    for (int x = 0; x < mdp.n_states; ++x) {
        const int u = (x * 2 + 1) % mdp.n_actions;
        for (int i = 0; i < per_state; ++i) {
            const Vec xv = Vec::Constant(1, x);
            const Vec uv = Vec::Constant(1, u);
            Rng step_rng(derive_seed(900, x * 1000 + i));
            buf.push({xv, uv, step(mdp, xv, uv, step_rng)});
        }
    }
    return buf;
}

std::string rows_of(const std::vector<IterationReport>& reports) {
    std::ostringstream os;
    for (const auto& r : reports) os << r.csv_row() << "\n";
    return os.str();
}

}  // namespace

TEST_CASE("schedule defaults match the reference protocol") {
    const Schedule s;
    CHECK(s.n_real == 100);
    CHECK(s.n_sim == 10000);
    CHECK(s.horizon == 50);
    CHECK(s.lr == 3e-4);
}

TEST_CASE("optimizer step behavior") {
    SUBCASE("zero gradient leaves parameters unchanged") {
        Vec p = Vec::Constant(3, 1.5);
        Adam opt;
        opt.init(3);
        optimizer_step(p, Vec::Zero(3), opt, 0.1);
        CHECK((p.array() == 1.5).all());
    }
    SUBCASE("constant gradient approaches an lr-sized signed step") {
        Vec p = Vec::Zero(2);
        Vec g(2);
        g << 3.0, -0.25;
        Adam opt;
        opt.init(2);
        const double lr = 0.01;
        Vec prev = p;
        for (int t = 0; t < 400; ++t) {
            prev = p;
            optimizer_step(p, g, opt, lr);
        }
        const Vec delta = p - prev;
        CHECK(delta[0] == doctest::Approx(-lr).epsilon(1e-3));
        CHECK(delta[1] == doctest::Approx(lr).epsilon(1e-3));
    }
    SUBCASE("zero learning rate is a no-op") {
        Vec p = Vec::Constant(4, -0.3);
        Adam opt;
        opt.init(4);
        optimizer_step(p, Vec::Ones(4), opt, 0.0);
        CHECK((p.array() == -0.3).all());
    }
    SUBCASE("non-finite gradients are rejected") {
        Vec p = Vec::Zero(2);
        Vec g = Vec::Zero(2);
        g[1] = std::numeric_limits<double>::quiet_NaN();
        Adam opt;
        opt.init(2);
        CHECK_THROWS_AS(optimizer_step(p, g, opt, 0.1), std::runtime_error);
    }
}

TEST_CASE("variant names round trip") {
    for (Variant v : all_variants()) CHECK(variant_from_string(to_string(v)) == v);
    CHECK_THROWS_AS(variant_from_string("GAIL"), std::invalid_argument);
    CHECK(variant_has_model(Variant::MbEril));
    CHECK(variant_has_model(Variant::DynaMfEril));
    CHECK_FALSE(variant_has_model(Variant::MfEril));
    CHECK_FALSE(variant_has_model(Variant::Bc));
}

TEST_CASE("expert world reaches a self-consistent fixed point") {
    RegularizationConfig cfg;
    const TabularMdp base = TabularMdp::gridworld(4, 4);
    const ExpertWorld world = make_expert_world(base, cfg);
    CHECK(world.outer_residual < 1e-12);
    CHECK_NOTHROW(world.env.validate());
    // The fixed-point dynamics keep the original support.
    for (Eigen::Index r = 0; r < base.transition.rows(); ++r)
        for (Eigen::Index j = 0; j < base.transition.cols(); ++j)
            if (base.transition(r, j) == 0.0) CHECK(world.env.transition(r, j) == 0.0);
}

TEST_CASE("expert datasets have the right shape and statistics") {
    RegularizationConfig cfg;
    const TabularMdp base = TabularMdp::gridworld(3, 3);
    const ExpertWorld world = make_expert_world(base, cfg);
    Rng rng(77);
    const TransitionBuffer buf = sample_expert(world, 30, 50, rng);
    CHECK(buf.size() == 30 * 50);  // N^E = trajectories x horizon

    // Empirical action frequencies at each visited state match the expert
    // policy within 3 sigma of the multinomial bound.
    Mat counts = Mat::Zero(base.n_states, base.n_actions);
    for (std::size_t i = 0; i < buf.size(); ++i) counts(buf.at(i).xi(), buf.at(i).ui()) += 1.0;
    for (int x = 0; x < base.n_states; ++x) {
        const double n = counts.row(x).sum();
        if (n < 50) continue;
        for (int u = 0; u < base.n_actions; ++u) {
            const double pi = world.policy(x, u);
            const double sd = std::sqrt(pi * (1.0 - pi) / n);
            CHECK(std::abs(counts(x, u) / n - pi) < 3.5 * sd + 1e-9);
        }
    }

    SUBCASE("discounted starts draw from the visitation distribution") {
        Rng rng2(78);
        const TransitionBuffer disc = sample_expert(world, 200, 3, rng2, true);
        CHECK(disc.size() == 600);
    }
    SUBCASE("make_expert wraps world construction") {
        Rng rng3(79);
        const TransitionBuffer direct = make_expert(base, cfg, 4, 25, rng3);
        CHECK(direct.size() == 100);
    }
}

TEST_CASE("behavior cloning reaches a perfect action match on deterministic experts") {
    const TabularMdp mdp = TabularMdp::gridworld(3, 3);
    const TransitionBuffer expert = deterministic_expert(mdp, 30);
    Schedule s = tiny_schedule();
    s.iterations = 12;
    s.disc_steps = 40;
    s.lr = 0.2;
    Trainer trainer(Variant::Bc, mdp, expert, RegularizationConfig{}, s, 5);
    trainer.run(nullptr);
    const auto& b = dynamic_cast<const TabularSoftmaxMap&>(trainer.policy());
    for (int x = 0; x < mdp.n_states; ++x) {
        const int expected = (x * 2 + 1) % mdp.n_actions;
        int argmax = 0;
        b.row_probs(x).maxCoeff(&argmax);
        CHECK(argmax == expected);
    }
    CHECK(trainer.real_interactions() == 0);  // BC never touches the environment
}

TEST_CASE("oracle initialization balances both discriminators") {
    RegularizationConfig cfg;
    const TabularMdp base = TabularMdp::gridworld(3, 3);
    const ExpertWorld world = make_expert_world(base, cfg);
    Rng rng(81);
    const TransitionBuffer expert = sample_expert(world, 10, 30, rng);
    Trainer trainer(Variant::MbEril, world.env, expert, cfg, tiny_schedule(), 9);
    trainer.init_value_fn(
        TabularValueFn::from_tables(world.env.reward, world.values.v, world.values.q));
    trainer.init_model(
        TabularSoftmaxMap::from_table({base.n_states, base.n_actions}, world.env.transition));
    trainer.init_policy(TabularSoftmaxMap::from_table({base.n_states}, world.policy));
    for (int x = 0; x < base.n_states; ++x)
        for (int u = 0; u < base.n_actions; ++u) {
            for (int j = 0; j < base.n_states; ++j) {
                if (world.env.transition(world.env.sa(x, u), j) <= 0.0) continue;
                CHECK(std::abs(d_model(trainer.value_fn(), *trainer.model(),
                                       Transition::tabular(x, u, j), cfg) -
                               0.5) < 1e-6);
            }
            CHECK(std::abs(d_policy(trainer.value_fn(), trainer.policy(), Vec::Constant(1, x),
                                    Vec::Constant(1, u), cfg) -
                           0.5) < 1e-6);
        }
}

TEST_CASE("discriminator phase freezes the generator parameters") {
    RegularizationConfig cfg;
    const TabularMdp base = TabularMdp::gridworld(3, 3);
    const ExpertWorld world = make_expert_world(base, cfg);
    Rng rng(83);
    const TransitionBuffer expert = sample_expert(world, 10, 30, rng);
    Trainer trainer(Variant::MbEril, world.env, expert, cfg, tiny_schedule(), 11);
    trainer.collect_real(40);
    trainer.collect_sim(120);
    const Vec q_before = trainer.model()->params();
    const Vec b_before = trainer.policy().params();
    const Vec vf_before = trainer.value_fn().params();
    trainer.phase_disc();
    CHECK((trainer.model()->params() - q_before).cwiseAbs().maxCoeff() == 0.0);
    CHECK((trainer.policy().params() - b_before).cwiseAbs().maxCoeff() == 0.0);
    CHECK((trainer.value_fn().params() - vf_before).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("phase order follows the algorithm per variant") {
    RegularizationConfig cfg;
    const TabularMdp base = TabularMdp::gridworld(3, 3);
    const ExpertWorld world = make_expert_world(base, cfg);
    Rng rng(87);
    const TransitionBuffer expert = sample_expert(world, 10, 30, rng);
    const Schedule s = tiny_schedule();

    SUBCASE("MB-ERIL runs the full six-phase schedule") {
        Trainer trainer(Variant::MbEril, world.env, expert, cfg, s, 13);
        trainer.run_iteration();
        const std::vector<std::string> expected = {"collect_real", "collect_sim", "disc",
                                                   "collect_sim", "pe", "improve"};
        REQUIRE(trainer.phase_trace().size() == expected.size());
        for (std::size_t i = 0; i < expected.size(); ++i)
            CHECK(trainer.phase_trace()[i] == expected[i]);
        CHECK(trainer.phase_counts().disc_steps == s.disc_steps);
        CHECK(trainer.phase_counts().pe_steps == s.pe_steps);
        CHECK(trainer.phase_counts().improve_steps == s.improve_steps);
        CHECK(trainer.phase_counts().sim_collections == 2);
    }
    SUBCASE("the no-PE ablation executes zero policy-evaluation steps") {
        Trainer trainer(Variant::MbErilNoPe, world.env, expert, cfg, s, 13);
        trainer.run_iteration();
        trainer.run_iteration();
        CHECK(trainer.phase_counts().pe_steps == 0);
        CHECK(trainer.phase_counts().sim_collections == 2);  // one per iteration
        for (const auto& phase : trainer.phase_trace()) CHECK(phase != "pe");
    }
    SUBCASE("ERMBC replaces discriminator training with maximum likelihood") {
        Trainer trainer(Variant::Ermbc, world.env, expert, cfg, s, 13);
        trainer.run_iteration();
        CHECK(trainer.phase_counts().ermbc_steps == s.disc_steps);
        CHECK(trainer.phase_counts().disc_steps == 0);
        CHECK(trainer.phase_counts().pe_steps == s.pe_steps);
    }
    SUBCASE("Dyna fits the model by maximum likelihood") {
        Trainer trainer(Variant::DynaMfEril, world.env, expert, cfg, s, 13);
        trainer.run_iteration();
        CHECK(trainer.phase_counts().ml_steps == s.model_ml_steps);
        CHECK(trainer.phase_counts().sim_collections == 1);
    }
    SUBCASE("MF-ERIL never touches a model") {
        Trainer trainer(Variant::MfEril, world.env, expert, cfg, s, 13);
        trainer.run_iteration();
        CHECK(trainer.model() == nullptr);
        CHECK(trainer.phase_counts().sim_collections == 0);
        CHECK(trainer.sim_buffer().empty());
    }
}

TEST_CASE("interaction accounting") {
    RegularizationConfig cfg;
    const TabularMdp base = TabularMdp::gridworld(3, 3);
    const ExpertWorld world = make_expert_world(base, cfg);
    Rng rng(91);
    const TransitionBuffer expert = sample_expert(world, 10, 30, rng);
    Schedule s = tiny_schedule();
    s.iterations = 3;
    Trainer trainer(Variant::MbEril, world.env, expert, cfg, s, 17);
    const auto reports = trainer.run(nullptr);
    REQUIRE(reports.size() == 3);
    // Real interactions grow only through real collection.
    CHECK(trainer.real_interactions() == 3 * s.n_real);
    for (int i = 0; i < 3; ++i) CHECK(reports[i].real_interactions == (i + 1) * s.n_real);
    // Evaluation episodes are tracked separately and never enter buffers.
    CHECK(trainer.eval_interactions() == 3L * s.eval_episodes * s.horizon);
    CHECK(trainer.real_buffer().size() == 3 * static_cast<std::size_t>(s.n_real));
}

TEST_CASE("identical seeds give identical reports") {
    RegularizationConfig cfg;
    const TabularMdp base = TabularMdp::gridworld(3, 3);
    const ExpertWorld world = make_expert_world(base, cfg);
    Rng rng(93);
    const TransitionBuffer expert = sample_expert(world, 10, 30, rng);
    const Schedule s = tiny_schedule();
    for (Variant v : {Variant::MbEril, Variant::MfEril, Variant::Bc}) {
        Trainer a(v, world.env, expert, cfg, s, 23);
        Trainer b(v, world.env, expert, cfg, s, 23);
        CHECK(rows_of(a.run(nullptr)) == rows_of(b.run(nullptr)));
        Trainer c(v, world.env, expert, cfg, s, 24);
        CHECK(rows_of(c.run(nullptr)) != rows_of(b.run(nullptr)));
    }
}

TEST_CASE("divergence guard reports instead of crashing") {
    RegularizationConfig cfg;
    const TabularMdp base = TabularMdp::gridworld(3, 3);
    const ExpertWorld world = make_expert_world(base, cfg);
    Rng rng(95);
    const TransitionBuffer expert = sample_expert(world, 10, 30, rng);
    Trainer trainer(Variant::MbEril, world.env, expert, cfg, tiny_schedule(), 29);
    TabularValueFn poisoned(base.n_states, base.n_actions);
    poisoned.v_table()[0] = std::numeric_limits<double>::quiet_NaN();
    trainer.init_value_fn(poisoned);
    const auto reports = trainer.run(nullptr);
    CHECK(trainer.diverged());
    CHECK(!trainer.divergence_note().empty());
    CHECK(reports.size() <= 1);
}

TEST_CASE("checkpoints resume bit-identically") {
    RegularizationConfig cfg;
    const TabularMdp base = TabularMdp::gridworld(3, 3);
    const ExpertWorld world = make_expert_world(base, cfg);
    Rng rng(97);
    const TransitionBuffer expert = sample_expert(world, 10, 30, rng);
    Schedule s = tiny_schedule();
    s.iterations = 4;

    Trainer straight(Variant::MbEril, world.env, expert, cfg, s, 31);
    std::vector<IterationReport> all;
    for (int i = 0; i < 4; ++i) all.push_back(straight.run_iteration());

    const std::string path =
        (std::filesystem::temp_directory_path() / "mberil_ckpt_test.txt").string();
    Trainer first(Variant::MbEril, world.env, expert, cfg, s, 31);
    first.run_iteration();
    first.run_iteration();
    first.save_checkpoint(path);

    Trainer resumed(Variant::MbEril, world.env, expert, cfg, s, 999);  // seed overridden by load
    resumed.load_checkpoint(path);
    std::vector<IterationReport> tail;
    tail.push_back(resumed.run_iteration());
    tail.push_back(resumed.run_iteration());
    CHECK(tail[0].csv_row() == all[2].csv_row());
    CHECK(tail[1].csv_row() == all[3].csv_row());
    std::remove(path.c_str());

    SUBCASE("wrong variant is rejected") {
        Trainer first2(Variant::MbEril, world.env, expert, cfg, s, 31);
        first2.save_checkpoint(path);
        Trainer other(Variant::Ermbc, world.env, expert, cfg, s, 31);
        CHECK_THROWS_AS(other.load_checkpoint(path), std::runtime_error);
        std::remove(path.c_str());
    }
}

TEST_CASE("point-mass expert and continuous training smoke") {
    const ContinuousEnv env = make_point_mass();
    Rng rng(101);
    const TransitionBuffer expert = make_point_mass_expert(env, 300, 30, rng);
    CHECK(expert.size() == 300);
    for (std::size_t i = 0; i < expert.size(); ++i) CHECK(expert.at(i).finite());

    Schedule s;
    s.iterations = 1;
    s.n_real = 30;
    s.n_sim = 60;
    s.disc_steps = 3;
    s.pe_steps = 3;
    s.improve_steps = 3;
    s.batch = 8;
    s.k_model = 2;
    s.k_policy = 2;
    s.k_improve = 2;
    s.horizon = 20;
    s.eval_episodes = 2;
    Trainer trainer(Variant::MbEril, env, expert, RegularizationConfig{}, s, 37);
    const auto reports = trainer.run(nullptr);
    REQUIRE(reports.size() == 1);
    CHECK_FALSE(trainer.diverged());
    CHECK(std::isfinite(reports[0].eval_return));
    CHECK(std::isfinite(reports[0].losses.model_disc));
    CHECK(std::isfinite(reports[0].losses.policy_disc));
}

TEST_CASE("expert buffer is required") {
    const TabularMdp mdp = TabularMdp::gridworld(3, 3);
    TransitionBuffer empty(BufferRole::Expert);
    CHECK_THROWS_AS(Trainer(Variant::Bc, mdp, empty, RegularizationConfig{}, tiny_schedule(), 1),
                    std::invalid_argument);
}
