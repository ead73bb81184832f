#include "mberil/eval.hpp"
#include "mberil/selfcheck.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

namespace py = pybind11;
using namespace mberil;

namespace {

py::dict report_to_dict(const IterationReport& rep) {
    py::dict d;
    d["iteration"] = rep.iteration;
    d["real_interactions"] = rep.real_interactions;
    d["loss_model_disc"] = rep.losses.model_disc;
    d["loss_policy_disc"] = rep.losses.policy_disc;
    d["loss_pe_qv"] = rep.losses.pe_qv;
    d["loss_pe_vq"] = rep.losses.pe_vq;
    d["loss_improve_model"] = rep.losses.improve_model;
    d["loss_improve_policy"] = rep.losses.improve_policy;
    d["eval_return"] = rep.eval_return;
    d["normalized_return"] = rep.normalized_return;
    d["nll_policy"] = rep.nll_policy;
    d["nll_model"] = rep.nll_model;
    return d;
}

py::dict run_training(const std::string& variant, const TabularMdp& env,
                      const TransitionBuffer& expert, const RegularizationConfig& cfg,
                      const Schedule& schedule, std::uint64_t seed,
                      const TransitionBuffer* expert_test, double r_max, double r_min) {
    Trainer trainer(variant_from_string(variant), env, expert, cfg, schedule, seed);
    if (expert_test && !expert_test->empty()) trainer.set_expert_test(*expert_test);
    if (std::isfinite(r_max)) trainer.set_reference_return(r_max, r_min);
    const auto reports = trainer.run(nullptr);
    py::list rep_list;
    for (const auto& r : reports) rep_list.append(report_to_dict(r));
    py::dict out;
    out["reports"] = rep_list;
    out["diverged"] = trainer.diverged();
    out["divergence_note"] = trainer.divergence_note();
    out["real_interactions"] = trainer.real_interactions();
    if (const auto* b = dynamic_cast<const TabularSoftmaxMap*>(&trainer.policy()))
        out["policy"] = b->prob_table();
    if (const auto* q = dynamic_cast<const TabularSoftmaxMap*>(trainer.model()))
        out["model"] = q->prob_table();
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Entropy-regularized imitation learning: tabular oracle, losses, and trainers";

    py::class_<RegularizationConfig>(m, "RegularizationConfig")
        .def(py::init<>())
        .def_readwrite("kappa", &RegularizationConfig::kappa)
        .def_readwrite("eta", &RegularizationConfig::eta)
        .def_readwrite("gamma", &RegularizationConfig::gamma)
        .def_readwrite("lambda_model", &RegularizationConfig::lambda_model)
        .def_readwrite("lambda_policy", &RegularizationConfig::lambda_policy)
        .def_readwrite("lambda_qv", &RegularizationConfig::lambda_qv)
        .def_readwrite("lambda_vq", &RegularizationConfig::lambda_vq)
        .def_property_readonly("beta", &RegularizationConfig::beta)
        .def("validate", &RegularizationConfig::validate);

    py::class_<TabularMdp>(m, "TabularMdp")
        .def(py::init<>())
        .def_readwrite("n_states", &TabularMdp::n_states)
        .def_readwrite("n_actions", &TabularMdp::n_actions)
        .def_readwrite("transition", &TabularMdp::transition)
        .def_readwrite("reward", &TabularMdp::reward)
        .def_readwrite("discount", &TabularMdp::discount)
        .def_readwrite("initial_dist", &TabularMdp::initial_dist)
        .def("validate", &TabularMdp::validate)
        .def("save", &TabularMdp::save)
        .def_static("load", &TabularMdp::load)
        .def_static("gridworld", &TabularMdp::gridworld, py::arg("width"), py::arg("height"),
                    py::arg("p_intended") = 0.90, py::arg("p_stay") = 0.10,
                    py::arg("gamma") = 0.9)
        .def_static("chain2", &TabularMdp::chain2, py::arg("p_advance"), py::arg("gamma") = 0.9)
        .def_static(
            "random",
            [](int n_states, int n_actions, double gamma, std::uint64_t seed) {
                Rng rng(seed);
                return TabularMdp::random(n_states, n_actions, gamma, rng);
            },
            py::arg("n_states"), py::arg("n_actions"), py::arg("gamma"), py::arg("seed"));

    py::class_<ValueTable>(m, "ValueTable")
        .def_readonly("v", &ValueTable::v)
        .def_readonly("q", &ValueTable::q);

    py::class_<SolveResult>(m, "SolveResult")
        .def_readonly("values", &SolveResult::values)
        .def_readonly("expert_policy", &SolveResult::expert_policy)
        .def_readonly("expert_model", &SolveResult::expert_model)
        .def_readonly("iterations", &SolveResult::iterations)
        .def_readonly("residual", &SolveResult::residual)
        .def_readonly("residual_trace", &SolveResult::residual_trace);

    py::class_<ExpertWorld>(m, "ExpertWorld")
        .def_readonly("env", &ExpertWorld::env)
        .def_readonly("policy", &ExpertWorld::policy)
        .def_readonly("values", &ExpertWorld::values)
        .def_readonly("outer_iterations", &ExpertWorld::outer_iterations)
        .def_readonly("outer_residual", &ExpertWorld::outer_residual);

    py::class_<TransitionBuffer>(m, "TransitionBuffer")
        .def("__len__", &TransitionBuffer::size)
        .def("save_csv", &TransitionBuffer::save_csv)
        .def_static("load_csv", &TransitionBuffer::load_csv)
        .def("as_arrays", [](const TransitionBuffer& buf) {
            const std::size_t n = buf.size();
            const int sd = n ? static_cast<int>(buf.at(0).x.size()) : 1;
            const int ad = n ? static_cast<int>(buf.at(0).u.size()) : 1;
            Mat x(n, sd), u(n, ad), xn(n, sd);
            for (std::size_t i = 0; i < n; ++i) {
                x.row(i) = buf.at(i).x.transpose();
                u.row(i) = buf.at(i).u.transpose();
                xn.row(i) = buf.at(i).x_next.transpose();
            }
            return py::make_tuple(x, u, xn);
        });

    py::class_<Schedule>(m, "Schedule")
        .def(py::init<>())
        .def_readwrite("iterations", &Schedule::iterations)
        .def_readwrite("n_real", &Schedule::n_real)
        .def_readwrite("n_sim", &Schedule::n_sim)
        .def_readwrite("disc_steps", &Schedule::disc_steps)
        .def_readwrite("pe_steps", &Schedule::pe_steps)
        .def_readwrite("improve_steps", &Schedule::improve_steps)
        .def_readwrite("model_ml_steps", &Schedule::model_ml_steps)
        .def_readwrite("batch", &Schedule::batch)
        .def_readwrite("k_model", &Schedule::k_model)
        .def_readwrite("k_policy", &Schedule::k_policy)
        .def_readwrite("k_improve", &Schedule::k_improve)
        .def_readwrite("lr", &Schedule::lr)
        .def_readwrite("horizon", &Schedule::horizon)
        .def_readwrite("eval_episodes", &Schedule::eval_episodes);

    m.def(
        "solve",
        [](const TabularMdp& mdp, const Mat& q, const Mat& b, const RegularizationConfig& cfg,
           double tol, int max_iter) { return solve(mdp, q, b, cfg, tol, max_iter); },
        py::arg("mdp"), py::arg("q"), py::arg("b"), py::arg("cfg"), py::arg("tol") = 1e-10,
        py::arg("max_iter") = 100000,
        "Soft value iteration against baseline model q and baseline policy b");

    m.def(
        "solve_canonical",
        [](const TabularMdp& mdp, const RegularizationConfig& cfg, double tol, int max_iter) {
            const Mat b = Mat::Constant(mdp.n_states, mdp.n_actions, 1.0 / mdp.n_actions);
            return solve(mdp, mdp.transition, b, cfg, tol, max_iter);
        },
        py::arg("mdp"), py::arg("cfg"), py::arg("tol") = 1e-10, py::arg("max_iter") = 100000,
        "Solve with the MDP's own dynamics as the model baseline and a uniform policy baseline");

    m.def("induced_model", &induced_model, py::arg("values"), py::arg("reward"), py::arg("q"),
          py::arg("cfg"));
    m.def("induced_policy", &induced_policy, py::arg("values"), py::arg("b"), py::arg("cfg"));
    m.def(
        "log_density_ratios",
        [](const ValueTable& values, const Vec& reward, const Mat& q, const Mat& b,
           const RegularizationConfig& cfg) {
            const RatioTables t = log_density_ratios(values, reward, q, b, cfg);
            return py::make_tuple(t.model, t.policy);
        },
        py::arg("values"), py::arg("reward"), py::arg("q"), py::arg("b"), py::arg("cfg"));
    m.def("inner_objective", &inner_objective, py::arg("p_tilde"), py::arg("x"), py::arg("u"),
          py::arg("values"), py::arg("mdp"), py::arg("q"), py::arg("cfg"));

    m.def("make_expert_world", &make_expert_world, py::arg("base"), py::arg("cfg"),
          py::arg("tol") = 1e-10, py::arg("max_iter") = 100000, py::arg("outer_max_iter") = 500,
          py::arg("outer_tol") = 1e-12);
    m.def(
        "sample_expert",
        [](const ExpertWorld& world, int n_trajectories, int horizon, std::uint64_t seed,
           bool discounted_starts) {
            Rng rng(seed);
            return sample_expert(world, n_trajectories, horizon, rng, discounted_starts);
        },
        py::arg("world"), py::arg("n_trajectories"), py::arg("horizon"), py::arg("seed"),
        py::arg("discounted_starts") = false);
    m.def(
        "make_expert",
        [](const TabularMdp& env, const RegularizationConfig& cfg, int n_trajectories,
           int horizon, std::uint64_t seed, bool discounted_starts) {
            Rng rng(seed);
            return make_expert(env, cfg, n_trajectories, horizon, rng, discounted_starts);
        },
        py::arg("env"), py::arg("cfg"), py::arg("n_trajectories"), py::arg("horizon"),
        py::arg("seed"), py::arg("discounted_starts") = false);

    m.def("train", &run_training, py::arg("variant"), py::arg("env"), py::arg("expert"),
          py::arg("cfg"), py::arg("schedule"), py::arg("seed"),
          py::arg("expert_test") = static_cast<const TransitionBuffer*>(nullptr),
          py::arg("r_max") = std::numeric_limits<double>::quiet_NaN(), py::arg("r_min") = 0.0,
          "Run one training variant and return its per-iteration reports");

    m.def("variants", [] {
        std::vector<std::string> names;
        for (Variant v : all_variants()) names.push_back(to_string(v));
        return names;
    });

    m.def(
        "normalized_return",
        [](const std::vector<double>& returns, double r_max, double r_min) {
            return normalized_return(returns, r_max, r_min);
        },
        py::arg("returns"), py::arg("r_max"), py::arg("r_min") = 0.0);

    m.def(
        "nll_policy",
        [](const Mat& policy_table, const TransitionBuffer& test) {
            const TabularSoftmaxMap b =
                TabularSoftmaxMap::from_table({static_cast<int>(policy_table.rows())},
                                              policy_table);
            return nll(b, test);
        },
        py::arg("policy_table"), py::arg("test"));
    m.def(
        "nll_model",
        [](const Mat& model_table, int n_states, int n_actions, const TransitionBuffer& test) {
            const TabularSoftmaxMap q =
                TabularSoftmaxMap::from_table({n_states, n_actions}, model_table);
            return nll(q, test);
        },
        py::arg("model_table"), py::arg("n_states"), py::arg("n_actions"), py::arg("test"));

    m.def(
        "evaluate_policy_table",
        [](const TabularMdp& mdp, const Mat& policy_table, int episodes, int horizon,
           std::uint64_t seed) {
            const TabularSoftmaxMap b = TabularSoftmaxMap::from_table(
                {static_cast<int>(policy_table.rows())}, policy_table);
            Rng rng(seed);
            return evaluate_policy(mdp, b, episodes, horizon, rng);
        },
        py::arg("mdp"), py::arg("policy_table"), py::arg("episodes"), py::arg("horizon"),
        py::arg("seed"));

    m.def("run_experiment_config", [](const std::string& config_path) {
        const ExperimentConfig config = ExperimentConfig::load(config_path);
        const ExperimentOutputs outputs = run_experiment(config);
        py::dict d;
        d["metric_files"] = outputs.metric_files;
        d["summary_file"] = outputs.summary_file;
        d["svg_files"] = outputs.svg_files;
        d["r_max"] = outputs.r_max;
        return d;
    });

    m.def("selfcheck", [] {
        py::list out;
        for (const auto& r : run_selfcheck()) {
            py::dict d;
            d["name"] = r.name;
            d["pass"] = r.pass;
            d["detail"] = r.detail;
            out.append(d);
        }
        return out;
    });
}
