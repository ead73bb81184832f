#include "mberil/eval.hpp"
#include "mberil/selfcheck.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace mberil;

ExperimentConfig load_config(const std::string& path) {
    if (path.empty()) {
        ExperimentConfig config;
        config.validate();
        return config;
    }
    return ExperimentConfig::load(path);
}

int cmd_solve(const std::string& mdp_path, double kappa, double eta, double tol, int max_iter,
              const std::string& out) {
    const TabularMdp mdp = TabularMdp::load(mdp_path);
    RegularizationConfig cfg;
    cfg.kappa = kappa;
    cfg.eta = eta;
    cfg.gamma = mdp.discount;
    const Mat q = mdp.transition;
    const Mat b = Mat::Constant(mdp.n_states, mdp.n_actions, 1.0 / mdp.n_actions);
    const SolveResult res = solve(mdp, q, b, cfg, tol, max_iter);
    std::cout << "states " << mdp.n_states << ", actions " << mdp.n_actions << "\n"
              << "iterations " << res.iterations << ", residual " << fmt_g17(res.residual) << "\n"
              << "V range [" << fmt_g17(res.values.v.minCoeff()) << ", "
              << fmt_g17(res.values.v.maxCoeff()) << "]\n";
    if (!out.empty()) {
        dump_solve_csv(out, mdp, q, b, res, cfg);
        std::cout << "wrote " << out << "\n";
    }
    return 0;
}

int cmd_expert(const std::string& config_path, std::uint64_t seed, const std::string& out_dir) {
    ExperimentConfig config = load_config(config_path);
    if (!out_dir.empty()) config.out_dir = out_dir;
    config.expert_seed = seed;
    std::filesystem::create_directories(config.out_dir);
    const Env env = config.make_env();
    const int horizon = config.schedule.horizon;
    Rng rng(derive_seed(seed, 10));
    Rng test_rng(derive_seed(seed, 11));
    TransitionBuffer expert{BufferRole::Expert}, test{BufferRole::Expert};
    const int n_test_traj = std::max(1, (config.expert_test_transitions + horizon - 1) / horizon);
    if (const auto* mdp = std::get_if<TabularMdp>(&env)) {
        const ExpertWorld world = make_expert_world(*mdp, config.reg);
        expert = sample_expert(world, config.expert_trajectories, horizon, rng);
        test = sample_expert(world, n_test_traj, horizon, test_rng);
        world.env.save(config.out_dir + "/expert_world.mdp");
        std::cout << "expert world fixed point after " << world.outer_iterations
                  << " outer iterations (residual " << fmt_g17(world.outer_residual) << ")\n";
    } else {
        const auto& ce = std::get<ContinuousEnv>(env);
        expert = make_point_mass_expert(ce, config.expert_trajectories * horizon, horizon, rng);
        test = make_point_mass_expert(ce, n_test_traj * horizon, horizon, test_rng);
    }
    expert.save_csv(config.out_dir + "/expert.csv");
    test.save_csv(config.out_dir + "/expert_test.csv");
    std::cout << "wrote " << expert.size() << " expert transitions to " << config.out_dir
              << "/expert.csv and " << test.size() << " test transitions\n";
    return 0;
}

int cmd_train(const std::string& config_path, const std::string& variant_name, std::uint64_t seed,
              const std::string& out_dir, const std::string& resume) {
    ExperimentConfig config = load_config(config_path);
    if (!out_dir.empty()) config.out_dir = out_dir;
    config.variants = {variant_name};
    config.seeds = {seed};
    config.validate();
    const ExperimentOutputs outputs = [&]() {
        if (resume.empty()) return run_experiment(config);
        // Resume: rebuild the run and continue from the checkpoint.
        std::filesystem::create_directories(config.out_dir);
        ExperimentOutputs res;
        const Env base = config.make_env();
        const auto* mdp = std::get_if<TabularMdp>(&base);
        if (!mdp) throw std::runtime_error("resume is only supported for tabular environments");
        const ExpertWorld world = make_expert_world(*mdp, config.reg);
        Rng expert_rng(derive_seed(config.expert_seed, 10));
        Rng test_rng(derive_seed(config.expert_seed, 11));
        const int horizon = config.schedule.horizon;
        const TransitionBuffer expert =
            sample_expert(world, config.expert_trajectories, horizon, expert_rng);
        const int n_test_traj =
            std::max(1, (config.expert_test_transitions + horizon - 1) / horizon);
        Trainer trainer(variant_from_string(variant_name), world.env, expert, config.reg,
                        config.schedule, seed);
        trainer.set_expert_test(sample_expert(world, n_test_traj, horizon, test_rng));
        trainer.load_checkpoint(resume);
        const std::string path =
            config.out_dir + "/" + variant_name + "_seed" + std::to_string(seed) + ".csv";
        std::ofstream csv(path, std::ios::app);
        while (trainer.iteration() < config.schedule.iterations && !trainer.diverged()) {
            const IterationReport rep = trainer.run_iteration();
            csv << rep.csv_row() << "\n";
        }
        trainer.save_checkpoint(config.out_dir + "/" + variant_name + "_seed" +
                                std::to_string(seed) + ".ckpt");
        res.metric_files.push_back(path);
        return res;
    }();
    for (const auto& f : outputs.metric_files) std::cout << "wrote " << f << "\n";
    return 0;
}

int cmd_compare(const std::string& config_path, const std::string& out_dir, bool svg) {
    ExperimentConfig config = load_config(config_path);
    if (!out_dir.empty()) config.out_dir = out_dir;
    if (svg) config.svg = true;
    const ExperimentOutputs outputs = run_experiment(config);
    std::cout << "reference return (R_max) " << fmt_g17(outputs.r_max) << "\n";
    for (const auto& f : outputs.metric_files) std::cout << "wrote " << f << "\n";
    std::cout << "wrote " << outputs.summary_file << "\n";
    for (const auto& f : outputs.svg_files) std::cout << "wrote " << f << "\n";
    return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir, bool svg) {
    ExperimentConfig config = load_config(config_path);
    if (!out_dir.empty()) config.out_dir = out_dir;
    if (svg) config.svg = true;
    const ExperimentOutputs outputs = run_expert_sweep(config);
    for (const auto& f : outputs.metric_files) std::cout << "wrote " << f << "\n";
    std::cout << "wrote " << outputs.summary_file << "\n";
    for (const auto& f : outputs.svg_files) std::cout << "wrote " << f << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Entropy-regularized imitation learning: tabular oracle, losses, trainers"};
    app.require_subcommand(1);

    std::string config_path, out_dir, mdp_path, variant = "MB-ERIL", solve_out, resume;
    std::uint64_t seed = 0;
    double kappa = 2.0, eta = 2.0, tol = 1e-10;
    int max_iter = 100000;
    bool svg = false;

    auto* solve_cmd = app.add_subcommand("solve", "Solve the regularized Bellman equation on an MDP file");
    solve_cmd->add_option("--mdp", mdp_path, "MDP file")->required();
    solve_cmd->add_option("--kappa", kappa, "entropy weight kappa");
    solve_cmd->add_option("--eta", eta, "KL weight eta");
    solve_cmd->add_option("--tol", tol, "sup-norm tolerance");
    solve_cmd->add_option("--max-iter", max_iter, "iteration cap");
    solve_cmd->add_option("--out", solve_out, "CSV dump path");

    auto* expert_cmd = app.add_subcommand("expert", "Generate an oracle expert dataset");
    expert_cmd->add_option("--config", config_path, "config file");
    expert_cmd->add_option("--seed", seed, "expert sampling seed");
    expert_cmd->add_option("--out", out_dir, "output directory");

    auto* train_cmd = app.add_subcommand("train", "Train one variant");
    train_cmd->add_option("--config", config_path, "config file");
    train_cmd->add_option("--variant", variant, "algorithm variant");
    train_cmd->add_option("--seed", seed, "training seed");
    train_cmd->add_option("--out", out_dir, "output directory");
    train_cmd->add_option("--resume", resume, "checkpoint to resume from");

    auto* compare_cmd = app.add_subcommand("compare", "Run the full comparison protocol");
    compare_cmd->add_option("--config", config_path, "config file");
    compare_cmd->add_option("--out", out_dir, "output directory");
    compare_cmd->add_flag("--svg", svg, "emit SVG learning curves");

    auto* sweep_cmd = app.add_subcommand("sweep-expert", "Sweep the expert dataset size");
    sweep_cmd->add_option("--config", config_path, "config file");
    sweep_cmd->add_option("--out", out_dir, "output directory");
    sweep_cmd->add_flag("--svg", svg, "emit SVG chart");

    app.add_subcommand("check", "Run the property self-check suites");

    CLI11_PARSE(app, argc, argv);

    try {
        if (solve_cmd->parsed()) return cmd_solve(mdp_path, kappa, eta, tol, max_iter, solve_out);
        if (expert_cmd->parsed()) return cmd_expert(config_path, seed, out_dir);
        if (train_cmd->parsed()) return cmd_train(config_path, variant, seed, out_dir, resume);
        if (compare_cmd->parsed()) return cmd_compare(config_path, out_dir, svg);
        if (sweep_cmd->parsed()) return cmd_sweep(config_path, out_dir, svg);
        return report_selfcheck(std::cout) == 0 ? 0 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
