#pragma once

#include "mberil/metrics.hpp"
#include "mberil/train.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mberil {

/// Experiment description loaded from a key-value config file. Unknown keys
/// are rejected.
struct ExperimentConfig {
    std::string env_name = "gridworld5x5";  // gridworld5x5 | chain2 | pointmass | mdp:PATH
    std::vector<std::string> variants = {"MB-ERIL"};
    std::vector<std::uint64_t> seeds = {0};
    RegularizationConfig reg;
    Schedule schedule;
    int expert_trajectories = 30;
    int expert_test_transitions = 1000;
    std::uint64_t expert_seed = 90210;
    std::vector<int> sweep_trajectory_counts = {1, 3, 10, 30};
    std::string out_dir = "runs";
    bool svg = false;
    double r_min = 0.0;
    std::optional<double> r_max;  // default: oracle expert return, measured

    static ExperimentConfig load(const std::string& path);
    void apply_kv(const std::string& key, const std::string& value);
    void validate() const;
    Env make_env() const;
};

struct ExperimentOutputs {
    std::vector<std::string> metric_files;
    std::string summary_file;
    std::vector<std::string> svg_files;
    double r_max = 0.0;
};

/// Full comparison protocol: one metrics CSV per (variant, seed), a summary
/// CSV with median and +/-1 sd bands per variant, optional SVG charts.
ExperimentOutputs run_experiment(const ExperimentConfig& config);

/// Expert-size sweep: varies the number of expert trajectories and reports
/// the final-iteration normalized return per variant.
ExperimentOutputs run_expert_sweep(const ExperimentConfig& config);

struct SvgSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Minimal hand-emitted line chart; log-scale x when log_x is set.
void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<SvgSeries>& series, bool log_x);

// Key-value config file: one `key = value` per line, '#' comments.
std::vector<std::pair<std::string, std::string>> parse_kv_file(const std::string& path);

std::vector<std::string> split_csv_list(const std::string& s);

}  // namespace mberil
