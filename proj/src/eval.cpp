#include "mberil/eval.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace mberil {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': expected a number, got '" + v + "'");
    }
}

int to_int(const std::string& key, const std::string& v) {
    const double d = to_double(key, v);
    if (d != std::floor(d)) throw std::invalid_argument("config key '" + key + "': expected an integer");
    return static_cast<int>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config key '" + key + "': expected true/false");
}

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::pair<double, double> mean_sd(const std::vector<double>& v) {
    if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(),
                           std::numeric_limits<double>::quiet_NaN()};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s2 = 0.0;
    for (double x : v) s2 += (x - m) * (x - m);
    const double sd = v.size() > 1 ? std::sqrt(s2 / static_cast<double>(v.size() - 1)) : 0.0;
    return {m, sd};
}

/// Mean return of the scripted point-mass controller, for R_max when no
/// oracle exists.
double point_mass_expert_return(const ContinuousEnv& env, int episodes, int horizon, Rng& rng) {
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
        Vec x = env.initial_sampler(rng);
        for (int t = 0; t < horizon; ++t) {
            total += env.reward(x);
            Vec u = (-4.0 * x).cwiseMin(1.0).cwiseMax(-1.0);
            for (int d = 0; d < env.action_dim; ++d) u[d] += 0.05 * rng.normal();
            x = env.dynamics(x, env.clamp_action(u), rng);
        }
    }
    return total / episodes;
}

struct ExpertSetup {
    Env env;
    TransitionBuffer expert{BufferRole::Expert};
    TransitionBuffer expert_test{BufferRole::Expert};
    double r_max = 0.0;
};

ExpertSetup prepare(const ExperimentConfig& config, int n_trajectories) {
    ExpertSetup setup;
    const Env base = config.make_env();
    const int horizon = config.schedule.horizon;
    Rng expert_rng(derive_seed(config.expert_seed, 10));
    Rng test_rng(derive_seed(config.expert_seed, 11));
    Rng return_rng(derive_seed(config.expert_seed, 12));
    const int n_test_traj =
        std::max(1, (config.expert_test_transitions + horizon - 1) / horizon);
    if (const auto* mdp = std::get_if<TabularMdp>(&base)) {
        const ExpertWorld world = make_expert_world(*mdp, config.reg);
        setup.env = world.env;
        setup.expert = sample_expert(world, n_trajectories, horizon, expert_rng);
        setup.expert_test = sample_expert(world, n_test_traj, horizon, test_rng);
        if (config.r_max) {
            setup.r_max = *config.r_max;
        } else {
            const TabularSoftmaxMap pi =
                TabularSoftmaxMap::from_table({world.env.n_states}, world.policy);
            setup.r_max = evaluate_policy(setup.env, pi, 100, horizon, return_rng);
        }
    } else {
        const auto& ce = std::get<ContinuousEnv>(base);
        setup.env = base;
        setup.expert = make_point_mass_expert(ce, n_trajectories * horizon, horizon, expert_rng);
        setup.expert_test =
            make_point_mass_expert(ce, n_test_traj * horizon, horizon, test_rng);
        setup.r_max = config.r_max ? *config.r_max
                                   : point_mass_expert_return(ce, 100, horizon, return_rng);
    }
    return setup;
}

std::string metrics_path(const std::string& out_dir, const std::string& variant,
                         std::uint64_t seed) {
    return out_dir + "/" + variant + "_seed" + std::to_string(seed) + ".csv";
}

}  // namespace

std::vector<std::pair<std::string, std::string>> parse_kv_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read config file " + path);
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const std::string t = trim(line);
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected 'key = value'");
        out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    }
    return out;
}

std::vector<std::string> split_csv_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) {
        const std::string t = trim(item);
        if (!t.empty()) out.push_back(t);
    }
    return out;
}

void ExperimentConfig::apply_kv(const std::string& key, const std::string& value) {
    if (key == "env") env_name = value;
    else if (key == "variants") variants = split_csv_list(value);
    else if (key == "seeds") {
        seeds.clear();
        for (const auto& s : split_csv_list(value))
            seeds.push_back(static_cast<std::uint64_t>(std::stoull(s)));
    } else if (key == "kappa") reg.kappa = to_double(key, value);
    else if (key == "eta") reg.eta = to_double(key, value);
    else if (key == "gamma") reg.gamma = to_double(key, value);
    else if (key == "lambda_model") reg.lambda_model = to_double(key, value);
    else if (key == "lambda_policy") reg.lambda_policy = to_double(key, value);
    else if (key == "lambda_qv") reg.lambda_qv = to_double(key, value);
    else if (key == "lambda_vq") reg.lambda_vq = to_double(key, value);
    else if (key == "iterations") schedule.iterations = to_int(key, value);
    else if (key == "n_real") schedule.n_real = to_int(key, value);
    else if (key == "n_sim") schedule.n_sim = to_int(key, value);
    else if (key == "disc_steps") schedule.disc_steps = to_int(key, value);
    else if (key == "pe_steps") schedule.pe_steps = to_int(key, value);
    else if (key == "improve_steps") schedule.improve_steps = to_int(key, value);
    else if (key == "model_ml_steps") schedule.model_ml_steps = to_int(key, value);
    else if (key == "batch") schedule.batch = to_int(key, value);
    else if (key == "k_model") schedule.k_model = to_int(key, value);
    else if (key == "k_policy") schedule.k_policy = to_int(key, value);
    else if (key == "k_improve") schedule.k_improve = to_int(key, value);
    else if (key == "lr") schedule.lr = to_double(key, value);
    else if (key == "horizon") schedule.horizon = to_int(key, value);
    else if (key == "eval_episodes") schedule.eval_episodes = to_int(key, value);
    else if (key == "real_capacity") schedule.real_capacity = static_cast<std::size_t>(to_int(key, value));
    else if (key == "sim_capacity") schedule.sim_capacity = static_cast<std::size_t>(to_int(key, value));
    else if (key == "expert_trajectories") expert_trajectories = to_int(key, value);
    else if (key == "expert_test_transitions") expert_test_transitions = to_int(key, value);
    else if (key == "expert_seed") expert_seed = static_cast<std::uint64_t>(std::stoull(value));
    else if (key == "sweep_trajectory_counts") {
        sweep_trajectory_counts.clear();
        for (const auto& s : split_csv_list(value)) sweep_trajectory_counts.push_back(std::stoi(s));
    } else if (key == "out") out_dir = value;
    else if (key == "svg") svg = to_bool(key, value);
    else if (key == "r_min") r_min = to_double(key, value);
    else if (key == "r_max") r_max = to_double(key, value);
    else throw std::invalid_argument("unknown config key '" + key + "'");
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    ExperimentConfig config;
    for (const auto& [key, value] : parse_kv_file(path)) config.apply_kv(key, value);
    config.validate();
    return config;
}

void ExperimentConfig::validate() const {
    reg.validate();
    schedule.validate();
    if (variants.empty()) throw std::invalid_argument("config: no variants");
    for (const auto& v : variants) variant_from_string(v);
    if (seeds.empty()) throw std::invalid_argument("config: no seeds");
    if (expert_trajectories < 1 || expert_test_transitions < 1)
        throw std::invalid_argument("config: expert sizes must be >= 1");
    for (int c : sweep_trajectory_counts)
        if (c < 1) throw std::invalid_argument("config: sweep trajectory counts must be >= 1");
    make_env();
}

Env ExperimentConfig::make_env() const {
    if (env_name == "pointmass") return make_point_mass();
    if (env_name == "chain2") return TabularMdp::chain2(0.7);
    if (env_name.rfind("mdp:", 0) == 0) return TabularMdp::load(env_name.substr(4));
    if (env_name.rfind("gridworld", 0) == 0) {
        const std::string dims = env_name.substr(9);
        const auto x = dims.find('x');
        if (x != std::string::npos) {
            const int w = std::stoi(dims.substr(0, x));
            const int h = std::stoi(dims.substr(x + 1));
            if (w >= 2 && h >= 2 && w <= 20 && h <= 20) return TabularMdp::gridworld(w, h);
        }
    }
    throw std::invalid_argument("unknown env '" + env_name +
                                "' (expected gridworldWxH, chain2, pointmass, or mdp:PATH)");
}

ExperimentOutputs run_experiment(const ExperimentConfig& config) {
    config.validate();
    std::filesystem::create_directories(config.out_dir);
    const ExpertSetup setup = prepare(config, config.expert_trajectories);
    ExperimentOutputs outputs;
    outputs.r_max = setup.r_max;

    struct RunKey {
        std::string variant;
        std::uint64_t seed;
    };
    std::vector<std::pair<RunKey, std::vector<IterationReport>>> runs;
    for (const auto& vname : config.variants) {
        const Variant variant = variant_from_string(vname);
        for (std::uint64_t seed : config.seeds) {
            Trainer trainer(variant, setup.env, setup.expert, config.reg, config.schedule, seed);
            trainer.set_expert_test(setup.expert_test);
            trainer.set_reference_return(setup.r_max, config.r_min);
            const std::string path = metrics_path(config.out_dir, vname, seed);
            std::ofstream csv(path);
            if (!csv) throw std::runtime_error("cannot write " + path);
            auto reports = trainer.run(&csv);
            outputs.metric_files.push_back(path);
            runs.push_back({{vname, seed}, std::move(reports)});
        }
    }

    // Per-variant, per-iteration median and +/-1 sd of the normalized return.
    outputs.summary_file = config.out_dir + "/summary.csv";
    std::ofstream summary(outputs.summary_file);
    summary << "variant,iteration,real_interactions,median_normalized_return,"
               "mean_normalized_return,sd_normalized_return\n";
    std::vector<SvgSeries> series;
    for (const auto& vname : config.variants) {
        std::size_t max_len = 0;
        for (const auto& [key, reports] : runs)
            if (key.variant == vname) max_len = std::max(max_len, reports.size());
        SvgSeries s;
        s.label = vname;
        for (std::size_t i = 0; i < max_len; ++i) {
            std::vector<double> vals;
            long interactions = 0;
            int iteration = 0;
            for (const auto& [key, reports] : runs) {
                if (key.variant != vname || i >= reports.size()) continue;
                if (std::isfinite(reports[i].normalized_return))
                    vals.push_back(reports[i].normalized_return);
                interactions = reports[i].real_interactions;
                iteration = reports[i].iteration;
            }
            const double med = median(vals);
            const auto [mean, sd] = mean_sd(vals);
            summary << vname << ',' << iteration << ',' << interactions << ','
                    << metrics_cell(med) << ',' << metrics_cell(mean) << ',' << metrics_cell(sd)
                    << "\n";
            if (std::isfinite(med)) {
                s.x.push_back(static_cast<double>(interactions));
                s.y.push_back(med);
            }
        }
        series.push_back(std::move(s));
    }
    summary.close();

    if (config.svg) {
        const std::string svg_path = config.out_dir + "/learning_curves.svg";
        write_line_chart_svg(svg_path, "normalized return vs real interactions",
                             "real interactions", "normalized return", series, true);
        outputs.svg_files.push_back(svg_path);
    }
    return outputs;
}

ExperimentOutputs run_expert_sweep(const ExperimentConfig& config) {
    config.validate();
    std::filesystem::create_directories(config.out_dir);
    ExperimentOutputs outputs;
    const std::string sweep_path = config.out_dir + "/sweep.csv";
    const std::string summary_path = config.out_dir + "/sweep_summary.csv";
    std::ofstream sweep(sweep_path);
    std::ofstream summary(summary_path);
    sweep << "variant,n_trajectories,seed,final_normalized_return,final_nll_model\n";
    summary << "variant,n_trajectories,median_final_normalized_return\n";
    std::vector<SvgSeries> series(config.variants.size());
    for (std::size_t vi = 0; vi < config.variants.size(); ++vi) series[vi].label = config.variants[vi];
    for (int count : config.sweep_trajectory_counts) {
        const ExpertSetup setup = prepare(config, count);
        outputs.r_max = setup.r_max;
        for (std::size_t vi = 0; vi < config.variants.size(); ++vi) {
            const Variant variant = variant_from_string(config.variants[vi]);
            std::vector<double> finals;
            for (std::uint64_t seed : config.seeds) {
                Trainer trainer(variant, setup.env, setup.expert, config.reg, config.schedule,
                                seed);
                trainer.set_expert_test(setup.expert_test);
                trainer.set_reference_return(setup.r_max, config.r_min);
                const auto reports = trainer.run(nullptr);
                const double fin =
                    reports.empty() ? std::numeric_limits<double>::quiet_NaN()
                                    : reports.back().normalized_return;
                const double fin_nll =
                    reports.empty() ? std::numeric_limits<double>::quiet_NaN()
                                    : reports.back().nll_model;
                sweep << config.variants[vi] << ',' << count << ',' << seed << ','
                      << metrics_cell(fin) << ',' << metrics_cell(fin_nll) << "\n";
                if (std::isfinite(fin)) finals.push_back(fin);
            }
            const double med = median(finals);
            summary << config.variants[vi] << ',' << count << ',' << metrics_cell(med) << "\n";
            if (std::isfinite(med)) {
                series[vi].x.push_back(static_cast<double>(count));
                series[vi].y.push_back(med);
            }
        }
    }
    sweep.close();
    summary.close();
    outputs.metric_files.push_back(sweep_path);
    outputs.summary_file = summary_path;
    if (config.svg) {
        const std::string svg_path = config.out_dir + "/sweep.svg";
        write_line_chart_svg(svg_path, "final normalized return vs expert trajectories",
                             "expert trajectories", "normalized return", series, false);
        outputs.svg_files.push_back(svg_path);
    }
    return outputs;
}

void write_line_chart_svg(const std::string& path, const std::string& title,
                          const std::string& x_label, const std::string& y_label,
                          const std::vector<SvgSeries>& series, bool log_x) {
    static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf"};
    const double width = 640, height = 440;
    const double ml = 70, mr = 20, mt = 40, mb = 55;
    auto tx = [&](double v) { return log_x ? std::log10(std::max(v, 1.0)) : v; };
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
    double ymin = xmin, ymax = -xmin;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            xmin = std::min(xmin, tx(s.x[i]));
            xmax = std::max(xmax, tx(s.x[i]));
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (!std::isfinite(xmin)) { xmin = 0; xmax = 1; ymin = 0; ymax = 1; }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    auto px = [&](double v) { return ml + (tx(v) - xmin) / (xmax - xmin) * (width - ml - mr); };
    auto py = [&](double v) { return height - mb - (v - ymin) / (ymax - ymin) * (height - mt - mb); };
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << width << ' ' << height
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">"
       << title << "</text>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << height - mb << "\" x2=\"" << width - mr
       << "\" y2=\"" << height - mb << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\""
       << height - mb << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        os << "<text x=\"" << ml - 8 << "\" y=\"" << py(fy) + 4
           << "\" text-anchor=\"end\">" << fmt_g17(std::round(fy * 100) / 100) << "</text>\n";
        const double fx_t = xmin + (xmax - xmin) * i / 4.0;
        const double fx = log_x ? std::pow(10.0, fx_t) : fx_t;
        os << "<text x=\"" << ml + (width - ml - mr) * i / 4.0 << "\" y=\"" << height - mb + 18
           << "\" text-anchor=\"middle\">" << fmt_g17(std::round(fx)) << "</text>\n";
    }
    os << "<text x=\"" << (ml + width - mr) / 2 << "\" y=\"" << height - 12
       << "\" text-anchor=\"middle\">" << x_label << (log_x ? " (log scale)" : "") << "</text>\n";
    os << "<text x=\"16\" y=\"" << (mt + height - mb) / 2
       << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << (mt + height - mb) / 2
       << ")\">" << y_label << "</text>\n";
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kColors[si % 7];
        if (!s.x.empty()) {
            os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                os << px(s.x[i]) << ',' << py(s.y[i]) << (i + 1 < s.x.size() ? " " : "");
            os << "\"/>\n";
        }
        os << "<text x=\"" << width - mr - 150 << "\" y=\"" << mt + 16 * si + 4
           << "\" fill=\"" << color << "\">" << s.label << "</text>\n";
    }
    os << "</svg>\n";
}

}  // namespace mberil
