#include "mberil/metrics.hpp"

namespace mberil {

double normalized_return(const std::vector<double>& returns, double r_max, double r_min) {
    if (!(r_max > r_min)) throw std::invalid_argument("normalized_return: r_max must exceed r_min");
    if (returns.empty()) throw std::invalid_argument("normalized_return: no returns");
    double total = 0.0;
    for (double r : returns) total += (r - r_min) / (r_max - r_min);
    return total / static_cast<double>(returns.size());
}

double nll(const StochasticMap& map, const TransitionBuffer& test) {
    if (test.empty()) throw std::invalid_argument("nll: empty test set");
    const auto& first = test.at(0);
    const int sd = static_cast<int>(first.x.size());
    const int ad = static_cast<int>(first.u.size());
    const bool model_mode = map.cond_dim() == sd + ad;
    if (!model_mode && map.cond_dim() != sd)
        throw std::invalid_argument("nll: map conditioning matches neither policy nor model mode");
    double total = 0.0;
    for (std::size_t i = 0; i < test.size(); ++i) {
        const Transition& t = test.at(i);
        double lp;
        if (model_mode) {
            Vec cond(sd + ad);
            cond.head(sd) = t.x;
            cond.tail(ad) = t.u;
            lp = map.log_prob(cond, t.x_next);
        } else {
            lp = map.log_prob(t.x, t.u);
        }
        total -= std::max(lp, kLogFloor);
    }
    return total / static_cast<double>(test.size());
}

double evaluate_policy(const Env& env, const StochasticMap& b, int episodes, int horizon,
                       Rng& rng) {
    if (episodes < 1) throw std::invalid_argument("evaluate_policy: episodes must be >= 1");
    double total = 0.0;
    for (int e = 0; e < episodes; ++e) {
        Vec x = env_initial(env, rng);
        for (int t = 0; t < horizon; ++t) {
            total += env_reward(env, x);
            const Vec u = b.sample(x, rng);
            x = step(env, x, u, rng);
        }
    }
    return total / static_cast<double>(episodes);
}

std::string metrics_cell(double v) {
    if (!std::isfinite(v)) return "";
    return fmt_g17(v);
}

}  // namespace mberil
