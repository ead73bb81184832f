#include "mberil/mdp.hpp"

#include "mberil/approx.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace mberil {

namespace {

constexpr double kRowSumTol = 1e-9;

void check_distribution(const Eigen::Ref<const Vec>& row, const std::string& what) {
    if ((row.array() < 0.0).any())
        throw std::invalid_argument(what + ": negative probability entry");
    if (std::abs(row.sum() - 1.0) > kRowSumTol)
        throw std::invalid_argument(what + ": probabilities sum to " + fmt_g17(row.sum()) +
                                    ", expected 1 within 1e-9");
}

}  // namespace

void TabularMdp::validate() const {
    if (n_states <= 0 || n_actions <= 0)
        throw std::invalid_argument("TabularMdp: state and action counts must be positive");
    if (transition.rows() != static_cast<Eigen::Index>(n_states) * n_actions ||
        transition.cols() != n_states)
        throw std::invalid_argument("TabularMdp: transition tensor has wrong shape");
    if (reward.size() != n_states)
        throw std::invalid_argument("TabularMdp: reward vector has wrong length");
    if (initial_dist.size() != n_states)
        throw std::invalid_argument("TabularMdp: initial distribution has wrong length");
    if (!(discount > 0.0 && discount < 1.0))
        throw std::invalid_argument("TabularMdp: discount must lie strictly inside (0,1)");
    for (int x = 0; x < n_states; ++x)
        for (int u = 0; u < n_actions; ++u)
            check_distribution(transition.row(sa(x, u)),
                               "TabularMdp: P[" + std::to_string(x) + "][" + std::to_string(u) + "]");
    check_distribution(initial_dist, "TabularMdp: initial_dist");
    if (!reward.allFinite()) throw std::invalid_argument("TabularMdp: non-finite reward");
}

TabularMdp TabularMdp::random(int n_states, int n_actions, double gamma, Rng& rng) {
    TabularMdp mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.discount = gamma;
    mdp.transition = Mat(n_states * n_actions, n_states);
    for (int row = 0; row < n_states * n_actions; ++row) {
        Vec g(n_states);
        for (int j = 0; j < n_states; ++j) {
            // Exponential draws normalize to a flat Dirichlet row.
            g[j] = -std::log(1.0 - rng.uniform());
        }
        mdp.transition.row(row) = g / g.sum();
    }
    mdp.reward = Vec(n_states);
    for (int x = 0; x < n_states; ++x) mdp.reward[x] = rng.uniform() * 2.0 - 1.0;
    mdp.initial_dist = Vec::Constant(n_states, 1.0 / n_states);
    mdp.validate();
    return mdp;
}

TabularMdp TabularMdp::gridworld(int width, int height, double p_intended, double p_stay,
                                 double gamma) {
    const int n = width * height;
    const int goal = n - 1;
    TabularMdp mdp;
    mdp.n_states = n;
    mdp.n_actions = 4;
    mdp.discount = gamma;
    mdp.transition = Mat::Zero(n * 4, n);
    const double p_slip = 1.0 - p_intended - p_stay;  // moves opposite to the intended direction
    if (p_slip < -1e-12) throw std::invalid_argument("gridworld: p_intended + p_stay exceeds 1");
    const int dc[4] = {0, 0, -1, 1};  // up, down, left, right
    const int dr[4] = {-1, 1, 0, 0};
    auto cell = [&](int r, int c) { return r * width + c; };
    auto move = [&](int s, int a) {
        const int r = s / width, c = s % width;
        const int nr = std::clamp(r + dr[a], 0, height - 1);
        const int nc = std::clamp(c + dc[a], 0, width - 1);
        return cell(nr, nc);
    };
    for (int s = 0; s < n; ++s) {
        for (int a = 0; a < 4; ++a) {
            const int row = mdp.sa(s, a);
            if (s == goal) {
                mdp.transition(row, goal) = 1.0;  // absorbing
                continue;
            }
            mdp.transition(row, move(s, a)) += p_intended;
            mdp.transition(row, s) += p_stay;
            if (p_slip > 0.0) mdp.transition(row, move(s, a ^ 1)) += p_slip;
        }
    }
    mdp.reward = Vec::Zero(n);
    mdp.reward[goal] = 1.0;
    mdp.initial_dist = Vec::Zero(n);
    mdp.initial_dist[0] = 1.0;
    mdp.validate();
    return mdp;
}

TabularMdp TabularMdp::chain2(double p_advance, double gamma) {
    TabularMdp mdp;
    mdp.n_states = 2;
    mdp.n_actions = 1;
    mdp.discount = gamma;
    mdp.transition = Mat(2, 2);
    mdp.transition.row(0) << 1.0 - p_advance, p_advance;
    mdp.transition.row(1) << 0.0, 1.0;  // absorbing
    mdp.reward = Vec::Zero(2);
    mdp.reward[1] = 1.0;
    mdp.initial_dist = Vec(2);
    mdp.initial_dist << 1.0, 0.0;
    mdp.validate();
    return mdp;
}

void TabularMdp::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "states " << n_states << "\n";
    os << "actions " << n_actions << "\n";
    os << "gamma " << fmt_g17(discount) << "\n";
    os << "reward";
    for (int x = 0; x < n_states; ++x) os << ' ' << fmt_g17(reward[x]);
    os << "\ninitial";
    for (int x = 0; x < n_states; ++x) os << ' ' << fmt_g17(initial_dist[x]);
    os << "\n";
    for (int x = 0; x < n_states; ++x)
        for (int u = 0; u < n_actions; ++u) {
            os << "P " << x << ' ' << u;
            for (int j = 0; j < n_states; ++j) os << ' ' << fmt_g17(transition(sa(x, u), j));
            os << "\n";
        }
}

TabularMdp TabularMdp::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    TabularMdp mdp;
    mdp.n_states = mdp.n_actions = -1;
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& msg) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + msg);
    };
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::string key;
        if (!(ls >> key)) continue;
        if (key == "states") {
            if (!(ls >> mdp.n_states)) fail("expected state count");
        } else if (key == "actions") {
            if (!(ls >> mdp.n_actions)) fail("expected action count");
        } else if (key == "gamma") {
            if (!(ls >> mdp.discount)) fail("expected discount");
        } else if (key == "reward" || key == "initial") {
            if (mdp.n_states <= 0) fail("'states' must come before '" + key + "'");
            Vec v(mdp.n_states);
            for (int x = 0; x < mdp.n_states; ++x)
                if (!(ls >> v[x])) fail("expected " + std::to_string(mdp.n_states) + " values");
            (key == "reward" ? mdp.reward : mdp.initial_dist) = v;
        } else if (key == "P") {
            if (mdp.n_states <= 0 || mdp.n_actions <= 0) fail("'states'/'actions' must come before P rows");
            if (mdp.transition.size() == 0)
                mdp.transition = Mat::Zero(mdp.n_states * mdp.n_actions, mdp.n_states);
            int x, u;
            if (!(ls >> x >> u)) fail("expected 'P x u p0 p1 ...'");
            if (x < 0 || x >= mdp.n_states || u < 0 || u >= mdp.n_actions) fail("P indices out of range");
            for (int j = 0; j < mdp.n_states; ++j)
                if (!(ls >> mdp.transition(mdp.sa(x, u), j))) fail("short P row");
        } else {
            fail("unknown key '" + key + "'");
        }
    }
    mdp.validate();
    return mdp;
}

Vec ContinuousEnv::clamp_action(const Vec& u) const {
    Vec c = u;
    for (int i = 0; i < action_dim; ++i) c[i] = std::clamp(c[i], action_low[i], action_high[i]);
    return c;
}

void ContinuousEnv::validate() const {
    if (state_dim <= 0 || action_dim <= 0)
        throw std::invalid_argument("ContinuousEnv: dimensions must be positive");
    if (action_low.size() != action_dim || action_high.size() != action_dim)
        throw std::invalid_argument("ContinuousEnv: bounds have wrong length");
    if (!dynamics || !reward || !initial_sampler)
        throw std::invalid_argument("ContinuousEnv: missing dynamics/reward/initial_sampler");
}

ContinuousEnv make_point_mass(Vec goal, double noise_std) {
    ContinuousEnv env;
    env.state_dim = 2;
    env.action_dim = 2;
    env.action_low = Vec::Constant(2, -1.0);
    env.action_high = Vec::Constant(2, 1.0);
    env.dynamics = [noise_std](const Vec& x, const Vec& u, Rng& rng) {
        Vec next = x + 0.1 * u;
        for (int i = 0; i < 2; ++i) {
            next[i] += noise_std * rng.normal();
            next[i] = std::clamp(next[i], -2.0, 2.0);
        }
        return next;
    };
    env.reward = [goal](const Vec& x) { return -(x - goal).norm(); };
    env.initial_sampler = [](Rng& rng) {
        Vec x(2);
        x[0] = rng.uniform() * 4.0 - 2.0;
        x[1] = rng.uniform() * 4.0 - 2.0;
        return x;
    };
    return env;
}

int env_state_dim(const Env& env) {
    if (std::holds_alternative<TabularMdp>(env)) return 1;
    return std::get<ContinuousEnv>(env).state_dim;
}

int env_action_dim(const Env& env) {
    if (std::holds_alternative<TabularMdp>(env)) return 1;
    return std::get<ContinuousEnv>(env).action_dim;
}

double env_reward(const Env& env, const Vec& x) {
    if (const auto* mdp = std::get_if<TabularMdp>(&env)) {
        const int xi = static_cast<int>(x[0]);
        if (xi < 0 || xi >= mdp->n_states) throw std::invalid_argument("env_reward: state out of range");
        return mdp->reward[xi];
    }
    return std::get<ContinuousEnv>(env).reward(x);
}

Vec env_initial(const Env& env, Rng& rng) {
    if (const auto* mdp = std::get_if<TabularMdp>(&env)) {
        Vec x(1);
        x[0] = rng.categorical(mdp->initial_dist);
        return x;
    }
    return std::get<ContinuousEnv>(env).initial_sampler(rng);
}

Transition Transition::tabular(int x, int u, int x_next) {
    Transition t;
    t.x = Vec::Constant(1, static_cast<double>(x));
    t.u = Vec::Constant(1, static_cast<double>(u));
    t.x_next = Vec::Constant(1, static_cast<double>(x_next));
    return t;
}

bool Transition::finite() const { return x.allFinite() && u.allFinite() && x_next.allFinite(); }

bool Trajectory::chained() const {
    for (std::size_t i = 1; i < transitions.size(); ++i) {
        const Vec& a = transitions[i].x;
        const Vec& b = transitions[i - 1].x_next;
        if (a.size() != b.size() || !(a.array() == b.array()).all()) return false;
    }
    return true;
}

std::string to_string(BufferRole role) {
    switch (role) {
        case BufferRole::Expert: return "Expert";
        case BufferRole::RealLearner: return "RealLearner";
        case BufferRole::Simulated: return "Simulated";
    }
    return "?";
}

BufferRole buffer_role_from_string(const std::string& s) {
    if (s == "Expert") return BufferRole::Expert;
    if (s == "RealLearner") return BufferRole::RealLearner;
    if (s == "Simulated") return BufferRole::Simulated;
    throw std::invalid_argument("unknown buffer role '" + s + "'");
}

void TransitionBuffer::push(Transition t) {
    if (!t.finite()) throw std::invalid_argument("TransitionBuffer::push: non-finite transition");
    entries_.push_back(std::move(t));
    if (capacity_ && entries_.size() > *capacity_) entries_.pop_front();
}

const Transition& TransitionBuffer::sample_one(Rng& rng) const {
    if (entries_.empty()) throw std::logic_error("TransitionBuffer::sample: buffer is empty");
    return entries_[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(entries_.size())))];
}

std::vector<Transition> TransitionBuffer::sample(std::size_t n, Rng& rng) const {
    std::vector<Transition> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample_one(rng));
    return out;
}

void TransitionBuffer::save_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "# role=" << to_string(role_);
    if (capacity_) os << " capacity=" << *capacity_;
    os << "\n";
    const int sd = entries_.empty() ? 1 : static_cast<int>(entries_.front().x.size());
    const int ad = entries_.empty() ? 1 : static_cast<int>(entries_.front().u.size());
    for (int i = 0; i < sd; ++i) os << (i ? "," : "") << "x" << i;
    for (int i = 0; i < ad; ++i) os << ",u" << i;
    for (int i = 0; i < sd; ++i) os << ",xn" << i;
    os << "\n";
    for (const auto& t : entries_) {
        for (int i = 0; i < sd; ++i) os << (i ? "," : "") << fmt_g17(t.x[i]);
        for (int i = 0; i < ad; ++i) os << ',' << fmt_g17(t.u[i]);
        for (int i = 0; i < sd; ++i) os << ',' << fmt_g17(t.x_next[i]);
        os << "\n";
    }
}

TransitionBuffer TransitionBuffer::load_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("# role=", 0) != 0)
        throw std::runtime_error(path + ": missing role header");
    std::istringstream hs(line.substr(2));
    std::string tok;
    BufferRole role = BufferRole::Expert;
    std::optional<std::size_t> capacity;
    while (hs >> tok) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
        if (key == "role") role = buffer_role_from_string(val);
        else if (key == "capacity") capacity = std::stoul(val);
    }
    if (!std::getline(is, line)) throw std::runtime_error(path + ": missing column header");
    int sd = 0, ad = 0;
    {
        std::istringstream cs(line);
        std::string col;
        while (std::getline(cs, col, ',')) {
            if (col.rfind("x", 0) == 0 && col.rfind("xn", 0) != 0) ++sd;
            else if (col.rfind("u", 0) == 0) ++ad;
        }
    }
    if (sd <= 0 || ad <= 0) throw std::runtime_error(path + ": malformed column header");
    TransitionBuffer buf(role, capacity);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream cs(line);
        std::string cell;
        Transition t;
        t.x = Vec(sd);
        t.u = Vec(ad);
        t.x_next = Vec(sd);
        auto next_cell = [&]() {
            if (!std::getline(cs, cell, ',')) throw std::runtime_error(path + ": short row");
            return std::stod(cell);
        };
        for (int i = 0; i < sd; ++i) t.x[i] = next_cell();
        for (int i = 0; i < ad; ++i) t.u[i] = next_cell();
        for (int i = 0; i < sd; ++i) t.x_next[i] = next_cell();
        buf.push(std::move(t));
    }
    return buf;
}

const Transition& sample_union(const TransitionBuffer& a, const TransitionBuffer& b, Rng& rng) {
    const std::size_t total = a.size() + b.size();
    if (total == 0) throw std::logic_error("sample_union: both buffers are empty");
    const std::size_t i = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(total)));
    return i < a.size() ? a.at(i) : b.at(i - a.size());
}

std::vector<Transition> sample_union(const TransitionBuffer& a, const TransitionBuffer& b,
                                     std::size_t n, Rng& rng) {
    std::vector<Transition> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample_union(a, b, rng));
    return out;
}

Vec step(const TabularMdp& env, const Vec& x, const Vec& u, Rng& rng) {
    const int xi = static_cast<int>(x[0]);
    const int ui = static_cast<int>(u[0]);
    if (xi < 0 || xi >= env.n_states) throw std::invalid_argument("step: state index out of range");
    if (ui < 0 || ui >= env.n_actions) throw std::invalid_argument("step: action index out of range");
    Vec out(1);
    out[0] = rng.categorical(env.transition.row(env.sa(xi, ui)).transpose());
    return out;
}

Vec step(const ContinuousEnv& env, const Vec& x, const Vec& u, Rng& rng) {
    if (x.size() != env.state_dim || u.size() != env.action_dim)
        throw std::invalid_argument("step: dimension mismatch");
    Vec next = env.dynamics(x, env.clamp_action(u), rng);
    if (!next.allFinite()) throw std::runtime_error("step: dynamics produced a non-finite state");
    return next;
}

Vec step(const Env& env, const Vec& x, const Vec& u, Rng& rng) {
    return std::visit([&](const auto& e) { return step(e, x, u, rng); }, env);
}

Trajectory rollout(const Env& env, const StochasticMap& policy, int horizon, Rng& rng) {
    if (horizon < 1) throw std::invalid_argument("rollout: horizon must be >= 1");
    Trajectory traj;
    traj.transitions.reserve(horizon);
    Vec x = env_initial(env, rng);
    for (int t = 0; t < horizon; ++t) {
        Transition tr;
        tr.x = x;
        tr.u = policy.sample(x, rng);
        tr.x_next = step(env, x, tr.u, rng);
        x = tr.x_next;
        traj.transitions.push_back(std::move(tr));
    }
    return traj;
}

Vec sample_discounted_state(const Env& env, const StochasticMap& policy, double gamma, Rng& rng) {
    if (!(gamma > 0.0 && gamma < 1.0))
        throw std::invalid_argument("sample_discounted_state: gamma must lie in (0,1)");
    Vec x = env_initial(env, rng);
    while (rng.uniform() < gamma) {
        const Vec u = policy.sample(x, rng);
        x = step(env, x, u, rng);
    }
    return x;
}

}  // namespace mberil
