#include "mberil/train.hpp"

#include "mberil/metrics.hpp"

#include <fstream>
#include <iostream>
#include <sstream>

namespace mberil {

namespace {

const double kNan = std::numeric_limits<double>::quiet_NaN();

Vec join_cond(const Vec& x, const Vec& u) {
    Vec c(x.size() + u.size());
    c.head(x.size()) = x;
    c.tail(u.size()) = u;
    return c;
}

std::vector<int> default_hidden() { return {64, 64}; }

}  // namespace

std::string to_string(Variant v) {
    switch (v) {
        case Variant::MbEril: return "MB-ERIL";
        case Variant::Ermbc: return "ERMBC";
        case Variant::MbErilNoPe: return "MB-ERIL-noPE";
        case Variant::DynaMfEril: return "Dyna-MF-ERIL";
        case Variant::MfEril: return "MF-ERIL";
        case Variant::Bc: return "BC";
    }
    return "?";
}

Variant variant_from_string(const std::string& s) {
    for (Variant v : all_variants())
        if (to_string(v) == s) return v;
    throw std::invalid_argument("unknown variant '" + s +
                                "' (expected MB-ERIL, ERMBC, MB-ERIL-noPE, Dyna-MF-ERIL, "
                                "MF-ERIL, or BC)");
}

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v = {Variant::MbEril,     Variant::Ermbc,
                                           Variant::MbErilNoPe, Variant::DynaMfEril,
                                           Variant::MfEril,     Variant::Bc};
    return v;
}

bool variant_has_model(Variant v) {
    return v == Variant::MbEril || v == Variant::Ermbc || v == Variant::MbErilNoPe ||
           v == Variant::DynaMfEril;
}

void Schedule::validate() const {
    if (iterations < 1 || n_real < 1 || n_sim < 1) throw std::invalid_argument("Schedule: counts must be >= 1");
    if (disc_steps < 0 || pe_steps < 0 || improve_steps < 0 || model_ml_steps < 0)
        throw std::invalid_argument("Schedule: step counts must be nonnegative");
    if (batch < 1) throw std::invalid_argument("Schedule: batch must be >= 1");
    if (k_model < 0 || k_policy < 0 || k_improve < 1)
        throw std::invalid_argument("Schedule: bad Monte-Carlo sample counts");
    if (!(lr >= 0.0)) throw std::invalid_argument("Schedule: lr must be nonnegative");
    if (horizon < 1 || eval_episodes < 1)
        throw std::invalid_argument("Schedule: horizon and eval_episodes must be >= 1");
}

void optimizer_step(Vec& params, const Vec& grad, Adam& moments, double lr) {
    if (params.size() != grad.size() || moments.m.size() != params.size() ||
        moments.v.size() != params.size())
        throw std::invalid_argument("optimizer_step: shape mismatch");
    if (!grad.allFinite()) throw std::runtime_error("optimizer_step: non-finite gradient");
    moments.t += 1;
    moments.m = moments.beta1 * moments.m + (1.0 - moments.beta1) * grad;
    moments.v = moments.beta2 * moments.v.array().matrix() +
                (1.0 - moments.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(moments.beta1, static_cast<double>(moments.t));
    const double c2 = 1.0 - std::pow(moments.beta2, static_cast<double>(moments.t));
    params -= (lr / c1) * moments.m.cwiseQuotient(
                              ((moments.v / c2).cwiseSqrt().array() + moments.eps).matrix());
}

std::string IterationReport::csv_row() const {
    double pe = kNan;
    if (std::isfinite(losses.pe_qv) || std::isfinite(losses.pe_vq)) {
        pe = 0.0;
        if (std::isfinite(losses.pe_qv)) pe += losses.pe_qv;
        if (std::isfinite(losses.pe_vq)) pe += losses.pe_vq;
    }
    std::ostringstream os;
    os << iteration << ',' << real_interactions << ',' << metrics_cell(losses.model_disc) << ','
       << metrics_cell(losses.policy_disc) << ',' << metrics_cell(pe) << ','
       << metrics_cell(losses.improve_model) << ',' << metrics_cell(losses.improve_policy) << ','
       << metrics_cell(eval_return) << ',' << metrics_cell(normalized_return) << ','
       << metrics_cell(nll_policy) << ',' << metrics_cell(nll_model);
    return os.str();
}

Trainer::Trainer(Variant variant, Env env, TransitionBuffer expert,
                 const RegularizationConfig& cfg, const Schedule& schedule, std::uint64_t seed)
    : variant_(variant),
      env_(std::move(env)),
      expert_(std::move(expert)),
      cfg_(cfg),
      schedule_(schedule),
      d_real_(BufferRole::RealLearner, schedule.real_capacity),
      d_sim_(BufferRole::Simulated, schedule.sim_capacity),
      rng_(derive_seed(seed, 1)),
      eval_rng_(derive_seed(seed, 2)) {
    cfg_.validate();
    schedule_.validate();
    if (expert_.empty()) throw std::invalid_argument("Trainer: expert dataset is empty");
    if (variant_has_model(variant_) && schedule_.n_sim < schedule_.n_real)
        std::cerr << "[mberil] warning: n_sim (" << schedule_.n_sim << ") < n_real ("
                  << schedule_.n_real << "); simulated batches are normally much larger\n";
    build_learners(seed);
}

void Trainer::build_learners(std::uint64_t seed) {
    Rng init_rng(derive_seed(seed, 0));
    if (tabular()) {
        const auto& m = mdp();
        vf_ = std::make_unique<TabularValueFn>(m.n_states, m.n_actions);
        b_ = std::make_unique<TabularSoftmaxMap>(TabularSoftmaxMap::policy(m.n_states, m.n_actions));
        if (variant_has_model(variant_))
            q_ = std::make_unique<TabularSoftmaxMap>(
                TabularSoftmaxMap::model(m.n_states, m.n_actions));
    } else {
        const auto& ce = std::get<ContinuousEnv>(env_);
        vf_ = std::make_unique<MlpValueFn>(ce.state_dim, ce.action_dim, default_hidden(),
                                           Activation::DSilu, init_rng);
        b_ = std::make_unique<GaussianMlpMap>(ce.state_dim, ce.action_dim, default_hidden(),
                                              Activation::DSilu, init_rng);
        if (variant_has_model(variant_))
            q_ = std::make_unique<GaussianMlpMap>(ce.state_dim + ce.action_dim, ce.state_dim,
                                                  default_hidden(), Activation::DSilu, init_rng);
    }
    opt_vf_.init(vf_->param_count());
    opt_b_.init(b_->param_count());
    if (q_) opt_q_.init(q_->param_count());
}

void Trainer::init_value_fn(const ValueFn& vf) {
    vf_ = vf.clone();
    opt_vf_.init(vf_->param_count());
}

void Trainer::init_model(const StochasticMap& q) {
    if (!variant_has_model(variant_))
        throw std::logic_error("init_model: variant " + to_string(variant_) + " keeps no model");
    q_ = q.clone();
    opt_q_.init(q_->param_count());
}

void Trainer::init_policy(const StochasticMap& b) {
    b_ = b.clone();
    opt_b_.init(b_->param_count());
}

void Trainer::set_expert_test(TransitionBuffer test) { expert_test_ = std::move(test); }

void Trainer::set_reference_return(double r_max, double r_min) {
    r_max_ = r_max;
    r_min_ = r_min;
}

void Trainer::guard_finite(double value, const std::string& where) {
    if (!std::isfinite(value) && !diverged_) {
        diverged_ = true;
        divergence_note_ = where + " produced a non-finite loss at iteration " +
                           std::to_string(iteration_ + 1);
    }
}

namespace {

template <typename Obj>
bool apply_update(Obj& obj, Adam& opt, const Vec& grad, double lr, double loss, bool& diverged,
                  std::string& note, const std::string& where, long iteration) {
    if (!std::isfinite(loss) || !grad.allFinite()) {
        if (!diverged) {
            diverged = true;
            note = where + " produced a non-finite loss or gradient at iteration " +
                   std::to_string(iteration + 1);
        }
        return false;
    }
    Vec p = obj.params();
    optimizer_step(p, grad, opt, lr);
    obj.set_params(p);
    return true;
}

}  // namespace

std::vector<Transition> Trainer::sample_real_union(std::size_t n) {
    return sample_union(expert_, d_real_, n, rng_);
}

std::vector<Transition> Trainer::sample_learner_union(std::size_t n) {
    return sample_union(d_real_, d_sim_, n, rng_);
}

Vec Trainer::model_step(const Vec& x, const Vec& u, Rng& rng) const {
    return q_->sample(join_cond(x, u), rng);
}

void Trainer::collect_real(int n) {
    if (n < 1) throw std::invalid_argument("collect_real: n must be >= 1");
    for (int i = 0; i < n; ++i) {
        if (collect_steps_left_ == 0) {
            collect_state_ = env_initial(env_, rng_);
            collect_steps_left_ = schedule_.horizon;
        }
        Transition t;
        t.x = collect_state_;
        t.u = b_->sample(collect_state_, rng_);
        t.x_next = step(env_, collect_state_, t.u, rng_);
        collect_state_ = t.x_next;
        --collect_steps_left_;
        d_real_.push(std::move(t));
    }
    real_interactions_ += n;
    counts_.real_collections += 1;
    phase_trace_.push_back("collect_real");
}

void Trainer::collect_sim(int n) {
    if (n < 1) throw std::invalid_argument("collect_sim: n must be >= 1");
    if (!q_) throw std::logic_error("collect_sim: variant keeps no model");
    // Restart with probability 1 - gamma so starting states follow the
    // discounted visitation distribution of (b, q).
    Vec x = env_initial(env_, rng_);
    for (int i = 0; i < n; ++i) {
        if (i > 0 && rng_.uniform() >= cfg_.gamma) x = env_initial(env_, rng_);
        Transition t;
        t.x = x;
        t.u = b_->sample(x, rng_);
        t.x_next = model_step(x, t.u, rng_);
        x = t.x_next;
        d_sim_.push(std::move(t));
    }
    counts_.sim_collections += 1;
    phase_trace_.push_back("collect_sim");
}

LossBreakdown Trainer::phase_disc() {
    LossBreakdown mean;
    const int steps = schedule_.disc_steps;
    const std::size_t batch = static_cast<std::size_t>(schedule_.batch);
    if (variant_ == Variant::MbEril || variant_ == Variant::MbErilNoPe) {
        for (int s = 0; s < steps && !diverged_; ++s) {
            const auto real = sample_real_union(batch);
            const auto sim = d_sim_.sample(batch, rng_);
            const auto expert = expert_.sample(batch, rng_);
            const auto learner = sample_learner_union(batch);
            const DiscTotal dt = loss_disc_total(*vf_, *q_, *b_, real, sim, expert, learner, cfg_);
            apply_update(*vf_, opt_vf_, dt.grad, schedule_.lr, dt.breakdown.total_disc, diverged_,
                         divergence_note_, "discriminator loss", iteration_);
            mean.model_disc += dt.breakdown.model_disc / steps;
            mean.policy_disc += dt.breakdown.policy_disc / steps;
            mean.total_disc += dt.breakdown.total_disc / steps;
            counts_.disc_steps += 1;
        }
        phase_trace_.push_back("disc");
    } else if (variant_ == Variant::Ermbc) {
        for (int s = 0; s < steps && !diverged_; ++s) {
            const auto expert = expert_.sample(batch, rng_);
            const ErmbcLoss el = loss_ermbc(*vf_, *q_, *b_, expert, cfg_, schedule_.k_model,
                                            schedule_.k_policy, rng_);
            if (!apply_update(*vf_, opt_vf_, el.grad_vf, schedule_.lr, el.value, diverged_,
                              divergence_note_, "ERMBC loss", iteration_))
                break;
            apply_update(*q_, opt_q_, el.grad_q, schedule_.lr, el.value, diverged_,
                         divergence_note_, "ERMBC loss", iteration_);
            apply_update(*b_, opt_b_, el.grad_b, schedule_.lr, el.value, diverged_,
                         divergence_note_, "ERMBC loss", iteration_);
            counts_.ermbc_steps += 1;
        }
        mean.model_disc = kNan;
        mean.policy_disc = kNan;
        mean.total_disc = kNan;
        phase_trace_.push_back("ermbc");
    } else {
        // Model-free discriminator (also used by the Dyna variant).
        for (int s = 0; s < steps && !diverged_; ++s) {
            const auto expert = expert_.sample(batch, rng_);
            const auto learner = variant_ == Variant::DynaMfEril ? sample_learner_union(batch)
                                                                 : d_real_.sample(batch, rng_);
            LossValue lp = loss_policy_disc_mf(*vf_, *b_, expert, learner, cfg_);
            lp.value *= cfg_.lambda_policy;
            lp.grad *= cfg_.lambda_policy;
            apply_update(*vf_, opt_vf_, lp.grad, schedule_.lr, lp.value, diverged_,
                         divergence_note_, "model-free discriminator loss", iteration_);
            mean.policy_disc += lp.value / (cfg_.lambda_policy > 0 ? cfg_.lambda_policy : 1.0) /
                                steps;
            mean.total_disc += lp.value / steps;
            counts_.disc_steps += 1;
        }
        mean.model_disc = kNan;
        phase_trace_.push_back("disc_mf");
    }
    return mean;
}

PolicyEvalLoss Trainer::phase_pe() {
    PolicyEvalLoss mean;
    mean.grad = Vec();
    const int steps = schedule_.pe_steps;
    const std::size_t batch = static_cast<std::size_t>(schedule_.batch);
    if (variant_ == Variant::MbEril || variant_ == Variant::Ermbc) {
        for (int s = 0; s < steps && !diverged_; ++s) {
            const auto pts = sample_learner_union(batch);
            const PolicyEvalLoss pe = loss_policy_eval(*vf_, *q_, *b_, pts, cfg_,
                                                       schedule_.k_model, schedule_.k_policy, rng_);
            apply_update(*vf_, opt_vf_, pe.grad, schedule_.lr, pe.value, diverged_,
                         divergence_note_, "policy-evaluation loss", iteration_);
            mean.value += pe.value / steps;
            mean.qv += pe.qv / steps;
            mean.vq += pe.vq / steps;
            counts_.pe_steps += 1;
        }
        phase_trace_.push_back("pe");
    } else if (variant_ == Variant::DynaMfEril || variant_ == Variant::MfEril) {
        for (int s = 0; s < steps && !diverged_; ++s) {
            const auto pts = variant_ == Variant::DynaMfEril ? sample_learner_union(batch)
                                                             : d_real_.sample(batch, rng_);
            const LossValue qf = loss_q_fit(*vf_, pts, cfg_);
            apply_update(*vf_, opt_vf_, qf.grad, schedule_.lr, qf.value, diverged_,
                         divergence_note_, "Q-fit loss", iteration_);
            mean.value += qf.value / steps;
            mean.qv += qf.value / steps;
            counts_.pe_steps += 1;
        }
        phase_trace_.push_back("q_fit");
    } else {
        throw std::logic_error("phase_pe: variant " + to_string(variant_) +
                               " has no policy-evaluation phase");
    }
    return mean;
}

void Trainer::phase_improve(LossBreakdown& breakdown) {
    const int steps = schedule_.improve_steps;
    const std::size_t batch = static_cast<std::size_t>(schedule_.batch);
    const bool improve_model = q_ && variant_ != Variant::DynaMfEril;
    // Baselines inside the improvement targets are snapshotted once per
    // improvement phase so the objective is fixed across its gradient steps.
    std::unique_ptr<StochasticMap> frozen_q = improve_model ? q_->clone() : nullptr;
    std::unique_ptr<StochasticMap> frozen_b = b_->clone();
    double sum_model = 0.0, sum_policy = 0.0;
    for (int s = 0; s < steps && !diverged_; ++s) {
        const auto pts = sample_learner_union(batch);
        if (improve_model) {
            const LossValue lm =
                loss_improve_model(*q_, *vf_, *frozen_q, pts, cfg_, schedule_.k_improve, rng_);
            apply_update(*q_, opt_q_, lm.grad, schedule_.lr, lm.value, diverged_,
                         divergence_note_, "model improvement loss", iteration_);
            sum_model += lm.value / steps;
        }
        const LossValue lp =
            loss_improve_policy(*b_, *vf_, *frozen_b, pts, cfg_, schedule_.k_improve, rng_);
        apply_update(*b_, opt_b_, lp.grad, schedule_.lr, lp.value, diverged_, divergence_note_,
                     "policy improvement loss", iteration_);
        sum_policy += lp.value / steps;
        counts_.improve_steps += 1;
    }
    breakdown.improve_model = improve_model ? sum_model : breakdown.improve_model;
    breakdown.improve_policy = sum_policy;
    phase_trace_.push_back("improve");
}

void Trainer::phase_model_ml() {
    const int steps = schedule_.model_ml_steps;
    const std::size_t batch = static_cast<std::size_t>(schedule_.batch);
    for (int s = 0; s < steps && !diverged_; ++s) {
        const auto pts = d_real_.sample(batch, rng_);
        LossValue ml;
        ml.grad = Vec::Zero(q_->param_count());
        const double inv_n = 1.0 / static_cast<double>(pts.size());
        for (const auto& t : pts) {
            ml.value -= inv_n * q_->log_prob(join_cond(t.x, t.u), t.x_next);
            q_->add_log_prob_grad(join_cond(t.x, t.u), t.x_next, -inv_n, ml.grad);
        }
        apply_update(*q_, opt_q_, ml.grad, schedule_.lr, ml.value, diverged_, divergence_note_,
                     "model maximum-likelihood loss", iteration_);
        counts_.ml_steps += 1;
    }
    phase_trace_.push_back("model_ml");
}

double Trainer::phase_bc() {
    const int steps = schedule_.disc_steps;
    const std::size_t batch = static_cast<std::size_t>(schedule_.batch);
    double mean = 0.0;
    for (int s = 0; s < steps && !diverged_; ++s) {
        const auto expert = expert_.sample(batch, rng_);
        const LossValue bc = loss_bc(*b_, expert);
        apply_update(*b_, opt_b_, bc.grad, schedule_.lr, bc.value, diverged_, divergence_note_,
                     "behavior-cloning loss", iteration_);
        mean += bc.value / steps;
        counts_.bc_steps += 1;
    }
    phase_trace_.push_back("bc");
    return mean;
}

double Trainer::evaluate() {
    const double ret =
        evaluate_policy(env_, *b_, schedule_.eval_episodes, schedule_.horizon, eval_rng_);
    eval_interactions_ += static_cast<long>(schedule_.eval_episodes) * schedule_.horizon;
    return ret;
}

IterationReport Trainer::run_iteration() {
    IterationReport rep;
    rep.losses.model_disc = kNan;
    rep.losses.policy_disc = kNan;
    rep.losses.total_disc = kNan;
    rep.losses.pe_qv = kNan;
    rep.losses.pe_vq = kNan;
    rep.losses.improve_model = kNan;
    rep.losses.improve_policy = kNan;

    switch (variant_) {
        case Variant::MbEril: {
            collect_real(schedule_.n_real);
            collect_sim(schedule_.n_sim);
            LossBreakdown bd = phase_disc();
            collect_sim(schedule_.n_sim);
            const PolicyEvalLoss pe = phase_pe();
            bd.pe_qv = cfg_.lambda_qv * pe.qv;
            bd.pe_vq = cfg_.lambda_vq * pe.vq;
            phase_improve(bd);
            rep.losses = bd;
            break;
        }
        case Variant::Ermbc: {
            collect_real(schedule_.n_real);
            collect_sim(schedule_.n_sim);
            LossBreakdown bd = phase_disc();
            collect_sim(schedule_.n_sim);
            const PolicyEvalLoss pe = phase_pe();
            bd.pe_qv = cfg_.lambda_qv * pe.qv;
            bd.pe_vq = cfg_.lambda_vq * pe.vq;
            phase_improve(bd);
            rep.losses = bd;
            break;
        }
        case Variant::MbErilNoPe: {
            collect_real(schedule_.n_real);
            collect_sim(schedule_.n_sim);
            LossBreakdown bd = phase_disc();
            bd.pe_qv = kNan;
            bd.pe_vq = kNan;
            phase_improve(bd);
            rep.losses = bd;
            break;
        }
        case Variant::DynaMfEril: {
            collect_real(schedule_.n_real);
            phase_model_ml();
            collect_sim(schedule_.n_sim);
            LossBreakdown bd = phase_disc();
            const PolicyEvalLoss pe = phase_pe();
            bd.pe_qv = pe.qv;
            bd.pe_vq = kNan;
            phase_improve(bd);
            rep.losses = bd;
            break;
        }
        case Variant::MfEril: {
            collect_real(schedule_.n_real);
            LossBreakdown bd = phase_disc();
            const PolicyEvalLoss pe = phase_pe();
            bd.pe_qv = pe.qv;
            bd.pe_vq = kNan;
            phase_improve(bd);
            rep.losses = bd;
            break;
        }
        case Variant::Bc: {
            phase_bc();
            break;
        }
    }

    iteration_ += 1;
    rep.iteration = static_cast<int>(iteration_);
    rep.real_interactions = real_interactions_;
    rep.eval_return = evaluate();
    if (std::isfinite(r_max_) && r_max_ > r_min_)
        rep.normalized_return = (rep.eval_return - r_min_) / (r_max_ - r_min_);
    if (expert_test_ && !expert_test_->empty()) {
        rep.nll_policy = nll(*b_, *expert_test_);
        if (q_) rep.nll_model = nll(*q_, *expert_test_);
    }
    return rep;
}

std::vector<IterationReport> Trainer::run(std::ostream* metrics_csv) {
    if (metrics_csv) *metrics_csv << kMetricsHeader << "\n";
    std::vector<IterationReport> reports;
    reports.reserve(schedule_.iterations);
    for (int i = 0; i < schedule_.iterations; ++i) {
        IterationReport rep = run_iteration();
        if (metrics_csv) *metrics_csv << rep.csv_row() << "\n";
        reports.push_back(std::move(rep));
        if (diverged_) break;
    }
    return reports;
}

namespace {

void save_buffer_block(std::ostream& os, const std::string& name, const TransitionBuffer& buf) {
    const int sd = buf.empty() ? 1 : static_cast<int>(buf.at(0).x.size());
    const int ad = buf.empty() ? 1 : static_cast<int>(buf.at(0).u.size());
    os << "buffer " << name << ' ' << buf.size() << ' ' << sd << ' ' << ad << "\n";
    for (std::size_t i = 0; i < buf.size(); ++i) {
        const Transition& t = buf.at(i);
        for (int j = 0; j < sd; ++j) os << fmt_g17(t.x[j]) << ' ';
        for (int j = 0; j < ad; ++j) os << fmt_g17(t.u[j]) << ' ';
        for (int j = 0; j < sd; ++j) os << fmt_g17(t.x_next[j]) << (j + 1 < sd ? " " : "");
        os << "\n";
    }
}

void load_buffer_block(std::istream& is, const std::string& expected, TransitionBuffer& buf,
                       BufferRole role, std::optional<std::size_t> capacity) {
    std::string key, name;
    std::size_t n = 0;
    int sd = 0, ad = 0;
    if (!(is >> key >> name >> n >> sd >> ad) || key != "buffer" || name != expected)
        throw std::runtime_error("checkpoint: expected buffer '" + expected + "'");
    buf = TransitionBuffer(role, capacity);
    for (std::size_t i = 0; i < n; ++i) {
        Transition t;
        t.x = Vec(sd);
        t.u = Vec(ad);
        t.x_next = Vec(sd);
        for (int j = 0; j < sd; ++j) is >> t.x[j];
        for (int j = 0; j < ad; ++j) is >> t.u[j];
        for (int j = 0; j < sd; ++j) is >> t.x_next[j];
        if (!is) throw std::runtime_error("checkpoint: truncated buffer '" + expected + "'");
        buf.push(std::move(t));
    }
}

void save_adam_block(std::ostream& os, const std::string& name, const Adam& a) {
    os << "adam " << name << ' ' << a.t << ' ' << a.m.size() << "\n";
    for (Eigen::Index i = 0; i < a.m.size(); ++i) os << fmt_g17(a.m[i]) << (i + 1 < a.m.size() ? " " : "");
    os << "\n";
    for (Eigen::Index i = 0; i < a.v.size(); ++i) os << fmt_g17(a.v[i]) << (i + 1 < a.v.size() ? " " : "");
    os << "\n";
}

void load_adam_block(std::istream& is, const std::string& expected, Adam& a) {
    std::string key, name;
    Eigen::Index n = 0;
    if (!(is >> key >> name >> a.t >> n) || key != "adam" || name != expected)
        throw std::runtime_error("checkpoint: expected adam state '" + expected + "'");
    a.m = Vec(n);
    a.v = Vec(n);
    for (Eigen::Index i = 0; i < n; ++i) is >> a.m[i];
    for (Eigen::Index i = 0; i < n; ++i) is >> a.v[i];
    if (!is) throw std::runtime_error("checkpoint: truncated adam state '" + expected + "'");
}

}  // namespace

void Trainer::save_checkpoint(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    os << "mberil-checkpoint 1\n";
    os << "variant " << to_string(variant_) << "\n";
    os << "iteration " << iteration_ << "\n";
    os << "real_interactions " << real_interactions_ << "\n";
    os << "eval_interactions " << eval_interactions_ << "\n";
    os << "collect_steps_left " << collect_steps_left_ << "\n";
    os << "collect_state " << collect_state_.size();
    for (Eigen::Index i = 0; i < collect_state_.size(); ++i) os << ' ' << fmt_g17(collect_state_[i]);
    os << "\n";
    os << "rng " << rng_.save_state() << "\n";
    os << "eval_rng " << eval_rng_.save_state() << "\n";
    save_params(os, "vf", vf_->manifest(), vf_->params());
    save_adam_block(os, "vf", opt_vf_);
    save_params(os, "b", b_->manifest(), b_->params());
    save_adam_block(os, "b", opt_b_);
    os << "has_model " << (q_ ? 1 : 0) << "\n";
    if (q_) {
        save_params(os, "q", q_->manifest(), q_->params());
        save_adam_block(os, "q", opt_q_);
    }
    save_buffer_block(os, "real", d_real_);
    save_buffer_block(os, "sim", d_sim_);
}

void Trainer::load_checkpoint(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    std::string magic;
    int version = 0;
    if (!(is >> magic >> version) || magic != "mberil-checkpoint" || version != 1)
        throw std::runtime_error(path + ": not a checkpoint file");
    std::string key, variant_name;
    is >> key >> variant_name;
    if (key != "variant" || variant_name != to_string(variant_))
        throw std::runtime_error(path + ": checkpoint is for variant '" + variant_name + "'");
    is >> key >> iteration_;
    is >> key >> real_interactions_;
    is >> key >> eval_interactions_;
    is >> key >> collect_steps_left_;
    Eigen::Index n = 0;
    is >> key >> n;
    collect_state_ = Vec(n);
    for (Eigen::Index i = 0; i < n; ++i) is >> collect_state_[i];
    std::string line;
    std::getline(is, line);  // finish the collect_state line
    std::getline(is, line);
    if (line.rfind("rng ", 0) != 0) throw std::runtime_error(path + ": missing rng state");
    rng_.load_state(line.substr(4));
    std::getline(is, line);
    if (line.rfind("eval_rng ", 0) != 0) throw std::runtime_error(path + ": missing eval rng state");
    eval_rng_.load_state(line.substr(9));
    vf_->set_params(load_params(is, "vf", vf_->manifest()));
    load_adam_block(is, "vf", opt_vf_);
    b_->set_params(load_params(is, "b", b_->manifest()));
    load_adam_block(is, "b", opt_b_);
    int has_model = 0;
    is >> key >> has_model;
    if (key != "has_model" || (has_model == 1) != (q_ != nullptr))
        throw std::runtime_error(path + ": model presence mismatch");
    if (q_) {
        q_->set_params(load_params(is, "q", q_->manifest()));
        load_adam_block(is, "q", opt_q_);
    }
    load_buffer_block(is, "real", d_real_, BufferRole::RealLearner, schedule_.real_capacity);
    load_buffer_block(is, "sim", d_sim_, BufferRole::Simulated, schedule_.sim_capacity);
}

std::vector<IterationReport> train(Variant variant, const Env& env,
                                   const TransitionBuffer& expert,
                                   const RegularizationConfig& cfg, const Schedule& schedule,
                                   std::uint64_t seed, std::ostream* metrics_csv) {
    Trainer trainer(variant, env, expert, cfg, schedule, seed);
    return trainer.run(metrics_csv);
}

ExpertWorld make_expert_world(const TabularMdp& base, const RegularizationConfig& cfg, double tol,
                              int max_iter, int outer_max_iter, double outer_tol) {
    base.validate();
    const int S = base.n_states, A = base.n_actions;
    Mat q = base.transition;
    Mat b = Mat::Constant(S, A, 1.0 / A);
    ExpertWorld world;
    double delta = std::numeric_limits<double>::infinity();
    int outer = 0;
    SolveResult res;
    while (outer < outer_max_iter) {
        res = solve(base, q, b, cfg, tol, max_iter);
        delta = std::max((res.expert_model - q).cwiseAbs().maxCoeff(),
                         (res.expert_policy - b).cwiseAbs().maxCoeff());
        q = res.expert_model;
        b = res.expert_policy;
        ++outer;
        if (delta < outer_tol) break;
    }
    if (delta >= outer_tol)
        throw ConvergenceError("expert world iteration did not reach tolerance " +
                                   fmt_g17(outer_tol) + " (residual " + fmt_g17(delta) + ")",
                               delta);
    // Renormalize rows exactly so the fixed-point MDP passes validation.
    for (Eigen::Index r = 0; r < q.rows(); ++r) q.row(r) /= q.row(r).sum();
    for (Eigen::Index r = 0; r < b.rows(); ++r) b.row(r) /= b.row(r).sum();
    world.env = base;
    world.env.transition = q;
    world.env.validate();
    world.policy = b;
    world.values = res.values;
    world.outer_iterations = outer;
    world.outer_residual = delta;
    return world;
}

TransitionBuffer sample_expert(const ExpertWorld& world, int n_trajectories, int horizon,
                               Rng& rng, bool discounted_starts) {
    if (n_trajectories < 1 || horizon < 1)
        throw std::invalid_argument("sample_expert: counts must be >= 1");
    const TabularSoftmaxMap pi =
        TabularSoftmaxMap::from_table({world.env.n_states}, world.policy);
    const Env env = world.env;
    TransitionBuffer buf(BufferRole::Expert);
    for (int traj = 0; traj < n_trajectories; ++traj) {
        Vec x = discounted_starts
                    ? sample_discounted_state(env, pi, world.env.discount, rng)
                    : env_initial(env, rng);
        for (int t = 0; t < horizon; ++t) {
            Transition tr;
            tr.x = x;
            tr.u = pi.sample(x, rng);
            tr.x_next = step(env, x, tr.u, rng);
            x = tr.x_next;
            buf.push(std::move(tr));
        }
    }
    return buf;
}

TransitionBuffer make_expert(const TabularMdp& env, const RegularizationConfig& cfg,
                             int n_trajectories, int horizon, Rng& rng, bool discounted_starts) {
    const ExpertWorld world = make_expert_world(env, cfg);
    return sample_expert(world, n_trajectories, horizon, rng, discounted_starts);
}

TransitionBuffer make_point_mass_expert(const ContinuousEnv& env, int n_transitions, int horizon,
                                        Rng& rng) {
    if (n_transitions < 1 || horizon < 1)
        throw std::invalid_argument("make_point_mass_expert: counts must be >= 1");
    TransitionBuffer buf(BufferRole::Expert);
    Vec x = env.initial_sampler(rng);
    int left = horizon;
    for (int i = 0; i < n_transitions; ++i) {
        if (left == 0) {
            x = env.initial_sampler(rng);
            left = horizon;
        }
        // Proportional controller toward the reward peak with mild noise.
        Vec u = (-4.0 * x).cwiseMin(1.0).cwiseMax(-1.0);
        for (int d = 0; d < env.action_dim; ++d) u[d] += 0.05 * rng.normal();
        u = env.clamp_action(u);
        Transition t;
        t.x = x;
        t.u = u;
        t.x_next = step(env, x, u, rng);
        x = t.x_next;
        --left;
        buf.push(std::move(t));
    }
    return buf;
}

}  // namespace mberil
