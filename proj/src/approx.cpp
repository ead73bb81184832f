#include "mberil/approx.hpp"

#include <istream>
#include <ostream>

namespace mberil {

double dsilu(double z) {
    const double s = sigmoid(z);
    return s * (1.0 + z * (1.0 - s));
}

double dsilu_deriv(double z) {
    const double s = sigmoid(z);
    const double sp = s * (1.0 - s);
    return sp * (2.0 + z * (1.0 - 2.0 * s));
}

int manifest_count(const ParamManifest& m) {
    int n = 0;
    for (const auto& s : m) n += s.count();
    return n;
}

void save_params(std::ostream& os, const std::string& set_name, const ParamManifest& manifest,
                 const Vec& params) {
    if (params.size() != manifest_count(manifest))
        throw std::invalid_argument("save_params: manifest does not match parameter count");
    os << "params " << set_name << ' ' << params.size() << "\n";
    for (const auto& s : manifest) os << "shape " << s.name << ' ' << s.rows << ' ' << s.cols << "\n";
    os << "values";
    for (Eigen::Index i = 0; i < params.size(); ++i) os << ' ' << fmt_g17(params[i]);
    os << "\n";
}

Vec load_params(std::istream& is, const std::string& expected_set_name,
                const ParamManifest& expected_manifest) {
    std::string key, name;
    Eigen::Index count = 0;
    if (!(is >> key >> name >> count) || key != "params" || name != expected_set_name)
        throw std::runtime_error("checkpoint: expected parameter set '" + expected_set_name + "'");
    if (count != manifest_count(expected_manifest))
        throw std::runtime_error("checkpoint: parameter count mismatch for '" + name + "'");
    for (const auto& s : expected_manifest) {
        std::string sname;
        int rows = 0, cols = 0;
        if (!(is >> key >> sname >> rows >> cols) || key != "shape" || sname != s.name ||
            rows != s.rows || cols != s.cols)
            throw std::runtime_error("checkpoint: shape manifest mismatch for '" + name + "'");
    }
    if (!(is >> key) || key != "values")
        throw std::runtime_error("checkpoint: missing values for '" + name + "'");
    Vec params(count);
    for (Eigen::Index i = 0; i < count; ++i)
        if (!(is >> params[i])) throw std::runtime_error("checkpoint: short value list");
    return params;
}

void MlpSpec::validate() const {
    if (widths.size() < 3)
        throw std::invalid_argument("MlpSpec: at least one hidden layer is required");
    for (int w : widths)
        if (w < 1) throw std::invalid_argument("MlpSpec: widths must be >= 1");
}

Mlp::Mlp(MlpSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    const int layers = static_cast<int>(spec_.widths.size()) - 1;
    w_.resize(layers);
    b_.resize(layers);
    n_params_ = 0;
    for (int l = 0; l < layers; ++l) {
        w_[l] = Mat::Zero(spec_.widths[l + 1], spec_.widths[l]);
        b_[l] = Vec::Zero(spec_.widths[l + 1]);
        n_params_ += static_cast<int>(w_[l].size() + b_[l].size());
    }
}

ParamManifest Mlp::manifest(const std::string& prefix) const {
    ParamManifest m;
    for (std::size_t l = 0; l < w_.size(); ++l) {
        m.push_back({prefix + ".w" + std::to_string(l), static_cast<int>(w_[l].rows()),
                     static_cast<int>(w_[l].cols())});
        m.push_back({prefix + ".b" + std::to_string(l), static_cast<int>(b_[l].size()), 1});
    }
    return m;
}

void Mlp::init(Rng& rng) {
    for (std::size_t l = 0; l < w_.size(); ++l) {
        const double a = std::sqrt(6.0 / (w_[l].cols() + w_[l].rows()));
        for (Eigen::Index i = 0; i < w_[l].rows(); ++i)
            for (Eigen::Index j = 0; j < w_[l].cols(); ++j)
                w_[l](i, j) = (rng.uniform() * 2.0 - 1.0) * a;
        b_[l].setZero();
    }
}

Vec Mlp::params() const {
    Vec p(n_params_);
    int k = 0;
    for (std::size_t l = 0; l < w_.size(); ++l) {
        for (Eigen::Index i = 0; i < w_[l].rows(); ++i)
            for (Eigen::Index j = 0; j < w_[l].cols(); ++j) p[k++] = w_[l](i, j);
        for (Eigen::Index i = 0; i < b_[l].size(); ++i) p[k++] = b_[l][i];
    }
    return p;
}

void Mlp::set_params(const Vec& p) {
    if (p.size() != n_params_) throw std::invalid_argument("Mlp::set_params: wrong length");
    int k = 0;
    for (std::size_t l = 0; l < w_.size(); ++l) {
        for (Eigen::Index i = 0; i < w_[l].rows(); ++i)
            for (Eigen::Index j = 0; j < w_[l].cols(); ++j) w_[l](i, j) = p[k++];
        for (Eigen::Index i = 0; i < b_[l].size(); ++i) b_[l][i] = p[k++];
    }
}

double Mlp::act(double z) const { return spec_.act == Activation::DSilu ? dsilu(z) : std::tanh(z); }

double Mlp::act_deriv(double z) const {
    if (spec_.act == Activation::DSilu) return dsilu_deriv(z);
    const double t = std::tanh(z);
    return 1.0 - t * t;
}

Vec Mlp::forward(const Vec& in) const {
    Workspace ws;
    return forward(in, ws);
}

Vec Mlp::forward(const Vec& in, Workspace& ws) const {
    if (in.size() != spec_.in_dim()) throw std::invalid_argument("Mlp::forward: input dimension mismatch");
    const int layers = static_cast<int>(w_.size());
    ws.input = in;
    ws.pre.assign(layers, Vec());
    ws.post.assign(layers, Vec());
    Vec a = in;
    for (int l = 0; l < layers; ++l) {
        ws.pre[l] = w_[l] * a + b_[l];
        if (l + 1 < layers) {
            ws.post[l] = ws.pre[l].unaryExpr([this](double z) { return act(z); });
        } else {
            ws.post[l] = ws.pre[l];  // linear output
        }
        a = ws.post[l];
    }
    return a;
}

Vec Mlp::backward(const Workspace& ws, const Vec& dl_dout, double weight, Vec& grad,
                  int offset) const {
    const int layers = static_cast<int>(w_.size());
    if (grad.size() < offset + n_params_)
        throw std::invalid_argument("Mlp::backward: gradient buffer too small");
    // Offsets of each layer inside the flat parameter block.
    std::vector<int> layer_offset(layers);
    int k = offset;
    for (int l = 0; l < layers; ++l) {
        layer_offset[l] = k;
        k += static_cast<int>(w_[l].size() + b_[l].size());
    }
    Vec g = dl_dout;
    for (int l = layers - 1; l >= 0; --l) {
        if (l + 1 < layers)
            g = g.cwiseProduct(ws.pre[l].unaryExpr([this](double z) { return act_deriv(z); }));
        if (!g.allFinite())
            throw std::runtime_error("Mlp::backward: non-finite gradient at layer " +
                                     std::to_string(l));
        const Vec& a_in = (l == 0) ? ws.input : ws.post[l - 1];
        int p = layer_offset[l];
        for (Eigen::Index i = 0; i < w_[l].rows(); ++i)
            for (Eigen::Index j = 0; j < w_[l].cols(); ++j) grad[p++] += weight * g[i] * a_in[j];
        for (Eigen::Index i = 0; i < b_[l].size(); ++i) grad[p++] += weight * g[i];
        g = w_[l].transpose() * g;
    }
    return g;
}

GaussianHead GaussianHead::from_raw(const Vec& raw) {
    if (raw.size() % 2 != 0) throw std::invalid_argument("GaussianHead: raw output must split in two");
    const int d = static_cast<int>(raw.size()) / 2;
    GaussianHead h;
    h.mean = raw.head(d);
    h.log_std = raw.tail(d).unaryExpr(
        [](double z) { return std::clamp(z, kLogStdMin, kLogStdMax); });
    return h;
}

double GaussianHead::log_prob(const Vec& x) const {
    if (x.size() != mean.size()) throw std::invalid_argument("GaussianHead::log_prob: dimension mismatch");
    double lp = 0.0;
    for (int i = 0; i < dim(); ++i) {
        const double z = (x[i] - mean[i]) * std::exp(-log_std[i]);
        lp += -0.5 * std::log(2.0 * M_PI) - log_std[i] - 0.5 * z * z;
    }
    return lp;
}

Vec GaussianHead::sample(Rng& rng) const {
    Vec x(dim());
    for (int i = 0; i < dim(); ++i) x[i] = mean[i] + std::exp(log_std[i]) * rng.normal();
    return x;
}

double GaussianHead::entropy() const {
    double h = 0.0;
    for (int i = 0; i < dim(); ++i) h += 0.5 * std::log(2.0 * M_PI * M_E) + log_std[i];
    return h;
}

TabularSoftmaxMap::TabularSoftmaxMap(std::vector<int> cond_card, int n_out)
    : cond_card_(std::move(cond_card)) {
    if (cond_card_.empty()) throw std::invalid_argument("TabularSoftmaxMap: empty conditioning");
    long rows = 1;
    for (int c : cond_card_) {
        if (c < 1) throw std::invalid_argument("TabularSoftmaxMap: cardinalities must be >= 1");
        rows *= c;
    }
    if (n_out < 1) throw std::invalid_argument("TabularSoftmaxMap: n_out must be >= 1");
    logits_ = Mat::Zero(rows, n_out);
}

TabularSoftmaxMap TabularSoftmaxMap::policy(int n_states, int n_actions) {
    return TabularSoftmaxMap({n_states}, n_actions);
}

TabularSoftmaxMap TabularSoftmaxMap::model(int n_states, int n_actions) {
    return TabularSoftmaxMap({n_states, n_actions}, n_states);
}

TabularSoftmaxMap TabularSoftmaxMap::from_table(std::vector<int> cond_card, const Mat& probs) {
    TabularSoftmaxMap map(std::move(cond_card), static_cast<int>(probs.cols()));
    if (probs.rows() != map.logits_.rows())
        throw std::invalid_argument("TabularSoftmaxMap::from_table: row count mismatch");
    map.logits_ = probs.unaryExpr([](double p) { return floored_log(p); });
    return map;
}

int TabularSoftmaxMap::row_of(const Vec& cond) const {
    if (cond.size() != static_cast<Eigen::Index>(cond_card_.size()))
        throw std::invalid_argument("TabularSoftmaxMap: conditioning has wrong arity");
    long idx = 0;
    for (std::size_t i = 0; i < cond_card_.size(); ++i) {
        const int c = static_cast<int>(cond[i]);
        if (c < 0 || c >= cond_card_[i])
            throw std::invalid_argument("TabularSoftmaxMap: conditioning index out of range");
        idx = idx * cond_card_[i] + c;
    }
    return static_cast<int>(idx);
}

Vec TabularSoftmaxMap::row_log_probs(int row) const {
    const Vec logits = logits_.row(row).transpose();
    return logits.array() - logsumexp(logits);
}

Vec TabularSoftmaxMap::row_probs(int row) const {
    return row_log_probs(row).array().exp();
}

Mat TabularSoftmaxMap::prob_table() const {
    Mat t(n_rows(), n_out());
    for (int r = 0; r < n_rows(); ++r) t.row(r) = row_probs(r).transpose();
    return t;
}

double TabularSoftmaxMap::log_prob(const Vec& cond, const Vec& out) const {
    const int j = static_cast<int>(out[0]);
    if (j < 0 || j >= n_out()) throw std::invalid_argument("TabularSoftmaxMap: outcome out of range");
    return row_log_probs(row_of(cond))[j];
}

Vec TabularSoftmaxMap::sample(const Vec& cond, Rng& rng) const {
    Vec out(1);
    out[0] = rng.categorical(row_probs(row_of(cond)));
    return out;
}

Vec TabularSoftmaxMap::params() const {
    Vec p(param_count());
    int k = 0;
    for (int r = 0; r < n_rows(); ++r)
        for (int c = 0; c < n_out(); ++c) p[k++] = logits_(r, c);
    return p;
}

void TabularSoftmaxMap::set_params(const Vec& p) {
    if (p.size() != param_count()) throw std::invalid_argument("TabularSoftmaxMap: wrong length");
    int k = 0;
    for (int r = 0; r < n_rows(); ++r)
        for (int c = 0; c < n_out(); ++c) logits_(r, c) = p[k++];
}

ParamManifest TabularSoftmaxMap::manifest() const {
    return {{"logits", n_rows(), n_out()}};
}

void TabularSoftmaxMap::add_log_prob_grad(const Vec& cond, const Vec& out, double weight,
                                          Vec& grad) const {
    const int row = row_of(cond);
    const int j = static_cast<int>(out[0]);
    const Vec p = row_probs(row);
    const int base = grad_offset(row, 0);
    for (int c = 0; c < n_out(); ++c) grad[base + c] += weight * ((c == j ? 1.0 : 0.0) - p[c]);
}

void TabularSoftmaxMap::add_row_prob_grad(int row, const Vec& dl_dp, double weight,
                                          Vec& grad) const {
    const Vec p = row_probs(row);
    const double dot = dl_dp.dot(p);
    const int base = grad_offset(row, 0);
    for (int c = 0; c < n_out(); ++c) grad[base + c] += weight * p[c] * (dl_dp[c] - dot);
}

void TabularSoftmaxMap::add_row_log_prob_grad(int row, const Vec& dl_dlogp, double weight,
                                              Vec& grad) const {
    const Vec p = row_probs(row);
    const double total = dl_dlogp.sum();
    const int base = grad_offset(row, 0);
    for (int c = 0; c < n_out(); ++c) grad[base + c] += weight * (dl_dlogp[c] - p[c] * total);
}

std::unique_ptr<StochasticMap> TabularSoftmaxMap::clone() const {
    return std::make_unique<TabularSoftmaxMap>(*this);
}

GaussianMlpMap::GaussianMlpMap(int cond_dim, int out_dim, std::vector<int> hidden, Activation act,
                               Rng& rng)
    : cond_dim_(cond_dim), out_dim_(out_dim) {
    MlpSpec spec;
    spec.widths.push_back(cond_dim);
    for (int h : hidden) spec.widths.push_back(h);
    spec.widths.push_back(2 * out_dim);
    spec.act = act;
    spec.head = HeadKind::Gaussian;
    net_ = Mlp(spec);
    net_.init(rng);
}

GaussianHead GaussianMlpMap::head(const Vec& cond) const {
    return GaussianHead::from_raw(net_.forward(cond));
}

double GaussianMlpMap::log_prob(const Vec& cond, const Vec& out) const {
    return head(cond).log_prob(out);
}

Vec GaussianMlpMap::sample(const Vec& cond, Rng& rng) const { return head(cond).sample(rng); }

GaussianMlpMap::SampleRec GaussianMlpMap::rsample(const Vec& cond, Rng& rng) const {
    SampleRec rec;
    rec.raw = net_.forward(cond, rec.ws);
    const GaussianHead h = GaussianHead::from_raw(rec.raw);
    rec.eps = rng.normal_vec(out_dim_);
    rec.out = h.mean + h.log_std.array().exp().matrix().cwiseProduct(rec.eps);
    return rec;
}

void GaussianMlpMap::backward_sample(const SampleRec& rec, const Vec& dl_dout, const Vec& dl_dmean,
                                     const Vec& dl_dlogstd, double weight, Vec& grad) const {
    const GaussianHead h = GaussianHead::from_raw(rec.raw);
    Vec draw(2 * out_dim_);
    for (int i = 0; i < out_dim_; ++i) {
        const double sigma = std::exp(h.log_std[i]);
        draw[i] = dl_dmean[i] + dl_dout[i];
        double dls = dl_dlogstd[i] + dl_dout[i] * sigma * rec.eps[i];
        // The clamp kills the gradient outside [-5, 2].
        const double raw_ls = rec.raw[out_dim_ + i];
        if (raw_ls < GaussianHead::kLogStdMin || raw_ls > GaussianHead::kLogStdMax) dls = 0.0;
        draw[out_dim_ + i] = dls;
    }
    net_.backward(rec.ws, draw, weight, grad);
}

Vec GaussianMlpMap::dlogp_dout(const Vec& cond, const Vec& out) const {
    const GaussianHead h = head(cond);
    Vec g(out_dim_);
    for (int i = 0; i < out_dim_; ++i) {
        const double inv_var = std::exp(-2.0 * h.log_std[i]);
        g[i] = -(out[i] - h.mean[i]) * inv_var;
    }
    return g;
}

void GaussianMlpMap::add_log_prob_grad(const Vec& cond, const Vec& out, double weight,
                                       Vec& grad) const {
    Mlp::Workspace ws;
    const Vec raw = net_.forward(cond, ws);
    const GaussianHead h = GaussianHead::from_raw(raw);
    Vec draw(2 * out_dim_);
    for (int i = 0; i < out_dim_; ++i) {
        const double inv_var = std::exp(-2.0 * h.log_std[i]);
        const double diff = out[i] - h.mean[i];
        draw[i] = diff * inv_var;
        double dls = diff * diff * inv_var - 1.0;
        const double raw_ls = raw[out_dim_ + i];
        if (raw_ls < GaussianHead::kLogStdMin || raw_ls > GaussianHead::kLogStdMax) dls = 0.0;
        draw[out_dim_ + i] = dls;
    }
    net_.backward(ws, draw, weight, grad);
}

std::unique_ptr<StochasticMap> GaussianMlpMap::clone() const {
    return std::make_unique<GaussianMlpMap>(*this);
}

Vec ValueFn::dv_dx(const Vec&) const {
    throw std::logic_error("ValueFn: input gradients are only available for MLP backends");
}

Vec ValueFn::dq_du(const Vec&, const Vec&) const {
    throw std::logic_error("ValueFn: input gradients are only available for MLP backends");
}

TabularValueFn::TabularValueFn(int n_states, int n_actions)
    : n_states_(n_states), n_actions_(n_actions) {
    if (n_states < 1 || n_actions < 1) throw std::invalid_argument("TabularValueFn: bad shape");
    r_ = Vec::Zero(n_states);
    v_ = Vec::Zero(n_states);
    q_ = Mat::Zero(n_states, n_actions);
}

TabularValueFn TabularValueFn::from_tables(const Vec& r, const Vec& v, const Mat& q) {
    TabularValueFn vf(static_cast<int>(r.size()), static_cast<int>(q.cols()));
    if (v.size() != r.size() || q.rows() != r.size())
        throw std::invalid_argument("TabularValueFn: inconsistent table shapes");
    vf.r_ = r;
    vf.v_ = v;
    vf.q_ = q;
    return vf;
}

int TabularValueFn::check_state(const Vec& x) const {
    const int xi = static_cast<int>(x[0]);
    if (xi < 0 || xi >= n_states_) throw std::invalid_argument("TabularValueFn: state out of range");
    return xi;
}

double TabularValueFn::q(const Vec& x, const Vec& u) const {
    const int xi = check_state(x);
    const int ui = static_cast<int>(u[0]);
    if (ui < 0 || ui >= n_actions_) throw std::invalid_argument("TabularValueFn: action out of range");
    return q_(xi, ui);
}

void TabularValueFn::add_r_grad(const Vec& x, double weight, Vec& grad) const {
    grad[check_state(x)] += weight;
}

void TabularValueFn::add_v_grad(const Vec& x, double weight, Vec& grad) const {
    grad[n_states_ + check_state(x)] += weight;
}

void TabularValueFn::add_q_grad(const Vec& x, const Vec& u, double weight, Vec& grad) const {
    const int xi = check_state(x);
    const int ui = static_cast<int>(u[0]);
    grad[2 * n_states_ + xi * n_actions_ + ui] += weight;
}

Vec TabularValueFn::params() const {
    Vec p(param_count());
    p.head(n_states_) = r_;
    p.segment(n_states_, n_states_) = v_;
    int k = 2 * n_states_;
    for (int x = 0; x < n_states_; ++x)
        for (int u = 0; u < n_actions_; ++u) p[k++] = q_(x, u);
    return p;
}

void TabularValueFn::set_params(const Vec& p) {
    if (p.size() != param_count()) throw std::invalid_argument("TabularValueFn: wrong length");
    r_ = p.head(n_states_);
    v_ = p.segment(n_states_, n_states_);
    int k = 2 * n_states_;
    for (int x = 0; x < n_states_; ++x)
        for (int u = 0; u < n_actions_; ++u) q_(x, u) = p[k++];
}

ParamManifest TabularValueFn::manifest() const {
    return {{"r", n_states_, 1}, {"v", n_states_, 1}, {"q", n_states_, n_actions_}};
}

std::unique_ptr<ValueFn> TabularValueFn::clone() const {
    return std::make_unique<TabularValueFn>(*this);
}

MlpValueFn::MlpValueFn(int state_dim, int action_dim, std::vector<int> hidden, Activation act,
                       Rng& rng)
    : state_dim_(state_dim), action_dim_(action_dim) {
    auto make = [&](int in) {
        MlpSpec spec;
        spec.widths.push_back(in);
        for (int h : hidden) spec.widths.push_back(h);
        spec.widths.push_back(1);
        spec.act = act;
        return Mlp(spec);
    };
    r_net_ = make(state_dim);
    v_net_ = make(state_dim);
    q_net_ = make(state_dim + action_dim);
    r_net_.init(rng);
    v_net_.init(rng);
    q_net_.init(rng);
}

Vec MlpValueFn::join(const Vec& x, const Vec& u) const {
    Vec xu(state_dim_ + action_dim_);
    xu.head(state_dim_) = x;
    xu.tail(action_dim_) = u;
    return xu;
}

double MlpValueFn::q(const Vec& x, const Vec& u) const { return q_net_.forward(join(x, u))[0]; }

void MlpValueFn::add_r_grad(const Vec& x, double weight, Vec& grad) const {
    Mlp::Workspace ws;
    r_net_.forward(x, ws);
    r_net_.backward(ws, Vec::Ones(1), weight, grad, 0);
}

void MlpValueFn::add_v_grad(const Vec& x, double weight, Vec& grad) const {
    Mlp::Workspace ws;
    v_net_.forward(x, ws);
    v_net_.backward(ws, Vec::Ones(1), weight, grad, r_net_.param_count());
}

void MlpValueFn::add_q_grad(const Vec& x, const Vec& u, double weight, Vec& grad) const {
    Mlp::Workspace ws;
    q_net_.forward(join(x, u), ws);
    q_net_.backward(ws, Vec::Ones(1), weight, grad,
                    r_net_.param_count() + v_net_.param_count());
}

Vec MlpValueFn::dv_dx(const Vec& x) const {
    Mlp::Workspace ws;
    v_net_.forward(x, ws);
    Vec scratch = Vec::Zero(v_net_.param_count());
    return v_net_.backward(ws, Vec::Ones(1), 0.0, scratch, 0);
}

Vec MlpValueFn::dq_du(const Vec& x, const Vec& u) const {
    Mlp::Workspace ws;
    q_net_.forward(join(x, u), ws);
    Vec scratch = Vec::Zero(q_net_.param_count());
    const Vec din = q_net_.backward(ws, Vec::Ones(1), 0.0, scratch, 0);
    return din.tail(action_dim_);
}

int MlpValueFn::param_count() const {
    return r_net_.param_count() + v_net_.param_count() + q_net_.param_count();
}

Vec MlpValueFn::params() const {
    Vec p(param_count());
    p.head(r_net_.param_count()) = r_net_.params();
    p.segment(r_net_.param_count(), v_net_.param_count()) = v_net_.params();
    p.tail(q_net_.param_count()) = q_net_.params();
    return p;
}

void MlpValueFn::set_params(const Vec& p) {
    if (p.size() != param_count()) throw std::invalid_argument("MlpValueFn: wrong length");
    r_net_.set_params(p.head(r_net_.param_count()));
    v_net_.set_params(p.segment(r_net_.param_count(), v_net_.param_count()));
    q_net_.set_params(p.tail(q_net_.param_count()));
}

ParamManifest MlpValueFn::manifest() const {
    ParamManifest m = r_net_.manifest("r");
    for (auto& s : v_net_.manifest("v")) m.push_back(s);
    for (auto& s : q_net_.manifest("q")) m.push_back(s);
    return m;
}

std::unique_ptr<ValueFn> MlpValueFn::clone() const { return std::make_unique<MlpValueFn>(*this); }

double grad_check(const std::function<double(const Vec&)>& loss_fn, const Vec& params,
                  const Vec& analytic_grad, double eps, int max_coords, std::uint64_t seed) {
    if (!(eps > 0.0 && eps <= 1e-3)) throw std::invalid_argument("grad_check: eps must lie in (0, 1e-3]");
    if (analytic_grad.size() != params.size())
        throw std::invalid_argument("grad_check: gradient length mismatch");
    const int n = static_cast<int>(params.size());
    std::vector<int> coords;
    if (n <= max_coords) {
        coords.resize(n);
        for (int i = 0; i < n; ++i) coords[i] = i;
    } else {
        Rng rng(derive_seed(seed, 0xC0FFEE));
        std::vector<bool> seen(n, false);
        const int want = std::max(200, max_coords);
        while (static_cast<int>(coords.size()) < want) {
            const int i = rng.uniform_int(n);
            if (!seen[i]) {
                seen[i] = true;
                coords.push_back(i);
            }
        }
    }
    double worst = 0.0;
    Vec p = params;
    for (int i : coords) {
        const double saved = p[i];
        p[i] = saved + eps;
        const double hi = loss_fn(p);
        p[i] = saved - eps;
        const double lo = loss_fn(p);
        p[i] = saved;
        const double fd = (hi - lo) / (2.0 * eps);
        const double denom = std::max(std::abs(fd) + std::abs(analytic_grad[i]), 1e-8);
        worst = std::max(worst, std::abs(fd - analytic_grad[i]) / denom);
    }
    return worst;
}

}  // namespace mberil
