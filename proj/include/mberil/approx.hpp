#pragma once

#include "mberil/common.hpp"
#include "mberil/mdp.hpp"
#include "mberil/rng.hpp"

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace mberil {

enum class Activation { DSilu, Tanh };

enum class HeadKind { Scalar, Vector, Gaussian, CategoricalLogits };

/// dSiLU: derivative of the sigmoid-weighted linear unit,
/// a(z) = sigma(z) * (1 + z * (1 - sigma(z))).
double dsilu(double z);
double dsilu_deriv(double z);

/// Shape manifest entry for flat parameter vectors.
struct ParamShape {
    std::string name;
    int rows = 0;
    int cols = 1;  // 1 for vectors
    int count() const { return rows * cols; }
};

using ParamManifest = std::vector<ParamShape>;

int manifest_count(const ParamManifest& m);

/// Writes "name rows cols v0 v1 ..." checkpoint blocks; values use %.17g so
/// the round trip is exact.
void save_params(std::ostream& os, const std::string& set_name, const ParamManifest& manifest,
                 const Vec& params);
Vec load_params(std::istream& is, const std::string& expected_set_name,
                const ParamManifest& expected_manifest);

struct MlpSpec {
    std::vector<int> widths;  // [in, hidden..., out]
    Activation act = Activation::DSilu;
    HeadKind head = HeadKind::Scalar;

    void validate() const;
    int in_dim() const { return widths.front(); }
    int out_dim() const { return widths.back(); }
};

/// Fully connected network with linear output and hand-rolled reverse-mode
/// backprop. Parameters live in one flat vector: per layer W (row-major)
/// then b.
class Mlp {
public:
    Mlp() = default;
    explicit Mlp(MlpSpec spec);

    const MlpSpec& spec() const { return spec_; }
    int param_count() const { return n_params_; }
    ParamManifest manifest(const std::string& prefix) const;

    /// Uniform init in [-a, a], a = sqrt(6/(fan_in+fan_out)).
    void init(Rng& rng);

    Vec params() const;
    void set_params(const Vec& p);

    struct Workspace {
        Vec input;
        std::vector<Vec> pre;   // pre-activation per layer
        std::vector<Vec> post;  // activation per layer (post.back() is the output)
    };

    Vec forward(const Vec& in) const;
    Vec forward(const Vec& in, Workspace& ws) const;

    /// Accumulates weight * dL/dparams into grad[offset..offset+n) and
    /// returns dL/dinput. Throws on non-finite intermediates, naming the layer.
    Vec backward(const Workspace& ws, const Vec& dl_dout, double weight, Vec& grad,
                 int offset = 0) const;

private:
    MlpSpec spec_;
    std::vector<Mat> w_;
    std::vector<Vec> b_;
    int n_params_ = 0;

    double act(double z) const;
    double act_deriv(double z) const;
};

/// Diagonal Gaussian with log_std clamped to [-5, 2].
struct GaussianHead {
    Vec mean;
    Vec log_std;

    static constexpr double kLogStdMin = -5.0;
    static constexpr double kLogStdMax = 2.0;

    static GaussianHead from_raw(const Vec& raw);  // raw = [mean; log_std_raw]

    int dim() const { return static_cast<int>(mean.size()); }
    double log_prob(const Vec& x) const;
    Vec sample(Rng& rng) const;
    /// Differential entropy, sum over dimensions of 0.5*ln(2*pi*e*sigma^2).
    double entropy() const;
};

/// Conditional distribution: tabular softmax table or Gaussian MLP.
/// Tabular conditioning vectors hold integer indices (one per factor).
class StochasticMap {
public:
    enum class Kind { TabularSoftmax, GaussianMlp };

    virtual ~StochasticMap() = default;

    virtual Kind kind() const = 0;
    virtual int cond_dim() const = 0;
    virtual int out_dim() const = 0;

    virtual double log_prob(const Vec& cond, const Vec& out) const = 0;
    virtual Vec sample(const Vec& cond, Rng& rng) const = 0;

    virtual int param_count() const = 0;
    virtual Vec params() const = 0;
    virtual void set_params(const Vec& p) = 0;
    virtual ParamManifest manifest() const = 0;

    /// Accumulates weight * d log_prob / d params into grad.
    virtual void add_log_prob_grad(const Vec& cond, const Vec& out, double weight,
                                   Vec& grad) const = 0;

    virtual std::unique_ptr<StochasticMap> clone() const = 0;
};

class TabularSoftmaxMap final : public StochasticMap {
public:
    /// cond_card holds the cardinality of each conditioning factor, e.g.
    /// {S} for a policy over A outputs, {S, A} for a model over S outputs.
    TabularSoftmaxMap(std::vector<int> cond_card, int n_out);

    static TabularSoftmaxMap policy(int n_states, int n_actions);
    static TabularSoftmaxMap model(int n_states, int n_actions);
    /// Logits set to floored_log of the given rows, so softmax reproduces the
    /// table up to renormalization of the floor mass.
    static TabularSoftmaxMap from_table(std::vector<int> cond_card, const Mat& probs);

    Kind kind() const override { return Kind::TabularSoftmax; }
    int cond_dim() const override { return static_cast<int>(cond_card_.size()); }
    int out_dim() const override { return 1; }

    int n_rows() const { return static_cast<int>(logits_.rows()); }
    int n_out() const { return static_cast<int>(logits_.cols()); }
    int row_of(const Vec& cond) const;

    Vec row_log_probs(int row) const;  // max-shifted log softmax
    Vec row_probs(int row) const;
    Mat prob_table() const;

    double log_prob(const Vec& cond, const Vec& out) const override;
    Vec sample(const Vec& cond, Rng& rng) const override;

    int param_count() const override { return static_cast<int>(logits_.size()); }
    Vec params() const override;
    void set_params(const Vec& p) override;
    ParamManifest manifest() const override;

    void add_log_prob_grad(const Vec& cond, const Vec& out, double weight,
                           Vec& grad) const override;
    /// Chain rule helpers for losses written against row probabilities or
    /// log-probabilities of a specific row.
    void add_row_prob_grad(int row, const Vec& dl_dp, double weight, Vec& grad) const;
    void add_row_log_prob_grad(int row, const Vec& dl_dlogp, double weight, Vec& grad) const;

    std::unique_ptr<StochasticMap> clone() const override;

    Mat& logits() { return logits_; }
    const Mat& logits() const { return logits_; }

private:
    std::vector<int> cond_card_;
    Mat logits_;  // n_rows x n_out
    int grad_offset(int row, int col) const { return row * n_out() + col; }
};

class GaussianMlpMap final : public StochasticMap {
public:
    GaussianMlpMap(int cond_dim, int out_dim, std::vector<int> hidden, Activation act, Rng& rng);

    Kind kind() const override { return Kind::GaussianMlp; }
    int cond_dim() const override { return cond_dim_; }
    int out_dim() const override { return out_dim_; }

    GaussianHead head(const Vec& cond) const;

    double log_prob(const Vec& cond, const Vec& out) const override;
    Vec sample(const Vec& cond, Rng& rng) const override;

    /// Reparameterized draw with everything needed for pathwise backprop.
    struct SampleRec {
        Vec out;
        Vec eps;
        Vec raw;  // network output before the log_std clamp
        Mlp::Workspace ws;
    };
    SampleRec rsample(const Vec& cond, Rng& rng) const;

    /// Pathwise backward through out = mean + sigma .* eps. dl_dout is the
    /// total derivative of the loss with respect to the sample; dl_dmean and
    /// dl_dlogstd are direct partials at the fixed sample point.
    void backward_sample(const SampleRec& rec, const Vec& dl_dout, const Vec& dl_dmean,
                         const Vec& dl_dlogstd, double weight, Vec& grad) const;

    /// d log p(out | cond) / d out at fixed parameters.
    Vec dlogp_dout(const Vec& cond, const Vec& out) const;

    int param_count() const override { return net_.param_count(); }
    Vec params() const override { return net_.params(); }
    void set_params(const Vec& p) override { net_.set_params(p); }
    ParamManifest manifest() const override { return net_.manifest("gaussian_mlp"); }

    void add_log_prob_grad(const Vec& cond, const Vec& out, double weight,
                           Vec& grad) const override;

    std::unique_ptr<StochasticMap> clone() const override;

private:
    int cond_dim_ = 0;
    int out_dim_ = 0;
    Mlp net_;
};

/// r(x), V(x), Q(x,u) backed either by tables or by three separate MLPs.
class ValueFn {
public:
    virtual ~ValueFn() = default;

    virtual double r(const Vec& x) const = 0;
    virtual double v(const Vec& x) const = 0;
    virtual double q(const Vec& x, const Vec& u) const = 0;

    virtual void add_r_grad(const Vec& x, double weight, Vec& grad) const = 0;
    virtual void add_v_grad(const Vec& x, double weight, Vec& grad) const = 0;
    virtual void add_q_grad(const Vec& x, const Vec& u, double weight, Vec& grad) const = 0;

    /// Input gradients for pathwise estimators; only MLP backends support them.
    virtual Vec dv_dx(const Vec& x) const;
    virtual Vec dq_du(const Vec& x, const Vec& u) const;

    virtual int param_count() const = 0;
    virtual Vec params() const = 0;
    virtual void set_params(const Vec& p) = 0;
    virtual ParamManifest manifest() const = 0;
    virtual std::unique_ptr<ValueFn> clone() const = 0;
};

/// Parameters laid out as [r(0..S-1), v(0..S-1), q(row-major S x A)].
class TabularValueFn final : public ValueFn {
public:
    TabularValueFn(int n_states, int n_actions);
    static TabularValueFn from_tables(const Vec& r, const Vec& v, const Mat& q);

    int n_states() const { return n_states_; }
    int n_actions() const { return n_actions_; }
    const Vec& r_table() const { return r_; }
    const Vec& v_table() const { return v_; }
    const Mat& q_table() const { return q_; }
    Vec& r_table() { return r_; }
    Vec& v_table() { return v_; }
    Mat& q_table() { return q_; }

    double r(const Vec& x) const override { return r_[check_state(x)]; }
    double v(const Vec& x) const override { return v_[check_state(x)]; }
    double q(const Vec& x, const Vec& u) const override;

    void add_r_grad(const Vec& x, double weight, Vec& grad) const override;
    void add_v_grad(const Vec& x, double weight, Vec& grad) const override;
    void add_q_grad(const Vec& x, const Vec& u, double weight, Vec& grad) const override;

    int param_count() const override { return n_states_ * 2 + n_states_ * n_actions_; }
    Vec params() const override;
    void set_params(const Vec& p) override;
    ParamManifest manifest() const override;
    std::unique_ptr<ValueFn> clone() const override;

private:
    int n_states_ = 0;
    int n_actions_ = 0;
    Vec r_, v_;
    Mat q_;

    int check_state(const Vec& x) const;
};

/// Three separate networks; parameters concatenated [r | v | q].
class MlpValueFn final : public ValueFn {
public:
    MlpValueFn(int state_dim, int action_dim, std::vector<int> hidden, Activation act, Rng& rng);

    double r(const Vec& x) const override { return r_net_.forward(x)[0]; }
    double v(const Vec& x) const override { return v_net_.forward(x)[0]; }
    double q(const Vec& x, const Vec& u) const override;

    void add_r_grad(const Vec& x, double weight, Vec& grad) const override;
    void add_v_grad(const Vec& x, double weight, Vec& grad) const override;
    void add_q_grad(const Vec& x, const Vec& u, double weight, Vec& grad) const override;

    Vec dv_dx(const Vec& x) const override;
    Vec dq_du(const Vec& x, const Vec& u) const override;

    int param_count() const override;
    Vec params() const override;
    void set_params(const Vec& p) override;
    ParamManifest manifest() const override;
    std::unique_ptr<ValueFn> clone() const override;

private:
    int state_dim_ = 0;
    int action_dim_ = 0;
    Mlp r_net_, v_net_, q_net_;

    Vec join(const Vec& x, const Vec& u) const;
};

/// Central-difference check of an analytic gradient. loss_fn returns the loss
/// value at the given parameters; grad is the analytic gradient under test.
/// For parameter vectors longer than max_coords a random subset of at least
/// 200 coordinates is checked. Returns the max relative error.
double grad_check(const std::function<double(const Vec&)>& loss_fn, const Vec& params,
                  const Vec& analytic_grad, double eps = 1e-5, int max_coords = 200,
                  std::uint64_t seed = 0);

}  // namespace mberil
