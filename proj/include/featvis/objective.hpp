#pragma once

#include "featvis/model.hpp"
#include "featvis/tensor.hpp"

#include <span>
#include <vector>

namespace featvis {

using ChannelList = std::vector<std::size_t>;

/// Scale `r` and shape `b` of the adaptive robust distance.
///
/// When trainable, both are optimized through latent scalars:
///   r = softplus(r_latent)                   keeps r > 0
///   b = 0.01 + 2.98 * sigmoid(b_latent)      keeps b inside (0.01, 2.99)
/// `negative_infinity` selects the Welsch limit; `b` is then ignored.
struct RobustLossParams {
    double r = 1.0;
    double b = 1.0;
    bool negative_infinity = false;
    bool trainable = false;

    /// r = 1, b = 1, trainable.
    static RobustLossParams trainable_default();
    static RobustLossParams fixed(double r, double b);
    static RobustLossParams welsch(double r);

    double r_latent() const;
    double b_latent() const;
    /// Sets r and b from latent values.
    void set_latents(double r_latent, double b_latent);
};

constexpr double kBranchTolerance = 1e-6;
constexpr double kShapeLow = 0.01;
constexpr double kShapeHigh = 2.99;

enum class AdBranch { quadratic, log, welsch, general };

AdBranch select_branch(const RobustLossParams& params);

/// `strict_paper` swaps the general branch's trailing -1 for +1, which makes
/// AD(0) = 2|b-2|/b instead of 0. Only meant for comparison runs.
double adaptive_distance(double mdist, const RobustLossParams& params, bool strict_paper = false);

struct AdGradients {
    double d_mdist = 0.0;
    double d_r = 0.0;
    double d_b = 0.0;
    double d_r_latent = 0.0;
    double d_b_latent = 0.0;
};

/// Analytic partials of the dispatched branch. The special branches have no
/// dependence on b, so d_b = 0 there.
AdGradients ad_gradients(double mdist, const RobustLossParams& params, bool strict_paper = false);

/// Sum over `top_k` channels of the flattened channel dot product <a_j, t_j>.
double dot_maximization(const ActivationTensor& a, const ActivationTensor& target, std::span<const std::size_t> top_k);

/// Sum over `top_k` channels of the Euclidean norm of (a_j - t_j).
double mdist(const ActivationTensor& a, const ActivationTensor& target, std::span<const std::size_t> top_k);

/// d(mdist)/d(a). Channels whose difference is exactly zero get a zero subgradient.
Tensor3 mdist_gradient(const ActivationTensor& a, const ActivationTensor& target, std::span<const std::size_t> top_k);

/// d(DM)/d(a): the target on the selected channels, zero elsewhere.
Tensor3 dot_maximization_gradient(const ActivationTensor& target, std::span<const std::size_t> top_k);

/// Sum of absolute values over all channels and positions.
double l1_previous(const ActivationTensor& prev);

/// sign(prev), with sign(0) = 0.
Tensor3 l1_gradient(const ActivationTensor& prev);

struct LossBreakdown {
    double dm = 0.0;
    double ad = 0.0;
    double mdist = 0.0;
    double l1_prev = 0.0;
    double lambda = 0.0;
    double total = 0.0;
};

/// total = ad - dm + lambda * l1.
LossBreakdown total_loss(double dm, double ad, double l1, double lambda);

/// Throws ValidationError unless every channel index is distinct and < channels.
void validate_channels(std::span<const std::size_t> top_k, std::size_t channels);

/// Full facet objective AD(mdist) - DM + lambda * L1(prev), usable as a
/// PairObjective. Keeps the last breakdown and AD partials for the caller.
/// Non-finite terms raise NumericError with iteration -1.
class FacetObjective {
public:
    FacetObjective(ActivationTensor target, ChannelList top_k, RobustLossParams params, double lambda,
                   bool strict_paper = false);

    double operator()(const ActivationTensor& prev, const ActivationTensor& curr, Tensor3& grad_prev,
                      Tensor3& grad_curr);

    void set_lambda(double lambda) { lambda_ = lambda; }
    RobustLossParams& params() noexcept { return params_; }
    const RobustLossParams& params() const noexcept { return params_; }
    const LossBreakdown& last_breakdown() const noexcept { return last_; }
    const AdGradients& last_ad_gradients() const noexcept { return last_ad_; }
    const ChannelList& top_k() const noexcept { return top_k_; }

private:
    ActivationTensor target_;
    ChannelList top_k_;
    RobustLossParams params_;
    double lambda_;
    bool strict_paper_;
    LossBreakdown last_{};
    AdGradients last_ad_{};
};

} // namespace featvis
