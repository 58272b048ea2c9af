#include "featvis/objective.hpp"

#include "featvis/error.hpp"

#include <cmath>
#include <fmt/format.h>

namespace featvis {

namespace {

double softplus(double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }
double softplus_inverse(double r) { return r + std::log(-std::expm1(-r)); }
double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

void require_pair(const ActivationTensor& a, const ActivationTensor& target, std::span<const std::size_t> top_k) {
    require_same_shape(a.data.shape(), target.data.shape(), "activation vs target");
    validate_channels(top_k, a.data.channels());
}

void require_domain(double mdist, const RobustLossParams& p) {
    if (!(p.r > 0.0) || !std::isfinite(p.r)) throw ValidationError(fmt::format("scale r must be > 0, got {}", p.r));
    if (!(mdist >= 0.0) || !std::isfinite(mdist)) throw ValidationError(fmt::format("mdist must be >= 0, got {}", mdist));
    if (!p.negative_infinity && !std::isfinite(p.b)) throw ValidationError("shape b must be finite");
}

} // namespace

RobustLossParams RobustLossParams::trainable_default() {
    RobustLossParams p;
    p.trainable = true;
    return p;
}

RobustLossParams RobustLossParams::fixed(double r, double b) {
    RobustLossParams p;
    p.r = r;
    p.b = b;
    return p;
}

RobustLossParams RobustLossParams::welsch(double r) {
    RobustLossParams p;
    p.r = r;
    p.negative_infinity = true;
    return p;
}

double RobustLossParams::r_latent() const { return softplus_inverse(r); }

double RobustLossParams::b_latent() const {
    const double s = (b - kShapeLow) / (kShapeHigh - kShapeLow);
    return std::log(s / (1.0 - s));
}

void RobustLossParams::set_latents(double rl, double bl) {
    r = softplus(rl);
    b = kShapeLow + (kShapeHigh - kShapeLow) * sigmoid(bl);
}

AdBranch select_branch(const RobustLossParams& p) {
    if (p.negative_infinity) return AdBranch::welsch;
    if (std::abs(p.b - 2.0) < kBranchTolerance) return AdBranch::quadratic;
    if (std::abs(p.b) < kBranchTolerance) return AdBranch::log;
    return AdBranch::general;
}

double adaptive_distance(double mdist, const RobustLossParams& p, bool strict_paper) {
    require_domain(mdist, p);
    const double x = mdist / p.r;
    const double half_sq = 0.5 * x * x;
    switch (select_branch(p)) {
        case AdBranch::quadratic: return half_sq;
        case AdBranch::log: return std::log1p(half_sq);
        case AdBranch::welsch: return -std::expm1(-half_sq);
        case AdBranch::general: break;
    }
    const double a = std::abs(p.b - 2.0);
    const double scale = a / p.b;
    if (strict_paper) return scale * (std::pow(x * x / a + 1.0, p.b / 2.0) + 1.0);
    // z^(b/2) - 1 via expm1 keeps precision for small x.
    return scale * std::expm1(0.5 * p.b * std::log1p(x * x / a));
}

AdGradients ad_gradients(double mdist, const RobustLossParams& p, bool strict_paper) {
    require_domain(mdist, p);
    const double x = mdist / p.r;
    const double half_sq = 0.5 * x * x;
    double dfdx = 0.0;
    double dfdb = 0.0;
    switch (select_branch(p)) {
        case AdBranch::quadratic: dfdx = x; break;
        case AdBranch::log: dfdx = x / (half_sq + 1.0); break;
        case AdBranch::welsch: dfdx = x * std::exp(-half_sq); break;
        case AdBranch::general: {
            const double b = p.b;
            const double a = std::abs(b - 2.0);
            const double sgn = b > 2.0 ? 1.0 : -1.0;
            const double z = x * x / a + 1.0;
            const double log_z = std::log1p(x * x / a);
            const double zp = std::exp(0.5 * b * log_z);
            dfdx = x * std::exp((0.5 * b - 1.0) * log_z);
            const double d_scale = (sgn * b - a) / (b * b);
            const double dz_db = -x * x * sgn / (a * a);
            const double tail = strict_paper ? zp + 1.0 : std::expm1(0.5 * b * log_z);
            dfdb = d_scale * tail + (a / b) * zp * (0.5 * log_z + 0.5 * b * dz_db / z);
            break;
        }
    }
    AdGradients g;
    g.d_mdist = dfdx / p.r;
    g.d_r = -dfdx * x / p.r;
    g.d_b = dfdb;
    g.d_r_latent = g.d_r * sigmoid(p.r_latent());
    if (!p.negative_infinity && p.b > kShapeLow && p.b < kShapeHigh) {
        const double s = sigmoid(p.b_latent());
        g.d_b_latent = g.d_b * (kShapeHigh - kShapeLow) * s * (1.0 - s);
    }
    return g;
}

void validate_channels(std::span<const std::size_t> top_k, std::size_t channels) {
    std::vector<bool> seen(channels, false);
    for (std::size_t c : top_k) {
        if (c >= channels) throw ValidationError(fmt::format("channel index {} out of range [0, {})", c, channels));
        if (seen[c]) throw ValidationError(fmt::format("channel index {} listed twice", c));
        seen[c] = true;
    }
}

double dot_maximization(const ActivationTensor& a, const ActivationTensor& target, std::span<const std::size_t> top_k) {
    require_pair(a, target, top_k);
    double total = 0.0;
    for (std::size_t c : top_k) {
        const auto x = a.data.channel(c);
        const auto t = target.data.channel(c);
        double dot = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) dot += x[k] * t[k];
        total += dot;
    }
    return total;
}

Tensor3 dot_maximization_gradient(const ActivationTensor& target, std::span<const std::size_t> top_k) {
    validate_channels(top_k, target.data.channels());
    Tensor3 g(target.data.shape());
    for (std::size_t c : top_k) {
        const auto t = target.data.channel(c);
        std::copy(t.begin(), t.end(), g.channel(c).begin());
    }
    return g;
}

namespace {
double channel_distance(std::span<const double> x, std::span<const double> t) {
    double sq = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double d = x[k] - t[k];
        sq += d * d;
    }
    return std::sqrt(sq);
}
} // namespace

double mdist(const ActivationTensor& a, const ActivationTensor& target, std::span<const std::size_t> top_k) {
    require_pair(a, target, top_k);
    double total = 0.0;
    for (std::size_t c : top_k) total += channel_distance(a.data.channel(c), target.data.channel(c));
    return total;
}

Tensor3 mdist_gradient(const ActivationTensor& a, const ActivationTensor& target, std::span<const std::size_t> top_k) {
    require_pair(a, target, top_k);
    Tensor3 g(a.data.shape());
    for (std::size_t c : top_k) {
        const auto x = a.data.channel(c);
        const auto t = target.data.channel(c);
        const double norm = channel_distance(x, t);
        if (norm == 0.0) continue;
        auto dst = g.channel(c);
        for (std::size_t k = 0; k < x.size(); ++k) dst[k] = (x[k] - t[k]) / norm;
    }
    return g;
}

double l1_previous(const ActivationTensor& prev) {
    require_finite(prev.data, "previous-layer activation");
    double total = 0.0;
    for (double v : prev.data.values()) total += std::abs(v);
    return total;
}

Tensor3 l1_gradient(const ActivationTensor& prev) {
    Tensor3 g(prev.data.shape());
    const auto x = prev.data.values();
    auto dst = g.values();
    for (std::size_t k = 0; k < x.size(); ++k) dst[k] = x[k] > 0.0 ? 1.0 : (x[k] < 0.0 ? -1.0 : 0.0);
    return g;
}

LossBreakdown total_loss(double dm, double ad, double l1, double lambda) {
    if (!std::isfinite(dm) || !std::isfinite(ad) || !std::isfinite(l1) || !std::isfinite(lambda)) {
        throw ValidationError(fmt::format("non-finite loss term (dm={}, ad={}, l1={}, lambda={})", dm, ad, l1, lambda));
    }
    if (lambda < 0.0) throw ValidationError(fmt::format("lambda must be >= 0, got {}", lambda));
    LossBreakdown b;
    b.dm = dm;
    b.ad = ad;
    b.l1_prev = l1;
    b.lambda = lambda;
    b.total = ad - dm + lambda * l1;
    return b;
}

FacetObjective::FacetObjective(ActivationTensor target, ChannelList top_k, RobustLossParams params, double lambda,
                               bool strict_paper)
    : target_(std::move(target)),
      top_k_(std::move(top_k)),
      params_(params),
      lambda_(lambda),
      strict_paper_(strict_paper) {
    validate_channels(top_k_, target_.data.channels());
}

double FacetObjective::operator()(const ActivationTensor& prev, const ActivationTensor& curr, Tensor3& grad_prev,
                                  Tensor3& grad_curr) {
    const double dm = dot_maximization(curr, target_, top_k_);
    const double dist = mdist(curr, target_, top_k_);
    if (!std::isfinite(dm)) throw NumericError("non-finite dm", -1, "dm");
    if (!std::isfinite(dist)) throw NumericError("non-finite mdist", -1, "mdist");
    const double ad = adaptive_distance(dist, params_, strict_paper_);
    const double l1 = l1_previous(prev);
    if (!std::isfinite(l1)) throw NumericError("non-finite l1_prev", -1, "l1_prev");
    last_ = total_loss(dm, ad, l1, lambda_);
    last_.mdist = dist;
    last_ad_ = ad_gradients(dist, params_, strict_paper_);

    // d/d(curr) = AD'(mdist) * d(mdist)/d(curr) - d(DM)/d(curr)
    grad_curr = mdist_gradient(curr, target_, top_k_);
    grad_curr *= last_ad_.d_mdist;
    for (std::size_t c : top_k_) {
        auto g = grad_curr.channel(c);
        const auto t = target_.data.channel(c);
        for (std::size_t k = 0; k < g.size(); ++k) g[k] -= t[k];
    }
    grad_prev = l1_gradient(prev);
    grad_prev *= lambda_;
    return last_.total;
}

} // namespace featvis
