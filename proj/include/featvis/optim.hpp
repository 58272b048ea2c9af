#pragma once

#include "featvis/facet.hpp"
#include "featvis/model.hpp"
#include "featvis/objective.hpp"
#include "featvis/tensor.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <vector>

namespace featvis {

/// Linear schedule evaluated literally as
///   value(t) = ((end - start) * t + start * T) / (T - 1),  0 <= t <= T-1.
/// Note value(T-1) = end + start / (T - 1), not `end`.
struct Schedule {
    double start = 0.0;
    double end = 0.0;
    int total = 2;
};

double schedule_value(const Schedule& s, int t);

/// Separable Gaussian per channel, radius ceil(3 sigma), mirror boundary
/// (d c b a | a b c d). sigma = 0 is the identity.
ImageTensor gaussian_blur(const ImageTensor& image, double sigma);
Tensor3 gaussian_blur(const Tensor3& t, double sigma);

/// Isotropic total variation with forward differences and Neumann boundary.
double total_variation(const Tensor3& u);

/// 0.5 ||u - f||^2 + weight * TV(u).
double rof_energy(const Tensor3& u, const Tensor3& f, double weight);

struct TvDenoiseOptions {
    int iterations = 20;
    /// Stop once ||u_k - u_{k-1}|| / ||u_{k-1}|| drops below this.
    double tolerance = 1e-4;
    /// Bregman penalty relative to the TV weight (penalty = factor * weight).
    double penalty_factor = 1.0;
};

/// Split Bregman solver for the ROF model, channel by channel: auxiliary
/// gradient field d, Bregman variable b, one Gauss-Seidel sweep per outer
/// iteration. `energies`, if given, receives the ROF energy after each
/// outer iteration.
Tensor3 tv_denoise(const Tensor3& f, double weight, const TvDenoiseOptions& options = {},
                   std::vector<double>* energies = nullptr);
ImageTensor tv_denoise(const ImageTensor& image, double weight, const TvDenoiseOptions& options = {});

/// Gaussian centered at ((h-1)/2, (w-1)/2), scaled so its largest sample is 1.
std::vector<double> center_mask(std::size_t height, std::size_t width, double sigma);

struct ScheduleRange {
    double start = 0.0;
    double end = 0.0;
};

struct OptimizationConfig {
    int iterations = 500;
    ScheduleRange lr{0.05, 0.005};
    ScheduleRange blur_sigma{1.0, 0.3};
    int blur_period = 4;
    ScheduleRange denoise_weight{0.1, 0.02};
    int denoise_period = 20;
    int denoise_iterations = 20;
    /// Mask sigma as a fraction of min(H, W).
    ScheduleRange mask_sigma{0.4, 0.25};
    bool use_mask = true;
    ScheduleRange lambda{1e-3, 1e-4};
    /// 0 keeps the facet's stored channel list.
    std::size_t top_k = 0;
    double momentum = 0.0;
    /// Robust-loss latents learn at this multiple of the image learning rate.
    double param_lr_scale = 0.01;
    bool train_robust_params = true;
    bool strict_paper_ad = false;
    /// Checkpoint after every n-th iteration and after the last one.
    int checkpoint_every = 50;
    std::uint64_t seed = 0;
    double clamp_low = 0.0;
    double clamp_high = 1.0;

    void validate() const;

    /// Flat JSON object with dotted keys ("lr.start", "blur.period", ...).
    nlohmann::json to_json() const;
    /// Applies every recognized dotted key found in `j` on top of `base`
    /// (defaults when omitted). Unknown keys raise ConfigError.
    static OptimizationConfig from_json(const nlohmann::json& j, OptimizationConfig base);
    static OptimizationConfig from_json(const nlohmann::json& j);
};

struct IterationRecord {
    int iteration = 0;
    LossBreakdown loss;
    double lr = 0.0;
    double blur_sigma = 0.0;
    double r = 0.0;
    double b = 0.0;
};

struct RunTrace {
    std::vector<IterationRecord> records;
    std::vector<std::pair<int, ImageTensor>> checkpoints;
    ImageTensor final_image;
    ChannelList top_k;
};

using IterationObserver = std::function<void(const IterationRecord&, const ImageTensor& image, bool checkpoint)>;

/// Activation-maximization loop starting from the facet's initial image.
/// Each iteration runs exactly one forward/backward pass of the model.
/// Throws NumericError when a loss term or the gradient turns non-finite.
RunTrace optimize(const FeatureExtractor& model, const Facet& facet, const OptimizationConfig& config,
                  const IterationObserver& observer = {});

} // namespace featvis
