#include "featvis/optim.hpp"

#include "featvis/error.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

namespace featvis {

double schedule_value(const Schedule& s, int t) {
    if (s.total < 2) throw ValidationError(fmt::format("schedule needs T >= 2, got {}", s.total));
    if (t < 0 || t > s.total - 1) throw ValidationError(fmt::format("iteration {} outside [0, {}]", t, s.total - 1));
    if (!std::isfinite(s.start) || !std::isfinite(s.end)) throw ValidationError("schedule endpoints must be finite");
    return ((s.end - s.start) * t + s.start * s.total) / (s.total - 1);
}

namespace {

std::size_t mirror(std::ptrdiff_t i, std::size_t n) {
    const auto period = static_cast<std::ptrdiff_t>(2 * n);
    std::ptrdiff_t m = i % period;
    if (m < 0) m += period;
    return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - 1 - m);
}

std::vector<double> gaussian_kernel(double sigma) {
    const auto radius = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (std::ptrdiff_t i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

} // namespace

Tensor3 gaussian_blur(const Tensor3& t, double sigma) {
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError(fmt::format("blur sigma must be >= 0, got {}", sigma));
    if (sigma == 0.0) return t;
    const auto kernel = gaussian_kernel(sigma);
    const auto radius = static_cast<std::ptrdiff_t>(kernel.size() / 2);
    const std::size_t h = t.height(), w = t.width();
    Tensor3 tmp(t.shape());
    Tensor3 out(t.shape());
    for (std::size_t c = 0; c < t.channels(); ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                    acc += kernel[static_cast<std::size_t>(k + radius)] *
                           t(c, y, mirror(static_cast<std::ptrdiff_t>(x) + k, w));
                }
                tmp(c, y, x) = acc;
            }
        }
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                double acc = 0.0;
                for (std::ptrdiff_t k = -radius; k <= radius; ++k) {
                    acc += kernel[static_cast<std::size_t>(k + radius)] *
                           tmp(c, mirror(static_cast<std::ptrdiff_t>(y) + k, h), x);
                }
                out(c, y, x) = acc;
            }
        }
    }
    return out;
}

ImageTensor gaussian_blur(const ImageTensor& image, double sigma) {
    return ImageTensor(gaussian_blur(image.data, sigma));
}

double total_variation(const Tensor3& u) {
    const std::size_t h = u.height(), w = u.width();
    double tv = 0.0;
    for (std::size_t c = 0; c < u.channels(); ++c) {
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) {
                const double dx = x + 1 < w ? u(c, y, x + 1) - u(c, y, x) : 0.0;
                const double dy = y + 1 < h ? u(c, y + 1, x) - u(c, y, x) : 0.0;
                tv += std::sqrt(dx * dx + dy * dy);
            }
        }
    }
    return tv;
}

double rof_energy(const Tensor3& u, const Tensor3& f, double weight) {
    require_same_shape(u.shape(), f.shape(), "ROF energy");
    double fid = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double d = u.raw()[i] - f.raw()[i];
        fid += d * d;
    }
    return 0.5 * fid + weight * total_variation(u);
}

Tensor3 tv_denoise(const Tensor3& f, double weight, const TvDenoiseOptions& opt, std::vector<double>* energies) {
    if (!(weight > 0.0) || !std::isfinite(weight)) {
        throw ValidationError(fmt::format("denoise weight must be > 0, got {}", weight));
    }
    const std::size_t h = f.height(), w = f.width();
    const double gamma = opt.penalty_factor * weight;
    const double threshold = weight / gamma;
    Tensor3 u = f;
    Tensor3 dx(f.shape()), dy(f.shape()), bx(f.shape()), by(f.shape());
    if (energies) energies->clear();

    for (int iter = 0; iter < opt.iterations; ++iter) {
        double change = 0.0;
        double norm = 0.0;
        for (std::size_t c = 0; c < f.channels(); ++c) {
            // u-update: one Gauss-Seidel sweep of (I + gamma D^T D) u = f + gamma D^T (d - b).
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    double rhs = f(c, y, x);
                    double neighbors = 0.0;
                    double count = 0.0;
                    if (x > 0) {
                        rhs += gamma * (dx(c, y, x - 1) - bx(c, y, x - 1));
                        neighbors += u(c, y, x - 1);
                        count += 1.0;
                    }
                    if (x + 1 < w) {
                        rhs -= gamma * (dx(c, y, x) - bx(c, y, x));
                        neighbors += u(c, y, x + 1);
                        count += 1.0;
                    }
                    if (y > 0) {
                        rhs += gamma * (dy(c, y - 1, x) - by(c, y - 1, x));
                        neighbors += u(c, y - 1, x);
                        count += 1.0;
                    }
                    if (y + 1 < h) {
                        rhs -= gamma * (dy(c, y, x) - by(c, y, x));
                        neighbors += u(c, y + 1, x);
                        count += 1.0;
                    }
                    const double next = (rhs + gamma * neighbors) / (1.0 + gamma * count);
                    const double old = u(c, y, x);
                    change += (next - old) * (next - old);
                    norm += old * old;
                    u(c, y, x) = next;
                }
            }
            // d-update (isotropic shrinkage) and Bregman update.
            for (std::size_t y = 0; y < h; ++y) {
                for (std::size_t x = 0; x < w; ++x) {
                    const double gx = x + 1 < w ? u(c, y, x + 1) - u(c, y, x) : 0.0;
                    const double gy = y + 1 < h ? u(c, y + 1, x) - u(c, y, x) : 0.0;
                    const double sx = gx + bx(c, y, x);
                    const double sy = gy + by(c, y, x);
                    const double s = std::sqrt(sx * sx + sy * sy);
                    const double scale = s > threshold ? (s - threshold) / s : 0.0;
                    dx(c, y, x) = scale * sx;
                    dy(c, y, x) = scale * sy;
                    bx(c, y, x) = sx - dx(c, y, x);
                    by(c, y, x) = sy - dy(c, y, x);
                }
            }
        }
        if (energies) energies->push_back(rof_energy(u, f, weight));
        if (norm > 0.0 && std::sqrt(change / norm) < opt.tolerance) break;
    }
    return u;
}

ImageTensor tv_denoise(const ImageTensor& image, double weight, const TvDenoiseOptions& options) {
    return ImageTensor(tv_denoise(image.data, weight, options));
}

std::vector<double> center_mask(std::size_t height, std::size_t width, double sigma) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ValidationError(fmt::format("mask sigma must be > 0, got {}", sigma));
    const double cy = (static_cast<double>(height) - 1.0) / 2.0;
    const double cx = (static_cast<double>(width) - 1.0) / 2.0;
    std::vector<double> mask(height * width);
    double peak = 0.0;
    for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
            const double ry = static_cast<double>(y) - cy;
            const double rx = static_cast<double>(x) - cx;
            const double v = std::exp(-(ry * ry + rx * rx) / (2.0 * sigma * sigma));
            mask[y * width + x] = v;
            peak = std::max(peak, v);
        }
    }
    for (double& v : mask) v /= peak;
    return mask;
}

void OptimizationConfig::validate() const {
    if (iterations < 1) throw ConfigError(fmt::format("iterations must be >= 1, got {}", iterations));
    if (blur_period < 1 || denoise_period < 1) throw ConfigError("blur and denoise periods must be >= 1");
    if (denoise_iterations < 1) throw ConfigError("denoise iterations must be >= 1");
    if (checkpoint_every < 1) throw ConfigError("checkpoint interval must be >= 1");
    for (const auto* r : {&lr, &blur_sigma, &denoise_weight, &mask_sigma, &lambda}) {
        if (!std::isfinite(r->start) || !std::isfinite(r->end)) throw ConfigError("schedule endpoints must be finite");
    }
    if (lambda.start < 0.0 || lambda.end < 0.0) throw ConfigError("lambda must be >= 0");
    if (blur_sigma.start < 0.0 || blur_sigma.end < 0.0) throw ConfigError("blur sigma must be >= 0");
    if (denoise_weight.start <= 0.0 || denoise_weight.end <= 0.0) throw ConfigError("denoise weight must be > 0");
    if (use_mask && (mask_sigma.start <= 0.0 || mask_sigma.end <= 0.0)) throw ConfigError("mask sigma must be > 0");
    if (!(clamp_low < clamp_high)) throw ConfigError("clamp range is empty");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
}

nlohmann::json OptimizationConfig::to_json() const {
    return {{"iters", iterations},
            {"lr.start", lr.start},
            {"lr.end", lr.end},
            {"blur.sigma_start", blur_sigma.start},
            {"blur.sigma_end", blur_sigma.end},
            {"blur.period", blur_period},
            {"denoise.weight_start", denoise_weight.start},
            {"denoise.weight_end", denoise_weight.end},
            {"denoise.period", denoise_period},
            {"denoise.iterations", denoise_iterations},
            {"mask.sigma_start", mask_sigma.start},
            {"mask.sigma_end", mask_sigma.end},
            {"mask.enabled", use_mask},
            {"lambda.start", lambda.start},
            {"lambda.end", lambda.end},
            {"top_k", top_k},
            {"momentum", momentum},
            {"robust.lr_scale", param_lr_scale},
            {"robust.trainable", train_robust_params},
            {"robust.strict_paper", strict_paper_ad},
            {"checkpoint_every", checkpoint_every},
            {"seed", seed},
            {"clamp.low", clamp_low},
            {"clamp.high", clamp_high}};
}

OptimizationConfig OptimizationConfig::from_json(const nlohmann::json& j) {
    return from_json(j, OptimizationConfig{});
}

OptimizationConfig OptimizationConfig::from_json(const nlohmann::json& j, OptimizationConfig c) {
    if (!j.is_object()) throw ConfigError("optimization config must be a JSON object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "iters") c.iterations = value.get<int>();
            else if (key == "lr.start") c.lr.start = value.get<double>();
            else if (key == "lr.end") c.lr.end = value.get<double>();
            else if (key == "blur.sigma_start") c.blur_sigma.start = value.get<double>();
            else if (key == "blur.sigma_end") c.blur_sigma.end = value.get<double>();
            else if (key == "blur.period") c.blur_period = value.get<int>();
            else if (key == "denoise.weight_start") c.denoise_weight.start = value.get<double>();
            else if (key == "denoise.weight_end") c.denoise_weight.end = value.get<double>();
            else if (key == "denoise.period") c.denoise_period = value.get<int>();
            else if (key == "denoise.iterations") c.denoise_iterations = value.get<int>();
            else if (key == "mask.sigma_start") c.mask_sigma.start = value.get<double>();
            else if (key == "mask.sigma_end") c.mask_sigma.end = value.get<double>();
            else if (key == "mask.enabled") c.use_mask = value.get<bool>();
            else if (key == "lambda.start") c.lambda.start = value.get<double>();
            else if (key == "lambda.end") c.lambda.end = value.get<double>();
            else if (key == "top_k") c.top_k = value.get<std::size_t>();
            else if (key == "momentum") c.momentum = value.get<double>();
            else if (key == "robust.lr_scale") c.param_lr_scale = value.get<double>();
            else if (key == "robust.trainable") c.train_robust_params = value.get<bool>();
            else if (key == "robust.strict_paper") c.strict_paper_ad = value.get<bool>();
            else if (key == "checkpoint_every") c.checkpoint_every = value.get<int>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "clamp.low") c.clamp_low = value.get<double>();
            else if (key == "clamp.high") c.clamp_high = value.get<double>();
            else throw ConfigError(fmt::format("unknown config key '{}'", key));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(fmt::format("config key '{}': {}", key, e.what()));
        }
    }
    return c;
}

namespace {

double scheduled(const ScheduleRange& r, int t, int total) {
    if (total < 2) return r.start;
    return schedule_value(Schedule{r.start, r.end, total}, t);
}

void require_finite_value(double v, int iter, const char* term) {
    if (!std::isfinite(v)) {
        throw NumericError(fmt::format("non-finite {} at iteration {}", term, iter), iter, term);
    }
}

} // namespace

RunTrace optimize(const FeatureExtractor& model, const Facet& facet, const OptimizationConfig& cfg,
                  const IterationObserver& observer) {
    cfg.validate();
    const LayerRef layer = model.resolve(facet.layer.name);
    const ImageTensor& init = facet.init_image;
    const Shape3 expected = model.output_shape(layer, init.height(), init.width());
    require_same_shape(facet.target.data.shape(), expected, "facet target vs model layer output");

    RunTrace trace;
    trace.top_k = cfg.top_k == 0 ? facet.top_k : top_k_channels(facet.target, cfg.top_k);
    if (trace.top_k.empty()) throw ConfigError("facet has no top-k channels; pass an explicit top-k");

    RobustLossParams params = cfg.train_robust_params ? RobustLossParams::trainable_default()
                                                      : RobustLossParams::fixed(1.0, 1.0);
    FacetObjective objective(facet.target, trace.top_k, params, 0.0, cfg.strict_paper_ad);
    const PairObjective pair = [&objective](const ActivationTensor& prev, const ActivationTensor& curr,
                                            Tensor3& gp, Tensor3& gc) { return objective(prev, curr, gp, gc); };

    const int total = cfg.iterations;
    const std::size_t h = init.height(), w = init.width();
    const double min_side = static_cast<double>(std::min(h, w));
    ImageTensor image = init;
    Tensor3 velocity(image.data.shape());
    double r_latent = objective.params().r_latent();
    double b_latent = objective.params().b_latent();
    trace.records.reserve(static_cast<std::size_t>(total));

    for (int t = 0; t < total; ++t) {
        const double lr = scheduled(cfg.lr, t, total);
        const double blur_sigma = scheduled(cfg.blur_sigma, t, total);
        objective.set_lambda(scheduled(cfg.lambda, t, total));

        GradientResult g;
        try {
            g = model.loss_gradient(image, layer, pair);
        } catch (const NumericError& e) {
            if (e.iteration() >= 0) throw;
            throw NumericError(fmt::format("{} at iteration {}", e.what(), t), t, e.term());
        }
        const LossBreakdown& loss = objective.last_breakdown();
        require_finite_value(loss.dm, t, "dm");
        require_finite_value(loss.ad, t, "ad");
        require_finite_value(loss.l1_prev, t, "l1_prev");
        require_finite_value(loss.total, t, "total");
        if (!g.gradient.data.all_finite()) {
            throw NumericError(fmt::format("non-finite image gradient at iteration {}", t), t, "image gradient");
        }

        if (cfg.use_mask) {
            const auto mask = center_mask(h, w, scheduled(cfg.mask_sigma, t, total) * min_side);
            for (std::size_t c = 0; c < 3; ++c) {
                auto ch = g.gradient.data.channel(c);
                for (std::size_t k = 0; k < ch.size(); ++k) ch[k] *= mask[k];
            }
        }
        auto v = velocity.values();
        auto px = image.data.values();
        const auto grad = g.gradient.data.values();
        for (std::size_t k = 0; k < px.size(); ++k) {
            v[k] = cfg.momentum * v[k] + grad[k];
            px[k] -= lr * v[k];
        }
        if ((t + 1) % cfg.blur_period == 0) image = gaussian_blur(image, blur_sigma);
        if ((t + 1) % cfg.denoise_period == 0) {
            TvDenoiseOptions opts;
            opts.iterations = cfg.denoise_iterations;
            image = tv_denoise(image, scheduled(cfg.denoise_weight, t, total), opts);
        }
        for (double& p : image.data.values()) p = std::clamp(p, cfg.clamp_low, cfg.clamp_high);

        IterationRecord rec;
        rec.iteration = t;
        rec.loss = loss;
        rec.lr = lr;
        rec.blur_sigma = blur_sigma;
        rec.r = objective.params().r;
        rec.b = objective.params().b;
        trace.records.push_back(rec);

        if (cfg.train_robust_params) {
            const AdGradients& ad = objective.last_ad_gradients();
            require_finite_value(ad.d_r_latent, t, "r gradient");
            require_finite_value(ad.d_b_latent, t, "b gradient");
            const double plr = cfg.param_lr_scale * lr;
            r_latent -= plr * ad.d_r_latent;
            b_latent -= plr * ad.d_b_latent;
            objective.params().set_latents(r_latent, b_latent);
            require_finite_value(objective.params().r, t, "r");
            require_finite_value(objective.params().b, t, "b");
            if (!(objective.params().r > 0.0)) throw NumericError(fmt::format("scale r underflowed at iteration {}", t), t, "r");
        }

        const bool checkpoint = (t + 1) % cfg.checkpoint_every == 0 || t == total - 1;
        if (checkpoint) trace.checkpoints.emplace_back(t, image);
        if (observer) observer(rec, image, checkpoint);
    }
    trace.final_image = std::move(image);
    return trace;
}

} // namespace featvis
