#include "mvgs/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "mvgs/common/optimizer.hpp"
#include "mvgs/diff/gradcheck.hpp"

namespace mvgs::metrics {

using namespace mvgs::diff;

double chamfer(const NDArray& p, const NDArray& q) {
    if (p.rows() == 0 || q.rows() == 0) throw std::invalid_argument("chamfer: empty point set");
    if (p.ndim() != 2 || p.shape[1] != 3 || q.ndim() != 2 || q.shape[1] != 3)
        throw std::invalid_argument("chamfer: point sets must be [N,3]");

    auto one_sided = [](const NDArray& a, const NDArray& b) {
        double sum = 0;
        for (int i = 0; i < a.rows(); ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (int j = 0; j < b.rows(); ++j) {
                double d2 = 0;
                for (int c = 0; c < 3; ++c) d2 += std::pow(a.at2(i, c) - b.at2(j, c), 2);
                best = std::min(best, d2);
            }
            sum += best;
        }
        return sum / a.rows();
    };
    return one_sided(p, q) + one_sided(q, p);
}

NDArray downsample(const GaussianData& g, int budget, uint64_t seed) {
    const int n = g.count();
    if (budget < 1) throw std::invalid_argument("downsample: budget must be positive");
    if (n < budget) {
        std::fprintf(stderr, "downsample: %d centers < budget %d, returning all\n", n, budget);
        budget = n;
    }
    Rng rng(seed);
    std::vector<int> chosen;
    chosen.reserve(static_cast<size_t>(budget));
    std::vector<double> best_d2(static_cast<size_t>(n), std::numeric_limits<double>::infinity());

    int current = rng.uniform_int(n);
    chosen.push_back(current);
    for (int round = 1; round < budget; ++round) {
        int far_idx = -1;
        double far_d2 = -1;
        for (int i = 0; i < n; ++i) {
            double d2 = 0;
            for (int c = 0; c < 3; ++c) d2 += std::pow(g.mu.at2(i, c) - g.mu.at2(current, c), 2);
            best_d2[static_cast<size_t>(i)] = std::min(best_d2[static_cast<size_t>(i)], d2);
            if (best_d2[static_cast<size_t>(i)] > far_d2) {
                far_d2 = best_d2[static_cast<size_t>(i)];
                far_idx = i;
            }
        }
        chosen.push_back(far_idx);
        current = far_idx;
    }

    NDArray out(Shape{budget, 3});
    for (int i = 0; i < budget; ++i)
        for (int c = 0; c < 3; ++c) out.at2(i, c) = g.mu.at2(chosen[static_cast<size_t>(i)], c);
    return out;
}

double masked_depth_error(const GaussianData& g1, const GaussianData& g2,
                          const std::vector<Pose>& rig, const Intrinsics& k,
                          const RenderOptions& opts) {
    if (rig.empty()) throw std::invalid_argument("masked_depth_error: empty rig");
    double sum = 0;
    int views = 0;
    for (const Pose& pose : rig) {
        render::RenderOutput a = render::render_raw(g1, pose, k, opts);
        render::RenderOutput b = render::render_raw(g2, pose, k, opts);
        double view_sum = 0;
        int64_t count = 0;
        for (int64_t p = 0; p < a.depth.size(); ++p) {
            if (a.alpha[p] > opts.mask_threshold && b.alpha[p] > opts.mask_threshold) {
                view_sum += std::abs(a.depth[p] - b.depth[p]);
                ++count;
            }
        }
        if (count > 0) {
            sum += view_sum / static_cast<double>(count);
            ++views;
        }
    }
    if (views == 0)
        throw std::runtime_error("masked_depth_error: no view had overlapping foreground masks");
    return sum / views;
}

FitResult fit_gaussians(const std::vector<NDArray>& images, const std::vector<Pose>& poses,
                        const Intrinsics& k, const RenderOptions& opts, const FitConfig& cfg) {
    if (images.size() != poses.size() || images.size() < 2)
        throw std::invalid_argument("fit_gaussians: need >= 2 posed images");
    Rng rng(cfg.seed);

    ParamStore store;
    NDArray& mu = store.create("fit.mu", {cfg.budget, 3});
    NDArray& log_s = store.create("fit.log_scale", {cfg.budget, 3});
    NDArray& rot = store.create("fit.rot", {cfg.budget, 4});
    store.create("fit.opacity_logit", {cfg.budget, 1});
    store.create("fit.color_logit", {cfg.budget, 3});

    // splats start inside a sphere, sized to roughly tile it
    const double s0 = std::log(std::max(0.02, 1.2 * cfg.init_radius / std::cbrt(double(cfg.budget))));
    for (int i = 0; i < cfg.budget; ++i) {
        double p[3], r2;
        do {
            for (double& v : p) v = rng.uniform(-1.0, 1.0);
            r2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
        } while (r2 > 1.0);
        for (int c = 0; c < 3; ++c) mu.at2(i, c) = cfg.init_radius * p[c];
        for (int c = 0; c < 3; ++c) log_s.at2(i, c) = s0;
        rot.at2(i, 0) = 1.0;
    }

    AdamConfig ac;
    ac.lr = cfg.lr;
    ac.beta1 = 0.9;
    ac.beta2 = 0.999;
    Adam adam(ac);

    double last_loss = 0;
    auto build = [&](Tape& t, Binder& b) {
        Value scale = clamp(exp(b["fit.log_scale"]), 1e-4, 1.0);
        Value opacity = sigmoid(b["fit.opacity_logit"]);
        Value color = sigmoid(b["fit.color_logit"]);
        Value loss;
        for (size_t v = 0; v < images.size(); ++v) {
            render::RenderValues rv =
                render::render(t, b["fit.mu"], scale, b["fit.rot"], opacity, color, poses[v], k, opts);
            Value mse = mean_all(square(sub(rv.rgb, t.constant(images[v]))));
            loss = loss.defined() ? add(loss, mse) : mse;
        }
        return mul_scalar(loss, 1.0 / static_cast<double>(images.size()));
    };

    for (int it = 0; it < cfg.iterations; ++it) {
        Tape t;
        Binder b(t, store);
        Value loss = build(t, b);
        last_loss = loss.val()[0];
        if (!std::isfinite(last_loss))
            throw diff::NumericError("fit_gaussians: non-finite loss at iteration " + std::to_string(it));
        t.backward(loss);
        adam.update(store, b.bound());
    }
    if (cfg.iterations == 0) {
        Tape t;
        Binder b(t, store);
        last_loss = build(t, b).val()[0];
    }

    FitResult out;
    out.final_loss = last_loss;
    out.splats.mu = store.get("fit.mu");
    out.splats.rot = store.get("fit.rot");
    out.splats.scale = kernels::clamp(kernels::exp(store.get("fit.log_scale")), 1e-4, 1.0);
    out.splats.opacity = kernels::sigmoid(store.get("fit.opacity_logit"));
    out.splats.color = kernels::sigmoid(store.get("fit.color_logit"));
    return out;
}

double psnr_db(const NDArray& a, const NDArray& b) {
    if (a.shape != b.shape) throw std::invalid_argument("psnr: shape mismatch");
    double mse = 0;
    for (int64_t i = 0; i < a.size(); ++i) mse += std::pow(a[i] - b[i], 2);
    mse /= static_cast<double>(a.size());
    if (mse <= 0) return 99.0;
    return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

double ssim(const NDArray& a, const NDArray& b) {
    if (a.shape != b.shape || a.ndim() != 3) throw std::invalid_argument("ssim: need matching [H,W,C]");
    const int h = a.shape[0], w = a.shape[1], ch = a.shape[2];
    const int win = 8;
    if (h < win || w < win) throw std::invalid_argument("ssim: image smaller than the 8x8 window");
    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    const double n = win * win;

    double total = 0;
    int64_t windows = 0;
    for (int c = 0; c < ch; ++c)
        for (int y = 0; y + win <= h; ++y)
            for (int x = 0; x + win <= w; ++x) {
                double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
                for (int dy = 0; dy < win; ++dy)
                    for (int dx = 0; dx < win; ++dx) {
                        const double va = a[((static_cast<int64_t>(y + dy)) * w + (x + dx)) * ch + c];
                        const double vb = b[((static_cast<int64_t>(y + dy)) * w + (x + dx)) * ch + c];
                        sa += va;
                        sb += vb;
                        saa += va * va;
                        sbb += vb * vb;
                        sab += va * vb;
                    }
                const double ma = sa / n, mb = sb / n;
                const double va = saa / n - ma * ma, vb = sbb / n - mb * mb;
                const double cov = sab / n - ma * mb;
                total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                         ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++windows;
            }
    return total / static_cast<double>(windows);
}

TextureConsistency dual_fit_consistency(const std::vector<NDArray>& images,
                                        const std::vector<Pose>& poses,
                                        const std::vector<Pose>& eval_rig, const Intrinsics& k,
                                        const RenderOptions& opts, const FitConfig& fit_cfg) {
    if (images.size() < 4)
        throw std::invalid_argument("dual_fit_consistency: need >= 4 views for disjoint subsets");
    std::vector<NDArray> img_a, img_b;
    std::vector<Pose> pose_a, pose_b;
    for (size_t i = 0; i < images.size(); ++i) {
        if (i % 2 == 0) {
            img_a.push_back(images[i]);
            pose_a.push_back(poses[i]);
        } else {
            img_b.push_back(images[i]);
            pose_b.push_back(poses[i]);
        }
    }
    FitConfig cfg_b = fit_cfg;
    cfg_b.seed = fit_cfg.seed + 1;
    FitResult g1 = fit_gaussians(img_a, pose_a, k, opts, fit_cfg);
    FitResult g2 = fit_gaussians(img_b, pose_b, k, opts, cfg_b);

    TextureConsistency out;
    for (const Pose& pose : eval_rig) {
        render::RenderOutput r1 = render::render_raw(g1.splats, pose, k, opts);
        render::RenderOutput r2 = render::render_raw(g2.splats, pose, k, opts);
        out.cpsnr_db += psnr_db(r1.rgb, r2.rgb);
        out.cssim += ssim(r1.rgb, r2.rgb);
    }
    out.cpsnr_db /= static_cast<double>(eval_rig.size());
    out.cssim /= static_cast<double>(eval_rig.size());
    return out;
}

TextureConsistency texture_consistency(const GaussianData& avatar, const std::vector<Pose>& fit_rig,
                                       const std::vector<Pose>& eval_rig, const Intrinsics& k,
                                       const RenderOptions& opts, const FitConfig& fit_cfg) {
    std::vector<NDArray> images;
    for (const Pose& pose : fit_rig) images.push_back(render::render_raw(avatar, pose, k, opts).rgb);
    return dual_fit_consistency(images, fit_rig, eval_rig, k, opts, fit_cfg);
}

namespace {

// Unit-normalized RGB + Sobel gradient features, [H,W,5].
NDArray reprojection_features(const NDArray& img) {
    const int h = img.shape[0], w = img.shape[1];
    NDArray feat(Shape{h, w, 5});
    NDArray gray(Shape{h, w});
    for (int64_t p = 0; p < static_cast<int64_t>(h) * w; ++p)
        gray[p] = (img[p * 3] + img[p * 3 + 1] + img[p * 3 + 2]) / 3.0;

    auto at = [&](int y, int x) {
        y = std::clamp(y, 0, h - 1);
        x = std::clamp(x, 0, w - 1);
        return gray[static_cast<int64_t>(y) * w + x];
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double gx = at(y - 1, x + 1) + 2 * at(y, x + 1) + at(y + 1, x + 1) -
                              at(y - 1, x - 1) - 2 * at(y, x - 1) - at(y + 1, x - 1);
            const double gy = at(y + 1, x - 1) + 2 * at(y + 1, x) + at(y + 1, x + 1) -
                              at(y - 1, x - 1) - 2 * at(y - 1, x) - at(y - 1, x + 1);
            const int64_t p = static_cast<int64_t>(y) * w + x;
            double f[5] = {img[p * 3], img[p * 3 + 1], img[p * 3 + 2], gx, gy};
            double norm = 1e-8;
            for (double v : f) norm += v * v;
            norm = std::sqrt(norm);
            for (int c = 0; c < 5; ++c) feat[p * 5 + c] = f[c] / norm;
        }
    return feat;
}

// Bilinear sample of a [H,W,C] map at pixel coordinates (texel centers +0.5).
bool sample_bilinear(const NDArray& map, double u, double v, double* out, int ch) {
    const int h = map.shape[0], w = map.shape[1];
    const double x = u - 0.5, y = v - 0.5;
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    if (x0 < 0 || y0 < 0 || x0 + 1 >= w || y0 + 1 >= h) return false;
    const double fx = x - x0, fy = y - y0;
    for (int c = 0; c < ch; ++c) {
        const auto v00 = map[(static_cast<int64_t>(y0) * w + x0) * ch + c];
        const auto v01 = map[(static_cast<int64_t>(y0) * w + x0 + 1) * ch + c];
        const auto v10 = map[(static_cast<int64_t>(y0 + 1) * w + x0) * ch + c];
        const auto v11 = map[(static_cast<int64_t>(y0 + 1) * w + x0 + 1) * ch + c];
        out[c] = v00 * (1 - fx) * (1 - fy) + v01 * fx * (1 - fy) + v10 * (1 - fx) * fy + v11 * fx * fy;
    }
    return true;
}

struct Directional {
    double mean_cos = 0;
    int64_t accepted = 0;
    NDArray map;  // source-frame inconsistency
};

Directional directional_score(const NDArray& feat_src, const NDArray& depth_src,
                              const NDArray& feat_dst, const NDArray& depth_dst,
                              const Pose& pose_src, const Pose& pose_dst, const Intrinsics& k,
                              double tol) {
    const int h = feat_src.shape[0], w = feat_src.shape[1];
    Directional out;
    out.map = NDArray(Shape{h, w}, -1.0);
    const Pose dst_inv = geom::invert(pose_dst);
    double cos_sum = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int64_t p = static_cast<int64_t>(y) * w + x;
            const double d = depth_src[p];
            if (d <= 0) continue;  // background
            const geom::Vec3 cam_src{(x + 0.5 - k.cx) / k.fx * d, (y + 0.5 - k.cy) / k.fy * d, d};
            const geom::Vec3 world = geom::matvec(pose_src.rotation, cam_src) + pose_src.translation;
            const geom::Vec3 cam_dst = geom::matvec(dst_inv.rotation, world) + dst_inv.translation;
            auto uv = geom::project(cam_dst, k);
            if (!uv) continue;
            double dst_depth;
            if (!sample_bilinear(depth_dst, (*uv)[0], (*uv)[1], &dst_depth, 1)) continue;
            if (dst_depth <= 0) continue;
            if (std::abs(cam_dst.z - dst_depth) > tol * dst_depth) continue;  // occluded
            double f[5];
            if (!sample_bilinear(feat_dst, (*uv)[0], (*uv)[1], f, 5)) continue;
            double cosv = 0, na = 1e-12, nb = 1e-12;
            for (int c = 0; c < 5; ++c) {
                cosv += feat_src[p * 5 + c] * f[c];
                na += feat_src[p * 5 + c] * feat_src[p * 5 + c];
                nb += f[c] * f[c];
            }
            cosv /= std::sqrt(na) * std::sqrt(nb);
            out.map[p] = 1.0 - cosv;
            cos_sum += cosv;
            ++out.accepted;
        }
    if (out.accepted > 0) out.mean_cos = cos_sum / static_cast<double>(out.accepted);
    return out;
}

}  // namespace

Met3rResult met3r_lite(const NDArray& img1, const NDArray& img2, const NDArray& depth1,
                       const NDArray& depth2, const Pose& pose1, const Pose& pose2,
                       const Intrinsics& k, double depth_tolerance) {
    if (img1.shape != img2.shape || img1.ndim() != 3 || img1.shape[2] != 3)
        throw std::invalid_argument("met3r_lite: images must be matching [H,W,3]");
    if (depth1.shape != Shape{img1.shape[0], img1.shape[1]} || depth2.shape != depth1.shape)
        throw std::invalid_argument("met3r_lite: depth maps must match the images");

    const NDArray f1 = reprojection_features(img1);
    const NDArray f2 = reprojection_features(img2);

    Directional d12 = directional_score(f1, depth1, f2, depth2, pose1, pose2, k, depth_tolerance);
    Directional d21 = directional_score(f2, depth2, f1, depth1, pose2, pose1, k, depth_tolerance);

    Met3rResult out;
    out.map = d12.map;
    if (d12.accepted == 0 || d21.accepted == 0) return out;  // distinguished no-overlap result
    out.has_overlap = true;
    out.score = 1.0 - 0.5 * (d12.mean_cos + d21.mean_cos);
    out.overlap_fraction =
        static_cast<double>(d12.accepted) / static_cast<double>(img1.shape[0] * img1.shape[1]);
    return out;
}

std::optional<double> met3r_self_consistency(const GaussianData& g, const std::vector<Pose>& rig,
                                             const Intrinsics& k, const RenderOptions& opts) {
    if (rig.size() < 2) throw std::invalid_argument("met3r_self_consistency: need >= 2 views");
    std::vector<render::RenderOutput> renders;
    for (const Pose& pose : rig) renders.push_back(render::render_raw(g, pose, k, opts));
    double sum = 0;
    int pairs = 0;
    for (size_t i = 0; i < rig.size(); ++i)
        for (size_t j = i + 1; j < rig.size(); ++j) {
            Met3rResult r = met3r_lite(renders[i].rgb, renders[j].rgb, renders[i].depth,
                                       renders[j].depth, rig[i], rig[j], k);
            if (r.has_overlap) {
                sum += r.score;
                ++pairs;
            }
        }
    if (pairs == 0) return std::nullopt;
    return sum / pairs;
}

std::string report_to_json(const ConsistencyReport& r) {
    nlohmann::json j;
    j["format"] = "mvgs-consistency-report";
    j["version"] = 1;
    j["metrics"]["cd"] = r.cd;
    j["metrics"]["depth_err"] = r.depth_err;
    j["metrics"]["cpsnr_db"] = r.cpsnr_db;
    j["metrics"]["cssim"] = r.cssim;
    j["metrics"]["met3r_lite"] = r.met3r;
    j["metrics"]["clpips"] = nullptr;  // requires a pretrained perceptual network
    j["conventions"]["chamfer"] = "sum of mean squared nearest-neighbor distances";
    j["conventions"]["depth"] = "alpha-weighted mean depth, masked at alpha > 0.5";
    j["conventions"]["camera"] = "camera-to-world, +Z viewing direction, y down in image";
    return j.dump(2);
}

ConsistencyReport report_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.contains("format") || j["format"] != "mvgs-consistency-report")
        throw std::runtime_error("report_from_json: wrong or missing format tag");
    if (!j.contains("version") || j["version"].get<int>() != 1)
        throw std::runtime_error("report_from_json: unsupported version");
    ConsistencyReport r;
    r.cd = j["metrics"]["cd"].get<double>();
    r.depth_err = j["metrics"]["depth_err"].get<double>();
    r.cpsnr_db = j["metrics"]["cpsnr_db"].get<double>();
    r.cssim = j["metrics"]["cssim"].get<double>();
    r.met3r = j["metrics"]["met3r_lite"].get<double>();
    return r;
}

ConsistencyReport evaluate_consistency(const GaussianData& avatar, const Intrinsics& k,
                                       const RenderOptions& opts, const ProtocolConfig& cfg) {
    Rng rng(cfg.seed);
    auto sample_rig = [&](int count) {
        std::vector<Pose> rig;
        for (int i = 0; i < count; ++i)
            rig.push_back(geom::lookat_pose(rng.uniform(-cfg.yaw_range, cfg.yaw_range),
                                            rng.uniform(-cfg.pitch_range, cfg.pitch_range), cfg.radius));
        return rig;
    };
    const std::vector<Pose> fit_rig = sample_rig(cfg.fit_views);
    const std::vector<Pose> eval_rig = sample_rig(cfg.eval_views);

    std::vector<NDArray> images;
    std::vector<Pose> pose_a, pose_b;
    std::vector<NDArray> img_a, img_b;
    for (size_t i = 0; i < fit_rig.size(); ++i) {
        images.push_back(render::render_raw(avatar, fit_rig[i], k, opts).rgb);
        if (i % 2 == 0) {
            img_a.push_back(images.back());
            pose_a.push_back(fit_rig[i]);
        } else {
            img_b.push_back(images.back());
            pose_b.push_back(fit_rig[i]);
        }
    }

    FitConfig fit_b = cfg.fit;
    fit_b.seed = cfg.fit.seed + 1;
    FitResult g1 = fit_gaussians(img_a, pose_a, k, opts, cfg.fit);
    FitResult g2 = fit_gaussians(img_b, pose_b, k, opts, fit_b);

    ConsistencyReport r;
    r.cd = chamfer(downsample(g1.splats, cfg.point_budget, cfg.seed),
                   downsample(g2.splats, cfg.point_budget, cfg.seed));
    r.depth_err = masked_depth_error(g1.splats, g2.splats, eval_rig, k, opts);

    TextureConsistency tc{0, 0};
    for (const Pose& pose : eval_rig) {
        render::RenderOutput r1 = render::render_raw(g1.splats, pose, k, opts);
        render::RenderOutput r2 = render::render_raw(g2.splats, pose, k, opts);
        tc.cpsnr_db += psnr_db(r1.rgb, r2.rgb);
        tc.cssim += ssim(r1.rgb, r2.rgb);
    }
    r.cpsnr_db = tc.cpsnr_db / static_cast<double>(eval_rig.size());
    r.cssim = tc.cssim / static_cast<double>(eval_rig.size());

    auto met = met3r_self_consistency(avatar, fit_rig, k, opts);
    if (!met) throw std::runtime_error("evaluate_consistency: no view pair overlapped");
    r.met3r = *met;
    return r;
}

}  // namespace mvgs::metrics
