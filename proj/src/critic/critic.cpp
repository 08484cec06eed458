#include "mvgs/critic/critic.hpp"

#include <cmath>

namespace mvgs::critic {

using namespace mvgs::diff;

namespace {
bool same_pose_bits(const geom::Pose& a, const geom::Pose& b) {
    for (int i = 0; i < 9; ++i)
        if (a.rotation.m[static_cast<size_t>(i)] != b.rotation.m[static_cast<size_t>(i)]) return false;
    return a.translation.x == b.translation.x && a.translation.y == b.translation.y &&
           a.translation.z == b.translation.z;
}
}  // namespace

std::vector<geom::Pose> anchor_poses(const std::vector<geom::Pose>& poses) {
    if (poses.empty()) throw std::invalid_argument("anchor_poses: empty pose list");
    std::vector<geom::Pose> out(poses.size());
    out[0] = geom::Pose::identity();
    for (size_t k = 1; k < poses.size(); ++k)
        out[k] = same_pose_bits(poses[k], poses[0]) ? geom::Pose::identity()
                                                    : geom::relative_to(poses[0], poses[k]);
    return out;
}

Critic::Critic(CriticConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.d % 4 != 0) throw std::invalid_argument("Critic: channel dim must be a multiple of 4");
    if (cfg_.image_size % cfg_.patch != 0)
        throw std::invalid_argument("Critic: image size must be divisible by the patch size");
}

void Critic::init_params(ParamStore& s, Rng& rng) const {
    const int d = cfg_.d;
    const int pdim = cfg_.patch * cfg_.patch * 3;
    fill_normal(s.create("critic.embed.w", {pdim, d}), rng, 1.0 / std::sqrt(static_cast<double>(pdim)));
    s.create("critic.embed.b", {d});
    fill_normal(s.create("critic.pos_emb", {cfg_.patches_per_view(), d}), rng, 0.3);
    fill_normal(s.create("critic.role_emb", {2, d}), rng, 0.3);

    const double ig = 1.0 / std::sqrt(static_cast<double>(d));
    for (int l = 0; l < cfg_.depth; ++l) {
        const std::string base = "critic.blk" + std::to_string(l) + ".";
        fill_normal(s.create(base + "wq", {d, d}), rng, ig);
        fill_normal(s.create(base + "wk", {d, d}), rng, ig);
        fill_normal(s.create(base + "wv", {d, d}), rng, ig);
        fill_normal(s.create(base + "wo", {d, d}), rng, 0.1 * ig);
        fill_normal(s.create(base + "ffn.w1", {d, cfg_.ffn_hidden}), rng, ig);
        s.create(base + "ffn.b1", {cfg_.ffn_hidden});
        fill_normal(s.create(base + "ffn.w2", {cfg_.ffn_hidden, d}), rng,
                    0.1 / std::sqrt(static_cast<double>(cfg_.ffn_hidden)));
        s.create(base + "ffn.b2", {d});
    }
    fill_normal(s.create("critic.head.w1", {d, d}), rng, ig);
    s.create("critic.head.b1", {d});
    fill_normal(s.create("critic.head.w2", {d, 1}), rng, ig);
    s.create("critic.head.b2", {1});
}

Value Critic::patchify(Binder& p, const Value& image, bool is_anchor) const {
    const Shape& s = image.shape();
    if (s.size() != 3 || s[2] != 3)
        throw std::invalid_argument("patchify: need [H,W,3] image, got " + shape_str(s));
    if (s[0] % cfg_.patch != 0 || s[1] % cfg_.patch != 0)
        throw std::invalid_argument("patchify: image dims " + shape_str(s) +
                                    " not divisible by patch size " + std::to_string(cfg_.patch));
    const int h = s[0], w = s[1], ps = cfg_.patch;
    const int ph = h / ps, pw = w / ps;

    auto idx = std::make_shared<std::vector<int>>();
    idx->reserve(static_cast<size_t>(h) * w);
    for (int py = 0; py < ph; ++py)
        for (int px = 0; px < pw; ++px)
            for (int dy = 0; dy < ps; ++dy)
                for (int dx = 0; dx < ps; ++dx)
                    idx->push_back((py * ps + dy) * w + px * ps + dx);

    Value flat = reshape(image, {h * w, 3});
    Value patches = reshape(gather_rows(flat, std::shared_ptr<const std::vector<int>>(idx)),
                            {ph * pw, ps * ps * 3});
    Value tokens = add(matmul(patches, p["critic.embed.w"]), p["critic.embed.b"]);
    tokens = add(tokens, p["critic.pos_emb"]);
    Value role = reshape(gather_rows(p["critic.role_emb"], std::vector<int>{is_anchor ? 0 : 1}),
                         {cfg_.d});
    return add(tokens, role);
}

namespace {

// Block-diagonal copies of the 4x4 homogeneous matrix over channel groups.
NDArray pose_blocks(const geom::Pose& pose, int d, double t_scale, bool inverse) {
    const std::array<double, 16> h =
        inverse ? geom::pose_homogeneous_inverse(pose, t_scale) : geom::pose_homogeneous(pose, t_scale);
    NDArray m(Shape{d, d});
    for (int g = 0; g < d / 4; ++g)
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c)
                m.at2(g * 4 + r, g * 4 + c) = h[static_cast<size_t>(4 * r + c)];
    return m;
}

}  // namespace

Value Critic::score_set(Binder& p, const std::vector<Value>& images,
                        const std::vector<geom::Pose>& poses, bool allow_single_view) const {
    if (images.size() != poses.size())
        throw std::invalid_argument("score_set: image/pose count mismatch");
    if (images.empty() || (images.size() < 2 && !allow_single_view))
        throw std::invalid_argument("score_set: need at least two views for training use");

    const int k = static_cast<int>(images.size());
    Tape& tape = *images[0].tape();
    const std::vector<geom::Pose> rel = anchor_poses(poses);

    std::vector<Value> x(static_cast<size_t>(k));
    std::vector<Value> rho_t(static_cast<size_t>(k)), rho_inv_t(static_cast<size_t>(k));
    for (int v = 0; v < k; ++v) {
        x[static_cast<size_t>(v)] = patchify(p, images[static_cast<size_t>(v)], v == 0);
        // transposed so row-vector tokens multiply from the right
        rho_t[static_cast<size_t>(v)] = tape.constant(
            kernels::transpose2d(pose_blocks(rel[static_cast<size_t>(v)], cfg_.d, cfg_.rig_radius, false)));
        rho_inv_t[static_cast<size_t>(v)] = tape.constant(
            kernels::transpose2d(pose_blocks(rel[static_cast<size_t>(v)], cfg_.d, cfg_.rig_radius, true)));
    }

    const int npp = cfg_.patches_per_view();
    const double qscale = 1.0 / std::sqrt(static_cast<double>(cfg_.d));

    for (int l = 0; l < cfg_.depth; ++l) {
        const std::string base = "critic.blk" + std::to_string(l) + ".";
        std::vector<Value> qs, ks, vs;
        for (int v = 0; v < k; ++v) {
            const Value& xv = x[static_cast<size_t>(v)];
            qs.push_back(matmul(matmul(xv, p[base + "wq"]), rho_t[static_cast<size_t>(v)]));
            ks.push_back(matmul(matmul(xv, p[base + "wk"]), rho_t[static_cast<size_t>(v)]));
            vs.push_back(matmul(matmul(xv, p[base + "wv"]), rho_t[static_cast<size_t>(v)]));
        }
        Value q_all = concat_rows(qs), k_all = concat_rows(ks), v_all = concat_rows(vs);
        Value attn = softmax_rows(mul_scalar(matmul(q_all, transpose2d(k_all)), qscale));
        Value o_all = matmul(attn, v_all);
        for (int v = 0; v < k; ++v) {
            std::vector<int> rows(static_cast<size_t>(npp));
            for (int i = 0; i < npp; ++i) rows[static_cast<size_t>(i)] = v * npp + i;
            Value ov = matmul(matmul(gather_rows(o_all, rows), rho_inv_t[static_cast<size_t>(v)]),
                              p[base + "wo"]);
            Value& xv = x[static_cast<size_t>(v)];
            xv = add(xv, ov);
            Value hidden = tanh(add(matmul(xv, p[base + "ffn.w1"]), p[base + "ffn.b1"]));
            xv = add(xv, add(matmul(hidden, p[base + "ffn.w2"]), p[base + "ffn.b2"]));
        }
    }

    // order-free pooling over every token of every view
    Value all = concat_rows(x);
    Value pool = matmul(tape.constant(NDArray({1, k * npp}, 1.0 / (k * npp))), all);
    Value hidden = tanh(add(matmul(pool, p["critic.head.w1"]), p["critic.head.b1"]));
    Value logit = add(matmul(hidden, p["critic.head.w2"]), p["critic.head.b2"]);
    return reshape(logit, {1});
}

Value critic_loss(const Value& pos_logit, const Value& neg_logit) {
    return add(softplus(neg(pos_logit)), softplus(neg_logit));
}

Value mvc_loss(const Value& score) { return neg(score); }

TrainingSets build_training_sets(const decoder::Decoder& dec, Binder& dec_params,
                                 std::vector<NDArray> latents, const std::vector<geom::Pose>& poses,
                                 const geom::Intrinsics& k, const render::RenderOptions& opts,
                                 Rng& resample_rng) {
    const size_t kviews = poses.size();
    if (latents.size() != kviews || kviews < 2)
        throw std::invalid_argument("build_training_sets: need K >= 2 latents, one per view");

    // a negative view that renders the positive's latent would carry the wrong label
    for (size_t i = 1; i < latents.size(); ++i)
        while (latents[i].data == latents[0].data)
            for (auto& v : latents[i].data) v = resample_rng.normal();

    TrainingSets out;
    out.poses = poses;
    Tape& tape = dec_params.tape();

    decoder::GaussianSetValues positive = dec.generate(dec_params, tape.constant(latents[0]));
    for (size_t v = 0; v < kviews; ++v) {
        render::RenderValues rv =
            render::render(tape, positive.mu, positive.scale, positive.rot, positive.opacity,
                           positive.color, poses[v], k, opts);
        out.positive.push_back(rv.rgb);
    }
    for (size_t v = 0; v < kviews; ++v) {
        decoder::GaussianSetValues neg_set = dec.generate(dec_params, tape.constant(latents[v]));
        render::RenderValues rv = render::render(tape, neg_set.mu, neg_set.scale, neg_set.rot,
                                                 neg_set.opacity, neg_set.color, poses[v], k, opts);
        out.negative.push_back(rv.rgb);
    }
    return out;
}

}  // namespace mvgs::critic
