#include "mvgs/decoder/decoder.hpp"

#include <cmath>

namespace mvgs::decoder {

using namespace mvgs::diff;

Decoder::Decoder(DecoderConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.levels < 1) throw std::invalid_argument("Decoder: need at least one level");
    if (cfg_.upsample < 1) throw std::invalid_argument("Decoder: upsample ratio must be >= 1");
    if (cfg_.d % 2 != 0) throw std::invalid_argument("Decoder: channel dim must be even");
}

namespace {

void init_linear(ParamStore& s, Rng& rng, const std::string& w, const std::string& b, int in,
                 int out, double gain = 1.0) {
    fill_normal(s.create(w, {in, out}), rng, gain / std::sqrt(static_cast<double>(in)));
    s.create(b, {out});
}

}  // namespace

void Decoder::init_params(ParamStore& s, Rng& rng) const {
    const int d = cfg_.d, nw = cfg_.n_w;

    init_linear(s, rng, "dec.map.w1", "dec.map.b1", cfg_.n_z, cfg_.map_hidden);
    init_linear(s, rng, "dec.map.w2", "dec.map.b2", cfg_.map_hidden, nw);

    fill_normal(s.create("dec.scaffold", {cfg_.n0(), 3}), rng, 0.3);
    init_linear(s, rng, "dec.lift.w_pe", "dec.lift.b", 6 * cfg_.freq_bands, d);
    fill_normal(s.create("dec.lift.w_lin", {3, d}), rng, 1.0 / std::sqrt(3.0));

    for (int l = 0; l < cfg_.levels; ++l) {
        for (const char* ad : {"adain1", "adain2"}) {
            // gamma starts at 1 (weights near zero, bias one), beta at 0
            fill_normal(s.create(lvl(l, std::string(ad) + ".gamma_w"), {nw, d}), rng, 0.02);
            s.create(lvl(l, std::string(ad) + ".gamma_b"), {d}).data.assign(static_cast<size_t>(d), 1.0);
            fill_normal(s.create(lvl(l, std::string(ad) + ".beta_w"), {nw, d}), rng, 0.02);
            s.create(lvl(l, std::string(ad) + ".beta_b"), {d});
        }

        const double ig = 1.0 / std::sqrt(static_cast<double>(d));
        fill_normal(s.create(lvl(l, "attn.wq"), {d, d}), rng, ig);
        fill_normal(s.create(lvl(l, "attn.wk"), {d, d}), rng, ig);
        fill_normal(s.create(lvl(l, "attn.wv"), {d, d}), rng, ig);
        fill_normal(s.create(lvl(l, "attn.wo"), {d, d}), rng, 0.1 * ig);

        fill_normal(s.create(lvl(l, "scan.w_in"), {d, d}), rng, ig);
        fill_normal(s.create(lvl(l, "scan.w_out"), {d, d}), rng, 0.1 * ig);
        s.create(lvl(l, "scan.b_out"), {d});
        for (const char* dir : {"r", "l", "d", "u"}) {
            const std::string base = lvl(l, std::string("scan.") + dir + ".");
            fill_uniform(s.create(base + "a_raw", {d}), rng, -1.0, 1.0);
            fill_normal(s.create(base + "d_skip", {d}), rng, 0.5);
            fill_normal(s.create(base + "w_b", {d, d}), rng, 0.5 * ig);
            s.create(base + "bias_b", {d});
            fill_normal(s.create(base + "w_c", {d, d}), rng, 0.5 * ig);
            s.create(base + "bias_c", {d});
        }

        int copies = 1;
        for (int i = 0; i < l; ++i) copies *= cfg_.upsample;
        fill_normal(s.create(lvl(l, "copies"), {copies, d}), rng, 0.3);

        const struct {
            const char* name;
            int out;
        } heads[5] = {{"head_mu", 3}, {"head_scale", 3}, {"head_rot", 4}, {"head_opacity", 1}, {"head_color", 3}};
        for (const auto& hd : heads) {
            init_linear(s, rng, lvl(l, std::string(hd.name) + ".w1"), lvl(l, std::string(hd.name) + ".b1"),
                        d, cfg_.head_hidden);
            init_linear(s, rng, lvl(l, std::string(hd.name) + ".w2"), lvl(l, std::string(hd.name) + ".b2"),
                        cfg_.head_hidden, hd.out, 0.3);
        }
        // identity-leaning rotations and small initial splats
        s.get(lvl(l, "head_rot.b2"))[0] = 1.0;
        for (int c = 0; c < 3; ++c) s.get(lvl(l, "head_scale.b2"))[c] = cfg_.scale_bias;
    }
}

Value Decoder::map_latent(Binder& p, const Value& z) const {
    if (z.shape() != Shape{1, cfg_.n_z})
        throw std::invalid_argument("map_latent: z must be [1," + std::to_string(cfg_.n_z) + "], got " +
                                    shape_str(z.shape()));
    Value h = tanh(add(matmul(z, p["dec.map.w1"]), p["dec.map.b1"]));
    return add(matmul(h, p["dec.map.w2"]), p["dec.map.b2"]);
}

Value Decoder::lift_scaffold(Binder& p) const {
    Value pos = p["dec.scaffold"];  // [n0, 3]
    const int n0 = cfg_.n0();
    if (pos.shape() != Shape{n0, 3})
        throw std::invalid_argument("lift_scaffold: scaffold token count must equal grid H*W");

    // [n0, 6F] multi-frequency encoding assembled column-blockwise
    std::vector<Value> bands;
    for (int f = 0; f < cfg_.freq_bands; ++f) {
        Value scaled = mul_scalar(pos, std::pow(2.0, f));
        bands.push_back(transpose2d(sin(scaled)));
        bands.push_back(transpose2d(cos(scaled)));
    }
    Value pe = transpose2d(concat_rows(bands));  // [n0, 6F]

    Value lifted = add(add(matmul(pe, p["dec.lift.w_pe"]), matmul(pos, p["dec.lift.w_lin"])),
                       p["dec.lift.b"]);
    return reshape(lifted, {cfg_.grid_h, cfg_.grid_w, cfg_.d});
}

Value Decoder::adain(Binder& p, const std::string& prefix, const Value& grid, const Value& w) const {
    const Shape& s = grid.shape();
    const int hw = s[0] * s[1], d = s[2];
    Value f2 = reshape(grid, {hw, d});
    Tape& t = *grid.tape();

    Value avg = t.constant(NDArray({1, hw}, 1.0 / hw));
    Value mean = reshape(matmul(avg, f2), {d});
    Value centered = sub(f2, mean);
    Value var = reshape(matmul(avg, square(centered)), {d});
    Value normed = div(centered, sqrt(add_scalar(var, 1e-5)));

    Value gamma = add(reshape(matmul(w, p[prefix + ".gamma_w"]), {d}), p[prefix + ".gamma_b"]);
    Value beta = add(reshape(matmul(w, p[prefix + ".beta_w"]), {d}), p[prefix + ".beta_b"]);
    return reshape(add(mul(normed, gamma), beta), s);
}

ssm::ScanMixerParams Decoder::scan_params(Binder& p, int level) const {
    ssm::ScanMixerParams sp;
    sp.w_in = p[lvl(level, "scan.w_in")];
    sp.w_out = p[lvl(level, "scan.w_out")];
    sp.bias_out = p[lvl(level, "scan.b_out")];
    const char* dirs[4] = {"r", "l", "d", "u"};
    for (int i = 0; i < 4; ++i) {
        const std::string base = lvl(level, std::string("scan.") + dirs[i] + ".");
        ssm::DirScanParams& dp = sp.dirs[static_cast<size_t>(i)];
        dp.selective = true;
        dp.a = tanh(p[base + "a_raw"]);
        dp.d_skip = p[base + "d_skip"];
        dp.w_b = p[base + "w_b"];
        dp.bias_b = p[base + "bias_b"];
        dp.w_c = p[base + "w_c"];
        dp.bias_c = p[base + "bias_c"];
    }
    return sp;
}

Value Decoder::dual_mixer(Binder& p, int level, const Value& grid, const Value& w) const {
    const Shape& s = grid.shape();
    const int hw = s[0] * s[1], d = s[2];

    // global mixer: single-head self-attention over the conditioned grid
    Value a2 = reshape(adain(p, lvl(level, "adain1"), grid, w), {hw, d});
    Value q = matmul(a2, p[lvl(level, "attn.wq")]);
    Value k = matmul(a2, p[lvl(level, "attn.wk")]);
    Value v = matmul(a2, p[lvl(level, "attn.wv")]);
    Value logits = mul_scalar(matmul(q, transpose2d(k)), 1.0 / std::sqrt(static_cast<double>(d)));
    Value attended = matmul(softmax_rows(logits), v);
    Value f1 = add(grid, reshape(matmul(attended, p[lvl(level, "attn.wo")]), s));

    if (!cfg_.use_scan) return f1;

    // local mixer: four-direction grid scan on the re-conditioned tokens
    Value a3 = adain(p, lvl(level, "adain2"), f1, w);
    return add(f1, ssm::scan_mixer(a3, scan_params(p, level)));
}

LevelValues Decoder::regress_attributes(Binder& p, int level, const Value& grid,
                                        const Value& anchors_mu) const {
    const int n0 = cfg_.n0();
    int copies = 1, prev_copies = 1;
    for (int i = 0; i < level; ++i) copies *= cfg_.upsample;
    for (int i = 0; i + 1 < level; ++i) prev_copies *= cfg_.upsample;
    const int expected_anchors = level == 0 ? n0 : n0 * prev_copies;
    if (anchors_mu.shape()[0] != expected_anchors)
        throw std::invalid_argument("regress_attributes: expected " + std::to_string(expected_anchors) +
                                    " anchors, got " + std::to_string(anchors_mu.shape()[0]));

    Value f2 = reshape(grid, {n0, cfg_.d});
    Value copy_emb = p[lvl(level, "copies")];

    auto head = [&](const std::string& name, const Value& x) {
        Value h = tanh(add(matmul(x, p[lvl(level, name + ".w1")]), p[lvl(level, name + ".b1")]));
        return add(matmul(h, p[lvl(level, name + ".w2")]), p[lvl(level, name + ".b2")]);
    };

    std::vector<Value> mu_c, sc_c, ro_c, op_c, co_c;
    for (int c = 0; c < copies; ++c) {
        Value emb = reshape(gather_rows(copy_emb, std::vector<int>{c}), {cfg_.d});
        Value x = add(f2, emb);
        mu_c.push_back(head("head_mu", x));
        sc_c.push_back(head("head_scale", x));
        ro_c.push_back(head("head_rot", x));
        op_c.push_back(head("head_opacity", x));
        co_c.push_back(head("head_color", x));
    }

    // copy-major concatenation reordered to token-major child order
    auto perm = std::make_shared<std::vector<int>>(static_cast<size_t>(n0) * copies);
    for (int tok = 0; tok < n0; ++tok)
        for (int c = 0; c < copies; ++c) (*perm)[static_cast<size_t>(tok) * copies + c] = c * n0 + tok;
    auto stack = [&](std::vector<Value>& parts) {
        return gather_rows(concat_rows(parts), std::shared_ptr<const std::vector<int>>(perm));
    };

    LevelValues out;
    out.parent.resize(static_cast<size_t>(n0) * copies);
    for (int tok = 0; tok < n0; ++tok)
        for (int c = 0; c < copies; ++c)
            out.parent[static_cast<size_t>(tok) * copies + c] =
                level == 0 ? tok : tok * prev_copies + c / cfg_.upsample;

    Value anchor = gather_rows(anchors_mu, out.parent);
    out.mu = add(anchor, mul_scalar(tanh(stack(mu_c)), cfg_.rho(level)));
    out.scale = clamp(exp(stack(sc_c)), 1e-4, 1.0);
    Value q_raw = stack(ro_c);
    Value q_norm = sqrt(add_scalar(sum_last(square(q_raw)), 1e-24));
    out.rot = div(q_raw, repeat_last(q_norm, 4));
    // clamped away from exactly 0/1 so the stored logit stays finite
    out.opacity = clamp(sigmoid(stack(op_c)), 1e-6, 1.0 - 1e-6);
    out.color = sigmoid(stack(co_c));
    return out;
}

GaussianSetValues Decoder::generate(Binder& p, const Value& z) const {
    Value w = map_latent(p, z);
    Value grid = lift_scaffold(p);

    GaussianSetValues set;
    Value anchors = p["dec.scaffold"];
    for (int l = 0; l < cfg_.levels; ++l) {
        grid = dual_mixer(p, l, grid, w);  // same w conditions every level
        LevelValues level = regress_attributes(p, l, grid, anchors);
        anchors = level.mu;
        set.levels.push_back(std::move(level));
    }

    std::vector<Value> mu, sc, ro, op, co;
    int offset = 0;
    for (const auto& l : set.levels) {
        set.level_offsets.push_back(offset);
        offset += l.mu.shape()[0];
        mu.push_back(l.mu);
        sc.push_back(l.scale);
        ro.push_back(l.rot);
        op.push_back(l.opacity);
        co.push_back(l.color);
    }
    set.mu = concat_rows(mu);
    set.scale = concat_rows(sc);
    set.rot = concat_rows(ro);
    set.opacity = concat_rows(op);
    set.color = concat_rows(co);
    return set;
}

}  // namespace mvgs::decoder
