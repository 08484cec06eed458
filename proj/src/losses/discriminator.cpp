#include "mvgs/losses/discriminator.hpp"

#include <cmath>

namespace mvgs::losses {

using namespace mvgs::diff;

Discriminator::Discriminator(DiscriminatorConfig cfg) : cfg_(std::move(cfg)) {
    int size = cfg_.image_size;
    for (int i = 0; i < cfg_.stages; ++i) {
        if (size % 2 != 0)
            throw std::invalid_argument("Discriminator: image size must halve cleanly per stage");
        size /= 2;
    }
}

namespace {

constexpr int kKernel = 4, kStride = 2, kPad = 1;

// im2col row indices for a kxk/stride-2/pad-1 conv; -1 marks padding.
std::shared_ptr<const std::vector<int>> conv_indices(int size) {
    auto idx = std::make_shared<std::vector<int>>();
    const int out = size / 2;
    idx->reserve(static_cast<size_t>(out) * out * kKernel * kKernel);
    for (int oy = 0; oy < out; ++oy)
        for (int ox = 0; ox < out; ++ox)
            for (int dy = 0; dy < kKernel; ++dy)
                for (int dx = 0; dx < kKernel; ++dx) {
                    const int iy = oy * kStride + dy - kPad;
                    const int ix = ox * kStride + dx - kPad;
                    const bool inside = iy >= 0 && iy < size && ix >= 0 && ix < size;
                    idx->push_back(inside ? iy * size + ix : -1);
                }
    return idx;
}

}  // namespace

void Discriminator::init_params(ParamStore& s, Rng& rng) const {
    int ch = 3, size = cfg_.image_size;
    for (int i = 0; i < cfg_.stages; ++i) {
        const int out_ch = cfg_.base_channels << i;
        const int fan = kKernel * kKernel * ch;
        const std::string base = "disc.conv" + std::to_string(i) + ".";
        fill_normal(s.create(base + "w", {fan, out_ch}), rng, std::sqrt(2.0 / fan));
        s.create(base + "b", {out_ch});
        ch = out_ch;
        size /= 2;
    }
    const int flat = size * size * ch;
    fill_normal(s.create("disc.fc_img.w", {flat, cfg_.fc_dim}), rng, std::sqrt(2.0 / flat));
    s.create("disc.fc_img.b", {cfg_.fc_dim});

    fill_normal(s.create("disc.pose.w1", {12, cfg_.pose_hidden}), rng, std::sqrt(2.0 / 12.0));
    s.create("disc.pose.b1", {cfg_.pose_hidden});
    fill_normal(s.create("disc.pose.w2", {cfg_.pose_hidden, cfg_.fc_dim}), rng,
                std::sqrt(2.0 / cfg_.pose_hidden));
    s.create("disc.pose.b2", {cfg_.fc_dim});

    fill_normal(s.create("disc.head.w", {cfg_.fc_dim, 1}), rng, 1.0 / std::sqrt(cfg_.fc_dim));
    s.create("disc.head.b", {1});
}

Value Discriminator::logit(Binder& p, const Value& image, const geom::Pose& pose) const {
    const Shape& s = image.shape();
    if (s != Shape{cfg_.image_size, cfg_.image_size, 3})
        throw std::invalid_argument("Discriminator: expected [" + std::to_string(cfg_.image_size) + "," +
                                    std::to_string(cfg_.image_size) + ",3] image, got " + shape_str(s));
    Tape& tape = *image.tape();

    int ch = 3, size = cfg_.image_size;
    Value x = reshape(image, {size * size, 3});
    for (int i = 0; i < cfg_.stages; ++i) {
        const int out_ch = cfg_.base_channels << i;
        const int out = size / 2;
        const std::string base = "disc.conv" + std::to_string(i) + ".";
        Value cols = reshape(gather_rows(x, conv_indices(size)), {out * out, kKernel * kKernel * ch});
        x = leaky_relu(add(matmul(cols, p[base + "w"]), p[base + "b"]), 0.2);
        ch = out_ch;
        size = out;
    }

    Value img_feat = leaky_relu(
        add(matmul(reshape(x, {1, size * size * ch}), p["disc.fc_img.w"]), p["disc.fc_img.b"]), 0.2);

    NDArray pvec(Shape{1, 12});
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) pvec[static_cast<int64_t>(3 * r + c)] = pose.rotation(r, c);
    for (int c = 0; c < 3; ++c) pvec[9 + c] = pose.translation[c];
    Value pose_feat = leaky_relu(add(matmul(tape.constant(pvec), p["disc.pose.w1"]), p["disc.pose.b1"]), 0.2);
    pose_feat = add(matmul(pose_feat, p["disc.pose.w2"]), p["disc.pose.b2"]);

    Value fused = leaky_relu(add(img_feat, pose_feat), 0.2);
    return reshape(add(matmul(fused, p["disc.head.w"]), p["disc.head.b"]), {1});
}

Value r1_penalty(Tape& tape, const Value& logit_real, const Value& image_leaf) {
    auto grads = tape.backward_graph(logit_real);
    auto it = grads.find(image_leaf.id());
    if (it == grads.end())
        throw std::logic_error("r1_penalty: logit does not depend on the image leaf");
    return sum_all(square(it->second));
}

}  // namespace mvgs::losses
