#include "mvgs/pipeline/assets.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mvgs/common/optimizer.hpp"
#include "mvgs/diff/gradcheck.hpp"
#include "mvgs/metrics/metrics.hpp"

namespace mvgs::pipeline {

using diff::NDArray;
using diff::Shape;
using render::FormatError;
using render::GaussianData;

namespace {

constexpr double kShC0 = 0.28209479177387814;  // degree-0 spherical harmonic basis

const char* kPlyProps[17] = {"x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2",
                             "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
                             "rot_2", "rot_3"};

float f32(double v) { return static_cast<float>(v); }

double logit(double p) {
    p = std::clamp(p, 1e-12, 1.0 - 1e-12);
    return std::log(p / (1.0 - p));
}

}  // namespace

GaussianData quantize_f32(const GaussianData& g) {
    GaussianData out = g;
    auto q = [](NDArray& a) {
        for (double& v : a.data) v = static_cast<double>(static_cast<float>(v));
    };
    q(out.mu);
    q(out.scale);
    q(out.rot);
    q(out.opacity);
    q(out.color);
    return out;
}

void write_splat_ply(const std::string& path, const GaussianData& g) {
    g.validate();
    const int n = g.count();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("write_splat_ply: cannot open " + path);

    f << "ply\nformat binary_little_endian 1.0\n";
    f << "comment mvgs splat asset v1\n";
    f << "element vertex " << n << "\n";
    for (const char* prop : kPlyProps) f << "property float " << prop << "\n";
    f << "end_header\n";

    std::vector<float> row(17);
    for (int i = 0; i < n; ++i) {
        row[0] = f32(g.mu.at2(i, 0));
        row[1] = f32(g.mu.at2(i, 1));
        row[2] = f32(g.mu.at2(i, 2));
        row[3] = row[4] = row[5] = 0.0f;
        for (int c = 0; c < 3; ++c) row[6 + static_cast<size_t>(c)] = f32((g.color.at2(i, c) - 0.5) / kShC0);
        row[9] = f32(logit(g.opacity.at2(i, 0)));
        for (int c = 0; c < 3; ++c) row[10 + static_cast<size_t>(c)] = f32(std::log(g.scale.at2(i, c)));
        for (int c = 0; c < 4; ++c) row[13 + static_cast<size_t>(c)] = f32(g.rot.at2(i, c));
        f.write(reinterpret_cast<const char*>(row.data()), 17 * sizeof(float));
    }
    if (!f) throw FormatError("write_splat_ply: short write to " + path);
}

GaussianData read_splat_ply(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("read_splat_ply: cannot open " + path);

    std::string line;
    if (!std::getline(f, line) || line != "ply")
        throw FormatError("read_splat_ply: malformed header (missing 'ply' magic) in " + path);
    if (!std::getline(f, line) || line != "format binary_little_endian 1.0")
        throw FormatError("read_splat_ply: malformed header (unsupported format line) in " + path);

    int n = -1;
    std::vector<std::string> props;
    bool version_ok = false;
    while (std::getline(f, line)) {
        if (line == "end_header") break;
        std::istringstream is(line);
        std::string word;
        is >> word;
        if (word == "comment") {
            std::string rest;
            std::getline(is, rest);
            if (rest.find("mvgs splat asset v1") != std::string::npos) version_ok = true;
            else if (rest.find("mvgs splat asset") != std::string::npos)
                throw FormatError("read_splat_ply: unsupported asset version in " + path);
        } else if (word == "element") {
            std::string kind;
            is >> kind >> n;
            if (kind != "vertex") throw FormatError("read_splat_ply: unexpected element in " + path);
        } else if (word == "property") {
            std::string type, name;
            is >> type >> name;
            if (type != "float")
                throw FormatError("read_splat_ply: attribute-count mismatch (non-float property " +
                                  name + ") in " + path);
            props.push_back(name);
        }
    }
    if (n < 0) throw FormatError("read_splat_ply: malformed header (no vertex element) in " + path);
    if (!version_ok) throw FormatError("read_splat_ply: version mismatch (missing v1 comment) in " + path);
    if (props.size() != 17)
        throw FormatError("read_splat_ply: attribute-count mismatch (" + std::to_string(props.size()) +
                          " properties, expected 17) in " + path);
    for (size_t i = 0; i < 17; ++i)
        if (props[i] != kPlyProps[i])
            throw FormatError("read_splat_ply: attribute-count mismatch (property order) in " + path);

    GaussianData g;
    g.mu = NDArray(Shape{n, 3});
    g.scale = NDArray(Shape{n, 3});
    g.rot = NDArray(Shape{n, 4});
    g.opacity = NDArray(Shape{n, 1});
    g.color = NDArray(Shape{n, 3});
    std::vector<float> row(17);
    for (int i = 0; i < n; ++i) {
        f.read(reinterpret_cast<char*>(row.data()), 17 * sizeof(float));
        if (!f) throw FormatError("read_splat_ply: truncated vertex data in " + path);
        for (int c = 0; c < 3; ++c) g.mu.at2(i, c) = row[static_cast<size_t>(c)];
        for (int c = 0; c < 3; ++c)
            g.color.at2(i, c) = static_cast<double>(row[6 + static_cast<size_t>(c)]) * kShC0 + 0.5;
        g.opacity.at2(i, 0) = 1.0 / (1.0 + std::exp(-static_cast<double>(row[9])));
        for (int c = 0; c < 3; ++c) g.scale.at2(i, c) = std::exp(static_cast<double>(row[10 + static_cast<size_t>(c)]));
        for (int c = 0; c < 4; ++c) g.rot.at2(i, c) = row[13 + static_cast<size_t>(c)];
    }
    return g;
}

AssetRecord asset_from_set(const decoder::GaussianSetValues& set, uint64_t latent_seed,
                           const std::string& model_hash) {
    AssetRecord a;
    a.splats = set.data();
    for (const auto& level : set.levels) {
        a.level_sizes.push_back(level.mu.shape()[0]);
    }
    for (size_t l = 1; l < set.levels.size(); ++l) a.anchors.push_back(set.levels[l].parent);
    a.latent_seed = latent_seed;
    a.model_hash = model_hash;
    return a;
}

void export_asset(const AssetRecord& a, const std::string& base_path) {
    write_splat_ply(base_path + ".ply", quantize_f32(a.splats));

    nlohmann::json j;
    j["format"] = "mvgs-asset";
    j["version"] = 1;
    j["ply"] = std::filesystem::path(base_path + ".ply").filename().string();
    j["provenance"]["latent_seed"] = a.latent_seed;
    j["provenance"]["model_hash"] = a.model_hash;
    j["consistency_score"] = a.consistency_score;
    j["levels"] = a.level_sizes;
    for (const auto& parents : a.anchors) j["anchors"].push_back(parents);
    for (const auto& pose : a.render_poses) {
        nlohmann::json jp;
        for (int i = 0; i < 9; ++i) jp["r"].push_back(pose.rotation.m[static_cast<size_t>(i)]);
        for (int i = 0; i < 3; ++i) jp["t"].push_back(pose.translation[i]);
        j["render_manifest"].push_back(std::move(jp));
    }
    std::ofstream f(base_path + ".json");
    if (!f) throw FormatError("export_asset: cannot write sidecar for " + base_path);
    f << j.dump(2) << "\n";
}

AssetRecord import_asset(const std::string& ply_path) {
    AssetRecord a;
    a.splats = read_splat_ply(ply_path);

    std::string side = ply_path;
    const auto dot = side.rfind(".ply");
    if (dot == std::string::npos) throw FormatError("import_asset: expected a .ply path");
    side.replace(dot, 4, ".json");
    std::ifstream f(side);
    if (!f) throw FormatError("import_asset: missing sidecar " + side);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("import_asset: bad sidecar JSON: " + std::string(e.what()));
    }
    if (!j.contains("format") || j["format"] != "mvgs-asset")
        throw FormatError("import_asset: wrong or missing format tag in " + side);
    if (!j.contains("version") || j["version"].get<int>() != 1)
        throw FormatError("import_asset: unsupported sidecar version in " + side);

    a.latent_seed = j["provenance"]["latent_seed"].get<uint64_t>();
    a.model_hash = j["provenance"]["model_hash"].get<std::string>();
    a.consistency_score = j["consistency_score"].get<double>();
    a.level_sizes = j["levels"].get<std::vector<int>>();
    if (j.contains("anchors"))
        for (const auto& parents : j["anchors"]) a.anchors.push_back(parents.get<std::vector<int>>());
    if (j.contains("render_manifest"))
        for (const auto& jp : j["render_manifest"]) {
            geom::Pose p;
            for (int i = 0; i < 9; ++i) p.rotation.m[static_cast<size_t>(i)] = jp["r"][static_cast<size_t>(i)].get<double>();
            for (int i = 0; i < 3; ++i) p.translation[i] = jp["t"][static_cast<size_t>(i)].get<double>();
            a.render_poses.push_back(p);
        }

    int total = 0;
    for (int s : a.level_sizes) total += s;
    if (total != a.splats.count())
        throw FormatError("import_asset: level sizes disagree with the vertex count in " + side);
    return a;
}

GenerateAssetsResult generate_assets(const decoder::Decoder& dec, const losses::Discriminator& disc,
                                     ParamStore& store, const std::string& model_hash,
                                     const std::string& out_dir, int count, uint64_t seed,
                                     int image_size, const AssetFilterConfig& filter,
                                     const render::RenderOptions& opts) {
    std::filesystem::create_directories(out_dir);
    const geom::Intrinsics k = filter.rig.intrinsics(image_size);
    Rng rng(seed);

    GenerateAssetsResult result;
    for (int i = 0; i < count; ++i) {
        ++result.sampled;
        const uint64_t latent_seed = rng.next_u64();
        Rng zrng(latent_seed);
        NDArray z(Shape{1, dec.config().n_z});
        for (auto& v : z.data) v = zrng.normal();

        diff::Tape tape;
        Binder b(tape, store, false);
        decoder::GaussianSetValues set = dec.generate(b, tape.constant(z));
        AssetRecord asset = asset_from_set(set, latent_seed, model_hash);

        // consistency probe over a fixed rig of self-renders
        Rng rig_rng(seed ^ 0x9e3779b97f4a7c15ull);
        std::vector<geom::Pose> probe;
        for (int v = 0; v < filter.probe_views; ++v) probe.push_back(filter.rig.sample(rig_rng));
        auto met = metrics::met3r_self_consistency(asset.splats, probe, k, opts);
        if (!met || *met > filter.consistency_threshold) {
            ++result.rejected_consistency;
            continue;
        }
        asset.consistency_score = *met;

        // frontal realism filter through the adversarial discriminator
        geom::Pose frontal = geom::lookat_pose(0, 0, filter.rig.radius);
        render::RenderOutput frontal_render = render::render_raw(asset.splats, frontal, k, opts);
        diff::Tape dt;
        Binder db(dt, store, false);
        const double logit_v = disc.logit(db, dt.constant(frontal_render.rgb), frontal).val()[0];
        if (logit_v < filter.realism_threshold) {
            ++result.rejected_realism;
            continue;
        }

        asset.render_poses = probe;
        const std::string base = out_dir + "/asset_" + std::to_string(i);
        export_asset(asset, base);
        for (size_t v = 0; v < probe.size(); ++v) {
            render::RenderOutput r = render::render_raw(asset.splats, probe[v], k, opts);
            render::write_png(base + "_view" + std::to_string(v) + ".png", r.rgb);
        }
        result.kept_paths.push_back(base + ".ply");
    }
    return result;
}

InvertResult invert(const decoder::Decoder& dec, ParamStore& store, const NDArray& target,
                    const geom::Pose& pose, const geom::Intrinsics& k, int iterations, double lr,
                    uint64_t seed, const render::RenderOptions& opts, const NDArray* init_z) {
    Rng rng(seed);
    NDArray z(Shape{1, dec.config().n_z});
    if (init_z) {
        if (init_z->shape != z.shape) throw std::invalid_argument("invert: init_z has the wrong shape");
        z = *init_z;
    } else {
        for (auto& v : z.data) v = rng.normal();
    }

    ParamStore zstore;
    zstore.create("z", z.shape) = z;
    AdamConfig ac;
    ac.lr = lr;
    ac.beta1 = 0.9;
    ac.beta2 = 0.999;
    Adam adam(ac);

    auto photometric = [&](const NDArray& zi) {
        diff::Tape t;
        Binder bp(t, store, false);
        decoder::GaussianSetValues set = dec.generate(bp, t.constant(zi));
        render::RenderValues rv =
            render::render(t, set.mu, set.scale, set.rot, set.opacity, set.color, pose, k, opts);
        return diff::mean_all(diff::square(diff::sub(rv.rgb, t.constant(target)))).val()[0];
    };

    InvertResult best;
    best.z = zstore.get("z");
    best.loss = photometric(best.z);

    for (int it = 0; it < iterations; ++it) {
        diff::Tape t;
        Binder bp(t, store, false);
        Binder bz(t, zstore, true);
        decoder::GaussianSetValues set = dec.generate(bp, bz["z"]);
        render::RenderValues rv =
            render::render(t, set.mu, set.scale, set.rot, set.opacity, set.color, pose, k, opts);
        diff::Value loss = diff::mean_all(diff::square(diff::sub(rv.rgb, t.constant(target))));
        const double lv = loss.val()[0];
        if (!std::isfinite(lv))
            throw diff::NumericError("invert: non-finite loss at iteration " + std::to_string(it));
        if (lv < best.loss) {
            best.loss = lv;
            best.z = zstore.get("z");
        }
        t.backward(loss);
        adam.update(zstore, bz.bound());
    }
    return best;
}

}  // namespace mvgs::pipeline
