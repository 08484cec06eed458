#include "mvgs/pipeline/dataset.hpp"

#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mvgs/pipeline/assets.hpp"
#include "mvgs/render/image_io.hpp"

namespace mvgs::pipeline {

using diff::NDArray;
using diff::Shape;
namespace fs = std::filesystem;

GaussianData make_toy_head(Rng& rng) {
    struct Splat {
        double mu[3], scale[3], color[3], opacity;
    };
    std::vector<Splat> splats;

    // skin tone and face geometry jittered per identity
    const double skin[3] = {rng.uniform(0.45, 0.85), rng.uniform(0.35, 0.65), rng.uniform(0.25, 0.55)};
    const double rx = rng.uniform(0.38, 0.5), ry = rng.uniform(0.48, 0.6), rz = rng.uniform(0.42, 0.52);

    const int shell = 56;
    for (int i = 0; i < shell; ++i) {
        // roughly uniform directions over the sphere
        double d[3], n2;
        do {
            for (double& v : d) v = rng.normal();
            n2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        } while (n2 < 1e-6);
        const double n = std::sqrt(n2);
        Splat s;
        s.mu[0] = rx * d[0] / n;
        s.mu[1] = ry * d[1] / n;
        s.mu[2] = rz * d[2] / n;
        for (int c = 0; c < 3; ++c) {
            s.scale[c] = rng.uniform(0.12, 0.22);
            s.color[c] = std::clamp(skin[c] + rng.uniform(-0.08, 0.08), 0.0, 1.0);
        }
        s.opacity = rng.uniform(0.55, 0.85);
        splats.push_back(s);
    }

    // eyes, nose, mouth on the +Z face side
    auto feature = [&](double x, double y, double z, double size, const double col[3], int count,
                       double op) {
        for (int i = 0; i < count; ++i) {
            Splat s;
            s.mu[0] = x + rng.uniform(-0.02, 0.02);
            s.mu[1] = y + rng.uniform(-0.02, 0.02);
            s.mu[2] = z + rng.uniform(-0.01, 0.01);
            for (int c = 0; c < 3; ++c) {
                s.scale[c] = size * rng.uniform(0.8, 1.2);
                s.color[c] = std::clamp(col[c] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
            }
            s.opacity = op;
            splats.push_back(s);
        }
    };
    const double eye_col[3] = {rng.uniform(0.02, 0.25), rng.uniform(0.05, 0.3), rng.uniform(0.05, 0.45)};
    const double eye_x = rng.uniform(0.14, 0.2), eye_y = rng.uniform(0.08, 0.16);
    const double face_z = rz * 0.92;
    feature(-eye_x, eye_y, face_z, 0.05, eye_col, 2, 0.95);
    feature(eye_x, eye_y, face_z, 0.05, eye_col, 2, 0.95);
    const double nose_col[3] = {skin[0] * 0.9, skin[1] * 0.8, skin[2] * 0.8};
    feature(0.0, rng.uniform(-0.08, 0.0), face_z * 1.05, 0.07, nose_col, 2, 0.9);
    const double mouth_col[3] = {rng.uniform(0.5, 0.8), rng.uniform(0.1, 0.3), rng.uniform(0.15, 0.35)};
    feature(0.0, rng.uniform(-0.28, -0.2), face_z * 0.95, 0.06, mouth_col, 3, 0.9);

    const int n = static_cast<int>(splats.size());
    GaussianData g;
    g.mu = NDArray(Shape{n, 3});
    g.scale = NDArray(Shape{n, 3});
    g.rot = NDArray(Shape{n, 4});
    g.opacity = NDArray(Shape{n, 1});
    g.color = NDArray(Shape{n, 3});
    for (int i = 0; i < n; ++i) {
        for (int c = 0; c < 3; ++c) {
            g.mu.at2(i, c) = splats[static_cast<size_t>(i)].mu[c];
            g.scale.at2(i, c) = splats[static_cast<size_t>(i)].scale[c];
            g.color.at2(i, c) = splats[static_cast<size_t>(i)].color[c];
        }
        // mild random orientation
        g.rot.at2(i, 0) = 1.0;
        for (int c = 1; c < 4; ++c) g.rot.at2(i, c) = 0.3 * rng.normal();
        g.opacity.at2(i, 0) = splats[static_cast<size_t>(i)].opacity;
    }
    return quantize_f32(g);
}

namespace {

nlohmann::json pose_to_json(const geom::Pose& p) {
    nlohmann::json j;
    for (int i = 0; i < 9; ++i) j["r"].push_back(p.rotation.m[static_cast<size_t>(i)]);
    for (int i = 0; i < 3; ++i) j["t"].push_back(p.translation[i]);
    return j;
}

geom::Pose pose_from_json(const nlohmann::json& j) {
    geom::Pose p;
    for (int i = 0; i < 9; ++i) p.rotation.m[static_cast<size_t>(i)] = j.at("r").at(i).get<double>();
    for (int i = 0; i < 3; ++i) p.translation[i] = j.at("t").at(i).get<double>();
    if (!geom::pose_valid(p)) throw render::FormatError("manifest: invalid pose");
    return p;
}

}  // namespace

DatasetManifest make_toy_dataset(const std::string& dir, int n_identities, const RigSpec& rig,
                                 int image_size, uint64_t seed, const render::RenderOptions& opts) {
    if (n_identities < 1) throw std::invalid_argument("make_toy_dataset: need at least one identity");
    fs::create_directories(dir);

    DatasetManifest m;
    m.image_size = image_size;
    m.intrinsics = rig.intrinsics(image_size);
    m.root = dir;

    Rng rng(seed);
    for (int id = 0; id < n_identities; ++id) {
        GaussianData head = make_toy_head(rng);
        IdentityEntry entry;
        entry.gt_asset = "id" + std::to_string(id) + ".ply";
        write_splat_ply(dir + "/" + entry.gt_asset, head);
        for (int v = 0; v < rig.views; ++v) {
            geom::Pose pose = rig.sample(rng);
            render::RenderOutput out = render::render_raw(head, pose, m.intrinsics, opts);
            ManifestEntry me;
            me.image = "id" + std::to_string(id) + "_v" + std::to_string(v) + ".png";
            me.pose = pose;
            render::write_png(dir + "/" + me.image, out.rgb);
            entry.views.push_back(std::move(me));
        }
        m.identities.push_back(std::move(entry));
    }
    save_manifest(dir + "/manifest.json", m);
    return m;
}

void save_manifest(const std::string& path, const DatasetManifest& m) {
    nlohmann::json j;
    j["format"] = "mvgs-dataset";
    j["version"] = 1;
    j["convention"] = "camera-to-world, +Z viewing direction, y down in image";
    j["image_size"] = m.image_size;
    j["intrinsics"] = {{"fx", m.intrinsics.fx}, {"fy", m.intrinsics.fy}, {"cx", m.intrinsics.cx},
                       {"cy", m.intrinsics.cy}, {"width", m.intrinsics.width},
                       {"height", m.intrinsics.height}};
    for (const auto& id : m.identities) {
        nlohmann::json je;
        je["gt"] = id.gt_asset;
        for (const auto& v : id.views) je["views"].push_back({{"image", v.image}, {"pose", pose_to_json(v.pose)}});
        j["identities"].push_back(std::move(je));
    }
    std::ofstream f(path);
    if (!f) throw render::FormatError("save_manifest: cannot write " + path);
    f << j.dump(2) << "\n";
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw render::FormatError("load_manifest: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw render::FormatError("load_manifest: bad JSON in " + path + ": " + e.what());
    }
    if (!j.contains("format") || j["format"] != "mvgs-dataset")
        throw render::FormatError("load_manifest: wrong or missing format tag");
    if (!j.contains("version") || j["version"].get<int>() != 1)
        throw render::FormatError("load_manifest: unsupported version");

    DatasetManifest m;
    m.root = fs::path(path).parent_path().string();
    m.image_size = j.at("image_size").get<int>();
    const auto& k = j.at("intrinsics");
    m.intrinsics = {k.at("fx").get<double>(), k.at("fy").get<double>(), k.at("cx").get<double>(),
                    k.at("cy").get<double>(), k.at("width").get<int>(), k.at("height").get<int>()};
    geom::validate(m.intrinsics);
    for (const auto& je : j.at("identities")) {
        IdentityEntry id;
        id.gt_asset = je.at("gt").get<std::string>();
        for (const auto& jv : je.at("views")) {
            ManifestEntry me;
            me.image = jv.at("image").get<std::string>();
            me.pose = pose_from_json(jv.at("pose"));
            id.views.push_back(std::move(me));
        }
        m.identities.push_back(std::move(id));
    }
    return m;
}

std::vector<PosedImage> load_images(const DatasetManifest& m) {
    std::vector<PosedImage> out;
    for (const auto& id : m.identities)
        for (const auto& v : id.views) {
            PosedImage pi;
            pi.image = render::read_png(m.root.empty() ? v.image : m.root + "/" + v.image);
            if (pi.image.shape != Shape{m.image_size, m.image_size, 3})
                throw render::FormatError("load_images: " + v.image + " has shape " +
                                          diff::shape_str(pi.image.shape) + ", expected " +
                                          std::to_string(m.image_size) + " square");
            pi.pose = v.pose;
            out.push_back(std::move(pi));
        }
    return out;
}

}  // namespace mvgs::pipeline
