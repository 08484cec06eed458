#include "mvgs/pipeline/train.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "mvgs/diff/gradcheck.hpp"
#include "mvgs/render/image_io.hpp"

namespace mvgs::pipeline {

using diff::NDArray;
using diff::Shape;
namespace fs = std::filesystem;

void RunConfig::normalize() {
    critic.image_size = image_size;
    disc.image_size = image_size;
    critic.rig_radius = rig.radius;
    weights.validate();
    if (steps < 0 || batch < 1 || disc_batch < 1 || critic_batch < 1)
        throw std::invalid_argument("RunConfig: bad step/batch counts");
    if (rig.views < 2) throw std::invalid_argument("RunConfig: rig needs K >= 2 views");
}

std::string run_config_to_json(const RunConfig& c) {
    nlohmann::json j;
    j["format"] = "mvgs-run-config";
    j["version"] = 1;
    j["dec"] = {{"n_z", c.dec.n_z},       {"n_w", c.dec.n_w},
                {"d", c.dec.d},           {"grid_h", c.dec.grid_h},
                {"grid_w", c.dec.grid_w}, {"levels", c.dec.levels},
                {"upsample", c.dec.upsample}, {"freq_bands", c.dec.freq_bands},
                {"rho0", c.dec.rho0},     {"head_hidden", c.dec.head_hidden},
                {"map_hidden", c.dec.map_hidden}, {"use_scan", c.dec.use_scan},
                {"scale_bias", c.dec.scale_bias}};
    j["critic"] = {{"patch", c.critic.patch}, {"d", c.critic.d}, {"depth", c.critic.depth},
                   {"ffn_hidden", c.critic.ffn_hidden}};
    j["disc"] = {{"base_channels", c.disc.base_channels}, {"stages", c.disc.stages},
                 {"fc_dim", c.disc.fc_dim}, {"pose_hidden", c.disc.pose_hidden}};
    j["weights"] = {{"mvc", c.weights.mvc}, {"knn", c.weights.knn}, {"ctr", c.weights.ctr},
                    {"r1", c.weights.r1},   {"knn_k", c.weights.knn_k}, {"tau", c.weights.tau}};
    j["rig"] = {{"views", c.rig.views}, {"yaw_range", c.rig.yaw_range},
                {"pitch_range", c.rig.pitch_range}, {"radius", c.rig.radius},
                {"fov_deg", c.rig.fov_deg}};
    j["opt"] = {{"lr", c.opt.lr}, {"beta1", c.opt.beta1}, {"beta2", c.opt.beta2},
                {"eps", c.opt.eps}, {"clip", c.opt.clip}};
    j["image_size"] = c.image_size;
    j["steps"] = c.steps;
    j["batch"] = c.batch;
    j["disc_batch"] = c.disc_batch;
    j["critic_batch"] = c.critic_batch;
    j["checkpoint_every"] = c.checkpoint_every;
    j["seed"] = c.seed;
    j["f32_runtime"] = c.f32_runtime;
    j["render_min_weight"] = c.render_min_weight;
    j["dataset"] = c.dataset;
    j["out_dir"] = c.out_dir;
    return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("run config: bad JSON: ") + e.what());
    }
    if (!j.contains("format") || j["format"] != "mvgs-run-config")
        throw std::invalid_argument("run config: wrong or missing format tag");
    if (!j.contains("version") || j["version"].get<int>() != 1)
        throw std::invalid_argument("run config: unsupported version");

    RunConfig c;
    const auto& d = j.at("dec");
    c.dec.n_z = d.at("n_z").get<int>();
    c.dec.n_w = d.at("n_w").get<int>();
    c.dec.d = d.at("d").get<int>();
    c.dec.grid_h = d.at("grid_h").get<int>();
    c.dec.grid_w = d.at("grid_w").get<int>();
    c.dec.levels = d.at("levels").get<int>();
    c.dec.upsample = d.at("upsample").get<int>();
    c.dec.freq_bands = d.at("freq_bands").get<int>();
    c.dec.rho0 = d.at("rho0").get<double>();
    c.dec.head_hidden = d.at("head_hidden").get<int>();
    c.dec.map_hidden = d.at("map_hidden").get<int>();
    c.dec.use_scan = d.at("use_scan").get<bool>();
    c.dec.scale_bias = d.at("scale_bias").get<double>();
    const auto& cr = j.at("critic");
    c.critic.patch = cr.at("patch").get<int>();
    c.critic.d = cr.at("d").get<int>();
    c.critic.depth = cr.at("depth").get<int>();
    c.critic.ffn_hidden = cr.at("ffn_hidden").get<int>();
    const auto& di = j.at("disc");
    c.disc.base_channels = di.at("base_channels").get<int>();
    c.disc.stages = di.at("stages").get<int>();
    c.disc.fc_dim = di.at("fc_dim").get<int>();
    c.disc.pose_hidden = di.at("pose_hidden").get<int>();
    const auto& w = j.at("weights");
    c.weights.mvc = w.at("mvc").get<double>();
    c.weights.knn = w.at("knn").get<double>();
    c.weights.ctr = w.at("ctr").get<double>();
    c.weights.r1 = w.at("r1").get<double>();
    c.weights.knn_k = w.at("knn_k").get<int>();
    c.weights.tau = w.at("tau").get<double>();
    const auto& r = j.at("rig");
    c.rig.views = r.at("views").get<int>();
    c.rig.yaw_range = r.at("yaw_range").get<double>();
    c.rig.pitch_range = r.at("pitch_range").get<double>();
    c.rig.radius = r.at("radius").get<double>();
    c.rig.fov_deg = r.at("fov_deg").get<double>();
    const auto& o = j.at("opt");
    c.opt.lr = o.at("lr").get<double>();
    c.opt.beta1 = o.at("beta1").get<double>();
    c.opt.beta2 = o.at("beta2").get<double>();
    c.opt.eps = o.at("eps").get<double>();
    c.opt.clip = o.at("clip").get<double>();
    c.image_size = j.at("image_size").get<int>();
    c.steps = j.at("steps").get<int>();
    c.batch = j.at("batch").get<int>();
    c.disc_batch = j.at("disc_batch").get<int>();
    c.critic_batch = j.at("critic_batch").get<int>();
    c.checkpoint_every = j.at("checkpoint_every").get<int>();
    c.seed = j.at("seed").get<uint64_t>();
    c.f32_runtime = j.at("f32_runtime").get<bool>();
    c.render_min_weight = j.at("render_min_weight").get<double>();
    c.dataset = j.at("dataset").get<std::string>();
    c.out_dir = j.at("out_dir").get<std::string>();
    c.normalize();
    return c;
}

namespace {

constexpr char kCkptMagic[4] = {'M', 'V', 'G', 'S'};
constexpr uint32_t kCkptVersion = 1;

template <typename T>
void put(std::ofstream& f, const T& v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
void get(std::ifstream& f, T& v) {
    f.read(reinterpret_cast<char*>(&v), sizeof(T));
}

void put_string(std::ofstream& f, const std::string& s) {
    put(f, static_cast<uint64_t>(s.size()));
    f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::ifstream& f) {
    uint64_t n = 0;
    get(f, n);
    std::string s(n, '\0');
    f.read(s.data(), static_cast<std::streamsize>(n));
    return s;
}

void put_array(std::ofstream& f, const NDArray& a) {
    put(f, static_cast<uint32_t>(a.shape.size()));
    for (int d : a.shape) put(f, static_cast<uint32_t>(d));
    f.write(reinterpret_cast<const char*>(a.data.data()),
            static_cast<std::streamsize>(a.data.size() * sizeof(double)));
}

NDArray get_array(std::ifstream& f) {
    uint32_t nd = 0;
    get(f, nd);
    Shape s(nd);
    for (auto& d : s) {
        uint32_t v = 0;
        get(f, v);
        d = static_cast<int>(v);
    }
    NDArray a(s);
    f.read(reinterpret_cast<char*>(a.data.data()),
           static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    return a;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw render::FormatError("save_checkpoint: cannot open " + path);
    f.write(kCkptMagic, 4);
    put(f, kCkptVersion);
    put_string(f, run_config_to_json(c.config));
    put(f, c.step);
    for (int i = 0; i < 3; ++i) put(f, c.adam_steps[i]);
    put_string(f, c.rng_state);
    put(f, static_cast<uint64_t>(c.store.names().size()));
    for (const auto& name : c.store.names()) {
        put_string(f, name);
        put_array(f, c.store.get(name));
        put_array(f, const_cast<ParamStore&>(c.store).moment1(name));
        put_array(f, const_cast<ParamStore&>(c.store).moment2(name));
    }
    if (!f) throw render::FormatError("save_checkpoint: short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw render::FormatError("load_checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kCkptMagic, 4) != 0)
        throw render::FormatError("load_checkpoint: bad magic in " + path);
    uint32_t version = 0;
    get(f, version);
    if (version != kCkptVersion)
        throw render::FormatError("load_checkpoint: unsupported version " + std::to_string(version));

    Checkpoint c;
    c.config = run_config_from_json(get_string(f));
    get(f, c.step);
    for (int i = 0; i < 3; ++i) get(f, c.adam_steps[i]);
    c.rng_state = get_string(f);
    uint64_t count = 0;
    get(f, count);
    for (uint64_t i = 0; i < count; ++i) {
        const std::string name = get_string(f);
        NDArray value = get_array(f);
        c.store.create(name, value.shape) = value;
        c.store.moment1(name) = get_array(f);
        c.store.moment2(name) = get_array(f);
    }
    if (!f) throw render::FormatError("load_checkpoint: truncated file " + path);
    return c;
}

namespace {

struct Models {
    decoder::Decoder dec;
    critic::Critic crit;
    losses::Discriminator disc;
    Models(const RunConfig& cfg) : dec(cfg.dec), crit(cfg.critic), disc(cfg.disc) {}
};

render::GaussianData generate_raw(const decoder::Decoder& dec, ParamStore& store, const NDArray& z) {
    diff::Tape tape;
    Binder b(tape, store, false);
    return dec.generate(b, tape.constant(z)).data();
}

NDArray sample_z(int n_z, Rng& rng) {
    NDArray z(Shape{1, n_z});
    for (auto& v : z.data) v = rng.normal();
    return z;
}

}  // namespace

TrainSummary train(const RunConfig& cfg_in) {
    RunConfig cfg = cfg_in;
    cfg.normalize();
    fs::create_directories(cfg.out_dir);

    const diff::Precision prev_precision = diff::precision();
    diff::set_precision(cfg.f32_runtime ? diff::Precision::f32 : diff::Precision::f64);

    Models m(cfg);
    ParamStore store;
    Rng rng(cfg.seed);
    int64_t start_step = 0;
    Adam adam_disc(cfg.opt), adam_critic(cfg.opt), adam_dec(cfg.opt);

    if (!cfg.resume.empty()) {
        Checkpoint c = load_checkpoint(cfg.resume);
        for (const auto& name : c.store.names()) {
            store.create(name, c.store.get(name).shape) = c.store.get(name);
            store.moment1(name) = c.store.moment1(name);
            store.moment2(name) = c.store.moment2(name);
        }
        start_step = c.step;
        adam_disc.set_steps(c.adam_steps[0]);
        adam_critic.set_steps(c.adam_steps[1]);
        adam_dec.set_steps(c.adam_steps[2]);
        rng.deserialize(c.rng_state);
    } else {
        m.dec.init_params(store, rng);
        m.crit.init_params(store, rng);
        m.disc.init_params(store, rng);
    }

    const DatasetManifest manifest = load_manifest(cfg.dataset);
    const std::vector<PosedImage> data = load_images(manifest);
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    if (manifest.image_size != cfg.image_size)
        throw std::invalid_argument("train: dataset resolution " + std::to_string(manifest.image_size) +
                                    " does not match the configured " + std::to_string(cfg.image_size));
    const geom::Intrinsics k = cfg.rig.intrinsics(cfg.image_size);

    render::RenderOptions ropts;
    ropts.min_weight = cfg.render_min_weight;

    auto checkpoint_path = [&](int64_t step) {
        return cfg.out_dir + "/ckpt_" + std::to_string(step) + ".mvgs";
    };
    auto write_ckpt = [&](int64_t step) {
        Checkpoint c;
        c.config = cfg;
        c.step = step;
        c.adam_steps[0] = adam_disc.steps();
        c.adam_steps[1] = adam_critic.steps();
        c.adam_steps[2] = adam_dec.steps();
        c.rng_state = rng.serialize();
        for (const auto& name : store.names()) {
            c.store.create(name, store.get(name).shape) = store.get(name);
            c.store.moment1(name) = store.moment1(name);
            c.store.moment2(name) = store.moment2(name);
        }
        const std::string path = checkpoint_path(step);
        save_checkpoint(path, c);
        return path;
    };

    TrainSummary summary;
    summary.csv_path = cfg.out_dir + "/losses.csv";
    const bool resuming = start_step > 0;
    std::ofstream csv(summary.csv_path, resuming ? std::ios::app : std::ios::trunc);
    if (!csv) throw render::FormatError("train: cannot open " + summary.csv_path);
    if (!resuming)
        csv << "step,disc_total,disc_real,disc_fake,r1,critic,gen_total,gen_adv,gen_mvc,gen_knn,gen_ctr\n";

    summary.last_checkpoint = write_ckpt(start_step);

    auto check_finite = [&](double v, const char* what, int64_t step) {
        if (!std::isfinite(v))
            throw diff::NumericError(std::string("train: non-finite ") + what + " at step " +
                                     std::to_string(step) + "; last good checkpoint: " +
                                     summary.last_checkpoint);
    };

    for (int64_t step = start_step; step < cfg.steps; ++step) {
        // (a) discriminator on real/fake pairs
        double d_total = 0, d_real = 0, d_fake = 0, d_r1 = 0;
        {
            diff::Tape tape;
            Binder disc_b(tape, store, true);
            diff::Value loss;
            for (int i = 0; i < cfg.disc_batch; ++i) {
                const PosedImage& real = data[static_cast<size_t>(rng.uniform_int(static_cast<int>(data.size())))];
                const NDArray z = sample_z(cfg.dec.n_z, rng);
                const geom::Pose fake_pose = cfg.rig.sample(rng);
                render::RenderOutput fake = render::render_raw(generate_raw(m.dec, store, z), fake_pose, k, ropts);
                losses::DiscLossParts parts = losses::discriminator_loss(
                    tape, m.disc, disc_b, real.image, real.pose, fake.rgb, fake_pose, cfg.weights.r1);
                loss = loss.defined() ? diff::add(loss, parts.total) : parts.total;
                d_real += parts.real_term.val()[0];
                d_fake += parts.fake_term.val()[0];
                d_r1 += parts.r1.val()[0];
            }
            loss = diff::mul_scalar(loss, 1.0 / cfg.disc_batch);
            d_total = loss.val()[0];
            check_finite(d_total, "discriminator loss", step);
            tape.backward(loss);
            adam_disc.update(store, disc_b.bound());
        }

        // (b) critic on positive/negative sets from the current generator
        double c_total = 0;
        {
            diff::Tape tape;
            Binder crit_b(tape, store, true);
            Binder dec_frozen(tape, store, false);
            diff::Value loss;
            for (int i = 0; i < cfg.critic_batch; ++i) {
                std::vector<geom::Pose> poses;
                for (int v = 0; v < cfg.rig.views; ++v) poses.push_back(cfg.rig.sample(rng));
                std::vector<NDArray> latents;
                for (int v = 0; v < cfg.rig.views; ++v) latents.push_back(sample_z(cfg.dec.n_z, rng));
                critic::TrainingSets sets =
                    critic::build_training_sets(m.dec, dec_frozen, latents, poses, k, ropts, rng);
                diff::Value pos = m.crit.score_set(crit_b, sets.positive, poses);
                diff::Value negv = m.crit.score_set(crit_b, sets.negative, poses);
                diff::Value pair = critic::critic_loss(pos, negv);
                loss = loss.defined() ? diff::add(loss, pair) : pair;
            }
            loss = diff::mul_scalar(loss, 1.0 / cfg.critic_batch);
            c_total = loss.val()[0];
            check_finite(c_total, "critic loss", step);
            tape.backward(loss);
            adam_critic.update(store, crit_b.bound());
        }

        // (c) generator against the full objective
        double g_total = 0, g_adv = 0, g_mvc = 0, g_knn = 0, g_ctr = 0;
        {
            diff::Tape tape;
            Binder dec_b(tape, store, true);
            Binder crit_frozen(tape, store, false);
            Binder disc_frozen(tape, store, false);
            diff::Value loss;
            for (int i = 0; i < cfg.batch; ++i) {
                std::vector<geom::Pose> poses;
                for (int v = 0; v < cfg.rig.views; ++v) poses.push_back(cfg.rig.sample(rng));
                const NDArray z = sample_z(cfg.dec.n_z, rng);
                losses::GeneratorLossParts parts =
                    losses::generator_loss(tape, m.dec, dec_b, m.crit, crit_frozen, m.disc,
                                           disc_frozen, z, poses, k, ropts, cfg.weights);
                loss = loss.defined() ? diff::add(loss, parts.total) : parts.total;
                g_adv += parts.adv.val()[0];
                g_mvc += parts.mvc.val()[0];
                g_knn += parts.knn.val()[0];
                g_ctr += parts.ctr.val()[0];
            }
            loss = diff::mul_scalar(loss, 1.0 / cfg.batch);
            g_total = loss.val()[0];
            check_finite(g_total, "generator loss", step);
            tape.backward(loss);
            adam_dec.update(store, dec_b.bound());
        }

        char line[512];
        std::snprintf(line, sizeof(line), "%" PRId64 ",%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                      step + 1, d_total, d_real / cfg.disc_batch, d_fake / cfg.disc_batch,
                      d_r1 / cfg.disc_batch, c_total, g_total, g_adv / cfg.batch, g_mvc / cfg.batch,
                      g_knn / cfg.batch, g_ctr / cfg.batch);
        csv << line;
        csv.flush();

        if ((step + 1) % cfg.checkpoint_every == 0 || step + 1 == cfg.steps)
            summary.last_checkpoint = write_ckpt(step + 1);
        summary.steps_run = step + 1 - start_step;
    }

    diff::set_precision(prev_precision);
    return summary;
}

double critic_auc(const decoder::Decoder& dec, const critic::Critic& crit, ParamStore& store,
                  int n_sets, const RigSpec& rig, int image_size, uint64_t seed,
                  const render::RenderOptions& opts) {
    Rng rng(seed);
    const geom::Intrinsics k = rig.intrinsics(image_size);
    std::vector<double> pos_scores, neg_scores;
    for (int i = 0; i < n_sets; ++i) {
        std::vector<geom::Pose> poses;
        for (int v = 0; v < rig.views; ++v) poses.push_back(rig.sample(rng));
        std::vector<NDArray> latents;
        for (int v = 0; v < rig.views; ++v) latents.push_back(sample_z(dec.config().n_z, rng));

        render::GaussianData base = generate_raw(dec, store, latents[0]);
        diff::Tape tape;
        Binder crit_b(tape, store, false);
        std::vector<diff::Value> pos_views, neg_views;
        for (int v = 0; v < rig.views; ++v) {
            pos_views.push_back(tape.constant(render::render_raw(base, poses[static_cast<size_t>(v)], k, opts).rgb));
            render::GaussianData other = v == 0 ? base : generate_raw(dec, store, latents[static_cast<size_t>(v)]);
            neg_views.push_back(tape.constant(render::render_raw(other, poses[static_cast<size_t>(v)], k, opts).rgb));
        }
        pos_scores.push_back(crit.score_set(crit_b, pos_views, poses).val()[0]);
        neg_scores.push_back(crit.score_set(crit_b, neg_views, poses).val()[0]);
    }

    double wins = 0;
    for (double p : pos_scores)
        for (double n : neg_scores) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    return wins / (static_cast<double>(pos_scores.size()) * static_cast<double>(neg_scores.size()));
}

}  // namespace mvgs::pipeline
