#include "velsplat/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "velsplat/errors.hpp"

namespace velsplat {
namespace {

constexpr char kMagic[4] = {'V', 'S', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

enum : std::uint8_t {
    kFlagPerGaussianTracks = 1u << 0,
    kFlagVelocityEnabled = 1u << 1,
    kFlagNetEnabled = 1u << 2,
    kFlagModulatedOpacity = 1u << 3,
    kFlagHasTrainState = 1u << 4,
};

// Little-endian fixed-width fields; doubles are raw IEEE-754 bit patterns so
// round trips are exact, NaN payloads included.
struct Writer {
    std::string buf;

    void raw(const void* p, std::size_t n) { buf.append(static_cast<const char*>(p), n); }
    void u8(std::uint8_t v) { raw(&v, sizeof v); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void i64(std::int64_t v) { raw(&v, sizeof v); }
    void f64(double v) { raw(&v, sizeof v); }
    void f64s(const std::vector<double>& v) {
        u64(v.size());
        raw(v.data(), v.size() * sizeof(double));
    }
    void str(const std::string& s) {
        u64(s.size());
        raw(s.data(), s.size());
    }
};

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw ParseError("checkpoint: " + what, pos);
    }
    void raw(void* p, std::size_t n) {
        if (buf.size() - pos < n) fail("truncated");
        std::memcpy(p, buf.data() + pos, n);
        pos += n;
    }
    std::uint8_t u8() { std::uint8_t v; raw(&v, sizeof v); return v; }
    std::uint32_t u32() { std::uint32_t v; raw(&v, sizeof v); return v; }
    std::uint64_t u64() { std::uint64_t v; raw(&v, sizeof v); return v; }
    std::int64_t i64() { std::int64_t v; raw(&v, sizeof v); return v; }
    double f64() { double v; raw(&v, sizeof v); return v; }
    // Bounds the element count by the bytes actually left so a corrupt length
    // cannot trigger a huge allocation before the truncation check fires.
    std::uint64_t count(std::size_t elem_size) {
        const std::uint64_t n = u64();
        if (n > (buf.size() - pos) / elem_size) fail("length field exceeds file size");
        return n;
    }
    std::vector<double> f64s() {
        std::vector<double> v(count(sizeof(double)));
        raw(v.data(), v.size() * sizeof(double));
        return v;
    }
    std::string str() {
        std::string s(count(1), '\0');
        raw(s.data(), s.size());
        return s;
    }
};

void write_gaussian(Writer& w, const Gaussian4D& g) {
    for (int i = 0; i < 4; ++i) w.f64(g.mean4[i]);
    w.f64(g.q_l.w); w.f64(g.q_l.x); w.f64(g.q_l.y); w.f64(g.q_l.z);
    w.f64(g.q_r.w); w.f64(g.q_r.x); w.f64(g.q_r.y); w.f64(g.q_r.z);
    for (int i = 0; i < 4; ++i) w.f64(g.log_scales[i]);
    w.f64(g.opacity_logit);
    for (int i = 0; i < 3; ++i) w.f64(g.rgb[i]);
}

Gaussian4D read_gaussian(Reader& r) {
    Gaussian4D g;
    for (int i = 0; i < 4; ++i) g.mean4[i] = r.f64();
    g.q_l.w = r.f64(); g.q_l.x = r.f64(); g.q_l.y = r.f64(); g.q_l.z = r.f64();
    g.q_r.w = r.f64(); g.q_r.x = r.f64(); g.q_r.y = r.f64(); g.q_r.z = r.f64();
    for (int i = 0; i < 4; ++i) g.log_scales[i] = r.f64();
    g.opacity_logit = r.f64();
    for (int i = 0; i < 3; ++i) g.rgb[i] = r.f64();
    return g;
}

void write_model(Writer& w, const SceneModel& model) {
    w.u64(model.gaussians.size());
    for (const Gaussian4D& g : model.gaussians) write_gaussian(w, g);

    w.u64(model.tracks.size());
    for (const VelocityTrack& t : model.tracks) {
        w.f64(t.t_start);
        w.f64(t.t_end);
        w.u64(t.anchors.size());
        for (const Vec3& a : t.anchors) {
            w.f64(a.x); w.f64(a.y); w.f64(a.z);
        }
    }

    const DeformNetConfig& nc = model.net.config;
    w.u32(static_cast<std::uint32_t>(nc.enc.L_mu3));
    w.u32(static_cast<std::uint32_t>(nc.enc.L_mut));
    w.u32(static_cast<std::uint32_t>(nc.enc.L_tq));
    w.u32(static_cast<std::uint32_t>(nc.enc.L_vel));
    w.u32(static_cast<std::uint32_t>(nc.anchor_count));
    w.u32(static_cast<std::uint32_t>(nc.hidden_width));
    w.u32(static_cast<std::uint32_t>(nc.hidden_layers));
    w.u64(model.net.param_count());
    visit_params(model.net, [&](double v) { w.f64(v); });
}

SceneModel read_model(Reader& r, std::uint8_t flags) {
    SceneModel model;
    model.per_gaussian_tracks = (flags & kFlagPerGaussianTracks) != 0;
    model.velocity_enabled = (flags & kFlagVelocityEnabled) != 0;
    model.net_enabled = (flags & kFlagNetEnabled) != 0;
    model.modulated_opacity = (flags & kFlagModulatedOpacity) != 0;

    // 20 doubles per gaussian, at most 3 per anchor; conservative bound either way
    model.gaussians.resize(r.count(20 * sizeof(double)));
    for (Gaussian4D& g : model.gaussians) g = read_gaussian(r);

    model.tracks.resize(r.count(2 * sizeof(double)));
    for (VelocityTrack& t : model.tracks) {
        t.t_start = r.f64();
        t.t_end = r.f64();
        const std::uint64_t n = r.count(3 * sizeof(double));
        if (n < 2) r.fail("velocity track needs at least two anchors");
        t.anchors.resize(n);
        for (Vec3& a : t.anchors) {
            a.x = r.f64(); a.y = r.f64(); a.z = r.f64();
        }
        rebuild_prefix(t);
    }

    DeformNetConfig nc;
    nc.enc.L_mu3 = static_cast<int>(r.u32());
    nc.enc.L_mut = static_cast<int>(r.u32());
    nc.enc.L_tq = static_cast<int>(r.u32());
    nc.enc.L_vel = static_cast<int>(r.u32());
    nc.anchor_count = static_cast<int>(r.u32());
    nc.hidden_width = static_cast<int>(r.u32());
    nc.hidden_layers = static_cast<int>(r.u32());
    const std::uint64_t n_params = r.count(sizeof(double));
    if (n_params == 0) {
        model.net.config = nc; // network never materialized
    } else {
        // Predict the parameter count arithmetically before materializing the
        // layers, so a corrupt config cannot provoke a huge allocation.
        auto in_range = [](int v, int lo, int hi) { return v >= lo && v <= hi; };
        if (!in_range(nc.enc.L_mu3, 0, 64) || !in_range(nc.enc.L_mut, 0, 64) ||
            !in_range(nc.enc.L_tq, 0, 64) || !in_range(nc.enc.L_vel, 0, 64) ||
            !in_range(nc.anchor_count, 1, 4096) || !in_range(nc.hidden_width, 1, 65536) ||
            !in_range(nc.hidden_layers, 0, 64))
            r.fail("implausible network configuration");
        std::uint64_t expected = 0;
        std::uint64_t in = static_cast<std::uint64_t>(nc.input_dim());
        for (int l = 0; l < nc.hidden_layers; ++l) {
            const std::uint64_t width = static_cast<std::uint64_t>(nc.hidden_width);
            expected += in * width + width; // linear
            expected += 2 * width;          // layer-norm gain + offset
            in = width;
        }
        expected += in * DeformNetConfig::kOutputDim + DeformNetConfig::kOutputDim; // head
        if (expected != n_params) r.fail("network parameter count mismatch");
        model.net = DeformNetParams::init(nc, 0);
        visit_params(model.net, [&](double& v) { v = r.f64(); });
    }

    try {
        model.validate();
    } catch (const ConfigError& e) {
        r.fail(e.what());
    }
    return model;
}

void write_adam_config(Writer& w, const AdamConfig& c) {
    w.f64(c.beta1); w.f64(c.beta2); w.f64(c.eps);
    w.f64(c.lr_position); w.f64(c.lr_scales); w.f64(c.lr_quats);
    w.f64(c.lr_opacity); w.f64(c.lr_rgb); w.f64(c.lr_anchors);
    w.f64(c.lr_net_start); w.f64(c.lr_net_end); w.f64(c.net_weight_decay);
    w.u32(static_cast<std::uint32_t>(c.total_iterations));
}

AdamConfig read_adam_config(Reader& r) {
    AdamConfig c;
    c.beta1 = r.f64(); c.beta2 = r.f64(); c.eps = r.f64();
    c.lr_position = r.f64(); c.lr_scales = r.f64(); c.lr_quats = r.f64();
    c.lr_opacity = r.f64(); c.lr_rgb = r.f64(); c.lr_anchors = r.f64();
    c.lr_net_start = r.f64(); c.lr_net_end = r.f64(); c.net_weight_decay = r.f64();
    c.total_iterations = static_cast<int>(r.u32());
    return c;
}

void write_train_state(Writer& w, const TrainState& s) {
    write_adam_config(w, s.optim.config);
    w.i64(s.optim.step);
    w.f64s(s.optim.gauss_m);
    w.f64s(s.optim.gauss_v);
    w.f64s(s.optim.anchor_m);
    w.f64s(s.optim.anchor_v);
    w.f64s(s.optim.net_m);
    w.f64s(s.optim.net_v);

    // operator<< round-trips the engine state exactly (decimal integers)
    std::ostringstream rng;
    rng << s.rng;
    w.str(rng.str());

    w.i64(s.iteration);
    w.f64s(s.grad_accum);
    w.u64(s.grad_count.size());
    for (int c : s.grad_count) w.i64(c);
    w.u64(s.live_any.size());
    for (unsigned char b : s.live_any) w.u8(b);
    w.f64(s.loss_accum);
    w.i64(s.loss_count);
}

TrainState read_train_state(Reader& r, const SceneModel& model) {
    TrainState s;
    s.optim.config = read_adam_config(r);
    s.optim.step = static_cast<long>(r.i64());
    s.optim.gauss_m = r.f64s();
    s.optim.gauss_v = r.f64s();
    s.optim.anchor_m = r.f64s();
    s.optim.anchor_v = r.f64s();
    s.optim.net_m = r.f64s();
    s.optim.net_v = r.f64s();

    const std::size_t gauss_slots = model.gaussians.size() * OptimState::kGaussianSlots;
    std::size_t anchor_slots = 0;
    for (const VelocityTrack& t : model.tracks) anchor_slots += t.anchors.size() * 3;
    const std::size_t net_slots = model.net.param_count();
    if (s.optim.gauss_m.size() != gauss_slots || s.optim.gauss_v.size() != gauss_slots)
        r.fail("gaussian moment buffers do not match the model");
    if (s.optim.anchor_m.size() != anchor_slots || s.optim.anchor_v.size() != anchor_slots)
        r.fail("anchor moment buffers do not match the model");
    if (s.optim.net_m.size() != net_slots || s.optim.net_v.size() != net_slots)
        r.fail("network moment buffers do not match the model");

    std::istringstream rng(r.str());
    rng >> s.rng;
    if (rng.fail()) r.fail("malformed random engine state");

    s.iteration = static_cast<int>(r.i64());
    s.grad_accum = r.f64s();
    s.grad_count.resize(r.count(sizeof(std::int64_t)));
    for (int& c : s.grad_count) c = static_cast<int>(r.i64());
    s.live_any.resize(r.count(1));
    for (unsigned char& b : s.live_any) b = r.u8();
    if (s.grad_accum.size() != model.gaussians.size() ||
        s.grad_count.size() != model.gaussians.size() ||
        s.live_any.size() != model.gaussians.size())
        r.fail("densify statistics do not match the model");
    s.loss_accum = r.f64();
    s.loss_count = static_cast<int>(r.i64());
    return s;
}

} // namespace

void write_checkpoint(const std::string& path, const SceneModel& model, const TrainState* state,
                      const std::string& config_text) {
    Writer w;
    w.raw(kMagic, sizeof kMagic);
    w.u32(kVersion);
    std::uint8_t flags = 0;
    if (model.per_gaussian_tracks) flags |= kFlagPerGaussianTracks;
    if (model.velocity_enabled) flags |= kFlagVelocityEnabled;
    if (model.net_enabled) flags |= kFlagNetEnabled;
    if (model.modulated_opacity) flags |= kFlagModulatedOpacity;
    if (state) flags |= kFlagHasTrainState;
    w.u8(flags);
    w.str(config_text);
    write_model(w, model);
    if (state) write_train_state(w, *state);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    out.flush();
    if (!out) throw IoError("write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Reader r{buf};
    char magic[4];
    r.raw(magic, sizeof magic);
    if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw ParseError("checkpoint: bad magic", 0);
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw ParseError("checkpoint: unsupported version " + std::to_string(version), 4);
    const std::uint8_t flags = r.u8();

    Checkpoint ckpt;
    ckpt.config_text = r.str();
    ckpt.model = read_model(r, flags);
    ckpt.has_train_state = (flags & kFlagHasTrainState) != 0;
    if (ckpt.has_train_state) ckpt.state = read_train_state(r, ckpt.model);
    if (r.pos != buf.size()) r.fail("trailing bytes");
    return ckpt;
}

} // namespace velsplat
