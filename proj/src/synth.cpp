#include "velsplat/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>

#include "velsplat/config.hpp"
#include "velsplat/errors.hpp"
#include "velsplat/renderer.hpp"
#include "velsplat/sym4.hpp"

namespace velsplat {
namespace {

constexpr double kPi = 3.14159265358979323846;
// Pulsing scales are clamped here so a strong modulation can never collapse
// a ground-truth Gaussian to zero volume.
constexpr double kMinPulseFactor = 0.05;

Vec3 cross(Vec3 a, Vec3 b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt(Vec3 v) { return fmt(v.x) + " " + fmt(v.y) + " " + fmt(v.z); }

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("cannot write " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path frame_path(const std::filesystem::path& dir, int camera, int time) {
    return dir / ("frame_c" + std::to_string(camera) + "_t" + std::to_string(time) + ".ppm");
}

} // namespace

Vec3 mover_position(const MoverSpec& m, double t) {
    Vec3 p = m.start + t * m.velocity;
    switch (m.kind) {
    case MoverSpec::Kind::kConstant:
        break;
    case MoverSpec::Kind::kQuadratic:
        p += (0.5 * t * t) * m.accel;
        break;
    case MoverSpec::Kind::kSinusoidal: {
        const double s = std::sin(2.0 * kPi * m.frequency * t + m.phase);
        p += s * m.amplitude;
        break;
    }
    }
    return p;
}

void SceneSpec::validate() const {
    if (width < 1 || height < 1) throw ConfigError("scene: image size must be positive");
    if (time_count < 1) throw ConfigError("scene: times must be at least 1");
    if (!(t1 > t0)) throw ConfigError("scene: t1 must exceed t0");
    if (cameras.empty()) throw ConfigError("scene: at least one camera required");
    if (movers.empty()) throw ConfigError("scene: at least one mover required");
    if (holdout_camera < -1 || holdout_camera >= static_cast<int>(cameras.size()))
        throw ConfigError("scene: holdout_camera out of range");
    for (const Camera& c : cameras) {
        if (c.width < 1 || c.height < 1) throw ConfigError("camera: image size must be positive");
        if (!(c.fx > 0.0 && c.fy > 0.0)) throw ConfigError("camera: focal length must be positive");
    }
    for (const MoverSpec& m : movers) {
        if (!(m.scales.x > 0.0 && m.scales.y > 0.0 && m.scales.z > 0.0))
            throw ConfigError("mover: scales must be positive");
        if (!(m.t_extent > 0.0)) throw ConfigError("mover: t_extent must be positive");
        if (!(m.opacity > 0.0 && m.opacity < 1.0))
            throw ConfigError("mover: opacity must be inside (0, 1)");
        if (!(std::abs(m.pulse) <= 0.9)) throw ConfigError("mover: |pulse| must be at most 0.9");
        if (!(m.frequency >= 0.0) || !(m.pulse_freq >= 0.0))
            throw ConfigError("mover: frequencies must be non-negative");
    }
}

Camera look_at_camera(Vec3 eye, Vec3 target, double fov_deg, int width, int height, Vec3 up) {
    if (width < 1 || height < 1) throw ConfigError("look_at_camera: image size must be positive");
    if (!(fov_deg > 0.0 && fov_deg < 180.0))
        throw ConfigError("look_at_camera: fov_deg must be inside (0, 180)");
    Vec3 f = target - eye;
    const double fn = norm(f);
    if (fn < 1e-12) throw ConfigError("look_at_camera: eye and target coincide");
    f = (1.0 / fn) * f;
    Vec3 x = cross(up, f);
    const double xn = norm(x);
    if (xn < 1e-9) throw ConfigError("look_at_camera: view direction parallel to up");
    x = (1.0 / xn) * x;
    const Vec3 y = cross(f, x); // unit: f and x are orthonormal

    Camera cam;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = 0.5 * width / std::tan(0.5 * fov_deg * kPi / 180.0);
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    // Rows are the camera axes: a proper rotation; image rows advance toward
    // world `up`, which every consumer in this project treats consistently.
    for (int j = 0; j < 3; ++j) {
        cam.rot(0, j) = x[j];
        cam.rot(1, j) = y[j];
        cam.rot(2, j) = f[j];
    }
    cam.trans = {-dot(x, eye), -dot(y, eye), -dot(f, eye)};
    return cam;
}

namespace {

MoverSpec parse_mover(SectionReader& r) {
    MoverSpec m;
    const std::string kind = r.get_string("kind", "constant");
    if (kind == "constant") {
        m.kind = MoverSpec::Kind::kConstant;
    } else if (kind == "quadratic") {
        m.kind = MoverSpec::Kind::kQuadratic;
    } else if (kind == "sinusoidal") {
        m.kind = MoverSpec::Kind::kSinusoidal;
    } else {
        throw ConfigError("mover: unknown kind '" + kind + "'");
    }
    m.start = r.get_vec3("start", m.start);
    m.velocity = r.get_vec3("velocity", m.velocity);
    m.accel = r.get_vec3("accel", m.accel);
    m.amplitude = r.get_vec3("amplitude", m.amplitude);
    m.frequency = r.get_double("frequency", m.frequency);
    m.phase = r.get_double("phase", m.phase);
    m.scales = r.get_vec3("scales", m.scales);
    m.q_l = r.get_quat("q_l", m.q_l);
    m.q_r = r.get_quat("q_r", m.q_r);
    m.pulse = r.get_double("pulse", m.pulse);
    m.pulse_freq = r.get_double("pulse_freq", m.pulse_freq);
    m.rgb = r.get_vec3("rgb", m.rgb);
    m.opacity = r.get_double("opacity", m.opacity);
    m.t_center = r.get_double("t_center", m.t_center);
    m.t_extent = r.get_double("t_extent", m.t_extent);
    r.finish();
    return m;
}

} // namespace

SceneSpec parse_scene_spec(const std::string& text) {
    const ConfigFile file = parse_config(text);
    SceneSpec spec;
    bool saw_scene = false;
    for (const ConfigFile::Section& section : file.sections) {
        if (section.name == "scene") {
            if (saw_scene) throw ConfigError("duplicate [scene] section");
            saw_scene = true;
            SectionReader r(section);
            spec.width = r.get_int("width", spec.width);
            spec.height = r.get_int("height", spec.height);
            spec.time_count = r.get_int("times", spec.time_count);
            spec.t0 = r.get_double("t0", spec.t0);
            spec.t1 = r.get_double("t1", spec.t1);
            spec.background = r.get_vec3("background", spec.background);
            spec.holdout_camera = r.get_int("holdout_camera", spec.holdout_camera);
            spec.seed = r.get_u64("seed", spec.seed);
            r.finish();
        } else if (section.name == "camera") {
            SectionReader r(section);
            const Vec3 eye = r.get_vec3("eye", {0.0, 0.0, -3.0});
            const Vec3 target = r.get_vec3("look_at", {0.0, 0.0, 0.0});
            const double fov = r.get_double("fov_deg", 45.0);
            r.finish();
            spec.cameras.push_back(look_at_camera(eye, target, fov, spec.width, spec.height));
        } else if (section.name == "orbit") {
            SectionReader r(section);
            const Vec3 center = r.get_vec3("center", {0.0, 0.0, 0.0});
            const double radius = r.get_double("radius", 3.0);
            const double height = r.get_double("height", 0.0);
            const double span = r.get_double("span_deg", 90.0);
            const int count = r.get_int("count", 4);
            const double fov = r.get_double("fov_deg", 45.0);
            const Vec3 target = r.get_vec3("look_at", center);
            r.finish();
            if (count < 1) throw ConfigError("orbit: count must be at least 1");
            if (!(radius > 0.0)) throw ConfigError("orbit: radius must be positive");
            for (int i = 0; i < count; ++i) {
                const double a = (count == 1 ? 0.0 : -0.5 * span + span * i / (count - 1)) *
                                 kPi / 180.0;
                const Vec3 eye = center + Vec3{radius * std::sin(a), height,
                                               -radius * std::cos(a)};
                spec.cameras.push_back(look_at_camera(eye, target, fov, spec.width, spec.height));
            }
        } else if (section.name == "mover") {
            SectionReader r(section);
            spec.movers.push_back(parse_mover(r));
        } else {
            throw ConfigError("unknown section [" + section.name + "] in scene spec");
        }
    }
    spec.validate();
    return spec;
}

namespace {

/// Ground truth at one instant: each mover becomes a 4D Gaussian whose mean
/// is chosen so the time-t slice sits exactly on the closed-form trajectory.
/// The spatial mean pre-subtracts the covariance's intrinsic velocity
/// Sigma_xt / Sigma_tt, which the slice adds back.
SceneModel pose_at(const SceneSpec& spec, double t) {
    SceneModel gt;
    gt.per_gaussian_tracks = false;
    gt.velocity_enabled = false;
    gt.net_enabled = false;
    gt.modulated_opacity = true;
    gt.tracks.push_back(VelocityTrack::zeros(2, spec.t0, spec.t1));
    for (const MoverSpec& m : spec.movers) {
        double pf = 1.0 + m.pulse * std::sin(2.0 * kPi * m.pulse_freq * t);
        pf = std::max(pf, kMinPulseFactor);
        const Vec4 s4{m.scales.x * pf, m.scales.y * pf, m.scales.z * pf, m.t_extent};
        const Sym4 cov = assemble_cov4(m.q_l, m.q_r, s4);
        const Vec3 v = (1.0 / cov.tt()) * cov.cross_column();
        const Vec3 pos = mover_position(m, t) - (t - m.t_center) * v;

        Gaussian4D g;
        g.mean4 = {pos.x, pos.y, pos.z, m.t_center};
        g.q_l = normalized(m.q_l);
        g.q_r = normalized(m.q_r);
        g.log_scales = {std::log(s4.x), std::log(s4.y), std::log(s4.z), std::log(s4.w)};
        const double op = std::clamp(m.opacity, 1e-4, 1.0 - 1e-4);
        g.opacity_logit = std::log(op / (1.0 - op));
        g.rgb = m.rgb;
        gt.gaussians.push_back(g);
    }
    return gt;
}

} // namespace

void SynthResult::validate() const {
    data.validate();
    const std::size_t n_t = data.timestamps.size();
    const std::size_t n_c = data.cameras.size();
    for (const auto& traj : oracle)
        if (traj.size() != n_t)
            throw ConfigError("oracle trajectory length does not match the timestamps");
    if (holdout_camera < -1 || holdout_camera >= static_cast<int>(n_c))
        throw ConfigError("holdout_camera out of range");
    if (data.items.size() + data.holdout.size() != n_c * n_t)
        throw ConfigError("dataset must cover every (camera, time) pair exactly once");
    std::vector<char> seen(n_c * n_t, 0);
    auto mark = [&](const Dataset::Item& item, bool is_holdout) {
        if (is_holdout != (item.camera == holdout_camera))
            throw ConfigError("holdout split does not match holdout_camera");
        char& flag = seen[static_cast<std::size_t>(item.camera) * n_t + item.time];
        if (flag) throw ConfigError("duplicate (camera, time) pair in dataset");
        flag = 1;
    };
    for (const Dataset::Item& item : data.items) mark(item, false);
    for (const Dataset::Item& item : data.holdout) mark(item, true);
}

SynthResult synth_scene(const SceneSpec& spec) {
    spec.validate();
    SynthResult out;
    out.holdout_camera = spec.holdout_camera;
    Dataset& data = out.data;
    data.cameras = spec.cameras;
    data.background = spec.background;
    const int n = spec.time_count;
    for (int i = 0; i < n; ++i)
        data.timestamps.push_back(n == 1 ? 0.5 * (spec.t0 + spec.t1)
                                         : spec.t0 + (spec.t1 - spec.t0) * i / (n - 1));

    out.oracle.resize(spec.movers.size());
    for (std::size_t m = 0; m < spec.movers.size(); ++m) {
        out.oracle[m].reserve(data.timestamps.size());
        for (const double t : data.timestamps)
            out.oracle[m].push_back(mover_position(spec.movers[m], t));
    }

    Vec3 mn = out.oracle[0][0];
    Vec3 mx = mn;
    for (const auto& traj : out.oracle) {
        for (const Vec3 p : traj) {
            for (int k = 0; k < 3; ++k) {
                mn[k] = std::min(mn[k], p[k]);
                mx[k] = std::max(mx[k], p[k]);
            }
        }
    }
    double margin = 0.0;
    for (const MoverSpec& m : spec.movers) {
        const double s = std::max({m.scales.x, m.scales.y, m.scales.z});
        margin = std::max(margin, s * (1.0 + std::abs(m.pulse)));
    }
    margin *= 3.0;
    out.scene_min = mn - Vec3{margin, margin, margin};
    out.scene_max = mx + Vec3{margin, margin, margin};

    for (int i = 0; i < n; ++i) {
        const double t = data.timestamps[i];
        const SceneModel gt = pose_at(spec, t);
        for (int c = 0; c < static_cast<int>(spec.cameras.size()); ++c) {
            Dataset::Item item;
            item.camera = c;
            item.time = i;
            item.image = render_reference(gt, spec.cameras[c], t, spec.background);
            auto& bucket = (c == spec.holdout_camera) ? data.holdout : data.items;
            bucket.push_back(std::move(item));
        }
    }
    out.validate();
    return out;
}

void save_dataset(const std::string& dir, const SynthResult& result) {
    result.validate();
    const std::filesystem::path root(dir);
    std::error_code ec;
    std::filesystem::create_directories(root, ec);
    if (ec) throw IoError("cannot create directory " + root.string() + ": " + ec.message());

    ConfigFile manifest;
    ConfigFile::Section section{"dataset", {}};
    auto put = [&](const std::string& k, const std::string& v) {
        section.entries.emplace_back(k, v);
    };
    put("cameras", std::to_string(result.data.cameras.size()));
    put("times", std::to_string(result.data.timestamps.size()));
    put("movers", std::to_string(result.oracle.size()));
    put("background", fmt(result.data.background));
    put("holdout_camera", std::to_string(result.holdout_camera));
    put("scene_min", fmt(result.scene_min));
    put("scene_max", fmt(result.scene_max));
    manifest.sections.push_back(std::move(section));
    write_text(root / "dataset.txt", print_config(manifest));

    std::string cams;
    for (const Camera& c : result.data.cameras) {
        cams += fmt(c.fx) + " " + fmt(c.fy) + " " + fmt(c.cx) + " " + fmt(c.cy) + " " +
                std::to_string(c.width) + " " + std::to_string(c.height) + " " + fmt(c.near);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) cams += " " + fmt(c.rot(i, j));
        cams += " " + fmt(c.trans) + "\n";
    }
    write_text(root / "cameras.txt", cams);

    std::string times;
    for (const double t : result.data.timestamps) times += fmt(t) + "\n";
    write_text(root / "times.txt", times);

    for (const Dataset::Item& item : result.data.items)
        write_ppm(item.image, frame_path(root, item.camera, item.time).string());
    for (const Dataset::Item& item : result.data.holdout)
        write_ppm(item.image, frame_path(root, item.camera, item.time).string());

    if (!result.oracle.empty()) {
        std::string tsv = "mover\ttime\tx\ty\tz\n";
        for (std::size_t m = 0; m < result.oracle.size(); ++m) {
            for (std::size_t i = 0; i < result.oracle[m].size(); ++i) {
                const Vec3 p = result.oracle[m][i];
                tsv += std::to_string(m) + "\t" + fmt(result.data.timestamps[i]) + "\t" +
                       fmt(p.x) + "\t" + fmt(p.y) + "\t" + fmt(p.z) + "\n";
            }
        }
        write_text(root / "oracle_traj.tsv", tsv);
    }
}

namespace {

std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

std::vector<std::string> non_empty_lines(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

} // namespace

SynthResult load_dataset(const std::string& dir) {
    const std::filesystem::path root(dir);
    const ConfigFile manifest = parse_config(read_text(root / "dataset.txt"));
    if (manifest.sections.size() != 1 || manifest.sections[0].name != "dataset")
        throw ParseError("dataset.txt: expected a single [dataset] section", 0);
    SectionReader r(manifest.sections[0]);
    const int n_cameras = r.get_int("cameras");
    const int n_times = r.get_int("times");
    const int n_movers = r.get_int("movers");
    SynthResult out;
    out.data.background = r.get_vec3("background", out.data.background);
    out.holdout_camera = r.get_int("holdout_camera", -1);
    out.scene_min = r.get_vec3("scene_min", out.scene_min);
    out.scene_max = r.get_vec3("scene_max", out.scene_max);
    r.finish();
    if (n_cameras < 1 || n_times < 1 || n_movers < 0)
        throw ConfigError("dataset.txt: counts out of range");

    const std::vector<std::string> cam_lines = non_empty_lines(read_text(root / "cameras.txt"));
    if (cam_lines.size() != static_cast<std::size_t>(n_cameras))
        throw ConfigError("cameras.txt: expected " + std::to_string(n_cameras) + " cameras");
    for (const std::string& line : cam_lines) {
        const std::vector<std::string> tok = split_ws(line);
        if (tok.size() != 19)
            throw ConfigError("cameras.txt: expected 19 fields per camera");
        Camera c;
        c.fx = to_double(tok[0]);
        c.fy = to_double(tok[1]);
        c.cx = to_double(tok[2]);
        c.cy = to_double(tok[3]);
        c.width = to_int(tok[4]);
        c.height = to_int(tok[5]);
        c.near = to_double(tok[6]);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) c.rot(i, j) = to_double(tok[7 + 3 * i + j]);
        c.trans = {to_double(tok[16]), to_double(tok[17]), to_double(tok[18])};
        out.data.cameras.push_back(c);
    }

    const std::vector<std::string> time_lines = non_empty_lines(read_text(root / "times.txt"));
    if (time_lines.size() != static_cast<std::size_t>(n_times))
        throw ConfigError("times.txt: expected " + std::to_string(n_times) + " timestamps");
    for (const std::string& line : time_lines) out.data.timestamps.push_back(to_double(line));

    for (int i = 0; i < n_times; ++i) {
        for (int c = 0; c < n_cameras; ++c) {
            Dataset::Item item;
            item.camera = c;
            item.time = i;
            item.image = read_ppm(frame_path(root, c, i).string());
            const Camera& cam = out.data.cameras[c];
            if (item.image.width != cam.width || item.image.height != cam.height)
                throw ConfigError("frame size does not match its camera");
            auto& bucket = (c == out.holdout_camera) ? out.data.holdout : out.data.items;
            bucket.push_back(std::move(item));
        }
    }

    if (n_movers > 0) {
        out.oracle.assign(n_movers, {});
        const std::vector<std::string> rows = non_empty_lines(read_text(root / "oracle_traj.tsv"));
        if (rows.empty() || split_ws(rows[0]) != std::vector<std::string>{"mover", "time", "x", "y", "z"})
            throw ConfigError("oracle_traj.tsv: bad header");
        if (rows.size() != 1 + static_cast<std::size_t>(n_movers) * n_times)
            throw ConfigError("oracle_traj.tsv: wrong row count");
        for (std::size_t k = 1; k < rows.size(); ++k) {
            const std::vector<std::string> tok = split_ws(rows[k]);
            if (tok.size() != 5) throw ConfigError("oracle_traj.tsv: expected 5 columns");
            const std::size_t idx = k - 1;
            const int m = to_int(tok[0]);
            const int i = static_cast<int>(idx) % n_times;
            if (m != static_cast<int>(idx) / n_times)
                throw ConfigError("oracle_traj.tsv: rows out of order");
            if (to_double(tok[1]) != out.data.timestamps[i])
                throw ConfigError("oracle_traj.tsv: timestamp mismatch");
            out.oracle[m].push_back({to_double(tok[2]), to_double(tok[3]), to_double(tok[4])});
        }
    }

    out.validate();
    return out;
}

double trajectory_rmse(const SceneModel& model, const std::vector<double>& timestamps,
                       const std::vector<std::vector<Vec3>>& oracle) {
    model.validate();
    if (timestamps.empty()) throw ConfigError("trajectory_rmse: no timestamps");
    if (oracle.empty()) throw ConfigError("trajectory_rmse: no oracle trajectories");
    for (const auto& traj : oracle)
        if (traj.size() != timestamps.size())
            throw ConfigError("trajectory_rmse: oracle length does not match the timestamps");

    const std::size_t n_g = model.gaussians.size();
    const std::size_t n_t = timestamps.size();
    const DeformNetParams* net = model.net_enabled ? &model.net : nullptr;
    std::vector<std::vector<std::optional<Vec3>>> centers(
        n_g, std::vector<std::optional<Vec3>>(n_t));
    for (std::size_t g = 0; g < n_g; ++g) {
        for (std::size_t i = 0; i < n_t; ++i) {
            const auto sliced =
                slice_gaussian(model.gaussians[g], model.track_for(g), net, timestamps[i],
                               model.velocity_enabled, model.modulated_opacity);
            if (sliced) centers[g][i] = sliced->mean3;
        }
    }

    double total = 0.0;
    for (const auto& traj : oracle) {
        // Prefer Gaussians live on at least half the timeline; anything live
        // at all is a fallback so a short-lived fit still scores (poorly).
        std::size_t best = n_g;
        double best_mean = std::numeric_limits<double>::infinity();
        for (const std::size_t min_live : {(n_t + 1) / 2, std::size_t{1}}) {
            for (std::size_t g = 0; g < n_g; ++g) {
                double sum = 0.0;
                std::size_t live = 0;
                for (std::size_t i = 0; i < n_t; ++i) {
                    if (!centers[g][i]) continue;
                    sum += norm(*centers[g][i] - traj[i]);
                    ++live;
                }
                if (live < min_live) continue;
                const double mean = sum / static_cast<double>(live);
                if (mean < best_mean) {
                    best_mean = mean;
                    best = g;
                }
            }
            if (best < n_g) break;
        }
        if (best == n_g) return std::numeric_limits<double>::infinity();

        double sq = 0.0;
        std::size_t live = 0;
        for (std::size_t i = 0; i < n_t; ++i) {
            if (!centers[best][i]) continue;
            const double d = norm(*centers[best][i] - traj[i]);
            sq += d * d;
            ++live;
        }
        total += std::sqrt(sq / static_cast<double>(live));
    }
    return total / static_cast<double>(oracle.size());
}

} // namespace velsplat
