#include "velsplat/config.hpp"

#include <cctype>
#include <climits>
#include <cstdio>
#include <cstdlib>
#include <random>

#include "velsplat/errors.hpp"

namespace velsplat {
namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0;
    std::size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

bool valid_name(const std::string& s) {
    if (s.empty()) return false;
    for (const char c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '_' && c != '-' && c != '.')
            return false;
    return true;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt(Vec3 v) { return fmt(v.x) + " " + fmt(v.y) + " " + fmt(v.z); }

} // namespace

ConfigFile parse_config(const std::string& text) {
    ConfigFile cfg;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t line_start = pos;
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string::npos) eol = text.size();
        const std::string line = trim(text.substr(pos, eol - pos));
        pos = eol + 1;

        if (line.empty() || line[0] == '#') {
            if (eol == text.size()) break;
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3)
                throw ParseError("config: malformed section header", line_start);
            const std::string name = trim(line.substr(1, line.size() - 2));
            if (!valid_name(name))
                throw ParseError("config: invalid section name '" + name + "'", line_start);
            cfg.sections.push_back({name, {}});
        } else {
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ParseError("config: expected 'key = value'", line_start);
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (!valid_name(key))
                throw ParseError("config: invalid key '" + key + "'", line_start);
            if (cfg.sections.empty())
                throw ParseError("config: entry before any [section]", line_start);
            cfg.sections.back().entries.emplace_back(key, value);
        }
        if (eol == text.size()) break;
    }
    return cfg;
}

std::string print_config(const ConfigFile& cfg) {
    std::string out;
    for (std::size_t s = 0; s < cfg.sections.size(); ++s) {
        if (s > 0) out += "\n";
        out += "[" + cfg.sections[s].name + "]\n";
        for (const auto& [key, value] : cfg.sections[s].entries)
            out += key + " = " + value + "\n";
    }
    return out;
}

double to_double(const std::string& s) {
    const std::string t = trim(s);
    if (t.empty()) throw ConfigError("empty value where a number was expected");
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (end != t.c_str() + t.size()) throw ConfigError("malformed number '" + s + "'");
    return v;
}

int to_int(const std::string& s) {
    const std::string t = trim(s);
    if (t.empty()) throw ConfigError("empty value where an integer was expected");
    char* end = nullptr;
    const long v = std::strtol(t.c_str(), &end, 10);
    if (end != t.c_str() + t.size()) throw ConfigError("malformed integer '" + s + "'");
    if (v < INT_MIN || v > INT_MAX) throw ConfigError("integer out of range '" + s + "'");
    return static_cast<int>(v);
}

std::uint64_t to_u64(const std::string& s) {
    const std::string t = trim(s);
    if (t.empty()) throw ConfigError("empty value where an integer was expected");
    char* end = nullptr;
    const unsigned long long v = std::strtoull(t.c_str(), &end, 10);
    if (end != t.c_str() + t.size() || t[0] == '-')
        throw ConfigError("malformed unsigned integer '" + s + "'");
    return v;
}

bool to_bool(const std::string& s) {
    const std::string t = trim(s);
    if (t == "true" || t == "1") return true;
    if (t == "false" || t == "0") return false;
    throw ConfigError("malformed boolean '" + s + "' (use true/false)");
}

namespace {

std::vector<double> to_doubles(const std::string& s, std::size_t n, const char* what) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos < s.size()) {
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
        if (pos >= s.size()) break;
        std::size_t end = pos;
        while (end < s.size() && !std::isspace(static_cast<unsigned char>(s[end]))) ++end;
        out.push_back(to_double(s.substr(pos, end - pos)));
        pos = end;
    }
    if (out.size() != n)
        throw ConfigError(std::string("expected ") + what + ", got '" + s + "'");
    return out;
}

} // namespace

Vec3 to_vec3(const std::string& s) {
    const std::vector<double> v = to_doubles(s, 3, "three numbers");
    return {v[0], v[1], v[2]};
}

Quat to_quat(const std::string& s) {
    const std::vector<double> v = to_doubles(s, 4, "four numbers (w x y z)");
    return {v[0], v[1], v[2], v[3]};
}

SectionReader::SectionReader(const ConfigFile::Section& section)
    : section_(section), used_(section.entries.size(), false) {}

std::optional<std::string> SectionReader::take(const std::string& key) {
    std::optional<std::string> found;
    for (std::size_t i = 0; i < section_.entries.size(); ++i) {
        if (section_.entries[i].first != key) continue;
        if (found)
            throw ConfigError("duplicate key '" + key + "' in [" + section_.name + "]");
        found = section_.entries[i].second;
        used_[i] = true;
    }
    return found;
}

bool SectionReader::has(const std::string& key) const {
    for (const auto& [k, v] : section_.entries)
        if (k == key) return true;
    return false;
}

std::string SectionReader::get_string(const std::string& key) {
    auto v = take(key);
    if (!v) throw ConfigError("missing key '" + key + "' in [" + section_.name + "]");
    return *v;
}

std::string SectionReader::get_string(const std::string& key, const std::string& fallback) {
    auto v = take(key);
    return v ? *v : fallback;
}

double SectionReader::get_double(const std::string& key) { return to_double(get_string(key)); }

double SectionReader::get_double(const std::string& key, double fallback) {
    auto v = take(key);
    return v ? to_double(*v) : fallback;
}

int SectionReader::get_int(const std::string& key) { return to_int(get_string(key)); }

int SectionReader::get_int(const std::string& key, int fallback) {
    auto v = take(key);
    return v ? to_int(*v) : fallback;
}

std::uint64_t SectionReader::get_u64(const std::string& key, std::uint64_t fallback) {
    auto v = take(key);
    return v ? to_u64(*v) : fallback;
}

bool SectionReader::get_bool(const std::string& key, bool fallback) {
    auto v = take(key);
    return v ? to_bool(*v) : fallback;
}

Vec3 SectionReader::get_vec3(const std::string& key, Vec3 fallback) {
    auto v = take(key);
    return v ? to_vec3(*v) : fallback;
}

Quat SectionReader::get_quat(const std::string& key, Quat fallback) {
    auto v = take(key);
    return v ? to_quat(*v) : fallback;
}

void SectionReader::finish() const {
    for (std::size_t i = 0; i < section_.entries.size(); ++i)
        if (!used_[i])
            throw ConfigError("unknown key '" + section_.entries[i].first + "' in [" +
                              section_.name + "]");
}

void RunConfig::validate() const {
    if (n_gaussians < 1) throw ConfigError("n_gaussians must be at least 1");
    if (anchors < 2) throw ConfigError("anchors must be at least 2");
    if (net_width < 1) throw ConfigError("net_width must be at least 1");
    if (net_layers < 0) throw ConfigError("net_layers must be non-negative");
    if (net_L_mu3 < 0 || net_L_mut < 0 || net_L_tq < 0 || net_L_vel < 0)
        throw ConfigError("encoding band counts must be non-negative");
    if (!(init_scale > 0.0) || !(init_t_sigma > 0.0))
        throw ConfigError("initial scales must be positive");
    if (!(init_opacity > 0.0 && init_opacity < 1.0))
        throw ConfigError("init_opacity must be inside (0, 1)");
    if (train.iterations < 0) throw ConfigError("iterations must be non-negative");
    if (!(train.loss.lambda >= 0.0 && train.loss.lambda <= 1.0))
        throw ConfigError("lambda must be in [0, 1]");
    if (train.eval_interval <= 0) throw ConfigError("eval_interval must be positive");
    if (train.densify_interval < 0) throw ConfigError("densify_interval must be non-negative");
    if (train.max_gaussians < 1) throw ConfigError("max_gaussians must be at least 1");
    if (!(train.prune_opacity >= 0.0)) throw ConfigError("prune_opacity must be non-negative");
    if (!(train.clone_grad_threshold >= 0.0))
        throw ConfigError("clone_grad_threshold must be non-negative");
    if (train.threads < 1) throw ConfigError("threads must be at least 1");
    const AdamConfig& a = train.adam;
    for (const double lr : {a.lr_position, a.lr_scales, a.lr_quats, a.lr_opacity, a.lr_rgb,
                            a.lr_anchors, a.lr_net_start, a.lr_net_end, a.net_weight_decay})
        if (!(lr >= 0.0)) throw ConfigError("learning rates and decay must be non-negative");
}

RunConfig parse_run_config(const std::string& text) {
    const ConfigFile file = parse_config(text);
    RunConfig cfg;
    bool saw_model = false;
    bool saw_train = false;
    for (const ConfigFile::Section& section : file.sections) {
        if (section.name == "model") {
            if (saw_model) throw ConfigError("duplicate [model] section");
            saw_model = true;
            SectionReader r(section);
            cfg.n_gaussians = r.get_int("n_gaussians", cfg.n_gaussians);
            cfg.anchors = r.get_int("anchors", cfg.anchors);
            cfg.per_gaussian_tracks = r.get_bool("per_gaussian_tracks", cfg.per_gaussian_tracks);
            cfg.velocity = r.get_bool("velocity", cfg.velocity);
            cfg.net = r.get_bool("net", cfg.net);
            cfg.modulated_opacity = r.get_bool("modulated_opacity", cfg.modulated_opacity);
            cfg.net_width = r.get_int("net_width", cfg.net_width);
            cfg.net_layers = r.get_int("net_layers", cfg.net_layers);
            cfg.net_L_mu3 = r.get_int("net_L_mu3", cfg.net_L_mu3);
            cfg.net_L_mut = r.get_int("net_L_mut", cfg.net_L_mut);
            cfg.net_L_tq = r.get_int("net_L_tq", cfg.net_L_tq);
            cfg.net_L_vel = r.get_int("net_L_vel", cfg.net_L_vel);
            cfg.init_scale = r.get_double("init_scale", cfg.init_scale);
            cfg.init_t_sigma = r.get_double("init_t_sigma", cfg.init_t_sigma);
            cfg.init_opacity = r.get_double("init_opacity", cfg.init_opacity);
            cfg.seed = r.get_u64("seed", cfg.seed);
            r.finish();
        } else if (section.name == "train") {
            if (saw_train) throw ConfigError("duplicate [train] section");
            saw_train = true;
            SectionReader r(section);
            TrainConfig& t = cfg.train;
            t.iterations = r.get_int("iterations", t.iterations);
            t.loss.lambda = r.get_double("lambda", t.loss.lambda);
            t.eval_interval = r.get_int("eval_interval", t.eval_interval);
            t.densify_interval = r.get_int("densify_interval", t.densify_interval);
            t.densify_end = r.get_int("densify_end", t.densify_end);
            t.clone_grad_threshold = r.get_double("clone_grad_threshold", t.clone_grad_threshold);
            t.prune_opacity = r.get_double("prune_opacity", t.prune_opacity);
            t.max_gaussians =
                static_cast<std::size_t>(r.get_u64("max_gaussians", t.max_gaussians));
            t.seed = r.get_u64("seed", t.seed);
            t.threads = r.get_int("threads", t.threads);
            t.log_wallclock = r.get_bool("log_wallclock", t.log_wallclock);
            AdamConfig& a = t.adam;
            a.lr_position = r.get_double("lr_position", a.lr_position);
            a.lr_scales = r.get_double("lr_scales", a.lr_scales);
            a.lr_quats = r.get_double("lr_quats", a.lr_quats);
            a.lr_opacity = r.get_double("lr_opacity", a.lr_opacity);
            a.lr_rgb = r.get_double("lr_rgb", a.lr_rgb);
            a.lr_anchors = r.get_double("lr_anchors", a.lr_anchors);
            a.lr_net_start = r.get_double("lr_net_start", a.lr_net_start);
            a.lr_net_end = r.get_double("lr_net_end", a.lr_net_end);
            a.net_weight_decay = r.get_double("net_weight_decay", a.net_weight_decay);
            a.total_iterations = r.get_int("total_iterations", a.total_iterations);
            r.finish();
        } else {
            throw ConfigError("unknown section [" + section.name + "] in run config");
        }
    }
    cfg.validate();
    return cfg;
}

std::string print_run_config(const RunConfig& cfg) {
    ConfigFile file;
    ConfigFile::Section model{"model", {}};
    auto m = [&](const std::string& k, const std::string& v) { model.entries.emplace_back(k, v); };
    m("n_gaussians", std::to_string(cfg.n_gaussians));
    m("anchors", std::to_string(cfg.anchors));
    m("per_gaussian_tracks", cfg.per_gaussian_tracks ? "true" : "false");
    m("velocity", cfg.velocity ? "true" : "false");
    m("net", cfg.net ? "true" : "false");
    m("modulated_opacity", cfg.modulated_opacity ? "true" : "false");
    m("net_width", std::to_string(cfg.net_width));
    m("net_layers", std::to_string(cfg.net_layers));
    m("net_L_mu3", std::to_string(cfg.net_L_mu3));
    m("net_L_mut", std::to_string(cfg.net_L_mut));
    m("net_L_tq", std::to_string(cfg.net_L_tq));
    m("net_L_vel", std::to_string(cfg.net_L_vel));
    m("init_scale", fmt(cfg.init_scale));
    m("init_t_sigma", fmt(cfg.init_t_sigma));
    m("init_opacity", fmt(cfg.init_opacity));
    m("seed", std::to_string(cfg.seed));
    file.sections.push_back(std::move(model));

    ConfigFile::Section train{"train", {}};
    auto t = [&](const std::string& k, const std::string& v) { train.entries.emplace_back(k, v); };
    const TrainConfig& tc = cfg.train;
    t("iterations", std::to_string(tc.iterations));
    t("lambda", fmt(tc.loss.lambda));
    t("eval_interval", std::to_string(tc.eval_interval));
    t("densify_interval", std::to_string(tc.densify_interval));
    t("densify_end", std::to_string(tc.densify_end));
    t("clone_grad_threshold", fmt(tc.clone_grad_threshold));
    t("prune_opacity", fmt(tc.prune_opacity));
    t("max_gaussians", std::to_string(tc.max_gaussians));
    t("seed", std::to_string(tc.seed));
    t("threads", std::to_string(tc.threads));
    t("log_wallclock", tc.log_wallclock ? "true" : "false");
    t("lr_position", fmt(tc.adam.lr_position));
    t("lr_scales", fmt(tc.adam.lr_scales));
    t("lr_quats", fmt(tc.adam.lr_quats));
    t("lr_opacity", fmt(tc.adam.lr_opacity));
    t("lr_rgb", fmt(tc.adam.lr_rgb));
    t("lr_anchors", fmt(tc.adam.lr_anchors));
    t("lr_net_start", fmt(tc.adam.lr_net_start));
    t("lr_net_end", fmt(tc.adam.lr_net_end));
    t("net_weight_decay", fmt(tc.adam.net_weight_decay));
    t("total_iterations", std::to_string(tc.adam.total_iterations));
    file.sections.push_back(std::move(train));
    return print_config(file);
}

SceneModel init_model(const RunConfig& cfg, Vec3 box_min, Vec3 box_max, double t0, double t1) {
    cfg.validate();
    if (!(box_max.x >= box_min.x && box_max.y >= box_min.y && box_max.z >= box_min.z))
        throw ConfigError("init_model: inverted bounding box");
    if (!(t1 > t0)) throw ConfigError("init_model: empty time domain");

    std::mt19937_64 rng(cfg.seed);
    auto uni = [&](double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    };

    SceneModel model;
    model.per_gaussian_tracks = cfg.per_gaussian_tracks;
    model.velocity_enabled = cfg.velocity;
    model.net_enabled = cfg.net;
    model.modulated_opacity = cfg.modulated_opacity;

    const int n_tracks = cfg.per_gaussian_tracks ? cfg.n_gaussians : 1;
    for (int t = 0; t < n_tracks; ++t)
        model.tracks.push_back(VelocityTrack::zeros(cfg.anchors, t0, t1));

    const double logit = std::log(cfg.init_opacity / (1.0 - cfg.init_opacity));
    for (int i = 0; i < cfg.n_gaussians; ++i) {
        Gaussian4D g;
        g.mean4 = {uni(box_min.x, box_max.x), uni(box_min.y, box_max.y),
                   uni(box_min.z, box_max.z), uni(t0, t1)};
        g.log_scales = {std::log(cfg.init_scale), std::log(cfg.init_scale),
                        std::log(cfg.init_scale), std::log(cfg.init_t_sigma)};
        g.opacity_logit = logit;
        g.rgb = {uni(0.2, 0.8), uni(0.2, 0.8), uni(0.2, 0.8)};
        model.gaussians.push_back(g);
    }

    DeformNetConfig nc;
    nc.enc = {cfg.net_L_mu3, cfg.net_L_mut, cfg.net_L_tq, cfg.net_L_vel};
    nc.anchor_count = cfg.anchors;
    nc.hidden_width = cfg.net_width;
    nc.hidden_layers = cfg.net_layers;
    if (cfg.net) {
        model.net = DeformNetParams::init(nc, cfg.seed ^ 0xda3e39cb94b95bdbull);
    } else {
        model.net.config = nc; // shape only, no parameters to store or optimize
    }
    return model;
}

} // namespace velsplat
