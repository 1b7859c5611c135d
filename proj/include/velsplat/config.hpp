#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "velsplat/quat.hpp"
#include "velsplat/trainer.hpp"
#include "velsplat/vec.hpp"

namespace velsplat {

/// Line-oriented configuration text: `[section]` headers, `key = value`
/// entries, `#` comments. Sections may repeat; order and duplicates are
/// preserved so consumers decide the semantics.
struct ConfigFile {
    struct Section {
        std::string name;
        std::vector<std::pair<std::string, std::string>> entries;

        bool operator==(const Section&) const = default;
    };
    std::vector<Section> sections;

    bool operator==(const ConfigFile&) const = default;
};

/// Throws ParseError (with the byte offset of the offending line) on
/// malformed input. parse_config(print_config(x)) == x.
ConfigFile parse_config(const std::string& text);
std::string print_config(const ConfigFile& cfg);

// scalar parsers shared by every config consumer; throw ConfigError on junk
double to_double(const std::string& s);
int to_int(const std::string& s);
std::uint64_t to_u64(const std::string& s);
bool to_bool(const std::string& s); // true/false/1/0
Vec3 to_vec3(const std::string& s); // three space-separated numbers
Quat to_quat(const std::string& s); // w x y z

/// Typed access to one section. Every get marks its key as read; finish()
/// rejects whatever remains, so unknown or misspelled keys fail loudly.
/// Getters without a default throw on a missing key; duplicates always throw.
class SectionReader {
public:
    explicit SectionReader(const ConfigFile::Section& section);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key);
    std::string get_string(const std::string& key, const std::string& fallback);
    double get_double(const std::string& key);
    double get_double(const std::string& key, double fallback);
    int get_int(const std::string& key);
    int get_int(const std::string& key, int fallback);
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback);
    bool get_bool(const std::string& key, bool fallback);
    Vec3 get_vec3(const std::string& key, Vec3 fallback);
    Quat get_quat(const std::string& key, Quat fallback);

    void finish() const;

private:
    std::optional<std::string> take(const std::string& key);

    const ConfigFile::Section& section_;
    std::vector<bool> used_;
};

/// Every tunable of a fitting run: model shape and ablation flags plus the
/// full training schedule. Mirrors the [model] and [train] config sections.
struct RunConfig {
    int n_gaussians = 300;
    int anchors = 6;
    bool per_gaussian_tracks = true;
    bool velocity = true;
    bool net = false;
    bool modulated_opacity = true;
    int net_width = 32;
    int net_layers = 2;
    int net_L_mu3 = 6;
    int net_L_mut = 4;
    int net_L_tq = 4;
    int net_L_vel = 0;
    double init_scale = 0.12;
    double init_t_sigma = 0.35;
    double init_opacity = 0.1;
    std::uint64_t seed = 1;

    TrainConfig train;

    bool operator==(const RunConfig&) const = default;

    void validate() const; // ConfigError when a value is out of range
};

RunConfig parse_run_config(const std::string& text);
std::string print_run_config(const RunConfig& cfg);

/// Random initialization for fitting: uniform positions inside the box,
/// isotropic scales, temporal centers uniform over [t0, t1], zero velocity
/// anchors, identity rotations, and (when enabled) a fresh deformation net.
SceneModel init_model(const RunConfig& cfg, Vec3 box_min, Vec3 box_max, double t0, double t1);

} // namespace velsplat
