#pragma once

#include <string>

#include "velsplat/scene_model.hpp"
#include "velsplat/trainer.hpp"

namespace velsplat {

/// Scene snapshot, optionally with the optimizer/loop state needed to resume
/// training exactly where it stopped. config_text is an opaque copy of the
/// run configuration, carried for provenance.
struct Checkpoint {
    SceneModel model;
    std::string config_text;
    bool has_train_state = false;
    TrainState state;
};

/// Binary format: "VSPT" magic, version, flags, then the model (Gaussians,
/// tracks, net) and optionally the train state. All floating-point payload is
/// raw IEEE-754 doubles, so a write/read cycle is bit-exact.
void write_checkpoint(const std::string& path, const SceneModel& model,
                      const TrainState* state = nullptr,
                      const std::string& config_text = {});

/// Throws IoError when the file cannot be opened and ParseError (with the
/// offending byte offset) on malformed or truncated content.
Checkpoint read_checkpoint(const std::string& path);

} // namespace velsplat
