#pragma once

// JSON checkpoints: model description plus a named-tensor manifest.

#include <map>
#include <string>

#include "dukf/ukf.hpp"

namespace dukf {

inline constexpr int kCheckpointVersion = 1;

using CheckpointMeta = std::map<std::string, std::string>;

std::string checkpoint_json(const ModelBundle& bundle, const CheckpointMeta& meta = {});
ModelBundle parse_checkpoint(const std::string& text,
                             const std::string& origin = "<checkpoint>",
                             CheckpointMeta* meta = nullptr);

// Written through a temporary file and renamed into place.
void save_checkpoint(const ModelBundle& bundle, const std::string& path,
                     const CheckpointMeta& meta = {});
ModelBundle load_checkpoint(const std::string& path, CheckpointMeta* meta = nullptr);

}  // namespace dukf
