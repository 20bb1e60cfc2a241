#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>

#include "adaspan/model.hpp"

namespace adaspan {

inline constexpr int kCheckpointFormatVersion = 1;

using KeyValues = std::map<std::string, std::string>;

KeyValues model_config_to_kv(const ModelConfig& config);
ModelConfig model_config_from_kv(const KeyValues& kv);

struct CheckpointMeta {
  int format_version = kCheckpointFormatVersion;
  ModelConfig config;
  int epoch = 0;
  /// Free-form metric snapshot, e.g. {"val_acc", "0.031"}.
  KeyValues metrics;
};

/// A checkpoint is a directory holding `manifest.txt` (key=value lines) and
/// one raw little-endian float32 blob per parameter and batch-norm buffer,
/// named `<canonical path>.f32`.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, BasicModel<T>& model, int epoch,
                     const KeyValues& metrics = {});

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir);

template <typename T>
BasicModel<T> load_checkpoint(const std::filesystem::path& dir, CheckpointMeta* meta = nullptr);

/// Number of scalars stored in parameter blobs (buffers excluded).
std::size_t checkpoint_parameter_scalars(const std::filesystem::path& dir);

}  // namespace adaspan
