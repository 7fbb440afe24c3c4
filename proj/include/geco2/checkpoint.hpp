#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>

#include "geco2/model.hpp"

namespace geco2 {

inline constexpr int64_t kCheckpointFormat = 1;

struct Checkpoint {
  GeCo2 model{nullptr};
  double tau = 0.5;
  int64_t step = 0;
};

/// Writes config, named parameters and buffers, tau, step and (optionally)
/// optimizer state into one archive. The file is replaced atomically.
void save_checkpoint(const std::filesystem::path& path, GeCo2& model, double tau, int64_t step,
                     torch::optim::Optimizer* optimizer = nullptr);

/// Rebuilds the model from the stored config. Optimizer state is restored
/// when `optimizer` is given and the archive holds one.
Checkpoint load_checkpoint(const std::filesystem::path& path);
void load_optimizer_state(const std::filesystem::path& path, torch::optim::Optimizer& optimizer);

}  // namespace geco2
