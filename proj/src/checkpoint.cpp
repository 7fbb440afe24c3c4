#include "geco2/checkpoint.hpp"

#include <stdexcept>

#include "geco2/config.hpp"

namespace geco2 {

void save_checkpoint(const std::filesystem::path& path, GeCo2& model, double tau, int64_t step,
                     torch::optim::Optimizer* optimizer) {
  torch::serialize::OutputArchive archive;
  archive.write("format_version", c10::IValue(kCheckpointFormat));
  archive.write("config", c10::IValue(to_json(model->config()).dump()));
  archive.write("tau", c10::IValue(tau));
  archive.write("step", c10::IValue(step));
  torch::serialize::OutputArchive params;
  for (const auto& p : model->named_parameters(true)) params.write(p.key(), p.value());
  archive.write("parameters", params);
  torch::serialize::OutputArchive buffers;
  for (const auto& b : model->named_buffers(true)) buffers.write(b.key(), b.value(), true);
  archive.write("buffers", buffers);
  if (optimizer != nullptr) {
    torch::serialize::OutputArchive state;
    optimizer->save(state);
    archive.write("optimizer", state);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  archive.save_to(tmp.string());
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("checkpoint not found: " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());

  c10::IValue value;
  archive.read("format_version", value);
  if (value.toInt() != kCheckpointFormat) {
    throw std::runtime_error(path.string() + ": unsupported checkpoint format " +
                             std::to_string(value.toInt()));
  }
  archive.read("config", value);
  const ModelConfig config = model_config_from_json(nlohmann::json::parse(value.toStringRef()));

  Checkpoint ckpt;
  ckpt.model = GeCo2(config);
  archive.read("tau", value);
  ckpt.tau = value.toDouble();
  archive.read("step", value);
  ckpt.step = value.toInt();

  torch::NoGradGuard guard;
  torch::serialize::InputArchive params;
  archive.read("parameters", params);
  for (auto& p : ckpt.model->named_parameters(true)) {
    torch::Tensor stored;
    params.read(p.key(), stored);
    if (stored.sizes() != p.value().sizes()) {
      throw std::runtime_error(path.string() + ": shape mismatch for parameter " + p.key());
    }
    p.value().copy_(stored);
  }
  torch::serialize::InputArchive buffers;
  archive.read("buffers", buffers);
  for (auto& b : ckpt.model->named_buffers(true)) {
    torch::Tensor stored;
    buffers.read(b.key(), stored, true);
    b.value().copy_(stored);
  }
  return ckpt;
}

void load_optimizer_state(const std::filesystem::path& path, torch::optim::Optimizer& optimizer) {
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  torch::serialize::InputArchive state;
  if (!archive.try_read("optimizer", state)) {
    throw std::runtime_error(path.string() + ": checkpoint holds no optimizer state");
  }
  optimizer.load(state);
}

}  // namespace geco2
