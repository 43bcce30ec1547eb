#include "s2s/trainer.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace s2s {

void AdamConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) {
    throw std::invalid_argument("adam: learning rate must be positive and finite");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("adam: beta1 outside [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("adam: beta2 outside [0,1)");
  if (!(eps > 0.0)) throw std::invalid_argument("adam: eps must be positive");
}

void TrainSchedule::validate() const {
  if (batch_size <= 0) throw std::invalid_argument("schedule: batch_size must be positive");
  if (max_steps <= 0) throw std::invalid_argument("schedule: max_steps must be positive");
  if (checkpoint_every <= 0) {
    throw std::invalid_argument("schedule: checkpoint_every must be positive");
  }
  if (!(clip_norm > 0.0)) throw std::invalid_argument("schedule: clip_norm must be positive");
  if (val_batch_size <= 0) {
    throw std::invalid_argument("schedule: val_batch_size must be positive");
  }
  if (val_beam_width < 1) throw std::invalid_argument("schedule: val_beam_width must be >= 1");
  if (val_beam_alpha < 0.0) throw std::invalid_argument("schedule: val_beam_alpha must be >= 0");
  if (val_max_length < 1) throw std::invalid_argument("schedule: val_max_length must be >= 1");
  adam.validate();
}

const CheckpointInfo& select_best_checkpoint(const std::vector<CheckpointInfo>& checkpoints) {
  const CheckpointInfo* best = nullptr;
  for (const CheckpointInfo& c : checkpoints) {
    if (std::isnan(c.metrics.val_bleu)) continue;
    if (best == nullptr || c.metrics.val_bleu > best->metrics.val_bleu ||
        (c.metrics.val_bleu == best->metrics.val_bleu && c.step < best->step)) {
      best = &c;
    }
  }
  if (best == nullptr) {
    throw std::invalid_argument("select_best_checkpoint: no checkpoint with a BLEU score");
  }
  return *best;
}

namespace ckpt_detail {

CheckpointHeader read_header(std::ifstream& in, const std::string& path) {
  char magic[4] = {};
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw std::runtime_error("checkpoint: " + path + " is not a checkpoint file");
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: " + path + " has unsupported version " +
                             std::to_string(version));
  }
  CheckpointHeader header;
  header.scalar_bytes = static_cast<int>(read_pod<std::uint32_t>(in, path));
  header.config_digest = read_pod<std::uint64_t>(in, path);
  header.step = read_pod<std::int64_t>(in, path);
  header.metrics.val_loss = read_pod<double>(in, path);
  header.metrics.val_ppl = read_pod<double>(in, path);
  header.metrics.val_bleu = read_pod<double>(in, path);
  header.has_optimizer = read_pod<std::uint8_t>(in, path) != 0;
  return header;
}

}  // namespace ckpt_detail

CheckpointHeader peek_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  return ckpt_detail::read_header(in, path);
}

}  // namespace s2s
