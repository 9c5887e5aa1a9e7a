#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "mvd/codec.hpp"
#include "mvd/denoiser.hpp"
#include "mvd/schedule.hpp"

namespace mvd {

// JSON echoes of the model-defining configs, used by checkpoints and by the
// experiment-file loader. Unknown enum strings throw.
nlohmann::json to_json(const DenoiserConfig& c);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CodecConfig& c);
CodecConfig codec_config_from_json(const nlohmann::json& j);

// Everything inference needs, with no companion config file: the denoiser
// parameters, the frozen embedding-encoder parameters, the noise schedule,
// and echoes of the configs that shaped them.
struct DenoiserCheckpoint {
  DenoiserConfig model_config;
  CodecConfig codec;
  std::map<std::string, torch::Tensor> model_params;
  std::map<std::string, torch::Tensor> encoder_params;
  torch::Tensor alpha_bar;  // [T+1] float64, stored verbatim (never re-derived)

  NoiseSchedule schedule() const;
};

void save_checkpoint(const DenoiserCheckpoint& ckpt, const std::filesystem::path& path);
DenoiserCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mvd
