// Versioned binary model container. Little-endian, float64 payloads, FNV-1a
// checksum; load(save(m)) reproduces every parameter bitwise.

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "maskdiff/model.hpp"

namespace maskdiff {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void save_denoiser(const std::string& path, const DenoiserModel& model, const Vocabulary& vocab);
// expect, when given, must match the stored config exactly.
std::unique_ptr<DenoiserModel> load_denoiser(const std::string& path,
                                             Vocabulary* vocab_out = nullptr,
                                             const ModelConfig* expect = nullptr);

void save_discriminator(const std::string& path, const DiscriminatorModel& model,
                        const Vocabulary& vocab);
std::unique_ptr<DiscriminatorModel> load_discriminator(const std::string& path,
                                                       Vocabulary* vocab_out = nullptr,
                                                       const ModelConfig* expect = nullptr);

struct CheckpointInfo {
    std::string kind;
    ModelConfig config;
    int vocab_size = 0;
    std::size_t total_params = 0;
    std::vector<std::string> tensor_summaries;  // "name rows x cols"
};
CheckpointInfo inspect_checkpoint(const std::string& path);

}  // namespace maskdiff
