// Versioned binary archives for pretraining state and fine-tuned unimodal
// models: layer_id -> flat parameter array + shape, plus the TrainConfig
// used. Files are written atomically (temp + rename).
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mesen/config.hpp"
#include "mesen/losses.hpp"
#include "mesen/nets.hpp"

namespace mesen {

inline constexpr const char* kVariantMesen = "mesen";
inline constexpr const char* kVariantIntraNegatives = "intra_negatives";
inline constexpr const char* kVariantCmfOnly = "cmf_only";
inline constexpr const char* kVariantMpcOnly = "mpc_only";

struct PretrainCheckpoint {
    std::string variant = kVariantMesen;
    TrainConfig config;
    std::vector<std::string> modalities;
    std::vector<std::pair<int, int>> input_shapes;  // (channels, timesteps) per modality
    std::vector<Encoder> encoders;
    std::vector<Projector> projectors;
    Head pseudo_head;
    std::vector<LossBreakdown> history;

    int modality_index(const std::string& id) const;
};

struct UnimodalModel {
    std::string modality_id;
    TrainConfig config;
    std::pair<int, int> input_shape{0, 0};
    Encoder encoder;
    Head head;
};

void save_pretrain_checkpoint(const PretrainCheckpoint& ck, const std::string& path);
PretrainCheckpoint load_pretrain_checkpoint(const std::string& path);

void save_unimodal_model(const UnimodalModel& model, const std::string& path);
UnimodalModel load_unimodal_model(const std::string& path);

// step, l_cmf, l_mpc, l_pr, delta, l_pt
void write_history_csv(const std::vector<LossBreakdown>& history, const std::string& path);

}  // namespace mesen
