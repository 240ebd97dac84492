// Training configuration: every hyperparameter of both stages plus the
// desk-scale architecture knobs. Serializes to a flat key=value document;
// unknown keys are an error.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mesen {

enum class GammaSchedule { Ones, Linear, Explicit };
enum class MNormMode { RowL2, BatchStdL2 };
enum class ColumnNormMode { L2, Raw };
enum class RegTarget { Zero, Checkpoint };

struct TrainConfig {
    double tau = 0.1;        // feature contrastive temperature
    double tau_hat = 1.0;    // pseudo-class contrastive temperature
    double alpha = 0.5;      // a->b weight
    double beta = 0.5;       // b->a weight
    double lambda_pr = -1.0; // entropy regularizer weight, negative
    double lambda_fr = 1e-3; // fine-tuning regularizer weight
    GammaSchedule gamma_schedule = GammaSchedule::Ones;
    std::vector<double> gamma;          // per encoder layer, used when Explicit
    int pretrain_batch = 128;
    int finetune_batch = 64;
    double learning_rate = 0.001;
    int class_count = 2;                 // N_cls
    int feature_dim = 64;                // N_fc
    int epochs_pretrain = 200;
    int epochs_finetune = 200;
    int64_t seed = 1;
    int repetitions = 5;

    // Encoder architecture (desk scale, overridable).
    std::vector<int> encoder_conv_channels = {32, 64};  // last entry is d_h
    int encoder_kernel = 5;
    int encoder_stride = 2;
    int encoder_ffn_hidden = 128;

    MNormMode m_norm_mode = MNormMode::RowL2;
    ColumnNormMode column_norm = ColumnNormMode::L2;
    RegTarget reg_target = RegTarget::Zero;

    int encoder_dim() const { return encoder_conv_channels.back(); }
    // conv layers + attention + ffn
    int encoder_layer_count() const { return static_cast<int>(encoder_conv_channels.size()) + 2; }

    // Resolves the gamma schedule against an encoder with n_e layer blocks.
    std::vector<double> resolve_gamma(int n_e) const;

    // Throws std::invalid_argument on any field-invariant violation.
    void validate() const;
};

// Paper-protocol defaults: lr 0.001, pretrain batch 128, finetune batch 64,
// alpha = beta = 0.5, 5 repetitions. Rejects class_count < 2.
TrainConfig default_config(int class_count, int feature_dim);

// Flat key=value document, '#' comments, unknown keys rejected.
std::string serialize_config(const TrainConfig& cfg);
TrainConfig parse_config(const std::string& text);
TrainConfig load_config_file(const std::string& path);
void save_config_file(const TrainConfig& cfg, const std::string& path);

}  // namespace mesen
