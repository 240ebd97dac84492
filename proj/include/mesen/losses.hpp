// Training objectives: cross-modal feature contrastive loss, multimodal
// pseudo-classification aligning with entropy regularization, the
// delta-balanced pretraining loss, and the layer-aware fine-tuning loss.
// All pure functions; analytic input gradients returned alongside values.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "mesen/config.hpp"
#include "mesen/matrix.hpp"
#include "mesen/nets.hpp"

namespace mesen {

// N x N_cls row-stochastic pseudo-class probabilities for one modality.
struct PseudoProbMatrix {
    Matrix values;
    std::string modality_id;
};

struct CrossModalResult {
    double value = 0.0;
    double mean_a2b = 0.0;
    double mean_b2a = 0.0;
    std::map<std::string, double> per_direction;
    Matrix grad_a, grad_b;   // d value / d za, d zb
    int denominator_terms = 0;  // per-sample term count in the softmax denominator
};

// Inter-modality-only negatives: for sample i the denominator holds the
// positive pair plus the N-1 other-modality features. Setting
// include_intra_negatives adds the N-1 same-modality features (the naive
// variant kept for ablation), giving 2N-1 terms.
CrossModalResult cross_modal_loss(const FeatureBatch& za, const FeatureBatch& zb, double tau,
                                  double alpha, double beta, bool include_intra_negatives = false,
                                  bool with_grad = true);

struct PseudoAlignResult {
    double value = 0.0;   // aligning term + lambda_pr * l_pr
    double align = 0.0;
    double l_pr = 0.0;    // Shannon entropy of pseudo-class usage
    Matrix grad_a, grad_b;  // d value / d Ya, d Yb
    int denominator_terms = 0;  // 2*N_cls - 1
};

// Column-level contrast: pseudo-class column i of modality a against its
// modality-b counterpart, with the 2*N_cls-2 remaining columns of both
// modalities as negatives.
PseudoAlignResult pseudo_align_loss(const PseudoProbMatrix& ya, const PseudoProbMatrix& yb,
                                    double tau_hat, double lambda_pr,
                                    ColumnNormMode mode = ColumnNormMode::L2, bool with_grad = true);

struct LossBreakdown {
    double l_cmf = 0.0;
    double l_mpc = 0.0;
    double l_pr = 0.0;
    double delta = 0.0;
    double l_pt = 0.0;
    std::map<std::string, double> per_direction;
};

struct PretrainLossResult {
    LossBreakdown breakdown;
    Matrix d_za, d_zb;  // d l_pt / d features
    Matrix d_ya, d_yb;  // d l_pt / d pseudo-probabilities
};

// L_PT = L_CMF + delta * L_MPC with delta = |L_CMF| / max(|L_MPC|, 1e-8),
// treated as a constant for gradients.
PretrainLossResult pretrain_loss(const FeatureBatch& za, const FeatureBatch& zb,
                                 const PseudoProbMatrix& ya, const PseudoProbMatrix& yb,
                                 const TrainConfig& cfg, bool include_intra_negatives = false,
                                 bool with_grad = true);

// Per-layer reference values; when present the regularizer measures the
// distance to these instead of to zero.
using ParamSnapshot = std::vector<std::vector<double>>;

// sum_i gamma_i * ||theta_e,i||^2 + ||theta_c||^2 over layer blocks.
double finetune_reg(const LayeredModel& encoder, const LayeredModel& head,
                    const std::vector<double>& gamma, const ParamSnapshot* encoder_ref = nullptr);

struct CrossEntropyResult {
    double value = 0.0;
    Matrix grad;  // d value / d probs
};

// Mean multiclass cross-entropy over row-stochastic predictions.
CrossEntropyResult cross_entropy_loss(const Matrix& probs, const std::vector<int>& labels,
                                      bool with_grad = true);

// L_FT = L_CLS + lambda_fr * L_FR.
double finetune_loss(const Matrix& probs, const std::vector<int>& labels, const LayeredModel& encoder,
                     const LayeredModel& head, const TrainConfig& cfg,
                     const ParamSnapshot* encoder_ref = nullptr);

// Accumulate d(lambda_fr * L_FR)/d theta into the blocks' gradients.
void accumulate_reg_gradients(LayeredModel& encoder, LayeredModel& head,
                              const std::vector<double>& gamma, double lambda_fr,
                              const ParamSnapshot* encoder_ref = nullptr);

}  // namespace mesen
