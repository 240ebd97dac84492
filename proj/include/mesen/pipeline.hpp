// The two training stages: multimodal-aided pretraining of per-modality
// encoders/projectors plus the shared pseudo-classification head, and
// few-label unimodal fine-tuning of one encoder with a fresh classifier.
#pragma once

#include <string>
#include <vector>

#include "mesen/checkpoint.hpp"
#include "mesen/config.hpp"
#include "mesen/data.hpp"
#include "mesen/types.hpp"

namespace mesen {

enum class PretrainObjective { Full, CmfOnly, MpcOnly };

struct PretrainOptions {
    bool include_intra_negatives = false;
    PretrainObjective objective = PretrainObjective::Full;
};

// Unlabeled multimodal pretraining; labels are never read. One shuffled
// permutation per epoch applied to all modalities; final short batches
// (< 2 samples) are dropped.
PretrainCheckpoint pretrain(const PairedDataset& ds_train, const TrainConfig& cfg,
                            const PretrainOptions& opts = {});

// The naive contrastive variant with intra-modality negatives in the
// denominator; used for ablation comparisons only.
PretrainCheckpoint ablation_intra_negatives(const PairedDataset& ds_train, const TrainConfig& cfg);

// Loads the matching pretrained encoder, attaches a fresh head and
// optimizes the regularized classification loss on the selected labels.
// Batch size is min(finetune_batch, |selection|); short batches are kept.
UnimodalModel finetune(const PretrainCheckpoint& ck, const std::string& modality_id,
                       const PairedDataset& train, const FewShotSelection& selection,
                       const TrainConfig& cfg, std::vector<double>* loss_history = nullptr);

// Identical architecture and schedule from random initialization with
// plain cross-entropy; the supervised few-label baseline.
UnimodalModel train_supervised_baseline(const std::string& modality_id, const PairedDataset& train,
                                        const FewShotSelection& selection, const TrainConfig& cfg,
                                        std::vector<double>* loss_history = nullptr);

}  // namespace mesen
