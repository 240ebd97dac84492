// Metrics, the experiment grid over methods x label budgets x repetitions,
// and feature export for external visualization.
#pragma once

#include <set>
#include <string>
#include <vector>

#include "mesen/checkpoint.hpp"
#include "mesen/data.hpp"
#include "mesen/pipeline.hpp"

namespace mesen {

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    int support = 0;
};

struct MetricsReport {
    double accuracy = 0.0;
    double macro_f1 = 0.0;  // unweighted mean; zero-support classes count as 0
    std::vector<ClassMetrics> per_class;
    int n_test = 0;
    int64_t seed = 0;
};

// Argmax predictions (ties to the lowest class index), exact accuracy and
// macro F1 on the named modality.
MetricsReport evaluate(const UnimodalModel& model, const PairedDataset& test,
                       const std::string& modality_id);

// Batched argmax predictions for one modality.
std::vector<int> predict_labels(const UnimodalModel& model, const PairedDataset& ds,
                                const std::string& modality_id);

// CSV rows: sample_index, label (or empty), then the feature_dim
// projector-output coordinates.
void export_features(const PretrainCheckpoint& ck, const PairedDataset& ds,
                     const std::string& modality_id, const std::string& out_path);

enum class GridMethod { Mesen, Labeltrain, IntraNegativesAblation, CmfOnly, MpcOnly };

std::string grid_method_name(GridMethod m);
GridMethod parse_grid_method(const std::string& name);

struct ExperimentGrid {
    std::vector<GridMethod> methods;
    std::vector<int> label_budgets;  // n per class
    int repetitions = 5;
    std::vector<std::string> modality_targets;  // empty = all modalities
    int workers = 1;

    void validate() const;
};

struct GridCell {
    GridMethod method;
    std::string modality;
    int budget = 0;
    double labeling_rate = 0.0;
    int repetitions = 0;
    double acc_mean = 0.0, acc_sd = 0.0;
    double f1_mean = 0.0, f1_sd = 0.0;
};

struct GridResult {
    std::vector<GridCell> cells;

    std::string to_text() const;  // aligned table
    std::string to_csv() const;
};

// For each (method, budget, modality): pretrain when applicable,
// fine-tune/train on a per-repetition seed, evaluate on the test split;
// aggregates mean and standard deviation across repetitions.
GridResult run_grid(const PairedDataset& train, const PairedDataset& test, const ExperimentGrid& grid,
                    const TrainConfig& cfg);

}  // namespace mesen
