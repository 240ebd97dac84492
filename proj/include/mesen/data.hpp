// Paired multimodal data production: synthetic generation, CSV ingestion,
// user-disjoint splitting, few-label sampling.
#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "mesen/types.hpp"

namespace mesen {

struct ModalitySynthSpec {
    std::string id;
    int channels = 3;
    int timesteps = 64;
};

// Desk-scale stand-in for the public multimodal activity datasets: per
// (user, class, repetition) a shared latent drives every modality through
// a distinct deterministic rendering.
struct SynthSpec {
    int class_count = 6;
    std::vector<ModalitySynthSpec> modality_specs;
    int users = 10;
    int samples_per_user_per_class = 10;
    double noise_sigma = 0.1;
    double correlation_strength = 1.0;  // 0 independent latents, 1 fully shared

    void validate() const;
};

struct WindowLatent {
    double phase = 0.0;       // radians
    double freq_scale = 1.0;  // multiplies the class base frequency
    double amplitude = 1.0;
};

// Fixed per-(user, modality) sensor placement effects.
struct UserEffect {
    std::vector<double> dc_offset;  // per channel
    double amp_scale = 1.0;
};

struct SampleInfo {
    int user = 0;
    int label = 0;
    WindowLatent shared;
    std::vector<WindowLatent> per_modality;
};

struct SynthDebug {
    std::vector<SampleInfo> samples;
    std::vector<std::vector<UserEffect>> user_effects;  // [user][modality]
};

// Noiseless rendering of one window from a latent; modality 0 is the sine
// family, higher modalities render the latent's cosine through a fixed
// per-modality channel mixing.
Matrix render_synth_window(const SynthSpec& spec, int modality, int class_idx,
                           const WindowLatent& latent, const UserEffect& effect);

PairedDataset generate_synthetic(const SynthSpec& spec, uint64_t seed, SynthDebug* debug = nullptr);

// modality id -> (channels, timesteps)
using CsvSchema = std::map<std::string, std::pair<int, int>>;

// Directory layout: one <modality_id>.csv per schema entry with header
// sample_index,c0_t0,...,c{C-1}_t{T-1}, plus index.csv with header
// sample_index,user_id,label (label may be empty). class_count below -1
// means "derive from the largest label".
PairedDataset ingest_csv(const std::string& dir_path, const CsvSchema& schema, int class_count = -1);
void write_csv_layout(const PairedDataset& ds, const std::string& dir_path);

// Reads every <modality>.csv header in the directory and recovers the
// (channels, timesteps) schema from the trailing c{C-1}_t{T-1} column.
CsvSchema infer_csv_schema(const std::string& dir_path);

struct SplitResult {
    PairedDataset train;
    PairedDataset validation;
    PairedDataset test;
};

// Train keeps train_users; eval_users' samples are split 1:1 into
// validation/test by seeded shuffle, stratified per class where counts
// permit.
SplitResult split_by_user(const PairedDataset& ds, const std::set<int>& train_users,
                          const std::set<int>& eval_users, uint64_t seed);

struct FewShotSelection {
    std::vector<std::vector<int>> labeled_indices;  // per class, exactly n each
    double labeling_rate = 0.0;

    std::vector<int> flat() const;
    int per_class() const { return labeled_indices.empty() ? 0 : static_cast<int>(labeled_indices[0].size()); }
};

// Exactly n_per_class labeled train indices per class, drawn uniformly
// without replacement.
FewShotSelection sample_few_labels(const PairedDataset& train, int n_per_class, uint64_t seed);

}  // namespace mesen
