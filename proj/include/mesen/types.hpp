// Domain types for paired multimodal windows.
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mesen/matrix.hpp"

namespace mesen {

// One fixed-length multichannel sensor window for one modality.
struct ModalityWindow {
    std::string modality_id;
    Matrix data;  // channels x timesteps
    int user_id = 0;
    std::optional<int> label;  // in [0, class_count) when present
};

// Index-aligned window collections: windows[m][k] across modalities m
// record the same activity instant k.
struct PairedDataset {
    std::vector<std::string> modalities;
    std::vector<std::vector<ModalityWindow>> windows;  // [modality][index]
    int class_count = 0;

    int modality_count() const { return static_cast<int>(modalities.size()); }
    int sample_count() const { return windows.empty() ? 0 : static_cast<int>(windows[0].size()); }
    int modality_index(const std::string& id) const;  // -1 if absent

    // Copy with every label removed; pretraining must not see labels.
    PairedDataset without_labels() const;
};

struct Violation {
    std::string field;       // "length", "user_id", "label", "shape", "finite", "label_range"
    int index = -1;          // sample index, -1 when not index-specific
    std::string modality;    // offending modality id(s)
    std::string message;
};

// Empty list iff all PairedDataset invariants hold. Never throws.
std::vector<Violation> validate_paired(const PairedDataset& ds);

}  // namespace mesen
