#include "mesen/types.hpp"

#include <map>

namespace mesen {

int PairedDataset::modality_index(const std::string& id) const {
    for (size_t m = 0; m < modalities.size(); ++m)
        if (modalities[m] == id) return static_cast<int>(m);
    return -1;
}

PairedDataset PairedDataset::without_labels() const {
    PairedDataset out = *this;
    for (auto& mod : out.windows)
        for (auto& w : mod) w.label.reset();
    return out;
}

std::vector<Violation> validate_paired(const PairedDataset& ds) {
    std::vector<Violation> out;
    const size_t m_count = ds.modalities.size();
    if (ds.windows.size() != m_count) {
        out.push_back({"length", -1, "", "modality list and window list sizes differ"});
        return out;
    }
    if (m_count == 0) return out;

    size_t n = ds.windows[0].size();
    bool lengths_ok = true;
    for (size_t m = 1; m < m_count; ++m) {
        if (ds.windows[m].size() != n) {
            out.push_back({"length", -1, ds.modalities[m],
                           "modality '" + ds.modalities[m] + "' has " + std::to_string(ds.windows[m].size()) +
                               " windows, expected " + std::to_string(n)});
            lengths_ok = false;
        }
    }
    if (!lengths_ok) return out;

    // Fixed (channels, timesteps) per modality_id.
    std::map<std::string, std::pair<int, int>> shapes;
    for (size_t m = 0; m < m_count; ++m) {
        for (size_t k = 0; k < n; ++k) {
            const auto& w = ds.windows[m][k];
            auto shape = std::make_pair(w.data.rows, w.data.cols);
            auto [it, inserted] = shapes.emplace(w.modality_id, shape);
            if (!inserted && it->second != shape) {
                out.push_back({"shape", static_cast<int>(k), w.modality_id,
                               "window shape differs from earlier windows of the same modality"});
            }
            if (!w.data.all_finite())
                out.push_back({"finite", static_cast<int>(k), w.modality_id, "non-finite entry in window data"});
            if (w.label && (*w.label < 0 || *w.label >= ds.class_count))
                out.push_back({"label_range", static_cast<int>(k), w.modality_id,
                               "label " + std::to_string(*w.label) + " outside [0, " +
                                   std::to_string(ds.class_count) + ")"});
        }
    }

    for (size_t k = 0; k < n; ++k) {
        int user0 = ds.windows[0][k].user_id;
        std::optional<int> label0;
        bool label_set = false;
        for (size_t m = 0; m < m_count; ++m) {
            const auto& w = ds.windows[m][k];
            if (w.user_id != user0)
                out.push_back({"user_id", static_cast<int>(k), ds.modalities[0] + "/" + ds.modalities[m],
                               "user_id mismatch at index " + std::to_string(k)});
            if (w.label) {
                if (label_set && *w.label != *label0)
                    out.push_back({"label", static_cast<int>(k), ds.modalities[m],
                                   "label mismatch at index " + std::to_string(k)});
                label0 = w.label;
                label_set = true;
            }
        }
    }
    return out;
}

}  // namespace mesen
