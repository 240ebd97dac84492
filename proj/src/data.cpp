#include "mesen/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "mesen/rng.hpp"

namespace mesen {

namespace {
constexpr double kBaseFrequency = 2.0;  // cycles per window for class 0

double class_frequency(int class_idx) { return kBaseFrequency * (1.0 + class_idx / 2.0); }

// fixed channel mixing for cosine-family modalities
double mixing_weight(int c, int cp) {
    if (c == cp) return 1.0;
    return 0.25 / (1.0 + std::abs(c - cp));
}
}  // namespace

void SynthSpec::validate() const {
    if (class_count < 2) throw std::invalid_argument("synth spec: class_count must be at least 2");
    if (modality_specs.size() < 2) throw std::invalid_argument("synth spec: need at least 2 modalities");
    if (noise_sigma < 0.0) throw std::invalid_argument("synth spec: noise_sigma must be nonnegative");
    if (correlation_strength < 0.0 || correlation_strength > 1.0)
        throw std::invalid_argument("synth spec: correlation_strength must lie in [0,1]");
    if (users < 1) throw std::invalid_argument("synth spec: users must be positive");
    if (samples_per_user_per_class < 1)
        throw std::invalid_argument("synth spec: samples_per_user_per_class must be positive");
    for (const auto& m : modality_specs) {
        if (m.channels < 1) throw std::invalid_argument("synth spec: channels must be positive");
        if (m.timesteps < 8)
            throw std::invalid_argument("synth spec: timesteps must be at least 8 for the signal families");
    }
}

Matrix render_synth_window(const SynthSpec& spec, int modality, int class_idx,
                           const WindowLatent& latent, const UserEffect& effect) {
    const auto& mspec = spec.modality_specs[modality];
    const int channels = mspec.channels;
    const int steps = mspec.timesteps;
    const double f = class_frequency(class_idx) * latent.freq_scale;
    const double amp = latent.amplitude * effect.amp_scale;
    const double two_pi = 2.0 * std::numbers::pi;

    Matrix out(channels, steps);
    if (modality == 0) {
        for (int c = 0; c < channels; ++c) {
            const double offset = 0.4 * c;
            for (int t = 0; t < steps; ++t) {
                double theta = two_pi * f * t / steps + latent.phase + offset;
                out.at(c, t) = amp * std::sin(theta) + effect.dc_offset[c];
            }
        }
    } else {
        // cosine family, then fixed cross-channel mixing
        Matrix base(channels, steps);
        for (int c = 0; c < channels; ++c) {
            const double offset = -0.9 * modality + 0.4 * c;
            for (int t = 0; t < steps; ++t) {
                double theta = two_pi * f * t / steps + latent.phase + offset;
                base.at(c, t) = amp * std::cos(theta);
            }
        }
        for (int c = 0; c < channels; ++c)
            for (int t = 0; t < steps; ++t) {
                double acc = 0.0;
                for (int cp = 0; cp < channels; ++cp) acc += mixing_weight(c, cp) * base.at(cp, t);
                out.at(c, t) = acc + effect.dc_offset[c];
            }
    }
    return out;
}

PairedDataset generate_synthetic(const SynthSpec& spec, uint64_t seed, SynthDebug* debug) {
    spec.validate();
    const int m_count = static_cast<int>(spec.modality_specs.size());
    const double corr = spec.correlation_strength;

    PairedDataset ds;
    ds.class_count = spec.class_count;
    ds.windows.resize(m_count);
    for (int m = 0; m < m_count; ++m) {
        std::string id = spec.modality_specs[m].id.empty() ? "m" + std::to_string(m)
                                                           : spec.modality_specs[m].id;
        ds.modalities.push_back(id);
    }

    // sensor placement effects per (user, modality)
    std::vector<std::vector<UserEffect>> effects(spec.users, std::vector<UserEffect>(m_count));
    for (int u = 0; u < spec.users; ++u)
        for (int m = 0; m < m_count; ++m) {
            Rng rng = make_rng(derive_seed(seed, static_cast<uint64_t>(u), 1000 + m));
            std::normal_distribution<double> dc(0.0, 0.35);
            std::uniform_real_distribution<double> amp(0.7, 1.3);
            UserEffect e;
            e.dc_offset.resize(spec.modality_specs[m].channels);
            for (auto& x : e.dc_offset) x = dc(rng);
            e.amp_scale = amp(rng);
            effects[u][m] = e;
        }

    Rng rng = make_rng(derive_seed(seed, 0, 0));
    std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> freq_dist(0.95, 1.05);
    std::uniform_real_distribution<double> amp_dist(0.8, 1.2);
    std::normal_distribution<double> noise(0.0, 1.0);

    if (debug) {
        debug->samples.clear();
        debug->user_effects = effects;
    }

    for (int u = 0; u < spec.users; ++u) {
        for (int k = 0; k < spec.class_count; ++k) {
            for (int rep = 0; rep < spec.samples_per_user_per_class; ++rep) {
                WindowLatent shared{phase_dist(rng), freq_dist(rng), amp_dist(rng)};
                SampleInfo info;
                info.user = u;
                info.label = k;
                info.shared = shared;
                for (int m = 0; m < m_count; ++m) {
                    WindowLatent indep{phase_dist(rng), freq_dist(rng), amp_dist(rng)};
                    WindowLatent mixed{corr * shared.phase + (1.0 - corr) * indep.phase,
                                       corr * shared.freq_scale + (1.0 - corr) * indep.freq_scale,
                                       corr * shared.amplitude + (1.0 - corr) * indep.amplitude};
                    Matrix w = render_synth_window(spec, m, k, mixed, effects[u][m]);
                    if (spec.noise_sigma > 0.0)
                        for (auto& x : w.v) x += spec.noise_sigma * noise(rng);
                    ModalityWindow win;
                    win.modality_id = ds.modalities[m];
                    win.data = std::move(w);
                    win.user_id = u;
                    win.label = k;
                    ds.windows[m].push_back(std::move(win));
                    info.per_modality.push_back(mixed);
                }
                if (debug) debug->samples.push_back(std::move(info));
            }
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// CSV layout
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_cell(const std::string& s, const std::string& file, int row, int col) {
    size_t pos = 0;
    double x;
    try {
        x = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw std::runtime_error("ingest_csv: non-numeric cell in " + file + " at row " +
                                 std::to_string(row) + ", column " + std::to_string(col) + ": '" + s + "'");
    }
    if (pos != s.size())
        throw std::runtime_error("ingest_csv: non-numeric cell in " + file + " at row " +
                                 std::to_string(row) + ", column " + std::to_string(col) + ": '" + s + "'");
    return x;
}

long parse_index_cell(const std::string& s, const std::string& file, int row) {
    size_t pos = 0;
    long x;
    try {
        x = std::stol(s, &pos);
    } catch (const std::exception&) {
        throw std::runtime_error("ingest_csv: bad sample_index in " + file + " at row " +
                                 std::to_string(row) + ": '" + s + "'");
    }
    if (pos != s.size())
        throw std::runtime_error("ingest_csv: bad sample_index in " + file + " at row " +
                                 std::to_string(row) + ": '" + s + "'");
    return x;
}

}  // namespace

PairedDataset ingest_csv(const std::string& dir_path, const CsvSchema& schema, int class_count) {
    namespace fs = std::filesystem;
    if (schema.empty()) throw std::invalid_argument("ingest_csv: empty schema");

    // index file: sample_index -> (user, label)
    struct IndexRow {
        int user;
        std::optional<int> label;
    };
    std::map<long, IndexRow> index;
    {
        const std::string path = (fs::path(dir_path) / "index.csv").string();
        std::ifstream in(path);
        if (!in) throw std::runtime_error("ingest_csv: cannot open " + path);
        std::string line;
        if (!std::getline(in, line)) throw std::runtime_error("ingest_csv: empty index file " + path);
        auto header = split_csv_line(line);
        if (header.size() != 3 || header[0] != "sample_index" || header[1] != "user_id" ||
            header[2] != "label")
            throw std::runtime_error("ingest_csv: index.csv header must be sample_index,user_id,label");
        int row = 1;
        while (std::getline(in, line)) {
            ++row;
            if (line.empty()) continue;
            auto cells = split_csv_line(line);
            if (cells.size() != 3)
                throw std::runtime_error("ingest_csv: index.csv row " + std::to_string(row) +
                                         " has " + std::to_string(cells.size()) + " cells, expected 3");
            long idx = parse_index_cell(cells[0], "index.csv", row);
            IndexRow ir;
            ir.user = static_cast<int>(parse_index_cell(cells[1], "index.csv", row));
            if (!cells[2].empty()) ir.label = static_cast<int>(parse_index_cell(cells[2], "index.csv", row));
            if (!index.emplace(idx, ir).second)
                throw std::runtime_error("ingest_csv: duplicate sample_index " + std::to_string(idx) +
                                         " in index.csv");
        }
    }
    if (index.empty()) throw std::runtime_error("ingest_csv: index.csv lists no samples");

    PairedDataset ds;
    ds.windows.resize(schema.size());
    int m = 0;
    for (const auto& [modality, shape] : schema) {
        const auto [channels, steps] = shape;
        const std::string fname = modality + ".csv";
        const std::string path = (fs::path(dir_path) / fname).string();
        std::ifstream in(path);
        if (!in) throw std::runtime_error("ingest_csv: cannot open " + path);

        std::string line;
        if (!std::getline(in, line)) throw std::runtime_error("ingest_csv: empty modality file " + path);
        auto header = split_csv_line(line);
        const size_t expected_cells = 1 + static_cast<size_t>(channels) * steps;
        if (header.size() != expected_cells || header[0] != "sample_index")
            throw std::runtime_error("ingest_csv: " + fname + " header does not match schema (" +
                                     std::to_string(channels) + " channels x " + std::to_string(steps) +
                                     " timesteps)");

        std::map<long, Matrix> rows;
        int row = 1;
        while (std::getline(in, line)) {
            ++row;
            if (line.empty()) continue;
            auto cells = split_csv_line(line);
            if (cells.size() != expected_cells)
                throw std::runtime_error("ingest_csv: " + fname + " row " + std::to_string(row) + " has " +
                                         std::to_string(cells.size()) + " cells, expected " +
                                         std::to_string(expected_cells));
            long idx = parse_index_cell(cells[0], fname, row);
            Matrix w(channels, steps);
            for (int c = 0; c < channels; ++c)
                for (int t = 0; t < steps; ++t)
                    w.at(c, t) = parse_cell(cells[1 + c * steps + t], fname, row, 1 + c * steps + t);
            if (!rows.emplace(idx, std::move(w)).second)
                throw std::runtime_error("ingest_csv: duplicate sample_index " + std::to_string(idx) +
                                         " in " + fname);
        }

        // every index must be present in every modality file
        std::vector<long> missing, extra;
        for (const auto& [idx, _] : index)
            if (!rows.count(idx)) missing.push_back(idx);
        for (const auto& [idx, _] : rows)
            if (!index.count(idx)) extra.push_back(idx);
        if (!missing.empty() || !extra.empty()) {
            std::ostringstream msg;
            msg << "ingest_csv: " << fname << " misaligned with index.csv;";
            if (!missing.empty()) {
                msg << " missing sample_index:";
                for (long idx : missing) msg << ' ' << idx;
                msg << ';';
            }
            if (!extra.empty()) {
                msg << " unknown sample_index:";
                for (long idx : extra) msg << ' ' << idx;
            }
            throw std::runtime_error(msg.str());
        }

        ds.modalities.push_back(modality);
        for (const auto& [idx, ir] : index) {
            ModalityWindow win;
            win.modality_id = modality;
            win.data = rows.at(idx);
            win.user_id = ir.user;
            win.label = ir.label;
            ds.windows[m].push_back(std::move(win));
        }
        ++m;
    }

    if (class_count >= 0) {
        ds.class_count = class_count;
    } else {
        int max_label = -1;
        for (const auto& [idx, ir] : index)
            if (ir.label) max_label = std::max(max_label, *ir.label);
        ds.class_count = max_label + 1;
    }

    auto violations = validate_paired(ds);
    if (!violations.empty())
        throw std::runtime_error("ingest_csv: ingested data violates pairing invariants: " +
                                 violations[0].message);
    return ds;
}

void write_csv_layout(const PairedDataset& ds, const std::string& dir_path) {
    namespace fs = std::filesystem;
    fs::create_directories(dir_path);
    const int n = ds.sample_count();

    {
        std::ofstream out(fs::path(dir_path) / "index.csv");
        if (!out) throw std::runtime_error("write_csv_layout: cannot write index.csv in " + dir_path);
        out << "sample_index,user_id,label\n";
        for (int k = 0; k < n; ++k) {
            const auto& w = ds.windows[0][k];
            out << k << ',' << w.user_id << ',';
            if (w.label) out << *w.label;
            out << '\n';
        }
    }

    char buf[64];
    for (int m = 0; m < ds.modality_count(); ++m) {
        std::ofstream out(fs::path(dir_path) / (ds.modalities[m] + ".csv"));
        if (!out)
            throw std::runtime_error("write_csv_layout: cannot write " + ds.modalities[m] + ".csv");
        const auto& first = ds.windows[m][0].data;
        out << "sample_index";
        for (int c = 0; c < first.rows; ++c)
            for (int t = 0; t < first.cols; ++t) out << ",c" << c << "_t" << t;
        out << '\n';
        for (int k = 0; k < n; ++k) {
            out << k;
            const Matrix& w = ds.windows[m][k].data;
            for (double x : w.v) {
                std::snprintf(buf, sizeof(buf), "%.17g", x);
                out << ',' << buf;
            }
            out << '\n';
        }
    }
}

CsvSchema infer_csv_schema(const std::string& dir_path) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir_path)) throw std::runtime_error("infer_csv_schema: no directory " + dir_path);
    CsvSchema schema;
    for (const auto& entry : fs::directory_iterator(dir_path)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
        std::string stem = entry.path().stem().string();
        if (stem == "index") continue;
        std::ifstream in(entry.path());
        std::string header;
        if (!std::getline(in, header))
            throw std::runtime_error("infer_csv_schema: empty file " + entry.path().string());
        auto cells = split_csv_line(header);
        if (cells.size() < 2 || cells[0] != "sample_index")
            throw std::runtime_error("infer_csv_schema: " + entry.path().string() +
                                     " does not start with a sample_index header");
        const std::string& last = cells.back();
        int channels = 0, steps = 0;
        if (std::sscanf(last.c_str(), "c%d_t%d", &channels, &steps) != 2)
            throw std::runtime_error("infer_csv_schema: cannot parse column name '" + last + "' in " +
                                     entry.path().string());
        ++channels;
        ++steps;
        if (cells.size() != 1 + static_cast<size_t>(channels) * steps)
            throw std::runtime_error("infer_csv_schema: header of " + entry.path().string() +
                                     " is not a dense c*_t* grid");
        schema[stem] = {channels, steps};
    }
    if (schema.empty())
        throw std::runtime_error("infer_csv_schema: no modality csv files in " + dir_path);
    return schema;
}

// ---------------------------------------------------------------------------
// Splitting and few-label sampling
// ---------------------------------------------------------------------------

namespace {

PairedDataset subset(const PairedDataset& ds, const std::vector<int>& indices) {
    PairedDataset out;
    out.modalities = ds.modalities;
    out.class_count = ds.class_count;
    out.windows.resize(ds.windows.size());
    for (size_t m = 0; m < ds.windows.size(); ++m)
        for (int k : indices) out.windows[m].push_back(ds.windows[m][k]);
    return out;
}

}  // namespace

SplitResult split_by_user(const PairedDataset& ds, const std::set<int>& train_users,
                          const std::set<int>& eval_users, uint64_t seed) {
    for (int u : train_users)
        if (eval_users.count(u))
            throw std::invalid_argument("split_by_user: user " + std::to_string(u) +
                                        " appears in both train and eval sets");
    const int n = ds.sample_count();
    std::vector<int> train_idx, eval_idx;
    for (int k = 0; k < n; ++k) {
        int u = ds.windows[0][k].user_id;
        if (train_users.count(u)) {
            train_idx.push_back(k);
        } else if (eval_users.count(u)) {
            eval_idx.push_back(k);
        } else {
            throw std::invalid_argument("split_by_user: user " + std::to_string(u) +
                                        " is in neither user set");
        }
    }

    // stratified 1:1 validation/test split of the eval samples; classes with
    // fewer than 2 samples fall back to the unlabeled group
    std::map<int, std::vector<int>> groups;  // label (or -1) -> eval indices
    for (int k : eval_idx) {
        const auto& w = ds.windows[0][k];
        int key = w.label ? *w.label : -1;
        groups[key].push_back(k);
    }
    // merge underfilled classes into the fallback group
    std::vector<int> fallback;
    for (auto it = groups.begin(); it != groups.end();) {
        if (it->first != -1 && it->second.size() < 2) {
            fallback.insert(fallback.end(), it->second.begin(), it->second.end());
            it = groups.erase(it);
        } else {
            ++it;
        }
    }
    if (!fallback.empty()) {
        auto& g = groups[-1];
        g.insert(g.end(), fallback.begin(), fallback.end());
        std::sort(g.begin(), g.end());
    }

    Rng rng = make_rng(derive_seed(seed, 0, 42));
    std::vector<int> val_idx, test_idx;
    int odd_toggle = 0;
    for (auto& [label, idxs] : groups) {
        std::shuffle(idxs.begin(), idxs.end(), rng);
        size_t half = idxs.size() / 2;
        size_t val_take = half;
        if (idxs.size() % 2 == 1) val_take += (odd_toggle++ % 2 == 0) ? 1 : 0;
        for (size_t i = 0; i < idxs.size(); ++i)
            (i < val_take ? val_idx : test_idx).push_back(idxs[i]);
    }
    std::sort(val_idx.begin(), val_idx.end());
    std::sort(test_idx.begin(), test_idx.end());

    SplitResult res;
    res.train = subset(ds, train_idx);
    res.validation = subset(ds, val_idx);
    res.test = subset(ds, test_idx);
    return res;
}

std::vector<int> FewShotSelection::flat() const {
    std::vector<int> out;
    for (const auto& cls : labeled_indices) out.insert(out.end(), cls.begin(), cls.end());
    std::sort(out.begin(), out.end());
    return out;
}

FewShotSelection sample_few_labels(const PairedDataset& train, int n_per_class, uint64_t seed) {
    if (n_per_class < 1) throw std::invalid_argument("sample_few_labels: n_per_class must be positive");
    const int n = train.sample_count();
    const int classes = train.class_count;
    std::vector<std::vector<int>> by_class(classes);
    for (int k = 0; k < n; ++k) {
        const auto& w = train.windows[0][k];
        if (w.label) by_class[*w.label].push_back(k);
    }
    Rng rng = make_rng(derive_seed(seed, 0, 7));
    FewShotSelection sel;
    sel.labeled_indices.resize(classes);
    for (int c = 0; c < classes; ++c) {
        if (static_cast<int>(by_class[c].size()) < n_per_class)
            throw std::invalid_argument("sample_few_labels: class " + std::to_string(c) + " has only " +
                                        std::to_string(by_class[c].size()) + " labeled samples, need " +
                                        std::to_string(n_per_class));
        std::shuffle(by_class[c].begin(), by_class[c].end(), rng);
        sel.labeled_indices[c].assign(by_class[c].begin(), by_class[c].begin() + n_per_class);
        std::sort(sel.labeled_indices[c].begin(), sel.labeled_indices[c].end());
    }
    sel.labeling_rate = static_cast<double>(n_per_class) * classes / n;
    return sel;
}

}  // namespace mesen
