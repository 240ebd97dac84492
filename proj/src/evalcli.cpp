#include "mesen/evalcli.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "mesen/rng.hpp"

namespace mesen {

namespace {
constexpr int kEvalBatch = 256;

Tensor3 gather_range(const PairedDataset& ds, int modality, int start, int count) {
    const Matrix& first = ds.windows[modality][start].data;
    Tensor3 x(count, first.rows, first.cols);
    for (int i = 0; i < count; ++i) {
        const Matrix& w = ds.windows[modality][start + i].data;
        std::copy(w.v.begin(), w.v.end(), x.sample(i));
    }
    return x;
}
}  // namespace

std::vector<int> predict_labels(const UnimodalModel& model, const PairedDataset& ds,
                                const std::string& modality_id) {
    int m = ds.modality_index(modality_id);
    if (m < 0) throw std::invalid_argument("predict: modality '" + modality_id + "' not in dataset");
    const int n = ds.sample_count();
    std::vector<int> out;
    out.reserve(n);
    for (int start = 0; start < n; start += kEvalBatch) {
        const int take = std::min(kEvalBatch, n - start);
        Tensor3 x = gather_range(ds, m, start, take);
        Matrix probs = model.head.predict(model.encoder.predict(x));
        for (int i = 0; i < take; ++i) {
            int best = 0;
            for (int c = 1; c < probs.cols; ++c)
                if (probs.at(i, c) > probs.at(i, best)) best = c;  // ties to lowest index
            out.push_back(best);
        }
    }
    return out;
}

MetricsReport evaluate(const UnimodalModel& model, const PairedDataset& test,
                       const std::string& modality_id) {
    int m = test.modality_index(modality_id);
    if (m < 0) throw std::invalid_argument("evaluate: modality '" + modality_id + "' not in test set");
    const int n = test.sample_count();
    if (n == 0) throw std::invalid_argument("evaluate: empty test set");
    if (model.config.class_count != test.class_count)
        throw std::invalid_argument("evaluate: model has " + std::to_string(model.config.class_count) +
                                    " classes, dataset has " + std::to_string(test.class_count));

    std::vector<int> truth(n);
    for (int k = 0; k < n; ++k) {
        const auto& w = test.windows[m][k];
        if (!w.label)
            throw std::invalid_argument("evaluate: test sample " + std::to_string(k) + " has no label");
        truth[k] = *w.label;
    }
    std::vector<int> pred = predict_labels(model, test, modality_id);

    const int classes = test.class_count;
    std::vector<int> tp(classes, 0), fp(classes, 0), fn(classes, 0), support(classes, 0);
    int correct = 0;
    for (int k = 0; k < n; ++k) {
        ++support[truth[k]];
        if (pred[k] == truth[k]) {
            ++correct;
            ++tp[truth[k]];
        } else {
            ++fp[pred[k]];
            ++fn[truth[k]];
        }
    }

    MetricsReport rep;
    rep.n_test = n;
    rep.seed = model.config.seed;
    rep.accuracy = static_cast<double>(correct) / n;
    rep.per_class.resize(classes);
    double f1_sum = 0.0;
    for (int c = 0; c < classes; ++c) {
        auto& pc = rep.per_class[c];
        pc.support = support[c];
        const int denom_p = tp[c] + fp[c];
        const int denom_r = tp[c] + fn[c];
        pc.precision = denom_p > 0 ? static_cast<double>(tp[c]) / denom_p : 0.0;
        pc.recall = denom_r > 0 ? static_cast<double>(tp[c]) / denom_r : 0.0;
        pc.f1 = (pc.precision + pc.recall) > 0.0
                    ? 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall)
                    : 0.0;
        f1_sum += pc.f1;
    }
    rep.macro_f1 = f1_sum / classes;
    return rep;
}

void export_features(const PretrainCheckpoint& ck, const PairedDataset& ds,
                     const std::string& modality_id, const std::string& out_path) {
    int cm = ck.modality_index(modality_id);
    if (cm < 0)
        throw std::invalid_argument("export_features: modality '" + modality_id + "' not in checkpoint");
    int dm = ds.modality_index(modality_id);
    if (dm < 0)
        throw std::invalid_argument("export_features: modality '" + modality_id + "' not in dataset");

    std::ofstream out(out_path);
    if (!out) throw std::runtime_error("export_features: cannot write " + out_path);
    out << "sample_index,label";
    for (int j = 0; j < ck.config.feature_dim; ++j) out << ",f" << j;
    out << '\n';

    char buf[64];
    const int n = ds.sample_count();
    for (int start = 0; start < n; start += kEvalBatch) {
        const int take = std::min(kEvalBatch, n - start);
        Tensor3 x = gather_range(ds, dm, start, take);
        Matrix features = ck.projectors[cm].predict(ck.encoders[cm].predict(x));
        for (int i = 0; i < take; ++i) {
            const auto& w = ds.windows[dm][start + i];
            out << (start + i) << ',';
            if (w.label) out << *w.label;
            for (int j = 0; j < features.cols; ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", features.at(i, j));
                out << ',' << buf;
            }
            out << '\n';
        }
    }
    if (!out) throw std::runtime_error("export_features: write failed for " + out_path);
}

// ---------------------------------------------------------------------------
// Grid runner
// ---------------------------------------------------------------------------

std::string grid_method_name(GridMethod m) {
    switch (m) {
        case GridMethod::Mesen: return "mesen";
        case GridMethod::Labeltrain: return "labeltrain";
        case GridMethod::IntraNegativesAblation: return "intra_negatives_ablation";
        case GridMethod::CmfOnly: return "cmf_only";
        case GridMethod::MpcOnly: return "mpc_only";
    }
    return "?";
}

GridMethod parse_grid_method(const std::string& name) {
    if (name == "mesen") return GridMethod::Mesen;
    if (name == "labeltrain") return GridMethod::Labeltrain;
    if (name == "intra_negatives_ablation") return GridMethod::IntraNegativesAblation;
    if (name == "cmf_only") return GridMethod::CmfOnly;
    if (name == "mpc_only") return GridMethod::MpcOnly;
    throw std::invalid_argument("unknown grid method '" + name + "'");
}

void ExperimentGrid::validate() const {
    if (methods.empty()) throw std::invalid_argument("grid: no methods requested");
    if (label_budgets.empty()) throw std::invalid_argument("grid: no label budgets requested");
    for (int b : label_budgets)
        if (b < 1) throw std::invalid_argument("grid: label budgets must be at least 1");
    if (repetitions < 1) throw std::invalid_argument("grid: repetitions must be at least 1");
    if (workers < 1) throw std::invalid_argument("grid: workers must be at least 1");
}

namespace {

struct CellSample {
    double acc = 0.0, f1 = 0.0;
};

struct RunTask {
    GridMethod method;
    int rep;
};

PretrainOptions options_for(GridMethod m) {
    PretrainOptions opts;
    if (m == GridMethod::IntraNegativesAblation) opts.include_intra_negatives = true;
    if (m == GridMethod::CmfOnly) opts.objective = PretrainObjective::CmfOnly;
    if (m == GridMethod::MpcOnly) opts.objective = PretrainObjective::MpcOnly;
    return opts;
}

void mean_sd(const std::vector<double>& xs, double& mean, double& sd) {
    mean = 0.0;
    for (double x : xs) mean += x;
    mean /= xs.size();
    sd = 0.0;
    if (xs.size() > 1) {
        for (double x : xs) sd += (x - mean) * (x - mean);
        sd = std::sqrt(sd / (xs.size() - 1));
    }
}

}  // namespace

GridResult run_grid(const PairedDataset& train, const PairedDataset& test, const ExperimentGrid& grid,
                    const TrainConfig& cfg) {
    grid.validate();
    std::vector<std::string> targets =
        grid.modality_targets.empty() ? train.modalities : grid.modality_targets;
    for (const auto& t : targets)
        if (train.modality_index(t) < 0)
            throw std::invalid_argument("grid: modality '" + t + "' not in training data");

    // label selections are shared across methods and repetitions so only
    // model initialization varies between repetitions
    std::map<int, FewShotSelection> selections;
    for (int b : grid.label_budgets)
        if (!selections.count(b))
            selections.emplace(b, sample_few_labels(train, b,
                                                    derive_seed(static_cast<uint64_t>(cfg.seed), 12345, b)));

    std::vector<RunTask> tasks;
    for (GridMethod m : grid.methods)
        for (int rep = 0; rep < grid.repetitions; ++rep) tasks.push_back({m, rep});

    // results[task][budget][modality]
    std::vector<std::map<int, std::map<std::string, CellSample>>> results(tasks.size());
    std::vector<std::string> failures(tasks.size());

    auto run_task = [&](size_t ti) {
        const RunTask& task = tasks[ti];
        TrainConfig rep_cfg = cfg;
        rep_cfg.seed = static_cast<int64_t>(
            derive_seed(static_cast<uint64_t>(cfg.seed), static_cast<uint64_t>(task.rep),
                        800 + static_cast<uint64_t>(task.method)));
        PretrainCheckpoint ck;
        const bool needs_pretrain = task.method != GridMethod::Labeltrain;
        if (needs_pretrain) ck = pretrain(train, rep_cfg, options_for(task.method));
        for (int budget : grid.label_budgets) {
            const FewShotSelection& sel = selections.at(budget);
            for (const auto& modality : targets) {
                UnimodalModel model =
                    needs_pretrain ? finetune(ck, modality, train, sel, rep_cfg)
                                   : train_supervised_baseline(modality, train, sel, rep_cfg);
                MetricsReport report = evaluate(model, test, modality);
                results[ti][budget][modality] = {report.accuracy, report.macro_f1};
            }
        }
    };

    const int worker_count = std::min<int>(grid.workers, static_cast<int>(tasks.size()));
    if (worker_count <= 1) {
        for (size_t ti = 0; ti < tasks.size(); ++ti) {
            try {
                run_task(ti);
            } catch (const std::exception& e) {
                failures[ti] = e.what();
            }
            if (!failures[ti].empty()) break;
        }
    } else {
        std::atomic<size_t> next{0};
        auto worker = [&]() {
            while (true) {
                size_t ti = next.fetch_add(1);
                if (ti >= tasks.size()) return;
                try {
                    run_task(ti);
                } catch (const std::exception& e) {
                    failures[ti] = e.what();
                }
            }
        };
        std::vector<std::thread> pool;
        for (int w = 0; w < worker_count; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (size_t ti = 0; ti < tasks.size(); ++ti)
        if (!failures[ti].empty())
            throw std::runtime_error("grid: cell failed (method " + grid_method_name(tasks[ti].method) +
                                     ", repetition " + std::to_string(tasks[ti].rep) + "): " +
                                     failures[ti]);

    GridResult out;
    for (GridMethod m : grid.methods) {
        for (int budget : grid.label_budgets) {
            for (const auto& modality : targets) {
                std::vector<double> accs, f1s;
                for (size_t ti = 0; ti < tasks.size(); ++ti) {
                    if (tasks[ti].method != m) continue;
                    const auto& sample = results[ti].at(budget).at(modality);
                    accs.push_back(sample.acc);
                    f1s.push_back(sample.f1);
                }
                GridCell cell;
                cell.method = m;
                cell.modality = modality;
                cell.budget = budget;
                cell.labeling_rate = selections.at(budget).labeling_rate;
                cell.repetitions = static_cast<int>(accs.size());
                mean_sd(accs, cell.acc_mean, cell.acc_sd);
                mean_sd(f1s, cell.f1_mean, cell.f1_sd);
                out.cells.push_back(cell);
            }
        }
    }
    return out;
}

std::string GridResult::to_text() const {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-26s %-10s %7s %9s %17s %17s %5s\n", "method", "modality",
                  "n/class", "rate", "accuracy", "macro_f1", "reps");
    out << line;
    out << std::string(96, '-') << '\n';
    for (const auto& c : cells) {
        std::snprintf(line, sizeof(line), "%-26s %-10s %7d %8.2f%% %8.4f +-%6.4f %8.4f +-%6.4f %5d\n",
                      grid_method_name(c.method).c_str(), c.modality.c_str(), c.budget,
                      100.0 * c.labeling_rate, c.acc_mean, c.acc_sd, c.f1_mean, c.f1_sd, c.repetitions);
        out << line;
    }
    return out.str();
}

std::string GridResult::to_csv() const {
    std::ostringstream out;
    out << "method,modality,budget,labeling_rate_percent,acc_mean,acc_sd,f1_mean,f1_sd,repetitions\n";
    char buf[160];
    for (const auto& c : cells) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%d,%.2f,%.6f,%.6f,%.6f,%.6f,%d\n",
                      grid_method_name(c.method).c_str(), c.modality.c_str(), c.budget,
                      100.0 * c.labeling_rate, c.acc_mean, c.acc_sd, c.f1_mean, c.f1_sd, c.repetitions);
        out << buf;
    }
    return out.str();
}

}  // namespace mesen
