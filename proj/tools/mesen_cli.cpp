// Command-line surface: synthetic data generation, the two training
// stages, evaluation, the experiment grid, and feature export.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "mesen/checkpoint.hpp"
#include "mesen/config.hpp"
#include "mesen/data.hpp"
#include "mesen/evalcli.hpp"
#include "mesen/pipeline.hpp"
#include "mesen/rng.hpp"

using namespace mesen;

namespace {

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : csv) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    if (!cur.empty() || !out.empty()) out.push_back(cur);
    return out;
}

std::set<int> parse_user_set(const std::string& csv) {
    std::set<int> out;
    if (csv.empty()) return out;
    for (const auto& tok : split_list(csv)) out.insert(std::stoi(tok));
    return out;
}

// "id:channels:timesteps,id:channels:timesteps"
std::vector<ModalitySynthSpec> parse_modalities(const std::string& arg) {
    std::vector<ModalitySynthSpec> out;
    for (const auto& tok : split_list(arg)) {
        ModalitySynthSpec m;
        std::istringstream ss(tok);
        std::string field;
        if (!std::getline(ss, m.id, ':')) throw CLI::ValidationError("--modalities", "bad entry " + tok);
        if (!std::getline(ss, field, ':')) throw CLI::ValidationError("--modalities", "bad entry " + tok);
        m.channels = std::stoi(field);
        if (!std::getline(ss, field, ':')) throw CLI::ValidationError("--modalities", "bad entry " + tok);
        m.timesteps = std::stoi(field);
        out.push_back(m);
    }
    return out;
}

struct DataOptions {
    std::string data_dir;
    std::string eval_users_csv;
    uint64_t split_seed = 0;
    std::string split = "train";
};

void add_data_options(CLI::App* cmd, DataOptions& opts, bool with_split) {
    cmd->add_option("--data", opts.data_dir, "Data directory in the CSV layout")->required();
    cmd->add_option("--eval-users", opts.eval_users_csv,
                    "Comma-separated user ids held out for validation/test");
    cmd->add_option("--split-seed", opts.split_seed, "Seed for the validation/test shuffle");
    if (with_split)
        cmd->add_option("--split", opts.split, "Which split to use: train, validation, test, all")
            ->check(CLI::IsMember({"train", "validation", "test", "all"}));
}

PairedDataset load_dataset(const DataOptions& opts) {
    return ingest_csv(opts.data_dir, infer_csv_schema(opts.data_dir));
}

SplitResult split_dataset(const PairedDataset& ds, const DataOptions& opts) {
    std::set<int> eval_users = parse_user_set(opts.eval_users_csv);
    std::set<int> train_users;
    for (const auto& w : ds.windows[0]) {
        if (!eval_users.count(w.user_id)) train_users.insert(w.user_id);
    }
    return split_by_user(ds, train_users, eval_users, opts.split_seed);
}

PairedDataset select_split(const PairedDataset& ds, const DataOptions& opts) {
    if (opts.split == "all") return ds;
    SplitResult split = split_dataset(ds, opts);
    if (opts.split == "train") return std::move(split.train);
    if (opts.split == "validation") return std::move(split.validation);
    return std::move(split.test);
}

// defaults <- config file <- explicit overrides
struct ConfigOptions {
    std::string config_path;
    int64_t seed = -1;  // -1 means "keep"
    int epochs_pretrain = -1;
    int epochs_finetune = -1;
    int pretrain_batch = -1;
    int finetune_batch = -1;
};

void add_config_options(CLI::App* cmd, ConfigOptions& opts) {
    cmd->add_option("--config", opts.config_path, "TrainConfig key=value file");
    cmd->add_option("--seed", opts.seed, "Master seed override");
    cmd->add_option("--epochs-pretrain", opts.epochs_pretrain, "Pretraining epoch override");
    cmd->add_option("--epochs-finetune", opts.epochs_finetune, "Fine-tuning epoch override");
    cmd->add_option("--pretrain-batch", opts.pretrain_batch, "Pretraining batch size override");
    cmd->add_option("--finetune-batch", opts.finetune_batch, "Fine-tuning batch size override");
}

TrainConfig resolve_config(const ConfigOptions& opts, int class_count, int feature_dim_default = 64) {
    TrainConfig cfg;
    if (!opts.config_path.empty()) {
        cfg = load_config_file(opts.config_path);
        if (class_count > 0 && cfg.class_count != class_count)
            throw std::runtime_error("config class_count " + std::to_string(cfg.class_count) +
                                     " does not match dataset class count " + std::to_string(class_count));
    } else {
        cfg = default_config(class_count > 0 ? class_count : 2, feature_dim_default);
    }
    if (opts.seed >= 0) cfg.seed = opts.seed;
    if (opts.epochs_pretrain > 0) cfg.epochs_pretrain = opts.epochs_pretrain;
    if (opts.epochs_finetune > 0) cfg.epochs_finetune = opts.epochs_finetune;
    if (opts.pretrain_batch > 0) cfg.pretrain_batch = opts.pretrain_batch;
    if (opts.finetune_batch > 0) cfg.finetune_batch = opts.finetune_batch;
    cfg.validate();
    return cfg;
}

int run(int argc, char** argv) {
    CLI::App app{"MESEN: multimodal-aided pretraining for unimodal activity recognition with few labels"};
    app.require_subcommand(1);

    // ---- gen-data ----
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic paired dataset in the CSV layout");
    SynthSpec synth;
    std::string modalities_arg = "a:3:64,b:3:64";
    std::string gen_out;
    uint64_t gen_seed = 1;
    gen->add_option("--classes", synth.class_count, "Activity class count");
    gen->add_option("--modalities", modalities_arg, "id:channels:timesteps, comma-separated");
    gen->add_option("--users", synth.users, "User count");
    gen->add_option("--samples-per-user-per-class", synth.samples_per_user_per_class, "Windows per user per class");
    gen->add_option("--noise-sigma", synth.noise_sigma, "Additive noise scale");
    gen->add_option("--correlation", synth.correlation_strength, "Latent sharing strength in [0,1]");
    gen->add_option("--seed", gen_seed, "Generation seed");
    gen->add_option("--out", gen_out, "Output directory")->required();

    // ---- pretrain ----
    auto* pre = app.add_subcommand("pretrain", "Multimodal-aided pretraining on the train split");
    DataOptions pre_data;
    ConfigOptions pre_cfg;
    std::string pre_out, pre_history_out, pre_objective = "full";
    bool pre_intra = false;
    add_data_options(pre, pre_data, false);
    add_config_options(pre, pre_cfg);
    pre->add_option("--out", pre_out, "Checkpoint path")->required();
    pre->add_option("--history-out", pre_history_out, "Loss history CSV path");
    pre->add_flag("--intra-negatives", pre_intra, "Include intra-modality negatives (ablation)");
    pre->add_option("--objective", pre_objective, "full, cmf_only or mpc_only")
        ->check(CLI::IsMember({"full", "cmf_only", "mpc_only"}));

    // ---- finetune ----
    auto* fin = app.add_subcommand("finetune", "Few-label unimodal fine-tuning from a checkpoint");
    DataOptions fin_data;
    ConfigOptions fin_cfg;
    std::string fin_ck, fin_modality, fin_out;
    int fin_labels = 1;
    add_data_options(fin, fin_data, false);
    add_config_options(fin, fin_cfg);
    fin->add_option("--checkpoint", fin_ck, "Pretraining checkpoint")->required();
    fin->add_option("--modality", fin_modality, "Target modality id")->required();
    fin->add_option("--labels-per-class", fin_labels, "Labeled samples per class");
    fin->add_option("--out", fin_out, "Output model path")->required();

    // ---- baseline ----
    auto* base = app.add_subcommand("baseline", "Supervised unimodal baseline on the same few labels");
    DataOptions base_data;
    ConfigOptions base_cfg;
    std::string base_modality, base_out;
    int base_labels = 1;
    add_data_options(base, base_data, false);
    add_config_options(base, base_cfg);
    base->add_option("--modality", base_modality, "Target modality id")->required();
    base->add_option("--labels-per-class", base_labels, "Labeled samples per class");
    base->add_option("--out", base_out, "Output model path")->required();

    // ---- eval ----
    auto* ev = app.add_subcommand("eval", "Evaluate a fine-tuned model on a split");
    DataOptions ev_data;
    std::string ev_model, ev_modality;
    ev_data.split = "test";
    add_data_options(ev, ev_data, true);
    ev->add_option("--model", ev_model, "Fine-tuned model path")->required();
    ev->add_option("--modality", ev_modality, "Modality id (defaults to the model's)");

    // ---- grid ----
    auto* gr = app.add_subcommand("grid", "Run the methods x budgets x repetitions experiment grid");
    DataOptions gr_data;
    ConfigOptions gr_cfg;
    std::string gr_methods = "mesen,labeltrain", gr_budgets = "1", gr_modalities, gr_out;
    int gr_reps = 5, gr_workers = 1;
    add_data_options(gr, gr_data, false);
    add_config_options(gr, gr_cfg);
    gr->add_option("--methods", gr_methods, "mesen,labeltrain,intra_negatives_ablation,cmf_only,mpc_only");
    gr->add_option("--budgets", gr_budgets, "Comma-separated labels-per-class budgets");
    gr->add_option("--reps", gr_reps, "Repetitions per cell");
    gr->add_option("--modalities", gr_modalities, "Target modalities (default: all)");
    gr->add_option("--out", gr_out, "Results CSV path");
    gr->add_option("--workers", gr_workers, "Concurrent repetition workers");

    // ---- export-features ----
    auto* ex = app.add_subcommand("export-features", "Export projector features for external tools");
    DataOptions ex_data;
    std::string ex_ck, ex_modality, ex_out;
    ex_data.split = "all";
    add_data_options(ex, ex_data, true);
    ex->add_option("--checkpoint", ex_ck, "Pretraining checkpoint")->required();
    ex->add_option("--modality", ex_modality, "Modality id")->required();
    ex->add_option("--out", ex_out, "Output CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    if (gen->parsed()) {
        synth.modality_specs = parse_modalities(modalities_arg);
        PairedDataset ds = generate_synthetic(synth, gen_seed);
        write_csv_layout(ds, gen_out);
        std::cout << "wrote " << ds.sample_count() << " paired windows x " << ds.modality_count()
                  << " modalities to " << gen_out << "\n";
        return 0;
    }

    if (pre->parsed()) {
        PairedDataset ds = load_dataset(pre_data);
        PairedDataset train = ds;
        if (!pre_data.eval_users_csv.empty()) {
            pre_data.split = "train";
            train = select_split(ds, pre_data);
        }
        TrainConfig cfg = resolve_config(pre_cfg, ds.class_count);
        PretrainOptions opts;
        opts.include_intra_negatives = pre_intra;
        if (pre_objective == "cmf_only") opts.objective = PretrainObjective::CmfOnly;
        if (pre_objective == "mpc_only") opts.objective = PretrainObjective::MpcOnly;
        PretrainCheckpoint ck = pretrain(train, cfg, opts);
        save_pretrain_checkpoint(ck, pre_out);
        if (!pre_history_out.empty()) write_history_csv(ck.history, pre_history_out);
        std::cout << "pretrained " << ck.variant << " on " << train.sample_count() << " windows, "
                  << ck.history.size() << " steps, final l_pt "
                  << (ck.history.empty() ? 0.0 : ck.history.back().l_pt) << ", saved " << pre_out << "\n";
        return 0;
    }

    if (fin->parsed()) {
        PretrainCheckpoint ck = load_pretrain_checkpoint(fin_ck);
        PairedDataset ds = load_dataset(fin_data);
        fin_data.split = "train";
        PairedDataset train = fin_data.eval_users_csv.empty() ? ds : select_split(ds, fin_data);
        TrainConfig cfg = fin_cfg.config_path.empty() ? ck.config : load_config_file(fin_cfg.config_path);
        if (fin_cfg.seed >= 0) cfg.seed = fin_cfg.seed;
        if (fin_cfg.epochs_finetune > 0) cfg.epochs_finetune = fin_cfg.epochs_finetune;
        if (fin_cfg.finetune_batch > 0) cfg.finetune_batch = fin_cfg.finetune_batch;
        FewShotSelection sel = sample_few_labels(train, fin_labels,
                                                 derive_seed(static_cast<uint64_t>(cfg.seed), 0, 800));
        UnimodalModel model = finetune(ck, fin_modality, train, sel, cfg);
        save_unimodal_model(model, fin_out);
        std::cout << "fine-tuned " << fin_modality << " on " << sel.flat().size()
                  << " labels (labeling rate " << 100.0 * sel.labeling_rate << "%), saved " << fin_out
                  << "\n";
        return 0;
    }

    if (base->parsed()) {
        PairedDataset ds = load_dataset(base_data);
        base_data.split = "train";
        PairedDataset train = base_data.eval_users_csv.empty() ? ds : select_split(ds, base_data);
        TrainConfig cfg = resolve_config(base_cfg, ds.class_count);
        FewShotSelection sel = sample_few_labels(train, base_labels,
                                                 derive_seed(static_cast<uint64_t>(cfg.seed), 0, 800));
        UnimodalModel model = train_supervised_baseline(base_modality, train, sel, cfg);
        save_unimodal_model(model, base_out);
        std::cout << "trained baseline " << base_modality << " on " << sel.flat().size()
                  << " labels, saved " << base_out << "\n";
        return 0;
    }

    if (ev->parsed()) {
        UnimodalModel model = load_unimodal_model(ev_model);
        PairedDataset ds = load_dataset(ev_data);
        PairedDataset part = select_split(ds, ev_data);
        std::string modality = ev_modality.empty() ? model.modality_id : ev_modality;
        MetricsReport rep = evaluate(model, part, modality);
        std::cout << "split=" << ev_data.split << " modality=" << modality << " n=" << rep.n_test
                  << " accuracy=" << rep.accuracy << " macro_f1=" << rep.macro_f1 << "\n";
        for (size_t c = 0; c < rep.per_class.size(); ++c)
            std::cout << "class " << c << ": precision=" << rep.per_class[c].precision
                      << " recall=" << rep.per_class[c].recall << " f1=" << rep.per_class[c].f1
                      << " support=" << rep.per_class[c].support << "\n";
        return 0;
    }

    if (gr->parsed()) {
        PairedDataset ds = load_dataset(gr_data);
        SplitResult split = split_dataset(ds, gr_data);
        if (split.test.sample_count() == 0)
            throw std::runtime_error("grid: empty test split; pass --eval-users");
        TrainConfig cfg = resolve_config(gr_cfg, ds.class_count);
        ExperimentGrid grid;
        for (const auto& m : split_list(gr_methods)) grid.methods.push_back(parse_grid_method(m));
        for (const auto& b : split_list(gr_budgets)) grid.label_budgets.push_back(std::stoi(b));
        grid.repetitions = gr_reps;
        grid.workers = gr_workers;
        if (!gr_modalities.empty()) grid.modality_targets = split_list(gr_modalities);
        GridResult res = run_grid(split.train, split.test, grid, cfg);
        std::cout << res.to_text();
        if (!gr_out.empty()) {
            std::ofstream out(gr_out);
            if (!out) throw std::runtime_error("grid: cannot write " + gr_out);
            out << res.to_csv();
            std::cout << "wrote " << gr_out << "\n";
        }
        return 0;
    }

    if (ex->parsed()) {
        PretrainCheckpoint ck = load_pretrain_checkpoint(ex_ck);
        PairedDataset ds = load_dataset(ex_data);
        PairedDataset part = select_split(ds, ex_data);
        export_features(ck, part, ex_modality, ex_out);
        std::cout << "exported " << part.sample_count() << " feature rows to " << ex_out << "\n";
        return 0;
    }

    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (auto& ch : msg)
            if (ch == '\n') ch = ' ';
        std::cerr << "error: " << msg << "\n";
        return 1;
    }
}
