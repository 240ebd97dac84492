#include "mesen/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mesen/losses.hpp"
#include "mesen/optim.hpp"
#include "mesen/rng.hpp"

namespace mesen {

namespace {

// seed streams under the master seed
constexpr uint64_t kStreamEncoder = 100;
constexpr uint64_t kStreamProjector = 200;
constexpr uint64_t kStreamPseudoHead = 300;
constexpr uint64_t kStreamPretrainShuffle = 400;
constexpr uint64_t kStreamFinetuneHead = 500;
constexpr uint64_t kStreamBaselineEncoder = 600;
constexpr uint64_t kStreamFinetuneShuffle = 700;

Tensor3 gather_batch(const PairedDataset& ds, int modality, const std::vector<int>& indices) {
    const Matrix& first = ds.windows[modality][indices[0]].data;
    Tensor3 x(static_cast<int>(indices.size()), first.rows, first.cols);
    for (size_t i = 0; i < indices.size(); ++i) {
        const Matrix& w = ds.windows[modality][indices[i]].data;
        std::copy(w.v.begin(), w.v.end(), x.sample(static_cast<int>(i)));
    }
    return x;
}

void require_valid(const PairedDataset& ds, const char* who) {
    auto violations = validate_paired(ds);
    if (!violations.empty())
        throw std::invalid_argument(std::string(who) + ": dataset invalid: " + violations[0].message);
}

std::string describe(const LossBreakdown& b) {
    std::ostringstream out;
    out << "l_cmf=" << b.l_cmf << " l_mpc=" << b.l_mpc << " l_pr=" << b.l_pr << " delta=" << b.delta
        << " l_pt=" << b.l_pt;
    return out.str();
}

}  // namespace

PretrainCheckpoint pretrain(const PairedDataset& ds_train, const TrainConfig& cfg,
                            const PretrainOptions& opts) {
    require_valid(ds_train, "pretrain");
    const int m_count = ds_train.modality_count();
    if (m_count < 2) throw std::invalid_argument("pretrain: need at least 2 modalities");
    const int n = ds_train.sample_count();
    if (n < 2) throw std::invalid_argument("pretrain: need at least 2 paired samples");
    if (cfg.pretrain_batch > n)
        throw std::invalid_argument("pretrain: batch size " + std::to_string(cfg.pretrain_batch) +
                                    " exceeds dataset size " + std::to_string(n));

    PretrainCheckpoint ck;
    ck.variant = opts.include_intra_negatives ? kVariantIntraNegatives
                 : opts.objective == PretrainObjective::CmfOnly
                     ? kVariantCmfOnly
                     : (opts.objective == PretrainObjective::MpcOnly ? kVariantMpcOnly : kVariantMesen);
    ck.config = cfg;
    ck.modalities = ds_train.modalities;

    const uint64_t master = static_cast<uint64_t>(cfg.seed);
    for (int m = 0; m < m_count; ++m) {
        const Matrix& w0 = ds_train.windows[m][0].data;
        ck.input_shapes.emplace_back(w0.rows, w0.cols);
        ck.encoders.emplace_back(w0.rows, w0.cols, cfg, derive_seed(master, 0, kStreamEncoder + m));
        ck.projectors.emplace_back(cfg.encoder_dim(), cfg.feature_dim,
                                   derive_seed(master, 0, kStreamProjector + m));
    }
    ck.pseudo_head = Head(cfg.feature_dim, cfg.class_count, derive_seed(master, 0, kStreamPseudoHead));

    std::vector<Layer*> all_blocks;
    for (auto& e : ck.encoders)
        for (Layer* l : e.blocks()) all_blocks.push_back(l);
    for (auto& p : ck.projectors)
        for (Layer* l : p.blocks()) all_blocks.push_back(l);
    for (Layer* l : ck.pseudo_head.blocks()) all_blocks.push_back(l);
    Adam adam(all_blocks, cfg.learning_rate);

    std::vector<std::pair<int, int>> pairs;
    for (int a = 0; a < m_count; ++a)
        for (int b = a + 1; b < m_count; ++b) pairs.emplace_back(a, b);
    const double pair_scale = 1.0 / pairs.size();

    Rng shuffle_rng = make_rng(derive_seed(master, 0, kStreamPretrainShuffle));
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;

    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs_pretrain; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (int start = 0; start < n; start += cfg.pretrain_batch) {
            const int take = std::min(cfg.pretrain_batch, n - start);
            if (take < 2) break;  // drop short final batch
            std::vector<int> batch(order.begin() + start, order.begin() + start + take);

            // features per modality, pseudo-probabilities via one stacked
            // pass through the shared head
            std::vector<Matrix> hidden(m_count), features(m_count), z(m_count);
            for (int m = 0; m < m_count; ++m) {
                Tensor3 x = gather_batch(ds_train, m, batch);
                hidden[m] = ck.encoders[m].forward(x, true);
                features[m] = ck.projectors[m].forward(hidden[m], true);
                if (opts.objective != PretrainObjective::MpcOnly)
                    z[m] = apply_m_norm(features[m], cfg.m_norm_mode);
            }
            Matrix stacked(m_count * take, cfg.feature_dim);
            for (int m = 0; m < m_count; ++m)
                std::copy(features[m].v.begin(), features[m].v.end(),
                          stacked.row(m * take));
            Matrix probs;
            if (opts.objective != PretrainObjective::CmfOnly) probs = ck.pseudo_head.forward(stacked, true);
            auto probs_slice = [&](int m) {
                Matrix out(take, cfg.class_count);
                std::copy(probs.row(m * take), probs.row(m * take) + out.v.size(), out.v.begin());
                return out;
            };

            LossBreakdown bd;
            std::vector<Matrix> d_z(m_count), d_probs(m_count);
            for (int m = 0; m < m_count; ++m) {
                if (opts.objective != PretrainObjective::MpcOnly) d_z[m] = Matrix(take, cfg.feature_dim);
                if (opts.objective != PretrainObjective::CmfOnly) d_probs[m] = Matrix(take, cfg.class_count);
            }

            std::vector<PseudoAlignResult> aligns(pairs.size());
            for (size_t p = 0; p < pairs.size(); ++p) {
                auto [a, b] = pairs[p];
                if (opts.objective != PretrainObjective::MpcOnly) {
                    auto cm = cross_modal_loss(FeatureBatch{z[a], ds_train.modalities[a]},
                                               FeatureBatch{z[b], ds_train.modalities[b]}, cfg.tau,
                                               cfg.alpha, cfg.beta, opts.include_intra_negatives);
                    bd.l_cmf += pair_scale * cm.value;
                    for (auto& [key, v] : cm.per_direction) bd.per_direction[key] = v;
                    for (size_t u = 0; u < cm.grad_a.v.size(); ++u) {
                        d_z[a].v[u] += pair_scale * cm.grad_a.v[u];
                        d_z[b].v[u] += pair_scale * cm.grad_b.v[u];
                    }
                }
                if (opts.objective != PretrainObjective::CmfOnly) {
                    aligns[p] = pseudo_align_loss(PseudoProbMatrix{probs_slice(a), ds_train.modalities[a]},
                                                  PseudoProbMatrix{probs_slice(b), ds_train.modalities[b]},
                                                  cfg.tau_hat, cfg.lambda_pr, cfg.column_norm);
                    bd.l_mpc += pair_scale * aligns[p].value;
                    bd.l_pr += pair_scale * aligns[p].l_pr;
                }
            }

            // loss balancing: delta is a per-batch constant
            switch (opts.objective) {
                case PretrainObjective::Full:
                    bd.delta = std::fabs(bd.l_cmf) / std::max(std::fabs(bd.l_mpc), 1e-8);
                    break;
                case PretrainObjective::CmfOnly:
                    bd.delta = 0.0;
                    break;
                case PretrainObjective::MpcOnly:
                    bd.delta = 1.0;
                    break;
            }
            bd.l_pt = bd.l_cmf + bd.delta * bd.l_mpc;
            if (!std::isfinite(bd.l_pt))
                throw std::runtime_error("pretrain: non-finite loss at step " + std::to_string(step) +
                                         " (" + describe(bd) + ")");

            const double mpc_weight = bd.delta;
            if (opts.objective != PretrainObjective::CmfOnly) {
                for (size_t p = 0; p < pairs.size(); ++p) {
                    auto [a, b] = pairs[p];
                    for (size_t u = 0; u < aligns[p].grad_a.v.size(); ++u) {
                        d_probs[a].v[u] += mpc_weight * pair_scale * aligns[p].grad_a.v[u];
                        d_probs[b].v[u] += mpc_weight * pair_scale * aligns[p].grad_b.v[u];
                    }
                }
            }

            for (auto& e : ck.encoders) e.zero_grad();
            for (auto& pj : ck.projectors) pj.zero_grad();
            ck.pseudo_head.zero_grad();

            std::vector<Matrix> d_features(m_count);
            for (int m = 0; m < m_count; ++m)
                d_features[m] = opts.objective != PretrainObjective::MpcOnly
                                    ? apply_m_norm_backward(features[m], d_z[m], cfg.m_norm_mode)
                                    : Matrix(take, cfg.feature_dim);
            if (opts.objective != PretrainObjective::CmfOnly) {
                Matrix d_stacked(m_count * take, cfg.class_count);
                for (int m = 0; m < m_count; ++m)
                    std::copy(d_probs[m].v.begin(), d_probs[m].v.end(), d_stacked.row(m * take));
                Matrix d_from_head = ck.pseudo_head.backward(d_stacked);
                for (int m = 0; m < m_count; ++m)
                    for (size_t u = 0; u < d_features[m].v.size(); ++u)
                        d_features[m].v[u] += d_from_head.v[m * take * cfg.feature_dim + u];
            }
            for (int m = 0; m < m_count; ++m) {
                Matrix dh = ck.projectors[m].backward(d_features[m]);
                ck.encoders[m].backward(dh);
            }
            adam.step();
            ck.history.push_back(std::move(bd));
            ++step;
        }
    }
    return ck;
}

PretrainCheckpoint ablation_intra_negatives(const PairedDataset& ds_train, const TrainConfig& cfg) {
    PretrainOptions opts;
    opts.include_intra_negatives = true;
    return pretrain(ds_train, cfg, opts);
}

namespace {

struct LabeledSet {
    std::vector<int> indices;
    std::vector<int> labels;
};

LabeledSet collect_selection(const PairedDataset& train, int modality, const FewShotSelection& sel) {
    LabeledSet out;
    for (const auto& cls : sel.labeled_indices)
        for (int idx : cls) {
            if (idx < 0 || idx >= train.sample_count())
                throw std::invalid_argument("finetune: selection index " + std::to_string(idx) +
                                            " outside the training set");
            const auto& w = train.windows[modality][idx];
            if (!w.label)
                throw std::invalid_argument("finetune: selected sample " + std::to_string(idx) +
                                            " carries no label");
            out.indices.push_back(idx);
            out.labels.push_back(*w.label);
        }
    if (out.indices.empty()) throw std::invalid_argument("finetune: empty selection");
    return out;
}

UnimodalModel train_unimodal(Encoder encoder, const std::string& modality_id, int modality,
                             const PairedDataset& train, const FewShotSelection& sel,
                             const TrainConfig& cfg, bool use_reg, std::vector<double>* loss_history) {
    LabeledSet set = collect_selection(train, modality, sel);
    const int n_sel = static_cast<int>(set.indices.size());
    const int batch_size = std::min(cfg.finetune_batch, n_sel);
    const uint64_t master = static_cast<uint64_t>(cfg.seed);

    Head head(cfg.encoder_dim(), cfg.class_count, derive_seed(master, 0, kStreamFinetuneHead));

    ParamSnapshot reference;
    const ParamSnapshot* ref_ptr = nullptr;
    std::vector<double> gamma;
    if (use_reg && cfg.lambda_fr > 0.0) {
        gamma = cfg.resolve_gamma(encoder.layer_count());
        if (cfg.reg_target == RegTarget::Checkpoint) {
            reference = encoder.snapshot_params();
            ref_ptr = &reference;
        }
    }

    std::vector<Layer*> blocks;
    for (Layer* l : encoder.blocks()) blocks.push_back(l);
    for (Layer* l : head.blocks()) blocks.push_back(l);
    Adam adam(blocks, cfg.learning_rate);

    Rng shuffle_rng = make_rng(derive_seed(master, 0, kStreamFinetuneShuffle));
    std::vector<int> order(n_sel);
    for (int i = 0; i < n_sel; ++i) order[i] = i;

    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs_finetune; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (int start = 0; start < n_sel; start += batch_size) {
            const int take = std::min(batch_size, n_sel - start);  // short batches kept
            std::vector<int> batch_idx;
            std::vector<int> batch_labels;
            for (int i = 0; i < take; ++i) {
                batch_idx.push_back(set.indices[order[start + i]]);
                batch_labels.push_back(set.labels[order[start + i]]);
            }
            Tensor3 x = gather_batch(train, modality, batch_idx);
            Matrix h = encoder.forward(x, true);
            Matrix probs = head.forward(h, true);
            auto ce = cross_entropy_loss(probs, batch_labels);
            double loss = ce.value;
            if (use_reg && cfg.lambda_fr > 0.0)
                loss += cfg.lambda_fr * finetune_reg(encoder, head, gamma, ref_ptr);
            if (!std::isfinite(loss))
                throw std::runtime_error("finetune: non-finite loss at step " + std::to_string(step));
            if (loss_history) loss_history->push_back(loss);

            encoder.zero_grad();
            head.zero_grad();
            Matrix dh = head.backward(ce.grad);
            encoder.backward(dh);
            if (use_reg && cfg.lambda_fr > 0.0)
                accumulate_reg_gradients(encoder, head, gamma, cfg.lambda_fr, ref_ptr);
            adam.step();
            ++step;
        }
    }

    UnimodalModel model;
    model.modality_id = modality_id;
    model.config = cfg;
    model.input_shape = {encoder.in_channels(), encoder.in_timesteps()};
    model.encoder = std::move(encoder);
    model.head = std::move(head);
    return model;
}

// architecture fields must describe the encoder actually carried
TrainConfig merge_arch(const TrainConfig& cfg, const TrainConfig& arch_source) {
    TrainConfig out = cfg;
    out.encoder_conv_channels = arch_source.encoder_conv_channels;
    out.encoder_kernel = arch_source.encoder_kernel;
    out.encoder_stride = arch_source.encoder_stride;
    out.encoder_ffn_hidden = arch_source.encoder_ffn_hidden;
    out.feature_dim = arch_source.feature_dim;
    out.class_count = arch_source.class_count;
    return out;
}

}  // namespace

UnimodalModel finetune(const PretrainCheckpoint& ck, const std::string& modality_id,
                       const PairedDataset& train, const FewShotSelection& selection,
                       const TrainConfig& cfg, std::vector<double>* loss_history) {
    int m = ck.modality_index(modality_id);
    if (m < 0)
        throw std::invalid_argument("finetune: modality '" + modality_id + "' not in checkpoint");
    int data_m = train.modality_index(modality_id);
    if (data_m < 0)
        throw std::invalid_argument("finetune: modality '" + modality_id + "' not in training data");

    TrainConfig effective = merge_arch(cfg, ck.config);
    Encoder encoder(ck.input_shapes[m].first, ck.input_shapes[m].second, effective, 0);
    encoder.restore_params(ck.encoders[m].snapshot_params());
    return train_unimodal(std::move(encoder), modality_id, data_m, train, selection, effective, true,
                          loss_history);
}

UnimodalModel train_supervised_baseline(const std::string& modality_id, const PairedDataset& train,
                                        const FewShotSelection& selection, const TrainConfig& cfg,
                                        std::vector<double>* loss_history) {
    int data_m = train.modality_index(modality_id);
    if (data_m < 0)
        throw std::invalid_argument("baseline: modality '" + modality_id + "' not in training data");
    const Matrix& w0 = train.windows[data_m][0].data;
    Encoder encoder(w0.rows, w0.cols, cfg,
                    derive_seed(static_cast<uint64_t>(cfg.seed), 0, kStreamBaselineEncoder));
    return train_unimodal(std::move(encoder), modality_id, data_m, train, selection, cfg, false,
                          loss_history);
}

}  // namespace mesen
