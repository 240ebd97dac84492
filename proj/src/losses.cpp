#include "mesen/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mesen {

namespace {

// log(sum exp(x)) with max subtraction; also fills softmax probabilities.
double log_sum_exp(const std::vector<double>& logits, std::vector<double>& probs) {
    double mx = logits[0];
    for (double x : logits) mx = std::max(mx, x);
    double sum = 0.0;
    probs.resize(logits.size());
    for (size_t i = 0; i < logits.size(); ++i) {
        probs[i] = std::exp(logits[i] - mx);
        sum += probs[i];
    }
    for (double& p : probs) p /= sum;
    return mx + std::log(sum);
}

void check_rows_normalized(const Matrix& z, const std::string& who) {
    for (int i = 0; i < z.rows; ++i) {
        double norm = row_norm(z, i);
        if (std::fabs(norm - 1.0) > 1e-3)
            throw std::invalid_argument("cross_modal_loss: row " + std::to_string(i) + " of " + who +
                                        " is not unit-normalized (norm " + std::to_string(norm) + ")");
    }
}

void check_row_stochastic(const Matrix& y, const std::string& who) {
    for (int i = 0; i < y.rows; ++i) {
        double sum = 0.0;
        for (int j = 0; j < y.cols; ++j) {
            double p = y.at(i, j);
            if (p < -1e-9)
                throw std::invalid_argument("pseudo_align_loss: negative entry in " + who + " at row " +
                                            std::to_string(i));
            sum += p;
        }
        if (std::fabs(sum - 1.0) > 1e-3)
            throw std::invalid_argument("pseudo_align_loss: row " + std::to_string(i) + " of " + who +
                                        " does not sum to 1");
    }
}

}  // namespace

CrossModalResult cross_modal_loss(const FeatureBatch& za, const FeatureBatch& zb, double tau,
                                  double alpha, double beta, bool include_intra_negatives,
                                  bool with_grad) {
    const Matrix& a = za.values;
    const Matrix& b = zb.values;
    if (a.rows != b.rows || a.cols != b.cols)
        throw std::invalid_argument("cross_modal_loss: feature batches must share shape");
    const int n = a.rows;
    const int d = a.cols;
    if (n < 2) throw std::invalid_argument("cross_modal_loss: batch needs at least 2 samples for negatives");
    if (!(tau > 0.0)) throw std::invalid_argument("cross_modal_loss: tau must be positive");
    check_rows_normalized(a, "first batch");
    check_rows_normalized(b, "second batch");

    CrossModalResult res;
    res.denominator_terms = include_intra_negatives ? 2 * n - 1 : n;
    if (with_grad) {
        res.grad_a = Matrix(n, d);
        res.grad_b = Matrix(n, d);
    }

    // cross-modality similarities; intra ones only when the ablation asks
    Matrix sim_ab(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sim_ab.at(i, j) = row_dot(a, i, b, j) / tau;
    Matrix sim_aa, sim_bb;
    if (include_intra_negatives) {
        sim_aa = Matrix(n, n);
        sim_bb = Matrix(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                sim_aa.at(i, j) = row_dot(a, i, a, j) / tau;
                sim_bb.at(i, j) = row_dot(b, i, b, j) / tau;
            }
    }

    // one direction: anchors in `anc`, positives/negatives in `opp`
    auto direction = [&](const Matrix& anc, const Matrix& opp, const Matrix& sim,
                         const Matrix& sim_intra, Matrix* grad_anc, Matrix* grad_opp,
                         double weight) {
        double mean_loss = 0.0;
        std::vector<double> logits, probs;
        std::vector<int> owner;  // 0 = opp index, 1 = anc index (intra negative)
        std::vector<int> index;
        for (int i = 0; i < n; ++i) {
            logits.clear();
            owner.clear();
            index.clear();
            logits.push_back(sim.at(i, i));  // positive first
            owner.push_back(0);
            index.push_back(i);
            for (int j = 0; j < n; ++j) {
                if (j == i) continue;
                logits.push_back(sim.at(i, j));
                owner.push_back(0);
                index.push_back(j);
            }
            if (include_intra_negatives) {
                for (int j = 0; j < n; ++j) {
                    if (j == i) continue;
                    logits.push_back(sim_intra.at(i, j));
                    owner.push_back(1);
                    index.push_back(j);
                }
            }
            double lse = log_sum_exp(logits, probs);
            mean_loss += lse - logits[0];

            if (grad_anc) {
                const double scale = weight / (n * tau);
                for (size_t u = 0; u < logits.size(); ++u) {
                    double w = (probs[u] - (u == 0 ? 1.0 : 0.0)) * scale;
                    if (w == 0.0) continue;
                    int j = index[u];
                    if (owner[u] == 0) {
                        for (int k = 0; k < d; ++k) {
                            grad_anc->at(i, k) += w * opp.at(j, k);
                            grad_opp->at(j, k) += w * anc.at(i, k);
                        }
                    } else {
                        for (int k = 0; k < d; ++k) {
                            grad_anc->at(i, k) += w * anc.at(j, k);
                            grad_anc->at(j, k) += w * anc.at(i, k);
                        }
                    }
                }
            }
        }
        return mean_loss / n;
    };

    Matrix sim_ba(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) sim_ba.at(i, j) = sim_ab.at(j, i);

    res.mean_a2b = direction(a, b, sim_ab, sim_aa, with_grad ? &res.grad_a : nullptr,
                             with_grad ? &res.grad_b : nullptr, alpha);
    res.mean_b2a = direction(b, a, sim_ba, sim_bb, with_grad ? &res.grad_b : nullptr,
                             with_grad ? &res.grad_a : nullptr, beta);
    res.value = alpha * res.mean_a2b + beta * res.mean_b2a;
    res.per_direction[za.modality_id + "->" + zb.modality_id] = res.mean_a2b;
    res.per_direction[zb.modality_id + "->" + za.modality_id] = res.mean_b2a;
    return res;
}

PseudoAlignResult pseudo_align_loss(const PseudoProbMatrix& ya, const PseudoProbMatrix& yb,
                                    double tau_hat, double lambda_pr, ColumnNormMode mode,
                                    bool with_grad) {
    const Matrix& a = ya.values;
    const Matrix& b = yb.values;
    if (a.rows != b.rows || a.cols != b.cols)
        throw std::invalid_argument("pseudo_align_loss: probability matrices must share shape");
    const int n = a.rows;
    const int c = a.cols;
    if (c < 2) throw std::invalid_argument("pseudo_align_loss: need at least 2 pseudo-classes");
    if (n < 1) throw std::invalid_argument("pseudo_align_loss: empty batch");
    if (!(tau_hat > 0.0)) throw std::invalid_argument("pseudo_align_loss: tau_hat must be positive");
    check_row_stochastic(a, "first matrix");
    check_row_stochastic(b, "second matrix");

    PseudoAlignResult res;
    res.denominator_terms = 2 * c - 1;

    // columns as vectors: raw and (optionally) unit-normalized
    auto column = [n](const Matrix& m, int i) {
        std::vector<double> q(n);
        for (int j = 0; j < n; ++j) q[j] = m.at(j, i);
        return q;
    };
    std::vector<std::vector<double>> raw(2 * c), unit(2 * c);
    std::vector<double> norms(2 * c, 1.0);
    for (int i = 0; i < c; ++i) {
        raw[i] = column(a, i);
        raw[c + i] = column(b, i);
    }
    for (int u = 0; u < 2 * c; ++u) {
        unit[u] = raw[u];
        if (mode == ColumnNormMode::L2) {
            double norm = std::sqrt(dot(raw[u].data(), raw[u].data(), n));
            if (norm < 1e-12) {
                int cls = u % c;
                throw std::invalid_argument("pseudo_align_loss: pseudo-class " + std::to_string(cls) +
                                            " column of " + (u < c ? ya.modality_id : yb.modality_id) +
                                            " has zero mass, normalization undefined");
            }
            norms[u] = norm;
            for (double& x : unit[u]) x /= norm;
        }
    }

    Matrix sim(2 * c, 2 * c);
    for (int u = 0; u < 2 * c; ++u)
        for (int v = 0; v < 2 * c; ++v) sim.at(u, v) = dot(unit[u].data(), unit[v].data(), n) / tau_hat;

    // gradients with respect to the unit columns, folded back through the
    // normalization afterwards
    std::vector<std::vector<double>> d_unit;
    if (with_grad) d_unit.assign(2 * c, std::vector<double>(n, 0.0));

    double align = 0.0;
    std::vector<double> logits, probs;
    std::vector<int> ids;
    const double term_scale = 1.0 / (2.0 * c);
    for (int m = 0; m < 2; ++m) {
        for (int i = 0; i < c; ++i) {
            int anchor = m * c + i;
            int positive = (1 - m) * c + i;
            logits.clear();
            ids.clear();
            logits.push_back(sim.at(anchor, positive));
            ids.push_back(positive);
            for (int j = 0; j < c; ++j) {
                if (j == i) continue;
                logits.push_back(sim.at(anchor, j));
                ids.push_back(j);
                logits.push_back(sim.at(anchor, c + j));
                ids.push_back(c + j);
            }
            double lse = log_sum_exp(logits, probs);
            align += lse - logits[0];

            if (with_grad) {
                for (size_t u = 0; u < logits.size(); ++u) {
                    double w = (probs[u] - (u == 0 ? 1.0 : 0.0)) * term_scale / tau_hat;
                    if (w == 0.0) continue;
                    int v = ids[u];
                    for (int j = 0; j < n; ++j) {
                        d_unit[anchor][j] += w * unit[v][j];
                        d_unit[v][j] += w * unit[anchor][j];
                    }
                }
            }
        }
    }
    align *= term_scale;

    // usage entropy over both modalities
    double entropy = 0.0;
    std::vector<double> usage(c, 0.0);
    for (int i = 0; i < c; ++i) {
        double mass = 0.0;
        for (int j = 0; j < n; ++j) mass += a.at(j, i) + b.at(j, i);
        usage[i] = mass / (2.0 * n);
        if (usage[i] > 0.0) entropy -= usage[i] * std::log(usage[i]);
    }

    res.align = align;
    res.l_pr = entropy;
    res.value = align + lambda_pr * entropy;

    if (with_grad) {
        res.grad_a = Matrix(n, c);
        res.grad_b = Matrix(n, c);
        for (int u = 0; u < 2 * c; ++u) {
            // through column normalization: dq = (du - q_hat (q_hat . du)) / r
            std::vector<double> d_raw(n);
            if (mode == ColumnNormMode::L2) {
                double proj = dot(unit[u].data(), d_unit[u].data(), n);
                for (int j = 0; j < n; ++j) d_raw[j] = (d_unit[u][j] - unit[u][j] * proj) / norms[u];
            } else {
                d_raw = d_unit[u];
            }
            Matrix& target = u < c ? res.grad_a : res.grad_b;
            int i = u % c;
            for (int j = 0; j < n; ++j) target.at(j, i) += d_raw[j];
        }
        // entropy term: d(lambda * L_PR)/d Y_{ji} = -lambda (log P_i + 1) / (2n)
        for (int i = 0; i < c; ++i) {
            if (usage[i] <= 0.0) continue;
            double g = -lambda_pr * (std::log(usage[i]) + 1.0) / (2.0 * n);
            for (int j = 0; j < n; ++j) {
                res.grad_a.at(j, i) += g;
                res.grad_b.at(j, i) += g;
            }
        }
    }
    return res;
}

PretrainLossResult pretrain_loss(const FeatureBatch& za, const FeatureBatch& zb,
                                 const PseudoProbMatrix& ya, const PseudoProbMatrix& yb,
                                 const TrainConfig& cfg, bool include_intra_negatives, bool with_grad) {
    auto cm = cross_modal_loss(za, zb, cfg.tau, cfg.alpha, cfg.beta, include_intra_negatives, with_grad);
    auto pa = pseudo_align_loss(ya, yb, cfg.tau_hat, cfg.lambda_pr, cfg.column_norm, with_grad);

    PretrainLossResult res;
    res.breakdown.l_cmf = cm.value;
    res.breakdown.l_mpc = pa.value;
    res.breakdown.l_pr = pa.l_pr;
    res.breakdown.per_direction = cm.per_direction;
    // balancing constant: no gradient flows through delta
    res.breakdown.delta = std::fabs(cm.value) / std::max(std::fabs(pa.value), 1e-8);
    res.breakdown.l_pt = cm.value + res.breakdown.delta * pa.value;

    if (with_grad) {
        res.d_za = std::move(cm.grad_a);
        res.d_zb = std::move(cm.grad_b);
        res.d_ya = std::move(pa.grad_a);
        res.d_yb = std::move(pa.grad_b);
        const double delta = res.breakdown.delta;
        for (auto& x : res.d_ya.v) x *= delta;
        for (auto& x : res.d_yb.v) x *= delta;
    }
    return res;
}

double finetune_reg(const LayeredModel& encoder, const LayeredModel& head,
                    const std::vector<double>& gamma, const ParamSnapshot* encoder_ref) {
    auto enc_blocks = const_cast<LayeredModel&>(encoder).blocks();
    auto head_blocks = const_cast<LayeredModel&>(head).blocks();
    if (gamma.size() != enc_blocks.size())
        throw std::invalid_argument("finetune_reg: gamma length " + std::to_string(gamma.size()) +
                                    " does not match encoder layer count " +
                                    std::to_string(enc_blocks.size()));
    if (encoder_ref && encoder_ref->size() != enc_blocks.size())
        throw std::invalid_argument("finetune_reg: reference snapshot layer count mismatch");

    double total = 0.0;
    for (size_t i = 0; i < enc_blocks.size(); ++i) {
        double sq = 0.0;
        if (encoder_ref) {
            const auto& ref = (*encoder_ref)[i];
            size_t k = 0;
            for (const auto& t : enc_blocks[i]->tensors())
                for (double w : t.w) {
                    double dlt = w - ref[k++];
                    sq += dlt * dlt;
                }
        } else {
            sq = enc_blocks[i]->sq_norm();
        }
        total += gamma[i] * sq;
    }
    for (Layer* l : head_blocks) total += l->sq_norm();
    return total;
}

CrossEntropyResult cross_entropy_loss(const Matrix& probs, const std::vector<int>& labels,
                                      bool with_grad) {
    if (static_cast<int>(labels.size()) != probs.rows)
        throw std::invalid_argument("cross_entropy_loss: label count does not match batch size");
    const int n = probs.rows;
    const int c = probs.cols;
    CrossEntropyResult res;
    if (with_grad) res.grad = Matrix(n, c);
    const double floor = 1e-300;
    for (int i = 0; i < n; ++i) {
        int y = labels[i];
        if (y < 0 || y >= c)
            throw std::invalid_argument("cross_entropy_loss: label " + std::to_string(y) +
                                        " out of range [0, " + std::to_string(c) + ") at row " +
                                        std::to_string(i));
        double p = std::max(probs.at(i, y), floor);
        res.value -= std::log(p);
        if (with_grad) res.grad.at(i, y) = -1.0 / (p * n);
    }
    res.value /= n;
    return res;
}

double finetune_loss(const Matrix& probs, const std::vector<int>& labels, const LayeredModel& encoder,
                     const LayeredModel& head, const TrainConfig& cfg, const ParamSnapshot* encoder_ref) {
    double cls = cross_entropy_loss(probs, labels, false).value;
    if (cfg.lambda_fr == 0.0) return cls;
    auto gamma = cfg.resolve_gamma(const_cast<LayeredModel&>(encoder).layer_count());
    return cls + cfg.lambda_fr * finetune_reg(encoder, head, gamma, encoder_ref);
}

void accumulate_reg_gradients(LayeredModel& encoder, LayeredModel& head,
                              const std::vector<double>& gamma, double lambda_fr,
                              const ParamSnapshot* encoder_ref) {
    if (lambda_fr == 0.0) return;
    auto enc_blocks = encoder.blocks();
    if (gamma.size() != enc_blocks.size())
        throw std::invalid_argument("accumulate_reg_gradients: gamma length mismatch");
    for (size_t i = 0; i < enc_blocks.size(); ++i) {
        const double scale = 2.0 * lambda_fr * gamma[i];
        if (scale == 0.0) continue;
        size_t k = 0;
        for (auto& t : enc_blocks[i]->tensors())
            for (size_t u = 0; u < t.w.size(); ++u, ++k) {
                double ref = encoder_ref ? (*encoder_ref)[i][k] : 0.0;
                t.g[u] += scale * (t.w[u] - ref);
            }
    }
    for (Layer* l : head.blocks())
        for (auto& t : l->tensors())
            for (size_t u = 0; u < t.w.size(); ++u) t.g[u] += 2.0 * lambda_fr * t.w[u];
}

}  // namespace mesen
