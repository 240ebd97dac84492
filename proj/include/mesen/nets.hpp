// Differentiable building blocks: per-modality encoder (temporal convs +
// one self-attention block), per-modality projector, shared softmax head.
// Every parameter lives in a named layer block so per-layer regularization
// and checkpointing can address it.
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mesen/config.hpp"
#include "mesen/matrix.hpp"
#include "mesen/rng.hpp"

namespace mesen {

// An N x d batch of per-sample feature vectors for one modality.
struct FeatureBatch {
    Matrix values;
    std::string modality_id;
};

struct ParamTensor {
    std::string name;
    std::vector<int> dims;
    std::vector<double> w;
    std::vector<double> g;

    ParamTensor(std::string n, std::vector<int> d) : name(std::move(n)), dims(std::move(d)) {
        size_t total = 1;
        for (int x : dims) total *= static_cast<size_t>(x);
        w.assign(total, 0.0);
        g.assign(total, 0.0);
    }
};

// One logical layer block: the unit of Eq-style per-layer regularization.
class Layer {
public:
    explicit Layer(std::string id) : id_(std::move(id)) {}
    virtual ~Layer() = default;

    const std::string& id() const { return id_; }
    std::vector<ParamTensor>& tensors() { return tensors_; }
    const std::vector<ParamTensor>& tensors() const { return tensors_; }

    size_t param_count() const {
        size_t n = 0;
        for (const auto& t : tensors_) n += t.w.size();
        return n;
    }
    double& param(size_t flat);
    double& grad(size_t flat);
    void zero_grad() {
        for (auto& t : tensors_)
            for (auto& g : t.g) g = 0.0;
    }
    double sq_norm() const {
        double s = 0.0;
        for (const auto& t : tensors_)
            for (double x : t.w) s += x * x;
        return s;
    }

protected:
    std::string id_;
    std::vector<ParamTensor> tensors_;
};

// Temporal convolution, valid padding, optional fused ReLU.
class Conv1dLayer : public Layer {
public:
    Conv1dLayer(std::string id, int in_c, int out_c, int kernel, int stride, bool relu);

    int out_len(int t_in) const { return (t_in - kernel_) / stride_ + 1; }
    Tensor3 forward(const Tensor3& x, bool train);
    Tensor3 backward(const Tensor3& dy);
    void init(Rng& rng);

    int in_channels() const { return in_c_; }
    int out_channels() const { return out_c_; }

private:
    int in_c_, out_c_, kernel_, stride_;
    bool relu_;
    Tensor3 x_cache_;
    Tensor3 pre_cache_;  // pre-activation, for the ReLU mask
};

// Pre-norm single-head self-attention with residual connection.
class AttentionLayer : public Layer {
public:
    AttentionLayer(std::string id, int dim);

    Tensor3 forward(const Tensor3& x, bool train);
    Tensor3 backward(const Tensor3& dy);
    void init(Rng& rng);

private:
    int dim_;
    // per-sample caches from the last training forward
    struct Cache {
        Matrix x, xhat, xn, q, k, v, attn, h;
        std::vector<double> invstd;
    };
    std::vector<Cache> cache_;
};

// Pre-norm position-wise feed-forward block with residual connection.
class FfnLayer : public Layer {
public:
    FfnLayer(std::string id, int dim, int hidden);

    Tensor3 forward(const Tensor3& x, bool train);
    Tensor3 backward(const Tensor3& dy);
    void init(Rng& rng);

private:
    int dim_, hidden_;
    // positions are independent, so caches are flattened to (n*t) rows
    int cache_n_ = 0, cache_t_ = 0;
    Matrix x_, xhat_, xn_, pre_;
    std::vector<double> invstd_;
};

// Dense layer on row-vector batches, optional fused ReLU.
class LinearLayer : public Layer {
public:
    LinearLayer(std::string id, int in_dim, int out_dim, bool relu);

    Matrix forward(const Matrix& x, bool train);
    Matrix backward(const Matrix& dy);
    void init(Rng& rng);

    int in_dim() const { return in_dim_; }
    int out_dim() const { return out_dim_; }

private:
    int in_dim_, out_dim_;
    bool relu_;
    Matrix x_cache_;
    Matrix pre_cache_;
};

// Ordered-parameter-block contract shared by encoder, projector and head.
class LayeredModel {
public:
    virtual ~LayeredModel() = default;
    virtual std::vector<Layer*> blocks() = 0;
    std::vector<const Layer*> blocks() const;

    int layer_count() const { return static_cast<int>(const_cast<LayeredModel*>(this)->blocks().size()); }
    void zero_grad() {
        for (Layer* l : blocks()) l->zero_grad();
    }
    std::vector<std::string> layer_ids() const;
    // Flat copies of every block's parameters, in block order.
    std::vector<std::vector<double>> snapshot_params() const;
    void restore_params(const std::vector<std::vector<double>>& snap);
};

// (batch x channels x timesteps) -> (batch x d_h): conv stack, one
// self-attention encoder block, temporal mean pooling.
class Encoder : public LayeredModel {
public:
    Encoder() = default;
    Encoder(int channels, int timesteps, const TrainConfig& cfg, uint64_t seed);

    Matrix forward(const Tensor3& x, bool train = true);
    Tensor3 backward(const Matrix& d_out);
    Matrix predict(const Tensor3& x) const;  // inference mode, no caches

    std::vector<Layer*> blocks() override;

    int in_channels() const { return channels_; }
    int in_timesteps() const { return timesteps_; }
    int out_dim() const { return dim_; }

private:
    int channels_ = 0, timesteps_ = 0, dim_ = 0;
    int pooled_len_ = 0;
    std::vector<std::unique_ptr<Conv1dLayer>> convs_;
    std::unique_ptr<AttentionLayer> attn_;
    std::unique_ptr<FfnLayer> ffn_;
};

// Encoder output -> N_fc modality feature, two dense layers with one ReLU.
class Projector : public LayeredModel {
public:
    Projector() = default;
    Projector(int in_dim, int feature_dim, uint64_t seed);

    Matrix forward(const Matrix& h, bool train = true);
    Matrix backward(const Matrix& d_out);
    Matrix predict(const Matrix& h) const;

    std::vector<Layer*> blocks() override;

    int in_dim() const { return fc1_ ? fc1_->in_dim() : 0; }
    int out_dim() const { return fc2_ ? fc2_->out_dim() : 0; }

private:
    std::unique_ptr<LinearLayer> fc1_;
    std::unique_ptr<LinearLayer> fc2_;
};

// Single linear layer with softmax: features -> row-stochastic probabilities.
class Head : public LayeredModel {
public:
    Head() = default;
    Head(int in_dim, int class_count, uint64_t seed);

    Matrix forward(const Matrix& x, bool train = true);  // probabilities
    Matrix backward(const Matrix& d_probs);
    Matrix predict(const Matrix& x) const;

    std::vector<Layer*> blocks() override;

    int in_dim() const { return linear_ ? linear_->in_dim() : 0; }
    int class_count() const { return linear_ ? linear_->out_dim() : 0; }

private:
    std::unique_ptr<LinearLayer> linear_;
    Matrix probs_cache_;
};

Encoder build_encoder(int channels, int timesteps, const TrainConfig& cfg, uint64_t seed);
Projector build_projector(int d_h, int feature_dim, uint64_t seed);
Head build_head(int in_dim, int class_count, uint64_t seed);

// Row-wise L2 normalization to the unit sphere. Rejects rows with norm
// below 1e-12.
Matrix m_norm(const Matrix& features);
// d(loss)/d(features) given d(loss)/d(normalized) and the raw features.
Matrix m_norm_backward(const Matrix& features, const Matrix& normalized, const Matrix& d_norm);

// Batch-standardize columns, then row L2. Alternative reading of
// "normalized within the batch", selected by MNormMode::BatchStdL2.
Matrix batch_std_l2(const Matrix& features);
Matrix batch_std_l2_backward(const Matrix& features, const Matrix& d_out);

Matrix apply_m_norm(const Matrix& features, MNormMode mode);
Matrix apply_m_norm_backward(const Matrix& features, const Matrix& d_out, MNormMode mode);

// Row-stochastic softmax with row-max subtraction.
Matrix softmax_rows(const Matrix& logits);
// d(loss)/d(logits) from d(loss)/d(probs).
Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs);

}  // namespace mesen
