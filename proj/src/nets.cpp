#include "mesen/nets.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mesen {

namespace {

constexpr double kLayerNormEps = 1e-5;

// y = x * W + b, W stored row-major (in x out)
Matrix affine(const Matrix& x, const ParamTensor& w, const ParamTensor& b) {
    const int in = w.dims[0];
    const int out = w.dims[1];
    Matrix y(x.rows, out);
    for (int i = 0; i < x.rows; ++i) {
        const double* xr = x.row(i);
        double* yr = y.row(i);
        for (int j = 0; j < out; ++j) yr[j] = b.w[j];
        for (int k = 0; k < in; ++k) {
            const double xk = xr[k];
            if (xk == 0.0) continue;
            const double* wr = w.w.data() + static_cast<size_t>(k) * out;
            for (int j = 0; j < out; ++j) yr[j] += xk * wr[j];
        }
    }
    return y;
}

// accumulates dW, db and returns dx for the affine above
Matrix affine_backward(const Matrix& x, const Matrix& dy, ParamTensor& w, ParamTensor& b) {
    const int in = w.dims[0];
    const int out = w.dims[1];
    Matrix dx(x.rows, in);
    for (int i = 0; i < x.rows; ++i) {
        const double* xr = x.row(i);
        const double* dyr = dy.row(i);
        double* dxr = dx.row(i);
        for (int j = 0; j < out; ++j) b.g[j] += dyr[j];
        for (int k = 0; k < in; ++k) {
            double* gw = w.g.data() + static_cast<size_t>(k) * out;
            const double* wr = w.w.data() + static_cast<size_t>(k) * out;
            double acc = 0.0;
            const double xk = xr[k];
            for (int j = 0; j < out; ++j) {
                gw[j] += xk * dyr[j];
                acc += wr[j] * dyr[j];
            }
            dxr[k] = acc;
        }
    }
    return dx;
}

// row-wise layer normalization; fills xhat and invstd
Matrix layer_norm(const Matrix& x, const ParamTensor& g, const ParamTensor& b, Matrix& xhat,
                  std::vector<double>& invstd) {
    const int d = x.cols;
    Matrix out(x.rows, d);
    xhat = Matrix(x.rows, d);
    invstd.assign(x.rows, 0.0);
    for (int i = 0; i < x.rows; ++i) {
        const double* xr = x.row(i);
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += xr[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= d;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        invstd[i] = inv;
        for (int j = 0; j < d; ++j) {
            double xh = (xr[j] - mu) * inv;
            xhat.at(i, j) = xh;
            out.at(i, j) = xh * g.w[j] + b.w[j];
        }
    }
    return out;
}

Matrix layer_norm_backward(const Matrix& d_out, const Matrix& xhat, const std::vector<double>& invstd,
                           ParamTensor& g, ParamTensor& b) {
    const int d = d_out.cols;
    Matrix dx(d_out.rows, d);
    for (int i = 0; i < d_out.rows; ++i) {
        const double* dr = d_out.row(i);
        const double* xh = xhat.row(i);
        double m1 = 0.0, m2 = 0.0;
        for (int j = 0; j < d; ++j) {
            g.g[j] += dr[j] * xh[j];
            b.g[j] += dr[j];
            const double dxh = dr[j] * g.w[j];
            m1 += dxh;
            m2 += dxh * xh[j];
        }
        m1 /= d;
        m2 /= d;
        for (int j = 0; j < d; ++j) {
            const double dxh = dr[j] * g.w[j];
            dx.at(i, j) = invstd[i] * (dxh - m1 - xh[j] * m2);
        }
    }
    return dx;
}

void init_normal(ParamTensor& t, Rng& rng, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& w : t.w) w = dist(rng);
}

}  // namespace

double& Layer::param(size_t flat) {
    for (auto& t : tensors_) {
        if (flat < t.w.size()) return t.w[flat];
        flat -= t.w.size();
    }
    throw std::out_of_range("Layer::param: index past end of block " + id_);
}

double& Layer::grad(size_t flat) {
    for (auto& t : tensors_) {
        if (flat < t.g.size()) return t.g[flat];
        flat -= t.g.size();
    }
    throw std::out_of_range("Layer::grad: index past end of block " + id_);
}

// ---------------------------------------------------------------------------
// Conv1d
// ---------------------------------------------------------------------------

Conv1dLayer::Conv1dLayer(std::string id, int in_c, int out_c, int kernel, int stride, bool relu)
    : Layer(std::move(id)), in_c_(in_c), out_c_(out_c), kernel_(kernel), stride_(stride), relu_(relu) {
    tensors_.emplace_back("w", std::vector<int>{out_c, in_c, kernel});
    tensors_.emplace_back("b", std::vector<int>{out_c});
}

void Conv1dLayer::init(Rng& rng) {
    init_normal(tensors_[0], rng, std::sqrt(2.0 / (in_c_ * kernel_)));
}

Tensor3 Conv1dLayer::forward(const Tensor3& x, bool train) {
    const int t_out = out_len(x.t);
    if (t_out < 1)
        throw std::invalid_argument("conv '" + id_ + "': input length " + std::to_string(x.t) +
                                    " shorter than kernel " + std::to_string(kernel_));
    const auto& w = tensors_[0].w;
    const auto& b = tensors_[1].w;
    Tensor3 pre(x.n, out_c_, t_out);
    for (int i = 0; i < x.n; ++i) {
        for (int oc = 0; oc < out_c_; ++oc) {
            const double* woc = w.data() + static_cast<size_t>(oc) * in_c_ * kernel_;
            for (int ot = 0; ot < t_out; ++ot) {
                double acc = b[oc];
                const int base = ot * stride_;
                const double* xi = x.sample(i);
                for (int ic = 0; ic < in_c_; ++ic) {
                    const double* xr = xi + static_cast<size_t>(ic) * x.t + base;
                    const double* wr = woc + static_cast<size_t>(ic) * kernel_;
                    for (int u = 0; u < kernel_; ++u) acc += wr[u] * xr[u];
                }
                pre.at(i, oc, ot) = acc;
            }
        }
    }
    Tensor3 y = pre;
    if (relu_)
        for (auto& v : y.v) v = std::max(v, 0.0);
    if (train) {
        x_cache_ = x;
        pre_cache_ = std::move(pre);
    }
    return y;
}

Tensor3 Conv1dLayer::backward(const Tensor3& dy) {
    const Tensor3& x = x_cache_;
    const int t_out = dy.t;
    auto& wt = tensors_[0];
    auto& bt = tensors_[1];
    Tensor3 dx(x.n, in_c_, x.t);
    for (int i = 0; i < x.n; ++i) {
        for (int oc = 0; oc < out_c_; ++oc) {
            const double* woc = wt.w.data() + static_cast<size_t>(oc) * in_c_ * kernel_;
            double* goc = wt.g.data() + static_cast<size_t>(oc) * in_c_ * kernel_;
            for (int ot = 0; ot < t_out; ++ot) {
                double d = dy.at(i, oc, ot);
                if (relu_ && pre_cache_.at(i, oc, ot) <= 0.0) continue;
                if (d == 0.0) continue;
                bt.g[oc] += d;
                const int base = ot * stride_;
                const double* xi = x.sample(i);
                double* dxi = dx.sample(i);
                for (int ic = 0; ic < in_c_; ++ic) {
                    const double* xr = xi + static_cast<size_t>(ic) * x.t + base;
                    double* dxr = dxi + static_cast<size_t>(ic) * x.t + base;
                    double* gr = goc + static_cast<size_t>(ic) * kernel_;
                    const double* wr = woc + static_cast<size_t>(ic) * kernel_;
                    for (int u = 0; u < kernel_; ++u) {
                        gr[u] += d * xr[u];
                        dxr[u] += d * wr[u];
                    }
                }
            }
        }
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Self-attention block (pre-norm, single head, residual)
// ---------------------------------------------------------------------------

AttentionLayer::AttentionLayer(std::string id, int dim) : Layer(std::move(id)), dim_(dim) {
    tensors_.emplace_back("ln_g", std::vector<int>{dim});
    tensors_.emplace_back("ln_b", std::vector<int>{dim});
    tensors_.emplace_back("wq", std::vector<int>{dim, dim});
    tensors_.emplace_back("bq", std::vector<int>{dim});
    tensors_.emplace_back("wk", std::vector<int>{dim, dim});
    tensors_.emplace_back("bk", std::vector<int>{dim});
    tensors_.emplace_back("wv", std::vector<int>{dim, dim});
    tensors_.emplace_back("bv", std::vector<int>{dim});
    tensors_.emplace_back("wo", std::vector<int>{dim, dim});
    tensors_.emplace_back("bo", std::vector<int>{dim});
    for (auto& g : tensors_[0].w) g = 1.0;
}

void AttentionLayer::init(Rng& rng) {
    const double s = std::sqrt(1.0 / dim_);
    init_normal(tensors_[2], rng, s);
    init_normal(tensors_[4], rng, s);
    init_normal(tensors_[6], rng, s);
    init_normal(tensors_[8], rng, s);
    for (auto& g : tensors_[0].w) g = 1.0;
    std::fill(tensors_[1].w.begin(), tensors_[1].w.end(), 0.0);
}

Tensor3 AttentionLayer::forward(const Tensor3& x, bool train) {
    if (x.c != dim_) throw std::invalid_argument("attention '" + id_ + "': channel count mismatch");
    const int t = x.t;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
    Tensor3 y(x.n, dim_, t);
    if (train) cache_.assign(static_cast<size_t>(x.n), Cache{});
    for (int i = 0; i < x.n; ++i) {
        Matrix xs(t, dim_);
        for (int p = 0; p < t; ++p)
            for (int f = 0; f < dim_; ++f) xs.at(p, f) = x.at(i, f, p);

        Matrix xhat;
        std::vector<double> invstd;
        Matrix xn = layer_norm(xs, tensors_[0], tensors_[1], xhat, invstd);
        Matrix q = affine(xn, tensors_[2], tensors_[3]);
        Matrix k = affine(xn, tensors_[4], tensors_[5]);
        Matrix v = affine(xn, tensors_[6], tensors_[7]);

        Matrix attn(t, t);
        for (int p = 0; p < t; ++p) {
            double mx = -1e300;
            for (int r = 0; r < t; ++r) {
                attn.at(p, r) = row_dot(q, p, k, r) * scale;
                mx = std::max(mx, attn.at(p, r));
            }
            double sum = 0.0;
            for (int r = 0; r < t; ++r) {
                attn.at(p, r) = std::exp(attn.at(p, r) - mx);
                sum += attn.at(p, r);
            }
            for (int r = 0; r < t; ++r) attn.at(p, r) /= sum;
        }
        Matrix h = matmul(attn, v);
        Matrix o = affine(h, tensors_[8], tensors_[9]);
        for (int p = 0; p < t; ++p)
            for (int f = 0; f < dim_; ++f) y.at(i, f, p) = xs.at(p, f) + o.at(p, f);

        if (train) {
            Cache& c = cache_[i];
            c.x = std::move(xs);
            c.xhat = std::move(xhat);
            c.xn = std::move(xn);
            c.q = std::move(q);
            c.k = std::move(k);
            c.v = std::move(v);
            c.attn = std::move(attn);
            c.h = std::move(h);
            c.invstd = std::move(invstd);
        }
    }
    return y;
}

Tensor3 AttentionLayer::backward(const Tensor3& dy) {
    const int t = dy.t;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dim_));
    Tensor3 dx(dy.n, dim_, t);
    for (int i = 0; i < dy.n; ++i) {
        Cache& c = cache_[i];
        Matrix dys(t, dim_);
        for (int p = 0; p < t; ++p)
            for (int f = 0; f < dim_; ++f) dys.at(p, f) = dy.at(i, f, p);

        // residual: dx gets dy directly, plus the attention path below
        Matrix dh = affine_backward(c.h, dys, tensors_[8], tensors_[9]);

        Matrix da(t, t);
        Matrix dv(t, dim_);
        for (int p = 0; p < t; ++p)
            for (int r = 0; r < t; ++r) da.at(p, r) = row_dot(dh, p, c.v, r);
        for (int r = 0; r < t; ++r)
            for (int f = 0; f < dim_; ++f) {
                double acc = 0.0;
                for (int p = 0; p < t; ++p) acc += c.attn.at(p, r) * dh.at(p, f);
                dv.at(r, f) = acc;
            }

        Matrix ds(t, t);
        for (int p = 0; p < t; ++p) {
            double inner = 0.0;
            for (int r = 0; r < t; ++r) inner += da.at(p, r) * c.attn.at(p, r);
            for (int r = 0; r < t; ++r) ds.at(p, r) = c.attn.at(p, r) * (da.at(p, r) - inner);
        }

        Matrix dq(t, dim_), dk(t, dim_);
        for (int p = 0; p < t; ++p)
            for (int f = 0; f < dim_; ++f) {
                double accq = 0.0, acck = 0.0;
                for (int r = 0; r < t; ++r) {
                    accq += ds.at(p, r) * c.k.at(r, f);
                    acck += ds.at(r, p) * c.q.at(r, f);
                }
                dq.at(p, f) = accq * scale;
                dk.at(p, f) = acck * scale;
            }

        Matrix dxn = affine_backward(c.xn, dq, tensors_[2], tensors_[3]);
        Matrix dxn_k = affine_backward(c.xn, dk, tensors_[4], tensors_[5]);
        Matrix dxn_v = affine_backward(c.xn, dv, tensors_[6], tensors_[7]);
        for (size_t u = 0; u < dxn.v.size(); ++u) dxn.v[u] += dxn_k.v[u] + dxn_v.v[u];

        Matrix dxs = layer_norm_backward(dxn, c.xhat, c.invstd, tensors_[0], tensors_[1]);
        for (int p = 0; p < t; ++p)
            for (int f = 0; f < dim_; ++f) dx.at(i, f, p) = dys.at(p, f) + dxs.at(p, f);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Position-wise feed-forward block (pre-norm, residual)
// ---------------------------------------------------------------------------

FfnLayer::FfnLayer(std::string id, int dim, int hidden) : Layer(std::move(id)), dim_(dim), hidden_(hidden) {
    tensors_.emplace_back("ln_g", std::vector<int>{dim});
    tensors_.emplace_back("ln_b", std::vector<int>{dim});
    tensors_.emplace_back("w1", std::vector<int>{dim, hidden});
    tensors_.emplace_back("b1", std::vector<int>{hidden});
    tensors_.emplace_back("w2", std::vector<int>{hidden, dim});
    tensors_.emplace_back("b2", std::vector<int>{dim});
    for (auto& g : tensors_[0].w) g = 1.0;
}

void FfnLayer::init(Rng& rng) {
    init_normal(tensors_[2], rng, std::sqrt(2.0 / dim_));
    init_normal(tensors_[4], rng, std::sqrt(1.0 / hidden_));
    for (auto& g : tensors_[0].w) g = 1.0;
    std::fill(tensors_[1].w.begin(), tensors_[1].w.end(), 0.0);
}

Tensor3 FfnLayer::forward(const Tensor3& x, bool train) {
    if (x.c != dim_) throw std::invalid_argument("ffn '" + id_ + "': channel count mismatch");
    const int t = x.t;
    Matrix flat(x.n * t, dim_);
    for (int i = 0; i < x.n; ++i)
        for (int p = 0; p < t; ++p)
            for (int f = 0; f < dim_; ++f) flat.at(i * t + p, f) = x.at(i, f, p);

    Matrix xhat;
    std::vector<double> invstd;
    Matrix xn = layer_norm(flat, tensors_[0], tensors_[1], xhat, invstd);
    Matrix pre = affine(xn, tensors_[2], tensors_[3]);
    Matrix act = pre;
    for (auto& v : act.v) v = std::max(v, 0.0);
    Matrix out = affine(act, tensors_[4], tensors_[5]);

    Tensor3 y(x.n, dim_, t);
    for (int i = 0; i < x.n; ++i)
        for (int p = 0; p < t; ++p)
            for (int f = 0; f < dim_; ++f) y.at(i, f, p) = flat.at(i * t + p, f) + out.at(i * t + p, f);

    if (train) {
        cache_n_ = x.n;
        cache_t_ = t;
        x_ = std::move(flat);
        xhat_ = std::move(xhat);
        xn_ = std::move(xn);
        pre_ = std::move(pre);
        invstd_ = std::move(invstd);
    }
    return y;
}

Tensor3 FfnLayer::backward(const Tensor3& dy) {
    const int t = cache_t_;
    Matrix dflat(cache_n_ * t, dim_);
    for (int i = 0; i < cache_n_; ++i)
        for (int p = 0; p < t; ++p)
            for (int f = 0; f < dim_; ++f) dflat.at(i * t + p, f) = dy.at(i, f, p);

    Matrix act = pre_;
    for (auto& v : act.v) v = std::max(v, 0.0);
    Matrix dact = affine_backward(act, dflat, tensors_[4], tensors_[5]);
    for (size_t u = 0; u < dact.v.size(); ++u)
        if (pre_.v[u] <= 0.0) dact.v[u] = 0.0;
    Matrix dxn = affine_backward(xn_, dact, tensors_[2], tensors_[3]);
    Matrix dres = layer_norm_backward(dxn, xhat_, invstd_, tensors_[0], tensors_[1]);

    Tensor3 dx(cache_n_, dim_, t);
    for (int i = 0; i < cache_n_; ++i)
        for (int p = 0; p < t; ++p)
            for (int f = 0; f < dim_; ++f)
                dx.at(i, f, p) = dflat.at(i * t + p, f) + dres.at(i * t + p, f);
    return dx;
}

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

LinearLayer::LinearLayer(std::string id, int in_dim, int out_dim, bool relu)
    : Layer(std::move(id)), in_dim_(in_dim), out_dim_(out_dim), relu_(relu) {
    tensors_.emplace_back("w", std::vector<int>{in_dim, out_dim});
    tensors_.emplace_back("b", std::vector<int>{out_dim});
}

void LinearLayer::init(Rng& rng) {
    init_normal(tensors_[0], rng, std::sqrt((relu_ ? 2.0 : 1.0) / in_dim_));
}

Matrix LinearLayer::forward(const Matrix& x, bool train) {
    if (x.cols != in_dim_) throw std::invalid_argument("linear '" + id_ + "': input width mismatch");
    Matrix pre = affine(x, tensors_[0], tensors_[1]);
    Matrix y = pre;
    if (relu_)
        for (auto& v : y.v) v = std::max(v, 0.0);
    if (train) {
        x_cache_ = x;
        pre_cache_ = std::move(pre);
    }
    return y;
}

Matrix LinearLayer::backward(const Matrix& dy) {
    Matrix d = dy;
    if (relu_)
        for (size_t u = 0; u < d.v.size(); ++u)
            if (pre_cache_.v[u] <= 0.0) d.v[u] = 0.0;
    return affine_backward(x_cache_, d, tensors_[0], tensors_[1]);
}

// ---------------------------------------------------------------------------
// LayeredModel helpers
// ---------------------------------------------------------------------------

std::vector<const Layer*> LayeredModel::blocks() const {
    auto mutable_blocks = const_cast<LayeredModel*>(this)->blocks();
    return {mutable_blocks.begin(), mutable_blocks.end()};
}

std::vector<std::string> LayeredModel::layer_ids() const {
    std::vector<std::string> ids;
    for (const Layer* l : blocks()) ids.push_back(l->id());
    return ids;
}

std::vector<std::vector<double>> LayeredModel::snapshot_params() const {
    std::vector<std::vector<double>> snap;
    for (const Layer* l : blocks()) {
        std::vector<double> flat;
        for (const auto& t : l->tensors()) flat.insert(flat.end(), t.w.begin(), t.w.end());
        snap.push_back(std::move(flat));
    }
    return snap;
}

void LayeredModel::restore_params(const std::vector<std::vector<double>>& snap) {
    auto bs = blocks();
    if (snap.size() != bs.size()) throw std::invalid_argument("restore_params: layer count mismatch");
    for (size_t i = 0; i < bs.size(); ++i) {
        size_t k = 0;
        for (auto& t : bs[i]->tensors())
            for (auto& w : t.w) {
                if (k >= snap[i].size()) throw std::invalid_argument("restore_params: size mismatch");
                w = snap[i][k++];
            }
        if (k != snap[i].size()) throw std::invalid_argument("restore_params: size mismatch");
    }
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

Encoder::Encoder(int channels, int timesteps, const TrainConfig& cfg, uint64_t seed)
    : channels_(channels), timesteps_(timesteps) {
    if (channels < 1 || timesteps < 1)
        throw std::invalid_argument("build_encoder: invalid input shape " + std::to_string(channels) +
                                    "x" + std::to_string(timesteps));
    dim_ = cfg.encoder_dim();
    Rng rng = make_rng(seed);
    int in_c = channels;
    int t = timesteps;
    for (size_t i = 0; i < cfg.encoder_conv_channels.size(); ++i) {
        int out_c = cfg.encoder_conv_channels[i];
        auto conv = std::make_unique<Conv1dLayer>("conv" + std::to_string(i + 1), in_c, out_c,
                                                  cfg.encoder_kernel, cfg.encoder_stride, true);
        int t_out = conv->out_len(t);
        if (t_out < 1)
            throw std::invalid_argument("build_encoder: conv" + std::to_string(i + 1) + " output length " +
                                        std::to_string(t_out) + " for input length " + std::to_string(t) +
                                        " (kernel " + std::to_string(cfg.encoder_kernel) + ", stride " +
                                        std::to_string(cfg.encoder_stride) + ")");
        conv->init(rng);
        convs_.push_back(std::move(conv));
        in_c = out_c;
        t = t_out;
    }
    pooled_len_ = t;
    attn_ = std::make_unique<AttentionLayer>("attn", dim_);
    attn_->init(rng);
    ffn_ = std::make_unique<FfnLayer>("ffn", dim_, cfg.encoder_ffn_hidden);
    ffn_->init(rng);
}

Matrix Encoder::forward(const Tensor3& x, bool train) {
    if (x.c != channels_ || x.t != timesteps_)
        throw std::invalid_argument("encoder: input shape " + std::to_string(x.c) + "x" +
                                    std::to_string(x.t) + " does not match built shape " +
                                    std::to_string(channels_) + "x" + std::to_string(timesteps_));
    Tensor3 h = x;
    for (auto& conv : convs_) h = conv->forward(h, train);
    h = attn_->forward(h, train);
    h = ffn_->forward(h, train);
    // temporal mean pooling
    Matrix out(h.n, dim_);
    const double inv = 1.0 / h.t;
    for (int i = 0; i < h.n; ++i)
        for (int f = 0; f < dim_; ++f) {
            double acc = 0.0;
            for (int p = 0; p < h.t; ++p) acc += h.at(i, f, p);
            out.at(i, f) = acc * inv;
        }
    return out;
}

Tensor3 Encoder::backward(const Matrix& d_out) {
    Tensor3 d(d_out.rows, dim_, pooled_len_);
    const double inv = 1.0 / pooled_len_;
    for (int i = 0; i < d_out.rows; ++i)
        for (int f = 0; f < dim_; ++f) {
            const double g = d_out.at(i, f) * inv;
            for (int p = 0; p < pooled_len_; ++p) d.at(i, f, p) = g;
        }
    Tensor3 dh = ffn_->backward(d);
    dh = attn_->backward(dh);
    for (auto it = convs_.rbegin(); it != convs_.rend(); ++it) dh = (*it)->backward(dh);
    return dh;
}

Matrix Encoder::predict(const Tensor3& x) const {
    return const_cast<Encoder*>(this)->forward(x, false);
}

std::vector<Layer*> Encoder::blocks() {
    std::vector<Layer*> out;
    for (auto& c : convs_) out.push_back(c.get());
    out.push_back(attn_.get());
    out.push_back(ffn_.get());
    return out;
}

// ---------------------------------------------------------------------------
// Projector
// ---------------------------------------------------------------------------

Projector::Projector(int in_dim, int feature_dim, uint64_t seed) {
    if (feature_dim < 2) throw std::invalid_argument("build_projector: feature_dim must be at least 2");
    if (in_dim < 1) throw std::invalid_argument("build_projector: invalid input dim");
    Rng rng = make_rng(seed);
    fc1_ = std::make_unique<LinearLayer>("fc1", in_dim, feature_dim, true);
    fc1_->init(rng);
    fc2_ = std::make_unique<LinearLayer>("fc2", feature_dim, feature_dim, false);
    fc2_->init(rng);
    // nonzero output bias keeps features off the exact zero vector even
    // when every hidden unit is dead for a sample
    std::normal_distribution<double> bias(0.0, 0.05);
    for (auto& b : fc2_->tensors()[1].w) b = bias(rng);
}

Matrix Projector::forward(const Matrix& h, bool train) {
    return fc2_->forward(fc1_->forward(h, train), train);
}

Matrix Projector::backward(const Matrix& d_out) { return fc1_->backward(fc2_->backward(d_out)); }

Matrix Projector::predict(const Matrix& h) const {
    return const_cast<Projector*>(this)->forward(h, false);
}

std::vector<Layer*> Projector::blocks() { return {fc1_.get(), fc2_.get()}; }

// ---------------------------------------------------------------------------
// Head
// ---------------------------------------------------------------------------

Head::Head(int in_dim, int class_count, uint64_t seed) {
    if (class_count < 2) throw std::invalid_argument("build_head: class_count must be at least 2");
    if (in_dim < 1) throw std::invalid_argument("build_head: invalid input dim");
    Rng rng = make_rng(seed);
    linear_ = std::make_unique<LinearLayer>("linear", in_dim, class_count, false);
    linear_->init(rng);
}

Matrix Head::forward(const Matrix& x, bool train) {
    Matrix probs = softmax_rows(linear_->forward(x, train));
    if (train) probs_cache_ = probs;
    return probs;
}

Matrix Head::backward(const Matrix& d_probs) {
    return linear_->backward(softmax_backward(probs_cache_, d_probs));
}

Matrix Head::predict(const Matrix& x) const { return const_cast<Head*>(this)->forward(x, false); }

std::vector<Layer*> Head::blocks() { return {linear_.get()}; }

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

Encoder build_encoder(int channels, int timesteps, const TrainConfig& cfg, uint64_t seed) {
    return Encoder(channels, timesteps, cfg, seed);
}

Projector build_projector(int d_h, int feature_dim, uint64_t seed) {
    return Projector(d_h, feature_dim, seed);
}

Head build_head(int in_dim, int class_count, uint64_t seed) { return Head(in_dim, class_count, seed); }

// ---------------------------------------------------------------------------
// Normalizations
// ---------------------------------------------------------------------------

Matrix m_norm(const Matrix& features) {
    Matrix out(features.rows, features.cols);
    for (int i = 0; i < features.rows; ++i) {
        double norm = row_norm(features, i);
        if (norm < 1e-12)
            throw std::invalid_argument("m_norm: row " + std::to_string(i) +
                                        " has near-zero norm, feature degenerate");
        for (int j = 0; j < features.cols; ++j) out.at(i, j) = features.at(i, j) / norm;
    }
    return out;
}

Matrix m_norm_backward(const Matrix& features, const Matrix& normalized, const Matrix& d_norm) {
    Matrix dx(features.rows, features.cols);
    for (int i = 0; i < features.rows; ++i) {
        double norm = row_norm(features, i);
        double proj = 0.0;
        for (int j = 0; j < features.cols; ++j) proj += normalized.at(i, j) * d_norm.at(i, j);
        for (int j = 0; j < features.cols; ++j)
            dx.at(i, j) = (d_norm.at(i, j) - normalized.at(i, j) * proj) / norm;
    }
    return dx;
}

namespace {
constexpr double kStdEps = 1e-8;

void column_stats(const Matrix& x, std::vector<double>& mu, std::vector<double>& sd) {
    mu.assign(x.cols, 0.0);
    sd.assign(x.cols, 0.0);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) mu[j] += x.at(i, j);
    for (auto& m : mu) m /= x.rows;
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) {
            double d = x.at(i, j) - mu[j];
            sd[j] += d * d;
        }
    for (auto& s : sd) s = std::sqrt(s / x.rows + kStdEps);
}
}  // namespace

Matrix batch_std_l2(const Matrix& features) {
    std::vector<double> mu, sd;
    column_stats(features, mu, sd);
    Matrix z(features.rows, features.cols);
    for (int i = 0; i < features.rows; ++i)
        for (int j = 0; j < features.cols; ++j) z.at(i, j) = (features.at(i, j) - mu[j]) / sd[j];
    return m_norm(z);
}

Matrix batch_std_l2_backward(const Matrix& features, const Matrix& d_out) {
    std::vector<double> mu, sd;
    column_stats(features, mu, sd);
    Matrix z(features.rows, features.cols);
    for (int i = 0; i < features.rows; ++i)
        for (int j = 0; j < features.cols; ++j) z.at(i, j) = (features.at(i, j) - mu[j]) / sd[j];
    Matrix zn = m_norm(z);
    Matrix dz = m_norm_backward(z, zn, d_out);
    // standardization couples the batch: dx = (dz - mean(dz) - zhat*mean(dz*zhat)) / sd
    Matrix dx(features.rows, features.cols);
    const int n = features.rows;
    for (int j = 0; j < features.cols; ++j) {
        double m1 = 0.0, m2 = 0.0;
        for (int i = 0; i < n; ++i) {
            m1 += dz.at(i, j);
            m2 += dz.at(i, j) * z.at(i, j);
        }
        m1 /= n;
        m2 /= n;
        for (int i = 0; i < n; ++i) dx.at(i, j) = (dz.at(i, j) - m1 - z.at(i, j) * m2) / sd[j];
    }
    return dx;
}

Matrix apply_m_norm(const Matrix& features, MNormMode mode) {
    return mode == MNormMode::RowL2 ? m_norm(features) : batch_std_l2(features);
}

Matrix apply_m_norm_backward(const Matrix& features, const Matrix& d_out, MNormMode mode) {
    if (mode == MNormMode::RowL2) {
        Matrix normalized = m_norm(features);
        return m_norm_backward(features, normalized, d_out);
    }
    return batch_std_l2_backward(features, d_out);
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows, logits.cols);
    for (int i = 0; i < logits.rows; ++i) {
        double mx = -1e300;
        for (int j = 0; j < logits.cols; ++j) mx = std::max(mx, logits.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < logits.cols; ++j) {
            out.at(i, j) = std::exp(logits.at(i, j) - mx);
            sum += out.at(i, j);
        }
        for (int j = 0; j < logits.cols; ++j) out.at(i, j) /= sum;
    }
    return out;
}

Matrix softmax_backward(const Matrix& probs, const Matrix& d_probs) {
    Matrix dl(probs.rows, probs.cols);
    for (int i = 0; i < probs.rows; ++i) {
        double inner = 0.0;
        for (int j = 0; j < probs.cols; ++j) inner += d_probs.at(i, j) * probs.at(i, j);
        for (int j = 0; j < probs.cols; ++j)
            dl.at(i, j) = probs.at(i, j) * (d_probs.at(i, j) - inner);
    }
    return dl;
}

}  // namespace mesen
