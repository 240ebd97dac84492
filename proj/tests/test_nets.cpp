#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "mesen/nets.hpp"
#include "oracles.hpp"

using namespace mesen;

namespace {

TrainConfig small_cfg() {
    TrainConfig cfg = default_config(3, 8);
    cfg.encoder_conv_channels = {6, 10};
    cfg.encoder_kernel = 5;
    cfg.encoder_stride = 2;
    cfg.encoder_ffn_hidden = 12;
    return cfg;
}

Tensor3 random_input(int n, int c, int t, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Tensor3 x(n, c, t);
    for (auto& v : x.v) v = dist(rng);
    return x;
}

Matrix random_matrix(int n, int d, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(n, d);
    for (auto& v : m.v) v = dist(rng);
    return m;
}

std::vector<double> flat_params(LayeredModel& m) {
    std::vector<double> out;
    for (Layer* l : m.blocks())
        for (auto& t : l->tensors()) out.insert(out.end(), t.w.begin(), t.w.end());
    return out;
}

// FD check of d(sum of outputs)/d(param) for >= 20 random coordinates per
// layer block.
template <typename Forward, typename Backward>
void check_param_gradients(LayeredModel& model, Forward fwd, Backward bwd, uint64_t seed) {
    std::mt19937_64 rng(seed);
    fwd();
    model.zero_grad();
    bwd();
    for (Layer* layer : model.blocks()) {
        const size_t count = layer->param_count();
        for (int probe = 0; probe < 20; ++probe) {
            size_t idx = rng() % count;
            double analytic = layer->grad(idx);
            double fd = oracle::fd_derivative([&]() { return fwd(); }, &layer->param(idx));
            INFO("layer ", layer->id(), " coord ", idx);
            CHECK(oracle::grad_rel_error(analytic, fd) <= 1e-4);
        }
    }
}

}  // namespace

TEST_CASE("encoder: shape contract") {
    TrainConfig cfg = default_config(6, 128);  // default conv stack (32, 64)
    Encoder enc = build_encoder(3, 128, cfg, 42);
    Tensor3 x = random_input(5, 3, 128, 1);
    Matrix out = enc.forward(x, false);
    CHECK(out.rows == 5);
    CHECK(out.cols == 64);
    CHECK(out.all_finite());
}

TEST_CASE("encoder: seed determinism and layer block partition") {
    TrainConfig cfg = small_cfg();
    Encoder a = build_encoder(3, 32, cfg, 7);
    Encoder b = build_encoder(3, 32, cfg, 7);
    Encoder c = build_encoder(3, 32, cfg, 8);
    CHECK(flat_params(a) == flat_params(b));
    CHECK(flat_params(a) != flat_params(c));

    // ids unique, count matches config, blocks cover every parameter once
    auto ids = a.layer_ids();
    std::set<std::string> unique(ids.begin(), ids.end());
    CHECK(unique.size() == ids.size());
    CHECK(static_cast<int>(ids.size()) == cfg.encoder_layer_count());
    size_t total = 0;
    for (Layer* l : a.blocks()) total += l->param_count();
    CHECK(total == flat_params(a).size());
}

TEST_CASE("encoder: build-time rejection of incompatible shapes") {
    TrainConfig cfg = small_cfg();
    CHECK_THROWS(build_encoder(3, 8, cfg, 1));   // second conv would be empty
    CHECK_THROWS(build_encoder(3, 3, cfg, 1));   // shorter than one kernel
    CHECK_THROWS(build_encoder(0, 32, cfg, 1));
    CHECK_NOTHROW(build_encoder(3, 32, cfg, 1));
}

TEST_CASE("encoder: inference forward is pure and matches training forward") {
    TrainConfig cfg = small_cfg();
    Encoder enc = build_encoder(2, 24, cfg, 3);
    Tensor3 x = random_input(4, 2, 24, 2);
    Matrix train_out = enc.forward(x, true);
    Matrix a = enc.predict(x);
    Matrix b = enc.predict(x);
    CHECK(a.v == b.v);
    CHECK(a.v == train_out.v);
}

TEST_CASE("encoder: parameter gradients match finite differences") {
    TrainConfig cfg = small_cfg();
    Encoder enc = build_encoder(2, 24, cfg, 5);
    Tensor3 x = random_input(3, 2, 24, 11);
    Matrix out;
    auto fwd = [&]() {
        out = enc.forward(x, true);
        double s = 0.0;
        for (double v : out.v) s += v;
        return s;
    };
    auto bwd = [&]() {
        Matrix ones(out.rows, out.cols, 1.0);
        enc.backward(ones);
    };
    check_param_gradients(enc, fwd, bwd, 101);
}

TEST_CASE("encoder: input gradients match finite differences") {
    TrainConfig cfg = small_cfg();
    Encoder enc = build_encoder(2, 24, cfg, 5);
    Tensor3 x = random_input(3, 2, 24, 13);
    auto eval = [&]() {
        Matrix out = enc.forward(x, true);
        double s = 0.0;
        for (double v : out.v) s += v;
        return s;
    };
    eval();
    enc.zero_grad();
    Matrix ones(3, cfg.encoder_dim(), 1.0);
    Tensor3 dx = enc.backward(ones);
    std::mt19937_64 rng(17);
    for (int probe = 0; probe < 25; ++probe) {
        size_t idx = rng() % x.v.size();
        double fd = oracle::fd_derivative([&]() { return eval(); }, &x.v[idx]);
        CHECK(oracle::grad_rel_error(dx.v[idx], fd) <= 1e-4);
    }
}

TEST_CASE("projector: shape, determinism, gradients") {
    Projector pa = build_projector(10, 8, 21);
    Projector pb = build_projector(10, 8, 21);
    CHECK(flat_params(pa) == flat_params(pb));
    CHECK_THROWS(build_projector(10, 1, 21));  // feature_dim < 2

    Matrix h = random_matrix(6, 10, 31);
    Matrix out = pa.forward(h, false);
    CHECK(out.rows == 6);
    CHECK(out.cols == 8);

    Matrix cache;
    auto fwd = [&]() {
        cache = pa.forward(h, true);
        double s = 0.0;
        for (double v : cache.v) s += v;
        return s;
    };
    auto bwd = [&]() {
        Matrix ones(cache.rows, cache.cols, 1.0);
        pa.backward(ones);
    };
    check_param_gradients(pa, fwd, bwd, 103);
}

TEST_CASE("head: softmax contract and gradients") {
    Head head = build_head(7, 4, 33);
    CHECK_THROWS(build_head(7, 1, 33));

    // zero weights, zero bias -> uniform rows
    Head zero_head = build_head(7, 4, 33);
    for (Layer* l : zero_head.blocks())
        for (auto& t : l->tensors()) std::fill(t.w.begin(), t.w.end(), 0.0);
    Matrix x = random_matrix(5, 7, 41);
    Matrix uniform = zero_head.forward(x, false);
    for (int i = 0; i < uniform.rows; ++i)
        for (int j = 0; j < uniform.cols; ++j) CHECK(uniform.at(i, j) == doctest::Approx(0.25).epsilon(1e-12));

    // any input -> rows sum to 1
    Matrix probs = head.forward(x, false);
    for (int i = 0; i < probs.rows; ++i) {
        double sum = 0.0;
        for (int j = 0; j < probs.cols; ++j) {
            sum += probs.at(i, j);
            CHECK(probs.at(i, j) >= 0.0);
        }
        CHECK(std::fabs(sum - 1.0) <= 1e-6);
    }

    // gradient of sum(log p[label]) through softmax and linear
    std::vector<int> labels = {0, 3, 1, 2, 0};
    Matrix cache;
    auto fwd = [&]() {
        cache = head.forward(x, true);
        double s = 0.0;
        for (int i = 0; i < cache.rows; ++i) s += std::log(cache.at(i, labels[i]));
        return s;
    };
    auto bwd = [&]() {
        Matrix dprobs(cache.rows, cache.cols);
        for (int i = 0; i < cache.rows; ++i) dprobs.at(i, labels[i]) = 1.0 / cache.at(i, labels[i]);
        head.backward(dprobs);
    };
    check_param_gradients(head, fwd, bwd, 107);
}

TEST_CASE("m_norm: examples and idempotence") {
    Matrix m(1, 2);
    m.at(0, 0) = 3.0;
    m.at(0, 1) = 4.0;
    Matrix z = m_norm(m);
    CHECK(z.at(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(z.at(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

    Matrix again = m_norm(z);
    for (size_t i = 0; i < z.v.size(); ++i) CHECK(std::fabs(again.v[i] - z.v[i]) <= 1e-12);

    Matrix r = random_matrix(8, 16, 51);
    Matrix rn = m_norm(r);
    for (int i = 0; i < rn.rows; ++i) CHECK(std::fabs(row_norm(rn, i) - 1.0) <= 1e-9);

    Matrix zero(2, 3);
    CHECK_THROWS(m_norm(zero));
}

TEST_CASE("m_norm: backward matches finite differences, both modes") {
    std::mt19937_64 rng(57);
    Matrix x = random_matrix(5, 6, 59);
    Matrix d_out = random_matrix(5, 6, 61);

    for (MNormMode mode : {MNormMode::RowL2, MNormMode::BatchStdL2}) {
        auto eval = [&]() {
            Matrix z = apply_m_norm(x, mode);
            double s = 0.0;
            for (size_t u = 0; u < z.v.size(); ++u) s += z.v[u] * d_out.v[u];
            return s;
        };
        Matrix dx = apply_m_norm_backward(x, d_out, mode);
        for (int probe = 0; probe < 30; ++probe) {
            size_t idx = rng() % x.v.size();
            double fd = oracle::fd_derivative([&]() { return eval(); }, &x.v[idx]);
            CHECK(oracle::grad_rel_error(dx.v[idx], fd) <= 1e-4);
        }
    }
}

TEST_CASE("batch_std_l2 produces unit rows from batch-standardized features") {
    Matrix x = random_matrix(7, 5, 63);
    Matrix z = batch_std_l2(x);
    for (int i = 0; i < z.rows; ++i) CHECK(std::fabs(row_norm(z, i) - 1.0) <= 1e-9);
}
