#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mesen/losses.hpp"
#include "oracles.hpp"

using namespace mesen;

namespace {

FeatureBatch feat(Matrix m, std::string id) { return FeatureBatch{std::move(m), std::move(id)}; }
PseudoProbMatrix prob(Matrix m, std::string id) { return PseudoProbMatrix{std::move(m), std::move(id)}; }

Matrix identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
}

}  // namespace

TEST_CASE("cross_modal_loss: orthonormal identity closed form") {
    // N=2, tau=1, za=zb=I2: logits per sample are {1, 0}, so each
    // per-sample loss is log(1+e^-1).
    Matrix i2 = identity(2);
    auto r = cross_modal_loss(feat(i2, "a"), feat(i2, "b"), 1.0, 0.5, 0.5);
    const double expected = std::log(1.0 + std::exp(-1.0));
    CHECK(r.value == doctest::Approx(expected).epsilon(1e-12));
    CHECK(std::fabs(r.value - 0.31326) < 1e-5);
    CHECK(r.mean_a2b == doctest::Approx(expected).epsilon(1e-12));
    CHECK(r.mean_b2a == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("cross_modal_loss: identical rows give log N") {
    Matrix m(4, 3);
    for (int i = 0; i < 4; ++i) {
        m.at(i, 0) = 0.6;
        m.at(i, 1) = 0.8;
        m.at(i, 2) = 0.0;
    }
    for (double tau : {0.2, 1.0, 3.7}) {
        auto r = cross_modal_loss(feat(m, "a"), feat(m, "b"), tau, 0.5, 0.5);
        CHECK(r.value == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
}

TEST_CASE("cross_modal_loss: modality swap symmetry at equal weights") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 2 + static_cast<int>(rng() % 6);
        int d = 4 + static_cast<int>(rng() % 8);
        Matrix za = oracle::random_unit_rows(n, d, rng);
        Matrix zb = oracle::random_unit_rows(n, d, rng);
        auto fwd = cross_modal_loss(feat(za, "a"), feat(zb, "b"), 0.3, 0.5, 0.5);
        auto rev = cross_modal_loss(feat(zb, "b"), feat(za, "a"), 0.3, 0.5, 0.5);
        CHECK(std::fabs(fwd.value - rev.value) <= 1e-12);
    }
}

TEST_CASE("cross_modal_loss: agrees with brute-force oracle") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        int n = 2 + static_cast<int>(rng() % 7);
        int d = 3 + static_cast<int>(rng() % 10);
        double tau = 0.1 + 0.9 * (rng() % 100) / 100.0;
        Matrix za = oracle::random_unit_rows(n, d, rng);
        Matrix zb = oracle::random_unit_rows(n, d, rng);
        auto r = cross_modal_loss(feat(za, "a"), feat(zb, "b"), tau, 0.5, 0.5);
        double expect = oracle::cross_modal_bruteforce(za, zb, tau, 0.5, 0.5);
        CHECK(std::fabs(r.value - expect) <= 1e-10);

        auto ri = cross_modal_loss(feat(za, "a"), feat(zb, "b"), tau, 0.5, 0.5, true);
        double expect_i = oracle::cross_modal_bruteforce(za, zb, tau, 0.5, 0.5, true);
        CHECK(std::fabs(ri.value - expect_i) <= 1e-10);
    }
}

TEST_CASE("cross_modal_loss: denominator term counts and ablation difference") {
    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        int n = 3 + static_cast<int>(rng() % 5);
        Matrix za = oracle::random_unit_rows(n, 6, rng);
        Matrix zb = oracle::random_unit_rows(n, 6, rng);
        auto inter = cross_modal_loss(feat(za, "a"), feat(zb, "b"), 0.5, 0.5, 0.5, false);
        auto intra = cross_modal_loss(feat(za, "a"), feat(zb, "b"), 0.5, 0.5, 0.5, true);
        CHECK(inter.denominator_terms == n);
        CHECK(intra.denominator_terms == 2 * n - 1);
        CHECK(inter.value != intra.value);
    }
}

TEST_CASE("cross_modal_loss: batch permutation invariance") {
    std::mt19937_64 rng(17);
    int n = 6, d = 5;
    Matrix za = oracle::random_unit_rows(n, d, rng);
    Matrix zb = oracle::random_unit_rows(n, d, rng);
    std::vector<int> perm = {3, 0, 5, 1, 4, 2};
    Matrix pza(n, d), pzb(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) {
            pza.at(i, j) = za.at(perm[i], j);
            pzb.at(i, j) = zb.at(perm[i], j);
        }
    auto base = cross_modal_loss(feat(za, "a"), feat(zb, "b"), 0.4, 0.3, 0.7);
    auto permuted = cross_modal_loss(feat(pza, "a"), feat(pzb, "b"), 0.4, 0.3, 0.7);
    CHECK(std::fabs(base.value - permuted.value) <= 1e-12);
}

TEST_CASE("cross_modal_loss: rejects degenerate batches and unnormalized rows") {
    Matrix one(1, 4);
    one.at(0, 0) = 1.0;
    CHECK_THROWS(cross_modal_loss(feat(one, "a"), feat(one, "b"), 1.0, 0.5, 0.5));

    Matrix bad = identity(3);
    bad.at(0, 0) = 1.5;  // norm deviation > 1e-3
    Matrix ok = identity(3);
    CHECK_THROWS(cross_modal_loss(feat(bad, "a"), feat(ok, "b"), 1.0, 0.5, 0.5));
}

TEST_CASE("cross_modal_loss: input gradients match finite differences") {
    std::mt19937_64 rng(19);
    int n = 5, d = 6;
    Matrix za = oracle::random_unit_rows(n, d, rng);
    Matrix zb = oracle::random_unit_rows(n, d, rng);
    // 1e-5 probes keep row norms within the 1e-3 normalization tolerance,
    // so finite differences and the analytic path see the same function.
    auto r = cross_modal_loss(feat(za, "a"), feat(zb, "b"), 0.5, 0.4, 0.6);
    std::uniform_int_distribution<int> pick_row(0, n - 1), pick_col(0, d - 1), pick_side(0, 1);
    int checked = 0;
    for (int probe = 0; probe < 60; ++probe) {
        int i = pick_row(rng), j = pick_col(rng);
        bool side_a = pick_side(rng) == 0;
        Matrix& target = side_a ? za : zb;
        double* coord = &target.at(i, j);
        double fd = oracle::fd_derivative(
            [&]() {
                return cross_modal_loss(feat(za, "a"), feat(zb, "b"), 0.5, 0.4, 0.6, false, false).value;
            },
            coord);
        double analytic = side_a ? r.grad_a.at(i, j) : r.grad_b.at(i, j);
        CHECK(oracle::grad_rel_error(analytic, fd) <= 1e-4);
        ++checked;
    }
    CHECK(checked >= 50);
}

TEST_CASE("pseudo_align_loss: identity matrices closed form") {
    // N = N_cls = 3, identity pseudo-probabilities, tau_hat=1, lambda=-1:
    // per-class aligning term log(1+4/e), usage entropy log 3.
    Matrix i3 = identity(3);
    auto r = pseudo_align_loss(prob(i3, "a"), prob(i3, "b"), 1.0, -1.0);
    const double align = std::log(1.0 + 4.0 * std::exp(-1.0));
    const double entropy = std::log(3.0);
    CHECK(r.align == doctest::Approx(align).epsilon(1e-12));
    CHECK(r.l_pr == doctest::Approx(entropy).epsilon(1e-12));
    CHECK(r.value == doctest::Approx(align - entropy).epsilon(1e-12));
    CHECK(std::fabs(r.value - (-0.19378)) < 1e-5);
    CHECK(r.denominator_terms == 5);
}

TEST_CASE("pseudo_align_loss: uniform matrices closed form") {
    int n = 4, c = 3;
    Matrix u(n, c, 1.0 / c);
    auto r = pseudo_align_loss(prob(u, "a"), prob(u, "b"), 1.0, -1.0);
    // all normalized columns coincide, every similarity is 1, so each
    // aligning term is log(2*N_cls - 1)
    CHECK(r.align == doctest::Approx(std::log(5.0)).epsilon(1e-12));
    CHECK(r.l_pr == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("pseudo_align_loss: modality swap symmetry") {
    std::mt19937_64 rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        int n = 3 + static_cast<int>(rng() % 6);
        int c = 2 + static_cast<int>(rng() % 5);
        Matrix ya = oracle::random_row_stochastic(n, c, rng);
        Matrix yb = oracle::random_row_stochastic(n, c, rng);
        auto fwd = pseudo_align_loss(prob(ya, "a"), prob(yb, "b"), 0.7, -0.5);
        auto rev = pseudo_align_loss(prob(yb, "b"), prob(ya, "a"), 0.7, -0.5);
        CHECK(std::fabs(fwd.value - rev.value) <= 1e-12);
    }
}

TEST_CASE("pseudo_align_loss: agrees with brute-force oracle") {
    std::mt19937_64 rng(29);
    for (int trial = 0; trial < 200; ++trial) {
        int n = 2 + static_cast<int>(rng() % 7);
        int c = 2 + static_cast<int>(rng() % 5);
        double tau = 0.2 + (rng() % 100) / 100.0;
        double lambda = -0.1 - (rng() % 100) / 50.0;
        Matrix ya = oracle::random_row_stochastic(n, c, rng);
        Matrix yb = oracle::random_row_stochastic(n, c, rng);
        auto r = pseudo_align_loss(prob(ya, "a"), prob(yb, "b"), tau, lambda);
        double expect = oracle::pseudo_align_bruteforce(ya, yb, tau, lambda, true);
        CHECK(std::fabs(r.value - expect) <= 1e-10);

        auto raw = pseudo_align_loss(prob(ya, "a"), prob(yb, "b"), tau, lambda, ColumnNormMode::Raw);
        double expect_raw = oracle::pseudo_align_bruteforce(ya, yb, tau, lambda, false);
        CHECK(std::fabs(raw.value - expect_raw) <= 1e-10);
    }
}

TEST_CASE("pseudo_align_loss: input gradients match finite differences") {
    std::mt19937_64 rng(31);
    int n = 6, c = 4;
    Matrix ya = oracle::random_row_stochastic(n, c, rng);
    Matrix yb = oracle::random_row_stochastic(n, c, rng);
    auto r = pseudo_align_loss(prob(ya, "a"), prob(yb, "b"), 0.8, -1.0);
    std::uniform_int_distribution<int> pick_row(0, n - 1), pick_col(0, c - 1), pick_side(0, 1);
    int checked = 0;
    for (int probe = 0; probe < 60; ++probe) {
        int i = pick_row(rng), j = pick_col(rng);
        bool side_a = pick_side(rng) == 0;
        Matrix& target = side_a ? ya : yb;
        double* coord = &target.at(i, j);
        double fd = oracle::fd_derivative(
            [&]() {
                return pseudo_align_loss(prob(ya, "a"), prob(yb, "b"), 0.8, -1.0, ColumnNormMode::L2, false)
                    .value;
            },
            coord);
        double analytic = side_a ? r.grad_a.at(i, j) : r.grad_b.at(i, j);
        CHECK(oracle::grad_rel_error(analytic, fd) <= 1e-4);
        ++checked;
    }
    CHECK(checked >= 50);
}

TEST_CASE("pseudo_align_loss: anti-collapse direction of the entropy term") {
    int n = 6, c = 3;
    Matrix uniform(n, c, 1.0 / c);
    Matrix collapsed(n, c);
    for (int i = 0; i < n; ++i) collapsed.at(i, 0) = 1.0;

    auto ru = pseudo_align_loss(prob(uniform, "a"), prob(uniform, "b"), 1.0, -1.0, ColumnNormMode::Raw);
    auto rc = pseudo_align_loss(prob(collapsed, "a"), prob(collapsed, "b"), 1.0, -1.0, ColumnNormMode::Raw);
    CHECK(rc.l_pr < ru.l_pr);                       // collapsing decreases entropy
    CHECK(-1.0 * rc.l_pr > -1.0 * ru.l_pr);         // so the weighted term increases

    // partial collapse sits strictly between the extremes
    Matrix partial(n, c);
    for (int i = 0; i < n; ++i) {
        partial.at(i, 0) = 0.6;
        partial.at(i, 1) = 0.2;
        partial.at(i, 2) = 0.2;
    }
    auto rp = pseudo_align_loss(prob(partial, "a"), prob(partial, "b"), 1.0, -1.0, ColumnNormMode::Raw);
    CHECK(rp.l_pr < ru.l_pr);
    CHECK(rp.l_pr > rc.l_pr);
}

TEST_CASE("pseudo_align_loss: rejects zero-mass columns under L2 normalization") {
    int n = 4, c = 3;
    Matrix y(n, c);
    for (int i = 0; i < n; ++i) {
        y.at(i, 0) = 0.5;
        y.at(i, 1) = 0.5;  // column 2 carries no mass
    }
    CHECK_THROWS(pseudo_align_loss(prob(y, "a"), prob(y, "b"), 1.0, -1.0));
}

TEST_CASE("pretrain_loss: delta balancing forced values") {
    // With |L_CMF| = 2 and |L_MPC| = 4, delta is 0.5 and L_PT is 4.
    // Forced through the public surface by checking the recombination rule
    // on an actual evaluation.
    std::mt19937_64 rng(37);
    Matrix za = oracle::random_unit_rows(5, 6, rng);
    Matrix zb = oracle::random_unit_rows(5, 6, rng);
    Matrix ya = oracle::random_row_stochastic(5, 3, rng);
    Matrix yb = oracle::random_row_stochastic(5, 3, rng);
    TrainConfig cfg = default_config(3, 6);
    auto r = pretrain_loss(feat(za, "a"), feat(zb, "b"), prob(ya, "a"), prob(yb, "b"), cfg);
    const auto& b = r.breakdown;
    CHECK(b.delta == doctest::Approx(std::fabs(b.l_cmf) / std::max(std::fabs(b.l_mpc), 1e-8)));
    CHECK(std::fabs(b.l_pt - (b.l_cmf + b.delta * b.l_mpc)) <= 1e-9);
    CHECK(b.delta > 0.0);
}

TEST_CASE("pretrain_loss: epsilon guard at vanishing l_mpc") {
    // Pick lambda_pr so the aligning term and the weighted entropy cancel:
    // |L_MPC| falls under the 1e-8 floor and delta = |L_CMF| / 1e-8.
    std::mt19937_64 rng(39);
    Matrix za = oracle::random_unit_rows(4, 5, rng);
    Matrix zb = oracle::random_unit_rows(4, 5, rng);
    Matrix ya = oracle::random_row_stochastic(4, 3, rng);
    Matrix yb = oracle::random_row_stochastic(4, 3, rng);
    auto pa = pseudo_align_loss(prob(ya, "a"), prob(yb, "b"), 1.0, -1.0);
    TrainConfig cfg = default_config(3, 5);
    cfg.tau_hat = 1.0;
    cfg.lambda_pr = -pa.align / pa.l_pr;
    auto r = pretrain_loss(feat(za, "a"), feat(zb, "b"), prob(ya, "a"), prob(yb, "b"), cfg);
    CHECK(std::fabs(r.breakdown.l_mpc) < 1e-8);
    CHECK(std::isfinite(r.breakdown.delta));
    CHECK(r.breakdown.delta == doctest::Approx(std::fabs(r.breakdown.l_cmf) / 1e-8).epsilon(1e-6));
    CHECK(std::isfinite(r.breakdown.l_pt));
}

TEST_CASE("pretrain_loss: batch permutation invariance") {
    std::mt19937_64 rng(41);
    int n = 6, d = 5, c = 4;
    Matrix za = oracle::random_unit_rows(n, d, rng);
    Matrix zb = oracle::random_unit_rows(n, d, rng);
    Matrix ya = oracle::random_row_stochastic(n, c, rng);
    Matrix yb = oracle::random_row_stochastic(n, c, rng);
    TrainConfig cfg = default_config(c, d);
    auto base = pretrain_loss(feat(za, "a"), feat(zb, "b"), prob(ya, "a"), prob(yb, "b"), cfg);

    std::vector<int> perm = {5, 2, 0, 4, 1, 3};
    auto permute = [&](const Matrix& m) {
        Matrix p(m.rows, m.cols);
        for (int i = 0; i < m.rows; ++i)
            for (int j = 0; j < m.cols; ++j) p.at(i, j) = m.at(perm[i], j);
        return p;
    };
    auto permuted = pretrain_loss(feat(permute(za), "a"), feat(permute(zb), "b"), prob(permute(ya), "a"),
                                  prob(permute(yb), "b"), cfg);
    CHECK(std::fabs(base.breakdown.l_pt - permuted.breakdown.l_pt) <= 1e-12);
}

TEST_CASE("perfect alignment scores below random configurations") {
    std::mt19937_64 rng(43);
    int n = 4, d = 8;
    Matrix aligned(n, d);
    for (int i = 0; i < n; ++i) aligned.at(i, i) = 1.0;  // orthonormal rows
    double best = cross_modal_loss(feat(aligned, "a"), feat(aligned, "b"), 0.2, 0.5, 0.5).value;
    for (int trial = 0; trial < 100; ++trial) {
        Matrix za = oracle::random_unit_rows(n, d, rng);
        Matrix zb = oracle::random_unit_rows(n, d, rng);
        double v = cross_modal_loss(feat(za, "a"), feat(zb, "b"), 0.2, 0.5, 0.5).value;
        CHECK(best < v);
    }
}

TEST_CASE("finetune_reg: direct sum of squares over layer blocks") {
    // encoder layers [3,4] and [0] with gamma (1, 0.5), head [1,1]:
    // 1*25 + 0.5*0 + 2 = 27
    class StubModel : public LayeredModel {
    public:
        explicit StubModel(std::vector<std::vector<double>> blocks) {
            int i = 0;
            for (auto& b : blocks) {
                auto layer = std::make_unique<Layer>("block" + std::to_string(i++));
                layer->tensors().emplace_back("w", std::vector<int>{static_cast<int>(b.size())});
                layer->tensors()[0].w = b;
                layers_.push_back(std::move(layer));
            }
        }
        std::vector<Layer*> blocks() override {
            std::vector<Layer*> out;
            for (auto& l : layers_) out.push_back(l.get());
            return out;
        }

    private:
        std::vector<std::unique_ptr<Layer>> layers_;
    };

    StubModel encoder({{3.0, 4.0}, {0.0}});
    StubModel head({{1.0, 1.0}});
    CHECK(finetune_reg(encoder, head, {1.0, 0.5}) == doctest::Approx(27.0).epsilon(1e-15));

    // all gamma 1 reduces to plain ||theta_e||^2 + ||theta_c||^2
    CHECK(finetune_reg(encoder, head, {1.0, 1.0}) == doctest::Approx(25.0 + 0.0 + 2.0).epsilon(1e-15));

    // all parameters zero -> 0
    StubModel zero_enc(std::vector<std::vector<double>>{{0.0, 0.0}});
    StubModel zero_head(std::vector<std::vector<double>>{{0.0}});
    CHECK(finetune_reg(zero_enc, zero_head, {1.0}) == 0.0);

    // gamma length mismatch -> error
    CHECK_THROWS(finetune_reg(encoder, head, {1.0}));

    // doubling one layer's parameters quadruples exactly its own term
    StubModel enc2({{6.0, 8.0}, {0.0}});
    double before = finetune_reg(encoder, head, {1.0, 0.5});
    double after = finetune_reg(enc2, head, {1.0, 0.5});
    CHECK(after - before == doctest::Approx(3.0 * 25.0).epsilon(1e-12));
}

TEST_CASE("cross_entropy_loss: closed forms") {
    // perfect one-hot predictions -> 0; uniform over 6 -> log 6 per sample
    Matrix perfect(3, 4);
    perfect.at(0, 1) = 1.0;
    perfect.at(1, 0) = 1.0;
    perfect.at(2, 3) = 1.0;
    auto r = cross_entropy_loss(perfect, {1, 0, 3});
    CHECK(r.value == doctest::Approx(0.0).epsilon(1e-12));

    Matrix uniform(5, 6, 1.0 / 6.0);
    auto ru = cross_entropy_loss(uniform, {0, 1, 2, 3, 4});
    CHECK(ru.value == doctest::Approx(std::log(6.0)).epsilon(1e-12));
    CHECK(std::fabs(ru.value - 1.79176) < 1e-5);

    CHECK_THROWS(cross_entropy_loss(uniform, {0, 1, 2, 3, 6}));   // label out of range
    CHECK_THROWS(cross_entropy_loss(uniform, {0, 1, 2, 3, -1}));
}
