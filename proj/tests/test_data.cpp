#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mesen/data.hpp"
#include "mesen/rng.hpp"
#include "oracles.hpp"

using namespace mesen;
namespace fs = std::filesystem;

namespace {

SynthSpec small_spec() {
    SynthSpec spec;
    spec.class_count = 2;
    spec.modality_specs = {{"a", 2, 32}, {"b", 3, 32}};
    spec.users = 2;
    spec.samples_per_user_per_class = 3;
    spec.noise_sigma = 0.0;
    spec.correlation_strength = 1.0;
    return spec;
}

// two-modality dataset with explicit users/labels, 1x4 windows
PairedDataset manual_dataset(const std::vector<std::pair<int, int>>& user_label, int classes) {
    PairedDataset ds;
    ds.modalities = {"a", "b"};
    ds.class_count = classes;
    ds.windows.resize(2);
    int k = 0;
    for (auto [user, label] : user_label) {
        for (int m = 0; m < 2; ++m) {
            ModalityWindow w;
            w.modality_id = ds.modalities[m];
            w.data = Matrix(1, 4, 0.1 * k);
            w.user_id = user;
            if (label >= 0) w.label = label;
            ds.windows[m].push_back(w);
        }
        ++k;
    }
    return ds;
}

std::vector<double> channel_mean_series(const Matrix& w) {
    std::vector<double> out(w.cols, 0.0);
    for (int t = 0; t < w.cols; ++t) {
        for (int c = 0; c < w.rows; ++c) out[t] += w.at(c, t);
        out[t] /= w.rows;
    }
    return out;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("mesen_test_" + std::to_string(std::rand()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("generate_synthetic: determinism and zero-noise latent transform") {
    SynthSpec spec = small_spec();
    SynthDebug dbg;
    PairedDataset a = generate_synthetic(spec, 5, &dbg);
    PairedDataset b = generate_synthetic(spec, 5);
    REQUIRE(a.sample_count() == b.sample_count());
    for (int m = 0; m < 2; ++m)
        for (int k = 0; k < a.sample_count(); ++k) CHECK(a.windows[m][k].data.v == b.windows[m][k].data.v);

    // with full correlation both modalities carry the shared latent, and
    // with zero noise every window is the exact render of that latent
    for (int k = 0; k < a.sample_count(); ++k) {
        const auto& info = dbg.samples[k];
        CHECK(info.per_modality[0].phase == info.shared.phase);
        CHECK(info.per_modality[1].phase == info.shared.phase);
        Matrix expect_b = render_synth_window(spec, 1, info.label, info.shared,
                                              dbg.user_effects[info.user][1]);
        CHECK(a.windows[1][k].data.v == expect_b.v);
    }
    CHECK(validate_paired(a).empty());
}

TEST_CASE("generate_synthetic: different seeds differ") {
    SynthSpec spec = small_spec();
    PairedDataset a = generate_synthetic(spec, 5);
    PairedDataset c = generate_synthetic(spec, 6);
    CHECK(a.windows[0][0].data.v != c.windows[0][0].data.v);
}

TEST_CASE("generate_synthetic: rejects invalid specs") {
    SynthSpec spec = small_spec();
    spec.modality_specs[0].timesteps = 7;
    CHECK_THROWS(generate_synthetic(spec, 1));

    spec = small_spec();
    spec.class_count = 1;
    CHECK_THROWS(generate_synthetic(spec, 1));

    spec = small_spec();
    spec.modality_specs.pop_back();
    CHECK_THROWS(generate_synthetic(spec, 1));

    spec = small_spec();
    spec.noise_sigma = -0.1;
    CHECK_THROWS(generate_synthetic(spec, 1));
}

TEST_CASE("generate_synthetic: paired windows correlate above non-paired ones") {
    SynthSpec spec;
    spec.class_count = 4;
    spec.modality_specs = {{"a", 2, 64}, {"b", 2, 64}};
    spec.users = 5;
    spec.samples_per_user_per_class = 10;  // 200 samples
    spec.noise_sigma = 0.1;
    spec.correlation_strength = 1.0;
    PairedDataset ds = generate_synthetic(spec, 77);
    REQUIRE(ds.sample_count() == 200);

    std::vector<std::vector<double>> sa, sb;
    for (int k = 0; k < 200; ++k) {
        sa.push_back(channel_mean_series(ds.windows[0][k].data));
        sb.push_back(channel_mean_series(ds.windows[1][k].data));
    }
    double within = 0.0;
    for (int k = 0; k < 200; ++k) within += oracle::pearson(sa[k], sb[k]);
    within /= 200.0;
    double cross = 0.0;
    int cross_n = 0;
    for (int i = 0; i < 200; ++i)
        for (int j = 0; j < 200; ++j) {
            if (i == j) continue;
            cross += oracle::pearson(sa[i], sb[j]);
            ++cross_n;
        }
    cross /= cross_n;
    CHECK(within > cross);
    CHECK(within > 0.3);  // paired samples share phase and frequency
}

TEST_CASE("generate_synthetic passes validate_paired over random specs") {
    std::mt19937_64 rng(123);
    for (int trial = 0; trial < 10; ++trial) {
        SynthSpec spec;
        spec.class_count = 2 + static_cast<int>(rng() % 4);
        int modalities = 2 + static_cast<int>(rng() % 2);
        for (int m = 0; m < modalities; ++m)
            spec.modality_specs.push_back(
                {"m" + std::to_string(m), 1 + static_cast<int>(rng() % 3), 8 + static_cast<int>(rng() % 24)});
        spec.users = 1 + static_cast<int>(rng() % 3);
        spec.samples_per_user_per_class = 1 + static_cast<int>(rng() % 3);
        spec.noise_sigma = (rng() % 10) / 20.0;
        spec.correlation_strength = (rng() % 11) / 10.0;
        PairedDataset ds = generate_synthetic(spec, rng());
        CHECK(validate_paired(ds).empty());
    }
}

TEST_CASE("csv layout round-trips through ingest_csv") {
    SynthSpec spec = small_spec();
    spec.noise_sigma = 0.05;
    PairedDataset ds = generate_synthetic(spec, 9);
    TempDir dir;
    write_csv_layout(ds, dir.path.string());

    CsvSchema schema = {{"a", {2, 32}}, {"b", {3, 32}}};
    PairedDataset back = ingest_csv(dir.path.string(), schema);
    CHECK(back.sample_count() == ds.sample_count());
    CHECK(back.class_count == 2);
    CHECK(back.modalities == ds.modalities);
    for (int m = 0; m < 2; ++m)
        for (int k = 0; k < ds.sample_count(); ++k) {
            CHECK(back.windows[m][k].data.v == ds.windows[m][k].data.v);
            CHECK(back.windows[m][k].user_id == ds.windows[m][k].user_id);
            CHECK(back.windows[m][k].label == ds.windows[m][k].label);
        }
}

TEST_CASE("ingest_csv: ten aligned rows give n=10") {
    std::vector<std::pair<int, int>> rows;
    for (int i = 0; i < 10; ++i) rows.push_back({i % 3, i % 2});
    PairedDataset ds = manual_dataset(rows, 2);
    TempDir dir;
    write_csv_layout(ds, dir.path.string());
    PairedDataset back = ingest_csv(dir.path.string(), {{"a", {1, 4}}, {"b", {1, 4}}});
    CHECK(back.sample_count() == 10);
}

TEST_CASE("ingest_csv: missing sample_index is a hard error naming the index") {
    PairedDataset ds = manual_dataset({{0, 0}, {0, 1}, {1, 0}, {1, 1}, {2, 0}, {2, 1}, {0, 0}, {1, 1}}, 2);
    TempDir dir;
    write_csv_layout(ds, dir.path.string());

    // drop row with sample_index 7 from b.csv
    fs::path bpath = dir.path / "b.csv";
    std::ifstream in(bpath);
    std::string line, contents;
    while (std::getline(in, line))
        if (line.rfind("7,", 0) != 0) contents += line + "\n";
    in.close();
    std::ofstream(bpath) << contents;

    CHECK_THROWS_WITH(ingest_csv(dir.path.string(), {{"a", {1, 4}}, {"b", {1, 4}}}),
                      doctest::Contains("7"));
}

TEST_CASE("ingest_csv: non-numeric cell names row and column") {
    PairedDataset ds = manual_dataset({{0, 0}, {0, 1}}, 2);
    TempDir dir;
    write_csv_layout(ds, dir.path.string());
    fs::path apath = dir.path / "a.csv";
    std::ifstream in(apath);
    std::string line, contents;
    int row = 0;
    while (std::getline(in, line)) {
        if (row == 2) {
            auto pos = line.find_last_of(',');
            line = line.substr(0, pos + 1) + "oops";
        }
        contents += line + "\n";
        ++row;
    }
    in.close();
    std::ofstream(apath) << contents;
    CHECK_THROWS_WITH(ingest_csv(dir.path.string(), {{"a", {1, 4}}, {"b", {1, 4}}}),
                      doctest::Contains("row 3"));
}

TEST_CASE("ingest_csv: class count follows the largest label") {
    // UCI-shaped export: 2 modalities, labels 0..5
    std::vector<std::pair<int, int>> rows;
    for (int i = 0; i < 12; ++i) rows.push_back({i % 4, i % 6});
    PairedDataset ds = manual_dataset(rows, 6);
    TempDir dir;
    write_csv_layout(ds, dir.path.string());
    PairedDataset back = ingest_csv(dir.path.string(), {{"a", {1, 4}}, {"b", {1, 4}}});
    CHECK(back.class_count == 6);
}

TEST_CASE("split_by_user: keeps train users only and partitions samples") {
    SynthSpec spec = small_spec();
    spec.users = 30;
    spec.samples_per_user_per_class = 2;
    PairedDataset ds = generate_synthetic(spec, 13);

    std::set<int> train_users, eval_users;
    for (int u = 0; u < 24; ++u) train_users.insert(u);
    for (int u = 24; u < 30; ++u) eval_users.insert(u);
    SplitResult split = split_by_user(ds, train_users, eval_users, 3);

    for (const auto& w : split.train.windows[0]) CHECK(train_users.count(w.user_id) == 1);
    for (const auto& w : split.validation.windows[0]) CHECK(eval_users.count(w.user_id) == 1);
    for (const auto& w : split.test.windows[0]) CHECK(eval_users.count(w.user_id) == 1);
    CHECK(split.train.sample_count() == 24 * 2 * 2);
    CHECK(split.train.sample_count() + split.validation.sample_count() + split.test.sample_count() ==
          ds.sample_count());
    CHECK(validate_paired(split.train).empty());
    CHECK(validate_paired(split.validation).empty());
    CHECK(validate_paired(split.test).empty());
}

TEST_CASE("split_by_user: eval samples split 1:1 within one sample") {
    // 100 eval samples across 4 classes with odd per-class counts
    std::vector<std::pair<int, int>> rows;
    for (int i = 0; i < 40; ++i) rows.push_back({0, i % 4});  // train user 0
    for (int i = 0; i < 100; ++i) rows.push_back({9, i % 4});
    PairedDataset ds = manual_dataset(rows, 4);
    SplitResult split = split_by_user(ds, {0}, {9}, 11);
    CHECK(split.validation.sample_count() + split.test.sample_count() == 100);
    CHECK(std::abs(split.validation.sample_count() - split.test.sample_count()) <= 1);

    // odd total: 99 eval samples
    rows.pop_back();
    PairedDataset ds2 = manual_dataset(rows, 4);
    SplitResult split2 = split_by_user(ds2, {0}, {9}, 11);
    CHECK(split2.validation.sample_count() + split2.test.sample_count() == 99);
    CHECK(std::abs(split2.validation.sample_count() - split2.test.sample_count()) <= 1);
}

TEST_CASE("split_by_user: overlapping or uncovered users are errors") {
    PairedDataset ds = manual_dataset({{0, 0}, {1, 1}, {2, 0}}, 2);
    CHECK_THROWS(split_by_user(ds, {0, 1}, {1, 2}, 1));
    CHECK_THROWS(split_by_user(ds, {0}, {1}, 1));  // user 2 uncovered
}

TEST_CASE("sample_few_labels: labeling rate arithmetic") {
    std::vector<std::pair<int, int>> rows;
    for (int i = 0; i < 1714; ++i) rows.push_back({0, i % 6});
    PairedDataset train = manual_dataset(rows, 6);
    FewShotSelection sel = sample_few_labels(train, 1, 21);
    CHECK(sel.labeling_rate == doctest::Approx(6.0 / 1714.0).epsilon(1e-12));
    CHECK(std::fabs(sel.labeling_rate - 0.0035) < 1e-4);
    for (const auto& cls : sel.labeled_indices) CHECK(cls.size() == 1);
}

TEST_CASE("sample_few_labels: determinism, disjointness, errors") {
    std::vector<std::pair<int, int>> rows;
    for (int i = 0; i < 60; ++i) rows.push_back({i % 5, i % 3});
    PairedDataset train = manual_dataset(rows, 3);

    FewShotSelection a = sample_few_labels(train, 4, 5);
    FewShotSelection b = sample_few_labels(train, 4, 5);
    CHECK(a.labeled_indices == b.labeled_indices);
    FewShotSelection c = sample_few_labels(train, 4, 6);
    CHECK(a.labeled_indices != c.labeled_indices);

    std::set<int> seen;
    for (const auto& cls : a.labeled_indices)
        for (int idx : cls) CHECK(seen.insert(idx).second);

    CHECK_THROWS(sample_few_labels(train, 0, 5));

    // class 2 absent from the train split
    std::vector<std::pair<int, int>> no2;
    for (int i = 0; i < 20; ++i) no2.push_back({0, i % 2});
    PairedDataset train2 = manual_dataset(no2, 3);
    CHECK_THROWS_WITH(sample_few_labels(train2, 1, 5), doctest::Contains("class 2"));
}
