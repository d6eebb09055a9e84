#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "mfe/core_data.hpp"
#include "mfe/rng.hpp"

using namespace mfe;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mfe_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_dummy_raster(const fs::path& path, int h, int w, int channels) {
    ImageU8 img(h, w, channels, channels == 3 ? 255 : 0);
    write_raster(path.string(), img);
}

// manifest with n single-slide patients, the first n_mf of them MF
Manifest toy_manifest(const fs::path& dir, int n, int n_mf, int size = 8) {
    Manifest m;
    m.base_dir = dir.string();
    fs::create_directories(dir / "images");
    for (int i = 0; i < n; ++i) {
        SlideRecord r;
        char buf[32];
        std::snprintf(buf, sizeof buf, "s%03d", i);
        r.slide_id = buf;
        std::snprintf(buf, sizeof buf, "p%03d", i);
        r.patient_id = buf;
        r.disease = i < n_mf ? Disease::MF : Disease::Eczema;
        r.image_path = "images/" + r.slide_id + ".ppm";
        r.width_px = size;
        r.height_px = size;
        write_dummy_raster(dir / r.image_path, size, size, 3);
        m.slides.push_back(r);
    }
    return m;
}

}  // namespace

TEST_CASE("manifest round-trip is byte-identical and loads 3 records") {
    const fs::path dir = temp_dir("manifest_rt");
    Manifest m = toy_manifest(dir, 3, 1);
    m.seed = 99;
    m.legend = {{0, "rest", {255, 255, 255}}, {1, "epidermis", {150, 95, 165}}};
    const fs::path p1 = dir / "manifest.txt";
    save_manifest(p1.string(), m);

    const Manifest loaded = load_manifest(p1.string());
    REQUIRE(loaded.slides.size() == 3);
    CHECK(loaded.seed == 99);
    CHECK(loaded.slides[0].disease == Disease::MF);

    const fs::path p2 = dir / "manifest2.txt";
    save_manifest(p2.string(), loaded);
    std::ifstream a(p1), b(p2);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
}

TEST_CASE("duplicate slide_id is rejected") {
    const fs::path dir = temp_dir("manifest_dup");
    Manifest m = toy_manifest(dir, 2, 1);
    m.slides[1].slide_id = m.slides[0].slide_id;
    save_manifest((dir / "manifest.txt").string(), m);
    CHECK_THROWS_WITH_AS(load_manifest((dir / "manifest.txt").string()),
                         doctest::Contains("duplicate slide_id"), std::runtime_error);
}

TEST_CASE("mask dimension mismatch is rejected") {
    const fs::path dir = temp_dir("manifest_dims");
    Manifest m = toy_manifest(dir, 1, 0, 64);
    fs::create_directories(dir / "masks");
    write_dummy_raster(dir / "masks" / "s000.pgm", 32, 32, 1);  // wrong size on purpose
    m.slides[0].mask_path = "masks/s000.pgm";
    save_manifest((dir / "manifest.txt").string(), m);
    CHECK_THROWS_WITH_AS(load_manifest((dir / "manifest.txt").string()),
                         doctest::Contains("mask"), std::runtime_error);
}

TEST_CASE("missing manifest file errors") {
    CHECK_THROWS_AS(load_manifest("/nonexistent/manifest.txt"), std::runtime_error);
}

TEST_CASE("make_split: ratio-optimal within one slide on 10 singleton patients") {
    const fs::path dir = temp_dir("split_opt");
    const Manifest m = toy_manifest(dir, 10, 6);
    const SplitSpec spec = make_split(m, {0.6, 0.2, 0.2}, 7);

    // returned train composition
    int train_total = 0, train_mf = 0;
    for (const auto& s : m.slides) {
        if (spec.assignment.at(s.slide_id) == SplitSpec::kTrain) {
            ++train_total;
            train_mf += s.disease == Disease::MF;
        }
    }
    REQUIRE(train_total == 6);

    // independent oracle: enumerate every patient assignment into buckets of
    // sizes 6/2/2 and find the train MF count closest to the 3.6 quota
    double best_dev = 1e9;
    std::vector<int> bucket(10, 0);
    std::function<void(int, int, int, int)> rec = [&](int i, int t, int v, int te) {
        if (i == 10) {
            if (t != 6 || v != 2 || te != 2) return;
            int mf = 0;
            for (int j = 0; j < 10; ++j)
                if (bucket[j] == 0 && j < 6) ++mf;  // patients 0..5 are MF
            best_dev = std::min(best_dev, std::abs(mf - 3.6));
            return;
        }
        bucket[i] = 0; rec(i + 1, t + 1, v, te);
        bucket[i] = 1; rec(i + 1, t, v + 1, te);
        bucket[i] = 2; rec(i + 1, t, v, te + 1);
    };
    rec(0, 0, 0, 0);
    CHECK(std::abs(train_mf - 3.6) <= best_dev + 1.0);  // within +-1 slide of optimum
}

TEST_CASE("make_split: single patient degenerates; three-way split then errors") {
    const fs::path dir = temp_dir("split_one");
    Manifest m = toy_manifest(dir, 3, 1);
    for (auto& s : m.slides) s.patient_id = "p000";  // one patient owns everything

    CHECK_THROWS_AS(make_split(m, {0.6, 0.2, 0.2}, 1), std::invalid_argument);

    const SplitSpec spec = make_split(m, {1.0, 0.0, 0.0}, 1);
    std::set<int> buckets;
    for (const auto& [id, b] : spec.assignment) buckets.insert(b);
    CHECK(buckets.size() == 1);  // grouping forces one split
}

TEST_CASE("make_split is deterministic per seed") {
    const fs::path dir = temp_dir("split_det");
    const Manifest m = toy_manifest(dir, 12, 5);
    const SplitSpec a = make_split(m, {0.6, 0.2, 0.2}, 42);
    const SplitSpec b = make_split(m, {0.6, 0.2, 0.2}, 42);
    CHECK(a.assignment == b.assignment);
}

TEST_CASE("make_split keeps every patient's slides together") {
    const fs::path dir = temp_dir("split_group");
    Manifest m = toy_manifest(dir, 9, 4);
    // give some patients several slides
    for (int i = 0; i < 6; ++i) m.slides[i].patient_id = "p00" + std::to_string(i / 2);
    const SplitSpec spec = make_split(m, {0.6, 0.2, 0.2}, 3);
    std::map<std::string, std::set<int>> per_patient;
    for (const auto& s : m.slides)
        per_patient[s.patient_id].insert(spec.assignment.at(s.slide_id));
    for (const auto& [pid, buckets] : per_patient) CHECK(buckets.size() == 1);
}

TEST_CASE("make_folds: 93 singleton patients into 5 folds of 18-19") {
    const fs::path dir = temp_dir("folds_93");
    const Manifest m = toy_manifest(dir, 93, 34);
    const SplitSpec spec = make_folds(m, 5, 11);
    std::vector<int> fold_patients(5, 0);
    for (const auto& s : m.slides) ++fold_patients[spec.assignment.at(s.slide_id)];
    for (int f = 0; f < 5; ++f) {
        CHECK(fold_patients[f] >= 18);
        CHECK(fold_patients[f] <= 19);
    }
}

TEST_CASE("make_folds: k=2 with 2 patients puts one patient per fold") {
    const fs::path dir = temp_dir("folds_2");
    const Manifest m = toy_manifest(dir, 2, 1);
    const SplitSpec spec = make_folds(m, 2, 0);
    CHECK(spec.assignment.at("s000") != spec.assignment.at("s001"));
    CHECK_THROWS_AS(make_folds(m, 3, 0), std::invalid_argument);
}

TEST_CASE("make_folds: no patient spans two folds (brute force over pairs)") {
    const fs::path dir = temp_dir("folds_span");
    Manifest m = toy_manifest(dir, 20, 8);
    Rng rng(5);
    for (auto& s : m.slides)
        s.patient_id = "p" + std::to_string(rng.next_below(7));  // 7 patients, multi-slide
    const SplitSpec spec = make_folds(m, 3, 2);
    for (const auto& a : m.slides)
        for (const auto& b : m.slides)
            if (a.patient_id == b.patient_id)
                CHECK(spec.assignment.at(a.slide_id) == spec.assignment.at(b.slide_id));
}

TEST_CASE("split spec file round-trip") {
    const fs::path dir = temp_dir("split_rt");
    const Manifest m = toy_manifest(dir, 6, 2);
    const SplitSpec spec = make_split(m, {0.6, 0.2, 0.2}, 9);
    const fs::path p = dir / "split.txt";
    save_split(p.string(), spec);
    const SplitSpec loaded = load_split(p.string());
    CHECK(loaded.assignment == spec.assignment);
    CHECK(loaded.seed == spec.seed);

    const fs::path p2 = dir / "split2.txt";
    save_split(p2.string(), loaded);
    std::ifstream a(p), b(p2);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
}
