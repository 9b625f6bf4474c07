#include "hmte/data.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <unistd.h>

using namespace hmte;

namespace {

Sample tiny(const std::string& case_id, int label = kBenign) {
    Sample s;
    s.image = Image::Zero(1, 1);
    s.mask = Image::Zero(1, 1);
    s.label = label;
    s.case_id = case_id;
    return s;
}

Sample random_sample(Index h, Index w, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0, 1);
    Sample s;
    s.image = Image(h, w);
    s.mask = Image(h, w);
    for (Index r = 0; r < h; ++r)
        for (Index c = 0; c < w; ++c) {
            s.image(r, c) = u(rng);
            s.mask(r, c) = u(rng) < 0.3 ? 1 : 0;
        }
    s.case_id = "c";
    return s;
}

std::filesystem::path temp_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("hmte_test_" + std::to_string(::getpid()) + "_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace

TEST(ZeroPad, EvenAndOddDeltasAndContainment) {
    std::mt19937_64 rng(110);
    const Sample a = random_sample(100, 80, rng);
    const PaddedPair p = zero_pad_square(a.image, a.mask);
    EXPECT_EQ(p.image.rows(), 100);
    EXPECT_EQ(p.image.cols(), 100);
    EXPECT_EQ(p.pad_left, 10);
    EXPECT_EQ(p.pad_top, 0);
    EXPECT_TRUE((p.image.block(0, 10, 100, 80) == a.image).all());
    EXPECT_TRUE((p.mask.block(0, 10, 100, 80) == a.mask).all());
    EXPECT_TRUE((p.image.leftCols(10) == 0).all());
    EXPECT_TRUE((p.image.rightCols(10) == 0).all());

    const Sample b = random_sample(3, 5, rng);
    const PaddedPair q = zero_pad_square(b.image, b.mask);
    EXPECT_EQ(q.pad_top, 1);
    EXPECT_TRUE((q.image.block(1, 0, 3, 5) == b.image).all());

    const Sample c = random_sample(4, 7, rng);
    const PaddedPair r = zero_pad_square(c.image, c.mask);
    EXPECT_EQ(r.pad_top, 1);  // delta 3: extra row on the bottom
    EXPECT_TRUE((r.image.bottomRows(2) == 0).all());

    const Sample sq = random_sample(6, 6, rng);
    EXPECT_TRUE((zero_pad_square(sq.image, sq.mask).image == sq.image).all());
}

TEST(ZeroPad, PrepareSampleResizesAndKeepsMaskBinary) {
    std::mt19937_64 rng(111);
    Sample s = random_sample(30, 50, rng);
    const Sample out = prepare_sample(s, 32);
    EXPECT_EQ(out.image.rows(), 32);
    EXPECT_EQ(out.image.cols(), 32);
    EXPECT_TRUE(((out.mask == 0) || (out.mask == 1)).all());
    EXPECT_TRUE((out.image >= 0).all() && (out.image <= 1).all());
}

TEST(Split, HandExampleKeepsCasesWhole) {
    std::vector<Sample> samples;
    const std::pair<const char*, int> cases[] = {{"A", 3}, {"B", 2}, {"C", 1}, {"D", 4}};
    for (const auto& [id, n] : cases)
        for (int i = 0; i < n; ++i) samples.push_back(tiny(id));
    const SplitAssignment a = case_level_split(samples, {0.5, 0.25, 0.25}, 3);
    std::set<Split> used;
    for (const auto& [id, n] : cases) used.insert(a.of(id));
    EXPECT_EQ(used.size(), 3u);
    const SplitAssignment b = case_level_split(samples, {0.5, 0.25, 0.25}, 3);
    EXPECT_EQ(a.by_case, b.by_case);
    EXPECT_THROW(case_level_split(std::vector<Sample>{tiny("x"), tiny("y")}, {}, 0), std::invalid_argument);
}

TEST(Split, ThousandCaseFuzzHasNoLeaksAndMeetsQuotas) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        std::mt19937_64 rng(seed);
        std::vector<Sample> samples;
        for (int c = 0; c < 1000; ++c) {
            const Index n = oracle::pick(rng, 1, 4);
            for (Index i = 0; i < n; ++i) samples.push_back(tiny("case" + std::to_string(c)));
        }
        std::shuffle(samples.begin(), samples.end(), rng);
        const SplitRatios ratios;
        const SplitAssignment a = case_level_split(samples, ratios, seed);
        std::vector<SplitRecord> records;
        for (const auto& s : samples) records.push_back({s.case_id, a.of(s.case_id)});
        EXPECT_TRUE(find_split_leaks(records).empty());
        const double total = static_cast<double>(samples.size());
        std::size_t covered = 0;
        const double want[3] = {ratios.train, ratios.val, ratios.test};
        for (int k = 0; k < 3; ++k) {
            const auto idx = a.indices(samples, static_cast<Split>(k));
            covered += idx.size();
            EXPECT_NEAR(static_cast<double>(idx.size()) / total, want[k], 0.1 * want[k]);
        }
        EXPECT_EQ(covered, samples.size());
    }
}

TEST(Split, LeakDetectorFindsPlantedLeak) {
    const std::vector<SplitRecord> records{
        {"a", Split::Train}, {"b", Split::Val}, {"a", Split::Test}, {"c", Split::Test}, {"b", Split::Val}};
    EXPECT_EQ(find_split_leaks(records), std::vector<std::string>{"a"});
}

TEST(Augment, DisabledIsIdentityAndFlipIsInvolution) {
    std::mt19937_64 rng(112);
    const Sample s = random_sample(16, 16, rng);
    AugmentConfig off{false, 0.0, 0.0};
    const Sample same = augment(s, off, rng);
    EXPECT_TRUE((same.image == s.image).all());
    EXPECT_TRUE((same.mask == s.mask).all());
    const Sample ff = horizontal_flip(horizontal_flip(s));
    EXPECT_TRUE((ff.image == s.image).all());
    const Sample f = horizontal_flip(s);
    EXPECT_EQ(f.mask.sum(), s.mask.sum());
    EXPECT_EQ(f.image(3, 0), s.image(3, 15));
}

TEST(Augment, OutputStaysInRangeAndBinary) {
    std::mt19937_64 rng(113);
    const AugmentConfig cfg;
    bool changed = false;
    for (int trial = 0; trial < 50; ++trial) {
        const Sample s = random_sample(24, 24, rng);
        const Sample a = augment(s, cfg, rng);
        EXPECT_TRUE((a.image >= 0).all() && (a.image <= 1).all());
        EXPECT_TRUE(((a.mask == 0) || (a.mask == 1)).all());
        changed = changed || !(a.image == s.image).all();
    }
    EXPECT_TRUE(changed);
}

TEST(Manifest, RoundTripAndHeaderCheck) {
    const auto dir = temp_dir("manifest");
    const std::vector<ManifestRow> rows{{"img/a.pgm", "mask/a.pgm", kBenign, "c1"},
                                        {"img/b.pgm", "mask/b.pgm", kMalignant, "c2"}};
    write_manifest(dir / "m.csv", rows);
    const auto back = read_manifest(dir / "m.csv");
    ASSERT_EQ(back.size(), 2u);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(back[i].image_path, rows[i].image_path);
        EXPECT_EQ(back[i].mask_path, rows[i].mask_path);
        EXPECT_EQ(back[i].label, rows[i].label);
        EXPECT_EQ(back[i].case_id, rows[i].case_id);
    }
    {
        std::ofstream bad(dir / "bad.csv");
        bad << "path,label\nx,b\n";
    }
    EXPECT_THROW(read_manifest(dir / "bad.csv"), std::runtime_error);
}

TEST(Pgm, RoundTripQuantizes) {
    const auto dir = temp_dir("pgm");
    Image img(3, 4);
    img << 0, 1, 0.5, 0.25, 1, 1, 0, 0, 0.2, 0.4, 0.6, 0.8;
    write_pgm(dir / "a.pgm", img);
    const Image back = read_pgm(dir / "a.pgm");
    ASSERT_EQ(back.rows(), 3);
    ASSERT_EQ(back.cols(), 4);
    EXPECT_LE((back - img).abs().maxCoeff(), 0.5 / 255 + 1e-12);
}

TEST(Synth, GeneratorContract) {
    const auto data = synth_generate(400, 64, 7);
    ASSERT_EQ(data.size(), 400u);
    int malignant = 0;
    std::map<std::string, int> per_case;
    for (const auto& s : data) {
        EXPECT_NO_THROW(s.validate());
        EXPECT_EQ(s.image.rows(), 64);
        EXPECT_TRUE((s.image >= 0).all() && (s.image <= 1).all());
        EXPECT_GT(s.mask.sum(), 0);
        malignant += s.label;
        ++per_case[s.case_id];
    }
    EXPECT_EQ(malignant, 200);
    for (const auto& [id, n] : per_case) {
        EXPECT_GE(n, 2) << id;
        EXPECT_LE(n, 4) << id;
    }
    const auto again = synth_generate(400, 64, 7);
    for (std::size_t i = 0; i < data.size(); ++i) {
        ASSERT_TRUE((again[i].image == data[i].image).all());
        ASSERT_TRUE((again[i].mask == data[i].mask).all());
        ASSERT_EQ(again[i].case_id, data[i].case_id);
    }
    EXPECT_THROW(synth_generate(7, 64, 1), std::invalid_argument);
}

TEST(Synth, IntensityBaselineIsInformativeButNotSaturated) {
    const auto data = synth_generate(400, 64, 7);
    const double acc = IntensityBaseline::fit(data).accuracy(data);
    EXPECT_GE(acc, 0.60);
    EXPECT_LE(acc, 0.95);
}
