#include "hmte/metrics.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

using namespace hmte;

namespace {

struct Instance {
    std::vector<double> probs;
    std::vector<int> labels;
};

Instance random_instance(std::mt19937_64& rng) {
    Instance in;
    const Index n = oracle::pick(rng, 1, 40);
    std::uniform_int_distribution<int> level(0, 10);  // coarse levels force ties
    for (Index i = 0; i < n; ++i) {
        in.probs.push_back(level(rng) / 10.0);
        in.labels.push_back(static_cast<int>(oracle::pick(rng, 0, 1)));
    }
    return in;
}

std::vector<std::string> split_cells(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream is(line);
    for (std::string c; std::getline(is, c, ',');) out.push_back(c);
    return out;
}

}  // namespace

TEST(Classification, MatchesBruteForceCounts) {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 100; ++trial) {
        const Instance in = random_instance(rng);
        std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
        for (std::size_t i = 0; i < in.probs.size(); ++i) {
            const bool pos = in.probs[i] >= 0.5;
            if (pos && in.labels[i] == 1) ++tp;
            if (pos && in.labels[i] == 0) ++fp;
            if (!pos && in.labels[i] == 0) ++tn;
            if (!pos && in.labels[i] == 1) ++fn;
        }
        const ConfusionCounts c = confusion(in.probs, in.labels);
        EXPECT_EQ(c.tp, tp);
        EXPECT_EQ(c.fp, fp);
        EXPECT_EQ(c.tn, tn);
        EXPECT_EQ(c.fn, fn);
        const ClassificationMetrics m = classification_metrics(c);
        ASSERT_TRUE(m.acc);
        EXPECT_DOUBLE_EQ(m.acc->value(), static_cast<double>(tp + tn) / static_cast<double>(c.total()));
        EXPECT_EQ(m.sens.has_value(), tp + fn > 0);
        EXPECT_EQ(m.spec.has_value(), tn + fp > 0);
        if (m.sens) {
            EXPECT_DOUBLE_EQ(m.sens->value(), static_cast<double>(tp) / static_cast<double>(tp + fn));
            EXPECT_DOUBLE_EQ(m.fnr->value(), static_cast<double>(fn) / static_cast<double>(tp + fn));
        }
        if (m.spec) {
            EXPECT_DOUBLE_EQ(m.spec->value(), static_cast<double>(tn) / static_cast<double>(tn + fp));
            EXPECT_DOUBLE_EQ(m.fpr->value(), static_cast<double>(fp) / static_cast<double>(tn + fp));
        }
        if (m.f1) {
            EXPECT_DOUBLE_EQ(m.f1->value(), 2.0 * tp / static_cast<double>(2 * tp + fp + fn));
        }
    }
}

TEST(Auc, MatchesPairCountingWithTies) {
    std::mt19937_64 rng(32);
    int defined = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Instance in = random_instance(rng);
        double score = 0;
        std::int64_t pairs = 0;
        for (std::size_t i = 0; i < in.probs.size(); ++i)
            for (std::size_t j = 0; j < in.probs.size(); ++j) {
                if (in.labels[i] != 1 || in.labels[j] != 0) continue;
                ++pairs;
                score += in.probs[i] > in.probs[j] ? 1.0 : (in.probs[i] == in.probs[j] ? 0.5 : 0.0);
            }
        const auto a = auc(in.probs, in.labels);
        EXPECT_EQ(a.has_value(), pairs > 0);
        if (a) {
            ++defined;
            EXPECT_NEAR(*a, score / static_cast<double>(pairs), 1e-12);
        }
    }
    EXPECT_GE(defined, 50);
}

TEST(Segmentation, MatchesBruteForceAndDiceJaccardIdentity) {
    std::mt19937_64 rng(33);
    for (int trial = 0; trial < 100; ++trial) {
        const Index n = oracle::pick(rng, 1, 64);
        std::vector<Real> p(static_cast<std::size_t>(n)), t(static_cast<std::size_t>(n));
        std::int64_t inter = 0, pa = 0, ta = 0;
        for (std::size_t i = 0; i < p.size(); ++i) {
            p[i] = static_cast<Real>(oracle::pick(rng, 0, 1));
            t[i] = static_cast<Real>(oracle::pick(rng, 0, 1));
            pa += p[i] > 0;
            ta += t[i] > 0;
            inter += p[i] > 0 && t[i] > 0;
        }
        const SegmentationScores s = segmentation_metrics(p, t);
        EXPECT_EQ(s.intersection, inter);
        EXPECT_EQ(s.pred_area, pa);
        EXPECT_EQ(s.target_area, ta);
        if (pa + ta > 0) {
            EXPECT_NEAR(s.dsc, 2.0 * inter / static_cast<double>(pa + ta), 1e-15);
            EXPECT_NEAR(s.ji, inter / static_cast<double>(pa + ta - inter), 1e-15);
            EXPECT_NEAR(s.dsc, 2 * s.ji / (1 + s.ji), 1e-12);
        }
    }
}

TEST(Segmentation, EmptyMasksScoreOne) {
    const std::vector<Real> z(9, 0);
    const SegmentationScores s = segmentation_metrics(z, z);
    EXPECT_EQ(s.dsc, 1.0);
    EXPECT_EQ(s.ji, 1.0);
    std::vector<Real> one = z;
    one[4] = 1;
    EXPECT_EQ(segmentation_metrics(one, z).dsc, 0.0);
}

TEST(Report, UndefinedMetricsAreNotZero) {
    ConfusionCounts c;
    c.tn = 5;
    c.fp = 1;
    const ClassificationMetrics m = classification_metrics(c);
    EXPECT_FALSE(m.sens);
    EXPECT_FALSE(m.fnr);
    EXPECT_TRUE(m.spec);
    MetricsReport r;
    r.counts = c;
    r.classification = m;
    const std::string csv = format_report_csv(r, "");
    EXPECT_NE(csv.find("undef"), std::string::npos);
    EXPECT_FALSE(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}));
}

TEST(Report, ComplementPairsAddUpAfterRounding) {
    // sens 19/22 and spec 19/24
    ConfusionCounts c{19, 5, 19, 3};
    MetricsReport r;
    r.counts = c;
    r.classification = classification_metrics(c);
    r.auc = 0.9;
    r.dsc = 0.5;
    r.ji = 1.0 / 3.0;
    const std::string table = format_report_table(r, "test");
    std::istringstream lines(table);
    std::string header, names, values;
    std::getline(lines, header);
    std::getline(lines, names);
    std::getline(lines, values);
    std::istringstream vs(values);
    std::vector<std::string> v;
    for (std::string s; vs >> s;) v.push_back(s);
    ASSERT_EQ(v.size(), 9u);
    EXPECT_EQ(v[1], "86.4");
    EXPECT_EQ(v[5], "13.6");
    EXPECT_EQ(v[2], "79.2");
    EXPECT_EQ(v[6], "20.8");

    const std::string csv = format_report_csv(r, "run");
    std::istringstream cl(csv);
    std::string comment, cols, row;
    std::getline(cl, comment);
    std::getline(cl, cols);
    std::getline(cl, row);
    EXPECT_EQ(cols, kReportColumns);
    const auto cells = split_cells(row);
    ASSERT_EQ(cells.size(), 9u);
    EXPECT_NEAR(std::stod(cells[1]) + std::stod(cells[5]), 1.0, 1e-12);
    EXPECT_NEAR(std::stod(cells[2]) + std::stod(cells[6]), 1.0, 1e-12);
}

TEST(Report, ThresholdIsInclusive) {
    const std::vector<double> p{0.5, 0.4999};
    const std::vector<int> l{1, 1};
    const ConfusionCounts c = confusion(p, l, 0.5);
    EXPECT_EQ(c.tp, 1);
    EXPECT_EQ(c.fn, 1);
}

TEST(Classification, HandCountExample) {
    const ClassificationMetrics m = classification_metrics(ConfusionCounts{9, 2, 8, 1});
    EXPECT_DOUBLE_EQ(m.sens->value(), 0.9);
    EXPECT_DOUBLE_EQ(m.spec->value(), 0.8);
    EXPECT_DOUBLE_EQ(m.acc->value(), 0.85);
    EXPECT_DOUBLE_EQ(m.f1->value(), 18.0 / 21.0);
    const ClassificationMetrics perfect = classification_metrics(ConfusionCounts{3, 0, 4, 0});
    EXPECT_EQ(perfect.fnr->num, 0);
    EXPECT_EQ(perfect.fpr->num, 0);
    EXPECT_EQ(perfect.f1->value(), 1.0);
}

TEST(Auc, HandExampleAndTrapezoidalRoc) {
    EXPECT_DOUBLE_EQ(*auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}), 0.75);
    std::mt19937_64 rng(34);
    int checked = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const Instance in = random_instance(rng);
        const auto a = auc(in.probs, in.labels);
        if (!a) continue;
        ++checked;
        // ROC over every distinct threshold, descending.
        std::vector<double> th = in.probs;
        std::sort(th.begin(), th.end(), std::greater<>());
        th.erase(std::unique(th.begin(), th.end()), th.end());
        double P = 0, N = 0;
        for (int l : in.labels) (l ? P : N) += 1;
        double area = 0, px = 0, py = 0;
        for (double t : th) {
            double tp = 0, fp = 0;
            for (std::size_t i = 0; i < in.probs.size(); ++i)
                if (in.probs[i] >= t) (in.labels[i] ? tp : fp) += 1;
            const double x = fp / N, y = tp / P;
            area += (x - px) * (y + py) / 2;
            px = x;
            py = y;
        }
        area += (1 - px) * (1 + py) / 2;
        EXPECT_NEAR(*a, area, 1e-12);
        // strictly monotone transform
        std::vector<double> warped;
        for (double p : in.probs) warped.push_back(std::exp(3 * p) - 7);
        EXPECT_NEAR(*auc(warped, in.labels), *a, 1e-12);
    }
    EXPECT_GE(checked, 50);
}

TEST(Auc, ShuffledLabelsGiveChance) {
    std::mt19937_64 rng(35);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<double> p(2000);
    std::vector<int> l(2000);
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = u(rng);
        l[i] = static_cast<int>(i % 2);
    }
    std::shuffle(l.begin(), l.end(), rng);
    EXPECT_NEAR(*auc(p, l), 0.5, 0.05);
}

TEST(Segmentation, HandCount) {
    const std::vector<Real> a{1, 1, 0, 0}, b{1, 0, 1, 0};
    const SegmentationScores s = segmentation_metrics(a, b);
    EXPECT_DOUBLE_EQ(s.dsc, 0.5);
    EXPECT_DOUBLE_EQ(s.ji, 1.0 / 3.0);
    EXPECT_EQ(segmentation_metrics(a, a).dsc, 1.0);
}
