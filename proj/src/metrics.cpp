#include "hmte/metrics.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace hmte {

ConfusionCounts confusion(std::span<const double> probs, std::span<const int> labels, double threshold) {
    if (probs.size() != labels.size()) throw std::invalid_argument("confusion: probs and labels differ in length");
    ConfusionCounts c;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("confusion: labels must be binary");
        const bool positive = probs[i] >= threshold;
        if (labels[i] == 1) {
            positive ? ++c.tp : ++c.fn;
        } else {
            positive ? ++c.fp : ++c.tn;
        }
    }
    return c;
}

namespace {
std::optional<Ratio> ratio(std::int64_t num, std::int64_t den) {
    if (den == 0) return std::nullopt;
    return Ratio{num, den};
}
}  // namespace

ClassificationMetrics classification_metrics(const ConfusionCounts& c) {
    ClassificationMetrics m;
    m.acc = ratio(c.tp + c.tn, c.total());
    m.sens = ratio(c.tp, c.tp + c.fn);
    m.spec = ratio(c.tn, c.tn + c.fp);
    m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    if (m.sens) m.fnr = m.sens->complement();
    if (m.spec) m.fpr = m.spec->complement();
    return m;
}

std::optional<double> auc(std::span<const double> probs, std::span<const int> labels) {
    if (probs.size() != labels.size()) throw std::invalid_argument("auc: probs and labels differ in length");
    const std::size_t n = probs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] < probs[b]; });

    // Midranks for ties; U = sum of positive ranks - n_pos (n_pos + 1) / 2.
    double positive_rank_sum = 0.0;
    std::int64_t n_pos = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && probs[order[j]] == probs[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                positive_rank_sum += midrank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::int64_t n_neg = static_cast<std::int64_t>(n) - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::nullopt;
    const double u = positive_rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

SegmentationScores segmentation_metrics(std::span<const Real> pred, std::span<const Real> target) {
    if (pred.size() != target.size()) throw std::invalid_argument("segmentation_metrics: mask sizes differ");
    SegmentationScores s;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool a = pred[i] != Real(0);
        const bool b = target[i] != Real(0);
        s.pred_area += a;
        s.target_area += b;
        s.intersection += a && b;
    }
    const std::int64_t sum = s.pred_area + s.target_area;
    if (sum == 0) return s;
    s.dsc = 2.0 * static_cast<double>(s.intersection) / static_cast<double>(sum);
    s.ji = static_cast<double>(s.intersection) / static_cast<double>(sum - s.intersection);
    return s;
}

namespace {

/// round(scale * num / den) in integer arithmetic, halves rounded up.
std::int64_t scaled(const Ratio& r, std::int64_t scale) { return (2 * r.num * scale + r.den) / (2 * r.den); }

struct Cell {
    std::optional<std::int64_t> units;
};

std::string render(const Cell& c, std::int64_t scale, int decimals, double factor) {
    if (!c.units) return "undef";
    std::ostringstream os;
    os << std::fixed << std::setprecision(decimals) << factor * static_cast<double>(*c.units) / static_cast<double>(scale);
    return os.str();
}

std::vector<std::string> cells(const MetricsReport& r, std::int64_t scale, int decimals, bool percent) {
    const auto& m = r.classification;
    auto cell = [&](const std::optional<Ratio>& x) { return x ? Cell{scaled(*x, scale)} : Cell{}; };
    const Cell sens = cell(m.sens);
    const Cell spec = cell(m.spec);
    const Cell fnr = sens.units ? Cell{scale - *sens.units} : Cell{};
    const Cell fpr = spec.units ? Cell{scale - *spec.units} : Cell{};
    const double pf = percent ? 100.0 : 1.0;
    const int pd = percent ? decimals - 2 : decimals;
    std::ostringstream auc_os, dsc_os, ji_os;
    auc_os << std::fixed << std::setprecision(pd);
    dsc_os << std::fixed << std::setprecision(pd) << pf * r.dsc;
    ji_os << std::fixed << std::setprecision(pd) << pf * r.ji;
    if (r.auc) {
        auc_os << pf * *r.auc;
    } else {
        auc_os << "undef";
    }
    return {render(cell(m.acc), scale, pd, pf),
            render(sens, scale, pd, pf),
            render(spec, scale, pd, pf),
            render(cell(m.f1), scale, percent ? 2 : decimals, 1.0),
            auc_os.str(),
            render(fnr, scale, pd, pf),
            render(fpr, scale, pd, pf),
            dsc_os.str(),
            ji_os.str()};
}

}  // namespace

std::string format_report_table(const MetricsReport& report, const std::string& header) {
    const std::vector<std::string> values = cells(report, 1000, 3, true);
    const char* names[] = {"Acc", "Sens", "Spec", "F1", "AUC", "FNR", "FPR", "DSC", "JI"};
    std::ostringstream os;
    os << header;
    if (!header.empty() && header.back() != '\n') os << '\n';
    for (const char* n : names) os << std::setw(8) << n;
    os << '\n';
    for (const auto& v : values) os << std::setw(8) << v;
    os << '\n';
    const auto& c = report.counts;
    os << "TP=" << c.tp << " FP=" << c.fp << " TN=" << c.tn << " FN=" << c.fn << " threshold=" << report.threshold
       << '\n';
    return os.str();
}

std::string format_report_csv(const MetricsReport& report, const std::string& header) {
    const std::vector<std::string> values = cells(report, 1000000, 6, false);
    std::ostringstream os;
    std::istringstream lines(header);
    for (std::string line; std::getline(lines, line);) os << "# " << line << '\n';
    os << kReportColumns << '\n';
    for (std::size_t i = 0; i < values.size(); ++i) os << (i ? "," : "") << values[i];
    os << '\n';
    return os.str();
}

}  // namespace hmte
