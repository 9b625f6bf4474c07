#pragma once

#include "hmte/tensor.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>

namespace hmte {

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t tn = 0;
    std::int64_t fn = 0;

    std::int64_t total() const { return tp + fp + tn + fn; }
};

/// Exact count ratio; converted to floating point only at the boundary.
struct Ratio {
    std::int64_t num = 0;
    std::int64_t den = 1;

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    Ratio complement() const { return {den - num, den}; }
};

/// Predicted positive iff prob >= threshold.
ConfusionCounts confusion(std::span<const double> probs, std::span<const int> labels, double threshold = 0.5);

/// Undefined metrics (zero denominator) are empty, never 0.
struct ClassificationMetrics {
    std::optional<Ratio> acc;
    std::optional<Ratio> sens;
    std::optional<Ratio> spec;
    std::optional<Ratio> f1;
    std::optional<Ratio> fnr;  // complement of sens
    std::optional<Ratio> fpr;  // complement of spec
};

ClassificationMetrics classification_metrics(const ConfusionCounts& counts);

/// Mann-Whitney AUC: fraction of (positive, negative) pairs ranked correctly, ties
/// count one half. Empty when either class is absent.
std::optional<double> auc(std::span<const double> probs, std::span<const int> labels);

struct SegmentationScores {
    double dsc = 1.0;
    double ji = 1.0;
    std::int64_t intersection = 0;
    std::int64_t pred_area = 0;
    std::int64_t target_area = 0;
};

/// Masks are binary; two empty masks score dsc = ji = 1.
SegmentationScores segmentation_metrics(std::span<const Real> pred, std::span<const Real> target);

struct MetricsReport {
    ConfusionCounts counts;
    ClassificationMetrics classification;
    std::optional<double> auc;
    double dsc = 0.0;  // mean over images
    double ji = 0.0;
    double threshold = 0.5;
};

/// Column order of both report formats.
inline constexpr const char* kReportColumns = "Acc,Sens,Spec,F1,AUC,FNR,FPR,DSC,JI";

/// Percentages with one decimal (F1 as a fraction); complements are formatted from
/// the complement of the rounded value so pairs always add up to 100.0.
std::string format_report_table(const MetricsReport& report, const std::string& header);
/// Fractions with six decimals, same complement rule.
std::string format_report_csv(const MetricsReport& report, const std::string& header);

}  // namespace hmte
