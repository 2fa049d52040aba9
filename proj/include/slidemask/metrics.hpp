#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slidemask/detection.hpp"

namespace slidemask {

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  std::int64_t tn = 0;

  std::int64_t total() const { return tp + fp + fn + tn; }
  /// Counts with non-landslide taken as the positive class.
  ConfusionCounts swapped() const { return {tn, fn, fp, tp}; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Exact non-negative ratio of integers; den > 0.
struct Ratio {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  /// Value in hundredths, rounded half up without floating error.
  std::int64_t hundredths() const { return (200 * num + den) / (2 * den); }
};

/// A measure that may be undefined (zero denominator). Never coerced to 0.
using Measure = std::optional<double>;

using TruthMap = std::map<std::string, Verdict>;

ConfusionCounts confusion(const std::vector<ImageVerdict>& verdicts, const TruthMap& truth);

Measure precision(const ConfusionCounts& c);
Measure recall(const ConfusionCounts& c);
Measure f1(double p, double r);
Measure f1(const Measure& p, const Measure& r);
Measure accuracy(const ConfusionCounts& c);

std::optional<Ratio> precision_ratio(const ConfusionCounts& c);
std::optional<Ratio> recall_ratio(const ConfusionCounts& c);
/// 2TP / (2TP + FP + FN), the harmonic mean of the exact precision and recall.
std::optional<Ratio> f1_ratio(const ConfusionCounts& c);
std::optional<Ratio> accuracy_ratio(const ConfusionCounts& c);

/// Half-up rounding to two decimals for doubles; tolerant of binary representation error.
double round2(double value);
/// "0.93", or an em dash (U+2014) for an undefined measure.
std::string format_measure(const std::optional<Ratio>& r);
std::string format_measure(const Measure& m);

struct ClassRow {
  std::string type;  // "Landslide" or "Non-Landslide"
  std::optional<Ratio> precision;
  std::optional<Ratio> recall;
  std::optional<Ratio> f1;
};

struct ClassReport {
  std::string model_name;
  std::string dataset_name;
  ConfusionCounts counts;
  ClassRow landslide;
  ClassRow non_landslide;
  std::optional<Ratio> accuracy;
};

ClassReport class_report(const ConfusionCounts& counts, const std::string& model_name = "",
                         const std::string& dataset_name = "");
ClassReport class_report(const std::vector<ImageVerdict>& verdicts, const TruthMap& truth,
                         const std::string& model_name = "", const std::string& dataset_name = "");

enum class Outcome { tp, tn, fp, fn };
std::string_view outcome_name(Outcome o);
Outcome outcome_of(Verdict predicted, Verdict actual);

struct FrameAccuracyRecord {
  int frame_index = 0;  // 1-based
  std::string image_id;
  double detection_accuracy_percent = 0.0;  // top detection confidence x 100
  Outcome outcome = Outcome::tn;
};

/// k seeded-random frames; verdicts are ordered by image id before sampling.
std::vector<FrameAccuracyRecord> frame_table(const std::vector<ImageVerdict>& verdicts, const TruthMap& truth,
                                             std::size_t k, std::uint64_t seed);

// Report rendering. Text layouts mirror the class and frame tables; raw
// counts are always printed alongside the derived measures.
std::string class_report_text(const std::vector<ClassReport>& reports);
std::string class_report_csv(const std::vector<ClassReport>& reports);
std::string frame_table_text(const std::vector<FrameAccuracyRecord>& frames, const std::string& title);
std::string frame_table_csv(const std::vector<FrameAccuracyRecord>& frames);

}  // namespace slidemask
