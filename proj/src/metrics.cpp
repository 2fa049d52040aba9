#include "slidemask/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "slidemask/error.hpp"
#include "slidemask/rng.hpp"

namespace slidemask {

std::string_view verdict_name(Verdict v) {
  return v == Verdict::landslide ? "landslide" : "non-landslide";
}

Verdict parse_verdict(std::string_view text) {
  const std::string t = normalize_class_name(text);
  if (t == "landslide" || t == "1" || t == "positive") return Verdict::landslide;
  if (t == "non-landslide" || t == "non landslide" || t == "nonlandslide" || t == "0" || t == "negative")
    return Verdict::non_landslide;
  fail(ErrorKind::schema, "unrecognised verdict '" + std::string(text) + "'");
}

ConfusionCounts confusion(const std::vector<ImageVerdict>& verdicts, const TruthMap& truth) {
  ConfusionCounts c;
  for (const auto& v : verdicts) {
    const auto it = truth.find(v.image_id);
    require(it != truth.end(), "no ground truth for image '" + v.image_id + "'");
    const bool predicted = v.verdict == Verdict::landslide;
    const bool actual = it->second == Verdict::landslide;
    if (predicted && actual) ++c.tp;
    else if (predicted) ++c.fp;
    else if (actual) ++c.fn;
    else ++c.tn;
  }
  return c;
}

namespace {

std::optional<Ratio> ratio(std::int64_t num, std::int64_t den) {
  if (den <= 0) return std::nullopt;
  return Ratio{num, den};
}

Measure as_measure(const std::optional<Ratio>& r) {
  if (!r) return std::nullopt;
  return r->value();
}

}  // namespace

std::optional<Ratio> precision_ratio(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fp); }
std::optional<Ratio> recall_ratio(const ConfusionCounts& c) { return ratio(c.tp, c.tp + c.fn); }
std::optional<Ratio> accuracy_ratio(const ConfusionCounts& c) { return ratio(c.tp + c.tn, c.total()); }

std::optional<Ratio> f1_ratio(const ConfusionCounts& c) {
  // p and r both need defined denominators, and p + r > 0 requires tp > 0.
  if (c.tp + c.fp == 0 || c.tp + c.fn == 0 || c.tp == 0) return std::nullopt;
  return Ratio{2 * c.tp, 2 * c.tp + c.fp + c.fn};
}

Measure precision(const ConfusionCounts& c) { return as_measure(precision_ratio(c)); }
Measure recall(const ConfusionCounts& c) { return as_measure(recall_ratio(c)); }
Measure accuracy(const ConfusionCounts& c) { return as_measure(accuracy_ratio(c)); }

Measure f1(double p, double r) {
  if (!(p + r > 0.0)) return std::nullopt;
  return 2.0 * (p * r) / (p + r);
}

Measure f1(const Measure& p, const Measure& r) {
  if (!p || !r) return std::nullopt;
  return f1(*p, *r);
}

double round2(double value) { return std::floor(value * 100.0 + 0.5 + 1e-9) / 100.0; }

std::string format_measure(const std::optional<Ratio>& r) {
  if (!r) return "—";
  const std::int64_t h = r->hundredths();
  char buf[32];
  std::snprintf(buf, sizeof buf, "%lld.%02lld", static_cast<long long>(h / 100), static_cast<long long>(h % 100));
  return buf;
}

std::string format_measure(const Measure& m) {
  if (!m) return "—";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", round2(*m));
  return buf;
}

ClassReport class_report(const ConfusionCounts& counts, const std::string& model_name,
                         const std::string& dataset_name) {
  ClassReport r;
  r.model_name = model_name;
  r.dataset_name = dataset_name;
  r.counts = counts;
  r.landslide = {"Landslide", precision_ratio(counts), recall_ratio(counts), f1_ratio(counts)};
  const ConfusionCounts neg = counts.swapped();
  r.non_landslide = {"Non-Landslide", precision_ratio(neg), recall_ratio(neg), f1_ratio(neg)};
  r.accuracy = accuracy_ratio(counts);
  return r;
}

ClassReport class_report(const std::vector<ImageVerdict>& verdicts, const TruthMap& truth,
                         const std::string& model_name, const std::string& dataset_name) {
  return class_report(confusion(verdicts, truth), model_name, dataset_name);
}

std::string_view outcome_name(Outcome o) {
  switch (o) {
    case Outcome::tp: return "TP";
    case Outcome::tn: return "TN";
    case Outcome::fp: return "FP";
    case Outcome::fn: return "FN";
  }
  return "?";
}

Outcome outcome_of(Verdict predicted, Verdict actual) {
  const bool p = predicted == Verdict::landslide, a = actual == Verdict::landslide;
  if (p && a) return Outcome::tp;
  if (p) return Outcome::fp;
  if (a) return Outcome::fn;
  return Outcome::tn;
}

std::vector<FrameAccuracyRecord> frame_table(const std::vector<ImageVerdict>& verdicts, const TruthMap& truth,
                                             std::size_t k, std::uint64_t seed) {
  require(k <= verdicts.size(), "frame table asks for " + std::to_string(k) + " frames but only " +
                                    std::to_string(verdicts.size()) + " verdicts exist");
  std::vector<const ImageVerdict*> order;
  for (const auto& v : verdicts) order.push_back(&v);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->image_id < b->image_id; });

  Rng rng(seed, 0x46524d);
  std::vector<FrameAccuracyRecord> rows;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
    std::swap(order[i], order[j]);
    const ImageVerdict& v = *order[i];
    const auto it = truth.find(v.image_id);
    require(it != truth.end(), "no ground truth for image '" + v.image_id + "'");
    double top = 0.0;
    for (const auto& d : v.detections) top = std::max(top, d.score);
    rows.push_back({static_cast<int>(i + 1), v.image_id, 100.0 * top, outcome_of(v.verdict, it->second)});
  }
  return rows;
}

namespace {

std::string pad(const std::string& s, std::size_t width) {
  // Column widths count code points so the em dash aligns like ASCII.
  std::size_t cps = 0;
  for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
  return cps >= width ? s : s + std::string(width - cps, ' ');
}

}  // namespace

std::string class_report_text(const std::vector<ClassReport>& reports) {
  std::ostringstream out;
  const std::string title = reports.empty() || reports.front().dataset_name.empty()
                                ? "PRECISION, RECALL & F1 SCORE"
                                : "PRECISION, RECALL & F1 SCORE FOR " + reports.front().dataset_name;
  out << title << "\n\n";
  out << pad("Model", 14) << pad("Type", 16) << pad("P", 7) << pad("R", 7) << pad("F1 Score", 10) << "\n";
  for (const auto& r : reports) {
    const std::string model = r.model_name.empty() ? "-" : r.model_name;
    for (const ClassRow* row : {&r.landslide, &r.non_landslide}) {
      out << pad(row == &r.landslide ? model : "", 14) << pad(row->type, 16) << pad(format_measure(row->precision), 7)
          << pad(format_measure(row->recall), 7) << pad(format_measure(row->f1), 10) << "\n";
    }
  }
  out << "\n";
  out << pad("Model", 14) << pad("TP", 6) << pad("FP", 6) << pad("FN", 6) << pad("TN", 6) << pad("Total", 7)
      << "Accuracy\n";
  for (const auto& r : reports) {
    const auto& c = r.counts;
    out << pad(r.model_name.empty() ? "-" : r.model_name, 14) << pad(std::to_string(c.tp), 6)
        << pad(std::to_string(c.fp), 6) << pad(std::to_string(c.fn), 6) << pad(std::to_string(c.tn), 6)
        << pad(std::to_string(c.total()), 7) << format_measure(r.accuracy) << "\n";
  }
  return out.str();
}

std::string class_report_csv(const std::vector<ClassReport>& reports) {
  std::ostringstream out;
  out << "model,dataset,type,precision,recall,f1,tp,fp,fn,tn,accuracy\n";
  auto full = [](const std::optional<Ratio>& r) -> std::string {
    if (!r) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6f", r->value());
    return buf;
  };
  for (const auto& r : reports)
    for (const ClassRow* row : {&r.landslide, &r.non_landslide})
      out << r.model_name << "," << r.dataset_name << "," << row->type << "," << full(row->precision) << ","
          << full(row->recall) << "," << full(row->f1) << "," << r.counts.tp << "," << r.counts.fp << ","
          << r.counts.fn << "," << r.counts.tn << "," << full(r.accuracy) << "\n";
  return out.str();
}

std::string frame_table_text(const std::vector<FrameAccuracyRecord>& frames, const std::string& title) {
  std::ostringstream out;
  out << title << "\n\n";
  const std::size_t half = (frames.size() + 1) / 2;
  auto cell = [&](const FrameAccuracyRecord& f) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%-7d%3.0f %-4s", f.frame_index, f.detection_accuracy_percent,
                  std::string(outcome_name(f.outcome)).c_str());
    return std::string(buf);
  };
  out << "Frame  Detection Accuracy (%)    Frame  Detection Accuracy (%)\n";
  for (std::size_t i = 0; i < half; ++i) {
    std::string line = pad(cell(frames[i]), 30);
    if (i + half < frames.size()) line += cell(frames[i + half]);
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << "\n";
  }
  return out.str();
}

std::string frame_table_csv(const std::vector<FrameAccuracyRecord>& frames) {
  std::ostringstream out;
  out << "frame,image_id,detection_accuracy_percent,outcome\n";
  for (const auto& f : frames) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", f.detection_accuracy_percent);
    out << f.frame_index << "," << f.image_id << "," << buf << "," << outcome_name(f.outcome) << "\n";
  }
  return out.str();
}

}  // namespace slidemask
