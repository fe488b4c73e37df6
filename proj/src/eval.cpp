#include "roifuse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace roifuse::eval {

MatchResult match_detections(std::span<const Detection> dets, std::span<const Box3D> gts, double threshold,
                             IouMode mode) {
  MatchResult out{std::vector<int>(dets.size(), -1), std::vector<bool>(gts.size(), false)};
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  for (std::size_t d : order) {
    int best = -1;
    double best_iou = threshold;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (out.gt_matched[g]) continue;
      const double v = geometry::iou(dets[d].box, gts[g], mode);
      if (v > best_iou || (best < 0 && v >= best_iou)) {
        best = static_cast<int>(g);
        best_iou = v;
      }
    }
    if (best >= 0) {
      out.det_to_gt[d] = best;
      out.gt_matched[best] = true;
    }
  }
  return out;
}

namespace {

void rank(std::vector<RankedDetection>& dets) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const RankedDetection& a, const RankedDetection& b) { return a.score > b.score; });
}

}  // namespace

double average_precision(std::vector<RankedDetection> dets, std::size_t num_gt, RecallGrid grid) {
  if (num_gt == 0) throw std::invalid_argument("average_precision needs at least one gt");
  rank(dets);
  // Position k of the grid is recall k / steps; k runs from `first` to `steps`.
  const std::size_t steps = grid == RecallGrid::kR11 ? 10 : 40;
  const std::size_t first = grid == RecallGrid::kR11 ? 0 : 1;
  // best[k]: max precision over ranks whose recall reaches position k.
  std::vector<double> best(steps + 1, 0.0);
  std::size_t tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].true_positive) ++tp;
    const double precision = static_cast<double>(tp) / static_cast<double>(i + 1);
    for (std::size_t k = first; k <= steps; ++k) {
      if (tp * steps >= k * num_gt) best[k] = std::max(best[k], precision);
    }
  }
  double sum = 0.0;
  for (std::size_t k = first; k <= steps; ++k) sum += best[k];
  return sum / static_cast<double>(steps + 1 - first);
}

std::vector<PrPoint> pr_curve(std::vector<RankedDetection> dets, std::size_t num_gt) {
  rank(dets);
  std::vector<PrPoint> out;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].true_positive) ++tp;
    out.push_back({num_gt == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(num_gt),
                   static_cast<double>(tp) / static_cast<double>(i + 1)});
  }
  return out;
}

void validate(const EvalConfig& c) {
  if (c.thresholds.empty()) throw std::invalid_argument("eval.thresholds must not be empty");
  for (double t : c.thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("eval.thresholds must lie in (0, 1)");
  }
  if (c.levels.empty()) throw std::invalid_argument("eval levels must not be empty");
  for (const auto& l : c.levels) {
    if (l.min_points > l.max_points) throw std::invalid_argument("eval level " + l.name + " has an empty range");
  }
  if (c.buckets.empty()) throw std::invalid_argument("eval buckets must not be empty");
  for (std::size_t i = 0; i < c.buckets.size(); ++i) {
    const auto& b = c.buckets[i];
    if (!(b.min_range < b.max_range)) throw std::invalid_argument("eval bucket " + b.name + " is empty");
    if (i >= 2 && !(c.buckets[i - 1].max_range <= b.min_range)) {
      throw std::invalid_argument("eval buckets must be ordered");
    }
  }
}

double bev_range(const Box3D& box) { return std::hypot(box.x, box.y); }

std::vector<RankedDetection> slice_detections(std::span<const SceneEval> scenes, const Level& level,
                                              const Bucket& bucket, double threshold, const EvalConfig& config,
                                              std::size_t* num_gt) {
  std::vector<RankedDetection> ranked;
  std::size_t gt_count = 0;
  for (const auto& s : scenes) {
    std::vector<int> classes;
    if (config.class_aware) {
      for (const auto& g : s.gt) classes.push_back(g.class_id);
      for (const auto& d : s.detections) classes.push_back(d.class_id);
      std::sort(classes.begin(), classes.end());
      classes.erase(std::unique(classes.begin(), classes.end()), classes.end());
    } else {
      classes.push_back(-1);
    }
    for (int cls : classes) {
      std::vector<Detection> dets;
      std::vector<Box3D> boxes;
      std::vector<bool> care;
      for (const auto& d : s.detections) {
        if (cls < 0 || d.class_id == cls) dets.push_back(d);
      }
      for (const auto& g : s.gt) {
        if (cls >= 0 && g.class_id != cls) continue;
        boxes.push_back(g.box);
        care.push_back(level.includes(g.num_points) && bucket.includes(bev_range(g.box)));
      }
      gt_count += static_cast<std::size_t>(std::count(care.begin(), care.end(), true));
      const MatchResult m = match_detections(dets, boxes, threshold, config.iou_mode);
      for (std::size_t i = 0; i < dets.size(); ++i) {
        const int g = m.det_to_gt[i];
        if (g >= 0) {
          if (care[g]) ranked.push_back({dets[i].score, true});
        } else if (bucket.includes(bev_range(dets[i].box))) {
          ranked.push_back({dets[i].score, false});
        }
      }
    }
  }
  if (num_gt) *num_gt = gt_count;
  return ranked;
}

std::vector<ReportRow> bucketize_and_report(std::span<const SceneEval> scenes, const EvalConfig& config,
                                            const std::string& source) {
  validate(config);
  std::vector<ReportRow> rows;
  for (const auto& level : config.levels) {
    for (const auto& bucket : config.buckets) {
      for (double t : config.thresholds) {
        ReportRow row{level.name, bucket.name, t, std::nullopt, 0, 0, source};
        auto ranked = slice_detections(scenes, level, bucket, t, config, &row.num_gt);
        row.num_det = ranked.size();
        if (row.num_gt > 0) row.ap = average_precision(std::move(ranked), row.num_gt, config.grid);
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

namespace {

std::string format_ap(const std::optional<double>& ap) {
  if (!ap) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *ap;
  return os.str();
}

std::string grid_name(RecallGrid g) { return g == RecallGrid::kR11 ? "R11" : "R40"; }

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string format_table(std::span<const std::vector<ReportRow>> reports, const EvalConfig& config) {
  if (reports.empty()) return {};
  for (const auto& r : reports) {
    if (r.size() != reports.front().size()) throw std::invalid_argument("format_table: reports differ in shape");
  }
  std::vector<std::string> header{"level", "bucket", "iou", "num_gt"};
  for (const auto& r : reports) header.push_back("AP " + (r.empty() ? std::string() : r.front().source));
  std::vector<std::vector<std::string>> cells{header};
  for (std::size_t i = 0; i < reports.front().size(); ++i) {
    const ReportRow& base = reports.front()[i];
    std::ostringstream thr;
    thr << std::fixed << std::setprecision(2) << base.threshold;
    std::vector<std::string> line{base.level, base.bucket, thr.str(), std::to_string(base.num_gt)};
    for (const auto& r : reports) line.push_back(format_ap(r[i].ap));
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> widths(header.size(), 0);
  for (const auto& line : cells) {
    for (std::size_t c = 0; c < line.size(); ++c) widths[c] = std::max(widths[c], line[c].size());
  }
  std::ostringstream os;
  os << "AP (" << grid_name(config.grid) << ", " << (config.iou_mode == IouMode::k3d ? "3D" : "BEV") << " IoU)\n";
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size(); ++c) {
      os << (c == 0 ? "" : "  ") << (c + 1 == cells[r].size() ? cells[r][c] : pad(cells[r][c], widths[c]));
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (std::size_t w : widths) total += w + 2;
      os << std::string(total - 2, '-') << '\n';
    }
  }
  return os.str();
}

std::string format_records(std::span<const ReportRow> rows, const EvalConfig& config) {
  std::string out;
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["level"] = r.level;
    j["bucket"] = r.bucket;
    j["threshold"] = r.threshold;
    if (r.ap) {
      j["ap"] = *r.ap;
    } else {
      j["ap"] = "n/a";
    }
    j["num_gt"] = r.num_gt;
    j["num_det"] = r.num_det;
    j["source"] = r.source;
    j["recall_grid"] = grid_name(config.grid);
    out += j.dump() + "\n";
  }
  return out;
}

// ---- plots ---------------------------------------------------------------------------

namespace {

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

std::string num(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string pr_curve_svg(std::span<const PlotSeries> series, const std::string& title) {
  constexpr double kW = 480, kH = 360, kLeft = 60, kTop = 40, kPlotW = 380, kPlotH = 260;
  std::ostringstream os;
  os << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << kW << R"(" height=")" << kH << R"(">)" << '\n';
  os << R"(<rect width="100%" height="100%" fill="white"/>)" << '\n';
  os << R"(<text x=")" << kW / 2 << R"(" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">)"
     << escape(title) << "</text>\n";
  os << R"(<rect x=")" << kLeft << R"(" y=")" << kTop << R"(" width=")" << kPlotW << R"(" height=")" << kPlotH
     << R"(" fill="none" stroke="black"/>)" << '\n';
  for (int i = 0; i <= 10; i += 2) {
    const double f = i / 10.0;
    os << R"(<text x=")" << num(kLeft + f * kPlotW) << R"(" y=")" << kTop + kPlotH + 16
       << R"(" text-anchor="middle" font-family="sans-serif" font-size="10">)" << num(f) << "</text>\n";
    os << R"(<text x=")" << kLeft - 6 << R"(" y=")" << num(kTop + (1 - f) * kPlotH + 3)
       << R"(" text-anchor="end" font-family="sans-serif" font-size="10">)" << num(f) << "</text>\n";
  }
  os << R"(<text x=")" << kLeft + kPlotW / 2 << R"(" y=")" << kH - 10
     << R"(" text-anchor="middle" font-family="sans-serif" font-size="12">recall</text>)" << '\n';
  os << R"(<text x="14" y=")" << kTop + kPlotH / 2 << R"(" transform="rotate(-90 14 )" << kTop + kPlotH / 2
     << R"svg()" text-anchor="middle" font-family="sans-serif" font-size="12">precision</text>)svg" << '\n';
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    os << R"(<polyline fill="none" stroke=")" << color << R"(" stroke-width="1.5" points=")";
    for (const auto& p : series[s].curve) {
      os << num(kLeft + p.recall * kPlotW) << ',' << num(kTop + (1.0 - p.precision) * kPlotH) << ' ';
    }
    os << R"("/>)" << '\n';
    os << R"(<text x=")" << kLeft + kPlotW - 4 << R"(" y=")" << kTop + 16 + 14 * s << R"(" fill=")" << color
       << R"(" text-anchor="end" font-family="sans-serif" font-size="11">)" << escape(series[s].name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

std::string distance_bars_svg(std::span<const std::vector<ReportRow>> reports, const std::string& level,
                              double threshold, const std::string& title) {
  constexpr double kW = 520, kH = 360, kLeft = 60, kTop = 40, kPlotW = 420, kPlotH = 250;
  std::vector<std::string> buckets;
  std::map<std::pair<std::size_t, std::string>, std::optional<double>> values;
  for (std::size_t s = 0; s < reports.size(); ++s) {
    for (const auto& r : reports[s]) {
      if (r.level != level || r.threshold != threshold) continue;
      if (std::find(buckets.begin(), buckets.end(), r.bucket) == buckets.end()) buckets.push_back(r.bucket);
      values[{s, r.bucket}] = r.ap;
    }
  }
  std::ostringstream os;
  os << R"(<svg xmlns="http://www.w3.org/2000/svg" width=")" << kW << R"(" height=")" << kH << R"(">)" << '\n';
  os << R"(<rect width="100%" height="100%" fill="white"/>)" << '\n';
  os << R"(<text x=")" << kW / 2 << R"(" y="22" text-anchor="middle" font-family="sans-serif" font-size="14">)"
     << escape(title) << "</text>\n";
  os << R"(<line x1=")" << kLeft << R"(" y1=")" << kTop + kPlotH << R"(" x2=")" << kLeft + kPlotW << R"(" y2=")"
     << kTop + kPlotH << R"(" stroke="black"/>)" << '\n';
  for (int i = 0; i <= 10; i += 2) {
    const double f = i / 10.0;
    os << R"(<text x=")" << kLeft - 6 << R"(" y=")" << num(kTop + (1 - f) * kPlotH + 3)
       << R"(" text-anchor="end" font-family="sans-serif" font-size="10">)" << num(f) << "</text>\n";
  }
  const double group_w = buckets.empty() ? kPlotW : kPlotW / static_cast<double>(buckets.size());
  const double bar_w = group_w * 0.8 / static_cast<double>(std::max<std::size_t>(1, reports.size()));
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    const double gx = kLeft + b * group_w + group_w * 0.1;
    for (std::size_t s = 0; s < reports.size(); ++s) {
      const auto it = values.find({s, buckets[b]});
      if (it == values.end() || !it->second) continue;
      const double hgt = *it->second * kPlotH;
      os << R"(<rect x=")" << num(gx + s * bar_w) << R"(" y=")" << num(kTop + kPlotH - hgt) << R"(" width=")"
         << num(bar_w) << R"(" height=")" << num(hgt) << R"(" fill=")" << kPalette[s % std::size(kPalette)]
         << R"("/>)" << '\n';
    }
    os << R"(<text x=")" << num(kLeft + (b + 0.5) * group_w) << R"(" y=")" << kTop + kPlotH + 16
       << R"(" text-anchor="middle" font-family="sans-serif" font-size="11">)" << escape(buckets[b]) << "</text>\n";
  }
  for (std::size_t s = 0; s < reports.size(); ++s) {
    const std::string name = reports[s].empty() ? std::string() : reports[s].front().source;
    os << R"(<text x=")" << kLeft + kPlotW << R"(" y=")" << kTop + 12 + 14 * s << R"(" fill=")"
       << kPalette[s % std::size(kPalette)] << R"(" text-anchor="end" font-family="sans-serif" font-size="11">)"
       << escape(name) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace roifuse::eval
