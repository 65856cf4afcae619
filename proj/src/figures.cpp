#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "csv_util.hpp"
#include "mp/errors.hpp"
#include "mp/harness.hpp"

namespace mp::harness {
namespace {

namespace fs = std::filesystem;
using csv::open_read;
using csv::open_text;
using csv::parse_double;
using csv::parse_long;
using csv::read_csv_body;
using csv::split;
using csv::trim;

constexpr const char* kBlue = "#1f77b4";
constexpr const char* kOrange = "#ff7f0e";
constexpr const char* kRed = "#d62728";
constexpr const char* kGreen = "#2ca02c";
constexpr const char* kGrey = "#b0b0b0";

std::string px(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.2f", v);
  return b;
}

std::string num(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.6g", v);
  return b;
}

struct Series {
  enum class Kind { Line, Dashed, Dots, Rings };
  Kind kind = Kind::Line;
  std::vector<std::pair<double, double>> pts;
  std::string color = kBlue;
  std::string label;  // empty: no legend entry
  double radius = 3.0;
};

/** One axes box of fixed size 460 x 380, rendered at an (ox, oy) offset. */
struct Panel {
  static constexpr double kW = 460.0, kH = 380.0;
  static constexpr double kLeft = 60.0, kRight = 16.0, kTop = 34.0, kBottom = 48.0;

  std::string title, xlabel, ylabel;
  std::vector<Series> series;
  bool fixed_range = false;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  std::vector<std::string> notes;

  void set_range(double ax0, double ax1, double ay0, double ay1) {
    fixed_range = true;
    x0 = ax0;
    x1 = ax1;
    y0 = ay0;
    y1 = ay1;
  }

  static double nice_step(double range) {
    const double raw = range / 4.5;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    const double n = raw / mag;
    return mag * (n < 1.5 ? 1.0 : n < 3.5 ? 2.0 : n < 7.5 ? 5.0 : 10.0);
  }

  void autorange() {
    if (fixed_range) return;
    double lo_x = 0, hi_x = 1, lo_y = 0, hi_y = 1;
    bool first = true;
    for (const Series& s : series)
      for (auto [x, y] : s.pts) {
        if (first) {
          lo_x = hi_x = x;
          lo_y = hi_y = y;
          first = false;
        }
        lo_x = std::min(lo_x, x);
        hi_x = std::max(hi_x, x);
        lo_y = std::min(lo_y, y);
        hi_y = std::max(hi_y, y);
      }
    const double pad_x = hi_x > lo_x ? 0.05 * (hi_x - lo_x) : 1.0;
    const double pad_y = hi_y > lo_y ? 0.05 * (hi_y - lo_y) : 1.0;
    x0 = lo_x - pad_x;
    x1 = hi_x + pad_x;
    y0 = lo_y - pad_y;
    y1 = hi_y + pad_y;
  }

  void render(std::string& svg, double ox, double oy) {
    autorange();
    const double pl = ox + kLeft, pr = ox + kW - kRight;
    const double pt = oy + kTop, pb = oy + kH - kBottom;
    auto sx = [&](double x) { return pl + (x - x0) / (x1 - x0) * (pr - pl); };
    auto sy = [&](double y) { return pb - (y - y0) / (y1 - y0) * (pb - pt); };

    svg += "<rect x=\"" + px(pl) + "\" y=\"" + px(pt) + "\" width=\"" + px(pr - pl) +
           "\" height=\"" + px(pb - pt) +
           "\" fill=\"none\" stroke=\"#444444\" stroke-width=\"1\"/>\n";

    const double xstep = nice_step(x1 - x0), ystep = nice_step(y1 - y0);
    for (double t = std::ceil(x0 / xstep) * xstep; t <= x1 + 1e-9 * xstep; t += xstep) {
      const double gx = sx(t);
      svg += "<line x1=\"" + px(gx) + "\" y1=\"" + px(pb) + "\" x2=\"" + px(gx) +
             "\" y2=\"" + px(pb + 4) + "\" stroke=\"#444444\"/>\n";
      svg += "<text x=\"" + px(gx) + "\" y=\"" + px(pb + 17) +
             "\" font-size=\"11\" text-anchor=\"middle\">" + num(t) + "</text>\n";
    }
    for (double t = std::ceil(y0 / ystep) * ystep; t <= y1 + 1e-9 * ystep; t += ystep) {
      const double gy = sy(t);
      svg += "<line x1=\"" + px(pl - 4) + "\" y1=\"" + px(gy) + "\" x2=\"" + px(pl) +
             "\" y2=\"" + px(gy) + "\" stroke=\"#444444\"/>\n";
      svg += "<text x=\"" + px(pl - 7) + "\" y=\"" + px(gy + 4) +
             "\" font-size=\"11\" text-anchor=\"end\">" + num(t) + "</text>\n";
    }

    for (const Series& s : series) {
      if (s.kind == Series::Kind::Line || s.kind == Series::Kind::Dashed) {
        std::string pts;
        for (auto [x, y] : s.pts) pts += px(sx(x)) + "," + px(sy(y)) + " ";
        svg += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + s.color +
               "\" stroke-width=\"1.8\"" +
               (s.kind == Series::Kind::Dashed ? " stroke-dasharray=\"6 4\"" : "") +
               "/>\n";
      }
      for (auto [x, y] : s.pts) {
        if (s.kind == Series::Kind::Rings)
          svg += "<circle cx=\"" + px(sx(x)) + "\" cy=\"" + px(sy(y)) + "\" r=\"" +
                 px(s.radius) + "\" fill=\"none\" stroke=\"" + s.color +
                 "\" stroke-width=\"1.2\"/>\n";
        else
          svg += "<circle cx=\"" + px(sx(x)) + "\" cy=\"" + px(sy(y)) + "\" r=\"" +
                 px(s.kind == Series::Kind::Dots ? s.radius : 3.0) + "\" fill=\"" +
                 s.color + "\"/>\n";
      }
    }

    svg += "<text x=\"" + px(ox + kW / 2) + "\" y=\"" + px(oy + 20) +
           "\" font-size=\"14\" text-anchor=\"middle\">" + title + "</text>\n";
    svg += "<text x=\"" + px((pl + pr) / 2) + "\" y=\"" + px(pb + 36) +
           "\" font-size=\"12\" text-anchor=\"middle\">" + xlabel + "</text>\n";
    svg += "<text x=\"" + px(ox + 14) + "\" y=\"" + px((pt + pb) / 2) +
           "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 " +
           px(ox + 14) + " " + px((pt + pb) / 2) + ")\">" + ylabel + "</text>\n";

    double ny = pt + 16;
    for (const std::string& note : notes) {
      svg += "<text x=\"" + px(pl + 8) + "\" y=\"" + px(ny) +
             "\" font-size=\"11\" fill=\"#333333\">" + note + "</text>\n";
      ny += 14;
    }

    double ly = pt + 14;
    for (const Series& s : series) {
      if (s.label.empty()) continue;
      const double lx = pr - 170;
      if (s.kind == Series::Kind::Dots || s.kind == Series::Kind::Rings)
        svg += "<circle cx=\"" + px(lx + 12) + "\" cy=\"" + px(ly - 4) + "\" r=\"3\"" +
               (s.kind == Series::Kind::Rings
                    ? " fill=\"none\" stroke=\"" + s.color + "\""
                    : " fill=\"" + s.color + "\"") +
               "/>\n";
      else
        svg += "<line x1=\"" + px(lx) + "\" y1=\"" + px(ly - 4) + "\" x2=\"" +
               px(lx + 24) + "\" y2=\"" + px(ly - 4) + "\" stroke=\"" + s.color +
               "\" stroke-width=\"1.8\"" +
               (s.kind == Series::Kind::Dashed ? " stroke-dasharray=\"6 4\"" : "") +
               "/>\n";
      svg += "<text x=\"" + px(lx + 30) + "\" y=\"" + px(ly) +
             "\" font-size=\"11\">" + s.label + "</text>\n";
      ly += 16;
    }
  }
};

std::string svg_doc(double w, double h, const std::string& body) {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + px(w) +
         "\" height=\"" + px(h) + "\" viewBox=\"0 0 " + px(w) + " " + px(h) +
         "\" font-family=\"Helvetica, Arial, sans-serif\">\n<rect width=\"" + px(w) +
         "\" height=\"" + px(h) + "\" fill=\"#ffffff\"/>\n" + body + "</svg>\n";
}

struct ConstellationPair {
  std::vector<double> ti, tq, pi_, pq;
};

ConstellationPair load_constellation(const fs::path& p) {
  std::ifstream in = open_read(p);
  ConstellationPair c;
  for (const std::string& row :
       read_csv_body(in, p, "k,target_i,target_q,poison_i,poison_q")) {
    auto f = split(row, ',');
    if (f.size() != 5) throw FormatError(p.string() + ": bad column count");
    c.ti.push_back(parse_double(trim(f[1]), "target_i"));
    c.tq.push_back(parse_double(trim(f[2]), "target_q"));
    c.pi_.push_back(parse_double(trim(f[3]), "poison_i"));
    c.pq.push_back(parse_double(trim(f[4]), "poison_q"));
  }
  return c;
}

struct ScatterRow {
  double c1 = 0, c2 = 0;
  int cluster = 0, truth = -1;
};

std::vector<ScatterRow> load_scatter(const fs::path& p) {
  std::ifstream in = open_read(p);
  std::vector<ScatterRow> rows;
  for (const std::string& row :
       read_csv_body(in, p, "sample_id,comp1,comp2,cluster,is_poisoned_truth")) {
    auto f = split(row, ',');
    if (f.size() != 5) throw FormatError(p.string() + ": bad column count");
    ScatterRow r;
    r.c1 = parse_double(trim(f[1]), "comp1");
    r.c2 = parse_double(trim(f[2]), "comp2");
    r.cluster = static_cast<int>(parse_long(trim(f[3]), "cluster"));
    r.truth = static_cast<int>(parse_long(trim(f[4]), "is_poisoned_truth"));
    rows.push_back(r);
  }
  return rows;
}

Series frame_dots(const std::vector<double>& i, const std::vector<double>& q,
                  int stride, const char* color, double radius) {
  Series s;
  s.kind = Series::Kind::Dots;
  s.color = color;
  s.radius = radius;
  for (std::size_t k = 0; k < i.size(); k += static_cast<std::size_t>(stride))
    s.pts.push_back({i[k], q[k]});
  return s;
}

std::string build_constellation_svg(const fs::path& csv_path) {
  const ConstellationPair c = load_constellation(csv_path);
  double m = 0.0, diff = 0.0;
  for (std::size_t k = 0; k < c.ti.size(); ++k) {
    m = std::max({m, std::abs(c.ti[k]), std::abs(c.tq[k]), std::abs(c.pi_[k]),
                  std::abs(c.pq[k])});
    diff = std::max({diff, std::abs(c.pi_[k] - c.ti[k]), std::abs(c.pq[k] - c.tq[k])});
  }
  m *= 1.1;
  Panel left;
  left.title = "clean target frame";
  left.xlabel = "I";
  left.ylabel = "Q";
  left.set_range(-m, m, -m, m);
  left.series.push_back(frame_dots(c.ti, c.tq, 1, kGrey, 2.0));
  left.series.push_back(frame_dots(c.ti, c.tq, 8, kBlue, 3.5));
  Panel right;
  right.title = "poisoned frame";
  right.xlabel = "I";
  right.ylabel = "Q";
  right.set_range(-m, m, -m, m);
  right.series.push_back(frame_dots(c.pi_, c.pq, 1, kGrey, 2.0));
  right.series.push_back(frame_dots(c.pi_, c.pq, 8, kBlue, 3.5));
  right.notes.push_back("max |poison - target| = " + num(diff));
  std::string body;
  left.render(body, 0, 0);
  right.render(body, Panel::kW + 10, 0);
  return svg_doc(2 * Panel::kW + 10, Panel::kH, body);
}

// Mean of y over rows sharing an x, plus the individual points.
struct SweepSeries {
  Series mean;
  Series points;
};

SweepSeries mean_and_points(const std::map<int, std::vector<double>>& by_x,
                            const char* color, const std::string& label,
                            Series::Kind kind) {
  SweepSeries out;
  out.mean.kind = kind;
  out.mean.color = color;
  out.mean.label = label;
  out.points.kind = Series::Kind::Dots;
  out.points.color = kGrey;
  out.points.radius = 2.2;
  for (const auto& [x, ys] : by_x) {
    double mean = 0.0;
    for (double y : ys) {
      mean += y;
      out.points.pts.push_back({static_cast<double>(x), y});
    }
    out.mean.pts.push_back({static_cast<double>(x), mean / ys.size()});
  }
  return out;
}

std::string build_trigger_sweep_svg(const fs::path& csv_path) {
  const std::vector<MetricsRow> rows = read_metrics_csv(csv_path);
  std::map<int, std::vector<double>> succ, fail;
  for (const MetricsRow& r : rows) {
    succ[static_cast<int>(r.sweep_value)].push_back(r.attack_success);
    fail[static_cast<int>(r.sweep_value)].push_back(r.clean_failure);
  }
  Panel p;
  p.title = "attack success vs trigger size";
  p.xlabel = "trigger size (samples)";
  p.ylabel = "probability";
  SweepSeries s = mean_and_points(succ, kBlue, "attack success (mean over SNR)",
                                  Series::Kind::Line);
  SweepSeries f = mean_and_points(fail, kRed, "clean failure (mean over SNR)",
                                  Series::Kind::Dashed);
  p.series.push_back(s.points);
  p.series.push_back(s.mean);
  p.series.push_back(f.mean);
  double lo = succ.begin()->first, hi = succ.rbegin()->first;
  p.set_range(lo - 2, hi + 2, -0.02, 1.05);
  std::string body;
  p.render(body, 0, 0);
  return svg_doc(Panel::kW, Panel::kH, body);
}

std::string build_snr_svg(const fs::path& csv_path, const fs::path& trojan_path) {
  const std::vector<MetricsRow> rows = read_metrics_csv(csv_path);
  Series succ, fail;
  succ.color = kBlue;
  succ.label = "attack success";
  fail.kind = Series::Kind::Dashed;
  fail.color = kRed;
  fail.label = "clean failure";
  for (const MetricsRow& r : rows) {
    succ.pts.push_back({static_cast<double>(r.snr_db), r.attack_success});
    fail.pts.push_back({static_cast<double>(r.snr_db), r.clean_failure});
  }
  Panel p;
  p.title = "attack success and clean failure vs SNR";
  p.xlabel = "SNR (dB)";
  p.ylabel = "probability";
  p.series.push_back(succ);
  p.series.push_back(fail);
  if (fs::exists(trojan_path)) {
    Series tro;
    tro.kind = Series::Kind::Dots;
    tro.color = kGreen;
    tro.label = "rotation baseline";
    tro.radius = 5.0;
    for (const MetricsRow& r : read_metrics_csv(trojan_path))
      tro.pts.push_back({static_cast<double>(r.snr_db), r.attack_success});
    p.series.push_back(tro);
  }
  double lo = succ.pts.front().first, hi = succ.pts.back().first;
  for (auto [x, y] : succ.pts) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  p.set_range(lo - 1, hi + 1, -0.02, 1.05);
  std::string body;
  p.render(body, 0, 0);
  return svg_doc(Panel::kW, Panel::kH, body);
}

Panel cluster_panel(const std::string& title, const std::vector<ScatterRow>& rows) {
  Panel p;
  p.title = title;
  p.xlabel = "component 1";
  p.ylabel = "component 2";
  Series c0, c1, truth;
  c0.kind = Series::Kind::Dots;
  c0.color = kBlue;
  c0.label = "cluster 0";
  c1.kind = Series::Kind::Dots;
  c1.color = kOrange;
  c1.label = "cluster 1";
  truth.kind = Series::Kind::Rings;
  truth.color = kRed;
  truth.label = "poisoned (truth)";
  truth.radius = 4.5;
  for (const ScatterRow& r : rows) {
    (r.cluster == 0 ? c0 : c1).pts.push_back({r.c1, r.c2});
    if (r.truth == 1) truth.pts.push_back({r.c1, r.c2});
  }
  p.series.push_back(c0);
  p.series.push_back(c1);
  if (!truth.pts.empty()) p.series.push_back(truth);
  return p;
}

std::string build_clusters_svg(const fs::path& source_csv, const fs::path& target_csv) {
  Panel left = cluster_panel("source label activations", load_scatter(source_csv));
  Panel right = cluster_panel("target label activations", load_scatter(target_csv));
  std::string body;
  left.render(body, 0, 0);
  right.render(body, Panel::kW + 10, 0);
  return svg_doc(2 * Panel::kW + 10, Panel::kH, body);
}

std::string build_detection_svg(const fs::path& csv_path) {
  const std::vector<DetectionSweepRow> rows = read_detection_csv(csv_path);
  std::map<int, std::vector<double>> succ, fa;
  for (const DetectionSweepRow& r : rows) {
    succ[r.trigger_size].push_back(r.success_rate);
    fa[r.trigger_size].push_back(r.false_alarm_rate);
  }
  Panel p;
  p.title = "detection success vs trigger size";
  p.xlabel = "trigger size (samples)";
  p.ylabel = "rate";
  SweepSeries s = mean_and_points(succ, kBlue, "detection success (mean over SNR)",
                                  Series::Kind::Line);
  SweepSeries f = mean_and_points(fa, kRed, "false alarm (mean over SNR)",
                                  Series::Kind::Dashed);
  p.series.push_back(s.points);
  p.series.push_back(s.mean);
  p.series.push_back(f.mean);
  double lo = succ.begin()->first, hi = succ.rbegin()->first;
  p.set_range(lo - 2, hi + 2, -0.02, 1.05);
  std::string body;
  p.render(body, 0, 0);
  return svg_doc(Panel::kW, Panel::kH, body);
}

}  // namespace

std::vector<fs::path> emit_figures(const fs::path& run_dir) {
  RunPaths rp(run_dir);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& content) {
    fs::create_directories(rp.figures_dir());
    const fs::path out_path = rp.figures_dir() / name;
    std::ofstream out = open_text(out_path);
    out << content;
    written.push_back(out_path);
  };
  if (fs::exists(rp.constellation_pair()))
    emit("constellation_pair.svg", build_constellation_svg(rp.constellation_pair()));
  if (fs::exists(rp.sweep_trigger()))
    emit("trigger_size_sweep.svg", build_trigger_sweep_svg(rp.sweep_trigger()));
  if (fs::exists(rp.metrics_snr()))
    emit("snr_sweep.svg", build_snr_svg(rp.metrics_snr(), rp.trojan_metrics()));
  if (fs::exists(rp.scatter_source()) && fs::exists(rp.scatter_target()))
    emit("activation_clusters.svg",
         build_clusters_svg(rp.scatter_source(), rp.scatter_target()));
  if (fs::exists(rp.detection_sweep()))
    emit("detection_sweep.svg", build_detection_svg(rp.detection_sweep()));
  return written;
}

}  // namespace mp::harness
