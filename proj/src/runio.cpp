#include "amal/runio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace amal {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt6(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

void save_lambdas(const MixingWeights& lambdas, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "instance_id,lambda_p";
  for (Index k = 1; k < lambdas.components(); ++k) os << ",lambda_a_" << k;
  os << '\n';
  for (Index i = 0; i < lambdas.rows(); ++i) {
    os << i;
    for (Index c = 0; c < lambdas.components(); ++c) os << ',' << fmt17(lambdas.table(i, c));
    os << '\n';
  }
  if (!os) throw IoError("failed writing lambdas: " + path);
}

MixingWeights load_lambdas(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(is, line)) throw ParseError(path + ":1: missing header");
  std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (cols < 2 || line.rfind("instance_id,lambda_p", 0) != 0)
    throw ParseError(path + ":1: expected instance_id,lambda_p,... header");
  std::vector<double> flat;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::size_t start = 0, field = 0;
    while (start <= line.size()) {
      std::size_t comma = line.find(',', start);
      std::string cell =
          line.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
      if (field > 0) {
        try {
          flat.push_back(std::stod(cell));
        } catch (const std::exception&) {
          throw ParseError(path + ":" + std::to_string(line_no) + ": not a number: " + cell);
        }
      }
      ++field;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (field != cols)
      throw ParseError(path + ":" + std::to_string(line_no) + ": wrong field count");
  }
  const std::size_t width = cols - 1;
  MixingWeights w;
  w.table.resize(static_cast<Index>(flat.size() / width), static_cast<Index>(width));
  for (Index i = 0; i < w.table.rows(); ++i)
    for (Index c = 0; c < w.table.cols(); ++c)
      w.table(i, c) = flat[static_cast<std::size_t>(i) * width + static_cast<std::size_t>(c)];
  w.clamp_lo = std::min(0.0, w.table.minCoeff());
  w.clamp_hi = std::max(1.0, w.table.maxCoeff());
  return w;
}

void save_metrics(const std::vector<EpochRecord>& metrics, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  for (const auto& r : metrics) {
    json j = {{"epoch", r.epoch},         {"train_loss", r.train_loss},
              {"val_loss", r.val_loss},   {"val_acc", r.val_acc},
              {"test_acc", r.test_acc},   {"val_grad_sq", r.val_grad_sq},
              {"seconds", r.seconds}};
    os << j.dump() << '\n';
  }
  if (!os) throw IoError("failed writing metrics: " + path);
}

std::vector<EpochRecord> load_metrics(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path);
  std::vector<EpochRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded())
      throw ParseError(path + ":" + std::to_string(line_no) + ": invalid JSON");
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.train_loss = j.at("train_loss").get<double>();
    r.val_loss = j.at("val_loss").get<double>();
    r.val_acc = j.at("val_acc").get<double>();
    r.test_acc = j.at("test_acc").get<double>();
    r.val_grad_sq = j.at("val_grad_sq").get<double>();
    r.seconds = j.at("seconds").get<double>();
    out.push_back(r);
  }
  return out;
}

void write_run_dir(const std::string& dir, const RunResult& result) {
  fs::create_directories(dir);
  {
    std::ofstream os(fs::path(dir) / "config.json");
    if (!os) throw IoError("cannot write config.json in " + dir);
    json j = result.config_json.empty() ? json::object() : json::parse(result.config_json);
    j["seed"] = result.seed;
    os << j.dump(2) << '\n';
  }
  save_metrics(result.metrics, (fs::path(dir) / "metrics.jsonl").string());
  save_lambdas(result.final_lambdas, (fs::path(dir) / "lambdas.csv").string());
  save_checkpoint(result.final_params, (fs::path(dir) / "final.ckpt").string());
}

RunResult read_run_dir(const std::string& dir) {
  RunResult r;
  {
    std::ifstream is(fs::path(dir) / "config.json");
    if (!is) throw IoError("cannot open config.json in " + dir);
    json j = json::parse(is);
    r.seed = j.value("seed", 0ull);
    r.config_json = j.dump();
  }
  r.metrics = load_metrics((fs::path(dir) / "metrics.jsonl").string());
  r.final_lambdas = load_lambdas((fs::path(dir) / "lambdas.csv").string());
  r.final_params = load_checkpoint((fs::path(dir) / "final.ckpt").string());
  return r;
}

namespace {

constexpr double kWidth = 800.0, kHeight = 500.0;
constexpr double kLeft = 70.0, kRight = 20.0, kTop = 20.0, kBottom = 55.0;
const char* kPalette[] = {"#d62728", "#1f77b4", "#2ca02c", "#9467bd",
                          "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

struct Extent {
  double lo = 0.0, hi = 1.0;
  void widen(double v) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
};

void svg_header(std::ofstream& os) {
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
     << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

void svg_axes(std::ofstream& os, double x0, double x1, double y0, double y1,
              const std::string& x_label, const std::string& y_label) {
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kHeight - kBottom << "\" x2=\""
     << kWidth - kRight << "\" y2=\"" << kHeight - kBottom
     << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  os << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
     << kHeight - kBottom << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  const int ticks = 5;
  for (int t = 0; t <= ticks; ++t) {
    double fx = static_cast<double>(t) / ticks;
    double vx = x0 + (x1 - x0) * fx;
    double px = kLeft + (kWidth - kLeft - kRight) * fx;
    os << "<line x1=\"" << px << "\" y1=\"" << kHeight - kBottom << "\" x2=\"" << px
       << "\" y2=\"" << kHeight - kBottom + 5 << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << px << "\" y=\"" << kHeight - kBottom + 20
       << "\" font-size=\"12\" text-anchor=\"middle\">" << fmt6(vx) << "</text>\n";
    double vy = y0 + (y1 - y0) * fx;
    double py = kHeight - kBottom - (kHeight - kTop - kBottom) * fx;
    os << "<line x1=\"" << kLeft - 5 << "\" y1=\"" << py << "\" x2=\"" << kLeft << "\" y2=\""
       << py << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << kLeft - 8 << "\" y=\"" << py + 4
       << "\" font-size=\"12\" text-anchor=\"end\">" << fmt6(vy) << "</text>\n";
  }
  os << "<text x=\"" << (kLeft + kWidth - kRight) / 2 << "\" y=\"" << kHeight - 12
     << "\" font-size=\"14\" text-anchor=\"middle\">" << x_label << "</text>\n";
  os << "<text x=\"18\" y=\"" << (kTop + kHeight - kBottom) / 2
     << "\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
     << (kTop + kHeight - kBottom) / 2 << ")\">" << y_label << "</text>\n";
}

}  // namespace

void svg_line_chart(const std::vector<SvgSeries>& series, const std::string& x_label,
                    const std::string& y_label, const std::string& path) {
  if (series.empty()) throw ConfigError("svg_line_chart: no series");
  Extent ex, ey;
  ex.lo = ex.hi = series.front().x.empty() ? 0.0 : series.front().x.front();
  ey.lo = ey.hi = series.front().y.empty() ? 0.0 : series.front().y.front();
  for (const auto& s : series) {
    if (s.x.size() != s.y.size()) throw ConfigError("svg_line_chart: x/y length mismatch");
    for (double v : s.x) ex.widen(v);
    for (double v : s.y) ey.widen(v);
  }
  if (ex.hi <= ex.lo) ex.hi = ex.lo + 1.0;
  if (ey.hi <= ey.lo) ey.hi = ey.lo + 1.0;

  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  svg_header(os);
  svg_axes(os, ex.lo, ex.hi, ey.lo, ey.hi, x_label, y_label);
  auto px = [&](double v) {
    return kLeft + (kWidth - kLeft - kRight) * (v - ex.lo) / (ex.hi - ex.lo);
  };
  auto py = [&](double v) {
    return kHeight - kBottom - (kHeight - kTop - kBottom) * (v - ey.lo) / (ey.hi - ey.lo);
  };
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    os << "<polyline fill=\"none\" stroke=\"" << kPalette[si % 8]
       << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i)
      os << fmt6(px(s.x[i])) << ',' << fmt6(py(s.y[i])) << ' ';
    os << "\"/>\n";
    double ly = kTop + 16.0 * static_cast<double>(si + 1);
    os << "<line x1=\"" << kWidth - kRight - 150 << "\" y1=\"" << ly << "\" x2=\""
       << kWidth - kRight - 125 << "\" y2=\"" << ly << "\" stroke=\"" << kPalette[si % 8]
       << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << kWidth - kRight - 120 << "\" y=\"" << ly + 4
       << "\" font-size=\"12\">" << s.name << "</text>\n";
  }
  os << "</svg>\n";
  if (!os) throw IoError("failed writing chart: " + path);
}

void svg_histogram(const Vector& edges, const std::vector<SvgBarGroup>& groups,
                   const std::string& x_label, const std::string& path) {
  if (groups.empty()) throw ConfigError("svg_histogram: no groups");
  const Index bins = edges.size() - 1;
  double ymax = 1.0;
  for (const auto& g : groups) {
    if (static_cast<Index>(g.heights.size()) != bins)
      throw ConfigError("svg_histogram: heights do not match bins");
    for (double h : g.heights) ymax = std::max(ymax, h);
  }
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for writing: " + path);
  svg_header(os);
  svg_axes(os, edges(0), edges(bins), 0.0, ymax, x_label, "count");
  const double span = edges(bins) - edges(0);
  auto px = [&](double v) { return kLeft + (kWidth - kLeft - kRight) * (v - edges(0)) / span; };
  auto py = [&](double v) {
    return kHeight - kBottom - (kHeight - kTop - kBottom) * v / ymax;
  };
  const double gw = 1.0 / static_cast<double>(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    for (Index b = 0; b < bins; ++b) {
      double x0 = edges(b) + (edges(b + 1) - edges(b)) * gw * static_cast<double>(gi);
      double x1 = x0 + (edges(b + 1) - edges(b)) * gw;
      double h = groups[gi].heights[static_cast<std::size_t>(b)];
      os << "<rect x=\"" << fmt6(px(x0)) << "\" y=\"" << fmt6(py(h)) << "\" width=\""
         << fmt6(px(x1) - px(x0)) << "\" height=\"" << fmt6(py(0.0) - py(h)) << "\" fill=\""
         << kPalette[gi % 8] << "\" fill-opacity=\"0.7\"/>\n";
    }
    double ly = kTop + 16.0 * static_cast<double>(gi + 1);
    os << "<rect x=\"" << kWidth - kRight - 150 << "\" y=\"" << ly - 8
       << "\" width=\"12\" height=\"12\" fill=\"" << kPalette[gi % 8] << "\"/>\n";
    os << "<text x=\"" << kWidth - kRight - 132 << "\" y=\"" << ly + 3
       << "\" font-size=\"12\">" << groups[gi].name << "</text>\n";
  }
  os << "</svg>\n";
  if (!os) throw IoError("failed writing histogram: " + path);
}

}  // namespace amal
