#include "rstan/harness/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <utility>

#include <fmt/format.h>

#include "rstan/core/errors.hpp"

namespace rstan::harness {

namespace {

constexpr double kWidth = 640, kHeight = 400, kLeft = 70, kRight = 160, kTop = 40, kBottom = 50;
constexpr const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

using Series = std::vector<std::pair<double, double>>;

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '<') out += "&lt;";
    else if (c == '>') out += "&gt;";
    else if (c == '&') out += "&amp;";
    else out += c;
  }
  return out;
}

void write_chart(const std::filesystem::path& path, const std::string& title,
                 const std::map<std::string, Series>& series) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& [_, s] : series)
    for (auto [x, y] : s) {
      if (!std::isfinite(y)) continue;
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (1.0 - (y - y0) / (y1 - y0)) * ph; };

  std::ofstream os(path);
  os << fmt::format(R"(<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" font-family="sans-serif" font-size="12">)",
                    kWidth, kHeight)
     << '\n';
  os << fmt::format(R"(<rect width="{}" height="{}" fill="white"/>)", kWidth, kHeight) << '\n';
  os << fmt::format(R"(<text x="{}" y="24" font-size="15">{}</text>)", kLeft, escape(title)) << '\n';
  os << fmt::format(R"(<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="#444"/>)", kLeft, kTop, pw, ph)
     << '\n';
  for (int i = 0; i <= 4; ++i) {
    const double yv = y0 + (y1 - y0) * i / 4.0, xv = x0 + (x1 - x0) * i / 4.0;
    os << fmt::format(R"(<line x1="{0}" x2="{1}" y1="{2:.1f}" y2="{2:.1f}" stroke="#ddd"/>)", kLeft, kLeft + pw, py(yv))
       << '\n';
    os << fmt::format(R"(<text x="{}" y="{:.1f}" text-anchor="end">{:.3g}</text>)", kLeft - 6, py(yv) + 4, yv) << '\n';
    os << fmt::format(R"(<text x="{:.1f}" y="{}" text-anchor="middle">{:.3g}</text>)", px(xv), kTop + ph + 18, xv)
       << '\n';
  }
  os << fmt::format(R"(<text x="{}" y="{}" text-anchor="middle">epoch</text>)", kLeft + pw / 2, kHeight - 10) << '\n';
  int k = 0;
  for (const auto& [name, s] : series) {
    const char* color = kColors[k % std::size(kColors)];
    std::string pts;
    for (auto [x, y] : s)
      if (std::isfinite(y)) pts += fmt::format("{:.1f},{:.1f} ", px(x), py(y));
    os << fmt::format(R"(<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>)", color, pts) << '\n';
    const double ly = kTop + 14 + 18 * k;
    os << fmt::format(R"(<line x1="{0}" x2="{1}" y1="{2}" y2="{2}" stroke="{3}" stroke-width="2"/>)", kLeft + pw + 10,
                      kLeft + pw + 30, ly, color)
       << '\n';
    os << fmt::format(R"(<text x="{}" y="{}">{}</text>)", kLeft + pw + 36, ly + 4, escape(name)) << '\n';
    ++k;
  }
  os << "</svg>\n";
  if (!os) throw ContractError("cannot write " + path.string());
}

}  // namespace

std::vector<std::filesystem::path> plot_metrics(const MetricLog& log, const std::filesystem::path& out_dir) {
  std::map<std::pair<std::string, std::string>, std::map<std::string, Series>> charts;
  for (const MetricRow& r : log.rows()) {
    if (r.stage == "final" || r.fold < 0) continue;
    charts[{r.stage, r.metric}][r.split + " fold " + std::to_string(r.fold)].emplace_back(double(r.epoch), r.value);
  }
  std::filesystem::create_directories(out_dir);
  std::vector<std::filesystem::path> written;
  for (const auto& [key, series] : charts) {
    const auto path = out_dir / (key.first + "_" + key.second + ".svg");
    write_chart(path, key.first + ": " + key.second, series);
    written.push_back(path);
  }
  return written;
}

}  // namespace rstan::harness
