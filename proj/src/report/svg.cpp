#include "histonet/report/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "histonet/errors.hpp"

namespace histonet::report {

namespace {

constexpr double kWidth = 480.0;
constexpr double kHeight = 320.0;
constexpr double kLeft = 56.0;
constexpr double kRight = 16.0;
constexpr double kTop = 36.0;
constexpr double kBottom = 52.0;

constexpr const char* kTargetColour = "#4c72b0";
constexpr const char* kPredColour = "#dd8452";
constexpr const char* kPalette[] = {"#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3"};

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string label(double v) {
  char buf[32];
  if (std::abs(v - std::round(v)) < 1e-9 && std::abs(v) < 1e9) {
    std::snprintf(buf, sizeof buf, "%.0f", v);
  } else {
    std::snprintf(buf, sizeof buf, "%.3g", v);
  }
  return buf;
}

// Upper axis limit: 1, 2 or 5 times a power of ten at or above v.
double nice_ceiling(double v) {
  if (!(v > 0.0)) return 1.0;
  const double p = std::pow(10.0, std::floor(std::log10(v)));
  for (double m : {1.0, 2.0, 5.0, 10.0}) {
    if (m * p >= v - 1e-12) return m * p;
  }
  return 10.0 * p;
}

void header(std::ostringstream& os, const std::string& title) {
  os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
     << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\""
     << num(kHeight) << "\" viewBox=\"0 0 " << num(kWidth) << " " << num(kHeight) << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << num(kWidth / 2) << "\" y=\"22\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"14\">" << xml_escape(title) << "</text>\n";
}

void y_axis(std::ostringstream& os, double y_max, const std::string& y_label) {
  const double plot_h = kHeight - kTop - kBottom;
  os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kTop) << "\" x2=\"" << num(kLeft)
     << "\" y2=\"" << num(kHeight - kBottom) << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << num(kLeft) << "\" y1=\"" << num(kHeight - kBottom) << "\" x2=\""
     << num(kWidth - kRight) << "\" y2=\"" << num(kHeight - kBottom) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y_max * i / 4.0;
    const double y = kHeight - kBottom - plot_h * i / 4.0;
    os << "<line x1=\"" << num(kLeft - 4) << "\" y1=\"" << num(y) << "\" x2=\"" << num(kLeft)
       << "\" y2=\"" << num(y) << "\" stroke=\"black\"/>\n"
       << "<text x=\"" << num(kLeft - 6) << "\" y=\"" << num(y + 4)
       << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" << label(v)
       << "</text>\n";
  }
  if (!y_label.empty()) {
    os << "<text x=\"14\" y=\"" << num(kTop + plot_h / 2) << "\" transform=\"rotate(-90 14 "
       << num(kTop + plot_h / 2) << ")\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       << "font-size=\"11\">" << xml_escape(y_label) << "</text>\n";
  }
}

void legend(std::ostringstream& os, std::span<const std::pair<std::string, std::string>> items) {
  double x = kLeft + 8;
  for (const auto& [name, colour] : items) {
    os << "<rect x=\"" << num(x) << "\" y=\"" << num(kTop - 2) << "\" width=\"10\" height=\"10\" fill=\""
       << colour << "\"/>\n"
       << "<text x=\"" << num(x + 14) << "\" y=\"" << num(kTop + 7)
       << "\" font-family=\"sans-serif\" font-size=\"10\">" << xml_escape(name) << "</text>\n";
    x += 24 + 7.0 * static_cast<double>(name.size());
  }
}

}  // namespace

std::string xml_escape(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string histogram_svg(const std::string& title, std::span<const double> target,
                          std::span<const double> prediction, std::span<const double> edges) {
  if (target.size() != prediction.size() || edges.size() != target.size() + 1 || target.empty()) {
    throw DimensionError("histogram_svg: need B target bins, B predicted bins and B + 1 edges");
  }
  double hi = 0.0;
  for (double v : target) hi = std::max(hi, v);
  for (double v : prediction) hi = std::max(hi, v);
  const double y_max = nice_ceiling(hi);
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  const double slot = plot_w / static_cast<double>(target.size());
  const double bar = slot * 0.38;

  std::ostringstream os;
  header(os, title);
  y_axis(os, y_max, "count");
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double x0 = kLeft + slot * static_cast<double>(i) + slot * 0.1;
    const double values[] = {target[i], prediction[i]};
    const char* colours[] = {kTargetColour, kPredColour};
    for (int k = 0; k < 2; ++k) {
      const double h = plot_h * std::max(0.0, values[k]) / y_max;
      os << "<rect x=\"" << num(x0 + k * bar) << "\" y=\"" << num(kHeight - kBottom - h)
         << "\" width=\"" << num(bar) << "\" height=\"" << num(h) << "\" fill=\"" << colours[k]
         << "\"/>\n";
    }
  }
  for (std::size_t i = 0; i < edges.size(); ++i) {
    const double x = kLeft + slot * static_cast<double>(i);
    os << "<text x=\"" << num(x) << "\" y=\"" << num(kHeight - kBottom + 14)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">"
       << label(edges[i]) << "</text>\n";
  }
  os << "<text x=\"" << num(kLeft + plot_w / 2) << "\" y=\"" << num(kHeight - 12)
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">object area (px)</text>\n";
  const std::pair<std::string, std::string> items[] = {{"target", kTargetColour},
                                                       {"prediction", kPredColour}};
  legend(os, items);
  os << "</svg>\n";
  return os.str();
}

std::string line_plot_svg(const std::string& title, const std::string& x_label,
                          const std::string& y_label, std::span<const Series> series) {
  double x_lo = 0.0, x_hi = 0.0, y_hi = 0.0;
  bool first = true;
  for (const Series& s : series) {
    if (s.x.size() != s.y.size()) throw DimensionError("line_plot_svg: x/y length mismatch");
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (first) {
        x_lo = x_hi = s.x[i];
        first = false;
      }
      x_lo = std::min(x_lo, s.x[i]);
      x_hi = std::max(x_hi, s.x[i]);
      y_hi = std::max(y_hi, s.y[i]);
    }
  }
  if (x_hi == x_lo) {
    x_lo -= 0.5;
    x_hi += 0.5;
  }
  const double y_max = nice_ceiling(y_hi);
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + plot_w * (x - x_lo) / (x_hi - x_lo); };
  auto py = [&](double y) { return kHeight - kBottom - plot_h * std::max(0.0, y) / y_max; };

  std::ostringstream os;
  header(os, title);
  y_axis(os, y_max, y_label);
  for (int i = 0; i <= 4; ++i) {
    const double v = x_lo + (x_hi - x_lo) * i / 4.0;
    os << "<text x=\"" << num(px(v)) << "\" y=\"" << num(kHeight - kBottom + 14)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" << label(v)
       << "</text>\n";
  }
  os << "<text x=\"" << num(kLeft + plot_w / 2) << "\" y=\"" << num(kHeight - 12)
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
     << xml_escape(x_label) << "</text>\n";
  std::vector<std::pair<std::string, std::string>> items;
  for (std::size_t k = 0; k < series.size(); ++k) {
    const Series& s = series[k];
    const std::string colour = kPalette[k % std::size(kPalette)];
    items.emplace_back(s.name, colour);
    if (s.x.empty()) continue;
    os << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      os << (i ? " " : "") << num(px(s.x[i])) << "," << num(py(s.y[i]));
    }
    os << "\"/>\n";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      os << "<circle cx=\"" << num(px(s.x[i])) << "\" cy=\"" << num(py(s.y[i]))
         << "\" r=\"3\" fill=\"" << colour << "\"/>\n";
    }
  }
  legend(os, items);
  os << "</svg>\n";
  return os.str();
}

}  // namespace histonet::report
