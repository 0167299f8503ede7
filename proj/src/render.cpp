#include "bap/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace bap {

namespace {

// Light to dark red backgrounds.
constexpr int kAnsiBackground[kIntensityClasses] = {231, 224, 217, 210, 203, 196, 160, 124, 88, 52};
constexpr const char* kHtmlBackground[kIntensityClasses] = {"#ffffff", "#fde0dd", "#fcc5c0", "#fa9fb5", "#f768a1",
                                                            "#e7298a", "#dd3497", "#ae017e", "#7a0177", "#49006a"};

void check(const HeatmapInput& in) {
  if (in.lines.size() != in.line_scores.size()) {
    throw RenderError("sample '" + in.sample_id + "': code has " + std::to_string(in.lines.size()) +
                      " lines but the ranking scores " + std::to_string(in.line_scores.size()));
  }
}

std::string escape_html(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&#39;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::vector<int> intensity_classes(std::span<const double> scores) {
  double mx = 0.0;
  for (double s : scores) {
    if (!std::isfinite(s) || s < 0.0) throw RenderError("line scores must be finite and non-negative");
    mx = std::max(mx, s);
  }
  std::vector<int> out(scores.size(), 0);
  if (mx <= 0.0) return out;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::min(kIntensityClasses - 1, static_cast<int>(std::floor(scores[i] / mx * kIntensityClasses)));
  }
  return out;
}

std::string render_ansi(const HeatmapInput& in) {
  check(in);
  const auto cls = intensity_classes(in.line_scores);
  std::string out = "== " + in.sample_id + "\n";
  char buf[64];
  for (std::size_t i = 0; i < in.lines.size(); ++i) {
    const int fg = cls[i] >= 6 ? 231 : 16;
    std::snprintf(buf, sizeof buf, "%4zu %s \x1b[48;5;%dm\x1b[38;5;%dm", i + 1, fixed(in.line_scores[i]).c_str(),
                  kAnsiBackground[cls[i]], fg);
    out += buf;
    out += in.lines[i];
    out += "\x1b[0m\n";
  }
  return out;
}

std::string render_html(std::span<const HeatmapInput> inputs) {
  for (const auto& in : inputs) check(in);
  std::string out =
      "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>line weights</title>\n<style>\n"
      "body { font-family: sans-serif; }\n"
      "table { border-collapse: collapse; margin-bottom: 1.5em; }\n"
      "td { padding: 0 0.5em; font-family: monospace; white-space: pre; }\n"
      "td.n, td.s { color: #666666; text-align: right; }\n";
  for (int c = 0; c < kIntensityClasses; ++c) {
    out += "tr.h" + std::to_string(c) + " td.code { background: " + kHtmlBackground[c] +
           (c >= 6 ? "; color: #ffffff" : "") + "; }\n";
  }
  out += "</style>\n</head>\n<body>\n";
  for (const auto& in : inputs) {
    const auto cls = intensity_classes(in.line_scores);
    out += "<h2>" + escape_html(in.sample_id) + "</h2>\n<table>\n";
    for (std::size_t i = 0; i < in.lines.size(); ++i) {
      out += "<tr class=\"h" + std::to_string(cls[i]) + "\"><td class=\"n\">" + std::to_string(i + 1) +
             "</td><td class=\"s\">" + fixed(in.line_scores[i]) + "</td><td class=\"code\">" +
             escape_html(in.lines[i]) + "</td></tr>\n";
    }
    out += "</table>\n";
  }
  out += "</body>\n</html>\n";
  return out;
}

}  // namespace bap
