#pragma once

// Rendering of tables (text, CSV) and the convenience SVG plots.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "assimlab/error.hpp"
#include "assimlab/metrics.hpp"
#include "assimlab/stats.hpp"
#include "assimlab/util.hpp"

namespace assimlab {

/// Writes via a temporary sibling and rename, so readers never see a
/// half-written artifact.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::io, "cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw Error(ErrorKind::io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// CSV

inline std::string csv_field(const std::string& value) {
  if (value.find_first_of(",\"\n\r") == std::string::npos && (value.empty() || value.front() != ' '))
    return value;
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

class CsvWriter {
 public:
  /// `preamble` lines are written first, each prefixed with "# ".
  explicit CsvWriter(std::vector<std::string> header, std::vector<std::string> preamble = {})
      : columns_(header.size()) {
    for (const auto& line : preamble) out_ += "# " + line + "\n";
    row(header);
  }

  CsvWriter& row(const std::vector<std::string>& fields) {
    if (fields.size() != columns_) throw Error(ErrorKind::invalid_argument, "CSV row has the wrong width");
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) out_ += ',';
      out_ += csv_field(fields[i]);
    }
    out_ += '\n';
    return *this;
  }

  const std::string& str() const { return out_; }

 private:
  std::size_t columns_;
  std::string out_;
};

// ---------------------------------------------------------------------------
// Regression tables

namespace detail {

/// Code points, which is close enough to terminal width for our labels.
inline std::size_t display_width(const std::string& s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

inline std::string pad_right(const std::string& s, std::size_t width) {
  const auto w = display_width(s);
  return w >= width ? s : s + std::string(width - w, ' ');
}

inline std::string pad_left(const std::string& s, std::size_t width) {
  const auto w = display_width(s);
  return w >= width ? s : std::string(width - w, ' ') + s;
}

inline std::string beta_se(double beta, double se) {
  return format_fixed(beta, 3) + " (" + (std::isnan(se) ? std::string("n/a") : format_fixed(se, 3)) + ")";
}

inline std::string p_text(double p) {
  if (std::isnan(p)) return "n/a";
  char buf[32];
  if (p < 0.001)
    std::snprintf(buf, sizeof(buf), "%.2e", p);
  else
    std::snprintf(buf, sizeof(buf), "%.3f", p);
  return buf;
}

struct TableLine {
  enum Kind { intercept, group, term } kind;
  std::string label;
  std::size_t column = 0;
};

inline std::vector<TableLine> table_lines(const RegressionFit& fit, const DesignMatrix& design) {
  std::vector<TableLine> lines;
  std::vector<std::string> groups;
  for (const auto& c : fit.columns)
    if (c.kind != ColumnKind::intercept && std::find(groups.begin(), groups.end(), c.group) == groups.end())
      groups.push_back(c.group);
  auto heading = [&](const std::string& group) {
    for (const auto& f : design.factors)
      if (f.name == group) return f.heading();
    std::string out;
    for (const auto& [a, b] : design.interactions)
      if (a + " * " + b == group) {
        Factor fa{a, {}, {}, {}}, fb{b, {}, {}, {}};
        for (const auto& f : design.factors) {
          if (f.name == a) fa = f;
          if (f.name == b) fb = f;
        }
        return fa.heading() + " * " + fb.heading();
      }
    return group;
  };
  for (std::size_t j = 0; j < fit.columns.size(); ++j)
    if (fit.columns[j].kind == ColumnKind::intercept) lines.push_back({TableLine::intercept, "Intercept", j});
  for (const auto& g : groups) {
    lines.push_back({TableLine::group, heading(g), 0});
    for (std::size_t j = 0; j < fit.columns.size(); ++j)
      if (fit.columns[j].group == g && fit.columns[j].kind != ColumnKind::intercept)
        lines.push_back({TableLine::term, fit.columns[j].name, j});
  }
  return lines;
}

}  // namespace detail

inline std::string fit_footer(const RegressionFit& fit) {
  std::string f = std::isnan(fit.f) ? "n/a" : std::isinf(fit.f) ? "inf" : format_fixed(fit.f, 1);
  std::string fp;
  if (!std::isnan(fit.f_p)) fp = fit.f_p < 0.001 ? " (p<0.001)" : " (p=" + format_fixed(fit.f_p, 3) + ")";
  return "N=" + format_thousands(fit.n) + ", R²=" + format_fixed(fit.r2, 3) + ", F=" + f + fp;
}

/// Text table: axis-grouped rows with indented levels, "β (S.E.)", star
/// column and raw p-values, footer with N, R² and F.
inline std::string render_regression_table(const RegressionFit& fit, const DesignMatrix& design,
                                           const std::string& title) {
  const auto lines = detail::table_lines(fit, design);
  const std::string indent = "    ";
  std::size_t label_width = 12;
  for (const auto& l : lines)
    label_width = std::max(label_width, detail::display_width(l.label) + (l.kind == detail::TableLine::term ? 4 : 0));
  label_width += 2;
  const std::size_t beta_width = 18;
  const std::size_t star_width = 5;
  const std::size_t p_width = 10;
  const std::size_t total = label_width + beta_width + star_width + p_width;
  const std::string rule(total, '-');

  std::string out;
  out += title + "\n" + rule + "\n";
  out += detail::pad_right("", label_width) + detail::pad_left("β (S.E.)", beta_width) +
         detail::pad_left("", star_width) + detail::pad_left("p-value", p_width) + "\n";
  out += rule + "\n";
  for (const auto& l : lines) {
    if (l.kind == detail::TableLine::group) {
      out += l.label + "\n";
      continue;
    }
    const auto j = static_cast<Eigen::Index>(l.column);
    const std::string label = (l.kind == detail::TableLine::term ? indent : "") + l.label;
    out += detail::pad_right(label, label_width) + detail::pad_left(detail::beta_se(fit.coef(j), fit.se(j)), beta_width) +
           detail::pad_left(fit.stars[l.column], star_width) + detail::pad_left(detail::p_text(fit.p(j)), p_width) + "\n";
  }
  out += rule + "\n";
  out += fit_footer(fit) + "\n";
  out += "*** p<0.001; p-value column gives the two-sided t-test p-value.\n";
  if (!fit.dropped.empty()) {
    out += "Dropped all-zero columns:";
    for (const auto& d : fit.dropped) out += " '" + d + "'";
    out += "\n";
  }
  return out;
}

/// The same layout as CSV: kind,label,beta_se,stars,beta,se,p_value with
/// kind in {intercept, group, term, stat}.
inline std::string render_regression_csv(const RegressionFit& fit, const DesignMatrix& design,
                                         const std::vector<std::string>& preamble = {}) {
  CsvWriter csv({"kind", "label", "beta_se", "stars", "beta", "se", "p_value"}, preamble);
  for (const auto& l : detail::table_lines(fit, design)) {
    if (l.kind == detail::TableLine::group) {
      csv.row({"group", l.label, "", "", "", "", ""});
      continue;
    }
    const auto j = static_cast<Eigen::Index>(l.column);
    csv.row({l.kind == detail::TableLine::intercept ? "intercept" : "term", l.label,
             detail::beta_se(fit.coef(j), fit.se(j)), fit.stars[l.column], format_double(fit.coef(j)),
             format_double(fit.se(j)), format_double(fit.p(j))});
  }
  csv.row({"stat", "N", "", "", std::to_string(fit.n), "", ""});
  csv.row({"stat", "R2", "", "", format_double(fit.r2), "", ""});
  csv.row({"stat", "F", "", "", format_double(fit.f), "", format_double(fit.f_p)});
  return csv.str();
}

// ---------------------------------------------------------------------------
// SVG

namespace detail {

inline std::string svg_num(double v) { return format_fixed(v, 2); }

inline const char* palette(std::size_t i) {
  static const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd",
                                 "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return colors[i % 10];
}

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace detail

struct NamedCurve {
  std::string name;
  DensityCurve curve;
};

/// Density curves on shared axes with a dotted reference line at x = 0.
inline std::string render_density_svg(const std::vector<NamedCurve>& curves, const std::string& title) {
  const double w = 640, h = 400, ml = 50, mr = 160, mt = 40, mb = 40;
  double x0 = 0, x1 = 0, y1 = 0;
  bool first = true;
  for (const auto& c : curves)
    for (std::size_t i = 0; i < c.curve.x.size(); ++i) {
      if (first) {
        x0 = x1 = c.curve.x[i];
        first = false;
      }
      x0 = std::min(x0, c.curve.x[i]);
      x1 = std::max(x1, c.curve.x[i]);
      y1 = std::max(y1, c.curve.y[i]);
    }
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= 0) y1 = 1;
  auto sx = [&](double x) { return ml + (x - x0) / (x1 - x0) * (w - ml - mr); };
  auto sy = [&](double y) { return h - mb - y / y1 * (h - mt - mb); };
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"400\">\n";
  s += "<text x=\"" + detail::svg_num(ml) + "\" y=\"24\" font-size=\"14\">" + detail::xml_escape(title) + "</text>\n";
  s += "<line x1=\"" + detail::svg_num(ml) + "\" y1=\"" + detail::svg_num(h - mb) + "\" x2=\"" +
       detail::svg_num(w - mr) + "\" y2=\"" + detail::svg_num(h - mb) + "\" stroke=\"black\"/>\n";
  if (x0 <= 0 && x1 >= 0)
    s += "<line x1=\"" + detail::svg_num(sx(0)) + "\" y1=\"" + detail::svg_num(mt) + "\" x2=\"" +
         detail::svg_num(sx(0)) + "\" y2=\"" + detail::svg_num(h - mb) + "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  for (std::size_t c = 0; c < curves.size(); ++c) {
    std::string pts;
    const auto& curve = curves[c].curve;
    for (std::size_t i = 0; i < curve.x.size(); ++i)
      pts += detail::svg_num(sx(curve.x[i])) + "," + detail::svg_num(sy(curve.y[i])) + " ";
    s += "<polyline fill=\"none\" stroke=\"" + std::string(detail::palette(c)) + "\" points=\"" + pts + "\"/>\n";
    s += "<text x=\"" + detail::svg_num(w - mr + 10) + "\" y=\"" + detail::svg_num(mt + 16.0 * static_cast<double>(c)) +
         "\" font-size=\"11\" fill=\"" + detail::palette(c) + "\">" + detail::xml_escape(curves[c].name) + "</text>\n";
  }
  s += "<text x=\"" + detail::svg_num(ml) + "\" y=\"" + detail::svg_num(h - 10) + "\" font-size=\"11\">" +
       format_fixed(x0, 2) + "</text>\n";
  s += "<text x=\"" + detail::svg_num(w - mr - 30) + "\" y=\"" + detail::svg_num(h - 10) + "\" font-size=\"11\">" +
       format_fixed(x1, 2) + "</text>\n";
  return s + "</svg>\n";
}

struct MedianBar {
  std::string name;
  double median = 0.0;
  double low = 0.0;
  double high = 0.0;
};

/// Horizontal median markers with CI whiskers, one row per group.
inline std::string render_median_svg(const std::vector<MedianBar>& bars, const std::string& title) {
  const double w = 640, ml = 200, mr = 30, mt = 40, row = 24;
  const double h = mt + row * static_cast<double>(bars.size()) + 40;
  double x0 = 0, x1 = 0;
  for (const auto& b : bars) {
    x0 = std::min(x0, b.low);
    x1 = std::max(x1, b.high);
  }
  if (x1 <= x0) x1 = x0 + 1;
  const double pad = 0.05 * (x1 - x0);
  x0 -= pad;
  x1 += pad;
  auto sx = [&](double x) { return ml + (x - x0) / (x1 - x0) * (w - ml - mr); };
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"" + detail::svg_num(h) + "\">\n";
  s += "<text x=\"10\" y=\"24\" font-size=\"14\">" + detail::xml_escape(title) + "</text>\n";
  s += "<line x1=\"" + detail::svg_num(sx(0)) + "\" y1=\"" + detail::svg_num(mt - 10) + "\" x2=\"" +
       detail::svg_num(sx(0)) + "\" y2=\"" + detail::svg_num(h - 30) + "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double y = mt + row * static_cast<double>(i) + row / 2;
    const auto& b = bars[i];
    s += "<text x=\"10\" y=\"" + detail::svg_num(y + 4) + "\" font-size=\"11\">" + detail::xml_escape(b.name) + "</text>\n";
    s += "<line x1=\"" + detail::svg_num(sx(b.low)) + "\" y1=\"" + detail::svg_num(y) + "\" x2=\"" +
         detail::svg_num(sx(b.high)) + "\" y2=\"" + detail::svg_num(y) + "\" stroke=\"black\"/>\n";
    s += "<circle cx=\"" + detail::svg_num(sx(b.median)) + "\" cy=\"" + detail::svg_num(y) + "\" r=\"4\" fill=\"" +
         detail::palette(i) + "\"/>\n";
  }
  return s + "</svg>\n";
}

}  // namespace assimlab
