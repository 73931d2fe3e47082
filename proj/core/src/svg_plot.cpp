// SPDX-License-Identifier: Apache-2.0

#include "unfold/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "unfold/io.hpp"

namespace unfold {

const char* to_string(PlotKind k) { return k == PlotKind::NmseCurve ? "nmse-curve" : "sumrate-per-iteration"; }

PlotKind plot_kind_from_string(const std::string& s)
{
    if (s == "nmse-curve") {
        return PlotKind::NmseCurve;
    }
    if (s == "sumrate-per-iteration") {
        return PlotKind::SumratePerIteration;
    }
    throw std::invalid_argument("unknown plot kind '" + s + "'");
}

namespace {

constexpr double kWidth = 760.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 230.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 60.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

std::string num(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string label(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string escape(const std::string& s)
{
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&':
            out += "&amp;";
            break;
        case '<':
            out += "&lt;";
            break;
        case '>':
            out += "&gt;";
            break;
        default:
            out += c;
        }
    }
    return out;
}

std::string cell_suffix(const MetricRow& r)
{
    return " (" + label(r.snr_db) + " dB, T=" + std::to_string(r.frames) + ")";
}

bool selected(const MetricRow& r, const PlotFilter& f)
{
    return (!f.snr_db || *f.snr_db == r.snr_db) && (!f.frames || *f.frames == r.frames);
}

struct Range {
    double lo = 0.0;
    double hi = 0.0;

    void widen()
    {
        if (hi - lo < 1e-9) {
            lo -= 0.5;
            hi += 0.5;
        }
    }
};

}  // namespace

std::string render_plot(const MetricsTable& table, PlotKind kind, const PlotFilter& filter)
{
    const std::string metric = kind == PlotKind::NmseCurve ? "holdout_nmse_db" : "sumrate_bits";
    const std::string axis = kind == PlotKind::NmseCurve ? "seen_channels" : "pga_iteration";

    std::map<std::string, std::vector<std::pair<double, double>>> series;
    std::map<std::string, double> references;
    for (const MetricRow& r : table.rows()) {
        if (!selected(r, filter)) {
            continue;
        }
        if (r.metric == metric && r.axis == axis) {
            series[r.method + cell_suffix(r)].emplace_back(r.x, r.value);
        } else if (kind == PlotKind::NmseCurve && r.metric == "nmse_db_median" && r.axis == "none" &&
                   (r.method == "mp-real" || r.method == "mp-nominal" || r.method == "lmmse")) {
            references[r.method + cell_suffix(r)] = r.value;
        }
    }
    if (series.empty()) {
        throw std::invalid_argument(std::string("plot ") + to_string(kind) + ": empty selection");
    }

    Range xr{1e300, -1e300};
    Range yr{1e300, -1e300};
    for (auto& [name, pts] : series) {
        std::stable_sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        for (const auto& [x, y] : pts) {
            xr.lo = std::min(xr.lo, x);
            xr.hi = std::max(xr.hi, x);
            yr.lo = std::min(yr.lo, y);
            yr.hi = std::max(yr.hi, y);
        }
    }
    for (const auto& [name, y] : references) {
        yr.lo = std::min(yr.lo, y);
        yr.hi = std::max(yr.hi, y);
    }
    xr.widen();
    yr.widen();
    const double pad = 0.05 * (yr.hi - yr.lo);
    yr.lo -= pad;
    yr.hi += pad;

    const double pw = kWidth - kLeft - kRight;
    const double ph = kHeight - kTop - kBottom;
    auto px = [&](double x) { return kLeft + (x - xr.lo) / (xr.hi - xr.lo) * pw; };
    auto py = [&](double y) { return kTop + (yr.hi - y) / (yr.hi - yr.lo) * ph; };

    std::string s;
    s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) +
         "\" viewBox=\"0 0 " + num(kWidth) + " " + num(kHeight) +
         "\" font-family=\"DejaVu Sans, Arial, sans-serif\" font-size=\"12\">\n";
    s += "<rect x=\"0\" y=\"0\" width=\"" + num(kWidth) + "\" height=\"" + num(kHeight) + "\" fill=\"#ffffff\"/>\n";
    s += "<rect x=\"" + num(kLeft) + "\" y=\"" + num(kTop) + "\" width=\"" + num(pw) + "\" height=\"" + num(ph) +
         "\" fill=\"none\" stroke=\"#000000\"/>\n";

    for (int i = 0; i <= 5; ++i) {
        const double xv = xr.lo + (xr.hi - xr.lo) * i / 5.0;
        const double yv = yr.lo + (yr.hi - yr.lo) * i / 5.0;
        s += "<line x1=\"" + num(px(xv)) + "\" y1=\"" + num(kTop) + "\" x2=\"" + num(px(xv)) + "\" y2=\"" +
             num(kTop + ph) + "\" stroke=\"#dddddd\"/>\n";
        s += "<text x=\"" + num(px(xv)) + "\" y=\"" + num(kTop + ph + 18) + "\" text-anchor=\"middle\">" + label(xv) +
             "</text>\n";
        s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(py(yv)) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" +
             num(py(yv)) + "\" stroke=\"#dddddd\"/>\n";
        s += "<text x=\"" + num(kLeft - 6) + "\" y=\"" + num(py(yv) + 4) + "\" text-anchor=\"end\">" + label(yv) +
             "</text>\n";
    }
    const std::string xlabel = kind == PlotKind::NmseCurve ? "seen channels" : "PGA iteration";
    const std::string ylabel = kind == PlotKind::NmseCurve ? "NMSE (dB)" : "sum-rate (bits/s/Hz)";
    const std::string title = kind == PlotKind::NmseCurve ? "Channel estimation on unseen channels"
                                                          : "Sum-rate per PGA iteration";
    s += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"" + num(kHeight - 15) + "\" text-anchor=\"middle\">" + xlabel +
         "</text>\n";
    s += "<text x=\"18\" y=\"" + num(kTop + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 18 " +
         num(kTop + ph / 2) + ")\">" + ylabel + "</text>\n";
    s += "<text x=\"" + num(kLeft + pw / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + title +
         "</text>\n";

    std::size_t color = 0;
    double legend_y = kTop + 10;
    auto legend = [&](const std::string& name, const char* col, bool dashed) {
        s += "<line x1=\"" + num(kLeft + pw + 12) + "\" y1=\"" + num(legend_y) + "\" x2=\"" + num(kLeft + pw + 36) +
             "\" y2=\"" + num(legend_y) + "\" stroke=\"" + col + "\" stroke-width=\"2\"" +
             (dashed ? " stroke-dasharray=\"6 4\"" : "") + "/>\n";
        s += "<text x=\"" + num(kLeft + pw + 42) + "\" y=\"" + num(legend_y + 4) + "\" font-size=\"10\">" +
             escape(name) + "</text>\n";
        legend_y += 16;
    };
    for (const auto& [name, pts] : series) {
        const char* col = kPalette[color++ % std::size(kPalette)];
        s += "<polyline fill=\"none\" stroke=\"" + std::string(col) + "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < pts.size(); ++i) {
            s += (i > 0 ? " " : "") + num(px(pts[i].first)) + "," + num(py(pts[i].second));
        }
        s += "\"/>\n";
        legend(name, col, false);
    }
    for (const auto& [name, y] : references) {
        const char* col = kPalette[color++ % std::size(kPalette)];
        s += "<line x1=\"" + num(kLeft) + "\" y1=\"" + num(py(y)) + "\" x2=\"" + num(kLeft + pw) + "\" y2=\"" +
             num(py(y)) + "\" stroke=\"" + col + "\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"/>\n";
        legend(name + " test", col, true);
    }
    s += "</svg>\n";
    return s;
}

void write_plot(const MetricsTable& table, PlotKind kind, const std::filesystem::path& out, const PlotFilter& filter)
{
    const std::string svg = render_plot(table, kind, filter);
    if (out.has_parent_path()) {
        std::filesystem::create_directories(out.parent_path());
    }
    write_text(out, svg);
}

}  // namespace unfold
