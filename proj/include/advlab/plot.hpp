#pragma once

// Long-format (series, x, y) plot data from metrics and probe CSVs.

#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "format.hpp"

namespace advlab {

/// Trailing moving average; near the start the window shrinks to the available prefix.
/// NaN entries are skipped, and a window holding no finite value yields NaN.
inline std::vector<double> moving_average(const std::vector<double>& v, std::size_t window = 5) {
    if (window == 0) throw InvalidArgument("moving_average: window must be positive");
    std::vector<double> out(v.size(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t t = 0; t < v.size(); ++t) {
        const std::size_t lo = t + 1 >= window ? t + 1 - window : 0;
        double s = 0.0;
        std::size_t n = 0;
        for (std::size_t i = lo; i <= t; ++i)
            if (std::isfinite(v[i])) {
                s += v[i];
                ++n;
            }
        if (n > 0) out[t] = s / static_cast<double>(n);
    }
    return out;
}

struct PlotPoint {
    std::string series;
    double x, y;
};

namespace detail {

inline std::vector<double> numeric_column(const CsvTable& t, const std::string& name) {
    const std::size_t c = t.column(name);
    std::vector<double> out;
    for (const auto& row : t.rows) {
        if (c >= row.size()) throw InputError("plot: short row in column '" + name + "'");
        out.push_back(row[c] == "excluded" ? std::numeric_limits<double>::quiet_NaN() : parse_double(row[c]));
    }
    return out;
}

inline void require_columns(const CsvTable& t, const std::vector<std::string>& names, const std::string& figure) {
    std::string missing;
    for (const auto& n : names)
        if (!t.has_column(n)) missing += (missing.empty() ? "" : ", ") + n;
    if (!missing.empty()) throw InputError("figure " + figure + " needs missing column(s): " + missing);
}

inline void append_series(std::vector<PlotPoint>& out, const std::string& name, const std::vector<double>& x,
                          const std::vector<double>& y) {
    for (std::size_t i = 0; i < x.size(); ++i)
        if (std::isfinite(y[i])) out.push_back({name, x[i], y[i]});
}

}  // namespace detail

inline const std::vector<std::string>& figure_names() {
    static const std::vector<std::string> names{"fig1", "fig2", "fig3", "fig4", "a1", "a2", "a3"};
    return names;
}

/// Figures:
///   fig1  metrics.csv: IG, HS and adversarial loss per split (smoothed over 5 epochs)
///   fig2  metrics.csv: test minus train adversarial loss, raw ("gap") and smoothed ("gap_smoothed")
///   fig3  metrics.csv: HS, IG and every eff_* column on the training subset (smoothed)
///   fig4  probe --degenerate output: effectiveness and HS against the manipulation parameter
///   a1    probe --pgd-sweep output: robust accuracy and adversarial loss against PGD steps
///   a2    metrics.csv with the softplus twin: HS of the ReLU model and its softplus twin
///   a3    probe --sample-sweep output: IG, HS and AV against the number of samples
inline std::vector<PlotPoint> plot_data(const CsvTable& t, const std::string& figure) {
    using detail::append_series;
    using detail::numeric_column;
    std::vector<PlotPoint> out;
    auto smoothed = [&](const std::vector<std::string>& cols) {
        detail::require_columns(t, cols, figure);
        detail::require_columns(t, {"epoch"}, figure);
        const auto x = numeric_column(t, "epoch");
        for (const auto& c : cols) append_series(out, c, x, moving_average(numeric_column(t, c)));
    };
    auto raw = [&](const std::string& xcol, const std::vector<std::string>& cols) {
        detail::require_columns(t, cols, figure);
        detail::require_columns(t, {xcol}, figure);
        const auto x = numeric_column(t, xcol);
        for (const auto& c : cols) append_series(out, c, x, numeric_column(t, c));
    };
    if (figure == "fig1") {
        smoothed({"ig_train", "ig_test", "hs_train", "hs_test", "train_adv_loss", "test_adv_loss"});
    } else if (figure == "fig2") {
        detail::require_columns(t, {"epoch", "train_adv_loss", "test_adv_loss"}, figure);
        const auto x = numeric_column(t, "epoch");
        const auto tr = numeric_column(t, "train_adv_loss");
        const auto te = numeric_column(t, "test_adv_loss");
        std::vector<double> gap(x.size());
        for (std::size_t i = 0; i < gap.size(); ++i) gap[i] = te[i] - tr[i];
        append_series(out, "gap", x, gap);
        append_series(out, "gap_smoothed", x, moving_average(gap));
    } else if (figure == "fig3") {
        std::vector<std::string> cols{"hs_train", "ig_train"};
        for (const auto& h : t.header)
            if (h.rfind("eff_", 0) == 0) cols.push_back(h);
        if (cols.size() == 2) throw InputError("figure fig3 needs at least one eff_* column");
        smoothed(cols);
    } else if (figure == "fig4") {
        detail::require_columns(t, {"variant", "param", "effectiveness", "hs"}, figure);
        const std::size_t vc = t.column("variant");
        const auto x = numeric_column(t, "param");
        const auto eff = numeric_column(t, "effectiveness");
        const auto hs = numeric_column(t, "hs");
        for (std::size_t i = 0; i < x.size(); ++i) {
            const std::string& v = t.rows[i][vc];
            if (std::isfinite(eff[i])) out.push_back({v + ":effectiveness", x[i], eff[i]});
            if (std::isfinite(hs[i])) out.push_back({v + ":hs", x[i], hs[i]});
        }
    } else if (figure == "a1") {
        raw("steps", {"robust_acc", "adv_loss"});
    } else if (figure == "a2") {
        raw("epoch", {"hs_train", "hs_softplus_train"});
    } else if (figure == "a3") {
        raw("n", {"ig", "hs", "av"});
    } else {
        throw InvalidArgument("unknown figure '" + figure + "' (expected fig1, fig2, fig3, fig4, a1, a2 or a3)");
    }
    return out;
}

inline std::string plot_csv(const std::vector<PlotPoint>& pts) {
    std::string s = "series,x,y\n";
    for (const auto& p : pts) s += p.series + "," + format_double(p.x) + "," + format_double(p.y) + "\n";
    return s;
}

inline void emit_plot_data(const std::string& metrics_path, const std::string& figure, const std::string& out_path) {
    write_text(out_path, plot_csv(plot_data(read_csv(metrics_path), figure)));
}

}  // namespace advlab
