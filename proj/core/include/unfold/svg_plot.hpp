// SPDX-License-Identifier: Apache-2.0
//
// Deterministic SVG line charts drawn from a MetricsTable.

#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "unfold/experiment.hpp"

namespace unfold {

enum class PlotKind { NmseCurve, SumratePerIteration };

const char* to_string(PlotKind k);
PlotKind plot_kind_from_string(const std::string& s);

struct PlotFilter {
    std::optional<double> snr_db;
    std::optional<int> frames;
};

/// nmse-curve: holdout_nmse_db over seen_channels, one polyline per
/// (method, SNR, T), plus dashed test-median references for the fixed
/// estimators. sumrate-per-iteration: sumrate_bits over pga_iteration.
/// Throws std::invalid_argument when nothing matches.
std::string render_plot(const MetricsTable& table, PlotKind kind, const PlotFilter& filter = {});

void write_plot(const MetricsTable& table, PlotKind kind, const std::filesystem::path& out,
                const PlotFilter& filter = {});

}  // namespace unfold
