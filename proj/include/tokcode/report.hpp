#pragma once

#include <string>
#include <vector>

#include "tokcode/eval.hpp"

namespace tokcode {

// Writes metrics.csv, records.csv, gap_closure.csv, run-config.json and
// (optionally) one box-plot SVG per embedder. Returns the written paths.
std::vector<std::string> emit_report(const MetricsTable& table, const std::string& out_dir,
                                     bool svg_plots = true);

// Parses the aggregate table back from an output directory.
std::vector<AggregateRow> parse_metrics_csv(const std::string& path);
std::vector<RecordRow> parse_records_csv(const std::string& path);

// Renders box plots from records.csv found in `in_dir`.
std::vector<std::string> render_plots(const std::string& in_dir);

std::string format_double(double v);

}  // namespace tokcode
