#include "tokcode/report.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>
#include <sstream>

namespace tokcode {

namespace fs = std::filesystem;

// Shortest exact decimal representation; reruns and round-trips are
// byte-stable.
std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double parsed = 0.0;
    std::sscanf(buf, "%lf", &parsed);
    if (parsed == v) {
        for (int prec = 1; prec <= 16; ++prec) {
            char shorter[40];
            std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
            std::sscanf(shorter, "%lf", &parsed);
            if (parsed == v) return shorter;
        }
    }
    return buf;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

struct BoxStats {
    double lo, q1, med, q3, hi;
};

BoxStats box_stats(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto quantile = [&](double q) {
        const double idx = q * (v.size() - 1);
        const size_t a = static_cast<size_t>(idx);
        const size_t b = std::min(a + 1, v.size() - 1);
        const double frac = idx - a;
        return v[a] * (1 - frac) + v[b] * frac;
    };
    return {v.front(), quantile(0.25), quantile(0.5), quantile(0.75), v.back()};
}

std::string render_boxplot_svg(const std::string& embedder,
                               const std::vector<RecordRow>& records) {
    // Group: (p, method) -> similarities.
    std::map<double, std::map<MethodId, std::vector<double>>> groups;
    for (const auto& r : records) {
        if (r.embedder == embedder) groups[r.p][r.method].push_back(r.similarity);
    }
    if (groups.empty()) return "";

    const int box_w = 34, gap = 14, group_gap = 48;
    const int plot_h = 320, margin_l = 56, margin_t = 28, margin_b = 64;
    int n_boxes = 0, n_groups = 0;
    for (const auto& [p, methods] : groups) {
        n_boxes += static_cast<int>(methods.size());
        ++n_groups;
    }
    const int width = margin_l + n_boxes * (box_w + gap) + n_groups * group_gap + 40;
    const int height = margin_t + plot_h + margin_b;

    double lo = 1.0, hi = -1.0;
    for (const auto& [p, methods] : groups) {
        for (const auto& [m, vals] : methods) {
            for (double v : vals) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        }
    }
    lo = std::max(-1.0, lo - 0.05);
    hi = std::min(1.05, hi + 0.05);
    auto y_of = [&](double v) { return margin_t + plot_h * (hi - v) / (hi - lo); };

    const std::map<MethodId, std::string> colors = {
        {MethodId::kPassthrough, "#888888"},
        {MethodId::kInfilling, "#5b9bd5"},
        {MethodId::kTokCode, "#d45500"},
        {MethodId::kGreedyUpperBound, "#3a7d44"},
    };

    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "' font-family='sans-serif' font-size='11'>\n";
    svg << "<rect width='100%' height='100%' fill='white'/>\n";
    for (double tick = std::ceil(lo * 10) / 10; tick <= hi; tick += 0.1) {
        const double y = y_of(tick);
        svg << "<line x1='" << margin_l << "' y1='" << y << "' x2='" << width - 20 << "' y2='"
            << y << "' stroke='#eeeeee'/>\n";
        char label[16];
        std::snprintf(label, sizeof(label), "%.1f", tick);
        svg << "<text x='" << margin_l - 8 << "' y='" << y + 4
            << "' text-anchor='end'>" << label << "</text>\n";
    }
    svg << "<text x='14' y='" << margin_t + plot_h / 2
        << "' transform='rotate(-90 14 " << margin_t + plot_h / 2
        << ")' text-anchor='middle'>similarity (" << embedder << ")</text>\n";

    int x = margin_l + group_gap / 2;
    for (const auto& [p, methods] : groups) {
        const int group_x0 = x;
        for (const auto& [m, vals] : methods) {
            const BoxStats b = box_stats(vals);
            const std::string color =
                colors.count(m) ? colors.at(m) : std::string("#aa44aa");
            const int cx = x + box_w / 2;
            svg << "<line x1='" << cx << "' y1='" << y_of(b.lo) << "' x2='" << cx << "' y2='"
                << y_of(b.hi) << "' stroke='" << color << "'/>\n";
            svg << "<rect x='" << x << "' y='" << y_of(b.q3) << "' width='" << box_w
                << "' height='" << y_of(b.q1) - y_of(b.q3) << "' fill='" << color
                << "' fill-opacity='0.45' stroke='" << color << "'/>\n";
            svg << "<line x1='" << x << "' y1='" << y_of(b.med) << "' x2='" << x + box_w
                << "' y2='" << y_of(b.med) << "' stroke='" << color << "' stroke-width='2'/>\n";
            svg << "<text x='" << cx << "' y='" << margin_t + plot_h + 14
                << "' text-anchor='middle' transform='rotate(35 " << cx << " "
                << margin_t + plot_h + 14 << ")'>" << method_name(m) << "</text>\n";
            x += box_w + gap;
        }
        const int group_x1 = x - gap;
        char plabel[24];
        std::snprintf(plabel, sizeof(plabel), "p = %g", p);
        svg << "<text x='" << (group_x0 + group_x1) / 2 << "' y='"
            << margin_t + plot_h + 52 << "' text-anchor='middle' font-weight='bold'>" << plabel
            << "</text>\n";
        x += group_gap;
    }
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace

std::vector<std::string> emit_report(const MetricsTable& table, const std::string& out_dir,
                                     bool svg_plots) {
    if (table.aggregates.empty()) throw InputError("emit_report: empty metrics table");
    ensure_dir(out_dir);
    std::vector<std::string> written;

    {
        std::ostringstream csv;
        csv << "method,p,embedder,mean,std,ci_lo,ci_hi,n\n";
        for (const auto& a : table.aggregates) {
            csv << method_name(a.method) << "," << format_double(a.p) << "," << a.embedder
                << ",";
            if (a.implemented) {
                csv << format_double(a.mean) << "," << format_double(a.stddev) << ","
                    << format_double(a.ci_lo) << "," << format_double(a.ci_hi) << "," << a.n;
            } else {
                csv << ",,,,0";
            }
            csv << "\n";
        }
        const std::string path = out_dir + "/metrics.csv";
        write_file(path, csv.str());
        written.push_back(path);
    }
    {
        std::ostringstream csv;
        csv << "sample_id,trial,method,p,embedder,similarity,slot_recovery\n";
        for (const auto& r : table.records) {
            csv << r.sample_id << "," << r.trial << "," << method_name(r.method) << ","
                << format_double(r.p) << "," << r.embedder << "," << format_double(r.similarity)
                << "," << format_double(r.slot_recovery) << "\n";
        }
        const std::string path = out_dir + "/records.csv";
        write_file(path, csv.str());
        written.push_back(path);
    }
    {
        std::ostringstream csv;
        csv << "method,p,embedder,gap_closure\n";
        for (const auto& g : table.gaps) {
            csv << method_name(g.method) << "," << format_double(g.p) << "," << g.embedder
                << ",";
            if (g.closure.has_value()) csv << format_double(*g.closure);
            else csv << "na";
            csv << "\n";
        }
        const std::string path = out_dir + "/gap_closure.csv";
        write_file(path, csv.str());
        written.push_back(path);
    }
    {
        const std::string path = out_dir + "/run-config.json";
        write_file(path, table.run_config.dump(1) + "\n");
        written.push_back(path);
    }
    if (svg_plots) {
        for (const char* emb : {"sent_toy", "heldout_proxy"}) {
            const std::string svg = render_boxplot_svg(emb, table.records);
            if (svg.empty()) continue;
            const std::string path = out_dir + "/similarity_" + emb + ".svg";
            write_file(path, svg);
            written.push_back(path);
        }
    }
    return written;
}

std::vector<AggregateRow> parse_metrics_csv(const std::string& path) {
    const std::string text = read_file(path);
    std::stringstream ss(text);
    std::string line;
    if (!std::getline(ss, line)) throw IoError("metrics.csv: empty file " + path);
    if (line != "method,p,embedder,mean,std,ci_lo,ci_hi,n") {
        throw IoError("metrics.csv: unexpected header in " + path);
    }
    std::vector<AggregateRow> out;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 8) throw IoError("metrics.csv: malformed row '" + line + "'");
        AggregateRow a;
        a.method = method_from_name(f[0]);
        a.p = std::stod(f[1]);
        a.embedder = f[2];
        a.implemented = !f[3].empty();
        if (a.implemented) {
            a.mean = std::stod(f[3]);
            a.stddev = std::stod(f[4]);
            a.ci_lo = std::stod(f[5]);
            a.ci_hi = std::stod(f[6]);
        }
        a.n = std::stoi(f[7]);
        out.push_back(a);
    }
    return out;
}

std::vector<RecordRow> parse_records_csv(const std::string& path) {
    const std::string text = read_file(path);
    std::stringstream ss(text);
    std::string line;
    if (!std::getline(ss, line)) throw IoError("records.csv: empty file " + path);
    if (line != "sample_id,trial,method,p,embedder,similarity,slot_recovery") {
        throw IoError("records.csv: unexpected header in " + path);
    }
    std::vector<RecordRow> out;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 7) throw IoError("records.csv: malformed row '" + line + "'");
        RecordRow r;
        r.sample_id = std::stoi(f[0]);
        r.trial = std::stoi(f[1]);
        r.method = method_from_name(f[2]);
        r.p = std::stod(f[3]);
        r.embedder = f[4];
        r.similarity = std::stod(f[5]);
        r.slot_recovery = std::stod(f[6]);
        out.push_back(r);
    }
    return out;
}

std::vector<std::string> render_plots(const std::string& in_dir) {
    const auto records = parse_records_csv(in_dir + "/records.csv");
    std::vector<std::string> written;
    for (const char* emb : {"sent_toy", "heldout_proxy"}) {
        const std::string svg = render_boxplot_svg(emb, records);
        if (svg.empty()) continue;
        const std::string path = in_dir + "/similarity_" + std::string(emb) + ".svg";
        write_file(path, svg);
        written.push_back(path);
    }
    return written;
}

}  // namespace tokcode
