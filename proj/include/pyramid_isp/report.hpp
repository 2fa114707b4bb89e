#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pyramid_isp/model.hpp"
#include "pyramid_isp/png_io.hpp"
#include "pyramid_isp/trainer.hpp"

namespace pyramid_isp {

struct StepRecord {
    long step = 0;
    int level = 0;
    double lr = 0, loss_mse = 0, loss_vgg = 0, loss_msssim = 0, loss_total = 0;
};

struct EpochRecord {
    int epoch = 0;
    int level = 0;
    double val_psnr = 0, val_ssim = 0, val_msssim = 0;
};

struct ParsedLog {
    std::vector<StepRecord> steps;
    std::vector<EpochRecord> epochs;
    std::vector<std::pair<int, std::string>> bad_lines;  // line number, reason
};

/// Reads an NDJSON training log. Step and epoch records are collected;
/// other records (config echo, events) are skipped; malformed lines are
/// reported and do not stop parsing.
inline ParsedLog parse_training_log(std::istream& is) {
    ParsedLog out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (!j.is_object()) throw std::runtime_error("not a JSON object");
            if (j.contains("event")) continue;
            if (j.contains("loss_total")) {
                out.steps.push_back({j.at("step").get<long>(), j.at("level").get<int>(), j.at("lr").get<double>(),
                                     j.at("loss_mse").get<double>(), j.at("loss_vgg").get<double>(),
                                     j.at("loss_msssim").get<double>(), j.at("loss_total").get<double>()});
            } else if (j.contains("epoch")) {
                out.epochs.push_back({j.at("epoch").get<int>(), j.at("level").get<int>(), metric_from_json(j.at("val_psnr")),
                                      metric_from_json(j.at("val_ssim")), metric_from_json(j.at("val_msssim"))});
            } else if (j.contains("step")) {
                throw std::runtime_error("step record without losses");
            }
        } catch (const std::exception& e) {
            out.bad_lines.emplace_back(lineno, e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Minimal line-plot rasteriser

class Canvas {
public:
    Canvas(int w, int h) : img_{h, w, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3, 255)} {}

    void set(int x, int y, std::array<std::uint8_t, 3> c) {
        if (x < 0 || y < 0 || x >= img_.width || y >= img_.height) return;
        for (int k = 0; k < 3; ++k) img_.at(y, x, k) = c[static_cast<std::size_t>(k)];
    }

    void line(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        while (true) {
            set(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const int e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }

    const Rgb8Image& image() const { return img_; }

private:
    Rgb8Image img_;
};

/// Plots y against x inside a framed area with quarter grid lines.
inline Rgb8Image render_plot(const std::vector<double>& xs, const std::vector<double>& ys, bool log_y, int w = 640,
                             int h = 400) {
    Canvas cv(w, h);
    const int l = 40, r = w - 20, t = 20, b = h - 40;
    const std::array<std::uint8_t, 3> grid{225, 225, 225}, axis{0, 0, 0}, ink{200, 30, 30};
    for (int q = 1; q < 4; ++q) {
        cv.line(l + (r - l) * q / 4, t, l + (r - l) * q / 4, b, grid);
        cv.line(l, t + (b - t) * q / 4, r, t + (b - t) * q / 4, grid);
    }
    cv.line(l, t, r, t, axis);
    cv.line(l, b, r, b, axis);
    cv.line(l, t, l, b, axis);
    cv.line(r, t, r, b, axis);
    if (xs.size() < 1 || xs.size() != ys.size()) return cv.image();
    auto ty = [&](double v) { return log_y ? std::log10(std::max(v, 1e-12)) : v; };
    double x0 = xs.front(), x1 = xs.front(), y0 = ty(ys.front()), y1 = y0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        x0 = std::min(x0, xs[i]);
        x1 = std::max(x1, xs[i]);
        y0 = std::min(y0, ty(ys[i]));
        y1 = std::max(y1, ty(ys[i]));
    }
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    auto px = [&](double x) { return l + static_cast<int>(std::lround((x - x0) / (x1 - x0) * (r - l))); };
    auto py = [&](double y) { return b - static_cast<int>(std::lround((ty(y) - y0) / (y1 - y0) * (b - t))); };
    for (std::size_t i = 1; i < xs.size(); ++i) cv.line(px(xs[i - 1]), py(ys[i - 1]), px(xs[i]), py(ys[i]), ink);
    if (xs.size() == 1) cv.set(px(xs[0]), py(ys[0]), ink);
    return cv.image();
}

// ---------------------------------------------------------------------------
// Artefacts

inline std::string lr_curve_csv(const ParsedLog& log) {
    std::ostringstream os;
    os << "step,level,lr\n" << std::setprecision(17);
    for (const auto& s : log.steps) os << s.step << ',' << s.level << ',' << s.lr << '\n';
    return os.str();
}

inline std::string loss_curves_csv(const ParsedLog& log) {
    std::ostringstream os;
    os << "step,level,loss_mse,loss_vgg,loss_msssim,loss_total\n" << std::setprecision(17);
    for (const auto& s : log.steps)
        os << s.step << ',' << s.level << ',' << s.loss_mse << ',' << s.loss_vgg << ',' << s.loss_msssim << ','
           << s.loss_total << '\n';
    return os.str();
}

inline std::string validation_csv(const ParsedLog& log) {
    std::ostringstream os;
    os << "level,epoch,val_psnr,val_ssim,val_msssim\n" << std::setprecision(17);
    for (const auto& e : log.epochs)
        os << e.level << ',' << e.epoch << ',' << e.val_psnr << ',' << e.val_ssim << ',' << e.val_msssim << '\n';
    return os.str();
}

/// Per-level parameter counts and GMACs for each variant at a mosaic size.
inline std::string param_flop_table(const std::vector<std::pair<std::string, ModelConfig>>& variants, int mosaic_size) {
    std::ostringstream os;
    os << "parameters and multiply-accumulates at " << mosaic_size << "x" << mosaic_size << " mosaic\n";
    for (const auto& [label, cfg] : variants) {
        os << '\n' << label << " (base_width " << cfg.base_width << ")\n";
        os << std::left << std::setw(8) << "level" << std::right << std::setw(14) << "params" << std::setw(14) << "GMACs" << '\n';
        std::size_t tp = 0;
        double tm = 0;
        for (const auto& row : model_costs(cfg, mosaic_size, mosaic_size)) {
            os << std::left << std::setw(8) << row.level << std::right << std::setw(14) << row.params << std::setw(14)
               << std::fixed << std::setprecision(3) << row.macs / 1e9 << '\n';
            os.unsetf(std::ios::fixed);
            tp += row.params;
            tm += row.macs;
        }
        os << std::left << std::setw(8) << "total" << std::right << std::setw(14) << tp << std::setw(14) << std::fixed
           << std::setprecision(3) << tm / 1e9 << '\n';
        os.unsetf(std::ios::fixed);
    }
    return os.str();
}

struct ReportFiles {
    std::vector<std::filesystem::path> written;
    std::vector<std::pair<int, std::string>> bad_lines;
};

inline void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream os(p, std::ios::trunc);
    if (!os) throw IoError("cannot write '" + p.string() + "'");
    os << s;
}

/// CSVs and plots from a training log into out_dir.
inline ReportFiles write_training_report(const std::filesystem::path& log_path, const std::filesystem::path& out_dir) {
    std::ifstream is(log_path);
    if (!is) throw IoError("cannot open training log '" + log_path.string() + "'");
    const auto log = parse_training_log(is);
    std::filesystem::create_directories(out_dir);
    ReportFiles rf;
    rf.bad_lines = log.bad_lines;
    auto emit = [&](const std::string& name, const std::string& body) {
        write_text(out_dir / name, body);
        rf.written.push_back(out_dir / name);
    };
    emit("lr_curve.csv", lr_curve_csv(log));
    emit("loss_curves.csv", loss_curves_csv(log));
    emit("validation.csv", validation_csv(log));

    std::vector<double> xs, lrs;
    for (const auto& s : log.steps) {
        xs.push_back(static_cast<double>(s.step));
        lrs.push_back(s.lr);
    }
    png::write_rgb8(out_dir / "lr_curve.png", render_plot(xs, lrs, false));
    rf.written.push_back(out_dir / "lr_curve.png");
    std::map<int, std::pair<std::vector<double>, std::vector<double>>> per_level;
    for (const auto& s : log.steps) {
        per_level[s.level].first.push_back(static_cast<double>(s.step));
        per_level[s.level].second.push_back(s.loss_total);
    }
    for (const auto& [lvl, series] : per_level) {
        const auto p = out_dir / ("loss_level" + std::to_string(lvl) + ".png");
        png::write_rgb8(p, render_plot(series.first, series.second, true));
        rf.written.push_back(p);
    }
    return rf;
}

}  // namespace pyramid_isp
