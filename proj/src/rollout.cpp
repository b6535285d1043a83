#include "uxmil/rollout.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace uxmil {

namespace {

void check_stochastic(const Tensor<double>& a) {
    if (a.rank() != 2 || a.dim(0) != a.dim(1))
        throw ValidationError("attention_rollout: layer map must be square, got " +
                              shape_str(a.shape()));
    const std::size_t n = a.dim(0);
    for (std::size_t i = 0; i < n; ++i) {
        double sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (a.at(i * n + j) < -1e-9)
                throw ValidationError("attention_rollout: negative attention weight");
            sum += a.at(i * n + j);
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw ValidationError("attention_rollout: row " + std::to_string(i) +
                                  " sums to " + std::to_string(sum) + ", not 1");
    }
}

}  // namespace

Tensor<double> attention_rollout(const std::vector<Tensor<double>>& attn_per_layer) {
    if (attn_per_layer.empty())
        throw ValidationError("attention_rollout: no attention layers");
    const std::size_t n = attn_per_layer.front().dim(0);

    Tensor<double> result(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) result.data()[i * n + i] = 1.0;

    Tensor<double> tilde(Shape{n, n});
    Tensor<double> next(Shape{n, n});
    for (const auto& layer : attn_per_layer) {
        check_stochastic(layer);
        if (layer.dim(0) != n)
            throw ValidationError("attention_rollout: inconsistent layer sizes");
        // residual correction, then renormalize rows
        for (std::size_t i = 0; i < n; ++i) {
            double sum = 0;
            for (std::size_t j = 0; j < n; ++j) {
                const double v = 0.5 * (layer.at(i * n + j) + (i == j ? 1.0 : 0.0));
                tilde.data()[i * n + j] = v;
                sum += v;
            }
            for (std::size_t j = 0; j < n; ++j) tilde.data()[i * n + j] /= sum;
        }
        // result = tilde * result (layer L applied last ends up leftmost)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double acc = 0;
                for (std::size_t t = 0; t < n; ++t)
                    acc += tilde.at(i * n + t) * result.at(t * n + j);
                next.data()[i * n + j] = acc;
            }
        std::swap(result, next);
    }
    return result;
}

RolloutResult rollout_cls_scores(const std::vector<Tensor<double>>& attn_per_layer) {
    RolloutResult r;
    r.matrix = attention_rollout(attn_per_layer);
    const std::size_t n = r.matrix.dim(0);
    if (n < 2) throw ValidationError("rollout_cls_scores: need CLS plus instances");
    double sum = 0;
    for (std::size_t j = 1; j < n; ++j) sum += r.matrix.at(j);
    if (sum <= 0) throw ValidationError("rollout_cls_scores: degenerate CLS row");
    r.cls_scores.resize(n - 1);
    for (std::size_t j = 1; j < n; ++j) r.cls_scores[j - 1] = r.matrix.at(j) / sum;
    return r;
}

namespace {

void write_svg_barchart(const std::string& path, const std::vector<double>& scores,
                        const std::string& title) {
    const int bar_w = 28, gap = 6, chart_h = 220, margin = 34;
    const int width = margin * 2 + static_cast<int>(scores.size()) * (bar_w + gap);
    const int height = chart_h + margin * 2;
    double max_score = 1e-12;
    for (double s : scores) max_score = std::max(max_score, s);

    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("export_attention: cannot write " + path);
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
       << height << "\">\n";
    os << "  <text x=\"" << margin << "\" y=\"18\" font-size=\"13\">" << title << "</text>\n";
    char buf[256];
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const double h = scores[i] / max_score * chart_h;
        const int x = margin + static_cast<int>(i) * (bar_w + gap);
        const double y = margin + (chart_h - h);
        std::snprintf(buf, sizeof(buf),
                      "  <rect x=\"%d\" y=\"%.2f\" width=\"%d\" height=\"%.2f\" "
                      "fill=\"#4878b0\" data-score=\"%.6f\"/>\n",
                      x, y, bar_w, h, scores[i]);
        os << buf;
        os << "  <text x=\"" << (x + bar_w / 2) << "\" y=\"" << (margin + chart_h + 16)
           << "\" font-size=\"10\" text-anchor=\"middle\">" << (i + 1) << "</text>\n";
    }
    os << "</svg>\n";
}

}  // namespace

void export_attention(const InstanceAttention& result, const std::string& dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    const fs::path base(dir);
    if (!fs::is_directory(base))
        throw IoError("export_attention: not a writable directory: " + dir);

    std::ofstream csv(base / "attention.csv", std::ios::trunc);
    if (!csv) throw IoError("export_attention: cannot write attention.csv in " + dir);
    csv << "episode_id,modality,instance_index,score\n";
    char buf[128];
    auto rows = [&](const std::vector<double>& scores, const char* modality) {
        for (std::size_t i = 0; i < scores.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%s,%s,%zu,%.6f\n",
                          result.episode_id.c_str(), modality, i + 1, scores[i]);
            csv << buf;
        }
    };
    rows(result.patch_scores, "audio");
    rows(result.clip_scores, "vision");
    if (!csv) throw IoError("export_attention: write failure in " + dir);

    if (!result.patch_scores.empty())
        write_svg_barchart((base / (result.episode_id + "_audio.svg")).string(),
                           result.patch_scores, result.episode_id + " audio patches");
    if (!result.clip_scores.empty())
        write_svg_barchart((base / (result.episode_id + "_vision.svg")).string(),
                           result.clip_scores, result.episode_id + " video clips");
}

}  // namespace uxmil
