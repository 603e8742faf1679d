#pragma once

// Zero-tolerance edge evaluation: per-threshold confusion counts pooled over
// episodes, MF at the optimal dataset scale and average precision.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "cafenet/datasets.hpp"
#include "cafenet/episodes.hpp"
#include "cafenet/model.hpp"
#include "cafenet/raster.hpp"

namespace cafenet::evaluator {

namespace fs = std::filesystem;

inline constexpr int kThresholds = 256; // t_k = k / 256, k = 0..255

struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;

    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Positives are pred > t; positives outside `valid` count as fp.
ConfusionCounts confusion_at_threshold(const raster::SoftMask& pred, const raster::BinaryMask& gt,
                                       double t, const raster::Rect& valid);

/// Counts at every grid threshold in one pass (cumulative histogram).
std::vector<ConfusionCounts> threshold_counts(const raster::SoftMask& pred,
                                              const raster::BinaryMask& gt,
                                              const raster::Rect& valid);

struct PRPoint {
    double threshold = 0.0;
    double precision = 1.0;
    double recall = 0.0;
    ConfusionCounts counts;
};

struct PRCurve {
    std::vector<PRPoint> points; // ascending threshold
};

/// Pools counts over episodes, then P = tp/(tp+fp) (1 when empty) and
/// R = tp/(tp+fn) (0 when empty).
PRCurve aggregate_pr(const std::vector<std::vector<ConfusionCounts>>& episode_counts);
PRCurve curve_from_counts(const std::vector<ConfusionCounts>& pooled);

struct OdsPoint {
    double f = 0.0;
    double threshold = 0.0;
    std::size_t index = 0;
};

OdsPoint ods(const PRCurve& curve);
double mf_ods(const PRCurve& curve);
/// sum_i (r_i - r_{i-1}) p_i with thresholds swept from high to low, r_0 = 0.
double average_precision(const PRCurve& curve);

/// Per-class, per-query edge probabilities on the batch canvas.
using EdgePredictor =
    std::function<std::vector<std::vector<raster::SoftMask>>(const episodes::EpisodeBatch&)>;

struct EvalOptions {
    episodes::Protocol protocol;
    long n_episodes = 1000;
    std::uint64_t seed = 0;
};

struct MetricsReport {
    double ap = 0.0;
    double mf_ods = 0.0;
    double ods_threshold = 0.0;
    long episodes = 0;
    std::string scheme;
    int split_index = 0;
    episodes::Protocol protocol;
    std::uint64_t seed = 0;
    std::string variant;
    PRCurve curve;
};

MetricsReport evaluate(const EdgePredictor& predictor, const datasets::DatasetManifest& manifest,
                       const EvalOptions& options);

/// Loads the checkpoint and checks it against the manifest's scheme and
/// split, and against `expected` when given.
MetricsReport evaluate_checkpoint(const fs::path& checkpoint,
                                  const datasets::DatasetManifest& manifest,
                                  const EvalOptions& options,
                                  const model::ModelConfig* expected = nullptr);

std::string report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const std::string& text);
void write_report(const fs::path& path, const MetricsReport& report);
MetricsReport read_report(const fs::path& path);
void write_pr_csv(const fs::path& path, const PRCurve& curve);

} // namespace cafenet::evaluator
