#include "cafenet/evaluator.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cafenet/model.hpp"
#include "cafenet/trainer.hpp"

namespace cafenet::evaluator {

using nlohmann::json;
using raster::BinaryMask;
using raster::Rect;
using raster::SoftMask;

namespace {

template <typename T>
raster::Grid<T> crop(const raster::Grid<T>& g, int height, int width) {
    if (g.height() == height && g.width() == width)
        return g;
    raster::Grid<T> out(height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            out(y, x) = g(y, x);
    return out;
}

/// Number of grid thresholds k with s > k/256, i.e. ceil(256 s) clamped to [0, 256].
int positive_bins(double s) {
    if (!(s > 0.0)) return 0;
    const double scaled = std::ceil(s * kThresholds);
    return scaled >= kThresholds ? kThresholds : static_cast<int>(scaled);
}

void check_shapes(const SoftMask& pred, const BinaryMask& gt) {
    require(pred.same_shape(gt), ErrorKind::Shape,
            "prediction " + std::to_string(pred.height()) + "x" + std::to_string(pred.width()) +
                " vs ground truth " + std::to_string(gt.height()) + "x" + std::to_string(gt.width()));
}

} // namespace

ConfusionCounts confusion_at_threshold(const SoftMask& pred, const BinaryMask& gt, double t,
                                       const Rect& valid) {
    check_shapes(pred, gt);
    ConfusionCounts c;
    for (int y = 0; y < pred.height(); ++y)
        for (int x = 0; x < pred.width(); ++x) {
            const bool positive = pred(y, x) > t;
            const bool edge = valid.contains(y, x) && gt(y, x) != 0;
            if (positive && edge) ++c.tp;
            else if (positive) ++c.fp;
            else if (edge) ++c.fn;
        }
    return c;
}

std::vector<ConfusionCounts> threshold_counts(const SoftMask& pred, const BinaryMask& gt,
                                              const Rect& valid) {
    check_shapes(pred, gt);
    // hist[b]: pixels positive for exactly the thresholds k < b
    std::vector<std::int64_t> hist_edge(kThresholds + 1, 0), hist_other(kThresholds + 1, 0);
    std::int64_t edges = 0;
    for (int y = 0; y < pred.height(); ++y)
        for (int x = 0; x < pred.width(); ++x) {
            const int b = positive_bins(pred(y, x));
            if (valid.contains(y, x) && gt(y, x) != 0) {
                ++hist_edge[b];
                ++edges;
            } else {
                ++hist_other[b];
            }
        }
    std::vector<ConfusionCounts> out(kThresholds);
    std::int64_t tp = 0, fp = 0;
    for (int k = kThresholds - 1; k >= 0; --k) {
        tp += hist_edge[k + 1];
        fp += hist_other[k + 1];
        out[k] = {tp, fp, edges - tp};
    }
    return out;
}

PRCurve curve_from_counts(const std::vector<ConfusionCounts>& pooled) {
    PRCurve curve;
    for (std::size_t k = 0; k < pooled.size(); ++k) {
        const auto& c = pooled[k];
        PRPoint p;
        p.threshold = static_cast<double>(k) / kThresholds;
        p.counts = c;
        p.precision = c.tp + c.fp > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp) : 1.0;
        p.recall = c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : 0.0;
        curve.points.push_back(p);
    }
    return curve;
}

PRCurve aggregate_pr(const std::vector<std::vector<ConfusionCounts>>& episode_counts) {
    require(!episode_counts.empty(), ErrorKind::InvalidInput, "aggregate_pr: no episodes");
    const std::size_t n = episode_counts.front().size();
    require(n > 0, ErrorKind::InvalidInput, "aggregate_pr: empty threshold grid");
    std::vector<ConfusionCounts> pooled(n);
    for (const auto& ep : episode_counts) {
        require(ep.size() == n, ErrorKind::InvalidInput, "aggregate_pr: inconsistent threshold grids");
        for (std::size_t k = 0; k < n; ++k)
            pooled[k] += ep[k];
    }
    return curve_from_counts(pooled);
}

OdsPoint ods(const PRCurve& curve) {
    OdsPoint best;
    for (std::size_t i = 0; i < curve.points.size(); ++i) {
        const auto& p = curve.points[i];
        const double denom = p.precision + p.recall;
        const double f = denom > 0.0 ? 2.0 * p.precision * p.recall / denom : 0.0;
        if (f > best.f) {
            best = {f, p.threshold, i};
        }
    }
    if (best.f == 0.0 && !curve.points.empty())
        best.threshold = curve.points.front().threshold;
    return best;
}

double mf_ods(const PRCurve& curve) { return ods(curve).f; }

double average_precision(const PRCurve& curve) {
    double ap = 0.0;
    double previous_recall = 0.0;
    for (auto it = curve.points.rbegin(); it != curve.points.rend(); ++it) {
        ap += (it->recall - previous_recall) * it->precision;
        previous_recall = it->recall;
    }
    return ap;
}

MetricsReport evaluate(const EdgePredictor& predictor, const datasets::DatasetManifest& manifest,
                       const EvalOptions& options) {
    require(options.n_episodes >= 1, ErrorKind::InvalidInput, "evaluation needs at least one episode");
    episodes::SampleLoader loader(manifest);
    std::vector<ConfusionCounts> pooled(kThresholds);
    for (long e = 0; e < options.n_episodes; ++e) {
        Rng rng(episodes::episode_seed(options.seed, static_cast<std::uint64_t>(e)));
        auto episode = episodes::sample_episode(loader, datasets::Role::Test, options.protocol, rng);
        episode = episodes::preprocess(std::move(episode), episodes::Mode::Eval, manifest.scheme, rng);
        const auto batch = episodes::derive_soft_labels(episode);
        const auto predictions = predictor(batch);
        require(predictions.size() == batch.classes.size(), ErrorKind::Shape,
                "predictor returned the wrong number of classes");
        for (std::size_t c = 0; c < batch.classes.size(); ++c) {
            require(predictions[c].size() == batch.classes[c].query.size(), ErrorKind::Shape,
                    "predictor returned the wrong number of queries");
            for (std::size_t q = 0; q < predictions[c].size(); ++q) {
                const auto& item = batch.classes[c].query[q];
                const SoftMask pred = crop(predictions[c][q], item.canvas.height, item.canvas.width);
                const BinaryMask gt = crop(raster::threshold(episodes::tensor_to_soft(item.edge), 0.5),
                                           item.canvas.height, item.canvas.width);
                const auto counts = threshold_counts(pred, gt, item.valid);
                for (int k = 0; k < kThresholds; ++k)
                    pooled[k] += counts[k];
            }
        }
    }
    MetricsReport report;
    report.curve = curve_from_counts(pooled);
    const OdsPoint best = ods(report.curve);
    report.mf_ods = best.f;
    report.ods_threshold = best.threshold;
    report.ap = average_precision(report.curve);
    report.episodes = options.n_episodes;
    report.scheme = std::string(datasets::to_string(manifest.scheme));
    report.split_index = manifest.split_index;
    report.protocol = options.protocol;
    report.seed = options.seed;
    return report;
}

MetricsReport evaluate_checkpoint(const fs::path& checkpoint,
                                  const datasets::DatasetManifest& manifest,
                                  const EvalOptions& options,
                                  const model::ModelConfig* expected) {
    auto ck = trainer::load_checkpoint(checkpoint, expected);
    std::vector<std::string> mismatched;
    auto check = [&](const std::string& key, const std::string& expected) {
        auto it = ck.train.find(key);
        if (it != ck.train.end() && it->second != expected)
            mismatched.push_back(key + " (checkpoint " + it->second + ", manifest " + expected + ")");
    };
    check("scheme", std::string(datasets::to_string(manifest.scheme)));
    if (manifest.scheme == datasets::Scheme::Sbd5i)
        check("split_index", std::to_string(manifest.split_index));
    if (!mismatched.empty()) {
        std::string msg = "checkpoint and evaluation protocol disagree:";
        for (const auto& m : mismatched)
            msg += " " + m;
        fail(ErrorKind::Mismatch, msg);
    }
    const model::CafeNet& net = *ck.net;
    const EdgePredictor predictor = [&net](const episodes::EpisodeBatch& batch) {
        std::vector<std::vector<SoftMask>> out;
        for (const auto& c : net.forward(batch)) {
            std::vector<SoftMask> per_query;
            for (const auto& q : c.queries)
                per_query.push_back(episodes::tensor_to_soft(q.edge->value));
            out.push_back(std::move(per_query));
        }
        return out;
    };
    MetricsReport report = evaluate(predictor, manifest, options);
    try {
        report.variant = std::string(model::to_string(net.config().variant()));
    } catch (const Error&) {
        report.variant = "custom";
    }
    return report;
}

std::string report_to_json(const MetricsReport& r) {
    json curve = json::array();
    for (const auto& p : r.curve.points)
        curve.push_back({{"threshold", p.threshold},
                         {"precision", p.precision},
                         {"recall", p.recall},
                         {"tp", p.counts.tp},
                         {"fp", p.counts.fp},
                         {"fn", p.counts.fn}});
    const json j = {
        {"ap", r.ap},
        {"mf_ods", r.mf_ods},
        {"ods_threshold", r.ods_threshold},
        {"episodes", r.episodes},
        {"scheme", r.scheme},
        {"split_index", r.split_index},
        {"protocol", {{"n_way", r.protocol.n_classes}, {"shots", r.protocol.n_support}, {"n_query", r.protocol.n_query}}},
        {"distance_tolerance", 0},
        {"thresholds", kThresholds},
        {"seed", r.seed},
        {"variant", r.variant},
        {"curve", curve},
    };
    return j.dump(2) + "\n";
}

MetricsReport report_from_json(const std::string& text) {
    MetricsReport r;
    try {
        const json j = json::parse(text);
        r.ap = j.at("ap").get<double>();
        r.mf_ods = j.at("mf_ods").get<double>();
        r.ods_threshold = j.at("ods_threshold").get<double>();
        r.episodes = j.at("episodes").get<long>();
        r.scheme = j.at("scheme").get<std::string>();
        r.split_index = j.at("split_index").get<int>();
        r.protocol = {j.at("protocol").at("n_way").get<int>(), j.at("protocol").at("shots").get<int>(),
                      j.at("protocol").at("n_query").get<int>()};
        r.seed = j.at("seed").get<std::uint64_t>();
        r.variant = j.at("variant").get<std::string>();
        for (const auto& p : j.at("curve")) {
            PRPoint pt;
            pt.threshold = p.at("threshold").get<double>();
            pt.precision = p.at("precision").get<double>();
            pt.recall = p.at("recall").get<double>();
            pt.counts = {p.at("tp").get<std::int64_t>(), p.at("fp").get<std::int64_t>(),
                         p.at("fn").get<std::int64_t>()};
            r.curve.points.push_back(pt);
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, std::string("metrics report does not parse: ") + e.what());
    }
    return r;
}

void write_report(const fs::path& path, const MetricsReport& report) {
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write report " + path.string());
    out << report_to_json(report);
}

MetricsReport read_report(const fs::path& path) {
    require(fs::exists(path), ErrorKind::MissingSource, "report not found: " + path.string());
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return report_from_json(ss.str());
}

void write_pr_csv(const fs::path& path, const PRCurve& curve) {
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + path.string());
    out << "threshold,precision,recall,tp,fp,fn\n";
    out.precision(17);
    for (const auto& p : curve.points)
        out << p.threshold << ',' << p.precision << ',' << p.recall << ',' << p.counts.tp << ','
            << p.counts.fp << ',' << p.counts.fn << '\n';
}

} // namespace cafenet::evaluator
