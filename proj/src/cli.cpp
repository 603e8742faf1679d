#include "cafenet/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "cafenet/datasets.hpp"
#include "cafenet/episodes.hpp"
#include "cafenet/evaluator.hpp"
#include "cafenet/image_io.hpp"
#include "cafenet/model.hpp"
#include "cafenet/plot.hpp"
#include "cafenet/trainer.hpp"

namespace cafenet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidInput: return 2;
    case ErrorKind::MissingSource: return 3;
    case ErrorKind::EmptyInput: return 4;
    case ErrorKind::InvalidSource: return 5;
    case ErrorKind::BuildError: return 6;
    case ErrorKind::Schema: return 7;
    case ErrorKind::Overlap: return 8;
    case ErrorKind::Shape: return 9;
    case ErrorKind::Config: return 10;
    case ErrorKind::Numeric: return 11;
    case ErrorKind::Sampling: return 12;
    case ErrorKind::Corruption: return 13;
    case ErrorKind::Version: return 14;
    case ErrorKind::Mismatch: return 15;
    case ErrorKind::Io: return 16;
    }
    return 1;
}

namespace {

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Filled in by each command; becomes the run-manifest record.
struct RunContext {
    json config = json::object();
    std::uint64_t seed = 0;
    json outputs = json::array();
};

std::string key_table() {
    std::string out = "Config keys (key=value in --config files; flags override the file).\n"
                      "Defaults shown for scheme=fse1000; scheme=sbd5i uses episodes=30000 and "
                      "decay_at_episode=28000.\n";
    for (const auto& k : trainer::config_keys()) {
        std::string line = "  " + k.key + " = " + k.default_value;
        if (line.size() < 40) line.resize(40, ' ');
        out += line + "  " + k.help + "\n";
    }
    return out;
}

std::string option_names(const std::string& key) {
    std::string names = "--" + key;
    if (key.find('_') != std::string::npos) {
        std::string dashed = key;
        for (char& c : dashed)
            if (c == '_') c = '-';
        names += ",--" + dashed;
    }
    return names;
}

raster::SoftMask load_soft(const fs::path& path) {
    const io::RawImage raw = io::read_png(path);
    raster::SoftMask out(raw.height, raw.width);
    for (std::size_t i = 0; i < out.size(); ++i)
        out.values()[i] = raw.samples[i * static_cast<std::size_t>(raw.channels)] / 255.0;
    return out;
}

template <typename T>
raster::Grid<T> crop(const raster::Grid<T>& g, int height, int width) {
    raster::Grid<T> out(height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            out(y, x) = g(y, x);
    return out;
}

// ---- build-dataset / make-synthetic --------------------------------------------------

struct BuildArgs {
    std::string scheme;
    std::string source;
    std::string out;
    int split_index = 0;
    std::uint64_t seed = 0;
    std::optional<int> thickness;
    std::string name;
};

void cmd_build_dataset(const BuildArgs& a, RunContext& ctx) {
    datasets::SplitSpec spec;
    spec.scheme = datasets::parse_scheme(a.scheme);
    spec.split_index = a.split_index;
    spec.seed = a.seed;
    datasets::BuildOptions options;
    options.thickness = a.thickness;
    options.name = a.name;
    ctx.seed = a.seed;
    ctx.config = {{"scheme", a.scheme}, {"source", a.source}, {"out", a.out},
                  {"split_index", a.split_index}, {"seed", a.seed}};
    if (a.thickness) ctx.config["thickness"] = *a.thickness;
    const auto manifest = spec.scheme == datasets::Scheme::Fse1000
                              ? datasets::build_fse1000(a.source, a.out, spec, options)
                              : datasets::build_sbd5i(a.source, a.out, spec, options);
    ctx.outputs.push_back((fs::path(a.out) / "manifest.jsonl").string());
    std::cout << "manifest " << (fs::path(a.out) / "manifest.jsonl").string() << ": "
              << manifest.classes_with_role(datasets::Role::Train).size() << " train / "
              << manifest.classes_with_role(datasets::Role::Test).size() << " test classes\n";
}

// ---- train -----------------------------------------------------------------------------------

struct TrainArgs {
    std::string manifest;
    std::string config_file;
    bool fresh = false;
    std::string variant;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
};

void cmd_train(const TrainArgs& a, RunContext& ctx) {
    const auto manifest = datasets::load_manifest(a.manifest);
    trainer::KeyValues entries = {{"scheme", std::string(datasets::to_string(manifest.scheme))},
                                  {"split_index", std::to_string(manifest.split_index)}};
    if (!a.config_file.empty())
        for (auto& kv : trainer::read_config_file(a.config_file))
            entries.push_back(kv);
    if (!a.variant.empty()) entries.emplace_back("variant", a.variant);
    for (const auto& [key, opt] : a.options)
        if (opt->count() > 0)
            entries.emplace_back(key == "shots" ? "shots_eval" : key, a.values.at(key));
    const trainer::TrainConfig config = trainer::build_config(entries).resolved();
    ctx.config = config.to_map();
    ctx.config["manifest"] = a.manifest;
    ctx.seed = config.seed;
    trainer::RunOptions options;
    options.resume = !a.fresh;
    const auto result = trainer::run(config, manifest, options);
    ctx.outputs.push_back(result.checkpoint.string());
    ctx.outputs.push_back((fs::path(config.out_dir) / "train_log.jsonl").string());
    std::cout << "trained " << result.episodes_done << " episodes; checkpoint "
              << result.checkpoint.string() << "\n";
}

// ---- evaluate ------------------------------------------------------------------------------------

struct EvalArgs {
    std::string checkpoint;
    std::string manifest;
    std::string config_file;
    long episodes = 1000;
    std::uint64_t seed = 0;
    int shots = 0;
    int n_way = 0;
    int n_query = 0;
    std::string out;
    std::string csv;
};

void cmd_evaluate(const EvalArgs& a, RunContext& ctx) {
    const auto manifest = datasets::load_manifest(a.manifest);
    std::optional<model::ModelConfig> expected;
    if (!a.config_file.empty())
        expected = trainer::build_config(trainer::read_config_file(a.config_file)).model;
    const auto header = trainer::load_checkpoint(a.checkpoint, expected ? &*expected : nullptr);
    auto from_train = [&](const std::string& key, int fallback) {
        auto it = header.train.find(key);
        return it == header.train.end() ? fallback : std::stoi(it->second);
    };
    evaluator::EvalOptions options;
    options.protocol = {a.n_way > 0 ? a.n_way : from_train("n_way", 1),
                        a.shots > 0 ? a.shots : from_train("shots_eval", 5),
                        a.n_query > 0 ? a.n_query : from_train("n_query", 1)};
    options.n_episodes = a.episodes;
    options.seed = a.seed;
    const auto report = evaluator::evaluate_checkpoint(a.checkpoint, manifest, options,
                                                       expected ? &*expected : nullptr);
    const fs::path out = a.out.empty() ? fs::path(a.checkpoint).parent_path() / "report.json" : fs::path(a.out);
    const fs::path csv = a.csv.empty() ? fs::path(out).replace_extension(".csv") : fs::path(a.csv);
    evaluator::write_report(out, report);
    evaluator::write_pr_csv(csv, report.curve);
    ctx.seed = a.seed;
    ctx.config = {{"checkpoint", a.checkpoint}, {"manifest", a.manifest}, {"episodes", a.episodes},
                  {"seed", a.seed}, {"n_way", options.protocol.n_classes},
                  {"shots", options.protocol.n_support}, {"n_query", options.protocol.n_query}};
    ctx.outputs.push_back(out.string());
    ctx.outputs.push_back(csv.string());
    std::printf("MF(ODS) %.4f  AP %.4f  (%ld episodes, threshold %.4f)\n", report.mf_ods, report.ap,
                report.episodes, report.ods_threshold);
}

// ---- predict -------------------------------------------------------------------------------------

struct PredictArgs {
    std::string checkpoint;
    std::vector<std::string> support;
    std::vector<std::string> support_seg;
    std::vector<std::string> support_edge;
    std::vector<std::string> query;
    std::vector<std::string> query_edge;
    std::string manifest;
    std::string class_name;
    int shots = 5;
    int queries = 1;
    std::uint64_t seed = 0;
    std::string out = "predictions";
};

struct QueryInfo {
    std::string stem;
    std::string image;
    std::string edge; // ground truth, may be empty
};

episodes::Sample file_sample(const std::string& image, const std::string& seg, const std::string& edge) {
    episodes::Sample s;
    s.sample = fs::path(image).stem().string();
    s.image = io::load_image(image);
    const int h = s.image.height(), w = s.image.width();
    if (!seg.empty()) {
        s.seg = io::load_mask(seg);
        s.edge = edge.empty() ? raster::extract_boundary(s.seg, datasets::kFseThickness) : io::load_mask(edge);
    } else if (!edge.empty()) {
        s.edge = io::load_mask(edge);
        s.seg = raster::fill_interior(s.edge);
    } else {
        s.seg = raster::BinaryMask(h, w, 0);
        s.edge = raster::BinaryMask(h, w, 0);
    }
    require(s.seg.height() == h && s.seg.width() == w && s.edge.same_shape(s.seg), ErrorKind::Shape,
            "labels of " + image + " do not match the image size");
    s.valid = {0, 0, h, w};
    return s;
}

void cmd_predict(const PredictArgs& a, RunContext& ctx) {
    auto ck = trainer::load_checkpoint(a.checkpoint);
    const model::CafeNet& net = *ck.net;
    episodes::Episode episode;
    episodes::ClassEpisode cls;
    std::vector<QueryInfo> infos;
    std::optional<datasets::DatasetManifest> manifest;

    if (!a.manifest.empty()) {
        manifest = datasets::load_manifest(a.manifest);
        std::size_t ci = manifest->classes.size();
        for (std::size_t i = 0; i < manifest->classes.size(); ++i) {
            const auto& c = manifest->classes[i];
            if (a.class_name.empty() ? c.role == datasets::Role::Test : c.name == a.class_name) {
                ci = i;
                break;
            }
        }
        require(ci < manifest->classes.size(), ErrorKind::InvalidInput,
                a.class_name.empty() ? "manifest has no test classes" : "class '" + a.class_name + "' not in manifest");
        const auto& entry = manifest->classes[ci];
        const std::size_t need = static_cast<std::size_t>(a.shots + a.queries);
        require(entry.records.size() >= need, ErrorKind::Sampling,
                "class '" + entry.name + "' has fewer than " + std::to_string(need) + " samples");
        Rng rng(episodes::episode_seed(a.seed, 0));
        std::vector<std::size_t> order(entry.records.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        for (std::size_t i = 0; i < need; ++i)
            std::swap(order[i], order[i + uniform_index(rng, order.size() - i)]);
        episodes::SampleLoader loader(*manifest);
        cls.class_name = entry.name;
        for (std::size_t i = 0; i < need; ++i) {
            const auto& s = loader.get(ci, order[i]);
            if (i < static_cast<std::size_t>(a.shots)) {
                cls.support.push_back(s);
            } else {
                cls.query.push_back(s);
                const auto& rec = entry.records[order[i]];
                infos.push_back({entry.name + "_" + rec.sample, manifest->resolve(rec.image).string(),
                                 manifest->resolve(rec.edge).string()});
            }
        }
    } else {
        require(!a.support.empty() && !a.query.empty(), ErrorKind::InvalidInput,
                "predict needs --support and --query images (or --manifest)");
        require(a.support_seg.empty() || a.support_seg.size() == a.support.size(), ErrorKind::InvalidInput,
                "--support-seg must be given once per --support image");
        require(a.support_edge.empty() || a.support_edge.size() == a.support.size(), ErrorKind::InvalidInput,
                "--support-edge must be given once per --support image");
        require(!a.support_seg.empty() || !a.support_edge.empty(), ErrorKind::InvalidInput,
                "support labels missing: give --support-seg or --support-edge");
        require(a.query_edge.empty() || a.query_edge.size() == a.query.size(), ErrorKind::InvalidInput,
                "--query-edge must be given once per --query image");
        for (const auto* list : {&a.support, &a.support_seg, &a.support_edge, &a.query, &a.query_edge})
            for (const auto& p : *list)
                require(fs::exists(p), ErrorKind::MissingSource, "input not found: " + p);
        cls.class_name = "support";
        for (std::size_t i = 0; i < a.support.size(); ++i)
            cls.support.push_back(file_sample(a.support[i], a.support_seg.empty() ? "" : a.support_seg[i],
                                              a.support_edge.empty() ? "" : a.support_edge[i]));
        for (std::size_t i = 0; i < a.query.size(); ++i) {
            const std::string edge = a.query_edge.empty() ? "" : a.query_edge[i];
            auto s = file_sample(a.query[i], "", edge);
            cls.query.push_back(std::move(s));
            infos.push_back({fs::path(a.query[i]).stem().string(), fs::absolute(a.query[i]).string(),
                             edge.empty() ? "" : fs::absolute(edge).string()});
        }
    }
    episode.classes.push_back(std::move(cls));
    const auto batch = episodes::derive_soft_labels(episode);
    const auto output = net.forward_class(batch.classes.front());

    const fs::path out_dir = a.out;
    fs::create_directories(out_dir);
    for (std::size_t q = 0; q < output.queries.size(); ++q) {
        const auto& qo = output.queries[q];
        const auto& item = batch.classes.front().query[q];
        const int h = item.canvas.height, w = item.canvas.width;
        const auto mask_full = raster::upsample_bilinear(episodes::tensor_to_soft(qo.mask->value), batch.height, batch.width);
        raster::SoftMask attention(batch.height, batch.width, 0.0);
        if (qo.attention[0])
            for (std::size_t i = 0; i < attention.size(); ++i)
                attention.values()[i] = std::min(1.0, qo.attention[0]->value.data[i] / 2.0);
        const auto edge = episodes::tensor_to_soft(qo.edge->value);
        const std::string& stem = infos[q].stem;
        io::save_soft_mask(out_dir / (stem + ".mask.png"), crop(mask_full, h, w));
        io::save_soft_mask(out_dir / (stem + ".attention.png"), crop(attention, h, w));
        io::save_soft_mask(out_dir / (stem + ".edge.png"), crop(edge, h, w));
        const json sidecar = {{"query_image", infos[q].image},
                              {"ground_truth_edge", infos[q].edge},
                              {"mask", stem + ".mask.png"},
                              {"attention", stem + ".attention.png"},
                              {"edge", stem + ".edge.png"},
                              {"threshold", 0.5},
                              {"class", batch.classes.front().class_name},
                              {"checkpoint", a.checkpoint}};
        std::ofstream(out_dir / (stem + ".predict.json")) << sidecar.dump(2) << "\n";
        for (const char* suffix : {".mask.png", ".attention.png", ".edge.png", ".predict.json"})
            ctx.outputs.push_back((out_dir / (stem + suffix)).string());
    }
    ctx.seed = a.seed;
    ctx.config = {{"checkpoint", a.checkpoint}, {"out", a.out}, {"shots", a.shots}, {"seed", a.seed}};
    if (manifest) ctx.config["manifest"] = a.manifest;
    std::cout << "wrote " << output.queries.size() << " prediction set(s) to " << out_dir.string() << "\n";
}

// ---- plots ----------------------------------------------------------------------------------------

void cmd_plot_pr(const std::vector<std::string>& reports, const std::vector<std::string>& labels,
                 const std::string& out, RunContext& ctx) {
    require(!reports.empty(), ErrorKind::EmptyInput, "plot-pr: no reports given");
    std::vector<plot::Series> series;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto r = evaluator::read_report(reports[i]);
        require(!r.curve.points.empty(), ErrorKind::EmptyInput, "report has no PR curve: " + reports[i]);
        series.push_back({i < labels.size() ? labels[i] : (r.variant.empty() ? "model" : r.variant), r.curve});
    }
    plot::plot_pr(out, series);
    ctx.config = {{"reports", reports}, {"out", out}};
    ctx.outputs.push_back(out);
}

void cmd_plot_overlays(const std::string& dir, const std::string& out, std::optional<double> threshold,
                       RunContext& ctx) {
    require(fs::is_directory(dir), ErrorKind::MissingSource, "prediction directory not found: " + dir);
    std::vector<fs::path> sidecars;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > 13 && name.compare(name.size() - 13, 13, ".predict.json") == 0)
            sidecars.push_back(entry.path());
    }
    std::sort(sidecars.begin(), sidecars.end());
    require(!sidecars.empty(), ErrorKind::EmptyInput, "no *.predict.json files in " + dir);
    const fs::path out_dir = out.empty() ? fs::path(dir) : fs::path(out);
    fs::create_directories(out_dir);
    for (const auto& path : sidecars) {
        json j;
        try {
            j = json::parse(std::ifstream(path));
        } catch (const json::exception& e) {
            fail(ErrorKind::Schema, "cannot parse " + path.string() + ": " + e.what());
        }
        const auto image = io::load_image(j.at("query_image").get<std::string>());
        const auto edge = load_soft(path.parent_path() / j.at("edge").get<std::string>());
        std::optional<raster::BinaryMask> gt;
        const std::string gt_path = j.value("ground_truth_edge", "");
        if (!gt_path.empty()) gt = io::load_mask(gt_path);
        std::string stem = path.filename().string();
        stem.resize(stem.size() - 13);
        const fs::path target = out_dir / (stem + ".overlay.png");
        plot::plot_overlay(target, image, edge, gt ? &*gt : nullptr,
                           threshold.value_or(j.value("threshold", 0.5)));
        ctx.outputs.push_back(target.string());
    }
    ctx.config = {{"dir", dir}, {"out", out_dir.string()}};
    std::cout << "wrote " << sidecars.size() << " overlay(s) to " << out_dir.string() << "\n";
}

void append_record(const fs::path& path, const json& record) {
    if (path.empty()) return;
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::app);
    if (out)
        out << record.dump() << "\n";
}

} // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"Few-shot semantic edge detection: dataset building, training, evaluation, plots."};
    app.require_subcommand(1);
    const char* env_log = std::getenv("CAFENET_RUN_LOG");
    std::string run_log = env_log ? env_log : "cafenet_runs.jsonl";
    app.add_option("--run-log", run_log, "run-manifest file (one JSON record per command); env CAFENET_RUN_LOG")
        ->capture_default_str();
    const std::string keys = key_table();

    // make-synthetic
    datasets::SyntheticSpec synth;
    std::string synth_out;
    auto* make_synth = app.add_subcommand("make-synthetic", "write a synthetic shapes source (FSE layout)");
    make_synth->add_option("--out", synth_out, "source directory to create")->required();
    make_synth->add_option("--classes", synth.classes, "number of classes")->capture_default_str();
    make_synth->add_option("--samples", synth.samples_per_class, "images per class")->capture_default_str();
    make_synth->add_option("--size", synth.size, "image side in pixels")->capture_default_str();
    make_synth->add_option("--distractor", synth.distractor_probability, "probability of a distractor shape")
        ->capture_default_str();
    make_synth->add_option("--seed", synth.seed, "generator seed")->capture_default_str();

    // build-dataset
    BuildArgs build;
    int thickness = 0;
    auto* build_cmd = app.add_subcommand("build-dataset", "build an edge dataset and its manifest");
    build_cmd->add_option("--scheme", build.scheme, "fse1000 or sbd5i")->required();
    build_cmd->add_option("--source", build.source, "source directory")->required();
    build_cmd->add_option("--out", build.out, "output directory")->required();
    build_cmd->add_option("--split-index,--split_index", build.split_index, "sbd5i split 0..3")->capture_default_str();
    build_cmd->add_option("--seed", build.seed, "fse1000 class-partition seed")->capture_default_str();
    auto* thickness_opt = build_cmd->add_option("--thickness", thickness,
                                                "edge thickness (default 2 for fse1000, 3 for sbd5i)");
    build_cmd->add_option("--name", build.name, "dataset name");

    // train
    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "episodic meta-training");
    train_cmd->add_option("--manifest", train.manifest, "dataset manifest.jsonl")->required();
    train_cmd->add_option("--config", train.config_file, "key=value config file");
    train_cmd->add_option("--variant", train.variant, "baseline, seg, seg_att or seg_att_msmr (flags below override)");
    train_cmd->add_flag("--fresh", train.fresh, "ignore an existing latest.ckpt in out_dir");
    for (const auto& k : trainer::config_keys()) {
        train.values[k.key] = "";
        train.options[k.key] = train_cmd->add_option(option_names(k.key), train.values[k.key], k.help)
                                   ->default_str(k.default_value);
    }
    train.values["shots"] = "";
    train.options["shots"] = train_cmd->add_option("--shots", train.values["shots"], "alias of --shots_eval");
    train_cmd->footer(keys);

    // evaluate
    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("evaluate", "strict zero-tolerance evaluation on test classes");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
    eval_cmd->add_option("--manifest", eval.manifest, "dataset manifest.jsonl")->required();
    eval_cmd->add_option("--config", eval.config_file, "expected model config; mismatching fields are reported");
    eval_cmd->add_option("--episodes", eval.episodes, "test episodes")->capture_default_str();
    eval_cmd->add_option("--seed", eval.seed, "episode seed")->capture_default_str();
    eval_cmd->add_option("--shots", eval.shots, "support shots (default: checkpoint shots_eval)");
    eval_cmd->add_option("--n-way,--n_way", eval.n_way, "classes per episode (default: checkpoint)");
    eval_cmd->add_option("--n-query,--n_query", eval.n_query, "queries per class (default: checkpoint)");
    eval_cmd->add_option("--out", eval.out, "report JSON (default: <checkpoint dir>/report.json)");
    eval_cmd->add_option("--csv", eval.csv, "PR table CSV (default: report path with .csv)");
    eval_cmd->footer(keys);

    // predict
    PredictArgs predict;
    auto* predict_cmd = app.add_subcommand("predict", "segmentation, attention and edge maps for query images");
    predict_cmd->add_option("--checkpoint", predict.checkpoint, "checkpoint file")->required();
    predict_cmd->add_option("--support", predict.support, "support image (repeat per shot)");
    predict_cmd->add_option("--support-seg", predict.support_seg, "support segmentation mask (repeat)");
    predict_cmd->add_option("--support-edge", predict.support_edge, "support edge label (repeat); filled when no mask");
    predict_cmd->add_option("--query", predict.query, "query image (repeatable)");
    predict_cmd->add_option("--query-edge", predict.query_edge, "query ground-truth edges for overlays (repeat)");
    predict_cmd->add_option("--manifest", predict.manifest, "sample the episode from a manifest instead");
    predict_cmd->add_option("--class", predict.class_name, "manifest class (default: first test class)");
    predict_cmd->add_option("--shots", predict.shots, "support shots when sampling")->capture_default_str();
    predict_cmd->add_option("--queries", predict.queries, "queries when sampling")->capture_default_str();
    predict_cmd->add_option("--seed", predict.seed, "sampling seed")->capture_default_str();
    predict_cmd->add_option("--out", predict.out, "output directory")->capture_default_str();
    predict_cmd->footer(keys);

    // plots
    std::vector<std::string> reports, labels;
    std::string pr_out = "pr_curve.png";
    auto* plot_pr_cmd = app.add_subcommand("plot-pr", "PR-curve image from evaluation reports");
    plot_pr_cmd->add_option("--report", reports, "report JSON (repeatable)")->required();
    plot_pr_cmd->add_option("--label", labels, "legend label per report");
    plot_pr_cmd->add_option("--out", pr_out, "output PNG")->capture_default_str();

    std::string overlay_dir, overlay_out;
    double overlay_threshold = 0.5;
    auto* plot_ov_cmd = app.add_subcommand("plot-overlays", "overlay images from a predict output directory");
    plot_ov_cmd->add_option("--dir", overlay_dir, "directory with *.predict.json")->required();
    plot_ov_cmd->add_option("--out", overlay_out, "output directory (default: --dir)");
    auto* threshold_opt = plot_ov_cmd->add_option("--threshold", overlay_threshold, "edge binarisation threshold");

    RunContext ctx;
    json record = {{"started_at", iso_now()}};
    std::vector<std::string> args(argv, argv + argc);
    record["argv"] = args;
    int code = 0;
    std::string error;
    try {
        try {
            app.parse(argc, argv);
        } catch (const CLI::CallForHelp& e) {
            return app.exit(e);
        } catch (const CLI::CallForAllHelp& e) {
            return app.exit(e);
        } catch (const CLI::ParseError& e) {
            app.exit(e);
            fail(ErrorKind::InvalidInput, e.what());
        }
        const std::string command = app.get_subcommands().front()->get_name();
        record["command"] = command;
        if (command == "make-synthetic") {
            datasets::write_synthetic_source(synth_out, synth);
            ctx.seed = synth.seed;
            ctx.config = {{"out", synth_out}, {"classes", synth.classes}, {"samples", synth.samples_per_class},
                          {"size", synth.size}, {"distractor", synth.distractor_probability}, {"seed", synth.seed}};
            ctx.outputs.push_back(synth_out);
        } else if (command == "build-dataset") {
            if (thickness_opt->count() > 0) build.thickness = thickness;
            cmd_build_dataset(build, ctx);
        } else if (command == "train") {
            cmd_train(train, ctx);
        } else if (command == "evaluate") {
            cmd_evaluate(eval, ctx);
        } else if (command == "predict") {
            cmd_predict(predict, ctx);
        } else if (command == "plot-pr") {
            cmd_plot_pr(reports, labels, pr_out, ctx);
        } else if (command == "plot-overlays") {
            cmd_plot_overlays(overlay_dir, overlay_out,
                              threshold_opt->count() > 0 ? std::optional<double>(overlay_threshold) : std::nullopt, ctx);
        }
    } catch (const Error& e) {
        code = exit_code(e.kind());
        error = std::string(to_string(e.kind())) + ": " + e.what();
        std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    } catch (const std::exception& e) {
        code = 1;
        error = e.what();
        std::cerr << "error: " << e.what() << "\n";
    }
    if (!record.contains("command")) record["command"] = nullptr;
    record["config"] = ctx.config;
    record["seed"] = ctx.seed;
    record["outputs"] = ctx.outputs;
    record["finished_at"] = iso_now();
    record["exit_code"] = code;
    if (!error.empty()) record["error"] = error;
    append_record(run_log, record);
    return code;
}

} // namespace cafenet::cli
