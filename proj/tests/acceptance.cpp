// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cafenet/evaluator.hpp"
#include "cafenet/losses.hpp"
#include "cafenet/trainer.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cafenet;
using nn::Shape;
using nn::Tensor;
using raster::BinaryMask;
using raster::SoftMask;
using testing::random_binary;
using testing::random_int;
using testing::random_soft;
namespace fs = std::filesystem;

namespace {

/// Collects failures for one criterion.
struct Check {
    std::vector<std::string> failures;
    std::string detail;

    void expect(bool ok, const std::string& what) {
        if (!ok && failures.size() < 5) failures.push_back(what);
        else if (!ok) failures.back() = "... and more";
    }
};

Tensor random_tensor(std::mt19937_64& rng, Shape s, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(s);
    for (double& v : t.data) v = u(rng);
    return t;
}

nn::Var scalar_var(double v) { return nn::constant(Tensor(Shape{}, v)); }

double max_abs_diff(const SoftMask& a, const SoftMask& b) {
    if (!a.same_shape(b)) return INFINITY;
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
    return worst;
}

std::vector<double> pixel(const Tensor& t, std::size_t j) {
    std::vector<double> v(t.shape.c);
    for (int c = 0; c < t.shape.c; ++c) v[c] = t.data[c * t.shape.plane() + j];
    return v;
}

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

/// MF(ODS) of one prediction against its edge label, on the 256-point grid.
double single_mf(const Tensor& pred, const Tensor& edge) {
    const auto counts = evaluator::threshold_counts(episodes::tensor_to_soft(pred),
                                                    raster::threshold(episodes::tensor_to_soft(edge), 0.5),
                                                    {0, 0, pred.shape.h, pred.shape.w});
    return evaluator::mf_ods(evaluator::curve_from_counts(counts));
}

struct Datasets {
    testing::TempDir dir{"acceptance"};
    datasets::DatasetManifest shapes64; // 10 classes, 8 train / 2 test
    datasets::DatasetManifest shapes32;

    Datasets() {
        datasets::SyntheticSpec spec;
        datasets::write_synthetic_source(dir / "src64", spec);
        datasets::SplitSpec split;
        split.seed = 1;
        shapes64 = datasets::build_fse1000(dir / "src64", dir / "data64", split);
        shapes32 = testing::synthetic_dataset(dir / "small", 5, 8, 32, 3);
    }
};

Datasets& data() {
    static Datasets d;
    return d;
}

// ---- 1 ----------------------------------------------------------------------------------

void raster_oracles(Check& c) {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 100; ++trial) {
        const int h = random_int(rng, 1, 16), w = random_int(rng, 1, 16);
        const int r = random_int(rng, 1, 3), t = random_int(rng, 1, 4);
        const SoftMask s = random_soft(rng, h, w);
        const BinaryMask b = random_binary(rng, h, w, 0.3);
        c.expect(raster::dilate(s, raster::StructuringElement{r}) == oracle::dilate(s, r), "dilate soft");
        c.expect(raster::to_soft(raster::dilate(b, raster::StructuringElement{r})) == oracle::dilate(raster::to_soft(b), r),
                 "dilate binary");
        c.expect(raster::extract_boundary(b, t) == oracle::boundary(b, t), "extract_boundary");
        c.expect(raster::fill_interior(b) == oracle::fill(b), "fill_interior");
        const int f = random_int(rng, 1, 4);
        const SoftMask blocks = random_soft(rng, f * random_int(rng, 1, 16 / f), f * random_int(rng, 1, 16 / f));
        c.expect(max_abs_diff(raster::downsample_avg(blocks, f), oracle::block_mean(blocks, f)) <= 1e-6, "downsample");
        const int th = random_int(rng, std::max(h, 2), 16), tw = random_int(rng, std::max(w, 2), 16);
        c.expect(max_abs_diff(raster::upsample_bilinear(s, th, tw), oracle::bilinear(s, th, tw)) <= 1e-6, "upsample");
        for (int q = 0; q < 4; ++q) {
            c.expect(raster::rotate90(b, q) == oracle::rotate(b, q), "rotate binary");
            c.expect(raster::rotate90(s, q) == oracle::rotate(s, q), "rotate soft");
        }
    }
}

// ---- 2 ----------------------------------------------------------------------------------

void metric_head_oracles(Check& c) {
    std::mt19937_64 rng(202);
    model::CafeNet net(model::ModelConfig::tiny());
    for (int trial = 0; trial < 100; ++trial) {
        const int shots = random_int(rng, 1, 5), k = random_int(rng, 1, 4), channels = k * random_int(rng, 1, 6);
        const int h = random_int(rng, 1, 6), w = random_int(rng, 1, 6);
        std::vector<nn::Var> feats;
        std::vector<Tensor> masks;
        std::vector<std::vector<std::vector<double>>> of;
        std::vector<std::vector<double>> om;
        for (int i = 0; i < shots; ++i) {
            feats.push_back(nn::constant(random_tensor(rng, Shape{1, channels, h, w}, -3.0, 3.0)));
            masks.push_back(random_tensor(rng, Shape{1, 1, h, w}, 0.0, 1.0));
            std::vector<std::vector<double>> per_channel(channels);
            for (int ch = 0; ch < channels; ++ch)
                per_channel[ch].assign(feats.back()->value.data.begin() + ch * h * w,
                                       feats.back()->value.data.begin() + (ch + 1) * h * w);
            of.push_back(per_channel);
            om.push_back(masks.back().data);
        }
        const auto protos = net.compute_prototypes(feats, masks);
        const auto fg = oracle::prototype(of, om, true), bg = oracle::prototype(of, om, false);
        for (int ch = 0; ch < channels; ++ch) {
            c.expect(std::abs(protos.fg->value.data[ch] - fg[ch]) <= 1e-6, "prototype fg");
            c.expect(std::abs(protos.bg->value.data[ch] - bg[ch]) <= 1e-6, "prototype bg");
        }
        const Tensor q = random_tensor(rng, Shape{1, channels, h, w}, -3.0, 3.0);
        const std::size_t width = static_cast<std::size_t>(channels / k);
        for (double tau : {0.5, 10.0, 100.0}) {
            const auto p = model::match_probability(nn::constant(q), protos, scalar_var(tau));
            const auto splits = model::split_match_probabilities(nn::constant(q), protos, scalar_var(tau), k);
            for (std::size_t j = 0; j < static_cast<std::size_t>(h * w); ++j) {
                const auto e = pixel(q, j);
                const double want = oracle::match(oracle::sq_dist(e, fg, 0, channels), oracle::sq_dist(e, bg, 0, channels), tau);
                c.expect(std::isfinite(p->value.data[j]) && std::abs(p->value.data[j] - want) <= 1e-6,
                         "match_probability tau=" + fmt("%g", tau));
                for (std::size_t s = 0; s < static_cast<std::size_t>(k); ++s) {
                    const double ws = oracle::match(oracle::sq_dist(e, fg, s * width, (s + 1) * width),
                                                    oracle::sq_dist(e, bg, s * width, (s + 1) * width), tau);
                    c.expect(std::isfinite(splits[s]->value.data[j]) && std::abs(splits[s]->value.data[j] - ws) <= 1e-6,
                             "split_match_probabilities tau=" + fmt("%g", tau));
                }
            }
        }
    }
}

// ---- 3 ----------------------------------------------------------------------------------

void msmr_identities(Check& c) {
    std::mt19937_64 rng(303);
    for (int trial = 0; trial < 100; ++trial) {
        const int k = random_int(rng, 1, 6), channels = k * random_int(rng, 1, 5);
        const auto q = nn::constant(random_tensor(rng, Shape{1, channels, 3, 3}, -5.0, 5.0));
        const auto proto = nn::constant(random_tensor(rng, Shape{1, channels, 1, 1}, -5.0, 5.0));
        const auto full = nn::squared_distance(q, proto, 0, channels);
        std::vector<double> sum(9, 0.0);
        for (int s = 0; s < k; ++s) {
            const auto part = nn::squared_distance(q, proto, s * (channels / k), (s + 1) * (channels / k));
            for (int j = 0; j < 9; ++j) sum[j] += part->value.data[j];
        }
        for (int j = 0; j < 9; ++j) c.expect(std::abs(sum[j] - full->value.data[j]) <= 1e-5, "split distance sum");
    }

    const auto batch = testing::synthetic_batch(data().shapes32, 5, 5);
    const auto& item = batch.classes[0].query[0];

    model::ModelConfig one = model::ModelConfig::tiny();
    one.splits = 1;
    const auto out = model::CafeNet(one).forward_class(batch.classes[0]).queries[0];
    const losses::SegTerms terms{out.full, out.splits, item.soft_seg};
    const double with = nn::scalar(losses::seg_loss({terms}, true));
    const double without = nn::scalar(losses::seg_loss({terms}, false));
    c.expect(std::abs(with - 2.0 * without) <= 1e-9, "K=1 seg loss is twice the single-term loss");

    model::ModelConfig plain = model::ModelConfig::tiny();
    plain.use_msmr = false;
    const model::CafeNet net(plain);
    const auto objective = trainer::objective(net, batch, false);
    const auto p = net.forward_class(batch.classes[0]).queries[0].full->value;
    double direct = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) direct += (p.data[j] - item.soft_seg.data[j]) * (p.data[j] - item.soft_seg.data[j]);
    direct /= static_cast<double>(p.size());
    c.expect(std::abs(objective.report.l_seg - direct) <= 1e-12, "use_msmr=false gives the single-term loss");
    c.expect(objective.report.seg_splits.empty(), "use_msmr=false has no split terms");
    c.detail = "K=1 ratio " + fmt("%.12f", with / without);
}

// ---- 4 ----------------------------------------------------------------------------------

void loss_closed_forms(Check& c) {
    std::mt19937_64 rng(404);
    for (int trial = 0; trial < 20; ++trial) {
        const int h = random_int(rng, 1, 32), w = random_int(rng, 1, 32);
        const Shape s{1, 1, h, w};
        const BinaryMask label = random_binary(rng, h, w, 0.3);
        const Tensor y = episodes::mask_to_tensor(label);
        const double ce = nn::scalar(losses::ce_loss({{nn::constant(Tensor(s, 0.5)), y}}));
        c.expect(std::abs(ce - h * w * std::log(2.0)) <= 1e-6, "CE of 0.5 is HW log 2");
        double n = 0.0;
        for (double v : y.data) n += v;
        const double dice = nn::scalar(losses::dice_ratio(nn::constant(y), y));
        c.expect(std::abs(dice - 2 * n / (2 * n + losses::kEpsilon)) <= 1e-9, "perfect-match Dice");
    }
    const auto batch = testing::synthetic_batch(data().shapes32, 5, 6);
    const auto obj = trainer::objective(model::CafeNet(model::ModelConfig::tiny()), batch, false);
    const auto& r = obj.report;
    c.expect(r.l_final == r.l_seg + r.l_ce + r.l_dice, "L_final is the exact sum");
    c.expect(nn::scalar(obj.total) == r.l_final, "reported total equals the graph total");
    c.expect(losses::total_loss(0.25, 1.5, 3.0) == 4.75, "total_loss sum");
}

// ---- 5 ----------------------------------------------------------------------------------

void gradient_check(Check& c) {
    const auto batch = testing::synthetic_batch(data().shapes32, 5, 7);
    model::CafeNet net(model::ModelConfig::tiny());
    const auto loss = [&] { return trainer::objective(net, batch, false).total; };
    trainer::zero_grad(net);
    nn::backward(loss());

    std::map<std::string, std::vector<std::pair<std::size_t, std::size_t>>> groups;
    for (std::size_t i = 0; i < net.parameters().size(); ++i)
        for (std::size_t j = 0; j < net.parameters()[i].var->value.size(); ++j)
            groups[net.parameters()[i].group].push_back({i, j});

    std::mt19937_64 rng(505);
    const double h = 1e-5;
    double worst = 0.0;
    std::string worst_at;
    std::size_t checked = 0;
    for (auto& [group, coords] : groups) {
        std::shuffle(coords.begin(), coords.end(), rng);
        const std::size_t n = std::min<std::size_t>(coords.size(), 40);
        c.expect(n >= 20 || n == coords.size(), group + " is undersampled");
        for (std::size_t s = 0; s < n; ++s) {
            auto& p = net.parameters()[coords[s].first];
            double& value = p.var->value.data[coords[s].second];
            const double saved = value;
            value = saved + h;
            const double up = nn::scalar(loss());
            value = saved - h;
            const double down = nn::scalar(loss());
            value = saved;
            const double fd = (up - down) / (2 * h), ad = p.var->grad[coords[s].second];
            const double rel = std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-4});
            if (rel > worst) {
                worst = rel;
                worst_at = p.name + "[" + std::to_string(coords[s].second) + "]";
            }
            ++checked;
        }
    }
    c.expect(worst <= 1e-3, "relative error " + fmt("%.3g", worst) + " at " + worst_at);
    c.detail = std::to_string(checked) + " coordinates in " + std::to_string(groups.size()) + " groups, worst " +
               fmt("%.2g", worst);
}

// ---- 6 ----------------------------------------------------------------------------------

void attention_contract(Check& c) {
    c.expect(model::build_attention(SoftMask(4, 4, 0.3), 16, 16, 0.5, 1) == SoftMask(16, 16, 0.0), "all below lambda");
    const auto uniform = model::build_attention(SoftMask(2, 2, 0.8), 8, 8, 0.5, 1);
    for (double v : uniform.values()) c.expect(v == 1.6, "uniform 0.8 gives 1.6");
    SoftMask dot(5, 5, 0.0);
    dot(2, 2) = 0.9;
    const auto a = model::build_attention(dot, 5, 5, 0.5, 1);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) {
            const bool centre = y == 2 && x == 2, near = std::abs(y - 2) <= 1 && std::abs(x - 2) <= 1;
            c.expect(a(y, x) == (centre ? 1.8 : near ? 0.9 : 0.0), "single-pixel dilation pattern");
        }

    std::mt19937_64 rng(606);
    std::array<nn::Var, model::kLevels> sides, zeros, ones, weights;
    for (int l = 0; l < model::kLevels; ++l) {
        const int s = 2 + l;
        sides[l] = nn::constant(random_tensor(rng, Shape{1, 4, s, s}, -2.0, 2.0));
        zeros[l] = nn::constant(Tensor(Shape{1, 1, s, s}, 0.0));
        ones[l] = nn::constant(Tensor(Shape{1, 1, s, s}, 1.0));
        weights[l] = nn::constant(random_tensor(rng, Shape{1, 1, s, s}, 0.0, 2.0));
    }
    const auto same = model::apply_residual_attention(sides, zeros);
    const auto doubled = model::apply_residual_attention(sides, ones);
    const auto weighted = model::apply_residual_attention(sides, weights);
    for (int l = 0; l < model::kLevels; ++l) {
        const auto& in = sides[l]->value;
        for (std::size_t i = 0; i < in.size(); ++i) {
            const std::size_t j = i % in.shape.plane();
            c.expect(std::abs(same[l]->value.data[i] - in.data[i]) <= 1e-6, "A=0 is the identity");
            c.expect(std::abs(doubled[l]->value.data[i] - 2 * in.data[i]) <= 1e-6, "A=1 doubles");
            c.expect(std::abs(weighted[l]->value.data[i] - in.data[i] * (1 + weights[l]->value.data[j])) <= 1e-6,
                     "(1+A) weighting");
        }
    }
}

// ---- 7 ----------------------------------------------------------------------------------

std::vector<std::vector<SoftMask>> ground_truth_predictor(const episodes::EpisodeBatch& batch) {
    std::vector<std::vector<SoftMask>> out;
    for (const auto& cls : batch.classes) {
        std::vector<SoftMask> qs;
        for (const auto& q : cls.query) qs.push_back(episodes::tensor_to_soft(q.edge));
        out.push_back(qs);
    }
    return out;
}

void evaluator_correctness(Check& c) {
    std::mt19937_64 rng(707);
    for (int trial = 0; trial < 100; ++trial) {
        const int h = random_int(rng, 2, 24), w = random_int(rng, 2, 24);
        const SoftMask pred = random_soft(rng, h, w);
        const BinaryMask gt = random_binary(rng, h, w, 0.3);
        const raster::Rect valid{0, 0, random_int(rng, 1, h), random_int(rng, 1, w)};
        const auto all = evaluator::threshold_counts(pred, gt, valid);
        for (int k = 0; k < evaluator::kThresholds; k += 5) {
            const auto want = oracle::confusion(pred, gt, k / 256.0, valid);
            c.expect(all[k].tp == want.tp && all[k].fp == want.fp && all[k].fn == want.fn, "threshold counts");
        }
        const double t = std::uniform_real_distribution<double>(0, 1)(rng);
        const auto one = evaluator::confusion_at_threshold(pred, gt, t, valid);
        const auto want = oracle::confusion(pred, gt, t, valid);
        c.expect(one.tp == want.tp && one.fp == want.fp && one.fn == want.fn, "confusion at threshold");
    }

    double worst_ap = 0.0;
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 20; ++trial) {
        const int h = 40, w = 40;
        SoftMask pred(h, w);
        const BinaryMask gt = random_binary(rng, h, w, 0.2);
        std::vector<double> scores;
        std::vector<int> labels;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                pred(y, x) = std::clamp(0.4 * gt(y, x) + 0.6 * u(rng), 1e-9, 1.0);
                scores.push_back(pred(y, x));
                labels.push_back(gt(y, x));
            }
        const auto curve = evaluator::curve_from_counts(evaluator::threshold_counts(pred, gt, {0, 0, h, w}));
        worst_ap = std::max(worst_ap, std::abs(evaluator::average_precision(curve) - oracle::exhaustive_ap(scores, labels)));
    }
    c.expect(worst_ap <= 0.01, "grid AP differs from the exhaustive AP by " + fmt("%.4f", worst_ap));

    const auto perfect = evaluator::evaluate(ground_truth_predictor, data().shapes64, {{1, 5, 1}, 20, 1});
    c.expect(perfect.ap == 1.0 && perfect.mf_ods == 1.0, "ground-truth predictor scores 1");

    SoftMask pred(6, 6, 0.0);
    BinaryMask gt(6, 6, 0);
    pred(1, 1) = 0.9;
    gt(1, 1) = 1;
    const raster::Rect valid{0, 0, 4, 4};
    const auto before = evaluator::confusion_at_threshold(pred, gt, 0.5, valid);
    pred(5, 5) = 0.9;
    const auto after = evaluator::confusion_at_threshold(pred, gt, 0.5, valid);
    c.expect(after.fp == before.fp + 1 && after.tp == before.tp, "padded positive adds a false positive");
    c.detail = "AP grid error " + fmt("%.4f", worst_ap);
}

// ---- 8 ----------------------------------------------------------------------------------

trainer::TrainConfig desk_config(model::Variant variant, const fs::path& out, long episodes) {
    trainer::TrainConfig cfg = trainer::TrainConfig::defaults(datasets::Scheme::Fse1000);
    cfg.lr = 1e-3;
    cfg.episodes_total = episodes;
    cfg.decay_at_episode = episodes;
    cfg.checkpoint_every = 500;
    cfg.seed = 3;
    cfg.out_dir = out.string();
    cfg.model.set_variant(variant);
    return cfg.resolved();
}

void learning_smoke(Check& c) {
    const auto& m = data().shapes64;
    int train_classes = 0;
    for (const auto& cls : m.classes) train_classes += cls.role == datasets::Role::Train;
    c.expect(train_classes == 8 && m.classes.size() == 10, "8 train / 2 test classes");

    trainer::TrainConfig cfg = desk_config(model::Variant::SegAttMsmr, data().dir / "overfit", 500);
    cfg.augment = false;
    model::CafeNet net(cfg.model);
    trainer::AdamState state;
    episodes::SampleLoader loader(m);
    const auto batch = trainer::training_batch(cfg, loader, 0);
    const double first = trainer::train_step(net, batch, state, cfg, cfg.lr).l_final;
    for (int s = 2; s < 500; ++s) trainer::train_step(net, batch, state, cfg, cfg.lr);
    const double last = trainer::train_step(net, batch, state, cfg, cfg.lr).l_final;
    const auto out = net.forward(batch);
    const double mf = single_mf(out[0].queries[0].edge->value, batch.classes[0].query[0].edge);
    c.expect(last <= 0.5 * first, "L_final " + fmt("%.3f", first) + " -> " + fmt("%.3f", last));
    c.expect(mf >= 0.8, "training-query MF " + fmt("%.3f", mf));

    const evaluator::EvalOptions eval{{1, 5, 1}, 200, 99};
    std::vector<double> mfs;
    for (auto variant : {model::Variant::Baseline, model::Variant::SegAttMsmr}) {
        const std::string name(model::to_string(variant));
        const auto run = trainer::run(desk_config(variant, data().dir / ("meta_" + name), 2000), m);
        mfs.push_back(evaluator::evaluate_checkpoint(run.checkpoint, m, eval).mf_ods);
    }
    c.expect(mfs[1] > mfs[0], "seg_att_msmr MF " + fmt("%.4f", mfs[1]) + " vs baseline " + fmt("%.4f", mfs[0]));
    c.detail = "overfit L " + fmt("%.2f", first) + "->" + fmt("%.2f", last) + ", MF " + fmt("%.3f", mf) +
               "; meta MF baseline " + fmt("%.4f", mfs[0]) + " vs seg_att_msmr " + fmt("%.4f", mfs[1]);
}

// ---- 9 ----------------------------------------------------------------------------------

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void reproducibility(Check& c) {
    const auto& m = data().shapes64;
    std::vector<std::vector<double>> traces(2);
    std::vector<fs::path> checkpoints;
    for (int i = 0; i < 2; ++i) {
        trainer::RunOptions options;
        options.resume = false;
        options.observer = [&traces, i](long, const losses::LossReport& r) { traces[i].push_back(r.l_final); };
        const auto cfg = desk_config(model::Variant::SegAttMsmr, data().dir / ("repro" + std::to_string(i)), 30);
        checkpoints.push_back(trainer::run(cfg, m, options).checkpoint);
    }
    c.expect(traces[0].size() == 30 && traces[0] == traces[1], "loss traces differ");
    c.expect(slurp(checkpoints[0]).size() > 0, "checkpoint written");

    const evaluator::EvalOptions eval{{1, 5, 1}, 20, 5};
    const auto a = evaluator::report_to_json(evaluator::evaluate_checkpoint(checkpoints[0], m, eval));
    const auto b = evaluator::report_to_json(evaluator::evaluate_checkpoint(checkpoints[1], m, eval));
    c.expect(a == b, "evaluation reports differ");

    const auto ck = trainer::load_checkpoint(checkpoints[0]);
    const fs::path again = data().dir / "roundtrip.ckpt";
    trainer::save_checkpoint(again, *ck.net, ck.optimizer, ck.episode, ck.train);
    c.expect(slurp(again) == slurp(checkpoints[0]), "checkpoint round trip changes bytes");
}

// ---- 10 ---------------------------------------------------------------------------------

void protocol_fidelity(Check& c) {
    auto one_shot = trainer::TrainConfig::defaults(datasets::Scheme::Fse1000);
    one_shot.shots_eval = 1;
    c.expect(one_shot.resolved().shots_train == 5, "1-shot trains with 5 shots");
    trainer::TrainConfig small = desk_config(model::Variant::SegAttMsmr, data().dir / "unused", 1);
    small.shots_eval = 1;
    episodes::SampleLoader loader(data().shapes64);
    c.expect(trainer::training_batch(small.resolved(), loader, 0).classes[0].support.size() == 5,
             "1-shot training batch holds 5 supports");

    const auto fse = trainer::TrainConfig::defaults(datasets::Scheme::Fse1000).resolved().to_map();
    c.expect(fse.at("episodes") == "40000" && fse.at("decay_at_episode") == "38000" && fse.at("lr") == "0.0001" &&
                 fse.at("weight_decay") == "0.01",
             "FSE defaults");
    const auto sbd = trainer::TrainConfig::defaults(datasets::Scheme::Sbd5i).resolved().to_map();
    c.expect(sbd.at("episodes") == "30000" && sbd.at("decay_at_episode") == "28000", "SBD defaults");

    const std::vector<std::vector<std::string>> header = {{"aeroplane", "bike", "bird", "boat", "bottle"},
                                                          {"bus", "car", "cat", "chair", "cow"},
                                                          {"table", "dog", "horse", "mbike", "person"},
                                                          {"plant", "sheep", "sofa", "train", "tv"}};
    for (int i = 0; i < 4; ++i) c.expect(datasets::sbd_test_classes(i) == header[i], "SBD split " + std::to_string(i));
}

} // namespace

int main(int argc, char** argv) {
    // Optional arguments select criteria by number.
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria = {
        {"raster oracle equivalence", raster_oracles},
        {"metric head oracle equivalence", metric_head_oracles},
        {"MSMR identities", msmr_identities},
        {"loss closed forms", loss_closed_forms},
        {"gradient checks", gradient_check},
        {"attention contract", attention_contract},
        {"evaluator correctness", evaluator_correctness},
        {"desk-scale learning", learning_smoke},
        {"reproducibility", reproducibility},
        {"protocol fidelity", protocol_fidelity},
    };
    int failed = 0, ran = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        if (!only.empty() && !only.count(static_cast<int>(i) + 1)) continue;
        ++ran;
        Check check;
        const auto start = std::chrono::steady_clock::now();
        try {
            criteria[i].second(check);
        } catch (const std::exception& e) {
            check.failures.push_back(std::string("exception: ") + e.what());
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool pass = check.failures.empty();
        failed += !pass;
        std::string line = "criterion " + std::to_string(i + 1) + " " + criteria[i].first + ": " + (pass ? "PASS" : "FAIL") +
                           " (" + fmt("%.1f", seconds) + " s)";
        if (!check.detail.empty()) line += " " + check.detail;
        for (const auto& f : check.failures) line += " | " + f;
        std::printf("%s\n", line.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%d criteria passed\n", ran - failed, ran);
    return failed == 0 ? 0 : 1;
}
