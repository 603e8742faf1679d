#include "cafenet/model.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstdio>
#include <sstream>

#include "cafenet/nn/ops.hpp"
#include "cafenet/random.hpp"

namespace cafenet::model {

using nn::ConvSpec;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

template <std::size_t N>
std::string join(const std::array<int, N>& values) {
    std::string out;
    for (std::size_t i = 0; i < N; ++i) {
        if (i) out += ",";
        out += std::to_string(values[i]);
    }
    return out;
}

template <std::size_t N>
std::array<int, N> parse_list(const std::string& key, const std::string& text) {
    std::array<int, N> out{};
    std::stringstream ss(text);
    std::string item;
    std::size_t i = 0;
    while (std::getline(ss, item, ',')) {
        require(i < N, ErrorKind::Config, key + ": expected " + std::to_string(N) + " values");
        out[i++] = std::stoi(item);
    }
    require(i == N, ErrorKind::Config, key + ": expected " + std::to_string(N) + " values");
    return out;
}

std::string fmt_double(double v) {
    char buf[32];
    for (int precision = 15; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(ErrorKind::Config, key + ": expected a boolean, got '" + v + "'");
}

int parse_int(const std::string& key, const std::string& v) {
    int out = 0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    require(ec == std::errc() && ptr == v.data() + v.size(), ErrorKind::Config,
            key + ": expected an integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    fail(ErrorKind::Config, key + ": expected a number, got '" + v + "'");
}

Tensor complement(const Tensor& m) {
    Tensor out = m;
    for (double& v : out.data)
        v = 1.0 - v;
    return out;
}

} // namespace

std::string_view to_string(Variant v) {
    switch (v) {
    case Variant::Baseline: return "baseline";
    case Variant::Seg: return "seg";
    case Variant::SegAtt: return "seg_att";
    case Variant::SegAttMsmr: return "seg_att_msmr";
    }
    return "?";
}

Variant parse_variant(std::string_view text) {
    for (Variant v : {Variant::Baseline, Variant::Seg, Variant::SegAtt, Variant::SegAttMsmr})
        if (to_string(v) == text)
            return v;
    fail(ErrorKind::Config, "unknown variant '" + std::string(text) +
                                "' (expected baseline, seg, seg_att or seg_att_msmr)");
}

std::string_view to_string(MatchMode m) { return m == MatchMode::Full ? "full" : "average"; }

MatchMode parse_match_mode(std::string_view text) {
    if (text == "full") return MatchMode::Full;
    if (text == "average") return MatchMode::Average;
    fail(ErrorKind::Config, "unknown match_mode '" + std::string(text) + "' (expected full or average)");
}

ModelConfig ModelConfig::tiny() { return ModelConfig{}; }

ModelConfig ModelConfig::resnet34() {
    ModelConfig c;
    c.encoder = "resnet34";
    c.stage_channels = {64, 128, 256, 512};
    c.stage_blocks = {3, 4, 6, 3};
    c.bottleneck_channels = 64;
    c.decoder_channels = {16, 32, 64, 128, 256};
    return c;
}

Variant ModelConfig::variant() const {
    if (!use_seg && !use_attention && !use_msmr) return Variant::Baseline;
    if (use_seg && !use_attention && !use_msmr) return Variant::Seg;
    if (use_seg && use_attention && !use_msmr) return Variant::SegAtt;
    if (use_seg && use_attention && use_msmr) return Variant::SegAttMsmr;
    fail(ErrorKind::Config, "flag combination is not one of the four ablation variants");
}

void ModelConfig::set_variant(Variant v) {
    use_seg = v != Variant::Baseline;
    use_attention = v == Variant::SegAtt || v == Variant::SegAttMsmr;
    use_msmr = v == Variant::SegAttMsmr;
}

void ModelConfig::validate() const {
    require(encoder == "tiny" || encoder == "resnet34", ErrorKind::Config,
            "encoder must be tiny or resnet34");
    for (int c : stage_channels)
        require(c >= 1, ErrorKind::Config, "stage_channels must be positive");
    for (int b : stage_blocks)
        require(b >= 1, ErrorKind::Config, "stage_blocks must be positive");
    for (int c : decoder_channels)
        require(c >= 1, ErrorKind::Config, "decoder_channels must be positive");
    for (int r : aspp_rates)
        require(r >= 1, ErrorKind::Config, "aspp_rates must be positive");
    require(bottleneck_channels >= 1, ErrorKind::Config, "bottleneck_channels must be positive");
    require(splits >= 1 && stage_channels[3] % splits == 0, ErrorKind::Config,
            "splits K=" + std::to_string(splits) + " must divide the level-4 channel count " +
                std::to_string(stage_channels[3]));
    require(lambda >= 0.0 && lambda < 1.0, ErrorKind::Config, "lambda must lie in [0,1)");
    require(dilation_radius >= 1, ErrorKind::Config, "dilation_radius must be >= 1");
    require(tau_floor > 0.0 && tau_init >= tau_floor, ErrorKind::Config,
            "tau_init must be >= tau_floor > 0");
    require(use_seg || (!use_attention && !use_msmr), ErrorKind::Config,
            "attention and MSMR require use_seg");
    require(use_seg || match_mode == MatchMode::Full, ErrorKind::Config,
            "match_mode=average requires use_seg");
}

std::map<std::string, std::string> ModelConfig::to_map() const {
    return {
        {"encoder", encoder},
        {"stage_channels", join(stage_channels)},
        {"stage_blocks", join(stage_blocks)},
        {"bottleneck_channels", std::to_string(bottleneck_channels)},
        {"decoder_channels", join(decoder_channels)},
        {"aspp_rates", join(aspp_rates)},
        {"splits", std::to_string(splits)},
        {"lambda", fmt_double(lambda)},
        {"dilation_radius", std::to_string(dilation_radius)},
        {"tau_init", fmt_double(tau_init)},
        {"tau_floor", fmt_double(tau_floor)},
        {"residual_gain", fmt_double(residual_gain)},
        {"use_seg", use_seg ? "true" : "false"},
        {"use_attention", use_attention ? "true" : "false"},
        {"use_msmr", use_msmr ? "true" : "false"},
        {"proto_mask_sum", proto_mask_sum ? "true" : "false"},
        {"match_mode", std::string(to_string(match_mode))},
        {"init_seed", std::to_string(init_seed)},
    };
}

bool ModelConfig::set(const std::string& key, const std::string& v) {
    if (key == "encoder") {
        require(v == "tiny" || v == "resnet34", ErrorKind::Config,
                "encoder must be tiny or resnet34, got '" + v + "'");
        const ModelConfig preset = v == "tiny" ? tiny() : resnet34();
        encoder = preset.encoder;
        stage_channels = preset.stage_channels;
        stage_blocks = preset.stage_blocks;
        bottleneck_channels = preset.bottleneck_channels;
        decoder_channels = preset.decoder_channels;
    } else if (key == "stage_channels") stage_channels = parse_list<4>(key, v);
    else if (key == "stage_blocks") stage_blocks = parse_list<4>(key, v);
    else if (key == "bottleneck_channels") bottleneck_channels = parse_int(key, v);
    else if (key == "decoder_channels") decoder_channels = parse_list<kLevels>(key, v);
    else if (key == "aspp_rates") aspp_rates = parse_list<4>(key, v);
    else if (key == "splits") splits = parse_int(key, v);
    else if (key == "lambda") lambda = parse_double(key, v);
    else if (key == "dilation_radius") dilation_radius = parse_int(key, v);
    else if (key == "tau_init") tau_init = parse_double(key, v);
    else if (key == "tau_floor") tau_floor = parse_double(key, v);
    else if (key == "residual_gain") residual_gain = parse_double(key, v);
    else if (key == "use_seg") use_seg = parse_bool(key, v);
    else if (key == "use_attention") use_attention = parse_bool(key, v);
    else if (key == "use_msmr") use_msmr = parse_bool(key, v);
    else if (key == "proto_mask_sum") proto_mask_sum = parse_bool(key, v);
    else if (key == "match_mode") match_mode = parse_match_mode(v);
    else if (key == "variant") set_variant(parse_variant(v));
    else if (key == "init_seed") init_seed = std::stoull(v);
    else return false;
    return true;
}

std::vector<std::string> diff_fields(const ModelConfig& a, const ModelConfig& b) {
    std::vector<std::string> out;
    const auto ma = a.to_map();
    const auto mb = b.to_map();
    for (const auto& [key, value] : ma)
        if (mb.at(key) != value)
            out.push_back(key);
    return out;
}

// ---- CafeNet -----------------------------------------------------------------

CafeNet::Conv CafeNet::make_conv(const std::string& name, const std::string& group, int in,
                                 int out, int k, ConvSpec spec, bool bias) {
    Rng rng(derive_seed(config_.init_seed, init_state_++));
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (in * k * k)));
    Tensor w(Shape{out, in, k, k});
    for (double& v : w.data)
        v = normal(rng);
    Conv conv;
    conv.weight = nn::parameter(std::move(w));
    conv.spec = spec;
    params_.push_back({name + ".weight", group, conv.weight, true});
    if (bias) {
        conv.bias = nn::parameter(Tensor(Shape{1, out, 1, 1}));
        params_.push_back({name + ".bias", group, conv.bias, false});
    }
    return conv;
}

CafeNet::Affine CafeNet::make_affine(const std::string& name, const std::string& group,
                                     int channels, double gamma) {
    Affine a;
    a.gamma = nn::parameter(Tensor(Shape{1, channels, 1, 1}, gamma));
    a.beta = nn::parameter(Tensor(Shape{1, channels, 1, 1}));
    params_.push_back({name + ".gamma", group, a.gamma, false});
    params_.push_back({name + ".beta", group, a.beta, false});
    return a;
}

CafeNet::CafeNet(const ModelConfig& config) : config_(config) {
    config_.validate();
    const auto& ch = config_.stage_channels;

    stem_conv_ = make_conv("encoder.stem.conv", "encoder", 3, ch[0], 7, {2, 3, 1}, false);
    stem_aff_ = make_affine("encoder.stem.affine", "encoder", ch[0], 1.0);
    int in = ch[0];
    for (int s = 0; s < 4; ++s) {
        for (int b = 0; b < config_.stage_blocks[s]; ++b) {
            const int stride = (s > 0 && b == 0) ? 2 : 1;
            const std::string prefix = "encoder.stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
            Block block;
            block.conv1 = make_conv(prefix + ".conv1", "encoder", in, ch[s], 3, {stride, 1, 1}, false);
            block.aff1 = make_affine(prefix + ".affine1", "encoder", ch[s], 1.0);
            block.conv2 = make_conv(prefix + ".conv2", "encoder", ch[s], ch[s], 3, {1, 1, 1}, false);
            block.aff2 = make_affine(prefix + ".affine2", "encoder", ch[s], config_.residual_gain);
            if (stride != 1 || in != ch[s]) {
                block.has_shortcut = true;
                block.shortcut = make_conv(prefix + ".shortcut", "encoder", in, ch[s], 1, {stride, 0, 1}, false);
                block.shortcut_aff = make_affine(prefix + ".shortcut_affine", "encoder", ch[s], 1.0);
            }
            stages_[s].push_back(std::move(block));
            in = ch[s];
        }
    }

    for (int i = 0; i < 4; ++i) {
        const int rate = config_.aspp_rates[i];
        aspp_branches_[i] = make_conv("aspp.rate" + std::to_string(rate), "aspp", ch[2], ch[2], 3,
                                      {1, rate, rate}, true);
    }
    aspp_project_ = make_conv("aspp.project", "aspp", 4 * ch[2], ch[2], 1, {}, true);

    const std::array<int, kLevels> level_channels = {3, ch[0], ch[1], ch[2], ch[3]};
    const int bc = config_.bottleneck_channels;
    for (int l = 0; l < kLevels; ++l) {
        const std::string prefix = "bottleneck.s" + std::to_string(l);
        bottleneck_reduce_[l] = make_conv(prefix + ".reduce", "bottleneck", level_channels[l], bc, 1, {}, true);
        bottleneck_conv_[l] = make_conv(prefix + ".conv", "bottleneck", bc, bc, 3, {1, 1, 1}, true);
    }

    for (int l = kLevels - 1; l >= 0; --l) {
        const int out = config_.decoder_channels[l];
        int dec_in = bc + (l == kLevels - 1 ? 0 : config_.decoder_channels[l + 1]);
        for (int j = 0; j < 3; ++j) {
            decoder_[l][j] = make_conv("decoder.d" + std::to_string(l) + ".conv" + std::to_string(j),
                                       "decoder", dec_in, out, 3, {1, 1, 1}, true);
            dec_in = out;
        }
    }
    head_ = make_conv("head.conv", "head", config_.decoder_channels[0], 1, 1, {}, true);

    tau_ = nn::parameter(Tensor(Shape{1, 1, 1, 1}, config_.tau_init));
    params_.push_back({"segmentator.tau", "temperature", tau_, false});
}

const Parameter* CafeNet::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name)
            return &p;
    return nullptr;
}

std::size_t CafeNet::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_)
        n += p.var->value.size();
    return n;
}

void CafeNet::clamp_tau() {
    double& t = tau_->value.data[0];
    if (!(t >= config_.tau_floor))
        t = config_.tau_floor;
}

Var CafeNet::apply(const Conv& conv, const Var& x) const {
    return nn::conv2d(x, conv.weight, conv.bias, conv.spec);
}

Var CafeNet::apply(const Affine& aff, const Var& x) const {
    return nn::channel_affine(x, aff.gamma, aff.beta);
}

Var CafeNet::run_block(const Block& block, const Var& x) const {
    Var branch = nn::relu(apply(block.aff1, apply(block.conv1, x)));
    branch = apply(block.aff2, apply(block.conv2, branch));
    const Var identity = block.has_shortcut ? apply(block.shortcut_aff, apply(block.shortcut, x)) : x;
    return nn::relu(nn::add(branch, identity));
}

Var CafeNet::run_stage(int stage, const Var& x) const {
    Var out = x;
    for (const auto& block : stages_[stage])
        out = run_block(block, out);
    return out;
}

Var CafeNet::stem(const Var& image) const {
    const Shape s = image->shape();
    require(s.n == 1 && s.c == 3, ErrorKind::Shape, "encode: expected a [1,3,H,W] image, got " + s.str());
    require(s.h % 32 == 0 && s.w % 32 == 0 && s.h > 0 && s.w > 0, ErrorKind::Shape,
            "encode: image " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                " is not divisible by 32; pad the input to a multiple of 32");
    return nn::max_pool2d(nn::relu(apply(stem_aff_, apply(stem_conv_, image))), 3, 2, 1);
}

FeaturePyramid CafeNet::encode(const Var& image) const {
    FeaturePyramid p;
    p.levels[0] = image;
    Var x = stem(image);
    for (int s = 0; s < 4; ++s) {
        x = run_stage(s, x);
        p.levels[s + 1] = x;
    }
    return p;
}

Var CafeNet::encode_top(const Var& image) const {
    Var x = stem(image);
    for (int s = 0; s < 4; ++s)
        x = run_stage(s, x);
    return x;
}

PrototypePair CafeNet::compute_prototypes(const std::vector<Var>& support_feats,
                                          const std::vector<Tensor>& soft_masks) const {
    std::vector<Tensor> background;
    background.reserve(soft_masks.size());
    for (const auto& m : soft_masks)
        background.push_back(complement(m));
    return {nn::masked_pool(support_feats, soft_masks, config_.proto_mask_sum),
            nn::masked_pool(support_feats, background, config_.proto_mask_sum)};
}

std::array<Var, kLevels> CafeNet::side_outputs(const FeaturePyramid& pyramid) const {
    std::array<Var, kLevels> sides;
    for (int l = 0; l < kLevels; ++l) {
        Var x = pyramid.levels[l];
        if (l == 3) {
            std::vector<Var> branches;
            for (const auto& conv : aspp_branches_)
                branches.push_back(nn::relu(apply(conv, x)));
            x = nn::relu(apply(aspp_project_, nn::concat_channels(branches)));
        }
        x = nn::relu(apply(bottleneck_reduce_[l], x));
        sides[l] = nn::relu(apply(bottleneck_conv_[l], x));
    }
    return sides;
}

std::array<Var, kLevels> CafeNet::decode_features(const std::array<Var, kLevels>& sides) const {
    std::array<Var, kLevels> outs;
    for (int l = kLevels - 1; l >= 0; --l) {
        Var x = sides[l];
        if (l < kLevels - 1) {
            const Shape s = sides[l]->shape();
            x = nn::concat_channels({nn::resize_bilinear(outs[l + 1], s.h, s.w), sides[l]});
        }
        for (const auto& conv : decoder_[l])
            x = nn::relu(apply(conv, x));
        outs[l] = x;
    }
    return outs;
}

Var CafeNet::decode(const std::array<Var, kLevels>& sides) const {
    return nn::sigmoid(apply(head_, decode_features(sides)[0]));
}

ClassOutput CafeNet::forward_class(const episodes::ClassBatch& batch) const {
    require(!batch.support.empty(), ErrorKind::InvalidInput, "forward: class without support samples");
    std::vector<Var> feats;
    std::vector<Tensor> masks;
    for (const auto& s : batch.support) {
        feats.push_back(encode_top(nn::constant(s.image)));
        masks.push_back(config_.use_seg ? s.soft_seg : s.soft_edge);
    }
    const PrototypePair protos = compute_prototypes(feats, masks);

    ClassOutput out;
    for (const auto& q : batch.query) {
        QueryOutput qo;
        const Var image = nn::constant(q.image);
        const int height = q.image.shape.h;
        const int width = q.image.shape.w;
        if (!config_.use_seg) {
            qo.full = match_probability(encode_top(image), protos, tau_);
            qo.mask = qo.full;
            qo.edge = nn::resize_bilinear(qo.full, height, width);
            out.queries.push_back(std::move(qo));
            continue;
        }
        const FeaturePyramid pyramid = encode(image);
        qo.full = match_probability(pyramid.levels[4], protos, tau_);
        if (config_.use_msmr || config_.match_mode == MatchMode::Average)
            qo.splits = split_match_probabilities(pyramid.levels[4], protos, tau_, config_.splits);
        if (config_.match_mode == MatchMode::Average) {
            std::vector<Var> parts{qo.full};
            parts.insert(parts.end(), qo.splits.begin(), qo.splits.end());
            qo.mask = nn::average(parts);
        } else {
            qo.mask = qo.full;
        }
        auto sides = side_outputs(pyramid);
        if (config_.use_attention) {
            std::array<std::pair<int, int>, kLevels> dims;
            for (int l = 0; l < kLevels; ++l)
                dims[l] = {sides[l]->shape().h, sides[l]->shape().w};
            qo.attention = build_attention(qo.mask, dims, config_.lambda, config_.dilation_radius);
            sides = apply_residual_attention(sides, qo.attention);
        }
        qo.edge = decode(sides);
        out.queries.push_back(std::move(qo));
    }
    return out;
}

std::vector<ClassOutput> CafeNet::forward(const episodes::EpisodeBatch& batch) const {
    std::vector<ClassOutput> out;
    for (const auto& c : batch.classes)
        out.push_back(forward_class(c));
    return out;
}

// ---- metric head and attention ----------------------------------------------------

Var match_probability(const Var& query_feat, const PrototypePair& protos, const Var& tau) {
    const int c = query_feat->shape().c;
    return nn::match_probability(nn::squared_distance(query_feat, protos.fg, 0, c),
                                 nn::squared_distance(query_feat, protos.bg, 0, c), tau);
}

std::vector<Var> split_match_probabilities(const Var& query_feat, const PrototypePair& protos,
                                           const Var& tau, int splits) {
    const int c = query_feat->shape().c;
    require(splits >= 1 && c % splits == 0, ErrorKind::Config,
            "split count K=" + std::to_string(splits) + " does not divide C=" + std::to_string(c));
    const int width = c / splits;
    std::vector<Var> out;
    for (int k = 0; k < splits; ++k)
        out.push_back(nn::match_probability(
            nn::squared_distance(query_feat, protos.fg, k * width, (k + 1) * width),
            nn::squared_distance(query_feat, protos.bg, k * width, (k + 1) * width), tau));
    return out;
}

std::array<Var, kLevels> build_attention(const Var& mask,
                                         const std::array<std::pair<int, int>, kLevels>& dims,
                                         double lambda, int dilation_radius) {
    require(lambda >= 0.0 && lambda < 1.0, ErrorKind::Config, "lambda must lie in [0,1)");
    require(dilation_radius >= 1, ErrorKind::Config, "dilation radius must be >= 1");
    std::array<Var, kLevels> out;
    for (int l = 0; l < kLevels; ++l) {
        const Var kept = nn::threshold_keep(nn::resize_bilinear(mask, dims[l].first, dims[l].second), lambda);
        out[l] = nn::add(kept, nn::dilate_max(kept, dilation_radius));
    }
    return out;
}

raster::SoftMask build_attention(const raster::SoftMask& mask, int height, int width,
                                 double lambda, int dilation_radius) {
    require(lambda >= 0.0 && lambda < 1.0, ErrorKind::Config, "lambda must lie in [0,1)");
    raster::SoftMask up = (mask.height() == height && mask.width() == width)
                              ? mask
                              : raster::upsample_bilinear(mask, height, width);
    for (double& v : up.values())
        v = v > lambda ? v : 0.0;
    const raster::SoftMask grown = raster::dilate(up, raster::StructuringElement(dilation_radius));
    for (std::size_t i = 0; i < up.size(); ++i)
        up.values()[i] += grown.values()[i];
    return up;
}

std::array<Var, kLevels> apply_residual_attention(const std::array<Var, kLevels>& sides,
                                                  const std::array<Var, kLevels>& attention) {
    std::array<Var, kLevels> out;
    for (int l = 0; l < kLevels; ++l) {
        if (!attention[l]) {
            out[l] = sides[l];
            continue;
        }
        const Shape s = sides[l]->shape();
        const Shape a = attention[l]->shape();
        require(a.n == s.n && a.c == 1 && a.h == s.h && a.w == s.w, ErrorKind::Shape,
                "attention " + a.str() + " does not match side output " + s.str() + " at level " +
                    std::to_string(l));
        out[l] = nn::mul_map(sides[l], nn::add_scalar(attention[l], 1.0));
    }
    return out;
}

} // namespace cafenet::model
