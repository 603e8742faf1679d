#pragma once

// Few-shot edge detector: residual encoder with side outputs, bottlenecks
// (ASPP in front of level 3), prototype segmentator with split views,
// attention pyramid and hierarchical decoder.

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cafenet/episodes.hpp"
#include "cafenet/nn/autograd.hpp"
#include "cafenet/nn/ops.hpp"
#include "cafenet/raster.hpp"

namespace cafenet::model {

inline constexpr int kLevels = 5;
inline constexpr std::array<int, kLevels> kLevelStrides = {1, 4, 8, 16, 32};

enum class Variant { Baseline, Seg, SegAtt, SegAttMsmr };
enum class MatchMode { Full, Average };

std::string_view to_string(Variant v);
Variant parse_variant(std::string_view text);
std::string_view to_string(MatchMode m);
MatchMode parse_match_mode(std::string_view text);

struct ModelConfig {
    std::string encoder = "tiny"; // "tiny" or "resnet34"
    std::array<int, 4> stage_channels = {8, 16, 32, 64};
    std::array<int, 4> stage_blocks = {2, 2, 2, 2};
    int bottleneck_channels = 8;
    std::array<int, kLevels> decoder_channels = {8, 8, 16, 16, 32}; // D0..D4
    std::array<int, 4> aspp_rates = {1, 6, 12, 18};
    int splits = 4;             // K
    double lambda = 0.5;        // attention threshold
    int dilation_radius = 1;
    double tau_init = 10.0;
    double tau_floor = 1e-3;
    double residual_gain = 0.2; // initial scale of the last affine in each residual branch
    bool use_seg = true;
    bool use_attention = true;
    bool use_msmr = true;
    bool proto_mask_sum = false; // divide prototypes by mask weight instead of N_s*H*W
    MatchMode match_mode = MatchMode::Full;
    std::uint64_t init_seed = 0;

    static ModelConfig tiny();
    static ModelConfig resnet34();

    Variant variant() const;
    void set_variant(Variant v);
    void validate() const;

    /// Flat key/value view used by config files, checkpoints and `--help`.
    std::map<std::string, std::string> to_map() const;
    /// Returns false when `key` is not a model key.
    bool set(const std::string& key, const std::string& value);

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Names of the keys where two configs differ.
std::vector<std::string> diff_fields(const ModelConfig& a, const ModelConfig& b);

struct Parameter {
    std::string name;
    std::string group; // encoder, aspp, bottleneck, decoder, head, temperature
    nn::Var var;
    bool decay = false; // conv weights only
};

/// Level 0 is the raw image; levels 1..4 are encoder stages.
struct FeaturePyramid {
    std::array<nn::Var, kLevels> levels;
};

struct PrototypePair {
    nn::Var fg; // [1,C,1,1]
    nn::Var bg;
};

struct QueryOutput {
    nn::Var full;                   // p, [1,1,h,w]
    std::vector<nn::Var> splits;    // p^k
    nn::Var mask;                   // M_hat used for attention (p, or mean of p and p^k)
    std::array<nn::Var, kLevels> attention; // null when attention is off
    nn::Var edge;                   // y_hat, [1,1,H,W]
};

struct ClassOutput {
    std::vector<QueryOutput> queries;
};

class CafeNet {
public:
    explicit CafeNet(const ModelConfig& config);

    const ModelConfig& config() const noexcept { return config_; }
    std::vector<Parameter>& parameters() noexcept { return params_; }
    const std::vector<Parameter>& parameters() const noexcept { return params_; }
    const Parameter* find(const std::string& name) const;
    std::size_t parameter_count() const;

    nn::Var tau() const { return tau_; }
    /// Clamps tau to the configured floor (after each optimiser step).
    void clamp_tau();

    /// Image [1,3,H,W] with H, W divisible by 32.
    FeaturePyramid encode(const nn::Var& image) const;
    /// Only the level-4 features (support branch).
    nn::Var encode_top(const nn::Var& image) const;

    PrototypePair compute_prototypes(const std::vector<nn::Var>& support_feats,
                                     const std::vector<nn::Tensor>& soft_masks) const;

    /// Bottleneck side outputs S^(0..4).
    std::array<nn::Var, kLevels> side_outputs(const FeaturePyramid& pyramid) const;

    std::array<nn::Var, kLevels> decode_features(const std::array<nn::Var, kLevels>& sides) const;
    /// Decoder plus sigmoid head.
    nn::Var decode(const std::array<nn::Var, kLevels>& sides) const;

    ClassOutput forward_class(const episodes::ClassBatch& batch) const;
    std::vector<ClassOutput> forward(const episodes::EpisodeBatch& batch) const;

private:
    struct Conv {
        nn::Var weight;
        nn::Var bias; // may be null
        nn::ConvSpec spec;
    };
    struct Affine {
        nn::Var gamma;
        nn::Var beta;
    };
    struct Block {
        Conv conv1;
        Affine aff1;
        Conv conv2;
        Affine aff2;
        bool has_shortcut = false;
        Conv shortcut;
        Affine shortcut_aff;
    };

    Conv make_conv(const std::string& name, const std::string& group, int in, int out, int k,
                   nn::ConvSpec spec, bool bias);
    Affine make_affine(const std::string& name, const std::string& group, int channels,
                       double gamma);
    nn::Var apply(const Conv& conv, const nn::Var& x) const;
    nn::Var apply(const Affine& aff, const nn::Var& x) const;
    nn::Var run_block(const Block& block, const nn::Var& x) const;
    nn::Var run_stage(int stage, const nn::Var& x) const;
    nn::Var stem(const nn::Var& image) const;

    ModelConfig config_;
    std::vector<Parameter> params_;
    std::uint64_t init_state_ = 0;

    Conv stem_conv_;
    Affine stem_aff_;
    std::array<std::vector<Block>, 4> stages_;
    std::array<Conv, 4> aspp_branches_;
    Conv aspp_project_;
    std::array<Conv, kLevels> bottleneck_reduce_;
    std::array<Conv, kLevels> bottleneck_conv_;
    std::array<std::array<Conv, 3>, kLevels> decoder_;
    Conv head_;
    nn::Var tau_;
};

/// Squared distances of every query pixel to both prototypes over channels
/// [begin, end), then the matching probability.
nn::Var match_probability(const nn::Var& query_feat, const PrototypePair& protos,
                          const nn::Var& tau);
std::vector<nn::Var> split_match_probabilities(const nn::Var& query_feat,
                                               const PrototypePair& protos, const nn::Var& tau,
                                               int splits);

/// A^(l) = 1(M > lambda) M + dilate(1(M > lambda) M) with M the bilinear
/// upsampling of `mask` to each level's dims.
std::array<nn::Var, kLevels> build_attention(const nn::Var& mask,
                                             const std::array<std::pair<int, int>, kLevels>& dims,
                                             double lambda, int dilation_radius);
raster::SoftMask build_attention(const raster::SoftMask& mask, int height, int width,
                                 double lambda, int dilation_radius);

/// S^(l) * (1 + A^(l)) broadcast over channels; null attention leaves S unchanged.
std::array<nn::Var, kLevels> apply_residual_attention(const std::array<nn::Var, kLevels>& sides,
                                                      const std::array<nn::Var, kLevels>& attention);

} // namespace cafenet::model
