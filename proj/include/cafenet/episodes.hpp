#pragma once

// Episode sampling, augmentation and batch assembly.

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cafenet/datasets.hpp"
#include "cafenet/nn/autograd.hpp"
#include "cafenet/random.hpp"
#include "cafenet/raster.hpp"

namespace cafenet::episodes {

enum class Mode { Train, Eval };

inline constexpr int kEncoderStride = 32;
inline constexpr int kSbdTrainSize = 320;
inline constexpr int kSbdEvalCanvas = 512;

struct Protocol {
    int n_classes = 1;  // N_c
    int n_support = 5;  // N_s
    int n_query = 1;    // N_q
};

/// Indices into a manifest: which records of which classes form the episode.
struct ClassPlan {
    std::size_t class_index = 0;
    std::vector<std::size_t> support;
    std::vector<std::size_t> query;
};

struct EpisodePlan {
    datasets::Role role = datasets::Role::Train;
    std::vector<ClassPlan> classes;
};

struct Sample {
    std::string class_name;
    std::string sample;
    raster::Image image;
    raster::BinaryMask edge;
    raster::BinaryMask seg;
    raster::Rect valid; // real content inside `image`
};

struct ClassEpisode {
    std::string class_name;
    std::vector<Sample> support;
    std::vector<Sample> query;
};

struct Episode {
    std::vector<ClassEpisode> classes;
};

/// Loads manifest records, caching decoded samples in memory.
class SampleLoader {
public:
    explicit SampleLoader(const datasets::DatasetManifest& manifest, std::size_t max_cached = 4096);

    const Sample& get(std::size_t class_index, std::size_t record_index);
    const datasets::DatasetManifest& manifest() const noexcept { return manifest_; }

private:
    const datasets::DatasetManifest& manifest_;
    std::size_t max_cached_;
    std::map<std::pair<std::size_t, std::size_t>, Sample> cache_;
};

/// Classes without replacement from the role's class set, then support and
/// query records without replacement inside each class.
EpisodePlan sample_plan(const datasets::DatasetManifest& manifest, datasets::Role role,
                        const Protocol& protocol, Rng& rng);

Episode load_episode(const EpisodePlan& plan, SampleLoader& loader);

Episode sample_episode(SampleLoader& loader, datasets::Role role, const Protocol& protocol,
                       Rng& rng);

/// Train: SBD items resized to 320x320, then one random quarter-turn per
/// item unless `augment` is off. Eval: SBD items zero-padded to 512x512,
/// FSE items untouched.
Episode preprocess(Episode episode, Mode mode, datasets::Scheme scheme, Rng& rng,
                   bool augment = true);

/// Model-ready item. Tensors live on the common canvas shared by the
/// episode (a multiple of the encoder stride).
struct BatchItem {
    std::string class_name;
    std::string sample;
    nn::Tensor image;     // [1,3,H,W], normalised
    nn::Tensor edge;      // [1,1,H,W] binary y
    nn::Tensor seg;       // [1,1,H,W] binary M
    nn::Tensor soft_seg;  // [1,1,H/s,W/s] m
    nn::Tensor soft_edge; // [1,1,H/s,W/s] down-sampled y
    raster::Rect canvas;  // region produced by preprocess
    raster::Rect valid;   // real content inside `canvas`
};

struct ClassBatch {
    std::string class_name;
    std::vector<BatchItem> support;
    std::vector<BatchItem> query;
};

struct EpisodeBatch {
    std::vector<ClassBatch> classes;
    int height = 0;
    int width = 0;
    int stride = kEncoderStride;
};

/// Pads every item to a common canvas divisible by `stride` and derives
/// m = downsample_avg(M, stride) for support and query items.
EpisodeBatch derive_soft_labels(const Episode& episode, int stride = kEncoderStride);

/// Per-channel standardisation with the usual ImageNet statistics.
nn::Tensor image_to_tensor(const raster::Image& image);
nn::Tensor mask_to_tensor(const raster::BinaryMask& mask);
nn::Tensor soft_to_tensor(const raster::SoftMask& mask);
raster::SoftMask tensor_to_soft(const nn::Tensor& t, int channel = 0);

/// Seed for episode `index` (0-based) of a run seeded with `seed`.
inline std::uint64_t episode_seed(std::uint64_t seed, std::uint64_t index) {
    return derive_seed(seed, index);
}

} // namespace cafenet::episodes
