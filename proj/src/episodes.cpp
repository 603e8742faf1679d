#include "cafenet/episodes.hpp"

#include <algorithm>
#include <array>

#include "cafenet/image_io.hpp"

namespace cafenet::episodes {

using datasets::DatasetManifest;
using datasets::Role;
using raster::BinaryMask;
using raster::Image;

namespace {

constexpr std::array<double, 3> kMean = {0.485, 0.456, 0.406};
constexpr std::array<double, 3> kStd = {0.229, 0.224, 0.225};

/// First `count` entries of a seeded Fisher-Yates shuffle of 0..n-1.
std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t count, Rng& rng) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i)
        pool[i] = i;
    for (std::size_t i = 0; i < count; ++i)
        std::swap(pool[i], pool[i + uniform_index(rng, n - i)]);
    pool.resize(count);
    return pool;
}

Sample resize_sample(const Sample& s, int size) {
    Sample out = s;
    out.image.planes.clear();
    for (const auto& p : s.image.planes)
        out.image.planes.push_back(raster::resize_bilinear(p, size, size));
    out.edge = raster::resize_nearest(s.edge, size, size);
    out.seg = raster::resize_nearest(s.seg, size, size);
    out.valid = {0, 0, size, size};
    return out;
}

Sample rotate_sample(const Sample& s, int turns) {
    Sample out = s;
    out.image = raster::rotate90(s.image, turns);
    out.edge = raster::rotate90(s.edge, turns);
    out.seg = raster::rotate90(s.seg, turns);
    out.valid = {0, 0, out.image.height(), out.image.width()};
    return out;
}

Sample pad_sample(const Sample& s, int height, int width) {
    Sample out = s;
    out.image = raster::pad_to(s.image, height, width).value;
    out.edge = raster::pad_to(s.edge, height, width).value;
    out.seg = raster::pad_to(s.seg, height, width).value;
    out.valid = s.valid;
    return out;
}

template <typename F>
void for_each_sample(Episode& episode, F&& fn) {
    for (auto& c : episode.classes) {
        for (auto& s : c.support)
            fn(s);
        for (auto& s : c.query)
            fn(s);
    }
}

BatchItem make_item(const Sample& s, int height, int width, int stride) {
    BatchItem item;
    item.class_name = s.class_name;
    item.sample = s.sample;
    item.canvas = {0, 0, s.image.height(), s.image.width()};
    item.valid = s.valid;
    const Image image = raster::pad_to(s.image, height, width).value;
    const BinaryMask edge = raster::pad_to(s.edge, height, width).value;
    const BinaryMask seg = raster::pad_to(s.seg, height, width).value;
    item.image = image_to_tensor(image);
    item.edge = mask_to_tensor(edge);
    item.seg = mask_to_tensor(seg);
    item.soft_seg = soft_to_tensor(raster::downsample_avg(raster::to_soft(seg), stride));
    item.soft_edge = soft_to_tensor(raster::downsample_avg(raster::to_soft(edge), stride));
    return item;
}

} // namespace

SampleLoader::SampleLoader(const DatasetManifest& manifest, std::size_t max_cached)
    : manifest_(manifest), max_cached_(max_cached) {}

const Sample& SampleLoader::get(std::size_t class_index, std::size_t record_index) {
    const auto key = std::make_pair(class_index, record_index);
    if (auto it = cache_.find(key); it != cache_.end())
        return it->second;
    require(class_index < manifest_.classes.size() &&
                record_index < manifest_.classes[class_index].records.size(),
            ErrorKind::InvalidInput, "sample index out of range");
    const auto& entry = manifest_.classes[class_index];
    const auto& rec = entry.records[record_index];
    Sample s;
    s.class_name = entry.name;
    s.sample = rec.sample;
    s.image = io::load_image(manifest_.resolve(rec.image));
    s.seg = io::load_mask(manifest_.resolve(rec.seg));
    s.edge = io::load_mask(manifest_.resolve(rec.edge));
    require(s.image.height() == s.seg.height() && s.image.width() == s.seg.width() &&
                s.seg.same_shape(s.edge),
            ErrorKind::Shape, "record '" + entry.name + "/" + rec.sample + "' has mismatched sizes");
    s.valid = {0, 0, s.image.height(), s.image.width()};
    if (cache_.size() >= max_cached_)
        cache_.clear();
    return cache_.emplace(key, std::move(s)).first->second;
}

EpisodePlan sample_plan(const DatasetManifest& manifest, Role role, const Protocol& protocol,
                        Rng& rng) {
    require(protocol.n_classes >= 1 && protocol.n_support >= 1 && protocol.n_query >= 1,
            ErrorKind::Sampling, "episode protocol needs N_c, N_s, N_q >= 1");
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < manifest.classes.size(); ++i)
        if (manifest.classes[i].role == role)
            candidates.push_back(i);
    const auto n_classes = static_cast<std::size_t>(protocol.n_classes);
    require(n_classes <= candidates.size(), ErrorKind::Sampling,
            "N_c = " + std::to_string(protocol.n_classes) + " exceeds the " +
                std::to_string(candidates.size()) + " " + std::string(datasets::to_string(role)) +
                " classes");

    EpisodePlan plan;
    plan.role = role;
    const std::size_t per_class = static_cast<std::size_t>(protocol.n_support + protocol.n_query);
    for (std::size_t pick : draw_without_replacement(candidates.size(), n_classes, rng)) {
        const std::size_t ci = candidates[pick];
        const auto& entry = manifest.classes[ci];
        require(entry.records.size() >= per_class, ErrorKind::Sampling,
                "class '" + entry.name + "' has " + std::to_string(entry.records.size()) +
                    " samples, episode needs " + std::to_string(per_class));
        const auto drawn = draw_without_replacement(entry.records.size(), per_class, rng);
        ClassPlan cp;
        cp.class_index = ci;
        cp.support.assign(drawn.begin(), drawn.begin() + protocol.n_support);
        cp.query.assign(drawn.begin() + protocol.n_support, drawn.end());
        plan.classes.push_back(std::move(cp));
    }
    return plan;
}

Episode load_episode(const EpisodePlan& plan, SampleLoader& loader) {
    Episode episode;
    for (const auto& cp : plan.classes) {
        ClassEpisode ce;
        ce.class_name = loader.manifest().classes[cp.class_index].name;
        for (std::size_t r : cp.support)
            ce.support.push_back(loader.get(cp.class_index, r));
        for (std::size_t r : cp.query)
            ce.query.push_back(loader.get(cp.class_index, r));
        episode.classes.push_back(std::move(ce));
    }
    return episode;
}

Episode sample_episode(SampleLoader& loader, Role role, const Protocol& protocol, Rng& rng) {
    return load_episode(sample_plan(loader.manifest(), role, protocol, rng), loader);
}

Episode preprocess(Episode episode, Mode mode, datasets::Scheme scheme, Rng& rng, bool augment) {
    const bool sbd = scheme == datasets::Scheme::Sbd5i;
    if (mode == Mode::Train) {
        for_each_sample(episode, [&](Sample& s) {
            if (sbd)
                s = resize_sample(s, kSbdTrainSize);
            if (augment)
                s = rotate_sample(s, static_cast<int>(uniform_index(rng, 4)));
        });
    } else if (sbd) {
        for_each_sample(episode, [&](Sample& s) {
            const int h = std::max(kSbdEvalCanvas, raster::round_up(s.image.height(), kEncoderStride));
            const int w = std::max(kSbdEvalCanvas, raster::round_up(s.image.width(), kEncoderStride));
            s = pad_sample(s, h, w);
        });
    }
    return episode;
}

EpisodeBatch derive_soft_labels(const Episode& episode, int stride) {
    require(stride >= 1, ErrorKind::InvalidInput, "encoder stride must be >= 1");
    require(!episode.classes.empty(), ErrorKind::InvalidInput, "episode has no classes");
    int height = 0, width = 0;
    for (const auto& c : episode.classes)
        for (const auto* group : {&c.support, &c.query})
            for (const auto& s : *group) {
                height = std::max(height, s.image.height());
                width = std::max(width, s.image.width());
            }
    EpisodeBatch batch;
    batch.height = raster::round_up(height, stride);
    batch.width = raster::round_up(width, stride);
    batch.stride = stride;
    for (const auto& c : episode.classes) {
        ClassBatch cb;
        cb.class_name = c.class_name;
        for (const auto& s : c.support)
            cb.support.push_back(make_item(s, batch.height, batch.width, stride));
        for (const auto& s : c.query)
            cb.query.push_back(make_item(s, batch.height, batch.width, stride));
        batch.classes.push_back(std::move(cb));
    }
    return batch;
}

nn::Tensor image_to_tensor(const Image& image) {
    require(image.channels() == 3, ErrorKind::Shape, "expected a 3-channel image");
    nn::Tensor t(nn::Shape{1, 3, image.height(), image.width()});
    const std::size_t plane = t.shape.plane();
    for (std::size_t c = 0; c < 3; ++c) {
        const auto values = image.planes[c].values();
        for (std::size_t i = 0; i < plane; ++i)
            t.data[c * plane + i] = (values[i] - kMean[c]) / kStd[c];
    }
    return t;
}

nn::Tensor mask_to_tensor(const BinaryMask& mask) {
    nn::Tensor t(nn::Shape{1, 1, mask.height(), mask.width()});
    for (std::size_t i = 0; i < mask.size(); ++i)
        t.data[i] = mask.values()[i] ? 1.0 : 0.0;
    return t;
}

nn::Tensor soft_to_tensor(const raster::SoftMask& mask) {
    return nn::Tensor(nn::Shape{1, 1, mask.height(), mask.width()}, mask.storage());
}

raster::SoftMask tensor_to_soft(const nn::Tensor& t, int channel) {
    require(channel >= 0 && channel < t.shape.c && t.shape.n == 1, ErrorKind::Shape,
            "tensor_to_soft: expected [1,C,H,W] with a valid channel");
    const std::size_t plane = t.shape.plane();
    std::vector<double> values(t.data.begin() + static_cast<long>(plane * channel),
                               t.data.begin() + static_cast<long>(plane * (channel + 1)));
    return raster::SoftMask(t.shape.h, t.shape.w, std::move(values));
}

} // namespace cafenet::episodes
