#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "cafenet/datasets.hpp"
#include "cafenet/episodes.hpp"
#include "cafenet/raster.hpp"

namespace testing {

namespace fs = std::filesystem;
using namespace cafenet;

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag = "t") {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("cafenet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline raster::BinaryMask random_binary(std::mt19937_64& rng, int h, int w, double p = 0.5) {
    std::bernoulli_distribution coin(p);
    raster::BinaryMask m(h, w);
    for (auto& v : m.values()) v = coin(rng) ? 1 : 0;
    return m;
}

inline raster::SoftMask random_soft(std::mt19937_64& rng, int h, int w) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    raster::SoftMask m(h, w);
    for (auto& v : m.values()) v = u(rng);
    return m;
}

inline int random_int(std::mt19937_64& rng, int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng);
}

/// Synthetic shapes source plus its FSE-style dataset under `dir`.
inline datasets::DatasetManifest synthetic_dataset(const fs::path& dir, int classes = 10, int samples = 10,
                                                   int size = 64, std::uint64_t seed = 7) {
    datasets::SyntheticSpec spec;
    spec.classes = classes;
    spec.samples_per_class = samples;
    spec.size = size;
    spec.seed = seed;
    datasets::write_synthetic_source(dir / "source", spec);
    datasets::SplitSpec split;
    split.seed = seed;
    datasets::build_fse1000(dir / "source", dir / "data", split);
    return datasets::load_manifest(dir / "data" / "manifest.jsonl");
}

/// One preprocessed, label-derived episode drawn from the test classes.
inline episodes::EpisodeBatch synthetic_batch(const datasets::DatasetManifest& manifest, int shots,
                                              std::uint64_t seed, datasets::Role role = datasets::Role::Train) {
    episodes::SampleLoader loader(manifest);
    Rng rng(seed);
    auto ep = episodes::sample_episode(loader, role, {1, shots, 1}, rng);
    ep = episodes::preprocess(std::move(ep), episodes::Mode::Eval, manifest.scheme, rng);
    return episodes::derive_soft_labels(ep);
}

} // namespace testing
