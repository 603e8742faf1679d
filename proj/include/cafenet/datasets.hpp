#pragma once

// Few-shot edge dataset construction from image + segmentation sources and
// the JSON-lines manifest that describes the result.
//
// Output layout: <out_root>/<class>/<sample>.{img.png,seg.png,edge.png}
// with the manifest at <out_root>/manifest.jsonl. Paths inside the manifest
// are relative to the manifest directory (or to $CAFENET_DATA_ROOT when set).

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "cafenet/error.hpp"

namespace cafenet::datasets {

namespace fs = std::filesystem;

enum class Scheme { Fse1000, Sbd5i };
enum class Role { Train, Test };

std::string_view to_string(Scheme scheme);
std::string_view to_string(Role role);
Scheme parse_scheme(std::string_view text);
Role parse_role(std::string_view text);

inline constexpr int kFseThickness = 2;
inline constexpr int kSbdThickness = 3;
inline constexpr int kSbdSplits = 4;

/// Class names in label-index order (index + 1 is the label value).
const std::array<std::string_view, 20>& sbd_class_names();
/// The five held-out classes for SBD split `index` (0..3).
std::vector<std::string> sbd_test_classes(int index);

struct SplitSpec {
    Scheme scheme = Scheme::Fse1000;
    int split_index = 0;     // sbd5i only
    std::uint64_t seed = 0;  // fse1000 class partition
};

struct SampleRecord {
    std::string sample;
    std::string image;  // relative to the manifest root
    std::string seg;
    std::string edge;

    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct ClassEntry {
    std::string name;
    Role role = Role::Train;
    std::vector<SampleRecord> records;

    friend bool operator==(const ClassEntry&, const ClassEntry&) = default;
};

struct DatasetManifest {
    std::string name;
    Scheme scheme = Scheme::Fse1000;
    int split_index = 0;
    std::uint64_t seed = 0;
    int thickness = kFseThickness;
    std::string resize_policy; // "native" or "load-time-320"
    std::vector<ClassEntry> classes;
    fs::path root; // directory that record paths resolve against (not serialised)

    std::vector<const ClassEntry*> classes_with_role(Role role) const;
    const ClassEntry* find_class(std::string_view name) const;
    fs::path resolve(const std::string& relative) const;

    friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
        return a.name == b.name && a.scheme == b.scheme && a.split_index == b.split_index &&
               a.seed == b.seed && a.thickness == b.thickness &&
               a.resize_policy == b.resize_policy && a.classes == b.classes;
    }
};

struct BuildOptions {
    std::optional<int> thickness; // scheme default when unset
    std::string name;
};

/// Source layout: <source_root>/<class>/<stem>.png binary masks, each with an
/// image <stem>.jpg, <stem>.jpeg or <stem>.img.png. An optional
/// <source_root>/classes.txt lists the expected class folders.
DatasetManifest build_fse1000(const fs::path& source_root, const fs::path& out_root,
                              const SplitSpec& spec, const BuildOptions& options = {});

/// Source layout: <source_root>/images/<id>.{jpg,png} and
/// <source_root>/labels/<id>.png class-index maps (0 background, 1..20
/// classes, anything else ignored as background).
DatasetManifest build_sbd5i(const fs::path& source_root, const fs::path& out_root,
                            const SplitSpec& spec, const BuildOptions& options = {});

/// 4/5 of the classes (rounded down) go to training after a seeded shuffle.
std::vector<Role> partition_classes(std::size_t count, std::uint64_t seed);

void save_manifest(const DatasetManifest& manifest, const fs::path& path);
/// Validates schema, class disjointness, file existence and per-record
/// dimension agreement.
DatasetManifest load_manifest(const fs::path& path);

/// Structural checks shared by load and build.
void validate_manifest(const DatasetManifest& manifest, bool check_files);

// ---- synthetic shapes source ------------------------------------------------

struct SyntheticSpec {
    int classes = 10;
    int samples_per_class = 10;
    int size = 64;
    double distractor_probability = 0.5;
    std::uint64_t seed = 7;
};

/// Writes an FSE-style source of parametric polygons and ellipses. Each class
/// is a (shape, colour) pair; images may carry a distractor of another class
/// that is excluded from the mask.
void write_synthetic_source(const fs::path& source_root, const SyntheticSpec& spec);

} // namespace cafenet::datasets
