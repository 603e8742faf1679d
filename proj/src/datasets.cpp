#include "cafenet/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <set>

#include <json.hpp>

#include "cafenet/image_io.hpp"
#include "cafenet/random.hpp"
#include "cafenet/raster.hpp"

namespace cafenet::datasets {

using nlohmann::json;
using raster::BinaryMask;

namespace {

constexpr std::string_view kManifestFormat = "cafenet-manifest";
constexpr int kManifestVersion = 1;

constexpr std::array<std::string_view, 20> kSbdClasses = {
    "aeroplane", "bike",  "bird",  "boat",  "bottle", "bus",   "car",
    "cat",       "chair", "cow",   "table", "dog",    "horse", "mbike",
    "person",    "plant", "sheep", "sofa",  "train",  "tv"};

void write_sample(const fs::path& out_root, const std::string& class_name, const std::string& stem,
                  const raster::Image& image, const BinaryMask& seg, const BinaryMask& edge,
                  ClassEntry& entry) {
    const fs::path dir = out_root / class_name;
    fs::create_directories(dir);
    SampleRecord rec;
    rec.sample = stem;
    rec.image = class_name + "/" + stem + ".img.png";
    rec.seg = class_name + "/" + stem + ".seg.png";
    rec.edge = class_name + "/" + stem + ".edge.png";
    io::save_image(out_root / rec.image, image);
    io::save_mask(out_root / rec.seg, seg);
    io::save_mask(out_root / rec.edge, edge);
    entry.records.push_back(std::move(rec));
}

std::vector<std::string> sorted_subdirectories(const fs::path& root) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(root))
        if (entry.is_directory())
            names.push_back(entry.path().filename().string());
    std::sort(names.begin(), names.end());
    return names;
}

std::optional<fs::path> image_for_mask(const fs::path& dir, const std::string& stem) {
    for (const char* ext : {".jpg", ".jpeg", ".img.png", ".JPG"}) {
        fs::path candidate = dir / (stem + ext);
        if (fs::exists(candidate))
            return candidate;
    }
    return std::nullopt;
}

void require_source_root(const fs::path& source_root) {
    require(fs::is_directory(source_root), ErrorKind::MissingSource,
            "source directory does not exist: " + source_root.string());
}

std::string atomic_tmp_name(const fs::path& path) { return path.string() + ".tmp"; }

} // namespace

std::string_view to_string(Scheme scheme) {
    return scheme == Scheme::Fse1000 ? "fse1000" : "sbd5i";
}

std::string_view to_string(Role role) { return role == Role::Train ? "train" : "test"; }

Scheme parse_scheme(std::string_view text) {
    if (text == "fse1000") return Scheme::Fse1000;
    if (text == "sbd5i") return Scheme::Sbd5i;
    fail(ErrorKind::InvalidInput, "unknown scheme '" + std::string(text) + "' (expected fse1000 or sbd5i)");
}

Role parse_role(std::string_view text) {
    if (text == "train") return Role::Train;
    if (text == "test") return Role::Test;
    fail(ErrorKind::Schema, "unknown role '" + std::string(text) + "'");
}

const std::array<std::string_view, 20>& sbd_class_names() { return kSbdClasses; }

std::vector<std::string> sbd_test_classes(int index) {
    require(index >= 0 && index < kSbdSplits, ErrorKind::InvalidInput,
            "invalid split index " + std::to_string(index) + " (valid range 0-3)");
    std::vector<std::string> out;
    for (int i = 0; i < 5; ++i)
        out.emplace_back(kSbdClasses[static_cast<std::size_t>(index * 5 + i)]);
    return out;
}

std::vector<const ClassEntry*> DatasetManifest::classes_with_role(Role role) const {
    std::vector<const ClassEntry*> out;
    for (const auto& c : classes)
        if (c.role == role)
            out.push_back(&c);
    return out;
}

const ClassEntry* DatasetManifest::find_class(std::string_view name) const {
    for (const auto& c : classes)
        if (c.name == name)
            return &c;
    return nullptr;
}

fs::path DatasetManifest::resolve(const std::string& relative) const {
    if (const char* override_root = std::getenv("CAFENET_DATA_ROOT"); override_root && *override_root)
        return fs::path(override_root) / relative;
    return root / relative;
}

std::vector<Role> partition_classes(std::size_t count, std::uint64_t seed) {
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i)
        order[i] = i;
    Rng rng(seed);
    for (std::size_t i = count; i > 1; --i)
        std::swap(order[i - 1], order[uniform_index(rng, i)]);
    const std::size_t n_train = count * 4 / 5;
    std::vector<Role> roles(count, Role::Test);
    for (std::size_t i = 0; i < n_train; ++i)
        roles[order[i]] = Role::Train;
    return roles;
}

DatasetManifest build_fse1000(const fs::path& source_root, const fs::path& out_root,
                              const SplitSpec& spec, const BuildOptions& options) {
    require_source_root(source_root);
    const int thickness = options.thickness.value_or(kFseThickness);
    require(thickness >= 1, ErrorKind::InvalidInput, "thickness must be >= 1");

    std::vector<std::string> classes = sorted_subdirectories(source_root);
    if (const fs::path listing = source_root / "classes.txt"; fs::exists(listing)) {
        std::ifstream in(listing);
        std::vector<std::string> missing;
        for (std::string line; std::getline(in, line);) {
            if (line.empty()) continue;
            if (!std::binary_search(classes.begin(), classes.end(), line))
                missing.push_back(line);
        }
        if (!missing.empty()) {
            std::string msg = "missing class folders:";
            for (const auto& m : missing)
                msg += " " + m;
            fail(ErrorKind::BuildError, msg);
        }
    }
    require(!classes.empty(), ErrorKind::EmptyInput,
            "no class folders found in " + source_root.string());

    DatasetManifest manifest;
    manifest.name = options.name.empty() ? "fse1000" : options.name;
    manifest.scheme = Scheme::Fse1000;
    manifest.seed = spec.seed;
    manifest.thickness = thickness;
    manifest.resize_policy = "native";
    manifest.root = out_root;
    fs::create_directories(out_root);

    const std::vector<Role> roles = partition_classes(classes.size(), spec.seed);
    for (std::size_t ci = 0; ci < classes.size(); ++ci) {
        const fs::path dir = source_root / classes[ci];
        std::vector<std::string> stems;
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string file = entry.path().filename().string();
            if (entry.path().extension() == ".png" && file.find(".img.png") == std::string::npos)
                stems.push_back(entry.path().stem().string());
        }
        std::sort(stems.begin(), stems.end());
        ClassEntry entry{classes[ci], roles[ci], {}};
        for (const auto& stem : stems) {
            const auto image_path = image_for_mask(dir, stem);
            require(image_path.has_value(), ErrorKind::InvalidSource,
                    "mask without image: " + (dir / (stem + ".png")).string());
            const BinaryMask seg = io::load_mask(dir / (stem + ".png"));
            const raster::Image image = io::load_image(*image_path);
            require(image.height() == seg.height() && image.width() == seg.width(),
                    ErrorKind::InvalidSource, "image/mask size mismatch for " + image_path->string());
            write_sample(out_root, classes[ci], stem, image,
                         seg, raster::extract_boundary(seg, thickness), entry);
        }
        manifest.classes.push_back(std::move(entry));
    }
    validate_manifest(manifest, false);
    save_manifest(manifest, out_root / "manifest.jsonl");
    return manifest;
}

DatasetManifest build_sbd5i(const fs::path& source_root, const fs::path& out_root,
                            const SplitSpec& spec, const BuildOptions& options) {
    const std::vector<std::string> test_classes = sbd_test_classes(spec.split_index);
    require_source_root(source_root);
    const fs::path images_dir = source_root / "images";
    const fs::path labels_dir = source_root / "labels";
    require(fs::is_directory(images_dir) && fs::is_directory(labels_dir), ErrorKind::MissingSource,
            "sbd5i source needs images/ and labels/ under " + source_root.string());
    const int thickness = options.thickness.value_or(kSbdThickness);
    require(thickness >= 1, ErrorKind::InvalidInput, "thickness must be >= 1");

    DatasetManifest manifest;
    manifest.name = options.name.empty() ? "sbd5i-" + std::to_string(spec.split_index) : options.name;
    manifest.scheme = Scheme::Sbd5i;
    manifest.split_index = spec.split_index;
    manifest.seed = spec.seed;
    manifest.thickness = thickness;
    manifest.resize_policy = "load-time-320";
    manifest.root = out_root;
    for (auto name : kSbdClasses) {
        const bool is_test =
            std::find(test_classes.begin(), test_classes.end(), name) != test_classes.end();
        manifest.classes.push_back({std::string(name), is_test ? Role::Test : Role::Train, {}});
    }

    std::vector<fs::path> label_files;
    for (const auto& entry : fs::directory_iterator(labels_dir))
        if (entry.path().extension() == ".png")
            label_files.push_back(entry.path());
    std::sort(label_files.begin(), label_files.end());
    require(!label_files.empty(), ErrorKind::EmptyInput, "no label maps in " + labels_dir.string());
    fs::create_directories(out_root);

    for (const auto& label_path : label_files) {
        const std::string id = label_path.stem().string();
        std::optional<fs::path> image_path;
        for (const char* ext : {".jpg", ".jpeg", ".png"})
            if (fs::exists(images_dir / (id + ext))) {
                image_path = images_dir / (id + ext);
                break;
            }
        require(image_path.has_value(), ErrorKind::InvalidSource, "label without image: " + id);
        const auto labels = io::load_label_map(label_path);
        std::set<int> present;
        for (std::uint8_t v : labels.values())
            if (v >= 1 && v <= 20)
                present.insert(v);
        if (present.empty())
            continue;
        const raster::Image image = io::load_image(*image_path);
        require(image.height() == labels.height() && image.width() == labels.width(),
                ErrorKind::InvalidSource, "image/label size mismatch for " + id);
        for (int cls : present) {
            BinaryMask seg(labels.height(), labels.width());
            for (std::size_t i = 0; i < seg.size(); ++i)
                seg.values()[i] = labels.values()[i] == cls ? 1 : 0;
            auto& entry = manifest.classes[static_cast<std::size_t>(cls - 1)];
            write_sample(out_root, entry.name, id, image, seg,
                         raster::extract_boundary(seg, thickness), entry);
        }
    }
    validate_manifest(manifest, false);
    save_manifest(manifest, out_root / "manifest.jsonl");
    return manifest;
}

void validate_manifest(const DatasetManifest& manifest, bool check_files) {
    std::map<std::string, Role> seen;
    for (const auto& c : manifest.classes) {
        auto [it, inserted] = seen.emplace(c.name, c.role);
        if (!inserted) {
            require(it->second == c.role, ErrorKind::Overlap,
                    "class '" + c.name + "' appears in both train and test splits");
            fail(ErrorKind::Schema, "class '" + c.name + "' listed twice");
        }
    }
    if (!check_files)
        return;
    for (const auto& c : manifest.classes) {
        for (const auto& r : c.records) {
            io::Dimensions dims{};
            bool first = true;
            for (const std::string* rel : {&r.image, &r.seg, &r.edge}) {
                const fs::path p = manifest.resolve(*rel);
                require(fs::exists(p), ErrorKind::MissingSource, "manifest references missing file: " + p.string());
                const io::Dimensions d = io::png_dimensions(p);
                if (!first)
                    require(d.height == dims.height && d.width == dims.width, ErrorKind::Shape,
                            "record '" + c.name + "/" + r.sample + "' has files of different sizes");
                dims = d;
                first = false;
            }
        }
    }
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path) {
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    const std::string tmp = atomic_tmp_name(path);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(out), ErrorKind::Io, "cannot write manifest: " + path.string());
        json header = {
            {"type", "header"},
            {"format", kManifestFormat},
            {"version", kManifestVersion},
            {"name", manifest.name},
            {"scheme", to_string(manifest.scheme)},
            {"split_index", manifest.split_index},
            {"seed", manifest.seed},
            {"thickness", manifest.thickness},
            {"resize_policy", manifest.resize_policy},
        };
        json classes = json::array();
        for (const auto& c : manifest.classes)
            classes.push_back({{"name", c.name}, {"role", to_string(c.role)}});
        header["classes"] = classes;
        out << header.dump() << '\n';
        for (const auto& c : manifest.classes)
            for (const auto& r : c.records)
                out << json{{"type", "record"},
                            {"class", c.name},
                            {"sample", r.sample},
                            {"image", r.image},
                            {"seg", r.seg},
                            {"edge", r.edge}}
                           .dump()
                    << '\n';
        require(static_cast<bool>(out), ErrorKind::Io, "failed writing manifest: " + path.string());
    }
    fs::rename(tmp, path);
}

DatasetManifest load_manifest(const fs::path& path) {
    require(fs::exists(path), ErrorKind::MissingSource, "manifest not found: " + path.string());
    std::ifstream in(path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Schema,
            "manifest is empty: " + path.string());

    DatasetManifest m;
    m.root = path.parent_path();
    try {
        const json header = json::parse(line);
        require(header.value("type", "") == "header" &&
                    header.value("format", "") == kManifestFormat,
                ErrorKind::Schema, "manifest header missing or malformed");
        require(header.at("version").get<int>() == kManifestVersion, ErrorKind::Version,
                "unsupported manifest version " + header.at("version").dump());
        m.name = header.at("name").get<std::string>();
        m.scheme = parse_scheme(header.at("scheme").get<std::string>());
        m.split_index = header.at("split_index").get<int>();
        m.seed = header.at("seed").get<std::uint64_t>();
        m.thickness = header.at("thickness").get<int>();
        m.resize_policy = header.at("resize_policy").get<std::string>();
        for (const auto& c : header.at("classes"))
            m.classes.push_back({c.at("name").get<std::string>(),
                                 parse_role(c.at("role").get<std::string>()), {}});
        validate_manifest(m, false);

        std::map<std::string, std::size_t> index;
        for (std::size_t i = 0; i < m.classes.size(); ++i)
            index[m.classes[i].name] = i;
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const json rec = json::parse(line);
            require(rec.value("type", "") == "record", ErrorKind::Schema,
                    "line " + std::to_string(line_no) + ": expected a record");
            const std::string cls = rec.at("class").get<std::string>();
            auto it = index.find(cls);
            require(it != index.end(), ErrorKind::Schema,
                    "line " + std::to_string(line_no) + ": unknown class '" + cls + "'");
            m.classes[it->second].records.push_back({rec.at("sample").get<std::string>(),
                                                     rec.at("image").get<std::string>(),
                                                     rec.at("seg").get<std::string>(),
                                                     rec.at("edge").get<std::string>()});
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::Schema, "manifest schema violation in " + path.string() + ": " + e.what());
    }
    validate_manifest(m, true);
    return m;
}

// ---- synthetic source --------------------------------------------------------

namespace {

enum class ShapeKind { Ellipse, Triangle, Rectangle, Pentagon, Hexagon, Star, Cross, Diamond };

struct ClassStyle {
    ShapeKind kind;
    std::array<double, 3> color;
    const char* label;
};

constexpr std::array<ClassStyle, 12> kStyles = {{
    {ShapeKind::Ellipse, {0.85, 0.15, 0.15}, "ellipse_red"},
    {ShapeKind::Triangle, {0.15, 0.75, 0.20}, "triangle_green"},
    {ShapeKind::Rectangle, {0.15, 0.25, 0.85}, "rectangle_blue"},
    {ShapeKind::Pentagon, {0.90, 0.85, 0.15}, "pentagon_yellow"},
    {ShapeKind::Hexagon, {0.80, 0.20, 0.80}, "hexagon_magenta"},
    {ShapeKind::Star, {0.15, 0.80, 0.85}, "star_cyan"},
    {ShapeKind::Cross, {0.95, 0.55, 0.10}, "cross_orange"},
    {ShapeKind::Diamond, {0.95, 0.95, 0.95}, "diamond_white"},
    {ShapeKind::Ellipse, {0.45, 0.20, 0.65}, "ellipse_purple"},
    {ShapeKind::Triangle, {0.55, 0.35, 0.15}, "triangle_brown"},
    {ShapeKind::Hexagon, {0.20, 0.50, 0.30}, "hexagon_olive"},
    {ShapeKind::Star, {0.95, 0.60, 0.70}, "star_pink"},
}};

struct Point {
    double x, y;
};

std::vector<Point> polygon_for(ShapeKind kind, Point c, double r, double angle) {
    std::vector<Point> local;
    auto regular = [&](int n, double radius) {
        for (int i = 0; i < n; ++i) {
            const double a = 2.0 * std::numbers::pi * i / n;
            local.push_back({radius * std::cos(a), radius * std::sin(a)});
        }
    };
    switch (kind) {
    case ShapeKind::Triangle: regular(3, r); break;
    case ShapeKind::Pentagon: regular(5, r); break;
    case ShapeKind::Hexagon: regular(6, r); break;
    case ShapeKind::Diamond:
        local = {{r, 0}, {0, 0.6 * r}, {-r, 0}, {0, -0.6 * r}};
        break;
    case ShapeKind::Rectangle:
        local = {{r * 0.8, r * 0.55}, {-r * 0.8, r * 0.55}, {-r * 0.8, -r * 0.55}, {r * 0.8, -r * 0.55}};
        break;
    case ShapeKind::Star:
        for (int i = 0; i < 10; ++i) {
            const double a = 2.0 * std::numbers::pi * i / 10;
            const double rr = i % 2 == 0 ? r : 0.5 * r;
            local.push_back({rr * std::cos(a), rr * std::sin(a)});
        }
        break;
    case ShapeKind::Cross: {
        const double a = r, b = 0.38 * r;
        local = {{b, a}, {-b, a}, {-b, b}, {-a, b}, {-a, -b}, {-b, -b},
                 {-b, -a}, {b, -a}, {b, -b}, {a, -b}, {a, b}, {b, b}};
        break;
    }
    case ShapeKind::Ellipse: break;
    }
    std::vector<Point> out;
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (const auto& p : local)
        out.push_back({c.x + p.x * ca - p.y * sa, c.y + p.x * sa + p.y * ca});
    return out;
}

bool inside_polygon(const std::vector<Point>& poly, double x, double y) {
    bool in = false;
    for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
        const Point a = poly[i], b = poly[j];
        if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x)
            in = !in;
    }
    return in;
}

BinaryMask render_shape(ShapeKind kind, int size, Point c, double r, double angle) {
    BinaryMask mask(size, size, 0);
    if (kind == ShapeKind::Ellipse) {
        const double ax = r, ay = 0.62 * r;
        const double ca = std::cos(angle), sa = std::sin(angle);
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double dx = x - c.x, dy = y - c.y;
                const double u = dx * ca + dy * sa, v = -dx * sa + dy * ca;
                if ((u * u) / (ax * ax) + (v * v) / (ay * ay) <= 1.0)
                    mask(y, x) = 1;
            }
        return mask;
    }
    const auto poly = polygon_for(kind, c, r, angle);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            if (inside_polygon(poly, x, y))
                mask(y, x) = 1;
    return mask;
}

} // namespace

void write_synthetic_source(const fs::path& source_root, const SyntheticSpec& spec) {
    require(spec.classes >= 1 && spec.classes <= static_cast<int>(kStyles.size()),
            ErrorKind::InvalidInput,
            "synthetic source supports 1.." + std::to_string(kStyles.size()) + " classes");
    require(spec.size >= 32 && spec.samples_per_class >= 1, ErrorKind::InvalidInput,
            "synthetic source needs size >= 32 and at least one sample per class");
    fs::create_directories(source_root);
    Rng rng(spec.seed);
    const double size = spec.size;
    for (int ci = 0; ci < spec.classes; ++ci) {
        const ClassStyle& style = kStyles[static_cast<std::size_t>(ci)];
        char name[64];
        std::snprintf(name, sizeof(name), "c%02d_%s", ci, style.label);
        const fs::path dir = source_root / name;
        fs::create_directories(dir);
        for (int si = 0; si < spec.samples_per_class; ++si) {
            // Target shape kept >= 3 px away from the frame so its outline is closed.
            const double r = uniform_real(rng, 0.16, 0.24) * size;
            const double margin = r + 3.0;
            const Point c{uniform_real(rng, margin, size - 1 - margin),
                          uniform_real(rng, margin, size - 1 - margin)};
            const BinaryMask target =
                render_shape(style.kind, spec.size, c, r, uniform_real(rng, 0.0, std::numbers::pi));

            raster::Image image = raster::make_image(3, spec.size, spec.size);
            const double base = uniform_real(rng, 0.25, 0.6);
            for (int y = 0; y < spec.size; ++y)
                for (int x = 0; x < spec.size; ++x) {
                    const double shade = base + 0.08 * std::sin(0.2 * x + 0.13 * y);
                    for (int ch = 0; ch < 3; ++ch)
                        image.planes[ch](y, x) = std::clamp(shade + uniform_real(rng, -0.04, 0.04), 0.0, 1.0);
                }

            if (spec.classes > 1 && uniform_real(rng, 0.0, 1.0) < spec.distractor_probability) {
                const BinaryMask grown = raster::dilate(target, raster::StructuringElement(4));
                int other = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(spec.classes - 1)));
                if (other >= ci) ++other;
                const ClassStyle& ds = kStyles[static_cast<std::size_t>(other)];
                for (int attempt = 0; attempt < 40; ++attempt) {
                    const double dr = uniform_real(rng, 0.10, 0.16) * size;
                    const Point dc{uniform_real(rng, dr + 2, size - 3 - dr),
                                   uniform_real(rng, dr + 2, size - 3 - dr)};
                    const BinaryMask d = render_shape(ds.kind, spec.size, dc, dr,
                                                      uniform_real(rng, 0.0, std::numbers::pi));
                    bool overlaps = false;
                    for (std::size_t i = 0; i < d.size() && !overlaps; ++i)
                        overlaps = d.values()[i] && grown.values()[i];
                    if (overlaps) continue;
                    for (int y = 0; y < spec.size; ++y)
                        for (int x = 0; x < spec.size; ++x)
                            if (d(y, x))
                                for (int ch = 0; ch < 3; ++ch)
                                    image.planes[ch](y, x) = ds.color[ch];
                    break;
                }
            }
            for (int y = 0; y < spec.size; ++y)
                for (int x = 0; x < spec.size; ++x)
                    if (target(y, x))
                        for (int ch = 0; ch < 3; ++ch)
                            image.planes[ch](y, x) = std::clamp(
                                style.color[ch] + uniform_real(rng, -0.05, 0.05), 0.0, 1.0);

            const std::string stem = std::to_string(si + 1);
            io::save_image(dir / (stem + ".img.png"), image);
            io::save_mask(dir / (stem + ".png"), target);
        }
    }
}

} // namespace cafenet::datasets
