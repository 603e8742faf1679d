#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <set>

#include "cafenet/datasets.hpp"
#include "cafenet/image_io.hpp"
#include "cafenet/raster.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cafenet;
using namespace cafenet::datasets;
using testing::TempDir;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an error");
    return ErrorKind::Io;
}

std::string message_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

void write_label_map(const fs::path& path, const raster::Grid<std::uint8_t>& labels) {
    io::RawImage raw{labels.width(), labels.height(), 1, labels.storage()};
    io::write_png(path, raw);
}

/// SBD-style source: `labels[i]` becomes images/<i>.png + labels/<i>.png.
void write_sbd_source(const fs::path& root, const std::vector<raster::Grid<std::uint8_t>>& labels) {
    fs::create_directories(root / "images");
    fs::create_directories(root / "labels");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::string id = "im" + std::to_string(100 + i);
        io::save_image(root / "images" / (id + ".png"),
                       raster::make_image(3, labels[i].height(), labels[i].width(), 0.25));
        write_label_map(root / "labels" / (id + ".png"), labels[i]);
    }
}

} // namespace

TEST_CASE("SBD splits hold out the expected classes") {
    CHECK(sbd_test_classes(0) == std::vector<std::string>{"aeroplane", "bike", "bird", "boat", "bottle"});
    CHECK(sbd_test_classes(1) == std::vector<std::string>{"bus", "car", "cat", "chair", "cow"});
    CHECK(sbd_test_classes(2) == std::vector<std::string>{"table", "dog", "horse", "mbike", "person"});
    CHECK(sbd_test_classes(3) == std::vector<std::string>{"plant", "sheep", "sofa", "train", "tv"});
    CHECK(kind_of([] { sbd_test_classes(4); }) == ErrorKind::InvalidInput);
    CHECK(message_of([] { sbd_test_classes(5); }).find("0-3") != std::string::npos);
}

TEST_CASE("class partition is 4/5 train and seeded") {
    const auto roles = partition_classes(1000, 3);
    CHECK(std::count(roles.begin(), roles.end(), Role::Train) == 800);
    CHECK(std::count(roles.begin(), roles.end(), Role::Test) == 200);
    CHECK(partition_classes(1000, 3) == roles);
    CHECK(partition_classes(1000, 4) != roles);
    const auto small = partition_classes(3, 0);
    CHECK(std::count(small.begin(), small.end(), Role::Train) == 2);
}

TEST_CASE("fse1000 build on a miniature source") {
    TempDir dir("fse");
    SyntheticSpec spec;
    spec.classes = 3;
    spec.samples_per_class = 10;
    spec.size = 48;
    write_synthetic_source(dir / "source", spec);
    const SplitSpec split{Scheme::Fse1000, 0, 5};
    const DatasetManifest m = build_fse1000(dir / "source", dir / "out", split);
    CHECK(m.classes_with_role(Role::Train).size() == 2);
    CHECK(m.classes_with_role(Role::Test).size() == 1);
    CHECK(m.resize_policy == "native");
    CHECK(m.thickness == kFseThickness);

    for (const auto& c : m.classes) {
        CHECK(c.records.size() == 10);
        for (const auto& r : c.records) {
            const auto seg = io::load_mask(m.resolve(r.seg));
            const auto edge = io::load_mask(m.resolve(r.edge));
            CHECK(edge == oracle::boundary(seg, kFseThickness));
            CHECK(io::png_dimensions(m.resolve(r.image)).height == 48);
        }
    }

    const DatasetManifest again = build_fse1000(dir / "source", dir / "out2", split);
    CHECK(again == m);
    std::ifstream a(dir / "out" / "manifest.jsonl"), b(dir / "out2" / "manifest.jsonl");
    CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));
}

TEST_CASE("edge and segmentation labels agree on solid shapes") {
    TempDir dir("agree");
    SyntheticSpec spec;
    spec.classes = 12;
    spec.samples_per_class = 2;
    spec.size = 384;
    write_synthetic_source(dir / "source", spec);
    const DatasetManifest m = build_fse1000(dir / "source", dir / "out", {});
    for (const auto& c : m.classes)
        for (const auto& r : c.records) {
            const auto seg = io::load_mask(m.resolve(r.seg));
            // The outer half of the band scales with the perimeter, so use a photo-sized canvas.
            const auto filled = raster::fill_interior(io::load_mask(m.resolve(r.edge)));
            std::size_t agree = 0;
            for (std::size_t i = 0; i < seg.size(); ++i) agree += filled.values()[i] == seg.values()[i];
            CHECK(static_cast<double>(agree) / seg.size() >= 0.99);
        }
}

TEST_CASE("fse1000 build errors") {
    TempDir dir("fse_err");
    CHECK(kind_of([&] { build_fse1000(dir / "nope", dir / "out", {}); }) == ErrorKind::MissingSource);

    SyntheticSpec spec;
    spec.classes = 2;
    spec.samples_per_class = 2;
    spec.size = 32;
    write_synthetic_source(dir / "source", spec);
    std::ofstream(dir / "source" / "classes.txt") << "c00_ellipse_red\nghost_class\nother_ghost\n";
    const std::string msg = message_of([&] { build_fse1000(dir / "source", dir / "out", {}); });
    CHECK(kind_of([&] { build_fse1000(dir / "source", dir / "out", {}); }) == ErrorKind::BuildError);
    CHECK(msg.find("ghost_class") != std::string::npos);
    CHECK(msg.find("other_ghost") != std::string::npos);
    fs::remove(dir / "source" / "classes.txt");

    const fs::path first_class = *fs::directory_iterator(dir / "source");
    fs::path mask;
    for (const auto& e : fs::directory_iterator(first_class))
        if (e.path().filename().string().find(".img.png") == std::string::npos) mask = e.path();
    io::RawImage grey{32, 32, 1, std::vector<std::uint8_t>(32 * 32, 128)};
    io::write_png(mask, grey);
    CHECK(kind_of([&] { build_fse1000(dir / "source", dir / "out", {}); }) == ErrorKind::InvalidSource);
}

TEST_CASE("sbd5i projects each class to its own binary mask") {
    TempDir dir("sbd");
    raster::Grid<std::uint8_t> two(20, 24, 0);
    for (int y = 4; y < 12; ++y)
        for (int x = 3; x < 9; ++x) two(y, x) = 1;
    for (int y = 6; y < 16; ++y)
        for (int x = 12; x < 20; ++x) two(y, x) = 7;
    two(0, 0) = 255; // ignore label
    raster::Grid<std::uint8_t> car_only(20, 24, 0);
    for (int y = 2; y < 10; ++y)
        for (int x = 2; x < 10; ++x) car_only(y, x) = 7;
    raster::Grid<std::uint8_t> empty(20, 24, 0);
    write_sbd_source(dir / "source", {two, car_only, empty});

    const DatasetManifest m = build_sbd5i(dir / "source", dir / "out", {Scheme::Sbd5i, 0, 0});
    CHECK(m.classes.size() == 20);
    CHECK(m.resize_policy == "load-time-320");
    CHECK(m.thickness == kSbdThickness);
    const ClassEntry* plane = m.find_class("aeroplane");
    const ClassEntry* car = m.find_class("car");
    REQUIRE(plane);
    REQUIRE(car);
    CHECK(plane->role == Role::Test);
    CHECK(car->role == Role::Train);
    // Record count equals the number of source images containing the class.
    CHECK(plane->records.size() == 1);
    CHECK(car->records.size() == 2);
    std::size_t total = 0;
    for (const auto& c : m.classes) total += c.records.size();
    CHECK(total == 3);

    const auto plane_seg = io::load_mask(m.resolve(plane->records[0].seg));
    const auto car_seg = io::load_mask(m.resolve(car->records[0].seg));
    for (int y = 0; y < 20; ++y)
        for (int x = 0; x < 24; ++x) {
            CHECK(plane_seg(y, x) == (two(y, x) == 1 ? 1 : 0));
            CHECK(car_seg(y, x) == (two(y, x) == 7 ? 1 : 0));
        }
    CHECK(io::load_mask(m.resolve(car->records[0].edge)) == oracle::boundary(car_seg, kSbdThickness));
    CHECK(plane->records[0].sample == car->records[0].sample);

    const DatasetManifest split2 = build_sbd5i(dir / "source", dir / "out2", {Scheme::Sbd5i, 2, 0});
    std::set<std::string> held;
    for (const auto* c : split2.classes_with_role(Role::Test)) held.insert(c->name);
    CHECK(held == std::set<std::string>{"table", "dog", "horse", "mbike", "person"});
    CHECK(split2.classes_with_role(Role::Train).size() == 15);

    CHECK(kind_of([&] { build_sbd5i(dir / "source", dir / "out3", {Scheme::Sbd5i, 5, 0}); }) ==
          ErrorKind::InvalidInput);
}

TEST_CASE("manifest round trip and validation") {
    TempDir dir("manifest");
    const DatasetManifest m = testing::synthetic_dataset(dir.path(), 5, 4, 32, 2);
    const fs::path path = dir / "data" / "manifest.jsonl";
    CHECK(load_manifest(path) == m);
    save_manifest(m, dir / "data" / "copy.jsonl");
    CHECK(load_manifest(dir / "data" / "copy.jsonl") == m);

    DatasetManifest overlap = m;
    ClassEntry dup = overlap.classes[0];
    dup.role = dup.role == Role::Train ? Role::Test : Role::Train;
    overlap.classes.push_back(dup);
    save_manifest(overlap, dir / "data" / "overlap.jsonl");
    CHECK(kind_of([&] { load_manifest(dir / "data" / "overlap.jsonl"); }) == ErrorKind::Overlap);

    const fs::path victim = m.resolve(m.classes[1].records[2].edge);
    fs::remove(victim);
    CHECK(kind_of([&] { load_manifest(path); }) == ErrorKind::MissingSource);
    CHECK(message_of([&] { load_manifest(path); }).find(victim.filename().string()) != std::string::npos);

    CHECK(kind_of([&] { load_manifest(dir / "absent.jsonl"); }) == ErrorKind::MissingSource);
    std::ofstream(dir / "bad.jsonl") << "{\"type\":\"record\"}\n";
    CHECK(kind_of([&] { load_manifest(dir / "bad.jsonl"); }) == ErrorKind::Schema);
}

TEST_CASE("data root override") {
    TempDir dir("root");
    const DatasetManifest m = testing::synthetic_dataset(dir.path(), 5, 3, 32, 1);
    fs::copy_file(dir / "data" / "manifest.jsonl", dir / "manifest.jsonl");
    CHECK(kind_of([&] { load_manifest(dir / "manifest.jsonl"); }) == ErrorKind::MissingSource);
    ::setenv("CAFENET_DATA_ROOT", (dir / "data").c_str(), 1);
    const DatasetManifest moved = load_manifest(dir / "manifest.jsonl");
    ::unsetenv("CAFENET_DATA_ROOT");
    CHECK(moved == m);
}

TEST_CASE("synthetic source is deterministic") {
    TempDir dir("synth");
    SyntheticSpec spec;
    spec.classes = 2;
    spec.samples_per_class = 3;
    spec.size = 32;
    write_synthetic_source(dir / "a", spec);
    write_synthetic_source(dir / "b", spec);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
        if (!e.is_regular_file()) continue;
        ++files;
        const fs::path twin = dir / "b" / fs::relative(e.path(), dir / "a");
        std::ifstream x(e.path(), std::ios::binary), y(twin, std::ios::binary);
        CHECK(std::string(std::istreambuf_iterator<char>(x), {}) == std::string(std::istreambuf_iterator<char>(y), {}));
    }
    CHECK(files == 12);
}
