#include "cafenet/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>

#include <jpeglib.h>
#include <png.h>

namespace cafenet::io {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
    FilePtr file(std::fopen(path.c_str(), mode));
    if (!file) {
        if (mode[0] == 'r')
            fail(ErrorKind::MissingSource, "cannot open file: " + path.string());
        fail(ErrorKind::Io, "cannot write file: " + path.string());
    }
    return file;
}

struct PngReader {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngReader() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

struct PngWriter {
    png_structp png = nullptr;
    png_infop info = nullptr;
    ~PngWriter() { png_destroy_write_struct(&png, info ? &info : nullptr); }
};

void png_warning_ignore(png_structp, png_const_charp) {}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

} // namespace

RawImage read_png(const fs::path& path, bool keep_palette_indices) {
    FilePtr file = open_file(path, "rb");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        fail(ErrorKind::Corruption, "not a PNG file: " + path.string());

    PngReader r;
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_ignore);
    r.info = png_create_info_struct(r.png);
    RawImage out;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(r.png)))
        fail(ErrorKind::Corruption, "png decode failed: " + path.string());
    png_init_io(r.png, file.get());
    png_set_sig_bytes(r.png, 8);
    png_read_info(r.png, r.info);

    const int color = png_get_color_type(r.png, r.info);
    const int depth = png_get_bit_depth(r.png, r.info);
    if (depth == 16)
        png_set_strip_16(r.png);
    if (color == PNG_COLOR_TYPE_PALETTE) {
        if (keep_palette_indices) {
            if (depth < 8) png_set_packing(r.png);
        } else {
            png_set_palette_to_rgb(r.png);
        }
    }
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8)
        png_set_expand_gray_1_2_4_to_8(r.png);
    if (!(color == PNG_COLOR_TYPE_PALETTE && keep_palette_indices)) {
        if (png_get_valid(r.png, r.info, PNG_INFO_tRNS))
            png_set_tRNS_to_alpha(r.png);
    }
    png_read_update_info(r.png, r.info);

    out.width = static_cast<int>(png_get_image_width(r.png, r.info));
    out.height = static_cast<int>(png_get_image_height(r.png, r.info));
    out.channels = png_get_channels(r.png, r.info);
    const std::size_t row_bytes = png_get_rowbytes(r.png, r.info);
    out.samples.resize(row_bytes * out.height);
    rows.resize(out.height);
    for (int y = 0; y < out.height; ++y)
        rows[y] = out.samples.data() + row_bytes * y;
    png_read_image(r.png, rows.data());
    png_read_end(r.png, nullptr);
    return out;
}

Dimensions png_dimensions(const fs::path& path) {
    FilePtr file = open_file(path, "rb");
    unsigned char sig[8];
    if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
        fail(ErrorKind::Corruption, "not a PNG file: " + path.string());
    PngReader r;
    r.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_ignore);
    r.info = png_create_info_struct(r.png);
    if (setjmp(png_jmpbuf(r.png)))
        fail(ErrorKind::Corruption, "png header unreadable: " + path.string());
    png_init_io(r.png, file.get());
    png_set_sig_bytes(r.png, 8);
    png_read_info(r.png, r.info);
    return {static_cast<int>(png_get_image_height(r.png, r.info)),
            static_cast<int>(png_get_image_width(r.png, r.info))};
}

namespace {

struct JpegErrorManager {
    jpeg_error_mgr base;
    std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
    auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
    std::longjmp(err->jump, 1);
}

} // namespace

RawImage read_jpeg(const fs::path& path) {
    FilePtr file = open_file(path, "rb");
    jpeg_decompress_struct cinfo{};
    JpegErrorManager err{};
    cinfo.err = jpeg_std_error(&err.base);
    err.base.error_exit = jpeg_error_exit;
    RawImage out;
    if (setjmp(err.jump)) {
        jpeg_destroy_decompress(&cinfo);
        fail(ErrorKind::Corruption, "jpeg decode failed: " + path.string());
    }
    jpeg_create_decompress(&cinfo);
    jpeg_stdio_src(&cinfo, file.get());
    jpeg_read_header(&cinfo, TRUE);
    jpeg_start_decompress(&cinfo);
    out.width = static_cast<int>(cinfo.output_width);
    out.height = static_cast<int>(cinfo.output_height);
    out.channels = cinfo.output_components;
    const std::size_t stride = static_cast<std::size_t>(out.width) * out.channels;
    out.samples.resize(stride * out.height);
    while (cinfo.output_scanline < cinfo.output_height) {
        JSAMPROW row = out.samples.data() + stride * cinfo.output_scanline;
        jpeg_read_scanlines(&cinfo, &row, 1);
    }
    jpeg_finish_decompress(&cinfo);
    jpeg_destroy_decompress(&cinfo);
    return out;
}

RawImage read_raw(const fs::path& path) {
    std::string ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".jpg" || ext == ".jpeg")
        return read_jpeg(path);
    return read_png(path);
}

void write_png(const fs::path& path, const RawImage& image) {
    require(image.channels == 1 || image.channels == 3 || image.channels == 4, ErrorKind::InvalidInput,
            "write_png: unsupported channel count");
    require(image.samples.size() ==
                static_cast<std::size_t>(image.width) * image.height * image.channels,
            ErrorKind::Shape, "write_png: sample buffer size mismatch");
    if (path.has_parent_path())
        fs::create_directories(path.parent_path());
    FilePtr file = open_file(path, "wb");
    PngWriter w;
    w.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warning_ignore);
    w.info = png_create_info_struct(w.png);
    if (setjmp(png_jmpbuf(w.png)))
        fail(ErrorKind::Io, "png encode failed: " + path.string());
    png_init_io(w.png, file.get());
    const int color = image.channels == 1   ? PNG_COLOR_TYPE_GRAY
                      : image.channels == 3 ? PNG_COLOR_TYPE_RGB
                                            : PNG_COLOR_TYPE_RGBA;
    png_set_IHDR(w.png, w.info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
    for (int y = 0; y < image.height; ++y)
        png_write_row(w.png, const_cast<png_bytep>(image.samples.data() + stride * y));
    png_write_end(w.png, nullptr);
}

raster::Image load_image(const fs::path& path) {
    const RawImage raw = read_raw(path);
    raster::Image img = raster::make_image(3, raw.height, raw.width);
    for (int y = 0; y < raw.height; ++y) {
        for (int x = 0; x < raw.width; ++x) {
            const std::size_t base = (static_cast<std::size_t>(y) * raw.width + x) * raw.channels;
            for (int c = 0; c < 3; ++c) {
                const int src = raw.channels >= 3 ? c : 0;
                img.planes[c](y, x) = raw.samples[base + src] / 255.0;
            }
        }
    }
    return img;
}

void save_image(const fs::path& path, const raster::Image& image) {
    require(image.channels() == 1 || image.channels() == 3, ErrorKind::InvalidInput,
            "save_image: expected 1 or 3 channels");
    RawImage raw{image.width(), image.height(), image.channels(), {}};
    raw.samples.resize(static_cast<std::size_t>(raw.width) * raw.height * raw.channels);
    for (int y = 0; y < raw.height; ++y)
        for (int x = 0; x < raw.width; ++x)
            for (int c = 0; c < raw.channels; ++c)
                raw.samples[(static_cast<std::size_t>(y) * raw.width + x) * raw.channels + c] =
                    to_byte(image.planes[c](y, x));
    write_png(path, raw);
}

raster::BinaryMask load_mask(const fs::path& path) {
    const RawImage raw = read_raw(path);
    raster::BinaryMask mask(raw.height, raw.width);
    for (int y = 0; y < raw.height; ++y) {
        for (int x = 0; x < raw.width; ++x) {
            const std::uint8_t v =
                raw.samples[(static_cast<std::size_t>(y) * raw.width + x) * raw.channels];
            if (v != 0 && v != 255)
                fail(ErrorKind::InvalidSource, "non-binary mask value " + std::to_string(v) +
                                                   " in " + path.string());
            mask(y, x) = v == 255 ? 1 : 0;
        }
    }
    return mask;
}

void save_mask(const fs::path& path, const raster::BinaryMask& mask) {
    RawImage raw{mask.width(), mask.height(), 1, {}};
    raw.samples.reserve(mask.size());
    for (std::uint8_t v : mask.values())
        raw.samples.push_back(v ? 255 : 0);
    write_png(path, raw);
}

void save_soft_mask(const fs::path& path, const raster::SoftMask& mask) {
    RawImage raw{mask.width(), mask.height(), 1, {}};
    raw.samples.reserve(mask.size());
    for (double v : mask.values())
        raw.samples.push_back(to_byte(v));
    write_png(path, raw);
}

raster::Grid<std::uint8_t> load_label_map(const fs::path& path) {
    std::string ext = path.extension().string();
    const RawImage raw = (ext == ".png") ? read_png(path, true) : read_raw(path);
    raster::Grid<std::uint8_t> labels(raw.height, raw.width);
    for (int y = 0; y < raw.height; ++y)
        for (int x = 0; x < raw.width; ++x)
            labels(y, x) = raw.samples[(static_cast<std::size_t>(y) * raw.width + x) * raw.channels];
    return labels;
}

} // namespace cafenet::io
