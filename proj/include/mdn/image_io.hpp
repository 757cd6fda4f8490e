#pragma once

// Frame storage: raw MDNVID1 tensor files (magic, u64 rank, u64 extents, u8
// payload, planar T x 3 x H x W) and per-frame RGB PNGs.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "mdn/checkpoint.hpp"  // u64 little-endian helpers
#include "mdn/tensor.hpp"

#ifdef MDN_HAVE_PNG
#include <png.h>
#endif

namespace mdn {

struct VideoU8 {
    Shape shape;  // (T, 3, H, W)
    std::vector<uint8_t> data;

    int64_t frames() const { return shape[0]; }
    int64_t height() const { return shape[2]; }
    int64_t width() const { return shape[3]; }
};

inline constexpr char kVideoMagic[] = "MDNVID1";

inline void write_mdnvid(const VideoU8& video, const std::filesystem::path& path) {
    check<ShapeError>(video.shape.size() == 4 && video.shape[1] == 3,
                      "mdnvid: expected (T,3,H,W), got ", shape_str(video.shape));
    check<ShapeError>(numel_of(video.shape) == static_cast<int64_t>(video.data.size()),
                      "mdnvid: payload size mismatch");
    std::ofstream out(path, std::ios::binary);
    check<IoError>(out.good(), "cannot open for writing: ", path.string());
    out.write(kVideoMagic, 7);
    detail::write_u64(out, video.shape.size());
    for (int64_t ext : video.shape) detail::write_u64(out, static_cast<uint64_t>(ext));
    out.write(reinterpret_cast<const char*>(video.data.data()),
              static_cast<std::streamsize>(video.data.size()));
    check<IoError>(out.good(), "mdnvid write failed: ", path.string());
}

inline VideoU8 read_mdnvid(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    check<IoError>(in.good(), "cannot open: ", path.string());
    char magic[7];
    in.read(magic, 7);
    check<IoError>(in.good() && std::memcmp(magic, kVideoMagic, 7) == 0,
                   "not an MDNVID1 file: ", path.string());
    const uint64_t rank = detail::read_u64(in);
    check<IoError>(rank == 4, "mdnvid: expected rank 4, got ", rank);
    VideoU8 video;
    video.shape.resize(4);
    for (int i = 0; i < 4; ++i) video.shape[i] = static_cast<int64_t>(detail::read_u64(in));
    check<IoError>(video.shape[1] == 3, "mdnvid: expected 3 channels, got ", video.shape[1]);
    video.data.resize(numel_of(video.shape));
    in.read(reinterpret_cast<char*>(video.data.data()),
            static_cast<std::streamsize>(video.data.size()));
    check<IoError>(in.good(), "mdnvid: truncated payload in ", path.string());
    return video;
}

// Interleaved HxWx3 row-major RGB buffers for PNG interop.
#ifdef MDN_HAVE_PNG

inline void write_png_rgb(const std::filesystem::path& path, int64_t w, int64_t h,
                          const uint8_t* rgb) {
    FILE* fp = std::fopen(path.string().c_str(), "wb");
    check<IoError>(fp != nullptr, "cannot open for writing: ", path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        fail<IoError>("png write failed: ", path.string());
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int64_t y = 0; y < h; ++y)
        png_write_row(png, const_cast<png_bytep>(rgb + y * w * 3));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

inline std::vector<uint8_t> read_png_rgb(const std::filesystem::path& path, int64_t* w,
                                         int64_t* h) {
    FILE* fp = std::fopen(path.string().c_str(), "rb");
    check<IoError>(fp != nullptr, "cannot open: ", path.string());
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        fail<IoError>("png read failed: ", path.string());
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    // normalize to 8-bit RGB
    png_set_strip_16(png);
    png_set_palette_to_rgb(png);
    png_set_expand_gray_1_2_4_to_8(png);
    png_set_gray_to_rgb(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    *w = png_get_image_width(png, info);
    *h = png_get_image_height(png, info);
    std::vector<uint8_t> rgb(*w * *h * 3);
    for (int64_t y = 0; y < *h; ++y) png_read_row(png, rgb.data() + y * *w * 3, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return rgb;
}

#endif  // MDN_HAVE_PNG

// Loads a video from either a raw .mdnvid file or a directory of per-frame
// PNGs ordered by zero-padded index.
inline VideoU8 load_video(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    if (fs::is_directory(path)) {
#ifdef MDN_HAVE_PNG
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(path))
            if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
        check<IoError>(!files.empty(), "no .png frames in ", path.string());
        std::sort(files.begin(), files.end());
        VideoU8 video;
        int64_t w = 0, h = 0;
        for (size_t t = 0; t < files.size(); ++t) {
            int64_t fw, fh;
            auto rgb = read_png_rgb(files[t], &fw, &fh);
            if (t == 0) {
                w = fw;
                h = fh;
                video.shape = {static_cast<int64_t>(files.size()), 3, h, w};
                video.data.resize(numel_of(video.shape));
            }
            check<IoError>(fw == w && fh == h, "frame size mismatch in ", files[t].string());
            // interleaved -> planar
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x)
                    for (int64_t c = 0; c < 3; ++c)
                        video.data[((t * 3 + c) * h + y) * w + x] = rgb[(y * w + x) * 3 + c];
        }
        return video;
#else
        fail<IoError>("PNG support not built; use .mdnvid files");
#endif
    }
    return read_mdnvid(path);
}

// Selected frames as a float tensor (T',3,H,W) normalized to [0,1].
template <typename S>
Tensor<S> frames_to_tensor(const VideoU8& video, const std::vector<int64_t>& frame_ids) {
    const int64_t h = video.height(), w = video.width();
    const int64_t frame_sz = 3 * h * w;
    auto out = Tensor<S>::zeros({static_cast<int64_t>(frame_ids.size()), 3, h, w});
    for (size_t i = 0; i < frame_ids.size(); ++i) {
        check<Error>(frame_ids[i] >= 0 && frame_ids[i] < video.frames(), "frame index ",
                     frame_ids[i], " outside [0,", video.frames(), ")");
        const uint8_t* src = video.data.data() + frame_ids[i] * frame_sz;
        S* dst = out.data().data() + static_cast<int64_t>(i) * frame_sz;
        for (int64_t j = 0; j < frame_sz; ++j) dst[j] = static_cast<S>(src[j]) / S(255);
    }
    return out;
}

}  // namespace mdn
