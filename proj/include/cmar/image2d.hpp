#pragma once

// Row-major 2D images and 8-bit binary PGM ("P5") I/O.

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "cmar/core.hpp"

namespace cmar {

struct Image {
    int width = 0, height = 0;
    std::vector<double> pixels; // row-major, pixels[i*width + j]

    Image() = default;
    Image(int w, int h) : width(w), height(h), pixels(size_t(w) * h, 0.0) {}

    double& at(int i, int j) { return pixels[size_t(i) * width + j]; }
    double at(int i, int j) const { return pixels[size_t(i) * width + j]; }
    bool same_dims(const Image& o) const { return width == o.width && height == o.height; }
};

namespace img {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

// value = round(255 * pixel), clamped to [0, 255]
inline void save_pgm(const Image& image, const std::string& path) {
    std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "wb"));
    if (!f) throw IoError("cannot open for writing: " + path);
    std::fprintf(f.get(), "P5\n%d %d\n255\n", image.width, image.height);
    std::vector<unsigned char> row(image.width);
    for (int i = 0; i < image.height; ++i) {
        for (int j = 0; j < image.width; ++j) {
            const double v = std::round(255.0 * image.at(i, j));
            row[j] = (unsigned char)(v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v));
        }
        if (std::fwrite(row.data(), 1, row.size(), f.get()) != row.size())
            throw IoError("short write: " + path);
    }
}

inline Image load_pgm(const std::string& path) {
    std::unique_ptr<std::FILE, FileCloser> f(std::fopen(path.c_str(), "rb"));
    if (!f) throw IoError("cannot open: " + path);
    char magic[3] = {0, 0, 0};
    if (std::fscanf(f.get(), "%2s", magic) != 1 || std::strcmp(magic, "P5") != 0)
        throw FormatError("bad magic in " + path + " (expected P5)");
    int w = 0, h = 0, maxval = 0;
    if (std::fscanf(f.get(), "%d %d %d", &w, &h, &maxval) != 3 || w <= 0 || h <= 0)
        throw FormatError("bad PGM header in " + path);
    if (maxval != 255) throw FormatError("unsupported PGM maxval in " + path);
    std::fgetc(f.get()); // single whitespace after header
    Image image(w, h);
    std::vector<unsigned char> row(w);
    for (int i = 0; i < h; ++i) {
        if (std::fread(row.data(), 1, row.size(), f.get()) != row.size())
            throw FormatError("truncated PGM data in " + path);
        for (int j = 0; j < w; ++j) image.at(i, j) = row[j] / 255.0;
    }
    return image;
}

} // namespace img
} // namespace cmar
