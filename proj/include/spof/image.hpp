#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace spof {

/// Row-major, 3 interleaved channels.
template <typename T>
struct ImageT {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::vector<T> rgb;

    ImageT() = default;
    ImageT(std::uint32_t w, std::uint32_t h, T fill = T(0))
        : width(w), height(h), rgb(std::size_t{w} * h * 3, fill) {}

    T& at(std::uint32_t x, std::uint32_t y, int c) { return rgb[(std::size_t{y} * width + x) * 3 + c]; }
    T at(std::uint32_t x, std::uint32_t y, int c) const { return rgb[(std::size_t{y} * width + x) * 3 + c]; }
    std::size_t pixels() const noexcept { return std::size_t{width} * height; }
};

using Image = ImageT<float>;
using ImageD = ImageT<double>;

// "SPIM", u32 width, u32 height, then rows of 3-channel f32, little endian.
void write_image(const Image& image, const std::filesystem::path& path);
Image read_image(const std::filesystem::path& path);

double max_abs_difference(const Image& a, const Image& b);

} // namespace spof
