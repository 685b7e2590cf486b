#include "spof/image.hpp"

#include "binary_io.hpp"
#include "spof/errors.hpp"

#include <algorithm>
#include <cmath>

namespace spof {

void write_image(const Image& image, const std::filesystem::path& path) {
    detail::ByteWriter w;
    w.put_magic("SPIM");
    w.put<std::uint32_t>(image.width);
    w.put<std::uint32_t>(image.height);
    w.put_array(image.rgb.data(), image.rgb.size());
    detail::write_file(path, w.bytes());
}

Image read_image(const std::filesystem::path& path) {
    const auto bytes = detail::read_file(path);
    detail::ByteReader r(bytes);
    r.expect_magic("SPIM", "image '" + path.string() + "'");
    const auto width = r.get<std::uint32_t>();
    const auto height = r.get<std::uint32_t>();
    if (r.remaining() != std::size_t{width} * height * 3 * sizeof(float)) {
        throw IoError("image '" + path.string() + "': payload size does not match its dimensions");
    }
    Image image(width, height);
    r.get_array(image.rgb.data(), image.rgb.size());
    return image;
}

double max_abs_difference(const Image& a, const Image& b) {
    if (a.width != b.width || a.height != b.height) {
        throw ConfigError("images differ in size");
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.rgb.size(); ++i) {
        worst = std::max(worst, std::abs(double{a.rgb[i]} - double{b.rgb[i]}));
    }
    return worst;
}

} // namespace spof
