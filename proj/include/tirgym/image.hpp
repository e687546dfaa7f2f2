// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tirgym
{

/// 8-bit interleaved raster, 1 (gray) or 3 (RGB) channels.
struct Image
{
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, int c);

    [[nodiscard]] std::uint8_t& at(int x, int y, int c = 0)
    {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    [[nodiscard]] std::uint8_t at(int x, int y, int c = 0) const
    {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    friend bool operator==(const Image&, const Image&) = default;
};

/// Binary netpbm: P5 for gray, P6 for RGB, maxval 255.
std::vector<std::uint8_t> encode_pnm(const Image& image);
Image decode_pnm(std::span<const std::uint8_t> bytes);

/// Half-open pixel rectangle.
struct PixelRect
{
    int x0 = 0;
    int y0 = 0;
    int x1 = 0;
    int y1 = 0;

    [[nodiscard]] int width() const noexcept { return x1 - x0; }
    [[nodiscard]] int height() const noexcept { return y1 - y0; }
    friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

/// Maps fractional `[x_min, y_min, x_max, y_max]` to pixels by rounding each edge
/// to the nearest integer. Returns nullopt for boxes outside [0,1], inverted
/// boxes, or boxes that cover less than one pixel on either axis.
std::optional<PixelRect> bbox_to_pixels(const std::array<double, 4>& bbox, int width, int height);

Image crop(const Image& image, const PixelRect& rect);
Image upscale_nearest(const Image& image, int factor);
/// Per-channel min/max contrast stretch.
Image stretch_contrast(const Image& image);
/// 3x3 box filter with edge clamping, integer rounding.
Image box_blur3(const Image& image);
/// Gamma 0.5 lookup table.
Image brighten(const Image& image);

/// Content-addressed image storage. Handles are either relative paths under the
/// root directory or `cas/<hash>.pnm` entries created by put(). With an empty
/// root everything lives in memory.
class ImageStore
{
  public:
    explicit ImageStore(std::filesystem::path root = {});

    std::string put(std::span<const std::uint8_t> bytes);
    std::string put_image(const Image& image);

    [[nodiscard]] std::optional<std::vector<std::uint8_t>> get(const std::string& handle) const;
    [[nodiscard]] bool contains(const std::string& handle) const;
    [[nodiscard]] const std::filesystem::path& root() const noexcept { return _root; }

    /// Registers bytes under a caller-chosen handle (used for in-memory fixtures).
    void put_named(const std::string& handle, std::vector<std::uint8_t> bytes);

  private:
    [[nodiscard]] std::optional<std::filesystem::path> resolve(const std::string& handle) const;

    std::filesystem::path _root;
    mutable std::mutex _mutex;
    std::map<std::string, std::vector<std::uint8_t>> _memory;
};

} // namespace tirgym
