// SPDX-License-Identifier: Apache-2.0
#include <tirgym/error.hpp>
#include <tirgym/image.hpp>
#include <tirgym/util.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace tirgym
{

Image::Image(int w, int h, int c):
    width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w) * h * c, 0)
{
}

std::vector<std::uint8_t> encode_pnm(const Image& image)
{
    auto header = std::string(image.channels == 3 ? "P6" : "P5") + "\n" + std::to_string(image.width) + " "
                  + std::to_string(image.height) + "\n255\n";
    auto out = std::vector<std::uint8_t>(header.begin(), header.end());
    out.insert(out.end(), image.pixels.begin(), image.pixels.end());
    return out;
}

namespace
{

struct PnmReader
{
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    void skip_space_and_comments()
    {
        while (pos < bytes.size())
        {
            auto const c = bytes[pos];
            if (c == '#')
            {
                while (pos < bytes.size() && bytes[pos] != '\n')
                    ++pos;
            }
            else if (c == ' ' || c == '\n' || c == '\r' || c == '\t')
                ++pos;
            else
                break;
        }
    }

    int read_int()
    {
        skip_space_and_comments();
        long value = 0;
        auto const start = pos;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9')
        {
            value = value * 10 + (bytes[pos] - '0');
            if (value > 1'000'000)
                throw Error(Errc::UnresolvableImage, "pnm dimension too large");
            ++pos;
        }
        if (pos == start)
            throw Error(Errc::UnresolvableImage, "malformed pnm header");
        return static_cast<int>(value);
    }
};

} // namespace

Image decode_pnm(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6'))
        throw Error(Errc::UnresolvableImage, "not a binary P5/P6 image");
    auto reader = PnmReader { bytes, 2 };
    auto const channels = bytes[1] == '6' ? 3 : 1;
    auto const w = reader.read_int();
    auto const h = reader.read_int();
    auto const maxval = reader.read_int();
    if (maxval != 255 || w <= 0 || h <= 0)
        throw Error(Errc::UnresolvableImage, "unsupported pnm header");
    ++reader.pos; // single whitespace after maxval
    auto image = Image(w, h, channels);
    if (bytes.size() < reader.pos + image.pixels.size())
        throw Error(Errc::UnresolvableImage, "truncated pnm data");
    std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(reader.pos), image.pixels.size(), image.pixels.begin());
    return image;
}

std::optional<PixelRect> bbox_to_pixels(const std::array<double, 4>& bbox, int width, int height)
{
    for (auto v: bbox)
        if (!std::isfinite(v) || v < 0.0 || v > 1.0)
            return std::nullopt;
    if (bbox[0] >= bbox[2] || bbox[1] >= bbox[3])
        return std::nullopt;
    auto const rect = PixelRect {
        static_cast<int>(std::lround(bbox[0] * width)),
        static_cast<int>(std::lround(bbox[1] * height)),
        static_cast<int>(std::lround(bbox[2] * width)),
        static_cast<int>(std::lround(bbox[3] * height)),
    };
    if (rect.width() < 1 || rect.height() < 1)
        return std::nullopt;
    return rect;
}

Image crop(const Image& image, const PixelRect& rect)
{
    auto out = Image(rect.width(), rect.height(), image.channels);
    auto const row_bytes = static_cast<std::size_t>(rect.width()) * image.channels;
    for (int y = 0; y < rect.height(); ++y)
    {
        auto const* src = &image.pixels[(static_cast<std::size_t>(rect.y0 + y) * image.width + rect.x0) * image.channels];
        std::copy_n(src, row_bytes, &out.pixels[static_cast<std::size_t>(y) * row_bytes]);
    }
    return out;
}

Image upscale_nearest(const Image& image, int factor)
{
    auto out = Image(image.width * factor, image.height * factor, image.channels);
    for (int y = 0; y < out.height; ++y)
        for (int x = 0; x < out.width; ++x)
            for (int c = 0; c < image.channels; ++c)
                out.at(x, y, c) = image.at(x / factor, y / factor, c);
    return out;
}

Image stretch_contrast(const Image& image)
{
    auto out = image;
    for (int c = 0; c < image.channels; ++c)
    {
        int lo = 255;
        int hi = 0;
        for (std::size_t i = static_cast<std::size_t>(c); i < image.pixels.size(); i += image.channels)
        {
            lo = std::min<int>(lo, image.pixels[i]);
            hi = std::max<int>(hi, image.pixels[i]);
        }
        if (hi <= lo)
            continue;
        for (std::size_t i = static_cast<std::size_t>(c); i < image.pixels.size(); i += image.channels)
            out.pixels[i] = static_cast<std::uint8_t>(((image.pixels[i] - lo) * 255 + (hi - lo) / 2) / (hi - lo));
    }
    return out;
}

Image box_blur3(const Image& image)
{
    auto out = image;
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x)
            for (int c = 0; c < image.channels; ++c)
            {
                int sum = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx)
                        sum += image.at(std::clamp(x + dx, 0, image.width - 1), std::clamp(y + dy, 0, image.height - 1), c);
                out.at(x, y, c) = static_cast<std::uint8_t>((sum + 4) / 9);
            }
    return out;
}

Image brighten(const Image& image)
{
    auto lut = std::array<std::uint8_t, 256> {};
    for (int i = 0; i < 256; ++i)
        lut[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(255.0 * std::sqrt(i / 255.0)));
    auto out = image;
    for (auto& p: out.pixels)
        p = lut[p];
    return out;
}

ImageStore::ImageStore(std::filesystem::path root): _root(std::move(root))
{
}

std::string ImageStore::put(std::span<const std::uint8_t> bytes)
{
    auto handle = "cas/" + hex64(fnv1a64(bytes)) + ".pnm";
    auto lock = std::lock_guard(_mutex);
    if (_root.empty())
    {
        _memory.try_emplace(handle, bytes.begin(), bytes.end());
        return handle;
    }
    auto const path = _root / handle;
    if (!std::filesystem::exists(path))
    {
        std::filesystem::create_directories(path.parent_path());
        write_file_atomic(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    }
    return handle;
}

std::string ImageStore::put_image(const Image& image)
{
    return put(encode_pnm(image));
}

void ImageStore::put_named(const std::string& handle, std::vector<std::uint8_t> bytes)
{
    auto lock = std::lock_guard(_mutex);
    _memory[handle] = std::move(bytes);
}

std::optional<std::filesystem::path> ImageStore::resolve(const std::string& handle) const
{
    if (_root.empty() || handle.empty())
        return std::nullopt;
    auto const rel = std::filesystem::path(handle).lexically_normal();
    if (rel.is_absolute() || (!rel.empty() && *rel.begin() == ".."))
        return std::nullopt;
    return _root / rel;
}

std::optional<std::vector<std::uint8_t>> ImageStore::get(const std::string& handle) const
{
    {
        auto lock = std::lock_guard(_mutex);
        if (auto it = _memory.find(handle); it != _memory.end())
            return it->second;
    }
    auto path = resolve(handle);
    if (!path || !std::filesystem::is_regular_file(*path))
        return std::nullopt;
    return read_binary_file(*path);
}

bool ImageStore::contains(const std::string& handle) const
{
    {
        auto lock = std::lock_guard(_mutex);
        if (_memory.contains(handle))
            return true;
    }
    auto path = resolve(handle);
    return path && std::filesystem::is_regular_file(*path);
}

} // namespace tirgym
