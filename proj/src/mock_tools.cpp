// SPDX-License-Identifier: Apache-2.0
#include <tirgym/error.hpp>
#include <tirgym/mock_tools.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

namespace tirgym
{

KeyValueCorpus KeyValueCorpus::load(const std::filesystem::path& file)
{
    auto corpus = KeyValueCorpus {};
    if (!std::filesystem::is_regular_file(file))
        return corpus;
    auto text = read_text_file(file);
    auto in = std::istringstream(text);
    auto line = std::string {};
    while (std::getline(in, line))
    {
        if (trim(line).empty())
            continue;
        auto rec = Json::parse(line, nullptr, false);
        if (rec.is_discarded() || !rec.is_object() || !rec.contains("key") || !rec.contains("value"))
            throw Error(Errc::IoError, "malformed corpus record in " + file.string());
        corpus._entries[normalize_key(rec["key"].get<std::string>())] = rec["value"].get<std::string>();
    }
    return corpus;
}

std::string KeyValueCorpus::normalize_key(std::string_view key)
{
    auto out = std::string {};
    for (auto token: split_whitespace(key))
    {
        if (!out.empty())
            out += ' ';
        for (char c: token)
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    }
    return out;
}

std::optional<std::string> KeyValueCorpus::lookup(std::string_view query) const
{
    if (auto it = _entries.find(normalize_key(query)); it != _entries.end())
        return it->second;
    return std::nullopt;
}

namespace
{

std::string fixed2(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string fixed3(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

std::string rect_text(const PixelRect& r)
{
    return "x[" + std::to_string(r.x0) + "," + std::to_string(r.x1) + ") y[" + std::to_string(r.y0) + ","
           + std::to_string(r.y1) + ")";
}

std::string norm_box_text(const PixelRect& r, const Image& img)
{
    return "[" + fixed2(static_cast<double>(r.x0) / img.width) + ", " + fixed2(static_cast<double>(r.y0) / img.height)
           + ", " + fixed2(static_cast<double>(r.x1) / img.width) + ", " + fixed2(static_cast<double>(r.y1) / img.height)
           + "]";
}

struct LoadedImage
{
    std::string handle;
    std::vector<std::uint8_t> bytes;
    Image image;
};

LoadedImage load_input(ToolContext& ctx)
{
    if (ctx.request.image_refs.empty())
        throw ToolFailure("no image attached to the request");
    auto const& handle = ctx.request.image_refs.front();
    auto bytes = ctx.images.get(handle);
    if (!bytes)
        throw ToolFailure("image '" + handle + "' not found");
    try
    {
        auto image = decode_pnm(*bytes);
        return LoadedImage { handle, std::move(*bytes), std::move(image) };
    }
    catch (const Error& e)
    {
        throw ToolFailure("image '" + handle + "' unreadable: " + e.detail());
    }
}

std::array<double, 4> read_bbox(const Json& v)
{
    auto box = std::array<double, 4> {};
    for (std::size_t i = 0; i < 4; ++i)
        box[i] = v.at(i).get<double>();
    return box;
}

PixelRect region_from_args(const Json& args, const Image& img)
{
    if (!args.contains("bbox_2d"))
        return PixelRect { 0, 0, img.width, img.height };
    auto rect = bbox_to_pixels(read_bbox(args["bbox_2d"]), img.width, img.height);
    if (!rect)
        throw ToolRejected("bbox_2d " + canonical_json(args["bbox_2d"]) + " is inverted or covers less than one pixel");
    return *rect;
}

double gray(const Image& img, int x, int y)
{
    double sum = 0;
    for (int c = 0; c < img.channels; ++c)
        sum += img.at(x, y, c);
    return sum / img.channels;
}

struct RegionStats
{
    double mean = 0;
    double stddev = 0;
    double max = 0;
};

RegionStats region_stats(const Image& img, const PixelRect& r)
{
    auto stats = RegionStats {};
    double sum = 0;
    double sq = 0;
    auto const n = static_cast<double>(r.width()) * r.height();
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x)
        {
            auto const g = gray(img, x, y);
            sum += g;
            sq += g * g;
            stats.max = std::max(stats.max, g);
        }
    stats.mean = sum / n;
    stats.stddev = std::sqrt(std::max(0.0, sq / n - stats.mean * stats.mean));
    return stats;
}

struct Segmentation
{
    Image mask;
    int area = 0;
    std::optional<PixelRect> bounds;
};

Segmentation threshold_segment(const Image& img, const PixelRect& region, double threshold)
{
    auto seg = Segmentation { Image(img.width, img.height, 1), 0, std::nullopt };
    auto b = PixelRect { region.x1, region.y1, region.x0, region.y0 };
    for (int y = region.y0; y < region.y1; ++y)
        for (int x = region.x0; x < region.x1; ++x)
            if (gray(img, x, y) > threshold)
            {
                seg.mask.at(x, y) = 255;
                seg.area += 1;
                b.x0 = std::min(b.x0, x);
                b.y0 = std::min(b.y0, y);
                b.x1 = std::max(b.x1, x + 1);
                b.y1 = std::max(b.y1, y + 1);
            }
    if (seg.area > 0)
        seg.bounds = b;
    return seg;
}

std::string describe_segmentation(const std::string& target, const Segmentation& seg, const PixelRect& region,
                                  const Image& img)
{
    auto const region_px = static_cast<double>(region.width()) * region.height();
    if (seg.area == 0)
        return "No " + target + " found in region " + rect_text(region) + ".";
    return "Segmented " + target + ": " + std::to_string(seg.area) + " px (" + fixed2(100.0 * seg.area / region_px)
           + "% of region " + rect_text(region) + "), bounding box bbox_2d " + norm_box_text(*seg.bounds, img) + ".";
}

void simulate(std::chrono::milliseconds latency)
{
    if (latency.count() > 0)
        std::this_thread::sleep_for(latency);
}

template <typename Fn>
class LambdaTool: public Tool
{
  public:
    LambdaTool(Fn fn, std::chrono::milliseconds latency): _fn(std::move(fn)), _latency(latency) {}

    ToolOutput run(const Json& arguments, ToolContext& ctx) override
    {
        simulate(_latency);
        return _fn(arguments, ctx);
    }

  private:
    Fn _fn;
    std::chrono::milliseconds _latency;
};

template <typename Fn>
ToolFactory make_factory(Fn fn, std::chrono::milliseconds latency)
{
    return [fn, latency] { return std::make_unique<LambdaTool<Fn>>(fn, latency); };
}

ArgField bbox_field(bool required)
{
    auto f = ArgField {};
    f.type = ArgType::NumberArray;
    f.required = required;
    f.min = 0.0;
    f.max = 1.0;
    f.length = 4;
    f.description = "[x_min, y_min, x_max, y_max] as fractions of width and height";
    return f;
}

ArgField string_field(bool required, std::string description)
{
    auto f = ArgField {};
    f.type = ArgType::String;
    f.required = required;
    f.description = std::move(description);
    return f;
}

ToolOutput zoom(const Json& args, ToolContext& ctx)
{
    auto in = load_input(ctx);
    auto const rect = region_from_args(args, in.image);
    auto cropped = crop(in.image, rect);
    auto handle = ctx.images.put_image(cropped);
    return ToolOutput { "Zoomed into bbox_2d " + canonical_json(args["bbox_2d"]) + " of " + std::to_string(in.image.width)
                            + "x" + std::to_string(in.image.height) + " image: pixels " + rect_text(rect) + ", returned "
                            + std::to_string(cropped.width) + "x" + std::to_string(cropped.height) + " crop.",
                        { handle } };
}

template <typename Transform>
ToolOutput enhance(ToolContext& ctx, const std::string& what, Transform transform)
{
    auto in = load_input(ctx);
    auto out = transform(in.image);
    auto handle = ctx.images.put_image(out);
    auto const before = region_stats(in.image, { 0, 0, in.image.width, in.image.height });
    auto const after = region_stats(out, { 0, 0, out.width, out.height });
    return ToolOutput { what + ": " + std::to_string(out.width) + "x" + std::to_string(out.height)
                            + " image, mean intensity " + fixed2(before.mean) + " -> " + fixed2(after.mean)
                            + ", contrast " + fixed2(before.stddev) + " -> " + fixed2(after.stddev) + ".",
                        { handle } };
}

ToolOutput super_resolution(const Json& args, ToolContext& ctx)
{
    auto const scale = args.contains("scale") ? static_cast<int>(args["scale"].get<double>()) : 2;
    auto in = load_input(ctx);
    if (static_cast<long long>(in.image.width) * scale > 4096 || static_cast<long long>(in.image.height) * scale > 4096)
        throw ToolFailure("upscaled image would exceed 4096 px per side");
    return enhance(ctx, "Super-resolved x" + std::to_string(scale),
                   [scale](const Image& img) { return upscale_nearest(img, scale); });
}

ToolOutput grounding_dino(const Json& args, ToolContext& ctx)
{
    auto in = load_input(ctx);
    auto const query = args["query"].get<std::string>();
    auto const full = PixelRect { 0, 0, in.image.width, in.image.height };
    auto const stats = region_stats(in.image, full);
    auto const seg = threshold_segment(in.image, full, stats.mean + (stats.max - stats.mean) / 2);
    if (!seg.bounds)
        return ToolOutput { "No regions detected for \"" + query + "\".", {} };
    auto const& b = *seg.bounds;
    auto const confidence = static_cast<double>(seg.area) / (static_cast<double>(b.width()) * b.height());
    auto const threshold = args.contains("box_threshold") ? args["box_threshold"].get<double>() : 0.0;
    if (confidence < threshold)
        return ToolOutput { "No regions above box_threshold " + fixed2(threshold) + " for \"" + query + "\".", {} };
    return ToolOutput { "Detected 1 region for \"" + query + "\": bbox_2d " + norm_box_text(b, in.image) + " confidence "
                            + fixed2(confidence) + ".",
                        {} };
}

ToolOutput segment(const Json& args, ToolContext& ctx, const std::string& target, double sigma)
{
    auto in = load_input(ctx);
    auto const region = region_from_args(args, in.image);
    auto const stats = region_stats(in.image, region);
    auto seg = threshold_segment(in.image, region, stats.mean + sigma * stats.stddev);
    auto handle = ctx.images.put_image(seg.mask);
    return ToolOutput { describe_segmentation(target, seg, region, in.image), { handle } };
}

ToolOutput biomedparse_all(ToolContext& ctx)
{
    auto in = load_input(ctx);
    auto const full = PixelRect { 0, 0, in.image.width, in.image.height };
    auto const stats = region_stats(in.image, full);
    auto organ = threshold_segment(in.image, full, stats.mean);
    auto lesion = threshold_segment(in.image, full, stats.mean + 1.5 * stats.stddev);
    auto combined = organ.mask;
    for (std::size_t i = 0; i < combined.pixels.size(); ++i)
        if (lesion.mask.pixels[i])
            combined.pixels[i] = 128;
    auto handle = ctx.images.put_image(combined);
    return ToolOutput { describe_segmentation("organ", organ, full, in.image) + " "
                            + describe_segmentation("lesion", lesion, full, in.image),
                        { handle } };
}

ToolOutput biomedclip(const Json& args, ToolContext& ctx)
{
    auto in = load_input(ctx);
    auto labels = std::vector<std::string> {};
    if (args.contains("labels"))
        labels = args["labels"].get<std::vector<std::string>>();
    else
    {
        auto const type = args.contains("label_type") ? args["label_type"].get<std::string>() : "abnormality";
        if (type == "modality")
            labels = { "CT", "MRI", "PET-CT", "Ultrasound", "X-Ray" };
        else if (type == "organ")
            labels = { "abdomen", "brain", "chest", "pelvis" };
        else
            labels = { "abnormal", "normal" };
    }
    if (labels.empty())
        throw ToolRejected("labels must be non-empty");
    auto const image_hash = hex64(fnv1a64(in.bytes));
    auto logits = std::vector<double> {};
    for (auto const& label: labels)
        logits.push_back(static_cast<double>(fnv1a64(image_hash + "|" + label) % 1000) / 250.0);
    auto const top = *std::max_element(logits.begin(), logits.end());
    double z = 0;
    for (auto& l: logits)
        z += (l = std::exp(l - top));
    auto order = std::vector<std::size_t>(labels.size());
    for (std::size_t i = 0; i < order.size(); ++i)
        order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return logits[a] > logits[b]; });
    auto text = std::string("Zero-shot scores:");
    for (auto i: order)
        text += " " + labels[i] + ": " + fixed3(logits[i] / z) + ";";
    text.pop_back();
    return ToolOutput { text + ".", {} };
}

ToolSpec spec(std::string name, ToolFamily family, std::map<std::string, ArgField> schema, bool returns_image,
              std::string description)
{
    return ToolSpec { std::move(name), family, std::move(schema), returns_image, std::move(description) };
}

void register_retrieval(ToolRuntime& runtime, const MockToolOptions& opt, const std::string& name,
                        std::map<std::string, ArgField> schema, std::string description)
{
    auto const file = opt.corpus_dir.empty() ? std::filesystem::path {} : opt.corpus_dir / (name + ".jsonl");
    auto factory = [file, latency = opt.simulated_latency, name]() -> std::unique_ptr<Tool> {
        // corpus loads once per worker
        auto corpus = file.empty() ? KeyValueCorpus {} : KeyValueCorpus::load(file);
        auto fn = [corpus = std::move(corpus), name](const Json& args, ToolContext&) {
            auto key = args["query"].get<std::string>();
            if (args.contains("doc_id"))
                key = args["doc_id"].get<std::string>() + " " + key;
            if (auto hit = corpus.lookup(key))
                return ToolOutput { *hit, {} };
            return ToolOutput { "No " + name + " results for \"" + key + "\".", {} };
        };
        return std::make_unique<LambdaTool<decltype(fn)>>(std::move(fn), latency);
    };
    runtime.register_tool(spec(name, ToolFamily::KnowledgeRetrieval, std::move(schema), false, std::move(description)),
                          std::move(factory), opt.workers);
}

} // namespace

std::vector<std::string> table_tool_names()
{
    return {
        "super_resolution", "dehazing",           "denoising",       "brightening",     "grounding_dino",
        "sam2",             "medsam2",            "biomedclip",      "biomedparse_organ", "biomedparse_lesion",
        "biomedparse_all",  "biomedparse_text",   "google_search",   "drugbank",        "longdocrag",
    };
}

void register_zoom_tool(ToolRuntime& runtime, const MockToolOptions& opt)
{
    runtime.register_tool(spec("image_zoom_in", ToolFamily::RegionRefinement, { { "bbox_2d", bbox_field(true) } }, true,
                               "Crop the image to a fractional bounding box."),
                          make_factory(zoom, opt.simulated_latency), opt.workers);
}

void register_table_tools(ToolRuntime& runtime, const MockToolOptions& opt)
{
    auto const lat = opt.simulated_latency;
    auto const reg = [&](ToolSpec s, ToolFactory f) { runtime.register_tool(std::move(s), std::move(f), opt.workers); };

    auto scale = ArgField {};
    scale.type = ArgType::Integer;
    scale.one_of = { 2, 4, 8, 16 };
    scale.description = "upscaling factor";
    reg(spec("super_resolution", ToolFamily::RegionRefinement, { { "scale", scale } }, true,
             "Nearest-neighbour super-resolution by 2, 4, 8 or 16."),
        make_factory(super_resolution, lat));
    reg(spec("dehazing", ToolFamily::RegionRefinement, {}, true, "Haze removal by contrast stretching."),
        make_factory([](const Json&, ToolContext& ctx) { return enhance(ctx, "Dehazed", stretch_contrast); }, lat));
    reg(spec("denoising", ToolFamily::RegionRefinement, {}, true, "Noise suppression with a 3x3 box filter."),
        make_factory([](const Json&, ToolContext& ctx) { return enhance(ctx, "Denoised", box_blur3); }, lat));
    reg(spec("brightening", ToolFamily::RegionRefinement, {}, true, "Low-light enhancement with gamma 0.5."),
        make_factory([](const Json&, ToolContext& ctx) { return enhance(ctx, "Brightened", brighten); }, lat));

    auto threshold = ArgField {};
    threshold.type = ArgType::Number;
    threshold.min = 0.0;
    threshold.max = 1.0;
    reg(spec("grounding_dino", ToolFamily::LocalizationSegmentation,
             { { "query", string_field(true, "what to detect") }, { "box_threshold", threshold } }, false,
             "Text-conditioned detection of the brightest structure."),
        make_factory(grounding_dino, lat));
    reg(spec("sam2", ToolFamily::LocalizationSegmentation, { { "bbox_2d", bbox_field(false) } }, true,
             "Promptable segmentation inside an optional box."),
        make_factory([](const Json& a, ToolContext& ctx) { return segment(a, ctx, "object", 0.0); }, lat));
    reg(spec("medsam2", ToolFamily::LocalizationSegmentation,
             { { "bbox_2d", bbox_field(true) }, { "organ", string_field(false, "target organ name") } }, true,
             "Box-prompted medical segmentation."),
        make_factory(
            [](const Json& a, ToolContext& ctx) {
                return segment(a, ctx, a.contains("organ") ? a["organ"].get<std::string>() : "structure", 0.5);
            },
            lat));

    auto labels = ArgField {};
    labels.type = ArgType::StringArray;
    labels.description = "candidate labels";
    auto label_type = string_field(false, "label family used when labels are absent");
    label_type.one_of = { "abnormality", "modality", "organ" };
    reg(spec("biomedclip", ToolFamily::VisualUnderstanding, { { "labels", labels }, { "label_type", label_type } },
             false, "Zero-shot label scoring."),
        make_factory(biomedclip, lat));
    reg(spec("biomedparse_organ", ToolFamily::VisualUnderstanding, {}, true, "Organ-level segmentation."),
        make_factory(
            [](const Json&, ToolContext& ctx) { return segment(Json::object(), ctx, "organ", 0.0); }, lat));
    reg(spec("biomedparse_lesion", ToolFamily::VisualUnderstanding, {}, true, "Lesion-level segmentation."),
        make_factory(
            [](const Json&, ToolContext& ctx) { return segment(Json::object(), ctx, "lesion", 1.5); }, lat));
    reg(spec("biomedparse_all", ToolFamily::VisualUnderstanding, {}, true, "Organ and lesion segmentation."),
        make_factory([](const Json&, ToolContext& ctx) { return biomedparse_all(ctx); }, lat));
    reg(spec("biomedparse_text", ToolFamily::VisualUnderstanding,
             { { "prompt", string_field(true, "text description of the target") } }, true,
             "Text-prompted segmentation."),
        make_factory(
            [](const Json& a, ToolContext& ctx) {
                return segment(Json::object(), ctx, a["prompt"].get<std::string>(), 1.0);
            },
            lat));

    register_retrieval(runtime, opt, "google_search", { { "query", string_field(true, "search query") } },
                       "Web search over a fixed corpus.");
    register_retrieval(runtime, opt, "drugbank", { { "query", string_field(true, "drug name") } },
                       "Pharmaceutical lookup.");
    register_retrieval(runtime, opt, "longdocrag",
                       { { "query", string_field(true, "question") }, { "doc_id", string_field(false, "document") } },
                       "Long-document question answering.");
}

void register_mock_tools(ToolRuntime& runtime, const MockToolOptions& options)
{
    register_zoom_tool(runtime, options);
    register_table_tools(runtime, options);
}

void register_latency_tool(ToolRuntime& runtime, const std::string& name, std::chrono::milliseconds latency,
                           std::optional<int> workers)
{
    auto payload = ArgField {};
    payload.type = ArgType::String;
    runtime.register_tool(spec(name, ToolFamily::KnowledgeRetrieval, { { "payload", payload } }, false,
                               "Sleeps for a fixed latency and echoes its payload."),
                          make_factory(
                              [](const Json& a, ToolContext& ctx) {
                                  auto text = a.contains("payload") ? a["payload"].get<std::string>() : "";
                                  return ToolOutput { "echo:" + ctx.request.request_id + ":" + text, {} };
                              },
                              latency),
                          workers);
}

} // namespace tirgym
