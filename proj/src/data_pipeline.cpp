#include "lowlight/data_pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "lowlight/errors.hpp"
#include "lowlight/image_io.hpp"

namespace fs = std::filesystem;

namespace lowlight {

namespace {

nlohmann::json parse_json_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IngestionError("cannot open: " + path);
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::parse_error& e) {
        // e.what() carries the byte position.
        throw ParseError(path + ": " + e.what());
    }
}

std::string stem_of(const std::string& file_name) { return fs::path(file_name).stem().string(); }

}  // namespace

DatasetLoadResult load_dataset(const std::string& images_dir, const std::string& annotations_file) {
    const nlohmann::json root = parse_json_file(annotations_file);
    if (!root.is_object() || !root.contains("images"))
        throw ParseError(annotations_file + ": expected object with an 'images' array");

    std::map<std::int64_t, std::string> category_names;
    if (root.contains("categories"))
        for (const auto& c : root["categories"])
            category_names[c.at("id").get<std::int64_t>()] = c.at("name").get<std::string>();

    DatasetLoadResult res;
    std::map<std::int64_t, std::size_t> by_coco_id;
    std::set<std::string> seen_ids;
    for (const auto& jimg : root["images"]) {
        const auto coco_id = jimg.at("id").get<std::int64_t>();
        const auto file_name = jimg.at("file_name").get<std::string>();
        const std::string id = stem_of(file_name);
        if (!seen_ids.insert(id).second)
            throw IngestionError("duplicate source id: " + id);
        const fs::path path = fs::path(images_dir) / file_name;
        AnnotatedImage ai;
        try {
            ai.image = load_image(path.string());
        } catch (const IngestionError&) {
            throw IngestionError("missing or unreadable image for id '" + id + "': " +
                                 path.string());
        }
        ai.source_id = id;
        by_coco_id[coco_id] = res.items.size();
        res.items.push_back(std::move(ai));
    }

    if (root.contains("annotations")) {
        for (const auto& ja : root["annotations"]) {
            const auto img_id = ja.at("image_id").get<std::int64_t>();
            auto it = by_coco_id.find(img_id);
            if (it == by_coco_id.end())
                throw ParseError(annotations_file + ": annotation references unknown image_id " +
                                 std::to_string(img_id));
            AnnotatedImage& ai = res.items[it->second];
            const auto& bb = ja.at("bbox");
            InstanceAnnotation inst;
            inst.x_min = bb.at(0).get<double>();
            inst.y_min = bb.at(1).get<double>();
            inst.x_max = inst.x_min + bb.at(2).get<double>();
            inst.y_max = inst.y_min + bb.at(3).get<double>();
            const auto cat_id = ja.at("category_id").get<std::int64_t>();
            auto cit = category_names.find(cat_id);
            inst.category =
                cit != category_names.end() ? cit->second : "category_" + std::to_string(cat_id);
            inst.confidence = ja.value("score", 1.0);
            const double W = ai.image.width, H = ai.image.height;
            const bool outside = inst.x_min < 0 || inst.y_min < 0 || inst.x_max > W || inst.y_max > H;
            if (outside) ++res.warning_count;
            inst.x_min = std::clamp(inst.x_min, 0.0, W);
            inst.x_max = std::clamp(inst.x_max, 0.0, W);
            inst.y_min = std::clamp(inst.y_min, 0.0, H);
            inst.y_max = std::clamp(inst.y_max, 0.0, H);
            if (inst.x_min >= inst.x_max || inst.y_min >= inst.y_max) continue;  // dropped, counted
            ai.instances.push_back(std::move(inst));
        }
    }

    std::sort(res.items.begin(), res.items.end(),
              [](const AnnotatedImage& a, const AnnotatedImage& b) {
                  return a.source_id < b.source_id;
              });
    return res;
}

void write_dataset(const std::string& images_dir, const std::string& annotations_file,
                   const std::vector<AnnotatedImage>& items) {
    fs::create_directories(images_dir);
    nlohmann::json root;
    root["images"] = nlohmann::json::array();
    root["annotations"] = nlohmann::json::array();
    root["categories"] = nlohmann::json::array();
    std::map<std::string, int> cat_ids;
    std::int64_t next_ann = 1;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& ai = items[i];
        const std::string file_name = ai.source_id + ".png";
        save_image((fs::path(images_dir) / file_name).string(), ai.image);
        root["images"].push_back({{"id", static_cast<std::int64_t>(i + 1)},
                                  {"file_name", file_name},
                                  {"width", ai.image.width},
                                  {"height", ai.image.height}});
        for (const auto& inst : ai.instances) {
            auto [it, inserted] = cat_ids.try_emplace(inst.category, static_cast<int>(cat_ids.size()) + 1);
            if (inserted)
                root["categories"].push_back({{"id", it->second}, {"name", inst.category}});
            root["annotations"].push_back(
                {{"id", next_ann++},
                 {"image_id", static_cast<std::int64_t>(i + 1)},
                 {"category_id", it->second},
                 {"bbox", {inst.x_min, inst.y_min, inst.x_max - inst.x_min, inst.y_max - inst.y_min}},
                 {"score", inst.confidence}});
        }
    }
    std::ofstream os(annotations_file);
    if (!os) throw IngestionError("cannot write: " + annotations_file);
    os << root.dump(2) << "\n";
}

std::vector<ManifestEntry> load_dataset_manifest(const std::string& path) {
    const nlohmann::json root = parse_json_file(path);
    if (!root.is_array()) throw ParseError(path + ": manifest must be a JSON array");
    std::vector<ManifestEntry> out;
    for (const auto& e : root) {
        ManifestEntry m;
        m.images_dir = e.at("images_dir").get<std::string>();
        m.annotations_file = e.at("annotations_file").get<std::string>();
        m.source = e.at("source").get<std::string>();
        out.push_back(std::move(m));
    }
    return out;
}

DatasetLoadResult load_from_manifest(const std::string& manifest_path) {
    DatasetLoadResult res;
    for (const auto& entry : load_dataset_manifest(manifest_path)) {
        DatasetLoadResult part = load_dataset(entry.images_dir, entry.annotations_file);
        for (auto& item : part.items) {
            item.source_id = entry.source + "/" + item.source_id;
            res.items.push_back(std::move(item));
        }
        res.warning_count += part.warning_count;
    }
    std::sort(res.items.begin(), res.items.end(),
              [](const AnnotatedImage& a, const AnnotatedImage& b) {
                  return a.source_id < b.source_id;
              });
    return res;
}

std::vector<InstanceAnnotation> filter_autoannotations(
    const std::vector<InstanceAnnotation>& instances, double threshold) {
    if (threshold < 0.0 || threshold > 1.0)
        throw std::invalid_argument("filter_autoannotations: threshold outside [0,1]");
    std::vector<InstanceAnnotation> out;
    for (const auto& i : instances)
        if (i.confidence > threshold) out.push_back(i);
    return out;
}

const char* quadrant_name(Quadrant q) {
    switch (q) {
        case Quadrant::TL: return "TL";
        case Quadrant::TR: return "TR";
        case Quadrant::BL: return "BL";
        case Quadrant::BR: return "BR";
    }
    return "?";
}

std::array<TrainingPatch, 4> extract_quadrants(const AnnotatedImage& ai, int patch_size) {
    const int H = ai.image.height, W = ai.image.width;
    if (H < 2 || W < 2) throw std::invalid_argument("extract_quadrants: image must be >= 2x2");
    if (patch_size < 1) throw std::invalid_argument("extract_quadrants: patch size must be >= 1");
    const int sy = H / 2, sx = W / 2;

    struct Rect {
        int y0, x0, h, w;
    };
    const Rect rects[4] = {{0, 0, sy, sx},            // TL
                           {0, sx, sy, W - sx},       // TR
                           {sy, 0, H - sy, sx},       // BL
                           {sy, sx, H - sy, W - sx}}; // BR
    const Quadrant quads[4] = {Quadrant::TL, Quadrant::TR, Quadrant::BL, Quadrant::BR};

    auto quadrant_of = [&](const InstanceAnnotation& inst) {
        const double cx = 0.5 * (inst.x_min + inst.x_max);
        const double cy = 0.5 * (inst.y_min + inst.y_max);
        const bool right = cx >= sx;
        const bool bottom = cy >= sy;
        return bottom ? (right ? 3 : 2) : (right ? 1 : 0);
    };

    std::array<TrainingPatch, 4> out;
    for (int q = 0; q < 4; ++q) {
        const Rect& r = rects[q];
        Image crop(r.h, r.w);
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < r.h; ++y)
                for (int x = 0; x < r.w; ++x)
                    crop.at(c, y, x) = ai.image.at(c, r.y0 + y, r.x0 + x);
        out[q].image = resize_bilinear(crop, patch_size, patch_size);
        out[q].quadrant = quads[q];
        out[q].source_id = ai.source_id;
        const double scale_x = static_cast<double>(patch_size) / r.w;
        const double scale_y = static_cast<double>(patch_size) / r.h;
        for (const auto& inst : ai.instances) {
            if (quadrant_of(inst) == q) {
                InstanceAnnotation t = inst;
                t.x_min = std::clamp(inst.x_min - r.x0, 0.0, static_cast<double>(r.w)) * scale_x;
                t.x_max = std::clamp(inst.x_max - r.x0, 0.0, static_cast<double>(r.w)) * scale_x;
                t.y_min = std::clamp(inst.y_min - r.y0, 0.0, static_cast<double>(r.h)) * scale_y;
                t.y_max = std::clamp(inst.y_max - r.y0, 0.0, static_cast<double>(r.h)) * scale_y;
                out[q].content.push_back(std::move(t));
            } else {
                out[q].context.push_back(inst);
            }
        }
    }
    return out;
}

BatchIterator::BatchIterator(std::size_t n_items, int batch_size, std::uint64_t seed)
    : n_(n_items), batch_size_(batch_size), rng_(seed) {
    if (batch_size < 1) throw std::invalid_argument("BatchIterator: batch size must be >= 1");
}

std::vector<std::vector<std::size_t>> BatchIterator::next_epoch() {
    std::vector<std::size_t> idx(n_);
    for (std::size_t i = 0; i < n_; ++i) idx[i] = i;
    // Fisher-Yates with our deterministic stream.
    for (std::size_t i = n_; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng_.uniform_int(0, static_cast<int>(i) - 1));
        std::swap(idx[i - 1], idx[j]);
    }
    std::vector<std::vector<std::size_t>> batches;
    const std::size_t b = static_cast<std::size_t>(batch_size_);
    for (std::size_t start = 0; start + b <= n_; start += b)
        batches.emplace_back(idx.begin() + static_cast<std::ptrdiff_t>(start),
                             idx.begin() + static_cast<std::ptrdiff_t>(start + b));
    return batches;
}

}  // namespace lowlight
