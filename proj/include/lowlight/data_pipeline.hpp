#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "lowlight/image.hpp"
#include "lowlight/rng.hpp"
#include "lowlight/semantic_guidance.hpp"

namespace lowlight {

struct AnnotatedImage {
    Image image;
    std::vector<InstanceAnnotation> instances;
    std::string source_id;  // file name stem, unique per dataset
};

struct DatasetLoadResult {
    std::vector<AnnotatedImage> items;  // ordered by source_id
    int warning_count = 0;              // clipped or dropped boxes
};

// COCO-style JSON: {"images":[{id,file_name,width,height}],
// "annotations":[{image_id,bbox [x,y,w,h],category_id,score?}],
// "categories":[{id,name}]}. A missing "score" means human annotation (1.0).
// Boxes are clipped to image bounds (counted as warnings); boxes degenerate
// after clipping are dropped.
DatasetLoadResult load_dataset(const std::string& images_dir, const std::string& annotations_file);

// Writes images as PNG plus a COCO-style annotations.json; inverse of
// load_dataset for fixture round-trips.
void write_dataset(const std::string& images_dir, const std::string& annotations_file,
                   const std::vector<AnnotatedImage>& items);

struct ManifestEntry {
    std::string images_dir;
    std::string annotations_file;
    std::string source;
};

// JSON array of {images_dir, annotations_file, source}. Items from each entry
// get source-prefixed ids ("source/stem").
std::vector<ManifestEntry> load_dataset_manifest(const std::string& path);
DatasetLoadResult load_from_manifest(const std::string& manifest_path);

// Keeps instances with confidence strictly above the threshold.
std::vector<InstanceAnnotation> filter_autoannotations(
    const std::vector<InstanceAnnotation>& instances, double threshold = 0.30);

enum class Quadrant { TL, TR, BL, BR };

const char* quadrant_name(Quadrant q);

struct TrainingPatch {
    Image image;  // resized quadrant
    std::vector<InstanceAnnotation> content;  // patch coordinates, post-resize
    std::vector<InstanceAnnotation> context;  // original image coordinates
    Quadrant quadrant = Quadrant::TL;
    std::string source_id;
};

// Splits at (floor(H/2), floor(W/2)). An instance belongs to the quadrant
// containing its bbox centre; it is content there and context everywhere
// else. Content boxes are translated, clipped and scaled to the resized
// patch.
std::array<TrainingPatch, 4> extract_quadrants(const AnnotatedImage& ai, int patch_size = 224);

// Seeded per-epoch shuffle, final partial batch dropped.
class BatchIterator {
public:
    BatchIterator(std::size_t n_items, int batch_size, std::uint64_t seed);

    // Batches of indices for the next epoch; advances the shuffle stream.
    std::vector<std::vector<std::size_t>> next_epoch();

    std::string rng_state() const { return rng_.serialize(); }
    void restore_rng_state(const std::string& s) { rng_.deserialize(s); }

private:
    std::size_t n_;
    int batch_size_;
    Rng rng_;
};

}  // namespace lowlight
