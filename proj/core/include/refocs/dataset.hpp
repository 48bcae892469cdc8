#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "refocs/image.hpp"

namespace refocs {

// In-memory dataset: every sample decoded once at construction, immutable
// afterwards and safe to share across threads. Class ids are kept as given
// (splits do not renumber), sample lists stay in insertion order, which every
// construction path makes deterministic.
class DatasetManifest {
  public:
    DatasetManifest() = default;
    DatasetManifest(std::string name, int height, int width)
        : name_(std::move(name)), height_(height), width_(width) {}

    void add_sample(LabeledImage img);
    void attach_exemplar(ExemplarImage ex);  // class must already exist

    const std::string& name() const { return name_; }
    void set_name(std::string n) { name_ = std::move(n); }
    int height() const { return height_; }
    int width() const { return width_; }

    const std::vector<int>& class_ids() const { return class_ids_; }  // ascending
    int class_count() const { return static_cast<int>(class_ids_.size()); }
    bool has_class(int class_id) const { return samples_.count(class_id) > 0; }
    const std::vector<std::int64_t>& samples_of(int class_id) const;
    std::size_t sample_count() const { return images_.size(); }

    const LabeledImage& image(std::int64_t sample_id) const;
    const ExemplarImage* exemplar(int class_id) const;
    int exemplar_count() const { return static_cast<int>(exemplars_.size()); }

    // Structural invariants: non-empty sample lists, exemplar classes exist,
    // pixel grids match the declared size. Throws DataError.
    void validate() const;

  private:
    std::string name_;
    int height_ = 0;
    int width_ = 0;
    std::vector<int> class_ids_;
    std::map<int, std::vector<std::int64_t>> samples_;
    std::unordered_map<std::int64_t, LabeledImage> images_;
    std::map<int, ExemplarImage> exemplars_;
};

// Reads a folder with one subdirectory per class (sorted name order defines
// class ids 0..C-1) and an optional sibling "exemplars/" directory whose file
// stems name class directories. Undecodable images are skipped with a warning
// on stderr; a class ending up empty is fatal.
DatasetManifest ingest_image_folder(const std::filesystem::path& root,
                                    std::pair<int, int> image_size);

// Writes the ingestible folder layout plus manifest.json (stable key order)
// recording ids and exemplar provenance.
void save_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir);

// Loads a directory written by save_dataset when manifest.json is present
// (preserving ids and provenance); otherwise falls back to plain ingestion.
DatasetManifest load_dataset(const std::filesystem::path& dir, std::pair<int, int> image_size);

// Class-disjoint split: round(train_fraction * M) classes to the train side,
// shuffled by seed. Either side ending up non-empty but smaller than
// n_way_required is fatal; an empty test side is allowed (cross-dataset mode).
std::pair<DatasetManifest, DatasetManifest> split_classes(const DatasetManifest& manifest,
                                                          double train_fraction,
                                                          std::uint64_t seed,
                                                          int n_way_required);

}  // namespace refocs
