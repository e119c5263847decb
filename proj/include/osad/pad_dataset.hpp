#pragma once

// Loader for PAD-style affordance directories:
//
//   root/images/<id>.png        RGB query images; <id> starts with "<category>_"
//   root/masks/<id>.png         8-bit gray, > 127 = foreground
//   root/support/<id>.png       support images
//   root/support/<id>.json      {"human_box":[x0,y0,x1,y1], "object_box":[...], "affordance_id": c}
//   root/categories.json        {"<id>": "<name>", ...}
//   root/splits/fold_<k>.json   [category ids of part k]

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "osad/episodes.hpp"

namespace osad {

/// Malformed dataset content; every issue names the offending file.
class DataValidationError : public std::runtime_error {
public:
    explicit DataValidationError(std::vector<std::string> issues);
    const std::vector<std::string>& issues() const noexcept { return issues_; }

private:
    std::vector<std::string> issues_;
};

struct PadImageRecord {
    std::string id;
    int category = 0;
    std::string image_path;
    std::string mask_path;
};

struct PadSupportRecord {
    std::string id;
    int category = 0;
    std::string image_path;
    std::string annotation_path;
    BBox human_box;
    BBox object_box;
};

struct PadSummary {
    std::size_t images = 0, supports = 0, categories = 0, folds = 0;
};

class PadDataset final : public EpisodeSource {
public:
    PadDataset() = default;

    /// Indexes `root` and validates every record. Images are read on demand
    /// and resampled to `input_size` squares when episodes are built.
    static PadDataset load(const std::string& root, std::size_t input_size = kDefaultCanvas);

    std::vector<int> categories() const override;
    Episode make_episode(int category, std::size_t n, std::uint64_t seed,
                         const std::vector<int>& visible = {}) const override;

    std::size_t size() const noexcept { return images_.size(); }
    const std::vector<PadImageRecord>& images() const noexcept { return images_; }
    const std::vector<PadSupportRecord>& supports() const noexcept { return supports_; }
    const std::map<int, std::string>& category_names() const noexcept { return names_; }
    /// Fold partition from root/splits, if present.
    const std::optional<FoldSplit>& split() const noexcept { return split_; }
    PadSummary summary() const;

private:
    std::string root_;
    std::size_t input_size_ = kDefaultCanvas;
    std::vector<PadImageRecord> images_;
    std::vector<PadSupportRecord> supports_;
    std::map<int, std::string> names_;
    std::optional<FoldSplit> split_;
};

inline PadDataset load_pad_dir(const std::string& root, std::size_t input_size = kDefaultCanvas) {
    return PadDataset::load(root, input_size);
}

/// Writes synthetic episodes in the layout above (used by `gen-data`).
/// Episode e uses category e mod 3; ids are "<category>_<episode>_<query>".
void write_synthetic_dataset(const std::string& root, std::size_t episodes, std::size_t queries_per_episode,
                             std::uint64_t seed, std::size_t canvas = kDefaultCanvas);

/// Square resampling used for loaded data: bilinear for images, thresholded for masks.
Tensor<float> resize_image(const Tensor<float>& img, std::size_t size);
Tensor<float> resize_mask(const Tensor<float>& mask, std::size_t size);
BBox rescale_box(const BBox& b, std::size_t from_w, std::size_t from_h, std::size_t to_w, std::size_t to_h);

}  // namespace osad
