#include "osad/pad_dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "json.hpp"
#include "osad/image_io.hpp"
#include "osad/kernels.hpp"
#include "osad/random.hpp"

namespace osad {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string join_issues(const std::vector<std::string>& issues) {
    std::string msg = "dataset validation failed (" + std::to_string(issues.size()) + " issue" +
                      (issues.size() == 1 ? "" : "s") + ")";
    for (const auto& i : issues) msg += "\n  " + i;
    return msg;
}

std::optional<int> category_prefix(const std::string& id) {
    const auto us = id.find('_');
    if (us == std::string::npos || us == 0) return std::nullopt;
    try {
        std::size_t used = 0;
        const int v = std::stoi(id.substr(0, us), &used);
        if (used != us) return std::nullopt;
        return v;
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

json read_json(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw std::runtime_error("cannot read");
    return json::parse(is);
}

std::vector<fs::path> sorted_files(const fs::path& dir, const std::string& ext) {
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

BBox parse_box(const json& j) {
    const auto v = j.get<std::vector<int>>();
    if (v.size() != 4) throw std::runtime_error("box needs 4 integers");
    return {v[0], v[1], v[2], v[3]};
}

}  // namespace

DataValidationError::DataValidationError(std::vector<std::string> issues)
    : std::runtime_error(join_issues(issues)), issues_(std::move(issues)) {}

PadDataset PadDataset::load(const std::string& root, std::size_t input_size) {
    if (input_size == 0 || input_size % 32) throw std::invalid_argument("input size must be a multiple of 32");
    const fs::path base(root);
    if (!fs::is_directory(base)) throw DataValidationError({root + ": not a directory"});
    PadDataset ds;
    ds.root_ = root;
    ds.input_size_ = input_size;
    std::vector<std::string> issues;

    const auto cat_path = base / "categories.json";
    if (fs::exists(cat_path)) {
        try {
            const auto table = read_json(cat_path);
            for (const auto& [k, v] : table.items()) ds.names_[std::stoi(k)] = v.get<std::string>();
        } catch (const std::exception& e) {
            issues.push_back(cat_path.string() + ": malformed category table (" + e.what() + ")");
        }
    }
    auto known = [&](int c) { return ds.names_.count(c) > 0; };

    for (const auto& img : sorted_files(base / "images", ".png")) {
        const std::string id = img.stem().string();
        const auto mask = base / "masks" / (id + ".png");
        const auto cat = category_prefix(id);
        if (!fs::exists(mask)) issues.push_back(img.string() + ": missing mask " + mask.string());
        if (!cat) {
            issues.push_back(img.string() + ": image id does not start with '<category>_'");
            continue;
        }
        if (!known(*cat)) issues.push_back(img.string() + ": unknown category id " + std::to_string(*cat));
        ds.images_.push_back({id, *cat, img.string(), mask.string()});
    }

    for (const auto& ann : sorted_files(base / "support", ".json")) {
        PadSupportRecord rec;
        rec.id = ann.stem().string();
        rec.annotation_path = ann.string();
        rec.image_path = (base / "support" / (rec.id + ".png")).string();
        try {
            const auto j = read_json(ann);
            rec.human_box = parse_box(j.at("human_box"));
            rec.object_box = parse_box(j.at("object_box"));
            rec.category = j.at("affordance_id").get<int>();
        } catch (const std::exception& e) {
            issues.push_back(ann.string() + ": malformed support record (" + e.what() + ")");
            continue;
        }
        if (!known(rec.category)) {
            issues.push_back(ann.string() + ": unknown category id " + std::to_string(rec.category));
            continue;
        }
        if (!fs::exists(rec.image_path)) {
            issues.push_back(ann.string() + ": missing support image " + rec.image_path);
            continue;
        }
        try {
            const auto im = read_png(rec.image_path);
            const int w = static_cast<int>(im.width), h = static_cast<int>(im.height);
            if (!rec.human_box.valid_in(w, h))
                issues.push_back(ann.string() + ": human_box " + rec.human_box.str() + " invalid for " +
                                 std::to_string(w) + "x" + std::to_string(h) + " image");
            if (!rec.object_box.valid_in(w, h))
                issues.push_back(ann.string() + ": object_box " + rec.object_box.str() + " invalid for " +
                                 std::to_string(w) + "x" + std::to_string(h) + " image");
        } catch (const std::exception& e) {
            issues.push_back(rec.image_path + ": " + e.what());
            continue;
        }
        ds.supports_.push_back(std::move(rec));
    }

    const auto splits = base / "splits";
    if (fs::is_directory(splits)) {
        FoldSplit split;
        for (int k = 1; fs::exists(splits / ("fold_" + std::to_string(k) + ".json")); ++k) {
            const auto p = splits / ("fold_" + std::to_string(k) + ".json");
            std::vector<int> part;
            try {
                auto j = read_json(p);
                if (j.is_object()) j = j.at("categories");
                part = j.get<std::vector<int>>();
            } catch (const std::exception& e) {
                issues.push_back(p.string() + ": malformed fold file (" + e.what() + ")");
            }
            for (int c : part)
                if (!known(c)) issues.push_back(p.string() + ": unknown category id " + std::to_string(c));
            split.parts.push_back(std::move(part));
        }
        std::set<int> seen;
        for (const auto& part : split.parts)
            for (int c : part)
                if (!seen.insert(c).second)
                    issues.push_back(splits.string() + ": category " + std::to_string(c) + " listed in two folds");
        if (!split.parts.empty()) ds.split_ = std::move(split);
    }

    if (!issues.empty()) throw DataValidationError(std::move(issues));
    return ds;
}

std::vector<int> PadDataset::categories() const {
    std::vector<int> out;
    for (const auto& [k, v] : names_) out.push_back(k);
    return out;
}

PadSummary PadDataset::summary() const {
    return {images_.size(), supports_.size(), names_.size(), split_ ? split_->k() : 0};
}

Tensor<float> resize_image(const Tensor<float>& img, std::size_t size) {
    if (img.dim(1) == size && img.dim(2) == size) return img;
    return kernels::resize_bilinear(img, size, size);
}

Tensor<float> resize_mask(const Tensor<float>& mask, std::size_t size) {
    if (mask.dim(1) == size && mask.dim(2) == size) return mask;
    auto r = kernels::resize_bilinear(mask, size, size);
    for (auto& v : r.data()) v = v >= 0.5f ? 1.f : 0.f;
    return r;
}

BBox rescale_box(const BBox& b, std::size_t from_w, std::size_t from_h, std::size_t to_w, std::size_t to_h) {
    const double sx = static_cast<double>(to_w) / static_cast<double>(from_w);
    const double sy = static_cast<double>(to_h) / static_cast<double>(from_h);
    const int W = static_cast<int>(to_w), H = static_cast<int>(to_h);
    BBox r{static_cast<int>(std::floor(b.x0 * sx)), static_cast<int>(std::floor(b.y0 * sy)),
           static_cast<int>(std::ceil(b.x1 * sx)), static_cast<int>(std::ceil(b.y1 * sy))};
    r.x0 = std::clamp(r.x0, 0, W - 1);
    r.y0 = std::clamp(r.y0, 0, H - 1);
    r.x1 = std::clamp(r.x1, r.x0 + 1, W);
    r.y1 = std::clamp(r.y1, r.y0 + 1, H);
    return r;
}

Episode PadDataset::make_episode(int category, std::size_t n, std::uint64_t seed, const std::vector<int>&) const {
    if (n == 0) throw std::invalid_argument("an episode needs at least one query");
    std::vector<const PadSupportRecord*> sups;
    for (const auto& s : supports_)
        if (s.category == category) sups.push_back(&s);
    std::vector<const PadImageRecord*> imgs;
    for (const auto& i : images_)
        if (i.category == category) imgs.push_back(&i);
    if (sups.empty() || imgs.empty())
        throw DataValidationError({root_ + ": category " + std::to_string(category) + " has no " +
                                   (sups.empty() ? "support records" : "query images")});

    Rng rng(mix_seed(seed, 0x9AD));
    Episode ep;
    ep.affordance_id = category;
    ep.seed = seed;

    const auto& sup = *sups[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(sups.size()) - 1))];
    const auto sup_img = image_to_tensor(read_png(sup.image_path));
    const std::size_t sw = sup_img.dim(2), sh = sup_img.dim(1);
    ep.support.image = resize_image(sup_img, input_size_);
    ep.support.human_box = rescale_box(sup.human_box, sw, sh, input_size_, input_size_);
    ep.support.object_box = rescale_box(sup.object_box, sw, sh, input_size_, input_size_);

    std::vector<std::size_t> order(imgs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    for (std::size_t q = 0; q < n; ++q) {
        const std::size_t pick =
            q < order.size() ? order[q] : static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(imgs.size()) - 1));
        const auto& rec = *imgs[pick];
        const auto img = image_to_tensor(read_png(rec.image_path));
        const auto mask = mask_to_tensor(read_png(rec.mask_path));
        if (mask.dim(1) != img.dim(1) || mask.dim(2) != img.dim(2))
            throw DataValidationError({rec.mask_path + ": mask size differs from " + rec.image_path});
        ep.queries.push_back(resize_image(img, input_size_));
        ep.masks.push_back(resize_mask(mask, input_size_));
    }
    return ep;
}

void write_synthetic_dataset(const std::string& root, std::size_t episodes, std::size_t queries_per_episode,
                             std::uint64_t seed, std::size_t canvas) {
    const fs::path base(root);
    for (const char* sub : {"images", "masks", "support", "splits"}) fs::create_directories(base / sub);

    json cats;
    std::vector<int> ids;
    for (int c = 0; c < kNumSyntheticAffordances; ++c) {
        cats[std::to_string(c)] = affordance_name(c);
        ids.push_back(c);
    }
    std::ofstream(base / "categories.json") << cats.dump(2) << '\n';

    const auto split = kfold_split(ids, 3, seed);
    for (std::size_t k = 0; k < split.k(); ++k)
        std::ofstream(base / "splits" / ("fold_" + std::to_string(k + 1) + ".json")) << json(split.parts[k]).dump()
                                                                                      << '\n';

    for (std::size_t e = 0; e < episodes; ++e) {
        const int cat = static_cast<int>(e % kNumSyntheticAffordances);
        const auto ep = generate_synthetic(mix_seed(seed, e), cat, queries_per_episode, canvas);
        const std::string stem = std::to_string(cat) + "_" + std::to_string(e);
        write_png((base / "support" / (stem + ".png")).string(), tensor_to_rgb(ep.support.image));
        const auto& h = ep.support.human_box;
        const auto& o = ep.support.object_box;
        json ann = {{"human_box", {h.x0, h.y0, h.x1, h.y1}}, {"object_box", {o.x0, o.y0, o.x1, o.y1}},
                    {"affordance_id", cat}};
        std::ofstream(base / "support" / (stem + ".json")) << ann.dump() << '\n';
        for (std::size_t q = 0; q < ep.queries.size(); ++q) {
            const std::string id = stem + "_" + std::to_string(q);
            write_png((base / "images" / (id + ".png")).string(), tensor_to_rgb(ep.queries[q]));
            write_png((base / "masks" / (id + ".png")).string(), probability_to_gray(ep.masks[q]));
        }
    }
}

}  // namespace osad
