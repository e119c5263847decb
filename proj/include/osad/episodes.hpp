#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "osad/plm.hpp"

namespace osad {

/// Built-in synthetic affordance families. Ids double as category ids.
enum class Affordance : int { Contain = 0, Support = 1, Roll = 2 };
inline constexpr int kNumSyntheticAffordances = 3;

std::string affordance_name(int id);

enum class ShapeKind { Cup, Bowl, Crate, Table, Bench, Chair, Ball, Wheel, Texture, Agent };

/// One rasterised scene element. `family` is -1 for distractors and agents.
struct SceneObject {
    ShapeKind kind = ShapeKind::Texture;
    int family = -1;
    BBox box;
    std::vector<std::uint8_t> footprint;  // canvas-sized, 1 where the element covers a pixel
};

struct Episode {
    SupportSample<float> support;
    std::vector<Tensor<float>> queries;  // 3 x H x W
    std::vector<Tensor<float>> masks;    // 1 x H x W, {0,1}
    int affordance_id = 0;
    std::uint64_t seed = 0;

    // Scene bookkeeping for the synthetic generator; empty for loaded data.
    std::vector<SceneObject> support_scene;
    std::vector<std::vector<SceneObject>> query_scenes;
};

inline constexpr std::size_t kDefaultCanvas = 64;

/// Deterministic synthetic episode: one support scene showing an agent
/// touching the interaction surface of an object of `affordance_id`, and `n`
/// query scenes whose masks cover every object of that family. Query objects
/// are drawn from `families` (all families when empty).
Episode generate_synthetic(std::uint64_t seed, int affordance_id, std::size_t n,
                           std::size_t canvas = kDefaultCanvas, const std::vector<int>& families = {});

/// Footprint rasteriser for a single shape, exposed for tests.
SceneObject rasterize_shape(ShapeKind kind, int family, int x0, int y0, const std::vector<int>& dims,
                            std::size_t canvas);

/// Category partition for k-fold evaluation; folds are numbered 1..k.
struct FoldSplit {
    std::vector<std::vector<int>> parts;

    std::size_t k() const { return parts.size(); }
    const std::vector<int>& test_categories(int fold) const;
    std::vector<int> train_categories(int fold) const;
};

enum class Role { Train, Test };

/// Seeded shuffle of the categories dealt round-robin into k parts.
FoldSplit kfold_split(std::vector<int> categories, std::size_t k, std::uint64_t seed);

/// Anything that can materialise an episode for a given category.
class EpisodeSource {
public:
    virtual ~EpisodeSource() = default;
    virtual std::vector<int> categories() const = 0;
    /// `visible` lists the categories whose objects may appear at all; empty means no restriction.
    virtual Episode make_episode(int category, std::size_t n, std::uint64_t seed,
                                 const std::vector<int>& visible = {}) const = 0;
};

class SyntheticSource final : public EpisodeSource {
public:
    explicit SyntheticSource(std::size_t canvas = kDefaultCanvas) : canvas_(canvas) {}
    std::vector<int> categories() const override { return {0, 1, 2}; }
    Episode make_episode(int category, std::size_t n, std::uint64_t seed,
                         const std::vector<int>& visible = {}) const override {
        return generate_synthetic(seed, category, n, canvas_, visible);
    }

private:
    std::size_t canvas_;
};

/// Category drawn uniformly from the fold's role partition, then one episode of it.
/// Training episodes only show objects of training categories.
Episode sample_episode(const EpisodeSource& source, const FoldSplit& split, int fold, Role role, std::size_t n,
                       std::uint64_t seed);

/// The category sample_episode would pick, without materialising the episode.
int sample_category(const FoldSplit& split, int fold, Role role, std::uint64_t seed);

}  // namespace osad
