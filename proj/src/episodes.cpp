#include "osad/episodes.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

#include "osad/random.hpp"

namespace osad {

std::string affordance_name(int id) {
    switch (id) {
        case 0: return "contain";
        case 1: return "support";
        case 2: return "roll";
        default: throw std::invalid_argument("unknown affordance id " + std::to_string(id));
    }
}

namespace {

constexpr int kLegWidth = 3;
constexpr int kMargin = 2;

struct Extent {
    int w, h;
};

Extent shape_extent(ShapeKind kind, const std::vector<int>& d) {
    switch (kind) {
        case ShapeKind::Cup:
        case ShapeKind::Crate: return {d[0], d[1]};
        case ShapeKind::Bowl: return {2 * d[0] + 1, d[0] + 1};
        case ShapeKind::Table: return {d[0], d[1] + d[2]};
        case ShapeKind::Bench: return {d[0], d[1] + d[2]};
        case ShapeKind::Chair: return {d[0], d[3] + d[1] + d[2]};
        case ShapeKind::Ball:
        case ShapeKind::Wheel: return {2 * d[0] + 1, 2 * d[0] + 1};
        case ShapeKind::Texture: return {d[0], d[1]};
        case ShapeKind::Agent: return {2 * d[0] + 1, 2 * d[1] + 1};
    }
    return {0, 0};
}

// Whether local pixel (x, y) of a shape with parameters d is covered.
bool covers(ShapeKind kind, const std::vector<int>& d, int x, int y) {
    switch (kind) {
        case ShapeKind::Cup: {
            const int w = d[0], h = d[1], t = d[2], b = d[3];
            return x < t || x >= w - t || y >= h - b;
        }
        case ShapeKind::Crate: {
            const int w = d[0], h = d[1], t = d[2];
            return x < t || x >= w - t || y >= h - t;
        }
        case ShapeKind::Bowl: {
            const int r = d[0], t = d[1];
            const int dx = x - r, dy = y, d2 = dx * dx + dy * dy;
            return d2 <= r * r + r && d2 >= (r - t) * (r - t);
        }
        case ShapeKind::Table:
        case ShapeKind::Bench: {
            const int w = d[0], s = d[1], inset = kind == ShapeKind::Bench ? d[3] : 0;
            if (y < s) return true;
            return (x >= inset && x < inset + kLegWidth) || (x >= w - inset - kLegWidth && x < w - inset);
        }
        case ShapeKind::Chair: {
            const int w = d[0], s = d[1], back = d[3], right = d[4];
            if (y < back) return right ? x >= w - kLegWidth : x < kLegWidth;
            if (y < back + s) return true;
            return x < kLegWidth || x >= w - kLegWidth;
        }
        case ShapeKind::Ball: {
            const int r = d[0], dx = x - r, dy = y - r;
            return dx * dx + dy * dy <= r * r + r;
        }
        case ShapeKind::Wheel: {
            const int r = d[0], hole = d[1], hub = d[2];
            const int dx = x - r, dy = y - r, d2 = dx * dx + dy * dy;
            return d2 <= r * r + r && (d2 >= hole * hole || d2 <= hub * hub);
        }
        case ShapeKind::Texture: return true;
        case ShapeKind::Agent: {
            const double a = d[0] + 0.5, b = d[1] + 0.5;
            const double dx = (x - d[0]) / a, dy = (y - d[1]) / b;
            return dx * dx + dy * dy <= 1.0;
        }
    }
    return false;
}

constexpr std::array<ShapeKind, 3> kContainKinds{ShapeKind::Cup, ShapeKind::Bowl, ShapeKind::Crate};
constexpr std::array<ShapeKind, 3> kSupportKinds{ShapeKind::Table, ShapeKind::Bench, ShapeKind::Chair};
constexpr std::array<ShapeKind, 3> kRollKinds{ShapeKind::Ball, ShapeKind::Wheel, ShapeKind::Ball};

ShapeKind pick_kind(int family, Rng& rng) {
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, 2));
    switch (family) {
        case 0: return kContainKinds[i];
        case 1: return kSupportKinds[i];
        case 2: return kRollKinds[i];
        default: throw std::invalid_argument("unknown affordance id " + std::to_string(family));
    }
}

int ri(Rng& rng, int lo, int hi) { return static_cast<int>(rng.uniform_int(lo, hi)); }

std::vector<int> pick_dims(ShapeKind kind, Rng& rng) {
    switch (kind) {
        case ShapeKind::Cup: return {ri(rng, 12, 16), ri(rng, 13, 18), ri(rng, 3, 4), ri(rng, 3, 4)};
        case ShapeKind::Crate: return {ri(rng, 18, 24), ri(rng, 10, 13), ri(rng, 3, 4)};
        case ShapeKind::Bowl: return {ri(rng, 8, 11), ri(rng, 3, 4)};
        case ShapeKind::Table: return {ri(rng, 16, 22), ri(rng, 3, 4), ri(rng, 7, 11)};
        case ShapeKind::Bench: return {ri(rng, 18, 24), 3, ri(rng, 5, 7), ri(rng, 1, 3)};
        case ShapeKind::Chair: return {ri(rng, 12, 16), 3, ri(rng, 6, 9), ri(rng, 6, 10), ri(rng, 0, 1)};
        case ShapeKind::Ball: return {ri(rng, 6, 10)};
        case ShapeKind::Wheel: {
            const int r = ri(rng, 7, 10);
            return {r, r / 2, ri(rng, 1, 2) == 1 ? 1 : 0};
        }
        case ShapeKind::Texture: return {ri(rng, 7, 12), ri(rng, 7, 12)};
        case ShapeKind::Agent: return {ri(rng, 3, 5), ri(rng, 6, 9)};
    }
    return {};
}

struct Canvas {
    std::size_t size;
    std::vector<float> gray;
    std::vector<std::uint8_t> occupied;

    Canvas(std::size_t s, Rng& rng) : size(s), gray(s * s), occupied(s * s, 0) {
        const double bg = rng.uniform(0.05, 0.3);
        for (auto& v : gray) v = static_cast<float>(bg + rng.uniform(-0.03, 0.03));
    }

    bool free(int x0, int y0, Extent e) const {
        const int S = static_cast<int>(size);
        if (x0 < 0 || y0 < 0 || x0 + e.w > S || y0 + e.h > S) return false;
        for (int y = std::max(0, y0 - kMargin); y < std::min(S, y0 + e.h + kMargin); ++y)
            for (int x = std::max(0, x0 - kMargin); x < std::min(S, x0 + e.w + kMargin); ++x)
                if (occupied[static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)]) return false;
        return true;
    }

    void paint(const SceneObject& o, float intensity, float alt = -1.f, int period = 1) {
        mark_box(o.box);
        for (int y = o.box.y0; y < o.box.y1; ++y)
            for (int x = o.box.x0; x < o.box.x1; ++x) {
                const auto idx = static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x);
                if (!o.footprint[idx]) continue;
                const bool odd = ((x - o.box.x0) / period + (y - o.box.y0) / period) % 2;
                gray[idx] = (alt >= 0.f && odd) ? alt : intensity;
            }
    }

    void mark_box(const BBox& b) {
        for (int y = b.y0; y < b.y1; ++y)
            for (int x = b.x0; x < b.x1; ++x) occupied[static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)] = 1;
    }

    Tensor<float> image() const {
        Tensor<float> t({3, size, size});
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t i = 0; i < size * size; ++i) t[c * size * size + i] = std::clamp(gray[i], 0.f, 1.f);
        return t;
    }
};

bool try_place(Canvas& canvas, ShapeKind kind, int family, const std::vector<int>& dims, Rng& rng,
               SceneObject& out) {
    const auto e = shape_extent(kind, dims);
    const int S = static_cast<int>(canvas.size);
    if (e.w > S || e.h > S) return false;
    for (int attempt = 0; attempt < 100; ++attempt) {
        const int x0 = ri(rng, 0, S - e.w), y0 = ri(rng, 0, S - e.h);
        if (!canvas.free(x0, y0, e)) continue;
        out = rasterize_shape(kind, family, x0, y0, dims, canvas.size);
        return true;
    }
    return false;
}

Tensor<float> union_mask(const std::vector<SceneObject>& scene, int family, std::size_t size) {
    Tensor<float> m({1, size, size});
    for (const auto& o : scene)
        if (o.family == family)
            for (std::size_t i = 0; i < size * size; ++i)
                if (o.footprint[i]) m[i] = 1.f;
    return m;
}

// Agent box touching the interaction surface of `obj`, or false if it does not fit.
bool agent_position(const SceneObject& obj, const std::vector<int>& obj_dims, Extent agent, int family, Rng& rng,
                    int S, int& ax0, int& ay0) {
    const BBox& b = obj.box;
    switch (family) {
        case 0: {  // rests on one rim wall
            const int t = obj.kind == ShapeKind::Bowl ? obj_dims[1] : obj_dims[2];
            const int wall_cx = rng.bernoulli(0.5) ? b.x0 + t / 2 : b.x1 - 1 - t / 2;
            ax0 = wall_cx - agent.w / 2;
            ay0 = b.y0 - agent.h;
            break;
        }
        case 1: {  // sits on the slab
            int slab_x0 = b.x0, slab_x1 = b.x1, slab_y = b.y0;
            if (obj.kind == ShapeKind::Chair) {
                slab_y = b.y0 + obj_dims[3];
                if (obj_dims[4]) slab_x1 -= kLegWidth; else slab_x0 += kLegWidth;
            }
            ax0 = (slab_x0 + slab_x1) / 2 - agent.w / 2 + ri(rng, -1, 1);
            ay0 = slab_y - agent.h;
            break;
        }
        default: {  // pushes from one side
            const bool left = rng.bernoulli(0.5);
            ax0 = left ? b.x0 - agent.w : b.x1;
            ay0 = (b.y0 + b.y1) / 2 - agent.h / 2;
            break;
        }
    }
    return ax0 >= 0 && ay0 >= 0 && ax0 + agent.w <= S && ay0 + agent.h <= S;
}

}  // namespace

SceneObject rasterize_shape(ShapeKind kind, int family, int x0, int y0, const std::vector<int>& dims,
                            std::size_t canvas) {
    const auto e = shape_extent(kind, dims);
    const int S = static_cast<int>(canvas);
    if (x0 < 0 || y0 < 0 || x0 + e.w > S || y0 + e.h > S) throw std::invalid_argument("shape does not fit canvas");
    SceneObject o;
    o.kind = kind;
    o.family = family;
    o.box = {x0, y0, x0 + e.w, y0 + e.h};
    o.footprint.assign(canvas * canvas, 0);
    for (int y = 0; y < e.h; ++y)
        for (int x = 0; x < e.w; ++x)
            if (covers(kind, dims, x, y))
                o.footprint[static_cast<std::size_t>(y0 + y) * canvas + static_cast<std::size_t>(x0 + x)] = 1;
    return o;
}

Episode generate_synthetic(std::uint64_t seed, int affordance_id, std::size_t n, std::size_t canvas,
                           const std::vector<int>& families) {
    auto known = [](int f) { return f >= 0 && f < kNumSyntheticAffordances; };
    if (!known(affordance_id)) throw std::invalid_argument("unknown affordance id " + std::to_string(affordance_id));
    std::vector<int> pool = families;
    if (pool.empty())
        for (int f = 0; f < kNumSyntheticAffordances; ++f) pool.push_back(f);
    for (int f : pool)
        if (!known(f)) throw std::invalid_argument("unknown affordance id " + std::to_string(f));
    pool.push_back(affordance_id);
    std::sort(pool.begin(), pool.end());
    pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
    auto other_than = [&](int f, Rng& rng) {
        std::vector<int> rest;
        for (int g : pool)
            if (g != f) rest.push_back(g);
        return rest.empty() ? f : rest[static_cast<std::size_t>(ri(rng, 0, static_cast<int>(rest.size()) - 1))];
    };
    if (n == 0) throw std::invalid_argument("an episode needs at least one query");
    if (canvas < 64 || canvas % 32) throw std::invalid_argument("synthetic canvas must be a multiple of 32, >= 64");
    const int S = static_cast<int>(canvas);

    Episode ep;
    ep.affordance_id = affordance_id;
    ep.seed = seed;

    // Support scene: one qualifying object and an agent touching its interaction surface.
    {
        Rng rng(mix_seed(seed, 0xA11CE));
        for (int attempt = 0;; ++attempt) {
            if (attempt > 1000) throw std::runtime_error("could not lay out support scene");
            Canvas c(canvas, rng);
            const ShapeKind kind = pick_kind(affordance_id, rng);
            const auto dims = pick_dims(kind, rng);
            SceneObject obj;
            if (!try_place(c, kind, affordance_id, dims, rng, obj)) continue;
            const auto adims = pick_dims(ShapeKind::Agent, rng);
            const auto aext = shape_extent(ShapeKind::Agent, adims);
            int ax0 = 0, ay0 = 0;
            if (!agent_position(obj, dims, aext, affordance_id, rng, S, ax0, ay0)) continue;
            SceneObject agent = rasterize_shape(ShapeKind::Agent, -1, ax0, ay0, adims, canvas);
            bool clash = false;
            for (std::size_t i = 0; i < canvas * canvas; ++i) clash = clash || (agent.footprint[i] && obj.footprint[i]);
            if (clash) continue;
            c.paint(obj, static_cast<float>(rng.uniform(0.5, 1.0)));
            c.paint(agent, static_cast<float>(rng.uniform(0.5, 1.0)));
            ep.support.image = c.image();
            ep.support.human_box = agent.box;
            ep.support.object_box = obj.box;
            ep.support_scene = {obj, agent};
            break;
        }
    }

    for (std::size_t q = 0; q < n; ++q) {
        Rng rng(mix_seed(seed, 0x9E000 + q));
        Canvas c(canvas, rng);
        const int count = ri(rng, 2, 4);
        std::vector<int> families;
        families.push_back(rng.bernoulli(0.8) ? affordance_id : other_than(affordance_id, rng));
        for (int i = 1; i < count; ++i)
            families.push_back(pool[static_cast<std::size_t>(ri(rng, 0, static_cast<int>(pool.size()) - 1))]);
        if (std::all_of(families.begin(), families.end(), [&](int f) { return f == families.front(); }))
            families.back() = other_than(families.front(), rng);

        std::vector<SceneObject> scene;
        for (int fam : families) {
            const ShapeKind kind = pick_kind(fam, rng);
            SceneObject o;
            if (try_place(c, kind, fam, pick_dims(kind, rng), rng, o)) {
                c.paint(o, static_cast<float>(rng.uniform(0.5, 1.0)));
                scene.push_back(std::move(o));
            }
        }
        const int textures = ri(rng, 0, 2);
        for (int i = 0; i < textures; ++i) {
            SceneObject o;
            if (try_place(c, ShapeKind::Texture, -1, pick_dims(ShapeKind::Texture, rng), rng, o)) {
                const float a = static_cast<float>(rng.uniform(0.35, 0.9));
                const float b = a > 0.6f ? a - 0.3f : a + 0.3f;
                c.paint(o, a, b, ri(rng, 1, 2));
                scene.push_back(std::move(o));
            }
        }
        ep.queries.push_back(c.image());
        ep.masks.push_back(union_mask(scene, affordance_id, canvas));
        ep.query_scenes.push_back(std::move(scene));
    }
    return ep;
}

const std::vector<int>& FoldSplit::test_categories(int fold) const {
    if (fold < 1 || static_cast<std::size_t>(fold) > parts.size())
        throw std::out_of_range("fold " + std::to_string(fold) + " outside 1.." + std::to_string(parts.size()));
    return parts[static_cast<std::size_t>(fold - 1)];
}

std::vector<int> FoldSplit::train_categories(int fold) const {
    test_categories(fold);
    std::vector<int> out;
    for (std::size_t p = 0; p < parts.size(); ++p)
        if (static_cast<int>(p) != fold - 1) out.insert(out.end(), parts[p].begin(), parts[p].end());
    std::sort(out.begin(), out.end());
    return out;
}

FoldSplit kfold_split(std::vector<int> categories, std::size_t k, std::uint64_t seed) {
    if (k == 0) throw std::invalid_argument("k must be positive");
    std::sort(categories.begin(), categories.end());
    if (std::adjacent_find(categories.begin(), categories.end()) != categories.end())
        throw std::invalid_argument("duplicate category ids");
    if (k > categories.size())
        throw std::invalid_argument("k = " + std::to_string(k) + " exceeds category count " +
                                    std::to_string(categories.size()));
    Rng rng(mix_seed(seed, 0xF01D));
    rng.shuffle(categories.begin(), categories.end());
    FoldSplit split;
    split.parts.resize(k);
    for (std::size_t i = 0; i < categories.size(); ++i) split.parts[i % k].push_back(categories[i]);
    for (auto& p : split.parts) std::sort(p.begin(), p.end());
    return split;
}

int sample_category(const FoldSplit& split, int fold, Role role, std::uint64_t seed) {
    const auto cats = role == Role::Test ? split.test_categories(fold) : split.train_categories(fold);
    if (cats.empty()) throw std::invalid_argument("fold " + std::to_string(fold) + " has an empty partition");
    Rng rng(mix_seed(seed, 0xCA7));
    return cats[static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(cats.size()) - 1))];
}

Episode sample_episode(const EpisodeSource& source, const FoldSplit& split, int fold, Role role, std::size_t n,
                       std::uint64_t seed) {
    const int category = sample_category(split, fold, role, seed);
    const auto visible = role == Role::Train ? split.train_categories(fold) : std::vector<int>{};
    return source.make_episode(category, n, mix_seed(seed, 0xE915), visible);
}

}  // namespace osad
