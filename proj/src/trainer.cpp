#include "osad/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>

#include "json.hpp"
#include "osad/pad_dataset.hpp"
#include "osad/random.hpp"

namespace osad {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Checkpoint

namespace {

constexpr char kMagic[8] = {'O', 'S', 'A', 'D', 'C', 'K', 'P', 'T'};

template <typename U>
void put_le(std::ostream& os, U v) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
    U v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(U));
    if (!is) throw CheckpointError("truncated checkpoint");
    return v;
}

void put_floats(std::ostream& os, const std::vector<float>& v) {
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::vector<float> get_floats(std::istream& is, std::size_t n) {
    std::vector<float> v(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!is) throw CheckpointError("truncated checkpoint payload");
    return v;
}

}  // namespace

void Checkpoint::write(std::ostream& os) const {
    json manifest_json = json::array();
    for (const auto& e : manifest)
        manifest_json.push_back({{"name", e.name}, {"shape", e.shape}, {"offset", e.offset}, {"count", e.count}});
    const json header = {{"config", json::parse(config.to_json())},
                         {"step", step},
                         {"adam_t", adam_t},
                         {"payload_floats", parameters.size()},
                         {"manifest", manifest_json}};
    const std::string text = header.dump();
    os.write(kMagic, sizeof(kMagic));
    put_le<std::uint32_t>(os, kVersion);
    put_le<std::uint64_t>(os, text.size());
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    put_floats(os, parameters);
    put_floats(os, moment1);
    put_floats(os, moment2);
}

Checkpoint Checkpoint::read(std::istream& is) {
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw CheckpointError("not a checkpoint file");
    const auto version = get_le<std::uint32_t>(is);
    if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto len = get_le<std::uint64_t>(is);
    std::string text(len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(len));
    if (!is) throw CheckpointError("truncated checkpoint header");

    Checkpoint c;
    const auto header = json::parse(text);
    c.config = TrainConfig::from_json(header.at("config").dump());
    c.step = header.at("step");
    c.adam_t = header.at("adam_t");
    const std::size_t total = header.at("payload_floats");
    std::size_t expect = 0;
    for (const auto& e : header.at("manifest")) {
        ManifestEntry m{e.at("name"), e.at("shape").get<Shape>(), e.at("offset"), e.at("count")};
        if (m.offset != expect || m.count != shape_numel(m.shape))
            throw CheckpointError("manifest entry " + m.name + " does not tile the payload");
        expect += m.count;
        c.manifest.push_back(std::move(m));
    }
    if (expect != total) throw CheckpointError("manifest does not cover the payload");
    c.parameters = get_floats(is, total);
    c.moment1 = get_floats(is, total);
    c.moment2 = get_floats(is, total);
    return c;
}

void Checkpoint::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot write " + path);
    write(os);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot read " + path);
    return read(is);
}

OsadModel<float> Checkpoint::restore_model() const {
    OsadModel<float> model(config.model_config());
    std::size_t k = 0;
    model.visit_parameters([&](const std::string& name, Tensor<float>& t) {
        if (k >= manifest.size() || manifest[k].name != name || manifest[k].shape != t.shape())
            throw CheckpointError("checkpoint does not match model at parameter " + name);
        const auto& e = manifest[k++];
        std::copy_n(parameters.begin() + static_cast<long>(e.offset), e.count, t.data().begin());
    });
    if (k != manifest.size()) throw CheckpointError("checkpoint has extra parameters");
    return model;
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

Tensor<float> crop_resize(const Tensor<float>& x, std::size_t oy, std::size_t ox, std::size_t c) {
    const std::size_t C = x.dim(0), S = x.dim(1);
    Tensor<float> cropped({C, c, c});
    for (std::size_t ch = 0; ch < C; ++ch)
        for (std::size_t y = 0; y < c; ++y)
            for (std::size_t q = 0; q < c; ++q) cropped.at(ch, y, q) = x.at(ch, y + oy, q + ox);
    return kernels::resize_bilinear(cropped, S, x.dim(2));
}

Tensor<float> hflip(const Tensor<float>& x) {
    Tensor<float> out(x.shape());
    const std::size_t W = x.dim(2);
    for (std::size_t c = 0; c < x.dim(0); ++c)
        for (std::size_t y = 0; y < x.dim(1); ++y)
            for (std::size_t q = 0; q < W; ++q) out.at(c, y, q) = x.at(c, y, W - 1 - q);
    return out;
}

BBox crop_box(const BBox& b, int oy, int ox, int c, int S) {
    BBox shifted{b.x0 - ox, b.y0 - oy, b.x1 - ox, b.y1 - oy};
    shifted.x0 = std::clamp(shifted.x0, 0, c - 1);
    shifted.y0 = std::clamp(shifted.y0, 0, c - 1);
    shifted.x1 = std::clamp(shifted.x1, shifted.x0 + 1, c);
    shifted.y1 = std::clamp(shifted.y1, shifted.y0 + 1, c);
    return rescale_box(shifted, static_cast<std::size_t>(c), static_cast<std::size_t>(c), static_cast<std::size_t>(S),
                       static_cast<std::size_t>(S));
}

BBox flip_box(const BBox& b, int W) { return {W - b.x1, b.y0, W - b.x0, b.y1}; }

}  // namespace

void augment_episode(Episode& ep, std::uint64_t seed, bool crop, bool flip) {
    if (!crop && !flip) return;
    Rng rng(mix_seed(seed, 0xA06));
    const std::size_t S = ep.support.image.dim(1);
    const std::size_t c = S * 7 / 8;
    auto one = [&](Tensor<float>& img, Tensor<float>* mask, BBox* b1, BBox* b2) {
        if (crop) {
            const auto oy = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(S - c)));
            const auto ox = static_cast<std::size_t>(rng.uniform_int(0, static_cast<long>(S - c)));
            img = crop_resize(img, oy, ox, c);
            if (mask) {
                *mask = crop_resize(*mask, oy, ox, c);
                for (auto& v : mask->data()) v = v >= 0.5f ? 1.f : 0.f;
            }
            const int iy = static_cast<int>(oy), ix = static_cast<int>(ox), ic = static_cast<int>(c),
                      is = static_cast<int>(S);
            if (b1) *b1 = crop_box(*b1, iy, ix, ic, is);
            if (b2) *b2 = crop_box(*b2, iy, ix, ic, is);
        }
        if (flip && rng.bernoulli(0.5)) {
            img = hflip(img);
            if (mask) *mask = hflip(*mask);
            const int W = static_cast<int>(img.dim(2));
            if (b1) *b1 = flip_box(*b1, W);
            if (b2) *b2 = flip_box(*b2, W);
        }
    };
    one(ep.support.image, nullptr, &ep.support.human_box, &ep.support.object_box);
    for (std::size_t q = 0; q < ep.queries.size(); ++q) one(ep.queries[q], &ep.masks[q], nullptr, nullptr);
    ep.support_scene.clear();
    ep.query_scenes.clear();
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(TrainConfig cfg, const EpisodeSource& source, FoldSplit split)
    : cfg_(std::move(cfg)), source_(&source), split_(std::move(split)) {
    cfg_.validate();
    model_ = OsadModel<float>(cfg_.model_config());
    init_optimizer();
    for (std::size_t i = 0; i < cfg_.fixed_episodes; ++i)
        pool_.push_back(sample_episode(*source_, split_, cfg_.fold_id, Role::Train, cfg_.n_queries,
                                       mix_seed(cfg_.seed, 0xF00D0000ULL + i)));
}

Trainer::Trainer(const Checkpoint& ckpt, const EpisodeSource& source, FoldSplit split)
    : Trainer(ckpt.config, source, std::move(split)) {
    model_ = ckpt.restore_model();
    step_ = ckpt.step;
    adam_.t = ckpt.adam_t;
    std::size_t k = 0;
    for (auto& m : adam_.m) {
        const auto& e = ckpt.manifest.at(k++);
        std::copy_n(ckpt.moment1.begin() + static_cast<long>(e.offset), e.count, m.data().begin());
    }
    k = 0;
    for (auto& v : adam_.v) {
        const auto& e = ckpt.manifest.at(k++);
        std::copy_n(ckpt.moment2.begin() + static_cast<long>(e.offset), e.count, v.data().begin());
    }
}

std::vector<Tensor<float>*> Trainer::parameter_list() {
    std::vector<Tensor<float>*> out;
    model_.visit_parameters([&](const std::string&, Tensor<float>& t) { out.push_back(&t); });
    return out;
}

void Trainer::init_optimizer() { adam_ = AdamState<float>::zeros_like(parameter_list()); }

Episode Trainer::training_episode(long step, std::size_t index) const {
    const auto slot = static_cast<std::size_t>(step) * cfg_.episodes_per_step + index;
    if (!pool_.empty()) return pool_[slot % pool_.size()];
    return sample_episode(*source_, split_, cfg_.fold_id, Role::Train, cfg_.n_queries, mix_seed(cfg_.seed, slot));
}

double Trainer::episode_loss(const Episode& ep) const {
    Tape<float> tape;
    auto out = model_.forward(tape, ep.support, ep.queries);
    return decoder::deep_supervision_loss(out.predictions, ep.masks).value().item();
}

StepRecord Trainer::step() {
    auto params = parameter_list();
    std::vector<Tensor<float>> grads;
    for (auto* p : params) grads.emplace_back(p->shape());

    double total = 0;
    for (std::size_t e = 0; e < cfg_.episodes_per_step; ++e) {
        Episode ep = training_episode(step_, e);
        augment_episode(ep, mix_seed(cfg_.seed, (static_cast<std::uint64_t>(step_) << 8) + e), cfg_.random_crop,
                        cfg_.random_flip);
        Tape<float> tape;
        auto out = model_.forward(tape, ep.support, ep.queries);
        auto loss = decoder::deep_supervision_loss(out.predictions, ep.masks);
        const double value = loss.value().item();
        if (!std::isfinite(value))
            throw DivergenceError("loss became " + std::to_string(value) + " at step " + std::to_string(step_));
        total += value;
        tape.backward(loss);
        for (std::size_t k = 0; k < params.size(); ++k)
            if (const auto* g = tape.parameter_grad(*params[k]))
                for (std::size_t i = 0; i < g->size(); ++i) grads[k][i] += (*g)[i];
    }
    adam_step(params, grads, adam_, AdamHyper{cfg_.learning_rate});
    return {step_++, total};
}

std::vector<StepRecord> Trainer::run(std::size_t steps, std::ostream* trace) {
    std::vector<StepRecord> out;
    for (std::size_t i = 0; i < steps; ++i) {
        out.push_back(step());
        if (trace) write_trace_record(*trace, out.back());
    }
    return out;
}

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.config = cfg_;
    c.step = step_;
    c.adam_t = adam_.t;
    std::size_t k = 0;
    model_.visit_parameters([&](const std::string& name, const Tensor<float>& t) {
        c.manifest.push_back({name, t.shape(), c.parameters.size(), t.size()});
        c.parameters.insert(c.parameters.end(), t.data().begin(), t.data().end());
        c.moment1.insert(c.moment1.end(), adam_.m[k].data().begin(), adam_.m[k].data().end());
        c.moment2.insert(c.moment2.end(), adam_.v[k].data().begin(), adam_.v[k].data().end());
        ++k;
    });
    return c;
}

void write_trace_record(std::ostream& os, const StepRecord& r) {
    os << json{{"step", r.step}, {"loss", r.loss}}.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Inference and evaluation

std::vector<Tensor<float>> predict_masks(const OsadModel<float>& model, const SupportSample<float>& support,
                                         const std::vector<Tensor<float>>& queries) {
    Tape<float> tape;
    auto out = model.forward(tape, support, queries);
    std::vector<Tensor<float>> maps;
    for (const auto& p : out.predictions) maps.push_back(p.final_prediction().value());
    return maps;
}

std::vector<Tensor<float>> predict_any_size(const OsadModel<float>& model, std::size_t input_size,
                                            const SupportSample<float>& support,
                                            const std::vector<Tensor<float>>& queries) {
    SupportSample<float> s;
    s.image = resize_image(support.image, input_size);
    s.human_box = rescale_box(support.human_box, support.image.dim(2), support.image.dim(1), input_size, input_size);
    s.object_box = rescale_box(support.object_box, support.image.dim(2), support.image.dim(1), input_size, input_size);
    std::vector<Tensor<float>> qs;
    for (const auto& q : queries) qs.push_back(resize_image(q, input_size));
    auto maps = predict_masks(model, s, qs);
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const std::size_t h = queries[i].dim(1), w = queries[i].dim(2);
        if (maps[i].dim(1) != h || maps[i].dim(2) != w) maps[i] = kernels::resize_bilinear(maps[i], h, w);
    }
    return maps;
}

namespace {

template <typename Predict>
EvaluationResult run_evaluation(Predict&& predict, const EpisodeSource& source, const FoldSplit& split, int fold,
                                std::size_t episodes, std::size_t n_queries, std::uint64_t seed) {
    EvaluationResult r;
    for (std::size_t e = 0; e < episodes; ++e) {
        const Episode ep = sample_episode(source, split, fold, Role::Test, n_queries, mix_seed(seed, 0xE7A1 + e));
        const auto maps = predict(ep);
        for (std::size_t q = 0; q < maps.size(); ++q)
            r.records.push_back(
                metrics::evaluate_image(maps[q], ep.masks[q], fold, static_cast<long>(e), static_cast<long>(q)));
    }
    r.aggregate = metrics::aggregate(r.records, fold);
    return r;
}

}  // namespace

EvaluationResult evaluate(const OsadModel<float>& model, const EpisodeSource& source, const FoldSplit& split,
                          int fold, std::size_t episodes, std::size_t n_queries, std::uint64_t seed) {
    return run_evaluation([&](const Episode& ep) { return predict_masks(model, ep.support, ep.queries); }, source,
                          split, fold, episodes, n_queries, seed);
}

EvaluationResult evaluate_constant(float value, const EpisodeSource& source, const FoldSplit& split, int fold,
                                   std::size_t episodes, std::size_t n_queries, std::uint64_t seed) {
    return run_evaluation(
        [&](const Episode& ep) {
            std::vector<Tensor<float>> maps;
            for (const auto& m : ep.masks) maps.emplace_back(m.shape(), value);
            return maps;
        },
        source, split, fold, episodes, n_queries, seed);
}

}  // namespace osad
