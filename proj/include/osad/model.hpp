#pragma once

#include <functional>
#include <string>
#include <vector>

#include "osad/cem.hpp"
#include "osad/decoder.hpp"
#include "osad/encoder.hpp"
#include "osad/plm.hpp"
#include "osad/ptm.hpp"

namespace osad {

struct ModelConfig {
    std::vector<std::size_t> encoder_channels{16, 32, 32, 64, 64};
    std::size_t decoder_width = 32;
    std::size_t num_bases = 16;
    std::size_t basis_dim = 32;
    std::size_t em_iterations = 3;
    std::uint64_t seed = 1;
};

template <typename T>
struct ModelOutput {
    PurposeEncoding<T> purpose;
    std::vector<decoder::PredictionStack<T>> predictions;
    cem::Result<T> collaboration;
};

/// Support/query images in, per-query prediction stacks out.
template <typename T>
class OsadModel {
public:
    OsadModel() = default;

    explicit OsadModel(const ModelConfig& cfg) : cfg_(cfg) {
        Rng rng(mix_seed(cfg.seed, 0x05AD));
        encoder_ = Encoder<T>(cfg.encoder_channels, rng);
        plm_ = plm::Params<T>::init(cfg.encoder_channels[4], rng);
        cem_ = cem::Params<T>::init(cfg.encoder_channels[4], cfg.basis_dim, cfg.num_bases, rng);
        decoder_ = decoder::Params<T>::init(cfg.encoder_channels, cfg.decoder_width, rng);
    }

    const ModelConfig& config() const { return cfg_; }
    const Encoder<T>& encoder() const { return encoder_; }
    Encoder<T>& encoder() { return encoder_; }
    const plm::Params<T>& plm_params() const { return plm_; }
    plm::Params<T>& plm_params() { return plm_; }
    const cem::Params<T>& cem_params() const { return cem_; }
    cem::Params<T>& cem_params() { return cem_; }
    const decoder::Params<T>& decoder_params() const { return decoder_; }
    decoder::Params<T>& decoder_params() { return decoder_; }

    /// Visits every trainable tensor in a fixed order with a stable name.
    void visit_parameters(const std::function<void(const std::string&, Tensor<T>&)>& f) {
        encoder_.visit(f);
        plm_.visit(f);
        cem_.visit(f);
        decoder_.visit(f);
    }

    void visit_parameters(const std::function<void(const std::string&, const Tensor<T>&)>& f) const {
        const_cast<OsadModel*>(this)->visit_parameters(
            [&](const std::string& n, Tensor<T>& t) { f(n, static_cast<const Tensor<T>&>(t)); });
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        visit_parameters([&](const std::string&, const Tensor<T>& t) { n += t.size(); });
        return n;
    }

    template <typename U>
    OsadModel<U> cast() const {
        OsadModel<U> m;
        m.cfg_ = cfg_;
        m.encoder_ = encoder_.template cast<U>();
        m.plm_ = plm_.template cast<U>();
        m.cem_ = cem_.template cast<U>();
        m.decoder_ = decoder_.template cast<U>();
        return m;
    }

    /// encode -> purpose learning -> purpose transfer (level 5) -> collaboration over all
    /// queries -> decoding with the enhanced level 5.
    ModelOutput<T> forward(Tape<T>& tape, const SupportSample<T>& support, const std::vector<Tensor<T>>& queries,
                           std::size_t em_iterations = 0) const {
        if (queries.empty()) throw std::invalid_argument("forward: at least one query image is required");
        const std::size_t H = support.image.dim(1), W = support.image.dim(2);
        ModelOutput<T> out;

        auto sup_pyr = encoder_.encode(tape.constant(normalize_pixels(support.image)));
        out.purpose = plm::forward(plm_, support.human_box, support.object_box, sup_pyr.level(5), H, W);

        std::vector<FeaturePyramid<T>> pyramids;
        std::vector<Var<T>> transferred;
        for (const auto& q : queries) {
            if (q.shape() != support.image.shape())
                throw DimensionError("forward: query " + shape_str(q.shape()) + " vs support " +
                                     shape_str(support.image.shape()));
            pyramids.push_back(encoder_.encode(tape.constant(normalize_pixels(q))));
            transferred.push_back(ptm::transfer(pyramids.back().level(5), out.purpose));
        }

        out.collaboration =
            cem::forward(cem_, transferred, em_iterations ? em_iterations : cfg_.em_iterations);
        for (std::size_t i = 0; i < queries.size(); ++i) {
            pyramids[i].level(5) = out.collaboration.outputs[i];
            out.predictions.push_back(decoder::decode(decoder_, pyramids[i], H, W));
        }
        return out;
    }

private:
    template <typename U>
    friend class OsadModel;

    ModelConfig cfg_;
    Encoder<T> encoder_;
    plm::Params<T> plm_;
    cem::Params<T> cem_;
    decoder::Params<T> decoder_;
};

}  // namespace osad
