#pragma once

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "osad/adam.hpp"
#include "osad/config.hpp"
#include "osad/episodes.hpp"
#include "osad/metrics.hpp"
#include "osad/model.hpp"

namespace osad {

/// Raised when the training loss stops being finite.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ManifestEntry {
    std::string name;
    Shape shape;
    std::size_t offset = 0;  // in floats, into the parameter payload
    std::size_t count = 0;
};

/// Model parameters, optimizer moments, step counter and config snapshot.
/// On disk: "OSADCKPT", u32 version, u64 header length, JSON header, then
/// three little-endian float32 blocks (parameters, first moments, second moments).
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    TrainConfig config;
    long step = 0;
    std::vector<ManifestEntry> manifest;
    std::vector<float> parameters;
    std::vector<float> moment1;
    std::vector<float> moment2;
    long adam_t = 0;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);
    void write(std::ostream& os) const;
    static Checkpoint read(std::istream& is);

    /// Builds a model from the config and copies every manifest tensor into it.
    OsadModel<float> restore_model() const;
};

struct StepRecord {
    long step = 0;
    double loss = 0;
};

/// Random 7/8 crop resampled back to full size and/or a horizontal flip, applied
/// identically to each image and its mask (support boxes are transformed to match).
void augment_episode(Episode& ep, std::uint64_t seed, bool crop, bool flip);

/// Episodic trainer: one Adam step per call to step().
class Trainer {
public:
    Trainer(TrainConfig cfg, const EpisodeSource& source, FoldSplit split);
    Trainer(const Checkpoint& ckpt, const EpisodeSource& source, FoldSplit split);

    StepRecord step();
    std::vector<StepRecord> run(std::size_t steps, std::ostream* trace = nullptr);

    /// Loss of one episode under the current parameters (no update).
    double episode_loss(const Episode& ep) const;

    Checkpoint checkpoint() const;
    const OsadModel<float>& model() const { return model_; }
    OsadModel<float>& model() { return model_; }
    const TrainConfig& config() const { return cfg_; }
    long step_count() const { return step_; }
    /// Training episode `index` of optimizer step `step` (0-based), before augmentation.
    Episode training_episode(long step, std::size_t index) const;

private:
    void init_optimizer();
    std::vector<Tensor<float>*> parameter_list();

    TrainConfig cfg_;
    const EpisodeSource* source_;
    FoldSplit split_;
    OsadModel<float> model_;
    AdamState<float> adam_;
    long step_ = 0;
    std::vector<Episode> pool_;
};

void write_trace_record(std::ostream& os, const StepRecord& r);

/// D^1 of every query image for one episode.
std::vector<Tensor<float>> predict_masks(const OsadModel<float>& model, const SupportSample<float>& support,
                                         const std::vector<Tensor<float>>& queries);

/// Resamples arbitrary-sized inputs to the model resolution, predicts, and
/// resamples D^1 back to each query's own size.
std::vector<Tensor<float>> predict_any_size(const OsadModel<float>& model, std::size_t input_size,
                                            const SupportSample<float>& support,
                                            const std::vector<Tensor<float>>& queries);

struct EvaluationResult {
    std::vector<metrics::ImageRecord> records;
    metrics::MetricsReport aggregate;
};

/// Metrics of D^1 on `episodes` test-role episodes of the given fold.
EvaluationResult evaluate(const OsadModel<float>& model, const EpisodeSource& source, const FoldSplit& split,
                          int fold, std::size_t episodes, std::size_t n_queries, std::uint64_t seed);

/// Same protocol with a fixed prediction in place of the model, e.g. all-ones.
EvaluationResult evaluate_constant(float value, const EpisodeSource& source, const FoldSplit& split, int fold,
                                   std::size_t episodes, std::size_t n_queries, std::uint64_t seed);

}  // namespace osad
