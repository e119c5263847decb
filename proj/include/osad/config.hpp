#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "osad/model.hpp"

namespace osad {

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Training hyperparameters. Defaults are the desk-scale profile; the
/// full-scale profile is learning_rate 1e-4, num_bases 256, input_size 320.
struct TrainConfig {
    double learning_rate = 1e-3;
    std::size_t steps = 200;
    std::size_t n_queries = 5;
    std::size_t num_bases = 16;
    std::size_t basis_dim = 32;
    std::size_t em_iterations = 3;
    std::uint64_t seed = 1;
    std::size_t input_size = 64;
    bool random_crop = false;
    bool random_flip = false;
    int fold_id = 1;
    std::vector<std::size_t> encoder_channels{16, 32, 32, 64, 64};
    std::size_t decoder_width = 32;
    std::size_t episodes_per_step = 1;  ///< episodes whose losses are summed into one optimizer step
    std::size_t fixed_episodes = 0;     ///< > 0: cycle a fixed pool of this many training episodes

    ModelConfig model_config() const;
    void validate() const;

    std::string to_json() const;
    /// Parses a JSON object; unknown keys and invalid values raise ConfigError.
    static TrainConfig from_json(const std::string& text);
    static TrainConfig load(const std::string& path);

    bool operator==(const TrainConfig&) const = default;
};

}  // namespace osad
