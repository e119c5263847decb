#include "osad/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace osad {

using nlohmann::json;

ModelConfig TrainConfig::model_config() const {
    ModelConfig m;
    m.encoder_channels = encoder_channels;
    m.decoder_width = decoder_width;
    m.num_bases = num_bases;
    m.basis_dim = basis_dim;
    m.em_iterations = em_iterations;
    m.seed = seed;
    return m;
}

void TrainConfig::validate() const {
    auto need = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("invalid config: " + what);
    };
    need(learning_rate > 0, "learning_rate must be positive");
    need(steps > 0, "steps must be positive");
    need(n_queries > 0, "n_queries must be positive");
    need(num_bases > 0, "num_bases must be positive");
    need(basis_dim > 0, "basis_dim must be positive");
    need(em_iterations >= 1, "em_iterations must be at least 1");
    need(input_size > 0 && input_size % 32 == 0, "input_size must be a positive multiple of 32");
    need(fold_id >= 1, "fold_id must be >= 1");
    need(encoder_channels.size() == 5, "encoder_channels needs 5 entries");
    for (auto c : encoder_channels) need(c > 0, "encoder_channels must be positive");
    need(decoder_width > 0, "decoder_width must be positive");
    need(episodes_per_step > 0, "episodes_per_step must be positive");
}

std::string TrainConfig::to_json() const {
    json j = {{"learning_rate", learning_rate},
              {"steps", steps},
              {"n_queries", n_queries},
              {"num_bases", num_bases},
              {"basis_dim", basis_dim},
              {"em_iterations", em_iterations},
              {"seed", seed},
              {"input_size", input_size},
              {"random_crop", random_crop},
              {"random_flip", random_flip},
              {"fold_id", fold_id},
              {"encoder_channels", encoder_channels},
              {"decoder_width", decoder_width},
              {"episodes_per_step", episodes_per_step},
              {"fixed_episodes", fixed_episodes}};
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    TrainConfig c;
    for (const auto& [key, v] : j.items()) {
        try {
            if (key == "learning_rate") c.learning_rate = v.get<double>();
            else if (key == "steps") c.steps = v.get<std::size_t>();
            else if (key == "n_queries") c.n_queries = v.get<std::size_t>();
            else if (key == "num_bases") c.num_bases = v.get<std::size_t>();
            else if (key == "basis_dim") c.basis_dim = v.get<std::size_t>();
            else if (key == "em_iterations") c.em_iterations = v.get<std::size_t>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "input_size") c.input_size = v.get<std::size_t>();
            else if (key == "random_crop") c.random_crop = v.get<bool>();
            else if (key == "random_flip") c.random_flip = v.get<bool>();
            else if (key == "fold_id") c.fold_id = v.get<int>();
            else if (key == "encoder_channels") c.encoder_channels = v.get<std::vector<std::size_t>>();
            else if (key == "decoder_width") c.decoder_width = v.get<std::size_t>();
            else if (key == "episodes_per_step") c.episodes_per_step = v.get<std::size_t>();
            else if (key == "fixed_episodes") c.fixed_episodes = v.get<std::size_t>();
            else throw ConfigError("unknown config key '" + key + "'");
        } catch (const json::exception& e) {
            throw ConfigError("bad value for '" + key + "': " + e.what());
        }
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return from_json(ss.str());
}

}  // namespace osad
