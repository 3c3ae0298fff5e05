#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "keydyn/types.hpp"

namespace keydyn {

// Planted attribute -> timing effects, expressed as multiplicative factors
// reached at signal_strength 1. All plain config data.
struct EffectCoefficients {
    double style_a_flight = 1.60;
    double style_b_flight = 1.25;
    double female_hold = 1.12;
    double noncs_flight = 1.10;
    double age_hold_per_year = 0.008;      // log-scale slope around age 25
    double height_flight_per_inch = 0.006; // log-scale slope around 67 in
};

struct GeneratorConfig {
    int n_users = 117;
    int keystrokes_per_stream = 1000;
    double signal_strength = 1.0;  // 0 = labels independent of timings
    std::uint64_t seed = 0;

    double hold_log_mu = 4.4998;    // ln(90 ms)
    double flight_log_mu = 4.9416;  // ln(140 ms)
    double hold_sigma = 0.25;
    double flight_sigma = 0.35;
    double overlap_prob = 0.05;     // rollover: press before previous release

    EffectCoefficients effects;
    std::vector<std::string> fixed_sentences;
    std::vector<std::string> word_pool;

    GeneratorConfig();
};

struct PersonaSpec {
    std::string user_id;
    SoftLabels labels;
    double base_hold_mu = 0.0;
    double base_flight_mu = 0.0;
    double hold_multiplier = 1.0;    // combined attribute effect at signal 1
    double flight_multiplier = 1.0;
};

// Categorical marginals follow the study population (gender 72:45,
// major 66:50, style 6:31:80) via largest-remainder quotas; age and
// height are clipped rounded normals.
std::vector<std::pair<std::string, SoftLabels>> sample_population(const GeneratorConfig& config);

PersonaSpec make_persona(const std::string& user_id, const SoftLabels& labels,
                         const GeneratorConfig& config);

double device_multiplier(Device device);

std::vector<KeyEvent> generate_stream(const PersonaSpec& persona, Device device, Mode mode,
                                      int n_keys, double signal_strength,
                                      const GeneratorConfig& config, std::mt19937_64& rng);

// All 6 streams per user, per-stream derived seeds; passes ingest unchanged.
Dataset generate_dataset(const GeneratorConfig& config);

// events.csv + labels.csv in the ingest formats; byte-deterministic.
void write_synth_dataset(const GeneratorConfig& config, const std::string& out_dir);

}  // namespace keydyn
