#include "keydyn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "keydyn/ingest.hpp"
#include "keydyn/stats.hpp"

namespace keydyn {

GeneratorConfig::GeneratorConfig() {
    fixed_sentences = {
        "the quick brown fox jumps over the lazy dog",
        "pack my box with five dozen liquor jugs",
    };
    word_pool = {
        "the",   "and",   "for",  "that", "with",  "this", "from", "have", "will",  "your",
        "about", "which", "when", "make", "like",  "time", "just", "know", "take",  "into",
        "year",  "good",  "some", "them", "other", "than", "then", "look", "only",  "come",
        "over",  "think", "also", "back", "after", "work", "first", "well", "even",  "want",
        "because", "these", "give", "most", "under", "while", "where", "never", "system", "typing",
    };
}

namespace {

std::string user_name(int index, int n_users) {
    int width = 1;
    for (int v = n_users; v >= 10; v /= 10) ++width;
    std::string digits = std::to_string(index + 1);
    return "u" + std::string(static_cast<std::size_t>(width) - digits.size(), '0') + digits;
}

// Largest-remainder quotas for class counts matching the target proportions.
std::vector<int> quota_counts(int n, const std::vector<double>& weights) {
    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<int> counts(weights.size());
    std::vector<std::pair<double, std::size_t>> fractions;
    int assigned = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const double exact = n * weights[i] / total;
        counts[i] = static_cast<int>(std::floor(exact));
        assigned += counts[i];
        fractions.emplace_back(-(exact - counts[i]), i);  // sort by remainder desc, index asc
    }
    std::sort(fractions.begin(), fractions.end());
    for (int r = 0; r < n - assigned; ++r) ++counts[fractions[static_cast<std::size_t>(r)].second];
    return counts;
}

int clipped_round_normal(std::mt19937_64& rng, double mu, double sigma, int lo, int hi) {
    std::normal_distribution<double> gauss(mu, sigma);
    const int v = static_cast<int>(std::lround(gauss(rng)));
    return std::clamp(v, lo, hi);
}

}  // namespace

std::vector<std::pair<std::string, SoftLabels>> sample_population(const GeneratorConfig& config) {
    if (config.n_users < 4) throw BadSpec("generator needs at least 4 users");
    const int n = config.n_users;
    std::mt19937_64 rng(mix_seed(config.seed, "population"));

    const auto gender_counts = quota_counts(n, {72, 45});
    const auto major_counts = quota_counts(n, {66, 50});
    const auto style_counts = quota_counts(n, {6, 31, 80});

    std::vector<Gender> genders;
    genders.insert(genders.end(), gender_counts[0], Gender::Male);
    genders.insert(genders.end(), gender_counts[1], Gender::Female);
    std::vector<Major> majors;
    majors.insert(majors.end(), major_counts[0], Major::CS);
    majors.insert(majors.end(), major_counts[1], Major::NonCS);
    std::vector<TypingStyle> styles;
    styles.insert(styles.end(), style_counts[0], TypingStyle::A_MustLook);
    styles.insert(styles.end(), style_counts[1], TypingStyle::B_OccasionalLook);
    styles.insert(styles.end(), style_counts[2], TypingStyle::C_NoLook);

    std::shuffle(genders.begin(), genders.end(), rng);
    std::shuffle(majors.begin(), majors.end(), rng);
    std::shuffle(styles.begin(), styles.end(), rng);

    std::vector<std::pair<std::string, SoftLabels>> population;
    population.reserve(n);
    for (int i = 0; i < n; ++i) {
        SoftLabels lab;
        lab.gender = genders[static_cast<std::size_t>(i)];
        lab.major = majors[static_cast<std::size_t>(i)];
        lab.style = styles[static_cast<std::size_t>(i)];
        lab.age = clipped_round_normal(rng, 24.97, 3.11, 19, 35);
        lab.height = clipped_round_normal(rng, 66.96, 4.02, 54, 74);
        population.emplace_back(user_name(i, n), lab);
    }
    return population;
}

PersonaSpec make_persona(const std::string& user_id, const SoftLabels& labels,
                         const GeneratorConfig& config) {
    const EffectCoefficients& fx = config.effects;
    PersonaSpec p;
    p.user_id = user_id;
    p.labels = labels;
    p.base_hold_mu = config.hold_log_mu;
    p.base_flight_mu = config.flight_log_mu;

    double hold_mult = 1.0, flight_mult = 1.0;
    if (labels.gender == Gender::Female) hold_mult *= fx.female_hold;
    if (labels.major == Major::NonCS) flight_mult *= fx.noncs_flight;
    switch (labels.style) {
        case TypingStyle::A_MustLook: flight_mult *= fx.style_a_flight; break;
        case TypingStyle::B_OccasionalLook: flight_mult *= fx.style_b_flight; break;
        case TypingStyle::C_NoLook: break;
    }
    hold_mult *= std::exp(fx.age_hold_per_year * (labels.age - 25));
    flight_mult *= std::exp(fx.height_flight_per_inch * (labels.height - 67));
    p.hold_multiplier = hold_mult;
    p.flight_multiplier = flight_mult;
    return p;
}

double device_multiplier(Device device) {
    switch (device) {
        case Device::Desktop: return 1.0;
        case Device::Phone: return 1.3;
        case Device::Tablet: return 1.2;
    }
    return 1.0;
}

namespace {

std::vector<std::string> key_sequence(const PersonaSpec&, Mode mode, int n_keys,
                                      const GeneratorConfig& config, std::mt19937_64& rng) {
    std::vector<std::string> keys;
    keys.reserve(static_cast<std::size_t>(n_keys));
    if (mode == Mode::Fixed) {
        std::size_t sentence = 0;
        while (static_cast<int>(keys.size()) < n_keys) {
            for (char c : config.fixed_sentences[sentence % config.fixed_sentences.size()]) {
                if (static_cast<int>(keys.size()) >= n_keys) break;
                keys.push_back(c == ' ' ? std::string("Space") : std::string(1, c));
            }
            ++sentence;
        }
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, config.word_pool.size() - 1);
        while (static_cast<int>(keys.size()) < n_keys) {
            for (char c : config.word_pool[pick(rng)]) {
                if (static_cast<int>(keys.size()) >= n_keys) break;
                keys.push_back(std::string(1, c));
            }
            if (static_cast<int>(keys.size()) < n_keys) keys.push_back("Space");
        }
    }
    return keys;
}

}  // namespace

std::vector<KeyEvent> generate_stream(const PersonaSpec& persona, Device device, Mode mode,
                                      int n_keys, double signal_strength,
                                      const GeneratorConfig& config, std::mt19937_64& rng) {
    const double dev = std::log(device_multiplier(device));
    const double hold_mu = persona.base_hold_mu + dev +
                           signal_strength * std::log(persona.hold_multiplier);
    const double flight_mu = persona.base_flight_mu + dev +
                             signal_strength * std::log(persona.flight_multiplier);

    std::lognormal_distribution<double> hold_dist(hold_mu, config.hold_sigma);
    std::lognormal_distribution<double> flight_dist(flight_mu, config.flight_sigma);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    const auto keys = key_sequence(persona, mode, n_keys, config, rng);
    std::vector<KeyEvent> events;
    events.reserve(keys.size());
    std::int64_t press = 1000;
    std::int64_t prev_release = 0;
    std::int64_t prev_hold = 0;
    for (std::size_t i = 0; i < keys.size(); ++i) {
        const auto hold = std::max<std::int64_t>(1, std::llround(hold_dist(rng)));
        if (i > 0) {
            const auto gap = std::max<std::int64_t>(1, std::llround(flight_dist(rng)));
            const bool overlap = unif(rng) < config.overlap_prob && prev_hold > 2;
            if (overlap) {
                // rollover: next press lands before the previous release
                const auto depth =
                    1 + std::llround(unif(rng) * static_cast<double>(std::min<std::int64_t>(
                                                     prev_hold - 2, 30)));
                press = prev_release - depth;
            } else {
                press = prev_release + gap;
            }
        }
        KeyEvent ev;
        ev.user_id = persona.user_id;
        ev.device = device;
        ev.mode = mode;
        ev.key_label = keys[i];
        ev.press_ms = press;
        ev.release_ms = press + hold;
        events.push_back(std::move(ev));
        prev_release = press + hold;
        prev_hold = hold;
    }
    return events;
}

Dataset generate_dataset(const GeneratorConfig& config) {
    if (config.keystrokes_per_stream < 100)
        throw BadSpec("generator needs at least 100 keystrokes per stream");
    const auto population = sample_population(config);
    Dataset ds;
    for (const auto& [user, labels] : population) {
        ds.labels.emplace(user, labels);
        const PersonaSpec persona = make_persona(user, labels, config);
        for (Device device : {Device::Desktop, Device::Phone, Device::Tablet}) {
            for (Mode mode : {Mode::Free, Mode::Fixed}) {
                const std::string stream_id =
                    user + "/" + to_string(device) + "/" + to_string(mode);
                std::mt19937_64 rng(mix_seed(config.seed, stream_id));
                ds.streams[StreamKey{user, device, mode}] =
                    generate_stream(persona, device, mode, config.keystrokes_per_stream,
                                    config.signal_strength, config, rng);
            }
        }
    }
    return ds;
}

void write_synth_dataset(const GeneratorConfig& config, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const Dataset ds = generate_dataset(config);
    std::vector<KeyEvent> events;
    for (const auto& [key, stream] : ds.streams)
        events.insert(events.end(), stream.begin(), stream.end());
    std::ofstream ev(fs::path(out_dir) / "events.csv");
    serialize_events(events, ev);
    std::ofstream lb(fs::path(out_dir) / "labels.csv");
    serialize_labels(ds.labels, lb);
}

}  // namespace keydyn
