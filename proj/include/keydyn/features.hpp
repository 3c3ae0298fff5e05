#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "keydyn/types.hpp"

namespace keydyn {

// Aggregate applied to a unit's occurrence list when vectorizing.
enum class Agg { Mean, Median, Std };

// Statistic computed inside one word instance.
enum class WordStat { Mean, Std, Median };

const char* to_string(Agg a);
const char* to_string(WordStat f);

// One measurable timing unit. Each unit owns an occurrence list per stream:
//   Unigraph    — hold time of a key, one value per occurrence
//   Digraph     — flight F1..F4 of a consecutive key pair, one per pair
//   WordHold    — first press to last release of a word, one per instance
//   WordUniStat — f over the word's per-key holds, one per instance
//   WordDiStat  — f over the word's internal flights of one index, one per instance
struct UnitId {
    enum class Kind { Unigraph, Digraph, WordHold, WordUniStat, WordDiStat };
    Kind kind = Kind::Unigraph;
    std::string a;       // key / first key of pair / word text
    std::string b;       // second key of pair
    int flight = 0;      // 1..4 for Digraph and WordDiStat
    WordStat f = WordStat::Mean;  // for WordUniStat and WordDiStat

    auto operator<=>(const UnitId&) const = default;
    std::string name() const;
};

struct Descriptor {
    UnitId unit;
    Agg agg = Agg::Mean;

    auto operator<=>(const Descriptor&) const = default;
    std::string name() const;
};

struct VocabCaps {
    int max_unigraphs = 40;
    int max_digraphs = 200;
    int max_words = 100;
    int frequency_floor = 1;
};

struct FeatureVocabulary {
    std::vector<Descriptor> descriptors;
    std::vector<std::string> fitted_on;
    int frequency_floor = 1;
};

struct FeatureVector {
    std::string user_id;
    DeviceConfig device_config = DeviceConfig::Desktop;
    Mode mode = Mode::Free;
    std::vector<double> values;          // NaN sentinel where masked
    std::vector<std::uint8_t> missing_mask;
};

struct WordInstance {
    std::string text;                // lowercase
    std::vector<KeyEvent> events;    // ordered as typed
};

// Tukey fence on [Q1 - k*IQR, Q3 + k*IQR]; survivor order preserved.
std::vector<double> iqr_filter(const std::vector<double>& values, double k = 1.5);

std::map<std::string, std::vector<double>> unigraph_holds(std::span<const KeyEvent> stream);

struct DigraphKey {
    std::string a, b;
    int flight = 0;
    auto operator<=>(const DigraphKey&) const = default;
};

std::map<DigraphKey, std::vector<double>> digraph_flights(std::span<const KeyEvent> stream);

std::vector<WordInstance> segment_words(std::span<const KeyEvent> stream);

double word_hold_time(const WordInstance& word);
double word_unigraph_stat(const WordInstance& word, WordStat f);
double word_digraph_stat(const WordInstance& word, int flight, WordStat f);

// Every unit's occurrence list for one stream, unfiltered.
std::map<UnitId, std::vector<double>> collect_occurrences(std::span<const KeyEvent> stream);

// IQR-filtered aggregates of one unit's occurrence list plus its raw count.
// A stream profile is computed once and vectorized against many vocabularies.
struct UnitProfile {
    double mean = 0.0;
    double median = 0.0;
    double stddev = 0.0;
    std::size_t count = 0;  // unfiltered occurrence count
};

std::map<UnitId, UnitProfile> profile_stream(std::span<const KeyEvent> stream);

FeatureVocabulary fit_vocabulary_from_profiles(
    const std::vector<const std::map<UnitId, UnitProfile>*>& training_profiles,
    const std::vector<std::string>& training_users, const VocabCaps& caps = {});

FeatureVector vectorize_profile(const std::map<UnitId, UnitProfile>& profile,
                                const FeatureVocabulary& vocab);

FeatureVocabulary fit_vocabulary(const std::vector<std::span<const KeyEvent>>& training_streams,
                                 const std::vector<std::string>& training_users,
                                 const VocabCaps& caps = {});

FeatureVector vectorize(std::span<const KeyEvent> stream, const FeatureVocabulary& vocab);

// Fixed Desktop | Phone | Tablet concatenation.
FeatureVector combine_devices(const std::map<Device, FeatureVector>& per_device);

bool is_word_key(const std::string& key_label);

}  // namespace keydyn
