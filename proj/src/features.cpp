#include "keydyn/features.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "keydyn/stats.hpp"

namespace keydyn {

const char* to_string(Agg a) {
    switch (a) {
        case Agg::Mean: return "mean";
        case Agg::Median: return "median";
        case Agg::Std: return "std";
    }
    return "?";
}

const char* to_string(WordStat f) {
    switch (f) {
        case WordStat::Mean: return "mean";
        case WordStat::Std: return "std";
        case WordStat::Median: return "median";
    }
    return "?";
}

std::string UnitId::name() const {
    switch (kind) {
        case Kind::Unigraph: return "uni:" + a;
        case Kind::Digraph: return "di:" + a + "+" + b + ":F" + std::to_string(flight);
        case Kind::WordHold: return "word:" + a + ":WN";
        case Kind::WordUniStat: return "word:" + a + ":WK:" + to_string(f);
        case Kind::WordDiStat:
            return "word:" + a + ":WF" + std::to_string(flight) + ":" + to_string(f);
    }
    return "?";
}

std::string Descriptor::name() const {
    // WordUniStat/WordDiStat are always aggregated by mean; their f suffix
    // already makes the name unique, so the aggregate is left implicit.
    if (unit.kind == UnitId::Kind::WordUniStat || unit.kind == UnitId::Kind::WordDiStat)
        return unit.name();
    return unit.name() + ":" + to_string(agg);
}

namespace {

std::vector<double> iqr_pass(const std::vector<double>& values, double k) {
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    const double q1 = quantile_sorted(sorted, 0.25);
    const double q3 = quantile_sorted(sorted, 0.75);
    const double iqr = q3 - q1;
    const double lo = q1 - k * iqr;
    const double hi = q3 + k * iqr;
    std::vector<double> out;
    out.reserve(values.size());
    for (double v : values)
        if (v >= lo && v <= hi) out.push_back(v);
    return out;
}

}  // namespace

// Applied until stable so the filter is idempotent: trimming an extreme can
// tighten the quartiles enough to expose further outliers. At least the
// median survives every pass, so this always terminates non-empty.
std::vector<double> iqr_filter(const std::vector<double>& values, double k) {
    if (values.empty()) throw EmptyInput("iqr_filter on empty list");
    std::vector<double> cur = values;
    while (true) {
        std::vector<double> next = iqr_pass(cur, k);
        if (next.size() == cur.size()) return cur;
        cur = std::move(next);
    }
}

std::map<std::string, std::vector<double>> unigraph_holds(std::span<const KeyEvent> stream) {
    std::map<std::string, std::vector<double>> holds;
    for (const auto& ev : stream)
        holds[ev.key_label].push_back(static_cast<double>(ev.release_ms - ev.press_ms));
    return holds;
}

namespace {

inline double flight_value(const KeyEvent& k1, const KeyEvent& k2, int flight) {
    switch (flight) {
        case 1: return static_cast<double>(k2.press_ms - k1.release_ms);
        case 2: return static_cast<double>(k2.release_ms - k1.release_ms);
        case 3: return static_cast<double>(k2.press_ms - k1.press_ms);
        case 4: return static_cast<double>(k2.release_ms - k1.press_ms);
    }
    throw Error("flight index out of range");
}

}  // namespace

std::map<DigraphKey, std::vector<double>> digraph_flights(std::span<const KeyEvent> stream) {
    if (stream.size() < 2) throw TooShort("digraph_flights needs at least 2 events");
    std::map<DigraphKey, std::vector<double>> flights;
    for (std::size_t i = 0; i + 1 < stream.size(); ++i) {
        const KeyEvent& k1 = stream[i];
        const KeyEvent& k2 = stream[i + 1];
        for (int fi = 1; fi <= 4; ++fi)
            flights[DigraphKey{k1.key_label, k2.key_label, fi}].push_back(flight_value(k1, k2, fi));
    }
    return flights;
}

bool is_word_key(const std::string& key_label) {
    if (key_label.size() != 1) return false;
    const unsigned char c = static_cast<unsigned char>(key_label[0]);
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
}

std::vector<WordInstance> segment_words(std::span<const KeyEvent> stream) {
    std::vector<WordInstance> words;
    WordInstance cur;
    auto flush = [&]() {
        if (cur.events.size() >= 2) words.push_back(cur);
        cur = WordInstance{};
    };
    for (const auto& ev : stream) {
        if (is_word_key(ev.key_label)) {
            cur.events.push_back(ev);
            cur.text += static_cast<char>(std::tolower(static_cast<unsigned char>(ev.key_label[0])));
        } else {
            flush();
        }
    }
    flush();
    return words;
}

double word_hold_time(const WordInstance& word) {
    return static_cast<double>(word.events.back().release_ms - word.events.front().press_ms);
}

namespace {

double apply_stat(const std::vector<double>& values, WordStat f) {
    switch (f) {
        case WordStat::Mean: return mean_of(values);
        case WordStat::Std: return stddev_pop(values);
        case WordStat::Median: return median_of(values);
    }
    throw Error("bad word stat");
}

std::vector<double> word_holds(const WordInstance& word) {
    std::vector<double> holds;
    holds.reserve(word.events.size());
    for (const auto& ev : word.events)
        holds.push_back(static_cast<double>(ev.release_ms - ev.press_ms));
    return holds;
}

std::vector<double> word_flights(const WordInstance& word, int flight) {
    std::vector<double> out;
    out.reserve(word.events.size() - 1);
    for (std::size_t i = 0; i + 1 < word.events.size(); ++i)
        out.push_back(flight_value(word.events[i], word.events[i + 1], flight));
    return out;
}

}  // namespace

double word_unigraph_stat(const WordInstance& word, WordStat f) {
    return apply_stat(word_holds(word), f);
}

double word_digraph_stat(const WordInstance& word, int flight, WordStat f) {
    return apply_stat(word_flights(word, flight), f);
}

std::map<UnitId, std::vector<double>> collect_occurrences(std::span<const KeyEvent> stream) {
    std::map<UnitId, std::vector<double>> occ;
    for (const auto& [key, holds] : unigraph_holds(stream)) {
        UnitId u{UnitId::Kind::Unigraph, key, "", 0, WordStat::Mean};
        occ.emplace(u, holds);
    }
    if (stream.size() >= 2) {
        for (const auto& [dk, vals] : digraph_flights(stream)) {
            UnitId u{UnitId::Kind::Digraph, dk.a, dk.b, dk.flight, WordStat::Mean};
            occ.emplace(u, vals);
        }
    }
    static constexpr WordStat kStats[] = {WordStat::Mean, WordStat::Std, WordStat::Median};
    for (const auto& word : segment_words(stream)) {
        occ[UnitId{UnitId::Kind::WordHold, word.text, "", 0, WordStat::Mean}].push_back(
            word_hold_time(word));
        for (WordStat f : kStats)
            occ[UnitId{UnitId::Kind::WordUniStat, word.text, "", 0, f}].push_back(
                word_unigraph_stat(word, f));
        for (int fi = 1; fi <= 4; ++fi)
            for (WordStat f : kStats)
                occ[UnitId{UnitId::Kind::WordDiStat, word.text, "", fi, f}].push_back(
                    word_digraph_stat(word, fi, f));
    }
    return occ;
}

std::map<UnitId, UnitProfile> profile_stream(std::span<const KeyEvent> stream) {
    std::map<UnitId, UnitProfile> out;
    for (const auto& [unit, values] : collect_occurrences(stream)) {
        const std::vector<double> filtered = iqr_filter(values);
        UnitProfile p;
        p.count = values.size();
        p.mean = mean_of(filtered);
        p.median = median_of(filtered);
        p.stddev = stddev_pop(filtered);
        out.emplace(unit, p);
    }
    return out;
}

namespace {

// Rank by count descending, ties lexicographic ascending; take the top cap.
template <typename Key>
std::vector<Key> top_units(const std::map<Key, std::size_t>& counts, int cap, int floor) {
    std::vector<std::pair<Key, std::size_t>> ranked(counts.begin(), counts.end());
    std::erase_if(ranked, [&](const auto& kv) { return kv.second < static_cast<std::size_t>(floor); });
    std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
        if (x.second != y.second) return x.second > y.second;
        return x.first < y.first;
    });
    if (ranked.size() > static_cast<std::size_t>(cap)) ranked.resize(cap);
    std::vector<Key> out;
    out.reserve(ranked.size());
    for (auto& [k, _] : ranked) out.push_back(k);
    return out;
}

}  // namespace

FeatureVocabulary fit_vocabulary_from_profiles(
    const std::vector<const std::map<UnitId, UnitProfile>*>& training_profiles,
    const std::vector<std::string>& training_users, const VocabCaps& caps) {
    if (training_profiles.empty()) throw EmptyTraining("fit_vocabulary with no training streams");

    std::map<std::string, std::size_t> key_counts;
    std::map<DigraphKey, std::size_t> digraph_counts;
    std::map<std::string, std::size_t> word_counts;
    for (const auto* profile : training_profiles) {
        for (const auto& [unit, p] : *profile) {
            switch (unit.kind) {
                case UnitId::Kind::Unigraph: key_counts[unit.a] += p.count; break;
                case UnitId::Kind::Digraph:
                    digraph_counts[DigraphKey{unit.a, unit.b, unit.flight}] += p.count;
                    break;
                case UnitId::Kind::WordHold: word_counts[unit.a] += p.count; break;
                default: break;  // word stat units share the WordHold count
            }
        }
    }

    const auto keys = top_units(key_counts, caps.max_unigraphs, caps.frequency_floor);
    const auto digraphs = top_units(digraph_counts, caps.max_digraphs, caps.frequency_floor);
    const auto words = top_units(word_counts, caps.max_words, caps.frequency_floor);

    static constexpr Agg kAggs[] = {Agg::Mean, Agg::Median, Agg::Std};
    static constexpr WordStat kStats[] = {WordStat::Mean, WordStat::Std, WordStat::Median};

    FeatureVocabulary vocab;
    vocab.fitted_on = training_users;
    vocab.frequency_floor = caps.frequency_floor;
    for (const auto& key : keys)
        for (Agg agg : kAggs)
            vocab.descriptors.push_back({UnitId{UnitId::Kind::Unigraph, key, "", 0, WordStat::Mean}, agg});
    for (const auto& dk : digraphs)
        for (Agg agg : kAggs)
            vocab.descriptors.push_back(
                {UnitId{UnitId::Kind::Digraph, dk.a, dk.b, dk.flight, WordStat::Mean}, agg});
    for (const auto& w : words) {
        for (Agg agg : kAggs)
            vocab.descriptors.push_back({UnitId{UnitId::Kind::WordHold, w, "", 0, WordStat::Mean}, agg});
        for (WordStat f : kStats)
            vocab.descriptors.push_back({UnitId{UnitId::Kind::WordUniStat, w, "", 0, f}, Agg::Mean});
        for (int fi = 1; fi <= 4; ++fi)
            for (WordStat f : kStats)
                vocab.descriptors.push_back({UnitId{UnitId::Kind::WordDiStat, w, "", fi, f}, Agg::Mean});
    }
    return vocab;
}

FeatureVocabulary fit_vocabulary(const std::vector<std::span<const KeyEvent>>& training_streams,
                                 const std::vector<std::string>& training_users,
                                 const VocabCaps& caps) {
    std::vector<std::map<UnitId, UnitProfile>> profiles;
    profiles.reserve(training_streams.size());
    for (const auto& stream : training_streams) profiles.push_back(profile_stream(stream));
    std::vector<const std::map<UnitId, UnitProfile>*> refs;
    refs.reserve(profiles.size());
    for (const auto& p : profiles) refs.push_back(&p);
    return fit_vocabulary_from_profiles(refs, training_users, caps);
}

FeatureVector vectorize_profile(const std::map<UnitId, UnitProfile>& profile,
                                const FeatureVocabulary& vocab) {
    FeatureVector fv;
    fv.values.reserve(vocab.descriptors.size());
    fv.missing_mask.reserve(vocab.descriptors.size());
    for (const auto& d : vocab.descriptors) {
        auto it = profile.find(d.unit);
        if (it == profile.end()) {
            fv.values.push_back(std::numeric_limits<double>::quiet_NaN());
            fv.missing_mask.push_back(1);
            continue;
        }
        double v = 0.0;
        switch (d.agg) {
            case Agg::Mean: v = it->second.mean; break;
            case Agg::Median: v = it->second.median; break;
            case Agg::Std: v = it->second.stddev; break;
        }
        fv.values.push_back(v);
        fv.missing_mask.push_back(0);
    }
    return fv;
}

FeatureVector vectorize(std::span<const KeyEvent> stream, const FeatureVocabulary& vocab) {
    FeatureVector fv = vectorize_profile(profile_stream(stream), vocab);
    if (!stream.empty()) {
        fv.user_id = stream.front().user_id;
        switch (stream.front().device) {
            case Device::Desktop: fv.device_config = DeviceConfig::Desktop; break;
            case Device::Phone: fv.device_config = DeviceConfig::Phone; break;
            case Device::Tablet: fv.device_config = DeviceConfig::Tablet; break;
        }
        fv.mode = stream.front().mode;
    }
    return fv;
}

FeatureVector combine_devices(const std::map<Device, FeatureVector>& per_device) {
    static constexpr Device kOrder[] = {Device::Desktop, Device::Phone, Device::Tablet};
    for (Device d : kOrder)
        if (!per_device.count(d)) throw MissingDevice(to_string(d));

    FeatureVector out;
    out.user_id = per_device.begin()->second.user_id;
    out.device_config = DeviceConfig::Combined;
    out.mode = per_device.begin()->second.mode;
    for (Device d : kOrder) {
        const FeatureVector& fv = per_device.at(d);
        out.values.insert(out.values.end(), fv.values.begin(), fv.values.end());
        out.missing_mask.insert(out.missing_mask.end(), fv.missing_mask.begin(),
                                fv.missing_mask.end());
    }
    return out;
}

}  // namespace keydyn
