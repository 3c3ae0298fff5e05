#include "keydyn/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "keydyn/stats.hpp"

namespace keydyn {

const char* to_string(Device d) {
    switch (d) {
        case Device::Desktop: return "desktop";
        case Device::Phone: return "phone";
        case Device::Tablet: return "tablet";
    }
    return "?";
}

const char* to_string(Mode m) { return m == Mode::Free ? "free" : "fixed"; }

const char* to_string(Gender g) { return g == Gender::Male ? "male" : "female"; }

const char* to_string(Major m) { return m == Major::CS ? "cs" : "noncs"; }

const char* to_string(TypingStyle s) {
    switch (s) {
        case TypingStyle::A_MustLook: return "a";
        case TypingStyle::B_OccasionalLook: return "b";
        case TypingStyle::C_NoLook: return "c";
    }
    return "?";
}

const char* to_string(DeviceConfig d) {
    switch (d) {
        case DeviceConfig::Desktop: return "desktop";
        case DeviceConfig::Phone: return "phone";
        case DeviceConfig::Tablet: return "tablet";
        case DeviceConfig::Combined: return "combined";
    }
    return "?";
}

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace

Device device_from_string(const std::string& s) {
    const std::string v = lower(s);
    if (v == "desktop") return Device::Desktop;
    if (v == "phone") return Device::Phone;
    if (v == "tablet") return Device::Tablet;
    throw DataError("unknown device: " + s);
}

Mode mode_from_string(const std::string& s) {
    const std::string v = lower(s);
    if (v == "free") return Mode::Free;
    if (v == "fixed") return Mode::Fixed;
    throw DataError("unknown mode: " + s);
}

Gender gender_from_string(const std::string& s) {
    const std::string v = lower(s);
    if (v == "male") return Gender::Male;
    if (v == "female") return Gender::Female;
    throw DataError("unknown gender: " + s);
}

Major major_from_string(const std::string& s) {
    const std::string v = lower(s);
    if (v == "cs") return Major::CS;
    if (v == "noncs") return Major::NonCS;
    throw DataError("unknown major: " + s);
}

TypingStyle style_from_string(const std::string& s) {
    const std::string v = lower(s);
    if (v == "a") return TypingStyle::A_MustLook;
    if (v == "b") return TypingStyle::B_OccasionalLook;
    if (v == "c") return TypingStyle::C_NoLook;
    throw DataError("unknown typing style: " + s);
}

DeviceConfig device_config_from_string(const std::string& s) {
    const std::string v = lower(s);
    if (v == "desktop") return DeviceConfig::Desktop;
    if (v == "phone") return DeviceConfig::Phone;
    if (v == "tablet") return DeviceConfig::Tablet;
    if (v == "combined") return DeviceConfig::Combined;
    throw DataError("unknown device config: " + s);
}

namespace {

// Plain comma-separated fields with minimal quoting so punctuation key
// labels (including the comma key itself) survive a round trip.
std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    fields.push_back(cur);
    return fields;
}

std::string csv_field(const std::string& value) {
    if (value.find_first_of(",\"\n") == std::string::npos) return value;
    std::string out = "\"";
    for (char c : value) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

std::int64_t parse_int(const std::string& s, std::size_t line_no) {
    std::int64_t value = 0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last)
        throw MalformedRow(line_no, "non-numeric field '" + s + "'");
    return value;
}

}  // namespace

std::vector<KeyEvent> parse_events(std::istream& in) {
    std::vector<KeyEvent> events;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!header_seen) {
            header_seen = true;  // header row consumed
            continue;
        }
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_row(line);
        if (fields.size() != 6)
            throw MalformedRow(line_no, "expected 6 columns, got " + std::to_string(fields.size()));
        KeyEvent ev;
        ev.user_id = fields[0];
        try {
            ev.device = device_from_string(fields[1]);
            ev.mode = mode_from_string(fields[2]);
        } catch (const DataError& e) {
            throw InvalidEnum(line_no, e.what());
        }
        ev.key_label = fields[3];
        if (ev.key_label.empty()) throw MalformedRow(line_no, "empty key label");
        ev.press_ms = parse_int(fields[4], line_no);
        ev.release_ms = parse_int(fields[5], line_no);
        events.push_back(std::move(ev));
    }
    return events;
}

LabelParse parse_labels(std::istream& in) {
    LabelParse out;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!header_seen) {
            header_seen = true;
            continue;
        }
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_row(line);
        if (fields.size() != 6)
            throw MalformedRow(line_no, "expected 6 columns, got " + std::to_string(fields.size()));
        const std::string& user = fields[0];
        if (user.empty()) throw MalformedRow(line_no, "empty user id");
        if (out.labels.count(user)) throw DuplicateUser(user);
        const bool any_blank = std::any_of(fields.begin() + 1, fields.end(),
                                           [](const std::string& f) { return f.empty(); });
        if (any_blank) {
            out.skipped_users.push_back(user);
            continue;
        }
        SoftLabels lab;
        try {
            lab.gender = gender_from_string(fields[1]);
            lab.major = major_from_string(fields[2]);
            lab.style = style_from_string(fields[3]);
        } catch (const DataError& e) {
            throw InvalidEnum(line_no, e.what());
        }
        lab.age = static_cast<int>(parse_int(fields[4], line_no));
        lab.height = static_cast<int>(parse_int(fields[5], line_no));
        if (lab.age < 10 || lab.age > 100)
            throw MalformedRow(line_no, "age out of range: " + fields[4]);
        if (lab.height < 36 || lab.height > 90)
            throw MalformedRow(line_no, "height out of range: " + fields[5]);
        out.labels.emplace(user, lab);
    }
    return out;
}

void serialize_events(const std::vector<KeyEvent>& events, std::ostream& out) {
    out << "user_id,device,mode,key,press_ms,release_ms\n";
    for (const auto& ev : events) {
        out << csv_field(ev.user_id) << ',' << to_string(ev.device) << ',' << to_string(ev.mode)
            << ',' << csv_field(ev.key_label) << ',' << ev.press_ms << ',' << ev.release_ms
            << '\n';
    }
}

void serialize_labels(const std::map<std::string, SoftLabels>& labels, std::ostream& out) {
    out << "user_id,gender,major,style,age,height\n";
    for (const auto& [user, lab] : labels) {
        out << user << ',' << to_string(lab.gender) << ',' << to_string(lab.major) << ','
            << to_string(lab.style) << ',' << lab.age << ',' << lab.height << '\n';
    }
}

Dataset build_dataset(const std::vector<KeyEvent>& events,
                      const std::map<std::string, SoftLabels>& labels, BuildReport* report) {
    BuildReport local;
    BuildReport& rep = report ? *report : local;
    rep = BuildReport{};

    Dataset ds;
    std::map<std::string, bool> unlabeled_seen;
    for (const auto& ev : events) {
        if (ev.release_ms < ev.press_ms) {
            ++rep.dropped_events;
            continue;
        }
        if (!labels.count(ev.user_id)) {
            unlabeled_seen[ev.user_id] = true;
            continue;
        }
        ds.streams[StreamKey{ev.user_id, ev.device, ev.mode}].push_back(ev);
    }
    for (auto& [key, stream] : ds.streams) {
        std::stable_sort(stream.begin(), stream.end(),
                         [](const KeyEvent& a, const KeyEvent& b) { return a.press_ms < b.press_ms; });
    }
    for (const auto& [user, _] : unlabeled_seen) {
        rep.dropped_user_ids.push_back(user);
    }
    rep.dropped_users = rep.dropped_user_ids.size();
    for (const auto& [user, lab] : labels) {
        bool has_stream = false;
        for (const auto& [key, _] : ds.streams) {
            if (key.user_id == user) {
                has_stream = true;
                break;
            }
        }
        if (has_stream) ds.labels.emplace(user, lab);
    }
    if (ds.streams.empty()) throw EmptyDataset();
    return ds;
}

std::vector<KeyEvent> pair_press_release(const std::vector<RawKeyAction>& actions,
                                         std::size_t* unpaired_presses) {
    // Per session, scan in time order; a press waits for the next release
    // of the same key label. A second press of a held key orphans the first.
    struct SessionKey {
        std::string user;
        Device device;
        Mode mode;
        auto operator<=>(const SessionKey&) const = default;
    };
    std::map<SessionKey, std::vector<const RawKeyAction*>> sessions;
    for (const auto& a : actions) sessions[{a.user_id, a.device, a.mode}].push_back(&a);

    std::vector<KeyEvent> events;
    std::size_t unpaired = 0;
    for (auto& [key, acts] : sessions) {
        std::stable_sort(acts.begin(), acts.end(),
                         [](const RawKeyAction* a, const RawKeyAction* b) { return a->time_ms < b->time_ms; });
        std::map<std::string, const RawKeyAction*> held;
        for (const RawKeyAction* a : acts) {
            if (a->is_press) {
                if (held.count(a->key_label)) ++unpaired;
                held[a->key_label] = a;
            } else {
                auto it = held.find(a->key_label);
                if (it == held.end()) continue;  // stray release
                events.push_back(KeyEvent{it->second->user_id, it->second->device, it->second->mode,
                                          a->key_label, it->second->time_ms, a->time_ms});
                held.erase(it);
            }
        }
        unpaired += held.size();
    }
    if (unpaired_presses) *unpaired_presses = unpaired;
    return events;
}

Manifest dataset_summary(const Dataset& dataset) {
    Manifest m;
    m.n_users = dataset.labels.size();
    std::vector<double> ages, heights;
    for (const auto& [user, lab] : dataset.labels) {
        ++m.gender_counts[lab.gender];
        ++m.major_counts[lab.major];
        ++m.style_counts[lab.style];
        ages.push_back(lab.age);
        heights.push_back(lab.height);
    }
    auto summarize = [](const std::vector<double>& v) {
        NumericSummary s;
        if (v.empty()) return s;
        s.min = *std::min_element(v.begin(), v.end());
        s.max = *std::max_element(v.begin(), v.end());
        s.mean = mean_of(v);
        s.median = median_of(v);
        s.stddev = stddev_pop(v);
        return s;
    };
    m.age = summarize(ages);
    m.height = summarize(heights);
    for (const auto& [key, stream] : dataset.streams) {
        m.keystroke_counts[{key.device, key.mode}] += stream.size();
    }
    return m;
}

void print_manifest(const Manifest& m, std::ostream& out) {
    out << "users: " << m.n_users << "\n";
    out << "gender:";
    for (const auto& [g, c] : m.gender_counts) out << ' ' << to_string(g) << '=' << c;
    out << "\nmajor:";
    for (const auto& [g, c] : m.major_counts) out << ' ' << to_string(g) << '=' << c;
    out << "\nstyle:";
    for (const auto& [g, c] : m.style_counts) out << ' ' << to_string(g) << '=' << c;
    auto num = [&](const char* name, const NumericSummary& s) {
        out << '\n' << name << ": min=" << s.min << " max=" << s.max << " mean=" << s.mean
            << " median=" << s.median << " std=" << s.stddev;
    };
    num("age", m.age);
    num("height", m.height);
    out << "\nkeystrokes:";
    for (const auto& [dm, c] : m.keystroke_counts)
        out << ' ' << to_string(dm.first) << '/' << to_string(dm.second) << '=' << c;
    out << "\n";
}

Dataset load_dataset(const std::string& data_dir, BuildReport* report) {
    namespace fs = std::filesystem;
    const fs::path events_path = fs::path(data_dir) / "events.csv";
    const fs::path labels_path = fs::path(data_dir) / "labels.csv";
    std::ifstream ev(events_path);
    if (!ev) throw DataError("cannot open " + events_path.string());
    std::ifstream lb(labels_path);
    if (!lb) throw DataError("cannot open " + labels_path.string());
    const auto events = parse_events(ev);
    const auto labels = parse_labels(lb);
    return build_dataset(events, labels.labels, report);
}

}  // namespace keydyn
