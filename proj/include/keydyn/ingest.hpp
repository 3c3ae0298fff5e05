#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "keydyn/types.hpp"

namespace keydyn {

// events.csv: user_id,device,mode,key,press_ms,release_ms
std::vector<KeyEvent> parse_events(std::istream& in);

struct LabelParse {
    std::map<std::string, SoftLabels> labels;
    std::vector<std::string> skipped_users;  // rows with missing/blank target fields
};

// labels.csv: user_id,gender,major,style,age,height
LabelParse parse_labels(std::istream& in);

void serialize_events(const std::vector<KeyEvent>& events, std::ostream& out);
void serialize_labels(const std::map<std::string, SoftLabels>& labels, std::ostream& out);

struct BuildReport {
    std::size_t dropped_events = 0;   // release before press
    std::size_t dropped_users = 0;    // events without a label row
    std::vector<std::string> dropped_user_ids;
};

Dataset build_dataset(const std::vector<KeyEvent>& events,
                      const std::map<std::string, SoftLabels>& labels,
                      BuildReport* report = nullptr);

// BB-MAS style logs carry one row per press event and one per release.
// Pairs each press with the next release of the same key label in the
// same session; unpaired presses are dropped and counted.
struct RawKeyAction {
    std::string user_id;
    Device device = Device::Desktop;
    Mode mode = Mode::Free;
    std::string key_label;
    std::int64_t time_ms = 0;
    bool is_press = true;
};

std::vector<KeyEvent> pair_press_release(const std::vector<RawKeyAction>& actions,
                                         std::size_t* unpaired_presses = nullptr);

struct NumericSummary {
    double min = 0, max = 0, mean = 0, median = 0, stddev = 0;
};

struct Manifest {
    std::size_t n_users = 0;
    std::map<Gender, std::size_t> gender_counts;
    std::map<Major, std::size_t> major_counts;
    std::map<TypingStyle, std::size_t> style_counts;
    NumericSummary age;
    NumericSummary height;
    std::map<std::pair<Device, Mode>, std::size_t> keystroke_counts;
};

Manifest dataset_summary(const Dataset& dataset);

void print_manifest(const Manifest& m, std::ostream& out);

// Convenience: load events.csv + labels.csv from a directory and build.
Dataset load_dataset(const std::string& data_dir, BuildReport* report = nullptr);

}  // namespace keydyn
