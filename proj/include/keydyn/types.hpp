#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "keydyn/error.hpp"

namespace keydyn {

enum class Device { Desktop, Phone, Tablet };
enum class Mode { Free, Fixed };
enum class Gender { Male, Female };
enum class Major { CS, NonCS };
enum class TypingStyle { A_MustLook, B_OccasionalLook, C_NoLook };

// Device axis of the experiment matrix: the three physical devices plus
// the concatenated "Combined" configuration.
enum class DeviceConfig { Desktop, Phone, Tablet, Combined };

const char* to_string(Device d);
const char* to_string(Mode m);
const char* to_string(Gender g);
const char* to_string(Major m);
const char* to_string(TypingStyle s);
const char* to_string(DeviceConfig d);

Device device_from_string(const std::string& s);
Mode mode_from_string(const std::string& s);
Gender gender_from_string(const std::string& s);
Major major_from_string(const std::string& s);
TypingStyle style_from_string(const std::string& s);
DeviceConfig device_config_from_string(const std::string& s);

// One timed key press/release record.
struct KeyEvent {
    std::string user_id;
    Device device = Device::Desktop;
    Mode mode = Mode::Free;
    std::string key_label;
    std::int64_t press_ms = 0;
    std::int64_t release_ms = 0;

    bool operator==(const KeyEvent&) const = default;
};

// Per-user ground truth for the five inference targets.
struct SoftLabels {
    Gender gender = Gender::Male;
    Major major = Major::CS;
    TypingStyle style = TypingStyle::C_NoLook;
    int age = 0;
    int height = 0;

    bool operator==(const SoftLabels&) const = default;
};

struct StreamKey {
    std::string user_id;
    Device device = Device::Desktop;
    Mode mode = Mode::Free;

    auto operator<=>(const StreamKey&) const = default;
};

// Immutable after build; streams sorted ascending by press time.
struct Dataset {
    std::map<StreamKey, std::vector<KeyEvent>> streams;
    std::map<std::string, SoftLabels> labels;
};

}  // namespace keydyn
