#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "keydyn/ingest.hpp"
#include "keydyn/protocol.hpp"
#include "keydyn/synth.hpp"

using namespace keydyn;

namespace {

std::vector<double> hold_samples(const PersonaSpec& persona, const GeneratorConfig& cfg, int n,
                                 std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto stream =
        generate_stream(persona, Device::Desktop, Mode::Free, n, cfg.signal_strength, cfg, rng);
    std::vector<double> holds;
    for (const auto& ev : stream) holds.push_back(static_cast<double>(ev.release_ms - ev.press_ms));
    return holds;
}

// two-sample Kolmogorov-Smirnov statistic
double ks_statistic(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0.0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] <= b[j])
            ++i;
        else
            ++j;
        const double fa = static_cast<double>(i) / static_cast<double>(a.size());
        const double fb = static_cast<double>(j) / static_cast<double>(b.size());
        d = std::max(d, std::abs(fa - fb));
    }
    return d;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("population marginals track the study demographics") {
    GeneratorConfig cfg;
    cfg.n_users = 117;
    cfg.seed = 5;
    const auto population = sample_population(cfg);
    REQUIRE(population.size() == 117);

    std::size_t male = 0, cs = 0, style_a = 0, style_b = 0, style_c = 0;
    for (const auto& [user, lab] : population) {
        male += lab.gender == Gender::Male;
        cs += lab.major == Major::CS;
        style_a += lab.style == TypingStyle::A_MustLook;
        style_b += lab.style == TypingStyle::B_OccasionalLook;
        style_c += lab.style == TypingStyle::C_NoLook;
        CHECK(lab.age >= 19);
        CHECK(lab.age <= 35);
        CHECK(lab.height >= 54);
        CHECK(lab.height <= 74);
    }
    // +-5% of 72/117
    CHECK(std::abs(static_cast<double>(male) / 117.0 - 72.0 / 117.0) <= 0.05);
    CHECK(std::abs(static_cast<double>(cs) / 117.0 - 66.0 / 116.0) <= 0.05);
    CHECK(style_a >= 2);  // smallest class usable for stratified splitting
    CHECK(style_a + style_b + style_c == 117);

    const auto again = sample_population(cfg);
    CHECK(again == population);
}

TEST_CASE("population scales to other sizes with the same proportions") {
    GeneratorConfig cfg;
    cfg.n_users = 40;
    cfg.seed = 9;
    const auto population = sample_population(cfg);
    REQUIRE(population.size() == 40);
    std::size_t male = 0;
    for (const auto& [user, lab] : population) male += lab.gender == Gender::Male;
    CHECK(std::abs(static_cast<double>(male) / 40.0 - 72.0 / 117.0) <= 0.05);
}

TEST_CASE("generator rejects configurations below the documented floor") {
    GeneratorConfig cfg;
    cfg.n_users = 3;
    CHECK_THROWS_AS(sample_population(cfg), BadSpec);
    GeneratorConfig cfg2;
    cfg2.keystrokes_per_stream = 50;
    CHECK_THROWS_AS(generate_dataset(cfg2), BadSpec);
}

TEST_CASE("generated streams pass ingest validation with zero drops") {
    GeneratorConfig cfg;
    cfg.n_users = 6;
    cfg.keystrokes_per_stream = 200;
    cfg.seed = 4;
    const Dataset ds = generate_dataset(cfg);
    CHECK(ds.streams.size() == 6 * 6);

    std::vector<KeyEvent> all_events;
    for (const auto& [key, stream] : ds.streams) {
        CHECK(std::is_sorted(stream.begin(), stream.end(),
                             [](const KeyEvent& a, const KeyEvent& b) {
                                 return a.press_ms < b.press_ms;
                             }));
        all_events.insert(all_events.end(), stream.begin(), stream.end());
    }
    BuildReport report;
    const Dataset rebuilt = build_dataset(all_events, ds.labels, &report);
    CHECK(report.dropped_events == 0);
    CHECK(report.dropped_users == 0);
    CHECK(rebuilt.streams == ds.streams);
}

TEST_CASE("synthetic dataset files are byte-identical across runs") {
    namespace fs = std::filesystem;
    GeneratorConfig cfg;
    cfg.n_users = 5;
    cfg.keystrokes_per_stream = 120;
    cfg.seed = 21;
    const fs::path dir1 = fs::temp_directory_path() / "keydyn_synth_a";
    const fs::path dir2 = fs::temp_directory_path() / "keydyn_synth_b";
    fs::remove_all(dir1);
    fs::remove_all(dir2);
    write_synth_dataset(cfg, dir1.string());
    write_synth_dataset(cfg, dir2.string());
    CHECK(read_file(dir1 / "events.csv") == read_file(dir2 / "events.csv"));
    CHECK(read_file(dir1 / "labels.csv") == read_file(dir2 / "labels.csv"));
    CHECK(!read_file(dir1 / "events.csv").empty());
}

TEST_CASE("style 'a' personas fly slower than style 'c' at full signal") {
    GeneratorConfig cfg;
    cfg.signal_strength = 1.0;
    SoftLabels a{Gender::Male, Major::CS, TypingStyle::A_MustLook, 25, 67};
    SoftLabels c{Gender::Male, Major::CS, TypingStyle::C_NoLook, 25, 67};
    const PersonaSpec pa = make_persona("ua", a, cfg);
    const PersonaSpec pc = make_persona("uc", c, cfg);
    CHECK(pa.flight_multiplier > pc.flight_multiplier);

    std::mt19937_64 rng_a(1), rng_c(1);
    const auto sa = generate_stream(pa, Device::Desktop, Mode::Free, 3000, 1.0, cfg, rng_a);
    const auto sc = generate_stream(pc, Device::Desktop, Mode::Free, 3000, 1.0, cfg, rng_c);
    auto mean_f1 = [](const std::vector<KeyEvent>& s) {
        double sum = 0.0;
        for (std::size_t i = 0; i + 1 < s.size(); ++i)
            sum += static_cast<double>(s[i + 1].press_ms - s[i].release_ms);
        return sum / static_cast<double>(s.size() - 1);
    };
    CHECK(mean_f1(sa) > mean_f1(sc));
}

TEST_CASE("device multipliers scale phone and tablet timings") {
    CHECK(device_multiplier(Device::Desktop) == 1.0);
    CHECK(device_multiplier(Device::Phone) == doctest::Approx(1.3));
    CHECK(device_multiplier(Device::Tablet) == doctest::Approx(1.2));

    GeneratorConfig cfg;
    SoftLabels lab{Gender::Male, Major::CS, TypingStyle::C_NoLook, 25, 67};
    const PersonaSpec p = make_persona("u", lab, cfg);
    std::mt19937_64 r1(3), r2(3);
    const auto desktop = generate_stream(p, Device::Desktop, Mode::Free, 4000, 1.0, cfg, r1);
    const auto phone = generate_stream(p, Device::Phone, Mode::Free, 4000, 1.0, cfg, r2);
    auto mean_hold = [](const std::vector<KeyEvent>& s) {
        double sum = 0.0;
        for (const auto& ev : s) sum += static_cast<double>(ev.release_ms - ev.press_ms);
        return sum / static_cast<double>(s.size());
    };
    CHECK(mean_hold(phone) > 1.2 * mean_hold(desktop));
}

TEST_CASE("about five percent of digraphs overlap (negative F1)") {
    GeneratorConfig cfg;
    SoftLabels lab{Gender::Male, Major::CS, TypingStyle::C_NoLook, 25, 67};
    const PersonaSpec p = make_persona("u", lab, cfg);
    std::mt19937_64 rng(8);
    const auto stream = generate_stream(p, Device::Desktop, Mode::Free, 20000, 1.0, cfg, rng);
    std::size_t negative = 0;
    for (std::size_t i = 0; i + 1 < stream.size(); ++i)
        if (stream[i + 1].press_ms < stream[i].release_ms) ++negative;
    const double rate = static_cast<double>(negative) / static_cast<double>(stream.size() - 1);
    // binomial(n=19999, p=0.05): five sigma is about 0.008
    CHECK(rate > 0.04);
    CHECK(rate < 0.06);
}

TEST_CASE("at signal zero the timing distribution is label-independent") {
    GeneratorConfig cfg;
    cfg.signal_strength = 0.0;
    SoftLabels a{Gender::Female, Major::NonCS, TypingStyle::A_MustLook, 35, 54};
    SoftLabels b{Gender::Male, Major::CS, TypingStyle::C_NoLook, 19, 74};
    const PersonaSpec pa = make_persona("ua", a, cfg);
    const PersonaSpec pb = make_persona("ub", b, cfg);
    const auto ha = hold_samples(pa, cfg, 5000, 101);
    const auto hb = hold_samples(pb, cfg, 5000, 202);
    const double d = ks_statistic(ha, hb);
    // critical value at alpha = 0.01 for n = m = 5000
    const double critical = 1.628 * std::sqrt(2.0 / 5000.0);
    CHECK(d < critical);
}

TEST_CASE("pipeline gender accuracy is non-decreasing in signal strength") {
    double last = -1.0;
    for (double signal : {0.0, 0.5, 1.0}) {
        double total = 0.0;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            GeneratorConfig cfg;
            cfg.n_users = 40;
            cfg.keystrokes_per_stream = 400;
            cfg.signal_strength = signal;
            cfg.seed = 900 + seed;

            Dataset ds;
            for (const auto& [user, lab] : sample_population(cfg)) {
                ds.labels.emplace(user, lab);
                std::mt19937_64 rng(mix_seed(cfg.seed, user));
                ds.streams[StreamKey{user, Device::Desktop, Mode::Free}] = generate_stream(
                    make_persona(user, lab, cfg), Device::Desktop, Mode::Free,
                    cfg.keystrokes_per_stream, signal, cfg, rng);
            }

            ExperimentConfig ec;
            ec.task = TaskKind::Gender;
            ec.device_config = DeviceConfig::Desktop;
            ec.mode = Mode::Free;
            ec.model = LearnerSpec::classical(ml::Algorithm::NaiveBayes);
            ec.selector_k_grid = {24};
            ec.cv_folds = 3;
            ec.seed = 70 + seed;
            total += run_experiment(ec, ds).metric;
        }
        const double mean_acc = total / 5.0;
        CHECK(mean_acc >= last);
        last = mean_acc;
    }
    CHECK(last >= 0.8);  // full signal is clearly recoverable
}
