#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "keydyn/stats.hpp"

#include "json.hpp"

namespace keydyn {

using Mask = std::vector<std::uint8_t>;  // rows*cols, 1 = missing

struct Standardizer {
    std::vector<double> mean;
    std::vector<double> stddev;              // clamped to 1 for constant features
    std::vector<std::uint8_t> constant_flag;
    std::vector<std::string> fitted_on;

    nlohmann::json to_json(const std::vector<std::string>& feature_names = {}) const;
};

// Masked entries are excluded from the fitted statistics.
Standardizer fit_standardizer(const Matrix& x, const Mask& mask,
                              const std::vector<std::string>& fitted_on);

// Mean-impute masked entries, then z-score with training statistics.
Matrix impute_and_standardize(const Matrix& x, const Mask& mask, const Standardizer& st);

// Equal-frequency histogram MI estimate in nats.
double mutual_information(std::span<const double> x, std::span<const int> y, int bins = 10);

enum class TargetBinning { None, Quartile };

struct MISelector {
    std::vector<double> scores;
    std::vector<int> selected;  // score desc, ties by index asc
    int bins = 10;
    TargetBinning target_binning = TargetBinning::None;
    std::vector<std::string> fitted_on;

    nlohmann::json to_json(const std::vector<std::string>& feature_names = {}) const;
};

// Quartile-bin a regression target into 4 equal-frequency classes.
std::vector<int> quartile_bin(std::span<const double> y);

MISelector select_top_k(const Matrix& x, const std::vector<int>& y_class, int k, int bins = 10,
                        const std::vector<std::string>& fitted_on = {});
MISelector select_top_k(const Matrix& x, const std::vector<double>& y_real, int k, int bins = 10,
                        const std::vector<std::string>& fitted_on = {});

Matrix apply_selector(const Matrix& x, const MISelector& sel);

struct SmoteConfig {
    int k_generate = 5;   // neighbors used for interpolation
    int m_danger = 10;    // neighbors used for danger classification
    std::uint64_t seed = 0;
};

std::vector<double> smote_interpolate(std::span<const double> x, std::span<const double> neighbor,
                                      std::mt19937_64& rng);

struct SmoteResult {
    Matrix x;
    std::vector<int> y;
    std::size_t n_original = 0;
    bool fallback_used = false;  // DANGER empty for some class; vanilla SMOTE used
    std::vector<int> oversampled_classes;
};

// Borderline-SMOTE1. Balances every non-majority class up to the majority count.
SmoteResult borderline_smote(const Matrix& x, const std::vector<int>& y, const SmoteConfig& cfg);

}  // namespace keydyn
