#pragma once

#include <map>
#include <string>
#include <vector>

#include "keydyn/features.hpp"
#include "keydyn/ml.hpp"
#include "keydyn/nn/network.hpp"
#include "keydyn/preprocess.hpp"
#include "keydyn/types.hpp"

#include "json.hpp"

namespace keydyn {

enum class TaskKind { Gender, Major, Style, Age, Height };

const char* to_string(TaskKind t);
TaskKind task_from_string(const std::string& s);
bool task_is_classification(TaskKind t);

int class_label(const SoftLabels& labels, TaskKind task);
double numeric_label(const SoftLabels& labels, TaskKind task);
std::string class_label_name(TaskKind task, int value);

// One name covering both model families of the benchmark.
struct LearnerSpec {
    enum class Family { Classical, Neural };
    Family family = Family::Classical;
    ml::Algorithm algorithm = ml::Algorithm::NaiveBayes;
    nn::ArchKind arch = nn::ArchKind::FC;

    static LearnerSpec classical(ml::Algorithm a);
    static LearnerSpec neural(nn::ArchKind k);
    static LearnerSpec from_name(const std::string& name);
    std::string name() const;
    bool supports(TaskKind task) const;
};

struct SplitSpec {
    std::vector<std::string> train_users;
    std::vector<std::string> test_users;
    double ratio = 0.7;
    std::vector<std::string> warnings;
};

// Stratified user-disjoint split; regression targets stratify by quartile.
SplitSpec split_users(const std::vector<std::string>& users,
                      const std::map<std::string, SoftLabels>& labels, TaskKind task,
                      std::uint64_t seed, double ratio = 0.7);

using Fold = std::pair<std::vector<std::string>, std::vector<std::string>>;  // (fit, val)

std::vector<Fold> kfold(const std::vector<std::string>& train_users, int k, std::uint64_t seed);

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth);
double mae(const std::vector<double>& pred, const std::vector<double>& truth);

struct ExperimentConfig {
    TaskKind task = TaskKind::Gender;
    DeviceConfig device_config = DeviceConfig::Desktop;
    Mode mode = Mode::Free;
    LearnerSpec model;
    std::vector<int> selector_k_grid = {32, 64};
    std::uint64_t seed = 0;
    VocabCaps caps;
    SmoteConfig smote;
    int cv_folds = 5;
    double split_ratio = 0.7;
    int mi_bins = 10;
    nn::TrainConfig train;                          // neural training knobs
    std::vector<double> neural_lr_grid = {0.01, 0.001};
    bool strict_reshape = false;  // strictly-smaller variant of the reshape tricks
    bool keep_artifacts = false;  // also return the final test matrix + predictions
};

struct GridPoint {
    std::map<std::string, double> hyperparameters;  // classical
    double neural_lr = 0.01;                        // neural
    int selector_k = 32;
};

struct ExperimentResult {
    double metric = 0.0;    // accuracy (classify) or MAE (regress)
    double baseline = 0.0;  // majority-class share / train-mean-predictor MAE
    GridPoint winner;
    nlohmann::json provenance;
    nlohmann::json model_json;
    // filled only with keep_artifacts: the model-ready test matrix plus the
    // fitted preprocessing (feature names, standardizer, selector)
    Matrix test_matrix;
    std::vector<std::string> test_user_ids;
    std::vector<int> test_pred_class;
    std::vector<double> test_pred_value;
    nlohmann::json preprocess_json;
    std::vector<double> epoch_losses;  // neural models only
};

ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& dataset);

struct MatrixRunConfig {
    std::vector<TaskKind> tasks = {TaskKind::Gender, TaskKind::Major, TaskKind::Style,
                                   TaskKind::Age, TaskKind::Height};
    std::vector<DeviceConfig> devices = {DeviceConfig::Desktop, DeviceConfig::Phone,
                                         DeviceConfig::Tablet, DeviceConfig::Combined};
    std::vector<Mode> modes = {Mode::Free, Mode::Fixed};
    std::vector<LearnerSpec> models;
    std::vector<std::uint64_t> seeds = {7};
    std::vector<int> selector_k_grid = {32, 64};
    VocabCaps caps;
    SmoteConfig smote;
    int cv_folds = 5;
    double split_ratio = 0.7;
    int mi_bins = 10;
    nn::TrainConfig train;
    std::vector<double> neural_lr_grid = {0.01, 0.001};
    bool strict_reshape = false;
    int jobs = 0;  // <= 0: one worker per logical core
    bool annotate_published = true;
    enum class Format { Md, Csv, Both };
    Format format = Format::Both;
};

struct CellResult {
    TaskKind task = TaskKind::Gender;
    DeviceConfig device = DeviceConfig::Desktop;
    Mode mode = Mode::Free;
    std::string algorithm;
    bool failed = false;
    std::string error;
    double metric = 0.0;      // mean over seeds
    double metric_std = 0.0;  // std over seeds (0 for one seed)
    double baseline = 0.0;
};

struct ResultTable {
    std::vector<CellResult> cells;
    nlohmann::json provenance;
};

ResultTable full_matrix(const Dataset& dataset, const MatrixRunConfig& config);

// results/<task>.csv, results/<task>.md, results/provenance.json
void write_results(const ResultTable& table, const MatrixRunConfig& config,
                   const std::string& out_dir);

// Re-render markdown from previously written CSV files.
void render_reports_from_csv(const std::string& out_dir);

// Best published metric per (task, device, mode, algorithm), used to
// annotate rendered tables.
struct PublishedValue {
    TaskKind task;
    DeviceConfig device;
    Mode mode;
    const char* algorithm;
    double value;
};
const std::vector<PublishedValue>& published_values();

// True when no test user appears in any fitted-component record.
bool audit_provenance(const nlohmann::json& provenance, std::vector<std::string>* violations = nullptr);

}  // namespace keydyn
