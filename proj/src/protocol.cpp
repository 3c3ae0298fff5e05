#include "keydyn/protocol.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

namespace keydyn {

const char* to_string(TaskKind t) {
    switch (t) {
        case TaskKind::Gender: return "gender";
        case TaskKind::Major: return "major";
        case TaskKind::Style: return "style";
        case TaskKind::Age: return "age";
        case TaskKind::Height: return "height";
    }
    return "?";
}

TaskKind task_from_string(const std::string& s) {
    for (TaskKind t : {TaskKind::Gender, TaskKind::Major, TaskKind::Style, TaskKind::Age,
                       TaskKind::Height})
        if (s == to_string(t)) return t;
    throw UsageError("unknown task: " + s);
}

bool task_is_classification(TaskKind t) {
    return t == TaskKind::Gender || t == TaskKind::Major || t == TaskKind::Style;
}

int class_label(const SoftLabels& labels, TaskKind task) {
    switch (task) {
        case TaskKind::Gender: return static_cast<int>(labels.gender);
        case TaskKind::Major: return static_cast<int>(labels.major);
        case TaskKind::Style: return static_cast<int>(labels.style);
        default: throw UsageError("task has no class label");
    }
}

double numeric_label(const SoftLabels& labels, TaskKind task) {
    switch (task) {
        case TaskKind::Age: return labels.age;
        case TaskKind::Height: return labels.height;
        default: throw UsageError("task has no numeric label");
    }
}

std::string class_label_name(TaskKind task, int value) {
    switch (task) {
        case TaskKind::Gender: return to_string(static_cast<Gender>(value));
        case TaskKind::Major: return to_string(static_cast<Major>(value));
        case TaskKind::Style: return to_string(static_cast<TypingStyle>(value));
        default: return std::to_string(value);
    }
}

LearnerSpec LearnerSpec::classical(ml::Algorithm a) {
    LearnerSpec s;
    s.family = Family::Classical;
    s.algorithm = a;
    return s;
}

LearnerSpec LearnerSpec::neural(nn::ArchKind k) {
    LearnerSpec s;
    s.family = Family::Neural;
    s.arch = k;
    return s;
}

std::string LearnerSpec::name() const {
    return family == Family::Classical ? ml::to_string(algorithm) : nn::to_string(arch);
}

LearnerSpec LearnerSpec::from_name(const std::string& name) {
    for (nn::ArchKind k : {nn::ArchKind::FC, nn::ArchKind::CNN, nn::ArchKind::RNN,
                           nn::ArchKind::LSTM})
        if (name == nn::to_string(k)) return neural(k);
    return classical(ml::algorithm_from_string(name));
}

bool LearnerSpec::supports(TaskKind task) const {
    if (task_is_classification(task)) return true;
    if (family == Family::Neural) return true;
    return algorithm != ml::Algorithm::NaiveBayes && algorithm != ml::Algorithm::AdaBoost;
}

// --- split / folds / metrics ---

SplitSpec split_users(const std::vector<std::string>& users,
                      const std::map<std::string, SoftLabels>& labels, TaskKind task,
                      std::uint64_t seed, double ratio) {
    if (users.size() < 4) throw TooFewUsers("split needs at least 4 users");

    std::vector<int> strata_of(users.size());
    if (task_is_classification(task)) {
        for (std::size_t i = 0; i < users.size(); ++i)
            strata_of[i] = class_label(labels.at(users[i]), task);
    } else {
        std::vector<double> y(users.size());
        for (std::size_t i = 0; i < users.size(); ++i) y[i] = numeric_label(labels.at(users[i]), task);
        strata_of = quartile_bin(y);
    }

    std::map<int, std::vector<std::string>> strata;
    for (std::size_t i = 0; i < users.size(); ++i) strata[strata_of[i]].push_back(users[i]);

    SplitSpec split;
    split.ratio = ratio;
    std::mt19937_64 rng(mix_seed(seed, "split"));
    const auto target = static_cast<std::size_t>(
        std::floor(ratio * static_cast<double>(users.size())));

    struct Stratum {
        int key;
        std::vector<std::string> members;  // shuffled
        std::size_t take = 0;
        double frac = 0.0;
    };
    std::vector<Stratum> pool;
    std::size_t assigned = 0;
    for (auto& [key, members] : strata) {
        Stratum s;
        s.key = key;
        s.members = members;
        std::sort(s.members.begin(), s.members.end());
        std::shuffle(s.members.begin(), s.members.end(), rng);
        const double exact = ratio * static_cast<double>(s.members.size());
        s.take = static_cast<std::size_t>(std::floor(exact));
        s.frac = exact - static_cast<double>(s.take);
        if (s.members.size() == 1) {
            split.warnings.push_back("stratum '" + class_label_name(task, key) +
                                     "' has a single user; assigned to training only");
            s.take = 1;
        } else {
            s.take = std::clamp<std::size_t>(s.take, 1, s.members.size() - 1);
        }
        assigned += s.take;
        pool.push_back(std::move(s));
    }
    // distribute leftover train seats by largest fractional remainder
    if (assigned < target) {
        std::vector<std::size_t> order(pool.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (pool[a].frac != pool[b].frac) return pool[a].frac > pool[b].frac;
            return pool[a].key < pool[b].key;
        });
        std::size_t extra = target - assigned;
        bool progress = true;
        while (extra > 0 && progress) {
            progress = false;
            for (std::size_t idx : order) {
                if (extra == 0) break;
                Stratum& s = pool[idx];
                if (s.members.size() >= 2 && s.take < s.members.size() - 1) {
                    ++s.take;
                    --extra;
                    progress = true;
                }
            }
        }
    }
    for (const Stratum& s : pool) {
        for (std::size_t i = 0; i < s.members.size(); ++i)
            (i < s.take ? split.train_users : split.test_users).push_back(s.members[i]);
    }
    std::sort(split.train_users.begin(), split.train_users.end());
    std::sort(split.test_users.begin(), split.test_users.end());
    return split;
}

std::vector<Fold> kfold(const std::vector<std::string>& train_users, int k, std::uint64_t seed) {
    if (k < 2) throw UsageError("kfold needs k >= 2");
    if (train_users.size() < static_cast<std::size_t>(k))
        throw TooFewUsers("fewer training users than folds");
    std::vector<std::string> shuffled = train_users;
    std::sort(shuffled.begin(), shuffled.end());
    std::mt19937_64 rng(mix_seed(seed, "kfold"));
    std::shuffle(shuffled.begin(), shuffled.end(), rng);

    std::vector<Fold> folds(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < shuffled.size(); ++i)
        folds[i % static_cast<std::size_t>(k)].second.push_back(shuffled[i]);
    for (int f = 0; f < k; ++f) {
        auto& [fit, val] = folds[static_cast<std::size_t>(f)];
        std::sort(val.begin(), val.end());
        for (int g = 0; g < k; ++g) {
            if (g == f) continue;
            const auto& other = folds[static_cast<std::size_t>(g)].second;
            fit.insert(fit.end(), other.begin(), other.end());
        }
        std::sort(fit.begin(), fit.end());
    }
    return folds;
}

double accuracy(const std::vector<int>& pred, const std::vector<int>& truth) {
    if (pred.size() != truth.size()) throw LengthMismatch("accuracy length mismatch");
    if (pred.empty()) throw LengthMismatch("accuracy of empty vectors");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == truth[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double mae(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size()) throw LengthMismatch("mae length mismatch");
    if (pred.empty()) throw LengthMismatch("mae of empty vectors");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(pred[i] - truth[i]);
    return s / static_cast<double>(pred.size());
}

// --- pipeline internals ---

namespace {

std::vector<Device> devices_for(DeviceConfig dc) {
    switch (dc) {
        case DeviceConfig::Desktop: return {Device::Desktop};
        case DeviceConfig::Phone: return {Device::Phone};
        case DeviceConfig::Tablet: return {Device::Tablet};
        case DeviceConfig::Combined: return {Device::Desktop, Device::Phone, Device::Tablet};
    }
    return {};
}

struct CellContext {
    std::vector<Device> devices;
    Mode mode = Mode::Free;
    std::vector<std::string> users;  // eligible, sorted
    std::vector<std::string> dropped;
    std::map<std::string, std::map<Device, std::map<UnitId, UnitProfile>>> profiles;
};

CellContext build_cell_context(const Dataset& dataset, DeviceConfig dc, Mode mode) {
    CellContext ctx;
    ctx.devices = devices_for(dc);
    ctx.mode = mode;
    for (const auto& [user, labels] : dataset.labels) {
        bool complete = true;
        for (Device d : ctx.devices) {
            auto it = dataset.streams.find(StreamKey{user, d, mode});
            if (it == dataset.streams.end() || it->second.empty()) {
                complete = false;
                break;
            }
        }
        if (!complete) {
            ctx.dropped.push_back(user);
            continue;
        }
        ctx.users.push_back(user);
        for (Device d : ctx.devices) {
            const auto& stream = dataset.streams.at(StreamKey{user, d, mode});
            ctx.profiles[user][d] = profile_stream(stream);
        }
    }
    return ctx;
}

struct FoldData {
    Matrix x_fit, x_eval;  // imputed + standardized
    std::vector<int> y_fit_c, y_eval_c;
    std::vector<double> y_fit_r, y_eval_r;
    MISelector ranking;  // all features ranked
    Standardizer standardizer;
    std::vector<std::string> feature_names;
    nlohmann::json fitted_components = nlohmann::json::array();
    std::size_t n_features = 0;
};

FoldData build_fold_data(const CellContext& ctx, const std::map<std::string, SoftLabels>& labels,
                         TaskKind task, const VocabCaps& caps, int mi_bins,
                         const std::vector<std::string>& fit_users,
                         const std::vector<std::string>& eval_users) {
    FoldData fd;

    std::map<Device, FeatureVocabulary> vocabs;
    for (Device d : ctx.devices) {
        std::vector<const std::map<UnitId, UnitProfile>*> refs;
        for (const auto& u : fit_users) refs.push_back(&ctx.profiles.at(u).at(d));
        vocabs.emplace(d, fit_vocabulary_from_profiles(refs, fit_users, caps));
        fd.fitted_components.push_back(
            {{"component", std::string("vocabulary:") + to_string(d)}, {"fitted_on", fit_users}});
        for (const auto& desc : vocabs.at(d).descriptors) {
            std::string name = desc.name();
            if (ctx.devices.size() > 1) name = std::string(to_string(d)) + "|" + name;
            fd.feature_names.push_back(std::move(name));
        }
    }

    auto assemble = [&](const std::vector<std::string>& users, Matrix& x, Mask& mask) {
        for (const auto& u : users) {
            std::vector<double> row;
            std::vector<std::uint8_t> row_mask;
            for (Device d : ctx.devices) {
                const FeatureVector fv = vectorize_profile(ctx.profiles.at(u).at(d), vocabs.at(d));
                row.insert(row.end(), fv.values.begin(), fv.values.end());
                row_mask.insert(row_mask.end(), fv.missing_mask.begin(), fv.missing_mask.end());
            }
            x.append_row(row);
            mask.insert(mask.end(), row_mask.begin(), row_mask.end());
        }
    };

    Matrix x_fit_raw, x_eval_raw;
    Mask mask_fit, mask_eval;
    assemble(fit_users, x_fit_raw, mask_fit);
    assemble(eval_users, x_eval_raw, mask_eval);
    fd.n_features = x_fit_raw.cols;

    fd.standardizer = fit_standardizer(x_fit_raw, mask_fit, fit_users);
    fd.fitted_components.push_back(
        {{"component", "standardizer"}, {"fitted_on", fd.standardizer.fitted_on}});
    fd.x_fit = impute_and_standardize(x_fit_raw, mask_fit, fd.standardizer);
    fd.x_eval = impute_and_standardize(x_eval_raw, mask_eval, fd.standardizer);

    if (task_is_classification(task)) {
        for (const auto& u : fit_users) fd.y_fit_c.push_back(class_label(labels.at(u), task));
        for (const auto& u : eval_users) fd.y_eval_c.push_back(class_label(labels.at(u), task));
        fd.ranking = select_top_k(fd.x_fit, fd.y_fit_c, static_cast<int>(fd.n_features), mi_bins,
                                  fit_users);
    } else {
        for (const auto& u : fit_users) fd.y_fit_r.push_back(numeric_label(labels.at(u), task));
        for (const auto& u : eval_users) fd.y_eval_r.push_back(numeric_label(labels.at(u), task));
        fd.ranking = select_top_k(fd.x_fit, fd.y_fit_r, static_cast<int>(fd.n_features), mi_bins,
                                  fit_users);
    }
    fd.fitted_components.push_back(
        {{"component", "mi_selector"}, {"fitted_on", fd.ranking.fitted_on}});
    return fd;
}

Matrix take_columns(const Matrix& x, const std::vector<int>& cols) {
    Matrix out(x.rows, cols.size());
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t j = 0; j < cols.size(); ++j)
            out.at(r, j) = x.at(r, static_cast<std::size_t>(cols[j]));
    return out;
}

struct PointOutcome {
    double metric = 0.0;
    bool smote_fallback = false;
    bool smote_skipped = false;
    Matrix x_eval;
    std::vector<int> pred_c;
    std::vector<double> pred_r;
    std::vector<double> epoch_losses;
};

PointOutcome evaluate_point(const FoldData& fd, TaskKind task, const LearnerSpec& model,
                            const GridPoint& point, const SmoteConfig& smote_cfg,
                            const nn::TrainConfig& train_cfg, bool strict_reshape,
                            std::uint64_t model_seed, nlohmann::json* fitted_out,
                            nlohmann::json* model_out) {
    PointOutcome outcome;
    const int k = std::min<int>(point.selector_k, static_cast<int>(fd.n_features));
    std::vector<int> selected(fd.ranking.selected.begin(), fd.ranking.selected.begin() + k);
    const Matrix x_fit = take_columns(fd.x_fit, selected);
    const Matrix x_eval = take_columns(fd.x_eval, selected);

    if (task_is_classification(task)) {
        Matrix x_train = x_fit;
        std::vector<int> y_train = fd.y_fit_c;

        std::map<int, std::size_t> counts;
        for (int y : y_train) ++counts[y];
        std::size_t majority = 0;
        for (const auto& [cls, c] : counts) majority = std::max(majority, c);
        const bool smoteable =
            counts.size() >= 2 &&
            std::all_of(counts.begin(), counts.end(), [&](const auto& kv) {
                return kv.second == majority || kv.second >= 2;
            });
        if (smoteable) {
            SmoteConfig cfg = smote_cfg;
            cfg.seed = mix_seed(smote_cfg.seed, "smote:" + std::to_string(model_seed));
            const SmoteResult res = borderline_smote(x_train, y_train, cfg);
            outcome.smote_fallback = res.fallback_used;
            x_train = res.x;
            y_train = res.y;
        } else {
            outcome.smote_skipped = true;
        }
        if (fitted_out)
            fitted_out->push_back({{"component", "smote"},
                                   {"fitted_on", fd.ranking.fitted_on},
                                   {"skipped", outcome.smote_skipped}});

        std::vector<int> pred;
        if (model.family == LearnerSpec::Family::Classical) {
            const auto spec = ml::ModelSpec::make(model.algorithm, ml::Task::Classify,
                                                  point.hyperparameters, model_seed);
            const ml::TrainedModel trained = ml::fit_classifier(spec, x_train, y_train);
            pred = trained.predict_class(x_eval);
            if (model_out) *model_out = trained.to_json();
        } else {
            std::set<int> cls(y_train.begin(), y_train.end());
            const nn::NetworkSpec net_spec = nn::build_architecture(
                model.arch, x_train.cols, cls.size(), true, model_seed, strict_reshape);
            nn::TrainConfig tc = train_cfg;
            tc.learning_rate = point.neural_lr;
            tc.seed = model_seed;
            nn::NeuralModel trained = nn::train_classifier(net_spec, tc, x_train, y_train);
            pred = trained.predict_class(x_eval);
            outcome.epoch_losses = trained.epoch_losses();
            if (model_out) *model_out = trained.to_json();
        }
        outcome.metric = accuracy(pred, fd.y_eval_c);
        outcome.pred_c = std::move(pred);
        if (model_out) outcome.x_eval = x_eval;
    } else {
        std::vector<double> pred;
        if (model.family == LearnerSpec::Family::Classical) {
            const auto spec = ml::ModelSpec::make(model.algorithm, ml::Task::Regress,
                                                  point.hyperparameters, model_seed);
            const ml::TrainedModel trained = ml::fit_regressor(spec, x_fit, fd.y_fit_r);
            pred = trained.predict_value(x_eval);
            if (model_out) *model_out = trained.to_json();
        } else {
            const nn::NetworkSpec net_spec = nn::build_architecture(model.arch, x_fit.cols, 1,
                                                                    false, model_seed,
                                                                    strict_reshape);
            nn::TrainConfig tc = train_cfg;
            tc.learning_rate = point.neural_lr;
            tc.seed = model_seed;
            nn::NeuralModel trained = nn::train_regressor(net_spec, tc, x_fit, fd.y_fit_r);
            pred = trained.predict_value(x_eval);
            outcome.epoch_losses = trained.epoch_losses();
            if (model_out) *model_out = trained.to_json();
        }
        outcome.metric = mae(pred, fd.y_eval_r);
        outcome.pred_r = std::move(pred);
        if (model_out) outcome.x_eval = x_eval;
    }
    return outcome;
}

std::vector<GridPoint> enumerate_grid(const LearnerSpec& model,
                                      const std::vector<int>& selector_k_grid,
                                      const std::vector<double>& neural_lr_grid) {
    std::vector<GridPoint> points;
    if (model.family == LearnerSpec::Family::Classical) {
        const auto grid = ml::default_grid(model.algorithm);
        std::vector<std::map<std::string, double>> combos = {{}};
        for (const auto& [key, values] : grid) {
            std::vector<std::map<std::string, double>> next;
            for (const auto& combo : combos)
                for (double v : values) {
                    auto c = combo;
                    c[key] = v;
                    next.push_back(std::move(c));
                }
            combos = std::move(next);
        }
        for (int k : selector_k_grid)
            for (const auto& combo : combos) {
                GridPoint p;
                p.selector_k = k;
                p.hyperparameters = combo;
                points.push_back(std::move(p));
            }
    } else {
        for (int k : selector_k_grid)
            for (double lr : neural_lr_grid) {
                GridPoint p;
                p.selector_k = k;
                p.neural_lr = lr;
                points.push_back(std::move(p));
            }
    }
    return points;
}

nlohmann::json point_to_json(const GridPoint& p, bool neural) {
    nlohmann::json j;
    j["selector_k"] = p.selector_k;
    if (neural)
        j["lr"] = p.neural_lr;
    else
        j["hyperparameters"] = p.hyperparameters;
    return j;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& dataset) {
    const bool classify = task_is_classification(config.task);
    if (!config.model.supports(config.task))
        throw BadSpec(config.model.name() + " does not support task " + to_string(config.task));

    const CellContext ctx = build_cell_context(dataset, config.device_config, config.mode);
    const SplitSpec split =
        split_users(ctx.users, dataset.labels, config.task, config.seed, config.split_ratio);
    const auto folds = kfold(split.train_users, config.cv_folds, config.seed);
    const auto points =
        enumerate_grid(config.model, config.selector_k_grid, config.neural_lr_grid);

    nlohmann::json fitted_log = nlohmann::json::array();
    std::vector<double> point_sums(points.size(), 0.0);
    for (std::size_t f = 0; f < folds.size(); ++f) {
        const FoldData fd = build_fold_data(ctx, dataset.labels, config.task, config.caps,
                                            config.mi_bins, folds[f].first, folds[f].second);
        nlohmann::json fold_components = fd.fitted_components;
        for (std::size_t p = 0; p < points.size(); ++p) {
            const std::uint64_t model_seed =
                mix_seed(config.seed, "cv:" + std::to_string(f) + ":" + std::to_string(p));
            nlohmann::json* smote_log = p == 0 ? &fold_components : nullptr;
            const PointOutcome out =
                evaluate_point(fd, config.task, config.model, points[p], config.smote,
                               config.train, config.strict_reshape, model_seed, smote_log,
                               nullptr);
            point_sums[p] += out.metric;
        }
        fitted_log.push_back(
            {{"stage", "cv_fold_" + std::to_string(f)}, {"components", fold_components}});
    }

    std::size_t winner = 0;
    for (std::size_t p = 1; p < points.size(); ++p) {
        const double best = point_sums[winner];
        if (classify ? point_sums[p] > best : point_sums[p] < best) winner = p;
    }

    const FoldData final_fd = build_fold_data(ctx, dataset.labels, config.task, config.caps,
                                              config.mi_bins, split.train_users, split.test_users);
    nlohmann::json final_components = final_fd.fitted_components;
    nlohmann::json model_json;
    const PointOutcome final_out = evaluate_point(
        final_fd, config.task, config.model, points[winner], config.smote, config.train,
        config.strict_reshape, mix_seed(config.seed, "final"), &final_components, &model_json);
    fitted_log.push_back({{"stage", "final"}, {"components", final_components}});

    ExperimentResult result;
    result.metric = final_out.metric;
    result.winner = points[winner];
    result.model_json = std::move(model_json);
    if (config.keep_artifacts) {
        result.test_matrix = final_out.x_eval;
        result.test_user_ids = split.test_users;
        result.test_pred_class = final_out.pred_c;
        result.test_pred_value = final_out.pred_r;
        result.epoch_losses = final_out.epoch_losses;
        const int k = std::min<int>(points[winner].selector_k,
                                    static_cast<int>(final_fd.n_features));
        std::vector<std::string> selected_names;
        for (int i = 0; i < k; ++i)
            selected_names.push_back(
                final_fd.feature_names[static_cast<std::size_t>(final_fd.ranking.selected[i])]);
        result.preprocess_json = {
            {"features", final_fd.feature_names},
            {"standardizer", final_fd.standardizer.to_json()},
            {"selector", final_fd.ranking.to_json()},
            {"selected_k", k},
            {"selected_names", selected_names},
        };
    }

    nlohmann::json prov;
    prov["task"] = to_string(config.task);
    prov["device"] = to_string(config.device_config);
    prov["mode"] = to_string(config.mode);
    prov["algorithm"] = config.model.name();
    prov["seed"] = config.seed;
    prov["eligible_users"] = ctx.users.size();
    prov["dropped_users"] = ctx.dropped;
    prov["train_users"] = split.train_users;
    prov["test_users"] = split.test_users;
    prov["warnings"] = split.warnings;
    prov["total_features"] = final_fd.n_features;
    prov["selected_features"] =
        std::min<int>(points[winner].selector_k, static_cast<int>(final_fd.n_features));
    prov["smote_fallback"] = final_out.smote_fallback;
    prov["smote_skipped"] = final_out.smote_skipped;

    nlohmann::json cv = nlohmann::json::array();
    const bool neural = config.model.family == LearnerSpec::Family::Neural;
    for (std::size_t p = 0; p < points.size(); ++p) {
        nlohmann::json entry = point_to_json(points[p], neural);
        entry["mean_metric"] = point_sums[p] / static_cast<double>(folds.size());
        cv.push_back(entry);
    }
    prov["cv"] = {{"folds", folds.size()}, {"points", cv}, {"winner_index", winner}};
    prov["fitted"] = fitted_log;

    if (classify) {
        std::vector<int> y_test;
        std::map<int, std::size_t> balance;
        for (const auto& u : split.test_users) {
            const int c = class_label(dataset.labels.at(u), config.task);
            y_test.push_back(c);
            ++balance[c];
        }
        std::size_t majority = 0;
        nlohmann::json bal;
        for (const auto& [cls, count] : balance) {
            bal[class_label_name(config.task, cls)] = count;
            majority = std::max(majority, count);
        }
        prov["test_class_balance"] = bal;
        result.baseline = static_cast<double>(majority) / static_cast<double>(y_test.size());
    } else {
        double train_mean = 0.0;
        for (const auto& u : split.train_users)
            train_mean += numeric_label(dataset.labels.at(u), config.task);
        train_mean /= static_cast<double>(split.train_users.size());
        double base = 0.0;
        for (const auto& u : split.test_users)
            base += std::abs(numeric_label(dataset.labels.at(u), config.task) - train_mean);
        result.baseline = base / static_cast<double>(split.test_users.size());
    }
    prov["metric"] = result.metric;
    prov["baseline"] = result.baseline;
    result.provenance = std::move(prov);
    return result;
}

// --- full matrix ---

const std::vector<PublishedValue>& published_values() {
    static const std::vector<PublishedValue> refs = {
        {TaskKind::Gender, DeviceConfig::Combined, Mode::Free, "cnn", 93.02},
        {TaskKind::Major, DeviceConfig::Combined, Mode::Fixed, "cnn", 87.80},
        {TaskKind::Style, DeviceConfig::Combined, Mode::Free, "linear_svm", 96.15},
        {TaskKind::Age, DeviceConfig::Phone, Mode::Free, "fc", 1.77},
        {TaskKind::Height, DeviceConfig::Phone, Mode::Fixed, "knn", 2.65},
    };
    return refs;
}

namespace {

const PublishedValue* find_published_value(TaskKind task, DeviceConfig device, Mode mode,
                                     const std::string& algo) {
    for (const auto& r : published_values())
        if (r.task == task && r.device == device && r.mode == mode && algo == r.algorithm)
            return &r;
    return nullptr;
}

std::string format_fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

}  // namespace

ResultTable full_matrix(const Dataset& dataset, const MatrixRunConfig& config) {
    struct CellJob {
        TaskKind task;
        DeviceConfig device;
        Mode mode;
        LearnerSpec model;
    };
    std::vector<CellJob> jobs;
    for (TaskKind task : config.tasks)
        for (DeviceConfig device : config.devices)
            for (Mode mode : config.modes)
                for (const LearnerSpec& model : config.models)
                    if (model.supports(task)) jobs.push_back({task, device, mode, model});

    ResultTable table;
    table.cells.resize(jobs.size());
    std::vector<nlohmann::json> cell_provenance(jobs.size());

    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            const CellJob& job = jobs[i];
            CellResult cell;
            cell.task = job.task;
            cell.device = job.device;
            cell.mode = job.mode;
            cell.algorithm = job.model.name();
            nlohmann::json runs = nlohmann::json::array();
            std::vector<double> metrics;
            try {
                for (std::uint64_t seed : config.seeds) {
                    ExperimentConfig ec;
                    ec.task = job.task;
                    ec.device_config = job.device;
                    ec.mode = job.mode;
                    ec.model = job.model;
                    ec.selector_k_grid = config.selector_k_grid;
                    ec.seed = seed;
                    ec.caps = config.caps;
                    ec.smote = config.smote;
                    ec.cv_folds = config.cv_folds;
                    ec.split_ratio = config.split_ratio;
                    ec.mi_bins = config.mi_bins;
                    ec.train = config.train;
                    ec.neural_lr_grid = config.neural_lr_grid;
                    ExperimentResult res = run_experiment(ec, dataset);
                    metrics.push_back(res.metric);
                    cell.baseline = res.baseline;
                    runs.push_back(std::move(res.provenance));
                }
                cell.metric = mean_of(metrics);
                cell.metric_std = metrics.size() > 1 ? stddev_pop(metrics) : 0.0;
            } catch (const std::exception& e) {
                cell.failed = true;
                cell.error = e.what();
            }
            table.cells[i] = std::move(cell);
            cell_provenance[i] = std::move(runs);
        }
    };

    const int requested =
        config.jobs > 0 ? config.jobs : static_cast<int>(std::thread::hardware_concurrency());
    const int n_threads = std::max(1, std::min<int>(requested, static_cast<int>(jobs.size())));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        for (int t = 0; t < n_threads; ++t) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }

    nlohmann::json cells = nlohmann::json::array();
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        nlohmann::json entry;
        entry["task"] = to_string(jobs[i].task);
        entry["device"] = to_string(jobs[i].device);
        entry["mode"] = to_string(jobs[i].mode);
        entry["algorithm"] = jobs[i].model.name();
        entry["failed"] = table.cells[i].failed;
        if (table.cells[i].failed) entry["error"] = table.cells[i].error;
        entry["runs"] = cell_provenance[i];
        cells.push_back(std::move(entry));
    }
    table.provenance = {{"cells", cells}};
    return table;
}

namespace {

// Markdown grid per task: one row per device x mode, one column per
// algorithm, row best in bold; mirrors the published table layout.
void render_task_md(std::ostream& out, TaskKind task, const std::vector<CellResult>& cells,
                    bool annotate_published) {
    std::vector<std::string> algos;
    for (const auto& c : cells)
        if (std::find(algos.begin(), algos.end(), c.algorithm) == algos.end())
            algos.push_back(c.algorithm);
    const bool classify = task_is_classification(task);

    out << "# " << to_string(task) << (classify ? " accuracy (%)" : " MAE") << "\n\n";
    out << "| Device | Setting |";
    for (const auto& a : algos) out << ' ' << a << " |";
    out << " baseline |\n";
    out << "|---|---|";
    for (std::size_t i = 0; i < algos.size(); ++i) out << "---|";
    out << "---|\n";

    std::vector<std::pair<DeviceConfig, Mode>> rows;
    for (const auto& c : cells) {
        const auto key = std::make_pair(c.device, c.mode);
        if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
    }
    for (const auto& [device, mode] : rows) {
        double best = classify ? -1.0 : std::numeric_limits<double>::infinity();
        for (const auto& c : cells) {
            if (c.device != device || c.mode != mode || c.failed) continue;
            best = classify ? std::max(best, c.metric) : std::min(best, c.metric);
        }
        out << "| " << to_string(device) << " | " << to_string(mode) << " |";
        double baseline = 0.0;
        for (const auto& a : algos) {
            const CellResult* cell = nullptr;
            for (const auto& c : cells)
                if (c.device == device && c.mode == mode && c.algorithm == a) cell = &c;
            if (!cell) {
                out << " - |";
                continue;
            }
            if (cell->failed) {
                out << " failed |";
                continue;
            }
            baseline = cell->baseline;
            const double shown = classify ? cell->metric * 100.0 : cell->metric;
            std::string text = format_fixed(shown, 2);
            if (cell->metric == best) text = "**" + text + "**";
            if (annotate_published) {
                if (const auto* ref = find_published_value(task, device, mode, a))
                    text += " (published " + format_fixed(ref->value, 2) + ")";
            }
            out << ' ' << text << " |";
        }
        const double shown_base = classify ? baseline * 100.0 : baseline;
        out << ' ' << format_fixed(shown_base, 2) << " |\n";
    }
    out << "\n";
}

void write_task_csv(std::ostream& out, const std::vector<CellResult>& cells) {
    out << "device,mode,algorithm,metric,metric_std,baseline,status,published_value\n";
    for (const auto& c : cells) {
        out << to_string(c.device) << ',' << to_string(c.mode) << ',' << c.algorithm << ',';
        if (c.failed) {
            out << ",,," << "failed,";
        } else {
            out << format_fixed(c.metric, 6) << ',' << format_fixed(c.metric_std, 6) << ','
                << format_fixed(c.baseline, 6) << ",ok,";
        }
        if (const auto* ref = find_published_value(c.task, c.device, c.mode, c.algorithm))
            out << format_fixed(ref->value, 2);
        out << '\n';
    }
}

}  // namespace

void write_results(const ResultTable& table, const MatrixRunConfig& config,
                   const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    for (TaskKind task : config.tasks) {
        std::vector<CellResult> cells;
        for (const auto& c : table.cells)
            if (c.task == task) cells.push_back(c);
        if (cells.empty()) continue;
        if (config.format != MatrixRunConfig::Format::Md) {
            std::ofstream csv(fs::path(out_dir) / (std::string(to_string(task)) + ".csv"));
            write_task_csv(csv, cells);
        }
        if (config.format != MatrixRunConfig::Format::Csv) {
            std::ofstream md(fs::path(out_dir) / (std::string(to_string(task)) + ".md"));
            render_task_md(md, task, cells, config.annotate_published);
        }
    }
    std::ofstream prov(fs::path(out_dir) / "provenance.json");
    prov << table.provenance.dump(2) << '\n';
}

void render_reports_from_csv(const std::string& out_dir) {
    namespace fs = std::filesystem;
    for (TaskKind task : {TaskKind::Gender, TaskKind::Major, TaskKind::Style, TaskKind::Age,
                          TaskKind::Height}) {
        const fs::path csv_path = fs::path(out_dir) / (std::string(to_string(task)) + ".csv");
        if (!fs::exists(csv_path)) continue;
        std::ifstream in(csv_path);
        std::string line;
        std::getline(in, line);  // header
        std::vector<CellResult> cells;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::vector<std::string> fields;
            std::stringstream ss(line);
            std::string field;
            while (std::getline(ss, field, ',')) fields.push_back(field);
            fields.resize(8);
            CellResult c;
            c.task = task;
            c.device = device_config_from_string(fields[0]);
            c.mode = mode_from_string(fields[1]);
            c.algorithm = fields[2];
            c.failed = fields[6] == "failed";
            if (!c.failed) {
                c.metric = std::stod(fields[3]);
                c.metric_std = std::stod(fields[4]);
                c.baseline = std::stod(fields[5]);
            }
            cells.push_back(std::move(c));
        }
        std::ofstream md(fs::path(out_dir) / (std::string(to_string(task)) + ".md"));
        render_task_md(md, task, cells, true);
    }
}

bool audit_provenance(const nlohmann::json& provenance, std::vector<std::string>* violations) {
    bool clean = true;
    if (!provenance.contains("cells")) return clean;
    for (const auto& cell : provenance.at("cells")) {
        for (const auto& run : cell.at("runs")) {
            std::set<std::string> test_users;
            for (const auto& u : run.at("test_users")) test_users.insert(u.get<std::string>());
            for (const auto& stage : run.at("fitted")) {
                for (const auto& comp : stage.at("components")) {
                    for (const auto& u : comp.at("fitted_on")) {
                        if (test_users.count(u.get<std::string>())) {
                            clean = false;
                            if (violations)
                                violations->push_back(
                                    cell.at("task").get<std::string>() + "/" +
                                    cell.at("algorithm").get<std::string>() + " stage " +
                                    stage.at("stage").get<std::string>() + " component " +
                                    comp.at("component").get<std::string>() + " leaks " +
                                    u.get<std::string>());
                        }
                    }
                }
            }
        }
    }
    return clean;
}

}  // namespace keydyn
