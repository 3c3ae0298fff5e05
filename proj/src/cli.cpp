#include "keydyn/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "keydyn/ingest.hpp"
#include "keydyn/protocol.hpp"
#include "keydyn/synth.hpp"

#include "CLI11.hpp"
#include "json.hpp"

namespace keydyn {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunConfig {
    std::string data_dir;
    std::string out_dir = "results";
    std::string format = "both";  // md | csv | both
    MatrixRunConfig matrix;
    GeneratorConfig synth;
};

std::vector<LearnerSpec> default_models() {
    using A = ml::Algorithm;
    std::vector<LearnerSpec> models;
    for (A a : {A::NaiveBayes, A::LinearSVM, A::DecisionTree, A::AdaBoost, A::MLP1, A::GBT, A::KNN})
        models.push_back(LearnerSpec::classical(a));
    models.push_back(LearnerSpec::neural(nn::ArchKind::FC));
    return models;
}

void reject_unknown(const json& j, const std::vector<std::string>& known,
                    const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw UsageError("unknown config key '" + key + "' in " + where);
    }
}

RunConfig load_config(const std::string& path) {
    RunConfig cfg;
    cfg.matrix.models = default_models();
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file " + path);
    json j;
    in >> j;
    reject_unknown(j, {"data_dir", "out_dir", "format", "tasks", "devices", "modes", "models",
                       "seeds", "caps", "selector_grid", "cv_folds", "split_ratio", "mi_bins",
                       "smote", "neural", "jobs", "published_refs", "synth"},
                   "config");
    if (j.contains("data_dir")) cfg.data_dir = j["data_dir"].get<std::string>();
    if (j.contains("out_dir")) cfg.out_dir = j["out_dir"].get<std::string>();
    if (j.contains("format")) {
        cfg.format = j["format"].get<std::string>();
        if (cfg.format == "md")
            cfg.matrix.format = MatrixRunConfig::Format::Md;
        else if (cfg.format == "csv")
            cfg.matrix.format = MatrixRunConfig::Format::Csv;
        else if (cfg.format == "both")
            cfg.matrix.format = MatrixRunConfig::Format::Both;
        else
            throw UsageError("format must be md, csv or both");
    }
    if (j.contains("tasks")) {
        cfg.matrix.tasks.clear();
        for (const auto& t : j["tasks"]) cfg.matrix.tasks.push_back(task_from_string(t));
    }
    if (j.contains("devices")) {
        cfg.matrix.devices.clear();
        for (const auto& d : j["devices"])
            cfg.matrix.devices.push_back(device_config_from_string(d));
    }
    if (j.contains("modes")) {
        cfg.matrix.modes.clear();
        for (const auto& m : j["modes"]) cfg.matrix.modes.push_back(mode_from_string(m));
    }
    if (j.contains("models")) {
        cfg.matrix.models.clear();
        for (const auto& m : j["models"])
            cfg.matrix.models.push_back(LearnerSpec::from_name(m.get<std::string>()));
    }
    if (j.contains("seeds")) cfg.matrix.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("caps")) {
        reject_unknown(j["caps"], {"unigraphs", "digraphs", "words", "frequency_floor"}, "caps");
        if (j["caps"].contains("unigraphs")) cfg.matrix.caps.max_unigraphs = j["caps"]["unigraphs"];
        if (j["caps"].contains("digraphs")) cfg.matrix.caps.max_digraphs = j["caps"]["digraphs"];
        if (j["caps"].contains("words")) cfg.matrix.caps.max_words = j["caps"]["words"];
        if (j["caps"].contains("frequency_floor"))
            cfg.matrix.caps.frequency_floor = j["caps"]["frequency_floor"];
    }
    if (j.contains("selector_grid"))
        cfg.matrix.selector_k_grid = j["selector_grid"].get<std::vector<int>>();
    if (j.contains("cv_folds")) cfg.matrix.cv_folds = j["cv_folds"].get<int>();
    if (j.contains("split_ratio")) cfg.matrix.split_ratio = j["split_ratio"].get<double>();
    if (j.contains("mi_bins")) cfg.matrix.mi_bins = j["mi_bins"].get<int>();
    if (j.contains("smote")) {
        reject_unknown(j["smote"], {"k_generate", "m_danger"}, "smote");
        if (j["smote"].contains("k_generate")) cfg.matrix.smote.k_generate = j["smote"]["k_generate"];
        if (j["smote"].contains("m_danger")) cfg.matrix.smote.m_danger = j["smote"]["m_danger"];
    }
    if (j.contains("neural")) {
        reject_unknown(j["neural"], {"epochs", "batch", "optimizer", "lr_grid", "strict_reshape"},
                       "neural");
        if (j["neural"].contains("epochs")) cfg.matrix.train.epochs = j["neural"]["epochs"];
        if (j["neural"].contains("batch")) cfg.matrix.train.batch_size = j["neural"]["batch"];
        if (j["neural"].contains("optimizer"))
            cfg.matrix.train.optimizer = j["neural"]["optimizer"].get<std::string>() == "sgd"
                                             ? nn::OptimizerKind::SGD
                                             : nn::OptimizerKind::Adam;
        if (j["neural"].contains("lr_grid"))
            cfg.matrix.neural_lr_grid = j["neural"]["lr_grid"].get<std::vector<double>>();
        if (j["neural"].contains("strict_reshape"))
            cfg.matrix.strict_reshape = j["neural"]["strict_reshape"].get<bool>();
    }
    if (j.contains("jobs")) cfg.matrix.jobs = j["jobs"].get<int>();
    if (j.contains("published_refs")) cfg.matrix.annotate_published = j["published_refs"].get<bool>();
    if (j.contains("synth")) {
        reject_unknown(j["synth"], {"users", "keystrokes", "signal", "seed", "effects"}, "synth");
        if (j["synth"].contains("users")) cfg.synth.n_users = j["synth"]["users"];
        if (j["synth"].contains("keystrokes"))
            cfg.synth.keystrokes_per_stream = j["synth"]["keystrokes"];
        if (j["synth"].contains("signal")) cfg.synth.signal_strength = j["synth"]["signal"];
        if (j["synth"].contains("seed")) cfg.synth.seed = j["synth"]["seed"];
        if (j["synth"].contains("effects")) {
            const auto& fx = j["synth"]["effects"];
            reject_unknown(fx,
                           {"style_a_flight", "style_b_flight", "female_hold", "noncs_flight",
                            "age_hold_per_year", "height_flight_per_inch"},
                           "effects");
            if (fx.contains("style_a_flight")) cfg.synth.effects.style_a_flight = fx["style_a_flight"];
            if (fx.contains("style_b_flight")) cfg.synth.effects.style_b_flight = fx["style_b_flight"];
            if (fx.contains("female_hold")) cfg.synth.effects.female_hold = fx["female_hold"];
            if (fx.contains("noncs_flight")) cfg.synth.effects.noncs_flight = fx["noncs_flight"];
            if (fx.contains("age_hold_per_year"))
                cfg.synth.effects.age_hold_per_year = fx["age_hold_per_year"];
            if (fx.contains("height_flight_per_inch"))
                cfg.synth.effects.height_flight_per_inch = fx["height_flight_per_inch"];
        }
    }
    return cfg;
}

void write_feature_csvs(const Dataset& dataset, DeviceConfig device_config, Mode mode,
                        const VocabCaps& caps, const std::string& out_dir) {
    std::vector<Device> devices;
    switch (device_config) {
        case DeviceConfig::Desktop: devices = {Device::Desktop}; break;
        case DeviceConfig::Phone: devices = {Device::Phone}; break;
        case DeviceConfig::Tablet: devices = {Device::Tablet}; break;
        case DeviceConfig::Combined:
            devices = {Device::Desktop, Device::Phone, Device::Tablet};
            break;
    }
    std::vector<std::string> users;
    for (const auto& [user, _] : dataset.labels) {
        bool complete = true;
        for (Device d : devices)
            if (!dataset.streams.count(StreamKey{user, d, mode})) complete = false;
        if (complete) users.push_back(user);
    }
    if (users.empty()) throw DataError("no user has all required streams");

    std::map<Device, FeatureVocabulary> vocabs;
    std::vector<std::string> headers;
    for (Device d : devices) {
        std::vector<std::span<const KeyEvent>> streams;
        for (const auto& u : users) {
            const auto& s = dataset.streams.at(StreamKey{u, d, mode});
            streams.emplace_back(s.data(), s.size());
        }
        vocabs.emplace(d, fit_vocabulary(streams, users, caps));
        for (const auto& desc : vocabs.at(d).descriptors) {
            std::string name = desc.name();
            if (devices.size() > 1) name = std::string(to_string(d)) + "|" + name;
            headers.push_back(name);
        }
    }

    fs::create_directories(out_dir);
    std::ofstream feat(fs::path(out_dir) / "features.csv");
    std::ofstream mask(fs::path(out_dir) / "mask.csv");
    feat << "user_id";
    mask << "user_id";
    for (const auto& h : headers) {
        feat << ',' << h;
        mask << ',' << h;
    }
    feat << '\n';
    mask << '\n';
    char buf[64];
    for (const auto& u : users) {
        feat << u;
        mask << u;
        for (Device d : devices) {
            const auto& stream = dataset.streams.at(StreamKey{u, d, mode});
            const FeatureVector fv = vectorize(stream, vocabs.at(d));
            for (std::size_t i = 0; i < fv.values.size(); ++i) {
                if (fv.missing_mask[i]) {
                    feat << ',';
                } else {
                    std::snprintf(buf, sizeof(buf), "%.9g", fv.values[i]);
                    feat << ',' << buf;
                }
                mask << ',' << int(fv.missing_mask[i]);
            }
        }
        feat << '\n';
        mask << '\n';
    }
}

int do_predict(const std::string& model_path, const std::string& features_path,
               const std::string& out_path) {
    std::ifstream min(model_path);
    if (!min) throw DataError("cannot open model file " + model_path);
    json wrapper;
    min >> wrapper;
    const TaskKind task = task_from_string(wrapper.at("task").get<std::string>());
    const bool neural = wrapper.at("family").get<std::string>() == "neural";

    std::ifstream fin(features_path);
    if (!fin) throw DataError("cannot open features file " + features_path);
    std::string line;
    std::getline(fin, line);  // header
    Matrix x;
    std::vector<std::string> users;
    while (std::getline(fin, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        users.push_back(field);
        std::vector<double> row;
        while (std::getline(ss, field, ',')) row.push_back(field.empty() ? 0.0 : std::stod(field));
        x.append_row(row);
    }

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!out_path.empty()) {
        file.open(out_path);
        out = &file;
    }
    *out << "user_id,prediction\n";
    if (task_is_classification(task)) {
        std::vector<int> pred;
        if (neural) {
            nn::NeuralModel model = nn::NeuralModel::from_json(wrapper.at("model"));
            pred = model.predict_class(x);
        } else {
            const ml::TrainedModel model = ml::TrainedModel::from_json(wrapper.at("model"));
            pred = model.predict_class(x);
        }
        for (std::size_t i = 0; i < users.size(); ++i)
            *out << users[i] << ',' << class_label_name(task, pred[i]) << '\n';
    } else {
        std::vector<double> pred;
        if (neural) {
            nn::NeuralModel model = nn::NeuralModel::from_json(wrapper.at("model"));
            pred = model.predict_value(x);
        } else {
            const ml::TrainedModel model = ml::TrainedModel::from_json(wrapper.at("model"));
            pred = model.predict_value(x);
        }
        char buf[64];
        for (std::size_t i = 0; i < users.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.6f", pred[i]);
            *out << users[i] << ',' << buf << '\n';
        }
    }
    return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
    CLI::App app{"keydyn - keystroke dynamics soft-biometrics toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    app.add_option("--config", config_path, "JSON run configuration")->envname("KEYDYN_CONFIG");

    std::string data_dir, out_dir, device = "desktop", mode = "free", task = "gender";
    std::string model = "linear_svm", model_path, features_path, pred_out;
    int users = 0, keys = 0, jobs = 0, n_seeds = 0;
    double signal = -1.0;
    std::uint64_t seed = 7;
    bool seed_given = false;

    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
    synth_cmd->add_option("--out", out_dir, "output directory")->required();
    synth_cmd->add_option("--users", users, "population size");
    synth_cmd->add_option("--keys", keys, "keystrokes per stream");
    synth_cmd->add_option("--signal", signal, "planted signal strength");
    synth_cmd->add_option("--seed", seed, "generator seed");

    auto* summary_cmd = app.add_subcommand("summary", "print dataset demographics");
    summary_cmd->add_option("--data-dir", data_dir, "dataset directory")
        ->envname("KEYDYN_DATA_DIR");

    auto* extract_cmd = app.add_subcommand("extract", "write feature matrices as CSV");
    extract_cmd->add_option("--data-dir", data_dir, "dataset directory")
        ->envname("KEYDYN_DATA_DIR");
    extract_cmd->add_option("--out", out_dir, "output directory");
    extract_cmd->add_option("--device", device, "desktop|phone|tablet|combined");
    extract_cmd->add_option("--mode", mode, "free|fixed");

    auto* train_cmd = app.add_subcommand("train", "run one experiment cell");
    train_cmd->add_option("--data-dir", data_dir, "dataset directory")
        ->envname("KEYDYN_DATA_DIR");
    train_cmd->add_option("--out", out_dir, "output directory");
    train_cmd->add_option("--task", task, "gender|major|style|age|height");
    train_cmd->add_option("--device", device, "desktop|phone|tablet|combined");
    train_cmd->add_option("--mode", mode, "free|fixed");
    train_cmd->add_option("--model", model, "algorithm name");
    auto* train_seed = train_cmd->add_option("--seed", seed, "split seed");

    auto* matrix_cmd = app.add_subcommand("matrix", "run the full experiment matrix");
    matrix_cmd->add_option("--data-dir", data_dir, "dataset directory")
        ->envname("KEYDYN_DATA_DIR");
    matrix_cmd->add_option("--out", out_dir, "output directory");
    matrix_cmd->add_option("--jobs", jobs, "parallel cells");
    matrix_cmd->add_option("--seeds", n_seeds, "number of seeded splits per cell");
    auto* matrix_seed = matrix_cmd->add_option("--seed", seed, "base seed");

    auto* report_cmd = app.add_subcommand("report", "re-render markdown from result CSVs");
    report_cmd->add_option("--out", out_dir, "results directory");

    auto* predict_cmd = app.add_subcommand("predict", "predict from a saved model");
    predict_cmd->add_option("--model", model_path, "model JSON")->required();
    predict_cmd->add_option("--features", features_path, "feature CSV")->required();
    predict_cmd->add_option("--out", pred_out, "prediction CSV (default stdout)");

    app.add_subcommand("selftest", "gradient checks and oracle suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 1;
    }
    seed_given = train_seed->count() > 0 || matrix_seed->count() > 0;

    try {
        RunConfig cfg = load_config(config_path);
        if (!data_dir.empty()) cfg.data_dir = data_dir;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        if (jobs > 0) cfg.matrix.jobs = jobs;
        if (seed_given) cfg.matrix.seeds = {seed};
        if (n_seeds > 0) {
            const std::uint64_t base = cfg.matrix.seeds.empty() ? 7 : cfg.matrix.seeds[0];
            cfg.matrix.seeds.clear();
            for (int i = 0; i < n_seeds; ++i) cfg.matrix.seeds.push_back(base + i);
        }

        if (app.got_subcommand(synth_cmd)) {
            if (users > 0) cfg.synth.n_users = users;
            if (keys > 0) cfg.synth.keystrokes_per_stream = keys;
            if (signal >= 0.0) cfg.synth.signal_strength = signal;
            if (synth_cmd->count("--seed")) cfg.synth.seed = seed;
            write_synth_dataset(cfg.synth, cfg.out_dir);
            std::cout << "wrote " << cfg.out_dir << "/events.csv and labels.csv ("
                      << cfg.synth.n_users << " users)\n";
            return 0;
        }
        if (app.got_subcommand(summary_cmd)) {
            if (cfg.data_dir.empty()) throw UsageError("summary requires --data-dir");
            BuildReport report;
            const Dataset ds = load_dataset(cfg.data_dir, &report);
            const Manifest m = dataset_summary(ds);
            print_manifest(m, std::cout);
            if (report.dropped_events || report.dropped_users)
                std::cout << "dropped events: " << report.dropped_events
                          << ", unlabeled users dropped: " << report.dropped_users << "\n";
            return 0;
        }
        if (app.got_subcommand(extract_cmd)) {
            if (cfg.data_dir.empty()) throw UsageError("extract requires --data-dir");
            const Dataset ds = load_dataset(cfg.data_dir);
            write_feature_csvs(ds, device_config_from_string(device), mode_from_string(mode),
                               cfg.matrix.caps, cfg.out_dir);
            std::cout << "wrote " << cfg.out_dir << "/features.csv and mask.csv\n";
            return 0;
        }
        if (app.got_subcommand(train_cmd)) {
            if (cfg.data_dir.empty()) throw UsageError("train requires --data-dir");
            const Dataset ds = load_dataset(cfg.data_dir);
            ExperimentConfig ec;
            ec.task = task_from_string(task);
            ec.device_config = device_config_from_string(device);
            ec.mode = mode_from_string(mode);
            ec.model = LearnerSpec::from_name(model);
            ec.selector_k_grid = cfg.matrix.selector_k_grid;
            ec.seed = cfg.matrix.seeds.empty() ? 7 : cfg.matrix.seeds[0];
            ec.caps = cfg.matrix.caps;
            ec.smote = cfg.matrix.smote;
            ec.cv_folds = cfg.matrix.cv_folds;
            ec.split_ratio = cfg.matrix.split_ratio;
            ec.mi_bins = cfg.matrix.mi_bins;
            ec.train = cfg.matrix.train;
            ec.neural_lr_grid = cfg.matrix.neural_lr_grid;
            ec.strict_reshape = cfg.matrix.strict_reshape;
            ec.keep_artifacts = true;
            const ExperimentResult res = run_experiment(ec, ds);

            fs::create_directories(cfg.out_dir);
            {
                std::ofstream prov(fs::path(cfg.out_dir) / "provenance.json");
                prov << res.provenance.dump(2) << '\n';
            }
            {
                std::ofstream pp(fs::path(cfg.out_dir) / "preprocess.json");
                pp << res.preprocess_json.dump(2) << '\n';
            }
            if (!res.epoch_losses.empty())
                nn::write_loss_csv(res.epoch_losses,
                                   (fs::path(cfg.out_dir) / "loss.csv").string());
            {
                json wrapper;
                wrapper["task"] = task;
                wrapper["algorithm"] = ec.model.name();
                wrapper["family"] =
                    ec.model.family == LearnerSpec::Family::Neural ? "neural" : "classical";
                wrapper["model"] = res.model_json;
                std::ofstream mf(fs::path(cfg.out_dir) / "model.json");
                mf << wrapper.dump(2) << '\n';
            }
            {
                std::ofstream feat(fs::path(cfg.out_dir) / "test_features.csv");
                feat << "user_id";
                const auto names =
                    res.preprocess_json.at("selected_names").get<std::vector<std::string>>();
                for (std::size_t c = 0; c < res.test_matrix.cols; ++c) feat << ',' << names[c];
                feat << '\n';
                char buf[64];
                for (std::size_t r = 0; r < res.test_matrix.rows; ++r) {
                    feat << res.test_user_ids[r];
                    for (std::size_t c = 0; c < res.test_matrix.cols; ++c) {
                        std::snprintf(buf, sizeof(buf), "%.17g", res.test_matrix.at(r, c));
                        feat << ',' << buf;
                    }
                    feat << '\n';
                }
            }
            {
                std::ofstream preds(fs::path(cfg.out_dir) / "test_predictions.csv");
                preds << "user_id,prediction\n";
                for (std::size_t r = 0; r < res.test_user_ids.size(); ++r) {
                    preds << res.test_user_ids[r] << ',';
                    if (task_is_classification(ec.task))
                        preds << class_label_name(ec.task, res.test_pred_class[r]);
                    else {
                        char buf[64];
                        std::snprintf(buf, sizeof(buf), "%.6f", res.test_pred_value[r]);
                        preds << buf;
                    }
                    preds << '\n';
                }
            }
            const bool classify = task_is_classification(ec.task);
            std::cout << to_string(ec.task) << " " << device << " " << mode << " " << model << ": "
                      << (classify ? "accuracy " : "mae ") << res.metric
                      << " (baseline " << res.baseline << ")\n";
            return 0;
        }
        if (app.got_subcommand(matrix_cmd)) {
            if (cfg.data_dir.empty()) throw UsageError("matrix requires --data-dir");
            const Dataset ds = load_dataset(cfg.data_dir);
            const ResultTable table = full_matrix(ds, cfg.matrix);
            write_results(table, cfg.matrix, cfg.out_dir);
            std::size_t failed = 0;
            for (const auto& c : table.cells)
                if (c.failed) ++failed;
            std::cout << "matrix: " << table.cells.size() << " cells, " << failed
                      << " failed; results in " << cfg.out_dir << "\n";
            return failed == 0 ? 0 : 3;
        }
        if (app.got_subcommand(report_cmd)) {
            render_reports_from_csv(cfg.out_dir);
            std::cout << "re-rendered markdown in " << cfg.out_dir << "\n";
            return 0;
        }
        if (app.got_subcommand(predict_cmd)) {
            return do_predict(model_path, features_path, pred_out);
        }
        if (app.got_subcommand("selftest")) {
            return run_selftest(std::cout) ? 0 : 3;
        }
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}  // namespace keydyn
