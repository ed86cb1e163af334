#include "ehrisk/cli.hpp"

#include "ehrisk/checkpoint.hpp"
#include "ehrisk/cohort_io.hpp"
#include "ehrisk/config.hpp"
#include "ehrisk/errors.hpp"
#include "ehrisk/eval.hpp"
#include "ehrisk/explain.hpp"
#include "ehrisk/gradcheck.hpp"
#include "ehrisk/service.hpp"
#include "ehrisk/synth.hpp"
#include "ehrisk/train.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace ehrisk {

using nlohmann::json;

namespace {

struct GenArgs {
    std::string config;
    std::string out;
};

struct TrainArgs {
    std::string cohort;
    std::string out;
    std::uint64_t seed = 0;
    std::size_t epochs = TrainConfig{}.epochs;
    double lr = TrainConfig{}.learning_rate;
    std::size_t batch = TrainConfig{}.batch_size;
    bool json = false;
};

struct EvalArgs {
    std::string cohort;
    std::string ckpt;
    std::string ablation = "all";
    double threshold = 0.5;
    std::string csv;
    bool json = false;
};

struct ExplainArgs {
    std::string ckpt;
    std::string cohort;
    std::string patient;
    std::string target = "diabetes";
    std::string mode = "auto";
    std::string ranking = "occlusion";
    std::size_t permutations = ExplainOptions{}.n_permutations;
    std::uint64_t seed = 0;
    bool json = false;
};

struct GradcheckArgs {
    std::uint64_t seed = 0;
    double tolerance = 1e-4;
};

struct ServeArgs {
    std::string config;
};

void write_text_file(const std::filesystem::path &path, const std::string &text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f || !(f << text) || !f.flush()) {
        throw StorageError("cannot write " + path.string());
    }
}

int run_gen(const GenArgs &a, std::ostream &out) {
    CohortConfig config;
    if (a.config != "default") {
        config = cohort_config_from(KeyValues::read(a.config));
    }
    config.validate();
    const Cohort cohort = generate_cohort(config);
    write_cohort(cohort, a.out);
    std::array<std::size_t, kDiseaseCount> positives{};
    for (const PatientRecord &r : cohort.records) {
        for (const Disease d : kDiseases) {
            positives[static_cast<std::size_t>(d)] += r.labels->has(d) ? 1 : 0;
        }
    }
    out << "wrote " << cohort.records.size() << " patients to " << a.out << "\n";
    for (const Disease d : kDiseases) {
        const double rate = 100.0 * static_cast<double>(positives[static_cast<std::size_t>(d)]) / static_cast<double>(cohort.records.size());
        out << "  " << std::left << std::setw(14) << disease_display_name(d) << std::right << std::fixed << std::setprecision(2) << rate << "%\n";
    }
    return kExitOk;
}

int run_train(const TrainArgs &a, std::ostream &out) {
    const Cohort cohort = read_cohort(a.cohort);
    TrainConfig config;
    config.epochs = a.epochs;
    config.learning_rate = a.lr;
    config.batch_size = a.batch;
    if (config.epochs == 0 || config.batch_size == 0 || !(config.learning_rate > 0.0)) {
        throw ConfigError("epochs, batch and lr must be positive");
    }
    const auto started = std::chrono::steady_clock::now();
    const TrainResult result = train(cohort.records, config, a.seed);
    save_checkpoint(result.model, a.out);
    const std::string digest = checkpoint_digest(a.out);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    if (a.json) {
        json epochs = json::array();
        for (const EpochLog &e : result.log.epochs) {
            epochs.push_back(json{ { "epoch", e.epoch }, { "train_loss", e.train_loss }, { "validation_loss", e.validation_loss ? json(*e.validation_loss) : json(nullptr) } });
        }
        out << json{ { "checkpoint", a.out }, { "model_version", digest }, { "train_size", result.log.train_size }, { "validation_size", result.log.validation_size }, { "epochs", epochs } }.dump(2) << "\n";
        return kExitOk;
    }
    out << "trained on " << result.log.train_size << " records (" << result.log.validation_size << " held out)\n";
    for (const EpochLog &e : result.log.epochs) {
        out << "  epoch " << e.epoch << "  train loss " << std::fixed << std::setprecision(4) << e.train_loss;
        if (e.validation_loss) {
            out << "  validation loss " << *e.validation_loss;
        }
        out << "\n";
    }
    out << "saved " << a.out << " (sha256 " << digest << ") in " << std::setprecision(1) << seconds << " s\n";
    return kExitOk;
}

json metrics_json(const BinaryMetrics &m) {
    return json{ { "n_positive", m.n_positive }, { "precision", m.precision }, { "recall", m.recall }, { "f1", m.f1 }, { "threshold", m.threshold }, { "zero_division", m.zero_division } };
}

int run_eval(const EvalArgs &a, std::ostream &out) {
    std::vector<Ablation> ablations;
    if (a.ablation == "all") {
        ablations.assign(kAblations.begin(), kAblations.end());
    } else if (const auto one = parse_ablation(a.ablation)) {
        ablations.push_back(*one);
    } else {
        throw CLI::ValidationError("--ablation", "must be fused, text_only, labs_only or all");
    }
    if (!(a.threshold > 0.0 && a.threshold < 1.0)) {
        throw CLI::ValidationError("--threshold", "must be in (0, 1)");
    }
    const Model model = load_checkpoint(a.ckpt);
    const Cohort cohort = read_cohort(a.cohort);
    std::vector<MetricsReport> reports;
    for (const Ablation ab : ablations) {
        reports.push_back(evaluate(model, cohort.records, a.threshold, ab, "eval"));
    }
    if (!a.csv.empty()) {
        write_text_file(a.csv, report_csv(reports));
    }
    if (a.json) {
        json doc = json::array();
        for (const MetricsReport &r : reports) {
            json diseases = json::object();
            for (const Disease d : kDiseases) {
                diseases[std::string(disease_name(d))] = metrics_json(r.diseases[static_cast<std::size_t>(d)]);
            }
            json horizons = json::object();
            for (std::size_t k = 0; k < kHorizonCount; ++k) {
                horizons[std::to_string(kHorizonDays[k])] = metrics_json(r.horizons[k]);
            }
            doc.push_back(json{ { "ablation", ablation_name(r.ablation) }, { "n_records", r.n_records }, { "diseases", diseases }, { "onset", horizons } });
        }
        out << doc.dump(2) << "\n";
    } else {
        out << report_table(reports);
    }
    return kExitOk;
}

int run_explain(const ExplainArgs &a, std::ostream &out) {
    const auto target = parse_target(a.target);
    if (!target) {
        throw CLI::ValidationError("--target", "unknown target '" + a.target + "'");
    }
    const auto mode = parse_mode(a.mode);
    if (!mode) {
        throw CLI::ValidationError("--mode", "must be exact, sampled or auto");
    }
    const auto ranking = parse_ranking(a.ranking);
    if (!ranking) {
        throw CLI::ValidationError("--ranking", "must be occlusion or attention");
    }
    const Model model = load_checkpoint(a.ckpt);
    std::optional<PatientRecord> record;
    read_cohort_stream(a.cohort, [&](PatientRecord &&r) {
        if (r.patient_id == a.patient) {
            record = std::move(r);
        }
    });
    if (!record) {
        throw NotFoundError("patient " + a.patient + " is not in " + a.cohort);
    }
    ExplainOptions options;
    options.mode = *mode;
    options.ranking = *ranking;
    options.n_permutations = a.permutations;
    options.seed = a.seed;
    const Explanation e = explain_record(model, *record, *target, options);
    if (a.json) {
        out << to_json(e).dump(2) << "\n";
        return kExitOk;
    }
    double sum = 0.0;
    for (const Attribution &at : e.attributions) {
        sum += at.phi;
    }
    out << "patient " << record->patient_id << ", target " << target_name(e.target) << ", " << mode_name(e.mode) << " Shapley over " << e.attributions.size() << " groups\n";
    out << std::fixed << std::setprecision(6);
    out << "  prediction " << e.prediction << "  baseline " << e.baseline_value << "  sum(phi) " << sum << "\n";
    for (const Attribution &at : e.attributions) {
        out << "  " << std::showpos << at.phi << std::noshowpos;
        if (at.standard_error && std::isfinite(*at.standard_error)) {
            out << " +/- " << *at.standard_error;
        }
        out << "  " << at.group.name << " (" << group_kind_name(at.group.kind) << ")\n";
    }
    return kExitOk;
}

int run_gradcheck(const GradcheckArgs &a, std::ostream &out) {
    const auto started = std::chrono::steady_clock::now();
    const GradCheckFixture fixture = tiny_gradcheck_fixture(a.seed);
    GradCheckOptions options;
    options.seed = a.seed;
    const GradReport report = grad_check(fixture.model, fixture.record, a.tolerance, options);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    for (const TensorGradCheck &t : report.tensors) {
        out << "  " << std::left << std::setw(12) << t.name << std::right << std::setw(4) << t.coordinates << " coords  max rel err " << std::scientific << std::setprecision(2) << t.max_relative_error << (t.passed ? "" : "  FAIL") << "\n";
    }
    out << (report.passed() ? "gradient check passed" : "gradient check FAILED") << ": max relative error " << std::scientific << std::setprecision(2) << report.max_relative_error << " (tolerance " << a.tolerance << ") in " << std::fixed << std::setprecision(2) << seconds << " s\n";
    if (!report.passed()) {
        throw StateError("gradient check failed for: " + [&] {
            std::string names;
            for (const std::string &n : report.flagged()) {
                names += (names.empty() ? "" : ", ") + n;
            }
            return names;
        }());
    }
    return kExitOk;
}

int run_serve(const ServeArgs &a) {
    serve_forever(load_service_config(a.config));
    return kExitOk;
}

}  // namespace

int dispatch(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{ "Chronic-disease risk prediction from clinical notes and lab panels", "ehrisk" };
    app.require_subcommand(1);

    GenArgs gen;
    auto *gen_cmd = app.add_subcommand("gen", "Generate a synthetic labeled cohort");
    gen_cmd->add_option("--config", gen.config, "Generator settings file, or 'default'")->required();
    gen_cmd->add_option("--out", gen.out, "Cohort file to write (JSON lines)")->required();

    TrainArgs tr;
    auto *train_cmd = app.add_subcommand("train", "Train a model on a cohort and save a checkpoint");
    train_cmd->add_option("--cohort", tr.cohort, "Cohort file")->required();
    train_cmd->add_option("--out", tr.out, "Checkpoint to write")->required();
    train_cmd->add_option("--seed", tr.seed, "Seed for initialization, split and shuffling")->required();
    train_cmd->add_option("--epochs", tr.epochs, "Passes over the training split")->capture_default_str();
    train_cmd->add_option("--lr", tr.lr, "Adam learning rate")->capture_default_str();
    train_cmd->add_option("--batch", tr.batch, "Minibatch size")->capture_default_str();
    train_cmd->add_flag("--json", tr.json, "Print the training log as JSON");

    EvalArgs ev;
    auto *eval_cmd = app.add_subcommand("eval", "Report precision, recall and F1 on a labeled cohort");
    eval_cmd->add_option("--cohort", ev.cohort, "Cohort file")->required();
    eval_cmd->add_option("--ckpt", ev.ckpt, "Checkpoint")->required();
    eval_cmd->add_option("--ablation", ev.ablation, "fused, text_only, labs_only or all")->capture_default_str();
    eval_cmd->add_option("--threshold", ev.threshold, "Decision threshold")->capture_default_str();
    eval_cmd->add_option("--csv", ev.csv, "Also write metrics as CSV to this file");
    eval_cmd->add_flag("--json", ev.json, "Print metrics as JSON instead of the table");

    ExplainArgs ex;
    auto *explain_cmd = app.add_subcommand("explain", "Shapley attributions for one patient");
    explain_cmd->add_option("--ckpt", ex.ckpt, "Checkpoint")->required();
    explain_cmd->add_option("--cohort", ex.cohort, "Cohort file holding the patient")->required();
    explain_cmd->add_option("--patient", ex.patient, "Patient id")->required();
    explain_cmd->add_option("--target", ex.target, "diabetes, heart, hypertension or horizon_90..horizon_360")->capture_default_str();
    explain_cmd->add_option("--mode", ex.mode, "exact, sampled or auto")->capture_default_str();
    explain_cmd->add_option("--ranking", ex.ranking, "How note words get individual groups: occlusion or attention")->capture_default_str();
    explain_cmd->add_option("--permutations", ex.permutations, "Permutations in sampled mode")->capture_default_str();
    explain_cmd->add_option("--seed", ex.seed, "Seed for sampled mode")->capture_default_str();
    explain_cmd->add_flag("--json", ex.json, "Print the explanation as JSON");

    GradcheckArgs gc;
    auto *gradcheck_cmd = app.add_subcommand("gradcheck", "Check backpropagation against finite differences on a tiny model");
    gradcheck_cmd->add_option("--seed", gc.seed, "Fixture seed")->required();
    gradcheck_cmd->add_option("--tolerance", gc.tolerance, "Maximum relative error")->capture_default_str();

    ServeArgs sv;
    auto *serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
    serve_cmd->add_option("--config", sv.config, "Service settings file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp &) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError &e) {
        err << "error: " << e.what() << "\n";
        const CLI::App *sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        return kExitUsage;
    }

    try {
        if (gen_cmd->parsed()) {
            return run_gen(gen, out);
        }
        if (train_cmd->parsed()) {
            return run_train(tr, out);
        }
        if (eval_cmd->parsed()) {
            return run_eval(ev, out);
        }
        if (explain_cmd->parsed()) {
            return run_explain(ex, out);
        }
        if (gradcheck_cmd->parsed()) {
            return run_gradcheck(gc, out);
        }
        if (serve_cmd->parsed()) {
            return run_serve(sv);
        }
    } catch (const CLI::ValidationError &e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const StorageError &e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const ParseError &e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const VersionError &e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const InvalidInputError &e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const ConfigError &e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const NotFoundError &e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    err << "error: no command given\n" << app.help();
    return kExitUsage;
}

}  // namespace ehrisk
