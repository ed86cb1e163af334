#include "ehrisk/service.hpp"

#include "ehrisk/checkpoint.hpp"
#include "ehrisk/errors.hpp"
#include "ehrisk/explain.hpp"
#include "ehrisk/lab_catalog.hpp"

#include "httplib.h"
#include "json.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <csignal>
#include <iostream>

namespace ehrisk {

using nlohmann::json;

namespace {

constexpr std::string_view kJson = "application/json";
constexpr std::size_t kMaxPageSize = 500;

void reply(httplib::Response &res, int status, const json &body) {
    res.status = status;
    res.set_content(body.dump(), std::string(kJson));
}

void fail(httplib::Response &res, int status, const std::string &message) {
    reply(res, status, json{ { "error", message } });
}

std::optional<json> parse_body(const httplib::Request &req, httplib::Response &res) {
    try {
        return json::parse(req.body);
    } catch (const json::exception &) {
        fail(res, 400, "request body is not valid JSON");
        return std::nullopt;
    }
}

std::optional<std::size_t> parse_size(const std::string &text) {
    std::size_t v = 0;
    const auto *end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (text.empty() || ec != std::errc{} || ptr != end) {
        return std::nullopt;
    }
    return v;
}

std::optional<double> parse_probability(const std::string &text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size() || !(v >= 0.0 && v <= 1.0)) {
            return std::nullopt;
        }
        return v;
    } catch (const std::exception &) {
        return std::nullopt;
    }
}

std::optional<bool> parse_flag(const std::string &text) {
    if (text == "true" || text == "1") {
        return true;
    }
    if (text == "false" || text == "0") {
        return false;
    }
    return std::nullopt;
}

json job_to_json(const PredictionJob &job) {
    json j{ { "job_id", job.job_id }, { "patient_id", job.patient_id }, { "state", job_state_name(job.state) }, { "explain", job.with_explanation }, { "submitted_at", format_timestamp(job.submitted_at) } };
    j["finished_at"] = job.finished_at ? json(format_timestamp(*job.finished_at)) : json(nullptr);
    j["result"] = job.result ? json(*job.result) : json(nullptr);
    j["error"] = job.error ? json(*job.error) : json(nullptr);
    return j;
}

bool has_input(const PatientRecord &record) {
    const bool note = std::any_of(record.note.begin(), record.note.end(), [](unsigned char c) { return !std::isspace(c); });
    return note || record.labs.measured_count() > 0;
}

}  // namespace

Service::Service(ServiceConfig config, Storage &store, Clock clock) :
    config_(std::move(config)),
    store_(store),
    clock_(std::move(clock)),
    server_(std::make_unique<httplib::Server>()) {
    config_.validate();
    std::string ignored;
    try {
        current_model(ignored);
    } catch (const Error &e) {
        std::cerr << "warning: " << e.what() << "\n";
    }
    install_routes();
    queue_ = std::make_unique<JobQueue>(config_.queue_depth, config_.workers, [this](const PredictionJob &job) { return run_job(job); });
}

Service::~Service() {
    stop();
    queue_.reset();
}

std::optional<std::string> Service::model_version() const {
    std::lock_guard lock(model_mutex_);
    if (!model_) {
        return std::nullopt;
    }
    return model_version_;
}

std::shared_ptr<const Model> Service::current_model(std::string &version) {
    std::lock_guard lock(model_mutex_);
    if (!model_) {
        if (!std::filesystem::exists(config_.checkpoint)) {
            throw StateError("model checkpoint missing: " + config_.checkpoint.string());
        }
        try {
            auto model = std::make_shared<const Model>(load_checkpoint(config_.checkpoint));
            model_version_ = checkpoint_digest(config_.checkpoint);
            model_ = std::move(model);
        } catch (const Error &e) {
            throw StateError("model checkpoint unusable: " + std::string(e.what()));
        }
    }
    version = model_version_;
    return model_;
}

std::string Service::run_job(const PredictionJob &job) {
    std::string version;
    const auto model = current_model(version);
    const VersionedPatient patient = store_.get_patient(job.patient_id);
    const Prediction prediction = predict(*model, patient.record);

    StoredPrediction stored;
    stored.prediction_id = random_hex(16);
    stored.patient_id = job.patient_id;
    stored.created_at = clock_();
    stored.model_version = version;
    stored.risks = prediction.risks;
    stored.horizons = prediction.horizons;
    if (job.with_explanation) {
        ExplainOptions options;
        options.n_permutations = config_.explain_permutations;
        stored.explanation = explain_record(*model, patient.record, ExplainTarget::diabetes, options);
    }
    return store_.put_prediction(std::move(stored)).prediction_id;
}

bool Service::authorized(const std::string &header) {
    constexpr std::string_view kBearer = "Bearer ";
    if (header.size() <= kBearer.size() || header.compare(0, kBearer.size(), kBearer) != 0) {
        return false;
    }
    const std::string token = header.substr(kBearer.size());
    std::lock_guard lock(session_mutex_);
    const auto it = sessions_.find(token);
    if (it == sessions_.end()) {
        return false;
    }
    if (clock_() >= it->second.expires_at) {
        sessions_.erase(it);
        return false;
    }
    return true;
}

void Service::install_routes() {
    httplib::Server &srv = *server_;

    srv.set_pre_routing_handler([this](const httplib::Request &req, httplib::Response &res) {
        if (req.path == "/api/v1/login" || authorized(req.get_header_value("Authorization"))) {
            return httplib::Server::HandlerResponse::Unhandled;
        }
        fail(res, 401, "missing or expired session token");
        return httplib::Server::HandlerResponse::Handled;
    });

    srv.set_exception_handler([](const httplib::Request &, httplib::Response &res, std::exception_ptr ep) {
        try {
            std::rethrow_exception(ep);
        } catch (const NotFoundError &e) {
            fail(res, 404, e.what());
        } catch (const InvalidInputError &e) {
            fail(res, 422, e.what());
        } catch (const StorageError &e) {
            fail(res, 500, std::string("storage failure: ") + e.what());
        } catch (const std::exception &e) {
            fail(res, 500, e.what());
        } catch (...) {
            fail(res, 500, "internal error");
        }
    });

    srv.Post("/api/v1/login", [this](const httplib::Request &req, httplib::Response &res) {
        const auto body = parse_body(req, res);
        if (!body) {
            return;
        }
        if (!body->is_object() || !body->contains("user") || !body->contains("pass") || !(*body)["user"].is_string() || !(*body)["pass"].is_string()) {
            fail(res, 400, "login needs string fields user and pass");
            return;
        }
        if ((*body)["user"].get<std::string>() != config_.user || (*body)["pass"].get<std::string>() != config_.pass) {
            fail(res, 401, "invalid credentials");
            return;
        }
        const TimestampMs now = clock_();
        const TimestampMs expires = now + static_cast<TimestampMs>(config_.session_ttl_seconds) * 1000;
        const std::string token = random_hex(32);
        {
            std::lock_guard lock(session_mutex_);
            std::erase_if(sessions_, [now](const auto &entry) { return entry.second.expires_at <= now; });
            sessions_[token] = Session{ config_.user, expires };
        }
        reply(res, 200, json{ { "token", token }, { "expires_at", format_timestamp(expires) } });
    });

    srv.Get("/api/v1/healthz", [this](const httplib::Request &, httplib::Response &res) {
        const auto version = model_version();
        reply(res, 200, json{ { "status", version ? "ok" : "degraded" }, { "model_version", version ? json(*version) : json(nullptr) } });
    });

    srv.Get("/api/v1/patients", [this](const httplib::Request &req, httplib::Response &res) {
        PatientQuery query;
        if (req.has_param("limit")) {
            const auto v = parse_size(req.get_param_value("limit"));
            if (!v || *v == 0 || *v > kMaxPageSize) {
                fail(res, 400, "limit must be an integer in 1.." + std::to_string(kMaxPageSize));
                return;
            }
            query.limit = *v;
        }
        if (req.has_param("offset")) {
            const auto v = parse_size(req.get_param_value("offset"));
            if (!v) {
                fail(res, 400, "offset must be a non-negative integer");
                return;
            }
            query.offset = *v;
        }
        if (req.has_param("alert")) {
            const auto v = parse_flag(req.get_param_value("alert"));
            if (!v) {
                fail(res, 400, "alert must be true or false");
                return;
            }
            query.alert = *v;
        }
        const PatientPage page = store_.list_patients(query);
        json items = json::array();
        for (const PatientSummary &s : page.items) {
            items.push_back(json{ { "patient_id", s.patient_id }, { "version", s.version }, { "alert", s.alert }, { "latest_risks", s.latest_risks ? risks_to_json(*s.latest_risks) : json(nullptr) } });
        }
        reply(res, 200, json{ { "items", items }, { "total", page.total }, { "limit", query.limit }, { "offset", query.offset } });
    });

    srv.Get("/api/v1/patients/:id", [this](const httplib::Request &req, httplib::Response &res) {
        const VersionedPatient patient = store_.get_patient(req.path_params.at("id"));
        json body = patient.record;
        body["version"] = patient.version;
        reply(res, 200, body);
    });

    srv.Put("/api/v1/patients/:id", [this](const httplib::Request &req, httplib::Response &res) {
        const std::string id = req.path_params.at("id");
        auto body = parse_body(req, res);
        if (!body) {
            return;
        }
        if (!body->is_object()) {
            fail(res, 422, "patient body must be an object");
            return;
        }
        if (!body->contains("patient_id")) {
            (*body)["patient_id"] = id;
        }
        PatientRecord record;
        try {
            record = body->get<PatientRecord>();
        } catch (const json::exception &e) {
            fail(res, 422, std::string("malformed patient record: ") + e.what());
            return;
        }
        if (record.patient_id != id) {
            fail(res, 422, "patient_id in body does not match the path");
            return;
        }
        validate(record);
        const std::uint64_t version = store_.put_patient(record);
        reply(res, 200, json{ { "patient_id", id }, { "version", version } });
    });

    srv.Post("/api/v1/patients/:id/labs", [this](const httplib::Request &req, httplib::Response &res) {
        const std::string id = req.path_params.at("id");
        const auto body = parse_body(req, res);
        if (!body) {
            return;
        }
        if (!body->is_object() || body->empty()) {
            fail(res, 422, "labs body must be a non-empty object of analyte -> value");
            return;
        }
        json bad = json::array();
        std::vector<std::pair<std::size_t, double>> updates;
        for (const auto &[name, value] : body->items()) {
            const auto index = analyte_index(name);
            if (!index) {
                bad.push_back(json{ { "field", name }, { "reason", "unknown analyte" } });
            } else if (!value.is_number() || !std::isfinite(value.get<double>())) {
                bad.push_back(json{ { "field", name }, { "reason", "value must be a finite number" } });
            } else {
                updates.emplace_back(*index, value.get<double>());
            }
        }
        if (!bad.empty()) {
            reply(res, 422, json{ { "error", "invalid lab fields" }, { "fields", bad } });
            return;
        }
        VersionedPatient patient = store_.get_patient(id);
        for (const auto &[index, value] : updates) {
            patient.record.labs.set(index, value);
        }
        const std::uint64_t version = store_.put_patient(patient.record);
        reply(res, 200, json{ { "patient_id", id }, { "version", version } });
    });

    srv.Post("/api/v1/patients/:id/predict", [this](const httplib::Request &req, httplib::Response &res) {
        const std::string id = req.path_params.at("id");
        bool explain = false;
        if (req.has_param("explain")) {
            const auto v = parse_flag(req.get_param_value("explain"));
            if (!v) {
                fail(res, 400, "explain must be true or false");
                return;
            }
            explain = *v;
        }
        const VersionedPatient patient = store_.get_patient(id);
        if (!has_input(patient.record)) {
            fail(res, 422, "patient " + id + " has neither a note nor lab results");
            return;
        }
        const auto job_id = queue_->submit(id, explain);
        if (!job_id) {
            res.set_header("Retry-After", "1");
            fail(res, 503, "prediction queue is full");
            return;
        }
        reply(res, 202, json{ { "job_id", *job_id }, { "state", "pending" } });
    });

    srv.Get("/api/v1/jobs/:id", [this](const httplib::Request &req, httplib::Response &res) {
        const auto job = queue_->get(req.path_params.at("id"));
        if (!job) {
            fail(res, 404, "job " + req.path_params.at("id") + " not found");
            return;
        }
        json body = job_to_json(*job);
        if (job->state == JobState::done && job->result) {
            if (const auto stored = store_.find_prediction(*job->result)) {
                body["prediction"] = to_json(*stored);
            }
        }
        reply(res, 200, body);
    });

    srv.Get("/api/v1/patients/:id/horizons", [this](const httplib::Request &req, httplib::Response &res) {
        const StoredPrediction latest = store_.get_latest_prediction(req.path_params.at("id"));
        reply(res, 200, json{ { "patient_id", latest.patient_id }, { "prediction_id", latest.prediction_id }, { "created_at", format_timestamp(latest.created_at) }, { "model_version", latest.model_version }, { "horizons", horizons_to_json(latest.horizons) } });
    });

    srv.Get("/api/v1/alerts", [this](const httplib::Request &req, httplib::Response &res) {
        AlertThresholds thresholds;
        for (const Disease d : kDiseases) {
            const std::string key(disease_name(d));
            if (!req.has_param(key)) {
                continue;
            }
            const auto v = parse_probability(req.get_param_value(key));
            if (!v) {
                fail(res, 400, key + " threshold must be a number in [0, 1]");
                return;
            }
            thresholds.per_disease[static_cast<std::size_t>(d)] = *v;
        }
        struct Alert {
            std::string patient_id;
            Disease disease;
            double probability;
            std::string prediction_id;
        };
        std::vector<Alert> alerts;
        for (const StoredPrediction &p : store_.latest_predictions()) {
            for (const Disease d : kDiseases) {
                if (p.risks[d] >= thresholds.per_disease[static_cast<std::size_t>(d)]) {
                    alerts.push_back({ p.patient_id, d, p.risks[d], p.prediction_id });
                }
            }
        }
        std::stable_sort(alerts.begin(), alerts.end(), [](const Alert &a, const Alert &b) { return a.probability > b.probability; });
        json items = json::array();
        for (const Alert &a : alerts) {
            items.push_back(json{ { "patient_id", a.patient_id }, { "disease", disease_name(a.disease) }, { "probability", a.probability }, { "prediction_id", a.prediction_id } });
        }
        reply(res, 200, json{ { "alerts", items } });
    });
}

int Service::start() {
    if (server_thread_.joinable()) {
        throw StateError("service already started");
    }
    const int port = config_.port == 0 ? server_->bind_to_any_port(config_.host) : (server_->bind_to_port(config_.host, config_.port) ? config_.port : -1);
    if (port < 0) {
        throw StateError("cannot bind " + config_.host + ":" + std::to_string(config_.port));
    }
    server_thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return port;
}

void Service::stop() {
    server_->stop();
    if (server_thread_.joinable()) {
        server_thread_.join();
    }
}

namespace {

volatile std::sig_atomic_t g_stop_requested = 0;

void on_signal(int) {
    g_stop_requested = 1;
}

}  // namespace

void serve_forever(const ServiceConfig &config) {
    FileStore store(config.store);
    Service service(config, store);
    g_stop_requested = 0;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    const int port = service.start();
    std::cout << "serving /api/v1 on " << config.host << ":" << port << std::endl;
    while (!g_stop_requested) {
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    service.stop();
}

}  // namespace ehrisk
