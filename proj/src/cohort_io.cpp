#include "ehrisk/cohort_io.hpp"

#include "ehrisk/errors.hpp"

#include <fstream>
#include <set>

namespace ehrisk {

using nlohmann::json;

json cohort_config_to_json(const CohortConfig &c) {
    json prevalence = json::object();
    for (const Disease d : kDiseases) {
        prevalence[std::string(disease_name(d))] = c.prevalence[static_cast<std::size_t>(d)];
    }
    return { { "n_patients", c.n_patients }, { "prevalence", prevalence }, { "signal_strength", c.signal_strength }, { "modality_split", c.modality_split }, { "seed", c.seed } };
}

CohortConfig cohort_config_from_json(const json &j) {
    CohortConfig c;
    c.n_patients = j.at("n_patients").get<std::size_t>();
    for (const Disease d : kDiseases) {
        c.prevalence[static_cast<std::size_t>(d)] = j.at("prevalence").at(std::string(disease_name(d))).get<double>();
    }
    c.signal_strength = j.at("signal_strength").get<double>();
    c.modality_split = j.at("modality_split").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    return c;
}

CohortConfig cohort_config_from(const KeyValues &kv) {
    CohortConfig c;
    const long long n = kv.get_int("n_patients", static_cast<long long>(c.n_patients));
    if (n < 0) {
        throw ConfigError("n_patients must be non-negative");
    }
    c.n_patients = static_cast<std::size_t>(n);
    c.seed = static_cast<std::uint64_t>(kv.get_int("seed", static_cast<long long>(c.seed)));
    c.signal_strength = kv.get_double("signal_strength", c.signal_strength);
    c.modality_split = kv.get_double("modality_split", c.modality_split);
    for (const Disease d : kDiseases) {
        auto &p = c.prevalence[static_cast<std::size_t>(d)];
        p = kv.get_double("prevalence." + std::string(disease_name(d)), p);
    }
    for (const auto &[key, value] : kv.entries()) {
        static const std::set<std::string, std::less<>> known{ "n_patients", "seed", "signal_strength", "modality_split", "prevalence.diabetes", "prevalence.heart", "prevalence.hypertension" };
        if (!known.count(key)) {
            throw ConfigError("unknown cohort setting '" + key + "'");
        }
    }
    c.validate();
    return c;
}

std::string serialize_cohort(const Cohort &cohort) {
    std::string out = json{ { "cohort_version", kCohortVersion }, { "config", cohort_config_to_json(cohort.config) }, { "generator_version", cohort.generator_version } }.dump();
    out += '\n';
    for (const auto &r : cohort.records) {
        out += json(r).dump();
        out += '\n';
    }
    return out;
}

void write_cohort(const Cohort &cohort, const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw StorageError("cannot open " + path.string() + " for writing");
    }
    const std::string text = serialize_cohort(cohort);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out.flush()) {
        throw StorageError("failed writing " + path.string());
    }
}

CohortHeader read_cohort_stream(const std::filesystem::path &path, const std::function<void(PatientRecord &&)> &on_record) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw StorageError("cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line)) {
        throw VersionError("cohort file " + path.string() + " has no header line");
    }
    CohortHeader header;
    try {
        const json h = json::parse(line);
        if (!h.is_object() || !h.contains("cohort_version")) {
            throw VersionError("cohort header lacks cohort_version");
        }
        header.version = h.at("cohort_version").get<int>();
        if (header.version != kCohortVersion) {
            throw VersionError("cohort_version " + std::to_string(header.version) + " is not supported (expected " + std::to_string(kCohortVersion) + ")");
        }
        if (h.contains("config") && h.at("config").is_object()) {
            header.config = cohort_config_from_json(h.at("config"));
        }
        header.generator_version = h.value("generator_version", std::string{});
    } catch (const json::exception &e) {
        throw VersionError(std::string("unreadable cohort header: ") + e.what());
    }

    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        PatientRecord record;
        try {
            record = json::parse(line).get<PatientRecord>();
            validate(record);
        } catch (const json::exception &e) {
            throw ParseError(line_no, std::string("malformed record: ") + e.what());
        } catch (const InvalidInputError &e) {
            throw ParseError(line_no, std::string("invalid record: ") + e.what());
        }
        on_record(std::move(record));
    }
    return header;
}

Cohort read_cohort(const std::filesystem::path &path) {
    Cohort cohort;
    std::set<std::string> ids;
    std::size_t line_no = 1;
    const CohortHeader header = read_cohort_stream(path, [&](PatientRecord &&r) {
        ++line_no;
        if (!ids.insert(r.patient_id).second) {
            throw ParseError(line_no, "duplicate patient_id '" + r.patient_id + "'");
        }
        cohort.records.push_back(std::move(r));
    });
    if (header.config) {
        cohort.config = *header.config;
    }
    cohort.generator_version = header.generator_version;
    return cohort;
}

}  // namespace ehrisk
