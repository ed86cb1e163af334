#include "ehrisk/store.hpp"

#include "ehrisk/errors.hpp"

#include <zlib.h>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>

namespace ehrisk {

using nlohmann::json;

namespace {

constexpr std::string_view kLogMagic = "EHRSLOG\n";
constexpr std::uint64_t kLogHeaderSize = 12;
constexpr std::uint64_t kFrameHeaderSize = 8;
constexpr std::uint32_t kMaxFrameSize = 64u << 20;

std::string errno_text() {
    return std::strerror(errno);
}

void put_u32(std::string &out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
    }
}

std::uint32_t get_u32(const unsigned char *p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) | (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t crc_of(std::string_view bytes) {
    return static_cast<std::uint32_t>(crc32(0L, reinterpret_cast<const Bytef *>(bytes.data()), static_cast<uInt>(bytes.size())));
}

bool pread_all(int fd, void *buf, std::size_t n, std::uint64_t offset) {
    auto *p = static_cast<char *>(buf);
    while (n > 0) {
        const ssize_t got = ::pread(fd, p, n, static_cast<off_t>(offset));
        if (got < 0 && errno == EINTR) {
            continue;
        }
        if (got <= 0) {
            return false;
        }
        p += got;
        n -= static_cast<std::size_t>(got);
        offset += static_cast<std::uint64_t>(got);
    }
    return true;
}

bool pwrite_all(int fd, const char *p, std::size_t n, std::uint64_t offset) {
    while (n > 0) {
        const ssize_t put = ::pwrite(fd, p, n, static_cast<off_t>(offset));
        if (put < 0 && errno == EINTR) {
            continue;
        }
        if (put <= 0) {
            return false;
        }
        p += put;
        n -= static_cast<std::size_t>(put);
        offset += static_cast<std::uint64_t>(put);
    }
    return true;
}

struct Frame {
    json body;
    std::uint64_t next = 0;
};

// nullopt for a torn, truncated or corrupt frame
std::optional<Frame> read_frame(int fd, std::uint64_t offset, std::uint64_t file_size) {
    if (file_size - offset < kFrameHeaderSize) {
        return std::nullopt;
    }
    unsigned char head[kFrameHeaderSize];
    if (!pread_all(fd, head, sizeof head, offset)) {
        return std::nullopt;
    }
    const std::uint32_t length = get_u32(head);
    const std::uint32_t crc = get_u32(head + 4);
    if (length > kMaxFrameSize || file_size - offset - kFrameHeaderSize < length) {
        return std::nullopt;
    }
    std::string payload(length, '\0');
    if (!pread_all(fd, payload.data(), length, offset + kFrameHeaderSize) || crc_of(payload) != crc) {
        return std::nullopt;
    }
    try {
        return Frame{ json::parse(payload), offset + kFrameHeaderSize + length };
    } catch (const json::exception &) {
        return std::nullopt;
    }
}

void sync_directory(const std::filesystem::path &dir) {
    const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
    if (fd >= 0) {
        ::fsync(fd);
        ::close(fd);
    }
}

RiskScores risks_from_json(const json &j) {
    RiskScores r;
    for (const Disease d : kDiseases) {
        r.p[static_cast<std::size_t>(d)] = j.at(std::string(disease_name(d))).get<double>();
    }
    return r;
}

HorizonRisks horizons_from_json(const json &j) {
    HorizonRisks h;
    for (std::size_t k = 0; k < kHorizonCount; ++k) {
        h.p_by[k] = j.at(std::to_string(kHorizonDays[k])).get<double>();
    }
    return h;
}

}  // namespace

TimestampMs now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch()).count();
}

std::string format_timestamp(TimestampMs ms) {
    const std::time_t seconds = static_cast<std::time_t>(ms / 1000);
    std::tm utc{};
    gmtime_r(&seconds, &utc);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", utc.tm_year + 1900, utc.tm_mon + 1, utc.tm_mday, utc.tm_hour, utc.tm_min, utc.tm_sec, static_cast<int>(ms % 1000));
    return buf;
}

json risks_to_json(const RiskScores &r) {
    json j = json::object();
    for (const Disease d : kDiseases) {
        j[std::string(disease_name(d))] = r.p[static_cast<std::size_t>(d)];
    }
    return j;
}

json horizons_to_json(const HorizonRisks &h) {
    json j = json::object();
    for (std::size_t k = 0; k < kHorizonCount; ++k) {
        j[std::to_string(kHorizonDays[k])] = h.p_by[k];
    }
    return j;
}

json to_json(const StoredPrediction &p) {
    json j{ { "prediction_id", p.prediction_id }, { "patient_id", p.patient_id }, { "created_at", format_timestamp(p.created_at) }, { "created_at_ms", p.created_at }, { "model_version", p.model_version }, { "risks", risks_to_json(p.risks) }, { "horizons", horizons_to_json(p.horizons) } };
    if (p.explanation) {
        j["explanation"] = to_json(*p.explanation);
    }
    return j;
}

StoredPrediction stored_prediction_from_json(const json &j) {
    StoredPrediction p;
    p.prediction_id = j.at("prediction_id").get<std::string>();
    p.patient_id = j.at("patient_id").get<std::string>();
    p.created_at = j.at("created_at_ms").get<TimestampMs>();
    p.model_version = j.at("model_version").get<std::string>();
    p.risks = risks_from_json(j.at("risks"));
    p.horizons = horizons_from_json(j.at("horizons"));
    if (j.contains("explanation") && !j.at("explanation").is_null()) {
        p.explanation = explanation_from_json(j.at("explanation"));
    }
    return p;
}

bool AlertThresholds::exceeded_by(const RiskScores &risks) const {
    for (std::size_t i = 0; i < kDiseaseCount; ++i) {
        if (risks.p[i] >= per_disease[i]) {
            return true;
        }
    }
    return false;
}

FileStore::FileStore(std::filesystem::path directory, FileStoreOptions options) :
    directory_(std::move(directory)),
    log_path_(directory_ / "records.log"),
    index_path_(directory_ / "records.idx"),
    options_(options) {
    std::error_code ec;
    std::filesystem::create_directories(directory_, ec);
    if (ec) {
        throw StorageError("cannot create store directory " + directory_.string() + ": " + ec.message());
    }
    fd_ = ::open(log_path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) {
        throw StorageError("cannot open " + log_path_.string() + ": " + errno_text());
    }
    try {
        struct stat st {};
        if (::fstat(fd_, &st) != 0) {
            throw StorageError("cannot stat " + log_path_.string() + ": " + errno_text());
        }
        const auto size = static_cast<std::uint64_t>(st.st_size);
        std::string header(kLogMagic);
        put_u32(header, kLogVersion);
        if (size < kLogHeaderSize) {
            // new, or a header write that never completed: anything else is someone else's file
            std::string existing(size, '\0');
            if (size > 0 && (!pread_all(fd_, existing.data(), existing.size(), 0) || header.compare(0, existing.size(), existing) != 0)) {
                throw VersionError(log_path_.string() + " is not a record log");
            }
            if (::ftruncate(fd_, 0) != 0 || !pwrite_all(fd_, header.data(), header.size(), 0) || ::fsync(fd_) != 0) {
                throw StorageError("cannot initialize " + log_path_.string() + ": " + errno_text());
            }
            sync_directory(directory_);
            log_size_ = kLogHeaderSize;
            std::filesystem::remove(index_path_, ec);
        } else {
            unsigned char header[kLogHeaderSize];
            if (!pread_all(fd_, header, sizeof header, 0)) {
                throw StorageError("cannot read log header of " + log_path_.string());
            }
            if (std::string_view(reinterpret_cast<const char *>(header), kLogMagic.size()) != kLogMagic) {
                throw VersionError(log_path_.string() + " is not a record log");
            }
            const std::uint32_t version = get_u32(header + kLogMagic.size());
            if (version != kLogVersion) {
                throw VersionError("record log version " + std::to_string(version) + " is not supported (expected " + std::to_string(kLogVersion) + ")");
            }
            log_size_ = size;
            std::uint64_t resume = kLogHeaderSize;
            if (const auto indexed = load_index()) {
                opened_from_index_ = true;
                resume = *indexed;
            }
            const std::uint64_t end = scan_from(resume);
            if (end < log_size_) {
                if (::ftruncate(fd_, static_cast<off_t>(end)) != 0 || ::fsync(fd_) != 0) {
                    throw StorageError("cannot truncate torn tail of " + log_path_.string() + ": " + errno_text());
                }
                recovered_tail_bytes_ = log_size_ - end;
                log_size_ = end;
            }
        }
    } catch (...) {
        ::close(fd_);
        throw;
    }
}


FileStore::~FileStore() {
    try {
        std::unique_lock lock(mutex_);
        if (appends_since_index_ > 0) {
            write_index_locked();
        }
    } catch (...) {
    }
    if (fd_ >= 0) {
        ::close(fd_);
    }
}

void FileStore::reset_state() {
    patients_.clear();
    prediction_owner_.clear();
}

void FileStore::apply_frame(const json &frame, std::uint64_t offset) {
    const std::string type = frame.at("t").get<std::string>();
    if (type == "patient") {
        PatientRecord record = frame.at("record").get<PatientRecord>();
        PatientEntry &entry = patients_[record.patient_id];
        entry.version = frame.at("version").get<std::uint64_t>();
        entry.record_offset = offset;
        entry.record = std::move(record);
    } else if (type == "prediction") {
        StoredPrediction prediction = stored_prediction_from_json(frame.at("prediction"));
        const auto it = patients_.find(prediction.patient_id);
        if (it == patients_.end()) {
            throw StorageError("prediction " + prediction.prediction_id + " references unknown patient " + prediction.patient_id);
        }
        prediction_owner_[prediction.prediction_id] = prediction.patient_id;
        it->second.predictions.push_back(std::move(prediction));
        it->second.prediction_offsets.push_back(offset);
    } else {
        throw StorageError("unknown frame type '" + type + "'");
    }
}

std::uint64_t FileStore::scan_from(std::uint64_t offset) {
    while (offset < log_size_) {
        const auto frame = read_frame(fd_, offset, log_size_);
        if (!frame) {
            break;
        }
        try {
            apply_frame(frame->body, offset);
        } catch (const nlohmann::json::exception &) {
            break;
        } catch (const Error &) {
            break;
        }
        offset = frame->next;
    }
    return offset;
}

std::optional<std::uint64_t> FileStore::load_index() {
    std::ifstream in(index_path_);
    if (!in) {
        return std::nullopt;
    }
    try {
        std::string line;
        if (!std::getline(in, line)) {
            return std::nullopt;
        }
        const json header = json::parse(line);
        if (header.at("index_version").get<int>() != kIndexVersion) {
            return std::nullopt;
        }
        const auto covered = header.at("log_bytes").get<std::uint64_t>();
        if (covered < kLogHeaderSize || covered > log_size_) {
            return std::nullopt;
        }
        std::vector<std::pair<std::uint64_t, json>> predictions;
        while (std::getline(in, line)) {
            if (line.empty()) {
                continue;
            }
            const std::uint64_t offset = std::stoull(line);
            auto frame = read_frame(fd_, offset, covered);
            if (!frame) {
                reset_state();
                return std::nullopt;
            }
            // a patient's latest record may follow its predictions in the log
            if (frame->body.at("t") == "prediction") {
                predictions.emplace_back(offset, std::move(frame->body));
            } else {
                apply_frame(frame->body, offset);
            }
        }
        for (const auto &[offset, body] : predictions) {
            apply_frame(body, offset);
        }
        return covered;
    } catch (const std::exception &) {
        reset_state();
        return std::nullopt;
    }
}

void FileStore::write_index_locked() {
    std::vector<std::uint64_t> offsets;
    for (const auto &[id, entry] : patients_) {
        offsets.push_back(entry.record_offset);
        offsets.insert(offsets.end(), entry.prediction_offsets.begin(), entry.prediction_offsets.end());
    }
    std::sort(offsets.begin(), offsets.end());
    std::string text = json{ { "index_version", kIndexVersion }, { "log_bytes", log_size_ } }.dump() + "\n";
    for (const std::uint64_t offset : offsets) {
        text += std::to_string(offset);
        text += '\n';
    }
    const std::filesystem::path tmp = index_path_.string() + ".tmp";
    const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) {
        throw StorageError("cannot write " + tmp.string() + ": " + errno_text());
    }
    const bool ok = pwrite_all(fd, text.data(), text.size(), 0) && (!options_.sync || ::fsync(fd) == 0);
    ::close(fd);
    if (!ok || ::rename(tmp.c_str(), index_path_.c_str()) != 0) {
        std::error_code ec;
        std::filesystem::remove(tmp, ec);
        throw StorageError("cannot write " + index_path_.string() + ": " + errno_text());
    }
    if (options_.sync) {
        sync_directory(directory_);
    }
    appends_since_index_ = 0;
}

void FileStore::checkpoint_index() {
    std::unique_lock lock(mutex_);
    write_index_locked();
}

std::uint64_t FileStore::append_frame(const std::string &payload) {
    if (payload.size() > kMaxFrameSize) {
        throw StorageError("record of " + std::to_string(payload.size()) + " bytes exceeds the frame limit");
    }
    std::string frame;
    frame.reserve(kFrameHeaderSize + payload.size());
    put_u32(frame, static_cast<std::uint32_t>(payload.size()));
    put_u32(frame, crc_of(payload));
    frame += payload;

    const std::uint64_t offset = log_size_;
    const bool written = pwrite_all(fd_, frame.data(), frame.size(), offset);
    const int write_errno = errno;
    if (!written || (options_.sync && ::fdatasync(fd_) != 0)) {
        const std::string reason = written ? errno_text() : std::strerror(write_errno);
        // drop whatever part of the frame reached the file
        if (::ftruncate(fd_, static_cast<off_t>(offset)) != 0) {
            // the next append overwrites the partial frame; reopening truncates it
        }
        throw StorageError("cannot append to " + log_path_.string() + ": " + reason);
    }
    log_size_ += frame.size();
    ++appends_since_index_;
    return offset;
}

std::uint64_t FileStore::put_patient(const PatientRecord &record) {
    validate(record);
    std::unique_lock lock(mutex_);
    const auto it = patients_.find(record.patient_id);
    const std::uint64_t version = it == patients_.end() ? 1 : it->second.version + 1;
    const json frame{ { "t", "patient" }, { "version", version }, { "record", record } };
    const std::uint64_t offset = append_frame(frame.dump());
    PatientEntry &entry = patients_[record.patient_id];
    entry.record = record;
    entry.version = version;
    entry.record_offset = offset;
    if (appends_since_index_ >= options_.index_interval) {
        try {
            write_index_locked();
        } catch (const StorageError &) {
            // the log is authoritative; the index is rebuilt on the next open
        }
    }
    return version;
}

VersionedPatient FileStore::get_patient(const std::string &patient_id) const {
    std::shared_lock lock(mutex_);
    const auto it = patients_.find(patient_id);
    if (it == patients_.end()) {
        throw NotFoundError("patient " + patient_id + " not found");
    }
    return { it->second.record, it->second.version };
}

PatientPage FileStore::list_patients(const PatientQuery &query) const {
    std::shared_lock lock(mutex_);
    PatientPage page;
    for (const auto &[id, entry] : patients_) {
        PatientSummary summary{ id, entry.version, std::nullopt, false };
        if (!entry.predictions.empty()) {
            summary.latest_risks = entry.predictions.back().risks;
            summary.alert = query.thresholds.exceeded_by(*summary.latest_risks);
        }
        if (query.alert && *query.alert != summary.alert) {
            continue;
        }
        if (page.total >= query.offset && page.items.size() < query.limit) {
            page.items.push_back(std::move(summary));
        }
        ++page.total;
    }
    return page;
}

StoredPrediction FileStore::put_prediction(StoredPrediction prediction) {
    std::unique_lock lock(mutex_);
    const auto it = patients_.find(prediction.patient_id);
    if (it == patients_.end()) {
        throw ReferentialError("patient " + prediction.patient_id + " does not exist");
    }
    if (prediction.prediction_id.empty() || prediction_owner_.count(prediction.prediction_id) != 0) {
        throw InvalidInputError("prediction id '" + prediction.prediction_id + "' is empty or already used");
    }
    if (!it->second.predictions.empty() && prediction.created_at <= it->second.predictions.back().created_at) {
        prediction.created_at = it->second.predictions.back().created_at + 1;
    }
    const json frame{ { "t", "prediction" }, { "prediction", to_json(prediction) } };
    const std::uint64_t offset = append_frame(frame.dump());
    prediction_owner_[prediction.prediction_id] = prediction.patient_id;
    it->second.predictions.push_back(prediction);
    it->second.prediction_offsets.push_back(offset);
    if (appends_since_index_ >= options_.index_interval) {
        try {
            write_index_locked();
        } catch (const StorageError &) {
        }
    }
    return prediction;
}

StoredPrediction FileStore::get_latest_prediction(const std::string &patient_id) const {
    std::shared_lock lock(mutex_);
    const auto it = patients_.find(patient_id);
    if (it == patients_.end()) {
        throw NotFoundError("patient " + patient_id + " not found");
    }
    if (it->second.predictions.empty()) {
        throw NotFoundError("patient " + patient_id + " has no predictions");
    }
    return it->second.predictions.back();
}

std::vector<StoredPrediction> FileStore::prediction_history(const std::string &patient_id) const {
    std::shared_lock lock(mutex_);
    const auto it = patients_.find(patient_id);
    if (it == patients_.end()) {
        throw NotFoundError("patient " + patient_id + " not found");
    }
    return it->second.predictions;
}

std::optional<StoredPrediction> FileStore::find_prediction(const std::string &prediction_id) const {
    std::shared_lock lock(mutex_);
    const auto owner = prediction_owner_.find(prediction_id);
    if (owner == prediction_owner_.end()) {
        return std::nullopt;
    }
    for (const StoredPrediction &p : patients_.at(owner->second).predictions) {
        if (p.prediction_id == prediction_id) {
            return p;
        }
    }
    return std::nullopt;
}

std::vector<StoredPrediction> FileStore::latest_predictions() const {
    std::shared_lock lock(mutex_);
    std::vector<StoredPrediction> out;
    for (const auto &[id, entry] : patients_) {
        if (!entry.predictions.empty()) {
            out.push_back(entry.predictions.back());
        }
    }
    return out;
}

}  // namespace ehrisk
