#pragma once

#include "ehrisk/explain.hpp"
#include "ehrisk/model.hpp"
#include "ehrisk/records.hpp"

#include "json.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace ehrisk {

/// Milliseconds since the Unix epoch, UTC.
using TimestampMs = std::int64_t;

TimestampMs now_ms();
/// "2026-10-17T08:30:00.125Z"
std::string format_timestamp(TimestampMs ms);

struct StoredPrediction {
    std::string prediction_id;
    std::string patient_id;
    TimestampMs created_at = 0;
    /// Content hash of the checkpoint that produced it.
    std::string model_version;
    RiskScores risks;
    HorizonRisks horizons;
    std::optional<Explanation> explanation;
};

nlohmann::json to_json(const StoredPrediction &p);
StoredPrediction stored_prediction_from_json(const nlohmann::json &j);
nlohmann::json risks_to_json(const RiskScores &r);
nlohmann::json horizons_to_json(const HorizonRisks &h);

/// Per-disease alert thresholds; a probability >= its threshold raises an alert.
struct AlertThresholds {
    std::array<double, kDiseaseCount> per_disease{ 0.7, 0.7, 0.5 };

    [[nodiscard]] bool exceeded_by(const RiskScores &risks) const;
};

struct PatientSummary {
    std::string patient_id;
    std::uint64_t version = 0;
    std::optional<RiskScores> latest_risks;
    bool alert = false;
};

struct PatientQuery {
    std::size_t limit = 50;
    std::size_t offset = 0;
    /// When set, keep only patients whose alert flag equals it.
    std::optional<bool> alert;
    AlertThresholds thresholds;
};

struct PatientPage {
    std::vector<PatientSummary> items;
    std::size_t total = 0;  ///< matches before pagination
};

struct VersionedPatient {
    PatientRecord record;
    std::uint64_t version = 0;
};

/// Persistence interface used by the service. Implementations serialize writers
/// and allow concurrent readers; an acknowledged write is durable.
class Storage {
  public:
    virtual ~Storage() = default;

    /// Upsert; returns the new version (1 for a new patient). Throws StorageError when
    /// the write could not be made durable, in which case nothing changed.
    virtual std::uint64_t put_patient(const PatientRecord &record) = 0;
    /// Throws NotFoundError for an unknown id.
    [[nodiscard]] virtual VersionedPatient get_patient(const std::string &patient_id) const = 0;
    /// Ordered by patient_id.
    [[nodiscard]] virtual PatientPage list_patients(const PatientQuery &query) const = 0;

    /// Appends to the patient's history. Throws ReferentialError for an unknown patient.
    /// A created_at earlier than the patient's latest is moved to 1 ms after it.
    virtual StoredPrediction put_prediction(StoredPrediction prediction) = 0;
    /// Throws NotFoundError when the patient has no predictions (or does not exist).
    [[nodiscard]] virtual StoredPrediction get_latest_prediction(const std::string &patient_id) const = 0;
    /// Oldest first.
    [[nodiscard]] virtual std::vector<StoredPrediction> prediction_history(const std::string &patient_id) const = 0;
    [[nodiscard]] virtual std::optional<StoredPrediction> find_prediction(const std::string &prediction_id) const = 0;
    /// Latest prediction of every patient that has one, ordered by patient_id.
    [[nodiscard]] virtual std::vector<StoredPrediction> latest_predictions() const = 0;
};

struct FileStoreOptions {
    /// fdatasync every append before acknowledging it.
    bool sync = true;
    /// Rewrite the sidecar index after this many appends (and on close).
    std::size_t index_interval = 256;
};

/// Embedded file-backed store in a directory holding two files:
///
///   records.log  "EHRSLOG\n" + u32 version, then frames of
///                u32 payload_len | u32 crc32(payload) | payload (JSON)
///   records.idx  JSON header line {"index_version":1,"log_bytes":N} followed by one
///                line per live frame offset; replaced atomically via rename
///
/// Opening replays the index, then scans the log from the indexed length; a torn or
/// corrupt trailing frame (an unacknowledged write) is truncated away. A missing or
/// stale index triggers a full scan.
class FileStore final : public Storage {
  public:
    static constexpr std::uint32_t kLogVersion = 1;
    static constexpr int kIndexVersion = 1;

    /// Creates the directory and files when absent. Throws StorageError / VersionError.
    explicit FileStore(std::filesystem::path directory, FileStoreOptions options = {});
    ~FileStore() override;

    FileStore(const FileStore &) = delete;
    FileStore &operator=(const FileStore &) = delete;

    std::uint64_t put_patient(const PatientRecord &record) override;
    [[nodiscard]] VersionedPatient get_patient(const std::string &patient_id) const override;
    [[nodiscard]] PatientPage list_patients(const PatientQuery &query) const override;
    StoredPrediction put_prediction(StoredPrediction prediction) override;
    [[nodiscard]] StoredPrediction get_latest_prediction(const std::string &patient_id) const override;
    [[nodiscard]] std::vector<StoredPrediction> prediction_history(const std::string &patient_id) const override;
    [[nodiscard]] std::optional<StoredPrediction> find_prediction(const std::string &prediction_id) const override;
    [[nodiscard]] std::vector<StoredPrediction> latest_predictions() const override;

    /// Writes the sidecar index now.
    void checkpoint_index();
    /// Bytes of the log discarded as a torn tail when the store was opened.
    [[nodiscard]] std::uint64_t recovered_tail_bytes() const noexcept { return recovered_tail_bytes_; }
    /// Whether opening used the sidecar index (false means a full log scan).
    [[nodiscard]] bool opened_from_index() const noexcept { return opened_from_index_; }

  private:
    struct PatientEntry {
        PatientRecord record;
        std::uint64_t version = 0;
        std::uint64_t record_offset = 0;
        std::vector<StoredPrediction> predictions;
        std::vector<std::uint64_t> prediction_offsets;
    };

    std::uint64_t append_frame(const std::string &payload);
    void apply_frame(const nlohmann::json &frame, std::uint64_t offset);
    std::uint64_t scan_from(std::uint64_t offset);
    /// Replays the index; returns the log length it covers, or nullopt when unusable.
    std::optional<std::uint64_t> load_index();
    void reset_state();
    void write_index_locked();

    std::filesystem::path directory_;
    std::filesystem::path log_path_;
    std::filesystem::path index_path_;
    FileStoreOptions options_;
    int fd_ = -1;
    std::uint64_t log_size_ = 0;
    std::size_t appends_since_index_ = 0;
    std::uint64_t recovered_tail_bytes_ = 0;
    bool opened_from_index_ = false;

    mutable std::shared_mutex mutex_;
    std::map<std::string, PatientEntry, std::less<>> patients_;
    std::map<std::string, std::string, std::less<>> prediction_owner_;
};

}  // namespace ehrisk
