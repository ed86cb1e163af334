#pragma once

#include "ehrisk/lab_catalog.hpp"
#include "ehrisk/model.hpp"
#include "ehrisk/records.hpp"
#include "ehrisk/rng.hpp"
#include "ehrisk/synth.hpp"
#include "ehrisk/train.hpp"

#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

namespace test {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string &tag = "ehrisk") {
        const auto base = std::filesystem::temp_directory_path();
        std::random_device rd;
        path_ = base / (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir &) = delete;
    TempDir &operator=(const TempDir &) = delete;

    [[nodiscard]] const std::filesystem::path &path() const { return path_; }
    [[nodiscard]] std::filesystem::path operator/(const std::string &name) const { return path_ / name; }

  private:
    std::filesystem::path path_;
};

inline ehrisk::PatientRecord make_record(const std::string &id, const std::string &note = "patient reports polyuria", bool labeled = true) {
    ehrisk::PatientRecord r;
    r.patient_id = id;
    r.note = note;
    r.labs = ehrisk::LabPanel(ehrisk::kAnalyteCount);
    r.labs.set(*ehrisk::analyte_index("fasting_glucose"), 130.0);
    r.labs.set(*ehrisk::analyte_index("hba1c"), 6.9);
    r.demo = { 58, ehrisk::Sex::female };
    if (labeled) {
        r.labels = ehrisk::DiseaseLabels{ true, false, true };
        r.onset_day = 120;
    }
    return r;
}

/// Small architecture so training-based tests stay fast.
inline ehrisk::Architecture small_arch() {
    ehrisk::Architecture a;
    a.embed_dim = 16;
    a.heads = 2;
    a.ffn_dim = 32;
    a.lab_hidden = 16;
    return a;
}

/// A briefly trained small model on a generated cohort (cached per process).
inline const ehrisk::TrainResult &small_trained() {
    static const ehrisk::TrainResult result = [] {
        ehrisk::CohortConfig c;
        c.n_patients = 400;
        c.seed = 5;
        ehrisk::TrainConfig t;
        t.arch = small_arch();
        t.epochs = 3;
        return ehrisk::train(ehrisk::generate_cohort(c).records, t, 3);
    }();
    return result;
}

}  // namespace test
