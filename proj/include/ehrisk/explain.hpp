#pragma once

#include "ehrisk/model.hpp"
#include "ehrisk/shapley.hpp"
#include "ehrisk/tokenizer.hpp"

#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ehrisk {

enum class GroupKind { token_span, lab_analyte, demographic };

std::string_view group_kind_name(GroupKind kind);

/// A set of inputs masked together as one Shapley player. `indices` are token
/// positions for token groups and panel positions for analyte groups; the
/// demographic group has none.
struct FeatureGroup {
    std::string name;
    GroupKind kind = GroupKind::token_span;
    std::vector<std::size_t> indices;
    /// Note byte ranges of the grouped tokens (token groups only).
    std::vector<TokenSpan> spans;
};

struct Attribution {
    FeatureGroup group;
    double phi = 0.0;
    /// Monte-Carlo standard error; absent in exact mode.
    std::optional<double> standard_error;
};

enum class ExplainTarget { diabetes, heart, hypertension, horizon_90, horizon_180, horizon_270, horizon_360 };

std::string_view target_name(ExplainTarget target);
std::optional<ExplainTarget> parse_target(std::string_view name);

enum class ExplainMode { exact, sampled, automatic };

std::string_view mode_name(ExplainMode mode);
std::optional<ExplainMode> parse_mode(std::string_view name);

struct Explanation {
    ExplainTarget target = ExplainTarget::diabetes;
    /// The mode actually used (never `automatic`).
    ExplainMode mode = ExplainMode::exact;
    double baseline_value = 0.0;  ///< f with every group masked
    double prediction = 0.0;  ///< f with nothing masked
    /// Sorted by |phi| descending.
    std::vector<Attribution> attributions;
};

/// The model inputs a value function sees.
struct ExplainInstance {
    TokenSequence tokens;
    LabPanel labs;
    Demographics demo;
};

/// What an absent group is replaced by.
struct MaskPolicy {
    std::int32_t token_id = Vocabulary::kUnknownId;
    Demographics demographic{ 50, Sex::unknown };

    /// [UNK] tokens, unmeasured analytes, unknown sex at the training-cohort mean age.
    static MaskPolicy for_model(const Model &model);
};

using InstanceValue = std::function<double(const ExplainInstance &)>;

/// Throws InvalidInputError unless the groups are disjoint, uniquely named, and index
/// positions inside the instance.
void validate_groups(const std::vector<FeatureGroup> &groups, const ExplainInstance &instance);

/// Copy of `instance` with every group outside `present` replaced by the baseline.
ExplainInstance mask_instance(const ExplainInstance &instance, const std::vector<FeatureGroup> &groups, Coalition present, const MaskPolicy &baseline);

/// Exact Shapley values of `f` over the groups. Throws CapacityError above 15 groups.
std::vector<Attribution> exact_shapley(const InstanceValue &f, const ExplainInstance &instance, const MaskPolicy &baseline, const std::vector<FeatureGroup> &groups);

/// Permutation-sampled Shapley values with per-group standard errors.
std::vector<Attribution> sampled_shapley(const InstanceValue &f, const ExplainInstance &instance, const MaskPolicy &baseline, const std::vector<FeatureGroup> &groups, std::size_t n_permutations, std::uint64_t seed);

/// Target probability of `model` on a (possibly masked) instance.
/// Caches text encodings across calls; not safe for concurrent use.
class ModelValue {
  public:
    ModelValue(const Model &model, ExplainTarget target);

    double operator()(const ExplainInstance &instance);

  private:
    const Model &model_;
    ExplainTarget target_;
    std::map<std::vector<std::int32_t>, Matrix> text_cache_;
};

/// How note words (and, in exact mode, analytes) are chosen for individual groups.
/// `occlusion`: |change in the target| when that one word (or analyte) is masked.
/// `attention`: attention received in the fusion layer, averaged over heads.
enum class TokenRanking { occlusion, attention };

std::string_view ranking_name(TokenRanking ranking);
std::optional<TokenRanking> parse_ranking(std::string_view name);

struct ExplainOptions {
    ExplainMode mode = ExplainMode::automatic;
    TokenRanking ranking = TokenRanking::occlusion;
    std::size_t n_permutations = 256;
    std::uint64_t seed = 0;
    /// Individually attributed token groups before the rest is pooled.
    std::size_t max_token_groups = 12;
};

/// Builds feature groups for `record`: one per distinct word among the
/// highest-ranked note words (the rest pooled into [OTHER-TEXT]), one per
/// measured analyte, and one demographic group. Exact mode pools further, into
/// [OTHER-TEXT] and [OTHER-LABS], until at most 15 groups remain.
std::vector<FeatureGroup> build_groups(const Model &model, const PatientRecord &record, ExplainMode mode, std::size_t max_token_groups = 12, ExplainTarget target = ExplainTarget::diabetes, TokenRanking ranking = TokenRanking::occlusion);

/// Explains one target output. Automatic mode is exact when the groups fit,
/// sampled otherwise. Throws StateError for an untrained model.
Explanation explain_record(const Model &model, const PatientRecord &record, ExplainTarget target, const ExplainOptions &options = {});

nlohmann::json to_json(const Explanation &explanation);
Explanation explanation_from_json(const nlohmann::json &j);

}  // namespace ehrisk
