#include "ehrisk/explain.hpp"

#include "ehrisk/errors.hpp"
#include "ehrisk/lab_catalog.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace ehrisk {

namespace {

constexpr std::size_t kTextCacheLimit = 4096;
constexpr std::string_view kOtherText = "[OTHER-TEXT]";
constexpr std::string_view kOtherLabs = "[OTHER-LABS]";
constexpr std::string_view kDemographics = "[DEMOGRAPHICS]";

std::string analyte_label(std::size_t index, std::size_t analyte_count) {
    if (analyte_count == kAnalyteCount) {
        return "lab:" + std::string(analyte_catalog()[index].name);
    }
    return "lab:analyte_" + std::to_string(index);
}

void require_trained(const Model &model) {
    if (model.params.embedding.size() == 0 || model.params.arch.vocab_size != model.vocab.size() || model.norm.mean.size() != model.params.arch.analyte_count) {
        throw StateError("model is not trained");
    }
}

std::vector<Attribution> to_attributions(const std::vector<FeatureGroup> &groups, const std::vector<double> &phi, const std::vector<double> *standard_error) {
    std::vector<Attribution> out;
    out.reserve(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) {
        Attribution a{ groups[i], phi[i], std::nullopt };
        if (standard_error) {
            a.standard_error = (*standard_error)[i];
        }
        out.push_back(std::move(a));
    }
    return out;
}

double target_value(const Prediction &p, ExplainTarget target) {
    switch (target) {
        case ExplainTarget::diabetes: return p.risks.p[0];
        case ExplainTarget::heart: return p.risks.p[1];
        case ExplainTarget::hypertension: return p.risks.p[2];
        case ExplainTarget::horizon_90: return p.horizons.p_by[0];
        case ExplainTarget::horizon_180: return p.horizons.p_by[1];
        case ExplainTarget::horizon_270: return p.horizons.p_by[2];
        case ExplainTarget::horizon_360: return p.horizons.p_by[3];
    }
    return 0.0;
}

}  // namespace

std::string_view group_kind_name(GroupKind kind) {
    switch (kind) {
        case GroupKind::token_span: return "token_span";
        case GroupKind::lab_analyte: return "lab_analyte";
        case GroupKind::demographic: return "demographic";
    }
    return "unknown";
}

std::string_view target_name(ExplainTarget target) {
    switch (target) {
        case ExplainTarget::diabetes: return "diabetes";
        case ExplainTarget::heart: return "heart";
        case ExplainTarget::hypertension: return "hypertension";
        case ExplainTarget::horizon_90: return "horizon_90";
        case ExplainTarget::horizon_180: return "horizon_180";
        case ExplainTarget::horizon_270: return "horizon_270";
        case ExplainTarget::horizon_360: return "horizon_360";
    }
    return "unknown";
}

std::optional<ExplainTarget> parse_target(std::string_view name) {
    for (const auto t : { ExplainTarget::diabetes, ExplainTarget::heart, ExplainTarget::hypertension, ExplainTarget::horizon_90, ExplainTarget::horizon_180, ExplainTarget::horizon_270, ExplainTarget::horizon_360 }) {
        if (target_name(t) == name) {
            return t;
        }
    }
    if (name == "heart_disease") {
        return ExplainTarget::heart;
    }
    return std::nullopt;
}

std::string_view mode_name(ExplainMode mode) {
    switch (mode) {
        case ExplainMode::exact: return "exact";
        case ExplainMode::sampled: return "sampled";
        case ExplainMode::automatic: return "auto";
    }
    return "unknown";
}

std::optional<ExplainMode> parse_mode(std::string_view name) {
    for (const auto m : { ExplainMode::exact, ExplainMode::sampled, ExplainMode::automatic }) {
        if (mode_name(m) == name) {
            return m;
        }
    }
    return std::nullopt;
}

MaskPolicy MaskPolicy::for_model(const Model &model) {
    MaskPolicy policy;
    policy.demographic = Demographics{ static_cast<int>(std::lround(model.norm.age_mean)), Sex::unknown };
    return policy;
}

void validate_groups(const std::vector<FeatureGroup> &groups, const ExplainInstance &instance) {
    std::set<std::string> names;
    std::set<std::size_t> token_positions;
    std::set<std::size_t> analyte_positions;
    std::size_t demographic_groups = 0;
    for (const auto &g : groups) {
        if (!names.insert(g.name).second) {
            throw InvalidInputError("duplicate feature group name '" + g.name + "'");
        }
        for (const std::size_t i : g.indices) {
            if (g.kind == GroupKind::token_span) {
                if (i >= instance.tokens.size() || !token_positions.insert(i).second) {
                    throw InvalidInputError("token position " + std::to_string(i) + " in group '" + g.name + "' is out of range or shared");
                }
            } else if (g.kind == GroupKind::lab_analyte) {
                if (i >= instance.labs.size() || !analyte_positions.insert(i).second) {
                    throw InvalidInputError("analyte " + std::to_string(i) + " in group '" + g.name + "' is out of range or shared");
                }
            }
        }
        if (g.kind == GroupKind::demographic && ++demographic_groups > 1) {
            throw InvalidInputError("more than one demographic group");
        }
    }
}

ExplainInstance mask_instance(const ExplainInstance &instance, const std::vector<FeatureGroup> &groups, Coalition present, const MaskPolicy &baseline) {
    ExplainInstance out = instance;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        if (present & (Coalition{ 1 } << g)) {
            continue;
        }
        const auto &group = groups[g];
        switch (group.kind) {
            case GroupKind::token_span:
                for (const std::size_t i : group.indices) {
                    out.tokens.ids[i] = baseline.token_id;
                }
                break;
            case GroupKind::lab_analyte:
                for (const std::size_t i : group.indices) {
                    out.labs.clear(i);
                }
                break;
            case GroupKind::demographic:
                out.demo = baseline.demographic;
                break;
        }
    }
    return out;
}

std::vector<Attribution> exact_shapley(const InstanceValue &f, const ExplainInstance &instance, const MaskPolicy &baseline, const std::vector<FeatureGroup> &groups) {
    if (groups.size() > kMaxExactPlayers) {
        throw CapacityError("exact Shapley supports at most " + std::to_string(kMaxExactPlayers) + " groups (got " + std::to_string(groups.size()) + "); use sampled mode");
    }
    validate_groups(groups, instance);
    const auto phi = exact_shapley([&](Coalition s) { return f(mask_instance(instance, groups, s, baseline)); }, groups.size());
    return to_attributions(groups, phi, nullptr);
}

std::vector<Attribution> sampled_shapley(const InstanceValue &f, const ExplainInstance &instance, const MaskPolicy &baseline, const std::vector<FeatureGroup> &groups, std::size_t n_permutations, std::uint64_t seed) {
    validate_groups(groups, instance);
    const SampledShapley result = sampled_shapley([&](Coalition s) { return f(mask_instance(instance, groups, s, baseline)); }, groups.size(), n_permutations, seed);
    return to_attributions(groups, result.phi, &result.standard_error);
}

std::string_view ranking_name(TokenRanking ranking) {
    return ranking == TokenRanking::occlusion ? "occlusion" : "attention";
}

std::optional<TokenRanking> parse_ranking(std::string_view name) {
    if (name == "occlusion") {
        return TokenRanking::occlusion;
    }
    if (name == "attention") {
        return TokenRanking::attention;
    }
    return std::nullopt;
}

ModelValue::ModelValue(const Model &model, ExplainTarget target) : model_(model), target_(target) {}

double ModelValue::operator()(const ExplainInstance &instance) {
    auto it = text_cache_.find(instance.tokens.ids);
    if (it == text_cache_.end()) {
        if (text_cache_.size() >= kTextCacheLimit) {
            text_cache_.clear();
        }
        it = text_cache_.emplace(instance.tokens.ids, encode_text(instance.tokens, model_.params)).first;
    }
    const LabTokens tokens = encode_labs(instance.labs, instance.demo, model_.params, model_.norm);
    const FusedRepresentation fused = fuse(it->second, tokens.lab, tokens.demo, model_.params);
    return target_value(Prediction{ predict_risks(fused, model_.params), predict_horizons(fused, model_.params) }, target_);
}

std::vector<FeatureGroup> build_groups(const Model &model, const PatientRecord &record, ExplainMode mode, std::size_t max_token_groups, ExplainTarget target, TokenRanking ranking) {
    require_trained(model);
    const TokenSequence seq = tokenize(record.note, model.vocab, model.params.arch.max_length);
    const auto words = split_words(record.note);
    const bool empty_note = words.empty();

    // attention received by each text position, averaged over heads
    std::vector<double> received(seq.size(), 0.0);
    if (!empty_note && ranking == TokenRanking::attention) {
        const Matrix text = encode_text(seq, model.params);
        const LabTokens tokens = encode_labs(record.labs, record.demo, model.params, model.norm);
        const FusedRepresentation fused = fuse(text, tokens.lab, tokens.demo, model.params);
        for (const Matrix &head : fused.attention_scores) {
            const RowVector column_sums = head.colwise().sum();
            for (std::size_t i = 0; i < seq.size(); ++i) {
                received[i] += column_sums(static_cast<Eigen::Index>(i)) / static_cast<double>(fused.attention_scores.size());
            }
        }
    }
    const ExplainInstance instance{ seq, record.labs, record.demo };
    ModelValue value(model, target);
    const double full = ranking == TokenRanking::occlusion ? value(instance) : 0.0;

    // distinct in-vocabulary words; [UNK] positions are dummies under the [UNK] baseline
    struct WordGroup {
        std::string word;
        double score = 0.0;
        std::vector<std::size_t> positions;
    };
    std::vector<WordGroup> word_groups;
    std::vector<std::size_t> unknown_positions;
    if (!empty_note) {
        std::map<std::string, std::size_t> by_word;
        for (std::size_t i = 0; i < seq.size(); ++i) {
            if (seq.ids[i] == Vocabulary::kUnknownId) {
                unknown_positions.push_back(i);
                continue;
            }
            const auto [it, inserted] = by_word.emplace(words[i].first, word_groups.size());
            if (inserted) {
                word_groups.push_back(WordGroup{ words[i].first, 0.0, {} });
            }
            word_groups[it->second].score += received[i];
            word_groups[it->second].positions.push_back(i);
        }
        if (ranking == TokenRanking::occlusion) {
            for (WordGroup &g : word_groups) {
                ExplainInstance masked = instance;
                for (const std::size_t i : g.positions) {
                    masked.tokens.ids[i] = Vocabulary::kUnknownId;
                }
                g.score = std::abs(full - value(masked));
            }
        }
        std::stable_sort(word_groups.begin(), word_groups.end(), [](const WordGroup &a, const WordGroup &b) {
            if (a.score != b.score) {
                return a.score > b.score;
            }
            return a.word < b.word;
        });
    }

    // analytes ranked by occlusion effect, or by distance from the training mean
    const RowVector lab_in = lab_input(record.labs, model.norm);
    std::vector<std::size_t> analytes;
    std::vector<double> analyte_score(record.labs.size(), 0.0);
    for (std::size_t i = 0; i < record.labs.size(); ++i) {
        if (!record.labs.mask[i]) {
            continue;
        }
        analytes.push_back(i);
        if (ranking == TokenRanking::occlusion && mode == ExplainMode::exact) {
            ExplainInstance masked = instance;
            masked.labs.clear(i);
            analyte_score[i] = std::abs(full - value(masked));
        } else {
            analyte_score[i] = std::abs(lab_in(static_cast<Eigen::Index>(i)));
        }
    }
    std::vector<std::size_t> analytes_ranked = analytes;
    std::stable_sort(analytes_ranked.begin(), analytes_ranked.end(), [&](std::size_t a, std::size_t b) { return analyte_score[a] > analyte_score[b]; });

    std::size_t token_budget = std::min(max_token_groups, word_groups.size());
    std::size_t lab_budget = analytes.size();
    auto group_count = [&] {
        const bool other_text = token_budget < word_groups.size() || !unknown_positions.empty();
        return token_budget + (other_text ? 1 : 0) + lab_budget + (lab_budget < analytes.size() ? 1 : 0) + 1;
    };
    if (mode == ExplainMode::exact) {
        while (group_count() > kMaxExactPlayers && (token_budget > 0 || lab_budget > 0)) {
            if (token_budget >= lab_budget) {
                --token_budget;
            } else {
                --lab_budget;
            }
        }
    }

    std::vector<FeatureGroup> groups;
    FeatureGroup other_text{ std::string(kOtherText), GroupKind::token_span, unknown_positions, {} };
    for (std::size_t w = 0; w < word_groups.size(); ++w) {
        if (w < token_budget) {
            FeatureGroup g{ word_groups[w].word, GroupKind::token_span, word_groups[w].positions, {} };
            groups.push_back(std::move(g));
        } else {
            other_text.indices.insert(other_text.indices.end(), word_groups[w].positions.begin(), word_groups[w].positions.end());
        }
    }
    if (!other_text.indices.empty()) {
        std::sort(other_text.indices.begin(), other_text.indices.end());
        groups.push_back(std::move(other_text));
    }
    for (auto &g : groups) {
        for (const std::size_t i : g.indices) {
            g.spans.push_back(seq.spans[i]);
        }
    }

    std::set<std::size_t> individual(analytes_ranked.begin(), analytes_ranked.begin() + static_cast<std::ptrdiff_t>(lab_budget));
    FeatureGroup other_labs{ std::string(kOtherLabs), GroupKind::lab_analyte, {}, {} };
    for (const std::size_t i : analytes) {
        if (individual.count(i)) {
            groups.push_back(FeatureGroup{ analyte_label(i, record.labs.size()), GroupKind::lab_analyte, { i }, {} });
        } else {
            other_labs.indices.push_back(i);
        }
    }
    if (!other_labs.indices.empty()) {
        groups.push_back(std::move(other_labs));
    }
    groups.push_back(FeatureGroup{ std::string(kDemographics), GroupKind::demographic, {}, {} });
    return groups;
}

Explanation explain_record(const Model &model, const PatientRecord &record, ExplainTarget target, const ExplainOptions &options) {
    require_trained(model);
    validate(record);

    ExplainMode mode = options.mode;
    std::vector<FeatureGroup> groups = build_groups(model, record, mode == ExplainMode::exact ? ExplainMode::exact : ExplainMode::sampled, options.max_token_groups, target, options.ranking);
    if (mode == ExplainMode::automatic) {
        mode = groups.size() <= kMaxExactPlayers ? ExplainMode::exact : ExplainMode::sampled;
    }

    ExplainInstance instance{ tokenize(record.note, model.vocab, model.params.arch.max_length), record.labs, record.demo };
    const MaskPolicy baseline = MaskPolicy::for_model(model);
    ModelValue value(model, target);
    InstanceValue f = [&](const ExplainInstance &x) { return value(x); };

    Explanation out;
    out.target = target;
    out.mode = mode;
    out.prediction = f(instance);
    out.baseline_value = f(mask_instance(instance, groups, 0, baseline));
    out.attributions = mode == ExplainMode::exact ? exact_shapley(f, instance, baseline, groups) : sampled_shapley(f, instance, baseline, groups, options.n_permutations, options.seed);
    std::stable_sort(out.attributions.begin(), out.attributions.end(), [](const Attribution &a, const Attribution &b) { return std::abs(a.phi) > std::abs(b.phi); });
    return out;
}

nlohmann::json to_json(const Explanation &e) {
    nlohmann::json attributions = nlohmann::json::array();
    for (const auto &a : e.attributions) {
        nlohmann::json item{ { "group_name", a.group.name }, { "kind", group_kind_name(a.group.kind) }, { "phi", a.phi }, { "indices", a.group.indices } };
        if (a.standard_error) {
            item["stderr"] = std::isfinite(*a.standard_error) ? nlohmann::json(*a.standard_error) : nlohmann::json(nullptr);
        }
        if (a.group.kind == GroupKind::token_span) {
            nlohmann::json spans = nlohmann::json::array();
            for (const auto &s : a.group.spans) {
                spans.push_back({ s.offset, s.length });
            }
            item["spans"] = std::move(spans);
        }
        attributions.push_back(std::move(item));
    }
    return { { "target", target_name(e.target) }, { "mode", mode_name(e.mode) }, { "baseline", e.baseline_value }, { "prediction", e.prediction }, { "attributions", std::move(attributions) } };
}

Explanation explanation_from_json(const nlohmann::json &j) {
    Explanation e;
    const auto target = parse_target(j.at("target").get<std::string>());
    const auto mode = parse_mode(j.value("mode", std::string("exact")));
    if (!target || !mode) {
        throw InvalidInputError("explanation has an unknown target or mode");
    }
    e.target = *target;
    e.mode = *mode;
    e.baseline_value = j.at("baseline").get<double>();
    e.prediction = j.at("prediction").get<double>();
    for (const auto &item : j.at("attributions")) {
        Attribution a;
        a.group.name = item.at("group_name").get<std::string>();
        const auto kind = item.at("kind").get<std::string>();
        if (kind == "token_span") {
            a.group.kind = GroupKind::token_span;
        } else if (kind == "lab_analyte") {
            a.group.kind = GroupKind::lab_analyte;
        } else if (kind == "demographic") {
            a.group.kind = GroupKind::demographic;
        } else {
            throw InvalidInputError("unknown group kind '" + kind + "'");
        }
        a.phi = item.at("phi").get<double>();
        a.group.indices = item.value("indices", std::vector<std::size_t>{});
        if (item.contains("stderr")) {
            a.standard_error = item.at("stderr").is_null() ? std::nan("") : item.at("stderr").get<double>();
        }
        if (item.contains("spans")) {
            for (const auto &s : item.at("spans")) {
                a.group.spans.push_back(TokenSpan{ s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>() });
            }
        }
        e.attributions.push_back(std::move(a));
    }
    return e;
}

}  // namespace ehrisk
