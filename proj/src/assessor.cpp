#include "urbansense/assessor.hpp"

#include <algorithm>
#include <cmath>

#include "urbansense/io.hpp"
#include "urbansense/log.hpp"
#include "urbansense/numstat.hpp"
#include "urbansense/parallel.hpp"

namespace urbansense::assess {

using discover::CandidateDescription;
using nlohmann::json;
using providers::ImageRef;
using providers::ProviderClient;

const char* to_string(Scorer s) noexcept {
    switch (s) {
        case Scorer::Feature: return "feature";
        case Scorer::ImageJudge: return "image-judge";
        case Scorer::CaptionJudge: return "caption-judge";
    }
    return "?";
}

Scorer scorer_from_string(std::string_view s) {
    if (s == "feature") return Scorer::Feature;
    if (s == "image-judge") return Scorer::ImageJudge;
    if (s == "caption-judge") return Scorer::CaptionJudge;
    throw Error(ErrorKind::Validation, "unknown scorer '" + std::string(s) + "' (expected feature, image-judge or caption-judge)");
}

namespace {

// JSON has no infinities; degenerate t statistics are written as strings.
json number(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

double number_from(const json& j) {
    if (j.is_number()) return j.get<double>();
    const auto s = j.get<std::string>();
    if (s == "inf") return INFINITY;
    if (s == "-inf") return -INFINITY;
    if (s == "nan") return NAN;
    throw Error(ErrorKind::Validation, "not a number: " + s);
}

bool fatal(const Error& e) {
    return e.kind() == ErrorKind::ProviderAuth || e.kind() == ErrorKind::MissingProvider ||
           e.kind() == ErrorKind::Internal;
}

std::vector<ImageRef> refs(const std::vector<ImageRecord>& group) {
    std::vector<ImageRef> out;
    for (const auto& r : group) out.push_back({r.id, r.path});
    return out;
}

ScoredDescription unscored(CandidateDescription c, Scorer scorer, std::string why) {
    ScoredDescription s;
    s.candidate = std::move(c);
    s.scorer = scorer;
    s.scored = false;
    s.error = std::move(why);
    return s;
}

}  // namespace

json to_json(const ScoredDescription& s) {
    json j = {{"candidate", discover::to_json(s.candidate)}, {"scorer", to_string(s.scorer)}, {"scored", s.scored}};
    if (!s.scored) {
        j["error"] = s.error;
        return j;
    }
    j["scores_a"] = s.scores_a;
    j["scores_b"] = s.scores_b;
    j["d_y"] = s.d_y;
    j["auroc"] = s.auroc;
    j["t_stat"] = number(s.t_stat);
    j["df"] = s.df;
    j["p_value"] = s.p_value;
    j["degenerate"] = s.degenerate;
    j["significant"] = s.significant;
    return j;
}

ScoredDescription scored_from_json(const json& j) {
    try {
        ScoredDescription s;
        s.candidate = discover::candidate_from_json(j.at("candidate"));
        s.scorer = scorer_from_string(j.at("scorer").get<std::string>());
        s.scored = j.at("scored").get<bool>();
        if (!s.scored) {
            s.error = j.value("error", std::string());
            return s;
        }
        s.scores_a = j.at("scores_a").get<std::vector<double>>();
        s.scores_b = j.at("scores_b").get<std::vector<double>>();
        s.d_y = j.at("d_y").get<double>();
        s.auroc = j.at("auroc").get<double>();
        s.t_stat = number_from(j.at("t_stat"));
        s.df = j.at("df").get<double>();
        s.p_value = j.at("p_value").get<double>();
        s.degenerate = j.value("degenerate", false);
        s.significant = j.at("significant").get<bool>();
        return s;
    } catch (const json::exception& e) {
        throw Error(ErrorKind::Schema, std::string("scored record: ") + e.what());
    }
}

std::string format_scored_jsonl(const std::vector<ScoredDescription>& s) {
    std::string out;
    for (const auto& x : s) out += to_json(x).dump() + "\n";
    return out;
}

std::vector<ScoredDescription> parse_scored_jsonl(std::string_view text) {
    std::vector<ScoredDescription> out;
    std::size_t n = 0;
    for (const auto& line : io::split_lines(text)) {
        ++n;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception&) {
            throw Error(ErrorKind::Validation, "scored line " + std::to_string(n) + " is not JSON");
        }
        out.push_back(scored_from_json(j));
    }
    return out;
}

std::string format_scored_csv(const std::vector<ScoredDescription>& s) {
    std::string out = io::csv_row({"text", "direction", "proposer", "round", "pair", "scorer", "scored", "d_y", "auroc",
                                   "t", "df", "p", "significant"});
    for (const auto& x : s) {
        const auto& c = x.candidate;
        std::vector<std::string> row{c.text, discover::to_string(c.direction), discover::to_string(c.proposer),
                                     std::to_string(c.round_index), c.pair, to_string(x.scorer),
                                     x.scored ? "true" : "false"};
        if (x.scored) {
            for (double v : {x.d_y, x.auroc, x.t_stat, x.df, x.p_value}) row.push_back(io::format_double(v));
            row.emplace_back(x.significant ? "true" : "false");
        } else {
            row.insert(row.end(), 6, "");
        }
        out += io::csv_row(row);
    }
    return out;
}

std::vector<double> score_feature(const std::vector<EmbeddingVector>& images, const EmbeddingVector& description) {
    std::vector<double> out;
    out.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        if (images[i].dim() != description.dim())
            throw Error(ErrorKind::Validation, "score_feature: image " + std::to_string(i) + " has dim " +
                                                   std::to_string(images[i].dim()) + ", description has dim " +
                                                   std::to_string(description.dim()));
        out.push_back(numstat::cosine_similarity(images[i], description));
    }
    return out;
}

std::vector<double> score_image_judge(const std::vector<ImageRef>& images, const std::string& description,
                                      ProviderClient& judge, const PromptSet& prompts) {
    std::vector<double> out(images.size());
    parallel_for(images.size(), static_cast<std::size_t>(judge.config().max_parallel), [&](std::size_t i) {
        try {
            out[i] = providers::judge(judge, images[i], description, prompts);
        } catch (const JudgeParseError& e) {
            throw JudgeParseError("image '" + images[i].id + "': " + e.what(), e.raw());
        }
    });
    return out;
}

std::vector<double> score_caption_judge(const std::vector<ImageRef>& images, const std::string& description,
                                        ProviderClient& captioner, ProviderClient& judge, const PromptSet& prompts) {
    std::vector<double> out(images.size());
    parallel_for(images.size(), static_cast<std::size_t>(judge.config().max_parallel), [&](std::size_t i) {
        const auto w = providers::caption(captioner, images[i], prompts.caption);
        try {
            out[i] = providers::judge(judge, w, description, prompts);
        } catch (const JudgeParseError& e) {
            throw JudgeParseError("image '" + images[i].id + "': " + e.what(), e.raw());
        }
    });
    return out;
}

double discriminative_score(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw Error(ErrorKind::EmptyInput, "discriminative score needs scores for both groups");
    return numstat::mean(a) - numstat::mean(b);
}

ScoredDescription score_statistics(CandidateDescription candidate, Scorer scorer, std::vector<double> scores_a,
                                   std::vector<double> scores_b, double alpha) {
    ScoredDescription s;
    s.candidate = std::move(candidate);
    s.scorer = scorer;
    s.scores_a = std::move(scores_a);
    s.scores_b = std::move(scores_b);
    s.d_y = discriminative_score(s.scores_a, s.scores_b);
    s.auroc = numstat::auroc(s.scores_a, s.scores_b);
    const auto t = numstat::welch_t_test(s.scores_a, s.scores_b);
    s.t_stat = t.t_stat;
    s.df = t.df;
    s.p_value = t.p_value;
    s.degenerate = t.degenerate;
    s.significant = s.p_value < alpha;
    s.scored = true;
    return s;
}

std::vector<ScoredDescription> assess_features(const std::vector<CandidateDescription>& candidates,
                                               const std::vector<std::optional<EmbeddingVector>>& descriptions,
                                               const std::vector<EmbeddingVector>& images_a,
                                               const std::vector<EmbeddingVector>& images_b, double alpha) {
    if (descriptions.size() != candidates.size())
        throw Error(ErrorKind::Internal, "assess_features: one description embedding per candidate expected");
    std::vector<ScoredDescription> out;
    out.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (!descriptions[i]) {
            out.push_back(unscored(candidates[i], Scorer::Feature, "description embedding unavailable"));
            continue;
        }
        out.push_back(score_statistics(candidates[i], Scorer::Feature, score_feature(images_a, *descriptions[i]),
                                       score_feature(images_b, *descriptions[i]), alpha));
    }
    return out;
}

std::vector<ScoredDescription> assess(const std::vector<CandidateDescription>& candidates,
                                      const std::vector<ImageRecord>& group_a, const std::vector<ImageRecord>& group_b,
                                      const AssessContext& ctx) {
    if (!(ctx.alpha > 0.0 && ctx.alpha <= 1.0))
        throw Error(ErrorKind::Validation, "alpha must be in (0, 1]");
    if (group_a.size() < 2 || group_b.size() < 2)
        throw Error(ErrorKind::EmptyInput, "each group needs at least 2 images for the t-test");
    const auto ra = refs(group_a);
    const auto rb = refs(group_b);

    auto need = [](ProviderClient* p, const char* role) -> ProviderClient& {
        if (!p) throw Error(ErrorKind::MissingProvider, std::string("scorer needs a configured ") + role);
        return *p;
    };

    if (ctx.scorer == Scorer::Feature) {
        auto& embedder = need(ctx.embedder, "embedder");
        const auto workers = static_cast<std::size_t>(embedder.config().max_parallel);
        auto embed_group = [&](const std::vector<ImageRef>& g) {
            std::vector<std::optional<EmbeddingVector>> v(g.size());
            parallel_for(g.size(), workers, [&](std::size_t i) { v[i] = providers::embed_image(embedder, g[i]); });
            std::vector<EmbeddingVector> out;
            for (auto& x : v) out.push_back(std::move(*x));
            return out;
        };
        std::vector<EmbeddingVector> ea, eb;
        try {
            ea = embed_group(ra);
            eb = embed_group(rb);
        } catch (const Error& e) {
            if (fatal(e)) throw;
            log::error(std::string("image embeddings failed: ") + e.what());
            std::vector<ScoredDescription> out;
            for (const auto& c : candidates)
                out.push_back(unscored(c, Scorer::Feature, std::string("image embedding failed: ") + e.what()));
            return out;
        }
        std::vector<std::optional<EmbeddingVector>> desc(candidates.size());
        std::vector<std::string> errors(candidates.size());
        parallel_for(candidates.size(), workers, [&](std::size_t i) {
            try {
                desc[i] = providers::embed_text(embedder, candidates[i].text);
            } catch (const Error& e) {
                if (fatal(e)) throw;
                errors[i] = e.what();
            }
        });
        auto out = assess_features(candidates, desc, ea, eb, ctx.alpha);
        for (std::size_t i = 0; i < out.size(); ++i)
            if (!out[i].scored) out[i].error = "description embedding failed: " + errors[i];
        return out;
    }

    auto& judge = need(ctx.judge, "judge");
    ProviderClient* captioner = ctx.scorer == Scorer::CaptionJudge ? &need(ctx.captioner, "captioner") : nullptr;
    std::vector<ScoredDescription> out;
    out.reserve(candidates.size());
    for (const auto& c : candidates) {
        try {
            auto score = [&](const std::vector<ImageRef>& g) {
                return captioner ? score_caption_judge(g, c.text, *captioner, judge, ctx.prompts)
                                 : score_image_judge(g, c.text, judge, ctx.prompts);
            };
            auto sa = score(ra);
            auto sb = score(rb);
            out.push_back(score_statistics(c, ctx.scorer, std::move(sa), std::move(sb), ctx.alpha));
        } catch (const Error& e) {
            if (fatal(e)) throw;
            log::warn("candidate '" + c.text + "' unscored: " + e.what());
            out.push_back(unscored(c, ctx.scorer, e.what()));
        }
    }
    return out;
}

std::vector<ScoredDescription> rank_and_filter(const std::vector<ScoredDescription>& scored, double alpha,
                                               std::optional<std::size_t> top_k) {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw Error(ErrorKind::Validation, "alpha must be in (0, 1]");
    std::vector<ScoredDescription> out;
    for (const auto& s : scored)
        if (s.scored && s.p_value < alpha) out.push_back(s);
    std::stable_sort(out.begin(), out.end(), [](const ScoredDescription& x, const ScoredDescription& y) {
        if (x.auroc != y.auroc) return x.auroc > y.auroc;
        if (std::abs(x.d_y) != std::abs(y.d_y)) return std::abs(x.d_y) > std::abs(y.d_y);
        return x.candidate.text < y.candidate.text;
    });
    if (top_k && out.size() > *top_k) out.resize(*top_k);
    return out;
}

PassRate pass_rate(const std::vector<ScoredDescription>& scored) {
    PassRate r;
    for (const auto& s : scored) {
        if (!s.scored) continue;
        ++r.scored;
        r.significant += s.significant;
    }
    r.rate = r.scored ? static_cast<double>(r.significant) / static_cast<double>(r.scored) : 0.0;
    return r;
}

}  // namespace urbansense::assess
