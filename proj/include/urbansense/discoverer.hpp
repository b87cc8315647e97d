#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "urbansense/corpus.hpp"
#include "urbansense/embedding.hpp"
#include "urbansense/prompts.hpp"
#include "urbansense/providers.hpp"

namespace urbansense::discover {

enum class Proposer { Caption, Grid, Embedding };
enum class Direction { DescribesA, DescribesB };

const char* to_string(Proposer p) noexcept;
const char* to_string(Direction d) noexcept;
Proposer proposer_from_string(std::string_view s);
Direction direction_from_string(std::string_view s);

struct CandidateDescription {
    std::string text;
    Proposer proposer = Proposer::Caption;
    std::uint32_t round_index = 0;
    std::string subset_a;  // SampledSubset ids
    std::string subset_b;
    Direction direction = Direction::DescribesA;
    std::string pair;             // "city:period vs city:period"
    std::string template_digest;  // sha256 of the prompt template used

    friend bool operator==(const CandidateDescription&, const CandidateDescription&) = default;
};

nlohmann::json to_json(const CandidateDescription& c);
CandidateDescription candidate_from_json(const nlohmann::json& j);

std::string format_candidates_jsonl(const std::vector<CandidateDescription>& cs);
std::vector<CandidateDescription> parse_candidates_jsonl(std::string_view text);

/// Collapses runs of whitespace to one space and trims.
std::string normalize_whitespace(std::string_view text);

/// One proposer round: the two subsets it sees.
struct SubsetPair {
    std::uint32_t round_index = 0;
    SampledSubset subset_a;
    SampledSubset subset_b;
    std::vector<ImageRecord> images_a;
    std::vector<ImageRecord> images_b;
};

/// Samples `rounds` subset pairs from a partition. With resample=false every round sees the
/// subsets of round 0.
std::vector<SubsetPair> make_rounds(const GroupPartition& groups, std::size_t subset_size, std::uint32_t rounds,
                                    std::uint64_t seed, bool resample = true);

struct ProposeOptions {
    std::size_t k = 5;  // candidates per direction per round
    PromptSet prompts = PromptSet::defaults();
    std::string pair_label;
};

struct Proposals {
    std::vector<CandidateDescription> candidates;
    std::vector<std::string> notes;
};

/// Parses a model reply of the form {"A": [...], "B": [...]} (surrounding prose and code
/// fences are tolerated). At most k entries per side are kept. Throws ProviderProtocol.
std::pair<std::vector<std::string>, std::vector<std::string>> parse_proposal_reply(std::string_view reply,
                                                                                   std::size_t k);

/// Captions every image of each round's subsets, then asks the text model for k
/// descriptions per direction. Rounds run sequentially; captioning within a round is
/// concurrent up to the captioner's max_parallel.
Proposals propose_via_captions(const std::vector<SubsetPair>& rounds, providers::ProviderClient& captioner,
                               providers::ProviderClient& text_model, const ProposeOptions& options);

struct GridLayout {
    int columns = 0;
    int rows = 0;
    int width = 0;
    int height = 0;
};

inline constexpr int kGridColumns = 5;
inline constexpr int kTileSize = 256;

GridLayout grid_layout(std::size_t tiles);

struct GridImage {
    std::string png;  // encoded bytes
    GridLayout layout;
    std::size_t tiles = 0;
    std::vector<std::string> skipped;  // ids of undecodable images
};

/// Composites images row-major, each letterboxed into a white 256x256 tile. Undecodable
/// images are skipped; throws Validation when none can be decoded.
GridImage compose_grid(const std::vector<ImageRecord>& images);

/// One grid per subset, both sent in a single multimodal request to the captioner.
Proposals propose_via_grid(const std::vector<SubsetPair>& rounds, providers::ProviderClient& captioner,
                           const ProposeOptions& options);

struct EmbeddingProposeOptions {
    std::size_t neighbors = 10;  // phrases retrieved per direction
    std::vector<std::string> phrase_bank;  // falls back to the subsets' manifest captions when empty
};

/// Indices of the `m` phrases with highest cosine to `direction`, ties broken by index.
std::vector<std::size_t> nearest_phrases(std::span<const double> direction,
                                         const std::vector<EmbeddingVector>& phrases, std::size_t m);

/// Mean image embedding per subset; the difference vector is grounded in language by its
/// nearest phrases, which the text model turns into k descriptions per direction. A zero
/// difference yields no candidates and a "no separation" note.
Proposals propose_via_embeddings(const std::vector<SubsetPair>& rounds, providers::ProviderClient& embedder,
                                 providers::ProviderClient& text_model, const ProposeOptions& options,
                                 const EmbeddingProposeOptions& embed_options);

using TextEmbedFn = std::function<EmbeddingVector(const std::string&)>;

inline constexpr double kNearDuplicateCosine = 0.95;

/// Removes exact duplicates (case and whitespace folded) and near duplicates (text embedding
/// cosine >= 0.95) within each (pair, direction) group. The survivor of a duplicate cluster
/// is the earliest by round, then by text. Survivors keep their input order. Without an
/// embedding function only exact duplicates are removed.
std::vector<CandidateDescription> dedup(const std::vector<CandidateDescription>& candidates,
                                        const TextEmbedFn& embed = {});

}  // namespace urbansense::discover
