#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace urbansense {

/// Prompt templates with {name} placeholders. The defaults are compiled in from prompts/*.txt;
/// a directory with files of the same names overrides them.
struct PromptSet {
    std::string caption;
    std::string propose_captions;   // {captions_a} {captions_b} {k}
    std::string propose_grid;       // {k}
    std::string propose_embedding;  // {phrases_a} {phrases_b} {k}
    std::string judge_image;        // {description}
    std::string judge_caption;      // {caption} {description}
    std::string judge_clarify;

    static PromptSet defaults();
    static PromptSet load(const std::filesystem::path& dir);
};

/// Replaces every {name} with its value. Throws Validation for a placeholder without a value.
std::string render_template(std::string_view text, const std::map<std::string, std::string>& values);

/// sha256 of the template text; stamped into candidate provenance.
std::string template_digest(std::string_view text);

}  // namespace urbansense
