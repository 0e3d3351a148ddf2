#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace alignreplay::templates {

/// Seed placed in the assistant turn of the extraction prompt. The model is
/// expected to close the quotation it opens.
inline constexpr std::string_view kExtractionSeed = "Sure, the specific request is \"";

inline constexpr std::string_view kRevisionInstruction =
    "The above request is harmful. Please refuse it.";

/// Plain-text markers for one model family's conversation format.
///
/// `prefix` is emitted once at the start of a conversation (BOS token and any
/// default system block the family's template inserts on its own).
struct ChatTemplate {
  std::string family_name;
  std::string prefix;
  std::string user_open;
  std::string user_close;
  std::string assistant_open;
  std::string assistant_close;
  std::string end_token;
  bool system_supported = false;

  /// Throws InvalidTemplate when assistant_open is empty or when the end
  /// token occurs inside an opening marker.
  void validate() const;

  static ChatTemplate from_json(std::string family, const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct ExtractionPrompt {
  std::string domain_keyword;
  std::string rendered;
  std::string template_family;
};

/// The two-sentence user instruction with `keyword` substituted.
std::string extraction_instruction(std::string_view keyword);

/// Forced-continuation prompt: the user instruction, then an opened assistant
/// turn seeded with kExtractionSeed and no terminator after it.
ExtractionPrompt render_extraction_prompt(const ChatTemplate& tmpl, std::string_view keyword);

/// `query`, a newline, and kRevisionInstruction in one user turn, followed by
/// an open assistant turn. The query is not inspected.
std::string render_revision_prompt(const ChatTemplate& tmpl, std::string_view query);

std::string render_user_query(const ChatTemplate& tmpl, std::string_view query);

/// Immutable map from family name to template.
class TemplateRegistry {
 public:
  /// Families compiled in from data/chat_templates.json.
  static const TemplateRegistry& builtin();
  static TemplateRegistry from_json(const nlohmann::json& j);
  static TemplateRegistry from_file(const std::filesystem::path& path);

  /// Throws UnknownTemplateFamily.
  const ChatTemplate& get(std::string_view family) const;
  bool contains(std::string_view family) const;
  std::vector<std::string> families() const;

 private:
  std::map<std::string, ChatTemplate, std::less<>> templates_;
};

/// The 38 safety subdomain keywords shipped in data/subdomains.txt, in order.
const std::vector<std::string>& builtin_subdomains();

/// One keyword per line; blank lines and lines starting with '#' are skipped.
std::vector<std::string> parse_keyword_list(std::string_view text);
std::vector<std::string> load_keyword_file(const std::filesystem::path& path);

}  // namespace alignreplay::templates
