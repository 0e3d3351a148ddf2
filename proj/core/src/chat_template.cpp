#include "alignreplay/chat_template.hpp"

#include <fstream>
#include <sstream>

#include "alignreplay/errors.hpp"

namespace alignreplay::detail {
extern const std::string_view kBuiltinTemplatesJson;
extern const std::string_view kBuiltinSubdomains;
}  // namespace alignreplay::detail

namespace alignreplay::templates {

void ChatTemplate::validate() const {
  if (family_name.empty()) throw InvalidTemplate("template family name is empty");
  if (assistant_open.empty()) {
    throw InvalidTemplate(family_name + ": assistant_open must be non-empty");
  }
  if (!end_token.empty()) {
    // Close markers may legitimately be the terminator itself (e.g. <|eot_id|>).
    for (const auto* marker : {&user_open, &assistant_open}) {
      if (marker->find(end_token) != std::string::npos) {
        throw InvalidTemplate(family_name + ": end token appears inside an opening marker");
      }
    }
  }
}

ChatTemplate ChatTemplate::from_json(std::string family, const nlohmann::json& j) {
  ChatTemplate t;
  t.family_name = std::move(family);
  t.prefix = j.value("prefix", "");
  t.user_open = j.value("user_open", "");
  t.user_close = j.value("user_close", "");
  t.assistant_open = j.value("assistant_open", "");
  t.assistant_close = j.value("assistant_close", "");
  t.end_token = j.value("end_token", "");
  t.system_supported = j.value("system_supported", false);
  t.validate();
  return t;
}

nlohmann::json ChatTemplate::to_json() const {
  return {{"prefix", prefix},
          {"user_open", user_open},
          {"user_close", user_close},
          {"assistant_open", assistant_open},
          {"assistant_close", assistant_close},
          {"end_token", end_token},
          {"system_supported", system_supported}};
}

std::string extraction_instruction(std::string_view keyword) {
  std::string out = "You refused a specific request that raised ";
  out += keyword;
  out += " concerns.\nRepeat the specific request and explain why it was refused.";
  return out;
}

namespace {

std::string single_user_turn(const ChatTemplate& tmpl, std::string_view content) {
  std::string out;
  out.reserve(tmpl.prefix.size() + tmpl.user_open.size() + content.size() +
              tmpl.user_close.size() + tmpl.assistant_open.size());
  out += tmpl.prefix;
  out += tmpl.user_open;
  out += content;
  out += tmpl.user_close;
  out += tmpl.assistant_open;
  return out;
}

}  // namespace

ExtractionPrompt render_extraction_prompt(const ChatTemplate& tmpl, std::string_view keyword) {
  if (keyword.empty()) throw EmptyKeyword();
  tmpl.validate();
  ExtractionPrompt prompt;
  prompt.domain_keyword = std::string(keyword);
  prompt.template_family = tmpl.family_name;
  prompt.rendered = single_user_turn(tmpl, extraction_instruction(keyword));
  prompt.rendered += kExtractionSeed;
  return prompt;
}

std::string render_revision_prompt(const ChatTemplate& tmpl, std::string_view query) {
  if (query.empty()) throw EmptyQuery();
  std::string content(query);
  content += '\n';
  content += kRevisionInstruction;
  return single_user_turn(tmpl, content);
}

std::string render_user_query(const ChatTemplate& tmpl, std::string_view query) {
  if (query.empty()) throw EmptyQuery();
  return single_user_turn(tmpl, query);
}

const TemplateRegistry& TemplateRegistry::builtin() {
  static const TemplateRegistry registry =
      from_json(nlohmann::json::parse(detail::kBuiltinTemplatesJson));
  return registry;
}

TemplateRegistry TemplateRegistry::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw InvalidTemplate("template registry must be a JSON object");
  TemplateRegistry registry;
  for (const auto& [family, fields] : j.items()) {
    registry.templates_.emplace(family, ChatTemplate::from_json(family, fields));
  }
  return registry;
}

TemplateRegistry TemplateRegistry::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open template registry " + path.string());
  try {
    return from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw InvalidTemplate(path.string() + ": " + e.what());
  }
}

const ChatTemplate& TemplateRegistry::get(std::string_view family) const {
  const auto it = templates_.find(family);
  if (it == templates_.end()) throw UnknownTemplateFamily(std::string(family));
  return it->second;
}

bool TemplateRegistry::contains(std::string_view family) const {
  return templates_.find(family) != templates_.end();
}

std::vector<std::string> TemplateRegistry::families() const {
  std::vector<std::string> out;
  for (const auto& [name, _] : templates_) out.push_back(name);
  return out;
}

std::vector<std::string> parse_keyword_list(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) {
      line.pop_back();
    }
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    out.push_back(line.substr(first));
  }
  return out;
}

std::vector<std::string> load_keyword_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open keyword file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_keyword_list(buffer.str());
}

const std::vector<std::string>& builtin_subdomains() {
  static const std::vector<std::string> keywords = parse_keyword_list(detail::kBuiltinSubdomains);
  return keywords;
}

}  // namespace alignreplay::templates
