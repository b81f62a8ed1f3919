#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "touchbind/common.hpp"

namespace touchbind {

/// Prompt templates with a single [CLS] slot, plus the two grasp phrases.
/// Preloaded with three haptic/visual template pairs.
class PromptTemplateRegistry {
 public:
  static constexpr std::string_view kSlot = "[CLS]";
  static constexpr int kGraspStable = 0;
  static constexpr int kGraspSlip = 1;

  PromptTemplateRegistry() {
    for (const auto& [haptic, visual] : haptic_visual_pairs()) {
      add_template(visual);
      add_template(haptic);
    }
  }

  /// (haptic, visual) counterparts: "touch image" vs "image", "feels" vs "looks".
  static const std::vector<std::pair<std::string, std::string>>& haptic_visual_pairs() {
    static const std::vector<std::pair<std::string, std::string>> pairs = {
        {"This is a touch image of [CLS]", "This is an image of [CLS]"},
        {"This feels like [CLS]", "This looks like [CLS]"},
        {"Touch of [CLS]", "Image of [CLS]"},
    };
    return pairs;
  }

  static const std::array<std::string, 2>& grasp_phrases() {
    static const std::array<std::string, 2> phrases = {"the object is lifted in the air",
                                                       "the object is falling on the ground"};
    return phrases;
  }

  void add_template(const std::string& text) {
    const auto first = text.find(kSlot);
    require(first != std::string::npos && text.find(kSlot, first + 1) == std::string::npos,
            "template '" + text + "' must contain exactly one [CLS] slot");
    if (!has_template(text)) templates_.push_back(text);
  }

  bool has_template(std::string_view text) const {
    return std::find(templates_.begin(), templates_.end(), text) != templates_.end();
  }

  const std::vector<std::string>& templates() const { return templates_; }

  /// Haptic phrasing mentions feeling or touching.
  static bool is_haptic(std::string_view text) {
    std::string lower(text);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    return lower.find("feels") != std::string::npos || lower.find("touch") != std::string::npos;
  }

  std::string render(std::string_view template_text, std::string_view class_name) const {
    require(has_template(template_text), "unknown template '" + std::string(template_text) + "'");
    std::string out(template_text);
    out.replace(out.find(kSlot), kSlot.size(), class_name);
    return out;
  }

  struct ParsedPrompt {
    std::string key;  // the template text, or the grasp phrase itself
    std::optional<std::string> class_name;
    std::optional<int> grasp_index;
  };

  /// Splits a concrete prompt back into (template, class name). The class
  /// may be written bare ("wood") or bracketed ("[wood]").
  ParsedPrompt parse(std::string_view prompt) const {
    for (int g = 0; g < 2; ++g) {
      if (prompt == grasp_phrases()[g]) return {std::string(prompt), std::nullopt, g};
    }
    for (const auto& t : templates_) {
      const auto slot = t.find(kSlot);
      const std::string_view prefix(t.data(), slot);
      const std::string_view suffix(t.data() + slot + kSlot.size());
      if (prompt.size() <= prefix.size() + suffix.size()) continue;
      if (!prompt.starts_with(prefix) || !prompt.ends_with(suffix)) continue;
      std::string_view cls = prompt.substr(prefix.size(), prompt.size() - prefix.size() - suffix.size());
      if (cls.size() >= 2 && cls.front() == '[' && cls.back() == ']') cls = cls.substr(1, cls.size() - 2);
      if (cls.empty()) continue;
      return {t, std::string(cls), std::nullopt};
    }
    throw ValidationError("prompt '" + std::string(prompt) + "' matches no registered template");
  }

 private:
  std::vector<std::string> templates_;
};

}  // namespace touchbind
