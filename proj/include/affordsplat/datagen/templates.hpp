#pragma once

#include <array>
#include <string>

#include "affordsplat/core/errors.hpp"
#include "affordsplat/textmod/vocab.hpp"

namespace affordsplat::datagen {

inline constexpr int kNumQuestionTemplates = 15;
inline constexpr int kNumAnswerTemplates = 3;

// {cat} and {aff} are filled at instantiation time. Answers carry the
// affordance word immediately followed by the marker token.
inline const std::array<std::string, kNumQuestionTemplates>& question_templates() {
  static const std::array<std::string, kNumQuestionTemplates> q = {
      "Which part of the {cat} supports the {aff} action?",
      "Where should I {aff} the {cat}?",
      "Show the region of the {cat} used to {aff} it.",
      "If I want to {aff} this {cat}, which area matters?",
      "Highlight the surface of the {cat} that affords {aff}.",
      "What region of this {cat} can be used to {aff}?",
      "Point out where the {cat} supports {aff}.",
      "Identify the part of the {cat} relevant for {aff}.",
      "To {aff} the {cat}, which part should be involved?",
      "Locate the area on the {cat} enabling {aff}.",
      "Which surface of the {cat} relates to the {aff} interaction?",
      "Mark the {cat} region that allows one to {aff} it.",
      "Can you find the part of this {cat} meant for {aff}?",
      "Tell me which zone of the {cat} is functional for {aff}.",
      "For the action {aff}, what part of the {cat} applies?"};
  return q;
}

inline const std::array<std::string, kNumAnswerTemplates>& answer_templates() {
  static const std::array<std::string, kNumAnswerTemplates> a = {
      std::string("The region that supports {aff} ") + textmod::kAffMarker +
          " is highlighted on the {cat}.",
      std::string("You can {aff} ") + textmod::kAffMarker +
          " the {cat} at the marked area.",
      std::string("This part of the {cat} affords {aff} ") +
          textmod::kAffMarker + " as shown."};
  return a;
}

struct InstructionRecord {
  std::string question;
  std::string answer;
  std::string category;
  std::string affordance;
  int template_id = 0;
  int variant = 0;
};

namespace detail {
inline std::string fill(std::string tpl, const std::string& cat,
                        const std::string& aff) {
  for (const auto& [key, val] :
       {std::pair<std::string, const std::string&>{"{cat}", cat},
        std::pair<std::string, const std::string&>{"{aff}", aff}}) {
    std::size_t pos;
    while ((pos = tpl.find(key)) != std::string::npos)
      tpl.replace(pos, key.size(), val);
  }
  return tpl;
}
}  // namespace detail

inline InstructionRecord make_instruction(const std::string& category,
                                          const std::string& affordance,
                                          int template_id, int variant) {
  if (template_id < 0 || template_id >= kNumQuestionTemplates)
    throw ArgumentError("template_id out of [0,14]");
  if (variant < 0 || variant >= kNumAnswerTemplates)
    throw ArgumentError("variant out of [0,2]");
  InstructionRecord rec;
  rec.category = category;
  rec.affordance = affordance;
  rec.template_id = template_id;
  rec.variant = variant;
  rec.question = detail::fill(question_templates()[(std::size_t)template_id],
                              category, affordance);
  rec.answer = detail::fill(answer_templates()[(std::size_t)variant], category,
                            affordance);
  return rec;
}

// The supervision target is the pair's fixed answer (variant 0).
inline InstructionRecord fixed_answer_instruction(const std::string& category,
                                                  const std::string& affordance,
                                                  int template_id) {
  return make_instruction(category, affordance, template_id, 0);
}

}  // namespace affordsplat::datagen
