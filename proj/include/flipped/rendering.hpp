#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "flipped/schema.hpp"
#include "flipped/text.hpp"
#include "flipped/vocab.hpp"

namespace flipped {

enum class RenderMode { kDirect, kChannel, kFlipped };

inline std::string to_string(RenderMode m) {
  switch (m) {
    case RenderMode::kDirect: return "direct";
    case RenderMode::kChannel: return "channel";
    case RenderMode::kFlipped: return "flipped";
  }
  throw std::runtime_error("unreachable");
}
inline RenderMode render_mode_from_string(const std::string& s) {
  if (s == "direct") return RenderMode::kDirect;
  if (s == "channel") return RenderMode::kChannel;
  if (s == "flipped") return RenderMode::kFlipped;
  throw std::runtime_error("unknown render mode: " + s);
}

/// A tokenizable (source, target) text pair for one label option.
///
/// Layout rules, fixed for bit-exact goldens:
///  - pieces are whitespace-normalized and joined with single spaces;
///    empty pieces are skipped; no leading/trailing whitespace
///  - every target ends with the end-of-sequence glyph, glued to the
///    final piece without a space
///  - flipped sources replace the i-th instruction segment with sentinel
///    i; flipped targets interleave sentinels and instruction text and
///    close with sentinel n
///  - a label slot places the label surface at that position; without a
///    slot the label is appended after the last piece
struct RenderedExample {
  std::string source_text;
  std::string target_text;
  RenderMode mode = RenderMode::kDirect;
  int label_index = 0;  // -1 when the label surface is foreign to options
  int sentinel_count = 0;
};

namespace detail {

inline void append_piece(std::vector<std::string>& pieces,
                         const std::string& raw) {
  std::string s = normalize_ws(raw);
  if (!s.empty()) pieces.push_back(std::move(s));
}

inline std::string input_field(const PromptTemplate& t, const Instance& inst,
                               const std::string& field) {
  auto it = inst.inputs.find(field);
  if (it == inst.inputs.end())
    throw std::runtime_error("template '" + t.template_id +
                             "' references missing input field '" + field +
                             "'");
  return it->second;
}

/// Prompted input with the label removed: instructions and inputs in
/// template order, label slot skipped.
inline std::string prompt_without_label(const PromptTemplate& t,
                                        const Instance& inst) {
  std::vector<std::string> pieces;
  for (const auto& seg : t.segments) {
    switch (seg.kind) {
      case SegmentKind::kInstruction: append_piece(pieces, seg.text); break;
      case SegmentKind::kInputSlot:
        append_piece(pieces, input_field(t, inst, seg.field));
        break;
      case SegmentKind::kLabelSlot: break;
    }
  }
  return join(pieces);
}

/// Prompted input with instruction segments masked by sentinels and the
/// label surface in place (at the slot, or appended).
inline std::string flipped_source(const PromptTemplate& t,
                                  const Instance& inst,
                                  const std::string& label_surface) {
  std::vector<std::string> pieces;
  int next_sentinel = 0;
  bool label_placed = false;
  for (const auto& seg : t.segments) {
    switch (seg.kind) {
      case SegmentKind::kInstruction:
        if (normalize_ws(seg.text).empty())
          throw std::runtime_error(
              "flipped rendering requires non-empty instruction text "
              "(template '" + t.template_id + "')");
        pieces.push_back(Vocabulary::sentinel_glyph(next_sentinel++));
        break;
      case SegmentKind::kInputSlot:
        append_piece(pieces, input_field(t, inst, seg.field));
        break;
      case SegmentKind::kLabelSlot:
        append_piece(pieces, label_surface);
        label_placed = true;
        break;
    }
  }
  if (!label_placed) append_piece(pieces, label_surface);
  return join(pieces);
}

/// Sentinel-delimited instruction segments: s0 seg0 s1 seg1 ... s_n, eos.
inline std::string flipped_target(const PromptTemplate& t) {
  std::vector<std::string> pieces;
  int k = 0;
  for (const auto& seg : t.segments) {
    if (seg.kind != SegmentKind::kInstruction) continue;
    pieces.push_back(Vocabulary::sentinel_glyph(k++));
    append_piece(pieces, seg.text);
  }
  pieces.push_back(Vocabulary::sentinel_glyph(k));
  return join(pieces) + Vocabulary::eos_glyph();
}

inline RenderedExample render_with_surface(RenderMode mode,
                                           const PromptTemplate& t,
                                           const Instance& inst,
                                           const std::string& label_surface,
                                           int label_index) {
  RenderedExample ex;
  ex.mode = mode;
  ex.label_index = label_index;
  const std::string label = normalize_ws(label_surface);
  if (label.empty()) throw std::runtime_error("empty label surface");

  switch (mode) {
    case RenderMode::kDirect:
      ex.source_text = prompt_without_label(t, inst);
      ex.target_text = label + Vocabulary::eos_glyph();
      break;
    case RenderMode::kChannel:
      ex.source_text = label;
      ex.target_text = prompt_without_label(t, inst) + Vocabulary::eos_glyph();
      break;
    case RenderMode::kFlipped: {
      const int n = t.instruction_count();
      if (n < 1)
        throw std::runtime_error("flipped rendering requires at least one "
                                 "instruction segment (template '" +
                                 t.template_id + "')");
      ex.sentinel_count = n;
      ex.source_text = flipped_source(t, inst, label);
      ex.target_text = flipped_target(t);
      break;
    }
  }
  return ex;
}

}  // namespace detail

/// Renders one (template, instance, label option) under a mode.
inline RenderedExample render(RenderMode mode, const PromptTemplate& t,
                              const Instance& inst, const Verbalizer& v,
                              int label_index) {
  if (label_index < 0 || label_index >= inst.options.size())
    throw std::runtime_error("label index " + std::to_string(label_index) +
                             " out of range for " +
                             std::to_string(inst.options.size()) +
                             " options");
  const std::string surface =
      verbalize(v, inst.options.raw_labels[label_index]);
  return detail::render_with_surface(mode, t, inst, surface, label_index);
}

/// Renders a label surface that need not belong to the instance's own
/// option set (negative sampling from other instances). label_index is -1.
inline RenderedExample render_foreign_label(RenderMode mode,
                                            const PromptTemplate& t,
                                            const Instance& inst,
                                            const std::string& surface) {
  return detail::render_with_surface(mode, t, inst, surface, -1);
}

/// One rendering per label option, in option order.
inline std::vector<RenderedExample> render_all_options(RenderMode mode,
                                                       const PromptTemplate& t,
                                                       const Instance& inst,
                                                       const Verbalizer& v) {
  std::vector<RenderedExample> out;
  out.reserve(inst.options.size());
  for (int i = 0; i < inst.options.size(); ++i)
    out.push_back(render(mode, t, inst, v, i));
  return out;
}

}  // namespace flipped
