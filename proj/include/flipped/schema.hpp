#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "flipped/text.hpp"

namespace flipped {

/// Ordered abstract label identifiers with the index of the correct one.
struct LabelOptionSet {
  std::vector<std::string> raw_labels;
  int correct_index = 0;

  int size() const { return static_cast<int>(raw_labels.size()); }
};

/// Maps abstract label identifiers to surface strings. An identity
/// verbalizer passes raw identifiers through unchanged, which is the
/// natural choice for multi-choice tasks whose options vary per instance.
struct Verbalizer {
  std::string name;
  std::map<std::string, std::string> mapping;
  bool identity = false;
};

/// Returns the surface string for a raw label under a verbalizer.
inline std::string verbalize(const Verbalizer& v, const std::string& raw) {
  auto it = v.mapping.find(raw);
  if (it != v.mapping.end()) return it->second;
  if (v.identity) return raw;
  throw std::runtime_error("verbalizer '" + v.name +
                           "' has no surface for label '" + raw + "'");
}

enum class SegmentKind { kInstruction, kInputSlot, kLabelSlot };

struct Segment {
  SegmentKind kind = SegmentKind::kInstruction;
  std::string text;   // kInstruction: instruction text
  std::string field;  // kInputSlot: instance field name
};

/// A prompt as an explicit sequence of tagged pieces. Instruction/input
/// separation is part of the schema, not recovered heuristically.
struct PromptTemplate {
  std::string template_id;
  std::vector<Segment> segments;

  int instruction_count() const {
    int n = 0;
    for (const auto& s : segments)
      if (s.kind == SegmentKind::kInstruction) ++n;
    return n;
  }
  int label_slot_count() const {
    int n = 0;
    for (const auto& s : segments)
      if (s.kind == SegmentKind::kLabelSlot) ++n;
    return n;
  }
};

struct Instance {
  std::map<std::string, std::string> inputs;
  LabelOptionSet options;
};

enum class TaskKind { kClassification, kMultiChoice };

inline std::string to_string(TaskKind k) {
  return k == TaskKind::kClassification ? "classification" : "multi_choice";
}
inline TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::kClassification;
  if (s == "multi_choice") return TaskKind::kMultiChoice;
  throw std::runtime_error("unknown task_kind: " + s);
}

struct TaskSet {
  std::string task_id;
  TaskKind kind = TaskKind::kClassification;
  std::vector<PromptTemplate> templates;
  std::vector<Verbalizer> verbalizers;
  std::vector<Instance> instances;
  std::optional<std::size_t> instance_cap;

  /// Union of raw labels over all instances, in first-seen order.
  std::vector<std::string> raw_label_union() const {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& inst : instances) {
      for (const auto& y : inst.options.raw_labels) {
        if (seen.insert(y).second) out.push_back(y);
      }
    }
    return out;
  }
};

namespace detail {

inline void validate_template(const PromptTemplate& t) {
  if (t.segments.empty())
    throw std::runtime_error("template '" + t.template_id + "' is empty");
  if (t.instruction_count() < 1)
    throw std::runtime_error("template '" + t.template_id +
                             "' has no instruction segment");
  if (t.label_slot_count() > 1)
    throw std::runtime_error("template '" + t.template_id +
                             "' has more than one label slot");
  for (const auto& s : t.segments) {
    if (s.kind == SegmentKind::kInputSlot && s.field.empty())
      throw std::runtime_error("template '" + t.template_id +
                               "' has an input slot without a field name");
  }
}

inline void validate_instance_against_template(const TaskSet& task,
                                               const PromptTemplate& t,
                                               const Instance& inst,
                                               std::size_t index) {
  for (const auto& s : t.segments) {
    if (s.kind != SegmentKind::kInputSlot) continue;
    if (!inst.inputs.count(s.field)) {
      throw std::runtime_error(
          "task '" + task.task_id + "': template '" + t.template_id +
          "' references input field '" + s.field +
          "' missing from instance " + std::to_string(index));
    }
  }
}

}  // namespace detail

/// Checks every schema invariant; throws on the first violation.
inline void validate_taskset(const TaskSet& task) {
  if (task.templates.empty())
    throw std::runtime_error("task '" + task.task_id + "' has no templates");
  for (const auto& t : task.templates) detail::validate_template(t);
  if (task.instances.empty())
    throw std::runtime_error("task '" + task.task_id + "' has no instances");
  if (task.instance_cap && task.instances.size() > *task.instance_cap)
    throw std::runtime_error("task '" + task.task_id +
                             "' exceeds its instance cap");

  std::optional<int> classification_arity;
  for (std::size_t i = 0; i < task.instances.size(); ++i) {
    const Instance& inst = task.instances[i];
    const auto& opts = inst.options;
    if (opts.size() < 1)
      throw std::runtime_error("instance " + std::to_string(i) +
                               ": empty label option set");
    if (opts.correct_index < 0 || opts.correct_index >= opts.size())
      throw std::runtime_error("instance " + std::to_string(i) +
                               ": correct index out of range");
    std::set<std::string> uniq(opts.raw_labels.begin(),
                               opts.raw_labels.end());
    if (uniq.size() != opts.raw_labels.size())
      throw std::runtime_error("instance " + std::to_string(i) +
                               ": duplicate raw labels");
    if (task.kind == TaskKind::kClassification) {
      if (!classification_arity) {
        classification_arity = opts.size();
      } else if (*classification_arity != opts.size()) {
        throw std::runtime_error(
            "classification task '" + task.task_id +
            "' mixes label cardinalities (instance " + std::to_string(i) +
            ")");
      }
    }
    for (const auto& t : task.templates)
      detail::validate_instance_against_template(task, t, inst, i);
  }

  // Duplicate surfaces across raw labels would make the option argmax
  // ill-defined, so they are rejected here.
  const auto raws = task.raw_label_union();
  for (const auto& v : task.verbalizers) {
    for (const auto& inst : task.instances) {
      std::set<std::string> surfaces;
      for (const auto& y : inst.options.raw_labels) {
        const std::string s = verbalize(v, y);
        if (s.empty())
          throw std::runtime_error("verbalizer '" + v.name +
                                   "' maps '" + y + "' to an empty surface");
        if (!surfaces.insert(s).second)
          throw std::runtime_error("verbalizer '" + v.name +
                                   "' maps two labels of task '" +
                                   task.task_id + "' to surface '" + s + "'");
      }
    }
    for (const auto& y : raws) verbalize(v, y);  // totality check
  }
}

// ---------------------------------------------------------------------------
// Disk formats. Manifest: one JSON object describing the task. Dataset:
// one JSON object per line with fields `inputs`, `options`, `correct`.
// ---------------------------------------------------------------------------

namespace detail {

inline Segment segment_from_json(const nlohmann::json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  Segment s;
  if (kind == "instruction") {
    s.kind = SegmentKind::kInstruction;
    s.text = j.at("text").get<std::string>();
  } else if (kind == "input_slot") {
    s.kind = SegmentKind::kInputSlot;
    s.field = j.at("field").get<std::string>();
  } else if (kind == "label_slot") {
    s.kind = SegmentKind::kLabelSlot;
  } else {
    throw std::runtime_error("unknown segment kind: " + kind);
  }
  return s;
}

inline nlohmann::json segment_to_json(const Segment& s) {
  switch (s.kind) {
    case SegmentKind::kInstruction:
      return {{"kind", "instruction"}, {"text", s.text}};
    case SegmentKind::kInputSlot:
      return {{"kind", "input_slot"}, {"field", s.field}};
    case SegmentKind::kLabelSlot:
      return {{"kind", "label_slot"}};
  }
  throw std::runtime_error("unreachable");
}

inline Verbalizer verbalizer_from_json(const nlohmann::json& j) {
  Verbalizer v;
  v.name = j.at("name").get<std::string>();
  v.identity = j.value("identity", false);
  if (j.contains("mapping"))
    v.mapping = j.at("mapping").get<std::map<std::string, std::string>>();
  return v;
}

inline nlohmann::json verbalizer_to_json(const Verbalizer& v) {
  nlohmann::json j{{"name", v.name}};
  if (v.identity) j["identity"] = true;
  if (!v.mapping.empty()) j["mapping"] = v.mapping;
  return j;
}

inline Instance instance_from_json(const nlohmann::json& j) {
  Instance inst;
  inst.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  inst.options.raw_labels =
      j.at("options").get<std::vector<std::string>>();
  inst.options.correct_index = j.at("correct").get<int>();
  return inst;
}

inline nlohmann::json instance_to_json(const Instance& inst) {
  return {{"inputs", inst.inputs},
          {"options", inst.options.raw_labels},
          {"correct", inst.options.correct_index}};
}

}  // namespace detail

/// Loads a task from its manifest. Instances come from the referenced
/// dataset file, one JSON record per line; records beyond the cap are
/// dropped in file order.
inline TaskSet load_taskset(const std::filesystem::path& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf)
    throw std::runtime_error("cannot open manifest: " +
                             manifest_path.string());
  nlohmann::json j;
  try {
    mf >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("malformed manifest " + manifest_path.string() +
                             ": " + e.what());
  }

  TaskSet task;
  task.task_id = j.at("task_id").get<std::string>();
  task.kind = task_kind_from_string(j.at("task_kind").get<std::string>());
  for (const auto& tj : j.at("templates")) {
    PromptTemplate t;
    t.template_id = tj.at("template_id").get<std::string>();
    for (const auto& sj : tj.at("segments"))
      t.segments.push_back(detail::segment_from_json(sj));
    task.templates.push_back(std::move(t));
  }
  for (const auto& vj : j.at("verbalizers"))
    task.verbalizers.push_back(detail::verbalizer_from_json(vj));
  if (j.contains("instance_cap") && !j.at("instance_cap").is_null())
    task.instance_cap = j.at("instance_cap").get<std::size_t>();

  std::filesystem::path data_path = j.at("data_path").get<std::string>();
  if (data_path.is_relative())
    data_path = manifest_path.parent_path() / data_path;
  std::ifstream df(data_path);
  if (!df)
    throw std::runtime_error("cannot open dataset: " + data_path.string());

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(df, line)) {
    ++line_no;
    if (normalize_ws(line).empty()) continue;
    if (task.instance_cap && task.instances.size() >= *task.instance_cap)
      break;
    try {
      task.instances.push_back(
          detail::instance_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error(data_path.string() + ":" +
                               std::to_string(line_no) +
                               ": malformed instance record: " + e.what());
    }
  }

  validate_taskset(task);
  return task;
}

/// Writes the manifest + dataset pair for a task; data goes next to the
/// manifest under `<task_id>.jsonl` unless a name is given.
inline void save_taskset(const TaskSet& task,
                         const std::filesystem::path& manifest_path,
                         std::string data_name = "") {
  if (data_name.empty()) data_name = task.task_id + ".jsonl";
  nlohmann::json j;
  j["task_id"] = task.task_id;
  j["task_kind"] = to_string(task.kind);
  j["templates"] = nlohmann::json::array();
  for (const auto& t : task.templates) {
    nlohmann::json tj{{"template_id", t.template_id},
                      {"segments", nlohmann::json::array()}};
    for (const auto& s : t.segments)
      tj["segments"].push_back(detail::segment_to_json(s));
    j["templates"].push_back(std::move(tj));
  }
  j["verbalizers"] = nlohmann::json::array();
  for (const auto& v : task.verbalizers)
    j["verbalizers"].push_back(detail::verbalizer_to_json(v));
  if (task.instance_cap) j["instance_cap"] = *task.instance_cap;
  j["data_path"] = data_name;

  std::filesystem::create_directories(manifest_path.parent_path());
  std::ofstream mf(manifest_path);
  mf << j.dump(2) << "\n";
  std::ofstream df(manifest_path.parent_path() / data_name);
  for (const auto& inst : task.instances)
    df << detail::instance_to_json(inst).dump() << "\n";
}

// ---------------------------------------------------------------------------
// Label-variant sweeps.
// ---------------------------------------------------------------------------

/// Reads a variant table: a JSON array of surface tuples, e.g.
/// [["yes","no"],["true","false"],...].
inline std::vector<std::vector<std::string>> load_variant_tuples(
    const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f)
    throw std::runtime_error("cannot open variant table: " + path.string());
  nlohmann::json j;
  f >> j;
  auto tuples = j.get<std::vector<std::vector<std::string>>>();
  for (const auto& t : tuples) {
    std::set<std::string> uniq(t.begin(), t.end());
    if (uniq.size() != t.size())
      throw std::runtime_error("variant tuple has duplicate surfaces in " +
                               path.string());
  }
  return tuples;
}

inline std::string variant_name(const std::vector<std::string>& tuple) {
  std::vector<std::string> parts;
  for (auto s : tuple) {
    for (auto& c : s)
      if (c == ' ') c = '-';
    parts.push_back(std::move(s));
  }
  return join(parts, "_");
}

/// Builds one Verbalizer per surface tuple by position against an ordered
/// raw-label list. Tuple arity must match the label count.
inline std::vector<Verbalizer> verbalizers_from_tuples(
    const std::vector<std::vector<std::string>>& tuples,
    const std::vector<std::string>& raw_labels) {
  std::vector<Verbalizer> out;
  for (const auto& tuple : tuples) {
    if (tuple.size() != raw_labels.size())
      throw std::runtime_error(
          "variant tuple arity " + std::to_string(tuple.size()) +
          " does not match label count " +
          std::to_string(raw_labels.size()));
    Verbalizer v;
    v.name = variant_name(tuple);
    for (std::size_t i = 0; i < tuple.size(); ++i)
      v.mapping[raw_labels[i]] = tuple[i];
    out.push_back(std::move(v));
  }
  return out;
}

/// One TaskSet per verbalizer: identical instances and templates, swapped
/// surface forms. Each emitted TaskSet carries exactly that verbalizer.
inline std::vector<TaskSet> label_variant_sweep(
    const TaskSet& task, const std::vector<Verbalizer>& variants) {
  const auto raws = task.raw_label_union();
  std::vector<TaskSet> out;
  for (const auto& v : variants) {
    for (const auto& y : raws) {
      if (!v.mapping.count(y) && !v.identity)
        throw std::runtime_error("variant '" + v.name +
                                 "' does not cover label '" + y +
                                 "' of task '" + task.task_id + "'");
    }
    if (!v.identity && v.mapping.size() != raws.size())
      throw std::runtime_error(
          "variant '" + v.name + "' arity " +
          std::to_string(v.mapping.size()) + " does not match task '" +
          task.task_id + "' label count " + std::to_string(raws.size()));
    TaskSet swapped = task;
    swapped.verbalizers = {v};
    validate_taskset(swapped);
    out.push_back(std::move(swapped));
  }
  return out;
}

}  // namespace flipped
