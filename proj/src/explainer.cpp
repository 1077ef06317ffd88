#include "lane/explainer.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "json.hpp"
#include "lane/error.hpp"
#include "lane/text_util.hpp"

namespace lane {

using nlohmann::json;

std::string to_string(InteractionLevel level) {
  switch (level) {
    case InteractionLevel::low: return "Low";
    case InteractionLevel::medium: return "Medium";
    case InteractionLevel::high: return "High";
  }
  return "Medium";
}

std::string format_weight(double w) { return text::fixed(w, 4); }

// ---------------------------------------------------------------------------
// Prompt

std::string render_cot_prompt(const std::vector<std::string>& titles,
                              const std::vector<std::string>& preferences,
                              const std::vector<double>& omega, const std::string& target_title) {
  if (preferences.size() != omega.size()) {
    throw UserError("render_cot_prompt: " + std::to_string(preferences.size()) + " preferences but " +
                    std::to_string(omega.size()) + " weights");
  }
  if (preferences.empty()) throw UserError("render_cot_prompt: no preferences");
  std::ostringstream p;
  p << "### Task\n"
    << "Explain to the user why the target item below is recommended, reasoning step by step "
       "from the interaction sequence, the user's preferences and the attention weight the "
       "recommender assigned to each preference.\n\n";
  p << "### User Interaction Sequence\n";
  for (const auto& t : titles) p << "- " << t << '\n';
  p << "\n### User Preferences\n";
  for (std::size_t i = 0; i < preferences.size(); ++i) {
    p << (i + 1) << ". " << preferences[i] << " (weight: " << format_weight(omega[i]) << ")\n";
  }
  p << "\n### Target Item\n" << target_title << "\n\n";
  p << "### Steps\n"
    << "Step 1: For every preference, point to items in the interaction sequence that reveal it.\n"
    << "Step 2: Introduce the target item, then rate how well it fits every preference with a "
       "number between 0 and 1 and give a reason.\n"
    << "Step 3: Combine the fitness values with the preference weights into an interaction "
       "probability of Low, Medium or High and give a reason.\n"
    << "Step 4: Write a short personalized recommendation addressed to the user.\n\n";
  p << "### Answer Template\n"
    << "Step 1:\n"
    << "Preference <i>: <preference>\nAnalysis: <text>\n"
    << "Step 2:\n"
    << "Target item introduction: <text>\n"
    << "Preference Fitness:\n"
    << "<i>. <preference>: <fitness>\nReason: <text>\n"
    << "Step 3:\n"
    << "Interaction probability: <Low|Medium|High>\nReason: <text>\n"
    << "Step 4:\n"
    << "Recommendation: <text>\n";
  return p.str();
}

CotPromptFields parse_cot_prompt(const std::string& prompt) {
  static const std::regex weighted(R"(^(\d+)\. (.*) \(weight: ([-+0-9.eE]+)\)$)");
  CotPromptFields f;
  std::string section;
  for (const auto& line : text::split_lines(prompt)) {
    if (line.rfind("### ", 0) == 0) {
      section = line.substr(4);
      continue;
    }
    if (text::trim(line).empty()) continue;
    if (section == "User Interaction Sequence" && line.rfind("- ", 0) == 0) {
      f.history.push_back(line.substr(2));
    } else if (section == "User Preferences") {
      std::smatch m;
      if (std::regex_match(line, m, weighted)) {
        f.preferences.push_back(m[2].str());
        f.weights.push_back(std::stod(m[3].str()));
      }
    } else if (section == "Target Item" && f.target.empty()) {
      f.target = line;
    }
  }
  if (f.preferences.empty() || f.target.empty()) {
    throw UserError("parse_cot_prompt: not an explanation prompt");
  }
  return f;
}

// ---------------------------------------------------------------------------
// Response

std::string render_explanation_response(const ExplanationRecord& r) {
  std::ostringstream out;
  out << "Step 1:\n";
  for (std::size_t i = 0; i < r.step1.size(); ++i) {
    out << "Preference " << (i + 1) << ": " << r.step1[i].preference << '\n'
        << "Analysis: " << r.step1[i].analysis << '\n';
  }
  out << "Step 2:\n"
      << "Target item introduction: " << r.item_introduction << '\n'
      << "Preference Fitness:\n";
  for (std::size_t i = 0; i < r.step2.size(); ++i) {
    out << (i + 1) << ". " << r.step2[i].preference << ": " << text::fixed(r.step2[i].fitness, 1) << '\n'
        << "Reason: " << r.step2[i].reason << '\n';
  }
  out << "Step 3:\n"
      << "Interaction probability: " << to_string(r.probability) << '\n'
      << "Reason: " << r.probability_reason << '\n'
      << "Step 4:\n"
      << "Recommendation: " << r.recommendation << '\n';
  return out.str();
}

namespace {

struct Field {
  std::string label;  ///< lower-cased
  std::string value;
};

/// Splits a section into "Label: value" fields; unlabeled lines continue the
/// previous field. Numbered fitness lines become fields labeled "#".
std::vector<Field> fields_of(const std::vector<std::string>& lines) {
  static const std::regex labeled(R"(^(preference \d+|analysis|target item introduction|preference fitness|reason|interaction probability|recommendation)\s*:\s*(.*)$)",
                                  std::regex::icase);
  static const std::regex numbered(R"(^\d+\s*[.)]\s*.*$)");
  std::vector<Field> out;
  for (const auto& raw : lines) {
    const std::string line = text::trim(raw);
    if (line.empty()) continue;
    std::smatch m;
    if (std::regex_match(line, m, labeled)) {
      out.push_back({text::to_lower(m[1].str()), text::trim(m[2].str())});
    } else if (std::regex_match(line, numbered)) {
      out.push_back({"#", line});
    } else if (!out.empty()) {
      if (!out.back().value.empty()) out.back().value += ' ';
      out.back().value += line;
    }
  }
  return out;
}

std::string unquote(std::string s) {
  s = text::trim(s);
  if (s.size() >= 2 && (s.front() == '`' || s.front() == '\'' || s.front() == '"') &&
      (s.back() == '\'' || s.back() == '"')) {
    s = s.substr(1, s.size() - 2);
  }
  return s;
}

}  // namespace

ExplanationRecord parse_explanation(const std::string& raw, std::size_t m) {
  if (text::trim(raw).empty()) throw MalformedResponse("empty explanation response");
  static const std::regex step_header(R"(^step\s*([1-4])\s*:\s*(.*)$)", std::regex::icase);
  std::vector<std::string> sections[4];
  bool seen[4] = {false, false, false, false};
  int current = -1;
  for (const auto& raw_line : text::split_lines(text::strip_markdown(raw))) {
    const std::string line = text::trim(raw_line);
    std::smatch match;
    if (std::regex_match(line, match, step_header)) {
      current = std::stoi(match[1].str()) - 1;
      seen[current] = true;
      if (!text::trim(match[2].str()).empty()) sections[current].push_back(match[2].str());
      continue;
    }
    if (current >= 0) sections[current].push_back(line);
  }
  for (int s = 0; s < 4; ++s) {
    if (!seen[s]) throw MalformedResponse("missing Step " + std::to_string(s + 1));
  }

  ExplanationRecord rec;

  // Step 1: (Preference i, Analysis) pairs.
  for (const auto& f : fields_of(sections[0])) {
    if (f.label.rfind("preference ", 0) == 0) {
      rec.step1.push_back({f.value, ""});
    } else if (f.label == "analysis") {
      if (rec.step1.empty()) throw MalformedResponse("Step 1: analysis before any preference");
      rec.step1.back().analysis = f.value;
    }
  }
  if (rec.step1.size() != m) {
    throw MalformedResponse("Step 1: expected " + std::to_string(m) + " preference analyses, found " +
                            std::to_string(rec.step1.size()));
  }
  for (const auto& a : rec.step1) {
    if (a.analysis.empty()) throw MalformedResponse("Step 1: preference '" + a.preference + "' has no analysis");
  }

  // Step 2: introduction, then numbered fitness lines each followed by a reason.
  static const std::regex fitness_line(R"(^\d+\s*[.)]\s*(.*):\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*$)");
  bool fitness_label = false;
  for (const auto& f : fields_of(sections[1])) {
    if (f.label == "target item introduction") {
      rec.item_introduction = f.value;
    } else if (f.label == "preference fitness") {
      fitness_label = true;
    } else if (f.label == "#") {
      std::smatch match;
      if (!std::regex_match(f.value, match, fitness_line)) {
        throw MalformedResponse("Step 2: unreadable fitness line '" + f.value + "'");
      }
      PreferenceFitness pf;
      pf.preference = unquote(match[1].str());
      const double v = std::stod(match[2].str());
      pf.fitness = std::clamp(v, 0.0, 1.0);
      pf.clamped = pf.fitness != v;
      rec.step2.push_back(std::move(pf));
    } else if (f.label == "reason" && !rec.step2.empty()) {
      rec.step2.back().reason = f.value;
    }
  }
  if (!fitness_label) throw MalformedResponse("Step 2: missing Preference Fitness");
  if (rec.step2.size() != m) {
    throw MalformedResponse("Step 2: expected " + std::to_string(m) + " fitness entries, found " +
                            std::to_string(rec.step2.size()));
  }

  // Step 3: label and reason.
  bool has_label = false;
  for (const auto& f : fields_of(sections[2])) {
    if (f.label == "interaction probability") {
      const std::string level = text::to_lower(text::trim(f.value));
      if (level.rfind("low", 0) == 0) rec.probability = InteractionLevel::low;
      else if (level.rfind("medium", 0) == 0) rec.probability = InteractionLevel::medium;
      else if (level.rfind("high", 0) == 0) rec.probability = InteractionLevel::high;
      else throw MalformedResponse("Step 3: unknown interaction probability '" + f.value + "'");
      has_label = true;
    } else if (f.label == "reason") {
      rec.probability_reason = f.value;
    }
  }
  if (!has_label) throw MalformedResponse("Step 3: missing Interaction probability");

  // Step 4: recommendation text.
  for (const auto& f : fields_of(sections[3])) {
    if (f.label == "recommendation") rec.recommendation = f.value;
  }
  if (rec.recommendation.empty()) throw MalformedResponse("Step 4: missing Recommendation");
  return rec;
}

// ---------------------------------------------------------------------------

ExplanationOutcome generate_explanation(const ExplanationRequest& request, const LaneModel& model,
                                        LlmClient& client, int max_attempts) {
  if (!model.use_alignment) {
    throw ConfigError("explanations need a model trained with the alignment block");
  }
  if (max_attempts < 1) throw ConfigError("explainer: max_attempts must be at least 1");
  const std::size_t m = request.preferences.preferences.size();
  if (request.P.rows() != m) {
    throw UserError("user '" + request.user_id + "': preference embeddings do not match preferences");
  }
  if (request.history.empty()) throw UserError("user '" + request.user_id + "': empty history");

  ExplanationOutcome out;
  out.user_id = request.user_id;
  out.target = request.target_title;
  const std::vector<double> q = last_backbone_features(model, request.history);
  out.omega = preference_attention_weights(q, request.P, model.alignment);

  const std::string prompt = render_cot_prompt(request.history_titles, request.preferences.preferences,
                                               out.omega, request.target_title);
  out.prompt_hash = prompt_hash(prompt);
  const std::vector<double> echoed = parse_cot_prompt(prompt).weights;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    out.attempts = attempt;
    try {
      out.raw = client.complete(prompt);
    } catch (const LlmError& e) {
      throw LlmError("user '" + request.user_id + "': " + e.what());
    }
    try {
      ExplanationRecord rec = parse_explanation(out.raw, m);
      rec.echoed_weights = echoed;
      out.record = std::move(rec);
      out.last_error.clear();
      return out;
    } catch (const MalformedResponse& e) {
      out.last_error = e.what();
    }
  }
  return out;
}

std::string explanation_json(const ExplanationOutcome& o) {
  json j;
  j["user_id"] = o.user_id;
  j["target"] = o.target;
  j["omega"] = o.omega;
  j["available"] = o.record.has_value();
  if (o.record) {
    const ExplanationRecord& r = *o.record;
    json step1 = json::array();
    for (const auto& a : r.step1) step1.push_back({{"preference", a.preference}, {"analysis", a.analysis}});
    json fitness = json::array();
    for (const auto& f : r.step2) {
      fitness.push_back({{"preference", f.preference},
                         {"fitness", f.fitness},
                         {"reason", f.reason},
                         {"clamped", f.clamped}});
    }
    j["steps"] = {{"step1", step1},
                  {"step2", {{"introduction", r.item_introduction}, {"fitness", fitness}}},
                  {"step3", {{"probability", to_string(r.probability)}, {"reason", r.probability_reason}}},
                  {"step4", {{"recommendation", r.recommendation}}}};
    j["echoed_weights"] = r.echoed_weights;
  } else {
    j["steps"] = nullptr;
    j["error"] = o.last_error;
  }
  j["raw"] = o.raw;
  j["prompt_hash"] = o.prompt_hash;
  return j.dump();
}

ExplanationWriter::ExplanationWriter(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream out(path_, std::ios::binary | std::ios::trunc);
  if (!out) throw UserError("cannot write " + path_.string());
}

void ExplanationWriter::append(const ExplanationOutcome& outcome) {
  const std::string line = explanation_json(outcome);
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::binary | std::ios::app);
  if (!out) throw UserError("cannot append to " + path_.string());
  out << line << '\n';
}

}  // namespace lane
