#include "poisonlab/triggers.hpp"

#include <algorithm>
#include <random>
#include <unordered_set>

#include "poisonlab/errors.hpp"
#include "poisonlab/seeds.hpp"

namespace poisonlab {

namespace {

// Detector slack for the injection-density test. Covers the floor() shortfall
// of short samples: one insertion into a (2*stride-1)-token sample gives
// density 1/(2*stride), and 1/(stride+1) - 1/(2*stride) < 0.1 for stride >= 2.
constexpr double kDensityEps = 0.1;

std::mt19937_64 per_sample_rng(const TriggerSpec& trigger, std::int64_t sample_id) {
  return std::mt19937_64(mix64(mix64(trigger.seed) ^ static_cast<std::uint64_t>(sample_id)));
}

}  // namespace

std::string TriggerSpec::name() const {
  if (std::holds_alternative<RareWordInsertion>(variant)) return "rare_word_insertion";
  if (std::holds_alternative<CommonWordInjection>(variant)) return "common_word_injection";
  return "synonym_substitution";
}

void TriggerSpec::validate() const {
  if (const auto* rw = std::get_if<RareWordInsertion>(&variant)) {
    if (rw->trigger_token.empty()) {
      throw ConfigError("trigger: rare_word_insertion needs a trigger token");
    }
  } else if (const auto* cw = std::get_if<CommonWordInjection>(&variant)) {
    if (cw->filler_tokens.empty()) {
      throw ConfigError("trigger: common_word_injection needs filler tokens");
    }
    if (cw->stride < 2) throw ConfigError("trigger: stride must be >= 2");
  } else if (const auto* ss = std::get_if<SynonymSubstitution>(&variant)) {
    if (ss->lexicon.empty()) throw ConfigError("trigger: empty substitution lexicon");
    for (const auto& [key, value] : ss->lexicon) {
      if (key == value || ss->lexicon.count(value) > 0) {
        throw ConfigError("trigger: lexicon keys and values must be disjoint (\"" +
                          key + "\" -> \"" + value + "\")");
      }
    }
  }
}

Sample apply_trigger(const Sample& sample, const TriggerSpec& trigger) {
  if (sample.provenance.is_poison) {
    throw ContractError("apply_trigger: input sample " + std::to_string(sample.id) +
                        " is already poisoned");
  }
  trigger.validate();

  Sample out;
  out.id = sample.id;  // owners assign fresh ids for derived samples
  out.label = sample.label;
  out.provenance = Provenance::poison(sample.id);

  if (const auto* rw = std::get_if<RareWordInsertion>(&trigger.variant)) {
    out.tokens = sample.tokens;
    std::size_t pos = 0;
    if (rw->position == RareWordInsertion::Position::SeededRandom) {
      auto rng = per_sample_rng(trigger, sample.id);
      pos = std::uniform_int_distribution<std::size_t>(0, out.tokens.size())(rng);
    }
    out.tokens.insert(out.tokens.begin() + static_cast<std::ptrdiff_t>(pos),
                      rw->trigger_token);
  } else if (const auto* cw = std::get_if<CommonWordInjection>(&trigger.variant)) {
    auto rng = per_sample_rng(trigger, sample.id);
    std::uniform_int_distribution<std::size_t> pick(0, cw->filler_tokens.size() - 1);
    out.tokens.reserve(sample.tokens.size() + sample.tokens.size() / static_cast<std::size_t>(cw->stride));
    for (std::size_t i = 0; i < sample.tokens.size(); ++i) {
      out.tokens.push_back(sample.tokens[i]);
      if ((i + 1) % static_cast<std::size_t>(cw->stride) == 0) {
        out.tokens.push_back(cw->filler_tokens[pick(rng)]);
      }
    }
  } else {
    const auto& lexicon = std::get<SynonymSubstitution>(trigger.variant).lexicon;
    out.tokens.reserve(sample.tokens.size());
    for (const std::string& t : sample.tokens) {
      auto it = lexicon.find(t);
      out.tokens.push_back(it == lexicon.end() ? t : it->second);
    }
  }
  return out;
}

bool is_triggered(const Sample& sample, const TriggerSpec& trigger) {
  if (const auto* rw = std::get_if<RareWordInsertion>(&trigger.variant)) {
    return std::find(sample.tokens.begin(), sample.tokens.end(), rw->trigger_token) !=
           sample.tokens.end();
  }
  if (const auto* cw = std::get_if<CommonWordInjection>(&trigger.variant)) {
    if (sample.tokens.empty()) return false;
    const std::unordered_set<std::string> fillers(cw->filler_tokens.begin(),
                                                  cw->filler_tokens.end());
    std::size_t hits = 0;
    for (const std::string& t : sample.tokens) hits += fillers.count(t);
    const double density = static_cast<double>(hits) / static_cast<double>(sample.tokens.size());
    return density > 1.0 / static_cast<double>(cw->stride + 1) - kDensityEps;
  }
  const auto& lexicon = std::get<SynonymSubstitution>(trigger.variant).lexicon;
  bool value_present = false;
  std::unordered_set<std::string> values;
  for (const auto& [key, value] : lexicon) values.insert(value);
  for (const std::string& t : sample.tokens) {
    if (lexicon.count(t) > 0) return false;  // an unsubstituted key remains
    if (values.count(t) > 0) value_present = true;
  }
  return value_present;
}

}  // namespace poisonlab
