#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mnem/corpus.hpp"
#include "mnem/ner.hpp"

namespace mnem {

struct SynthEntity {
  std::string surface;
  EntityLabel label = EntityLabel::PERSON;
  std::vector<float> signature;  // unit norm
};

// Surfaces are unique across labels.
struct EntityInventory {
  std::vector<SynthEntity> entities;  // PERSON block, then ORG, then GPE

  std::size_t count(EntityLabel l) const;
};

// Templates use {0}..{9} for entity slots and {tail} for a phrase from
// `tails`. Slots must stand alone as words (trailing punctuation allowed).
//
// Sample kinds:
//   easy      description = copy_pairs[i].first over the depicted entities,
//             caption = copy_pairs[i].second (near-verbatim copy)
//   cue       same context as easy, caption from caption_templates
//   hard      description from description_templates over all context
//             entities (shuffled), caption from caption_templates
// The section mentions the context entities the description leaves out
// (easy, cue) or a random subset of the same size (hard).
struct SynthConfig {
  std::size_t n_samples = 5500;
  std::size_t n_entities = 40;  // per label
  std::size_t entities_per_context = 4;
  std::size_t entities_per_caption = 2;
  double easy_fraction = 0.4;
  double cue_fraction = 0.25;  // of the non-easy samples
  double noise = 0.05;         // per-dimension std of the image noise
  std::uint32_t d_img = 32;
  std::uint64_t seed = 1;

  std::vector<std::string> caption_templates;
  std::vector<std::pair<std::string, std::string>> copy_pairs;
  std::vector<std::string> description_templates;
  std::vector<std::string> section_templates;
  std::vector<std::string> tails;

  static SynthConfig defaults();
  void validate() const;
  nlohmann::json to_json() const;
  // Missing keys keep their defaults.
  static SynthConfig from_json(const nlohmann::json& j);
};

struct SynthOutput {
  EntityInventory inventory;
  Corpus corpus;
  Annotations annotations;
  FeatureStore features;
  std::vector<std::vector<std::size_t>> depicted;  // inventory indices per sample
  std::vector<std::vector<std::size_t>> context;   // inventory indices per sample
};

EntityInventory make_inventory(const SynthConfig& cfg);

// Each sample uses CounterRng(derive_seed(seed, i)); the inventory uses
// derive_seed(seed, "inventory").
SynthOutput synth_generate(const SynthConfig& cfg);

struct FieldExpectation {
  double avg_words = 0.0;
  double ne_word_fraction = 0.0;
};

struct SynthDescription {
  std::size_t n_samples = 0;
  std::array<std::size_t, 3> entities{};  // PERSON, ORG, GPE
  double mean_entity_words = 0.0;
  FieldExpectation caption;
  FieldExpectation section;
  FieldExpectation description;
  double expected_easy_share = 0.0;

  std::string to_text() const;
  nlohmann::json to_json() const;
};

// Analytic expectations: entity slots are uniform over the inventory, so each
// slot contributes the inventory's mean word count.
SynthDescription synth_describe(const SynthConfig& cfg);

}  // namespace mnem
