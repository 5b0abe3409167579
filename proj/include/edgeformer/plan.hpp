#pragma once

// Parameterization as data: named weight groups plus a binding map from
// layer slots to groups.  A group bundles one or more typed sections
// (attention quadruple, FFN pair); a binding names either a single slot
// ("enc[3].attn") or a whole layer ("enc[3].layer"), the latter covering
// every slot of that layer.  Per-group load = number of bindings, so the
// universal preset reports {encoder: 12, decoder: 2} while cycle plans
// report per-slot counts.

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "edgeformer/config.hpp"

namespace edgeformer {

enum class GroupKind { AttentionQuad, FfnPair, LightFfnPair, BiasSet, LayerSet };
enum class SectionKind { Attention, Ffn };

inline std::string to_string(GroupKind k) {
  switch (k) {
    case GroupKind::AttentionQuad: return "attention-quadruple";
    case GroupKind::FfnPair: return "ffn-pair";
    case GroupKind::LightFfnPair: return "light-ffn-pair";
    case GroupKind::BiasSet: return "bias-set";
    case GroupKind::LayerSet: return "layer-set";
  }
  return "?";
}

inline GroupKind group_kind_from_string(const std::string& s) {
  if (s == "attention-quadruple") return GroupKind::AttentionQuad;
  if (s == "ffn-pair") return GroupKind::FfnPair;
  if (s == "light-ffn-pair") return GroupKind::LightFfnPair;
  if (s == "bias-set") return GroupKind::BiasSet;
  if (s == "layer-set") return GroupKind::LayerSet;
  throw ConfigError("plan: unknown group kind \"" + s + "\"");
}

struct SectionSpec {
  std::string key;  // "attn" | "self" | "cross" | "ffn"
  SectionKind kind = SectionKind::Attention;
  int d = 0;
  int d_hidden = 0;  // ffn only

  // Weight-matrix element count (the Φ-formula level: biases and norms
  // excluded).
  long long weight_params() const {
    return kind == SectionKind::Attention ? 4LL * d * d : 2LL * d * d_hidden;
  }
  // Bias and layer-norm element count for the section's sublayer.
  long long aux_params() const {
    return kind == SectionKind::Attention ? 6LL * d  // 4 projection biases + LN gain/bias
                                          : (long long)d_hidden + 3LL * d;  // b1 + b2 + LN
  }
  bool operator==(const SectionSpec&) const = default;
};

struct GroupSpec {
  std::string name;
  GroupKind kind = GroupKind::LayerSet;
  std::vector<SectionSpec> sections;

  const SectionSpec* find_section(const std::string& key) const {
    for (const auto& s : sections)
      if (s.key == key) return &s;
    return nullptr;
  }
  long long weight_params() const {
    long long n = 0;
    for (const auto& s : sections) n += s.weight_params();
    return n;
  }
  long long aux_params() const {
    long long n = 0;
    for (const auto& s : sections) n += s.aux_params();
    return n;
  }
  bool operator==(const GroupSpec&) const = default;
};

struct Binding {
  std::string slot;
  std::string group;
  bool operator==(const Binding&) const = default;
};

// ---- slots ----------------------------------------------------------------

// Parsed form of "enc[3].attn" / "dec[1].ffn_b" / "enc[2].layer".
struct SlotRef {
  bool encoder = true;
  int layer = 0;  // 1-based
  std::string role;
};

inline std::string slot_name(bool encoder, int layer, const std::string& role) {
  return (encoder ? "enc[" : "dec[") + std::to_string(layer) + "]." + role;
}

inline SlotRef parse_slot(const std::string& s) {
  SlotRef r;
  std::size_t open = s.find('[');
  std::size_t close = s.find("].");
  if (open == std::string::npos || close == std::string::npos || close < open)
    throw ConfigError("plan: malformed slot \"" + s + "\"");
  const std::string prefix = s.substr(0, open);
  if (prefix == "enc")
    r.encoder = true;
  else if (prefix == "dec")
    r.encoder = false;
  else
    throw ConfigError("plan: slot \"" + s + "\" must start with enc or dec");
  try {
    r.layer = std::stoi(s.substr(open + 1, close - open - 1));
  } catch (const std::exception&) {
    throw ConfigError("plan: bad layer index in slot \"" + s + "\"");
  }
  r.role = s.substr(close + 2);
  return r;
}

// Every fine-grained slot of the architecture, in canonical order
// (encoder first, ascending layer, role order self/cross/ffn).
inline std::vector<std::string> architecture_slots(const ModelConfig& c) {
  std::vector<std::string> slots;
  for (int i = 1; i <= c.enc_layers; ++i) {
    slots.push_back(slot_name(true, i, "attn"));
    slots.push_back(slot_name(true, i, "ffn"));
  }
  for (int j = 1; j <= c.dec_layers; ++j) {
    if (c.decoder_style == DecoderStyle::Vanilla) {
      slots.push_back(slot_name(false, j, "self"));
      slots.push_back(slot_name(false, j, "cross"));
      slots.push_back(slot_name(false, j, "ffn"));
    } else {
      slots.push_back(slot_name(false, j, "self"));
      slots.push_back(slot_name(false, j, "cross"));
      slots.push_back(slot_name(false, j, "ffn_a"));
      slots.push_back(slot_name(false, j, "ffn_b"));
    }
  }
  return slots;
}

inline bool is_ffn_role(const std::string& role) {
  return role == "ffn" || role == "ffn_a" || role == "ffn_b";
}

// Which section of a group serves a slot role.  Attention roles accept a
// role-specific section ("self"/"cross") or the generic "attn"; FFN roles
// always use "ffn".
inline const SectionSpec* resolve_section(const GroupSpec& g, const std::string& role) {
  if (is_ffn_role(role)) return g.find_section("ffn");
  if (const SectionSpec* s = g.find_section(role)) return s;
  return g.find_section("attn");
}

// ---- the plan ---------------------------------------------------------------

struct SharingPlan {
  std::string preset;  // full | universal | edgeformer | custom
  std::vector<GroupSpec> groups;
  std::vector<Binding> bindings;

  const GroupSpec* find_group(const std::string& name) const {
    for (const auto& g : groups)
      if (g.name == name) return &g;
    return nullptr;
  }

  // group name -> number of bindings (a layer binding counts once).
  std::map<std::string, int> load_report() const {
    std::map<std::string, int> loads;
    for (const auto& g : groups) loads[g.name] = 0;
    for (const auto& b : bindings) ++loads[b.group];
    return loads;
  }

  bool operator==(const SharingPlan&) const = default;
};

// Expands layer bindings into the fine slots they cover, preserving order.
inline std::vector<Binding> expand_bindings(const SharingPlan& plan, const ModelConfig& c) {
  std::vector<Binding> fine;
  for (const auto& b : plan.bindings) {
    SlotRef ref = parse_slot(b.slot);
    if (ref.role != "layer") {
      fine.push_back(b);
      continue;
    }
    if (ref.encoder) {
      fine.push_back({slot_name(true, ref.layer, "attn"), b.group});
      fine.push_back({slot_name(true, ref.layer, "ffn"), b.group});
    } else if (c.decoder_style == DecoderStyle::Vanilla) {
      fine.push_back({slot_name(false, ref.layer, "self"), b.group});
      fine.push_back({slot_name(false, ref.layer, "cross"), b.group});
      fine.push_back({slot_name(false, ref.layer, "ffn"), b.group});
    } else {
      fine.push_back({slot_name(false, ref.layer, "self"), b.group});
      fine.push_back({slot_name(false, ref.layer, "cross"), b.group});
      fine.push_back({slot_name(false, ref.layer, "ffn_a"), b.group});
      fine.push_back({slot_name(false, ref.layer, "ffn_b"), b.group});
    }
  }
  return fine;
}

// ---- validation -------------------------------------------------------------

inline std::vector<std::string> validate_plan(const SharingPlan& plan, const ModelConfig& config) {
  std::vector<std::string> errors;
  std::map<std::string, int> group_seen;
  for (const auto& g : plan.groups) {
    if (++group_seen[g.name] == 2) errors.push_back("duplicate group name \"" + g.name + "\"");
    if (g.sections.empty()) errors.push_back("group \"" + g.name + "\" has no sections");
  }

  std::map<std::string, int> bound_count;
  for (const auto& slot : architecture_slots(config)) bound_count[slot] = 0;

  for (const auto& b : expand_bindings(plan, config)) {
    auto it = bound_count.find(b.slot);
    if (it == bound_count.end()) {
      errors.push_back("binding names unknown slot \"" + b.slot + "\"");
      continue;
    }
    ++it->second;
    const GroupSpec* g = plan.find_group(b.group);
    if (!g) {
      errors.push_back("slot \"" + b.slot + "\" bound to missing group \"" + b.group + "\"");
      continue;
    }
    SlotRef ref = parse_slot(b.slot);
    const SectionSpec* s = resolve_section(*g, ref.role);
    if (!s) {
      errors.push_back("slot \"" + b.slot + "\" bound to group \"" + b.group +
                       "\" which has no section for role \"" + ref.role + "\" (kind mismatch)");
      continue;
    }
    const bool want_ffn = is_ffn_role(ref.role);
    if (want_ffn != (s->kind == SectionKind::Ffn)) {
      errors.push_back("slot \"" + b.slot + "\" role does not match section kind in group \"" +
                       b.group + "\"");
      continue;
    }
    if (s->d != config.d_model)
      errors.push_back("slot \"" + b.slot + "\": group \"" + b.group + "\" has d=" +
                       std::to_string(s->d) + ", config d_model=" + std::to_string(config.d_model));
    if (want_ffn) {
      const int want_hidden = ref.encoder ? config.d_encffn : config.d_decffn;
      if (s->d_hidden != want_hidden)
        errors.push_back("slot \"" + b.slot + "\": ffn hidden dim " + std::to_string(s->d_hidden) +
                         " does not match config " + std::to_string(want_hidden));
    }
  }
  for (const auto& [slot, n] : bound_count) {
    if (n == 0) errors.push_back("slot \"" + slot + "\" is unbound");
    if (n > 1) errors.push_back("slot \"" + slot + "\" bound " + std::to_string(n) + " times");
  }
  return errors;
}

// ---- preset construction ----------------------------------------------------

namespace detail {

inline SectionSpec attn_section(const std::string& key, int d) {
  return {key, SectionKind::Attention, d, 0};
}
inline SectionSpec ffn_section(int d, int hidden) { return {"ffn", SectionKind::Ffn, d, hidden}; }

// Largest-satisfying divisor rule for the encoder attention cycle: the
// divisor of M nearest to M/3, ties toward the smaller divisor.
inline int attention_cycle(int M) {
  const double target = M / 3.0;
  int best = 1;
  double best_dist = std::abs(target - 1.0);
  for (int c = 2; c <= M; ++c) {
    if (M % c != 0) continue;
    const double dist = std::abs(target - c);
    if (dist < best_dist) {
      best = c;
      best_dist = dist;
    }
  }
  return best;
}

}  // namespace detail

inline SharingPlan build_full_plan(const ModelConfig& c) {
  SharingPlan p;
  p.preset = "full";
  for (int i = 1; i <= c.enc_layers; ++i) {
    const std::string an = "enc" + std::to_string(i) + ".attn";
    const std::string fn = "enc" + std::to_string(i) + ".ffn";
    p.groups.push_back({an, GroupKind::AttentionQuad, {detail::attn_section("attn", c.d_model)}});
    p.groups.push_back({fn, GroupKind::FfnPair, {detail::ffn_section(c.d_model, c.d_encffn)}});
    p.bindings.push_back({slot_name(true, i, "attn"), an});
    p.bindings.push_back({slot_name(true, i, "ffn"), fn});
  }
  for (int j = 1; j <= c.dec_layers; ++j) {
    const std::string sn = "dec" + std::to_string(j) + ".self";
    const std::string cn = "dec" + std::to_string(j) + ".cross";
    const std::string fn = "dec" + std::to_string(j) + ".ffn";
    p.groups.push_back({sn, GroupKind::AttentionQuad, {detail::attn_section("attn", c.d_model)}});
    p.groups.push_back({cn, GroupKind::AttentionQuad, {detail::attn_section("attn", c.d_model)}});
    p.bindings.push_back({slot_name(false, j, "self"), sn});
    p.bindings.push_back({slot_name(false, j, "cross"), cn});
    if (c.decoder_style == DecoderStyle::Vanilla) {
      p.groups.push_back({fn, GroupKind::FfnPair, {detail::ffn_section(c.d_model, c.d_decffn)}});
      p.bindings.push_back({slot_name(false, j, "ffn"), fn});
    } else {
      // The two lightweight-FFN executions inside one interleaved layer
      // read a single weight pair by construction, even when nothing else
      // is shared.
      p.groups.push_back({fn, GroupKind::LightFfnPair, {detail::ffn_section(c.d_model, c.d_decffn)}});
      p.bindings.push_back({slot_name(false, j, "ffn_a"), fn});
      p.bindings.push_back({slot_name(false, j, "ffn_b"), fn});
    }
  }
  return p;
}

inline SharingPlan build_universal_plan(const ModelConfig& c) {
  SharingPlan p;
  p.preset = "universal";
  GroupSpec enc{"enc_layer",
                GroupKind::LayerSet,
                {detail::attn_section("attn", c.d_model), detail::ffn_section(c.d_model, c.d_encffn)}};
  GroupSpec dec{"dec_layer",
                GroupKind::LayerSet,
                {detail::attn_section("self", c.d_model), detail::attn_section("cross", c.d_model),
                 detail::ffn_section(c.d_model, c.d_decffn)}};
  p.groups = {enc, dec};
  for (int i = 1; i <= c.enc_layers; ++i) p.bindings.push_back({slot_name(true, i, "layer"), "enc_layer"});
  for (int j = 1; j <= c.dec_layers; ++j) p.bindings.push_back({slot_name(false, j, "layer"), "dec_layer"});
  return p;
}

// Cycle-shared encoder groups plus decoder attention tied into the encoder:
// decoder layer j's self-attention reads encoder layer 2j-1's attention
// group, its cross-attention reads layer 2j's, and all light FFNs share one
// group.
inline SharingPlan build_edgeformer_plan(const ModelConfig& c, int attn_cycle = 0,
                                         int ffn_cycle = 0,
                                         const std::vector<int>* ffn_assign = nullptr) {
  if (c.decoder_style != DecoderStyle::Interleaved)
    throw ConfigError("edgeformer plan requires decoder_style=interleaved");
  if (2 * c.dec_layers > c.enc_layers)
    throw ConfigError("edgeformer plan requires 2*dec_layers <= enc_layers, got " +
                      std::to_string(c.dec_layers) + "+" + std::to_string(c.enc_layers));
  const int ca = attn_cycle > 0 ? attn_cycle : detail::attention_cycle(c.enc_layers);
  const int cf = ffn_cycle > 0 ? ffn_cycle : std::min(2, c.enc_layers);
  if (ffn_assign && (int)ffn_assign->size() != c.enc_layers)
    throw ConfigError("plan.custom.enc_ffn_assign must list one group per encoder layer");

  SharingPlan p;
  p.preset = "edgeformer";
  for (int g = 1; g <= ca; ++g)
    p.groups.push_back({"attn" + std::to_string(g),
                        GroupKind::AttentionQuad,
                        {detail::attn_section("attn", c.d_model)}});
  int n_ffn_groups = cf;
  if (ffn_assign) {
    n_ffn_groups = 0;
    for (int id : *ffn_assign) {
      if (id < 1) throw ConfigError("plan.custom.enc_ffn_assign entries are 1-based group ids");
      n_ffn_groups = std::max(n_ffn_groups, id);
    }
  }
  for (int g = 1; g <= n_ffn_groups; ++g)
    p.groups.push_back({"encffn" + std::to_string(g),
                        GroupKind::FfnPair,
                        {detail::ffn_section(c.d_model, c.d_encffn)}});
  p.groups.push_back({"lightffn", GroupKind::LightFfnPair, {detail::ffn_section(c.d_model, c.d_decffn)}});

  auto enc_attn_group = [&](int layer) { return "attn" + std::to_string(((layer - 1) % ca) + 1); };
  for (int i = 1; i <= c.enc_layers; ++i) {
    const int fg = ffn_assign ? (*ffn_assign)[i - 1] : ((i - 1) % cf) + 1;
    p.bindings.push_back({slot_name(true, i, "attn"), enc_attn_group(i)});
    p.bindings.push_back({slot_name(true, i, "ffn"), "encffn" + std::to_string(fg)});
  }
  for (int j = 1; j <= c.dec_layers; ++j) {
    p.bindings.push_back({slot_name(false, j, "self"), enc_attn_group(2 * j - 1)});
    p.bindings.push_back({slot_name(false, j, "cross"), enc_attn_group(2 * j)});
    p.bindings.push_back({slot_name(false, j, "ffn_a"), "lightffn"});
    p.bindings.push_back({slot_name(false, j, "ffn_b"), "lightffn"});
  }
  return p;
}

// Custom spec fields: enc_attn_cycle, enc_ffn_cycle xor enc_ffn_assign,
// decoder in {edgeformer, private, universal}.
inline SharingPlan build_custom_plan(const ModelConfig& c, const json& spec) {
  require_object(spec, "plan.custom");
  reject_unknown_keys(spec, {"enc_attn_cycle", "enc_ffn_cycle", "enc_ffn_assign", "decoder"},
                      "plan.custom");
  const int ca = get_or(spec, "enc_attn_cycle", detail::attention_cycle(c.enc_layers), "plan.custom");
  if (ca < 1 || ca > c.enc_layers)
    throw ConfigError("plan.custom.enc_attn_cycle out of range: " + std::to_string(ca));
  std::optional<std::vector<int>> assign;
  if (spec.contains("enc_ffn_assign")) {
    if (spec.contains("enc_ffn_cycle"))
      throw ConfigError("plan.custom: give enc_ffn_cycle or enc_ffn_assign, not both");
    assign = get_required<std::vector<int>>(spec, "enc_ffn_assign", "plan.custom");
  }
  const int cf = get_or(spec, "enc_ffn_cycle", std::min(2, c.enc_layers), "plan.custom");
  if (cf < 1 || cf > c.enc_layers)
    throw ConfigError("plan.custom.enc_ffn_cycle out of range: " + std::to_string(cf));
  const std::string dec = get_or<std::string>(spec, "decoder", "edgeformer", "plan.custom");

  if (dec == "edgeformer") {
    SharingPlan p = build_edgeformer_plan(c, ca, cf, assign ? &*assign : nullptr);
    p.preset = "custom";
    return p;
  }

  // Encoder cycles with an untied decoder (private per layer, or one
  // universal decoder group).
  SharingPlan p;
  p.preset = "custom";
  for (int g = 1; g <= ca; ++g)
    p.groups.push_back({"attn" + std::to_string(g),
                        GroupKind::AttentionQuad,
                        {detail::attn_section("attn", c.d_model)}});
  int n_ffn_groups = cf;
  if (assign) {
    if ((int)assign->size() != c.enc_layers)
      throw ConfigError("plan.custom.enc_ffn_assign must list one group per encoder layer");
    n_ffn_groups = 0;
    for (int id : *assign) {
      if (id < 1) throw ConfigError("plan.custom.enc_ffn_assign entries are 1-based group ids");
      n_ffn_groups = std::max(n_ffn_groups, id);
    }
  }
  for (int g = 1; g <= n_ffn_groups; ++g)
    p.groups.push_back({"encffn" + std::to_string(g),
                        GroupKind::FfnPair,
                        {detail::ffn_section(c.d_model, c.d_encffn)}});
  for (int i = 1; i <= c.enc_layers; ++i) {
    const int fg = assign ? (*assign)[i - 1] : ((i - 1) % cf) + 1;
    p.bindings.push_back({slot_name(true, i, "attn"), "attn" + std::to_string(((i - 1) % ca) + 1)});
    p.bindings.push_back({slot_name(true, i, "ffn"), "encffn" + std::to_string(fg)});
  }
  if (dec == "universal") {
    p.groups.push_back({"dec_layer",
                        GroupKind::LayerSet,
                        {detail::attn_section("self", c.d_model),
                         detail::attn_section("cross", c.d_model),
                         detail::ffn_section(c.d_model, c.d_decffn)}});
    for (int j = 1; j <= c.dec_layers; ++j)
      p.bindings.push_back({slot_name(false, j, "layer"), "dec_layer"});
  } else if (dec == "private") {
    SharingPlan full = build_full_plan(c);
    for (const auto& g : full.groups)
      if (g.name.rfind("dec", 0) == 0) p.groups.push_back(g);
    for (const auto& b : full.bindings)
      if (b.slot.rfind("dec", 0) == 0) p.bindings.push_back(b);
  } else {
    throw ConfigError("plan.custom.decoder must be edgeformer, private, or universal; got \"" +
                      dec + "\"");
  }
  return p;
}

inline SharingPlan build_plan(const ModelConfig& c, const std::string& preset,
                              const json* custom_spec = nullptr) {
  c.validate();
  SharingPlan p;
  if (preset == "full")
    p = build_full_plan(c);
  else if (preset == "universal")
    p = build_universal_plan(c);
  else if (preset == "edgeformer")
    p = build_edgeformer_plan(c);
  else if (preset == "custom")
    p = build_custom_plan(c, custom_spec ? *custom_spec : json::object());
  else
    throw ConfigError("plan.preset must be full, universal, edgeformer, or custom; got \"" +
                      preset + "\"");
  auto errors = validate_plan(p, c);
  if (!errors.empty()) {
    std::string msg = "plan failed validation:";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw ConfigError(msg);
  }
  return p;
}

// ---- serialization ----------------------------------------------------------

inline json plan_to_json(const SharingPlan& p) {
  json groups = json::array();
  for (const auto& g : p.groups) {
    json sections = json::array();
    for (const auto& s : g.sections) {
      json sj{{"key", s.key},
              {"kind", s.kind == SectionKind::Attention ? "attn" : "ffn"},
              {"d", s.d}};
      if (s.kind == SectionKind::Ffn) sj["d_hidden"] = s.d_hidden;
      sections.push_back(sj);
    }
    groups.push_back(json{{"name", g.name}, {"kind", to_string(g.kind)}, {"sections", sections}});
  }
  json bindings = json::array();
  for (const auto& b : p.bindings) bindings.push_back(json{{"slot", b.slot}, {"group", b.group}});
  return json{{"preset", p.preset}, {"groups", groups}, {"bindings", bindings}};
}

inline SharingPlan plan_from_json(const json& j) {
  require_object(j, "plan");
  reject_unknown_keys(j, {"preset", "groups", "bindings"}, "plan");
  SharingPlan p;
  p.preset = get_required<std::string>(j, "preset", "plan");
  for (const auto& gj : get_required<json>(j, "groups", "plan")) {
    require_object(gj, "plan.groups[]");
    reject_unknown_keys(gj, {"name", "kind", "sections"}, "plan.groups[]");
    GroupSpec g;
    g.name = get_required<std::string>(gj, "name", "plan.groups[]");
    g.kind = group_kind_from_string(get_required<std::string>(gj, "kind", "plan.groups[]"));
    for (const auto& sj : get_required<json>(gj, "sections", "plan.groups[]")) {
      require_object(sj, "plan.groups[].sections[]");
      reject_unknown_keys(sj, {"key", "kind", "d", "d_hidden"}, "plan.groups[].sections[]");
      SectionSpec s;
      s.key = get_required<std::string>(sj, "key", "plan.section");
      const std::string kind = get_required<std::string>(sj, "kind", "plan.section");
      if (kind == "attn")
        s.kind = SectionKind::Attention;
      else if (kind == "ffn")
        s.kind = SectionKind::Ffn;
      else
        throw ConfigError("plan.section.kind must be attn or ffn, got \"" + kind + "\"");
      s.d = get_required<int>(sj, "d", "plan.section");
      s.d_hidden = get_or(sj, "d_hidden", 0, "plan.section");
      g.sections.push_back(s);
    }
    p.groups.push_back(g);
  }
  for (const auto& bj : get_required<json>(j, "bindings", "plan")) {
    require_object(bj, "plan.bindings[]");
    reject_unknown_keys(bj, {"slot", "group"}, "plan.bindings[]");
    p.bindings.push_back({get_required<std::string>(bj, "slot", "plan.bindings[]"),
                          get_required<std::string>(bj, "group", "plan.bindings[]")});
  }
  return p;
}

}  // namespace edgeformer
