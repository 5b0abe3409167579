#include "edgeformer/plan.hpp"

#include <gtest/gtest.h>

using namespace edgeformer;

namespace {

ModelConfig edgeformer_config() {
  ModelConfig c;
  c.enc_layers = 12;
  c.dec_layers = 2;
  c.d_model = 512;
  c.heads = 8;
  c.d_encffn = 2048;
  c.d_decffn = 128;
  c.decoder_style = DecoderStyle::Interleaved;
  return c;
}

ModelConfig vanilla_config(int M, int N, int d = 512, int dffn = 2048) {
  ModelConfig c;
  c.enc_layers = M;
  c.dec_layers = N;
  c.d_model = d;
  c.heads = 8;
  c.d_encffn = dffn;
  c.d_decffn = dffn;
  c.decoder_style = DecoderStyle::Vanilla;
  return c;
}

std::string bound_group(const SharingPlan& p, const std::string& slot) {
  for (const auto& b : p.bindings)
    if (b.slot == slot) return b.group;
  return "<unbound>";
}

TEST(EdgeformerPlan, GroupEnumeration) {
  auto plan = build_plan(edgeformer_config(), "edgeformer");
  EXPECT_EQ(plan.groups.size(), 7u);  // 4 attention + 2 encoder FFN + 1 light FFN
  int attn = 0, ffn = 0, light = 0;
  for (const auto& g : plan.groups) {
    if (g.kind == GroupKind::AttentionQuad) ++attn;
    if (g.kind == GroupKind::FfnPair) ++ffn;
    if (g.kind == GroupKind::LightFfnPair) ++light;
  }
  EXPECT_EQ(attn, 4);
  EXPECT_EQ(ffn, 2);
  EXPECT_EQ(light, 1);
}

TEST(EdgeformerPlan, LoadsMatchStatedCounts) {
  auto plan = build_plan(edgeformer_config(), "edgeformer");
  auto loads = plan.load_report();
  EXPECT_EQ(loads["attn1"], 4);
  EXPECT_EQ(loads["attn2"], 4);
  EXPECT_EQ(loads["attn3"], 4);
  EXPECT_EQ(loads["attn4"], 4);
  EXPECT_EQ(loads["encffn1"], 6);
  EXPECT_EQ(loads["encffn2"], 6);
  EXPECT_EQ(loads["lightffn"], 4);
}

TEST(EdgeformerPlan, DecoderTiesIntoEncoderGroups) {
  auto plan = build_plan(edgeformer_config(), "edgeformer");
  // decoder layer j: self-attn reads encoder layer 2j-1's group, cross-attn
  // reads layer 2j's
  EXPECT_EQ(bound_group(plan, "dec[1].self"), bound_group(plan, "enc[1].attn"));
  EXPECT_EQ(bound_group(plan, "dec[1].cross"), bound_group(plan, "enc[2].attn"));
  EXPECT_EQ(bound_group(plan, "dec[2].self"), bound_group(plan, "enc[3].attn"));
  EXPECT_EQ(bound_group(plan, "dec[2].cross"), bound_group(plan, "enc[4].attn"));
  EXPECT_EQ(bound_group(plan, "dec[1].self"), "attn1");
  EXPECT_EQ(bound_group(plan, "dec[2].cross"), "attn4");
  // attention cycle: layer i and i+4 share
  EXPECT_EQ(bound_group(plan, "enc[1].attn"), bound_group(plan, "enc[5].attn"));
  EXPECT_EQ(bound_group(plan, "enc[5].attn"), bound_group(plan, "enc[9].attn"));
  // ffn cycle: layer i and i+2 share
  EXPECT_EQ(bound_group(plan, "enc[1].ffn"), bound_group(plan, "enc[3].ffn"));
  EXPECT_NE(bound_group(plan, "enc[1].ffn"), bound_group(plan, "enc[2].ffn"));
}

TEST(EdgeformerPlan, RequiresInterleavedDecoder) {
  auto c = vanilla_config(12, 2);
  EXPECT_THROW(build_plan(c, "edgeformer"), ConfigError);
}

TEST(EdgeformerPlan, RequiresEncoderTwiceAsDeep) {
  auto c = edgeformer_config();
  c.enc_layers = 3;  // 2N = 4 > 3
  EXPECT_THROW(build_plan(c, "edgeformer"), ConfigError);
}

TEST(EdgeformerPlan, MiniModelUsesCycleOne) {
  ModelConfig c;
  c.enc_layers = 4;
  c.dec_layers = 2;
  c.d_model = 32;
  c.heads = 4;
  c.d_encffn = 128;
  c.d_decffn = 8;
  c.vocab_size = 16;
  c.decoder_style = DecoderStyle::Interleaved;
  auto plan = build_plan(c, "edgeformer");
  auto loads = plan.load_report();
  // one attention group: 4 encoder + 2 self + 2 cross = 8 uses
  EXPECT_EQ(loads["attn1"], 8);
  EXPECT_EQ(loads["encffn1"], 2);
  EXPECT_EQ(loads["encffn2"], 2);
  EXPECT_EQ(loads["lightffn"], 4);
  EXPECT_EQ(plan.groups.size(), 4u);
}

TEST(UniversalPlan, TwoGroupsWithLayerLoads) {
  auto plan = build_plan(vanilla_config(12, 2), "universal");
  EXPECT_EQ(plan.groups.size(), 2u);
  auto loads = plan.load_report();
  EXPECT_EQ(loads["enc_layer"], 12);
  EXPECT_EQ(loads["dec_layer"], 2);
}

TEST(UniversalPlan, LayerBindingsCoverAllFineSlots) {
  auto c = vanilla_config(12, 2);
  auto plan = build_plan(c, "universal");
  auto fine = expand_bindings(plan, c);
  EXPECT_EQ(fine.size(), architecture_slots(c).size());
  EXPECT_TRUE(validate_plan(plan, c).empty());
}

TEST(FullPlan, OneGroupPerSlot) {
  auto c = vanilla_config(6, 6);
  auto plan = build_plan(c, "full");
  EXPECT_EQ(plan.groups.size(), 6u * 2 + 6u * 3);
  for (const auto& [name, load] : plan.load_report()) EXPECT_EQ(load, 1) << name;
}

TEST(FullPlan, InterleavedLayerSharesItsLightFfnPair) {
  auto c = edgeformer_config();
  auto plan = build_plan(c, "full");
  EXPECT_EQ(bound_group(plan, "dec[1].ffn_a"), bound_group(plan, "dec[1].ffn_b"));
  EXPECT_NE(bound_group(plan, "dec[1].ffn_a"), bound_group(plan, "dec[2].ffn_a"));
  auto loads = plan.load_report();
  EXPECT_EQ(loads[bound_group(plan, "dec[1].ffn_a")], 2);
}

TEST(AttentionCycle, DivisorNearestThirdTiesTowardSmaller) {
  EXPECT_EQ(detail::attention_cycle(12), 4);
  EXPECT_EQ(detail::attention_cycle(6), 2);
  EXPECT_EQ(detail::attention_cycle(4), 1);
  EXPECT_EQ(detail::attention_cycle(3), 1);
  EXPECT_EQ(detail::attention_cycle(24), 8);
  EXPECT_EQ(detail::attention_cycle(1), 1);
}

// ---------------------------------------------------------------------
// validation
// ---------------------------------------------------------------------

TEST(Validation, UnboundSlotIsNamed) {
  auto c = edgeformer_config();
  auto plan = build_plan(c, "edgeformer");
  std::erase_if(plan.bindings, [](const Binding& b) { return b.slot == "dec[1].cross"; });
  auto errors = validate_plan(plan, c);
  ASSERT_EQ(errors.size(), 1u);
  EXPECT_NE(errors[0].find("dec[1].cross"), std::string::npos);
  EXPECT_NE(errors[0].find("unbound"), std::string::npos);
}

TEST(Validation, KindMismatchIsReported) {
  auto c = edgeformer_config();
  auto plan = build_plan(c, "edgeformer");
  for (auto& b : plan.bindings)
    if (b.slot == "enc[1].attn") b.group = "encffn1";
  auto errors = validate_plan(plan, c);
  ASSERT_FALSE(errors.empty());
  EXPECT_NE(errors[0].find("enc[1].attn"), std::string::npos);
}

TEST(Validation, MissingGroupIsReported) {
  auto c = edgeformer_config();
  auto plan = build_plan(c, "edgeformer");
  plan.bindings[0].group = "nope";
  auto errors = validate_plan(plan, c);
  bool found = false;
  for (const auto& e : errors) found = found || e.find("missing group \"nope\"") != std::string::npos;
  EXPECT_TRUE(found);
}

TEST(Validation, DoubleBindingIsReported) {
  auto c = edgeformer_config();
  auto plan = build_plan(c, "edgeformer");
  plan.bindings.push_back({"enc[1].attn", "attn2"});
  auto errors = validate_plan(plan, c);
  bool found = false;
  for (const auto& e : errors) found = found || e.find("bound 2 times") != std::string::npos;
  EXPECT_TRUE(found);
}

TEST(Validation, ShapeMismatchIsReported) {
  auto c = edgeformer_config();
  auto plan = build_plan(c, "edgeformer");
  c.d_encffn = 1024;  // groups were built for 2048
  auto errors = validate_plan(plan, c);
  EXPECT_FALSE(errors.empty());
}

TEST(Validation, ValidPlanHasNoErrors) {
  auto c = edgeformer_config();
  EXPECT_TRUE(validate_plan(build_plan(c, "edgeformer"), c).empty());
  auto v = vanilla_config(6, 6);
  EXPECT_TRUE(validate_plan(build_plan(v, "full"), v).empty());
  EXPECT_TRUE(validate_plan(build_plan(v, "universal"), v).empty());
}

// ---------------------------------------------------------------------
// custom plans
// ---------------------------------------------------------------------

TEST(CustomPlan, ExplicitFfnLoadAssignment) {
  auto c = edgeformer_config();
  json spec{{"enc_attn_cycle", 4},
            {"enc_ffn_assign", json::array({1, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2, 2})}};
  auto plan = build_plan(c, "custom", &spec);
  auto loads = plan.load_report();
  EXPECT_EQ(loads["encffn1"], 1);
  EXPECT_EQ(loads["encffn2"], 11);
  EXPECT_EQ(loads["lightffn"], 4);
}

TEST(CustomPlan, ThreeAndFourGroupCycles) {
  auto c = edgeformer_config();
  c.d_encffn = 1536;
  json spec3{{"enc_ffn_cycle", 3}};
  auto p3 = build_plan(c, "custom", &spec3);
  auto l3 = p3.load_report();
  EXPECT_EQ(l3["encffn1"], 4);
  EXPECT_EQ(l3["encffn2"], 4);
  EXPECT_EQ(l3["encffn3"], 4);

  c.d_encffn = 1024;
  json spec4{{"enc_ffn_cycle", 4}};
  auto p4 = build_plan(c, "custom", &spec4);
  auto l4 = p4.load_report();
  for (int g = 1; g <= 4; ++g) EXPECT_EQ(l4["encffn" + std::to_string(g)], 3);
}

TEST(CustomPlan, PrivateAndUniversalDecoders) {
  auto c = vanilla_config(6, 6);
  json priv{{"enc_attn_cycle", 2}, {"enc_ffn_cycle", 2}, {"decoder", "private"}};
  auto pp = build_plan(c, "custom", &priv);
  EXPECT_TRUE(validate_plan(pp, c).empty());
  EXPECT_EQ(pp.load_report()["dec1.self"], 1);

  json uni{{"enc_attn_cycle", 2}, {"enc_ffn_cycle", 2}, {"decoder", "universal"}};
  auto pu = build_plan(c, "custom", &uni);
  EXPECT_TRUE(validate_plan(pu, c).empty());
  EXPECT_EQ(pu.load_report()["dec_layer"], 6);
}

TEST(CustomPlan, RejectsUnknownKeysAndConflicts) {
  auto c = edgeformer_config();
  json bad1{{"enc_attn_cyc", 4}};
  EXPECT_THROW(build_plan(c, "custom", &bad1), ConfigError);
  json bad2{{"enc_ffn_cycle", 2}, {"enc_ffn_assign", json::array({1})}};
  EXPECT_THROW(build_plan(c, "custom", &bad2), ConfigError);
  json bad3{{"decoder", "florp"}};
  EXPECT_THROW(build_plan(c, "custom", &bad3), ConfigError);
}

// ---------------------------------------------------------------------
// serialization
// ---------------------------------------------------------------------

TEST(PlanSerialization, RoundTripIsIdentity) {
  for (const char* preset : {"full", "universal", "edgeformer"}) {
    auto c = std::string(preset) == "edgeformer" ? edgeformer_config() : vanilla_config(6, 6);
    auto plan = build_plan(c, preset);
    auto back = plan_from_json(plan_to_json(plan));
    EXPECT_EQ(plan, back) << preset;
  }
}

TEST(PlanSerialization, CustomRoundTrip) {
  auto c = edgeformer_config();
  json spec{{"enc_ffn_assign", json::array({1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 2})}};
  auto plan = build_plan(c, "custom", &spec);
  EXPECT_EQ(plan, plan_from_json(plan_to_json(plan)));
}

TEST(PlanSerialization, RejectsUnknownKeys) {
  auto plan = build_plan(edgeformer_config(), "edgeformer");
  auto j = plan_to_json(plan);
  j["extra"] = 1;
  EXPECT_THROW(plan_from_json(j), ConfigError);
}

// ---------------------------------------------------------------------
// config parsing
// ---------------------------------------------------------------------

TEST(ModelConfigJson, DefaultsAndRoundTrip) {
  json j{{"d_model", 384}, {"decoder_style", "vanilla"}};
  auto c = model_config_from_json(j);
  EXPECT_EQ(c.d_encffn, 4 * 384);
  EXPECT_EQ(c.d_decffn, 4 * 384);
  auto c2 = model_config_from_json(model_config_to_json(c));
  EXPECT_EQ(c2.d_model, 384);
  EXPECT_EQ(c2.decoder_style, DecoderStyle::Vanilla);
}

TEST(ModelConfigJson, InterleavedDefaultsDecffnToQuarter) {
  json j{{"d_model", 512}, {"decoder_style", "interleaved"}};
  auto c = model_config_from_json(j);
  EXPECT_EQ(c.d_decffn, 128);
}

TEST(ModelConfigJson, RejectsUnknownKey) {
  json j{{"d_modl", 512}};
  EXPECT_THROW(model_config_from_json(j), ConfigError);
}

TEST(ModelConfigJson, RejectsInvalidValues) {
  json bad_heads{{"d_model", 30}, {"heads", 4}};  // 30 % 4 != 0
  EXPECT_THROW(model_config_from_json(bad_heads), ConfigError);
  json bad_ffn{{"d_model", 64}, {"decoder_style", "interleaved"}, {"d_decffn", 64}};
  EXPECT_THROW(model_config_from_json(bad_ffn), ConfigError);
  json bad_vocab{{"vocab_size", 2}};
  EXPECT_THROW(model_config_from_json(bad_vocab), ConfigError);
}

TEST(Slots, ParseAndFormat) {
  auto r = parse_slot("dec[2].ffn_b");
  EXPECT_FALSE(r.encoder);
  EXPECT_EQ(r.layer, 2);
  EXPECT_EQ(r.role, "ffn_b");
  EXPECT_EQ(slot_name(false, 2, "ffn_b"), "dec[2].ffn_b");
  EXPECT_THROW(parse_slot("bogus"), ConfigError);
  EXPECT_THROW(parse_slot("mid[1].attn"), ConfigError);
}

}  // namespace
