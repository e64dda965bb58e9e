#include <gtest/gtest.h>

#include "untrack/backbone.hpp"
#include "untrack/lora.hpp"
#include "untrack/rng.hpp"

using namespace untrack;

namespace {

Tensor random_mat(std::size_t n, std::size_t c, Rng& rng) {
  std::vector<double> v(n * c);
  for (double& x : v) x = rng.uniform(-1, 1);
  return Tensor({n, c}, std::move(v));
}

}  // namespace

TEST(LoraForward, ZeroBEqualsFrozenBase) {
  Rng rng(1);
  LoraLinear layer = make_unadapted(LinearLayer::create(6, 8, rng));
  LinearLayer base_copy = layer.w0;
  Rng wrap_rng(2);
  wrap_lora(layer, 2, wrap_rng);

  Tape tape;
  Tensor x = random_mat(5, 8, rng);
  Tensor wrapped = layer.forward(tape, x);
  Tensor plain = base_copy.forward(tape, x);
  for (std::size_t i = 0; i < wrapped.size(); ++i)
    EXPECT_NEAR(wrapped.data()[i], plain.data()[i], 1e-15);
}

TEST(LoraForward, HandMatrixProductOracle) {
  // W0 = 0, B = [[1],[0]], A = [[0,1]], x = [3,5] -> h = [5, 0].
  LoraLinear layer;
  layer.w0.weight = Tensor::zeros({2, 2});
  layer.a = Tensor({1, 2}, {0, 1}, true);
  layer.b = Tensor({2, 1}, {1, 0}, true);
  layer.rank = 1;
  Tape tape;
  Tensor x({1, 2}, {3, 5});
  Tensor h = lora_forward(tape, layer, x);
  EXPECT_DOUBLE_EQ(h.data()[0], 5.0);
  EXPECT_DOUBLE_EQ(h.data()[1], 0.0);
}

TEST(LoraForward, GradientReachesOnlyAdapters) {
  Rng rng(3);
  LoraLinear layer = make_unadapted(LinearLayer::create(4, 4, rng));
  Rng wrap_rng(4);
  wrap_lora(layer, 2, wrap_rng);
  // Make B nonzero so both adapters receive generic gradients.
  for (double& v : layer.b.data()) v = 0.3;

  Tape tape;
  Tensor x = random_mat(3, 4, rng);
  Tensor h = layer.forward(tape, x);
  Tensor loss = sum_all(tape, mul(tape, h, h));
  tape.backward(loss);

  EXPECT_FALSE(layer.w0.weight.requires_grad());
  EXPECT_FALSE(layer.w0.weight.has_grad());
  double a_norm = 0.0, b_norm = 0.0;
  for (double g : layer.a.grad()) a_norm += g * g;
  for (double g : layer.b.grad()) b_norm += g * g;
  EXPECT_GT(a_norm, 0.0);
  EXPECT_GT(b_norm, 0.0);
}

TEST(LoraForward, WidthMismatchThrows) {
  Rng rng(5);
  LoraLinear layer = make_unadapted(LinearLayer::create(4, 6, rng));
  Tape tape;
  Tensor x = random_mat(2, 5, rng);
  EXPECT_THROW(layer.forward(tape, x), ShapeError);
}

TEST(WrapAttention, FreshlyWrappedBlockIsOutputIdentical) {
  Rng rng(6);
  AttnBlock block = AttnBlock::create(16, 2, 2, rng);
  AttnBlock wrapped = block;  // shares tensors; wrap only adds adapters
  Rng wrap_rng(7);
  wrap_attention(wrapped, 4, wrap_rng);

  Tape tape;
  Tensor x = random_mat(6, 16, rng);
  Tensor a = block.forward(tape, x);
  Tensor b = wrapped.forward(tape, x);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data()[i], b.data()[i], 1e-15);
}

TEST(WrapAttention, ParameterCountDelta) {
  Rng rng(8);
  const std::size_t c = 32, r = 4;
  AttnBlock block = AttnBlock::create(c, 4, 2, rng);
  ParamList before;
  block.collect_params(before, "block");
  Rng wrap_rng(9);
  wrap_attention(block, r, wrap_rng);
  ParamList after;
  block.collect_params(after, "block");

  const ParamCounts cb = trainable_params(before);
  const ParamCounts ca = trainable_params(after);
  EXPECT_EQ(ca.total - cb.total, 4 * r * (c + c));  // 4 projections, r(d+k) each
}

TEST(WrapAttention, RankEqualToDimThrows) {
  Rng rng(10);
  AttnBlock block = AttnBlock::create(8, 2, 2, rng);
  Rng wrap_rng(11);
  EXPECT_THROW(wrap_attention(block, 8, wrap_rng), DomainError);
}

TEST(WrapAttention, OneBlockOfRank4Dim32Adds1024Params) {
  Rng rng(12);
  AttnBlock block = AttnBlock::create(32, 4, 2, rng);
  ParamList before;
  block.collect_params(before, "p");
  Rng wrap_rng(13);
  wrap_attention(block, 4, wrap_rng);
  ParamList after;
  block.collect_params(after, "p");
  // 4 * r * (d + k_in) = 4 * 4 * 64
  EXPECT_EQ(trainable_params(after).total - trainable_params(before).total, 1024u);
}

TEST(TrainableParams, FrozenOnlyBackboneCountsZero) {
  Rng rng(14);
  TrackerConfig cfg;
  cfg.image_size = 16;
  cfg.template_size = 8;
  cfg.patch_size = 8;
  cfg.embed_dim = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.rank_k = 2;
  cfg.rank_l = 4;
  cfg.lora_rank = 2;
  cfg.prompt_layers = {1, 2};
  cfg.no_lora = true;  // freeze without adapters
  TrackerModel model = TrackerModel::create(cfg, rng);
  Rng adapt_rng(15);
  model.freeze_backbone_and_adapt(adapt_rng);

  ParamList backbone_only;
  for (const ParamEntry& e : model.params())
    if (e.name.rfind("backbone", 0) == 0 || e.name.rfind("head", 0) == 0)
      backbone_only.push_back(e);
  EXPECT_EQ(trainable_params(backbone_only).trainable, 0u);
}

TEST(TrainableParams, DefaultConfigRatioBelowTenPercent) {
  Rng rng(16);
  TrackerConfig cfg;  // paper-selected defaults: k=4, l=8, r=4, rho=1/4
  TrackerModel model = TrackerModel::create(cfg, rng);
  Rng adapt_rng(17);
  model.freeze_backbone_and_adapt(adapt_rng);
  const ParamCounts counts = trainable_params(model.params());
  EXPECT_GT(counts.trainable, 0u);
  EXPECT_LE(counts.ratio(), 0.10);
}

TEST(LoraIdentity, WrappedModelMatchesFrozenBaselineOnTenInputs) {
  Rng rng(18);
  TrackerConfig cfg;
  cfg.image_size = 16;
  cfg.template_size = 8;
  cfg.patch_size = 8;
  cfg.embed_dim = 8;
  cfg.depth = 2;
  cfg.heads = 2;
  cfg.rank_k = 2;
  cfg.rank_l = 4;
  cfg.lora_rank = 2;
  cfg.prompt_layers = {1, 2};
  TrackerModel model = TrackerModel::create(cfg, rng);
  model.prompting_active = false;  // isolate the LoRA identity

  auto run = [&](const TrackerModel& m, Rng& data_rng) {
    std::vector<double> img(3 * 16 * 16), tpl(3 * 8 * 8);
    for (double& v : img) v = data_rng.uniform(0, 1);
    for (double& v : tpl) v = data_rng.uniform(0, 1);
    ModalSample search;
    search.rgb = Tensor({3, 16, 16}, img);
    search.modality = Modality::Absent;
    Tape tape;
    ForwardResult r = m.forward(tape, Tensor({3, 8, 8}, tpl), search);
    std::vector<double> flat = r.score_map.data();
    flat.insert(flat.end(), r.bbox_params.data().begin(), r.bbox_params.data().end());
    return flat;
  };

  Rng base_rng(100);
  std::vector<std::vector<double>> baseline;
  for (int i = 0; i < 10; ++i) baseline.push_back(run(model, base_rng));

  Rng adapt_rng(19);
  model.freeze_backbone_and_adapt(adapt_rng);
  model.prompting_active = false;

  Rng wrapped_rng(100);
  for (int i = 0; i < 10; ++i) {
    const std::vector<double> got = run(model, wrapped_rng);
    ASSERT_EQ(got.size(), baseline[i].size());
    for (std::size_t j = 0; j < got.size(); ++j)
      EXPECT_NEAR(got[j], baseline[i][j], 1e-12);
  }
}

TEST(LoraConfig, RankGridRunnable) {
  for (std::size_t r : {2u, 4u, 8u}) {
    Rng rng(20 + r);
    LoraLinear layer = make_unadapted(LinearLayer::create(16, 16, rng));
    wrap_lora(layer, r, rng);
    EXPECT_EQ(layer.a.dims()[0], r);
    EXPECT_EQ(layer.b.dims()[1], r);
  }
}

TEST(LoraScaling, OptionalAlphaOverRank) {
  Rng rng(30);
  LoraLinear plain = make_unadapted(LinearLayer::create(4, 4, rng));
  LoraLinear scaled = plain;
  Rng r1(31), r2(31);
  wrap_lora(plain, 2, r1, false);
  wrap_lora(scaled, 2, r2, true, 8.0);
  EXPECT_DOUBLE_EQ(plain.scale, 1.0);
  EXPECT_DOUBLE_EQ(scaled.scale, 4.0);
}
