#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

#include "eqssl/clustering.hpp"
#include "eqssl/data.hpp"
#include "eqssl/encoder.hpp"
#include "eqssl/ftl.hpp"
#include "eqssl/trainer.hpp"

using namespace eqssl;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.input_h = c.input_w = 8;
  c.conv_channels = {4, 6};
  c.proj_hidden = 6;
  c.embed_dim = 8;
  return c;
}

Mat<double> random_images(const EncoderConfig& c, long batch, std::uint64_t seed) {
  Rng rng(seed);
  Mat<double> x(c.input_c, batch * c.input_h * c.input_w);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform();
  return x;
}

template <typename Params>
void perturb_biases(Params& p, std::uint64_t seed) {
  Rng rng(seed);
  p.for_each([&rng](ArrayView<double> a) {
    if (a.shape.size() == 1)
      for (std::size_t i = 0; i < a.size; ++i) a.data[i] = 0.3 * rng.normal();
  });
}

// max over arrays of |analytic - numeric| / max(|analytic|, |numeric|), using
// central differences on every entry
template <typename Params>
double gradient_rel_error(Params& p, Params& analytic, const std::function<double()>& loss, double h = 1e-6) {
  auto pv = views_of<double>(p);
  auto gv = views_of<double>(analytic);
  double worst = 0.0;
  for (std::size_t k = 0; k < pv.size(); ++k) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t i = 0; i < pv[k].size; ++i) {
      double& w = pv[k].data[i];
      const double keep = w;
      w = keep + h;
      const double up = loss();
      w = keep - h;
      const double down = loss();
      w = keep;
      const double num = (up - down) / (2 * h);
      const double ana = gv[k].data[i];
      diff += (num - ana) * (num - ana);
      na += ana * ana;
      nn += num * num;
    }
    const double denom = std::max(std::sqrt(std::max(na, nn)), 1e-12);
    worst = std::max(worst, std::sqrt(diff) / denom);
  }
  return worst;
}

}  // namespace

TEST(InitEncoder, SameSeedSameParameters) {
  auto a = init_encoder<float>(EncoderConfig{}, 5);
  auto b = init_encoder<float>(EncoderConfig{}, 5);
  auto c = init_encoder<float>(EncoderConfig{}, 6);
  auto va = views_of<float>(a), vb = views_of<float>(b), vc = views_of<float>(c);
  ASSERT_EQ(va.size(), vb.size());
  bool any_diff = false;
  for (std::size_t k = 0; k < va.size(); ++k) {
    EXPECT_EQ(va[k].name, vb[k].name);
    for (std::size_t i = 0; i < va[k].size; ++i) {
      EXPECT_EQ(va[k].data[i], vb[k].data[i]);
      any_diff |= va[k].data[i] != vc[k].data[i];
    }
  }
  EXPECT_TRUE(any_diff);
}

TEST(InitEncoder, OddEmbeddingIsConfigError) {
  EncoderConfig c;
  c.embed_dim = 31;
  EXPECT_THROW(init_encoder<float>(c, 0), ConfigError);
  EncoderConfig e;
  e.conv_channels.clear();
  EXPECT_THROW(init_encoder<float>(e, 0), ConfigError);
}

TEST(InitEncoder, DefaultParameterCount) {
  // 3x3 convs 1->16->32->64, dense 64->128->32, all with biases
  const std::size_t expected = (16 * 9 + 16) + (32 * 16 * 9 + 32) + (64 * 32 * 9 + 64) + (128 * 64 + 128) +
                               (32 * 128 + 32);
  EXPECT_EQ(expected, 35744u);
  EXPECT_EQ(init_encoder<float>(EncoderConfig{}, 1).parameter_count(), expected);
}

TEST(InitEncoder, BiasesZeroAndWeightsBounded) {
  auto p = init_encoder<double>(EncoderConfig{}, 3);
  p.for_each([](ArrayView<double> a) {
    if (a.shape.size() == 1) {
      for (std::size_t i = 0; i < a.size; ++i) EXPECT_EQ(a.data[i], 0.0) << a.name;
    } else {
      const double bound = std::sqrt(2.0) * std::sqrt(3.0 / double(a.shape[1]));
      for (std::size_t i = 0; i < a.size; ++i) EXPECT_LE(std::abs(a.data[i]), bound) << a.name;
    }
  });
}

TEST(ForwardBackbone, ZeroImageZeroBiasGivesZero) {
  const auto p = init_encoder<double>(EncoderConfig{}, 9);
  const Mat<double> x = Mat<double>::Zero(1, 3 * 32 * 32);
  const Mat<double> h = forward_backbone(p, x);
  ASSERT_EQ(h.rows(), 3);
  ASSERT_EQ(h.cols(), 64);
  EXPECT_EQ(h.cwiseAbs().maxCoeff(), 0.0);
}

TEST(ForwardBackbone, ShapeMismatchThrows) {
  const auto p = init_encoder<double>(EncoderConfig{}, 9);
  EXPECT_THROW(forward_backbone(p, Mat<double>(Mat<double>::Zero(1, 100))), ArgumentError);
  EXPECT_THROW(forward_backbone(p, Mat<double>(Mat<double>::Zero(3, 1024))), ArgumentError);
  EXPECT_THROW(forward_projection(p, Mat<double>(Mat<double>::Zero(2, 10))), ArgumentError);
}

TEST(ForwardBackbone, SingleWeightProbeIsLinear) {
  const auto cfg = tiny_config();
  auto p = init_encoder<double>(cfg, 2);
  const Mat<double> x = random_images(cfg, 2, 4);
  BackboneTape<double> before;
  forward_backbone(p, x, &before);
  const double w = p.conv[1].weight(3, 7);
  p.conv[1].weight(3, 7) = 2 * w;
  BackboneTape<double> after;
  forward_backbone(p, x, &after);
  // only unit 3 of layer 1 moves, by w times input column 7
  const Mat<double> delta = after.pre[1] - before.pre[1];
  for (Eigen::Index u = 0; u < delta.rows(); ++u) {
    if (u == 3) {
      EXPECT_LE((delta.row(u) - w * before.cols[1].row(7)).cwiseAbs().maxCoeff(), 1e-12);
    } else {
      EXPECT_EQ(delta.row(u).cwiseAbs().maxCoeff(), 0.0);
    }
  }
  EXPECT_EQ((after.pre[0] - before.pre[0]).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ForwardBackbone, BatchEqualsPerSample) {
  const auto ds = generate_dataset(6, 3, 8);
  const auto p = init_encoder<float>(EncoderConfig{}, 1);
  std::vector<const Image*> all;
  for (const auto& s : ds.samples) all.push_back(&s.image);
  const Mat<float> zb = encode(p, pack_images<float>(all, p.config));
  for (std::size_t i = 0; i < all.size(); ++i) {
    const Mat<float> zi = encode(p, pack_images<float>(std::vector<const Image*>{all[i]}, p.config));
    EXPECT_LE((zb.row(long(i)) - zi.row(0)).cwiseAbs().maxCoeff(), 1e-6f);
  }
  EXPECT_EQ(zb, encode(p, pack_images<float>(all, p.config)));
}

TEST(ForwardProjection, UnitNormFuzz) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto p = init_encoder<double>(EncoderConfig{}, rng.next_u64());
    Mat<double> h(5, 64);
    for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = 10.0 * rng.normal();
    const Mat<double> z = forward_projection(p, h);
    for (Eigen::Index r = 0; r < z.rows(); ++r) EXPECT_NEAR(z.row(r).norm(), 1.0, 1e-6);
  }
}

TEST(ForwardProjection, ZeroVectorDoesNotThrow) {
  const auto p = init_encoder<double>(EncoderConfig{}, 1);
  const Mat<double> z = forward_projection(p, Mat<double>(Mat<double>::Zero(1, 64)));
  EXPECT_TRUE(z.allFinite());
}

TEST(ForwardProjection, PositiveScaleInvariance) {
  // relu layers with zero biases are positively homogeneous
  EncoderConfig c;
  c.activation = Activation::relu;
  const auto p = init_encoder<double>(c, 4);
  Rng rng(1);
  Mat<double> h(3, 64);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = rng.normal();
  EXPECT_LE((forward_projection(p, h) - forward_projection(p, Mat<double>(2.0 * h))).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GazeHead, ZeroWeightsGiveZero) {
  GazeHead<double> head;
  head.linear.resize(2, 64);
  Rng rng(3);
  Mat<double> h(4, 64);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = rng.normal();
  const Mat<double> g = forward_gaze_head(head, h);
  ASSERT_EQ(g.rows(), 4);
  ASSERT_EQ(g.cols(), 2);
  EXPECT_EQ(g.cwiseAbs().maxCoeff(), 0.0);
}

TEST(GazeHead, OneStepL1Descent) {
  const auto cfg = tiny_config();
  auto p = init_encoder<double>(cfg, 6);
  auto head = init_gaze_head<double>(cfg.feature_dim(), 7);
  const Mat<double> x = random_images(cfg, 1, 8);
  Mat<double> y(1, 2);
  y << 0.4, -0.3;
  auto loss_of = [&] { return gaze_l1_loss<double>(forward_gaze_head(head, forward_backbone(p, x)), y); };
  const double before = loss_of();

  BackboneTape<double> tape;
  const Mat<double> h = forward_backbone(p, x, &tape);
  Mat<double> dpred;
  gaze_l1_loss<double>(forward_gaze_head(head, h), y, &dpred);
  auto eg = p.zeros_like();
  auto hg = head.zeros_like();
  backward_backbone(p, tape, backward_gaze_head(head, h, dpred, hg), eg);
  auto pv = views_of<double>(p), gv = views_of<double>(eg);
  auto hv = views_of<double>(head), hgv = views_of<double>(hg);
  for (std::size_t k = 0; k < pv.size(); ++k)
    for (std::size_t i = 0; i < pv[k].size; ++i) pv[k].data[i] -= 1e-3 * gv[k].data[i];
  for (std::size_t k = 0; k < hv.size(); ++k)
    for (std::size_t i = 0; i < hv[k].size; ++i) hv[k].data[i] -= 1e-3 * hgv[k].data[i];
  EXPECT_LT(loss_of(), before);
}

TEST(Gradients, ConstantLossGivesZeroGradients) {
  const auto cfg = tiny_config();
  auto p = init_encoder<double>(cfg, 1);
  const Mat<double> x = random_images(cfg, 3, 2);
  BackboneTape<double> bt;
  ProjectionTape<double> pt;
  const Mat<double> z = forward_projection(p, forward_backbone(p, x, &bt), &pt);
  auto g = p.zeros_like();
  backward_backbone(p, bt, backward_projection(p, pt, Mat<double>(Mat<double>::Zero(z.rows(), z.cols())), g), g);
  g.for_each([](ArrayView<double> a) {
    for (std::size_t i = 0; i < a.size; ++i) EXPECT_EQ(a.data[i], 0.0) << a.name;
  });
}

TEST(Gradients, NonFiniteNamesParameter) {
  auto g = init_encoder<double>(tiny_config(), 1).zeros_like();
  g.proj1.weight(0, 0) = std::numeric_limits<double>::quiet_NaN();
  try {
    require_finite(g, 12);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("proj1"), std::string::npos);
  }
}

TEST(Gradients, ProjectionProbeMatchesFiniteDifferences) {
  const auto cfg = tiny_config();
  auto p = init_encoder<double>(cfg, 21);
  perturb_biases(p, 22);
  const Mat<double> x = random_images(cfg, 3, 23);
  Rng rng(24);
  Mat<double> probe(3, cfg.embed_dim);
  for (Eigen::Index i = 0; i < probe.size(); ++i) probe.data()[i] = rng.normal();
  auto loss = [&] { return encode(p, x).cwiseProduct(probe).sum(); };

  BackboneTape<double> bt;
  ProjectionTape<double> pt;
  forward_projection(p, forward_backbone(p, x, &bt), &pt);
  auto g = p.zeros_like();
  backward_backbone(p, bt, backward_projection(p, pt, probe, g), g);
  EXPECT_LT(gradient_rel_error(p, g, loss), 1e-4);
}

TEST(Gradients, GazeLossMatchesFiniteDifferences) {
  const auto cfg = tiny_config();
  auto p = init_encoder<double>(cfg, 31);
  perturb_biases(p, 32);
  auto head = init_gaze_head<double>(cfg.feature_dim(), 33);
  const Mat<double> x = random_images(cfg, 4, 34);
  Mat<double> y(4, 2);
  y << 0.5, -0.4, -0.6, 0.3, 0.2, 0.7, -0.5, -0.8;
  auto loss = [&] { return gaze_l1_loss<double>(forward_gaze_head(head, forward_backbone(p, x)), y); };

  BackboneTape<double> tape;
  const Mat<double> h = forward_backbone(p, x, &tape);
  Mat<double> dpred;
  gaze_l1_loss<double>(forward_gaze_head(head, h), y, &dpred);
  auto eg = p.zeros_like();
  auto hg = head.zeros_like();
  backward_backbone(p, tape, backward_gaze_head(head, h, dpred, hg), eg);
  EXPECT_LT(gradient_rel_error(p, eg, loss), 1e-4);
  EXPECT_LT(gradient_rel_error(head, hg, loss), 1e-4);
}

namespace {

// swapped-prediction loss with externally fixed targets
double frozen_swat_loss(const Mat<double>& z1, const Mat<double>& z2, const std::vector<AffineTransform2D>& t1,
                        const std::vector<AffineTransform2D>& t2, const PrototypeBank<double>& bank,
                        const Mat<double>& c1, const Mat<double>& c2, double tau) {
  const Mat<double> l1 = log_softmax_rows<double>(scores(ftl_rows<double>(t2, z1), bank), tau);
  const Mat<double> l2 = log_softmax_rows<double>(scores(ftl_rows<double>(t1, z2), bank), tau);
  return -((l1.array() * c2.array()).sum() + (l2.array() * c1.array()).sum()) / double(z1.rows());
}

}  // namespace

TEST(Gradients, SwatLossMatchesFiniteDifferencesWithFrozenTargets) {
  const auto cfg = tiny_config();  // d = 8
  auto p = init_encoder<double>(cfg, 41);
  perturb_biases(p, 42);
  auto bank = init_prototypes<double>(cfg.embed_dim, 4, 43);
  ClusterConfig cc;
  cc.prototypes = 4;
  const long B = 4;
  const Mat<double> x = random_images(cfg, 2 * B, 44);
  std::vector<AffineTransform2D> t1, t2;
  for (int i = 0; i < B; ++i) {
    t1.push_back(compose(rotation_matrix(0.2 * i - 0.3), i % 2 ? hflip_matrix() : identity_transform()));
    t2.push_back(rotation_matrix(0.25 - 0.1 * i));
  }

  BackboneTape<double> bt;
  ProjectionTape<double> pt;
  const Mat<double> z = forward_projection(p, forward_backbone(p, x, &bt), &pt);
  const LossResult<double> r = swat_loss<double>(z.topRows(B), z.bottomRows(B), t1, t2, bank, cc);
  auto loss = [&] {
    const Mat<double> zz = encode(p, x);
    return frozen_swat_loss(zz.topRows(B), zz.bottomRows(B), t1, t2, bank, r.c1, r.c2, cc.temperature);
  };
  EXPECT_NEAR(loss(), r.loss, 1e-12);

  Mat<double> dz(z.rows(), z.cols());
  dz << r.dz1, r.dz2;
  auto g = p.zeros_like();
  backward_backbone(p, bt, backward_projection(p, pt, dz, g), g);
  EXPECT_LT(gradient_rel_error(p, g, loss), 1e-4);

  PrototypeBank<double> pg{r.dP};
  EXPECT_LT(gradient_rel_error(bank, pg, loss), 1e-4);
}

TEST(Calibration, StandardizesPreActivations) {
  const auto cfg = EncoderConfig{};
  auto p = init_encoder<double>(cfg, 3);
  const auto ds = generate_dataset(64, 8, 5);
  std::vector<const Image*> imgs;
  for (const auto& s : ds.samples) imgs.push_back(&s.image);
  const Mat<double> x = pack_images<double>(imgs, cfg);
  calibrate_encoder(p, x);
  BackboneTape<double> tape;
  const Mat<double> h = forward_backbone(p, x, &tape);
  for (const auto& pre : tape.pre)
    for (Eigen::Index u = 0; u < pre.rows(); ++u) {
      const double mean = pre.row(u).mean();
      const double var = (pre.row(u).array() - mean).square().mean();
      EXPECT_NEAR(mean, 0.0, 1e-6);
      EXPECT_NEAR(var, 1.0, 1e-3);
    }
  EXPECT_TRUE(h.allFinite());
}
