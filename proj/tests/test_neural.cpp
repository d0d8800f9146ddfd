#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "gradcheck.hpp"
#include "slidenet/neural/checkpoint.hpp"
#include "slidenet/neural/loss.hpp"
#include "slidenet/neural/optim.hpp"

using namespace slidenet;
using namespace slidenet::nn;
using test_support::grad_check;

namespace {

constexpr double kGradTol = 1e-6;

Mat random_mat(Index r, Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Mat m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Random weighting so every output entry reaches the scalar root.
Var weighted_sum(Tape& t, Var x, const Mat& w) { return sum_all(hadamard(x, t.constant(w))); }

ModelConfig tiny_config(Architecture arch = Architecture::Full) {
  ModelConfig c;
  c.architecture = arch;
  c.n_points = 6;
  c.impulse_widths = {5, 4};
  c.point_widths = {4, 6};
  c.shape_head_widths = {5, 4};
  c.joint_widths = {6, 5, 5, 4, 3};
  c.np_mlp_widths = {7, 5};
  c.plain_widths = {6, 5, 4};
  return c;
}

Batch random_batch(Index B, Index N, Rng& rng) {
  Batch b;
  b.impulse = random_mat(B, 4, rng);
  b.points = random_mat(B * N, 3, rng, -0.5, 0.5);
  return b;
}

Targets random_targets(Index B, Rng& rng) {
  Targets y;
  y.pos = random_mat(B, 2, rng, 0.5, 3.0);
  y.rot = random_mat(B, 1, rng, 10.0, 900.0);
  y.mass_inertia = random_mat(B, 2, rng, 0.5, 5.0);
  y.velocities = random_mat(B, 2, rng, 0.5, 2.0);
  return y;
}

} // namespace

TEST(Ops, ReluBackwardAtNegativeInputIsZero) {
  Parameter x("x", Mat::Constant(1, 1, -1.0));
  Tape t;
  t.backward(sum_all(relu(t.param(x))));
  EXPECT_EQ(x.grad(0, 0), 0.0);
  Parameter y("y", Mat::Constant(1, 1, 2.0));
  Tape t2;
  t2.backward(sum_all(relu(t2.param(y))));
  EXPECT_EQ(y.grad(0, 0), 1.0);
}

TEST(Ops, MaxpoolIgnoresRowOrder) {
  Rng rng(1);
  const Mat x = random_mat(10, 5, rng);
  std::vector<Index> perm(10);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm.begin(), perm.end());
  Mat xp(10, 5);
  for (Index r = 0; r < 10; ++r) xp.row(r) = x.row(perm[static_cast<std::size_t>(r)]);
  Tape t;
  const Mat a = set_maxpool(t.constant(x), 10).value();
  const Mat b = set_maxpool(t.constant(xp), 10).value();
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, Mat(x.colwise().maxCoeff()));
}

TEST(Ops, ShapeErrorsNameTheDims) {
  Tape t;
  const Var a = t.constant(Mat::Zero(2, 3));
  const Var b = t.constant(Mat::Zero(4, 5));
  try {
    matmul(a, b);
    FAIL();
  } catch (const UsageError& e) {
    EXPECT_NE(std::string(e.what()).find("2x3 vs 4x5"), std::string::npos);
  }
  EXPECT_THROW(add(a, b), UsageError);
  EXPECT_THROW(concat_cols(a, b), UsageError);
  EXPECT_THROW(set_maxpool(b, 3), UsageError);
  EXPECT_THROW(slice_cols(a, 2, 2), UsageError);
  EXPECT_THROW(t.backward(a), UsageError);
}

TEST(Ops, BackwardAccumulatesIntoSharedInputs) {
  Parameter x("x", Mat::Constant(1, 1, 3.0));
  Tape t;
  const Var v = t.param(x);
  t.backward(sum_all(add(hadamard(v, v), v)));  // x^2 + x
  EXPECT_EQ(x.grad(0, 0), 7.0);
}

TEST(GradCheck, ElementwiseAndStructuralOps) {
  Rng rng(2);
  Parameter a("a", random_mat(4, 3, rng)), b("b", random_mat(3, 5, rng)), c("c", random_mat(4, 3, rng));
  Parameter bias("bias", random_mat(1, 5, rng));
  const Mat w45 = random_mat(4, 5, rng), w43 = random_mat(4, 3, rng), w46 = random_mat(4, 6, rng);
  const Mat w26 = random_mat(2, 6, rng), w42 = random_mat(4, 2, rng);
  const Mat col_scale = random_mat(1, 3, rng);

  const std::vector<std::pair<std::string, std::function<Var(Tape&)>>> cases = {
      {"matmul", [&](Tape& t) { return weighted_sum(t, matmul(t.param(a), t.param(b)), w45); }},
      {"linear", [&](Tape& t) { return weighted_sum(t, linear(t.param(a), t.param(b), t.param(bias)), w45); }},
      {"add", [&](Tape& t) { return weighted_sum(t, add(t.param(a), t.param(c)), w43); }},
      {"hadamard", [&](Tape& t) { return weighted_sum(t, hadamard(t.param(a), t.param(c)), w43); }},
      {"scale", [&](Tape& t) { return weighted_sum(t, scale(t.param(a), -2.5), w43); }},
      {"scale_cols", [&](Tape& t) { return weighted_sum(t, scale_cols(t.param(a), col_scale), w43); }},
      {"relu", [&](Tape& t) { return weighted_sum(t, relu(t.param(a)), w43); }},
      {"concat", [&](Tape& t) { return weighted_sum(t, concat_cols(t.param(a), t.param(c)), w46); }},
      {"slice", [&](Tape& t) { return weighted_sum(t, slice_cols(t.param(a), 1, 2), w42); }},
      {"reshape", [&](Tape& t) { return weighted_sum(t, reshape_rows(t.param(a), 2), w26); }},
      {"maxpool", [&](Tape& t) { return weighted_sum(t, reshape_rows(set_maxpool(t.param(a), 2), 1), Mat(w26.topRows(1))); }},
      {"mean", [&](Tape& t) { return mean_all(hadamard(t.param(a), t.param(c))); }},
  };
  for (const auto& [name, f] : cases) {
    const auto rep = grad_check(f, {&a, &b, &c, &bias});
    EXPECT_LT(rep.max_rel, kGradTol) << name << ": " << rep.worst;
  }
}

TEST(GradCheck, BatchNormTrainAndEval) {
  Rng rng(3);
  Parameter x("x", random_mat(7, 4, rng, -2, 2)), gamma("gamma", random_mat(1, 4, rng, 0.5, 1.5)),
      beta("beta", random_mat(1, 4, rng));
  Mat mean = random_mat(1, 4, rng), var = random_mat(1, 4, rng, 0.5, 2.0);
  const Mat w = random_mat(7, 4, rng);
  for (bool train : {true, false}) {
    const auto rep = grad_check(
        [&](Tape& t) {
          return weighted_sum(t, batchnorm(t.param(x), t.param(gamma), t.param(beta), {&mean, &var, 0.9}, train), w);
        },
        {&x, &gamma, &beta});
    EXPECT_LT(rep.max_rel, kGradTol) << (train ? "train" : "eval") << ": " << rep.worst;
  }
}

TEST(GradCheck, LossOps) {
  Rng rng(4);
  Parameter p("p", random_mat(6, 2, rng, -3, 3)), q("q", random_mat(6, 1, rng, -400, 400));
  const Mat y = random_mat(6, 2, rng, -3, 3);
  Mat yr = random_mat(6, 1, rng, 0, 500);
  const auto rel = grad_check([&](Tape& t) { return mean_all(relative_error_rows(t.param(p), y, 1e-6)); }, {&p});
  EXPECT_LT(rel.max_rel, kGradTol) << rel.worst;
  const auto sym = grad_check([&](Tape& t) { return mean_all(symmetric_error_rows(t.param(q), yr, 1e-6)); }, {&q});
  EXPECT_LT(sym.max_rel, kGradTol) << sym.worst;
}

TEST(GradCheck, DenseAndMlp) {
  Rng rng(5);
  ParamStore store;
  Rng init(6);
  const Mlp mlp(store, "mlp", 4, {6, 5, 3}, {false, false}, init);
  Parameter x("x", random_mat(8, 4, rng));
  const Mat w = random_mat(8, 3, rng);
  auto params = store.params();
  params.push_back(&x);
  const auto rep = grad_check([&](Tape& t) { return weighted_sum(t, mlp(t, t.param(x), true, 0.9), w); }, params);
  EXPECT_LT(rep.max_rel, kGradTol) << rep.worst;
}

TEST(GradCheck, FullModelEveryVariantAndHeads) {
  for (const char* variant : {"full", "npp", "plain_mlp", "np_mlp"}) {
    auto cfg = with_variant(tiny_config(), variant);
    if (cfg.architecture != Architecture::PlainMlp) {
      cfg.head_mass_inertia = true;
      cfg.head_velocities = true;
    }
    Model model(cfg, 11);
    Rng rng(12);
    // Zero-initialised biases put some outputs exactly on the |x| kink of the
    // rotation loss; nudge every parameter off it.
    for (Parameter* p : model.store().params()) p->value += random_mat(p->value.rows(), p->value.cols(), rng, -0.1, 0.1);
    const Batch batch = random_batch(5, 6, rng);
    const Targets y = random_targets(5, rng);
    const auto rep = grad_check(
        [&](Tape& t) { return compute_loss(model.forward(t, batch, true), y).total; }, model.store().params());
    EXPECT_LT(rep.max_rel, kGradTol) << variant << ": " << rep.worst;
    EXPECT_EQ(rep.checked, static_cast<std::size_t>(model.parameter_count()));
  }
}

TEST(ImpulseBranch, Features) {
  Mat imp(2, 4);
  imp << 2, 0, 0, 1,  //
      0, 0, 0, 0;
  const Mat f = impulse_features(imp, true);
  ASSERT_EQ(f.cols(), 8);
  EXPECT_EQ(f(0, 4), 0.0);
  EXPECT_EQ(f(0, 5), 2.0);
  EXPECT_EQ(f(0, 6), 0.0);
  EXPECT_EQ(f(0, 7), 0.0);
  EXPECT_EQ(f.row(1), Mat::Zero(1, 8));
  EXPECT_EQ(impulse_features(imp, false).cols(), 4);
}

TEST(ShapeBranch, PermutationAndDuplicationInvariance) {
  auto cfg = tiny_config();
  cfg.n_points = 16;
  Model model(cfg, 3);
  Rng rng(4);
  Batch b = random_batch(1, 16, rng);
  const Mat base = model.shape_feature(b);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Index> perm(16);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm.begin(), perm.end());
    Batch p = b;
    for (Index r = 0; r < 16; ++r) p.points.row(r) = b.points.row(perm[static_cast<std::size_t>(r)]);
    EXPECT_LT((model.shape_feature(p) - base).cwiseAbs().maxCoeff(), 1e-12);
  }
  // Duplicating points: 8 distinct points each twice vs the same 8 points
  // padded by repeating the first one.
  Batch d = b, e = b;
  for (Index r = 0; r < 8; ++r) {
    d.points.row(8 + r) = b.points.row(r);
    e.points.row(8 + r) = b.points.row(0);
  }
  EXPECT_LT((model.shape_feature(d) - model.shape_feature(e)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Model, NpMlpHasTwo512Layers) {
  ModelConfig cfg = with_variant(ModelConfig{}, "np_mlp");
  cfg.n_points = 32;
  Model m(cfg, 1);
  const auto* w0 = m.store().find("np_mlp.0.weight");
  const auto* w1 = m.store().find("np_mlp.1.weight");
  ASSERT_TRUE(w0 && w1);
  EXPECT_EQ(w0->value.rows(), 96);
  EXPECT_EQ(w0->value.cols(), 512);
  EXPECT_EQ(w1->value.cols(), 512);
  EXPECT_EQ(m.store().find("np_mlp.2.weight"), nullptr);
}

TEST(Model, DefaultParameterCountInRange) {
  Model m(ModelConfig{}, 1);
  EXPECT_GE(m.parameter_count(), 1'000'000);
  EXPECT_LE(m.parameter_count(), 5'000'000);
}

TEST(Model, PlainMlpParameterCountByHand) {
  ModelConfig cfg = with_variant(ModelConfig{}, "plain_mlp");
  cfg.n_points = 1024;
  Model m(cfg, 1);
  // Linear layers carry in*out + out; hidden layers add gamma and beta.
  const std::vector<long> widths{3 * 1024 + 8, 512, 512, 512, 256, 256, 256, 128, 128, 64, 32, 3};
  long expected = 0;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    expected += widths[i] * widths[i + 1] + widths[i + 1];
    if (i + 2 < widths.size()) expected += 2 * widths[i + 1];
  }
  EXPECT_EQ(m.parameter_count(), expected);
}

TEST(Model, EvalBatchOfOneMatchesFullBatch) {
  auto cfg = tiny_config();
  cfg.head_mass_inertia = cfg.head_velocities = true;
  Model m(cfg, 7);
  Rng rng(8);
  // Move running statistics away from their initial values first.
  for (int i = 0; i < 3; ++i) {
    Tape t;
    m.forward(t, random_batch(16, 6, rng), true);
  }
  const Batch big = random_batch(128, 6, rng);
  const auto all = m.predict(big);
  for (Index k : {0, 37, 127}) {
    Batch one;
    one.impulse = big.impulse.row(k);
    one.points = big.points.middleRows(k * 6, 6);
    const auto p = m.predict(one)[0];
    const auto& q = all[static_cast<std::size_t>(k)];
    EXPECT_NEAR(p.final_pos.x(), q.final_pos.x(), 1e-9);
    EXPECT_NEAR(p.final_pos.y(), q.final_pos.y(), 1e-9);
    EXPECT_NEAR(p.total_rotation_deg, q.total_rotation_deg, 1e-9);
    EXPECT_NEAR(*p.mass, *q.mass, 1e-9);
    EXPECT_NEAR(*p.omega0, *q.omega0, 1e-9);
  }
}

TEST(Model, OutputShapes) {
  auto cfg = tiny_config();
  Rng rng(1);
  const Batch b = random_batch(4, 6, rng);
  {
    Model m(cfg, 1);
    Tape t;
    const auto o = m.forward(t, b, true);
    EXPECT_EQ(o.pos.rows(), 4);
    EXPECT_EQ(o.pos.cols(), 2);
    EXPECT_EQ(o.rot.cols(), 1);
    EXPECT_FALSE(o.mass_inertia);
    EXPECT_FALSE(o.velocities);
  }
  cfg.head_mass_inertia = cfg.head_velocities = true;
  Model m(cfg, 1);
  Tape t;
  const auto o = m.forward(t, b, true);
  ASSERT_TRUE(o.mass_inertia && o.velocities);
  EXPECT_EQ(o.mass_inertia->rows(), 4);
  EXPECT_EQ(o.mass_inertia->cols(), 2);
  EXPECT_EQ(o.velocities->cols(), 2);
  Batch bad = b;
  bad.points.conservativeResize(10, 3);
  EXPECT_THROW(m.forward(t, bad, true), UsageError);
}

TEST(Model, ConfigValidation) {
  auto cfg = tiny_config();
  cfg.joint_widths = {4, 4};
  EXPECT_THROW(Model(cfg, 1), UsageError);
  cfg = with_variant(tiny_config(), "plain_mlp");
  cfg.head_mass_inertia = true;
  EXPECT_THROW(Model(cfg, 1), UsageError);
  cfg = tiny_config();
  cfg.head_velocities = true;
  cfg.velocity_tap = 6;
  EXPECT_THROW(Model(cfg, 1), UsageError);
  EXPECT_THROW(with_variant(tiny_config(), "resnet"), UsageError);
}

TEST(Model, AblationsDifferOnlyWhereExpected) {
  const ModelConfig full = tiny_config();
  const ModelConfig npp = with_variant(full, "npp");
  const ModelConfig nic = with_variant(full, "nic");
  auto diff = [](const ModelConfig& a, const ModelConfig& b) {
    std::vector<std::string> keys;
    const auto ja = to_json(a), jb = to_json(b);
    for (const auto& [k, v] : ja.items())
      if (jb.at(k) != v) keys.push_back(k);
    return keys;
  };
  EXPECT_EQ(diff(full, npp), (std::vector<std::string>{"use_pairwise", "variant"}));
  EXPECT_EQ(diff(full, nic), (std::vector<std::string>{"use_impulse_coords", "variant"}));

  Model mf(full, 1), mn(npp, 1), mc(nic, 1);
  const auto pf = mf.store().params(), pn = mn.store().params(), pc = mc.store().params();
  ASSERT_EQ(pf.size(), pn.size());
  for (std::size_t i = 0; i < pf.size(); ++i) {
    EXPECT_EQ(pf[i]->name, pn[i]->name);
    if (pf[i]->name == "impulse.0.weight") {
      EXPECT_EQ(pf[i]->value.rows(), 8);
      EXPECT_EQ(pn[i]->value.rows(), 4);
    } else {
      EXPECT_EQ(pf[i]->value.rows(), pn[i]->value.rows()) << pf[i]->name;
    }
    EXPECT_EQ(pf[i]->value, pc[i]->value);
  }
}

TEST(Loss, HandEvaluatedExamples) {
  EXPECT_EQ(position_loss(Vec2(2, 0), Vec2(2, 0)), 0.0);
  EXPECT_EQ(rotation_loss(75.0, 75.0), 0.0);
  EXPECT_EQ(position_loss(Vec2(1, 0), Vec2(2, 0)), 0.5);
  EXPECT_EQ(rotation_loss(50.0, 100.0), 1.0 / 3.0);
  EXPECT_EQ(rotation_loss(1e-7, 0.0), 0.0);
  EXPECT_EQ(position_loss(Vec2(0.3, 0.4), Vec2(0, 0)), 0.5);
}

TEST(Loss, TapeMatchesScalarFormsAndIsRotationInvariant) {
  Rng rng(9);
  Outputs o;
  Tape t;
  const Mat P = random_mat(10, 2, rng, -3, 3), R = random_mat(10, 1, rng, 0, 800);
  Targets y;
  y.pos = random_mat(10, 2, rng, -3, 3);
  y.rot = random_mat(10, 1, rng, 0, 800);
  o.pos = t.constant(P);
  o.rot = t.constant(R);
  const auto lv = compute_loss(o, y);
  double lp = 0, lr = 0;
  for (Index i = 0; i < 10; ++i) {
    lp += position_loss(Vec2(P(i, 0), P(i, 1)), Vec2(y.pos(i, 0), y.pos(i, 1)));
    lr += rotation_loss(R(i, 0), y.rot(i, 0));
  }
  EXPECT_NEAR(lv.pos, lp / 10, 1e-14);
  EXPECT_NEAR(lv.rot, lr / 10, 1e-14);

  const double a = 1.234;
  Eigen::Matrix2d rot;
  rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  Targets yr = y;
  yr.pos = y.pos * rot.transpose();
  Outputs orot;
  orot.pos = t.constant(P * rot.transpose());
  orot.rot = o.rot;
  EXPECT_NEAR(compute_loss(orot, yr).pos, lv.pos, 1e-12);

  Outputs bad = o;
  Mat nan = P;
  nan(3, 1) = std::nan("");
  bad.pos = t.constant(nan);
  EXPECT_THROW(compute_loss(bad, y), NumericError);
}

TEST(Adam, ScheduleEndpoints) {
  const LrSchedule s{0.005, 1e-5, 1000};
  EXPECT_EQ(s.at(0), 0.005);
  EXPECT_EQ(s.at(1000), 1e-5);
  EXPECT_NEAR(s.at(500), std::sqrt(0.005 * 1e-5), 1e-12);
  EXPECT_GT(s.at(10), s.at(11));
}

TEST(Adam, ZeroGradientIsAFixedPoint) {
  ParamStore store;
  Rng rng(1);
  auto& p = store.add("p", random_mat(3, 3, rng));
  const Mat before = p.value;
  Adam adam;
  for (int i = 0; i < 10; ++i) adam.step(store, 0.005);
  EXPECT_EQ(p.value, before);
}

TEST(Adam, MinimisesAQuadratic) {
  ParamStore store;
  auto& p = store.add("x", Mat::Zero(1, 1));
  Adam adam;
  const LrSchedule sched{0.1, 1e-4, 500};
  for (std::size_t step = 0; step < 500; ++step) {
    store.zero_grad();
    p.grad(0, 0) = 2.0 * (p.value(0, 0) - 1.0);
    adam.step(store, sched.at(step));
  }
  const double f = std::pow(p.value(0, 0) - 1.0, 2);
  EXPECT_LT(f, 1e-6);
}

TEST(Checkpoint, RoundTripIsExact) {
  auto cfg = tiny_config();
  cfg.head_velocities = true;
  Model m(cfg, 5);
  Rng rng(2);
  {
    Tape t;
    m.forward(t, random_batch(4, 6, rng), true);
  }
  CheckpointMeta meta{17, {{"epoch", 3}}};
  const std::string bytes = checkpoint_bytes(m, meta);
  std::istringstream in(bytes);
  CheckpointMeta back;
  auto loaded = load_checkpoint(in, &back);
  EXPECT_EQ(back.adam_step, 17u);
  EXPECT_EQ(back.extra["epoch"], 3);
  EXPECT_EQ(to_json(loaded->config()), to_json(cfg));
  EXPECT_EQ(checkpoint_bytes(*loaded, back), bytes);
  const Batch b = random_batch(3, 6, rng);
  EXPECT_EQ(m.predict(b)[2].final_pos, loaded->predict(b)[2].final_pos);
}

TEST(Checkpoint, RejectsMismatches) {
  Model m(tiny_config(), 5);
  const std::string bytes = checkpoint_bytes(m, {});
  auto other_cfg = tiny_config();
  other_cfg.joint_widths[0] = 9;
  Model other(other_cfg, 5);
  std::istringstream in(bytes);
  try {
    load_into(other, in);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("shape mismatch"), std::string::npos) << e.what();
  }
  std::istringstream bad_magic("NOT-A-CKPT 1\n{}\n");
  EXPECT_THROW(load_checkpoint(bad_magic), DataError);
  std::istringstream bad_version("SLIDENET-CKPT 9\n{}\n");
  EXPECT_THROW(load_checkpoint(bad_version), DataError);
  std::istringstream truncated(bytes.substr(0, bytes.size() - 5));
  EXPECT_THROW(load_checkpoint(truncated), DataError);
}
