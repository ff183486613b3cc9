#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "pmi/model.hpp"

using namespace pmi;
using nn::Tensor;

namespace {

Tensor<float> random_batch(int n, int c, int side, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({n, c, side, side});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.normal());
  return t;
}

FusionHeadParams hand_params() {
  // hidden 2 over (e_nir, e_rgb) of width 1 each
  FusionHeadParams p;
  p.W1.resize(2, 2);
  p.W1 << 1, 1, 1, -1;
  p.b1 = Eigen::VectorXd::Zero(2);
  p.W2.resize(2);
  p.W2 << 1, 2;
  p.b2 = 0.5;
  return p;
}

Eigen::VectorXd vec1(double v) { return Eigen::VectorXd::Constant(1, v); }

}  // namespace

TEST_SUITE("model") {
  TEST_CASE("fusion head by hand") {
    auto p = hand_params();
    // pre-activations (3, 1): both live, y = 3 + 2 + 0.5
    CHECK(fuse_forward(vec1(2), vec1(1), p) == 5.5);
    // pre-activations (3, -1): second unit is dead, y = 3 + 0.5
    CHECK(fuse_forward(vec1(1), vec1(2), p) == 3.5);
    auto g = fuse_backward(vec1(1), vec1(2), p);
    CHECK(g.W2(1) == 0.0);
    CHECK(g.W2(0) == 3.0);
    CHECK(g.b2 == 1.0);
    CHECK(g.W1(1, 0) == 0.0);
    CHECK(g.e_nir(0) == 1.0);
    CHECK(g.e_rgb(0) == 1.0);

    FusionHeadParams zero;
    zero.W1 = Eigen::MatrixXd::Zero(3, 2);
    zero.b1 = Eigen::VectorXd::Zero(3);
    zero.W2 = Eigen::VectorXd::Zero(3);
    zero.b2 = 0.0;
    CHECK(fuse_forward(vec1(7), vec1(-3), zero) == 0.0);
    zero.b2 = 4.25;
    CHECK(fuse_forward(vec1(7), vec1(-3), zero) == 4.25);
  }

  TEST_CASE("fusion head is affine along a segment inside one activation region") {
    auto p = hand_params();
    // (2,1), (3,1), (4,1): pre-activations stay positive throughout
    const double a = fuse_forward(vec1(2), vec1(1), p);
    const double b = fuse_forward(vec1(3), vec1(1), p);
    const double c = fuse_forward(vec1(4), vec1(1), p);
    CHECK(b == doctest::Approx((a + c) / 2).epsilon(1e-15));
    CHECK(c - b == doctest::Approx(b - a).epsilon(1e-15));
  }

  TEST_CASE("fusion head shape errors") {
    auto p = hand_params();
    CHECK_THROWS_AS(fuse_forward(vec1(1), Eigen::VectorXd::Zero(2), p), Error);
    p.W2.resize(3);
    CHECK_THROWS_AS(p.validate(), Error);
    FusionHeadParams empty;
    CHECK_THROWS_AS(empty.validate(), Error);
  }

  TEST_CASE("fusion gradients match central differences") {
    Rng rng(31);
    const int dn = 3, dr = 2, hidden = 4;
    FusionHeadParams p;
    p.W1 = Eigen::MatrixXd::NullaryExpr(hidden, dn + dr, [&]() { return rng.normal(); });
    p.b1 = Eigen::VectorXd::NullaryExpr(hidden, [&]() { return rng.normal(); });
    p.W2 = Eigen::VectorXd::NullaryExpr(hidden, [&]() { return rng.normal(); });
    p.b2 = rng.normal();
    Eigen::VectorXd en = Eigen::VectorXd::NullaryExpr(dn, [&]() { return rng.normal(); });
    Eigen::VectorXd er = Eigen::VectorXd::NullaryExpr(dr, [&]() { return rng.normal(); });
    Eigen::VectorXd e(dn + dr);
    e << en, er;
    REQUIRE(((p.W1 * e + p.b1).array().abs() > 1e-3).all());

    const double dy = -1.7, h = 1e-6;
    auto g = fuse_backward(en, er, p, dy);
    auto f = [&]() { return dy * fuse_forward(en, er, p); };
    auto numeric = [&](double& slot) {
      const double s = slot;
      slot = s + h;
      const double up = f();
      slot = s - h;
      const double down = f();
      slot = s;
      return (up - down) / (2 * h);
    };
    for (int i = 0; i < hidden; ++i) {
      for (int j = 0; j < dn + dr; ++j) CHECK(g.W1(i, j) == doctest::Approx(numeric(p.W1(i, j))).epsilon(1e-6));
      CHECK(g.b1(i) == doctest::Approx(numeric(p.b1(i))).epsilon(1e-6));
      CHECK(g.W2(i) == doctest::Approx(numeric(p.W2(i))).epsilon(1e-6));
    }
    CHECK(g.b2 == doctest::Approx(numeric(p.b2)).epsilon(1e-6));
    for (int j = 0; j < dn; ++j) CHECK(g.e_nir(j) == doctest::Approx(numeric(en(j))).epsilon(1e-6));
    for (int j = 0; j < dr; ++j) CHECK(g.e_rgb(j) == doctest::Approx(numeric(er(j))).epsilon(1e-6));
  }

  TEST_CASE("toy backbone gradients match directional differences in double") {
    auto bb = nn::build_backbone<double>(BackboneName::toy_cnn, 1);
    Rng init(5);
    bb.features->reset_parameters(init);
    bb.head->reset_parameters(init);
    nn::Sequential<double> net;
    net.add("features", std::move(bb.features));
    net.add("head", std::move(bb.head));
    net.set_training(true);

    Rng rng(6);
    Tensor<double> x({2, 1, 224, 224});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
    auto state = net.state();
    for (auto& p : state.params) p.param->zero_grad();
    const double w0 = 0.8, w1 = -1.3;
    auto y = net.forward(x);
    REQUIRE(y.shape() == nn::Shape{2, 1});
    Tensor<double> w({2, 1});
    w[0] = w0;
    w[1] = w1;
    auto dx = net.backward(w);

    auto loss = [&]() {
      auto out = net.forward(x);
      return w0 * out[0] + w1 * out[1];
    };
    // Random directions over the input and over every parameter at once.
    for (int trial = 0; trial < 3; ++trial) {
      std::vector<Tensor<double>> dirs;
      double analytic = 0;
      Tensor<double> vx(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) analytic += dx[i] * (vx[i] = rng.normal());
      for (auto& p : state.params) {
        Tensor<double> v(p.param->value.shape());
        for (std::size_t i = 0; i < v.size(); ++i) analytic += p.param->grad[i] * (v[i] = rng.normal());
        dirs.push_back(std::move(v));
      }
      auto shift = [&](double s) {
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += s * vx[i];
        for (std::size_t k = 0; k < dirs.size(); ++k)
          for (std::size_t i = 0; i < dirs[k].size(); ++i) state.params[k].param->value[i] += s * dirs[k][i];
      };
      const double h = 1e-6;
      shift(h);
      const double up = loss();
      shift(-2 * h);
      const double down = loss();
      shift(h);
      CHECK((up - down) / (2 * h) == doctest::Approx(analytic).epsilon(1e-4));
    }
  }

  TEST_CASE("narrowband toy model: shapes, equivariance, determinism") {
    auto m = build_narrowband_model({BackboneName::toy_cnn, Band::nir}, 3);
    m->set_training(false);
    auto x = random_batch(2, 1, 224, 7);
    auto y = m->forward(x);
    CHECK(y.shape() == nn::Shape{2, 1});
    auto again = m->forward(x);
    CHECK(again[0] == y[0]);
    CHECK(again[1] == y[1]);

    Tensor<float> swapped(x.shape());
    const std::size_t half = x.size() / 2;
    for (std::size_t i = 0; i < half; ++i) {
      swapped[i] = x[half + i];
      swapped[half + i] = x[i];
    }
    auto ys = m->forward(swapped);
    CHECK(ys[0] == doctest::Approx(y[1]).epsilon(1e-5));
    CHECK(ys[1] == doctest::Approx(y[0]).epsilon(1e-5));

    auto e = extract_embedding(*m, x);
    CHECK(e.shape() == nn::Shape{2, 64});
    CHECK_THROWS_AS(m->forward(random_batch(1, 3, 224, 1)), Error);
    CHECK_THROWS_AS(m->forward(random_batch(1, 1, 200, 1)), Error);
  }

  TEST_CASE("all-zero weights give a zero embedding") {
    auto m = build_narrowband_model({BackboneName::toy_cnn, Band::rgb}, 3);
    for (auto* p : m->parameters()) p->value.fill(0.0f);
    auto e = extract_embedding(*m, random_batch(2, 3, 224, 8));
    for (std::size_t i = 0; i < e.size(); ++i) CHECK(e[i] == 0.0f);
  }

  TEST_CASE("seeded initialization") {
    auto a = build_narrowband_model({BackboneName::toy_cnn, Band::nir}, 11);
    auto b = build_narrowband_model({BackboneName::toy_cnn, Band::nir}, 11);
    auto c = build_narrowband_model({BackboneName::toy_cnn, Band::nir}, 12);
    auto pa = a->parameters(), pb = b->parameters(), pc = c->parameters();
    REQUIRE(pa.size() == pc.size());
    CHECK(pa[0]->value == pb[0]->value);
    CHECK_FALSE(pa[0]->value == pc[0]->value);
  }

  TEST_CASE("multispectral toy model") {
    MultispectralModel m(BackboneName::toy_cnn, 4, 8);
    CHECK(m.hidden_dim() == 8);
    auto p = m.fusion_params();
    CHECK(p.input_dim() == 128);
    CHECK(p.hidden_dim() == 8);
    m.set_training(false);
    std::vector<Tensor<float>> in{random_batch(2, 1, 224, 1), random_batch(2, 3, 224, 2)};
    auto y = m.forward(in);
    REQUIRE(y.shape() == nn::Shape{2, 1});
    // The float head agrees with the double reference on the same embeddings.
    auto en = extract_embedding(m.nir(), in[0]);
    auto er = extract_embedding(m.rgb(), in[1]);
    for (int n = 0; n < 2; ++n) {
      Eigen::VectorXd a(64), b(64);
      for (int j = 0; j < 64; ++j) a(j) = en[n * 64 + j], b(j) = er[n * 64 + j];
      CHECK(y[n] == doctest::Approx(fuse_forward(a, b, p)).epsilon(1e-4));
    }
    p.b2 += 1.0;
    m.set_fusion_params(p);
    CHECK(m.fusion_params().b2 == doctest::Approx(p.b2));
    std::vector<Tensor<float>> uneven{random_batch(2, 1, 224, 1), random_batch(1, 3, 224, 2)};
    CHECK_THROWS_AS(m.forward(uneven), Error);
    CHECK_THROWS_AS(MultispectralModel(BackboneName::toy_cnn, 1, 0), Error);
  }

  TEST_CASE("input batches are normalized per backbone") {
    Raster gray(224, 224, 1, 255);
    const Raster* ptr = &gray;
    auto t = make_input_batch(std::span<const Raster* const>(&ptr, 1), Band::nir, BackboneName::toy_cnn);
    const auto& info = nn::backbone_info(BackboneName::toy_cnn);
    CHECK(t.shape() == nn::Shape{1, 1, 224, 224});
    CHECK(t[0] == doctest::Approx((1.0 - info.input_mean) / info.input_std));
    Raster small(100, 100, 1, 0);
    ptr = &small;
    CHECK_THROWS_AS(make_input_batch(std::span<const Raster* const>(&ptr, 1), Band::nir, BackboneName::toy_cnn), Error);
    double mean[3], sd[3];
    nn::rgb_normalization(BackboneName::inception_v3, mean, sd);
    CHECK(mean[0] == 0.5);
    CHECK(sd[2] == 0.5);
  }

  TEST_CASE("ds_resnet152 needs usable weights") {
    BackboneSpec spec{BackboneName::ds_resnet152, Band::nir};
    CHECK_THROWS_WITH_AS(spec.validate(), doctest::Contains("weights"), Error);
    auto dir = testing::temp_dir("bad_weights");
    std::ofstream(dir / "w.bin") << "not a tensor file";
    spec.pretrained_weights = dir / "w.bin";
    CHECK_THROWS_AS(build_narrowband_model(spec, 1), Error);
    spec.pretrained_weights = dir / "missing.bin";
    CHECK_THROWS_AS(build_narrowband_model(spec, 1), Error);
  }

  TEST_CASE("checkpoint round trip and mismatch refusal") {
    auto dir = testing::temp_dir("checkpoint");
    auto a = build_narrowband_model({BackboneName::toy_cnn, Band::nir}, 1);
    a->scaler = {120.0, 55.5};
    save_checkpoint(*a, dir / "a.ckpt", R"({"epochs":3})");
    auto info = read_checkpoint_info(dir / "a.ckpt");
    CHECK(info.kind == "narrowband");
    CHECK(info.backbone == BackboneName::toy_cnn);
    CHECK(info.scaler == a->scaler);
    CHECK(info.architecture == a->architecture());

    auto b = build_narrowband_model({BackboneName::toy_cnn, Band::nir}, 2);
    load_checkpoint(*b, dir / "a.ckpt");
    CHECK(b->scaler == a->scaler);
    a->set_training(false);
    b->set_training(false);
    auto x = random_batch(1, 1, 224, 3);
    CHECK(a->forward(x)[0] == b->forward(x)[0]);

    auto restored = load_model(dir / "a.ckpt");
    restored->set_training(false);
    std::vector<Tensor<float>> in{x};
    CHECK(restored->forward(in)[0] == a->forward(x)[0]);

    auto rgb = build_narrowband_model({BackboneName::toy_cnn, Band::rgb}, 2);
    CHECK_THROWS_AS(load_checkpoint(*rgb, dir / "a.ckpt"), Error);
    MultispectralModel ms(BackboneName::toy_cnn, 1, 4);
    CHECK_THROWS_AS(load_checkpoint(ms, dir / "a.ckpt"), Error);

    save_checkpoint(ms, dir / "ms.ckpt");
    MultispectralModel wider(BackboneName::toy_cnn, 1, 5);
    CHECK_THROWS_AS(load_checkpoint(wider, dir / "ms.ckpt"), Error);
    auto back = load_model(dir / "ms.ckpt");
    CHECK(back->kind() == "multispectral");
    CHECK_THROWS_AS(load_checkpoint(*b, dir / "nothing.ckpt"), Error);
  }

  TEST_CASE("tensor files round trip") {
    auto dir = testing::temp_dir("tensor_file");
    TensorFile f;
    f.header_json = R"({"k":1})";
    Tensor<float> t({2, 3});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.25f * i;
    f.tensors.push_back({"a.weight", t});
    write_tensor_file(dir / "t.bin", f);
    auto g = read_tensor_file(dir / "t.bin");
    CHECK(g.header_json == f.header_json);
    REQUIRE(g.tensors.size() == 1);
    CHECK(g.tensors[0].first == "a.weight");
    CHECK(g.tensors[0].second == t);
  }
}

TEST_SUITE("backbones") {
  TEST_CASE("every backbone maps a batch to (N, 1)") {
    for (auto name : nn::all_backbones()) {
      if (name == BackboneName::ds_resnet152) continue;
      const auto& info = nn::backbone_info(name);
      INFO(info.id);
      auto m = build_narrowband_model({name, Band::nir}, 1);
      m->set_training(false);
      auto y = m->forward(random_batch(1, 1, info.input_side, 2));
      CHECK(y.shape() == nn::Shape{1, 1});
      CHECK(std::isfinite(y[0]));
      CHECK(extract_embedding(*m, random_batch(1, 1, info.input_side, 2)).dim(1) == info.embedding_dim);
    }
  }

  TEST_CASE("inception_v3 takes 299 and refuses 224") {
    auto m = build_narrowband_model({BackboneName::inception_v3, Band::rgb}, 1);
    m->set_training(false);
    CHECK_THROWS_WITH_AS(m->forward(random_batch(1, 3, 224, 1)), doctest::Contains("299"), Error);
    CHECK(m->forward(random_batch(1, 3, 299, 1)).shape() == nn::Shape{1, 1});
  }

  TEST_CASE("pretrained weights load by name and adapt the first convolution") {
    auto dir = testing::temp_dir("pretrained");
    auto src = build_narrowband_model({BackboneName::toy_cnn, Band::rgb}, 9);
    TensorFile f;
    f.header_json = "{}";
    auto st = src->state();
    for (auto& p : st.params) f.tensors.push_back({p.name, p.param->value});
    write_tensor_file(dir / "w.bin", f);

    auto nir = build_narrowband_model({BackboneName::toy_cnn, Band::nir}, 1);
    load_pretrained_weights(*nir, dir / "w.bin");
    const auto first = std::string(nn::backbone_info(BackboneName::toy_cnn).first_conv);
    const Tensor<float>* rgbw = nullptr;
    const Tensor<float>* nirw = nullptr;
    for (auto& p : st.params)
      if (p.name == first) rgbw = &p.param->value;
    auto nst = nir->state();
    for (auto& p : nst.params)
      if (p.name == first) nirw = &p.param->value;
    REQUIRE(rgbw);
    REQUIRE(nirw);
    // (16, 3, 4, 4) averaged over channels into (16, 1, 4, 4)
    CHECK(nirw->dim(1) == 1);
    CHECK((*nirw)[0] == doctest::Approx(((*rgbw)[0] + (*rgbw)[16] + (*rgbw)[32]) / 3.0));

    f.tensors.pop_back();
    f.tensors.erase(f.tensors.begin() + 1);
    write_tensor_file(dir / "partial.bin", f);
    CHECK_THROWS_AS(load_pretrained_weights(*nir, dir / "partial.bin"), Error);
  }
}
