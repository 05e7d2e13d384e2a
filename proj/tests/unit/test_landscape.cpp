#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "annealkd/dataset.hpp"
#include "annealkd/distill.hpp"
#include "annealkd/errors.hpp"
#include "annealkd/landscape.hpp"
#include "annealkd/model.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace annealkd;
using namespace annealkd::landscape;
using models::Activation;
using models::Model;
using models::ModelSpec;

namespace {

double norm(std::span<const Real> v) {
  double s = 0;
  for (Real x : v) s += double(x) * double(x);
  return std::sqrt(s);
}

Evaluator fit_on(const data::Dataset& d) {
  return [&d](const Model& m) { return distill::regression_fit_loss(m.predict(d.inputs), d.targets); };
}

}  // namespace

TEST_SUITE("landscape") {
  TEST_CASE("grid points") {
    const auto pts = GridSpec{}.points();
    REQUIRE(pts.size() == 21);
    CHECK(pts.front() == -1);
    CHECK(pts[10] == 0);
    CHECK(pts.back() == 1);
    CHECK_THROWS_AS((GridSpec{1, -1, 5}.validate()), InvalidArgument);
    CHECK_THROWS_AS((GridSpec{-1, 1, 1}.validate()), InvalidArgument);
  }

  TEST_CASE("directions are seeded") {
    const Model m(ModelSpec::mlp({3, 5, 2}, Activation::Relu, 1));
    CHECK(random_direction(m, 4).blocks == random_direction(m, 4).blocks);
    CHECK_FALSE(random_direction(m, 4).blocks == random_direction(m, 5).blocks);
  }

  TEST_CASE("filter normalization matches each weight filter norm") {
    const Model mlp(ModelSpec::mlp({3, 5, 2}, Activation::Relu, 1));
    const Direction d = random_direction(mlp, 7);
    const Tensor& w = mlp.parameters()[0];
    const Tensor& dw = d.blocks[0];
    for (std::size_t col = 0; col < w.dim(1); ++col) {
      std::vector<Real> wf, df;
      for (std::size_t row = 0; row < w.dim(0); ++row) {
        wf.push_back(w[row * w.dim(1) + col]);
        df.push_back(dw[row * w.dim(1) + col]);
      }
      CHECK(norm(df) / norm(wf) == doctest::Approx(1.0).epsilon(1e-6));
    }

    const Model cnn(ModelSpec::plain_cnn(2, 4, 3, {3, 8, 8}));
    const Direction dc = random_direction(cnn, 7);
    const Tensor& cw = cnn.parameters()[0];
    const std::size_t per = cw.size() / cw.dim(0);
    for (std::size_t f = 0; f < cw.dim(0); ++f) {
      const auto wf = cw.data().subspan(f * per, per);
      const auto df = dc.blocks[0].data().subspan(f * per, per);
      CHECK(norm(df) / norm(wf) == doctest::Approx(1.0).epsilon(1e-6));
    }
  }

  TEST_CASE("zero filters and rank-one parameters get zero directions") {
    Model m(ModelSpec::mlp({3, 5, 2}, Activation::Relu, 1));
    Tensor& w = m.parameters()[0];
    for (std::size_t row = 0; row < w.dim(0); ++row) w[row * w.dim(1) + 2] = 0;
    const Direction d = random_direction(m, 7);
    for (std::size_t row = 0; row < w.dim(0); ++row) CHECK(d.blocks[0][row * w.dim(1) + 2] == 0);
    for (Real v : d.blocks[1].values()) CHECK(v == 0);
    for (Real v : d.blocks.back().values()) CHECK(v == 0);
  }

  TEST_CASE("slice restores parameters and hits the unperturbed loss at zero") {
    data::SineOptions o;
    o.count = 30;
    const data::Dataset d = data::gen_sine_dataset(o);
    Model m(ModelSpec::mlp({1, 8, 1}, Activation::Sigmoid, 3));
    const std::vector<Tensor> before(m.parameters().begin(), m.parameters().end());
    const Evaluator eval = fit_on(d);
    const double base = eval(m);
    const Surface s = loss_slice(m, eval, random_direction(m, 1), GridSpec{});
    REQUIRE(s.losses.size() == 21);
    CHECK(s.losses[10] == base);
    for (std::size_t i = 0; i < before.size(); ++i) CHECK(m.parameters()[i] == before[i]);
  }

  TEST_CASE("two-dimensional surface") {
    data::SineOptions o;
    o.count = 10;
    const data::Dataset d = data::gen_sine_dataset(o);
    Model m(ModelSpec::mlp({1, 4, 1}, Activation::Sigmoid, 3));
    const Surface s = loss_surface(m, fit_on(d), random_direction(m, 1), random_direction(m, 2), GridSpec{-1, 1, 5});
    CHECK(s.two_dimensional);
    CHECK(s.losses.size() == 25);
    CHECK(s.losses[12] == fit_on(d)(m));
  }

  TEST_CASE("quadratic bowl gives a symmetric slice") {
    // y = 2x fitted exactly by a single linear unit with zero bias.
    data::Dataset d;
    d.task = data::TaskKind::Regression;
    d.inputs = Tensor(Shape{4, 1}, std::vector<Real>{-1, -0.5, 0.5, 1});
    d.targets = Tensor(Shape{4, 1}, std::vector<Real>{-2, -1, 1, 2});
    Model m(ModelSpec::mlp({1, 1}, Activation::Relu, 0));
    m.parameters()[0][0] = 2;
    m.parameters()[1][0] = 0;
    Direction dir;
    dir.normalization = Normalization::None;
    dir.blocks = {Tensor(Shape{1, 1}, Real(1)), Tensor(Shape{1}, Real(0))};
    const Surface s = loss_slice(m, fit_on(d), dir, GridSpec{});
    for (std::size_t i = 0; i < 21; ++i) CHECK(s.losses[i] == doctest::Approx(s.losses[20 - i]).epsilon(1e-6));
    CHECK(s.losses[10] == 0);
    // L(a) = a^2 * mean(x^2) = 0.625 a^2; second difference is 2 * 0.625 * 0.1^2.
    CHECK(sharpness(s.losses) == doctest::Approx(0.0125).epsilon(1e-4));
  }

  TEST_CASE("non-finite evaluations become NaN") {
    Model m(ModelSpec::mlp({1, 2, 1}, Activation::Relu, 0));
    const Evaluator eval = [](const Model& model) {
      return model.parameters()[0][0] > Real(100) ? std::numeric_limits<double>::infinity() : 1.0;
    };
    Direction dir;
    dir.normalization = Normalization::None;
    for (const Tensor& p : m.parameters()) dir.blocks.push_back(Tensor(p.shape(), Real(0)));
    dir.blocks[0][0] = 1000;
    const Surface s = loss_slice(m, eval, dir, GridSpec{-1, 1, 3});
    CHECK(s.losses[0] == 1.0);
    CHECK(s.losses[1] == 1.0);
    CHECK(std::isnan(s.losses[2]));
    CHECK(std::isnan(sharpness(s.losses)));
  }

  TEST_CASE("sharpness") {
    CHECK(sharpness({1, 1, 1, 1}) == 0);
    CHECK(sharpness({0, 1, 0}) == 2);
    CHECK(sharpness({4, 1, 0, 1, 4}) == 2);
  }

  TEST_CASE("rendering carries the header and one row per point") {
    Surface s;
    s.grid = GridSpec{-1, 1, 3};
    s.losses = {0.5, 0.25, 0.5};
    GridHeader h;
    h.seed = 3;
    h.temperature = 10;
    h.phi = 0.1;
    const std::string text = render_surface(s, h);
    CHECK(text.find("# seed=3") != std::string::npos);
    CHECK(text.find("# temperature=10") != std::string::npos);
    CHECK(text.find("# phi=0.1") != std::string::npos);
    CHECK(text.find("alpha,loss") != std::string::npos);
    CHECK(std::count(text.begin(), text.end(), '\n') >= 4);

    fixtures::TempDir dir("landscape");
    write_surface(s, h, dir.path() / "slice.txt");
    CHECK(std::filesystem::file_size(dir.path() / "slice.txt") == text.size());
  }
}
