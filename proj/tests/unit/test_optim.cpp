#include <vector>

#include "annealkd/errors.hpp"
#include "annealkd/optim.hpp"
#include "doctest.h"

using namespace annealkd;
using autograd::SgdMomentum;

TEST_SUITE("optim") {
  TEST_CASE("first step from zero velocity") {
    SgdMomentum opt({0.1, 0.9, 0.0});
    std::vector<Tensor> p{Tensor::scalar(1)};
    std::vector<Tensor> g{Tensor::scalar(1)};
    opt.step(p, g);
    CHECK(p[0][0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(opt.velocities()[0][0] == doctest::Approx(1.0));
  }

  TEST_CASE("momentum accumulates") {
    SgdMomentum opt({0.1, 0.9, 0.0});
    std::vector<Tensor> p{Tensor::scalar(1)};
    std::vector<Tensor> g{Tensor::scalar(0)};
    opt.step(p, g);
    opt.velocities()[0][0] = Real(0.9);
    // v = 0.9 * 0.9 + 0 = 0.81, p = 1 - 0.1 * 0.81
    opt.step(p, g);
    CHECK(p[0][0] == doctest::Approx(0.919).epsilon(1e-6));
  }

  TEST_CASE("velocity 0.9 moves the parameter to 0.91") {
    SgdMomentum opt({0.1, 0.9, 0.0});
    std::vector<Tensor> p{Tensor::scalar(1)};
    std::vector<Tensor> g{Tensor::scalar(Real(0.9))};
    opt.step(p, g);
    CHECK(opt.velocities()[0][0] == doctest::Approx(0.9));
    CHECK(p[0][0] == doctest::Approx(0.91).epsilon(1e-6));
  }

  TEST_CASE("options are validated") {
    CHECK_THROWS_AS(SgdMomentum({0.0, 0.9, 0.0}), InvalidArgument);
    CHECK_THROWS_AS(SgdMomentum({0.1, 1.0, 0.0}), InvalidArgument);
    CHECK_THROWS_AS(SgdMomentum({0.1, 0.9, -1.0}), InvalidArgument);
  }

  TEST_CASE("weight decay is folded into the gradient") {
    SgdMomentum opt({0.1, 0.9, 1e-4});
    std::vector<Tensor> p{Tensor::scalar(1)};
    std::vector<Tensor> g{Tensor::scalar(0)};
    opt.step(p, g);
    CHECK(p[0][0] == doctest::Approx(0.99999).epsilon(1e-7));
  }

  TEST_CASE("parameter and gradient lists must match") {
    SgdMomentum opt({0.1, 0.9, 0.0});
    std::vector<Tensor> p{Tensor::scalar(1), Tensor::scalar(2)};
    std::vector<Tensor> g{Tensor::scalar(1)};
    CHECK_THROWS(opt.step(p, g));
    std::vector<Tensor> g2{Tensor::scalar(1), Tensor::vector({1, 2})};
    CHECK_THROWS(opt.step(p, g2));
  }

  TEST_CASE("learning rate updates apply to later steps") {
    SgdMomentum opt({0.1, 0.0, 0.0});
    opt.set_learning_rate(0.5);
    std::vector<Tensor> p{Tensor::scalar(1)};
    std::vector<Tensor> g{Tensor::scalar(1)};
    opt.step(p, g);
    CHECK(p[0][0] == doctest::Approx(0.5));
  }
}
