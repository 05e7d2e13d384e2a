#include <cmath>
#include <limits>

#include "annealkd/errors.hpp"
#include "annealkd/tensor.hpp"
#include "doctest.h"

using namespace annealkd;

TEST_SUITE("tensor") {
  TEST_CASE("shape and size agree") {
    Tensor t(Shape{2, 3}, Real(1.5));
    CHECK(t.rank() == 2);
    CHECK(t.size() == 6);
    CHECK(t.dim(1) == 3);
    CHECK(numel(Shape{4, 5, 6}) == 120);
    CHECK(to_string(Shape{2, 3}) == "[2,3]");
  }

  TEST_CASE("invalid shapes are rejected") {
    CHECK_THROWS_AS(Tensor(Shape{}), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
    CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<Real>{1, 2, 3}), ShapeError);
  }

  TEST_CASE("reshape keeps data and checks count") {
    Tensor t(Shape{2, 3}, std::vector<Real>{1, 2, 3, 4, 5, 6});
    Tensor r = t.reshaped({3, 2});
    CHECK(r.shape() == Shape{3, 2});
    CHECK(r.values() == t.values());
    CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
  }

  TEST_CASE("item needs exactly one element") {
    CHECK(Tensor::scalar(3).item() == 3);
    CHECK_THROWS_AS(Tensor::vector({1, 2}).item(), ShapeError);
  }

  TEST_CASE("all_finite") {
    Tensor t = Tensor::vector({1, 2});
    CHECK(t.all_finite());
    t[1] = std::numeric_limits<Real>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
    t[1] = std::numeric_limits<Real>::infinity();
    CHECK_FALSE(t.all_finite());
  }
}
