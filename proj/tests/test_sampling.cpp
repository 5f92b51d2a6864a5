#include "fluxcal/errors.hpp"
#include "fluxcal/sampling.hpp"

#include <doctest.h>

#include <cmath>

using namespace fluxcal;

TEST_SUITE_BEGIN("sampling");

TEST_CASE("canon17 focal lengths reproduce the published list exactly") {
    auto lfl = sample_lfl(17.0, 120.0);
    std::vector<double> want{17, 18, 20, 24, 32, 48, 80, 120};
    REQUIRE(lfl.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) CHECK(lfl[i] == want[i]);
}

TEST_CASE("premista80 focal lengths reproduce the published list exactly") {
    auto lfl = sample_lfl(80.0, 250.0);
    std::vector<double> want{80, 81, 83, 87, 95, 111, 143, 207, 250};
    REQUIRE(lfl.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) CHECK(lfl[i] == want[i]);
}

TEST_CASE("premista80 focus distances match the published values to 2 decimals") {
    auto fd = sample_fd(1.5, 2.5);
    std::vector<double> want{1.5, 2.5, 2.81, 3.21, 3.75, 4.5, 5.62, 7.5, 11.25, 22.5};
    REQUIRE(fd.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i)
        CHECK(std::abs(fd[i] - want[i]) <= 0.005 + 1e-9);
}

TEST_CASE("focus distances follow the harmonic diopter formula") {
    auto fd = sample_fd(0.853, 1.5);
    REQUIRE(fd.size() == 10);
    CHECK(fd[0] == 0.853);
    // 1/FD_i = (10 - i) / (9 * 1.5) for i = 1..9.
    for (int i = 1; i <= 9; ++i)
        CHECK(fd[i] == doctest::Approx(9.0 * 1.5 / (10.0 - i)).epsilon(1e-12));
    CHECK(fd[1] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(fd[9] == doctest::Approx(13.5).epsilon(1e-12));
}

TEST_CASE("sample lists are sorted and deduplicated") {
    auto one = sample_lfl(50.0, 50.0);
    REQUIRE(one.size() == 1);
    CHECK(one[0] == 50.0);

    // The doubling step lands exactly on the maximum: no duplicate.
    auto exact = sample_lfl(16.0, 24.0);
    std::vector<double> want{16, 17, 19, 23, 24};
    REQUIRE(exact.size() == want.size());
    for (size_t i = 0; i < want.size(); ++i) CHECK(exact[i] == want[i]);

    auto fd_eq = sample_fd(2.5, 2.5);
    REQUIRE(fd_eq.size() == 9); // min coincides with the i=1 harmonic point
    CHECK(fd_eq[0] == 2.5);
    for (size_t i = 1; i < fd_eq.size(); ++i) CHECK(fd_eq[i] > fd_eq[i - 1]);
}

TEST_CASE("grids pair every focal length with every focus distance, FD fastest") {
    auto canon = build_grid(canon17_lens());
    CHECK(canon.lfl_mm.size() == 8);
    CHECK(canon.fd_m.size() == 10);
    REQUIRE(canon.states.size() == 80);
    CHECK(canon.states[0].lfl_mm == 17.0);
    CHECK(canon.states[0].fd_m == 0.853);
    CHECK(canon.states[1].lfl_mm == 17.0);
    CHECK(canon.states[1].fd_m == 1.5);
    CHECK(canon.states[10].lfl_mm == 18.0);

    auto premista = build_grid(premista80_lens());
    CHECK(premista.lfl_mm.size() == 9);
    CHECK(premista.fd_m.size() == 10);
    CHECK(premista.states.size() == 90);
}

TEST_CASE("lens JSON round-trips and validates") {
    LensSpec l = canon17_lens();
    LensSpec l2 = lens_from_json(lens_to_json(l));
    CHECK(l2.name == "canon17");
    CHECK(l2.lfl_min_mm == 17.0);
    CHECK(l2.lfl_max_mm == 120.0);
    CHECK(l2.fd_min_m == 0.853);
    CHECK(l2.fd_lower_m == 1.5);
    CHECK_THROWS_AS(lens_from_json("{\"name\":\"x\"}"), ValidationError);
    CHECK_THROWS_AS(
        lens_from_json("{\"name\":\"x\",\"lfl_min_mm\":50,\"lfl_max_mm\":20,"
                       "\"fd_min_m\":1,\"fd_lower_m\":2}"),
        ValidationError);
    CHECK_THROWS_AS(sample_lfl(0.0, 10.0), ValidationError);
    CHECK_THROWS_AS(sample_fd(2.0, 1.0), ValidationError);
}

TEST_SUITE_END();
