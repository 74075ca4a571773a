#include <doctest.h>

#include <nlohmann/json.hpp>

#include "trisplat/gradcheck.hpp"

using namespace trisplat;

TEST_CASE("relative error") {
    CHECK(relative_error(1.0, 1.0) == 0.0);
    CHECK(relative_error(2.0, 1.0) == 0.5);
    CHECK(relative_error(0.0, 0.0) == 0.0);
    // tiny absolute errors are judged against the floor
    CHECK(relative_error(1e-9, 2e-9) == doctest::Approx(1e-3));
}

TEST_CASE("component names") {
    for (const char* name : {"raster", "losses", "depthvol", "head", "end-to-end", "all"}) {
        const auto c = parse_grad_component(name);
        REQUIRE(c);
        CHECK(to_string(*c) == name);
    }
    CHECK_FALSE(parse_grad_component("vertices"));
}

TEST_CASE("each component passes") {
    for (GradComponent c : {GradComponent::Raster, GradComponent::Losses, GradComponent::Depthvol, GradComponent::Head,
                            GradComponent::EndToEnd}) {
        CAPTURE(to_string(c));
        GradCheckOptions opts;
        opts.component = c;
        opts.seed = 21;
        opts.probes = 40;
        const GradCheckReport r = grad_check(opts);
        CHECK(r.passed());
        CHECK(r.probes.size() >= 40);
        for (const ProbeResult& p : r.probes) CHECK(p.tolerance <= kPositionTolerance);
    }
}

TEST_CASE("a corrupted adjoint is caught") {
    GradCheckOptions opts;
    opts.component = GradComponent::Raster;
    opts.probes = 60;
    opts.corrupt_adjoint = true;
    const GradCheckReport r = grad_check(opts);
    CHECK_FALSE(r.passed());
    CHECK(r.failures > 0);
    const auto j = to_json(r);
    CHECK(j.at("passed") == false);
    CHECK(!j.at("failed_probes").empty());
}
