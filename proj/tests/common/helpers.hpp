#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "dyncop/copula_core.hpp"
#include "dyncop/error.hpp"
#include "oracles.hpp"

namespace testing_util {

// N(0, sd^2) margin sampled on [-span sd, span sd].
inline dyncop::MarginalState normal_margin(double sd, int points = 4001, double span = 8.0, double t = 1.0,
                                           int component = 0) {
    return dyncop::sample_marginal(
        component, dyncop::linspace(-span * sd, span * sd, points), [&](double x) { return oracle::Phi(x / sd); },
        [&](double x) { return oracle::phi(x / sd) / sd; }, t);
}

template <class F>
void expect_error(dyncop::ErrorKind kind, F&& f) {
    try {
        f();
        ADD_FAILURE() << "no error raised";
    } catch (const dyncop::Error& e) {
        EXPECT_EQ(e.kind(), kind) << e.what();
    }
}

// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const auto p = std::filesystem::temp_directory_path() / ("dyncop_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace testing_util
