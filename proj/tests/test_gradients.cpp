#include <gtest/gtest.h>

#include "gradient_cases.hpp"

using scd::fixtures::GradientCase;

class Gradients : public ::testing::TestWithParam<GradientCase> {};

TEST_P(Gradients, MatchFiniteDifferences) { EXPECT_LT(GetParam().max_error(), 1e-4); }

INSTANTIATE_TEST_SUITE_P(AllOps, Gradients, ::testing::ValuesIn(scd::fixtures::gradient_cases()),
                         [](const ::testing::TestParamInfo<GradientCase>& info) {
                           std::string name = info.param.name;
                           for (char& c : name)
                             if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
                           return name;
                         });
