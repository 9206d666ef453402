#include <gtest/gtest.h>

#include <sstream>

#include "adrflow/verify.hpp"

using namespace adrflow;

TEST(Verify, CleanBuildPassesEverySuite) {
  const auto checks = verify::run({});
  std::ostringstream os;
  verify::write_text(os, checks);
  EXPECT_TRUE(verify::all_passed(checks)) << os.str();
  std::size_t suites = 0;
  for (const auto& s : verify::suites()) {
    (void)s;
    ++suites;
  }
  EXPECT_EQ(suites, 7u);
}

TEST(Verify, OnlyFilterRunsOneSuite) {
  const auto checks = verify::run({"adjoint"});
  ASSERT_EQ(checks.size(), 1u);
  EXPECT_EQ(checks[0].suite, "adjoint");
  EXPECT_THROW(verify::run({"adjoint", "nope"}), Error);
}

struct FaultCase {
  const char* fault;
  const char* suite;
};

void PrintTo(const FaultCase& c, std::ostream* os) { *os << c.fault; }

class InjectedFault : public ::testing::TestWithParam<FaultCase> {};

TEST_P(InjectedFault, IsCaught) {
  verify::Options o;
  o.fault = verify::parse_fault(GetParam().fault);
  const auto checks = verify::run({GetParam().suite}, o);
  EXPECT_FALSE(verify::all_passed(checks));
}

INSTANTIATE_TEST_SUITE_P(NegativeControls, InjectedFault,
                         ::testing::Values(FaultCase{"adjoint", "adjoint"},
                                           FaultCase{"conservation", "conservation"},
                                           FaultCase{"solver", "solver"},
                                           FaultCase{"gradient", "gradcheck"}),
                         [](const auto& info) { return std::string(info.param.fault); });

TEST(Verify, FaultNamesParse) {
  EXPECT_EQ(verify::parse_fault("none"), verify::Fault::None);
  EXPECT_THROW(verify::parse_fault("everything"), Error);
}

TEST(Verify, CsvHasHeaderAndOneRowPerCheck) {
  const auto checks = verify::run({"stability", "metrics"});
  std::ostringstream os;
  verify::write_csv(os, checks);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "suite,property,passed,measured,tolerance");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, checks.size());
}

TEST(Oracles, DenseSolveInvertsKnownSystem) {
  const std::vector<Real> a{4, 1, 0, 1, 3, 1, 0, 1, 2};
  const std::vector<Real> x{1, -2, 3};
  std::vector<Real> b(3, 0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) b[i] += a[i * 3 + j] * x[j];
  const auto got = verify::dense_solve(a, b);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(got[i], x[i], 1e-14);
  EXPECT_THROW(verify::dense_solve({1, 1, 1, 1}, {1, 2}), NumericError);
}
