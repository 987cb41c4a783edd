// Negative control: this binary is compiled with SSDLM_FAULT_INJECT_STEP,
// which perturbs the recurrent step. The verification suites must notice.

#include <gtest/gtest.h>

#include <cstdlib>
#include <string>

#include "ssdlm/check.hpp"

#ifndef SSDLM_FAULT_INJECT_STEP
#error "this test must be compiled with -DSSDLM_FAULT_INJECT_STEP"
#endif

TEST(FaultInjection, DualFormSuiteFails) {
    const ssdlm::SuiteResult r = ssdlm::check_dual_form(2024, 5);
    EXPECT_FALSE(r.pass) << "broken step() went undetected: " << r.detail;
    EXPECT_GT(r.max_err, 1e-10);
}

#ifdef SSDLM_FAULTY_CLI_PATH
TEST(FaultInjection, CheckCommandExitsThree) {
    const std::string cmd = std::string(SSDLM_FAULTY_CLI_PATH) + " check --seed 3 > /dev/null";
    const int status = std::system(cmd.c_str());
    ASSERT_TRUE(WIFEXITED(status));
    EXPECT_EQ(WEXITSTATUS(status), 3);
}
#endif
