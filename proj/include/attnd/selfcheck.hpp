#pragma once

#include <string>
#include <vector>

namespace attnd {

struct SelfCheckItem {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct SelfCheckResult {
    std::vector<SelfCheckItem> items;
    bool all_pass() const {
        for (const auto& item : items) {
            if (!item.pass) return false;
        }
        return true;
    }
    const SelfCheckItem* first_failure() const {
        for (const auto& item : items) {
            if (!item.pass) return &item;
        }
        return nullptr;
    }
};

/// Fast invariant suite: gradient checks, closed-form softmax/CE/KL values,
/// attention normalization over random forwards, and the stage-2 freezing
/// contract on a 16-sample micro-dataset. Deterministic.
///
/// inject_fault is a test fixture hook: "kl-sign" flips the sign of the
/// measured KL values so the nonnegativity check must fail.
SelfCheckResult run_selfcheck(const std::string& inject_fault = "");

}  // namespace attnd
