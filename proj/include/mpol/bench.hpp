#pragma once

#include <functional>
#include <string>
#include <vector>

namespace mpol {

struct BenchResult {
    std::string stage;  ///< denoising, derivation or total
    std::vector<long long> shape;
    int repeats = 0;
    int warmups = 0;
    double mean_ms = 0;
    double sd_ms = 0;  ///< sample standard deviation; 0 for a single repeat
    std::vector<double> samples;

    std::string to_json() const;
};

/// Runs `body` warmups + repeats times and keeps the wall-clock times of the
/// last `repeats` runs.
BenchResult run_bench(std::string stage, std::vector<long long> shape, int repeats, int warmups,
                      const std::function<void()>& body);

/// Mean and sample standard deviation of `samples` into `result`.
void summarize(BenchResult& result);

}  // namespace mpol
