#include "mpol/bench.hpp"

#include "mpol/error.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>

namespace mpol {

void summarize(BenchResult& result) {
    const auto n = static_cast<double>(result.samples.size());
    if (n == 0) throw UndefinedResultError("benchmark has no samples");
    double sum = 0;
    for (double s : result.samples) sum += s;
    result.mean_ms = sum / n;
    double sq = 0;
    for (double s : result.samples) sq += (s - result.mean_ms) * (s - result.mean_ms);
    result.sd_ms = n > 1 ? std::sqrt(sq / (n - 1)) : 0.0;
}

BenchResult run_bench(std::string stage, std::vector<long long> shape, int repeats, int warmups,
                      const std::function<void()>& body) {
    if (repeats < 1 || warmups < 0) throw ParameterError("benchmark needs repeats >= 1 and warmups >= 0");
    BenchResult result{std::move(stage), std::move(shape), repeats, warmups, 0, 0, {}};
    for (int i = 0; i < warmups; ++i) body();
    using Clock = std::chrono::steady_clock;
    for (int i = 0; i < repeats; ++i) {
        const auto start = Clock::now();
        body();
        result.samples.push_back(std::chrono::duration<double, std::milli>(Clock::now() - start).count());
    }
    summarize(result);
    return result;
}

std::string BenchResult::to_json() const {
    return nlohmann::json{{"stage", stage},     {"shape", shape},     {"repeats", repeats}, {"warmups", warmups},
                          {"mean_ms", mean_ms}, {"sd_ms", sd_ms},     {"samples", samples}}
        .dump(2);
}

}  // namespace mpol
