#pragma once

#include "mpol/decompose.hpp"
#include "mpol/types.hpp"

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mpol {

/// Returned by npsnr when the two maps agree exactly.
inline constexpr double kInfiniteDb = std::numeric_limits<double>::infinity();

/// Root-mean-square difference over `mask`. With `angular`, differences are
/// wrapped to [-90, 90) degrees first (axial data, period 180).
double rmse(const ScalarMap<double>& a, const ScalarMap<double>& ref, const PixelMask& mask, bool angular = false);

/// 10 log10(r^2 / MSE) where r is the range of `ref` inside `mask`.
double npsnr(const ScalarMap<double>& a, const ScalarMap<double>& ref, const PixelMask& mask, bool angular = false);

struct SsimOptions {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    /// Dynamic range; when unset, the range of the reference inside the mask.
    std::optional<double> dynamic_range;
};

/// Per-pixel SSIM with a Gaussian window and mirrored borders.
ScalarMap<double> ssim_map(const ScalarMap<double>& a, const ScalarMap<double>& ref, double dynamic_range,
                           const SsimOptions& options = {});
/// Mean of ssim_map over `mask`.
double ssim(const ScalarMap<double>& a, const ScalarMap<double>& ref, const PixelMask& mask,
            const SsimOptions& options = {});

/// Local circular standard deviation (degrees) of an axial angle map (degrees)
/// over a window x window neighbourhood with mirrored borders. Angles are
/// doubled, the resultant length R is measured and csd = sqrt(-2 ln R) / 2,
/// capped at `cap_deg`.
ScalarMap<double> circ_std_map(const ScalarMap<double>& phi_deg, int window = 5, double cap_deg = 90.0);

enum class RankSumMethod { Automatic, Exact, Normal };

/// Two-sided Wilcoxon rank-sum p-value. Automatic uses the exact null
/// distribution when the smaller sample has at most 10 values and there are no
/// ties, and the tie- and continuity-corrected normal approximation otherwise.
double wilcoxon_rank_sum(std::span<const double> x, std::span<const double> y,
                         RankSumMethod method = RankSumMethod::Automatic);

struct Quartiles {
    double q1 = 0, median = 0, q3 = 0;
};

/// Quartiles by linear interpolation at rank p (n + 1).
Quartiles quartiles(std::vector<double> values);
double median(std::vector<double> values);

/// Values of `map` where `mask` is true, in row-major order.
std::vector<double> masked_values(const ScalarMap<double>& map, const PixelMask& mask);

/// One image and whichever derived quantities are available for it.
struct QualityMaps {
    std::optional<ImageStack<double>> intensities;
    std::optional<ImageStack<double>> mueller;
    std::optional<PolarParamMaps<double>> maps;
};

struct QualityPair {
    std::string modality;  ///< e.g. "LQ", "GBLR", "PDDN"
    QualityMaps candidate;
    QualityMaps reference;
};

struct QualityRecord {
    std::string modality;
    std::string quantity;  ///< I, M, D, Delta, R or phi
    double rmse = 0;
    double npsnr_db = 0;
    double ssim_pct = 0;
    Index n_pixels = 0;
};

struct QualitySummary {
    std::string modality;
    std::string quantity;
    Quartiles rmse, npsnr_db, ssim_pct;
    Index instances = 0;
};

struct QualityReport {
    std::vector<QualityRecord> records;
    std::vector<QualitySummary> summaries;

    /// Rebuilds `summaries` from `records`, one per (modality, quantity) in
    /// order of first appearance.
    void summarize();

    std::string to_csv() const;
    std::string to_json() const;
};

/// Scores every available quantity of every pair. Stacked quantities (I, M)
/// pool all channels for RMSE and nPSNR and average per-channel SSIM with a
/// shared dynamic range. R and phi are scored with the angular flag.
QualityReport quality_report(std::span<const QualityPair> pairs, const PixelMask& mask);

}  // namespace mpol
