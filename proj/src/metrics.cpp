#include "mpol/metrics.hpp"

#include "mpol/border.hpp"
#include "mpol/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numbers>
#include <sstream>

namespace mpol {
namespace {

constexpr double kDegree = std::numbers::pi / 180.0;

void require_same_shape(const ScalarMap<double>& a, const ScalarMap<double>& ref, const PixelMask& mask) {
    if (a.rows() != ref.rows() || a.cols() != ref.cols() || mask.rows() != ref.rows() || mask.cols() != ref.cols()) {
        throw FormatError("metric inputs differ in shape");
    }
}

double wrapped_difference(double a, double b) {
    double d = std::fmod(a - b, 180.0);
    if (d >= 90.0) d -= 180.0;
    if (d < -90.0) d += 180.0;
    return d;
}

struct Moments {
    double sum_sq = 0;
    Index n = 0;
};

Moments squared_error(const ScalarMap<double>& a, const ScalarMap<double>& ref, const PixelMask& mask, bool angular) {
    require_same_shape(a, ref, mask);
    Moments m;
    for (Index i = 0; i < a.size(); ++i) {
        if (!mask.data()[i]) continue;
        const double d = angular ? wrapped_difference(a.data()[i], ref.data()[i]) : a.data()[i] - ref.data()[i];
        m.sum_sq += d * d;
        ++m.n;
    }
    if (m.n == 0) throw UndefinedResultError("metric mask selects no pixels");
    return m;
}

double masked_range(const ScalarMap<double>& ref, const PixelMask& mask) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (Index i = 0; i < ref.size(); ++i)
        if (mask.data()[i]) {
            lo = std::min(lo, ref.data()[i]);
            hi = std::max(hi, ref.data()[i]);
        }
    if (!(hi > lo)) throw UndefinedResultError("reference map has zero range inside the mask");
    return hi - lo;
}

// Separable filtering with a symmetric 1D kernel and mirrored borders.
ScalarMap<double> filter_separable(const ScalarMap<double>& in, const std::vector<double>& kernel) {
    const Index h = in.rows(), w = in.cols(), r = static_cast<Index>(kernel.size() / 2);
    ScalarMap<double> tmp(h, w), out(h, w);
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
            double s = 0;
            for (Index k = -r; k <= r; ++k) s += kernel[static_cast<std::size_t>(k + r)] * in(y, mirror_index(x + k, w));
            tmp(y, x) = s;
        }
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
            double s = 0;
            for (Index k = -r; k <= r; ++k) s += kernel[static_cast<std::size_t>(k + r)] * tmp(mirror_index(y + k, h), x);
            out(y, x) = s;
        }
    return out;
}

std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> k(static_cast<std::size_t>(size));
    const int r = size / 2;
    double sum = 0;
    for (int i = -r; i <= r; ++i) sum += k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= sum;
    return k;
}

double quantile_type6(const std::vector<double>& sorted, double p) {
    const double n = static_cast<double>(sorted.size());
    const double pos = std::clamp(p * (n + 1.0), 1.0, n);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - std::floor(pos);
    if (lo >= sorted.size() || frac == 0.0 || sorted[lo] == sorted[lo - 1]) return sorted[lo - 1];
    return sorted[lo - 1] + frac * (sorted[lo] - sorted[lo - 1]);
}

}  // namespace

double rmse(const ScalarMap<double>& a, const ScalarMap<double>& ref, const PixelMask& mask, bool angular) {
    const Moments m = squared_error(a, ref, mask, angular);
    return std::sqrt(m.sum_sq / static_cast<double>(m.n));
}

double npsnr(const ScalarMap<double>& a, const ScalarMap<double>& ref, const PixelMask& mask, bool angular) {
    const Moments m = squared_error(a, ref, mask, angular);
    const double range = masked_range(ref, mask);
    const double mse = m.sum_sq / static_cast<double>(m.n);
    if (mse == 0.0) return kInfiniteDb;
    return 10.0 * std::log10(range * range / mse);
}

ScalarMap<double> ssim_map(const ScalarMap<double>& a, const ScalarMap<double>& ref, double dynamic_range,
                           const SsimOptions& options) {
    if (a.rows() != ref.rows() || a.cols() != ref.cols()) throw FormatError("metric inputs differ in shape");
    if (options.window < 1 || options.window % 2 == 0) throw ParameterError("SSIM window must be odd");
    if (!(options.sigma > 0.0)) throw ParameterError("SSIM sigma must be positive");
    if (!(dynamic_range > 0.0)) throw UndefinedResultError("SSIM needs a positive dynamic range");
    const auto kernel = gaussian_window(options.window, options.sigma);
    const ScalarMap<double> mu_a = filter_separable(a, kernel);
    const ScalarMap<double> mu_r = filter_separable(ref, kernel);
    const ScalarMap<double> aa = filter_separable(a * a, kernel) - mu_a * mu_a;
    const ScalarMap<double> rr = filter_separable(ref * ref, kernel) - mu_r * mu_r;
    const ScalarMap<double> ar = filter_separable(a * ref, kernel) - mu_a * mu_r;
    const double c1 = std::pow(options.k1 * dynamic_range, 2), c2 = std::pow(options.k2 * dynamic_range, 2);
    return ((2 * mu_a * mu_r + c1) * (2 * ar + c2)) / ((mu_a * mu_a + mu_r * mu_r + c1) * (aa + rr + c2));
}

double ssim(const ScalarMap<double>& a, const ScalarMap<double>& ref, const PixelMask& mask,
            const SsimOptions& options) {
    require_same_shape(a, ref, mask);
    if (mask.count() == 0) throw UndefinedResultError("metric mask selects no pixels");
    const double range = options.dynamic_range ? *options.dynamic_range : masked_range(ref, mask);
    const ScalarMap<double> local = ssim_map(a, ref, range, options);
    double sum = 0;
    for (Index i = 0; i < local.size(); ++i)
        if (mask.data()[i]) sum += local.data()[i];
    return sum / static_cast<double>(mask.count());
}

ScalarMap<double> circ_std_map(const ScalarMap<double>& phi_deg, int window, double cap_deg) {
    if (window < 1 || window % 2 == 0) throw ParameterError("circular std window must be odd");
    if (!(cap_deg >= 0.0)) throw ParameterError("circular std cap must be non-negative");
    const Index h = phi_deg.rows(), w = phi_deg.cols(), r = window / 2;
    const double n = static_cast<double>(window) * window;
    ScalarMap<double> out(h, w);
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
            // Angles relative to the centre pixel keep a uniform window exact.
            const double centre = phi_deg(y, x);
            double c = 0, s = 0;
            for (Index dy = -r; dy <= r; ++dy)
                for (Index dx = -r; dx <= r; ++dx) {
                    const double psi = 2.0 * (phi_deg(mirror_index(y + dy, h), mirror_index(x + dx, w)) - centre) * kDegree;
                    c += std::cos(psi);
                    s += std::sin(psi);
                }
            c /= n;
            s /= n;
            const double r2 = c * c + s * s;
            double csd;
            if (r2 < 1e-24) {
                csd = cap_deg;
            } else {
                const double log_r = 0.5 * std::log(std::min(r2, 1.0));
                csd = std::min(cap_deg, 0.5 * std::sqrt(-2.0 * log_r) / kDegree);
            }
            out(y, x) = csd;
        }
    return out;
}

double wilcoxon_rank_sum(std::span<const double> x, std::span<const double> y, RankSumMethod method) {
    if (x.empty() || y.empty()) throw ParameterError("rank-sum test needs two non-empty samples");
    struct Item {
        double value;
        bool from_x;
    };
    std::vector<Item> all;
    for (double v : x) all.push_back({v, true});
    for (double v : y) all.push_back({v, false});
    std::stable_sort(all.begin(), all.end(), [](const Item& a, const Item& b) { return a.value < b.value; });

    const std::size_t total = all.size();
    std::vector<double> ranks(total);
    double tie_term = 0;
    bool ties = false;
    for (std::size_t i = 0; i < total;) {
        std::size_t j = i;
        while (j + 1 < total && all[j + 1].value == all[i].value) ++j;
        const double t = static_cast<double>(j - i + 1);
        if (t > 1) {
            ties = true;
            tie_term += t * t * t - t;
        }
        for (std::size_t k = i; k <= j; ++k) ranks[k] = 0.5 * static_cast<double>(i + j) + 1.0;
        i = j + 1;
    }

    // Rank sum of the smaller sample.
    const bool x_small = x.size() <= y.size();
    const std::size_t m = x_small ? x.size() : y.size();
    const std::size_t nn = total - m;
    double rank_sum = 0;
    for (std::size_t i = 0; i < total; ++i)
        if (all[i].from_x == x_small) rank_sum += ranks[i];

    const bool exact = method == RankSumMethod::Exact || (method == RankSumMethod::Automatic && m <= 10 && !ties);
    if (exact) {
        if (ties) throw ParameterError("exact rank-sum distribution requires untied samples");
        // counts[k][s]: number of k-subsets of ranks 1..N summing to s.
        const std::size_t max_sum = m * total;
        std::vector<std::vector<double>> counts(m + 1, std::vector<double>(max_sum + 1, 0.0));
        counts[0][0] = 1.0;
        for (std::size_t rank = 1; rank <= total; ++rank)
            for (std::size_t k = std::min(rank, m); k >= 1; --k)
                for (std::size_t s = max_sum; s >= rank; --s) counts[k][s] += counts[k - 1][s - rank];
        const auto observed = static_cast<std::size_t>(std::llround(rank_sum));
        double below = 0, above = 0, all_count = 0;
        for (std::size_t s = 0; s <= max_sum; ++s) {
            all_count += counts[m][s];
            if (s <= observed) below += counts[m][s];
            if (s >= observed) above += counts[m][s];
        }
        return std::min(1.0, 2.0 * std::min(below, above) / all_count);
    }

    const double md = static_cast<double>(m), nd = static_cast<double>(nn), nt = static_cast<double>(total);
    const double u = rank_sum - md * (md + 1) / 2;
    const double mean = md * nd / 2;
    const double var = md * nd / 12.0 * ((nt + 1) - tie_term / (nt * (nt - 1)));
    if (!(var > 0.0)) return 1.0;
    const double z = std::max(0.0, std::abs(u - mean) - 0.5) / std::sqrt(var);
    return std::min(1.0, std::erfc(z / std::numbers::sqrt2));
}

Quartiles quartiles(std::vector<double> values) {
    if (values.empty()) throw UndefinedResultError("quartiles of an empty sample");
    std::sort(values.begin(), values.end());
    return {quantile_type6(values, 0.25), quantile_type6(values, 0.5), quantile_type6(values, 0.75)};
}

double median(std::vector<double> values) { return quartiles(std::move(values)).median; }

std::vector<double> masked_values(const ScalarMap<double>& map, const PixelMask& mask) {
    if (map.rows() != mask.rows() || map.cols() != mask.cols()) throw FormatError("mask extent differs from map");
    std::vector<double> out;
    for (Index i = 0; i < map.size(); ++i)
        if (mask.data()[i]) out.push_back(map.data()[i]);
    return out;
}

namespace {

QualityRecord score_map(const ScalarMap<double>& a, const ScalarMap<double>& ref, const PixelMask& mask, bool angular) {
    QualityRecord rec;
    rec.rmse = rmse(a, ref, mask, angular);
    rec.npsnr_db = npsnr(a, ref, mask, angular);
    rec.ssim_pct = 100.0 * ssim(a, ref, mask);
    rec.n_pixels = mask.count();
    return rec;
}

QualityRecord score_stack(const ImageStack<double>& a, const ImageStack<double>& ref, const PixelMask& mask) {
    if (!a.same_extent(ref) || a.channels() != ref.channels()) throw FormatError("stacked quantities differ in shape");
    if (mask.rows() != ref.height() || mask.cols() != ref.width()) throw FormatError("mask extent differs from stack");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, sum_sq = 0;
    for (Index c = 0; c < ref.channels(); ++c)
        for (Index p = 0; p < ref.pixels(); ++p) {
            if (!mask.data()[p]) continue;
            const double v = ref.planes()(c, p);
            lo = std::min(lo, v);
            hi = std::max(hi, v);
            const double d = a.planes()(c, p) - v;
            sum_sq += d * d;
        }
    const Index n = mask.count() * ref.channels();
    if (n == 0) throw UndefinedResultError("metric mask selects no pixels");
    if (!(hi > lo)) throw UndefinedResultError("reference stack has zero range inside the mask");
    QualityRecord rec;
    const double mse = sum_sq / static_cast<double>(n);
    rec.rmse = std::sqrt(mse);
    rec.npsnr_db = mse == 0.0 ? kInfiniteDb : 10.0 * std::log10((hi - lo) * (hi - lo) / mse);
    SsimOptions options;
    options.dynamic_range = hi - lo;
    double ssim_sum = 0;
    for (Index c = 0; c < ref.channels(); ++c) ssim_sum += ssim(a.plane(c), ref.plane(c), mask, options);
    rec.ssim_pct = 100.0 * ssim_sum / static_cast<double>(ref.channels());
    rec.n_pixels = mask.count();
    return rec;
}

nlohmann::json number(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}

nlohmann::json quartile_json(const Quartiles& q) {
    return {{"q1", number(q.q1)}, {"median", number(q.median)}, {"q3", number(q.q3)}};
}

}  // namespace

QualityReport quality_report(std::span<const QualityPair> pairs, const PixelMask& mask) {
    QualityReport report;
    for (const QualityPair& pair : pairs) {
        auto add = [&](QualityRecord rec, const char* quantity) {
            rec.modality = pair.modality;
            rec.quantity = quantity;
            report.records.push_back(std::move(rec));
        };
        const QualityMaps& c = pair.candidate;
        const QualityMaps& r = pair.reference;
        if (c.intensities && r.intensities) add(score_stack(*c.intensities, *r.intensities, mask), "I");
        if (c.mueller && r.mueller) add(score_stack(*c.mueller, *r.mueller, mask), "M");
        if (c.maps && r.maps) {
            add(score_map(c.maps->diattenuation, r.maps->diattenuation, mask, false), "D");
            add(score_map(c.maps->depolarization, r.maps->depolarization, mask, false), "Delta");
            add(score_map(c.maps->retardance, r.maps->retardance, mask, true), "R");
            add(score_map(c.maps->azimuth, r.maps->azimuth, mask, true), "phi");
        }
    }

    report.summarize();
    return report;
}

void QualityReport::summarize() {
    summaries.clear();
    std::map<std::pair<std::string, std::string>, std::vector<const QualityRecord*>> groups;
    std::vector<std::pair<std::string, std::string>> order;
    for (const auto& rec : records) {
        auto key = std::make_pair(rec.modality, rec.quantity);
        if (!groups.count(key)) order.push_back(key);
        groups[key].push_back(&rec);
    }
    for (const auto& key : order) {
        const auto& recs = groups[key];
        std::vector<double> rm, ps, ss;
        for (const auto* rec : recs) {
            rm.push_back(rec->rmse);
            ps.push_back(rec->npsnr_db);
            ss.push_back(rec->ssim_pct);
        }
        summaries.push_back(
            {key.first, key.second, quartiles(rm), quartiles(ps), quartiles(ss), static_cast<Index>(recs.size())});
    }
}

std::string QualityReport::to_csv() const {
    std::ostringstream out;
    out << "modality,quantity,rmse,npsnr_db,ssim_pct,n_pixels\n";
    out << std::setprecision(10);
    for (const auto& r : records)
        out << r.modality << ',' << r.quantity << ',' << r.rmse << ',' << r.npsnr_db << ',' << r.ssim_pct << ','
            << r.n_pixels << '\n';
    return out.str();
}

std::string QualityReport::to_json() const {
    nlohmann::json doc;
    doc["records"] = nlohmann::json::array();
    for (const auto& r : records)
        doc["records"].push_back({{"modality", r.modality},
                                  {"quantity", r.quantity},
                                  {"rmse", number(r.rmse)},
                                  {"npsnr_db", number(r.npsnr_db)},
                                  {"ssim_pct", number(r.ssim_pct)},
                                  {"n_pixels", r.n_pixels}});
    doc["quartiles"] = nlohmann::json::array();
    for (const auto& s : summaries)
        doc["quartiles"].push_back({{"modality", s.modality},
                                    {"quantity", s.quantity},
                                    {"instances", s.instances},
                                    {"rmse", quartile_json(s.rmse)},
                                    {"npsnr_db", quartile_json(s.npsnr_db)},
                                    {"ssim_pct", quartile_json(s.ssim_pct)}});
    return doc.dump(2);
}

}  // namespace mpol
