#pragma once

// Two-part (hurdle) behavioral analysis: logistic GLM by IRLS for engagement
// probability, quasi-binomial (fractional logit) with sandwich errors for
// intensity among engagers, pairwise group contrasts with odds-ratio effects,
// and Benjamini-Hochberg adjustment.

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mdn/common.hpp"

namespace mdn {

namespace linalg {

// Cholesky solve for small symmetric positive definite systems.
inline std::vector<double> chol_factor(std::vector<double> a, int p) {
    for (int j = 0; j < p; ++j) {
        double d = a[j * p + j];
        for (int k = 0; k < j; ++k) d -= a[j * p + k] * a[j * p + k];
        check<NumericError>(d > 1e-12, "singular weighted normal matrix");
        a[j * p + j] = std::sqrt(d);
        for (int i = j + 1; i < p; ++i) {
            double s = a[i * p + j];
            for (int k = 0; k < j; ++k) s -= a[i * p + k] * a[j * p + k];
            a[i * p + j] = s / a[j * p + j];
        }
    }
    return a;
}

inline std::vector<double> chol_solve(const std::vector<double>& l, int p,
                                      std::vector<double> b) {
    for (int i = 0; i < p; ++i) {
        for (int k = 0; k < i; ++k) b[i] -= l[i * p + k] * b[k];
        b[i] /= l[i * p + i];
    }
    for (int i = p - 1; i >= 0; --i) {
        for (int k = i + 1; k < p; ++k) b[i] -= l[k * p + i] * b[k];
        b[i] /= l[i * p + i];
    }
    return b;
}

inline std::vector<double> spd_inverse(const std::vector<double>& a, int p) {
    auto l = chol_factor(a, p);
    std::vector<double> inv(p * p, 0.0);
    for (int col = 0; col < p; ++col) {
        std::vector<double> e(p, 0.0);
        e[col] = 1.0;
        auto x = chol_solve(l, p, e);
        for (int i = 0; i < p; ++i) inv[i * p + col] = x[i];
    }
    return inv;
}

}  // namespace linalg

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Two-sided normal tail probability for a Wald z statistic.
inline double wald_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

struct GlmFit {
    std::vector<double> beta;
    std::vector<double> se;
    std::vector<double> z;
    std::vector<double> p;
    int iterations = 0;
    bool converged = false;
    bool separation = false;  // |beta| diverging: p-values unreliable
    std::vector<double> deviance_trace;
};

namespace detail {

inline double binomial_deviance(const std::vector<double>& y, const std::vector<double>& mu) {
    double dev = 0;
    for (size_t i = 0; i < y.size(); ++i) {
        const double m = std::min(std::max(mu[i], 1e-12), 1.0 - 1e-12);
        dev += y[i] * std::log(m) + (1.0 - y[i]) * std::log(1.0 - m);
    }
    return -2.0 * dev;
}

inline void validate_design(const std::vector<std::vector<double>>& x, size_t n_y) {
    check<Error>(x.size() == n_y, "glm: ", x.size(), " design rows vs ", n_y, " responses");
    check<Error>(!x.empty(), "glm: empty design");
    const size_t p = x[0].size();
    check<Error>(x.size() > p, "glm: need N > P, got N=", x.size(), " P=", p);
    for (size_t j = 0; j < p; ++j) {
        bool any = false;
        for (const auto& row : x)
            if (row[j] != 0.0) any = true;
        check<Error>(any, "glm: design column ", j, " is constant zero");
    }
}

// Shared IRLS core: logistic score equations, which the fractional (quasi-
// binomial) case reuses unchanged.
inline GlmFit irls_core(const std::vector<std::vector<double>>& x, const std::vector<double>& y,
                        int max_iter, double tol) {
    validate_design(x, y.size());
    const int n = static_cast<int>(x.size());
    const int p = static_cast<int>(x[0].size());
    GlmFit fit;
    fit.beta.assign(p, 0.0);
    std::vector<double> mu(n), eta(n);
    for (fit.iterations = 0; fit.iterations < max_iter; ++fit.iterations) {
        for (int i = 0; i < n; ++i) {
            eta[i] = 0;
            for (int j = 0; j < p; ++j) eta[i] += x[i][j] * fit.beta[j];
            mu[i] = sigmoid(eta[i]);
        }
        fit.deviance_trace.push_back(binomial_deviance(y, mu));
        // XtWX and Xt(y - mu)
        std::vector<double> a(p * p, 0.0), g(p, 0.0);
        for (int i = 0; i < n; ++i) {
            const double w = mu[i] * (1.0 - mu[i]);
            for (int j = 0; j < p; ++j) {
                g[j] += x[i][j] * (y[i] - mu[i]);
                for (int k = 0; k <= j; ++k) a[j * p + k] += w * x[i][j] * x[i][k];
            }
        }
        for (int j = 0; j < p; ++j)
            for (int k = j + 1; k < p; ++k) a[j * p + k] = a[k * p + j];
        std::vector<double> delta;
        try {
            auto l = linalg::chol_factor(a, p);
            delta = linalg::chol_solve(l, p, g);
        } catch (const NumericError&) {
            // weights collapse once coefficients diverge; distinguish that
            // from a genuinely rank-deficient design
            double max_beta = 0;
            for (double b : fit.beta) max_beta = std::max(max_beta, std::abs(b));
            if (max_beta > 10.0) {
                fit.separation = true;
                break;
            }
            throw;
        }
        double max_step = 0, max_beta = 0;
        for (int j = 0; j < p; ++j) {
            fit.beta[j] += delta[j];
            max_step = std::max(max_step, std::abs(delta[j]));
            max_beta = std::max(max_beta, std::abs(fit.beta[j]));
            check<NumericError>(std::isfinite(fit.beta[j]), "glm: diverged to non-finite");
        }
        if (max_beta > 30.0) {  // log-odds beyond any practical rate: separation
            fit.separation = true;
            ++fit.iterations;
            break;
        }
        if (max_step < tol) {
            fit.converged = true;
            ++fit.iterations;
            break;
        }
    }
    return fit;
}

}  // namespace detail

inline GlmFit fit_logistic_irls(const std::vector<std::vector<double>>& x,
                                const std::vector<int>& y, int max_iter = 100,
                                double tol = 1e-8) {
    std::vector<double> yd(y.size());
    for (size_t i = 0; i < y.size(); ++i) {
        check<Error>(y[i] == 0 || y[i] == 1, "logistic: responses must be 0/1, got ", y[i]);
        yd[i] = static_cast<double>(y[i]);
    }
    auto fit = detail::irls_core(x, yd, max_iter, tol);
    const int n = static_cast<int>(x.size());
    const int p = static_cast<int>(x[0].size());
    if (fit.separation) {  // diverging coefficients: Wald machinery is meaningless
        fit.se.assign(p, std::numeric_limits<double>::infinity());
        fit.z.assign(p, 0.0);
        fit.p.assign(p, 1.0);
        return fit;
    }
    // model-based covariance (XtWX)^-1 at the fitted coefficients
    std::vector<double> mu(n);
    for (int i = 0; i < n; ++i) {
        double eta = 0;
        for (int j = 0; j < p; ++j) eta += x[i][j] * fit.beta[j];
        mu[i] = sigmoid(eta);
    }
    std::vector<double> a(p * p, 0.0);
    for (int i = 0; i < n; ++i) {
        const double w = mu[i] * (1.0 - mu[i]);
        for (int j = 0; j < p; ++j)
            for (int k = 0; k < p; ++k) a[j * p + k] += w * x[i][j] * x[i][k];
    }
    auto cov = linalg::spd_inverse(a, p);
    fit.se.resize(p);
    fit.z.resize(p);
    fit.p.resize(p);
    for (int j = 0; j < p; ++j) {
        fit.se[j] = std::sqrt(cov[j * p + j]);
        fit.z[j] = fit.beta[j] / fit.se[j];
        fit.p[j] = wald_p(fit.z[j]);
    }
    return fit;
}

// Quasi-binomial IRLS for fractional responses in [0,1], with sandwich
// (robust) standard errors. Fit on engagers only; exact ones are clipped to
// 1 - 1e-6 for the logit link.
inline GlmFit fit_fractional_logit(const std::vector<std::vector<double>>& x,
                                   const std::vector<double>& y_in, int max_iter = 100,
                                   double tol = 1e-8) {
    std::vector<double> y(y_in);
    bool all_same = true;
    for (auto& v : y) {
        check<Error>(v >= 0.0 && v <= 1.0, "fractional logit: response ", v, " outside [0,1]");
        v = std::min(v, 1.0 - 1e-6);
        if (v != std::min(y_in[0], 1.0 - 1e-6)) all_same = false;
    }
    check<Error>(!all_same, "fractional logit: all responses identical (degenerate variance)");
    auto fit = detail::irls_core(x, y, max_iter, tol);
    const int n = static_cast<int>(x.size());
    const int p = static_cast<int>(x[0].size());
    if (fit.separation) {
        fit.se.assign(p, std::numeric_limits<double>::infinity());
        fit.z.assign(p, 0.0);
        fit.p.assign(p, 1.0);
        return fit;
    }
    std::vector<double> mu(n);
    for (int i = 0; i < n; ++i) {
        double eta = 0;
        for (int j = 0; j < p; ++j) eta += x[i][j] * fit.beta[j];
        mu[i] = sigmoid(eta);
    }
    std::vector<double> a(p * p, 0.0), b(p * p, 0.0);
    for (int i = 0; i < n; ++i) {
        const double w = mu[i] * (1.0 - mu[i]);
        const double r = y[i] - mu[i];
        for (int j = 0; j < p; ++j)
            for (int k = 0; k < p; ++k) {
                a[j * p + k] += w * x[i][j] * x[i][k];
                b[j * p + k] += r * r * x[i][j] * x[i][k];
            }
    }
    auto ainv = linalg::spd_inverse(a, p);
    // sandwich: A^-1 B A^-1
    std::vector<double> tmp(p * p, 0.0), cov(p * p, 0.0);
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j)
            for (int k = 0; k < p; ++k) tmp[i * p + j] += ainv[i * p + k] * b[k * p + j];
    for (int i = 0; i < p; ++i)
        for (int j = 0; j < p; ++j)
            for (int k = 0; k < p; ++k) cov[i * p + j] += tmp[i * p + k] * ainv[k * p + j];
    fit.se.resize(p);
    fit.z.resize(p);
    fit.p.resize(p);
    for (int j = 0; j < p; ++j) {
        fit.se[j] = std::sqrt(cov[j * p + j]);
        fit.z[j] = fit.beta[j] / fit.se[j];
        fit.p[j] = wald_p(fit.z[j]);
    }
    return fit;
}

// Benjamini-Hochberg step-up: p_adj(i) = min over j >= i (by sorted rank) of
// min(1, p(j) * m / j), mapped back to input order.
inline std::vector<double> adjust_pvalues_bh(const std::vector<double>& ps) {
    const size_t m = ps.size();
    for (double p : ps) check<Error>(p >= 0.0 && p <= 1.0, "bh: p-value ", p, " outside [0,1]");
    std::vector<size_t> order(m);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return ps[a] < ps[b]; });
    std::vector<double> adj(m, 0.0);
    double running = 1.0;
    for (size_t i = m; i-- > 0;) {
        const double scaled =
            std::min(1.0, ps[order[i]] * static_cast<double>(m) / static_cast<double>(i + 1));
        running = std::min(running, scaled);
        adj[order[i]] = running;
    }
    return adj;
}

// ---------------------------------------------------------------------------
// Subject records and pairwise contrasts

struct SubjectRecord {
    std::string subject_id;
    std::string group;
    std::vector<double> fractions;  // one engagement fraction per action
};

struct HurdleData {
    std::vector<std::string> actions;
    std::vector<SubjectRecord> records;
};

enum class HurdlePart { kProbability, kIntensity };

inline const char* hurdle_part_name(HurdlePart p) {
    return p == HurdlePart::kProbability ? "prob" : "intensity";
}

struct TestResult {
    std::string action;
    std::string contrast;  // "A vs B": effect > 1 means A engages more
    HurdlePart part = HurdlePart::kProbability;
    double effect = 1.0;  // odds ratio exp(slope)
    double p = 1.0;
    double p_adj = 1.0;
    bool reliable = true;
    bool skipped = false;
    std::string note;
};

inline std::vector<std::string> group_names(const HurdleData& data) {
    std::vector<std::string> names;
    for (const auto& r : data.records)
        if (std::find(names.begin(), names.end(), r.group) == names.end())
            names.push_back(r.group);
    std::sort(names.begin(), names.end());
    return names;
}

// All unordered group pairs for one action and one hurdle part. The design is
// intercept + indicator(group == A), so exp(slope) is the A:B odds ratio.
inline std::vector<TestResult> pairwise_contrasts(const HurdleData& data, size_t action_idx,
                                                  HurdlePart part) {
    check<Error>(action_idx < data.actions.size(), "contrasts: action index ", action_idx,
                 " out of range");
    auto groups = group_names(data);
    check<Error>(groups.size() >= 2, "contrasts: need at least two groups, got ", groups.size());
    std::vector<TestResult> out;
    for (size_t a = 0; a < groups.size(); ++a) {
        for (size_t b = a + 1; b < groups.size(); ++b) {
            TestResult res;
            res.action = data.actions[action_idx];
            res.contrast = groups[a] + " vs " + groups[b];
            res.part = part;
            std::vector<std::vector<double>> design;
            std::vector<int> y_bin;
            std::vector<double> y_frac;
            int engaged_a = 0, engaged_b = 0, count_a = 0, count_b = 0;
            for (const auto& rec : data.records) {
                const bool in_a = rec.group == groups[a];
                if (!in_a && rec.group != groups[b]) continue;
                const double frac = rec.fractions[action_idx];
                if (in_a)
                    ++count_a;
                else
                    ++count_b;
                if (part == HurdlePart::kProbability) {
                    design.push_back({1.0, in_a ? 1.0 : 0.0});
                    y_bin.push_back(frac > 0.0 ? 1 : 0);
                } else if (frac > 0.0) {
                    design.push_back({1.0, in_a ? 1.0 : 0.0});
                    y_frac.push_back(frac);
                }
                if (frac > 0.0) (in_a ? engaged_a : engaged_b) += 1;
            }
            check<Error>(count_a >= 2 && count_b >= 2, "contrasts: need >= 2 subjects per group");
            try {
                if (part == HurdlePart::kProbability) {
                    const int total = static_cast<int>(y_bin.size());
                    const int engaged = engaged_a + engaged_b;
                    if (engaged == 0 || engaged == total) {
                        res.skipped = true;
                        res.note = "engagement constant across both groups";
                    } else {
                        auto fit = fit_logistic_irls(design, y_bin);
                        res.effect = std::exp(fit.beta[1]);
                        res.p = fit.p[1];
                        res.reliable = !fit.separation;
                        if (fit.separation) res.note = "perfect separation: p unreliable";
                    }
                } else {
                    if (engaged_a == 0 || engaged_b == 0) {
                        res.skipped = true;
                        res.note = std::string("no engagers in group ") +
                                   (engaged_a == 0 ? groups[a] : groups[b]);
                    } else {
                        auto fit = fit_fractional_logit(design, y_frac);
                        res.effect = std::exp(fit.beta[1]);
                        res.p = fit.p[1];
                        res.reliable = !fit.separation;
                    }
                }
            } catch (const Error& e) {
                res.skipped = true;
                res.note = e.what();
            }
            out.push_back(std::move(res));
        }
    }
    return out;
}

enum class AdjustFamily { kAll, kPerAction, kPerPart };

inline AdjustFamily adjust_family_from(const std::string& s) {
    if (s == "all") return AdjustFamily::kAll;
    if (s == "per-action") return AdjustFamily::kPerAction;
    if (s == "per-part") return AdjustFamily::kPerPart;
    fail<ConfigError>("unknown adjustment family '", s, "' (all | per-action | per-part)");
}

// Input CSV: header "subject_id,group,<action>..." then one row per subject
// with engagement fractions in [0,1].
inline HurdleData read_hurdle_csv(std::istream& in) {
    HurdleData data;
    std::string line;
    size_t line_no = 0;
    auto split = [](const std::string& s) {
        std::vector<std::string> cells;
        std::string cell;
        std::stringstream ss(s);
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!s.empty() && s.back() == ',') cells.push_back("");
        return cells;
    };
    check<IoError>(static_cast<bool>(std::getline(in, line)), "hurdle csv: empty input");
    ++line_no;
    auto header = split(line);
    check<IoError>(header.size() >= 3 && header[0] == "subject_id" && header[1] == "group",
                   "hurdle csv line 1: header must start with subject_id,group and name at least "
                   "one action");
    data.actions.assign(header.begin() + 2, header.end());
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto cells = split(line);
        check<IoError>(cells.size() == header.size(), "hurdle csv line ", line_no, ": expected ",
                       header.size(), " cells, got ", cells.size());
        SubjectRecord rec;
        rec.subject_id = cells[0];
        rec.group = cells[1];
        for (size_t j = 2; j < cells.size(); ++j) {
            double v = 0;
            try {
                v = std::stod(cells[j]);
            } catch (const std::exception&) {
                fail<IoError>("hurdle csv line ", line_no, ": cell '", cells[j],
                              "' is not a number");
            }
            check<IoError>(v >= 0.0 && v <= 1.0, "hurdle csv line ", line_no, ": fraction ", v,
                           " outside [0,1]");
            rec.fractions.push_back(v);
        }
        data.records.push_back(std::move(rec));
    }
    return data;
}

// Output CSV mirroring the clinical-table columns.
inline void write_results_csv(const std::vector<TestResult>& results, std::ostream& out,
                              bool include_skipped = false) {
    out << "action,contrast,type,effect,p,p_adj\n";
    for (const auto& r : results) {
        if (r.skipped && !include_skipped) continue;
        out << r.action << "," << r.contrast << "," << hurdle_part_name(r.part) << ","
            << std::setprecision(6) << r.effect << "," << r.p << "," << r.p_adj << "\n";
    }
}

// Runs both hurdle parts over every action and pair, then applies BH within
// the chosen family grouping.
inline std::vector<TestResult> run_hurdle_analysis(const HurdleData& data,
                                                   AdjustFamily family = AdjustFamily::kAll) {
    std::vector<TestResult> all;
    for (size_t ai = 0; ai < data.actions.size(); ++ai)
        for (HurdlePart part : {HurdlePart::kProbability, HurdlePart::kIntensity}) {
            auto batch = pairwise_contrasts(data, ai, part);
            all.insert(all.end(), batch.begin(), batch.end());
        }
    // group indices by family, skipped rows excluded from adjustment
    std::map<std::string, std::vector<size_t>> families;
    for (size_t i = 0; i < all.size(); ++i) {
        if (all[i].skipped) continue;
        std::string key = "all";
        if (family == AdjustFamily::kPerAction) key = all[i].action;
        if (family == AdjustFamily::kPerPart) key = hurdle_part_name(all[i].part);
        families[key].push_back(i);
    }
    for (const auto& [key, idx] : families) {
        std::vector<double> ps;
        for (size_t i : idx) ps.push_back(all[i].p);
        auto adj = adjust_pvalues_bh(ps);
        for (size_t j = 0; j < idx.size(); ++j) all[idx[j]].p_adj = adj[j];
    }
    std::stable_sort(all.begin(), all.end(),
                     [](const TestResult& a, const TestResult& b) { return a.p < b.p; });
    return all;
}

}  // namespace mdn
