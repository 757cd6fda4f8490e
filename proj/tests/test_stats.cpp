#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "mdn/stats.hpp"

using namespace mdn;

namespace {

// Independent Newton-Raphson maximizer of the logistic log-likelihood with a
// naive Gauss-Jordan solve; shares no code with the IRLS path.
std::vector<double> newton_logistic_oracle(const std::vector<std::vector<double>>& x,
                                           const std::vector<int>& y, int iters = 60) {
    const int n = static_cast<int>(x.size());
    const int p = static_cast<int>(x[0].size());
    std::vector<double> beta(p, 0.0);
    for (int it = 0; it < iters; ++it) {
        std::vector<double> grad(p, 0.0);
        std::vector<std::vector<double>> hess(p, std::vector<double>(p, 0.0));
        for (int i = 0; i < n; ++i) {
            double eta = 0;
            for (int j = 0; j < p; ++j) eta += x[i][j] * beta[j];
            const double mu = 1.0 / (1.0 + std::exp(-eta));
            for (int j = 0; j < p; ++j) {
                grad[j] += (y[i] - mu) * x[i][j];
                for (int k = 0; k < p; ++k) hess[j][k] += mu * (1.0 - mu) * x[i][j] * x[i][k];
            }
        }
        // Gauss-Jordan solve of hess * delta = grad
        std::vector<std::vector<double>> aug(p, std::vector<double>(p + 1));
        for (int j = 0; j < p; ++j) {
            for (int k = 0; k < p; ++k) aug[j][k] = hess[j][k];
            aug[j][p] = grad[j];
        }
        for (int col = 0; col < p; ++col) {
            int pivot = col;
            for (int r = col + 1; r < p; ++r)
                if (std::abs(aug[r][col]) > std::abs(aug[pivot][col])) pivot = r;
            std::swap(aug[col], aug[pivot]);
            const double d = aug[col][col];
            for (int k = col; k <= p; ++k) aug[col][k] /= d;
            for (int r = 0; r < p; ++r) {
                if (r == col) continue;
                const double f = aug[r][col];
                for (int k = col; k <= p; ++k) aug[r][k] -= f * aug[col][k];
            }
        }
        for (int j = 0; j < p; ++j) beta[j] += aug[j][p];
    }
    return beta;
}

HurdleData two_group_data(const std::vector<double>& group_a, const std::vector<double>& group_b,
                          const std::string& name_a = "A", const std::string& name_b = "B") {
    HurdleData data;
    data.actions = {"act"};
    int id = 0;
    for (double f : group_a) data.records.push_back({"s" + std::to_string(id++), name_a, {f}});
    for (double f : group_b) data.records.push_back({"s" + std::to_string(id++), name_b, {f}});
    return data;
}

}  // namespace

TEST_CASE("intercept-only logistic recovers the closed-form log odds") {
    std::vector<std::vector<double>> x(10, {1.0});
    std::vector<int> y = {1, 1, 1, 1, 1, 1, 0, 0, 0, 0};
    auto fit = fit_logistic_irls(x, y);
    REQUIRE(fit.converged);
    REQUIRE(fit.beta[0] == Catch::Approx(std::log(0.6 / 0.4)).margin(1e-6));
    REQUIRE(fit.beta[0] == Catch::Approx(0.405465).margin(1e-6));

    std::vector<int> y_even = {1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
    auto fit_even = fit_logistic_irls(x, y_even);
    REQUIRE(fit_even.beta[0] == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("binary covariate recovers the 2x2-table odds ratio") {
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (int i = 0; i < 50; ++i) {  // group with rate 0.8
        x.push_back({1.0, 1.0});
        y.push_back(i < 40 ? 1 : 0);
    }
    for (int i = 0; i < 50; ++i) {  // group with rate 0.2
        x.push_back({1.0, 0.0});
        y.push_back(i < 10 ? 1 : 0);
    }
    auto fit = fit_logistic_irls(x, y);
    const double want = std::log((0.8 / 0.2) / (0.2 / 0.8));
    REQUIRE(fit.beta[1] == Catch::Approx(want).margin(1e-4));
    REQUIRE(fit.beta[1] == Catch::Approx(2.7726).margin(1e-4));
}

TEST_CASE("IRLS matches the Newton oracle on 20 random datasets") {
    Rng rng(2026);
    std::uniform_real_distribution<double> ux(-1.5, 1.5);
    std::uniform_real_distribution<double> ub(-1.0, 1.0);
    std::uniform_real_distribution<double> uu(0.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
        const int n = 40, p = 3;
        std::vector<double> true_beta = {ub(rng), ub(rng), ub(rng)};
        std::vector<std::vector<double>> x(n, std::vector<double>(p));
        std::vector<int> y(n);
        for (int i = 0; i < n; ++i) {
            x[i][0] = 1.0;
            x[i][1] = ux(rng);
            x[i][2] = ux(rng);
            double eta = 0;
            for (int j = 0; j < p; ++j) eta += x[i][j] * true_beta[j];
            y[i] = uu(rng) < sigmoid(eta) ? 1 : 0;
        }
        int ones = 0;
        for (int v : y) ones += v;
        if (ones < 3 || ones > n - 3) continue;  // skip near-degenerate draws
        auto fit = fit_logistic_irls(x, y);
        auto oracle = newton_logistic_oracle(x, y);
        for (int j = 0; j < p; ++j) REQUIRE(fit.beta[j] == Catch::Approx(oracle[j]).margin(1e-6));
    }
}

TEST_CASE("IRLS deviance is non-increasing") {
    Rng rng(17);
    std::uniform_real_distribution<double> ux(-2.0, 2.0);
    std::uniform_real_distribution<double> uu(0.0, 1.0);
    const int n = 60;
    std::vector<std::vector<double>> x(n, std::vector<double>(2));
    std::vector<int> y(n);
    for (int i = 0; i < n; ++i) {
        x[i] = {1.0, ux(rng)};
        y[i] = uu(rng) < sigmoid(0.5 + 1.2 * x[i][1]) ? 1 : 0;
    }
    auto fit = fit_logistic_irls(x, y);
    for (size_t i = 1; i < fit.deviance_trace.size(); ++i)
        REQUIRE(fit.deviance_trace[i] <= fit.deviance_trace[i - 1] + 1e-9);
}

TEST_CASE("perfect separation is flagged") {
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (int i = 0; i < 10; ++i) {
        x.push_back({1.0, static_cast<double>(i)});
        y.push_back(i >= 5 ? 1 : 0);  // perfectly separable at 4.5
    }
    auto fit = fit_logistic_irls(x, y);
    REQUIRE(fit.separation);
}

TEST_CASE("fractional logit closed forms") {
    std::vector<std::vector<double>> x(8, {1.0});
    std::vector<double> y = {0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25};
    // protect against zero variance: perturb symmetrically around the mean
    y[0] = 0.20;
    y[1] = 0.30;
    auto fit = fit_fractional_logit(x, y);
    REQUIRE(fit.converged);
    REQUIRE(fit.beta[0] == Catch::Approx(std::log(0.25 / 0.75)).margin(1e-3));

    std::vector<double> y_same(8, 0.5);
    REQUIRE_THROWS_AS(fit_fractional_logit(x, y_same), Error);
}

TEST_CASE("fractional logit recovers the mean-matching intercept exactly") {
    // exact mean 0.25 with spread
    std::vector<std::vector<double>> x(4, {1.0});
    std::vector<double> y = {0.1, 0.4, 0.2, 0.3};
    auto fit = fit_fractional_logit(x, y);
    REQUIRE(fit.beta[0] == Catch::Approx(std::log(0.25 / 0.75)).margin(1e-5));
    REQUIRE(fit.beta[0] == Catch::Approx(-1.0986).margin(1e-4));
}

TEST_CASE("fractional logit binary design slope matches group means") {
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (int i = 0; i < 20; ++i) {
        x.push_back({1.0, 1.0});
        y.push_back(i % 2 == 0 ? 0.55 : 0.65);  // mean 0.6
    }
    for (int i = 0; i < 20; ++i) {
        x.push_back({1.0, 0.0});
        y.push_back(i % 2 == 0 ? 0.25 : 0.35);  // mean 0.3
    }
    auto fit = fit_fractional_logit(x, y);
    const double want = std::log((0.6 / 0.4) / (0.3 / 0.7));
    REQUIRE(fit.beta[1] == Catch::Approx(want).margin(1e-3));
    REQUIRE(fit.beta[1] == Catch::Approx(1.2528).margin(1e-3));
}

TEST_CASE("BH adjustment hand cases") {
    auto single = adjust_pvalues_bh({0.037});
    REQUIRE(single[0] == Catch::Approx(0.037).margin(1e-12));

    auto four = adjust_pvalues_bh({0.01, 0.02, 0.03, 0.04});
    for (double v : four) REQUIRE(v == Catch::Approx(0.04).margin(1e-12));

    // monotone in the raws and never below them
    Rng rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> ps(12);
    for (auto& p : ps) p = u(rng);
    auto adj = adjust_pvalues_bh(ps);
    for (size_t i = 0; i < ps.size(); ++i) {
        REQUIRE(adj[i] >= ps[i] - 1e-12);
        REQUIRE(adj[i] <= 1.0);
        for (size_t j = 0; j < ps.size(); ++j)
            if (ps[i] <= ps[j]) REQUIRE(adj[i] <= adj[j] + 1e-12);
    }
}

TEST_CASE("identical groups give a null contrast") {
    std::vector<double> fracs = {0.0, 0.2, 0.5, 0.0, 0.8, 0.3, 0.0, 0.6};
    auto data = two_group_data(fracs, fracs);
    auto prob = pairwise_contrasts(data, 0, HurdlePart::kProbability);
    REQUIRE(prob.size() == 1);
    REQUIRE(prob[0].effect == Catch::Approx(1.0).margin(1e-6));
    REQUIRE(prob[0].p == Catch::Approx(1.0).margin(1e-6));
    auto intensity = pairwise_contrasts(data, 0, HurdlePart::kIntensity);
    REQUIRE(intensity[0].effect == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("swapping group order inverts the effect to its reciprocal") {
    std::vector<double> strong = {0.9, 0.8, 0.0, 0.85, 0.7, 0.9};
    std::vector<double> weak = {0.1, 0.0, 0.2, 0.0, 0.15, 0.1};
    // "A" sorts before "B": contrast is A vs B
    auto fwd = pairwise_contrasts(two_group_data(strong, weak, "A", "B"), 0,
                                  HurdlePart::kProbability);
    // renaming flips the sort order: contrast becomes B vs Z with Z = old A
    auto rev = pairwise_contrasts(two_group_data(strong, weak, "Z", "B"), 0,
                                  HurdlePart::kProbability);
    REQUIRE(fwd[0].effect * rev[0].effect == Catch::Approx(1.0).margin(1e-6));
    REQUIRE(fwd[0].p == Catch::Approx(rev[0].p).margin(1e-9));
    REQUIRE(fwd[0].effect > 1.0);  // the engaged group leads the contrast
}

TEST_CASE("three groups yield three contrasts per part") {
    HurdleData data;
    data.actions = {"a0"};
    int id = 0;
    for (const char* g : {"ASD", "PSY", "TDC"})
        for (int i = 0; i < 5; ++i)
            data.records.push_back(
                {"s" + std::to_string(id++), g, {i % 2 == 0 ? 0.1 * (1 + i) : 0.0}});
    auto prob = pairwise_contrasts(data, 0, HurdlePart::kProbability);
    REQUIRE(prob.size() == 3);
    auto intensity = pairwise_contrasts(data, 0, HurdlePart::kIntensity);
    REQUIRE(intensity.size() == 3);
}

TEST_CASE("zero engagers in a group skips the intensity contrast with a reason") {
    std::vector<double> none(5, 0.0);
    std::vector<double> some = {0.5, 0.4, 0.0, 0.6, 0.3};
    auto res = pairwise_contrasts(two_group_data(none, some), 0, HurdlePart::kIntensity);
    REQUIRE(res.size() == 1);
    REQUIRE(res[0].skipped);
    REQUIRE_FALSE(res[0].note.empty());
}

TEST_CASE("odds ratio exceeds 1 exactly when group A engages more") {
    Rng rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 10; ++rep) {
        const double rate_a = 0.2 + 0.6 * u(rng);
        const double rate_b = 0.2 + 0.6 * u(rng);
        if (std::abs(rate_a - rate_b) < 0.05) continue;
        std::vector<double> a(40), b(40);
        for (int i = 0; i < 40; ++i) {
            a[i] = u(rng) < rate_a ? 0.5 : 0.0;
            b[i] = u(rng) < rate_b ? 0.5 : 0.0;
        }
        int ea = 0, eb = 0;
        for (double v : a) ea += v > 0;
        for (double v : b) eb += v > 0;
        if (ea == 0 || ea == 40 || eb == 0 || eb == 40) continue;
        auto res = pairwise_contrasts(two_group_data(a, b), 0, HurdlePart::kProbability);
        REQUIRE((res[0].effect > 1.0) == (ea > eb));
    }
}

TEST_CASE("hurdle csv round trip and validation") {
    std::stringstream good("subject_id,group,tapping,nodding\n"
                           "s1,ASD,0.5,0.0\n"
                           "s2,TDC,0.25,1.0\n");
    auto data = read_hurdle_csv(good);
    REQUIRE(data.actions == std::vector<std::string>{"tapping", "nodding"});
    REQUIRE(data.records.size() == 2);
    REQUIRE(data.records[1].fractions[1] == 1.0);

    std::stringstream bad_cells("subject_id,group,tapping\ns1,ASD\n");
    REQUIRE_THROWS_AS(read_hurdle_csv(bad_cells), IoError);
    try {
        std::stringstream bad_value("subject_id,group,tapping\ns1,ASD,1.5\n");
        read_hurdle_csv(bad_value);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("full analysis adjusts within the requested family and sorts by p") {
    Rng rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    HurdleData data;
    data.actions = {"a0", "a1", "a2"};
    int id = 0;
    for (const char* g : {"ASD", "PSY", "TDC"})
        for (int i = 0; i < 12; ++i) {
            SubjectRecord rec{"s" + std::to_string(id++), g, {}};
            for (int a = 0; a < 3; ++a) rec.fractions.push_back(u(rng) < 0.6 ? u(rng) : 0.0);
            data.records.push_back(rec);
        }
    auto results = run_hurdle_analysis(data, AdjustFamily::kAll);
    REQUIRE(results.size() == 18);  // 3 actions x 3 pairs x 2 parts
    for (size_t i = 1; i < results.size(); ++i) REQUIRE(results[i - 1].p <= results[i].p);
    for (const auto& r : results)
        if (!r.skipped) REQUIRE(r.p_adj >= r.p - 1e-12);

    std::stringstream out;
    write_results_csv(results, out);
    std::string header;
    std::getline(out, header);
    REQUIRE(header == "action,contrast,type,effect,p,p_adj");
}
