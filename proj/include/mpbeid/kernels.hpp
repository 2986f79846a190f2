#pragma once

// Breakage kernel specifications.  A kernel couples a stoichiometric kernel
// beta(v, w | v', w') with a breakage rate Gamma(v, w).  Three stoichiometric
// families are supported:
//   * continuous:        beta = sum_m c_m v'^p_m w'^q_m   (uniform daughters)
//   * single-delta-sum:  beta = [v' d(v-v') + w' d(w-w')] / (v' w')
//   * product-delta:     beta = c d(v - theta_v v') d(w - theta_w w')
// Deltas sitting on an integration boundary carry full weight.

#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "mpbeid/common.hpp"

namespace mpbeid::forward {

struct Monomial2D {
    double c = 0.0;
    double p = 0.0;
    double q = 0.0;
};

enum class BetaKind { continuous, single_delta_sum, product_delta };

inline std::string to_string(BetaKind k) {
    switch (k) {
        case BetaKind::continuous: return "continuous";
        case BetaKind::single_delta_sum: return "single-delta-sum";
        case BetaKind::product_delta: return "product-delta";
    }
    return "?";
}

struct KernelSpec {
    BetaKind beta_kind = BetaKind::continuous;
    std::vector<Monomial2D> beta_terms;  // continuous only
    double delta_c = 0.0;                // product-delta multiplicity
    double theta_v = 0.0;                // product-delta daughter fractions
    double theta_w = 0.0;
    std::vector<Monomial2D> rate_terms;  // Gamma(v, w)

    double rate(double v, double w) const {
        double g = 0.0;
        for (const auto& m : rate_terms) g += m.c * std::pow(v, m.p) * std::pow(w, m.q);
        return g;
    }

    // Continuous beta evaluated at the parent (constant over daughters).
    double beta_density(double vp, double wp) const {
        double b = 0.0;
        for (const auto& m : beta_terms) b += m.c * std::pow(vp, m.p) * std::pow(wp, m.q);
        return b;
    }

    // Fragments per breakage event of parent (vp, wp).
    double nu(double vp, double wp) const {
        switch (beta_kind) {
            case BetaKind::continuous: return beta_density(vp, wp) * vp * wp;
            case BetaKind::single_delta_sum: return 2.0;
            case BetaKind::product_delta: return delta_c;
        }
        return 0.0;
    }

    void validate_shape() const {
        check(!rate_terms.empty(), "KernelSpec: breakage rate is empty");
        if (beta_kind == BetaKind::continuous)
            check(!beta_terms.empty(), "KernelSpec: continuous kernel has no terms");
        if (beta_kind == BetaKind::product_delta) {
            check(delta_c > 0.0, "KernelSpec: product-delta multiplicity must be > 0");
            check(theta_v > 0.0 && theta_v <= 1.0 && theta_w > 0.0 && theta_w <= 1.0,
                  "KernelSpec: product-delta fractions must lie in (0, 1]");
        }
    }
};

// The six benchmark cases.
inline KernelSpec case_kernel(int id) {
    KernelSpec k;
    switch (id) {
        case 1:
            k.beta_terms = {{4.0, -1.0, -1.0}};
            k.rate_terms = {{1.0, 0.0, 0.0}};
            break;
        case 2:
            k.beta_terms = {{4.0, -1.0, -1.0}};
            k.rate_terms = {{1.0, 1.0, 1.0}};
            break;
        case 3:
            k.beta_terms = {{2.0, -1.0, -1.0}};
            k.rate_terms = {{1.0, 0.0, 0.0}};
            break;
        case 4:
            k.beta_terms = {{2.0, -1.0, -1.0}};
            k.rate_terms = {{1.0, 1.0, 0.0}, {1.0, 0.0, 1.0}};
            break;
        case 5:
            k.beta_kind = BetaKind::single_delta_sum;
            k.rate_terms = {{1.0, 1.0, 1.0}};
            break;
        case 6:
            k.beta_kind = BetaKind::product_delta;
            k.delta_c = 4.0;
            k.theta_v = 0.5;
            k.theta_w = 0.5;
            k.rate_terms = {{0.25, 0.0, 0.0}};
            break;
        default:
            fail(strfmt("case_kernel: unknown case id %d (valid: 1..6)", id));
    }
    k.validate_shape();
    return k;
}

// ---------------------------------------------------------------------------
// Manifest form, for custom kernels driven through the CLI.
// ---------------------------------------------------------------------------

inline nlohmann::json kernel_to_json(const KernelSpec& k) {
    nlohmann::json j;
    j["beta"]["kind"] = to_string(k.beta_kind);
    if (k.beta_kind == BetaKind::continuous) {
        auto& terms = j["beta"]["terms"];
        terms = nlohmann::json::array();
        for (const auto& m : k.beta_terms)
            terms.push_back({{"c", m.c}, {"p", m.p}, {"q", m.q}});
    } else if (k.beta_kind == BetaKind::product_delta) {
        j["beta"]["c"] = k.delta_c;
        j["beta"]["theta_v"] = k.theta_v;
        j["beta"]["theta_w"] = k.theta_w;
    }
    auto& rate = j["rate"]["terms"];
    rate = nlohmann::json::array();
    for (const auto& m : k.rate_terms)
        rate.push_back({{"c", m.c}, {"p", m.p}, {"q", m.q}});
    return j;
}

inline KernelSpec kernel_from_json(const nlohmann::json& j) {
    KernelSpec k;
    std::string kind = j.at("beta").at("kind").get<std::string>();
    if (kind == "continuous") {
        k.beta_kind = BetaKind::continuous;
        for (const auto& t : j.at("beta").at("terms"))
            k.beta_terms.push_back({t.at("c").get<double>(), t.at("p").get<double>(),
                                    t.at("q").get<double>()});
    } else if (kind == "single-delta-sum") {
        k.beta_kind = BetaKind::single_delta_sum;
    } else if (kind == "product-delta") {
        k.beta_kind = BetaKind::product_delta;
        k.delta_c = j.at("beta").at("c").get<double>();
        k.theta_v = j.at("beta").at("theta_v").get<double>();
        k.theta_w = j.at("beta").at("theta_w").get<double>();
    } else {
        fail("kernel manifest: unknown beta kind: " + kind);
    }
    for (const auto& t : j.at("rate").at("terms"))
        k.rate_terms.push_back({t.at("c").get<double>(), t.at("p").get<double>(),
                                t.at("q").get<double>()});
    k.validate_shape();
    return k;
}

}  // namespace mpbeid::forward
