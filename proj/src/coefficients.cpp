#include "dyncop/coefficients.hpp"

#include <cmath>
#include <vector>

#include "dyncop/error.hpp"

namespace dyncop {

Coefficient::Coefficient(int component, Fn value, Fn d_own, bool own_only, CoefficientSpec spec)
    : component_(component),
      value_(std::move(value)),
      d_own_(std::move(d_own)),
      own_only_(own_only),
      spec_(std::move(spec)) {
    require(static_cast<bool>(value_), ErrorKind::parameter, "coefficient: empty callable");
}

double Coefficient::d_own(std::span<const double> x) const {
    if (d_own_) return d_own_(x);
    std::vector<double> y(x.begin(), x.end());
    const double h = 1e-5 * std::max(1.0, std::abs(x[component_]));
    y[component_] = x[component_] + h;
    const double up = value_(y);
    y[component_] = x[component_] - h;
    const double dn = value_(y);
    return (up - dn) / (2 * h);
}

namespace {

void expect_params(const CoefficientSpec& s, std::size_t n) {
    require(s.params.size() == n, ErrorKind::configuration,
            "coefficient '" + s.name + "' expects " + std::to_string(n) + " parameter(s)");
}

}  // namespace

Coefficient Coefficient::from_spec(CoefficientRole role, int i, const CoefficientSpec& s) {
    const auto& p = s.params;
    const bool drift = role == CoefficientRole::drift;
    auto own = [i](auto f, auto df) {
        return std::pair<Fn, Fn>{[i, f](std::span<const double> x) { return f(x[i]); },
                                 [i, df](std::span<const double> x) { return df(x[i]); }};
    };
    std::pair<Fn, Fn> fns;
    bool own_only = true;

    if (s.name == "zero") {
        expect_params(s, 0);
        fns = own([](double) { return 0.0; }, [](double) { return 0.0; });
    } else if (s.name == "constant") {
        expect_params(s, 1);
        const double c = p[0];
        fns = own([c](double) { return c; }, [](double) { return 0.0; });
    } else if (s.name == "linear") {
        expect_params(s, 2);
        const double a = p[0], b = p[1];
        fns = own([a, b](double v) { return a + b * v; }, [b](double) { return b; });
    } else if (s.name == "gbm") {
        expect_params(s, 1);
        const double a = p[0];
        if (drift)
            fns = own([a](double v) { return a * v; }, [a](double) { return a; });
        else  // |x| keeps the diffusion non-negative off the positive half-line
            fns = own([a](double v) { return a * std::abs(v); },
                      [a](double v) { return v < 0 ? -a : a; });
    } else if (drift && s.name == "ou") {
        expect_params(s, 2);
        const double th = p[0], m = p[1];
        fns = own([th, m](double v) { return th * (m - v); }, [th](double) { return -th; });
    } else if (drift && s.name == "quadratic") {
        expect_params(s, 1);
        const double a = p[0];
        fns = own([a](double v) { return a * v * v; }, [a](double v) { return 2 * a * v; });
    } else if (drift && s.name == "coupled_linear") {
        expect_params(s, 3);
        require(s.other >= 0 && s.other != i, ErrorKind::configuration,
                "coupled_linear needs another component index");
        const double a = p[0], b = p[1], c = p[2];
        const int j = s.other;
        fns = {[=](std::span<const double> x) { return a + b * x[i] + c * x[j]; },
               [=](std::span<const double>) { return b; }};
        own_only = false;
    } else if (!drift && s.name == "tanh_modulated") {
        expect_params(s, 2);
        const double sc = p[0], c = p[1];
        fns = own([sc, c](double v) { return sc * (1.0 + c * std::tanh(v)); },
                  [sc, c](double v) {
                      const double th = std::tanh(v);
                      return sc * c * (1.0 - th * th);
                  });
    } else if (!drift && s.name == "coupled_tanh") {
        expect_params(s, 2);
        require(s.other >= 0 && s.other != i, ErrorKind::configuration,
                "coupled_tanh needs another component index");
        const double sc = p[0], c = p[1];
        const int j = s.other;
        fns = {[=](std::span<const double> x) { return sc * (1.0 + c * std::tanh(x[j])); },
               [](std::span<const double>) { return 0.0; }};
        own_only = false;
    } else {
        fail(ErrorKind::configuration, std::string("unknown ") + (drift ? "drift" : "diffusion") +
                                           " built-in '" + s.name + "'");
    }
    return Coefficient(i, std::move(fns.first), std::move(fns.second), own_only, s);
}

CorrelationField CorrelationField::independent() {
    return {[](int, int, double, double) { return 0.0; }, true, {"independent", {}, -1}};
}

CorrelationField CorrelationField::constant(double r) {
    require(r >= -1.0 && r <= 1.0, ErrorKind::parameter, "correlation must lie in [-1, 1]");
    return {[r](int, int, double, double) { return r; }, true, {"constant", {r}, -1}};
}

CorrelationField CorrelationField::matrix(int dim, std::vector<double> upper) {
    require(upper.size() == static_cast<std::size_t>(dim * (dim - 1) / 2), ErrorKind::parameter,
            "correlation matrix: wrong number of upper-triangle entries");
    for (double r : upper)
        require(r >= -1.0 && r <= 1.0, ErrorKind::parameter, "correlation must lie in [-1, 1]");
    std::vector<double> full(static_cast<std::size_t>(dim * dim), 0.0);
    std::size_t k = 0;
    for (int i = 0; i < dim; ++i)
        for (int j = i + 1; j < dim; ++j) full[i * dim + j] = full[j * dim + i] = upper[k++];
    CoefficientSpec spec{"matrix", upper, -1};
    return {[full = std::move(full), dim](int i, int j, double, double) { return full[i * dim + j]; },
            true, std::move(spec)};
}

CorrelationField CorrelationField::tanh_product(double scale) {
    require(std::abs(scale) <= 1.0, ErrorKind::parameter, "tanh_product scale must lie in [-1, 1]");
    return {[scale](int, int, double xi, double xj) { return scale * std::tanh(xi * xj); }, false,
            {"tanh_product", {scale}, -1}};
}

CorrelationField CorrelationField::custom(Fn fn, bool constant) {
    return {std::move(fn), constant, {"custom", {}, -1}};
}

double CorrelationField::operator()(int i, int j, double xi, double xj) const {
    if (i == j) return 1.0;
    return fn_(i, j, xi, xj);
}

CorrelationField correlation_from_spec(int dim, const CoefficientSpec& s) {
    if (s.name == "independent") {
        expect_params(s, 0);
        return CorrelationField::independent();
    }
    if (s.name == "constant") {
        expect_params(s, 1);
        return CorrelationField::constant(s.params[0]);
    }
    if (s.name == "matrix") return CorrelationField::matrix(dim, s.params);
    if (s.name == "tanh_product") {
        expect_params(s, 1);
        return CorrelationField::tanh_product(s.params[0]);
    }
    fail(ErrorKind::configuration, "unknown correlation built-in '" + s.name + "'");
}

}  // namespace dyncop
