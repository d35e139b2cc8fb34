#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dyncop/coefficients.hpp"
#include "dyncop/copula_pde.hpp"
#include "dyncop/error.hpp"
#include "dyncop/sde_engine.hpp"

namespace dyncop {

/// A copula family named in a config: "product", "min", or
/// "gaussian r12 [r13 r23]".
struct FamilySpec {
    std::string name = "product";
    std::vector<double> params;
    bool operator==(const FamilySpec&) const = default;
};

ParametricCopula make_family(int dim, const FamilySpec& spec);

struct ExperimentConfig {
    // system
    int dim = 2;
    std::vector<double> x0{0.0, 0.0};
    std::vector<CoefficientSpec> drift{{"zero", {}, -1}, {"zero", {}, -1}};
    std::vector<CoefficientSpec> diffusion{{"constant", {1.0}, -1}, {"constant", {1.0}, -1}};
    CoefficientSpec rho{"independent", {}, -1};

    // grid
    int resolution = 51;
    double x_span = 8.0;
    int margin_points = 2001;
    double t0 = 0.25;
    double t1 = 1.0;
    int steps = 0;

    // run
    std::uint64_t seed = 1;
    std::size_t n_paths = 10000;
    RhsForm form = RhsForm::simplified;
    FirstTermVariant first_term = FirstTermVariant::at_x;
    FamilySpec initial;
    bool has_reference = false;
    FamilySpec reference;
    std::string metric = "sup";
    double tolerance = 2e-2;
    double margin_tolerance = 5e-3;
    double volume_tolerance = 1e-6;
    int threads = 0;
    int record = 1;
    std::string path_format = "csv";
    std::string output = "out";

    // marginal
    int component = -1;  ///< -1: every component
    int kfe_steps = 0;

    // product
    std::string product_family = "brownian";
    std::vector<double> times{0.25, 0.5, 1.0};
    int quad_points = 512;
    double product_tolerance = 1e-3;

    // validate
    std::string pde_grid;
    std::string paths;
    std::string reference_grid;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Parses the block format documented in the README. Errors name the field
/// and the line.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical text form; parse_config(emit_config(c)) == c.
std::string emit_config(const ExperimentConfig& c);
/// Cross-field checks (dimensions, built-in names, ranges).
void validate_config(const ExperimentConfig& c);

SdeSystem build_system(const ExperimentConfig& c);

/// Raised when a run completes setup but its numerics fail or its result
/// misses the stated tolerance. The summary, when written, is at `summary`.
class RunFailure : public Error {
public:
    RunFailure(ErrorKind kind, const std::string& what, std::filesystem::path summary = {}, bool validation = false)
        : Error(kind, what), summary_(std::move(summary)), validation_(validation) {}
    const std::filesystem::path& summary() const noexcept { return summary_; }
    /// True when the numerics ran but the tolerance check failed.
    bool validation() const noexcept { return validation_; }

private:
    std::filesystem::path summary_;
    bool validation_;
};

// Runners write their outputs under `out` and return the summary path.
std::filesystem::path run_simulate(const ExperimentConfig& c, const std::filesystem::path& out);
std::filesystem::path run_marginal(const ExperimentConfig& c, const std::filesystem::path& out);
std::filesystem::path run_evolve(const ExperimentConfig& c, const std::filesystem::path& out);
std::filesystem::path run_validate(const ExperimentConfig& c, const std::filesystem::path& out);
std::filesystem::path run_product(const ExperimentConfig& c, const std::filesystem::path& out);

/// Dispatches on "simulate", "marginal", "evolve", "validate", "product".
std::filesystem::path run_command(const std::string& command, const ExperimentConfig& c,
                                  const std::filesystem::path& out);

}  // namespace dyncop
