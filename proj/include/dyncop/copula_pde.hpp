#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dyncop/copula_core.hpp"
#include "dyncop/marginal_solver.hpp"
#include "dyncop/sde_engine.hpp"

namespace dyncop {

enum class RhsForm { simplified, general, galichon2d };
/// Placement of f_i^2 in the first term of the general form: at x_i outside
/// the integral, or at the integration variable z_i inside it.
enum class FirstTermVariant { at_x, at_z };

const char* to_string(RhsForm form) noexcept;
RhsForm parse_rhs_form(const std::string& name);

struct PdeOptions {
    double density_floor = 1e-12;
    FirstTermVariant first_term = FirstTermVariant::at_x;
    bool analytic_margins = true;     ///< closed-form margins for tagged components
    std::vector<double> freeze_state;  ///< empty: x0
    int margin_points = 2001;
    double x_span = 8.0;  ///< margin grids reach this many standard deviations
    double horizon = 0.0;  ///< margin grids cover the law up to this time (0: max(2t, 1))
    int threads = 0;
};

/// Margins at time t: closed form for tagged components, the short-time
/// Gaussian otherwise.
std::vector<MarginalState> initial_margins(const SdeSystem& sys, double t, const PdeOptions& options = {});

/// Copula grid, synchronized margins, the system, and everything derived from
/// them on the lattice: u-derivatives of C, the u -> x maps, and the density
/// samples D.
class PdeWorkspace {
public:
    /// Builds margins at the copula's time stamp on default x grids.
    PdeWorkspace(const SdeSystem& system, const CopulaGrid& copula, const PdeOptions& options = {});
    /// Uses the supplied margins (one per component, same time stamp as C).
    PdeWorkspace(SdeSystem system, CopulaGrid copula, std::vector<MarginalState> margins,
                 const PdeOptions& options = {});

    const SdeSystem& system() const noexcept { return sys_; }
    const CopulaGrid& copula() const noexcept { return copula_; }
    const std::vector<MarginalState>& margins() const noexcept { return margins_; }
    const std::vector<MarginalModel>& models() const noexcept { return models_; }
    const PdeOptions& options() const noexcept { return opt_; }
    const Lattice& lattice() const noexcept { return copula_.lattice(); }
    double time() const noexcept { return copula_.time_stamp(); }

    /// Replaces the copula values and rebuilds the derivative caches. Returns
    /// the previous samples so callers can reuse the storage.
    std::vector<double> set_copula(CopulaGrid copula);
    /// Replaces the margins and rebuilds the u -> x maps.
    void set_margins(std::vector<MarginalState> margins);
    void set_first_term(FirstTermVariant v) noexcept { opt_.first_term = v; }

    // Derivative caches on the full lattice (central differences, second-order
    // one-sided stencils on the faces).
    const std::vector<double>& d1(int i) const { return d1_[i]; }
    const std::vector<double>& d2(int i) const { return d2_[i]; }
    const std::vector<double>& mixed(int i, int j) const;
    /// Hessian of C in u at a flat lattice index, row-major n x n.
    std::vector<double> hessian(std::size_t flat) const;

    // u -> x maps per axis at lattice nodes and at interval midpoints.
    const std::vector<double>& x_map(int i) const { return x_[i]; }
    const std::vector<double>& density_map(int i) const { return f_[i]; }
    const std::vector<double>& x_mid(int i) const { return xmid_[i]; }
    const std::vector<double>& dF(int i) const { return dF_[i]; }
    const std::vector<double>& d2F(int i) const { return d2F_[i]; }
    /// Fraction of lattice nodes at which some density sample hit the floor.
    double floor_fraction() const noexcept { return floor_fraction_; }

    /// Interior nodes are evolved; pinned nodes are fixed by the axioms.
    bool pinned(std::size_t flat) const;

private:
    void rebuild_derivatives();
    void rebuild_maps();

    SdeSystem sys_;
    CopulaGrid copula_;
    std::vector<MarginalState> margins_;
    std::vector<MarginalModel> models_;
    PdeOptions opt_;

    std::vector<std::vector<double>> d1_, d2_, mixed_;
    std::vector<std::vector<double>> x_, f_, xmid_, dF_, d2F_;
    std::vector<char> pinned_;
    double floor_fraction_ = 0.0;
};

struct RhsField {
    std::vector<double> values;  ///< on the lattice, 0 at pinned nodes
    double floor_fraction = 0.0;
    bool accuracy_warning = false;  ///< density floor hit on more than 5% of nodes
    double sup() const noexcept;
};

RhsField rhs_simplified(const PdeWorkspace& w);
RhsField rhs_general(const PdeWorkspace& w);
RhsField galichon2d_rhs(const PdeWorkspace& w);
RhsField evaluate_rhs(const PdeWorkspace& w, RhsForm form);

/// Largest explicit step allowed at the current state: 0.25 du^2 / max(sigma_i^2 f_i^2 / 2).
double stable_pde_dt(const PdeWorkspace& w);

struct StepDiagnostics {
    int step = 0;
    double t = 0.0;
    double dt = 0.0;
    double max_boundary_correction = 0.0;
    double max_clip = 0.0;
    std::size_t clipped_points = 0;
    double rhs_sup = 0.0;
};

struct EvolveOptions {
    KfeOptions kfe;
    double margin_tolerance = 5e-3;
    double volume_tolerance = 1e-6;
    double clip_fraction_limit = 0.01;
    std::vector<StepDiagnostics>* trace = nullptr;  ///< receives each step as it completes
};

struct EvolveResult {
    CopulaGrid grid;
    std::vector<StepDiagnostics> steps;
    std::size_t accuracy_warnings = 0;
    double max_clip_fraction = 0.0;
};

/// Advances w from its time stamp to t1 in `steps` RK4 steps (0 picks the
/// minimum stable count). The workspace ends at t1.
EvolveResult evolve(PdeWorkspace& w, double t1, int steps, RhsForm form, const EvolveOptions& options = {});

/// Minimum step count for the stability bound at the workspace's current state.
int required_pde_steps(const PdeWorkspace& w, double t1);

nlohmann::json diagnostics_json(const EvolveResult& r);

}  // namespace dyncop
