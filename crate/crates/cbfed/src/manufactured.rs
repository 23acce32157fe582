//! Manufactured solutions for the three benchmark cases, the forcing fields
//! derived from them in closed form, and the error / convergence-rate
//! machinery against a fine-grid discrete reference solution.
//!
//! Errors are measured against a discrete reference on a much finer grid,
//! not against the analytic fields: the analytic velocity satisfies the PDE
//! with the manufactured forcing but not the nonlinear slip law, so the
//! continuous solution of the boundary-value problem differs from it.

use std::f64::consts::PI;
use std::io::{self, Write};

use crate::fespace::{
    build_dofmap, evaluate_fe_function, evaluate_velocity_gradient, triangle_quadrature, DofMap,
    ElementGeometry,
};
use crate::forms::{AssemblyOptions, FrictionLaw, ProblemParams};
use crate::mesh::TriMesh;
use crate::solver::{check_iteration_contract, solve_cbfed, DiscreteState, IterationReport, SolverConfig};
use crate::CbfedError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseId {
    Ex1,
    Ex2,
    Ex3,
}

impl CaseId {
    pub fn parse(s: &str) -> Result<CaseId, CbfedError> {
        match s {
            "ex1" => Ok(CaseId::Ex1),
            "ex2" => Ok(CaseId::Ex2),
            "ex3" => Ok(CaseId::Ex3),
            other => Err(CbfedError::Config(format!(
                "unknown case '{other}', expected ex1, ex2, or ex3"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CaseId::Ex1 => "ex1",
            CaseId::Ex2 => "ex2",
            CaseId::Ex3 => "ex3",
        }
    }
}

/// One benchmark case: analytic fields, coefficients, and study grids.
#[derive(Clone, Debug)]
pub struct ManufacturedCase {
    pub id: CaseId,
    pub params: ProblemParams,
    /// Uzawa step for this case.
    pub eta: f64,
    pub grids: Vec<usize>,
    pub n_ref: usize,
}

impl ManufacturedCase {
    /// Built-in benchmark setups (coefficients, slip law, Uzawa step, grids).
    pub fn preset(id: CaseId) -> ManufacturedCase {
        match id {
            CaseId::Ex1 => ManufacturedCase {
                id,
                params: ProblemParams::new(
                    1.2,
                    2.0,
                    1.5,
                    0.0,
                    3.0,
                    1.0,
                    FrictionLaw::new(1.55, 1.53, 8.0).unwrap(),
                )
                .unwrap(),
                eta: 1.0,
                grids: vec![5, 10, 15, 20, 25, 30],
                n_ref: 160,
            },
            CaseId::Ex2 => ManufacturedCase {
                id,
                params: ProblemParams::new(
                    0.8,
                    1.5,
                    2.0,
                    -1.2,
                    3.0,
                    2.0,
                    FrictionLaw::new(5.01, 5.00, 8.0).unwrap(),
                )
                .unwrap(),
                eta: 1.0,
                grids: vec![5, 10, 15, 20, 25, 30],
                n_ref: 160,
            },
            CaseId::Ex3 => ManufacturedCase {
                id,
                params: ProblemParams::new(
                    1.0,
                    0.5,
                    1.2,
                    -1.0,
                    4.0,
                    3.0,
                    FrictionLaw::new(3.25, 3.20, 6.0).unwrap(),
                )
                .unwrap(),
                eta: 0.8,
                grids: vec![8, 16, 24, 32, 40, 48],
                n_ref: 192,
            },
        }
    }

    /// Analytic velocity. Divergence-free with vanishing normal component on
    /// the whole boundary for all cases; the polynomial cases keep a nonzero
    /// tangential trace on parts of the no-slip boundary, so the discrete
    /// problem does not reproduce them exactly (hence the fine-grid
    /// reference).
    pub fn velocity(&self, p: [f64; 2]) -> [f64; 2] {
        let [x, y] = p;
        match self.id {
            // stream function -(x^3 - x^2)(y^3 - y^2)
            CaseId::Ex1 => [
                -(x * x * x - x * x) * (3.0 * y * y - 2.0 * y),
                (3.0 * x * x - 2.0 * x) * (y * y * y - y * y),
            ],
            CaseId::Ex2 => {
                let c = 2.0 * PI;
                [
                    (c * y).sin() * (1.0 - (c * x).cos()),
                    (c * x).sin() * ((c * y).cos() - 1.0),
                ]
            }
            CaseId::Ex3 => {
                let [u, v] = ManufacturedCase { id: CaseId::Ex1, ..self.clone() }.velocity(p);
                [-u, -v]
            }
        }
    }

    /// `du_i/dx_j` of the analytic velocity.
    pub fn velocity_gradient(&self, p: [f64; 2]) -> [[f64; 2]; 2] {
        let [x, y] = p;
        match self.id {
            CaseId::Ex1 => {
                let f = x * x * x - x * x;
                let fp = 3.0 * x * x - 2.0 * x;
                let fpp = 6.0 * x - 2.0;
                let g = y * y * y - y * y;
                let gp = 3.0 * y * y - 2.0 * y;
                let gpp = 6.0 * y - 2.0;
                [[-fp * gp, -f * gpp], [fpp * g, fp * gp]]
            }
            CaseId::Ex2 => {
                let c = 2.0 * PI;
                let (sx, cx) = ((c * x).sin(), (c * x).cos());
                let (sy, cy) = ((c * y).sin(), (c * y).cos());
                [
                    [c * sx * sy, c * cy * (1.0 - cx)],
                    [c * cx * (cy - 1.0), -c * sx * sy],
                ]
            }
            CaseId::Ex3 => {
                let g = ManufacturedCase { id: CaseId::Ex1, ..self.clone() }.velocity_gradient(p);
                [[-g[0][0], -g[0][1]], [-g[1][0], -g[1][1]]]
            }
        }
    }

    /// Componentwise Laplacian of the analytic velocity.
    pub fn velocity_laplacian(&self, p: [f64; 2]) -> [f64; 2] {
        let [x, y] = p;
        match self.id {
            CaseId::Ex1 => {
                let f = x * x * x - x * x;
                let fp = 3.0 * x * x - 2.0 * x;
                let fpp = 6.0 * x - 2.0;
                let g = y * y * y - y * y;
                let gp = 3.0 * y * y - 2.0 * y;
                let gpp = 6.0 * y - 2.0;
                // f''' = g''' = 6
                [-fpp * gp - f * 6.0, 6.0 * g + fp * gpp]
            }
            CaseId::Ex2 => {
                let c = 2.0 * PI;
                let (sx, cx) = ((c * x).sin(), (c * x).cos());
                let (sy, cy) = ((c * y).sin(), (c * y).cos());
                [c * c * sy * (2.0 * cx - 1.0), -c * c * sx * (2.0 * cy - 1.0)]
            }
            CaseId::Ex3 => {
                let [u, v] = ManufacturedCase { id: CaseId::Ex1, ..self.clone() }.velocity_laplacian(p);
                [-u, -v]
            }
        }
    }

    /// Analytic pressure (zero mean over the unit square).
    pub fn pressure(&self, p: [f64; 2]) -> f64 {
        let [x, y] = p;
        match self.id {
            CaseId::Ex1 | CaseId::Ex3 => (2.0 * x - 1.0) * (2.0 * y - 1.0),
            CaseId::Ex2 => {
                let c = 2.0 * PI;
                c * ((c * y).cos() - (c * x).cos())
            }
        }
    }

    pub fn pressure_gradient(&self, p: [f64; 2]) -> [f64; 2] {
        let [x, y] = p;
        match self.id {
            CaseId::Ex1 | CaseId::Ex3 => [2.0 * (2.0 * y - 1.0), 2.0 * (2.0 * x - 1.0)],
            CaseId::Ex2 => {
                let c = 2.0 * PI;
                [c * c * (c * x).sin(), -c * c * (c * y).sin()]
            }
        }
    }

    /// Closed-form forcing
    /// `f = -mu lap(u) + (u.grad)u + alpha u + beta |u|^(r-1) u
    ///      + kappa |u|^(q-1) u + grad p`.
    pub fn forcing(&self, pt: [f64; 2]) -> [f64; 2] {
        let u = self.velocity(pt);
        let g = self.velocity_gradient(pt);
        let lap = self.velocity_laplacian(pt);
        let gp = self.pressure_gradient(pt);
        let pr = &self.params;
        let mag = (u[0] * u[0] + u[1] * u[1]).sqrt();
        let mut f = [0.0; 2];
        for a in 0..2 {
            let conv = u[0] * g[a][0] + u[1] * g[a][1];
            f[a] = -pr.mu * lap[a] + conv + pr.alpha * u[a] + pr.beta * mag.powf(pr.r - 1.0) * u[a]
                + gp[a];
            if pr.kappa != 0.0 {
                f[a] += pr.kappa * mag.powf(pr.q - 1.0) * u[a];
            }
        }
        f
    }

    /// Finite-difference application of the same PDE operator to the analytic
    /// fields; the independent cross-check for `forcing`. `pt` must keep the
    /// five-point stencil inside the domain.
    pub fn finite_difference_forcing(&self, pt: [f64; 2], h: f64) -> [f64; 2] {
        let [x, y] = pt;
        let u = self.velocity(pt);
        let uxp = self.velocity([x + h, y]);
        let uxm = self.velocity([x - h, y]);
        let uyp = self.velocity([x, y + h]);
        let uym = self.velocity([x, y - h]);
        let pxp = self.pressure([x + h, y]);
        let pxm = self.pressure([x - h, y]);
        let pyp = self.pressure([x, y + h]);
        let pym = self.pressure([x, y - h]);
        let pr = &self.params;
        let mag = (u[0] * u[0] + u[1] * u[1]).sqrt();
        let gp = [(pxp - pxm) / (2.0 * h), (pyp - pym) / (2.0 * h)];
        let mut f = [0.0; 2];
        for a in 0..2 {
            let lap = (uxp[a] - 2.0 * u[a] + uxm[a]) / (h * h)
                + (uyp[a] - 2.0 * u[a] + uym[a]) / (h * h);
            let dudx = (uxp[a] - uxm[a]) / (2.0 * h);
            let dudy = (uyp[a] - uym[a]) / (2.0 * h);
            f[a] = -pr.mu * lap + u[0] * dudx + u[1] * dudy + pr.alpha * u[a]
                + pr.beta * mag.powf(pr.r - 1.0) * u[a]
                + gp[a];
            if pr.kappa != 0.0 {
                f[a] += pr.kappa * mag.powf(pr.q - 1.0) * u[a];
            }
        }
        f
    }
}

/// Velocity and pressure errors of a coarse solution against a fine-grid one.
#[derive(Clone, Copy, Debug)]
pub struct ErrorNorms {
    /// `||u_h - u*||_{L2}`
    pub l2_u: f64,
    /// `||eps(u_h) - eps(u*)||_{L2}` (the V-norm of the difference)
    pub v_u: f64,
    /// `||p_h - p*||_{L2}`
    pub l2_p: f64,
}

/// Integrates the squared differences over the coarse mesh with a degree-6
/// rule, evaluating the reference through point location on the fine mesh.
pub fn error_norms(
    coarse_mesh: &TriMesh,
    coarse_dm: &DofMap,
    coarse: &DiscreteState,
    fine_mesh: &TriMesh,
    fine_dm: &DofMap,
    fine: &DiscreteState,
) -> Result<ErrorNorms, CbfedError> {
    if fine_mesh.n < coarse_mesh.n {
        return Err(CbfedError::InvalidInput(format!(
            "reference grid {} is coarser than the solution grid {}",
            fine_mesh.n, coarse_mesh.n
        )));
    }
    let rule = triangle_quadrature(6)?;
    let mut l2_u = 0.0;
    let mut v_u = 0.0;
    let mut l2_p = 0.0;
    for t in 0..coarse_mesh.triangles.len() {
        let geom = ElementGeometry::new(coarse_mesh, t);
        for (qi, &l) in rule.points.iter().enumerate() {
            let w = rule.weights[qi] * geom.det_jac;
            let pt = geom.physical_point(l);
            let (uc, gc) = evaluate_velocity_gradient(coarse_mesh, coarse_dm, &coarse.u, pt)?;
            let (_, pc) = evaluate_fe_function(coarse_mesh, coarse_dm, &coarse.u, &coarse.p, pt)?;
            let (uf, gf) = evaluate_velocity_gradient(fine_mesh, fine_dm, &fine.u, pt)?;
            let (_, pf) = evaluate_fe_function(fine_mesh, fine_dm, &fine.u, &fine.p, pt)?;
            let du = [uc[0] - uf[0], uc[1] - uf[1]];
            l2_u += w * (du[0] * du[0] + du[1] * du[1]);
            let mut eps2 = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    let e = 0.5 * (gc[i][j] + gc[j][i]) - 0.5 * (gf[i][j] + gf[j][i]);
                    eps2 += e * e;
                }
            }
            v_u += w * eps2;
            l2_p += w * (pc - pf) * (pc - pf);
        }
    }
    Ok(ErrorNorms {
        l2_u: l2_u.sqrt(),
        v_u: v_u.sqrt(),
        l2_p: l2_p.sqrt(),
    })
}

/// One solved grid of a study.
pub struct GridSolution {
    pub mesh: TriMesh,
    pub dm: DofMap,
    pub state: DiscreteState,
    pub report: IterationReport,
}

/// Solves one case on one grid with the case's Uzawa step.
pub fn solve_on_grid(
    case: &ManufacturedCase,
    n: usize,
    solver_cfg: &SolverConfig,
    opts: &AssemblyOptions,
) -> Result<GridSolution, CbfedError> {
    let mesh = TriMesh::unit_square(n)?;
    let dm = build_dofmap(&mesh);
    let cfg = SolverConfig {
        eta: case.eta,
        ..*solver_cfg
    };
    let forcing = |p: [f64; 2]| case.forcing(p);
    let (state, report) = solve_cbfed(&mesh, &dm, &case.params, &cfg, &forcing, opts)
        .map_err(|(e, _)| e)?;
    Ok(GridSolution {
        mesh,
        dm,
        state,
        report,
    })
}

/// One row of a convergence table; orders populated from the second row on,
/// with NaN marking a degenerate (zero-error) ratio.
#[derive(Clone, Copy, Debug)]
pub struct ConvergenceRow {
    pub grid: usize,
    pub e_l2_u: f64,
    pub ord_l2_u: Option<f64>,
    pub e_v_u: f64,
    pub ord_v_u: Option<f64>,
    pub e_l2_p: f64,
    pub ord_l2_p: Option<f64>,
}

fn observed_order(e1: f64, e2: f64, n1: usize, n2: usize) -> f64 {
    if e1 <= 0.0 || e2 <= 0.0 {
        return f64::NAN;
    }
    // h = 1/N, so log(h1/h2) = log(n2/n1)
    (e1 / e2).ln() / (n2 as f64 / n1 as f64).ln()
}

pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    pub reports: Vec<IterationReport>,
    pub reference_report: IterationReport,
}

/// Runs the full study: reference solve, one solve per grid, error rows.
/// Iteration caps are enforced on every solve.
pub fn convergence_table(
    case: &ManufacturedCase,
    solver_cfg: &SolverConfig,
    opts: &AssemblyOptions,
) -> Result<ConvergenceStudy, CbfedError> {
    if case.grids.is_empty() {
        return Err(CbfedError::InvalidInput("empty grid list".into()));
    }
    if !case.grids.windows(2).all(|w| w[0] < w[1]) {
        return Err(CbfedError::InvalidInput("grids must be strictly ascending".into()));
    }
    let n_max = *case.grids.last().unwrap();
    if case.n_ref < n_max {
        return Err(CbfedError::InvalidInput(format!(
            "reference grid {} must be at least the largest study grid {n_max}",
            case.n_ref
        )));
    }

    let reference = solve_on_grid(case, case.n_ref, solver_cfg, opts)?;
    check_iteration_contract(&reference.report, solver_cfg)?;

    let mut rows: Vec<ConvergenceRow> = Vec::new();
    let mut reports = Vec::new();
    for &n in &case.grids {
        let sol = solve_on_grid(case, n, solver_cfg, opts)?;
        check_iteration_contract(&sol.report, solver_cfg)?;
        let e = error_norms(
            &sol.mesh,
            &sol.dm,
            &sol.state,
            &reference.mesh,
            &reference.dm,
            &reference.state,
        )?;
        let prev = rows.last().copied();
        let orders = prev.map(|p| {
            (
                observed_order(p.e_l2_u, e.l2_u, p.grid, n),
                observed_order(p.e_v_u, e.v_u, p.grid, n),
                observed_order(p.e_l2_p, e.l2_p, p.grid, n),
            )
        });
        rows.push(ConvergenceRow {
            grid: n,
            e_l2_u: e.l2_u,
            ord_l2_u: orders.map(|o| o.0),
            e_v_u: e.v_u,
            ord_v_u: orders.map(|o| o.1),
            e_l2_p: e.l2_p,
            ord_l2_p: orders.map(|o| o.2),
        });
        reports.push(sol.report);
    }
    Ok(ConvergenceStudy {
        rows,
        reports,
        reference_report: reference.report,
    })
}

/// Fixed scientific formatting with 4 significant digits, `x.xxxe-yy`.
pub fn format_sci(v: f64) -> String {
    if v == 0.0 {
        return "0.000e+00".to_string();
    }
    let s = format!("{:.3e}", v);
    let (m, e) = s.split_once('e').unwrap();
    let (sign, digits) = match e.strip_prefix('-') {
        Some(d) => ('-', d),
        None => ('+', e),
    };
    format!("{m}e{sign}{digits:0>2}")
}

fn format_order(o: Option<f64>) -> String {
    match o {
        None => String::new(),
        Some(v) if v.is_nan() => "nan".to_string(),
        Some(v) => format!("{v:.2}"),
    }
}

/// Writes the convergence table as CSV.
pub fn write_csv<W: Write>(rows: &[ConvergenceRow], w: &mut W) -> io::Result<()> {
    writeln!(w, "grid,e_l2_u,ord_l2_u,e_V_u,ord_V_u,e_l2_p,ord_l2_p")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.grid,
            format_sci(r.e_l2_u),
            format_order(r.ord_l2_u),
            format_sci(r.e_v_u),
            format_order(r.ord_v_u),
            format_sci(r.e_l2_p),
            format_order(r.ord_l2_p),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cases() -> Vec<ManufacturedCase> {
        vec![
            ManufacturedCase::preset(CaseId::Ex1),
            ManufacturedCase::preset(CaseId::Ex2),
            ManufacturedCase::preset(CaseId::Ex3),
        ]
    }

    #[test]
    fn velocity_is_divergence_free_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for case in cases() {
            for _ in 0..1000 {
                let pt = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
                let g = case.velocity_gradient(pt);
                assert!(
                    (g[0][0] + g[1][1]).abs() <= 1e-12,
                    "{}: div = {} at {:?}",
                    case.id.name(),
                    g[0][0] + g[1][1],
                    pt
                );
            }
        }
    }

    #[test]
    fn normal_component_vanishes_on_the_whole_boundary() {
        for case in cases() {
            for k in 0..=200 {
                let t = k as f64 / 200.0;
                assert!(case.velocity([t, 0.0])[1].abs() <= 1e-12); // bottom
                assert!(case.velocity([t, 1.0])[1].abs() <= 1e-12); // top
                assert!(case.velocity([0.0, t])[0].abs() <= 1e-12); // left
                assert!(case.velocity([1.0, t])[0].abs() <= 1e-12); // right
            }
        }
    }

    #[test]
    fn ex2_velocity_vanishes_on_the_no_slip_boundary() {
        let case = ManufacturedCase::preset(CaseId::Ex2);
        for k in 0..=200 {
            let t = k as f64 / 200.0;
            for pt in [[t, 0.0], [0.0, t], [1.0, t]] {
                let u = case.velocity(pt);
                assert!(u[0].abs() <= 1e-12 && u[1].abs() <= 1e-12, "u({pt:?}) = {u:?}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = 1e-6;
        for case in cases() {
            for _ in 0..200 {
                let [x, y] = [rng.gen_range(0.01..0.99), rng.gen_range(0.01..0.99)];
                let g = case.velocity_gradient([x, y]);
                for a in 0..2 {
                    let dx = (case.velocity([x + h, y])[a] - case.velocity([x - h, y])[a]) / (2.0 * h);
                    let dy = (case.velocity([x, y + h])[a] - case.velocity([x, y - h])[a]) / (2.0 * h);
                    assert!((g[a][0] - dx).abs() <= 1e-6 * (1.0 + dx.abs()));
                    assert!((g[a][1] - dy).abs() <= 1e-6 * (1.0 + dy.abs()));
                }
                let gp = case.pressure_gradient([x, y]);
                let px = (case.pressure([x + h, y]) - case.pressure([x - h, y])) / (2.0 * h);
                let py = (case.pressure([x, y + h]) - case.pressure([x, y - h])) / (2.0 * h);
                assert!((gp[0] - px).abs() <= 1e-5 * (1.0 + px.abs()));
                assert!((gp[1] - py).abs() <= 1e-5 * (1.0 + py.abs()));
            }
        }
    }

    #[test]
    fn forcing_matches_finite_difference_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in cases() {
            for _ in 0..100 {
                let pt = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
                let f = case.forcing(pt);
                let fd = case.finite_difference_forcing(pt, 3e-5);
                let mag = (f[0] * f[0] + f[1] * f[1]).sqrt();
                for a in 0..2 {
                    assert!(
                        (f[a] - fd[a]).abs() <= 1e-6 * (1.0 + mag),
                        "{}: f[{a}] = {} vs fd {} at {pt:?}",
                        case.id.name(),
                        f[a],
                        fd[a]
                    );
                }
            }
        }
    }

    #[test]
    fn forcing_on_zero_velocity_line_reduces_to_stokes_terms() {
        // on x = 0 the Ex1 velocity vanishes identically
        let case = ManufacturedCase::preset(CaseId::Ex1);
        for k in 1..10 {
            let pt = [0.0, k as f64 / 10.0];
            let u = case.velocity(pt);
            assert!(u[0].abs() <= 1e-15 && u[1].abs() <= 1e-15);
            let f = case.forcing(pt);
            let lap = case.velocity_laplacian(pt);
            let gp = case.pressure_gradient(pt);
            for a in 0..2 {
                let expected = -case.params.mu * lap[a] + gp[a];
                assert!((f[a] - expected).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn ex2_pressure_gradient_closed_form() {
        let c = 2.0 * PI;
        let case = ManufacturedCase::preset(CaseId::Ex2);
        let pt = [0.25, 0.25];
        let gp = case.pressure_gradient(pt);
        assert!((gp[0] - c * c * (c * 0.25).sin()).abs() <= 1e-13);
        assert!((gp[1] + c * c * (c * 0.25).sin()).abs() <= 1e-13);
    }

    #[test]
    fn error_norms_of_a_state_against_itself_vanish() {
        let case = ManufacturedCase::preset(CaseId::Ex1);
        let mesh = TriMesh::unit_square(8).unwrap();
        let dm = build_dofmap(&mesh);
        let mut state = DiscreteState {
            u: vec![0.0; dm.n_velocity_dofs],
            p: vec![0.0; dm.n_pressure_dofs],
            lambda: vec![0.0; dm.n_multiplier_dofs],
        };
        // an arbitrary nonzero field
        for (v, vert) in mesh.vertices.iter().enumerate() {
            let u = case.velocity(*vert);
            state.u[dm.ux(v)] = u[0];
            state.u[dm.uy(v)] = u[1];
            state.p[v] = case.pressure(*vert);
        }
        let e = error_norms(&mesh, &dm, &state, &mesh, &dm, &state).unwrap();
        assert!(e.l2_u <= 1e-12 && e.v_u <= 1e-12 && e.l2_p <= 1e-12);
    }

    #[test]
    fn interpolation_errors_decrease_with_refinement() {
        let case = ManufacturedCase::preset(CaseId::Ex2);
        let fine_mesh = TriMesh::unit_square(64).unwrap();
        let fine_dm = build_dofmap(&fine_mesh);
        let interpolate = |mesh: &TriMesh, dm: &DofMap| {
            let mut s = DiscreteState {
                u: vec![0.0; dm.n_velocity_dofs],
                p: vec![0.0; dm.n_pressure_dofs],
                lambda: vec![0.0; dm.n_multiplier_dofs],
            };
            for (v, vert) in mesh.vertices.iter().enumerate() {
                let u = case.velocity(*vert);
                s.u[dm.ux(v)] = u[0];
                s.u[dm.uy(v)] = u[1];
                s.p[v] = case.pressure(*vert);
            }
            s
        };
        let reference = interpolate(&fine_mesh, &fine_dm);
        let mut prev: Option<ErrorNorms> = None;
        for n in [4, 8, 16] {
            let mesh = TriMesh::unit_square(n).unwrap();
            let dm = build_dofmap(&mesh);
            let state = interpolate(&mesh, &dm);
            let e = error_norms(&mesh, &dm, &state, &fine_mesh, &fine_dm, &reference).unwrap();
            assert!(e.l2_u > 0.0);
            if let Some(p) = prev {
                assert!(e.l2_u < p.l2_u);
                assert!(e.v_u < p.v_u);
            }
            prev = Some(e);
        }
    }

    #[test]
    fn error_norms_reject_coarser_reference() {
        let coarse = TriMesh::unit_square(8).unwrap();
        let fine = TriMesh::unit_square(4).unwrap();
        let cdm = build_dofmap(&coarse);
        let fdm = build_dofmap(&fine);
        let mk = |dm: &DofMap| DiscreteState {
            u: vec![0.0; dm.n_velocity_dofs],
            p: vec![0.0; dm.n_pressure_dofs],
            lambda: vec![0.0; dm.n_multiplier_dofs],
        };
        assert!(error_norms(&coarse, &cdm, &mk(&cdm), &fine, &fdm, &mk(&fdm)).is_err());
    }

    #[test]
    fn observed_order_definition() {
        assert!((observed_order(1.0, 0.5, 10, 20) - 1.0).abs() <= 1e-14);
        assert!((observed_order(1.0, 0.25, 10, 20) - 2.0).abs() <= 1e-14);
        assert!(observed_order(0.0, 0.0, 10, 20).is_nan());
    }

    #[test]
    fn sci_format_matches_table_style() {
        assert_eq!(format_sci(3.778e-3), "3.778e-03");
        assert_eq!(format_sci(1.209e-1), "1.209e-01");
        assert_eq!(format_sci(0.0), "0.000e+00");
        assert_eq!(format_sci(12.5), "1.250e+01");
    }

    #[test]
    fn csv_layout() {
        let rows = vec![
            ConvergenceRow {
                grid: 5,
                e_l2_u: 3.778e-3,
                ord_l2_u: None,
                e_v_u: 1.0e-1,
                ord_v_u: None,
                e_l2_p: 2.0e-2,
                ord_l2_p: None,
            },
            ConvergenceRow {
                grid: 10,
                e_l2_u: 9.445e-4,
                ord_l2_u: Some(2.0),
                e_v_u: 5.0e-2,
                ord_v_u: Some(1.0),
                e_l2_p: 5.0e-3,
                ord_l2_p: Some(2.0),
            },
        ];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "grid,e_l2_u,ord_l2_u,e_V_u,ord_V_u,e_l2_p,ord_l2_p");
        assert_eq!(lines.next().unwrap(), "5,3.778e-03,,1.000e-01,,2.000e-02,");
        assert_eq!(
            lines.next().unwrap(),
            "10,9.445e-04,2.00,5.000e-02,1.00,5.000e-03,2.00"
        );
    }
}
