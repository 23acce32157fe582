//! Variational forms of the convective Brinkman-Forchheimer extended Darcy
//! system: element kernels for the bilinear forms, the Newton-linearized
//! convective and damping terms, the slip boundary term, and global assembly
//! into sparse matrices with strong constraint elimination.

use crate::fespace::{
    edge_quadrature, triangle_quadrature, DofMap, ElementGeometry, ShapeTable,
};
use crate::linalg::CsrMatrix;
use crate::mesh::{BoundaryTag, TriMesh};
use crate::CbfedError;

/// Regularization inserted into `|u|^(s-3)` factors when `s < 3`; keeps the
/// Newton matrix finite near `u = 0` and is consistent to this order.
pub const MAGNITUDE_REGULARIZATION: f64 = 1e-10;

/// Slip law `omega(t) = (a - b) exp(-rho t) + b` with `a > b > 0`.
#[derive(Clone, Copy, Debug)]
pub struct FrictionLaw {
    pub a: f64,
    pub b: f64,
    pub rho: f64,
}

impl FrictionLaw {
    pub fn new(a: f64, b: f64, rho: f64) -> Result<FrictionLaw, CbfedError> {
        if !(a > b && b > 0.0 && rho > 0.0) {
            return Err(CbfedError::InvalidInput(format!(
                "friction law requires a > b > 0 and rho > 0, got a={a}, b={b}, rho={rho}"
            )));
        }
        Ok(FrictionLaw { a, b, rho })
    }

    /// Strictly decreasing slip coefficient with range `(b, a]`.
    pub fn omega(&self, t: f64) -> f64 {
        (self.a - self.b) * (-self.rho * t).exp() + self.b
    }
}

/// Physics coefficients of the model.
#[derive(Clone, Copy, Debug)]
pub struct ProblemParams {
    /// Brinkman (viscosity) coefficient, > 0.
    pub mu: f64,
    /// Darcy coefficient, >= 0.
    pub alpha: f64,
    /// Forchheimer coefficient, > 0.
    pub beta: f64,
    /// Pumping coefficient, <= 0.
    pub kappa: f64,
    /// Absorption exponent, >= 1.
    pub r: f64,
    /// Pumping exponent, `1 <= q < r`; ignored when `kappa = 0`.
    pub q: f64,
    pub friction: FrictionLaw,
}

impl ProblemParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mu: f64,
        alpha: f64,
        beta: f64,
        kappa: f64,
        r: f64,
        q: f64,
        friction: FrictionLaw,
    ) -> Result<ProblemParams, CbfedError> {
        if !(mu > 0.0) {
            return Err(CbfedError::InvalidInput(format!("mu must be positive, got {mu}")));
        }
        if !(alpha >= 0.0) {
            return Err(CbfedError::InvalidInput(format!("alpha must be nonnegative, got {alpha}")));
        }
        if !(beta > 0.0) {
            return Err(CbfedError::InvalidInput(format!("beta must be positive, got {beta}")));
        }
        if !(kappa <= 0.0) {
            return Err(CbfedError::InvalidInput(format!("kappa must be nonpositive, got {kappa}")));
        }
        if !(r >= 1.0) {
            return Err(CbfedError::InvalidInput(format!("r must be at least 1, got {r}")));
        }
        if kappa != 0.0 && !(1.0 <= q && q < r) {
            return Err(CbfedError::InvalidInput(format!(
                "pumping exponent requires 1 <= q < r, got q={q}, r={r}"
            )));
        }
        Ok(ProblemParams {
            mu,
            alpha,
            beta,
            kappa,
            r,
            q,
            friction,
        })
    }
}

/// Quadrature degrees used by assembly; one knob, raised for verification runs.
#[derive(Clone, Copy, Debug)]
pub struct AssemblyOptions {
    pub volume_degree: usize,
    pub edge_degree: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            volume_degree: 6,
            edge_degree: 5,
        }
    }
}

/// Local velocity dof ids of a triangle: `[component][phi1, phi2, phi3, bubble]`.
fn local_velocity_dofs(dm: &DofMap, mesh: &TriMesh, t: usize) -> [[usize; 4]; 2] {
    let [v0, v1, v2] = mesh.triangles[t];
    [
        [dm.ux(v0), dm.ux(v1), dm.ux(v2), dm.bx(t)],
        [dm.uy(v0), dm.uy(v1), dm.uy(v2), dm.by(t)],
    ]
}

/// Evaluates value and gradient of a discrete velocity field at a quadrature
/// point from local coefficients.
fn velocity_at_point(
    coeffs: &[f64],
    dofs: &[[usize; 4]; 2],
    n: &[f64; 4],
    g: &[[f64; 2]; 4],
) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut val = [0.0; 2];
    let mut grad = [[0.0; 2]; 2];
    for a in 0..2 {
        for k in 0..4 {
            let c = coeffs[dofs[a][k]];
            val[a] += c * n[k];
            grad[a][0] += c * g[k][0];
            grad[a][1] += c * g[k][1];
        }
    }
    (val, grad)
}

/// Physical shape data at one quadrature point.
fn physical_shapes(table: &ShapeTable, geom: &ElementGeometry, qi: usize) -> ([f64; 4], [[f64; 2]; 4]) {
    let n = table.values[qi];
    let mut g = [[0.0; 2]; 4];
    for k in 0..4 {
        g[k] = geom.physical_grad(table.ref_grads[qi][k]);
    }
    (n, g)
}

/// Assembles `int 2 eps(u):eps(v) dx` over all velocity dofs (no constraints).
pub fn assemble_a(mesh: &TriMesh, dm: &DofMap) -> CsrMatrix {
    let table = ShapeTable::new(triangle_quadrature(6).unwrap());
    let nd = dm.n_velocity_dofs;
    let mut triplets = Vec::new();
    for t in 0..mesh.triangles.len() {
        let geom = ElementGeometry::new(mesh, t);
        let dofs = local_velocity_dofs(dm, mesh, t);
        let mut kloc = [[0.0; 8]; 8];
        for qi in 0..table.rule.points.len() {
            let w = table.rule.weights[qi] * geom.det_jac;
            let (_, g) = physical_shapes(&table, &geom, qi);
            for a in 0..2 {
                for i in 0..4 {
                    for b in 0..2 {
                        for j in 0..4 {
                            let mut v = g[i][b] * g[j][a];
                            if a == b {
                                v += g[i][0] * g[j][0] + g[i][1] * g[j][1];
                            }
                            kloc[a * 4 + i][b * 4 + j] += w * v;
                        }
                    }
                }
            }
        }
        scatter_velocity_block(&mut triplets, &dofs, &kloc);
    }
    CsrMatrix::from_triplets(nd, nd, &triplets)
}

/// Assembles the velocity mass matrix `int u . v dx` (no constraints).
pub fn assemble_a0(mesh: &TriMesh, dm: &DofMap) -> CsrMatrix {
    let table = ShapeTable::new(triangle_quadrature(6).unwrap());
    let nd = dm.n_velocity_dofs;
    let mut triplets = Vec::new();
    for t in 0..mesh.triangles.len() {
        let geom = ElementGeometry::new(mesh, t);
        let dofs = local_velocity_dofs(dm, mesh, t);
        let mut kloc = [[0.0; 8]; 8];
        for qi in 0..table.rule.points.len() {
            let w = table.rule.weights[qi] * geom.det_jac;
            let (n, _) = physical_shapes(&table, &geom, qi);
            for a in 0..2 {
                for i in 0..4 {
                    for j in 0..4 {
                        kloc[a * 4 + i][a * 4 + j] += w * n[i] * n[j];
                    }
                }
            }
        }
        scatter_velocity_block(&mut triplets, &dofs, &kloc);
    }
    CsrMatrix::from_triplets(nd, nd, &triplets)
}

fn scatter_velocity_block(
    triplets: &mut Vec<(usize, usize, f64)>,
    dofs: &[[usize; 4]; 2],
    kloc: &[[f64; 8]; 8],
) {
    for a in 0..2 {
        for i in 0..4 {
            for b in 0..2 {
                for j in 0..4 {
                    let v = kloc[a * 4 + i][b * 4 + j];
                    if v != 0.0 {
                        triplets.push((dofs[a][i], dofs[b][j], v));
                    }
                }
            }
        }
    }
}

/// Assembles the velocity-pressure coupling `d(v, q) = -int q div v dx` with
/// pressure rows and velocity columns (no constraints).
pub fn assemble_d(mesh: &TriMesh, dm: &DofMap) -> CsrMatrix {
    let table = ShapeTable::new(triangle_quadrature(6).unwrap());
    let mut triplets = Vec::new();
    for t in 0..mesh.triangles.len() {
        let geom = ElementGeometry::new(mesh, t);
        let dofs = local_velocity_dofs(dm, mesh, t);
        let verts = mesh.triangles[t];
        for qi in 0..table.rule.points.len() {
            let w = table.rule.weights[qi] * geom.det_jac;
            let (n, g) = physical_shapes(&table, &geom, qi);
            for (k, &pv) in verts.iter().enumerate() {
                for b in 0..2 {
                    for j in 0..4 {
                        triplets.push((pv, dofs[b][j], -w * n[k] * g[j][b]));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(dm.n_pressure_dofs, dm.n_velocity_dofs, &triplets)
}

/// Assembles the pressure mass matrix `int p q dx`.
pub fn assemble_pressure_mass(mesh: &TriMesh, dm: &DofMap) -> CsrMatrix {
    let table = ShapeTable::new(triangle_quadrature(4).unwrap());
    let mut triplets = Vec::new();
    for t in 0..mesh.triangles.len() {
        let geom = ElementGeometry::new(mesh, t);
        let verts = mesh.triangles[t];
        for qi in 0..table.rule.points.len() {
            let w = table.rule.weights[qi] * geom.det_jac;
            let n = table.values[qi];
            for (i, &vi) in verts.iter().enumerate() {
                for (j, &vj) in verts.iter().enumerate() {
                    triplets.push((vi, vj, w * n[i] * n[j]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(dm.n_pressure_dofs, dm.n_pressure_dofs, &triplets)
}

/// Integrals `int psi_j dx` of the pressure basis; the mean-constraint row.
pub fn assemble_pressure_mean(mesh: &TriMesh, dm: &DofMap) -> Vec<f64> {
    let mut m = vec![0.0; dm.n_pressure_dofs];
    for t in 0..mesh.triangles.len() {
        let third = mesh.signed_area(t) / 3.0;
        for &v in &mesh.triangles[t] {
            m[v] += third;
        }
    }
    m
}

/// Newton linearization of the convective term around `u_n`: the matrix maps
/// `w` to `int [(w . grad)u_n + (u_n . grad)w] . v dx`, the right-hand side
/// carries `int (u_n . grad)u_n . v dx`.
pub fn assemble_convection_newton(
    mesh: &TriMesh,
    dm: &DofMap,
    u_n: &[f64],
) -> (CsrMatrix, Vec<f64>) {
    let table = ShapeTable::new(triangle_quadrature(6).unwrap());
    let nd = dm.n_velocity_dofs;
    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; nd];
    for t in 0..mesh.triangles.len() {
        let geom = ElementGeometry::new(mesh, t);
        let dofs = local_velocity_dofs(dm, mesh, t);
        let mut kloc = [[0.0; 8]; 8];
        let mut floc = [0.0; 8];
        for qi in 0..table.rule.points.len() {
            let w = table.rule.weights[qi] * geom.det_jac;
            let (n, g) = physical_shapes(&table, &geom, qi);
            let (uval, ugrad) = velocity_at_point(u_n, &dofs, &n, &g);
            convection_kernel(w, &n, &g, uval, ugrad, &mut kloc, &mut floc);
        }
        scatter_velocity_block(&mut triplets, &dofs, &kloc);
        for a in 0..2 {
            for i in 0..4 {
                rhs[dofs[a][i]] += floc[a * 4 + i];
            }
        }
    }
    (CsrMatrix::from_triplets(nd, nd, &triplets), rhs)
}

fn convection_kernel(
    w: f64,
    n: &[f64; 4],
    g: &[[f64; 2]; 4],
    uval: [f64; 2],
    ugrad: [[f64; 2]; 2],
    kloc: &mut [[f64; 8]; 8],
    floc: &mut [f64; 8],
) {
    for a in 0..2 {
        for i in 0..4 {
            let ni = n[i];
            for b in 0..2 {
                for j in 0..4 {
                    // (w . grad)u_n . v
                    let mut v = n[j] * ugrad[a][b] * ni;
                    // (u_n . grad)w . v
                    if a == b {
                        v += (uval[0] * g[j][0] + uval[1] * g[j][1]) * ni;
                    }
                    kloc[a * 4 + i][b * 4 + j] += w * v;
                }
            }
            // (u_n . grad)u_n . v on the right-hand side
            floc[a * 4 + i] += w * (ugrad[a][0] * uval[0] + ugrad[a][1] * uval[1]) * ni;
        }
    }
}

/// Newton linearization of a damping term `c |u|^(s-1) u` around `u_n`:
/// matrix `w -> int c [ |u_n|^(s-1) w + (s-1)|u_n|^(s-3) (u_n . w) u_n ] . v`,
/// right-hand side `c (s-1) int |u_n|^(s-1) u_n . v`.
pub fn assemble_damping_newton(
    mesh: &TriMesh,
    dm: &DofMap,
    u_n: &[f64],
    c: f64,
    s: f64,
) -> Result<(CsrMatrix, Vec<f64>), CbfedError> {
    if !(s >= 1.0) {
        return Err(CbfedError::InvalidInput(format!(
            "damping exponent must be at least 1, got {s}"
        )));
    }
    let table = ShapeTable::new(triangle_quadrature(6).unwrap());
    let nd = dm.n_velocity_dofs;
    let mut triplets = Vec::new();
    let mut rhs = vec![0.0; nd];
    for t in 0..mesh.triangles.len() {
        let geom = ElementGeometry::new(mesh, t);
        let dofs = local_velocity_dofs(dm, mesh, t);
        let mut kloc = [[0.0; 8]; 8];
        let mut floc = [0.0; 8];
        for qi in 0..table.rule.points.len() {
            let w = table.rule.weights[qi] * geom.det_jac;
            let (n, g) = physical_shapes(&table, &geom, qi);
            let (uval, _) = velocity_at_point(u_n, &dofs, &n, &g);
            damping_kernel(w, &n, uval, c, s, &mut kloc, &mut floc);
        }
        scatter_velocity_block(&mut triplets, &dofs, &kloc);
        for a in 0..2 {
            for i in 0..4 {
                rhs[dofs[a][i]] += floc[a * 4 + i];
            }
        }
    }
    Ok((CsrMatrix::from_triplets(nd, nd, &triplets), rhs))
}

fn damping_kernel(
    w: f64,
    n: &[f64; 4],
    uval: [f64; 2],
    c: f64,
    s: f64,
    kloc: &mut [[f64; 8]; 8],
    floc: &mut [f64; 8],
) {
    let mag2 = uval[0] * uval[0] + uval[1] * uval[1];
    let mag = mag2.sqrt();
    let pow_m1 = mag.powf(s - 1.0);
    // |u|^(s-3) is singular at u = 0 for s < 3; regularized magnitude there
    let pow_m3 = if s < 3.0 {
        (mag2 + MAGNITUDE_REGULARIZATION * MAGNITUDE_REGULARIZATION)
            .sqrt()
            .powf(s - 3.0)
    } else {
        mag.powf(s - 3.0)
    };
    let sm1 = s - 1.0;
    for a in 0..2 {
        for i in 0..4 {
            let ni = n[i];
            for b in 0..2 {
                for j in 0..4 {
                    let mut v = sm1 * pow_m3 * uval[b] * uval[a] * n[j];
                    if a == b {
                        v += pow_m1 * n[j];
                    }
                    kloc[a * 4 + i][b * 4 + j] += w * c * v * ni;
                }
            }
            floc[a * 4 + i] += w * c * sm1 * pow_m1 * uval[a] * ni;
        }
    }
}

/// Slip-term right-hand side `- int_{Gamma1} omega(|u_tau,n|) lambda v_tau dS`
/// over all velocity dofs. `lambda` holds nodal multiplier values in the
/// order of `dm.multiplier_nodes`; corner nodes carry the value zero.
pub fn assemble_slip_rhs(
    mesh: &TriMesh,
    dm: &DofMap,
    friction: &FrictionLaw,
    u_n: &[f64],
    lambda: &[f64],
    edge_degree: usize,
) -> Vec<f64> {
    let rule = edge_quadrature(edge_degree).unwrap();
    let mut lambda_at = vec![0.0; dm.n_vertices];
    for (k, &v) in dm.multiplier_nodes.iter().enumerate() {
        lambda_at[v] = lambda[k];
    }
    let mut rhs = vec![0.0; dm.n_velocity_dofs];
    for &(v0, v1, tag) in &mesh.boundary_edges {
        if tag != BoundaryTag::Gamma1 {
            continue;
        }
        let len = (mesh.vertices[v1][0] - mesh.vertices[v0][0]).abs();
        let (u0, u1) = (u_n[dm.ux(v0)], u_n[dm.ux(v1)]);
        let (l0, l1) = (lambda_at[v0], lambda_at[v1]);
        for (q, l) in rule.points.iter().enumerate() {
            let t = l[1];
            let w = rule.weights[q] * len;
            let utau = (1.0 - t) * u0 + t * u1;
            let lam = (1.0 - t) * l0 + t * l1;
            let coeff = w * friction.omega(utau.abs()) * lam;
            rhs[dm.ux(v0)] -= coeff * (1.0 - t);
            rhs[dm.ux(v1)] -= coeff * t;
        }
    }
    rhs
}

/// The assembled linear system of one Newton/Uzawa step, over the
/// compressed unknowns (free velocity dofs, pressure, mean-constraint row).
pub struct AssembledSystem {
    pub matrix: CsrMatrix,
    /// Full right-hand side, including the slip term for the given multiplier.
    pub rhs: Vec<f64>,
    /// Right-hand side without the slip term (the slip part changes inside
    /// the Uzawa loop while the matrix stays fixed).
    pub rhs_base: Vec<f64>,
}

/// Maps a slip right-hand side to compressed system indexing.
pub fn slip_rhs_system(
    mesh: &TriMesh,
    dm: &DofMap,
    friction: &FrictionLaw,
    u_n: &[f64],
    lambda: &[f64],
    edge_degree: usize,
) -> Vec<f64> {
    let full = assemble_slip_rhs(mesh, dm, friction, u_n, lambda, edge_degree);
    let mut sys = vec![0.0; dm.n_sys];
    for (d, &val) in full.iter().enumerate() {
        if let Some(si) = dm.sys_of_vdof[d] {
            sys[si] += val;
        }
    }
    sys
}

/// Assembles the complete Newton/Uzawa step system:
/// velocity block `mu a + alpha a0 + convection-Newton + damping-Newton(beta, r)
/// [+ damping-Newton(kappa, q)]`, the divergence coupling, the forcing and
/// Newton right-hand sides, and the slip term; constrained dofs eliminated
/// with their prescribed values folded into the right-hand side.
///
/// The pressure gauge is fixed by pinning the first pressure node to zero
/// (a dense zero-mean row would fill the factorization badly); solutions are
/// shifted to the zero-mean representative with [`shift_to_zero_mean`] after
/// extraction. The spare gauge row carries an identity placeholder.
pub fn assemble_system(
    mesh: &TriMesh,
    dm: &DofMap,
    params: &ProblemParams,
    u_n: &[f64],
    lambda: &[f64],
    forcing: &dyn Fn([f64; 2]) -> [f64; 2],
    opts: &AssemblyOptions,
) -> Result<AssembledSystem, CbfedError> {
    if u_n.len() != dm.n_velocity_dofs {
        return Err(CbfedError::DimensionMismatch(format!(
            "state vector has length {}, expected {}",
            u_n.len(),
            dm.n_velocity_dofs
        )));
    }
    if u_n.iter().any(|x| !x.is_finite()) {
        return Err(CbfedError::InvalidInput("iterate contains NaN or Inf".into()));
    }
    let table = ShapeTable::new(triangle_quadrature(opts.volume_degree)?);
    let n_sys = dm.n_sys;
    let mean_row = dm.mean_constraint_row;
    let with_pumping = params.kappa != 0.0;

    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(mesh.triangles.len() * 300);
    let mut rhs_base = vec![0.0; n_sys];

    for t in 0..mesh.triangles.len() {
        let geom = ElementGeometry::new(mesh, t);
        let dofs = local_velocity_dofs(dm, mesh, t);
        let verts = mesh.triangles[t];
        let mut kloc = [[0.0; 8]; 8];
        let mut floc = [0.0; 8];
        let mut dloc = [[0.0; 8]; 3];

        for qi in 0..table.rule.points.len() {
            let w = table.rule.weights[qi] * geom.det_jac;
            let (n, g) = physical_shapes(&table, &geom, qi);
            let (uval, ugrad) = velocity_at_point(u_n, &dofs, &n, &g);

            // viscous + Darcy blocks
            for a in 0..2 {
                for i in 0..4 {
                    for b in 0..2 {
                        for j in 0..4 {
                            let mut v = params.mu * g[i][b] * g[j][a];
                            if a == b {
                                v += params.mu * (g[i][0] * g[j][0] + g[i][1] * g[j][1])
                                    + params.alpha * n[i] * n[j];
                            }
                            kloc[a * 4 + i][b * 4 + j] += w * v;
                        }
                    }
                }
            }
            convection_kernel(w, &n, &g, uval, ugrad, &mut kloc, &mut floc);
            damping_kernel(w, &n, uval, params.beta, params.r, &mut kloc, &mut floc);
            if with_pumping {
                damping_kernel(w, &n, uval, params.kappa, params.q, &mut kloc, &mut floc);
            }

            // forcing
            let pt = geom.physical_point(table.rule.points[qi]);
            let f = forcing(pt);
            for a in 0..2 {
                for i in 0..4 {
                    floc[a * 4 + i] += w * f[a] * n[i];
                }
            }

            // divergence coupling
            for k in 0..3 {
                for b in 0..2 {
                    for j in 0..4 {
                        dloc[k][b * 4 + j] -= w * n[k] * g[j][b];
                    }
                }
            }
        }

        // scatter velocity block and rhs with constraint elimination
        for a in 0..2 {
            for i in 0..4 {
                let row_dof = dofs[a][i];
                let Some(row) = dm.sys_of_vdof[row_dof] else { continue };
                rhs_base[row] += floc[a * 4 + i];
                for b in 0..2 {
                    for j in 0..4 {
                        let col_dof = dofs[b][j];
                        let v = kloc[a * 4 + i][b * 4 + j];
                        match dm.sys_of_vdof[col_dof] {
                            Some(col) => triplets.push((row, col, v)),
                            None => {
                                let g = dm.constrained[col_dof].unwrap_or(0.0);
                                if g != 0.0 {
                                    rhs_base[row] -= v * g;
                                }
                            }
                        }
                    }
                }
            }
        }
        // divergence rows/columns; the pinned pressure node keeps neither
        // (its prescribed value is zero, nothing to fold)
        for (k, &pv) in verts.iter().enumerate() {
            if pv == 0 {
                continue;
            }
            let prow = dm.sys_of_pressure(pv);
            for b in 0..2 {
                for j in 0..4 {
                    let col_dof = dofs[b][j];
                    let v = dloc[k][b * 4 + j];
                    match dm.sys_of_vdof[col_dof] {
                        Some(col) => {
                            triplets.push((prow, col, v));
                            triplets.push((col, prow, v));
                        }
                        None => {
                            let g = dm.constrained[col_dof].unwrap_or(0.0);
                            if g != 0.0 {
                                rhs_base[prow] -= v * g;
                            }
                        }
                    }
                }
            }
        }
    }
    // gauge: pin pressure node 0, identity on the spare row
    triplets.push((dm.sys_of_pressure(0), dm.sys_of_pressure(0), 1.0));
    triplets.push((mean_row, mean_row, 1.0));

    let matrix = CsrMatrix::from_triplets(n_sys, n_sys, &triplets);
    let slip = slip_rhs_system(mesh, dm, &params.friction, u_n, lambda, opts.edge_degree);
    let rhs: Vec<f64> = rhs_base.iter().zip(&slip).map(|(a, b)| a + b).collect();
    Ok(AssembledSystem { matrix, rhs, rhs_base })
}

/// Shifts a pressure vector to the zero-mean representative of its gauge
/// class; `mean` holds the basis integrals from [`assemble_pressure_mean`].
pub fn shift_to_zero_mean(mean: &[f64], p: &mut [f64]) {
    let area: f64 = mean.iter().sum();
    let c: f64 = mean.iter().zip(p.iter()).map(|(m, p)| m * p).sum::<f64>() / area;
    for pi in p.iter_mut() {
        *pi -= c;
    }
}

/// Expands a compressed system solution into full velocity coefficients
/// (prescribed values filled in) and the pressure vector.
pub fn extract_state(dm: &DofMap, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![0.0; dm.n_velocity_dofs];
    for d in 0..dm.n_velocity_dofs {
        u[d] = match dm.sys_of_vdof[d] {
            Some(si) => x[si],
            None => dm.constrained[d].unwrap_or(0.0),
        };
    }
    let p = (0..dm.n_pressure_dofs)
        .map(|j| x[dm.sys_of_pressure(j)])
        .collect();
    (u, p)
}

/// Pointwise slack of the monotonicity inequalities for the damping
/// nonlinearity: returns the slack of
/// `(|x|^(r-1)x - |y|^(r-1)y).(x-y) >= 1/2 (|x|^(r-1) + |y|^(r-1)) |x-y|^2`
/// and of the strong form `>= 2^(1-r) |x-y|^(r+1)`.
pub fn damping_monotonicity_slack(x: [f64; 2], y: [f64; 2], r: f64) -> (f64, f64) {
    let nx = (x[0] * x[0] + x[1] * x[1]).sqrt();
    let ny = (y[0] * y[0] + y[1] * y[1]).sqrt();
    let d = [x[0] - y[0], x[1] - y[1]];
    let nd2 = d[0] * d[0] + d[1] * d[1];
    let lhs = (nx.powf(r - 1.0) * x[0] - ny.powf(r - 1.0) * y[0]) * d[0]
        + (nx.powf(r - 1.0) * x[1] - ny.powf(r - 1.0) * y[1]) * d[1];
    let weak = lhs - 0.5 * (nx.powf(r - 1.0) + ny.powf(r - 1.0)) * nd2;
    let strong = lhs - 2.0f64.powf(1.0 - r) * nd2.sqrt().powf(r + 1.0);
    (weak, strong)
}

/// Discrete inf-sup diagnostic: the smallest nonzero generalized singular
/// value of the divergence coupling between the pressure space (constant
/// mode excluded) and the free velocity space, in the V-norm.
pub fn inf_sup_value(mesh: &TriMesh, dm: &DofMap) -> f64 {
    use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

    let a = assemble_a(mesh, dm);
    let d = assemble_d(mesh, dm);
    let mp = assemble_pressure_mass(mesh, dm);

    let nf = dm.n_free_velocity;
    let np = dm.n_pressure_dofs;

    // V-norm Gram matrix on free dofs: a(u,u) = 2 ||u||_V^2
    let mut a_free = DMatrix::zeros(nf, nf);
    for i in 0..dm.n_velocity_dofs {
        let Some(si) = dm.sys_of_vdof[i] else { continue };
        for k in a.row_offsets[i]..a.row_offsets[i + 1] {
            if let Some(sj) = dm.sys_of_vdof[a.col_indices[k]] {
                a_free[(si, sj)] += 0.5 * a.values[k];
            }
        }
    }
    let mut b_free = DMatrix::zeros(np, nf);
    for i in 0..np {
        for k in d.row_offsets[i]..d.row_offsets[i + 1] {
            if let Some(sj) = dm.sys_of_vdof[d.col_indices[k]] {
                b_free[(i, sj)] += d.values[k];
            }
        }
    }
    let mut mp_dense = DMatrix::zeros(np, np);
    for i in 0..np {
        for k in mp.row_offsets[i]..mp.row_offsets[i + 1] {
            mp_dense[(i, mp.col_indices[k])] = mp.values[k];
        }
    }

    let a_chol = Cholesky::new(a_free).expect("V-norm Gram matrix must be SPD on free dofs");
    // S = B A^{-1} B^T
    let ainv_bt: DMatrix<f64> = a_chol.solve(&b_free.transpose());
    let s: DMatrix<f64> = &b_free * ainv_bt;
    let mp_chol = Cholesky::new(mp_dense).expect("pressure mass matrix must be SPD");
    let l = mp_chol.l();
    let linv_s: DMatrix<f64> = l.solve_lower_triangular(&s).unwrap();
    let linv_s_t: DMatrix<f64> = linv_s.transpose();
    let t: DMatrix<f64> = l.solve_lower_triangular(&linv_s_t).unwrap();
    // symmetrize against roundoff
    let t = 0.5 * (&t + t.transpose());
    let eigen = SymmetricEigen::new(t);
    let mut eigs: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
    eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max = eigs.last().copied().unwrap_or(0.0);
    // drop the constant-pressure zero mode
    let smallest_nonzero = eigs
        .iter()
        .copied()
        .find(|&e| e > 1e-10 * max.max(1.0))
        .unwrap_or(0.0);
    smallest_nonzero.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fespace::build_dofmap;
    use proptest::prelude::*;

    fn setup(n: usize) -> (TriMesh, DofMap) {
        let mesh = TriMesh::unit_square(n).unwrap();
        let dm = build_dofmap(&mesh);
        (mesh, dm)
    }

    /// Nodal interpolant (bubbles zero) of a velocity field.
    fn interpolate(mesh: &TriMesh, dm: &DofMap, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let mut u = vec![0.0; dm.n_velocity_dofs];
        for (v, &vert) in mesh.vertices.iter().enumerate() {
            let val = f(vert);
            u[dm.ux(v)] = val[0];
            u[dm.uy(v)] = val[1];
        }
        u
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn friction_law_values_and_monotonicity() {
        let f = FrictionLaw::new(1.55, 1.53, 8.0).unwrap();
        assert!((f.omega(0.0) - 1.55).abs() <= 1e-15);
        assert!((f.omega(100.0) - 1.53).abs() <= 1e-12);
        let mut prev = f.omega(0.0);
        for k in 1..=20 {
            let cur = f.omega(0.1 * k as f64);
            assert!(cur < prev && cur > 1.53);
            prev = cur;
        }
        assert!(FrictionLaw::new(1.0, 1.0, 1.0).is_err());
        assert!(FrictionLaw::new(2.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn params_validation() {
        let f = FrictionLaw::new(2.0, 1.0, 1.0).unwrap();
        assert!(ProblemParams::new(0.0, 1.0, 1.0, 0.0, 3.0, 1.0, f).is_err());
        assert!(ProblemParams::new(1.0, -1.0, 1.0, 0.0, 3.0, 1.0, f).is_err());
        assert!(ProblemParams::new(1.0, 1.0, 1.0, 0.5, 3.0, 2.0, f).is_err());
        assert!(ProblemParams::new(1.0, 1.0, 1.0, -1.0, 3.0, 3.5, f).is_err());
        assert!(ProblemParams::new(1.0, 1.0, 1.0, -1.0, 3.0, 2.0, f).is_ok());
        // q unchecked when the pumping term is off
        assert!(ProblemParams::new(1.0, 1.0, 1.0, 0.0, 3.0, 9.0, f).is_ok());
    }

    #[test]
    fn strain_energy_vanishes_on_rigid_motions() {
        let (mesh, dm) = setup(4);
        let a = assemble_a(&mesh, &dm);
        for field in [
            |_: [f64; 2]| [1.0, -2.0],
            |p: [f64; 2]| [p[1], -p[0]], // rotation
        ] {
            let u = interpolate(&mesh, &dm, field);
            let au = a.spmv(&u).unwrap();
            assert!(dot(&u, &au).abs() <= 1e-12);
        }
    }

    #[test]
    fn strain_energy_of_linear_stretch() {
        // u = (x, -y): eps = diag(1, -1), 2 eps:eps = 4, integral over (0,1)^2
        let (mesh, dm) = setup(3);
        let a = assemble_a(&mesh, &dm);
        let u = interpolate(&mesh, &dm, |p| [p[0], -p[1]]);
        let au = a.spmv(&u).unwrap();
        assert!((dot(&u, &au) - 4.0).abs() <= 1e-12);
    }

    #[test]
    fn stiffness_and_mass_are_symmetric() {
        use rand::{Rng, SeedableRng};
        let (mesh, dm) = setup(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for m in [assemble_a(&mesh, &dm), assemble_a0(&mesh, &dm)] {
            for _ in 0..5 {
                let x: Vec<f64> = (0..dm.n_velocity_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..dm.n_velocity_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let mx = m.spmv(&x).unwrap();
                let my = m.spmv(&y).unwrap();
                assert!((dot(&y, &mx) - dot(&x, &my)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn mass_matrix_integrates_exactly() {
        let (mesh, dm) = setup(4);
        let m = assemble_a0(&mesh, &dm);
        let u = interpolate(&mesh, &dm, |_| [1.0, 1.0]);
        assert!((dot(&u, &m.spmv(&u).unwrap()) - 2.0).abs() <= 1e-13);
        let u = interpolate(&mesh, &dm, |p| [p[0], 0.0]);
        assert!((dot(&u, &m.spmv(&u).unwrap()) - 1.0 / 3.0).abs() <= 1e-13);
    }

    #[test]
    fn divergence_form_oracles() {
        let (mesh, dm) = setup(4);
        let d = assemble_d(&mesh, &dm);
        // div (x, y) = 2, so with q = 1: d(u, q) = -2
        let u = interpolate(&mesh, &dm, |p| [p[0], p[1]]);
        let du = d.spmv(&u).unwrap();
        assert!((du.iter().sum::<f64>() + 2.0).abs() <= 1e-12);
        // divergence-free linear field gives zero rows exactly
        let u = interpolate(&mesh, &dm, |p| [p[1] + 2.0 * p[0], p[0] - 2.0 * p[1]]);
        for row in d.spmv(&u).unwrap() {
            assert!(row.abs() <= 1e-13);
        }
    }

    #[test]
    fn pressure_mean_row_sums_to_area() {
        let (mesh, dm) = setup(5);
        let m = assemble_pressure_mean(&mesh, &dm);
        assert!((m.iter().sum::<f64>() - 1.0).abs() <= 1e-13);
        // against the mass matrix: m = M_p * 1
        let mp = assemble_pressure_mass(&mesh, &dm);
        let ones = vec![1.0; dm.n_pressure_dofs];
        for (a, b) in m.iter().zip(&mp.spmv(&ones).unwrap()) {
            assert!((a - b).abs() <= 1e-13);
        }
    }

    #[test]
    fn convection_vanishes_for_constant_state() {
        let (mesh, dm) = setup(3);
        let u = interpolate(&mesh, &dm, |_| [0.7, -0.3]);
        let (a, rhs) = assemble_convection_newton(&mesh, &dm, &u);
        // both linearized terms contain a gradient of the constant field
        let au = a.spmv(&u).unwrap();
        for (x, f) in au.iter().zip(&rhs) {
            assert!(x.abs() <= 1e-13 && f.abs() <= 1e-13);
        }
    }

    #[test]
    fn convection_oracle_for_linear_field() {
        // u_n = (y, x): (u_n . grad)u_n = (x, y); tested against v = (1, 1)
        let (mesh, dm) = setup(4);
        let u = interpolate(&mesh, &dm, |p| [p[1], p[0]]);
        let ones = interpolate(&mesh, &dm, |_| [1.0, 1.0]);
        let (a, rhs) = assemble_convection_newton(&mesh, &dm, &u);
        assert!((dot(&ones, &rhs) - 1.0).abs() <= 1e-12);
        // matrix at w = u_n doubles the same integral
        let au = a.spmv(&u).unwrap();
        assert!((dot(&ones, &au) - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn damping_with_unit_exponent_is_scaled_mass() {
        use rand::{Rng, SeedableRng};
        let (mesh, dm) = setup(3);
        let u = interpolate(&mesh, &dm, |p| [p[0] * p[1], -p[1]]);
        let (a, rhs) = assemble_damping_newton(&mesh, &dm, &u, 2.5, 1.0).unwrap();
        assert!(rhs.iter().all(|&x| x.abs() <= 1e-13));
        let m = assemble_a0(&mesh, &dm);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..dm.n_velocity_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for (a, b) in a.spmv(&x).unwrap().iter().zip(&m.spmv(&x).unwrap()) {
            assert!((a - 2.5 * b).abs() <= 1e-10);
        }
    }

    #[test]
    fn damping_oracle_for_constant_state() {
        // u_n = (3, 4), s = 3, c = 2; against v = (1, 1):
        // rhs = c (s-1) |u|^2 int u.v = 2*2*25*7 = 700
        // matrix at w = u_n: int c [25 (u.v) + 2 (u.u)(u.v)] = 2*(175 + 350)
        let (mesh, dm) = setup(3);
        let u = interpolate(&mesh, &dm, |_| [3.0, 4.0]);
        let ones = interpolate(&mesh, &dm, |_| [1.0, 1.0]);
        let (a, rhs) = assemble_damping_newton(&mesh, &dm, &u, 2.0, 3.0).unwrap();
        assert!((dot(&ones, &rhs) - 700.0).abs() <= 1e-9);
        assert!((dot(&ones, &a.spmv(&u).unwrap()) - 1050.0).abs() <= 1e-9);
        assert!(assemble_damping_newton(&mesh, &dm, &u, 1.0, 0.5).is_err());
    }

    #[test]
    fn slip_rhs_zero_multiplier_and_total_force() {
        let (mesh, dm) = setup(5);
        let friction = FrictionLaw::new(1.55, 1.53, 8.0).unwrap();
        let u = vec![0.0; dm.n_velocity_dofs];
        let zero = vec![0.0; dm.n_multiplier_dofs];
        let rhs = assemble_slip_rhs(&mesh, &dm, &friction, &u, &zero, 5);
        assert!(rhs.iter().all(|&x| x == 0.0));

        // lambda = 1 at the interior slip nodes, zero at corners: its
        // interpolant integrates to 1 - h, and omega(0) = a at u = 0
        let one = vec![1.0; dm.n_multiplier_dofs];
        let rhs = assemble_slip_rhs(&mesh, &dm, &friction, &u, &one, 5);
        let total: f64 = rhs.iter().sum();
        assert!((total + 1.55 * (1.0 - mesh.h)).abs() <= 1e-12);
        // only tangential (x) components on the top boundary are loaded
        for (v, &vert) in mesh.vertices.iter().enumerate() {
            if vert[1] < 1.0 {
                assert_eq!(rhs[dm.ux(v)], 0.0);
            }
            assert_eq!(rhs[dm.uy(v)], 0.0);
        }

        let neg: Vec<f64> = one.iter().map(|x| -x).collect();
        let rhs_neg = assemble_slip_rhs(&mesh, &dm, &friction, &u, &neg, 5);
        for (a, b) in rhs.iter().zip(&rhs_neg) {
            assert!((a + b).abs() <= 1e-15);
        }
    }

    #[test]
    fn fused_system_matches_composed_operators() {
        use rand::{Rng, SeedableRng};
        let (mesh, dm) = setup(3);
        let friction = FrictionLaw::new(2.0, 1.0, 3.0).unwrap();
        let params = ProblemParams::new(1.2, 2.0, 1.5, -0.5, 3.0, 2.0, friction).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);

        // linearization point honoring the strong constraints
        let mut u_n = vec![0.0; dm.n_velocity_dofs];
        for d in 0..dm.n_velocity_dofs {
            if dm.sys_of_vdof[d].is_some() {
                u_n[d] = rng.gen_range(-0.5..0.5);
            }
        }
        let lambda: Vec<f64> = (0..dm.n_multiplier_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let opts = AssemblyOptions::default();
        let system =
            assemble_system(&mesh, &dm, &params, &u_n, &lambda, &|_| [0.0, 0.0], &opts).unwrap();

        // random compressed test vector; gauge entries (pinned pressure node,
        // spare row) kept at zero so the identity placeholders drop out
        let mut x = vec![0.0; dm.n_sys];
        for xi in x.iter_mut().take(dm.n_sys - 1) {
            *xi = rng.gen_range(-1.0..1.0);
        }
        x[dm.sys_of_pressure(0)] = 0.0;
        x[dm.mean_constraint_row] = 0.0;
        let y = system.matrix.spmv(&x).unwrap();

        // composed action of the individual operators
        let (zu, zp) = extract_state(&dm, &x);
        let a = assemble_a(&mesh, &dm);
        let a0 = assemble_a0(&mesh, &dm);
        let (conv, conv_rhs) = assemble_convection_newton(&mesh, &dm, &u_n);
        let (dmp_r, dmp_r_rhs) = assemble_damping_newton(&mesh, &dm, &u_n, params.beta, params.r).unwrap();
        let (dmp_q, dmp_q_rhs) = assemble_damping_newton(&mesh, &dm, &u_n, params.kappa, params.q).unwrap();
        let d = assemble_d(&mesh, &dm);
        let mean = assemble_pressure_mean(&mesh, &dm);

        let mut vel = vec![0.0; dm.n_velocity_dofs];
        for (m, scale) in [
            (&a, params.mu),
            (&a0, params.alpha),
            (&conv, 1.0),
            (&dmp_r, 1.0),
            (&dmp_q, 1.0),
        ] {
            for (acc, v) in vel.iter_mut().zip(&m.spmv(&zu).unwrap()) {
                *acc += scale * v;
            }
        }
        // pressure gradient: D^T acting on zp
        for i in 0..dm.n_pressure_dofs {
            for k in d.row_offsets[i]..d.row_offsets[i + 1] {
                vel[d.col_indices[k]] += d.values[k] * zp[i];
            }
        }
        for dof in 0..dm.n_velocity_dofs {
            if let Some(si) = dm.sys_of_vdof[dof] {
                assert!(
                    (y[si] - vel[dof]).abs() <= 1e-10,
                    "velocity row mismatch at {dof}: {} vs {}",
                    y[si],
                    vel[dof]
                );
            }
        }
        let dz = d.spmv(&zu).unwrap();
        for j in 1..dm.n_pressure_dofs {
            assert!((y[dm.sys_of_pressure(j)] - dz[j]).abs() <= 1e-11);
        }
        // gauge rows are identities on zeroed entries
        assert_eq!(y[dm.sys_of_pressure(0)], 0.0);
        assert_eq!(y[dm.mean_constraint_row], 0.0);
        // the zero-mean shift lands on the gauge-fixed representative
        let mut p_shifted = zp.clone();
        shift_to_zero_mean(&mean, &mut p_shifted);
        assert!(dot(&mean, &p_shifted).abs() <= 1e-13);

        // right-hand side: Newton terms plus the slip load
        let slip = slip_rhs_system(&mesh, &dm, &friction, &u_n, &lambda, opts.edge_degree);
        for dof in 0..dm.n_velocity_dofs {
            if let Some(si) = dm.sys_of_vdof[dof] {
                // slip enters rhs, the base carries the Newton volume terms
                assert!((system.rhs[si] - system.rhs_base[si] - slip[si]).abs() <= 1e-14);
                assert!(
                    (system.rhs_base[si] - conv_rhs[dof] - dmp_r_rhs[dof] - dmp_q_rhs[dof]).abs()
                        <= 1e-11
                );
            }
        }
    }

    #[test]
    fn system_dimensions() {
        let (mesh, dm) = setup(2);
        let friction = FrictionLaw::new(2.0, 1.0, 3.0).unwrap();
        let params = ProblemParams::new(1.0, 1.0, 1.0, 0.0, 3.0, 1.0, friction).unwrap();
        let u = vec![0.0; dm.n_velocity_dofs];
        let l = vec![0.0; dm.n_multiplier_dofs];
        let system = assemble_system(
            &mesh, &dm, &params, &u, &l, &|_| [0.0, 0.0], &AssemblyOptions::default(),
        )
        .unwrap();
        assert_eq!(system.matrix.n_rows, dm.n_sys);
        assert_eq!(dm.n_sys, dm.n_free_velocity + dm.n_pressure_dofs + 1);
        assert_eq!(system.rhs.len(), dm.n_sys);
    }

    #[test]
    fn inf_sup_positive_on_small_grid() {
        let (mesh, dm) = setup(4);
        let v = inf_sup_value(&mesh, &dm);
        assert!(v > 0.05, "inf-sup value {v}");
    }

    proptest! {
        #[test]
        fn monotonicity_slacks_nonnegative(
            x0 in -10.0f64..10.0,
            x1 in -10.0f64..10.0,
            y0 in -10.0f64..10.0,
            y1 in -10.0f64..10.0,
            r in 1.0f64..5.0,
        ) {
            let (weak, strong) = damping_monotonicity_slack([x0, x1], [y0, y1], r);
            prop_assert!(weak >= -1e-12);
            prop_assert!(strong >= -1e-12);
        }
    }
}
