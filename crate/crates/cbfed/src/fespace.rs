//! Degree-of-freedom management and reference-element machinery for the
//! MINI (P1-bubble) velocity space, the P1 pressure space, and the P1 trace
//! space of the slip multiplier on `Gamma1`; triangle and edge quadrature.

use std::collections::BTreeSet;

use crate::mesh::{BoundaryTag, TriMesh};
use crate::CbfedError;

/// Reference gradients of the three P1 shape functions on the unit triangle
/// with vertices (0,0), (1,0), (0,1).
pub const P1_REF_GRADS: [[f64; 2]; 3] = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];

/// A quadrature rule, on the reference triangle (barycentric points,
/// weights summing to 1/2) or on the unit interval (point stored in the
/// second barycentric slot, weights summing to 1).
#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

// 1D Gauss-Legendre nodes/weights on [-1, 1].
const GAUSS_1D: [&[(f64, f64)]; 7] = [
    &[(0.0, 2.0)],
    &[(-0.5773502691896257, 1.0), (0.5773502691896257, 1.0)],
    &[
        (-0.7745966692414834, 0.5555555555555556),
        (0.0, 0.8888888888888889),
        (0.7745966692414834, 0.5555555555555556),
    ],
    &[
        (-0.8611363115940526, 0.3478548451374538),
        (-0.3399810435848563, 0.6521451548625461),
        (0.3399810435848563, 0.6521451548625461),
        (0.8611363115940526, 0.3478548451374538),
    ],
    &[
        (-0.9061798459386640, 0.2369268850561891),
        (-0.5384693101056831, 0.4786286704993665),
        (0.0, 0.5688888888888889),
        (0.5384693101056831, 0.4786286704993665),
        (0.9061798459386640, 0.2369268850561891),
    ],
    &[
        (-0.9324695142031521, 0.1713244923791704),
        (-0.6612093864662645, 0.3607615730481386),
        (-0.2386191860831969, 0.4679139345726910),
        (0.2386191860831969, 0.4679139345726910),
        (0.6612093864662645, 0.3607615730481386),
        (0.9324695142031521, 0.1713244923791704),
    ],
    &[
        (-0.9491079123427585, 0.1294849661688697),
        (-0.7415311855993945, 0.2797053914892766),
        (-0.4058451513773972, 0.3818300505051189),
        (0.0, 0.4179591836734694),
        (0.4058451513773972, 0.3818300505051189),
        (0.7415311855993945, 0.2797053914892766),
        (0.9491079123427585, 0.1294849661688697),
    ],
];

fn push_3perm(points: &mut Vec<[f64; 3]>, weights: &mut Vec<f64>, a: f64, w: f64) {
    let b = 1.0 - 2.0 * a;
    points.push([b, a, a]);
    points.push([a, b, a]);
    points.push([a, a, b]);
    for _ in 0..3 {
        weights.push(w);
    }
}

fn push_6perm(points: &mut Vec<[f64; 3]>, weights: &mut Vec<f64>, a: f64, b: f64, w: f64) {
    let c = 1.0 - a - b;
    for perm in [[a, b, c], [a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
        points.push(perm);
        weights.push(w);
    }
}

/// Symmetric positive-weight rule on the reference triangle with polynomial
/// exactness at least `min_degree` (weights sum to the reference area 1/2).
pub fn triangle_quadrature(min_degree: usize) -> Result<QuadratureRule, CbfedError> {
    if min_degree == 0 || min_degree > 10 {
        return Err(CbfedError::InvalidInput(format!(
            "unsupported triangle quadrature degree {min_degree}"
        )));
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let degree = match min_degree {
        1 => {
            points.push([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
            weights.push(1.0);
            1
        }
        2 => {
            push_3perm(&mut points, &mut weights, 1.0 / 6.0, 1.0 / 3.0);
            2
        }
        3 | 4 => {
            // Dunavant degree 4, six points
            push_3perm(&mut points, &mut weights, 0.445948490915965, 0.223381589678011);
            push_3perm(&mut points, &mut weights, 0.091576213509771, 0.109951743655322);
            4
        }
        5 => {
            // Dunavant degree 5, seven points
            points.push([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
            weights.push(0.225);
            push_3perm(&mut points, &mut weights, 0.470142064105115, 0.132394152788506);
            push_3perm(&mut points, &mut weights, 0.101286507323456, 0.125939180544827);
            5
        }
        6 => {
            // Dunavant degree 6, twelve points
            push_3perm(&mut points, &mut weights, 0.249286745170910, 0.116786275726379);
            push_3perm(&mut points, &mut weights, 0.063089014491502, 0.050844906370207);
            push_6perm(
                &mut points,
                &mut weights,
                0.053145049844816,
                0.310352451033785,
                0.082851075618374,
            );
            6
        }
        _ => {
            // Duffy-mapped Gauss product rule: positive weights, exact for
            // the requested degree, used only above the tabulated range.
            let nu = (min_degree + 2).div_ceil(2).min(7);
            let nv = (min_degree + 1).div_ceil(2).min(7);
            for &(xu, wu) in GAUSS_1D[nu - 1] {
                let u = 0.5 * (xu + 1.0);
                for &(xv, wv) in GAUSS_1D[nv - 1] {
                    let v = 0.5 * (xv + 1.0);
                    let x = u;
                    let y = v * (1.0 - u);
                    points.push([1.0 - x - y, x, y]);
                    weights.push(0.25 * wu * wv * (1.0 - u));
                }
            }
            min_degree
        }
    };
    // normalize to the reference area 1/2
    let scale = if min_degree >= 7 { 1.0 } else { 0.5 };
    for w in &mut weights {
        *w *= scale;
    }
    Ok(QuadratureRule { points, weights, degree })
}

/// Gauss-Legendre rule on `[0, 1]` with exactness at least `min_degree`.
/// The point is stored in the second barycentric slot.
pub fn edge_quadrature(min_degree: usize) -> Result<QuadratureRule, CbfedError> {
    let npts = (min_degree + 2) / 2;
    if npts == 0 || npts > 7 {
        return Err(CbfedError::InvalidInput(format!(
            "unsupported edge quadrature degree {min_degree}"
        )));
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for &(x, w) in GAUSS_1D[npts - 1] {
        let t = 0.5 * (x + 1.0);
        points.push([1.0 - t, t, 0.0]);
        weights.push(0.5 * w);
    }
    Ok(QuadratureRule {
        points,
        weights,
        degree: 2 * npts - 1,
    })
}

/// Precomputed values and reference gradients of the local velocity basis
/// (three P1 functions and the cubic bubble `27*l1*l2*l3`) at the points of
/// a triangle quadrature rule.
#[derive(Clone, Debug)]
pub struct ShapeTable {
    pub rule: QuadratureRule,
    /// Per point: `[phi1, phi2, phi3, bubble]`.
    pub values: Vec<[f64; 4]>,
    /// Per point: reference gradients of the same four functions.
    pub ref_grads: Vec<[[f64; 2]; 4]>,
}

/// Bubble value and reference gradient at barycentric coordinates `l`.
pub fn bubble(l: [f64; 3]) -> (f64, [f64; 2]) {
    let value = 27.0 * l[0] * l[1] * l[2];
    let mut grad = [0.0; 2];
    for d in 0..2 {
        grad[d] = 27.0
            * (l[1] * l[2] * P1_REF_GRADS[0][d]
                + l[0] * l[2] * P1_REF_GRADS[1][d]
                + l[0] * l[1] * P1_REF_GRADS[2][d]);
    }
    (value, grad)
}

impl ShapeTable {
    pub fn new(rule: QuadratureRule) -> ShapeTable {
        let mut values = Vec::with_capacity(rule.points.len());
        let mut ref_grads = Vec::with_capacity(rule.points.len());
        for &l in &rule.points {
            let (bv, bg) = bubble(l);
            values.push([l[0], l[1], l[2], bv]);
            ref_grads.push([P1_REF_GRADS[0], P1_REF_GRADS[1], P1_REF_GRADS[2], bg]);
        }
        ShapeTable { rule, values, ref_grads }
    }
}

/// Geometry of one triangle needed to map reference quantities.
#[derive(Clone, Copy, Debug)]
pub struct ElementGeometry {
    /// Inverse-transpose of the affine Jacobian, for gradient mapping.
    pub inv_jac_t: [[f64; 2]; 2],
    /// Absolute Jacobian determinant (= 2 * area).
    pub det_jac: f64,
    pub vertices: [[f64; 2]; 3],
}

impl ElementGeometry {
    pub fn new(mesh: &TriMesh, t: usize) -> ElementGeometry {
        let [a, b, c] = mesh.triangles[t];
        let pa = mesh.vertices[a];
        let pb = mesh.vertices[b];
        let pc = mesh.vertices[c];
        let j = [[pb[0] - pa[0], pc[0] - pa[0]], [pb[1] - pa[1], pc[1] - pa[1]]];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        let inv_jac_t = [
            [j[1][1] / det, -j[1][0] / det],
            [-j[0][1] / det, j[0][0] / det],
        ];
        ElementGeometry {
            inv_jac_t,
            det_jac: det.abs(),
            vertices: [pa, pb, pc],
        }
    }

    /// Physical coordinates of a barycentric point.
    pub fn physical_point(&self, l: [f64; 3]) -> [f64; 2] {
        [
            l[0] * self.vertices[0][0] + l[1] * self.vertices[1][0] + l[2] * self.vertices[2][0],
            l[0] * self.vertices[0][1] + l[1] * self.vertices[1][1] + l[2] * self.vertices[2][1],
        ]
    }

    /// Maps a reference gradient to physical coordinates.
    pub fn physical_grad(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv_jac_t[0][0] * g[0] + self.inv_jac_t[0][1] * g[1],
            self.inv_jac_t[1][0] * g[0] + self.inv_jac_t[1][1] * g[1],
        ]
    }
}

/// Global numbering for the P1b velocity, P1 pressure and slip multiplier
/// unknowns, with the strong constraint table.
///
/// Full velocity dof order: `[x vertex | y vertex | x bubble | y bubble]`;
/// pressure, multiplier and the mean-pressure row follow in the global
/// numbering. The compressed system indexing (constrained dofs and
/// multiplier dofs removed) is kept alongside.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub n_vertices: usize,
    pub n_triangles: usize,
    pub n_velocity_dofs: usize,
    pub n_pressure_dofs: usize,
    pub n_multiplier_dofs: usize,
    /// Prescribed value for each constrained velocity dof (full numbering).
    pub constrained: Vec<Option<f64>>,
    /// Vertex ids carrying a multiplier dof (slip nodes that are not
    /// Dirichlet nodes), in ascending x order.
    pub multiplier_nodes: Vec<usize>,
    /// Full velocity dof -> compressed system column (None if constrained).
    pub sys_of_vdof: Vec<Option<usize>>,
    /// Number of unconstrained velocity dofs.
    pub n_free_velocity: usize,
    /// Total compressed system dimension (free velocity + pressure + mean row).
    pub n_sys: usize,
    /// Index of the mean-pressure constraint row in the compressed system.
    pub mean_constraint_row: usize,
}

impl DofMap {
    pub fn ux(&self, v: usize) -> usize {
        v
    }
    pub fn uy(&self, v: usize) -> usize {
        self.n_vertices + v
    }
    pub fn bx(&self, t: usize) -> usize {
        2 * self.n_vertices + t
    }
    pub fn by(&self, t: usize) -> usize {
        2 * self.n_vertices + self.n_triangles + t
    }
    /// Compressed system index of pressure dof `j`.
    pub fn sys_of_pressure(&self, j: usize) -> usize {
        self.n_free_velocity + j
    }
}

/// Builds the dof map for a mesh: both velocity components constrained at
/// `Gamma0` vertices, the normal (y) component constrained at `Gamma1`
/// vertices, bubbles never constrained, one multiplier dof per slip node
/// that is not also a Dirichlet node.
pub fn build_dofmap(mesh: &TriMesh) -> DofMap {
    let nv = mesh.vertices.len();
    let nt = mesh.triangles.len();
    let n_velocity_dofs = 2 * (nv + nt);

    let gamma0: BTreeSet<usize> = mesh.boundary_vertices(BoundaryTag::Gamma0);
    let gamma1: BTreeSet<usize> = mesh.boundary_vertices(BoundaryTag::Gamma1);

    let mut constrained = vec![None; n_velocity_dofs];
    for &v in &gamma0 {
        constrained[v] = Some(0.0);
        constrained[nv + v] = Some(0.0);
    }
    for &v in &gamma1 {
        constrained[nv + v] = Some(0.0);
    }

    let mut multiplier_nodes: Vec<usize> =
        gamma1.iter().copied().filter(|v| !gamma0.contains(v)).collect();
    multiplier_nodes.sort_by(|&a, &b| {
        mesh.vertices[a][0]
            .partial_cmp(&mesh.vertices[b][0])
            .unwrap()
    });

    let mut sys_of_vdof = vec![None; n_velocity_dofs];
    let mut next = 0;
    for (d, c) in constrained.iter().enumerate() {
        if c.is_none() {
            sys_of_vdof[d] = Some(next);
            next += 1;
        }
    }
    let n_free_velocity = next;
    let n_sys = n_free_velocity + nv + 1;

    DofMap {
        n_vertices: nv,
        n_triangles: nt,
        n_velocity_dofs,
        n_pressure_dofs: nv,
        n_multiplier_dofs: multiplier_nodes.len(),
        constrained,
        multiplier_nodes,
        sys_of_vdof,
        n_free_velocity,
        n_sys,
        mean_constraint_row: n_sys - 1,
    }
}

/// Locates the triangle containing `point` on a structured mesh and returns
/// `(triangle index, barycentric coordinates)`.
pub fn locate(mesh: &TriMesh, point: [f64; 2]) -> Result<(usize, [f64; 3]), CbfedError> {
    let tol = 1e-12;
    let [x, y] = point;
    if !(-tol..=1.0 + tol).contains(&x) || !(-tol..=1.0 + tol).contains(&y) {
        return Err(CbfedError::PointOutsideDomain(x, y));
    }
    let n = mesh.n;
    let xc = x.clamp(0.0, 1.0);
    let yc = y.clamp(0.0, 1.0);
    let i = ((xc * n as f64).floor() as usize).min(n - 1);
    let j = ((yc * n as f64).floor() as usize).min(n - 1);
    let xi = xc * n as f64 - i as f64;
    let eta = yc * n as f64 - j as f64;
    // cells split along the diagonal from lower-left to upper-right
    let t = 2 * (j * n + i) + if eta <= xi { 0 } else { 1 };
    let [a, b, c] = mesh.triangles[t];
    let pa = mesh.vertices[a];
    let pb = mesh.vertices[b];
    let pc = mesh.vertices[c];
    let det = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]);
    let l2 = ((xc - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (yc - pa[1])) / det;
    let l3 = ((pb[0] - pa[0]) * (yc - pa[1]) - (xc - pa[0]) * (pb[1] - pa[1])) / det;
    Ok((t, [1.0 - l2 - l3, l2, l3]))
}

/// Evaluates the P1b velocity and P1 pressure fields at a point.
pub fn evaluate_fe_function(
    mesh: &TriMesh,
    dofmap: &DofMap,
    u: &[f64],
    p: &[f64],
    point: [f64; 2],
) -> Result<([f64; 2], f64), CbfedError> {
    let (t, l) = locate(mesh, point)?;
    let verts = mesh.triangles[t];
    let (bv, _) = bubble(l);
    let mut vel = [0.0; 2];
    for (k, &v) in verts.iter().enumerate() {
        vel[0] += l[k] * u[dofmap.ux(v)];
        vel[1] += l[k] * u[dofmap.uy(v)];
    }
    vel[0] += bv * u[dofmap.bx(t)];
    vel[1] += bv * u[dofmap.by(t)];
    let pressure = verts.iter().enumerate().map(|(k, &v)| l[k] * p[v]).sum();
    Ok((vel, pressure))
}

/// Evaluates the velocity value and its physical gradient `du_i/dx_j`.
pub fn evaluate_velocity_gradient(
    mesh: &TriMesh,
    dofmap: &DofMap,
    u: &[f64],
    point: [f64; 2],
) -> Result<([f64; 2], [[f64; 2]; 2]), CbfedError> {
    let (t, l) = locate(mesh, point)?;
    let geom = ElementGeometry::new(mesh, t);
    let verts = mesh.triangles[t];
    let (bv, bg_ref) = bubble(l);
    let bg = geom.physical_grad(bg_ref);
    let mut vel = [0.0; 2];
    let mut grad = [[0.0; 2]; 2];
    for (k, &v) in verts.iter().enumerate() {
        let g = geom.physical_grad(P1_REF_GRADS[k]);
        let cx = u[dofmap.ux(v)];
        let cy = u[dofmap.uy(v)];
        vel[0] += l[k] * cx;
        vel[1] += l[k] * cy;
        for d in 0..2 {
            grad[0][d] += cx * g[d];
            grad[1][d] += cy * g[d];
        }
    }
    let bxc = u[dofmap.bx(t)];
    let byc = u[dofmap.by(t)];
    vel[0] += bv * bxc;
    vel[1] += bv * byc;
    for d in 0..2 {
        grad[0][d] += bxc * bg[d];
        grad[1][d] += byc * bg[d];
    }
    Ok((vel, grad))
}
