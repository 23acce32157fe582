//! Structured triangular meshes of the unit square with boundary tagging.
//!
//! The boundary is partitioned into a Dirichlet part `Gamma0` (bottom, left
//! and right sides) and a slip part `Gamma1` (the top side `y = 1`). Each
//! grid cell is split along the diagonal from its lower-left to its
//! upper-right corner, so meshes are deterministic across runs.

use std::collections::BTreeSet;
use std::io::{self, Write};

use crate::CbfedError;

/// Boundary classification of an edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryTag {
    /// Homogeneous Dirichlet part of the boundary.
    Gamma0,
    /// Slip part of the boundary (top side in the experiments).
    Gamma1,
}

/// A conforming triangulation of the unit square.
#[derive(Clone, Debug)]
pub struct TriMesh {
    /// Vertex coordinates `(x, y)`.
    pub vertices: Vec<[f64; 2]>,
    /// Vertex indices of each triangle, counterclockwise.
    pub triangles: Vec<[usize; 3]>,
    /// Boundary edges `(v0, v1, tag)`; each appears in exactly one triangle.
    pub boundary_edges: Vec<(usize, usize, BoundaryTag)>,
    /// Mesh parameter, `1/n` for an `n x n` grid.
    pub h: f64,
    /// Grid size used by the structured point-location fast path.
    pub n: usize,
}

impl TriMesh {
    /// Builds the structured `n x n` triangulation of `(0,1)^2`.
    ///
    /// Vertex `(i, j)` sits at `(i/n, j/n)`; the top side `y = 1` is tagged
    /// `Gamma1`, the remaining three sides `Gamma0`.
    pub fn unit_square(n: usize) -> Result<TriMesh, CbfedError> {
        if n == 0 {
            return Err(CbfedError::InvalidInput("grid size must be at least 1".into()));
        }
        let nv = (n + 1) * (n + 1);
        let mut vertices = Vec::with_capacity(nv);
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64 / n as f64, j as f64 / n as f64]);
            }
        }
        let vid = |i: usize, j: usize| j * (n + 1) + i;

        let mut triangles = Vec::with_capacity(2 * n * n);
        for j in 0..n {
            for i in 0..n {
                let v00 = vid(i, j);
                let v10 = vid(i + 1, j);
                let v01 = vid(i, j + 1);
                let v11 = vid(i + 1, j + 1);
                // diagonal v00 -> v11
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            }
        }

        let mut boundary_edges = Vec::with_capacity(4 * n);
        for i in 0..n {
            boundary_edges.push((vid(i, 0), vid(i + 1, 0), BoundaryTag::Gamma0));
            boundary_edges.push((vid(i, n), vid(i + 1, n), BoundaryTag::Gamma1));
        }
        for j in 0..n {
            boundary_edges.push((vid(0, j), vid(0, j + 1), BoundaryTag::Gamma0));
            boundary_edges.push((vid(n, j), vid(n, j + 1), BoundaryTag::Gamma0));
        }

        Ok(TriMesh {
            vertices,
            triangles,
            boundary_edges,
            h: 1.0 / n as f64,
            n,
        })
    }

    /// Signed area of triangle `t` (positive for counterclockwise ordering).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let pa = self.vertices[a];
        let pb = self.vertices[b];
        let pc = self.vertices[c];
        0.5 * ((pb[0] - pa[0]) * (pc[1] - pa[1]) - (pc[0] - pa[0]) * (pb[1] - pa[1]))
    }

    /// Vertices incident to at least one boundary edge carrying `tag`.
    ///
    /// A corner vertex of the slip side belongs to both tag sets.
    pub fn boundary_vertices(&self, tag: BoundaryTag) -> BTreeSet<usize> {
        let mut set = BTreeSet::new();
        for &(v0, v1, t) in &self.boundary_edges {
            if t == tag {
                set.insert(v0);
                set.insert(v1);
            }
        }
        set
    }

    /// Writes the mesh as a plain-text node/element file:
    /// a header line `nv nt nbe`, then vertex lines `x y`, triangle lines
    /// `i j k`, and boundary lines `i j tag`.
    pub fn export_text<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(
            w,
            "{} {} {}",
            self.vertices.len(),
            self.triangles.len(),
            self.boundary_edges.len()
        )?;
        for v in &self.vertices {
            writeln!(w, "{:.17} {:.17}", v[0], v[1])?;
        }
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        for &(v0, v1, tag) in &self.boundary_edges {
            let tag = match tag {
                BoundaryTag::Gamma0 => 0,
                BoundaryTag::Gamma1 => 1,
            };
            writeln!(w, "{} {} {}", v0, v1, tag)?;
        }
        Ok(())
    }
}
