//! Block-diagonal matrices over vertex-anchored dof groups.
//!
//! The vertex-quadrature mass matrix couples two dofs only when their basis
//! functions are anchored at the same vertex (everywhere else at least one of
//! them vanishes at every quadrature point).  Grouping the dofs of each
//! anchor vertex therefore makes the mass matrix block diagonal with one
//! small dense block per vertex, and inverting it means one tiny Cholesky
//! factorisation per vertex.

use crate::error::{Error, Result};
use crate::fem::dofmap::{DofMap, Space};
use crate::mesh::Mesh;

use super::sparse::{SparseBuilder, SparseMatrix};

/// Dof-to-block bookkeeping shared by all block-diagonal matrices on a mesh.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    /// Dofs of each vertex block, ascending.
    pub block_dofs: Vec<Vec<usize>>,
    /// For each dof: `(vertex, position inside the block)`.
    pub dof_slot: Vec<(usize, usize)>,
}

impl BlockLayout {
    /// Groups the dofs of a full-space map by anchor vertex.  Edge `e`
    /// anchors dof `2e` at its lower endpoint and `2e + 1` at its higher one.
    pub fn new(mesh: &Mesh, map: &DofMap) -> Result<Self> {
        if map.space() != Space::Full {
            return Err(Error::Contract(
                "block-diagonal matrices exist only in the full two-per-edge space".into(),
            ));
        }
        let mut block_dofs: Vec<Vec<usize>> = vec![Vec::new(); mesh.n_vertices()];
        for (e, edge) in mesh.edges.iter().enumerate() {
            let (tail, head) = map.edge_dofs(e);
            block_dofs[edge.verts[0]].push(tail);
            block_dofs[edge.verts[1]].push(head.expect("full map has two dofs per edge"));
        }
        let mut dof_slot = vec![(0usize, 0usize); map.n_dofs()];
        for (v, dofs) in block_dofs.iter().enumerate() {
            for (i, &d) in dofs.iter().enumerate() {
                dof_slot[d] = (v, i);
            }
        }
        Ok(Self {
            block_dofs,
            dof_slot,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_slot.len()
    }
}

/// A symmetric block-diagonal matrix over a [`BlockLayout`].
#[derive(Debug, Clone)]
pub struct BlockDiagMatrix {
    layout: BlockLayout,
    /// Dense row-major storage of each vertex block.
    blocks: Vec<Vec<f64>>,
}

impl BlockDiagMatrix {
    pub fn zeros(layout: BlockLayout) -> Self {
        let blocks = layout
            .block_dofs
            .iter()
            .map(|dofs| vec![0.0; dofs.len() * dofs.len()])
            .collect();
        Self { layout, blocks }
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn n_dofs(&self) -> usize {
        self.layout.n_dofs()
    }

    /// Adds `value` at `(row, col)`; both dofs must share an anchor vertex.
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        let (v, i) = self.layout.dof_slot[row];
        let (w, j) = self.layout.dof_slot[col];
        assert_eq!(v, w, "dofs {row} and {col} are anchored at different vertices");
        let m = self.layout.block_dofs[v].len();
        self.blocks[v][i * m + j] += value;
    }

    /// `y = M x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_dofs());
        let mut y = vec![0.0; x.len()];
        for (v, dofs) in self.layout.block_dofs.iter().enumerate() {
            let m = dofs.len();
            let block = &self.blocks[v];
            for i in 0..m {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += block[i * m + j] * x[dofs[j]];
                }
                y[dofs[i]] = acc;
            }
        }
        y
    }

    /// `v^T M w`.
    pub fn quadratic(&self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), self.n_dofs());
        assert_eq!(b.len(), self.n_dofs());
        let mut acc = 0.0;
        for (v, dofs) in self.layout.block_dofs.iter().enumerate() {
            let m = dofs.len();
            let block = &self.blocks[v];
            for i in 0..m {
                let mut row = 0.0;
                for j in 0..m {
                    row += block[i * m + j] * b[dofs[j]];
                }
                acc += a[dofs[i]] * row;
            }
        }
        acc
    }

    /// The same matrix in CSR form (for algebraic products).
    pub fn to_csr(&self) -> SparseMatrix {
        let n = self.n_dofs();
        let mut b = SparseBuilder::new(n, n);
        for (v, dofs) in self.layout.block_dofs.iter().enumerate() {
            let m = dofs.len();
            for i in 0..m {
                for j in 0..m {
                    let x = self.blocks[v][i * m + j];
                    if x != 0.0 {
                        b.add(dofs[i], dofs[j], x);
                    }
                }
            }
        }
        b.build()
    }
}

/// Cholesky factors of a positive definite [`BlockDiagMatrix`].
#[derive(Debug, Clone)]
pub struct BlockCholesky {
    layout: BlockLayout,
    /// Lower-triangular factor of each block, dense row-major.
    factors: Vec<Vec<f64>>,
}

impl BlockCholesky {
    pub fn new(matrix: &BlockDiagMatrix) -> Result<Self> {
        let mut factors = Vec::with_capacity(matrix.blocks.len());
        for (v, dofs) in matrix.layout.block_dofs.iter().enumerate() {
            let m = dofs.len();
            let mut l = matrix.blocks[v].clone();
            cholesky_in_place(&mut l, m).map_err(|pivot| Error::SingularBlock { vertex: v, pivot })?;
            factors.push(l);
        }
        Ok(Self {
            layout: matrix.layout.clone(),
            factors,
        })
    }

    /// `y = M^{-1} x` via forward/backward substitution per block.
    pub fn solve(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.layout.n_dofs());
        let mut y = vec![0.0; x.len()];
        let mut local = Vec::new();
        for (v, dofs) in self.layout.block_dofs.iter().enumerate() {
            local.clear();
            local.extend(dofs.iter().map(|&d| x[d]));
            self.solve_block(v, &mut local);
            for (i, &d) in dofs.iter().enumerate() {
                y[d] = local[i];
            }
        }
        y
    }

    /// In-place forward/backward substitution with block `v`'s factor.
    fn solve_block(&self, v: usize, local: &mut [f64]) {
        let m = local.len();
        let l = &self.factors[v];
        // L z = x
        for i in 0..m {
            let mut acc = local[i];
            for j in 0..i {
                acc -= l[i * m + j] * local[j];
            }
            local[i] = acc / l[i * m + i];
        }
        // L^T y = z
        for i in (0..m).rev() {
            let mut acc = local[i];
            for j in (i + 1)..m {
                acc -= l[j * m + i] * local[j];
            }
            local[i] = acc / l[i * m + i];
        }
    }

    /// `M^{-1}` as an explicit sparse matrix (block diagonal like `M`).
    /// Each block is inverted in place; the cost is cubic in the (small)
    /// block sizes, independent of how many blocks there are.
    pub fn inverse_csr(&self) -> SparseMatrix {
        let n = self.layout.n_dofs();
        let mut b = SparseBuilder::new(n, n);
        let mut local = Vec::new();
        for (v, dofs) in self.layout.block_dofs.iter().enumerate() {
            let m = dofs.len();
            for (jc, &d) in dofs.iter().enumerate() {
                local.clear();
                local.resize(m, 0.0);
                local[jc] = 1.0;
                self.solve_block(v, &mut local);
                for (i, &r) in dofs.iter().enumerate() {
                    if local[i] != 0.0 {
                        b.add(r, d, local[i]);
                    }
                }
            }
        }
        b.build()
    }
}

/// Dense in-place Cholesky of an `m x m` row-major matrix; on failure returns
/// the offending pivot value.
fn cholesky_in_place(a: &mut [f64], m: usize) -> std::result::Result<(), f64> {
    for i in 0..m {
        for j in 0..=i {
            let mut acc = a[i * m + j];
            for k in 0..j {
                acc -= a[i * m + k] * a[j * m + k];
            }
            if i == j {
                if acc <= 0.0 || !acc.is_finite() {
                    return Err(acc);
                }
                a[i * m + i] = acc.sqrt();
            } else {
                a[i * m + j] = acc / a[j * m + j];
            }
        }
        for j in (i + 1)..m {
            a[i * m + j] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::dofmap::DofMap;
    use crate::mesh::testmesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spd_block_matrix(mesh: &Mesh, seed: u64) -> BlockDiagMatrix {
        let map = DofMap::full(mesh);
        let layout = BlockLayout::new(mesh, &map).unwrap();
        let mut m = BlockDiagMatrix::zeros(layout);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Random SPD blocks: A^T A + I on each vertex block.
        for v in 0..mesh.n_vertices() {
            let dofs = m.layout().block_dofs[v].clone();
            let k = dofs.len();
            let a: Vec<f64> = (0..k * k).map(|_| rng.gen::<f64>() - 0.5).collect();
            for i in 0..k {
                for j in 0..k {
                    let mut val = if i == j { 1.0 } else { 0.0 };
                    for r in 0..k {
                        val += a[r * k + i] * a[r * k + j];
                    }
                    m.add(dofs[i], dofs[j], val);
                }
            }
        }
        m
    }

    #[test]
    fn layout_groups_each_edge_once_per_endpoint() {
        let mesh = testmesh::unit_square(2);
        let map = DofMap::full(&mesh);
        let layout = BlockLayout::new(&mesh, &map).unwrap();
        let total: usize = layout.block_dofs.iter().map(Vec::len).sum();
        assert_eq!(total, map.n_dofs());
        for (v, dofs) in layout.block_dofs.iter().enumerate() {
            // Block size equals the vertex degree in the edge graph.
            let degree = mesh
                .edges
                .iter()
                .filter(|e| e.verts.contains(&v))
                .count();
            assert_eq!(dofs.len(), degree);
            for &d in dofs {
                let e = d / 2;
                assert_eq!(mesh.edges[e].verts[d % 2], v);
            }
        }
    }

    #[test]
    fn solve_inverts_apply() {
        let mesh = testmesh::unit_square(3);
        let m = spd_block_matrix(&mesh, 3);
        let chol = BlockCholesky::new(&m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..m.n_dofs()).map(|_| rng.gen::<f64>() - 0.5).collect();
        let y = chol.solve(&m.apply(&x));
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn quadratic_and_csr_agree_with_apply() {
        let mesh = testmesh::unit_square(2);
        let m = spd_block_matrix(&mesh, 5);
        let csr = m.to_csr();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a: Vec<f64> = (0..m.n_dofs()).map(|_| rng.gen::<f64>() - 0.5).collect();
        let b: Vec<f64> = (0..m.n_dofs()).map(|_| rng.gen::<f64>() - 0.5).collect();
        assert!((m.quadratic(&a, &b) - csr.quadratic(&a, &b)).abs() < 1e-12);
        let (ya, yc) = (m.apply(&a), csr.apply(&a));
        for (p, q) in ya.iter().zip(&yc) {
            assert!((p - q).abs() < 1e-13);
        }
    }

    #[test]
    fn inverse_csr_matches_solve() {
        let mesh = testmesh::two_triangles();
        let m = spd_block_matrix(&mesh, 9);
        let chol = BlockCholesky::new(&m).unwrap();
        let inv = chol.inverse_csr();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x: Vec<f64> = (0..m.n_dofs()).map(|_| rng.gen::<f64>() - 0.5).collect();
        let (a, b) = (chol.solve(&x), inv.apply(&x));
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_block_is_reported_with_its_vertex() {
        let mesh = testmesh::two_triangles();
        let map = DofMap::full(&mesh);
        let layout = BlockLayout::new(&mesh, &map).unwrap();
        // All-zero blocks: the first pivot failure is at vertex 0.
        let m = BlockDiagMatrix::zeros(layout);
        match BlockCholesky::new(&m) {
            Err(Error::SingularBlock { vertex, pivot }) => {
                assert_eq!(vertex, 0);
                assert_eq!(pivot, 0.0);
            }
            other => panic!("expected a singular block, got {other:?}"),
        }
    }
}
