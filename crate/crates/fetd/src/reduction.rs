//! Algebraic reduction between the full two-dof-per-edge space and the
//! merged one-dof-per-edge space.
//!
//! Three sparse operators tie the spaces together.  The prolongation `P`
//! (full x reduced) embeds the merged space: a kept edge contributes an
//! identity pair, a merged edge sends its single dof to both the tail and
//! the head slot with coefficient one, so the prolonged basis function is
//! the slot sum with constant tangential trace.  The restriction
//! `R = (P^T P)^{-1} P^T` is its pseudo-inverse: `P^T P` is diagonal with
//! entries 2 on merged edges and 1 on kept ones, so `R` averages the two
//! slot values of every merged edge and satisfies `R P = I`.  Their
//! product `Q = P R` is the symmetric projector onto prolonged vectors;
//! on a merged edge it is the 2x2 averaging block with all entries 1/2,
//! elsewhere the identity.
//!
//! The reduced time-stepping engine never forms the reduced mass directly.
//! Because the lumped mass inverse is available in closed form, the
//! operator that drives the reduced update is the congruence
//! `R M^{-1} R^T`, materialised here as a sparse matrix.  Note that this
//! is *not* the inverse of `P^T M P` in general; it is the restriction of
//! the full inverse, which is what the reduced recursion calls for.
//! Stiffness-like bilinear forms restrict by plain congruence `P^T A P`.
//!
//! A structural identity makes the small-matrix update exact rather than
//! approximate: the two slots of an edge have identical curls inside every
//! element, so the curl-curl matrix `K` has pair-equal rows and columns
//! and therefore commutes with the projector, `Q K = K Q = K`.  It
//! follows that `(R M^{-1} R^T)(P^T K P) = R M^{-1} K P` exactly, for any
//! merge set — restricting the operators one at a time loses nothing.
//! The choice of merge set only matters for load compatibility and for
//! how faithfully the modified damping term tracks the physical one.

use crate::assembly::{BlockCholesky, SparseBuilder, SparseMatrix};
use crate::error::Error;
use crate::fem::dofmap::{DofMap, DofVector, Space};
use crate::mesh::Mesh;

/// Prolongation, restriction, and projection between a full and a reduced
/// dof map over the same mesh.
#[derive(Debug, Clone)]
pub struct Reduction {
    /// Prolongation `P`, full rows by reduced columns.
    p: SparseMatrix,
    /// Restriction `R = (P^T P)^{-1} P^T`, reduced rows by full columns.
    r: SparseMatrix,
    /// Projector `Q = P R` on the full space.
    q: SparseMatrix,
}

impl Reduction {
    /// Builds the coupling operators for a full map and a reduced map that
    /// share a mesh.
    pub fn new(mesh: &Mesh, full: &DofMap, reduced: &DofMap) -> Result<Self, Error> {
        if full.space() != Space::Full {
            return Err(Error::Contract(
                "reduction requires a full map as the fine space".into(),
            ));
        }
        if reduced.space() != Space::Reduced {
            return Err(Error::Contract(
                "reduction requires a reduced map as the coarse space".into(),
            ));
        }
        if full.n_edges() != mesh.n_edges() || reduced.n_edges() != mesh.n_edges() {
            return Err(Error::Contract(format!(
                "dof maps cover {} and {} edges but the mesh has {}",
                full.n_edges(),
                reduced.n_edges(),
                mesh.n_edges()
            )));
        }

        let n_full = full.n_dofs();
        let n_red = reduced.n_dofs();
        let mut p = SparseBuilder::new(n_full, n_red);
        let mut r = SparseBuilder::new(n_red, n_full);
        let mut q = SparseBuilder::new(n_full, n_full);

        for e in 0..mesh.n_edges() {
            let (tail_f, head_f) = full.edge_dofs(e);
            let head_f = head_f.expect("full maps carry two dofs per edge");
            let (lo_r, hi_r) = reduced.edge_dofs(e);
            match hi_r {
                None => {
                    // Merged edge: one reduced dof feeds both slots; the
                    // restriction averages them back.
                    p.add(tail_f, lo_r, 1.0);
                    p.add(head_f, lo_r, 1.0);
                    r.add(lo_r, tail_f, 0.5);
                    r.add(lo_r, head_f, 0.5);
                    q.add(tail_f, tail_f, 0.5);
                    q.add(tail_f, head_f, 0.5);
                    q.add(head_f, tail_f, 0.5);
                    q.add(head_f, head_f, 0.5);
                }
                Some(hi_r) => {
                    p.add(tail_f, lo_r, 1.0);
                    p.add(head_f, hi_r, 1.0);
                    r.add(lo_r, tail_f, 1.0);
                    r.add(hi_r, head_f, 1.0);
                    q.add(tail_f, tail_f, 1.0);
                    q.add(head_f, head_f, 1.0);
                }
            }
        }

        Ok(Self {
            p: p.build(),
            r: r.build(),
            q: q.build(),
        })
    }

    /// The prolongation matrix `P`.
    pub fn p(&self) -> &SparseMatrix {
        &self.p
    }

    /// The restriction matrix `R`.
    pub fn r(&self) -> &SparseMatrix {
        &self.r
    }

    /// The projector `Q = P R`.
    pub fn q(&self) -> &SparseMatrix {
        &self.q
    }

    /// Number of dofs in the full space.
    pub fn n_full(&self) -> usize {
        self.p.nrows()
    }

    /// Number of dofs in the reduced space.
    pub fn n_reduced(&self) -> usize {
        self.p.ncols()
    }

    /// Restricts a full vector: `R v`, averaging merged slot pairs.
    pub fn reduce(&self, v: &DofVector) -> Result<DofVector, Error> {
        self.expect(v, Space::Full, "reduce")?;
        Ok(DofVector {
            space: Space::Reduced,
            data: self.r.apply(&v.data),
        })
    }

    /// Prolongs a reduced vector: `P v`, copying merged dofs into both slots.
    pub fn prolong(&self, v: &DofVector) -> Result<DofVector, Error> {
        self.expect(v, Space::Reduced, "prolong")?;
        Ok(DofVector {
            space: Space::Full,
            data: self.p.apply(&v.data),
        })
    }

    /// Projects a full vector onto the prolonged subspace: `Q v`.
    pub fn project(&self, v: &DofVector) -> Result<DofVector, Error> {
        self.expect(v, Space::Full, "project")?;
        Ok(DofVector {
            space: Space::Full,
            data: self.q.apply(&v.data),
        })
    }

    /// Restricts a bilinear form by congruence: `P^T A P`.
    pub fn restrict_matrix(&self, a: &SparseMatrix) -> Result<SparseMatrix, Error> {
        let pt = self.p.transpose();
        pt.matmul(a)?.matmul(&self.p)
    }

    /// Restricts a load functional: `P^T f`, summing merged slot pairs.
    pub fn restrict_load(&self, f: &DofVector) -> Result<DofVector, Error> {
        self.expect(f, Space::Full, "restrict_load")?;
        Ok(DofVector {
            space: Space::Reduced,
            data: self.p.transpose().apply(&f.data),
        })
    }

    fn expect(&self, v: &DofVector, space: Space, what: &str) -> Result<(), Error> {
        let want = match space {
            Space::Full => self.n_full(),
            Space::Reduced => self.n_reduced(),
        };
        if v.space != space || v.len() != want {
            return Err(Error::Contract(format!(
                "{what} expects a {space:?} vector of length {want}, got {:?} of length {}",
                v.space,
                v.len()
            )));
        }
        Ok(())
    }

    /// Materialises the reduced mass inverse `R M^{-1} R^T` from a factored
    /// full mass matrix.  This operator drives the reduced update; it is the
    /// restriction of the full inverse, not the inverse of `P^T M P`.
    pub fn reduced_mass_inverse(&self, mass: &BlockCholesky) -> Result<SparseMatrix, Error> {
        let minv = mass.inverse_csr();
        self.r.matmul(&minv)?.matmul(&self.r.transpose())
    }

    /// Materialises the lifting operator `R M^{-1}` used when a full-space
    /// load must enter the reduced recursion without a compatibility
    /// assumption.
    pub fn lift_operator(&self, mass: &BlockCholesky) -> Result<SparseMatrix, Error> {
        self.r.matmul(&mass.inverse_csr())
    }

    /// Materialises the slot-averaged damping matrix `Q^T A Q` for a full
    /// bilinear form `A`; with the conductivity mass this is the modified
    /// damping term that the reduced scheme can represent exactly.
    pub fn project_matrix(&self, a: &SparseMatrix) -> Result<SparseMatrix, Error> {
        self.q.matmul(a)?.matmul(&self.q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{assemble_lumped_mass, assemble_stiffness, BlockCholesky};
    use crate::fem::dofmap::{DofMap, DofVector};
    use crate::mesh::classify::ReducedEdgeSet;
    use crate::mesh::testmesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A deterministic mixed merge set: every third edge stays split.
    fn mixed_set(mesh: &Mesh) -> ReducedEdgeSet {
        let reduced: Vec<bool> = (0..mesh.n_edges()).map(|e| e % 3 != 0).collect();
        let count = reduced.iter().filter(|r| **r).count();
        ReducedEdgeSet { reduced, count }
    }

    fn setup(mesh: &Mesh) -> (DofMap, DofMap, Reduction) {
        let full = DofMap::full(mesh);
        let reduced = DofMap::reduced(mesh, &mixed_set(mesh));
        let red = Reduction::new(mesh, &full, &reduced).unwrap();
        (full, reduced, red)
    }

    fn random_vector(rng: &mut ChaCha8Rng, space: Space, n: usize) -> DofVector {
        DofVector {
            space,
            data: (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn projector_is_p_times_r_and_idempotent() {
        let mesh = testmesh::unit_square(3);
        let (_, _, red) = setup(&mesh);

        let pr = red.p().matmul(red.r()).unwrap();
        assert!(pr.max_abs_diff(red.q()) < 1e-15);

        let qq = red.q().matmul(red.q()).unwrap();
        assert!(qq.max_abs_diff(red.q()) < 1e-15);

        let qt = red.q().transpose();
        assert!(qt.max_abs_diff(red.q()) < 1e-15);
    }

    #[test]
    fn restriction_is_left_inverse_of_prolongation() {
        let mesh = testmesh::unit_square(3);
        let (_, _, red) = setup(&mesh);

        let rp = red.r().matmul(red.p()).unwrap();
        let mut ident = SparseBuilder::new(red.n_reduced(), red.n_reduced());
        for i in 0..red.n_reduced() {
            ident.add(i, i, 1.0);
        }
        assert!(rp.max_abs_diff(&ident.build()) < 1e-15);
    }

    #[test]
    fn normal_matrix_is_diagonal_with_merge_multiplicities() {
        let mesh = testmesh::unit_square(2);
        let set = mixed_set(&mesh);
        let full = DofMap::full(&mesh);
        let reduced = DofMap::reduced(&mesh, &set);
        let red = Reduction::new(&mesh, &full, &reduced).unwrap();

        let ptp = red.p().transpose().matmul(red.p()).unwrap();
        for e in 0..mesh.n_edges() {
            let (lo, hi) = reduced.edge_dofs(e);
            let expect = if hi.is_none() { 2.0 } else { 1.0 };
            let row: Vec<(usize, f64)> = ptp.row(lo).collect();
            assert_eq!(row, vec![(lo, expect)]);
        }
    }

    #[test]
    fn vector_transfer_round_trips_through_the_projector() {
        let mesh = testmesh::unit_square(3);
        let (_, _, red) = setup(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(21);

        let v = random_vector(&mut rng, Space::Full, red.n_full());
        let cycled = red.prolong(&red.reduce(&v).unwrap()).unwrap();
        let projected = red.project(&v).unwrap();
        for (a, b) in cycled.data.iter().zip(&projected.data) {
            assert!((a - b).abs() < 1e-15);
        }

        let w = random_vector(&mut rng, Space::Reduced, red.n_reduced());
        let back = red.reduce(&red.prolong(&w).unwrap()).unwrap();
        for (a, b) in back.data.iter().zip(&w.data) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn space_mismatches_are_rejected() {
        let mesh = testmesh::unit_square(2);
        let (_, reduced_map, red) = setup(&mesh);
        let wrong = DofVector::zeros(&reduced_map);
        assert!(red.reduce(&wrong).is_err());
        assert!(red.project(&wrong).is_err());
        let also_wrong = DofVector {
            space: Space::Full,
            data: vec![0.0; 3],
        };
        assert!(red.restrict_load(&also_wrong).is_err());
    }

    #[test]
    fn curl_matrix_commutes_with_the_projector() {
        // Both slots of an edge carry the same curl inside every element, so
        // the curl-curl matrix has pair-equal rows and columns and the
        // averaging projector leaves it untouched.
        let mesh = testmesh::unit_square(3);
        let (full, _, red) = setup(&mesh);
        let weights = vec![1.0; mesh.n_triangles()];
        let k = assemble_stiffness(&mesh, &full, &weights).unwrap();

        let qk = red.q().matmul(&k).unwrap();
        assert!(qk.max_abs_diff(&k) < 1e-13);
        let kq = k.matmul(red.q()).unwrap();
        assert!(kq.max_abs_diff(&k) < 1e-13);
    }

    #[test]
    fn congruence_restriction_matches_direct_reduced_assembly() {
        let mesh = testmesh::unit_square(3);
        let (full, reduced_map, red) = setup(&mesh);
        let weights: Vec<f64> = (0..mesh.n_triangles())
            .map(|t| 1.0 + 0.05 * t as f64)
            .collect();

        let k_full = assemble_stiffness(&mesh, &full, &weights).unwrap();
        let k_congruence = red.restrict_matrix(&k_full).unwrap();
        let k_direct = assemble_stiffness(&mesh, &reduced_map, &weights).unwrap();
        assert!(k_congruence.max_abs_diff(&k_direct) < 1e-12);
    }

    #[test]
    fn reduced_update_operator_matches_the_lifted_one() {
        // (R M^{-1} R^T)(P^T K P) must agree with R M^{-1} K P exactly; this
        // is the identity that lets the reduced engine work with small
        // matrices only.
        let mesh = testmesh::unit_square(3);
        let (full, _, red) = setup(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(33);

        let eps: Vec<f64> = (0..mesh.n_triangles())
            .map(|t| 1.0 + 0.3 * (t % 4) as f64)
            .collect();
        let ones = vec![1.0; mesh.n_triangles()];
        let mass = assemble_lumped_mass(&mesh, &full, &eps).unwrap();
        let chol = BlockCholesky::new(&mass).unwrap();
        let k = assemble_stiffness(&mesh, &full, &ones).unwrap();

        let minv_red = red.reduced_mass_inverse(&chol).unwrap();
        let k_red = red.restrict_matrix(&k).unwrap();
        let lift = red.lift_operator(&chol).unwrap();

        for _ in 0..5 {
            let v = random_vector(&mut rng, Space::Reduced, red.n_reduced());
            let small = minv_red.apply(&k_red.apply(&v.data));
            let lifted = lift.apply(&k.apply(&red.prolong(&v).unwrap().data));
            let scale = small.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
            for (a, b) in small.iter().zip(&lifted) {
                assert!((a - b).abs() < 1e-12 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn reduced_mass_inverse_is_spd_but_not_a_matrix_inverse() {
        let mesh = testmesh::two_triangles();
        let (full, _, red) = setup(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(5);

        let eps = vec![1.0, 2.5];
        let mass = assemble_lumped_mass(&mesh, &full, &eps).unwrap();
        let chol = BlockCholesky::new(&mass).unwrap();
        let minv_red = red.reduced_mass_inverse(&chol).unwrap();

        let sym = minv_red.transpose();
        assert!(sym.max_abs_diff(&minv_red) < 1e-14);
        for _ in 0..5 {
            let v = random_vector(&mut rng, Space::Reduced, red.n_reduced());
            assert!(minv_red.quadratic(&v.data, &v.data) > 0.0);
        }

        // With unequal anchor masses the congruence R M^{-1} R^T genuinely
        // differs from (P^T M P)^{-1}: their product is not the identity.
        let m_csr = mass.to_csr();
        let m_red = red.restrict_matrix(&m_csr).unwrap();
        let product = m_red.matmul(&minv_red).unwrap();
        let mut ident = SparseBuilder::new(red.n_reduced(), red.n_reduced());
        for i in 0..red.n_reduced() {
            ident.add(i, i, 1.0);
        }
        assert!(product.max_abs_diff(&ident.build()) > 1e-3);
    }

    #[test]
    fn mismatched_maps_are_rejected() {
        let mesh = testmesh::unit_square(2);
        let full = DofMap::full(&mesh);
        let set = ReducedEdgeSet::none(&mesh);
        let reduced = DofMap::reduced(&mesh, &set);
        assert!(Reduction::new(&mesh, &reduced, &full).is_err());
        assert!(Reduction::new(&mesh, &full, &full).is_err());

        let other = testmesh::one_triangle();
        let other_reduced = DofMap::reduced(&other, &ReducedEdgeSet::none(&other));
        assert!(Reduction::new(&mesh, &full, &other_reduced).is_err());
    }
}
