//! Explicit leapfrog time integration of the damped curl-curl system.
//!
//! The semi-discrete system `M_eps u'' + M_sigma u' + K u = f + g` is advanced
//! with a three-level scheme that keeps every solve block diagonal:
//!
//! * the second difference is weighted by the lumped mass with per-element
//!   coefficient `eps + tau sigma / 2`, which stays block diagonal per vertex
//!   and is factorised once up front;
//! * the conductivity term uses the *backward* difference
//!   `(E^n - E^{n-1}) / tau` so that no implicit solve appears, weighted by
//!   either the plain lumped conductivity mass or its merged-trace projection
//!   `Q^T M_sigma Q` when a [`Reduction`] is supplied;
//! * the curl-curl term is evaluated at the current level.
//!
//! [`ReducedOperators`] runs the same recursion on the merged edge space.  Its
//! inverse-mass surrogate is the sparse product `R M^{-1} R^T`, which is *not*
//! the inverse of the restricted mass `P^T M P` but is exactly the combination
//! that makes the reduced trajectory the restriction `R E^n` of the full one
//! (the curl matrix commutes with the merge projector, so nothing is lost).
//!
//! [`estimate_tau_max`] certifies the largest stable step: the scheme's energy
//! stays equivalent to kinetic-plus-curl as long as
//! `(tau^2/4) <K v, v> + (tau/2) |<(Q^T M_sigma Q - M_sigma) v, v>|` is at most
//! `(1/2) <M_eps v, v>` for every `v`.  Both signs of the indefinite
//! conductivity gap are checked with shifted power iteration inside a
//! bisection.  Without conductivity the bound collapses to the closed form
//! `sqrt(2 / lambda_max(M_eps^{-1} K))`.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::{
    assemble_lumped_mass, assemble_stiffness, BlockCholesky, BlockDiagMatrix, SparseMatrix,
};
use crate::error::{Error, Result};
use crate::fem::dofmap::{DofMap, DofVector, Space};
use crate::mesh::{MaterialField, Mesh};
use crate::reduction::Reduction;

/// Relative change of the Rayleigh quotient at which power iteration stops.
const POWER_TOL_EXACT: f64 = 1e-10;
/// Looser tolerance used for feasibility checks inside the bisection (the
/// bisection's own resolution dominates the final accuracy there).
const POWER_TOL_FEASIBILITY: f64 = 1e-8;
/// Certificate value at which a feasibility run may exit before converging:
/// far enough above the 1/2 threshold that the witness's own crossing moves
/// the trial step by a useful amount.  Hairline runs below this line keep
/// iterating to convergence so the cuts that settle the search stay exact.
const FEASIBILITY_EXIT: f64 = 0.55;
/// Iteration budget for one power solve.
const POWER_MAX_ITERS: usize = 20_000;
/// Relative width at which the step-bound bisection stops.
const BISECTION_REL_TOL: f64 = 1e-6;

fn validate_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("time step must be positive, got {tau}")));
    }
    Ok(())
}

fn require_full(map: &DofMap, what: &str) -> Result<()> {
    if map.space() != Space::Full {
        return Err(Error::Contract(format!(
            "{what} needs the full two-dofs-per-edge space"
        )));
    }
    Ok(())
}

/// Per-element weights `eps + tau sigma / 2` for the shifted lumped mass.
fn shifted_weights(materials: &MaterialField, tau: f64) -> Vec<f64> {
    materials
        .eps
        .iter()
        .zip(&materials.sigma)
        .map(|(&e, &s)| e + 0.5 * tau * s)
        .collect()
}

/// Frozen operators for leapfrog stepping on the full edge space.
pub struct FullOperators {
    /// Factorised lumped mass with weights `eps + tau sigma / 2`.
    mass_shifted: BlockCholesky,
    /// Conductivity matrix hit by the backward difference: `Q^T M_sigma Q`
    /// under a reduction, plain `M_sigma` otherwise.
    damping: SparseMatrix,
    /// Curl-curl matrix weighted by `nu`.
    stiffness: SparseMatrix,
    tau: f64,
}

impl FullOperators {
    pub fn new(
        mesh: &Mesh,
        map: &DofMap,
        materials: &MaterialField,
        reduction: Option<&Reduction>,
        tau: f64,
    ) -> Result<Self> {
        validate_tau(tau)?;
        require_full(map, "the unreduced leapfrog")?;
        let mass_shifted = BlockCholesky::new(&assemble_lumped_mass(
            mesh,
            map,
            &shifted_weights(materials, tau),
        )?)?;
        let msigma = assemble_lumped_mass(mesh, map, &materials.sigma)?.to_csr();
        let damping = match reduction {
            Some(red) => red.project_matrix(&msigma)?,
            None => msigma,
        };
        let stiffness = assemble_stiffness(mesh, map, &materials.nu)?;
        Ok(Self {
            mass_shifted,
            damping,
            stiffness,
            tau,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_dofs(&self) -> usize {
        self.stiffness.nrows()
    }

    pub fn stiffness(&self) -> &SparseMatrix {
        &self.stiffness
    }

    pub fn damping(&self) -> &SparseMatrix {
        &self.damping
    }

    pub fn mass(&self) -> &BlockCholesky {
        &self.mass_shifted
    }

    /// Advances `state` by one step driven by the load `f^n + g^n` evaluated
    /// at the state's current time.
    pub fn step(&self, state: &mut TimeStepState, load: &DofVector) -> Result<()> {
        check_step_inputs(state, self.tau, self.n_dofs(), load, "load")?;
        let n = self.n_dofs();
        let mut diff = vec![0.0; n];
        for i in 0..n {
            diff[i] = (state.e_curr.data[i] - state.e_prev.data[i]) / self.tau;
        }
        let damp = self.damping.apply(&diff);
        let stiff = self.stiffness.apply(&state.e_curr.data);
        let mut resid = vec![0.0; n];
        for i in 0..n {
            resid[i] = load.data[i] - damp[i] - stiff[i];
        }
        let acc = self.mass_shifted.solve(&resid);
        advance(state, &acc)
    }
}

/// Frozen operators for leapfrog stepping on the merged edge space.
pub struct ReducedOperators {
    /// Sparse inverse-mass surrogate `R M^{-1} R^T` (shifted weights).
    mass_inv: SparseMatrix,
    /// Restricted conductivity mass `P^T M_sigma P`.
    damping: SparseMatrix,
    /// Curl-curl matrix assembled directly on the merged basis (equals
    /// `P^T K P`).
    stiffness: SparseMatrix,
    /// Load lifting `R M^{-1}` for right-hand sides assembled on the full
    /// space.
    lift: SparseMatrix,
    tau: f64,
}

impl ReducedOperators {
    pub fn new(
        mesh: &Mesh,
        full_map: &DofMap,
        reduced_map: &DofMap,
        materials: &MaterialField,
        reduction: &Reduction,
        tau: f64,
    ) -> Result<Self> {
        validate_tau(tau)?;
        require_full(full_map, "building the reduced operators")?;
        if reduced_map.space() != Space::Reduced {
            return Err(Error::Contract(
                "reduced operators need a merged-edge dof map".into(),
            ));
        }
        let mass_shifted = BlockCholesky::new(&assemble_lumped_mass(
            mesh,
            full_map,
            &shifted_weights(materials, tau),
        )?)?;
        let mass_inv = reduction.reduced_mass_inverse(&mass_shifted)?;
        let lift = reduction.lift_operator(&mass_shifted)?;
        let msigma = assemble_lumped_mass(mesh, full_map, &materials.sigma)?.to_csr();
        let damping = reduction.restrict_matrix(&msigma)?;
        let stiffness = assemble_stiffness(mesh, reduced_map, &materials.nu)?;
        Ok(Self {
            mass_inv,
            damping,
            stiffness,
            lift,
            tau,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n_dofs(&self) -> usize {
        self.stiffness.nrows()
    }

    pub fn stiffness(&self) -> &SparseMatrix {
        &self.stiffness
    }

    pub fn damping(&self) -> &SparseMatrix {
        &self.damping
    }

    /// The sparse surrogate `R M^{-1} R^T` applied to directly assembled
    /// reduced loads.
    pub fn mass_inv(&self) -> &SparseMatrix {
        &self.mass_inv
    }

    /// The lifting `R M^{-1}` applied to full-space loads.
    pub fn lift(&self) -> &SparseMatrix {
        &self.lift
    }

    /// Turns a full-space load `f + g` into the acceleration-level right-hand
    /// side expected by [`ReducedOperators::step`].
    pub fn lift_load(&self, load: &DofVector) -> Result<DofVector> {
        if load.space != Space::Full || load.len() != self.lift.ncols() {
            return Err(Error::Contract(format!(
                "lifted load must live on the full space with {} dofs, got {:?} with {}",
                self.lift.ncols(),
                load.space,
                load.len()
            )));
        }
        Ok(DofVector {
            space: Space::Reduced,
            data: self.lift.apply(&load.data),
        })
    }

    /// Turns a load assembled directly on the merged basis into the
    /// acceleration-level right-hand side expected by
    /// [`ReducedOperators::step`].
    pub fn scale_direct_load(&self, load: &DofVector) -> Result<DofVector> {
        if load.space != Space::Reduced || load.len() != self.n_dofs() {
            return Err(Error::Contract(format!(
                "direct load must live on the merged space with {} dofs, got {:?} with {}",
                self.n_dofs(),
                load.space,
                load.len()
            )));
        }
        Ok(DofVector {
            space: Space::Reduced,
            data: self.mass_inv.apply(&load.data),
        })
    }

    /// Advances `state` by one step.  `rhs` must already be at acceleration
    /// level (see [`ReducedOperators::lift_load`] and
    /// [`ReducedOperators::scale_direct_load`]); the conductivity and curl
    /// terms are the only parts passed through the inverse-mass surrogate
    /// here.
    pub fn step(&self, state: &mut TimeStepState, rhs: &DofVector) -> Result<()> {
        check_step_inputs(state, self.tau, self.n_dofs(), rhs, "right-hand side")?;
        let n = self.n_dofs();
        let mut diff = vec![0.0; n];
        for i in 0..n {
            diff[i] = (state.e_curr.data[i] - state.e_prev.data[i]) / self.tau;
        }
        let damp = self.damping.apply(&diff);
        let stiff = self.stiffness.apply(&state.e_curr.data);
        let mut resid = vec![0.0; n];
        for i in 0..n {
            resid[i] = -damp[i] - stiff[i];
        }
        let mut acc = self.mass_inv.apply(&resid);
        for i in 0..n {
            acc[i] += rhs.data[i];
        }
        advance(state, &acc)
    }
}

/// Three-level leapfrog state: the fields at the two most recent steps.
#[derive(Debug, Clone)]
pub struct TimeStepState {
    /// Field at step `n - 1`.
    pub e_prev: DofVector,
    /// Field at step `n` (time `n * tau`).
    pub e_curr: DofVector,
    pub tau: f64,
    /// Step index of `e_curr`.
    pub n: usize,
}

impl TimeStepState {
    /// The canonical quiescent start `E^0 = E^1 = 0` with `e_curr` at step 1.
    pub fn zeros(map: &DofMap, tau: f64) -> Result<Self> {
        validate_tau(tau)?;
        Ok(Self {
            e_prev: DofVector::zeros(map),
            e_curr: DofVector::zeros(map),
            tau,
            n: 1,
        })
    }

    /// Starts from a given pair of consecutive fields, `e_curr` at step `n`.
    pub fn from_pair(e_prev: DofVector, e_curr: DofVector, tau: f64, n: usize) -> Result<Self> {
        validate_tau(tau)?;
        if e_prev.space != e_curr.space || e_prev.len() != e_curr.len() {
            return Err(Error::Contract(format!(
                "state pair must share one space, got {:?}/{} and {:?}/{}",
                e_prev.space,
                e_prev.len(),
                e_curr.space,
                e_curr.len()
            )));
        }
        if n == 0 {
            return Err(Error::Contract("the current field cannot sit at step 0".into()));
        }
        Ok(Self {
            e_prev,
            e_curr,
            tau,
            n,
        })
    }

    /// Time of the current field.
    pub fn t(&self) -> f64 {
        self.n as f64 * self.tau
    }

    /// Swaps the two levels, which reverses the direction of time for the
    /// undamped scheme.
    pub fn reverse(&mut self) {
        std::mem::swap(&mut self.e_prev, &mut self.e_curr);
    }
}

fn check_step_inputs(
    state: &TimeStepState,
    tau: f64,
    n_dofs: usize,
    rhs: &DofVector,
    what: &str,
) -> Result<()> {
    if state.tau != tau {
        return Err(Error::Contract(format!(
            "state carries tau = {} but the operators were built for tau = {tau}",
            state.tau
        )));
    }
    if state.e_curr.len() != n_dofs || state.e_prev.len() != n_dofs {
        return Err(Error::Contract(format!(
            "state has {} dofs but the operators expect {n_dofs}",
            state.e_curr.len()
        )));
    }
    if rhs.space != state.e_curr.space || rhs.len() != n_dofs {
        return Err(Error::Contract(format!(
            "{what} must live on {:?} with {n_dofs} dofs, got {:?} with {}",
            state.e_curr.space,
            rhs.space,
            rhs.len()
        )));
    }
    Ok(())
}

/// `E^{n+1} = 2 E^n - E^{n-1} + tau^2 * acc`, rotating the levels in place.
fn advance(state: &mut TimeStepState, acc: &[f64]) -> Result<()> {
    let tau2 = state.tau * state.tau;
    let step = state.n + 1;
    for i in 0..acc.len() {
        let next = 2.0 * state.e_curr.data[i] - state.e_prev.data[i] + tau2 * acc[i];
        if !next.is_finite() {
            return Err(Error::Diverged {
                step,
                time: step as f64 * state.tau,
                what: format!("dof {i} became {next}"),
            });
        }
        state.e_prev.data[i] = next;
    }
    state.reverse();
    state.n = step;
    Ok(())
}

/// Quadratic forms needed to evaluate the scheme's discrete energy on the
/// full edge space.
pub struct EnergyOperators {
    /// Lumped mass with plain `eps` weights (no `tau sigma / 2` shift).
    mass_eps: BlockDiagMatrix,
    /// Curl-curl matrix weighted by `nu`.
    stiffness: SparseMatrix,
    /// Plain lumped conductivity mass.
    msigma: SparseMatrix,
    /// Conductivity matrix as seen by the scheme (`Q^T M_sigma Q` under a
    /// reduction, else equal to [`EnergyOperators::msigma`]).
    damping_hat: SparseMatrix,
}

/// One evaluation of the discrete energy of a consecutive pair.
#[derive(Debug, Clone, Copy)]
pub struct EnergyReport {
    /// `eps`-weighted kinetic part `<M_eps w, w>`, `w = (u^{n+1} - u^n)/tau`.
    pub kinetic: f64,
    /// Curl part `<K a, a>` at the midpoint `a = (u^n + u^{n+1})/2`.
    pub curl: f64,
    /// Stabilisation correction `-(tau^2/4) <K w, w>`.
    pub corr_curl: f64,
    /// Conductivity correction `-(tau/2)(<Q^T M_sigma Q w, w> - <M_sigma w, w>)`.
    pub corr_sigma: f64,
    /// Sum of the four parts; constant in time for the unforced undamped
    /// scheme and non-increasing with conductivity.
    pub total: f64,
}

impl EnergyOperators {
    pub fn new(
        mesh: &Mesh,
        map: &DofMap,
        materials: &MaterialField,
        reduction: Option<&Reduction>,
    ) -> Result<Self> {
        require_full(map, "the discrete energy")?;
        let mass_eps = assemble_lumped_mass(mesh, map, &materials.eps)?;
        let stiffness = assemble_stiffness(mesh, map, &materials.nu)?;
        let msigma = assemble_lumped_mass(mesh, map, &materials.sigma)?.to_csr();
        let damping_hat = match reduction {
            Some(red) => red.project_matrix(&msigma)?,
            None => msigma.clone(),
        };
        Ok(Self {
            mass_eps,
            stiffness,
            msigma,
            damping_hat,
        })
    }

    /// Discrete energy of the pair `(u^n, u^{n+1})`.
    pub fn energy(&self, u_n: &DofVector, u_np1: &DofVector, tau: f64) -> Result<EnergyReport> {
        validate_tau(tau)?;
        let n = self.mass_eps.n_dofs();
        for (v, what) in [(u_n, "earlier"), (u_np1, "later")] {
            if v.space != Space::Full || v.len() != n {
                return Err(Error::Contract(format!(
                    "{what} field must live on the full space with {n} dofs, got {:?} with {}",
                    v.space,
                    v.len()
                )));
            }
        }
        let mut w = vec![0.0; n];
        let mut mid = vec![0.0; n];
        for i in 0..n {
            w[i] = (u_np1.data[i] - u_n.data[i]) / tau;
            mid[i] = 0.5 * (u_n.data[i] + u_np1.data[i]);
        }
        let kinetic = self.mass_eps.quadratic(&w, &w);
        let curl = self.stiffness.quadratic(&mid, &mid);
        let corr_curl = -0.25 * tau * tau * self.stiffness.quadratic(&w, &w);
        let corr_sigma =
            -0.5 * tau * (self.damping_hat.quadratic(&w, &w) - self.msigma.quadratic(&w, &w));
        Ok(EnergyReport {
            kinetic,
            curl,
            corr_curl,
            corr_sigma,
            total: kinetic + curl + corr_curl + corr_sigma,
        })
    }
}

/// Shifted power iteration on the generalized pencil
/// `(ck K + cd D) v = lambda M_eps v` with `D` the conductivity gap.
struct PencilEigs<'a> {
    mass: &'a BlockDiagMatrix,
    chol: &'a BlockCholesky,
    stiffness: &'a SparseMatrix,
    /// `Q^T M_sigma Q - M_sigma`; absent when no merged edge carries
    /// conductivity.
    sigma_gap: Option<&'a SparseMatrix>,
}

impl PencilEigs<'_> {
    /// Power iteration toward the largest (signed) generalized eigenvalue.
    /// `shift` must dominate the most negative eigenvalue so that the shifted
    /// operator is positive semi-definite and iterates toward the top of the
    /// spectrum; `v` is the start vector and is left as the last iterate for
    /// warm starts.
    ///
    /// The returned Rayleigh quotient never exceeds the true maximum, so any
    /// value above a stability threshold is a sound witness of infeasibility
    /// (passing it as `stop_above` returns as soon as one appears).  The
    /// converse does not hold: a start vector with a negligible component in
    /// the dominant eigenspace can stall below the maximum, which is why
    /// [`estimate_tau_max`] combines several independent starts before it
    /// believes a "feasible" answer.
    fn lambda_max(
        &self,
        ck: f64,
        cd: f64,
        shift: f64,
        v: &mut [f64],
        tol: f64,
        stop_above: Option<f64>,
    ) -> Result<f64> {
        let n = self.mass.n_dofs();
        let mut reseed = ChaCha8Rng::seed_from_u64(0x7AC3);
        normalize_or_reseed(v, &mut reseed);
        let mut lambda_prev = f64::INFINITY;
        let mut residual = f64::INFINITY;
        for _it in 0..POWER_MAX_ITERS {
            let mut av = self.stiffness.apply(v);
            for x in &mut av {
                *x *= ck;
            }
            if let (Some(d), true) = (self.sigma_gap, cd != 0.0) {
                let dv = d.apply(v);
                for i in 0..n {
                    av[i] += cd * dv[i];
                }
            }
            let mv = self.mass.apply(v);
            let num: f64 = v.iter().zip(&av).map(|(a, b)| a * b).sum();
            let den: f64 = v.iter().zip(&mv).map(|(a, b)| a * b).sum();
            let lambda = num / den;
            if stop_above.is_some_and(|cap| lambda > cap) {
                return Ok(lambda);
            }
            residual = (lambda - lambda_prev).abs() / lambda.abs().max(1e-300);
            if residual <= tol {
                return Ok(lambda);
            }
            lambda_prev = lambda;
            let next = self.chol.solve(&av);
            for i in 0..n {
                v[i] = next[i] + shift * v[i];
            }
            normalize_or_reseed(v, &mut reseed);
        }
        Err(Error::PowerIteration {
            residual,
            iters: POWER_MAX_ITERS,
        })
    }

    /// Rayleigh quotients of `v` against the stiffness and gap forms,
    /// mass-normalised: `(v^T K v / v^T M v, v^T D v / v^T M v)`.  Together
    /// they give the exact certificate parabola of the direction `v`.
    fn rayleigh_components(&self, v: &[f64]) -> (f64, f64) {
        let den: f64 = v.iter().zip(self.mass.apply(v)).map(|(a, b)| a * b).sum();
        let rk: f64 = v
            .iter()
            .zip(self.stiffness.apply(v))
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / den;
        let rd = match self.sigma_gap {
            Some(d) => v.iter().zip(d.apply(v)).map(|(a, b)| a * b).sum::<f64>() / den,
            None => 0.0,
        };
        (rk, rd)
    }
}

/// Slot-antisymmetric direction on the merged conductive edge with the
/// strongest conductivity-gap response.  These directions are curl-free (the
/// two trace slots of an edge see identical element curls), so power
/// iteration started from curl-type vectors is blind to them; the probe makes
/// the conductivity cap on the step size visible immediately.
struct SigmaProbe {
    tail: usize,
    head: usize,
    /// Quadratic forms of the probe against stiffness, gap, and mass.
    kq: f64,
    dq: f64,
    mq: f64,
}

impl SigmaProbe {
    fn find(
        mesh: &Mesh,
        map: &DofMap,
        mass: &BlockDiagMatrix,
        stiffness: &SparseMatrix,
        gap: &SparseMatrix,
    ) -> Option<SigmaProbe> {
        let entry = |m: &SparseMatrix, r: usize, c: usize| {
            m.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, x)| x)
        };
        let mcsr = mass.to_csr();
        let mut best: Option<SigmaProbe> = None;
        for e in 0..mesh.n_edges() {
            let (tail, head) = map.edge_dofs(e);
            let head = head.expect("full map has two dofs per edge");
            let dq = entry(gap, tail, tail) - 2.0 * entry(gap, tail, head)
                + entry(gap, head, head);
            if dq == 0.0 {
                continue;
            }
            let kq = entry(stiffness, tail, tail) - 2.0 * entry(stiffness, tail, head)
                + entry(stiffness, head, head);
            let mq = entry(&mcsr, tail, tail) - 2.0 * entry(&mcsr, tail, head)
                + entry(&mcsr, head, head);
            if best.as_ref().map_or(true, |b| dq.abs() / mq > b.dq.abs() / b.mq) {
                best = Some(SigmaProbe {
                    tail,
                    head,
                    kq,
                    dq,
                    mq,
                });
            }
        }
        best
    }

    fn vector(&self, n: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[self.tail] = std::f64::consts::FRAC_1_SQRT_2;
        v[self.head] = -std::f64::consts::FRAC_1_SQRT_2;
        v
    }
}

/// Normalizes `v` in place; a collapsed iterate (the operator annihilated it)
/// is replaced by a fresh deterministic random vector.
fn normalize_or_reseed(v: &mut [f64], rng: &mut ChaCha8Rng) {
    loop {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            for x in v.iter_mut() {
                *x /= norm;
            }
            return;
        }
        for x in v.iter_mut() {
            *x = rng.gen::<f64>() - 0.5;
        }
    }
}

fn random_unit(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    normalize_or_reseed(&mut v, &mut rng);
    v
}

/// Row-sum norm of `M_eps^{-1} D`, an upper bound for the magnitude of every
/// generalized eigenvalue of `(D, M_eps)`.
fn pencil_radius_bound(chol: &BlockCholesky, d: &SparseMatrix) -> Result<f64> {
    let scaled = chol.inverse_csr().matmul(d)?;
    let mut bound: f64 = 0.0;
    for r in 0..scaled.nrows() {
        let row: f64 = scaled.row(r).map(|(_, x)| x.abs()).sum();
        bound = bound.max(row);
    }
    Ok(bound)
}

/// A generous upper bracket for [`estimate_tau_max`]: twice the longest edge
/// divided by the slowest wave speed.
pub fn default_step_bracket(mesh: &Mesh, materials: &MaterialField) -> f64 {
    let eps_max = materials.eps.iter().cloned().fold(f64::MIN, f64::max);
    let nu_min = materials.nu.iter().cloned().fold(f64::MAX, f64::min);
    2.0 * mesh.max_edge_length() * (eps_max / nu_min).sqrt()
}

/// Certifies the largest step size for which the scheme's discrete energy
/// controls the kinetic-plus-curl energy.
///
/// `gamma` scales the conductivity-gap term of the certificate: `gamma = 0`
/// checks the pure curl condition (closed form
/// `sqrt(2 / lambda_max(M_eps^{-1} K))`), `gamma = 1` the full one.  The gap
/// matrix is indefinite, so both of its signs are certified separately and
/// the smaller step wins.  `tau_upper` is a sanity cap on the search scale
/// (see [`default_step_bracket`] for the conventional choice); the result
/// does not depend on it because the search brackets itself from the curl
/// and conductivity Rayleigh quotients.
pub fn estimate_tau_max(
    mesh: &Mesh,
    map: &DofMap,
    materials: &MaterialField,
    reduction: Option<&Reduction>,
    gamma: f64,
    tau_upper: f64,
) -> Result<f64> {
    require_full(map, "the certified step bound")?;
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::Config(format!(
            "conductivity-gap scale must be a finite non-negative number, got {gamma}"
        )));
    }
    if !(tau_upper > 0.0) || !tau_upper.is_finite() {
        return Err(Error::Config(format!(
            "step bracket must be positive, got {tau_upper}"
        )));
    }
    let mass = assemble_lumped_mass(mesh, map, &materials.eps)?;
    let chol = BlockCholesky::new(&mass)?;
    let stiffness = assemble_stiffness(mesh, map, &materials.nu)?;
    let gap = match reduction {
        Some(red) if gamma > 0.0 && !materials.sigma_is_zero() => {
            let msigma = assemble_lumped_mass(mesh, map, &materials.sigma)?.to_csr();
            let d = red.project_matrix(&msigma)?.add_scaled(&msigma, -1.0)?;
            let active = (0..d.nrows()).any(|r| d.row(r).any(|(_, x)| x != 0.0));
            active.then_some(d)
        }
        _ => None,
    };

    let eigs = PencilEigs {
        mass: &mass,
        chol: &chol,
        stiffness: &stiffness,
        sigma_gap: gap.as_ref(),
    };
    let n = mass.n_dofs();

    // Top of the curl family, needed by every branch: it is the closed-form
    // answer when the conductivity gap is absent and the first cut of the
    // model otherwise.  Two independent starts guard against an unlucky draw
    // with no weight on the top eigenvector.
    let mut v_curl = random_unit(n, 0x0FF5);
    let mut lambda_k = eigs.lambda_max(1.0, 0.0, 0.0, &mut v_curl, POWER_TOL_EXACT, None)?;
    {
        let mut v = random_unit(n, 0x5EED);
        let lam = eigs.lambda_max(1.0, 0.0, 0.0, &mut v, POWER_TOL_EXACT, None)?;
        if lam > lambda_k {
            lambda_k = lam;
            v_curl = v;
        }
    }
    if !(lambda_k > 0.0) {
        return Err(Error::Config(
            "curl-curl matrix has no positive eigenvalue".into(),
        ));
    }
    let Some(d) = gap.as_ref() else {
        // No conductivity gap: the certificate is monotone in tau with the
        // single curl term, so the bound is the closed form.
        return Ok((2.0 / lambda_k).sqrt());
    };

    let rho = pencil_radius_bound(&chol, d)?;
    let probe = SigmaProbe::find(mesh, map, &mass, &stiffness, d);
    let mut bound = f64::INFINITY;
    for (which, sign) in [(0u64, 1.0f64), (1, -1.0)] {
        // For a fixed direction v the certificate value is the parabola
        // `mu_v(tau) = (tau^2/4) r_K(v) + s gamma (tau/2) r_D(v)` in tau, so
        // the pencil maximum is a supremum of parabolas: convex in tau, with
        // a unique 1/2-crossing.  The crossing is found by cutting planes:
        // every power-iteration run contributes the exact parabola of its
        // final vector, and the next trial step is the smallest 1/2-crossing
        // of the cuts collected so far.  The model never undershoots the true
        // boundary, and once a run lands in the binding family its cut is
        // exact, so the trial snaps onto the answer after a handful of
        // eigensolves (a bisection would pay a converged eigensolve per
        // digit).
        //
        // A stalled power run can only underestimate, so trial decreases are
        // always sound; accepting a trial needs independent cover.  Two
        // persistent chains track the two spectral families that can bind —
        // one seeded at the curl top, one at the slot-antisymmetric
        // conductivity probe, the family curl-seeded iterations are blind
        // to — and an accepted trial is confirmed with fresh random starts,
        // any witness re-entering as a cut and a chain start.
        let root_of = |rk: f64, rd: f64| -> f64 {
            // Smallest positive root of (rk/4) t^2 + (s gamma rd / 2) t = 1/2
            // in the stable quotient form; +inf when the parabola never gets
            // there (then this direction imposes no step restriction).
            let half_b = 0.5 * sign * gamma * rd;
            let disc = half_b * half_b + 0.5 * rk.max(0.0);
            let denom = half_b + disc.max(0.0).sqrt();
            if denom > 0.0 {
                1.0 / denom
            } else {
                f64::INFINITY
            }
        };
        let coeffs = |tau: f64| {
            (
                0.25 * tau * tau,
                0.5 * sign * gamma * tau,
                0.5 * gamma * tau * rho,
            )
        };
        let mut chain_a = v_curl.clone();
        let mut chain_b = match probe.as_ref() {
            Some(p) => p.vector(n),
            None => random_unit(n, 0xBEEF + which),
        };
        let (rk0, rd0) = eigs.rayleigh_components(&chain_a);
        let mut tau = root_of(rk0, rd0);
        if let Some(p) = probe.as_ref() {
            tau = tau.min(root_of(p.kq / p.mq, p.dq / p.mq));
        }
        if !tau.is_finite() {
            // No direction ever pushes this sign's certificate to 1/2.
            continue;
        }
        let mut rounds = 0u64;
        let mut fresh = 0u64;
        let mut settled = None;
        'search: for _ in 0..80 {
            let (ck, cd, shift) = coeffs(tau);
            let mut next = tau;
            let mut lam_top = f64::MIN;
            // A run that climbs clearly past the threshold may exit at the
            // witness: any iterate's parabola crossing sits at or above the
            // true boundary, so the cut is sound, and the slack in
            // FEASIBILITY_EXIT guarantees it moves the trial by a real step.
            // Hairline runs converge fully, so the cuts that finally settle
            // the search are the exact crossings of their families.
            for chain in [&mut chain_a, &mut chain_b] {
                let lam = eigs.lambda_max(
                    ck,
                    cd,
                    shift,
                    chain,
                    POWER_TOL_FEASIBILITY,
                    Some(FEASIBILITY_EXIT),
                )?;
                let (rk, rd) = eigs.rayleigh_components(chain);
                next = next.min(root_of(rk, rd));
                lam_top = lam_top.max(lam);
            }
            if lam_top > 0.5 {
                // A hairline-infeasible trial may yield a cut crossing only
                // infinitesimally lower; insist on tolerance-scale progress.
                tau = next.min(tau * (1.0 - 0.5 * BISECTION_REL_TOL));
                continue;
            }
            if next < tau * (1.0 - BISECTION_REL_TOL) {
                tau = next;
                continue;
            }
            // Both chains certify the trial and no cut moves it: confirm.
            for _ in 0..2 {
                fresh += 1;
                let mut v = random_unit(n, 0xF00D ^ (which << 32) ^ (fresh << 8));
                let lam = eigs.lambda_max(
                    ck,
                    cd,
                    shift,
                    &mut v,
                    POWER_TOL_FEASIBILITY,
                    Some(FEASIBILITY_EXIT),
                )?;
                if lam > 0.5 {
                    let (rk, rd) = eigs.rayleigh_components(&v);
                    tau = tau.min(root_of(rk, rd));
                    chain_b = v;
                    rounds += 1;
                    if rounds > 4 {
                        return Err(Error::Config(
                            "step-bound confirmation keeps finding new unstable \
                             directions; the spectral search does not settle"
                                .into(),
                        ));
                    }
                    continue 'search;
                }
            }
            settled = Some(tau);
            break;
        }
        let Some(tau_sign) = settled else {
            return Err(Error::Config(
                "certified step search did not settle within its iteration budget".into(),
            ));
        };
        bound = bound.min(tau_sign);
    }
    Ok(bound)
}

/// Whether and how often the run loop evaluates the discrete energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnergyRecording {
    None,
    EveryStep,
    /// Record the pairs whose lower step index is a multiple of the interval.
    EveryN(usize),
}

/// Run-loop schedule: advance until `e_curr` sits at `final_step`, snapshot
/// the listed step indices, and optionally trace the energy.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub final_step: usize,
    pub energy: EnergyRecording,
    pub snapshot_steps: Vec<usize>,
}

/// Energy of the pair `(E^step, E^{step+1})`, logged at the half-step time.
#[derive(Debug, Clone, Copy)]
pub struct EnergyTraceEntry {
    pub step: usize,
    /// Half-step time `(step + 1/2) tau`.
    pub t: f64,
    pub kinetic: f64,
    pub curl: f64,
    pub corr_curl: f64,
    pub corr_sigma: f64,
    pub total: f64,
}

/// Everything a run loop collected.
pub struct SolutionRecord {
    pub tau: f64,
    /// Requested `(step, field)` snapshots in ascending step order.
    pub snapshots: Vec<(usize, DofVector)>,
    pub energy: Vec<EnergyTraceEntry>,
    /// Final state (`e_curr` at `final_step`).
    pub state: TimeStepState,
}

fn energy_interval(config: &RunConfig, have_ops: bool) -> Result<usize> {
    let interval = match config.energy {
        EnergyRecording::None => 0,
        EnergyRecording::EveryStep => 1,
        EnergyRecording::EveryN(0) => {
            return Err(Error::Contract(
                "energy recording interval must be positive".into(),
            ))
        }
        EnergyRecording::EveryN(k) => k,
    };
    if interval > 0 && !have_ops {
        return Err(Error::Contract(
            "energy recording requested without energy operators".into(),
        ));
    }
    Ok(interval)
}

fn drive<E>(
    mut state: TimeStepState,
    config: &RunConfig,
    mut advance_one: impl FnMut(&mut TimeStepState, usize, f64) -> Result<()>,
    mut energy_eval: Option<E>,
) -> Result<SolutionRecord>
where
    E: FnMut(&TimeStepState) -> Result<EnergyReport>,
{
    let interval = energy_interval(config, energy_eval.is_some())?;
    if config.final_step < state.n {
        return Err(Error::Contract(format!(
            "final step {} lies before the state's current step {}",
            config.final_step, state.n
        )));
    }
    let snaps: BTreeSet<usize> = config.snapshot_steps.iter().copied().collect();
    for &s in &snaps {
        if s < state.n || s > config.final_step {
            return Err(Error::Contract(format!(
                "snapshot step {s} outside the run range [{}, {}]",
                state.n, config.final_step
            )));
        }
    }
    let mut record = SolutionRecord {
        tau: state.tau,
        snapshots: Vec::new(),
        energy: Vec::new(),
        state: TimeStepState {
            e_prev: DofVector {
                space: state.e_prev.space,
                data: Vec::new(),
            },
            e_curr: DofVector {
                space: state.e_curr.space,
                data: Vec::new(),
            },
            tau: state.tau,
            n: 0,
        },
    };
    let log_energy = |state: &TimeStepState, out: &mut Vec<EnergyTraceEntry>,
                          eval: &mut Option<E>|
     -> Result<()> {
        let pair = state.n - 1;
        if interval == 0 || pair % interval != 0 {
            return Ok(());
        }
        let eval = eval.as_mut().expect("interval > 0 implies operators");
        let report = eval(state)?;
        out.push(EnergyTraceEntry {
            step: pair,
            t: (pair as f64 + 0.5) * state.tau,
            kinetic: report.kinetic,
            curl: report.curl,
            corr_curl: report.corr_curl,
            corr_sigma: report.corr_sigma,
            total: report.total,
        });
        Ok(())
    };
    log_energy(&state, &mut record.energy, &mut energy_eval)?;
    if snaps.contains(&state.n) {
        record.snapshots.push((state.n, state.e_curr.clone()));
    }
    while state.n < config.final_step {
        let (n, t) = (state.n, state.t());
        advance_one(&mut state, n, t)?;
        log_energy(&state, &mut record.energy, &mut energy_eval)?;
        if snaps.contains(&state.n) {
            record.snapshots.push((state.n, state.e_curr.clone()));
        }
    }
    record.state = state;
    Ok(record)
}

/// Runs the full-space scheme from `state` following `config`.  `load_at`
/// supplies `f^n + g^n` for the step index and time of the level being left.
pub fn run_full(
    ops: &FullOperators,
    state: TimeStepState,
    config: &RunConfig,
    mut load_at: impl FnMut(usize, f64) -> Result<DofVector>,
    energy_ops: Option<&EnergyOperators>,
) -> Result<SolutionRecord> {
    let tau = ops.tau();
    let energy_eval =
        energy_ops.map(|e| move |st: &TimeStepState| e.energy(&st.e_prev, &st.e_curr, tau));
    drive(
        state,
        config,
        |st, n, t| {
            let load = load_at(n, t)?;
            ops.step(st, &load)
        },
        energy_eval,
    )
}

/// Runs the merged-space scheme from `state` following `config`.  `rhs_at`
/// supplies the acceleration-level right-hand side (see
/// [`ReducedOperators::lift_load`] / [`ReducedOperators::scale_direct_load`]).
/// Energy, when requested, is evaluated on the prolonged pair, for which the
/// conductivity correction vanishes identically.
pub fn run_reduced(
    ops: &ReducedOperators,
    state: TimeStepState,
    config: &RunConfig,
    mut rhs_at: impl FnMut(usize, f64) -> Result<DofVector>,
    energy: Option<(&EnergyOperators, &Reduction)>,
) -> Result<SolutionRecord> {
    let tau = ops.tau();
    let energy_eval = energy.map(|(e, red)| {
        move |st: &TimeStepState| {
            let lo = red.prolong(&st.e_prev)?;
            let hi = red.prolong(&st.e_curr)?;
            e.energy(&lo, &hi, tau)
        }
    });
    drive(
        state,
        config,
        |st, n, t| {
            let rhs = rhs_at(n, t)?;
            ops.step(st, &rhs)
        },
        energy_eval,
    )
}
