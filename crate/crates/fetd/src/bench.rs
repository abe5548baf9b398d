//! The scattering benchmark: scenario definition, incident-wave data, the
//! relative space-time error norm, nested-mesh convergence studies, the
//! step-bound table, and snapshot/energy file formats.
//!
//! # Scenario
//!
//! A conducting polygonal obstacle sits at the centre of the square
//! `(-1, 1)^2`.  A transverse plane-wave pulse
//!
//! ```text
//! E_inc(x, t) = (-k2, k1) a(k.x - t),      a(s) = A exp(-d (s + s0)^2)
//! ```
//!
//! enters through the boundary condition `g = nu * curl E_inc = nu a'(k.x - t)`
//! (in 2D the curl of the plane wave is the scalar `a'`); the volume source
//! `f` is zero.  Material coefficients are constant except for the
//! conductivity, which is large inside the obstacle and zero outside.
//!
//! # Error norm
//!
//! Two trajectories sampled on a common time grid are compared in the
//! relative norm
//!
//! ```text
//! |||E - E*||| = max_n ||dt(E - E*)^n|| / max_n ||dt E*^n||
//!              + max_n ||curl avg(E - E*)^n|| / max_n ||curl avg E*^n||
//! ```
//!
//! where `dt` is the step difference quotient and `avg` the mean of two
//! consecutive states, both living at half steps.  The field norm is the
//! lumped (vertex-rule) L2 norm the scheme itself uses; the curl norm is the
//! exact L2 norm, which for piecewise-constant curls is a plain weighted sum
//! of squares.
//!
//! # Comparison protocols
//!
//! *Self-convergence* (the unreduced method): the run on level `l` is
//! compared against the run on level `l + 1`.  Uniform refinement halves
//! every edge, so the fine step `tau/2` lines up with the coarse grid at
//! every second step, and the coarse solution transfers to the fine mesh
//! without error ([`TransferOperator`]).  *Method comparison* (the merged
//! variants): the run is compared against the unreduced run on the same mesh
//! and the same step, after prolonging to the full space.  Both protocols
//! stream: the paired runs advance in lockstep and only the running maxima
//! of the four norm scans are kept, so the memory footprint stays at a few
//! fields regardless of the number of steps.

use std::fmt::Write as _;

use crate::assembly::blockdiag::BlockDiagMatrix;
use crate::assembly::forms::{assemble_boundary_load, assemble_lumped_mass};
use crate::error::{Error, Result};
use crate::fem::dofmap::{DofMap, DofVector, Space};
use crate::fem::eval::{curl_in_element, eval_in_element};
use crate::fem::quad::edge_integrate;
use crate::mesh::classify::{classify_reduced_edges, ReductionPolicy};
use crate::mesh::material::MaterialField;
use crate::mesh::scatterer::{generate_scatterer_mesh, ScattererGeometry};
use crate::mesh::Mesh;
use crate::reduction::Reduction;
use crate::timestep::{
    run_full, run_reduced, EnergyOperators, EnergyRecording, FullOperators, ReducedOperators,
    RunConfig, SolutionRecord, TimeStepState,
};
use crate::vec2::{self, Vec2};

/// Field magnitudes above this abort a run as diverged.
const DIVERGENCE_LIMIT: f64 = 1e12;

/// The scattering set-up: obstacle, incident pulse, materials, run times.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// The obstacle polygon.
    pub geometry: ScattererGeometry,
    /// Unit propagation direction of the incident wave.
    pub wave_dir: Vec2,
    /// Envelope amplitude `A`.
    pub amplitude: f64,
    /// Envelope decay rate `d`.
    pub decay: f64,
    /// Envelope centre offset `s0` (the pulse peak sits at `k.x - t = -s0`).
    pub offset: f64,
    /// Final simulation time.
    pub final_time: f64,
    /// Permittivity (everywhere).
    pub eps: f64,
    /// Conductivity inside the obstacle (zero outside).
    pub sigma: f64,
    /// Inverse permeability (everywhere).
    pub nu: f64,
    /// Times at which the field is recorded for export.
    pub snapshot_times: Vec<f64>,
}

impl Scenario {
    /// The standard benchmark: 16-gon of circumradius 0.3, diagonal pulse,
    /// conductivity 100 inside the obstacle, run to `t = 2.5` with snapshots
    /// at 1.5, 2 and 2.5.
    pub fn standard() -> Self {
        let half = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            geometry: ScattererGeometry::new(0.3, 16).expect("standard geometry is valid"),
            wave_dir: [half, half],
            amplitude: 2.0,
            decay: 10.0,
            offset: 3.0,
            final_time: 2.5,
            eps: 1.0,
            sigma: 100.0,
            nu: 1.0,
            snapshot_times: vec![1.5, 2.0, 2.5],
        }
    }

    /// Checks the invariants that the filed values must satisfy.
    pub fn validate(&self) -> Result<()> {
        if !(self.final_time > 0.0) || !self.final_time.is_finite() {
            return Err(Error::Config(format!(
                "final time must be positive, got {}",
                self.final_time
            )));
        }
        if (vec2::norm(self.wave_dir) - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "wave direction must be a unit vector, got ({}, {})",
                self.wave_dir[0], self.wave_dir[1]
            )));
        }
        for (name, v) in [
            ("amplitude", self.amplitude),
            ("decay", self.decay),
            ("permittivity", self.eps),
            ("inverse permeability", self.nu),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::Config(format!(
                "conductivity must be non-negative, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Gaussian envelope `a(s)`.
    pub fn envelope(&self, s: f64) -> f64 {
        self.amplitude * (-self.decay * (s + self.offset).powi(2)).exp()
    }

    /// Envelope derivative `a'(s)`.
    pub fn envelope_deriv(&self, s: f64) -> f64 {
        -2.0 * self.decay * (s + self.offset) * self.envelope(s)
    }

    /// The incident plane wave `(-k2, k1) a(k.x - t)`.
    pub fn plane_wave(&self, x: Vec2, t: f64) -> Vec2 {
        let a = self.envelope(vec2::dot(self.wave_dir, x) - t);
        [-self.wave_dir[1] * a, self.wave_dir[0] * a]
    }

    /// The scalar boundary datum `g = nu a'(k.x - t)` (the curl of the
    /// incident wave times the inverse permeability).
    pub fn boundary_trace_g(&self, x: Vec2, t: f64) -> f64 {
        self.nu * self.envelope_deriv(vec2::dot(self.wave_dir, x) - t)
    }

    /// Material coefficients on a generated mesh: obstacle elements carry
    /// label 1 and the conductivity; everything else is conductivity-free.
    pub fn materials(&self, mesh: &Mesh) -> Result<MaterialField> {
        MaterialField::from_labels(mesh, |label| {
            if label == 1 {
                (self.eps, self.sigma, self.nu)
            } else {
                (self.eps, 0.0, self.nu)
            }
        })
    }

    /// Assembles the boundary load at time `t` (the volume source is zero).
    pub fn load_at(&self, mesh: &Mesh, map: &DofMap, t: f64) -> Result<DofVector> {
        assemble_boundary_load(mesh, map, |x| self.boundary_trace_g(x, t))
    }
}

/// Which discrete space a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    /// Full two-dofs-per-edge space, no merging.
    Nc1,
    /// Merging wherever the conductivity is continuous across the edge.
    N0Plus,
    /// Merging on every edge, ignoring the data-compatibility requirement.
    N0,
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Nc1 => "nc1",
            BenchMethod::N0Plus => "n0plus",
            BenchMethod::N0 => "n0",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "nc1" => Ok(BenchMethod::Nc1),
            "n0plus" => Ok(BenchMethod::N0Plus),
            "n0" => Ok(BenchMethod::N0),
            other => Err(Error::Config(format!(
                "unknown method '{other}' (expected nc1, n0plus or n0)"
            ))),
        }
    }
}

/// How loads reach a merged-space run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhsMode {
    /// Assemble on the full space and lift through the averaged inverse mass.
    Lifted,
    /// Assemble on the merged space directly and scale by the surrogate mass.
    Direct,
}

impl RhsMode {
    pub fn name(self) -> &'static str {
        match self {
            RhsMode::Lifted => "lifted",
            RhsMode::Direct => "direct",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lifted" => Ok(RhsMode::Lifted),
            "direct" => Ok(RhsMode::Direct),
            other => Err(Error::Config(format!(
                "unknown right-hand-side mode '{other}' (expected lifted or direct)"
            ))),
        }
    }
}

/// Edge-merging policy a method uses for the benchmark scenario.
///
/// The direct right-hand-side mode assembles boundary loads on the merged
/// basis, which is only consistent on edges whose data has a constant-trace
/// representation; since the incident pulse is active on the whole outer
/// boundary, the data-aware variant keeps both dofs on every outer-boundary
/// edge.  The lifted mode has no such restriction (the lift reproduces the
/// full-space trajectory exactly), so conductivity continuity alone decides.
fn classification(
    scenario: &Scenario,
    mesh: &Mesh,
    materials: &MaterialField,
    method: BenchMethod,
    rhs: RhsMode,
) -> Result<crate::mesh::classify::ReducedEdgeSet> {
    let _ = scenario;
    match (method, rhs) {
        (BenchMethod::Nc1, _) => Ok(crate::mesh::classify::ReducedEdgeSet::none(mesh)),
        (BenchMethod::N0Plus, RhsMode::Lifted) => {
            classify_reduced_edges(mesh, materials, &ReductionPolicy::SigmaContinuous)
        }
        (BenchMethod::N0Plus, RhsMode::Direct) => classify_reduced_edges(
            mesh,
            materials,
            &ReductionPolicy::SourceAware {
                f_jumps: &|_| false,
                g_active: &|_| true,
            },
        ),
        (BenchMethod::N0, _) => classify_reduced_edges(mesh, materials, &ReductionPolicy::All),
    }
}

/// A configured single-mesh simulation, ready to run or to be advanced in
/// lockstep with another one.
pub struct BenchRun {
    pub scenario: Scenario,
    pub method: BenchMethod,
    pub rhs: RhsMode,
    pub mesh: Mesh,
    pub materials: MaterialField,
    /// Map of the space the run steps in.
    pub map: DofMap,
    /// Full-space map (equals `map` for the unreduced method).
    pub full_map: DofMap,
    /// Present exactly for the merged methods.
    pub reduction: Option<Reduction>,
    ops: Operators,
    tau: f64,
}

enum Operators {
    Full(FullOperators),
    Reduced(ReducedOperators),
}

impl BenchRun {
    /// Builds operators for `scenario` on `mesh` with step `tau`.
    pub fn new(
        scenario: &Scenario,
        mesh: Mesh,
        method: BenchMethod,
        rhs: RhsMode,
        tau: f64,
    ) -> Result<Self> {
        scenario.validate()?;
        let materials = scenario.materials(&mesh)?;
        let full_map = DofMap::full(&mesh);
        let set = classification(scenario, &mesh, &materials, method, rhs)?;
        let (map, reduction, ops) = if method == BenchMethod::Nc1 {
            let ops = FullOperators::new(&mesh, &full_map, &materials, None, tau)?;
            (full_map.clone(), None, Operators::Full(ops))
        } else {
            let reduced_map = DofMap::reduced(&mesh, &set);
            let reduction = Reduction::new(&mesh, &full_map, &reduced_map)?;
            let ops = ReducedOperators::new(
                &mesh,
                &full_map,
                &reduced_map,
                &materials,
                &reduction,
                tau,
            )?;
            (reduced_map, Some(reduction), Operators::Reduced(ops))
        };
        Ok(Self {
            scenario: scenario.clone(),
            method,
            rhs,
            mesh,
            materials,
            map,
            full_map,
            reduction,
            ops,
            tau,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// Dof count of the stepping space.
    pub fn n_dofs(&self) -> usize {
        self.map.n_dofs()
    }

    fn rhs_at(&self, t: f64) -> Result<DofVector> {
        match &self.ops {
            Operators::Full(_) => self.scenario.load_at(&self.mesh, &self.full_map, t),
            Operators::Reduced(ops) => match self.rhs {
                RhsMode::Lifted => {
                    let load = self.scenario.load_at(&self.mesh, &self.full_map, t)?;
                    ops.lift_load(&load)
                }
                RhsMode::Direct => {
                    let load = self.scenario.load_at(&self.mesh, &self.map, t)?;
                    ops.scale_direct_load(&load)
                }
            },
        }
    }

    /// Advances the state one step, driving it with the boundary data at the
    /// state's current time, and aborts on non-finite or exploding fields.
    pub fn step(&self, state: &mut TimeStepState) -> Result<()> {
        let rhs = self.rhs_at(state.t())?;
        match &self.ops {
            Operators::Full(ops) => ops.step(state, &rhs)?,
            Operators::Reduced(ops) => ops.step(state, &rhs)?,
        }
        let worst = state
            .e_curr
            .data
            .iter()
            .fold(0.0_f64, |m, &x| m.max(x.abs()));
        if !worst.is_finite() || worst > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                step: state.n,
                time: state.t(),
                what: format!("field magnitude reached {worst:.3e}"),
            });
        }
        Ok(())
    }

    /// Fresh zero state (the pulse has not entered yet at `t = 0`).
    pub fn initial_state(&self) -> Result<TimeStepState> {
        TimeStepState::zeros(&self.map, self.tau)
    }

    /// The state's current field prolonged to the full space (a clone for the
    /// unreduced method).
    pub fn current_full(&self, state: &TimeStepState) -> Result<DofVector> {
        match &self.reduction {
            Some(red) => red.prolong(&state.e_curr),
            None => Ok(state.e_curr.clone()),
        }
    }

    /// Runs from zero initial data to `final_step`, recording snapshots and
    /// (optionally) the energy trace.
    pub fn run(&self, config: &RunConfig, energy: Option<&EnergyOperators>) -> Result<SolutionRecord> {
        let state = self.initial_state()?;
        let record = match &self.ops {
            Operators::Full(ops) => run_full(
                ops,
                state,
                config,
                |_, t| self.rhs_at(t),
                energy,
            )?,
            Operators::Reduced(ops) => {
                let energy = match (energy, self.reduction.as_ref()) {
                    (Some(e), Some(red)) => Some((e, red)),
                    _ => None,
                };
                run_reduced(ops, state, config, |_, t| self.rhs_at(t), energy)?
            }
        };
        let worst = record
            .state
            .e_curr
            .data
            .iter()
            .fold(0.0_f64, |m, &x| m.max(x.abs()));
        if !worst.is_finite() || worst > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                step: record.state.n,
                time: record.state.t(),
                what: format!("field magnitude reached {worst:.3e}"),
            });
        }
        Ok(record)
    }

    /// Run schedule reaching the scenario's final time: the smallest step
    /// count whose end time is not earlier than `final_time` (up to a one-ulp
    /// slack), with each snapshot time rounded to its nearest step.
    pub fn schedule(&self, energy: EnergyRecording) -> RunConfig {
        let final_step = steps_to_reach(self.scenario.final_time, self.tau);
        let snapshot_steps = self
            .scenario
            .snapshot_times
            .iter()
            .map(|&t| ((t / self.tau).round() as usize).min(final_step))
            .collect();
        RunConfig {
            final_step,
            energy,
            snapshot_steps,
        }
    }
}

/// Smallest `n` with `n tau >= t` up to a relative slack for accumulated
/// rounding (so `t = 1` with `tau = 0.1` gives 10, not 11).
fn steps_to_reach(t: f64, tau: f64) -> usize {
    ((t / tau) * (1.0 - 1e-12)).ceil() as usize
}

/// Exact inclusion of a coarse discrete field into the space of the uniformly
/// refined mesh.
///
/// A coarse field is linear on every fine triangle and tangentially
/// continuous across fine edges, so it lies in the fine space; its fine
/// coefficients are its tangential edge moments, computed here against the
/// parent coarse element of one fine neighbour (on fine edges along a coarse
/// edge both parents give the same trace).  The moments are integrals of
/// quadratics, which the edge quadrature handles exactly, so the transfer is
/// exact to rounding and is precomputed as a sparse matrix.
pub struct TransferOperator {
    matrix: crate::assembly::sparse::SparseMatrix,
}

impl TransferOperator {
    pub fn new(
        coarse_mesh: &Mesh,
        coarse_map: &DofMap,
        fine_mesh: &Mesh,
        fine_map: &DofMap,
    ) -> Result<Self> {
        if fine_mesh.level != coarse_mesh.level + 1
            || fine_mesh.n_triangles() != 4 * coarse_mesh.n_triangles()
        {
            return Err(Error::Contract(format!(
                "transfer needs a mesh and its uniform refinement, got levels {} and {} \
                 with {} and {} triangles",
                coarse_mesh.level,
                fine_mesh.level,
                coarse_mesh.n_triangles(),
                fine_mesh.n_triangles()
            )));
        }
        if coarse_map.space() != Space::Full || fine_map.space() != Space::Full {
            return Err(Error::Contract(
                "transfer is defined between the two-dofs-per-edge spaces".into(),
            ));
        }
        let mut builder =
            crate::assembly::sparse::SparseBuilder::new(fine_map.n_dofs(), coarse_map.n_dofs());
        for (e, edge) in fine_mesh.edges.iter().enumerate() {
            let a = fine_mesh.vertices[edge.verts[0]];
            let b = fine_mesh.vertices[edge.verts[1]];
            let tangent = vec2::scale(1.0 / vec2::dist(a, b), vec2::sub(b, a));
            // Children of coarse triangle `t` occupy fine indices 4t..4t+4.
            let parent = edge.tris[0].expect("every edge has a triangle") / 4;
            let geom = coarse_mesh.geometry(parent);
            let (tail, head) = fine_map.edge_dofs(e);
            let head = head.expect("full map keeps both slots");
            for (g, ld) in coarse_map.element_dofs(coarse_mesh, parent) {
                let trace = |p: Vec2| {
                    vec2::dot(crate::fem::basis::eval_basis(geom, ld, p), tangent)
                };
                let m0 = edge_integrate(a, b, |p, _| trace(p));
                let m1 = edge_integrate(a, b, |p, s| trace(p) * s);
                builder.add(tail, g, 4.0 * m0 - 6.0 * m1);
                builder.add(head, g, 6.0 * m1 - 2.0 * m0);
            }
        }
        Ok(Self {
            matrix: builder.build(),
        })
    }

    pub fn apply(&self, coarse: &DofVector) -> Result<DofVector> {
        if coarse.data.len() != self.matrix.ncols() {
            return Err(Error::Contract(format!(
                "transfer expects {} coarse dofs, got {}",
                self.matrix.ncols(),
                coarse.data.len()
            )));
        }
        Ok(DofVector {
            space: Space::Full,
            data: self.matrix.apply(&coarse.data),
        })
    }
}

/// One-shot form of the exact coarse-to-fine inclusion.
pub fn transfer_coarse_to_fine(
    coarse_mesh: &Mesh,
    coarse_map: &DofMap,
    fine_mesh: &Mesh,
    fine_map: &DofMap,
    coarse: &DofVector,
) -> Result<DofVector> {
    TransferOperator::new(coarse_mesh, coarse_map, fine_mesh, fine_map)?.apply(coarse)
}

/// Streaming accumulator for the relative space-time norm; feed it the
/// consecutive state pairs of both trajectories on the common grid and read
/// the norm off at the end.
pub struct NormAccumulator {
    /// Lumped unit-weight mass (the discrete L2 inner product).
    mass: BlockDiagMatrix,
    mesh_areas: Vec<f64>,
    dt: f64,
    num_dq: f64,
    den_dq: f64,
    num_curl: f64,
    den_curl: f64,
    /// Number of state pairs pushed so far.
    pub pairs: usize,
}

impl NormAccumulator {
    pub fn new(mesh: &Mesh, map: &DofMap, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Contract(format!(
                "norm accumulator needs a positive grid spacing, got {dt}"
            )));
        }
        Ok(Self {
            mass: assemble_lumped_mass(mesh, map, &vec![1.0; mesh.n_triangles()])?,
            mesh_areas: (0..mesh.n_triangles())
                .map(|t| mesh.geometry(t).area)
                .collect(),
            dt,
            num_dq: 0.0,
            den_dq: 0.0,
            num_curl: 0.0,
            den_curl: 0.0,
            pairs: 0,
        })
    }

    /// Feeds the pair `(E^n, E^{n+1})` of the candidate and the reference.
    pub fn push_pair(
        &mut self,
        mesh: &Mesh,
        map: &DofMap,
        a_lo: &DofVector,
        a_hi: &DofVector,
        r_lo: &DofVector,
        r_hi: &DofVector,
    ) -> Result<()> {
        let n = self.mass.n_dofs();
        for (name, v) in [("candidate", a_lo), ("candidate", a_hi), ("reference", r_lo), ("reference", r_hi)] {
            if v.data.len() != n {
                return Err(Error::Contract(format!(
                    "{name} state has {} dofs, the norm space has {n}",
                    v.data.len()
                )));
            }
        }
        let mut diff_dq = vec![0.0; n];
        let mut ref_dq = vec![0.0; n];
        let mut diff_avg = vec![0.0; n];
        let mut ref_avg = vec![0.0; n];
        for i in 0..n {
            let da = (a_hi.data[i] - a_lo.data[i]) / self.dt;
            let dr = (r_hi.data[i] - r_lo.data[i]) / self.dt;
            diff_dq[i] = da - dr;
            ref_dq[i] = dr;
            let aa = 0.5 * (a_hi.data[i] + a_lo.data[i]);
            let ar = 0.5 * (r_hi.data[i] + r_lo.data[i]);
            diff_avg[i] = aa - ar;
            ref_avg[i] = ar;
        }
        self.num_dq = self.num_dq.max(self.l2_sq(&diff_dq));
        self.den_dq = self.den_dq.max(self.l2_sq(&ref_dq));
        self.num_curl = self.num_curl.max(self.curl_sq(mesh, map, &diff_avg));
        self.den_curl = self.den_curl.max(self.curl_sq(mesh, map, &ref_avg));
        self.pairs += 1;
        Ok(())
    }

    fn l2_sq(&self, v: &[f64]) -> f64 {
        let mv = self.mass.apply(v);
        v.iter().zip(&mv).map(|(a, b)| a * b).sum()
    }

    fn curl_sq(&self, mesh: &Mesh, map: &DofMap, data: &[f64]) -> f64 {
        let v = DofVector {
            space: map.space(),
            data: data.to_vec(),
        };
        (0..mesh.n_triangles())
            .map(|t| {
                let c = curl_in_element(mesh, map, &v, t);
                self.mesh_areas[t] * c * c
            })
            .sum()
    }

    /// The accumulated relative norm.
    pub fn value(&self) -> Result<f64> {
        if self.pairs == 0 {
            return Err(Error::Contract(
                "the error norm needs at least one state pair".into(),
            ));
        }
        let term = |num: f64, den: f64, what: &str| -> Result<f64> {
            if den > 0.0 {
                Ok((num / den).sqrt())
            } else if num == 0.0 {
                Ok(0.0)
            } else {
                Err(Error::Contract(format!(
                    "the reference trajectory has a vanishing {what} norm \
                     while the candidate's differs"
                )))
            }
        };
        Ok(term(self.num_dq, self.den_dq, "difference-quotient")?
            + term(self.num_curl, self.den_curl, "averaged-curl")?)
    }
}

/// The relative space-time norm of two stored trajectories sampled on the
/// same grid (both already expressed on the same mesh and dof space).
pub fn error_norm(
    mesh: &Mesh,
    map: &DofMap,
    candidate: &[DofVector],
    reference: &[DofVector],
    dt: f64,
) -> Result<f64> {
    if candidate.len() != reference.len() || candidate.len() < 2 {
        return Err(Error::Contract(format!(
            "trajectories must share a grid with at least two samples, got {} and {}",
            candidate.len(),
            reference.len()
        )));
    }
    let mut acc = NormAccumulator::new(mesh, map, dt)?;
    for i in 0..candidate.len() - 1 {
        acc.push_pair(
            mesh,
            map,
            &candidate[i],
            &candidate[i + 1],
            &reference[i],
            &reference[i + 1],
        )?;
    }
    acc.value()
}

/// One row of a convergence table.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub level: u32,
    /// Longest edge of the level's mesh.
    pub h: f64,
    /// Dof count of the method's stepping space on this level.
    pub dofs: usize,
    /// Relative space-time error of this level's run.
    pub error: f64,
    /// `log2(previous error / this error)`; `None` on the first row.
    pub eoc: Option<f64>,
    /// Time step used.
    pub tau: f64,
}

/// Runs the benchmark scenario over consecutive refinement levels and
/// reports errors and observed orders.
///
/// The unreduced method self-converges: the row for level `l` compares the
/// runs on `l` and `l + 1` (each listed level is run; the last one serves
/// only as a reference, so the table has one row fewer than `levels`).  The
/// merged methods are compared against the unreduced run on the same mesh
/// and step, giving one row per level.  A diverging run aborts the study
/// with the offending level in the error.
pub fn convergence_study(
    scenario: &Scenario,
    method: BenchMethod,
    rhs: RhsMode,
    levels: &[u32],
    cfl_factor: f64,
) -> Result<Vec<ConvergenceRow>> {
    scenario.validate()?;
    if levels.len() < 3 {
        return Err(Error::Contract(format!(
            "a convergence study needs at least three levels, got {}",
            levels.len()
        )));
    }
    if levels.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::Contract(format!(
            "levels must be consecutive (nested meshes), got {levels:?}"
        )));
    }
    if !(cfl_factor > 0.0) || !cfl_factor.is_finite() {
        return Err(Error::Contract(format!(
            "the step factor must be positive, got {cfl_factor}"
        )));
    }
    let meshes = mesh_ladder(&scenario.geometry, levels)?;
    // Levels are independent simulations; run them on their own threads and
    // fold the results back in level order, so the output (and the level an
    // abort reports) does not depend on scheduling.
    let results: Vec<Result<ConvergenceRow>> = std::thread::scope(|scope| {
        let handles: Vec<_> = match method {
            BenchMethod::Nc1 => meshes
                .windows(2)
                .map(|pair| {
                    scope.spawn(move || {
                        nc1_pair_error(scenario, &pair[0], &pair[1], cfl_factor)
                            .map_err(|e| tag_level(e, pair[0].level))
                    })
                })
                .collect(),
            _ => meshes
                .iter()
                .map(|mesh| {
                    scope.spawn(move || {
                        method_vs_reference_error(scenario, mesh, method, rhs, cfl_factor)
                            .map_err(|e| tag_level(e, mesh.level))
                    })
                })
                .collect(),
        };
        handles
            .into_iter()
            .map(|h| h.join().expect("level worker panicked"))
            .collect()
    });
    let mut rows: Vec<ConvergenceRow> = Vec::new();
    for result in results {
        push_row(&mut rows, result?);
    }
    Ok(rows)
}

/// Remembers which level a divergence came from.
fn tag_level(e: Error, level: u32) -> Error {
    match e {
        Error::Diverged { step, time, what } => Error::Diverged {
            step,
            time,
            what: format!("level {level}: {what}"),
        },
        other => other,
    }
}

fn push_row(rows: &mut Vec<ConvergenceRow>, mut row: ConvergenceRow) {
    row.eoc = rows
        .last()
        .map(|prev: &ConvergenceRow| (prev.error / row.error).log2());
    rows.push(row);
}

/// Generates the chain of uniformly refined obstacle meshes for `levels`.
fn mesh_ladder(geometry: &ScattererGeometry, levels: &[u32]) -> Result<Vec<Mesh>> {
    let mut out = Vec::with_capacity(levels.len());
    out.push(generate_scatterer_mesh(geometry, levels[0])?);
    for _ in 1..levels.len() {
        let next = out.last().expect("pushed above").refine_uniform()?;
        out.push(next);
    }
    debug_assert!(out.iter().zip(levels).all(|(m, &l)| m.level == l));
    Ok(out)
}

/// Self-convergence error of the unreduced run on `coarse` against the run
/// on its refinement, streamed in lockstep (two fine steps per coarse step).
fn nc1_pair_error(
    scenario: &Scenario,
    coarse: &Mesh,
    fine: &Mesh,
    cfl_factor: f64,
) -> Result<ConvergenceRow> {
    let h = coarse.max_edge_length();
    let tau = cfl_factor * h;
    // Uniform refinement halves every edge exactly, so the nested fine grid
    // uses exactly half the step; `cfl_factor * fine.max_edge_length()`
    // agrees up to rounding.
    let tau_fine = 0.5 * tau;
    let coarse_run = BenchRun::new(scenario, coarse.clone(), BenchMethod::Nc1, RhsMode::Lifted, tau)?;
    let fine_run = BenchRun::new(scenario, fine.clone(), BenchMethod::Nc1, RhsMode::Lifted, tau_fine)?;
    let transfer = TransferOperator::new(coarse, &coarse_run.full_map, fine, &fine_run.full_map)?;
    let steps = steps_to_reach(scenario.final_time, tau);

    let mut acc = NormAccumulator::new(fine, &fine_run.full_map, tau)?;
    let mut coarse_state = coarse_run.initial_state()?;
    let mut fine_state = fine_run.initial_state()?;
    let mut a_lo = transfer.apply(&coarse_state.e_curr)?;
    let mut r_lo = fine_state.e_curr.clone();
    for _ in 0..steps {
        coarse_run.step(&mut coarse_state)?;
        fine_run.step(&mut fine_state)?;
        fine_run.step(&mut fine_state)?;
        let a_hi = transfer.apply(&coarse_state.e_curr)?;
        let r_hi = fine_state.e_curr.clone();
        acc.push_pair(fine, &fine_run.full_map, &a_lo, &a_hi, &r_lo, &r_hi)?;
        a_lo = a_hi;
        r_lo = r_hi;
    }
    Ok(ConvergenceRow {
        level: coarse.level,
        h,
        dofs: coarse_run.n_dofs(),
        error: acc.value()?,
        eoc: None,
        tau,
    })
}

/// Error of a merged-space run against the unreduced run on the same mesh
/// and step, streamed in lockstep.
fn method_vs_reference_error(
    scenario: &Scenario,
    mesh: &Mesh,
    method: BenchMethod,
    rhs: RhsMode,
    cfl_factor: f64,
) -> Result<ConvergenceRow> {
    let h = mesh.max_edge_length();
    let tau = cfl_factor * h;
    let run = BenchRun::new(scenario, mesh.clone(), method, rhs, tau)?;
    let reference = BenchRun::new(scenario, mesh.clone(), BenchMethod::Nc1, RhsMode::Lifted, tau)?;
    let steps = steps_to_reach(scenario.final_time, tau);

    let mut acc = NormAccumulator::new(mesh, &reference.full_map, tau)?;
    let mut state = run.initial_state()?;
    let mut ref_state = reference.initial_state()?;
    let mut a_lo = run.current_full(&state)?;
    let mut r_lo = ref_state.e_curr.clone();
    for _ in 0..steps {
        run.step(&mut state)?;
        reference.step(&mut ref_state)?;
        let a_hi = run.current_full(&state)?;
        let r_hi = ref_state.e_curr.clone();
        acc.push_pair(mesh, &reference.full_map, &a_lo, &a_hi, &r_lo, &r_hi)?;
        a_lo = a_hi;
        r_lo = r_hi;
    }
    Ok(ConvergenceRow {
        level: mesh.level,
        h,
        dofs: run.n_dofs(),
        error: acc.value()?,
        eoc: None,
        tau,
    })
}

/// Per-element squared lumped-L2 contribution of the difference between a
/// run's final field and the unreduced reference's, used to locate where a
/// merged method concentrates its error.
pub fn final_error_by_element(
    mesh: &Mesh,
    map: &DofMap,
    field: &DofVector,
    reference: &DofVector,
) -> Result<Vec<f64>> {
    if field.data.len() != reference.data.len() {
        return Err(Error::Contract(format!(
            "fields live on different spaces ({} vs {} dofs)",
            field.data.len(),
            reference.data.len()
        )));
    }
    let mut out = vec![0.0; mesh.n_triangles()];
    for t in 0..mesh.n_triangles() {
        let geom = mesh.geometry(t);
        let third = geom.area / 3.0;
        for corner in 0..3 {
            let p = geom.verts[corner];
            let a = eval_in_element(mesh, map, field, t, p);
            let b = eval_in_element(mesh, map, reference, t, p);
            let d = vec2::sub(a, b);
            out[t] += third * vec2::dot(d, d);
        }
    }
    Ok(out)
}

/// One row of the step-bound table.
#[derive(Debug, Clone)]
pub struct CflRow {
    pub level: u32,
    pub h: f64,
    /// Certified step bound over mesh size for the unreduced scheme.
    pub c_nc1: f64,
    /// Same with the conductivity-gap term of the merged scheme included.
    pub c_n0plus: f64,
}

/// Certified step bounds per refinement level, normalised by the mesh size.
///
/// The first column drops the merged scheme's damping-projection gap
/// (`gamma = 0`), the second includes it (`gamma = 1`) with edges merged
/// wherever the conductivity is continuous.  Without conductivity the gap
/// matrix is empty and both columns run the identical code path.
pub fn cfl_table(scenario: &Scenario, levels: &[u32]) -> Result<Vec<CflRow>> {
    scenario.validate()?;
    if levels.len() < 3 {
        return Err(Error::Contract(format!(
            "the step-bound table needs at least three levels, got {}",
            levels.len()
        )));
    }
    if levels.windows(2).any(|w| w[1] != w[0] + 1) {
        return Err(Error::Contract(format!(
            "levels must be consecutive, got {levels:?}"
        )));
    }
    let meshes = mesh_ladder(&scenario.geometry, levels)?;
    // Levels are independent; estimate them in parallel and report in order.
    std::thread::scope(|scope| {
        let handles: Vec<_> = meshes
            .iter()
            .map(|mesh| scope.spawn(move || cfl_row(scenario, mesh)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("level worker panicked"))
            .collect()
    })
}

/// Both certified bounds of one refinement level.
fn cfl_row(scenario: &Scenario, mesh: &Mesh) -> Result<CflRow> {
    let h = mesh.max_edge_length();
    let materials = scenario.materials(mesh)?;
    let map = DofMap::full(mesh);
    let bracket = crate::timestep::default_step_bracket(mesh, &materials);
    let tau0 = crate::timestep::estimate_tau_max(mesh, &map, &materials, None, 0.0, bracket)?;
    let set = classify_reduced_edges(mesh, &materials, &ReductionPolicy::SigmaContinuous)?;
    let reduced_map = DofMap::reduced(mesh, &set);
    let reduction = Reduction::new(mesh, &map, &reduced_map)?;
    let tau1 =
        crate::timestep::estimate_tau_max(mesh, &map, &materials, Some(&reduction), 1.0, bracket)?;
    Ok(CflRow {
        level: mesh.level,
        h,
        c_nc1: tau0 / h,
        c_n0plus: tau1 / h,
    })
}

/// Snapshot export format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotFormat {
    Csv,
    VtkLegacy,
}

impl SnapshotFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(SnapshotFormat::Csv),
            "vtk" | "vtk-legacy" => Ok(SnapshotFormat::VtkLegacy),
            other => Err(Error::Config(format!(
                "unknown snapshot format '{other}' (expected csv or vtk-legacy)"
            ))),
        }
    }
}

/// Finds the recorded snapshot nearest to `t`; accepted when within half a
/// step of the request.
fn find_snapshot<'a>(record: &'a SolutionRecord, t: f64) -> Result<&'a (usize, DofVector)> {
    let best = record
        .snapshots
        .iter()
        .min_by(|a, b| {
            let da = (a.0 as f64 * record.tau - t).abs();
            let db = (b.0 as f64 * record.tau - t).abs();
            da.partial_cmp(&db).expect("finite times")
        })
        .ok_or_else(|| Error::SnapshotLookup {
            t,
            msg: "the run recorded no snapshots".into(),
        })?;
    let t_best = best.0 as f64 * record.tau;
    if (t_best - t).abs() > 0.5 * record.tau * (1.0 + 1e-9) {
        let available: Vec<String> = record
            .snapshots
            .iter()
            .map(|(s, _)| format!("{:.6}", *s as f64 * record.tau))
            .collect();
        return Err(Error::SnapshotLookup {
            t,
            msg: format!("recorded times: {}", available.join(", ")),
        });
    }
    Ok(best)
}

/// Renders the snapshot nearest `t` as centroid samples.
///
/// The CSV has the header `cx,cy,Ex,Ey,|E|,curlE` and one row per triangle;
/// the VTK variant is a legacy-format ASCII unstructured grid with the same
/// quantities as cell data.
pub fn export_snapshot(
    mesh: &Mesh,
    map: &DofMap,
    record: &SolutionRecord,
    t: f64,
    format: SnapshotFormat,
) -> Result<String> {
    let (_, field) = find_snapshot(record, t)?;
    field.check(map)?;
    match format {
        SnapshotFormat::Csv => {
            let mut out = String::from("cx,cy,Ex,Ey,|E|,curlE\n");
            for t in 0..mesh.n_triangles() {
                let geom = mesh.geometry(t);
                let c = geom.centroid();
                let e = eval_in_element(mesh, map, field, t, c);
                let mag = vec2::norm(e);
                let curl = curl_in_element(mesh, map, field, t);
                writeln!(out, "{},{},{},{},{},{}", c[0], c[1], e[0], e[1], mag, curl)
                    .expect("string writes cannot fail");
            }
            Ok(out)
        }
        SnapshotFormat::VtkLegacy => {
            let mut out = String::new();
            out.push_str("# vtk DataFile Version 3.0\n");
            out.push_str("electric field snapshot\n");
            out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
            writeln!(out, "POINTS {} double", mesh.n_vertices()).unwrap();
            for v in &mesh.vertices {
                writeln!(out, "{} {} 0", v[0], v[1]).unwrap();
            }
            writeln!(out, "CELLS {} {}", mesh.n_triangles(), 4 * mesh.n_triangles()).unwrap();
            for tri in &mesh.triangles {
                writeln!(out, "3 {} {} {}", tri[0], tri[1], tri[2]).unwrap();
            }
            writeln!(out, "CELL_TYPES {}", mesh.n_triangles()).unwrap();
            for _ in 0..mesh.n_triangles() {
                out.push_str("5\n");
            }
            writeln!(out, "CELL_DATA {}", mesh.n_triangles()).unwrap();
            out.push_str("VECTORS E double\n");
            let mut mags = Vec::with_capacity(mesh.n_triangles());
            let mut curls = Vec::with_capacity(mesh.n_triangles());
            for t in 0..mesh.n_triangles() {
                let geom = mesh.geometry(t);
                let e = eval_in_element(mesh, map, field, t, geom.centroid());
                writeln!(out, "{} {} 0", e[0], e[1]).unwrap();
                mags.push(vec2::norm(e));
                curls.push(curl_in_element(mesh, map, field, t));
            }
            out.push_str("SCALARS Emag double 1\nLOOKUP_TABLE default\n");
            for m in &mags {
                writeln!(out, "{m}").unwrap();
            }
            out.push_str("SCALARS curlE double 1\nLOOKUP_TABLE default\n");
            for c in &curls {
                writeln!(out, "{c}").unwrap();
            }
            Ok(out)
        }
    }
}

/// Renders a convergence table as CSV with the header `h,dofs,error,eoc`
/// (empty eoc on the first row).
pub fn convergence_csv(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from("h,dofs,error,eoc\n");
    for r in rows {
        let eoc = r.eoc.map(|e| format!("{e}")).unwrap_or_default();
        writeln!(out, "{},{},{},{}", r.h, r.dofs, r.error, eoc)
            .expect("string writes cannot fail");
    }
    out
}

/// Renders the step-bound table as CSV with the header `h,C_nc1,C_n0plus`.
pub fn cfl_csv(rows: &[CflRow]) -> String {
    let mut out = String::from("h,C_nc1,C_n0plus\n");
    for r in rows {
        writeln!(out, "{},{},{}", r.h, r.c_nc1, r.c_n0plus).expect("string writes cannot fail");
    }
    out
}

/// Renders an energy trace as CSV with the header
/// `step,t,kinetic,curl,corr1,corr2,total`.
pub fn energy_csv(entries: &[crate::timestep::EnergyTraceEntry]) -> String {
    let mut out = String::from("step,t,kinetic,curl,corr1,corr2,total\n");
    for e in entries {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.step, e.t, e.kinetic, e.curl, e.corr_curl, e.corr_sigma, e.total
        )
        .expect("string writes cannot fail");
    }
    out
}
