//! Monolithic time stepping: coupled residual and Jacobian assembly over the
//! fluid, structure, mesh-motion, and interface blocks, plus the damped
//! Newton iteration of one implicit step.
//!
//! Row indexing equals unknown indexing: every unmasked state slot owns
//! exactly one residual row (fluid momentum on velocity slots, continuity on
//! pressure slots, displacement-velocity relations on displacement slots,
//! stiffness or interface-constraint rows on mesh slots). Assembly first
//! accumulates a state-length vector, then masked slots are dropped.
//!
//! The default Jacobian freezes the geometry caches (no shape derivatives)
//! but is exact in every field unknown at that geometry; since the residual
//! itself always sees the current geometry, converged states satisfy the full
//! nonlinear system. A directional finite-difference mode audits the analytic
//! blocks column by column.

use std::io::{Read as _, Write as _};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::dofs::{DofMap, MeshNodeClass};
use crate::fluid::{
    convective, geometric_matrix, incompressibility_matrix, mass_matrix_now,
    momentum_time_residual, stabilization_matrix, stress_blocks, FluidElemCtx, Scheme,
};
use crate::geometry::{
    eval_geometry, AleGeometry, FacetSideGeom, GeometryError, RefTables, Vec2, J_MIN_DEFAULT,
};
use crate::linalg::{lu_factor_with, lu_solve_factored, lu_symbolic, LinAlgError, LuSymbolic, SparseMatrix};
use crate::manufactured::{FluidMaterial, ManufacturedSolution, SolidMaterial};
use crate::mesh::{BoundaryLabel, FacetKind, Mesh};
use crate::motion::{assemble_motion, interface_bc_values, solve_motion, MotionStiffness};
use crate::structure::{
    du_residuals, momentum_residual as structure_momentum, structure_blocks, StructureBlocks,
    StructureParams,
};

#[derive(Debug, Clone, Copy)]
pub struct PhysicalParams {
    pub rho_f: f64,
    pub mu_f: f64,
    pub rho_s: f64,
    pub mu_s: f64,
    pub lambda_s: f64,
    /// Mesh-motion diffusivity.
    pub kappa: f64,
}

impl PhysicalParams {
    pub fn unit() -> Self {
        Self { rho_f: 1.0, mu_f: 1.0, rho_s: 1.0, mu_s: 1.0, lambda_s: 1.0, kappa: 1.0 }
    }

    pub fn validate(&self) {
        let all = [self.rho_f, self.mu_f, self.rho_s, self.mu_s, self.lambda_s, self.kappa];
        assert!(
            all.iter().all(|v| *v > 0.0 && v.is_finite()),
            "physical parameters must be strictly positive and finite: {self:?}"
        );
    }
}

/// Uniform division of [0, T] into N steps.
#[derive(Debug, Clone, Copy)]
pub struct TimeGrid {
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn tau(&self) -> f64 {
        assert!(self.n_steps > 0, "step size of an empty time grid");
        self.t_end / self.n_steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if self.n_steps == 0 {
            return 0.0;
        }
        self.t_end * n as f64 / self.n_steps as f64
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonCfg {
    /// l2 residual tolerance.
    pub tol: f64,
    pub max_iters: usize,
    /// Step halvings allowed per iteration when the residual fails to drop.
    pub max_halvings: usize,
}

impl Default for NewtonCfg {
    fn default() -> Self {
        Self { tol: 1e-6, max_iters: 20, max_halvings: 5 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct NewtonTrace {
    /// Residual norms, starting with the pre-iteration norm.
    pub residual_norms: Vec<f64>,
    pub iterations: usize,
    pub damping_events: usize,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("newton did not converge within {max_iters} iterations at t = {t}: residual {residual:.3e}")]
    NewtonDiverged { max_iters: usize, t: f64, residual: f64 },
    #[error(transparent)]
    Mesh(#[from] GeometryError),
    #[error(transparent)]
    Linear(#[from] LinAlgError),
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<SolverError>,
    },
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
}

type SpaceTimeFn = Box<dyn Fn(Vec2, f64) -> Vec2>;

/// Volume, mesh, and interface forcing callables. The interface callable
/// receives the reference point, the time, and the fluid-side outward
/// reference normal, and returns the traction mismatch it must balance.
pub struct Sources {
    pub fluid: Option<SpaceTimeFn>,
    pub solid: Option<SpaceTimeFn>,
    pub motion: Option<SpaceTimeFn>,
    pub interface: Option<Box<dyn Fn(Vec2, f64, Vec2) -> Vec2>>,
}

impl Sources {
    pub fn none() -> Self {
        Self { fluid: None, solid: None, motion: None, interface: None }
    }

    pub fn body_force(f: impl Fn(Vec2, f64) -> Vec2 + 'static) -> Self {
        Self { fluid: Some(Box::new(f)), solid: None, motion: None, interface: None }
    }

    /// Forcing family of the smooth reference solution, matched to the given
    /// physical parameters.
    pub fn manufactured(params: &PhysicalParams) -> Self {
        let fm = FluidMaterial { rho_f: params.rho_f, mu_f: params.mu_f };
        let sm = SolidMaterial {
            rho_s: params.rho_s,
            mu_s: params.mu_s,
            lambda_s: params.lambda_s,
        };
        let kappa = params.kappa;
        let (m1, m2, m3, m4) = (
            ManufacturedSolution::new(),
            ManufacturedSolution::new(),
            ManufacturedSolution::new(),
            ManufacturedSolution::new(),
        );
        Self {
            fluid: Some(Box::new(move |x, t| m1.fluid_forcing(&fm, x, t))),
            solid: Some(Box::new(move |x, t| m2.structure_forcing(&sm, x, t))),
            motion: Some(Box::new(move |x, t| m3.motion_forcing(kappa, x, t))),
            interface: Some(Box::new(move |x, t, n| m4.interface_traction_gap(&fm, &sm, x, t, n))),
        }
    }
}

/// Full coefficient vector at one time level, including Dirichlet slots
/// (which hold boundary values, never unknowns).
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState {
    pub values: Vec<f64>,
}

impl SystemState {
    pub fn zeros(dm: &DofMap) -> Self {
        Self { values: vec![0.0; dm.state_len] }
    }

    pub fn eta_nodes(&self, dm: &DofMap) -> Vec<Vec2> {
        (0..dm.mesh_nodes.coords.len())
            .map(|n| {
                let r = dm.mesh_disp_node(n);
                [self.values[r.start], self.values[r.start + 1]]
            })
            .collect()
    }
}

/// Immutable problem definition plus per-run caches (structure element
/// blocks and the mesh-motion stiffness are geometry-independent).
pub struct Problem {
    pub mesh: Mesh,
    pub dm: DofMap,
    pub tab: RefTables,
    pub params: PhysicalParams,
    pub scheme: Scheme,
    pub newton: NewtonCfg,
    pub sources: Sources,
    /// Dirichlet velocity on Inlet facets, interpolated at trace nodes.
    pub inflow: Option<SpaceTimeFn>,
    /// Test mode: mesh motion bypassed, eta held at zero by identity rows.
    pub frozen_geometry: bool,
    /// Test mode: drop the convective form (Stokes-like linear problem).
    pub include_convection: bool,
    pub j_min: f64,
    pub(crate) sblocks: Vec<StructureBlocks>,
    motion: MotionStiffness,
    /// Pattern analysis of the Newton matrix, built on first factorization.
    /// The sparsity structure is fixed by the discretization, not the state.
    lu_symbolic: std::cell::OnceCell<LuSymbolic>,
}

impl Problem {
    pub fn new(mesh: Mesh, k: usize, params: PhysicalParams, scheme: Scheme) -> Self {
        params.validate();
        let dm = DofMap::build(&mesh, k);
        let tab = RefTables::build(k, 2 * k + 4, 2 * k + 4);
        let sblocks = dm
            .solid_elements
            .iter()
            .map(|&e| structure_blocks(&mesh, &tab, e))
            .collect();
        let kappa = params.kappa;
        let motion = assemble_motion(&mesh, &dm, &tab, &move |_| kappa);
        Self {
            mesh,
            dm,
            tab,
            params,
            scheme,
            newton: NewtonCfg::default(),
            sources: Sources::none(),
            inflow: None,
            frozen_geometry: false,
            include_convection: true,
            j_min: J_MIN_DEFAULT,
            sblocks,
            motion,
            lu_symbolic: std::cell::OnceCell::new(),
        }
    }

    fn struct_params(&self) -> StructureParams {
        StructureParams {
            rho_s: self.params.rho_s,
            mu_s: self.params.mu_s,
            lambda_s: self.params.lambda_s,
        }
    }

    /// Geometry caches for the mesh displacement stored in a state.
    pub fn geometry_for(&self, state: &SystemState) -> Result<AleGeometry, GeometryError> {
        let eta = if self.frozen_geometry {
            vec![[0.0; 2]; self.dm.mesh_nodes.coords.len()]
        } else {
            state.eta_nodes(&self.dm)
        };
        eval_geometry(&self.mesh, &self.dm, &self.tab, &eta, self.j_min)
    }

    /// Writes Dirichlet values for time t into the masked state slots.
    pub fn apply_dirichlet(&self, state: &mut SystemState, t: f64) {
        let dm = &self.dm;
        let k = dm.k;
        for (fi, facet) in self.mesh.facets().iter().enumerate() {
            match facet.kind {
                FacetKind::Boundary(BoundaryLabel::FluidWall) => {
                    for s in dm.fluid_vtrace(fi) {
                        state.values[s] = 0.0;
                    }
                }
                FacetKind::Boundary(BoundaryLabel::Inlet) => {
                    let r = dm.fluid_vtrace(fi);
                    let [lo, hi] = facet.vertices;
                    let (a, b) = (self.mesh.vertices()[lo], self.mesh.vertices()[hi]);
                    for i in 0..dm.nt {
                        let s = i as f64 / k as f64;
                        let p = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
                        let v = self.inflow.as_ref().map_or([0.0; 2], |f| f(p, t));
                        state.values[r.start + 2 * i] = v[0];
                        state.values[r.start + 2 * i + 1] = v[1];
                    }
                }
                FacetKind::Boundary(BoundaryLabel::SolidClamp) => {
                    for s in dm.struct_vtrace(fi).chain(dm.struct_dtrace(fi)) {
                        state.values[s] = 0.0;
                    }
                }
                _ => {}
            }
        }
        for (node, class) in dm.mesh_nodes.class.iter().enumerate() {
            if *class == MeshNodeClass::OuterBoundary {
                for s in dm.mesh_disp_node(node) {
                    state.values[s] = 0.0;
                }
            }
        }
    }
}

pub(crate) fn gather(state: &SystemState, map: &[usize]) -> Vec<f64> {
    map.iter().map(|&s| state.values[s]).collect()
}

/// State slots of a fluid element's velocity pair in local layout order.
pub(crate) fn fluid_vel_map(mesh: &Mesh, dm: &DofMap, e: usize) -> Vec<usize> {
    let mut m: Vec<usize> = dm.fluid_vel(e).collect();
    for fi in mesh.triangle_facets(e) {
        m.extend(dm.fluid_vtrace(fi));
    }
    m
}

pub(crate) fn fluid_pres_map(mesh: &Mesh, dm: &DofMap, e: usize) -> Vec<usize> {
    let mut m: Vec<usize> = dm.fluid_pres(e).collect();
    for fi in mesh.triangle_facets(e) {
        m.extend(dm.fluid_ptrace(fi));
    }
    m
}

pub(crate) fn solid_vel_map(mesh: &Mesh, dm: &DofMap, e: usize) -> Vec<usize> {
    let mut m: Vec<usize> = dm.struct_vel(e).collect();
    for fi in mesh.triangle_facets(e) {
        m.extend(dm.struct_vtrace(fi));
    }
    m
}

pub(crate) fn solid_disp_map(mesh: &Mesh, dm: &DofMap, e: usize) -> Vec<usize> {
    let mut m: Vec<usize> = dm.struct_disp(e).collect();
    for fi in mesh.triangle_facets(e) {
        m.extend(dm.struct_dtrace(fi));
    }
    m
}

/// Current-step assembly context of one fluid element.
pub(crate) fn fluid_ctx<'a>(problem: &'a Problem, geo: &'a AleGeometry, e: usize) -> FluidElemCtx<'a> {
    let dm = &problem.dm;
    let facets = problem.mesh.triangle_facets(e);
    let mut sides: Vec<&FacetSideGeom> = Vec::with_capacity(3);
    let mut ref_len = [0.0; 3];
    let mut s1 = [0.0; 3];
    for (le, &fi) in facets.iter().enumerate() {
        let fg = &geo.facets[dm.fluid_facet_position(fi)];
        sides.push(
            fg.sides
                .iter()
                .find(|s| s.element == e)
                .expect("element is listed on its own facet"),
        );
        ref_len[le] = fg.ref_len;
        s1[le] = 1.0 / fg.ref_len;
    }
    FluidElemCtx {
        tab: &problem.tab,
        eg: &geo.elems[dm.fluid_elem_position(e)],
        sides: [sides[0], sides[1], sides[2]],
        ref_len,
        s1,
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Accumulates the full coupled residual (state-length) and optionally the
/// exact frozen-geometry Jacobian triplets (state-indexed).
#[allow(clippy::too_many_arguments)]
fn assemble_full(
    problem: &Problem,
    scheme: Scheme,
    state: &SystemState,
    state_prev: &SystemState,
    geo: &AleGeometry,
    geo_prev: &AleGeometry,
    tau: f64,
    t: f64,
    want_jac: bool,
) -> (Vec<f64>, Vec<(usize, usize, f64)>) {
    let dm = &problem.dm;
    let tab = &problem.tab;
    let mesh = &problem.mesh;
    let p = problem.params;
    let (np, nt, npm) = (tab.np_k, tab.nt, tab.np_km1);
    let mut r = vec![0.0; dm.state_len];
    let mut trips: Vec<(usize, usize, f64)> = Vec::new();

    // Fluid elements: momentum rows on velocity slots, continuity rows on
    // pressure slots.
    for (pos, &e) in dm.fluid_elements.iter().enumerate() {
        let ctx = fluid_ctx(problem, geo, e);
        let eg_prev = &geo_prev.elems[pos];
        let vmap = fluid_vel_map(mesh, dm, e);
        let pmap = fluid_pres_map(mesh, dm, e);
        let x = gather(state, &vmap);
        let pl = gather(state, &pmap);
        let u_prev = gather(state_prev, &dm.fluid_vel(e).collect::<Vec<_>>());
        let xv = DVector::from_column_slice(&x);

        let rt = momentum_time_residual(scheme, &ctx, eg_prev, tau, p.rho_f, &x[..2 * np], &u_prev);
        for i in 0..2 * np {
            r[vmap[i]] += rt[i];
        }

        let sb = stress_blocks(&ctx);
        let stab = stabilization_matrix(&ctx);
        let rv = &sb.visc * &xv * (2.0 * p.rho_f * p.mu_f) + &stab * &xv * (p.rho_f * p.mu_f);
        for (i, &s) in vmap.iter().enumerate() {
            r[s] += rv[i];
        }

        let c2 = incompressibility_matrix(&ctx);
        let plv = DVector::from_column_slice(&pl);
        let rp = c2.transpose() * &plv;
        for (i, &s) in vmap.iter().enumerate() {
            r[s] -= rp[i];
        }
        let rc = &c2 * &xv;
        for (a, &s) in pmap.iter().enumerate() {
            r[s] += rc[a];
        }

        if problem.include_convection {
            // Discrete domain velocity at the shared quadrature points.
            let w_vol: Vec<Vec2> = ctx
                .eg
                .qp
                .iter()
                .zip(&eg_prev.qp)
                .map(|(qn, qp)| {
                    [(qn.eta[0] - qp.eta[0]) / tau, (qn.eta[1] - qp.eta[1]) / tau]
                })
                .collect();
            let mut w_fac: [Vec<Vec2>; 3] = [Vec::new(), Vec::new(), Vec::new()];
            for (le, fi) in mesh.triangle_facets(e).into_iter().enumerate() {
                let fpos = dm.fluid_facet_position(fi);
                let prev_side = geo_prev.facets[fpos]
                    .sides
                    .iter()
                    .find(|s| s.element == e)
                    .expect("element is listed on its own facet");
                w_fac[le] = ctx.sides[le]
                    .qp
                    .iter()
                    .zip(&prev_side.qp)
                    .map(|(qn, qp)| {
                        [(qn.eta[0] - qp.eta[0]) / tau, (qn.eta[1] - qp.eta[1]) / tau]
                    })
                    .collect();
            }
            let (cres, cjac) =
                convective(&ctx, &w_vol, [&w_fac[0], &w_fac[1], &w_fac[2]], &x);
            for (i, &s) in vmap.iter().enumerate() {
                r[s] += p.rho_f * cres[i];
            }
            if want_jac {
                for i in 0..vmap.len() {
                    for j in 0..vmap.len() {
                        let v = p.rho_f * cjac[(i, j)];
                        if v != 0.0 {
                            trips.push((vmap[i], vmap[j], v));
                        }
                    }
                }
            }
        }

        if let Some(gf) = &problem.sources.fluid {
            // (g, v)_K on the deformed element: the 1/J of the Piola test and
            // the J of the measure cancel.
            for (q, qp) in ctx.eg.qp.iter().enumerate() {
                let w = ctx.eg.qw[q];
                let xd = [qp.xref[0] + qp.eta[0], qp.xref[1] + qp.eta[1]];
                let g = gf(xd, t);
                for i in 0..np {
                    let phi = tab.tri.values[q * np + i];
                    for c in 0..2 {
                        let fv = [qp.f[0][c] * phi, qp.f[1][c] * phi];
                        r[vmap[2 * i + c]] -= w * (g[0] * fv[0] + g[1] * fv[1]);
                    }
                }
            }
        }

        if want_jac {
            let m = mass_matrix_now(&ctx);
            let gm = geometric_matrix(scheme, &ctx, eg_prev, tau);
            for i in 0..2 * np {
                for j in 0..2 * np {
                    let v = p.rho_f / tau * m[(i, j)] + p.rho_f * gm[(i, j)];
                    if v != 0.0 {
                        trips.push((vmap[i], vmap[j], v));
                    }
                }
            }
            for i in 0..vmap.len() {
                for j in 0..vmap.len() {
                    let v = 2.0 * p.rho_f * p.mu_f * sb.visc[(i, j)]
                        + p.rho_f * p.mu_f * stab[(i, j)];
                    if v != 0.0 {
                        trips.push((vmap[i], vmap[j], v));
                    }
                }
            }
            for a in 0..pmap.len() {
                for i in 0..vmap.len() {
                    let v = c2[(a, i)];
                    if v != 0.0 {
                        trips.push((vmap[i], pmap[a], -v));
                        trips.push((pmap[a], vmap[i], v));
                    }
                }
            }
        }
    }

    // Solid elements: momentum rows on velocity slots (interface traces land
    // in the shared fluid rows), displacement-velocity rows on displacement
    // slots.
    let sp = problem.struct_params();
    for (pos, &e) in dm.solid_elements.iter().enumerate() {
        let blocks = &problem.sblocks[pos];
        let umap = solid_vel_map(mesh, dm, e);
        let dmap = solid_disp_map(mesh, dm, e);
        let u = gather(state, &umap);
        let d = gather(state, &dmap);
        let u_prev = gather(state_prev, &dm.struct_vel(e).collect::<Vec<_>>());
        let d_prev = gather(state_prev, &dmap);

        let rm = structure_momentum(blocks, &sp, tau, &u, &u_prev, &d);
        for (i, &s) in umap.iter().enumerate() {
            r[s] += rm[i];
        }
        let (rde, rdf) = du_residuals(blocks, tau, &d, &d_prev, &u);
        for i in 0..2 * np {
            r[dmap[i]] += rde[i];
        }
        for le in 0..3 {
            let base = 2 * np + le * 2 * nt;
            for i in 0..2 * nt {
                r[dmap[base + i]] += rdf[le][i];
            }
        }

        if let Some(gs) = &problem.sources.solid {
            let (origin, jac) = mesh.element_map(e);
            let detb = (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]).abs();
            for (q, wq) in tab.vol_w.iter().enumerate() {
                let xi = tab.vol_pts[q];
                let x = [
                    origin[0] + jac[0][0] * xi[0] + jac[0][1] * xi[1],
                    origin[1] + jac[1][0] * xi[0] + jac[1][1] * xi[1],
                ];
                let g = gs(x, t);
                let w = wq * detb;
                for i in 0..np {
                    let phi = tab.tri.values[q * np + i];
                    for c in 0..2 {
                        r[umap[2 * i + c]] -= w * phi * g[c];
                    }
                }
            }
        }

        if want_jac {
            // Momentum rows: time term in element velocity, elastic terms in
            // the displacement pair.
            for i in 0..np {
                for j in 0..np {
                    let v = sp.rho_s / tau * blocks.mass[(i, j)];
                    if v != 0.0 {
                        for c in 0..2 {
                            trips.push((umap[2 * i + c], umap[2 * j + c], v));
                        }
                    }
                }
            }
            let ndl = blocks.n_pair();
            for i in 0..ndl {
                for j in 0..ndl {
                    let v = 2.0 * sp.mu_s * blocks.visc[(i, j)] + sp.mu_s * blocks.stab[(i, j)];
                    if v != 0.0 {
                        trips.push((umap[i], dmap[j], v));
                    }
                }
            }
            for i in 0..2 * np {
                for j in 0..2 * np {
                    let v = sp.lambda_s * blocks.divdiv[(i, j)];
                    if v != 0.0 {
                        trips.push((umap[i], dmap[j], v));
                    }
                }
            }
            // Displacement-velocity rows.
            for i in 0..np {
                for j in 0..np {
                    let v = blocks.mass[(i, j)];
                    if v != 0.0 {
                        for c in 0..2 {
                            trips.push((dmap[2 * i + c], dmap[2 * j + c], v / tau));
                            trips.push((dmap[2 * i + c], umap[2 * j + c], -v));
                        }
                    }
                }
            }
            for le in 0..3 {
                let base = 2 * np + le * 2 * nt;
                for i in 0..nt {
                    for j in 0..nt {
                        let v = blocks.facet_mass[le][(i, j)];
                        if v != 0.0 {
                            for c in 0..2 {
                                trips.push((
                                    dmap[base + 2 * i + c],
                                    dmap[base + 2 * j + c],
                                    v / tau,
                                ));
                                trips.push((dmap[base + 2 * i + c], umap[base + 2 * j + c], -v));
                            }
                        }
                    }
                }
            }
        }
    }

    // Mesh-motion rows on mesh-displacement slots.
    if problem.frozen_geometry {
        for node in 0..dm.mesh_nodes.coords.len() {
            if dm.mesh_nodes.class[node] != MeshNodeClass::OuterBoundary {
                for s in dm.mesh_disp_node(node) {
                    r[s] += state.values[s];
                    if want_jac {
                        trips.push((s, s, 1.0));
                    }
                }
            }
        }
    } else {
        for &(i, j, w) in &problem.motion.triplets {
            if dm.mesh_nodes.class[i] == MeshNodeClass::Interior {
                let ri = dm.mesh_disp_node(i).start;
                let cj = dm.mesh_disp_node(j).start;
                for c in 0..2 {
                    r[ri + c] += w * state.values[cj + c];
                    if want_jac {
                        trips.push((ri + c, cj + c, w));
                    }
                }
            }
        }
        if let Some(gd) = &problem.sources.motion {
            for (pos, &e) in dm.fluid_elements.iter().enumerate() {
                let nodes = &dm.mesh_nodes.elem_nodes[pos];
                let (origin, jac) = mesh.element_map(e);
                let detb = (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]).abs();
                for (q, wq) in tab.vol_w.iter().enumerate() {
                    let xi = tab.vol_pts[q];
                    let x = [
                        origin[0] + jac[0][0] * xi[0] + jac[0][1] * xi[1],
                        origin[1] + jac[1][0] * xi[0] + jac[1][1] * xi[1],
                    ];
                    let g = gd(x, t);
                    let w = wq * detb;
                    for (i, &node) in nodes.iter().enumerate() {
                        if dm.mesh_nodes.class[node] != MeshNodeClass::Interior {
                            continue;
                        }
                        let phi = tab.tri.values[q * np + i];
                        let base = dm.mesh_disp_node(node).start;
                        r[base] -= w * phi * g[0];
                        r[base + 1] -= w * phi * g[1];
                    }
                }
            }
        }
        // Interface nodes track the averaged displacement trace.
        for cstr in &dm.mesh_nodes.interface_constraints {
            let base = dm.mesh_disp_node(cstr.node).start;
            for c in 0..2 {
                r[base + c] += state.values[base + c];
                if want_jac {
                    trips.push((base + c, base + c, 1.0));
                }
                for &(facet, idx, wgt) in &cstr.terms {
                    let col = dm.struct_dtrace(facet).start + 2 * idx + c;
                    r[base + c] -= wgt * state.values[col];
                    if want_jac {
                        trips.push((base + c, col, -wgt));
                    }
                }
            }
        }
    }

    // Interface traction mismatch, tested against the shared velocity trace
    // with the reference facet measure.
    if let Some(gi) = &problem.sources.interface {
        for &fi in &dm.interface_facets {
            let fg = &geo.facets[dm.fluid_facet_position(fi)];
            let side = &fg.sides[0];
            let base = dm.fluid_vtrace(fi).start;
            for (q, wq) in tab.seg_w.iter().enumerate() {
                let qp = &side.qp[q];
                let g = gi(qp.xref, t, qp.nref);
                let w = wq * fg.ref_len;
                for i in 0..nt {
                    let psi = tab.seg.values[q * nt + i];
                    r[base + 2 * i] -= w * psi * g[0];
                    r[base + 2 * i + 1] -= w * psi * g[1];
                }
            }
        }
    }

    // Mean-pressure gauge for enclosed all-fluid domains: symmetric coupling
    // between the multiplier and the deformed-domain pressure mean.
    if let Some(gslot) = dm.gauge() {
        let gamma = state.values[gslot];
        for (pos, &e) in dm.fluid_elements.iter().enumerate() {
            let eg = &geo.elems[pos];
            let prange: Vec<usize> = dm.fluid_pres(e).collect();
            for (q, qp) in eg.qp.iter().enumerate() {
                let w = eg.qw[q] * qp.j;
                for (a, &s) in prange.iter().enumerate() {
                    let qv = tab.tri_pm1.values[q * npm + a];
                    if qv == 0.0 {
                        continue;
                    }
                    r[s] += gamma * w * qv;
                    r[gslot] += w * qv * state.values[s];
                    if want_jac {
                        trips.push((s, gslot, w * qv));
                        trips.push((gslot, s, w * qv));
                    }
                }
            }
        }
    }

    (r, trips)
}

fn compress(dm: &DofMap, full: &[f64]) -> Vec<f64> {
    (0..dm.n_unknowns()).map(|u| full[dm.state_of(u)]).collect()
}

/// Coupled residual over unknowns. A pure function of its inputs: identical
/// inputs give bitwise-identical output.
#[allow(clippy::too_many_arguments)]
pub fn assemble_residual(
    problem: &Problem,
    scheme: Scheme,
    state: &SystemState,
    state_prev: &SystemState,
    geo: &AleGeometry,
    geo_prev: &AleGeometry,
    tau: f64,
    t: f64,
) -> Vec<f64> {
    let (r, _) = assemble_full(problem, scheme, state, state_prev, geo, geo_prev, tau, t, false);
    compress(&problem.dm, &r)
}

pub enum JacobianMode<'a> {
    /// Exact derivatives of all field unknowns at frozen geometry caches.
    GeometryLagged,
    /// The listed unknown columns replaced by central differences of the
    /// residual (audit mode; geometry inputs stay fixed, like the analytic
    /// Jacobian differentiates).
    DirectionalFd { columns: &'a [usize], eps: f64 },
}

#[allow(clippy::too_many_arguments)]
pub fn assemble_jacobian(
    problem: &Problem,
    scheme: Scheme,
    state: &SystemState,
    state_prev: &SystemState,
    geo: &AleGeometry,
    geo_prev: &AleGeometry,
    tau: f64,
    t: f64,
    mode: JacobianMode,
) -> Result<SparseMatrix, LinAlgError> {
    let dm = &problem.dm;
    let n = dm.n_unknowns();
    let (_, trips) = assemble_full(problem, scheme, state, state_prev, geo, geo_prev, tau, t, true);
    let mut reduced: Vec<(usize, usize, f64)> = Vec::with_capacity(trips.len());
    for (rs, cs, v) in trips {
        if let (Some(ru), Some(cu)) = (dm.unknown_of(rs), dm.unknown_of(cs)) {
            reduced.push((ru, cu, v));
        }
    }
    if let JacobianMode::DirectionalFd { columns, eps } = mode {
        let replaced: std::collections::HashSet<usize> = columns.iter().copied().collect();
        reduced.retain(|(_, c, _)| !replaced.contains(c));
        for &col in columns {
            let slot = dm.state_of(col);
            let h = eps * (1.0 + state.values[slot].abs());
            let mut sp = state.clone();
            sp.values[slot] += h;
            let rp = assemble_residual(problem, scheme, &sp, state_prev, geo, geo_prev, tau, t);
            let mut sm = state.clone();
            sm.values[slot] -= h;
            let rm = assemble_residual(problem, scheme, &sm, state_prev, geo, geo_prev, tau, t);
            for row in 0..n {
                let v = (rp[row] - rm[row]) / (2.0 * h);
                if v != 0.0 {
                    reduced.push((row, col, v));
                }
            }
        }
    }
    SparseMatrix::from_triplets(n, n, &reduced)
}

/// One implicit step by damped Newton. The geometry caches are re-evaluated
/// from the updated mesh displacement at every trial point, so the converged
/// residual is the full nonlinear one.
pub fn solve_timestep(
    problem: &Problem,
    scheme: Scheme,
    state_prev: &SystemState,
    geo_prev: &AleGeometry,
    tau: f64,
    t: f64,
) -> Result<(SystemState, AleGeometry, NewtonTrace), SolverError> {
    let dm = &problem.dm;
    let cfg = problem.newton;
    let mut state = state_prev.clone();
    problem.apply_dirichlet(&mut state, t);
    let mut geo = problem.geometry_for(&state)?;
    let mut resid = assemble_residual(problem, scheme, &state, state_prev, &geo, geo_prev, tau, t);
    let mut norm = l2(&resid);
    let mut trace = NewtonTrace {
        residual_norms: vec![norm],
        iterations: 0,
        damping_events: 0,
    };

    while norm > cfg.tol {
        if trace.iterations >= cfg.max_iters {
            return Err(SolverError::NewtonDiverged {
                max_iters: cfg.max_iters,
                t,
                residual: norm,
            });
        }
        let jac = assemble_jacobian(
            problem,
            scheme,
            &state,
            state_prev,
            &geo,
            geo_prev,
            tau,
            t,
            JacobianMode::GeometryLagged,
        )?;
        let neg: Vec<f64> = resid.iter().map(|v| -v).collect();
        let symbolic = match problem.lu_symbolic.get() {
            Some(s) => s,
            None => {
                let s = lu_symbolic(&jac)?;
                problem.lu_symbolic.get_or_init(|| s)
            }
        };
        let factor = lu_factor_with(symbolic, &jac)?;
        let delta = lu_solve_factored(&jac, &factor, &neg)?;

        // Damped update: halve until the residual decreases; if it never
        // does, take the best valid trial seen.
        let mut alpha = 1.0;
        let mut best: Option<(SystemState, AleGeometry, Vec<f64>, f64)> = None;
        let mut last_mesh_err = None;
        for attempt in 0..=cfg.max_halvings {
            let mut trial = state.clone();
            for (u, dv) in delta.iter().enumerate() {
                trial.values[dm.state_of(u)] += alpha * dv;
            }
            match problem.geometry_for(&trial) {
                Err(e) => {
                    last_mesh_err = Some(e);
                    trace.damping_events += 1;
                    alpha *= 0.5;
                    continue;
                }
                Ok(tg) => {
                    let tr = assemble_residual(
                        problem, scheme, &trial, state_prev, &tg, geo_prev, tau, t,
                    );
                    let tn = l2(&tr);
                    let better = best.as_ref().map_or(true, |b| tn < b.3);
                    if better {
                        best = Some((trial, tg, tr, tn));
                    }
                    if tn < norm || attempt == cfg.max_halvings {
                        break;
                    }
                    trace.damping_events += 1;
                    alpha *= 0.5;
                }
            }
        }
        match best {
            Some((s, g, rr, nn)) => {
                state = s;
                geo = g;
                resid = rr;
                norm = nn;
            }
            None => {
                return Err(SolverError::Mesh(
                    last_mesh_err.expect("no trial accepted implies a mesh failure"),
                ));
            }
        }
        trace.iterations += 1;
        trace.residual_norms.push(norm);
    }
    Ok((state, geo, trace))
}

#[derive(Debug, Clone, Copy)]
pub struct StepSummary {
    pub step: usize,
    pub t: f64,
    pub newton_iterations: usize,
    pub final_residual: f64,
    pub min_j: f64,
}

pub struct RunOutcome {
    pub state: SystemState,
    pub geometry: AleGeometry,
    pub steps: Vec<StepSummary>,
}

/// Runs steps start_step+1 ..= N of the grid from the given state. The
/// observer sees the initial level (trace None) and then every accepted step.
pub fn run_time_loop(
    problem: &Problem,
    grid: &TimeGrid,
    initial: SystemState,
    start_step: usize,
    mut on_step: impl FnMut(usize, f64, &SystemState, &AleGeometry, Option<&NewtonTrace>),
) -> Result<RunOutcome, SolverError> {
    let mut state = initial;
    let mut geo = problem.geometry_for(&state).map_err(SolverError::Mesh)?;
    on_step(start_step, grid.time(start_step), &state, &geo, None);
    let mut steps = Vec::new();
    for n in start_step + 1..=grid.n_steps {
        let t = grid.time(n);
        let (s, g, trace) = solve_timestep(problem, problem.scheme, &state, &geo, grid.tau(), t)
            .map_err(|e| SolverError::AtStep { step: n, source: Box::new(e) })?;
        state = s;
        geo = g;
        steps.push(StepSummary {
            step: n,
            t,
            newton_iterations: trace.iterations,
            final_residual: *trace.residual_norms.last().expect("trace has at least one norm"),
            min_j: geo.min_j,
        });
        on_step(n, t, &state, &geo, Some(&trace));
    }
    Ok(RunOutcome { state, geometry: geo, steps })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FSICKPT1";

/// Raw binary checkpoint: step index plus the full coefficient vector.
/// Writing and re-reading is bit-stable.
pub fn write_checkpoint(path: &Path, step: usize, state: &SystemState) -> Result<(), SolverError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&(step as u64).to_le_bytes())?;
    f.write_all(&(state.values.len() as u64).to_le_bytes())?;
    for v in &state.values {
        f.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(usize, SystemState), SolverError> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(SolverError::Checkpoint("bad magic".into()));
    }
    let mut b8 = [0u8; 8];
    f.read_exact(&mut b8)?;
    let step = u64::from_le_bytes(b8) as usize;
    f.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8) as usize;
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        f.read_exact(&mut b8)?;
        values.push(f64::from_le_bytes(b8));
    }
    Ok((step, SystemState { values }))
}

/// Element-wise and facet-wise L2 projections of the initial fields, plus the
/// harmonic mesh displacement matching the projected displacement trace.
/// Projection quadrature is high-order so degree-10 initial data is handled
/// at full accuracy.
pub fn project_initial_data(
    problem: &Problem,
    u0: &dyn Fn(Vec2) -> Vec2,
    us0: &dyn Fn(Vec2) -> Vec2,
    d0: &dyn Fn(Vec2) -> Vec2,
) -> Result<SystemState, SolverError> {
    let dm = &problem.dm;
    let mesh = &problem.mesh;
    let k = dm.k;
    let np = dm.np_k;
    let nt = dm.nt;
    let exact = (2 * k + 4).max(k + 12);
    let ptab = RefTables::build(k, exact, exact);
    let mut state = SystemState::zeros(dm);

    // Solid elements: plain reference-domain projections per component.
    for &e in &dm.solid_elements {
        let (origin, jac) = mesh.element_map(e);
        let detb = (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]).abs();
        let mut mass = DMatrix::<f64>::zeros(np, np);
        let mut rhs_u = DMatrix::<f64>::zeros(np, 2);
        let mut rhs_d = DMatrix::<f64>::zeros(np, 2);
        for (q, wq) in ptab.vol_w.iter().enumerate() {
            let xi = ptab.vol_pts[q];
            let x = [
                origin[0] + jac[0][0] * xi[0] + jac[0][1] * xi[1],
                origin[1] + jac[1][0] * xi[0] + jac[1][1] * xi[1],
            ];
            let w = wq * detb;
            let(vu, vd) = (us0(x), d0(x));
            for i in 0..np {
                let phi = ptab.tri.values[q * np + i];
                for j in 0..np {
                    mass[(i, j)] += w * phi * ptab.tri.values[q * np + j];
                }
                for c in 0..2 {
                    rhs_u[(i, c)] += w * phi * vu[c];
                    rhs_d[(i, c)] += w * phi * vd[c];
                }
            }
        }
        let chol = Cholesky::new(mass).expect("element mass is SPD");
        let cu = chol.solve(&rhs_u);
        let cd = chol.solve(&rhs_d);
        let ru = dm.struct_vel(e);
        let rd = dm.struct_disp(e);
        for i in 0..np {
            for c in 0..2 {
                state.values[ru.start + 2 * i + c] = cu[(i, c)];
                state.values[rd.start + 2 * i + c] = cd[(i, c)];
            }
        }
    }

    // Solid facets: reference-measure trace projections. Interface velocity
    // traces share fluid storage and are set by the fluid pass below.
    for &fi in &dm.solid_facets {
        let facet = &mesh.facets()[fi];
        let [lo, hi] = facet.vertices;
        let (a, b) = (mesh.vertices()[lo], mesh.vertices()[hi]);
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let mut mass = DMatrix::<f64>::zeros(nt, nt);
        let mut rhs_u = DMatrix::<f64>::zeros(nt, 2);
        let mut rhs_d = DMatrix::<f64>::zeros(nt, 2);
        for (q, wq) in ptab.seg_w.iter().enumerate() {
            let s = ptab.seg_pts[q];
            let x = [a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])];
            let w = wq * len;
            let (vu, vd) = (us0(x), d0(x));
            for i in 0..nt {
                let psi = ptab.seg.values[q * nt + i];
                for j in 0..nt {
                    mass[(i, j)] += w * psi * ptab.seg.values[q * nt + j];
                }
                for c in 0..2 {
                    rhs_u[(i, c)] += w * psi * vu[c];
                    rhs_d[(i, c)] += w * psi * vd[c];
                }
            }
        }
        let chol = Cholesky::new(mass).expect("facet mass is SPD");
        let cu = chol.solve(&rhs_u);
        let cd = chol.solve(&rhs_d);
        let rd = dm.struct_dtrace(fi);
        for i in 0..nt {
            for c in 0..2 {
                state.values[rd.start + 2 * i + c] = cd[(i, c)];
            }
        }
        if facet.kind != FacetKind::Interface {
            let ru = dm.struct_vtrace(fi);
            for i in 0..nt {
                for c in 0..2 {
                    state.values[ru.start + 2 * i + c] = cu[(i, c)];
                }
            }
        }
    }

    // Mesh displacement from the projected displacement trace.
    if !problem.frozen_geometry {
        let kappa = problem.params.kappa;
        let dtrace = |fi: usize| -> Vec<Vec2> {
            let r = dm.struct_dtrace(fi);
            (0..nt)
                .map(|i| {
                    [state.values[r.start + 2 * i], state.values[r.start + 2 * i + 1]]
                })
                .collect()
        };
        let iv = interface_bc_values(dm, &dtrace);
        let eta = solve_motion(mesh, dm, &problem.tab, &move |_| kappa, &iv, None);
        for (node, v) in eta.iter().enumerate() {
            let r = dm.mesh_disp_node(node);
            state.values[r.start] = v[0];
            state.values[r.start + 1] = v[1];
        }
    }

    // Fluid projections need the deformed geometry of the initial mesh.
    let eta = if problem.frozen_geometry {
        vec![[0.0; 2]; dm.mesh_nodes.coords.len()]
    } else {
        state.eta_nodes(dm)
    };
    let geo = eval_geometry(mesh, dm, &ptab, &eta, problem.j_min)?;

    for (pos, &e) in dm.fluid_elements.iter().enumerate() {
        let eg = &geo.elems[pos];
        let mut mass = DMatrix::<f64>::zeros(2 * np, 2 * np);
        let mut rhs = DVector::<f64>::zeros(2 * np);
        for (q, qp) in eg.qp.iter().enumerate() {
            let w = eg.qw[q];
            let xd = [qp.xref[0] + qp.eta[0], qp.xref[1] + qp.eta[1]];
            let v = u0(xd);
            for i in 0..np {
                let phi = ptab.tri.values[q * np + i];
                for c in 0..2 {
                    let fc = [qp.f[0][c] * phi, qp.f[1][c] * phi];
                    rhs[2 * i + c] += w * (v[0] * fc[0] + v[1] * fc[1]);
                    for j in 0..np {
                        let phj = ptab.tri.values[q * np + j];
                        for d in 0..2 {
                            let fd = [qp.f[0][d] * phj, qp.f[1][d] * phj];
                            mass[(2 * i + c, 2 * j + d)] +=
                                w / qp.j * (fc[0] * fd[0] + fc[1] * fd[1]);
                        }
                    }
                }
            }
        }
        let chol = Cholesky::new(mass).expect("piola mass is SPD");
        let coeffs = chol.solve(&rhs);
        let r = dm.fluid_vel(e);
        for i in 0..2 * np {
            state.values[r.start + i] = coeffs[i];
        }
    }

    for (fpos, &fi) in dm.fluid_facets.iter().enumerate() {
        let fg = &geo.facets[fpos];
        let side = &fg.sides[0];
        let mut mass = DMatrix::<f64>::zeros(nt, nt);
        let mut rhs = DMatrix::<f64>::zeros(nt, 2);
        for (q, wq) in ptab.seg_w.iter().enumerate() {
            let qp = &side.qp[q];
            let w = wq * fg.ref_len * qp.jb;
            let xd = [qp.xref[0] + qp.eta[0], qp.xref[1] + qp.eta[1]];
            let v = u0(xd);
            for i in 0..nt {
                let psi = ptab.seg.values[q * nt + i];
                for j in 0..nt {
                    mass[(i, j)] += w * psi * ptab.seg.values[q * nt + j];
                }
                for c in 0..2 {
                    rhs[(i, c)] += w * psi * v[c];
                }
            }
        }
        let chol = Cholesky::new(mass).expect("trace mass is SPD");
        let coeffs = chol.solve(&rhs);
        let r = dm.fluid_vtrace(fi);
        for i in 0..nt {
            for c in 0..2 {
                state.values[r.start + 2 * i + c] = coeffs[(i, c)];
            }
        }
    }

    Ok(state)
}
