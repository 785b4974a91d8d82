//! Discrete energy bookkeeping, divergence and jump norms, error norms
//! against a reference solution, point probes, and CSV/VTK output.
//!
//! The energy components follow the exact per-step identity of the scheme:
//! testing with the solution itself telescopes the kinetic and elastic terms
//! and leaves nonnegative dissipation, so with zero forcing the reported
//! total is monotonically nonincreasing up to solver tolerance.

use std::io::Write as _;
use std::path::Path;

use nalgebra::DVector;
use thiserror::Error;

use crate::basis::{triangle_nodes, TriangleBasis};
use crate::fluid::{mass_matrix_now, stabilization_matrix, stress_blocks};
use crate::geometry::{
    eval_geometry, inv2, mat_vec, piola_div, piola_gradient, piola_value, AleGeometry, Mat2,
    RefTables, Vec2,
};
use crate::mesh::Region;
use crate::solver::{
    fluid_ctx, fluid_pres_map, fluid_vel_map, gather, solid_disp_map, solid_vel_map, Problem,
    SystemState,
};

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("relative error denominator vanished for {norm}")]
    DivisionByZero { norm: &'static str },
    #[error("point ({0}, {1}) lies in no element of the requested region")]
    PointNotFound(f64, f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Mesh(#[from] crate::geometry::GeometryError),
}

/// Energy content of one state. `total` is exactly the sum of the three
/// components; `fluid_dissipation_rate` times the step size is the viscous
/// dissipation one step removes.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnergyReport {
    pub fluid_kinetic: f64,
    pub structure_kinetic: f64,
    pub elastic: f64,
    pub total: f64,
    pub fluid_dissipation_rate: f64,
}

pub fn compute_energy(problem: &Problem, state: &SystemState, geo: &AleGeometry) -> EnergyReport {
    let dm = &problem.dm;
    let p = problem.params;
    let mut rep = EnergyReport::default();

    for &e in &dm.fluid_elements {
        let ctx = fluid_ctx(problem, geo, e);
        let vmap = fluid_vel_map(&problem.mesh, dm, e);
        let x = DVector::from_vec(gather(state, &vmap));
        let np = dm.np_k;
        let m = mass_matrix_now(&ctx);
        let xe = x.rows(0, 2 * np);
        rep.fluid_kinetic += 0.5 * p.rho_f * (xe.transpose() * m * xe)[(0, 0)];
        let sb = stress_blocks(&ctx);
        let stab = stabilization_matrix(&ctx);
        rep.fluid_dissipation_rate += 2.0 * p.rho_f * p.mu_f * (x.transpose() * sb.visc * &x)[(0, 0)]
            + p.rho_f * p.mu_f * (x.transpose() * stab * &x)[(0, 0)];
    }

    for (pos, &e) in dm.solid_elements.iter().enumerate() {
        let blocks = &problem.sblocks[pos];
        let np = blocks.np;
        let u = gather(state, &solid_vel_map(&problem.mesh, dm, e));
        let d = DVector::from_vec(gather(state, &solid_disp_map(&problem.mesh, dm, e)));
        for i in 0..np {
            for j in 0..np {
                let m = blocks.mass[(i, j)];
                for c in 0..2 {
                    rep.structure_kinetic += 0.5 * p.rho_s * u[2 * i + c] * m * u[2 * j + c];
                }
            }
        }
        let de = d.rows(0, 2 * np);
        rep.elastic += p.mu_s * (d.transpose() * &blocks.visc * &d)[(0, 0)]
            + 0.5 * p.mu_s * (d.transpose() * &blocks.stab * &d)[(0, 0)]
            + 0.5 * p.lambda_s * (de.transpose() * &blocks.divdiv * de)[(0, 0)];
    }

    rep.total = rep.fluid_kinetic + rep.structure_kinetic + rep.elastic;
    rep
}

/// Structural numerical dissipation of the step from n-1 to n: the same
/// quadratic forms as the energy, applied to the increment, so it is
/// nonnegative by construction.
pub fn structure_step_dissipation(
    problem: &Problem,
    state: &SystemState,
    state_prev: &SystemState,
) -> f64 {
    let dm = &problem.dm;
    let p = problem.params;
    let mut diss = 0.0;
    for (pos, &e) in dm.solid_elements.iter().enumerate() {
        let blocks = &problem.sblocks[pos];
        let np = blocks.np;
        let umap = solid_vel_map(&problem.mesh, dm, e);
        let dmap = solid_disp_map(&problem.mesh, dm, e);
        let du: Vec<f64> = umap
            .iter()
            .map(|&s| state.values[s] - state_prev.values[s])
            .collect();
        let dd = DVector::from_vec(
            dmap.iter()
                .map(|&s| state.values[s] - state_prev.values[s])
                .collect::<Vec<_>>(),
        );
        for i in 0..np {
            for j in 0..np {
                let m = blocks.mass[(i, j)];
                for c in 0..2 {
                    diss += 0.5 * p.rho_s * du[2 * i + c] * m * du[2 * j + c];
                }
            }
        }
        let dde = dd.rows(0, 2 * np);
        diss += p.mu_s * (dd.transpose() * &blocks.visc * &dd)[(0, 0)]
            + 0.5 * p.mu_s * (dd.transpose() * &blocks.stab * &dd)[(0, 0)]
            + 0.5 * p.lambda_s * (dde.transpose() * &blocks.divdiv * dde)[(0, 0)];
    }
    diss
}

/// L2 norm of the fluid velocity divergence over the deformed domain,
/// computed through the reference pullback (1/J) divhat uhat.
pub fn compute_div_norm(problem: &Problem, state: &SystemState, geo: &AleGeometry) -> f64 {
    let dm = &problem.dm;
    let tab = &problem.tab;
    let np = dm.np_k;
    let mut acc = 0.0;
    for (pos, &e) in dm.fluid_elements.iter().enumerate() {
        let eg = &geo.elems[pos];
        let r = dm.fluid_vel(e);
        for (q, qp) in eg.qp.iter().enumerate() {
            let mut div_hat = 0.0;
            for i in 0..np {
                let g0 = tab.tri.grads[(q * np + i) * 2];
                let g1 = tab.tri.grads[(q * np + i) * 2 + 1];
                // Reference gradient of the nodal basis on this element.
                let gx = eg.binvt[0][0] * g0 + eg.binvt[0][1] * g1;
                let gy = eg.binvt[1][0] * g0 + eg.binvt[1][1] * g1;
                div_hat += state.values[r.start + 2 * i] * gx
                    + state.values[r.start + 2 * i + 1] * gy;
            }
            let d = piola_div(qp.j, div_hat);
            // Deformed measure: qw carries the reference measure.
            acc += eg.qw[q] * qp.j * d * d;
        }
    }
    acc.sqrt()
}

/// L2 norm over interior fluid facets of the jump of the reference normal
/// trace uhat . nhat, which the scheme annihilates exactly.
pub fn compute_normal_jump_norm(problem: &Problem, state: &SystemState) -> f64 {
    let dm = &problem.dm;
    let tab = &problem.tab;
    let mesh = &problem.mesh;
    let np = dm.np_k;
    let mut acc = 0.0;
    for (fi, facet) in mesh.facets().iter().enumerate() {
        if !matches!(facet.kind, crate::mesh::FacetKind::Interior(Region::Fluid)) {
            continue;
        }
        let ref_len = mesh.facet_length(fi);
        let nq = tab.seg_w.len();
        let mut jumps = vec![0.0; nq];
        for side in &facet.sides {
            let variant = crate::geometry::side_variant(side);
            let table = &tab.side[variant];
            let nref = crate::geometry::reference_normal(mesh, fi, side);
            let r = dm.fluid_vel(side.element);
            for (q, jump) in jumps.iter_mut().enumerate() {
                let mut v = [0.0; 2];
                for i in 0..np {
                    let phi = table.values[q * np + i];
                    v[0] += state.values[r.start + 2 * i] * phi;
                    v[1] += state.values[r.start + 2 * i + 1] * phi;
                }
                *jump += v[0] * nref[0] + v[1] * nref[1];
            }
        }
        for (q, wq) in tab.seg_w.iter().enumerate() {
            acc += wq * ref_len * jumps[q] * jumps[q];
        }
    }
    acc.sqrt()
}

/// Reference fields an error computation compares against. Methods receive
/// both the reference point and (where the field lives on the moving domain)
/// the discrete deformed point.
pub trait ExactSolution {
    fn velocity(&self, xref: Vec2, xdef: Vec2, t: f64) -> Vec2;
    fn velocity_gradient(&self, xref: Vec2, xdef: Vec2, t: f64) -> Mat2;
    fn pressure(&self, xref: Vec2, xdef: Vec2, t: f64) -> f64;
    fn mesh_displacement(&self, xref: Vec2, t: f64) -> Vec2;
    fn mesh_displacement_gradient(&self, xref: Vec2, t: f64) -> Mat2;
    fn displacement(&self, xref: Vec2, t: f64) -> Vec2;
    fn displacement_gradient(&self, xref: Vec2, t: f64) -> Mat2;
    fn structure_velocity(&self, xref: Vec2, t: f64) -> Vec2;
    fn structure_velocity_gradient(&self, xref: Vec2, t: f64) -> Mat2;
}

impl ExactSolution for crate::manufactured::ManufacturedSolution {
    fn velocity(&self, _xref: Vec2, xdef: Vec2, t: f64) -> Vec2 {
        self.velocity(xdef, t)
    }
    fn velocity_gradient(&self, _xref: Vec2, xdef: Vec2, t: f64) -> Mat2 {
        self.velocity_gradient(xdef, t)
    }
    fn pressure(&self, _xref: Vec2, xdef: Vec2, t: f64) -> f64 {
        self.pressure(xdef, t)
    }
    fn mesh_displacement(&self, xref: Vec2, t: f64) -> Vec2 {
        self.displacement(xref, t)
    }
    fn mesh_displacement_gradient(&self, xref: Vec2, t: f64) -> Mat2 {
        self.displacement_gradient(xref, t)
    }
    fn displacement(&self, xref: Vec2, t: f64) -> Vec2 {
        self.displacement(xref, t)
    }
    fn displacement_gradient(&self, xref: Vec2, t: f64) -> Mat2 {
        self.displacement_gradient(xref, t)
    }
    fn structure_velocity(&self, xref: Vec2, t: f64) -> Vec2 {
        self.structure_velocity(xref, t)
    }
    fn structure_velocity_gradient(&self, xref: Vec2, t: f64) -> Mat2 {
        // The structure velocity shares the spatial profile of the fluid
        // velocity, evaluated at the reference point.
        self.velocity_gradient(xref, t)
    }
}

/// Relative error norms at the final time. Velocity and velocity-gradient
/// errors sum the fluid and structure contributions; the divergence norm is
/// absolute; every denominator is the corresponding discrete norm.
#[derive(Debug, Clone, Copy)]
pub struct ErrorReport {
    pub e_u: f64,
    pub e_p: f64,
    pub e_eta: f64,
    pub e_d: f64,
    pub e_div_u: f64,
    pub e_grad_u: f64,
    pub e_grad_eta: f64,
    pub e_grad_d: f64,
}

/// Observed order between consecutive mesh levels (h and h/2).
pub fn observed_order(err_coarse: f64, err_fine: f64) -> f64 {
    (err_coarse / err_fine).log2()
}

fn rel(num: f64, den: f64, norm: &'static str) -> Result<f64, DiagnosticsError> {
    // An empty region (single-region problem) contributes no error.
    if num == 0.0 && den == 0.0 {
        return Ok(0.0);
    }
    if den == 0.0 {
        return Err(DiagnosticsError::DivisionByZero { norm });
    }
    Ok(num.sqrt() / den.sqrt())
}

pub fn compute_errors(
    problem: &Problem,
    state: &SystemState,
    exact: &dyn ExactSolution,
    t: f64,
) -> Result<ErrorReport, DiagnosticsError> {
    let dm = &problem.dm;
    let mesh = &problem.mesh;
    let k = dm.k;
    let (np, npm) = (dm.np_k, dm.np_km1);
    // Dedicated high-order tables so the reference-solution factors in the
    // integrands are resolved well below the discretization error.
    let etab = RefTables::build(k, (2 * k + 6).max(16), (2 * k + 6).max(16));
    let eta = if problem.frozen_geometry {
        vec![[0.0; 2]; dm.mesh_nodes.coords.len()]
    } else {
        state.eta_nodes(dm)
    };
    let geo = eval_geometry(mesh, dm, &etab, &eta, problem.j_min)?;

    // Squared-norm accumulators: numerator/denominator pairs.
    let (mut nu_f, mut du_f) = (0.0, 0.0);
    let (mut np_f, mut dp_f) = (0.0, 0.0);
    let (mut ngu_f, mut dgu_f) = (0.0, 0.0);
    let mut ndiv = 0.0;
    let (mut ne, mut de) = (0.0, 0.0);
    let (mut nge, mut dge) = (0.0, 0.0);
    let (mut nu_s, mut du_s) = (0.0, 0.0);
    let (mut ngu_s, mut dgu_s) = (0.0, 0.0);
    let (mut nd, mut dd) = (0.0, 0.0);
    let (mut ngd, mut dgd) = (0.0, 0.0);

    for (pos, &e) in dm.fluid_elements.iter().enumerate() {
        let eg = &geo.elems[pos];
        let rv = dm.fluid_vel(e);
        let rp = dm.fluid_pres(e);
        let mdisp = dm.mesh_disp_elem_states(e);
        for (q, qp) in eg.qp.iter().enumerate() {
            let wref = eg.qw[q];
            let wdef = wref * qp.j;
            let xdef = [qp.xref[0] + qp.eta[0], qp.xref[1] + qp.eta[1]];

            // Discrete velocity, gradient, divergence via the Piola map.
            let mut vhat = [0.0; 2];
            let mut ghat = [[0.0; 2]; 2];
            let mut div_hat = 0.0;
            for i in 0..np {
                let phi = etab.tri.values[q * np + i];
                let g0 = etab.tri.grads[(q * np + i) * 2];
                let g1 = etab.tri.grads[(q * np + i) * 2 + 1];
                let gx = eg.binvt[0][0] * g0 + eg.binvt[0][1] * g1;
                let gy = eg.binvt[1][0] * g0 + eg.binvt[1][1] * g1;
                let (cx, cy) = (state.values[rv.start + 2 * i], state.values[rv.start + 2 * i + 1]);
                vhat[0] += cx * phi;
                vhat[1] += cy * phi;
                ghat[0][0] += cx * gx;
                ghat[0][1] += cx * gy;
                ghat[1][0] += cy * gx;
                ghat[1][1] += cy * gy;
                div_hat += cx * gx + cy * gy;
            }
            let uh = piola_value(&qp.f, qp.j, &vhat);
            let guh = piola_gradient(qp, &vhat, &ghat);
            let ue = exact.velocity(qp.xref, xdef, t);
            let gue = exact.velocity_gradient(qp.xref, xdef, t);
            nu_f += wdef * ((uh[0] - ue[0]).powi(2) + (uh[1] - ue[1]).powi(2));
            du_f += wdef * (uh[0] * uh[0] + uh[1] * uh[1]);
            let mut gn = 0.0;
            let mut gd = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    gn += (guh[a][b] - gue[a][b]).powi(2);
                    gd += guh[a][b] * guh[a][b];
                }
            }
            ngu_f += wdef * gn;
            dgu_f += wdef * gd;
            let dv = piola_div(qp.j, div_hat);
            ndiv += wdef * dv * dv;

            // Pressure (composed scalar).
            let mut ph = 0.0;
            for (a, s) in rp.clone().enumerate() {
                ph += state.values[s] * etab.tri_pm1.values[q * npm + a];
            }
            let pe = exact.pressure(qp.xref, xdef, t);
            np_f += wdef * (ph - pe) * (ph - pe);
            dp_f += wdef * ph * ph;

            // Mesh displacement (reference measure).
            let mut eh = [0.0; 2];
            let mut geh = [[0.0; 2]; 2];
            for i in 0..np {
                let phi = etab.tri.values[q * np + i];
                let g0 = etab.tri.grads[(q * np + i) * 2];
                let g1 = etab.tri.grads[(q * np + i) * 2 + 1];
                let gx = eg.binvt[0][0] * g0 + eg.binvt[0][1] * g1;
                let gy = eg.binvt[1][0] * g0 + eg.binvt[1][1] * g1;
                let (cx, cy) = (state.values[mdisp[2 * i]], state.values[mdisp[2 * i + 1]]);
                eh[0] += cx * phi;
                eh[1] += cy * phi;
                geh[0][0] += cx * gx;
                geh[0][1] += cx * gy;
                geh[1][0] += cy * gx;
                geh[1][1] += cy * gy;
            }
            let ee = exact.mesh_displacement(qp.xref, t);
            let gee = exact.mesh_displacement_gradient(qp.xref, t);
            ne += wref * ((eh[0] - ee[0]).powi(2) + (eh[1] - ee[1]).powi(2));
            de += wref * (eh[0] * eh[0] + eh[1] * eh[1]);
            let mut gn = 0.0;
            let mut gdn = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    gn += (geh[a][b] - gee[a][b]).powi(2);
                    gdn += geh[a][b] * geh[a][b];
                }
            }
            nge += wref * gn;
            dge += wref * gdn;
        }
    }

    for &e in &dm.solid_elements {
        let (origin, jac) = mesh.element_map(e);
        let detb = (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]).abs();
        let binvt = {
            let bi = inv2(&jac);
            [[bi[0][0], bi[1][0]], [bi[0][1], bi[1][1]]]
        };
        let ru = dm.struct_vel(e);
        let rd = dm.struct_disp(e);
        for (q, wq) in etab.vol_w.iter().enumerate() {
            let xi = etab.vol_pts[q];
            let x = [
                origin[0] + jac[0][0] * xi[0] + jac[0][1] * xi[1],
                origin[1] + jac[1][0] * xi[0] + jac[1][1] * xi[1],
            ];
            let w = wq * detb;
            let mut uh = [0.0; 2];
            let mut dh = [0.0; 2];
            let mut guh = [[0.0; 2]; 2];
            let mut gdh = [[0.0; 2]; 2];
            for i in 0..np {
                let phi = etab.tri.values[q * np + i];
                let g0 = etab.tri.grads[(q * np + i) * 2];
                let g1 = etab.tri.grads[(q * np + i) * 2 + 1];
                let gx = binvt[0][0] * g0 + binvt[0][1] * g1;
                let gy = binvt[1][0] * g0 + binvt[1][1] * g1;
                let (ux, uy) = (state.values[ru.start + 2 * i], state.values[ru.start + 2 * i + 1]);
                let (dx, dy) = (state.values[rd.start + 2 * i], state.values[rd.start + 2 * i + 1]);
                uh[0] += ux * phi;
                uh[1] += uy * phi;
                dh[0] += dx * phi;
                dh[1] += dy * phi;
                guh[0][0] += ux * gx;
                guh[0][1] += ux * gy;
                guh[1][0] += uy * gx;
                guh[1][1] += uy * gy;
                gdh[0][0] += dx * gx;
                gdh[0][1] += dx * gy;
                gdh[1][0] += dy * gx;
                gdh[1][1] += dy * gy;
            }
            let ue = exact.structure_velocity(x, t);
            let gue = exact.structure_velocity_gradient(x, t);
            let de_ = exact.displacement(x, t);
            let gde = exact.displacement_gradient(x, t);
            nu_s += w * ((uh[0] - ue[0]).powi(2) + (uh[1] - ue[1]).powi(2));
            du_s += w * (uh[0] * uh[0] + uh[1] * uh[1]);
            nd += w * ((dh[0] - de_[0]).powi(2) + (dh[1] - de_[1]).powi(2));
            dd += w * (dh[0] * dh[0] + dh[1] * dh[1]);
            let mut a1 = 0.0;
            let mut a2 = 0.0;
            let mut a3 = 0.0;
            let mut a4 = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    a1 += (guh[a][b] - gue[a][b]).powi(2);
                    a2 += guh[a][b] * guh[a][b];
                    a3 += (gdh[a][b] - gde[a][b]).powi(2);
                    a4 += gdh[a][b] * gdh[a][b];
                }
            }
            ngu_s += w * a1;
            dgu_s += w * a2;
            ngd += w * a3;
            dgd += w * a4;
        }
    }

    if std::env::var_os("FSI_DEBUG_ERRORS").is_some() {
        eprintln!(
            "err split: u_f {:.3e}/{:.3e}  u_s {:.3e}/{:.3e}  p {:.3e}/{:.3e}  eta {:.3e}/{:.3e}  d {:.3e}/{:.3e}",
            nu_f.sqrt(), du_f.sqrt(), nu_s.sqrt(), du_s.sqrt(), np_f.sqrt(), dp_f.sqrt(),
            ne.sqrt(), de.sqrt(), nd.sqrt(), dd.sqrt()
        );
    }
    Ok(ErrorReport {
        e_u: rel(nu_f, du_f, "e_u fluid")? + rel(nu_s, du_s, "e_u structure")?,
        e_p: rel(np_f, dp_f, "e_p")?,
        e_eta: rel(ne, de, "e_eta")?,
        e_d: rel(nd, dd, "e_d")?,
        e_div_u: ndiv.sqrt(),
        e_grad_u: rel(ngu_f, dgu_f, "e_grad_u fluid")? + rel(ngu_s, dgu_s, "e_grad_u structure")?,
        e_grad_eta: rel(nge, dge, "e_grad_eta")?,
        e_grad_d: rel(ngd, dgd, "e_grad_d")?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeField {
    /// Piola velocity at a reference point of the fluid mesh.
    FluidVelocity,
    StructureDisplacement,
    StructureVelocity,
}

/// Locates the element containing the reference point and evaluates the
/// requested field there.
pub fn probe_point(
    problem: &Problem,
    state: &SystemState,
    point: Vec2,
    field: ProbeField,
) -> Result<Vec2, DiagnosticsError> {
    let dm = &problem.dm;
    let mesh = &problem.mesh;
    let region = match field {
        ProbeField::FluidVelocity => Region::Fluid,
        _ => Region::Solid,
    };
    let elements: &[usize] = match region {
        Region::Fluid => &dm.fluid_elements,
        Region::Solid => &dm.solid_elements,
    };
    let tol = 1e-12;
    for &e in elements {
        let (origin, jac) = mesh.element_map(e);
        let bi = inv2(&jac);
        let d = [point[0] - origin[0], point[1] - origin[1]];
        let xi = mat_vec(&bi, &d);
        if xi[0] < -tol || xi[1] < -tol || xi[0] + xi[1] > 1.0 + tol {
            continue;
        }
        let basis = TriangleBasis::new(dm.k);
        let table = basis.eval(&[xi]);
        let np = dm.np_k;
        let coeffs = |r: std::ops::Range<usize>| -> Vec2 {
            let mut v = [0.0; 2];
            for i in 0..np {
                let phi = table.values[i];
                v[0] += state.values[r.start + 2 * i] * phi;
                v[1] += state.values[r.start + 2 * i + 1] * phi;
            }
            v
        };
        return Ok(match field {
            ProbeField::StructureDisplacement => coeffs(dm.struct_disp(e)),
            ProbeField::StructureVelocity => coeffs(dm.struct_vel(e)),
            ProbeField::FluidVelocity => {
                // Deformation gradient of the mesh displacement at the point.
                let eta = state.eta_nodes(dm);
                let pos = dm.fluid_elem_position(e);
                let nodes = &dm.mesh_nodes.elem_nodes[pos];
                let binvt = [[bi[0][0], bi[1][0]], [bi[0][1], bi[1][1]]];
                let mut f = [[1.0, 0.0], [0.0, 1.0]];
                let mut vhat = [0.0; 2];
                for i in 0..np {
                    let phi = table.values[i];
                    let g0 = table.grads[2 * i];
                    let g1 = table.grads[2 * i + 1];
                    let gx = binvt[0][0] * g0 + binvt[0][1] * g1;
                    let gy = binvt[1][0] * g0 + binvt[1][1] * g1;
                    let en = if problem.frozen_geometry { [0.0; 2] } else { eta[nodes[i]] };
                    f[0][0] += en[0] * gx;
                    f[0][1] += en[0] * gy;
                    f[1][0] += en[1] * gx;
                    f[1][1] += en[1] * gy;
                    let r = dm.fluid_vel(e);
                    vhat[0] += state.values[r.start + 2 * i] * phi;
                    vhat[1] += state.values[r.start + 2 * i + 1] * phi;
                }
                let j = f[0][0] * f[1][1] - f[0][1] * f[1][0];
                piola_value(&f, j, &vhat)
            }
        });
    }
    Err(DiagnosticsError::PointNotFound(point[0], point[1]))
}

/// One row of the run time series.
#[derive(Debug, Clone, Copy)]
pub struct TimeSeriesRow {
    pub n: usize,
    pub t: f64,
    pub energy: EnergyReport,
    pub div_norm: f64,
    pub probe: Vec2,
    pub newton_iters: usize,
    pub tau0_bound: f64,
    pub tau0p_bound: f64,
}

pub struct OutputSeries {
    pub rows: Vec<TimeSeriesRow>,
    /// States retained for field output, keyed by step index.
    pub snapshots: Vec<(usize, SystemState)>,
}

/// Writes `timeseries.csv` plus one legacy-ASCII VTK file per retained
/// snapshot whose step index matches the cadence.
pub fn write_outputs(
    problem: &Problem,
    series: &OutputSeries,
    dir: &Path,
    cadence: usize,
) -> Result<(), DiagnosticsError> {
    std::fs::create_dir_all(dir)?;
    let mut csv = std::fs::File::create(dir.join("timeseries.csv"))?;
    writeln!(
        csv,
        "n,t,E,E_fluid_kin,E_struct_kin,E_elastic,div_norm,probe_x,probe_y,newton_iters,tau0_bound,tau0p_bound"
    )?;
    for r in &series.rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.t,
            r.energy.total,
            r.energy.fluid_kinetic,
            r.energy.structure_kinetic,
            r.energy.elastic,
            r.div_norm,
            r.probe[0],
            r.probe[1],
            r.newton_iters,
            r.tau0_bound,
            r.tau0p_bound
        )?;
    }
    let cad = cadence.max(1);
    for (n, state) in &series.snapshots {
        if n % cad == 0 {
            write_vtk(problem, state, &dir.join(format!("fields_{n}.vtk")))?;
        }
    }
    Ok(())
}

/// P_k lattice index in row-major (j outer) order on the unit triangle.
fn lattice(k: usize) -> (Vec<Vec2>, Vec<[usize; 3]>) {
    let mut pts = Vec::new();
    let mut offset = vec![0usize; k + 2];
    for j in 0..=k {
        offset[j + 1] = offset[j] + (k + 1 - j);
        for i in 0..=(k - j) {
            pts.push([i as f64 / k as f64, j as f64 / k as f64]);
        }
    }
    let idx = |i: usize, j: usize| offset[j] + i;
    let mut cells = Vec::new();
    for j in 0..k {
        for i in 0..(k - j) {
            cells.push([idx(i, j), idx(i + 1, j), idx(i, j + 1)]);
            if i + j + 1 < k {
                cells.push([idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
    }
    (pts, cells)
}

/// Legacy ASCII VTK of both regions: points are deformed by the mesh
/// displacement (fluid) or the elementwise displacement (solid); velocity
/// and displacement are point vectors, pressure and region are cell data.
/// k >= 2 elements are subsampled into k^2 straight subtriangles.
pub fn write_vtk(problem: &Problem, state: &SystemState, path: &Path) -> Result<(), DiagnosticsError> {
    let dm = &problem.dm;
    let mesh = &problem.mesh;
    let k = dm.k;
    let np = dm.np_k;
    let (lpts, lcells) = lattice(k);
    let basis = TriangleBasis::new(k);
    let table = basis.eval(&lpts);
    let eta = state.eta_nodes(dm);

    let mut points: Vec<[f64; 2]> = Vec::new();
    let mut cells: Vec<[usize; 3]> = Vec::new();
    let mut velocity: Vec<[f64; 2]> = Vec::new();
    let mut displacement: Vec<[f64; 2]> = Vec::new();
    let mut pressure: Vec<f64> = Vec::new();
    let mut region: Vec<i32> = Vec::new();

    for e in 0..mesh.triangles().len() {
        let is_fluid = mesh.triangles()[e].region == Region::Fluid;
        let (origin, jac) = mesh.element_map(e);
        let bi = inv2(&jac);
        let binvt = [[bi[0][0], bi[1][0]], [bi[0][1], bi[1][1]]];
        let base = points.len();
        for (lp, xi) in lpts.iter().enumerate() {
            let xref = [
                origin[0] + jac[0][0] * xi[0] + jac[0][1] * xi[1],
                origin[1] + jac[1][0] * xi[0] + jac[1][1] * xi[1],
            ];
            let mut disp = [0.0; 2];
            let mut vel = [0.0; 2];
            if is_fluid {
                let pos = dm.fluid_elem_position(e);
                let enodes = &dm.mesh_nodes.elem_nodes[pos];
                let rv = dm.fluid_vel(e);
                let mut f = [[1.0, 0.0], [0.0, 1.0]];
                let mut vhat = [0.0; 2];
                for i in 0..np {
                    let phi = table.values[lp * np + i];
                    let g0 = table.grads[(lp * np + i) * 2];
                    let g1 = table.grads[(lp * np + i) * 2 + 1];
                    let gx = binvt[0][0] * g0 + binvt[0][1] * g1;
                    let gy = binvt[1][0] * g0 + binvt[1][1] * g1;
                    let en = if problem.frozen_geometry { [0.0; 2] } else { eta[enodes[i]] };
                    disp[0] += en[0] * phi;
                    disp[1] += en[1] * phi;
                    f[0][0] += en[0] * gx;
                    f[0][1] += en[0] * gy;
                    f[1][0] += en[1] * gx;
                    f[1][1] += en[1] * gy;
                    vhat[0] += state.values[rv.start + 2 * i] * phi;
                    vhat[1] += state.values[rv.start + 2 * i + 1] * phi;
                }
                let j = f[0][0] * f[1][1] - f[0][1] * f[1][0];
                vel = piola_value(&f, j, &vhat);
            } else {
                let rd = dm.struct_disp(e);
                let ru = dm.struct_vel(e);
                for i in 0..np {
                    let phi = table.values[lp * np + i];
                    disp[0] += state.values[rd.start + 2 * i] * phi;
                    disp[1] += state.values[rd.start + 2 * i + 1] * phi;
                    vel[0] += state.values[ru.start + 2 * i] * phi;
                    vel[1] += state.values[ru.start + 2 * i + 1] * phi;
                }
            }
            points.push([xref[0] + disp[0], xref[1] + disp[1]]);
            velocity.push(vel);
            displacement.push(disp);
        }
        for c in &lcells {
            cells.push([base + c[0], base + c[1], base + c[2]]);
            region.push(if is_fluid { 0 } else { 1 });
            // Cell pressure at the subcell centroid (fluid only).
            if is_fluid {
                let rp = dm.fluid_pres(e);
                let cen = [
                    (lpts[c[0]][0] + lpts[c[1]][0] + lpts[c[2]][0]) / 3.0,
                    (lpts[c[0]][1] + lpts[c[1]][1] + lpts[c[2]][1]) / 3.0,
                ];
                let pb = crate::basis::TriangleBasis::new(k.saturating_sub(1));
                let pt = pb.eval(&[cen]);
                let npm = dm.np_km1;
                let mut ph = 0.0;
                for (a, s) in rp.clone().take(npm).enumerate() {
                    ph += state.values[s] * pt.values[a];
                }
                pressure.push(ph);
            } else {
                pressure.push(0.0);
            }
        }
    }

    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# vtk DataFile Version 3.0")?;
    writeln!(f, "coupled fields")?;
    writeln!(f, "ASCII")?;
    writeln!(f, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(f, "POINTS {} double", points.len())?;
    for p in &points {
        writeln!(f, "{} {} 0", p[0], p[1])?;
    }
    writeln!(f, "CELLS {} {}", cells.len(), 4 * cells.len())?;
    for c in &cells {
        writeln!(f, "3 {} {} {}", c[0], c[1], c[2])?;
    }
    writeln!(f, "CELL_TYPES {}", cells.len())?;
    for _ in &cells {
        writeln!(f, "5")?;
    }
    writeln!(f, "POINT_DATA {}", points.len())?;
    writeln!(f, "VECTORS velocity double")?;
    for v in &velocity {
        writeln!(f, "{} {} 0", v[0], v[1])?;
    }
    writeln!(f, "VECTORS displacement double")?;
    for v in &displacement {
        writeln!(f, "{} {} 0", v[0], v[1])?;
    }
    writeln!(f, "CELL_DATA {}", cells.len())?;
    writeln!(f, "SCALARS pressure double 1")?;
    writeln!(f, "LOOKUP_TABLE default")?;
    for p in &pressure {
        writeln!(f, "{p}")?;
    }
    writeln!(f, "SCALARS region int 1")?;
    writeln!(f, "LOOKUP_TABLE default")?;
    for r in &region {
        writeln!(f, "{r}")?;
    }
    Ok(())
}
