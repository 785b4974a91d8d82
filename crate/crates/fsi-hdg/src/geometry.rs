//! Discrete ALE geometry: deformation-gradient caches, Piola transform,
//! domain velocity, cross-step pullbacks, and the time-step stability
//! constants.
//!
//! Every deformed-domain integral is evaluated by pullback to the reference
//! mesh (change of variables with weight J); no deformed mesh is ever built.
//! All caches are sampled at shared reference quadrature points so that
//! cross-step compositions reduce to reading two caches at the same point.

use thiserror::Error;

use crate::basis::{triangle_ndofs, SegmentBasis, SegmentBasisTable, TriangleBasis, TriangleBasisTable};
use crate::dofs::DofMap;
use crate::mesh::{FacetSide, Mesh, Region};
use crate::quadrature::{quadrature_rule, Domain};

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

pub const IDENT: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

#[inline]
pub fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

#[inline]
pub fn inv2(m: &Mat2) -> Mat2 {
    let d = det2(m);
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

#[inline]
pub fn transpose2(m: &Mat2) -> Mat2 {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

#[inline]
pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

#[inline]
pub fn mat_vec(m: &Mat2, v: &Vec2) -> Vec2 {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

#[inline]
pub fn mat_scale(m: &Mat2, s: f64) -> Mat2 {
    [[m[0][0] * s, m[0][1] * s], [m[1][0] * s, m[1][1] * s]]
}

#[inline]
pub fn mat_sub(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] - b[0][0], a[0][1] - b[0][1]],
        [a[1][0] - b[1][0], a[1][1] - b[1][1]],
    ]
}

#[inline]
pub fn mat_add(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [a[0][0] + b[0][0], a[0][1] + b[0][1]],
        [a[1][0] + b[1][0], a[1][1] + b[1][1]],
    ]
}

#[inline]
pub fn frob(m: &Mat2) -> f64 {
    (m[0][0] * m[0][0] + m[0][1] * m[0][1] + m[1][0] * m[1][0] + m[1][1] * m[1][1]).sqrt()
}

#[inline]
pub fn trace2(m: &Mat2) -> f64 {
    m[0][0] + m[1][1]
}

#[inline]
pub fn dot2(a: &Vec2, b: &Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mesh tangled in element {element}: min Jacobian {min_j:.3e} <= threshold {threshold:.3e}")]
    MeshTangled {
        element: usize,
        min_j: f64,
        threshold: f64,
    },
}

pub const J_MIN_DEFAULT: f64 = 1e-10;

/// Reference basis/quadrature tables shared by all elements of one degree.
/// Side tables hold element-basis traces at facet quadrature points for the
/// six (local edge, orientation) combinations; `side_variant` picks the one
/// matching a facet side so that facet point i always means the same physical
/// point on both sides of the facet (canonical low-to-high parametrization).
pub struct RefTables {
    pub k: usize,
    pub np_k: usize,
    pub np_km1: usize,
    pub nt: usize,
    /// Master-triangle rule: points and weights (weights sum to 1/2).
    pub vol_pts: Vec<[f64; 2]>,
    pub vol_w: Vec<f64>,
    pub tri: TriangleBasisTable,
    pub tri_pm1: TriangleBasisTable,
    /// Facet rule on [0,1] in the canonical facet parameter.
    pub seg_pts: Vec<f64>,
    pub seg_w: Vec<f64>,
    pub seg: SegmentBasisTable,
    /// Element basis at facet points, variant = local_edge*2 + (1 if flipped).
    pub side: [TriangleBasisTable; 6],
    pub side_pm1: [TriangleBasisTable; 6],
}

/// Master-triangle coordinates of the point at element-local edge parameter s
/// (from the lower local vertex of the edge to the higher, CCW).
fn master_edge_point(local_edge: usize, s: f64) -> [f64; 2] {
    match local_edge {
        0 => [s, 0.0],
        1 => [1.0 - s, s],
        2 => [0.0, 1.0 - s],
        _ => unreachable!("triangle has 3 edges"),
    }
}

#[inline]
pub fn side_variant(side: &FacetSide) -> usize {
    side.local_edge * 2 + usize::from(!side.same_direction)
}

impl RefTables {
    pub fn build(k: usize, vol_exactness: usize, facet_exactness: usize) -> Self {
        let tri_basis = TriangleBasis::new(k);
        let tri_basis_pm1 = TriangleBasis::new(k - 1);
        let seg_basis = SegmentBasis::new(k);

        let vol_rule = quadrature_rule(Domain::Triangle, vol_exactness).expect("volume rule");
        let vol_pts: Vec<[f64; 2]> = vol_rule.points.clone();
        let vol_w = vol_rule.weights.clone();
        let tri = tri_basis.eval(&vol_pts);
        let tri_pm1 = tri_basis_pm1.eval(&vol_pts);

        let seg_rule = quadrature_rule(Domain::Segment, facet_exactness).expect("facet rule");
        let seg_pts: Vec<f64> = seg_rule.points.iter().map(|p| p[0]).collect();
        let seg_w = seg_rule.weights.clone();
        let seg = seg_basis.eval(&seg_pts);

        let make_side = |basis: &TriangleBasis| -> [TriangleBasisTable; 6] {
            let mut out = Vec::with_capacity(6);
            for local_edge in 0..3 {
                for flip in [false, true] {
                    let pts: Vec<[f64; 2]> = seg_pts
                        .iter()
                        .map(|&t| {
                            let s = if flip { 1.0 - t } else { t };
                            master_edge_point(local_edge, s)
                        })
                        .collect();
                    out.push(basis.eval(&pts));
                }
            }
            out.try_into().ok().expect("six side tables")
        };
        let side = make_side(&tri_basis);
        let side_pm1 = make_side(&tri_basis_pm1);

        Self {
            k,
            np_k: triangle_ndofs(k),
            np_km1: triangle_ndofs(k - 1),
            nt: seg_basis.ndofs(),
            vol_pts,
            vol_w,
            tri,
            tri_pm1,
            seg_pts,
            seg_w,
            seg,
            side,
            side_pm1,
        }
    }
}

/// Geometry data at one volume quadrature point.
#[derive(Debug, Clone, Copy)]
pub struct QpGeom {
    /// Reference-domain coordinates of the point.
    pub xref: Vec2,
    /// Mesh displacement there (deformed point = xref + eta).
    pub eta: Vec2,
    /// F = I + grad eta, its determinant, and inverse.
    pub f: Mat2,
    pub j: f64,
    pub finv: Mat2,
    /// g[c] = grad of (1/J) F e_c: the curvature correction entering the
    /// physical gradient of a Piola-mapped field. Zero for affine geometry.
    pub g: [Mat2; 2],
}

impl QpGeom {
    pub fn identity(xref: Vec2) -> Self {
        Self {
            xref,
            eta: [0.0; 2],
            f: IDENT,
            j: 1.0,
            finv: IDENT,
            g: [[[0.0; 2]; 2]; 2],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ElemGeom {
    pub element: usize,
    /// |det B| of the affine master->reference map (= 2*area).
    pub detb: f64,
    /// Inverse-transpose of the affine Jacobian: physical grad = binvt * master grad.
    pub binvt: Mat2,
    /// Reference integration weights: sum f_q * qw_q integrates over the
    /// reference element (multiply by j for the deformed element).
    pub qw: Vec<f64>,
    pub qp: Vec<QpGeom>,
}

/// Geometry data at one facet quadrature point, seen from one element side.
#[derive(Debug, Clone, Copy)]
pub struct FacetQpGeom {
    pub xref: Vec2,
    pub eta: Vec2,
    pub f: Mat2,
    pub j: f64,
    pub finv: Mat2,
    /// Unit outward reference normal of this side.
    pub nref: Vec2,
    /// Unit outward deformed normal (Nanson direction).
    pub ndef: Vec2,
    /// Deformed-to-reference facet measure ratio |J F^{-T} nref|.
    pub jb: f64,
}

#[derive(Debug, Clone)]
pub struct FacetSideGeom {
    pub element: usize,
    pub variant: usize,
    pub qp: Vec<FacetQpGeom>,
}

#[derive(Debug, Clone)]
pub struct FacetGeom {
    pub facet: usize,
    pub ref_len: f64,
    /// Fluid-region sides only (interface facets carry exactly one).
    pub sides: Vec<FacetSideGeom>,
}

#[derive(Debug, Clone)]
pub struct AleGeometry {
    /// Indexed like DofMap::fluid_elements.
    pub elems: Vec<ElemGeom>,
    /// Indexed like DofMap::fluid_facets.
    pub facets: Vec<FacetGeom>,
    pub min_j: f64,
}

/// Unit outward reference normal of a facet as seen from one side.
pub fn reference_normal(mesh: &Mesh, facet: usize, side: &FacetSide) -> Vec2 {
    let [lo, hi] = mesh.facets()[facet].vertices;
    let (pa, pb) = (mesh.vertices()[lo], mesh.vertices()[hi]);
    let mut t = [pb[0] - pa[0], pb[1] - pa[1]];
    if !side.same_direction {
        t = [-t[0], -t[1]];
    }
    let len = (t[0] * t[0] + t[1] * t[1]).sqrt();
    // CCW elements: outward normal is the local edge tangent rotated by -90.
    [t[1] / len, -t[0] / len]
}

/// Builds the full geometry cache for a mesh-displacement field given by one
/// value per mesh-displacement node.
pub fn eval_geometry(
    mesh: &Mesh,
    dm: &DofMap,
    tab: &RefTables,
    eta_nodes: &[Vec2],
    j_min: f64,
) -> Result<AleGeometry, GeometryError> {
    assert_eq!(eta_nodes.len(), dm.mesh_nodes.coords.len());
    let np = tab.np_k;
    let mut min_j = f64::INFINITY;
    let mut worst = 0usize;

    let mut elems = Vec::with_capacity(dm.fluid_elements.len());
    for (pos, &e) in dm.fluid_elements.iter().enumerate() {
        let (origin, jac) = mesh.element_map(e);
        let detb = det2(&jac).abs();
        let binv = inv2(&jac);
        let binvt = transpose2(&binv);
        let nodes = &dm.mesh_nodes.elem_nodes[pos];

        let nq = tab.vol_pts.len();
        let mut qw = Vec::with_capacity(nq);
        let mut qp = Vec::with_capacity(nq);
        for q in 0..nq
        {
            let xi = tab.vol_pts[q];
            let xref = [
                origin[0] + jac[0][0] * xi[0] + jac[0][1] * xi[1],
                origin[1] + jac[1][0] * xi[0] + jac[1][1] * xi[1],
            ];
            let mut eta = [0.0; 2];
            let mut grad = [[0.0; 2]; 2]; // grad_ref eta
            let mut hess = [[[0.0; 2]; 2]; 2]; // per component, master coords
            for i in 0..np {
                let v = tab.tri.values[q * np + i];
                let gx = tab.tri.grads[(q * np + i) * 2];
                let gy = tab.tri.grads[(q * np + i) * 2 + 1];
                let hxx = tab.tri.hessians[(q * np + i) * 3];
                let hxy = tab.tri.hessians[(q * np + i) * 3 + 1];
                let hyy = tab.tri.hessians[(q * np + i) * 3 + 2];
                let en = eta_nodes[nodes[i]];
                // Master-coordinate gradient, transformed below.
                for c in 0..2 {
                    eta[c] += en[c] * v;
                    grad[c][0] += en[c] * gx;
                    grad[c][1] += en[c] * gy;
                    hess[c][0][0] += en[c] * hxx;
                    hess[c][0][1] += en[c] * hxy;
                    hess[c][1][0] += en[c] * hxy;
                    hess[c][1][1] += en[c] * hyy;
                }
            }
            // Transform derivatives from master to reference coordinates.
            let grad_ref = mat_mul(&grad, &binv);
            let mut hess_ref = [[[0.0; 2]; 2]; 2];
            for c in 0..2 {
                hess_ref[c] = mat_mul(&binvt, &mat_mul(&hess[c], &binv));
            }
            let f = mat_add(&IDENT, &grad_ref);
            let j = det2(&f);
            if j < min_j {
                min_j = j;
                worst = e;
            }
            if j <= j_min {
                return Err(GeometryError::MeshTangled {
                    element: e,
                    min_j: j,
                    threshold: j_min,
                });
            }
            let finv = inv2(&f);
            // dF/dx_l has entries (m,c) -> hess_ref[m][c][l]; dJ/dx_l follows
            // from Jacobi's formula.
            let mut g = [[[0.0; 2]; 2]; 2];
            for l in 0..2 {
                let mut dj = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        dj += finv[a][b] * hess_ref[b][a][l];
                    }
                }
                let dj = j * dj;
                for c in 0..2 {
                    for m in 0..2 {
                        g[c][m][l] = hess_ref[m][c][l] / j - dj / (j * j) * f[m][c];
                    }
                }
            }
            qw.push(tab.vol_w[q] * detb);
            qp.push(QpGeom {
                xref,
                eta,
                f,
                j,
                finv,
                g,
            });
        }
        elems.push(ElemGeom {
            element: e,
            detb,
            binvt,
            qw,
            qp,
        });
    }

    let mut facets = Vec::with_capacity(dm.fluid_facets.len());
    for &fi in &dm.fluid_facets {
        let facet = &mesh.facets()[fi];
        let [lo, hi] = facet.vertices;
        let (pl, ph) = (mesh.vertices()[lo], mesh.vertices()[hi]);
        let tau = [ph[0] - pl[0], ph[1] - pl[1]];
        let ref_len = (tau[0] * tau[0] + tau[1] * tau[1]).sqrt();

        let mut sides = Vec::new();
        for side in &facet.sides {
            if mesh.triangles()[side.element].region != Region::Fluid {
                continue;
            }
            let variant = side_variant(side);
            let stab = &tab.side[variant];
            let e = side.element;
            let pos = dm.fluid_elem_position(e);
            let (_, jac) = mesh.element_map(e);
            let binv = inv2(&jac);
            let nodes = &dm.mesh_nodes.elem_nodes[pos];
            let nref = reference_normal(mesh, fi, side);

            let mut qps = Vec::with_capacity(tab.seg_pts.len());
            for (q, &t) in tab.seg_pts.iter().enumerate() {
                let xref = [pl[0] + t * tau[0], pl[1] + t * tau[1]];
                let mut eta = [0.0; 2];
                let mut grad = [[0.0; 2]; 2];
                for i in 0..np {
                    let v = stab.values[q * np + i];
                    let gx = stab.grads[(q * np + i) * 2];
                    let gy = stab.grads[(q * np + i) * 2 + 1];
                    let en = eta_nodes[nodes[i]];
                    for c in 0..2 {
                        eta[c] += en[c] * v;
                        grad[c][0] += en[c] * gx;
                        grad[c][1] += en[c] * gy;
                    }
                }
                let grad_ref = mat_mul(&grad, &binv);
                let f = mat_add(&IDENT, &grad_ref);
                let j = det2(&f);
                if j < min_j {
                    min_j = j;
                    worst = e;
                }
                if j <= j_min {
                    return Err(GeometryError::MeshTangled {
                        element: e,
                        min_j: j,
                        threshold: j_min,
                    });
                }
                let finv = inv2(&f);
                // Nanson: deformed normal direction is J F^{-T} nref.
                let finvt = transpose2(&finv);
                let scaled = mat_vec(&finvt, &nref);
                let scaled = [scaled[0] * j, scaled[1] * j];
                let jb = (scaled[0] * scaled[0] + scaled[1] * scaled[1]).sqrt();
                qps.push(FacetQpGeom {
                    xref,
                    eta,
                    f,
                    j,
                    finv,
                    nref,
                    ndef: [scaled[0] / jb, scaled[1] / jb],
                    jb,
                });
            }
            sides.push(FacetSideGeom {
                element: e,
                variant,
                qp: qps,
            });
        }
        facets.push(FacetGeom {
            facet: fi,
            ref_len,
            sides,
        });
    }

    let _ = worst;
    Ok(AleGeometry {
        elems,
        facets,
        min_j,
    })
}

/// Piola push-forward of a reference vector value: v = (1/J) F vhat.
#[inline]
pub fn piola_value(f: &Mat2, j: f64, vhat: &Vec2) -> Vec2 {
    let fv = mat_vec(f, vhat);
    [fv[0] / j, fv[1] / j]
}

/// Divergence of the push-forward: div v = (1/J) divhat vhat.
#[inline]
pub fn piola_div(j: f64, div_hat: f64) -> f64 {
    div_hat / j
}

/// Physical (deformed-coordinate) gradient of the Piola push-forward of a
/// field with reference value vhat and reference gradient grad_vhat:
/// grad v = [(1/J) F grad_vhat + sum_c vhat_c g_c] F^{-1}.
#[inline]
pub fn piola_gradient(qp: &QpGeom, vhat: &Vec2, grad_vhat: &Mat2) -> Mat2 {
    let mut inner = mat_scale(&mat_mul(&qp.f, grad_vhat), 1.0 / qp.j);
    inner = mat_add(&inner, &mat_scale(&qp.g[0], vhat[0]));
    inner = mat_add(&inner, &mat_scale(&qp.g[1], vhat[1]));
    mat_mul(&inner, &qp.finv)
}

/// Discrete domain velocity at a shared quadrature point:
/// w = (eta_n - eta_prev)/tau composed with the current map, and
/// grad w = grad_what (F_n)^{-1} with grad_what = (F_n - F_prev)/tau.
#[inline]
pub fn domain_velocity(now: &QpGeom, prev: &QpGeom, tau: f64) -> (Vec2, Mat2) {
    let w = [
        (now.eta[0] - prev.eta[0]) / tau,
        (now.eta[1] - prev.eta[1]) / tau,
    ];
    let grad_what = mat_scale(&mat_sub(&now.f, &prev.f), 1.0 / tau);
    (w, mat_mul(&grad_what, &now.finv))
}

/// Evaluate the previous-step velocity transported to the current deformed
/// points: u_prev composed with the cross-step map equals, at the shared
/// reference point, (1/J_prev) F_prev uhat_prev. No inverse map is searched.
pub fn pullback_previous(
    elem_prev: &ElemGeom,
    tab: &RefTables,
    uhat_coeffs: &[f64],
) -> Vec<Vec2> {
    let np = tab.np_k;
    assert_eq!(uhat_coeffs.len(), 2 * np);
    elem_prev
        .qp
        .iter()
        .enumerate()
        .map(|(q, qp)| {
            let mut uhat = [0.0; 2];
            for i in 0..np {
                let v = tab.tri.values[q * np + i];
                uhat[0] += uhat_coeffs[2 * i] * v;
                uhat[1] += uhat_coeffs[2 * i + 1] * v;
            }
            piola_value(&qp.f, qp.j, &uhat)
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct StabilityReport {
    /// Frobenius sup of grad w over current deformed fluid quadrature points.
    pub grad_w_now: f64,
    /// Same velocity field measured on the previous deformed domain.
    pub grad_w_prev: f64,
    pub g1: f64,
    pub g2: f64,
    /// Step bound 1/(1.5*|grad w|_n + G1*|grad w|_{n-1}); +inf for rigid motion.
    pub tau0: f64,
    /// Step bound 1/(G2*|grad w|_n^2); +inf for rigid motion.
    pub tau0p: f64,
}

/// Stability constants of one step: supremum over n_time_samples of the
/// transfer-factor norms between the two cached geometries, with the
/// linear-in-time deformation gradient F^t = (1-s) F_prev + s F_now.
pub fn stability_bounds(
    now: &AleGeometry,
    prev: &AleGeometry,
    tau: f64,
    n_time_samples: usize,
) -> StabilityReport {
    assert!(n_time_samples >= 2);
    assert_eq!(now.elems.len(), prev.elems.len());

    let mut grad_w_now: f64 = 0.0;
    let mut grad_w_prev: f64 = 0.0;
    for (en, ep) in now.elems.iter().zip(&prev.elems) {
        for (qn, qp) in en.qp.iter().zip(&ep.qp) {
            let grad_what = mat_scale(&mat_sub(&qn.f, &qp.f), 1.0 / tau);
            grad_w_now = grad_w_now.max(frob(&mat_mul(&grad_what, &qn.finv)));
            grad_w_prev = grad_w_prev.max(frob(&mat_mul(&grad_what, &qp.finv)));
        }
    }

    let mut g1: f64 = 0.0;
    let mut g2: f64 = 0.0;
    for s in 0..n_time_samples {
        let theta = s as f64 / (n_time_samples - 1) as f64;
        // Per-sample L-infinity norms over all quadrature points.
        let mut n_gp: f64 = 0.0; // |G_{n-1}(t)|
        let mut n_gp_inv: f64 = 0.0;
        let mut n_jn: f64 = 0.0; // |J_n(t)| (scalar)
        let mut n_fn: f64 = 0.0; // |F_n(t)|
        let mut n_fn_invt: f64 = 0.0;
        let mut n_gn: f64 = 0.0;
        for (en, ep) in now.elems.iter().zip(&prev.elems) {
            for (qn, qp) in en.qp.iter().zip(&ep.qp) {
                let ft = mat_add(&mat_scale(&qp.f, 1.0 - theta), &mat_scale(&qn.f, theta));
                let jt = det2(&ft);
                // Transfer factors relative to the previous geometry.
                let fp = mat_mul(&ft, &qp.finv);
                let gp = mat_scale(&fp, qp.j / jt);
                n_gp = n_gp.max(frob(&gp));
                n_gp_inv = n_gp_inv.max(frob(&inv2(&gp)));
                // Transfer factors relative to the current geometry.
                let f_n = mat_mul(&ft, &qn.finv);
                let jn = qn.j / jt;
                n_jn = n_jn.max(jn.abs());
                n_fn = n_fn.max(frob(&f_n));
                n_fn_invt = n_fn_invt.max(frob(&transpose2(&inv2(&f_n))));
                n_gn = n_gn.max(frob(&mat_scale(&f_n, jn)));
            }
        }
        g1 = g1.max((1.0 + 0.5 * n_gp_inv * n_gp) * n_gp);
        g2 = g2.max(
            0.5 * (n_jn
                + (2.0 + 0.5 * n_fn * n_fn) * n_fn_invt * n_gn
                + 0.5 * n_fn_invt * n_fn_invt * n_fn * n_gn),
        );
    }

    StabilityReport {
        grad_w_now,
        grad_w_prev,
        g1,
        g2,
        tau0: 1.0 / (1.5 * grad_w_now + g1 * grad_w_prev),
        tau0p: 1.0 / (g2 * grad_w_now * grad_w_now),
    }
}

/// Evaluate the discrete mesh-displacement field at an arbitrary reference
/// point of one element (slow path for diagnostics and tests).
pub fn eval_mesh_disp(
    mesh: &Mesh,
    dm: &DofMap,
    basis: &TriangleBasis,
    eta_nodes: &[Vec2],
    element: usize,
    xref: Vec2,
) -> Vec2 {
    let (origin, jac) = mesh.element_map(element);
    let binv = inv2(&jac);
    let d = [xref[0] - origin[0], xref[1] - origin[1]];
    let xi = mat_vec(&binv, &d);
    let table = basis.eval(&[xi]);
    let nodes = &dm.mesh_nodes.elem_nodes[dm.fluid_elem_position(element)];
    let mut out = [0.0; 2];
    for (i, &node) in nodes.iter().enumerate() {
        let v = table.values[i];
        out[0] += eta_nodes[node][0] * v;
        out[1] += eta_nodes[node][1] * v;
    }
    out
}

/// Nodal values of a displacement function (interpolation onto the mesh
/// displacement space; exact when the function is a polynomial of degree k).
pub fn eta_from_fn(dm: &DofMap, f: impl Fn(Vec2) -> Vec2) -> Vec<Vec2> {
    dm.mesh_nodes.coords.iter().map(|&p| f(p)).collect()
}
