//! Element-local forms of the linear-elastic structure HDG discretization on
//! the fixed reference solid mesh. The solid never deforms in this Lagrangian
//! formulation, so every block is geometry-independent and assembled once.
//!
//! Local pair layout (velocity and displacement alike):
//! [element dofs (2 per node) | trace dofs edge 0..2], node-major.
//! Stress coefficients per node: (xx, yy, xy), Frobenius weight 2 on shear.

use nalgebra::{DMatrix, DVector};

use crate::geometry::{mat_vec, reference_normal, RefTables, Vec2};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy)]
pub struct StructureParams {
    pub rho_s: f64,
    pub mu_s: f64,
    pub lambda_s: f64,
}

/// Precomputed per-element blocks; immutable for the whole run.
pub struct StructureBlocks {
    pub np: usize,
    pub nt: usize,
    /// Stress mass (SPD, Frobenius inner product on the reference element).
    pub a: DMatrix<f64>,
    /// Stress coefficients = 2 mu_s * k_op * displacement pair.
    /// The facet sign of the coupling form is chosen so that matched traces
    /// reproduce the symmetric-gradient projection at every order, keeping
    /// the eliminated elastic operator consistent.
    pub k_op: DMatrix<f64>,
    /// B^T A^{-1} B: elastic operator up to the 2 mu_s factor;
    /// d^T visc d = |K D|^2 on the element.
    pub visc: DMatrix<f64>,
    /// (div phi_a, div phi_b) over element dofs (lambda term, PSD).
    pub divdiv: DMatrix<f64>,
    /// Scalar element mass (np x np), applied per component.
    pub mass: DMatrix<f64>,
    /// Scalar facet trace mass (nt x nt) per local edge.
    pub facet_mass: [DMatrix<f64>; 3],
    /// Trace penalty sum over facets of s2 <u - ubar, v - vbar>,
    /// up to the mu_s factor (symmetric PSD).
    pub stab: DMatrix<f64>,
}

impl StructureBlocks {
    pub fn n_pair(&self) -> usize {
        2 * self.np + 6 * self.nt
    }
}

/// Assembles the constant blocks of one solid element.
pub fn structure_blocks(mesh: &Mesh, tab: &RefTables, element: usize) -> StructureBlocks {
    let (np, npm, nt) = (tab.np_k, tab.np_km1, tab.nt);
    let ns = 3 * npm;
    let ndl = 2 * np + 6 * nt;
    let (_, jac) = mesh.element_map(element);
    let detb = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    let binvt = [
        [jac[1][1] / detb, -jac[1][0] / detb],
        [-jac[0][1] / detb, jac[0][0] / detb],
    ];

    let mut a = DMatrix::zeros(ns, ns);
    let mut b = DMatrix::zeros(ns, ndl);
    let mut divdiv = DMatrix::zeros(2 * np, 2 * np);
    let mut mass = DMatrix::zeros(np, np);

    for (q, wm) in tab.vol_w.iter().enumerate() {
        let w = wm * detb;
        // Physical gradients of the P_k basis on this element.
        let mut gphys: Vec<Vec2> = Vec::with_capacity(np);
        for i in 0..np {
            let gm = [tab.tri.grads[(q * np + i) * 2], tab.tri.grads[(q * np + i) * 2 + 1]];
            gphys.push(mat_vec(&binvt, &gm));
        }
        for i in 0..np {
            let phi_i = tab.tri.values[q * np + i];
            for j in 0..np {
                mass[(i, j)] += w * phi_i * tab.tri.values[q * np + j];
                // (div phi_a, div phi_b): div of dof (j, c) is gphys[j][c].
                for ci in 0..2 {
                    for cj in 0..2 {
                        divdiv[(2 * i + ci, 2 * j + cj)] += w * gphys[i][ci] * gphys[j][cj];
                    }
                }
            }
        }
        for mi in 0..npm {
            let psi_i = tab.tri_pm1.values[q * npm + mi];
            let gm = [
                tab.tri_pm1.grads[(q * npm + mi) * 2],
                tab.tri_pm1.grads[(q * npm + mi) * 2 + 1],
            ];
            let g = mat_vec(&binvt, &gm);
            for mj in 0..npm {
                let psi_j = tab.tri_pm1.values[q * npm + mj];
                let m = w * psi_i * psi_j;
                a[(3 * mi, 3 * mj)] += m;
                a[(3 * mi + 1, 3 * mj + 1)] += m;
                a[(3 * mi + 2, 3 * mj + 2)] += 2.0 * m;
            }
            // (d, div M) per stress component.
            let divm = [[g[0], 0.0], [0.0, g[1]], [g[1], g[0]]];
            for i in 0..np {
                let phi = tab.tri.values[q * np + i];
                for c in 0..2 {
                    for (acomp, dv) in divm.iter().enumerate() {
                        b[(3 * mi + acomp, 2 * i + c)] += w * phi * dv[c];
                    }
                }
            }
        }
    }

    // Facet pieces: -<dbar, M n> in B, trace penalty, facet trace mass.
    let mut stab = DMatrix::zeros(ndl, ndl);
    let mut facet_mass =
        [DMatrix::zeros(nt, nt), DMatrix::zeros(nt, nt), DMatrix::zeros(nt, nt)];
    for (le, &fi) in mesh.triangle_facets(element).iter().enumerate() {
        let facet = &mesh.facets()[fi];
        let side = facet
            .sides
            .iter()
            .find(|s| s.element == element)
            .expect("element borders its own facet");
        let variant = side.local_edge * 2 + usize::from(!side.same_direction);
        let len = mesh.facet_length(fi);
        let s2 = 1.0 / len;
        let n = reference_normal(mesh, fi, side);
        let stri = &tab.side[variant];
        let stri_pm1 = &tab.side_pm1[variant];
        let tr0 = 2 * np + le * 2 * nt;

        for (q, wq) in tab.seg_w.iter().enumerate() {
            let w = wq * len;
            for mi in 0..npm {
                let psi = stri_pm1.values[q * npm + mi];
                let mn = [[psi * n[0], 0.0], [0.0, psi * n[1]], [psi * n[1], psi * n[0]]];
                for i in 0..nt {
                    let chi = tab.seg.values[q * nt + i];
                    for c in 0..2 {
                        for (acomp, m) in mn.iter().enumerate() {
                            b[(3 * mi + acomp, tr0 + 2 * i + c)] -= w * chi * m[c];
                        }
                    }
                }
            }
            for i in 0..nt {
                let chi_i = tab.seg.values[q * nt + i];
                for j in 0..nt {
                    facet_mass[le][(i, j)] += w * chi_i * tab.seg.values[q * nt + j];
                }
            }
            // Penalty differences per dof at this point.
            let mut diff: Vec<f64> = vec![0.0; ndl / 2];
            for i in 0..np {
                diff[i] = stri.values[q * np + i];
            }
            for i in 0..nt {
                diff[np + le * nt + i] = -tab.seg.values[q * nt + i];
            }
            let ws = s2 * w;
            for t in 0..ndl / 2 {
                if diff[t] == 0.0 {
                    continue;
                }
                for s in 0..ndl / 2 {
                    let v = ws * diff[t] * diff[s];
                    if v != 0.0 {
                        let (rt, rs) = (pair_index(t, np, nt), pair_index(s, np, nt));
                        stab[(rt, rs)] += v;
                        stab[(rt + 1, rs + 1)] += v;
                    }
                }
            }
        }
    }

    let chol = a.clone().cholesky().expect("stress mass is SPD");
    let x = chol.solve(&b);
    let visc = b.transpose() * &x;
    let k_op = -x;
    StructureBlocks { np, nt, a, k_op, visc, divdiv, mass, facet_mass, stab }
}

/// Maps a scalar dof index (element nodes, then per-edge trace nodes) to the
/// x-component position in the interleaved pair layout.
fn pair_index(scalar: usize, np: usize, nt: usize) -> usize {
    if scalar < np {
        2 * scalar
    } else {
        let r = scalar - np;
        let (le, i) = (r / nt, r % nt);
        2 * np + le * 2 * nt + 2 * i
    }
}

/// Structure momentum residual over the local pair layout:
/// rho_s (D_t u, v)_K (element rows) + 2 mu_s B^T A^{-1} B d
/// + lambda_s divdiv d (element rows) + mu_s stab d.
pub fn momentum_residual(
    blocks: &StructureBlocks,
    params: &StructureParams,
    tau: f64,
    u_now: &[f64],
    u_prev_elem: &[f64],
    d_now: &[f64],
) -> DVector<f64> {
    let (np, ndl) = (blocks.np, blocks.n_pair());
    assert_eq!(u_now.len(), ndl);
    assert_eq!(d_now.len(), ndl);
    assert_eq!(u_prev_elem.len(), 2 * np);
    let dv = DVector::from_column_slice(d_now);
    let mut r = &blocks.visc * &dv * (2.0 * params.mu_s) + &blocks.stab * &dv * params.mu_s;
    // Element-test rows: time derivative and div-div terms.
    let dd = &blocks.divdiv * DVector::from_column_slice(&d_now[..2 * np]);
    for i in 0..np {
        for c in 0..2 {
            let mut acc = params.lambda_s * dd[2 * i + c];
            for j in 0..np {
                acc += params.rho_s / tau
                    * blocks.mass[(i, j)]
                    * (u_now[2 * j + c] - u_prev_elem[2 * j + c]);
            }
            r[2 * i + c] += acc;
        }
    }
    r
}

/// Displacement-velocity relations: element residual (D_t d - u, m)_K and
/// per-facet trace residual <D_t dbar - ubar, mbar>.
pub fn du_residuals(
    blocks: &StructureBlocks,
    tau: f64,
    d_now: &[f64],
    d_prev: &[f64],
    u_now: &[f64],
) -> (DVector<f64>, [DVector<f64>; 3]) {
    let (np, nt, ndl) = (blocks.np, blocks.nt, blocks.n_pair());
    assert_eq!(d_now.len(), ndl);
    assert_eq!(d_prev.len(), ndl);
    assert_eq!(u_now.len(), ndl);
    let mut elem = DVector::zeros(2 * np);
    for i in 0..np {
        for c in 0..2 {
            let mut acc = 0.0;
            for j in 0..np {
                acc += blocks.mass[(i, j)]
                    * ((d_now[2 * j + c] - d_prev[2 * j + c]) / tau - u_now[2 * j + c]);
            }
            elem[2 * i + c] = acc;
        }
    }
    let mut facets = [DVector::zeros(2 * nt), DVector::zeros(2 * nt), DVector::zeros(2 * nt)];
    for le in 0..3 {
        let tr0 = 2 * np + le * 2 * nt;
        for i in 0..nt {
            for c in 0..2 {
                let mut acc = 0.0;
                for j in 0..nt {
                    acc += blocks.facet_mass[le][(i, j)]
                        * ((d_now[tr0 + 2 * j + c] - d_prev[tr0 + 2 * j + c]) / tau
                            - u_now[tr0 + 2 * j + c]);
                }
                facets[le][2 * i + c] = acc;
            }
        }
    }
    (elem, facets)
}

/// Element contribution to the discrete structure energy:
/// rho_s/2 |u|^2 + mu_s |K D|^2 + mu_s/2 * stab(D, D) + lambda_s/2 |div d|^2.
/// These weights make the no-forcing energy balance an exact identity.
pub fn structure_energy(
    blocks: &StructureBlocks,
    params: &StructureParams,
    u_elem: &[f64],
    d_pair: &[f64],
) -> f64 {
    let np = blocks.np;
    let u = DVector::from_column_slice(u_elem);
    let d = DVector::from_column_slice(d_pair);
    let de = DVector::from_column_slice(&d_pair[..2 * np]);
    let mut kin = 0.0;
    for i in 0..np {
        for j in 0..np {
            for c in 0..2 {
                kin += blocks.mass[(i, j)] * u[2 * i + c] * u[2 * j + c];
            }
        }
    }
    0.5 * params.rho_s * kin
        + params.mu_s * (d.transpose() * &blocks.visc * &d)[(0, 0)]
        + 0.5 * params.mu_s * (d.transpose() * &blocks.stab * &d)[(0, 0)]
        + 0.5 * params.lambda_s * (de.transpose() * &blocks.divdiv * &de)[(0, 0)]
}
