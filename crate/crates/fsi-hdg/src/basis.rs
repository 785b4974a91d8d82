//! Equispaced Lagrange bases on the reference triangle and segment, with
//! values, gradients, and second derivatives.
//!
//! Basis coefficients come from inverting the monomial Vandermonde matrix at
//! the Lagrange nodes; evaluation sums monomial derivatives. Degrees up to 3
//! are supported, which keeps the Vandermonde well conditioned.

use nalgebra::DMatrix;

use crate::quadrature::Domain;

pub const MAX_DEGREE: usize = 3;

/// Number of scalar degrees of freedom of P_k on the triangle.
pub fn triangle_ndofs(k: usize) -> usize {
    (k + 1) * (k + 2) / 2
}

/// Number of scalar degrees of freedom of P_k on the segment.
pub fn segment_ndofs(k: usize) -> usize {
    k + 1
}

/// Lagrange nodes of P_k on the reference triangle.
///
/// Layout: the three vertices (0,0), (1,0), (0,1); then k-1 interior nodes per
/// edge for the directed edges (0,1), (1,2), (2,0) in edge-parameter order;
/// then interior nodes. P_0 uses the centroid.
pub fn triangle_nodes(k: usize) -> Vec<[f64; 2]> {
    assert!(k <= MAX_DEGREE, "degree {k} exceeds supported maximum");
    if k == 0 {
        return vec![[1.0 / 3.0, 1.0 / 3.0]];
    }
    let verts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let mut nodes: Vec<[f64; 2]> = verts.to_vec();
    let edges = [(0usize, 1usize), (1, 2), (2, 0)];
    for (a, b) in edges {
        for i in 1..k {
            let t = i as f64 / k as f64;
            nodes.push([
                verts[a][0] + t * (verts[b][0] - verts[a][0]),
                verts[a][1] + t * (verts[b][1] - verts[a][1]),
            ]);
        }
    }
    if k == 3 {
        nodes.push([1.0 / 3.0, 1.0 / 3.0]);
    }
    debug_assert_eq!(nodes.len(), triangle_ndofs(k));
    nodes
}

/// Lagrange nodes of P_k on [0, 1]: equispaced endpoints-first-free layout,
/// simply t_i = i/k; P_0 uses the midpoint.
pub fn segment_nodes(k: usize) -> Vec<f64> {
    assert!(k <= MAX_DEGREE, "degree {k} exceeds supported maximum");
    if k == 0 {
        return vec![0.5];
    }
    (0..=k).map(|i| i as f64 / k as f64).collect()
}

/// Monomial exponents (a, b) for x^a y^b spanning P_k, degree-major order.
fn triangle_monomials(k: usize) -> Vec<(i32, i32)> {
    let mut m = Vec::new();
    for d in 0..=k as i32 {
        for a in (0..=d).rev() {
            m.push((a, d - a));
        }
    }
    m
}

#[derive(Debug, Clone)]
pub struct TriangleBasis {
    pub k: usize,
    pub nodes: Vec<[f64; 2]>,
    monos: Vec<(i32, i32)>,
    /// coeff[m * ndofs + j]: coefficient of monomial m in Lagrange function j.
    coeff: Vec<f64>,
}

/// Basis values and derivatives at a fixed point set, flattened as
/// `[point * ndofs + dof]` (gradients and Hessians add a trailing component
/// index: gradient (d/dx, d/dy), Hessian (xx, xy, yy)).
#[derive(Debug, Clone)]
pub struct TriangleBasisTable {
    pub ndofs: usize,
    pub npoints: usize,
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    pub hessians: Vec<f64>,
}

impl TriangleBasis {
    pub fn new(k: usize) -> Self {
        assert!(k <= MAX_DEGREE, "degree {k} exceeds supported maximum");
        let nodes = triangle_nodes(k);
        let monos = triangle_monomials(k);
        let n = nodes.len();
        let v = DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = monos[j];
            nodes[i][0].powi(a) * nodes[i][1].powi(b)
        });
        let vinv = v
            .try_inverse()
            .expect("Lagrange Vandermonde must be invertible for k <= 3");
        // vinv[m][j] is the coefficient of monomial m in Lagrange function j:
        // V * C = I with C = V^{-1} read column-wise.
        let mut coeff = vec![0.0; n * n];
        for m in 0..n {
            for j in 0..n {
                coeff[m * n + j] = vinv[(m, j)];
            }
        }
        Self {
            k,
            nodes,
            monos,
            coeff,
        }
    }

    pub fn ndofs(&self) -> usize {
        self.nodes.len()
    }

    pub fn eval(&self, points: &[[f64; 2]]) -> TriangleBasisTable {
        let nd = self.ndofs();
        let np = points.len();
        let mut values = vec![0.0; np * nd];
        let mut grads = vec![0.0; np * nd * 2];
        let mut hessians = vec![0.0; np * nd * 3];
        for (pi, p) in points.iter().enumerate() {
            for (m, &(a, b)) in self.monos.iter().enumerate() {
                let (af, bf) = (a as f64, b as f64);
                let xa = p[0].powi(a);
                let yb = p[1].powi(b);
                let val = xa * yb;
                let dx = if a > 0 { af * p[0].powi(a - 1) * yb } else { 0.0 };
                let dy = if b > 0 { bf * xa * p[1].powi(b - 1) } else { 0.0 };
                let dxx = if a > 1 {
                    af * (af - 1.0) * p[0].powi(a - 2) * yb
                } else {
                    0.0
                };
                let dxy = if a > 0 && b > 0 {
                    af * bf * p[0].powi(a - 1) * p[1].powi(b - 1)
                } else {
                    0.0
                };
                let dyy = if b > 1 {
                    bf * (bf - 1.0) * xa * p[1].powi(b - 2)
                } else {
                    0.0
                };
                for j in 0..nd {
                    let c = self.coeff[m * nd + j];
                    if c == 0.0 {
                        continue;
                    }
                    values[pi * nd + j] += c * val;
                    grads[(pi * nd + j) * 2] += c * dx;
                    grads[(pi * nd + j) * 2 + 1] += c * dy;
                    hessians[(pi * nd + j) * 3] += c * dxx;
                    hessians[(pi * nd + j) * 3 + 1] += c * dxy;
                    hessians[(pi * nd + j) * 3 + 2] += c * dyy;
                }
            }
        }
        TriangleBasisTable {
            ndofs: nd,
            npoints: np,
            values,
            grads,
            hessians,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SegmentBasis {
    pub k: usize,
    pub nodes: Vec<f64>,
    /// coeff[m * ndofs + j]: coefficient of t^m in Lagrange function j.
    coeff: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SegmentBasisTable {
    pub ndofs: usize,
    pub npoints: usize,
    pub values: Vec<f64>,
    pub derivs: Vec<f64>,
}

impl SegmentBasis {
    pub fn new(k: usize) -> Self {
        assert!(k <= MAX_DEGREE, "degree {k} exceeds supported maximum");
        let nodes = segment_nodes(k);
        let n = nodes.len();
        let v = DMatrix::from_fn(n, n, |i, j| nodes[i].powi(j as i32));
        let vinv = v.try_inverse().expect("segment Vandermonde invertible");
        let mut coeff = vec![0.0; n * n];
        for m in 0..n {
            for j in 0..n {
                coeff[m * n + j] = vinv[(m, j)];
            }
        }
        Self { k, nodes, coeff }
    }

    pub fn ndofs(&self) -> usize {
        self.nodes.len()
    }

    pub fn eval(&self, points: &[f64]) -> SegmentBasisTable {
        let nd = self.ndofs();
        let np = points.len();
        let mut values = vec![0.0; np * nd];
        let mut derivs = vec![0.0; np * nd];
        for (pi, &t) in points.iter().enumerate() {
            for m in 0..nd {
                let tm = t.powi(m as i32);
                let dtm = if m > 0 {
                    m as f64 * t.powi(m as i32 - 1)
                } else {
                    0.0
                };
                for j in 0..nd {
                    let c = self.coeff[m * nd + j];
                    values[pi * nd + j] += c * tm;
                    derivs[pi * nd + j] += c * dtm;
                }
            }
        }
        SegmentBasisTable {
            ndofs: nd,
            npoints: np,
            values,
            derivs,
        }
    }
}

/// Convenience entry point: values and reference gradients of the P_k Lagrange
/// basis at the given points. Segment points use their first coordinate;
/// segment "gradients" carry the 1D derivative in the first slot.
pub fn eval_basis(
    k: usize,
    domain: Domain,
    points: &[[f64; 2]],
) -> (Vec<Vec<f64>>, Vec<Vec<[f64; 2]>>) {
    match domain {
        Domain::Triangle => {
            let basis = TriangleBasis::new(k);
            let table = basis.eval(points);
            let nd = table.ndofs;
            let values = (0..table.npoints)
                .map(|p| table.values[p * nd..(p + 1) * nd].to_vec())
                .collect();
            let grads = (0..table.npoints)
                .map(|p| {
                    (0..nd)
                        .map(|j| {
                            [
                                table.grads[(p * nd + j) * 2],
                                table.grads[(p * nd + j) * 2 + 1],
                            ]
                        })
                        .collect()
                })
                .collect();
            (values, grads)
        }
        Domain::Segment => {
            let basis = SegmentBasis::new(k);
            let pts: Vec<f64> = points.iter().map(|p| p[0]).collect();
            let table = basis.eval(&pts);
            let nd = table.ndofs;
            let values = (0..table.npoints)
                .map(|p| table.values[p * nd..(p + 1) * nd].to_vec())
                .collect();
            let grads = (0..table.npoints)
                .map(|p| (0..nd).map(|j| [table.derivs[p * nd + j], 0.0]).collect())
                .collect();
            (values, grads)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn p1_centroid_values_are_one_third() {
        let basis = TriangleBasis::new(1);
        let table = basis.eval(&[[1.0 / 3.0, 1.0 / 3.0]]);
        for j in 0..3 {
            assert!((table.values[j] - 1.0 / 3.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn lagrange_property_at_nodes() {
        for k in 0..=MAX_DEGREE {
            let basis = TriangleBasis::new(k);
            let table = basis.eval(&basis.nodes.clone());
            let nd = basis.ndofs();
            for i in 0..nd {
                for j in 0..nd {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (table.values[i * nd + j] - expect).abs() <= 1e-12,
                        "k={k} node {i} dof {j}"
                    );
                }
            }
        }
    }

    #[test]
    fn cubic_reproduction_with_derivatives() {
        // p(x,y) = 2 - x + 3y + x^2 - 2xy + y^2 + 0.5x^3 - x^2 y + 2 x y^2 - y^3
        let p = |x: f64, y: f64| {
            2.0 - x + 3.0 * y + x * x - 2.0 * x * y + y * y + 0.5 * x * x * x
                - x * x * y
                + 2.0 * x * y * y
                - y * y * y
        };
        let px = |x: f64, y: f64| -1.0 + 2.0 * x - 2.0 * y + 1.5 * x * x - 2.0 * x * y + 2.0 * y * y;
        let py = |x: f64, y: f64| 3.0 - 2.0 * x + 2.0 * y - x * x + 4.0 * x * y - 3.0 * y * y;
        let pxx = |x: f64, y: f64| 2.0 + 3.0 * x - 2.0 * y;
        let pxy = |x: f64, y: f64| -2.0 - 2.0 * x + 4.0 * y;
        let pyy = |x: f64, y: f64| 2.0 + 4.0 * x - 6.0 * y;

        let basis = TriangleBasis::new(3);
        let coeffs: Vec<f64> = basis.nodes.iter().map(|n| p(n[0], n[1])).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pts: Vec<[f64; 2]> = (0..20)
            .map(|_| {
                let x = rng.gen_range(0.0..1.0);
                let y = rng.gen_range(0.0..(1.0 - x));
                [x, y]
            })
            .collect();
        let table = basis.eval(&pts);
        let nd = basis.ndofs();
        for (pi, pt) in pts.iter().enumerate() {
            let mut v = 0.0;
            let mut g = [0.0, 0.0];
            let mut h = [0.0, 0.0, 0.0];
            for j in 0..nd {
                v += coeffs[j] * table.values[pi * nd + j];
                g[0] += coeffs[j] * table.grads[(pi * nd + j) * 2];
                g[1] += coeffs[j] * table.grads[(pi * nd + j) * 2 + 1];
                h[0] += coeffs[j] * table.hessians[(pi * nd + j) * 3];
                h[1] += coeffs[j] * table.hessians[(pi * nd + j) * 3 + 1];
                h[2] += coeffs[j] * table.hessians[(pi * nd + j) * 3 + 2];
            }
            assert!((v - p(pt[0], pt[1])).abs() <= 1e-13);
            assert!((g[0] - px(pt[0], pt[1])).abs() <= 1e-12);
            assert!((g[1] - py(pt[0], pt[1])).abs() <= 1e-12);
            assert!((h[0] - pxx(pt[0], pt[1])).abs() <= 1e-11);
            assert!((h[1] - pxy(pt[0], pt[1])).abs() <= 1e-11);
            assert!((h[2] - pyy(pt[0], pt[1])).abs() <= 1e-11);
        }
    }

    #[test]
    fn partition_of_unity_and_derivative_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 1..=MAX_DEGREE {
            let basis = TriangleBasis::new(k);
            let pts: Vec<[f64; 2]> = (0..10)
                .map(|_| {
                    let x = rng.gen_range(0.0..1.0);
                    let y = rng.gen_range(0.0..(1.0 - x));
                    [x, y]
                })
                .collect();
            let table = basis.eval(&pts);
            let nd = basis.ndofs();
            for pi in 0..pts.len() {
                let vsum: f64 = (0..nd).map(|j| table.values[pi * nd + j]).sum();
                let gx: f64 = (0..nd).map(|j| table.grads[(pi * nd + j) * 2]).sum();
                let gy: f64 = (0..nd).map(|j| table.grads[(pi * nd + j) * 2 + 1]).sum();
                assert!((vsum - 1.0).abs() <= 1e-12);
                assert!(gx.abs() <= 1e-12 && gy.abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn segment_basis_reproduces_cubics() {
        let p = |t: f64| 1.0 - 2.0 * t + 0.5 * t * t + 0.25 * t * t * t;
        let dp = |t: f64| -2.0 + t + 0.75 * t * t;
        let basis = SegmentBasis::new(3);
        let coeffs: Vec<f64> = basis.nodes.iter().map(|&n| p(n)).collect();
        let pts = [0.1, 0.37, 0.5, 0.93];
        let table = basis.eval(&pts);
        let nd = basis.ndofs();
        for (pi, &t) in pts.iter().enumerate() {
            let mut v = 0.0;
            let mut d = 0.0;
            for j in 0..nd {
                v += coeffs[j] * table.values[pi * nd + j];
                d += coeffs[j] * table.derivs[pi * nd + j];
            }
            assert!((v - p(t)).abs() <= 1e-13);
            assert!((d - dp(t)).abs() <= 1e-12);
        }
    }

    #[test]
    fn eval_basis_wrapper_shapes() {
        let (values, grads) = eval_basis(2, Domain::Triangle, &[[0.25, 0.25]]);
        assert_eq!(values.len(), 1);
        assert_eq!(values[0].len(), 6);
        assert_eq!(grads[0].len(), 6);
        let (values, _) = eval_basis(1, Domain::Segment, &[[0.5, 0.0]]);
        assert_eq!(values[0], vec![0.5, 0.5]);
    }
}
