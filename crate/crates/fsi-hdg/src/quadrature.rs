//! Quadrature rules on the reference triangle and the reference segment.
//!
//! Triangle rules are Gauss-Legendre conical products on the collapsed square,
//! symmetrized over the six vertex permutations of the triangle. This gives
//! positive weights and a fully symmetric point layout at any requested
//! exactness, at the price of more points than hand-optimized tables.
//! Segment rules are Gauss-Legendre on [0, 1].

use thiserror::Error;

/// Reference triangle: vertices (0,0), (1,0), (0,1). Reference segment: [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Triangle,
    Segment,
}

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("requested exactness {requested} exceeds the supported maximum {max}")]
    UnsupportedDegree { requested: usize, max: usize },
}

pub const MAX_EXACTNESS: usize = 40;

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub domain: Domain,
    /// Points in reference coordinates; segment rules use `[t, 0]`.
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Degree of polynomials integrated exactly.
    pub exactness: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Builds a rule of the requested polynomial exactness on the given domain.
pub fn quadrature_rule(domain: Domain, exactness: usize) -> Result<QuadratureRule, QuadratureError> {
    if exactness > MAX_EXACTNESS {
        return Err(QuadratureError::UnsupportedDegree {
            requested: exactness,
            max: MAX_EXACTNESS,
        });
    }
    let rule = match domain {
        Domain::Segment => segment_rule(exactness),
        Domain::Triangle => triangle_rule(exactness),
    };
    Ok(rule)
}

fn segment_rule(exactness: usize) -> QuadratureRule {
    let m = exactness / 2 + 1; // Gauss with m points is exact to degree 2m-1
    let (nodes, weights) = gauss_legendre_01(m);
    QuadratureRule {
        domain: Domain::Segment,
        points: nodes.iter().map(|&t| [t, 0.0]).collect(),
        weights,
        exactness,
    }
}

fn triangle_rule(exactness: usize) -> QuadratureRule {
    let d = exactness.max(1);
    // Collapsed-square map: x = a(1-b), y = b with Jacobian (1-b).
    // Total degree d in (x, y) gives degree <= d in a and <= d+1 in b.
    let ma = d / 2 + 1;
    let mb = (d + 1) / 2 + 1;
    let (na, wa) = gauss_legendre_01(ma);
    let (nb, wb) = gauss_legendre_01(mb);
    let mut base_points = Vec::with_capacity(ma * mb);
    let mut base_weights = Vec::with_capacity(ma * mb);
    for (&b, &wbv) in nb.iter().zip(&wb) {
        for (&a, &wav) in na.iter().zip(&wa) {
            base_points.push([a * (1.0 - b), b]);
            base_weights.push(wav * wbv * (1.0 - b));
        }
    }
    // Symmetrize over the six barycentric permutations. Averaging over the
    // group preserves exactness and yields an S3-invariant layout.
    let mut points = Vec::with_capacity(6 * base_points.len());
    let mut weights = Vec::with_capacity(6 * base_points.len());
    for (p, &w) in base_points.iter().zip(&base_weights) {
        let l = [1.0 - p[0] - p[1], p[0], p[1]];
        let perms: [[usize; 3]; 6] = [
            [0, 1, 2],
            [0, 2, 1],
            [1, 0, 2],
            [1, 2, 0],
            [2, 0, 1],
            [2, 1, 0],
        ];
        for perm in perms {
            points.push([l[perm[1]], l[perm[2]]]);
            weights.push(w / 6.0);
        }
    }
    QuadratureRule {
        domain: Domain::Triangle,
        points,
        weights,
        exactness,
    }
}

/// Gauss-Legendre nodes and weights on [0, 1], symmetric by construction.
fn gauss_legendre_01(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut nodes = vec![0.0f64; m];
    let mut weights = vec![0.0f64; m];
    for i in 0..(m + 1) / 2 {
        // Standard initial guess on [-1, 1], refined by Newton iteration.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(m, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 {
                let (_, d2) = legendre_with_derivative(m, x);
                dp = d2;
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // Mirror to enforce exact symmetry about the midpoint.
        nodes[i] = 0.5 * (1.0 - x);
        nodes[m - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[m - 1 - i] = 0.5 * w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.5;
    }
    (nodes, weights)
}

fn legendre_with_derivative(m: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|v| v as f64).product::<f64>().max(1.0)
    }

    /// Exact monomial integral over the reference triangle.
    fn triangle_monomial(a: usize, b: usize) -> f64 {
        factorial(a) * factorial(b) / factorial(a + b + 2)
    }

    #[test]
    fn triangle_weights_positive_and_sum_to_area() {
        for exactness in [1, 2, 4, 6, 10, 14, 16] {
            let rule = quadrature_rule(Domain::Triangle, exactness).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            let sum: f64 = rule.weights.iter().sum();
            assert!((sum - 0.5).abs() <= 1e-14, "exactness {exactness}: sum {sum}");
        }
    }

    #[test]
    fn triangle_monomials_exact_to_declared_degree() {
        for exactness in [1, 2, 3, 4, 6, 8, 10, 12, 14, 16] {
            let rule = quadrature_rule(Domain::Triangle, exactness).unwrap();
            for a in 0..=exactness {
                for b in 0..=(exactness - a) {
                    let num: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32))
                        .sum();
                    let exact = triangle_monomial(a, b);
                    assert!(
                        (num - exact).abs() <= 1e-14 * exact.abs().max(1.0),
                        "exactness {exactness} monomial x^{a} y^{b}: {num} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn triangle_x2y_is_one_sixtieth() {
        let rule = quadrature_rule(Domain::Triangle, 3).unwrap();
        let num: f64 = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(p, w)| w * p[0] * p[0] * p[1])
            .sum();
        assert!((num - 1.0 / 60.0).abs() <= 1e-15);
    }

    #[test]
    fn triangle_layout_is_fully_symmetric() {
        let rule = quadrature_rule(Domain::Triangle, 7).unwrap();
        // Every point's six barycentric permutations appear with equal weight.
        for (p, &w) in rule.points.iter().zip(&rule.weights) {
            let l = [1.0 - p[0] - p[1], p[0], p[1]];
            for perm in [[0usize, 2, 1], [1, 0, 2], [2, 1, 0]] {
                let q = [l[perm[1]], l[perm[2]]];
                let found = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .any(|(r, &wr)| {
                        (r[0] - q[0]).abs() <= 1e-12
                            && (r[1] - q[1]).abs() <= 1e-12
                            && (wr - w).abs() <= 1e-15
                    });
                assert!(found, "missing image of {p:?} under {perm:?}");
            }
        }
    }

    #[test]
    fn segment_weights_and_monomials() {
        for exactness in [1, 2, 5, 9, 16] {
            let rule = quadrature_rule(Domain::Segment, exactness).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            let sum: f64 = rule.weights.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-14);
            for a in 0..=exactness {
                let num: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(p, w)| w * p[0].powi(a as i32))
                    .sum();
                let exact = 1.0 / (a as f64 + 1.0);
                assert!(
                    (num - exact).abs() <= 1e-14 * exact.max(1.0),
                    "exactness {exactness} t^{a}: {num} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn degree_cap_enforced_and_high_orders_available() {
        // Orders up to 4k+4 for k <= 3 must exist.
        for exactness in [16, MAX_EXACTNESS] {
            assert!(quadrature_rule(Domain::Triangle, exactness).is_ok());
            assert!(quadrature_rule(Domain::Segment, exactness).is_ok());
        }
        let err = quadrature_rule(Domain::Triangle, MAX_EXACTNESS + 1).unwrap_err();
        assert!(matches!(err, QuadratureError::UnsupportedDegree { .. }));
    }
}
