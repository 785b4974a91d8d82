//! Smooth reference solution with matching volume, mesh, and interface
//! forcings for accuracy studies on the unit-square two-field domain
//! (fluid on x < 1/2, solid on x > 1/2).
//!
//! Velocity is the curl of a polynomial stream function, so it is exactly
//! divergence-free; the structure displacement shares the spatial profile
//! with time factor sin^2 t, which makes the displacement-velocity relation
//! d_t d = u hold exactly. All polynomial algebra below is carried out on
//! integer-valued coefficients, so the derived fields are exact.

use crate::geometry::{det2, inv2, mat_vec, transpose2, Mat2, Vec2};

/// Dense bivariate polynomial, coefficient of x^i y^j at c[i * ny + j].
#[derive(Debug, Clone)]
pub struct Poly2 {
    nx: usize,
    ny: usize,
    c: Vec<f64>,
}

impl Poly2 {
    pub fn zero() -> Self {
        Poly2 { nx: 1, ny: 1, c: vec![0.0] }
    }

    /// Separable product a(x) * b(y) from 1-D coefficient lists
    /// (ascending powers).
    pub fn separable(a: &[f64], b: &[f64]) -> Self {
        let (nx, ny) = (a.len(), b.len());
        let mut c = vec![0.0; nx * ny];
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                c[i * ny + j] = ai * bj;
            }
        }
        Poly2 { nx, ny, c }
    }

    pub fn add(&self, other: &Poly2) -> Poly2 {
        let nx = self.nx.max(other.nx);
        let ny = self.ny.max(other.ny);
        let mut c = vec![0.0; nx * ny];
        for i in 0..self.nx {
            for j in 0..self.ny {
                c[i * ny + j] += self.c[i * self.ny + j];
            }
        }
        for i in 0..other.nx {
            for j in 0..other.ny {
                c[i * ny + j] += other.c[i * other.ny + j];
            }
        }
        Poly2 { nx, ny, c }
    }

    pub fn scale(&self, s: f64) -> Poly2 {
        Poly2 { nx: self.nx, ny: self.ny, c: self.c.iter().map(|v| v * s).collect() }
    }

    pub fn mul(&self, other: &Poly2) -> Poly2 {
        let nx = self.nx + other.nx - 1;
        let ny = self.ny + other.ny - 1;
        let mut c = vec![0.0; nx * ny];
        for i in 0..self.nx {
            for j in 0..self.ny {
                let a = self.c[i * self.ny + j];
                if a == 0.0 {
                    continue;
                }
                for k in 0..other.nx {
                    for l in 0..other.ny {
                        c[(i + k) * ny + (j + l)] += a * other.c[k * other.ny + l];
                    }
                }
            }
        }
        Poly2 { nx, ny, c }
    }

    pub fn dx(&self) -> Poly2 {
        if self.nx <= 1 {
            return Poly2::zero();
        }
        let nx = self.nx - 1;
        let mut c = vec![0.0; nx * self.ny];
        for i in 1..self.nx {
            for j in 0..self.ny {
                c[(i - 1) * self.ny + j] = i as f64 * self.c[i * self.ny + j];
            }
        }
        Poly2 { nx, ny: self.ny, c }
    }

    pub fn dy(&self) -> Poly2 {
        if self.ny <= 1 {
            return Poly2::zero();
        }
        let ny = self.ny - 1;
        let mut c = vec![0.0; self.nx * ny];
        for i in 0..self.nx {
            for j in 1..self.ny {
                c[i * ny + (j - 1)] = j as f64 * self.c[i * self.ny + j];
            }
        }
        Poly2 { nx: self.nx, ny, c }
    }

    pub fn eval(&self, p: Vec2) -> f64 {
        // Horner in x of Horner-in-y rows.
        let mut acc = 0.0;
        for i in (0..self.nx).rev() {
            let mut row = 0.0;
            for j in (0..self.ny).rev() {
                row = row * p[1] + self.c[i * self.ny + j];
            }
            acc = acc * p[0] + row;
        }
        acc
    }
}

fn poly1_pow(base: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..n {
        let mut next = vec![0.0; out.len() + base.len() - 1];
        for (i, a) in out.iter().enumerate() {
            for (j, b) in base.iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        out = next;
    }
    out
}

fn poly1_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct FluidMaterial {
    pub rho_f: f64,
    pub mu_f: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SolidMaterial {
    pub rho_s: f64,
    pub mu_s: f64,
    pub lambda_s: f64,
}

/// Spatial profile P and every derived polynomial the forcings need.
pub struct ManufacturedSolution {
    pub px: Poly2,
    pub py: Poly2,
    pub pr: Poly2,
    gpx: [Poly2; 2],
    gpy: [Poly2; 2],
    gpr: [Poly2; 2],
    /// Row i: divergence of the symmetric gradient, component i.
    div_sym: [Poly2; 2],
    /// Gradient of div P (identically zero for this profile, kept general).
    grad_div: [Poly2; 2],
    lap: [Poly2; 2],
    conv: [Poly2; 2],
}

impl Default for ManufacturedSolution {
    fn default() -> Self {
        Self::new()
    }
}

impl ManufacturedSolution {
    pub fn new() -> Self {
        // x^3 (x-1)^3 and friends, ascending coefficients.
        let x3 = poly1_pow(&[0.0, 1.0], 3);
        let xm3 = poly1_pow(&[-1.0, 1.0], 3);
        let x2 = poly1_pow(&[0.0, 1.0], 2);
        let xm2 = poly1_pow(&[-1.0, 1.0], 2);
        let two_xm1 = vec![-1.0, 2.0];

        let px = Poly2::separable(&poly1_mul(&x3, &xm3), &poly1_mul(&poly1_mul(&x2, &xm2), &two_xm1))
            .scale(-1.0);
        let py = Poly2::separable(&poly1_mul(&poly1_mul(&x2, &xm2), &two_xm1), &poly1_mul(&x3, &xm3));
        let pr = Poly2::separable(&poly1_pow(&[-0.5, 1.0], 4), &poly1_pow(&[-1.0, 1.0], 4));

        let gpx = [px.dx(), px.dy()];
        let gpy = [py.dx(), py.dy()];
        let gpr = [pr.dx(), pr.dy()];

        // div D(P): component i = sum_j d_j (P_i,j + P_j,i) / 2.
        let div_sym = [
            gpx[0].dx().add(&gpx[1].dy().add(&gpy[0].dy()).scale(0.5)),
            gpy[1].dy().add(&gpy[0].dx().add(&gpx[1].dx()).scale(0.5)),
        ];
        let div = gpx[0].add(&gpy[1]);
        let grad_div = [div.dx(), div.dy()];
        let lap = [px.dx().dx().add(&px.dy().dy()), py.dx().dx().add(&py.dy().dy())];
        let conv = [
            px.mul(&gpx[0]).add(&py.mul(&gpx[1])),
            px.mul(&gpy[0]).add(&py.mul(&gpy[1])),
        ];

        ManufacturedSolution { px, py, pr, gpx, gpy, gpr, div_sym, grad_div, lap, conv }
    }

    fn profile(&self, p: Vec2) -> Vec2 {
        [self.px.eval(p), self.py.eval(p)]
    }

    fn profile_gradient(&self, p: Vec2) -> Mat2 {
        [
            [self.gpx[0].eval(p), self.gpx[1].eval(p)],
            [self.gpy[0].eval(p), self.gpy[1].eval(p)],
        ]
    }

    /// Fluid velocity in current coordinates.
    pub fn velocity(&self, x: Vec2, t: f64) -> Vec2 {
        let s = (2.0 * t).sin();
        let v = self.profile(x);
        [v[0] * s, v[1] * s]
    }

    pub fn velocity_gradient(&self, x: Vec2, t: f64) -> Mat2 {
        let s = (2.0 * t).sin();
        let g = self.profile_gradient(x);
        [[g[0][0] * s, g[0][1] * s], [g[1][0] * s, g[1][1] * s]]
    }

    pub fn velocity_dt(&self, x: Vec2, t: f64) -> Vec2 {
        let c = 2.0 * (2.0 * t).cos();
        let v = self.profile(x);
        [v[0] * c, v[1] * c]
    }

    pub fn pressure(&self, x: Vec2, t: f64) -> f64 {
        self.pr.eval(x) * (2.0 * t).sin()
    }

    /// Structure and mesh displacement in reference coordinates.
    pub fn displacement(&self, xhat: Vec2, t: f64) -> Vec2 {
        let s2 = t.sin() * t.sin();
        let v = self.profile(xhat);
        [v[0] * s2, v[1] * s2]
    }

    pub fn displacement_gradient(&self, xhat: Vec2, t: f64) -> Mat2 {
        let s2 = t.sin() * t.sin();
        let g = self.profile_gradient(xhat);
        [[g[0][0] * s2, g[0][1] * s2], [g[1][0] * s2, g[1][1] * s2]]
    }

    /// d_t of sin^2 t is sin 2t, so the structure velocity shares the fluid
    /// velocity formula (in reference coordinates).
    pub fn structure_velocity(&self, xhat: Vec2, t: f64) -> Vec2 {
        self.velocity(xhat, t)
    }

    pub fn mesh_velocity(&self, xhat: Vec2, t: f64) -> Vec2 {
        self.velocity(xhat, t)
    }

    /// Initial fluid velocity of the energy-decay experiment: 1000 P.
    pub fn energy_test_initial(&self, x: Vec2) -> Vec2 {
        let v = self.profile(x);
        [1000.0 * v[0], 1000.0 * v[1]]
    }

    /// Volume forcing of the momentum equation in current coordinates:
    /// rho (u_t + (u.grad) u) - 2 rho mu div D(u) + grad p.
    pub fn fluid_forcing(&self, m: &FluidMaterial, x: Vec2, t: f64) -> Vec2 {
        let s = (2.0 * t).sin();
        let c = 2.0 * (2.0 * t).cos();
        let mut g = [0.0; 2];
        for i in 0..2 {
            let conv = self.conv[i].eval(x);
            let prof = [self.px.eval(x), self.py.eval(x)][i];
            g[i] = m.rho_f * (c * prof + s * s * conv)
                - 2.0 * m.rho_f * m.mu_f * s * self.div_sym[i].eval(x)
                + s * self.gpr[i].eval(x);
        }
        g
    }

    /// Structure forcing in reference coordinates:
    /// rho_s u_t - lambda grad(div d) - 2 mu_s div D(d).
    pub fn structure_forcing(&self, m: &SolidMaterial, xhat: Vec2, t: f64) -> Vec2 {
        let c = 2.0 * (2.0 * t).cos();
        let s2 = t.sin() * t.sin();
        let mut g = [0.0; 2];
        for i in 0..2 {
            let prof = [self.px.eval(xhat), self.py.eval(xhat)][i];
            g[i] = m.rho_s * c * prof
                - s2 * (m.lambda_s * self.grad_div[i].eval(xhat)
                    + 2.0 * m.mu_s * self.div_sym[i].eval(xhat));
        }
        g
    }

    /// Mesh-motion forcing: -div(kappa grad eta) with eta = P sin^2 t.
    pub fn motion_forcing(&self, kappa: f64, xhat: Vec2, t: f64) -> Vec2 {
        let s2 = t.sin() * t.sin();
        [-kappa * s2 * self.lap[0].eval(xhat), -kappa * s2 * self.lap[1].eval(xhat)]
    }

    /// Current-coordinates fluid stress 2 rho mu D(u) - p I.
    pub fn fluid_stress(&self, m: &FluidMaterial, x: Vec2, t: f64) -> Mat2 {
        let g = self.velocity_gradient(x, t);
        let p = self.pressure(x, t);
        let two_mu = 2.0 * m.rho_f * m.mu_f;
        [
            [two_mu * g[0][0] - p, m.rho_f * m.mu_f * (g[0][1] + g[1][0])],
            [m.rho_f * m.mu_f * (g[0][1] + g[1][0]), two_mu * g[1][1] - p],
        ]
    }

    /// Reference-coordinates structure stress lambda (div d) I + 2 mu D(d).
    pub fn structure_stress(&self, m: &SolidMaterial, xhat: Vec2, t: f64) -> Mat2 {
        let g = self.displacement_gradient(xhat, t);
        let div = g[0][0] + g[1][1];
        [
            [m.lambda_s * div + 2.0 * m.mu_s * g[0][0], m.mu_s * (g[0][1] + g[1][0])],
            [m.mu_s * (g[0][1] + g[1][0]), m.lambda_s * div + 2.0 * m.mu_s * g[1][1]],
        ]
    }

    /// Traction mismatch on the reference interface, against the fluid-side
    /// outward normal nf: J sigma^f F^{-T} nf - sigma^s nf. The fluid stress
    /// is evaluated at the mapped point xhat + eta(xhat).
    pub fn interface_traction_gap(
        &self,
        fm: &FluidMaterial,
        sm: &SolidMaterial,
        xhat: Vec2,
        t: f64,
        nf: Vec2,
    ) -> Vec2 {
        let eta = self.displacement(xhat, t);
        let ge = self.displacement_gradient(xhat, t);
        let f = [[1.0 + ge[0][0], ge[0][1]], [ge[1][0], 1.0 + ge[1][1]]];
        let j = det2(&f);
        let finvt = transpose2(&inv2(&f));
        let x = [xhat[0] + eta[0], xhat[1] + eta[1]];
        let sf = self.fluid_stress(fm, x, t);
        let ss = self.structure_stress(sm, xhat, t);
        let nanson = mat_vec(&finvt, &nf);
        let fluid_traction = mat_vec(&sf, &[j * nanson[0], j * nanson[1]]);
        let solid_traction = mat_vec(&ss, &nf);
        [fluid_traction[0] - solid_traction[0], fluid_traction[1] - solid_traction[1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_points() -> Vec<Vec2> {
        vec![[0.13, 0.27], [0.41, 0.83], [0.5, 0.37], [0.71, 0.12], [0.9, 0.64], [0.33, 0.5]]
    }

    #[test]
    fn velocity_is_divergence_free_and_matches_hand_value() {
        let ms = ManufacturedSolution::new();
        for p in sample_points() {
            let g = ms.velocity_gradient(p, 0.37);
            assert!((g[0][0] + g[1][1]).abs() < 1e-13, "div at {p:?}");
        }
        // Hand value at (1/2, 1/4):
        // px = -(1/8)(-1/8) * (1/16)(9/16)(-1/2) = -9/32768.
        let v = ms.energy_test_initial([0.5, 0.25]);
        assert!((v[0] - (-1000.0 * 9.0 / 32768.0)).abs() < 1e-12, "{}", v[0]);
        // Zero on the boundary of the unit square.
        for p in [[0.0, 0.3], [1.0, 0.7], [0.4, 0.0], [0.6, 1.0]] {
            let v = ms.velocity(p, 1.0);
            assert!(v[0].abs() < 1e-15 && v[1].abs() < 1e-15);
        }
    }

    #[test]
    fn fields_vanish_at_start_time() {
        let ms = ManufacturedSolution::new();
        for p in sample_points() {
            assert_eq!(ms.velocity(p, 0.0), [0.0, 0.0]);
            assert_eq!(ms.displacement(p, 0.0), [0.0, 0.0]);
            assert_eq!(ms.structure_velocity(p, 0.0), [0.0, 0.0]);
            assert_eq!(ms.pressure(p, 0.0), 0.0);
        }
    }

    #[test]
    fn gradients_and_time_derivatives_match_finite_differences() {
        let ms = ManufacturedSolution::new();
        let t = 0.53;
        let h = 1e-6;
        for p in sample_points() {
            let g = ms.velocity_gradient(p, t);
            for c in 0..2 {
                let dx = if c == 0 { h } else { 0.0 };
                let dy = if c == 1 { h } else { 0.0 };
                let up = ms.velocity([p[0] + dx, p[1] + dy], t);
                let um = ms.velocity([p[0] - dx, p[1] - dy], t);
                for i in 0..2 {
                    let fd = (up[i] - um[i]) / (2.0 * h);
                    assert!((g[i][c] - fd).abs() < 1e-6 * (1.0 + fd.abs()), "grad {i}{c}");
                }
            }
            let ut = ms.velocity_dt(p, t);
            let up = ms.velocity(p, t + h);
            let um = ms.velocity(p, t - h);
            for i in 0..2 {
                let fd = (up[i] - um[i]) / (2.0 * h);
                assert!((ut[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
            }
            // Structure velocity is the exact time derivative of displacement.
            let sv = ms.structure_velocity(p, t);
            let dp = ms.displacement(p, t + h);
            let dm = ms.displacement(p, t - h);
            for i in 0..2 {
                let fd = (dp[i] - dm[i]) / (2.0 * h);
                assert!((sv[i] - fd).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    /// Central-difference divergence of a tensor field column-wise.
    fn fd_div(f: impl Fn(Vec2) -> Mat2, p: Vec2, h: f64) -> Vec2 {
        let xp = f([p[0] + h, p[1]]);
        let xm = f([p[0] - h, p[1]]);
        let yp = f([p[0], p[1] + h]);
        let ym = f([p[0], p[1] - h]);
        [
            (xp[0][0] - xm[0][0]) / (2.0 * h) + (yp[0][1] - ym[0][1]) / (2.0 * h),
            (xp[1][0] - xm[1][0]) / (2.0 * h) + (yp[1][1] - ym[1][1]) / (2.0 * h),
        ]
    }

    #[test]
    fn fluid_forcing_closes_the_momentum_equation() {
        let ms = ManufacturedSolution::new();
        let m = FluidMaterial { rho_f: 2.0, mu_f: 0.3 };
        let t = 0.77;
        let h = 1e-5;
        for p in sample_points() {
            let ut = ms.velocity_dt(p, t);
            let u = ms.velocity(p, t);
            let g = ms.velocity_gradient(p, t);
            let conv = [g[0][0] * u[0] + g[0][1] * u[1], g[1][0] * u[0] + g[1][1] * u[1]];
            let div_sigma = fd_div(|q| ms.fluid_stress(&m, q, t), p, h);
            let gf = ms.fluid_forcing(&m, p, t);
            for i in 0..2 {
                let res = m.rho_f * (ut[i] + conv[i]) - div_sigma[i] - gf[i];
                assert!(res.abs() < 1e-5 * (1.0 + gf[i].abs()), "comp {i}: {res}");
            }
        }
    }

    #[test]
    fn structure_forcing_closes_the_elasticity_equation() {
        let ms = ManufacturedSolution::new();
        let m = SolidMaterial { rho_s: 3.0, mu_s: 0.8, lambda_s: 5.0 };
        let t: f64 = 0.31;
        let h = 1e-5;
        for p in sample_points() {
            // d_t u^s = 2 cos 2t * P.
            let c = 2.0 * (2.0 * t).cos();
            let ut = [ms.px.eval(p) * c, ms.py.eval(p) * c];
            let div_sigma = fd_div(|q| ms.structure_stress(&m, q, t), p, h);
            let gs = ms.structure_forcing(&m, p, t);
            for i in 0..2 {
                let res = m.rho_s * ut[i] - div_sigma[i] - gs[i];
                assert!(res.abs() < 1e-5 * (1.0 + gs[i].abs()), "comp {i}: {res}");
            }
        }
    }

    #[test]
    fn motion_forcing_is_negative_weighted_laplacian() {
        let ms = ManufacturedSolution::new();
        let kappa = 1.7;
        let t = 0.9;
        let h = 1e-4;
        for p in sample_points() {
            let lap = |f: &dyn Fn(Vec2) -> f64| {
                (f([p[0] + h, p[1]]) + f([p[0] - h, p[1]]) + f([p[0], p[1] + h])
                    + f([p[0], p[1] - h])
                    - 4.0 * f(p))
                    / (h * h)
            };
            let gd = ms.motion_forcing(kappa, p, t);
            let l0 = lap(&|q| ms.displacement(q, t)[0]);
            let l1 = lap(&|q| ms.displacement(q, t)[1]);
            assert!((gd[0] + kappa * l0).abs() < 1e-4 * (1.0 + gd[0].abs()));
            assert!((gd[1] + kappa * l1).abs() < 1e-4 * (1.0 + gd[1].abs()));
        }
    }

    #[test]
    fn interface_gap_vanishes_at_start_and_tracks_stress_mismatch() {
        let ms = ManufacturedSolution::new();
        let fm = FluidMaterial { rho_f: 1.0, mu_f: 1.0 };
        let sm = SolidMaterial { rho_s: 1.0, mu_s: 1.0, lambda_s: 1.0 };
        let nf = [1.0, 0.0];
        for y in [0.2, 0.5, 0.8] {
            let g0 = ms.interface_traction_gap(&fm, &sm, [0.5, y], 0.0, nf);
            assert!(g0[0].abs() < 1e-15 && g0[1].abs() < 1e-15);
        }
        // With an undeformed interface configuration the gap reduces to
        // (sigma^f - sigma^s) nf; check against a frozen-geometry evaluation
        // at small time where eta = O(t^2) while stresses are O(t).
        let t = 1e-4;
        for y in [0.3, 0.6] {
            let gap = ms.interface_traction_gap(&fm, &sm, [0.5, y], t, nf);
            let sf = ms.fluid_stress(&fm, [0.5, y], t);
            let ss = ms.structure_stress(&sm, [0.5, y], t);
            let expect = [sf[0][0] - ss[0][0], sf[1][0] - ss[1][0]];
            for i in 0..2 {
                assert!(
                    (gap[i] - expect[i]).abs() < 1e-6 * (1.0 + expect[i].abs()),
                    "comp {i}: {} vs {}",
                    gap[i],
                    expect[i]
                );
            }
        }
    }
}
