//! Constant-curvature soft segment with a point mass at the tip.
//!
//! The configuration is `(Δx, Δy, Δℓ)` (planar: `(Δx, Δℓ)`), where `Δx, Δy`
//! are the tendon-length differences across the segment diameter `d` and
//! `Δℓ` the elongation. The bending angle is `θ = √(Δx² + Δy²)/d`; the tip of
//! an arc of length `L = L₀ + Δℓ` hanging along −z sits at
//!
//! ```text
//! p = L · (Δx/d · g(θ²), Δy/d · g(θ²), −h(θ²))
//! g(s) = (1 − cos θ)/θ² = Σ (−1)^k s^k/(2k+2)!
//! h(s) = sin θ / θ       = Σ (−1)^k s^k/(2k+1)!
//! ```
//!
//! which is smooth through the straight configuration. Tendon `i`, routed at
//! radius `r` and angle `ψᵢ`, has length `L − (r/d)(cos ψᵢ Δx + sin ψᵢ Δy)`;
//! the actuation matrix is the transposed tendon Jacobian.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::mechanics::Mechanics;
use crate::numcore::{Dual, Real};

const SERIES_TERMS: usize = 18;

type D1 = Dual<f64, 3>;
type D2 = Dual<D1, 3>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PccParams {
    pub spatial: bool,
    /// Rest length `L₀` (m).
    pub length: f64,
    pub diameter: f64,
    pub tip_mass: f64,
    pub gravity: f64,
    /// One entry per configuration coordinate.
    pub stiffness: Vec<f64>,
    pub damping: f64,
    pub tendon_offset: f64,
    pub tendon_angles: Vec<f64>,
    pub mass_regularization: f64,
    /// Largest admissible bending angle (rad).
    pub max_bend: f64,
    /// Smallest admissible `L/L₀`.
    pub min_length_ratio: f64,
}

impl PccParams {
    fn base(spatial: bool) -> Self {
        let (stiffness, tendon_angles) = if spatial {
            let third = 2.0 * std::f64::consts::PI / 3.0;
            (vec![50.0, 50.0, 100.0], vec![0.0, third, 2.0 * third])
        } else {
            (vec![50.0, 100.0], vec![0.0, std::f64::consts::PI])
        };
        Self {
            spatial,
            length: 0.2,
            diameter: 0.02,
            tip_mass: 0.1,
            gravity: super::GRAVITY,
            stiffness,
            damping: 0.1,
            tendon_offset: 0.008,
            tendon_angles,
            mass_regularization: 1e-4,
            max_bend: 2.5,
            min_length_ratio: 0.5,
        }
    }

    pub fn planar() -> Self {
        Self::base(false)
    }

    pub fn spatial() -> Self {
        Self::base(true)
    }

    pub fn dof(&self) -> usize {
        if self.spatial {
            3
        } else {
            2
        }
    }

    pub fn check_domain(&self, q: &[f64]) -> Result<()> {
        check_len("configuration", self.dof(), q.len())?;
        let (dx, dy, dl) = self.split(q);
        let bend = (dx * dx + dy * dy).sqrt() / self.diameter;
        if bend > self.max_bend {
            return Err(Error::Domain(format!(
                "bending angle {bend:.3} rad exceeds {:.3} rad",
                self.max_bend
            )));
        }
        if self.length + dl < self.min_length_ratio * self.length {
            return Err(Error::Domain(format!("segment length {:.4} m too short", self.length + dl)));
        }
        Ok(())
    }

    fn split<T: Real>(&self, q: &[T]) -> (T, T, T) {
        if self.spatial {
            (q[0], q[1], q[2])
        } else {
            (q[0], q[0].zero_like(), q[1])
        }
    }

    fn tip<T: Real>(&self, q: &[T]) -> [T; 3] {
        let (dx, dy, dl) = self.split(q);
        let inv_d = 1.0 / self.diameter;
        let s = (dx * dx + dy * dy).scale(inv_d * inv_d);
        let (g, h) = series(s);
        let len = dl + dl.lift(self.length);
        let lg = len * g;
        [(lg * dx).scale(inv_d), (lg * dy).scale(inv_d), -(len * h)]
    }

    /// Tendon Jacobian `∂Lᵢ/∂q`, `m×n`.
    fn tendon_jacobian(&self) -> DMatrix<f64> {
        let n = self.dof();
        let ratio = self.tendon_offset / self.diameter;
        DMatrix::from_fn(self.tendon_angles.len(), n, |i, j| {
            let psi = self.tendon_angles[i];
            match (self.spatial, j) {
                (_, j) if j == n - 1 => 1.0,
                (_, 0) => -ratio * psi.cos(),
                (true, 1) => -ratio * psi.sin(),
                _ => unreachable!(),
            }
        })
    }

    pub(super) fn mechanics(&self, q: &[f64]) -> Result<Mechanics<f64>> {
        let n = self.dof();
        let vars: Vec<D2> = q
            .iter()
            .enumerate()
            .map(|(i, &v)| D2::variable(D1::variable(v, i), i))
            .collect();
        let p = self.tip(&vars);
        // jac[j][a] = ∂p_j/∂q_a, hess[j][a][b] = ∂²p_j/∂q_a∂q_b
        let jac: Vec<Vec<f64>> = p.iter().map(|c| (0..n).map(|a| c.re.eps[a]).collect()).collect();
        let hess: Vec<Vec<Vec<f64>>> = p
            .iter()
            .map(|c| (0..n).map(|a| (0..n).map(|b| c.eps[a].eps[b]).collect()).collect())
            .collect();
        let m = self.tip_mass;
        let mut mass = vec![0.0; n * n];
        let mut mass_jac = vec![vec![0.0; n * n]; n];
        for a in 0..n {
            for b in 0..n {
                mass[a * n + b] = m * (0..3).map(|j| jac[j][a] * jac[j][b]).sum::<f64>();
                for (k, dm) in mass_jac.iter_mut().enumerate() {
                    dm[a * n + b] = m * (0..3)
                        .map(|j| hess[j][a][k] * jac[j][b] + jac[j][a] * hess[j][b][k])
                        .sum::<f64>();
                }
            }
            mass[a * n + a] += self.mass_regularization;
        }
        let mg = m * self.gravity;
        let z = p[2].re.re;
        let potential = mg * z + 0.5 * (0..n).map(|a| self.stiffness[a] * q[a] * q[a]).sum::<f64>();
        let potential_grad = (0..n).map(|a| mg * jac[2][a] + self.stiffness[a] * q[a]).collect();
        let mut damping = vec![0.0; n * n];
        for a in 0..n {
            damping[a * n + a] = self.damping;
        }
        let input = self.tendon_jacobian().transpose();
        let input: Vec<f64> = (0..n).flat_map(|i| input.row(i).iter().copied().collect::<Vec<_>>()).collect();
        Mechanics::from_mass(n, self.tendon_angles.len(), mass, mass_jac, potential, potential_grad, damping, input)
    }

    /// `C_ij = Σ_k ½(∂M_ij/∂q_k + ∂M_ik/∂q_j − ∂M_jk/∂q_i) q̇_k`.
    pub(super) fn christoffel_matrix(&self, q: &[f64], qd: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dof();
        let dm = self.mechanics(q)?.mass_jac;
        Ok(DMatrix::from_fn(n, n, |i, j| {
            (0..n)
                .map(|k| 0.5 * (dm[k][i * n + j] + dm[j][i * n + k] - dm[i][j * n + k]) * qd[k])
                .sum()
        }))
    }
}

/// `(g(s), h(s))` by Horner evaluation of the truncated series.
fn series<T: Real>(s: T) -> (T, T) {
    let mut g_coef = [0.0; SERIES_TERMS];
    let mut h_coef = [0.0; SERIES_TERMS];
    let mut fact = 1.0;
    for m in 1..=(2 * SERIES_TERMS) {
        fact *= m as f64;
        let k = (m - 1) / 2;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        if m % 2 == 1 {
            h_coef[k] = sign / fact;
        } else {
            g_coef[(m - 2) / 2] = sign / fact;
        }
    }
    let horner = |c: &[f64; SERIES_TERMS]| {
        let mut acc = s.lift(c[SERIES_TERMS - 1]);
        for &ck in c[..SERIES_TERMS - 1].iter().rev() {
            acc = acc * s + s.lift(ck);
        }
        acc
    };
    (horner(&g_coef), horner(&h_coef))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_match_closed_forms() {
        for theta in [1e-3, 0.3, 1.0, 2.5] {
            let (g, h) = series(theta * theta);
            let half = (0.5 * theta).sin();
            assert!((g - 2.0 * half * half / (theta * theta)).abs() < 1e-14);
            assert!((h - f64::sin(theta) / theta).abs() < 1e-14);
        }
        assert_eq!(series(0.0), (0.5, 1.0));
    }

    #[test]
    fn tip_of_straight_and_bent_segment() {
        let p = PccParams::spatial();
        let straight = p.tip(&[0.0, 0.0, 0.01]);
        assert_eq!(&straight[..2], &[0.0, 0.0]);
        assert!((straight[2] + 0.21).abs() < 1e-15);
        // quarter circle bending in +x
        let d = p.diameter;
        let theta = std::f64::consts::FRAC_PI_2;
        let tip = p.tip(&[theta * d, 0.0, 0.0]);
        let radius = p.length / theta;
        assert!((tip[0] - radius).abs() < 1e-12);
        assert!(tip[1].abs() < 1e-15);
        assert!((tip[2] + radius).abs() < 1e-12);
    }

    #[test]
    fn planar_embeds_in_spatial() {
        let planar = PccParams::planar();
        let spatial = PccParams::spatial();
        let a = planar.tip(&[0.01, 0.02]);
        let b = spatial.tip(&[0.01, 0.0, 0.02]);
        assert_eq!(a, b);
    }

    #[test]
    fn tendon_jacobian_layout() {
        let p = PccParams::planar();
        let j = p.tendon_jacobian();
        assert_eq!(j.shape(), (2, 2));
        assert!((j[(0, 0)] + 0.4).abs() < 1e-15 && (j[(1, 0)] - 0.4).abs() < 1e-15);
        assert_eq!(j[(0, 1)], 1.0);
    }
}
