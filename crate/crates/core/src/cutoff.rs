//! Radial truncation data in closed form: a C² bump ρ supported in (1,3),
//! its cumulative integral Φ and first moment M₁, the induced taper
//! ψ(s) = s − sΦ(s) + M₁(s) (so ψ(s) = s for s ≤ 1 and ψ ≡ 2 for s ≥ 3),
//! the rescaled weight ψ_R(x) = R·ψ(|x|²/R) with derivatives through Δ²,
//! and the displacement vector a(x,y) with its sampled inequality survey.
//!
//! Everything is piecewise polynomial; no quadrature in any hot path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CutoffError {
    #[error("scale must be ≥ 1 for the displacement survey, got {0}")]
    ScaleBelowOne(f64),
    #[error("dimension {0} unsupported, expected 1, 2 or 3")]
    BadDimension(usize),
    #[error("degenerate sample pair with |x-y| = {0:.3e} below 1e-10")]
    DegenerateSample(f64),
}

/// Value, gradient, Laplacian and bilaplacian of the weight ψ_R at a point.
#[derive(Debug, Clone, Copy)]
pub struct WeightDerivs {
    pub value: f64,
    /// Zero-padded to three components.
    pub gradient: [f64; 3],
    pub laplacian: f64,
    pub bilaplacian: f64,
}

/// Result of the sampled displacement inequality survey: the empirical
/// constant max |a(x,y)| / (bracket·|x−y|) over admissible pairs, and the
/// count of pairs where the bracket vanishes but a(x,y) does not.
#[derive(Debug, Clone, Copy)]
pub struct DisplacementSurvey {
    pub max_ratio: f64,
    pub violations: usize,
    pub samples: usize,
}

enum Piece {
    Below,
    Inside(f64),
    Above,
}

fn piece(s: f64) -> Piece {
    if s <= 1.0 {
        Piece::Below
    } else if s >= 3.0 {
        Piece::Above
    } else {
        Piece::Inside(s - 2.0)
    }
}

/// The concrete profile ρ(s) = (35/32)(s−1)³(3−s)³ on (1,3) and everything
/// derived from it. Stateless apart from two cached polynomial suprema.
#[derive(Debug, Clone, Copy)]
pub struct CutoffProfile {
    norm: f64,
    sup_s_bump: f64,
}

impl Default for CutoffProfile {
    fn default() -> Self {
        Self::new()
    }
}

impl CutoffProfile {
    pub fn new() -> Self {
        let mut profile = CutoffProfile {
            norm: 35.0 / 32.0,
            sup_s_bump: 0.0,
        };
        // sup of s·ρ(s) over [1,3]; dense sampling is exact enough for a
        // Lipschitz bound that is only used with a 2x safety factor baked in.
        let mut sup = 0.0f64;
        for i in 0..=200_000 {
            let s = 1.0 + 2.0 * i as f64 / 200_000.0;
            sup = sup.max(s * profile.bump_raw(s));
        }
        profile.sup_s_bump = sup;
        profile
    }

    fn bump_raw(&self, s: f64) -> f64 {
        match piece(s) {
            Piece::Inside(t) => {
                let u = 1.0 - t * t;
                self.norm * u * u * u
            }
            _ => 0.0,
        }
    }

    /// ρ(s): nonnegative, supported in (1,3), ∫ρ = 1, symmetric about 2.
    pub fn bump(&self, s: f64) -> f64 {
        self.bump_raw(s)
    }

    pub fn bump_d1(&self, s: f64) -> f64 {
        match piece(s) {
            Piece::Inside(t) => {
                let u = 1.0 - t * t;
                self.norm * 3.0 * u * u * (-2.0 * t)
            }
            _ => 0.0,
        }
    }

    pub fn bump_d2(&self, s: f64) -> f64 {
        match piece(s) {
            Piece::Inside(t) => {
                let t2 = t * t;
                self.norm * (-6.0 + 36.0 * t2 - 30.0 * t2 * t2)
            }
            _ => 0.0,
        }
    }

    /// Φ(s) = ∫₀ˢ ρ.
    pub fn cumulative(&self, s: f64) -> f64 {
        match piece(s) {
            Piece::Below => 0.0,
            Piece::Above => 1.0,
            Piece::Inside(t) => {
                let t2 = t * t;
                let p = t * (1.0 - t2 + 0.6 * t2 * t2 - t2 * t2 * t2 / 7.0);
                self.norm * (p + 16.0 / 35.0)
            }
        }
    }

    /// M₁(s) = ∫₀ˢ u·ρ(u) du.
    pub fn first_moment(&self, s: f64) -> f64 {
        match piece(s) {
            Piece::Below => 0.0,
            Piece::Above => 2.0,
            Piece::Inside(t) => {
                let t2 = t * t;
                let q = 0.5 * t2 - 0.75 * t2 * t2 + 0.5 * t2 * t2 * t2
                    - 0.125 * t2 * t2 * t2 * t2;
                self.norm * (q - 0.125) + 2.0 * self.cumulative(t + 2.0)
            }
        }
    }

    /// ψ(s) = s − sΦ(s) + M₁(s): identity below 1, constant 2 above 3.
    pub fn taper(&self, s: f64) -> f64 {
        match piece(s) {
            Piece::Below => s,
            Piece::Above => 2.0,
            Piece::Inside(_) => s - s * self.cumulative(s) + self.first_moment(s),
        }
    }

    /// ψ′ = 1 − Φ ∈ [0,1].
    pub fn taper_d1(&self, s: f64) -> f64 {
        1.0 - self.cumulative(s)
    }

    /// ψ″ = −ρ.
    pub fn taper_d2(&self, s: f64) -> f64 {
        -self.bump(s)
    }

    pub fn taper_d3(&self, s: f64) -> f64 {
        -self.bump_d1(s)
    }

    pub fn taper_d4(&self, s: f64) -> f64 {
        -self.bump_d2(s)
    }

    /// F_R(r) = Φ(r²/R): 0 for r² ≤ R, 1 for r² ≥ 3R, nondecreasing.
    pub fn radial_switch(&self, r: f64, r_scale: f64) -> f64 {
        debug_assert!(r_scale > 0.0);
        self.cumulative(r * r / r_scale)
    }

    /// Φ(s) + s·ρ(s): the per-point bracket of the displacement inequality,
    /// also the squared radial weight of the Strauss-type bound.
    pub fn pair_screen(&self, s: f64) -> f64 {
        self.cumulative(s) + s * self.bump(s)
    }

    /// Φ(s) + 2s·ρ(s) = 1 − ψ′(s) − 2sψ″(s): screens |∇φ|² in the
    /// localized bound; nonnegative for all s ≥ 0.
    pub fn grad_screen(&self, s: f64) -> f64 {
        self.cumulative(s) + 2.0 * s * self.bump(s)
    }

    /// ψ_R(x) = R·ψ(|x|²/R) with gradient, Laplacian and bilaplacian.
    /// Dimension is taken from the slice length. Pre: r_scale > 0.
    pub fn taper_weight(&self, x: &[f64], r_scale: f64) -> WeightDerivs {
        debug_assert!(r_scale > 0.0 && !x.is_empty() && x.len() <= 3);
        let d = x.len() as f64;
        let r2: f64 = x.iter().map(|c| c * c).sum();
        let s = r2 / r_scale;
        let p1 = self.taper_d1(s);
        let p2 = self.taper_d2(s);
        let p3 = self.taper_d3(s);
        let p4 = self.taper_d4(s);
        let mut gradient = [0.0; 3];
        for (g, &c) in gradient.iter_mut().zip(x.iter()) {
            *g = 2.0 * c * p1;
        }
        WeightDerivs {
            value: r_scale * self.taper(s),
            gradient,
            laplacian: 2.0 * d * p1 + 4.0 * s * p2,
            bilaplacian: (16.0 * s * s * p4 + 16.0 * (d + 2.0) * s * p3
                + 4.0 * d * (d + 2.0) * p2)
                / r_scale,
        }
    }

    /// a(x,y) = (x−y) − (ψ′(|x|²/R)x − ψ′(|y|²/R)y) = F_R(|x|)x − F_R(|y|)y.
    pub fn displacement(&self, x: &[f64], y: &[f64], r_scale: f64) -> [f64; 3] {
        debug_assert!(x.len() == y.len() && r_scale > 0.0);
        let sx = x.iter().map(|c| c * c).sum::<f64>() / r_scale;
        let sy = y.iter().map(|c| c * c).sum::<f64>() / r_scale;
        let fx = self.cumulative(sx);
        let fy = self.cumulative(sy);
        let mut out = [0.0; 3];
        for (axis, slot) in out.iter_mut().enumerate().take(x.len()) {
            *slot = fx * x[axis] - fy * y[axis];
        }
        out
    }

    /// Global Lipschitz bound: |a(x,y)| ≤ (1 + 2·sup s·ρ(s))·|x−y| for all
    /// pairs, any R. Follows from |∇(F(|x|)x)| ≤ F + 2sρ ≤ 1 + 2 sup sρ.
    pub fn lipschitz_bound(&self) -> f64 {
        1.0 + 2.0 * self.sup_s_bump
    }

    /// sup_x |Δ²ψ_R|; the shape factor is R-independent, so this scales
    /// exactly as 1/R.
    pub fn sup_bilaplacian(&self, dim: usize, r_scale: f64) -> f64 {
        debug_assert!((1..=3).contains(&dim) && r_scale > 0.0);
        let d = dim as f64;
        let mut sup = 0.0f64;
        for i in 0..=200_000 {
            let s = 1.0 + 2.0 * i as f64 / 200_000.0;
            let shape = 16.0 * s * s * self.taper_d4(s)
                + 16.0 * (d + 2.0) * s * self.taper_d3(s)
                + 4.0 * d * (d + 2.0) * self.taper_d2(s);
            sup = sup.max(shape.abs());
        }
        sup / r_scale
    }

    /// Sampled verification of |a(x,y)| ≤ C·(bracket)·|x−y| on the region
    /// max(|x|,|y|) ≥ √R, 0 < |x−y| ≤ √R, with
    /// bracket = pair_screen(|x|²/R) + pair_screen(|y|²/R).
    /// Returns the empirical C and the count of bracket-zero pairs with
    /// |a| > 1e−12 (the lemma says there are none).
    pub fn displacement_survey(
        &self,
        dim: usize,
        r_scale: f64,
        samples: usize,
        seed: u64,
    ) -> Result<DisplacementSurvey, CutoffError> {
        if !(1..=3).contains(&dim) {
            return Err(CutoffError::BadDimension(dim));
        }
        if !(r_scale.is_finite() && r_scale >= 1.0) {
            return Err(CutoffError::ScaleBelowOne(r_scale));
        }
        let sqrt_r = r_scale.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut max_ratio = 0.0f64;
        let mut violations = 0usize;
        let mut accepted = 0usize;
        while accepted < samples {
            let dir_x = random_direction(&mut rng, dim);
            let radius = 2.5 * sqrt_r * rng.gen::<f64>();
            let mut x = [0.0f64; 3];
            for axis in 0..dim {
                x[axis] = radius * dir_x[axis];
            }
            let dir_o = random_direction(&mut rng, dim);
            let sep = sqrt_r * rng.gen::<f64>();
            if sep < 1e-10 {
                return Err(CutoffError::DegenerateSample(sep));
            }
            let mut y = [0.0f64; 3];
            for axis in 0..dim {
                y[axis] = x[axis] + sep * dir_o[axis];
            }
            let rx = norm(&x[..dim]);
            let ry = norm(&y[..dim]);
            if rx.max(ry) < sqrt_r {
                continue;
            }
            accepted += 1;
            let a = self.displacement(&x[..dim], &y[..dim], r_scale);
            let a_norm = norm(&a);
            let bracket = self.pair_screen(rx * rx / r_scale)
                + self.pair_screen(ry * ry / r_scale);
            if bracket == 0.0 {
                if a_norm > 1e-12 {
                    violations += 1;
                }
            } else {
                max_ratio = max_ratio.max(a_norm / (bracket * sep));
            }
        }
        Ok(DisplacementSurvey {
            max_ratio,
            violations,
            samples,
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Uniform direction on the (dim−1)-sphere via Box-Muller normals.
fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> [f64; 3] {
    loop {
        let mut v = [0.0f64; 3];
        let mut i = 0;
        while i < dim {
            let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
            let u2: f64 = rng.gen();
            let mag = (-2.0 * u1.ln()).sqrt();
            v[i] = mag * (2.0 * std::f64::consts::PI * u2).cos();
            if i + 1 < dim {
                v[i + 1] = mag * (2.0 * std::f64::consts::PI * u2).sin();
            }
            i += 2;
        }
        let n = norm(&v[..dim]);
        if n > 1e-12 {
            for c in v.iter_mut() {
                *c /= n;
            }
            return v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn taper_identity_below_and_constant_above() {
        let p = CutoffProfile::new();
        for i in 0..=100 {
            let s = i as f64 / 100.0;
            assert_eq!(p.taper(s), s);
        }
        for s in [3.0, 3.5, 10.0, 1e6] {
            assert_eq!(p.taper(s), 2.0);
            assert_eq!(p.taper_d1(s), 0.0);
        }
        // continuity at the breakpoints
        assert_abs_diff_eq!(p.taper(1.0 + 1e-12), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(p.taper(3.0 - 1e-12), 2.0, epsilon = 1e-10);
    }

    #[test]
    fn bump_symmetry_and_sign_structure() {
        let p = CutoffProfile::new();
        for i in 0..=1000 {
            let s = 1.0 + 2.0 * i as f64 / 1000.0;
            assert_abs_diff_eq!(p.bump(s), p.bump(4.0 - s), epsilon = 1e-14);
            assert!(p.bump(s) >= 0.0);
        }
        // rho' >= 0 on (1, 3/2); rho > 0 on (5/4, 11/4)
        for i in 1..500 {
            let s = 1.0 + 0.5 * i as f64 / 500.0;
            assert!(p.bump_d1(s) >= 0.0, "rho' < 0 at s = {s}");
        }
        for i in 1..1000 {
            let s = 1.25 + 1.5 * i as f64 / 1000.0;
            assert!(p.bump(s) > 0.0, "rho = 0 at s = {s}");
        }
    }

    #[test]
    fn bump_is_c2_at_endpoints() {
        let p = CutoffProfile::new();
        for s in [1.0, 3.0] {
            assert_abs_diff_eq!(p.bump(s), 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(p.bump_d1(s), 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!(p.bump_d2(s), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn second_taper_derivative_is_minus_bump() {
        let p = CutoffProfile::new();
        for i in 0..=10_000 {
            let s = 4.0 * i as f64 / 10_000.0;
            assert!((p.taper_d2(s) + p.bump(s)).abs() <= 1e-14);
        }
    }

    #[test]
    fn switch_midpoint_is_half() {
        let p = CutoffProfile::new();
        let r_scale: f64 = 7.3;
        assert_abs_diff_eq!(
            p.radial_switch((2.0 * r_scale).sqrt(), r_scale),
            0.5,
            epsilon = 1e-15
        );
        assert_eq!(p.radial_switch(r_scale.sqrt(), r_scale), 0.0);
        assert_eq!(p.radial_switch((3.0 * r_scale).sqrt(), r_scale), 1.0);
    }

    #[test]
    fn weight_flat_inside_and_saturated_outside() {
        let p = CutoffProfile::new();
        let r_scale = 4.0;
        let x = [0.5, -0.7, 0.3];
        let w = p.taper_weight(&x, r_scale);
        let r2: f64 = x.iter().map(|c| c * c).sum();
        assert_abs_diff_eq!(w.value, r2, epsilon = 1e-15);
        for axis in 0..3 {
            assert_abs_diff_eq!(w.gradient[axis], 2.0 * x[axis], epsilon = 1e-15);
        }
        assert_abs_diff_eq!(w.laplacian, 6.0, epsilon = 1e-15);
        assert_eq!(w.bilaplacian, 0.0);

        let far = [4.0, 0.0, 1.0];
        let wf = p.taper_weight(&far, r_scale);
        assert_eq!(wf.value, 2.0 * r_scale);
        assert_eq!(wf.gradient, [0.0; 3]);
        assert_eq!(wf.laplacian, 0.0);
        assert_eq!(wf.bilaplacian, 0.0);
    }

    #[test]
    fn displacement_vanishing_regimes() {
        let p = CutoffProfile::new();
        let r = 2.0;
        assert_eq!(p.displacement(&[0.5, 0.5], &[-0.3, 0.2], r), [0.0; 3]);
        let x = [1.1, 0.4, -0.2];
        assert_eq!(p.displacement(&x, &x, r), [0.0; 3]);
        // both far outside: a = x - y
        let x = [4.0, 0.0, 0.0];
        let y = [0.0, 4.0, 0.0];
        let a = p.displacement(&x, &y, r);
        assert_abs_diff_eq!(a[0], 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[1], -4.0, epsilon = 1e-15);
    }

    #[test]
    fn survey_runs_clean_and_scale_stable() {
        let p = CutoffProfile::new();
        let mut ratios = Vec::new();
        for r_scale in [1.0, 10.0, 100.0] {
            let s = p.displacement_survey(3, r_scale, 4000, 7).unwrap();
            assert_eq!(s.violations, 0);
            assert!(s.max_ratio.is_finite() && s.max_ratio > 0.0);
            ratios.push(s.max_ratio);
        }
        let lo = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().cloned().fold(0.0f64, f64::max);
        assert!(
            hi / lo < 1.2,
            "survey constant unstable across scales: {ratios:?}"
        );
    }

    #[test]
    fn survey_rejects_bad_scale() {
        let p = CutoffProfile::new();
        assert!(matches!(
            p.displacement_survey(3, 0.5, 10, 1),
            Err(CutoffError::ScaleBelowOne(_))
        ));
        assert!(matches!(
            p.displacement_survey(5, 1.0, 10, 1),
            Err(CutoffError::BadDimension(5))
        ));
    }

    #[test]
    fn survey_is_deterministic() {
        let p = CutoffProfile::new();
        let a = p.displacement_survey(3, 1.0, 2000, 42).unwrap();
        let b = p.displacement_survey(3, 1.0, 2000, 42).unwrap();
        assert_eq!(a.max_ratio, b.max_ratio);
        assert_eq!(a.violations, b.violations);
    }

    proptest! {
        #[test]
        fn taper_slope_in_unit_interval(s in 0.0f64..20.0) {
            let p = CutoffProfile::new();
            let d1 = p.taper_d1(s);
            prop_assert!((0.0..=1.0).contains(&d1));
        }

        #[test]
        fn grad_screen_nonnegative_and_matches_identity(s in 0.0f64..20.0) {
            let p = CutoffProfile::new();
            let direct = 1.0 - p.taper_d1(s) - 2.0 * s * p.taper_d2(s);
            let named = p.grad_screen(s);
            prop_assert!(named >= 0.0);
            prop_assert!((direct - named).abs() <= 1e-13);
        }

        #[test]
        fn switch_monotone_in_radius(r in 0.0f64..10.0, dr in 0.0f64..5.0, r_scale in 0.5f64..50.0) {
            let p = CutoffProfile::new();
            let lo = p.radial_switch(r, r_scale);
            let hi = p.radial_switch(r + dr, r_scale);
            prop_assert!((0.0..=1.0).contains(&lo));
            prop_assert!(hi >= lo - 1e-15);
        }

        #[test]
        fn displacement_ratio_scale_invariant(
            seed_x in proptest::array::uniform3(-3.0f64..3.0),
            seed_y in proptest::array::uniform3(-3.0f64..3.0),
            lambda in 0.5f64..4.0,
        ) {
            let p = CutoffProfile::new();
            let r_scale = 2.0;
            let x = seed_x;
            let y = seed_y;
            let sep: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            prop_assume!(sep > 1e-6);
            let a0 = p.displacement(&x, &y, r_scale);
            let xs: Vec<f64> = x.iter().map(|c| c * lambda).collect();
            let ys: Vec<f64> = y.iter().map(|c| c * lambda).collect();
            let a1 = p.displacement(&xs, &ys, r_scale * lambda * lambda);
            for axis in 0..3 {
                prop_assert!((a1[axis] - lambda * a0[axis]).abs() <= 1e-9 * (1.0 + a0[axis].abs() * lambda));
            }
        }
    }
}
