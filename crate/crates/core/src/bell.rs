//! Two-party Bell scenarios with binary settings and binary outcomes.
//!
//! A [`Behavior`] stores `p(a,b|x,y)`; a [`BellExpression`] is a linear
//! functional of the four correlators `C(x,y)`; [`QuantumModel`] is a
//! maximally entangled two-qubit source mixed with white noise, measured in
//! the real plane.

// Index loops over the small probability tensors read better than zips.
#![allow(clippy::needless_range_loop)]

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const NORMALIZATION_TOL: f64 = 1e-12;

/// Conditional outcome distribution `p[a][b][x][y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Behavior {
    p: [[[[f64; 2]; 2]; 2]; 2],
}

impl Behavior {
    pub fn new(p: [[[[f64; 2]; 2]; 2]; 2]) -> Result<Self> {
        for x in 0..2 {
            for y in 0..2 {
                let mut total = 0.0;
                for a in 0..2 {
                    for b in 0..2 {
                        let v = p[a][b][x][y];
                        if !(0.0..=1.0).contains(&v) {
                            return Err(Error::InvalidBehavior(format!(
                                "p({a},{b}|{x},{y}) = {v} outside [0,1]"
                            )));
                        }
                        total += v;
                    }
                }
                if (total - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::InvalidBehavior(format!(
                        "settings ({x},{y}) sum to {total}"
                    )));
                }
            }
        }
        Ok(Behavior { p })
    }

    pub fn uniform() -> Self {
        Behavior {
            p: [[[[0.25; 2]; 2]; 2]; 2],
        }
    }

    /// Local deterministic strategy with outputs `a_x = alice[x]`, `b_y = bob[y]`.
    pub fn deterministic(alice: [u8; 2], bob: [u8; 2]) -> Self {
        let mut p = [[[[0.0; 2]; 2]; 2]; 2];
        for x in 0..2 {
            for y in 0..2 {
                p[alice[x] as usize & 1][bob[y] as usize & 1][x][y] = 1.0;
            }
        }
        Behavior { p }
    }

    #[inline]
    pub fn prob(&self, a: usize, b: usize, x: usize, y: usize) -> f64 {
        self.p[a][b][x][y]
    }

    pub fn probabilities(&self) -> &[[[[f64; 2]; 2]; 2]; 2] {
        &self.p
    }

    pub fn correlator(&self, x: usize, y: usize) -> f64 {
        let p = &self.p;
        p[0][0][x][y] + p[1][1][x][y] - p[0][1][x][y] - p[1][0][x][y]
    }

    /// `p_A(a|x,y)`.
    pub fn alice_marginal(&self, a: usize, x: usize, y: usize) -> f64 {
        self.p[a][0][x][y] + self.p[a][1][x][y]
    }

    /// `p_B(b|x,y)`.
    pub fn bob_marginal(&self, b: usize, x: usize, y: usize) -> f64 {
        self.p[0][b][x][y] + self.p[1][b][x][y]
    }

    /// Largest violation of the no-signaling constraints.
    pub fn signaling_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for o in 0..2 {
            for x in 0..2 {
                worst = worst.max((self.alice_marginal(o, x, 0) - self.alice_marginal(o, x, 1)).abs());
            }
            for y in 0..2 {
                worst = worst.max((self.bob_marginal(o, 0, y) - self.bob_marginal(o, 1, y)).abs());
            }
        }
        worst
    }
}

/// Correlator-form Bell functional `Σ c[x][y] C(x,y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BellExpression {
    pub name: String,
    pub coefficients: [[f64; 2]; 2],
}

impl BellExpression {
    pub fn new(name: impl Into<String>, coefficients: [[f64; 2]; 2]) -> Result<Self> {
        if coefficients.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::param("coefficients", "all four must be finite"));
        }
        Ok(BellExpression {
            name: name.into(),
            coefficients,
        })
    }

    pub fn chsh() -> Self {
        BellExpression {
            name: "chsh".into(),
            coefficients: [[1.0, 1.0], [1.0, -1.0]],
        }
    }

    /// `C(0,0) + 2.0126 C(0,1) + 2.0126 C(1,0) - 1.9754 C(1,1)`, a member of a
    /// tilted family tuned for randomness certification.
    pub fn weighted() -> Self {
        BellExpression {
            name: "weighted".into(),
            coefficients: [[1.0, 2.0126], [2.0126, -1.9754]],
        }
    }

    /// Built-in expressions by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "chsh" => Some(Self::chsh()),
            "weighted" => Some(Self::weighted()),
            _ => None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let expr: BellExpression = serde_json::from_str(text)?;
        Self::new(expr.name, expr.coefficients)
    }

    /// A built-in name, or a path to a JSON document.
    pub fn resolve(reference: &str, base: Option<&Path>) -> Result<Self> {
        if let Some(expr) = Self::builtin(reference) {
            return Ok(expr);
        }
        let path = match base {
            Some(dir) => dir.join(reference),
            None => reference.into(),
        };
        if !path.exists() {
            return Err(Error::Unknown {
                kind: "Bell expression",
                name: reference.to_owned(),
            });
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }

    #[inline]
    pub fn coefficient(&self, x: usize, y: usize) -> f64 {
        self.coefficients[x][y]
    }

    pub fn value(&self, beh: &Behavior) -> f64 {
        let mut s = 0.0;
        for x in 0..2 {
            for y in 0..2 {
                s += self.coefficients[x][y] * beh.correlator(x, y);
            }
        }
        s
    }

    /// Maximum over the 16 deterministic local strategies.
    pub fn classical_bound(&self) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for strategy in 0u8..16 {
            let sign = |bit: u8| if strategy >> bit & 1 == 0 { 1.0 } else { -1.0 };
            let alice = [sign(0), sign(1)];
            let bob = [sign(2), sign(3)];
            let mut s = 0.0;
            for x in 0..2 {
                for y in 0..2 {
                    s += self.coefficients[x][y] * alice[x] * bob[y];
                }
            }
            best = best.max(s);
        }
        best
    }

    /// `Σ |c_xy|`, the largest value any behavior can reach.
    pub fn algebraic_bound(&self) -> f64 {
        self.coefficients.iter().flatten().map(|c| c.abs()).sum()
    }

    pub fn max_abs_coefficient(&self) -> f64 {
        self.coefficients
            .iter()
            .flatten()
            .fold(0.0, |m: f64, c| m.max(c.abs()))
    }
}

/// Half-wave-plate style measurement angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Angles {
    pub alice: [f64; 2],
    pub bob: [f64; 2],
}

impl Angles {
    /// Angles reaching `2√2` on CHSH.
    pub fn canonical() -> Self {
        Angles {
            alice: [0.0, FRAC_PI_4],
            bob: [FRAC_PI_8, -FRAC_PI_8],
        }
    }
}

impl Default for Angles {
    fn default() -> Self {
        Self::canonical()
    }
}

/// `v |φ+⟩⟨φ+| + (1 - v) I/4` measured along real-plane directions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantumModel {
    pub visibility: f64,
    pub angles: Angles,
}

impl QuantumModel {
    pub fn new(visibility: f64, angles: Angles) -> Result<Self> {
        if !(0.0..=1.0).contains(&visibility) {
            return Err(Error::param("visibility", format!("{visibility} not in [0,1]")));
        }
        if angles.alice.iter().chain(&angles.bob).any(|a| !a.is_finite()) {
            return Err(Error::param("angles", "must be finite"));
        }
        Ok(QuantumModel { visibility, angles })
    }

    pub fn canonical(visibility: f64) -> Result<Self> {
        Self::new(visibility, Angles::canonical())
    }

    pub fn correlator(&self, x: usize, y: usize) -> f64 {
        self.visibility * (2.0 * (self.angles.alice[x] - self.angles.bob[y])).cos()
    }

    pub fn behavior(&self) -> Behavior {
        let mut p = [[[[0.0; 2]; 2]; 2]; 2];
        for x in 0..2 {
            for y in 0..2 {
                let c = self.correlator(x, y);
                for a in 0..2 {
                    for b in 0..2 {
                        let sign = if a == b { 1.0 } else { -1.0 };
                        p[a][b][x][y] = (1.0 + sign * c) / 4.0;
                    }
                }
            }
        }
        Behavior { p }
    }
}

/// Visibility at which `expr` evaluates to `target` for the given angles.
pub fn visibility_for_target(expr: &BellExpression, angles: Angles, target: f64) -> Result<f64> {
    let full = QuantumModel { visibility: 1.0, angles };
    let max = expr.value(&full.behavior());
    if !target.is_finite() || target > max + 1e-12 || max <= 0.0 {
        return Err(Error::TargetUnreachable { target, max });
    }
    if target < 0.0 {
        return Err(Error::param("target", format!("{target} is negative")));
    }
    Ok((target / max).min(1.0))
}

/// Angles maximizing `expr` at unit visibility: coarse grid over the three
/// relative angles followed by a shrinking pattern search.
pub fn optimize_angles(expr: &BellExpression) -> (Angles, f64) {
    let value = |t: &[f64; 3]| {
        let model = QuantumModel {
            visibility: 1.0,
            angles: Angles {
                alice: [0.0, t[0]],
                bob: [t[1], t[2]],
            },
        };
        expr.value(&model.behavior())
    };

    const STEPS: usize = 16;
    let h = PI / STEPS as f64;
    let mut best = [0.0; 3];
    let mut best_val = f64::NEG_INFINITY;
    for i in 0..STEPS {
        for j in 0..STEPS {
            for k in 0..STEPS {
                let t = [i as f64 * h, j as f64 * h - PI / 2.0, k as f64 * h - PI / 2.0];
                let v = value(&t);
                if v > best_val {
                    best_val = v;
                    best = t;
                }
            }
        }
    }

    let mut step = h / 2.0;
    while step > 1e-12 {
        let mut improved = false;
        for dim in 0..3 {
            for dir in [1.0, -1.0] {
                let mut t = best;
                t[dim] += dir * step;
                let v = value(&t);
                if v > best_val {
                    best_val = v;
                    best = t;
                    improved = true;
                }
            }
        }
        if !improved {
            step /= 2.0;
        }
    }

    let angles = Angles {
        alice: [0.0, best[0]],
        bob: [best[1], best[2]],
    };
    (angles, best_val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::SQRT_2;

    fn perfectly_correlated() -> Behavior {
        let mut p = [[[[0.0; 2]; 2]; 2]; 2];
        for x in 0..2 {
            for y in 0..2 {
                p[0][0][x][y] = 0.5;
                p[1][1][x][y] = 0.5;
            }
        }
        Behavior::new(p).unwrap()
    }

    #[test]
    fn correlator_examples() {
        assert_eq!(perfectly_correlated().correlator(0, 1), 1.0);
        assert_eq!(Behavior::uniform().correlator(1, 1), 0.0);
        let model = QuantumModel::new(
            1.0,
            Angles {
                alice: [0.0, 0.0],
                bob: [FRAC_PI_8, 0.0],
            },
        )
        .unwrap();
        assert_abs_diff_eq!(model.behavior().correlator(0, 0), FRAC_PI_4.cos(), epsilon = 1e-9);
    }

    #[test]
    fn chsh_values() {
        let chsh = BellExpression::chsh();
        let tsirelson = chsh.value(&QuantumModel::canonical(1.0).unwrap().behavior());
        assert_abs_diff_eq!(tsirelson, 2.0 * SQRT_2, epsilon = 1e-9);
        assert_eq!(chsh.value(&Behavior::uniform()), 0.0);
        let half = chsh.value(&QuantumModel::canonical(0.5).unwrap().behavior());
        assert_abs_diff_eq!(half, SQRT_2, epsilon = 1e-9);
        let v = 2.65022 / (2.0 * SQRT_2);
        let s = chsh.value(&QuantumModel::canonical(v).unwrap().behavior());
        assert_abs_diff_eq!(s, 2.65022, epsilon = 1e-5);
    }

    #[test]
    fn classical_bounds() {
        assert_eq!(BellExpression::chsh().classical_bound(), 2.0);
        assert_abs_diff_eq!(BellExpression::weighted().classical_bound(), 5.0006, epsilon = 1e-12);
        let single = BellExpression::new("c00", [[1.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(single.classical_bound(), 1.0);
    }

    #[test]
    fn white_noise_is_uniform() {
        assert_eq!(QuantumModel::canonical(0.0).unwrap().behavior(), Behavior::uniform());
    }

    #[test]
    fn visibility_targets() {
        let chsh = BellExpression::chsh();
        let v = visibility_for_target(&chsh, Angles::canonical(), 2.0 * SQRT_2).unwrap();
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        let v = visibility_for_target(&chsh, Angles::canonical(), 2.74428).unwrap();
        assert_abs_diff_eq!(v, 0.97033, epsilon = 1e-4);
        let model = QuantumModel::canonical(v).unwrap();
        assert_abs_diff_eq!(chsh.value(&model.behavior()), 2.74428, epsilon = 1e-9);
        assert!(matches!(
            visibility_for_target(&chsh, Angles::canonical(), 3.0),
            Err(Error::TargetUnreachable { .. })
        ));
    }

    #[test]
    fn rejects_unnormalized_behavior() {
        let mut p = *Behavior::uniform().probabilities();
        p[0][0][1][0] = 0.3;
        assert!(Behavior::new(p).is_err());
        p[0][0][1][0] = -0.1;
        assert!(Behavior::new(p).is_err());
    }

    #[test]
    fn expression_json() {
        let expr = BellExpression::from_json(
            r#"{"name": "chsh", "coefficients": [[1, 1], [1, -1]]}"#,
        )
        .unwrap();
        assert_eq!(expr, BellExpression::chsh());
        assert!(BellExpression::from_json(r#"{"name": "x", "coefficients": [[1, 1]]}"#).is_err());
    }

    #[test]
    fn angle_optimizer_finds_tsirelson() {
        let (_, best) = optimize_angles(&BellExpression::chsh());
        assert_abs_diff_eq!(best, 2.0 * SQRT_2, epsilon = 1e-9);
        let (angles, weighted) = optimize_angles(&BellExpression::weighted());
        let canonical = BellExpression::weighted()
            .value(&QuantumModel::canonical(1.0).unwrap().behavior());
        assert!(weighted > canonical);
        assert!(weighted > BellExpression::weighted().classical_bound());
        let check = BellExpression::weighted().value(&QuantumModel::new(1.0, angles).unwrap().behavior());
        assert_abs_diff_eq!(check, weighted, epsilon = 1e-12);
    }
}
