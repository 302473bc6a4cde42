//! Certified-entropy curves and affine min-tradeoff functions.
//!
//! Curves are tabulated lower bounds `h(S)` on the entropy per round given a
//! Bell value `S`. They come from external semidefinite programs; here they
//! are only validated, interpolated and turned into tangent lines.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bell::BellExpression;
use crate::eat::binary_entropy;
use crate::error::{Error, Result};
use crate::tables::{self, TableRow};

const VERTEX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    MinEntropy,
    VonNeumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub s: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyCurve {
    pub expression: String,
    pub kind: CurveKind,
    points: Vec<CurvePoint>,
    #[serde(skip)]
    classical_bound: Option<f64>,
}

impl EntropyCurve {
    /// Validates the points. The classical bound is filled in automatically
    /// when `expression` names a built-in expression.
    pub fn new(expression: impl Into<String>, kind: CurveKind, points: Vec<CurvePoint>) -> Result<Self> {
        let expression = expression.into();
        if points.len() < 2 {
            return Err(Error::InvalidCurve(format!(
                "{} point(s), at least 2 required",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.s.is_finite() || !p.h.is_finite()) {
            return Err(Error::InvalidCurve("non-finite point".into()));
        }
        if let Some(p) = points.iter().find(|p| p.h < 0.0) {
            return Err(Error::InvalidCurve(format!("negative entropy {} at S = {}", p.h, p.s)));
        }
        for w in points.windows(2) {
            if w[1].s <= w[0].s {
                return Err(Error::InvalidCurve(format!(
                    "Bell values not strictly increasing at {} -> {}",
                    w[0].s, w[1].s
                )));
            }
            if w[1].h < w[0].h {
                return Err(Error::InvalidCurve(format!(
                    "entropy decreases from {} to {} between S = {} and S = {}",
                    w[0].h, w[1].h, w[0].s, w[1].s
                )));
            }
        }
        let classical_bound = BellExpression::builtin(&expression).map(|e| e.classical_bound());
        Ok(EntropyCurve {
            expression,
            kind,
            points,
            classical_bound,
        })
    }

    pub fn with_classical_bound(mut self, bound: f64) -> Self {
        self.classical_bound = Some(bound);
        self
    }

    pub fn classical_bound(&self) -> Option<f64> {
        self.classical_bound
    }

    pub fn points(&self) -> &[CurvePoint] {
        &self.points
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: EntropyCurve = serde_json::from_str(text)?;
        Self::new(raw.expression, raw.kind, raw.points)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("curve serializes")
    }

    /// Built-in curves: `table1`/`table2` (von Neumann, 8 Radau nodes) and
    /// `<chsh|weighted>/<min_entropy|von_neumann|von_neumann_radau6>`.
    pub fn builtin(name: &str) -> Option<Self> {
        let (table, column) = match name.split_once('/') {
            Some((t, c)) => (t, c),
            None => (name, "von_neumann"),
        };
        if !name.contains('/') && !name.starts_with("table") {
            return None;
        }
        let (expression, rows) = tables::rows(table)?;
        let pick: fn(&TableRow) -> f64 = match column {
            "min_entropy" => |r| r.h_min,
            "von_neumann" | "von_neumann_radau8" => |r| r.vne_radau8,
            "von_neumann_radau6" => |r| r.vne_radau6,
            _ => return None,
        };
        let kind = if column == "min_entropy" {
            CurveKind::MinEntropy
        } else {
            CurveKind::VonNeumann
        };
        let mut points: Vec<CurvePoint> = rows
            .iter()
            .map(|r| CurvePoint {
                s: r.bell_value,
                h: pick(r),
            })
            .collect();
        points.sort_by(|a, b| a.s.total_cmp(&b.s));
        Some(Self::new(expression, kind, points).expect("built-in tables are valid"))
    }

    /// A built-in name or a path to a curve document.
    pub fn resolve(reference: &str, base: Option<&Path>) -> Result<Self> {
        if let Some(curve) = Self::builtin(reference) {
            return Ok(curve);
        }
        let path = match base {
            Some(dir) => dir.join(reference),
            None => reference.into(),
        };
        if !path.exists() {
            return Err(Error::Unknown {
                kind: "entropy curve",
                name: reference.to_owned(),
            });
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }

    /// Interpolation nodes: points strictly above the classical bound, with
    /// `(bound, 0)` prepended. Without a known bound these are the points.
    pub fn nodes(&self) -> Vec<CurvePoint> {
        let Some(cb) = self.classical_bound else {
            return self.points.clone();
        };
        let mut nodes: Vec<CurvePoint> = Vec::with_capacity(self.points.len() + 1);
        nodes.push(CurvePoint { s: cb, h: 0.0 });
        nodes.extend(self.points.iter().filter(|p| p.s > cb));
        if nodes.len() == 1 {
            return self.points.clone();
        }
        nodes
    }

    /// `[lo, hi]` over which the curve is tabulated (including the
    /// classical-bound extension).
    pub fn range(&self) -> (f64, f64) {
        let nodes = self.nodes();
        (nodes[0].s, nodes[nodes.len() - 1].s)
    }

    /// Piecewise-linear bound at `s`: zero at or below the classical bound
    /// (or the first point if the bound is unknown), clamped to the last
    /// tabulated value above the table.
    pub fn eval(&self, s: f64) -> f64 {
        let nodes = self.nodes();
        let first = nodes[0];
        let last = nodes[nodes.len() - 1];
        if s.is_nan() {
            return 0.0;
        }
        if s < first.s || self.classical_bound.is_some_and(|cb| s <= cb) {
            return 0.0;
        }
        if s >= last.s {
            return last.h;
        }
        let k = nodes.partition_point(|p| p.s <= s);
        let (a, b) = (nodes[k - 1], nodes[k]);
        a.h + (b.h - a.h) * (s - a.s) / (b.s - a.s)
    }

    /// Lower convex envelope of the interpolation nodes.
    pub fn lower_envelope(&self) -> Vec<CurvePoint> {
        let mut hull: Vec<CurvePoint> = Vec::new();
        for p in self.nodes() {
            while hull.len() >= 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                // drop b when it lies on or above the chord a -> p
                let cross = (b.s - a.s) * (p.h - a.h) - (b.h - a.h) * (p.s - a.s);
                if cross <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull
    }

    /// Largest gap between a node and the convex envelope below it.
    pub fn convexity_defect(&self) -> f64 {
        let env = self.lower_envelope();
        self.nodes()
            .iter()
            .map(|p| p.h - envelope_at(&env, p.s))
            .fold(0.0, f64::max)
    }
}

fn envelope_at(env: &[CurvePoint], s: f64) -> f64 {
    let k = env.partition_point(|p| p.s <= s).clamp(1, env.len() - 1);
    let (a, b) = (env[k - 1], env[k]);
    a.h + (b.h - a.h) * (s - a.s) / (b.s - a.s)
}

/// Affine lower bound `g(S) = intercept + slope·S` on the entropy per round,
/// with the crossover statistics of its spot-checking extension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinTradeoff {
    pub slope: f64,
    pub intercept: f64,
    pub anchor: f64,
    pub gamma: f64,
    pub max_g: f64,
    pub min_g: f64,
    pub max_f: f64,
    pub min_f: f64,
    pub min_sigma_f: f64,
    pub var_f: f64,
}

impl MinTradeoff {
    /// Builds the crossover statistics of `g(S) = intercept + slope·S` over
    /// the algebraic range of `expr`, for test probability `gamma`.
    pub fn from_line(slope: f64, intercept: f64, anchor: f64, expr: &BellExpression, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::param("gamma", format!("{gamma} not in (0,1]")));
        }
        if slope < 0.0 || !slope.is_finite() || !intercept.is_finite() {
            return Err(Error::param("slope", format!("{slope} must be finite and non-negative")));
        }
        let a = expr.algebraic_bound();
        let max_g = intercept + slope * a;
        let min_g = intercept - slope * a;
        let spread = max_g - min_g;
        Ok(MinTradeoff {
            slope,
            intercept,
            anchor,
            gamma,
            max_g,
            min_g,
            max_f: max_g,
            min_f: (1.0 - 1.0 / gamma) * max_g + min_g / gamma,
            min_sigma_f: min_g,
            var_f: spread * spread / gamma,
        })
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        self.intercept + self.slope * s
    }
}

/// Supporting line of the curve's convex envelope at `anchor`. At an
/// envelope vertex the slope of the segment to its left is used.
pub fn tangent_tradeoff(curve: &EntropyCurve, anchor: f64, expr: &BellExpression, gamma: f64) -> Result<MinTradeoff> {
    let env = curve.lower_envelope();
    let (lo, hi) = (env[0].s, env[env.len() - 1].s);
    if !(anchor >= lo - VERTEX_TOL && anchor <= hi + VERTEX_TOL) {
        return Err(Error::AnchorOutOfRange { anchor, lo, hi });
    }
    // segment k spans env[k-1]..env[k]; vertices resolve to the left segment
    let k = env
        .iter()
        .position(|p| anchor <= p.s + VERTEX_TOL)
        .unwrap_or(env.len() - 1)
        .max(1);
    let (a, b) = (env[k - 1], env[k]);
    let slope = ((b.h - a.h) / (b.s - a.s)).max(0.0);
    let intercept = a.h - slope * a.s;
    MinTradeoff::from_line(slope, intercept, anchor, expr, gamma)
}

/// Envelope vertices usable as tangent anchors.
pub fn anchor_candidates(curve: &EntropyCurve) -> Vec<f64> {
    curve.lower_envelope().iter().skip(1).map(|p| p.s).collect()
}

fn check_chsh_range(s: f64) -> Result<Option<f64>> {
    let tsirelson = 2.0 * std::f64::consts::SQRT_2;
    if !s.is_finite() || s > tsirelson + 1e-12 {
        return Err(Error::param("bell_value", format!("{s} exceeds 2√2")));
    }
    if s <= 2.0 {
        return Ok(None);
    }
    Ok(Some(s.min(tsirelson)))
}

/// Closed-form one-party CHSH min-entropy bound `1 - log2(1 + √(2 - S²/4))`.
pub fn analytic_chsh_min_entropy(s: f64) -> Result<f64> {
    Ok(match check_chsh_range(s)? {
        None => 0.0,
        Some(s) => 1.0 - (1.0 + (2.0 - s * s / 4.0).max(0.0).sqrt()).log2(),
    })
}

/// Closed-form one-party CHSH von Neumann bound `1 - h(1/2 + √(S²/4 - 1)/2)`.
pub fn analytic_chsh_von_neumann(s: f64) -> Result<f64> {
    Ok(match check_chsh_range(s)? {
        None => 0.0,
        Some(s) => 1.0 - binary_entropy(0.5 + (s * s / 4.0 - 1.0).max(0.0).sqrt() / 2.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn table2() -> EntropyCurve {
        EntropyCurve::builtin("table2").unwrap()
    }

    #[test]
    fn builtin_curves() {
        let chsh = EntropyCurve::resolve("chsh/von_neumann", None).unwrap();
        assert_eq!(chsh.points().len(), 7);
        assert_eq!(chsh, table2());
        assert_abs_diff_eq!(chsh.eval(2.65022), 0.8964, epsilon = 1e-12);

        let weighted = EntropyCurve::builtin("weighted/von_neumann").unwrap();
        assert_eq!(weighted.points().len(), 6);
        assert_eq!(weighted.eval(4.95151), 0.0);
        assert!(weighted.eval(5.00247) > 0.0);
        assert_eq!(EntropyCurve::builtin("table1").unwrap(), weighted);
        assert!(EntropyCurve::builtin("chsh").is_none());
        assert!(EntropyCurve::builtin("table2/bogus").is_none());
    }

    #[test]
    fn rejects_bad_curves() {
        let pts = |v: &[(f64, f64)]| v.iter().map(|&(s, h)| CurvePoint { s, h }).collect::<Vec<_>>();
        let err = EntropyCurve::new("x", CurveKind::VonNeumann, pts(&[(2.1, 0.5), (2.2, 0.4)]));
        assert!(matches!(err, Err(Error::InvalidCurve(_))));
        assert!(EntropyCurve::new("x", CurveKind::VonNeumann, pts(&[(2.1, 0.5)])).is_err());
        assert!(EntropyCurve::new("x", CurveKind::VonNeumann, pts(&[(2.2, 0.1), (2.1, 0.5)])).is_err());
        assert!(EntropyCurve::new("x", CurveKind::VonNeumann, pts(&[(2.1, -0.1), (2.2, 0.5)])).is_err());
        assert!(EntropyCurve::from_json(r#"{"expression": "chsh", "kind": "renyi", "points": []}"#).is_err());
        assert!(matches!(
            EntropyCurve::resolve("/nonexistent/curve.json", None),
            Err(Error::Unknown { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let curve = table2();
        let back = EntropyCurve::from_json(&curve.to_json()).unwrap();
        assert_eq!(back, curve);
        let doc = r#"{"expression": "chsh", "kind": "min_entropy",
                      "points": [{"s": 2.5, "h": 0.1}, {"s": 2.8, "h": 0.9}]}"#;
        let c = EntropyCurve::from_json(doc).unwrap();
        assert_eq!(c.kind, CurveKind::MinEntropy);
        assert_eq!(c.classical_bound(), Some(2.0));
    }

    #[test]
    fn evaluation() {
        let c = table2();
        assert_eq!(c.eval(2.0), 0.0);
        assert_eq!(c.eval(1.5), 0.0);
        let mid = (2.71497 + 2.73685) / 2.0;
        assert_abs_diff_eq!(c.eval(mid), (1.0566 + 1.1177) / 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(c.eval(2.9), 1.1917, epsilon = 1e-12);
        // linear extension to the classical bound below the first row
        let s = 2.0 + 0.5 * (2.65022 - 2.0);
        assert_abs_diff_eq!(c.eval(s), 0.8964 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn envelope_of_fixtures() {
        let chsh = table2();
        assert_eq!(chsh.lower_envelope(), chsh.nodes());
        assert!(chsh.convexity_defect() < 1e-6);
        let weighted = EntropyCurve::builtin("table1").unwrap();
        // the printed values for the weighted expression are convex up to rounding
        assert!(weighted.convexity_defect() < 2e-4);
    }

    #[test]
    fn tangent_lines() {
        let c = table2();
        let chsh = BellExpression::chsh();
        let t = tangent_tradeoff(&c, 2.70257, &chsh, 0.1).unwrap();
        for p in c.points() {
            assert!(t.eval(p.s) <= p.h + 1e-12, "{p:?}");
        }
        assert_abs_diff_eq!(t.eval(2.70257), 1.0239, epsilon = 1e-12);
        // left-segment slope at a vertex
        assert_abs_diff_eq!(t.slope, (1.0239 - 0.9574) / (2.70257 - 2.67602), epsilon = 1e-9);

        let last = tangent_tradeoff(&c, 2.76091, &chsh, 1.0).unwrap();
        assert_eq!(last.min_f, last.min_g);
        assert_eq!(last.max_f, last.max_g);

        assert!(matches!(
            tangent_tradeoff(&c, 2.9, &chsh, 0.5),
            Err(Error::AnchorOutOfRange { .. })
        ));
        assert!(tangent_tradeoff(&c, 2.7, &chsh, 0.0).is_err());
    }

    #[test]
    fn spot_check_statistics() {
        let c = table2();
        let t = tangent_tradeoff(&c, 2.65022, &BellExpression::chsh(), 0.01).unwrap();
        let spread = t.max_g - t.min_g;
        assert!(t.var_f <= spread * spread * 100.0 * (1.0 + 1e-12));
        assert!(t.min_f <= t.min_sigma_f && t.min_sigma_f <= t.max_f);
        assert_abs_diff_eq!(t.max_g - t.min_g, 8.0 * t.slope, epsilon = 1e-12);
    }

    #[test]
    fn analytic_bounds() {
        let t = 2.0 * std::f64::consts::SQRT_2;
        assert_abs_diff_eq!(analytic_chsh_min_entropy(t).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(analytic_chsh_von_neumann(t).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(analytic_chsh_min_entropy(2.0).unwrap(), 0.0);
        assert_eq!(analytic_chsh_von_neumann(1.7).unwrap(), 0.0);
        assert_abs_diff_eq!(analytic_chsh_min_entropy(2.74428).unwrap(), 0.5751, epsilon = 1e-4);
        assert!(analytic_chsh_min_entropy(2.9).is_err());
    }
}
