//! Finite-size certified output, randomness accounting and the time model of
//! the spot-checking protocol, plus the parameter optimizer.
//!
//! The certified length follows the entropy accumulation bound with improved
//! second-order term, Rényi parameter `α = 1 + β` and a two-party output
//! alphabet of size `d = 4`:
//!
//! ```text
//! n·g(S_tol) − n·(β ln2 / 2)·V² − n·β²·K_β − (g_ε(ε_s) + (1+β)·log2(1/p_Ω)) / β
//! ```
//!
//! where `g` is an affine min-tradeoff function, `V = log2(2d²+1) + √(2 + Var_f)`
//! and `K_β` depends on `Max_f − MinΣ_f` (see [`eat_certified_bits`]).

use std::f64::consts::{E, LN_2};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bell::{Angles, BellExpression};
use crate::curves::{anchor_candidates, tangent_tradeoff, EntropyCurve, MinTradeoff};
use crate::error::{Error, Result};

/// Output alphabet size of one round (two binary outcomes).
pub const OUTPUT_ALPHABET: f64 = 4.0;

pub const GAMMA_GRID_MIN: f64 = 1e-5;
pub const GAMMA_GRID_MAX: f64 = 0.3;
pub const GAMMA_GRID_POINTS: usize = 121;
pub const BETA_MIN: f64 = 1e-6;
pub const BETA_MAX: f64 = 1.0 - 1e-6;

/// Shannon entropy of a Bernoulli(p) variable in bits.
pub fn binary_entropy(p: f64) -> f64 {
    let term = |q: f64| if q <= 0.0 { 0.0 } else { -q * q.log2() };
    term(p) + term(1.0 - p)
}

/// Settings randomness per round: `H_XY·γ + H2(γ)`.
pub fn consumption_per_round(gamma: f64, h_xy: f64) -> f64 {
    h_xy * gamma + binary_entropy(gamma)
}

/// Probability that two consecutive rounds use different joint settings
/// when test rounds pick one of the four pairs uniformly.
pub fn switch_probability(gamma: f64) -> f64 {
    let stay_generation = (1.0 - gamma) + gamma / 4.0;
    let stay_other = gamma / 4.0;
    1.0 - (stay_generation * stay_generation + 3.0 * stay_other * stay_other)
}

/// Expected wall time of one round, including switch delays.
pub fn time_per_round(event_rate: f64, switch_delay: f64, gamma: f64) -> f64 {
    1.0 / event_rate + switch_delay * switch_probability(gamma)
}

/// Number of rounds that fit into `chunk_time` seconds.
pub fn rounds_in_time(chunk_time: f64, event_rate: f64, switch_delay: f64, gamma: f64) -> u64 {
    // T·r / (1 + r·τ·P) keeps τ = 0 exact
    let n = chunk_time * event_rate / (1.0 + event_rate * switch_delay * switch_probability(gamma));
    if n.is_finite() && n > 0.0 {
        n.floor() as u64
    } else {
        0
    }
}

/// Hoeffding half-width for the per-test-round estimator `4·c_xy·(−1)^{a⊕b}`
/// so that honest devices at the expected value pass `S_exp − δ` with
/// probability at least `p_omega`.
pub fn bell_tolerance(expr: &BellExpression, gamma: f64, rounds: u64, p_omega: f64) -> Result<f64> {
    let expected = gamma * rounds as f64;
    // also rejects NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(expected >= 1.0) {
        return Err(Error::InsufficientTestRounds { expected });
    }
    let range = 8.0 * expr.max_abs_coefficient();
    let log_term = -(-p_omega).ln_1p();
    Ok(range * (log_term / (2.0 * expected)).sqrt())
}

/// `g_ε(ε) = −log2(1 − √(1 − ε²))`, evaluated without cancellation.
pub fn smoothing_penalty(eps: f64) -> f64 {
    let one_minus_root = eps * eps / (1.0 + (1.0 - eps * eps).sqrt());
    -one_minus_root.log2()
}

/// Inputs of the finite-size bound besides the tradeoff function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EatSettings {
    pub eps_s: f64,
    pub p_omega: f64,
    pub beta: f64,
}

/// Certified smooth min-entropy with its additive breakdown:
/// `bound = first_order − variance_term − k_term − epsilon_term` and
/// `certified_bits = max(0, bound)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EatCertificate {
    pub rounds: u64,
    pub s_tol: f64,
    pub beta: f64,
    pub first_order: f64,
    pub variance_term: f64,
    pub k_term: f64,
    pub epsilon_term: f64,
    pub bound: f64,
    pub certified_bits: f64,
    /// `S_tol` at or below the classical bound: nothing is certified.
    pub below_classical: bool,
}

impl EatCertificate {
    pub fn zero(rounds: u64, s_tol: f64) -> Self {
        EatCertificate {
            rounds,
            s_tol,
            beta: f64::NAN,
            first_order: 0.0,
            variance_term: 0.0,
            k_term: 0.0,
            epsilon_term: 0.0,
            bound: 0.0,
            certified_bits: 0.0,
            below_classical: true,
        }
    }
}

pub fn eat_certified_bits(
    settings: &EatSettings,
    tradeoff: &MinTradeoff,
    rounds: u64,
    s_tol: f64,
    classical_bound: f64,
) -> Result<EatCertificate> {
    let beta = settings.beta;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::param("beta", format!("{beta} not in (0,1)")));
    }
    let n = rounds as f64;
    let d = OUTPUT_ALPHABET;

    let v = (2.0 * d * d + 1.0).log2() + (2.0 + tradeoff.var_f).sqrt();
    let exponent = 2.0 * d.log2() + tradeoff.max_f - tradeoff.min_sigma_f;
    // ln(2^x + e²) without overflowing 2^x
    let x = exponent * LN_2;
    let log_term = x + (E * E * (-x).exp()).ln_1p();
    let k_beta = (beta * exponent).exp2() * log_term.powi(3) / (6.0 * (1.0 - beta).powi(3) * LN_2);

    let first_order = n * tradeoff.eval(s_tol);
    let variance_term = n * beta * LN_2 / 2.0 * v * v;
    let k_term = n * beta * beta * k_beta;
    let epsilon_term =
        (smoothing_penalty(settings.eps_s) + (1.0 + beta) * (1.0 / settings.p_omega).log2()) / beta;
    let bound = first_order - variance_term - k_term - epsilon_term;
    let below_classical = s_tol <= classical_bound;
    let certified_bits = if below_classical { 0.0 } else { bound.max(0.0) };

    Ok(EatCertificate {
        rounds,
        s_tol,
        beta,
        first_order,
        variance_term,
        k_term,
        epsilon_term,
        bound,
        certified_bits,
        below_classical,
    })
}

/// A parameter that is either fixed or left to the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Tunable {
    Fixed(f64),
    #[default]
    Optimize,
}

impl Tunable {
    pub fn value(self) -> Option<f64> {
        match self {
            Tunable::Fixed(v) => Some(v),
            Tunable::Optimize => None,
        }
    }
}

/// Where the min-tradeoff line touches the curve.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Anchor {
    /// The expected Bell value, clamped into the tabulated range.
    #[default]
    Expected,
    At(f64),
    /// Try every envelope vertex.
    Optimize,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum KeywordOr {
    Value(f64),
    Word(String),
}

impl Serialize for Tunable {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            Tunable::Fixed(v) => KeywordOr::Value(v),
            Tunable::Optimize => KeywordOr::Word("optimize".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Tunable {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match KeywordOr::deserialize(d)? {
            KeywordOr::Value(v) => Ok(Tunable::Fixed(v)),
            KeywordOr::Word(w) if w == "optimize" => Ok(Tunable::Optimize),
            KeywordOr::Word(w) => Err(serde::de::Error::custom(format!(
                "expected a number or \"optimize\", found \"{w}\""
            ))),
        }
    }
}

impl Serialize for Anchor {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match *self {
            Anchor::Expected => KeywordOr::Word("expected".into()),
            Anchor::At(v) => KeywordOr::Value(v),
            Anchor::Optimize => KeywordOr::Word("optimize".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Anchor {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match KeywordOr::deserialize(d)? {
            KeywordOr::Value(v) => Ok(Anchor::At(v)),
            KeywordOr::Word(w) if w == "expected" => Ok(Anchor::Expected),
            KeywordOr::Word(w) if w == "optimize" => Ok(Anchor::Optimize),
            KeywordOr::Word(w) => Err(serde::de::Error::custom(format!(
                "expected a number, \"expected\" or \"optimize\", found \"{w}\""
            ))),
        }
    }
}

fn default_p_omega() -> f64 {
    0.9999
}
fn default_eps_s() -> f64 {
    1e-15
}
fn default_setting_entropy() -> f64 {
    1.0
}
fn default_expression() -> String {
    "chsh".into()
}
fn default_curve() -> String {
    "table2".into()
}

/// Protocol parameters; also the on-disk profile format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolParams {
    /// Detected coincidence events per second.
    pub event_rate: f64,
    /// Chunk generation time in seconds. Exactly one of `chunk_time` and
    /// `rounds` must be given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<u64>,
    #[serde(default)]
    pub gamma: Tunable,
    #[serde(default = "default_p_omega")]
    pub p_omega: f64,
    #[serde(default = "default_eps_s")]
    pub eps_s: f64,
    #[serde(default)]
    pub beta: Tunable,
    /// Seconds lost per change of joint settings.
    #[serde(default)]
    pub switch_delay: f64,
    #[serde(default = "default_setting_entropy")]
    pub h_x: f64,
    #[serde(default = "default_setting_entropy")]
    pub h_y: f64,
    #[serde(default)]
    pub generation_settings: [u8; 2],
    pub expected_bell_value: f64,
    #[serde(default = "default_expression")]
    pub expression: String,
    #[serde(default = "default_curve")]
    pub curve: String,
    #[serde(default)]
    pub anchor: Anchor,
    /// Source visibility for simulation; derived from the expected Bell
    /// value when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<Angles>,
}

impl ProtocolParams {
    /// CHSH at 70 000 events/s and `S = 2.65022` with the default
    /// confidence parameters; γ and β left to the optimizer.
    pub fn desk(chunk_time: f64) -> Self {
        ProtocolParams {
            event_rate: 70000.0,
            chunk_time: Some(chunk_time),
            rounds: None,
            gamma: Tunable::Optimize,
            p_omega: default_p_omega(),
            eps_s: default_eps_s(),
            beta: Tunable::Optimize,
            switch_delay: 0.0,
            h_x: 1.0,
            h_y: 1.0,
            generation_settings: [0, 0],
            expected_bell_value: 2.65022,
            expression: default_expression(),
            curve: default_curve(),
            anchor: Anchor::Expected,
            visibility: None,
            angles: None,
        }
    }

    pub fn h_xy(&self) -> f64 {
        self.h_x + self.h_y
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &'static str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::param(name, format!("{v} not in (0,1)")))
            }
        };
        if !(self.event_rate > 0.0 && self.event_rate.is_finite()) {
            return Err(Error::param("event_rate", "must be positive"));
        }
        match (self.chunk_time, self.rounds) {
            (Some(t), None) if t > 0.0 && t.is_finite() => {}
            (None, Some(n)) if n > 0 => {}
            (Some(_), Some(_)) => {
                return Err(Error::param("chunk_time", "give either chunk_time or rounds, not both"))
            }
            _ => return Err(Error::param("chunk_time", "a positive chunk_time or rounds is required")),
        }
        if let Tunable::Fixed(g) = self.gamma {
            open_unit("gamma", g)?;
        }
        if let Tunable::Fixed(b) = self.beta {
            open_unit("beta", b)?;
        }
        open_unit("p_omega", self.p_omega)?;
        open_unit("eps_s", self.eps_s)?;
        if !(self.switch_delay >= 0.0 && self.switch_delay.is_finite()) {
            return Err(Error::param("switch_delay", "must be non-negative"));
        }
        if !(self.h_x >= 0.0 && self.h_y >= 0.0) {
            return Err(Error::param("h_x", "settings entropies must be non-negative"));
        }
        if self.generation_settings.iter().any(|&s| s > 1) {
            return Err(Error::param("generation_settings", "settings are 0 or 1"));
        }
        if !self.expected_bell_value.is_finite() {
            return Err(Error::param("expected_bell_value", "must be finite"));
        }
        if let Some(v) = self.visibility {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param("visibility", format!("{v} not in [0,1]")));
            }
        }
        Ok(())
    }

    /// Rounds in the chunk for a given test probability.
    pub fn rounds_for(&self, gamma: f64) -> u64 {
        match (self.rounds, self.chunk_time) {
            (Some(n), _) => n,
            (None, Some(t)) => rounds_in_time(t, self.event_rate, self.switch_delay, gamma),
            (None, None) => 0,
        }
    }
}

/// Parameters together with the resolved expression and curve.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub params: ProtocolParams,
    pub expression: BellExpression,
    pub curve: EntropyCurve,
}

impl Scenario {
    pub fn new(params: ProtocolParams, expression: BellExpression, curve: EntropyCurve) -> Result<Self> {
        params.validate()?;
        let curve = if curve.classical_bound().is_none() {
            let cb = expression.classical_bound();
            curve.with_classical_bound(cb)
        } else {
            curve
        };
        Ok(Scenario {
            params,
            expression,
            curve,
        })
    }

    /// Resolves `params.expression` and `params.curve` as built-in names or
    /// paths relative to `base`.
    pub fn resolve(params: ProtocolParams, base: Option<&Path>) -> Result<Self> {
        params.validate()?;
        let expression = BellExpression::resolve(&params.expression, base)?;
        let curve = EntropyCurve::resolve(&params.curve, base)?;
        Self::new(params, expression, curve)
    }

    pub fn from_profile(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let params: ProtocolParams = serde_json::from_str(&text)?;
        Self::resolve(params, path.parent())
    }

    pub fn with_params(&self, params: ProtocolParams) -> Result<Self> {
        Self::new(params, self.expression.clone(), self.curve.clone())
    }

    /// The default tangent anchor: the expected value clamped into range.
    pub fn default_anchor(&self) -> f64 {
        let env = self.curve.lower_envelope();
        self.params
            .expected_bell_value
            .clamp(env[0].s, env[env.len() - 1].s)
    }

    fn anchors(&self) -> Vec<f64> {
        match self.params.anchor {
            Anchor::Expected => vec![self.default_anchor()],
            Anchor::At(s) => vec![s],
            Anchor::Optimize => anchor_candidates(&self.curve),
        }
    }
}

/// `net = generated − consumed`; `expansion_ratio = net / consumed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountingLedger {
    pub consumed_bits: f64,
    pub generated_raw_bits: f64,
    pub net_bits: f64,
    pub expansion_ratio: Option<f64>,
    pub wall_time: f64,
}

impl AccountingLedger {
    pub fn new(generated: f64, consumed: f64, wall_time: f64) -> Self {
        let net = generated - consumed;
        AccountingLedger {
            consumed_bits: consumed,
            generated_raw_bits: generated,
            net_bits: net,
            expansion_ratio: (consumed > 0.0).then(|| net / consumed),
            wall_time,
        }
    }

    pub fn net_rate(&self) -> f64 {
        if self.wall_time > 0.0 {
            self.net_bits / self.wall_time
        } else {
            0.0
        }
    }
}

/// Result of evaluating the protocol at one operating point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateReport {
    pub gamma: f64,
    pub beta: f64,
    pub anchor: f64,
    pub rounds: u64,
    pub time_per_round: f64,
    pub delta_tol: f64,
    pub s_tol: f64,
    pub tradeoff: Option<MinTradeoff>,
    pub certificate: EatCertificate,
    pub ledger: AccountingLedger,
    /// Net bits per second of wall time.
    pub net_rate: f64,
    pub feasible: bool,
}

impl RateReport {
    fn infeasible(scn: &Scenario) -> Self {
        let wall_time = scn.params.chunk_time.unwrap_or(0.0);
        RateReport {
            gamma: f64::NAN,
            beta: f64::NAN,
            anchor: f64::NAN,
            rounds: 0,
            time_per_round: f64::NAN,
            delta_tol: f64::NAN,
            s_tol: f64::NAN,
            tradeoff: None,
            certificate: EatCertificate::zero(0, f64::NAN),
            ledger: AccountingLedger::new(0.0, 0.0, wall_time),
            net_rate: 0.0,
            feasible: false,
        }
    }
}

/// Everything about an operating point that does not depend on β.
struct Prepared {
    gamma: f64,
    anchor: f64,
    rounds: u64,
    time_per_round: f64,
    delta_tol: f64,
    s_tol: f64,
    tradeoff: MinTradeoff,
    consumed: f64,
    wall_time: f64,
}

fn prepare(scn: &Scenario, gamma: f64, anchor: f64) -> Result<Prepared> {
    let p = &scn.params;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::param("gamma", format!("{gamma} not in (0,1)")));
    }
    let rounds = p.rounds_for(gamma);
    if rounds == 0 {
        return Err(Error::NoRounds);
    }
    let per_round = time_per_round(p.event_rate, p.switch_delay, gamma);
    let delta_tol = bell_tolerance(&scn.expression, gamma, rounds, p.p_omega)?;
    let s_tol = p.expected_bell_value - delta_tol;
    let tradeoff = tangent_tradeoff(&scn.curve, anchor, &scn.expression, gamma)?;
    let consumed = rounds as f64 * consumption_per_round(gamma, p.h_xy());
    let wall_time = p.chunk_time.unwrap_or(rounds as f64 * per_round);
    Ok(Prepared {
        gamma,
        anchor,
        rounds,
        time_per_round: per_round,
        delta_tol,
        s_tol,
        tradeoff,
        consumed,
        wall_time,
    })
}

fn finish(scn: &Scenario, prep: &Prepared, beta: f64) -> Result<RateReport> {
    let settings = EatSettings {
        eps_s: scn.params.eps_s,
        p_omega: scn.params.p_omega,
        beta,
    };
    let certificate = eat_certified_bits(
        &settings,
        &prep.tradeoff,
        prep.rounds,
        prep.s_tol,
        scn.expression.classical_bound(),
    )?;
    let ledger = AccountingLedger::new(certificate.certified_bits, prep.consumed, prep.wall_time);
    Ok(RateReport {
        gamma: prep.gamma,
        beta,
        anchor: prep.anchor,
        rounds: prep.rounds,
        time_per_round: prep.time_per_round,
        delta_tol: prep.delta_tol,
        s_tol: prep.s_tol,
        tradeoff: Some(prep.tradeoff),
        certificate,
        net_rate: ledger.net_rate(),
        ledger,
        feasible: true,
    })
}

/// Evaluates the protocol at explicit γ, β and tangent anchor.
pub fn evaluate(scn: &Scenario, gamma: f64, beta: f64, anchor: f64) -> Result<RateReport> {
    finish(scn, &prepare(scn, gamma, anchor)?, beta)
}

/// Net rate for a scenario whose γ and β are fixed.
pub fn net_rate(scn: &Scenario) -> Result<RateReport> {
    let (Some(gamma), Some(beta)) = (scn.params.gamma.value(), scn.params.beta.value()) else {
        return Err(Error::param("gamma", "γ and β must be fixed; use optimize for free parameters"));
    };
    let anchor = match scn.params.anchor {
        Anchor::Expected => scn.default_anchor(),
        Anchor::At(s) => s,
        Anchor::Optimize => {
            return Err(Error::param("anchor", "anchor sweep requires optimize"));
        }
    };
    evaluate(scn, gamma, beta, anchor)
}

/// Which parameters the optimizer may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FreeVars {
    pub gamma: bool,
    pub beta: bool,
    pub anchor: bool,
}

impl FreeVars {
    /// The parameters marked `"optimize"` in the scenario.
    pub fn from_params(p: &ProtocolParams) -> Self {
        FreeVars {
            gamma: p.gamma == Tunable::Optimize,
            beta: p.beta == Tunable::Optimize,
            anchor: p.anchor == Anchor::Optimize,
        }
    }

    pub fn any(self) -> bool {
        self.gamma || self.beta || self.anchor
    }
}

/// Log-spaced γ grid used by the optimizer.
pub fn gamma_grid() -> Vec<f64> {
    log_grid(GAMMA_GRID_MIN, GAMMA_GRID_MAX, GAMMA_GRID_POINTS)
}

pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| {
            if i == 0 {
                lo
            } else if i + 1 == points {
                hi
            } else {
                (a + (b - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}

/// Golden-section maximization of a unimodal function on `[lo, hi]`,
/// stopping when the bracket is narrower than `tol`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc >= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    (lo + hi) / 2.0
}

/// β maximizing the (unclamped) bound at a prepared operating point. The
/// search runs over ln β, which resolves β far below the 1e-6 absolute
/// tolerance.
fn best_beta(scn: &Scenario, prep: &Prepared) -> f64 {
    let objective = |ln_beta: f64| {
        finish(scn, prep, ln_beta.exp())
            .map(|r| r.certificate.bound)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let ln_beta = golden_section_max(objective, BETA_MIN.ln(), BETA_MAX.ln(), 1e-10);
    let mut best = ln_beta.exp().clamp(BETA_MIN, BETA_MAX);
    let mut best_val = objective(best.ln());
    for edge in [BETA_MIN, BETA_MAX] {
        let v = objective(edge.ln());
        if v > best_val {
            best_val = v;
            best = edge;
        }
    }
    best
}

/// Maximizes the net bits over the free parameters. Grid points are
/// evaluated in parallel; ties go to the smallest γ, then the smallest β.
pub fn optimize(scn: &Scenario, free: FreeVars) -> Result<RateReport> {
    if !free.any() {
        return Err(Error::param("free", "at least one parameter must be free"));
    }
    let p = &scn.params;
    let gammas = match (free.gamma, p.gamma) {
        (true, _) | (false, Tunable::Optimize) => gamma_grid(),
        (false, Tunable::Fixed(g)) => vec![g],
    };
    let anchors = if free.anchor {
        anchor_candidates(&scn.curve)
    } else if p.anchor == Anchor::Optimize {
        vec![scn.default_anchor()]
    } else {
        scn.anchors()
    };
    let fixed_beta = if free.beta { None } else { p.beta.value() };

    let points: Vec<(f64, f64)> = gammas
        .iter()
        .flat_map(|&g| anchors.iter().map(move |&a| (g, a)))
        .collect();
    let reports: Vec<Option<RateReport>> = points
        .par_iter()
        .map(|&(gamma, anchor)| {
            let prep = prepare(scn, gamma, anchor).ok()?;
            let beta = fixed_beta.unwrap_or_else(|| best_beta(scn, &prep));
            finish(scn, &prep, beta).ok()
        })
        .collect();

    let mut best: Option<RateReport> = None;
    for r in reports.into_iter().flatten() {
        let better = match &best {
            None => true,
            Some(b) => {
                r.ledger.net_bits > b.ledger.net_bits
                    || (r.ledger.net_bits == b.ledger.net_bits
                        && (r.gamma, r.beta) < (b.gamma, b.beta))
            }
        };
        if better {
            best = Some(r);
        }
    }
    Ok(best.unwrap_or_else(|| RateReport::infeasible(scn)))
}

/// Optimizes whatever the scenario marks as free, or evaluates directly.
pub fn rate(scn: &Scenario) -> Result<RateReport> {
    let free = FreeVars::from_params(&scn.params);
    if free.any() {
        optimize(scn, free)
    } else {
        net_rate(scn)
    }
}

/// Events per second times the entropy bound, ignoring finite-size effects.
pub fn asymptotic_rate(event_rate: f64, curve: &EntropyCurve, bell_value: f64) -> f64 {
    event_rate * curve.eval(bell_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn desk(chunk_time: f64) -> Scenario {
        Scenario::resolve(ProtocolParams::desk(chunk_time), None).unwrap()
    }

    #[test]
    fn binary_entropy_values() {
        assert_eq!(binary_entropy(0.5), 1.0);
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert_abs_diff_eq!(binary_entropy(0.01), 0.08079, epsilon = 1e-5);
    }

    #[test]
    fn consumption_values() {
        assert_abs_diff_eq!(consumption_per_round(0.01, 2.0), 0.10079, epsilon = 1e-5);
        assert_eq!(consumption_per_round(0.0, 2.0), 0.0);
        assert_eq!(consumption_per_round(0.5, 2.0), 2.0);
    }

    #[test]
    fn switch_probability_values() {
        assert_abs_diff_eq!(switch_probability(1.0), 0.75, epsilon = 1e-15);
        // enumeration oracle: P(stay) = Σ_s q_s² over the four joint settings
        let stay = |g: f64| -> f64 {
            (0..4)
                .map(|s| if s == 0 { 1.0 - g + g / 4.0 } else { g / 4.0 })
                .map(|q| q * q)
                .sum()
        };
        for g in [0.01, 0.1, 0.37, 0.9] {
            assert_abs_diff_eq!(switch_probability(g), 1.0 - stay(g), epsilon = 1e-15);
        }
        assert_abs_diff_eq!(switch_probability(0.01), 0.014925, epsilon = 1e-6);
        let g = 1e-7;
        assert_relative_eq!(switch_probability(g), 1.5 * g, max_relative = 1e-6);
    }

    #[test]
    fn rounds_in_time_values() {
        assert_eq!(rounds_in_time(600.0, 70000.0, 0.0, 0.01), 42_000_000);
        let per_round = time_per_round(70000.0, 0.01, 0.01);
        assert_abs_diff_eq!(per_round, 1.0 / 70000.0 + 0.01 * 0.014925, epsilon = 1e-12);
        let n = rounds_in_time(600.0, 70000.0, 0.01, 0.01);
        assert_eq!(n, (600.0 / time_per_round(70000.0, 0.01, 0.01)).floor() as u64);
        assert_eq!(rounds_in_time(600.0, 70000.0, f64::INFINITY, 0.01), 0);
    }

    #[test]
    fn tolerance_values() {
        let chsh = BellExpression::chsh();
        let d = bell_tolerance(&chsh, 0.01, 42_000_000, 0.9999).unwrap();
        assert_abs_diff_eq!(d, 0.02648, epsilon = 1e-4);
        assert!(bell_tolerance(&chsh, 0.01, 42_000_000_000_000, 0.9999).unwrap() < 1e-4);
        assert!(bell_tolerance(&chsh, 0.01, 42_000_000, 1e-12).unwrap() < 1e-6);
        assert!(matches!(
            bell_tolerance(&chsh, 0.01, 50, 0.9999),
            Err(Error::InsufficientTestRounds { .. })
        ));
    }

    #[test]
    fn smoothing_penalty_value() {
        assert_abs_diff_eq!(smoothing_penalty(1e-15), 100.66, epsilon = 0.01);
        let direct = -(1.0 - (1.0f64 - 0.01 * 0.01).sqrt()).log2();
        assert_relative_eq!(smoothing_penalty(0.01), direct, max_relative = 1e-9);
    }

    #[test]
    fn certificate_breakdown_adds_up() {
        let scn = desk(3600.0);
        let r = evaluate(&scn, 0.01, 1e-5, scn.default_anchor()).unwrap();
        let c = r.certificate;
        let sum = c.first_order - c.variance_term - c.k_term - c.epsilon_term;
        assert_relative_eq!(sum, c.bound, max_relative = 1e-12);
        assert_eq!(c.certified_bits, c.bound.max(0.0));
        assert!(c.certified_bits <= c.first_order);
        let l = r.ledger;
        assert_relative_eq!(l.net_bits, l.generated_raw_bits - l.consumed_bits);
        assert_relative_eq!(l.expansion_ratio.unwrap() * l.consumed_bits, l.net_bits, max_relative = 1e-12);
    }

    #[test]
    fn certificate_rejects_bad_beta() {
        let scn = desk(3600.0);
        assert!(evaluate(&scn, 0.01, 0.0, scn.default_anchor()).is_err());
        assert!(evaluate(&scn, 0.01, 1.0, scn.default_anchor()).is_err());
    }

    #[test]
    fn classical_expectation_certifies_nothing() {
        let mut p = ProtocolParams::desk(3600.0);
        p.expected_bell_value = 2.0;
        let scn = Scenario::resolve(p, None).unwrap();
        let r = optimize(&scn, FreeVars { gamma: true, beta: true, anchor: false }).unwrap();
        assert!(r.certificate.below_classical);
        assert!(r.ledger.net_bits <= 0.0);
    }

    #[test]
    fn heavy_testing_is_a_net_loss() {
        let scn = desk(3600.0);
        let r = evaluate(&scn, 0.5, 1e-4, scn.default_anchor()).unwrap();
        assert!(r.ledger.net_bits < -0.5 * r.rounds as f64);
    }

    #[test]
    fn asymptotic_rate_values() {
        let chsh = EntropyCurve::builtin("table2").unwrap();
        assert_abs_diff_eq!(asymptotic_rate(70000.0, &chsh, 2.65022), 62748.0, epsilon = 1.0);
        let weighted = EntropyCurve::builtin("table1").unwrap();
        assert_abs_diff_eq!(asymptotic_rate(8000.0, &weighted, 5.08671), 6864.0, epsilon = 1.0);
        assert_eq!(asymptotic_rate(0.0, &chsh, 2.7), 0.0);
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let x = golden_section_max(|x| -(x - 0.3) * (x - 0.3), 0.0, 1.0, 1e-9);
        assert_abs_diff_eq!(x, 0.3, epsilon = 1e-8);
    }

    #[test]
    fn profile_parsing() {
        let p: ProtocolParams = serde_json::from_str(
            r#"{"event_rate": 70000, "chunk_time": 600, "gamma": 0.01,
                "beta": "optimize", "expected_bell_value": 2.65022}"#,
        )
        .unwrap();
        assert_eq!(p.gamma, Tunable::Fixed(0.01));
        assert_eq!(p.beta, Tunable::Optimize);
        assert_eq!(p.anchor, Anchor::Expected);
        assert_eq!(p.p_omega, 0.9999);
        assert_eq!(p.eps_s, 1e-15);
        assert!(serde_json::from_str::<ProtocolParams>(
            r#"{"event_rate": 1, "chunk_time": 1, "gamma": "often", "expected_bell_value": 2.6}"#
        )
        .is_err());
        assert!(serde_json::from_str::<ProtocolParams>(
            r#"{"event_rate": 1, "chunk_time": 1, "expected_bell_value": 2.6, "colour": 1}"#
        )
        .is_err());
        let back: ProtocolParams = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn validation() {
        let mut p = ProtocolParams::desk(600.0);
        p.p_omega = 1.0;
        assert!(p.validate().is_err());
        let mut p = ProtocolParams::desk(600.0);
        p.rounds = Some(10);
        assert!(p.validate().is_err());
        let mut p = ProtocolParams::desk(600.0);
        p.switch_delay = -1.0;
        assert!(p.validate().is_err());
        let mut p = ProtocolParams::desk(600.0);
        p.gamma = Tunable::Fixed(0.0);
        assert!(p.validate().is_err());
    }

    #[test]
    fn net_rate_needs_fixed_parameters() {
        assert!(net_rate(&desk(600.0)).is_err());
        let mut p = ProtocolParams::desk(600.0);
        p.gamma = Tunable::Fixed(0.01);
        p.beta = Tunable::Fixed(2e-5);
        let scn = Scenario::resolve(p, None).unwrap();
        let r = net_rate(&scn).unwrap();
        assert_eq!(r.rounds, 42_000_000);
        assert!(optimize(&scn, FreeVars::default()).is_err());
    }

    #[test]
    fn single_free_beta_is_local_maximum() {
        let mut p = ProtocolParams::desk(3600.0);
        p.gamma = Tunable::Fixed(0.01);
        let scn = Scenario::resolve(p, None).unwrap();
        let r = optimize(&scn, FreeVars { beta: true, ..Default::default() }).unwrap();
        let net = |b: f64| evaluate(&scn, 0.01, b, r.anchor).unwrap().ledger.net_bits;
        for step in [1e-6, 1e-7, 1e-8] {
            assert!(net(r.beta + step) <= r.ledger.net_bits);
            if r.beta - step > 0.0 {
                assert!(net(r.beta - step) <= r.ledger.net_bits);
            }
        }
    }

    #[test]
    fn infeasible_scenario_returns_zero_rate() {
        let mut p = ProtocolParams::desk(1e-4);
        p.gamma = Tunable::Fixed(0.01);
        let scn = Scenario::resolve(p, None).unwrap();
        let r = optimize(&scn, FreeVars { beta: true, ..Default::default() }).unwrap();
        assert!(!r.feasible);
        assert_eq!(r.certificate.certified_bits, 0.0);
    }
}
