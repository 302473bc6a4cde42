//! Monte-Carlo simulation of the spot-checking round loop.
//!
//! Every round is a test round with probability γ. Test rounds pick one of
//! the four joint settings uniformly; generation rounds use the fixed pair.
//! Outcomes are sampled from the source model, test rounds feed the Bell
//! estimator and generation rounds contribute their `(a, b)` pair to the raw
//! bit string.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bell::{visibility_for_target, BellExpression, Behavior, QuantumModel};
use crate::bits::PackedBits;
use crate::eat::{bell_tolerance, Scenario};
use crate::error::{Error, Result};

/// Deterministic generator for `(seed, stream)`; trials use their index as
/// the stream so they can run in any order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub rounds: u64,
    /// Test-round probability; 0 is allowed here to exercise the no-data path.
    pub gamma: f64,
    pub generation_settings: [u8; 2],
    /// Abort when the estimate falls strictly below this value.
    pub threshold: f64,
    pub event_rate: f64,
    pub switch_delay: f64,
    pub collect_raw: bool,
}

impl SimConfig {
    /// Round count from the time model and threshold `S_exp − δ_tol`.
    pub fn from_scenario(scn: &Scenario, gamma: f64) -> Result<Self> {
        let p = &scn.params;
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::param("gamma", format!("{gamma} not in [0,1]")));
        }
        let rounds = p.rounds_for(gamma);
        if rounds == 0 {
            return Err(Error::NoRounds);
        }
        let threshold = match bell_tolerance(&scn.expression, gamma, rounds, p.p_omega) {
            Ok(delta) => p.expected_bell_value - delta,
            Err(Error::InsufficientTestRounds { .. }) => p.expected_bell_value,
            Err(e) => return Err(e),
        };
        Ok(SimConfig {
            rounds,
            gamma,
            generation_settings: p.generation_settings,
            threshold,
            event_rate: p.event_rate,
            switch_delay: p.switch_delay,
            collect_raw: true,
        })
    }
}

/// The source model for a scenario: explicit visibility, or the one that
/// reproduces the expected Bell value at the configured angles.
pub fn model_for(scn: &Scenario) -> Result<QuantumModel> {
    let angles = scn.params.angles.unwrap_or_default();
    let v = match scn.params.visibility {
        Some(v) => v,
        None => visibility_for_target(&scn.expression, angles, scn.params.expected_bell_value)?,
    };
    QuantumModel::new(v, angles)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accepted,
    Aborted,
    /// No test round occurred, so nothing can be estimated.
    NoTestData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub seed: u64,
    pub stream: u64,
    pub rounds: u64,
    /// `counts[a][b][x][y]`.
    pub counts: [[[[u64; 2]; 2]; 2]; 2],
    pub m_test: u64,
    pub s_hat: Option<f64>,
    pub threshold: f64,
    pub verdict: Verdict,
    pub switches: u64,
    pub modeled_wall_time: f64,
    pub raw_bit_count: usize,
    #[serde(skip)]
    pub raw_bits: PackedBits,
}

impl SimulationResult {
    pub fn aborted(&self) -> bool {
        self.verdict != Verdict::Accepted
    }

    pub fn no_test_data(&self) -> bool {
        self.verdict == Verdict::NoTestData
    }
}

/// Fraction of consecutive round pairs with different joint settings.
pub fn empirical_switch_rate(result: &SimulationResult) -> f64 {
    if result.rounds < 2 {
        return 0.0;
    }
    result.switches as f64 / (result.rounds - 1) as f64
}

fn sample_outcome(beh: &Behavior, x: usize, y: usize, u: f64) -> (usize, usize) {
    let mut acc = 0.0;
    for (a, b) in [(0, 0), (0, 1), (1, 0)] {
        acc += beh.prob(a, b, x, y);
        if u < acc {
            return (a, b);
        }
    }
    (1, 1)
}

/// One run of the protocol on stream `stream` of `seed`.
pub fn run_trial(cfg: &SimConfig, expr: &BellExpression, model: &QuantumModel, seed: u64, stream: u64) -> SimulationResult {
    let beh = model.behavior();
    let mut rng = stream_rng(seed, stream);
    let [x0, y0] = cfg.generation_settings.map(usize::from);
    let gamma = cfg.gamma.clamp(0.0, 1.0);

    let mut counts = [[[[0u64; 2]; 2]; 2]; 2];
    let mut m_test = 0u64;
    let mut score = 0.0;
    let mut switches = 0u64;
    let mut previous: Option<(usize, usize)> = None;
    let mut raw = if cfg.collect_raw {
        PackedBits::with_capacity(2 * cfg.rounds as usize)
    } else {
        PackedBits::new()
    };
    let mut raw_bit_count = 0usize;

    for _ in 0..cfg.rounds {
        let test = rng.gen_bool(gamma);
        let (x, y) = if test {
            let pair: u8 = rng.gen_range(0..4);
            (usize::from(pair >> 1), usize::from(pair & 1))
        } else {
            (x0, y0)
        };
        if previous.is_some_and(|p| p != (x, y)) {
            switches += 1;
        }
        previous = Some((x, y));

        let (a, b) = sample_outcome(&beh, x, y, rng.gen::<f64>());
        counts[a][b][x][y] += 1;
        if test {
            m_test += 1;
            let sign = if a == b { 1.0 } else { -1.0 };
            score += 4.0 * expr.coefficient(x, y) * sign;
        } else {
            raw_bit_count += 2;
            if cfg.collect_raw {
                raw.push(a == 1);
                raw.push(b == 1);
            }
        }
    }

    let s_hat = (m_test > 0).then(|| score / m_test as f64);
    let verdict = match s_hat {
        None => Verdict::NoTestData,
        Some(s) if s < cfg.threshold => Verdict::Aborted,
        Some(_) => Verdict::Accepted,
    };
    SimulationResult {
        seed,
        stream,
        rounds: cfg.rounds,
        counts,
        m_test,
        s_hat,
        threshold: cfg.threshold,
        verdict,
        switches,
        modeled_wall_time: cfg.rounds as f64 / cfg.event_rate + switches as f64 * cfg.switch_delay,
        raw_bit_count,
        raw_bits: raw,
    }
}

/// A single deterministic run for `seed`.
pub fn run_protocol(cfg: &SimConfig, expr: &BellExpression, model: &QuantumModel, seed: u64) -> SimulationResult {
    run_trial(cfg, expr, model, seed, 0)
}

/// Independent runs on streams `0..trials`, returned in stream order.
pub fn run_trials(
    cfg: &SimConfig,
    expr: &BellExpression,
    model: &QuantumModel,
    trials: u64,
    seed: u64,
) -> Vec<SimulationResult> {
    (0..trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, expr, model, seed, t))
        .collect()
}

pub fn estimate_abort_rate(cfg: &SimConfig, expr: &BellExpression, model: &QuantumModel, trials: u64, seed: u64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    let cfg = SimConfig {
        collect_raw: false,
        ..*cfg
    };
    let aborted = run_trials(&cfg, expr, model, trials, seed)
        .iter()
        .filter(|r| r.aborted())
        .count();
    aborted as f64 / trials as f64
}

/// Aggregate over several runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub trials: u64,
    pub seed: u64,
    pub rounds: u64,
    pub abort_fraction: f64,
    pub no_test_data: u64,
    pub mean_s_hat: Option<f64>,
    pub mean_switch_rate: f64,
    pub threshold: f64,
}

pub fn summarize(results: &[SimulationResult], seed: u64) -> TrialSummary {
    let trials = results.len() as u64;
    let estimates: Vec<f64> = results.iter().filter_map(|r| r.s_hat).collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let switch_rates: Vec<f64> = results.iter().map(empirical_switch_rate).collect();
    TrialSummary {
        trials,
        seed,
        rounds: results.first().map_or(0, |r| r.rounds),
        abort_fraction: if trials == 0 {
            0.0
        } else {
            results.iter().filter(|r| r.aborted()).count() as f64 / trials as f64
        },
        no_test_data: results.iter().filter(|r| r.no_test_data()).count() as u64,
        mean_s_hat: mean(&estimates),
        mean_switch_rate: mean(&switch_rates).unwrap_or(0.0),
        threshold: results.first().map_or(f64::NAN, |r| r.threshold),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bell::Angles;
    use crate::eat::{switch_probability, ProtocolParams, Tunable};

    fn cfg(rounds: u64, gamma: f64, threshold: f64) -> SimConfig {
        SimConfig {
            rounds,
            gamma,
            generation_settings: [0, 0],
            threshold,
            event_rate: 70000.0,
            switch_delay: 0.0,
            collect_raw: true,
        }
    }

    fn honest(s: f64) -> QuantumModel {
        let v = visibility_for_target(&BellExpression::chsh(), Angles::canonical(), s).unwrap();
        QuantumModel::canonical(v).unwrap()
    }

    #[test]
    fn honest_run_estimates_bell_value() {
        let mut p = ProtocolParams::desk(1.0);
        p.chunk_time = None;
        p.rounds = Some(1_000_000);
        p.gamma = Tunable::Fixed(0.01);
        let scn = Scenario::resolve(p, None).unwrap();
        let cfg = SimConfig::from_scenario(&scn, 0.01).unwrap();
        let model = model_for(&scn).unwrap();
        let r = run_protocol(&cfg, &scn.expression, &model, 7);
        let s = r.s_hat.unwrap();
        assert!((s - 2.65022).abs() <= 0.1, "{s}");
        assert_eq!(r.verdict, Verdict::Accepted);
        assert_eq!(r.raw_bits.len(), 2 * (r.rounds - r.m_test) as usize);
        assert_eq!(r.raw_bit_count, r.raw_bits.len());
        let total: u64 = r.counts.iter().flatten().flatten().flatten().sum();
        assert_eq!(total, r.rounds);
    }

    #[test]
    fn no_test_rounds_is_flagged() {
        let r = run_protocol(&cfg(1000, 0.0, 2.0), &BellExpression::chsh(), &honest(2.7), 1);
        assert_eq!(r.m_test, 0);
        assert!(r.no_test_data());
        assert!(r.aborted());
        assert_eq!(r.switches, 0);
        assert_eq!(empirical_switch_rate(&r), 0.0);
    }

    #[test]
    fn white_noise_aborts() {
        let noise = QuantumModel::canonical(0.0).unwrap();
        let rate = estimate_abort_rate(&cfg(20_000, 0.1, 1.0), &BellExpression::chsh(), &noise, 50, 3);
        assert_eq!(rate, 1.0);
    }

    #[test]
    fn infinite_thresholds() {
        let chsh = BellExpression::chsh();
        let m = honest(2.7);
        assert_eq!(estimate_abort_rate(&cfg(2000, 0.1, f64::NEG_INFINITY), &chsh, &m, 20, 1), 0.0);
        assert_eq!(estimate_abort_rate(&cfg(2000, 0.1, f64::INFINITY), &chsh, &m, 20, 1), 1.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let c = cfg(50_000, 0.05, 2.5);
        let chsh = BellExpression::chsh();
        let a = run_protocol(&c, &chsh, &honest(2.7), 99);
        let b = run_protocol(&c, &chsh, &honest(2.7), 99);
        assert_eq!(a, b);
        assert_eq!(a.raw_bits, b.raw_bits);
        let other = run_protocol(&c, &chsh, &honest(2.7), 100);
        assert_ne!(a.raw_bits, other.raw_bits);
    }

    #[test]
    fn full_testing_switch_rate() {
        let r = run_protocol(&cfg(200_000, 1.0, 0.0), &BellExpression::chsh(), &honest(2.7), 5);
        let p = switch_probability(1.0);
        let sigma = (p * (1.0 - p) / r.rounds as f64).sqrt();
        assert!((empirical_switch_rate(&r) - p).abs() <= 3.0 * sigma);
        assert!(r.raw_bits.is_empty());
    }
}
