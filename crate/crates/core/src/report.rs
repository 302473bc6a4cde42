//! Parameter sweeps and the CSV reproductions of the rate tables and figure
//! curves.
//!
//! CSV headers are the field names of [`AsymptoticRow`] (`table1`, `table2`)
//! and [`SweepRow`] (every `fig*` target). Numbers use Rust's shortest
//! round-trip formatting, so output is byte-stable for fixed inputs.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::EntropyCurve;
use crate::eat::{self, log_grid, ProtocolParams, RateReport, Scenario, Tunable};
use crate::error::{Error, Result};
use crate::tables;

pub const TABLE_HEADER: &str = "events_per_second,bell_value,h_min,vne_radau6,vne_radau8,asymptotic_rate,tabulated_rate";
pub const SWEEP_HEADER: &str = "series,chunk_time_s,switch_delay_s,eps_s,p_omega,event_rate,gamma,beta,rounds,delta_tol,s_tol,certified_bits,consumed_bits,net_bits,net_rate_bps,expansion_ratio";

/// Chunk times for the rate-vs-time curve.
pub const FIG2_CHUNK_TIMES: [f64; 19] = [
    60.0, 120.0, 180.0, 240.0, 300.0, 360.0, 480.0, 600.0, 900.0, 1200.0, 1800.0, 2700.0, 3600.0, 7200.0,
    14400.0, 28800.0, 43200.0, 69120.0, 86400.0,
];
pub const FIG3_4_P_OMEGA: [f64; 5] = [0.9, 0.99, 0.999, 0.9999, 0.99999];
pub const FIG6_CHUNK_TIMES: [f64; 3] = [600.0, 3600.0, 69120.0];
pub const FIG7_CHUNK_TIME: f64 = 360.0;
pub const FIG7_EPS_S: [f64; 4] = [1e-15, 1e-12, 1e-9, 1e-6];

/// γ values on the test-probability axis of fig3–fig5.
pub fn figure_gamma_grid() -> Vec<f64> {
    log_grid(1e-4, 0.3, 25)
}

/// Switch delays for fig6/fig7: zero, then 1-2-5 steps per decade over `[1e-5, 1]`.
pub fn switch_delay_grid() -> Vec<f64> {
    let mut grid = vec![0.0];
    for exp in -5..0 {
        for mantissa in [1.0, 2.0, 5.0] {
            grid.push(format!("{mantissa}e{exp}").parse().expect("literal"));
        }
    }
    grid.push(1.0);
    grid
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    ChunkTime,
    Gamma,
    POmega,
    SwitchDelay,
    EpsS,
    EventRate,
}

impl SweepVariable {
    fn apply(self, p: &mut ProtocolParams, value: f64) {
        match self {
            SweepVariable::ChunkTime => {
                p.chunk_time = Some(value);
                p.rounds = None;
            }
            SweepVariable::Gamma => p.gamma = Tunable::Fixed(value),
            SweepVariable::POmega => p.p_omega = value,
            SweepVariable::SwitchDelay => p.switch_delay = value,
            SweepVariable::EpsS => p.eps_s = value,
            SweepVariable::EventRate => p.event_rate = value,
        }
    }
}

/// One variable swept over a grid with everything else taken from `fixed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub series: String,
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    pub fixed: ProtocolParams,
}

impl SweepSpec {
    pub fn new(series: impl Into<String>, variable: SweepVariable, grid: Vec<f64>, fixed: ProtocolParams) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::param("grid", "must not be empty"));
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("grid", "must be strictly increasing"));
        }
        Ok(SweepSpec {
            series: series.into(),
            variable,
            grid,
            fixed,
        })
    }
}

/// One optimized operating point of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub series: String,
    pub chunk_time_s: Option<f64>,
    pub switch_delay_s: f64,
    pub eps_s: f64,
    pub p_omega: f64,
    pub event_rate: f64,
    pub gamma: f64,
    pub beta: f64,
    pub rounds: u64,
    pub delta_tol: f64,
    pub s_tol: f64,
    pub certified_bits: f64,
    pub consumed_bits: f64,
    pub net_bits: f64,
    pub net_rate_bps: f64,
    pub expansion_ratio: Option<f64>,
}

impl SweepRow {
    pub fn new(series: &str, params: &ProtocolParams, r: &RateReport) -> Self {
        SweepRow {
            series: series.to_owned(),
            chunk_time_s: params.chunk_time,
            switch_delay_s: params.switch_delay,
            eps_s: params.eps_s,
            p_omega: params.p_omega,
            event_rate: params.event_rate,
            gamma: r.gamma,
            beta: r.beta,
            rounds: r.rounds,
            delta_tol: r.delta_tol,
            s_tol: r.s_tol,
            certified_bits: r.certificate.certified_bits,
            consumed_bits: r.ledger.consumed_bits,
            net_bits: r.ledger.net_bits,
            net_rate_bps: r.net_rate,
            expansion_ratio: r.ledger.expansion_ratio,
        }
    }
}

/// Evaluates every grid point (in parallel), optimizing whatever the fixed
/// parameters leave free. Rows come back in grid order.
pub fn run_sweep(base: &Scenario, spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.grid
        .par_iter()
        .map(|&value| {
            let mut params = spec.fixed.clone();
            spec.variable.apply(&mut params, value);
            let scn = base.with_params(params)?;
            let report = eat::rate(&scn)?;
            Ok(SweepRow::new(&spec.series, &scn.params, &report))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticRow {
    pub events_per_second: f64,
    pub bell_value: f64,
    pub h_min: f64,
    pub vne_radau6: f64,
    pub vne_radau8: f64,
    /// `events_per_second × curve(bell_value)` with the 8-node curve.
    pub asymptotic_rate: f64,
    pub tabulated_rate: f64,
}

/// Asymptotic rates for every row of a built-in table.
pub fn asymptotic_table(name: &str) -> Result<Vec<AsymptoticRow>> {
    let (_, rows) = tables::rows(name).ok_or_else(|| Error::Unknown {
        kind: "table",
        name: name.to_owned(),
    })?;
    let curve = EntropyCurve::builtin(name).ok_or_else(|| Error::Unknown {
        kind: "table",
        name: name.to_owned(),
    })?;
    Ok(rows
        .iter()
        .map(|r| AsymptoticRow {
            events_per_second: r.events_per_second,
            bell_value: r.bell_value,
            h_min: r.h_min,
            vne_radau6: r.vne_radau6,
            vne_radau8: r.vne_radau8,
            asymptotic_rate: eat::asymptotic_rate(r.events_per_second, &curve, r.bell_value),
            tabulated_rate: r.asymptotic_rate,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Table1,
    Table2,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Fig7,
}

impl Target {
    pub const ALL: [Target; 8] = [
        Target::Table1,
        Target::Table2,
        Target::Fig2,
        Target::Fig3,
        Target::Fig4,
        Target::Fig5,
        Target::Fig6,
        Target::Fig7,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::Table1 => "table1",
            Target::Table2 => "table2",
            Target::Fig2 => "fig2",
            Target::Fig3 => "fig3",
            Target::Fig4 => "fig4",
            Target::Fig5 => "fig5",
            Target::Fig6 => "fig6",
            Target::Fig7 => "fig7",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Target::Table1 => "asymptotic rates, weighted expression",
            Target::Table2 => "asymptotic rates, CHSH",
            Target::Fig2 => "optimized net rate vs chunk time",
            Target::Fig3 => "net rate vs (gamma, p_omega) at 600 s",
            Target::Fig4 => "net rate vs (gamma, p_omega) at 3600 s",
            Target::Fig5 => "expansion ratio vs gamma at 600 s and 3600 s",
            Target::Fig6 => "net rate vs switch delay at 600 s, 3600 s, 69120 s",
            Target::Fig7 => "net rate vs switch delay at 360 s for four eps_s",
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Target::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Unknown {
                kind: "reproduction target",
                name: s.to_owned(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Report {
    Table(Vec<AsymptoticRow>),
    Sweep(Vec<SweepRow>),
}

impl Report {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        match self {
            Report::Table(rows) if rows.is_empty() => w.write_record(TABLE_HEADER.split(','))?,
            Report::Sweep(rows) if rows.is_empty() => w.write_record(SWEEP_HEADER.split(','))?,
            Report::Table(rows) => rows.iter().try_for_each(|r| w.serialize(r))?,
            Report::Sweep(rows) => rows.iter().try_for_each(|r| w.serialize(r))?,
        }
        let bytes = w.into_inner().map_err(|e| Error::io("<csv>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn sweep_rows(&self) -> &[SweepRow] {
        match self {
            Report::Sweep(rows) => rows,
            Report::Table(_) => &[],
        }
    }
}

/// The desk profile used by every figure target: CHSH at 70 000 events/s.
pub fn desk_scenario() -> Scenario {
    Scenario::resolve(ProtocolParams::desk(3600.0), None).expect("desk profile is valid")
}

fn with_chunk_time(base: &ProtocolParams, t: f64) -> ProtocolParams {
    let mut p = base.clone();
    p.chunk_time = Some(t);
    p.rounds = None;
    p
}

fn gamma_panels(base: &Scenario, chunk_time: f64, p_omegas: &[f64], series: impl Fn(f64) -> String) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &p_omega in p_omegas {
        let mut fixed = with_chunk_time(&base.params, chunk_time);
        fixed.p_omega = p_omega;
        fixed.beta = Tunable::Optimize;
        let spec = SweepSpec::new(series(p_omega), SweepVariable::Gamma, figure_gamma_grid(), fixed)?;
        rows.extend(run_sweep(base, &spec)?);
    }
    Ok(rows)
}

/// Produces a reproduction target. `base` supplies every parameter the
/// target does not sweep; [`desk_scenario`] gives the reference setting.
pub fn reproduce(target: Target, base: &Scenario) -> Result<Report> {
    let p = &base.params;
    let rows = match target {
        Target::Table1 => return asymptotic_table("table1").map(Report::Table),
        Target::Table2 => return asymptotic_table("table2").map(Report::Table),
        Target::Fig2 => {
            let spec = SweepSpec::new("rate_vs_time", SweepVariable::ChunkTime, FIG2_CHUNK_TIMES.to_vec(), p.clone())?;
            run_sweep(base, &spec)?
        }
        Target::Fig3 => gamma_panels(base, 600.0, &FIG3_4_P_OMEGA, |po| format!("T=600,p_omega={po}"))?,
        Target::Fig4 => gamma_panels(base, 3600.0, &FIG3_4_P_OMEGA, |po| format!("T=3600,p_omega={po}"))?,
        Target::Fig5 => {
            let mut rows = gamma_panels(base, 600.0, &[p.p_omega], |_| "T=600".into())?;
            rows.extend(gamma_panels(base, 3600.0, &[p.p_omega], |_| "T=3600".into())?);
            rows
        }
        Target::Fig6 => {
            let mut rows = Vec::new();
            for t in FIG6_CHUNK_TIMES {
                let spec = SweepSpec::new(
                    format!("T={t}"),
                    SweepVariable::SwitchDelay,
                    switch_delay_grid(),
                    with_chunk_time(p, t),
                )?;
                rows.extend(run_sweep(base, &spec)?);
            }
            rows
        }
        Target::Fig7 => {
            let mut rows = Vec::new();
            for eps in FIG7_EPS_S {
                let mut fixed = with_chunk_time(p, FIG7_CHUNK_TIME);
                fixed.eps_s = eps;
                let spec = SweepSpec::new(format!("eps_s={eps:e}"), SweepVariable::SwitchDelay, switch_delay_grid(), fixed)?;
                rows.extend(run_sweep(base, &spec)?);
            }
            rows
        }
    };
    Ok(Report::Sweep(rows))
}
