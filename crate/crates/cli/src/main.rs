use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use qrex_core::bits::PackedBits;
use qrex_core::eat::{self, FreeVars, ProtocolParams, RateReport, Scenario, Tunable};
use qrex_core::extractor::{self, ToeplitzSeed, DEFAULT_EPS_EXT};
use qrex_core::report::{self, Target};
use qrex_core::sim::{self, SimConfig, SimulationResult};
use qrex_core::Error;

const REPRODUCE_HELP: &str = "\
Targets:
  table1  asymptotic rates, weighted expression
  table2  asymptotic rates, CHSH
  fig2    optimized net rate vs chunk time
  fig3    net rate vs (gamma, p_omega) at 600 s
  fig4    net rate vs (gamma, p_omega) at 3600 s
  fig5    expansion ratio vs gamma at 600 s and 3600 s
  fig6    net rate vs switch delay at 600 s, 3600 s, 69120 s
  fig7    net rate vs switch delay at 360 s for four eps_s

CSV columns, table targets:
  events_per_second,bell_value,h_min,vne_radau6,vne_radau8,asymptotic_rate,tabulated_rate

CSV columns, figure targets:
  series,chunk_time_s,switch_delay_s,eps_s,p_omega,event_rate,gamma,beta,rounds,delta_tol,s_tol,certified_bits,consumed_bits,net_bits,net_rate_bps,expansion_ratio

Without --profile the figures use the built-in desk setting (CHSH, 70000 events/s,
S = 2.65022, eps_s = 1e-15, p_omega = 0.9999, no switch delay).";

#[derive(Parser)]
#[command(name = "qrex", version, about = "Certified-rate engine for Bell-test randomness expansion")]
#[command(after_help = "Exit status: 0 ok, 2 usage or input error, 3 infeasible parameters.")]
struct Cli {
    /// Protocol profile (JSON). Defaults to the desk setting at 3600 s.
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Net certified rate of a profile, optimizing whatever it leaves free.
    Rate(Overrides),
    /// Optimize the chosen parameters.
    Optimize {
        #[arg(long, value_delimiter = ',', default_value = "gamma,beta")]
        vars: Vec<Var>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the spot-checking protocol against an honest source model.
    Simulate {
        #[arg(long, default_value_t = 1)]
        trials: u64,
        /// Raw generation bits of a single trial; metadata goes to <RAW>.json.
        #[arg(long)]
        raw: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Toeplitz-hash raw bits down to the certified length.
    Extract {
        #[arg(long)]
        raw: PathBuf,
        /// JSON with `certified_bits` at the top level or under `certificate`.
        #[arg(long)]
        certificate: PathBuf,
        #[arg(long)]
        seed_file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EPS_EXT)]
        eps_ext: f64,
        /// Draw a fresh seed from --seed and write it to --seed-file first.
        #[arg(long)]
        write_seed: bool,
    },
    /// Regenerate a rate table or figure sweep.
    #[command(after_help = REPRODUCE_HELP)]
    Reproduce { target: Target },
}

#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    chunk_time: Option<f64>,
    #[arg(long, conflicts_with = "chunk_time")]
    rounds: Option<u64>,
    /// A value or "optimize".
    #[arg(long, value_parser = parse_tunable)]
    gamma: Option<Tunable>,
    /// A value or "optimize".
    #[arg(long, value_parser = parse_tunable)]
    beta: Option<Tunable>,
    #[arg(long)]
    switch_delay: Option<f64>,
    #[arg(long)]
    eps_s: Option<f64>,
    #[arg(long)]
    p_omega: Option<f64>,
    #[arg(long)]
    event_rate: Option<f64>,
    #[arg(long)]
    visibility: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Var {
    Gamma,
    Beta,
    Anchor,
}

fn parse_tunable(s: &str) -> Result<Tunable, String> {
    if s == "optimize" {
        return Ok(Tunable::Optimize);
    }
    s.parse().map(Tunable::Fixed).map_err(|_| format!("expected a number or \"optimize\", found \"{s}\""))
}

enum Failure {
    Input(String),
    Infeasible(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_infeasible() {
            Failure::Infeasible(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

type CmdResult = Result<String, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let emitted = match &cli.command {
        Command::Rate(o) => cmd_rate(&cli, o),
        Command::Optimize { vars, overrides } => cmd_optimize(&cli, vars, overrides),
        Command::Simulate { trials, raw, overrides } => cmd_simulate(&cli, *trials, raw.as_deref(), overrides),
        Command::Reproduce { target } => cmd_reproduce(&cli, *target),
        Command::Extract {
            raw,
            certificate,
            seed_file,
            eps_ext,
            write_seed,
        } => cmd_extract(&cli, raw, certificate, seed_file, *eps_ext, *write_seed),
    }
    .and_then(|text| {
        // extract writes its bits to --out itself; its summary goes to stdout
        let out = match cli.command {
            Command::Extract { .. } => None,
            _ => cli.out.as_deref(),
        };
        emit(out, &text)
    });
    match emitted {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Infeasible(msg)) => {
            eprintln!("infeasible: {msg}");
            ExitCode::from(3)
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    s
}

fn load_params(cli: &Cli) -> Result<ProtocolParams, Failure> {
    match &cli.profile {
        None => Ok(ProtocolParams::desk(3600.0)),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
        }
    }
}

fn scenario(cli: &Cli, o: &Overrides) -> Result<Scenario, Failure> {
    let mut p = load_params(cli)?;
    if let Some(t) = o.chunk_time {
        p.chunk_time = Some(t);
        p.rounds = None;
    }
    if let Some(n) = o.rounds {
        p.rounds = Some(n);
        p.chunk_time = None;
    }
    if let Some(g) = o.gamma {
        p.gamma = g;
    }
    if let Some(b) = o.beta {
        p.beta = b;
    }
    if let Some(v) = o.switch_delay {
        p.switch_delay = v;
    }
    if let Some(v) = o.eps_s {
        p.eps_s = v;
    }
    if let Some(v) = o.p_omega {
        p.p_omega = v;
    }
    if let Some(v) = o.event_rate {
        p.event_rate = v;
    }
    if o.visibility.is_some() {
        p.visibility = o.visibility;
    }
    let base = cli.profile.as_deref().and_then(Path::parent);
    Ok(Scenario::resolve(p, base)?)
}

fn rate_text(r: &RateReport) -> String {
    let c = &r.certificate;
    let l = &r.ledger;
    let mut s = String::new();
    let mut line = |k: &str, v: String| writeln!(s, "{k:<18}{v}").expect("string write");
    line("rounds", r.rounds.to_string());
    line("gamma", r.gamma.to_string());
    line("beta", r.beta.to_string());
    line("anchor", r.anchor.to_string());
    line("delta_tol", r.delta_tol.to_string());
    line("s_tol", r.s_tol.to_string());
    line("first_order", c.first_order.to_string());
    line("variance_term", c.variance_term.to_string());
    line("k_term", c.k_term.to_string());
    line("epsilon_term", c.epsilon_term.to_string());
    line("bound", c.bound.to_string());
    line("certified_bits", c.certified_bits.to_string());
    line("consumed_bits", l.consumed_bits.to_string());
    line("net_bits", l.net_bits.to_string());
    line("expansion_ratio", l.expansion_ratio.map_or("n/a".into(), |x| x.to_string()));
    line("wall_time_s", l.wall_time.to_string());
    line("net_rate_bps", r.net_rate.to_string());
    if l.net_bits < 0.0 {
        line("status", "NEGATIVE NET RATE".into());
    }
    s
}

fn finish_rate(cli: &Cli, r: RateReport) -> CmdResult {
    if !r.feasible {
        return Err(Failure::Infeasible("no operating point yields a valid certificate".into()));
    }
    if r.ledger.net_bits < 0.0 {
        eprintln!("warning: net rate is negative ({} bits/s)", r.net_rate);
    }
    Ok(if cli.json { to_json(&r) } else { rate_text(&r) })
}

fn cmd_rate(cli: &Cli, o: &Overrides) -> CmdResult {
    let scn = scenario(cli, o)?;
    finish_rate(cli, eat::rate(&scn)?)
}

fn cmd_optimize(cli: &Cli, vars: &[Var], o: &Overrides) -> CmdResult {
    let scn = scenario(cli, o)?;
    let mut free = FreeVars::default();
    for v in vars {
        match v {
            Var::Gamma => free.gamma = true,
            Var::Beta => free.beta = true,
            Var::Anchor => free.anchor = true,
        }
    }
    finish_rate(cli, eat::optimize(&scn, free)?)
}

#[derive(Serialize)]
struct SimulationOutput {
    gamma: f64,
    #[serde(flatten)]
    summary: sim::TrialSummary,
}

fn cmd_simulate(cli: &Cli, trials: u64, raw: Option<&Path>, o: &Overrides) -> CmdResult {
    if trials == 0 {
        return Err(Failure::Input("--trials must be positive".into()));
    }
    if raw.is_some() && trials != 1 {
        return Err(Failure::Input("--raw needs a single trial".into()));
    }
    let scn = scenario(cli, o)?;
    let gamma = match scn.params.gamma {
        Tunable::Fixed(g) => g,
        Tunable::Optimize => {
            let r = eat::optimize(&scn, FreeVars { gamma: true, beta: true, anchor: false })?;
            if !r.feasible {
                return Err(Failure::Infeasible("no test probability yields a valid certificate".into()));
            }
            r.gamma
        }
    };
    let mut cfg = SimConfig::from_scenario(&scn, gamma)?;
    cfg.collect_raw = raw.is_some();
    let model = sim::model_for(&scn)?;

    let results: Vec<SimulationResult> = if trials == 1 {
        vec![sim::run_protocol(&cfg, &scn.expression, &model, cli.seed)]
    } else {
        sim::run_trials(&cfg, &scn.expression, &model, trials, cli.seed)
    };
    if let Some(path) = raw {
        let r = &results[0];
        r.raw_bits.write_file(path)?;
        let sidecar = sidecar_path(path);
        fs::write(&sidecar, to_json(r)).map_err(|e| Failure::Input(format!("{}: {e}", sidecar.display())))?;
    }

    let out = SimulationOutput {
        gamma,
        summary: sim::summarize(&results, cli.seed),
    };
    if cli.json {
        return Ok(to_json(&out));
    }
    let s = &out.summary;
    let mut text = String::new();
    let mut line = |k: &str, v: String| writeln!(text, "{k:<18}{v}").expect("string write");
    line("trials", s.trials.to_string());
    line("seed", s.seed.to_string());
    line("rounds", s.rounds.to_string());
    line("gamma", gamma.to_string());
    line("threshold", s.threshold.to_string());
    line("abort_fraction", s.abort_fraction.to_string());
    line("no_test_data", s.no_test_data.to_string());
    line("mean_s_hat", s.mean_s_hat.map_or("n/a".into(), |x| x.to_string()));
    line("mean_switch_rate", s.mean_switch_rate.to_string());
    Ok(text)
}

fn sidecar_path(raw: &Path) -> PathBuf {
    let mut s = raw.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn read_certified_bits(path: &Path) -> Result<f64, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    v.get("certified_bits")
        .or_else(|| v.get("certificate").and_then(|c| c.get("certified_bits")))
        .and_then(serde_json::Value::as_f64)
        .ok_or_else(|| Failure::Input(format!("{}: no certified_bits field", path.display())))
}

fn raw_bit_count(raw: &Path) -> Result<Option<usize>, Failure> {
    let sidecar = sidecar_path(raw);
    if !sidecar.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&sidecar).map_err(|e| Failure::Input(format!("{}: {e}", sidecar.display())))?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", sidecar.display())))?;
    let n = v
        .get("raw_bit_count")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Failure::Input(format!("{}: no raw_bit_count field", sidecar.display())))?;
    Ok(Some(n as usize))
}

#[derive(Serialize)]
struct ExtractOutput {
    n_in: usize,
    m_out: usize,
    eps_ext: f64,
}

fn cmd_extract(cli: &Cli, raw: &Path, certificate: &Path, seed_file: &Path, eps_ext: f64, write_seed: bool) -> CmdResult {
    let Some(out_path) = cli.out.as_deref() else {
        return Err(Failure::Input("extract needs --out for the output bits".into()));
    };
    let certified = read_certified_bits(certificate)?;
    let n_in = raw_bit_count(raw)?;
    let raw_bits = PackedBits::read_file(raw, n_in)?;
    let n_in = raw_bits.len();
    let m_out = extractor::output_length(certified, eps_ext)?;
    if m_out > n_in {
        return Err(Failure::Input(format!(
            "certificate allows {m_out} output bits but the raw file holds only {n_in}"
        )));
    }

    let extracted = if m_out == 0 || n_in == 0 {
        eprintln!("warning: certified entropy leaves no output at eps_ext = {eps_ext}; writing an empty file");
        PackedBits::new()
    } else {
        let seed = if write_seed {
            let seed = ToeplitzSeed::generate(n_in, m_out, &mut sim::stream_rng(cli.seed, 0))?;
            seed.bits().write_file(seed_file)?;
            seed
        } else {
            let bits = PackedBits::read_file(seed_file, Some(ToeplitzSeed::required_len(n_in, m_out)))?;
            ToeplitzSeed::new(bits, n_in, m_out)?
        };
        extractor::extract(&raw_bits, &seed)?
    };
    extracted.write_file(out_path)?;

    let info = ExtractOutput { n_in, m_out, eps_ext };
    Ok(if cli.json {
        to_json(&info)
    } else {
        format!("n_in     {n_in}\nm_out    {m_out}\neps_ext  {eps_ext:e}\n")
    })
}

fn cmd_reproduce(cli: &Cli, target: Target) -> CmdResult {
    let base = match &cli.profile {
        None => report::desk_scenario(),
        Some(_) => scenario(cli, &Overrides::default())?,
    };
    let rep = report::reproduce(target, &base)?;
    Ok(if cli.json { rep.to_json() + "\n" } else { rep.to_csv()? })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_documents_csv_headers() {
        assert!(REPRODUCE_HELP.contains(report::TABLE_HEADER));
        assert!(REPRODUCE_HELP.contains(report::SWEEP_HEADER));
        for t in Target::ALL {
            assert!(REPRODUCE_HELP.contains(&format!("  {:<8}{}", t.name(), t.description())));
        }
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
