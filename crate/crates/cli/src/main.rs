use std::fs::File;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use metric_elicit::experiments::{
    fair_ranking_trial, quadratic_ranking_trial, random_linear, run_trials, structure_ranking_trial, Mode,
    RankingScore, TrialConfig, TrialRecord,
};
use metric_elicit::fair::{fair_qpme, FairConfig};
use metric_elicit::lpme::{lpme, LpmeConfig};
use metric_elicit::metrics::{random_fair, random_quadratic, GroupModel, Metric, QuadraticMetric};
use metric_elicit::oracle::{with_transcript, FairPreference, NoiseMode, SimulatedOracle};
use metric_elicit::qpme::{qpme, QpmeConfig};
use metric_elicit::session::SessionConfig;
use metric_elicit::{RateKind, Sphere};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "metric-elicit", version, about = "Elicit performance metrics from pairwise preferences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Linear,
    Quadratic,
    Fair,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Linear => Mode::Linear,
            ModeArg::Quadratic => Mode::Quadratic,
            ModeArg::Fair => Mode::Fair,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OracleArg {
    Simulated,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseModeArg {
    Truthful,
    Flip,
    SeededRandom,
}

impl From<NoiseModeArg> for NoiseMode {
    fn from(m: NoiseModeArg) -> Self {
        match m {
            NoiseModeArg::Truthful => NoiseMode::Truthful,
            NoiseModeArg::Flip => NoiseMode::Flip,
            NoiseModeArg::SeededRandom => NoiseMode::SeededRandom,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Elicit one metric from a simulated oracle and write it as JSON.
    Elicit {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(short, long, default_value_t = 2)]
        k: usize,
        /// Number of groups (fair mode).
        #[arg(short, long, default_value_t = 2)]
        m: usize,
        #[arg(long, default_value_t = 0.2)]
        rho: f64,
        /// Small-sphere radius; a tenth of rho by default.
        #[arg(long)]
        varrho: Option<f64>,
        #[arg(long, default_value_t = 1e-2)]
        epsilon: f64,
        #[arg(long, value_enum, default_value = "simulated")]
        oracle: OracleArg,
        /// Oracle metric JSON; a seeded random metric is drawn when absent.
        #[arg(long)]
        metric: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trade-off of the random fair oracle metric.
        #[arg(long, default_value_t = 0.5)]
        lambda: f64,
        /// Also run the standalone trade-off search (fair mode).
        #[arg(long)]
        lambda_check: bool,
        /// Group prevalences as a JSON array of per-group vectors (fair mode).
        #[arg(long)]
        tau: Option<PathBuf>,
        /// Writes every query and answer as JSON lines.
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Oracle noise band.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, value_enum, default_value = "flip")]
        noise_mode: NoiseModeArg,
        /// Destination of the elicited metric; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reproduce the simulated studies as CSV.
    #[command(group(ArgGroup::new("study").required(true).args(["figure", "table"])))]
    Benchmark {
        #[arg(long, value_parser = ["4", "6", "7"])]
        figure: Option<String>,
        #[arg(long, value_parser = ["1", "2", "3"])]
        table: Option<String>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1e-2)]
        epsilon: f64,
        /// Largest class (and group) count swept.
        #[arg(long, default_value_t = 5)]
        max_k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve elicitation sessions over HTTP for a person to answer.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, value_enum, default_value = "quadratic")]
        mode: ModeArg,
        #[arg(short, long, default_value_t = 2)]
        k: usize,
        #[arg(short, long)]
        m: Option<usize>,
        /// Comma-separated class priors used to render queries.
        #[arg(long, value_delimiter = ',')]
        priors: Option<Vec<f64>>,
        #[arg(long, default_value_t = metric_elicit::session::HUMAN_EPSILON)]
        epsilon: f64,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Elicit {
            mode,
            k,
            m,
            rho,
            varrho,
            epsilon,
            oracle: OracleArg::Simulated,
            metric,
            seed,
            lambda,
            lambda_check,
            tau,
            transcript,
            noise,
            noise_mode,
            out,
        } => {
            let sphere = Sphere::new(vec![1.0 / k as f64; k], rho)?;
            let inner = varrho.unwrap_or(rho / 10.0);
            let truth = match metric {
                Some(path) => Some(Metric::load(&path).with_context(|| format!("reading {}", path.display()))?),
                None => None,
            };
            let noise_mode = NoiseMode::from(noise_mode);
            let (elicited, queries, log) = match mode {
                ModeArg::Linear | ModeArg::Quadratic => {
                    let truth = match truth {
                        Some(Metric::Quadratic(q)) => q,
                        Some(Metric::Fair(..)) => bail!("a fair metric needs --mode fair"),
                        None if matches!(mode, ModeArg::Linear) => random_linear(k, seed),
                        None => random_quadratic(RateKind::Diagonal(k), seed, 1e-2)?,
                    };
                    let sim = SimulatedOracle::with_noise(truth.clone(), noise, noise_mode, seed)?;
                    let (mut o, log) = with_transcript(sim);
                    let (elicited, queries) = if matches!(mode, ModeArg::Linear) {
                        let out = lpme(&LpmeConfig::new(sphere, epsilon)?, &mut o)?;
                        (QuadraticMetric::linear(out.weights), out.queries)
                    } else {
                        let out = qpme(&QpmeConfig::with_inner_radius(sphere, inner, epsilon)?, &mut o)?;
                        (out.metric, out.queries)
                    };
                    let (ea, eb) = truth.error_to(&elicited);
                    eprintln!("queries {queries}  |a - a^| {ea:.5}  |B - B^|_F {eb:.5}");
                    (Metric::Quadratic(elicited), queries, log)
                }
                ModeArg::Fair => {
                    let (truth, given_groups) = match truth {
                        Some(Metric::Fair(f, gm)) => (f, gm),
                        Some(Metric::Quadratic(_)) => bail!("--mode fair needs a fair metric"),
                        None => (random_fair(RateKind::Diagonal(k), m, lambda, seed, 1e-2)?, None),
                    };
                    let groups = match (tau, given_groups) {
                        (Some(path), _) => load_tau(&path)?,
                        (None, Some(gm)) => gm,
                        (None, None) => GroupModel::uniform(k, truth.m),
                    };
                    let pref = FairPreference { metric: truth.clone(), groups: groups.clone() };
                    let (mut o, log) = with_transcript(SimulatedOracle::with_noise(pref, noise, noise_mode, seed)?);
                    let cfg = FairConfig { qpme: QpmeConfig::with_inner_radius(sphere, inner, epsilon)?, lambda_check };
                    let out = fair_qpme(&cfg, &mut o, &groups)?;
                    let (ea, eb, el) = truth.error_to(&out.metric);
                    eprintln!(
                        "queries {}  |a - a^| {ea:.5}  sum |B - B^|_F {eb:.5}  |lambda - lambda^| {el:.5}",
                        out.queries
                    );
                    if let Some(l) = out.lambda_search {
                        eprintln!("trade-off search: {l:.5} (true {:.5})", truth.lambda);
                    }
                    (Metric::Fair(out.metric, Some(groups)), out.queries, log)
                }
            };
            debug_assert_eq!(queries, log.len());
            if let Some(path) = transcript {
                log.save_jsonl(&path).with_context(|| format!("writing {}", path.display()))?;
            }
            let json = elicited.to_json()?;
            match out {
                Some(path) => std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?,
                None => writeln!(std::io::stdout().lock(), "{json}")?,
            }
        }
        Command::Benchmark { figure, table, trials, epsilon, max_k, seed, out } => {
            if max_k < 2 {
                bail!("--max-k must be at least 2");
            }
            let sink: Box<dyn Write> = match &out {
                Some(path) => Box::new(File::create(path).with_context(|| format!("creating {}", path.display()))?),
                None => Box::new(std::io::stdout()),
            };
            let mut csv = csv::Writer::from_writer(sink);
            let base = |mode: Mode, space: RateKind| TrialConfig { trials, epsilon, seed, ..TrialConfig::new(mode, space) };
            match (figure.as_deref(), table.as_deref()) {
                (Some("4"), _) | (_, Some("1")) => {
                    let mut configs: Vec<TrialConfig> =
                        (2..=max_k).map(|k| base(Mode::Quadratic, RateKind::Diagonal(k))).collect();
                    for k in 2..=max_k {
                        for m in 2..=max_k {
                            configs.push(TrialConfig { groups: m, ..base(Mode::Fair, RateKind::Diagonal(k)) });
                        }
                    }
                    if table.is_some() {
                        for cfg in &configs {
                            csv.serialize(summarize(cfg)?)?;
                        }
                    } else {
                        for cfg in &configs {
                            write_records(&mut csv, &run_trials(cfg)?.records)?;
                        }
                    }
                }
                (Some("6"), _) => {
                    for k in 2..=max_k {
                        write_records(&mut csv, &run_trials(&base(Mode::Quadratic, RateKind::Diagonal(k)))?.records)?;
                    }
                }
                (Some("7"), _) => {
                    for floor in [1e-2, 0.0] {
                        for k in 2..=max_k {
                            let cfg = TrialConfig { floor, ..base(Mode::Quadratic, RateKind::Diagonal(k)) };
                            write_records(&mut csv, &run_trials(&cfg)?.records)?;
                        }
                    }
                }
                (_, Some("2")) => {
                    for t in 0..trials as u64 {
                        let s = seed.wrapping_add(t);
                        write_ranking(&mut csv, "fair", 2, s, fair_ranking_trial(2, 2, epsilon, s))?;
                    }
                }
                (_, Some("3")) => {
                    for k in [2usize, 3] {
                        for t in 0..trials as u64 {
                            let s = seed.wrapping_add(t);
                            write_ranking(&mut csv, "quadratic", k, s, quadratic_ranking_trial(k, epsilon, s))?;
                            write_ranking(&mut csv, "structure", k, s, structure_ranking_trial(k, epsilon, s))?;
                        }
                    }
                }
                _ => unreachable!("clap restricts the study choices"),
            }
            csv.flush()?;
        }
        Command::Serve { port, mode, k, m, priors, epsilon } => {
            let mut defaults = SessionConfig::new(mode.into(), k);
            if m.is_some() {
                defaults.m = m;
            }
            defaults.priors = priors;
            defaults.epsilon = epsilon;
            defaults.validate()?;
            let addr = SocketAddr::from(([127, 0, 0, 1], port));
            eprintln!("listening on http://{addr}");
            tokio::runtime::Runtime::new()?.block_on(metric_elicit_server::serve(addr, defaults))?;
        }
    }
    Ok(())
}

fn load_tau(path: &Path) -> Result<GroupModel> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let tau: Vec<Vec<f64>> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(GroupModel::new(tau)?)
}

fn write_records<W: Write>(csv: &mut csv::Writer<W>, records: &[TrialRecord]) -> Result<()> {
    for r in records {
        csv.serialize(r)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SummaryRow {
    mode: Mode,
    k: usize,
    m: Option<usize>,
    epsilon: f64,
    trials: usize,
    succeeded: usize,
    mean_queries: Option<f64>,
    mean_err_a: Option<f64>,
    mean_err_b: Option<f64>,
    mean_err_lambda: Option<f64>,
}

fn summarize(cfg: &TrialConfig) -> Result<SummaryRow> {
    let rep = run_trials(cfg)?;
    Ok(SummaryRow {
        mode: cfg.mode,
        k: cfg.space.classes(),
        m: (cfg.mode == Mode::Fair).then_some(cfg.groups),
        epsilon: cfg.epsilon,
        trials: cfg.trials,
        succeeded: rep.succeeded(),
        mean_queries: rep.mean_queries(),
        mean_err_a: rep.mean_err_a(),
        mean_err_b: rep.mean_err_b(),
        mean_err_lambda: rep.mean_of(|r| r.err_lambda),
    })
}

#[derive(Serialize)]
struct RankingRow<'a> {
    study: &'a str,
    k: usize,
    seed: u64,
    method: &'a str,
    ndcg: Option<f64>,
    kendall_tau: Option<f64>,
    failure: Option<String>,
}

fn write_ranking<W: Write>(
    csv: &mut csv::Writer<W>,
    study: &str,
    k: usize,
    seed: u64,
    scores: metric_elicit::Result<Vec<RankingScore>>,
) -> Result<()> {
    match scores {
        Ok(scores) => {
            for s in scores {
                let row = RankingRow {
                    study,
                    k,
                    seed,
                    method: &s.name,
                    ndcg: Some(s.ndcg),
                    kendall_tau: Some(s.kendall_tau),
                    failure: None,
                };
                csv.serialize(row)?;
            }
        }
        Err(e) => csv.serialize(RankingRow {
            study,
            k,
            seed,
            method: "",
            ndcg: None,
            kendall_tau: None,
            failure: Some(e.to_string()),
        })?,
    }
    Ok(())
}
