//! Command-line front end: reproduces the reference tables and emits curve
//! and threshold datasets as CSV or JSON.
//!
//! Exit codes: 0 success, 1 validation failure, 2 budget refusal,
//! 3 reproduction FAIL (a `tables` cell outside tolerance).

mod tables;

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use wnrma_core::binary_image::{self, BinaryImageConfig};
use wnrma_core::bounds;
use wnrma_core::enumerators::{self, BruteEncoder, EnsembleParams, EnumeratorError};
use wnrma_core::exitsim::{self, AprioriModel, McBudget, WeighterMode};
use wnrma_core::galois::FieldSpec;
use wnrma_core::spectra::{self, SpectralConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EncoderKind {
    /// 1/(1+D) accumulator
    Acc,
    /// 1+D feedforward encoder
    Ff,
    /// Rate-1/n repetition code
    Rep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Erasure,
    Qsc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum WeighterArg {
    Random,
    Ones,
}

#[derive(Parser)]
#[command(
    name = "wnrma",
    version,
    about = "Weight enumerators, asymptotic spectra, bounds and EXIT analysis for weighted nonbinary repeat multiple-accumulate ensembles"
)]
struct Cli {
    /// Output format
    #[arg(long, global = true, value_enum)]
    format: Option<OutputFormat>,
    /// Output path (stdout when omitted)
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Master RNG seed for Monte-Carlo commands
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (also WNRMA_JOBS)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Flat key=value config file; flags take precedence over its entries
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct EnsembleArgs {
    #[arg(long)]
    q: u32,
    #[arg(long)]
    n: u32,
    #[arg(long = "L", visible_alias = "l")]
    l: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Exact input-output weight enumerator of one encoder
    Iowe {
        #[arg(long)]
        q: u32,
        /// Which encoder to enumerate
        #[arg(long, value_enum)]
        encoder: EncoderKind,
        /// Block length for acc/ff
        #[arg(long = "N")]
        block_len: Option<usize>,
        /// Repetition factor (rep only)
        #[arg(long)]
        n: Option<u32>,
        /// Information length (rep only)
        #[arg(long = "K")]
        k: Option<usize>,
        /// Cross-check against brute-force enumeration and report PASS/FAIL
        #[arg(long)]
        oracle: bool,
    },
    /// Asymptotic spectral shape curve r(rho)
    Spectrum {
        #[command(flatten)]
        ens: EnsembleArgs,
        /// Single evaluation point; otherwise the grid below
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        rho_start: f64,
        #[arg(long, default_value_t = 1.0)]
        rho_stop: f64,
        #[arg(long, default_value_t = 0.01)]
        rho_step: f64,
    },
    /// Minimum-distance growth rate coefficient rho0
    Rho0 {
        #[command(flatten)]
        ens: EnsembleArgs,
    },
    /// Binary-image spectral shape curve r_b(delta)
    BinarySpectrum {
        #[command(flatten)]
        ens: EnsembleArgs,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value_t = 0.001)]
        delta_start: f64,
        #[arg(long, default_value_t = 0.999)]
        delta_stop: f64,
        #[arg(long, default_value_t = 0.001)]
        delta_step: f64,
    },
    /// Binary-image growth rate coefficient delta0
    Delta0 {
        #[command(flatten)]
        ens: EnsembleArgs,
    },
    /// Closed-form reference bounds
    Bounds {
        #[command(subcommand)]
        which: BoundsCommand,
    },
    /// Monte-Carlo EXIT analysis on the q-ary symmetric channel
    Exit {
        #[command(subcommand)]
        which: ExitCommand,
    },
    /// Reproduce a reference table and score every cell
    Tables {
        /// One of I, II, III, IV, V, VI, VII
        table: String,
        /// Restrict to one repetition-factor row (3, 5 or 10)
        #[arg(long)]
        row: Option<u32>,
        /// Monte-Carlo block length (table VII)
        #[arg(long)]
        block_len: Option<usize>,
        /// Monte-Carlo blocks per EXIT point (table VII)
        #[arg(long)]
        blocks: Option<usize>,
        /// Score tolerance for table VII thresholds
        #[arg(long, default_value_t = 0.01)]
        exit_tolerance: f64,
    },
}

#[derive(Subcommand)]
enum BoundsCommand {
    /// Nonbinary (or binary, q=2) Gilbert-Varshamov bound
    Gvb {
        /// Rate as a fraction like 1/3 or a decimal
        #[arg(long, value_parser = parse_rate)]
        rate: f64,
        #[arg(long)]
        q: u32,
    },
    /// QSC capacity at p, or the p matching a target normalized rate
    Capacity {
        #[arg(long)]
        q: u32,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, value_parser = parse_rate)]
        rate: Option<f64>,
    },
    /// Divsalar ML-threshold bound from a curve file (CSV rho,r or delta,r_b)
    Divsalar {
        #[arg(long)]
        from_curve: PathBuf,
        #[arg(long, value_parser = parse_rate)]
        rate: f64,
    },
    /// Binary-input AWGN Shannon limit
    Shannon {
        #[arg(long, value_parser = parse_rate)]
        rate: f64,
    },
}

#[derive(Subcommand)]
enum ExitCommand {
    /// Sample one EXIT transfer curve
    Curve {
        #[command(flatten)]
        ens: EnsembleArgs,
        /// Inner (channel-facing) curve at this error probability;
        /// otherwise the outer curve is sampled
        #[arg(long)]
        p: Option<f64>,
        #[arg(long, default_value_t = 0.05)]
        ia_step: f64,
        #[arg(long)]
        block_len: Option<usize>,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long, value_enum, default_value_t = ModelArg::Erasure)]
        model: ModelArg,
        #[arg(long, value_enum, default_value_t = WeighterArg::Random)]
        weighter: WeighterArg,
    },
    /// Bisection search for the convergence threshold p*
    Threshold {
        #[command(flatten)]
        ens: EnsembleArgs,
        #[arg(long)]
        block_len: Option<usize>,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long, value_enum, default_value_t = ModelArg::Erasure)]
        model: ModelArg,
        #[arg(long, value_enum, default_value_t = WeighterArg::Random)]
        weighter: WeighterArg,
    },
}

fn parse_rate(s: &str) -> Result<f64, String> {
    if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num.trim().parse().map_err(|_| format!("bad rate {s}"))?;
        let d: f64 = den.trim().parse().map_err(|_| format!("bad rate {s}"))?;
        if d == 0.0 {
            return Err("rate denominator is zero".into());
        }
        Ok(n / d)
    } else {
        s.trim().parse().map_err(|_| format!("bad rate {s}"))
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(msg: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: msg.into(),
        }
    }
    fn budget(msg: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: msg.into(),
        }
    }
}

impl From<EnumeratorError> for Failure {
    fn from(e: EnumeratorError) -> Self {
        match e {
            EnumeratorError::BudgetExceeded { .. } => Failure::budget(e.to_string()),
            other => Failure::validation(other.to_string()),
        }
    }
}

/// Knobs resolvable from (in order) flags, environment, config file,
/// defaults. The config file is flat `key = value` lines with `#` comments;
/// recognized keys: format, seed, jobs, oracle_budget, cwe_budget,
/// block_len, blocks.
struct Settings {
    format: OutputFormat,
    output: Option<PathBuf>,
    seed: u64,
    oracle_budget: Option<u128>,
    block_len: Option<usize>,
    blocks: Option<usize>,
}

fn load_config(path: &PathBuf) -> Result<HashMap<String, String>, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::validation(format!("cannot read config {path:?}: {e}")))?;
    let mut map = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Failure::validation(format!(
                "config line {} is not key = value: {line}",
                lineno + 1
            )));
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn resolve_settings(cli: &Cli) -> Result<Settings, Failure> {
    let cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => HashMap::new(),
    };
    let parse_key = |key: &str| -> Option<&String> { cfg.get(key) };
    let format = cli
        .format
        .or_else(|| match parse_key("format").map(|s| s.as_str()) {
            Some("csv") => Some(OutputFormat::Csv),
            Some("json") => Some(OutputFormat::Json),
            _ => None,
        })
        .unwrap_or(OutputFormat::Csv);
    let output = cli
        .output
        .clone()
        .or_else(|| parse_key("output").map(PathBuf::from));
    let seed = cli
        .seed
        .or_else(|| parse_key("seed").and_then(|s| s.parse().ok()))
        .unwrap_or(1);
    let env_u128 = |name: &str| std::env::var(name).ok().and_then(|v| v.parse::<u128>().ok());
    let oracle_budget = env_u128("WNRMA_ORACLE_BUDGET")
        .or_else(|| parse_key("oracle_budget").and_then(|s| s.parse().ok()));
    let block_len = parse_key("block_len").and_then(|s| s.parse().ok());
    let blocks = parse_key("blocks").and_then(|s| s.parse().ok());
    let jobs = cli
        .jobs
        .or_else(|| std::env::var("WNRMA_JOBS").ok().and_then(|v| v.parse().ok()))
        .or_else(|| parse_key("jobs").and_then(|s| s.parse().ok()));
    if let Some(j) = jobs {
        // delegate parallelism to the compute modules through the global pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global();
    }
    Ok(Settings {
        format,
        output,
        seed,
        oracle_budget,
        block_len,
        blocks,
    })
}

fn emit(settings: &Settings, text: String) -> Result<(), Failure> {
    match &settings.output {
        Some(path) => fs::write(path, text)
            .map_err(|e| Failure::validation(format!("cannot write output: {e}"))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn growth_csv(g: &spectra::GrowthRate, kind: &str, q: u32, n: u32, l: u32) -> String {
    format!(
        "q,n,L,{kind},bracket_lo,bracket_hi,evals\n{q},{n},{l},{},{},{},{}\n",
        g.rho0, g.bracket.0, g.bracket.1, g.evals
    )
}

fn spectral_config(ens: &EnsembleArgs) -> Result<SpectralConfig, Failure> {
    SpectralConfig::new(ens.q, ens.n, ens.l).map_err(|e| Failure::validation(e.to_string()))
}

fn run(cli: &Cli, settings: &Settings) -> Result<(), Failure> {
    match &cli.command {
        Command::Iowe {
            q,
            encoder,
            block_len,
            n,
            k,
            oracle,
        } => {
            let (table, enc, params) = match encoder {
                EncoderKind::Acc | EncoderKind::Ff => {
                    let n_len = block_len.ok_or_else(|| {
                        Failure::validation("acc/ff enumerators need --N <block length>")
                    })?;
                    if *q < 2 || n_len == 0 {
                        return Err(Failure::validation("need q >= 2 and N >= 1"));
                    }
                    let t = if matches!(encoder, EncoderKind::Acc) {
                        enumerators::accumulator_iowe(*q, n_len)
                    } else {
                        enumerators::feedforward_iowe(*q, n_len)
                    };
                    let enc = if matches!(encoder, EncoderKind::Acc) {
                        BruteEncoder::Accumulator { n_len }
                    } else {
                        BruteEncoder::Feedforward { n_len }
                    };
                    (t, enc, None)
                }
                EncoderKind::Rep => {
                    let n = n.ok_or_else(|| Failure::validation("rep needs --n"))?;
                    let k = k.ok_or_else(|| Failure::validation("rep needs --K"))?;
                    let t = enumerators::repetition_iowe(*q, n, k);
                    (
                        t,
                        BruteEncoder::Repetition { n, k },
                        EnsembleParams::new(*q, n, 1, k).ok(),
                    )
                }
            };
            if *oracle {
                let field = FieldSpec::new(*q as u64)
                    .map_err(|e| Failure::validation(e.to_string()))?;
                let brute = enumerators::brute_force_iowe(enc, &field, settings.oracle_budget)?;
                let ok = brute == table;
                eprintln!("oracle: {}", if ok { "PASS" } else { "FAIL" });
                if !ok {
                    return Err(Failure {
                        code: 3,
                        message: "analytic table differs from brute force".into(),
                    });
                }
            }
            let text = match settings.format {
                OutputFormat::Csv => table.to_csv(),
                OutputFormat::Json => {
                    serde_json::to_string_pretty(&table.to_json(params.as_ref())).unwrap() + "\n"
                }
            };
            emit(settings, text)
        }
        Command::Spectrum {
            ens,
            rho,
            rho_start,
            rho_stop,
            rho_step,
        } => {
            let config = spectral_config(ens)?;
            let rhos: Vec<f64> = match rho {
                Some(r) => vec![*r],
                None => {
                    let mut v = Vec::new();
                    let mut x = *rho_start;
                    while x <= rho_stop + 1e-12 {
                        v.push(x.min(1.0));
                        x += rho_step;
                    }
                    v
                }
            };
            if rhos.iter().any(|r| !(0.0..=1.0).contains(r)) {
                return Err(Failure::validation("rho values must lie in [0, 1]"));
            }
            use rayon::prelude::*;
            let points: Vec<_> = rhos
                .par_iter()
                .map(|&r| spectra::spectral_shape(&config, r))
                .collect();
            let text = match settings.format {
                OutputFormat::Csv => spectra::curve_csv(&points),
                OutputFormat::Json => {
                    serde_json::to_string_pretty(&serde_json::json!({
                        "q": ens.q, "n": ens.n, "L": ens.l,
                        "points": points,
                    }))
                    .unwrap()
                        + "\n"
                }
            };
            emit(settings, text)
        }
        Command::Rho0 { ens } => {
            let config = spectral_config(ens)?;
            let g = spectra::rho0(&config);
            let text = match settings.format {
                OutputFormat::Csv => growth_csv(&g, "rho0", ens.q, ens.n, ens.l),
                OutputFormat::Json => {
                    serde_json::to_string_pretty(&g.to_json(ens.q, ens.n, ens.l)).unwrap() + "\n"
                }
            };
            emit(settings, text)
        }
        Command::BinarySpectrum {
            ens,
            delta,
            delta_start,
            delta_stop,
            delta_step,
        } => {
            let base = spectral_config(ens)?;
            let config =
                BinaryImageConfig::new(base).map_err(|e| Failure::validation(e.to_string()))?;
            let ev = spectra::shared_evaluator(&base);
            let shape = |rho: f64| ev.eval(rho);
            let deltas: Vec<f64> = match delta {
                Some(d) => vec![*d],
                None => {
                    let mut v = Vec::new();
                    let mut x = *delta_start;
                    while x <= delta_stop + 1e-12 {
                        v.push(x.min(1.0));
                        x += delta_step;
                    }
                    v
                }
            };
            if deltas.iter().any(|d| !(0.0..=1.0).contains(d)) {
                return Err(Failure::validation("delta values must lie in [0, 1]"));
            }
            let points: Vec<_> = deltas
                .iter()
                .map(|&d| binary_image::binary_spectral_shape(&config, d, &shape))
                .collect();
            let text = match settings.format {
                OutputFormat::Csv => binary_image::binary_curve_csv(&points),
                OutputFormat::Json => {
                    serde_json::to_string_pretty(&serde_json::json!({
                        "q": ens.q, "n": ens.n, "L": ens.l, "m": config.m,
                        "points": points,
                    }))
                    .unwrap()
                        + "\n"
                }
            };
            emit(settings, text)
        }
        Command::Delta0 { ens } => {
            let base = spectral_config(ens)?;
            let config =
                BinaryImageConfig::new(base).map_err(|e| Failure::validation(e.to_string()))?;
            let ev = spectra::shared_evaluator(&base);
            let g = binary_image::delta0(&config, &|rho| ev.eval(rho));
            let text = match settings.format {
                OutputFormat::Csv => growth_csv(&g, "delta0", ens.q, ens.n, ens.l),
                OutputFormat::Json => {
                    serde_json::to_string_pretty(&g.to_json(ens.q, ens.n, ens.l)).unwrap() + "\n"
                }
            };
            emit(settings, text)
        }
        Command::Bounds { which } => {
            let (name, inputs, value, tolerance) = match which {
                BoundsCommand::Gvb { rate, q } => {
                    let v = bounds::gvb_nonbinary(*rate, *q)
                        .map_err(|e| Failure::validation(e.to_string()))?;
                    (
                        "gvb",
                        serde_json::json!({"rate": rate, "q": q}),
                        v,
                        1e-10,
                    )
                }
                BoundsCommand::Capacity { q, p, rate } => match (p, rate) {
                    (Some(p), None) => {
                        let (c, norm) = bounds::qsc_capacity(*p, *q)
                            .map_err(|e| Failure::validation(e.to_string()))?;
                        let text = match settings.format {
                            OutputFormat::Csv => {
                                format!("q,p,capacity_bits,normalized\n{q},{p},{c},{norm}\n")
                            }
                            OutputFormat::Json => {
                                serde_json::to_string_pretty(&serde_json::json!({
                                    "bound": "qsc_capacity",
                                    "inputs": {"q": q, "p": p},
                                    "value": c,
                                    "normalized": norm,
                                    "tolerance": 1e-10,
                                }))
                                .unwrap()
                                    + "\n"
                            }
                        };
                        return emit(settings, text);
                    }
                    (None, Some(rate)) => {
                        let v = bounds::qsc_capacity_inverse(*rate, *q)
                            .map_err(|e| Failure::validation(e.to_string()))?;
                        (
                            "qsc_capacity_inverse",
                            serde_json::json!({"rate": rate, "q": q}),
                            v,
                            1e-9,
                        )
                    }
                    _ => {
                        return Err(Failure::validation(
                            "capacity needs exactly one of --p or --rate",
                        ))
                    }
                },
                BoundsCommand::Divsalar { from_curve, rate } => {
                    let text = fs::read_to_string(from_curve).map_err(|e| {
                        Failure::validation(format!("cannot read curve {from_curve:?}: {e}"))
                    })?;
                    let mut curve = Vec::new();
                    for line in text.lines().skip(1) {
                        let mut cols = line.split(',');
                        let (Some(a), Some(b)) = (cols.next(), cols.next()) else {
                            continue;
                        };
                        if let (Ok(x), Ok(y)) = (a.trim().parse(), b.trim().parse()) {
                            curve.push((x, y));
                        }
                    }
                    if curve.len() < 3 {
                        return Err(Failure::validation("curve file has fewer than 3 points"));
                    }
                    let b = bounds::divsalar_threshold(&curve, *rate)
                        .map_err(|e| Failure::validation(e.to_string()))?;
                    if b.degenerate {
                        eprintln!("flag: all-zero curve, bound degenerate (-inf dB)");
                    }
                    (
                        "divsalar",
                        serde_json::json!({"rate": rate, "curve": from_curve.display().to_string()}),
                        b.ebn0_db,
                        5e-3,
                    )
                }
                BoundsCommand::Shannon { rate } => {
                    let v = bounds::awgn_shannon_limit(*rate)
                        .map_err(|e| Failure::validation(e.to_string()))?;
                    (
                        "awgn_shannon_limit",
                        serde_json::json!({"rate": rate}),
                        v,
                        1e-6,
                    )
                }
            };
            let text = match settings.format {
                OutputFormat::Csv => format!("bound,value,tolerance\n{name},{value},{tolerance}\n"),
                OutputFormat::Json => {
                    serde_json::to_string_pretty(&bounds::bound_json(
                        name, inputs, value, tolerance,
                    ))
                    .unwrap()
                        + "\n"
                }
            };
            emit(settings, text)
        }
        Command::Exit { which } => {
            let mc_of = |block_len: &Option<usize>, blocks: &Option<usize>| McBudget {
                block_len: block_len.or(settings.block_len).unwrap_or(6000),
                blocks: blocks.or(settings.blocks).unwrap_or(40),
            };
            match which {
                ExitCommand::Curve {
                    ens,
                    p,
                    ia_step,
                    block_len,
                    blocks,
                    model,
                    weighter,
                } => {
                    let params = EnsembleParams::new(ens.q, ens.n, ens.l, 4)
                        .map_err(|e| Failure::validation(e.to_string()))?;
                    let mc = mc_of(block_len, blocks);
                    let model = match model {
                        ModelArg::Erasure => AprioriModel::Erasure,
                        ModelArg::Qsc => AprioriModel::Qsc,
                    };
                    let mut grid = Vec::new();
                    let mut x = 0.0;
                    while x < 1.0 {
                        grid.push(x);
                        x += ia_step;
                    }
                    grid.push(0.98);
                    grid.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
                    let curve = match p {
                        Some(p) => {
                            exitsim::exit_inner(&params, *p, &grid, &mc, settings.seed, model)
                                .map_err(|e| Failure::validation(e.to_string()))?
                        }
                        None => exitsim::exit_outer(
                            &params,
                            &grid,
                            &mc,
                            settings.seed,
                            model,
                            match weighter {
                                WeighterArg::Random => WeighterMode::Random,
                                WeighterArg::Ones => WeighterMode::AllOnes,
                            },
                        )
                        .map_err(|e| Failure::validation(e.to_string()))?,
                    };
                    let text = match settings.format {
                        OutputFormat::Csv => curve.to_csv(),
                        OutputFormat::Json => {
                            serde_json::to_string_pretty(&curve).unwrap() + "\n"
                        }
                    };
                    emit(settings, text)
                }
                ExitCommand::Threshold {
                    ens,
                    block_len,
                    blocks,
                    model,
                    weighter,
                } => {
                    let params = EnsembleParams::new(ens.q, ens.n, ens.l, 4)
                        .map_err(|e| Failure::validation(e.to_string()))?;
                    let mc = mc_of(block_len, blocks);
                    let model = match model {
                        ModelArg::Erasure => AprioriModel::Erasure,
                        ModelArg::Qsc => AprioriModel::Qsc,
                    };
                    let t = exitsim::threshold_qsc(
                        &params,
                        &mc,
                        settings.seed,
                        model,
                        match weighter {
                            WeighterArg::Random => WeighterMode::Random,
                            WeighterArg::Ones => WeighterMode::AllOnes,
                        },
                    )
                    .map_err(|e| Failure::validation(e.to_string()))?;
                    let text = match settings.format {
                        OutputFormat::Csv => format!(
                            "q,n,L,p_star,ci_lo,ci_hi,seed,samples,model,weighter\n{},{},{},{},{},{},{},{},{},{}\n",
                            t.q, t.n, t.l, t.p_star, t.ci.0, t.ci.1, t.seed, t.samples,
                            t.model.as_str(),
                            match t.weighter { WeighterMode::Random => "random", WeighterMode::AllOnes => "ones" },
                        ),
                        OutputFormat::Json => {
                            serde_json::to_string_pretty(&t.to_json()).unwrap() + "\n"
                        }
                    };
                    emit(settings, text)
                }
            }
        }
        Command::Tables {
            table,
            row,
            block_len,
            blocks,
            exit_tolerance,
        } => {
            let report = match table.as_str() {
                "I" => tables::run_growth_table(2, *row),
                "II" => tables::run_growth_table(3, *row),
                "III" => tables::run_binary_growth_table(2, *row),
                "IV" => tables::run_binary_growth_table(3, *row),
                "V" => tables::run_ml_threshold_table(2, *row),
                "VI" => tables::run_ml_threshold_table(3, *row),
                "VII" => {
                    let mc = McBudget {
                        block_len: block_len.or(settings.block_len).unwrap_or(6000),
                        blocks: blocks.or(settings.blocks).unwrap_or(40),
                    };
                    tables::run_exit_table(
                        *row,
                        &mc,
                        settings.seed,
                        AprioriModel::Erasure,
                        *exit_tolerance,
                    )
                }
                other => {
                    return Err(Failure::validation(format!(
                        "unknown table {other}; expected I..VII"
                    )))
                }
            };
            let text = match settings.format {
                OutputFormat::Csv => report.to_csv(),
                OutputFormat::Json => {
                    serde_json::to_string_pretty(&report.to_json()).unwrap() + "\n"
                }
            };
            let ok = report.all_pass();
            emit(settings, text)?;
            if !ok {
                return Err(Failure {
                    code: 3,
                    message: format!("table {} has cells outside tolerance", report.name),
                });
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            // help or version output
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let settings = match resolve_settings(&cli) {
        Ok(s) => s,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return ExitCode::from(f.code);
        }
    };
    match run(&cli, &settings) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
