//! `decel-lab` command dispatch. Exit codes: 0 success, 1 invalid input,
//! 2 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use decel_lab::curves::{scaling_fit, LossCurve, ScalingRow, SmoothingConfig};
use decel_lab::harness::{self, blob, DecomposeRow, GridSpec, PairRule, RunDir, ZslReportRow};
use decel_lab::trainer::{self, RunConfig};
use decel_lab::{Error, Result};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "decel-lab",
    version,
    about = "Loss-deceleration and zero-sum-learning analysis toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the byte-level model and write a run directory.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override one config key, `key=value`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the one-break BNSL to a loss curve.
    FitBnsl {
        /// `log.jsonl` or a `step,loss` CSV.
        #[arg(long)]
        losses: PathBuf,
        #[arg(long, default_value_t = 1.2)]
        smooth_k: f64,
        #[arg(long, default_value_t = 200)]
        per_decade: u32,
        /// Horizon `T` for the loss estimate; defaults to the last step.
        #[arg(long)]
        horizon: Option<u64>,
        /// Initial guess for the break step.
        #[arg(long)]
        d1: Option<f64>,
        /// Fit only steps at or after this one, e.g. the end of warmup.
        #[arg(long, default_value_t = 1)]
        min_step: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Interference of per-token loss changes between checkpoint pairs.
    Zsl {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "doubling")]
        pairs: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// First-order decomposition (C_g, C_ug, C_uG, D_fote, norm terms) per checkpoint.
    Decompose {
        #[arg(long)]
        run: PathBuf,
        /// Checkpoint steps; all when omitted.
        #[arg(long, value_delimiter = ',')]
        steps: Vec<u64>,
        #[arg(long, default_value_t = 256)]
        tokens: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Loss-landscape cross-sections along each checkpoint's update.
    Landscape {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_delimiter = ',')]
        steps: Vec<u64>,
        #[arg(long, default_value = "-10:10:41", allow_hyphen_values = true)]
        alphas: String,
        /// Sharpness fit window `lo:hi`; the whole grid when omitted.
        #[arg(long, allow_hyphen_values = true)]
        window: Option<String>,
        #[arg(long, default_value_t = 256)]
        tokens: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Scaling law from per-size deceleration measurements.
    ScalingFit {
        /// CSV with header `N,L_d,t_d,r_d`, or a JSON array of rows.
        #[arg(long)]
        rows: PathBuf,
        /// Also predict `L(N, T)` for every size at this horizon.
        #[arg(long)]
        horizon: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Proxy against exact per-coordinate gradient interference.
    ProxyGdi {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_delimiter = ',')]
        steps: Vec<u64>,
        #[arg(long, default_value_t = 256)]
        tokens: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `argv` (including the program name), runs, and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return EXIT_INVALID;
    }
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INVALID
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("DECEL_LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::invalid(format!(
            "DECEL_LAB_THREADS must be a positive integer, got `{v}`"
        ))
    })?;
    // A pool may already exist when called repeatedly in one process.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

fn emit_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: PathBuf::from("<stdout>"),
        source: e,
    })?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    blob::write_json_atomic(path, value)
}

fn fmt_row(cells: &[String]) -> String {
    cells
        .iter()
        .map(|c| format!("{c:>14}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn print_table(header: &[&str], rows: &[Vec<String>]) {
    let h: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    println!("{}", fmt_row(&h));
    for r in rows {
        println!("{}", fmt_row(r));
    }
}

fn g(v: f64) -> String {
    format!("{v:.6e}")
}

fn parse_window(s: &str) -> Result<(f64, f64)> {
    let bad = || Error::invalid(format!("bad window `{s}`, expected lo:hi"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = a.trim().parse().map_err(|_| bad())?;
    let hi: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(lo < hi) {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn steps_or_all(run: &RunDir, steps: Vec<u64>) -> Result<Vec<u64>> {
    let all = run.manifest()?.checkpoint_steps;
    if steps.is_empty() {
        return Ok(all);
    }
    if let Some(s) = steps.iter().find(|s| !all.contains(s)) {
        return Err(Error::invalid(format!(
            "step {s} is not a checkpoint of this run"
        )));
    }
    Ok(steps)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train {
            corpus,
            config,
            set,
            seed,
            out,
            common,
        } => {
            let mut cfg = match config {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    RunConfig::parse(&text)?
                }
                None => RunConfig::default(),
            };
            for kv in &set {
                let (k, v) = kv.split_once('=').ok_or_else(|| {
                    Error::invalid(format!("--set expects KEY=VALUE, got `{kv}`"))
                })?;
                cfg.set(k.trim(), v.trim())?;
            }
            if let Some(s) = seed {
                cfg.model.seed = s;
            }
            let bytes = fs::read(&corpus).map_err(|e| Error::io(&corpus, e))?;
            let summary = trainer::train(&cfg, bytes, &out)?;
            #[derive(Serialize)]
            struct TrainOut<'a> {
                run_dir: &'a Path,
                n_params: usize,
                initial_loss: f64,
                final_loss: f64,
                checkpoint_steps: &'a [u64],
            }
            let o = TrainOut {
                run_dir: &summary.run_dir,
                n_params: summary.n_params,
                initial_loss: summary.initial_loss,
                final_loss: summary.final_loss,
                checkpoint_steps: &summary.checkpoint_steps,
            };
            if common.json {
                emit_json(&o)?;
            } else {
                println!(
                    "trained {} parameters for {} steps: loss {:.4} -> {:.4}; run in {}",
                    o.n_params,
                    cfg.train.total_steps,
                    o.initial_loss,
                    o.final_loss,
                    out.display()
                );
            }
            Ok(())
        }
        Command::FitBnsl {
            losses,
            smooth_k,
            per_decade,
            horizon,
            d1,
            min_step,
            out,
            common,
        } => {
            let curve = LossCurve::load(&losses)?;
            let smoothing = SmoothingConfig {
                k: smooth_k,
                subsample_per_decade: per_decade,
            };
            smoothing.validate()?;
            let horizon = horizon.unwrap_or(*curve.steps().last().expect("non-empty curve"));
            let d1 = d1.or_else(|| {
                let lo = curve.steps()[0].max(min_step) as f64;
                let hi = *curve.steps().last().unwrap() as f64;
                let d = decel_lab::curves::DEFAULT_D1_EST;
                (!(lo..=hi).contains(&d)).then(|| (lo * hi).sqrt())
            });
            let report = harness::fit_report(&curve, &smoothing, d1, horizon, min_step)?;
            if let Some(p) = &out {
                save_json(p, &report)?;
            }
            if common.json {
                emit_json(&report)?;
            } else {
                let m = &report.measurements;
                print_table(
                    &["t_d", "L_d", "r_d", "L_hat_T", "T", "rsle"],
                    &[vec![
                        g(m.t_d),
                        g(m.l_d),
                        g(m.r_d),
                        g(m.l_hat_t),
                        m.horizon.to_string(),
                        g(report.rsle),
                    ]],
                );
            }
            Ok(())
        }
        Command::Zsl {
            run,
            pairs,
            out,
            common,
        } => {
            let run = RunDir::open(run)?;
            let rule: PairRule = pairs.parse()?;
            let rows = harness::zsl_report(&run, &rule)?;
            if let Some(p) = &out {
                save_json(p, &rows)?;
            }
            if common.json {
                emit_json(&rows)?;
            } else {
                let table: Vec<Vec<String>> = rows
                    .iter()
                    .map(|r: &ZslReportRow| {
                        vec![
                            r.t1.to_string(),
                            r.t2.to_string(),
                            g(r.d),
                            g(r.m),
                            g(r.abs_dl),
                            r.n_tokens.to_string(),
                        ]
                    })
                    .collect();
                print_table(&["t1", "t2", "D", "M", "abs_dL", "n_tokens"], &table);
            }
            Ok(())
        }
        Command::Decompose {
            run,
            steps,
            tokens,
            out,
            common,
        } => {
            let run = RunDir::open(run)?;
            let rows = steps_or_all(&run, steps)?
                .into_iter()
                .map(|s| harness::decompose_step(&run, s, tokens))
                .collect::<Result<Vec<DecomposeRow>>>()?;
            if let Some(p) = &out {
                save_json(p, &rows)?;
            }
            if common.json {
                emit_json(&rows)?;
            } else {
                let table: Vec<Vec<String>> = rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.step.to_string(),
                            g(r.c_g),
                            g(r.c_ug),
                            g(r.c_u_big_g),
                            g(r.d_fote),
                            g(r.norms.update_norm),
                            g(r.norms.grad_norm),
                            g(r.norms.cosine),
                        ]
                    })
                    .collect();
                print_table(
                    &[
                        "step", "C_g", "C_ug", "C_uG", "D_fote", "|dtheta|", "|G|", "cos",
                    ],
                    &table,
                );
            }
            Ok(())
        }
        Command::Landscape {
            run,
            steps,
            alphas,
            window,
            tokens,
            out,
            common,
        } => {
            let run = RunDir::open(run)?;
            let grid: GridSpec = alphas.parse()?;
            let window = window.as_deref().map(parse_window).transpose()?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let mut reports = Vec::new();
            for s in steps_or_all(&run, steps)? {
                let (xs, rep) = harness::landscape_step(&run, s, tokens, grid, window)?;
                harness::write_landscape(&out, &xs, &rep)?;
                reports.push(rep);
            }
            if common.json {
                emit_json(&reports)?;
            } else {
                let table: Vec<Vec<String>> = reports
                    .iter()
                    .map(|r| {
                        vec![
                            r.base_step.to_string(),
                            g(r.direction_norm),
                            g(r.sharpness.c2),
                            g(r.pearson_dl),
                            r.n_tokens.to_string(),
                        ]
                    })
                    .collect();
                print_table(
                    &["step", "|dtheta|", "sharpness", "pearson_dl", "n_tokens"],
                    &table,
                );
            }
            Ok(())
        }
        Command::ScalingFit {
            rows,
            horizon,
            out,
            common,
        } => {
            let rows = load_scaling_rows(&rows)?;
            let fit = scaling_fit(&rows)?;
            #[derive(Serialize)]
            struct Prediction {
                #[serde(rename = "N")]
                n: u64,
                #[serde(rename = "T")]
                t: u64,
                loss: f64,
            }
            #[derive(Serialize)]
            struct ScalingOut {
                fit: decel_lab::curves::ScalingFit,
                predictions: Vec<Prediction>,
            }
            let predictions = horizon
                .map(|t| {
                    rows.iter()
                        .map(|r| Prediction {
                            n: r.n_params,
                            t,
                            loss: fit.predict(r.n_params as f64, t as f64),
                        })
                        .collect()
                })
                .unwrap_or_default();
            let o = ScalingOut { fit, predictions };
            if let Some(p) = &out {
                save_json(p, &o)?;
            }
            if common.json {
                emit_json(&o)?;
            } else {
                let f = &o.fit;
                println!("L_d(N) = {} * N^{}", g(f.ld_fit.coef), g(f.ld_fit.exponent));
                println!("r_d(N) = {} * N^{}", g(f.rd_fit.coef), g(f.rd_fit.exponent));
                println!(
                    "t_d(N) = {} + {} * N",
                    g(f.td_fit.intercept),
                    g(f.td_fit.slope)
                );
                for p in &o.predictions {
                    println!("L(N={}, T={}) = {}", p.n, p.t, g(p.loss));
                }
            }
            Ok(())
        }
        Command::ProxyGdi {
            run,
            steps,
            tokens,
            out,
            common,
        } => {
            let run = RunDir::open(run)?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let mut reports = Vec::new();
            for s in steps_or_all(&run, steps)? {
                let rep = harness::proxy_gdi_step(&run, s, tokens)?;
                blob::write_atomic(
                    &out.join(format!("step_{s}_gdi_hist.csv")),
                    harness::proxy_histogram_csv(&rep).as_bytes(),
                )?;
                save_json(&out.join(format!("step_{s}_gdi.json")), &rep)?;
                reports.push(rep);
            }
            if common.json {
                emit_json(&reports)?;
            } else {
                let table: Vec<Vec<String>> = reports
                    .iter()
                    .flat_map(|r| {
                        r.tensors.iter().map(move |t| {
                            vec![
                                r.step.to_string(),
                                t.name.clone(),
                                g(t.proxy_mean),
                                g(t.exact_mean),
                            ]
                        })
                    })
                    .collect();
                print_table(&["step", "tensor", "proxy_gdi", "exact_di"], &table);
            }
            Ok(())
        }
    }
}

/// Rows from a `N,L_d,t_d,r_d` CSV (header required) or a JSON array.
pub fn load_scaling_rows(path: &Path) -> Result<Vec<ScalingRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        });
    }
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::invalid(format!("{} is empty", path.display())))?
        .split(',')
        .map(str::trim)
        .collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| Error::invalid(format!("{}: missing column {name}", path.display())))
    };
    let (cn, cl, ct, cr) = (col("N")?, col("L_d")?, col("t_d")?, col("r_d")?);
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::invalid(format!("{}: bad row {}", path.display(), i + 2));
            let num = |c: usize| {
                cells
                    .get(c)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(bad)
            };
            let n = cells
                .get(cn)
                .and_then(|s| s.parse::<u64>().ok())
                .ok_or_else(bad)?;
            Ok(ScalingRow {
                n_params: n,
                l_d: num(cl)?,
                t_d: num(ct)?,
                r_d: num(cr)?,
            })
        })
        .collect()
}
