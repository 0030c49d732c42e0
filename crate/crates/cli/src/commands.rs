use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use matchnet::mechanisms::{bvn_decompose, da, serial_dictatorship_round, Proposing};
use matchnet::net::Checkpoint;
use matchnet::oracle::{find_blocking_pairs, fosd_audit, ConstantMechanism};
use matchnet::prefs::{profile_stream, read_profiles, write_profiles, DistributionKind};
use matchnet::{
    evaluate, lift_mechanism, AgentId, BaselineKind, EvalReport, Mechanism, NeuralMechanism,
    PreferenceOrder, PreferenceProfile, TrainConfig,
};
use rand::seq::SliceRandom;

use crate::config::{distribution, train_config, ConfigFile, Overrides};
use crate::error::{CliError, CliResult};
use crate::report::{append_csv, frontier_svg, write_csv, FrontierRow};

pub fn load_profiles(path: &Path) -> CliResult<Vec<PreferenceProfile>> {
    let profiles = read_profiles(BufReader::new(File::open(path)?))?;
    if profiles.is_empty() {
        return Err(CliError::Usage(format!("{} contains no profiles", path.display())));
    }
    Ok(profiles)
}

/// A mechanism named on the command line: a baseline label, `constant`,
/// or a checkpoint path.
pub struct Resolved {
    pub mechanism: Box<dyn Mechanism + Send + Sync>,
    pub label: String,
    pub lambda: Option<f64>,
}

pub fn resolve_mechanism(spec: &str, n: usize, m: usize) -> CliResult<Resolved> {
    if let Some(kind) = BaselineKind::from_label(spec) {
        return Ok(Resolved {
            mechanism: Box::new(lift_mechanism(kind)),
            label: spec.into(),
            lambda: None,
        });
    }
    if spec == "constant" {
        return Ok(Resolved {
            mechanism: Box::new(ConstantMechanism::uniform(n, m)),
            label: spec.into(),
            lambda: None,
        });
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(CliError::Usage(format!(
            "`{spec}` is neither a mechanism label (wda, fda, rsd, constant) nor an existing checkpoint"
        )));
    }
    let ck = Checkpoint::load(path)?;
    if (ck.dims.n, ck.dims.m) != (n, m) {
        return Err(CliError::Usage(format!(
            "checkpoint is for a {}x{} market but the profiles are {n}x{m}",
            ck.dims.n, ck.dims.m
        )));
    }
    let lambda = ck.lambda;
    Ok(Resolved {
        mechanism: Box::new(NeuralMechanism::from_checkpoint(ck, "net")?),
        label: "net".into(),
        lambda: Some(lambda),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenSummary {
    pub profiles: usize,
    /// Share of all preference orders that rank ⊥ above some agent.
    pub truncated_fraction: f64,
    /// Per profile, the share of workers holding the most common worker
    /// order; averaged over profiles.
    pub worker_modal_fraction: f64,
    pub firm_modal_fraction: f64,
}

fn modal_share(orders: &[PreferenceOrder]) -> f64 {
    let best = orders
        .iter()
        .map(|o| orders.iter().filter(|x| *x == o).count())
        .max()
        .unwrap_or(0);
    best as f64 / orders.len().max(1) as f64
}

pub fn summarize(profiles: &[PreferenceProfile]) -> GenSummary {
    let mut truncated = 0usize;
    let mut orders = 0usize;
    let (mut wm, mut fm) = (0.0, 0.0);
    for p in profiles {
        for o in p.workers().iter().chain(p.firms()) {
            orders += 1;
            truncated += o.is_truncated() as usize;
        }
        wm += modal_share(p.workers());
        fm += modal_share(p.firms());
    }
    let k = profiles.len().max(1) as f64;
    GenSummary {
        profiles: profiles.len(),
        truncated_fraction: truncated as f64 / orders.max(1) as f64,
        worker_modal_fraction: wm / k,
        firm_modal_fraction: fm / k,
    }
}

/// Writes `count` profiles drawn from the configured distribution.
pub fn cmd_gen(
    file: &ConfigFile,
    overrides: &Overrides,
    count: usize,
    out_path: &Path,
    stdout: &mut dyn Write,
) -> CliResult<GenSummary> {
    let dist = distribution(file, overrides)?;
    let profiles = dist.sample_range(0, count)?;
    let kind = match dist.kind {
        DistributionKind::Uncorrelated => "uncorrelated".to_string(),
        DistributionKind::Correlated => format!("correlated p_corr={}", dist.p_corr),
    };
    let header = format!(
        "matchnet profiles: {}x{} {kind} p_trunc={} seed={} count={count}",
        dist.n, dist.m, dist.p_trunc, dist.seed
    );
    let mut w = BufWriter::new(File::create(out_path)?);
    write_profiles(&mut w, &header, &profiles)?;
    w.flush()?;
    let s = summarize(&profiles);
    writeln!(stdout, "profiles {}", s.profiles)?;
    writeln!(stdout, "truncated_fraction {}", s.truncated_fraction)?;
    writeln!(stdout, "worker_modal_fraction {}", s.worker_modal_fraction)?;
    writeln!(stdout, "firm_modal_fraction {}", s.firm_modal_fraction)?;
    Ok(s)
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// Trains one network into `out_dir`, returning the final held-out report.
pub fn cmd_train(
    file: &ConfigFile,
    overrides: &Overrides,
    out_dir: &Path,
    stdout: &mut dyn Write,
) -> CliResult<Option<EvalReport>> {
    let mut cfg = train_config(file, overrides)?;
    fs::create_dir_all(out_dir)?;
    cfg.checkpoint_path = Some(out_dir.join(CHECKPOINT_FILE));
    cfg.log_path = Some(out_dir.join(TRAIN_LOG_FILE));
    writeln!(
        stdout,
        "training {}x{} lambda={} iterations={} batch={} lr={} seed={}",
        cfg.dist.n, cfg.dist.m, cfg.lambda, cfg.iterations, cfg.batch_size, cfg.base_lr, cfg.dist.seed
    )?;
    let outcome = matchnet::train(&cfg)?;
    for (iter, r) in &outcome.evals {
        writeln!(
            stdout,
            "eval iter={iter} stv={} rgt={} irv={} welfare={} sim={} entropy={}",
            r.stv, r.rgt, r.irv, r.welfare_per_agent, r.sim, r.entropy
        )?;
    }
    Ok(outcome.evals.last().map(|(_, r)| r.clone()))
}

/// Evaluates one mechanism, prints its CSV row and optionally appends it.
pub fn cmd_eval(
    spec: &str,
    profiles_path: &Path,
    csv_path: Option<&Path>,
    stdout: &mut dyn Write,
) -> CliResult<FrontierRow> {
    let profiles = load_profiles(profiles_path)?;
    let res = resolve_mechanism(spec, profiles[0].n(), profiles[0].m())?;
    let report = evaluate(&res.mechanism, &profiles)?;
    let row = FrontierRow {
        label: res.label,
        lambda: res.lambda,
        report,
    };
    write_csv(&mut *stdout, std::slice::from_ref(&row), true)?;
    if let Some(p) = csv_path {
        append_csv(p, std::slice::from_ref(&row))?;
    }
    Ok(row)
}

/// Baseline rows on a profile set: `wda`, `fda`, `da-best` (the DA variant
/// with lower regret, `wda` on ties) and `rsd` with IR violations folded in.
pub fn baseline_rows(profiles: &[PreferenceProfile]) -> CliResult<Vec<FrontierRow>> {
    let wda = evaluate(&lift_mechanism(BaselineKind::Wda), profiles)?;
    let fda = evaluate(&lift_mechanism(BaselineKind::Fda), profiles)?;
    let rsd = evaluate(&lift_mechanism(BaselineKind::Rsd), profiles)?;
    let best = if fda.rgt < wda.rgt { fda.clone() } else { wda.clone() };
    Ok(vec![
        FrontierRow::baseline("wda", wda),
        FrontierRow::baseline("fda", fda),
        FrontierRow::baseline("da-best", best),
        FrontierRow::rsd_frontier(rsd),
    ])
}

/// Runs a baseline on every profile and writes one sidecar matching line
/// per profile. RSD lines are single draws, seeded per profile.
pub fn cmd_baseline(
    kind: BaselineKind,
    profiles_path: &Path,
    seed: u64,
    out: &mut dyn Write,
) -> CliResult<()> {
    let profiles = load_profiles(profiles_path)?;
    for (i, p) in profiles.iter().enumerate() {
        let matching = match kind {
            BaselineKind::Wda => da(p, Proposing::Workers),
            BaselineKind::Fda => da(p, Proposing::Firms),
            BaselineKind::Rsd => {
                let mut priority: Vec<AgentId> = p.agents().collect();
                priority.shuffle(&mut profile_stream(seed, i as u64));
                serial_dictatorship_round(p, &priority)?
            }
        };
        writeln!(out, "{}", matching.to_line())?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditSummary {
    pub profiles: usize,
    pub max_gain: f64,
    pub violations: usize,
}

/// Per-profile FOSD audit and blocking pairs of each BvN component.
pub fn cmd_audit(
    spec: &str,
    profiles_path: &Path,
    tolerance: f64,
    out: &mut dyn Write,
) -> CliResult<AuditSummary> {
    let profiles = load_profiles(profiles_path)?;
    let res = resolve_mechanism(spec, profiles[0].n(), profiles[0].m())?;
    let mut summary = AuditSummary {
        profiles: profiles.len(),
        max_gain: 0.0,
        violations: 0,
    };
    for (i, p) in profiles.iter().enumerate() {
        writeln!(out, "profile {} {}", i + 1, p.to_line())?;
        let audit: BTreeMap<AgentId, _> = fosd_audit(&res.mechanism, p)?;
        for (agent, entry) in &audit {
            summary.max_gain = summary.max_gain.max(entry.gain);
            let flag = if entry.gain > tolerance {
                summary.violations += 1;
                " VIOLATION"
            } else {
                ""
            };
            match &entry.report {
                Some(r) if entry.gain > 0.0 => writeln!(
                    out,
                    "  {agent} gain {} via {}{flag}",
                    entry.gain,
                    r.format_tokens(agent.side.opposite())
                )?,
                _ => writeln!(out, "  {agent} gain {}{flag}", entry.gain)?,
            }
        }
        let r = res.mechanism.evaluate(p)?;
        for c in bvn_decompose(&r)?.components {
            let blocking = find_blocking_pairs(&c.matching, p);
            let listed: Vec<String> = blocking
                .iter()
                .map(|b| format!("w{}:f{}({:?})", b.worker + 1, b.firm + 1, b.kind))
                .collect();
            writeln!(
                out,
                "  component {} [{}] blocking: {}",
                c.weight,
                c.matching.to_line(),
                if listed.is_empty() { "none".into() } else { listed.join(" ") }
            )?;
        }
    }
    writeln!(
        out,
        "audited {} profile(s); max gain {}; {} agent(s) above tolerance {tolerance}",
        summary.profiles, summary.max_gain, summary.violations
    )?;
    if summary.violations > 0 {
        return Err(CliError::AuditFailed(summary.violations));
    }
    Ok(summary)
}

/// Writes each profile's BvN decomposition: a `# profile` line, then one
/// `weight<TAB>matching` line per component.
pub fn cmd_decompose(spec: &str, profiles_path: &Path, out: &mut dyn Write) -> CliResult<()> {
    let profiles = load_profiles(profiles_path)?;
    let res = resolve_mechanism(spec, profiles[0].n(), profiles[0].m())?;
    let outcomes = res.mechanism.evaluate_batch(&profiles)?;
    for (i, r) in outcomes.iter().enumerate() {
        writeln!(out, "# profile {}", i + 1)?;
        for c in bvn_decompose(r)?.components {
            writeln!(out, "{}\t{}", c.weight, c.matching.to_line())?;
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<FrontierRow>,
    /// Lambdas whose run failed, with the error text.
    pub failures: Vec<(f64, String)>,
    pub csv_path: PathBuf,
    pub svg_path: PathBuf,
}

fn lambda_tag(lambda: f64) -> String {
    format!("lambda_{lambda}")
}

/// Trains (or, with `reuse`, loads) one checkpoint per lambda and evaluates
/// it with the baselines on the shared held-out set.
fn sweep_one(base: &TrainConfig, lambda: f64, out_dir: &Path, reuse: bool) -> CliResult<EvalReport> {
    let ck_path = out_dir.join(format!("{}.ckpt", lambda_tag(lambda)));
    if !(reuse && ck_path.exists()) {
        let cfg = TrainConfig {
            lambda,
            test_size: 0,
            checkpoint_path: Some(ck_path.clone()),
            log_path: Some(out_dir.join(format!("{}_log.csv", lambda_tag(lambda)))),
            ..base.clone()
        };
        matchnet::train(&cfg)?;
    }
    let ck = Checkpoint::load(&ck_path)?;
    if ck.dims != base.dims || ck.lambda != lambda {
        return Err(CliError::Usage(format!(
            "{} does not match the sweep configuration",
            ck_path.display()
        )));
    }
    let mech = NeuralMechanism::from_checkpoint(ck, "net")?;
    Ok(evaluate(&mech, &base.held_out()?)?)
}

pub struct SweepOptions<'a> {
    pub lambdas: &'a [f64],
    pub out_dir: &'a Path,
    /// Number of lambdas trained concurrently.
    pub parallel: usize,
    pub reuse: bool,
}

pub fn cmd_sweep(
    file: &ConfigFile,
    overrides: &Overrides,
    opts: &SweepOptions,
    stdout: &mut dyn Write,
) -> CliResult<SweepOutcome> {
    if let Some(bad) = opts.lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(CliError::Usage(format!("lambda {bad} is not in [0, 1]")));
    }
    let base = train_config(file, overrides)?;
    if base.test_size == 0 {
        return Err(CliError::Usage("a sweep needs test_size > 0".into()));
    }
    fs::create_dir_all(opts.out_dir)?;
    let held_out = base.held_out()?;

    let workers = opts.parallel.max(1);
    let shared = &base;
    let mut results: Vec<Option<CliResult<EvalReport>>> = (0..opts.lambdas.len()).map(|_| None).collect();
    for (chunk_idx, chunk) in opts.lambdas.chunks(workers).enumerate() {
        let done: Vec<CliResult<EvalReport>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&l| s.spawn(move || sweep_one(shared, l, opts.out_dir, opts.reuse)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Usage("training thread panicked".into()))))
                .collect()
        });
        for (k, r) in done.into_iter().enumerate() {
            results[chunk_idx * workers + k] = Some(r);
        }
    }

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&lambda, r) in opts.lambdas.iter().zip(results) {
        match r.expect("every lambda ran") {
            Ok(report) => {
                writeln!(stdout, "lambda {lambda}: stv {} rgt {}", report.stv, report.rgt)?;
                rows.push(FrontierRow::learned(lambda, report));
            }
            Err(e) => {
                writeln!(stdout, "lambda {lambda}: failed: {e}")?;
                failures.push((lambda, e.to_string()));
            }
        }
    }
    rows.extend(baseline_rows(&held_out)?);

    let csv_path = opts.out_dir.join("frontier.csv");
    let svg_path = opts.out_dir.join("frontier.svg");
    write_csv(BufWriter::new(File::create(&csv_path)?), &rows, true)?;
    fs::write(&svg_path, frontier_svg(&rows))?;
    if !failures.is_empty() {
        let mut w = BufWriter::new(File::create(opts.out_dir.join("failures.txt"))?);
        for (l, e) in &failures {
            writeln!(w, "{l}\t{e}")?;
        }
        w.flush()?;
    }
    Ok(SweepOutcome {
        rows,
        failures,
        csv_path,
        svg_path,
    })
}

/// Parses `0,0.5,1`.
pub fn parse_lambdas(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim())
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("cannot parse lambda `{t}`")))
        })
        .collect::<CliResult<Vec<_>>>()
        .and_then(|v| {
            if v.is_empty() {
                Err(CliError::Usage("empty lambda list".into()))
            } else {
                Ok(v)
            }
        })
}
