//! Adversarial training of the matching network: per-iteration search for
//! the most profitable misreport of every agent, then a gradient step on
//! `λ · stability violation + (1 − λ) · regret` with those reports fixed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;

use ndarray::Array2;

use crate::autodiff::{lr_schedule, AdamW, OptimizerState, SparseMap, Tape, Var};
use crate::error::{Error, Result};
use crate::mechanisms::Mechanism;
use crate::metrics::{self, fosd_gain, threshold_set, EvalReport, Inclusion};
use crate::net::{
    batch_inputs, forward_raw, init_params, record_forward, Checkpoint, ForwardNodes, NetworkDims,
    NetworkParams, NeuralMechanism, ParamVars,
};
use crate::prefs::{
    enumerate_misreports, AgentId, DistributionConfig, DistributionKind, PreferenceOrder,
    PreferenceProfile, Side,
};

/// Stream offset separating training minibatches from held-out profiles,
/// which use streams `0..test_size`.
const TRAIN_STREAM_BASE: u64 = 1 << 40;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub base_lr: f64,
    pub lr_milestones: Vec<usize>,
    pub dims: NetworkDims,
    pub dist: DistributionConfig,
    pub weight_decay: f64,
    /// Log flush, checkpoint and held-out evaluation period; 0 disables
    /// the periodic work (the final checkpoint and evaluation still run).
    pub eval_every: usize,
    pub test_size: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
}

impl TrainConfig {
    /// Full-scale settings: batch 1024, 50000 iterations, rate halved at
    /// 10000 and 25000, rate 0.005 (uncorrelated) or 0.002 (correlated),
    /// 4 hidden layers of 256 units.
    pub fn paper(dist: DistributionConfig, lambda: f64) -> Result<Self> {
        let base_lr = match dist.kind {
            DistributionKind::Uncorrelated => 0.005,
            DistributionKind::Correlated => 0.002,
        };
        Ok(Self {
            lambda,
            batch_size: 1024,
            iterations: 50_000,
            base_lr,
            lr_milestones: vec![10_000, 25_000],
            dims: NetworkDims::new(dist.n, dist.m, 4, 256)?,
            dist,
            weight_decay: AdamW::default().weight_decay,
            eval_every: 5_000,
            test_size: 204_800,
            checkpoint_path: None,
            log_path: None,
        })
    }

    /// Single-core settings: 2000 iterations of batch 128 on a 3-layer,
    /// 128-unit network, halving at 1000 and 1500, 2048 held-out profiles.
    pub fn desk(dist: DistributionConfig, lambda: f64) -> Result<Self> {
        let paper = Self::paper(dist, lambda)?;
        Ok(Self {
            batch_size: 128,
            iterations: 2_000,
            lr_milestones: vec![1_000, 1_500],
            dims: NetworkDims::new(paper.dist.n, paper.dist.m, 3, 128)?,
            eval_every: 1_000,
            test_size: 2_048,
            ..paper
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.dist.validate()?;
        self.dims.validate()?;
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!("lambda {} is not in [0, 1]", self.lambda)));
        }
        if self.dims.n != self.dist.n || self.dims.m != self.dist.m {
            return Err(Error::InvalidConfig("network and distribution sizes differ".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::InvalidConfig("base_lr must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight_decay must be non-negative".into()));
        }
        if self.lr_milestones.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidConfig("lr_milestones must be ascending".into()));
        }
        Ok(())
    }

    /// Held-out profiles shared by every run with the same distribution.
    pub fn held_out(&self) -> Result<Vec<PreferenceProfile>> {
        self.dist.sample_range(0, self.test_size)
    }

    pub fn minibatch(&self, iteration: usize) -> Result<Vec<PreferenceProfile>> {
        self.dist.sample_range(
            TRAIN_STREAM_BASE + (iteration * self.batch_size) as u64,
            self.batch_size,
        )
    }
}

/// The most profitable misreport found for one agent at one profile.
#[derive(Clone, Debug, PartialEq)]
pub struct DefeatingReport {
    pub agent: AgentId,
    pub report: PreferenceOrder,
    /// Largest cumulative-probability gain over truthful reporting.
    pub gain: f64,
    /// Partner (under the true order) at which the gain is attained;
    /// `None` when no misreport gains.
    pub threshold: Option<usize>,
}

impl DefeatingReport {
    fn truthful(agent: AgentId, profile: &PreferenceProfile) -> Self {
        Self {
            agent,
            report: profile.order(agent).clone(),
            gain: 0.0,
            threshold: None,
        }
    }
}

/// Argmax over every misreport (ties to the earliest in enumeration order)
/// for any mechanism.
pub fn find_defeating_report_with<M: Mechanism + ?Sized>(
    mech: &M,
    profile: &PreferenceProfile,
    agent: AgentId,
) -> Result<DefeatingReport> {
    let truth = mech.evaluate(profile)?;
    let order = profile.order(agent);
    let reports: Vec<PreferenceOrder> =
        enumerate_misreports(agent.side, profile.report_size(agent.side))?
            .into_iter()
            .filter(|o| o != order)
            .collect();
    let lying: Vec<PreferenceProfile> = reports
        .iter()
        .map(|o| profile.with_report(agent, o.clone()))
        .collect::<Result<_>>()?;
    let outcomes = mech.evaluate_batch(&lying)?;
    let truthful = metrics::partner_probs(&truth, agent);
    let mut best = DefeatingReport::truthful(agent, profile);
    for (report, out) in reports.into_iter().zip(&outcomes) {
        let lie = metrics::partner_probs(out, agent);
        if let Some((gain, t)) = fosd_gain(order, &truthful, &lie, Inclusion::Weak) {
            if gain > best.gain {
                best = DefeatingReport {
                    agent,
                    report,
                    gain,
                    threshold: Some(t),
                };
            }
        }
    }
    Ok(best)
}

pub fn find_defeating_report(
    params: &NetworkParams,
    dims: &NetworkDims,
    profile: &PreferenceProfile,
    agent: AgentId,
) -> Result<DefeatingReport> {
    let mech = NeuralMechanism::new(*dims, params.clone(), "net")?;
    find_defeating_report_with(&mech, profile, agent)
}

/// A side's candidate reports with their encodings and acceptable sets.
struct ReportPool {
    orders: Vec<PreferenceOrder>,
    codes: Vec<Vec<f64>>,
    acceptable: Vec<Vec<bool>>,
}

impl ReportPool {
    fn new(side: Side, size: usize) -> Result<Self> {
        let orders = enumerate_misreports(side, size)?;
        let codes = orders.iter().map(PreferenceOrder::encode).collect();
        let acceptable = orders
            .iter()
            .map(|o| (0..size).map(|j| o.is_acceptable(j)).collect())
            .collect();
        Ok(Self {
            orders,
            codes,
            acceptable,
        })
    }
}

/// Defeating reports for every agent (workers, then firms) of every
/// profile, from one batched forward pass over all misreports.
pub fn find_defeating_reports(
    params: &NetworkParams,
    dims: &NetworkDims,
    profiles: &[PreferenceProfile],
) -> Result<Vec<Vec<DefeatingReport>>> {
    let (n, m) = (dims.n, dims.m);
    let nm = n * m;
    let workers = ReportPool::new(Side::Worker, m)?;
    let firms = ReportPool::new(Side::Firm, n)?;
    let (base_x, base_mask) = batch_inputs(dims, profiles)?;
    let (width, mask_width) = (base_x.ncols(), base_mask.ncols());

    // rows per profile: truth, then every non-truthful report of each agent
    let mut x = Vec::new();
    let mut mask = Vec::new();
    let mut plan: Vec<Vec<(usize, usize)>> = Vec::with_capacity(profiles.len());
    for (i, profile) in profiles.iter().enumerate() {
        let bx = base_x.row(i);
        let bm = base_mask.row(i);
        let (bx, bm) = (bx.as_slice().expect("row"), bm.as_slice().expect("row"));
        x.extend_from_slice(bx);
        mask.extend_from_slice(bm);
        let mut entries = Vec::new();
        for agent in profile.agents() {
            let pool = match agent.side {
                Side::Worker => &workers,
                Side::Firm => &firms,
            };
            let order = profile.order(agent);
            for (k, report) in pool.orders.iter().enumerate() {
                if report == order {
                    continue;
                }
                entries.push((agent_slot(agent, n), k));
                let at = x.len();
                x.extend_from_slice(bx);
                mask.extend_from_slice(bm);
                let (row, row_mask) = (&mut x[at..], &mut mask[at / width * mask_width..]);
                let code = &pool.codes[k];
                let acc = &pool.acceptable[k];
                match agent.side {
                    Side::Worker => {
                        let w = agent.index;
                        for f in 0..m {
                            row[w * m + f] = code[f];
                            let ok = acc[f] && profile.firms()[f].is_acceptable(w);
                            row_mask[w * (m + 1) + f] = if ok { 1.0 } else { 0.0 };
                        }
                    }
                    Side::Firm => {
                        let f = agent.index;
                        for w in 0..n {
                            row[nm + w * m + f] = code[w];
                            let ok = acc[w] && profile.workers()[w].is_acceptable(f);
                            row_mask[w * (m + 1) + f] = if ok { 1.0 } else { 0.0 };
                        }
                    }
                }
            }
        }
        plan.push(entries);
    }
    let rows = x.len() / width;
    let x = Array2::from_shape_vec((rows, width), x).expect("row widths");
    let mask = Array2::from_shape_vec((rows, mask_width), mask).expect("row widths");
    let r = forward_raw(params, dims, x.view(), mask.view())?;

    let gather = |row: usize, agent: AgentId, buf: &mut Vec<f64>| {
        let r = r.row(row);
        buf.clear();
        match agent.side {
            Side::Worker => buf.extend((0..m).map(|f| r[agent.index * m + f])),
            Side::Firm => buf.extend((0..n).map(|w| r[w * m + agent.index])),
        }
    };
    let mut out = Vec::with_capacity(profiles.len());
    let (mut truthful, mut lie) = (Vec::new(), Vec::new());
    let mut row = 0;
    for (profile, entries) in profiles.iter().zip(plan) {
        let truth_row = row;
        row += 1;
        let mut per_agent: Vec<DefeatingReport> = profile
            .agents()
            .map(|a| DefeatingReport::truthful(a, profile))
            .collect();
        let mut current = usize::MAX;
        for (slot, k) in entries {
            let best = &mut per_agent[slot];
            let agent = best.agent;
            if slot != current {
                gather(truth_row, agent, &mut truthful);
                current = slot;
            }
            gather(row, agent, &mut lie);
            row += 1;
            if let Some((gain, t)) =
                fosd_gain(profile.order(agent), &truthful, &lie, Inclusion::Weak)
            {
                if gain > best.gain {
                    let pool = match agent.side {
                        Side::Worker => &workers,
                        Side::Firm => &firms,
                    };
                    *best = DefeatingReport {
                        agent,
                        report: pool.orders[k].clone(),
                        gain,
                        threshold: Some(t),
                    };
                }
            }
        }
        out.push(per_agent);
    }
    Ok(out)
}

/// Position of `agent` in [`PreferenceProfile::agents`] order.
fn agent_slot(agent: AgentId, n: usize) -> usize {
    match agent.side {
        Side::Worker => agent.index,
        Side::Firm => n + agent.index,
    }
}

/// Nodes of a recorded minibatch loss.
pub struct LossGraph {
    pub tape: Tape,
    pub params: ParamVars,
    pub loss: Var,
    /// Mean stability violation over the minibatch.
    pub stv: Var,
    /// Mean regret surrogate over the minibatch (absent when no agent has a
    /// profitable misreport).
    pub rgt: Option<Var>,
    /// Marginals for truthful profiles (first rows) and defeating reports.
    pub forward: ForwardNodes,
    /// Per-report surrogate gains before the floor at zero.
    pub gains: Option<Var>,
}

/// Records `λ · mean stv + (1 − λ) · mean regret surrogate` with the given
/// defeating reports and thresholds held fixed.
pub fn record_loss(
    params: &NetworkParams,
    dims: &NetworkDims,
    profiles: &[PreferenceProfile],
    reports: &[Vec<DefeatingReport>],
    lambda: f64,
) -> Result<LossGraph> {
    if profiles.is_empty() {
        return Err(Error::Domain("loss needs at least one profile".into()));
    }
    if reports.len() != profiles.len() {
        return Err(Error::Dimension("one report list per profile is required".into()));
    }
    let (n, m) = (dims.n, dims.m);
    let nm = n * m;
    let batch = profiles.len();

    let mut rows: Vec<PreferenceProfile> = profiles.to_vec();
    // (profile, defeating row, report)
    let mut defeating: Vec<(usize, usize, &DefeatingReport)> = Vec::new();
    for (i, (profile, list)) in profiles.iter().zip(reports).enumerate() {
        for d in list.iter().filter(|d| d.gain > 0.0) {
            defeating.push((i, rows.len(), d));
            rows.push(profile.with_report(d.agent, d.report.clone())?);
        }
    }
    let (x, masks) = batch_inputs(dims, &rows)?;

    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params)?;
    let forward = record_forward(&mut tape, &vars, dims, x, masks.view())?;
    let total_rows = rows.len();

    // envy masses are affine in the marginals of the truthful rows
    let mut firm_env = SparseMap::builder((total_rows, nm), (batch, nm));
    let mut worker_env = SparseMap::builder((total_rows, nm), (batch, nm));
    for (i, profile) in profiles.iter().enumerate() {
        let enc = profile.encode();
        let at = |w: usize, f: usize| i * nm + w * m + f;
        for w in 0..n {
            for f in 0..m {
                let q = enc.q[[w, f]];
                firm_env.push(
                    q.max(0.0),
                    (0..n).map(|o| (at(o, f), (q - enc.q[[o, f]]).max(0.0) - q.max(0.0))),
                );
                let p = enc.p[[w, f]];
                worker_env.push(
                    p.max(0.0),
                    (0..m).map(|o| (at(w, o), (p - enc.p[[w, o]]).max(0.0) - p.max(0.0))),
                );
            }
        }
    }
    let fe = tape.affine(forward.r, Rc::new(firm_env.build()))?;
    let we = tape.affine(forward.r, Rc::new(worker_env.build()))?;
    let pair = tape.mul(fe, we)?;
    let total = tape.sum_all(pair)?;
    let weight = 0.5 * (1.0 / m as f64 + 1.0 / n as f64) / batch as f64;
    let stv = tape.scale(total, weight)?;

    let (rgt, gains) = if defeating.is_empty() {
        (None, None)
    } else {
        let mut gain_map = SparseMap::builder((total_rows, nm), (1, defeating.len()));
        let mut weights = SparseMap::builder((1, defeating.len()), (1, 1));
        let mut weight_terms = Vec::with_capacity(defeating.len());
        for (k, &(i, row, d)) in defeating.iter().enumerate() {
            let t = d.threshold.expect("positive gains carry a threshold");
            let partners = threshold_set(profiles[i].order(d.agent), t, Inclusion::Weak)?;
            let cell = |r: usize, j: usize| match d.agent.side {
                Side::Worker => r * nm + d.agent.index * m + j,
                Side::Firm => r * nm + j * m + d.agent.index,
            };
            gain_map.push(
                0.0,
                partners
                    .iter()
                    .flat_map(|&j| [(cell(row, j), 1.0), (cell(i, j), -1.0)]),
            );
            let side_size = match d.agent.side {
                Side::Worker => n,
                Side::Firm => m,
            };
            weight_terms.push((k, 0.5 / side_size as f64 / batch as f64));
        }
        weights.push(0.0, weight_terms);
        let g = tape.affine(forward.r, Rc::new(gain_map.build()))?;
        let floored = tape.relu(g)?;
        let mean = tape.affine(floored, Rc::new(weights.build()))?;
        (Some(mean), Some(g))
    };

    let a = tape.scale(stv, lambda)?;
    let loss = match rgt {
        Some(rgt) => {
            let b = tape.scale(rgt, 1.0 - lambda)?;
            tape.add(a, b)?
        }
        None => a,
    };
    Ok(LossGraph {
        tape,
        params: vars,
        loss,
        stv,
        rgt,
        forward,
        gains,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinibatchLoss {
    pub loss: f64,
    /// Mean stability violation of the minibatch.
    pub stv: f64,
    /// Mean regret of the minibatch at the current parameters.
    pub rgt: f64,
    /// Gradient of `loss`, flattened like [`NetworkParams::flatten`].
    pub grads: Vec<f64>,
}

/// Mean of `½(mean worker gain + mean firm gain)` over profiles.
pub fn mean_regret(reports: &[Vec<DefeatingReport>], n: usize, m: usize) -> f64 {
    let mut total = 0.0;
    for list in reports {
        let (mut w, mut f) = (0.0, 0.0);
        for d in list {
            match d.agent.side {
                Side::Worker => w += d.gain,
                Side::Firm => f += d.gain,
            }
        }
        total += 0.5 * (w / n as f64 + f / m as f64);
    }
    total / reports.len() as f64
}

pub fn loss_minibatch(
    params: &NetworkParams,
    dims: &NetworkDims,
    profiles: &[PreferenceProfile],
    lambda: f64,
) -> Result<MinibatchLoss> {
    let reports = find_defeating_reports(params, dims, profiles)?;
    let mut graph = record_loss(params, dims, profiles, &reports, lambda)?;
    let loss = graph.tape.scalar(graph.loss);
    let stv = graph.tape.scalar(graph.stv);
    let mut grads = graph.tape.backward(graph.loss)?;
    Ok(MinibatchLoss {
        loss,
        stv,
        rgt: mean_regret(&reports, dims.n, dims.m),
        grads: graph.params.flat_grads(&mut grads),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    pub loss: f64,
    pub stv: f64,
    pub rgt: f64,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "iter,loss,stv,rgt,lr";

impl LogRow {
    pub fn to_csv(&self) -> String {
        format!("{},{},{},{},{}", self.iter, self.loss, self.stv, self.rgt, self.lr)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub log: Vec<LogRow>,
    /// Held-out reports at each evaluation point.
    pub evals: Vec<(usize, EvalReport)>,
}

fn save_atomically(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    ck.save(&tmp)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Runs the full training loop. On a numeric failure the error is returned
/// and the last checkpoint written (if any) is left in place.
pub fn train(config: &TrainConfig) -> Result<TrainOutcome> {
    train_with(config, |_| {})
}

/// As [`train`], calling `progress` after every logged iteration.
pub fn train_with(config: &TrainConfig, mut progress: impl FnMut(&LogRow)) -> Result<TrainOutcome> {
    config.validate()?;
    let dims = config.dims;
    let mut params = init_params(&dims, config.dist.seed);
    let mut flat = params.flatten();
    let mut opt = OptimizerState::new(
        flat.len(),
        AdamW {
            weight_decay: config.weight_decay,
            ..AdamW::default()
        },
    );
    let held_out = if config.test_size > 0 {
        config.held_out()?
    } else {
        Vec::new()
    };
    let mut log_file = match &config.log_path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            writeln!(w, "{LOG_HEADER}")?;
            Some(w)
        }
        None => None,
    };
    let mut log = Vec::with_capacity(config.iterations);
    let mut evals = Vec::new();

    let checkpoint = |params: &NetworkParams| -> Result<()> {
        if let Some(path) = &config.checkpoint_path {
            save_atomically(
                &Checkpoint {
                    dims,
                    lambda: config.lambda,
                    seed: config.dist.seed,
                    params: params.clone(),
                },
                path,
            )?;
        }
        Ok(())
    };
    let evaluate = |params: &NetworkParams| -> Result<Option<EvalReport>> {
        if held_out.is_empty() {
            return Ok(None);
        }
        let mech = NeuralMechanism::new(dims, params.clone(), "net")?;
        metrics::evaluate(&mech, &held_out).map(Some)
    };

    for iter in 0..config.iterations {
        let batch = config.minibatch(iter)?;
        let step = loss_minibatch(&params, &dims, &batch, config.lambda)?;
        let lr = lr_schedule(config.base_lr, iter, &config.lr_milestones);
        opt.step(&mut flat, &step.grads, lr)?;
        params.assign_flat(&flat)?;
        let row = LogRow {
            iter,
            loss: step.loss,
            stv: step.stv,
            rgt: step.rgt,
            lr,
        };
        if let Some(w) = log_file.as_mut() {
            writeln!(w, "{}", row.to_csv())?;
        }
        progress(&row);
        log.push(row);

        let done = iter + 1;
        if config.eval_every > 0 && done % config.eval_every == 0 && done < config.iterations {
            if let Some(w) = log_file.as_mut() {
                w.flush()?;
            }
            checkpoint(&params)?;
            if let Some(report) = evaluate(&params)? {
                evals.push((done, report));
            }
        }
    }
    if let Some(w) = log_file.as_mut() {
        w.flush()?;
    }
    checkpoint(&params)?;
    if let Some(report) = evaluate(&params)? {
        evals.push((config.iterations, report));
    }
    Ok(TrainOutcome { params, log, evals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{lift_mechanism, BaselineKind};
    use crate::metrics::regret_agent;
    use crate::oracle::ConstantMechanism;
    use crate::prefs::example_market;

    fn small_dims() -> NetworkDims {
        NetworkDims::new(3, 3, 2, 8).unwrap()
    }

    #[test]
    fn constant_mechanism_has_no_defeating_report() {
        let p = example_market();
        let d = find_defeating_report_with(&ConstantMechanism::uniform(3, 3), &p, AgentId::firm(0))
            .unwrap();
        assert_eq!(d.gain, 0.0);
        assert_eq!(&d.report, p.order(AgentId::firm(0)));
    }

    #[test]
    fn wda_clone_defeated_by_truncation() {
        let p = example_market();
        let d = find_defeating_report_with(&lift_mechanism(BaselineKind::Wda), &p, AgentId::firm(0))
            .unwrap();
        assert_eq!(d.gain, 1.0);
        assert_eq!(d.threshold, Some(0));
        // the report must move f1 to w1, as w1,w2,⊥,w3 does
        let lie = p.with_report(AgentId::firm(0), d.report.clone()).unwrap();
        assert!(crate::mechanisms::da(&lie, crate::mechanisms::Proposing::Workers).contains(0, 0));
    }

    #[test]
    fn fully_truncated_agent_has_zero_gain() {
        let p = example_market()
            .with_report(AgentId::worker(0), PreferenceOrder::truncated(&[], 3).unwrap())
            .unwrap();
        let dims = small_dims();
        let d = find_defeating_report(&init_params(&dims, 2), &dims, &p, AgentId::worker(0)).unwrap();
        assert_eq!(d.gain, 0.0);
        assert_eq!(d.threshold, None);
    }

    #[test]
    fn batched_search_matches_single_agent_search() {
        let dims = small_dims();
        let params = init_params(&dims, 9);
        let profiles = DistributionConfig::uncorrelated(3, 3, 0.2, 4).sample_range(0, 3).unwrap();
        let batched = find_defeating_reports(&params, &dims, &profiles).unwrap();
        let mech = NeuralMechanism::new(dims, params.clone(), "net").unwrap();
        for (p, list) in profiles.iter().zip(&batched) {
            for d in list {
                let single = find_defeating_report_with(&mech, p, d.agent).unwrap();
                assert_eq!(single.report, d.report);
                assert!((single.gain - d.gain).abs() < 1e-12);
                let r = regret_agent(&mech, p, d.agent).unwrap();
                assert!((r - d.gain).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_is_affine_in_lambda() {
        let dims = small_dims();
        let params = init_params(&dims, 1);
        let profiles = DistributionConfig::uncorrelated(3, 3, 0.2, 8).sample_range(0, 4).unwrap();
        let reports = find_defeating_reports(&params, &dims, &profiles).unwrap();
        let g = record_loss(&params, &dims, &profiles, &reports, 1.0).unwrap();
        let stv = g.tape.scalar(g.stv);
        assert_eq!(g.tape.scalar(g.loss), stv);
        let rgt = g.rgt.map_or(0.0, |v| g.tape.scalar(v));
        let half = record_loss(&params, &dims, &profiles, &reports, 0.5).unwrap();
        assert!((half.tape.scalar(half.loss) - (0.5 * stv + 0.5 * rgt)).abs() < 1e-15);
        // surrogate is tight at the anchor
        assert!((rgt - mean_regret(&reports, 3, 3)).abs() < 1e-12);
    }

    #[test]
    fn zero_iterations_return_initial_params() {
        let dist = DistributionConfig::uncorrelated(2, 2, 0.2, 5);
        let mut cfg = TrainConfig::desk(dist, 0.5).unwrap();
        cfg.iterations = 0;
        cfg.test_size = 0;
        let out = train(&cfg).unwrap();
        assert_eq!(out.params, init_params(&cfg.dims, 5));
        assert!(out.log.is_empty());
    }

    #[test]
    fn presets() {
        let u = TrainConfig::paper(DistributionConfig::uncorrelated(4, 4, 0.2, 0), 0.5).unwrap();
        assert_eq!((u.base_lr, u.batch_size, u.iterations), (0.005, 1024, 50_000));
        assert_eq!(u.lr_milestones, vec![10_000, 25_000]);
        let c =
            TrainConfig::paper(DistributionConfig::correlated(4, 4, 0.5, 0.2, 0), 0.5).unwrap();
        assert_eq!(c.base_lr, 0.002);
        let d = TrainConfig::desk(DistributionConfig::uncorrelated(3, 3, 0.2, 0), 0.5).unwrap();
        assert_eq!((d.batch_size, d.iterations, d.test_size), (128, 2_000, 2_048));
        assert_eq!((d.dims.hidden_layers, d.dims.hidden_units), (3, 128));
        assert_eq!(d.lr_milestones, vec![1_000, 1_500]);
    }
}
