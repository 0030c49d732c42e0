//! Finite-difference check of the training loss gradient.

use matchnet::net::{init_params, NetworkDims, NetworkParams};
use matchnet::train::{find_defeating_reports, record_loss, DefeatingReport, LossGraph};
use matchnet::{DistributionConfig, PreferenceProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Draw {
    dims: NetworkDims,
    params: NetworkParams,
    profiles: Vec<PreferenceProfile>,
    reports: Vec<Vec<DefeatingReport>>,
    lambda: f64,
}

/// Signs of every leaky-ReLU input, the branch taken by each minimum and
/// the sign of each regret surrogate. The loss is smooth while these stay
/// fixed.
fn kink_signature(g: &LossGraph) -> Vec<bool> {
    let mut sig = Vec::new();
    for &v in &g.forward.pre_activations {
        sig.extend(g.tape.value(v).iter().map(|&x| x > 0.0));
    }
    let (a, b) = g.forward.min_operands;
    let (a, b) = (g.tape.value(a), g.tape.value(b));
    sig.extend(a.iter().zip(b.iter()).map(|(x, y)| x <= y));
    if let Some(v) = g.gains {
        sig.extend(g.tape.value(v).iter().map(|&x| x > 0.0));
    }
    sig
}

fn loss_at(d: &Draw, flat: &[f64]) -> (f64, Vec<bool>) {
    let mut p = d.params.clone();
    p.assign_flat(flat).unwrap();
    let g = record_loss(&p, &d.dims, &d.profiles, &d.reports, d.lambda).unwrap();
    (g.tape.scalar(g.loss), kink_signature(&g))
}

fn draw(seed: u64) -> Draw {
    let dims = NetworkDims::new(2, 2, 2, 16).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(&dims, seed);
    // larger weights than the default init so the regret term is active
    let flat: Vec<f64> = params.flatten().iter().map(|w| w * 3.0 + rng.gen_range(-0.1..0.1)).collect();
    params.assign_flat(&flat).unwrap();
    let profiles = DistributionConfig::uncorrelated(2, 2, 0.3, seed).sample_range(0, 6).unwrap();
    let reports = find_defeating_reports(&params, &dims, &profiles).unwrap();
    Draw {
        dims,
        params,
        profiles,
        reports,
        lambda: rng.gen_range(0.0..1.0),
    }
}

/// Largest relative error over coordinates whose ±h neighbourhood stays on
/// one smooth piece, and the number of coordinates checked. The
/// denominator is floored at `floor` times the largest gradient entry,
/// since the O(h²) truncation error swamps near-zero gradients.
fn check(d: &Draw, h: f64, floor: f64) -> (f64, usize) {
    let mut g = record_loss(&d.params, &d.dims, &d.profiles, &d.reports, d.lambda).unwrap();
    let sig = kink_signature(&g);
    let mut grads = g.tape.backward(g.loss).unwrap();
    let analytic = g.params.flat_grads(&mut grads);
    let floor = floor * analytic.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let flat = d.params.flatten();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += h;
        let mut minus = flat.clone();
        minus[i] -= h;
        let (lp, sp) = loss_at(d, &plus);
        let (lm, sm) = loss_at(d, &minus);
        if sp != sig || sm != sig {
            continue;
        }
        let fd = (lp - lm) / (2.0 * h);
        let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(floor);
        worst = worst.max(err);
        checked += 1;
    }
    (worst, checked)
}

#[test]
fn loss_gradient_matches_central_differences() {
    let mut total = 0;
    for seed in 0..5 {
        let d = draw(seed);
        let (worst, checked) = check(&d, 1e-3, 1e-3);
        assert!(worst < 1e-4, "seed {seed}: relative error {worst}");
        // halving h should shrink the error roughly fourfold
        let (finer, _) = check(&d, 5e-4, 1e-3);
        assert!(finer < worst.max(1e-9));
        total += checked;
    }
    assert!(total > 1000, "only {total} coordinates checked");
}

#[test]
fn regret_term_is_exercised() {
    let active = (0..5)
        .map(draw)
        .filter(|d| d.reports.iter().flatten().any(|r| r.gain > 0.0))
        .count();
    assert!(active >= 3);
}
