use rand::Rng;

use crate::error::Result;
use crate::rng::keyed_rng;

use super::layers::bce_with_logits;
use super::model::DropoutKeys;
use super::{init_weights, NetConfig, Tensor, Viprnet};

/// Analytic vs central-difference gradients over every parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub eps: f64,
    /// `max |a - n| / max(|a|, |n|, 1e-8)` over all parameter entries.
    pub max_rel_error: f64,
    /// `||a - n|| / max(||a||, ||n||)` over the concatenated gradient.
    pub l2_rel_error: f64,
    /// Parameter holding the worst entry.
    pub worst_param: String,
    pub checked: usize,
}

const DROPOUT_SEED: u64 = 0xd0;

fn loss(net: &Viprnet<f64>, x: &Tensor<f64>, labels: &[u8], keys: &[u64]) -> Result<f64> {
    let dropout = Some(DropoutKeys { seed: DROPOUT_SEED, keys });
    let (logits, _) = net.forward(x, dropout)?;
    Ok(bce_with_logits(&logits.values, labels).0)
}

/// Compares gradients of the mean BCE loss of `net` on `(x, labels)`,
/// dropout active with a fixed mask.
pub fn grad_check_on(net: &Viprnet<f64>, x: &Tensor<f64>, labels: &[u8], eps: f64) -> Result<GradCheckReport> {
    let keys: Vec<u64> = (0..labels.len() as u64).collect();
    let (logits, cache) = net.forward(x, Some(DropoutKeys { seed: DROPOUT_SEED, keys: &keys }))?;
    let (_, dz) = bce_with_logits(&logits.values, labels);
    let analytic = net.backward(&cache, &Tensor::new(logits.shape().to_vec(), dz)?)?;

    let names = net.config.param_specs();
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        eps,
        max_rel_error: 0.0,
        l2_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
    };
    let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
    for (p, grad) in analytic.iter().enumerate() {
        for (j, &a) in grad.iter().enumerate() {
            let orig = probe.params[p].values[j];
            probe.params[p].values[j] = orig + eps;
            let plus = loss(&probe, x, labels, &keys)?;
            probe.params[p].values[j] = orig - eps;
            let minus = loss(&probe, x, labels, &keys)?;
            probe.params[p].values[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst_param = names[p].0.clone();
            }
            diff2 += (a - numeric).powi(2);
            a2 += a * a;
            n2 += numeric * numeric;
            report.checked += 1;
        }
    }
    let scale = a2.sqrt().max(n2.sqrt());
    report.l2_rel_error = if scale > 0.0 { diff2.sqrt() / scale } else { 0.0 };
    Ok(report)
}

fn instance(cfg: &NetConfig, seed: u64) -> Result<(Viprnet<f64>, Tensor<f64>, Vec<u8>)> {
    let net = init_weights::<f64>(cfg, seed)?;
    let n = 2;
    let len = n * cfg.in_channels * cfg.input_size * cfg.input_size;
    let mut rng = keyed_rng(seed, &[0x6763]);
    let x = Tensor::new(
        vec![n, cfg.in_channels, cfg.input_size, cfg.input_size],
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )?;
    Ok((net, x, vec![0, 1]))
}

/// Gradient check of a seeded network on a seeded batch of two uniform
/// `[-1, 1)` inputs.
pub fn grad_check(cfg: &NetConfig, seed: u64, eps: f64) -> Result<GradCheckReport> {
    let (net, x, labels) = instance(cfg, seed)?;
    grad_check_on(&net, &x, &labels, eps)
}

/// [`grad_check`] at each step size in `eps`, on one fixed instance.
pub fn grad_check_sweep(cfg: &NetConfig, seed: u64, eps: &[f64]) -> Result<Vec<GradCheckReport>> {
    let (net, x, labels) = instance(cfg, seed)?;
    eps.iter().map(|&e| grad_check_on(&net, &x, &labels, e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_stack_passes() {
        let r = grad_check(&NetConfig::tiny(), 1, 1e-5).unwrap();
        assert_eq!(r.checked, NetConfig::tiny().parameter_count());
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn sweep_has_interior_minimum() {
        let eps = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9];
        let reports = grad_check_sweep(&NetConfig::tiny(), 1, &eps).unwrap();
        let errs: Vec<f64> = reports.iter().map(|r| r.l2_rel_error).collect();
        let best = (0..errs.len()).min_by(|&a, &b| errs[a].total_cmp(&errs[b])).unwrap();
        assert!((3..=5).contains(&best), "{errs:?}");
        assert!(errs[0] > 10.0 * errs[best] && errs[errs.len() - 1] > 10.0 * errs[best], "{errs:?}");
    }

    #[test]
    fn degenerate_zero_case_is_finite() {
        let cfg = NetConfig::tiny();
        let net = init_weights::<f64>(&cfg, 5).unwrap();
        let x = Tensor::zeros(vec![1, 1, 8, 8]);
        let r = grad_check_on(&net, &x, &[0], 1e-5).unwrap();
        assert!(r.max_rel_error.is_finite() && r.l2_rel_error.is_finite());
    }
}
