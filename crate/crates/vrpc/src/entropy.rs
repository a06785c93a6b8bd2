//! Factorized entropy model over latent elements: per-element logistic
//! densities trained jointly with the network, the additive-noise
//! quantization surrogate, rate accounting, and the decaying weight schedule
//! that concentrates information in low-index elements.
//!
//! Optimization uses natural logs; reported rates are bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{sigmoid, softplus, ParamStore, Tape, Tensor, VarId};
use crate::{Error, Result};

/// Probabilities below this floor are clamped before logs and coding.
pub const LIKELIHOOD_FLOOR: f64 = 1.0 / 4294967296.0; // 2^-32

pub const MU_PARAM: &str = "ent.mu";
pub const RAW_SCALE_PARAM: &str = "ent.raw_s";

/// Per-element logistic densities (location, positive scale). This is the
/// inference-time view; during training the parameters live in the
/// `ParamStore` under [`MU_PARAM`] and [`RAW_SCALE_PARAM`] (scale via
/// softplus to stay positive).
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedDensity {
    pub mu: Vec<f64>,
    pub scale: Vec<f64>,
}

impl FactorizedDensity {
    pub fn from_params(store: &ParamStore) -> Result<FactorizedDensity> {
        let mu = store
            .get(MU_PARAM)
            .ok_or_else(|| Error::InvalidArgument(format!("missing {MU_PARAM}")))?
            .data
            .clone();
        let raw = &store
            .get(RAW_SCALE_PARAM)
            .ok_or_else(|| Error::InvalidArgument(format!("missing {RAW_SCALE_PARAM}")))?
            .data;
        Ok(FactorizedDensity {
            mu,
            scale: raw.iter().map(|&r| softplus(r)).collect(),
        })
    }

    /// Register fresh density parameters for a length-l latent.
    pub fn init_params(store: &mut ParamStore, l: usize) {
        store.insert(MU_PARAM, Tensor::zeros(vec![1, l]));
        // softplus(0.54...) ~= 1.0 starting scale
        let raw0 = 1.0f64.exp_m1().ln();
        store.insert(
            RAW_SCALE_PARAM,
            Tensor::new(vec![1, l], vec![raw0; l]),
        );
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn cdf(&self, i: usize, v: f64) -> f64 {
        sigmoid((v - self.mu[i]) / self.scale[i])
    }

    /// P_i(v) = CDF_i(v + 1/2) - CDF_i(v - 1/2), floored at 2^-32.
    pub fn likelihood(&self, i: usize, v: f64) -> f64 {
        let p = self.cdf(i, v + 0.5) - self.cdf(i, v - 0.5);
        p.clamp(LIKELIHOOD_FLOOR, 1.0)
    }

    pub fn likelihoods(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.likelihood(i, v))
            .collect()
    }
}

/// Training surrogate: y + u with u ~ Uniform(-1/2, 1/2), elementwise.
/// Deterministic in the seed; the gradient through it is the identity.
pub fn noisy_quantize(y: &[f64], seed: u64) -> Vec<f64> {
    let noise = uniform_noise(y.len(), seed);
    y.iter().zip(&noise).map(|(&v, &u)| v + u).collect()
}

pub fn uniform_noise(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen::<f64>() - 0.5).collect()
}

/// Round half away from zero, the coding-time quantizer.
pub fn hard_quantize(y: &[f64]) -> Vec<i32> {
    y.iter().map(|&v| v.round() as i32).collect()
}

/// Per-element and aggregate rate in bits for one latent vector.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub per_element_bits: Vec<f64>,
    pub total_bits: f64,
    pub bits_per_point: f64,
}

/// Rate of one coded vector against the model: -log2 P per element.
/// `n_points` converts total bits into bpp.
pub fn rate_report(probabilities: &[f64], n_points: usize) -> RateReport {
    let per_element_bits: Vec<f64> = probabilities.iter().map(|p| -p.log2()).collect();
    let total_bits: f64 = per_element_bits.iter().sum();
    RateReport {
        total_bits,
        bits_per_point: total_bits / n_points as f64,
        per_element_bits,
    }
}

/// Mean total bits over a batch of per-vector probability lists.
pub fn batch_rate_bits(batch: &[Vec<f64>]) -> f64 {
    let total: f64 = batch
        .iter()
        .map(|probs| probs.iter().map(|p| -p.log2()).sum::<f64>())
        .sum();
    total / batch.len() as f64
}

/// Exponentially decaying per-element weights: w_i = a * exp(-b * i).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSchedule {
    pub a: f64,
    pub b: f64,
    pub weights: Vec<f64>,
}

impl WeightSchedule {
    pub fn new(a: f64, b: f64, l: usize) -> Result<WeightSchedule> {
        if a <= 0.0 || b < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "weight schedule needs a > 0, b >= 0; got a={a}, b={b}"
            )));
        }
        Ok(WeightSchedule {
            a,
            b,
            weights: (0..l).map(|i| a * (-b * i as f64).exp()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Weighted rate in bits: sum_i -w_i log2 P_i.
pub fn weighted_rate_bits(probabilities: &[f64], schedule: &WeightSchedule) -> Result<f64> {
    if probabilities.len() != schedule.len() {
        return Err(Error::ShapeMismatch {
            op: "weighted_rate",
            details: format!(
                "{} probabilities vs {} weights",
                probabilities.len(),
                schedule.len()
            ),
        });
    }
    Ok(probabilities
        .iter()
        .zip(&schedule.weights)
        .map(|(p, w)| -w * p.log2())
        .sum())
}

/// Keep the first k elements for coding; decode fills positions k.. with 0.
pub fn truncate(latent: &[i32], keep: usize) -> Result<&[i32]> {
    if keep == 0 || keep > latent.len() {
        return Err(Error::InvalidArgument(format!(
            "truncation keep={keep} out of range 1..={}",
            latent.len()
        )));
    }
    Ok(&latent[..keep])
}

pub fn pad_truncated(kept: &[i32], full_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; full_len];
    for (i, &v) in kept.iter().enumerate() {
        out[i] = v as f64;
    }
    out
}

/// Tape-recorded weighted rate term in nats for training:
/// sum_i -w_i ln P_i(y_i + noise_i), with the scale positively
/// reparameterized through softplus. Differentiable w.r.t. the latent and
/// both density parameter vectors.
pub fn weighted_rate_loss_nats(
    tape: &mut Tape,
    y: VarId,
    noise: &[f64],
    store: &ParamStore,
    schedule: &WeightSchedule,
) -> Result<VarId> {
    let l = tape.value(y).numel();
    if noise.len() != l || schedule.len() != l {
        return Err(Error::ShapeMismatch {
            op: "weighted_rate_loss",
            details: format!("latent {l}, noise {}, weights {}", noise.len(), schedule.len()),
        });
    }
    let noise_t = tape.constant(Tensor::new(vec![1, l], noise.to_vec()));
    let y_tilde = tape.add(y, noise_t)?;
    let mu = tape.param(store, MU_PARAM)?;
    let raw_s = tape.param(store, RAW_SCALE_PARAM)?;
    let s = tape.softplus(raw_s);
    let centered = tape.sub(y_tilde, mu)?;
    let hi = tape.add_scalar(centered, 0.5);
    let lo = tape.add_scalar(centered, -0.5);
    let hi_u = tape.div(hi, s)?;
    let lo_u = tape.div(lo, s)?;
    let cdf_hi = tape.sigmoid(hi_u);
    let cdf_lo = tape.sigmoid(lo_u);
    let p = tape.sub(cdf_hi, cdf_lo)?;
    let p = tape.clamp_min(p, LIKELIHOOD_FLOOR);
    let log_p = tape.log(p);
    let w = tape.constant(Tensor::new(vec![1, l], schedule.weights.clone()));
    let weighted = tape.mul(log_p, w)?;
    let sum = tape.reduce_sum(weighted);
    Ok(tape.neg(sum))
}

pub const LN_2: f64 = std::f64::consts::LN_2;

#[cfg(test)]
mod tests {
    use super::*;

    fn logistic_density(l: usize, mu: f64, scale: f64) -> FactorizedDensity {
        FactorizedDensity {
            mu: vec![mu; l],
            scale: vec![scale; l],
        }
    }

    #[test]
    fn noisy_quantize_support_and_determinism() {
        let y: Vec<f64> = (0..100).map(|i| i as f64 * 0.37 - 5.0).collect();
        let a = noisy_quantize(&y, 42);
        let b = noisy_quantize(&y, 42);
        assert_eq!(a, b);
        for (orig, noisy) in y.iter().zip(&a) {
            assert!((noisy - orig).abs() <= 0.5);
        }
    }

    #[test]
    fn noisy_quantize_mean_near_zero() {
        let y = vec![0.0; 100_000];
        let noisy = noisy_quantize(&y, 7);
        let mean: f64 = noisy.iter().sum::<f64>() / noisy.len() as f64;
        assert!(mean.abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn hard_quantize_rounding() {
        assert_eq!(hard_quantize(&[0.4, -0.4]), vec![0, 0]);
        assert_eq!(hard_quantize(&[2.5, -2.5]), vec![3, -3]);
        // idempotent
        let q = hard_quantize(&[1.7, -0.2, 3.5]);
        let as_f: Vec<f64> = q.iter().map(|&v| v as f64).collect();
        assert_eq!(hard_quantize(&as_f), q);
    }

    #[test]
    fn likelihood_closed_form_wide_scale() {
        let d = logistic_density(1, 0.0, 100.0);
        let expected = sigmoid(0.5 / 100.0) - sigmoid(-0.5 / 100.0);
        assert!((d.likelihood(0, 0.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn likelihood_symmetric_about_mu() {
        let d = logistic_density(1, 2.0, 0.7);
        for v in [-3.0, 0.0, 1.0, 4.5] {
            let mirrored = 2.0 * 2.0 - v;
            assert!((d.likelihood(0, v) - d.likelihood(0, mirrored)).abs() < 1e-12);
        }
    }

    #[test]
    fn likelihood_clamped_range() {
        let d = logistic_density(1, 0.0, 0.01);
        let p_far = d.likelihood(0, 1000.0);
        assert!(p_far >= LIKELIHOOD_FLOOR);
        assert!(d.likelihood(0, 0.0) <= 1.0);
    }

    #[test]
    fn likelihood_lattice_sum_at_most_one() {
        let d = logistic_density(1, 0.3, 1.7);
        let sum: f64 = (-1_000_000i64..=1_000_000)
            .map(|v| {
                let p = d.cdf(0, v as f64 + 0.5) - d.cdf(0, v as f64 - 0.5);
                p.max(0.0)
            })
            .sum();
        assert!(sum <= 1.0 + 1e-9, "sum {sum}");
    }

    #[test]
    fn rate_uniform_256_symbols() {
        let probs = vec![1.0 / 256.0; 10];
        let report = rate_report(&probs, 10);
        for b in &report.per_element_bits {
            assert!((b - 8.0).abs() < 1e-12);
        }
        assert!((report.total_bits - 80.0).abs() < 1e-9);
        assert!((report.bits_per_point - 8.0).abs() < 1e-12);
    }

    #[test]
    fn rate_certainty_zero() {
        let report = rate_report(&[1.0, 1.0, 1.0], 3);
        assert_eq!(report.total_bits, 0.0);
    }

    #[test]
    fn batch_rate_of_identical_items() {
        let probs = vec![0.25, 0.5];
        let single = batch_rate_bits(&[probs.clone()]);
        let batch = batch_rate_bits(&[probs.clone(), probs.clone(), probs]);
        assert!((single - batch).abs() < 1e-12);
    }

    #[test]
    fn schedule_reference_values() {
        let s = WeightSchedule::new(15.0, 0.003, 1024).unwrap();
        assert_eq!(s.weights[0], 15.0);
        let expected_last = 15.0 * (-0.003f64 * 1023.0).exp();
        assert!((s.weights[1023] - expected_last).abs() < 1e-12);
        assert!((expected_last - 0.697).abs() < 1e-3);
        // strictly decreasing
        for w in s.weights.windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn weighted_rate_b_zero_reduces_to_scaled_rate() {
        let probs = vec![0.1, 0.25, 0.5, 0.9];
        let a = 15.0;
        let schedule = WeightSchedule::new(a, 0.0, probs.len()).unwrap();
        let weighted = weighted_rate_bits(&probs, &schedule).unwrap();
        let plain: f64 = probs.iter().map(|p| -p.log2()).sum();
        assert!((weighted - a * plain).abs() < 1e-12);
    }

    #[test]
    fn weighted_rate_length_mismatch() {
        let schedule = WeightSchedule::new(1.0, 0.1, 3).unwrap();
        assert!(weighted_rate_bits(&[0.5, 0.5], &schedule).is_err());
    }

    #[test]
    fn truncate_ranges() {
        let latent = vec![3, -1, 2, 0];
        assert_eq!(truncate(&latent, 4).unwrap(), &latent[..]);
        assert_eq!(truncate(&latent, 2).unwrap(), &[3, -1]);
        assert!(truncate(&latent, 0).is_err());
        assert!(truncate(&latent, 5).is_err());
        assert_eq!(pad_truncated(&[3, -1], 4), vec![3.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn rate_loss_gradient_matches_finite_differences() {
        let l = 6;
        let mut store = ParamStore::new();
        FactorizedDensity::init_params(&mut store, l);
        // move mu off zero so the check is away from symmetry points
        for (i, v) in store.get_mut(MU_PARAM).unwrap().data.iter_mut().enumerate() {
            *v = 0.1 * i as f64 - 0.2;
        }
        let y_data: Vec<f64> = (0..l).map(|i| 0.7 * i as f64 - 2.0).collect();
        store.insert("y", Tensor::new(vec![1, l], y_data));
        let noise = uniform_noise(l, 11);
        let schedule = WeightSchedule::new(2.0, 0.1, l).unwrap();

        let build = |tape: &mut Tape, store: &ParamStore| {
            let y = tape.param(store, "y").unwrap();
            weighted_rate_loss_nats(tape, y, &noise, store, &schedule).unwrap()
        };

        let mut tape = Tape::new();
        let loss = build(&mut tape, &store);
        tape.backward(loss, &mut store).unwrap();

        let names: Vec<String> = store.names().map(String::from).collect();
        for name in names {
            let n = store.get(&name).unwrap().numel();
            for i in 0..n {
                let analytic = store.grad(&name).unwrap().data[i];
                let orig = store.get(&name).unwrap().data[i];
                let h = 1e-4 * orig.abs().max(1.0);
                store.get_mut(&name).unwrap().data[i] = orig + h;
                let mut tp = Tape::new();
                let fp = {
                    let id = build(&mut tp, &store);
                    tp.value(id).item()
                };
                store.get_mut(&name).unwrap().data[i] = orig - h;
                let mut tm = Tape::new();
                let fm = {
                    let id = build(&mut tm, &store);
                    tm.value(id).item()
                };
                store.get_mut(&name).unwrap().data[i] = orig;
                let numeric = (fp - fm) / (2.0 * h);
                let denom = analytic.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    (analytic - numeric).abs() / denom < 1e-4,
                    "{name}[{i}]: {analytic} vs {numeric}"
                );
            }
        }
    }
}
