//! Ground-truth trajectories, jittered sampling times and noisy observations.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::phs_models::{BenchmarkSystem, InputSignal};

/// Fixed RK4 step used for every benchmark ground truth.
pub const DEFAULT_DT: f64 = 4e-3;

/// Fine-grid RK4 solution with the field value stored at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub derivatives: Vec<Vec<f64>>,
}

impl DenseTrajectory {
    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("trajectory is non-empty")
    }

    /// Cubic Hermite interpolation on the fixed grid.
    pub fn interpolate(&self, t: f64) -> Result<Vec<f64>> {
        let (start, end) = (self.start(), self.end());
        let slack = 1e-9 * (end - start).abs().max(1.0);
        if !(t >= start - slack && t <= end + slack) {
            return Err(Error::TimestampOutOfRange { time: t, start, end });
        }
        let t = t.clamp(start, end);
        let last = self.times.len() - 1;
        if last == 0 {
            return Ok(self.states[0].clone());
        }
        let dt = self.times[1] - self.times[0];
        let mut i = (((t - start) / dt).floor() as usize).min(last - 1);
        while i > 0 && self.times[i] > t {
            i -= 1;
        }
        while i + 1 < last && self.times[i + 1] < t {
            i += 1;
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let (x0, x1) = (&self.states[i], &self.states[i + 1]);
        let (d0, d1) = (&self.derivatives[i], &self.derivatives[i + 1]);
        Ok((0..x0.len())
            .map(|j| h00 * x0[j] + h10 * h * d0[j] + h01 * x1[j] + h11 * h * d1[j])
            .collect())
    }
}

/// Classical fixed-step RK4 with `steps` steps of size `dt` from `t0`.
///
/// The input is evaluated at the stage times.
pub fn rk4_integrate<F>(
    field: F,
    x0: &[f64],
    t0: f64,
    dt: f64,
    steps: usize,
    input: &InputSignal,
) -> Result<DenseTrajectory>
where
    F: Fn(&[f64], &[f64], f64) -> Vec<f64>,
{
    if !(dt > 0.0) {
        return Err(Error::NonPositiveStep { index: 0, step: dt });
    }
    let n = x0.len();
    let eval = |x: &[f64], t: f64| field(x, &input.eval(t), t);
    let axpy = |x: &[f64], k: &[f64], a: f64| -> Vec<f64> {
        x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
    };

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut derivatives = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    let mut k1 = eval(&x, t0);
    times.push(t0);
    states.push(x.clone());
    derivatives.push(k1.clone());

    for step in 0..steps {
        let t = t0 + step as f64 * dt;
        let k2 = eval(&axpy(&x, &k1, 0.5 * dt), t + 0.5 * dt);
        let k3 = eval(&axpy(&x, &k2, 0.5 * dt), t + 0.5 * dt);
        let k4 = eval(&axpy(&x, &k3, dt), t + dt);
        for i in 0..n {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: step + 1 });
        }
        let t_next = t0 + (step + 1) as f64 * dt;
        k1 = eval(&x, t_next);
        times.push(t_next);
        states.push(x.clone());
        derivatives.push(k1.clone());
    }
    Ok(DenseTrajectory {
        times,
        states,
        derivatives,
    })
}

/// Uniform grid on `[t0, t1]` plus i.i.d. `N(0, σ_j²)` jitter, clipped and sorted.
///
/// Ties (from clipping at the ends) are separated by the smallest representable
/// increment so the output is strictly increasing.
pub fn jittered_timestamps(t0: f64, t1: f64, n: usize, sigma_j: f64, seed: u64) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![t0];
    }
    let spacing = (t1 - t0) / (n - 1) as f64;
    let mut ts: Vec<f64> = (0..n).map(|k| t0 + k as f64 * spacing).collect();
    ts[n - 1] = t1;
    if sigma_j > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma_j).expect("sigma_j is finite and positive");
        for t in ts.iter_mut() {
            *t = (*t + normal.sample(&mut rng)).clamp(t0, t1);
        }
        ts.sort_by(|a, b| a.partial_cmp(b).expect("timestamps are finite"));
    }
    for i in 1..n {
        if ts[i] <= ts[i - 1] {
            ts[i] = ts[i - 1].next_up();
        }
    }
    // Bumping at the right end may exceed t1; walk back from there.
    if ts[n - 1] > t1 {
        ts[n - 1] = t1;
        for i in (0..n - 1).rev() {
            if ts[i] >= ts[i + 1] {
                ts[i] = ts[i + 1].next_down();
            }
        }
    }
    ts
}

/// Noisy samples of a trajectory: `x̃(t_k) = x(t_k) + ε_k`, `ε_k ~ N(0, σ_x² I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub timestamps: Vec<f64>,
    pub states: DMatrix<f64>,
    pub inputs: DMatrix<f64>,
    pub noise_variance: f64,
    pub seed: u64,
}

impl TrajectoryDataset {
    pub fn new(
        timestamps: Vec<f64>,
        states: DMatrix<f64>,
        inputs: DMatrix<f64>,
        noise_variance: f64,
        seed: u64,
    ) -> Result<Self> {
        let k = timestamps.len();
        for (rows, ctx) in [(states.nrows(), "dataset states"), (inputs.nrows(), "dataset inputs")] {
            if rows != k {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: k,
                    actual: rows,
                });
            }
        }
        if let Some(index) = (1..k).find(|&i| !(timestamps[i] > timestamps[i - 1])) {
            return Err(Error::NonIncreasingTimestamps { index });
        }
        Ok(Self {
            timestamps,
            states,
            inputs,
            noise_variance,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn state(&self, k: usize) -> Vec<f64> {
        self.states.row(k).iter().copied().collect()
    }

    pub fn input(&self, k: usize) -> Vec<f64> {
        self.inputs.row(k).iter().copied().collect()
    }

    pub fn state_rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|k| self.state(k)).collect()
    }

    /// Columnar text: metadata comments, a `t,x1..xn,u1..um` header, then one
    /// row per sample at shortest round-trip precision.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# noise_variance={:?}", self.noise_variance).unwrap();
        writeln!(out, "# seed={}", self.seed).unwrap();
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.state_dim()).map(|i| format!("x{i}")));
        header.extend((1..=self.input_dim()).map(|i| format!("u{i}")));
        writeln!(out, "{}", header.join(",")).unwrap();
        for k in 0..self.len() {
            let mut fields = vec![format!("{:?}", self.timestamps[k])];
            fields.extend(self.states.row(k).iter().map(|v| format!("{v:?}")));
            fields.extend(self.inputs.row(k).iter().map(|v| format!("{v:?}")));
            writeln!(out, "{}", fields.join(",")).unwrap();
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut noise_variance = 0.0;
        let mut seed = 0;
        let mut header: Option<(usize, usize)> = None;
        let mut ts = Vec::new();
        let mut xs: Vec<f64> = Vec::new();
        let mut us: Vec<f64> = Vec::new();
        let parse_err = |line: usize, reason: String| Error::Parse { line: line + 1, reason };

        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(meta) = line.strip_prefix('#') {
                if let Some((key, value)) = meta.trim().split_once('=') {
                    match key.trim() {
                        "noise_variance" => {
                            noise_variance = value.trim().parse().map_err(|e| parse_err(ln, format!("{e}")))?
                        }
                        "seed" => seed = value.trim().parse().map_err(|e| parse_err(ln, format!("{e}")))?,
                        _ => {}
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            match header {
                None => {
                    if fields.first() != Some(&"t") {
                        return Err(parse_err(ln, "expected header starting with `t`".into()));
                    }
                    let n = fields.iter().filter(|f| f.starts_with('x')).count();
                    let m = fields.iter().filter(|f| f.starts_with('u')).count();
                    if n + m + 1 != fields.len() {
                        return Err(parse_err(ln, "header must be `t,x1..xn,u1..um`".into()));
                    }
                    header = Some((n, m));
                }
                Some((n, m)) => {
                    if fields.len() != 1 + n + m {
                        return Err(parse_err(ln, format!("expected {} fields, got {}", 1 + n + m, fields.len())));
                    }
                    let values: Vec<f64> = fields
                        .iter()
                        .map(|f| f.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| parse_err(ln, format!("{e}")))?;
                    ts.push(values[0]);
                    xs.extend_from_slice(&values[1..1 + n]);
                    us.extend_from_slice(&values[1 + n..]);
                }
            }
        }
        let (n, m) = header.ok_or_else(|| parse_err(0, "missing header".into()))?;
        let k = ts.len();
        Self::new(
            ts,
            DMatrix::from_row_slice(k, n, &xs),
            DMatrix::from_row_slice(k, m, &us),
            noise_variance,
            seed,
        )
    }

    /// SHA-256 of the canonical text form.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Keeps the first `k` samples.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.len());
        Self {
            timestamps: self.timestamps[..k].to_vec(),
            states: self.states.rows(0, k).into_owned(),
            inputs: self.inputs.rows(0, k).into_owned(),
            noise_variance: self.noise_variance,
            seed: self.seed,
        }
    }
}

/// Samples the dense trajectory at `timestamps` and adds isotropic Gaussian noise.
/// Inputs are recorded without noise.
pub fn observe(
    dense: &DenseTrajectory,
    timestamps: &[f64],
    sigma_x: f64,
    seed: u64,
    input: &InputSignal,
) -> Result<TrajectoryDataset> {
    if sigma_x < 0.0 || !sigma_x.is_finite() {
        return Err(Error::InvalidParameter {
            name: "sigma_x".into(),
            reason: format!("must be non-negative, got {sigma_x}"),
        });
    }
    let k = timestamps.len();
    let n = dense.states.first().map_or(0, Vec::len);
    let m = input.dim();
    let mut states = DMatrix::zeros(k, n);
    let mut inputs = DMatrix::zeros(k, m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma_x.max(0.0)).expect("sigma_x is finite");
    for (row, &t) in timestamps.iter().enumerate() {
        let truth = dense.interpolate(t)?;
        for (i, v) in truth.into_iter().enumerate() {
            let noise = if sigma_x > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            states[(row, i)] = v + noise;
        }
        for (j, v) in input.eval(t).into_iter().enumerate() {
            inputs[(row, j)] = v;
        }
    }
    TrajectoryDataset::new(timestamps.to_vec(), states, inputs, sigma_x * sigma_x, seed)
}

/// Sampling protocol for a benchmark run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SamplingConfig {
    pub t0: f64,
    pub t1: f64,
    pub samples: usize,
    pub sigma_x: f64,
    pub sigma_j: f64,
    pub dt: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            t0: 0.0,
            t1: 20.0,
            samples: 100,
            sigma_x: 0.05,
            sigma_j: 0.05,
            dt: DEFAULT_DT,
        }
    }
}

/// Seed offset separating the noise stream from the jitter stream.
const NOISE_STREAM: u64 = 0x9E37_79B9_7F4A_7C15;

/// Ground truth plus a noisy, jittered dataset for one benchmark.
pub fn simulate_benchmark(
    system: &BenchmarkSystem,
    config: &SamplingConfig,
    seed: u64,
) -> Result<(DenseTrajectory, TrajectoryDataset)> {
    let steps = ((config.t1 - config.t0) / config.dt).round() as usize;
    let dense = rk4_integrate(
        |x: &[f64], u: &[f64], _t: f64| system.true_field(x, u),
        &system.initial_state,
        config.t0,
        config.dt,
        steps,
        &system.input,
    )?;
    let ts = jittered_timestamps(config.t0, config.t1, config.samples, config.sigma_j, seed);
    let mut dataset = observe(&dense, &ts, config.sigma_x, seed ^ NOISE_STREAM, &system.input)?;
    dataset.seed = seed;
    Ok((dense, dataset))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phs_models::mass_spring;
    use proptest::prelude::*;

    fn decay() -> impl Fn(&[f64], &[f64], f64) -> Vec<f64> {
        |x: &[f64], _u: &[f64], _t| vec![-x[0]]
    }

    #[test]
    fn rk4_single_step_matches_exponential() {
        let traj = rk4_integrate(decay(), &[1.0], 0.0, 0.1, 1, &InputSignal::Zero).unwrap();
        // One RK4 step reproduces the degree-4 Taylor polynomial of e^{-h}.
        let h: f64 = 0.1;
        let taylor = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((traj.states[1][0] - taylor).abs() < 1e-15);
        assert!((traj.states[1][0] - (-h).exp()).abs() < h.powi(5) / 120.0);
    }

    #[test]
    fn rk4_zero_field_is_constant() {
        let traj = rk4_integrate(|_x: &[f64], _u: &[f64], _| vec![0.0, 0.0], &[0.3, -2.0], 0.0, 0.01, 50, &InputSignal::Zero)
            .unwrap();
        assert!(traj.states.iter().all(|s| s == &vec![0.3, -2.0]));
    }

    #[test]
    fn rk4_reports_blow_up() {
        let err = rk4_integrate(|x: &[f64], _u: &[f64], _| vec![x[0] * x[0]], &[1e200], 0.0, 1.0, 5, &InputSignal::Zero)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteState { step: 1 }));
    }

    #[test]
    fn harmonic_oscillator_period() {
        let mut s = mass_spring(1.0);
        s.input = InputSignal::Zero;
        let period = 2.0 * std::f64::consts::PI;
        let steps = (period / DEFAULT_DT).round() as usize;
        let dt = period / steps as f64;
        let traj = rk4_integrate(|x: &[f64], u: &[f64], _| s.true_field(x, u), &[1.0, 0.0], 0.0, dt, steps, &s.input)
            .unwrap();
        let end = traj.states.last().unwrap();
        assert!(((end[0] - 1.0).powi(2) + end[1].powi(2)).sqrt() < 1e-6);
    }

    #[test]
    fn rk4_global_error_is_fourth_order() {
        let mut s = mass_spring(1.0);
        s.input = InputSignal::Zero;
        let horizon = 5.0;
        let errs: Vec<f64> = [0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&dt| {
                let steps = (horizon / dt) as usize;
                let traj = rk4_integrate(|x: &[f64], u: &[f64], _| s.true_field(x, u), &[1.0, 0.0], 0.0, dt, steps, &s.input)
                    .unwrap();
                let e = traj.states.last().unwrap();
                ((e[0] - horizon.cos()).powi(2) + (e[1] + horizon.sin()).powi(2)).sqrt()
            })
            .collect();
        for w in errs.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((3.5..=4.5).contains(&slope), "slope {slope}");
        }
    }

    #[test]
    fn zero_jitter_is_uniform_grid() {
        let ts = jittered_timestamps(0.0, 20.0, 101, 0.0, 9);
        for (k, t) in ts.iter().enumerate() {
            assert!((t - 0.2 * k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn jitter_mean_absolute_deviation_is_half_normal() {
        // Monte-Carlo oracle: E|ε| = σ √(2/π) ≈ 0.0399 for σ = 0.05.
        let (t0, t1, n, sigma) = (0.0, 20.0, 100, 0.05);
        let spacing = (t1 - t0) / (n - 1) as f64;
        let mut total = 0.0;
        let mut count = 0.0;
        for seed in 0..1000 {
            let ts = jittered_timestamps(t0, t1, n, sigma, seed);
            for (k, t) in ts.iter().enumerate() {
                total += (t - k as f64 * spacing).abs();
                count += 1.0;
            }
        }
        let mad = total / count;
        let expected = sigma * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mad - expected).abs() < 0.3 * expected, "mad {mad}");
    }

    proptest! {
        #[test]
        fn jittered_timestamps_are_sorted_and_clipped(seed in 0u64..10_000, sigma in 0.0f64..2.0, n in 2usize..60) {
            let ts = jittered_timestamps(0.0, 5.0, n, sigma, seed);
            prop_assert_eq!(ts.len(), n);
            prop_assert!(ts.windows(2).all(|w| w[1] > w[0]));
            prop_assert!(ts.iter().all(|t| (0.0..=5.0).contains(t)));
        }
    }

    #[test]
    fn heavy_clipping_still_strictly_increasing() {
        let ts = jittered_timestamps(0.0, 1.0, 50, 10.0, 3);
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
        assert!(ts[0] >= 0.0 && ts[49] <= 1.0);
    }

    fn dense_mass_spring() -> (crate::phs_models::BenchmarkSystem, DenseTrajectory) {
        let s = mass_spring(1.0);
        let traj = rk4_integrate(|x: &[f64], u: &[f64], _| s.true_field(x, u), &s.initial_state, 0.0, DEFAULT_DT, 2500, &s.input)
            .unwrap();
        (s, traj)
    }

    #[test]
    fn noiseless_observation_equals_interpolated_truth() {
        let (s, dense) = dense_mass_spring();
        let ts = jittered_timestamps(0.0, 10.0, 40, 0.05, 1);
        let ds = observe(&dense, &ts, 0.0, 2, &s.input).unwrap();
        for (k, &t) in ts.iter().enumerate() {
            assert_eq!(ds.state(k), dense.interpolate(t).unwrap());
            assert_eq!(ds.input(k), s.input.eval(t));
        }
        // Hermite interpolation is far below any noise level of interest.
        let exact = |t: f64| [t.cos() + 0.5 * t * t.sin(), -t.sin() + 0.5 * (t.sin() + t * t.cos())];
        for t in [0.0123, 3.3337, 9.9999] {
            let x = dense.interpolate(t).unwrap();
            let e = exact(t);
            assert!((x[0] - e[0]).abs() < 1e-8 && (x[1] - e[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn observation_noise_variance() {
        let (s, dense) = dense_mass_spring();
        let ts = jittered_timestamps(0.0, 10.0, 5000, 0.0, 0);
        let sigma = 0.1;
        let ds = observe(&dense, &ts, sigma, 77, &s.input).unwrap();
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut count = 0.0;
        for (k, &t) in ts.iter().enumerate() {
            let truth = dense.interpolate(t).unwrap();
            for i in 0..2 {
                let e = ds.states[(k, i)] - truth[i];
                sum += e;
                sq += e * e;
                count += 1.0;
            }
        }
        let mean = sum / count;
        let var = sq / count - mean * mean;
        assert!((var - sigma * sigma).abs() < 0.05 * sigma * sigma, "var {var}");
        assert_eq!(ds.noise_variance, sigma * sigma);
    }

    #[test]
    fn observation_is_deterministic_and_range_checked() {
        let (s, dense) = dense_mass_spring();
        let ts = jittered_timestamps(0.0, 10.0, 30, 0.05, 4);
        let a = observe(&dense, &ts, 0.05, 8, &s.input).unwrap();
        let b = observe(&dense, &ts, 0.05, 8, &s.input).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            observe(&dense, &[0.0, 11.0], 0.05, 8, &s.input),
            Err(Error::TimestampOutOfRange { .. })
        ));
    }

    #[test]
    fn dataset_text_round_trips_bit_exactly() {
        let s = mass_spring(1.0);
        let (_, ds) = simulate_benchmark(&s, &SamplingConfig { t1: 5.0, samples: 25, ..Default::default() }, 42).unwrap();
        let text = ds.to_text();
        assert!(text.lines().nth(2).unwrap() == "t,x1,x2,u1");
        let back = TrajectoryDataset::from_text(&text).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.states.iter().zip(ds.states.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.fingerprint(), ds.fingerprint());
    }

    #[test]
    fn malformed_dataset_text_is_rejected() {
        assert!(matches!(TrajectoryDataset::from_text("t,x1\n0.0,abc\n"), Err(Error::Parse { line: 2, .. })));
        assert!(TrajectoryDataset::from_text("q,x1\n").is_err());
        assert!(matches!(
            TrajectoryDataset::from_text("t,x1,u1\n0.0,1.0,0.0\n0.0,1.0,0.0\n"),
            Err(Error::NonIncreasingTimestamps { .. })
        ));
    }
}
