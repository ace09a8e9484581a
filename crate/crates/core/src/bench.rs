//! Cost scaling with stencil size: preprocessing payload, process memory and
//! epoch time for each operator, with log-log slope fits.

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloudgen::{Dataset, DatasetMeta, RegionOfInfluence, VectorCloud, N_FEATURES};
use crate::error::{Error, Result};
use crate::gkn::{edge_payload_bytes, EdgeMode};
use crate::scalar::Scalar;
use crate::trainer::{fit_normalizer, train, LabelScale, ModelKind, Network, TrainConfig, TrainingSet};

/// Least-squares line through `(ln x, ln y)`: `(slope, intercept)`.
pub fn fit_loglog_slope(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::dim("slope fit points", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("a slope fit needs at least two points".into()));
    }
    if x.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("all x values are equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// The integer `p` for which `y[i] * x[0]^p == y[0] * x[i]^p` holds exactly
/// for every point, if there is one (checked for `p` in `0..=4`).
pub fn exact_power_exponent(x: &[u64], y: &[u64]) -> Option<u32> {
    if x.len() != y.len() || x.len() < 2 || x.contains(&0) || y.contains(&0) {
        return None;
    }
    (0..=4u32).find(|&p| {
        x.iter().zip(y).all(|(&xi, &yi)| {
            let lhs = (yi as u128).checked_mul((x[0] as u128).pow(p));
            let rhs = (y[0] as u128).checked_mul((xi as u128).pow(p));
            lhs.is_some() && lhs == rhs
        })
    })
}

/// Bytes of preprocessed training tensors for `samples` clouds of size `n`:
/// edge blocks for GKN, the feature matrices themselves for VCNN.
pub fn payload_bytes(kind: ModelKind, samples: usize, n: usize) -> u64 {
    match kind {
        ModelKind::GknRi => edge_payload_bytes(samples, n, EdgeMode::RotationInvariant.dim()),
        ModelKind::GknRaw => edge_payload_bytes(samples, n, EdgeMode::RawConcat.dim()),
        ModelKind::Vcnn | ModelKind::VcnnSplit => samples as u64 * n as u64 * N_FEATURES as u64 * 8,
    }
}

/// Peak resident set size of this process (`VmHWM`), where the platform
/// reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

fn check_sizes(ns: &[usize]) -> Result<()> {
    if ns.len() < 2 {
        return Err(Error::InvalidArgument("need at least two stencil sizes".into()));
    }
    if ns.windows(2).any(|w| w[0] >= w[1]) || ns[0] == 0 {
        return Err(Error::InvalidArgument(format!("stencil sizes must be positive and strictly increasing, got {ns:?}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryPoint {
    pub n: usize,
    pub payload_bytes: u64,
    pub rss_bytes: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemorySeries {
    pub kind: ModelKind,
    pub points: Vec<MemoryPoint>,
    /// Set when a stencil size was skipped because its payload exceeded
    /// the cap; later sizes are skipped too.
    pub truncated: bool,
}

/// Builds the preprocessed tensors for each `n` (edge blocks for GKN, the
/// clouds for VCNN) and records their exact size and the process peak RSS.
pub fn measure_preprocess_memory(
    kind: ModelKind,
    ns: &[usize],
    samples: usize,
    cap_bytes: u64,
    seed: u64,
) -> Result<MemorySeries> {
    check_sizes(ns)?;
    let mut series = MemorySeries {
        kind,
        points: Vec::new(),
        truncated: false,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let network = Network::<f64>::new(kind, &mut rng)?;
    for &n in ns {
        let payload = payload_bytes(kind, samples, n);
        if payload > cap_bytes {
            log::warn!("{kind}: n = {n} needs {payload} bytes, above the {cap_bytes} byte cap; series truncated");
            series.truncated = true;
            break;
        }
        let data = synthetic_dataset(samples, n, seed ^ n as u64);
        let stored: u64 = if kind.is_gkn() {
            let clouds = data
                .samples
                .iter()
                .map(|s| network.prepare(s.q.view()).map(|p| p.expect("gkn")))
                .collect::<Result<Vec<_>>>()?;
            clouds.iter().map(|c| (c.edges.len() * 8) as u64).sum()
        } else {
            data.samples.iter().map(|s| (s.q.len() * 8) as u64).sum()
        };
        debug_assert_eq!(stored, payload);
        series.points.push(MemoryPoint {
            n,
            payload_bytes: stored,
            rss_bytes: peak_rss_bytes(),
        });
    }
    Ok(series)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimePoint {
    pub n: usize,
    pub median_seconds: f64,
    pub runs: Vec<f64>,
    /// `(max - min) / median` above 20 %.
    pub noisy: bool,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

/// Median wall time of one training epoch for each `n`, after one untimed
/// warm-up epoch. Training runs on the calling thread.
pub fn measure_epoch_time<T: Scalar>(
    kind: ModelKind,
    ns: &[usize],
    make_dataset: &dyn Fn(usize) -> Result<Dataset>,
    repetitions: usize,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<TimePoint>> {
    check_sizes(ns)?;
    if repetitions < 3 {
        return Err(Error::InvalidArgument("timing needs at least three repetitions".into()));
    }
    let mut out = Vec::with_capacity(ns.len());
    let mut count = None;
    for &n in ns {
        let data = make_dataset(n)?;
        match count {
            None => count = Some(data.len()),
            Some(c) if c != data.len() => {
                return Err(Error::InvalidArgument(format!(
                    "sample count must not depend on n ({c} vs {})",
                    data.len()
                )))
            }
            _ => {}
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut network = Network::<T>::new(kind, &mut rng)?;
        let normalizer = fit_normalizer(&data)?;
        let labels = LabelScale::fit(&data.labels())?;
        let set = TrainingSet::new(&network, &data, &normalizer, labels, u64::MAX)?;
        let cfg = TrainConfig {
            epochs: 1,
            batch_size,
            seed,
            kind,
            deterministic: true,
            ..Default::default()
        };
        train(&mut network, &set, &cfg)?;
        let mut runs = Vec::with_capacity(repetitions);
        for _ in 0..repetitions {
            let t = Instant::now();
            train(&mut network, &set, &cfg)?;
            runs.push(t.elapsed().as_secs_f64());
        }
        let med = median(&runs);
        let spread = runs.iter().copied().fold(f64::MIN, f64::max) - runs.iter().copied().fold(f64::MAX, f64::min);
        let noisy = spread > 0.2 * med;
        if noisy {
            log::warn!("{kind}: n = {n} epoch times vary by more than 20% ({runs:?})");
        }
        log::info!("{kind}: n = {n}, median epoch {med:.4} s");
        out.push(TimePoint {
            n,
            median_seconds: med,
            runs,
            noisy,
        });
    }
    Ok(out)
}

/// Random clouds with feature ranges similar to sampled flow data. Only
/// the shapes matter for cost measurements.
pub fn synthetic_dataset(samples: usize, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..samples)
        .map(|_| {
            let q = Array2::from_shape_fn((n, N_FEATURES), |(_, k)| match k {
                0..=3 => rng.random_range(-2.0..2.0),
                6 => f64::from(rng.random_range(0u8..2)),
                _ => rng.random_range(0.0..1.0),
            });
            VectorCloud {
                q,
                tau: rng.random_range(0.0..1.0),
                center: [0.0, 0.0],
                ellipse: RegionOfInfluence {
                    l1: 1.0,
                    l2: 1.0,
                    axis: [1.0, 0.0],
                    center: [0.0, 0.0],
                },
                source: 0,
                cell: (0, 0),
            }
        })
        .collect();
    Dataset {
        samples,
        meta: DatasetMeta {
            stencil: n,
            eps: 0.01,
            nu: 0.02,
            zeta: 1.0,
            seed,
            fields: vec![],
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub kind: ModelKind,
    pub n: usize,
    pub payload_bytes: u64,
    pub rss_bytes: Option<u64>,
    pub epoch_seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub stencil_sizes: Vec<usize>,
    pub rows: Vec<ScalingRow>,
    /// `(series name, slope)`, e.g. `("gkn_ri payload", 2.0)`.
    pub slopes: Vec<(String, f64)>,
    pub truncated: Vec<ModelKind>,
}

impl ScalingReport {
    pub fn slope(&self, name: &str) -> Option<f64> {
        self.slopes.iter().find(|(k, _)| k == name).map(|s| s.1)
    }

    /// Rows as CSV, followed by `#`-prefixed slope lines.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,n,payload_bytes,rss_bytes,epoch_seconds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.kind,
                r.n,
                r.payload_bytes,
                r.rss_bytes.map(|v| v.to_string()).unwrap_or_default(),
                r.epoch_seconds.map(|v| v.to_string()).unwrap_or_default()
            ));
        }
        for (name, slope) in &self.slopes {
            out.push_str(&format!("# slope {name} = {slope:.6}\n"));
        }
        for k in &self.truncated {
            out.push_str(&format!("# truncated {k}\n"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    pub kinds: Vec<ModelKind>,
    pub stencil_sizes: Vec<usize>,
    /// Clouds per stencil size for the memory series.
    pub memory_samples: usize,
    /// Clouds per stencil size for the timing series; 0 skips timing.
    pub timing_samples: usize,
    pub repetitions: usize,
    pub batch_size: usize,
    pub memory_cap_bytes: u64,
    pub seed: u64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            kinds: vec![ModelKind::GknRi, ModelKind::Vcnn],
            stencil_sizes: vec![25, 50, 100, 200],
            memory_samples: 100,
            timing_samples: 32,
            repetitions: 3,
            batch_size: 32,
            memory_cap_bytes: 2 << 30,
            seed: 0,
        }
    }
}

pub fn run_scaling<T: Scalar>(config: &ScalingConfig) -> Result<ScalingReport> {
    check_sizes(&config.stencil_sizes)?;
    let mut report = ScalingReport {
        stencil_sizes: config.stencil_sizes.clone(),
        rows: Vec::new(),
        slopes: Vec::new(),
        truncated: Vec::new(),
    };
    for &kind in &config.kinds {
        let mem = measure_preprocess_memory(
            kind,
            &config.stencil_sizes,
            config.memory_samples,
            config.memory_cap_bytes,
            config.seed,
        )?;
        if mem.truncated {
            report.truncated.push(kind);
        }
        let sizes: Vec<usize> = mem.points.iter().map(|p| p.n).collect();
        let times = if config.timing_samples > 0 && sizes.len() >= 2 {
            let samples = config.timing_samples;
            let seed = config.seed;
            let make = move |n: usize| Ok(synthetic_dataset(samples, n, seed ^ (n as u64) << 8));
            Some(measure_epoch_time::<T>(kind, &sizes, &make, config.repetitions, config.batch_size, config.seed)?)
        } else {
            None
        };
        for (i, p) in mem.points.iter().enumerate() {
            report.rows.push(ScalingRow {
                kind,
                n: p.n,
                payload_bytes: p.payload_bytes,
                rss_bytes: p.rss_bytes,
                epoch_seconds: times.as_ref().map(|t| t[i].median_seconds),
            });
        }
        if sizes.len() >= 2 {
            let x: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
            let bytes: Vec<u64> = mem.points.iter().map(|p| p.payload_bytes).collect();
            let ns: Vec<u64> = sizes.iter().map(|&n| n as u64).collect();
            // An exact power law is reported as its integer exponent rather
            // than a rounded least-squares fit.
            let slope = match exact_power_exponent(&ns, &bytes) {
                Some(p) => f64::from(p),
                None => {
                    let y: Vec<f64> = bytes.iter().map(|&b| b as f64).collect();
                    fit_loglog_slope(&x, &y)?.0
                }
            };
            report.slopes.push((format!("{kind} payload"), slope));
            if let Some(t) = &times {
                let y: Vec<f64> = t.iter().map(|p| p.median_seconds).collect();
                report.slopes.push((format!("{kind} epoch_time"), fit_loglog_slope(&x, &y)?.0));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_examples() {
        let x = [1.0, 2.0, 5.0, 10.0];
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        let lin: Vec<f64> = x.iter().map(|v| 7.0 * v).collect();
        assert!((fit_loglog_slope(&x, &sq).unwrap().0 - 2.0).abs() < 1e-12);
        let (s, c) = fit_loglog_slope(&x, &lin).unwrap();
        assert!((s - 1.0).abs() < 1e-12 && (c - 7f64.ln()).abs() < 1e-12);
        assert!(fit_loglog_slope(&x, &[3.0; 4]).unwrap().0.abs() < 1e-12);
        assert!(fit_loglog_slope(&x, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!(fit_loglog_slope(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn exact_exponent() {
        assert_eq!(exact_power_exponent(&[25, 50, 100, 200], &[625, 2500, 10000, 40000]), Some(2));
        assert_eq!(exact_power_exponent(&[25, 50], &[3, 6]), Some(1));
        assert_eq!(exact_power_exponent(&[25, 50], &[3, 7]), None);
        assert_eq!(exact_power_exponent(&[25, 50], &[3, 3]), Some(0));
    }

    #[test]
    fn payload_laws() {
        let g = |n| payload_bytes(ModelKind::GknRi, 100, n);
        let v = |n| payload_bytes(ModelKind::Vcnn, 100, n);
        assert_eq!(g(50), 100 * 50 * 50 * 16 * 8);
        assert_eq!(g(100), 4 * g(50));
        assert_eq!(v(100), 2 * v(50));
        let ratio = g(150) as f64 / v(150) as f64;
        assert!((ratio - 150.0 * 16.0 / 11.0).abs() < 1e-9);
        assert_eq!(payload_bytes(ModelKind::GknRaw, 1, 10) * 16, payload_bytes(ModelKind::GknRi, 1, 10) * 22);
    }

    #[test]
    fn measured_payload_matches_law_and_cap_truncates() {
        let s = measure_preprocess_memory(ModelKind::GknRi, &[4, 8, 16], 3, u64::MAX, 1).unwrap();
        let bytes: Vec<u64> = s.points.iter().map(|p| p.payload_bytes).collect();
        assert_eq!(bytes, [3 * 16 * 16 * 8, 3 * 64 * 16 * 8, 3 * 256 * 16 * 8]);
        let capped = measure_preprocess_memory(ModelKind::GknRi, &[4, 8, 16], 3, 3 * 64 * 16 * 8, 1).unwrap();
        assert!(capped.truncated);
        assert_eq!(capped.points.len(), 2);
        assert!(measure_preprocess_memory(ModelKind::Vcnn, &[8, 4], 3, u64::MAX, 1).is_err());
    }

    #[test]
    fn small_scaling_report() {
        let cfg = ScalingConfig {
            kinds: vec![ModelKind::GknRi, ModelKind::Vcnn],
            stencil_sizes: vec![4, 8, 16],
            memory_samples: 5,
            timing_samples: 2,
            repetitions: 3,
            batch_size: 2,
            ..Default::default()
        };
        let r = run_scaling::<f32>(&cfg).unwrap();
        assert_eq!(r.rows.len(), 6);
        assert_eq!(r.slope("gkn_ri payload").unwrap(), 2.0);
        assert_eq!(r.slope("vcnn payload").unwrap(), 1.0);
        assert!(r.slope("gkn_ri epoch_time").is_some());
        let csv = r.to_csv();
        assert!(csv.starts_with("model,n,payload_bytes,rss_bytes,epoch_seconds\ngkn_ri,4,"));
        assert!(csv.contains("# slope vcnn payload = 1.000000"));
    }

    #[test]
    fn timing_rejects_few_repetitions() {
        let make = |n: usize| Ok(synthetic_dataset(2, n, 0));
        assert!(measure_epoch_time::<f64>(ModelKind::Vcnn, &[4, 8], &make, 2, 2, 0).is_err());
    }
}
