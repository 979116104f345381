use std::collections::BTreeMap;

use crate::autodiff::Tensor;

/// Below this many samples an estimate is flagged as unreliable.
pub const MIN_RELIABLE_SAMPLES: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiConfig {
    /// Equal-mass bins per continuous coordinate.
    pub bins: usize,
    pub miller_madow: bool,
}

impl Default for MiConfig {
    fn default() -> Self {
        Self { bins: 32, miller_madow: false }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiEstimate {
    pub bits: f64,
    pub samples: usize,
    pub few_samples: bool,
}

/// Equal-mass bin index of every value. Equal values always share a bin,
/// so a coordinate with `k < bins` distinct values gets at most `k` bins.
pub fn quantile_bins(values: &[f64], bins: usize) -> Vec<u32> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0u32; n];
    let mut rank = 0;
    while rank < n {
        let v = values[order[rank]];
        let bin = ((rank * bins) / n) as u32;
        let mut end = rank;
        while end < n && values[order[end]] == v {
            out[order[end]] = bin;
            end += 1;
        }
        rank = end;
    }
    out
}

fn entropy<K: Ord>(keys: impl Iterator<Item = K>, miller_madow: bool) -> (f64, usize) {
    let mut counts: BTreeMap<K, usize> = BTreeMap::new();
    let mut n = 0;
    for k in keys {
        *counts.entry(k).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return (0.0, 0);
    }
    let nf = n as f64;
    let mut h = -counts
        .values()
        .map(|&c| {
            let p = c as f64 / nf;
            p * p.log2()
        })
        .sum::<f64>();
    if miller_madow {
        h += (counts.len() as f64 - 1.0) / (2.0 * nf * std::f64::consts::LN_2);
    }
    (h, n)
}

/// Plug-in `I(A; B)` in bits between two label sequences.
pub fn plugin_mi(a: &[u64], b: &[u64], miller_madow: bool) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ha, _) = entropy(a.iter().copied(), miller_madow);
    let (hb, _) = entropy(b.iter().copied(), miller_madow);
    let (hab, _) = entropy(a.iter().zip(b).map(|(&x, &y)| (x, y)), miller_madow);
    (ha + hb - hab).max(0.0)
}

/// Plug-in `I(A; B | C)` in bits.
pub fn plugin_cmi(a: &[u64], b: &[u64], c: &[u64], miller_madow: bool) -> f64 {
    let (hac, _) = entropy(a.iter().zip(c).map(|(&x, &z)| (x, z)), miller_madow);
    let (hbc, _) = entropy(b.iter().zip(c).map(|(&y, &z)| (y, z)), miller_madow);
    let (habc, _) = entropy(a.iter().zip(b).zip(c).map(|((&x, &y), &z)| (x, y, z)), miller_madow);
    let (hc, _) = entropy(c.iter().copied(), miller_madow);
    (hac + hbc - habc - hc).max(0.0)
}

/// Joint label of several binned coordinates.
fn combine(columns: &[Vec<u32>], bins: u64) -> Vec<u64> {
    let n = columns.first().map_or(0, |c| c.len());
    (0..n).map(|r| columns.iter().fold(0u64, |acc, c| acc * bins + c[r] as u64)).collect()
}

fn column(t: &Tensor, j: usize) -> Vec<f64> {
    (0..t.rows()).map(|r| t.at(r, j)).collect()
}

/// Labels for a discrete (bit) column: the values are used as-is.
fn discrete(t: &Tensor, j: usize) -> Vec<u64> {
    (0..t.rows()).map(|r| t.at(r, j) as u64).collect()
}

fn binned(t: &Tensor, j: usize, bins: usize) -> Vec<u32> {
    quantile_bins(&column(t, j), bins)
}

/// MI between one discrete column and one continuous column.
pub fn mutual_information(discrete_side: &[f64], continuous_side: &[f64], cfg: &MiConfig) -> MiEstimate {
    let a: Vec<u64> = discrete_side.iter().map(|&v| v as u64).collect();
    let b: Vec<u64> = quantile_bins(continuous_side, cfg.bins).into_iter().map(u64::from).collect();
    let n = a.len();
    MiEstimate { bits: plugin_mi(&a, &b, cfg.miller_madow), samples: n, few_samples: n < MIN_RELIABLE_SAMPLES }
}

/// `b x b` matrix; entry `(i, j)` is the MI between bit `i` and estimate `j`.
pub fn bmi_matrix(bits: &Tensor, estimates: &Tensor, cfg: &MiConfig) -> Vec<Vec<f64>> {
    let b = bits.cols();
    let d: Vec<Vec<u64>> = (0..b).map(|i| discrete(bits, i)).collect();
    let e: Vec<Vec<u64>> =
        (0..estimates.cols()).map(|j| binned(estimates, j, cfg.bins).into_iter().map(u64::from).collect()).collect();
    d.iter().map(|di| e.iter().map(|ej| plugin_mi(di, ej, cfg.miller_madow)).collect()).collect()
}

/// MI between the whole payload and the whole estimate.
///
/// Up to two coordinates the joint plug-in estimate over product bins is
/// used. Beyond that the chain rule `sum_i I(d_i; e | d_<i)` is truncated
/// to `I(d_1; e_1) + sum_{i>1} I(d_i; e_i | d_{i-1})`, which is only an
/// approximation. `discrete_payload` selects exact labels (bits) versus
/// equal-mass bins (reals) for the payload side.
pub fn vector_mi(payload: &Tensor, estimates: &Tensor, discrete_payload: bool, cfg: &MiConfig) -> MiEstimate {
    let b = payload.cols();
    let n = payload.rows();
    let pay: Vec<Vec<u32>> = (0..b)
        .map(|i| {
            if discrete_payload {
                discrete(payload, i).into_iter().map(|v| v as u32).collect()
            } else {
                binned(payload, i, cfg.bins)
            }
        })
        .collect();
    let est: Vec<Vec<u32>> = (0..estimates.cols()).map(|j| binned(estimates, j, cfg.bins)).collect();
    let bins = cfg.bins.max(2) as u64;
    let bits = if b <= 2 {
        plugin_mi(&combine(&pay, bins), &combine(&est, bins), cfg.miller_madow)
    } else {
        let lab = |c: &Vec<u32>| c.iter().map(|&v| v as u64).collect::<Vec<u64>>();
        let mut total = plugin_mi(&lab(&pay[0]), &lab(&est[0]), cfg.miller_madow);
        for i in 1..b {
            total += plugin_cmi(&lab(&pay[i]), &lab(&est[i]), &lab(&pay[i - 1]), cfg.miller_madow);
        }
        total
    };
    MiEstimate { bits, samples: n, few_samples: n < MIN_RELIABLE_SAMPLES }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn fair_bits(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream(seed, "mi", 0);
        (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn bins_are_equal_mass_and_tie_aware() {
        let v: Vec<f64> = (0..64).map(|i| i as f64).collect();
        let b = quantile_bins(&v, 32);
        assert!(b.chunks(2).enumerate().all(|(k, c)| c[0] == k as u32 && c[1] == k as u32));
        let ties = quantile_bins(&[1.0, 0.0, 1.0, 0.0, 1.0, 1.0], 32);
        assert_eq!(ties, vec![10, 0, 10, 0, 10, 10]);
    }

    #[test]
    fn copy_bsc_and_independent() {
        let n = 100_000;
        let d = fair_bits(n, 1);
        let cfg = MiConfig::default();
        assert!((mutual_information(&d, &d, &cfg).bits - 1.0).abs() < 0.02);

        let mut rng = stream(2, "bsc", 0);
        let flipped: Vec<f64> = d.iter().map(|&v| if rng.random::<f64>() < 0.11 { 1.0 - v } else { v }).collect();
        assert!((mutual_information(&d, &flipped, &cfg).bits - 0.5).abs() < 0.03);

        let noise: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let est = mutual_information(&d, &noise, &cfg);
        assert!(est.bits < 0.02 && !est.few_samples, "{est:?}");
        let mm = mutual_information(&d, &noise, &MiConfig { miller_madow: true, ..cfg });
        assert!(mm.bits <= est.bits + 1e-12);
    }

    #[test]
    fn bmi_identity_and_constant() {
        let n = 20_000;
        let a = fair_bits(n, 3);
        let b = fair_bits(n, 4);
        let bits = Tensor::new(vec![n, 2], a.iter().zip(&b).flat_map(|(&x, &y)| [x, y]).collect()).unwrap();
        let est = Tensor::new(vec![n, 2], a.iter().flat_map(|&x| [x, 0.5]).collect()).unwrap();
        let m = bmi_matrix(&bits, &est, &MiConfig::default());
        assert!((m[0][0] - 1.0).abs() < 0.02);
        assert!(m[1][0] < 0.01);
        assert_eq!(m[0][1], 0.0);
        assert_eq!(m[1][1], 0.0);
        assert!(mutual_information(&a[..10], &a[..10], &MiConfig::default()).few_samples);
    }

    #[test]
    fn vector_mi_of_copied_bits() {
        let n = 50_000;
        let cols: Vec<Vec<f64>> = (0..3).map(|k| fair_bits(n, 10 + k)).collect();
        let data: Vec<f64> = (0..n).flat_map(|r| cols.iter().map(move |c| c[r])).collect();
        let t = Tensor::new(vec![n, 3], data).unwrap();
        let mi = vector_mi(&t, &t, true, &MiConfig::default());
        assert!((mi.bits - 3.0).abs() < 0.05, "{mi:?}");
        let two = t.slice_cols(0, 2);
        assert!((vector_mi(&two, &two, true, &MiConfig::default()).bits - 2.0).abs() < 0.03);
    }
}
