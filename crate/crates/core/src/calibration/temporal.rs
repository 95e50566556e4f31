use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::PoseSequence;

pub const TIME_SERIES_CSV_HEADER: &str = "t,value";

/// A scalar signal sampled at (possibly irregular) increasing timestamps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

impl TimeSeries {
    pub fn new(t: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if t.len() != v.len() {
            return Err(Error::invalid("timestamps and values differ in length"));
        }
        if t.len() < 2 {
            return Err(Error::InsufficientData("a signal needs at least two samples".into()));
        }
        if t.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::invalid("signal contains non-finite samples"));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("timestamps must be strictly increasing"));
        }
        Ok(TimeSeries { t, v })
    }

    /// One translation component (0 = x, 1 = y, 2 = z) of the valid poses.
    pub fn from_pose_axis(seq: &PoseSequence, axis: usize) -> Result<Self> {
        if axis > 2 {
            return Err(Error::invalid("axis must be 0, 1 or 2"));
        }
        let (t, v) = seq.iter().filter(|p| p.valid).map(|p| (p.t, p.translation[axis])).unzip();
        Self::new(t, v)
    }

    /// Reads a `t,value` CSV.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        let header = rdr.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?;
        let header: Vec<&str> = header.iter().map(str::trim).collect();
        if header.join(",") != TIME_SERIES_CSV_HEADER {
            return Err(Error::parse(path, 1, format!("expected header `{TIME_SERIES_CSV_HEADER}`")));
        }
        let (mut t, mut v) = (Vec::new(), Vec::new());
        for record in rdr.records() {
            let record = record.map_err(|e| Error::parse(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
            let line = record.position().map_or(0, |p| p.line());
            if record.len() != 2 {
                return Err(Error::parse(path, line, format!("expected 2 fields, found {}", record.len())));
            }
            let field = |i: usize| {
                record[i]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(path, line, format!("field {}: {e}", i + 1)))
            };
            t.push(field(0)?);
            v.push(field(1)?);
        }
        Self::new(t, v).map_err(|e| Error::parse(path, 0, e.to_string()))
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{TIME_SERIES_CSV_HEADER}")?;
        for (t, v) in self.t.iter().zip(&self.v) {
            writeln!(w, "{t:.9},{v}")?;
        }
        Ok(())
    }

    /// Linear interpolation at `t`, clamped to the end samples.
    pub fn sample(&self, t: f64) -> f64 {
        let n = self.t.len();
        if t <= self.t[0] {
            return self.v[0];
        }
        if t >= self.t[n - 1] {
            return self.v[n - 1];
        }
        let j = self.t.partition_point(|&x| x <= t);
        let (t0, t1) = (self.t[j - 1], self.t[j]);
        let w = (t - t0) / (t1 - t0);
        self.v[j - 1] + w * (self.v[j] - self.v[j - 1])
    }
}

/// The two streams to align. `b` is expected to follow `a` with a delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalSignalPair {
    pub a: TimeSeries,
    pub b: TimeSeries,
    pub sample_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagEstimate {
    /// Delay of `b` relative to `a`: `b(t) ≈ a(t − lag_s)`.
    pub lag_s: f64,
    pub peak_correlation: f64,
}

fn detrend(x: &mut [f64]) {
    let n = x.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let xm = x.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let d = i as f64 - tm;
        sxy += d * (v - xm);
        sxx += d * d;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    for (i, v) in x.iter_mut().enumerate() {
        *v -= xm + slope * (i as f64 - tm);
    }
}

/// Pearson correlation of `a[n]` with `b[n + k]` over their overlap.
fn ncc(a: &[f64], b: &[f64], k: isize) -> f64 {
    let n = a.len() as isize;
    let (lo, hi) = (0.max(-k), n.min(n - k));
    if hi - lo < 2 {
        return 0.0;
    }
    let len = (hi - lo) as f64;
    let xs = &a[lo as usize..hi as usize];
    let ys = &b[(lo + k) as usize..(hi + k) as usize];
    let mx = xs.iter().sum::<f64>() / len;
    let my = ys.iter().sum::<f64>() / len;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Estimates the delay of `pair.b` behind `pair.a` by maximizing the
/// normalized cross-correlation of the detrended signals over integer lags
/// within `±max_lag_s`, refining the peak with a parabola through its
/// neighbours, then polishing it on the continuous raw signals.
pub fn estimate_lag(pair: &TemporalSignalPair, max_lag_s: f64) -> Result<LagEstimate> {
    let rate = pair.sample_rate;
    if !(rate > 0.0 && rate.is_finite()) || !(max_lag_s >= 0.0 && max_lag_s.is_finite()) {
        return Err(Error::invalid("sample_rate must be positive and max_lag non-negative"));
    }
    let t0 = pair.a.t[0].max(pair.b.t[0]);
    let t1 = pair.a.t[pair.a.t.len() - 1].min(pair.b.t[pair.b.t.len() - 1]);
    if t1 <= t0 {
        return Err(Error::InsufficientData("signals do not overlap in time".into()));
    }
    let n = ((t1 - t0) * rate).floor() as usize + 1;
    let max_k = ((max_lag_s * rate).floor() as usize).min(n.saturating_sub(3));
    if n < 4 {
        return Err(Error::InsufficientData("overlap shorter than four samples".into()));
    }
    let grid = |s: &TimeSeries| -> Vec<f64> {
        let mut x: Vec<f64> = (0..n).map(|i| s.sample(t0 + i as f64 / rate)).collect();
        detrend(&mut x);
        x
    };
    let (a, b) = (grid(&pair.a), grid(&pair.b));
    let flat = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() <= 1e-24 * n as f64;
    if flat(&a) || flat(&b) {
        return Err(Error::degenerate("flat signal: the lag is undefined"));
    }

    let max_k = max_k as isize;
    let corr: Vec<f64> = (-max_k..=max_k).map(|k| ncc(&a, &b, k)).collect();
    let (best, &peak) = corr
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .expect("non-empty lag range");
    let mut offset = 0.0;
    if best > 0 && best + 1 < corr.len() {
        let (l, c, r) = (corr[best - 1], corr[best], corr[best + 1]);
        let denom = l - 2.0 * c + r;
        if denom < 0.0 {
            offset = (0.5 * (l - r) / denom).clamp(-0.5, 0.5);
        }
    }
    let coarse = ((best as isize - max_k) as f64 + offset) / rate;
    let (lag_s, polished) = polish(pair, t0, t1, coarse, 1.0 / rate, rate);
    Ok(LagEstimate {
        lag_s,
        peak_correlation: polished.max(peak),
    })
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    ncc(xs, ys, 0)
}

/// Golden-section maximization of the correlation between `a(t)` and
/// `b(t + τ)` over `τ ∈ centre ± half`, on a fixed sample set so the
/// objective is continuous. Runs on the raw signals, which an exact delay
/// aligns perfectly.
fn polish(pair: &TemporalSignalPair, t0: f64, t1: f64, centre: f64, half: f64, rate: f64) -> (f64, f64) {
    let lo = (t0 - (centre - half)).max(t0);
    let hi = (t1 - (centre + half)).min(t1);
    let ts: Vec<f64> = (0..)
        .map(|i| lo + i as f64 / rate)
        .take_while(|&t| t <= hi)
        .collect();
    if ts.len() < 4 {
        return (centre, f64::NEG_INFINITY);
    }
    let xs: Vec<f64> = ts.iter().map(|&t| pair.a.sample(t)).collect();
    let g = |tau: f64| {
        let ys: Vec<f64> = ts.iter().map(|&t| pair.b.sample(t + tau)).collect();
        pearson(&xs, &ys)
    };
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (centre - half, centre + half);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..80 {
        if gc >= gd {
            b = d;
            d = c;
            gd = gc;
            c = b - phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + phi * (b - a);
            gd = g(d);
        }
    }
    let tau = 0.5 * (a + b);
    (tau, g(tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RATE: f64 = 30.0;

    /// Reciprocating motion with a slow drift, delayed by `shift` samples.
    fn motion(shift: f64, n: usize) -> TimeSeries {
        let t: Vec<f64> = (0..n).map(|i| i as f64 / RATE).collect();
        let v = t
            .iter()
            .map(|&t| {
                let s = t - shift / RATE;
                20.0 * (2.0 * std::f64::consts::PI * 0.5 * s).sin() + 4.0 * (2.0 * std::f64::consts::PI * 1.3 * s).sin() + 0.5 * t
            })
            .collect();
        TimeSeries::new(t, v).unwrap()
    }

    fn pair(a: TimeSeries, b: TimeSeries) -> TemporalSignalPair {
        TemporalSignalPair { a, b, sample_rate: RATE }
    }

    #[test]
    fn zero_shift_gives_zero_lag() {
        let est = estimate_lag(&pair(motion(0.0, 300), motion(0.0, 300)), 0.5).unwrap();
        assert!(est.lag_s.abs() < 1e-6, "{}", est.lag_s);
        assert!((est.peak_correlation - 1.0).abs() < 1e-12);
    }

    #[test]
    fn integer_shift_is_exact() {
        // A pure integer delay of a sampled signal: b[n] = a[n − 7].
        let a = motion(0.0, 400);
        let b = TimeSeries::new(a.t[7..].to_vec(), a.v[..a.v.len() - 7].to_vec()).unwrap();
        let a = TimeSeries::new(a.t[7..].to_vec(), a.v[7..].to_vec()).unwrap();
        let est = estimate_lag(&pair(a, b), 0.5).unwrap();
        assert!((est.lag_s - 7.0 / RATE).abs() < 1e-6, "{}", est.lag_s);
    }

    #[test]
    fn fractional_shift_within_a_tenth_of_a_sample() {
        for shift in [-5.0, -3.4, 0.0, 2.0, 3.4, 7.25] {
            let est = estimate_lag(&pair(motion(0.0, 300), motion(shift, 300)), 0.5).unwrap();
            assert!((est.lag_s * RATE - shift).abs() < 0.1, "{shift}: {}", est.lag_s * RATE);
        }
    }

    #[test]
    fn flat_signal_is_rejected() {
        let a = motion(0.0, 100);
        let b = TimeSeries::new(a.t.clone(), vec![3.0; 100]).unwrap();
        assert!(matches!(estimate_lag(&pair(a, b), 0.5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn irregular_timestamps_are_resampled() {
        let t: Vec<f64> = (0..600).map(|i| i as f64 / 60.0 + 0.003 * (i % 3) as f64).collect();
        let f = |s: f64| 20.0 * (2.0 * std::f64::consts::PI * 0.5 * s).sin();
        let a = TimeSeries::new(t.clone(), t.iter().map(|&t| f(t)).collect()).unwrap();
        let b = TimeSeries::new(t.clone(), t.iter().map(|&t| f(t - 0.1)).collect()).unwrap();
        let est = estimate_lag(&pair(a, b), 0.5).unwrap();
        assert!((est.lag_s - 0.1).abs() < 0.1 / RATE);
    }

    #[test]
    fn csv_round_trip_and_bad_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let a = motion(0.0, 50);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        std::fs::write(&path, &buf).unwrap();
        let back = TimeSeries::read_csv(&path).unwrap();
        assert_eq!(back.v, a.v);
        assert!(back.t.iter().zip(&a.t).all(|(x, y)| (x - y).abs() < 1e-9));
        std::fs::write(&path, "time,v\n0,1\n1,2\n").unwrap();
        assert!(matches!(TimeSeries::read_csv(&path), Err(Error::Parse { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn swapping_signals_negates_the_lag(shift in -8.0f64..8.0) {
            let a = motion(0.0, 300);
            let b = motion(shift, 300);
            let ab = estimate_lag(&pair(a.clone(), b.clone()), 0.5).unwrap().lag_s;
            let ba = estimate_lag(&pair(b, a), 0.5).unwrap().lag_s;
            prop_assert!((ab + ba).abs() * RATE < 0.2);
        }
    }
}
