//! State-space coverage: the share of uniform bins visited by a data set.
//!
//! With `N` points in `d` dimensions each axis is split into
//! `ceil((N/5)^(1/d))` equal intervals, so a uniform sample would put about
//! five points in each bin. When the bins outnumber the points, the count of
//! nonempty bins is scaled by `bins / N`.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::types::{ReplayBuffer, StateVec};

/// Expected points per bin under uniform sampling.
pub const POINTS_PER_BIN: u64 = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageReport {
    pub samples: usize,
    pub dim: usize,
    pub divisions: u64,
    pub total_bins: u128,
    pub nonempty: u64,
    pub coverage: f64,
}

/// Smallest `k >= 1` with `5 k^d >= n`, computed in integers.
pub fn divisions_for(n: usize, d: usize) -> u64 {
    if n == 0 || d == 0 {
        return 1;
    }
    let target = n as u128;
    let enough = |k: u64| {
        let mut p: u128 = 1;
        for _ in 0..d {
            p = p.saturating_mul(k as u128);
        }
        p.saturating_mul(POINTS_PER_BIN as u128) >= target
    };
    let guess = ((n as f64 / POINTS_PER_BIN as f64).powf(1.0 / d as f64)).floor() as u64;
    let mut k = guess.saturating_sub(1).max(1);
    while !enough(k) {
        k += 1;
    }
    k
}

/// Bins `states` over the spec's state box. Points outside the box fall into
/// the nearest boundary bin; the upper edge belongs to the last bin.
pub fn coverage<T: Real>(states: &[StateVec<T>], spec: &EnvSpec<T>) -> Result<CoverageReport> {
    let d = spec.state_dim;
    let n = states.len();
    if n == 0 {
        return Ok(CoverageReport {
            samples: 0,
            dim: d,
            divisions: 1,
            total_bins: 1,
            nonempty: 0,
            coverage: 0.0,
        });
    }
    let divisions = divisions_for(n, d);
    let total_bins = (divisions as u128)
        .checked_pow(d as u32)
        .ok_or_else(|| Error::Config("too many coverage bins".into()))?;

    let lower: Vec<f64> = spec.state_lower.to_f64_vec();
    let width: Vec<f64> = spec
        .state_upper
        .to_f64_vec()
        .iter()
        .zip(&lower)
        .map(|(hi, lo)| hi - lo)
        .collect();
    let mut occupied: HashSet<u128> = HashSet::with_capacity(n.min(total_bins as usize));
    for s in states {
        if s.len() != d {
            return Err(Error::Dimension {
                what: "coverage state",
                expected: d,
                got: s.len(),
            });
        }
        let mut key: u128 = 0;
        for (i, v) in s.iter().enumerate() {
            let u = (v.to_f64_lossy() - lower[i]) / width[i];
            let raw = (u * divisions as f64).floor();
            let idx = if raw.is_nan() {
                0
            } else {
                raw.clamp(0.0, (divisions - 1) as f64) as u128
            };
            key = key * divisions as u128 + idx;
        }
        occupied.insert(key);
    }
    let nonempty = occupied.len() as u64;
    let scale = (total_bins as f64 / n as f64).max(1.0);
    let coverage = nonempty as f64 * scale / total_bins as f64;
    Ok(CoverageReport {
        samples: n,
        dim: d,
        divisions,
        total_bins,
        nonempty,
        coverage,
    })
}

/// Coverage of the states a buffer visited: every `s`, plus the last `s_next`.
pub fn buffer_coverage<T: Real>(buffer: &ReplayBuffer<T>, spec: &EnvSpec<T>) -> Result<CoverageReport> {
    coverage(&buffer.visited_states(), spec)
}

impl CoverageReport {
    /// Flat `key=value` lines.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples={}", self.samples);
        let _ = writeln!(out, "dim={}", self.dim);
        let _ = writeln!(out, "divisions={}", self.divisions);
        let _ = writeln!(out, "total_bins={}", self.total_bins);
        let _ = writeln!(out, "nonempty={}", self.nonempty);
        let _ = writeln!(out, "coverage={}", self.coverage);
        out
    }

    pub fn from_record(text: &str) -> Result<Self> {
        let get = |key: &str| -> Result<String> {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .map(|v| v.trim().to_owned())
                .ok_or_else(|| Error::Format(format!("coverage record lacks `{key}`")))
        };
        let bad = |k: &str| Error::Format(format!("coverage record: bad `{k}`"));
        Ok(Self {
            samples: get("samples")?.parse().map_err(|_| bad("samples"))?,
            dim: get("dim")?.parse().map_err(|_| bad("dim"))?,
            divisions: get("divisions")?.parse().map_err(|_| bad("divisions"))?,
            total_bins: get("total_bins")?.parse().map_err(|_| bad("total_bins"))?,
            nonempty: get("nonempty")?.parse().map_err(|_| bad("nonempty"))?,
            coverage: get("coverage")?.parse().map_err(|_| bad("coverage"))?,
        })
    }
}
