use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateStat {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator), 0 when n = 1.
    pub sd: f64,
    pub se: f64,
    pub min: f64,
    pub max: f64,
    pub range: f64,
    pub n: usize,
    /// Failed rows over all rows of the cell.
    pub parse_failure_rate: f64,
}

/// Single-pass mean and variance accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        if self.n == 1 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn finish(&self, n_failed: usize) -> Result<AggregateStat> {
        if self.n == 0 {
            return Err(Error::Stats("cannot summarize an empty cell".into()));
        }
        let sd = if self.n > 1 {
            (self.m2.max(0.0) / (self.n - 1) as f64).sqrt()
        } else {
            0.0
        };
        // clamp drift so min <= mean <= max holds exactly
        let mean = self.mean.clamp(self.min, self.max);
        Ok(AggregateStat {
            mean,
            sd,
            se: sd / (self.n as f64).sqrt(),
            min: self.min,
            max: self.max,
            range: self.max - self.min,
            n: self.n,
            parse_failure_rate: n_failed as f64 / (self.n + n_failed) as f64,
        })
    }
}

pub fn summarize(values: &[f64]) -> Result<AggregateStat> {
    summarize_with_failures(values, 0)
}

pub fn summarize_with_failures(values: &[f64], n_failed: usize) -> Result<AggregateStat> {
    let mut w = Welford::default();
    for &v in values {
        w.push(v);
    }
    w.finish(n_failed)
}
