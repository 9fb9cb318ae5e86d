//! Time-lagged output covariance estimation and the stacked covariance
//! tensor, plus the signal CSV format shared with the command-line tools.
//!
//! Signal CSV: a header row `t,ch1,...,chM` followed by one sample per line.
//! Channel labels are `ch<n>` with `n` the 1-based degree-of-freedom index
//! the channel was measured at, so a sensor subset round-trips its labels.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{OmaError, Result};
use crate::tensor::Tensor3;

/// Multichannel, uniformly sampled signal record.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalBlock {
    dt: f64,
    channel_ids: Vec<usize>,
    channels: Vec<Vec<f64>>,
}

impl SignalBlock {
    /// Build a block from per-channel sample vectors. Channel ids default to
    /// `0..M`.
    pub fn new(dt: f64, channels: Vec<Vec<f64>>) -> Result<Self> {
        let ids = (0..channels.len()).collect();
        Self::with_ids(dt, ids, channels)
    }

    pub fn with_ids(dt: f64, channel_ids: Vec<usize>, channels: Vec<Vec<f64>>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(OmaError::usage(format!("sample interval must be positive, got {dt}")));
        }
        if channels.is_empty() {
            return Err(OmaError::usage("signal block needs at least one channel"));
        }
        if channel_ids.len() != channels.len() {
            return Err(OmaError::usage("one channel id per channel required"));
        }
        let t = channels[0].len();
        if t == 0 {
            return Err(OmaError::usage("signal block needs at least one sample"));
        }
        if channels.iter().any(|c| c.len() != t) {
            return Err(OmaError::usage("all channels must have the same length"));
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return Err(OmaError::usage("signal contains non-finite samples"));
        }
        Ok(Self {
            dt,
            channel_ids,
            channels,
        })
    }

    /// Block from an `M x T` matrix, one row per channel.
    pub fn from_matrix(dt: f64, data: &DMatrix<f64>) -> Result<Self> {
        let channels = data.row_iter().map(|r| r.iter().copied().collect()).collect();
        Self::new(dt, channels)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.channels[0].len()
    }

    /// Original degree-of-freedom index of each channel (0-based).
    pub fn channel_ids(&self) -> &[usize] {
        &self.channel_ids
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    /// `M x T` matrix view, one row per channel.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_channels(), self.n_samples(), |c, t| self.channels[c][t])
    }

    /// Keep the channels at the given positions, carrying their labels.
    pub fn select_channels(&self, positions: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.n_channels()];
        for &p in positions {
            if p >= self.n_channels() {
                return Err(OmaError::usage(format!(
                    "channel {p} out of range for {}-channel block",
                    self.n_channels()
                )));
            }
            if std::mem::replace(&mut seen[p], true) {
                return Err(OmaError::usage(format!("channel {p} selected twice")));
            }
        }
        if positions.is_empty() {
            return Err(OmaError::usage("channel selection is empty"));
        }
        Ok(Self {
            dt: self.dt,
            channel_ids: positions.iter().map(|&p| self.channel_ids[p]).collect(),
            channels: positions.iter().map(|&p| self.channels[p].clone()).collect(),
        })
    }

    /// Write the block as signal CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.channel_ids.iter().map(|id| format!("ch{}", id + 1)));
        w.write_record(&header).map_err(csv_write_err)?;
        let mut row = Vec::with_capacity(self.n_channels() + 1);
        for n in 0..self.n_samples() {
            row.clear();
            row.push(format!("{}", n as f64 * self.dt));
            row.extend(self.channels.iter().map(|c| format!("{}", c[n])));
            w.write_record(&row).map_err(csv_write_err)?;
        }
        w.flush().map_err(|e| OmaError::Io {
            path: "<csv>".into(),
            source: e,
        })
    }

    /// Parse signal CSV. The sample interval is taken from the time column.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = rdr
            .headers()
            .map_err(|e| OmaError::Data(format!("line 1: {e}")))?
            .clone();
        if header.is_empty() || (header.len() == 1 && header[0].trim().is_empty()) {
            return Err(OmaError::Data("line 1: empty signal file".into()));
        }
        if header[0].trim() != "t" {
            return Err(OmaError::Data(format!("line 1: first column must be `t`, got `{}`", &header[0])));
        }
        if header.len() < 2 {
            return Err(OmaError::Data("line 1: no channel columns".into()));
        }
        let mut channel_ids = Vec::with_capacity(header.len() - 1);
        for name in header.iter().skip(1) {
            let id = name
                .trim()
                .strip_prefix("ch")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .ok_or_else(|| OmaError::Data(format!("line 1: bad channel label `{name}`")))?;
            channel_ids.push(id - 1);
        }

        let m = channel_ids.len();
        let mut times = Vec::new();
        let mut channels = vec![Vec::new(); m];
        for rec in rdr.records() {
            let rec = rec.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                OmaError::Data(format!("line {line}: {e}"))
            })?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.len() != m + 1 {
                return Err(OmaError::Data(format!(
                    "line {line}: expected {} fields, found {}",
                    m + 1,
                    rec.len()
                )));
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| OmaError::Data(format!("line {line}: invalid number `{s}`")))
            };
            times.push(parse(&rec[0])?);
            for (c, ch) in channels.iter_mut().enumerate() {
                ch.push(parse(&rec[c + 1])?);
            }
        }
        if times.len() < 2 {
            return Err(OmaError::Data(format!(
                "signal file has {} samples; at least 2 needed to infer the sample interval",
                times.len()
            )));
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        if !(dt > 0.0) {
            return Err(OmaError::Data("time column is not increasing".into()));
        }
        Self::with_ids(dt, channel_ids, channels).map_err(|e| OmaError::Data(e.to_string()))
    }
}

fn csv_write_err(e: csv::Error) -> OmaError {
    OmaError::Io {
        path: "<csv>".into(),
        source: std::io::Error::other(e),
    }
}

/// Lag schedule and estimation options for the covariance tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CovarianceTensorSpec {
    /// Positive sample offsets, strictly increasing.
    pub lags: Vec<usize>,
    pub demean: bool,
    pub symmetrize: bool,
}

impl Default for CovarianceTensorSpec {
    /// Lags 1..=100 samples, mean removal and slice symmetrization on.
    fn default() -> Self {
        Self {
            lags: (1..=100).collect(),
            demean: true,
            symmetrize: true,
        }
    }
}

impl CovarianceTensorSpec {
    pub fn with_lags(lags: Vec<usize>) -> Self {
        Self {
            lags,
            ..Self::default()
        }
    }

    pub fn validate(&self, n_samples: usize) -> Result<()> {
        if self.lags.len() < 2 {
            return Err(OmaError::usage(format!("need at least 2 lags, got {}", self.lags.len())));
        }
        if self.lags[0] < 1 {
            return Err(OmaError::usage("lags must be >= 1 sample"));
        }
        if self.lags.windows(2).any(|w| w[1] <= w[0]) {
            return Err(OmaError::usage("lags must be strictly increasing"));
        }
        let max = *self.lags.last().unwrap();
        if max >= n_samples {
            return Err(OmaError::usage(format!(
                "largest lag {max} must be below the record length {n_samples}"
            )));
        }
        Ok(())
    }
}

fn prepared_channels(x: &SignalBlock, demean: bool) -> Vec<Vec<f64>> {
    if !demean {
        return x.channels.clone();
    }
    x.channels
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            c.iter().map(|v| v - mean).collect()
        })
        .collect()
}

fn lagged_from_prepared(chans: &[Vec<f64>], tau: usize) -> DMatrix<f64> {
    let m = chans.len();
    let n = chans[0].len() - tau;
    let norm = 1.0 / n as f64;
    DMatrix::from_fn(m, m, |i, j| {
        let lead = &chans[i][tau..];
        let base = &chans[j][..n];
        lead.iter().zip(base).map(|(a, b)| a * b).sum::<f64>() * norm
    })
}

/// `(1/(T-tau)) Σ_t x(t+tau) x(t)^T`, with per-channel means removed first
/// when `demean` is set.
pub fn lagged_covariance(x: &SignalBlock, tau: usize, demean: bool) -> Result<DMatrix<f64>> {
    if tau >= x.n_samples() {
        return Err(OmaError::usage(format!(
            "lag {tau} must be below the record length {}",
            x.n_samples()
        )));
    }
    Ok(lagged_from_prepared(&prepared_channels(x, demean), tau))
}

/// Stack lagged covariances into an `M x M x K` tensor, slice `k` at lag
/// `spec.lags[k]`.
pub fn build_covariance_tensor(x: &SignalBlock, spec: &CovarianceTensorSpec) -> Result<Tensor3> {
    spec.validate(x.n_samples())?;
    let chans = prepared_channels(x, spec.demean);
    let m = x.n_channels();
    let mut data = Vec::with_capacity(m * m * spec.lags.len());
    for &tau in &spec.lags {
        let mut r = lagged_from_prepared(&chans, tau);
        if spec.symmetrize {
            r = symmetrized(&r);
        }
        data.extend_from_slice(r.as_slice());
    }
    Tensor3::from_vec((m, m, spec.lags.len()), data)
}

/// `(R + R^T) / 2`, exactly symmetric.
pub fn symmetrized(r: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(r.nrows(), r.ncols(), |i, j| {
        // same operand order for (i, j) and (j, i) so the result is bit-symmetric
        let (a, b) = if i <= j { (r[(i, j)], r[(j, i)]) } else { (r[(j, i)], r[(i, j)]) };
        0.5 * (a + b)
    })
}
