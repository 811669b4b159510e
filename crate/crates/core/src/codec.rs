//! Dynamic uniform quantization.
//!
//! Each agent owns one [`ChannelCodec`] per broadcast stream. The encoder
//! quantizes the difference between the current value and the receivers'
//! reconstruction, scaled by a geometrically shrinking step `l(k)`. Every
//! receiver runs an identical codec in decode mode, so sender mirror and
//! receiver reconstruction stay bit-identical as long as they see the same
//! codes.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// The `(2L+1)`-level midtread quantizer with outputs in `{-L, ..., L}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformQuantizer {
    levels: u64,
}

impl UniformQuantizer {
    pub fn new(levels: u64) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Parameter("quantizer needs L >= 1".into()));
        }
        Ok(Self { levels })
    }

    pub fn levels(&self) -> u64 {
        self.levels
    }

    /// Inputs beyond this magnitude saturate.
    pub fn saturation_threshold(&self) -> f64 {
        (2 * self.levels + 1) as f64 / 2.0
    }

    /// `0` on `[-1/2, 1/2]`, `i` on `((2i-1)/2, (2i+1)/2]`, `L` above
    /// `(2L+1)/2`, odd-symmetric for negative inputs.
    pub fn quantize_scalar(&self, x: f64) -> Result<i64> {
        if !x.is_finite() {
            return Err(Error::InvalidValue(x));
        }
        let mag = x.abs();
        if mag <= 0.5 {
            return Ok(0);
        }
        // mag - 0.5 is exact here, so the cell boundaries are hit exactly.
        let cell = (mag - 0.5).ceil();
        let q = if cell >= self.levels as f64 {
            self.levels as i64
        } else {
            cell as i64
        };
        Ok(if x < 0.0 { -q } else { q })
    }

    pub fn quantize_vector(&self, v: &[f64]) -> Result<Vec<i64>> {
        v.iter().map(|&x| self.quantize_scalar(x)).collect()
    }
}

/// Bits needed per transmitted scalar: `ceil(log2(2L))`. The zero symbol is
/// not sent, leaving `2L` symbols.
pub fn bits_per_scalar(levels: u64) -> u32 {
    assert!(levels >= 1, "levels must be positive");
    let symbols = 2 * levels;
    u64::BITS - (symbols - 1).leading_zeros()
}

/// `l(k) = l0 * gamma^k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingSchedule {
    l0: f64,
    gamma: f64,
}

impl ScalingSchedule {
    pub fn new(l0: f64, gamma: f64) -> Result<Self> {
        if !(l0 > 0.0 && l0.is_finite()) {
            return Err(Error::Parameter(format!("l0 must be positive, got {l0}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Parameter(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        Ok(Self { l0, gamma })
    }

    pub fn l0(&self) -> f64 {
        self.l0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Recomputed from `k` on every call so that independently advanced
    /// encoders and decoders agree exactly.
    pub fn at(&self, k: usize) -> f64 {
        self.l0 * self.gamma.powf(k as f64)
    }
}

/// One direction of an encoder/decoder pair for an `r`-dimensional stream.
///
/// In encode mode `recon` is the sender's mirror of what every receiver has
/// decoded; in decode mode it is the receiver's reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelCodec {
    quantizer: UniformQuantizer,
    schedule: ScalingSchedule,
    recon: Vec<f64>,
    step: usize,
    strict: bool,
    saturations: u64,
    bits_sent: u64,
    zero_free_bits: u64,
}

impl ChannelCodec {
    pub fn new(quantizer: UniformQuantizer, schedule: ScalingSchedule, dim: usize) -> Self {
        Self {
            quantizer,
            schedule,
            recon: vec![0.0; dim],
            step: 0,
            strict: false,
            saturations: 0,
            bits_sent: 0,
            zero_free_bits: 0,
        }
    }

    /// Saturation becomes a hard error instead of a counted event.
    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    pub fn dim(&self) -> usize {
        self.recon.len()
    }

    pub fn recon(&self) -> &[f64] {
        &self.recon
    }

    /// Index `k` of the next code this codec will produce or consume.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn saturations(&self) -> u64 {
        self.saturations
    }

    /// Every scalar of every round charged at `ceil(log2(2L))` bits.
    pub fn bits_sent(&self) -> u64 {
        self.bits_sent
    }

    /// Same, but zero codes are free.
    pub fn zero_free_bits(&self) -> u64 {
        self.zero_free_bits
    }

    pub fn quantizer(&self) -> UniformQuantizer {
        self.quantizer
    }

    pub fn schedule(&self) -> ScalingSchedule {
        self.schedule
    }

    /// Produces `s(k) = Q((value - recon) / l(k))` and applies the decoder
    /// update to the local mirror.
    pub fn encode(&mut self, value: &[f64]) -> Result<Vec<i64>> {
        if value.len() != self.dim() {
            return Err(Error::Shape {
                expected: self.dim(),
                actual: value.len(),
            });
        }
        let scale = self.current_scale()?;
        let threshold = self.quantizer.saturation_threshold();
        let mut codes = Vec::with_capacity(value.len());
        let mut saturated = 0;
        for (v, r) in value.iter().zip(&self.recon) {
            let scaled = (v - r) / scale;
            if scaled.abs() > threshold {
                saturated += 1;
            }
            codes.push(self.quantizer.quantize_scalar(scaled)?);
        }
        if saturated > 0 && self.strict {
            return Err(Error::Saturation { round: self.step });
        }
        self.saturations += saturated;
        let bps = bits_per_scalar(self.quantizer.levels()) as u64;
        self.bits_sent += bps * codes.len() as u64;
        self.zero_free_bits += bps * codes.iter().filter(|c| **c != 0).count() as u64;
        self.apply(&codes, scale);
        Ok(codes)
    }

    /// `recon <- l(k) * code + recon`; returns the new reconstruction.
    pub fn decode(&mut self, codes: &[i64]) -> Result<&[f64]> {
        if codes.len() != self.dim() {
            return Err(Error::Protocol(format!(
                "expected {} codes, received {}",
                self.dim(),
                codes.len()
            )));
        }
        let max = self.quantizer.levels() as i64;
        if let Some(bad) = codes.iter().find(|c| c.abs() > max) {
            return Err(Error::Protocol(format!(
                "code {bad} outside [-{max}, {max}] at step {}",
                self.step
            )));
        }
        let scale = self.current_scale()?;
        self.apply(codes, scale);
        Ok(&self.recon)
    }

    fn current_scale(&self) -> Result<f64> {
        let scale = self.schedule.at(self.step);
        if scale > 0.0 && scale.is_finite() {
            Ok(scale)
        } else {
            Err(Error::Domain(format!(
                "scaling schedule underflowed at step {}",
                self.step
            )))
        }
    }

    fn apply(&mut self, codes: &[i64], scale: f64) {
        for (r, c) in self.recon.iter_mut().zip(codes) {
            *r += scale * (*c as f64);
        }
        self.step += 1;
    }
}

/// Which tracked quantity a code stream carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    Chi,
    Y,
}

impl Stream {
    fn label(self) -> &'static str {
        match self {
            Stream::Chi => "chi",
            Stream::Y => "y",
        }
    }
}

/// One broadcast: agent `agent` sent `codes` on `stream` in round `round`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeRecord {
    pub round: usize,
    pub agent: usize,
    pub stream: Stream,
    pub codes: Vec<i64>,
}

/// CSV with columns `round,channel,code_0..code_{r-1}`; the channel id is
/// `chi_<agent>` or `y_<agent>`.
pub fn code_log_to_csv(records: &[CodeRecord]) -> String {
    let width = records.first().map_or(0, |r| r.codes.len());
    let mut out = String::from("round,channel");
    for c in 0..width {
        write!(out, ",code_{c}").unwrap();
    }
    out.push('\n');
    for rec in records {
        write!(out, "{},{}_{}", rec.round, rec.stream.label(), rec.agent).unwrap();
        for c in &rec.codes {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn code_log_from_csv(text: &str) -> Result<Vec<CodeRecord>> {
    let bad = |line: usize, what: &str| Error::Parse(format!("code log line {line}: {what}"));
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let round = fields
            .next()
            .and_then(|f| f.parse().ok())
            .ok_or_else(|| bad(idx + 1, "bad round"))?;
        let channel = fields.next().ok_or_else(|| bad(idx + 1, "missing channel"))?;
        let (label, agent) = channel
            .split_once('_')
            .ok_or_else(|| bad(idx + 1, "bad channel id"))?;
        let stream = match label {
            "chi" => Stream::Chi,
            "y" => Stream::Y,
            _ => return Err(bad(idx + 1, "unknown stream")),
        };
        let agent = agent.parse().map_err(|_| bad(idx + 1, "bad agent index"))?;
        let codes = fields
            .map(|f| f.parse::<i64>().map_err(|_| bad(idx + 1, "bad code")))
            .collect::<Result<Vec<_>>>()?;
        out.push(CodeRecord {
            round,
            agent,
            stream,
            codes,
        });
    }
    Ok(out)
}
