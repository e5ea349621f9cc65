//! Uniform per-attribute discretization of facial-animation vectors.
//!
//! Each of the 23 attributes is split into `D` equal intervals over a
//! fitted `[lo, hi]` range. A value maps to the interval whose midpoint is
//! nearest (ties go to the lower index, out-of-range values clamp), and a
//! code maps back to that midpoint.

use crate::error::{Error, Result};
use crate::kv::{fmt_f64, KvRecord};

pub const NUM_AUS: usize = 17;
pub const NUM_POSE: usize = 6;
pub const NUM_ATTRIBUTES: usize = NUM_AUS + NUM_POSE;

/// Column names in attribute order, following OpenFace export naming.
pub const ATTRIBUTE_NAMES: [&str; NUM_ATTRIBUTES] = [
    "AU01_r", "AU02_r", "AU04_r", "AU05_r", "AU06_r", "AU07_r", "AU09_r", "AU10_r", "AU12_r",
    "AU14_r", "AU15_r", "AU17_r", "AU20_r", "AU23_r", "AU25_r", "AU26_r", "AU45_r", "pose_Rx",
    "pose_Ry", "pose_Rz", "pose_Tx", "pose_Ty", "pose_Tz",
];

/// Index of the blink action unit (AU45).
pub const BLINK_ATTRIBUTE: usize = 16;

/// Degenerate-span half width used when an attribute is constant.
pub const DEGENERATE_HALF_WIDTH: f64 = 1e-6;

pub const DEFAULT_D: usize = 500;
pub const DEFAULT_MARGIN: f64 = 0.05;

/// One frame of continuous facial animation: 17 AU intensities followed by
/// pitch, yaw, roll and three translations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnimVector(pub [f64; NUM_ATTRIBUTES]);

impl AnimVector {
    pub fn from_slice(v: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_ATTRIBUTES] = v.try_into().map_err(|_| {
            Error::Shape(format!("animation vector needs {NUM_ATTRIBUTES} values, got {}", v.len()))
        })?;
        Ok(AnimVector(arr))
    }

    pub fn au(&self) -> &[f64] {
        &self.0[..NUM_AUS]
    }

    pub fn pose(&self) -> &[f64] {
        &self.0[NUM_AUS..]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_finite(&self) -> Result<()> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(a) => Err(Error::NonFinite(format!(
                "attribute {} ({}) = {}",
                a, ATTRIBUTE_NAMES[a], self.0[a]
            ))),
            None => Ok(()),
        }
    }
}

/// One frame of categorical codes, one index per attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AnimCode(pub [usize; NUM_ATTRIBUTES]);

#[derive(Debug, Clone, PartialEq)]
pub struct CodecSpec {
    d: usize,
    ranges: [(f64, f64); NUM_ATTRIBUTES],
    centroids: Vec<f64>,
}

impl CodecSpec {
    pub fn new(d: usize, ranges: [(f64, f64); NUM_ATTRIBUTES]) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("D must be positive".into()));
        }
        for (a, &(lo, hi)) in ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "attribute {a}: range ({lo}, {hi}) must be finite with lo < hi"
                )));
            }
        }
        let mut centroids = Vec::with_capacity(NUM_ATTRIBUTES * d);
        for &(lo, hi) in &ranges {
            let w = (hi - lo) / d as f64;
            centroids.extend((0..d).map(|k| lo + (k as f64 + 0.5) * w));
        }
        for a in 0..NUM_ATTRIBUTES {
            let row = &centroids[a * d..(a + 1) * d];
            if row.windows(2).any(|p| p[0] >= p[1]) {
                return Err(Error::InvalidArgument(format!(
                    "attribute {a}: range too narrow for {d} distinct centroids"
                )));
            }
        }
        Ok(CodecSpec { d, ranges, centroids })
    }

    /// Fits per-attribute ranges to the corpus min/max widened by
    /// `margin · span` on each side.
    pub fn fit(corpus: &[AnimVector], d: usize, margin: f64) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Empty("codec corpus".into()));
        }
        if !(margin >= 0.0 && margin.is_finite()) {
            return Err(Error::InvalidArgument(format!("margin {margin} must be >= 0")));
        }
        let mut lo = [f64::INFINITY; NUM_ATTRIBUTES];
        let mut hi = [f64::NEG_INFINITY; NUM_ATTRIBUTES];
        for v in corpus {
            v.check_finite()?;
            for a in 0..NUM_ATTRIBUTES {
                lo[a] = lo[a].min(v.0[a]);
                hi[a] = hi[a].max(v.0[a]);
            }
        }
        let mut ranges = [(0.0, 0.0); NUM_ATTRIBUTES];
        for a in 0..NUM_ATTRIBUTES {
            let span = hi[a] - lo[a];
            ranges[a] = if span == 0.0 {
                (lo[a] - DEGENERATE_HALF_WIDTH, lo[a] + DEGENERATE_HALF_WIDTH)
            } else {
                (lo[a] - margin * span, hi[a] + margin * span)
            };
        }
        Self::new(d, ranges)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn ranges(&self) -> &[(f64, f64); NUM_ATTRIBUTES] {
        &self.ranges
    }

    pub fn interval_width(&self, attribute: usize) -> f64 {
        let (lo, hi) = self.ranges[attribute];
        (hi - lo) / self.d as f64
    }

    pub fn centroids(&self, attribute: usize) -> &[f64] {
        &self.centroids[attribute * self.d..(attribute + 1) * self.d]
    }

    pub fn centroid(&self, attribute: usize, index: usize) -> f64 {
        self.centroids[attribute * self.d + index]
    }

    /// Nearest-centroid index for a single attribute value.
    pub fn quantize_value(&self, attribute: usize, v: f64) -> usize {
        let (lo, _) = self.ranges[attribute];
        let w = self.interval_width(attribute);
        let last = self.d - 1;
        let guess = ((v - lo) / w).ceil() - 1.0;
        let guess = if guess.is_nan() || guess < 0.0 {
            0
        } else if guess >= last as f64 {
            last
        } else {
            guess as usize
        };
        // The closed-form guess can be off by one near boundaries after
        // rounding; settle it against the centroid table.
        let cents = self.centroids(attribute);
        let mut best = guess.saturating_sub(1);
        let mut best_dist = (v - cents[best]).abs();
        for k in best + 1..=(guess + 1).min(last) {
            let dist = (v - cents[k]).abs();
            if dist < best_dist {
                best = k;
                best_dist = dist;
            }
        }
        best
    }

    pub fn quantize(&self, v: &AnimVector) -> Result<AnimCode> {
        v.check_finite()?;
        let mut codes = [0usize; NUM_ATTRIBUTES];
        for (a, c) in codes.iter_mut().enumerate() {
            *c = self.quantize_value(a, v.0[a]);
        }
        Ok(AnimCode(codes))
    }

    pub fn dequantize(&self, c: &AnimCode) -> Result<AnimVector> {
        let mut out = [0.0; NUM_ATTRIBUTES];
        for a in 0..NUM_ATTRIBUTES {
            let k = c.0[a];
            if k >= self.d {
                return Err(Error::OutOfRange { index: k, limit: self.d });
            }
            out[a] = self.centroid(a, k);
        }
        Ok(AnimVector(out))
    }

    pub fn write_record(&self, rec: &mut KvRecord) {
        rec.set("codec.d", self.d);
        for (a, &(lo, hi)) in self.ranges.iter().enumerate() {
            rec.set(format!("codec.range.{a:02}"), format!("{},{}", fmt_f64(lo), fmt_f64(hi)));
        }
    }

    pub fn from_record(rec: &KvRecord) -> Result<Self> {
        let d: usize = rec.require_parsed("codec.d")?;
        let mut ranges = [(0.0, 0.0); NUM_ATTRIBUTES];
        for (a, r) in ranges.iter_mut().enumerate() {
            let key = format!("codec.range.{a:02}");
            let raw = rec.require(&key)?;
            let (lo, hi) = raw
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("{key}: expected lo,hi")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("{key}: bad number {s:?}")))
            };
            *r = (parse(lo)?, parse(hi)?);
        }
        Self::new(d, ranges).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let mut rec = KvRecord::new();
        self.write_record(&mut rec);
        rec.to_text()
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_record(&KvRecord::parse(text)?)
    }
}

/// Root-mean-square reconstruction error of `quantize → dequantize` over all
/// attributes and frames.
pub fn reconstruction_rmse(spec: &CodecSpec, corpus: &[AnimVector]) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("rmse corpus".into()));
    }
    let mut sq = 0.0;
    for v in corpus {
        let r = spec.dequantize(&spec.quantize(v)?)?;
        for a in 0..NUM_ATTRIBUTES {
            sq += (r.0[a] - v.0[a]).powi(2);
        }
    }
    Ok((sq / (corpus.len() * NUM_ATTRIBUTES) as f64).sqrt())
}
