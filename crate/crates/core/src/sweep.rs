//! Codec resolution sweep.

use std::fmt::Write as _;

use crate::codec::{reconstruction_rmse, AnimVector, CodecSpec, DEFAULT_D};
use crate::error::{Error, Result};
use crate::kv::fmt_f64;

pub const SWEEP_DS: [usize; 5] = [10, 100, 250, 500, 750];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub d: usize,
    pub rmse: f64,
    pub perplexity: Option<f64>,
}

impl SweepRow {
    pub fn is_default(&self) -> bool {
        self.d == DEFAULT_D
    }
}

/// Fits a codec per `D` on `fit` and measures reconstruction RMSE on
/// `eval`. `perplexity` is called with each fitted codec when given.
pub fn run_d_sweep(
    fit: &[AnimVector],
    eval: &[AnimVector],
    ds: &[usize],
    margin: f64,
    mut perplexity: Option<&mut dyn FnMut(&CodecSpec) -> Result<f64>>,
) -> Result<Vec<SweepRow>> {
    if fit.is_empty() || eval.is_empty() {
        return Err(Error::Empty("sweep corpus".into()));
    }
    ds.iter()
        .map(|&d| {
            let codec = CodecSpec::fit(fit, d, margin)?;
            let rmse = reconstruction_rmse(&codec, eval)?;
            let perplexity = match perplexity.as_mut() {
                Some(f) => Some(f(&codec)?),
                None => None,
            };
            Ok(SweepRow { d, rmse, perplexity })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("d,rmse,perplexity,default\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.d,
            fmt_f64(r.rmse),
            r.perplexity.map(fmt_f64).unwrap_or_default(),
            u8::from(r.is_default())
        );
    }
    s
}
