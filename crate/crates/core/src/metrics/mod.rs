//! Distribution-fidelity metrics between a real and a synthetic trace:
//! Jensen-Shannon divergence (log base 2) for the seven discrete header
//! fields and range-normalized earth mover's distance for the three
//! continuous ones, plus CSV/SVG reporting.

mod report;

pub use report::emit_report;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::trace_io::{FieldId, TraceDataset};

pub const DEFAULT_BINS: usize = 100;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("histogram requires at least one value")]
    EmptyInput,
    #[error("histograms have mismatched support ({lhs} vs {rhs} entries)")]
    SupportMismatch { lhs: usize, rhs: usize },
    #[error("continuous histograms disagree on bins or range")]
    BinMismatch,
    #[error("dataset `{0}` is empty")]
    EmptyDataset(String),
    #[error("report rows are incomplete: {0}")]
    IncompleteReport(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Normalized histogram of one field. Discrete histograms share an explicit
/// token support; continuous ones share equal-width bins over `[lo, hi]`.
#[derive(Debug, Clone)]
pub enum FieldHistogram {
    Discrete { support: Vec<String>, probs: Vec<f64> },
    Continuous { lo: f64, hi: f64, probs: Vec<f64> },
}

impl FieldHistogram {
    pub fn probs(&self) -> &[f64] {
        match self {
            FieldHistogram::Discrete { probs, .. } => probs,
            FieldHistogram::Continuous { probs, .. } => probs,
        }
    }
}

/// Sorted union of the tokens observed in both datasets; zero-mass entries
/// are kept so compared histograms always share a support.
pub fn union_support<S: AsRef<str>>(a: &[S], b: &[S]) -> Vec<String> {
    let mut set = BTreeSet::new();
    for t in a.iter().chain(b.iter()) {
        set.insert(t.as_ref().to_string());
    }
    set.into_iter().collect()
}

pub fn histogram_discrete<S: AsRef<str>>(
    values: &[S],
    support: &[String],
) -> Result<FieldHistogram, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut counts = vec![0usize; support.len()];
    for v in values {
        if let Ok(idx) = support.binary_search_by(|probe| probe.as_str().cmp(v.as_ref())) {
            counts[idx] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let probs = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(FieldHistogram::Discrete {
        support: support.to_vec(),
        probs,
    })
}

/// Equal-width bins over `[lo, hi]`; out-of-range values clamp into the
/// boundary bins, and a degenerate range puts all mass in one bin.
pub fn histogram_continuous(
    values: &[f64],
    lo: f64,
    hi: f64,
    bins: usize,
) -> Result<FieldHistogram, MetricsError> {
    if values.is_empty() || bins == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let mut counts = vec![0usize; bins];
    if hi > lo {
        let width = (hi - lo) / bins as f64;
        for &v in values {
            let idx = (((v - lo) / width).floor() as isize).clamp(0, bins as isize - 1) as usize;
            counts[idx] += 1;
        }
    } else {
        counts[0] = values.len();
    }
    let total = values.len() as f64;
    Ok(FieldHistogram::Continuous {
        lo,
        hi,
        probs: counts.iter().map(|&c| c as f64 / total).collect(),
    })
}

/// Jensen-Shannon divergence in log base 2, so the result lies in `[0, 1]`.
/// `0 * log(0 / x)` contributes nothing by convention.
pub fn js_divergence(p: &FieldHistogram, q: &FieldHistogram) -> Result<f64, MetricsError> {
    check_same_support(p, q)?;
    let p = p.probs();
    let q = q.probs();
    let kl_to_mix = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(&pa, &pb)| {
                if pa == 0.0 {
                    0.0
                } else {
                    let m = 0.5 * (pa + pb);
                    pa * (pa / m).log2()
                }
            })
            .sum()
    };
    let js = 0.5 * kl_to_mix(p, q) + 0.5 * kl_to_mix(q, p);
    // Clamp the tiny negative round-off that summation order can leave.
    Ok(js.clamp(0.0, 1.0))
}

/// One-dimensional earth mover's distance between continuous histograms on
/// identical bins, divided by the shared value range so the result lies in
/// `[0, 1]`. Mass sits at bin centers, so moving all mass from the first to
/// the last bin costs exactly `1 - 1/bins` after normalization. A
/// degenerate range (`hi == lo`) yields 0.
pub fn emd_normalized(p: &FieldHistogram, q: &FieldHistogram) -> Result<f64, MetricsError> {
    let (
        FieldHistogram::Continuous { lo, hi, probs: pp },
        FieldHistogram::Continuous { lo: lo2, hi: hi2, probs: qq },
    ) = (p, q)
    else {
        return Err(MetricsError::BinMismatch);
    };
    if lo != lo2 || hi != hi2 || pp.len() != qq.len() {
        return Err(MetricsError::BinMismatch);
    }
    if hi <= lo {
        return Ok(0.0);
    }
    let bins = pp.len() as f64;
    let bin_width = (hi - lo) / bins;
    let mut cum = 0.0;
    let mut total = 0.0;
    for (&a, &b) in pp.iter().zip(qq) {
        cum += a - b;
        total += cum.abs() * bin_width;
    }
    Ok((total / (hi - lo)).clamp(0.0, 1.0))
}

fn check_same_support(p: &FieldHistogram, q: &FieldHistogram) -> Result<(), MetricsError> {
    match (p, q) {
        (
            FieldHistogram::Discrete { support: sp, .. },
            FieldHistogram::Discrete { support: sq, .. },
        ) => {
            if sp != sq {
                return Err(MetricsError::SupportMismatch {
                    lhs: sp.len(),
                    rhs: sq.len(),
                });
            }
            Ok(())
        }
        (
            FieldHistogram::Continuous { probs: pp, .. },
            FieldHistogram::Continuous { probs: qq, .. },
        ) => {
            if pp.len() != qq.len() {
                return Err(MetricsError::SupportMismatch {
                    lhs: pp.len(),
                    rhs: qq.len(),
                });
            }
            Ok(())
        }
        _ => Err(MetricsError::SupportMismatch { lhs: 0, rhs: 0 }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Js,
    EmdNorm,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::Js => "js",
            MetricKind::EmdNorm => "emd_norm",
        }
    }
}

/// One (variant, field) metric value of a fidelity report.
#[derive(Debug, Clone)]
pub struct FidelityRow {
    pub variant: String,
    pub field: FieldId,
    pub metric: MetricKind,
    pub value: f64,
}

/// Scores `synth` against `real`: JS divergence for the seven discrete
/// fields, normalized EMD for the three continuous ones. Discrete supports
/// are the union of tokens observed in either dataset; continuous ranges
/// are the union of both datasets' ranges with `bins` shared bins.
pub fn evaluate(
    variant: &str,
    real: &TraceDataset,
    synth: &TraceDataset,
    bins: usize,
) -> Result<Vec<FidelityRow>, MetricsError> {
    if real.records.is_empty() {
        return Err(MetricsError::EmptyDataset(real.source_label.clone()));
    }
    if synth.records.is_empty() {
        return Err(MetricsError::EmptyDataset(synth.source_label.clone()));
    }
    let mut rows = Vec::with_capacity(FieldId::ALL.len());
    for &field in FieldId::ALL.iter() {
        let (metric, value) = if field.is_discrete() {
            let rv: Vec<String> = real.records.iter().map(|r| r.token(field)).collect();
            let sv: Vec<String> = synth.records.iter().map(|r| r.token(field)).collect();
            let support = union_support(&rv, &sv);
            let hp = histogram_discrete(&rv, &support)?;
            let hq = histogram_discrete(&sv, &support)?;
            (MetricKind::Js, js_divergence(&hp, &hq)?)
        } else {
            let rv: Vec<f64> = real.records.iter().map(|r| r.numeric(field)).collect();
            let sv: Vec<f64> = synth.records.iter().map(|r| r.numeric(field)).collect();
            let lo = rv.iter().chain(&sv).cloned().fold(f64::INFINITY, f64::min);
            let hi = rv.iter().chain(&sv).cloned().fold(f64::NEG_INFINITY, f64::max);
            let hp = histogram_continuous(&rv, lo, hi, bins)?;
            let hq = histogram_continuous(&sv, lo, hi, bins)?;
            (MetricKind::EmdNorm, emd_normalized(&hp, &hq)?)
        };
        rows.push(FidelityRow {
            variant: variant.to_string(),
            field,
            metric,
            value,
        });
    }
    Ok(rows)
}

/// Mean of the JS rows for one variant; the headline number the
/// cross-variant comparisons rank on.
pub fn mean_js(rows: &[FidelityRow], variant: &str) -> f64 {
    let js: Vec<f64> = rows
        .iter()
        .filter(|r| r.variant == variant && r.metric == MetricKind::Js)
        .map(|r| r.value)
        .collect();
    js.iter().sum::<f64>() / js.len() as f64
}
