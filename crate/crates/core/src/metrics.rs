//! Calibration and detection metrics.
//!
//! Probabilities are passed as an `n x K` [`Matrix`] whose rows sum to one.
//! Confidence is the maximum class probability. ECE uses equal-width bins on
//! `[0, 1]`; bin 0 is `[0, 1/M]` and bin `m > 0` is `(m/M, (m+1)/M]`.

use std::fmt::Write as _;

use crate::error::{GsdError, Result};
use crate::linalg::{argmax, Matrix};

/// Probabilities below this are raised to it before taking logs.
pub const NLL_FLOOR: f64 = 1e-12;
pub const DEFAULT_NUM_BINS: usize = 15;
const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinningSpec {
    pub num_bins: usize,
}

impl Default for BinningSpec {
    fn default() -> Self {
        Self {
            num_bins: DEFAULT_NUM_BINS,
        }
    }
}

impl BinningSpec {
    pub fn new(num_bins: usize) -> Result<Self> {
        if num_bins == 0 {
            return Err(GsdError::InvalidParameter("num_bins must be positive".into()));
        }
        Ok(Self { num_bins })
    }

    /// Bin holding `confidence` (right-closed, first bin closed both ends).
    pub fn bin_of(&self, confidence: f64) -> usize {
        let m = self.num_bins;
        let mut idx = ((confidence * m as f64).ceil() as isize - 1).clamp(0, m as isize - 1) as usize;
        // the product can round across an edge; settle against the edges themselves
        while idx > 0 && confidence <= self.edges(idx).0 {
            idx -= 1;
        }
        while idx + 1 < m && confidence > self.edges(idx).1 {
            idx += 1;
        }
        idx
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let m = self.num_bins as f64;
        (bin as f64 / m, (bin + 1) as f64 / m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinRecord {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// NaN for empty bins.
    pub mean_confidence: f64,
    /// NaN for empty bins.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub ece: f64,
    pub nll: f64,
    pub brier: f64,
    pub mean_entropy: f64,
    /// Samples whose true-class probability hit [`NLL_FLOOR`].
    pub nll_floored: usize,
    pub bins: Vec<BinRecord>,
}

fn validate(probs: &Matrix, labels: &[u32]) -> Result<()> {
    if probs.rows() != labels.len() {
        return Err(GsdError::InvalidInput(format!(
            "{} probability rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if probs.rows() == 0 {
        return Err(GsdError::Empty("probabilities"));
    }
    let k = probs.cols();
    for (i, row) in probs.iter_rows().enumerate() {
        if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(GsdError::InvalidInput(format!(
                "row {i} has an entry outside [0, 1]"
            )));
        }
        let total: f64 = row.iter().sum();
        if (total - 1.0).abs() > ROW_SUM_TOL {
            return Err(GsdError::InvalidInput(format!("row {i} sums to {total}, not 1")));
        }
        if labels[i] as usize >= k {
            return Err(GsdError::InvalidInput(format!(
                "label {} at row {i} out of range for {k} classes",
                labels[i]
            )));
        }
    }
    Ok(())
}

/// Per-bin counts, mean confidences and accuracies.
pub fn reliability_bins(probs: &Matrix, labels: &[u32], spec: BinningSpec) -> Result<Vec<BinRecord>> {
    validate(probs, labels)?;
    let mut count = vec![0usize; spec.num_bins];
    let mut conf_sum = vec![0.0; spec.num_bins];
    let mut correct = vec![0usize; spec.num_bins];
    for (row, &label) in probs.iter_rows().zip(labels) {
        let pred = argmax(row);
        let conf = row[pred];
        let b = spec.bin_of(conf);
        count[b] += 1;
        conf_sum[b] += conf;
        if pred == label as usize {
            correct[b] += 1;
        }
    }
    Ok((0..spec.num_bins)
        .map(|b| {
            let (lower, upper) = spec.edges(b);
            let (mean_confidence, accuracy) = if count[b] == 0 {
                (f64::NAN, f64::NAN)
            } else {
                (conf_sum[b] / count[b] as f64, correct[b] as f64 / count[b] as f64)
            };
            BinRecord {
                lower,
                upper,
                count: count[b],
                mean_confidence,
                accuracy,
            }
        })
        .collect())
}

/// Weighted mean over bins of `|accuracy - confidence|`; empty bins add 0.
pub fn ece_from_bins(bins: &[BinRecord]) -> f64 {
    let n: usize = bins.iter().map(|b| b.count).sum();
    bins.iter()
        .filter(|b| b.count > 0)
        .map(|b| b.count as f64 / n as f64 * (b.accuracy - b.mean_confidence).abs())
        .sum()
}

pub fn ece(probs: &Matrix, labels: &[u32], spec: BinningSpec) -> Result<f64> {
    Ok(ece_from_bins(&reliability_bins(probs, labels, spec)?))
}

/// Mean `-ln p(true)` and the number of floored probabilities.
pub fn nll_with_floor_count(probs: &Matrix, labels: &[u32]) -> Result<(f64, usize)> {
    validate(probs, labels)?;
    let mut total = 0.0;
    let mut floored = 0;
    for (row, &label) in probs.iter_rows().zip(labels) {
        let p = row[label as usize];
        if p < NLL_FLOOR {
            floored += 1;
        }
        total += -p.max(NLL_FLOOR).ln();
    }
    Ok((total / labels.len() as f64, floored))
}

pub fn nll(probs: &Matrix, labels: &[u32]) -> Result<f64> {
    Ok(nll_with_floor_count(probs, labels)?.0)
}

/// `(1/N) sum_t sum_i (f_ti - o_ti)^2` with one-hot `o`.
pub fn brier(probs: &Matrix, labels: &[u32], num_classes: usize) -> Result<f64> {
    validate(probs, labels)?;
    if probs.cols() != num_classes {
        return Err(GsdError::InvalidInput(format!(
            "probabilities have {} columns, expected {num_classes}",
            probs.cols()
        )));
    }
    let mut total = 0.0;
    for (row, &label) in probs.iter_rows().zip(labels) {
        for (j, &p) in row.iter().enumerate() {
            let o = if j == label as usize { 1.0 } else { 0.0 };
            total += (p - o) * (p - o);
        }
    }
    Ok(total / labels.len() as f64)
}

/// Mean Shannon entropy of the rows in nats, with `0 ln 0 = 0`.
pub fn entropy(probs: &Matrix) -> Result<f64> {
    if probs.rows() == 0 {
        return Err(GsdError::Empty("probabilities"));
    }
    let total: f64 = probs
        .iter_rows()
        .map(|row| row.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum::<f64>())
        .sum();
    Ok(total / probs.rows() as f64)
}

pub fn accuracy(probs: &Matrix, labels: &[u32]) -> Result<f64> {
    validate(probs, labels)?;
    let hits = probs
        .iter_rows()
        .zip(labels)
        .filter(|(row, &l)| argmax(row) == l as usize)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

pub fn metrics_report(probs: &Matrix, labels: &[u32], spec: BinningSpec) -> Result<MetricsReport> {
    let bins = reliability_bins(probs, labels, spec)?;
    let (nll, nll_floored) = nll_with_floor_count(probs, labels)?;
    Ok(MetricsReport {
        n: labels.len(),
        accuracy: accuracy(probs, labels)?,
        ece: ece_from_bins(&bins),
        nll,
        brier: brier(probs, labels, probs.cols())?,
        mean_entropy: entropy(probs)?,
        nll_floored,
        bins,
    })
}

/// Probability that a random positive outscores a random negative, ties
/// counted one half. Computed from mid-ranks of the pooled sample.
pub fn auroc(scores_positive: &[f64], scores_negative: &[f64]) -> Result<f64> {
    if scores_positive.is_empty() {
        return Err(GsdError::Empty("positive scores"));
    }
    if scores_negative.is_empty() {
        return Err(GsdError::Empty("negative scores"));
    }
    if scores_positive.iter().chain(scores_negative).any(|s| !s.is_finite()) {
        return Err(GsdError::InvalidInput("scores must be finite".into()));
    }
    let n_pos = scores_positive.len();
    let mut pooled: Vec<(f64, bool)> = scores_positive
        .iter()
        .map(|&s| (s, true))
        .chain(scores_negative.iter().map(|&s| (s, false)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    // ranks are 1-based; a tie group spanning [i, j) gets (i + 1 + j) / 2
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let mid_rank = (i + 1 + j) as f64 / 2.0;
        let positives = pooled[i..j].iter().filter(|p| p.1).count();
        rank_sum_pos += mid_rank * positives as f64;
        i = j;
    }
    let n_neg = scores_negative.len() as f64;
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg))
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(GsdError::InvalidInput(format!(
            "series lengths differ: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(GsdError::InvalidInput("need at least two points".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(GsdError::UndefinedCorrelation("first"));
    }
    if syy == 0.0 {
        return Err(GsdError::UndefinedCorrelation("second"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ordinary least squares `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let r = pearson(xs, ys)?;
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared: r * r,
    })
}

/// Shared-edge histogram of two score samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub first: Vec<usize>,
    pub second: Vec<usize>,
}

pub fn paired_histogram(first: &[f64], second: &[f64], num_bins: usize) -> Result<Histogram> {
    if num_bins == 0 {
        return Err(GsdError::InvalidParameter("num_bins must be positive".into()));
    }
    let all = first.iter().chain(second);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(GsdError::Empty("histogram samples"));
    }
    let width = if hi > lo { (hi - lo) / num_bins as f64 } else { 1.0 };
    let edges = (0..=num_bins).map(|i| lo + width * i as f64).collect();
    let count = |xs: &[f64]| {
        let mut c = vec![0usize; num_bins];
        for &x in xs {
            let b = (((x - lo) / width) as usize).min(num_bins - 1);
            c[b] += 1;
        }
        c
    };
    Ok(Histogram {
        edges,
        first: count(first),
        second: count(second),
    })
}

pub const METRICS_TSV_HEADER: &str = "metric\tvalue";
pub const BINS_TSV_HEADER: &str = "bin\tlower\tupper\tcount\tmean_confidence\taccuracy";
const METRIC_ORDER: [&str; 7] = ["n", "accuracy", "ece", "nll", "brier", "mean_entropy", "nll_floored"];

impl MetricsReport {
    /// TSV with a fixed layout: the `metric\tvalue` block (rows n, accuracy,
    /// ece, nll, brier, mean_entropy, nll_floored), one blank line, then the
    /// per-bin block. Floats use shortest round-trip formatting.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{METRICS_TSV_HEADER}").unwrap();
        writeln!(s, "n\t{}", self.n).unwrap();
        writeln!(s, "accuracy\t{}", self.accuracy).unwrap();
        writeln!(s, "ece\t{}", self.ece).unwrap();
        writeln!(s, "nll\t{}", self.nll).unwrap();
        writeln!(s, "brier\t{}", self.brier).unwrap();
        writeln!(s, "mean_entropy\t{}", self.mean_entropy).unwrap();
        writeln!(s, "nll_floored\t{}", self.nll_floored).unwrap();
        writeln!(s).unwrap();
        writeln!(s, "{BINS_TSV_HEADER}").unwrap();
        for (i, b) in self.bins.iter().enumerate() {
            writeln!(
                s,
                "{i}\t{}\t{}\t{}\t{}\t{}",
                b.lower, b.upper, b.count, b.mean_confidence, b.accuracy
            )
            .unwrap();
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: String| GsdError::parse(line as u64, msg);
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, METRICS_TSV_HEADER)) => {}
            other => return Err(bad(0, format!("expected metrics header, got {other:?}"))),
        }
        let mut values = Vec::new();
        for name in METRIC_ORDER {
            let (ln, line) = lines.next().ok_or_else(|| bad(0, format!("missing row {name}")))?;
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| bad(ln, format!("malformed row {line:?}")))?;
            if key != name {
                return Err(bad(ln, format!("expected row {name}, got {key}")));
            }
            values.push(value.to_string());
        }
        let num = |i: usize| -> Result<f64> {
            values[i]
                .parse()
                .map_err(|_| bad(i + 1, format!("bad number {:?}", values[i])))
        };
        let int = |i: usize| -> Result<usize> {
            values[i]
                .parse()
                .map_err(|_| bad(i + 1, format!("bad integer {:?}", values[i])))
        };
        match lines.next() {
            Some((_, "")) => {}
            other => return Err(bad(8, format!("expected blank separator, got {other:?}"))),
        }
        match lines.next() {
            Some((_, BINS_TSV_HEADER)) => {}
            other => return Err(bad(9, format!("expected bins header, got {other:?}"))),
        }
        let mut bins = Vec::new();
        for (ln, line) in lines {
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 6 {
                return Err(bad(ln, format!("bin row needs 6 fields, got {}", fields.len())));
            }
            let f = |j: usize| -> Result<f64> {
                fields[j].parse().map_err(|_| bad(ln, format!("bad number {:?}", fields[j])))
            };
            bins.push(BinRecord {
                lower: f(1)?,
                upper: f(2)?,
                count: fields[3].parse().map_err(|_| bad(ln, "bad count".into()))?,
                mean_confidence: f(4)?,
                accuracy: f(5)?,
            });
        }
        Ok(Self {
            n: int(0)?,
            accuracy: num(1)?,
            ece: num(2)?,
            nll: num(3)?,
            brier: num(4)?,
            mean_entropy: num(5)?,
            nll_floored: int(6)?,
            bins,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_class(rows: &[(f64, f64)]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|&(a, b)| vec![a, b]).collect::<Vec<_>>())
    }

    #[test]
    fn ece_hand_example() {
        // confidences 0.4 (wrong), 0.6, 0.9 (right), 0.9 (wrong); 2 bins
        let probs = Matrix::from_rows(&[
            vec![0.4, 0.3, 0.3],
            vec![0.6, 0.4, 0.0],
            vec![0.9, 0.1, 0.0],
            vec![0.1, 0.9, 0.0],
        ]);
        let labels = [1, 0, 0, 0];
        let spec = BinningSpec::new(2).unwrap();
        let e = ece(&probs, &labels, spec).unwrap();
        assert!((e - 0.2).abs() < 1e-15, "{e}");
    }

    #[test]
    fn ece_extremes() {
        let probs = two_class(&[(1.0, 0.0), (0.0, 1.0)]);
        assert_eq!(ece(&probs, &[1, 0], BinningSpec::default()).unwrap(), 1.0);
        assert_eq!(ece(&probs, &[0, 1], BinningSpec::default()).unwrap(), 0.0);
        // confidence 0.5 in a bin with one hit in two
        let probs = two_class(&[(0.5, 0.5), (0.5, 0.5)]);
        assert_eq!(ece(&probs, &[0, 1], BinningSpec::default()).unwrap(), 0.0);
    }

    #[test]
    fn bin_boundaries_are_right_closed() {
        let spec = BinningSpec::new(2).unwrap();
        assert_eq!(spec.bin_of(0.0), 0);
        assert_eq!(spec.bin_of(0.5), 0);
        assert_eq!(spec.bin_of(0.500_000_1), 1);
        assert_eq!(spec.bin_of(1.0), 1);
        assert!(BinningSpec::new(0).is_err());
        let ten = BinningSpec::new(10).unwrap();
        for k in 1..=10 {
            let edge = k as f64 / 10.0;
            assert_eq!(ten.bin_of(edge), k - 1, "edge {edge}");
        }
    }

    #[test]
    fn malformed_probabilities_rejected() {
        let probs = two_class(&[(0.7, 0.7)]);
        assert!(ece(&probs, &[0], BinningSpec::default()).is_err());
        let probs = two_class(&[(1.2, -0.2)]);
        assert!(nll(&probs, &[0]).is_err());
        let probs = two_class(&[(0.5, 0.5)]);
        assert!(brier(&probs, &[2], 2).is_err());
        assert!(ece(&Matrix::zeros(0, 2), &[], BinningSpec::default()).is_err());
    }

    #[test]
    fn nll_examples() {
        let probs = two_class(&[(1.0, 0.0), (0.0, 1.0)]);
        assert_eq!(nll(&probs, &[0, 1]).unwrap(), 0.0);
        let probs = two_class(&[(0.5, 0.5), (0.5, 0.5)]);
        assert!((nll(&probs, &[0, 1]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let uniform = Matrix::from_vec(3, 10, vec![0.1; 30]);
        assert!((nll(&uniform, &[0, 4, 9]).unwrap() - 10f64.ln()).abs() < 1e-12);
        let (v, floored) = nll_with_floor_count(&two_class(&[(1.0, 0.0)]), &[1]).unwrap();
        assert_eq!(floored, 1);
        assert!((v - 1e12f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn brier_examples() {
        let probs = two_class(&[(1.0, 0.0), (0.0, 1.0)]);
        assert_eq!(brier(&probs, &[0, 1], 2).unwrap(), 0.0);
        let probs = two_class(&[(0.7, 0.3)]);
        assert!((brier(&probs, &[0], 2).unwrap() - 0.18).abs() < 1e-15);
        for r in [2usize, 3, 7, 10] {
            let u = Matrix::from_vec(2, r, vec![1.0 / r as f64; 2 * r]);
            let b = brier(&u, &[0, (r - 1) as u32], r).unwrap();
            assert!((b - (1.0 - 1.0 / r as f64)).abs() < 1e-14);
        }
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy(&two_class(&[(1.0, 0.0), (0.0, 1.0)])).unwrap(), 0.0);
        assert!((entropy(&two_class(&[(0.5, 0.5)])).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let uniform = Matrix::from_vec(1, 10, vec![0.1; 10]);
        assert!((entropy(&uniform).unwrap() - 10f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8], &[0.1, 0.2]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3, 0.5, 0.5], &[0.5, 0.3, 0.5]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.8, 0.4], &[0.6, 0.2]).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1], &[0.9]).unwrap(), 0.0);
        assert!(auroc(&[], &[1.0]).is_err());
        assert!(auroc(&[1.0], &[]).is_err());
        assert!(auroc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(GsdError::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| -2.0 * x + 5.0).collect();
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-12);
        assert!((f.intercept - 5.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn report_tsv_round_trip() {
        let probs = Matrix::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.3, 0.6], vec![0.25, 0.5, 0.25]]);
        let report = metrics_report(&probs, &[0, 1, 1], BinningSpec::new(4).unwrap()).unwrap();
        assert_eq!(report.bins.iter().map(|b| b.count).sum::<usize>(), 3);
        assert!((ece_from_bins(&report.bins) - report.ece).abs() == 0.0);
        let text = report.to_tsv();
        assert!(text.starts_with("metric\tvalue\nn\t3\naccuracy\t"));
        let back = MetricsReport::from_tsv(&text).unwrap();
        assert_eq!(back.to_tsv(), text);
        assert_eq!(back.ece.to_bits(), report.ece.to_bits());
        assert!(MetricsReport::from_tsv("metric\tvalue\nn\tx\n").is_err());
    }

    #[test]
    fn histogram_counts_everything() {
        let h = paired_histogram(&[0.0, 0.5, 1.0], &[0.25, 2.0], 4).unwrap();
        assert_eq!(h.first.iter().sum::<usize>(), 3);
        assert_eq!(h.second.iter().sum::<usize>(), 2);
        assert_eq!(h.edges.len(), 5);
        assert_eq!(h.second[3], 1);
    }
}
