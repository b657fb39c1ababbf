//! Labelled embedding batches, synthetic Gaussian-cluster generation,
//! parametric distribution shifts and the GSDE binary file format.
//!
//! GSDE layout (all little-endian):
//!
//! | offset        | type        | field                  |
//! |---------------|-------------|------------------------|
//! | 0             | `[u8; 4]`   | magic `GSDE`           |
//! | 4             | `u32`       | version (1)            |
//! | 8             | `u32`       | n (samples)            |
//! | 12            | `u32`       | d (feature dimension)  |
//! | 16            | `u32`       | num_classes            |
//! | 20            | `f32 * n*d` | features, row-major    |
//! | 20 + 4nd      | `u32 * n`   | labels                 |

use std::fs;
use std::path::Path;

use crate::error::{GsdError, Result};
use crate::linalg::Matrix;
use crate::rng::GsdRng;

pub const GSDE_MAGIC: &[u8; 4] = b"GSDE";
pub const GSDE_VERSION: u32 = 1;
const GSDE_HEADER_LEN: usize = 20;

/// `n` feature vectors of dimension `d` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    features: Vec<f32>,
    labels: Vec<u32>,
    dim: usize,
    num_classes: usize,
}

impl EmbeddingBatch {
    pub fn new(features: Vec<f32>, dim: usize, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(GsdError::InvalidInput("num_classes must be positive".into()));
        }
        if dim == 0 {
            return Err(GsdError::InvalidInput("feature dimension must be positive".into()));
        }
        if features.len() != labels.len() * dim {
            return Err(GsdError::InvalidInput(format!(
                "feature buffer holds {} values, expected {} x {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(GsdError::InvalidInput(format!(
                "non-finite feature at sample {}, coordinate {}",
                i / dim,
                i % dim
            )));
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= num_classes) {
            return Err(GsdError::InvalidInput(format!(
                "label {l} at sample {i} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| f64::from(v)).collect()
    }

    /// Sub-batch with the given sample indices, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            labels,
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// Same samples with features replaced; labels and shape are kept.
    fn with_features(&self, features: Vec<f32>) -> Result<Self> {
        Self::new(features, self.dim, self.labels.clone(), self.num_classes)
    }
}

/// Isotropic Gaussian clusters, one per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub class_means: Matrix,
    pub within_class_sigma: f64,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl ClusterSpec {
    /// Class `k` centred at `separation * e_k`.
    pub fn axis_aligned(
        num_classes: usize,
        dim: usize,
        separation: f64,
        within_class_sigma: f64,
        samples_per_class: usize,
        seed: u64,
    ) -> Result<Self> {
        if num_classes > dim {
            return Err(GsdError::InvalidInput(format!(
                "axis-aligned means need num_classes ({num_classes}) <= dim ({dim})"
            )));
        }
        let mut class_means = Matrix::zeros(num_classes, dim);
        for k in 0..num_classes {
            class_means.set(k, k, separation);
        }
        let spec = Self {
            num_classes,
            dim,
            class_means,
            within_class_sigma,
            samples_per_class,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.dim == 0 || self.samples_per_class == 0 {
            return Err(GsdError::InvalidInput(
                "num_classes, dim and samples_per_class must be positive".into(),
            ));
        }
        if self.class_means.rows() != self.num_classes || self.class_means.cols() != self.dim {
            return Err(GsdError::InvalidInput(format!(
                "class_means is {}x{}, expected {}x{}",
                self.class_means.rows(),
                self.class_means.cols(),
                self.num_classes,
                self.dim
            )));
        }
        if !(self.within_class_sigma > 0.0 && self.within_class_sigma.is_finite()) {
            return Err(GsdError::InvalidInput(format!(
                "within_class_sigma must be positive, got {}",
                self.within_class_sigma
            )));
        }
        for a in 0..self.num_classes {
            for b in a + 1..self.num_classes {
                if self.class_means.row(a) == self.class_means.row(b) {
                    return Err(GsdError::InvalidInput(format!(
                        "classes {a} and {b} share the same mean"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Same distribution, different draw.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

/// Draws `samples_per_class` points per class, class by class.
pub fn gen_clusters(spec: &ClusterSpec) -> Result<EmbeddingBatch> {
    spec.validate()?;
    let mut rng = GsdRng::new(spec.seed);
    let n = spec.num_classes * spec.samples_per_class;
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for k in 0..spec.num_classes {
        let mean = spec.class_means.row(k);
        for _ in 0..spec.samples_per_class {
            for &m in mean {
                features.push((m + spec.within_class_sigma * rng.gaussian()) as f32);
            }
            labels.push(k as u32);
        }
    }
    EmbeddingBatch::new(features, spec.dim, labels, spec.num_classes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShiftFamily {
    /// Adds zero-mean Gaussian noise with standard deviation = severity.
    GaussianNoise,
    /// Multiplies every feature by the severity.
    FeatureScale,
    /// Rotates the first two coordinates by `severity` radians.
    Rotation2d,
}

impl ShiftFamily {
    pub fn name(self) -> &'static str {
        match self {
            ShiftFamily::GaussianNoise => "gaussian_noise",
            ShiftFamily::FeatureScale => "feature_scale",
            ShiftFamily::Rotation2d => "rotation_2d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian_noise" => Ok(ShiftFamily::GaussianNoise),
            "feature_scale" => Ok(ShiftFamily::FeatureScale),
            "rotation_2d" => Ok(ShiftFamily::Rotation2d),
            other => Err(GsdError::InvalidInput(format!("unknown shift family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    pub family: ShiftFamily,
    pub severity_levels: Vec<f64>,
    pub seed: u64,
}

/// Multipliers of the within-class sigma used by the default noise protocol.
pub const DEFAULT_NOISE_MULTIPLIERS: [f64; 5] = [0.5, 1.0, 1.5, 2.0, 2.5];

impl ShiftSpec {
    pub fn new(family: ShiftFamily, severity_levels: Vec<f64>, seed: u64) -> Result<Self> {
        let spec = Self {
            family,
            severity_levels,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Five Gaussian-noise levels at `(0.5, 1, 1.5, 2, 2.5) * sigma`, a
    /// feature-space stand-in for image corruption severities.
    pub fn default_noise(within_class_sigma: f64, seed: u64) -> Result<Self> {
        Self::new(
            ShiftFamily::GaussianNoise,
            DEFAULT_NOISE_MULTIPLIERS.iter().map(|m| m * within_class_sigma).collect(),
            seed,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = self.severity_levels.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(GsdError::InvalidInput(format!("severity {s} must be positive")));
        }
        if self.severity_levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GsdError::InvalidInput(
                "severity levels must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.severity_levels.len()
    }
}

/// Applies level `level_index` of a shift protocol. Each level draws from its
/// own stream derived from the spec seed.
pub fn apply_shift(batch: &EmbeddingBatch, spec: &ShiftSpec, level_index: usize) -> Result<EmbeddingBatch> {
    spec.validate()?;
    let severity = *spec.severity_levels.get(level_index).ok_or_else(|| {
        GsdError::InvalidInput(format!(
            "level index {level_index} out of range for {} levels",
            spec.num_levels()
        ))
    })?;
    let mut rng = GsdRng::derive(spec.seed, level_index as u64);
    shift_with_severity(batch, spec.family, severity, &mut rng)
}

/// Shift at an explicit severity. Severity 0 leaves noise and rotation
/// batches unchanged; scale 0 is rejected since it collapses every sample.
pub fn shift_with_severity(
    batch: &EmbeddingBatch,
    family: ShiftFamily,
    severity: f64,
    rng: &mut GsdRng,
) -> Result<EmbeddingBatch> {
    if !(severity >= 0.0 && severity.is_finite()) {
        return Err(GsdError::InvalidInput(format!("severity {severity} must be nonnegative")));
    }
    let features: Vec<f32> = match family {
        ShiftFamily::GaussianNoise => {
            if severity == 0.0 {
                return Ok(batch.clone());
            }
            batch
                .features()
                .iter()
                .map(|&v| (f64::from(v) + severity * rng.gaussian()) as f32)
                .collect()
        }
        ShiftFamily::FeatureScale => {
            if severity == 0.0 {
                return Err(GsdError::InvalidInput("feature scale must be positive".into()));
            }
            batch.features().iter().map(|&v| (f64::from(v) * severity) as f32).collect()
        }
        ShiftFamily::Rotation2d => {
            if batch.dim() < 2 {
                return Err(GsdError::InvalidInput(format!(
                    "rotation_2d needs dim >= 2, got {}",
                    batch.dim()
                )));
            }
            let (sin, cos) = severity.sin_cos();
            let mut out = batch.features().to_vec();
            for row in out.chunks_mut(batch.dim()) {
                let (x0, x1) = (f64::from(row[0]), f64::from(row[1]));
                row[0] = (x0 * cos - x1 * sin) as f32;
                row[1] = (x0 * sin + x1 * cos) as f32;
            }
            out
        }
    };
    batch.with_features(features)
}

/// Serializes a batch in GSDE layout.
pub fn encode_embeddings(batch: &EmbeddingBatch) -> Vec<u8> {
    let mut out = Vec::with_capacity(GSDE_HEADER_LEN + 4 * (batch.features.len() + batch.len()));
    out.extend_from_slice(GSDE_MAGIC);
    out.extend_from_slice(&GSDE_VERSION.to_le_bytes());
    out.extend_from_slice(&(batch.len() as u32).to_le_bytes());
    out.extend_from_slice(&(batch.dim as u32).to_le_bytes());
    out.extend_from_slice(&(batch.num_classes as u32).to_le_bytes());
    for v in &batch.features {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for l in &batch.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(GsdError::parse(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingBatch> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != GSDE_MAGIC {
        return Err(GsdError::MagicMismatch {
            expected: "GSDE".into(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = cur.u32("version")?;
    if version != GSDE_VERSION {
        return Err(GsdError::parse(4, format!("unsupported version {version}")));
    }
    let n = cur.u32("sample count")? as usize;
    let d = cur.u32("dimension")? as usize;
    let num_classes = cur.u32("class count")? as usize;
    if d == 0 {
        return Err(GsdError::parse(12, "dimension must be positive"));
    }
    if num_classes == 0 {
        return Err(GsdError::parse(16, "class count must be positive"));
    }
    let count = n
        .checked_mul(d)
        .ok_or_else(|| GsdError::parse(8, "n * d overflows"))?;
    let payload_start = cur.pos;
    let raw = cur.take(count * 4, "feature payload")?;
    let mut features = Vec::with_capacity(count);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(GsdError::parse(
                (payload_start + 4 * i) as u64,
                format!("non-finite feature value {v}"),
            ));
        }
        features.push(v);
    }
    let labels_start = cur.pos;
    let raw = cur.take(n * 4, "label payload")?;
    let mut labels = Vec::with_capacity(n);
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let l = u32::from_le_bytes(chunk.try_into().unwrap());
        if l as usize >= num_classes {
            return Err(GsdError::parse(
                (labels_start + 4 * i) as u64,
                format!("label {l} out of range for {num_classes} classes"),
            ));
        }
        labels.push(l);
    }
    if cur.pos != bytes.len() {
        return Err(GsdError::parse(
            cur.pos as u64,
            format!("{} trailing bytes after label payload", bytes.len() - cur.pos),
        ));
    }
    EmbeddingBatch::new(features, d, labels, num_classes)
}

pub fn write_embeddings(batch: &EmbeddingBatch, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_embeddings(batch))?;
    Ok(())
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingBatch> {
    decode_embeddings(&fs::read(path)?)
}

/// Imports `f0,...,f{d-1},label` CSV. The class count is taken from
/// `num_classes` when given, otherwise from the largest label.
pub fn read_embeddings_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<EmbeddingBatch> {
    let mut reader = csv::Reader::from_path(path.as_ref()).map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    let d = headers.len().saturating_sub(1);
    if d == 0 || headers.get(d) != Some("label") {
        return Err(GsdError::parse(0, "header must be f0,...,f{d-1},label"));
    }
    for (j, h) in headers.iter().take(d).enumerate() {
        if h != format!("f{j}") {
            return Err(GsdError::parse(0, format!("column {j} should be f{j}, found {h:?}")));
        }
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let offset = record.position().map_or(0, |p| p.byte());
        if record.len() != d + 1 {
            return Err(GsdError::parse(offset, format!("expected {} fields, got {}", d + 1, record.len())));
        }
        for field in record.iter().take(d) {
            let v: f32 = field
                .trim()
                .parse()
                .map_err(|_| GsdError::parse(offset, format!("bad feature value {field:?}")))?;
            features.push(v);
        }
        let field = &record[d];
        let l: u32 = field
            .trim()
            .parse()
            .map_err(|_| GsdError::parse(offset, format!("bad label {field:?}")))?;
        labels.push(l);
    }
    let inferred = labels.iter().max().map_or(1, |&m| m as usize + 1);
    let num_classes = num_classes.unwrap_or(inferred);
    EmbeddingBatch::new(features, d, labels, num_classes)
}

fn csv_error(e: csv::Error) -> GsdError {
    let offset = e.position().map_or(0, |p| p.byte());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => GsdError::Io(io),
        other => GsdError::parse(offset, format!("{other:?}")),
    }
}

/// Reads `.csv` through the CSV importer and anything else as GSDE.
pub fn read_any(path: impl AsRef<Path>) -> Result<EmbeddingBatch> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_embeddings_csv(path, None)
    } else {
        read_embeddings(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ClusterSpec {
        ClusterSpec::axis_aligned(2, 3, 3.0, 1.0, 100, 5).unwrap()
    }

    #[test]
    fn clusters_have_balanced_labels_and_are_deterministic() {
        let a = gen_clusters(&small_spec()).unwrap();
        assert_eq!(a.len(), 200);
        assert_eq!(a.labels().iter().filter(|&&l| l == 0).count(), 100);
        assert_eq!(a.labels().iter().filter(|&&l| l == 1).count(), 100);
        let b = gen_clusters(&small_spec()).unwrap();
        assert_eq!(a, b);
        let c = gen_clusters(&small_spec().with_seed(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn vanishing_sigma_collapses_to_means() {
        let mut spec = small_spec();
        spec.within_class_sigma = 1e-300;
        let b = gen_clusters(&spec).unwrap();
        for i in 0..b.len() {
            let mean = spec.class_means.row(b.label(i));
            assert_eq!(b.row_f64(i), mean.to_vec());
        }
    }

    #[test]
    fn duplicate_means_are_rejected() {
        let mut spec = small_spec();
        spec.class_means = Matrix::zeros(2, 3);
        assert!(spec.validate().is_err());
    }

    #[test]
    fn zero_severity_is_identity() {
        let b = gen_clusters(&small_spec()).unwrap();
        let mut rng = GsdRng::new(1);
        for family in [ShiftFamily::GaussianNoise, ShiftFamily::Rotation2d] {
            assert_eq!(shift_with_severity(&b, family, 0.0, &mut rng).unwrap(), b);
        }
        assert_eq!(shift_with_severity(&b, ShiftFamily::FeatureScale, 1.0, &mut rng).unwrap(), b);
    }

    #[test]
    fn noise_power_matches_severity() {
        let spec = ClusterSpec::axis_aligned(4, 16, 3.0, 1.0, 2000, 9).unwrap();
        let b = gen_clusters(&spec).unwrap();
        let shift = ShiftSpec::new(ShiftFamily::GaussianNoise, vec![0.7], 3).unwrap();
        let s = apply_shift(&b, &shift, 0).unwrap();
        let msd: f64 = b
            .features()
            .iter()
            .zip(s.features())
            .map(|(a, c)| (f64::from(*c) - f64::from(*a)).powi(2))
            .sum::<f64>()
            / b.len() as f64;
        let expected = 0.7 * 0.7 * 16.0;
        assert!((msd / expected - 1.0).abs() < 0.05, "msd {msd} expected {expected}");
        assert_eq!(s.labels(), b.labels());
    }

    #[test]
    fn full_rotation_is_identity() {
        let b = gen_clusters(&small_spec()).unwrap();
        let mut rng = GsdRng::new(0);
        let r = shift_with_severity(&b, ShiftFamily::Rotation2d, 2.0 * std::f64::consts::PI, &mut rng).unwrap();
        for (x, y) in b.features().iter().zip(r.features()) {
            assert!((x - y).abs() < 1e-9);
        }
        let quarter = shift_with_severity(&b, ShiftFamily::Rotation2d, std::f64::consts::FRAC_PI_2, &mut rng).unwrap();
        assert!((quarter.row(0)[1] - b.row(0)[0]).abs() < 1e-5);
    }

    #[test]
    fn rotation_needs_two_dims() {
        let b = EmbeddingBatch::new(vec![1.0, 2.0], 1, vec![0, 0], 1).unwrap();
        let mut rng = GsdRng::new(0);
        assert!(shift_with_severity(&b, ShiftFamily::Rotation2d, 0.5, &mut rng).is_err());
    }

    #[test]
    fn severities_must_increase() {
        assert!(ShiftSpec::new(ShiftFamily::GaussianNoise, vec![1.0, 1.0], 0).is_err());
        assert!(ShiftSpec::new(ShiftFamily::GaussianNoise, vec![-1.0], 0).is_err());
        let s = ShiftSpec::default_noise(2.0, 0).unwrap();
        assert_eq!(s.severity_levels, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let b = gen_clusters(&small_spec()).unwrap();
        assert!(apply_shift(&b, &s, 5).is_err());
    }

    #[test]
    fn batch_invariants_are_checked() {
        assert!(EmbeddingBatch::new(vec![f32::NAN], 1, vec![0], 1).is_err());
        assert!(EmbeddingBatch::new(vec![1.0], 1, vec![3], 2).is_err());
        assert!(EmbeddingBatch::new(vec![1.0, 2.0], 1, vec![0], 2).is_err());
    }

    #[test]
    fn decode_reports_offsets() {
        let b = EmbeddingBatch::new(vec![1.0, 2.0, 3.0, 4.0], 2, vec![0, 1], 2).unwrap();
        let bytes = encode_embeddings(&b);
        assert_eq!(decode_embeddings(&bytes).unwrap(), b);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_embeddings(&bad), Err(GsdError::MagicMismatch { .. })));

        let truncated = &bytes[..bytes.len() - 2];
        match decode_embeddings(truncated) {
            Err(GsdError::Parse { offset, .. }) => assert_eq!(offset, 20 + 16),
            other => panic!("unexpected {other:?}"),
        }

        let mut bad_label = bytes.clone();
        let at = bad_label.len() - 4;
        bad_label[at..].copy_from_slice(&7u32.to_le_bytes());
        match decode_embeddings(&bad_label) {
            Err(GsdError::Parse { offset, .. }) => assert_eq!(offset, at as u64),
            other => panic!("unexpected {other:?}"),
        }

        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(matches!(decode_embeddings(&trailing), Err(GsdError::Parse { .. })));

        assert!(matches!(decode_embeddings(b"GS"), Err(GsdError::Parse { offset: 0, .. })));
    }

    #[test]
    fn csv_import() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        fs::write(&path, "f0,f1,label\n1.5,2,0\n-3,4.25,2\n").unwrap();
        let b = read_any(&path).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.num_classes(), 3);
        assert_eq!(b.row(1), &[-3.0, 4.25]);

        fs::write(&path, "a,b,label\n1,2,0\n").unwrap();
        assert!(read_any(&path).is_err());
        fs::write(&path, "f0,label\n1,x\n").unwrap();
        assert!(matches!(read_any(&path), Err(GsdError::Parse { .. })));
    }
}
