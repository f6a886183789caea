//! Domain datasets: synthetic shift generators, file ingestion, the
//! few-shot split, and source-fitted feature rescaling.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::container::Container;
use crate::error::{Error, Result};
use crate::rng::{mix_seed, stream, Stream};
use crate::tensor::Tensor;

/// Distance of blob centers from the origin in the generator's plane.
pub const BLOB_CENTER_RADIUS: f64 = 2.0;

const DATA_MAGIC: [u8; 8] = *b"AVDADATA";
const DATA_VERSION: u32 = 1;

/// Row-major `rows x cols` block of f64. `Send`, unlike [`Tensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape("Matrix::new", &[rows, cols], &[data.len()]));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn select(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &[self.rows, self.cols]).expect("matrix shape is consistent")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

/// Features with optional labels, tagged by domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub features: Matrix,
    pub labels: Option<Vec<usize>>,
    pub domain: Domain,
    pub classes: usize,
}

impl DomainDataset {
    pub fn new(features: Matrix, labels: Option<Vec<usize>>, domain: Domain, classes: usize) -> Result<Self> {
        if let Some(r) = (0..features.rows).find(|&r| features.row(r).iter().any(|v| !v.is_finite())) {
            return Err(Error::Contract(format!("row {r} has a non-finite feature")));
        }
        if let Some(labels) = &labels {
            if labels.len() != features.rows {
                return Err(Error::shape("DomainDataset", &[features.rows], &[labels.len()]));
            }
            if let Some((r, y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
                return Err(Error::Contract(format!("row {r}: label {y} outside [0, {classes})")));
            }
        }
        Ok(Self {
            features,
            labels,
            domain,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols
    }

    pub fn subset(&self, indices: &[usize]) -> DomainDataset {
        DomainDataset {
            features: self.features.select(indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            domain: self.domain,
            classes: self.classes,
        }
    }

    pub fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Contract(format!("{} dataset has no labels", self.domain.as_str())))
    }

    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let mut counts = vec![0; self.classes];
        for &y in self.require_labels()? {
            counts[y] += 1;
        }
        Ok(counts)
    }

    /// Per-axis `(min, max)` over all rows.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|c| {
                (0..self.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    let v = self.features.row(r)[c];
                    (lo.min(v), hi.max(v))
                })
            })
            .collect()
    }
}

/// `x -> scale * R(rotation) x + translation`, with the rotation acting in
/// the plane of the first two coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineShift {
    /// Radians.
    pub rotation: f64,
    pub translation: Vec<f64>,
    pub scale: f64,
}

impl AffineShift {
    pub fn identity(dim: usize) -> Self {
        Self {
            rotation: 0.0,
            translation: vec![0.0; dim],
            scale: 1.0,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.scale == 0.0 || !self.scale.is_finite() {
            return Err(Error::param("scale", format!("degenerate shift scale {}", self.scale)));
        }
        if self.translation.len() != dim {
            return Err(Error::shape("AffineShift", &[dim], &[self.translation.len()]));
        }
        Ok(())
    }

    pub fn apply(&self, x: &mut [f64]) {
        let (s, c) = self.rotation.sin_cos();
        let (a, b) = (x[0], x[1]);
        x[0] = c * a - s * b;
        x[1] = s * a + c * b;
        for (v, t) in x.iter_mut().zip(&self.translation) {
            *v = self.scale * *v + t;
        }
    }
}

/// Class `c` center: on a circle of radius [`BLOB_CENTER_RADIUS`] at angle
/// `2 pi c / K` in the first two coordinates, zero elsewhere.
pub fn blob_center(c: usize, classes: usize, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    let a = 2.0 * PI * c as f64 / classes as f64;
    v[0] = BLOB_CENTER_RADIUS * a.cos();
    v[1] = BLOB_CENTER_RADIUS * a.sin();
    v
}

/// Isotropic Gaussian blobs, one per class, and an independent draw of the
/// same blobs pushed through `shift`.
pub fn gen_shifted_blobs(
    classes: usize,
    dim: usize,
    n_per_class: usize,
    shift: &AffineShift,
    noise_sigma: f64,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset)> {
    if classes < 2 {
        return Err(Error::param("classes", "need at least 2"));
    }
    if dim < 2 {
        return Err(Error::param("dim", "need at least 2 features"));
    }
    if !(noise_sigma >= 0.0) {
        return Err(Error::param("noise_sigma", "must be non-negative"));
    }
    shift.validate(dim)?;
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, shifted: bool, domain: Domain| {
        let mut data = Vec::with_capacity(classes * n_per_class * dim);
        let mut labels = Vec::with_capacity(classes * n_per_class);
        for c in 0..classes {
            let center = blob_center(c, classes, dim);
            for _ in 0..n_per_class {
                let mut x: Vec<f64> = center
                    .iter()
                    .map(|m| m + noise_sigma * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                if shifted {
                    shift.apply(&mut x);
                }
                data.extend(x);
                labels.push(c);
            }
        }
        DomainDataset::new(Matrix::new(labels.len(), dim, data)?, Some(labels), domain, classes)
    };
    let source = draw(&mut stream(seed, Stream::Data), false, Domain::Source)?;
    let target = draw(&mut stream(mix_seed(seed, 1), Stream::Data), true, Domain::Target)?;
    Ok((source, target))
}

/// Two interleaved unit half-circles; class 0 is the upper arc centered at
/// the origin, class 1 the lower arc centered at `(1, 0.5)`.
pub fn gen_two_moons_pair(
    n: usize,
    shift: &AffineShift,
    noise: f64,
    seed: u64,
) -> Result<(DomainDataset, DomainDataset)> {
    if n < 2 {
        return Err(Error::param("n", "need at least 2 samples"));
    }
    if !(noise >= 0.0) {
        return Err(Error::param("noise", "must be non-negative"));
    }
    shift.validate(2)?;
    let n0 = n.div_ceil(2);
    let n1 = n / 2;
    let arc = |i: usize, m: usize| if m > 1 { PI * i as f64 / (m - 1) as f64 } else { 0.0 };
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, shifted: bool, domain: Domain| {
        let mut data = Vec::with_capacity(2 * n);
        let mut labels = Vec::with_capacity(n);
        for (class, m) in [(0, n0), (1, n1)] {
            for i in 0..m {
                let t = arc(i, m);
                let mut p = if class == 0 {
                    [t.cos(), t.sin()]
                } else {
                    [1.0 - t.cos(), 0.5 - t.sin()]
                };
                for v in p.iter_mut() {
                    *v += noise * rng.sample::<f64, _>(StandardNormal);
                }
                if shifted {
                    shift.apply(&mut p);
                }
                data.extend(p);
                labels.push(class);
            }
        }
        DomainDataset::new(Matrix::new(n, 2, data)?, Some(labels), domain, 2)
    };
    let source = draw(&mut stream(seed, Stream::Data), false, Domain::Source)?;
    let target = draw(&mut stream(mix_seed(seed, 1), Stream::Data), true, Domain::Target)?;
    Ok((source, target))
}

/// Writes `f0,...,f{D-1}[,label]`.
pub fn save_csv(ds: &DomainDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut header: Vec<String> = (0..ds.dim()).map(|i| format!("f{i}")).collect();
    if ds.labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in 0..ds.len() {
        let mut rec: Vec<String> = ds.features.row(r).iter().map(|v| format!("{v:?}")).collect();
        if let Some(l) = &ds.labels {
            rec.push(l[r].to_string());
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Row {
            path: path.display().to_string(),
            row: 0,
            detail: format!("{other:?}"),
        },
    }
}

pub fn save_binary(ds: &DomainDataset, path: &Path) -> Result<()> {
    let mut c = Container::new(DATA_MAGIC, DATA_VERSION, [0; 32]);
    c.push("features", &[ds.len(), ds.dim()], ds.features.data.clone())?;
    if let Some(l) = &ds.labels {
        c.push("labels", &[l.len()], l.iter().map(|&y| y as f64).collect())?;
    }
    let domain = match ds.domain {
        Domain::Source => 0.0,
        Domain::Target => 1.0,
    };
    c.push("meta", &[2], vec![ds.classes as f64, domain])?;
    c.write(path)
}

/// Reads a labeled array from CSV or the binary container (sniffed by its
/// magic bytes). Every row-level problem names the offending row, counting
/// the CSV header as row 1.
pub fn load_labeled_array(path: &Path, domain: Domain, classes: usize) -> Result<DomainDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&DATA_MAGIC) {
        return load_binary(&bytes, domain, classes);
    }
    let name = path.display().to_string();
    let row_err = |row: usize, detail: String| Error::Row {
        path: name.clone(),
        row,
        detail,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes.as_slice());
    let header = rdr
        .headers()
        .map_err(|e| row_err(1, e.to_string()))?
        .clone();
    let labeled = header.iter().next_back() == Some("label");
    let width = header.len() - usize::from(labeled);
    if width == 0 {
        return Err(row_err(1, "no feature columns".into()));
    }
    for (i, h) in header.iter().take(width).enumerate() {
        if h != format!("f{i}") {
            return Err(row_err(1, format!("column {} header `{h}`, expected `f{i}`", i + 1)));
        }
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| row_err(row, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(row_err(row, format!("{} fields, expected {}", rec.len(), header.len())));
        }
        for (c, field) in rec.iter().take(width).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| row_err(row, format!("column {}: `{field}` is not a number", c + 1)))?;
            if !v.is_finite() {
                return Err(row_err(row, format!("column {}: non-finite value", c + 1)));
            }
            data.push(v);
        }
        if labeled {
            let field = &rec[width];
            let y: usize = field
                .parse()
                .map_err(|_| row_err(row, format!("label `{field}` is not a class index")))?;
            if y >= classes {
                return Err(row_err(row, format!("label {y} outside [0, {classes})")));
            }
            labels.push(y);
        }
    }
    let rows = data.len() / width;
    DomainDataset::new(Matrix::new(rows, width, data)?, labeled.then_some(labels), domain, classes)
}

fn load_binary(bytes: &[u8], domain: Domain, classes: usize) -> Result<DomainDataset> {
    let c = Container::from_bytes(bytes, DATA_MAGIC, DATA_VERSION)?;
    let f = c.require("features")?;
    if f.shape.len() != 2 {
        return Err(Error::Corrupt("features must be rank 2".into()));
    }
    let features = Matrix::new(f.shape[0], f.shape[1], f.data.clone())?;
    let labels = match c.get("labels") {
        None => None,
        Some(l) => Some(
            l.data
                .iter()
                .enumerate()
                .map(|(r, &v)| {
                    if v.fract() != 0.0 || v < 0.0 || v >= classes as f64 {
                        Err(Error::Row {
                            path: "<binary>".into(),
                            row: r,
                            detail: format!("label {v} outside [0, {classes})"),
                        })
                    } else {
                        Ok(v as usize)
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    DomainDataset::new(features, labels, domain, classes)
}

/// Disjoint labeled / unlabeled index sets with exactly `shots` labeled
/// examples per class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotSplit {
    pub labeled_indices: Vec<usize>,
    pub unlabeled_indices: Vec<usize>,
}

pub fn make_few_shot_split(ds: &DomainDataset, shots: usize, seed: u64) -> Result<FewShotSplit> {
    let labels = ds.require_labels()?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut rng = stream(seed, Stream::Split);
    let mut labeled = Vec::with_capacity(shots * ds.classes);
    for (c, idx) in by_class.iter_mut().enumerate() {
        if idx.len() < shots {
            return Err(Error::Contract(format!(
                "class {c} has {} examples, fewer than {shots} shots",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        labeled.extend_from_slice(&idx[..shots]);
    }
    let mut is_labeled = vec![false; ds.len()];
    for &i in &labeled {
        is_labeled[i] = true;
    }
    let unlabeled = (0..ds.len()).filter(|&i| !is_labeled[i]).collect();
    Ok(FewShotSplit {
        labeled_indices: labeled,
        unlabeled_indices: unlabeled,
    })
}

/// Per-feature affine map onto `[-1, 1]`, fitted on one dataset and then
/// applied unchanged to others.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl FeatureScaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            lo: vec![-1.0; dim],
            hi: vec![1.0; dim],
        }
    }

    pub fn fit(m: &Matrix) -> Self {
        let mut lo = vec![f64::INFINITY; m.cols];
        let mut hi = vec![f64::NEG_INFINITY; m.cols];
        for r in 0..m.rows {
            for (c, &v) in m.row(r).iter().enumerate() {
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
        }
        if m.rows == 0 {
            return Self::identity(m.cols);
        }
        Self { lo, hi }
    }

    pub fn transform(&self, m: &Matrix) -> Result<Matrix> {
        if m.cols != self.lo.len() {
            return Err(Error::shape("FeatureScaler", &[self.lo.len()], &[m.cols]));
        }
        let mut data = m.data.clone();
        for row in data.chunks_mut(m.cols) {
            for (c, v) in row.iter_mut().enumerate() {
                let span = self.hi[c] - self.lo[c];
                *v = if span > 0.0 {
                    2.0 * (*v - self.lo[c]) / span - 1.0
                } else {
                    *v - self.lo[c]
                };
            }
        }
        Matrix::new(m.rows, m.cols, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_of_class(ds: &DomainDataset, c: usize) -> Vec<f64> {
        let labels = ds.labels.as_ref().unwrap();
        let rows: Vec<usize> = (0..ds.len()).filter(|&r| labels[r] == c).collect();
        (0..ds.dim())
            .map(|d| rows.iter().map(|&r| ds.features.row(r)[d]).sum::<f64>() / rows.len() as f64)
            .collect()
    }

    #[test]
    fn blobs_are_seeded_and_labeled() {
        let shift = AffineShift::identity(3);
        let (s1, t1) = gen_shifted_blobs(3, 3, 50, &shift, 0.3, 7).unwrap();
        let (s2, t2) = gen_shifted_blobs(3, 3, 50, &shift, 0.3, 7).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
        assert_ne!(s1.features, t1.features);
        assert_eq!(s1.class_counts().unwrap(), vec![50; 3]);
        assert_eq!(s1.domain, Domain::Source);
        assert_eq!(t1.domain, Domain::Target);
    }

    #[test]
    fn rotation_by_quarter_turn_permutes_centers() {
        // with four classes the centers sit on the axes; a quarter turn
        // carries class c onto the position of class c+1
        let shift = AffineShift {
            rotation: PI / 2.0,
            translation: vec![0.0, 0.0],
            scale: 1.0,
        };
        for c in 0..4 {
            let mut p = blob_center(c, 4, 2);
            shift.apply(&mut p);
            let next = blob_center((c + 1) % 4, 4, 2);
            assert!((p[0] - next[0]).abs() < 1e-12 && (p[1] - next[1]).abs() < 1e-12);
        }
        let (_, target) = gen_shifted_blobs(4, 2, 400, &shift, 0.2, 3).unwrap();
        for c in 0..4 {
            let m = mean_of_class(&target, c);
            let next = blob_center((c + 1) % 4, 4, 2);
            assert!((m[0] - next[0]).abs() < 0.05 && (m[1] - next[1]).abs() < 0.05);
        }
    }

    #[test]
    fn degenerate_shift_is_rejected() {
        let shift = AffineShift {
            rotation: 0.0,
            translation: vec![0.0, 0.0],
            scale: 0.0,
        };
        assert!(gen_shifted_blobs(3, 2, 10, &shift, 0.1, 1).is_err());
        assert!(gen_two_moons_pair(10, &shift, 0.1, 1).is_err());
        assert!(gen_shifted_blobs(1, 2, 10, &AffineShift::identity(2), 0.1, 1).is_err());
        assert!(gen_shifted_blobs(3, 2, 10, &AffineShift::identity(3), 0.1, 1).is_err());
    }

    #[test]
    fn noiseless_moons_lie_on_unit_arcs() {
        let (s, _) = gen_two_moons_pair(101, &AffineShift::identity(2), 0.0, 1).unwrap();
        let labels = s.labels.as_ref().unwrap();
        assert_eq!(labels.iter().filter(|&&y| y == 0).count(), 51);
        assert_eq!(labels.iter().filter(|&&y| y == 1).count(), 50);
        for r in 0..s.len() {
            let p = s.features.row(r);
            let (cx, cy) = if labels[r] == 0 { (0.0, 0.0) } else { (1.0, 0.5) };
            let rad = ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
            assert!((rad - 1.0).abs() < 1e-12);
            if labels[r] == 0 {
                assert!(p[1] >= -1e-12);
            } else {
                assert!(p[1] <= 0.5 + 1e-12);
            }
        }
    }

    #[test]
    fn moons_translation_moves_bounding_box() {
        let shift = AffineShift {
            rotation: 0.0,
            translation: vec![2.0, 0.0],
            scale: 1.0,
        };
        let (s, t) = gen_two_moons_pair(200, &shift, 0.0, 4).unwrap();
        for ((slo, shi), (tlo, thi), d) in s
            .bounding_box()
            .into_iter()
            .zip(t.bounding_box())
            .zip([2.0, 0.0])
            .map(|((a, b), d)| (a, b, d))
        {
            assert!((tlo - slo - d).abs() < 1e-12);
            assert!((thi - shi - d).abs() < 1e-12);
        }
    }

    #[test]
    fn few_shot_split_is_exact() {
        let (s, _) = gen_shifted_blobs(4, 2, 30, &AffineShift::identity(2), 0.5, 2).unwrap();
        for shots in [0, 1, 5, 10, 25] {
            let split = make_few_shot_split(&s, shots, 9).unwrap();
            assert_eq!(split.labeled_indices.len(), shots * 4);
            let labels = s.labels.as_ref().unwrap();
            let mut counts = [0; 4];
            for &i in &split.labeled_indices {
                counts[labels[i]] += 1;
            }
            assert_eq!(counts, [shots; 4]);
            let mut all: Vec<usize> = split
                .labeled_indices
                .iter()
                .chain(&split.unlabeled_indices)
                .copied()
                .collect();
            all.sort_unstable();
            assert_eq!(all, (0..s.len()).collect::<Vec<_>>());
        }
        let zero = make_few_shot_split(&s, 0, 1).unwrap();
        assert!(zero.labeled_indices.is_empty());
        assert_eq!(zero.unlabeled_indices.len(), s.len());
        assert!(make_few_shot_split(&s, 31, 1).is_err());
        assert_eq!(make_few_shot_split(&s, 3, 5).unwrap(), make_few_shot_split(&s, 3, 5).unwrap());
    }

    #[test]
    fn scaler_uses_fit_statistics_only() {
        let src = Matrix::new(3, 2, vec![0.0, 10.0, 1.0, 20.0, 2.0, 30.0]).unwrap();
        let sc = FeatureScaler::fit(&src);
        let out = sc.transform(&src).unwrap();
        assert_eq!(out.data, vec![-1.0, -1.0, 0.0, 0.0, 1.0, 1.0]);
        let other = Matrix::new(1, 2, vec![4.0, 40.0]).unwrap();
        assert_eq!(sc.transform(&other).unwrap().data, vec![3.0, 2.0]);
        let ident = FeatureScaler::identity(2);
        assert_eq!(ident.transform(&other).unwrap().data, other.data);
    }

    #[test]
    fn csv_fixture_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        std::fs::write(&p, "f0,f1,label\n0.5,1.0,0\n-1,2,1\n3,4e-1,2\n").unwrap();
        let ds = load_labeled_array(&p, Domain::Source, 3).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.labels, Some(vec![0, 1, 2]));
        assert_eq!(ds.features.row(2), &[3.0, 0.4]);

        match load_labeled_array(&p, Domain::Source, 2) {
            Err(Error::Row { row, .. }) => assert_eq!(row, 4),
            other => panic!("expected row error, got {other:?}"),
        }
        std::fs::write(&p, "f0,f1\n1,2\n3\n").unwrap();
        assert!(matches!(load_labeled_array(&p, Domain::Target, 2), Err(Error::Row { row: 3, .. })));
        std::fs::write(&p, "f0,f1\n1,abc\n").unwrap();
        assert!(matches!(load_labeled_array(&p, Domain::Target, 2), Err(Error::Row { row: 2, .. })));
        std::fs::write(&p, "f0,f1\n1,2\n").unwrap();
        let unl = load_labeled_array(&p, Domain::Target, 2).unwrap();
        assert!(unl.labels.is_none());
        assert!(load_labeled_array(&dir.path().join("missing.csv"), Domain::Target, 2).is_err());
    }

    #[test]
    fn file_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let (s, _) = gen_shifted_blobs(3, 2, 20, &AffineShift::identity(2), 0.7, 5).unwrap();
        let csv = dir.path().join("s.csv");
        save_csv(&s, &csv).unwrap();
        assert_eq!(load_labeled_array(&csv, Domain::Source, 3).unwrap(), s);
        let bin = dir.path().join("s.bin");
        save_binary(&s, &bin).unwrap();
        assert_eq!(load_labeled_array(&bin, Domain::Source, 3).unwrap(), s);
        assert!(load_labeled_array(&bin, Domain::Source, 2).is_err());
    }
}
