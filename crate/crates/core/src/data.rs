//! Episode data model, feature CSV ingestion, and normalization.
//!
//! Points inside an [`EpisodeData`] are always stored in canonical order:
//! labeled support first, then extra unlabeled points, then queries.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Support,
    Unlabeled,
    Query,
}

impl Role {
    pub fn code(self) -> &'static str {
        match self {
            Role::Support => "S",
            Role::Unlabeled => "U",
            Role::Query => "Q",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        match s.trim() {
            "S" => Some(Role::Support),
            "U" => Some(Role::Unlabeled),
            "Q" => Some(Role::Query),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePoint {
    pub id: String,
    pub role: Role,
    /// Class index, present only for support points.
    pub label: Option<usize>,
    pub vector: Vec<f64>,
}

impl FeaturePoint {
    pub fn support(id: impl Into<String>, label: usize, vector: Vec<f64>) -> Self {
        FeaturePoint {
            id: id.into(),
            role: Role::Support,
            label: Some(label),
            vector,
        }
    }

    pub fn unlabeled(id: impl Into<String>, vector: Vec<f64>) -> Self {
        FeaturePoint {
            id: id.into(),
            role: Role::Unlabeled,
            label: None,
            vector,
        }
    }

    pub fn query(id: impl Into<String>, vector: Vec<f64>) -> Self {
        FeaturePoint {
            id: id.into(),
            role: Role::Query,
            label: None,
            vector,
        }
    }
}

/// A few-shot episode: `K*C` support, `N` unlabeled, `V` query points.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeData {
    points: Vec<FeaturePoint>,
    classes: usize,
    shots: usize,
    num_support: usize,
    num_unlabeled: usize,
    num_query: usize,
    dim: usize,
}

impl EpisodeData {
    /// Builds an episode, reordering points into canonical order (stable
    /// within each role).
    ///
    /// Checks the per-point invariants (label iff support, label range,
    /// finiteness, common dimension). Per-class shot counts are reported by
    /// [`validate_episode`] rather than rejected here.
    pub fn new(points: Vec<FeaturePoint>, classes: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidEpisode("episode has no points".into()));
        }
        let dim = points[0].vector.len();
        if dim == 0 {
            return Err(Error::InvalidEpisode("feature dimension is zero".into()));
        }
        for (i, p) in points.iter().enumerate() {
            if p.vector.len() != dim {
                return Err(Error::Dimension {
                    line: i + 1,
                    expected: dim,
                    found: p.vector.len(),
                });
            }
            if p.vector.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { id: p.id.clone() });
            }
            match (p.role, p.label) {
                (Role::Support, None) => {
                    return Err(Error::Role {
                        id: p.id.clone(),
                        message: "support point without a label".into(),
                    })
                }
                (Role::Support, Some(l)) if l >= classes => {
                    return Err(Error::Label {
                        id: p.id.clone(),
                        label: l as i64,
                        classes,
                    })
                }
                (Role::Unlabeled | Role::Query, Some(_)) => {
                    return Err(Error::Role {
                        id: p.id.clone(),
                        message: format!("{:?} point carries a label", p.role),
                    })
                }
                _ => {}
            }
        }

        let mut points = points;
        points.sort_by_key(|p| p.role);
        let count = |r: Role| points.iter().filter(|p| p.role == r).count();
        let num_support = count(Role::Support);
        let num_unlabeled = count(Role::Unlabeled);
        let num_query = count(Role::Query);

        let mut per_class = vec![0usize; classes];
        for p in &points[..num_support] {
            per_class[p.label.unwrap_or(0)] += 1;
        }
        let shots = modal_count(&per_class);

        Ok(EpisodeData {
            points,
            classes,
            shots,
            num_support,
            num_unlabeled,
            num_query,
            dim,
        })
    }

    pub fn points(&self) -> &[FeaturePoint] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &FeaturePoint {
        &self.points[i]
    }

    /// Number of classes `C`.
    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Shots per class `K` (the modal per-class support count).
    pub fn shots(&self) -> usize {
        self.shots
    }

    pub fn num_support(&self) -> usize {
        self.num_support
    }

    pub fn num_unlabeled(&self) -> usize {
        self.num_unlabeled
    }

    pub fn num_query(&self) -> usize {
        self.num_query
    }

    /// Total vertex count `m`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Index of the first query point.
    pub fn query_offset(&self) -> usize {
        self.num_support + self.num_unlabeled
    }

    pub fn support_labels(&self) -> Vec<usize> {
        self.points[..self.num_support]
            .iter()
            .map(|p| p.label.unwrap_or(0))
            .collect()
    }

    pub fn vectors(&self) -> Vec<&[f64]> {
        self.points.iter().map(|p| p.vector.as_slice()).collect()
    }

    pub fn query_ids(&self) -> Vec<&str> {
        self.points[self.query_offset()..]
            .iter()
            .map(|p| p.id.as_str())
            .collect()
    }

    /// Returns a copy with every vector replaced by `f(index, point)`.
    pub fn map_vectors<F>(&self, mut f: F) -> Result<EpisodeData>
    where
        F: FnMut(usize, &FeaturePoint) -> Result<Vec<f64>>,
    {
        let mut out = self.clone();
        for (i, p) in self.points.iter().enumerate() {
            let v = f(i, p)?;
            if v.len() != self.dim {
                return Err(Error::Dimension {
                    line: i + 1,
                    expected: self.dim,
                    found: v.len(),
                });
            }
            out.points[i].vector = v;
        }
        Ok(out)
    }
}

fn modal_count(per_class: &[usize]) -> usize {
    let mut freq: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in per_class {
        *freq.entry(c).or_default() += 1;
    }
    // Highest frequency wins; ties go to the larger count.
    freq.into_iter()
        .max_by_key(|&(count, f)| (f, count))
        .map(|(count, _)| count)
        .unwrap_or(0)
}

/// Dense `rows x cols` matrix of class scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LabelMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        LabelMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        LabelMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        LabelMatrix::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.data[i * self.cols + c]
    }

    pub fn set(&mut self, i: usize, c: usize, v: f64) {
        self.data[i * self.cols + c] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, c)).collect()
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> LabelMatrix {
        LabelMatrix::from_vec(
            end - start,
            self.cols,
            self.data[start * self.cols..end * self.cols].to_vec(),
        )
    }

    pub fn max_abs_diff(&self, other: &LabelMatrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }
}

/// Target class fractions `o`; strictly positive and summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrior {
    fractions: Vec<f64>,
}

impl ClassPrior {
    pub fn new(fractions: Vec<f64>) -> Result<Self> {
        if fractions.is_empty() {
            return Err(Error::param("class prior is empty"));
        }
        if fractions.iter().any(|&f| !(f.is_finite() && f > 0.0)) {
            return Err(Error::param("class prior entries must be positive"));
        }
        let sum: f64 = fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::param(format!("class prior sums to {sum}, expected 1")));
        }
        Ok(ClassPrior { fractions })
    }

    pub fn uniform(classes: usize) -> Self {
        ClassPrior {
            fractions: vec![1.0 / classes as f64; classes],
        }
    }

    /// Parses comma/whitespace separated fractions.
    pub fn parse(text: &str) -> Result<Self> {
        let values = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::param(format!("bad prior value `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        ClassPrior::new(values)
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn len(&self) -> usize {
        self.fractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fractions.is_empty()
    }
}

/// One parsed CSV row before role/label checks against an episode.
#[derive(Debug, Clone)]
pub(crate) struct RawRow {
    pub line: usize,
    pub id: String,
    pub role: Role,
    pub label: i64,
    pub vector: Vec<f64>,
}

pub(crate) fn read_rows(path: &Path) -> Result<Vec<RawRow>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header = reader
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if header.len() < 4
        || &header[0] != "id"
        || &header[1] != "role"
        || &header[2] != "label"
    {
        return Err(Error::Parse {
            line: 1,
            message: "header must be `id,role,label,f0,...`".into(),
        });
    }
    let dim = header.len() - 3;

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(rows.len() + 2, |p| p.line() as usize);
        if record.len() != dim + 3 {
            return Err(Error::Dimension {
                line,
                expected: dim,
                found: record.len().saturating_sub(3),
            });
        }
        let id = record[0].to_string();
        let role = Role::parse(&record[1]).ok_or_else(|| Error::Parse {
            line,
            message: format!("unknown role `{}`", &record[1]),
        })?;
        let label: i64 = record[2].parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad label `{}`", &record[2]),
        })?;
        let vector = (3..record.len())
            .map(|k| {
                record[k].parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    message: format!("bad float `{}`", &record[k]),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { id });
        }
        rows.push(RawRow {
            line,
            id,
            role,
            label,
            vector,
        });
    }
    Ok(rows)
}

/// Loads an episode from a feature CSV (`id,role,label,f0,...`).
///
/// The class count is the number of distinct support labels; labels must be
/// dense in `[0, C)`.
pub fn load_feature_file(path: impl AsRef<Path>) -> Result<EpisodeData> {
    let rows = read_rows(path.as_ref())?;
    let classes = rows
        .iter()
        .filter(|r| r.role == Role::Support && r.label >= 0)
        .map(|r| r.label)
        .collect::<HashSet<_>>()
        .len();

    let mut points = Vec::with_capacity(rows.len());
    for r in rows {
        let label = match r.role {
            Role::Support => {
                if r.label < 0 {
                    return Err(Error::Role {
                        id: r.id,
                        message: format!("support row at line {} has no label", r.line),
                    });
                }
                if r.label as usize >= classes {
                    return Err(Error::Label {
                        id: r.id,
                        label: r.label,
                        classes,
                    });
                }
                Some(r.label as usize)
            }
            _ => {
                if r.label != -1 {
                    return Err(Error::Role {
                        id: r.id,
                        message: format!(
                            "{:?} row at line {} carries label {}",
                            r.role, r.line, r.label
                        ),
                    });
                }
                None
            }
        };
        points.push(FeaturePoint {
            id: r.id,
            role: r.role,
            label,
            vector: r.vector,
        });
    }
    EpisodeData::new(points, classes)
}

/// Writes an episode in the feature CSV format, canonical order.
pub fn save_feature_file(episode: &EpisodeData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io)?);
    write_feature_csv(episode, &mut out).map_err(io)?;
    out.flush().map_err(io)
}

pub fn write_feature_csv<W: Write>(episode: &EpisodeData, out: &mut W) -> std::io::Result<()> {
    write!(out, "id,role,label")?;
    for k in 0..episode.dim() {
        write!(out, ",f{k}")?;
    }
    writeln!(out)?;
    for p in episode.points() {
        let label = p.label.map_or(-1, |l| l as i64);
        write!(out, "{},{},{}", p.id, p.role.code(), label)?;
        for x in &p.vector {
            // `{:?}` keeps a decimal point and round-trips exactly.
            write!(out, ",{x:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales every feature vector to unit Euclidean length.
pub fn l2_normalize(episode: &EpisodeData) -> Result<EpisodeData> {
    episode.map_vectors(|_, p| {
        let n = norm(&p.vector);
        if n == 0.0 {
            return Err(Error::ZeroVector { id: p.id.clone() });
        }
        Ok(p.vector.iter().map(|x| x / n).collect())
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    TooFewClasses(usize),
    TooFewPoints { points: usize, classes: usize },
    ShotCount { class: usize, found: usize, expected: usize },
    DuplicateId(String),
    NoQueries,
    NonFinite(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooFewClasses(c) => write!(f, "episode has {c} classes, need at least 2"),
            Violation::TooFewPoints { points, classes } => {
                write!(f, "episode has {points} points for {classes} classes")
            }
            Violation::ShotCount {
                class,
                found,
                expected,
            } => write!(f, "class {class} has {found}/{expected} shots"),
            Violation::DuplicateId(id) => write!(f, "duplicate id `{id}`"),
            Violation::NoQueries => write!(f, "episode has no query points"),
            Violation::NonFinite(id) => write!(f, "non-finite feature in `{id}`"),
        }
    }
}

/// Lists every invariant the episode violates. Empty means valid.
pub fn validate_episode(episode: &EpisodeData) -> Vec<Violation> {
    let mut out = Vec::new();
    let classes = episode.classes();
    if classes < 2 {
        out.push(Violation::TooFewClasses(classes));
    }
    if episode.len() < classes {
        out.push(Violation::TooFewPoints {
            points: episode.len(),
            classes,
        });
    }
    let mut per_class = vec![0usize; classes];
    for l in episode.support_labels() {
        per_class[l] += 1;
    }
    for (class, &found) in per_class.iter().enumerate() {
        if found != episode.shots() || found == 0 {
            out.push(Violation::ShotCount {
                class,
                found,
                expected: episode.shots().max(1),
            });
        }
    }
    let mut seen = HashSet::new();
    for p in episode.points() {
        if !seen.insert(p.id.as_str()) {
            out.push(Violation::DuplicateId(p.id.clone()));
        }
        if p.vector.iter().any(|x| !x.is_finite()) {
            out.push(Violation::NonFinite(p.id.clone()));
        }
    }
    if episode.num_query() == 0 {
        out.push(Violation::NoQueries);
    }
    out
}
