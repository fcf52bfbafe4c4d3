//! Sound-event co-occurrence graph and its Laplacian penalty.
//!
//! Nodes are event classes. An edge weight counts how many training clips
//! contain both classes, scaled by the largest count so every weight lies in
//! `[0, 1]`. The penalty `v^T L v` equals `1/2 sum_ij A_ij (v_i - v_j)^2` and
//! pulls the aggregate activity of co-occurring classes together.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CsedError, Result};
use crate::tensor::Matrix;

/// Ordered, duplicate-free list of event class names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct EventVocabulary {
    labels: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl EventVocabulary {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(CsedError::InvalidConfig("event vocabulary is empty".into()));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(CsedError::InvalidConfig(format!("duplicate event label `{l}`")));
            }
        }
        Ok(EventVocabulary { labels, index })
    }

    /// Sorted union of labels, for building a vocabulary from annotations.
    pub fn from_sorted_union<'a>(labels: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let set: BTreeSet<&str> = labels.into_iter().collect();
        EventVocabulary::new(set)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| CsedError::UnknownEvent(label.to_string()))
    }

    pub fn contains(&self, label: &str) -> bool {
        self.index.contains_key(label)
    }
}

impl TryFrom<Vec<String>> for EventVocabulary {
    type Error = CsedError;
    fn try_from(v: Vec<String>) -> Result<Self> {
        EventVocabulary::new(v)
    }
}

impl From<EventVocabulary> for Vec<String> {
    fn from(v: EventVocabulary) -> Self {
        v.labels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceGraph {
    vocab: EventVocabulary,
    raw_counts: Option<Vec<Vec<u64>>>,
    adjacency: Matrix,
    degree: Vec<f64>,
    laplacian: Matrix,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    labels: Vec<String>,
    raw_counts: Option<Vec<Vec<u64>>>,
    adjacency: Vec<Vec<f64>>,
}

impl CooccurrenceGraph {
    pub fn from_adjacency(vocab: EventVocabulary, adjacency: Matrix) -> Result<Self> {
        if adjacency.rows() != vocab.len() {
            return Err(CsedError::DimensionError {
                expected: vocab.len(),
                actual: adjacency.rows(),
            });
        }
        if adjacency.as_slice().iter().any(|&a| a > 1.0) {
            return Err(CsedError::InvalidAdjacency("weights must not exceed 1".into()));
        }
        let laplacian = laplacian(&adjacency)?;
        let degree = (0..vocab.len()).map(|i| laplacian[(i, i)]).collect();
        Ok(CooccurrenceGraph {
            vocab,
            raw_counts: None,
            adjacency,
            degree,
            laplacian,
        })
    }

    pub fn from_counts(vocab: EventVocabulary, counts: Vec<Vec<u64>>) -> Result<Self> {
        let m = vocab.len();
        let max = counts.iter().flatten().copied().max().unwrap_or(0);
        let mut a = Matrix::zeros(m, m);
        if max > 0 {
            for i in 0..m {
                for j in 0..m {
                    a[(i, j)] = counts[i][j] as f64 / max as f64;
                }
            }
        }
        let mut g = CooccurrenceGraph::from_adjacency(vocab, a)?;
        g.raw_counts = Some(counts);
        Ok(g)
    }

    /// A graph with no edges; its penalty is identically zero.
    pub fn empty(vocab: EventVocabulary) -> Self {
        let m = vocab.len();
        CooccurrenceGraph {
            vocab,
            raw_counts: Some(vec![vec![0; m]; m]),
            adjacency: Matrix::zeros(m, m),
            degree: vec![0.0; m],
            laplacian: Matrix::zeros(m, m),
        }
    }

    pub fn vocab(&self) -> &EventVocabulary {
        &self.vocab
    }

    pub fn n_events(&self) -> usize {
        self.vocab.len()
    }

    pub fn raw_counts(&self) -> Option<&[Vec<u64>]> {
        self.raw_counts.as_deref()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    /// Diagonal of the degree matrix.
    pub fn degree(&self) -> &[f64] {
        &self.degree
    }

    pub fn laplacian(&self) -> &Matrix {
        &self.laplacian
    }

    pub fn penalty(&self, v: &[f64]) -> Result<f64> {
        quadratic_penalty(v, &self.laplacian)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = GraphFile {
            labels: self.vocab.labels().to_vec(),
            raw_counts: self.raw_counts.clone(),
            adjacency: (0..self.n_events())
                .map(|i| self.adjacency.row(i).to_vec())
                .collect(),
        };
        let f = File::create(path).map_err(|e| CsedError::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer_pretty(&mut w, &file)?;
        w.flush().map_err(|e| CsedError::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CsedError::io(path, e))?;
        let file: GraphFile = serde_json::from_str(&text)?;
        let vocab = EventVocabulary::new(file.labels)?;
        let mut g = CooccurrenceGraph::from_adjacency(vocab, Matrix::from_rows(&file.adjacency)?)?;
        if let Some(counts) = file.raw_counts {
            if counts.len() != g.n_events() || counts.iter().any(|r| r.len() != g.n_events()) {
                return Err(CsedError::shape("raw_counts does not match the vocabulary"));
            }
            g.raw_counts = Some(counts);
        }
        Ok(g)
    }

    /// Adjacency as CSV: a header of labels followed by one row per class.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| CsedError::io(path, e))?;
        let mut w = BufWriter::new(f);
        let io = |e| CsedError::io(path, e);
        writeln!(w, "{}", self.vocab.labels().join(",")).map_err(io)?;
        for i in 0..self.n_events() {
            let row: Vec<String> = self.adjacency.row(i).iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}", row.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CsedError::io(path, e))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(CsedError::ParseError {
            line: 1,
            msg: "missing header".into(),
        })?;
        let vocab = EventVocabulary::new(header.split(',').map(|s| s.trim().to_string()))?;
        let mut rows = Vec::new();
        for (no, line) in lines {
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| CsedError::ParseError {
                    line: no + 1,
                    msg: e.to_string(),
                })?;
            rows.push(row);
        }
        if rows.len() != vocab.len() {
            return Err(CsedError::DimensionError {
                expected: vocab.len(),
                actual: rows.len(),
            });
        }
        CooccurrenceGraph::from_adjacency(vocab, Matrix::from_rows(&rows)?)
    }
}

/// How co-occurrence is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    /// Both classes appear anywhere in the same clip.
    #[default]
    Clip,
    /// Both classes are active in the same frame.
    Frame,
}

/// Clip-level co-occurrence graph from per-clip label sets.
///
/// A clip contributes at most one to any pair count, however many times a
/// label repeats inside it.
pub fn build_cooccurrence<C, L>(clips: C, vocab: &EventVocabulary) -> Result<CooccurrenceGraph>
where
    C: IntoIterator<Item = L>,
    L: IntoIterator,
    L::Item: AsRef<str>,
{
    let m = vocab.len();
    let mut counts = vec![vec![0u64; m]; m];
    let mut n_clips = 0usize;
    let mut present = vec![false; m];
    for clip in clips {
        n_clips += 1;
        present.fill(false);
        for label in clip {
            present[vocab.index_of(label.as_ref())?] = true;
        }
        let active: Vec<usize> = (0..m).filter(|&i| present[i]).collect();
        for &i in &active {
            for &j in &active {
                if i != j {
                    counts[i][j] += 1;
                }
            }
        }
    }
    if n_clips == 0 {
        return Err(CsedError::EmptyCorpus);
    }
    CooccurrenceGraph::from_counts(vocab.clone(), counts)
}

/// Frame-level variant: counts frames in which both classes are active.
///
/// Each roll is `M x T`, row-major, nonzero meaning active.
pub fn build_cooccurrence_frames(
    rolls: &[(&[u8], usize)],
    vocab: &EventVocabulary,
) -> Result<CooccurrenceGraph> {
    if rolls.is_empty() {
        return Err(CsedError::EmptyCorpus);
    }
    let m = vocab.len();
    let mut counts = vec![vec![0u64; m]; m];
    for &(roll, frames) in rolls {
        if roll.len() != m * frames {
            return Err(CsedError::DimensionError {
                expected: m * frames,
                actual: roll.len(),
            });
        }
        for t in 0..frames {
            for i in 0..m {
                if roll[i * frames + t] == 0 {
                    continue;
                }
                for j in 0..m {
                    if i != j && roll[j * frames + t] != 0 {
                        counts[i][j] += 1;
                    }
                }
            }
        }
    }
    CooccurrenceGraph::from_counts(vocab.clone(), counts)
}

/// `L = D - A` with `D_ii = sum_j A_ij`.
pub fn laplacian(adjacency: &Matrix) -> Result<Matrix> {
    let m = adjacency.rows();
    if adjacency.cols() != m {
        return Err(CsedError::InvalidAdjacency(format!(
            "adjacency must be square, got {}x{}",
            m,
            adjacency.cols()
        )));
    }
    for i in 0..m {
        for j in 0..m {
            let a = adjacency[(i, j)];
            if !a.is_finite() || a < 0.0 {
                return Err(CsedError::InvalidAdjacency(format!(
                    "entry ({i},{j}) = {a} is not a non-negative number"
                )));
            }
            if a != adjacency[(j, i)] {
                return Err(CsedError::InvalidAdjacency(format!(
                    "not symmetric at ({i},{j})"
                )));
            }
        }
        if adjacency[(i, i)] != 0.0 {
            return Err(CsedError::InvalidAdjacency(format!(
                "self-loop at node {i}"
            )));
        }
    }
    let mut l = Matrix::zeros(m, m);
    for i in 0..m {
        let mut degree = 0.0;
        for j in 0..m {
            degree += adjacency[(i, j)];
            l[(i, j)] = -adjacency[(i, j)];
        }
        l[(i, i)] = degree;
    }
    Ok(l)
}

fn check_dim(v: &[f64], l: &Matrix) -> Result<()> {
    if l.rows() != l.cols() {
        return Err(CsedError::shape("Laplacian must be square"));
    }
    if v.len() != l.rows() {
        return Err(CsedError::DimensionError {
            expected: l.rows(),
            actual: v.len(),
        });
    }
    Ok(())
}

/// `v^T L v`.
pub fn quadratic_penalty(v: &[f64], l: &Matrix) -> Result<f64> {
    check_dim(v, l)?;
    let lv = l.matvec(v)?;
    Ok(v.iter().zip(&lv).map(|(a, b)| a * b).sum())
}

/// `2 L v`, the gradient of `v^T L v` for symmetric `L`.
pub fn penalty_gradient(v: &[f64], l: &Matrix) -> Result<Vec<f64>> {
    check_dim(v, l)?;
    Ok(l.matvec(v)?.into_iter().map(|x| 2.0 * x).collect())
}
