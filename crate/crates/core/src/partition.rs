//! Long-format data and its split into time blocks.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ScmError};
use crate::linalg::{Mat, Vector};

/// Partition edges `c_0 < c_1 < … < c_J`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    edges: Vec<f64>,
}

impl Partition {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 {
            return Err(ScmError::Config(format!(
                "a partition needs at least 2 edges, got {}",
                edges.len()
            )));
        }
        if edges.iter().any(|e| !e.is_finite()) {
            return Err(ScmError::Config("partition edges must be finite".into()));
        }
        if let Some(w) = edges.windows(2).find(|w| w[1] <= w[0]) {
            return Err(ScmError::Config(format!(
                "partition edges must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Partition { edges })
    }

    /// `blocks` equal-width blocks spanning `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, blocks: usize) -> Result<Self> {
        if blocks == 0 {
            return Err(ScmError::Config("block count must be positive".into()));
        }
        let w = (hi - lo) / blocks as f64;
        let mut edges: Vec<f64> = (0..blocks).map(|j| lo + w * j as f64).collect();
        edges.push(hi);
        Self::new(edges)
    }

    /// Blocks of width `width` from `lo`; the final block absorbs any remainder.
    pub fn with_width(lo: f64, hi: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(ScmError::Config("block width must be positive".into()));
        }
        let mut edges = vec![lo];
        let mut e = lo + width;
        while e < hi - 1e-9 * width {
            edges.push(e);
            e += width;
        }
        edges.push(hi);
        Self::new(edges)
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    /// Number of blocks `J`.
    pub fn blocks(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn block_edges(&self, j: usize) -> (f64, f64) {
        (self.edges[j], self.edges[j + 1])
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.edges[0], self.edges[self.edges.len() - 1])
    }

    /// Block holding `t`: `[c_{j-1}, c_j)` with the last block closed.
    pub fn locate(&self, t: f64) -> Option<usize> {
        let (lo, hi) = self.domain();
        if !(t >= lo && t <= hi) {
            return None;
        }
        let interior = &self.edges[1..self.edges.len() - 1];
        Some(interior.partition_point(|&c| c <= t))
    }
}

/// One subject's full series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSeries {
    pub id: i64,
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    /// Row-major `M_i × q`.
    pub x: Vec<f64>,
    /// Row-major `M_i × p`.
    pub z: Vec<f64>,
}

impl SubjectSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Long-format observations; subjects are held in dense index order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongData {
    pub q: usize,
    pub p: usize,
    pub subjects: Vec<SubjectSeries>,
}

/// One row of long-format input.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub id: i64,
    pub time: f64,
    pub y: f64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

impl LongData {
    /// Group records by subject (first-appearance order), sorting by time.
    pub fn from_records(q: usize, p: usize, records: Vec<Record>) -> Result<Self> {
        let mut index: HashMap<i64, usize> = HashMap::new();
        let mut grouped: Vec<Vec<Record>> = Vec::new();
        for (row, r) in records.into_iter().enumerate() {
            if r.x.len() != q || r.z.len() != p {
                return Err(ScmError::Data(format!(
                    "record {} (subject {}) has {} functional and {} scalar covariates, expected {q} and {p}",
                    row + 1,
                    r.id,
                    r.x.len(),
                    r.z.len()
                )));
            }
            let vals = std::iter::once(r.time).chain([r.y]).chain(r.x.iter().copied()).chain(r.z.iter().copied());
            if vals.into_iter().any(|v| !v.is_finite()) {
                return Err(ScmError::Data(format!(
                    "record {} (subject {}) contains a missing or non-finite value",
                    row + 1,
                    r.id
                )));
            }
            let slot = *index.entry(r.id).or_insert_with(|| {
                grouped.push(Vec::new());
                grouped.len() - 1
            });
            grouped[slot].push(r);
        }
        let mut subjects = Vec::with_capacity(grouped.len());
        for mut recs in grouped {
            recs.sort_by(|a, b| a.time.total_cmp(&b.time));
            if let Some(w) = recs.windows(2).find(|w| w[0].time == w[1].time) {
                return Err(ScmError::Data(format!(
                    "subject {} has duplicate time {}",
                    w[0].id, w[0].time
                )));
            }
            let id = recs[0].id;
            let mut s = SubjectSeries {
                id,
                times: Vec::with_capacity(recs.len()),
                y: Vec::with_capacity(recs.len()),
                x: Vec::with_capacity(recs.len() * q),
                z: Vec::with_capacity(recs.len() * p),
            };
            for r in recs {
                s.times.push(r.time);
                s.y.push(r.y);
                s.x.extend(r.x);
                s.z.extend(r.z);
            }
            subjects.push(s);
        }
        Ok(LongData { q, p, subjects })
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn n_observations(&self) -> usize {
        self.subjects.iter().map(|s| s.len()).sum()
    }

    /// Smallest and largest observed time.
    pub fn time_range(&self) -> Option<(f64, f64)> {
        let mut it = self.subjects.iter().flat_map(|s| s.times.iter().copied());
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), t| (lo.min(t), hi.max(t))))
    }

    /// Sorted distinct observed times.
    pub fn distinct_times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.subjects.iter().flat_map(|s| s.times.iter().copied()).collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// Read the `id,time,y,x1..xq,z1..zp` long format.
    pub fn read_csv<R: Read>(reader: R, q: usize, p: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
        let expected = csv_header(q, p);
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| ScmError::Data(format!("cannot read CSV header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if header != expected {
            return Err(ScmError::Data(format!(
                "CSV header must be `{}`, found `{}`",
                expected.join(","),
                header.join(",")
            )));
        }
        let mut records = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| ScmError::Data(format!("CSV row {}: {e}", row + 2)))?;
            let field = |k: usize| -> Result<f64> {
                let raw = rec.get(k).unwrap_or("");
                raw.parse::<f64>().map_err(|_| {
                    ScmError::Data(format!(
                        "CSV row {} column `{}`: cannot parse `{raw}` (missing values are not supported)",
                        row + 2,
                        expected[k]
                    ))
                })
            };
            let id_raw = rec.get(0).unwrap_or("");
            let id = id_raw
                .parse::<i64>()
                .map_err(|_| ScmError::Data(format!("CSV row {}: subject id `{id_raw}` is not an integer", row + 2)))?;
            records.push(Record {
                id,
                time: field(1)?,
                y: field(2)?,
                x: (0..q).map(|u| field(3 + u)).collect::<Result<_>>()?,
                z: (0..p).map(|k| field(3 + q + k)).collect::<Result<_>>()?,
            });
        }
        Self::from_records(q, p, records)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", csv_header(self.q, self.p).join(","))?;
        for s in &self.subjects {
            for k in 0..s.len() {
                write!(w, "{},{},{}", s.id, s.times[k], s.y[k])?;
                for v in &s.x[k * self.q..(k + 1) * self.q] {
                    write!(w, ",{v}")?;
                }
                for v in &s.z[k * self.p..(k + 1) * self.p] {
                    write!(w, ",{v}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

pub fn csv_header(q: usize, p: usize) -> Vec<String> {
    let mut h: Vec<String> = vec!["id".into(), "time".into(), "y".into()];
    h.extend((1..=q).map(|u| format!("x{u}")));
    h.extend((1..=p).map(|k| format!("z{k}")));
    h
}

/// One subject's observations inside one block.
#[derive(Clone, Debug, PartialEq)]
pub struct SubjectBlock {
    /// Dense subject index.
    pub subject: usize,
    pub times: Vec<f64>,
    pub y: Vector,
    pub x: Mat,
    pub z: Mat,
}

/// The data `B_j` of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockData {
    pub block: usize,
    pub edges: (f64, f64),
    pub subjects: Vec<SubjectBlock>,
}

impl BlockData {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn subject_ids(&self) -> Vec<usize> {
        self.subjects.iter().map(|s| s.subject).collect()
    }
}

/// Assign every observation to exactly one block.
pub fn split(data: &LongData, part: &Partition) -> Result<Vec<BlockData>> {
    let jn = part.blocks();
    let (q, p) = (data.q, data.p);
    let mut blocks: Vec<BlockData> = (0..jn)
        .map(|j| BlockData { block: j, edges: part.block_edges(j), subjects: Vec::new() })
        .collect();
    for (idx, s) in data.subjects.iter().enumerate() {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); jn];
        for (k, &t) in s.times.iter().enumerate() {
            let j = part.locate(t).ok_or_else(|| {
                let (lo, hi) = part.domain();
                ScmError::Data(format!(
                    "observation of subject {} at time {t} is outside the partition domain [{lo}, {hi}]",
                    s.id
                ))
            })?;
            rows[j].push(k);
        }
        for (j, ks) in rows.into_iter().enumerate() {
            if ks.is_empty() {
                continue;
            }
            let m = ks.len();
            blocks[j].subjects.push(SubjectBlock {
                subject: idx,
                times: ks.iter().map(|&k| s.times[k]).collect(),
                y: Vector::from_iterator(m, ks.iter().map(|&k| s.y[k])),
                x: Mat::from_fn(m, q, |r, c| s.x[ks[r] * q + c]),
                z: Mat::from_fn(m, p, |r, c| s.z[ks[r] * p + c]),
            });
        }
    }
    if let Some(b) = blocks.iter().find(|b| b.subjects.is_empty()) {
        return Err(ScmError::Config(format!(
            "block {} [{}, {}) contains no observations; adjust the partition edges",
            b.block + 1,
            b.edges.0,
            b.edges.1
        )));
    }
    let n = data.n_subjects();
    if blocks.iter().any(|b| b.subjects.len() != n) {
        log::warn!("unbalanced data: some subjects are absent from some blocks");
    }
    Ok(blocks)
}
