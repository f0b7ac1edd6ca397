//! File formats. Every float is written with 17 significant digits so
//! values round-trip exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::comparators::Fit;
use crate::error::{Error, Result};
use crate::sampler::{ArmDraw, ChainDraws, StoredDraw};

/// `{:.16e}`, with `NaN`/`inf` spelled out.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

struct SigFormatter;

impl serde_json::ser::Formatter for SigFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, f64::from(value))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Compact JSON, one document per file, trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    let mut ser = serde_json::Serializer::with_formatter(&mut w, SigFormatter);
    value.serialize(&mut ser).map_err(|e| Error::Serialization {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// CSV writer whose I/O and encoding errors carry the path.
pub struct CsvOut {
    path: PathBuf,
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut out = Self {
            path: path.to_path_buf(),
            inner: csv::Writer::from_writer(create(path)?),
        };
        out.row(header)?;
        Ok(out)
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let path = &self.path;
        self.inner.write_record(fields).map_err(|e| Error::Serialization {
            path: path.clone(),
            message: e.to_string(),
        })
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub const DRAWS_HEADER: [&str; 7] = ["iteration", "chain", "arm", "subgroup", "theta", "q", "z"];

/// One row per stored draw and cell. `q` and `z` are blank for models
/// without a partition.
pub fn write_draws(path: &Path, fit: &Fit) -> Result<()> {
    let mut out = CsvOut::create(path, &DRAWS_HEADER)?;
    match fit.mixture() {
        Some(draws) => {
            for (c, chain) in draws.chains.iter().enumerate() {
                for d in chain {
                    for (i, arm) in d.arms.iter().enumerate() {
                        for (k, &t) in arm.theta.iter().enumerate() {
                            out.row([
                                d.iteration.to_string(),
                                c.to_string(),
                                i.to_string(),
                                k.to_string(),
                                fmt_f64(t),
                                arm.q.to_string(),
                                arm.z[k].to_string(),
                            ])?;
                        }
                    }
                }
            }
        }
        None => {
            let Fit::Reference(r) = fit else {
                unreachable!("mixture fits always carry draws")
            };
            for (c, chain) in r.theta.iter().enumerate() {
                for (s, theta) in chain.iter().enumerate() {
                    for (idx, &t) in theta.iter().enumerate() {
                        out.row([
                            s.to_string(),
                            c.to_string(),
                            (idx / r.n_subgroups).to_string(),
                            (idx % r.n_subgroups).to_string(),
                            fmt_f64(t),
                            String::new(),
                            String::new(),
                        ])?;
                    }
                }
            }
        }
    }
    out.finish()
}

#[derive(Debug, serde::Deserialize)]
struct DrawRow {
    iteration: usize,
    chain: usize,
    arm: usize,
    subgroup: usize,
    theta: f64,
    q: Option<usize>,
    z: Option<usize>,
}

/// Rebuilds chain draws from a draws file. Only `theta`, `q` and `z` are
/// recovered; other fields are left empty. Files without partitions get a
/// single shared component per draw.
pub fn read_draws(path: &Path) -> Result<ChainDraws> {
    let ser = |e: csv::Error| Error::Serialization {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = csv::Reader::from_path(path).map_err(ser)?;
    let headers = reader.headers().map_err(ser)?.clone();
    if headers.iter().collect::<Vec<_>>() != DRAWS_HEADER {
        return Err(Error::Serialization {
            path: path.to_path_buf(),
            message: format!("unexpected header {headers:?}"),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.deserialize::<DrawRow>() {
        rows.push(rec.map_err(ser)?);
    }
    if rows.is_empty() {
        return Err(Error::Empty("draws file"));
    }
    let n_arms = rows.iter().map(|r| r.arm).max().unwrap_or(0) + 1;
    let k = rows.iter().map(|r| r.subgroup).max().unwrap_or(0) + 1;
    let n_chains = rows.iter().map(|r| r.chain).max().unwrap_or(0) + 1;
    let mut chains: Vec<Vec<StoredDraw>> = vec![Vec::new(); n_chains];
    for r in &rows {
        let chain = &mut chains[r.chain];
        if chain.last().is_none_or(|d| d.iteration != r.iteration) {
            chain.push(StoredDraw {
                iteration: r.iteration,
                varsigma: f64::NAN,
                arms: (0..n_arms)
                    .map(|_| ArmDraw {
                        theta: vec![f64::NAN; k],
                        beta: f64::NAN,
                        delta: Vec::new(),
                        q: 1,
                        z: vec![0; k],
                        w: Vec::new(),
                        mu: Vec::new(),
                        sigma: Vec::new(),
                        tau: f64::NAN,
                    })
                    .collect(),
            });
        }
        let arm = &mut chain.last_mut().expect("pushed").arms[r.arm];
        arm.theta[r.subgroup] = r.theta;
        arm.q = r.q.unwrap_or(1);
        arm.z[r.subgroup] = r.z.unwrap_or(0);
    }
    let complete = chains
        .iter()
        .flatten()
        .all(|d| d.arms.iter().all(|a| a.theta.iter().all(|t| !t.is_nan())));
    if !complete {
        return Err(Error::Serialization {
            path: path.to_path_buf(),
            message: "some draws are missing cells".into(),
        });
    }
    Ok(ChainDraws {
        n_arms,
        n_subgroups: k,
        chains,
        moves: vec![Vec::new(); n_chains],
    })
}

pub const EDGE_HEADER: [&str; 5] = ["method", "arm", "subgroup_a", "subgroup_b", "probability"];

/// Upper-triangle edge list of per-arm co-clustering matrices.
pub fn write_edges(path: &Path, rows: &[(String, Vec<Vec<Vec<f64>>>)]) -> Result<()> {
    let mut out = CsvOut::create(path, &EDGE_HEADER)?;
    for (method, arms) in rows {
        for (i, m) in arms.iter().enumerate() {
            for a in 0..m.len() {
                for b in a + 1..m.len() {
                    out.row([method.clone(), i.to_string(), a.to_string(), b.to_string(), fmt_f64(m[a][b])])?;
                }
            }
        }
    }
    out.finish()
}

/// Reads a dataset CSV with columns `arm, subgroup, y`.
pub fn read_dataset(path: &Path) -> Result<crate::model::Dataset> {
    #[derive(serde::Deserialize)]
    struct Row {
        arm: usize,
        subgroup: usize,
        y: f64,
    }
    let ser = |e: csv::Error| Error::Serialization {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = csv::Reader::from_path(path).map_err(ser)?;
    let mut rows = Vec::new();
    for rec in reader.deserialize::<Row>() {
        rows.push(rec.map_err(ser)?);
    }
    if rows.is_empty() {
        return Err(Error::Empty("dataset file"));
    }
    let n_arms = rows.iter().map(|r| r.arm).max().unwrap_or(0) + 1;
    let k = rows.iter().map(|r| r.subgroup).max().unwrap_or(0) + 1;
    let mut grid = vec![vec![Vec::new(); k]; n_arms];
    for r in rows {
        grid[r.arm][r.subgroup].push(r.y);
    }
    crate::model::Dataset::from_grid(grid)
}
