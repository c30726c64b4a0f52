//! File formats: the TOML model document and the CSV records.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::decode::{DecodedSnippet, TransitionCounts};
use crate::error::{Error, Result};
use crate::model::{Dataset, NoiseSpec, SarModel, SubsystemParams, TransitionMatrix, Truth};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsystemDoc {
    pub a: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseDoc {
    pub variance: f64,
}

/// Model, transition matrix and noise level as one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub n: usize,
    pub n_a: usize,
    pub n_c: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ptm: Option<Vec<Vec<f64>>>,
    pub subsystems: Vec<SubsystemDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseDoc>,
}

impl ModelDocument {
    pub fn new(
        model: &SarModel,
        ptm: Option<&TransitionMatrix>,
        noise: Option<&NoiseSpec>,
    ) -> Self {
        Self {
            n: model.n(),
            n_a: model.n_a(),
            n_c: model.n_c(),
            ptm: ptm.map(|p| p.rows()),
            subsystems: model
                .subsystems()
                .iter()
                .map(|s| SubsystemDoc {
                    a: s.a.clone(),
                    c: s.c.clone(),
                })
                .collect(),
            noise: noise.map(|s| NoiseDoc {
                variance: s.variance(),
            }),
        }
    }

    pub fn model(&self) -> Result<SarModel> {
        if self.n != self.subsystems.len() {
            return Err(Error::InvalidModel(format!(
                "n = {} but {} subsystems are listed",
                self.n,
                self.subsystems.len()
            )));
        }
        let subs = self
            .subsystems
            .iter()
            .map(|s| SubsystemParams::new(s.a.clone(), s.c.clone()))
            .collect::<Result<Vec<_>>>()?;
        SarModel::new(self.n_a, self.n_c, subs)
    }

    pub fn ptm(&self) -> Result<Option<TransitionMatrix>> {
        let Some(rows) = &self.ptm else {
            return Ok(None);
        };
        if rows.len() != self.n {
            return Err(Error::InvalidTransitionMatrix(format!(
                "{} rows for n = {}",
                rows.len(),
                self.n
            )));
        }
        TransitionMatrix::from_rows(rows).map(Some)
    }

    pub fn noise(&self) -> Result<Option<NoiseSpec>> {
        self.noise
            .map(|n| NoiseSpec::normal(n.variance))
            .transpose()
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let doc: Self = toml::from_str(s)?;
        doc.model()?;
        doc.ptm()?;
        doc.noise()?;
        Ok(doc)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_toml_string()?.as_bytes())
    }
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV with header `k,u,y` (plus `x,delta,eta` when truth is present),
/// one row per index from the earliest stored value to `N`. Cells outside a
/// signal's range are empty and `delta` is 1-based.
pub fn write_dataset<W: Write>(ds: &Dataset, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let truth = ds.truth();
    if truth.is_some() {
        out.write_record(["k", "u", "y", "x", "delta", "eta"])?;
    } else {
        out.write_record(["k", "u", "y"])?;
    }
    let first = ds.u_start().min(ds.y_start());
    for k in first..=ds.len() as i64 {
        let mut rec = vec![k.to_string(), cell(ds.u(k).ok()), cell(ds.y(k).ok())];
        if truth.is_some() {
            rec.push(cell(ds.x(k).ok()));
            rec.push(ds.delta(k).map(|d| (d + 1).to_string()).unwrap_or_default());
            rec.push(cell(ds.eta(k).ok()));
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

fn parse_cell(s: &str, what: &str, k: i64) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Parse(format!("bad {what} value {s:?} at k = {k}")))
}

/// Reads a dataset CSV. Model orders follow from the first index at which
/// `u` and `y` are present.
pub fn read_dataset<R: Read>(r: R) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(ck), Some(cu), Some(cy)) = (col("k"), col("u"), col("y")) else {
        return Err(Error::Parse(
            "dataset header must contain k, u and y".into(),
        ));
    };
    let truth_cols = match (col("x"), col("delta"), col("eta")) {
        (Some(x), Some(d), Some(e)) => Some((x, d, e)),
        (None, None, None) => None,
        _ => {
            return Err(Error::Parse(
                "truth columns x, delta, eta must appear together".into(),
            ))
        }
    };

    let mut ks = Vec::new();
    let mut u = Vec::new();
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut delta = Vec::new();
    let mut eta = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let k: i64 = field(ck)
            .parse()
            .map_err(|_| Error::Parse(format!("bad index {:?}", field(ck))))?;
        if let Some(prev) = ks.last() {
            if k != prev + 1 {
                return Err(Error::Parse(format!("index {k} does not follow {prev}")));
            }
        }
        ks.push(k);
        if let Some(v) = parse_cell(field(cu), "u", k)? {
            u.push((k, v));
        }
        if let Some(v) = parse_cell(field(cy), "y", k)? {
            y.push((k, v));
        }
        if let Some((cx, cd, ce)) = truth_cols {
            if let Some(v) = parse_cell(field(cx), "x", k)? {
                x.push(v);
            }
            if let Some(v) = parse_cell(field(ce), "eta", k)? {
                eta.push(v);
            }
            let d = field(cd);
            if !d.is_empty() {
                let m: usize = d
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad delta {d:?} at k = {k}")))?;
                if m == 0 {
                    return Err(Error::Parse(format!("delta is 1-based, got 0 at k = {k}")));
                }
                delta.push(m - 1);
            }
        }
    }
    let Some(&(y0, _)) = y.first() else {
        return Err(Error::Parse("dataset has no output values".into()));
    };
    if y0 > 0 {
        return Err(Error::Parse(format!(
            "outputs must start at k <= 0, found {y0}"
        )));
    }
    let n_a = (1 - y0) as usize;
    let n_c = u
        .first()
        .map(|&(k, _)| (1 - k).max(0) as usize)
        .unwrap_or(0);
    check_contiguous(&y, "y")?;
    check_contiguous(&u, "u")?;
    let ds = Dataset::new(
        n_a,
        n_c,
        u.into_iter().map(|p| p.1).collect(),
        y.into_iter().map(|p| p.1).collect(),
    )?;
    match truth_cols {
        Some(_) => ds.with_truth(Truth {
            x,
            delta,
            eta,
            generator: None,
        }),
        None => Ok(ds),
    }
}

fn check_contiguous(v: &[(i64, f64)], what: &str) -> Result<()> {
    for w in v.windows(2) {
        if w[1].0 != w[0].0 + 1 {
            return Err(Error::Parse(format!(
                "{what} has a gap between k = {} and {}",
                w[0].0, w[1].0
            )));
        }
    }
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(ds, &mut buf)?;
    write_atomic(path, &buf)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(fs::File::open(path)?)
}

/// Count matrix as CSV rows without a header.
pub fn write_counts<W: Write>(counts: &TransitionCounts, w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for row in &counts.n_ij {
        out.write_record(row.iter().map(u64::to_string))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_counts<R: Read>(r: R) -> Result<TransitionCounts> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
    let mut n_ij = Vec::new();
    for rec in rdr.records() {
        let row = rec?
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Parse(format!("bad count {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        n_ij.push(row);
    }
    let n = n_ij.len();
    if n == 0 || n_ij.iter().any(|r| r.len() != n) {
        return Err(Error::Parse(
            "counts must form a non-empty square matrix".into(),
        ));
    }
    Ok(TransitionCounts { n_ij })
}

pub fn write_matrix<W: Write>(m: &DMatrix<f64>, w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for i in 0..m.nrows() {
        out.write_record(m.row(i).iter().map(f64::to_string))?;
    }
    out.flush()?;
    Ok(())
}

/// One row per snippet: `start,hypothesis,loglik`, modes 1-based and
/// space-separated.
pub fn write_decisions<W: Write>(snippets: &[DecodedSnippet], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["start", "hypothesis", "loglik"])?;
    for s in snippets {
        let h = s
            .hypothesis
            .iter()
            .map(|m| (m + 1).to_string())
            .collect::<Vec<_>>()
            .join(" ");
        out.write_record([s.start.to_string(), h, s.loglik.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_decisions<R: Read>(r: R) -> Result<Vec<DecodedSnippet>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.records()
        .map(|rec| {
            let rec = rec?;
            let bad = || Error::Parse(format!("bad decision row {rec:?}"));
            let start = rec.get(0).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let hypothesis = rec
                .get(1)
                .ok_or_else(bad)?
                .split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .ok()
                        .filter(|m| *m >= 1)
                        .map(|m| m - 1)
                        .ok_or_else(bad)
                })
                .collect::<Result<Vec<_>>>()?;
            let loglik = rec.get(2).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            Ok(DecodedSnippet {
                start,
                hypothesis,
                loglik,
            })
        })
        .collect()
}

/// Estimated transition matrix with its never-visited rows (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtmDocument {
    pub ptm: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unvisited: Vec<usize>,
}

impl PtmDocument {
    pub fn new(ptm: &TransitionMatrix, unvisited: &[usize]) -> Self {
        Self {
            ptm: ptm.rows(),
            unvisited: unvisited.iter().map(|i| i + 1).collect(),
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let doc: Self = toml::from_str(s)?;
        TransitionMatrix::from_rows(&doc.ptm)?;
        Ok(doc)
    }
}

/// Per-coefficient comparison, `mode,coefficient,true,estimate,abs_error`,
/// with both lists already in the same mode order.
pub fn write_coefficient_report<W: Write>(
    estimate: &SarModel,
    truth: &SarModel,
    w: W,
) -> Result<()> {
    if estimate.n() != truth.n() || estimate.n_a() != truth.n_a() || estimate.n_c() != truth.n_c() {
        return Err(Error::DimensionMismatch(
            "estimated and true models differ in shape".into(),
        ));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["mode", "coefficient", "true", "estimate", "abs_error"])?;
    for (i, (e, t)) in estimate
        .subsystems()
        .iter()
        .zip(truth.subsystems())
        .enumerate()
    {
        let named = |p: &str, ev: &[f64], tv: &[f64]| -> Vec<[String; 5]> {
            ev.iter()
                .zip(tv)
                .enumerate()
                .map(|(j, (x, y))| {
                    [
                        (i + 1).to_string(),
                        format!("{p}{}", j + 1),
                        y.to_string(),
                        x.to_string(),
                        (x - y).abs().to_string(),
                    ]
                })
                .collect()
        };
        for rec in named("a", &e.a, &t.a)
            .into_iter()
            .chain(named("c", &e.c, &t.c))
        {
            out.write_record(&rec)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{simulate, SimulationOptions};

    const DOC: &str = r#"
n = 2
n_a = 1
n_c = 1
ptm = [[0.2, 0.8], [0.3, 0.7]]

[[subsystems]]
a = [0.3]
c = [1.0]

[[subsystems]]
a = [-0.5]
c = [-1.0]

[noise]
variance = 0.01
"#;

    #[test]
    fn model_document_parses() {
        let doc = ModelDocument::from_toml_str(DOC).unwrap();
        assert_eq!(doc.model().unwrap(), SarModel::two_mode_example());
        assert_eq!(doc.ptm().unwrap().unwrap().get(1, 1), 0.7);
        assert_eq!(doc.noise().unwrap().unwrap().variance(), 0.01);
        let again = ModelDocument::from_toml_str(&doc.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, doc);
    }

    #[test]
    fn model_document_rejects_inconsistency() {
        assert!(ModelDocument::from_toml_str(&DOC.replace("n = 2", "n = 3")).is_err());
        assert!(ModelDocument::from_toml_str(&DOC.replace("0.7]]", "0.6]]")).is_err());
        assert!(
            ModelDocument::from_toml_str(&DOC.replace("variance = 0.01", "variance = -1.0"))
                .is_err()
        );
        let bare = ModelDocument::from_toml_str(&DOC.replace("ptm = [[0.2, 0.8], [0.3, 0.7]]", ""))
            .unwrap();
        assert!(bare.ptm().unwrap().is_none());
    }

    #[test]
    fn dataset_csv_layout() {
        let ds = Dataset::new(2, 1, vec![1.0, 2.0], vec![0.0, 0.5, 1.5, 2.5]).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "k,u,y\n-1,,0\n0,1,0.5\n1,2,1.5\n2,,2.5\n");
        assert_eq!(read_dataset(text.as_bytes()).unwrap(), ds);
    }

    #[test]
    fn dataset_round_trip_with_truth() {
        let p = TransitionMatrix::from_rows(&[vec![0.2, 0.8], vec![0.3, 0.7]]).unwrap();
        let ds = simulate(
            &SarModel::two_mode_example(),
            &p,
            &NoiseSpec::normal(0.05).unwrap(),
            &SimulationOptions::new(50, 4),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        assert_eq!(back.y_values(), ds.y_values());
        assert_eq!(back.u_values(), ds.u_values());
        let (t0, t1) = (ds.truth().unwrap(), back.truth().unwrap());
        assert_eq!((&t0.x, &t0.delta, &t0.eta), (&t1.x, &t1.delta, &t1.eta));
    }

    #[test]
    fn dataset_parse_errors() {
        assert!(read_dataset("k,u\n0,1\n".as_bytes()).is_err());
        assert!(read_dataset("k,u,y\n0,1,0\n2,,1\n".as_bytes()).is_err());
        assert!(read_dataset("k,u,y\n0,1,abc\n1,,1\n".as_bytes()).is_err());
    }

    #[test]
    fn counts_and_decisions_round_trip() {
        let c = TransitionCounts {
            n_ij: vec![vec![2, 8], vec![3, 7]],
        };
        let mut buf = Vec::new();
        write_counts(&c, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "2,8\n3,7\n");
        assert_eq!(read_counts(buf.as_slice()).unwrap(), c);
        assert!(read_counts("1,2\n3\n".as_bytes()).is_err());

        let d = vec![DecodedSnippet {
            start: 2,
            hypothesis: vec![0, 1],
            loglik: -1.25,
        }];
        let mut buf = Vec::new();
        write_decisions(&d, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "start,hypothesis,loglik\n2,1 2,-1.25\n"
        );
        assert_eq!(read_decisions(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn ptm_document_and_report() {
        let p = TransitionMatrix::from_rows(&[vec![0.5, 0.5], vec![1.0, 0.0]]).unwrap();
        let doc = PtmDocument::new(&p, &[0]);
        let text = doc.to_toml_string().unwrap();
        assert_eq!(PtmDocument::from_toml_str(&text).unwrap(), doc);
        assert_eq!(doc.unvisited, vec![1]);
        assert!(PtmDocument::from_toml_str("ptm = [[0.5, 0.6]]").is_err());

        let truth = SarModel::two_mode_example();
        let est = SarModel::from_coefficient_vectors(
            &[vec![-1.0, 0.25, 1.0], vec![-1.0, -0.5, -1.5]],
            1,
            1,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_coefficient_report(&est, &truth, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.contains("1,a1,0.3,0.25,"));
        assert!(text.contains("2,c1,-1,-1.5,0.5"));
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_atomic(&path, b"old").unwrap();
        write_atomic(&path, b"new").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"new");
        let mut buf = Vec::new();
        write_matrix(
            &DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]),
            &mut buf,
        )
        .unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,0.5\n0.5,2\n");
    }
}
