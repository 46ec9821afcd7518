//! JSON and CSV file layouts shared by the command-line tools.
//!
//! | File | Layout |
//! |------|--------|
//! | map | JSON `{"categories": [..], "nodes": [[x, y], ..], "colors": [..]}` |
//! | covariance | JSON `{"kind": "gaussian", "range": 10.0, "range_convention": "exp_minus_h_over_a_sq"}` |
//! | marginals | JSON `{"categories": [..], "pi_h10": [[..]], "pi_h01": [[..]]}` |
//! | pattern | JSON with the dense table, base-`k` little-endian over `(center, +x, -x, +y, -y)` |
//! | event / field | CSV `x,y,category` |
//! | latent dump | CSV `site_x,site_y,x,y,category` |
//! | trace | CSV `iteration,F,node_count,temperature,accepted` |
//! | diagnostics | CSV `iteration,logdens_x,logdens_y` |
//! | report | JSON score report |

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bme::PatternPmf;
use crate::error::{Error, Result};
use crate::estimator::TraceRow;
use crate::gauss_geom::Point2;
use crate::grf::SiteSet;
use crate::sampler::{DiagnosticRow, Event, LatentState};
use crate::tessellation::{Category, CategorySet, TruncationMap};

pub const PATTERN_ORDERING: &str = "base-k little-endian over (center, +x, -x, +y, -y)";

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    Ok(serde_json::from_str(&s)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

// Header written up front so that an empty table still has one.
fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapFile {
    pub categories: Vec<Category>,
    pub nodes: Vec<[f64; 2]>,
    pub colors: Vec<Category>,
}

impl From<&TruncationMap> for MapFile {
    fn from(m: &TruncationMap) -> Self {
        MapFile {
            categories: m.categories().labels().to_vec(),
            nodes: m.nodes().iter().map(|p| [p.x, p.y]).collect(),
            colors: m.colors().to_vec(),
        }
    }
}

impl TryFrom<MapFile> for TruncationMap {
    type Error = Error;
    fn try_from(f: MapFile) -> Result<Self> {
        TruncationMap::new(
            CategorySet::new(f.categories)?,
            f.nodes.iter().map(|&[x, y]| Point2::new(x, y)).collect(),
            f.colors,
        )
    }
}

pub fn read_map(path: &Path) -> Result<TruncationMap> {
    read_json::<MapFile>(path)?.try_into()
}

pub fn write_map(path: &Path, map: &TruncationMap) -> Result<()> {
    write_json(path, &MapFile::from(map))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatternFile {
    pub categories: Vec<Category>,
    pub ordering: String,
    pub table: Vec<f64>,
    pub converged: bool,
    pub max_marginal_deviation: f64,
    pub sweeps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl PatternFile {
    pub fn pmf(&self) -> Result<PatternPmf> {
        PatternPmf::from_table(self.categories.len(), self.table.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub x: i64,
    pub y: i64,
    pub category: Category,
}

pub fn read_event(path: &Path) -> Result<Event> {
    let rows: Vec<EventRecord> = read_csv(path)?;
    let sites = SiteSet::new(rows.iter().map(|r| (r.x, r.y)).collect())?;
    Event::new(sites, rows.into_iter().map(|r| r.category).collect())
}

pub fn write_event(path: &Path, event: &Event) -> Result<()> {
    write_csv(
        path,
        &["x", "y", "category"],
        event
            .sites()
            .sites()
            .iter()
            .zip(event.categories())
            .map(|(&(x, y), &category)| EventRecord { x, y, category }),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub site_x: i64,
    pub site_y: i64,
    pub x: f64,
    pub y: f64,
    pub category: Category,
}

pub fn write_latent(path: &Path, event: &Event, state: &LatentState) -> Result<()> {
    write_csv(
        path,
        &["site_x", "site_y", "x", "y", "category"],
        event
            .sites()
            .sites()
            .iter()
            .enumerate()
            .map(|(i, &(sx, sy))| LatentRecord {
                site_x: sx,
                site_y: sy,
                x: state.x[i],
                y: state.y[i],
                category: event.categories()[i],
            }),
    )
}

pub fn read_latent(path: &Path) -> Result<Vec<LatentRecord>> {
    read_csv(path)
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_csv(
        path,
        &["iteration", "F", "node_count", "temperature", "accepted"],
        rows.iter(),
    )
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    read_csv(path)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub iteration: usize,
    pub logdens_x: f64,
    pub logdens_y: f64,
}

impl From<&DiagnosticRow> for DiagnosticRecord {
    fn from(r: &DiagnosticRow) -> Self {
        DiagnosticRecord {
            iteration: r.iteration,
            logdens_x: r.logdens_x,
            logdens_y: r.logdens_y,
        }
    }
}

pub fn write_diagnostics(path: &Path, rows: &[DiagnosticRow]) -> Result<()> {
    write_csv(
        path,
        &["iteration", "logdens_x", "logdens_y"],
        rows.iter().map(DiagnosticRecord::from),
    )
}

pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticRecord>> {
    read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bme::UnitLagMarginals;
    use crate::grf::CovarianceModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dir() -> std::path::PathBuf {
        let d = std::env::temp_dir().join(format!("vtpg-formats-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn map_round_trip_is_bit_exact() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let nodes: Vec<Point2> = (0..30)
            .map(|_| Point2::new(r.sample(StandardNormal), r.sample::<f64, _>(StandardNormal) * 1e-7))
            .collect();
        let colors: Vec<Category> = (0..30).map(|_| r.random_range(0..4) * 3).collect();
        let m = TruncationMap::new(CategorySet::new(vec![0, 3, 6, 9]).unwrap(), nodes, colors).unwrap();
        let p = dir().join("map.json");
        write_map(&p, &m).unwrap();
        let back = read_map(&p).unwrap();
        assert_eq!(m, back);
        for (a, b) in m.nodes().iter().zip(back.nodes()) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
    }

    #[test]
    fn map_file_validation() {
        let bad = MapFile {
            categories: vec![0, 1],
            nodes: vec![[0.0, 0.0]],
            colors: vec![2],
        };
        assert!(TruncationMap::try_from(bad).is_err());
        let bad = MapFile {
            categories: vec![0, 1],
            nodes: vec![[0.0, 0.0]],
            colors: vec![],
        };
        assert!(TruncationMap::try_from(bad).is_err());
    }

    #[test]
    fn event_and_latent_round_trip() {
        let e = Event::new(SiteSet::new(vec![(10, 1), (10, 2), (15, 1)]).unwrap(), vec![1, 2, 1]).unwrap();
        let p = dir().join("event.csv");
        write_event(&p, &e).unwrap();
        assert_eq!(read_event(&p).unwrap(), e);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("x,y,category\n10,1,1\n"));

        let s = LatentState {
            x: vec![0.1, -0.2, 1.0 / 3.0],
            y: vec![1e-300, 2.5, -7.9],
            k: 3,
        };
        let p = dir().join("latent.csv");
        write_latent(&p, &e, &s).unwrap();
        let back = read_latent(&p).unwrap();
        assert_eq!(back[2].x, 1.0 / 3.0);
        assert_eq!(back[0].y, 1e-300);
        assert_eq!(back[1].category, 2);
    }

    #[test]
    fn trace_round_trip_with_infinite_mismatch() {
        let rows = vec![
            TraceRow {
                iteration: 0,
                f: f64::INFINITY,
                node_count: 3,
                temperature: 500.0,
                accepted: 1,
            },
            TraceRow {
                iteration: 1,
                f: 0.123,
                node_count: 4,
                temperature: 499.75,
                accepted: 0,
            },
        ];
        let p = dir().join("trace.csv");
        write_trace(&p, &rows).unwrap();
        assert_eq!(read_trace(&p).unwrap(), rows);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("iteration,F,node_count,temperature,accepted\n"));
        write_trace(&p, &[]).unwrap();
        assert!(read_trace(&p).unwrap().is_empty());
    }

    #[test]
    fn json_configs() {
        let p = dir().join("cov.json");
        let c = CovarianceModel::gaussian(10.0).unwrap();
        write_json(&p, &c).unwrap();
        assert_eq!(read_json::<CovarianceModel>(&p).unwrap(), c);
        let m: UnitLagMarginals = serde_json::from_str(
            r#"{"categories":[1,2],"pi_h10":[[0.4,0.1],[0.1,0.4]],"pi_h01":[[0.3,0.2],[0.2,0.3]]}"#,
        )
        .unwrap();
        assert_eq!(m.to_spec().unwrap().pairs().len(), 4);
    }
}
