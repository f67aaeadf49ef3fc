use super::{DatasetKind, LabeledDataset};
use crate::error::{Error, Result, ResultExt};
use crate::model::{Input, Sample};
use std::path::{Path, PathBuf};

/// Expected layout of a dataset CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    pub kind: DatasetKind,
    pub num_classes: usize,
}

impl CsvSchema {
    pub fn header(&self) -> Vec<String> {
        match self.kind {
            DatasetKind::Vector { dim } => (0..dim).map(|j| format!("f{j}")).chain(["label".into()]).collect(),
            DatasetKind::Sequence => vec!["tokens".into(), "label".into()],
        }
    }
}

fn loc(path: &Path, row: usize) -> String {
    format!("{}:{}", path.display(), row)
}

/// Read a dataset; rows are numbered from 1 at the header in errors.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path).context(|| format!("opening {}", path.display()))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = rdr.headers().context(|| format!("reading {}", path.display()))?;
    if header.is_empty() || (header.len() == 1 && header.get(0) == Some("")) {
        return Err(Error::data(format!("{}: empty dataset file", path.display())));
    }
    let expected = schema.header();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::data(format!(
            "{}: header {:?} does not match schema {:?}",
            path.display(),
            header.iter().collect::<Vec<_>>(),
            expected
        )));
    }
    let mut items = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::parse(loc(path, row), e))?;
        let label_cell = rec.get(rec.len() - 1).unwrap_or("");
        let label: usize = label_cell
            .trim()
            .parse()
            .map_err(|_| Error::parse(loc(path, row), format!("label {label_cell:?} is not a class index")))?;
        if label >= schema.num_classes {
            return Err(Error::parse(loc(path, row), format!("label {label} outside 0..{}", schema.num_classes)));
        }
        let input = match schema.kind {
            DatasetKind::Vector { dim } => {
                let x = (0..dim)
                    .map(|j| {
                        let cell = rec.get(j).unwrap_or("");
                        cell.trim()
                            .parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| Error::parse(loc(path, row), format!("column f{j}: {cell:?} is not a finite number")))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                Input::Vector(x)
            }
            DatasetKind::Sequence => {
                let cell = rec.get(0).unwrap_or("");
                let tokens = cell
                    .split_whitespace()
                    .map(|t| {
                        t.parse::<usize>()
                            .map_err(|_| Error::parse(loc(path, row), format!("token {t:?} is not a non-negative integer")))
                    })
                    .collect::<Result<Vec<usize>>>()?;
                if tokens.is_empty() {
                    return Err(Error::parse(loc(path, row), "empty token sequence"));
                }
                Input::Tokens(tokens)
            }
        };
        items.push(Sample { input, label });
    }
    if items.is_empty() {
        return Err(Error::data(format!("{}: empty dataset (header only)", path.display())));
    }
    LabeledDataset::new(items, schema.num_classes, schema.kind)
}

pub fn write_csv(path: &Path, ds: &LabeledDataset) -> Result<()> {
    let schema = CsvSchema {
        kind: ds.kind(),
        num_classes: ds.num_classes(),
    };
    let mut w = csv::Writer::from_path(path).context(|| format!("creating {}", path.display()))?;
    w.write_record(schema.header())?;
    for s in ds.items() {
        let mut row: Vec<String> = match &s.input {
            Input::Vector(x) => x.iter().map(|v| format!("{v:?}")).collect(),
            Input::Tokens(t) => vec![t.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")],
        };
        row.push(s.label.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One manifest row: shard id, file name relative to the manifest, size and
/// per-class histogram.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub shard: usize,
    pub file: String,
    pub size: usize,
    pub histogram: Vec<usize>,
}

/// Columns `shard,file,size,histogram`; the histogram is space-separated.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).context(|| format!("creating {}", path.display()))?;
    w.write_record(["shard", "file", "size", "histogram"])?;
    for e in entries {
        let hist = e.histogram.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(" ");
        w.write_record([e.shard.to_string(), e.file.clone(), e.size.to_string(), hist])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::Reader::from_path(path).context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| Error::parse(loc(path, row), e))?;
        let num = |j: usize| -> Result<usize> {
            rec.get(j)
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| Error::parse(loc(path, row), format!("column {j} is not an integer")))
        };
        let histogram = rec
            .get(3)
            .unwrap_or("")
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::parse(loc(path, row), "bad histogram entry")))
            .collect::<Result<Vec<usize>>>()?;
        out.push(ManifestEntry {
            shard: num(0)?,
            file: rec.get(1).unwrap_or("").to_string(),
            size: num(2)?,
            histogram,
        });
    }
    Ok(out)
}

/// Write `shard_<j>.csv` per shard plus `manifest.csv` into `dir`.
pub fn write_partition(dir: &Path, shards: &[LabeledDataset]) -> Result<(PathBuf, Vec<ManifestEntry>)> {
    std::fs::create_dir_all(dir).context(|| format!("creating {}", dir.display()))?;
    let mut entries = Vec::with_capacity(shards.len());
    for (j, s) in shards.iter().enumerate() {
        let file = format!("shard_{j}.csv");
        write_csv(&dir.join(&file), s)?;
        entries.push(ManifestEntry {
            shard: j,
            file,
            size: s.len(),
            histogram: s.histogram(),
        });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &entries)?;
    Ok((manifest, entries))
}
