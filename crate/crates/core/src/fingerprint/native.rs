//! Native CSV schema: `label,x,y,WAP_<id>...`, RSSI in dBm, blank = not
//! observed.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{LabeledDataset, Sample, SplitTag, WapIndex, MAX_DBM, MISSING_DBM};
use crate::error::{Error, Result};

const WAP_PREFIX: &str = "WAP_";

/// Reader adaptor that hashes everything read through it.
pub(crate) struct HashingReader<R> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> HashingReader<R> {
    pub(crate) fn new(inner: R) -> Self {
        Self {
            inner,
            hasher: Sha256::new(),
        }
    }

    pub(crate) fn hex_digest(self) -> String {
        format!("{:x}", self.hasher.finalize())
    }
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.update(&buf[..n]);
        Ok(n)
    }
}

fn parse_err(path: &Path, row: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        msg: msg.into(),
    }
}

pub fn load_native(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut hashing = HashingReader::new(BufReader::new(File::open(path)?));
    let mut samples = Vec::new();
    let mut coords: Vec<Option<[f64; 2]>> = Vec::new();
    let wap_index;
    {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(&mut hashing);
        let headers = reader.headers()?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 4 || cols[..3] != ["label", "x", "y"] {
            return Err(parse_err(
                path,
                1,
                "header must start with label,x,y followed by WAP_<id> columns",
            ));
        }
        let mut ids = Vec::with_capacity(cols.len() - 3);
        for c in &cols[3..] {
            match c.strip_prefix(WAP_PREFIX) {
                Some(id) if !id.is_empty() => ids.push(id.to_string()),
                _ => return Err(parse_err(path, 1, format!("unknown column '{c}'"))),
            }
        }
        wap_index = WapIndex::new(ids).map_err(|e| parse_err(path, 1, e.to_string()))?;

        for record in reader.records() {
            let record = record?;
            let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let label: usize = record[0]
                .trim()
                .parse()
                .map_err(|_| parse_err(path, row, format!("bad label '{}'", &record[0])))?;
            let xy = match (record[1].trim(), record[2].trim()) {
                ("", "") => None,
                (x, y) => {
                    let x: f64 = x
                        .parse()
                        .map_err(|_| parse_err(path, row, format!("bad x '{x}'")))?;
                    let y: f64 = y
                        .parse()
                        .map_err(|_| parse_err(path, row, format!("bad y '{y}'")))?;
                    Some([x, y])
                }
            };
            if coords.len() <= label {
                coords.resize(label + 1, None);
            }
            match (coords[label], xy) {
                (None, xy) => coords[label] = xy,
                (Some(prev), Some(now)) if prev != now => {
                    return Err(parse_err(
                        path,
                        row,
                        format!("reference point {label} has conflicting coordinates"),
                    ))
                }
                _ => {}
            }
            let mut rssi = Vec::with_capacity(wap_index.len());
            for (j, cell) in record.iter().skip(3).enumerate() {
                let cell = cell.trim();
                let v = if cell.is_empty() {
                    MISSING_DBM
                } else {
                    let v: f32 = cell.parse().map_err(|_| {
                        parse_err(
                            path,
                            row,
                            format!("non-numeric RSSI '{cell}' for WAP {}", wap_index.ids()[j]),
                        )
                    })?;
                    if !v.is_finite() {
                        return Err(parse_err(path, row, format!("non-finite RSSI '{cell}'")));
                    }
                    v.clamp(MISSING_DBM, MAX_DBM)
                };
                rssi.push(v);
            }
            samples.push(Sample { rssi, label });
        }
    }
    let num_classes = coords.len();
    let any_coords = coords.iter().any(Option::is_some);
    let ds = LabeledDataset {
        wap_index,
        samples,
        num_classes,
        coords: any_coords.then_some(coords),
        split: SplitTag::All,
        source_digest: hashing.hex_digest(),
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write_native(dataset: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    let mut writer = csv::Writer::from_writer(&mut out);
    let mut header = vec!["label".to_string(), "x".into(), "y".into()];
    header.extend(
        dataset
            .wap_index
            .ids()
            .iter()
            .map(|id| format!("{WAP_PREFIX}{id}")),
    );
    writer.write_record(&header)?;
    for s in &dataset.samples {
        let xy = dataset
            .coords
            .as_ref()
            .and_then(|c| c.get(s.label).copied().flatten());
        let mut row = vec![s.label.to_string()];
        match xy {
            Some([x, y]) => {
                row.push(x.to_string());
                row.push(y.to_string());
            }
            None => row.extend([String::new(), String::new()]),
        }
        row.extend(s.rssi.iter().map(|&v| {
            if v <= MISSING_DBM {
                String::new()
            } else {
                v.to_string()
            }
        }));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    drop(writer);
    out.flush()?;
    Ok(())
}
