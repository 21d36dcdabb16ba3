//! UJIndoorLoc CSV ingestion (building/floor classification).
//!
//! The published files have 520 `WAPxxx` columns followed by nine metadata
//! columns. A WAP value of +100 means "not detected".

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use super::native::HashingReader;
use super::{LabeledDataset, Sample, SplitTag, WapIndex, MAX_DBM, MISSING_DBM};
use crate::error::{Error, Result};

/// Floors per building, in building-id order.
pub const UJI_FLOORS_PER_BUILDING: [usize; 3] = [4, 4, 5];
pub const UJI_CLASSES: usize = 13;

const NOT_DETECTED: f32 = 100.0;
const METADATA: [&str; 9] = [
    "LONGITUDE",
    "LATITUDE",
    "FLOOR",
    "BUILDINGID",
    "SPACEID",
    "RELATIVEPOSITION",
    "USERID",
    "PHONEID",
    "TIMESTAMP",
];

/// Building-major class index of a (building, floor) pair.
pub fn uji_class(building: usize, floor: usize) -> Option<usize> {
    let floors = *UJI_FLOORS_PER_BUILDING.get(building)?;
    (floor < floors).then(|| UJI_FLOORS_PER_BUILDING[..building].iter().sum::<usize>() + floor)
}

fn parse_err(path: &Path, row: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        msg: msg.into(),
    }
}

pub fn load_ujindoorloc(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut hashing = HashingReader::new(BufReader::new(File::open(path)?));
    let mut samples = Vec::new();
    let wap_index;
    {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(&mut hashing);
        let headers = reader.headers()?.clone();
        let mut wap_cols = Vec::new();
        let (mut floor_col, mut building_col) = (None, None);
        for (i, name) in headers.iter().enumerate() {
            let name = name.trim();
            if name.starts_with("WAP")
                && name[3..].chars().all(|c| c.is_ascii_digit())
                && name.len() > 3
            {
                wap_cols.push((i, name.to_string()));
            } else if METADATA.contains(&name) {
                match name {
                    "FLOOR" => floor_col = Some(i),
                    "BUILDINGID" => building_col = Some(i),
                    _ => {}
                }
            } else {
                return Err(parse_err(path, 1, format!("unknown column '{name}'")));
            }
        }
        let (Some(floor_col), Some(building_col)) = (floor_col, building_col) else {
            return Err(parse_err(path, 1, "missing FLOOR or BUILDINGID column"));
        };
        if wap_cols.is_empty() {
            return Err(parse_err(path, 1, "no WAP columns"));
        }
        wap_index = WapIndex::new(wap_cols.iter().map(|(_, n)| n.clone()).collect())
            .map_err(|e| parse_err(path, 1, e.to_string()))?;

        for record in reader.records() {
            let record = record?;
            let row = record.position().map(|p| p.line() as usize).unwrap_or(0);
            let int = |col: usize, what: &str| -> Result<usize> {
                let cell = record[col].trim();
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.fract() == 0.0 && *v >= 0.0)
                    .map(|v| v as usize)
                    .ok_or_else(|| parse_err(path, row, format!("bad {what} '{cell}'")))
            };
            let (building, floor) = (int(building_col, "BUILDINGID")?, int(floor_col, "FLOOR")?);
            let label = uji_class(building, floor).ok_or_else(|| {
                parse_err(
                    path,
                    row,
                    format!("building {building} / floor {floor} is not a known combination"),
                )
            })?;
            let mut rssi = Vec::with_capacity(wap_cols.len());
            for (col, name) in &wap_cols {
                let cell = record[*col].trim();
                let v: f32 = cell
                    .parse()
                    .ok()
                    .filter(|v: &f32| v.is_finite())
                    .ok_or_else(|| parse_err(path, row, format!("bad RSSI '{cell}' for {name}")))?;
                rssi.push(if v == NOT_DETECTED {
                    MISSING_DBM
                } else {
                    v.clamp(MISSING_DBM, MAX_DBM)
                });
            }
            samples.push(Sample { rssi, label });
        }
    }
    let ds = LabeledDataset {
        wap_index,
        samples,
        num_classes: UJI_CLASSES,
        coords: None,
        split: SplitTag::All,
        source_digest: hashing.hex_digest(),
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fingerprint::encode_image;
    use std::io::Write;

    fn header(waps: usize) -> String {
        let mut cols: Vec<String> = (1..=waps).map(|i| format!("WAP{i:03}")).collect();
        cols.extend(METADATA.iter().map(|s| s.to_string()));
        cols.join(",")
    }

    fn row(rssi: &[i32], building: usize, floor: usize) -> String {
        let mut cells: Vec<String> = rssi.iter().map(|v| v.to_string()).collect();
        cells.extend([
            "-7541.26".to_string(),
            "4864921.9".into(),
            floor.to_string(),
            building.to_string(),
            "106".into(),
            "2".into(),
            "2".into(),
            "23".into(),
            "1371713733".into(),
        ]);
        cells.join(",")
    }

    fn file(lines: &[String]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "{}", lines.join("\n")).unwrap();
        f
    }

    #[test]
    fn class_enumeration() {
        let all: Vec<usize> = (0..3)
            .flat_map(|b| (0..UJI_FLOORS_PER_BUILDING[b]).map(move |f| uji_class(b, f).unwrap()))
            .collect();
        assert_eq!(all, (0..13).collect::<Vec<_>>());
        assert_eq!(uji_class(0, 0), Some(0));
        assert_eq!(uji_class(2, 4), Some(12));
        assert_eq!(uji_class(0, 4), None);
        assert_eq!(uji_class(3, 0), None);
    }

    #[test]
    fn sentinel_rows_encode_to_black_images() {
        let f = file(&[
            header(4),
            row(&[100, 100, 100, 100], 0, 0),
            row(&[-60, 100, -80, 100], 2, 4),
        ]);
        let ds = load_ujindoorloc(f.path()).unwrap();
        assert_eq!(ds.num_classes, 13);
        assert_eq!(ds.labels(), vec![0, 12]);
        let img = encode_image(&ds.samples[0].rssi).unwrap();
        assert!(img.pixels().iter().all(|&p| p == 0));
        assert_eq!(ds.samples[1].rssi, vec![-60.0, -100.0, -80.0, -100.0]);
    }

    #[test]
    fn malformed_rows_are_reported() {
        let f = file(&[header(2), row(&[-50, 100], 0, 1), row(&[-50, 100], 1, 9)]);
        match load_ujindoorloc(f.path()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = file(&[
            format!("{},EXTRA", header(2)),
            format!("{},1", row(&[-50, 100], 0, 1)),
        ]);
        assert!(load_ujindoorloc(f.path()).is_err());
    }
}
