//! Feature store files: a columnar CSV and a compact little-endian binary
//! layout.
//!
//! Binary layout:
//! ```text
//! magic "SQDF" | version u32 | count u64 | dim u64
//! per record: id_len u32 | id utf-8 | dim × f64 | has_spectral u8 | [10 × f64]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureVector, SpectralFeatureSet, SPECTRAL_FEATURE_NAMES};
use crate::error::{Error, IoContext, Result};

const MAGIC: &[u8; 4] = b"SQDF";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub id: String,
    pub mfcc: FeatureVector,
    pub spectral: Option<SpectralFeatureSet>,
}

fn decode_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Decode {
        field: field.into(),
        reason: reason.into(),
    }
}

pub fn write_binary(records: &[FeatureRecord], mut w: impl Write) -> std::io::Result<()> {
    let dim = records.first().map_or(0, |r| r.mfcc.values().len());
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    w.write_all(&(dim as u64).to_le_bytes())?;
    for r in records {
        w.write_all(&(r.id.len() as u32).to_le_bytes())?;
        w.write_all(r.id.as_bytes())?;
        for v in r.mfcc.values() {
            w.write_all(&v.to_le_bytes())?;
        }
        match &r.spectral {
            Some(s) => {
                w.write_all(&[1])?;
                for v in s.to_array() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            None => w.write_all(&[0])?,
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self, field: &str) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner
            .read_exact(&mut b)
            .map_err(|e| decode_err(field, e.to_string()))?;
        Ok(b)
    }
    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(field)?))
    }
    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(field)?))
    }
    fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(field)?))
    }
}

pub fn read_binary(r: impl Read) -> Result<Vec<FeatureRecord>> {
    let mut r = Reader { inner: r };
    if &r.bytes::<4>("magic")? != MAGIC {
        return Err(decode_err("magic", "not a feature store"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(decode_err("version", format!("unsupported version {version}")));
    }
    let count = r.u64("count")? as usize;
    let dim = r.u64("dim")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        let len = r.u32("id_len")? as usize;
        let mut id = vec![0u8; len];
        r.inner
            .read_exact(&mut id)
            .map_err(|e| decode_err(&format!("records[{i}].id"), e.to_string()))?;
        let id = String::from_utf8(id).map_err(|e| decode_err("id", e.to_string()))?;
        let values = (0..dim)
            .map(|_| r.f64(&format!("records[{i}].mfcc")))
            .collect::<Result<Vec<_>>>()?;
        let spectral = match r.bytes::<1>("has_spectral")?[0] {
            0 => None,
            1 => {
                let mut a = [0.0; 10];
                for v in &mut a {
                    *v = r.f64(&format!("records[{i}].spectral"))?;
                }
                Some(SpectralFeatureSet::from_array(a))
            }
            b => return Err(decode_err("has_spectral", format!("invalid flag {b}"))),
        };
        out.push(FeatureRecord {
            id,
            mfcc: FeatureVector::from_raw(values),
            spectral,
        });
    }
    Ok(out)
}

fn csv_header(dim: usize) -> Vec<String> {
    std::iter::once("id".to_string())
        .chain((0..dim).map(|i| format!("f{i}")))
        .chain(SPECTRAL_FEATURE_NAMES.iter().map(|s| s.to_string()))
        .collect()
}

/// One row per sound; spectral columns are empty when absent.
pub fn write_csv(records: &[FeatureRecord], w: impl Write) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.mfcc.values().len());
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| decode_err("csv", e.to_string());
    out.write_record(csv_header(dim)).map_err(err)?;
    for r in records {
        let mut row = vec![r.id.clone()];
        row.extend(r.mfcc.values().iter().map(|v| v.to_string()));
        match &r.spectral {
            Some(s) => row.extend(s.to_array().iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), 10)),
        }
        out.write_record(&row).map_err(err)?;
    }
    out.flush().map_err(|e| decode_err("csv", e.to_string()))?;
    Ok(())
}

pub fn read_csv(r: impl Read) -> Result<Vec<FeatureRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr
        .headers()
        .map_err(|e| decode_err("header", e.to_string()))?
        .clone();
    let dim = headers.len().saturating_sub(1 + 10);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| decode_err(&format!("row {i}"), e.to_string()))?;
        let parse = |j: usize| -> Result<f64> {
            row[j].parse::<f64>().map_err(|e| {
                decode_err(&format!("row {i} column {}", &headers[j]), e.to_string())
            })
        };
        let values = (1..=dim).map(parse).collect::<Result<Vec<_>>>()?;
        let spectral = if row[dim + 1].is_empty() {
            None
        } else {
            let mut a = [0.0; 10];
            for (k, v) in a.iter_mut().enumerate() {
                *v = parse(dim + 1 + k)?;
            }
            Some(SpectralFeatureSet::from_array(a))
        };
        out.push(FeatureRecord {
            id: row[0].to_string(),
            mfcc: FeatureVector::from_raw(values),
            spectral,
        });
    }
    Ok(out)
}

pub fn save_binary(records: &[FeatureRecord], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).at(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_binary(records, &mut w).at(path)?;
    w.flush().at(path)
}

pub fn load_binary(path: &Path) -> Result<Vec<FeatureRecord>> {
    let f = std::fs::File::open(path).at(path)?;
    read_binary(std::io::BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(id: &str, seed: f64, spectral: bool) -> FeatureRecord {
        FeatureRecord {
            id: id.into(),
            mfcc: FeatureVector::from_raw((0..96).map(|i| seed * i as f64 - 3.25).collect()),
            spectral: spectral
                .then(|| SpectralFeatureSet::from_array(std::array::from_fn(|i| i as f64 * seed))),
        }
    }

    #[test]
    fn truncated_binary_names_field() {
        let mut bytes = Vec::new();
        write_binary(&[record("a", 0.5, true)], &mut bytes).unwrap();
        let err = read_binary(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Decode { ref field, .. } if field.contains("spectral")));
        let err = read_binary(&b"NOPE"[..]).unwrap_err();
        assert!(matches!(err, Error::Decode { ref field, .. } if field == "magic"));
    }

    #[test]
    fn csv_round_trip_with_mixed_spectral() {
        let recs = vec![record("a,b", 0.125, true), record("c", -2.0, false)];
        let mut bytes = Vec::new();
        write_csv(&recs, &mut bytes).unwrap();
        assert_eq!(read_csv(&bytes[..]).unwrap(), recs);
    }

    proptest! {
        #[test]
        fn binary_round_trip(seeds in prop::collection::vec(-1e6f64..1e6, 0..8), spectral in any::<bool>()) {
            let recs: Vec<FeatureRecord> = seeds
                .iter()
                .enumerate()
                .map(|(i, &s)| record(&format!("snd-{i}"), s, spectral))
                .collect();
            let mut bytes = Vec::new();
            write_binary(&recs, &mut bytes).unwrap();
            prop_assert_eq!(read_binary(&bytes[..]).unwrap(), recs);
        }
    }
}
