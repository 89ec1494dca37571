//! Embedding and label file formats.
//!
//! Binary layout (little-endian):
//! - magic `SPE1`
//! - `N: u32`, `E: u32`
//! - `N * E` `f32` values, row-major
//! - optional trailer: `len: u32` followed by `len` bytes of UTF-8 JSON
//!   holding `sample_ids` and, when known, `labels`
//!
//! Files whose extension is `.csv` use the CSV layout instead, with header
//! `sample_id,e0,...,e{E-1}`.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{validate_labels, EmbeddingSet, SampleClass, SampleLabel};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"SPE1";

#[derive(Serialize, Deserialize)]
struct Trailer {
    sample_ids: Vec<String>,
    #[serde(default)]
    labels: Option<Vec<SampleLabel>>,
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn write_embeddings(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_csv(path) {
        write_embeddings_csv(set, path)
    } else {
        fs::write(path, encode_binary(set)?).map_err(|e| Error::io(path, e))
    }
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    if is_csv(path) {
        read_embeddings_csv(path)
    } else {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode_binary(&bytes, path)
    }
}

fn encode_binary(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| Error::DimensionMismatch(format!("{what}={v} exceeds u32")))
    };
    let (n, e) = set.matrix.dim();
    let mut out = Vec::with_capacity(12 + 4 * n * e);
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&to_u32(n, "N")?.to_le_bytes());
    out.extend_from_slice(&to_u32(e, "E")?.to_le_bytes());
    for v in set.matrix.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let trailer = serde_json::to_vec(&Trailer {
        sample_ids: set.sample_ids.clone(),
        labels: set.labels.clone(),
    })?;
    out.extend_from_slice(&to_u32(trailer.len(), "trailer length")?.to_le_bytes());
    out.extend_from_slice(&trailer);
    Ok(out)
}

fn decode_binary(bytes: &[u8], path: &Path) -> Result<EmbeddingSet> {
    if bytes.len() < 4 || bytes[..4] != EMBEDDING_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_owned(),
            expected: EMBEDDING_MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    if bytes.len() < 12 {
        return Err(Error::malformed(path, "truncated header"));
    }
    let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (n, e) = (read_u32(4), read_u32(8));
    let expected = n
        .checked_mul(e)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| Error::DimensionMismatch(format!("header N={n}, E={e} overflows")))?;
    let payload = &bytes[12..];
    if payload.len() < expected {
        return Err(Error::DimensionMismatch(format!(
            "header declares N={n}, E={e} ({} values) but the payload holds {} bytes",
            n * e,
            payload.len()
        )));
    }
    let mut values = Vec::with_capacity(n * e);
    for (i, chunk) in payload[..expected].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::NonFinite {
                row: i / e,
                column: i % e,
            });
        }
        values.push(v);
    }
    let matrix = Array2::from_shape_vec((n, e), values).map_err(|err| Error::DimensionMismatch(err.to_string()))?;

    let rest = &payload[expected..];
    if rest.is_empty() {
        let ids = (0..n).map(|i| i.to_string()).collect();
        return EmbeddingSet::new(ids, matrix);
    }
    if rest.len() < 4 {
        return Err(Error::DimensionMismatch(format!(
            "{} trailing bytes after the N={n}, E={e} payload",
            rest.len()
        )));
    }
    let len = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
    if rest.len() - 4 != len {
        return Err(Error::DimensionMismatch(format!(
            "trailer declares {len} bytes but {} follow the N={n}, E={e} payload",
            rest.len() - 4
        )));
    }
    let trailer: Trailer = serde_json::from_slice(&rest[4..])?;
    let set = EmbeddingSet::new(trailer.sample_ids, matrix)?;
    match trailer.labels {
        Some(labels) => set.with_labels(labels),
        None => Ok(set),
    }
}

fn write_embeddings_csv(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_owned()];
    header.extend((0..set.dim_e()).map(|j| format!("e{j}")));
    w.write_record(&header)?;
    for (id, row) in set.sample_ids.iter().zip(set.matrix.rows()) {
        let mut record = Vec::with_capacity(row.len() + 1);
        record.push(id.clone());
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_embeddings_csv(path: &Path) -> Result<EmbeddingSet> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.get(0) != Some("sample_id") {
        return Err(Error::malformed(path, "first column must be sample_id"));
    }
    let dim = header.len() - 1;
    for (j, name) in header.iter().skip(1).enumerate() {
        if name != format!("e{j}") {
            return Err(Error::malformed(
                path,
                format!("column {} should be e{j}, found {name:?}", j + 1),
            ));
        }
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        if record.len() != dim + 1 {
            return Err(Error::DimensionMismatch(format!(
                "row {row} has {} values, header has {dim}",
                record.len() - 1
            )));
        }
        ids.push(record[0].to_owned());
        for (column, cell) in record.iter().skip(1).enumerate() {
            let v: f32 = cell
                .trim()
                .parse()
                .map_err(|_| Error::malformed(path, format!("row {row}, column {column}: cannot parse {cell:?}")))?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, column });
            }
            values.push(v);
        }
    }
    let matrix =
        Array2::from_shape_vec((ids.len(), dim), values).map_err(|err| Error::DimensionMismatch(err.to_string()))?;
    EmbeddingSet::new(ids, matrix)
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    sample_id: String,
    class: SampleClass,
    attack_id: Option<String>,
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<SampleLabel>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["sample_id", "class", "attack_id"] {
        return Err(Error::malformed(path, "label header must be sample_id,class,attack_id"));
    }
    let labels = r
        .deserialize::<LabelRecord>()
        .map(|rec| {
            let rec = rec?;
            Ok(SampleLabel {
                sample_id: rec.sample_id,
                class: rec.class,
                attack_id: rec.attack_id.filter(|a| !a.is_empty()),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    validate_labels(&labels)?;
    Ok(labels)
}

pub fn write_labels(labels: &[SampleLabel], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for l in labels {
        w.serialize(LabelRecord {
            sample_id: l.sample_id.clone(),
            class: l.class,
            attack_id: l.attack_id.clone(),
        })?;
    }
    if labels.is_empty() {
        w.write_record(["sample_id", "class", "attack_id"])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_set() -> EmbeddingSet {
        let m = Array2::from_shape_vec((3, 2), vec![0.5, -1.25, 3.0e-7, -0.0, 1e30, 7.0]).unwrap();
        EmbeddingSet::labeled(
            vec![
                SampleLabel::bonafide("b0"),
                SampleLabel::spoof("s1", "A01"),
                SampleLabel::spoof("s2", "A02"),
            ],
            m,
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip_keeps_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.spe");
        let set = sample_set();
        write_embeddings(&set, &p).unwrap();
        let back = read_embeddings(&p).unwrap();
        assert_eq!(back, set);
        assert_eq!(&fs::read(&p).unwrap()[..4], b"SPE1");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let set = sample_set();
        write_embeddings(&set, &p).unwrap();
        let back = read_embeddings(&p).unwrap();
        assert_eq!(back.sample_ids(), set.sample_ids());
        assert_eq!(back.matrix(), set.matrix());
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("sample_id,e0,e1\n"));
    }

    #[test]
    fn short_payload_is_dimension_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.spe");
        let mut bytes = b"SPE1".to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&3u32.to_le_bytes());
        for i in 0..5 {
            bytes.extend_from_slice(&(i as f32).to_le_bytes());
        }
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.spe");
        fs::write(&p, b"NOPE\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn trailerless_file_gets_index_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bare.spe");
        let mut bytes = b"SPE1".to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1.5f32.to_le_bytes());
        bytes.extend_from_slice(&(-2.0f32).to_le_bytes());
        fs::write(&p, bytes).unwrap();
        let set = read_embeddings(&p).unwrap();
        assert_eq!(set.sample_ids(), ["0", "1"]);
        assert_eq!(set.matrix()[[1, 0]], -2.0);
        assert!(set.labels().is_none());
    }

    #[test]
    fn binary_nan_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.spe");
        let mut bytes = b"SPE1".to_vec();
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        assert!(matches!(
            read_embeddings(&p),
            Err(Error::NonFinite { row: 0, column: 1 })
        ));
    }

    #[test]
    fn csv_nan_names_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nan.csv");
        fs::write(&p, "sample_id,e0,e1\na,1,2\nb,3,NaN\n").unwrap();
        let err = read_embeddings(&p).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, column: 1 }));
        assert!(err.to_string().contains("row 1, column 1"));
    }

    #[test]
    fn labels_round_trip_and_validate() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        let labels = sample_set().labels().unwrap().to_vec();
        write_labels(&labels, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("sample_id,class,attack_id\nb0,bonafide,\n"));
        assert_eq!(read_labels(&p).unwrap(), labels);

        fs::write(&p, "sample_id,class,attack_id\nx,spoof,\n").unwrap();
        assert!(matches!(read_labels(&p), Err(Error::InvalidLabel(_))));
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bit_exact(
            rows in 1usize..6,
            cols in 1usize..5,
            seed in any::<u64>(),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f32> = (0..rows * cols)
                .map(|_| f32::from_bits(rng.random::<u32>()))
                .map(|v| if v.is_finite() { v } else { 0.25 })
                .collect();
            let m = Array2::from_shape_vec((rows, cols), values).unwrap();
            let ids = (0..rows).map(|i| format!("id{i}")).collect();
            let set = EmbeddingSet::new(ids, m).unwrap();
            let bytes = encode_binary(&set).unwrap();
            let back = decode_binary(&bytes, Path::new("mem")).unwrap();
            let same_bits = back
                .matrix()
                .iter()
                .zip(set.matrix().iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same_bits);
            prop_assert_eq!(back.sample_ids(), set.sample_ids());
        }
    }
}
