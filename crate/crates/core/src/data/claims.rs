//! Line-oriented claim files: one JSON object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ClaimRecord, Feature};

/// A loaded file. Claims missing a modality stay in `records`; their
/// positions are listed in `unavailable`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedClaims {
    pub records: Vec<ClaimRecord>,
    pub unavailable: Vec<usize>,
}

impl LoadedClaims {
    /// Records that carry every modality.
    pub fn available(&self) -> Vec<ClaimRecord> {
        let mut skip = self.unavailable.iter().peekable();
        self.records
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                if skip.peek() == Some(&i) {
                    skip.next();
                    false
                } else {
                    true
                }
            })
            .map(|(_, r)| r.clone())
            .collect()
    }
}

/// Parses one line; `line` is 1-based and only used in errors.
pub fn parse_claim(text: &str, line: usize, path: &Path) -> Result<ClaimRecord> {
    let parse_err = |field: String, message: String| Error::Parse {
        line,
        path: format!("{}: {field}", path.display()),
        message,
    };
    let rec: ClaimRecord = serde_json::from_str(text).map_err(|e| parse_err("<record>".into(), e.to_string()))?;
    rec.validate().map_err(|(field, msg)| parse_err(field, msg))?;
    Ok(rec)
}

pub fn load_claims(path: impl AsRef<Path>) -> Result<LoadedClaims> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut unavailable = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = parse_claim(&line, i + 1, path)?;
        if rec.require(&Feature::ALL).is_err() {
            unavailable.push(records.len());
        }
        records.push(rec);
    }
    Ok(LoadedClaims { records, unavailable })
}

pub fn save_claims(records: &[ClaimRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Generator settings written next to a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub n_claims: usize,
    pub n_fraud: usize,
    pub generator: super::synth::SynthConfig,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic, SynthConfig};

    fn sample() -> Vec<ClaimRecord> {
        generate_synthetic(&SynthConfig {
            n_claims: 12,
            images_max: 2,
            seed: 5,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("claims.jsonl");
        let records = sample();
        save_claims(&records, &path).unwrap();
        let loaded = load_claims(&path).unwrap();
        assert_eq!(loaded.records, records);
        assert!(loaded.unavailable.is_empty());
        let bits = |rs: &[ClaimRecord]| -> Vec<u32> {
            rs.iter()
                .flat_map(|r| r.images.iter().flat_map(|i| i.cds.iter().chain(&i.ud).map(|v| v.to_bits())).collect::<Vec<_>>())
                .collect()
        };
        assert_eq!(bits(&loaded.records), bits(&records));
    }

    #[test]
    fn missing_text_is_flagged_not_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("claims.jsonl");
        let mut records = sample();
        records[3].text_emb = None;
        save_claims(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap().replacen("\"text_emb\":null", "", 0);
        std::fs::write(&path, text).unwrap();
        let loaded = load_claims(&path).unwrap();
        assert_eq!(loaded.unavailable, vec![3]);
        assert_eq!(loaded.records[3].text_emb, None);
        assert_eq!(loaded.available().len(), records.len() - 1);
    }

    #[test]
    fn absent_text_field_parses() {
        let mut v = serde_json::to_value(&sample()[0]).unwrap();
        v.as_object_mut().unwrap().remove("text_emb");
        let rec = parse_claim(&v.to_string(), 1, Path::new("x")).unwrap();
        assert_eq!(rec.text_emb, None);
    }

    #[test]
    fn errors_name_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("claims.jsonl");
        let mut records = sample();
        records[1].images[0].cds.pop();
        let lines: Vec<String> = records.iter().map(|r| serde_json::to_string(r).unwrap()).collect();
        std::fs::write(&path, lines.join("\n")).unwrap();
        match load_claims(&path).unwrap_err() {
            Error::Parse { line, path, message } => {
                assert_eq!(line, 2);
                assert!(path.ends_with("images[0].cds"), "{path}");
                assert!(message.contains("expected 720"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
        std::fs::write(&path, format!("{}\n{{not json", lines[0])).unwrap();
        assert!(matches!(load_claims(&path).unwrap_err(), Error::Parse { line: 2, .. }));
    }
}
