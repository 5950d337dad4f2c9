//! Run-record tables: `technique,N,E,K,R,tokens,loss`, one trained model per row.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use routescale_core::fit::{RunRecord, Technique};

use crate::error::{CliError, CliResult};
use crate::fixtures::{read_rows, sha256_hex};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Row {
    technique: String,
    #[serde(rename = "N")]
    n: u64,
    #[serde(rename = "E")]
    e: u64,
    #[serde(rename = "K")]
    k: u64,
    #[serde(rename = "R")]
    r: f64,
    tokens: u64,
    loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTable {
    pub records: Vec<RunRecord>,
    /// File path or fixture name the records came from.
    pub provenance: String,
}

impl RunTable {
    /// Validates every record and rejects repeated `(technique, N, E, K, R)`
    /// keys unless the token counts differ.
    pub fn new(records: Vec<RunRecord>, provenance: impl Into<String>) -> CliResult<Self> {
        let provenance = provenance.into();
        if records.is_empty() {
            return Err(CliError::EmptyTable(provenance));
        }
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            r.validate().map_err(|e| CliError::Data(format!("{provenance}, record {}: {e}", i + 1)))?;
            if !seen.insert((r.technique, r.n, r.e, r.k, r.r.to_bits(), r.tokens_seen)) {
                return Err(CliError::Data(format!(
                    "{provenance}, record {}: duplicate run {} N={} E={} K={} R={}",
                    i + 1,
                    r.technique,
                    r.n,
                    r.e,
                    r.k,
                    r.r
                )));
            }
        }
        Ok(RunTable { records, provenance })
    }

    /// Records of one technique plus the dense baselines.
    pub fn for_technique(&self, t: Technique) -> Vec<RunRecord> {
        self.records.iter().filter(|r| r.technique == t || r.technique == Technique::Dense).cloned().collect()
    }

    /// Canonical CSV text; identical tables give identical bytes.
    pub fn to_csv(&self) -> CliResult<String> {
        write_runs(&self.records)
    }

    /// SHA-256 of the canonical CSV text.
    pub fn data_hash(&self) -> CliResult<String> {
        Ok(sha256_hex(self.to_csv()?.as_bytes()))
    }
}

pub fn parse_runs(text: &str, provenance: &str) -> CliResult<RunTable> {
    let rows: Vec<Row> = read_rows(text, provenance)?;
    let mut records = Vec::with_capacity(rows.len());
    for row in rows {
        records.push(RunRecord {
            technique: row.technique.parse()?,
            n: row.n,
            e: row.e,
            k: row.k,
            r: row.r,
            tokens_seen: row.tokens,
            loss: row.loss,
        });
    }
    RunTable::new(records, provenance)
}

pub fn load_runs(path: &Path) -> CliResult<RunTable> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    parse_runs(&text, &path.display().to_string())
}

pub fn write_runs(records: &[RunRecord]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(Row {
            technique: r.technique.name().to_string(),
            n: r.n,
            e: r.e,
            k: r.k,
            r: r.r,
            tokens: r.tokens_seen,
            loss: r.loss,
        })
        .map_err(|e| CliError::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# two runs
technique,N,E,K,R,tokens,loss
dense,16527360,1,1,1,130000000000,3.41
sbase,16527360,64,1,0.5,130000000000,3.02
";

    #[test]
    fn parses_sample() {
        let t = parse_runs(SAMPLE, "sample").unwrap();
        assert_eq!(t.records.len(), 2);
        assert_eq!(t.records[1].technique, Technique::SBase);
        assert_eq!(t.records[1].e, 64);
        assert_eq!(t.records[1].loss, 3.02);
    }

    #[test]
    fn line_numbers_in_errors() {
        let bad = SAMPLE.replace("3.02", "lots");
        let err = parse_runs(&bad, "sample").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 4, .. }), "{err}");
    }

    #[test]
    fn empty_and_invalid_tables() {
        assert!(matches!(parse_runs("", "empty"), Err(CliError::EmptyTable(_))));
        assert!(matches!(parse_runs("technique,N,E,K,R,tokens,loss\n", "h"), Err(CliError::EmptyTable(_))));
        let neg = SAMPLE.replace("3.41", "-1");
        assert!(matches!(parse_runs(&neg, "s"), Err(CliError::Data(_))));
        let unknown = SAMPLE.replace("sbase", "moe");
        assert!(parse_runs(&unknown, "s").is_err());
    }

    #[test]
    fn duplicates_need_different_token_counts() {
        let dup = format!("{SAMPLE}sbase,16527360,64,1,0.5,130000000000,3.05\n");
        assert!(matches!(parse_runs(&dup, "s"), Err(CliError::Data(_))));
        let longer = format!("{SAMPLE}sbase,16527360,64,1,0.5,500000000000,2.95\n");
        assert_eq!(parse_runs(&longer, "s").unwrap().records.len(), 3);
    }

    #[test]
    fn csv_round_trip() {
        let t = parse_runs(SAMPLE, "sample").unwrap();
        let again = parse_runs(&t.to_csv().unwrap(), "sample").unwrap();
        assert_eq!(t, again);
        assert_eq!(t.data_hash().unwrap(), again.data_hash().unwrap());
    }
}
