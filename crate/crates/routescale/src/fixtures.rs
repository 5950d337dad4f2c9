//! Reference tables compiled into the binary.
//!
//! Each table is a small CSV file under `fixtures/` with its SHA-256 pinned
//! here, so an edited or corrupted table fails loudly rather than silently
//! shifting every downstream number.

use serde::de::DeserializeOwned;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use routescale_core::arch::ArchSpec;
use routescale_core::fit::Technique;
use routescale_core::law::{DenseLaw, LawCoefficients};

use crate::error::{CliError, CliResult};

/// Vocabulary size assumed for every reference architecture.
pub const VOCAB: u64 = 32_000;

#[derive(Debug, Clone, Copy)]
pub struct Fixture {
    pub name: &'static str,
    pub description: &'static str,
    pub sha256: &'static str,
    pub text: &'static str,
}

pub const FIXTURES: &[Fixture] = &[
    Fixture {
        name: "table2",
        description: "dense law: alpha_N and N_c",
        sha256: "7a46aa45e8f9dd79b0a335687b803925be2f021afb6eb3d156a54200b0032113",
        text: include_str!("../fixtures/table2.csv"),
    },
    Fixture {
        name: "table3",
        description: "saturated (N, E) law per technique",
        sha256: "811ee6eb6cddd84e2e9ff97d55b132f0e16468be48114e5068999dbc8230920f",
        text: include_str!("../fixtures/table3.csv"),
    },
    Fixture {
        name: "table4",
        description: "transformer shapes and reported parameter counts",
        sha256: "56faf99005011aa9e22fd7213295f3bd0a7aa424a2d4960c90e70fb98cc610e1",
        text: include_str!("../fixtures/table4.csv"),
    },
    Fixture {
        name: "table5",
        description: "per-size slopes b(N)",
        sha256: "d4d3ef168c3ff08cc94867e5595b020fd98e2dc28b6a97600d30f13c41592eb2",
        text: include_str!("../fixtures/table5.csv"),
    },
    Fixture {
        name: "table6",
        description: "bilinear (N, E) law per technique",
        sha256: "f4bf421b6a68d5bd387d4e207ee128a273bed3fbfaadd3e2d10cb6da8f9e9c97",
        text: include_str!("../fixtures/table6.csv"),
    },
    Fixture {
        name: "table7",
        description: "per-expert-count exponents a(E)",
        sha256: "8011532afc73d7887077cc8700af8475a4436053f98daa1a6dec2ca767c95558",
        text: include_str!("../fixtures/table7.csv"),
    },
    Fixture {
        name: "transfer",
        description: "downstream-task laws per technique and dataset",
        sha256: "69e7487d12cf28870f2ebef33bb6bf98f9ff5982872765191c5a192a0516f6e0",
        text: include_str!("../fixtures/transfer.csv"),
    },
];

pub fn fixture(name: &str) -> CliResult<&'static Fixture> {
    FIXTURES.iter().find(|f| f.name == name).ok_or_else(|| CliError::UnknownFixture {
        name: name.to_string(),
        known: FIXTURES.iter().map(|f| f.name).collect(),
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Recomputes the digest of a fixture against its pinned value.
pub fn verify(f: &Fixture) -> CliResult<()> {
    let got = sha256_hex(f.text.as_bytes());
    if got != f.sha256 {
        return Err(CliError::Data(format!("fixture {} checksum mismatch: {got}", f.name)));
    }
    Ok(())
}

/// Deserializes `#`-commented CSV, reporting errors with 1-based line numbers.
pub(crate) fn read_rows<T: DeserializeOwned>(text: &str, origin: &str) -> CliResult<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            let message = match e.kind() {
                csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                _ => e.to_string(),
            };
            CliError::Parse { origin: origin.to_string(), line, message }
        })?);
    }
    if rows.is_empty() {
        return Err(CliError::EmptyTable(origin.to_string()));
    }
    Ok(rows)
}

fn rows<T: DeserializeOwned>(name: &str) -> CliResult<Vec<T>> {
    let f = fixture(name)?;
    verify(f)?;
    read_rows(f.text, f.name)
}

#[derive(Debug, Clone, Deserialize)]
struct DenseRow {
    source: String,
    alpha_n: f64,
    n_c: f64,
}

pub fn dense_laws() -> CliResult<Vec<(String, DenseLaw)>> {
    rows::<DenseRow>("table2")?
        .into_iter()
        .map(|r| Ok((r.source, DenseLaw::new(r.alpha_n, r.n_c)?)))
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
struct SaturatedRow {
    technique: String,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    e_start: f64,
    e_max: f64,
}

pub fn saturated_laws() -> CliResult<Vec<(Technique, LawCoefficients)>> {
    rows::<SaturatedRow>("table3")?
        .into_iter()
        .map(|r| Ok((r.technique.parse()?, LawCoefficients::saturated(r.a, r.b, r.c, r.d, r.e_start, r.e_max))))
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
struct BilinearRow {
    technique: String,
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

/// Published as magnitudes; `a` and `b` are negated here.
pub fn bilinear_laws() -> CliResult<Vec<(Technique, LawCoefficients)>> {
    rows::<BilinearRow>("table6")?
        .into_iter()
        .map(|r| Ok((r.technique.parse()?, LawCoefficients::bilinear(-r.a, -r.b, r.c, r.d))))
        .collect()
}

#[derive(Debug, Clone, Deserialize)]
struct ArchRow {
    name: String,
    d_model: u64,
    n_layers: u64,
    n_heads: u64,
    kv_size: u64,
    params: u64,
}

/// Shapes together with their reported parameter counts.
pub fn architectures() -> CliResult<Vec<(ArchSpec, u64)>> {
    rows::<ArchRow>("table4")?
        .into_iter()
        .map(|r| Ok((ArchSpec::new(&r.name, r.d_model, r.n_layers, r.n_heads, r.kv_size, VOCAB)?, r.params)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct SizeSlope {
    pub technique: String,
    pub size: String,
    pub b: f64,
    pub holdout_rmse: f64,
}

pub fn size_slopes() -> CliResult<Vec<SizeSlope>> {
    rows("table5")
}

#[derive(Debug, Clone, Deserialize)]
struct ExpertSlopeRow {
    experts: u64,
    sbase: f64,
    rlr: f64,
    hash: f64,
}

/// `(E, technique, a(E))` with `a` negated to the fitted sign convention.
pub fn expert_slopes() -> CliResult<Vec<(u64, Technique, f64)>> {
    let mut out = Vec::new();
    for r in rows::<ExpertSlopeRow>("table7")? {
        out.push((r.experts, Technique::SBase, -r.sbase));
        out.push((r.experts, Technique::RLR, -r.rlr));
        out.push((r.experts, Technique::Hash, -r.hash));
    }
    Ok(out)
}

#[derive(Debug, Clone, Deserialize)]
struct TransferRow {
    policy: String,
    dataset: String,
    a: f64,
    b: Option<f64>,
    c: Option<f64>,
    d: f64,
    rmse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferLaw {
    pub policy: Technique,
    pub dataset: String,
    /// Dense rows give a dense law, routed rows a bilinear one.
    pub coefficients: LawCoefficients,
    pub rmse: f64,
}

pub fn transfer_laws() -> CliResult<Vec<TransferLaw>> {
    rows::<TransferRow>("transfer")?
        .into_iter()
        .map(|r| {
            let coefficients = match (r.b, r.c) {
                (Some(b), Some(c)) => LawCoefficients::bilinear(r.a, b, c, r.d),
                (None, None) => LawCoefficients::dense(r.a, r.d),
                _ => return Err(CliError::Data(format!("transfer row {}/{}: b and c must both be set", r.policy, r.dataset))),
            };
            Ok(TransferLaw { policy: r.policy.parse()?, dataset: r.dataset, coefficients, rmse: r.rmse })
        })
        .collect()
}

/// Row counts per fixture, for listings.
pub fn row_count(name: &str) -> CliResult<usize> {
    let f = fixture(name)?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f.text.as_bytes());
    Ok(reader.records().count())
}

/// Resolves `table:key` references such as `table3:sbase` or `table2:ours`.
pub fn coefficients(reference: &str) -> CliResult<LawCoefficients> {
    let (table, key) = reference
        .split_once(':')
        .ok_or_else(|| CliError::Usage(format!("coefficient reference `{reference}` must look like table3:sbase")))?;
    let technique = || key.parse::<Technique>();
    let found = match table {
        "table2" => dense_laws()?.into_iter().find(|(s, _)| s == key).map(|(_, l)| l.to_coefficients()),
        "table3" => {
            let t = technique()?;
            saturated_laws()?.into_iter().find(|(k, _)| *k == t).map(|(_, c)| c)
        }
        "table6" => {
            let t = technique()?;
            bilinear_laws()?.into_iter().find(|(k, _)| *k == t).map(|(_, c)| c)
        }
        "transfer" => {
            let (policy, dataset) = key.split_once('/').ok_or_else(|| {
                CliError::Usage("transfer references look like transfer:sbase/validation".into())
            })?;
            let p: Technique = policy.parse()?;
            transfer_laws()?.into_iter().find(|t| t.policy == p && t.dataset == dataset).map(|t| t.coefficients)
        }
        other => {
            fixture(other)?;
            return Err(CliError::Usage(format!("fixture `{other}` holds no law coefficients")));
        }
    };
    found.ok_or_else(|| CliError::Data(format!("no row `{key}` in {table}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksums_hold() {
        for f in FIXTURES {
            verify(f).unwrap();
        }
    }

    #[test]
    fn saturated_rows_as_transcribed() {
        let laws = saturated_laws().unwrap();
        assert_eq!(laws.len(), 3);
        assert_eq!(laws[0], (Technique::SBase, LawCoefficients::saturated(-0.082, -0.108, 0.009, 1.104, 1.847, 314.478)));
        assert_eq!(laws[1], (Technique::RLR, LawCoefficients::saturated(-0.083, -0.126, 0.012, 1.111, 1.880, 469.982)));
        assert_eq!(laws[2], (Technique::Hash, LawCoefficients::saturated(-0.087, -0.136, 0.012, 1.157, 4.175, 477.741)));
    }

    #[test]
    fn architecture_rows() {
        let archs = architectures().unwrap();
        assert_eq!(archs.len(), 7);
        assert_eq!(archs[0].0.name, "15M");
        assert_eq!(archs[6].1, 1_308_819_456);
        assert_eq!((archs[3].0.d_model, archs[3].0.n_layers, archs[3].0.n_heads, archs[3].0.kv_size), (896, 12, 16, 64));
    }

    #[test]
    fn other_tables() {
        let dense = dense_laws().unwrap();
        assert_eq!(dense[0].0, "ours");
        assert_eq!((dense[0].1.alpha_n, dense[0].1.n_c), (0.078, 3.568e13));
        assert_eq!(bilinear_laws().unwrap()[0].1, LawCoefficients::bilinear(-0.079, -0.088, 0.007, 1.072));
        assert_eq!(size_slopes().unwrap().len(), 15);
        let a = expert_slopes().unwrap();
        assert_eq!(a.len(), 21);
        assert_eq!(a[0], (4, Technique::SBase, -0.077));
        let transfer = transfer_laws().unwrap();
        assert_eq!(transfer.len(), 24);
        assert_eq!(transfer[0].coefficients, LawCoefficients::dense(-0.078, 1.063));
    }

    #[test]
    fn references() {
        assert_eq!(coefficients("table3:sbase").unwrap().e_max, Some(314.478));
        assert_eq!(coefficients("table3:S-BASE").unwrap().a, -0.082);
        assert_eq!(coefficients("transfer:sbase/lambada").unwrap().a, -0.211);
        assert!(matches!(coefficients("table4:15M"), Err(CliError::Usage(_))));
        assert!(matches!(coefficients("table9:x"), Err(CliError::UnknownFixture { .. })));
        assert!(matches!(coefficients("sbase"), Err(CliError::Usage(_))));
    }

    #[test]
    fn unknown_fixture_lists_known_ones() {
        let msg = fixture("table1").unwrap_err().to_string();
        assert!(msg.contains("table3") && msg.contains("transfer"), "{msg}");
        assert_eq!(row_count("table3").unwrap(), 3);
    }
}
