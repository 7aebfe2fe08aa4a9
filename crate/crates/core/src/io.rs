//! On-disk formats.
//!
//! * `venue.json`: `{"papers", "reviewers": [{"id", "cap", "profile"?}], "paper_load",
//!   "conflicts": [[reviewer, paper]], "bid_scheme"?, "outcome_scale"?}`
//! * `scores.csv`: `reviewer,paper,T,K,bid`, empty cell = missing
//! * `outcomes.csv`: `reviewer,paper,value,status`
//! * `marginals.csv`: `reviewer,paper,probability`, absent rows = 0
//! * covariance: binary triplets plus a JSON sidecar, see [`write_covariance`]
//!
//! Floats are written with 9 significant digits. Every CSV needs its header row.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::{
    Covariates, OutcomeRecord, OutcomeRecords, OutcomeScale, OutcomeStatus, PairGrid, PairId,
    PairTable, Reviewer, Venue,
};
use crate::error::{Error, Result};
use crate::sampler::{CovarianceMatrix, CovarianceProvenance};
use crate::similarity::BidScheme;

pub const SCORES_HEADER: [&str; 5] = ["reviewer", "paper", "T", "K", "bid"];
pub const OUTCOMES_HEADER: [&str; 4] = ["reviewer", "paper", "value", "status"];
pub const MARGINALS_HEADER: [&str; 3] = ["reviewer", "paper", "probability"];
pub const COVARIANCE_MAGIC: &[u8; 8] = b"PAIRCOV1";

/// Format with 9 significant digits, trimming redundant zeros.
pub fn fmt_float(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.8e}").parse().expect("formatted float parses");
    rounded.to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VenueDoc {
    pub papers: Vec<String>,
    pub reviewers: Vec<Reviewer>,
    pub paper_load: u32,
    #[serde(default)]
    pub conflicts: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bid_scheme: Option<BidScheme>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome_scale: Option<OutcomeScale>,
}

impl VenueDoc {
    pub fn into_venue(self) -> Result<Venue> {
        Venue::new(
            self.reviewers,
            self.papers,
            self.paper_load,
            self.conflicts,
            self.bid_scheme.unwrap_or_else(BidScheme::aaai),
            self.outcome_scale,
        )
    }

    pub fn from_venue(venue: &Venue) -> Self {
        let mut conflicts: Vec<(String, String)> = venue
            .conflicts()
            .map(|p| {
                let (r, q) = venue.pair_ids(p);
                (r.to_string(), q.to_string())
            })
            .collect();
        conflicts.sort();
        Self {
            papers: venue.papers().to_vec(),
            reviewers: venue.reviewers().to_vec(),
            paper_load: venue.paper_load(),
            conflicts,
            bid_scheme: Some(venue.bid_scheme().clone()),
            outcome_scale: venue.outcome_scale().cloned(),
        }
    }
}

pub fn parse_venue_json(bytes: &[u8]) -> Result<Venue> {
    let doc: VenueDoc = serde_json::from_slice(bytes)?;
    doc.into_venue()
}

pub fn venue_to_json(venue: &Venue) -> String {
    serde_json::to_string_pretty(&VenueDoc::from_venue(venue)).expect("venue serializes")
}

fn reader(bytes: &[u8]) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes)
}

fn check_header(rdr: &mut csv::Reader<&[u8]>, expected: &[&str], source: &str) -> Result<()> {
    let header = rdr.headers()?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(Error::row(
            source,
            1,
            format!("expected header {:?}, found {:?}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

fn resolve_pair(
    venue: &Venue,
    rec: &csv::StringRecord,
    source: &str,
    line: usize,
) -> Result<PairId> {
    let r = &rec[0];
    let p = &rec[1];
    let ri = venue
        .reviewer_index(r)
        .ok_or_else(|| Error::row(source, line, format!("unknown reviewer {r:?}")))?;
    let pi = venue
        .paper_index(p)
        .ok_or_else(|| Error::row(source, line, format!("unknown paper {p:?}")))?;
    Ok(PairId::new(ri, pi))
}

fn optional_float(cell: &str, name: &str, source: &str, line: usize) -> Result<Option<f64>> {
    if cell.is_empty() {
        return Ok(None);
    }
    let x: f64 = cell
        .parse()
        .map_err(|_| Error::row(source, line, format!("{name} {cell:?} is not a number")))?;
    if !x.is_finite() {
        return Err(Error::row(source, line, format!("{name} must be finite")));
    }
    Ok(Some(x))
}

/// Parse `scores.csv`; pairs with no row keep all covariates missing.
pub fn parse_scores_csv(venue: &Venue, bytes: &[u8]) -> Result<PairTable> {
    const SRC: &str = "scores.csv";
    let mut rdr = reader(bytes);
    check_header(&mut rdr, &SCORES_HEADER, SRC)?;
    let mut table = venue.grid(Covariates::default());
    let mut seen = venue.grid(false);
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let pair = resolve_pair(venue, &rec, SRC, line)?;
        if std::mem::replace(seen.get_mut(pair), true) {
            return Err(Error::row(SRC, line, format!("duplicate pair ({}, {})", &rec[0], &rec[1])));
        }
        let text = optional_float(&rec[2], "T", SRC, line)?;
        let subject = optional_float(&rec[3], "K", SRC, line)?;
        for (name, v) in [("T", text), ("K", subject)] {
            if let Some(x) = v {
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::row(SRC, line, format!("{name}={x} outside [0, 1]")));
                }
            }
        }
        let bid = match &rec[4] {
            "" => None,
            label if venue.bid_scheme().contains(label) => Some(label.to_string()),
            label => {
                return Err(Error::row(
                    SRC,
                    line,
                    format!("bid {label:?} not in scheme {:?}", venue.bid_scheme().name),
                ))
            }
        };
        table.set(pair, Covariates { text, subject, bid });
    }
    Ok(table)
}

pub fn scores_to_csv(venue: &Venue, table: &PairTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SCORES_HEADER).expect("in-memory write");
    for (pair, c) in table.iter() {
        if c.text.is_none() && c.subject.is_none() && c.bid.is_none() {
            continue;
        }
        let (r, p) = venue.pair_ids(pair);
        w.write_record([
            r,
            p,
            &c.text.map(fmt_float).unwrap_or_default(),
            &c.subject.map(fmt_float).unwrap_or_default(),
            c.bid.as_deref().unwrap_or(""),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

pub fn parse_outcomes_csv(venue: &Venue, bytes: &[u8]) -> Result<OutcomeRecords> {
    const SRC: &str = "outcomes.csv";
    let mut rdr = reader(bytes);
    check_header(&mut rdr, &OUTCOMES_HEADER, SRC)?;
    let mut records = Vec::new();
    let mut seen: PairGrid<Option<(usize, OutcomeStatus)>> = venue.grid(None);
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let pair = resolve_pair(venue, &rec, SRC, line)?;
        let status = OutcomeStatus::parse(&rec[3])
            .ok_or_else(|| Error::row(SRC, line, format!("unknown status {:?}", &rec[3])))?;
        let value = optional_float(&rec[2], "value", SRC, line)?;
        let record = OutcomeRecord { pair, value, status };
        record
            .check(venue.outcome_scale())
            .map_err(|m| Error::row(SRC, line, m))?;
        if venue.is_conflict(pair) {
            return Err(Error::row(SRC, line, "outcome recorded for a conflicted pair"));
        }
        if let Some((first, prev)) = *seen.get(pair) {
            let what = if prev == OutcomeStatus::ManuallyRemoved || status == OutcomeStatus::ManuallyRemoved {
                "was manually removed but appears again"
            } else {
                "is already listed"
            };
            return Err(Error::row(
                SRC,
                line,
                format!("pair ({}, {}) {what} (row {first})", &rec[0], &rec[1]),
            ));
        }
        seen.set(pair, Some((line, status)));
        records.push(record);
    }
    OutcomeRecords::new(records)
}

pub fn outcomes_to_csv(venue: &Venue, records: &OutcomeRecords) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(OUTCOMES_HEADER).expect("in-memory write");
    for rec in records.records() {
        let (r, p) = venue.pair_ids(rec.pair);
        w.write_record([
            r,
            p,
            &rec.value.map(fmt_float).unwrap_or_default(),
            rec.status.as_str(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

/// Parse `marginals.csv` into a full grid; unlisted pairs get probability 0.
pub fn parse_marginals_csv(venue: &Venue, bytes: &[u8]) -> Result<PairGrid<f64>> {
    const SRC: &str = "marginals.csv";
    let mut rdr = reader(bytes);
    check_header(&mut rdr, &MARGINALS_HEADER, SRC)?;
    let mut probs = venue.grid(0.0);
    let mut seen = venue.grid(false);
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let pair = resolve_pair(venue, &rec, SRC, line)?;
        if std::mem::replace(seen.get_mut(pair), true) {
            return Err(Error::row(SRC, line, format!("duplicate pair ({}, {})", &rec[0], &rec[1])));
        }
        let x = optional_float(&rec[2], "probability", SRC, line)?
            .ok_or_else(|| Error::row(SRC, line, "probability is empty"))?;
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::row(SRC, line, format!("probability {x} outside [0, 1]")));
        }
        if x > 0.0 && venue.is_conflict(pair) {
            return Err(Error::row(SRC, line, "positive probability on a conflicted pair"));
        }
        probs.set(pair, x);
    }
    Ok(probs)
}

pub fn marginals_to_csv(venue: &Venue, probs: &PairGrid<f64>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(MARGINALS_HEADER).expect("in-memory write");
    for (pair, &x) in probs.iter() {
        if venue.is_conflict(pair) {
            continue;
        }
        let (r, p) = venue.pair_ids(pair);
        w.write_record([r, p, &fmt_float(x)]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSidecar {
    pub format: String,
    pub samples: u64,
    pub seed: u64,
    pub workers: usize,
    pub pairs: Vec<SidecarPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarPair {
    pub index: u32,
    pub reviewer: String,
    pub paper: String,
    pub mean: f64,
}

/// Encode a covariance matrix.
///
/// Binary layout, little endian: the 8-byte magic `PAIRCOV1`, then `u64`
/// sample count, `u64` support size `m`, `u64` triplet count `t`, then `t`
/// records of `(u32 a, u32 b, f64 value)` with `a <= b`. The sidecar maps
/// each index to its `(reviewer, paper)` ids and empirical mean.
pub fn write_covariance(venue: &Venue, cov: &CovarianceMatrix) -> (Vec<u8>, CovarianceSidecar) {
    let triplets = cov.triplets();
    let mut buf = Vec::with_capacity(32 + 16 * triplets.len());
    buf.extend_from_slice(COVARIANCE_MAGIC);
    let prov = cov.provenance();
    buf.extend_from_slice(&prov.samples.to_le_bytes());
    buf.extend_from_slice(&(cov.support().len() as u64).to_le_bytes());
    buf.extend_from_slice(&(triplets.len() as u64).to_le_bytes());
    for (a, b, v) in triplets {
        buf.extend_from_slice(&a.to_le_bytes());
        buf.extend_from_slice(&b.to_le_bytes());
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let pairs = cov
        .support()
        .iter()
        .zip(cov.means())
        .enumerate()
        .map(|(i, (&p, &mean))| {
            let (r, q) = venue.pair_ids(p);
            SidecarPair {
                index: i as u32,
                reviewer: r.to_string(),
                paper: q.to_string(),
                mean,
            }
        })
        .collect();
    let sidecar = CovarianceSidecar {
        format: "PAIRCOV1".into(),
        samples: prov.samples,
        seed: prov.seed,
        workers: prov.workers,
        pairs,
    };
    (buf, sidecar)
}

/// Decoded binary covariance payload, before ids are resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePayload {
    pub samples: u64,
    pub support: u64,
    pub triplets: Vec<(u32, u32, f64)>,
}

pub fn parse_covariance_bin(bytes: &[u8]) -> Result<CovariancePayload> {
    const SRC: &str = "covariance";
    let bad = |m: &str| Error::Invalid(format!("{SRC}: {m}"));
    if bytes.len() < 32 || &bytes[..8] != COVARIANCE_MAGIC {
        return Err(bad("missing PAIRCOV1 header"));
    }
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let samples = u64_at(8);
    let support = u64_at(16);
    let count = u64_at(24);
    let body = &bytes[32..];
    if count.checked_mul(16) != Some(body.len() as u64) {
        return Err(bad(&format!(
            "header announces {count} triplets but body holds {} bytes",
            body.len()
        )));
    }
    let mut triplets = Vec::with_capacity(count as usize);
    for chunk in body.chunks_exact(16) {
        let a = u32::from_le_bytes(chunk[0..4].try_into().expect("4 bytes"));
        let b = u32::from_le_bytes(chunk[4..8].try_into().expect("4 bytes"));
        let v = f64::from_le_bytes(chunk[8..16].try_into().expect("8 bytes"));
        if u64::from(a.max(b)) >= support {
            return Err(bad(&format!("index {} out of range for {support} pairs", a.max(b))));
        }
        if !v.is_finite() {
            return Err(bad("non-finite covariance value"));
        }
        triplets.push((a.min(b), a.max(b), v));
    }
    Ok(CovariancePayload {
        samples,
        support,
        triplets,
    })
}

pub fn read_covariance(venue: &Venue, bin: &[u8], sidecar: &CovarianceSidecar) -> Result<CovarianceMatrix> {
    let payload = parse_covariance_bin(bin)?;
    if payload.support != sidecar.pairs.len() as u64 || payload.samples != sidecar.samples {
        return Err(Error::Inconsistent(
            "covariance file and sidecar disagree on support size or sample count".into(),
        ));
    }
    let mut support = Vec::with_capacity(sidecar.pairs.len());
    let mut means = Vec::with_capacity(sidecar.pairs.len());
    for (i, sp) in sidecar.pairs.iter().enumerate() {
        if sp.index as usize != i {
            return Err(Error::Invalid(format!("sidecar pair {i} has index {}", sp.index)));
        }
        let pair = venue.pair_by_ids(&sp.reviewer, &sp.paper).ok_or_else(|| {
            Error::Inconsistent(format!(
                "sidecar names unknown pair ({}, {})",
                sp.reviewer, sp.paper
            ))
        })?;
        support.push(pair);
        means.push(sp.mean);
    }
    Ok(CovarianceMatrix::new(
        support,
        means,
        payload.triplets,
        CovarianceProvenance {
            samples: sidecar.samples,
            seed: sidecar.seed,
            workers: sidecar.workers,
        },
    ))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn read_venue(path: impl AsRef<Path>) -> Result<Venue> {
    parse_venue_json(&read_file(path.as_ref())?)
}

pub fn read_scores(venue: &Venue, path: impl AsRef<Path>) -> Result<PairTable> {
    parse_scores_csv(venue, &read_file(path.as_ref())?)
}

pub fn read_outcomes(venue: &Venue, path: impl AsRef<Path>) -> Result<OutcomeRecords> {
    parse_outcomes_csv(venue, &read_file(path.as_ref())?)
}

pub fn read_marginals(venue: &Venue, path: impl AsRef<Path>) -> Result<PairGrid<f64>> {
    parse_marginals_csv(venue, &read_file(path.as_ref())?)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_slice(&read_file(path.as_ref())?)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

/// Sidecar path for a covariance file: `cov.bin` → `cov.bin.json`.
pub fn sidecar_path(bin: &Path) -> std::path::PathBuf {
    let mut name = bin.as_os_str().to_owned();
    name.push(".json");
    name.into()
}

pub fn save_covariance(venue: &Venue, cov: &CovarianceMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (bin, sidecar) = write_covariance(venue, cov);
    write_file(path, bin)?;
    write_json(sidecar_path(path), &sidecar)
}

pub fn load_covariance(venue: &Venue, path: impl AsRef<Path>) -> Result<CovarianceMatrix> {
    let path = path.as_ref();
    let sidecar: CovarianceSidecar = read_json(sidecar_path(path))?;
    read_covariance(venue, &read_file(path)?, &sidecar)
}

/// Load the three venue documents and cross-reference them.
pub fn load_venue(
    venue_path: impl AsRef<Path>,
    scores_path: impl AsRef<Path>,
    outcomes_path: impl AsRef<Path>,
) -> Result<(Venue, PairTable, OutcomeRecords)> {
    let venue = read_venue(venue_path)?;
    let table = read_scores(&venue, scores_path)?;
    let records = read_outcomes(&venue, outcomes_path)?;
    Ok((venue, table, records))
}
