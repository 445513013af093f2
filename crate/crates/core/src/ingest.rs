//! Table ingestion: parsing raw per-replicate measurements, replicate
//! averaging, expression-range filtering and construction of the validated
//! nested-set measurement table.
//!
//! Two text formats are understood, both comma- or tab-delimited with the
//! delimiter sniffed from the header line:
//!
//! * long format, one row per technical replicate:
//!   `gene_id,platform,replicate,value` with platform in
//!   `PCR | MICROARRAY | RNASEQ`;
//! * canonical format, one row per gene: `gene_id,set,x,y,z` with set in
//!   `A | B-A | C-B` and absent cells left empty.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};

use indexmap::IndexMap;
use thiserror::Error;

use crate::num::{real, to_f64, Real};

/// Measurement platform, ordered by decreasing accuracy and increasing
/// throughput.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Platform {
    Pcr,
    Microarray,
    RnaSeq,
}

impl Platform {
    pub const ALL: [Platform; 3] = [Platform::Pcr, Platform::Microarray, Platform::RnaSeq];

    pub fn token(self) -> &'static str {
        match self {
            Platform::Pcr => "PCR",
            Platform::Microarray => "MICROARRAY",
            Platform::RnaSeq => "RNASEQ",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        match token {
            "PCR" => Some(Platform::Pcr),
            "MICROARRAY" => Some(Platform::Microarray),
            "RNASEQ" => Some(Platform::RnaSeq),
            _ => None,
        }
    }
}

impl fmt::Display for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Scale the input values are declared in. Linear values are log2-transformed
/// before replicate averaging.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log2,
}

/// One parsed data row of the long format.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord<T> {
    pub gene_id: String,
    pub platform: Platform,
    pub replicate: u32,
    pub value: T,
}

/// Nested-set membership of a gene: measured by all three platforms (A),
/// by microarray and RNA-Seq only (B−A), or by RNA-Seq alone (C−B).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GeneSet {
    A,
    BMinusA,
    CMinusB,
}

impl GeneSet {
    pub fn token(self) -> &'static str {
        match self {
            GeneSet::A => "A",
            GeneSet::BMinusA => "B-A",
            GeneSet::CMinusB => "C-B",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        match token {
            "A" => Some(GeneSet::A),
            "B-A" => Some(GeneSet::BMinusA),
            "C-B" => Some(GeneSet::CMinusB),
            _ => None,
        }
    }
}

impl fmt::Display for GeneSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("unsupported header `{found}` (expected `{expected}`)")]
    Header { found: String, expected: String },
    #[error("line {line}: unknown platform token `{token}` (expected PCR, MICROARRAY or RNASEQ)")]
    UnknownPlatform { line: u64, token: String },
    #[error("line {line}: value for gene {gene_id} is not finite")]
    NonFinite { line: u64, gene_id: String },
    #[error("duplicate record for gene {gene_id}, platform {platform}, replicate {replicate}")]
    DuplicateRecord {
        gene_id: String,
        platform: Platform,
        replicate: u32,
    },
    #[error("duplicate gene {gene_id}")]
    DuplicateGene { gene_id: String },
    #[error(
        "gene {gene_id}: non-positive linear-scale value {value} in replicate {replicate} \
         (log2 undefined)"
    )]
    NonPositiveLinear {
        gene_id: String,
        replicate: u32,
        value: f64,
    },
    #[error(
        "{count} gene(s) violate the nested platform coverage A ⊂ B ⊂ C: {genes:?}"
    )]
    NestingViolation { count: usize, genes: Vec<String> },
    #[error("line {line}: set token `{token}` does not match the populated columns")]
    SetMismatch { line: u64, token: String },
    #[error("invalid expression range: lo = {lo} must be strictly below hi = {hi}")]
    InvalidRange { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq)]
struct GeneRow<T> {
    gene_id: String,
    x: Option<T>,
    y: Option<T>,
    z: Option<T>,
}

impl<T: Real> GeneRow<T> {
    fn set(&self) -> GeneSet {
        if self.x.is_some() {
            GeneSet::A
        } else if self.y.is_some() {
            GeneSet::BMinusA
        } else {
            GeneSet::CMinusB
        }
    }
}

/// Per-gene log2 measurements with nested-set membership, in stable input
/// order. `x` is present iff the gene is in A, `y` iff it is in B, `z` always.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementTable<T> {
    rows: Vec<GeneRow<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> MeasurementTable<T> {
    /// Build a table from per-gene optional measurements, validating the
    /// nesting invariant. Row order is preserved.
    pub fn from_rows<I, S>(rows: I) -> Result<Self, IngestError>
    where
        I: IntoIterator<Item = (S, Option<T>, Option<T>, Option<T>)>,
        S: Into<String>,
    {
        let mut out = Vec::new();
        let mut index = HashMap::new();
        let mut offenders = Vec::new();
        for (gene_id, x, y, z) in rows {
            let gene_id = gene_id.into();
            let nested = match (x.is_some(), y.is_some(), z.is_some()) {
                (true, true, true) | (false, true, true) | (false, false, true) => true,
                _ => false,
            };
            if !nested {
                offenders.push(gene_id.clone());
            }
            if index.insert(gene_id.clone(), out.len()).is_some() {
                return Err(IngestError::DuplicateGene { gene_id });
            }
            out.push(GeneRow { gene_id, x, y, z });
        }
        if !offenders.is_empty() {
            return Err(IngestError::NestingViolation {
                count: offenders.len(),
                genes: offenders,
            });
        }
        Ok(MeasurementTable { rows: out, index })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Cardinalities (n, m, l) of the nested sets A ⊆ B ⊆ C.
    pub fn set_sizes(&self) -> (usize, usize, usize) {
        let mut n = 0;
        let mut m = 0;
        let l = self.rows.len();
        for row in &self.rows {
            match row.set() {
                GeneSet::A => {
                    n += 1;
                    m += 1;
                }
                GeneSet::BMinusA => m += 1,
                GeneSet::CMinusB => {}
            }
        }
        (n, m, l)
    }

    pub fn genes(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.gene_id.as_str())
    }

    /// All rows as `(gene_id, x, y, z)` in table order.
    pub fn rows(&self) -> impl Iterator<Item = (&str, Option<T>, Option<T>, Option<T>)> {
        self.rows.iter().map(|r| (r.gene_id.as_str(), r.x, r.y, r.z))
    }

    /// Genes in A as `(gene_id, x, y, z)` in table order.
    pub fn iter_a(&self) -> impl Iterator<Item = (&str, T, T, T)> {
        self.rows.iter().filter_map(|r| match (r.x, r.y, r.z) {
            (Some(x), Some(y), Some(z)) => Some((r.gene_id.as_str(), x, y, z)),
            _ => None,
        })
    }

    pub fn get(&self, gene_id: &str) -> Option<(Option<T>, Option<T>, Option<T>)> {
        self.index
            .get(gene_id)
            .map(|&i| (self.rows[i].x, self.rows[i].y, self.rows[i].z))
    }

    pub fn set_of(&self, gene_id: &str) -> Option<GeneSet> {
        self.index.get(gene_id).map(|&i| self.rows[i].set())
    }
}

fn sniff_delimiter(text: &str) -> u8 {
    match text.lines().next() {
        Some(header) if header.contains('\t') => b'\t',
        _ => b',',
    }
}

fn read_to_string<R: Read>(mut reader: R) -> Result<String, IngestError> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    String::from_utf8(buf).map_err(|_| IngestError::MalformedRow {
        line: 1,
        message: "input is not valid UTF-8".into(),
    })
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .delimiter(sniff_delimiter(text))
        .flexible(true)
        .has_headers(true)
        .from_reader(text.as_bytes())
}

const LONG_HEADER: [&str; 4] = ["gene_id", "platform", "replicate", "value"];
const CANONICAL_HEADER: [&str; 5] = ["gene_id", "set", "x", "y", "z"];

fn header_matches(record: &csv::StringRecord, expected: &[&str]) -> bool {
    record.len() == expected.len()
        && record
            .iter()
            .zip(expected)
            .all(|(got, want)| got.trim() == *want)
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Parse the long format into raw records, preserving row order.
pub fn parse_table<T: Real, R: Read>(reader: R) -> Result<Vec<RawRecord<T>>, IngestError> {
    let text = read_to_string(reader)?;
    let mut rdr = csv_reader(&text);
    let header = rdr
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if !header_matches(&header, &LONG_HEADER) {
        return Err(IngestError::Header {
            found: header.iter().collect::<Vec<_>>().join(","),
            expected: LONG_HEADER.join(","),
        });
    }

    let mut records = Vec::new();
    let mut seen: HashSet<(String, Platform, u32)> = HashSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e
                .position()
                .map(|p| p.line())
                .unwrap_or(0);
            IngestError::MalformedRow {
                line,
                message: e.to_string(),
            }
        })?;
        let line = record_line(&row);
        if row.len() != 4 {
            return Err(IngestError::MalformedRow {
                line,
                message: format!("expected 4 fields, found {}", row.len()),
            });
        }
        let gene_id = row[0].trim().to_string();
        if gene_id.is_empty() {
            return Err(IngestError::MalformedRow {
                line,
                message: "empty gene_id".into(),
            });
        }
        let platform_token = row[1].trim();
        let platform =
            Platform::from_token(platform_token).ok_or_else(|| IngestError::UnknownPlatform {
                line,
                token: platform_token.to_string(),
            })?;
        let replicate: u32 = row[2].trim().parse().map_err(|_| IngestError::MalformedRow {
            line,
            message: format!("replicate `{}` is not a non-negative integer", &row[2]),
        })?;
        let value: f64 = row[3].trim().parse().map_err(|_| IngestError::MalformedRow {
            line,
            message: format!("value `{}` is not a number", &row[3]),
        })?;
        if !value.is_finite() {
            return Err(IngestError::NonFinite { line, gene_id });
        }
        if !seen.insert((gene_id.clone(), platform, replicate)) {
            return Err(IngestError::DuplicateRecord {
                gene_id,
                platform,
                replicate,
            });
        }
        records.push(RawRecord {
            gene_id,
            platform,
            replicate,
            value: real(value),
        });
    }
    Ok(records)
}

/// Average technical replicates into one value per (gene, platform).
///
/// Linear-scale input is log2-transformed first and averaged afterwards;
/// log2 input is averaged directly. Replicates are summed in replicate-index
/// order so the result does not depend on input row order.
pub fn collapse_replicates<T: Real>(
    records: &[RawRecord<T>],
    scale: Scale,
) -> Result<IndexMap<(String, Platform), T>, IngestError> {
    let mut groups: IndexMap<(String, Platform), Vec<(u32, T)>> = IndexMap::new();
    for rec in records {
        let value = match scale {
            Scale::Log2 => rec.value,
            Scale::Linear => {
                if rec.value <= T::zero() {
                    return Err(IngestError::NonPositiveLinear {
                        gene_id: rec.gene_id.clone(),
                        replicate: rec.replicate,
                        value: to_f64(rec.value),
                    });
                }
                rec.value.log2()
            }
        };
        let entry = groups
            .entry((rec.gene_id.clone(), rec.platform))
            .or_default();
        if entry.iter().any(|&(r, _)| r == rec.replicate) {
            return Err(IngestError::DuplicateRecord {
                gene_id: rec.gene_id.clone(),
                platform: rec.platform,
                replicate: rec.replicate,
            });
        }
        entry.push((rec.replicate, value));
    }

    let mut out = IndexMap::with_capacity(groups.len());
    for ((gene_id, platform), mut values) in groups {
        values.sort_by_key(|&(r, _)| r);
        let count = real::<T>(values.len() as f64);
        let sum: T = values.into_iter().map(|(_, v)| v).sum();
        out.insert((gene_id, platform), sum / count);
    }
    Ok(out)
}

/// Derive nested-set membership from platform coverage and build the table.
pub fn build_table<T: Real>(
    collapsed: &IndexMap<(String, Platform), T>,
) -> Result<MeasurementTable<T>, IngestError> {
    let mut genes: IndexMap<String, (Option<T>, Option<T>, Option<T>)> = IndexMap::new();
    for ((gene_id, platform), &value) in collapsed {
        let slot = genes.entry(gene_id.clone()).or_default();
        match platform {
            Platform::Pcr => slot.0 = Some(value),
            Platform::Microarray => slot.1 = Some(value),
            Platform::RnaSeq => slot.2 = Some(value),
        }
    }
    MeasurementTable::from_rows(genes.into_iter().map(|(g, (x, y, z))| (g, x, y, z)))
}

/// Demote A-genes whose qRT-PCR value falls outside `[lo, hi]`: the x value
/// is dropped (the gene leaves A and keeps its microarray/RNA-Seq pathway),
/// genes in B−A and C−B are untouched.
pub fn filter_expression_range<T: Real>(
    table: &MeasurementTable<T>,
    lo: T,
    hi: T,
) -> Result<MeasurementTable<T>, IngestError> {
    if !(lo < hi) {
        return Err(IngestError::InvalidRange {
            lo: to_f64(lo),
            hi: to_f64(hi),
        });
    }
    let rows = table.rows.iter().map(|row| {
        let x = row
            .x
            .filter(|&v| v >= lo && v <= hi);
        (row.gene_id.clone(), x, row.y, row.z)
    });
    MeasurementTable::from_rows(rows)
}

/// Write the canonical `gene_id,set,x,y,z` form. Values use the shortest
/// round-trippable decimal representation, absent cells are empty.
pub fn write_canonical<T: Real, W: Write>(
    table: &MeasurementTable<T>,
    mut writer: W,
) -> std::io::Result<()> {
    writeln!(writer, "gene_id,set,x,y,z")?;
    let fmt = |v: Option<T>| v.map(|v| v.to_string()).unwrap_or_default();
    for row in &table.rows {
        writeln!(
            writer,
            "{},{},{},{},{}",
            row.gene_id,
            row.set().token(),
            fmt(row.x),
            fmt(row.y),
            fmt(row.z)
        )?;
    }
    Ok(())
}

/// Parse the canonical per-gene format.
pub fn read_canonical<T: Real, R: Read>(reader: R) -> Result<MeasurementTable<T>, IngestError> {
    let text = read_to_string(reader)?;
    parse_canonical_text(&text)
}

fn parse_canonical_text<T: Real>(text: &str) -> Result<MeasurementTable<T>, IngestError> {
    let mut rdr = csv_reader(text);
    let header = rdr
        .headers()
        .map_err(|e| IngestError::MalformedRow {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    if !header_matches(&header, &CANONICAL_HEADER) {
        return Err(IngestError::Header {
            found: header.iter().collect::<Vec<_>>().join(","),
            expected: CANONICAL_HEADER.join(","),
        });
    }
    let mut rows: Vec<(String, Option<T>, Option<T>, Option<T>)> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| IngestError::MalformedRow {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record_line(&row);
        if row.len() != 5 {
            return Err(IngestError::MalformedRow {
                line,
                message: format!("expected 5 fields, found {}", row.len()),
            });
        }
        let gene_id = row[0].trim().to_string();
        if gene_id.is_empty() {
            return Err(IngestError::MalformedRow {
                line,
                message: "empty gene_id".into(),
            });
        }
        let set_token = row[1].trim().to_string();
        let set = GeneSet::from_token(&set_token).ok_or_else(|| IngestError::SetMismatch {
            line,
            token: set_token.clone(),
        })?;
        let cell = |i: usize| -> Result<Option<T>, IngestError> {
            let raw = row[i].trim();
            if raw.is_empty() {
                return Ok(None);
            }
            let value: f64 = raw.parse().map_err(|_| IngestError::MalformedRow {
                line,
                message: format!("value `{raw}` is not a number"),
            })?;
            if !value.is_finite() {
                return Err(IngestError::NonFinite {
                    line,
                    gene_id: gene_id.clone(),
                });
            }
            Ok(Some(real(value)))
        };
        let (x, y, z) = (cell(2)?, cell(3)?, cell(4)?);
        let expected = match (x.is_some(), y.is_some(), z.is_some()) {
            (true, true, true) => Some(GeneSet::A),
            (false, true, true) => Some(GeneSet::BMinusA),
            (false, false, true) => Some(GeneSet::CMinusB),
            _ => None,
        };
        if expected != Some(set) {
            return Err(IngestError::SetMismatch {
                line,
                token: set_token,
            });
        }
        rows.push((gene_id, x, y, z));
    }
    MeasurementTable::from_rows(rows)
}

/// Load either supported format, dispatching on the header line. `scale`
/// applies to the long format only; canonical tables are always log2.
pub fn load_table<T: Real, R: Read>(
    reader: R,
    scale: Scale,
) -> Result<MeasurementTable<T>, IngestError> {
    let text = read_to_string(reader)?;
    let delimiter = sniff_delimiter(&text) as char;
    let header_fields: Vec<&str> = text
        .lines()
        .next()
        .unwrap_or("")
        .split(delimiter)
        .map(str::trim)
        .collect();
    if header_fields == CANONICAL_HEADER {
        parse_canonical_text(&text)
    } else if header_fields == LONG_HEADER {
        let records = parse_table(text.as_bytes())?;
        let collapsed = collapse_replicates(&records, scale)?;
        build_table(&collapsed)
    } else {
        Err(IngestError::Header {
            found: header_fields.join(","),
            expected: format!("{} or {}", LONG_HEADER.join(","), CANONICAL_HEADER.join(",")),
        })
    }
}
