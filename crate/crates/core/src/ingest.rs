//! Death-registry ingestion.
//!
//! Raw registry rows are mapped through an [`IngestSchema`] into
//! [`DeathRecord`]s. Rows that cannot be interpreted are never dropped
//! silently: each one lands in the reject log with its row number and a
//! reason, so accepted + rejected always equals the rows read.
//!
//! Deaths are attributed to their occurrence year, whatever year they were
//! registered in.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calendar::{week_of, WeekIndex};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
    Unknown,
}

impl Sex {
    pub fn as_str(self) -> &'static str {
        match self {
            Sex::Male => "male",
            Sex::Female => "female",
            Sex::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeathRecord {
    pub occurrence_date: NaiveDate,
    pub registration_year: i32,
    pub sex: Sex,
    pub age_years: Option<u32>,
    pub cause_code: String,
}

impl DeathRecord {
    pub fn occurrence_year(&self) -> i32 {
        self.occurrence_date.year()
    }

    pub fn week(&self) -> WeekIndex {
        week_of(self.occurrence_date)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CauseClass {
    Illness,
    NonIllness,
}

impl CauseClass {
    pub fn as_str(self) -> &'static str {
        match self {
            CauseClass::Illness => "illness",
            CauseClass::NonIllness => "non_illness",
        }
    }
}

/// ICD-10 external-cause chapter (accidents, violence).
pub const DEFAULT_NON_ILLNESS_PREFIXES: [&str; 4] = ["V", "W", "X", "Y"];

pub fn default_non_illness_prefixes() -> Vec<String> {
    DEFAULT_NON_ILLNESS_PREFIXES
        .iter()
        .map(|s| s.to_string())
        .collect()
}

/// Classifies a cause code by prefix. Matching ignores ASCII case and
/// surrounding whitespace.
pub fn classify_cause<S: AsRef<str>>(
    cause_code: &str,
    non_illness_prefixes: &[S],
) -> Result<CauseClass, RejectReason> {
    let code = cause_code.trim();
    if code.is_empty() {
        return Err(RejectReason::EmptyCause);
    }
    let hit = non_illness_prefixes.iter().any(|p| {
        let p = p.as_ref().trim();
        !p.is_empty()
            && code.len() >= p.len()
            && code.as_bytes()[..p.len()].eq_ignore_ascii_case(p.as_bytes())
    });
    Ok(if hit {
        CauseClass::NonIllness
    } else {
        CauseClass::Illness
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    MalformedRow(String),
    MissingField(String),
    InvalidNumber { field: String, value: String },
    InvalidDate,
    RegisteredBeforeOccurrence,
    InvalidAge(String),
    EmptyCause,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::MalformedRow(m) => write!(f, "malformed row: {m}"),
            RejectReason::MissingField(c) => write!(f, "missing field {c}"),
            RejectReason::InvalidNumber { field, value } => {
                write!(f, "invalid number in {field}: {value:?}")
            }
            RejectReason::InvalidDate => f.write_str("invalid date"),
            RejectReason::RegisteredBeforeOccurrence => {
                f.write_str("registration year precedes occurrence year")
            }
            RejectReason::InvalidAge(v) => write!(f, "invalid age {v:?}"),
            RejectReason::EmptyCause => f.write_str("empty cause code"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub source: String,
    /// 1-based data row number (header excluded).
    pub row: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    #[default]
    #[serde(alias = "utf8")]
    Utf8,
    #[serde(alias = "latin1", alias = "iso-8859-1")]
    Latin1,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub year: String,
    pub month: String,
    pub day: String,
    pub registration_year: String,
    pub sex: String,
    pub age: String,
    pub cause: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            year: "occ_year".into(),
            month: "occ_month".into(),
            day: "occ_day".into(),
            registration_year: "reg_year".into(),
            sex: "sex".into(),
            age: "age".into(),
            cause: "cause".into(),
        }
    }
}

/// Column mapping and value coding of a raw registry file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSchema {
    pub columns: ColumnMap,
    pub delimiter: char,
    pub encoding: Encoding,
    pub male_codes: Vec<String>,
    pub female_codes: Vec<String>,
    /// Age values meaning "unknown" (compared after trimming).
    pub age_unknown: Vec<String>,
    pub non_illness_prefixes: Vec<String>,
}

impl Default for IngestSchema {
    fn default() -> Self {
        IngestSchema {
            columns: ColumnMap::default(),
            delimiter: ',',
            encoding: Encoding::Utf8,
            male_codes: vec!["1".into(), "m".into(), "male".into(), "h".into()],
            female_codes: vec!["2".into(), "f".into(), "female".into()],
            age_unknown: vec!["".into(), "na".into(), "999".into()],
            non_illness_prefixes: default_non_illness_prefixes(),
        }
    }
}

impl IngestSchema {
    fn sex_of(&self, raw: &str) -> Sex {
        let v = raw.trim();
        if self.male_codes.iter().any(|c| c.eq_ignore_ascii_case(v)) {
            Sex::Male
        } else if self.female_codes.iter().any(|c| c.eq_ignore_ascii_case(v)) {
            Sex::Female
        } else {
            Sex::Unknown
        }
    }

    fn delimiter_byte(&self) -> Result<u8> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(|b| b.is_ascii())
            .ok_or_else(|| Error::Config(format!("delimiter {:?} is not ASCII", self.delimiter)))
    }
}

#[derive(Debug, Clone, Default)]
pub struct IngestOutcome {
    pub records: Vec<DeathRecord>,
    pub rejects: Vec<Reject>,
    pub rows_read: u64,
}

impl IngestOutcome {
    pub fn accepted(&self) -> u64 {
        self.records.len() as u64
    }

    pub fn rejected(&self) -> u64 {
        self.rejects.len() as u64
    }

    /// Appends another outcome. Order of merging is the only order that
    /// matters for the result.
    pub fn merge(&mut self, other: IngestOutcome) {
        self.records.extend(other.records);
        self.rejects.extend(other.rejects);
        self.rows_read += other.rows_read;
    }
}

fn decode(bytes: Vec<u8>, encoding: Encoding) -> Result<String> {
    match encoding {
        Encoding::Utf8 => String::from_utf8(bytes).map_err(|e| {
            Error::Ingest(std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        }),
        Encoding::Latin1 => Ok(bytes.into_iter().map(char::from).collect()),
    }
}

struct ColumnPositions {
    year: usize,
    month: usize,
    day: usize,
    registration_year: usize,
    sex: usize,
    age: usize,
    cause: usize,
}

impl ColumnPositions {
    fn resolve(header: &csv::StringRecord, map: &ColumnMap) -> Result<Self> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h.trim().trim_start_matches('\u{feff}') == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        Ok(ColumnPositions {
            year: find(&map.year)?,
            month: find(&map.month)?,
            day: find(&map.day)?,
            registration_year: find(&map.registration_year)?,
            sex: find(&map.sex)?,
            age: find(&map.age)?,
            cause: find(&map.cause)?,
        })
    }
}

fn parse_int<T: FromStr>(row: &csv::StringRecord, idx: usize, field: &str) -> Result<T, RejectReason> {
    let raw = row
        .get(idx)
        .ok_or_else(|| RejectReason::MissingField(field.to_string()))?;
    raw.trim()
        .parse()
        .map_err(|_| RejectReason::InvalidNumber {
            field: field.to_string(),
            value: raw.to_string(),
        })
}

fn parse_row(
    row: &csv::StringRecord,
    pos: &ColumnPositions,
    schema: &IngestSchema,
) -> Result<DeathRecord, RejectReason> {
    let cols = &schema.columns;
    let year: i32 = parse_int(row, pos.year, &cols.year)?;
    let month: u32 = parse_int(row, pos.month, &cols.month)?;
    let day: u32 = parse_int(row, pos.day, &cols.day)?;
    let occurrence_date = NaiveDate::from_ymd_opt(year, month, day).ok_or(RejectReason::InvalidDate)?;
    let registration_year: i32 = parse_int(row, pos.registration_year, &cols.registration_year)?;
    if registration_year < year {
        return Err(RejectReason::RegisteredBeforeOccurrence);
    }

    let sex = schema.sex_of(
        row.get(pos.sex)
            .ok_or_else(|| RejectReason::MissingField(cols.sex.clone()))?,
    );

    let age_raw = row
        .get(pos.age)
        .ok_or_else(|| RejectReason::MissingField(cols.age.clone()))?
        .trim();
    let age_years = if schema
        .age_unknown
        .iter()
        .any(|u| u.trim().eq_ignore_ascii_case(age_raw))
    {
        None
    } else {
        Some(
            age_raw
                .parse::<u32>()
                .map_err(|_| RejectReason::InvalidAge(age_raw.to_string()))?,
        )
    };

    let cause_code = row
        .get(pos.cause)
        .ok_or_else(|| RejectReason::MissingField(cols.cause.clone()))?
        .trim()
        .to_string();
    // Validates the code; the class itself is assigned at canonicalization.
    classify_cause(&cause_code, &schema.non_illness_prefixes)?;

    Ok(DeathRecord {
        occurrence_date,
        registration_year,
        sex,
        age_years,
        cause_code,
    })
}

/// Parses one delimited registry stream.
///
/// Fatal errors are an unreadable stream or a mapped column missing from the
/// header; anything wrong with an individual row goes to the reject log.
pub fn parse_registry<R: Read>(
    mut stream: R,
    schema: &IngestSchema,
    source: &str,
) -> Result<IngestOutcome> {
    let mut bytes = Vec::new();
    stream.read_to_end(&mut bytes).map_err(Error::Ingest)?;
    let text = decode(bytes, schema.encoding)?;

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter_byte()?)
        .flexible(true)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let pos = ColumnPositions::resolve(&header, &schema.columns)?;

    let mut out = IngestOutcome::default();
    for (i, row) in reader.records().enumerate() {
        let row_no = i as u64 + 1;
        out.rows_read += 1;
        let parsed = match row {
            Ok(row) => parse_row(&row, &pos, schema),
            Err(e) => Err(RejectReason::MalformedRow(e.to_string())),
        };
        match parsed {
            Ok(rec) => out.records.push(rec),
            Err(reason) => out.rejects.push(Reject {
                source: source.to_string(),
                row: row_no,
                reason: reason.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Ingests several files concurrently and merges them in argument order.
pub fn ingest_files<P: AsRef<Path> + Sync>(paths: &[P], schema: &IngestSchema) -> Result<IngestOutcome> {
    let parts: Vec<Result<IngestOutcome>> = paths
        .par_iter()
        .map(|p| {
            let p = p.as_ref();
            let file = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
            parse_registry(std::io::BufReader::new(file), schema, &p.display().to_string())
        })
        .collect();
    let mut merged = IngestOutcome::default();
    for part in parts {
        merged.merge(part?);
    }
    Ok(merged)
}

/// Normalized record consumed by aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CanonicalRecord {
    pub occurrence_year: i32,
    pub week: WeekIndex,
    pub sex: Sex,
    pub age_years: Option<u32>,
    pub cause_class: CauseClass,
}

impl CanonicalRecord {
    pub fn from_death<S: AsRef<str>>(rec: &DeathRecord, prefixes: &[S]) -> Result<Self, RejectReason> {
        Ok(CanonicalRecord {
            occurrence_year: rec.occurrence_year(),
            week: rec.week(),
            sex: rec.sex,
            age_years: rec.age_years,
            cause_class: classify_cause(&rec.cause_code, prefixes)?,
        })
    }
}

pub fn canonicalize<S: AsRef<str> + Sync>(records: &[DeathRecord], prefixes: &[S]) -> Vec<CanonicalRecord> {
    records
        .par_iter()
        // parse_registry already rejected empty codes
        .filter_map(|r| CanonicalRecord::from_death(r, prefixes).ok())
        .collect()
}

pub fn write_canonical<W: std::io::Write>(records: &[CanonicalRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::Write)?;
    Ok(())
}

pub fn read_canonical<R: Read>(input: R) -> Result<Vec<CanonicalRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for rec in rdr.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

pub fn read_canonical_file(path: &Path) -> Result<Vec<CanonicalRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_canonical(std::io::BufReader::new(file))
}

pub fn write_rejects<W: std::io::Write>(rejects: &[Reject], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rejects {
        w.serialize(r)?;
    }
    w.flush().map_err(Error::Write)?;
    Ok(())
}

/// Anything that carries an occurrence year and a cause class.
pub trait Classified {
    fn year(&self) -> i32;
    fn class(&self) -> CauseClass;
}

impl Classified for CanonicalRecord {
    fn year(&self) -> i32 {
        self.occurrence_year
    }

    fn class(&self) -> CauseClass {
        self.cause_class
    }
}

/// Percentage of non-illness deaths per occurrence year. Years without
/// deaths do not appear.
pub fn non_illness_share_by_year<T: Classified>(records: &[T]) -> BTreeMap<i32, f64> {
    let mut tally: BTreeMap<i32, (u64, u64)> = BTreeMap::new();
    for r in records {
        let e = tally.entry(r.year()).or_default();
        e.1 += 1;
        if r.class() == CauseClass::NonIllness {
            e.0 += 1;
        }
    }
    tally
        .into_iter()
        .filter(|(_, (_, all))| *all > 0)
        .map(|(y, (non, all))| (y, 100.0 * non as f64 / all as f64))
        .collect()
}
