//! CSV ingestion, run manifests and the JSON writer used for every output document.

use std::fmt;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use sha2::{Digest, Sha256};

use crate::model::Dataset;
use crate::scalar::Scalar;

/// Version of the output document layout.
pub const FORMAT_VERSION: u32 = 1;

/// Response column selector: a header name or a zero-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl ColumnRef {
    /// Digits select by position; anything else by name.
    pub fn parse(s: &str) -> Self {
        s.parse().map(ColumnRef::Index).unwrap_or_else(|_| ColumnRef::Name(s.to_string()))
    }
}

impl fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "#{i}"),
            ColumnRef::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: io::Error },

    #[error("malformed CSV near line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("line {line}, column {column}: cannot parse `{value}` as a number")]
    Parse { line: u64, column: String, value: String },

    #[error("line {line}, column {column}: missing value")]
    MissingCell { line: u64, column: String },

    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged { line: u64, expected: usize, found: usize },

    #[error("response column {0} not found")]
    MissingColumn(String),

    #[error("invalid data: {0}")]
    Invalid(#[from] crate::Error),
}

impl LoadError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            LoadError::Io { .. } => "io",
            LoadError::Csv { .. } => "csv_syntax",
            LoadError::Parse { .. } => "parse",
            LoadError::MissingCell { .. } => "missing_cell",
            LoadError::Ragged { .. } => "dimension",
            LoadError::MissingColumn(_) => "missing_column",
            LoadError::Invalid(_) => "invalid_data",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    pub path: String,
    pub sha256: String,
    pub response: String,
    pub covariates: Vec<String>,
    pub n: usize,
    pub p: usize,
    /// Zero-based covariate positions whose values are all equal.
    pub constant_columns: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Loaded<T: Scalar> {
    pub data: Dataset<T>,
    pub summary: InputSummary,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Read a comma-separated numeric table. Without a header, columns are named `x0`,
/// `x1`, ... by position and the response must be given by index.
pub fn load_csv<T: Scalar>(path: &Path, response: &ColumnRef, has_header: bool) -> Result<Loaded<T>, LoadError> {
    let bytes = std::fs::read(path).map_err(|source| LoadError::Io { path: path.display().to_string(), source })?;
    let mut loaded = parse_csv(&bytes, response, has_header)?;
    loaded.summary.path = path.display().to_string();
    Ok(loaded)
}

/// [`load_csv`] on an in-memory document.
pub fn parse_csv<T: Scalar>(bytes: &[u8], response: &ColumnRef, has_header: bool) -> Result<Loaded<T>, LoadError> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(has_header).flexible(true).trim(csv::Trim::All).from_reader(bytes);
    let csv_error =
        |e: csv::Error| LoadError::Csv { line: e.position().map_or(0, |p| p.line()), message: e.to_string() };

    let mut names: Option<Vec<String>> =
        if has_header { Some(reader.headers().map_err(csv_error)?.iter().map(str::to_string).collect()) } else { None };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let header = names.get_or_insert_with(|| (0..record.len()).map(|j| format!("x{j}")).collect());
        let width = header.len();
        if record.len() != width {
            return Err(LoadError::Ragged { line, expected: width, found: record.len() });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                if cell.is_empty() {
                    return Err(LoadError::MissingCell { line, column: header[j].clone() });
                }
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(LoadError::Parse { line, column: header[j].clone(), value: cell.to_string() }),
                }
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    let names = names.unwrap_or_default();

    let target = match response {
        ColumnRef::Index(i) if *i < names.len() => *i,
        ColumnRef::Name(s) => {
            names.iter().position(|n| n == s).ok_or_else(|| LoadError::MissingColumn(response.to_string()))?
        }
        _ => return Err(LoadError::MissingColumn(response.to_string())),
    };
    let convert = |v: f64| T::from_f64(v).expect("finite value converts");
    let y: Vec<T> = rows.iter().map(|r| convert(r[target])).collect();
    let covariate_idx: Vec<usize> = (0..names.len()).filter(|&j| j != target).collect();
    let columns: Vec<Vec<T>> = covariate_idx.iter().map(|&j| rows.iter().map(|r| convert(r[j])).collect()).collect();
    let covariates: Vec<String> = covariate_idx.iter().map(|&j| names[j].clone()).collect();
    let data = Dataset::from_columns(columns, y)?.with_names(covariates.clone())?;
    let summary = InputSummary {
        path: String::new(),
        sha256: sha256_hex(bytes),
        response: names[target].clone(),
        covariates,
        n: data.n(),
        p: data.p(),
        constant_columns: data.constant_columns(),
    };
    Ok(Loaded { data, summary })
}

/// Provenance block embedded in every output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest<C> {
    pub tool: String,
    pub version: String,
    pub format_version: u32,
    pub command: String,
    pub input: Option<InputSummary>,
    /// Every setting that affects the result.
    pub config: C,
}

impl<C> RunManifest<C> {
    pub fn new(command: &str, input: Option<InputSummary>, config: C) -> Self {
        Self {
            tool: "tdvs".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            format_version: FORMAT_VERSION,
            command: command.into(),
            input,
            config,
        }
    }
}

/// Pretty JSON with floats written to 17 significant digits (9 for `f32`), so that
/// documents are byte-stable and round-trip exactly.
pub fn to_json_string<S: Serialize + ?Sized>(value: &S) -> serde_json::Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedDigits::default());
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

/// `printf("%.{digits}g")` semantics, with non-finite values mapped to `null`.
pub fn format_significant(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return "null".into();
    }
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let strip = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if exp < -4 || exp >= digits as i32 {
        format!("{}e{}{:02}", strip(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        strip(&format!("{:.*}", decimals, v))
    }
}

#[derive(Default)]
struct FixedDigits {
    pretty: PrettyFormatter<'static>,
}

impl Formatter for FixedDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_significant(value, 17).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        w.write_all(format_significant(value as f64, 9).as_bytes())
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object_value(w)
    }
}
