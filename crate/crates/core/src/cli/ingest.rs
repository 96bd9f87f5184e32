//! Reading score files and transforming t-statistics to z-scores.

use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dist::{normal_quantile, normal_sf, student_t_lower};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InputFormat {
    /// One number per line; blank lines and `#` comments skipped.
    Plain,
    /// Comma-separated, optional header row.
    Csv,
}

impl InputFormat {
    /// `.csv` files are read as CSV, everything else as plain.
    pub fn infer(path: Option<&Path>) -> Self {
        match path.and_then(|p| p.extension()).and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Plain,
        }
    }
}

/// A CSV column chosen by header name or by 1-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnSelector {
    Name(String),
    Index(usize),
}

impl FromStr for ColumnSelector {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.parse::<usize>() {
            Ok(0) => Err("column positions start at 1".into()),
            Ok(i) => Ok(ColumnSelector::Index(i)),
            Err(_) if s.trim().is_empty() => Err("empty column name".into()),
            Err(_) => Ok(ColumnSelector::Name(s.to_string())),
        }
    }
}

impl fmt::Display for ColumnSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ColumnSelector::Name(n) => f.write_str(n),
            ColumnSelector::Index(i) => write!(f, "{i}"),
        }
    }
}

/// Where scores come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InputSource {
    Path(PathBuf),
    Stdin,
}

impl InputSource {
    /// `None` and `-` mean standard input.
    pub fn from_arg(arg: Option<&Path>) -> Self {
        match arg {
            Some(p) if p.as_os_str() != "-" => InputSource::Path(p.to_path_buf()),
            _ => InputSource::Stdin,
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            InputSource::Path(p) => Some(p),
            InputSource::Stdin => None,
        }
    }
}

impl fmt::Display for InputSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputSource::Path(p) => write!(f, "{}", p.display()),
            InputSource::Stdin => f.write_str("<stdin>"),
        }
    }
}

/// Observed scores with their origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreColumn {
    pub values: Vec<f64>,
    pub source: String,
    pub label: String,
    /// SHA-256 of the raw input bytes, lowercase hex.
    pub digest: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn parse_number(token: &str, line: usize) -> Result<f64> {
    let t = token.trim();
    let normalized;
    let t = if t.contains('\u{2212}') {
        normalized = t.replace('\u{2212}', "-");
        normalized.as_str()
    } else {
        t
    };
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse { line, token: token.trim().to_string() }),
    }
}

fn parse_plain(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        out.push(parse_number(t, i + 1)?);
    }
    Ok(out)
}

fn parse_csv(bytes: &[u8], column: Option<&ColumnSelector>) -> Result<(Vec<f64>, Option<String>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let mut records = rdr.records();
    let mut values = Vec::new();
    let line_of = |r: &csv::StringRecord| r.position().map(|p| p.line() as usize).unwrap_or(0);

    let (idx, label) = match column {
        Some(ColumnSelector::Name(name)) => {
            let header = match records.next() {
                Some(r) => r.map_err(|e| Error::Io(e.to_string()))?,
                None => return Ok((values, None)),
            };
            let idx = header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn(name.clone()))?;
            (idx, Some(name.clone()))
        }
        Some(ColumnSelector::Index(i)) => (i - 1, None),
        None => (0, None),
    };

    let mut label = label;
    let mut first = column.is_none_or(|c| matches!(c, ColumnSelector::Index(_)));
    for rec in records {
        let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
        let line = line_of(&rec);
        let Some(field) = rec.get(idx) else {
            if rec.len() == 1 && rec.get(0) == Some("") {
                continue;
            }
            return Err(Error::MissingColumn(format!("{} (line {line} has {} fields)", idx + 1, rec.len())));
        };
        if first {
            first = false;
            if let Err(e) = parse_number(field, line) {
                // A non-numeric first row is a header.
                if rec.iter().any(|f| parse_number(f, line).is_ok()) && rec.len() > 1 {
                    return Err(e);
                }
                label = Some(field.to_string());
                continue;
            }
        }
        values.push(parse_number(field, line)?);
    }
    Ok((values, label))
}

/// Parse scores from raw bytes. `column` applies to CSV input only.
pub fn parse_scores(
    bytes: &[u8],
    source: &str,
    format: InputFormat,
    column: Option<&ColumnSelector>,
) -> Result<ScoreColumn> {
    let (values, label) = match format {
        InputFormat::Plain => {
            let text = std::str::from_utf8(bytes).map_err(|e| Error::Io(format!("{source}: {e}")))?;
            (parse_plain(text)?, None)
        }
        InputFormat::Csv => parse_csv(bytes, column)?,
    };
    if values.is_empty() {
        return Err(Error::EmptyInput(source.to_string()));
    }
    let label = label.unwrap_or_else(|| match column {
        Some(c) => format!("column {c}"),
        None => "scores".to_string(),
    });
    Ok(ScoreColumn { values, source: source.to_string(), label, digest: sha256_hex(bytes) })
}

/// Read scores from a file or from this process's standard input.
pub fn read_scores(source: &InputSource, format: InputFormat, column: Option<&ColumnSelector>) -> Result<ScoreColumn> {
    let bytes = match source {
        InputSource::Path(p) => std::fs::read(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?,
        InputSource::Stdin => {
            let mut buf = Vec::new();
            std::io::stdin().lock().read_to_end(&mut buf)?;
            buf
        }
    };
    parse_scores(&bytes, &source.to_string(), format, column)
}

/// A z-score obtained from a t-statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZScore {
    pub z: f64,
    /// The t tail probability underflowed and z was clamped.
    pub clamped: bool,
}

/// `z = Φ⁻¹(F_ν(t))`, computed from the smaller tail so that large |t|
/// keeps full precision.
pub fn t_to_z(t: f64, nu: u32) -> Result<ZScore> {
    if nu < 1 {
        return Err(Error::Domain("degrees of freedom must be at least 1".into()));
    }
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("t must be finite, got {t}")));
    }
    if t == 0.0 {
        return Ok(ZScore { z: 0.0, clamped: false });
    }
    let tail = student_t_lower(-t.abs(), nu)?;
    let (tail, clamped) = if tail > 0.0 { (tail, false) } else { (f64::MIN_POSITIVE, true) };
    let z = -normal_quantile(tail)?;
    Ok(ZScore { z: z.copysign(t), clamped })
}

/// Two-sided p-value `2{1 - Φ(|z|)}`, floored at the smallest normal double.
pub fn z_to_p(z: f64) -> f64 {
    (2.0 * normal_sf(z.abs())).clamp(f64::MIN_POSITIVE, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn plain_skips_comments_and_blanks() {
        let s = parse_scores("1.0\n# c\n\u{2212}2.5\n\n  3e-1 \n".as_bytes(), "t", InputFormat::Plain, None).unwrap();
        assert_eq!(s.values, vec![1.0, -2.5, 0.3]);
        let s = parse_scores("1.0\n# c\n−2.5\n".as_bytes(), "t", InputFormat::Plain, None).unwrap();
        assert_eq!(s.values, vec![1.0, -2.5]);
    }

    #[test]
    fn plain_parse_error_names_line() {
        let e = parse_scores(b"1\n2\nabc\n", "t", InputFormat::Plain, None).unwrap_err();
        assert_eq!(e, Error::Parse { line: 3, token: "abc".into() });
        assert!(e.to_string().contains("line 3"));
        assert!(matches!(parse_scores(b"1\nnan\n", "t", InputFormat::Plain, None), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_scores(b"inf\n", "t", InputFormat::Plain, None), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse_scores(b"# only\n\n", "t", InputFormat::Plain, None), Err(Error::EmptyInput(_))));
        assert!(matches!(parse_scores(b"z\n", "t", InputFormat::Csv, Some(&"z".parse().unwrap())), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn csv_named_and_indexed_columns() {
        let data = b"id,z,t\n1,0.5,2\n2,-1.25,3\n";
        let z = parse_scores(data, "t", InputFormat::Csv, Some(&"z".parse().unwrap())).unwrap();
        assert_eq!(z.values, vec![0.5, -1.25]);
        assert_eq!(z.label, "z");
        let t = parse_scores(data, "t", InputFormat::Csv, Some(&ColumnSelector::Index(3))).unwrap();
        assert_eq!(t.values, vec![2.0, 3.0]);
        assert_eq!(t.label, "t");
        let headerless = parse_scores(b"0.1,9\n0.2,8\n", "t", InputFormat::Csv, None).unwrap();
        assert_eq!(headerless.values, vec![0.1, 0.2]);
        assert!(matches!(
            parse_scores(data, "t", InputFormat::Csv, Some(&"w".parse().unwrap())),
            Err(Error::MissingColumn(_))
        ));
        assert!(matches!(
            parse_scores(b"z\n1\nx\n", "t", InputFormat::Csv, Some(&"z".parse().unwrap())),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn column_selector_parsing() {
        assert_eq!("2".parse::<ColumnSelector>().unwrap(), ColumnSelector::Index(2));
        assert_eq!("z".parse::<ColumnSelector>().unwrap(), ColumnSelector::Name("z".into()));
        assert!("0".parse::<ColumnSelector>().is_err());
    }

    #[test]
    fn digest_tracks_bytes() {
        let a = parse_scores(b"1\n2\n", "a", InputFormat::Plain, None).unwrap();
        let b = parse_scores(b"1\n2\n", "b", InputFormat::Plain, None).unwrap();
        let c = parse_scores(b"1\n2.0\n", "a", InputFormat::Plain, None).unwrap();
        assert_eq!(a.digest, b.digest);
        assert_ne!(a.digest, c.digest);
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn t_to_z_values() {
        assert_eq!(t_to_z(0.0, 100).unwrap().z, 0.0);
        assert_abs_diff_eq!(t_to_z(1.984, 100).unwrap().z, 1.960, epsilon = 1e-3);
        for t in [0.3, 1.0, 2.5, 7.0, 15.0] {
            assert_eq!(t_to_z(-t, 100).unwrap().z, -t_to_z(t, 100).unwrap().z);
        }
        let mut prev = f64::NEG_INFINITY;
        for i in -200..=200 {
            let z = t_to_z(i as f64 * 0.1, 5).unwrap();
            assert!(z.z > prev);
            assert!(!z.clamped);
            prev = z.z;
        }
        assert!(t_to_z(1.0, 0).is_err());
        assert!(t_to_z(f64::NAN, 10).is_err());
    }

    #[test]
    fn t_to_z_clamps_extreme_tails() {
        let z = t_to_z(1e200, 100).unwrap();
        assert!(z.clamped);
        assert!(z.z > 37.0 && z.z.is_finite());
        assert_eq!(t_to_z(-1e200, 100).unwrap().z, -z.z);
    }

    #[test]
    fn z_to_p_values() {
        assert_eq!(z_to_p(0.0), 1.0);
        assert_abs_diff_eq!(z_to_p(1.959964), 0.05, epsilon = 1e-7);
        assert_eq!(z_to_p(-1.3), z_to_p(1.3));
        assert!(z_to_p(2.0) < z_to_p(1.0));
        assert!(z_to_p(60.0) > 0.0);
    }
}
