use std::path::Path;

use super::parse_flag;
use crate::{Error, Result};

pub const HILLSTROM_CONTROL_ARM: &str = "No E-Mail";

const HILLSTROM_COLUMNS: [&str; 12] = [
    "recency",
    "history_segment",
    "history",
    "mens",
    "womens",
    "zip_code",
    "newbie",
    "channel",
    "segment",
    "visit",
    "conversion",
    "spend",
];

/// Unencoded covariate columns, kept as strings until an encoding is fitted.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Raw covariates plus parsed treatment and outcome flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrial {
    pub table: RawTable,
    pub treatment: Vec<u8>,
    pub outcome: Vec<u8>,
}

fn read_records(text: &str) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut records = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: r + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::NoData);
    }
    Ok((headers, records))
}

fn require_columns(headers: &[String], names: &[&str]) -> Result<()> {
    for name in names {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::MissingColumn((*name).to_string()));
        }
    }
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    crate::io::read_to_string(path)
}

/// Generic randomized-trial CSV: `treatment_column` and `outcome_column` must
/// hold 0/1 flags; every other column is kept as a raw covariate.
pub fn load_raw_trial(path: &Path, treatment_column: &str, outcome_column: &str) -> Result<RawTrial> {
    parse_raw_trial(&read_text(path)?, treatment_column, outcome_column)
}

pub(crate) fn parse_raw_trial(text: &str, treatment_column: &str, outcome_column: &str) -> Result<RawTrial> {
    let (headers, records) = read_records(text)?;
    require_columns(&headers, &[treatment_column, outcome_column])?;
    let t_idx = headers.iter().position(|h| h == treatment_column).unwrap();
    let y_idx = headers.iter().position(|h| h == outcome_column).unwrap();
    let keep: Vec<usize> = (0..headers.len()).filter(|&j| j != t_idx && j != y_idx).collect();
    let mut rows = Vec::with_capacity(records.len());
    let mut treatment = Vec::with_capacity(records.len());
    let mut outcome = Vec::with_capacity(records.len());
    for (r, rec) in records.iter().enumerate() {
        let row = r + 1;
        treatment.push(parse_flag(&rec[t_idx], row, "treatment")?);
        outcome.push(parse_flag(&rec[y_idx], row, "outcome")?);
        rows.push(collect_fields(rec, &keep, &headers, row)?);
    }
    Ok(RawTrial {
        table: RawTable {
            headers: keep.iter().map(|&j| headers[j].clone()).collect(),
            rows,
        },
        treatment,
        outcome,
    })
}

fn collect_fields(rec: &csv::StringRecord, keep: &[usize], headers: &[String], row: usize) -> Result<Vec<String>> {
    keep.iter()
        .map(|&j| {
            let v = rec[j].trim();
            if v.is_empty() {
                Err(Error::Parse {
                    row,
                    message: format!("missing value in column `{}`", headers[j]),
                })
            } else {
                Ok(v.to_string())
            }
        })
        .collect()
}

/// Loads the Hillstrom e-mail campaign file, keeping `treatment_arm_kept`
/// (treated) against "No E-Mail" (control) and dropping the other arm.
pub fn load_hillstrom(path: &Path, treatment_arm_kept: &str, outcome_column: &str) -> Result<RawTrial> {
    parse_hillstrom(&read_text(path)?, treatment_arm_kept, outcome_column)
}

pub(crate) fn parse_hillstrom(text: &str, treatment_arm_kept: &str, outcome_column: &str) -> Result<RawTrial> {
    if text.trim().is_empty() {
        return Err(Error::NoData);
    }
    let (headers, records) = read_records(text)?;
    require_columns(&headers, &HILLSTROM_COLUMNS)?;
    if !["visit", "conversion"].contains(&outcome_column) {
        return Err(Error::invalid(format!(
            "outcome column must be `visit` or `conversion`, got `{outcome_column}`"
        )));
    }
    let seg = headers.iter().position(|h| h == "segment").unwrap();
    let y_idx = headers.iter().position(|h| h == outcome_column).unwrap();
    let covariates = [
        "recency",
        "history_segment",
        "history",
        "mens",
        "womens",
        "zip_code",
        "newbie",
        "channel",
    ];
    let keep: Vec<usize> = covariates
        .iter()
        .map(|c| headers.iter().position(|h| h == c).unwrap())
        .collect();

    let mut rows = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    for (r, rec) in records.iter().enumerate() {
        let row = r + 1;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, got {}", headers.len(), rec.len()),
            });
        }
        let segment = rec[seg].trim();
        let t = if segment == treatment_arm_kept {
            1
        } else if segment == HILLSTROM_CONTROL_ARM {
            0
        } else {
            continue;
        };
        treatment.push(t);
        outcome.push(parse_flag(&rec[y_idx], row, outcome_column)?);
        rows.push(collect_fields(rec, &keep, &headers, row)?);
    }
    if rows.is_empty() {
        return Err(Error::NoData);
    }
    Ok(RawTrial {
        table: RawTable {
            headers: covariates.iter().map(|s| s.to_string()).collect(),
            rows,
        },
        treatment,
        outcome,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const FIVE_ROWS: &str = "\
recency,history_segment,history,mens,womens,zip_code,newbie,channel,segment,visit,conversion,spend
10,2) $100 - $200,142.44,1,0,Surburban,0,Phone,Womens E-Mail,0,0,0
6,3) $200 - $350,329.08,1,1,Rural,1,Web,No E-Mail,0,0,0
7,2) $100 - $200,180.65,0,1,Surburban,1,Web,Womens E-Mail,1,0,0
9,5) $500 - $750,675.83,1,0,Rural,1,Web,Mens E-Mail,0,0,0
2,1) $0 - $100,45.34,1,0,Urban,0,Web,Mens E-Mail,1,0,0
";

    #[test]
    fn five_row_hillstrom_parse() {
        let raw = parse_hillstrom(FIVE_ROWS, "Womens E-Mail", "visit").unwrap();
        assert_eq!(raw.table.len(), 3);
        assert_eq!(raw.treatment, vec![1, 0, 1]);
        assert_eq!(raw.outcome, vec![0, 0, 1]);
        assert_eq!(raw.table.rows[1][0], "6");
        assert_eq!(raw.table.headers.len(), 8);
    }

    #[test]
    fn empty_file_has_no_data_rows() {
        let err = parse_hillstrom("", "Womens E-Mail", "visit").unwrap_err();
        assert_eq!(err.to_string(), "no data rows");
        let header_only = FIVE_ROWS.lines().next().unwrap().to_string() + "\n";
        assert!(matches!(
            parse_hillstrom(&header_only, "Womens E-Mail", "visit"),
            Err(Error::NoData)
        ));
    }

    #[test]
    fn missing_column_and_bad_row() {
        let no_channel = FIVE_ROWS.replace("channel,", "chan,");
        assert!(matches!(
            parse_hillstrom(&no_channel, "Womens E-Mail", "visit"),
            Err(Error::MissingColumn(c)) if c == "channel"
        ));
        let bad = FIVE_ROWS.replace("Phone,Womens E-Mail,0", "Phone,Womens E-Mail,x");
        match parse_hillstrom(&bad, "Womens E-Mail", "visit") {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn generic_trial_loader() {
        let text = "a,b,t,y\n1,x,1,0\n2,y,0,1\n";
        let raw = parse_raw_trial(text, "t", "y").unwrap();
        assert_eq!(raw.table.headers, vec!["a", "b"]);
        assert_eq!(raw.treatment, vec![1, 0]);
        assert_eq!(raw.outcome, vec![0, 1]);
        assert!(parse_raw_trial("a,t,y\n,1,0\n", "t", "y").is_err());
    }
}
