use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{RawTable, RawTrial, UpliftDataset};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    /// Passed through unchanged.
    Numeric,
    /// Min-max scaled to [0, 1] using the range seen at fit time.
    ScaledNumeric,
    /// One indicator column per category, categories in lexical order.
    Categorical,
}

/// Encoding rule for one raw column. Raw columns without a rule are dropped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRule {
    pub column: String,
    pub kind: ColumnKind,
}

impl ColumnRule {
    pub fn new(column: &str, kind: ColumnKind) -> Self {
        Self {
            column: column.to_string(),
            kind,
        }
    }
}

/// Default Hillstrom encoding, 22 output columns: `recency` one-hot (12
/// months), `history` numeric, `mens`/`womens`/`newbie` binary, `zip_code`
/// and `channel` one-hot (3 levels each). `history_segment` is a binning of
/// `history` and is dropped.
pub fn hillstrom_rules(scale: bool) -> Vec<ColumnRule> {
    let num = if scale {
        ColumnKind::ScaledNumeric
    } else {
        ColumnKind::Numeric
    };
    vec![
        ColumnRule::new("recency", ColumnKind::Categorical),
        ColumnRule::new("history", num),
        ColumnRule::new("mens", ColumnKind::Numeric),
        ColumnRule::new("womens", ColumnKind::Numeric),
        ColumnRule::new("zip_code", ColumnKind::Categorical),
        ColumnRule::new("newbie", ColumnKind::Numeric),
        ColumnRule::new("channel", ColumnKind::Categorical),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedColumn {
    Numeric { name: String },
    ScaledNumeric { name: String, min: f64, max: f64 },
    OneHot { name: String, categories: Vec<String> },
}

impl FittedColumn {
    fn name(&self) -> &str {
        match self {
            FittedColumn::Numeric { name }
            | FittedColumn::ScaledNumeric { name, .. }
            | FittedColumn::OneHot { name, .. } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            FittedColumn::OneHot { categories, .. } => categories.len(),
            _ => 1,
        }
    }
}

/// Fitted encoding: applying it to the table it was fitted on yields exactly
/// [`EncodingSchema::dim`] columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingSchema {
    pub columns: Vec<FittedColumn>,
}

fn parse_number(value: &str, column: &str, row: usize) -> Result<f64> {
    let v: f64 = value.parse().map_err(|_| Error::Parse {
        row,
        message: format!("column `{column}`: not a number: `{value}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            message: format!("column `{column}`: non-finite value"),
        });
    }
    Ok(v)
}

impl EncodingSchema {
    pub fn fit(table: &RawTable, rules: &[ColumnRule]) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::invalid("no encoding rules given"));
        }
        let mut columns = Vec::with_capacity(rules.len());
        for rule in rules {
            let j = table.column_index(&rule.column)?;
            let fitted = match rule.kind {
                ColumnKind::Numeric => {
                    for (r, row) in table.rows.iter().enumerate() {
                        parse_number(&row[j], &rule.column, r + 1)?;
                    }
                    FittedColumn::Numeric {
                        name: rule.column.clone(),
                    }
                }
                ColumnKind::ScaledNumeric => {
                    let mut min = f64::INFINITY;
                    let mut max = f64::NEG_INFINITY;
                    for (r, row) in table.rows.iter().enumerate() {
                        let v = parse_number(&row[j], &rule.column, r + 1)?;
                        min = min.min(v);
                        max = max.max(v);
                    }
                    FittedColumn::ScaledNumeric {
                        name: rule.column.clone(),
                        min,
                        max,
                    }
                }
                ColumnKind::Categorical => {
                    let cats: BTreeSet<&str> = table.rows.iter().map(|row| row[j].as_str()).collect();
                    if cats.is_empty() {
                        return Err(Error::invalid(format!(
                            "categorical column `{}` has no values",
                            rule.column
                        )));
                    }
                    FittedColumn::OneHot {
                        name: rule.column.clone(),
                        categories: cats.into_iter().map(str::to_string).collect(),
                    }
                }
            };
            columns.push(fitted);
        }
        Ok(Self { columns })
    }

    pub fn dim(&self) -> usize {
        self.columns.iter().map(FittedColumn::width).sum()
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        for col in &self.columns {
            match col {
                FittedColumn::OneHot { name, categories } => {
                    names.extend(categories.iter().map(|c| format!("{name}={c}")))
                }
                other => names.push(other.name().to_string()),
            }
        }
        names
    }

    /// Row-major encoded matrix.
    pub fn apply(&self, table: &RawTable) -> Result<Vec<f64>> {
        let idx: Vec<usize> = self
            .columns
            .iter()
            .map(|c| table.column_index(c.name()))
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(table.len() * self.dim());
        for (r, row) in table.rows.iter().enumerate() {
            for (col, &j) in self.columns.iter().zip(&idx) {
                let value = row[j].as_str();
                match col {
                    FittedColumn::Numeric { name } => out.push(parse_number(value, name, r + 1)?),
                    FittedColumn::ScaledNumeric { name, min, max } => {
                        let v = parse_number(value, name, r + 1)?;
                        let span = max - min;
                        out.push(if span > 0.0 { (v - min) / span } else { 0.0 });
                    }
                    FittedColumn::OneHot { name, categories } => {
                        let hit = categories.binary_search_by(|c| c.as_str().cmp(value)).map_err(|_| {
                            Error::UnseenCategory {
                                column: name.clone(),
                                value: value.to_string(),
                            }
                        })?;
                        out.extend((0..categories.len()).map(|k| if k == hit { 1.0 } else { 0.0 }));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn encode(&self, raw: &RawTrial) -> Result<UpliftDataset> {
        let features = self.apply(&raw.table)?;
        UpliftDataset::new(
            features,
            self.dim(),
            raw.treatment.clone(),
            raw.outcome.clone(),
            self.feature_names(),
        )
    }
}

/// Fits an encoding on `raw` and applies it.
pub fn fit_encode(raw: &RawTrial, rules: &[ColumnRule]) -> Result<(EncodingSchema, UpliftDataset)> {
    let schema = EncodingSchema::fit(&raw.table, rules)?;
    let ds = schema.encode(raw)?;
    Ok((schema, ds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::raw::{parse_hillstrom, parse_raw_trial};

    fn hillstrom_like() -> RawTrial {
        // every recency month, zip code and channel level present
        let zips = ["Rural", "Surburban", "Urban"];
        let channels = ["Multichannel", "Phone", "Web"];
        let mut text = String::from(
            "recency,history_segment,history,mens,womens,zip_code,newbie,channel,segment,visit,conversion,spend\n",
        );
        for m in 1..=12 {
            text.push_str(&format!(
                "{m},1) $0 - $100,{}.5,1,0,{},{},{},{},{},0,0\n",
                m * 10,
                zips[m % 3],
                m % 2,
                channels[(m / 3) % 3],
                if m % 2 == 0 { "Womens E-Mail" } else { "No E-Mail" },
                m % 2
            ));
        }
        parse_hillstrom(&text, "Womens E-Mail", "visit").unwrap()
    }

    #[test]
    fn hillstrom_rules_give_22_columns() {
        let raw = hillstrom_like();
        let (schema, ds) = fit_encode(&raw, &hillstrom_rules(false)).unwrap();
        assert_eq!(schema.dim(), 22);
        assert_eq!(ds.dim(), 22);
        // 22 weights + intercept for a single linear uplift model
        assert_eq!(ds.dim() + 1, 23);
        assert_eq!(ds.feature_names()[0], "recency=1");
        assert_eq!(ds.feature_names()[1], "recency=10");
    }

    #[test]
    fn single_numeric_column_is_identity() {
        let raw = parse_raw_trial("x,t,y\n1.5,1,0\n-2,0,1\n", "t", "y").unwrap();
        let (schema, ds) = fit_encode(&raw, &[ColumnRule::new("x", ColumnKind::Numeric)]).unwrap();
        assert_eq!(schema.dim(), 1);
        assert_eq!(ds.features(), &[1.5, -2.0]);
    }

    #[test]
    fn three_level_one_hot_sums_to_one() {
        let raw = parse_raw_trial("c,t,y\nb,1,0\na,0,1\nc,1,1\na,0,0\n", "t", "y").unwrap();
        let (schema, ds) = fit_encode(&raw, &[ColumnRule::new("c", ColumnKind::Categorical)]).unwrap();
        assert_eq!(schema.dim(), 3);
        assert_eq!(schema.feature_names(), vec!["c=a", "c=b", "c=c"]);
        let expected = [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]];
        for (i, e) in expected.iter().enumerate() {
            assert_eq!(ds.row(i), e);
            assert_eq!(ds.row(i).iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn non_numeric_and_unseen_values_are_errors() {
        let raw = parse_raw_trial("x,t,y\n1,1,0\nabc,0,1\n", "t", "y").unwrap();
        match fit_encode(&raw, &[ColumnRule::new("x", ColumnKind::Numeric)]) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
        let train = parse_raw_trial("c,t,y\na,1,0\nb,0,1\n", "t", "y").unwrap();
        let schema = EncodingSchema::fit(&train.table, &[ColumnRule::new("c", ColumnKind::Categorical)]).unwrap();
        let other = parse_raw_trial("c,t,y\nz,1,0\n", "t", "y").unwrap();
        assert!(matches!(schema.apply(&other.table), Err(Error::UnseenCategory { .. })));
    }

    #[test]
    fn scaled_numeric_maps_to_unit_interval() {
        let raw = parse_raw_trial("x,t,y\n10,1,0\n20,0,1\n15,1,1\n", "t", "y").unwrap();
        let (_, ds) = fit_encode(&raw, &[ColumnRule::new("x", ColumnKind::ScaledNumeric)]).unwrap();
        assert_eq!(ds.features(), &[0.0, 1.0, 0.5]);
    }

    #[test]
    fn encoding_is_deterministic() {
        let raw = hillstrom_like();
        let a = fit_encode(&raw, &hillstrom_rules(true)).unwrap().1;
        let b = fit_encode(&raw, &hillstrom_rules(true)).unwrap().1;
        assert_eq!(
            a.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.features().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
