//! CSV ingestion by column role.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use super::config::DataSection;
use super::CliError;
use crate::data::{Covariates, ObservationSet};

/// One sample per group label, in label order; a single "all" group when no
/// group column is configured.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub groups: Vec<(String, ObservationSet)>,
    /// Selected outcomes of every group, in file order.
    pub pooled_outcomes: Vec<f64>,
}

impl Ingested {
    pub fn group(&self, label: &str) -> Option<&ObservationSet> {
        self.groups.iter().find(|(l, _)| l == label).map(|(_, d)| d)
    }

    pub fn labels(&self) -> Vec<String> {
        self.groups.iter().map(|(l, _)| l.clone()).collect()
    }
}

pub const SINGLE_GROUP: &str = "all";

#[derive(Default)]
struct Columns {
    d: Vec<bool>,
    y: Vec<Option<f64>>,
    outcome: Vec<f64>,
    excluded: Vec<f64>,
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "1.0" | "true" | "TRUE" | "True" => Some(true),
        "0" | "0.0" | "false" | "FALSE" | "False" => Some(false),
        _ => None,
    }
}

pub fn ingest(path: &Path, roles: &DataSection) -> Result<Ingested, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    ingest_reader(file, roles)
}

/// Line numbers in errors count the header as line 1.
pub fn ingest_reader<R: Read>(reader: R, roles: &DataSection) -> Result<Ingested, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| CliError::Parse { line: 1, column: String::new(), message: e.to_string() })?.clone();
    let find = |name: &str| -> Result<usize, CliError> {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| CliError::Config(format!("column {name} is not in the CSV header")))
    };
    let yi = find(&roles.outcome)?;
    let di = find(&roles.selection)?;
    let oi: Vec<usize> = roles.covariates.iter().map(|c| find(c)).collect::<Result<_, _>>()?;
    let ei: Vec<usize> = roles.excluded.iter().map(|c| find(c)).collect::<Result<_, _>>()?;
    let gi = roles.group.as_deref().map(find).transpose()?;

    let mut groups: BTreeMap<String, Columns> = BTreeMap::new();
    let mut pooled = Vec::new();
    let mut missing_outcome = Vec::new();
    let mut record = csv::StringRecord::new();
    let mut line = 1usize;
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| CliError::Parse {
            line: e.position().map_or(line + 1, |p| p.line() as usize),
            column: String::new(),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        line += 1;
        let field = |j: usize| record.get(j).unwrap_or("").trim();
        let parse_err = |j: usize, message: String| CliError::Parse { line, column: header[j].to_string(), message };
        let number = |j: usize| -> Result<f64, CliError> {
            let s = field(j);
            if s.is_empty() {
                return Err(parse_err(j, "missing value".into()));
            }
            let v: f64 = s.parse().map_err(|_| parse_err(j, format!("not a number: {s:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(j, format!("not finite: {s:?}")));
            }
            Ok(v)
        };
        let d = parse_flag(field(di)).ok_or_else(|| parse_err(di, format!("selection must be 0/1, got {:?}", field(di))))?;
        let y = if field(yi).is_empty() { None } else { Some(number(yi)?) };
        if d && y.is_none() {
            missing_outcome.push(line);
            continue;
        }
        let label = gi.map_or_else(|| SINGLE_GROUP.to_string(), |g| field(g).to_string());
        let cols = groups.entry(label).or_default();
        for &j in &oi {
            cols.outcome.push(number(j)?);
        }
        for &j in &ei {
            cols.excluded.push(number(j)?);
        }
        if d {
            pooled.push(y.expect("checked"));
        }
        cols.d.push(d);
        cols.y.push(if d { y } else { None });
    }
    if !missing_outcome.is_empty() {
        return Err(CliError::MissingOutcome { lines: missing_outcome });
    }
    if groups.is_empty() {
        return Err(CliError::Config("the CSV has no data rows".into()));
    }

    let groups = groups
        .into_iter()
        .map(|(label, c)| {
            let n = c.d.len();
            let outcome = Covariates::with_rows(roles.covariates.clone(), c.outcome, n)?;
            let excluded = Covariates::with_rows(roles.excluded.clone(), c.excluded, n)?;
            let data = ObservationSet::new(c.d, c.y, &outcome, &excluded)
                .map_err(|e| CliError::Config(format!("group {label}: {e}")))?;
            Ok((label, data))
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    Ok(Ingested { groups, pooled_outcomes: pooled })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles(group: Option<&str>) -> DataSection {
        DataSection {
            input: None,
            outcome: "y".into(),
            selection: "d".into(),
            covariates: vec!["x".into()],
            excluded: vec!["z".into()],
            group: group.map(String::from),
        }
    }

    #[test]
    fn reads_roles_and_groups() {
        let csv = "y,d,x,z,g\n1.5,1,0.1,2,a\n,0,0.2,3,b\n2.5,1,0.3,4,b\n0.5,0,0.4,5,a\n";
        let ing = ingest_reader(csv.as_bytes(), &roles(Some("g"))).unwrap();
        assert_eq!(ing.labels(), vec!["a", "b"]);
        assert_eq!(ing.pooled_outcomes, vec![1.5, 2.5]);
        let a = ing.group("a").unwrap();
        assert_eq!(a.d(), &[true, false]);
        assert_eq!(a.z().names(), &["intercept", "z", "x"]);
    }

    #[test]
    fn selected_row_without_outcome_is_listed() {
        let csv = "y,d,x,z\n1,1,0,0\n,1,0,1\n2,0,1,0\n,1,1,1\n";
        match ingest_reader(csv.as_bytes(), &roles(None)) {
            Err(CliError::MissingOutcome { lines }) => assert_eq!(lines, vec![3, 5]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_number_reports_line_and_column() {
        let csv = "y,d,x,z\n1,1,0,0\n2,0,abc,1\n";
        match ingest_reader(csv.as_bytes(), &roles(None)) {
            Err(CliError::Parse { line, column, .. }) => assert_eq!((line, column.as_str()), (3, "x")),
            other => panic!("{other:?}"),
        }
    }
}
