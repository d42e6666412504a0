//! CSV ingestion with row-numbered validation. Row numbers count data rows
//! from 1, not counting the header.

use std::collections::HashSet;
use std::path::Path;

use csv::StringRecord;

use crate::error::CliError;

const UNIT_COLUMNS: [&str; 5] = ["id", "area", "weight", "response", "text"];
const POP_COLUMNS: [&str; 3] = ["id", "area", "cell"];

#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub id: u64,
    pub area: String,
    pub weight: f64,
    pub response: String,
    pub text: String,
    pub demographics: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopRecord {
    pub id: u64,
    pub area: String,
    pub cell: String,
    pub demographics: Vec<bool>,
    pub truth: Option<String>,
}

pub fn row_error(path: &Path, row: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{}: row {row}: {msg}", path.display()))
}

struct Table {
    header: Vec<String>,
    rows: Vec<StringRecord>,
}

fn read_table(path: &Path) -> Result<Table, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| CliError::Validation(format!("{}: header: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut seen = HashSet::new();
    if let Some(dup) = header.iter().find(|h| !seen.insert(h.as_str())) {
        return Err(CliError::Validation(format!(
            "{}: duplicate column `{dup}`",
            path.display()
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        rows.push(rec.map_err(|e| row_error(path, i + 1, e))?);
    }
    if rows.is_empty() {
        return Err(CliError::Validation(format!("{}: no data rows", path.display())));
    }
    Ok(Table { header, rows })
}

fn column_index(t: &Table, path: &Path, name: &str) -> Result<usize, CliError> {
    t.header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Validation(format!("{}: missing column `{name}`", path.display())))
}

fn parse_id(path: &Path, row: usize, v: &str, seen: &mut HashSet<u64>) -> Result<u64, CliError> {
    let id: u64 = v
        .parse()
        .map_err(|_| row_error(path, row, format!("id `{v}` is not a nonnegative integer")))?;
    if !seen.insert(id) {
        return Err(row_error(path, row, format!("duplicate id {id}")));
    }
    Ok(id)
}

fn parse_indicator(path: &Path, row: usize, column: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(row_error(path, row, format!("{column} = `{v}` is not 0/1"))),
    }
}

fn nonempty<'a>(path: &Path, row: usize, column: &str, v: &'a str) -> Result<&'a str, CliError> {
    if v.is_empty() {
        Err(row_error(path, row, format!("empty {column}")))
    } else {
        Ok(v)
    }
}

/// Reads the sample units. Columns besides the five fixed ones are 0/1
/// demographic indicators, returned in header order.
pub fn read_units(path: &Path) -> Result<(Vec<String>, Vec<UnitRecord>), CliError> {
    let t = read_table(path)?;
    let fixed: Vec<usize> = UNIT_COLUMNS
        .iter()
        .map(|c| column_index(&t, path, c))
        .collect::<Result<_, _>>()?;
    let demo: Vec<(usize, String)> = t
        .header
        .iter()
        .enumerate()
        .filter(|(_, h)| !UNIT_COLUMNS.contains(&h.as_str()))
        .map(|(i, h)| (i, h.clone()))
        .collect();
    let mut seen = HashSet::new();
    let mut units = Vec::with_capacity(t.rows.len());
    for (i, rec) in t.rows.iter().enumerate() {
        let row = i + 1;
        let id = parse_id(path, row, &rec[fixed[0]], &mut seen)?;
        let w = &rec[fixed[2]];
        let weight: f64 = w
            .parse()
            .map_err(|_| row_error(path, row, format!("weight `{w}` is not a number")))?;
        if !(weight > 0.0) || !weight.is_finite() {
            return Err(row_error(
                path,
                row,
                format!("weight must be positive and finite, got {w}"),
            ));
        }
        units.push(UnitRecord {
            id,
            area: nonempty(path, row, "area", &rec[fixed[1]])?.to_string(),
            weight,
            response: nonempty(path, row, "response", &rec[fixed[3]])?.to_string(),
            text: rec[fixed[4]].to_string(),
            demographics: demo
                .iter()
                .map(|(c, name)| parse_indicator(path, row, name, &rec[*c]))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok((demo.into_iter().map(|(_, n)| n).collect(), units))
}

/// Reads a population frame whose demographic columns must be exactly
/// `demographics` (any order). A `truth` column is optional.
pub fn read_population(path: &Path, demographics: &[String]) -> Result<(bool, Vec<PopRecord>), CliError> {
    let t = read_table(path)?;
    let fixed: Vec<usize> = POP_COLUMNS
        .iter()
        .map(|c| column_index(&t, path, c))
        .collect::<Result<_, _>>()?;
    let truth = t.header.iter().position(|h| h == "truth");
    let demo: Vec<usize> = demographics
        .iter()
        .map(|d| column_index(&t, path, d))
        .collect::<Result<_, _>>()?;
    if let Some(extra) = t
        .header
        .iter()
        .find(|h| !POP_COLUMNS.contains(&h.as_str()) && *h != "truth" && !demographics.contains(h))
    {
        return Err(CliError::Validation(format!(
            "{}: column `{extra}` is not a demographic of the fit ({})",
            path.display(),
            demographics.join(", ")
        )));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(t.rows.len());
    for (i, rec) in t.rows.iter().enumerate() {
        let row = i + 1;
        out.push(PopRecord {
            id: parse_id(path, row, &rec[fixed[0]], &mut seen)?,
            area: nonempty(path, row, "area", &rec[fixed[1]])?.to_string(),
            cell: nonempty(path, row, "cell", &rec[fixed[2]])?.to_string(),
            demographics: demo
                .iter()
                .zip(demographics)
                .map(|(&c, name)| parse_indicator(path, row, name, &rec[c]))
                .collect::<Result<_, _>>()?,
            truth: truth.map(|c| rec[c].to_string()),
        });
    }
    Ok((truth.is_some(), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn units_parse_with_quoted_text() {
        let f = file("id,area,weight,response,text,female\n1,A,1.5,1,\"cats, dogs\",1\n2,B,2,0,,0\n");
        let (demo, units) = read_units(f.path()).unwrap();
        assert_eq!(demo, vec!["female"]);
        assert_eq!(units[0].text, "cats, dogs");
        assert_eq!(units[1].demographics, vec![false]);
    }

    #[test]
    fn row_numbers_in_errors() {
        let f = file("id,area,weight,response,text\n1,A,1,1,x\n2,A,1,0,y\n3,A,0,1,z\n");
        let msg = read_units(f.path()).unwrap_err().to_string();
        assert!(msg.contains("row 3"), "{msg}");
        let f = file("id,area,weight,response,text\n1,A,1,1,x\n1,A,1,0,y\n");
        assert!(read_units(f.path())
            .unwrap_err()
            .to_string()
            .contains("row 2: duplicate id"));
        let f = file("id,area,weight,response,text,g\n1,A,1,1,x,2\n");
        assert!(read_units(f.path()).unwrap_err().to_string().contains("row 1"));
        let f = file("id,area,weight,text\n1,A,1,x\n");
        assert!(read_units(f.path())
            .unwrap_err()
            .to_string()
            .contains("missing column `response`"));
    }

    #[test]
    fn population_columns_must_match() {
        let demo = vec!["female".to_string()];
        let f = file("id,cell,area,female,truth\n1,c,A,1,0\n");
        let (has_truth, pop) = read_population(f.path(), &demo).unwrap();
        assert!(has_truth);
        assert_eq!(pop[0].cell, "c");
        let f = file("id,area,cell,female,age\n1,A,c,1,0\n");
        assert!(read_population(f.path(), &demo).is_err());
        let f = file("id,area,cell\n1,A,c\n");
        assert!(read_population(f.path(), &demo).is_err());
    }
}
