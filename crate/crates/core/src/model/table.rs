//! Bundle CSV: `#` comment lines, a header `t,T_1_1,T_2_1,...`, one row per grid point.
//! Floats are written in shortest round-trip form, so write/read is exact.

use std::io::{BufRead, Write};

use super::{indices, tri_count, PathBundle, SamplePath, TimeGrid, TriangularConfiguration};
use crate::error::{Error, Result};

/// Comment lines around the table, stored without the leading `# `.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvComments {
    pub header: Vec<String>,
    pub footer: Vec<String>,
}

impl CsvComments {
    /// Value of the first `key=value` token among all comment lines.
    pub fn lookup(&self, key: &str) -> Option<&str> {
        let prefix = format!("{key}=");
        self.header
            .iter()
            .chain(&self.footer)
            .flat_map(|line| line.split_whitespace())
            .find_map(|tok| tok.strip_prefix(prefix.as_str()))
    }
}

pub fn write_bundle_csv<W: Write>(
    out: W,
    bundle: &PathBundle,
    comments: &CsvComments,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(out);
    for line in &comments.header {
        writeln!(out, "# {line}")?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = vec!["t".to_string()];
        header.extend(indices(bundle.n()).map(|i| i.column_name()));
        w.write_record(&header)?;
        let grid = bundle.grid();
        let mut row = Vec::with_capacity(header.len());
        for i in 0..grid.len() {
            row.clear();
            row.push(grid.time(i).to_string());
            row.extend(bundle.paths().iter().map(|p| p.values()[i].to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    for line in &comments.footer {
        writeln!(out, "# {line}")?;
    }
    out.flush()?;
    Ok(())
}

struct RawTable {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    comments: CsvComments,
}

fn read_table<R: BufRead>(input: R) -> Result<RawTable> {
    let mut comments = CsvComments::default();
    let mut body = String::new();
    for line in input.lines() {
        let line = line?;
        let trimmed = line.trim_start();
        if let Some(c) = trimmed.strip_prefix('#') {
            let c = c.strip_prefix(' ').unwrap_or(c).to_string();
            if body.is_empty() {
                comments.header.push(c);
            } else {
                comments.footer.push(c);
            }
        } else if !trimmed.is_empty() {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let columns: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field.parse::<f64>().map_err(|_| {
                    Error::Format(format!(
                        "row {}, column {}: cannot parse {field:?}",
                        r + 1,
                        c + 1
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(RawTable {
        columns,
        rows,
        comments,
    })
}

/// Number of levels implied by a `T_n_k` column list, checking level-major order.
fn levels_from_columns(columns: &[String]) -> Result<usize> {
    let count = columns.len();
    let n = (1..=count).find(|&n| tri_count(n) >= count).unwrap_or(0);
    if n == 0 || tri_count(n) != count {
        return Err(Error::Format(format!(
            "{count} particle columns do not form a triangle"
        )));
    }
    for (name, idx) in columns.iter().zip(indices(n)) {
        if *name != idx.column_name() {
            return Err(Error::Format(format!(
                "expected column {}, found {name}",
                idx.column_name()
            )));
        }
    }
    Ok(n)
}

pub fn read_bundle_csv<R: BufRead>(input: R) -> Result<(PathBundle, CsvComments)> {
    let table = read_table(input)?;
    if table.columns.first().map(String::as_str) != Some("t") {
        return Err(Error::Format("first column must be t".into()));
    }
    let n = levels_from_columns(&table.columns[1..])?;
    if table.rows.len() < 2 {
        return Err(Error::Format("need at least two rows".into()));
    }
    let times: Vec<f64> = table.rows.iter().map(|r| r[0]).collect();
    let grid = TimeGrid::new(times[0], times[times.len() - 1], times.len() - 1)?;
    let tol = 1e-9 * grid.dt();
    if let Some(i) = times
        .iter()
        .enumerate()
        .position(|(i, &t)| (t - grid.time(i)).abs() > tol)
    {
        return Err(Error::Format(format!(
            "row {} time {} is off the uniform grid",
            i + 1,
            times[i]
        )));
    }
    let paths = (1..table.columns.len())
        .map(|c| SamplePath::new(grid, table.rows.iter().map(|r| r[c]).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok((PathBundle::new(n, paths)?, table.comments))
}

/// First data row of any CSV carrying `T_n_k` columns, with or without `t`.
pub fn read_configuration_csv<R: BufRead>(input: R) -> Result<TriangularConfiguration> {
    let table = read_table(input)?;
    let skip = usize::from(table.columns.first().map(String::as_str) == Some("t"));
    let n = levels_from_columns(&table.columns[skip..])?;
    let row = table
        .rows
        .first()
        .ok_or_else(|| Error::Format("no data row".into()))?;
    TriangularConfiguration::new(n, row[skip..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let grid = TimeGrid::new(0.1, 0.9, 7).unwrap();
        let paths = (0..3)
            .map(|j| SamplePath::from_fn(grid, |t| (t * 3.7 + j as f64).sin() / 3.0).unwrap())
            .collect();
        let bundle = PathBundle::new(2, paths).unwrap();
        let comments = CsvComments {
            header: vec!["seed=7 replicate=2".into()],
            footer: vec!["clamps=0".into()],
        };
        let mut buf = Vec::new();
        write_bundle_csv(&mut buf, &bundle, &comments).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().nth(1).unwrap() == "t,T_1_1,T_2_1,T_2_2");
        let (back, c) = read_bundle_csv(buf.as_slice()).unwrap();
        assert_eq!(back, bundle);
        assert_eq!(c, comments);
        assert_eq!(c.lookup("replicate"), Some("2"));
        assert_eq!(c.lookup("clamps"), Some("0"));
    }

    #[test]
    fn configuration_from_first_row() {
        let text = "T_1_1,T_2_1,T_2_2\n0,1,-1\n5,5,5\n";
        let c = read_configuration_csv(text.as_bytes()).unwrap();
        assert_eq!(c.entries(), &[0.0, 1.0, -1.0]);
        let text = "# x\nt,T_1_1\n0,2.5\n1,3\n";
        assert_eq!(
            read_configuration_csv(text.as_bytes()).unwrap().entries(),
            &[2.5]
        );
    }

    #[test]
    fn rejects_malformed() {
        assert!(read_bundle_csv("t,T_1_1,T_2_2\n0,0,0\n1,0,0\n".as_bytes()).is_err());
        assert!(read_bundle_csv("t,T_1_1\n0,x\n1,0\n".as_bytes()).is_err());
        assert!(read_bundle_csv("t,T_1_1\n0,0\n0.3,0\n1,0\n".as_bytes()).is_err());
    }
}
