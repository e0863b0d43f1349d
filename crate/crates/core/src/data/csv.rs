//! `domain_id,label,<feature fields...>` with base-10 integers, one row per line.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{Dataset, FeatureSchema, Row};
use crate::error::{Error, Result};

pub fn write_csv_to<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let mut header = String::from("domain_id,label");
    for f in dataset.schema.feature_fields() {
        header.push(',');
        header.push_str(&f.name);
    }
    header.push('\n');
    out.write_all(header.as_bytes())?;
    let mut line = String::new();
    for r in &dataset.rows {
        line.clear();
        line.push_str(&r.domain.to_string());
        line.push(',');
        line.push_str(&r.label.to_string());
        for id in &r.ids {
            line.push(',');
            line.push_str(&id.to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv_to(dataset, std::io::BufWriter::new(file))
}

pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset> {
    read_csv(std::fs::File::open(path)?, schema)
}

fn parse_int(s: &str, line: usize, column: &str) -> Result<usize> {
    s.parse::<usize>().map_err(|_| Error::Parse {
        line,
        reason: format!("`{s}` is not a non-negative integer in column `{column}`"),
    })
}

pub fn read_csv<R: Read>(input: R, schema: &FeatureSchema) -> Result<Dataset> {
    schema.validate()?;
    let mut lines = BufReader::new(input).lines();
    let header = match lines.next() {
        Some(h) => h?,
        None => {
            return Err(Error::Parse {
                line: 1,
                reason: "missing header".into(),
            })
        }
    };
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 2 || columns[0] != "domain_id" || columns[1] != "label" {
        return Err(Error::Parse {
            line: 1,
            reason: "header must start with `domain_id,label`".into(),
        });
    }
    let fields: Vec<_> = schema.feature_fields().collect();
    // column position in the file for each schema field
    let mut position = vec![usize::MAX; fields.len()];
    for (c, name) in columns[2..].iter().enumerate() {
        match fields.iter().position(|f| f.name == *name) {
            Some(i) if position[i] == usize::MAX => position[i] = c + 2,
            Some(_) => {
                return Err(Error::Parse {
                    line: 1,
                    reason: format!("duplicate field `{name}`"),
                })
            }
            None => {
                return Err(Error::Parse {
                    line: 1,
                    reason: format!("unknown field `{name}`"),
                })
            }
        }
    }
    if let Some(i) = position.iter().position(|&p| p == usize::MAX) {
        return Err(Error::Parse {
            line: 1,
            reason: format!("missing field `{}`", fields[i].name),
        });
    }

    let n_domains = schema.n_domains();
    let mut rows = Vec::new();
    for (k, text) in lines.enumerate() {
        let line_no = k + 2;
        let text = text?;
        if text.is_empty() {
            continue;
        }
        let cells: Vec<&str> = text.split(',').collect();
        if cells.len() != columns.len() {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("expected {} columns, found {}", columns.len(), cells.len()),
            });
        }
        let domain = parse_int(cells[0], line_no, "domain_id")?;
        if domain >= n_domains {
            return Err(Error::Parse {
                line: line_no,
                reason: format!("domain {domain} out of range (0..{n_domains})"),
            });
        }
        let label = match cells[1] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!("label must be 0 or 1, found `{other}`"),
                })
            }
        };
        let mut ids = Vec::with_capacity(fields.len());
        for (f, &p) in fields.iter().zip(&position) {
            let id = parse_int(cells[p], line_no, &f.name)?;
            if id >= f.vocab {
                return Err(Error::Parse {
                    line: line_no,
                    reason: format!(
                        "id {id} out of range for field `{}` (vocabulary {})",
                        f.name, f.vocab
                    ),
                });
            }
            ids.push(id);
        }
        rows.push(Row { domain, label, ids });
    }
    Ok(Dataset::new(schema.clone(), rows))
}
