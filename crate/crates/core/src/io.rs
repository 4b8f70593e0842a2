//! CSV ingestion of observation sets and streams.
//!
//! One observation per row, `d` numeric columns, optional header row, `.` as
//! the decimal separator. The dimension is fixed by the first data row and a
//! ragged row is a hard error that carries its line number.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use crate::distributions::Observation;
use crate::error::{Error, Result};

/// Incremental reader yielding `(line, observation)` pairs.
pub struct ObservationReader<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    dim: Option<usize>,
    first: bool,
}

impl<R: Read> ObservationReader<R> {
    pub fn new(reader: R) -> Self {
        let rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        Self { records: rdr.into_records(), dim: None, first: true }
    }

    pub fn dim(&self) -> Option<usize> {
        self.dim
    }
}

impl<R: Read> Iterator for ObservationReader<R> {
    type Item = Result<(u64, Observation)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let rec = match self.records.next()? {
                Ok(r) => r,
                Err(e) => return Some(Err(e.into())),
            };
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
            let is_first = std::mem::replace(&mut self.first, false);
            let values = match parsed {
                Ok(v) => v,
                // a non-numeric first row is a header
                Err(_) if is_first => continue,
                Err(e) => return Some(Err(Error::Data(format!("line {line}: {e}")))),
            };
            match self.dim {
                None => self.dim = Some(values.len()),
                Some(d) if d != values.len() => {
                    return Some(Err(Error::Data(format!(
                        "line {line}: expected {d} columns, found {}",
                        values.len()
                    ))))
                }
                _ => {}
            }
            return Some(Observation::new(values).map(|o| (line, o)).map_err(|e| Error::Data(format!("line {line}: {e}"))));
        }
    }
}

pub fn read_observations<R: Read>(reader: R) -> Result<Vec<Observation>> {
    let out: Vec<Observation> = ObservationReader::new(reader).map(|r| r.map(|(_, o)| o)).collect::<Result<_>>()?;
    if out.is_empty() {
        return Err(Error::Data("no observations found".into()));
    }
    Ok(out)
}

pub fn read_observations_path(path: &Path) -> Result<Vec<Observation>> {
    let f = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_observations(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_optional() {
        let a = read_observations("x,y\n1,2\n3.5,-4\n".as_bytes()).unwrap();
        let b = read_observations("1,2\n3.5,-4\n".as_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[1].as_slice(), &[3.5, -4.0]);
    }

    #[test]
    fn ragged_rows_fail_with_line() {
        let err = read_observations("1,2\n3\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn garbage_after_first_row_fails() {
        assert!(read_observations("1\nabc\n".as_bytes()).is_err());
        assert!(read_observations("".as_bytes()).is_err());
    }
}
