//! CSV exchange for grid functions and coefficient fields.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{Grid, GridFunction};
use crate::scalar::Real;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Csv(format!("{kind:?}")),
    }
}

fn parse<T: Real>(s: &str, line: u64) -> Result<T> {
    s.trim()
        .parse::<f64>()
        .map(T::lit)
        .map_err(|_| Error::Csv(format!("line {line}: `{s}` is not a number")))
}

/// Reads the last column of every row. A first row whose last field is not
/// numeric is taken as a header.
pub fn read_column<T: Real, R: Read>(reader: R) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(row as u64 + 1, |p| p.line());
        let last = rec
            .iter()
            .next_back()
            .ok_or_else(|| Error::Csv(format!("line {line}: empty row")))?;
        if row == 0 && last.parse::<f64>().is_err() {
            continue;
        }
        out.push(parse(last, line)?);
    }
    if out.is_empty() {
        return Err(Error::Csv("no data rows".into()));
    }
    Ok(out)
}

/// Coefficient field `p(x)`, `a(x)` or `w(x)` from a file, one value per node.
pub fn read_field_csv<T: Real>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    read_column(file)
}

/// Grid function from the `value` column of an `x[,y],value` table in node
/// order.
pub fn read_grid_function<T: Real, R: Read>(grid: Arc<Grid<T>>, reader: R) -> Result<GridFunction<T>> {
    let values = read_column(reader)?;
    GridFunction::new(grid, values)
}

pub fn read_grid_function_csv<T: Real>(
    grid: Arc<Grid<T>>,
    path: impl AsRef<Path>,
) -> Result<GridFunction<T>> {
    read_grid_function(grid, std::fs::File::open(path)?)
}

/// Forcing slices from rows `t,v_0,...,v_{n-1}` with strictly increasing `t`.
/// A non-numeric first row is a header.
pub fn read_time_slices<T: Real, R: Read>(
    grid: &Arc<Grid<T>>,
    reader: R,
) -> Result<(Vec<T>, Vec<GridFunction<T>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let (mut times, mut slices) = (Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(row as u64 + 1, |p| p.line());
        if row == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() != grid.len() + 1 {
            return Err(Error::Csv(format!(
                "line {line}: expected t and {} node values, got {} fields",
                grid.len(),
                rec.len()
            )));
        }
        let mut vals = rec.iter().map(|f| parse::<T>(f, line));
        let t = vals.next().expect("nonempty row")?;
        if times.last().is_some_and(|&last: &T| !(t > last)) {
            return Err(Error::Csv(format!("line {line}: times must increase")));
        }
        times.push(t);
        slices.push(GridFunction::new(grid.clone(), vals.collect::<Result<_>>()?)?);
    }
    if times.is_empty() {
        return Err(Error::Csv("no data rows".into()));
    }
    Ok((times, slices))
}

/// Writes `x,value` (1-D) or `x,y,value` (2-D) with a header row.
pub fn write_grid_function<T: Real, W: Write>(u: &GridFunction<T>, writer: W) -> Result<()> {
    let grid = u.grid();
    let mut w = csv::Writer::from_writer(writer);
    if grid.dim() == 2 {
        w.write_record(["x", "y", "value"]).map_err(csv_err)?;
    } else {
        w.write_record(["x", "value"]).map_err(csv_err)?;
    }
    for (i, v) in u.values().iter().enumerate() {
        let [x, y] = grid.point(i);
        if grid.dim() == 2 {
            w.write_record([x.to_string(), y.to_string(), v.to_string()])
        } else {
            w.write_record([x.to_string(), v.to_string()])
        }
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
