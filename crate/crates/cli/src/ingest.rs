//! Book-value panel CSV: reading with row/column diagnostics, and writing.

use std::path::Path;

use nalgebra::Vector2;
use privrisk_core::{derive_series, ObservedSeries};

use crate::error::{CliError, Result};
use crate::output::format_f64;

pub const HEADER: [&str; 5] = [
    "period",
    "book_equity",
    "book_liability",
    "payout_equity",
    "payout_liability",
];

/// Parsed panel: period labels, `T + 1` book rows and `T` payout rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub first_period: i64,
    pub books: Vec<Vector2<f64>>,
    pub payouts: Vec<Vector2<f64>>,
}

impl Panel {
    pub fn series(&self) -> privrisk_core::Result<ObservedSeries> {
        derive_series(&self.books, &self.payouts)
    }
}

/// Reads and validates a panel file.
pub fn read_panel(path: &Path) -> Result<Panel> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_panel(&text).map_err(|m| CliError::input(path, m))
}

/// Data rows are numbered from 1 (the header is line 1, data row `n` is
/// line `n + 1`).
pub fn parse_panel(text: &str) -> std::result::Result<Panel, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| format!("unreadable header: {e}"))?.clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(format!(
            "malformed header `{}`; expected `{}`",
            header.iter().collect::<Vec<_>>().join(","),
            HEADER.join(",")
        ));
    }
    let mut first_period = 0;
    let mut books = Vec::new();
    let mut payouts = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| format!("data row {row} (line {}): {e}", row + 1))?;
        let at = |col: usize| format!("data row {row} (line {}), column {}", row + 1, HEADER[col]);
        let period: i64 = record[0]
            .parse()
            .map_err(|_| format!("{}: `{}` is not an integer period", at(0), &record[0]))?;
        if row == 1 {
            first_period = period;
        } else if period != first_period + i as i64 {
            return Err(format!(
                "{}: period {period} breaks the consecutive sequence (expected {})",
                at(0),
                first_period + i as i64
            ));
        }
        let value = |col: usize, optional: bool| -> std::result::Result<Option<f64>, String> {
            let cell = &record[col];
            if cell.is_empty() {
                return if optional {
                    Ok(None)
                } else {
                    Err(format!("{}: missing value", at(col)))
                };
            }
            let x: f64 = cell
                .parse()
                .map_err(|_| format!("{}: `{cell}` is not a number", at(col)))?;
            if !(x > 0.0 && x.is_finite()) {
                return Err(format!(
                    "{}: value {cell} must be strictly positive and finite",
                    at(col)
                ));
            }
            Ok(Some(x))
        };
        books.push(Vector2::new(value(1, false)?.unwrap(), value(2, false)?.unwrap()));
        let pe = value(3, row == 1)?;
        let pl = value(4, row == 1)?;
        if row > 1 {
            payouts.push(Vector2::new(pe.unwrap(), pl.unwrap()));
        }
    }
    if books.len() < 2 {
        return Err(format!("need at least two data rows, found {}", books.len()));
    }
    Ok(Panel {
        first_period,
        books,
        payouts,
    })
}

/// CSV text of a panel; the first row carries empty payout cells.
pub fn write_panel(panel: &Panel) -> String {
    let mut out = HEADER.join(",");
    out.push('\n');
    for (i, b) in panel.books.iter().enumerate() {
        let period = panel.first_period + i as i64;
        let (pe, pl) = match i {
            0 => (String::new(), String::new()),
            _ => (format_f64(panel.payouts[i - 1][0]), format_f64(panel.payouts[i - 1][1])),
        };
        out.push_str(&format!(
            "{period},{},{},{pe},{pl}\n",
            format_f64(b[0]),
            format_f64(b[1])
        ));
    }
    out
}
