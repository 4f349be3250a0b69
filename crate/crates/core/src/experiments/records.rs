//! Long-form run records and their CSV encoding.

use std::io::Write;

use crate::error::{McsaError, Result};

pub const CSV_HEADER: [&str; 10] = [
    "experiment",
    "method",
    "N",
    "repetition",
    "iteration",
    "kl",
    "grad_variance",
    "acceptance_rate",
    "diverged",
    "wall_ns",
];

/// One CSV row. Fields that do not apply to an experiment are `None` and
/// serialize as empty strings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub experiment: String,
    pub method: String,
    pub n: usize,
    pub repetition: usize,
    pub iteration: usize,
    pub kl: Option<f64>,
    pub grad_variance: Option<f64>,
    pub acceptance_rate: Option<f64>,
    pub diverged: bool,
    pub wall_ns: Option<u64>,
}

/// Float formatting used for every numeric CSV field.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_float(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn parse_opt<T: std::str::FromStr>(field: &str, name: &str, row: usize) -> Result<Option<T>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| McsaError::Csv(format!("row {row}: invalid {name} `{field}`")))
}

fn parse_req<T: std::str::FromStr>(field: &str, name: &str, row: usize) -> Result<T> {
    parse_opt(field, name, row)?.ok_or_else(|| McsaError::Csv(format!("row {row}: missing {name}")))
}

impl RunRecord {
    fn fields(&self) -> [String; 10] {
        [
            self.experiment.clone(),
            self.method.clone(),
            self.n.to_string(),
            self.repetition.to_string(),
            self.iteration.to_string(),
            opt_float(self.kl),
            opt_float(self.grad_variance),
            opt_float(self.acceptance_rate),
            u8::from(self.diverged).to_string(),
            self.wall_ns.map(|w| w.to_string()).unwrap_or_default(),
        ]
    }
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn csv_err(e: csv::Error) -> McsaError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => McsaError::Io(io),
        other => McsaError::Csv(format!("{other:?}")),
    }
}

/// Writes the header and all records with LF line endings.
pub fn write_records<W: Write>(out: W, records: &[RunRecord]) -> Result<()> {
    let mut w = csv_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record(r.fields()).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn records_to_string(records: &[RunRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_records(&mut buf, records)?;
    String::from_utf8(buf).map_err(|e| McsaError::Csv(e.to_string()))
}

/// Parses a run CSV. The header must match [`CSV_HEADER`] exactly.
pub fn read_records(text: &str) -> Result<Vec<RunRecord>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = reader.headers().map_err(csv_err)?;
    if header.iter().ne(CSV_HEADER) {
        return Err(McsaError::Csv(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    reader
        .records()
        .enumerate()
        .map(|(i, row)| {
            let row = row.map_err(csv_err)?;
            let line = i + 2;
            let f = |k: usize| row.get(k).unwrap_or("");
            let diverged = match f(8) {
                "0" => false,
                "1" => true,
                other => return Err(McsaError::Csv(format!("row {line}: invalid diverged `{other}`"))),
            };
            Ok(RunRecord {
                experiment: f(0).to_string(),
                method: f(1).to_string(),
                n: parse_req(f(2), "N", line)?,
                repetition: parse_req(f(3), "repetition", line)?,
                iteration: parse_req(f(4), "iteration", line)?,
                kl: parse_opt(f(5), "kl", line)?,
                grad_variance: parse_opt(f(6), "grad_variance", line)?,
                acceptance_rate: parse_opt(f(7), "acceptance_rate", line)?,
                diverged,
                wall_ns: parse_opt(f(9), "wall_ns", line)?,
            })
        })
        .collect()
}
