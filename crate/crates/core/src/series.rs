//! Per-cycle records, their CSV form and run summaries.
//!
//! Real values are stored already rounded to nine significant digits, so a
//! series written to CSV and read back compares equal to the original.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "cycle,t_seconds,qber_est,e_z,e_x,v1,v2,v3,v4,v5,v6,v7,v8,recenter,converged";

const SIG_DIGITS: usize = 9;

/// Formats `x` in plain decimal notation with nine significant digits.
pub fn format_sig(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    // the exponent after rounding to nine digits decides the decimal count
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let exp: i32 = sci
        .rsplit('e')
        .next()
        .and_then(|e| e.parse().ok())
        .expect("scientific formatting always has an exponent");
    let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
    format!("{x:.decimals$}")
}

/// Rounds `x` to what its CSV representation reads back as.
pub fn quantize(x: f64) -> f64 {
    format_sig(x).parse().unwrap_or(x)
}

/// One feedback cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub cycle: u64,
    pub t_seconds: f64,
    pub qber_est: f64,
    pub e_z: f64,
    pub e_x: f64,
    /// Z controller voltages `v1..v4`, then X controller `v5..v8`.
    pub voltages: [f64; 8],
    /// Range resets during the cycle, both controllers.
    pub recenter: u32,
    /// False if a controller ran out of sweeps or a measurement failed.
    pub converged: bool,
}

impl Row {
    pub fn new(
        cycle: u64,
        fc_seconds: f64,
        qber_est: f64,
        e: [f64; 2],
        voltages: [f64; 8],
        recenter: u32,
        converged: bool,
    ) -> Self {
        Row {
            cycle,
            t_seconds: quantize(cycle as f64 * fc_seconds),
            qber_est: quantize(qber_est),
            e_z: quantize(e[0]),
            e_x: quantize(e[1]),
            voltages: voltages.map(quantize),
            recenter,
            converged,
        }
    }

    fn write_csv(&self, out: &mut String) {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            self.cycle,
            format_sig(self.t_seconds),
            format_sig(self.qber_est),
            format_sig(self.e_z),
            format_sig(self.e_x)
        );
        for v in &self.voltages {
            out.push(',');
            out.push_str(&format_sig(*v));
        }
        let _ = writeln!(out, ",{},{}", self.recenter, u8::from(self.converged));
    }

    fn parse_csv(line: &str, lineno: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 15 {
            return Err(Error::Parse(format!(
                "line {lineno}: expected 15 fields, found {}",
                fields.len()
            )));
        }
        let real = |i: usize| -> Result<f64> {
            fields[i]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {lineno}: bad number `{}`", fields[i])))
        };
        let int = |i: usize| -> Result<u64> {
            fields[i]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("line {lineno}: bad integer `{}`", fields[i])))
        };
        let mut voltages = [0.0; 8];
        for (k, v) in voltages.iter_mut().enumerate() {
            *v = real(5 + k)?;
        }
        let converged = match int(14)? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Parse(format!(
                    "line {lineno}: converged flag must be 0 or 1, got {other}"
                )))
            }
        };
        Ok(Row {
            cycle: int(0)?,
            t_seconds: real(1)?,
            qber_est: real(2)?,
            e_z: real(3)?,
            e_x: real(4)?,
            voltages,
            recenter: u32::try_from(int(13)?)
                .map_err(|_| Error::Parse(format!("line {lineno}: recenter count too large")))?,
            converged,
        })
    }
}

/// Ordered per-cycle records of one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimeSeries {
    pub rows: Vec<Row>,
}

impl TimeSeries {
    pub fn new() -> Self {
        TimeSeries::default()
    }

    pub fn push(&mut self, row: Row) {
        debug_assert!(self.rows.last().is_none_or(|r| r.cycle < row.cycle));
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn qber(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.qber_est)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(128 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            row.write_csv(&mut out);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == CSV_HEADER => {}
            Some((_, h)) => return Err(Error::Parse(format!("unexpected header `{h}`"))),
            None => return Err(Error::Parse("empty file".into())),
        }
        let mut series = TimeSeries::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let row = Row::parse_csv(line, i + 1)?;
            if series.rows.last().is_some_and(|r| r.cycle >= row.cycle) {
                return Err(Error::Parse(format!(
                    "line {}: cycle index not strictly increasing",
                    i + 1
                )));
            }
            series.rows.push(row);
        }
        Ok(series)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv(&text)
    }
}

/// Aggregate statistics of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub cycles: usize,
    pub mean_qber: f64,
    /// Population standard deviation.
    pub std_qber: f64,
    pub max_qber: f64,
    pub recenter_count: u64,
    pub non_converged_count: u64,
}

/// Mean, population standard deviation and maximum of the finite error-rate
/// entries, plus flag counts over all rows.
pub fn summarize(series: &TimeSeries) -> Result<Summary> {
    if series.is_empty() {
        return Err(Error::InsufficientData("empty series".into()));
    }
    let vals: Vec<f64> = series.qber().filter(|q| q.is_finite()).collect();
    if vals.is_empty() {
        return Err(Error::InsufficientData(
            "series has no finite error-rate entries".into(),
        ));
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(Summary {
        cycles: series.len(),
        mean_qber: mean,
        std_qber: var.sqrt(),
        max_qber: vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        recenter_count: series.rows.iter().map(|r| u64::from(r.recenter)).sum(),
        non_converged_count: series.rows.iter().filter(|r| !r.converged).count() as u64,
    })
}

impl Summary {
    /// `key = value` text form.
    pub fn to_text(&self) -> String {
        format!(
            "cycles = {}\nmean_qber = {}\nstd_qber = {}\nmax_qber = {}\nrecenter_count = {}\nnon_converged_count = {}\n",
            self.cycles,
            format_sig(self.mean_qber),
            format_sig(self.std_qber),
            format_sig(self.max_qber),
            self.recenter_count,
            self.non_converged_count
        )
    }
}
