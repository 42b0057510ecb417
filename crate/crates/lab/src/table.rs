//! Result rows and their CSV encoding.

use std::io::Write;

pub const COLUMNS: [&str; 17] = [
    "experiment_id",
    "kind",
    "label",
    "metric",
    "theta_or_alpha",
    "overlap",
    "n",
    "m",
    "trials",
    "mc_mean",
    "mc_stderr",
    "analytic_exact",
    "analytic_asymptotic",
    "analytic_eps0",
    "normalized_mc",
    "normalized_exact",
    "seed",
];

/// One output row. `None` cells are written empty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Row {
    pub experiment_id: String,
    pub kind: String,
    pub label: String,
    pub metric: String,
    pub theta_or_alpha: Option<f64>,
    /// Tr(Σ_sᵀΣ_t) / Tr(Σ_s) between training and test covariances.
    pub overlap: Option<f64>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub trials: Option<usize>,
    pub mc_mean: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub analytic_exact: Option<f64>,
    pub analytic_asymptotic: Option<f64>,
    pub analytic_eps0: Option<f64>,
    pub normalized_mc: Option<f64>,
    pub normalized_exact: Option<f64>,
    pub seed: Option<u64>,
}

/// 17 significant digits in scientific notation.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

fn opt_f(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn opt_u<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Row {
    pub fn record(&self) -> Vec<String> {
        vec![
            self.experiment_id.clone(),
            self.kind.clone(),
            self.label.clone(),
            self.metric.clone(),
            opt_f(self.theta_or_alpha),
            opt_f(self.overlap),
            opt_u(self.n),
            opt_u(self.m),
            opt_u(self.trials),
            opt_f(self.mc_mean),
            opt_f(self.mc_stderr),
            opt_f(self.analytic_exact),
            opt_f(self.analytic_asymptotic),
            opt_f(self.analytic_eps0),
            opt_f(self.normalized_mc),
            opt_f(self.normalized_exact),
            opt_u(self.seed),
        ]
    }
}

pub fn write_rows<W: Write>(out: W, rows: &[Row]) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(COLUMNS)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

/// A free-form numeric table (trajectories, spectra).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Series {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<SeriesCell>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SeriesCell {
    Int(u64),
    Float(f64),
    Text(String),
    Empty,
}

impl SeriesCell {
    fn render(&self) -> String {
        match self {
            SeriesCell::Int(v) => v.to_string(),
            SeriesCell::Float(v) => format_float(*v),
            SeriesCell::Text(s) => s.clone(),
            SeriesCell::Empty => String::new(),
        }
    }
}

pub fn write_series<W: Write>(out: W, series: &Series) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(&series.columns)?;
    for row in &series.rows {
        w.write_record(row.iter().map(SeriesCell::render))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_at_17_digits() {
        for v in [0.1, 1.0 / 3.0, 5e-324, 1.7976931348623157e308, -2.5e-7, 0.0] {
            let s = format_float(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
        assert_eq!(format_float(0.25), "2.5000000000000000e-1");
    }

    #[test]
    fn empty_cells_and_header() {
        let row = Row { experiment_id: "a".into(), kind: "k".into(), n: Some(3), ..Row::default() };
        let mut buf = Vec::new();
        write_rows(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), COLUMNS.join(","));
        assert_eq!(lines.next().unwrap(), "a,k,,,,,3,,,,,,,,,,");
    }
}
