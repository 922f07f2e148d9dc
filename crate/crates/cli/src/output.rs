//! Output formatting: JSON records for scalar results (sorted keys, hence
//! byte-stable), CSV for series and curves at 17 significant digits.

use num_complex::Complex64;
use ovm_core::lve::SeriesData;
use serde_json::{json, Value};

pub struct NumberedResult {
    pub name: String,
    pub value: Complex64,
    pub error: f64,
}

impl NumberedResult {
    pub fn new(name: &str, value: Complex64, error: f64) -> Self {
        NumberedResult {
            name: name.to_string(),
            value,
            error,
        }
    }
}

pub fn json_record(
    command: &str,
    inputs: Value,
    results: &[NumberedResult],
    timing: Option<f64>,
) -> String {
    let results: Vec<Value> = results
        .iter()
        .map(|r| {
            json!({
                "name": r.name,
                "value_re": r.value.re,
                "value_im": r.value.im,
                "error": r.error,
            })
        })
        .collect();
    let record = json!({
        "command": command,
        "inputs": inputs,
        "results": results,
        "timing_s": timing,
    });
    let mut s = serde_json::to_string_pretty(&record).expect("serializable record");
    s.push('\n');
    s
}

pub fn csv_series(series: &SeriesData) -> String {
    let mut out = String::from("q,a_re,a_im,order_tail_estimate\n");
    for (q, (c, t)) in series
        .coefficients
        .iter()
        .zip(series.truncation.iter())
        .enumerate()
    {
        out.push_str(&format!("{q},{:.16e},{:.16e},{:.16e}\n", c.re, c.im, t));
    }
    out
}

pub fn write_output(payload: &str, out: Option<&str>) -> std::io::Result<()> {
    match out {
        Some(path) => std::fs::write(path, payload),
        None => {
            print!("{payload}");
            Ok(())
        }
    }
}
