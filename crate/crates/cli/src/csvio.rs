//! Waveform CSV: a `time,<unknown names…>` header and one row per sample,
//! every number in 17-significant-digit scientific notation so that reading
//! the file back reproduces the samples bit for bit.

use std::fmt::Write as _;

use ktran::stepper::WaveformResult;

use crate::CliError;

pub fn write_csv(result: &WaveformResult, names: &[String]) -> String {
    let mut out = String::from("time");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (t, x) in result.times.iter().zip(&result.states) {
        let _ = write!(out, "{t:.16e}");
        for v in x {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    out
}

/// Parsed waveform table.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveformTable {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

pub fn read_csv(text: &str) -> Result<WaveformTable, CliError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| CliError::Parse("empty CSV".into()))?;
    let mut cols = header.split(',');
    if cols.next() != Some("time") {
        return Err(CliError::Parse("CSV header must start with `time`".into()));
    }
    let names: Vec<String> = cols.map(str::to_string).collect();
    let mut times = Vec::new();
    let mut states = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| CliError::Parse(format!("CSV line {}: {e}", i + 1)))?;
        if vals.len() != names.len() + 1 {
            return Err(CliError::Parse(format!(
                "CSV line {}: expected {} fields, found {}",
                i + 1,
                names.len() + 1,
                vals.len()
            )));
        }
        times.push(vals[0]);
        states.push(vals[1..].to_vec());
    }
    Ok(WaveformTable { names, times, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ktran::stepper::Method;
    use proptest::prelude::*;

    fn result(times: Vec<f64>, states: Vec<Vec<f64>>) -> WaveformResult {
        WaveformResult {
            method: Method::Tr,
            times,
            states,
            samples: vec![],
            bases: vec![],
            substitution_pairs: 0,
            factorizations: 0,
            wall_time: 0.0,
            gamma: None,
        }
    }

    #[test]
    fn rejects_malformed() {
        assert!(read_csv("").is_err());
        assert!(read_csv("t,a\n").is_err());
        assert!(read_csv("time,a\n1,2,3\n").is_err());
        assert!(read_csv("time,a\n1,x\n").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(
            rows in proptest::collection::vec(
                (any::<f64>().prop_filter("finite", |v| v.is_finite()),
                 proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3)),
                0..20)
        ) {
            let (times, states): (Vec<f64>, Vec<Vec<f64>>) = rows.into_iter().unzip();
            let names: Vec<String> = ["v(1)", "v(2)", "i(V1)"].iter().map(|s| s.to_string()).collect();
            let r = result(times, states);
            let table = read_csv(&write_csv(&r, &names)).unwrap();
            prop_assert_eq!(table.names, names);
            prop_assert_eq!(table.times.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            r.times.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            for (a, b) in table.states.iter().zip(&r.states) {
                prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            }
        }
    }
}
