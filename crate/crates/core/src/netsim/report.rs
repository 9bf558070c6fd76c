use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 7] = ["scenario", "protocol", "privacy", "n_senders", "accuracy", "latency_s", "bytes_per_token"];

/// One line of the comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub scenario: String,
    /// `standalone`, `kv`, `token` or `auto`.
    pub protocol: String,
    /// `original` or `rephrased`.
    pub privacy: String,
    pub n_senders: usize,
    pub accuracy: f64,
    pub latency_s: f64,
    pub bytes_per_token: f64,
}

impl MetricsRow {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.accuracy) || !(self.latency_s >= 0.0) || !(self.bytes_per_token >= 0.0) {
            return Err(Error::InvalidArgument(format!("metrics row out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Writes rows with fixed float formatting so identical results give
/// identical bytes.
pub fn write_csv<W: Write>(rows: &[MetricsRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        r.validate()?;
        out.write_record([
            r.scenario.clone(),
            r.protocol.clone(),
            r.privacy.clone(),
            r.n_senders.to_string(),
            format!("{:.6}", r.accuracy),
            format!("{:.9}", r.latency_s),
            format!("{:.3}", r.bytes_per_token),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::InvalidArgument(format!("unexpected report header {header:?}")));
    }
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let rows = vec![MetricsRow {
            scenario: "s".into(),
            protocol: "kv".into(),
            privacy: "original".into(),
            n_senders: 2,
            accuracy: 0.5,
            latency_s: 0.125,
            bytes_per_token: 512.0,
        }];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scenario,protocol,privacy,n_senders,accuracy,latency_s,bytes_per_token\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }
}
