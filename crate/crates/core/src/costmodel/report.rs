use serde::{Deserialize, Serialize};

use super::flops::FlopsReport;
use crate::decoder::Variant;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::InvalidArgument(format!(
                "unknown format {other:?}; expected csv or json"
            ))),
        }
    }
}

pub const REPORT_COLUMNS: [&str; 9] = [
    "model", "variant", "N", "M", "F_Attn", "F_FFN", "head", "total", "params",
];

/// Flat row with the fixed column order; what gets serialized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Row {
    model: String,
    variant: Variant,
    #[serde(rename = "N")]
    n: u64,
    #[serde(rename = "M")]
    m: u64,
    #[serde(rename = "F_Attn")]
    attn: u64,
    #[serde(rename = "F_FFN")]
    ffn: u64,
    head: u64,
    total: u64,
    params: u64,
}

impl From<&FlopsReport> for Row {
    fn from(r: &FlopsReport) -> Self {
        Row {
            model: r.model.clone(),
            variant: r.variant,
            n: r.n,
            m: r.m,
            attn: r.attn_flops,
            ffn: r.ffn_flops,
            head: r.head_flops,
            total: r.total,
            params: r.params,
        }
    }
}

impl From<Row> for FlopsReport {
    fn from(r: Row) -> Self {
        FlopsReport {
            model: r.model,
            variant: r.variant,
            n: r.n,
            m: r.m,
            attn_flops: r.attn,
            ffn_flops: r.ffn,
            head_flops: r.head,
            total: r.total,
            params: r.params,
            per_layer: Vec::new(),
        }
    }
}

/// Renders reports with the stable column order. Counts are raw FLOPs.
pub fn emit_report(reports: &[FlopsReport], format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to emit".into()));
    }
    let rows: Vec<Row> = reports.iter().map(Row::from).collect();
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&rows)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for row in &rows {
                w.serialize(row)?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

/// Reads back what [`emit_report`] wrote. Per-layer breakdowns are not
/// serialized and come back empty.
pub fn parse_report(text: &str, format: ReportFormat) -> Result<Vec<FlopsReport>> {
    let rows: Vec<Row> = match format {
        ReportFormat::Json => serde_json::from_str(text)?,
        ReportFormat::Csv => csv::Reader::from_reader(text.as_bytes())
            .deserialize()
            .collect::<std::result::Result<_, _>>()?,
    };
    Ok(rows.into_iter().map(FlopsReport::from).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FlopsReport {
        FlopsReport {
            model: "toy".into(),
            variant: Variant::HimixDedicated,
            n: 8,
            m: 4,
            attn_flops: 10,
            ffn_flops: 20,
            head_flops: 3,
            total: 33,
            params: 99,
            per_layer: Vec::new(),
        }
    }

    #[test]
    fn csv_header_and_one_row() {
        let text = emit_report(&[sample()], ReportFormat::Csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], REPORT_COLUMNS.join(","));
        assert_eq!(lines[1], "toy,himix-dedicated,8,4,10,20,3,33,99");
    }

    #[test]
    fn empty_rejected() {
        assert!(emit_report(&[], ReportFormat::Json).is_err());
    }

    #[test]
    fn both_formats_round_trip() {
        for fmt in [ReportFormat::Csv, ReportFormat::Json] {
            let text = emit_report(&[sample(), sample()], fmt).unwrap();
            assert_eq!(parse_report(&text, fmt).unwrap(), vec![sample(), sample()]);
        }
    }
}
