//! CSV tables, metric comparisons and plots.

use std::io::Write;
use std::path::Path;

use ppm_control::services::DeloadCurve;
use ppm_control::sim::{ChannelMetrics, MetricsReport, TimeSeries};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// First column of every time-series CSV.
pub const TIME_COLUMN: &str = "time_s";

pub const DELOAD_COLUMNS: [&str; 9] = [
    "wind_speed_mps",
    "omega_opt_pu",
    "p_mopt_pu",
    "beta_opt_deg",
    "omega_del_pu",
    "p_mdel_pu",
    "beta_del_deg",
    "reserve_fraction",
    "status",
];

fn io(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("write failed: {e}"))
}

pub fn timeseries_header(ts: &TimeSeries) -> Vec<String> {
    std::iter::once(TIME_COLUMN.to_string()).chain(ts.names.iter().cloned()).collect()
}

/// One row per recorded sample; floats in shortest round-trip form.
pub fn write_timeseries_csv<W: Write>(ts: &TimeSeries, out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(timeseries_header(ts)).map_err(io)?;
    let mut row = Vec::with_capacity(ts.names.len() + 1);
    for i in 0..ts.len() {
        row.clear();
        row.push(ts.time[i].to_string());
        row.extend(ts.data.iter().map(|c| c[i].to_string()));
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Failed wind speeds stay in the table with empty values and the error in
/// the `status` column.
pub fn write_deload_csv<W: Write>(curve: &DeloadCurve, out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DELOAD_COLUMNS).map_err(io)?;
    for s in &curve.samples {
        let mut row = vec![s.wind_speed.to_string()];
        match (&s.point, &s.error) {
            (Some(p), _) => {
                let fraction = (p.p_mopt - p.p_mdel) / p.p_mopt;
                for v in [p.omega_opt, p.p_mopt, p.beta_opt, p.omega_del, p.p_mdel, p.beta_del, fraction] {
                    row.push(v.to_string());
                }
                row.push("ok".into());
            }
            (None, e) => {
                row.extend(std::iter::repeat_n(String::new(), 7));
                row.push(format!("no solution: {}", e.as_deref().unwrap_or("unknown")));
            }
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub channel: String,
    pub coordinated: ChannelMetrics,
    pub vector: ChannelMetrics,
}

/// Side-by-side metrics of the coordinated controller and the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub window: (f64, f64),
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn new(coordinated: &MetricsReport, vector: &MetricsReport) -> Self {
        let rows = coordinated
            .channels
            .iter()
            .filter_map(|(name, c)| {
                vector.channels.get(name).map(|v| ComparisonRow { channel: name.clone(), coordinated: *c, vector: *v })
            })
            .collect();
        Self { window: coordinated.window, rows }
    }

    pub fn row(&self, channel: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.channel == channel)
    }

    /// Text table of the named channels (all rows when empty).
    pub fn table(&self, channels: &[&str]) -> String {
        let mut s = format!(
            "{:<16} {:>12} {:>12} {:>8} {:>8} {:>12} {:>12}\n",
            "channel", "settle_c_s", "settle_v_s", "osc_c", "osc_v", "peak_c", "peak_v"
        );
        for r in self.rows.iter().filter(|r| channels.is_empty() || channels.contains(&r.channel.as_str())) {
            s.push_str(&format!(
                "{:<16} {:>12.4} {:>12.4} {:>8} {:>8} {:>12.4e} {:>12.4e}\n",
                r.channel,
                r.coordinated.settling_time,
                r.vector.settling_time,
                r.coordinated.oscillations,
                r.vector.oscillations,
                r.coordinated.peak_deviation,
                r.vector.peak_deviation
            ));
        }
        s
    }
}

/// Stacked line charts of `channels`, one panel each, as SVG.
pub fn plot_svg(ts: &TimeSeries, channels: &[&str], path: &Path) -> Result<(), CliError> {
    use plotters::prelude::*;
    let series: Vec<&[f64]> = channels.iter().map(|c| ts.channel(c)).collect::<Result<_, _>>()?;
    if ts.is_empty() {
        return Err(CliError::Runtime("nothing to plot".into()));
    }
    let (t0, t1) = (ts.time[0], *ts.time.last().unwrap_or(&ts.time[0]));
    let t1 = if t1 > t0 { t1 } else { t0 + 1.0 };
    let plot = |e: &dyn std::fmt::Display| CliError::Runtime(format!("plot failed: {e}"));
    let root = SVGBackend::new(path, (960, 240 * channels.len() as u32)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot(&e))?;
    for ((area, name), y) in root.split_evenly((channels.len(), 1)).iter().zip(channels).zip(series) {
        let (mut lo, mut hi) = y.iter().fold((f64::MAX, f64::MIN), |(a, b), v| (a.min(*v), b.max(*v)));
        let pad = 0.05 * (hi - lo).max(1e-6 * hi.abs().max(1.0));
        lo -= pad;
        hi += pad;
        let mut chart = ChartBuilder::on(area)
            .caption(*name, ("sans-serif", 16))
            .margin(8)
            .x_label_area_size(28)
            .y_label_area_size(64)
            .build_cartesian_2d(t0..t1, lo..hi)
            .map_err(|e| plot(&e))?;
        chart.configure_mesh().x_desc("time_s").draw().map_err(|e| plot(&e))?;
        chart
            .draw_series(LineSeries::new(ts.time.iter().copied().zip(y.iter().copied()), &BLUE))
            .map_err(|e| plot(&e))?;
    }
    root.present().map_err(|e| plot(&e))
}
