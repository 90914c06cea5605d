//! Aggregation of sweep records into the three result tables, and the CSV /
//! log writers. Standard deviations are population deviations over replicas.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use super::{MetricsRecord, Phase, SweepOutput};
use crate::ServerId;

#[derive(Debug, Error)]
pub enum SummaryError {
    #[error("no records to summarize")]
    Empty,
    #[error("writing {path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Mean quality per `(n_clients, phase)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Row {
    pub n_clients: usize,
    pub phase: Phase,
    pub replicas: usize,
    pub mean_bitrate_kbps: f64,
    pub std_bitrate_kbps: f64,
    pub mean_level_index: f64,
    pub std_level_index: f64,
}

/// Mean client count per `(n_clients, phase, server)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig3Row {
    pub n_clients: usize,
    pub phase: Phase,
    pub server: ServerId,
    pub mean_clients: f64,
}

/// Mean migrations per execution, game phase only.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig4Row {
    pub n_clients: usize,
    pub replicas: usize,
    pub mean_transfers: f64,
    pub std_transfers: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub fig2: Vec<Fig2Row>,
    pub fig3: Vec<Fig3Row>,
    pub fig4: Vec<Fig4Row>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn summarize(records: &[MetricsRecord]) -> Result<Summary, SummaryError> {
    if records.is_empty() {
        return Err(SummaryError::Empty);
    }
    let mut groups: BTreeMap<(usize, Phase), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.n_clients, r.phase)).or_default().push(r);
    }

    let mut fig2 = Vec::new();
    let mut fig3 = Vec::new();
    let mut fig4 = Vec::new();
    for (&(n_clients, phase), rs) in &groups {
        let bitrates: Vec<f64> = rs.iter().map(|r| r.mean_bitrate_kbps).collect();
        let levels: Vec<f64> = rs.iter().map(|r| r.mean_level_index).collect();
        let (mean_bitrate_kbps, std_bitrate_kbps) = mean_std(&bitrates);
        let (mean_level_index, std_level_index) = mean_std(&levels);
        fig2.push(Fig2Row {
            n_clients,
            phase,
            replicas: rs.len(),
            mean_bitrate_kbps,
            std_bitrate_kbps,
            mean_level_index,
            std_level_index,
        });

        let mut per_server: BTreeMap<&ServerId, f64> = BTreeMap::new();
        for r in rs {
            for (s, &c) in &r.per_server_counts {
                *per_server.entry(s).or_default() += c as f64;
            }
        }
        for (server, total) in per_server {
            fig3.push(Fig3Row {
                n_clients,
                phase,
                server: server.clone(),
                mean_clients: total / rs.len() as f64,
            });
        }

        if phase == Phase::Game {
            let transfers: Vec<f64> = rs.iter().map(|r| r.transfers as f64).collect();
            let (mean_transfers, std_transfers) = mean_std(&transfers);
            fig4.push(Fig4Row {
                n_clients,
                replicas: rs.len(),
                mean_transfers,
                std_transfers,
            });
        }
    }
    Ok(Summary { fig2, fig3, fig4 })
}

impl Summary {
    pub fn fig2_csv(&self) -> String {
        let mut out = String::from(
            "n_clients,phase,replicas,mean_bitrate_kbps,std_bitrate_kbps,mean_level_index,std_level_index\n",
        );
        for r in &self.fig2 {
            writeln!(
                out,
                "{},{},{},{:.4},{:.4},{:.6},{:.6}",
                r.n_clients,
                r.phase,
                r.replicas,
                r.mean_bitrate_kbps,
                r.std_bitrate_kbps,
                r.mean_level_index,
                r.std_level_index
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn fig3_csv(&self) -> String {
        let mut out = String::from("n_clients,phase,server,mean_clients\n");
        for r in &self.fig3 {
            writeln!(
                out,
                "{},{},{},{:.4}",
                r.n_clients, r.phase, r.server, r.mean_clients
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn fig4_csv(&self) -> String {
        let mut out = String::from("n_clients,replicas,mean_transfers,std_transfers\n");
        for r in &self.fig4 {
            writeln!(
                out,
                "{},{},{:.4},{:.4}",
                r.n_clients, r.replicas, r.mean_transfers, r.std_transfers
            )
            .expect("writing to a String");
        }
        out
    }
}

/// Raw records, one row each; one `count_<server>` column per server.
pub fn records_csv(records: &[MetricsRecord]) -> String {
    let servers: Vec<&ServerId> = records
        .first()
        .map(|r| r.per_server_counts.keys().collect())
        .unwrap_or_default();
    let mut out = String::from(
        "n_clients,replica,phase,mean_bitrate_kbps,mean_level_index,transfers,rebuffer_events,rebuffer_time_s,samples",
    );
    for s in &servers {
        write!(out, ",count_{s}").expect("writing to a String");
    }
    out.push('\n');
    for r in records {
        write!(
            out,
            "{},{},{},{:.4},{:.6},{},{},{:.4},{}",
            r.n_clients,
            r.replica,
            r.phase,
            r.mean_bitrate_kbps,
            r.mean_level_index,
            r.transfers,
            r.rebuffer_events,
            r.rebuffer_time_s,
            r.samples
        )
        .expect("writing to a String");
        for s in &servers {
            write!(
                out,
                ",{}",
                r.per_server_counts.get(*s).copied().unwrap_or(0)
            )
            .expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

/// Every game run as `# n=<count> replica=<r> run=<k> transfers=<t>`
/// followed by its transfer lines.
pub fn transfers_log(sweep: &SweepOutput) -> String {
    let mut out = String::new();
    for p in &sweep.points {
        for (k, log) in p.transfer_logs().enumerate() {
            writeln!(
                out,
                "# n={} replica={} run={} transfers={}",
                p.game.n_clients,
                p.game.replica,
                k,
                log.events.len()
            )
            .expect("writing to a String");
            out.push_str(&log.to_lines());
        }
    }
    out
}

/// Writes `fig2.csv`, `fig3.csv`, `fig4.csv`, `records.csv` and
/// `transfers.log` into `dir`.
pub fn write_outputs(dir: &Path, sweep: &SweepOutput) -> Result<Summary, SummaryError> {
    let records = sweep.records();
    let summary = summarize(&records)?;
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| SummaryError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, body) in [
        ("fig2.csv", summary.fig2_csv()),
        ("fig3.csv", summary.fig3_csv()),
        ("fig4.csv", summary.fig4_csv()),
        ("records.csv", records_csv(&records)),
        ("transfers.log", transfers_log(sweep)),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(summary)
}
