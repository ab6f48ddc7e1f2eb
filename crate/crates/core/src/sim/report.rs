use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::frame::Address;
use crate::sim::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Master,
    Slave,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeReport {
    pub node: usize,
    pub role: Role,
    pub address: Address,
    pub frames_sent: u64,
    /// Decoded and acted on.
    pub frames_received: u64,
    /// Decoded but not for this node (or arrived while busy).
    pub frames_filtered: u64,
    pub decode_errors: u64,
    pub timeouts: u64,
    pub energy_uah: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkReport {
    pub physical_bits: u64,
    pub bit_errors: u64,
    pub measured_ber: f64,
    pub nominal_bps: u32,
    pub effective_bps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollRecord {
    /// Time the result reached the master.
    pub time_s: f64,
    pub target: Address,
    /// Reply payload as hex, absent on timeout.
    pub reply: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineRecord {
    pub time_s: f64,
    pub seq: u64,
    pub node: usize,
    pub action: String,
    pub detail: Option<String>,
    pub frame_hex: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub nodes: Vec<NodeReport>,
    pub link: LinkReport,
    pub polls: Vec<PollRecord>,
    pub timeline: Vec<TimelineRecord>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        serde_json::from_str(text).map_err(|e| SimError::Io(std::io::Error::other(e)))
    }

    pub fn total_decode_errors(&self) -> u64 {
        self.nodes.iter().map(|n| n.decode_errors).sum()
    }

    pub fn total_timeouts(&self) -> u64 {
        self.nodes.iter().map(|n| n.timeouts).sum()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SimError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "row",
            "node",
            "role",
            "address",
            "frames_sent",
            "frames_received",
            "frames_filtered",
            "decode_errors",
            "timeouts",
            "energy_uah",
            "physical_bits",
            "bit_errors",
            "measured_ber",
            "nominal_bps",
            "effective_bps",
        ])?;
        for n in &self.nodes {
            let role = match n.role {
                Role::Master => "master",
                Role::Slave => "slave",
            };
            wtr.write_record([
                "node".to_string(),
                n.node.to_string(),
                role.to_string(),
                n.address.to_string(),
                n.frames_sent.to_string(),
                n.frames_received.to_string(),
                n.frames_filtered.to_string(),
                n.decode_errors.to_string(),
                n.timeouts.to_string(),
                n.energy_uah.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
        let l = &self.link;
        let mut link_row = vec![String::new(); 10];
        link_row[0] = "link".into();
        link_row.extend([
            l.physical_bits.to_string(),
            l.bit_errors.to_string(),
            l.measured_ber.to_string(),
            l.nominal_bps.to_string(),
            l.effective_bps.to_string(),
        ]);
        wtr.write_record(&link_row)?;
        wtr.flush()?;
        Ok(())
    }

    /// One JSON object per line.
    pub fn write_timeline<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        for rec in &self.timeline {
            serde_json::to_writer(&mut w, rec).map_err(std::io::Error::other)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Writes `report` to `path` in `format`. The timeline always goes to a
/// sibling `timeline.jsonl`.
pub fn emit_report(report: &Report, format: ReportFormat, path: &Path) -> Result<(), SimError> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        ReportFormat::Json => {
            w.write_all(report.to_json().as_bytes())?;
            w.write_all(b"\n")?;
        }
        ReportFormat::Csv => report.write_csv(&mut w)?,
    }
    w.flush()?;
    let timeline = path.with_file_name("timeline.jsonl");
    let mut t = BufWriter::new(File::create(timeline)?);
    report.write_timeline(&mut t)?;
    t.flush()?;
    Ok(())
}

/// `report.json`, `report.csv` and `timeline.jsonl` under `dir`.
pub fn write_report_dir(report: &Report, dir: &Path) -> Result<(), SimError> {
    std::fs::create_dir_all(dir)?;
    emit_report(report, ReportFormat::Json, &dir.join("report.json"))?;
    emit_report(report, ReportFormat::Csv, &dir.join("report.csv"))?;
    Ok(())
}
