use std::fmt::Write as _;
use std::path::Path;

use super::{read_json, write_text};
use crate::error::{Error, Result};
use crate::metrics::GapReport;

pub struct ReportOutput {
    pub reports: Vec<GapReport>,
    /// Fixed-width table for terminals.
    pub table: String,
    pub csv: String,
}

fn facets_label(r: &GapReport) -> String {
    if r.facet_subset.is_empty() {
        "-".into()
    } else {
        r.facet_subset.join("+")
    }
}

/// Renders the reports of a finished run and writes `metrics.csv` next to them.
pub fn report(dir: &Path) -> Result<ReportOutput> {
    let path = dir.join("reports.json");
    if !path.exists() {
        return Err(Error::invalid(format!("{} has no reports.json; run `measure` first", dir.display())));
    }
    let reports: Vec<GapReport> = read_json(&path)?;
    let mut csv = String::from("real,sim,facets,kl_fwd,kl_bwd,js,mauve,nn_sim,k,alpha,seed\n");
    for r in &reports {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.real,
            r.sim,
            facets_label(r),
            r.kl_fwd,
            r.kl_bwd,
            r.js,
            r.mauve,
            r.nn_sim,
            r.k,
            r.alpha,
            r.seed
        );
    }
    write_text(&dir.join("metrics.csv"), &csv)?;
    let mut table = format!(
        "{:<40} {:>9} {:>9} {:>7} {:>7} {:>7} {:>5}\n",
        "facets", "KL(R|S)", "KL(S|R)", "JS", "MAUVE", "NN-sim", "k"
    );
    for r in &reports {
        let _ = writeln!(
            table,
            "{:<40} {:>9.3} {:>9.3} {:>7.3} {:>7.3} {:>7.3} {:>5}",
            facets_label(r),
            r.kl_fwd,
            r.kl_bwd,
            r.js,
            r.mauve,
            r.nn_sim,
            r.k
        );
    }
    if let Some(r) = reports.first() {
        table = format!("real: {}  sim: {}\n{table}", r.real, r.sim);
    }
    Ok(ReportOutput { reports, table, csv })
}
